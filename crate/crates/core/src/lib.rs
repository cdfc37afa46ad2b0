//! Sound source localization for microphone arrays.
//!
//! Locates a sound source in 3D from an `N`-microphone recording by time
//! delay of arrival: whitened, noise-weighted cross-correlation per
//! microphone pair, a consistency-constrained search over candidate delay
//! combinations, and a far-field least-squares solve mapping the winning
//! delay set to a unit direction vector.
//!
//! The crate is split along the processing chain:
//!
//! - [`spectral`]: framing with 50% overlap, per-frame spectra, the running
//!   noise estimate and SNR weights, and the cross-correlation family.
//! - [`tdoa`]: per-pair peak extraction and the branch-and-bound search for
//!   a delay set whose derived pair delays all match observed peaks.
//! - [`geometry`]: array geometry, the precomputed pseudo-inverse system,
//!   direction solving and angle conventions.
//! - [`simulate`]: synthetic scenes with exact propagation delays — the
//!   ground truth the end-to-end tests run against.
//! - [`pipeline`]: the frame-by-frame [`Localizer`] tying it together.
//!
//! `no_std` compatible with `alloc` (disable the default `std` feature);
//! IO, file formats, and the command-line front end live in the companion
//! `soundloc` crate.
//!
//! ```
//! use soundloc_core::geometry::ArrayGeometry;
//! use soundloc_core::pipeline::{Localizer, PipelineConfig};
//! use soundloc_core::simulate::{render, Scene, SourceSignal};
//!
//! // Eight microphones on the corners of a 0.5 x 0.4 x 0.36 m prism.
//! let geom = ArrayGeometry::new(
//!     ArrayGeometry::prism_corners(0.50, 0.40, 0.36),
//!     343.0,
//!     48_000.0,
//! )
//! .unwrap();
//!
//! // A white-noise burst 3 m away, 20 degrees to the left.
//! let az = 20.0f64.to_radians();
//! let signal = SourceSignal::white(28_000, 7).with_lead_in(7_000);
//! let scene = Scene::new(
//!     [3.0 * az.cos(), 3.0 * az.sin(), 0.0],
//!     signal,
//!     15.0, // SNR in dB
//!     48_000.0,
//! );
//! let channels = render(&scene, &geom, 0.8).unwrap();
//!
//! let mut localizer = Localizer::new(geom, PipelineConfig::default()).unwrap();
//! let detections = localizer.run(&channels).unwrap();
//! assert!(!detections.is_empty());
//! assert!((detections[0].estimate.azimuth_deg - 20.0).abs() < 3.0);
//! ```

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod fft;
pub mod geometry;
pub mod pipeline;
pub mod rng;
pub mod simulate;
pub mod spectral;
pub mod tdoa;

pub use geometry::{ArrayGeometry, DirectionEstimate};
pub use pipeline::{Detection, Localizer, PipelineConfig};
pub use spectral::{CrossCorrelation, Frame, FrameConfig, NoiseState};
pub use tdoa::{PeakList, TdoaSet};

pub use num_complex::Complex64;
