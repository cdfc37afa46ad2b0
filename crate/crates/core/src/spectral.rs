//! Framing, per-frame spectra, noise tracking, and the cross-correlation
//! family (plain, whitened, noise-weighted).
//!
//! A multichannel stream is cut into windowed frames of `N` samples with 50%
//! overlap. Each frame carries the windowed sample blocks and their DFTs.
//! Cross-correlations between channel pairs are computed in the frequency
//! domain as the inverse transform of the (optionally whitened and weighted)
//! cross-spectrum, which is the `O(N log N)` circular equivalent of the
//! direct time-domain sum.
//!
//! The whitened correlation keeps only per-bin phase. The weighted variant
//! scales each bin by the square of an SNR-derived weight so that
//! noise-dominated regions of the spectrum stop contributing and strongly
//! tonal regions contribute more.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::fft::Fft;

/// Default analysis frame size in samples.
pub const DEFAULT_FRAME_SIZE: usize = 1024;
/// Default sample rate in Hz.
pub const DEFAULT_SAMPLE_RATE: f64 = 48_000.0;
/// Default conservativeness coefficient for the noise-masking weight.
pub const DEFAULT_NOISE_ALPHA: f64 = 0.4;
/// Default tonal-boost exponent for the enhanced weight.
pub const DEFAULT_NOISE_GAMMA: f64 = 0.3;
/// Default recursive-averaging rate of the noise spectrum estimate.
pub const DEFAULT_NOISE_LAMBDA: f64 = 0.05;
/// Lower bound of the noise-masking weight.
pub const WEIGHT_FLOOR: f64 = 0.1;
/// Frames over which the noise estimate is seeded by a running mean and
/// detection is suppressed.
pub const NOISE_WARMUP_FRAMES: u64 = 10;
/// Default whitening floor, relative to the frame's mean bin power.
pub const DEFAULT_WHITENING_FLOOR_REL: f64 = 1e-12;
/// Cap on the signal-to-noise power ratio used by the enhanced weight when
/// the noise estimate for a bin is zero (before the estimate stabilizes).
const ENHANCED_RATIO_CAP: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub enum SpectralError {
    /// Frame size is not a power of two, or below the minimum of 64.
    InvalidFrameSize {
        size: usize,
    },
    InvalidSampleRate,
    TooFewChannels {
        got: usize,
    },
    ChannelLengthMismatch {
        expected: usize,
        got: usize,
    },
    ChannelTooShort {
        len: usize,
        need: usize,
    },
    SpectrumLengthMismatch {
        left: usize,
        right: usize,
    },
    WeightLengthMismatch {
        got: usize,
        want: usize,
    },
    /// Power spectra are non-negative by definition.
    NegativePower {
        bin: usize,
    },
    PsdLengthMismatch {
        got: usize,
        want: usize,
    },
    InvalidNoiseParam {
        name: &'static str,
        value: f64,
    },
    /// The requested lag window does not fit in the frame.
    InvalidLagWindow {
        max_lag: i64,
        frame_size: usize,
    },
    LengthMismatch {
        left: usize,
        right: usize,
    },
}

impl core::fmt::Display for SpectralError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::InvalidFrameSize { size } => {
                write!(f, "frame size {size} must be a power of two >= 64")
            }
            Self::InvalidSampleRate => write!(f, "sample rate must be finite and positive"),
            Self::TooFewChannels { got } => write!(f, "need at least 2 channels, got {got}"),
            Self::ChannelLengthMismatch { expected, got } => {
                write!(f, "channel length mismatch: expected {expected}, got {got}")
            }
            Self::ChannelTooShort { len, need } => {
                write!(
                    f,
                    "channels of length {len} are shorter than one frame ({need})"
                )
            }
            Self::SpectrumLengthMismatch { left, right } => {
                write!(f, "spectrum length mismatch: {left} vs {right}")
            }
            Self::WeightLengthMismatch { got, want } => {
                write!(f, "weight vector has {got} bins, spectrum needs {want}")
            }
            Self::NegativePower { bin } => write!(f, "negative power at bin {bin}"),
            Self::PsdLengthMismatch { got, want } => {
                write!(f, "power spectrum has {got} bins, noise state holds {want}")
            }
            Self::InvalidNoiseParam { name, value } => {
                write!(f, "noise parameter {name} = {value} is out of range")
            }
            Self::InvalidLagWindow {
                max_lag,
                frame_size,
            } => {
                write!(
                    f,
                    "lag window +/-{max_lag} does not fit frame size {frame_size}"
                )
            }
            Self::LengthMismatch { left, right } => {
                write!(f, "signal length mismatch: {left} vs {right}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SpectralError {}

/// Analysis window applied to each frame before the DFT.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..n)
                .map(|i| 0.5 * (1.0 - libm::cos(2.0 * core::f64::consts::PI * i as f64 / n as f64)))
                .collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

/// Frame layout: size, rate, and taper. Overlap is fixed at 50%.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameConfig {
    frame_size: usize,
    sample_rate: f64,
    window: Window,
}

impl FrameConfig {
    pub fn new(frame_size: usize, sample_rate: f64, window: Window) -> Result<Self, SpectralError> {
        if !frame_size.is_power_of_two() || frame_size < 64 {
            return Err(SpectralError::InvalidFrameSize { size: frame_size });
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(SpectralError::InvalidSampleRate);
        }
        Ok(Self {
            frame_size,
            sample_rate,
            window,
        })
    }

    pub fn frame_size(&self) -> usize {
        self.frame_size
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn window(&self) -> Window {
        self.window
    }

    /// Frame advance in samples (50% overlap).
    pub fn hop(&self) -> usize {
        self.frame_size / 2
    }

    /// Number of one-sided spectrum bins, `N/2 + 1`.
    pub fn bins(&self) -> usize {
        self.frame_size / 2 + 1
    }

    /// Number of full frames available in a stream of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.frame_size {
            0
        } else {
            (len - self.frame_size) / self.hop() + 1
        }
    }
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            frame_size: DEFAULT_FRAME_SIZE,
            sample_rate: DEFAULT_SAMPLE_RATE,
            window: Window::Hann,
        }
    }
}

/// One windowed multichannel block and its spectra.
///
/// `channels[i]` is the taper-multiplied sample block of microphone `i`;
/// `spectra[i]` is its full `N`-point DFT.
#[derive(Debug, Clone)]
pub struct Frame {
    pub index: u64,
    pub channels: Vec<Vec<f64>>,
    pub spectra: Vec<Vec<Complex64>>,
}

impl Frame {
    /// Mean power spectral density across microphones, one-sided
    /// (`N/2 + 1` bins).
    pub fn mean_psd(&self) -> Vec<f64> {
        let n = self.channels[0].len();
        let bins = n / 2 + 1;
        let scale = 1.0 / self.spectra.len() as f64;
        (0..bins)
            .map(|k| self.spectra.iter().map(|s| s[k].norm_sqr()).sum::<f64>() * scale)
            .collect()
    }
}

/// Iterator cutting a multichannel stream into frames. Frames advance by
/// `N/2` samples; a trailing partial block is dropped.
pub struct FrameStream<'a> {
    channels: &'a [Vec<f64>],
    window: Vec<f64>,
    fft: Fft,
    hop: usize,
    pos: usize,
    index: u64,
}

impl<'a> FrameStream<'a> {
    fn new(channels: &'a [Vec<f64>], cfg: &FrameConfig) -> Self {
        Self {
            channels,
            window: cfg.window.coefficients(cfg.frame_size),
            fft: Fft::new(cfg.frame_size),
            hop: cfg.hop(),
            pos: 0,
            index: 0,
        }
    }
}

impl Iterator for FrameStream<'_> {
    type Item = Frame;

    fn next(&mut self) -> Option<Frame> {
        let n = self.window.len();
        if self.pos + n > self.channels[0].len() {
            return None;
        }
        let mut channels = Vec::with_capacity(self.channels.len());
        let mut spectra = Vec::with_capacity(self.channels.len());
        for source in self.channels {
            let block: Vec<f64> = source[self.pos..self.pos + n]
                .iter()
                .zip(self.window.iter())
                .map(|(&x, &w)| x * w)
                .collect();
            let mut spec: Vec<Complex64> = block.iter().map(|&x| Complex64::new(x, 0.0)).collect();
            self.fft.forward(&mut spec);
            channels.push(block);
            spectra.push(spec);
        }
        let frame = Frame {
            index: self.index,
            channels,
            spectra,
        };
        self.index += 1;
        self.pos += self.hop;
        Some(frame)
    }
}

/// Cuts equal-length channels into windowed, transformed frames.
pub fn frame_stream<'a>(
    channels: &'a [Vec<f64>],
    cfg: &FrameConfig,
) -> Result<FrameStream<'a>, SpectralError> {
    if channels.len() < 2 {
        return Err(SpectralError::TooFewChannels {
            got: channels.len(),
        });
    }
    let len = channels[0].len();
    for ch in channels {
        if ch.len() != len {
            return Err(SpectralError::ChannelLengthMismatch {
                expected: len,
                got: ch.len(),
            });
        }
    }
    if len < cfg.frame_size {
        return Err(SpectralError::ChannelTooShort {
            len,
            need: cfg.frame_size,
        });
    }
    Ok(FrameStream::new(channels, cfg))
}

/// Running noise spectrum estimate plus the weighting parameters.
#[derive(Debug, Clone)]
pub struct NoiseState {
    noise_psd: Vec<f64>,
    alpha: f64,
    gamma: f64,
    lambda: f64,
    frames_seen: u64,
}

impl NoiseState {
    pub fn new(bins: usize, alpha: f64, gamma: f64, lambda: f64) -> Result<Self, SpectralError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(SpectralError::InvalidNoiseParam {
                name: "alpha",
                value: alpha,
            });
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(SpectralError::InvalidNoiseParam {
                name: "gamma",
                value: gamma,
            });
        }
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(SpectralError::InvalidNoiseParam {
                name: "lambda",
                value: lambda,
            });
        }
        Ok(Self {
            noise_psd: vec![0.0; bins],
            alpha,
            gamma,
            lambda,
            frames_seen: 0,
        })
    }

    pub fn with_defaults(bins: usize) -> Self {
        Self::new(
            bins,
            DEFAULT_NOISE_ALPHA,
            DEFAULT_NOISE_GAMMA,
            DEFAULT_NOISE_LAMBDA,
        )
        .expect("default noise parameters are valid")
    }

    pub fn noise_psd(&self) -> &[f64] {
        &self.noise_psd
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn frames_seen(&self) -> u64 {
        self.frames_seen
    }

    /// True once the estimate has left the warm-up phase. Detection against
    /// an unseeded noise floor is meaningless, so callers suppress source
    /// detection until this holds.
    pub fn warmed_up(&self) -> bool {
        self.frames_seen >= NOISE_WARMUP_FRAMES
    }

    /// Folds the current frame's mean power spectrum into the estimate.
    ///
    /// During warm-up the estimate is the running mean of what has been
    /// seen; afterwards it is the recursive average
    /// `X_n <- (1 - lambda) * X_n + lambda * X`.
    pub fn update(&mut self, mean_psd: &[f64]) -> Result<(), SpectralError> {
        if mean_psd.len() != self.noise_psd.len() {
            return Err(SpectralError::PsdLengthMismatch {
                got: mean_psd.len(),
                want: self.noise_psd.len(),
            });
        }
        if let Some(bin) = mean_psd.iter().position(|&p| p < 0.0) {
            return Err(SpectralError::NegativePower { bin });
        }
        if self.frames_seen < NOISE_WARMUP_FRAMES {
            let t = self.frames_seen as f64;
            for (n, &x) in self.noise_psd.iter_mut().zip(mean_psd) {
                *n = (*n * t + x) / (t + 1.0);
            }
        } else {
            for (n, &x) in self.noise_psd.iter_mut().zip(mean_psd) {
                *n = (1.0 - self.lambda) * *n + self.lambda * x;
            }
        }
        self.frames_seen += 1;
        Ok(())
    }
}

/// Noise-masking weight `w(k) = max(0.1, (X(k) - alpha * X_n(k)) / X(k))`.
///
/// Close to the floor where noise dominates, close to 1 where the signal
/// does. Zero-power bins get the floor.
pub fn noise_mask_weight(mean_psd: &[f64], state: &NoiseState) -> Vec<f64> {
    assert_eq!(mean_psd.len(), state.noise_psd.len(), "bin count mismatch");
    mean_psd
        .iter()
        .zip(state.noise_psd.iter())
        .map(|(&x, &n)| {
            if x > 0.0 {
                ((x - state.alpha * n) / x).max(WEIGHT_FLOOR)
            } else {
                WEIGHT_FLOOR
            }
        })
        .collect()
}

/// Enhanced weight: `w(k)` boosted by `(X/X_n)^gamma` where the signal
/// exceeds the noise estimate, unchanged elsewhere.
///
/// Bins with a zero noise estimate but nonzero power use a capped ratio so
/// the weights stay finite before the estimate stabilizes.
pub fn enhanced_weight(w: &[f64], mean_psd: &[f64], state: &NoiseState) -> Vec<f64> {
    assert_eq!(w.len(), mean_psd.len(), "bin count mismatch");
    assert_eq!(mean_psd.len(), state.noise_psd.len(), "bin count mismatch");
    w.iter()
        .zip(mean_psd.iter().zip(state.noise_psd.iter()))
        .map(|(&w, (&x, &n))| {
            if x <= n {
                w
            } else {
                let ratio = if n > 0.0 {
                    (x / n).min(ENHANCED_RATIO_CAP)
                } else {
                    ENHANCED_RATIO_CAP
                };
                w * libm::pow(ratio, state.gamma)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrelationKind {
    Plain,
    Whitened,
    Weighted,
}

/// Real coherence values over lags `-max_lag ..= +max_lag` for one
/// microphone pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCorrelation {
    pub pair: (usize, usize),
    pub kind: CorrelationKind,
    max_lag: i64,
    values: Vec<f64>,
}

impl CrossCorrelation {
    /// Builds a correlation from raw lag-domain values;
    /// `values.len()` must equal `2 * max_lag + 1`.
    pub fn from_values(
        pair: (usize, usize),
        kind: CorrelationKind,
        max_lag: i64,
        values: Vec<f64>,
    ) -> Result<Self, SpectralError> {
        if max_lag < 0 || values.len() != (2 * max_lag + 1) as usize {
            return Err(SpectralError::InvalidLagWindow {
                max_lag,
                frame_size: values.len(),
            });
        }
        Ok(Self {
            pair,
            kind,
            max_lag,
            values,
        })
    }

    pub fn max_lag(&self) -> i64 {
        self.max_lag
    }

    /// Values indexed from lag `-max_lag` upwards; length `2*max_lag + 1`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value_at(&self, lag: i64) -> f64 {
        assert!(
            lag.abs() <= self.max_lag,
            "lag {lag} outside window +/-{}",
            self.max_lag
        );
        self.values[(lag + self.max_lag) as usize]
    }

    /// Lag of the greatest value and that value. The first maximum wins on
    /// ties, scanning from `-max_lag`.
    pub fn argmax(&self) -> (i64, f64) {
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, &v) in self.values.iter().enumerate() {
            if v > best.1 {
                best = (i, v);
            }
        }
        (best.0 as i64 - self.max_lag, best.1)
    }

    /// Iterates `(lag, value)` pairs in ascending lag order.
    pub fn lags(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(i, &v)| (i as i64 - self.max_lag, v))
    }
}

fn check_lag_window(max_lag: i64, frame_size: usize) -> Result<(), SpectralError> {
    if max_lag < 0 || (2 * max_lag + 1) as usize > frame_size {
        return Err(SpectralError::InvalidLagWindow {
            max_lag,
            frame_size,
        });
    }
    Ok(())
}

/// Extracts lags `-max_lag ..= max_lag` from a circular buffer of length `n`.
fn window_circular(buf: &[f64], max_lag: i64) -> Vec<f64> {
    let n = buf.len() as i64;
    (-max_lag..=max_lag)
        .map(|lag| buf[lag.rem_euclid(n) as usize])
        .collect()
}

/// Direct `O(N^2)` circular cross-correlation
/// `R(tau) = sum_n xi[n] * xj[(n - tau) mod N]`.
///
/// This is the reference the FFT path is checked against; it is not used on
/// the hot path.
pub fn crosscorr_plain_time(
    pair: (usize, usize),
    xi: &[f64],
    xj: &[f64],
    max_lag: i64,
) -> Result<CrossCorrelation, SpectralError> {
    if xi.len() != xj.len() {
        return Err(SpectralError::LengthMismatch {
            left: xi.len(),
            right: xj.len(),
        });
    }
    check_lag_window(max_lag, xi.len())?;
    let n = xi.len() as i64;
    let values = (-max_lag..=max_lag)
        .map(|lag| {
            (0..n)
                .map(|i| xi[i as usize] * xj[(i - lag).rem_euclid(n) as usize])
                .sum::<f64>()
        })
        .collect();
    Ok(CrossCorrelation {
        pair,
        kind: CorrelationKind::Plain,
        max_lag,
        values,
    })
}

/// Circular cross-correlation via the cross-spectrum,
/// `R = IDFT(Xi * conj(Xj))`, matching [`crosscorr_plain_time`] up to
/// rounding in `O(N log N)`.
pub fn crosscorr_plain_fft(
    pair: (usize, usize),
    xi_spec: &[Complex64],
    xj_spec: &[Complex64],
    max_lag: i64,
) -> Result<CrossCorrelation, SpectralError> {
    if xi_spec.len() != xj_spec.len() {
        return Err(SpectralError::SpectrumLengthMismatch {
            left: xi_spec.len(),
            right: xj_spec.len(),
        });
    }
    check_lag_window(max_lag, xi_spec.len())?;
    let n = xi_spec.len();
    let mut cross: Vec<Complex64> = xi_spec
        .iter()
        .zip(xj_spec)
        .map(|(&a, &b)| a * b.conj())
        .collect();
    Fft::new(n).inverse(&mut cross);
    let full: Vec<f64> = cross.iter().map(|c| c.re).collect();
    let values = window_circular(&full, max_lag);
    Ok(CrossCorrelation {
        pair,
        kind: CorrelationKind::Plain,
        max_lag,
        values,
    })
}

/// Default whitening floor for a pair of spectra: a tiny fraction of the
/// frame's mean bin power. Bins whose magnitude product falls below it
/// contribute nothing instead of being divided to unit magnitude.
pub fn whitening_floor(xi_spec: &[Complex64], xj_spec: &[Complex64]) -> f64 {
    let n = (xi_spec.len() + xj_spec.len()) as f64;
    let power: f64 = xi_spec.iter().chain(xj_spec).map(|c| c.norm_sqr()).sum();
    DEFAULT_WHITENING_FLOOR_REL * power / n
}

/// Shared implementation of the whitened and weighted correlations.
///
/// Each contributing bin is normalized to unit magnitude (phase transform)
/// and, when `weights` are given, scaled by the squared one-sided weight of
/// its mirror bin. No `1/N` scaling: with every bin contributing and unit
/// weights, the zero-lag value of an autocorrelation equals the bin count.
fn phase_transform_corr(
    pair: (usize, usize),
    xi_spec: &[Complex64],
    xj_spec: &[Complex64],
    weights: Option<&[f64]>,
    max_lag: i64,
    floor_eps: f64,
    kind: CorrelationKind,
) -> Result<CrossCorrelation, SpectralError> {
    if xi_spec.len() != xj_spec.len() {
        return Err(SpectralError::SpectrumLengthMismatch {
            left: xi_spec.len(),
            right: xj_spec.len(),
        });
    }
    let n = xi_spec.len();
    check_lag_window(max_lag, n)?;
    if let Some(w) = weights {
        if w.len() != n / 2 + 1 {
            return Err(SpectralError::WeightLengthMismatch {
                got: w.len(),
                want: n / 2 + 1,
            });
        }
    }
    let mut cross = Vec::with_capacity(n);
    for k in 0..n {
        let product = xi_spec[k] * xj_spec[k].conj();
        let mag = xi_spec[k].norm() * xj_spec[k].norm();
        if mag > floor_eps {
            let mut term = product / mag;
            if let Some(w) = weights {
                // One-sided weights mirror onto the upper half of the
                // spectrum, keeping conjugate symmetry.
                let wk = w[if k <= n / 2 { k } else { n - k }];
                term *= wk * wk;
            }
            cross.push(term);
        } else {
            cross.push(Complex64::new(0.0, 0.0));
        }
    }
    Fft::new(n).inverse(&mut cross);
    // Undo the 1/N of the inverse transform: these correlations are defined
    // as the bare sum over bins.
    let full: Vec<f64> = cross.iter().map(|c| c.re * n as f64).collect();
    let values = window_circular(&full, max_lag);
    Ok(CrossCorrelation {
        pair,
        kind,
        max_lag,
        values,
    })
}

/// Whitened (phase transform) cross-correlation: every bin is normalized to
/// unit magnitude before the inverse transform, keeping phase only.
pub fn crosscorr_whitened(
    pair: (usize, usize),
    xi_spec: &[Complex64],
    xj_spec: &[Complex64],
    max_lag: i64,
    floor_eps: f64,
) -> Result<CrossCorrelation, SpectralError> {
    phase_transform_corr(
        pair,
        xi_spec,
        xj_spec,
        None,
        max_lag,
        floor_eps,
        CorrelationKind::Whitened,
    )
}

/// Noise-weighted whitened cross-correlation: each bin of the phase
/// transform is scaled by the squared enhanced weight. With unit weights
/// this equals [`crosscorr_whitened`] exactly.
pub fn crosscorr_weighted(
    pair: (usize, usize),
    xi_spec: &[Complex64],
    xj_spec: &[Complex64],
    enhanced_w: &[f64],
    max_lag: i64,
    floor_eps: f64,
) -> Result<CrossCorrelation, SpectralError> {
    phase_transform_corr(
        pair,
        xi_spec,
        xj_spec,
        Some(enhanced_w),
        max_lag,
        floor_eps,
        CorrelationKind::Weighted,
    )
}
