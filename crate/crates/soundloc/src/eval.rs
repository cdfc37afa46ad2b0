//! Simulation sweeps: angular-error tables over distance and elevation, the
//! near-field error curve, and a throughput benchmark of the full pipeline.
//!
//! Every sweep renders synthetic scenes with known ground truth, so the
//! numbers measure the algorithm, not a room. Outputs are CSV rows labeled
//! as simulated.

use std::time::Instant;

use anyhow::{ensure, Context, Result};
use rayon::prelude::*;

use soundloc_core::geometry::{angle_between_deg, nearfield_error_curve, ArrayGeometry};
use soundloc_core::pipeline::{Localizer, PipelineConfig};
use soundloc_core::simulate::{render, Scene, SourceSignal};

/// The evaluated (distance m, elevation deg) placements.
pub const SWEEP_CASES: [(f64, f64); 4] = [(3.0, -7.0), (3.0, 8.0), (1.5, -13.0), (0.9, 24.0)];

/// Azimuth step of the horizontal sweep, in degrees.
pub const SWEEP_AZIMUTH_STEP: f64 = 30.0;

/// Default SNR of the sweep scenes, in dB.
pub const SWEEP_SNR_DB: f64 = 15.0;

/// Default direction samples per distance for the near-field curve.
pub const NEARFIELD_TRIALS: usize = 500;

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub distance_m: f64,
    pub elevation_deg: f64,
    pub scenes: usize,
    pub frames: usize,
    pub detections: usize,
    pub mean_error_deg: f64,
}

/// Outcome of one rendered scene run through a fresh localizer.
#[derive(Debug, Clone)]
pub struct SceneOutcome {
    pub frames: usize,
    pub detections: usize,
    pub error_sum_deg: f64,
}

/// Builds a sweep scene: a white burst at the given placement, preceded by
/// enough lead-in for the noise estimate to settle on the scene noise.
pub fn sweep_scene(
    distance_m: f64,
    elevation_deg: f64,
    azimuth_deg: f64,
    snr_db: f64,
    fs: f64,
    seed: u64,
) -> (Scene, [f64; 3]) {
    let az = azimuth_deg.to_radians();
    let el = elevation_deg.to_radians();
    let direction = [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()];
    let position = [
        direction[0] * distance_m,
        direction[1] * distance_m,
        direction[2] * distance_m,
    ];
    let lead_in = (0.15 * fs) as usize;
    let burst = (0.55 * fs) as usize;
    let signal = SourceSignal::white(burst, seed).with_lead_in(lead_in);
    let scene = Scene::new(position, signal, snr_db, fs).with_seed(seed ^ 0x517c_c1b7_2722_0a95);
    (scene, direction)
}

/// Renders a scene and runs the pipeline on it, reporting detection count
/// and the summed angular error against the true direction.
pub fn run_scene(
    geom: &ArrayGeometry,
    cfg: &PipelineConfig,
    scene: &Scene,
    duration_s: f64,
    true_direction: [f64; 3],
) -> Result<SceneOutcome> {
    let channels = render(scene, geom, duration_s).context("scene render failed")?;
    let mut localizer =
        Localizer::new(geom.clone(), cfg.clone()).context("pipeline construction failed")?;
    let detections = localizer.run(&channels).context("pipeline run failed")?;
    let frames = cfg.frame.frame_count(channels[0].len());
    let error_sum_deg = detections
        .iter()
        .map(|d| angle_between_deg(d.estimate.u, true_direction))
        .sum();
    Ok(SceneOutcome {
        frames,
        detections: detections.len(),
        error_sum_deg,
    })
}

/// Sweeps the standard placements over the full horizontal circle and
/// reports the mean angular error per placement. Scenes run in parallel;
/// results are deterministic in `seed`.
pub fn angular_error_sweep(
    geom: &ArrayGeometry,
    cfg: &PipelineConfig,
    snr_db: f64,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    let fs = geom.sample_rate();
    SWEEP_CASES
        .iter()
        .map(|&(distance_m, elevation_deg)| {
            let azimuth_count = (360.0 / SWEEP_AZIMUTH_STEP) as usize;
            let outcomes: Vec<SceneOutcome> = (0..azimuth_count)
                .into_par_iter()
                .map(|step| {
                    let azimuth = step as f64 * SWEEP_AZIMUTH_STEP;
                    let scene_seed = seed
                        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                        .wrapping_add((distance_m * 100.0) as u64)
                        .wrapping_add((elevation_deg.abs() * 10.0) as u64)
                        .wrapping_add(step as u64 * 7919);
                    let (scene, direction) =
                        sweep_scene(distance_m, elevation_deg, azimuth, snr_db, fs, scene_seed);
                    run_scene(geom, cfg, &scene, 0.8, direction)
                })
                .collect::<Result<_>>()?;

            let frames = outcomes.iter().map(|o| o.frames).sum();
            let detections: usize = outcomes.iter().map(|o| o.detections).sum();
            let error_sum: f64 = outcomes.iter().map(|o| o.error_sum_deg).sum();
            ensure!(
                detections > 0,
                "no detections at {distance_m} m, {elevation_deg} deg elevation"
            );
            Ok(SweepRow {
                distance_m,
                elevation_deg,
                scenes: outcomes.len(),
                frames,
                detections,
                mean_error_deg: error_sum / detections as f64,
            })
        })
        .collect()
}

/// The geometry-level near-field curve: mean angular error per distance
/// with sample-quantized spherical-wavefront delays.
pub fn nearfield_rows(
    geom: &ArrayGeometry,
    distances: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let errors = nearfield_error_curve(geom, distances, trials, true, seed)
        .context("near-field curve failed")?;
    Ok(distances.iter().copied().zip(errors).collect())
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub frames: usize,
    pub wall_s: f64,
    pub frames_per_s: f64,
    /// Frame production rate of a live stream, `fs / (N/2)`.
    pub realtime_frames_per_s: f64,
}

impl BenchReport {
    pub fn realtime_factor(&self) -> f64 {
        self.frames_per_s / self.realtime_frames_per_s
    }
}

/// Times the full pipeline over a rendered scene (render excluded).
pub fn bench(
    geom: &ArrayGeometry,
    cfg: &PipelineConfig,
    duration_s: f64,
    seed: u64,
) -> Result<BenchReport> {
    let fs = geom.sample_rate();
    let lead_in = (0.15 * fs) as usize;
    let burst = ((duration_s - 0.25) * fs) as usize;
    let signal = SourceSignal::white(burst, seed).with_lead_in(lead_in);
    let scene = Scene::new([3.0, 1.0, 0.4], signal, SWEEP_SNR_DB, fs).with_seed(seed);
    let channels = render(&scene, geom, duration_s).context("bench render failed")?;

    let mut localizer =
        Localizer::new(geom.clone(), cfg.clone()).context("pipeline construction failed")?;
    let start = Instant::now();
    let detections = localizer.run(&channels).context("pipeline run failed")?;
    let wall_s = start.elapsed().as_secs_f64();
    ensure!(!detections.is_empty(), "bench scene produced no detections");

    let frames = cfg.frame.frame_count(channels[0].len());
    Ok(BenchReport {
        frames,
        wall_s,
        frames_per_s: frames as f64 / wall_s,
        realtime_frames_per_s: fs / cfg.frame.hop() as f64,
    })
}
