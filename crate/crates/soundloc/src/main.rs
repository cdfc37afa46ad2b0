//! `soundloc`: locate sound sources in multichannel recordings, render
//! synthetic scenes, and run evaluation sweeps.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand, ValueEnum};

use soundloc::eval;
use soundloc::io::{self, DetectionRecord};
use soundloc_core::geometry::{ArrayGeometry, DEFAULT_SPEED_OF_SOUND};
use soundloc_core::pipeline::{Localizer, PipelineConfig};
use soundloc_core::simulate::{render, Scene, SourceSignal};
use soundloc_core::spectral::{FrameConfig, Window};

/// Environment variable naming the default geometry config file.
const GEOMETRY_ENV: &str = "SOUNDLOC_GEOMETRY";

const EXIT_INPUT_ERROR: u8 = 2;
const EXIT_PROCESSING_ERROR: u8 = 3;

#[derive(Parser)]
#[command(
    name = "soundloc",
    about = "Microphone-array sound source localization",
    after_help = "Without --geometry or SOUNDLOC_GEOMETRY, the built-in eight-microphone \
                  0.50 x 0.40 x 0.36 m prism is used."
)]
struct Cli {
    /// Geometry config file (positions in meters); falls back to
    /// $SOUNDLOC_GEOMETRY, then to the built-in prism.
    #[arg(long, global = true)]
    geometry: Option<PathBuf>,

    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    show_config: bool,

    #[command(flatten)]
    tuning: Tuning,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args)]
struct Tuning {
    /// Analysis frame size in samples (power of two).
    #[arg(short = 'N', long, global = true, default_value_t = 1024)]
    frame_size: usize,

    /// Sample rate in Hz for simulation and evaluation; `locate` always
    /// follows the input file.
    #[arg(long, global = true, default_value_t = 48_000.0)]
    fs: f64,

    /// Noise-mask conservativeness coefficient.
    #[arg(long, global = true, default_value_t = 0.4)]
    alpha: f64,

    /// Tonal-boost exponent of the enhanced weight.
    #[arg(long, global = true, default_value_t = 0.3)]
    gamma: f64,

    /// Noise-estimate update rate.
    #[arg(long, global = true, default_value_t = 0.05)]
    lambda: f64,

    /// Candidate peaks kept per pair correlation (M).
    #[arg(short = 'M', long, global = true, default_value_t = 8)]
    peaks: usize,

    /// Delay consistency tolerance in samples.
    #[arg(long, global = true, default_value_t = 1)]
    tol: i64,

    /// Minimum lag separation between extracted peaks.
    #[arg(long, global = true, default_value_t = 2)]
    min_separation: i64,

    /// Detection gate factor over the median absolute correlation.
    #[arg(long, global = true, default_value_t = 4.0)]
    gate: f64,

    /// Seed for every random draw (scenes, sweeps).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Localize sources in a multichannel WAV, one record per detection.
    Locate {
        /// Input recording (>= 2 channels, 16/24/32-bit int or 32-bit float).
        audio: PathBuf,

        /// Write detection records here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },

    /// Render a synthetic scene to a multichannel WAV.
    Simulate {
        /// Output WAV path.
        #[arg(long)]
        out: PathBuf,

        /// Source waveform kind.
        #[arg(long, value_enum, default_value_t = Kind::White)]
        kind: Kind,

        /// Tone frequency in Hz (tone kind only).
        #[arg(long, default_value_t = 1000.0)]
        freq: f64,

        /// Source position in meters, `x,y,z`.
        #[arg(long, default_value = "3,0,0", value_parser = parse_position)]
        position: [f64; 3],

        /// Per-microphone SNR in dB; `inf` renders noiseless.
        #[arg(long, default_value_t = f64::INFINITY)]
        snr_db: f64,

        /// Recording length in seconds.
        #[arg(long, default_value_t = 1.0)]
        duration: f64,

        /// Source onset in seconds (silence before the signal).
        #[arg(long, default_value_t = 0.15)]
        onset: f64,

        /// Echo as `delay_ms:attenuation`; repeatable.
        #[arg(long = "echo", value_parser = parse_echo)]
        echoes: Vec<(f64, f64)>,
    },

    /// Run a simulated evaluation sweep, CSV on stdout or to a file.
    Eval {
        /// Which sweep to run.
        #[arg(long, value_enum)]
        mode: Mode,

        /// Write CSV here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,

        /// Scene SNR in dB (table mode).
        #[arg(long, default_value_t = eval::SWEEP_SNR_DB)]
        snr_db: f64,

        /// Distances in meters for the near-field curve, comma separated.
        // The full Vec path keeps clap from treating this as a
        // per-occurrence list; the parser consumes one comma-separated value.
        #[arg(long, default_value = "0.25,0.5,0.75,1,2,3", value_parser = parse_distances)]
        distances: std::vec::Vec<f64>,

        /// Direction samples per distance (nearfield mode).
        #[arg(long, default_value_t = eval::NEARFIELD_TRIALS)]
        trials: usize,

        /// Audio length in seconds (bench mode).
        #[arg(long, default_value_t = 5.0)]
        duration: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    White,
    Speech,
    Tone,
    Impulse,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    /// Mean angular error at the standard (distance, elevation) placements.
    Table1,
    /// Near-field mean angular error vs distance.
    Nearfield,
    /// Pipeline throughput vs the real-time frame rate.
    Bench,
}

fn parse_position(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    if parts.len() != 3 {
        return Err(format!("need x,y,z, got {} values", parts.len()));
    }
    Ok([parts[0], parts[1], parts[2]])
}

fn parse_echo(s: &str) -> Result<(f64, f64), String> {
    let (delay, atten) = s.split_once(':').ok_or("expected delay_ms:attenuation")?;
    Ok((
        delay
            .trim()
            .parse()
            .map_err(|e| format!("bad delay: {e}"))?,
        atten
            .trim()
            .parse()
            .map_err(|e| format!("bad attenuation: {e}"))?,
    ))
}

fn parse_distances(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect()
}

/// Input problems (bad files, bad flags) exit with code 2; failures while
/// processing valid inputs exit with 3.
enum AppError {
    Input(anyhow::Error),
    Processing(anyhow::Error),
}

impl AppError {
    fn exit_code(&self) -> u8 {
        match self {
            AppError::Input(_) => EXIT_INPUT_ERROR,
            AppError::Processing(_) => EXIT_PROCESSING_ERROR,
        }
    }

    fn message(&self) -> &anyhow::Error {
        match self {
            AppError::Input(e) | AppError::Processing(e) => e,
        }
    }
}

fn input_err(e: impl Into<anyhow::Error>) -> AppError {
    AppError::Input(e.into())
}

fn processing_err(e: impl Into<anyhow::Error>) -> AppError {
    AppError::Processing(e.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("soundloc: error: {:#}", err.message());
            ExitCode::from(err.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    if cli.show_config {
        return show_config(&cli);
    }
    let Some(command) = &cli.command else {
        return Err(input_err(anyhow!(
            "no subcommand given; try `soundloc --help` or `soundloc --show-config`"
        )));
    };

    match command {
        Command::Locate { audio, output } => cmd_locate(&cli, audio, output.as_deref()),
        Command::Simulate {
            out,
            kind,
            freq,
            position,
            snr_db,
            duration,
            onset,
            echoes,
        } => cmd_simulate(
            &cli, out, *kind, *freq, *position, *snr_db, *duration, *onset, echoes,
        ),
        Command::Eval {
            mode,
            output,
            snr_db,
            distances,
            trials,
            duration,
        } => cmd_eval(
            &cli,
            *mode,
            output.as_deref(),
            *snr_db,
            distances,
            *trials,
            *duration,
        ),
    }
}

/// Resolves the geometry source: flag, then environment, then the built-in
/// prism. The returned config still needs `build` with a sample rate.
fn load_geometry(cli: &Cli) -> Result<(io::GeometryConfig, String), AppError> {
    let path = cli
        .geometry
        .clone()
        .or_else(|| std::env::var_os(GEOMETRY_ENV).map(PathBuf::from));
    match path {
        Some(path) => {
            let config = io::read_geometry_config(&path).map_err(input_err)?;
            Ok((config, path.display().to_string()))
        }
        None => Ok((
            io::GeometryConfig {
                mics: ArrayGeometry::prism_corners(0.50, 0.40, 0.36),
                c: None,
                fs: None,
            },
            "built-in 0.50 x 0.40 x 0.36 m prism".to_string(),
        )),
    }
}

fn pipeline_config(cli: &Cli, fs: f64) -> Result<PipelineConfig, AppError> {
    let frame = FrameConfig::new(cli.tuning.frame_size, fs, Window::Hann).map_err(input_err)?;
    let mut cfg = PipelineConfig {
        frame,
        ..PipelineConfig::default()
    };
    cfg.alpha = cli.tuning.alpha;
    cfg.gamma = cli.tuning.gamma;
    cfg.lambda = cli.tuning.lambda;
    cfg.peaks_per_pair = cli.tuning.peaks;
    cfg.consistency_tol = cli.tuning.tol;
    cfg.min_separation = cli.tuning.min_separation;
    cfg.gate_factor = cli.tuning.gate;
    Ok(cfg)
}

fn show_config(cli: &Cli) -> Result<(), AppError> {
    let (config, source) = load_geometry(cli)?;
    let t = &cli.tuning;
    println!(
        "geometry          = {source} ({} microphones)",
        config.mics.len()
    );
    println!(
        "speed_of_sound    = {} m/s",
        config.c.unwrap_or(DEFAULT_SPEED_OF_SOUND)
    );
    println!(
        "sample_rate       = {} Hz (locate follows the input file)",
        config.fs.unwrap_or(t.fs)
    );
    println!(
        "frame_size        = {} samples, 50% overlap, Hann window",
        t.frame_size
    );
    println!(
        "alpha             = {} (noise-mask conservativeness)",
        t.alpha
    );
    println!("gamma             = {} (tonal-boost exponent)", t.gamma);
    println!("lambda            = {} (noise update rate)", t.lambda);
    println!("peaks_per_pair    = {} (M)", t.peaks);
    println!("tol               = {} samples (delay consistency)", t.tol);
    println!("min_separation    = {} lags", t.min_separation);
    println!("gate              = {} x median |R|", t.gate);
    println!(
        "min_raw_norm      = {}",
        PipelineConfig::default().min_raw_norm
    );
    println!(
        "noise_warmup      = {} frames",
        soundloc_core::spectral::NOISE_WARMUP_FRAMES
    );
    println!("seed              = {}", t.seed);
    Ok(())
}

fn cmd_locate(
    cli: &Cli,
    audio: &std::path::Path,
    output: Option<&std::path::Path>,
) -> Result<(), AppError> {
    let (channels, fs) = io::read_multichannel_wav(audio).map_err(input_err)?;
    let (geom_config, _) = load_geometry(cli)?;
    if let Some(file_fs) = geom_config.fs {
        if file_fs != fs as f64 {
            eprintln!(
                "soundloc: note: geometry file says {file_fs} Hz, input file is {fs} Hz; \
                 using the input rate"
            );
        }
    }
    let geom = ArrayGeometry::new(
        geom_config.mics.clone(),
        geom_config.c.unwrap_or(DEFAULT_SPEED_OF_SOUND),
        fs as f64,
    )
    .map_err(input_err)?;
    if geom.n_mics() != channels.len() {
        return Err(input_err(anyhow!(
            "geometry has {} microphones but the recording has {} channels",
            geom.n_mics(),
            channels.len()
        )));
    }

    let cfg = pipeline_config(cli, fs as f64)?;
    let mut localizer = Localizer::new(geom, cfg.clone()).map_err(processing_err)?;

    let start = std::time::Instant::now();
    let detections = localizer.run(&channels).map_err(processing_err)?;
    let wall = start.elapsed().as_secs_f64();
    let frames = cfg.frame.frame_count(channels[0].len());

    let records = detections.iter().map(DetectionRecord::from);
    match output {
        Some(path) => {
            let file = File::create(path).map_err(input_err)?;
            io::write_detections(BufWriter::new(file), records).map_err(processing_err)?;
        }
        None => {
            let stdout = std::io::stdout().lock();
            match io::write_detections(stdout, records) {
                // A closed downstream reader is not our error.
                Err(io::IoError::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => {
                    return Ok(())
                }
                other => other.map_err(processing_err)?,
            }
        }
    }
    eprintln!(
        "soundloc: {frames} frames, {} detections, {:.3} ms/frame",
        detections.len(),
        wall * 1000.0 / frames.max(1) as f64
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    cli: &Cli,
    out: &std::path::Path,
    kind: Kind,
    freq: f64,
    position: [f64; 3],
    snr_db: f64,
    duration: f64,
    onset: f64,
    echoes: &[(f64, f64)],
) -> Result<(), AppError> {
    let (geom_config, _) = load_geometry(cli)?;
    let fs = geom_config.fs.unwrap_or(cli.tuning.fs);
    let geom = geom_config
        .build(DEFAULT_SPEED_OF_SOUND, fs)
        .map_err(input_err)?;

    if onset < 0.0 || onset >= duration {
        return Err(input_err(anyhow!(
            "onset {onset} s must lie inside the duration"
        )));
    }
    // Leave headroom for the propagation delay behind the signal.
    let len = ((duration - onset) * fs) as usize;
    let headroom = (0.05 * fs) as usize;
    let len = len.saturating_sub(headroom).max(1);
    let seed = cli.tuning.seed;
    let signal = match kind {
        Kind::White => SourceSignal::white(len, seed),
        Kind::Speech => SourceSignal::speech_burst(len, fs, seed),
        Kind::Tone => SourceSignal::tone(len, fs, freq),
        Kind::Impulse => SourceSignal::impulse(len),
    }
    .with_lead_in((onset * fs) as usize);

    let mut scene = Scene::new(position, signal, snr_db, fs).with_seed(seed);
    for &(delay_ms, attenuation) in echoes {
        scene = scene.with_echo(delay_ms, attenuation);
    }

    let channels = render(&scene, &geom, duration).map_err(processing_err)?;
    io::write_multichannel_wav(out, &channels, fs as u32).map_err(processing_err)?;
    eprintln!(
        "soundloc: wrote {} channels x {:.2} s at {} Hz to {}",
        channels.len(),
        duration,
        fs,
        out.display()
    );
    Ok(())
}

fn cmd_eval(
    cli: &Cli,
    mode: Mode,
    output: Option<&std::path::Path>,
    snr_db: f64,
    distances: &[f64],
    trials: usize,
    duration: f64,
) -> Result<(), AppError> {
    let (geom_config, _) = load_geometry(cli)?;
    let fs = geom_config.fs.unwrap_or(cli.tuning.fs);
    let geom = geom_config
        .build(DEFAULT_SPEED_OF_SOUND, fs)
        .map_err(input_err)?;
    let cfg = pipeline_config(cli, fs)?;
    let seed = cli.tuning.seed;

    let mut csv = String::new();
    match mode {
        Mode::Table1 => {
            let rows =
                eval::angular_error_sweep(&geom, &cfg, snr_db, seed).map_err(processing_err)?;
            csv.push_str(
                "source,distance_m,elevation_deg,scenes,frames,detections,mean_angular_error_deg\n",
            );
            for row in rows {
                csv.push_str(&format!(
                    "simulated,{},{},{},{},{},{:.3}\n",
                    row.distance_m,
                    row.elevation_deg,
                    row.scenes,
                    row.frames,
                    row.detections,
                    row.mean_error_deg
                ));
            }
        }
        Mode::Nearfield => {
            let rows =
                eval::nearfield_rows(&geom, distances, trials, seed).map_err(processing_err)?;
            csv.push_str("source,distance_m,trials,mean_angular_error_deg\n");
            for (distance, error) in rows {
                csv.push_str(&format!("simulated,{distance},{trials},{error:.4}\n"));
            }
        }
        Mode::Bench => {
            let report = eval::bench(&geom, &cfg, duration, seed).map_err(processing_err)?;
            csv.push_str(
                "source,frames,wall_s,frames_per_s,realtime_frames_per_s,realtime_factor\n",
            );
            csv.push_str(&format!(
                "simulated,{},{:.4},{:.1},{:.2},{:.2}\n",
                report.frames,
                report.wall_s,
                report.frames_per_s,
                report.realtime_frames_per_s,
                report.realtime_factor()
            ));
        }
    }

    match output {
        Some(path) => {
            let mut file = File::create(path).map_err(input_err)?;
            file.write_all(csv.as_bytes()).map_err(processing_err)?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}
