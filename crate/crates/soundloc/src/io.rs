//! File formats: multichannel WAV, array geometry configs, detection
//! records, and CSV tables.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use soundloc_core::geometry::{ArrayGeometry, GeometryError};
use soundloc_core::pipeline::Detection;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Wav {
        path: String,
        #[source]
        source: hound::Error,
    },
    #[error("{path}: need at least 2 channels, got {channels}")]
    TooFewChannels { path: String, channels: usize },
    #[error("{path}: unsupported encoding {bits}-bit {format}")]
    UnsupportedEncoding {
        path: String,
        bits: u16,
        format: &'static str,
    },
    #[error("{path}:{line}: {message}")]
    GeometryParse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Geometry {
        path: String,
        #[source]
        source: GeometryError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("record line {line}: {source}")]
    Record {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Reads a PCM or float WAV into per-channel samples normalized to
/// `[-1, 1]`, plus the sample rate. Accepts 16/24/32-bit integer and 32-bit
/// float encodings with at least two channels.
pub fn read_multichannel_wav(path: impl AsRef<Path>) -> Result<(Vec<Vec<f64>>, u32), IoError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let wav_err = |source| IoError::Wav {
        path: display.clone(),
        source,
    };

    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels < 2 {
        return Err(IoError::TooFewChannels {
            path: display,
            channels: spec.channels as usize,
        });
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(wav_err)?,
        (hound::SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = 1.0 / (1i64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<Result<_, _>>()
                .map_err(wav_err)?
        }
        (format, bits) => {
            return Err(IoError::UnsupportedEncoding {
                path: display,
                bits,
                format: match format {
                    hound::SampleFormat::Float => "float",
                    hound::SampleFormat::Int => "integer",
                },
            })
        }
    };

    let n_channels = spec.channels as usize;
    let frames = interleaved.len() / n_channels;
    let mut channels = vec![Vec::with_capacity(frames); n_channels];
    for frame in interleaved.chunks_exact(n_channels) {
        for (ch, &sample) in channels.iter_mut().zip(frame) {
            ch.push(sample);
        }
    }
    Ok((channels, spec.sample_rate))
}

/// Writes per-channel samples as interleaved 32-bit float WAV.
pub fn write_multichannel_wav(
    path: impl AsRef<Path>,
    channels: &[Vec<f64>],
    sample_rate: u32,
) -> Result<(), IoError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let wav_err = |source| IoError::Wav {
        path: display.clone(),
        source,
    };

    let spec = hound::WavSpec {
        channels: channels.len() as u16,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    let frames = channels.iter().map(Vec::len).min().unwrap_or(0);
    for i in 0..frames {
        for ch in channels {
            writer.write_sample(ch[i] as f32).map_err(wav_err)?;
        }
    }
    writer.finalize().map_err(wav_err)?;
    Ok(())
}

/// Parsed geometry config: microphone positions in meters plus optional
/// speed-of-sound and sample-rate overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryConfig {
    pub mics: Vec<[f64; 3]>,
    pub c: Option<f64>,
    pub fs: Option<f64>,
}

impl GeometryConfig {
    /// Builds the array, applying the file's overrides over the defaults.
    pub fn build(&self, default_c: f64, fs: f64) -> Result<ArrayGeometry, GeometryError> {
        ArrayGeometry::new(
            self.mics.clone(),
            self.c.unwrap_or(default_c),
            self.fs.unwrap_or(fs),
        )
    }
}

/// Reads a geometry config: `mic = x, y, z` lines (meters), optional
/// `c = ...` and `fs = ...`, `#` comments. Position validity (count, rank)
/// is checked here so bad geometry fails before any audio is touched.
///
/// ```text
/// # eight microphones on a 0.50 x 0.40 x 0.36 m prism
/// c = 343.0
/// mic = -0.25, -0.20, -0.18
/// mic = -0.25, -0.20,  0.18
/// ...
/// ```
pub fn read_geometry_config(path: impl AsRef<Path>) -> Result<GeometryConfig, IoError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path)?;

    let mut mics = Vec::new();
    let mut c = None;
    let mut fs = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| IoError::GeometryParse {
            path: display.clone(),
            line: idx + 1,
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(format!("expected `key = value`, got {line:?}")))?;
        let value = value.trim();
        match key.trim() {
            "mic" => {
                let coords: Vec<f64> = value
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| parse_err(format!("bad coordinate: {e}")))?;
                if coords.len() != 3 {
                    return Err(parse_err(format!(
                        "mic needs 3 coordinates, got {}",
                        coords.len()
                    )));
                }
                mics.push([coords[0], coords[1], coords[2]]);
            }
            "c" => {
                c = Some(
                    value
                        .parse()
                        .map_err(|e| parse_err(format!("bad c: {e}")))?,
                );
            }
            "fs" => {
                fs = Some(
                    value
                        .parse()
                        .map_err(|e| parse_err(format!("bad fs: {e}")))?,
                );
            }
            other => return Err(parse_err(format!("unknown key {other:?}"))),
        }
    }

    let config = GeometryConfig { mics, c, fs };
    // Trial build surfaces count and rank problems now; the sample rate
    // does not affect either check.
    config
        .build(soundloc_core::geometry::DEFAULT_SPEED_OF_SOUND, 48_000.0)
        .map_err(|source| IoError::Geometry {
            path: display,
            source,
        })?;
    Ok(config)
}

/// One detection, as emitted on the line-delimited output stream. Field for
/// field reconstructible into the in-memory estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub time_s: f64,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub u: [f64; 3],
    pub raw_norm: f64,
    pub score: f64,
    pub tdoas: Vec<i64>,
}

impl From<&Detection> for DetectionRecord {
    fn from(d: &Detection) -> Self {
        Self {
            time_s: d.time_s,
            azimuth_deg: d.estimate.azimuth_deg,
            elevation_deg: d.estimate.elevation_deg,
            u: d.estimate.u,
            raw_norm: d.estimate.raw_norm,
            score: d.estimate.score,
            tdoas: d.tdoas.clone(),
        }
    }
}

/// Writes one JSON record per line.
pub fn write_detections<W: Write>(
    mut out: W,
    detections: impl IntoIterator<Item = DetectionRecord>,
) -> Result<(), IoError> {
    for record in detections {
        let json = serde_json::to_string(&record).expect("record serialization is infallible");
        writeln!(out, "{json}")?;
    }
    Ok(())
}

/// Reads a line-delimited detection stream back.
pub fn read_detections<R: BufRead>(input: R) -> Result<Vec<DetectionRecord>, IoError> {
    let mut records = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line).map_err(|source| IoError::Record {
                line: idx + 1,
                source,
            })?,
        );
    }
    Ok(records)
}
