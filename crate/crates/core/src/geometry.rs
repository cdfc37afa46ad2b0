//! Microphone-array geometry and the far-field direction solver.
//!
//! Each pair delay pins the source direction to a cone around the pair
//! baseline: `u . x_ij = c * dt_ij`, with `x_ij` the vector from microphone
//! `i` to `j` and `u` the unit vector toward the source. Stacking the `N-1`
//! equations against microphone 0 gives a constant `(N-1) x 3` system whose
//! pseudo-inverse is precomputed once. The solution is normalized to unit
//! length, which also makes the direction insensitive to the speed of sound
//! (the rows are linear in `c`) and absorbs the near-field effect of a
//! shrunken raw norm.

use alloc::vec::Vec;

use crate::rng::Rng;
use crate::tdoa::TdoaSet;

/// Default speed of sound in m/s. Irrelevant to the normalized direction;
/// kept configurable for lag-window sizing.
pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;

/// Raw solution norms below this yield no estimate: an all-zero delay set
/// pins the zero vector, not a direction.
const DEGENERATE_NORM: f64 = 1e-6;

/// Pseudo-inverse verification bound, `pinv * diff = I` elementwise.
const PINV_CHECK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum GeometryError {
    TooFewMics {
        got: usize,
    },
    NonFinitePosition {
        index: usize,
    },
    /// The pair-difference matrix must have rank 3: microphones may not be
    /// coplanar (nor colinear or coincident).
    RankDeficient {
        rank: usize,
    },
    PseudoInverseCheck {
        max_dev: f64,
    },
    DelayCountMismatch {
        got: usize,
        want: usize,
    },
    /// Delays are (near-)zero in every pair; the least-squares solution is
    /// the zero vector and carries no direction.
    DegenerateDelays,
    NonUnitVector {
        norm: f64,
    },
    /// Closer than this to the array center, a source is inside the array
    /// for every direction.
    DistanceInsideArray {
        distance: f64,
        min_distance: f64,
    },
    ZeroTrials,
}

impl core::fmt::Display for GeometryError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::TooFewMics { got } => write!(f, "need at least 4 microphones, got {got}"),
            Self::NonFinitePosition { index } => {
                write!(f, "microphone {index} has a non-finite coordinate")
            }
            Self::RankDeficient { rank } => write!(
                f,
                "microphone difference matrix has rank {rank}, need 3 \
                 (microphones must not all lie in one plane)"
            ),
            Self::PseudoInverseCheck { max_dev } => {
                write!(
                    f,
                    "pseudo-inverse verification failed, deviation {max_dev:e}"
                )
            }
            Self::DelayCountMismatch { got, want } => {
                write!(f, "got {got} delays, geometry needs {want}")
            }
            Self::DegenerateDelays => {
                write!(f, "all delays are zero, no direction can be derived")
            }
            Self::NonUnitVector { norm } => {
                write!(f, "expected a unit vector, got norm {norm}")
            }
            Self::DistanceInsideArray {
                distance,
                min_distance,
            } => {
                write!(
                    f,
                    "distance {distance} m is inside the array (need > {min_distance} m)"
                )
            }
            Self::ZeroTrials => write!(f, "trial count must be at least 1"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for GeometryError {}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    libm::sqrt(dot(a, a))
}

pub(crate) fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Angle between two directions in degrees (inputs need not be normalized).
/// Computed from the cross/dot pair, which stays accurate for tiny angles
/// where the plain arccosine bottoms out near its rounding floor.
pub fn angle_between_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let cross = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    libm::atan2(norm(cross), dot(a, b)).to_degrees()
}

/// Microphone positions with the precomputed pair-difference system.
#[derive(Debug, Clone)]
pub struct ArrayGeometry {
    mics: Vec<[f64; 3]>,
    /// Rows `mic[i] - mic[0]` for `i` in `1..N`.
    diff: Vec<[f64; 3]>,
    /// Columns of the 3 x (N-1) pseudo-inverse.
    pinv_cols: Vec<[f64; 3]>,
    c: f64,
    fs: f64,
}

impl ArrayGeometry {
    /// Validates the positions, precomputes the difference matrix and its
    /// pseudo-inverse (normal-equations form; the rank check makes the
    /// 3 x 3 normal matrix invertible), and verifies `pinv * diff = I`.
    pub fn new(mics: Vec<[f64; 3]>, c: f64, fs: f64) -> Result<Self, GeometryError> {
        if mics.len() < 4 {
            return Err(GeometryError::TooFewMics { got: mics.len() });
        }
        for (i, m) in mics.iter().enumerate() {
            if !m.iter().all(|v| v.is_finite()) {
                return Err(GeometryError::NonFinitePosition { index: i });
            }
        }
        let diff: Vec<[f64; 3]> = mics[1..].iter().map(|&m| sub(m, mics[0])).collect();

        let rank = matrix_rank(&diff);
        if rank < 3 {
            return Err(GeometryError::RankDeficient { rank });
        }

        // AtA is symmetric 3x3; pinv = (AtA)^-1 At, stored column-wise so the
        // solve is a weighted sum of columns.
        let mut ata = [[0.0f64; 3]; 3];
        for row in &diff {
            for r in 0..3 {
                for c2 in 0..3 {
                    ata[r][c2] += row[r] * row[c2];
                }
            }
        }
        let inv = invert_3x3(&ata).ok_or(GeometryError::RankDeficient { rank })?;
        let pinv_cols: Vec<[f64; 3]> = diff
            .iter()
            .map(|row| {
                [
                    inv[0][0] * row[0] + inv[0][1] * row[1] + inv[0][2] * row[2],
                    inv[1][0] * row[0] + inv[1][1] * row[1] + inv[1][2] * row[2],
                    inv[2][0] * row[0] + inv[2][1] * row[1] + inv[2][2] * row[2],
                ]
            })
            .collect();

        // pinv * diff must reproduce the identity.
        let mut max_dev = 0.0f64;
        for r in 0..3 {
            for c2 in 0..3 {
                let v: f64 = pinv_cols.iter().zip(&diff).map(|(p, d)| p[r] * d[c2]).sum();
                let target = if r == c2 { 1.0 } else { 0.0 };
                max_dev = max_dev.max((v - target).abs());
            }
        }
        if max_dev > PINV_CHECK_TOL {
            return Err(GeometryError::PseudoInverseCheck { max_dev });
        }

        Ok(Self {
            mics,
            diff,
            pinv_cols,
            c,
            fs,
        })
    }

    /// The eight corners of an axis-aligned box of the given edge lengths,
    /// centered on the origin.
    pub fn prism_corners(dx: f64, dy: f64, dz: f64) -> Vec<[f64; 3]> {
        let mut corners = Vec::with_capacity(8);
        for &sx in &[-0.5, 0.5] {
            for &sy in &[-0.5, 0.5] {
                for &sz in &[-0.5, 0.5] {
                    corners.push([sx * dx, sy * dy, sz * dz]);
                }
            }
        }
        corners
    }

    pub fn mic_positions(&self) -> &[[f64; 3]] {
        &self.mics
    }

    pub fn n_mics(&self) -> usize {
        self.mics.len()
    }

    pub fn diff_matrix(&self) -> &[[f64; 3]] {
        &self.diff
    }

    pub fn pinv_columns(&self) -> &[[f64; 3]] {
        &self.pinv_cols
    }

    pub fn speed_of_sound(&self) -> f64 {
        self.c
    }

    pub fn sample_rate(&self) -> f64 {
        self.fs
    }

    /// Centroid of the microphone positions.
    pub fn center(&self) -> [f64; 3] {
        let mut acc = [0.0; 3];
        for m in &self.mics {
            acc = [acc[0] + m[0], acc[1] + m[1], acc[2] + m[2]];
        }
        scale(acc, 1.0 / self.mics.len() as f64)
    }

    pub fn pair_distance(&self, i: usize, j: usize) -> f64 {
        norm(sub(self.mics[j], self.mics[i]))
    }

    /// Largest inter-microphone distance.
    pub fn aperture(&self) -> f64 {
        let mut best = 0.0f64;
        for i in 0..self.mics.len() {
            for j in (i + 1)..self.mics.len() {
                best = best.max(self.pair_distance(i, j));
            }
        }
        best
    }

    /// Largest physically possible lag for a pair, in samples:
    /// `ceil(dist * fs / c)`. No valid delay falls outside this window.
    pub fn max_lag(&self, i: usize, j: usize) -> i64 {
        libm::ceil(self.pair_distance(i, j) * self.fs / self.c) as i64
    }

    /// Sources closer than this to the center are inside the array
    /// whichever way they lie (smallest half-extent of the microphone
    /// bounding box around the centroid).
    pub fn min_source_distance(&self) -> f64 {
        let center = self.center();
        let mut half = [0.0f64; 3];
        for m in &self.mics {
            let d = sub(*m, center);
            for a in 0..3 {
                half[a] = half[a].max(d[a].abs());
            }
        }
        half[0].min(half[1]).min(half[2])
    }

    /// Solves the pair-difference system for fractional delays given in
    /// samples (`delays[k]` for pair `(0, k+1)`), normalizes, and derives
    /// the angles. `score` is carried through to the estimate.
    pub fn solve_delays(
        &self,
        delays: &[f64],
        score: f64,
    ) -> Result<DirectionEstimate, GeometryError> {
        if delays.len() != self.diff.len() {
            return Err(GeometryError::DelayCountMismatch {
                got: delays.len(),
                want: self.diff.len(),
            });
        }
        let mut raw = [0.0f64; 3];
        for (col, &d) in self.pinv_cols.iter().zip(delays) {
            let rhs = self.c * d / self.fs;
            raw = [
                raw[0] + col[0] * rhs,
                raw[1] + col[1] * rhs,
                raw[2] + col[2] * rhs,
            ];
        }
        let raw_norm = norm(raw);
        if raw_norm < DEGENERATE_NORM {
            return Err(GeometryError::DegenerateDelays);
        }
        let u = scale(raw, 1.0 / raw_norm);
        let (azimuth_deg, elevation_deg) = direction_to_angles(u)?;
        Ok(DirectionEstimate {
            u,
            azimuth_deg,
            elevation_deg,
            raw_norm,
            score,
        })
    }

    /// Solves a consistent integer delay set from the peak search.
    pub fn solve_direction(&self, tdoas: &TdoaSet) -> Result<DirectionEstimate, GeometryError> {
        let delays: Vec<f64> = tdoas.delays.iter().map(|&d| d as f64).collect();
        self.solve_delays(&delays, tdoas.score)
    }
}

/// Unit direction toward the source with derived angles.
///
/// `raw_norm` is the solution norm before normalization; it dips below 1 for
/// near-field sources and is recorded for diagnostics only.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionEstimate {
    pub u: [f64; 3],
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub raw_norm: f64,
    pub score: f64,
}

/// Azimuth/elevation of a unit vector in degrees: x forward, y left, z up;
/// azimuth positive toward +y, elevation positive toward +z. At the poles
/// the azimuth degenerates to 0.
pub fn direction_to_angles(u: [f64; 3]) -> Result<(f64, f64), GeometryError> {
    let n = norm(u);
    if (n - 1.0).abs() > 1e-6 {
        return Err(GeometryError::NonUnitVector { norm: n });
    }
    let azimuth = libm::atan2(u[1], u[0]).to_degrees();
    let elevation = libm::asin(u[2].clamp(-1.0, 1.0)).to_degrees();
    Ok((azimuth, elevation))
}

/// Mean angular error of the solver for sources on a sphere of each given
/// distance around the array center, using exact spherical-wavefront
/// propagation delays. With `quantize` the per-microphone delays are rounded
/// to whole samples first, modeling the lag resolution of the correlator.
///
/// Directions are sampled uniformly, `trials` per distance, deterministic in
/// `seed`; each distance reuses the same directions so the curve is
/// comparable point to point.
pub fn nearfield_error_curve(
    geom: &ArrayGeometry,
    distances: &[f64],
    trials: usize,
    quantize: bool,
    seed: u64,
) -> Result<Vec<f64>, GeometryError> {
    if trials == 0 {
        return Err(GeometryError::ZeroTrials);
    }
    let min_distance = geom.min_source_distance();
    for &d in distances {
        if d.is_nan() || d <= min_distance {
            return Err(GeometryError::DistanceInsideArray {
                distance: d,
                min_distance,
            });
        }
    }
    let center = geom.center();
    let directions: Vec<[f64; 3]> = {
        let mut rng = Rng::new(seed);
        (0..trials).map(|_| rng.unit_vector()).collect()
    };

    let mut means = Vec::with_capacity(distances.len());
    for &distance in distances {
        let mut total = 0.0;
        for dir in &directions {
            let source = [
                center[0] + dir[0] * distance,
                center[1] + dir[1] * distance,
                center[2] + dir[2] * distance,
            ];
            // Spherical wavefront: per-mic arrival time in samples.
            let arrivals: Vec<f64> = geom
                .mic_positions()
                .iter()
                .map(|&m| norm(sub(source, m)) / geom.speed_of_sound() * geom.sample_rate())
                .collect();
            let delays: Vec<f64> = if quantize {
                arrivals[1..]
                    .iter()
                    .map(|&t| libm::round(arrivals[0]) - libm::round(t))
                    .collect()
            } else {
                arrivals[1..].iter().map(|&t| arrivals[0] - t).collect()
            };
            let estimate = geom.solve_delays(&delays, 0.0)?;
            total += angle_between_deg(estimate.u, *dir);
        }
        means.push(total / trials as f64);
    }
    Ok(means)
}

/// Rank of an n x 3 matrix by Gaussian elimination with partial pivoting.
fn matrix_rank(rows: &[[f64; 3]]) -> usize {
    let mut m: Vec<[f64; 3]> = rows.to_vec();
    let scale_ref = m
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |acc, &v| acc.max(v.abs()));
    if scale_ref == 0.0 {
        return 0;
    }
    let tol = 1e-10 * scale_ref;
    let mut rank = 0;
    for col in 0..3 {
        // Find the pivot row for this column.
        let pivot = (rank..m.len()).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()));
        let Some(pivot) = pivot else { break };
        if m[pivot][col].abs() <= tol {
            continue;
        }
        m.swap(rank, pivot);
        for r in (rank + 1)..m.len() {
            let f = m[r][col] / m[rank][col];
            let pivot_row = m[rank];
            for (c, &p) in pivot_row.iter().enumerate().skip(col) {
                m[r][c] -= f * p;
            }
        }
        rank += 1;
        if rank == m.len() {
            break;
        }
    }
    rank
}

/// Inverse of a 3x3 matrix via the adjugate; `None` when singular.
fn invert_3x3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let inv_det = 1.0 / det;
    Some([
        [
            (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det,
        ],
        [
            (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det,
        ],
        [
            (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det,
        ],
    ])
}
