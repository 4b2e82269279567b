//! Fitting and applying maps between two embedding spaces.
//!
//! Embeddings are rows, so a map `M` of shape `d_A × d_B` sends a source row
//! `x` to `x·M`. Neither fit uses an intercept, and the rotation fit does not
//! center the point sets: both spaces live on the unit sphere and the
//! rotation is about the origin.

mod io;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SVD};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::store::EmbeddingSet;

pub use io::{load_map, read_map, save_map, write_map};

/// Singular values below this fraction of the largest are dropped from the
/// least-squares pseudoinverse.
pub const PINV_RCOND: f64 = 1e-10;

/// Mapped vectors shorter than this have no usable direction.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Linear,
    Rotation,
    Identity,
}

impl MapKind {
    pub const ALL: [MapKind; 3] = [MapKind::Linear, MapKind::Rotation, MapKind::Identity];

    pub fn as_str(self) -> &'static str {
        match self {
            MapKind::Linear => "linear",
            MapKind::Rotation => "rotation",
            MapKind::Identity => "identity",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            MapKind::Linear => 0,
            MapKind::Rotation => 1,
            MapKind::Identity => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(MapKind::Linear),
            1 => Some(MapKind::Rotation),
            2 => Some(MapKind::Identity),
            _ => None,
        }
    }
}

impl fmt::Display for MapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" => Ok(MapKind::Linear),
            "rotation" => Ok(MapKind::Rotation),
            "identity" => Ok(MapKind::Identity),
            other => Err(Error::Argument(format!("unknown map kind {other:?}"))),
        }
    }
}

/// A `d_A × d_B` map from a source model's space into a target model's space.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingMatrix<T: Real> {
    kind: MapKind,
    source_model_id: String,
    target_model_id: String,
    matrix: DMatrix<T>,
    fit_sample_count: u64,
    fit_seed: Option<u64>,
}

impl<T: Real> MappingMatrix<T> {
    /// Wraps `matrix`, checking the invariants that `kind` implies.
    pub fn new(
        kind: MapKind,
        matrix: DMatrix<T>,
        source_model_id: impl Into<String>,
        target_model_id: impl Into<String>,
    ) -> Result<Self> {
        check_invariants(kind, &matrix).map_err(Error::Data)?;
        Ok(Self {
            kind,
            source_model_id: source_model_id.into(),
            target_model_id: target_model_id.into(),
            matrix,
            fit_sample_count: 0,
            fit_seed: None,
        })
    }

    pub fn with_fit_info(mut self, sample_count: u64, seed: Option<u64>) -> Self {
        self.fit_sample_count = sample_count;
        self.fit_seed = seed;
        self
    }

    pub fn with_model_ids(mut self, source: impl Into<String>, target: impl Into<String>) -> Self {
        self.source_model_id = source.into();
        self.target_model_id = target.into();
        self
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    pub fn source_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn target_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn source_model_id(&self) -> &str {
        &self.source_model_id
    }

    pub fn target_model_id(&self) -> &str {
        &self.target_model_id
    }

    pub fn fit_sample_count(&self) -> u64 {
        self.fit_sample_count
    }

    pub fn fit_seed(&self) -> Option<u64> {
        self.fit_seed
    }
}

pub(crate) fn check_invariants<T: Real>(kind: MapKind, m: &DMatrix<T>) -> Result<(), String> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err("map matrix is empty".into());
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err("map matrix has non-finite entries".into());
    }
    match kind {
        MapKind::Linear => Ok(()),
        MapKind::Identity => {
            if !m.is_square() {
                return Err(format!("identity map must be square, got {}x{}", m.nrows(), m.ncols()));
            }
            if *m != DMatrix::identity(m.nrows(), m.ncols()) {
                return Err("identity map differs from the identity matrix".into());
            }
            Ok(())
        }
        MapKind::Rotation => {
            if !m.is_square() {
                return Err(format!("rotation must be square, got {}x{}", m.nrows(), m.ncols()));
            }
            let err = orthogonality_error(m);
            if err > T::ORTHO_TOL {
                return Err(format!("rotation is not orthogonal (max |MᵀM - I| = {err:e})"));
            }
            let det = m.determinant().as_f64();
            if (det - 1.0).abs() > T::ORTHO_TOL {
                return Err(format!("rotation has determinant {det}, expected +1"));
            }
            Ok(())
        }
    }
}

/// Largest entry of `|MᵀM − I|`.
pub fn orthogonality_error<T: Real>(m: &DMatrix<T>) -> f64 {
    let gram = m.tr_mul(m);
    let mut worst = 0.0f64;
    for j in 0..gram.ncols() {
        for i in 0..gram.nrows() {
            let expect = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)].as_f64() - expect).abs());
        }
    }
    worst
}

/// Diagnostics for one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub kind: MapKind,
    /// Number of paired rows the map was fit on.
    pub m: usize,
    /// Root mean square of the per-row distance `‖x·M − y‖`.
    pub residual_rms: f64,
    /// Largest over smallest retained singular value of the design matrix (linear fits).
    pub condition_diagnostic: Option<f64>,
}

fn check_pair_shapes<T: Real>(source: &DMatrix<T>, target: &DMatrix<T>) -> Result<()> {
    if source.nrows() != target.nrows() {
        return Err(Error::Dimension(format!(
            "{} source rows but {} target rows",
            source.nrows(),
            target.nrows()
        )));
    }
    if source.nrows() == 0 {
        return Err(Error::Argument("cannot fit a map on zero pairs".into()));
    }
    if source.iter().chain(target.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Data("fit input contains non-finite values".into()));
    }
    Ok(())
}

fn residual_rms<T: Real>(source: &DMatrix<T>, target: &DMatrix<T>, m: &DMatrix<T>) -> f64 {
    let diff = source * m - target;
    (diff.norm_squared().as_f64() / source.nrows() as f64).sqrt()
}

/// Least-squares map minimizing `Σ ‖xᵢ·M − yᵢ‖²`.
///
/// Solved through the SVD pseudoinverse of the source rows, so rank-deficient
/// problems (fewer pairs than source dimensions) get the minimum-Frobenius-norm
/// solution.
pub fn fit_linear<T: Real>(
    source: &DMatrix<T>,
    target: &DMatrix<T>,
) -> Result<(MappingMatrix<T>, FitReport)> {
    check_pair_shapes(source, target)?;
    let svd = SVD::new(source.clone(), true, true);
    let (u, v_t) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
    let s = &svd.singular_values;
    let s_max = s.iter().copied().fold(T::zero(), |a, b| if b > a { b } else { a });
    let cutoff = s_max * T::lit(PINV_RCOND);

    // M = V Σ⁺ Uᵀ Y
    let mut projected = u.tr_mul(target);
    let mut s_min_kept = s_max;
    for (i, &sv) in s.iter().enumerate() {
        if sv > cutoff && sv > T::zero() {
            projected.row_mut(i).scale_mut(T::one() / sv);
            if sv < s_min_kept {
                s_min_kept = sv;
            }
        } else {
            projected.row_mut(i).fill(T::zero());
        }
    }
    let matrix = v_t.tr_mul(&projected);
    let report = FitReport {
        kind: MapKind::Linear,
        m: source.nrows(),
        residual_rms: residual_rms(source, target, &matrix),
        condition_diagnostic: Some(if s_max > T::zero() {
            (s_max / s_min_kept).as_f64()
        } else {
            f64::INFINITY
        }),
    };
    let map = MappingMatrix::new(MapKind::Linear, matrix, "", "")?
        .with_fit_info(source.nrows() as u64, None);
    Ok((map, report))
}

/// Rotation (proper orthogonal map, `det = +1`) minimizing `Σ ‖xᵢ·M − yᵢ‖²`.
///
/// Takes the SVD `XᵀY = U Σ V_h` of the uncentered cross-covariance and
/// recomposes `U I' V_h` with `I' = diag(1, …, 1, det(U)·det(V_h))`, flipping
/// the direction of least variance when the unconstrained optimum would be a
/// reflection.
pub fn fit_rotation<T: Real>(
    source: &DMatrix<T>,
    target: &DMatrix<T>,
) -> Result<(MappingMatrix<T>, FitReport)> {
    if source.ncols() != target.ncols() {
        return Err(Error::Dimension(format!(
            "rotation needs equal dimensions, got {} and {}; use a linear map",
            source.ncols(),
            target.ncols()
        )));
    }
    check_pair_shapes(source, target)?;
    let cross = source.tr_mul(target);
    let svd = SVD::new(cross, true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let sign = det_sign(&u) * det_sign(&v_t);
    let mut u_flipped = u;
    let last = u_flipped.ncols() - 1;
    u_flipped.column_mut(last).scale_mut(sign);
    let matrix = u_flipped * v_t;

    let report = FitReport {
        kind: MapKind::Rotation,
        m: source.nrows(),
        residual_rms: residual_rms(source, target, &matrix),
        condition_diagnostic: None,
    };
    let map = MappingMatrix::new(MapKind::Rotation, matrix, "", "")?
        .with_fit_info(source.nrows() as u64, None);
    Ok((map, report))
}

/// Sign of the determinant of an orthogonal matrix.
fn det_sign<T: Real>(m: &DMatrix<T>) -> T {
    if m.determinant() < T::zero() {
        -T::one()
    } else {
        T::one()
    }
}

/// The `d × d` identity, used as the no-fit baseline.
pub fn identity_map<T: Real>(d: usize) -> Result<MappingMatrix<T>> {
    if d == 0 {
        return Err(Error::Argument("identity map needs d >= 1".into()));
    }
    MappingMatrix::new(MapKind::Identity, DMatrix::identity(d, d), "", "")
}

/// Fits a map of the requested kind. Identity maps ignore the data apart from
/// its dimensions and report `m = 0`.
pub fn fit<T: Real>(
    kind: MapKind,
    source: &DMatrix<T>,
    target: &DMatrix<T>,
) -> Result<(MappingMatrix<T>, FitReport)> {
    match kind {
        MapKind::Linear => fit_linear(source, target),
        MapKind::Rotation => fit_rotation(source, target),
        MapKind::Identity => {
            if source.ncols() != target.ncols() {
                return Err(Error::Dimension(format!(
                    "identity map needs equal dimensions, got {} and {}",
                    source.ncols(),
                    target.ncols()
                )));
            }
            let map = identity_map(source.ncols())?;
            let residual = if source.nrows() == target.nrows() && source.nrows() > 0 {
                residual_rms(source, target, map.matrix())
            } else {
                0.0
            };
            Ok((map, FitReport { kind, m: 0, residual_rms: residual, condition_diagnostic: None }))
        }
    }
}

/// Result of pushing a set through a map.
#[derive(Debug, Clone)]
pub struct MappedSet<T: Real> {
    pub set: EmbeddingSet<T>,
    /// Media whose mapped vector was too short to normalize; absent from `set`.
    pub excluded: Vec<String>,
}

const APPLY_CHUNK: usize = 256;

/// Maps every row `v` of `set` to `normalize(v·M)`.
pub fn apply_map<T: Real>(map: &MappingMatrix<T>, set: &EmbeddingSet<T>) -> Result<MappedSet<T>> {
    if set.dim() != map.source_dim() {
        return Err(Error::Dimension(format!(
            "set has dimension {}, map expects {}",
            set.dim(),
            map.source_dim()
        )));
    }
    let d_out = map.target_dim();
    let floor = T::lit(DEGENERATE_NORM);
    let n = set.len();
    let starts: Vec<usize> = (0..n).step_by(APPLY_CHUNK).collect();
    let chunks: Vec<Vec<Option<Vec<T>>>> = starts
        .par_iter()
        .map(|&start| {
            let rows = APPLY_CHUNK.min(n - start);
            let block = DMatrix::from_fn(rows, set.dim(), |i, j| set.row(start + i)[j]);
            let mapped = block * map.matrix();
            (0..rows)
                .map(|i| {
                    let mut v: Vec<T> = mapped.row(i).iter().copied().collect();
                    let len = crate::scalar::normalize_in_place(&mut v, floor);
                    (len >= floor).then_some(v)
                })
                .collect()
        })
        .collect();

    let mut out = EmbeddingSet::new(map.target_model_id(), d_out)?;
    let mut excluded = Vec::new();
    for (id, v) in set.ids().iter().zip(chunks.into_iter().flatten()) {
        match v {
            Some(v) => out.push(id.clone(), &v)?,
            None => excluded.push(id.clone()),
        }
    }
    let out = if out.is_empty() { out } else { out.into_normalized()? };
    Ok(MappedSet { set: out, excluded })
}
