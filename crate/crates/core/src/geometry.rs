//! Vector norms and the regularized covariance metric.
//!
//! The central object is the trace-normalized covariance of a vocabulary's
//! embedding rows: the sample covariance rescaled so its trace equals the
//! embedding dimension, which keeps elliptical and spherical noise at the
//! same overall scale. Blending it with the identity as `A = λΣ + (1-λ)I`
//! interpolates between the Euclidean norm (λ=0) and the Mahalanobis norm
//! (λ=1); the blend's square root shapes noise draws and its inverse defines
//! the norm `‖x‖ = √(xᵀ A⁻¹ x)` that calibrates the privacy guarantee.
//!
//! All factorizations go through one symmetric eigendecomposition of Σ, so
//! the norm, the sampler transform, and the eigenvalue sandwich bounds are
//! guaranteed to agree with each other.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::EmbeddingStore;

/// Eigenvalues of Σ below this are raised to it before any factorization.
///
/// Real embedding covariances can be numerically rank-deficient; without a
/// floor the λ=1 metric would be singular. Configurable per run.
pub const DEFAULT_EIGENVALUE_FLOOR: f64 = 1e-8;

/// Tolerance for the eigenvalue sandwich check, relative to the upper bound.
pub const SANDWICH_TOLERANCE: f64 = 1e-9;

/// Version string of the covariance sidecar format.
pub const COVARIANCE_FORMAT: &str = "MDPCOV1";

const COVARIANCE_MAGIC: &[u8; 8] = b"MDPCOV1\n";

/// Orthonormality tolerance for eigenvector matrices (max |QᵀQ - I| entry).
const ORTHONORMALITY_TOLERANCE: f64 = 1e-10;

/// Accepted relative deviation of an eigensystem's trace from the dimension.
/// Twice the invariant tolerance to admit systems whose stored eigenvalues
/// already include floor clamping.
const TRACE_TOLERANCE: f64 = 2e-8;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("vector has non-finite entries")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("covariance is degenerate: trace of the sample covariance is {trace}")]
    DegenerateCovariance { trace: f64 },
    #[error("lambda must lie in [0, 1], got {0}")]
    InvalidLambda(f64),
    #[error("eigenvalue floor must be positive and finite, got {0}")]
    InvalidFloor(f64),
    #[error("eigenvector matrix is not orthonormal (max deviation {deviation:.3e})")]
    NotOrthonormal { deviation: f64 },
    #[error("eigensystem trace {trace} deviates from dimension {dim} beyond tolerance")]
    TraceMismatch { trace: f64, dim: usize },
    #[error(
        "norm sandwich violated: lower {lower}, value {value}, upper {upper} (tolerance {tolerance:.1e})"
    )]
    SandwichViolation {
        lower: f64,
        value: f64,
        upper: f64,
        tolerance: f64,
    },
    #[error("covariance sidecar i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("covariance sidecar is not in {COVARIANCE_FORMAT} format")]
    BadSidecar,
    #[error("covariance sidecar header: {0}")]
    BadHeader(#[from] serde_json::Error),
}

/// Euclidean norm `√(xᵀx)`.
pub fn euclidean_norm(x: &DVector<f64>) -> Result<f64, GeometryError> {
    if !x.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    Ok(x.norm())
}

/// Trace-normalized covariance of an embedding vocabulary with its
/// symmetric eigendecomposition.
///
/// Invariants held after construction:
/// * `trace(sigma) == dim` within 1e-8 relative,
/// * `sigma == Q diag(ξ) Qᵀ` exactly by construction (sigma is the
///   reconstruction from the clamped eigensystem),
/// * eigenvalues are descending and at least the configured floor.
#[derive(Debug, Clone)]
pub struct ScaledCovariance {
    sigma: DMatrix<f64>,
    dim: usize,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    min_eigenvalue: f64,
    floor: f64,
    clamped: usize,
}

impl ScaledCovariance {
    /// Computes the scaled covariance of the store's embedding rows.
    ///
    /// The mean-centered sample covariance `S` (divisor `|V|-1`; any divisor
    /// cancels in the scaling) is rescaled to `Σ = dim·S / trace(S)`, then
    /// eigendecomposed; eigenvalues below `floor` are clamped and the stored
    /// matrix is the reconstruction from the clamped system.
    pub fn from_store(store: &EmbeddingStore, floor: f64) -> Result<Self, GeometryError> {
        let n = store.len();
        let m = store.dim();
        let mut x = DMatrix::<f64>::zeros(n, m);
        for (i, row) in store.rows().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                x[(i, j)] = v;
            }
        }
        let mean = x.row_mean();
        for mut row in x.row_iter_mut() {
            row -= &mean;
        }
        let s = x.tr_mul(&x) / (n - 1) as f64;
        let trace = s.trace();
        if !(trace.is_finite() && trace > 0.0) {
            return Err(GeometryError::DegenerateCovariance { trace });
        }
        let mut sigma = s * (m as f64 / trace);
        symmetrize(&mut sigma);

        let eigen = sigma.symmetric_eigen();
        Self::from_eigensystem(eigen.eigenvectors, eigen.eigenvalues, floor)
    }

    /// Builds a covariance from an explicit eigensystem.
    ///
    /// Columns of `eigenvectors` must be orthonormal and the eigenvalue sum
    /// must equal the dimension (the trace normalization contract). Used by
    /// sidecar loading and synthetic test matrices.
    pub fn from_eigensystem(
        eigenvectors: DMatrix<f64>,
        eigenvalues: DVector<f64>,
        floor: f64,
    ) -> Result<Self, GeometryError> {
        if !(floor.is_finite() && floor > 0.0) {
            return Err(GeometryError::InvalidFloor(floor));
        }
        let dim = eigenvalues.len();
        if eigenvectors.nrows() != dim || eigenvectors.ncols() != dim {
            return Err(GeometryError::DimensionMismatch {
                expected: dim,
                got: eigenvectors.nrows().max(eigenvectors.ncols()),
            });
        }
        if !eigenvalues.iter().all(|v| v.is_finite()) || !eigenvectors.iter().all(|v| v.is_finite())
        {
            return Err(GeometryError::NonFinite);
        }
        let deviation = orthonormality_deviation(&eigenvectors);
        if deviation > ORTHONORMALITY_TOLERANCE {
            return Err(GeometryError::NotOrthonormal { deviation });
        }
        let trace: f64 = eigenvalues.iter().sum();
        if (trace - dim as f64).abs() > TRACE_TOLERANCE * dim as f64 {
            return Err(GeometryError::TraceMismatch { trace, dim });
        }

        // Canonical order and orientation: descending eigenvalues, each
        // eigenvector's largest-magnitude component positive. Makes the
        // sidecar byte-stable across reruns.
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| {
            eigenvalues[b]
                .partial_cmp(&eigenvalues[a])
                .expect("finite eigenvalues")
                .then(a.cmp(&b))
        });
        let mut q = DMatrix::<f64>::zeros(dim, dim);
        let mut vals = DVector::<f64>::zeros(dim);
        let mut clamped = 0usize;
        for (dst, &src) in order.iter().enumerate() {
            let mut col = eigenvectors.column(src).clone_owned();
            let pivot = col
                .iter()
                .enumerate()
                .max_by(|(ai, av), (bi, bv)| {
                    av.abs()
                        .partial_cmp(&bv.abs())
                        .expect("finite eigenvector")
                        .then(bi.cmp(ai))
                })
                .map(|(i, _)| i)
                .unwrap_or(0);
            if col[pivot] < 0.0 {
                col.neg_mut();
            }
            q.set_column(dst, &col);
            let v = eigenvalues[src];
            if v < floor {
                clamped += 1;
                vals[dst] = floor;
            } else {
                vals[dst] = v;
            }
        }
        if clamped > 0 {
            log::warn!("{clamped} covariance eigenvalue(s) below {floor:.1e} clamped to the floor");
        }
        let mut sigma = &q * DMatrix::from_diagonal(&vals) * q.transpose();
        symmetrize(&mut sigma);
        let min_eigenvalue = vals[dim - 1];
        Ok(Self {
            sigma,
            dim,
            eigenvalues: vals,
            eigenvectors: q,
            min_eigenvalue,
            floor,
            clamped,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Eigenvalues in descending order, floor-clamped.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Orthonormal eigenvector matrix; column i pairs with eigenvalue i.
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// Smallest eigenvalue after clamping; the `c` of the sandwich bounds.
    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Number of eigenvalues raised to the floor during construction.
    pub fn clamped_count(&self) -> usize {
        self.clamped
    }

    pub fn trace(&self) -> f64 {
        self.sigma.trace()
    }

    /// Writes the sidecar: magic, JSON header, then eigenvalues and the
    /// eigenvector matrix (row-major) as little-endian f64.
    pub fn save(&self, path: &Path) -> Result<(), GeometryError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(COVARIANCE_MAGIC)?;
        let header = SidecarHeader {
            format: COVARIANCE_FORMAT.to_string(),
            dim: self.dim,
            floor: self.floor,
            clamped: self.clamped,
        };
        let header_bytes = serde_json::to_vec(&header)?;
        w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
        w.write_all(&header_bytes)?;
        for v in self.eigenvalues.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        for i in 0..self.dim {
            for j in 0..self.dim {
                w.write_all(&self.eigenvectors[(i, j)].to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a sidecar written by [`ScaledCovariance::save`].
    pub fn load(path: &Path) -> Result<Self, GeometryError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != COVARIANCE_MAGIC {
            return Err(GeometryError::BadSidecar);
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut header_bytes = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut header_bytes)?;
        let header: SidecarHeader = serde_json::from_slice(&header_bytes)?;
        if header.format != COVARIANCE_FORMAT {
            return Err(GeometryError::BadSidecar);
        }
        let dim = header.dim;
        let read_f64 = |r: &mut BufReader<File>| -> Result<f64, GeometryError> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let mut vals = DVector::<f64>::zeros(dim);
        for i in 0..dim {
            vals[i] = read_f64(&mut r)?;
        }
        let mut q = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                q[(i, j)] = read_f64(&mut r)?;
            }
        }
        Self::from_eigensystem(q, vals, header.floor)
    }
}

#[derive(Serialize, Deserialize)]
struct SidecarHeader {
    format: String,
    dim: usize,
    floor: f64,
    clamped: usize,
}

/// The blend `A = λΣ + (1-λ)I` with its square-root and inverse factors.
///
/// At λ=0 both factors are exactly the identity, so all downstream paths
/// reduce bit-for-bit to their spherical counterparts.
#[derive(Debug, Clone)]
pub struct RegularizedMetric {
    cov: Arc<ScaledCovariance>,
    lambda: f64,
    /// Eigenvalues of A, `λξᵢ + 1 - λ`, in the covariance's order.
    reg_eigenvalues: DVector<f64>,
    sqrt_factor: DMatrix<f64>,
    inv_factor: DMatrix<f64>,
}

impl RegularizedMetric {
    pub fn new(cov: Arc<ScaledCovariance>, lambda: f64) -> Result<Self, GeometryError> {
        if !(lambda.is_finite() && (0.0..=1.0).contains(&lambda)) {
            return Err(GeometryError::InvalidLambda(lambda));
        }
        let dim = cov.dim();
        let reg_eigenvalues = cov.eigenvalues().map(|xi| lambda * xi + 1.0 - lambda);
        let (sqrt_factor, inv_factor) = if lambda == 0.0 {
            (DMatrix::identity(dim, dim), DMatrix::identity(dim, dim))
        } else {
            let q = cov.eigenvectors();
            let sqrt_diag = DMatrix::from_diagonal(&reg_eigenvalues.map(f64::sqrt));
            let inv_diag = DMatrix::from_diagonal(&reg_eigenvalues.map(f64::recip));
            let mut sqrt_factor = q * sqrt_diag * q.transpose();
            let mut inv_factor = q * inv_diag * q.transpose();
            symmetrize(&mut sqrt_factor);
            symmetrize(&mut inv_factor);
            (sqrt_factor, inv_factor)
        };
        Ok(Self {
            cov,
            lambda,
            reg_eigenvalues,
            sqrt_factor,
            inv_factor,
        })
    }

    pub fn covariance(&self) -> &Arc<ScaledCovariance> {
        &self.cov
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.cov.dim()
    }

    /// `A^{1/2}`; maps unit directions onto the noise ellipsoid.
    pub fn sqrt_factor(&self) -> &DMatrix<f64> {
        &self.sqrt_factor
    }

    /// `A⁻¹`; the quadratic form of the norm.
    pub fn inv_factor(&self) -> &DMatrix<f64> {
        &self.inv_factor
    }

    /// Eigenvalues of `A` in the covariance's (descending ξ) order.
    pub fn reg_eigenvalues(&self) -> &DVector<f64> {
        &self.reg_eigenvalues
    }

    /// The regularized Mahalanobis norm `√(xᵀ A⁻¹ x)`.
    pub fn norm(&self, x: &DVector<f64>) -> Result<f64, GeometryError> {
        if x.len() != self.dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let quad = x.dot(&(&self.inv_factor * x));
        Ok(quad.max(0.0).sqrt())
    }

    /// Eigenvalue sandwich around the norm:
    /// `‖x‖₂/√(λ·dim + 1-λ) ≤ ‖x‖ ≤ ‖x‖₂/√(λ·c + 1-λ)`
    /// with `c` the smallest (clamped) eigenvalue of Σ. A violation beyond
    /// [`SANDWICH_TOLERANCE`] signals a factorization bug and is an error.
    pub fn sandwich_bounds(&self, x: &DVector<f64>) -> Result<SandwichBounds, GeometryError> {
        let value = self.norm(x)?;
        let l2 = x.norm();
        let m = self.dim() as f64;
        let c = self.cov.min_eigenvalue();
        let lower = l2 / (self.lambda * m + 1.0 - self.lambda).sqrt();
        let upper = l2 / (self.lambda * c + 1.0 - self.lambda).sqrt();
        let tolerance = SANDWICH_TOLERANCE * upper.max(1.0);
        if value < lower - tolerance || value > upper + tolerance {
            return Err(GeometryError::SandwichViolation {
                lower,
                value,
                upper,
                tolerance,
            });
        }
        Ok(SandwichBounds {
            lower,
            value,
            upper,
        })
    }
}

/// Result of [`RegularizedMetric::sandwich_bounds`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SandwichBounds {
    pub lower: f64,
    pub value: f64,
    pub upper: f64,
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

fn orthonormality_deviation(q: &DMatrix<f64>) -> f64 {
    let gram = q.tr_mul(q);
    let mut worst = 0.0f64;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}
