//! Seeded synthetic fixtures: anisotropic vocabularies and trace-normalized
//! covariance matrices for benchmarks, audits, and tests.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::embeddings::{EmbeddingError, EmbeddingStore};
use crate::geometry::{GeometryError, ScaledCovariance};
use crate::rng::{domain, stream_rng};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("could not place {placed} of {requested} words at separation {min_separation}")]
    SeparationInfeasible {
        placed: usize,
        requested: usize,
        min_separation: f64,
    },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// Recipe for a seeded anisotropic vocabulary.
///
/// Each word is an axis-scaled Gaussian draw, optionally stretched by a
/// per-word radial factor drawn log-uniformly from `radial_scale_range`
/// (set `(1.0, 1.0)` to disable) — the radial spread is what gives the
/// vocabulary sparse and dense regions. When `target_median_nn` is set the
/// finished cloud is rescaled so its median nearest-neighbor distance hits
/// the target, which pins the noise-to-geometry ratio of downstream
/// experiments independently of the other knobs.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub words: usize,
    pub dim: usize,
    pub axis_stds: Vec<f64>,
    pub radial_scale_range: (f64, f64),
    pub min_separation: f64,
    pub target_median_nn: Option<f64>,
    pub seed: u64,
}

impl SynthSpec {
    fn validate(&self) -> Result<(), SynthError> {
        if self.words < 2 {
            return Err(SynthError::InvalidSpec("need at least 2 words".into()));
        }
        if self.dim == 0 {
            return Err(SynthError::InvalidSpec("dimension must be positive".into()));
        }
        if self.axis_stds.len() != self.dim {
            return Err(SynthError::InvalidSpec(format!(
                "axis_stds has {} entries for dimension {}",
                self.axis_stds.len(),
                self.dim
            )));
        }
        if !self.axis_stds.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(SynthError::InvalidSpec(
                "axis stds must be positive and finite".into(),
            ));
        }
        let (lo, hi) = self.radial_scale_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi) {
            return Err(SynthError::InvalidSpec(
                "radial scale range must satisfy 0 < lo <= hi".into(),
            ));
        }
        if !(self.min_separation.is_finite() && self.min_separation >= 0.0) {
            return Err(SynthError::InvalidSpec(
                "min separation must be nonnegative".into(),
            ));
        }
        if let Some(t) = self.target_median_nn {
            if !(t.is_finite() && t > 0.0) {
                return Err(SynthError::InvalidSpec(
                    "target median nn distance must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Axis standard deviations with variances `∝ (j+1)^-exponent`, normalized
/// to unit total variance.
pub fn power_decay_stds(dim: usize, exponent: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=dim).map(|j| (j as f64).powf(-exponent)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| (v / total).sqrt()).collect()
}

const PLACEMENT_ATTEMPTS_PER_WORD: usize = 10_000;

/// Generates the vocabulary described by `spec`, deterministically in its
/// seed. Word `i` is named `w{i:05}`.
pub fn generate_store(spec: &SynthSpec) -> Result<EmbeddingStore, SynthError> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, domain::SYNTH);
    let (lo, hi) = spec.radial_scale_range;

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(spec.words);
    let mut attempts = 0usize;
    while rows.len() < spec.words {
        if attempts >= PLACEMENT_ATTEMPTS_PER_WORD * spec.words {
            return Err(SynthError::SeparationInfeasible {
                placed: rows.len(),
                requested: spec.words,
                min_separation: spec.min_separation,
            });
        }
        attempts += 1;
        let scale = if lo == hi {
            lo
        } else {
            rng.random_range(lo.ln()..hi.ln()).exp()
        };
        let row: Vec<f64> = spec
            .axis_stds
            .iter()
            .map(|s| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g * s * scale
            })
            .collect();
        if spec.min_separation > 0.0 {
            let min_sep2 = spec.min_separation * spec.min_separation;
            let ok = rows.iter().all(|r| {
                let d2: f64 = r.iter().zip(&row).map(|(a, b)| (a - b) * (a - b)).sum();
                d2 >= min_sep2
            });
            if !ok {
                continue;
            }
        }
        rows.push(row);
    }

    if let Some(target) = spec.target_median_nn {
        let med = median_nn_distance(&rows);
        if med > 0.0 {
            let factor = target / med;
            for row in &mut rows {
                for v in row {
                    *v *= factor;
                }
            }
        }
    }

    let words: Vec<String> = (0..spec.words).map(|i| format!("w{i:05}")).collect();
    let data: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(EmbeddingStore::new(words, data, spec.dim)?)
}

fn median_nn_distance(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len();
    let mut nn = vec![f64::INFINITY; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d2: f64 = rows[i]
                .iter()
                .zip(&rows[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d2 < nn[i] {
                nn[i] = d2;
            }
            if d2 < nn[j] {
                nn[j] = d2;
            }
        }
    }
    let mut d: Vec<f64> = nn.into_iter().map(f64::sqrt).collect();
    d.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    if n % 2 == 1 {
        d[n / 2]
    } else {
        0.5 * (d[n / 2 - 1] + d[n / 2])
    }
}

/// Random positive-definite covariance with trace equal to `dim`, built from
/// a seeded random orthogonal basis and uniform eigenvalues rescaled to the
/// trace contract.
pub fn random_spd_covariance(
    dim: usize,
    seed: u64,
    floor: f64,
) -> Result<ScaledCovariance, GeometryError> {
    let mut rng = stream_rng(seed, domain::SYNTH);
    let gauss = DMatrix::<f64>::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
    let q = gauss.qr().q();
    let mut vals = DVector::<f64>::from_fn(dim, |_, _| rng.random_range(0.05..2.0));
    let sum: f64 = vals.iter().sum();
    vals *= dim as f64 / sum;
    ScaledCovariance::from_eigensystem(q, vals, floor)
}
