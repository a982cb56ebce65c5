//! Privacy statistics over repeated mechanism runs.
//!
//! For each word and each `(ε, λ)` grid cell the harness runs the mechanism
//! `R` times on independent substreams and tallies `N_w` (runs that returned
//! the word unchanged; lower is more private) and `S_w` (distinct outputs
//! observed; higher is more private). Summaries follow the reporting
//! convention of the mean ± std tables: 95% confidence intervals are
//! `mean ± 1.96·std/√R` and mechanisms compare by CI disjointness.

mod audit;
mod io;

pub use audit::{
    audit_dp_ratio, DpRatioAudit, RatioViolation, MAX_AUDIT_DIM, MAX_AUDIT_WORDS, MIN_AUDIT_TRIALS,
    MIN_CELL_HITS,
};
pub use io::{
    emit_report, load_json, write_json, write_raw_counts_csv, write_summary_csv, ReportFormat,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mechanism::Mechanism;
use crate::rng::{derive_stream, domain, stream_rng};

/// Version of the serialized report schema.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("word set is empty")]
    EmptyWords,
    #[error("word {0:?} is not in the vocabulary")]
    WordNotInVocabulary(String),
    #[error("repetitions must be at least 1")]
    InvalidRepetitions,
    #[error("mechanism factory failed: {0}")]
    Factory(#[source] Box<dyn std::error::Error + Send + Sync>),
    #[error("count identity violated for word {word:?}: n_w={n_w}, s_w={s_w}, R={reps}")]
    CountIdentity {
        word: String,
        n_w: u32,
        s_w: u32,
        reps: u32,
    },
    #[error("no cell for epsilon={epsilon}, lambda={lambda}")]
    MissingCell { epsilon: f64, lambda: f64 },
    #[error("audit guard: {0}")]
    AuditGuard(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Per-word counts for one `(ε, λ)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCounts {
    pub epsilon: f64,
    pub lambda: f64,
    /// Unchanged-output counts, indexed like the report's word list.
    pub n_w: Vec<u32>,
    /// Distinct-output counts, same indexing.
    pub s_w: Vec<u32>,
}

/// Raw counts for a full experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyStatsReport {
    pub schema_version: u32,
    pub epsilons: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub repetitions: u32,
    pub words: Vec<String>,
    /// Cells in epsilon-major order: index = ε-index · |λ grid| + λ-index.
    pub cells: Vec<CellCounts>,
}

impl PrivacyStatsReport {
    pub fn find_cell(&self, epsilon: f64, lambda: f64) -> Option<&CellCounts> {
        self.cells
            .iter()
            .find(|c| c.epsilon == epsilon && c.lambda == lambda)
    }

    pub fn cell_summary(&self, cell: &CellCounts) -> CellSummary {
        CellSummary {
            n_w: summarize(&cell.n_w, self.repetitions),
            s_w: summarize(&cell.s_w, self.repetitions),
        }
    }
}

/// Mean, spread, CI, and percentile summary of one statistic across words.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    pub mean: f64,
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p5: f64,
    pub p50: f64,
    pub p95: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub n_w: StatSummary,
    pub s_w: StatSummary,
}

/// CI-disjointness verdict between two cells for one statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiVerdict {
    ALower,
    BLower,
    Overlapping,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MechanismComparison {
    pub n_w: CiVerdict,
    pub s_w: CiVerdict,
}

/// Runs the full `(ε, λ, word, repetition)` grid.
///
/// `factory` builds the mechanism for a grid cell; all mechanisms are
/// expected to share the vocabulary and the seed. Each repetition draws from
/// the substream `(ε-index, λ-index, vocabulary id, repetition)` under the
/// given experiment `seed`, making every cell reproducible in isolation and
/// the whole grid independent of scheduling. Duplicate grid entries are
/// collapsed with a warning.
pub fn run_privacy_experiment<F>(
    factory: F,
    words: &[String],
    epsilons: &[f64],
    lambdas: &[f64],
    repetitions: u32,
    seed: u64,
) -> Result<PrivacyStatsReport, StatsError>
where
    F: Fn(f64, f64) -> Result<Mechanism, Box<dyn std::error::Error + Send + Sync>>,
{
    if repetitions < 1 {
        return Err(StatsError::InvalidRepetitions);
    }
    if words.is_empty() {
        return Err(StatsError::EmptyWords);
    }
    let epsilons = dedup_grid(epsilons, "epsilon");
    let lambdas = dedup_grid(lambdas, "lambda");

    let mut cells = Vec::with_capacity(epsilons.len() * lambdas.len());
    for (ei, &epsilon) in epsilons.iter().enumerate() {
        for (li, &lambda) in lambdas.iter().enumerate() {
            let mech = factory(epsilon, lambda).map_err(StatsError::Factory)?;
            let store = mech.index().store();
            let ids: Vec<usize> = words
                .iter()
                .map(|w| {
                    store
                        .word_id(w)
                        .ok_or_else(|| StatsError::WordNotInVocabulary(w.clone()))
                })
                .collect::<Result<_, _>>()?;

            let counts: Vec<(u32, u32)> = ids
                .par_iter()
                .map(|&wid| {
                    let mut n_w = 0u32;
                    let mut outputs = Vec::with_capacity(repetitions as usize);
                    for rep in 0..repetitions {
                        let stream = derive_stream(&[
                            domain::STATS,
                            seed,
                            ei as u64,
                            li as u64,
                            wid as u64,
                            rep as u64,
                        ]);
                        let mut rng = stream_rng(mech.config().seed, stream);
                        let out = mech.perturb_id_with_rng(wid, &mut rng);
                        if out == wid {
                            n_w += 1;
                        }
                        outputs.push(out);
                    }
                    outputs.sort_unstable();
                    outputs.dedup();
                    (n_w, outputs.len() as u32)
                })
                .collect();

            let mut n_w = Vec::with_capacity(words.len());
            let mut s_w = Vec::with_capacity(words.len());
            for (word, &(n, s)) in words.iter().zip(&counts) {
                let identities_hold = n <= repetitions
                    && (1..=repetitions).contains(&s)
                    && (n != repetitions || s == 1)
                    && s <= repetitions - n + 1;
                if !identities_hold {
                    return Err(StatsError::CountIdentity {
                        word: word.clone(),
                        n_w: n,
                        s_w: s,
                        reps: repetitions,
                    });
                }
                n_w.push(n);
                s_w.push(s);
            }
            cells.push(CellCounts {
                epsilon,
                lambda,
                n_w,
                s_w,
            });
        }
    }

    Ok(PrivacyStatsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        epsilons,
        lambdas,
        repetitions,
        words: words.to_vec(),
        cells,
    })
}

/// CI-disjointness comparison of the cells at `(eps, lambda_a)` and
/// `(eps, lambda_b)`, per statistic.
pub fn compare_mechanisms(
    report: &PrivacyStatsReport,
    eps: f64,
    lambda_a: f64,
    lambda_b: f64,
) -> Result<MechanismComparison, StatsError> {
    let cell = |lambda: f64| {
        report
            .find_cell(eps, lambda)
            .ok_or(StatsError::MissingCell {
                epsilon: eps,
                lambda,
            })
    };
    let a = report.cell_summary(cell(lambda_a)?);
    let b = report.cell_summary(cell(lambda_b)?);
    Ok(MechanismComparison {
        n_w: ci_verdict(a.n_w, b.n_w),
        s_w: ci_verdict(a.s_w, b.s_w),
    })
}

fn ci_verdict(a: StatSummary, b: StatSummary) -> CiVerdict {
    if a.ci_high < b.ci_low {
        CiVerdict::ALower
    } else if b.ci_high < a.ci_low {
        CiVerdict::BLower
    } else {
        CiVerdict::Overlapping
    }
}

fn dedup_grid(values: &[f64], name: &str) -> Vec<f64> {
    let mut seen = Vec::new();
    for &v in values {
        if seen.iter().any(|s: &f64| s.to_bits() == v.to_bits()) {
            log::warn!("duplicate {name} grid entry {v} collapsed");
        } else {
            seen.push(v);
        }
    }
    seen
}

fn summarize(counts: &[u32], repetitions: u32) -> StatSummary {
    let n = counts.len();
    let values: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let half = 1.96 * std / (repetitions as f64).sqrt();
    let mut sorted = values;
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite counts"));
    StatSummary {
        mean,
        std,
        ci_low: mean - half,
        ci_high: mean + half,
        p5: percentile(&sorted, 5.0),
        p50: percentile(&sorted, 50.0),
        p95: percentile(&sorted, 95.0),
    }
}

/// Percentile by linear interpolation between closest ranks.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}
