//! Monte-Carlo audit of the mechanism's likelihood-ratio bound.
//!
//! For a small vocabulary the full output distribution of every input word
//! is estimated by brute repetition, and every ordered word pair `(w, w')`
//! is checked against `log P̂{M(w)=ŵ} - log P̂{M(w')=ŵ} ≤ ε·d(w,w')` with
//! `d` the metric's norm of the embedding difference. Cells with fewer than
//! [`MIN_CELL_HITS`] observations on either side are excluded (their ratio
//! estimates are too noisy to test) and a pair is flagged only when its
//! excess exceeds three combined standard errors of the log-ratio estimate,
//! so a correct mechanism is flagged with negligible probability while a
//! miscalibrated one (the halved-noise fault hook) lands far outside the
//! band.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::StatsError;
use crate::mechanism::Mechanism;
use crate::rng::{derive_stream, domain, stream_rng};

/// Audit tractability guard: largest vocabulary.
pub const MAX_AUDIT_WORDS: usize = 50;
/// Audit tractability guard: largest embedding dimension.
pub const MAX_AUDIT_DIM: usize = 4;
/// Minimum trials per word for meaningful ratio estimates.
pub const MIN_AUDIT_TRIALS: u64 = 100_000;
/// Minimum observations on both sides of a ratio before it is tested.
pub const MIN_CELL_HITS: u64 = 500;

/// Trials per parallel work unit; fixed so results never depend on the
/// worker count.
const AUDIT_BLOCK: u64 = 65_536;

/// One flagged ratio violation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioViolation {
    pub input: String,
    pub reference: String,
    pub output: String,
    pub log_ratio: f64,
    pub bound: f64,
    pub excess: f64,
    pub std_err: f64,
}

/// Audit result for one `(ε, λ)` setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpRatioAudit {
    pub epsilon: f64,
    pub lambda: f64,
    pub trials: u64,
    pub words: Vec<String>,
    /// Output counts: `counts[w][ŵ]` over `trials` runs of `M(w)`.
    pub counts: Vec<Vec<u64>>,
    /// Ordered ratio cells that met the hit threshold and were tested.
    pub evaluated: usize,
    /// Ratio cells skipped because one side had fewer than the threshold.
    pub excluded: usize,
    /// Largest observed `log-ratio - bound`, over evaluated cells.
    pub max_excess: Option<f64>,
    /// Combined standard error at the maximizing cell.
    pub max_excess_std_err: Option<f64>,
    pub violations: Vec<RatioViolation>,
}

impl DpRatioAudit {
    pub fn flagged(&self) -> bool {
        !self.violations.is_empty()
    }
}

/// Estimates every output distribution of `mech` and tests the ratio bound.
///
/// Deterministic in `(mech config seed, seed)`; trials are partitioned into
/// fixed-size blocks whose substreams derive from `(word, block)`.
pub fn audit_dp_ratio(
    mech: &Mechanism,
    trials: u64,
    seed: u64,
) -> Result<DpRatioAudit, StatsError> {
    let store = mech.index().store();
    let vocab = store.len();
    if vocab > MAX_AUDIT_WORDS {
        return Err(StatsError::AuditGuard(format!(
            "vocabulary size {vocab} exceeds {MAX_AUDIT_WORDS}"
        )));
    }
    if store.dim() > MAX_AUDIT_DIM {
        return Err(StatsError::AuditGuard(format!(
            "embedding dimension {} exceeds {MAX_AUDIT_DIM}",
            store.dim()
        )));
    }
    if trials < MIN_AUDIT_TRIALS {
        return Err(StatsError::AuditGuard(format!(
            "trials {trials} below minimum {MIN_AUDIT_TRIALS}"
        )));
    }

    let blocks = trials.div_ceil(AUDIT_BLOCK);
    let tasks: Vec<(usize, u64)> = (0..vocab)
        .flat_map(|w| (0..blocks).map(move |b| (w, b)))
        .collect();
    let partials: Vec<(usize, Vec<u64>)> = tasks
        .par_iter()
        .map(|&(wid, block)| {
            let start = block * AUDIT_BLOCK;
            let len = AUDIT_BLOCK.min(trials - start);
            let stream = derive_stream(&[domain::AUDIT, seed, wid as u64, block]);
            let mut rng = stream_rng(mech.config().seed, stream);
            let mut local = vec![0u64; vocab];
            for _ in 0..len {
                local[mech.perturb_id_with_rng(wid, &mut rng)] += 1;
            }
            (wid, local)
        })
        .collect();
    let mut counts = vec![vec![0u64; vocab]; vocab];
    for (wid, local) in partials {
        for (o, c) in local.into_iter().enumerate() {
            counts[wid][o] += c;
        }
    }

    // metric distances between embedding rows
    let metric = mech.metric();
    let mut distance = vec![vec![0.0f64; vocab]; vocab];
    #[allow(clippy::needless_range_loop)]
    for i in 0..vocab {
        for j in 0..vocab {
            if i == j {
                continue;
            }
            let diff = nalgebra::DVector::from_iterator(
                store.dim(),
                store
                    .vector(i)
                    .iter()
                    .zip(store.vector(j))
                    .map(|(a, b)| a - b),
            );
            distance[i][j] = metric.norm(&diff).expect("store rows are finite");
        }
    }

    let n = trials as f64;
    let mut evaluated = 0usize;
    let mut excluded = 0usize;
    let mut max_excess: Option<f64> = None;
    let mut max_excess_std_err = None;
    let mut violations = Vec::new();
    #[allow(clippy::needless_range_loop)]
    for w in 0..vocab {
        for w_ref in 0..vocab {
            if w == w_ref {
                continue;
            }
            for out in 0..vocab {
                let c1 = counts[w][out];
                let c2 = counts[w_ref][out];
                if c1 == 0 && c2 == 0 {
                    continue;
                }
                if c1 < MIN_CELL_HITS || c2 < MIN_CELL_HITS {
                    excluded += 1;
                    continue;
                }
                evaluated += 1;
                let p1 = c1 as f64 / n;
                let p2 = c2 as f64 / n;
                let log_ratio = (p1 / p2).ln();
                let bound = mech.config().epsilon * distance[w][w_ref];
                let excess = log_ratio - bound;
                let std_err = ((1.0 - p1) / (n * p1) + (1.0 - p2) / (n * p2)).sqrt();
                if max_excess.is_none_or(|m| excess > m) {
                    max_excess = Some(excess);
                    max_excess_std_err = Some(std_err);
                }
                if excess > 3.0 * std_err {
                    violations.push(RatioViolation {
                        input: store.word(w).to_string(),
                        reference: store.word(w_ref).to_string(),
                        output: store.word(out).to_string(),
                        log_ratio,
                        bound,
                        excess,
                        std_err,
                    });
                }
            }
        }
    }
    violations.sort_by(|a, b| b.excess.partial_cmp(&a.excess).expect("finite excess"));

    Ok(DpRatioAudit {
        epsilon: mech.config().epsilon,
        lambda: mech.config().lambda,
        trials,
        words: store.words().to_vec(),
        counts,
        evaluated,
        excluded,
        max_excess,
        max_excess_std_err,
        violations,
    })
}
