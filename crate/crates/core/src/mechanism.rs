//! Word and string perturbation: add elliptical noise in embedding space,
//! project to the Euclidean-nearest vocabulary word.
//!
//! Every substitution is fully determined by `(seed, stream id)`; strings
//! derive one substream per `(record ordinal, token position)`, so corpora
//! can be perturbed by any number of workers in any order with byte-stable
//! output. At λ=0 the mechanism is the spherical multivariate-Laplace
//! baseline on the same RNG stream.

use std::io::{BufRead, Write};
use std::sync::Arc;

use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::NearestNeighborIndex;
use crate::geometry::RegularizedMetric;
use crate::noise::draw_noise;
use crate::rng::{derive_stream, domain, stream_rng};

#[derive(Debug, Error)]
pub enum MechanismError {
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("lambda must lie in [0, 1], got {0}")]
    InvalidLambda(f64),
    #[error("config lambda {config} does not match metric lambda {metric}")]
    LambdaMismatch { config: f64, metric: f64 },
    #[error("metric dimension {metric} does not match embedding dimension {index}")]
    DimensionMismatch { metric: usize, index: usize },
    #[error("out-of-vocabulary token {0:?}")]
    OutOfVocabulary(String),
    #[error("line {line}: missing label/text tab separator")]
    MissingTab { line: usize },
    #[error("noise scale must be positive and finite, got {0}")]
    InvalidNoiseScale(f64),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// What to do with tokens that are not in the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OovPolicy {
    /// Emit the token unchanged and count it.
    #[default]
    PassThrough,
    /// Remove the token from the output.
    Drop,
    /// Fail the record.
    Error,
}

/// Everything that determines the mechanism's output distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    pub epsilon: f64,
    pub lambda: f64,
    pub seed: u64,
    pub oov_policy: OovPolicy,
    /// Lowercase tokens before vocabulary lookup.
    pub lowercase: bool,
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<(), MechanismError> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(MechanismError::InvalidEpsilon(self.epsilon));
        }
        if !(self.lambda.is_finite() && (0.0..=1.0).contains(&self.lambda)) {
            return Err(MechanismError::InvalidLambda(self.lambda));
        }
        Ok(())
    }
}

/// Result of perturbing one token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenOutcome {
    /// In-vocabulary token replaced by a vocabulary word (possibly itself).
    Replaced(String),
    /// Out-of-vocabulary token kept verbatim.
    PassedThrough(String),
    /// Out-of-vocabulary token removed.
    Dropped,
}

/// A perturbed token sequence with its per-token tallies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerturbedRecord {
    pub tokens: Vec<String>,
    pub perturbed: u64,
    pub passed_through: u64,
    pub dropped: u64,
}

/// Options for corpus perturbation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CorpusOptions {
    /// Records are `label TAB text`; the label is copied through untouched.
    pub tsv: bool,
    /// Abort on the first malformed record instead of counting it.
    pub strict: bool,
}

/// Corpus perturbation summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub records: u64,
    pub tokens_perturbed: u64,
    pub tokens_passed_through: u64,
    pub tokens_dropped: u64,
    pub parse_failures: u64,
}

/// Records per parallel batch in corpus perturbation. Fixed so that output
/// never depends on worker count.
const CORPUS_CHUNK: usize = 4096;

/// The perturbation mechanism: noise metric, exact NN projection, config.
///
/// Immutable and cheaply cloneable; safe to share across workers.
#[derive(Debug, Clone)]
pub struct Mechanism {
    index: Arc<NearestNeighborIndex>,
    metric: Arc<RegularizedMetric>,
    config: PerturbationConfig,
    /// Multiplies sampled noise before projection. 1.0 in normal operation;
    /// the audit's fault-injection self-test sets 0.5 to verify that a
    /// miscalibrated mechanism is actually flagged.
    noise_scale: f64,
}

impl Mechanism {
    pub fn new(
        index: Arc<NearestNeighborIndex>,
        metric: Arc<RegularizedMetric>,
        config: PerturbationConfig,
    ) -> Result<Self, MechanismError> {
        config.validate()?;
        if config.lambda != metric.lambda() {
            return Err(MechanismError::LambdaMismatch {
                config: config.lambda,
                metric: metric.lambda(),
            });
        }
        if metric.dim() != index.store().dim() {
            return Err(MechanismError::DimensionMismatch {
                metric: metric.dim(),
                index: index.store().dim(),
            });
        }
        Ok(Self {
            index,
            metric,
            config,
            noise_scale: 1.0,
        })
    }

    /// Fault-injection hook: scale sampled noise by `scale`, deliberately
    /// breaking the privacy calibration. Used by the audit self-test.
    pub fn with_noise_scale(mut self, scale: f64) -> Result<Self, MechanismError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(MechanismError::InvalidNoiseScale(scale));
        }
        self.noise_scale = scale;
        Ok(self)
    }

    pub fn index(&self) -> &Arc<NearestNeighborIndex> {
        &self.index
    }

    pub fn metric(&self) -> &Arc<RegularizedMetric> {
        &self.metric
    }

    pub fn config(&self) -> &PerturbationConfig {
        &self.config
    }

    /// Core step for an in-vocabulary id: sample noise with the caller's
    /// generator, add it to the embedding, return the nearest word's id.
    pub fn perturb_id_with_rng(&self, word_id: usize, rng: &mut ChaCha12Rng) -> usize {
        let sample = draw_noise(&self.metric, self.config.epsilon, rng);
        let row = self.index.store().vector(word_id);
        let query: Vec<f64> = row
            .iter()
            .zip(sample.z.iter())
            .map(|(base, dz)| base + self.noise_scale * dz)
            .collect();
        self.index.nearest_id(&query).0
    }

    /// Perturbs one token on substream `stream_id` of the config seed.
    ///
    /// The token is lowercased first when the config says so; an
    /// out-of-vocabulary token goes through the OOV policy.
    pub fn perturb_word(&self, word: &str, stream_id: u64) -> Result<TokenOutcome, MechanismError> {
        let token = self.normalize(word);
        match self.index.store().word_id(&token) {
            Some(id) => {
                let mut rng = stream_rng(self.config.seed, stream_id);
                let out = self.perturb_id_with_rng(id, &mut rng);
                Ok(TokenOutcome::Replaced(
                    self.index.store().word(out).to_string(),
                ))
            }
            None => match self.config.oov_policy {
                OovPolicy::PassThrough => Ok(TokenOutcome::PassedThrough(token.into_owned())),
                OovPolicy::Drop => Ok(TokenOutcome::Dropped),
                OovPolicy::Error => Err(MechanismError::OutOfVocabulary(token.into_owned())),
            },
        }
    }

    fn normalize<'a>(&self, word: &'a str) -> std::borrow::Cow<'a, str> {
        if self.config.lowercase {
            std::borrow::Cow::Owned(word.to_lowercase())
        } else {
            std::borrow::Cow::Borrowed(word)
        }
    }

    /// Perturbs a token sequence, one independent substream per position,
    /// derived from `(record_id, position)`.
    pub fn perturb_string(
        &self,
        tokens: &[&str],
        record_id: u64,
    ) -> Result<PerturbedRecord, MechanismError> {
        let mut out = PerturbedRecord {
            tokens: Vec::with_capacity(tokens.len()),
            perturbed: 0,
            passed_through: 0,
            dropped: 0,
        };
        for (position, token) in tokens.iter().enumerate() {
            let stream = derive_stream(&[domain::STRING, record_id, position as u64]);
            match self.perturb_word(token, stream)? {
                TokenOutcome::Replaced(w) => {
                    out.perturbed += 1;
                    out.tokens.push(w);
                }
                TokenOutcome::PassedThrough(w) => {
                    out.passed_through += 1;
                    out.tokens.push(w);
                }
                TokenOutcome::Dropped => out.dropped += 1,
            }
        }
        Ok(out)
    }

    /// Perturbs a line-per-record corpus, whitespace-tokenized, writing
    /// records in input order. Record ordinals index the RNG substreams, so
    /// parallel execution cannot change the output.
    pub fn perturb_corpus(
        &self,
        reader: impl BufRead,
        mut writer: impl Write,
        options: CorpusOptions,
    ) -> Result<CorpusSummary, MechanismError> {
        let mut summary = CorpusSummary::default();
        let mut lines = reader.lines();
        let mut record_id: u64 = 0;
        loop {
            let mut chunk = Vec::with_capacity(CORPUS_CHUNK);
            for line in lines.by_ref() {
                chunk.push(line?);
                if chunk.len() == CORPUS_CHUNK {
                    break;
                }
            }
            if chunk.is_empty() {
                break;
            }
            let base = record_id;
            let results: Vec<Result<(String, RecordTally), MechanismError>> = chunk
                .par_iter()
                .enumerate()
                .map(|(i, line)| self.perturb_record(line, base + i as u64, options))
                .collect();
            for result in results {
                match result {
                    Ok((line, tally)) => {
                        writeln!(writer, "{line}")?;
                        summary.records += 1;
                        summary.tokens_perturbed += tally.perturbed;
                        summary.tokens_passed_through += tally.passed_through;
                        summary.tokens_dropped += tally.dropped;
                        summary.parse_failures += tally.parse_failures;
                    }
                    Err(e) => return Err(e),
                }
            }
            record_id += chunk.len() as u64;
        }
        writer.flush()?;
        Ok(summary)
    }

    fn perturb_record(
        &self,
        line: &str,
        record_id: u64,
        options: CorpusOptions,
    ) -> Result<(String, RecordTally), MechanismError> {
        let line = line.trim_end_matches('\r');
        let (label, text) = if options.tsv {
            match line.split_once('\t') {
                Some((label, text)) => (Some(label), text),
                None => {
                    if options.strict {
                        return Err(MechanismError::MissingTab {
                            line: record_id as usize + 1,
                        });
                    }
                    // malformed record: copy through verbatim, count it
                    return Ok((
                        line.to_string(),
                        RecordTally {
                            parse_failures: 1,
                            ..RecordTally::default()
                        },
                    ));
                }
            }
        } else {
            (None, line)
        };
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let record = self.perturb_string(&tokens, record_id)?;
        let body = record.tokens.join(" ");
        let out = match label {
            Some(label) => format!("{label}\t{body}"),
            None => body,
        };
        Ok((
            out,
            RecordTally {
                perturbed: record.perturbed,
                passed_through: record.passed_through,
                dropped: record.dropped,
                parse_failures: 0,
            },
        ))
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct RecordTally {
    perturbed: u64,
    passed_through: u64,
    dropped: u64,
    parse_failures: u64,
}
