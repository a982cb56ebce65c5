//! Metric differentially private word-embedding perturbation.
//!
//! Words are perturbed by adding elliptical noise in embedding space —
//! calibrated by the regularized covariance norm `√(xᵀ{λΣ+(1-λ)I}⁻¹x)` of
//! the vocabulary's trace-normalized covariance Σ — and projecting back to
//! the Euclidean-nearest vocabulary word. λ interpolates from the spherical
//! multivariate-Laplace baseline (λ=0) to fully covariance-shaped noise
//! (λ=1). The crate bundles the mechanism, a statistics harness for the
//! unchanged-count/distinct-substitution privacy statistics, and a
//! Monte-Carlo auditor that checks the advertised likelihood-ratio bound
//! empirically.

pub mod config;
pub mod embeddings;
pub mod geometry;
pub mod mechanism;
pub mod noise;
pub mod privstats;
pub mod rng;
pub mod synth;

pub use config::RunConfig;
pub use embeddings::{
    corpus_profile, CorpusProfile, EmbeddingFormat, EmbeddingStore, NearestNeighborIndex,
};
pub use geometry::{euclidean_norm, RegularizedMetric, ScaledCovariance, DEFAULT_EIGENVALUE_FLOOR};
pub use mechanism::{
    CorpusOptions, CorpusSummary, Mechanism, OovPolicy, PerturbationConfig, TokenOutcome,
};
pub use noise::{log_unnormalized_density, NoiseSample, NoiseSampler};
pub use privstats::{
    audit_dp_ratio, compare_mechanisms, run_privacy_experiment, CiVerdict, DpRatioAudit,
    PrivacyStatsReport,
};
