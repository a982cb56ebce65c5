//! Command-line surface: covariance construction, noise sampling, corpus
//! perturbation, privacy statistics, and the ratio audit, driven by a TOML
//! config with full flag overrides.
//!
//! Exit codes: 0 success, 1 runtime/data errors (including flagged audit
//! violations), 2 usage/config errors.

use std::collections::HashSet;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use metricdp::config::{ConfigError, RunConfig};
use metricdp::embeddings::{EmbeddingFormat, EmbeddingStore, NearestNeighborIndex};
use metricdp::geometry::{RegularizedMetric, ScaledCovariance, COVARIANCE_FORMAT};
use metricdp::mechanism::{CorpusOptions, Mechanism, OovPolicy, PerturbationConfig};
use metricdp::noise::NoiseSampler;
use metricdp::privstats::{
    audit_dp_ratio, compare_mechanisms, emit_report, CiVerdict, DpRatioAudit, ReportFormat,
    StatsError, REPORT_SCHEMA_VERSION,
};
use metricdp::rng::{derive_stream, domain, stream_rng, RNG_SCHEME};
use metricdp::synth::{generate_store, SynthSpec};

fn long_version() -> String {
    format!(
        "{} (rng {RNG_SCHEME}, covariance {COVARIANCE_FORMAT}, report-schema {REPORT_SCHEMA_VERSION})",
        env!("CARGO_PKG_VERSION")
    )
}

#[derive(Parser)]
#[command(
    name = "metricdp",
    about = "Metric-DP word embedding perturbation with covariance-calibrated elliptical noise",
    version = long_version()
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    /// Worker threads for parallel sections (default: logical cores).
    /// Outputs are identical for every thread count.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

/// Config-file fields exposed as flags; flags win over the file.
#[derive(Args, Debug)]
struct Overrides {
    /// TOML run configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,
    /// Embedding file to load the vocabulary from.
    #[arg(long = "embedding", global = true, value_name = "FILE")]
    embedding_path: Option<PathBuf>,
    #[arg(long = "format", global = true, value_enum)]
    embedding_format: Option<FormatArg>,
    /// Corpus file whose tokens restrict the vocabulary; repeatable.
    #[arg(long = "vocab", global = true, value_name = "FILE")]
    vocab_paths: Vec<PathBuf>,
    /// Comma-separated epsilon grid, e.g. `1,5,10,20,40`.
    #[arg(long, global = true, value_delimiter = ',', value_name = "E,..")]
    epsilon_grid: Option<Vec<f64>>,
    /// Comma-separated lambda grid, e.g. `0,0.25,0.5,0.75,1`.
    #[arg(long, global = true, value_delimiter = ',', value_name = "L,..")]
    lambda_grid: Option<Vec<f64>>,
    #[arg(long, global = true)]
    repetitions: Option<u32>,
    #[arg(long, global = true, value_enum)]
    oov_policy: Option<OovPolicyArg>,
    /// Lowercase tokens before vocabulary lookup (`true`/`false`).
    #[arg(long, global = true, value_name = "BOOL")]
    lowercase: Option<bool>,
    #[arg(long, global = true, value_name = "F")]
    eigenvalue_floor: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    GloveText,
    Word2vecText,
}

impl From<FormatArg> for EmbeddingFormat {
    fn from(value: FormatArg) -> Self {
        match value {
            FormatArg::GloveText => EmbeddingFormat::GloveText,
            FormatArg::Word2vecText => EmbeddingFormat::Word2vecText,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OovPolicyArg {
    PassThrough,
    Drop,
    Error,
}

impl From<OovPolicyArg> for OovPolicy {
    fn from(value: OovPolicyArg) -> Self {
        match value {
            OovPolicyArg::PassThrough => OovPolicy::PassThrough,
            OovPolicyArg::Drop => OovPolicy::Drop,
            OovPolicyArg::Error => OovPolicy::Error,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compute the scaled covariance of the vocabulary and write its sidecar.
    Cov,
    /// Profile the vocabulary's nearest-neighbor distance distribution.
    Profile,
    /// Emit noise samples as CSV (`z_1..z_m,radius`).
    Sample {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 10.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Covariance sidecar to reuse; computed from the embeddings if absent.
        #[arg(long, value_name = "FILE")]
        covariance: Option<PathBuf>,
    },
    /// Perturb a line-per-record corpus.
    Perturb {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Output path (default: `<output-dir>/perturbed.txt`).
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 10.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Records are `label TAB text`; labels pass through untouched.
        #[arg(long)]
        tsv: bool,
        /// Fail on the first malformed record instead of counting it.
        #[arg(long)]
        strict: bool,
        /// Summary JSON path (default: `<output-dir>/perturb-summary.json`).
        #[arg(long, value_name = "FILE")]
        summary: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        covariance: Option<PathBuf>,
    },
    /// Run the (epsilon, lambda) grid of unchanged/distinct-output statistics.
    Stats {
        /// Run on a seeded random subset of the vocabulary instead of all
        /// words; the subset derives from the config seed.
        #[arg(long, value_name = "N")]
        word_sample: Option<usize>,
        #[arg(long, value_name = "FILE")]
        covariance: Option<PathBuf>,
    },
    /// Audit the likelihood-ratio bound on a small vocabulary.
    Audit {
        #[arg(long, default_value_t = 1_000_000)]
        trials: u64,
        /// Words in the generated synthetic vocabulary (ignored with --embedding).
        #[arg(long, default_value_t = 20)]
        synth_words: usize,
        /// Dimension of the generated synthetic vocabulary.
        #[arg(long, default_value_t = 2)]
        dim: usize,
        /// Self-test hook: halve the noise and expect the audit to flag it.
        #[arg(long)]
        inject_fault: bool,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            CliError::Runtime(_) => ExitCode::from(1),
        }
    }

    fn usage(e: impl std::fmt::Display) -> Self {
        CliError::Usage(e.to_string())
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        // may fail if a pool already exists (tests); the default pool is fine then
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let cfg = effective_config(&cli.overrides)?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(CliError::runtime)?;
    cfg.save(&cfg.output_dir.join("effective-config.toml"))
        .map_err(CliError::runtime)?;

    match cli.command {
        Command::Cov => cmd_cov(&cfg),
        Command::Profile => cmd_profile(&cfg),
        Command::Sample {
            count,
            epsilon,
            lambda,
            covariance,
        } => cmd_sample(&cfg, count, epsilon, lambda, covariance.as_deref()),
        Command::Perturb {
            input,
            output,
            epsilon,
            lambda,
            tsv,
            strict,
            summary,
            covariance,
        } => cmd_perturb(
            &cfg,
            &input,
            output.as_deref(),
            epsilon,
            lambda,
            CorpusOptions { tsv, strict },
            summary.as_deref(),
            covariance.as_deref(),
        ),
        Command::Stats {
            word_sample,
            covariance,
        } => cmd_stats(&cfg, word_sample, covariance.as_deref()),
        Command::Audit {
            trials,
            synth_words,
            dim,
            inject_fault,
        } => cmd_audit(&cfg, trials, synth_words, dim, inject_fault),
    }
}

fn effective_config(overrides: &Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = match &overrides.config {
        Some(path) => RunConfig::load(path).map_err(|e| match e {
            ConfigError::Parse(_) | ConfigError::Invalid(_) => CliError::usage(e),
            other => CliError::runtime(other),
        })?,
        None => RunConfig::default(),
    };
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &overrides.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(path) = &overrides.embedding_path {
        cfg.embedding_path = Some(path.clone());
    }
    if let Some(format) = overrides.embedding_format {
        cfg.embedding_format = format.into();
    }
    if !overrides.vocab_paths.is_empty() {
        cfg.vocab_paths = overrides.vocab_paths.clone();
    }
    if let Some(grid) = &overrides.epsilon_grid {
        cfg.epsilon_grid = grid.clone();
    }
    if let Some(grid) = &overrides.lambda_grid {
        cfg.lambda_grid = grid.clone();
    }
    if let Some(reps) = overrides.repetitions {
        cfg.repetitions = reps;
    }
    if let Some(policy) = overrides.oov_policy {
        cfg.oov_policy = policy.into();
    }
    if let Some(lowercase) = overrides.lowercase {
        cfg.lowercase = lowercase;
    }
    if let Some(floor) = overrides.eigenvalue_floor {
        cfg.eigenvalue_floor = floor;
    }
    cfg.validate().map_err(CliError::usage)?;
    Ok(cfg)
}

fn vocab_filter(cfg: &RunConfig) -> Result<Option<HashSet<String>>, CliError> {
    if cfg.vocab_paths.is_empty() {
        return Ok(None);
    }
    let mut filter = HashSet::new();
    for path in &cfg.vocab_paths {
        let file = std::fs::File::open(path)
            .map_err(|e| CliError::runtime(format!("vocab file {}: {e}", path.display())))?;
        for line in std::io::BufReader::new(file).lines() {
            let line = line.map_err(CliError::runtime)?;
            for token in line.split_whitespace() {
                if cfg.lowercase {
                    filter.insert(token.to_lowercase());
                } else {
                    filter.insert(token.to_string());
                }
            }
        }
    }
    Ok(Some(filter))
}

fn load_store(cfg: &RunConfig) -> Result<Arc<EmbeddingStore>, CliError> {
    let path = cfg
        .embedding_path
        .as_ref()
        .ok_or_else(|| CliError::Usage("no embedding file configured (--embedding)".into()))?;
    let filter = vocab_filter(cfg)?;
    let store = EmbeddingStore::load(path, cfg.embedding_format, filter.as_ref())
        .map_err(|e| CliError::runtime(format!("embeddings {}: {e}", path.display())))?;
    Ok(Arc::new(store))
}

fn load_or_compute_cov(
    cfg: &RunConfig,
    store: &EmbeddingStore,
    sidecar: Option<&Path>,
) -> Result<Arc<ScaledCovariance>, CliError> {
    let cov = match sidecar {
        Some(path) => ScaledCovariance::load(path)
            .map_err(|e| CliError::runtime(format!("covariance {}: {e}", path.display())))?,
        None => {
            ScaledCovariance::from_store(store, cfg.eigenvalue_floor).map_err(CliError::runtime)?
        }
    };
    if cov.dim() != store.dim() {
        return Err(CliError::Usage(format!(
            "covariance dimension {} does not match embeddings {}",
            cov.dim(),
            store.dim()
        )));
    }
    Ok(Arc::new(cov))
}

fn build_mechanism(
    cfg: &RunConfig,
    index: Arc<NearestNeighborIndex>,
    metric: Arc<RegularizedMetric>,
    epsilon: f64,
) -> Result<Mechanism, CliError> {
    Mechanism::new(
        index,
        metric.clone(),
        PerturbationConfig {
            epsilon,
            lambda: metric.lambda(),
            seed: cfg.seed,
            oov_policy: cfg.oov_policy,
            lowercase: cfg.lowercase,
        },
    )
    .map_err(CliError::usage)
}

fn cmd_cov(cfg: &RunConfig) -> Result<ExitCode, CliError> {
    let store = load_store(cfg)?;
    let cov =
        ScaledCovariance::from_store(&store, cfg.eigenvalue_floor).map_err(CliError::runtime)?;
    let path = cfg.output_dir.join("covariance.cov");
    cov.save(&path).map_err(CliError::runtime)?;
    let top: Vec<String> = cov
        .eigenvalues()
        .iter()
        .take(5)
        .map(|v| format!("{v}"))
        .collect();
    println!(
        "vocabulary: {} words, dimension {}",
        store.len(),
        store.dim()
    );
    println!("trace: {}", cov.trace());
    println!("min_eigenvalue: {}", cov.min_eigenvalue());
    println!("clamped: {}", cov.clamped_count());
    println!("top_eigenvalues: {}", top.join(", "));
    println!("sidecar: {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_profile(cfg: &RunConfig) -> Result<ExitCode, CliError> {
    let store = load_store(cfg)?;
    let profile = metricdp::embeddings::corpus_profile(&store).map_err(CliError::runtime)?;
    let json = serde_json::to_string_pretty(&profile).map_err(CliError::runtime)?;
    let path = cfg.output_dir.join("profile.json");
    std::fs::write(&path, format!("{json}\n")).map_err(CliError::runtime)?;
    println!("{json}");
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_sample(
    cfg: &RunConfig,
    count: usize,
    epsilon: f64,
    lambda: f64,
    sidecar: Option<&Path>,
) -> Result<ExitCode, CliError> {
    if count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let store = load_store(cfg)?;
    let cov = load_or_compute_cov(cfg, &store, sidecar)?;
    let metric = RegularizedMetric::new(cov, lambda).map_err(CliError::usage)?;
    let mut sampler = NoiseSampler::new(&metric, epsilon, cfg.seed).map_err(CliError::usage)?;

    let path = cfg.output_dir.join("samples.csv");
    let file = std::fs::File::create(&path).map_err(CliError::runtime)?;
    let mut w = BufWriter::new(file);
    let header: Vec<String> = (1..=metric.dim())
        .map(|i| format!("z_{i}"))
        .chain(std::iter::once("radius".to_string()))
        .collect();
    writeln!(w, "{}", header.join(",")).map_err(CliError::runtime)?;
    for _ in 0..count {
        let s = sampler.sample();
        let row: Vec<String> =
            s.z.iter()
                .map(|v| format!("{v}"))
                .chain(std::iter::once(format!("{}", s.radius)))
                .collect();
        writeln!(w, "{}", row.join(",")).map_err(CliError::runtime)?;
    }
    w.flush().map_err(CliError::runtime)?;
    println!("wrote {count} samples to {}", path.display());
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn cmd_perturb(
    cfg: &RunConfig,
    input: &Path,
    output: Option<&Path>,
    epsilon: f64,
    lambda: f64,
    options: CorpusOptions,
    summary_path: Option<&Path>,
    sidecar: Option<&Path>,
) -> Result<ExitCode, CliError> {
    let store = load_store(cfg)?;
    let cov = load_or_compute_cov(cfg, &store, sidecar)?;
    let metric = Arc::new(RegularizedMetric::new(cov, lambda).map_err(CliError::usage)?);
    let index = Arc::new(NearestNeighborIndex::new(store));
    let mech = build_mechanism(cfg, index, metric, epsilon)?;

    let reader = std::io::BufReader::new(
        std::fs::File::open(input)
            .map_err(|e| CliError::runtime(format!("input {}: {e}", input.display())))?,
    );
    let out_path = output
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.join("perturbed.txt"));
    let writer = BufWriter::new(std::fs::File::create(&out_path).map_err(CliError::runtime)?);

    let summary = mech
        .perturb_corpus(reader, writer, options)
        .map_err(CliError::runtime)?;
    let json = serde_json::to_string_pretty(&summary).map_err(CliError::runtime)?;
    let summary_file = summary_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.join("perturb-summary.json"));
    std::fs::write(&summary_file, format!("{json}\n")).map_err(CliError::runtime)?;
    eprintln!("{json}");
    println!("wrote {}", out_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_stats(
    cfg: &RunConfig,
    word_sample: Option<usize>,
    sidecar: Option<&Path>,
) -> Result<ExitCode, CliError> {
    let store = load_store(cfg)?;
    let cov = load_or_compute_cov(cfg, &store, sidecar)?;
    let index = Arc::new(NearestNeighborIndex::new(store.clone()));

    let words: Vec<String> = match word_sample {
        None => store.words().to_vec(),
        Some(0) => return Err(CliError::Usage("--word-sample must be at least 1".into())),
        Some(n) => sample_words(&store, n, cfg.seed),
    };

    // one metric per lambda, shared across the epsilon axis
    let mut metrics: Vec<(f64, Arc<RegularizedMetric>)> = Vec::new();
    for &lambda in &cfg.lambda_grid {
        if metrics.iter().any(|(l, _)| l.to_bits() == lambda.to_bits()) {
            continue;
        }
        let metric =
            Arc::new(RegularizedMetric::new(cov.clone(), lambda).map_err(CliError::usage)?);
        metrics.push((lambda, metric));
    }
    let cfg_for_factory = cfg.clone();
    let index_for_factory = index.clone();
    let factory = move |epsilon: f64,
                        lambda: f64|
          -> Result<Mechanism, Box<dyn std::error::Error + Send + Sync>> {
        let metric = metrics
            .iter()
            .find(|(l, _)| l.to_bits() == lambda.to_bits())
            .map(|(_, m)| m.clone())
            .expect("metric prebuilt for every grid lambda");
        Ok(Mechanism::new(
            index_for_factory.clone(),
            metric.clone(),
            PerturbationConfig {
                epsilon,
                lambda,
                seed: cfg_for_factory.seed,
                oov_policy: cfg_for_factory.oov_policy,
                lowercase: cfg_for_factory.lowercase,
            },
        )?)
    };

    let report = metricdp::privstats::run_privacy_experiment(
        factory,
        &words,
        &cfg.epsilon_grid,
        &cfg.lambda_grid,
        cfg.repetitions,
        cfg.seed,
    )
    .map_err(CliError::runtime)?;

    let mut files =
        emit_report(&report, &cfg.output_dir, ReportFormat::Csv).map_err(CliError::runtime)?;
    files.extend(
        emit_report(&report, &cfg.output_dir, ReportFormat::Json).map_err(CliError::runtime)?,
    );
    files.push(write_comparisons(cfg, &report)?);
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(ExitCode::SUCCESS)
}

/// Verdicts of every lambda against the spherical baseline, per epsilon.
fn write_comparisons(
    cfg: &RunConfig,
    report: &metricdp::privstats::PrivacyStatsReport,
) -> Result<PathBuf, CliError> {
    let path = cfg.output_dir.join("comparisons.csv");
    let mut w = csv::Writer::from_path(&path).map_err(CliError::runtime)?;
    w.write_record(["epsilon", "lambda_base", "lambda", "stat", "verdict"])
        .map_err(CliError::runtime)?;
    let has_baseline = report.lambdas.contains(&0.0);
    if !has_baseline {
        log::warn!("lambda grid has no 0 entry; skipping baseline comparisons");
    } else {
        for &eps in &report.epsilons {
            for &lambda in &report.lambdas {
                if lambda == 0.0 {
                    continue;
                }
                let cmp =
                    compare_mechanisms(report, eps, 0.0, lambda).map_err(CliError::runtime)?;
                for (stat, verdict) in [("N_w", cmp.n_w), ("S_w", cmp.s_w)] {
                    w.write_record([
                        eps.to_string(),
                        "0".to_string(),
                        lambda.to_string(),
                        stat.to_string(),
                        verdict_name(verdict).to_string(),
                    ])
                    .map_err(CliError::runtime)?;
                }
            }
        }
    }
    w.flush().map_err(CliError::runtime)?;
    Ok(path)
}

fn verdict_name(v: CiVerdict) -> &'static str {
    match v {
        CiVerdict::ALower => "a_lower",
        CiVerdict::BLower => "b_lower",
        CiVerdict::Overlapping => "overlapping",
    }
}

/// Seeded uniform subsample of the vocabulary, ordered by vocabulary id.
fn sample_words(store: &EmbeddingStore, n: usize, seed: u64) -> Vec<String> {
    use rand::Rng;
    let n = n.min(store.len());
    let mut ids: Vec<usize> = (0..store.len()).collect();
    let mut rng = stream_rng(seed, derive_stream(&[domain::WORD_SAMPLE]));
    for i in 0..n {
        let j = rng.random_range(i..ids.len());
        ids.swap(i, j);
    }
    ids.truncate(n);
    ids.sort_unstable();
    ids.into_iter().map(|i| store.word(i).to_string()).collect()
}

fn cmd_audit(
    cfg: &RunConfig,
    trials: u64,
    synth_words: usize,
    dim: usize,
    inject_fault: bool,
) -> Result<ExitCode, CliError> {
    let store = match &cfg.embedding_path {
        Some(_) => load_store(cfg)?,
        None => Arc::new(
            generate_store(&audit_vocab_spec(synth_words, dim, cfg.seed))
                .map_err(CliError::usage)?,
        ),
    };
    if store.dim() > metricdp::privstats::MAX_AUDIT_DIM {
        return Err(CliError::Usage(format!(
            "audit guard: embedding dimension {} exceeds {}",
            store.dim(),
            metricdp::privstats::MAX_AUDIT_DIM
        )));
    }
    if store.len() > metricdp::privstats::MAX_AUDIT_WORDS {
        return Err(CliError::Usage(format!(
            "audit guard: vocabulary size {} exceeds {}",
            store.len(),
            metricdp::privstats::MAX_AUDIT_WORDS
        )));
    }
    if trials < metricdp::privstats::MIN_AUDIT_TRIALS {
        return Err(CliError::Usage(format!(
            "audit guard: trials {} below minimum {}",
            trials,
            metricdp::privstats::MIN_AUDIT_TRIALS
        )));
    }
    let cov = Arc::new(
        ScaledCovariance::from_store(&store, cfg.eigenvalue_floor).map_err(CliError::runtime)?,
    );
    let index = Arc::new(NearestNeighborIndex::new(store));

    let mut audits: Vec<DpRatioAudit> = Vec::new();
    let mut flagged = false;
    for &lambda in &cfg.lambda_grid {
        let metric =
            Arc::new(RegularizedMetric::new(cov.clone(), lambda).map_err(CliError::usage)?);
        for &epsilon in &cfg.epsilon_grid {
            let mut mech = build_mechanism(cfg, index.clone(), metric.clone(), epsilon)?;
            if inject_fault {
                mech = mech.with_noise_scale(0.5).map_err(CliError::usage)?;
            }
            let audit = audit_dp_ratio(&mech, trials, cfg.seed).map_err(|e| match e {
                StatsError::AuditGuard(_) => CliError::usage(e),
                other => CliError::runtime(other),
            })?;
            println!(
                "epsilon={epsilon} lambda={lambda} evaluated={} excluded={} max_excess={} violations={}",
                audit.evaluated,
                audit.excluded,
                audit
                    .max_excess
                    .map(|m| format!("{m:.6}"))
                    .unwrap_or_else(|| "n/a".into()),
                audit.violations.len()
            );
            flagged |= audit.flagged();
            audits.push(audit);
        }
    }
    let path = cfg.output_dir.join("audit.json");
    let json = serde_json::to_string_pretty(&audits).map_err(CliError::runtime)?;
    std::fs::write(&path, format!("{json}\n")).map_err(CliError::runtime)?;
    println!("wrote {}", path.display());
    if flagged {
        eprintln!("ratio violations flagged");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

/// Anisotropic audit vocabulary: axis stds decay geometrically from 1.5 to
/// 0.5 and words keep a minimum separation so output cells get usable mass.
fn audit_vocab_spec(words: usize, dim: usize, seed: u64) -> SynthSpec {
    let axis_stds: Vec<f64> = (0..dim)
        .map(|j| {
            if dim == 1 {
                1.0
            } else {
                1.5 * (1.0f64 / 3.0).powf(j as f64 / (dim - 1) as f64)
            }
        })
        .collect();
    SynthSpec {
        words,
        dim,
        axis_stds,
        radial_scale_range: (1.0, 1.0),
        min_separation: 0.15,
        target_median_nn: None,
        seed,
    }
}
