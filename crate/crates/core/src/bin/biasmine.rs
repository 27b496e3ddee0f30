//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration error, 2 I/O error, 3 data error.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Deserialize;

use biasmine::codebook::{l2_normalize, train_codebook, Codebook};
use biasmine::miner::{build_bitmap_index, mine_frequent, SupportThreshold, DEFAULT_SUPPORT};
use biasmine::pipeline::{self, read_ingest_file, region_feature, PipelineConfig, Summary};
use biasmine::report::{emit_report, parse_structured, render_table, ReportFormat};
use biasmine::rules::{causal_filter, generate_rules, query_rules};
use biasmine::synth::{self, AttentionMode, SynthSpec};
use biasmine::{Error, IngestRecord, TransactionDb};

#[derive(Parser)]
#[command(name = "biasmine", version, about = "Mine answer rules from question/region/answer records")]
struct Cli {
    /// TOML file with pipeline settings; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic record set with planted rules.
    Synth(SynthArgs),
    /// Train a visual codebook from record or feature files.
    BuildCodebook(CodebookArgs),
    /// Encode records as a transaction database.
    Ingest(IngestArgs),
    /// Mine frequent itemsets from a database.
    Mine(MineArgs),
    /// Generate association rules from a database.
    Rules(RulesArgs),
    /// Look up rules whose antecedent contains the given words.
    Query(QueryArgs),
    /// Re-render a structured rule dump.
    Report(ReportArgs),
    /// Run ingest, mining, rule generation and filtering in one go.
    Pipeline(PipelineArgs),
}

#[derive(Args, Default)]
struct Thresholds {
    /// Minimum support: a count ("30"), a percentage ("5%") or a fraction ("0.05").
    #[arg(long)]
    support: Option<SupportThreshold>,
    /// Minimum confidence in [0, 1].
    #[arg(long)]
    confidence: Option<f64>,
}

#[derive(Args, Default)]
struct Encoding {
    /// Attention mass fraction the crop must cover.
    #[arg(long)]
    tau: Option<f64>,
    /// Codebook size when training one.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Drop attention and image features; questions and answers only.
    #[arg(long)]
    language_only: bool,
    /// Remove stopwords from questions.
    #[arg(long)]
    stopwords: bool,
    /// L2-normalize region features before assignment.
    #[arg(long)]
    l2_normalize: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Number of records (the five-rule preset otherwise uses 2000).
    #[arg(long)]
    records: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    attention: Option<AttentionArg>,
    /// TOML or JSON synth spec replacing the five-rule preset.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttentionArg {
    Delta,
    Blob,
    Uniform,
}

#[derive(Args)]
struct CodebookArgs {
    /// Records (JSON lines with attention and feature) or plain feature lines {"id", "feature"}.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    encoding: Encoding,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    codebook: Option<PathBuf>,
    #[arg(long)]
    db: PathBuf,
    #[command(flatten)]
    encoding: Encoding,
}

#[derive(Args)]
struct MineArgs {
    #[arg(long)]
    db: PathBuf,
    /// Itemset dump (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    support: Option<SupportThreshold>,
}

#[derive(Args)]
struct RulesArgs {
    #[arg(long)]
    db: PathBuf,
    /// Rule output (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    thresholds: Thresholds,
    #[arg(long, default_value = "structured")]
    format: String,
    /// Keep rules of every direction, not only question/image to answer.
    #[arg(long)]
    unfiltered: bool,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    db: PathBuf,
    /// Structured rule dump.
    #[arg(long)]
    rules: PathBuf,
    #[arg(long, default_value = "table")]
    format: String,
    /// Words (or v:<k> tokens) the antecedent must contain.
    #[arg(required = true)]
    terms: Vec<String>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    rules: PathBuf,
    #[arg(long, default_value = "table")]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    codebook: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    encoding: Encoding,
    #[command(flatten)]
    thresholds: Thresholds,
    /// Also print the rules to stdout in this format.
    #[arg(long)]
    format: Option<String>,
}

/// Settings shared by every subcommand after merging file and flags.
struct Context {
    config: PipelineConfig,
    support_given: bool,
}

impl Context {
    fn load(path: Option<&Path>) -> Result<Self, Error> {
        let Some(path) = path else {
            return Ok(Context {
                config: PipelineConfig::default(),
                support_given: false,
            });
        };
        let text = fs::read_to_string(path)?;
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(format!("{}: {}", path.display(), e.message())))?;
        let support_given = table.contains_key("support");
        let config = PipelineConfig::deserialize(table)
            .map_err(|e| Error::InvalidConfig(format!("{}: {}", path.display(), e.message())))?;
        Ok(Context { config, support_given })
    }

    fn apply_encoding(&mut self, e: &Encoding) {
        let c = &mut self.config;
        if let Some(t) = e.tau {
            c.tau = t;
        }
        if let Some(k) = e.k {
            c.k = k;
        }
        if let Some(s) = e.seed {
            c.seed = s;
        }
        c.language_only |= e.language_only;
        c.tokenizer.remove_stopwords |= e.stopwords;
        c.l2_normalize |= e.l2_normalize;
    }

    fn apply_support(&mut self, support: Option<SupportThreshold>) {
        match support {
            Some(s) => self.config.support = s,
            None if !self.support_given => {
                warn!("no --support given; using the default absolute support of {DEFAULT_SUPPORT}")
            }
            None => {}
        }
    }

    fn apply_thresholds(&mut self, t: &Thresholds) {
        self.apply_support(t.support);
        if let Some(c) = t.confidence {
            self.config.confidence = c;
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 2,
        Error::InvalidConfig(_)
        | Error::InvalidThreshold(_)
        | Error::InvalidConfidence(_)
        | Error::InvalidTau(_)
        | Error::InvalidFormat(_)
        | Error::InvalidSpec(_) => 1,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} worker threads: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut ctx = Context::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::BuildCodebook(a) => {
            ctx.apply_encoding(&a.encoding);
            cmd_build_codebook(&ctx.config, &a)
        }
        Command::Ingest(a) => {
            ctx.apply_encoding(&a.encoding);
            cmd_ingest(&ctx.config, &a)
        }
        Command::Mine(a) => {
            ctx.apply_support(a.support);
            cmd_mine(&ctx.config, &a)
        }
        Command::Rules(a) => {
            ctx.apply_thresholds(&a.thresholds);
            cmd_rules(&ctx.config, &a)
        }
        Command::Query(a) => cmd_query(&a),
        Command::Report(a) => cmd_report(&a),
        Command::Pipeline(a) => {
            ctx.apply_encoding(&a.encoding);
            ctx.apply_thresholds(&a.thresholds);
            cmd_pipeline(&ctx.config, &a)
        }
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), Error> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn print_summary(summary: &Summary) -> Result<(), Error> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, summary).map_err(io::Error::from)?;
    writeln!(out)?;
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<(), Error> {
    let mut spec = match &a.spec {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            let parsed = if path.extension().is_some_and(|e| e == "json") {
                serde_json::from_str(&text).map_err(|e| Error::InvalidSpec(e.to_string()))
            } else {
                toml::from_str(&text).map_err(|e| Error::InvalidSpec(e.message().to_string()))
            };
            parsed?
        }
        None => SynthSpec {
            record_count: 2000,
            ..SynthSpec::five_biases(0)
        },
    };
    if let Some(n) = a.records {
        spec.record_count = n;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(m) = a.attention {
        spec.attention_mode = match m {
            AttentionArg::Delta => AttentionMode::Delta,
            AttentionArg::Blob => AttentionMode::Blob,
            AttentionArg::Uniform => AttentionMode::Uniform,
        };
    }
    let out = synth::generate(&spec)?;
    synth::write_output(&out, &a.out)?;
    for rule in &out.ground_truth {
        println!(
            "{} -> {}*  support {}  confidence {}/{}",
            rule.antecedent.join(" "),
            rule.answer,
            rule.support,
            rule.support,
            rule.antecedent_support
        );
    }
    info!("wrote {} records to {}", out.records.len(), a.out.display());
    Ok(())
}

#[derive(Deserialize)]
struct FeatureLine {
    #[serde(alias = "record_id")]
    id: String,
    feature: Vec<f64>,
}

/// Region features from a codebook input file; skipped lines are counted.
fn read_features(config: &PipelineConfig, path: &Path) -> Result<(Vec<Vec<f64>>, usize), Error> {
    let crop = config.crop_config()?;
    let mut features = Vec::new();
    let mut skipped = 0;
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let feature = if let Ok(rec) = serde_json::from_str::<IngestRecord>(&line) {
            region_feature(&rec, None, &crop).map(|f| f.map(|(f, _)| f))
        } else if let Ok(plain) = serde_json::from_str::<FeatureLine>(&line) {
            log::trace!("feature line {}", plain.id);
            Ok(Some(plain.feature))
        } else {
            Err(Error::InvalidRecord {
                record_id: format!("line {}", n + 1),
                reason: "neither a record nor a feature line".into(),
            })
        };
        match feature {
            Ok(Some(mut f)) => {
                if config.l2_normalize {
                    l2_normalize(&mut f);
                }
                features.push(f);
            }
            Ok(None) => skipped += 1,
            Err(e) => {
                log::debug!("line {}: {e}", n + 1);
                skipped += 1;
            }
        }
    }
    Ok((features, skipped))
}

fn cmd_build_codebook(config: &PipelineConfig, a: &CodebookArgs) -> Result<(), Error> {
    config.crop_config()?;
    let (features, skipped) = read_features(config, &a.input)?;
    if let Some(first) = features.first() {
        if let Some(bad) = features.iter().find(|f| f.len() != first.len()) {
            return Err(Error::DimensionMismatch {
                expected: first.len(),
                got: bad.len(),
            });
        }
    }
    let trained = train_codebook(&features, &config.codebook_config())?;
    trained.codebook.save(&a.out)?;
    println!(
        "codebook k={} d={} from {} features ({} skipped), {} iterations, inertia {:.6}",
        trained.codebook.k(),
        trained.codebook.dim(),
        features.len(),
        skipped,
        trained.iterations,
        trained.inertia_history.last().copied().unwrap_or(0.0)
    );
    Ok(())
}

fn load_codebook(path: Option<&Path>) -> Result<Option<Codebook>, Error> {
    path.map(Codebook::load).transpose()
}

fn cmd_ingest(config: &PipelineConfig, a: &IngestArgs) -> Result<(), Error> {
    config.crop_config()?;
    let input = read_ingest_file(&a.input)?;
    let codebook = load_codebook(a.codebook.as_deref())?;
    let built = pipeline::build_db(&input, codebook.as_ref(), config)?;
    built.db.save(&a.db)?;
    if let Some(cb) = &built.trained_codebook {
        let path = a.db.with_extension("codebook.bin");
        cb.save(&path)?;
        info!("trained codebook written to {}", path.display());
    }
    print_summary(&built.summary)
}

fn cmd_mine(config: &PipelineConfig, a: &MineArgs) -> Result<(), Error> {
    let db = TransactionDb::load(&a.db)?;
    let frequent = mine_frequent(&build_bitmap_index(&db), config.support)?;
    let mut buf = Vec::new();
    frequent.write_dump(db.vocabulary(), &mut buf)?;
    write_output(a.out.as_deref(), &String::from_utf8_lossy(&buf))?;
    info!("{} frequent itemsets at support {}", frequent.len(), frequent.min_support());
    Ok(())
}

fn cmd_rules(config: &PipelineConfig, a: &RulesArgs) -> Result<(), Error> {
    let format: ReportFormat = a.format.parse()?;
    let rule_config = config.rule_config()?;
    let db = TransactionDb::load(&a.db)?;
    let frequent = mine_frequent(&build_bitmap_index(&db), config.support)?;
    let mut rules = generate_rules(&frequent, &rule_config)?;
    if !a.unfiltered {
        rules = causal_filter(&rules, db.vocabulary());
    }
    let rules = rules.with_fingerprint(db.fingerprint());
    write_output(a.out.as_deref(), &emit_report(&rules, db.vocabulary(), format))
}

fn load_rules(db_path: &Path, rules_path: &Path) -> Result<(TransactionDb, biasmine::RuleSet), Error> {
    let db = TransactionDb::load(db_path)?;
    let rules = parse_structured(&fs::read_to_string(rules_path)?, db.vocabulary())?;
    if rules.provenance().db_fingerprint != db.fingerprint() {
        warn!("rule dump was produced from a different database");
    }
    Ok((db, rules))
}

fn cmd_query(a: &QueryArgs) -> Result<(), Error> {
    let format: ReportFormat = a.format.parse()?;
    let (db, rules) = load_rules(&a.db, &a.rules)?;
    let hits = query_rules(&rules, db.vocabulary(), &a.terms);
    let text = match format {
        ReportFormat::Table => render_table(hits, db.vocabulary()),
        ReportFormat::Structured => {
            let subset = biasmine::RuleSet::new(hits.into_iter().cloned().collect(), rules.provenance().clone())?;
            emit_report(&subset, db.vocabulary(), ReportFormat::Structured)
        }
    };
    write_output(None, &text)
}

fn cmd_report(a: &ReportArgs) -> Result<(), Error> {
    let format: ReportFormat = a.format.parse()?;
    let (db, rules) = load_rules(&a.db, &a.rules)?;
    write_output(a.out.as_deref(), &emit_report(&rules, db.vocabulary(), format))
}

fn cmd_pipeline(config: &PipelineConfig, a: &PipelineArgs) -> Result<(), Error> {
    let format = a.format.as_deref().map(str::parse::<ReportFormat>).transpose()?;
    let out = pipeline::run_pipeline(config, &a.input, a.codebook.as_deref(), &a.out)?;
    match format {
        Some(f) => {
            let text = emit_report(out.rules(), out.db.vocabulary(), f);
            let mut w = BufWriter::new(io::stdout().lock());
            w.write_all(text.as_bytes())?;
            w.flush()?;
        }
        None => print_summary(&out.summary)?,
    }
    Ok(())
}
