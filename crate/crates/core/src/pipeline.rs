//! End-to-end run: records -> crop -> codeword -> transactions -> itemsets ->
//! rules -> question/image -> answer filter.
//!
//! A record's `feature` is either one region vector of the codebook's
//! dimension, or a per-cell feature map aligned with its attention grid
//! (`rows * cols * d` values, cell-major). A map is mean-pooled over the
//! cropped box before codeword assignment. Records that fail any per-record
//! step are counted and skipped.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::{l2_normalize, train_codebook, Codebook, CodebookConfig, DEFAULT_K};
use crate::crop::{min_enclosing_box, AttentionMap, BoundingBox, CropConfig, DEFAULT_TAU};
use crate::error::{Error, Result};
use crate::miner::{build_bitmap_index, mine_frequent, FrequentItemsets, SupportThreshold, DEFAULT_SUPPORT};
use crate::report::{emit_report, ReportFormat};
use crate::rules::{causal_filter, generate_rules, ConfidenceThreshold, RuleConfig, RuleSet, DEFAULT_MIN_CONFIDENCE};
use crate::vocab::{build_transaction, IngestRecord, Modality, TokenizerConfig, TransactionDb};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub tau: f64,
    /// Codebook size when one has to be trained from the input.
    pub k: usize,
    pub seed: u64,
    pub support: SupportThreshold,
    pub confidence: f64,
    pub max_consequent_size: usize,
    pub tokenizer: TokenizerConfig,
    pub language_only: bool,
    pub l2_normalize: bool,
    pub kmeans_max_iterations: usize,
    pub kmeans_tolerance: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            tau: DEFAULT_TAU,
            k: DEFAULT_K,
            seed: 0,
            support: SupportThreshold::Count(DEFAULT_SUPPORT),
            confidence: DEFAULT_MIN_CONFIDENCE,
            max_consequent_size: 1,
            tokenizer: TokenizerConfig::default(),
            language_only: false,
            l2_normalize: false,
            kmeans_max_iterations: 100,
            kmeans_tolerance: 1e-6,
        }
    }
}

impl PipelineConfig {
    pub fn crop_config(&self) -> Result<CropConfig> {
        CropConfig::new(self.tau)
    }

    pub fn rule_config(&self) -> Result<RuleConfig> {
        if self.max_consequent_size == 0 {
            return Err(Error::InvalidConfig("max_consequent_size must be at least 1".into()));
        }
        Ok(RuleConfig {
            min_confidence: ConfidenceThreshold::new(self.confidence)?,
            min_support: self.support,
            max_consequent_size: self.max_consequent_size,
        })
    }

    pub fn codebook_config(&self) -> CodebookConfig {
        CodebookConfig {
            k: self.k,
            seed: self.seed,
            max_iterations: self.kmeans_max_iterations,
            tolerance: self.kmeans_tolerance,
        }
    }

    /// Checks every threshold before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.crop_config()?;
        self.rule_config()?;
        self.support.resolve(1)?;
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub input_records: usize,
    pub processed: usize,
    pub skipped: usize,
    pub skip_reasons: BTreeMap<String, usize>,
    pub question_words: usize,
    pub visual_words: usize,
    pub answer_words: usize,
    pub min_support: u64,
    pub frequent_itemsets: usize,
    pub max_itemset_size: usize,
    pub rules_before_filter: usize,
    pub rules: usize,
    pub codebook_trained: bool,
    pub stages: Vec<StageTiming>,
}

impl Summary {
    fn skip(&mut self, record_id: &str, err: &Error) {
        debug!("skipping record {record_id:?}: {err}");
        self.skipped += 1;
        *self.skip_reasons.entry(err.kind().to_string()).or_default() += 1;
    }

    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.record_stage(stage, start);
        out
    }

    fn record_stage(&mut self, stage: &str, start: Instant) {
        let seconds = start.elapsed().as_secs_f64();
        info!("stage {stage}: {seconds:.3}s");
        self.stages.push(StageTiming {
            stage: stage.to_string(),
            seconds,
        });
    }
}

/// Records parsed from an ingestion file, plus per-line parse failures.
#[derive(Debug, Default)]
pub struct IngestInput {
    pub records: Vec<IngestRecord>,
    pub malformed: Vec<(usize, String)>,
}

pub fn read_ingest<R: BufRead>(reader: R) -> Result<IngestInput> {
    let mut out = IngestInput::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<IngestRecord>(&line) {
            Ok(r) => out.records.push(r),
            Err(e) => out.malformed.push((i + 1, e.to_string())),
        }
    }
    Ok(out)
}

pub fn read_ingest_file(path: impl AsRef<Path>) -> Result<IngestInput> {
    read_ingest(BufReader::new(File::open(path)?))
}

/// Region feature of a record, or `None` when it carries no feature.
/// `dim` is the expected region dimension if known; otherwise it is inferred
/// from the attention grid.
pub fn region_feature(
    record: &IngestRecord,
    dim: Option<usize>,
    crop: &CropConfig,
) -> Result<Option<(Vec<f64>, Option<BoundingBox>)>> {
    let Some(feature) = &record.feature else {
        return Ok(None);
    };
    let attention = match &record.attention {
        Some(grid) => Some(AttentionMap::from_rows(grid)?),
        None => None,
    };
    let cells = attention.as_ref().map_or(1, |a| a.rows() * a.cols());
    let region_dim = match dim {
        Some(d) => d,
        None if attention.is_some() && cells > 1 && feature.len() % cells == 0 => feature.len() / cells,
        None => feature.len(),
    };
    if region_dim == 0 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: 0,
        });
    }
    if feature.len() == region_dim {
        return Ok(Some((feature.clone(), None)));
    }
    let map = match attention {
        Some(map) if feature.len() == cells * region_dim => map,
        _ => {
            return Err(Error::DimensionMismatch {
                expected: region_dim,
                got: feature.len(),
            })
        }
    };
    let b = min_enclosing_box(&map, crop)?;
    let mut pooled = vec![0.0; region_dim];
    for r in b.top..=b.bottom {
        for c in b.left..=b.right {
            let cell = &feature[(r * map.cols() + c) * region_dim..][..region_dim];
            for (p, v) in pooled.iter_mut().zip(cell) {
                *p += v;
            }
        }
    }
    let area = b.area() as f64;
    pooled.iter_mut().for_each(|p| *p /= area);
    Ok(Some((pooled, Some(b))))
}

#[derive(Debug)]
pub struct DbBuild {
    pub db: TransactionDb,
    /// Set when the codebook had to be trained from the input.
    pub trained_codebook: Option<Codebook>,
    pub summary: Summary,
}

/// Encodes records as transactions. Without a codebook, one is trained from
/// the records' region features (unless `language_only`).
pub fn build_db(
    input: &IngestInput,
    codebook: Option<&Codebook>,
    config: &PipelineConfig,
) -> Result<DbBuild> {
    config.validate()?;
    let crop = config.crop_config()?;
    let mut summary = Summary {
        input_records: input.records.len() + input.malformed.len(),
        ..Summary::default()
    };
    for (line, err) in &input.malformed {
        debug!("skipping line {line}: {err}");
        summary.skipped += 1;
        *summary.skip_reasons.entry("malformed_record".into()).or_default() += 1;
    }

    let records = &input.records;
    let mut visual: Vec<Result<Option<u32>>> = vec![];
    let mut trained_codebook = None;

    if config.language_only {
        visual.resize_with(records.len(), || Ok(None));
    } else {
        let dim = codebook.map(Codebook::dim);
        let regions: Vec<Result<Option<Vec<f64>>>> = summary.time("crop", || {
            records
                .par_iter()
                .map(|r| {
                    r.validate()?;
                    let mut region = region_feature(r, dim, &crop)?.map(|(f, _)| f);
                    if config.l2_normalize {
                        if let Some(f) = region.as_mut() {
                            l2_normalize(f);
                        }
                    }
                    Ok(region)
                })
                .collect()
        });

        let owned;
        let codebook = match codebook {
            Some(cb) => Some(cb),
            None => {
                let training: Vec<Vec<f64>> = regions
                    .iter()
                    .filter_map(|r| r.as_ref().ok().and_then(|f| f.clone()))
                    .collect();
                if training.is_empty() {
                    None
                } else {
                    let d = training[0].len();
                    let consistent: Vec<Vec<f64>> = training.into_iter().filter(|f| f.len() == d).collect();
                    let mut cfg = config.codebook_config();
                    if consistent.len() < cfg.k {
                        warn!(
                            "only {} region features for k = {}; lowering k",
                            consistent.len(),
                            cfg.k
                        );
                        cfg.k = consistent.len();
                    }
                    let trained = summary.time("codebook", || train_codebook(&consistent, &cfg))?;
                    info!(
                        "trained codebook k={} d={} in {} iterations",
                        trained.codebook.k(),
                        d,
                        trained.iterations
                    );
                    summary.codebook_trained = true;
                    owned = trained.codebook;
                    Some(&owned)
                }
            }
        };

        visual = summary.time("assign", || {
            records
                .par_iter()
                .zip(regions)
                .map(|(r, region)| match (region?, r.codeword, codebook) {
                    (Some(f), _, Some(cb)) => cb.assign(&f).map(Some),
                    (None, Some(cw), Some(cb)) if cw as usize >= cb.k() => Err(Error::InvalidRecord {
                        record_id: r.record_id.clone(),
                        reason: format!("codeword {cw} outside codebook of {}", cb.k()),
                    }),
                    (None, cw, _) => Ok(cw),
                    (Some(_), _, None) => unreachable!("a feature always yields a codebook"),
                })
                .collect()
        });
        if summary.codebook_trained {
            trained_codebook = codebook.cloned();
        }
    }

    let mut db = TransactionDb::default();
    let start = Instant::now();
    for (r, vw) in records.iter().zip(visual) {
        let result = vw.and_then(|vw| build_transaction(db.vocabulary_mut(), r, vw, &config.tokenizer));
        match result.and_then(|t| db.push(t)) {
            Ok(()) => summary.processed += 1,
            Err(e) => summary.skip(&r.record_id, &e),
        }
    }
    summary.record_stage("encode", start);
    db.vocabulary_mut().freeze();
    let v = db.vocabulary();
    summary.question_words = v.count_by_modality(Modality::QuestionWord);
    summary.visual_words = v.count_by_modality(Modality::VisualWord);
    summary.answer_words = v.count_by_modality(Modality::AnswerWord);
    Ok(DbBuild {
        db,
        trained_codebook,
        summary,
    })
}

#[derive(Debug)]
pub struct Mined {
    pub frequent: FrequentItemsets,
    pub unfiltered: RuleSet,
    pub rules: RuleSet,
}

/// Mines itemsets and rules from a database, then applies the causal filter.
pub fn mine_rules(db: &TransactionDb, config: &PipelineConfig, summary: &mut Summary) -> Result<Mined> {
    let rule_config = config.rule_config()?;
    let index = summary.time("index", || build_bitmap_index(db));
    let frequent = summary.time("mine", || mine_frequent(&index, config.support))?;
    let unfiltered = summary.time("rules", || generate_rules(&frequent, &rule_config))?;
    let rules = summary
        .time("filter", || causal_filter(&unfiltered, db.vocabulary()))
        .with_fingerprint(db.fingerprint());
    summary.min_support = frequent.min_support();
    summary.frequent_itemsets = frequent.len();
    summary.max_itemset_size = frequent.max_len();
    summary.rules_before_filter = unfiltered.len();
    summary.rules = rules.len();
    Ok(Mined {
        frequent,
        unfiltered,
        rules,
    })
}

#[derive(Debug)]
pub struct PipelineOutput {
    pub db: TransactionDb,
    pub trained_codebook: Option<Codebook>,
    pub mined: Mined,
    pub summary: Summary,
}

impl PipelineOutput {
    pub fn rules(&self) -> &RuleSet {
        &self.mined.rules
    }

    pub fn rules_dump(&self) -> String {
        emit_report(&self.mined.rules, self.db.vocabulary(), ReportFormat::Structured)
    }
}

/// In-memory pipeline over already-parsed records.
pub fn run_records(
    input: &IngestInput,
    codebook: Option<&Codebook>,
    config: &PipelineConfig,
) -> Result<PipelineOutput> {
    let DbBuild {
        db,
        trained_codebook,
        mut summary,
    } = build_db(input, codebook, config)?;
    let mined = mine_rules(&db, config, &mut summary)?;
    Ok(PipelineOutput {
        db,
        trained_codebook,
        mined,
        summary,
    })
}

/// Files written by [`run_pipeline`] inside its output directory.
pub struct OutputFiles {
    pub db: PathBuf,
    pub rules: PathBuf,
    pub table: PathBuf,
    pub itemsets: PathBuf,
    pub summary: PathBuf,
    pub codebook: PathBuf,
}

impl OutputFiles {
    pub fn in_dir(dir: &Path) -> Self {
        OutputFiles {
            db: dir.join("transactions.db"),
            rules: dir.join("rules.jsonl"),
            table: dir.join("rules.txt"),
            itemsets: dir.join("itemsets.tsv"),
            summary: dir.join("summary.json"),
            codebook: dir.join("codebook.bin"),
        }
    }
}

/// File-level pipeline: reads the ingestion file (and codebook, if given),
/// writes the database, rule dump, rule table, itemset dump and summary.
pub fn run_pipeline(
    config: &PipelineConfig,
    input: &Path,
    codebook: Option<&Path>,
    out_dir: &Path,
) -> Result<PipelineOutput> {
    config.validate()?;
    let records = read_ingest_file(input)?;
    let codebook = codebook.map(Codebook::load).transpose()?;
    let output = run_records(&records, codebook.as_ref(), config)?;

    fs::create_dir_all(out_dir)?;
    let files = OutputFiles::in_dir(out_dir);
    output.db.save(&files.db)?;
    fs::write(&files.rules, output.rules_dump())?;
    fs::write(
        &files.table,
        emit_report(&output.mined.rules, output.db.vocabulary(), ReportFormat::Table),
    )?;
    output
        .mined
        .frequent
        .write_dump(output.db.vocabulary(), BufWriter::new(File::create(&files.itemsets)?))?;
    if let Some(cb) = &output.trained_codebook {
        cb.save(&files.codebook)?;
    }
    let mut w = BufWriter::new(File::create(&files.summary)?);
    serde_json::to_writer_pretty(&mut w, &output.summary).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(output)
}
