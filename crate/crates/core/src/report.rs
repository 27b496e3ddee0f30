//! Rule reports: an aligned text table for reading and a line-delimited JSON
//! dump that round-trips exactly.
//!
//! The structured dump starts with one header object carrying the format tag
//! and provenance, followed by one object per rule in canonical order:
//!
//! ```text
//! {"format":"biasmine-rules","version":1,"provenance":{...}}
//! {"antecedent":["what","sport","playing","v:12"],"consequent":["tennis*"],"support":40,"confidence_numerator":40,"confidence_denominator":64,"confidence":0.625}
//! ```

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rules::{rank_cmp, AssociationRule, Provenance, RuleSet};
use crate::vocab::{ItemId, Modality, Vocabulary};

pub const RULES_FORMAT: &str = "biasmine-rules";
pub const RULES_VERSION: u32 = 1;
pub const TABLE_HEADER: &str = "antecedent | visual word | consequent | support | confidence";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Structured,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "structured" | "jsonl" => Ok(ReportFormat::Structured),
            other => Err(Error::InvalidFormat(other.to_string())),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct RuleRecord {
    antecedent: Vec<String>,
    consequent: Vec<String>,
    support: u64,
    confidence_numerator: u64,
    confidence_denominator: u64,
    confidence: f64,
}

pub fn emit_report(rules: &RuleSet, vocab: &Vocabulary, format: ReportFormat) -> String {
    match format {
        ReportFormat::Table => render_table(rules.rules().iter(), vocab),
        ReportFormat::Structured => render_structured(rules, vocab),
    }
}

/// Like [`emit_report`] but takes the format by name.
pub fn emit_report_named(rules: &RuleSet, vocab: &Vocabulary, format: &str) -> Result<String> {
    Ok(emit_report(rules, vocab, format.parse()?))
}

/// One row per rule, ranked by confidence then support.
pub fn render_table<'a>(rules: impl IntoIterator<Item = &'a AssociationRule>, vocab: &Vocabulary) -> String {
    let mut ranked: Vec<&AssociationRule> = rules.into_iter().collect();
    ranked.sort_by(|a, b| rank_cmp(a, b));
    let mut out = String::new();
    out.push_str(TABLE_HEADER);
    out.push('\n');
    for r in ranked {
        out.push_str(&table_row(r, vocab));
        out.push('\n');
    }
    out
}

pub fn table_row(rule: &AssociationRule, vocab: &Vocabulary) -> String {
    let by = |m: Modality, ids: &[ItemId]| -> Vec<String> {
        ids.iter()
            .filter(|&&id| vocab.modality(id) == Some(m))
            .map(|&id| vocab.display(id))
            .collect()
    };
    let mut words = by(Modality::QuestionWord, &rule.antecedent);
    // Anything unusual on the left (answers before filtering) stays visible.
    words.extend(by(Modality::AnswerWord, &rule.antecedent));
    let visual = by(Modality::VisualWord, &rule.antecedent);
    let consequent: Vec<String> = rule.consequent.iter().map(|&id| vocab.display(id)).collect();
    let mut row = String::new();
    let _ = write!(
        row,
        "{} | {} | {} | {} | {:.2}",
        words.join(" "),
        visual.join(" "),
        consequent.join(" "),
        rule.support,
        rule.confidence()
    );
    row
}

fn render_structured(rules: &RuleSet, vocab: &Vocabulary) -> String {
    let header = Header {
        format: RULES_FORMAT.to_string(),
        version: RULES_VERSION,
        provenance: rules.provenance().clone(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    let tokens = |ids: &[ItemId]| ids.iter().map(|&id| vocab.display(id)).collect();
    for r in rules.rules() {
        let rec = RuleRecord {
            antecedent: tokens(&r.antecedent),
            consequent: tokens(&r.consequent),
            support: r.support,
            confidence_numerator: r.support,
            confidence_denominator: r.antecedent_support,
            confidence: r.confidence(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("rule serializes"));
        out.push('\n');
    }
    out
}

/// Parses a structured dump, resolving tokens against `vocab`.
pub fn parse_structured(text: &str, vocab: &Vocabulary) -> Result<RuleSet> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let bad = |line: usize, reason: String| Error::MalformedReport { line: line + 1, reason };
    let (n, first) = lines.next().ok_or_else(|| bad(0, "missing header".into()))?;
    let header: Header = serde_json::from_str(first).map_err(|e| bad(n, e.to_string()))?;
    if header.format != RULES_FORMAT || header.version != RULES_VERSION {
        return Err(bad(n, format!("unsupported format {} v{}", header.format, header.version)));
    }
    let mut rules = Vec::new();
    for (n, line) in lines {
        let rec: RuleRecord = serde_json::from_str(line).map_err(|e| bad(n, e.to_string()))?;
        let resolve = |tokens: &[String]| -> Result<Vec<ItemId>> {
            let mut ids = tokens
                .iter()
                .map(|t| vocab.lookup_display(t).ok_or_else(|| bad(n, format!("unknown token {t:?}"))))
                .collect::<Result<Vec<_>>>()?;
            ids.sort_unstable();
            Ok(ids)
        };
        if rec.support != rec.confidence_numerator {
            return Err(bad(n, "support and confidence numerator disagree".into()));
        }
        rules.push(AssociationRule {
            antecedent: resolve(&rec.antecedent)?,
            consequent: resolve(&rec.consequent)?,
            support: rec.support,
            antecedent_support: rec.confidence_denominator,
        });
    }
    RuleSet::new(rules, header.provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::{ConfidenceThreshold, Provenance};

    fn sample() -> (Vocabulary, RuleSet) {
        let mut v = Vocabulary::new();
        let q: Vec<ItemId> = ["what", "sport", "playing"]
            .iter()
            .map(|w| v.intern(w, Modality::QuestionWord).unwrap())
            .collect();
        let vis = v.intern_visual(12).unwrap();
        let tennis = v.intern("tennis", Modality::AnswerWord).unwrap();
        let hot_dog = v.intern("hot dog", Modality::AnswerWord).unwrap();
        let mut ant = q.clone();
        ant.push(vis);
        let rules = vec![
            AssociationRule {
                antecedent: ant,
                consequent: vec![tennis],
                support: 40,
                antecedent_support: 64,
            },
            AssociationRule {
                antecedent: vec![q[0]],
                consequent: vec![hot_dog],
                support: 3,
                antecedent_support: 90,
            },
        ];
        let prov = Provenance {
            min_support: 2,
            min_confidence: ConfidenceThreshold::new(0.02).unwrap(),
            max_consequent_size: 1,
            transaction_count: 100,
            db_fingerprint: "abc".into(),
            causal_filtered: true,
        };
        (v, RuleSet::new(rules, prov).unwrap())
    }

    #[test]
    fn table_rows() {
        let (v, rules) = sample();
        let t = emit_report(&rules, &v, ReportFormat::Table);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], TABLE_HEADER);
        assert_eq!(lines[1], "what sport playing | v:12 | tennis* | 40 | 0.62");
        assert_eq!(lines[2], "what |  | hot dog* | 3 | 0.03");
    }

    #[test]
    fn empty_table_is_header_only() {
        let (v, rules) = sample();
        let empty = RuleSet::new(vec![], rules.provenance().clone()).unwrap();
        assert_eq!(emit_report(&empty, &v, ReportFormat::Table), format!("{TABLE_HEADER}\n"));
    }

    #[test]
    fn structured_round_trip() {
        let (v, rules) = sample();
        let text = emit_report(&rules, &v, ReportFormat::Structured);
        assert_eq!(parse_structured(&text, &v).unwrap(), rules);
        assert!(text.lines().nth(1).unwrap().contains(r#""consequent":["hot dog*"]"#));
    }

    #[test]
    fn format_names() {
        assert_eq!("table".parse::<ReportFormat>().unwrap(), ReportFormat::Table);
        assert!(matches!("html".parse::<ReportFormat>(), Err(Error::InvalidFormat(_))));
        let (v, rules) = sample();
        assert!(emit_report_named(&rules, &v, "xml").is_err());
    }

    #[test]
    fn malformed_reports() {
        let (v, rules) = sample();
        assert!(parse_structured("", &v).is_err());
        let text = emit_report(&rules, &v, ReportFormat::Structured);
        let broken = text.replace("tennis*", "badminton*");
        assert!(matches!(parse_structured(&broken, &v), Err(Error::MalformedReport { line: 3, .. })));
    }
}
