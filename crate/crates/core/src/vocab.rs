//! Tri-modal vocabulary, question tokenizer, transactions and the on-disk
//! transaction database.
//!
//! Every (question, attended region, answer) triplet becomes one
//! [`Transaction`]: the set of its question-word ids, at most one visual-word
//! id and exactly one answer id. The three modalities share a single dense id
//! space so the miner never needs to know which is which.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DB_MAGIC: &str = "biasmine-db";
pub const DB_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    QuestionWord,
    VisualWord,
    AnswerWord,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::QuestionWord => "question",
            Modality::VisualWord => "visual",
            Modality::AnswerWord => "answer",
        }
    }

    pub fn parse(s: &str) -> Option<Modality> {
        match s {
            "question" => Some(Modality::QuestionWord),
            "visual" => Some(Modality::VisualWord),
            "answer" => Some(Modality::AnswerWord),
            _ => None,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Dense id of an interned [`Item`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ItemId(pub u32);

impl ItemId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Item {
    token: String,
    modality: Modality,
}

impl Item {
    pub fn token(&self) -> &str {
        &self.token
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    /// Human-facing rendering: answers carry a trailing `*`, visual words
    /// keep their `v:<index>` form, question words are bare.
    pub fn display_token(&self) -> String {
        match self.modality {
            Modality::AnswerWord => format!("{}*", self.token),
            _ => self.token.clone(),
        }
    }
}

pub fn visual_token(codeword: u32) -> String {
    format!("v:{codeword}")
}

fn normalize_token(token: &str, modality: Modality) -> Result<String> {
    let token = match modality {
        Modality::VisualWord => token.trim().to_string(),
        _ => token.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase(),
    };
    if token.is_empty() {
        return Err(Error::InvalidRecord {
            record_id: String::new(),
            reason: format!("empty {modality} token"),
        });
    }
    if token.contains(['\t', '\n', '\r']) {
        return Err(Error::InvalidRecord {
            record_id: String::new(),
            reason: format!("{modality} token {token:?} contains a control separator"),
        });
    }
    Ok(token)
}

/// Bidirectional map between items and dense ids `0..len`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    items: Vec<Item>,
    index: HashMap<(Modality, String), ItemId>,
    frozen: bool,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Returns the id of `(token, modality)`, assigning the next dense id if
    /// the pair is new. Question and answer tokens are lowercased first.
    pub fn intern(&mut self, token: &str, modality: Modality) -> Result<ItemId> {
        let token = normalize_token(token, modality)?;
        if let Some(&id) = self.index.get(&(modality, token.clone())) {
            return Ok(id);
        }
        if self.frozen {
            return Err(Error::FrozenVocabulary(format!("{modality}:{token}")));
        }
        let id = ItemId(self.items.len() as u32);
        self.items.push(Item {
            token: token.clone(),
            modality,
        });
        self.index.insert((modality, token), id);
        Ok(id)
    }

    pub fn intern_visual(&mut self, codeword: u32) -> Result<ItemId> {
        self.intern(&visual_token(codeword), Modality::VisualWord)
    }

    pub fn get(&self, token: &str, modality: Modality) -> Option<ItemId> {
        let token = normalize_token(token, modality).ok()?;
        self.index.get(&(modality, token)).copied()
    }

    pub fn item(&self, id: ItemId) -> Option<&Item> {
        self.items.get(id.index())
    }

    pub fn modality(&self, id: ItemId) -> Option<Modality> {
        self.item(id).map(Item::modality)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ItemId, &Item)> {
        self.items
            .iter()
            .enumerate()
            .map(|(i, item)| (ItemId(i as u32), item))
    }

    pub fn count_by_modality(&self, modality: Modality) -> usize {
        self.items.iter().filter(|i| i.modality == modality).count()
    }

    pub fn display(&self, id: ItemId) -> String {
        self.item(id)
            .map(Item::display_token)
            .unwrap_or_else(|| format!("#{}", id.0))
    }

    /// Parses a token produced by [`Item::display_token`] back into its id.
    pub fn lookup_display(&self, token: &str) -> Option<ItemId> {
        if let Some(answer) = token.strip_suffix('*') {
            self.get(answer, Modality::AnswerWord)
        } else if token.starts_with("v:") {
            self.get(token, Modality::VisualWord)
        } else {
            self.get(token, Modality::QuestionWord)
        }
    }
}

const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "an", "the", "is", "are", "was", "were", "be", "been", "of", "in", "on", "at", "to",
    "for", "with", "and", "or", "this", "that", "these", "those", "it", "its", "do", "does",
    "did", "there",
];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    #[serde(default)]
    pub remove_stopwords: bool,
    /// Replaces the built-in stopword list when non-empty.
    #[serde(default)]
    pub stopwords: Vec<String>,
}

impl TokenizerConfig {
    fn is_stopword(&self, token: &str) -> bool {
        if self.stopwords.is_empty() {
            DEFAULT_STOPWORDS.contains(&token)
        } else {
            self.stopwords.iter().any(|s| s == token)
        }
    }
}

/// Lowercases, deletes ASCII punctuation and splits on whitespace.
/// Duplicates are kept; set semantics are applied when the transaction is built.
pub fn tokenize_question(text: &str, config: &TokenizerConfig) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .to_lowercase();
    cleaned
        .split_whitespace()
        .filter(|t| !(config.remove_stopwords && config.is_stopword(t)))
        .map(str::to_string)
        .collect()
}

/// One line of the ingestion format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestRecord {
    pub record_id: String,
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codeword: Option<u32>,
}

impl IngestRecord {
    pub fn new(record_id: impl Into<String>, question: impl Into<String>, answer: impl Into<String>) -> Self {
        IngestRecord {
            record_id: record_id.into(),
            question: question.into(),
            answer: answer.into(),
            attention: None,
            feature: None,
            codeword: None,
        }
    }

    fn invalid(&self, reason: impl Into<String>) -> Error {
        Error::InvalidRecord {
            record_id: self.record_id.clone(),
            reason: reason.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.record_id.contains(['\t', '\n', '\r']) {
            return Err(self.invalid("record_id contains a tab or newline"));
        }
        if self.answer.trim().is_empty() {
            return Err(self.invalid("empty answer"));
        }
        if self.feature.is_some() && self.codeword.is_some() {
            return Err(self.invalid("both feature and codeword present"));
        }
        Ok(())
    }
}

/// Sorted, duplicate-free item ids of one triplet.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Transaction {
    items: Vec<ItemId>,
    source_id: String,
}

impl Transaction {
    /// Sorts and deduplicates `items`.
    pub fn new(source_id: impl Into<String>, mut items: Vec<ItemId>) -> Self {
        items.sort_unstable();
        items.dedup();
        Transaction {
            items,
            source_id: source_id.into(),
        }
    }

    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn contains(&self, id: ItemId) -> bool {
        self.items.binary_search(&id).is_ok()
    }

    pub fn contains_all(&self, ids: &[ItemId]) -> bool {
        ids.iter().all(|&id| self.contains(id))
    }
}

/// Encodes one record as a transaction: question-word ids, the visual word
/// (when given) and the whole answer as a single answer item.
pub fn build_transaction(
    vocab: &mut Vocabulary,
    record: &IngestRecord,
    visual_word: Option<u32>,
    tokenizer: &TokenizerConfig,
) -> Result<Transaction> {
    record.validate()?;
    let mut ids = Vec::new();
    for token in tokenize_question(&record.question, tokenizer) {
        ids.push(vocab.intern(&token, Modality::QuestionWord)?);
    }
    if let Some(cw) = visual_word {
        ids.push(vocab.intern_visual(cw)?);
    }
    let answer = vocab
        .intern(&record.answer, Modality::AnswerWord)
        .map_err(|e| match e {
            Error::InvalidRecord { reason, .. } => record.invalid(reason),
            other => other,
        })?;
    ids.push(answer);
    Ok(Transaction::new(record.record_id.clone(), ids))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransactionDb {
    vocabulary: Vocabulary,
    transactions: Vec<Transaction>,
}

impl TransactionDb {
    pub fn new(vocabulary: Vocabulary) -> Self {
        TransactionDb {
            vocabulary,
            transactions: Vec::new(),
        }
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn vocabulary_mut(&mut self) -> &mut Vocabulary {
        &mut self.vocabulary
    }

    pub fn transactions(&self) -> &[Transaction] {
        &self.transactions
    }

    pub fn len(&self) -> usize {
        self.transactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transactions.is_empty()
    }

    /// Appends a transaction after checking ids resolve and the per-modality
    /// counts (exactly one answer, at most one visual word).
    pub fn push(&mut self, transaction: Transaction) -> Result<()> {
        check_transaction(&self.vocabulary, &transaction).map_err(|reason| Error::InvalidRecord {
            record_id: transaction.source_id.clone(),
            reason,
        })?;
        self.transactions.push(transaction);
        Ok(())
    }

    /// Convenience wrapper around [`build_transaction`] + [`push`](Self::push).
    pub fn ingest(
        &mut self,
        record: &IngestRecord,
        visual_word: Option<u32>,
        tokenizer: &TokenizerConfig,
    ) -> Result<()> {
        let t = build_transaction(&mut self.vocabulary, record, visual_word, tokenizer)?;
        self.push(t)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{DB_MAGIC}\t{DB_VERSION}")?;
        let state = if self.vocabulary.frozen { "frozen" } else { "open" };
        writeln!(w, "vocab\t{}\t{}", self.vocabulary.len(), state)?;
        for (id, item) in self.vocabulary.iter() {
            writeln!(w, "{}\t{}\t{}", id, item.modality, item.token)?;
        }
        writeln!(w, "transactions\t{}", self.transactions.len())?;
        for t in &self.transactions {
            write!(w, "{}\t", t.source_id)?;
            for (i, id) in t.items.iter().enumerate() {
                if i > 0 {
                    w.write_all(b" ")?;
                }
                write!(w, "{id}")?;
            }
            w.write_all(b"\n")?;
        }
        writeln!(w, "end")?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((n, Ok(l))) => Ok((n, l)),
                Some((_, Err(e))) => Err(Error::Io(e)),
                None => Err(Error::MalformedDatabase {
                    line: 0,
                    reason: format!("unexpected end of file, expected {what}"),
                }),
            }
        };
        let bad = |line: usize, reason: String| Error::MalformedDatabase { line, reason };

        let (n, header) = next("header")?;
        if header != format!("{DB_MAGIC}\t{DB_VERSION}") {
            return Err(bad(n, format!("unrecognized header {header:?}")));
        }

        let (n, vline) = next("vocabulary header")?;
        let vparts: Vec<&str> = vline.split('\t').collect();
        let (vcount, frozen) = match vparts.as_slice() {
            ["vocab", count, state] => {
                let count: usize = count
                    .parse()
                    .map_err(|_| bad(n, format!("bad vocabulary count {count:?}")))?;
                let frozen = match *state {
                    "frozen" => true,
                    "open" => false,
                    s => return Err(bad(n, format!("bad vocabulary state {s:?}"))),
                };
                (count, frozen)
            }
            _ => return Err(bad(n, format!("expected vocabulary header, got {vline:?}"))),
        };

        let mut vocabulary = Vocabulary::new();
        for expected in 0..vcount {
            let (n, line) = next("vocabulary entry")?;
            let mut parts = line.splitn(3, '\t');
            let (id, modality, token) = match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), Some(c)) => (a, b, c),
                _ => return Err(bad(n, format!("expected id<TAB>modality<TAB>token, got {line:?}"))),
            };
            if id.parse::<usize>().ok() != Some(expected) {
                return Err(bad(n, format!("expected id {expected}, got {id:?}")));
            }
            let modality = Modality::parse(modality)
                .ok_or_else(|| bad(n, format!("unknown modality {modality:?}")))?;
            let got = vocabulary
                .intern(token, modality)
                .map_err(|e| bad(n, e.to_string()))?;
            if got.index() != expected {
                return Err(bad(n, format!("duplicate vocabulary entry {token:?}")));
            }
        }
        vocabulary.frozen = frozen;

        let (n, tline) = next("transaction header")?;
        let tcount: usize = match tline.split_once('\t') {
            Some(("transactions", c)) => c
                .parse()
                .map_err(|_| bad(n, format!("bad transaction count {c:?}")))?,
            _ => return Err(bad(n, format!("expected transaction header, got {tline:?}"))),
        };

        let mut db = TransactionDb::new(vocabulary);
        db.transactions.reserve(tcount);
        for _ in 0..tcount {
            let (n, line) = next("transaction")?;
            let (source, ids) = line
                .split_once('\t')
                .ok_or_else(|| bad(n, "expected source_id<TAB>ids".to_string()))?;
            let mut items = Vec::new();
            for tok in ids.split(' ').filter(|t| !t.is_empty()) {
                let id: u32 = tok.parse().map_err(|_| bad(n, format!("bad item id {tok:?}")))?;
                items.push(ItemId(id));
            }
            if items.windows(2).any(|w| w[0] >= w[1]) {
                return Err(bad(n, "item ids not strictly increasing".to_string()));
            }
            let t = Transaction {
                items,
                source_id: source.to_string(),
            };
            check_transaction(&db.vocabulary, &t).map_err(|r| bad(n, r))?;
            db.transactions.push(t);
        }

        let (n, end) = next("end marker")?;
        if end != "end" {
            return Err(bad(n, format!("expected end marker, got {end:?}")));
        }
        Ok(db)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = File::create(path)?;
        self.write_to(BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = File::open(path)?;
        Self::read_from(BufReader::new(f))
    }

    /// Short content hash of the serialized database.
    pub fn fingerprint(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        let digest = Sha256::digest(&buf);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn check_transaction(vocab: &Vocabulary, t: &Transaction) -> std::result::Result<(), String> {
    let mut answers = 0;
    let mut visuals = 0;
    for &id in &t.items {
        match vocab.modality(id) {
            None => return Err(format!("item id {id} not in vocabulary")),
            Some(Modality::AnswerWord) => answers += 1,
            Some(Modality::VisualWord) => visuals += 1,
            Some(Modality::QuestionWord) => {}
        }
    }
    if answers != 1 {
        return Err(format!("expected exactly one answer item, found {answers}"));
    }
    if visuals > 1 {
        return Err(format!("expected at most one visual item, found {visuals}"));
    }
    Ok(())
}
