//! Association rules `A -> C` from frequent itemsets, the question/image ->
//! answer post-filter, and ranked keyword queries.
//!
//! Thresholds are inclusive. Confidence is kept as the exact count pair
//! `support(A u C) / support(A)` and compared against the threshold in
//! integer arithmetic, so a rule with confidence exactly 1/5 passes `c = 0.2`.

use std::cmp::Ordering;
use std::collections::HashMap;

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::miner::{occurring_items, FrequentItemsets, SupportThreshold, DEFAULT_SUPPORT};
use crate::vocab::{tokenize_question, ItemId, Modality, TokenizerConfig, TransactionDb, Vocabulary};

pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.2;

const PPB: u64 = 1_000_000_000;

/// Minimum confidence in (0, 1], stored in parts per billion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConfidenceThreshold {
    ppb: u64,
}

impl ConfidenceThreshold {
    pub fn new(value: f64) -> Result<Self> {
        if !(value > 0.0 && value <= 1.0) {
            return Err(Error::InvalidConfidence(format!("{value} outside (0, 1]")));
        }
        let ppb = (value * PPB as f64).round() as u64;
        if ppb == 0 {
            return Err(Error::InvalidConfidence(format!("{value} below resolution 1e-9")));
        }
        Ok(ConfidenceThreshold { ppb })
    }

    pub fn value(&self) -> f64 {
        self.ppb as f64 / PPB as f64
    }

    /// `numerator / denominator >= threshold`, exactly.
    pub fn admits(&self, numerator: u64, denominator: u64) -> bool {
        denominator > 0 && numerator as u128 * PPB as u128 >= self.ppb as u128 * denominator as u128
    }
}

impl Default for ConfidenceThreshold {
    fn default() -> Self {
        ConfidenceThreshold::new(DEFAULT_MIN_CONFIDENCE).unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AssociationRule {
    pub antecedent: Vec<ItemId>,
    pub consequent: Vec<ItemId>,
    /// Transactions containing antecedent and consequent.
    pub support: u64,
    /// Transactions containing the antecedent; confidence denominator.
    pub antecedent_support: u64,
}

impl AssociationRule {
    pub fn confidence(&self) -> f64 {
        self.support as f64 / self.antecedent_support as f64
    }

    /// Compares confidences exactly by cross-multiplication.
    pub fn cmp_confidence(&self, other: &AssociationRule) -> Ordering {
        let lhs = self.support as u128 * other.antecedent_support as u128;
        let rhs = other.support as u128 * self.antecedent_support as u128;
        lhs.cmp(&rhs)
    }

    pub fn items(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.antecedent.iter().chain(&self.consequent).copied()
    }

    fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.antecedent
            .cmp(&other.antecedent)
            .then_with(|| self.consequent.cmp(&other.consequent))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleConfig {
    pub min_confidence: ConfidenceThreshold,
    pub min_support: SupportThreshold,
    pub max_consequent_size: usize,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig {
            min_confidence: ConfidenceThreshold::default(),
            min_support: SupportThreshold::Count(DEFAULT_SUPPORT),
            max_consequent_size: 1,
        }
    }
}

impl Serialize for ConfidenceThreshold {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for ConfidenceThreshold {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        ConfidenceThreshold::new(v).map_err(serde::de::Error::custom)
    }
}

/// Thresholds and input identity a rule set was produced under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub min_support: u64,
    pub min_confidence: ConfidenceThreshold,
    pub max_consequent_size: usize,
    pub transaction_count: usize,
    #[serde(default)]
    pub db_fingerprint: String,
    #[serde(default)]
    pub causal_filtered: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSet {
    rules: Vec<AssociationRule>,
    provenance: Provenance,
}

impl RuleSet {
    /// Sorts into canonical (antecedent, consequent) order and rejects
    /// duplicate pairs.
    pub fn new(mut rules: Vec<AssociationRule>, provenance: Provenance) -> Result<Self> {
        rules.sort_by(AssociationRule::canonical_cmp);
        if let Some(w) = rules.windows(2).find(|w| w[0].canonical_cmp(&w[1]) == Ordering::Equal) {
            return Err(Error::IncompleteLattice(format!(
                "duplicate rule {:?} -> {:?}",
                w[0].antecedent, w[0].consequent
            )));
        }
        Ok(RuleSet { rules, provenance })
    }

    pub fn rules(&self) -> &[AssociationRule] {
        &self.rules
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn with_fingerprint(mut self, fingerprint: impl Into<String>) -> Self {
        self.provenance.db_fingerprint = fingerprint.into();
        self
    }
}

fn provenance(config: &RuleConfig, min_support: u64, transaction_count: usize) -> Provenance {
    Provenance {
        min_support,
        min_confidence: config.min_confidence,
        max_consequent_size: config.max_consequent_size,
        transaction_count,
        db_fingerprint: String::new(),
        causal_filtered: false,
    }
}

/// Emits `F \ C -> C` for every frequent `F` with `|F| >= 2` and every
/// non-empty proper subset `C` of at most `max_consequent_size` items whose
/// confidence meets the threshold.
pub fn generate_rules(frequent: &FrequentItemsets, config: &RuleConfig) -> Result<RuleSet> {
    if config.max_consequent_size == 0 {
        return Err(Error::InvalidConfig("max_consequent_size must be at least 1".into()));
    }
    let min_support = config.min_support.resolve(frequent.transaction_count())?;
    if min_support < frequent.min_support() {
        return Err(Error::IncompleteLattice(format!(
            "rule support {min_support} is below the mining threshold {}",
            frequent.min_support()
        )));
    }
    let supports = frequent.support_map();

    let rules: Vec<Result<Vec<AssociationRule>>> = frequent
        .itemsets()
        .par_iter()
        .filter(|f| f.items.len() >= 2 && f.support >= min_support)
        .map(|f| {
            let mut out = Vec::new();
            let max_c = config.max_consequent_size.min(f.items.len() - 1);
            for size in 1..=max_c {
                for consequent in f.items.iter().copied().combinations(size) {
                    let antecedent: Vec<ItemId> =
                        f.items.iter().copied().filter(|id| !consequent.contains(id)).collect();
                    let ant_support = *supports.get(antecedent.as_slice()).ok_or_else(|| {
                        Error::IncompleteLattice(format!("missing support for {antecedent:?}"))
                    })?;
                    if config.min_confidence.admits(f.support, ant_support) {
                        out.push(AssociationRule {
                            antecedent,
                            consequent,
                            support: f.support,
                            antecedent_support: ant_support,
                        });
                    }
                }
            }
            Ok(out)
        })
        .collect();

    let mut all = Vec::new();
    for r in rules {
        all.extend(r?);
    }
    RuleSet::new(all, provenance(config, min_support, frequent.transaction_count()))
}

/// Keeps rules of the form question/visual words -> answer words.
pub fn causal_filter(rules: &RuleSet, vocab: &Vocabulary) -> RuleSet {
    let keep = |r: &AssociationRule| {
        r.consequent
            .iter()
            .all(|&id| vocab.modality(id) == Some(Modality::AnswerWord))
            && r.antecedent.iter().all(|&id| {
                matches!(
                    vocab.modality(id),
                    Some(Modality::QuestionWord) | Some(Modality::VisualWord)
                )
            })
    };
    let mut provenance = rules.provenance.clone();
    provenance.causal_filtered = true;
    RuleSet {
        rules: rules.rules.iter().filter(|r| keep(r)).cloned().collect(),
        provenance,
    }
}

/// Ranking used by [`query_rules`]: confidence desc, support desc, then
/// canonical order.
pub fn rank_cmp(a: &AssociationRule, b: &AssociationRule) -> Ordering {
    b.cmp_confidence(a)
        .then_with(|| b.support.cmp(&a.support))
        .then_with(|| a.canonical_cmp(b))
}

/// Rules whose antecedent contains every query term as a question word,
/// ranked. A term missing from the vocabulary matches nothing.
pub fn query_rules<'a, S: AsRef<str>>(
    rules: &'a RuleSet,
    vocab: &Vocabulary,
    terms: &[S],
) -> Vec<&'a AssociationRule> {
    let tokenizer = TokenizerConfig::default();
    let mut wanted = Vec::new();
    for term in terms {
        for token in tokenize_question(term.as_ref(), &tokenizer) {
            match vocab.get(&token, Modality::QuestionWord) {
                Some(id) => wanted.push(id),
                None => return Vec::new(),
            }
        }
    }
    let mut hits: Vec<&AssociationRule> = rules
        .rules
        .iter()
        .filter(|r| wanted.iter().all(|id| r.antecedent.binary_search(id).is_ok()))
        .collect();
    hits.sort_by(|a, b| rank_cmp(a, b));
    hits
}

/// Definitional oracle: every disjoint (A, C) pair over the occurring items,
/// supports counted by scanning transactions.
pub fn brute_force_rules(db: &TransactionDb, config: &RuleConfig, cap: usize) -> Result<RuleSet> {
    let min_support = config.min_support.resolve(db.len())?;
    let universe = occurring_items(db);
    if universe.len() > cap {
        return Err(Error::OracleTooLarge {
            items: universe.len(),
            cap,
        });
    }
    let n = universe.len();
    let to_items = |mask: u32| -> Vec<ItemId> {
        (0..n).filter(|b| mask & (1 << b) != 0).map(|b| universe[b]).collect()
    };
    let mut support_of: HashMap<u32, u64> = HashMap::new();
    let mut count = |mask: u32| -> u64 {
        *support_of.entry(mask).or_insert_with(|| {
            let items = to_items(mask);
            db.transactions().iter().filter(|t| t.contains_all(&items)).count() as u64
        })
    };

    let mut rules = Vec::new();
    let full: u32 = if n == 0 { 0 } else { (1u32 << n) - 1 };
    for antecedent in 1..=full {
        let rest = full & !antecedent;
        // Non-empty submasks of the complement.
        let mut consequent = rest;
        while consequent != 0 {
            if consequent.count_ones() as usize <= config.max_consequent_size {
                let union = count(antecedent | consequent);
                if union >= min_support {
                    let ant = count(antecedent);
                    if config.min_confidence.admits(union, ant) {
                        rules.push(AssociationRule {
                            antecedent: to_items(antecedent),
                            consequent: to_items(consequent),
                            support: union,
                            antecedent_support: ant,
                        });
                    }
                }
            }
            consequent = (consequent - 1) & rest;
        }
    }
    RuleSet::new(rules, provenance(config, min_support, db.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::miner::tests::{five, letters_db, raw_db};
    use crate::miner::{build_bitmap_index, mine_frequent};
    use proptest::prelude::*;

    fn cfg(s: u64, c: f64, max: usize) -> RuleConfig {
        RuleConfig {
            min_confidence: ConfidenceThreshold::new(c).unwrap(),
            min_support: SupportThreshold::Count(s),
            max_consequent_size: max,
        }
    }

    fn mined_rules(db: &TransactionDb, config: &RuleConfig) -> RuleSet {
        let frequent = mine_frequent(&build_bitmap_index(db), config.min_support).unwrap();
        generate_rules(&frequent, config).unwrap()
    }

    #[test]
    fn confidence_threshold_is_exact() {
        let c = ConfidenceThreshold::new(0.2).unwrap();
        assert!(c.admits(1, 5));
        assert!(!c.admits(199_999_999, 1_000_000_000));
        assert!(c.admits(3, 4));
        assert!(!c.admits(0, 0));
        assert!(ConfidenceThreshold::new(0.0).is_err());
        assert!(ConfidenceThreshold::new(1.5).is_err());
        assert!(ConfidenceThreshold::new(1.0).unwrap().admits(7, 7));
    }

    #[test]
    fn five_transaction_rules() {
        let (db, m) = five();
        let rules = mined_rules(&db, &cfg(3, 0.7, 1));
        let ab = rules
            .rules()
            .iter()
            .find(|r| r.antecedent == vec![m["a"]] && r.consequent == vec![m["b"]])
            .expect("a -> b");
        assert_eq!((ab.support, ab.antecedent_support), (3, 4));
        assert_eq!(ab.confidence(), 0.75);
        let mut abc = vec![m["a"], m["b"]];
        abc.sort();
        assert!(!rules
            .rules()
            .iter()
            .any(|r| r.antecedent == abc && r.consequent == vec![m["c"]]));
    }

    #[test]
    fn perfect_implication() {
        let (db, m) = letters_db(&[&["a", "b"], &["a", "b"], &["b"], &["c"]]);
        let rules = mined_rules(&db, &cfg(1, 1.0, 1));
        let r = rules
            .rules()
            .iter()
            .find(|r| r.antecedent == vec![m["a"]] && r.consequent == vec![m["b"]])
            .unwrap();
        assert_eq!(r.confidence(), 1.0);
        assert!(!rules
            .rules()
            .iter()
            .any(|r| r.antecedent == vec![m["b"]] && r.consequent == vec![m["a"]]));
    }

    #[test]
    fn incomplete_lattice_detected() {
        let (db, _) = five();
        let frequent = mine_frequent(&build_bitmap_index(&db), SupportThreshold::Count(3)).unwrap();
        assert!(matches!(
            generate_rules(&frequent, &cfg(2, 0.5, 1)),
            Err(Error::IncompleteLattice(_))
        ));
        let truncated = FrequentItemsets::new(
            frequent.itemsets().iter().filter(|s| s.items.len() != 1).cloned().collect(),
            3,
            5,
        );
        assert!(matches!(
            generate_rules(&truncated, &cfg(3, 0.5, 1)),
            Err(Error::IncompleteLattice(_))
        ));
    }

    #[test]
    fn oracle_agrees_on_five_db() {
        let (db, _) = five();
        for s in 1..=5 {
            for c in [0.2, 0.5, 0.8] {
                for max in [1, 2, 3] {
                    let config = cfg(s, c, max);
                    assert_eq!(mined_rules(&db, &config), brute_force_rules(&db, &config, 20).unwrap());
                }
            }
        }
        let empty = TransactionDb::default();
        assert!(brute_force_rules(&empty, &cfg(1, 0.2, 1), 20).unwrap().is_empty());
    }

    fn vqa_db() -> TransactionDb {
        use crate::vocab::IngestRecord;
        let mut db = TransactionDb::default();
        let tk = TokenizerConfig::default();
        for i in 0..6 {
            db.ingest(&IngestRecord::new(format!("s{i}"), "what sport is he playing", "tennis"), Some(12), &tk)
                .unwrap();
        }
        for i in 0..4 {
            db.ingest(&IngestRecord::new(format!("c{i}"), "what color is the grass", "green"), Some(0), &tk)
                .unwrap();
        }
        db
    }

    #[test]
    fn causal_filter_keeps_question_to_answer() {
        let db = vqa_db();
        let v = db.vocabulary();
        let q = |w: &str| v.get(w, Modality::QuestionWord).unwrap();
        let a = |w: &str| v.get(w, Modality::AnswerWord).unwrap();
        let vis = v.get("v:12", Modality::VisualWord).unwrap();
        let mut ant = vec![q("what"), q("sport"), q("playing"), vis];
        ant.sort();
        let keep = AssociationRule {
            antecedent: ant,
            consequent: vec![a("tennis")],
            support: 6,
            antecedent_support: 6,
        };
        let answer_first = AssociationRule {
            antecedent: vec![a("green")],
            consequent: vec![q("what")],
            support: 4,
            antecedent_support: 4,
        };
        let mut cons = vec![q("grass"), a("green")];
        cons.sort();
        let mixed = AssociationRule {
            antecedent: vec![q("what"), q("color")],
            consequent: cons,
            support: 4,
            antecedent_support: 4,
        };
        let set = RuleSet::new(
            vec![keep.clone(), answer_first, mixed],
            provenance(&RuleConfig::default(), 1, 10),
        )
        .unwrap();
        let filtered = causal_filter(&set, v);
        assert_eq!(filtered.rules(), &[keep]);
        assert!(filtered.provenance().causal_filtered);
        assert_eq!(causal_filter(&filtered, v), filtered);
    }

    #[test]
    fn queries() {
        let db = vqa_db();
        let v = db.vocabulary();
        let rules = causal_filter(&mined_rules(&db, &cfg(2, 0.5, 1)), v);
        let hits = query_rules(&rules, v, &["What", "sport"]);
        assert!(!hits.is_empty());
        let sport = v.get("sport", Modality::QuestionWord).unwrap();
        let color = v.get("color", Modality::QuestionWord).unwrap();
        assert!(hits.iter().all(|r| r.antecedent.contains(&sport)));
        assert!(hits.iter().all(|r| !r.antecedent.contains(&color)));
        let full = {
            let mut ant: Vec<ItemId> = ["what", "sport", "playing"]
                .iter()
                .map(|w| v.get(w, Modality::QuestionWord).unwrap())
                .collect();
            ant.push(v.get("v:12", Modality::VisualWord).unwrap());
            ant.sort();
            ant
        };
        assert!(hits.iter().any(|r| r.antecedent == full
            && r.consequent == vec![v.get("tennis", Modality::AnswerWord).unwrap()]));

        let none: &[&str] = &[];
        assert_eq!(query_rules(&rules, v, none).len(), rules.len());
        assert!(query_rules(&rules, v, &["zebra"]).is_empty());
        assert!(query_rules(&rules, v, &["what", "zebra"]).is_empty());
    }

    #[test]
    fn ranking_order() {
        let mk = |s, a, ant: u32| AssociationRule {
            antecedent: vec![ItemId(ant)],
            consequent: vec![ItemId(9)],
            support: s,
            antecedent_support: a,
        };
        let mut v = [mk(2, 4, 1), mk(3, 3, 2), mk(4, 8, 0), mk(1, 1, 3)];
        v.sort_by(rank_cmp);
        let order: Vec<u32> = v.iter().map(|r| r.antecedent[0].0).collect();
        assert_eq!(order, vec![2, 3, 0, 1]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn generated_matches_oracle(
            txs in proptest::collection::vec(proptest::collection::btree_set(0u32..7, 0..=7), 0..=15),
            s in 1u64..5,
            c in prop_oneof![Just(0.2), Just(0.5), Just(0.8), 0.01f64..=1.0],
            max in 1usize..4,
        ) {
            let txs: Vec<Vec<u32>> = txs.into_iter().map(|t| t.into_iter().collect()).collect();
            let db = raw_db(&txs, 7);
            let config = cfg(s, c, max);
            let mined = mined_rules(&db, &config);
            prop_assert_eq!(&mined, &brute_force_rules(&db, &config, 20).unwrap());
            let idx = build_bitmap_index(&db);
            for r in mined.rules() {
                prop_assert_eq!(idx.support(&r.antecedent).unwrap(), r.antecedent_support);
                let mut union: Vec<ItemId> = r.items().collect();
                union.sort();
                prop_assert_eq!(idx.support(&union).unwrap(), r.support);
                prop_assert!(config.min_confidence.admits(r.support, r.antecedent_support));
            }
        }

        #[test]
        fn confidence_anti_monotone(
            txs in proptest::collection::vec(proptest::collection::btree_set(0u32..6, 1..=6), 1..=12),
        ) {
            let txs: Vec<Vec<u32>> = txs.into_iter().map(|t| t.into_iter().collect()).collect();
            let db = raw_db(&txs, 6);
            let idx = build_bitmap_index(&db);
            // Moving an item from A to C never raises confidence for fixed A u C.
            let all: Vec<ItemId> = (0..6).map(ItemId).collect();
            for size in 2..=4 {
                for union in all.iter().copied().combinations(size) {
                    let total = idx.support(&union).unwrap();
                    for cons in union.iter().copied().combinations(1) {
                        let ant: Vec<ItemId> = union.iter().copied().filter(|x| !cons.contains(x)).collect();
                        let a1 = idx.support(&ant).unwrap();
                        for moved in &ant {
                            let ant2: Vec<ItemId> = ant.iter().copied().filter(|x| x != moved).collect();
                            let a2 = idx.support(&ant2).unwrap();
                            // total/a2 <= total/a1  <=>  total*a1 <= total*a2
                            prop_assert!(total * a1 <= total * a2);
                        }
                    }
                }
            }
        }

        #[test]
        fn query_refinement_is_subset(
            txs in proptest::collection::vec(proptest::collection::btree_set(0u32..6, 1..=6), 1..=12),
            terms in proptest::collection::vec(0u32..6, 0..4),
        ) {
            let txs: Vec<Vec<u32>> = txs.into_iter().map(|t| t.into_iter().collect()).collect();
            let db = raw_db(&txs, 6);
            let rules = mined_rules(&db, &cfg(1, 0.2, 1));
            let words: Vec<String> = terms.iter().map(|t| format!("i{t}")).collect();
            for cut in 0..words.len() {
                let longer: Vec<_> = query_rules(&rules, db.vocabulary(), &words[..cut + 1]);
                let shorter: Vec<_> = query_rules(&rules, db.vocabulary(), &words[..cut]);
                prop_assert!(longer.iter().all(|r| shorter.contains(r)));
            }
        }

        #[test]
        fn causal_filter_idempotent(
            txs in proptest::collection::vec(proptest::collection::btree_set(0u32..6, 1..=6), 1..=12),
        ) {
            let txs: Vec<Vec<u32>> = txs.into_iter().map(|t| t.into_iter().collect()).collect();
            let db = raw_db(&txs, 6);
            let rules = mined_rules(&db, &cfg(1, 0.2, 2));
            let once = causal_filter(&rules, db.vocabulary());
            prop_assert_eq!(&causal_filter(&once, db.vocabulary()), &once);
            // Order-preserving: the filtered rules are a subsequence.
            let mut it = rules.rules().iter();
            prop_assert!(once.rules().iter().all(|r| it.any(|x| x == r)));
        }
    }
}
