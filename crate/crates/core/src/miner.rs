//! Frequent itemset mining over a vertical bitmap index.
//!
//! Each item owns a bit vector over transaction positions; the support of an
//! itemset is the popcount of the AND of its members' vectors. Mining is
//! levelwise (Apriori): level-k candidates are prefix joins of frequent
//! (k-1)-itemsets, pruned by downward closure before counting.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{ItemId, TransactionDb, Vocabulary};

/// Default absolute support used by the CLI when none is given.
pub const DEFAULT_SUPPORT: u64 = 30;
/// Largest item universe the brute-force oracle accepts by default.
pub const DEFAULT_ORACLE_CAP: usize = 20;

/// Serialized as a bare number (integer = count, real = fraction) or as a
/// string in the [`FromStr`] syntax.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SupportThreshold {
    /// At least this many transactions.
    Count(u64),
    /// At least this fraction of all transactions, in (0, 1].
    Fraction(f64),
}

impl SupportThreshold {
    /// Resolves to an absolute count. Fractions round up and never resolve
    /// below 1; a zero count is rejected.
    pub fn resolve(&self, transaction_count: usize) -> Result<u64> {
        match *self {
            SupportThreshold::Count(0) => Err(Error::InvalidThreshold("support count must be at least 1".into())),
            SupportThreshold::Count(c) => Ok(c),
            SupportThreshold::Fraction(f) => {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::InvalidThreshold(format!("support fraction {f} outside (0, 1]")));
                }
                // Slack absorbs representation error, e.g. 0.3 * 10.
                let raw = (f * transaction_count as f64 - 1e-9).ceil();
                Ok((raw as u64).max(1))
            }
        }
    }
}

impl fmt::Display for SupportThreshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SupportThreshold::Count(c) => write!(f, "{c}"),
            SupportThreshold::Fraction(x) => write!(f, "{}%", x * 100.0),
        }
    }
}

impl FromStr for SupportThreshold {
    type Err = Error;

    /// `"30"` is a count, `"5%"` and `"0.05"` are fractions.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidThreshold(format!("cannot parse support {s:?}"));
        let t = if let Some(pct) = s.strip_suffix('%') {
            let v: f64 = pct.trim().parse().map_err(|_| bad())?;
            SupportThreshold::Fraction(v / 100.0)
        } else if let Ok(c) = s.parse::<u64>() {
            SupportThreshold::Count(c)
        } else {
            SupportThreshold::Fraction(s.parse().map_err(|_| bad())?)
        };
        t.resolve(1)?;
        Ok(t)
    }
}

impl Serialize for SupportThreshold {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            SupportThreshold::Count(c) => s.serialize_u64(c),
            SupportThreshold::Fraction(f) => s.serialize_f64(f),
        }
    }
}

impl<'de> Deserialize<'de> for SupportThreshold {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u64),
            Fraction(f64),
            Text(String),
        }
        let t = match Raw::deserialize(d)? {
            Raw::Count(c) => SupportThreshold::Count(c),
            Raw::Fraction(f) => SupportThreshold::Fraction(f),
            Raw::Text(s) => return s.parse().map_err(serde::de::Error::custom),
        };
        t.resolve(1).map_err(serde::de::Error::custom)?;
        Ok(t)
    }
}

/// Per-item bit vectors over transaction positions.
#[derive(Debug, Clone)]
pub struct BitmapIndex {
    words: usize,
    item_count: usize,
    transaction_count: usize,
    bits: Vec<u64>,
}

impl BitmapIndex {
    pub fn build(db: &TransactionDb) -> Self {
        let transaction_count = db.len();
        let item_count = db.vocabulary().len();
        let words = transaction_count.div_ceil(64);
        let mut bits = vec![0u64; item_count * words];
        for (t, tx) in db.transactions().iter().enumerate() {
            let (w, mask) = (t / 64, 1u64 << (t % 64));
            for id in tx.items() {
                bits[id.index() * words + w] |= mask;
            }
        }
        BitmapIndex {
            words,
            item_count,
            transaction_count,
            bits,
        }
    }

    pub fn transaction_count(&self) -> usize {
        self.transaction_count
    }

    pub fn item_count(&self) -> usize {
        self.item_count
    }

    #[inline]
    pub fn bitmap(&self, id: ItemId) -> &[u64] {
        &self.bits[id.index() * self.words..(id.index() + 1) * self.words]
    }

    pub fn contains(&self, id: ItemId, transaction: usize) -> bool {
        self.bitmap(id)[transaction / 64] & (1 << (transaction % 64)) != 0
    }

    fn check(&self, items: &[ItemId]) -> Result<()> {
        match items.iter().find(|id| id.index() >= self.item_count) {
            Some(id) => Err(Error::UnknownItem(id.0)),
            None => Ok(()),
        }
    }

    /// Number of transactions containing every item; the empty set is
    /// contained in all of them.
    pub fn support(&self, items: &[ItemId]) -> Result<u64> {
        self.check(items)?;
        Ok(match items {
            [] => self.transaction_count as u64,
            [only] => popcount(self.bitmap(*only)),
            [first, rest @ ..] => {
                let mut acc = self.bitmap(*first).to_vec();
                for id in rest {
                    and_assign(&mut acc, self.bitmap(*id));
                }
                popcount(&acc)
            }
        })
    }

    /// Positions of transactions containing `id`, ascending.
    fn positions(&self, id: ItemId) -> impl Iterator<Item = usize> + '_ {
        self.bitmap(id).iter().enumerate().flat_map(|(w, &word)| {
            let mut word = word;
            std::iter::from_fn(move || {
                if word == 0 {
                    return None;
                }
                let bit = word.trailing_zeros() as usize;
                word &= word - 1;
                Some(w * 64 + bit)
            })
        })
    }
}

pub fn build_bitmap_index(db: &TransactionDb) -> BitmapIndex {
    BitmapIndex::build(db)
}

pub fn support(index: &BitmapIndex, items: &[ItemId]) -> Result<u64> {
    index.support(items)
}

#[inline]
fn popcount(words: &[u64]) -> u64 {
    words.iter().map(|w| w.count_ones() as u64).sum()
}

#[inline]
fn and_assign(acc: &mut [u64], other: &[u64]) {
    for (a, b) in acc.iter_mut().zip(other) {
        *a &= b;
    }
}

#[inline]
fn and_popcount(a: &[u64], b: &[u64]) -> u64 {
    a.iter().zip(b).map(|(x, y)| (x & y).count_ones() as u64).sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Itemset {
    pub items: Vec<ItemId>,
    pub support: u64,
}

/// All itemsets meeting a support threshold, ordered by size then ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequentItemsets {
    itemsets: Vec<Itemset>,
    min_support: u64,
    transaction_count: usize,
}

impl FrequentItemsets {
    pub fn new(mut itemsets: Vec<Itemset>, min_support: u64, transaction_count: usize) -> Self {
        itemsets.sort_by(|a, b| a.items.len().cmp(&b.items.len()).then_with(|| a.items.cmp(&b.items)));
        FrequentItemsets {
            itemsets,
            min_support,
            transaction_count,
        }
    }

    pub fn itemsets(&self) -> &[Itemset] {
        &self.itemsets
    }

    pub fn len(&self) -> usize {
        self.itemsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.itemsets.is_empty()
    }

    pub fn min_support(&self) -> u64 {
        self.min_support
    }

    pub fn transaction_count(&self) -> usize {
        self.transaction_count
    }

    pub fn support_map(&self) -> HashMap<&[ItemId], u64> {
        self.itemsets
            .iter()
            .map(|s| (s.items.as_slice(), s.support))
            .collect()
    }

    pub fn max_len(&self) -> usize {
        self.itemsets.last().map_or(0, |s| s.items.len())
    }

    /// One line per itemset: `support<TAB>space-separated display tokens`.
    pub fn write_dump<W: Write>(&self, vocab: &Vocabulary, mut w: W) -> Result<()> {
        for s in &self.itemsets {
            let tokens: Vec<String> = s.items.iter().map(|&id| vocab.display(id)).collect();
            writeln!(w, "{}\t{}", s.support, tokens.join(" "))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Levelwise mining of every non-empty itemset with support >= threshold.
pub fn mine_frequent(index: &BitmapIndex, threshold: SupportThreshold) -> Result<FrequentItemsets> {
    let min_support = threshold.resolve(index.transaction_count)?;
    let mut all: Vec<Itemset> = Vec::new();

    let level1: Vec<Itemset> = (0..index.item_count as u32)
        .into_par_iter()
        .map(ItemId)
        .filter_map(|id| {
            let s = popcount(index.bitmap(id));
            (s >= min_support).then(|| Itemset {
                items: vec![id],
                support: s,
            })
        })
        .collect();
    if level1.is_empty() {
        return Ok(FrequentItemsets::new(all, min_support, index.transaction_count));
    }

    let level2 = count_pairs(index, &level1, min_support);
    all.extend(level1);
    let mut previous = level2;

    while !previous.is_empty() {
        let next = next_level(index, &previous, min_support);
        all.append(&mut previous);
        previous = next;
    }
    Ok(FrequentItemsets::new(all, min_support, index.transaction_count))
}

/// Pair supports from a horizontal scan restricted to frequent items. For
/// each frequent item `a`, walk the transactions containing it and count the
/// frequent partners greater than `a`.
fn count_pairs(index: &BitmapIndex, level1: &[Itemset], min_support: u64) -> Vec<Itemset> {
    let frequent: Vec<ItemId> = level1.iter().map(|s| s.items[0]).collect();
    let mut rank = vec![u32::MAX; index.item_count];
    for (r, id) in frequent.iter().enumerate() {
        rank[id.index()] = r as u32;
    }

    // Horizontal projection: ranks of frequent items per transaction, ascending.
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); index.transaction_count];
    for (r, &id) in frequent.iter().enumerate() {
        for t in index.positions(id) {
            rows[t].push(r as u32);
        }
    }

    (0..frequent.len())
        .into_par_iter()
        .flat_map_iter(|a| {
            let mut counts = vec![0u64; frequent.len() - a - 1];
            for t in index.positions(frequent[a]) {
                let row = &rows[t];
                let start = row.partition_point(|&r| r as usize <= a);
                for &b in &row[start..] {
                    counts[b as usize - a - 1] += 1;
                }
            }
            let frequent = &frequent;
            counts.into_iter().enumerate().filter_map(move |(off, c)| {
                (c >= min_support).then(|| Itemset {
                    items: vec![frequent[a], frequent[a + 1 + off]],
                    support: c,
                })
            })
        })
        .collect()
}

/// Prefix-join of sorted (k-1)-itemsets, downward-closure pruning, bitmap
/// counting. `previous` must be in lexicographic order.
fn next_level(index: &BitmapIndex, previous: &[Itemset], min_support: u64) -> Vec<Itemset> {
    let k1 = previous[0].items.len();
    let known: HashSet<&[ItemId]> = previous.iter().map(|s| s.items.as_slice()).collect();

    // Runs of itemsets sharing their first k-2 items.
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for i in 1..=previous.len() {
        if i == previous.len() || previous[i].items[..k1 - 1] != previous[start].items[..k1 - 1] {
            groups.push((start, i));
            start = i;
        }
    }

    let tasks: Vec<(usize, usize)> = groups
        .iter()
        .flat_map(|&(s, e)| (s..e).map(move |i| (i, e)))
        .filter(|&(i, e)| i + 1 < e)
        .collect();

    tasks
        .into_par_iter()
        .flat_map_iter(|(i, end)| {
            let base_items = &previous[i].items;
            let mut base = index.bitmap(base_items[0]).to_vec();
            for &id in &base_items[1..] {
                and_assign(&mut base, index.bitmap(id));
            }
            let known = &known;
            (i + 1..end).filter_map(move |j| {
                let last = *previous[j].items.last().unwrap();
                let mut candidate = base_items.clone();
                candidate.push(last);
                // Subsets dropping one of the first k-1 items; the two that
                // drop the last or second-to-last item are the join parents.
                let mut probe = Vec::with_capacity(k1);
                for skip in 0..k1 - 1 {
                    probe.clear();
                    probe.extend(candidate.iter().enumerate().filter(|&(p, _)| p != skip).map(|(_, &id)| id));
                    if !known.contains(probe.as_slice()) {
                        return None;
                    }
                }
                let s = and_popcount(&base, index.bitmap(last));
                (s >= min_support).then_some(Itemset {
                    items: candidate,
                    support: s,
                })
            })
        })
        .collect()
}

/// Definitional oracle: every non-empty subset of the occurring items,
/// support counted by scanning the transactions.
pub fn brute_force_frequent(
    db: &TransactionDb,
    threshold: SupportThreshold,
    cap: usize,
) -> Result<FrequentItemsets> {
    let min_support = threshold.resolve(db.len())?;
    let universe = occurring_items(db);
    if universe.len() > cap {
        return Err(Error::OracleTooLarge {
            items: universe.len(),
            cap,
        });
    }
    let mut found = Vec::new();
    for mask in 1u64..(1u64 << universe.len()) {
        let items: Vec<ItemId> = universe
            .iter()
            .enumerate()
            .filter(|(b, _)| mask & (1 << b) != 0)
            .map(|(_, &id)| id)
            .collect();
        let support = db.transactions().iter().filter(|t| t.contains_all(&items)).count() as u64;
        if support >= min_support {
            found.push(Itemset { items, support });
        }
    }
    Ok(FrequentItemsets::new(found, min_support, db.len()))
}

pub(crate) fn occurring_items(db: &TransactionDb) -> Vec<ItemId> {
    let mut items: Vec<ItemId> = db
        .transactions()
        .iter()
        .flat_map(|t| t.items().iter().copied())
        .collect();
    items.sort_unstable();
    items.dedup();
    items
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::vocab::{Modality, Transaction};
    use proptest::prelude::*;

    /// Builds a db whose items are bare question words named by `names`,
    /// plus a shared answer item so each transaction is well-formed.
    pub(crate) fn letters_db(transactions: &[&[&str]]) -> (TransactionDb, HashMap<String, ItemId>) {
        let mut db = TransactionDb::default();
        let mut ids = HashMap::new();
        for names in transactions {
            for n in *names {
                let id = db.vocabulary_mut().intern(n, Modality::QuestionWord).unwrap();
                ids.insert(n.to_string(), id);
            }
        }
        let ans = db.vocabulary_mut().intern("x", Modality::AnswerWord).unwrap();
        for (i, names) in transactions.iter().enumerate() {
            let mut items: Vec<ItemId> = names.iter().map(|n| ids[*n]).collect();
            items.push(ans);
            db.push(Transaction::new(format!("t{i}"), items)).unwrap();
        }
        (db, ids)
    }

    /// Items 0..n as raw question words with no answer item; exercises the
    /// miner on arbitrary set systems.
    pub(crate) fn raw_db(transactions: &[Vec<u32>], n_items: u32) -> TransactionDb {
        let mut db = TransactionDb::default();
        for i in 0..n_items {
            db.vocabulary_mut()
                .intern(&format!("i{i}"), Modality::QuestionWord)
                .unwrap();
        }
        let ans = db.vocabulary_mut().intern("ans", Modality::AnswerWord).unwrap();
        for (t, items) in transactions.iter().enumerate() {
            let mut ids: Vec<ItemId> = items.iter().map(|&i| ItemId(i)).collect();
            ids.push(ans);
            db.push(Transaction::new(format!("{t}"), ids)).unwrap();
        }
        db
    }

    pub(crate) fn five() -> (TransactionDb, HashMap<String, ItemId>) {
        letters_db(&[&["a", "b", "c"], &["a", "b"], &["a", "c"], &["b", "c"], &["a", "b", "c"]])
    }

    fn ids(map: &HashMap<String, ItemId>, names: &[&str]) -> Vec<ItemId> {
        let mut v: Vec<ItemId> = names.iter().map(|n| map[*n]).collect();
        v.sort();
        v
    }

    #[test]
    fn support_serde_forms() {
        let parse = |s: &str| serde_json::from_str::<SupportThreshold>(s);
        assert_eq!(parse("30").unwrap(), SupportThreshold::Count(30));
        assert_eq!(parse("0.05").unwrap(), SupportThreshold::Fraction(0.05));
        assert_eq!(parse("\"5%\"").unwrap(), SupportThreshold::Fraction(0.05));
        assert!(parse("0").is_err());
        assert!(parse("1.5").is_err());
        let t = SupportThreshold::Count(7);
        assert_eq!(parse(&serde_json::to_string(&t).unwrap()).unwrap(), t);
    }

    #[test]
    fn bitmap_basics() {
        let (db, m) = letters_db(&[&["a", "b"]]);
        let idx = build_bitmap_index(&db);
        assert_eq!(idx.bitmap(m["a"]), &[1]);
        assert_eq!(idx.bitmap(m["b"]), &[1]);

        let (mut db, _) = letters_db(&[&["a"], &["a"]]);
        let z = db.vocabulary_mut().intern("z", Modality::QuestionWord).unwrap();
        let idx = build_bitmap_index(&db);
        assert!(idx.bitmap(z).iter().all(|&w| w == 0));
    }

    #[test]
    fn supports_on_five_transaction_db() {
        let (db, m) = five();
        let idx = build_bitmap_index(&db);
        assert_eq!(support(&idx, &ids(&m, &["a", "b"])).unwrap(), 3);
        assert_eq!(support(&idx, &ids(&m, &["a", "b", "c"])).unwrap(), 2);
        assert_eq!(support(&idx, &[]).unwrap(), 5);
        assert!(matches!(support(&idx, &[ItemId(99)]), Err(Error::UnknownItem(99))));
    }

    #[test]
    fn bitmap_popcounts_match_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let txs: Vec<Vec<u32>> = (0..50)
            .map(|_| (0..10).filter(|_| rng.random_bool(0.4)).collect())
            .collect();
        let db = raw_db(&txs, 10);
        let idx = build_bitmap_index(&db);
        for i in 0..10u32 {
            let direct = txs.iter().filter(|t| t.contains(&i)).count() as u64;
            assert_eq!(idx.support(&[ItemId(i)]).unwrap(), direct);
            for t in 0..50 {
                assert_eq!(idx.contains(ItemId(i), t), txs[t].contains(&i));
            }
        }
    }

    #[test]
    fn mines_five_transaction_db() {
        let (db, m) = five();
        let idx = build_bitmap_index(&db);
        let got = mine_frequent(&idx, SupportThreshold::Count(3)).unwrap();
        let mut expected = vec![
            (ids(&m, &["a"]), 4),
            (ids(&m, &["b"]), 4),
            (ids(&m, &["c"]), 4),
            (ids(&m, &["a", "b"]), 3),
            (ids(&m, &["a", "c"]), 3),
            (ids(&m, &["b", "c"]), 3),
        ];
        // The shared answer item "x" is in every transaction.
        let x = db.vocabulary().get("x", Modality::AnswerWord).unwrap();
        let with_x: Vec<_> = expected
            .iter()
            .map(|(s, c)| {
                let mut s = s.clone();
                s.push(x);
                s.sort();
                (s, *c)
            })
            .collect();
        expected.extend(with_x);
        expected.push((vec![x], 5));
        let expected = FrequentItemsets::new(
            expected
                .into_iter()
                .map(|(items, support)| Itemset { items, support })
                .collect(),
            3,
            5,
        );
        assert_eq!(got, expected);
    }

    #[test]
    fn threshold_edges() {
        let (db, _) = five();
        let idx = build_bitmap_index(&db);
        assert!(mine_frequent(&idx, SupportThreshold::Count(6)).unwrap().is_empty());
        assert!(matches!(
            mine_frequent(&idx, SupportThreshold::Count(0)),
            Err(Error::InvalidThreshold(_))
        ));

        let (db, m) = letters_db(&[&["a", "b"]]);
        let x = db.vocabulary().get("x", Modality::AnswerWord).unwrap();
        let got = mine_frequent(&build_bitmap_index(&db), SupportThreshold::Count(1)).unwrap();
        assert_eq!(got.len(), 7);
        assert!(got.itemsets().iter().all(|s| s.support == 1));
        assert!(got.itemsets().iter().any(|s| s.items == ids(&m, &["a", "b"])));
        assert!(got.itemsets().iter().any(|s| s.items.len() == 3 && s.items.contains(&x)));
    }

    #[test]
    fn threshold_parsing_and_resolution() {
        assert_eq!("30".parse::<SupportThreshold>().unwrap(), SupportThreshold::Count(30));
        assert_eq!("5%".parse::<SupportThreshold>().unwrap(), SupportThreshold::Fraction(0.05));
        assert_eq!("0.25".parse::<SupportThreshold>().unwrap(), SupportThreshold::Fraction(0.25));
        assert!("0".parse::<SupportThreshold>().is_err());
        assert!("150%".parse::<SupportThreshold>().is_err());
        assert!("abc".parse::<SupportThreshold>().is_err());
        assert_eq!(SupportThreshold::Fraction(0.3).resolve(10).unwrap(), 3);
        assert_eq!(SupportThreshold::Fraction(0.31).resolve(10).unwrap(), 4);
        assert_eq!(SupportThreshold::Fraction(0.01).resolve(10).unwrap(), 1);
        assert_eq!(SupportThreshold::Fraction(0.5).resolve(0).unwrap(), 1);
        assert_eq!(SupportThreshold::Fraction(1.0).resolve(200_000).unwrap(), 200_000);
    }

    #[test]
    fn oracle_basics() {
        let empty = TransactionDb::default();
        assert!(brute_force_frequent(&empty, SupportThreshold::Count(1), 20)
            .unwrap()
            .is_empty());

        let (db, m) = letters_db(&[&["a"]]);
        let got = brute_force_frequent(&db, SupportThreshold::Count(1), 20).unwrap();
        assert!(got.itemsets().contains(&Itemset {
            items: ids(&m, &["a"]),
            support: 1
        }));

        let (db, _) = five();
        for s in 1..=5 {
            let t = SupportThreshold::Count(s);
            assert_eq!(
                mine_frequent(&build_bitmap_index(&db), t).unwrap(),
                brute_force_frequent(&db, t, 20).unwrap()
            );
        }
        assert!(matches!(
            brute_force_frequent(&db, SupportThreshold::Count(1), 2),
            Err(Error::OracleTooLarge { items: 4, cap: 2 })
        ));
    }

    #[test]
    fn dump_format() {
        let (db, _) = five();
        let got = mine_frequent(&build_bitmap_index(&db), SupportThreshold::Count(5)).unwrap();
        let mut out = Vec::new();
        got.write_dump(db.vocabulary(), &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "5\tx*\n");
    }

    #[test]
    fn independent_of_thread_count() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let txs: Vec<Vec<u32>> = (0..300)
            .map(|_| (0..30).filter(|_| rng.random_bool(0.3)).collect())
            .collect();
        let db = raw_db(&txs, 30);
        let idx = build_bitmap_index(&db);
        let run = |n| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .unwrap()
                .install(|| mine_frequent(&idx, SupportThreshold::Count(10)).unwrap())
        };
        assert_eq!(run(1), run(6));
    }

    fn db_strategy() -> impl Strategy<Value = (Vec<Vec<u32>>, u32)> {
        (1u32..=10).prop_flat_map(|n| {
            (
                proptest::collection::vec(proptest::collection::btree_set(0..n, 0..=n as usize), 0..=20)
                    .prop_map(|ts| ts.into_iter().map(|s| s.into_iter().collect()).collect()),
                Just(n),
            )
        })
    }

    proptest! {
        #[test]
        fn matches_oracle((txs, n) in db_strategy(), s in 1u64..6) {
            let db = raw_db(&txs, n);
            let t = SupportThreshold::Count(s);
            let mined = mine_frequent(&build_bitmap_index(&db), t).unwrap();
            prop_assert_eq!(&mined, &brute_force_frequent(&db, t, 20).unwrap());
        }

        #[test]
        fn downward_closed((txs, n) in db_strategy(), s in 1u64..4) {
            let db = raw_db(&txs, n);
            let idx = build_bitmap_index(&db);
            let mined = mine_frequent(&idx, SupportThreshold::Count(s)).unwrap();
            let map = mined.support_map();
            for set in mined.itemsets() {
                for skip in 0..set.items.len() {
                    if set.items.len() == 1 { break; }
                    let sub: Vec<ItemId> = set.items.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, &x)| x).collect();
                    let sub_support = map.get(sub.as_slice()).copied();
                    prop_assert!(sub_support.is_some_and(|v| v >= set.support));
                }
                prop_assert_eq!(idx.support(&set.items).unwrap(), set.support);
            }
        }
    }
}
