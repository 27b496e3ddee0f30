//! C ABI over the biasmine library.
//!
//! Every fallible function returns a [`BmStatus`]; on failure a message for
//! the calling thread is available from [`bm_last_error`]. Handles are
//! opaque, owned by the caller, and released with their `_free` function.
//! Strings returned through `char **` out-parameters are released with
//! [`bm_string_free`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use biasmine::report::{emit_report, table_row, ReportFormat};
use biasmine::rules::{causal_filter, generate_rules, ConfidenceThreshold, RuleConfig};
use biasmine::{
    build_bitmap_index, mine_frequent, min_enclosing_box, num_bboxes, AttentionMap, Codebook, CropConfig, Error,
    RuleSet, SupportThreshold, TransactionDb, Vocabulary,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BmStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Data = 4,
    Panic = 5,
}

/// Inclusive cell bounds of a crop.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BmBox {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

/// Counts of one rule; confidence is `support / antecedent_support`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BmRule {
    pub support: u64,
    pub antecedent_support: u64,
    pub antecedent_len: usize,
    pub consequent_len: usize,
}

pub struct BmCodebook(Codebook);

pub struct BmDatabase(TransactionDb);

pub struct BmRuleSet {
    rules: RuleSet,
    vocab: Vocabulary,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> BmStatus {
    match e {
        Error::Io(_) => BmStatus::Io,
        Error::InvalidConfig(_)
        | Error::InvalidThreshold(_)
        | Error::InvalidConfidence(_)
        | Error::InvalidTau(_)
        | Error::InvalidFormat(_)
        | Error::InvalidDimension { .. }
        | Error::InvalidAttention(_) => BmStatus::InvalidArgument,
        _ => BmStatus::Data,
    }
}

struct Null(&'static str);

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<Null> for Failure {
    fn from(n: Null) -> Self {
        Failure::Null(n.0)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BmStatus::Ok,
        Ok(Err(Failure::Null(name))) => {
            set_error(format!("{name} is null"));
            BmStatus::NullArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            BmStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Null> {
    p.as_ref().ok_or(Null(name))
}

unsafe fn out<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Null> {
    p.as_mut().ok_or(Null(name))
}

unsafe fn c_str<'a>(p: *const c_char, name: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Lib(Error::InvalidConfig(format!("{name} is not UTF-8"))))
}

unsafe fn f64_slice<'a>(p: *const f64, len: usize, name: &'static str) -> Result<&'a [f64], Null> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Null(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub unsafe extern "C" fn bm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Number of axis-aligned boxes on an `m` by `n` grid.
#[no_mangle]
pub unsafe extern "C" fn bm_num_bboxes(m: usize, n: usize, count: *mut u64) -> BmStatus {
    guard(|| {
        *out(count, "count")? = num_bboxes(m, n)?;
        Ok(())
    })
}

/// Smallest box holding at least `tau` of the mass of a row-major grid.
#[no_mangle]
pub unsafe extern "C" fn bm_min_enclosing_box(
    values: *const f64,
    rows: usize,
    cols: usize,
    tau: f64,
    result: *mut BmBox,
) -> BmStatus {
    guard(|| {
        let result = out(result, "result")?;
        let cells = rows.checked_mul(cols).ok_or(Error::InvalidDimension { rows, cols })?;
        let values = f64_slice(values, cells, "values")?;
        let map = AttentionMap::new(rows, cols, values.to_vec())?;
        let b = min_enclosing_box(&map, &CropConfig::new(tau)?)?;
        *result = BmBox {
            top: b.top,
            left: b.left,
            bottom: b.bottom,
            right: b.right,
        };
        Ok(())
    })
}

/// Codebook from `k * dim` row-major centroid values.
#[no_mangle]
pub unsafe extern "C" fn bm_codebook_new(
    centroids: *const f64,
    k: usize,
    dim: usize,
    codebook: *mut *mut BmCodebook,
) -> BmStatus {
    guard(|| {
        let slot = out(codebook, "codebook")?;
        let len = k.checked_mul(dim).ok_or(Error::InvalidConfig("k * dim overflows".into()))?;
        let values = f64_slice(centroids, len, "centroids")?;
        *slot = Box::into_raw(Box::new(BmCodebook(Codebook::new(k, dim, values.to_vec())?)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn bm_codebook_load(path: *const c_char, codebook: *mut *mut BmCodebook) -> BmStatus {
    guard(|| {
        let slot = out(codebook, "codebook")?;
        let cb = Codebook::load(c_str(path, "path")?)?;
        *slot = Box::into_raw(Box::new(BmCodebook(cb)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn bm_codebook_save(codebook: *const BmCodebook, path: *const c_char) -> BmStatus {
    guard(|| {
        deref(codebook, "codebook")?.0.save(c_str(path, "path")?)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn bm_codebook_k(codebook: *const BmCodebook) -> usize {
    codebook.as_ref().map_or(0, |c| c.0.k())
}

#[no_mangle]
pub unsafe extern "C" fn bm_codebook_dim(codebook: *const BmCodebook) -> usize {
    codebook.as_ref().map_or(0, |c| c.0.dim())
}

/// Nearest centroid by squared distance; ties go to the smallest index.
#[no_mangle]
pub unsafe extern "C" fn bm_codebook_assign(
    codebook: *const BmCodebook,
    feature: *const f64,
    len: usize,
    codeword: *mut u32,
) -> BmStatus {
    guard(|| {
        let cb = deref(codebook, "codebook")?;
        let slot = out(codeword, "codeword")?;
        *slot = cb.0.assign(f64_slice(feature, len, "feature")?)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn bm_codebook_free(codebook: *mut BmCodebook) {
    if !codebook.is_null() {
        drop(Box::from_raw(codebook));
    }
}

#[no_mangle]
pub unsafe extern "C" fn bm_db_load(path: *const c_char, db: *mut *mut BmDatabase) -> BmStatus {
    guard(|| {
        let slot = out(db, "db")?;
        let loaded = TransactionDb::load(c_str(path, "path")?)?;
        *slot = Box::into_raw(Box::new(BmDatabase(loaded)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn bm_db_transaction_count(db: *const BmDatabase) -> usize {
    db.as_ref().map_or(0, |d| d.0.len())
}

#[no_mangle]
pub unsafe extern "C" fn bm_db_item_count(db: *const BmDatabase) -> usize {
    db.as_ref().map_or(0, |d| d.0.vocabulary().len())
}

#[no_mangle]
pub unsafe extern "C" fn bm_db_free(db: *mut BmDatabase) {
    if !db.is_null() {
        drop(Box::from_raw(db));
    }
}

/// Mines rules from `db`. `support` uses the CLI syntax ("30", "5%",
/// "0.05"). With `filter` set, only question/image to answer rules are kept.
#[no_mangle]
pub unsafe extern "C" fn bm_mine_rules(
    db: *const BmDatabase,
    support: *const c_char,
    min_confidence: f64,
    filter: bool,
    rules: *mut *mut BmRuleSet,
) -> BmStatus {
    guard(|| {
        let db = &deref(db, "db")?.0;
        let slot = out(rules, "rules")?;
        let support: SupportThreshold = c_str(support, "support")?.parse()?;
        let config = RuleConfig {
            min_confidence: ConfidenceThreshold::new(min_confidence)?,
            min_support: support,
            ..RuleConfig::default()
        };
        let frequent = mine_frequent(&build_bitmap_index(db), support)?;
        let mut set = generate_rules(&frequent, &config)?;
        if filter {
            set = causal_filter(&set, db.vocabulary());
        }
        *slot = Box::into_raw(Box::new(BmRuleSet {
            rules: set.with_fingerprint(db.fingerprint()),
            vocab: db.vocabulary().clone(),
        }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn bm_ruleset_len(rules: *const BmRuleSet) -> usize {
    rules.as_ref().map_or(0, |r| r.rules.len())
}

/// Counts of the rule at `index` in canonical order.
#[no_mangle]
pub unsafe extern "C" fn bm_ruleset_get(rules: *const BmRuleSet, index: usize, rule: *mut BmRule) -> BmStatus {
    guard(|| {
        let set = deref(rules, "rules")?;
        let slot = out(rule, "rule")?;
        let r = set
            .rules
            .rules()
            .get(index)
            .ok_or_else(|| Error::InvalidConfig(format!("rule index {index} out of range")))?;
        *slot = BmRule {
            support: r.support,
            antecedent_support: r.antecedent_support,
            antecedent_len: r.antecedent.len(),
            consequent_len: r.consequent.len(),
        };
        Ok(())
    })
}

/// Table row of the rule at `index`, e.g. "what sport | v:1 | tennis* | 40 | 0.62".
#[no_mangle]
pub unsafe extern "C" fn bm_ruleset_row(rules: *const BmRuleSet, index: usize, text: *mut *mut c_char) -> BmStatus {
    guard(|| {
        let set = deref(rules, "rules")?;
        let slot = out(text, "text")?;
        let r = set
            .rules
            .rules()
            .get(index)
            .ok_or_else(|| Error::InvalidConfig(format!("rule index {index} out of range")))?;
        *slot = into_c_string(table_row(r, &set.vocab));
        Ok(())
    })
}

/// Whole rule set rendered as "table" or "structured".
#[no_mangle]
pub unsafe extern "C" fn bm_ruleset_render(
    rules: *const BmRuleSet,
    format: *const c_char,
    text: *mut *mut c_char,
) -> BmStatus {
    guard(|| {
        let set = deref(rules, "rules")?;
        let slot = out(text, "text")?;
        let format: ReportFormat = c_str(format, "format")?.parse()?;
        *slot = into_c_string(emit_report(&set.rules, &set.vocab, format));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn bm_ruleset_free(rules: *mut BmRuleSet) {
    if !rules.is_null() {
        drop(Box::from_raw(rules));
    }
}
