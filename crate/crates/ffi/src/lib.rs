//! C ABI for the soft-label toolkit.
//!
//! Conventions:
//! - Every function returns an `SlStatus` code; outputs go through out-pointers.
//! - Handles (`SlPhraseLists`, `SlSegmenter`) are opaque; free them with the
//!   matching `*_free` function. Strings returned by this library must be
//!   released with `sl_string_free`.
//! - All text is UTF-8.

use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use softlabel_core::annotations::{
    aggregate_counts, class_weights, fleiss_kappa, AnnotationClass, AttributeSchema, Kappa,
};
use softlabel_core::evaluation::{ensemble_vote, TieKind};
use softlabel_core::preprocess::{categorize_tweet, normalize_tweet, Category, PhraseLists, Segmenter};

/// Status codes returned by every API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlStatus {
    /// Success.
    SlOk = 0,
    /// A required pointer argument was null.
    SlNullPointer = 1,
    /// A string argument was not valid UTF-8.
    SlInvalidUtf8 = 2,
    /// Invalid argument or malformed data.
    SlInvalidArgument = 3,
    /// Numeric failure (non-finite value).
    SlNumericError = 4,
    /// The requested quantity is undefined for this input (e.g. chance
    /// agreement of exactly 1 for Fleiss' kappa).
    SlUndefined = 5,
    /// Internal panic; state may be inconsistent.
    SlInternal = 6,
}

/// Annotation attribute schemas addressable over the ABI.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlAttribute {
    /// 3 categories: not, somewhat, very.
    SlAggression = 0,
    /// 2 categories: na, anti_asian.
    SlTargetBinary = 1,
    /// 4 categories: na, anti_asian, anti_black, both.
    SlTargetFour = 2,
    /// 3 categories: normal, abusive, hate.
    SlType = 3,
}

impl SlAttribute {
    fn schema(self) -> AttributeSchema {
        match self {
            SlAttribute::SlAggression => AttributeSchema::aggression(),
            SlAttribute::SlTargetBinary => AttributeSchema::target_binary(),
            SlAttribute::SlTargetFour => AttributeSchema::target_four(),
            SlAttribute::SlType => AttributeSchema::speech_type(),
        }
    }
}

/// Opaque phrase-list handle.
pub struct SlPhraseLists(PhraseLists);

/// Opaque hashtag-segmenter handle.
pub struct SlSegmenter(&'static Segmenter);

fn guard<F: FnOnce() -> SlStatus>(f: F) -> SlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => SlStatus::SlInternal,
    }
}

unsafe fn cstr<'a>(p: *const c_char) -> Result<&'a str, SlStatus> {
    if p.is_null() {
        return Err(SlStatus::SlNullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| SlStatus::SlInvalidUtf8)
}

fn lines(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Builds a phrase-list handle from newline-separated phrase blocks.
/// `tracking` may be null for no hashtag-retention keywords.
///
/// # Safety
/// `anti_asian` and `anti_black` must be valid NUL-terminated strings;
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sl_phrase_lists_new(
    anti_asian: *const c_char,
    anti_black: *const c_char,
    tracking: *const c_char,
    out: *mut *mut SlPhraseLists,
) -> SlStatus {
    guard(|| {
        if out.is_null() {
            return SlStatus::SlNullPointer;
        }
        let aa = match cstr(anti_asian) {
            Ok(s) => s,
            Err(e) => return e,
        };
        let ab = match cstr(anti_black) {
            Ok(s) => s,
            Err(e) => return e,
        };
        let tr = if tracking.is_null() {
            Vec::new()
        } else {
            match cstr(tracking) {
                Ok(s) => lines(s),
                Err(e) => return e,
            }
        };
        match PhraseLists::new(lines(aa), lines(ab), tr) {
            Ok(lists) => {
                *out = Box::into_raw(Box::new(SlPhraseLists(lists)));
                SlStatus::SlOk
            }
            Err(_) => SlStatus::SlInvalidArgument,
        }
    })
}

/// # Safety
/// `handle` must come from `sl_phrase_lists_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sl_phrase_lists_free(handle: *mut SlPhraseLists) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Returns the built-in word-frequency segmenter.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sl_segmenter_new_bundled(out: *mut *mut SlSegmenter) -> SlStatus {
    guard(|| {
        if out.is_null() {
            return SlStatus::SlNullPointer;
        }
        *out = Box::into_raw(Box::new(SlSegmenter(Segmenter::bundled())));
        SlStatus::SlOk
    })
}

/// # Safety
/// `handle` must come from `sl_segmenter_new_bundled` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sl_segmenter_free(handle: *mut SlSegmenter) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Normalizes one raw tweet into cleaned, space-separated tokens. On success
/// `*out` receives a NUL-terminated string owned by the library; release it
/// with `sl_string_free`.
///
/// # Safety
/// All pointers must be valid; handles must be live.
#[no_mangle]
pub unsafe extern "C" fn sl_normalize_tweet(
    lists: *const SlPhraseLists,
    segmenter: *const SlSegmenter,
    raw_text: *const c_char,
    out: *mut *mut c_char,
) -> SlStatus {
    guard(|| {
        if lists.is_null() || segmenter.is_null() || out.is_null() {
            return SlStatus::SlNullPointer;
        }
        let text = match cstr(raw_text) {
            Ok(s) => s,
            Err(e) => return e,
        };
        let normalized = normalize_tweet(text, &(*lists).0, (*segmenter).0);
        match CString::new(normalized.0) {
            Ok(c) => {
                *out = c.into_raw();
                SlStatus::SlOk
            }
            Err(_) => SlStatus::SlInternal,
        }
    })
}

/// Releases a string produced by this library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Assigns a tweet to a keyword category by phrase matching on the raw text.
/// `*out_category`: 0 = anti-Asian, 1 = anti-Black, 2 = interracial, 3 = normal.
///
/// # Safety
/// All pointers must be valid; `lists` must be live.
#[no_mangle]
pub unsafe extern "C" fn sl_categorize_tweet(
    lists: *const SlPhraseLists,
    raw_text: *const c_char,
    out_category: *mut c_int,
) -> SlStatus {
    guard(|| {
        if lists.is_null() || out_category.is_null() {
            return SlStatus::SlNullPointer;
        }
        let text = match cstr(raw_text) {
            Ok(s) => s,
            Err(e) => return e,
        };
        let cat = categorize_tweet(text, &(*lists).0);
        *out_category = match cat {
            Category::AntiAsian => 0,
            Category::AntiBlack => 1,
            Category::Interracial => 2,
            Category::Normal => 3,
        };
        SlStatus::SlOk
    })
}

/// Aggregates per-category vote counts for one attribute into a soft-label
/// distribution, a majority-vote silver label (schema tie default on ties),
/// and an agreement class (0 = unanimous, 1 = two distinct, 2 = all distinct).
///
/// `counts` has one entry per category of `attribute`; `out_soft` must hold
/// the same number of doubles.
///
/// # Safety
/// All pointers must be valid for the schema's category count.
#[no_mangle]
pub unsafe extern "C" fn sl_aggregate_votes(
    attribute: SlAttribute,
    counts: *const u32,
    num_categories: usize,
    out_soft: *mut f64,
    out_silver: *mut usize,
    out_class: *mut c_int,
) -> SlStatus {
    guard(|| {
        if counts.is_null() || out_soft.is_null() || out_silver.is_null() || out_class.is_null() {
            return SlStatus::SlNullPointer;
        }
        let schema = attribute.schema();
        if num_categories != schema.categories.len() {
            return SlStatus::SlInvalidArgument;
        }
        let counts: Vec<usize> = std::slice::from_raw_parts(counts, num_categories)
            .iter()
            .map(|&c| c as usize)
            .collect();
        let n: usize = counts.iter().sum();
        if n == 0 {
            return SlStatus::SlInvalidArgument;
        }
        let label = aggregate_counts(&counts, n, &schema);
        for (i, v) in label.soft.iter().enumerate() {
            *out_soft.add(i) = *v;
        }
        *out_silver = label.silver;
        *out_class = match label.annot_class {
            AnnotationClass::A => 0,
            AnnotationClass::B => 1,
            AnnotationClass::C => 2,
        };
        SlStatus::SlOk
    })
}

/// Fleiss' kappa over `num_rows x num_categories` vote counts (row-major),
/// each row summing to `annotators`. Returns `SlUndefined` when chance
/// agreement is exactly 1 (every vote in a single category).
///
/// # Safety
/// `rows` must hold `num_rows * num_categories` entries; `out_kappa` must be
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sl_fleiss_kappa(
    rows: *const u32,
    num_rows: usize,
    num_categories: usize,
    annotators: usize,
    out_kappa: *mut f64,
) -> SlStatus {
    guard(|| {
        if rows.is_null() || out_kappa.is_null() {
            return SlStatus::SlNullPointer;
        }
        if num_rows == 0 || num_categories == 0 {
            return SlStatus::SlInvalidArgument;
        }
        let flat = std::slice::from_raw_parts(rows, num_rows * num_categories);
        let table: Vec<Vec<usize>> = flat
            .chunks(num_categories)
            .map(|r| r.iter().map(|&c| c as usize).collect())
            .collect();
        match fleiss_kappa(&table, annotators) {
            Ok(Kappa::Value(k)) => {
                *out_kappa = k;
                SlStatus::SlOk
            }
            Ok(Kappa::Undefined { .. }) => SlStatus::SlUndefined,
            Err(_) => SlStatus::SlInvalidArgument,
        }
    })
}

/// Inverse-frequency class weights: `w_c = total / (num_classes * count_c)`.
/// Every count must be positive. `out_weights` must hold `len` doubles.
///
/// # Safety
/// `counts` and `out_weights` must be valid for `len` entries.
#[no_mangle]
pub unsafe extern "C" fn sl_class_weights(
    counts: *const u32,
    len: usize,
    out_weights: *mut f64,
) -> SlStatus {
    guard(|| {
        if counts.is_null() || out_weights.is_null() {
            return SlStatus::SlNullPointer;
        }
        let counts: Vec<usize> = std::slice::from_raw_parts(counts, len)
            .iter()
            .map(|&c| c as usize)
            .collect();
        match class_weights(&counts) {
            Ok(w) => {
                for (i, v) in w.iter().enumerate() {
                    *out_weights.add(i) = *v;
                }
                SlStatus::SlOk
            }
            Err(_) => SlStatus::SlInvalidArgument,
        }
    })
}

/// Majority vote over per-seed category predictions for one tweet. Ties go to
/// the least severe (lowest-index) category among the tied leaders.
/// `*out_tie_kind`: 0 = no tie, 1 = two-way, 2 = three-way.
///
/// # Safety
/// `votes` must hold `len` entries; out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sl_ensemble_vote(
    votes: *const usize,
    len: usize,
    num_categories: usize,
    out_winner: *mut usize,
    out_tie_kind: *mut c_int,
) -> SlStatus {
    guard(|| {
        if votes.is_null() || out_winner.is_null() || out_tie_kind.is_null() {
            return SlStatus::SlNullPointer;
        }
        if len == 0 || num_categories == 0 {
            return SlStatus::SlInvalidArgument;
        }
        let votes = std::slice::from_raw_parts(votes, len);
        if votes.iter().any(|&v| v >= num_categories) {
            return SlStatus::SlInvalidArgument;
        }
        let (winner, tie) = match ensemble_vote(votes, num_categories) {
            Ok(r) => r,
            Err(_) => return SlStatus::SlInvalidArgument,
        };
        *out_winner = winner;
        *out_tie_kind = match tie {
            TieKind::None => 0,
            TieKind::TwoWay => 1,
            TieKind::ThreeWay => 2,
        };
        SlStatus::SlOk
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;
    use std::ptr;

    #[test]
    fn normalize_round_trip_over_abi() {
        unsafe {
            let aa = CString::new("kung flu").unwrap();
            let ab = CString::new("some slur").unwrap();
            let mut lists: *mut SlPhraseLists = ptr::null_mut();
            assert_eq!(
                sl_phrase_lists_new(aa.as_ptr(), ab.as_ptr(), ptr::null(), &mut lists),
                SlStatus::SlOk
            );
            let mut seg: *mut SlSegmenter = ptr::null_mut();
            assert_eq!(sl_segmenter_new_bundled(&mut seg), SlStatus::SlOk);
            let raw = CString::new("RT @bob Check https://t.co/x NOW NOW").unwrap();
            let mut out: *mut c_char = ptr::null_mut();
            assert_eq!(
                sl_normalize_tweet(lists, seg, raw.as_ptr(), &mut out),
                SlStatus::SlOk
            );
            assert_eq!(
                CStr::from_ptr(out).to_str().unwrap(),
                "<user> check <url> now"
            );
            sl_string_free(out);
            sl_segmenter_free(seg);
            sl_phrase_lists_free(lists);
        }
    }

    #[test]
    fn aggregate_and_weights_over_abi() {
        unsafe {
            let counts = [2u32, 1, 0];
            let mut soft = [0f64; 3];
            let mut silver = 0usize;
            let mut class = -1;
            assert_eq!(
                sl_aggregate_votes(
                    SlAttribute::SlAggression,
                    counts.as_ptr(),
                    3,
                    soft.as_mut_ptr(),
                    &mut silver,
                    &mut class
                ),
                SlStatus::SlOk
            );
            assert!((soft[0] - 2.0 / 3.0).abs() < 1e-12);
            assert_eq!(silver, 0);
            assert_eq!(class, 1);

            let wc = [2505u32, 454];
            let mut w = [0f64; 2];
            assert_eq!(sl_class_weights(wc.as_ptr(), 2, w.as_mut_ptr()), SlStatus::SlOk);
            assert!((w[0] - 0.5906).abs() < 5e-5);
            assert!((w[1] - 3.2588).abs() < 5e-5);
        }
    }

    #[test]
    fn kappa_and_ensemble_over_abi() {
        unsafe {
            // Two items, three annotators: kappa = -1/3.
            let rows = [2u32, 1, 1, 2];
            let mut kappa = 0f64;
            assert_eq!(sl_fleiss_kappa(rows.as_ptr(), 2, 2, 3, &mut kappa), SlStatus::SlOk);
            assert!((kappa + 1.0 / 3.0).abs() < 1e-12);

            // Unanimous single category: undefined.
            let uni = [3u32, 0];
            assert_eq!(
                sl_fleiss_kappa(uni.as_ptr(), 1, 2, 3, &mut kappa),
                SlStatus::SlUndefined
            );

            let votes = [2usize, 1, 1, 2, 0];
            let mut winner = 9;
            let mut tie = -1;
            assert_eq!(
                sl_ensemble_vote(votes.as_ptr(), 5, 3, &mut winner, &mut tie),
                SlStatus::SlOk
            );
            assert_eq!(winner, 1); // two-way tie resolved to lower index
            assert_eq!(tie, 1);
        }
    }

    #[test]
    fn null_and_bad_args_are_rejected() {
        unsafe {
            let mut out: *mut SlPhraseLists = ptr::null_mut();
            assert_eq!(
                sl_phrase_lists_new(ptr::null(), ptr::null(), ptr::null(), &mut out),
                SlStatus::SlNullPointer
            );
            let counts = [1u32, 1, 1];
            let mut soft = [0f64; 3];
            let mut silver = 0usize;
            let mut class = 0;
            // Wrong category count for the binary target schema.
            assert_eq!(
                sl_aggregate_votes(
                    SlAttribute::SlTargetBinary,
                    counts.as_ptr(),
                    3,
                    soft.as_mut_ptr(),
                    &mut silver,
                    &mut class
                ),
                SlStatus::SlInvalidArgument
            );
        }
    }
}
