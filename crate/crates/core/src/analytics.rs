//! Comparing the hallucination profiles of two models: top-K lists,
//! overlap@K and extrapolated rank-biased overlap.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnosis::HallucinationProfile;
use crate::Scalar;

pub const DEFAULT_TOPKS: [usize; 4] = [5, 10, 15, 20];
pub const DEFAULT_RBO_P: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalyticsError {
    #[error("ranked list contains `{0}` twice")]
    Duplicate(String),
    #[error("list `{list}` has {len} items, depth {k} requested")]
    TooShort { list: &'static str, len: usize, k: usize },
    #[error("depth must be at least 1")]
    ZeroDepth,
    #[error("persistence p must lie in (0, 1), got {0}")]
    BadPersistence(String),
}

/// Ordered list of distinct object names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedList {
    items: Vec<String>,
}

impl RankedList {
    pub fn new<I, S>(items: I) -> Result<Self, AnalyticsError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let items: Vec<String> = items.into_iter().map(Into::into).collect();
        let mut seen = HashSet::new();
        for it in &items {
            if !seen.insert(it.as_str()) {
                return Err(AnalyticsError::Duplicate(it.clone()));
            }
        }
        Ok(Self { items })
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// The `k` most frequent hallucinated objects, frequency descending, ties by
/// name ascending.
pub fn top_k(profile: &HallucinationProfile, k: usize) -> RankedList {
    let items = profile.ranked().into_iter().take(k).map(|(name, _)| name.to_string()).collect();
    RankedList { items }
}

fn check_depth(a: &RankedList, b: &RankedList, k: usize) -> Result<(), AnalyticsError> {
    if k == 0 {
        return Err(AnalyticsError::ZeroDepth);
    }
    if a.len() < k {
        return Err(AnalyticsError::TooShort { list: "a", len: a.len(), k });
    }
    if b.len() < k {
        return Err(AnalyticsError::TooShort { list: "b", len: b.len(), k });
    }
    Ok(())
}

/// Percentage of the top-`k` items the two lists share.
pub fn overlap_at_k<T: Scalar>(a: &RankedList, b: &RankedList, k: usize) -> Result<T, AnalyticsError> {
    check_depth(a, b, k)?;
    let left: HashSet<&str> = a.items[..k].iter().map(String::as_str).collect();
    let shared = b.items[..k].iter().filter(|x| left.contains(x.as_str())).count();
    Ok(T::lit(100.0) * T::from_count(shared) / T::from_count(k))
}

/// Overlap sizes `X_1..=X_k` of the depth-`d` prefixes.
fn prefix_overlaps(a: &[String], b: &[String], k: usize) -> Vec<usize> {
    let mut seen_a: HashSet<&str> = HashSet::with_capacity(k);
    let mut seen_b: HashSet<&str> = HashSet::with_capacity(k);
    let mut x = 0usize;
    let mut out = Vec::with_capacity(k);
    for d in 0..k {
        let (ai, bi) = (a[d].as_str(), b[d].as_str());
        if ai == bi {
            x += 1;
        } else {
            x += usize::from(seen_b.contains(ai)) + usize::from(seen_a.contains(bi));
        }
        seen_a.insert(ai);
        seen_b.insert(bi);
        out.push(x);
    }
    out
}

/// Extrapolated rank-biased overlap evaluated to depth `k`:
///
/// `(X_k/k)·p^k + ((1-p)/p)·Σ_{d=1..k} (X_d/d)·p^d`
///
/// where `X_d` is the overlap of the two depth-`d` prefixes. Identical
/// prefixes score 1, disjoint ones 0.
pub fn rbo_ext<T: Scalar>(a: &RankedList, b: &RankedList, p: T, k: usize) -> Result<T, AnalyticsError> {
    if !(p > T::zero() && p < T::one()) {
        return Err(AnalyticsError::BadPersistence(p.to_string()));
    }
    check_depth(a, b, k)?;
    let overlaps = prefix_overlaps(&a.items, &b.items, k);
    let mut weight = T::one();
    let mut sum = T::zero();
    for (i, &x) in overlaps.iter().enumerate() {
        weight = weight * p;
        sum = sum + T::from_count(x) / T::from_count(i + 1) * weight;
    }
    let agreement = T::from_count(overlaps[k - 1]) / T::from_count(k);
    let score = agreement * weight + (T::one() - p) / p * sum;
    Ok(score.max(T::zero()).min(T::one()))
}

/// One row of a similarity table; `None` when a profile has fewer than `k`
/// distinct objects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow<T> {
    pub k: usize,
    pub overlap_percent: Option<T>,
    pub rbo: Option<T>,
}

pub fn similarity_report<T: Scalar>(
    a: &HallucinationProfile,
    b: &HallucinationProfile,
    ks: &[usize],
    p: T,
) -> Result<Vec<SimilarityRow<T>>, AnalyticsError> {
    if !(p > T::zero() && p < T::one()) {
        return Err(AnalyticsError::BadPersistence(p.to_string()));
    }
    ks.iter()
        .map(|&k| {
            let (la, lb) = (top_k(a, k), top_k(b, k));
            match check_depth(&la, &lb, k) {
                Ok(()) => Ok(SimilarityRow {
                    k,
                    overlap_percent: Some(overlap_at_k(&la, &lb, k)?),
                    rbo: Some(rbo_ext(&la, &lb, p, k)?),
                }),
                Err(AnalyticsError::ZeroDepth) => Err(AnalyticsError::ZeroDepth),
                Err(_) => Ok(SimilarityRow { k, overlap_percent: None, rbo: None }),
            }
        })
        .collect()
}

/// Text table with `TopK | Overlap | RBO value` columns; overlap to one
/// decimal with a percent sign, RBO to three decimals.
pub fn render_similarity<T: Scalar>(rows: &[SimilarityRow<T>]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<6}| {:>8} | {:>9}", "TopK", "Overlap", "RBO value");
    for r in rows {
        let overlap = r.overlap_percent.map_or_else(|| "n/a".to_string(), |o| format!("{o:.1}%"));
        let rbo = r.rbo.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
        let _ = writeln!(out, "{:<6}| {:>8} | {:>9}", format!("@{}", r.k), overlap, rbo);
    }
    out
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;

    fn list(items: &[&str]) -> RankedList {
        RankedList::new(items.iter().copied()).unwrap()
    }

    fn profile(counts: &[(&str, u64)]) -> HallucinationProfile {
        HallucinationProfile {
            model_tag: "m".into(),
            counts: counts.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>(),
            corpus_size: 10,
        }
    }

    #[test]
    fn top_k_tie_break() {
        let p = profile(&[("sky", 5), ("cloud", 5), ("car", 3)]);
        assert_eq!(top_k(&p, 2).items(), ["cloud", "sky"]);
        assert_eq!(top_k(&p, 10).items(), ["cloud", "sky", "car"]);
        assert!(top_k(&profile(&[]), 3).is_empty());
    }

    #[test]
    fn duplicates_rejected() {
        assert_eq!(RankedList::new(["a", "b", "a"]), Err(AnalyticsError::Duplicate("a".into())));
    }

    #[test]
    fn overlap_cases() {
        let a = list(&["a", "b", "c", "d", "e"]);
        let b = list(&["e", "x", "y", "z", "w"]);
        assert_eq!(overlap_at_k::<f64>(&a, &b, 5).unwrap(), 20.0);
        assert_eq!(overlap_at_k::<f64>(&a, &a, 5).unwrap(), 100.0);
        assert_eq!(overlap_at_k::<f64>(&a, &list(&["p", "q", "r", "s", "t"]), 5).unwrap(), 0.0);
        assert_eq!(
            overlap_at_k::<f64>(&a, &list(&["p"]), 5),
            Err(AnalyticsError::TooShort { list: "b", len: 1, k: 5 })
        );
    }

    #[test]
    fn rbo_hand_case() {
        let v: f64 = rbo_ext(&list(&["x", "y"]), &list(&["y", "x"]), 0.9, 2).unwrap();
        approx::assert_abs_diff_eq!(v, 0.90, epsilon = 1e-12);
    }

    #[test]
    fn rbo_extremes() {
        let a = list(&["a", "b", "c", "d"]);
        let v: f64 = rbo_ext(&a, &a, 0.9, 4).unwrap();
        approx::assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        let v: f64 = rbo_ext(&a, &list(&["w", "x", "y", "z"]), 0.5, 4).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn rbo_argument_checks() {
        let a = list(&["a", "b"]);
        assert!(matches!(rbo_ext(&a, &a, 1.0_f64, 2), Err(AnalyticsError::BadPersistence(_))));
        assert!(matches!(rbo_ext(&a, &a, 0.0_f64, 2), Err(AnalyticsError::BadPersistence(_))));
        assert_eq!(rbo_ext(&a, &a, 0.9_f64, 3), Err(AnalyticsError::TooShort { list: "a", len: 2, k: 3 }));
        assert_eq!(rbo_ext(&a, &a, 0.9_f64, 0), Err(AnalyticsError::ZeroDepth));
    }

    #[test]
    fn rbo_single_precision() {
        let a = list(&["a", "b", "c"]);
        let v: f32 = rbo_ext(&a, &a, 0.9, 3).unwrap();
        approx::assert_abs_diff_eq!(v, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn report_identical_and_disjoint() {
        let names: Vec<String> = (0..20).map(|i| format!("obj{i:02}")).collect();
        let a = profile(&names.iter().enumerate().map(|(i, n)| (n.as_str(), 100 - i as u64)).collect::<Vec<_>>());
        let rows = similarity_report(&a, &a, &DEFAULT_TOPKS, 0.9).unwrap();
        for r in &rows {
            assert_eq!(r.overlap_percent, Some(100.0));
            approx::assert_abs_diff_eq!(r.rbo.unwrap(), 1.0, epsilon = 1e-12);
        }
        let other: Vec<String> = (0..20).map(|i| format!("zz{i:02}")).collect();
        let b = profile(&other.iter().map(|n| (n.as_str(), 3)).collect::<Vec<_>>());
        for r in similarity_report(&a, &b, &DEFAULT_TOPKS, 0.9).unwrap() {
            assert_eq!((r.overlap_percent, r.rbo), (Some(0.0), Some(0.0)));
        }
    }

    #[test]
    fn report_marks_short_profiles() {
        let a = profile(&[("a", 3), ("b", 2), ("c", 1), ("d", 1), ("e", 1), ("f", 1)]);
        let rows = similarity_report(&a, &a, &[5, 10], 0.9).unwrap();
        assert!(rows[0].rbo.is_some());
        assert_eq!(rows[1], SimilarityRow { k: 10, overlap_percent: None, rbo: None });
        let text = render_similarity(&rows);
        assert!(text.contains("@5") && text.contains("100.0%") && text.contains("1.000"), "{text}");
        assert!(text.contains("n/a"));
    }
}
