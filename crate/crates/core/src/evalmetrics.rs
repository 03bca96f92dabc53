//! Yes/no benchmark arithmetic: POPE-style binary metrics and MME-style
//! per-question / per-image accuracy.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_traits::{FromPrimitive, Num};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::Record;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no records to score")]
    Empty,
    #[error("images without exactly two records: {}", format_offenders(.0))]
    BadGrouping(Vec<(String, usize)>),
}

fn format_offenders(list: &[(String, usize)]) -> String {
    list.iter().map(|(id, n)| format!("{id} ({n})")).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gold {
    Yes,
    No,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
    Other,
}

impl Answer {
    pub fn matches(self, gold: Gold) -> bool {
        matches!((self, gold), (Answer::Yes, Gold::Yes) | (Answer::No, Gold::No))
    }
}

fn standalone(word: &str) -> Option<Answer> {
    match word {
        "yes" => Some(Answer::Yes),
        "no" => Some(Answer::No),
        _ => None,
    }
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric() && c != '\'')
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Binarize a free-text response. The leading word decides when it is
/// `yes`/`no`; otherwise the first sentence holding a standalone `yes` or `no`
/// decides by whichever comes first in it.
pub fn normalize_answer(text: &str) -> Answer {
    if let Some(a) = words(text).next().and_then(|w| standalone(&w)) {
        return a;
    }
    for sentence in text.split(['.', '!', '?', '\n']) {
        if let Some(a) = words(sentence).find_map(|w| standalone(&w)) {
            return a;
        }
    }
    Answer::Other
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QARecord {
    pub image_id: String,
    pub question: String,
    pub gold: Gold,
    pub response_text: String,
}

impl Record for QARecord {
    const KIND: &'static str = "QA";
    type Key = (String, String);

    fn sort_key(&self) -> Self::Key {
        (self.image_id.clone(), self.question.clone())
    }
}

/// Confusion counts. Unparsed responses are counted only in `unparsed`, so
/// the five fields sum to the number of records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub unparsed: u64,
    /// Unparsed responses whose gold answer was yes.
    pub unparsed_gold_yes: u64,
}

impl Confusion {
    pub fn add(&mut self, gold: Gold, answer: Answer) {
        match (gold, answer) {
            (Gold::Yes, Answer::Yes) => self.tp += 1,
            (Gold::No, Answer::Yes) => self.fp += 1,
            (Gold::No, Answer::No) => self.tn += 1,
            (Gold::Yes, Answer::No) => self.fn_ += 1,
            (g, Answer::Other) => {
                self.unparsed += 1;
                self.unparsed_gold_yes += u64::from(g == Gold::Yes);
            }
        }
    }

    pub fn merge(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
            unparsed: self.unparsed + o.unparsed,
            unparsed_gold_yes: self.unparsed_gold_yes + o.unparsed_gold_yes,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_ + self.unparsed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics<T> {
    pub accuracy: T,
    pub precision: T,
    pub recall: T,
    pub f1: T,
    pub yes_ratio: T,
    pub counts: Confusion,
}

fn ratio<T: Scalar>(num: u64, den: u64) -> T {
    if den == 0 {
        T::zero()
    } else {
        T::from_u64(num).expect("count") / T::from_u64(den).expect("count")
    }
}

impl<T: Scalar> BinaryMetrics<T> {
    /// Recall is measured against every gold-yes record, so an unparsed
    /// answer to a yes question is a miss.
    pub fn from_confusion(c: Confusion) -> Self {
        let precision: T = ratio(c.tp, c.tp + c.fp);
        let recall: T = ratio(c.tp, c.tp + c.fn_ + c.unparsed_gold_yes);
        let f1 = if precision + recall > T::zero() {
            T::lit(2.0) * precision * recall / (precision + recall)
        } else {
            T::zero()
        };
        BinaryMetrics {
            accuracy: ratio(c.tp + c.tn, c.total()),
            precision,
            recall,
            f1,
            yes_ratio: ratio(c.tp + c.fp, c.total()),
            counts: c,
        }
    }
}

pub fn compute_binary_metrics<T: Scalar>(records: &[QARecord]) -> Result<BinaryMetrics<T>, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let c = records.iter().fold(Confusion::default(), |mut c, r| {
        c.add(r.gold, normalize_answer(&r.response_text));
        c
    });
    Ok(BinaryMetrics::from_confusion(c))
}

pub fn render_binary<T: Scalar>(m: &BinaryMetrics<T>) -> String {
    let pct = |v: T| format!("{:.2}", v * T::lit(100.0));
    let c = &m.counts;
    let mut out = String::new();
    let _ = writeln!(out, "Accuracy | Precision | Recall | F1-Score | Yes-ratio");
    let _ = writeln!(
        out,
        "{} | {} | {} | {} | {}",
        pct(m.accuracy),
        pct(m.precision),
        pct(m.recall),
        pct(m.f1),
        pct(m.yes_ratio)
    );
    let _ = writeln!(out, "tp={} fp={} tn={} fn={} unparsed={}", c.tp, c.fp, c.tn, c.fn_, c.unparsed);
    out
}

/// MME-style scores in percent. Generic over any numeric type so exact
/// rational arithmetic can be used alongside floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmeScores<T> {
    pub acc: T,
    pub acc_plus: T,
    pub total: T,
    pub questions: usize,
    pub images: usize,
}

pub fn mme_scores<T>(records: &[QARecord]) -> Result<MmeScores<T>, MetricsError>
where
    T: Num + Clone + FromPrimitive,
{
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut by_image: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
    for r in records {
        by_image
            .entry(r.image_id.as_str())
            .or_default()
            .push(normalize_answer(&r.response_text).matches(r.gold));
    }
    let offenders: Vec<(String, usize)> = by_image
        .iter()
        .filter(|(_, v)| v.len() != 2)
        .map(|(id, v)| (id.to_string(), v.len()))
        .collect();
    if !offenders.is_empty() {
        return Err(MetricsError::BadGrouping(offenders));
    }
    let correct = by_image.values().flatten().filter(|&&ok| ok).count();
    let both = by_image.values().filter(|v| v.iter().all(|&ok| ok)).count();
    let n = |v: usize| T::from_usize(v).expect("count representable");
    let hundred = n(100);
    let acc = hundred.clone() * n(correct) / n(records.len());
    let acc_plus = hundred * n(both) / n(by_image.len());
    Ok(MmeScores {
        total: acc.clone() + acc_plus.clone(),
        acc,
        acc_plus,
        questions: records.len(),
        images: by_image.len(),
    })
}

pub fn render_mme<T: Scalar>(s: &MmeScores<T>) -> String {
    format!("Accuracy | Accuracy+ | Total\n{:.2} | {:.2} | {:.2}\n", s.acc, s.acc_plus, s.total)
}

#[cfg(test)]
mod tests {
    use num_rational::Ratio;

    use super::*;

    fn rec(image: &str, q: &str, gold: Gold, resp: &str) -> QARecord {
        QARecord { image_id: image.into(), question: q.into(), gold, response_text: resp.into() }
    }

    #[test]
    fn answers() {
        assert_eq!(normalize_answer("Yes, there is a cat."), Answer::Yes);
        assert_eq!(normalize_answer("no"), Answer::No);
        assert_eq!(normalize_answer("  NO."), Answer::No);
        assert_eq!(normalize_answer("It is a sunny day."), Answer::Other);
        assert_eq!(normalize_answer("I looked closely. No, it is not there."), Answer::No);
        assert_eq!(normalize_answer("Nobody knows. Yesterday it rained."), Answer::Other);
        assert_eq!(normalize_answer(""), Answer::Other);
    }

    #[test]
    fn small_confusion() {
        let rs = vec![
            rec("a", "1", Gold::Yes, "yes"),
            rec("a", "2", Gold::Yes, "Yes."),
            rec("b", "1", Gold::No, "yes"),
            rec("b", "2", Gold::No, "no"),
        ];
        let m: BinaryMetrics<f64> = compute_binary_metrics(&rs).unwrap();
        assert_eq!((m.counts.tp, m.counts.fp, m.counts.tn, m.counts.fn_), (2, 1, 1, 0));
        approx::assert_abs_diff_eq!(m.precision, 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(m.recall, 1.0);
        approx::assert_abs_diff_eq!(m.f1, 0.8, epsilon = 1e-15);
        assert_eq!(m.accuracy, 0.75);
        assert_eq!(m.yes_ratio, 0.75);
    }

    #[test]
    fn all_other_and_empty() {
        let rs = vec![rec("a", "1", Gold::Yes, "maybe"), rec("a", "2", Gold::No, "hmm")];
        let m: BinaryMetrics<f64> = compute_binary_metrics(&rs).unwrap();
        assert_eq!((m.accuracy, m.yes_ratio, m.recall, m.f1), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(m.counts.total(), 2);
        assert_eq!(compute_binary_metrics::<f64>(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn mme_two_images() {
        let rs = vec![
            rec("a", "1", Gold::Yes, "yes"),
            rec("a", "2", Gold::No, "no"),
            rec("b", "1", Gold::Yes, "yes"),
            rec("b", "2", Gold::No, "yes"),
        ];
        let s: MmeScores<f64> = mme_scores(&rs).unwrap();
        assert_eq!((s.acc, s.acc_plus, s.total), (75.0, 50.0, 125.0));
        let exact: MmeScores<Ratio<i64>> = mme_scores(&rs).unwrap();
        assert_eq!(exact.total, Ratio::from_integer(125));
    }

    #[test]
    fn mme_all_wrong_and_grouping() {
        let rs = vec![rec("a", "1", Gold::Yes, "no"), rec("a", "2", Gold::No, "yes")];
        let s: MmeScores<f64> = mme_scores(&rs).unwrap();
        assert_eq!((s.acc, s.acc_plus, s.total), (0.0, 0.0, 0.0));
        let bad = vec![rec("a", "1", Gold::Yes, "no"), rec("b", "1", Gold::Yes, "no"), rec("b", "2", Gold::Yes, "no")];
        let err = mme_scores::<f64>(&bad).unwrap_err();
        assert_eq!(err, MetricsError::BadGrouping(vec![("a".into(), 1)]));
        assert!(err.to_string().contains("a (1)"));
    }

    #[test]
    fn mme_rendering() {
        let s = MmeScores { acc: 200.0 / 3.0, acc_plus: 130.0 / 3.0, total: 110.0, questions: 60, images: 30 };
        assert_eq!(render_mme(&s), "Accuracy | Accuracy+ | Total\n66.67 | 43.33 | 110.00\n");
    }
}
