//! Strict-match precision, recall and F1 over sets of keyed tuples.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::query::PathElement;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Ner,
    ReStrict,
    ReTriplet,
    EeTrigger,
    EeArgument,
    Absa,
    Quadruple,
    Quintuple,
    ClsStrict,
}

impl Task {
    pub const ALL: [Task; 9] = [
        Task::Ner,
        Task::ReStrict,
        Task::ReTriplet,
        Task::EeTrigger,
        Task::EeArgument,
        Task::Absa,
        Task::Quadruple,
        Task::Quintuple,
        Task::ClsStrict,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Ner => "NER",
            Task::ReStrict => "RE-strict",
            Task::ReTriplet => "RE-triplet",
            Task::EeTrigger => "EE-trigger",
            Task::EeArgument => "EE-argument",
            Task::Absa => "ABSA",
            Task::Quadruple => "Quadruple",
            Task::Quintuple => "Quintuple",
            Task::ClsStrict => "CLS-strict",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownTask(s.to_string()))
    }
}

/// Which fields of one path element take part in a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fields {
    pub label: bool,
    pub offsets: bool,
    pub surface: bool,
}

impl Fields {
    pub const TYPE_OFFSETS: Fields = Fields { label: true, offsets: true, surface: false };
    pub const TYPE: Fields = Fields { label: true, offsets: false, surface: false };
    pub const OFFSETS: Fields = Fields { label: false, offsets: true, surface: false };
    pub const SURFACE: Fields = Fields { label: false, offsets: false, surface: true };
    pub const TYPE_SURFACE: Fields = Fields { label: true, offsets: false, surface: true };
}

/// Field selection turning a path into a match key. Paths shorter than
/// `min_len` yield no key; longer ones are cut to `truncate` elements.
/// Position `i` uses `fields[i]`, later positions use `rest`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeySpec {
    pub min_len: usize,
    pub truncate: Option<usize>,
    pub fields: Vec<Fields>,
    pub rest: Fields,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KeyPart {
    pub label: Option<String>,
    pub offsets: Option<(usize, usize)>,
    pub surface: Option<String>,
}

pub type Key = Vec<KeyPart>;

impl KeySpec {
    pub fn key(&self, path: &[PathElement]) -> Option<Key> {
        if path.len() < self.min_len || path.is_empty() {
            return None;
        }
        let len = self.truncate.map_or(path.len(), |t| t.min(path.len()));
        Some(
            path[..len]
                .iter()
                .enumerate()
                .map(|(i, el)| {
                    let f = self.fields.get(i).copied().unwrap_or(self.rest);
                    KeyPart {
                        label: f.label.then(|| el.label.clone()),
                        offsets: if f.offsets { el.span.as_ref().map(|s| (s.start, s.end)) } else { None },
                        surface: if f.surface { el.span.as_ref().map(|s| s.surface.clone()) } else { None },
                    }
                })
                .collect(),
        )
    }
}

pub fn metric_for_task(task: Task) -> KeySpec {
    let spec = |min_len, truncate, fields: &[Fields], rest| KeySpec {
        min_len,
        truncate,
        fields: fields.to_vec(),
        rest,
    };
    match task {
        Task::Ner | Task::EeTrigger => spec(1, Some(1), &[Fields::TYPE_OFFSETS], Fields::TYPE_OFFSETS),
        Task::ReStrict => spec(2, Some(2), &[Fields::TYPE_OFFSETS, Fields::TYPE_OFFSETS], Fields::TYPE_OFFSETS),
        Task::ReTriplet => spec(2, Some(2), &[Fields::SURFACE, Fields::TYPE_SURFACE], Fields::TYPE_SURFACE),
        Task::EeArgument => spec(2, Some(2), &[Fields::TYPE, Fields::TYPE_OFFSETS], Fields::TYPE_OFFSETS),
        Task::Absa => spec(2, Some(2), &[Fields::OFFSETS, Fields::TYPE_OFFSETS], Fields::TYPE_OFFSETS),
        Task::Quadruple => spec(3, Some(3), &[], Fields::TYPE_OFFSETS),
        Task::Quintuple => spec(1, None, &[], Fields::TYPE_OFFSETS),
        Task::ClsStrict => spec(1, None, &[], Fields::TYPE),
    }
}

/// Counts and exact ratios of a strict-match comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MetricReport {
    pub gold: u64,
    pub predicted: u64,
    pub matched: u64,
}

fn ratio(num: u64, den: u64) -> Ratio<u64> {
    if den == 0 {
        Ratio::zero()
    } else {
        Ratio::new(num, den)
    }
}

impl MetricReport {
    pub fn precision(&self) -> Ratio<u64> {
        ratio(self.matched, self.predicted)
    }

    pub fn recall(&self) -> Ratio<u64> {
        ratio(self.matched, self.gold)
    }

    /// `2PR/(P+R)`, which reduces to `2m/(g+p)`; `0/0` is 0.
    pub fn f1(&self) -> Ratio<u64> {
        ratio(2 * self.matched, self.gold + self.predicted)
    }

    pub fn merge(&self, other: &MetricReport) -> MetricReport {
        MetricReport {
            gold: self.gold + other.gold,
            predicted: self.predicted + other.predicted,
            matched: self.matched + other.matched,
        }
    }

    pub fn summary(&self, name: &str) -> MetricSummary {
        let f = |r: Ratio<u64>| r.to_f64().unwrap_or(0.0);
        MetricSummary {
            metric: name.to_string(),
            gold: self.gold,
            predicted: self.predicted,
            matched: self.matched,
            precision: f(self.precision()),
            recall: f(self.recall()),
            f1: f(self.f1()),
        }
    }
}

/// Serializable view of a [`MetricReport`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub metric: String,
    pub gold: u64,
    pub predicted: u64,
    pub matched: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl fmt::Display for MetricSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>6} {:>6} {:>6} {:>9} {:>9} {:>9}", "metric", "gold", "pred", "match", "P", "R", "F1")?;
        write!(
            f,
            "{:<12} {:>6} {:>6} {:>6} {:>9.4} {:>9.4} {:>9.4}",
            self.metric, self.gold, self.predicted, self.matched, self.precision, self.recall, self.f1
        )
    }
}

/// Duplicates on either side collapse before counting.
pub fn strict_match_f1<K: Ord>(gold: impl IntoIterator<Item = K>, pred: impl IntoIterator<Item = K>) -> MetricReport {
    let gold: BTreeSet<K> = gold.into_iter().collect();
    let pred: BTreeSet<K> = pred.into_iter().collect();
    MetricReport {
        gold: gold.len() as u64,
        predicted: pred.len() as u64,
        matched: gold.intersection(&pred).count() as u64,
    }
}

/// Micro-averaged report over parallel per-example path sets.
pub fn score_paths(gold: &[Vec<Vec<PathElement>>], pred: &[Vec<Vec<PathElement>>], spec: &KeySpec) -> MetricReport {
    let keyed = |sets: &[Vec<Vec<PathElement>>]| -> Vec<(usize, Key)> {
        sets.iter()
            .enumerate()
            .flat_map(|(i, paths)| paths.iter().filter_map(move |p| spec.key(p).map(|k| (i, k))))
            .collect()
    };
    strict_match_f1(keyed(gold), keyed(pred))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_case() {
        let r = strict_match_f1([1, 2, 3, 4], [1, 2, 9]);
        assert_eq!(r.precision(), Ratio::new(2, 3));
        assert_eq!(r.recall(), Ratio::new(1, 2));
        assert_eq!(r.f1(), Ratio::new(4, 7));
    }

    #[test]
    fn degenerate_sets() {
        assert_eq!(strict_match_f1([1, 2], [1, 2]).f1(), Ratio::from_integer(1));
        assert_eq!(strict_match_f1([1, 2], Vec::<i32>::new()).f1(), Ratio::zero());
        assert_eq!(strict_match_f1(Vec::<i32>::new(), Vec::<i32>::new()).f1(), Ratio::zero());
        assert_eq!(strict_match_f1([1], [1, 1, 1]).predicted, 1);
    }

    #[test]
    fn task_keys() {
        let subj = PathElement::span("people", 0, 4, "Lifa");
        let rel = PathElement::span("live in ( location )", 14, 25, "Morgan City");
        let path = vec![subj.clone(), rel.clone()];
        let ner = metric_for_task(Task::Ner).key(&path).unwrap();
        assert_eq!(ner, vec![KeyPart { label: Some("people".into()), offsets: Some((0, 4)), surface: None }]);
        let trip = metric_for_task(Task::ReTriplet).key(&path).unwrap();
        assert_eq!(trip[0], KeyPart { label: None, offsets: None, surface: Some("Lifa".into()) });
        assert_eq!(trip[1].label.as_deref(), Some("live in ( location )"));
        assert_eq!(metric_for_task(Task::ReStrict).key(&[subj]), None);
        let cls = metric_for_task(Task::ClsStrict).key(&[PathElement::label_only("positive")]).unwrap();
        assert_eq!(cls, vec![KeyPart { label: Some("positive".into()), offsets: None, surface: None }]);
        assert!(matches!("RE-quad".parse::<Task>(), Err(Error::UnknownTask(_))));
        assert_eq!("ner".parse::<Task>().unwrap(), Task::Ner);
    }

    #[test]
    fn tasks_differ_on_same_predictions() {
        let gold = vec![vec![vec![PathElement::span("people", 0, 4, "Lifa"), PathElement::span("kill ( people )", 5, 9, "Bob")]]];
        let pred = vec![vec![vec![PathElement::span("people", 0, 4, "Lifa"), PathElement::span("kill ( people )", 10, 14, "Bob")]]];
        let ner = score_paths(&gold, &pred, &metric_for_task(Task::Ner));
        let re = score_paths(&gold, &pred, &metric_for_task(Task::ReStrict));
        let trip = score_paths(&gold, &pred, &metric_for_task(Task::ReTriplet));
        assert_eq!(ner.f1(), Ratio::from_integer(1));
        assert_eq!(re.f1(), Ratio::zero());
        assert_eq!(trip.f1(), Ratio::from_integer(1));
    }
}
