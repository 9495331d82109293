//! Token-linking decoding of score matrices.
//!
//! A span `(i, j)` of type `k` is extracted iff `Z[i,j] >= δ`,
//! `Z[i,k] >= δ` and `Z[k,j] >= δ` for the `[T]` marker `k`. Classification
//! reads the `[CLST]`/`[T]` cell pairs after a sigmoid.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::query::{Query, SpanRef};
use crate::scalar::Scalar;

/// Pairwise logits aligned to a query; cells outside the scoring mask hold `-∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix<T> {
    pub values: Array2<T>,
}

impl<T: Scalar> ScoreMatrix<T> {
    /// Copies `raw` on valid cells and sets every other cell to `-∞`.
    pub fn masked(raw: &Array2<T>, scoring_mask: &Array2<bool>) -> Self {
        let mut values = raw.clone();
        values.zip_mut_with(scoring_mask, |v, &ok| {
            if !ok {
                *v = T::neg_infinity();
            }
        });
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> ScoreMatrix<U> {
        ScoreMatrix {
            values: self.values.mapv(f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkKind {
    HeadTail,
    HeadType,
    TypeTail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LinkDecision {
    pub kind: LinkKind,
    pub i: usize,
    pub j: usize,
}

/// One decoded span at one level.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TypedSpan {
    /// Query token indices of the first and last token.
    pub first: usize,
    pub last: usize,
    pub group: usize,
    pub type_index: usize,
    pub label: String,
    pub span: SpanRef,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClsDecision {
    pub group: usize,
    /// `(type index, label)`; exactly one for single-label decisions.
    pub labels: Vec<(usize, String)>,
    /// Winning hand-shake product for single-label decisions.
    pub score: Option<f64>,
}

pub fn threshold<T: Scalar>(z: &ScoreMatrix<T>, delta: T) -> Array2<bool> {
    z.values.mapv(|v| v >= delta && v != T::neg_infinity())
}

/// Links of the binarized matrix, classified by region.
pub fn links<T: Scalar>(z: &ScoreMatrix<T>, query: &Query, delta: T) -> Vec<LinkDecision> {
    let on = threshold(z, delta);
    let mut out = Vec::new();
    for ((i, j), &b) in on.indexed_iter() {
        if !b || !query.scoring_mask[[i, j]] {
            continue;
        }
        let kind = if query.is_text(i) && query.is_text(j) {
            LinkKind::HeadTail
        } else if query.is_text(i) {
            LinkKind::HeadType
        } else if query.is_text(j) {
            LinkKind::TypeTail
        } else {
            continue;
        };
        out.push(LinkDecision { kind, i, j });
    }
    out
}

fn typed_span(query: &Query, i: usize, j: usize, k: usize) -> TypedSpan {
    let (g, u) = query.type_at(k).expect("k is a type marker");
    let ts = query.text_start();
    TypedSpan {
        first: i,
        last: j,
        group: g,
        type_index: u,
        label: query.groups[g].types[u].clone(),
        span: query.passage.span_ref(i - ts, j - ts),
    }
}

fn sort_spans(spans: &mut Vec<TypedSpan>) {
    spans.sort_by(|a, b| (a.first, a.last, a.group, a.type_index).cmp(&(b.first, b.last, b.group, b.type_index)));
    spans.dedup();
}

pub fn decode_ie<T: Scalar>(z: &ScoreMatrix<T>, query: &Query, delta: T) -> Vec<TypedSpan> {
    let on = threshold(z, delta);
    let ts = query.text_start();
    let te = ts + query.text_len();
    let markers: Vec<usize> = query.all_type_markers().map(|(_, _, k)| k).collect();
    let mut out = Vec::new();
    for i in ts..te {
        let heads: Vec<usize> = markers.iter().copied().filter(|&k| on[[i, k]]).collect();
        if heads.is_empty() {
            continue;
        }
        for j in i..te {
            if !on[[i, j]] {
                continue;
            }
            for &k in &heads {
                if on[[k, j]] {
                    out.push(typed_span(query, i, j, k));
                }
            }
        }
    }
    sort_spans(&mut out);
    out
}

/// Exhaustive triple loop over every `(i, j, k)`; a reference for [`decode_ie`].
pub fn oracle_decode<T: Scalar>(z: &ScoreMatrix<T>, query: &Query, delta: T) -> Vec<TypedSpan> {
    let n = query.len();
    let hit = |a: usize, b: usize| {
        let v = z.values[[a, b]];
        v.is_finite() && v >= delta
    };
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if query.is_text(i)
                    && query.is_text(j)
                    && i <= j
                    && query.type_at(k).is_some()
                    && hit(i, j)
                    && hit(i, k)
                    && hit(k, j)
                {
                    out.push(typed_span(query, i, j, k));
                }
            }
        }
    }
    sort_spans(&mut out);
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn hand_shake<T: Scalar>(z: &ScoreMatrix<T>, c: usize, k: usize) -> (f64, f64) {
    (
        sigmoid(z.values[[c, k]].to_f64_lossy()),
        sigmoid(z.values[[k, c]].to_f64_lossy()),
    )
}

/// Per group, the label with the largest hand-shake product; ties go to the
/// lowest type index.
pub fn decode_cls_single<T: Scalar>(z: &ScoreMatrix<T>, query: &Query) -> Result<Vec<ClsDecision>> {
    let c = query.clst.ok_or(Error::NoCandidates)?;
    query
        .type_markers
        .iter()
        .enumerate()
        .map(|(g, markers)| {
            let mut best: Option<(usize, f64)> = None;
            for (u, &k) in markers.iter().enumerate() {
                let (a, b) = hand_shake(z, c, k);
                let p = a * b;
                if best.is_none_or(|(_, bp)| p > bp) {
                    best = Some((u, p));
                }
            }
            let (u, p) = best.ok_or(Error::NoCandidates)?;
            Ok(ClsDecision {
                group: g,
                labels: vec![(u, query.groups[g].types[u].clone())],
                score: Some(p),
            })
        })
        .collect()
}

/// Per group, every label whose two hand-shake cells both exceed `delta`.
pub fn decode_cls_multi<T: Scalar>(z: &ScoreMatrix<T>, query: &Query, delta: f64) -> Result<Vec<ClsDecision>> {
    let c = query.clst.ok_or(Error::NoCandidates)?;
    Ok(query
        .type_markers
        .iter()
        .enumerate()
        .map(|(g, markers)| ClsDecision {
            group: g,
            labels: markers
                .iter()
                .enumerate()
                .filter(|&(_, &k)| {
                    let (a, b) = hand_shake(z, c, k);
                    a > delta && b > delta
                })
                .map(|(u, _)| (u, query.groups[g].types[u].clone()))
                .collect(),
            score: None,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::{build_target, GoldItem, Passage, PrefixGroup, QueryBuilder, QueryConfig};
    use crate::schema::{parse_schema, Mode};
    use crate::tokenize::Vocab;

    fn query(schema: &str, text: &str, mode: Mode) -> Query {
        let schema = parse_schema(schema).unwrap();
        let vocab = Vocab::build(&[text], &schema.labels()).unwrap();
        let qb = QueryBuilder::new(&schema, &vocab, QueryConfig::default());
        let group = PrefixGroup::from_schema(&schema, vec![]).unwrap();
        qb.build_query(vec![group], &Passage::new(&vocab, text), mode).unwrap()
    }

    fn from_target(q: &Query, cells: &Array2<bool>) -> ScoreMatrix<f64> {
        let raw = cells.mapv(|b| if b { 5.0 } else { -5.0 });
        ScoreMatrix::masked(&raw, &q.scoring_mask)
    }

    #[test]
    fn threshold_boundary() {
        let z = ScoreMatrix {
            values: ndarray::arr2(&[[-1.0, 0.0, 2.0, f64::NEG_INFINITY]]),
        };
        assert_eq!(threshold(&z, 0.0), ndarray::arr2(&[[false, true, true, false]]));
        assert!(threshold(&z, f64::INFINITY).iter().all(|&b| !b));
        let all_masked = ScoreMatrix { values: Array2::from_elem((3, 3), f64::NEG_INFINITY) };
        assert!(threshold(&all_masked, f64::NEG_INFINITY).iter().all(|&b| !b));
    }

    #[test]
    fn decodes_figure_example() {
        let text = "Steve Jobs founded Apple";
        let q = query(r#"{"person": null, "org": null}"#, text, Mode::Extract);
        let gold = vec![vec![
            GoldItem { label: "person".into(), span: Some((0, 10)) },
            GoldItem { label: "org".into(), span: Some((19, 24)) },
        ]];
        let t = build_target(&q, &gold).unwrap();
        let z = from_target(&q, &t.cells);
        let spans = decode_ie(&z, &q, 0.0);
        let got: Vec<(&str, &str)> = spans.iter().map(|s| (s.span.surface.as_str(), s.label.as_str())).collect();
        assert_eq!(got, vec![("Steve Jobs", "person"), ("Apple", "org")]);
        assert_eq!(oracle_decode(&z, &q, 0.0), spans);

        let kinds: Vec<LinkKind> = links(&z, &q, 0.0).into_iter().map(|l| l.kind).collect();
        assert_eq!(kinds.iter().filter(|&&k| k == LinkKind::HeadTail).count(), 2);
        assert_eq!(kinds.iter().filter(|&&k| k == LinkKind::HeadType).count(), 2);
        assert_eq!(kinds.iter().filter(|&&k| k == LinkKind::TypeTail).count(), 2);
    }

    #[test]
    fn head_tail_alone_decodes_nothing() {
        let q = query(r#"{"person": null}"#, "a b", Mode::Extract);
        let mut cells = Array2::from_elem((q.len(), q.len()), false);
        let ts = q.text_start();
        cells[[ts, ts + 1]] = true;
        cells[[ts, q.type_markers[0][0]]] = true;
        let z = from_target(&q, &cells);
        assert!(decode_ie(&z, &q, 0.0).is_empty());
    }

    #[test]
    fn single_token_span() {
        let q = query(r#"{"person": null}"#, "a", Mode::Extract);
        let mut cells = Array2::from_elem((q.len(), q.len()), false);
        let (ts, k) = (q.text_start(), q.type_markers[0][0]);
        cells[[ts, ts]] = true;
        cells[[ts, k]] = true;
        cells[[k, ts]] = true;
        let z = from_target(&q, &cells);
        let spans = oracle_decode(&z, &q, 0.0);
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].span.surface, "a");
        assert_eq!(decode_ie(&z, &q, 0.0), spans);
    }

    #[test]
    fn empty_text_decodes_nothing() {
        let q = query(r#"{"person": null}"#, "", Mode::Extract);
        let z = ScoreMatrix::masked(&Array2::from_elem((q.len(), q.len()), 9.0), &q.scoring_mask);
        assert!(oracle_decode(&z, &q, 0.0).is_empty());
        assert!(decode_ie(&z, &q, 0.0).is_empty());
    }

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    fn cls_matrix(q: &Query, cells: &[(usize, f64, f64)]) -> ScoreMatrix<f64> {
        let mut raw = Array2::from_elem((q.len(), q.len()), -20.0);
        let c = q.clst.unwrap();
        for &(u, fwd, back) in cells {
            let k = q.type_markers[0][u];
            raw[[c, k]] = logit(fwd);
            raw[[k, c]] = logit(back);
        }
        ScoreMatrix::masked(&raw, &q.scoring_mask)
    }

    #[test]
    fn single_label_argmax_of_products() {
        let labels = (0..6).map(|i| format!("\"L{i}\": null")).collect::<Vec<_>>().join(", ");
        let q = query(&format!("{{{labels}}}"), "x", Mode::ClassifySingle);
        let z = cls_matrix(&q, &[(3, 0.9, 0.8), (5, 0.95, 0.6)]);
        let d = decode_cls_single(&z, &q).unwrap();
        assert_eq!(d[0].labels, vec![(3, "L3".to_string())]);

        let tie = cls_matrix(&q, &[(2, 0.7, 0.7), (4, 0.7, 0.7)]);
        assert_eq!(decode_cls_single(&tie, &q).unwrap()[0].labels[0].0, 2);

        let shifted = z.map(|v| v + 3.0);
        assert_eq!(decode_cls_single(&shifted, &q).unwrap()[0].labels[0].0, 3);
    }

    #[test]
    fn single_candidate_always_wins() {
        let q = query(r#"{"only": null}"#, "x", Mode::ClassifySingle);
        let z = cls_matrix(&q, &[(0, 0.01, 0.02)]);
        assert_eq!(decode_cls_single(&z, &q).unwrap()[0].labels[0].1, "only");
    }

    #[test]
    fn single_label_requires_clst() {
        let q = query(r#"{"only": null}"#, "x", Mode::Extract);
        let z = ScoreMatrix::masked(&Array2::<f64>::zeros((q.len(), q.len())), &q.scoring_mask);
        assert!(matches!(decode_cls_single(&z, &q), Err(Error::NoCandidates)));
    }

    #[test]
    fn multi_label_threshold() {
        let q = query(r#"{"y1": null, "y2": null, "y3": null}"#, "x", Mode::ClassifyMulti);
        let z = cls_matrix(&q, &[(0, 0.95, 0.95), (1, 0.95, 0.85), (2, 0.5, 0.99)]);
        let d = decode_cls_multi(&z, &q, 0.9).unwrap();
        assert_eq!(d[0].labels, vec![(0, "y1".to_string())]);
        let low = cls_matrix(&q, &[(0, 0.9, 0.9), (1, 0.85, 0.5)]);
        assert!(decode_cls_multi(&low, &q, 0.9).unwrap()[0].labels.is_empty());
    }
}
