//! Level-by-level scheduling of queries over a schema, result merging, and
//! teacher-forced training.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::decode::{decode_cls_multi, decode_cls_single, decode_ie, ScoreMatrix};
use crate::error::{Error, Result};
use crate::grid::ScoreBundle;
use crate::metrics::{metric_for_task, score_paths, MetricReport, Task};
use crate::model::optim::{AdamW, OptimConfig};
use crate::model::{Model, Params};
use crate::query::{
    build_target, path_labels, GoldItem, Passage, PathElement, PrefixGroup, Query, QueryBuilder, QueryConfig,
    TargetMatrix,
};
use crate::scalar::Scalar;
use crate::schema::{Mode, Schema};
use crate::tokenize::Vocab;

/// Anything that turns a query into a masked score matrix.
pub trait Scorer: Sync {
    type Scalar: Scalar;

    fn score(&self, query: &Query) -> Result<ScoreMatrix<Self::Scalar>>;
}

impl<T: Scalar> Scorer for Model<T> {
    type Scalar = T;

    fn score(&self, query: &Query) -> Result<ScoreMatrix<T>> {
        Model::score(self, query)
    }
}

/// Logit magnitude written on target and non-target cells by [`OracleScorer`].
pub const ORACLE_LOGIT: f64 = 10.0;

fn same_element(el: &PathElement, gold: &GoldItem) -> bool {
    el.label == gold.label && el.span.as_ref().map(|s| (s.start, s.end)) == gold.span
}

/// Gold continuations of `path` restricted to `types`, deduplicated, in record order.
pub fn gold_children(gold: &[Vec<GoldItem>], path: &[PathElement], types: &[String]) -> Vec<GoldItem> {
    let n = path.len();
    let mut out: Vec<GoldItem> = Vec::new();
    for p in gold {
        if p.len() > n && path.iter().zip(p).all(|(e, g)| same_element(e, g)) && types.contains(&p[n].label) {
            if !out.contains(&p[n]) {
                out.push(p[n].clone());
            }
        }
    }
    out
}

fn query_gold(query: &Query, gold: &[Vec<GoldItem>]) -> Vec<Vec<GoldItem>> {
    query
        .groups
        .iter()
        .map(|g| gold_children(gold, &g.path, &g.types))
        .collect()
}

/// Scores every query from gold annotations: `+ORACLE_LOGIT` on target cells,
/// `-ORACLE_LOGIT` on the other valid cells. Texts without annotations score
/// all valid cells negative.
#[derive(Debug, Clone, Default)]
pub struct OracleScorer {
    gold: HashMap<String, Vec<Vec<GoldItem>>>,
}

impl OracleScorer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_examples(examples: &[Example]) -> Self {
        let mut s = Self::new();
        for ex in examples {
            s.add(&ex.text, ex.paths.clone());
        }
        s
    }

    pub fn add(&mut self, text: &str, paths: Vec<Vec<GoldItem>>) {
        self.gold.entry(text.to_string()).or_default().extend(paths);
    }
}

impl Scorer for OracleScorer {
    type Scalar = f64;

    fn score(&self, query: &Query) -> Result<ScoreMatrix<f64>> {
        let gold = self.gold.get(&query.passage.source).map(Vec::as_slice).unwrap_or(&[]);
        let target = build_target(query, &query_gold(query, gold))?;
        let raw = target.cells.mapv(|t| if t { ORACLE_LOGIT } else { -ORACLE_LOGIT });
        Ok(ScoreMatrix::masked(&raw, &query.scoring_mask))
    }
}

/// Replays stored matrices keyed by query rendering.
#[derive(Debug, Clone, Default)]
pub struct BundleScorer {
    pub bundle: ScoreBundle,
}

impl Scorer for BundleScorer {
    type Scalar = f32;

    fn score(&self, query: &Query) -> Result<ScoreMatrix<f32>> {
        let key = query.render();
        let z = self
            .bundle
            .get(&key)
            .ok_or_else(|| Error::MissingOracleScore(key.clone()))?;
        if z.values.dim() != (query.len(), query.len()) {
            return Err(Error::MalformedGrid(format!(
                "grid {:?} for a query of length {}",
                z.values.dim(),
                query.len()
            )));
        }
        Ok(z.clone())
    }
}

/// Inference thresholds and depth bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractConfig {
    pub query: QueryConfig,
    pub delta_ie: f64,
    pub delta_cls: f64,
    /// Extra cap on recursion depth besides the schema depth.
    pub max_depth: Option<usize>,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            query: QueryConfig::default(),
            delta_ie: 0.0,
            delta_cls: 0.9,
            max_depth: None,
        }
    }
}

/// One extracted label path.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExtractionPath {
    pub elements: Vec<PathElement>,
    /// False only when recursion stopped at the configured depth cap before a leaf.
    pub terminal: bool,
}

/// A query of a level plan with the plan-level index of each of its groups.
#[derive(Debug, Clone)]
pub struct PlannedQuery {
    pub query: Query,
    pub group_ids: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct LevelPlan {
    /// 1-based.
    pub level: usize,
    pub groups: Vec<PrefixGroup>,
    pub modes: Vec<Mode>,
    pub queries: Vec<PlannedQuery>,
}

/// Deduplicates `prior`, drops leaf paths, and packs the remaining groups
/// per mode into queries under the prompt budget.
pub fn plan_level(qb: &QueryBuilder<'_>, level: usize, prior: &[Vec<PathElement>], passage: &Passage) -> Result<LevelPlan> {
    let mut seen = BTreeSet::new();
    let mut groups = Vec::new();
    let mut modes = Vec::new();
    for path in prior {
        if !seen.insert(path.clone()) {
            continue;
        }
        let labels = path_labels(path);
        if qb.schema.node_at(&labels)?.is_leaf() {
            continue;
        }
        modes.push(qb.schema.mode_after(&labels)?);
        groups.push(PrefixGroup::from_schema(qb.schema, path.clone())?);
    }
    let index: HashMap<&[PathElement], usize> = groups.iter().enumerate().map(|(i, g)| (g.path.as_slice(), i)).collect();
    let mut queries = Vec::new();
    for mode in [Mode::Extract, Mode::ClassifySingle, Mode::ClassifyMulti] {
        let subset: Vec<PrefixGroup> = groups
            .iter()
            .zip(&modes)
            .filter(|(_, &m)| m == mode)
            .map(|(g, _)| g.clone())
            .collect();
        if subset.is_empty() {
            continue;
        }
        for query in qb.split_query(&subset, passage, mode)? {
            let group_ids = query.groups.iter().map(|g| index[g.path.as_slice()]).collect();
            queries.push(PlannedQuery { query, group_ids });
        }
    }
    Ok(LevelPlan {
        level,
        groups,
        modes,
        queries,
    })
}

/// One decoded continuation of a plan group.
#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub group: usize,
    /// Index of the label among the group's full candidate list.
    pub type_rank: usize,
    pub element: PathElement,
    pub score: Option<f64>,
}

/// Decodes one planned query into hits on plan groups.
pub fn decode_planned<T: Scalar>(
    plan: &LevelPlan,
    pq: &PlannedQuery,
    z: &ScoreMatrix<T>,
    cfg: &ExtractConfig,
) -> Result<Vec<Hit>> {
    let q = &pq.query;
    let rank = |local: usize, label: &str| {
        let g = pq.group_ids[local];
        plan.groups[g].types.iter().position(|t| t == label).unwrap_or(usize::MAX)
    };
    match q.mode {
        Mode::Extract => Ok(decode_ie(z, q, T::of(cfg.delta_ie))
            .into_iter()
            .map(|s| Hit {
                group: pq.group_ids[s.group],
                type_rank: rank(s.group, &s.label),
                element: PathElement {
                    label: s.label,
                    span: Some(s.span),
                },
                score: None,
            })
            .collect()),
        Mode::ClassifySingle | Mode::ClassifyMulti => {
            let decisions = if q.mode == Mode::ClassifySingle {
                decode_cls_single(z, q)?
            } else {
                decode_cls_multi(z, q, cfg.delta_cls)?
            };
            Ok(decisions
                .into_iter()
                .flat_map(|d| {
                    let group = d.group;
                    let score = d.score;
                    d.labels.into_iter().map(move |(_, label)| (group, label, score))
                })
                .map(|(g, label, score)| Hit {
                    group: pq.group_ids[g],
                    type_rank: rank(g, &label),
                    element: PathElement::label_only(label),
                    score,
                })
                .collect())
        }
    }
}

/// Combines the hits of every query of a plan into per-group continuations:
/// a set union, except single-label classification which keeps the best
/// product over all sub-queries (ties to the lowest candidate index).
pub fn merge_results(plan: &LevelPlan, per_query: &[Vec<Hit>]) -> Vec<Vec<PathElement>> {
    let mut sets: Vec<BTreeSet<PathElement>> = vec![BTreeSet::new(); plan.groups.len()];
    let mut best: Vec<Option<(f64, usize, PathElement)>> = vec![None; plan.groups.len()];
    for hit in per_query.iter().flatten() {
        if plan.modes[hit.group] == Mode::ClassifySingle {
            let p = hit.score.unwrap_or(f64::NEG_INFINITY);
            let slot = &mut best[hit.group];
            let better = match slot {
                None => true,
                Some((bp, br, _)) => p > *bp || (p == *bp && hit.type_rank < *br),
            };
            if better {
                *slot = Some((p, hit.type_rank, hit.element.clone()));
            }
        } else {
            sets[hit.group].insert(hit.element.clone());
        }
    }
    for (set, b) in sets.iter_mut().zip(best) {
        if let Some((_, _, el)) = b {
            set.insert(el);
        }
    }
    sets.into_iter().map(|s| s.into_iter().collect()).collect()
}

fn reading_order(path: &[PathElement]) -> Vec<(Option<(usize, usize)>, &str)> {
    path.iter()
        .map(|e| (e.span.as_ref().map(|s| (s.start, s.end)), e.label.as_str()))
        .collect()
}

/// Runs the recursive extraction of `text`. When `trace` is given, every
/// executed query is appended to it in execution order.
pub fn extract_traced<S: Scorer>(
    qb: &QueryBuilder<'_>,
    scorer: &S,
    text: &str,
    cfg: &ExtractConfig,
    mut trace: Option<&mut Vec<Query>>,
) -> Result<Vec<ExtractionPath>> {
    let passage = Passage::new(qb.vocab, text);
    if passage.tokens.is_empty() {
        return Ok(Vec::new());
    }
    let depth = cfg.max_depth.map_or(qb.schema.depth(), |d| d.min(qb.schema.depth()));
    let mut results: BTreeSet<ExtractionPath> = BTreeSet::new();
    let mut frontier: Vec<Vec<PathElement>> = vec![Vec::new()];
    for level in 1..=depth {
        let plan = plan_level(qb, level, &frontier, &passage)?;
        if plan.queries.is_empty() {
            break;
        }
        if let Some(t) = trace.as_deref_mut() {
            t.extend(plan.queries.iter().map(|pq| pq.query.clone()));
        }
        let per_query = plan
            .queries
            .par_iter()
            .map(|pq| {
                let z = scorer.score(&pq.query)?;
                decode_planned(&plan, pq, &z, cfg)
            })
            .collect::<Result<Vec<_>>>()?;
        let merged = merge_results(&plan, &per_query);
        let mut next = Vec::new();
        for (group, children) in plan.groups.iter().zip(merged) {
            if children.is_empty() && !group.path.is_empty() {
                results.insert(ExtractionPath {
                    elements: group.path.clone(),
                    terminal: true,
                });
            }
            for child in children {
                let mut path = group.path.clone();
                path.push(child);
                let leaf = qb.schema.node_at(&path_labels(&path))?.is_leaf();
                if leaf || level == depth {
                    results.insert(ExtractionPath {
                        elements: path,
                        terminal: leaf,
                    });
                } else {
                    next.push(path);
                }
            }
        }
        next.sort_by(|a, b| reading_order(a).cmp(&reading_order(b)));
        frontier = next;
    }
    Ok(results.into_iter().collect())
}

pub fn extract<S: Scorer>(qb: &QueryBuilder<'_>, scorer: &S, text: &str, cfg: &ExtractConfig) -> Result<Vec<ExtractionPath>> {
    extract_traced(qb, scorer, text, cfg, None)
}

/// Extracts every example with its effective schema, in parallel.
pub fn predict_dataset<S: Scorer>(
    schema: &Schema,
    vocab: &Vocab,
    scorer: &S,
    examples: &[Example],
    cfg: &ExtractConfig,
) -> Result<Vec<Vec<ExtractionPath>>> {
    examples
        .par_iter()
        .map(|ex| {
            let schema = ex.effective_schema(schema);
            let qb = QueryBuilder::new(&schema, vocab, cfg.query);
            extract(&qb, scorer, &ex.text, cfg)
        })
        .collect()
}

pub fn evaluate<S: Scorer>(
    schema: &Schema,
    vocab: &Vocab,
    scorer: &S,
    examples: &[Example],
    cfg: &ExtractConfig,
    task: Task,
) -> Result<MetricReport> {
    let pred = predict_dataset(schema, vocab, scorer, examples, cfg)?;
    let pred: Vec<Vec<Vec<PathElement>>> = pred
        .into_iter()
        .map(|ps| ps.into_iter().map(|p| p.elements).collect())
        .collect();
    let gold: Vec<_> = examples.iter().map(Example::gold_paths).collect();
    Ok(score_paths(&gold, &pred, &metric_for_task(task)))
}

/// Score matrices an [`OracleScorer`] assigns to every query that extraction
/// of `examples` executes, keyed by rendering.
pub fn oracle_bundle(schema: &Schema, vocab: &Vocab, examples: &[Example], cfg: &ExtractConfig) -> Result<ScoreBundle> {
    let oracle = OracleScorer::from_examples(examples);
    let mut bundle = ScoreBundle::default();
    for ex in examples {
        let schema = ex.effective_schema(schema);
        let qb = QueryBuilder::new(&schema, vocab, cfg.query);
        let mut trace = Vec::new();
        extract_traced(&qb, &oracle, &ex.text, cfg, Some(&mut trace))?;
        for q in trace {
            let z = oracle.score(&q)?;
            bundle.insert(q.render(), z.map(|v| v as f32));
        }
    }
    Ok(bundle)
}

/// Every level's queries for `example` built from gold prefixes, with their
/// targets. Prefix groups follow record order.
pub fn supervision(
    schema: &Schema,
    vocab: &Vocab,
    config: QueryConfig,
    example: &Example,
) -> Result<Vec<(Query, TargetMatrix)>> {
    let schema = example.effective_schema(schema);
    let qb = QueryBuilder::new(&schema, vocab, config);
    let passage = Passage::new(vocab, example.text.as_str());
    if passage.tokens.is_empty() {
        return Ok(Vec::new());
    }
    let gold = example.gold_paths();
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<PathElement>> = vec![Vec::new()];
    for level in 1..=schema.depth() {
        let plan = plan_level(&qb, level, &frontier, &passage)?;
        if plan.queries.is_empty() {
            break;
        }
        for pq in plan.queries {
            let target = build_target(&pq.query, &query_gold(&pq.query, &example.paths))?;
            out.push((pq.query, target));
        }
        frontier = gold
            .iter()
            .filter(|p| p.len() >= level)
            .map(|p| p[..level].to_vec())
            .collect();
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Examples per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub optim: OptimConfig,
    /// Compute training F1 every this many epochs (and after the last); 0 disables.
    pub eval_every: usize,
    /// Stop once training F1 reaches 1.
    pub stop_when_perfect: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            seed: 42,
            optim: OptimConfig::default(),
            eval_every: 1,
            stop_when_perfect: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Summed circle loss over every query of the epoch.
    pub loss: f64,
    /// Full-path strict F1 of self-extraction on the training set.
    pub train_f1: Option<f64>,
}

/// Teacher-forced training. Gradients of a batch are summed in a fixed
/// order, so results do not depend on the thread count.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    schema: &Schema,
    vocab: &Vocab,
    examples: &[Example],
    extract_cfg: &ExtractConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    let data = examples
        .par_iter()
        .map(|ex| supervision(schema, vocab, extract_cfg.query, ex))
        .collect::<Result<Vec<_>>>()?;
    let steps_per_epoch = examples.len().div_ceil(cfg.batch_size);
    let mut opt = AdamW::new(cfg.optim, &model.params, cfg.epochs * steps_per_epoch);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut logs = Vec::new();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let items: Vec<&(Query, TargetMatrix)> = batch.iter().flat_map(|&i| data[i].iter()).collect();
            let model_ref = &*model;
            let parts = items
                .par_iter()
                .map(|(q, t)| model_ref.loss_and_gradient(q, t))
                .collect::<Result<Vec<_>>>()?;
            let mut grad = Params::zeros(&model.config);
            for (loss, g) in &parts {
                epoch_loss += loss.to_f64_lossy();
                grad.add_assign(g);
            }
            opt.step(&mut model.params, &mut grad);
        }
        let due = cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
        let train_f1 = if due {
            let r = evaluate(schema, vocab, &*model, examples, extract_cfg, Task::Quintuple)?;
            Some(r.summary("path").f1)
        } else {
            None
        };
        let log = EpochLog {
            epoch,
            loss: epoch_loss,
            train_f1,
        };
        on_epoch(&log);
        logs.push(log);
        if cfg.stop_when_perfect && train_f1 == Some(1.0) {
            break;
        }
    }
    Ok(logs)
}

/// Versioned extraction record of one input text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub version: u32,
    pub paths: Vec<Vec<RecordElement>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordElement {
    #[serde(rename = "type")]
    pub label: String,
    pub surface: Option<String>,
    pub start: Option<usize>,
    pub end: Option<usize>,
}

pub const RECORD_VERSION: u32 = 1;

impl ExtractionRecord {
    pub fn new(paths: &[ExtractionPath]) -> Self {
        Self {
            version: RECORD_VERSION,
            paths: paths
                .iter()
                .map(|p| {
                    p.elements
                        .iter()
                        .map(|e| RecordElement {
                            label: e.label.clone(),
                            surface: e.span.as_ref().map(|s| s.surface.clone()),
                            start: e.span.as_ref().map(|s| s.start),
                            end: e.span.as_ref().map(|s| s.end),
                        })
                        .collect()
                })
                .collect(),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    pub fn from_line(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            line: 0,
            msg: e.to_string(),
        })
    }

    pub fn paths(&self) -> Vec<Vec<PathElement>> {
        self.paths
            .iter()
            .map(|p| {
                p.iter()
                    .map(|e| match (&e.surface, e.start, e.end) {
                        (Some(s), Some(a), Some(b)) => PathElement::span(&e.label, a, b, s),
                        _ => PathElement::label_only(&e.label),
                    })
                    .collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_dataset;
    use crate::schema::parse_schema;

    const FIG: &str = r#"{"person": {"educated at ( university )": {"academic degree": null}}, "organization": null}"#;
    const TEXT: &str = "Leonard Parker received his PhD from Harvard University";

    fn fixture() -> (Schema, Vocab, Example) {
        let schema = parse_schema(FIG).unwrap();
        let line = r#"{"text": "Leonard Parker received his PhD from Harvard University", "paths": [[{"type": "person", "start": 0, "end": 14}, {"type": "educated at ( university )", "start": 37, "end": 55}, {"type": "academic degree", "start": 28, "end": 31}]]}"#;
        let ex = parse_dataset(line, &schema).unwrap().remove(0);
        let vocab = Vocab::build(&[TEXT], &schema.labels()).unwrap();
        (schema, vocab, ex)
    }

    #[test]
    fn oracle_recovers_depth_three_chain() {
        let (schema, vocab, ex) = fixture();
        let qb = QueryBuilder::new(&schema, &vocab, QueryConfig::default());
        let oracle = OracleScorer::from_examples(std::slice::from_ref(&ex));
        let out = extract(&qb, &oracle, TEXT, &ExtractConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].elements, ex.gold_paths()[0]);
        assert!(out[0].terminal);
    }

    #[test]
    fn empty_text_gives_nothing() {
        let (schema, vocab, ex) = fixture();
        let qb = QueryBuilder::new(&schema, &vocab, QueryConfig::default());
        let oracle = OracleScorer::from_examples(&[ex]);
        assert!(extract(&qb, &oracle, "", &ExtractConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn partial_paths_are_reported() {
        let (schema, vocab, mut ex) = fixture();
        ex.paths[0].truncate(1);
        let qb = QueryBuilder::new(&schema, &vocab, QueryConfig::default());
        let oracle = OracleScorer::from_examples(std::slice::from_ref(&ex));
        let out = extract(&qb, &oracle, TEXT, &ExtractConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].elements.len(), 1);
        let capped = ExtractConfig { max_depth: Some(1), ..ExtractConfig::default() };
        let (_, _, full) = fixture();
        let oracle = OracleScorer::from_examples(&[full]);
        let out = extract(&qb, &oracle, TEXT, &capped).unwrap();
        assert_eq!(out.len(), 1);
        assert!(!out[0].terminal);
    }

    #[test]
    fn supervision_follows_gold_prefixes() {
        let (schema, vocab, ex) = fixture();
        let sup = supervision(&schema, &vocab, QueryConfig::default(), &ex).unwrap();
        assert_eq!(sup.len(), 3);
        assert!(sup.iter().all(|(_, t)| t.positives() == 3));
        assert!(sup[1].0.render().starts_with("[CLS][P] person: Leonard Parker[T] educated at ( university )"));
    }

    #[test]
    fn plan_dedupes_and_skips_leaves() {
        let (schema, vocab, _) = fixture();
        let qb = QueryBuilder::new(&schema, &vocab, QueryConfig::default());
        let passage = Passage::new(&vocab, TEXT);
        let p = vec![PathElement::span("person", 0, 14, "Leonard Parker")];
        let leaf = vec![PathElement::span("organization", 37, 55, "Harvard University")];
        let plan = plan_level(&qb, 2, &[p.clone(), p, leaf], &passage).unwrap();
        assert_eq!(plan.groups.len(), 1);
        assert_eq!(plan.queries.len(), 1);
        assert!(plan_level(&qb, 2, &[], &passage).unwrap().queries.is_empty());
    }

    #[test]
    fn cls_single_merge_takes_global_best() {
        let schema = parse_schema(r#"{"a": null, "b": null, "c": null}"#).unwrap().with_mode(Mode::ClassifySingle);
        let vocab = Vocab::build(&["x"], &schema.labels()).unwrap();
        let qb = QueryBuilder::new(&schema, &vocab, QueryConfig::default());
        let plan = plan_level(&qb, 1, &[vec![]], &Passage::new(&vocab, "x")).unwrap();
        let hit = |rank: usize, label: &str, p: f64| Hit {
            group: 0,
            type_rank: rank,
            element: PathElement::label_only(label),
            score: Some(p),
        };
        let merged = merge_results(&plan, &[vec![hit(0, "a", 0.3)], vec![hit(2, "c", 0.7)], vec![hit(1, "b", 0.7)]]);
        assert_eq!(merged, vec![vec![PathElement::label_only("b")]]);
    }

    #[test]
    fn record_round_trip() {
        let (_, _, ex) = fixture();
        let path = ExtractionPath {
            elements: ex.gold_paths()[0].clone(),
            terminal: true,
        };
        let rec = ExtractionRecord::new(&[path.clone(), ExtractionPath { elements: vec![PathElement::label_only("positive")], terminal: true }]);
        let line = rec.to_line();
        assert!(line.starts_with(r#"{"version":1,"paths":[[{"type":"person","surface":"Leonard Parker","start":0,"end":14}"#));
        let back = ExtractionRecord::from_line(&line).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.paths()[0], path.elements);
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let (schema, vocab, ex) = fixture();
        let config = crate::model::ModelConfig {
            vocab_size: vocab.len(),
            hidden: 8,
            heads: 2,
            layers: 1,
            ffn: 16,
            head_dim: 4,
            max_len: 300,
            final_norm: true,
            rotary: true,
        };
        let mut model = Model::<f64>::init(config, 1, 0.1).unwrap();
        let before = model.clone();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 1,
            optim: OptimConfig { learning_rate: 0.0, ..OptimConfig::default() },
            eval_every: 0,
            ..TrainConfig::default()
        };
        let logs = train(&mut model, &schema, &vocab, &[ex], &ExtractConfig::default(), &cfg, |_| {}).unwrap();
        assert_eq!(logs.len(), 2);
        assert_eq!(logs[0].loss, logs[1].loss);
        assert_eq!(model, before);
    }
}
