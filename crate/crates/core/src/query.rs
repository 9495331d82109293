//! Query construction: prefix groups, candidate types and text laid out as
//! one encoder input, with isolation-aware position ids, token type ids and
//! attention masks, the scoring mask and supervision targets.
//!
//! Layout: `[CLS] ([P] prefix ([T] type)*)+ [CLST]? [Text] text [SEP]`.

use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{Mode, Schema};
use crate::tokenize::{self, TokenizedText, Vocab};

/// A located span of the source text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpanRef {
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

/// One `(type, span)` pair of an extraction path. Classification levels
/// carry no span.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PathElement {
    pub label: String,
    pub span: Option<SpanRef>,
}

impl PathElement {
    pub fn span(label: impl Into<String>, start: usize, end: usize, surface: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            span: Some(SpanRef {
                start,
                end,
                surface: surface.into(),
            }),
        }
    }

    pub fn label_only(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            span: None,
        }
    }

    fn render(&self) -> String {
        match &self.span {
            Some(s) => format!("{}: {}", self.label, s.surface),
            None => self.label.clone(),
        }
    }
}

/// Labels of a path, root first.
pub fn path_labels(path: &[PathElement]) -> Vec<&str> {
    path.iter().map(|e| e.label.as_str()).collect()
}

/// An already extracted path together with the candidate types that may
/// follow it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixGroup {
    pub path: Vec<PathElement>,
    pub types: Vec<String>,
}

impl PrefixGroup {
    /// Group for `path` with every child of its schema node as a candidate.
    pub fn from_schema(schema: &Schema, path: Vec<PathElement>) -> Result<Self> {
        let types = schema
            .children_of(&path_labels(&path))?
            .into_iter()
            .map(str::to_string)
            .collect();
        Ok(Self { path, types })
    }

    /// `label: surface` pairs joined by `,`.
    pub fn rendered_prefix(&self) -> String {
        self.path
            .iter()
            .map(PathElement::render)
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// The source text of a query with its tokenization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Passage {
    pub source: String,
    pub tokens: TokenizedText,
}

impl Passage {
    pub fn new(vocab: &Vocab, source: impl Into<String>) -> Self {
        let source = source.into();
        let tokens = vocab.tokenize(&source);
        Self { source, tokens }
    }

    /// Token interval `(first, last)` covering the character span exactly.
    pub fn token_span(&self, start: usize, end: usize) -> Result<(usize, usize)> {
        let first = self.tokens.token_starting_at(start);
        let last = self.tokens.token_ending_at(end);
        match (first, last) {
            (Some(i), Some(j)) if i <= j => Ok((i, j)),
            _ => Err(Error::MisalignedSpan { start, end }),
        }
    }

    pub fn span_ref(&self, first: usize, last: usize) -> SpanRef {
        let start = self.tokens.offsets[first].0;
        let end = self.tokens.offsets[last].1;
        SpanRef {
            start,
            end,
            surface: tokenize::span_text(&self.source, (start, end)).expect("token offsets are in bounds"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryConfig {
    pub max_len: usize,
    pub max_prompt_len: usize,
    /// Segment-isolated attention and position resets.
    pub isolation: bool,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            max_len: 512,
            max_prompt_len: 256,
            isolation: true,
        }
    }
}

/// Which part of the layout a token belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Segment {
    Cls,
    /// `[P]` and prefix tokens of group `g`.
    Prefix(usize),
    /// `[T]` and label tokens of type `u` of group `g`.
    Type(usize, usize),
    Clst,
    /// `[Text]` and the text tokens.
    Text,
    Sep,
}

pub const TOKEN_TYPE_TEXT: u8 = 0;
pub const TOKEN_TYPE_PREFIX: u8 = 1;
pub const TOKEN_TYPE_TYPE: u8 = 2;
pub const TOKEN_TYPE_CLST: u8 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub groups: Vec<PrefixGroup>,
    pub mode: Mode,
    pub passage: Passage,
    pub token_ids: Vec<u32>,
    pub segments: Vec<Segment>,
    pub position_ids: Vec<usize>,
    pub token_type_ids: Vec<u8>,
    pub attention_mask: Array2<bool>,
    pub scoring_mask: Array2<bool>,
    pub prefix_markers: Vec<usize>,
    /// `type_markers[g][u]` is the index of the `[T]` before type `u` of group `g`.
    pub type_markers: Vec<Vec<usize>>,
    pub clst: Option<usize>,
    pub text_marker: usize,
    pub max_prompt_len: usize,
    pub isolation: bool,
}

impl Query {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Index of the first text token.
    pub fn text_start(&self) -> usize {
        self.text_marker + 1
    }

    pub fn text_len(&self) -> usize {
        self.passage.tokens.len()
    }

    pub fn is_text(&self, i: usize) -> bool {
        i >= self.text_start() && i < self.text_start() + self.text_len()
    }

    /// Tokens ahead of `[Text]`.
    pub fn esi_len(&self) -> usize {
        self.text_marker
    }

    /// `(group, type)` of a `[T]` marker.
    pub fn type_at(&self, idx: usize) -> Option<(usize, usize)> {
        match self.segments.get(idx) {
            Some(&Segment::Type(g, u)) if self.type_markers[g][u] == idx => Some((g, u)),
            _ => None,
        }
    }

    pub fn all_type_markers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.type_markers
            .iter()
            .enumerate()
            .flat_map(|(g, ms)| ms.iter().enumerate().map(move |(u, &k)| (g, u, k)))
    }

    /// Human-readable rendering of the query.
    pub fn render(&self) -> String {
        let mut out = String::from(tokenize::CLS);
        for g in &self.groups {
            out.push_str(tokenize::PREFIX);
            let prefix = g.rendered_prefix();
            if !prefix.is_empty() {
                out.push(' ');
                out.push_str(&prefix);
            }
            for t in &g.types {
                out.push_str(tokenize::TYPE);
                out.push(' ');
                out.push_str(t);
            }
        }
        if let Some(marker) = clst_marker(self.mode) {
            out.push_str(marker);
        }
        out.push_str(tokenize::TEXT);
        if !self.passage.source.is_empty() {
            out.push(' ');
            out.push_str(&self.passage.source);
        }
        out.push_str(tokenize::SEP);
        out
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

fn clst_marker(mode: Mode) -> Option<&'static str> {
    match mode {
        Mode::Extract => None,
        Mode::ClassifySingle => Some(tokenize::CLASSIFY),
        Mode::ClassifyMulti => Some(tokenize::MULTICLASSIFY),
    }
}

fn clst_id(mode: Mode) -> Option<u32> {
    match mode {
        Mode::Extract => None,
        Mode::ClassifySingle => Some(tokenize::CLASSIFY_ID),
        Mode::ClassifyMulti => Some(tokenize::MULTICLASSIFY_ID),
    }
}

/// Builds queries against one schema and vocabulary.
#[derive(Debug, Clone, Copy)]
pub struct QueryBuilder<'a> {
    pub schema: &'a Schema,
    pub vocab: &'a Vocab,
    pub config: QueryConfig,
}

impl<'a> QueryBuilder<'a> {
    pub fn new(schema: &'a Schema, vocab: &'a Vocab, config: QueryConfig) -> Self {
        Self { schema, vocab, config }
    }

    fn prefix_cost(&self, group: &PrefixGroup) -> usize {
        1 + self.vocab.tokenize(&group.rendered_prefix()).len()
    }

    fn type_cost(&self, label: &str) -> usize {
        1 + self.vocab.tokenize(label).len()
    }

    fn base_cost(mode: Mode) -> usize {
        1 + usize::from(mode.is_classify())
    }

    pub fn build_query(&self, groups: Vec<PrefixGroup>, passage: &Passage, mode: Mode) -> Result<Query> {
        for (g, group) in groups.iter().enumerate() {
            if group.types.is_empty() {
                return Err(Error::EmptyTypeSet(g));
            }
            let children = self.schema.children_of(&path_labels(&group.path))?;
            if let Some(t) = group.types.iter().find(|t| !children.contains(&t.as_str())) {
                return Err(Error::UnknownGoldType(t.clone()));
            }
        }
        if groups.is_empty() {
            return Err(Error::EmptyTypeSet(0));
        }

        let mut token_ids = vec![tokenize::CLS_ID];
        let mut segments = vec![Segment::Cls];
        let mut prefix_markers = Vec::with_capacity(groups.len());
        let mut type_markers = Vec::with_capacity(groups.len());
        for (g, group) in groups.iter().enumerate() {
            prefix_markers.push(token_ids.len());
            token_ids.push(tokenize::PREFIX_ID);
            segments.push(Segment::Prefix(g));
            for id in self.vocab.tokenize(&group.rendered_prefix()).token_ids {
                token_ids.push(id);
                segments.push(Segment::Prefix(g));
            }
            let mut markers = Vec::with_capacity(group.types.len());
            for (u, label) in group.types.iter().enumerate() {
                markers.push(token_ids.len());
                token_ids.push(tokenize::TYPE_ID);
                segments.push(Segment::Type(g, u));
                for id in self.vocab.tokenize(label).token_ids {
                    token_ids.push(id);
                    segments.push(Segment::Type(g, u));
                }
            }
            type_markers.push(markers);
        }
        let clst = clst_id(mode).map(|id| {
            token_ids.push(id);
            segments.push(Segment::Clst);
            token_ids.len() - 1
        });

        let esi_len = token_ids.len();
        if esi_len > self.config.max_prompt_len {
            return Err(Error::PromptOverflow {
                needed: esi_len,
                budget: self.config.max_prompt_len,
            });
        }
        let needed = self.config.max_prompt_len + passage.tokens.len() + 2;
        if needed > self.config.max_len {
            return Err(Error::QueryTooLong {
                needed,
                max_len: self.config.max_len,
            });
        }

        let text_marker = token_ids.len();
        token_ids.push(tokenize::TEXT_ID);
        segments.push(Segment::Text);
        for &id in &passage.tokens.token_ids {
            token_ids.push(id);
            segments.push(Segment::Text);
        }
        token_ids.push(tokenize::SEP_ID);
        segments.push(Segment::Sep);

        let n = token_ids.len();
        let mut query = Query {
            groups,
            mode,
            passage: passage.clone(),
            token_ids,
            segments,
            position_ids: vec![0; n],
            token_type_ids: vec![0; n],
            attention_mask: Array2::from_elem((n, n), false),
            scoring_mask: Array2::from_elem((n, n), false),
            prefix_markers,
            type_markers,
            clst,
            text_marker,
            max_prompt_len: self.config.max_prompt_len,
            isolation: self.config.isolation,
        };
        assign_isolation(&mut query);
        query.scoring_mask = build_scoring_mask(&query);
        Ok(query)
    }

    /// Packs the `(group, type)` pairs of `groups` greedily, in order, into
    /// queries whose prompt fits `max_prompt_len`. A group whose types do not
    /// fit in one query is repeated with disjoint type subsets.
    pub fn split_query(&self, groups: &[PrefixGroup], passage: &Passage, mode: Mode) -> Result<Vec<Query>> {
        let budget = self.config.max_prompt_len;
        let base = Self::base_cost(mode);
        let mut batches: Vec<Vec<PrefixGroup>> = Vec::new();
        let mut current: Vec<PrefixGroup> = Vec::new();
        let mut cost = base;
        for (g, group) in groups.iter().enumerate() {
            if group.types.is_empty() {
                return Err(Error::EmptyTypeSet(g));
            }
            let p_cost = self.prefix_cost(group);
            let mut open = false;
            for t in &group.types {
                let t_cost = self.type_cost(t);
                if base + p_cost + t_cost > budget {
                    return Err(Error::PromptOverflow {
                        needed: base + p_cost + t_cost,
                        budget,
                    });
                }
                let add = if open { t_cost } else { p_cost + t_cost };
                if cost + add > budget {
                    batches.push(std::mem::take(&mut current));
                    cost = base;
                    open = false;
                }
                if !open {
                    current.push(PrefixGroup {
                        path: group.path.clone(),
                        types: Vec::new(),
                    });
                    cost += p_cost;
                    open = true;
                }
                current.last_mut().expect("group opened").types.push(t.clone());
                cost += t_cost;
            }
        }
        if !current.is_empty() {
            batches.push(current);
        }
        batches
            .into_iter()
            .map(|b| self.build_query(b, passage, mode))
            .collect()
    }
}

/// Fills position ids, token type ids and the attention mask from the
/// segment layout.
pub fn assign_isolation(query: &mut Query) {
    let n = query.len();
    let text_base = query.max_prompt_len;

    let mut prefix_len = vec![0usize; query.groups.len()];
    for seg in &query.segments {
        if let Segment::Prefix(g) = *seg {
            prefix_len[g] += 1;
        }
    }

    let mut positions = vec![0usize; n];
    let mut sequential = 0usize;
    let mut last_seg: Option<Segment> = None;
    let mut within = 0usize;
    for (i, seg) in query.segments.iter().enumerate() {
        if last_seg != Some(*seg) {
            within = 0;
            last_seg = Some(*seg);
        }
        positions[i] = match *seg {
            Segment::Cls => 0,
            Segment::Prefix(_) | Segment::Type(..) if !query.isolation => sequential,
            Segment::Prefix(_) => 1 + within,
            Segment::Type(g, _) => 1 + prefix_len[g] + within,
            Segment::Clst => text_base - 1,
            Segment::Text | Segment::Sep => text_base + (i - query.text_marker),
        };
        within += 1;
        sequential += 1;
    }

    let token_types = query
        .segments
        .iter()
        .map(|s| match s {
            Segment::Cls | Segment::Text | Segment::Sep => TOKEN_TYPE_TEXT,
            Segment::Prefix(_) => TOKEN_TYPE_PREFIX,
            Segment::Type(..) => TOKEN_TYPE_TYPE,
            Segment::Clst => TOKEN_TYPE_CLST,
        })
        .collect();

    let segs = &query.segments;
    let isolation = query.isolation;
    let mask = Array2::from_shape_fn((n, n), |(i, j)| !isolation || attends(segs[i], segs[j]));

    query.position_ids = positions;
    query.token_type_ids = token_types;
    query.attention_mask = mask;
}

fn is_global(s: Segment) -> bool {
    matches!(s, Segment::Cls | Segment::Sep | Segment::Clst | Segment::Text)
}

fn attends(a: Segment, b: Segment) -> bool {
    if is_global(a) || is_global(b) {
        return true;
    }
    match (a, b) {
        (Segment::Prefix(g), Segment::Prefix(h)) => g == h,
        (Segment::Prefix(g), Segment::Type(h, _)) | (Segment::Type(h, _), Segment::Prefix(g)) => g == h,
        (Segment::Type(g, u), Segment::Type(h, v)) => g == h && u == v,
        _ => false,
    }
}

/// Valid score cells. Extraction: text head-tail (`i <= j`), text head to
/// `[T]`, `[T]` to text tail. Classification: `[CLST]`/`[T]` pairs only.
pub fn build_scoring_mask(query: &Query) -> Array2<bool> {
    let n = query.len();
    let mut mask = Array2::from_elem((n, n), false);
    match query.clst {
        Some(c) => {
            for (_, _, k) in query.all_type_markers() {
                mask[[c, k]] = true;
                mask[[k, c]] = true;
            }
        }
        None => {
            let text = query.text_start()..query.text_start() + query.text_len();
            for i in text.clone() {
                for j in i..text.end {
                    mask[[i, j]] = true;
                }
                for (_, _, k) in query.all_type_markers() {
                    mask[[i, k]] = true;
                    mask[[k, i]] = true;
                }
            }
        }
    }
    mask
}

/// A supervision item for one group at one level: the next label and, for
/// extraction, its character span.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GoldItem {
    pub label: String,
    pub span: Option<(usize, usize)>,
}

/// Ground-truth cells aligned to a query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetMatrix {
    pub cells: Array2<bool>,
}

impl TargetMatrix {
    pub fn positives(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }
}

/// `gold[g]` supervises group `g` of the query.
pub fn build_target(query: &Query, gold: &[Vec<GoldItem>]) -> Result<TargetMatrix> {
    let n = query.len();
    let mut cells = Array2::from_elem((n, n), false);
    for (g, items) in gold.iter().enumerate() {
        let group = query
            .groups
            .get(g)
            .ok_or_else(|| Error::ShapeMismatch(format!("gold for group {g} but query has {}", query.groups.len())))?;
        for item in items {
            let u = group
                .types
                .iter()
                .position(|t| *t == item.label)
                .ok_or_else(|| Error::UnknownGoldType(item.label.clone()))?;
            let k = query.type_markers[g][u];
            match (query.clst, item.span) {
                (Some(c), _) => {
                    cells[[c, k]] = true;
                    cells[[k, c]] = true;
                }
                (None, Some((start, end))) => {
                    let (first, last) = query.passage.token_span(start, end)?;
                    let (i, j) = (query.text_start() + first, query.text_start() + last);
                    cells[[i, j]] = true;
                    cells[[i, k]] = true;
                    cells[[k, j]] = true;
                }
                (None, None) => {
                    return Err(Error::MisalignedSpan { start: 0, end: 0 });
                }
            }
        }
    }
    Ok(TargetMatrix { cells })
}
