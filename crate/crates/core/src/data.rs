//! Line-delimited datasets with character offsets.
//!
//! One JSON record per line:
//! `{"text": …, "paths": [[{"type": …, "start": …, "end": …} | {"type": …, "label_only": true}, …], …], "mode": "ie" | "cls_single" | "cls_multi"}`.
//! `mode` is optional and defaults to the schema's own level modes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::{GoldItem, PathElement};
use crate::schema::{Mode, Schema};
use crate::tokenize::{span_text, split_words};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub text: String,
    /// Annotated label paths, root first.
    pub paths: Vec<Vec<GoldItem>>,
    /// Overrides the mode of every schema level when set.
    pub mode: Option<Mode>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordElement {
    #[serde(rename = "type")]
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    end: Option<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    label_only: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    text: String,
    paths: Vec<Vec<RecordElement>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mode: Option<Mode>,
}

impl Example {
    /// The schema as seen by this example.
    pub fn effective_schema(&self, schema: &Schema) -> Schema {
        match self.mode {
            Some(mode) => schema.clone().with_mode(mode),
            None => schema.clone(),
        }
    }

    /// Gold paths with surfaces filled in from the text.
    pub fn gold_paths(&self) -> Vec<Vec<PathElement>> {
        self.paths
            .iter()
            .map(|p| p.iter().map(|g| gold_element(&self.text, g)).collect())
            .collect()
    }

    pub fn to_record_line(&self) -> String {
        let record = Record {
            text: self.text.clone(),
            paths: self
                .paths
                .iter()
                .map(|p| {
                    p.iter()
                        .map(|g| RecordElement {
                            label: g.label.clone(),
                            start: g.span.map(|s| s.0),
                            end: g.span.map(|s| s.1),
                            label_only: g.span.is_none(),
                        })
                        .collect()
                })
                .collect(),
            mode: self.mode,
        };
        serde_json::to_string(&record).expect("record serializes")
    }
}

pub fn gold_element(text: &str, g: &GoldItem) -> PathElement {
    match g.span {
        Some((s, e)) => PathElement::span(&g.label, s, e, span_text(text, (s, e)).unwrap_or_default()),
        None => PathElement::label_only(&g.label),
    }
}

fn parse_line(line_no: usize, line: &str, schema: &Schema) -> Result<Example> {
    let record: Record = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
        line: line_no,
        msg: e.to_string(),
    })?;
    let len = record.text.chars().count();
    let words = split_words(&record.text);
    let mut paths = Vec::with_capacity(record.paths.len());
    for raw in record.paths {
        if raw.is_empty() {
            return Err(Error::MalformedRecord {
                line: line_no,
                msg: "empty path".into(),
            });
        }
        let mut labels: Vec<&str> = Vec::new();
        let mut path = Vec::with_capacity(raw.len());
        for el in &raw {
            labels.push(&el.label);
            if schema.node_at(&labels).is_err() {
                return Err(Error::UnknownGoldType(labels.join(" / ")));
            }
            let span = match (el.label_only, el.start, el.end) {
                (true, None, None) => None,
                (false, Some(start), Some(end)) => {
                    if start >= end || end > len {
                        return Err(Error::OffsetOutOfRange {
                            line: line_no,
                            start,
                            end,
                            len,
                        });
                    }
                    let aligned = words.iter().any(|&(s, _)| s == start) && words.iter().any(|&(_, e)| e == end);
                    if !aligned {
                        return Err(Error::MisalignedSpan { start, end });
                    }
                    Some((start, end))
                }
                _ => {
                    return Err(Error::MalformedRecord {
                        line: line_no,
                        msg: format!("element {:?} needs start and end, or label_only", el.label),
                    })
                }
            };
            path.push(GoldItem {
                label: el.label.clone(),
                span,
            });
        }
        paths.push(path);
    }
    Ok(Example {
        text: record.text,
        paths,
        mode: record.mode,
    })
}

/// Parses and validates every non-blank line.
pub fn parse_dataset(text: &str, schema: &Schema) -> Result<Vec<Example>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(i + 1, l, schema))
        .collect()
}

pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Vec<Example>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound {
            what: "dataset",
            path: path.display().to_string(),
        },
        _ => Error::Io(e),
    })?;
    parse_dataset(&text, schema)
}

#[derive(Debug, Deserialize)]
struct JointEntity {
    #[serde(rename = "type")]
    label: String,
    start: usize,
    end: usize,
}

#[derive(Debug, Deserialize)]
struct JointRelation {
    #[serde(rename = "type")]
    label: String,
    head: usize,
    tail: usize,
}

#[derive(Debug, Deserialize)]
struct JointRecord {
    tokens: Vec<String>,
    entities: Vec<JointEntity>,
    #[serde(default)]
    relations: Vec<JointRelation>,
}

/// Converts one joint entity-relation record (`tokens`, `entities` with
/// token offsets and exclusive ends, `relations` indexing entities) into an
/// [`Example`]. Relation labels become `"relation ( tail type )"`; entities
/// heading no relation become single-element paths.
pub fn convert_joint_record(line: &str) -> Result<Example> {
    let rec: JointRecord = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
        line: 0,
        msg: e.to_string(),
    })?;
    let mut starts = Vec::with_capacity(rec.tokens.len());
    let mut cursor = 0;
    for t in &rec.tokens {
        starts.push(cursor);
        cursor += t.chars().count() + 1;
    }
    let text = rec.tokens.join(" ");
    let span = |e: &JointEntity| -> Result<(usize, usize)> {
        if e.start >= e.end || e.end > rec.tokens.len() {
            return Err(Error::MalformedRecord {
                line: 0,
                msg: format!("entity ({}, {}) out of range", e.start, e.end),
            });
        }
        Ok((starts[e.start], starts[e.end - 1] + rec.tokens[e.end - 1].chars().count()))
    };
    let item = |e: &JointEntity| -> Result<GoldItem> {
        Ok(GoldItem {
            label: e.label.clone(),
            span: Some(span(e)?),
        })
    };
    let mut paths = Vec::new();
    for r in &rec.relations {
        let (h, t) = match (rec.entities.get(r.head), rec.entities.get(r.tail)) {
            (Some(h), Some(t)) => (h, t),
            _ => {
                return Err(Error::MalformedRecord {
                    line: 0,
                    msg: "relation references a missing entity".into(),
                })
            }
        };
        paths.push(vec![
            item(h)?,
            GoldItem {
                label: format!("{} ( {} )", r.label, t.label),
                span: Some(span(t)?),
            },
        ]);
    }
    for (i, e) in rec.entities.iter().enumerate() {
        if !rec.relations.iter().any(|r| r.head == i) {
            paths.push(vec![item(e)?]);
        }
    }
    Ok(Example { text, paths, mode: None })
}
