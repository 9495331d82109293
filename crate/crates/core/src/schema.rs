//! Hierarchical extraction schema.
//!
//! A schema file is a nested mapping, written in JSON syntax, whose keys are
//! type labels and whose values are either `null` (leaf) or another non-empty
//! mapping. Key order is significant and preserved; duplicate keys among
//! siblings are rejected. Labels are opaque strings, so role suffixes such as
//! `"work for ( organization )"` are never interpreted.

use std::fmt;

use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Task mode of one schema level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub enum Mode {
    /// Span extraction by token linking.
    #[default]
    #[serde(rename = "ie")]
    Extract,
    /// Exactly one label per group.
    #[serde(rename = "cls_single")]
    ClassifySingle,
    /// Any number of labels per group above the threshold.
    #[serde(rename = "cls_multi")]
    ClassifyMulti,
}

impl Mode {
    pub fn is_classify(self) -> bool {
        !matches!(self, Mode::Extract)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Extract => "ie",
            Mode::ClassifySingle => "cls_single",
            Mode::ClassifyMulti => "cls_multi",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ie" | "extract" => Ok(Mode::Extract),
            "cls_single" => Ok(Mode::ClassifySingle),
            "cls_multi" => Ok(Mode::ClassifyMulti),
            other => Err(Error::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaNode {
    pub label: String,
    pub children: Vec<SchemaNode>,
    /// Mode of the level at which this node is a candidate type.
    pub mode: Mode,
}

impl SchemaNode {
    pub fn leaf(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            children: Vec::new(),
            mode: Mode::Extract,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn child(&self, label: &str) -> Option<&SchemaNode> {
        self.children.iter().find(|c| c.label == label)
    }

    fn height(&self) -> usize {
        self.children.iter().map(|c| 1 + c.height()).max().unwrap_or(0)
    }

    fn leaf_count(&self) -> usize {
        if self.is_leaf() {
            1
        } else {
            self.children.iter().map(SchemaNode::leaf_count).sum()
        }
    }
}

/// A schema tree under a synthetic root with an empty label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub root: SchemaNode,
}

impl Schema {
    pub fn new(children: Vec<SchemaNode>) -> Result<Self> {
        let schema = Schema {
            root: SchemaNode {
                label: String::new(),
                children,
                mode: Mode::Extract,
            },
        };
        schema.check_invariants()?;
        Ok(schema)
    }

    /// Longest root-to-leaf path length.
    pub fn depth(&self) -> usize {
        self.root.height()
    }

    /// Number of distinct root-to-leaf paths.
    pub fn leaf_paths(&self) -> usize {
        if self.root.is_leaf() {
            0
        } else {
            self.root.leaf_count()
        }
    }

    pub fn node_at<S: AsRef<str>>(&self, path: &[S]) -> Result<&SchemaNode> {
        let mut node = &self.root;
        for label in path {
            node = node.child(label.as_ref()).ok_or_else(|| {
                Error::UnknownPath(path.iter().map(|s| s.as_ref().to_string()).collect())
            })?;
        }
        Ok(node)
    }

    /// Candidate labels following `path`, in file order. Empty iff the node is a leaf.
    pub fn children_of<S: AsRef<str>>(&self, path: &[S]) -> Result<Vec<&str>> {
        Ok(self
            .node_at(path)?
            .children
            .iter()
            .map(|c| c.label.as_str())
            .collect())
    }

    /// Mode of the level that follows `path`.
    pub fn mode_after<S: AsRef<str>>(&self, path: &[S]) -> Result<Mode> {
        let node = self.node_at(path)?;
        Ok(node.children.first().map(|c| c.mode).unwrap_or_default())
    }

    /// Assigns `modes[i]` to every node at depth `i + 1`; deeper levels keep
    /// the last entry.
    pub fn with_level_modes(mut self, modes: &[Mode]) -> Self {
        fn walk(node: &mut SchemaNode, depth: usize, modes: &[Mode]) {
            for child in &mut node.children {
                child.mode = modes
                    .get(depth)
                    .or(modes.last())
                    .copied()
                    .unwrap_or_default();
                walk(child, depth + 1, modes);
            }
        }
        walk(&mut self.root, 0, modes);
        self
    }

    /// Sets one mode on every level.
    pub fn with_mode(self, mode: Mode) -> Self {
        self.with_level_modes(&[mode])
    }

    /// All labels in the tree, in pre-order.
    pub fn labels(&self) -> Vec<&str> {
        fn walk<'a>(node: &'a SchemaNode, out: &mut Vec<&'a str>) {
            for c in &node.children {
                out.push(&c.label);
                walk(c, out);
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }

    pub fn render(&self) -> String {
        fn write_map(node: &SchemaNode, out: &mut String) {
            out.push('{');
            for (i, c) in node.children.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                out.push_str(&serde_json::to_string(&c.label).expect("string encodes"));
                out.push_str(": ");
                if c.is_leaf() {
                    out.push_str("null");
                } else {
                    write_map(c, out);
                }
            }
            out.push('}');
        }
        let mut out = String::new();
        write_map(&self.root, &mut out);
        out
    }

    fn check_invariants(&self) -> Result<()> {
        fn walk(node: &SchemaNode) -> Result<()> {
            for (i, c) in node.children.iter().enumerate() {
                if c.label.is_empty() {
                    return Err(Error::InvariantViolation("empty label".into()));
                }
                if node.children[..i].iter().any(|s| s.label == c.label) {
                    return Err(Error::InvariantViolation(format!(
                        "duplicate sibling label {:?}",
                        c.label
                    )));
                }
                if c.mode != node.children[0].mode {
                    return Err(Error::InvariantViolation(format!(
                        "mixed modes among siblings of {:?}",
                        c.label
                    )));
                }
                walk(c)?;
            }
            Ok(())
        }
        if self.root.is_leaf() {
            return Err(Error::InvariantViolation("schema has no types".into()));
        }
        walk(&self.root)
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

pub fn parse_schema(text: &str) -> Result<Schema> {
    let map: NodeMap =
        serde_json::from_str(text).map_err(|e| Error::MalformedSchema(e.to_string()))?;
    if map.0.is_empty() {
        return Err(Error::MalformedSchema("schema has no types".into()));
    }
    Schema::new(map.into_nodes()).map_err(|e| match e {
        Error::InvariantViolation(m) => Error::MalformedSchema(m),
        other => other,
    })
}

pub fn validate_schema(schema: &Schema, max_depth: usize) -> Result<()> {
    schema.check_invariants()?;
    let depth = schema.depth();
    if depth > max_depth {
        return Err(Error::SchemaTooDeep {
            depth,
            max: max_depth,
        });
    }
    Ok(())
}

/// Order-preserving, duplicate-rejecting view of one mapping level.
struct NodeMap(Vec<(String, Option<NodeMap>)>);

impl NodeMap {
    fn into_nodes(self) -> Vec<SchemaNode> {
        self.0
            .into_iter()
            .map(|(label, sub)| SchemaNode {
                label,
                children: sub.map(NodeMap::into_nodes).unwrap_or_default(),
                mode: Mode::Extract,
            })
            .collect()
    }
}

impl<'de> Deserialize<'de> for NodeMap {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct MapVisitor;

        impl<'de> Visitor<'de> for MapVisitor {
            type Value = NodeMap;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a mapping from type labels to null or a nested mapping")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> std::result::Result<NodeMap, A::Error> {
                let mut entries: Vec<(String, Option<NodeMap>)> = Vec::new();
                while let Some(label) = access.next_key::<String>()? {
                    if label.is_empty() {
                        return Err(de::Error::custom("empty label"));
                    }
                    if entries.iter().any(|(l, _)| *l == label) {
                        return Err(de::Error::custom(format!("duplicate sibling label {label:?}")));
                    }
                    let sub: Option<NodeMap> = access.next_value()?;
                    if matches!(&sub, Some(m) if m.0.is_empty()) {
                        return Err(de::Error::custom(format!(
                            "label {label:?} maps to an empty mapping; use null for leaves"
                        )));
                    }
                    entries.push((label, sub));
                }
                Ok(NodeMap(entries))
            }
        }

        deserializer.deserialize_map(MapVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const CONLL04: &str = r#"{"organization": {"organization in ( location )": null}, "other": null, "location": {"located in ( location )": null}, "people": {"live in ( location )": null, "work for ( organization )": null, "kill ( people )": null}}"#;

    #[test]
    fn parses_figure_schema() {
        let s = parse_schema(r#"{"person": {"work for ( organization )": null}, "organization": null}"#).unwrap();
        assert_eq!(s.children_of::<&str>(&[]).unwrap(), vec!["person", "organization"]);
        assert_eq!(s.children_of(&["person"]).unwrap(), vec!["work for ( organization )"]);
        assert_eq!(s.depth(), 2);
    }

    #[test]
    fn minimal_schema() {
        let s = parse_schema(r#"{"a": null}"#).unwrap();
        assert_eq!(s.depth(), 1);
        assert_eq!(s.leaf_paths(), 1);
    }

    #[test]
    fn sentiment_schema_path() {
        let s = parse_schema(r#"{"aspect": {"positive ( opinion )": null, "neutral ( opinion )": null, "negative ( opinion )": null}, "opinion": null}"#).unwrap();
        assert!(s.node_at(&["aspect", "positive ( opinion )"]).is_ok());
    }

    #[test]
    fn children_in_file_order() {
        let s = parse_schema(CONLL04).unwrap();
        assert_eq!(
            s.children_of(&["people"]).unwrap(),
            vec!["live in ( location )", "work for ( organization )", "kill ( people )"]
        );
        assert!(s.children_of(&["other"]).unwrap().is_empty());
        assert!(matches!(s.children_of(&["nobody"]), Err(Error::UnknownPath(_))));
    }

    #[test]
    fn rejects_bad_files() {
        for bad in [
            r#"{"a": null, "a": null}"#,
            r#"{"": null}"#,
            r#"{"a": {}}"#,
            r#"{}"#,
            r#"{"a": 3}"#,
            r#"{"a": null"#,
        ] {
            assert!(matches!(parse_schema(bad), Err(Error::MalformedSchema(_))), "{bad}");
        }
    }

    #[test]
    fn validate_depth() {
        let s = parse_schema(CONLL04).unwrap();
        validate_schema(&s, 4).unwrap();
        let deep = parse_schema(r#"{"a": {"b": {"c": {"d": {"e": null}}}}}"#).unwrap();
        assert!(matches!(
            validate_schema(&deep, 4),
            Err(Error::SchemaTooDeep { depth: 5, max: 4 })
        ));
    }

    #[test]
    fn duplicate_siblings_violate_invariants() {
        let bad = Schema {
            root: SchemaNode {
                label: String::new(),
                children: vec![SchemaNode::leaf("a"), SchemaNode::leaf("a")],
                mode: Mode::Extract,
            },
        };
        assert!(matches!(validate_schema(&bad, 4), Err(Error::InvariantViolation(_))));
    }

    #[test]
    fn level_modes() {
        let s = parse_schema(CONLL04)
            .unwrap()
            .with_level_modes(&[Mode::Extract, Mode::ClassifyMulti]);
        assert_eq!(s.mode_after::<&str>(&[]).unwrap(), Mode::Extract);
        assert_eq!(s.mode_after(&["people"]).unwrap(), Mode::ClassifyMulti);
    }

    #[test]
    fn render_round_trip() {
        let s = parse_schema(CONLL04).unwrap();
        assert_eq!(parse_schema(&s.render()).unwrap(), s);
    }
}
