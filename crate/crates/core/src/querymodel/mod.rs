//! Activity-graph queries: vocabulary, document format and validation.
//!
//! A query document looks like
//!
//! ```json
//! {
//!   "edges": [{"a": "p", "b": "v", "rel": ["later", "near"]}],
//!   "nodes": [
//!     {"attributes": [], "class": "person", "id": "p"},
//!     {"attributes": ["speed:stationary"], "class": "vehicle", "id": "v"}
//!   ]
//! }
//! ```
//!
//! `later` is directional (`a` happens before `b`); every other relationship
//! is symmetric.

mod document;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use document::{parse_activity_graph, serialize_activity_graph};
pub use validate::{validate, Rule, Violation};

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown class '{0}'")]
    UnknownClass(String),
    #[error("unknown attribute '{0}'")]
    UnknownAttribute(String),
    #[error("unknown relationship '{0}'")]
    UnknownRelationship(String),
    #[error("edges between '{a}' and '{b}' declare 'later' in both directions")]
    ConflictingLater { a: String, b: String },
    #[error("invalid activity graph: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

macro_rules! token_enum {
    ($(#[$meta:meta])* $name:ident, $err:ident { $($variant:ident => $token:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self {
                    $($name::$variant => $token),+
                }
            }

            pub fn parse(token: &str) -> Result<Self, QueryError> {
                match token {
                    $($token => Ok($name::$variant),)+
                    other => Err(QueryError::$err(other.to_string())),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.pad(self.as_str())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let token = String::deserialize(d)?;
                $name::parse(&token).map_err(serde::de::Error::custom)
            }
        }
    };
}

token_enum!(
    /// Object class of a query node.
    NodeClass, UnknownClass {
        Object => "object",
        Person => "person",
        Vehicle => "vehicle",
    }
);

token_enum!(
    /// Binary node attribute. Qualified attributes are written `base:qualifier`.
    Attribute, UnknownAttribute {
        Appearing => "appearing",
        Disappearing => "disappearing",
        SizeLarge => "size:large",
        SizeSmall => "size:small",
        SpeedMoving => "speed:moving",
        SpeedStationary => "speed:stationary",
    }
);

token_enum!(
    /// Pairwise relationship carried by a query edge.
    Relationship, UnknownRelationship {
        Later => "later",
        Near => "near",
        NotNear => "not_near",
        SameEntity => "same_entity",
    }
);

impl Attribute {
    /// Attribute name without its qualifier; at most one per node.
    pub fn base(&self) -> &'static str {
        self.as_str().split(':').next().unwrap()
    }
}

impl Relationship {
    pub fn is_directional(&self) -> bool {
        matches!(self, Relationship::Later)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryNode {
    pub id: String,
    pub class: NodeClass,
    pub attributes: BTreeSet<Attribute>,
}

impl QueryNode {
    pub fn new(id: impl Into<String>, class: NodeClass) -> Self {
        Self {
            id: id.into(),
            class,
            attributes: BTreeSet::new(),
        }
    }

    pub fn with(mut self, attr: Attribute) -> Self {
        self.attributes.insert(attr);
        self
    }
}

/// Edge between two query nodes; `later` reads "`a` before `b`".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryEdge {
    pub a: String,
    pub b: String,
    pub relationships: BTreeSet<Relationship>,
}

impl QueryEdge {
    pub fn new(
        a: impl Into<String>,
        b: impl Into<String>,
        relationships: impl IntoIterator<Item = Relationship>,
    ) -> Self {
        Self {
            a: a.into(),
            b: b.into(),
            relationships: relationships.into_iter().collect(),
        }
    }

    /// Unordered endpoint key.
    pub fn key(&self) -> (&str, &str) {
        if self.a <= self.b {
            (&self.a, &self.b)
        } else {
            (&self.b, &self.a)
        }
    }

    pub fn touches(&self, id: &str) -> bool {
        self.a == id || self.b == id
    }

    pub fn other(&self, id: &str) -> &str {
        if self.a == id {
            &self.b
        } else {
            &self.a
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ActivityGraph {
    pub nodes: Vec<QueryNode>,
    pub edges: Vec<QueryEdge>,
}

impl ActivityGraph {
    pub fn new(nodes: Vec<QueryNode>, edges: Vec<QueryEdge>) -> Self {
        Self { nodes, edges }
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn node(&self, id: &str) -> Option<&QueryNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Connected components as sorted id sets, ordered by their smallest id.
    /// Edges with unknown endpoints are ignored.
    pub fn components(&self) -> Vec<BTreeSet<String>> {
        let mut label: BTreeMap<&str, usize> =
            self.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
        // tiny graphs: relabel until stable
        loop {
            let mut changed = false;
            for e in &self.edges {
                let (Some(&la), Some(&lb)) = (label.get(e.a.as_str()), label.get(e.b.as_str()))
                else {
                    continue;
                };
                if la != lb {
                    let (lo, hi) = (la.min(lb), la.max(lb));
                    for v in label.values_mut() {
                        if *v == hi {
                            *v = lo;
                        }
                    }
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let mut groups: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
        for (id, l) in label {
            groups.entry(l).or_default().insert(id.to_string());
        }
        let mut out: Vec<_> = groups.into_values().collect();
        out.sort();
        out
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() <= 1
    }
}
