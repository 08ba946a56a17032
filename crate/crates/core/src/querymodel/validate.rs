use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ActivityGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Empty,
    DuplicateNodeId,
    DuplicateAttribute,
    UnknownEndpoint,
    SelfEdge,
    EmptyRelationships,
    DuplicateEdge,
    Disconnected,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::Empty => "empty",
            Rule::DuplicateNodeId => "duplicate node id",
            Rule::DuplicateAttribute => "duplicate attribute",
            Rule::UnknownEndpoint => "unknown endpoint",
            Rule::SelfEdge => "self edge",
            Rule::EmptyRelationships => "empty relationships",
            Rule::DuplicateEdge => "duplicate edge",
            Rule::Disconnected => "disconnected",
        };
        f.write_str(s)
    }
}

/// One broken graph invariant; `subject` names the offending node or edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub subject: String,
    pub rule: Rule,
    pub detail: String,
}

impl Violation {
    pub fn new(subject: impl Into<String>, rule: Rule, detail: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            rule,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.rule, self.detail)
    }
}

/// Lists every broken `ActivityGraph` invariant; empty means valid.
pub fn validate(graph: &ActivityGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    if graph.nodes.is_empty() {
        out.push(Violation::new("graph", Rule::Empty, "graph has no nodes"));
        return out;
    }

    let mut seen = BTreeSet::new();
    for node in &graph.nodes {
        if !seen.insert(node.id.as_str()) {
            out.push(Violation::new(
                &node.id,
                Rule::DuplicateNodeId,
                format!("node id '{}' is used more than once", node.id),
            ));
        }
        let mut bases: BTreeMap<&str, usize> = BTreeMap::new();
        for a in &node.attributes {
            *bases.entry(a.base()).or_default() += 1;
        }
        for (base, n) in bases {
            if n > 1 {
                out.push(Violation::new(
                    &node.id,
                    Rule::DuplicateAttribute,
                    format!("node '{}' carries {n} '{base}' attributes", node.id),
                ));
            }
        }
    }

    let mut pairs = BTreeSet::new();
    for edge in &graph.edges {
        let subject = format!("{}-{}", edge.a, edge.b);
        for end in [&edge.a, &edge.b] {
            if !seen.contains(end.as_str()) {
                out.push(Violation::new(
                    &subject,
                    Rule::UnknownEndpoint,
                    format!("edge {subject} references unknown node '{end}'"),
                ));
            }
        }
        if edge.a == edge.b {
            out.push(Violation::new(
                &subject,
                Rule::SelfEdge,
                format!("edge {subject} connects a node to itself"),
            ));
        }
        if edge.relationships.is_empty() {
            out.push(Violation::new(
                &subject,
                Rule::EmptyRelationships,
                format!("edge {subject} carries no relationship"),
            ));
        }
        let (x, y) = edge.key();
        if !pairs.insert((x.to_string(), y.to_string())) {
            out.push(Violation::new(
                &subject,
                Rule::DuplicateEdge,
                format!("more than one edge joins '{x}' and '{y}'"),
            ));
        }
    }

    let components = graph.components();
    if components.len() > 1 {
        let listing = components
            .iter()
            .map(|c| format!("{{{}}}", c.iter().cloned().collect::<Vec<_>>().join(", ")))
            .collect::<Vec<_>>()
            .join(" | ");
        out.push(Violation::new("graph", Rule::Disconnected, listing));
    }
    out
}
