use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{
    validate, ActivityGraph, Attribute, NodeClass, QueryEdge, QueryError, QueryNode, Relationship,
    Rule, Violation,
};

// Field order is alphabetical so the serializer emits sorted keys.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    edges: Vec<RawEdge>,
    nodes: Vec<RawNode>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    #[serde(default)]
    attributes: Vec<String>,
    class: String,
    id: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdge {
    a: String,
    b: String,
    rel: Vec<String>,
}

/// Parses and validates a query document.
///
/// Several edges over the same unordered node pair are merged into one edge
/// carrying the union of their relationships.
pub fn parse_activity_graph(document: &str) -> Result<ActivityGraph, QueryError> {
    let raw: RawGraph = serde_json::from_str(document).map_err(|e| QueryError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;

    let mut violations = Vec::new();
    let mut nodes = Vec::with_capacity(raw.nodes.len());
    for rn in raw.nodes {
        let class = NodeClass::parse(&rn.class)?;
        let mut attributes = BTreeSet::new();
        for token in &rn.attributes {
            if !attributes.insert(Attribute::parse(token)?) {
                violations.push(Violation::new(
                    &rn.id,
                    Rule::DuplicateAttribute,
                    format!("node '{}' lists '{token}' twice", rn.id),
                ));
            }
        }
        nodes.push(QueryNode {
            id: rn.id,
            class,
            attributes,
        });
    }

    let mut edges: Vec<QueryEdge> = Vec::with_capacity(raw.edges.len());
    for re in raw.edges {
        let relationships = re
            .rel
            .iter()
            .map(|t| Relationship::parse(t))
            .collect::<Result<BTreeSet<_>, _>>()?;
        let edge = QueryEdge {
            a: re.a,
            b: re.b,
            relationships,
        };
        match edges.iter_mut().find(|e| e.key() == edge.key()) {
            Some(existing) => merge_edge(existing, edge)?,
            None => edges.push(edge),
        }
    }

    let graph = ActivityGraph { nodes, edges };
    violations.extend(validate(&graph));
    if violations.is_empty() {
        Ok(graph)
    } else {
        Err(QueryError::Invalid(violations))
    }
}

fn merge_edge(existing: &mut QueryEdge, incoming: QueryEdge) -> Result<(), QueryError> {
    let same_direction = existing.a == incoming.a;
    let later = Relationship::Later;
    if !same_direction && incoming.relationships.contains(&later) {
        if existing.relationships.contains(&later) {
            return Err(QueryError::ConflictingLater {
                a: existing.a.clone(),
                b: existing.b.clone(),
            });
        }
        std::mem::swap(&mut existing.a, &mut existing.b);
    }
    existing.relationships.extend(incoming.relationships);
    Ok(())
}

/// Canonical document text: sorted keys, two-space indentation, trailing newline.
pub fn serialize_activity_graph(graph: &ActivityGraph) -> String {
    let raw = RawGraph {
        edges: graph
            .edges
            .iter()
            .map(|e| RawEdge {
                a: e.a.clone(),
                b: e.b.clone(),
                rel: e.relationships.iter().map(|r| r.as_str().to_string()).collect(),
            })
            .collect(),
        nodes: graph
            .nodes
            .iter()
            .map(|n| RawNode {
                attributes: n.attributes.iter().map(|a| a.as_str().to_string()).collect(),
                class: n.class.as_str().to_string(),
                id: n.id.clone(),
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&raw).expect("query documents always serialize");
    text.push('\n');
    text
}

impl serde::Serialize for ActivityGraph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let value: serde_json::Value =
            serde_json::from_str(&serialize_activity_graph(self)).map_err(serde::ser::Error::custom)?;
        value.serialize(s)
    }
}

impl<'de> serde::Deserialize<'de> for ActivityGraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(d)?;
        parse_activity_graph(&value.to_string()).map_err(serde::de::Error::custom)
    }
}
