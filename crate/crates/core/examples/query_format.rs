//! Activity graphs in code and as JSON documents: building, validating,
//! serializing, and the errors a malformed document produces.

use std::error::Error;

use actgraph::querymodel::{parse_activity_graph, serialize_activity_graph, validate};
use actgraph::{ActivityGraph, Attribute, NodeClass, QueryEdge, QueryNode, Relationship};

fn main() {
    if let Err(e) = run() {
        eprintln!("query_format: {e}");
        std::process::exit(1);
    }
}

/// Two sightings of one person, a bag that appears near the first sighting,
/// and a vehicle the second sighting walks up to later.
fn hand_off() -> ActivityGraph {
    ActivityGraph::new(
        vec![
            QueryNode::new("p1", NodeClass::Person),
            QueryNode::new("p2", NodeClass::Person),
            QueryNode::new("bag", NodeClass::Object).with(Attribute::Appearing),
            QueryNode::new("car", NodeClass::Vehicle),
        ],
        vec![
            QueryEdge::new("p1", "bag", [Relationship::Near]),
            QueryEdge::new("p1", "p2", [Relationship::SameEntity, Relationship::Later]),
            QueryEdge::new("p2", "car", [Relationship::Near]),
        ],
    )
}

pub fn run() -> Result<(), Box<dyn Error>> {
    let graph = hand_off();
    assert!(validate(&graph).is_empty());
    let text = serialize_activity_graph(&graph);
    println!("{text}");

    // the canonical form is stable under a parse/serialize cycle
    let back = parse_activity_graph(&text)?;
    assert_eq!(serialize_activity_graph(&back), text);

    let broken = [
        r#"{"nodes":[{"id":"a","class":"person"},{"id":"b","class":"object"}],"edges":[]}"#,
        r#"{"nodes":[{"id":"a","class":"person"},{"id":"a","class":"object"}],"edges":[{"a":"a","b":"a","rel":["near"]}]}"#,
        r#"{"nodes":[{"id":"a","class":"person","attributes":["size:large","size:small"]}],"edges":[]}"#,
        r#"{"nodes":[{"id":"a","class":"bicycle"}],"edges":[]}"#,
        r#"{"nodes":[{"id":"a","class":"person"},{"id":"b","class":"person"}],"edges":[{"a":"a","b":"b","rel":["adjacent"]}]}"#,
    ];
    for doc in broken {
        match parse_activity_graph(doc) {
            Ok(_) => println!("accepted?! {doc}"),
            Err(e) => println!("rejected: {e}"),
        }
    }
    Ok(())
}
