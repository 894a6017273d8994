//! Concept graph used to widen `@`-prefixed tag terms.
//!
//! File format:
//!
//! ```json
//! { "relations": {"location": "within", "usage": "subTypeOf"},
//!   "nodes": ["Room1", "Floor1", "Site1"],
//!   "edges": [{"child": "Room1", "relation": "within", "parent": "Floor1"}] }
//! ```
//!
//! When `relations` is omitted, `location` maps to `within` and `catalog` and
//! `usage` map to `subTypeOf`.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::normalize_tag_key;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "within")]
    Within,
    #[serde(rename = "subTypeOf")]
    SubTypeOf,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Within => "within",
            Relation::SubTypeOf => "subTypeOf",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub child: String,
    pub relation: Relation,
    pub parent: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OntologyError {
    #[error("ontology parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cycle through '{node}' in relation {relation}")]
    CycleDetected { node: String, relation: Relation },
    #[error("edge {child} {relation} {parent} references undeclared node '{missing}'")]
    DanglingEdge {
        child: String,
        relation: Relation,
        parent: String,
        missing: String,
    },
}

impl OntologyError {
    pub fn code(&self) -> &'static str {
        match self {
            OntologyError::Parse { .. } => "ParseError",
            OntologyError::CycleDetected { .. } => "CycleDetected",
            OntologyError::DanglingEdge { .. } => "DanglingEdge",
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    #[serde(default)]
    relations: Option<BTreeMap<String, Relation>>,
    #[serde(default)]
    nodes: Vec<String>,
    #[serde(default)]
    edges: Vec<Edge>,
}

#[derive(Debug, Clone, Default)]
pub struct OntologyGraph {
    nodes: BTreeSet<String>,
    edges: Vec<Edge>,
    parents: HashMap<(Relation, String), Vec<String>>,
    relations: BTreeMap<String, Relation>,
}

fn default_relations() -> BTreeMap<String, Relation> {
    BTreeMap::from([
        ("location".to_owned(), Relation::Within),
        ("catalog".to_owned(), Relation::SubTypeOf),
        ("usage".to_owned(), Relation::SubTypeOf),
    ])
}

impl OntologyGraph {
    /// An empty graph with the default key/relation bindings. Every inferred
    /// term degenerates to an exact match.
    pub fn empty() -> Self {
        Self {
            relations: default_relations(),
            ..Self::default()
        }
    }

    /// Builds and validates a graph. Edge endpoints must be declared nodes and
    /// each relation's edge set must be acyclic.
    pub fn new(
        nodes: impl IntoIterator<Item = String>,
        edges: Vec<Edge>,
        relations: Option<BTreeMap<String, Relation>>,
    ) -> Result<Self, OntologyError> {
        let nodes: BTreeSet<String> = nodes.into_iter().collect();
        for e in &edges {
            for end in [&e.child, &e.parent] {
                if !nodes.contains(end) {
                    return Err(OntologyError::DanglingEdge {
                        child: e.child.clone(),
                        relation: e.relation,
                        parent: e.parent.clone(),
                        missing: end.clone(),
                    });
                }
            }
        }
        let mut parents: HashMap<(Relation, String), Vec<String>> = HashMap::new();
        for e in &edges {
            let list = parents.entry((e.relation, e.child.clone())).or_default();
            if !list.contains(&e.parent) {
                list.push(e.parent.clone());
            }
        }
        let relations = match relations {
            Some(r) => r.into_iter().map(|(k, v)| (normalize_tag_key(&k), v)).collect(),
            None => default_relations(),
        };
        let graph = Self {
            nodes,
            edges,
            parents,
            relations,
        };
        graph.check_acyclic()?;
        Ok(graph)
    }

    fn check_acyclic(&self) -> Result<(), OntologyError> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Active,
            Done,
        }
        for relation in [Relation::Within, Relation::SubTypeOf] {
            let mut marks: HashMap<&str, Mark> = HashMap::new();
            for start in &self.nodes {
                if marks.contains_key(start.as_str()) {
                    continue;
                }
                // iterative DFS: (node, index of next parent to visit)
                let mut stack: Vec<(&str, usize)> = vec![(start.as_str(), 0)];
                marks.insert(start, Mark::Active);
                while let Some((node, idx)) = stack.last_mut() {
                    let next = self
                        .parents
                        .get(&(relation, node.to_string()))
                        .and_then(|p| p.get(*idx));
                    *idx += 1;
                    match next {
                        Some(parent) => match marks.get(parent.as_str()) {
                            Some(Mark::Active) => {
                                return Err(OntologyError::CycleDetected {
                                    node: parent.clone(),
                                    relation,
                                })
                            }
                            Some(Mark::Done) => {}
                            None => {
                                marks.insert(parent, Mark::Active);
                                stack.push((parent.as_str(), 0));
                            }
                        },
                        None => {
                            marks.insert(node, Mark::Done);
                            stack.pop();
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn nodes(&self) -> &BTreeSet<String> {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Relation used to widen inferred terms on `key`, if any.
    pub fn relation_for_key(&self, key: &str) -> Option<Relation> {
        self.relations.get(key).copied()
    }

    /// Transitive closure of `relation` upwards from `node`, excluding `node`.
    /// Unknown nodes have no ancestors.
    pub fn ancestors(&self, node: &str, relation: Relation) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut queue = VecDeque::from([node.to_owned()]);
        while let Some(current) = queue.pop_front() {
            if let Some(ps) = self.parents.get(&(relation, current)) {
                for p in ps {
                    if p != node && out.insert(p.clone()) {
                        queue.push_back(p.clone());
                    }
                }
            }
        }
        out
    }

    /// True when `ancestor` is reachable from `node` through `relation`.
    pub fn is_ancestor(&self, node: &str, ancestor: &str, relation: Relation) -> bool {
        let Some(direct) = self.parents.get(&(relation, node.to_owned())) else {
            return false;
        };
        if direct.iter().any(|p| p == ancestor) {
            return true;
        }
        self.ancestors(node, relation).contains(ancestor)
    }
}

/// Parses and validates an ontology document.
pub fn load_ontology(document: &str) -> Result<OntologyGraph, OntologyError> {
    if document.trim().is_empty() {
        return Ok(OntologyGraph::empty());
    }
    let doc: Document = serde_json::from_str(document).map_err(|e| OntologyError::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    OntologyGraph::new(doc.nodes, doc.edges, doc.relations)
}
