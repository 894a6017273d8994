//! Ontology inference against a brute-force reachability oracle.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use rand::Rng;
use sre_core::registry::{EventLog, Thing, ThingRegistry};
use sre_core::semantic::{eval_query, parse_query, Edge, OntologyGraph, QueryResult, Relation};
use sre_core::VirtualClock;

pub struct RandomDag {
    pub nodes: Vec<String>,
    pub edges: Vec<Edge>,
}

/// Random DAG: edges only point from a lower to a higher index, so every
/// relation's edge set is acyclic by construction.
pub fn random_dag(rng: &mut impl Rng, max_nodes: usize) -> RandomDag {
    let n = rng.gen_range(1..=max_nodes);
    let nodes: Vec<String> = (0..n).map(|i| format!("N{i}")).collect();
    let density = rng.gen_range(0.0..0.15);
    let mut edges = Vec::new();
    for child in 0..n {
        for parent in child + 1..n {
            if rng.gen_bool(density) {
                let relation = if rng.gen_bool(0.7) { Relation::Within } else { Relation::SubTypeOf };
                edges.push(Edge {
                    child: nodes[child].clone(),
                    relation,
                    parent: nodes[parent].clone(),
                });
            }
        }
    }
    RandomDag { nodes, edges }
}

/// Plain BFS over the edge list.
pub fn bfs_ancestors(edges: &[Edge], node: &str, relation: Relation) -> BTreeSet<String> {
    let mut up: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for e in edges.iter().filter(|e| e.relation == relation) {
        up.entry(e.child.as_str()).or_default().push(e.parent.as_str());
    }
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([node]);
    while let Some(cur) = queue.pop_front() {
        for &p in up.get(cur).map(|v| v.as_slice()).unwrap_or(&[]) {
            if seen.insert(p.to_string()) {
                queue.push_back(p);
            }
        }
    }
    seen
}

/// One random DAG: every node's ancestors under both relations, then
/// `@loc` queries over random things. Returns the number of comparisons.
pub fn check_dag(rng: &mut impl Rng, max_nodes: usize) -> Result<usize, String> {
    let dag = random_dag(rng, max_nodes);
    let graph = OntologyGraph::new(dag.nodes.clone(), dag.edges.clone(), None).map_err(|e| e.to_string())?;
    let mut checks = 0;
    for node in &dag.nodes {
        for relation in [Relation::Within, Relation::SubTypeOf] {
            let expected = bfs_ancestors(&dag.edges, node, relation);
            let actual = graph.ancestors(node, relation);
            if actual != expected {
                return Err(format!("ancestors({node}, {relation}) = {actual:?}, oracle {expected:?}"));
            }
            checks += 1;
        }
    }
    let registry = ThingRegistry::new(Arc::new(VirtualClock::new(0)), Arc::new(EventLog::new()));
    let mut locations = BTreeMap::new();
    for i in 0..rng.gen_range(1..=30) {
        let loc = dag.nodes[rng.gen_range(0..dag.nodes.len())].clone();
        let usage = if rng.gen_bool(0.5) { "Lamp" } else { "Sensor" };
        let id = format!("T{i}");
        registry
            .register_thing(Thing::new(id.clone()).tag("loc", loc.clone()).tag("usage", usage))
            .map_err(|e| e.to_string())?;
        locations.insert(id, (loc, usage));
    }
    for _ in 0..5 {
        let target = &dag.nodes[rng.gen_range(0..dag.nodes.len())];
        let with_usage = rng.gen_bool(0.5);
        let text = if with_usage {
            format!("Search Device usage:Lamp and @loc:{target}")
        } else {
            format!("Search Device @loc:{target}")
        };
        let q = parse_query(&text).map_err(|e| e.to_string())?;
        let actual = match eval_query(&q, &registry, &graph).map_err(|e| e.to_string())? {
            QueryResult::Things(ids) => ids.into_iter().collect::<BTreeSet<_>>(),
            other => return Err(format!("unexpected result {other:?}")),
        };
        let expected: BTreeSet<String> = locations
            .iter()
            .filter(|(_, (loc, usage))| {
                (!with_usage || *usage == "Lamp")
                    && (loc == target || bfs_ancestors(&dag.edges, loc, Relation::Within).contains(target))
            })
            .map(|(id, _)| id.clone())
            .collect();
        if actual != expected {
            return Err(format!("'{text}' matched {actual:?}, oracle {expected:?}"));
        }
        checks += 1;
    }
    Ok(checks)
}

/// rooms within floors within buildings within a site
pub fn three_level() -> Result<(), String> {
    let mut nodes = vec!["Site".to_string()];
    let mut edges = Vec::new();
    let mut registry_things = Vec::new();
    for b in 0..3 {
        let building = format!("B{b}");
        nodes.push(building.clone());
        edges.push(Edge { child: building.clone(), relation: Relation::Within, parent: "Site".into() });
        for f in 0..3 {
            let floor = format!("B{b}F{f}");
            nodes.push(floor.clone());
            edges.push(Edge { child: floor.clone(), relation: Relation::Within, parent: building.clone() });
            for r in 0..3 {
                let room = format!("B{b}F{f}R{r}");
                nodes.push(room.clone());
                edges.push(Edge { child: room.clone(), relation: Relation::Within, parent: floor.clone() });
                registry_things.push((format!("S-{room}"), room));
            }
        }
    }
    let graph = OntologyGraph::new(nodes, edges, None).map_err(|e| e.to_string())?;
    let registry = ThingRegistry::new(Arc::new(VirtualClock::new(0)), Arc::new(EventLog::new()));
    for (id, room) in &registry_things {
        registry.register_thing(Thing::new(id.clone()).tag("loc", room.clone())).map_err(|e| e.to_string())?;
    }
    let count = |text: &str| -> Result<usize, String> {
        let q = parse_query(text).map_err(|e| e.to_string())?;
        match eval_query(&q, &registry, &graph).map_err(|e| e.to_string())? {
            QueryResult::Count(n) => Ok(n),
            other => Err(format!("unexpected {other:?}")),
        }
    };
    for (text, expected) in [
        ("Count Device @loc:Site", 27),
        ("Count Device @loc:B1", 9),
        ("Count Device @loc:B2F0", 3),
        ("Count Device @loc:B0F0R0", 1),
        ("Count Device loc:B1", 0),
    ] {
        let n = count(text)?;
        if n != expected {
            return Err(format!("'{text}' counted {n}, expected {expected}"));
        }
    }
    let expected: BTreeSet<String> = ["B0F1", "B0", "Site"].iter().map(|s| s.to_string()).collect();
    let actual = graph.ancestors("B0F1R2", Relation::Within);
    if actual != expected {
        return Err(format!("room ancestors {actual:?}, expected {expected:?}"));
    }
    Ok(())
}
