//! Node-to-node navigation over topological maps, ranked by activated node embeddings.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::affinity::GeneralizedTable;
use crate::embeddings::EmbeddingTable;
use crate::error::{LoatError, Result};
use crate::maps::{activate_graph, TopoGraph, TopoNode};

/// `dot(activation(N), embed(target))` for every node.
pub fn node_priorities(graph: &TopoGraph, scores: &BTreeMap<String, f64>, target_embedding: &[f64]) -> Result<Vec<f64>> {
    let act = activate_graph(graph, scores)?;
    act.iter()
        .map(|a| {
            if a.len() != target_embedding.len() {
                return Err(LoatError::DimensionMismatch {
                    expected: a.len(),
                    found: target_embedding.len(),
                    context: "node embedding vs target embedding".into(),
                });
            }
            Ok(a.iter().zip(target_embedding).map(|(x, y)| x * y).sum())
        })
        .collect()
}

fn hops_from(graph: &TopoGraph, src: usize) -> Vec<Option<usize>> {
    let mut d = vec![None; graph.len()];
    d[src] = Some(0);
    let mut q = VecDeque::from([src]);
    while let Some(u) = q.pop_front() {
        for &(v, _) in graph.neighbors(u) {
            if d[v].is_none() {
                d[v] = Some(d[u].expect("visited") + 1);
                q.push_back(v);
            }
        }
    }
    d
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphEpisode {
    /// Nodes in visiting order, starting at the start node.
    pub visits: Vec<usize>,
    pub hops: usize,
    pub success: bool,
}

/// Repeatedly travels to the highest-priority unvisited node adjacent to the
/// visited set (ties: fewer hops, then lower index) until a goal node is reached.
pub fn navigate_graph(
    graph: &TopoGraph,
    start: usize,
    goals: &BTreeSet<usize>,
    priorities: &[f64],
    hop_budget: usize,
) -> Result<GraphEpisode> {
    if start >= graph.len() || priorities.len() != graph.len() {
        return Err(LoatError::InvalidArgument("start node or priorities do not match the graph".into()));
    }
    let mut visited = vec![false; graph.len()];
    visited[start] = true;
    let mut ep = GraphEpisode {
        visits: vec![start],
        hops: 0,
        success: goals.contains(&start),
    };
    let mut cur = start;
    while !ep.success {
        let hops = hops_from(graph, cur);
        let frontier = (0..graph.len()).filter(|&v| !visited[v] && (0..graph.len()).any(|u| visited[u] && graph.neighbors(u).iter().any(|e| e.0 == v)));
        let mut best: Option<(usize, f64, usize)> = None;
        for v in frontier {
            let h = hops[v].expect("frontier node is reachable");
            let better = match best {
                None => true,
                Some((_, p, bh)) => priorities[v] > p || (priorities[v] == p && h < bh),
            };
            if better {
                best = Some((v, priorities[v], h));
            }
        }
        let Some((next, _, h)) = best else { break };
        if ep.hops + h > hop_budget {
            break;
        }
        ep.hops += h;
        visited[next] = true;
        ep.visits.push(next);
        cur = next;
        ep.success = goals.contains(&next);
    }
    Ok(ep)
}

/// Synthetic embeddings where objects of one room type cluster around a shared direction.
pub fn clustered_embeddings(groups: &[(&str, &[&str])], dim: usize, noise: f64, seed: u64) -> Result<EmbeddingTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = EmbeddingTable::new(dim, format!("clustered seed={seed}"))?;
    for (gi, (_, members)) in groups.iter().enumerate() {
        let mut base = vec![0.0; dim];
        base[gi % dim] = 1.0;
        for m in members.iter() {
            if table.contains(m) {
                continue;
            }
            let mut v: Vec<f64> = base.iter().map(|b| b + noise * rng.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            table.insert(m, v)?;
        }
    }
    Ok(table)
}

/// Normalized mean embedding of the objects relevant to `target`.
fn target_embedding(table: &EmbeddingTable, gtable: &GeneralizedTable, target: &str) -> Result<Vec<f64>> {
    let related = gtable
        .related(target)
        .filter(|r| !r.is_empty())
        .ok_or_else(|| LoatError::UnknownCategory(target.to_string()))?;
    let mut v = vec![0.0; table.dim()];
    for o in related {
        for (a, b) in v.iter_mut().zip(table.embed(o).vector) {
            *a += b;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    Ok(v.into_iter().map(|x| x / norm).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphBenchmarkRow {
    pub label: String,
    pub success_rate: f64,
    pub mean_hops: f64,
}

/// 16-node 4x4 lattice graphs, one room per node, with room-clustered embeddings.
/// Compares relevance-activated priorities with priorities from the unactivated
/// node embeddings; the target embedding is the mean of its relevant objects.
pub fn graph_benchmark(
    rooms: &[(&str, &[&str])],
    targets: &[&str],
    gtable: &GeneralizedTable,
    graphs: usize,
    seed: u64,
) -> Result<Vec<GraphBenchmarkRow>> {
    let dim = rooms.len() + 4;
    let table = clustered_embeddings(rooms, dim, 0.6, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let side = 4;
    let mut totals = [(0usize, 0usize); 2];
    let mut n = 0usize;
    for _ in 0..graphs {
        let mut nodes = Vec::new();
        let mut objects_of = Vec::new();
        for _ in 0..side * side {
            let (_, objs) = rooms.choose(&mut rng).expect("rooms nonempty");
            let k = rng.gen_range(1..=objs.len());
            let chosen: Vec<String> = objs.choose_multiple(&mut rng, k).map(|s| s.to_string()).collect();
            let mut emb = vec![0.0; dim];
            for o in &chosen {
                for (e, v) in emb.iter_mut().zip(table.embed(o).vector) {
                    *e += v / chosen.len() as f64;
                }
            }
            objects_of.push(chosen.clone());
            nodes.push(TopoNode {
                objects: chosen.into_iter().collect(),
                embedding: emb,
            });
        }
        let mut edges = vec![Vec::new(); side * side];
        for r in 0..side {
            for c in 0..side {
                let i = r * side + c;
                if c + 1 < side {
                    edges[i].push((i + 1, 1.0));
                    edges[i + 1].push((i, 1.0));
                }
                if r + 1 < side {
                    edges[i].push((i + side, 1.0));
                    edges[i + side].push((i, 1.0));
                }
            }
        }
        let graph = TopoGraph::new(nodes, edges)?;
        let target = *targets.choose(&mut rng).expect("targets nonempty");
        let goals: BTreeSet<usize> = (0..graph.len())
            .filter(|&i| objects_of[i].iter().any(|o| gtable.is_relevant(o, target)))
            .collect();
        if goals.is_empty() {
            continue;
        }
        let start = rng.gen_range(0..graph.len());
        let vocab: BTreeSet<&String> = objects_of.iter().flatten().collect();
        let relevant = vocab.iter().filter(|o| gtable.is_relevant(o, target)).count().max(1) as f64;
        let loat: BTreeMap<String, f64> = vocab
            .iter()
            .map(|o| ((*o).clone(), if gtable.is_relevant(o, target) { 1.0 / relevant } else { 0.0 }))
            .collect();
        let flat: BTreeMap<String, f64> = vocab.iter().map(|o| ((*o).clone(), 1.0)).collect();
        let e_t = target_embedding(&table, gtable, target)?;
        for (k, scores) in [&loat, &flat].into_iter().enumerate() {
            let pr = node_priorities(&graph, scores, &e_t)?;
            let ep = navigate_graph(&graph, start, &goals, &pr, usize::MAX)?;
            totals[k].0 += ep.success as usize;
            totals[k].1 += ep.hops;
        }
        n += 1;
    }
    if n == 0 {
        return Err(LoatError::InvalidArgument("graph benchmark produced no episodes".into()));
    }
    Ok(["activated", "embedding_only"]
        .iter()
        .zip(totals)
        .map(|(label, (s, h))| GraphBenchmarkRow {
            label: label.to_string(),
            success_rate: s as f64 / n as f64,
            mean_hops: h as f64 / n as f64,
        })
        .collect())
}
