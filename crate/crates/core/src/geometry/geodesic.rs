//! Approximate surface geodesics: Dijkstra on the boundary graph whose edges
//! are quad edges plus quad diagonals, weighted by Euclidean length.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use super::Mesh;
use crate::error::{Error, Result};

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Adjacency of the augmented boundary graph.
pub fn surface_graph(mesh: &Mesh) -> HashMap<usize, Vec<(usize, f64)>> {
    let mut adj: HashMap<usize, Vec<(usize, f64)>> = HashMap::new();
    let nodes = mesh.nodes();
    for f in mesh.boundary() {
        for a in 0..4 {
            for b in (a + 1)..4 {
                let (i, j) = (f.nodes[a], f.nodes[b]);
                let w = (nodes[i] - nodes[j]).norm();
                adj.entry(i).or_default().push((j, w));
                adj.entry(j).or_default().push((i, w));
            }
        }
    }
    for list in adj.values_mut() {
        list.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
        list.dedup_by(|x, y| x.0 == y.0);
    }
    adj
}

/// Minimum approximate geodesic distance (cm) over all pairs from `set_a`
/// and `set_b`.
pub fn surface_geodesic_distance(mesh: &Mesh, set_a: &[usize], set_b: &[usize]) -> Result<f64> {
    if set_a.is_empty() || set_b.is_empty() {
        return Err(Error::invalid("geodesic distance needs two non-empty node sets"));
    }
    let on_boundary = mesh.boundary_node_mask();
    for &n in set_a.iter().chain(set_b) {
        if n >= mesh.node_count() || !on_boundary[n] {
            return Err(Error::invalid(format!("node {n} is not on the boundary surface")));
        }
    }
    let adj = surface_graph(mesh);
    let mut target = vec![false; mesh.node_count()];
    for &b in set_b {
        target[b] = true;
    }
    let mut dist = vec![f64::INFINITY; mesh.node_count()];
    let mut heap = BinaryHeap::new();
    for &a in set_a {
        dist[a] = 0.0;
        heap.push(Entry(0.0, a));
    }
    while let Some(Entry(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        if target[u] {
            return Ok(d);
        }
        for &(v, w) in adj.get(&u).map(Vec::as_slice).unwrap_or(&[]) {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Entry(nd, v));
            }
        }
    }
    Err(Error::Unreachable(
        "the two node sets lie on disconnected surface components".into(),
    ))
}
