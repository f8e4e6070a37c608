//! Exact classic-algorithm oracles for the task outputs.

use std::collections::VecDeque;

use crate::error::{Error, Result};

fn check_distinct(op: &'static str, values: &[f32]) -> Result<()> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f32::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::input(op, "duplicate values"));
    }
    Ok(())
}

fn check_square(op: &'static str, n: usize, len: usize) -> Result<()> {
    if len != n * n {
        return Err(Error::input(op, format!("expected {} entries for n = {n}, got {len}", n * n)));
    }
    Ok(())
}

/// Node order by ascending value.
pub fn sorted_order(values: &[f32]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    order
}

/// Each node points at the node holding the next-smaller value; the minimum
/// points at itself.
pub fn sort_pointers(values: &[f32]) -> Result<Vec<usize>> {
    check_distinct("sort_pointers", values)?;
    let order = sorted_order(values);
    let mut pred = vec![0; values.len()];
    for (r, &node) in order.iter().enumerate() {
        pred[node] = if r == 0 { node } else { order[r - 1] };
    }
    Ok(pred)
}

/// Index of the minimum.
pub fn argmin_mask(values: &[f32]) -> Result<usize> {
    if values.is_empty() {
        return Err(Error::input("argmin_mask", "empty input"));
    }
    check_distinct("argmin_mask", values)?;
    Ok(sorted_order(values)[0])
}

/// Index of the largest value not above `target`, found by bisection;
/// node 0 when every value exceeds the target.
pub fn binary_search_node(sorted: &[f32], target: f32) -> Result<usize> {
    if sorted.is_empty() {
        return Err(Error::input("binary_search_node", "empty input"));
    }
    if sorted.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::input("binary_search_node", "values must be strictly ascending"));
    }
    // invariant: sorted[lo] <= target < sorted[hi], with virtual ends
    let (mut lo, mut hi) = (-1i64, sorted.len() as i64);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if sorted[mid as usize] <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo.max(0) as usize)
}

/// Breadth-first parents from `source`, expanding neighbours in ascending
/// index order. The source and unreached nodes point at themselves.
pub fn bfs_parents(n: usize, adj: &[bool], source: usize) -> Result<Vec<usize>> {
    check_square("bfs_parents", n, adj.len())?;
    if source >= n {
        return Err(Error::input("bfs_parents", format!("source {source} out of range")));
    }
    let mut parent: Vec<usize> = (0..n).collect();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([source]);
    seen[source] = true;
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if v != u && adj[u * n + v] && !seen[v] {
                seen[v] = true;
                parent[v] = u;
                queue.push_back(v);
            }
        }
    }
    Ok(parent)
}

/// Shortest-path tree parents by Bellman-Ford relaxation over the
/// undirected weighted graph.
pub fn bellman_ford_parents(n: usize, adj: &[bool], weights: &[f32], source: usize) -> Result<Vec<usize>> {
    check_square("bellman_ford_parents", n, adj.len())?;
    check_square("bellman_ford_parents", n, weights.len())?;
    if source >= n {
        return Err(Error::input("bellman_ford_parents", format!("source {source} out of range")));
    }
    let mut dist = vec![f64::INFINITY; n];
    let mut parent: Vec<usize> = (0..n).collect();
    dist[source] = 0.0;
    for _ in 1..n.max(2) {
        let mut changed = false;
        for u in 0..n {
            if !dist[u].is_finite() {
                continue;
            }
            for v in 0..n {
                if u == v || !adj[u * n + v] {
                    continue;
                }
                let d = dist[u] + weights[u * n + v] as f64;
                if d < dist[v] {
                    dist[v] = d;
                    parent[v] = u;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    if dist.iter().any(|d| !d.is_finite()) {
        return Err(Error::input("bellman_ford_parents", "graph is not connected"));
    }
    Ok(parent)
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect(), rank: vec![0; n] }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut x = x;
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Undirected edges `(i, j)` with `i < j`, as present in `adj`.
pub fn edge_list(n: usize, adj: &[bool]) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| adj[i * n + j])
        .collect()
}

/// Symmetric 0/1 mask of the minimum spanning tree, via Kruskal with
/// union-find.
pub fn kruskal_mask(n: usize, adj: &[bool], weights: &[f32]) -> Result<Vec<u8>> {
    check_square("kruskal_mask", n, adj.len())?;
    check_square("kruskal_mask", n, weights.len())?;
    let mut edges = edge_list(n, adj);
    let w: Vec<f32> = edges.iter().map(|&(i, j)| weights[i * n + j]).collect();
    check_distinct("kruskal_mask", &w)?;
    edges.sort_by(|a, b| weights[a.0 * n + a.1].total_cmp(&weights[b.0 * n + b.1]));
    let mut uf = UnionFind::new(n);
    let mut mask = vec![0u8; n * n];
    let mut taken = 0;
    for (i, j) in edges {
        if uf.union(i, j) {
            mask[i * n + j] = 1;
            mask[j * n + i] = 1;
            taken += 1;
        }
    }
    if taken + 1 != n {
        return Err(Error::input("kruskal_mask", "graph is not connected"));
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: usize, edges: &[(usize, usize, f32)]) -> (Vec<bool>, Vec<f32>) {
        let mut adj = vec![false; n * n];
        let mut w = vec![0.0; n * n];
        for &(i, j, x) in edges {
            adj[i * n + j] = true;
            adj[j * n + i] = true;
            w[i * n + j] = x;
            w[j * n + i] = x;
        }
        (adj, w)
    }

    #[test]
    fn sort_pointer_examples() {
        assert_eq!(sort_pointers(&[0.6, 0.1, 0.9]).unwrap(), vec![1, 1, 0]);
        assert_eq!(sort_pointers(&[0.3]).unwrap(), vec![0]);
        assert!(sort_pointers(&[0.2, 0.2]).is_err());
    }

    #[test]
    fn argmin_examples() {
        assert_eq!(argmin_mask(&[0.5, 0.2, 0.7]).unwrap(), 1);
        assert_eq!(argmin_mask(&[0.3]).unwrap(), 0);
        assert!(argmin_mask(&[0.1, 0.1]).is_err());
    }

    #[test]
    fn binary_search_examples() {
        assert_eq!(binary_search_node(&[0.1, 0.4, 0.8], 0.5).unwrap(), 1);
        assert_eq!(binary_search_node(&[0.1, 0.4, 0.8], 0.05).unwrap(), 0);
        assert_eq!(binary_search_node(&[0.1, 0.4, 0.8], 0.95).unwrap(), 2);
        assert_eq!(binary_search_node(&[0.2], 0.9).unwrap(), 0);
        assert!(binary_search_node(&[0.4, 0.1], 0.5).is_err());
    }

    #[test]
    fn bfs_examples() {
        let (path, _) = graph(3, &[(0, 1, 1.0), (1, 2, 1.0)]);
        assert_eq!(bfs_parents(3, &path, 0).unwrap(), vec![0, 0, 1]);
        let (tri, _) = graph(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]);
        assert_eq!(bfs_parents(3, &tri, 0).unwrap(), vec![0, 0, 0]);
        let (pair, _) = graph(2, &[(0, 1, 1.0)]);
        assert_eq!(bfs_parents(2, &pair, 1).unwrap(), vec![1, 1]);
    }

    #[test]
    fn bellman_ford_examples() {
        let (adj, w) = graph(3, &[(0, 1, 0.2), (1, 2, 0.2), (0, 2, 0.5)]);
        assert_eq!(bellman_ford_parents(3, &adj, &w, 0).unwrap(), vec![0, 0, 1]);
        let (adj, w) = graph(2, &[(0, 1, 0.7)]);
        assert_eq!(bellman_ford_parents(2, &adj, &w, 0).unwrap(), vec![0, 0]);
        let (adj, w) = graph(3, &[(0, 1, 0.7)]);
        assert!(bellman_ford_parents(3, &adj, &w, 0).is_err());
    }

    #[test]
    fn kruskal_examples() {
        let (adj, w) = graph(3, &[(0, 1, 0.1), (1, 2, 0.2), (0, 2, 0.3)]);
        let m = kruskal_mask(3, &adj, &w).unwrap();
        assert_eq!(m, vec![0, 1, 0, 1, 0, 1, 0, 1, 0]);
        let (adj, w) = graph(4, &[(0, 1, 0.5), (1, 2, 0.4), (1, 3, 0.9)]);
        let m = kruskal_mask(4, &adj, &w).unwrap();
        assert_eq!(m.iter().map(|&v| v as usize).sum::<usize>(), 6);
        let (adj, w) = graph(3, &[(0, 1, 0.1)]);
        assert!(kruskal_mask(3, &adj, &w).is_err());
    }
}
