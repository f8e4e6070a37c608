//! Brute-force references used to cross-check the oracles. Deliberately
//! naive: they only need to be obviously correct on small inputs.

use super::oracle::edge_list;

/// Library-sort permutation: node ids in ascending value order.
pub fn library_sort(values: &[f32]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    idx
}

/// Follows predecessor pointers from the unique node nobody points at back
/// to the self-pointing head. `None` unless the pointers form one chain.
pub fn order_from_pointers(pred: &[usize]) -> Option<Vec<usize>> {
    let n = pred.len();
    let mut has_succ = vec![false; n];
    for (i, &p) in pred.iter().enumerate() {
        if p != i {
            has_succ[p] = true;
        }
    }
    let tails: Vec<usize> = (0..n).filter(|&i| !has_succ[i]).collect();
    if tails.len() != 1 {
        return None;
    }
    let mut order = vec![tails[0]];
    let mut cur = tails[0];
    while pred[cur] != cur {
        cur = pred[cur];
        if order.len() > n {
            return None;
        }
        order.push(cur);
    }
    order.reverse();
    (order.len() == n).then_some(order)
}

pub fn linear_argmin(values: &[f32]) -> usize {
    let mut best = 0;
    for i in 1..values.len() {
        if values[i] < values[best] {
            best = i;
        }
    }
    best
}

/// Scans every value; falls back to node 0 when none is `<= target`.
pub fn linear_search(sorted: &[f32], target: f32) -> usize {
    let mut ans = 0;
    for (i, &v) in sorted.iter().enumerate() {
        if v <= target {
            ans = i;
        }
    }
    ans
}

/// Hop distances between all pairs by Floyd-Warshall on unit weights.
pub fn all_pairs_hops(n: usize, adj: &[bool]) -> Vec<usize> {
    const INF: usize = usize::MAX / 4;
    let mut d = vec![INF; n * n];
    for i in 0..n {
        d[i * n + i] = 0;
        for j in 0..n {
            if i != j && adj[i * n + j] {
                d[i * n + j] = 1;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i * n + k] + d[k * n + j];
                if via < d[i * n + j] {
                    d[i * n + j] = via;
                }
            }
        }
    }
    d
}

/// Smallest total weight over every simple path from `source` to each node.
pub fn simple_path_distances(n: usize, adj: &[bool], weights: &[f32], source: usize) -> Vec<f64> {
    fn walk(u: usize, acc: f64, n: usize, adj: &[bool], w: &[f32], seen: &mut [bool], best: &mut [f64]) {
        if acc < best[u] {
            best[u] = acc;
        }
        for v in 0..n {
            if adj[u * n + v] && !seen[v] {
                seen[v] = true;
                walk(v, acc + w[u * n + v] as f64, n, adj, w, seen, best);
                seen[v] = false;
            }
        }
    }
    let mut best = vec![f64::INFINITY; n];
    let mut seen = vec![false; n];
    seen[source] = true;
    walk(source, 0.0, n, adj, weights, &mut seen, &mut best);
    best
}

/// Weighted length of the parent chain from every node back to its root.
pub fn tree_distances(parents: &[usize], weights: &[f32]) -> Option<Vec<f64>> {
    let n = parents.len();
    (0..n)
        .map(|v| {
            let (mut cur, mut total, mut hops) = (v, 0.0f64, 0);
            while parents[cur] != cur {
                total += weights[cur * n + parents[cur]] as f64;
                cur = parents[cur];
                hops += 1;
                if hops > n {
                    return None;
                }
            }
            Some(total)
        })
        .collect()
}

/// The minimum spanning tree found by trying every (n-1)-subset of edges.
pub fn enumerate_mst(n: usize, adj: &[bool], weights: &[f32]) -> Option<Vec<u8>> {
    let edges = edge_list(n, adj);
    let k = n.saturating_sub(1);
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut pick: Vec<usize> = (0..k).collect();
    if edges.len() < k {
        return None;
    }
    loop {
        if spans(n, pick.iter().map(|&e| edges[e])) {
            let w: f64 = pick.iter().map(|&e| weights[edges[e].0 * n + edges[e].1] as f64).sum();
            if best.as_ref().is_none_or(|(b, _)| w < *b) {
                best = Some((w, pick.clone()));
            }
        }
        // next combination in lexicographic order
        let mut i = k;
        loop {
            if i == 0 {
                let (_, chosen) = best?;
                let mut mask = vec![0u8; n * n];
                for e in chosen {
                    let (a, b) = edges[e];
                    mask[a * n + b] = 1;
                    mask[b * n + a] = 1;
                }
                return Some(mask);
            }
            i -= 1;
            if pick[i] < edges.len() - k + i {
                pick[i] += 1;
                for j in i + 1..k {
                    pick[j] = pick[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Whether the given `n - 1` edges connect all `n` nodes.
fn spans(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> bool {
    let mut label: Vec<usize> = (0..n).collect();
    for (a, b) in edges {
        let (la, lb) = (label[a], label[b]);
        if la == lb {
            return false;
        }
        for l in label.iter_mut() {
            if *l == lb {
                *l = la;
            }
        }
    }
    label.iter().all(|&l| l == label[0])
}

/// Insertion-sort hints from their closed form: after `t` insertions the
/// array is the sorted first `t` elements followed by the rest unchanged.
pub fn closed_form_hints(values: &[f32]) -> Vec<(Vec<usize>, usize, usize)> {
    let n = values.len();
    (1..=n)
        .map(|t| {
            let mut prefix: Vec<usize> = (0..t).collect();
            prefix.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
            let pos = prefix.iter().position(|&x| x == t - 1).unwrap();
            let i = if pos == 0 { t - 1 } else { prefix[pos - 1] };
            let order: Vec<usize> = prefix.into_iter().chain(t..n).collect();
            (super::trajectory::chain(&order), i, t - 1)
        })
        .collect()
}
