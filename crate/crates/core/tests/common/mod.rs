//! Independent oracles built on plain coordinate arithmetic. Nothing here
//! calls the library's lattice, enumeration or sampling code.

#![allow(dead_code)]

use std::collections::BTreeMap;

pub type Point = Vec<i64>;

pub fn adjacent(a: &[i64], b: &[i64]) -> bool {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<i64>() == 1
}

/// Points of `[lo, hi]^d` in lexicographic order, last axis fastest.
pub fn cube(d: usize, lo: i64, hi: i64) -> Vec<Point> {
    rect(&vec![lo; d], &vec![hi; d])
}

/// Points of the box `lo..=hi`, lexicographic, last axis fastest.
pub fn rect(lo: &[i64], hi: &[i64]) -> Vec<Point> {
    let mut out = vec![Vec::new()];
    for (a, b) in lo.iter().zip(hi) {
        out = out
            .into_iter()
            .flat_map(|prefix: Point| {
                (*a..=*b).map(move |x| {
                    let mut q = prefix.clone();
                    q.push(x);
                    q
                })
            })
            .collect();
    }
    out
}

/// Normalized hard-core gas with activity `lambda` on `sites` next to the
/// occupied boundary points `bc_ones`, indexed by occupation mask (bit `i`
/// for `sites[i]`). Infeasible masks get 0.
pub fn hard_core_table(sites: &[Point], bc_ones: &[Point], lambda: f64) -> Vec<f64> {
    let n = sites.len();
    assert!(n <= 20);
    let blocked: Vec<bool> = sites
        .iter()
        .map(|s| bc_ones.iter().any(|b| adjacent(s, b)))
        .collect();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| adjacent(&sites[i], &sites[j]))
        .collect();
    let mut w = vec![0.0; 1 << n];
    for (mask, slot) in w.iter_mut().enumerate() {
        let ok = (0..n).all(|i| mask >> i & 1 == 0 || !blocked[i])
            && pairs
                .iter()
                .all(|&(i, j)| mask >> i & 1 == 0 || mask >> j & 1 == 0);
        if ok {
            *slot = lambda.powi(mask.count_ones() as i32);
        }
    }
    let z: f64 = w.iter().sum();
    w.iter().map(|x| x / z).collect()
}

/// Thinning of a dense row-major grid with empty exterior, site by site:
/// occupied and at least one occupied neighbor.
pub fn thin_formula(dims: &[usize], occ: &[bool]) -> Vec<bool> {
    let d = dims.len();
    let mut stride = vec![1usize; d];
    for a in (0..d.saturating_sub(1)).rev() {
        stride[a] = stride[a + 1] * dims[a + 1];
    }
    (0..occ.len())
        .map(|idx| {
            if !occ[idx] {
                return false;
            }
            (0..d).any(|a| {
                let c = idx / stride[a] % dims[a];
                (c > 0 && occ[idx - stride[a]]) || (c + 1 < dims[a] && occ[idx + stride[a]])
            })
        })
        .collect()
}

/// Law of the thinned field on `window` under i.i.d. Bernoulli(p), by
/// enumerating the first layer on the window and its neighbors. Indexed by
/// the window occupation mask.
pub fn mu_prime_brute(p: f64, window: &[Point]) -> Vec<f64> {
    let mut support: Vec<Point> = window.to_vec();
    for w in window {
        for a in 0..w.len() {
            for s in [-1, 1] {
                let mut q = w.clone();
                q[a] += s;
                if !support.contains(&q) {
                    support.push(q);
                }
            }
        }
    }
    let n = support.len();
    assert!(n <= 24);
    let nbrs: Vec<Vec<usize>> = (0..window.len())
        .map(|i| (0..n).filter(|&j| adjacent(&support[i], &support[j])).collect())
        .collect();
    let mut out = vec![0.0; 1 << window.len()];
    for sigma in 0u64..(1 << n) {
        let ones = sigma.count_ones() as i32;
        let weight = p.powi(ones) * (1.0 - p).powi(n as i32 - ones);
        let mut key = 0usize;
        for (i, nb) in nbrs.iter().enumerate() {
            if sigma >> i & 1 == 1 && nb.iter().any(|&j| sigma >> j & 1 == 1) {
                key |= 1 << i;
            }
        }
        out[key] += weight;
    }
    out
}

/// Largest change of the single-site occupation probability at `i` when
/// one neighboring value `j` flips, over all values on the other sites of
/// the `3^d` block around `i`. The kernel occupies `i` with probability
/// `p` when no neighbor inside `s_area` is occupied, and never otherwise.
pub fn single_site_tv_brute(p: f64, s_area: &[Point], i: &[i64], j: &[i64]) -> f64 {
    let block: Vec<Point> = rect(
        &i.iter().map(|x| x - 1).collect::<Vec<_>>(),
        &i.iter().map(|x| x + 1).collect::<Vec<_>>(),
    )
    .into_iter()
    .filter(|q| q.as_slice() != i)
    .collect();
    let Some(jpos) = block.iter().position(|q| q.as_slice() == j) else {
        return 0.0;
    };
    let kernel = |values: u64| {
        let blocked = block
            .iter()
            .enumerate()
            .any(|(k, q)| values >> k & 1 == 1 && adjacent(q, i) && s_area.contains(q));
        if blocked {
            0.0
        } else {
            p
        }
    };
    let mut best: f64 = 0.0;
    for values in 0u64..(1 << block.len()) {
        if values >> jpos & 1 == 1 {
            continue;
        }
        best = best.max((kernel(values) - kernel(values | 1 << jpos)).abs());
    }
    best
}

/// Histogram of feasible (hard-core) masks by pattern on a sub-list of
/// sites, normalized.
pub fn marginal(table: &[f64], positions: &[usize]) -> BTreeMap<u64, f64> {
    let mut out = BTreeMap::new();
    for (mask, &w) in table.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let key = positions
            .iter()
            .enumerate()
            .fold(0u64, |k, (b, &pos)| k | (((mask >> pos) as u64 & 1) << b));
        *out.entry(key).or_insert(0.0) += w;
    }
    out
}
