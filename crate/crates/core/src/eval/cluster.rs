use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{stream, Rng};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_input(data: &[Vec<f64>], k: usize) -> Result<usize> {
    if k == 0 || data.len() < k {
        return Err(Error::Config(format!("cannot form {k} clusters from {} points", data.len())));
    }
    let dim = data[0].len();
    if data.iter().any(|r| r.len() != dim) {
        return Err(Error::Dimension("rows of differing length".into()));
    }
    Ok(dim)
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

fn kmeans_pp(data: &[Vec<f64>], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![data[rng.random_range(0..data.len())].clone()];
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total <= 0.0 {
            rng.random_range(0..data.len())
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = data.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        };
        centroids.push(data[idx].clone());
        for (x, d) in data.iter().zip(d2.iter_mut()) {
            *d = d.min(sq_dist(x, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn lloyd(data: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iter: usize) -> KMeans {
    let k = centroids.len();
    let dim = data[0].len();
    let mut assignments = vec![usize::MAX; data.len()];
    for _ in 0..max_iter {
        let mut changed = false;
        for (x, a) in data.iter().zip(assignments.iter_mut()) {
            let best = (0..k)
                .min_by(|&i, &j| sq_dist(x, &centroids[i]).total_cmp(&sq_dist(x, &centroids[j])))
                .unwrap();
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (x, &a) in data.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(x) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let inertia = data
        .iter()
        .zip(&assignments)
        .map(|(x, &a)| sq_dist(x, &centroids[a]))
        .sum();
    KMeans {
        assignments,
        centroids,
        inertia,
    }
}

/// Lloyd's k-means with k-means++ seeding; the best of `restarts` runs by
/// inertia is returned.
pub fn kmeans(data: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<KMeans> {
    check_input(data, k)?;
    let mut best: Option<KMeans> = None;
    for r in 0..restarts.max(1) {
        let mut rng = stream(seed, 0x6b6d + r as u64);
        let run = lloyd(data, kmeans_pp(data, k, &mut rng), 300);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Ward-linkage agglomerative clustering cut at `k` clusters. Uses the
/// nearest-neighbour chain with Lance-Williams updates over squared
/// Euclidean distances, so memory is quadratic in the number of points.
pub fn agglomerative_ward(data: &[Vec<f64>], k: usize) -> Result<Vec<usize>> {
    check_input(data, k)?;
    let n = data.len();
    let idx = |i: usize, j: usize| if i < j { i * n + j } else { j * n + i };
    let mut d = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            d[i * n + j] = sq_dist(&data[i], &data[j]);
        }
    }
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut merges: Vec<(f64, usize, usize)> = Vec::with_capacity(n - 1);
    let mut chain: Vec<usize> = Vec::new();
    let mut remaining = n;
    while remaining > 1 {
        if chain.is_empty() {
            chain.push((0..n).find(|&i| active[i]).unwrap());
        }
        loop {
            let a = *chain.last().unwrap();
            let prev = if chain.len() >= 2 { Some(chain[chain.len() - 2]) } else { None };
            let mut best = prev;
            let mut best_d = prev.map_or(f64::INFINITY, |p| d[idx(a, p)]);
            for b in 0..n {
                if b != a && active[b] && d[idx(a, b)] < best_d {
                    best_d = d[idx(a, b)];
                    best = Some(b);
                }
            }
            let b = best.unwrap();
            if Some(b) == prev {
                chain.pop();
                chain.pop();
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                merges.push((best_d, lo, hi));
                let (ni, nj) = (size[lo] as f64, size[hi] as f64);
                for c in 0..n {
                    if active[c] && c != lo && c != hi {
                        let nk = size[c] as f64;
                        let v = ((ni + nk) * d[idx(c, lo)] + (nj + nk) * d[idx(c, hi)] - nk * best_d) / (ni + nj + nk);
                        d[idx(c, lo)] = v;
                    }
                }
                size[lo] += size[hi];
                active[hi] = false;
                remaining -= 1;
                break;
            }
            chain.push(b);
        }
    }
    // Ward linkage is reducible, so merges sorted by height form a valid
    // dendrogram; replay the lowest n-k of them.
    merges.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut x = x;
        while p[x] != r {
            let next = p[x];
            p[x] = r;
            x = next;
        }
        r
    }
    for &(_, a, b) in merges.iter().take(n - k) {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut label_of_root = std::collections::HashMap::new();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let r = find(&mut parent, i);
        let next = label_of_root.len();
        out.push(*label_of_root.entry(r).or_insert(next));
    }
    Ok(out)
}
