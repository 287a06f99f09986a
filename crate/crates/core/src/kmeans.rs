//! k-means kernel shared by codebook training, hierarchical k-means
//! identifiers and the IVF-PQ baseline.
//!
//! Points are `f64` rows; centroids are kept as `f32` values at every step so
//! that assignments always refer to exactly the centroids that get stored.
//! Nearest-centroid ties resolve to the lowest index. Empty clusters are
//! re-seeded from the point farthest from its current centroid.

use log::debug;
use rand::Rng;

/// Squared Euclidean distance between an `f64` point and an `f32` centroid.
#[inline]
pub fn sq_dist(x: &[f64], c: &[f32]) -> f64 {
    x.iter()
        .zip(c)
        .map(|(&a, &b)| {
            let t = a - b as f64;
            t * t
        })
        .sum()
}

/// Index and squared distance of the nearest centroid; ties go to the lowest index.
pub fn nearest(centroids: &[f32], d: usize, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(d).enumerate() {
        let dist = sq_dist(x, c);
        if dist < best.1 {
            best = (j, dist);
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct KMeans {
    /// `k x d` centroids, row-major.
    pub centroids: Vec<f32>,
    /// Nearest centroid of every point under the final centroids.
    pub assignments: Vec<u32>,
    /// Sum of squared distances to the assigned centroids.
    pub inertia: f64,
    /// Empty clusters re-seeded during the Lloyd iterations.
    pub reseeded: usize,
    /// True when there were fewer distinct points than clusters.
    pub degenerate: bool,
}

/// k-means++ seeding. If the points run out of distinct values before `k`
/// centroids are chosen, the rest are copies of uniformly drawn points.
pub fn kmeans_plus_plus<R: Rng>(data: &[f64], d: usize, k: usize, rng: &mut R) -> (Vec<f32>, bool) {
    let n = data.len() / d;
    assert!(n > 0 && k > 0, "k-means needs points and clusters");
    let mut centroids = Vec::with_capacity(k * d);
    let first = rng.random_range(0..n);
    centroids.extend(data[first * d..(first + 1) * d].iter().map(|&v| v as f32));
    let mut closest: Vec<f64> = data
        .chunks_exact(d)
        .map(|x| sq_dist(x, &centroids[..d]))
        .collect();
    let mut degenerate = false;
    for _ in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in closest.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            // rounding can walk past the last positive weight
            if closest[pick] == 0.0 {
                pick = closest.iter().rposition(|&w| w > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            degenerate = true;
            rng.random_range(0..n)
        };
        let start = centroids.len();
        centroids.extend(data[pick * d..(pick + 1) * d].iter().map(|&v| v as f32));
        let c = &centroids[start..];
        for (w, x) in closest.iter_mut().zip(data.chunks_exact(d)) {
            *w = w.min(sq_dist(x, c));
        }
    }
    (centroids, degenerate)
}

/// Runs `iters` Lloyd iterations from the given centroids.
pub fn lloyd(data: &[f64], d: usize, centroids: &mut [f32], iters: usize) -> KMeans {
    let n = data.len() / d;
    let k = centroids.len() / d;
    let mut assignments = vec![0u32; n];
    let mut dists = vec![0f64; n];
    let mut reseeded = 0;
    for _ in 0..iters {
        assign(data, d, centroids, &mut assignments, &mut dists);
        let mut sums = vec![0f64; k * d];
        let mut counts = vec![0usize; k];
        for (i, x) in data.chunks_exact(d).enumerate() {
            let j = assignments[i] as usize;
            counts[j] += 1;
            for (s, &v) in sums[j * d..(j + 1) * d].iter_mut().zip(x) {
                *s += v;
            }
        }
        let mut taken = vec![false; n];
        for j in 0..k {
            if counts[j] > 0 {
                let inv = counts[j] as f64;
                for (c, &s) in centroids[j * d..(j + 1) * d].iter_mut().zip(&sums[j * d..]) {
                    *c = (s / inv) as f32;
                }
            } else {
                // farthest point not already used as a seed this round
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .fold(None, |best: Option<usize>, i| match best {
                        Some(b) if dists[b] >= dists[i] => Some(b),
                        _ => Some(i),
                    });
                if let Some(far) = far {
                    taken[far] = true;
                    dists[far] = 0.0;
                    for (c, &v) in centroids[j * d..(j + 1) * d]
                        .iter_mut()
                        .zip(&data[far * d..(far + 1) * d])
                    {
                        *c = v as f32;
                    }
                    reseeded += 1;
                }
            }
        }
    }
    assign(data, d, centroids, &mut assignments, &mut dists);
    if reseeded > 0 {
        debug!("k-means re-seeded {reseeded} empty clusters");
    }
    KMeans {
        centroids: centroids.to_vec(),
        assignments,
        inertia: dists.iter().sum(),
        reseeded,
        degenerate: false,
    }
}

fn assign(data: &[f64], d: usize, centroids: &[f32], assignments: &mut [u32], dists: &mut [f64]) {
    for (i, x) in data.chunks_exact(d).enumerate() {
        let (j, dist) = nearest(centroids, d, x);
        assignments[i] = j as u32;
        dists[i] = dist;
    }
}

/// k-means++ seeding followed by `iters` Lloyd iterations.
pub fn kmeans<R: Rng>(data: &[f64], d: usize, k: usize, iters: usize, rng: &mut R) -> KMeans {
    let (mut centroids, degenerate) = kmeans_plus_plus(data, d, k, rng);
    let mut out = lloyd(data, d, &mut centroids, iters);
    out.degenerate = degenerate;
    out
}
