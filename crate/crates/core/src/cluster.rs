//! k-means with deterministic farthest-point seeding, silhouette-based
//! choice of k, and normalized mutual information.

use ndarray::Array2;
use rand::Rng as _;

use crate::features::FeatureMatrix;
use crate::rng;

/// Points k-means can cluster without densifying them.
pub trait Points {
    fn len(&self) -> usize;
    fn dim(&self) -> usize;
    fn sq_norm(&self, i: usize) -> f64;
    fn dot_dense(&self, i: usize, c: &[f64]) -> f64;
    fn add_to(&self, i: usize, acc: &mut [f64]);
    fn sq_dist(&self, i: usize, j: usize) -> f64;
}

impl Points for FeatureMatrix {
    fn len(&self) -> usize {
        self.num_rows()
    }
    fn dim(&self) -> usize {
        FeatureMatrix::dim(self)
    }
    fn sq_norm(&self, i: usize) -> f64 {
        self.row(i).values.iter().map(|v| v * v).sum()
    }
    fn dot_dense(&self, i: usize, c: &[f64]) -> f64 {
        self.row(i).dot_dense(c)
    }
    fn add_to(&self, i: usize, acc: &mut [f64]) {
        let r = self.row(i);
        for (&c, &v) in r.indices.iter().zip(&r.values) {
            acc[c as usize] += v;
        }
    }
    fn sq_dist(&self, i: usize, j: usize) -> f64 {
        (self.sq_norm(i) + self.sq_norm(j) - 2.0 * self.row(i).dot(self.row(j))).max(0.0)
    }
}

impl Points for Array2<f64> {
    fn len(&self) -> usize {
        self.nrows()
    }
    fn dim(&self) -> usize {
        self.ncols()
    }
    fn sq_norm(&self, i: usize) -> f64 {
        self.row(i).dot(&self.row(i))
    }
    fn dot_dense(&self, i: usize, c: &[f64]) -> f64 {
        self.row(i).iter().zip(c).map(|(a, b)| a * b).sum()
    }
    fn add_to(&self, i: usize, acc: &mut [f64]) {
        for (a, v) in acc.iter_mut().zip(self.row(i)) {
            *a += v;
        }
    }
    fn sq_dist(&self, i: usize, j: usize) -> f64 {
        self.row(i)
            .iter()
            .zip(self.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

#[derive(Clone, Debug)]
pub struct KMeans {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

fn dist_to(points: &impl Points, i: usize, c: &[f64], c_norm: f64) -> f64 {
    (points.sq_norm(i) - 2.0 * points.dot_dense(i, c) + c_norm).max(0.0)
}

fn sq(c: &[f64]) -> f64 {
    c.iter().map(|v| v * v).sum()
}

/// Lloyd's algorithm. The first centroid is a seeded random point, each
/// further one the point farthest from those already chosen.
pub fn kmeans(points: &impl Points, k: usize, seed: u64, max_iter: usize) -> KMeans {
    let n = points.len();
    assert!(k >= 1 && n >= 1, "kmeans needs k >= 1 and at least one point");
    let k = k.min(n);
    let dim = points.dim();
    let point = |i: usize| {
        let mut v = vec![0.0; dim];
        points.add_to(i, &mut v);
        v
    };

    let mut r = rng::stream(seed, "kmeans.init");
    let mut centroids = vec![point(r.random_range(0..n))];
    let mut min_d: Vec<f64> = (0..n)
        .map(|i| dist_to(points, i, &centroids[0], sq(&centroids[0])))
        .collect();
    while centroids.len() < k {
        let far = argmax(&min_d);
        let c = point(far);
        let cn = sq(&c);
        for (i, d) in min_d.iter_mut().enumerate() {
            *d = d.min(dist_to(points, i, &c, cn));
        }
        centroids.push(c);
    }

    let mut assignment = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    for _ in 0..max_iter.max(1) {
        let norms: Vec<f64> = centroids.iter().map(|c| sq(c)).collect();
        let mut changed = false;
        for i in 0..n {
            let (best, d) = centroids
                .iter()
                .zip(&norms)
                .map(|(c, &cn)| dist_to(points, i, c, cn))
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (j, d)| if d < acc.1 { (j, d) } else { acc });
            dists[i] = d;
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        // empty clusters take the point farthest from its centroid
        let mut counts = vec![0usize; k];
        for &a in &assignment {
            counts[a] += 1;
        }
        for j in 0..k {
            if counts[j] == 0 {
                let far = argmax(&dists);
                counts[assignment[far]] -= 1;
                assignment[far] = j;
                counts[j] = 1;
                dists[far] = 0.0;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        for (i, &a) in assignment.iter().enumerate() {
            points.add_to(i, &mut sums[a]);
        }
        for (j, s) in sums.iter_mut().enumerate() {
            let cnt = counts[j] as f64;
            s.iter_mut().for_each(|v| *v /= cnt);
        }
        centroids = sums;
        if !changed {
            break;
        }
    }
    let norms: Vec<f64> = centroids.iter().map(|c| sq(c)).collect();
    let inertia = (0..n)
        .map(|i| dist_to(points, i, &centroids[assignment[i]], norms[assignment[i]]))
        .sum();
    KMeans {
        assignment,
        centroids,
        inertia,
    }
}

/// Best of `restarts` runs by inertia; restart `r` uses a seed derived from
/// `(seed, r)`.
pub fn kmeans_restarts(points: &impl Points, k: usize, seed: u64, restarts: usize) -> KMeans {
    (0..restarts.max(1))
        .map(|r| kmeans(points, k, rng::derive_seed(seed, &format!("restart{r}")), 100))
        .min_by(|a, b| a.inertia.total_cmp(&b.inertia))
        .expect("at least one restart")
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc })
        .0
}

/// Mean silhouette coefficient (Euclidean). Singleton clusters score 0.
pub fn silhouette(points: &impl Points, assignment: &[usize]) -> f64 {
    let n = points.len();
    let k = assignment.iter().copied().max().map_or(0, |m| m + 1);
    if n < 2 || k < 2 {
        return 0.0;
    }
    let mut sizes = vec![0usize; k];
    for &a in assignment {
        sizes[a] += 1;
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if i != j {
                sums[assignment[j]] += points.sq_dist(i, j).sqrt();
            }
        }
        let own = assignment[i];
        if sizes[own] <= 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() && a.max(b) > 0.0 {
            total += (b - a) / a.max(b);
        }
    }
    total / n as f64
}

/// k in `[2, max_k]` maximizing the mean silhouette.
pub fn choose_k(points: &impl Points, max_k: usize, seed: u64) -> usize {
    let upper = max_k.min(points.len()).max(2);
    (2..=upper)
        .map(|k| (k, silhouette(points, &kmeans(points, k, seed, 100).assignment)))
        .fold((2, f64::NEG_INFINITY), |acc, (k, s)| if s > acc.1 { (k, s) } else { acc })
        .0
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information with arithmetic-mean normalization.
///
/// Two single-cluster partitions score 1; a single-cluster partition against
/// a non-trivial one scores 0.
pub fn nmi(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "partitions must cover the same items");
    let n = a.len();
    if n == 0 {
        return 1.0;
    }
    let ka = a.iter().copied().max().unwrap() + 1;
    let kb = b.iter().copied().max().unwrap() + 1;
    let mut table = vec![vec![0usize; kb]; ka];
    let mut ra = vec![0usize; ka];
    let mut rb = vec![0usize; kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
        ra[x] += 1;
        rb[y] += 1;
    }
    // same partition up to relabeling; the sums below can miss 1 by an ulp
    let one_per_row = table.iter().all(|row| row.iter().filter(|&&c| c > 0).count() <= 1);
    if one_per_row && ra.iter().filter(|&&c| c > 0).count() == rb.iter().filter(|&&c| c > 0).count() {
        return 1.0;
    }
    let nf = n as f64;
    let ha = entropy(ra.iter().copied(), nf);
    let hb = entropy(rb.iter().copied(), nf);
    if ha == 0.0 && hb == 0.0 {
        return 1.0;
    }
    let mut mi = 0.0;
    for (x, row) in table.iter().enumerate() {
        for (y, &c) in row.iter().enumerate() {
            if c > 0 {
                let cf = c as f64;
                mi += cf / nf * (cf * nf / (ra[x] as f64 * rb[y] as f64)).ln();
            }
        }
    }
    let denom = 0.5 * (ha + hb);
    if denom <= 0.0 {
        return 0.0;
    }
    (mi / denom).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn nmi_contingency_examples() {
        assert_eq!(nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]), 0.0);
        assert_eq!(nmi(&[0, 0, 1, 1, 2], &[0, 0, 1, 1, 2]), 1.0);
        assert_eq!(nmi(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        let x = nmi(&[0, 0, 1, 1, 1], &[0, 1, 1, 1, 0]);
        let y = nmi(&[0, 1, 1, 1, 0], &[0, 0, 1, 1, 1]);
        assert!((x - y).abs() < 1e-15 && (0.0..=1.0).contains(&x));
    }

    #[test]
    fn kmeans_separates_obvious_blobs() {
        let pts = array![[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [5.0, 5.0], [5.1, 5.0], [5.0, 5.1]];
        let km = kmeans(&pts, 2, 3, 50);
        assert_eq!(km.assignment[0], km.assignment[1]);
        assert_eq!(km.assignment[0], km.assignment[2]);
        assert_eq!(km.assignment[3], km.assignment[4]);
        assert_ne!(km.assignment[0], km.assignment[3]);
        assert_eq!(choose_k(&pts, 4, 1), 2);
        assert!(silhouette(&pts, &km.assignment) > 0.9);
    }
}
