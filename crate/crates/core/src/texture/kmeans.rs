//! k-means++ seeding and Lloyd iterations accelerated with Elkan's
//! triangle-inequality bounds.
//!
//! Assignments are decided on exact squared distances with ties going to
//! the lowest centroid index; the bounds only ever skip centroids that are
//! strictly farther, so the labels equal those of unaccelerated Lloyd from
//! the same seeds.

use rand::Rng;

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// D^2 seeding. Returns `k * dims` centroid coordinates.
pub fn kmeans_pp_init<R: Rng + ?Sized>(data: &[f64], dims: usize, k: usize, rng: &mut R) -> Vec<f64> {
    let n = data.len() / dims;
    assert!(k >= 1 && k <= n, "k-means++ needs 1 <= k <= rows");
    let row = |i: usize| &data[i * dims..(i + 1) * dims];
    let mut centroids = Vec::with_capacity(k * dims);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| squared_distance(row(i), row(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(squared_distance(row(i), &c));
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}

/// Index of the nearest centroid by squared distance, lowest index on ties.
pub fn assign_nearest(point: &[f64], centroids: &[f64], dims: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(dims).enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Mean of the rows assigned to each cluster; empty clusters keep their
/// previous centroid.
pub fn update_centroids(data: &[f64], dims: usize, labels: &[usize], previous: &[f64]) -> Vec<f64> {
    let k = previous.len() / dims;
    let mut sums = vec![0.0; k * dims];
    let mut counts = vec![0usize; k];
    for (row, &l) in data.chunks_exact(dims).zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l * dims..(l + 1) * dims].iter_mut().zip(row) {
            *s += v;
        }
    }
    for j in 0..k {
        let dst = &mut sums[j * dims..(j + 1) * dims];
        if counts[j] == 0 {
            dst.copy_from_slice(&previous[j * dims..(j + 1) * dims]);
        } else {
            dst.iter_mut().for_each(|v| *v /= counts[j] as f64);
        }
    }
    sums
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Vec<f64>,
    /// Within-cluster sum of squares after each centroid update.
    pub sse_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Point-centroid distance evaluations, including the initial pass.
    pub distance_evaluations: u64,
}

pub struct Elkan<'a> {
    data: &'a [f64],
    dims: usize,
    slack: f64,
}

const REL_SLACK: f64 = 1e-9;

impl<'a> Elkan<'a> {
    pub fn new(data: &'a [f64], dims: usize) -> Self {
        let scale = data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Elkan {
            data,
            dims,
            slack: 1e-12 * scale.max(f64::MIN_POSITIVE),
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    // upper bound `u` is clearly below `bound`
    #[inline]
    fn clearly_below(&self, u: f64, bound: f64) -> bool {
        u * (1.0 + REL_SLACK) + self.slack < bound
    }

    fn sse(&self, labels: &[usize], centroids: &[f64]) -> f64 {
        let d = self.dims;
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| squared_distance(self.row(i), &centroids[l * d..(l + 1) * d]))
            .sum()
    }

    pub fn run(&self, init: Vec<f64>, max_iterations: usize) -> KMeansResult {
        let d = self.dims;
        let n = self.data.len() / d;
        let k = init.len() / d;
        let mut centroids = init;
        let mut evals = 0u64;

        let mut labels = vec![0usize; n];
        let mut upper = vec![0.0; n];
        let mut lower = vec![0.0; n * k];
        for i in 0..n {
            let x = self.row(i);
            let mut best = (0, f64::INFINITY);
            for j in 0..k {
                let sq = squared_distance(x, &centroids[j * d..(j + 1) * d]);
                lower[i * k + j] = sq.sqrt();
                if sq < best.1 {
                    best = (j, sq);
                }
            }
            evals += k as u64;
            labels[i] = best.0;
            upper[i] = best.1.sqrt();
        }

        let mut sse_trace = Vec::new();
        let mut iterations = 0;
        let mut converged = false;
        let mut cc = vec![0.0; k * k];
        let mut half_sep = vec![0.0; k];
        while iterations < max_iterations {
            iterations += 1;
            let updated = update_centroids(self.data, d, &labels, &centroids);
            let shift: Vec<f64> = (0..k)
                .map(|j| squared_distance(&centroids[j * d..(j + 1) * d], &updated[j * d..(j + 1) * d]).sqrt())
                .collect();
            centroids = updated;
            sse_trace.push(self.sse(&labels, &centroids));
            for i in 0..n {
                upper[i] += shift[labels[i]];
                for j in 0..k {
                    let l = &mut lower[i * k + j];
                    *l = (*l - shift[j]).max(0.0);
                }
            }

            for a in 0..k {
                half_sep[a] = f64::INFINITY;
                for b in 0..k {
                    let dist = squared_distance(&centroids[a * d..(a + 1) * d], &centroids[b * d..(b + 1) * d]).sqrt();
                    cc[a * k + b] = dist;
                    if a != b {
                        half_sep[a] = half_sep[a].min(0.5 * dist);
                    }
                }
            }

            let mut changed = false;
            for i in 0..n {
                let mut a = labels[i];
                if self.clearly_below(upper[i], half_sep[a]) {
                    continue;
                }
                let x = self.row(i);
                let mut best_sq = f64::NAN;
                let mut stale = true;
                for j in 0..k {
                    if j == a {
                        continue;
                    }
                    if self.clearly_below(upper[i], lower[i * k + j])
                        || self.clearly_below(upper[i], 0.5 * cc[a * k + j])
                    {
                        continue;
                    }
                    if stale {
                        best_sq = squared_distance(x, &centroids[a * d..(a + 1) * d]);
                        evals += 1;
                        upper[i] = best_sq.sqrt();
                        lower[i * k + a] = upper[i];
                        stale = false;
                        if self.clearly_below(upper[i], lower[i * k + j])
                            || self.clearly_below(upper[i], 0.5 * cc[a * k + j])
                        {
                            continue;
                        }
                    }
                    let sq = squared_distance(x, &centroids[j * d..(j + 1) * d]);
                    evals += 1;
                    lower[i * k + j] = sq.sqrt();
                    if sq < best_sq || (sq == best_sq && j < a) {
                        a = j;
                        best_sq = sq;
                        upper[i] = sq.sqrt();
                    }
                }
                if a != labels[i] {
                    labels[i] = a;
                    changed = true;
                }
            }
            if !changed {
                converged = true;
                break;
            }
        }

        KMeansResult {
            labels,
            centroids,
            sse_trace,
            iterations,
            converged,
            distance_evaluations: evals,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // unaccelerated Lloyd with the same iteration protocol
    fn lloyd(data: &[f64], dims: usize, init: Vec<f64>, max_iter: usize) -> Vec<usize> {
        let n = data.len() / dims;
        let mut c = init;
        let assign = |c: &[f64]| -> Vec<usize> {
            (0..n)
                .map(|i| assign_nearest(&data[i * dims..(i + 1) * dims], c, dims).0)
                .collect()
        };
        let mut labels = assign(&c);
        for _ in 0..max_iter {
            c = update_centroids(data, dims, &labels, &c);
            let next = assign(&c);
            if next == labels {
                break;
            }
            labels = next;
        }
        labels
    }

    #[test]
    fn elkan_equals_lloyd_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..30 {
            let n = rng.random_range(10..150);
            let dims = rng.random_range(1..5);
            let k = rng.random_range(1..5).min(n);
            let data: Vec<f64> = (0..n * dims).map(|_| rng.random::<f64>() * 10.0).collect();
            let init = kmeans_pp_init(&data, dims, k, &mut rng);
            let fast = Elkan::new(&data, dims).run(init.clone(), 100);
            assert_eq!(fast.labels, lloyd(&data, dims, init, 100), "trial {trial}");
        }
    }

    #[test]
    fn sse_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<f64> = (0..600).map(|_| rng.random::<f64>()).collect();
        let init = kmeans_pp_init(&data, 3, 4, &mut rng);
        let r = Elkan::new(&data, 3).run(init, 100);
        for w in r.sse_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        assert!(r.converged);
    }

    #[test]
    fn integer_grid_ties_go_to_lowest_index() {
        // points equidistant from both centroids
        let data = vec![0.0, 2.0, 4.0, 1.0, 3.0];
        let r = Elkan::new(&data, 1).run(vec![1.0, 3.0], 1);
        assert_eq!(r.labels[1], 0);
    }
}
