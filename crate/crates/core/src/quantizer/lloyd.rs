//! One-dimensional K-means over sorted scalars.
//!
//! Because the data is scalar and sorted, every cluster is a contiguous run and
//! assignment reduces to locating the midpoints between consecutive centroids.

use rand::Rng;

/// Above this many `k·n²` steps the exact dynamic program is skipped and
/// k-means++ seeding is used instead.
const EXACT_INIT_BUDGET: usize = 1 << 22;

/// Points per block in the k-means++ sampling table.
const SAMPLE_BLOCK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarKMeans {
    /// Strictly ascending; fewer than `k` entries when the data had fewer distinct values.
    pub centroids: Vec<f64>,
    /// SSE after each accepted Lloyd update, non-increasing.
    pub sse_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl ScalarKMeans {
    pub fn sse(&self) -> f64 {
        self.sse_history.last().copied().unwrap_or(0.0)
    }
}

/// Runs Lloyd iteration on `sorted` (ascending, finite, non-empty).
pub fn fit_sorted<R: Rng + ?Sized>(
    sorted: &[f64],
    k: usize,
    max_iters: usize,
    rel_tol: f64,
    rng: &mut R,
) -> ScalarKMeans {
    assert!(k >= 1 && max_iters >= 1);
    assert!(!sorted.is_empty());
    debug_assert!(sorted.windows(2).all(|w| w[0] <= w[1]));

    let mut distinct: Vec<f64> = sorted.to_vec();
    distinct.dedup();
    if distinct.len() <= k {
        return ScalarKMeans {
            centroids: distinct,
            sse_history: vec![0.0],
            iterations: 0,
            converged: true,
        };
    }

    let n = sorted.len();
    let mut centroids = if k.saturating_mul(n).saturating_mul(n) <= EXACT_INIT_BUDGET {
        optimal_partition_means(sorted, k)
    } else {
        kmeans_pp(sorted, k, rng)
    };

    let mut history: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        let mut cuts = assign(sorted, &centroids);
        repair_empty(sorted, &mut centroids, &mut cuts);
        let (means, sse) = update(sorted, &cuts);
        iterations += 1;

        if let Some(&prev) = history.last() {
            if sse > prev {
                // rounding noise at a fixed point; keep the previous state
                converged = true;
                break;
            }
            let improvement = prev - sse;
            centroids = means;
            history.push(sse);
            if improvement <= rel_tol * prev {
                converged = true;
                break;
            }
        } else {
            centroids = means;
            history.push(sse);
        }
        if sse == 0.0 {
            converged = true;
            break;
        }
    }

    ScalarKMeans {
        centroids,
        sse_history: history,
        iterations,
        converged,
    }
}

/// Cluster start offsets (`k + 1` entries) for ascending `centroids`.
/// A value equal to a midpoint goes to the lower cluster.
pub fn assign(sorted: &[f64], centroids: &[f64]) -> Vec<usize> {
    let mut cuts = Vec::with_capacity(centroids.len() + 1);
    cuts.push(0);
    let mut lo = 0;
    for pair in centroids.windows(2) {
        let mid = 0.5 * (pair[0] + pair[1]);
        lo += sorted[lo..].partition_point(|&x| x <= mid);
        cuts.push(lo);
    }
    cuts.push(sorted.len());
    cuts
}

/// Moves the centroid of each empty cluster onto the point farthest from its
/// own centroid, then reassigns.
fn repair_empty(sorted: &[f64], centroids: &mut [f64], cuts: &mut Vec<usize>) {
    for _ in 0..centroids.len() {
        let Some(empty) = (0..centroids.len()).find(|&j| cuts[j] == cuts[j + 1]) else {
            return;
        };
        let mut best = (0.0f64, f64::NAN);
        for j in 0..centroids.len() {
            if cuts[j] == cuts[j + 1] {
                continue;
            }
            // farthest member of a contiguous run is one of its ends
            for &x in [sorted[cuts[j]], sorted[cuts[j + 1] - 1]].iter() {
                let d = (x - centroids[j]).abs();
                if d > best.0 {
                    best = (d, x);
                }
            }
        }
        if best.0 == 0.0 {
            return;
        }
        centroids[empty] = best.1;
        centroids.sort_by(f64::total_cmp);
        *cuts = assign(sorted, centroids);
    }
}

/// Means of non-empty clusters and the SSE of the partition about them.
fn update(sorted: &[f64], cuts: &[usize]) -> (Vec<f64>, f64) {
    let mut means = Vec::with_capacity(cuts.len() - 1);
    let mut sse = 0.0;
    for w in cuts.windows(2) {
        let run = &sorted[w[0]..w[1]];
        if run.is_empty() {
            continue;
        }
        let mean = run.iter().sum::<f64>() / run.len() as f64;
        sse += run.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
        means.push(mean);
    }
    (means, sse)
}

/// SSE of `sorted` against its nearest centroid.
pub fn sse_against(sorted: &[f64], centroids: &[f64]) -> f64 {
    let cuts = assign(sorted, centroids);
    cuts.windows(2)
        .zip(centroids)
        .map(|(w, c)| sorted[w[0]..w[1]].iter().map(|x| (x - c) * (x - c)).sum::<f64>())
        .sum()
}

/// k-means++ seeding specialized to sorted scalars.
///
/// Squared distances live in a block table so both weighted sampling and the
/// local update after each pick touch `O(n / B + B)` entries plus the points
/// whose nearest seed changed, which form one contiguous run.
fn kmeans_pp<R: Rng + ?Sized>(sorted: &[f64], k: usize, rng: &mut R) -> Vec<f64> {
    let n = sorted.len();
    let first = sorted[rng.random_range(0..n)];
    let mut d2: Vec<f64> = sorted.iter().map(|x| (x - first) * (x - first)).collect();
    let mut blocks: Vec<f64> = d2.chunks(SAMPLE_BLOCK).map(|c| c.iter().sum()).collect();
    let mut seeds = vec![first];

    while seeds.len() < k {
        let total: f64 = blocks.iter().sum();
        if total <= 0.0 {
            break;
        }
        let pick = sample_weighted(&d2, &blocks, rng.random::<f64>() * total);
        let c = sorted[pick];
        seeds.push(c);

        let mut touched_lo = pick;
        let mut touched_hi = pick;
        let mut i = pick;
        loop {
            let nd = (sorted[i] - c) * (sorted[i] - c);
            if nd >= d2[i] && i != pick {
                break;
            }
            d2[i] = nd.min(d2[i]);
            touched_hi = i;
            if i + 1 == n {
                break;
            }
            i += 1;
        }
        let mut i = pick;
        while i > 0 {
            i -= 1;
            let nd = (sorted[i] - c) * (sorted[i] - c);
            if nd >= d2[i] {
                break;
            }
            d2[i] = nd;
            touched_lo = i;
        }
        for b in touched_lo / SAMPLE_BLOCK..=touched_hi / SAMPLE_BLOCK {
            let end = ((b + 1) * SAMPLE_BLOCK).min(n);
            blocks[b] = d2[b * SAMPLE_BLOCK..end].iter().sum();
        }
    }
    seeds.sort_by(f64::total_cmp);
    seeds.dedup();
    seeds
}

fn sample_weighted(d2: &[f64], blocks: &[f64], mut r: f64) -> usize {
    for (b, &bs) in blocks.iter().enumerate() {
        if bs <= 0.0 {
            continue;
        }
        if r >= bs {
            r -= bs;
            continue;
        }
        let start = b * SAMPLE_BLOCK;
        let end = (start + SAMPLE_BLOCK).min(d2.len());
        let mut fallback = start;
        for (i, &w) in d2[start..end].iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            fallback = start + i;
            if r < w {
                return start + i;
            }
            r -= w;
        }
        return fallback;
    }
    // r landed past the end through rounding
    d2.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Means of a globally optimal contiguous `k`-partition (`O(k·n²)` dynamic program).
fn optimal_partition_means(sorted: &[f64], k: usize) -> Vec<f64> {
    let n = sorted.len();
    let shift = sorted[n / 2];
    let mut s1 = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    for (i, x) in sorted.iter().enumerate() {
        let v = x - shift;
        s1[i + 1] = s1[i] + v;
        s2[i + 1] = s2[i] + v * v;
    }
    // cost of the run sorted[a..b]
    let cost = |a: usize, b: usize| {
        let m = (b - a) as f64;
        let s = s1[b] - s1[a];
        (s2[b] - s2[a] - s * s / m).max(0.0)
    };

    let mut dp = vec![vec![f64::INFINITY; n + 1]; k + 1];
    let mut arg = vec![vec![0usize; n + 1]; k + 1];
    dp[0][0] = 0.0;
    for m in 1..=k {
        for b in m..=n {
            for a in (m - 1)..b {
                let v = dp[m - 1][a] + cost(a, b);
                if v < dp[m][b] {
                    dp[m][b] = v;
                    arg[m][b] = a;
                }
            }
        }
    }
    let mut bounds = vec![n];
    let mut b = n;
    for m in (1..=k).rev() {
        b = arg[m][b];
        bounds.push(b);
    }
    bounds.reverse();
    bounds
        .windows(2)
        .map(|w| sorted[w[0]..w[1]].iter().sum::<f64>() / (w[1] - w[0]) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn four_points_two_clusters() {
        let fit = fit_sorted(&[0.0, 1.0, 10.0, 11.0], 2, 100, 1e-6, &mut rng());
        assert_eq!(fit.centroids, vec![0.5, 10.5]);
        assert_eq!(fit.sse(), 1.0);
    }

    #[test]
    fn few_distinct_values_are_exact() {
        let fit = fit_sorted(&[3.7; 9], 256, 100, 1e-6, &mut rng());
        assert_eq!(fit.centroids, vec![3.7]);
        assert_eq!(fit.sse(), 0.0);
    }

    #[test]
    fn midpoint_goes_low() {
        assert_eq!(assign(&[0.0, 1.0, 2.0], &[0.0, 2.0]), vec![0, 2, 3]);
    }

    #[test]
    fn kmeanspp_seeds_are_distinct_data_points() {
        let data: Vec<f64> = (0..5000).map(|i| ((i * 37) % 1000) as f64 / 7.0).collect();
        let mut sorted = data.clone();
        sorted.sort_by(f64::total_cmp);
        let seeds = kmeans_pp(&sorted, 64, &mut rng());
        assert_eq!(seeds.len(), 64);
        assert!(seeds.windows(2).all(|w| w[0] < w[1]));
        assert!(seeds.iter().all(|s| sorted.binary_search_by(|x| x.total_cmp(s)).is_ok()));
    }

    #[test]
    fn large_fit_history_is_monotone() {
        let mut r = rng();
        let mut data: Vec<f64> = (0..50_000).map(|_| r.random::<f64>().powi(3)).collect();
        data.sort_by(f64::total_cmp);
        let fit = fit_sorted(&data, 256, 100, 1e-6, &mut r);
        assert_eq!(fit.centroids.len(), 256);
        assert!(fit.sse_history.windows(2).all(|w| w[1] <= w[0]));
        assert!((sse_against(&data, &fit.centroids) - fit.sse()).abs() <= 1e-9 * fit.sse());
    }

    #[test]
    fn empty_cluster_gets_repaired() {
        // -5 and -4 attract no points
        let sorted = [0.0, 0.0, 100.0, 101.0];
        let mut centroids = vec![-5.0, -4.0, 0.0];
        let mut cuts = assign(&sorted, &centroids);
        repair_empty(&sorted, &mut centroids, &mut cuts);
        assert!(cuts.windows(2).all(|w| w[0] < w[1]), "{cuts:?}");
    }
}
