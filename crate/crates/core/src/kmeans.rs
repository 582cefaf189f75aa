//! Seeded k-means over row-major feature vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dist2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (*x - *y) as f64;
            d * d
        })
        .sum()
}

/// Cluster `n = data.len() / dim` points into at most `k` groups.
///
/// Centres are seeded with k-means++ from a fixed-seed generator; seeding
/// stops early once every point coincides with a centre, so the number of
/// clusters never exceeds the number of distinct points. Returns one label
/// per point, labels dense from 0.
pub fn kmeans(data: &[f32], dim: usize, k: usize, max_iter: usize, seed: u64) -> Vec<usize> {
    assert!(dim > 0 && data.len().is_multiple_of(dim), "feature buffer shape");
    let n = data.len() / dim;
    if n == 0 || k == 0 {
        return vec![0; n];
    }
    let point = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centres: Vec<Vec<f32>> = vec![point(rng.random_range(0..n)).to_vec()];
    let mut nearest: Vec<f64> = (0..n).map(|i| dist2(point(i), &centres[0])).collect();
    while centres.len() < k {
        let total: f64 = nearest.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &d) in nearest.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        if nearest[pick] <= 0.0 {
            pick = nearest
                .iter()
                .position(|&d| d > 0.0)
                .expect("positive total implies a positive distance");
        }
        let c = point(pick).to_vec();
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(dist2(point(i), &c));
        }
        centres.push(c);
    }

    let mut labels = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let p = point(i);
            let best = (0..centres.len())
                .min_by(|&a, &b| dist2(p, &centres[a]).total_cmp(&dist2(p, &centres[b])))
                .expect("at least one centre");
            if *label != best {
                *label = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0f64; dim]; centres.len()];
        let mut counts = vec![0usize; centres.len()];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(point(i)) {
                *s += *v as f64;
            }
        }
        for (c, (s, &cnt)) in centres.iter_mut().zip(sums.iter().zip(&counts)) {
            if cnt > 0 {
                for (cv, sv) in c.iter_mut().zip(s) {
                    *cv = (*sv / cnt as f64) as f32;
                }
            }
        }
    }
    relabel_dense(&labels)
}

/// Renumbers labels in order of first appearance.
fn relabel_dense(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}
