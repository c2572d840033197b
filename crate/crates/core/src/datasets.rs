//! Synthetic datasets and the simple base models used to build ensemble
//! inputs end to end.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::ensemble::{average_class_probabilities, PartitionSet, ProbMatrix, SimilarityMatrix};
use crate::error::{Error, Result};

pub const DEFAULT_RESTARTS: usize = 5;
pub const MAX_LLOYD_ITERS: usize = 100;
/// Cluster counts of the generated partition ensemble.
pub const PARTITION_CLUSTER_COUNTS: [usize; 5] = [4, 5, 6, 7, 8];
/// Floor added before renormalizing averaged classifier outputs.
pub const PI_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub k: usize,
    pub seed: u64,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            points: indices.iter().map(|&i| self.points[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            k: self.k,
            seed: self.seed,
        }
    }
}

fn check_generator_args(n: usize, noise: f64) -> Result<()> {
    if n == 0 || n % 2 == 1 {
        return Err(Error::Argument(format!("n must be positive and even, got {n}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Argument(format!("noise must be a finite value ≥ 0, got {noise}")));
    }
    Ok(())
}

fn jitter(points: &mut [Vec<f64>], noise: f64, rng: &mut ChaCha8Rng) {
    if noise > 0.0 {
        let normal = Normal::new(0.0, noise).expect("noise validated");
        for p in points.iter_mut().flatten() {
            *p += normal.sample(rng);
        }
    }
}

/// Two interleaving half circles with `n/2` points each: class 0 on
/// `(cos t, sin t)` and class 1 on `(1 − cos t, 0.5 − sin t)`, `t ∈ [0, π]`.
pub fn half_moon(n: usize, noise: f64, seed: u64) -> Result<LabeledDataset> {
    check_generator_args(n, noise)?;
    let m = n / 2;
    let step = if m > 1 { PI / (m - 1) as f64 } else { 0.0 };
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..m {
        let t = step * i as f64;
        points.push(vec![t.cos(), t.sin()]);
        labels.push(0);
    }
    for i in 0..m {
        let t = step * i as f64;
        points.push(vec![1.0 - t.cos(), 0.5 - t.sin()]);
        labels.push(1);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    jitter(&mut points, noise, &mut rng);
    Ok(LabeledDataset { points, labels, k: 2, seed })
}

/// Two concentric circles with `n/2` points each, radius 1 (class 0) and
/// radius 2 (class 1).
pub fn circles(n: usize, noise: f64, seed: u64) -> Result<LabeledDataset> {
    check_generator_args(n, noise)?;
    let m = n / 2;
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (class, radius) in [(0, 1.0), (1, 2.0)] {
        for i in 0..m {
            let t = 2.0 * PI * i as f64 / m as f64;
            points.push(vec![radius * t.cos(), radius * t.sin()]);
            labels.push(class);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    jitter(&mut points, noise, &mut rng);
    Ok(LabeledDataset { points, labels, k: 2, seed })
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Softmax over negative squared distances to the class centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct NearestCentroid {
    centroids: Vec<Vec<f64>>,
}

impl NearestCentroid {
    pub fn fit(train: &LabeledDataset) -> Result<Self> {
        let dim = train.points.first().map_or(0, Vec::len);
        let mut sums = vec![vec![0.0; dim]; train.k];
        let mut counts = vec![0usize; train.k];
        for (p, &c) in train.points.iter().zip(&train.labels) {
            if c >= train.k {
                return Err(Error::Argument(format!("label {c} is not below k = {}", train.k)));
            }
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        if let Some(missing) = counts.iter().position(|&c| c == 0) {
            return Err(Error::MissingClass(missing));
        }
        for (s, &c) in sums.iter_mut().zip(&counts) {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
        Ok(NearestCentroid { centroids: sums })
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn predict(&self, points: &[Vec<f64>]) -> ProbMatrix {
        let k = self.centroids.len();
        let mut values = Vec::with_capacity(points.len() * k);
        for p in points {
            let scores: Vec<f64> = self.centroids.iter().map(|c| -squared_distance(p, c)).collect();
            let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
            let total: f64 = exps.iter().sum();
            values.extend(exps.iter().map(|e| e / total));
        }
        ProbMatrix::from_raw(points.len(), k, values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub wcss: f64,
    /// Within-cluster sum of squares after each assignment step of the
    /// selected restart.
    pub history: Vec<f64>,
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = squared_distance(p, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| squared_distance(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&w| w > 0.0).expect("total is positive");
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let center = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &center));
        }
        centers.push(center);
    }
    centers
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> KMeansResult {
    let k = centers.len();
    let dim = points[0].len();
    let mut assignments = vec![usize::MAX; points.len()];
    let mut history = Vec::new();
    for _ in 0..MAX_LLOYD_ITERS {
        let mut changed = false;
        let mut wcss = 0.0;
        let mut dists = Vec::with_capacity(points.len());
        for (a, p) in assignments.iter_mut().zip(points) {
            let (c, d) = nearest(p, &centers);
            changed |= *a != c;
            *a = c;
            wcss += d;
            dists.push(d);
        }
        history.push(wcss);
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // Reseed an empty cluster at the point farthest from its center.
                let far = (0..points.len())
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("points are non-empty");
                centers[c] = points[far].clone();
                dists[far] = 0.0;
            }
        }
    }
    let wcss = *history.last().expect("at least one assignment step");
    KMeansResult {
        assignments,
        centers,
        wcss,
        history,
    }
}

/// Lloyd's algorithm from k-means++ seeds; the restart with the lowest
/// within-cluster sum of squares wins.
pub fn kmeans(points: &[Vec<f64>], k_clusters: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    if k_clusters == 0 || k_clusters > points.len() {
        return Err(Error::Argument(format!(
            "k_clusters must lie in 1..={}, got {k_clusters}",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let result = lloyd(points, kmeans_plus_plus(points, k_clusters, &mut rng));
        if best.as_ref().is_none_or(|b| result.wcss < b.wcss) {
            best = Some(result);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Per class, `max(1, round(fraction · count))` randomly chosen indices are
/// used for training; the rest form the target set. Both lists ascend.
pub fn stratified_split(labels: &[usize], k: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Argument(format!("label fraction must lie in (0, 1), got {fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    for class in 0..k {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            return Err(Error::MissingClass(class));
        }
        members.shuffle(&mut rng);
        let take = ((fraction * members.len() as f64).round() as usize).max(1);
        train.extend_from_slice(&members[..take.min(members.len())]);
    }
    train.sort_unstable();
    let mut is_train = vec![false; labels.len()];
    train.iter().for_each(|&i| is_train[i] = true);
    let target = (0..labels.len()).filter(|&i| !is_train[i]).collect();
    Ok((train, target))
}

/// Classifier and cluster-ensemble inputs for the target part of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleInputs {
    pub pi: ProbMatrix,
    pub partitions: PartitionSet,
    pub truth: Vec<usize>,
    pub train_indices: Vec<usize>,
    pub target_indices: Vec<usize>,
}

/// Trains the nearest-centroid classifier on a stratified `label_fraction` of
/// the points and clusters the remaining target points once per entry of
/// [`PARTITION_CLUSTER_COUNTS`].
pub fn build_inputs(data: &LabeledDataset, label_fraction: f64, seed: u64) -> Result<EnsembleInputs> {
    let (train_indices, target_indices) = stratified_split(&data.labels, data.k, label_fraction, seed)?;
    let train = data.subset(&train_indices);
    let target = data.subset(&target_indices);
    let classifier = NearestCentroid::fit(&train)?;
    let pi = average_class_probabilities(&[classifier.predict(&target.points)], PI_FLOOR)?;
    let columns = PARTITION_CLUSTER_COUNTS
        .iter()
        .enumerate()
        .map(|(c, &clusters)| {
            let run_seed = seed.wrapping_add(1 + c as u64);
            kmeans(&target.points, clusters, run_seed, DEFAULT_RESTARTS)
                .map(|r| r.assignments.into_iter().map(|a| a as i64).collect())
        })
        .collect::<Result<Vec<Vec<i64>>>>()?;
    Ok(EnsembleInputs {
        pi,
        partitions: PartitionSet::new(columns)?,
        truth: target.labels,
        train_indices,
        target_indices,
    })
}

/// Random consensus instance: interior class probabilities and a similarity
/// graph where each pair is linked with probability one half.
pub fn random_instance(n: usize, k: usize, seed: u64) -> Result<(ProbMatrix, SimilarityMatrix)> {
    if n == 0 || k < 2 {
        return Err(Error::Argument(format!("need n ≥ 1 and k ≥ 2, got n = {n}, k = {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n * k);
    for _ in 0..n {
        let row: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = row.iter().sum();
        values.extend(row.iter().map(|v| v / total));
    }
    let mut triplets = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < 0.5 {
                triplets.push((i, j, rng.random_range(0.05..=1.0)));
            }
        }
    }
    Ok((ProbMatrix::new(n, k, values)?, SimilarityMatrix::from_triplets(n, triplets)?))
}
