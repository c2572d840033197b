//! Solver inputs: the averaged class-probability matrix and the
//! co-association similarity matrix built from a cluster ensemble.

use crate::error::{Error, Result};

/// Dense row-major `n × k` matrix of nonnegative class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    n: usize,
    k: usize,
    values: Vec<f64>,
}

impl ProbMatrix {
    pub fn new(n: usize, k: usize, values: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::Shape("class count must be positive".into()));
        }
        if values.len() != n * k {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {n}×{k} matrix",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Argument(format!(
                "entry ({}, {}) = {} is not a finite nonnegative score",
                pos / k,
                pos % k,
                values[pos]
            )));
        }
        Ok(ProbMatrix { n, k, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(i) = rows.iter().position(|r| r.len() != k) {
            return Err(Error::Shape(format!(
                "row {i} has {} columns, expected {k}",
                rows[i].len()
            )));
        }
        Self::new(rows.len(), k, rows.concat())
    }

    /// Every entry equal to `1/k`.
    pub fn uniform(n: usize, k: usize) -> Self {
        ProbMatrix {
            n,
            k,
            values: vec![1.0 / k as f64; n * k],
        }
    }

    /// Skips validation; used for solver copies whose domain is enforced by
    /// the divergence instead.
    pub(crate) fn from_raw(n: usize, k: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), n * k);
        ProbMatrix { n, k, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.k)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Row-wise argmax, ties going to the lowest class index.
    pub fn argmax_labels(&self) -> Vec<usize> {
        self.rows().map(argmax).collect()
    }

    /// Rows rescaled to unit L1 norm; all-zero rows become uniform.
    pub fn normalized(&self) -> ProbMatrix {
        let mut out = self.clone();
        for row in out.values.chunks_exact_mut(self.k) {
            normalize_row(row);
        }
        out
    }

    fn check_same_shape(&self, other: &ProbMatrix) -> Result<()> {
        if self.n != other.n || self.k != other.k {
            return Err(Error::Shape(format!(
                "{}×{} and {}×{} matrices",
                self.n, self.k, other.n, other.k
            )));
        }
        Ok(())
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = c;
        }
    }
    best
}

pub(crate) fn normalize_row(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    if sum > 0.0 {
        row.iter_mut().for_each(|v| *v /= sum);
    } else {
        let u = 1.0 / row.len() as f64;
        row.iter_mut().for_each(|v| *v = u);
    }
}

/// Entrywise mean of the classifier outputs, smoothed by `floor` and
/// re-normalized so every row is an interior point of the simplex.
pub fn average_class_probabilities(outputs: &[ProbMatrix], floor: f64) -> Result<ProbMatrix> {
    let first = outputs.first().ok_or(Error::EmptyEnsemble)?;
    for other in &outputs[1..] {
        first.check_same_shape(other)?;
    }
    let scale = 1.0 / outputs.len() as f64;
    let mut values = vec![0.0; first.values.len()];
    for out in outputs {
        for (acc, v) in values.iter_mut().zip(&out.values) {
            *acc += v;
        }
    }
    for row in values.chunks_exact_mut(first.k) {
        for v in row.iter_mut() {
            *v = *v * scale + floor;
        }
        normalize_row(row);
    }
    Ok(ProbMatrix::from_raw(first.n, first.k, values))
}

/// Hard partitions of the same `n` instances, one column per clusterer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionSet {
    n: usize,
    columns: Vec<Vec<i64>>,
}

impl PartitionSet {
    pub fn new(columns: Vec<Vec<i64>>) -> Result<Self> {
        let n = columns.first().map(Vec::len).ok_or_else(|| {
            Error::Argument("a partition set needs at least one clustering".into())
        })?;
        if let Some(c) = columns.iter().position(|col| col.len() != n) {
            return Err(Error::Shape(format!(
                "partition {c} labels {} instances, expected {n}",
                columns[c].len()
            )));
        }
        Ok(PartitionSet { n, columns })
    }

    /// Builds from `n` rows of `r` cluster identifiers.
    pub fn from_rows(rows: &[Vec<i64>]) -> Result<Self> {
        let r = rows.first().map(Vec::len).unwrap_or(0);
        if r == 0 {
            return Err(Error::Argument("partition rows are empty".into()));
        }
        if let Some(i) = rows.iter().position(|row| row.len() != r) {
            return Err(Error::Shape(format!(
                "row {i} has {} columns, expected {r}",
                rows[i].len()
            )));
        }
        let columns = (0..r).map(|c| rows.iter().map(|row| row[c]).collect()).collect();
        Self::new(columns)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn clusterers(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, c: usize) -> &[i64] {
        &self.columns[c]
    }

    pub fn row(&self, i: usize) -> Vec<i64> {
        self.columns.iter().map(|col| col[i]).collect()
    }
}

/// Symmetric similarity matrix with zero diagonal, stored as sorted `(i, j, s)`
/// triplets with `i < j` and `s ∈ (0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SimilarityMatrix {
    pub fn empty(n: usize) -> Self {
        SimilarityMatrix {
            n,
            entries: Vec::new(),
        }
    }

    /// Accepts triplets in either orientation. Zero values are dropped;
    /// diagonal entries, duplicates and values outside `[0, 1]` are errors.
    pub fn from_triplets<I>(n: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut entries = Vec::new();
        for (i, j, s) in triplets {
            if i >= n || j >= n {
                return Err(Error::Argument(format!(
                    "pair ({i}, {j}) is out of bounds for {n} instances"
                )));
            }
            if i == j {
                return Err(Error::Argument(format!("diagonal entry ({i}, {i}) given")));
            }
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Argument(format!(
                    "similarity ({i}, {j}) = {s} is outside [0, 1]"
                )));
            }
            if s > 0.0 {
                entries.push((i.min(j), i.max(j), s));
            }
        }
        entries.sort_by_key(|&(i, j, _)| (i, j));
        if let Some(w) = entries.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::Argument(format!(
                "pair ({}, {}) is given twice",
                w[0].0, w[0].1
            )));
        }
        Ok(SimilarityMatrix { n, entries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stored `(i, j, s)` triplets, `i < j`, in ascending order.
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// `s_ij`, zero when absent or on the diagonal.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let key = (i.min(j), i.max(j));
        self.entries
            .binary_search_by_key(&key, |&(a, b, _)| (a, b))
            .map(|pos| self.entries[pos].2)
            .unwrap_or(0.0)
    }

    /// Symmetric adjacency lists with neighbors in ascending index order.
    pub fn adjacency(&self) -> Adjacency {
        let mut degree = vec![0usize; self.n + 1];
        for &(i, j, _) in &self.entries {
            degree[i + 1] += 1;
            degree[j + 1] += 1;
        }
        let mut offsets = degree;
        for i in 0..self.n {
            offsets[i + 1] += offsets[i];
        }
        let mut cursor = offsets.clone();
        let mut neighbors = vec![(0usize, 0.0f64); offsets[self.n]];
        // Entries are sorted by (i, j): row j receives i's in ascending order
        // and row i receives j's in ascending order, but the two streams can
        // interleave, so sort each row afterwards.
        for &(i, j, s) in &self.entries {
            neighbors[cursor[i]] = (j, s);
            cursor[i] += 1;
            neighbors[cursor[j]] = (i, s);
            cursor[j] += 1;
        }
        for i in 0..self.n {
            neighbors[offsets[i]..offsets[i + 1]].sort_by_key(|&(j, _)| j);
        }
        let row_sums = (0..self.n)
            .map(|i| neighbors[offsets[i]..offsets[i + 1]].iter().map(|&(_, s)| s).sum())
            .collect();
        Adjacency {
            offsets,
            neighbors,
            row_sums,
        }
    }
}

/// Row-compressed view of a [`SimilarityMatrix`] holding both `(i, j)` and
/// `(j, i)`.
#[derive(Debug, Clone)]
pub struct Adjacency {
    offsets: Vec<usize>,
    neighbors: Vec<(usize, f64)>,
    row_sums: Vec<f64>,
}

impl Adjacency {
    pub fn n(&self) -> usize {
        self.row_sums.len()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    /// `Σ_{j≠i} s_ij`.
    pub fn row_sum(&self, i: usize) -> f64 {
        self.row_sums[i]
    }
}

/// Fraction of clusterings that place each pair in the same cluster.
pub fn coassociation_similarity(parts: &PartitionSet) -> Result<SimilarityMatrix> {
    let n = parts.n();
    if n < 2 {
        return Err(Error::Argument(format!(
            "co-association needs at least two instances, got {n}"
        )));
    }
    let r = parts.clusterers() as f64;
    let rows: Vec<Vec<i64>> = (0..n).map(|i| parts.row(i)).collect();
    let mut entries = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let shared = rows[i].iter().zip(&rows[j]).filter(|(a, b)| a == b).count();
            if shared > 0 {
                entries.push((i, j, shared as f64 / r));
            }
        }
    }
    Ok(SimilarityMatrix { n, entries })
}

/// Drops entries strictly below `threshold`.
pub fn sparsify(sim: &SimilarityMatrix, threshold: f64) -> Result<SimilarityMatrix> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Argument(format!(
            "sparsification threshold {threshold} is outside [0, 1]"
        )));
    }
    Ok(SimilarityMatrix {
        n: sim.n,
        entries: sim
            .entries
            .iter()
            .copied()
            .filter(|&(_, _, s)| s >= threshold)
            .collect(),
    })
}
