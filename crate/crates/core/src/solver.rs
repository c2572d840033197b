//! Alternating minimization over split left/right copies.
//!
//! Each instance's label vector `y_i` is replaced by a left copy (used where
//! `y_i` is the first divergence argument) and a right copy (second argument),
//! coupled by a `λ`-weighted penalty. Right copies then have a closed-form
//! weighted arithmetic mean update, and left copies a weighted mean in the
//! dual (gradient) coordinates mapped back through `∇φ⁻¹`.
//!
//! Within a half-step every update reads only the other side's copies, so
//! sweeps are evaluated in parallel into a fresh buffer. All inner sums run in
//! ascending neighbor order, making results independent of the worker count.

use rayon::prelude::*;

use crate::divergences::{Divergence, DivergenceKind};
use crate::ensemble::{argmax, normalize_row, Adjacency, ProbMatrix, SimilarityMatrix};
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 1000;

/// Copies whose largest per-instance divergence is below this are treated as
/// coinciding.
pub const COPIES_COINCIDE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Weight of the cluster-ensemble term.
    pub alpha: f64,
    /// Penalty coupling the left and right copies of each instance.
    pub lambda: f64,
    /// Relative objective change below which the run stops.
    pub epsilon: f64,
    pub max_iters: usize,
    pub divergence: Divergence,
}

impl SolverConfig {
    pub fn new(kind: DivergenceKind, alpha: f64, lambda: f64) -> Self {
        SolverConfig {
            alpha,
            lambda,
            epsilon: DEFAULT_EPSILON,
            max_iters: DEFAULT_MAX_ITERS,
            divergence: Divergence::new(kind),
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::Argument(format!("{what} = {v} is invalid")));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha", self.alpha);
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda", self.lambda);
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", self.epsilon);
        }
        if self.max_iters == 0 {
            return Err(Error::Argument("max_iters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub y_left: ProbMatrix,
    pub y_right: ProbMatrix,
    pub iteration: usize,
    /// Objective after initialization and after every completed iteration.
    pub objective_trace: Vec<f64>,
}

impl SolverState {
    /// Left copies followed by right copies, flattened.
    pub fn concatenated(&self) -> Vec<f64> {
        let mut z = self.y_left.as_slice().to_vec();
        z.extend_from_slice(self.y_right.as_slice());
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Labeling {
    pub probabilities: ProbMatrix,
    pub labels: Vec<usize>,
    pub iterations_used: usize,
    pub converged: bool,
}

/// A consensus problem: averaged classifier outputs plus the similarity graph.
#[derive(Debug, Clone)]
pub struct Solver {
    pi: ProbMatrix,
    adjacency: Adjacency,
    config: SolverConfig,
}

impl Solver {
    pub fn new(pi: &ProbMatrix, sim: &SimilarityMatrix, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        if sim.n() != pi.n() {
            return Err(Error::Shape(format!(
                "{} class-probability rows but a {}×{} similarity matrix",
                pi.n(),
                sim.n(),
                sim.n()
            )));
        }
        let div = config.divergence;
        let mut values = Vec::with_capacity(pi.as_slice().len());
        for row in pi.rows() {
            values.extend(div.clamp(row)?);
        }
        Ok(Solver {
            pi: ProbMatrix::from_raw(pi.n(), pi.k(), values),
            adjacency: sim.adjacency(),
            config,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// Same problem under a different configuration.
    pub fn reconfigured(&self, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        Ok(Solver {
            pi: self.pi.clone(),
            adjacency: self.adjacency.clone(),
            config,
        })
    }

    /// Class probabilities after clamping into the divergence domain.
    pub fn pi(&self) -> &ProbMatrix {
        &self.pi
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn n(&self) -> usize {
        self.pi.n()
    }

    pub fn k(&self) -> usize {
        self.pi.k()
    }

    fn check_shape(&self, m: &ProbMatrix) -> Result<()> {
        if m.n() != self.n() || m.k() != self.k() {
            return Err(Error::Shape(format!(
                "expected {}×{} copies, got {}×{}",
                self.n(),
                self.k(),
                m.n(),
                m.k()
            )));
        }
        Ok(())
    }

    /// Every copy set to `1/k`.
    pub fn initial_state(&self) -> Result<SolverState> {
        let mut state = SolverState {
            y_left: ProbMatrix::uniform(self.n(), self.k()),
            y_right: ProbMatrix::uniform(self.n(), self.k()),
            iteration: 0,
            objective_trace: Vec::new(),
        };
        let j = self.objective_j(&state)?;
        state.objective_trace.push(j);
        Ok(state)
    }

    /// Unsplit objective `Σ_i d(π_i, y_i) + α Σ_{i,j} s_ij d(y_i, y_j)`.
    pub fn objective_j0(&self, y: &ProbMatrix) -> Result<f64> {
        self.check_shape(y)?;
        let div = &self.config.divergence;
        let alpha = self.config.alpha;
        let terms = (0..self.n())
            .into_par_iter()
            .map(|i| {
                let yi = y.row(i);
                let mut total = div.bregman(self.pi.row(i), yi)?;
                if alpha > 0.0 {
                    let mut pairs = 0.0;
                    for &(j, s) in self.adjacency.neighbors(i) {
                        pairs += s * div.bregman(yi, y.row(j))?;
                    }
                    total += alpha * pairs;
                }
                Ok(total)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(terms.iter().sum())
    }

    /// Split objective at the configured `λ`.
    pub fn objective_j(&self, state: &SolverState) -> Result<f64> {
        self.objective_split(&state.y_left, &state.y_right, self.config.lambda)
    }

    /// `Σ_i d(π_i, r_i) + α Σ_{i,j} s_ij d(l_i, r_j) + λ Σ_i d(l_i, r_i)`.
    pub fn objective_split(&self, left: &ProbMatrix, right: &ProbMatrix, lambda: f64) -> Result<f64> {
        self.check_shape(left)?;
        self.check_shape(right)?;
        let div = &self.config.divergence;
        let alpha = self.config.alpha;
        let terms = (0..self.n())
            .into_par_iter()
            .map(|i| {
                let li = left.row(i);
                let mut total = div.bregman(self.pi.row(i), right.row(i))?;
                if alpha > 0.0 {
                    let mut pairs = 0.0;
                    for &(j, s) in self.adjacency.neighbors(i) {
                        pairs += s * div.bregman(li, right.row(j))?;
                    }
                    total += alpha * pairs;
                }
                if lambda > 0.0 {
                    total += lambda * div.bregman(li, right.row(i))?;
                }
                Ok(total)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(terms.iter().sum())
    }

    /// Minimizer of the objective over the right copy of instance `j` with all
    /// left copies fixed.
    pub fn update_right(&self, j: usize, state: &SolverState) -> Vec<f64> {
        let mut out = vec![0.0; self.k()];
        self.right_into(j, &state.y_left, &mut out);
        out
    }

    fn right_into(&self, j: usize, left: &ProbMatrix, out: &mut [f64]) {
        let SolverConfig { alpha, lambda, .. } = self.config;
        let row_sum = self.adjacency.row_sum(j);
        out.copy_from_slice(self.pi.row(j));
        if self.inputs_agree(j, self.pi.row(j), left) {
            return;
        }
        // γ_j Σ_i δ_ij y_i = α Σ_i s_ij y_i; the term vanishes for an empty row.
        // The mean is accumulated as offsets from π_j so that rounding scales
        // with the step rather than with π_j.
        let gamma = if row_sum > 0.0 { alpha * row_sum } else { 0.0 };
        let mut shift = vec![0.0; out.len()];
        if gamma > 0.0 {
            for &(i, s) in self.adjacency.neighbors(j) {
                let w = alpha * s;
                for ((d, &v), &p) in shift.iter_mut().zip(left.row(i)).zip(self.pi.row(j)) {
                    *d += w * (v - p);
                }
            }
        }
        if lambda > 0.0 {
            for ((d, &v), &p) in shift.iter_mut().zip(left.row(j)).zip(self.pi.row(j)) {
                *d += lambda * (v - p);
            }
        }
        let denom = 1.0 + gamma + lambda;
        for (o, d) in out.iter_mut().zip(&shift) {
            *o += d / denom;
        }
    }

    /// Minimizer of the objective over the left copy of instance `i` with all
    /// right copies fixed. Leaves the copy unchanged when it carries no weight.
    pub fn update_left(&self, i: usize, state: &SolverState) -> Result<Vec<f64>> {
        let grads = self.gradients(&state.y_right)?;
        let mut out = vec![0.0; self.k()];
        self.left_into(i, &state.y_left, &state.y_right, &grads, &mut out)?;
        Ok(out)
    }

    fn gradients(&self, right: &ProbMatrix) -> Result<ProbMatrix> {
        let k = self.k();
        let div = &self.config.divergence;
        let mut grads = ProbMatrix::from_raw(self.n(), k, vec![0.0; self.n() * k]);
        grads
            .as_mut_slice()
            .par_chunks_mut(k)
            .zip(right.as_slice().par_chunks(k))
            .try_for_each(|(g, r)| div.grad_phi_into(r, g))?;
        Ok(grads)
    }

    /// True when every row feeding an update of instance `i` equals `target`.
    /// The weighted mean is then `target` itself, which is returned exactly
    /// instead of going through a rounding round trip.
    fn inputs_agree(&self, i: usize, target: &[f64], rows: &ProbMatrix) -> bool {
        if self.config.alpha > 0.0
            && self.adjacency.row_sum(i) > 0.0
            && self.adjacency.neighbors(i).iter().any(|&(j, _)| rows.row(j) != target)
        {
            return false;
        }
        !(self.config.lambda > 0.0 && rows.row(i) != target)
    }

    /// `γ_i + λ`.
    fn left_weight(&self, i: usize) -> f64 {
        let row_sum = self.adjacency.row_sum(i);
        let gamma = if row_sum > 0.0 {
            self.config.alpha * row_sum
        } else {
            0.0
        };
        gamma + self.config.lambda
    }

    fn finish_left(&self, weight: f64, dual: &mut [f64], out: &mut [f64]) -> Result<()> {
        let div = &self.config.divergence;
        dual.iter_mut().for_each(|d| *d /= weight);
        div.grad_phi_inv_into(dual, out)?;
        if div.kind().is_simplex() {
            // Simplex constraint: the dual mean lands on the scaled simplex,
            // and rescaling recovers the constrained minimizer.
            normalize_row(out);
        }
        div.clamp_in_place(out)
    }

    fn left_into(
        &self,
        i: usize,
        left: &ProbMatrix,
        right: &ProbMatrix,
        grads: &ProbMatrix,
        out: &mut [f64],
    ) -> Result<()> {
        let weight = self.left_weight(i);
        if weight == 0.0 {
            out.copy_from_slice(left.row(i));
            return Ok(());
        }
        let anchor = if self.config.lambda > 0.0 {
            right.row(i)
        } else {
            right.row(self.adjacency.neighbors(i)[0].0)
        };
        if self.inputs_agree(i, anchor, right) {
            out.copy_from_slice(anchor);
            return Ok(());
        }
        let mut dual = vec![0.0; self.k()];
        if self.adjacency.row_sum(i) > 0.0 {
            for &(j, s) in self.adjacency.neighbors(i) {
                let w = self.config.alpha * s;
                for (d, &g) in dual.iter_mut().zip(grads.row(j)) {
                    *d += w * g;
                }
            }
        }
        if self.config.lambda > 0.0 {
            for (d, &g) in dual.iter_mut().zip(grads.row(i)) {
                *d += self.config.lambda * g;
            }
        }
        self.finish_left(weight, &mut dual, out)
    }

    /// All right updates against the current left copies.
    pub fn right_sweep(&self, left: &ProbMatrix) -> ProbMatrix {
        let k = self.k();
        let mut next = vec![0.0; self.n() * k];
        next.par_chunks_mut(k)
            .enumerate()
            .for_each(|(j, out)| self.right_into(j, left, out));
        ProbMatrix::from_raw(self.n(), k, next)
    }

    /// All left updates against the given right copies.
    pub fn left_sweep(&self, left: &ProbMatrix, right: &ProbMatrix) -> Result<ProbMatrix> {
        let k = self.k();
        let grads = self.gradients(right)?;
        let mut next = vec![0.0; self.n() * k];
        next.par_chunks_mut(k)
            .enumerate()
            .try_for_each(|(i, out)| self.left_into(i, left, right, &grads, out))?;
        Ok(ProbMatrix::from_raw(self.n(), k, next))
    }

    /// One full iteration: every right copy, then every left copy.
    pub fn step(&self, state: &mut SolverState) -> Result<f64> {
        let right = self.right_sweep(&state.y_left);
        let left = self.left_sweep(&state.y_left, &right)?;
        state.y_right = right;
        state.y_left = left;
        state.iteration += 1;
        let j = self.objective_j(state)?;
        state.objective_trace.push(j);
        Ok(j)
    }

    pub fn run(&self) -> Result<(Labeling, SolverState)> {
        self.run_with(|_| {})
    }

    /// Runs to convergence, calling `observe` on the initial state and after
    /// every iteration.
    pub fn run_with<F>(&self, mut observe: F) -> Result<(Labeling, SolverState)>
    where
        F: FnMut(&SolverState),
    {
        let mut state = self.initial_state()?;
        observe(&state);
        let mut converged = false;
        while state.iteration < self.config.max_iters {
            let previous = *state.objective_trace.last().expect("trace starts non-empty");
            let current = self.step(&mut state)?;
            observe(&state);
            let change = (current - previous).abs() / previous.max(1e-300);
            if change < self.config.epsilon {
                converged = true;
                break;
            }
        }
        let labeling = self.finalize(&state, converged);
        Ok((labeling, state))
    }

    /// Averages the two copies and normalizes each row.
    pub fn finalize(&self, state: &SolverState, converged: bool) -> Labeling {
        let k = self.k();
        let mut y: Vec<f64> = state
            .y_left
            .as_slice()
            .iter()
            .zip(state.y_right.as_slice())
            .map(|(l, r)| 0.5 * (l + r))
            .collect();
        let signed = self.config.divergence.kind().is_signed();
        let mut labels = Vec::with_capacity(self.n());
        for row in y.chunks_exact_mut(k) {
            if signed {
                labels.push(argmax(row));
                row.iter_mut().for_each(|v| *v = v.max(0.0));
                normalize_row(row);
            } else {
                normalize_row(row);
                labels.push(argmax(row));
            }
        }
        Labeling {
            probabilities: ProbMatrix::from_raw(self.n(), k, y),
            labels,
            iterations_used: state.iteration,
            converged,
        }
    }

    /// `max_i d(l_i, r_i)` and `Σ_i d(l_i, r_i)`.
    pub fn copy_gap(&self, state: &SolverState) -> Result<(f64, f64)> {
        let div = &self.config.divergence;
        let mut max: f64 = 0.0;
        let mut sum = 0.0;
        for i in 0..self.n() {
            let d = div.bregman(state.y_left.row(i), state.y_right.row(i))?;
            max = max.max(d);
            sum += d;
        }
        Ok((max, sum))
    }

    /// Lower bound on the coupling weight at which both copies coincide with
    /// the minimizer `y_star` of the unsplit objective, given a converged
    /// state at the configured `λ`.
    pub fn lambda_threshold(&self, state: &SolverState, y_star: &ProbMatrix) -> Result<f64> {
        let (max_gap, total_gap) = self.copy_gap(state)?;
        if max_gap <= COPIES_COINCIDE {
            return Ok(self.config.lambda);
        }
        if total_gap < 1e-15 {
            return Err(Error::DivisionDegenerate(total_gap));
        }
        let unsplit = self.objective_j0(y_star)?;
        let relaxed = self.objective_split(&state.y_left, &state.y_right, 0.0)?;
        Ok((unsplit - relaxed) / total_gap)
    }
}
