//! Numerical checks of the solver's convergence behavior.
//!
//! Analytic Hessian blocks exist only for KL and generalized I-divergence;
//! rate and descent monitors work for every divergence.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::divergences::DivergenceKind;
use crate::ensemble::ProbMatrix;
use crate::error::{Error, Result};
use crate::solver::{Solver, SolverState};

/// Largest assembled Hessian the dense eigensolve is meant for.
pub const MAX_DENSE_DIMENSION: usize = 200;

/// Distances at or below this (times `max(1, ‖z*‖)`) are treated as zero
/// when forming rate ratios.
pub const RATE_NOISE_FLOOR: f64 = 1e-9;

pub const DEFAULT_BURN_IN: usize = 5;

/// Extra iterations spent refining the reference point in [`diagnose`].
pub const REFERENCE_EXTRA_ITERS: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CopyId {
    pub side: Side,
    pub index: usize,
}

impl CopyId {
    pub fn left(index: usize) -> Self {
        CopyId { side: Side::Left, index }
    }

    pub fn right(index: usize) -> Self {
        CopyId { side: Side::Right, index }
    }

    /// Position of this copy in the concatenated (left then right) vector.
    fn offset(self, n: usize, k: usize) -> usize {
        match self.side {
            Side::Left => self.index * k,
            Side::Right => (n + self.index) * k,
        }
    }
}

/// Nonzero blocks of the objective's Hessian. Every block is diagonal, so only
/// its diagonal is stored; absent pairs are zero blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianBlocks {
    pub n: usize,
    pub k: usize,
    pub blocks: BTreeMap<(CopyId, CopyId), Vec<f64>>,
}

impl HessianBlocks {
    pub fn block(&self, a: CopyId, b: CopyId) -> DMatrix<f64> {
        match self.blocks.get(&(a, b)) {
            Some(diag) => DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag)),
            None => DMatrix::zeros(self.k, self.k),
        }
    }

    pub fn dimension(&self) -> usize {
        2 * self.n * self.k
    }

    /// Dense matrix over the concatenated (left then right) copies.
    pub fn assemble(&self) -> DMatrix<f64> {
        let dim = self.dimension();
        let mut h = DMatrix::zeros(dim, dim);
        for (&(a, b), diag) in &self.blocks {
            let (ra, cb) = (a.offset(self.n, self.k), b.offset(self.n, self.k));
            for (l, &v) in diag.iter().enumerate() {
                h[(ra + l, cb + l)] += v;
            }
        }
        h
    }

    /// `zᵀHz` computed blockwise.
    pub fn quadratic_form(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.dimension() {
            return Err(Error::Shape(format!(
                "vector of length {} for a Hessian of dimension {}",
                z.len(),
                self.dimension()
            )));
        }
        let mut total = 0.0;
        for (&(a, b), diag) in &self.blocks {
            let (ra, cb) = (a.offset(self.n, self.k), b.offset(self.n, self.k));
            for (l, &v) in diag.iter().enumerate() {
                total += z[ra + l] * v * z[cb + l];
            }
        }
        Ok(total)
    }
}

/// `1` for generalized I-divergence, `1/ln 2` for base-2 KL.
fn log_base_scale(kind: DivergenceKind) -> Result<f64> {
    match kind {
        DivergenceKind::GeneralizedI => Ok(1.0),
        DivergenceKind::KLDivergence => Ok(std::f64::consts::LOG2_E),
        other => Err(Error::UnsupportedDivergence(other)),
    }
}

/// Expected value of `zᵀHz` at `z` equal to the evaluation point: the
/// coupling terms are 1-homogeneous and contribute nothing, leaving `Σπ`
/// times the log-base scale.
pub fn quadratic_form_expected(solver: &Solver) -> Result<f64> {
    let c = log_base_scale(solver.config().divergence.kind())?;
    Ok(c * solver.pi().as_slice().iter().sum::<f64>())
}

fn check_interior(solver: &Solver, state: &SolverState) -> Result<()> {
    let kind = solver.config().divergence.kind();
    for m in [&state.y_left, &state.y_right] {
        if m.n() != solver.n() || m.k() != solver.k() {
            return Err(Error::Shape(format!(
                "expected {}×{} copies, got {}×{}",
                solver.n(),
                solver.k(),
                m.n(),
                m.k()
            )));
        }
        if let Some((index, &value)) = m.as_slice().iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::Domain { kind, index, value });
        }
    }
    Ok(())
}

/// Analytic Hessian of the split objective at `state`.
pub fn hessian_blocks(solver: &Solver, state: &SolverState) -> Result<HessianBlocks> {
    let cfg = solver.config();
    let c = log_base_scale(cfg.divergence.kind())?;
    check_interior(solver, state)?;
    let (n, k) = (solver.n(), solver.k());
    let (alpha, lambda) = (cfg.alpha, cfg.lambda);
    let adj = solver.adjacency();
    let mut blocks = BTreeMap::new();

    for i in 0..n {
        let weight = alpha * adj.row_sum(i) + lambda;
        let li = state.y_left.row(i);
        if weight != 0.0 {
            blocks.insert(
                (CopyId::left(i), CopyId::left(i)),
                li.iter().map(|&y| c * weight / y).collect(),
            );
        }

        let ri = state.y_right.row(i);
        let mut mass = solver.pi().row(i).to_vec();
        for &(j, s) in adj.neighbors(i) {
            for (m, &y) in mass.iter_mut().zip(state.y_left.row(j)) {
                *m += alpha * s * y;
            }
        }
        for (m, &y) in mass.iter_mut().zip(li) {
            *m += lambda * y;
        }
        blocks.insert(
            (CopyId::right(i), CopyId::right(i)),
            mass.iter().zip(ri).map(|(&m, &y)| c * m / (y * y)).collect(),
        );
    }

    let mut cross = |a: CopyId, b: CopyId, w: f64| {
        let r = state.y_right.row(b.index);
        let diag: Vec<f64> = r.iter().map(|&y| -c * w / y).collect();
        blocks.insert((b, a), diag.clone());
        blocks.insert((a, b), diag);
    };
    for i in 0..n {
        if alpha != 0.0 {
            for &(j, s) in adj.neighbors(i) {
                cross(CopyId::left(i), CopyId::right(j), alpha * s);
            }
        }
        if lambda != 0.0 {
            cross(CopyId::left(i), CopyId::right(i), lambda);
        }
    }
    Ok(HessianBlocks { n, k, blocks })
}

/// Positive-definiteness verdict and smallest eigenvalue of the assembled
/// Hessian. Intended for dimensions up to [`MAX_DENSE_DIMENSION`].
pub fn check_positive_definite(h: &HessianBlocks) -> (bool, f64) {
    let eig = SymmetricEigen::new(h.assemble());
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    (min > 0.0, min)
}

/// Gradient of the split objective over the concatenated copies, using
/// `∇_p d(p,q) = φ'(p) − φ'(q)` and `∇_q d(p,q) = φ''(q)(q − p)`.
/// Simplex constraints are ignored.
pub fn objective_gradient(solver: &Solver, left: &ProbMatrix, right: &ProbMatrix) -> Vec<f64> {
    let cfg = solver.config();
    let div = &cfg.divergence;
    let (n, k) = (solver.n(), solver.k());
    let (alpha, lambda) = (cfg.alpha, cfg.lambda);
    let adj = solver.adjacency();
    let mut g = vec![0.0; 2 * n * k];
    let (gl, gr) = g.split_at_mut(n * k);

    // Pairwise terms s_ij d(l_i, r_j) with weight w.
    let pair = |i: usize, j: usize, w: f64, gl: &mut [f64], gr: &mut [f64]| {
        for l in 0..k {
            let (p, q) = (left.row(i)[l], right.row(j)[l]);
            gl[i * k + l] += w * (div.grad_scalar(p) - div.grad_scalar(q));
            gr[j * k + l] += w * div.hess_scalar(q) * (q - p);
        }
    };
    for i in 0..n {
        if alpha != 0.0 {
            for &(j, s) in adj.neighbors(i) {
                pair(i, j, alpha * s, gl, gr);
            }
        }
        if lambda != 0.0 {
            pair(i, i, lambda, gl, gr);
        }
        for l in 0..k {
            let (p, q) = (solver.pi().row(i)[l], right.row(i)[l]);
            gr[i * k + l] += div.hess_scalar(q) * (q - p);
        }
    }
    g
}

/// Distance ratios `‖z_{t+1} − z*‖ / ‖z_t − z*‖` along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub ratios: Vec<f64>,
    pub rho_estimate: f64,
    pub qlinear: bool,
    pub burn_in: usize,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Ratios are formed while both distances exceed the noise floor; once the
/// trajectory reaches the reference within rounding the sequence ends.
pub fn qlinear_ratios(snapshots: &[SolverState], z_star: &[f64], burn_in: usize) -> Result<RateReport> {
    let scale = z_star.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    let floor = RATE_NOISE_FLOOR * scale;
    let dists = snapshots
        .iter()
        .map(|s| {
            let z = s.concatenated();
            if z.len() != z_star.len() {
                return Err(Error::Shape(format!(
                    "snapshot of length {} against a reference of length {}",
                    z.len(),
                    z_star.len()
                )));
            }
            Ok(distance(&z, z_star))
        })
        .collect::<Result<Vec<f64>>>()?;

    if dists.first().is_some_and(|&d| d <= floor) {
        return Ok(RateReport {
            ratios: Vec::new(),
            rho_estimate: 0.0,
            qlinear: true,
            burn_in,
        });
    }
    if snapshots.len() < burn_in + 3 {
        return Err(Error::InsufficientTrace {
            needed: burn_in + 3,
            got: snapshots.len(),
        });
    }
    let ratios: Vec<f64> = dists
        .windows(2)
        .take_while(|w| w[0] > floor && w[1] > floor)
        .map(|w| w[1] / w[0])
        .collect();
    let rho_estimate = ratios.iter().skip(burn_in).copied().fold(0.0, f64::max);
    Ok(RateReport {
        qlinear: rho_estimate < 1.0,
        ratios,
        rho_estimate,
        burn_in,
    })
}

/// `Σ_i (λ + α Σ_j s_ij) d(a_i, b_i)`.
pub fn delta_j(solver: &Solver, left_a: &ProbMatrix, left_b: &ProbMatrix) -> Result<f64> {
    let cfg = solver.config();
    for m in [left_a, left_b] {
        if m.n() != solver.n() || m.k() != solver.k() {
            return Err(Error::Shape(format!(
                "expected {}×{} copies, got {}×{}",
                solver.n(),
                solver.k(),
                m.n(),
                m.k()
            )));
        }
    }
    let mut total = 0.0;
    for i in 0..solver.n() {
        let w = cfg.lambda + cfg.alpha * solver.adjacency().row_sum(i);
        if w != 0.0 {
            total += w * cfg.divergence.bregman(left_a.row(i), left_b.row(i))?;
        }
    }
    Ok(total)
}

/// `δ_J(y^{(l,∞)}, y^{(l,t)})` along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaJMonitor {
    pub reference_left: ProbMatrix,
    pub values: Vec<f64>,
}

impl DeltaJMonitor {
    pub fn from_snapshots(solver: &Solver, snapshots: &[SolverState], reference_left: &ProbMatrix) -> Result<Self> {
        let values = snapshots
            .iter()
            .map(|s| delta_j(solver, reference_left, &s.y_left))
            .collect::<Result<Vec<f64>>>()?;
        Ok(DeltaJMonitor {
            reference_left: reference_left.clone(),
            values,
        })
    }

    /// True when no value rises above its predecessor by more than `slack`.
    pub fn is_non_increasing(&self, slack: f64) -> bool {
        self.values.windows(2).all(|w| w[1] <= w[0] + slack)
    }
}

/// True when no objective value exceeds its predecessor by more than
/// `rel_slack` times the predecessor's magnitude.
pub fn is_monotone(trace: &[f64], rel_slack: f64) -> bool {
    trace
        .windows(2)
        .all(|w| w[1] <= w[0] + rel_slack * w[0].abs().max(f64::MIN_POSITIVE))
}

/// Continues iterating from `state` until the copies stop changing, the
/// objective stops decreasing, or `extra_iters` steps have run.
pub fn refine_reference(solver: &Solver, state: &SolverState, extra_iters: usize) -> Result<SolverState> {
    let mut current = state.clone();
    for _ in 0..extra_iters {
        let before = current.objective_trace.last().copied().unwrap_or(f64::INFINITY);
        let mut next = current.clone();
        let after = solver.step(&mut next)?;
        let stalled = next.y_left == current.y_left && next.y_right == current.y_right;
        if after > before || stalled {
            if after <= before {
                current = next;
            }
            break;
        }
        current = next;
    }
    Ok(current)
}

#[derive(Debug, Clone, PartialEq)]
pub enum HessianSection {
    Checked {
        pd: bool,
        min_eigenvalue: f64,
        quadratic_form: f64,
        quadratic_form_expected: f64,
    },
    Skipped(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub divergence: DivergenceKind,
    pub alpha: f64,
    pub lambda: f64,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub hessian: HessianSection,
    pub rate: RateReport,
    pub monotone: bool,
    pub delta_j: DeltaJMonitor,
    pub delta_j_monotone: bool,
    /// Objective trace of the run, one value per snapshot.
    pub objective_trace: Vec<f64>,
}

/// Slack allowed on the δ_J monitor.
pub const DELTA_J_SLACK: f64 = 1e-10;
/// Relative slack allowed on the objective trace.
pub const DESCENT_SLACK: f64 = 1e-12;

/// Runs the solver with snapshots and collects every diagnostic.
pub fn diagnose(solver: &Solver, burn_in: usize) -> Result<DiagnosticsReport> {
    let mut snapshots = Vec::new();
    let (labeling, state) = solver.run_with(|s| snapshots.push(s.clone()))?;
    let reference = refine_reference(solver, &state, REFERENCE_EXTRA_ITERS)?;
    let z_star = reference.concatenated();

    let rate = match qlinear_ratios(&snapshots, &z_star, burn_in) {
        Ok(r) => r,
        // Too short to say anything past the burn-in: report what exists.
        Err(Error::InsufficientTrace { .. }) => {
            let partial = qlinear_ratios(&snapshots, &z_star, 0)?;
            RateReport {
                rho_estimate: 0.0,
                qlinear: true,
                burn_in,
                ..partial
            }
        }
        Err(e) => return Err(e),
    };

    let kind = solver.config().divergence.kind();
    let hessian = if log_base_scale(kind).is_err() {
        HessianSection::Skipped("unsupported")
    } else if 2 * solver.n() * solver.k() > MAX_DENSE_DIMENSION {
        HessianSection::Skipped("too-large")
    } else {
        let h = hessian_blocks(solver, &state)?;
        let (pd, min_eigenvalue) = check_positive_definite(&h);
        HessianSection::Checked {
            pd,
            min_eigenvalue,
            quadratic_form: h.quadratic_form(&state.concatenated())?,
            quadratic_form_expected: quadratic_form_expected(solver)?,
        }
    };

    let delta = DeltaJMonitor::from_snapshots(solver, &snapshots, &reference.y_left)?;
    Ok(DiagnosticsReport {
        divergence: kind,
        alpha: solver.config().alpha,
        lambda: solver.config().lambda,
        converged: labeling.converged,
        iterations: labeling.iterations_used,
        objective: *state.objective_trace.last().expect("trace starts non-empty"),
        hessian,
        monotone: is_monotone(&state.objective_trace, DESCENT_SLACK),
        delta_j_monotone: delta.is_non_increasing(DELTA_J_SLACK),
        delta_j: delta,
        rate,
        objective_trace: state.objective_trace,
    })
}

impl DiagnosticsReport {
    /// Sectioned `key=value` text.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let w = &mut out;
        let _ = writeln!(w, "[run]");
        let _ = writeln!(w, "divergence={}", self.divergence);
        let _ = writeln!(w, "alpha={}", self.alpha);
        let _ = writeln!(w, "lambda={}", self.lambda);
        let _ = writeln!(w, "converged={}", self.converged);
        let _ = writeln!(w, "iters={}", self.iterations);
        let _ = writeln!(w, "J={}", self.objective);
        let _ = writeln!(w, "\n[hessian]");
        match &self.hessian {
            HessianSection::Checked {
                pd,
                min_eigenvalue,
                quadratic_form,
                quadratic_form_expected,
            } => {
                let _ = writeln!(w, "pd={pd}");
                let _ = writeln!(w, "min_eigenvalue={min_eigenvalue}");
                let _ = writeln!(w, "quadratic_form={quadratic_form}");
                let _ = writeln!(w, "quadratic_form_expected={quadratic_form_expected}");
                let _ = writeln!(
                    w,
                    "quadratic_form_residual={}",
                    (quadratic_form - quadratic_form_expected).abs()
                );
            }
            HessianSection::Skipped(reason) => {
                let _ = writeln!(w, "skipped={reason}");
            }
        }
        let _ = writeln!(w, "\n[rate]");
        let _ = writeln!(w, "burn_in={}", self.rate.burn_in);
        let _ = writeln!(w, "ratios={}", self.rate.ratios.len());
        let _ = writeln!(w, "rho_estimate={}", self.rate.rho_estimate);
        let _ = writeln!(w, "qlinear={}", self.rate.qlinear);
        let _ = writeln!(w, "\n[descent]");
        let _ = writeln!(w, "monotone={}", self.monotone);
        let _ = writeln!(w, "delta_j_monotone={}", self.delta_j_monotone);
        out
    }

    /// CSV rows `iteration,J,delta_J,ratio`; the ratio column is empty where
    /// undefined.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,J,delta_J,ratio\n");
        for (t, j) in self.objective_trace.iter().enumerate() {
            let delta = self.delta_j.values.get(t).map(|v| v.to_string()).unwrap_or_default();
            let ratio = t
                .checked_sub(1)
                .and_then(|p| self.rate.ratios.get(p))
                .map(|v| v.to_string())
                .unwrap_or_default();
            let _ = writeln!(out, "{t},{j},{delta},{ratio}");
        }
        out
    }
}
