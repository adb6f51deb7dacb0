//! Mild-solution machinery for the semilinear terminal-value problem
//!
//! ```text
//! (d/dt + L) u + f(t, x, u, du/dx) = 0,   u(T) = g,
//! ```
//!
//! driven by the low-dimension Bessel semigroup: the linear Duhamel
//! representation, the fixed-point map `A`, the exponentially weighted
//! space-time norm in which `A^2` contracts, and the Picard iteration.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::exec;
use crate::mspace::{
    apply_generator, derivative, in_test_space, inner_mu, norms, C2Fn, Grid, GridFunction,
    MspaceError,
};
use crate::semigroup::{KernelParams, Semigroup, SemigroupError};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("invalid time mesh: {0}")]
    InvalidMesh(String),
    #[error("nonlinearity returned a non-finite value at (t, x) = ({t}, {x})")]
    NonFiniteNonlinearity { t: f64, x: f64 },
    #[error("test function rejected: not in the test space D")]
    NotInTestSpace,
    #[error(transparent)]
    Semigroup(#[from] SemigroupError),
    #[error(transparent)]
    Mspace(#[from] MspaceError),
}

/// Ordered times from 0 to the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeMesh {
    times: Vec<f64>,
}

impl TimeMesh {
    pub fn uniform(horizon: f64, n_steps: usize) -> Result<Self, SolverError> {
        if !(horizon > 0.0) || n_steps == 0 {
            return Err(SolverError::InvalidMesh(format!(
                "horizon {horizon}, n_steps {n_steps}"
            )));
        }
        let times = (0..=n_steps)
            .map(|k| horizon * k as f64 / n_steps as f64)
            .collect();
        Ok(Self { times })
    }

    pub fn from_times(times: Vec<f64>) -> Result<Self, SolverError> {
        if times.len() < 2 || times[0] != 0.0 {
            return Err(SolverError::InvalidMesh("need times starting at 0".into()));
        }
        if !times.windows(2).all(|w| w[1] > w[0]) {
            return Err(SolverError::InvalidMesh(
                "times must be strictly increasing".into(),
            ));
        }
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }
    pub fn len(&self) -> usize {
        self.times.len()
    }
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }
}

/// Trapezoid weights of the mesh restricted to `[t_k, T]`.
fn trapezoid_suffix(times: &[f64], vals: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut out = vec![0.0; n];
    for k in (0..n - 1).rev() {
        let h = times[k + 1] - times[k];
        out[k] = out[k + 1] + 0.5 * h * (vals[k] + vals[k + 1]);
    }
    out
}

/// Function of time and space sampled on a mesh, one grid slice per time;
/// the discrete stand-in for an element of `L^1([0,T]; H)`.
#[derive(Debug, Clone)]
pub struct SpaceTimeFunction {
    mesh: TimeMesh,
    slices: Vec<GridFunction>,
}

impl SpaceTimeFunction {
    pub fn from_slices(mesh: TimeMesh, slices: Vec<GridFunction>) -> Result<Self, SolverError> {
        if slices.len() != mesh.len() {
            return Err(SolverError::InvalidMesh(format!(
                "{} slices for {} mesh times",
                slices.len(),
                mesh.len()
            )));
        }
        for s in &slices {
            slices[0].same_grid(s)?;
        }
        Ok(Self { mesh, slices })
    }

    pub fn from_fn(
        mesh: TimeMesh,
        grid: &Arc<Grid>,
        f: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let slices = mesh
            .times()
            .iter()
            .map(|&t| GridFunction::from_fn(grid, |x| f(t, x)))
            .collect();
        Self { mesh, slices }
    }

    pub fn mesh(&self) -> &TimeMesh {
        &self.mesh
    }
    pub fn slices(&self) -> &[GridFunction] {
        &self.slices
    }
    pub fn slice(&self, k: usize) -> &GridFunction {
        &self.slices[k]
    }
    pub fn grid(&self) -> &Arc<Grid> {
        self.slices[0].grid()
    }

    pub fn difference(&self, other: &SpaceTimeFunction) -> Result<SpaceTimeFunction, SolverError> {
        if self.mesh != other.mesh {
            return Err(SolverError::InvalidMesh("mesh mismatch".into()));
        }
        let slices = self
            .slices
            .iter()
            .zip(&other.slices)
            .map(|(a, b)| {
                a.same_grid(b)?;
                let vals = a
                    .values()
                    .iter()
                    .zip(b.values())
                    .map(|(x, y)| x - y)
                    .collect();
                GridFunction::from_values(Arc::clone(a.grid()), vals)
            })
            .collect::<Result<_, _>>()?;
        Ok(SpaceTimeFunction {
            mesh: self.mesh.clone(),
            slices,
        })
    }
}

/// `sup_k ||a(t_k) - b(t_k)||_{L^2(dmu)}` over the common mesh.
pub fn sup_l2_distance(a: &SpaceTimeFunction, b: &SpaceTimeFunction) -> Result<f64, SolverError> {
    let d = a.difference(b)?;
    Ok(d.slices.iter().map(|s| norms(s).l2).fold(0.0, f64::max))
}

/// `int_0^T e^{lambda t} ||u(t)||_H dt` by trapezoid; `lambda = 0` is the
/// plain `L^1([0,T]; H)` norm.
pub fn b_lambda_norm(u: &SpaceTimeFunction, lambda: f64) -> f64 {
    let times = u.mesh.times();
    let vals: Vec<f64> = u
        .slices
        .iter()
        .zip(times)
        .map(|(s, &t)| (lambda * t).exp() * norms(s).h)
        .collect();
    times
        .windows(2)
        .zip(vals.windows(2))
        .map(|(tw, vw)| 0.5 * (tw[1] - tw[0]) * (vw[0] + vw[1]))
        .sum()
}

/// Nonlinearity `f(t, x, u, du/dx)`.
pub type Nonlinearity = dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync;

/// Terminal-value problem data: horizon, dimension, terminal datum `g`,
/// nonlinearity with its Lipschitz constant in the last two arguments.
#[derive(Clone)]
pub struct SemilinearProblem {
    horizon: f64,
    delta: f64,
    g: GridFunction,
    f: Arc<Nonlinearity>,
    lipschitz_c: f64,
}

impl SemilinearProblem {
    /// Builds the problem and spot-checks the declared Lipschitz bound on a
    /// fixed batch of random argument quadruples. The check is necessary but
    /// not sufficient; the constant is otherwise trusted as declared.
    pub fn new(
        horizon: f64,
        g: GridFunction,
        f: Arc<Nonlinearity>,
        lipschitz_c: f64,
    ) -> Result<Self, SolverError> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(SolverError::InvalidProblem(format!(
                "horizon {horizon} must be positive"
            )));
        }
        if !(lipschitz_c >= 0.0) || !lipschitz_c.is_finite() {
            return Err(SolverError::InvalidProblem(format!(
                "lipschitz constant {lipschitz_c} must be nonnegative"
            )));
        }
        let delta = g.grid().delta();
        let problem = Self {
            horizon,
            delta,
            g,
            f,
            lipschitz_c,
        };
        problem.spot_check_lipschitz()?;
        Ok(problem)
    }

    fn spot_check_lipschitz(&self) -> Result<(), SolverError> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed_11b5);
        let x_max = self.g.grid().x_max();
        for _ in 0..64 {
            let t = rng.gen_range(0.0..=self.horizon);
            let x = rng.gen_range(0.0..=x_max);
            let (y1, z1) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let (y2, z2) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let lhs = ((self.f)(t, x, y1, z1) - (self.f)(t, x, y2, z2)).abs();
            let rhs = self.lipschitz_c * ((y1 - y2).abs() + (z1 - z2).abs());
            if lhs > rhs * (1.0 + 1e-9) + 1e-12 {
                return Err(SolverError::InvalidProblem(format!(
                    "Lipschitz spot check failed: |df| = {lhs:.6} > C*(|dy|+|dz|) = {rhs:.6} \
                     at (t, x) = ({t:.3}, {x:.3})"
                )));
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn terminal(&self) -> &GridFunction {
        &self.g
    }
    pub fn lipschitz_c(&self) -> f64 {
        self.lipschitz_c
    }
    pub fn params(&self) -> KernelParams {
        KernelParams::new(self.delta).expect("validated")
    }
    pub fn f(&self, t: f64, x: f64, u: f64, v: f64) -> f64 {
        (self.f)(t, x, u, v)
    }
    /// Inhomogeneity `f0(t, x) = f(t, x, 0, 0)`.
    pub fn f0(&self, t: f64, x: f64) -> f64 {
        (self.f)(t, x, 0.0, 0.0)
    }

    /// Contraction threshold constant `C_T = sqrt(2) C (sqrt(T) + 1)`.
    pub fn c_t(&self) -> f64 {
        std::f64::consts::SQRT_2 * self.lipschitz_c * (self.horizon.sqrt() + 1.0)
    }

    /// Default weight `lambda = 2 C_T^2 T pi`, twice the contraction
    /// threshold; the factor 2 trades norm inflation for margin.
    pub fn lambda_default(&self) -> f64 {
        let ct = self.c_t();
        2.0 * ct * ct * self.horizon * std::f64::consts::PI
    }
}

fn check_compatible(
    problem: &SemilinearProblem,
    mesh: &TimeMesh,
    sg: &Semigroup,
) -> Result<(), SolverError> {
    if problem.g.grid().id() != sg.grid().id() {
        return Err(SolverError::InvalidProblem(
            "terminal datum and semigroup live on different grids".into(),
        ));
    }
    if (mesh.horizon() - problem.horizon).abs() > 1e-12 * problem.horizon.max(1.0) {
        return Err(SolverError::InvalidMesh(format!(
            "mesh horizon {} does not match problem horizon {}",
            mesh.horizon(),
            problem.horizon
        )));
    }
    Ok(())
}

/// Warm the kernel cache for all gaps the Duhamel quadrature will request,
/// so the per-slice loops below only hit cached matrices.
fn prewarm_gaps(
    sg: &Semigroup,
    params: KernelParams,
    times: &[f64],
    with_shift: bool,
) -> Result<(), SolverError> {
    let horizon = *times.last().unwrap();
    let mut gaps: Vec<u64> = Vec::new();
    for (k, &tk) in times.iter().enumerate() {
        for &ts in &times[k..] {
            let gap = ts - tk;
            if gap > 0.0 {
                gaps.push(gap.to_bits());
            }
        }
        let gap = horizon - tk;
        if gap > 0.0 {
            gaps.push(gap.to_bits());
        }
    }
    gaps.sort_unstable();
    gaps.dedup();
    for bits in gaps {
        let gap = f64::from_bits(bits);
        sg.matrix(params, gap)?;
        if with_shift {
            sg.matrix(params.shifted(), gap)?;
        }
    }
    Ok(())
}

/// Linear Duhamel representation
/// `v(t) = P_{T-t} g + int_t^T P_{s-t} l(s) ds`,
/// with the `s = t` endpoint contributing through `P_0 = id` and the time
/// integral by composite trapezoid on the mesh.
pub fn linear_solution(
    g: &GridFunction,
    l: &SpaceTimeFunction,
    params: KernelParams,
    sg: &Semigroup,
) -> Result<SpaceTimeFunction, SolverError> {
    let times = l.mesh.times();
    let horizon = *times.last().unwrap();
    prewarm_gaps(sg, params, times, false)?;
    let nt = times.len();
    let slices: Vec<Result<GridFunction, SolverError>> = exec::map_indexed(sg.exec(), nt, |k| {
        let tk = times[k];
        let mut acc = sg.apply(params, horizon - tk, g)?;
        let mut vals = acc.values().to_vec();
        for j in k..nt {
            let w = if nt - k == 1 {
                0.0 // degenerate interval [T, T]
            } else if j == k {
                0.5 * (times[k + 1] - times[k])
            } else if j == nt - 1 {
                0.5 * (times[j] - times[j - 1])
            } else {
                0.5 * (times[j + 1] - times[j - 1])
            };
            if w == 0.0 {
                continue;
            }
            let term = sg.apply(params, times[j] - tk, l.slice(j))?;
            for (v, s) in vals.iter_mut().zip(term.values()) {
                *v += w * s;
            }
        }
        acc = GridFunction::from_values(Arc::clone(g.grid()), vals)?;
        Ok(acc)
    });
    let slices: Vec<GridFunction> = slices.into_iter().collect::<Result<_, _>>()?;
    Ok(SpaceTimeFunction {
        mesh: l.mesh.clone(),
        slices,
    })
}

/// Evaluates the nonlinearity field `l(s, x) = f(s, x, u(s,x), u'(s,x))`
/// slice by slice, with the spatial derivative from the discrete
/// three-point stencil. Non-finite values abort with the offending `(s, x)`.
fn nonlinearity_field(
    problem: &SemilinearProblem,
    u: &SpaceTimeFunction,
) -> Result<SpaceTimeFunction, SolverError> {
    let times = u.mesh.times();
    let grid = u.grid();
    let mut slices = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let du = derivative(u.slice(k));
        let mut vals = Vec::with_capacity(grid.len());
        for (j, &x) in grid.nodes().iter().enumerate() {
            let v = problem.f(t, x, u.slice(k).values()[j], du.values()[j]);
            if !v.is_finite() {
                return Err(SolverError::NonFiniteNonlinearity { t, x });
            }
            vals.push(v);
        }
        slices.push(GridFunction::from_values(Arc::clone(grid), vals)?);
    }
    SpaceTimeFunction::from_slices(u.mesh.clone(), slices)
}

/// One application of the fixed-point map
/// `A u (t) = P_{T-t} g + int_t^T P_{s-t} f(s, ., u(s), u'(s)) ds`.
pub fn apply_a(
    problem: &SemilinearProblem,
    u: &SpaceTimeFunction,
    sg: &Semigroup,
) -> Result<SpaceTimeFunction, SolverError> {
    check_compatible(problem, &u.mesh, sg)?;
    let l = nonlinearity_field(problem, u)?;
    linear_solution(&problem.g, &l, problem.params(), sg)
}

/// Convergence report of one Picard run.
#[derive(Debug, Clone, Serialize)]
pub struct SolverReport {
    pub iterations: usize,
    /// `||u_{k+1} - u_k||_{B,lambda}` per iteration.
    pub residual_history: Vec<f64>,
    pub lambda: f64,
    /// Empirical two-step ratio `r_k / r_{k-2}`, the quantity the squared
    /// map contracts; taken from the last iterations.
    pub contraction_estimate: f64,
    /// Empirical one-step ratio `r_k / r_{k-1}`.
    pub contraction_one_step: f64,
    /// `sup_t ||u - A u||_{L^2(dmu)}` of the returned iterate.
    pub final_mild_residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Overrides the default weight `2 C_T^2 T pi`.
    pub lambda: Option<f64>,
}

/// Picard iteration `u_{k+1} = A u_k` started from `u_0(t) = P_{T-t} g`.
///
/// Stopping requires both
/// * `||u_{k+1} - u_k||_{B,lambda} <= tol * s(lambda)` with the scale
///   `s(lambda) = (e^{lambda T} - 1)/(lambda T)` (the weighted norm of a
///   unit-size function, so the tolerance means the same thing for every
///   `lambda`), and
/// * `sup_t ||u_{k+1}(t) - u_k(t)||_{L^2(dmu)} <= 10 tol`, which is exactly
///   the mild residual of `u_k`.
///
/// The reported `final_mild_residual` is recomputed for the returned iterate
/// with one extra application of `A`; success requires it below `10 tol` as
/// well. Non-convergence returns the report with `converged = false`, never
/// a silent partial answer.
pub fn solve(
    problem: &SemilinearProblem,
    mesh: &TimeMesh,
    sg: &Semigroup,
    tol: f64,
    max_iter: usize,
) -> Result<(SpaceTimeFunction, SolverReport), SolverError> {
    solve_with(
        problem,
        mesh,
        sg,
        SolveOptions {
            tol,
            max_iter,
            lambda: None,
        },
        None,
    )
}

/// `solve` with explicit options and an optional initial guess.
pub fn solve_with(
    problem: &SemilinearProblem,
    mesh: &TimeMesh,
    sg: &Semigroup,
    opts: SolveOptions,
    init: Option<&SpaceTimeFunction>,
) -> Result<(SpaceTimeFunction, SolverReport), SolverError> {
    if !(opts.tol > 0.0) {
        return Err(SolverError::InvalidProblem(format!(
            "tol = {} must be positive",
            opts.tol
        )));
    }
    check_compatible(problem, mesh, sg)?;
    let params = problem.params();
    let lambda = opts.lambda.unwrap_or_else(|| problem.lambda_default());
    let horizon = problem.horizon;
    let scale = if lambda > 0.0 {
        ((lambda * horizon).exp() - 1.0) / (lambda * horizon)
    } else {
        1.0
    };
    let mild_tol = 10.0 * opts.tol;

    let mut u = match init {
        Some(u0) => {
            check_compatible(problem, u0.mesh(), sg)?;
            u0.clone()
        }
        None => {
            let zero_l = SpaceTimeFunction::from_fn(mesh.clone(), sg.grid(), |_, _| 0.0);
            linear_solution(&problem.g, &zero_l, params, sg)?
        }
    };

    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        let next = apply_a(problem, &u, sg)?;
        let diff = next.difference(&u)?;
        let r_lambda = b_lambda_norm(&diff, lambda);
        let sup = diff.slices.iter().map(|s| norms(s).l2).fold(0.0, f64::max);
        history.push(r_lambda);
        u = next;
        iterations += 1;
        if r_lambda <= opts.tol * scale && sup <= mild_tol {
            converged = true;
            break;
        }
    }

    let check = apply_a(problem, &u, sg)?;
    let final_mild_residual = sup_l2_distance(&check, &u)?;
    let n = history.len();
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    let contraction_one_step = if n >= 2 {
        ratio(history[n - 1], history[n - 2])
    } else {
        0.0
    };
    let contraction_estimate = if n >= 3 {
        ratio(history[n - 1], history[n - 3])
    } else {
        contraction_one_step * contraction_one_step
    };
    let report = SolverReport {
        iterations,
        residual_history: history,
        lambda,
        contraction_estimate,
        contraction_one_step,
        final_mild_residual,
        converged: converged && final_mild_residual <= mild_tol,
    };
    Ok((u, report))
}

/// Defect of the duality identity
/// `<u(t), phi> = <g, phi> + int_t^T <u(s), L phi> ds + int_t^T <f(...), phi> ds`
/// for each test function, maximized over mesh times. Test functions must
/// pass the membership test for `D`.
pub fn weak_residual(
    u: &SpaceTimeFunction,
    problem: &SemilinearProblem,
    test_fns: &[C2Fn],
) -> Result<Vec<f64>, SolverError> {
    let grid = u.grid();
    if problem.g.grid().id() != grid.id() {
        return Err(SolverError::InvalidProblem(
            "solution and problem grids differ".into(),
        ));
    }
    let times = u.mesh.times();
    let delta = problem.delta;
    let field = nonlinearity_field(problem, u)?;

    let mut out = Vec::with_capacity(test_fns.len());
    for phi in test_fns {
        if !in_test_space(phi, grid.x_max(), 1e-8) {
            return Err(SolverError::NotInTestSpace);
        }
        let phi_grid = phi.sample(grid);
        let l_phi = GridFunction::from_fn(grid, |x| apply_generator(phi, delta, x));
        let g_phi = inner_mu(&problem.g, &phi_grid)?;

        let mut u_lphi = Vec::with_capacity(times.len());
        let mut f_phi = Vec::with_capacity(times.len());
        for k in 0..times.len() {
            u_lphi.push(inner_mu(u.slice(k), &l_phi)?);
            f_phi.push(inner_mu(field.slice(k), &phi_grid)?);
        }
        let int_u = trapezoid_suffix(times, &u_lphi);
        let int_f = trapezoid_suffix(times, &f_phi);

        let mut worst: f64 = 0.0;
        for k in 0..times.len() {
            let lhs = inner_mu(u.slice(k), &phi_grid)?;
            worst = worst.max((lhs - g_phi - int_u[k] - int_f[k]).abs());
        }
        out.push(worst);
    }
    Ok(out)
}

/// Midpoint-sampled `int_t^T ||P_{s-t} l(s)||_H ds`: the integrand has an
/// integrable `1/sqrt(s-t)` blow-up in the `H`-norm, so the sampling never
/// touches `s = t`. Diagnostic companion to the trapezoid used for the
/// `L^2`-valued integral itself.
pub fn duhamel_h_norm_midpoint(
    l: &SpaceTimeFunction,
    params: KernelParams,
    sg: &Semigroup,
    t_index: usize,
) -> Result<f64, SolverError> {
    let times = l.mesh.times();
    let tk = times[t_index];
    let mut acc = 0.0;
    for j in t_index..times.len() - 1 {
        let h = times[j + 1] - times[j];
        let mid = 0.5 * (times[j] + times[j + 1]);
        // l at the midpoint by linear interpolation of the two slices
        let vals: Vec<f64> = l
            .slice(j)
            .values()
            .iter()
            .zip(l.slice(j + 1).values())
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        let lmid = GridFunction::from_values(Arc::clone(l.grid()), vals)?;
        let pl = sg.apply(params, mid - tk, &lmid)?;
        acc += h * norms(&pl).h;
    }
    Ok(acc)
}
