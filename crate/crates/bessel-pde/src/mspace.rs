//! Discrete model of the weighted spaces `L^2(dmu)` and `H`, where
//! `mu(dx) = x^{delta-1} dx` on the half line: truncated grids carrying
//! mu-quadrature weights, grid functions, the Sobolev-type norms, a discrete
//! derivative, the degenerate second-order generator on smooth functions, and
//! the space `D` of C^2 test functions with compact support and zero
//! derivative at the origin.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MspaceError {
    #[error("invalid grid parameter: {0}")]
    InvalidGrid(String),
    #[error("grid mismatch: operands live on different grids (ids {0} and {1})")]
    GridMismatch(u64, u64),
    #[error("non-finite value at node index {0}")]
    NonFinite(usize),
    #[error("serialized data does not match the target grid: {0}")]
    IncompatibleData(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

/// Node placement on `[0, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridScheme {
    /// `x_i = x_max (i/(n-1))^{1/delta}`: clusters nodes at the origin so the
    /// integrable singularity of `x^{delta-1}` is resolved.
    Graded,
    Uniform,
}

static NEXT_GRID_ID: AtomicU64 = AtomicU64::new(1);

/// Truncated discretization of the half line carrying quadrature weights for
/// `mu(dx) = x^{delta-1} dx` (and plain Lebesgue weights alongside).
///
/// Immutable after construction; shared through `Arc`.
#[derive(Debug)]
pub struct Grid {
    delta: f64,
    x_max: f64,
    scheme: GridScheme,
    nodes: Vec<f64>,
    mu_weights: Vec<f64>,
    leb_weights: Vec<f64>,
    id: u64,
}

/// Pick a domain truncation so the Gaussian kernel factor at the far end is
/// below 1e-12: `x_max = sqrt(2 t_max ln 1e12) + support_radius`, where
/// `support_radius` covers both the data support and the largest evaluation
/// point of interest.
pub fn truncation_x_max(t_max: f64, support_radius: f64) -> f64 {
    (2.0 * t_max * 1e12_f64.ln()).sqrt() + support_radius
}

/// Build a grid with weights exact for quadratic polynomials against
/// `x^{delta-1}` on each cell pair (quadratic product rule). Whenever a
/// quadratic weight would come out negative, which happens on strongly graded
/// pairs next to the origin, that pair falls back to per-cell linear product
/// weights; every weight stays nonnegative.
pub fn make_grid(
    delta: f64,
    x_max: f64,
    n: usize,
    scheme: GridScheme,
) -> Result<Arc<Grid>, MspaceError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(MspaceError::InvalidGrid(format!(
            "delta = {delta} outside (0, 1)"
        )));
    }
    if !(x_max > 0.0) || !x_max.is_finite() {
        return Err(MspaceError::InvalidGrid(format!("x_max = {x_max} <= 0")));
    }
    if n < 16 {
        return Err(MspaceError::InvalidGrid(format!("n = {n} < 16")));
    }
    let nodes: Vec<f64> = (0..n)
        .map(|i| {
            let s = i as f64 / (n - 1) as f64;
            match scheme {
                GridScheme::Graded => x_max * s.powf(1.0 / delta),
                GridScheme::Uniform => x_max * s,
            }
        })
        .collect();
    let mu_weights = product_weights(&nodes, delta - 1.0);
    let leb_weights = product_weights(&nodes, 0.0);

    let mass: f64 = mu_weights.iter().sum();
    let exact = x_max.powf(delta) / delta;
    if ((mass - exact) / exact).abs() > 1e-10 {
        return Err(MspaceError::InvalidGrid(format!(
            "mu-mass defect {:.3e} exceeds 1e-10",
            ((mass - exact) / exact).abs()
        )));
    }

    Ok(Arc::new(Grid {
        delta,
        x_max,
        scheme,
        nodes,
        mu_weights,
        leb_weights,
        id: NEXT_GRID_ID.fetch_add(1, Ordering::Relaxed),
    }))
}

/// Moments `int_a^b x^k x^{w_exp} dx`, k = 0..2. The difference of powers is
/// taken through `exp_m1`/`ln_1p` so narrow cells far from the origin do not
/// cancel catastrophically.
fn cell_moments(a: f64, b: f64, w_exp: f64) -> [f64; 3] {
    let mut m = [0.0; 3];
    for (k, slot) in m.iter_mut().enumerate() {
        let p = k as f64 + w_exp + 1.0;
        *slot = if a == 0.0 {
            b.powf(p) / p
        } else {
            a.powf(p) * (p * ((b - a) / a).ln_1p()).exp_m1() / p
        };
    }
    m
}

/// Weights of the quadratic Lagrange interpolant on `[x0, x2]` integrated
/// against `x^{w_exp}`.
fn pair_weights(x0: f64, x1: f64, x2: f64, w_exp: f64) -> [f64; 3] {
    let m = cell_moments(x0, x2, w_exp);
    let xs = [x0, x1, x2];
    let mut w = [0.0; 3];
    for j in 0..3 {
        let (o0, o1) = match j {
            0 => (x1, x2),
            1 => (x0, x2),
            _ => (x0, x1),
        };
        let denom = (xs[j] - o0) * (xs[j] - o1);
        w[j] = (m[2] - (o0 + o1) * m[1] + o0 * o1 * m[0]) / denom;
    }
    w
}

/// Weights of the linear interpolant on `[a, b]` against `x^{w_exp}`; always
/// nonnegative.
fn lin_weights(a: f64, b: f64, w_exp: f64) -> [f64; 2] {
    let m = cell_moments(a, b, w_exp);
    [(b * m[0] - m[1]) / (b - a), (m[1] - a * m[0]) / (b - a)]
}

fn product_weights(nodes: &[f64], w_exp: f64) -> Vec<f64> {
    let n = nodes.len();
    let mut w = vec![0.0; n];
    let ncell = n - 1;
    let mut i = 0;
    while i < ncell {
        if i + 1 < ncell {
            let pw = pair_weights(nodes[i], nodes[i + 1], nodes[i + 2], w_exp);
            if pw.iter().all(|&v| v >= 0.0) {
                w[i] += pw[0];
                w[i + 1] += pw[1];
                w[i + 2] += pw[2];
                i += 2;
                continue;
            }
        }
        let lw = lin_weights(nodes[i], nodes[i + 1], w_exp);
        w[i] += lw[0];
        w[i + 1] += lw[1];
        i += 1;
    }
    w
}

impl Grid {
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn scheme(&self) -> GridScheme {
        self.scheme
    }
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
    pub fn node(&self, i: usize) -> f64 {
        self.nodes[i]
    }
    pub fn mu_weights(&self) -> &[f64] {
        &self.mu_weights
    }
    pub fn leb_weights(&self) -> &[f64] {
        &self.leb_weights
    }
    /// Total mu-mass of the truncated domain, `~ x_max^delta / delta`.
    pub fn mu_mass(&self) -> f64 {
        self.mu_weights.iter().sum()
    }
    pub fn id(&self) -> u64 {
        self.id
    }
}

/// Real-valued function sampled on a grid; the concrete stand-in for an
/// element of `L^2(dmu)`.
#[derive(Debug, Clone)]
pub struct GridFunction {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GridFunctionJson {
    delta: f64,
    x_max: f64,
    n: usize,
    scheme: GridScheme,
    nodes: Vec<f64>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn from_values(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self, MspaceError> {
        if values.len() != grid.len() {
            return Err(MspaceError::IncompatibleData(format!(
                "{} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(MspaceError::NonFinite(i));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().iter().map(|&x| f(x)).collect();
        Self {
            grid: Arc::clone(grid),
            values,
        }
    }

    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Self {
            grid: Arc::clone(grid),
            values: vec![0.0; grid.len()],
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn same_grid(&self, other: &GridFunction) -> Result<(), MspaceError> {
        if self.grid.id() != other.grid.id() {
            return Err(MspaceError::GridMismatch(self.grid.id(), other.grid.id()));
        }
        Ok(())
    }

    /// Two-column CSV (`node,value`); floats print in shortest round-trip
    /// form, so reading the file back reproduces the exact bits.
    pub fn write_csv(&self, path: &Path) -> Result<(), MspaceError> {
        let mut out = String::from("node,value\n");
        for (x, v) in self.grid.nodes().iter().zip(&self.values) {
            out.push_str(&format!("{x},{v}\n"));
        }
        fs::File::create(path)?.write_all(out.as_bytes())?;
        Ok(())
    }

    pub fn read_csv(grid: Arc<Grid>, path: &Path) -> Result<Self, MspaceError> {
        let text = fs::read_to_string(path)?;
        let mut values = Vec::with_capacity(grid.len());
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 && line.starts_with("node") {
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split(',');
            let node: f64 = cols
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| MspaceError::Parse(format!("line {}: bad node", lineno + 1)))?;
            let value: f64 = cols
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| MspaceError::Parse(format!("line {}: bad value", lineno + 1)))?;
            let i = values.len();
            if i >= grid.len() || grid.node(i).to_bits() != node.to_bits() {
                return Err(MspaceError::IncompatibleData(format!(
                    "node {node} at row {i} does not match the grid"
                )));
            }
            values.push(value);
        }
        Self::from_values(grid, values)
    }

    /// JSON with enough grid metadata to rebuild the grid on load.
    pub fn write_json(&self, path: &Path) -> Result<(), MspaceError> {
        let doc = GridFunctionJson {
            delta: self.grid.delta(),
            x_max: self.grid.x_max(),
            n: self.grid.len(),
            scheme: self.grid.scheme(),
            nodes: self.grid.nodes().to_vec(),
            values: self.values.clone(),
        };
        let text = serde_json::to_string_pretty(&doc)
            .map_err(|e| MspaceError::Parse(e.to_string()))?;
        fs::File::create(path)?.write_all(text.as_bytes())?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self, MspaceError> {
        let text = fs::read_to_string(path)?;
        let doc: GridFunctionJson =
            serde_json::from_str(&text).map_err(|e| MspaceError::Parse(e.to_string()))?;
        let grid = make_grid(doc.delta, doc.x_max, doc.n, doc.scheme)?;
        for (i, (&a, &b)) in grid.nodes().iter().zip(&doc.nodes).enumerate() {
            if a.to_bits() != b.to_bits() {
                return Err(MspaceError::IncompatibleData(format!(
                    "rebuilt node {i} differs from stored node"
                )));
            }
        }
        Self::from_values(grid, doc.values)
    }
}

/// `<f, g>_{L^2(dmu)}` by quadrature.
pub fn inner_mu(f: &GridFunction, g: &GridFunction) -> Result<f64, MspaceError> {
    f.same_grid(g)?;
    Ok(f.values
        .iter()
        .zip(&g.values)
        .zip(f.grid.mu_weights())
        .map(|((a, b), w)| a * b * w)
        .sum())
}

/// Discrete derivative: the exact derivative of the local quadratic through
/// three neighbouring nodes, one-sided at both ends. Exact for polynomials of
/// degree <= 2 on any node spacing.
pub fn derivative(f: &GridFunction) -> GridFunction {
    let nodes = f.grid.nodes();
    let n = nodes.len();
    let vals = &f.values;
    let d = (0..n)
        .map(|i| {
            let (a, b, c) = if i == 0 {
                (0, 1, 2)
            } else if i == n - 1 {
                (n - 3, n - 2, n - 1)
            } else {
                (i - 1, i, i + 1)
            };
            let (xa, xb, xc) = (nodes[a], nodes[b], nodes[c]);
            let x = nodes[i];
            let wa = ((x - xb) + (x - xc)) / ((xa - xb) * (xa - xc));
            let wb = ((x - xa) + (x - xc)) / ((xb - xa) * (xb - xc));
            let wc = ((x - xa) + (x - xb)) / ((xc - xa) * (xc - xb));
            wa * vals[a] + wb * vals[b] + wc * vals[c]
        })
        .collect();
    GridFunction {
        grid: Arc::clone(&f.grid),
        values: d,
    }
}

/// The `L^2(dmu)` norm, the energy form `1/2 ||f'||^2`, and the resulting
/// `H`-norm `h^2 = l2^2 + form`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SobolevNorms {
    pub l2: f64,
    pub h: f64,
    pub form: f64,
}

pub fn norms(f: &GridFunction) -> SobolevNorms {
    let l2sq = inner_mu(f, f).expect("same grid");
    let fp = derivative(f);
    let form = 0.5 * inner_mu(&fp, &fp).expect("same grid");
    SobolevNorms {
        l2: l2sq.sqrt(),
        h: (l2sq + form).sqrt(),
        form,
    }
}

/// A scalar function with analytic first and second derivatives, optionally
/// with declared compact support. This is the concrete carrier for members of
/// the test space `D`.
pub struct C2Fn {
    f: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    d1: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    d2: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    support: Option<f64>,
}

impl C2Fn {
    pub fn new(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d1: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2: impl Fn(f64) -> f64 + Send + Sync + 'static,
        support: Option<f64>,
    ) -> Self {
        Self {
            f: Box::new(f),
            d1: Box::new(d1),
            d2: Box::new(d2),
            support,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }
    pub fn d1(&self, x: f64) -> f64 {
        (self.d1)(x)
    }
    pub fn d2(&self, x: f64) -> f64 {
        (self.d2)(x)
    }
    /// Declared support radius, if the function promised one.
    pub fn support(&self) -> Option<f64> {
        self.support
    }

    pub fn sample(&self, grid: &Arc<Grid>) -> GridFunction {
        GridFunction::from_fn(grid, |x| self.eval(x))
    }
}

/// C^2 Wendland bump `psi(x/r)` with `psi(s) = (1-s)^4 (4s+1)` on [0,1].
/// Zero slope at the origin, compact support `[0, r]`.
pub fn wendland_c2(radius: f64) -> C2Fn {
    let r = radius;
    C2Fn::new(
        move |x| {
            let s = x / r;
            if s >= 1.0 {
                0.0
            } else {
                (1.0 - s).powi(4) * (4.0 * s + 1.0)
            }
        },
        move |x| {
            let s = x / r;
            if s >= 1.0 {
                0.0
            } else {
                -20.0 * s * (1.0 - s).powi(3) / r
            }
        },
        move |x| {
            let s = x / r;
            if s >= 1.0 {
                0.0
            } else {
                (1.0 - s).powi(2) * (80.0 * s - 20.0) / (r * r)
            }
        },
        Some(r),
    )
}

/// C^4 Wendland bump `psi(x/r)` with `psi(s) = (1-s)^6 (35 s^2 + 18 s + 3)/3`.
/// Smoother variant for tests that differentiate the generator twice.
pub fn wendland_c4(radius: f64) -> C2Fn {
    let r = radius;
    C2Fn::new(
        move |x| {
            let s = x / r;
            if s >= 1.0 {
                0.0
            } else {
                (1.0 - s).powi(6) * (35.0 * s * s + 18.0 * s + 3.0) / 3.0
            }
        },
        move |x| {
            let s = x / r;
            if s >= 1.0 {
                0.0
            } else {
                -(56.0 / 3.0) * s * (5.0 * s + 1.0) * (1.0 - s).powi(5) / r
            }
        },
        move |x| {
            let s = x / r;
            if s >= 1.0 {
                0.0
            } else {
                -(56.0 / 3.0) * (1.0 - s).powi(4) * (1.0 + 4.0 * s - 35.0 * s * s) / (r * r)
            }
        },
        Some(r),
    )
}

/// `cos(omega x)` modulated by the C^4 bump; still has zero slope at 0 and
/// compact support, so it stays inside `D`.
pub fn cos_wendland(omega: f64, radius: f64) -> C2Fn {
    let bump = Arc::new(wendland_c4(radius));
    let (p0, p1, p2) = (Arc::clone(&bump), Arc::clone(&bump), bump);
    C2Fn::new(
        move |x| (omega * x).cos() * p0.eval(x),
        move |x| -omega * (omega * x).sin() * p1.eval(x) + (omega * x).cos() * p1.d1(x),
        move |x| {
            -omega * omega * (omega * x).cos() * p2.eval(x)
                - 2.0 * omega * (omega * x).sin() * p2.d1(x)
                + (omega * x).cos() * p2.d2(x)
        },
        Some(radius),
    )
}

/// `x^2` times the C^4 bump; vanishes to second order at 0.
pub fn xsq_wendland(radius: f64) -> C2Fn {
    let bump = Arc::new(wendland_c4(radius));
    let (p0, p1, p2) = (Arc::clone(&bump), Arc::clone(&bump), bump);
    C2Fn::new(
        move |x| x * x * p0.eval(x),
        move |x| 2.0 * x * p1.eval(x) + x * x * p1.d1(x),
        move |x| 2.0 * p2.eval(x) + 4.0 * x * p2.d1(x) + x * x * p2.d2(x),
        Some(radius),
    )
}

/// Degenerate second-order generator on smooth functions:
/// `f''(x)/2 + (delta-1) f'(x) / (2x)` for `x > 0`, and `delta f''(0)` at the
/// boundary.
pub fn apply_generator(f: &C2Fn, delta: f64, x: f64) -> f64 {
    if x > 0.0 {
        0.5 * f.d2(x) + (delta - 1.0) * f.d1(x) / (2.0 * x)
    } else {
        delta * f.d2(0.0)
    }
}

/// Membership test for the space `D`: `|f'(0)| <= tol` and `f` vanishes,
/// together with its first two derivatives, beyond some radius strictly
/// inside `[0, x_max]`. Vanishing is probed on a uniform scan of 512 points;
/// the tail tenth of the interval must be identically below `tol`.
pub fn in_test_space(f: &C2Fn, x_max: f64, tol: f64) -> bool {
    if f.d1(0.0).abs() > tol {
        return false;
    }
    if let Some(r) = f.support() {
        if r >= x_max {
            return false;
        }
    }
    const PROBES: usize = 512;
    let start = (0.9 * PROBES as f64) as usize;
    for i in start..=PROBES {
        let x = x_max * i as f64 / PROBES as f64;
        if f.eval(x).abs() > tol || f.d1(x).abs() > tol || f.d2(x).abs() > tol {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn grid_mass_closed_forms() {
        let cases = [
            (0.5, 4.0, 256, GridScheme::Graded),
            (0.25, 1.0, 64, GridScheme::Uniform),
            (0.75, 10.0, 512, GridScheme::Graded),
        ];
        for (delta, x_max, n, scheme) in cases {
            let g = make_grid(delta, x_max, n, scheme).unwrap();
            let exact = x_max.powf(delta) / delta;
            assert_relative_eq!(g.mu_mass(), exact, max_relative = 1e-10);
            assert!(g.mu_weights().iter().all(|&w| w >= 0.0));
            assert_eq!(g.node(0), 0.0);
            assert!(g.nodes().windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn grid_rejects_bad_parameters() {
        assert!(make_grid(0.5, 4.0, 15, GridScheme::Graded).is_err());
        assert!(make_grid(0.5, 0.0, 64, GridScheme::Graded).is_err());
        assert!(make_grid(0.5, -1.0, 64, GridScheme::Uniform).is_err());
        assert!(make_grid(1.2, 4.0, 64, GridScheme::Graded).is_err());
    }

    #[test]
    fn lebesgue_weights_integrate_quadratics() {
        let g = make_grid(0.5, 3.0, 129, GridScheme::Graded).unwrap();
        let int_x2: f64 = g
            .nodes()
            .iter()
            .zip(g.leb_weights())
            .map(|(&x, &w)| x * x * w)
            .sum();
        assert_relative_eq!(int_x2, 9.0, max_relative = 1e-9);
    }

    #[test]
    fn inner_mu_closed_forms() {
        let g = make_grid(0.5, 4.0, 128, GridScheme::Graded).unwrap();
        let one = GridFunction::from_fn(&g, |_| 1.0);
        assert_relative_eq!(inner_mu(&one, &one).unwrap(), 4.0, max_relative = 1e-10);

        let g1 = make_grid(0.5, 1.0, 128, GridScheme::Graded).unwrap();
        let ident = GridFunction::from_fn(&g1, |x| x);
        let one = GridFunction::from_fn(&g1, |_| 1.0);
        // int_0^1 x * x^{-1/2} dx = 2/3, exact for the quadratic rule
        assert_relative_eq!(
            inner_mu(&ident, &one).unwrap(),
            2.0 / 3.0,
            max_relative = 1e-12
        );

        let lo = GridFunction::from_fn(&g1, |x| if x < 0.3 { 1.0 } else { 0.0 });
        let hi = GridFunction::from_fn(&g1, |x| if x >= 0.3 { 1.0 } else { 0.0 });
        assert_eq!(inner_mu(&lo, &hi).unwrap(), 0.0);
    }

    #[test]
    fn inner_mu_rejects_grid_mismatch() {
        let a = make_grid(0.5, 1.0, 64, GridScheme::Graded).unwrap();
        let b = make_grid(0.5, 1.0, 64, GridScheme::Graded).unwrap();
        let fa = GridFunction::from_fn(&a, |x| x);
        let fb = GridFunction::from_fn(&b, |x| x);
        assert!(matches!(
            inner_mu(&fa, &fb),
            Err(MspaceError::GridMismatch(..))
        ));
    }

    #[test]
    fn derivative_polynomial_exactness() {
        let g = make_grid(0.5, 2.0, 200, GridScheme::Graded).unwrap();
        let c = GridFunction::from_fn(&g, |_| 3.25);
        assert!(derivative(&c).values().iter().all(|&v| v.abs() < 1e-12));

        let sq = GridFunction::from_fn(&g, |x| x * x);
        let d = derivative(&sq);
        for (&x, &v) in g.nodes().iter().zip(d.values()) {
            assert_abs_diff_eq!(v, 2.0 * x, epsilon = 1e-9);
        }
    }

    #[test]
    fn derivative_of_sine() {
        let g = make_grid(0.5, std::f64::consts::PI, 1024, GridScheme::Uniform).unwrap();
        let f = GridFunction::from_fn(&g, |x| x.sin());
        let d = derivative(&f);
        let worst = g
            .nodes()
            .iter()
            .zip(d.values())
            .map(|(&x, &v)| (v - x.cos()).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-4, "max error {worst:.2e}");
    }

    #[test]
    fn norms_closed_forms() {
        let g = make_grid(0.5, 4.0, 256, GridScheme::Graded).unwrap();
        let zero = GridFunction::zeros(&g);
        let n0 = norms(&zero);
        assert_eq!((n0.l2, n0.form, n0.h), (0.0, 0.0, 0.0));

        let one = GridFunction::from_fn(&g, |_| 1.0);
        let n1 = norms(&one);
        assert_relative_eq!(n1.l2, 2.0, max_relative = 1e-10);
        assert_abs_diff_eq!(n1.form, 0.0, epsilon = 1e-18);
        assert_relative_eq!(n1.h, 2.0, max_relative = 1e-10);

        // f = x on delta=1/2, x_max=1: l2^2 = 2/5, form = 1/2 * 2 = 1
        let g1 = make_grid(0.5, 1.0, 256, GridScheme::Graded).unwrap();
        let ident = GridFunction::from_fn(&g1, |x| x);
        let ni = norms(&ident);
        assert_relative_eq!(ni.l2 * ni.l2, 0.4, max_relative = 1e-9);
        assert_relative_eq!(ni.form, 1.0, max_relative = 1e-9);
        assert_relative_eq!(ni.h, (1.4_f64).sqrt(), max_relative = 1e-9);
    }

    #[test]
    fn generator_closed_forms() {
        let sq = C2Fn::new(|x| x * x, |x| 2.0 * x, |_| 2.0, None);
        assert_relative_eq!(apply_generator(&sq, 0.5, 1.0), 0.5, max_relative = 1e-14);
        assert_relative_eq!(apply_generator(&sq, 0.5, 0.0), 1.0, max_relative = 1e-14);
        let c = C2Fn::new(|_| 1.0, |_| 0.0, |_| 0.0, None);
        for x in [0.0, 0.3, 2.0] {
            assert_eq!(apply_generator(&c, 0.5, x), 0.0);
        }
    }

    #[test]
    fn test_space_membership() {
        let bump = wendland_c2(2.0);
        assert!(in_test_space(&bump, 10.0, 1e-10));
        assert!(!in_test_space(&bump, 1.5, 1e-10)); // support not inside

        // x * bump has slope 1 at the origin
        let ramp = {
            let bump = Arc::new(wendland_c2(2.0));
            let (p0, p1, p2) = (Arc::clone(&bump), Arc::clone(&bump), bump);
            C2Fn::new(
                move |x| x * p0.eval(x),
                move |x| p1.eval(x) + x * p1.d1(x),
                move |x| 2.0 * p2.d1(x) + x * p2.d2(x),
                Some(2.0),
            )
        };
        assert!(!in_test_space(&ramp, 10.0, 1e-10));

        // cosine profile with unbounded support
        let cosine = C2Fn::new(|x| x.cos(), |x| -x.sin(), |x| -x.cos(), None);
        assert!(!in_test_space(&cosine, 10.0, 1e-10));
    }

    #[test]
    fn wendland_derivative_consistency() {
        // analytic derivatives against central differences
        for f in [wendland_c2(1.7), wendland_c4(1.7), cos_wendland(2.0, 1.7), xsq_wendland(1.7)] {
            let h = 1e-6;
            for x in [0.1, 0.5, 1.0, 1.5] {
                let fd1 = (f.eval(x + h) - f.eval(x - h)) / (2.0 * h);
                let fd2 = (f.eval(x + h) - 2.0 * f.eval(x) + f.eval(x - h)) / (h * h);
                assert_abs_diff_eq!(f.d1(x), fd1, epsilon = 1e-7);
                assert_abs_diff_eq!(f.d2(x), fd2, epsilon = 1e-3);
            }
            assert_abs_diff_eq!(f.d1(0.0), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn csv_and_json_round_trip_exact() {
        let g = make_grid(0.37, 2.5, 64, GridScheme::Graded).unwrap();
        let f = GridFunction::from_fn(&g, |x| (x * 1.37).sin() * 0.123456789012345);
        let dir = std::env::temp_dir().join("bessel_pde_mspace_io");
        std::fs::create_dir_all(&dir).unwrap();

        let csv = dir.join("f.csv");
        f.write_csv(&csv).unwrap();
        let f2 = GridFunction::read_csv(Arc::clone(&g), &csv).unwrap();
        assert_eq!(f.values(), f2.values());

        let json = dir.join("f.json");
        f.write_json(&json).unwrap();
        let f3 = GridFunction::read_json(&json).unwrap();
        assert_eq!(f.values(), f3.values());
        assert_eq!(f3.grid().nodes(), g.nodes());
    }

    #[test]
    fn from_values_validates() {
        let g = make_grid(0.5, 1.0, 32, GridScheme::Uniform).unwrap();
        assert!(GridFunction::from_values(Arc::clone(&g), vec![0.0; 31]).is_err());
        let mut v = vec![0.0; 32];
        v[7] = f64::NAN;
        assert!(matches!(
            GridFunction::from_values(Arc::clone(&g), v),
            Err(MspaceError::NonFinite(7))
        ));
    }
}
