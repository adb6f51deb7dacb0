//! Analytic transition kernel of the low-dimension Bessel process and its
//! semigroup action on grid functions by quadrature.
//!
//! For dimension `delta` and order `nu = delta/2 - 1` the density reads
//!
//! ```text
//! p_t(x, y) = (y/t) (y/x)^nu exp(-(x^2+y^2)/(2t)) I_nu(xy/t),   t, x, y > 0,
//! p_t(0, y) = 2^{-nu} t^{-(nu+1)} Gamma(nu+1)^{-1} y^{2nu+1} exp(-y^2/(2t)).
//! ```
//!
//! Everything is evaluated in log space through the scaled Bessel function,
//! so `xy/t` in the tens of thousands stays finite. Matrices store the
//! weighted form `q(x, y) = p_t(x, y) y^{1-delta}`, which is smooth and even
//! in `y` near the origin; quadrature against the mu-weights then absorbs the
//! `y^{delta-1}` singularity of the bare density.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::Serialize;
use thiserror::Error;

use crate::exec::{self, Exec};
use crate::mspace::{inner_mu, Grid, GridFunction, MspaceError};
use crate::specfn::{self, BesselOrder, SpecFnError};

#[derive(Debug, Error)]
pub enum SemigroupError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    SpecFn(#[from] SpecFnError),
    #[error(transparent)]
    Mspace(#[from] MspaceError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Points with `x` at or below this cutoff route to the boundary formula;
/// the kernel extends continuously there (the `(y/x)^nu I_nu(xy/t)` product
/// has a finite limit) and the relative switch error is `O(cutoff^2/t)`.
pub const BOUNDARY_X_CUTOFF: f64 = 1e-8;

/// Dimension `delta` with its Bessel order `nu = delta/2 - 1`. Base
/// dimensions live in (0, 1); the internally used shifted value `delta + 2`
/// is also representable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    delta: f64,
    nu: f64,
}

impl KernelParams {
    pub fn new(delta: f64) -> Result<Self, SemigroupError> {
        if !delta.is_finite() || delta <= 0.0 {
            return Err(SemigroupError::Domain(format!(
                "dimension delta = {delta} must be positive"
            )));
        }
        Ok(Self {
            delta,
            nu: delta / 2.0 - 1.0,
        })
    }

    pub fn delta(self) -> f64 {
        self.delta
    }
    pub fn nu(self) -> f64 {
        self.nu
    }
    /// Parameters of the dimension-shifted kernel `delta + 2`.
    pub fn shifted(self) -> Self {
        Self {
            delta: self.delta + 2.0,
            nu: self.nu + 1.0,
        }
    }
    fn order(self) -> BesselOrder {
        BesselOrder::new(self.nu).expect("delta > 0 implies nu > -1")
    }
}

fn check_time(t: f64) -> Result<(), SemigroupError> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(SemigroupError::Domain(format!("t = {t} must be positive")));
    }
    Ok(())
}

/// `ln` of the boundary-density prefactor `2^{-nu} t^{-(nu+1)} / Gamma(nu+1)`.
fn ln_boundary_prefactor(params: KernelParams, t: f64) -> f64 {
    let nu = params.nu;
    -nu * std::f64::consts::LN_2
        - (nu + 1.0) * t.ln()
        - specfn::log_gamma(nu + 1.0).expect("nu > -1")
}

/// Transition density `p_t(x, y)`; `x = 0` (and `x` below the cutoff) uses
/// the boundary formula.
pub fn kernel_density(
    params: KernelParams,
    t: f64,
    x: f64,
    y: f64,
) -> Result<f64, SemigroupError> {
    check_time(t)?;
    if !(y > 0.0) || !y.is_finite() {
        return Err(SemigroupError::Domain(format!("y = {y} must be positive")));
    }
    if !(x >= 0.0) || !x.is_finite() {
        return Err(SemigroupError::Domain(format!(
            "x = {x} must be nonnegative"
        )));
    }
    let nu = params.nu;
    if x <= BOUNDARY_X_CUTOFF {
        let ln_p =
            ln_boundary_prefactor(params, t) + (2.0 * nu + 1.0) * y.ln() - y * y / (2.0 * t);
        return Ok(ln_p.exp());
    }
    let z = x * y / t;
    let ln_ive = specfn::ln_bessel_i_scaled(params.order(), z)?;
    let ln_p = y.ln() - t.ln() + nu * (y.ln() - x.ln()) - (x - y) * (x - y) / (2.0 * t) + ln_ive;
    Ok(ln_p.exp())
}

/// Spatial derivative of the density in its first argument,
/// `d/dx p_t(x, y) = (x/t) (p^{delta+2}_t(x, y) - p^delta_t(x, y))`.
///
/// The identity follows from `I'_nu(z) = I_{nu+1}(z) + (nu/z) I_nu(z)` and is
/// cross-checked against finite differences and the reflected-Gaussian closed
/// form at `delta = 1` in the tests.
pub fn kernel_dx(params: KernelParams, t: f64, x: f64, y: f64) -> Result<f64, SemigroupError> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(SemigroupError::Domain(format!("x = {x} must be positive")));
    }
    let base = kernel_density(params, t, x, y)?;
    let shifted = kernel_density(params.shifted(), t, x, y)?;
    Ok(x / t * (shifted - base))
}

/// Per-matrix health report: extremal row masses (a density should integrate
/// to 1 up to truncation loss) and the worst relative defect of the
/// detailed-balance identity `p_t(x,y) y^{1-delta} = p_t(y,x) x^{1-delta}`
/// on a subsample.
#[derive(Debug, Clone, Serialize)]
pub struct KernelDiagnostics {
    pub delta: f64,
    pub t: f64,
    pub row_mass_min: f64,
    pub row_mass_max: f64,
    pub symmetry_defect_max: f64,
}

/// Dense kernel matrix on a grid. `density(i, j)` is `p_t(x_i, y_j)` for the
/// matrix dimension; storage holds the weighted entries
/// `p_t(x_i, y_j) y_j^{1 - delta_grid}`, the form the quadrature consumes.
pub struct KernelMatrix {
    params: KernelParams,
    t: f64,
    grid: Arc<Grid>,
    /// row-major `n x n`, rows indexed by `x`, columns by `y`
    weighted: Vec<f64>,
    diagnostics: KernelDiagnostics,
}

/// Weighted entry `p^{delta_p}_t(x, y) * y^{1 - delta_g}` with precomputed
/// logs of the positive nodes. `extra` is `delta_p - delta_g` (0 or 2).
fn weighted_entry(
    params: KernelParams,
    extra: f64,
    t: f64,
    x: f64,
    ln_x: f64,
    y: f64,
    ln_y: f64,
) -> f64 {
    let nu = params.nu;
    if x <= BOUNDARY_X_CUTOFF || y <= BOUNDARY_X_CUTOFF {
        // q extends continuously to the boundary: q -> exp(c0 - (x^2+y^2)/2t)
        let c0 = ln_boundary_prefactor(params, t);
        let base = (c0 - (x * x + y * y) / (2.0 * t)).exp();
        return if extra == 0.0 {
            base
        } else {
            y.powf(extra) * base
        };
    }
    let z = x * y / t;
    let ln_ive = specfn::ln_bessel_i_scaled(params.order(), z).expect("z > 0");
    let ln_q = -nu * (ln_x + ln_y) - t.ln() - (x - y) * (x - y) / (2.0 * t) + ln_ive;
    (ln_q + extra * ln_y).exp()
}

impl KernelMatrix {
    /// Build the matrix for `params` (either the grid's own dimension or its
    /// `+2` shift) at time `t > 0`. Rows are independent and computed in
    /// parallel under `Exec::Parallel`.
    pub fn build(
        params: KernelParams,
        t: f64,
        grid: &Arc<Grid>,
        exec: Exec,
    ) -> Result<Self, SemigroupError> {
        check_time(t)?;
        let extra = params.delta() - grid.delta();
        if extra != 0.0 && extra != 2.0 {
            return Err(SemigroupError::Domain(format!(
                "matrix dimension {} must be the grid dimension {} or its +2 shift",
                params.delta(),
                grid.delta()
            )));
        }
        let n = grid.len();
        let nodes = grid.nodes();
        let ln_nodes: Vec<f64> = nodes.iter().map(|&x| if x > 0.0 { x.ln() } else { 0.0 }).collect();

        let rows: Vec<Vec<f64>> = exec::map_indexed(exec, n, |i| {
            let x = nodes[i];
            let ln_x = ln_nodes[i];
            (0..n)
                .map(|j| weighted_entry(params, extra, t, x, ln_x, nodes[j], ln_nodes[j]))
                .collect()
        });
        let mut weighted = Vec::with_capacity(n * n);
        for row in rows {
            weighted.extend(row);
        }

        let diagnostics = Self::diagnose(params, t, grid, &weighted);
        Ok(Self {
            params,
            t,
            grid: Arc::clone(grid),
            weighted,
            diagnostics,
        })
    }

    fn diagnose(params: KernelParams, t: f64, grid: &Grid, weighted: &[f64]) -> KernelDiagnostics {
        let n = grid.len();
        let mu = grid.mu_weights();
        let mut mass_min = f64::INFINITY;
        let mut mass_max = f64::NEG_INFINITY;
        for i in 0..n {
            let mass: f64 = weighted[i * n..(i + 1) * n]
                .iter()
                .zip(mu)
                .map(|(e, w)| e * w)
                .sum();
            mass_min = mass_min.min(mass);
            mass_max = mass_max.max(mass);
        }
        // detailed balance for the matrix dimension, on a coarse subsample:
        // p(x,y) y^{1-d'} = p(y,x) x^{1-d'} rewritten in stored entries as
        // w(i,j) y_j^{-e} = w(j,i) x_i^{-e}, e = d' - d_grid
        let extra = params.delta() - grid.delta();
        let step = (n / 32).max(1);
        let mut defect: f64 = 0.0;
        let mut i = 1;
        while i < n {
            let mut j = 1;
            while j < n {
                let a = weighted[i * n + j] * grid.node(j).powf(-extra);
                let b = weighted[j * n + i] * grid.node(i).powf(-extra);
                let scale = a.abs().max(b.abs());
                if scale > 1e-280 {
                    defect = defect.max((a - b).abs() / scale);
                }
                j += step;
            }
            i += step;
        }
        KernelDiagnostics {
            delta: params.delta(),
            t,
            row_mass_min: mass_min,
            row_mass_max: mass_max,
            symmetry_defect_max: defect,
        }
    }

    pub fn params(&self) -> KernelParams {
        self.params
    }
    pub fn t(&self) -> f64 {
        self.t
    }
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn diagnostics(&self) -> &KernelDiagnostics {
        &self.diagnostics
    }

    /// The bare density `p_t(x_i, y_j)` for this matrix's dimension. At the
    /// `y = 0` node this is the mathematical limit: `+inf` for dimension
    /// below 1, `0` above.
    pub fn density(&self, i: usize, j: usize) -> f64 {
        let n = self.grid.len();
        let y = self.grid.node(j);
        if y <= 0.0 {
            return if self.params.delta() < 1.0 {
                f64::INFINITY
            } else {
                0.0
            };
        }
        self.weighted[i * n + j] * y.powf(self.grid.delta() - 1.0)
    }

    /// Weighted entry `p_t(x_i, y_j) y_j^{1 - delta_grid}` (finite
    /// everywhere), the form actually used against the mu-weights.
    pub fn weighted(&self, i: usize, j: usize) -> f64 {
        self.weighted[i * self.grid.len() + j]
    }

    /// Quadrature of the density over `y`, i.e. `int p_t(x_i, y) dy` on the
    /// truncated domain; 1 minus this is the truncation loss of row `i`.
    pub fn row_mass(&self, i: usize) -> f64 {
        let n = self.grid.len();
        self.weighted[i * n..(i + 1) * n]
            .iter()
            .zip(self.grid.mu_weights())
            .map(|(e, w)| e * w)
            .sum()
    }

    /// `(P_t f)(x_i)` for all rows. No renormalization is applied: the row
    /// mass deficit stays visible in the diagnostics instead of being folded
    /// into the result.
    pub fn apply(&self, f: &GridFunction, exec: Exec) -> Result<GridFunction, SemigroupError> {
        if f.grid().id() != self.grid.id() {
            return Err(SemigroupError::Mspace(MspaceError::GridMismatch(
                f.grid().id(),
                self.grid.id(),
            )));
        }
        let n = self.grid.len();
        let fw: Vec<f64> = f
            .values()
            .iter()
            .zip(self.grid.mu_weights())
            .map(|(v, w)| v * w)
            .collect();
        let out = exec::map_indexed(exec, n, |i| {
            self.weighted[i * n..(i + 1) * n]
                .iter()
                .zip(&fw)
                .map(|(e, v)| e * v)
                .sum()
        });
        Ok(GridFunction::from_values(Arc::clone(&self.grid), out)?)
    }

    /// CSV dump for inspection: `x,y,density,weighted` per entry.
    pub fn write_csv(&self, path: &Path) -> Result<(), SemigroupError> {
        let n = self.grid.len();
        let mut out = String::from("x,y,density,weighted\n");
        for i in 0..n {
            for j in 0..n {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    self.grid.node(i),
                    self.grid.node(j),
                    self.density(i, j),
                    self.weighted(i, j),
                ));
            }
        }
        fs::File::create(path)?.write_all(out.as_bytes())?;
        Ok(())
    }
}

type CacheKey = (u64, u64, u64);

/// Kernel matrices keyed by the exact bit patterns of `delta` and `t` plus
/// the grid identity; concurrent reads share the lock, inserts take it
/// exclusively.
#[derive(Default)]
struct KernelCache {
    map: RwLock<HashMap<CacheKey, Arc<KernelMatrix>>>,
}

impl KernelCache {
    fn get_or_build(
        &self,
        params: KernelParams,
        t: f64,
        grid: &Arc<Grid>,
        exec: Exec,
    ) -> Result<Arc<KernelMatrix>, SemigroupError> {
        let key = (params.delta().to_bits(), t.to_bits(), grid.id());
        if let Some(m) = self.map.read().expect("cache lock").get(&key) {
            return Ok(Arc::clone(m));
        }
        let built = Arc::new(KernelMatrix::build(params, t, grid, exec)?);
        let mut map = self.map.write().expect("cache lock");
        Ok(Arc::clone(map.entry(key).or_insert(built)))
    }

    fn len(&self) -> usize {
        self.map.read().expect("cache lock").len()
    }
}

/// Semigroup acting on functions over one fixed grid, with a matrix cache
/// shared across times and the `+2` dimension shift.
pub struct Semigroup {
    grid: Arc<Grid>,
    exec: Exec,
    cache: KernelCache,
}

impl Semigroup {
    pub fn new(grid: Arc<Grid>) -> Self {
        Self::with_exec(grid, Exec::default())
    }

    pub fn with_exec(grid: Arc<Grid>, exec: Exec) -> Self {
        Self {
            grid,
            exec,
            cache: KernelCache::default(),
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn exec(&self) -> Exec {
        self.exec
    }
    pub fn cached_matrices(&self) -> usize {
        self.cache.len()
    }

    /// Parameters of the grid's own dimension.
    pub fn params(&self) -> KernelParams {
        KernelParams::new(self.grid.delta()).expect("grid delta validated")
    }

    /// Cached kernel matrix for `params` at `t > 0`.
    pub fn matrix(
        &self,
        params: KernelParams,
        t: f64,
    ) -> Result<Arc<KernelMatrix>, SemigroupError> {
        self.cache.get_or_build(params, t, &self.grid, self.exec)
    }

    /// `P_t f`; `t = 0` is the identity.
    pub fn apply(
        &self,
        params: KernelParams,
        t: f64,
        f: &GridFunction,
    ) -> Result<GridFunction, SemigroupError> {
        if t == 0.0 {
            return Ok(f.clone());
        }
        self.matrix(params, t)?.apply(f, self.exec)
    }

    /// `(P_t f)'` through the kernel-derivative identity,
    /// `(x/t) (P^{delta+2}_t f - P^delta_t f)(x)`.
    pub fn apply_dx(
        &self,
        params: KernelParams,
        t: f64,
        f: &GridFunction,
    ) -> Result<GridFunction, SemigroupError> {
        check_time(t)?;
        let base = self.apply(params, t, f)?;
        let shifted = self.apply(params.shifted(), t, f)?;
        let values = self
            .grid
            .nodes()
            .iter()
            .zip(shifted.values().iter().zip(base.values()))
            .map(|(&x, (s, b))| x / t * (s - b))
            .collect();
        Ok(GridFunction::from_values(Arc::clone(&self.grid), values)?)
    }

    /// Relative defect of the invariance of `mu`:
    /// `|int P_t f dmu - int f dmu| / max(1, |int f dmu|)`.
    pub fn invariance_defect(
        &self,
        params: KernelParams,
        t: f64,
        f: &GridFunction,
    ) -> Result<f64, SemigroupError> {
        if params.delta() != self.grid.delta() {
            return Err(SemigroupError::Domain(
                "invariance is tied to the grid's own dimension".into(),
            ));
        }
        let one = GridFunction::from_fn(&self.grid, |_| 1.0);
        let before = inner_mu(f, &one)?;
        let after = inner_mu(&self.apply(params, t, f)?, &one)?;
        Ok((after - before).abs() / before.abs().max(1.0))
    }

    /// Cumulative distribution of the transition law started at `x0`,
    /// sampled at the grid nodes: entry `k` approximates
    /// `int_0^{y_k} p_t(x0, y) dy`.
    pub fn transition_cdf(
        &self,
        params: KernelParams,
        t: f64,
        x0: f64,
    ) -> Result<Vec<f64>, SemigroupError> {
        check_time(t)?;
        if !(x0 >= 0.0) || !x0.is_finite() {
            return Err(SemigroupError::Domain(format!(
                "x0 = {x0} must be nonnegative"
            )));
        }
        let extra = params.delta() - self.grid.delta();
        if extra != 0.0 {
            return Err(SemigroupError::Domain(
                "transition cdf is tied to the grid's own dimension".into(),
            ));
        }
        let ln_x0 = if x0 > 0.0 { x0.ln() } else { 0.0 };
        let mut acc = 0.0;
        Ok(self
            .grid
            .nodes()
            .iter()
            .zip(self.grid.mu_weights())
            .map(|(&y, &w)| {
                let ln_y = if y > 0.0 { y.ln() } else { 0.0 };
                acc += weighted_entry(params, 0.0, t, x0, ln_x0, y, ln_y) * w;
                acc
            })
            .collect())
    }
}
