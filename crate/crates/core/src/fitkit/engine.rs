//! Levenberg–Marquardt on weighted residuals.
//!
//! A model supplies residuals already divided by their standard errors, so
//! the objective is `½‖r(p)‖²` and `(JᵀJ)⁻¹` is the parameter covariance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Weighted residual vector `r(p)`, with an optional analytic Jacobian.
pub trait ResidualModel {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;
    fn residuals(&self, p: &[f64], r: &mut [f64]);

    /// `∂rᵢ/∂pⱼ`. Defaults to central differences.
    fn jacobian(&self, p: &[f64], j: &mut DMatrix<f64>) {
        central_difference_jacobian(self, p, j);
    }

    /// Names used in rank-deficiency reports.
    fn param_names(&self) -> Vec<String> {
        (0..self.n_params()).map(|i| format!("p{i}")).collect()
    }
}

fn fd_step(x: f64) -> f64 {
    6e-6 * x.abs().max(1e-3)
}

pub fn central_difference_jacobian<M: ResidualModel + ?Sized>(
    model: &M,
    p: &[f64],
    j: &mut DMatrix<f64>,
) {
    let m = model.n_residuals();
    let mut q = p.to_vec();
    let mut rp = vec![0.0; m];
    let mut rm = vec![0.0; m];
    for k in 0..p.len() {
        let h = fd_step(p[k]);
        q[k] = p[k] + h;
        model.residuals(&q, &mut rp);
        q[k] = p[k] - h;
        model.residuals(&q, &mut rm);
        q[k] = p[k];
        for i in 0..m {
            j[(i, k)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
}

/// Five-point stencil, used to check the Jacobians of shipped models.
pub fn five_point_jacobian<M: ResidualModel + ?Sized>(model: &M, p: &[f64]) -> DMatrix<f64> {
    let m = model.n_residuals();
    let mut j = DMatrix::zeros(m, p.len());
    let mut q = p.to_vec();
    let mut r = [vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]];
    for k in 0..p.len() {
        let h = 1e-3 * p[k].abs().max(1e-3);
        for (s, off) in [-2.0, -1.0, 1.0, 2.0].iter().enumerate() {
            q[k] = p[k] + off * h;
            model.residuals(&q, &mut r[s]);
        }
        q[k] = p[k];
        for i in 0..m {
            j[(i, k)] = (r[0][i] - 8.0 * r[1][i] + 8.0 * r[2][i] - r[3][i]) / (12.0 * h);
        }
    }
    j
}

/// Worst relative disagreement between `model.jacobian` and a five-point
/// finite-difference Jacobian, relative to the largest entry of its column.
pub fn jacobian_check<M: ResidualModel + ?Sized>(model: &M, p: &[f64]) -> f64 {
    let mut ja = DMatrix::zeros(model.n_residuals(), p.len());
    model.jacobian(p, &mut ja);
    let jn = five_point_jacobian(model, p);
    let mut worst: f64 = 0.0;
    for k in 0..p.len() {
        let scale = jn.column(k).amax().max(ja.column(k).amax()).max(1e-300);
        let diff = (ja.column(k) - jn.column(k)).amax();
        worst = worst.max(diff / scale);
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankPolicy {
    /// Singular normal equations abort the fit.
    Error,
    /// Use a pseudo-inverse and attach a warning.
    Warn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceScaling {
    /// Trust the supplied standard errors.
    None,
    /// Multiply by χ²/(n − p), for unknown error scale.
    ReducedChiSquare,
}

#[derive(Debug, Clone)]
pub struct LsqOptions {
    pub max_iterations: usize,
    pub step_tolerance: f64,
    pub cost_tolerance: f64,
    /// Reciprocal condition number below which the normal matrix is singular.
    pub rank_tolerance: f64,
    pub rank_policy: RankPolicy,
    pub covariance_scaling: CovarianceScaling,
    /// Additional starting points; the lowest final cost wins.
    pub extra_starts: Vec<Vec<f64>>,
}

impl Default for LsqOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            step_tolerance: 1e-10,
            cost_tolerance: 1e-12,
            rank_tolerance: 1e-12,
            rank_policy: RankPolicy::Error,
            covariance_scaling: CovarianceScaling::None,
            extra_starts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LsqSolution {
    pub params: Vec<f64>,
    /// Weighted sum of squared residuals, `‖r‖²`.
    pub chi_square: f64,
    pub covariance: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub n_residuals: usize,
    pub warnings: Vec<String>,
}

impl LsqSolution {
    pub fn reduced_chi_square(&self) -> f64 {
        let dof = self.n_residuals.saturating_sub(self.params.len()).max(1);
        self.chi_square / dof as f64
    }
}

struct Descent {
    p: Vec<f64>,
    cost: f64,
    converged: bool,
    iterations: usize,
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

fn descend<M: ResidualModel + ?Sized>(model: &M, p0: &[f64], opts: &LsqOptions) -> Result<Descent> {
    let n = model.n_params();
    let m = model.n_residuals();
    let mut p = p0.to_vec();
    let mut r = vec![0.0; m];
    model.residuals(&p, &mut r);
    let mut cost = sum_sq(&r);
    if !cost.is_finite() {
        return Err(Error::domain(
            "residuals are not finite at the starting point",
        ));
    }
    let mut jac = DMatrix::zeros(m, n);
    let mut lambda = 1e-3;
    let mut trial = vec![0.0; m];
    for it in 1..=opts.max_iterations {
        if cost == 0.0 {
            return Ok(Descent {
                p,
                cost,
                converged: true,
                iterations: it - 1,
            });
        }
        model.jacobian(&p, &mut jac);
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * DVector::from_column_slice(&r);
        let dmax = jtj.diagonal().amax();
        let floor = 1e-15 * dmax.max(1e-300);
        loop {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(floor);
            }
            let step = match a.cholesky() {
                Some(ch) => -ch.solve(&g),
                None => {
                    lambda *= 10.0;
                    if lambda > 1e20 {
                        return Ok(Descent {
                            p,
                            cost,
                            converged: true,
                            iterations: it,
                        });
                    }
                    continue;
                }
            };
            let q: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            model.residuals(&q, &mut trial);
            let new_cost = sum_sq(&trial);
            if new_cost.is_finite() && new_cost <= cost {
                let pnorm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                let small_step = step.norm() <= opts.step_tolerance * (pnorm + opts.step_tolerance);
                let small_gain = cost - new_cost <= opts.cost_tolerance * cost;
                p = q;
                std::mem::swap(&mut r, &mut trial);
                cost = new_cost;
                lambda = (lambda / 10.0).max(1e-15);
                if small_step || small_gain {
                    return Ok(Descent {
                        p,
                        cost,
                        converged: true,
                        iterations: it,
                    });
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e20 {
                // no decrease in any direction at working precision
                return Ok(Descent {
                    p,
                    cost,
                    converged: true,
                    iterations: it,
                });
            }
        }
    }
    Ok(Descent {
        p,
        cost,
        converged: false,
        iterations: opts.max_iterations,
    })
}

/// Inverts `JᵀJ`, checking identifiability first.
fn covariance<M: ResidualModel + ?Sized>(
    model: &M,
    p: &[f64],
    opts: &LsqOptions,
    warnings: &mut Vec<String>,
) -> Result<DMatrix<f64>> {
    let n = model.n_params();
    let mut jac = DMatrix::zeros(model.n_residuals(), n);
    model.jacobian(p, &mut jac);
    let jtj = jac.transpose() * &jac;
    let names = model.param_names();
    let d: Vec<f64> = (0..n).map(|k| jtj[(k, k)]).collect();
    let dmax = d.iter().cloned().fold(0.0, f64::max);
    let deficient = |direction: String, warnings: &mut Vec<String>| -> Result<()> {
        match opts.rank_policy {
            RankPolicy::Error => Err(Error::RankDeficient { direction }),
            RankPolicy::Warn => {
                warnings.push(format!(
                    "near-singular normal matrix along `{direction}`; pseudo-inverse used"
                ));
                Ok(())
            }
        }
    };
    // a parameter the residuals do not depend on at all
    if let Some(k) = (0..n).find(|&k| !(d[k] > 1e-300 && d[k] > 1e-30 * dmax)) {
        deficient(names[k].clone(), warnings)?;
    }
    let scale: Vec<f64> = d
        .iter()
        .map(|&x| if x > 0.0 { 1.0 / x.sqrt() } else { 0.0 })
        .collect();
    let s = DMatrix::from_fn(n, n, |i, j| jtj[(i, j)] * scale[i] * scale[j]);
    let eig = SymmetricEigen::new(s);
    let emax = eig.eigenvalues.amax();
    let mut inv = DMatrix::zeros(n, n);
    let mut reported = false;
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        if ev <= opts.rank_tolerance * emax {
            if !reported {
                let dominant = v.iamax();
                deficient(names[dominant].clone(), warnings)?;
                reported = true;
            }
            continue;
        }
        inv += (v * v.transpose()) / ev;
    }
    Ok(DMatrix::from_fn(n, n, |i, j| {
        inv[(i, j)] * scale[i] * scale[j]
    }))
}

/// Minimizes `‖r(p)‖²` from `p0` (and any extra starts).
pub fn least_squares<M: ResidualModel + ?Sized>(
    model: &M,
    p0: &[f64],
    opts: &LsqOptions,
) -> Result<LsqSolution> {
    let n = model.n_params();
    if p0.len() != n {
        return Err(Error::Configuration(format!(
            "expected {n} start values, got {}",
            p0.len()
        )));
    }
    if model.n_residuals() < n {
        let names = model.param_names();
        return Err(Error::RankDeficient {
            direction: names[model.n_residuals().min(n - 1)].clone(),
        });
    }
    let mut best = descend(model, p0, opts)?;
    for start in &opts.extra_starts {
        if start.len() != n {
            return Err(Error::Configuration(
                "start point has the wrong dimension".into(),
            ));
        }
        if let Ok(d) = descend(model, start, opts) {
            if d.cost < best.cost {
                best = d;
            }
        }
    }
    let mut warnings = Vec::new();
    let mut cov = covariance(model, &best.p, opts, &mut warnings)?;
    let m = model.n_residuals();
    if opts.covariance_scaling == CovarianceScaling::ReducedChiSquare {
        let dof = m.saturating_sub(n).max(1);
        cov *= best.cost / dof as f64;
    }
    // exact symmetry
    let cov = (&cov + cov.transpose()) * 0.5;
    if !best.converged {
        warnings.push(format!("iteration cap of {} reached", opts.max_iterations));
    }
    Ok(LsqSolution {
        params: best.p,
        chi_square: best.cost,
        covariance: cov,
        converged: best.converged,
        iterations: best.iterations,
        n_residuals: m,
        warnings,
    })
}

/// `y = f(x, p)` with per-point standard errors.
pub struct CurveModel<'a, F> {
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub sigma: &'a [f64],
    pub f: F,
    pub names: Vec<String>,
}

impl<F: Fn(f64, &[f64]) -> f64> ResidualModel for CurveModel<'_, F> {
    fn n_params(&self) -> usize {
        self.names.len()
    }
    fn n_residuals(&self) -> usize {
        self.x.len()
    }
    fn residuals(&self, p: &[f64], r: &mut [f64]) {
        for i in 0..self.x.len() {
            r[i] = ((self.f)(self.x[i], p) - self.y[i]) / self.sigma[i];
        }
    }
    fn param_names(&self) -> Vec<String> {
        self.names.clone()
    }
}

/// Checks data arrays before a fit.
pub(crate) fn check_data(x: &[f64], y: &[f64], sigma: &[f64]) -> Result<()> {
    if x.len() != y.len() || x.len() != sigma.len() {
        return Err(Error::domain("data arrays differ in length"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::domain("data contain non-finite values"));
    }
    if sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::domain("standard errors must be finite and positive"));
    }
    Ok(())
}
