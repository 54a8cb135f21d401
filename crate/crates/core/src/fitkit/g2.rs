//! Per-curve fit of the three-level g²(τ) model.
//!
//! `g²(τ) = 1 − v·[(1+c)·e^{−|τ−τ₀|/τ₁} − c·e^{−|τ−τ₀|/τ₂}]`
//!
//! `v` is the dip visibility; it is 1 for a background-free curve and
//! `ρ₁ρ₂` when uncorrelated counts are present. By default it is fixed at 1.
//! The optimizer sees `(ln τ₁, ln(τ₂ − τ₁), c, τ₀[, v])`, which keeps
//! `0 < τ₁ < τ₂` without constraints.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::engine::{least_squares, LsqOptions, ResidualModel};
use super::{propagate, FitResult};
use crate::correlator::CorrelationCurve;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Params {
    pub tau1: f64,
    pub tau2: f64,
    pub c: f64,
    pub tau0: f64,
    pub visibility: f64,
}

impl G2Params {
    pub fn new(tau1: f64, tau2: f64, c: f64, tau0: f64) -> Self {
        Self {
            tau1,
            tau2,
            c,
            tau0,
            visibility: 1.0,
        }
    }
}

/// `∫ e^{−|x|/τ} dx` from 0 to `x`, and its τ-derivative.
#[inline]
fn primitive(x: f64, tau: f64) -> (f64, f64) {
    let y = x.abs() / tau;
    let e = (-y).exp();
    let one_minus = -(-y).exp_m1();
    let s = x.signum();
    (s * tau * one_minus, s * (one_minus - y * e))
}

/// Mean of `e^{−|x−τ₀|/τ}` over `[a, b]` (or the point value when a = b),
/// with derivatives with respect to τ and τ₀.
#[inline]
fn decay_mean(a: f64, b: f64, tau: f64, tau0: f64) -> (f64, f64, f64) {
    let (xa, xb) = (a - tau0, b - tau0);
    let w = b - a;
    if w <= 0.0 {
        let e = (-xa.abs() / tau).exp();
        return (e, xa.abs() / (tau * tau) * e, xa.signum() * e / tau);
    }
    let (fa, ga) = primitive(xa, tau);
    let (fb, gb) = primitive(xb, tau);
    let ea = (-xa.abs() / tau).exp();
    let eb = (-xb.abs() / tau).exp();
    ((fb - fa) / w, (gb - ga) / w, -(eb - ea) / w)
}

/// Model value averaged over the bin `[center − width/2, center + width/2]`.
pub fn g2_bin_average(p: &G2Params, center_ns: f64, width_ns: f64) -> f64 {
    let (a, b) = (center_ns - 0.5 * width_ns, center_ns + 0.5 * width_ns);
    let (e1, _, _) = decay_mean(a, b, p.tau1, p.tau0);
    let (e2, _, _) = decay_mean(a, b, p.tau2, p.tau0);
    1.0 - p.visibility * ((1.0 + p.c) * e1 - p.c * e2)
}

/// Weighted residuals of the g² model against one curve.
pub struct G2Model {
    pub delays_ns: Vec<f64>,
    pub values: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Bin width for bin averaging; zero evaluates at bin centers.
    pub width_ns: f64,
    pub free_visibility: bool,
    /// Holds τ₀ at this value instead of fitting it.
    pub fixed_tau0: Option<f64>,
}

impl G2Model {
    pub fn from_curve(curve: &CorrelationCurve, opts: &G2FitOptions) -> Self {
        Self {
            delays_ns: curve.delays_ns.clone(),
            values: curve.values.clone(),
            sigma: curve.sigma.clone(),
            width_ns: if opts.bin_average {
                curve.bin_width_ps as f64 * 1e-3
            } else {
                0.0
            },
            free_visibility: opts.free_visibility,
            fixed_tau0: opts.fixed_tau0,
        }
    }

    pub fn to_internal(&self, p: &G2Params) -> Vec<f64> {
        let mut u = vec![p.tau1.ln(), (p.tau2 - p.tau1).ln(), p.c];
        if self.fixed_tau0.is_none() {
            u.push(p.tau0);
        }
        if self.free_visibility {
            u.push(p.visibility);
        }
        u
    }

    pub fn from_internal(&self, u: &[f64]) -> G2Params {
        let tau1 = u[0].exp();
        let mut k = 3;
        let tau0 = match self.fixed_tau0 {
            Some(t) => t,
            None => {
                k += 1;
                u[3]
            }
        };
        let visibility = if self.free_visibility { u[k] } else { 1.0 };
        G2Params {
            tau1,
            tau2: tau1 + u[1].exp(),
            c: u[2],
            tau0,
            visibility,
        }
    }

    fn eval(&self, p: &G2Params, i: usize) -> (f64, [f64; 5]) {
        let w = self.width_ns;
        let (a, b) = (self.delays_ns[i] - 0.5 * w, self.delays_ns[i] + 0.5 * w);
        let (e1, d1t, d1z) = decay_mean(a, b, p.tau1, p.tau0);
        let (e2, d2t, d2z) = decay_mean(a, b, p.tau2, p.tau0);
        let v = p.visibility;
        let shape = (1.0 + p.c) * e1 - p.c * e2;
        let g = 1.0 - v * shape;
        let grad = [
            -v * (1.0 + p.c) * d1t,
            v * p.c * d2t,
            -v * (e1 - e2),
            -v * ((1.0 + p.c) * d1z - p.c * d2z),
            -shape,
        ];
        (g, grad)
    }

    /// Model values at every bin.
    pub fn predict(&self, p: &G2Params) -> Vec<f64> {
        (0..self.delays_ns.len())
            .map(|i| self.eval(p, i).0)
            .collect()
    }
}

impl ResidualModel for G2Model {
    fn n_params(&self) -> usize {
        3 + usize::from(self.fixed_tau0.is_none()) + usize::from(self.free_visibility)
    }

    fn n_residuals(&self) -> usize {
        self.delays_ns.len()
    }

    fn residuals(&self, u: &[f64], r: &mut [f64]) {
        let p = self.from_internal(u);
        for i in 0..r.len() {
            r[i] = (self.eval(&p, i).0 - self.values[i]) / self.sigma[i];
        }
    }

    fn jacobian(&self, u: &[f64], j: &mut DMatrix<f64>) {
        let p = self.from_internal(u);
        let dt = p.tau2 - p.tau1;
        for i in 0..self.delays_ns.len() {
            let (_, g) = self.eval(&p, i);
            let s = self.sigma[i];
            j[(i, 0)] = p.tau1 * (g[0] + g[1]) / s;
            j[(i, 1)] = dt * g[1] / s;
            j[(i, 2)] = g[2] / s;
            let mut k = 3;
            if self.fixed_tau0.is_none() {
                j[(i, k)] = g[3] / s;
                k += 1;
            }
            if self.free_visibility {
                j[(i, k)] = g[4] / s;
            }
        }
    }

    fn param_names(&self) -> Vec<String> {
        let mut n = vec!["tau1".to_string(), "tau2".into(), "c".into()];
        if self.fixed_tau0.is_none() {
            n.push("tau0".into());
        }
        if self.free_visibility {
            n.push("visibility".into());
        }
        n
    }
}

#[derive(Debug, Clone)]
pub struct G2FitOptions {
    /// Fit the dip visibility instead of fixing it at 1.
    pub free_visibility: bool,
    /// Share a known τ₀ instead of fitting it per curve.
    pub fixed_tau0: Option<f64>,
    /// Compare bin averages of the model rather than values at bin centers.
    pub bin_average: bool,
    /// Refit once with variances taken from the fitted model (Pearson χ²).
    /// Count-derived variances bias the fit toward low bins.
    pub model_variance: bool,
    pub initial: Option<G2Params>,
    pub lsq: LsqOptions,
}

impl Default for G2FitOptions {
    fn default() -> Self {
        Self {
            free_visibility: false,
            fixed_tau0: None,
            bin_average: true,
            model_variance: true,
            initial: None,
            lsq: LsqOptions::default(),
        }
    }
}

fn starting_points(
    curve: &CorrelationCurve,
    model: &G2Model,
    opts: &G2FitOptions,
) -> Vec<Vec<f64>> {
    // τ₀ seed: lowest three-bin average near zero delay
    let n = curve.len();
    let mut tau0 = 0.0;
    let mut best = f64::INFINITY;
    for i in 1..n.saturating_sub(1) {
        if curve.delays_ns[i].abs() > 5.0 {
            continue;
        }
        let m = (curve.values[i - 1] + curve.values[i] + curve.values[i + 1]) / 3.0;
        if m < best {
            best = m;
            tau0 = curve.delays_ns[i];
        }
    }
    let dip = if best.is_finite() {
        (1.0 - best).clamp(0.05, 1.0)
    } else {
        1.0
    };
    let peak = curve.values.iter().cloned().fold(1.0, f64::max);
    let c0 = (peak - 1.0).max(0.05);
    // a supplied start goes first; the grid guards against degenerate valleys
    let mut starts: Vec<Vec<f64>> = opts.initial.iter().map(|p| model.to_internal(p)).collect();
    for tau1 in [2.0, 6.0, 15.0] {
        for ratio in [3.0, 10.0, 40.0] {
            let p = G2Params {
                tau1,
                tau2: tau1 * ratio,
                c: c0,
                tau0: opts.fixed_tau0.unwrap_or(tau0),
                visibility: dip,
            };
            starts.push(model.to_internal(&p));
        }
    }
    starts
}

/// Fits `(τ₁, τ₂, c, τ₀)` (plus the visibility when enabled) to one curve.
pub fn fit_g2(curve: &CorrelationCurve, opts: &G2FitOptions) -> Result<FitResult> {
    super::engine::check_data(&curve.delays_ns, &curve.values, &curve.sigma)?;
    let mut model = G2Model::from_curve(curve, opts);
    if curve.len() < model.n_params() + 2 {
        return Err(Error::domain(format!(
            "curve has only {} bins",
            curve.len()
        )));
    }
    let mut starts = starting_points(curve, &model, opts);
    let first = starts.remove(0);
    let lsq = LsqOptions {
        extra_starts: starts,
        ..opts.lsq.clone()
    };
    let mut sol = least_squares(&model, &first, &lsq)?;

    if opts.model_variance && !curve.background_corrected {
        // σᵢ² = vᵢ/N with a common normalization N
        let mut ratios: Vec<f64> = curve
            .values
            .iter()
            .zip(&curve.sigma)
            .filter(|(v, _)| **v > 0.0)
            .map(|(v, s)| v / (s * s))
            .collect();
        if !ratios.is_empty() {
            ratios.sort_by(f64::total_cmp);
            let n_norm = ratios[ratios.len() / 2];
            let pred = model.predict(&model.from_internal(&sol.params));
            model.sigma = pred
                .iter()
                .map(|&m| (m.max(1.0 / n_norm) / n_norm).sqrt())
                .collect();
            let refit = LsqOptions {
                extra_starts: Vec::new(),
                ..opts.lsq.clone()
            };
            sol = least_squares(&model, &sol.params.clone(), &refit)?;
        }
    }

    let p = model.from_internal(&sol.params);
    // d(external)/d(internal)
    let n = model.n_params();
    let names = model.param_names();
    let mut t = DMatrix::zeros(n, n);
    t[(0, 0)] = p.tau1;
    t[(1, 0)] = p.tau1;
    t[(1, 1)] = p.tau2 - p.tau1;
    for k in 2..n {
        t[(k, k)] = 1.0;
    }
    let cov = propagate(&t, &sol.covariance);
    let mut values = vec![p.tau1, p.tau2, p.c];
    let mut spec = vec![("tau1", "ns"), ("tau2", "ns"), ("c", "")];
    if model.fixed_tau0.is_none() {
        values.push(p.tau0);
        spec.push(("tau0", "ns"));
    }
    if model.free_visibility {
        values.push(p.visibility);
        spec.push(("visibility", ""));
    }
    debug_assert_eq!(names.len(), spec.len());
    let mut fit = FitResult::assemble("g2", &spec, &values, &cov, &sol);
    let v_sigma = if model.free_visibility {
        fit.sigma("visibility")
    } else {
        0.0
    };
    fit.push_derived("g2_at_tau0", 1.0 - p.visibility, v_sigma, "");
    if model.fixed_tau0.is_some() {
        fit.push_derived("tau0", p.tau0, 0.0, "ns");
    }
    let reach = curve.delays_ns.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if p.tau2 > 0.5 * reach {
        fit.warnings.push(format!(
            "tau2 = {:.3} ns is not well inside the ±{reach:.1} ns window",
            p.tau2
        ));
    }
    Ok(fit)
}

/// Pulls the fitted parameters back out of a g² fit.
pub fn g2_params_from_fit(fit: &FitResult) -> G2Params {
    G2Params {
        tau1: fit.value("tau1"),
        tau2: fit.value("tau2"),
        c: fit.value("c"),
        tau0: fit.value("tau0"),
        visibility: fit.get("visibility").map_or(1.0, |p| p.value),
    }
}
