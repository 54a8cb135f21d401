//! Weighted least squares and the photophysics / ODMR fit models.

pub mod engine;
mod g2;
mod global;
pub mod io;
mod odmr;
mod saturation;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use engine::{
    jacobian_check, least_squares, CovarianceScaling, CurveModel, LsqOptions, LsqSolution,
    RankPolicy, ResidualModel,
};
pub use g2::{fit_g2, g2_bin_average, g2_params_from_fit, G2FitOptions, G2Model, G2Params};
pub use global::{
    global_photophysics_fit, GlobalFitOptions, GlobalModel, SaturationIntensity, SeriesPoint,
};
pub use odmr::{
    dephasing_time_ns, fit_amplitude_vs_power, fit_linear, fit_linewidth_vs_power, fit_lorentzians,
    lorentzian_sum, AmplitudeLaw, LorentzianModel, LorentzianOptions, OdmrSpectrum, PeakTable,
};
pub use saturation::{fit_saturation, signal_fraction_at, SaturationModel, SaturationPoint};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: f64,
    /// 1σ from the covariance (local quadratic approximation).
    pub uncertainty: f64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    pub parameters: Vec<Parameter>,
    /// Row-major, in the order of `parameters`.
    pub covariance: Vec<Vec<f64>>,
    /// Weighted sum of squared residuals.
    pub residual_norm: f64,
    pub n_data: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Quantities computed from the fitted parameters, with propagated errors.
    #[serde(default)]
    pub derived: Vec<Parameter>,
    #[serde(default)]
    pub warnings: Vec<String>,
    /// How uncertainties were obtained.
    pub uncertainty_model: String,
}

impl FitResult {
    /// Assembles a result from values, their covariance and names/units.
    pub(crate) fn assemble(
        model: &str,
        spec: &[(&str, &str)],
        values: &[f64],
        cov: &DMatrix<f64>,
        sol: &LsqSolution,
    ) -> Self {
        let parameters = spec
            .iter()
            .zip(values)
            .enumerate()
            .map(|(k, ((name, unit), &value))| Parameter {
                name: name.to_string(),
                value,
                uncertainty: cov[(k, k)].max(0.0).sqrt(),
                unit: unit.to_string(),
            })
            .collect();
        let n = values.len();
        let covariance = (0..n)
            .map(|i| (0..n).map(|j| cov[(i, j)]).collect())
            .collect();
        Self {
            model: model.to_string(),
            parameters,
            covariance,
            residual_norm: sol.chi_square,
            n_data: sol.n_residuals,
            converged: sol.converged,
            iterations: sol.iterations,
            derived: Vec::new(),
            warnings: sol.warnings.clone(),
            uncertainty_model: "covariance".into(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.parameters
            .iter()
            .chain(&self.derived)
            .find(|p| p.name == name)
    }

    /// Value of a fitted or derived quantity; panics on an unknown name.
    pub fn value(&self, name: &str) -> f64 {
        self.get(name)
            .unwrap_or_else(|| panic!("no parameter `{name}`"))
            .value
    }

    pub fn sigma(&self, name: &str) -> f64 {
        self.get(name)
            .unwrap_or_else(|| panic!("no parameter `{name}`"))
            .uncertainty
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.parameters.iter().position(|p| p.name == name)
    }

    /// Covariance submatrix for the named parameters.
    pub fn covariance_of(&self, names: &[&str]) -> Result<DMatrix<f64>> {
        let idx = names
            .iter()
            .map(|n| {
                self.index_of(n)
                    .ok_or_else(|| Error::Configuration(format!("no parameter `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(idx.len(), idx.len(), |i, j| {
            self.covariance[idx[i]][idx[j]]
        }))
    }

    pub fn reduced_chi_square(&self) -> f64 {
        let dof = self.n_data.saturating_sub(self.parameters.len()).max(1);
        self.residual_norm / dof as f64
    }

    pub(crate) fn push_derived(&mut self, name: &str, value: f64, uncertainty: f64, unit: &str) {
        self.derived.push(Parameter {
            name: name.into(),
            value,
            uncertainty,
            unit: unit.into(),
        });
    }
}

fn num(x: f64) -> String {
    if x != 0.0 && !(1e-3..1e6).contains(&x.abs()) {
        format!("{x:.4e}")
    } else {
        format!("{x:.5}")
    }
}

/// Parameter table with derived quantities and χ²ᵥ.
impl std::fmt::Display for FitResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "{} ({} points, chi2_red {:.3}{})",
            self.model,
            self.n_data,
            self.reduced_chi_square(),
            if self.converged {
                ""
            } else {
                ", NOT converged"
            }
        )?;
        for (tag, list) in [("", &self.parameters), ("*", &self.derived)] {
            for p in list {
                writeln!(
                    f,
                    "  {tag}{:<14} {:>12} +- {:<10} {}",
                    p.name,
                    num(p.value),
                    num(p.uncertainty),
                    p.unit
                )?;
            }
        }
        for w in &self.warnings {
            writeln!(f, "  warning: {w}")?;
        }
        Ok(())
    }
}

/// `T Σ Tᵀ` for `T = ∂(external)/∂(internal)`.
pub(crate) fn propagate(t: &DMatrix<f64>, cov: &DMatrix<f64>) -> DMatrix<f64> {
    let c = t * cov * t.transpose();
    (&c + c.transpose()) * 0.5
}

/// Central-difference Jacobian of a vector map, for error propagation.
pub(crate) fn map_jacobian<F: Fn(&[f64]) -> Result<Vec<f64>>>(
    f: F,
    x: &[f64],
) -> Result<DMatrix<f64>> {
    let y0 = f(x)?;
    let mut j = DMatrix::zeros(y0.len(), x.len());
    let mut q = x.to_vec();
    for k in 0..x.len() {
        let h = 1e-6 * x[k].abs().max(1e-8);
        q[k] = x[k] + h;
        let yp = f(&q)?;
        q[k] = x[k] - h;
        let ym = f(&q)?;
        q[k] = x[k];
        for i in 0..y0.len() {
            j[(i, k)] = (yp[i] - ym[i]) / (2.0 * h);
        }
    }
    Ok(j)
}
