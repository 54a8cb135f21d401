//! Spin-3/2 operators, the drive Hamiltonian and the Lindblad operators.
//!
//! Basis order is `m = 3/2, 1/2, −1/2, −3/2`. Frequencies are in MHz and
//! times in µs, so `2π·H·t` is a phase.

use nalgebra::Matrix4;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CMatrix4 = Matrix4<Complex64>;

const SPIN: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SpinOperators {
    pub sx: CMatrix4,
    pub sy: CMatrix4,
    pub sz: CMatrix4,
}

/// Ladder construction: `⟨m+1|S₊|m⟩ = √(S(S+1) − m(m+1))`.
pub fn spin_operators() -> SpinOperators {
    let ms = [1.5, 0.5, -0.5, -1.5];
    let mut sp = CMatrix4::zeros();
    for j in 1..4 {
        let m = ms[j];
        sp[(j - 1, j)] = Complex64::new((SPIN * (SPIN + 1.0) - m * (m + 1.0)).sqrt(), 0.0);
    }
    let sm = sp.adjoint();
    let sx = (sp + sm) * Complex64::new(0.5, 0.0);
    let sy = (sp - sm) * Complex64::new(0.0, -0.5);
    let sz = CMatrix4::from_diagonal(&ms.map(|m| Complex64::new(m, 0.0)).into());
    SpinOperators { sx, sy, sz }
}

/// Drive and zero-field parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveConfig {
    /// RF coupling `Ω₁ = g·μ_B·B₁`, MHz.
    pub omega1_mhz: f64,
    /// RF frequency, MHz.
    pub omega_mhz: f64,
    /// Half the zero-field splitting, MHz.
    pub d_mhz: f64,
    pub duration_us: f64,
}

impl DriveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega1_mhz >= 0.0 && self.omega1_mhz.is_finite()) {
            return Err(Error::domain(format!(
                "Omega1 must be nonnegative, got {}",
                self.omega1_mhz
            )));
        }
        if !(self.duration_us > 0.0 && self.duration_us.is_finite()) {
            return Err(Error::domain(format!(
                "duration must be positive, got {}",
                self.duration_us
            )));
        }
        if !(self.omega_mhz.is_finite() && self.d_mhz.is_finite()) {
            return Err(Error::domain("drive frequency and D must be finite"));
        }
        Ok(())
    }
}

/// Static part `D(S_z² − S(S+1)/3)`.
pub fn zero_field_hamiltonian(d_mhz: f64) -> CMatrix4 {
    let s = spin_operators();
    let id = CMatrix4::identity() * Complex64::new(SPIN * (SPIN + 1.0) / 3.0, 0.0);
    (s.sz * s.sz - id) * Complex64::new(d_mhz, 0.0)
}

/// The RF coupling operator `S_x + S_z`.
pub fn drive_operator() -> CMatrix4 {
    let s = spin_operators();
    s.sx + s.sz
}

/// `H(t) = D(S_z² − 5/4) + Ω₁·cos(2πωt)·(S_x + S_z)`, no rotating-wave
/// approximation.
pub fn hamiltonian(t_us: f64, cfg: &DriveConfig) -> CMatrix4 {
    let drive = cfg.omega1_mhz * (2.0 * std::f64::consts::PI * cfg.omega_mhz * t_us).cos();
    zero_field_hamiltonian(cfg.d_mhz) + drive_operator() * Complex64::new(drive, 0.0)
}

/// Which sandwich the dissipator uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DissipatorOrdering {
    /// `LρL† − ½{L†L, ρ}`, trace preserving and completely positive.
    #[default]
    Canonical,
    /// `L†ρL − ½{L†L, ρ}`, the adjoint sandwich; for
    /// non-normal `L` it is not trace preserving.
    Swapped,
}

/// Relaxation, dephasing and optical pumping rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipatorSet {
    /// Spin-lattice rate α, ms⁻¹.
    pub alpha_per_ms: f64,
    /// Dephasing rate β, µs⁻¹.
    pub beta_per_us: f64,
    /// Optical pumping rate δ, ms⁻¹.
    pub delta_per_ms: f64,
    #[serde(default)]
    pub ordering: DissipatorOrdering,
}

impl DissipatorSet {
    pub fn new(alpha_per_ms: f64, beta_per_us: f64, delta_per_ms: f64) -> Self {
        Self {
            alpha_per_ms,
            beta_per_us,
            delta_per_ms,
            ordering: DissipatorOrdering::Canonical,
        }
    }

    pub fn none() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (n, v) in [
            ("alpha", self.alpha_per_ms),
            ("beta", self.beta_per_us),
            ("delta", self.delta_per_ms),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{n} must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }

    /// `[L_α, L_β, L_δ1, …, L_δ5]` with rates in µs⁻¹.
    ///
    /// `L_α = √2·[[0,√γ,0,0],[√γ,0,√α,0],[0,√α,0,√γ],[0,0,√γ,0]]` with
    /// `γ = 3α/4`, which equals `√(2α)·S_x`. `L_β = √(2β)·S_z`. Each
    /// `L_δi` is `√δ` times unit entries: δ1 `|1/2⟩⟨3/2|`, δ2 `|1/2⟩⟨−3/2|`,
    /// δ3 `|−1/2⟩⟨3/2|`, δ4 `|−1/2⟩⟨−3/2|`, δ5 `|1/2⟩⟨−1/2| + |−1/2⟩⟨1/2|`.
    pub fn operators(&self) -> Vec<CMatrix4> {
        let alpha = self.alpha_per_ms * 1e-3;
        let delta = self.delta_per_ms * 1e-3;
        let gamma = 0.75 * alpha;
        let r2 = 2f64.sqrt();
        let c = |x: f64| Complex64::new(x, 0.0);
        let mut l_alpha = CMatrix4::zeros();
        l_alpha[(0, 1)] = c(r2 * gamma.sqrt());
        l_alpha[(1, 0)] = c(r2 * gamma.sqrt());
        l_alpha[(1, 2)] = c(r2 * alpha.sqrt());
        l_alpha[(2, 1)] = c(r2 * alpha.sqrt());
        l_alpha[(2, 3)] = c(r2 * gamma.sqrt());
        l_alpha[(3, 2)] = c(r2 * gamma.sqrt());
        let l_beta = spin_operators().sz * c((2.0 * self.beta_per_us).sqrt());
        let unit = |entries: &[(usize, usize)]| {
            let mut m = CMatrix4::zeros();
            for &(i, j) in entries {
                m[(i, j)] = c(delta.sqrt());
            }
            m
        };
        vec![
            l_alpha,
            l_beta,
            unit(&[(1, 0)]),
            unit(&[(1, 3)]),
            unit(&[(2, 0)]),
            unit(&[(2, 3)]),
            unit(&[(1, 2), (2, 1)]),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &CMatrix4, b: &CMatrix4, tol: f64) -> bool {
        (a - b).iter().all(|z| z.norm() < tol)
    }

    #[test]
    fn spin_algebra() {
        let s = spin_operators();
        let i = Complex64::i();
        assert!(close(&(s.sx * s.sy - s.sy * s.sx), &(s.sz * i), 1e-14));
        assert!(close(&(s.sy * s.sz - s.sz * s.sy), &(s.sx * i), 1e-14));
        assert!(close(&(s.sz * s.sx - s.sx * s.sz), &(s.sy * i), 1e-14));
        let casimir = s.sx * s.sx + s.sy * s.sy + s.sz * s.sz;
        assert!(close(
            &casimir,
            &(CMatrix4::identity() * Complex64::new(3.75, 0.0)),
            1e-14
        ));
        for m in [&s.sx, &s.sy, &s.sz] {
            assert!(close(m, &m.adjoint(), 1e-15));
        }
        let d: Vec<f64> = (0..4).map(|k| s.sz[(k, k)].re).collect();
        assert_eq!(d, vec![1.5, 0.5, -0.5, -1.5]);
    }

    #[test]
    fn zero_field_splitting_is_2d() {
        let h = hamiltonian(
            0.3,
            &DriveConfig {
                omega1_mhz: 0.0,
                omega_mhz: 50.0,
                d_mhz: 35.0,
                duration_us: 1.0,
            },
        );
        let e: Vec<f64> = (0..4).map(|k| h[(k, k)].re).collect();
        assert_eq!(e, vec![35.0, -35.0, -35.0, 35.0]);
        assert!((e[0] - e[1] - 70.0).abs() < 1e-12);
    }

    #[test]
    fn hamiltonian_traceless_and_hermitian() {
        let cfg = DriveConfig {
            omega1_mhz: 8.0,
            omega_mhz: 37.0,
            d_mhz: 35.0,
            duration_us: 1.5,
        };
        for t in [0.0, 0.011, 0.37, 1.2] {
            let h = hamiltonian(t, &cfg);
            assert!(h.trace().norm() < 1e-13);
            assert!(close(&h, &h.adjoint(), 1e-15));
        }
        let zero = DriveConfig {
            d_mhz: 0.0,
            omega1_mhz: 0.0,
            ..cfg
        };
        assert!(close(&hamiltonian(0.2, &zero), &CMatrix4::zeros(), 1e-15));
    }

    #[test]
    fn relaxation_matrix_is_scaled_sx() {
        let d = DissipatorSet::new(7.0, 2.5, 185.0);
        let ops = d.operators();
        let sx = spin_operators().sx * Complex64::new((2.0 * 7e-3f64).sqrt(), 0.0);
        // γ = 3α/4 gives √(2γ) = √(2α)·√3/2, the S_x corner entries
        assert!(close(&ops[0], &sx, 1e-15));
        assert_eq!(ops.len(), 7);
        assert!((ops[2][(1, 0)].re - 0.185f64.sqrt()).abs() < 1e-15);
        assert!((ops[6][(2, 1)].re - 0.185f64.sqrt()).abs() < 1e-15);
    }
}
