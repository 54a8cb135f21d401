//! Spin-3/2 Lindblad simulation of zero-field ODMR under strong RF drive.
//!
//! The master equation is integrated in Liouville space with column-stacked
//! `vec(ρ)`, so `vec(AρB) = (Bᵀ ⊗ A)·vec(ρ)` and the whole right-hand side is
//! `(L₀ + cos(2πωt)·L₁)·vec(ρ)`.

mod config;
mod operators;
mod sweep;

use nalgebra::{SMatrix, SVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use config::{FrequencyGrid, SimConfig};
pub use operators::{
    drive_operator, hamiltonian, spin_operators, zero_field_hamiltonian, CMatrix4,
    DissipatorOrdering, DissipatorSet, DriveConfig, SpinOperators,
};
pub use sweep::{
    decompose_spectrum, linewidth_scan, odmr_sweep, odmr_sweep_with_diagnostics,
    ContrastObservable, LinewidthRow, LinewidthScan, SweepOptions,
};

pub type Superoperator = SMatrix<Complex64, 16, 16>;
pub type LiouvilleVector = SVector<Complex64, 16>;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Tolerances a physical state must meet.
pub const HERMITICITY_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-8;
pub const POSITIVITY_TOL: f64 = 1e-8;

/// A validated 4×4 density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    rho: CMatrix4,
}

impl DensityMatrix {
    pub fn new(rho: CMatrix4) -> Result<Self> {
        let d = StateDiagnostics::of(&rho);
        if d.hermiticity > HERMITICITY_TOL
            || d.trace_error > TRACE_TOL
            || d.min_eigenvalue < -POSITIVITY_TOL
        {
            return Err(Error::domain(format!(
                "not a density matrix: |rho - rho^H| = {:.2e}, |tr - 1| = {:.2e}, min eigenvalue = {:.2e}",
                d.hermiticity, d.trace_error, d.min_eigenvalue
            )));
        }
        Ok(Self { rho })
    }

    pub fn maximally_mixed() -> Self {
        Self {
            rho: CMatrix4::identity() * Complex64::new(0.25, 0.0),
        }
    }

    /// Diagonal state with the given populations (normalized here).
    pub fn from_populations(p: [f64; 4]) -> Result<Self> {
        let s: f64 = p.iter().sum();
        if p.iter().any(|&x| !(x >= 0.0)) || !(s > 0.0) {
            return Err(Error::domain(
                "populations must be nonnegative with positive sum",
            ));
        }
        Self::new(CMatrix4::from_diagonal(
            &p.map(|x| Complex64::new(x / s, 0.0)).into(),
        ))
    }

    pub fn matrix(&self) -> &CMatrix4 {
        &self.rho
    }

    /// Populations of `m = 3/2, 1/2, −1/2, −3/2`.
    pub fn populations(&self) -> [f64; 4] {
        [0, 1, 2, 3].map(|k| self.rho[(k, k)].re)
    }

    /// Total population of the `|±1/2⟩` doublet.
    pub fn half_population(&self) -> f64 {
        self.rho[(1, 1)].re + self.rho[(2, 2)].re
    }

    pub fn diagnostics(&self) -> StateDiagnostics {
        StateDiagnostics::of(&self.rho)
    }
}

/// Distance of a matrix from the set of density matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateDiagnostics {
    /// Largest entry of `|ρ − ρ†|`.
    pub hermiticity: f64,
    pub trace_error: f64,
    pub min_eigenvalue: f64,
}

impl StateDiagnostics {
    pub fn of(rho: &CMatrix4) -> Self {
        let hermiticity = (rho - rho.adjoint())
            .iter()
            .fold(0.0f64, |m, z| m.max(z.norm()));
        let herm = (rho + rho.adjoint()) * Complex64::new(0.5, 0.0);
        let min_eigenvalue = herm.symmetric_eigenvalues().min();
        Self {
            hermiticity,
            trace_error: (rho.trace() - Complex64::new(1.0, 0.0)).norm(),
            min_eigenvalue,
        }
    }

    /// Componentwise worst of two.
    pub fn worst(self, o: Self) -> Self {
        Self {
            hermiticity: self.hermiticity.max(o.hermiticity),
            trace_error: self.trace_error.max(o.trace_error),
            min_eigenvalue: self.min_eigenvalue.min(o.min_eigenvalue),
        }
    }
}

/// `dρ/dt` in matrix form, directly from the operators.
pub fn lindblad_rhs(
    rho: &CMatrix4,
    t_us: f64,
    cfg: &DriveConfig,
    diss: &DissipatorSet,
) -> CMatrix4 {
    let h = hamiltonian(t_us, cfg);
    let mut out = (h * rho - rho * h) * Complex64::new(0.0, -TWO_PI);
    for l in diss.operators() {
        let ld = l.adjoint();
        let k = ld * l;
        let jump = match diss.ordering {
            DissipatorOrdering::Canonical => l * rho * ld,
            DissipatorOrdering::Swapped => ld * rho * l,
        };
        out += jump - (k * rho + rho * k) * Complex64::new(0.5, 0.0);
    }
    out
}

/// `A ⊗ B` for 4×4 blocks.
fn kron(a: &CMatrix4, b: &CMatrix4) -> Superoperator {
    Superoperator::from_fn(|r, c| a[(r / 4, c / 4)] * b[(r % 4, c % 4)])
}

/// Superoperator of `X ↦ A X B`.
fn sandwich(a: &CMatrix4, b: &CMatrix4) -> Superoperator {
    kron(&b.transpose(), a)
}

fn commutator_super(h: &CMatrix4) -> Superoperator {
    let id = CMatrix4::identity();
    sandwich(h, &id) - sandwich(&id, h)
}

/// Time-independent and drive parts of the Liouvillian.
#[derive(Debug, Clone, PartialEq)]
pub struct Liouvillian {
    pub static_part: Superoperator,
    /// Multiplied by `cos(2πωt)`.
    pub drive_part: Superoperator,
    pub omega_mhz: f64,
}

impl Liouvillian {
    pub fn new(cfg: &DriveConfig, diss: &DissipatorSet) -> Self {
        let mi = Complex64::new(0.0, -TWO_PI);
        let mut l0 = commutator_super(&zero_field_hamiltonian(cfg.d_mhz)) * mi;
        let id = CMatrix4::identity();
        let half = Complex64::new(0.5, 0.0);
        for l in diss.operators() {
            let ld = l.adjoint();
            let k = ld * l;
            l0 += match diss.ordering {
                DissipatorOrdering::Canonical => sandwich(&l, &ld),
                DissipatorOrdering::Swapped => sandwich(&ld, &l),
            };
            l0 -= (sandwich(&k, &id) + sandwich(&id, &k)) * half;
        }
        let drive_part = commutator_super(&drive_operator()) * (mi * cfg.omega1_mhz);
        Self {
            static_part: l0,
            drive_part,
            omega_mhz: cfg.omega_mhz,
        }
    }

    pub fn at(&self, t_us: f64) -> Superoperator {
        self.static_part
            + self.drive_part * Complex64::new((TWO_PI * self.omega_mhz * t_us).cos(), 0.0)
    }

    fn apply(&self, t_us: f64, y: &LiouvilleVector) -> LiouvilleVector {
        self.static_part * y + (self.drive_part * y) * re((TWO_PI * self.omega_mhz * t_us).cos())
    }
}

pub fn to_liouville(rho: &CMatrix4) -> LiouvilleVector {
    LiouvilleVector::from_column_slice(rho.as_slice())
}

pub fn from_liouville(v: &LiouvilleVector) -> CMatrix4 {
    CMatrix4::from_column_slice(v.as_slice())
}

/// Stationary state of the drive-free dynamics, the null vector of `L₀`.
///
/// Fails when the null space is not one-dimensional.
pub fn steady_state(diss: &DissipatorSet, d_mhz: f64) -> Result<DensityMatrix> {
    diss.validate()?;
    let cfg = DriveConfig {
        omega1_mhz: 0.0,
        omega_mhz: 0.0,
        d_mhz,
        duration_us: 1.0,
    };
    let l0 = Liouvillian::new(&cfg, diss).static_part;
    let svd = l0.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut idx: Vec<usize> = (0..16).collect();
    idx.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let (s0, s1) = (svd.singular_values[idx[0]], svd.singular_values[idx[1]]);
    let scale = svd.singular_values.max().max(f64::MIN_POSITIVE);
    if s1 <= 1e-10 * scale {
        return Err(Error::Configuration(format!(
            "stationary state is not unique (second singular value {s1:.3e}); add relaxation or pumping"
        )));
    }
    let v = LiouvilleVector::from_fn(|i, _| v_t[(idx[0], i)].conj());
    let mut rho = from_liouville(&v);
    let tr = rho.trace();
    if tr.norm() < 1e-12 || s0 > 1e-8 * scale {
        return Err(Error::Integration(format!(
            "no stationary state: smallest singular value {s0:.3e}"
        )));
    }
    rho /= tr;
    DensityMatrix::new(rho)
}

/// Adaptive Dormand–Prince 5(4) settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Upper step bound; defaults to `1/(20·max(ω, Ω₁))`.
    pub max_step_us: Option<f64>,
    /// Keep every accepted state.
    pub record: bool,
    /// Fail on invariant breach at any accepted step.
    pub check_invariants: bool,
    /// Stop after this many steps.
    pub max_steps: usize,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-11,
            max_step_us: None,
            record: false,
            check_invariants: true,
            max_steps: 5_000_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Evolution {
    pub final_state: CMatrix4,
    pub times_us: Vec<f64>,
    /// Accepted states when `record` was set.
    pub states: Vec<CMatrix4>,
    /// Worst values seen over all accepted steps.
    pub diagnostics: StateDiagnostics,
    pub accepted: usize,
    pub rejected: usize,
    /// `∫ P±1/2 dt / T` over the window, by the trapezoid rule.
    pub mean_half_population: f64,
}

const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates from `rho0` over `cfg.duration_us`.
pub fn evolve(
    rho0: &DensityMatrix,
    cfg: &DriveConfig,
    diss: &DissipatorSet,
    opts: &EvolveOptions,
) -> Result<Evolution> {
    cfg.validate()?;
    diss.validate()?;
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(Error::domain("tolerances must be positive"));
    }
    let lv = Liouvillian::new(cfg, diss);
    let t_end = cfg.duration_us;
    let fastest = cfg.omega_mhz.abs().max(cfg.omega1_mhz).max(cfg.d_mhz.abs());
    let h_max = opts
        .max_step_us
        .unwrap_or(if fastest > 0.0 {
            1.0 / (20.0 * fastest)
        } else {
            t_end / 20.0
        })
        .min(t_end);

    let mut y = to_liouville(rho0.matrix());
    let mut t = 0.0;
    let mut h = h_max;
    let mut k = [LiouvilleVector::zeros(); 7];
    k[0] = lv.apply(t, &y);
    let mut out = Evolution {
        final_state: *rho0.matrix(),
        times_us: vec![0.0],
        states: if opts.record {
            vec![*rho0.matrix()]
        } else {
            Vec::new()
        },
        diagnostics: rho0.diagnostics(),
        accepted: 0,
        rejected: 0,
        mean_half_population: 0.0,
    };
    let half_pop = |v: &LiouvilleVector| v[5].re + v[10].re;
    let mut area = 0.0;

    while t < t_end * (1.0 - 1e-14) {
        if out.accepted + out.rejected >= opts.max_steps {
            return Err(Error::Integration(format!(
                "step budget of {} exhausted at t = {t:.6} us; loosen the tolerance",
                opts.max_steps
            )));
        }
        h = h.min(t_end - t);
        for s in 1..7 {
            let mut ys = y;
            for (j, &a) in DP_A[s][..s].iter().enumerate() {
                if a != 0.0 {
                    ys += k[j] * re(h * a);
                }
            }
            k[s] = lv.apply(t + DP_C[s] * h, &ys);
        }
        let mut y_new = y;
        let mut err_vec = LiouvilleVector::zeros();
        for s in 0..7 {
            if DP_B[s] != 0.0 {
                y_new += k[s] * re(h * DP_B[s]);
            }
            if DP_E[s] != 0.0 {
                err_vec += k[s] * re(h * DP_E[s]);
            }
        }
        let err = err_vec
            .iter()
            .zip(y.iter().zip(y_new.iter()))
            .map(|(e, (a, b))| e.norm() / (opts.atol + opts.rtol * a.norm().max(b.norm())))
            .fold(0.0f64, f64::max);
        if !err.is_finite() {
            return Err(Error::Integration(format!(
                "non-finite state at t = {t:.6} us"
            )));
        }
        if err <= 1.0 {
            area += 0.5 * h * (half_pop(&y) + half_pop(&y_new));
            t += h;
            y = y_new;
            k[0] = k[6];
            out.accepted += 1;
            let rho = from_liouville(&y);
            if opts.check_invariants {
                let d = StateDiagnostics::of(&rho);
                out.diagnostics = out.diagnostics.worst(d);
                if d.trace_error > TRACE_TOL || d.hermiticity > 1e-9 || d.min_eigenvalue < -1e-7 {
                    return Err(Error::Integration(format!(
                        "state left the physical set at t = {t:.6} us (|tr - 1| = {:.2e}, hermiticity {:.2e}, \
                         min eigenvalue {:.2e}); reduce rtol/atol",
                        d.trace_error, d.hermiticity, d.min_eigenvalue
                    )));
                }
            }
            out.times_us.push(t);
            if opts.record {
                out.states.push(rho);
            }
        } else {
            out.rejected += 1;
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h = (h * factor).min(h_max);
        if h < 1e-14 * t_end {
            return Err(Error::Integration(format!(
                "step size underflow at t = {t:.6} us"
            )));
        }
    }
    out.final_state = from_liouville(&y);
    out.mean_half_population = area / t_end;
    Ok(out)
}
