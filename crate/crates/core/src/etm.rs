//! Event-trigger parameter design with built-in Zeno-excluding dwell times.
//!
//! Configuration `b` places one triggering mechanism in the controller
//! channel: the input is refreshed at
//! `t_{k+1} = inf { t >= t_k + tau : |xhat_s - xhat| > sigma |xhat| + eps }`.
//! Configuration `c` adds an asynchronous mechanism in the output channel
//! with its own `(sigma_y, eps_y, tau_y)`.
//!
//! The designed `sigma` ties the triggering threshold to the certificate's
//! decay budget; `tau` is the time the normalized held-value error
//! `v = |xhat_e| / (sqrt(2) sigma |z| + eps)` needs to climb from 0 to 1,
//! obtained by integrating a scalar comparison ODE of the form
//! `dphi/dt = a (b + c phi)(1 + d phi)`. Both are strictly positive for
//! finite data, so inter-event times are bounded below by construction,
//! with or without disturbances.

use core::fmt;

use crate::iqc::PlantModel;
use crate::mat::{self};
use crate::synthesis::{closed_loop_matrices, GainSet, StabilityCertificate};

#[cfg(test)]
use crate::mat::Mat;

/// Parameters of one triggering channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerChannel {
    /// Relative threshold.
    pub sigma: f64,
    /// Absolute threshold.
    pub eps: f64,
    /// Built-in dwell time (seconds).
    pub tau: f64,
}

/// Which channels carry a triggering mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EtmConfig {
    /// Configuration `b`: controller channel only.
    ControllerOnly,
    /// Configuration `c`: controller and output channels, asynchronous.
    Dual,
}

/// Threshold-selection variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerVariant {
    /// `sigma` at its closed-form value; valid whenever the certificate
    /// bounds `dV/dt <= -alpha0 V + mu |w|^2`.
    Standard,
    /// Noise-free output (`Fw = 0`): `sigma` may be anything in the open
    /// interval below the closed-form value; the midpoint is taken.
    NoiseFree,
}

/// Intermediate constants of a trigger design, kept for reporting and for
/// audit slack computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerConstants {
    /// Controller-channel coupling constant; in the dual configuration this
    /// is `s1` and `s2` holds the output-channel constant.
    pub s1: f64,
    pub s2: Option<f64>,
    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
    /// Configuration `b`: the drive constant of the dwell ODE. Dual
    /// configuration: the held-output sensitivity `ell |H2| |L1| + |H6|`.
    pub eta4: f64,
    /// Dual configuration: drive constant of the controller-channel ODE.
    pub eta5: Option<f64>,
    /// Dual configuration: drive constant of the output-channel ODE.
    pub eta6: Option<f64>,
    pub d1: Option<f64>,
    pub d2: Option<f64>,
    pub rho: f64,
    /// Decay-split constant, fixed at half its admissible supremum
    /// `(1 - rho) alpha0 lmin(P)`; affects reported ultimate bounds only.
    pub c: f64,
    pub a1: Option<f64>,
    pub a2: Option<f64>,
    pub omega0: f64,
    pub ell: f64,
}

/// A complete trigger design.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerDesign {
    pub controller: TriggerChannel,
    pub output: Option<TriggerChannel>,
    pub constants: TriggerConstants,
    pub config: EtmConfig,
    pub noise_free: bool,
}

/// Relative threshold used when a coupling constant vanishes (e.g. zero
/// feedback gains make the trigger unconstrained); any positive value is
/// then admissible and this documented cap is used.
pub const SIGMA_CAP: f64 = 1.0;

/// `dphi/dt = a (b + c phi)(1 + d phi)`, `phi(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DwellOde {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl DwellOde {
    #[inline]
    pub fn rate(&self, phi: f64) -> f64 {
        self.a * (self.b + self.c * phi) * (1.0 + self.d * phi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EtmError {
    /// The dwell ODE would not reach the target (`a * b <= 0`).
    NonIncreasingOde,
    /// A global Lipschitz constant is required and was absent or invalid.
    NonLipschitz,
    /// The dual configuration requires `D = 0`.
    DNotZero,
    /// The noise-free variant requires `Fw = 0`.
    NoiseFreeNeedsFwZero,
    BadParameter(&'static str),
}

impl fmt::Display for EtmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EtmError::NonIncreasingOde => write!(f, "dwell ODE is not strictly increasing"),
            EtmError::NonLipschitz => {
                write!(f, "a finite nonnegative global Lipschitz constant is required")
            }
            EtmError::DNotZero => write!(f, "dual-channel design requires D = 0"),
            EtmError::NoiseFreeNeedsFwZero => {
                write!(f, "noise-free variant requires Fw = 0")
            }
            EtmError::BadParameter(s) => write!(f, "bad parameter: {s}"),
        }
    }
}

fn rk4_step(ode: &DwellOde, phi: f64, h: f64) -> f64 {
    let k1 = ode.rate(phi);
    let k2 = ode.rate(phi + 0.5 * h * k1);
    let k3 = ode.rate(phi + 0.5 * h * k2);
    let k4 = ode.rate(phi + h * k3);
    phi + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

fn integrate_to(ode: &DwellOde, phi0: f64, span: f64, substeps: usize) -> f64 {
    let h = span / substeps as f64;
    let mut phi = phi0;
    for _ in 0..substeps {
        phi = rk4_step(ode, phi, h);
    }
    phi
}

/// Time for the ODE solution started at zero to reach `target`.
///
/// Integration uses step doubling/halving on a local error estimate, then
/// bisects inside the bracketing step; the returned time satisfies
/// `|phi(tau) - target| <= 1e-9 * max(1, target)` under the numerical flow.
pub fn dwell_time(ode: &DwellOde, target: f64) -> Result<f64, EtmError> {
    if !(ode.a > 0.0 && ode.b > 0.0 && ode.c >= 0.0 && ode.d >= 0.0) {
        return Err(EtmError::NonIncreasingOde);
    }
    if !(target > 0.0) || !target.is_finite() {
        return Err(EtmError::BadParameter("target must be positive and finite"));
    }
    let tol = 1e-12;
    let mut t = 0.0;
    let mut phi = 0.0;
    // the rate is at least a*b, so the crossing happens by target/(a*b)
    let mut h = (target / ode.rate(0.0) / 64.0).min(1.0);
    loop {
        let one = rk4_step(ode, phi, h);
        let two = integrate_to(ode, phi, h, 2);
        let err = mat::fabs(one - two);
        if err > tol * two.abs().max(1.0) && h > 1e-300 {
            h *= 0.5;
            continue;
        }
        if two >= target || !two.is_finite() {
            // bracketing step found; bisect the fractional step
            let mut lo = 0.0f64;
            let mut hi = h;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let val = integrate_to(ode, phi, mid, 8);
                if !val.is_finite() || val >= target {
                    hi = mid;
                } else {
                    lo = mid;
                }
                let val_hi = integrate_to(ode, phi, 0.5 * (lo + hi), 8);
                if mat::fabs(val_hi - target) <= 1e-10 * target.max(1.0) {
                    break;
                }
            }
            return Ok(t + 0.5 * (lo + hi));
        }
        phi = two;
        t += h;
        if err < tol * 1e-2 {
            h *= 2.0;
        }
        if t > 1e12 {
            return Err(EtmError::NonIncreasingOde);
        }
    }
}

struct NormPack {
    lambda_min_p: f64,
    eta1: f64,
    eta2: f64,
    eta3: f64,
    n_h2: f64,
    n_h6: f64,
    n_c: f64,
    s1: f64,
    s2: f64,
}

fn norms(
    plant: &PlantModel,
    gains: &GainSet,
    cert: &StabilityCertificate,
    ell: f64,
) -> Result<NormPack, EtmError> {
    let cl = closed_loop_matrices(plant, gains).map_err(|_| EtmError::BadParameter("gains"))?;
    let p = &cert.p;
    if p.shape() != (2 * plant.nx(), 2 * plant.nx()) {
        return Err(EtmError::BadParameter("certificate size"));
    }
    let lambda_min_p =
        mat::lambda_min(&p.symmetrized()).map_err(|_| EtmError::BadParameter("P"))?;
    if lambda_min_p <= 0.0 {
        return Err(EtmError::BadParameter("P must be positive definite"));
    }
    let n_cq = plant.cq.fro_norm();
    let b1 = cl.h1.fro_norm() * n_cq;
    let b2 = cl.h2.fro_norm() * (&plant.cq + &(&gains.l1 * &plant.c)).fro_norm()
        + cl.h3.fro_norm() * n_cq;
    let eta1 = cl.a_c.fro_norm() + ell * mat::sqrt(b1 * b1 + b2 * b2);
    let eta2 = cl.h5.fro_norm() + ell * cl.h3.fro_norm() * n_cq;
    let eta3 = ell * cl.h2.fro_norm() * (&gains.l1 * &plant.fw).fro_norm() + cl.h4.fro_norm();
    let s1 = (p * &cl.h5).fro_norm() + ell * (p * &cl.h3).fro_norm() * n_cq;
    let s2 = (p * &cl.h6).fro_norm() + ell * (p * &cl.h2).fro_norm() * gains.l1.fro_norm();
    Ok(NormPack {
        lambda_min_p,
        eta1,
        eta2,
        eta3,
        n_h2: cl.h2.fro_norm(),
        n_h6: cl.h6.fro_norm(),
        n_c: plant.c.fro_norm(),
        s1,
        s2,
    })
}

fn check_common(
    rho: f64,
    omega0: f64,
    ell: f64,
    cert: &StabilityCertificate,
) -> Result<(), EtmError> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(EtmError::BadParameter("rho must lie in (0, 1)"));
    }
    if !(omega0 >= 0.0) || !omega0.is_finite() {
        return Err(EtmError::BadParameter("omega0 must be nonnegative"));
    }
    if !(ell >= 0.0) || !ell.is_finite() {
        return Err(EtmError::NonLipschitz);
    }
    if !(cert.alpha0 > 0.0) {
        return Err(EtmError::BadParameter("alpha0 must be positive"));
    }
    Ok(())
}

/// Designs the controller-channel trigger (configuration `b`).
///
/// `sigma = rho alpha0 lmin(P) / (2 sqrt(2) s)` with
/// `s = |P H5| + ell |P H3| |Cq|`; when `s = 0` the trigger is
/// unconstrained and `sigma` is set to [`SIGMA_CAP`]. `tau` solves
/// `phi(tau) = 1` for `dphi/dt = sqrt(2)(eta4 + eta2 phi)(1 + sigma phi)`.
#[allow(clippy::too_many_arguments)]
pub fn trigger_config_b(
    plant: &PlantModel,
    gains: &GainSet,
    cert: &StabilityCertificate,
    ell: f64,
    omega0: f64,
    rho: f64,
    eps: f64,
    variant: TriggerVariant,
) -> Result<TriggerDesign, EtmError> {
    check_common(rho, omega0, ell, cert)?;
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(EtmError::BadParameter("eps must be positive"));
    }
    if variant == TriggerVariant::NoiseFree && plant.fw.fro_norm() != 0.0 {
        return Err(EtmError::NoiseFreeNeedsFwZero);
    }
    let np = norms(plant, gains, cert, ell)?;
    let budget = rho * cert.alpha0 * np.lambda_min_p;
    let sigma_sup = if np.s1 > 0.0 { budget / (2.0 * mat::sqrt(2.0) * np.s1) } else { f64::INFINITY };
    let sigma = match variant {
        _ if !sigma_sup.is_finite() => SIGMA_CAP,
        TriggerVariant::Standard => sigma_sup,
        TriggerVariant::NoiseFree => 0.5 * sigma_sup,
    };
    let eta4 = np.eta1 / (mat::sqrt(2.0) * sigma) + np.eta3 * omega0 / eps;
    let ode = DwellOde { a: mat::sqrt(2.0), b: eta4, c: np.eta2, d: sigma };
    let tau = dwell_time(&ode, 1.0)?;
    let c = 0.5 * (1.0 - rho) * cert.alpha0 * np.lambda_min_p;
    Ok(TriggerDesign {
        controller: TriggerChannel { sigma, eps, tau },
        output: None,
        constants: TriggerConstants {
            s1: np.s1,
            s2: None,
            eta1: np.eta1,
            eta2: np.eta2,
            eta3: np.eta3,
            eta4,
            eta5: None,
            eta6: None,
            d1: None,
            d2: None,
            rho,
            c,
            a1: None,
            a2: None,
            omega0,
            ell,
        },
        config: EtmConfig::ControllerOnly,
        noise_free: variant == TriggerVariant::NoiseFree,
    })
}

/// Designs the dual asynchronous triggers (configuration `c`); requires
/// `D = 0` and a decay split `a1 + a2 = 1`, `a1, a2 in (0, 1)`.
///
/// Thresholds: `sigma_u = a1 rho alpha0 lmin(P) / (2 sqrt(2) s1)`,
/// `sigma_y = a2 rho alpha0 lmin(P) / (2 |C| s2)`. Dwell times solve the
/// two comparison ODEs
///
/// ```text
/// dphi_u/dt = sqrt(2) (1 + sigma_u phi_u)(eta5 + eta2 phi_u + d1 eta4)
/// dphi_y/dt = |C|     (1 + sigma_y phi_y)(eta6 + eta4 phi_y + d2 eta2)
/// ```
#[allow(clippy::too_many_arguments)]
pub fn trigger_config_c(
    plant: &PlantModel,
    gains: &GainSet,
    cert: &StabilityCertificate,
    ell: f64,
    omega0: f64,
    rho: f64,
    a1: f64,
    a2: f64,
    eps_u: f64,
    eps_y: f64,
    variant: TriggerVariant,
) -> Result<TriggerDesign, EtmError> {
    check_common(rho, omega0, ell, cert)?;
    if plant.d.fro_norm() != 0.0 {
        return Err(EtmError::DNotZero);
    }
    if !(eps_u > 0.0 && eps_y > 0.0) {
        return Err(EtmError::BadParameter("eps must be positive"));
    }
    if !(a1 > 0.0 && a1 < 1.0 && a2 > 0.0 && a2 < 1.0) || mat::fabs(a1 + a2 - 1.0) > 1e-12 {
        return Err(EtmError::BadParameter("need a1, a2 in (0,1) with a1 + a2 = 1"));
    }
    if variant == TriggerVariant::NoiseFree && plant.fw.fro_norm() != 0.0 {
        return Err(EtmError::NoiseFreeNeedsFwZero);
    }
    let np = norms(plant, gains, cert, ell)?;
    let budget = rho * cert.alpha0 * np.lambda_min_p;
    let halve = if variant == TriggerVariant::NoiseFree { 0.5 } else { 1.0 };
    let sigma_u = if np.s1 > 0.0 {
        halve * a1 * budget / (2.0 * mat::sqrt(2.0) * np.s1)
    } else {
        SIGMA_CAP
    };
    let sigma_y = if np.s2 > 0.0 && np.n_c > 0.0 {
        halve * a2 * budget / (2.0 * np.n_c * np.s2)
    } else {
        SIGMA_CAP
    };

    let eta4 = ell * np.n_h2 * gains.l1.fro_norm() + np.n_h6;
    let eta5 = np.eta1 / (mat::sqrt(2.0) * sigma_u) + np.eta3 * omega0 / eps_u;
    let eta6 = np.eta1 / (sigma_y * np.n_c.max(1e-300)) + np.eta3 * omega0 / eps_y;
    let d1 = (eps_y / eps_u).max(sigma_y * np.n_c / (mat::sqrt(2.0) * sigma_u));
    let d2 = (eps_u / eps_y).max(mat::sqrt(2.0) * sigma_u / (sigma_y * np.n_c.max(1e-300)));

    let ode_u = DwellOde { a: mat::sqrt(2.0), b: eta5 + d1 * eta4, c: np.eta2, d: sigma_u };
    let tau_u = dwell_time(&ode_u, 1.0)?;
    let ode_y =
        DwellOde { a: np.n_c.max(1e-300), b: eta6 + d2 * np.eta2, c: eta4, d: sigma_y };
    let tau_y = dwell_time(&ode_y, 1.0)?;
    let c = 0.5 * (1.0 - rho) * cert.alpha0 * np.lambda_min_p;

    Ok(TriggerDesign {
        controller: TriggerChannel { sigma: sigma_u, eps: eps_u, tau: tau_u },
        output: Some(TriggerChannel { sigma: sigma_y, eps: eps_y, tau: tau_y }),
        constants: TriggerConstants {
            s1: np.s1,
            s2: Some(np.s2),
            eta1: np.eta1,
            eta2: np.eta2,
            eta3: np.eta3,
            eta4,
            eta5: Some(eta5),
            eta6: Some(eta6),
            d1: Some(d1),
            d2: Some(d2),
            rho,
            c,
            a1: Some(a1),
            a2: Some(a2),
            omega0,
            ell,
        },
        config: EtmConfig::Dual,
        noise_free: variant == TriggerVariant::NoiseFree,
    })
}

/// The dwell ODEs of a design, in channel order (controller, then output
/// when present); used by audits and oracles.
pub fn design_odes(design: &TriggerDesign, plant: &PlantModel) -> alloc::vec::Vec<DwellOde> {
    let k = &design.constants;
    match design.config {
        EtmConfig::ControllerOnly => alloc::vec![DwellOde {
            a: mat::sqrt(2.0),
            b: k.eta4,
            c: k.eta2,
            d: design.controller.sigma,
        }],
        EtmConfig::Dual => {
            let ode_u = DwellOde {
                a: mat::sqrt(2.0),
                b: k.eta5.unwrap() + k.d1.unwrap() * k.eta4,
                c: k.eta2,
                d: design.controller.sigma,
            };
            let out = design.output.as_ref().unwrap();
            let ode_y = DwellOde {
                a: plant.c.fro_norm().max(1e-300),
                b: k.eta6.unwrap() + k.d2.unwrap() * k.eta2,
                c: k.eta4,
                d: out.sigma,
            };
            alloc::vec![ode_u, ode_y]
        }
    }
}
