//! Fixed-step closed-loop simulation of the three configurations:
//!
//! * `a` — continuous observer-based feedback,
//! * `b` — event-triggered controller channel (held observer state),
//! * `c` — dual asynchronous triggers (held observer state and held
//!   output sample feeding the observer).
//!
//! Integration is classical fixed-step RK4 on the coupled plant/observer
//! state. Held values and the disturbance stay constant across each step
//! (sample and hold). Trigger rules are evaluated at grid points, dwell
//! guard first; with the step bounded by a quarter of every active dwell
//! time the discretization error stays below the threshold scale, which is
//! the documented fidelity knob.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::etm::{EtmConfig, TriggerDesign};
use crate::iqc::{Nonlinearity, PlantModel};
use crate::mat::{self, Mat};
use crate::rng::Lcg64;
use crate::synthesis::GainSet;

/// Closed-loop configuration selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Configuration {
    /// Continuous feedback (`a`).
    Continuous,
    /// Controller-channel trigger (`b`).
    EtmController,
    /// Dual asynchronous triggers (`c`).
    EtmDual,
}

/// Disturbance specification. `UniformBox` draws each component i.i.d.
/// uniform on `[-omega0, omega0]`, holding the draw across one step;
/// `Custom` supplies the per-step held values directly.
#[derive(Debug, Clone)]
pub enum Disturbance {
    Zero,
    UniformBox { omega0: f64, seed: u64 },
    Custom(Vec<Vec<f64>>),
}

/// Simulation request.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub configuration: Configuration,
    /// Horizon in seconds.
    pub horizon: f64,
    /// Step in seconds; must not exceed a quarter of any active dwell time.
    pub step: f64,
    pub x0: Vec<f64>,
    pub xhat0: Vec<f64>,
    pub disturbance: Disturbance,
    pub trigger: Option<TriggerDesign>,
}

/// Recorded trajectory. All series have one row per grid point;
/// `events_u` / `events_y` list the trigger instants (the initial sample
/// at `t = 0` counts as an update on each active channel).
#[derive(Debug, Clone)]
pub struct SimTrace {
    pub times: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub xhat: Vec<Vec<f64>>,
    /// Estimation error `e = x - xhat`.
    pub err: Vec<Vec<f64>>,
    /// Input applied over `[t_n, t_{n+1})` (piecewise constant under ETM).
    pub u: Vec<Vec<f64>>,
    /// Disturbance held from `t_n`.
    pub w: Vec<Vec<f64>>,
    /// Held observer state (ETM configurations), bit-identical between
    /// events.
    pub xhat_held: Vec<Vec<f64>>,
    /// Held output sample (dual configuration only).
    pub y_held: Vec<Vec<f64>>,
    pub events_u: Vec<f64>,
    pub events_y: Vec<f64>,
    /// Lyapunov series, attached by [`lyapunov_trace`].
    pub v: Option<Vec<f64>>,
    pub step: f64,
    pub configuration: Configuration,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Stacked `(x; e)` coordinates at sample `i`.
    pub fn z_at(&self, i: usize) -> Vec<f64> {
        let mut z = self.x[i].clone();
        z.extend_from_slice(&self.err[i]);
        z
    }
}

#[derive(Debug)]
pub enum SimError {
    Shape(&'static str),
    MissingTrigger,
    /// `h` exceeds a quarter of an active dwell time.
    StepTooLarge { step: f64, tau: f64 },
    DNotZero,
    /// State blew past the guard; carries the partial trace.
    NonFiniteState { t: f64, trace: Box<SimTrace> },
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::Shape(s) => write!(f, "{s}"),
            SimError::MissingTrigger => write!(f, "configuration requires a trigger design"),
            SimError::StepTooLarge { step, tau } => {
                write!(f, "step {step} too large for dwell time {tau} (need step <= tau/4)")
            }
            SimError::DNotZero => write!(f, "dual configuration requires D = 0"),
            SimError::NonFiniteState { t, .. } => {
                write!(f, "state escaped the finiteness guard at t = {t}")
            }
        }
    }
}

/// Per-step held disturbance samples: `n_samples` rows of `nw` i.i.d.
/// uniform draws on `[-omega0, omega0]`, deterministic per seed.
pub fn disturbance_uniform(omega0: f64, seed: u64, n_samples: usize, nw: usize) -> Vec<Vec<f64>> {
    let mut rng = Lcg64::new(seed);
    (0..n_samples)
        .map(|_| (0..nw).map(|_| rng.uniform(-omega0, omega0)).collect())
        .collect()
}

fn control(gains: &GainSet, p: &Nonlinearity, cq: &Mat, xs: &[f64], buf_q: &mut [f64]) -> Vec<f64> {
    cq.mul_vec_into(xs, buf_q);
    let pv = p.eval(buf_q);
    let mut u = gains.k1.mul_vec(xs);
    let kp = gains.k2.mul_vec(&pv);
    for (ui, ki) in u.iter_mut().zip(&kp) {
        *ui += ki;
    }
    u
}

fn norm2(v: &[f64]) -> f64 {
    mat::sqrt(v.iter().map(|a| a * a).sum())
}

/// Simulates the closed loop. See the module docs for the configuration
/// semantics; the error variant `NonFiniteState` carries the partial trace
/// recorded up to the blow-up.
pub fn simulate(
    plant: &PlantModel,
    gains: &GainSet,
    p: &Nonlinearity,
    cfg: &SimConfig,
) -> Result<SimTrace, SimError> {
    gains.check_shapes(plant).map_err(|_| SimError::Shape("gain shapes"))?;
    let nx = plant.nx();
    let (nq, np_, nw, ny) = (plant.nq(), plant.np(), plant.nw(), plant.ny());
    if p.nq() != nq || p.np() != np_ {
        return Err(SimError::Shape("nonlinearity dimensions"));
    }
    if cfg.x0.len() != nx || cfg.xhat0.len() != nx {
        return Err(SimError::Shape("initial state dimensions"));
    }
    if !(cfg.step > 0.0) || !(cfg.horizon > 0.0) {
        return Err(SimError::Shape("step and horizon must be positive"));
    }

    let trigger = match cfg.configuration {
        Configuration::Continuous => None,
        Configuration::EtmController | Configuration::EtmDual => {
            let t = cfg.trigger.as_ref().ok_or(SimError::MissingTrigger)?;
            match (cfg.configuration, t.config) {
                (Configuration::EtmController, EtmConfig::ControllerOnly)
                | (Configuration::EtmDual, EtmConfig::Dual) => {}
                _ => return Err(SimError::Shape("trigger design does not match configuration")),
            }
            if cfg.step > t.controller.tau / 4.0 {
                return Err(SimError::StepTooLarge { step: cfg.step, tau: t.controller.tau });
            }
            if let Some(out) = &t.output {
                if cfg.step > out.tau / 4.0 {
                    return Err(SimError::StepTooLarge { step: cfg.step, tau: out.tau });
                }
            }
            Some(t)
        }
    };
    if cfg.configuration == Configuration::EtmDual && plant.d.fro_norm() != 0.0 {
        return Err(SimError::DNotZero);
    }

    let steps = libm::round(cfg.horizon / cfg.step) as usize;
    let h = cfg.step;
    let w_series: Vec<Vec<f64>> = match &cfg.disturbance {
        Disturbance::Zero => vec![vec![0.0; nw]; steps + 1],
        Disturbance::UniformBox { omega0, seed } => {
            disturbance_uniform(*omega0, *seed, steps + 1, nw)
        }
        Disturbance::Custom(rows) => {
            if rows.len() < steps + 1 || rows.iter().any(|r| r.len() != nw) {
                return Err(SimError::Shape("custom disturbance series too short or miss-sized"));
            }
            rows.clone()
        }
    };

    // state = (x; xhat)
    let mut state = vec![0.0; 2 * nx];
    state[..nx].copy_from_slice(&cfg.x0);
    state[nx..].copy_from_slice(&cfg.xhat0);

    let mut xs = cfg.xhat0.clone(); // held observer state
    let mut buf_q = vec![0.0; nq];
    let mut u_held = control(gains, p, &plant.cq, &xs, &mut buf_q);
    // held output sample (dual): y(0) = C x0 + Fw w0
    let mut ys = {
        let mut y = plant.c.mul_vec(&cfg.x0);
        let fww = plant.fw.mul_vec(&w_series[0]);
        for (yi, fi) in y.iter_mut().zip(&fww) {
            *yi += fi;
        }
        y
    };

    let mut trace = SimTrace {
        times: Vec::with_capacity(steps + 1),
        x: Vec::with_capacity(steps + 1),
        xhat: Vec::with_capacity(steps + 1),
        err: Vec::with_capacity(steps + 1),
        u: Vec::with_capacity(steps + 1),
        w: Vec::with_capacity(steps + 1),
        xhat_held: Vec::new(),
        y_held: Vec::new(),
        events_u: Vec::new(),
        events_y: Vec::new(),
        v: None,
        step: h,
        configuration: cfg.configuration,
    };
    let etm = cfg.configuration != Configuration::Continuous;
    let dual = cfg.configuration == Configuration::EtmDual;
    if etm {
        trace.events_u.push(0.0);
    }
    if dual {
        trace.events_y.push(0.0);
    }
    let mut last_u = 0.0f64;
    let mut last_y = 0.0f64;

    let record = |trace: &mut SimTrace,
                  t: f64,
                  state: &[f64],
                  u: &[f64],
                  w: &[f64],
                  xs: &[f64],
                  ys: &[f64],
                  etm: bool,
                  dual: bool| {
        trace.times.push(t);
        trace.x.push(state[..nx].to_vec());
        trace.xhat.push(state[nx..].to_vec());
        trace.err.push(state[..nx].iter().zip(&state[nx..]).map(|(a, b)| a - b).collect());
        trace.u.push(u.to_vec());
        trace.w.push(w.to_vec());
        if etm {
            trace.xhat_held.push(xs.to_vec());
        }
        if dual {
            trace.y_held.push(ys.to_vec());
        }
    };

    // derivative of (x; xhat) with held (u, ys, w); the continuous
    // configuration recomputes u from the live observer state
    let mut k1 = vec![0.0; 2 * nx];
    let mut k2 = vec![0.0; 2 * nx];
    let mut k3 = vec![0.0; 2 * nx];
    let mut k4 = vec![0.0; 2 * nx];
    let mut stage = vec![0.0; 2 * nx];
    let mut qbuf = vec![0.0; nq];
    let mut innov = vec![0.0; ny];

    let u0 = if etm { u_held.clone() } else { control(gains, p, &plant.cq, &cfg.xhat0, &mut buf_q) };
    record(&mut trace, 0.0, &state, &u0, &w_series[0], &xs, &ys, etm, dual);

    for n in 1..=steps {
        let w_prev = &w_series[n - 1];
        // one RK4 step with everything held
        {
            let mut deriv = |s: &[f64], out: &mut [f64]| {
                let (x, xh) = s.split_at(nx);
                // control input
                let u_local = if etm {
                    u_held.clone()
                } else {
                    control(gains, p, &plant.cq, xh, &mut buf_q)
                };
                // plant: x' = A x + B u + E p(Cq x) + Ew w
                plant.cq.mul_vec_into(x, &mut qbuf);
                let pv = p.eval(&qbuf);
                for i in 0..nx {
                    let mut acc = 0.0;
                    for j in 0..nx {
                        acc += plant.a[(i, j)] * x[j];
                    }
                    for j in 0..u_local.len() {
                        acc += plant.b[(i, j)] * u_local[j];
                    }
                    for j in 0..np_ {
                        acc += plant.e[(i, j)] * pv[j];
                    }
                    for j in 0..nw {
                        acc += plant.ew[(i, j)] * w_prev[j];
                    }
                    out[i] = acc;
                }
                // observer innovation
                if dual {
                    // yhat - ys with yhat = C xh (D = 0 enforced)
                    for i in 0..ny {
                        let mut acc = -ys[i];
                        for j in 0..nx {
                            acc += plant.c[(i, j)] * xh[j];
                        }
                        innov[i] = acc;
                    }
                } else {
                    // yhat - y = C (xh - x) - Fw w
                    for i in 0..ny {
                        let mut acc = 0.0;
                        for j in 0..nx {
                            acc += plant.c[(i, j)] * (xh[j] - x[j]);
                        }
                        for j in 0..nw {
                            acc -= plant.fw[(i, j)] * w_prev[j];
                        }
                        innov[i] = acc;
                    }
                }
                // observer: xh' = A xh + B u + E p(qh + L1 innov) + L2 innov
                plant.cq.mul_vec_into(xh, &mut qbuf);
                for i in 0..nq {
                    for j in 0..ny {
                        qbuf[i] += gains.l1[(i, j)] * innov[j];
                    }
                }
                let pvh = p.eval(&qbuf);
                for i in 0..nx {
                    let mut acc = 0.0;
                    for j in 0..nx {
                        acc += plant.a[(i, j)] * xh[j];
                    }
                    for j in 0..u_local.len() {
                        acc += plant.b[(i, j)] * u_local[j];
                    }
                    for j in 0..np_ {
                        acc += plant.e[(i, j)] * pvh[j];
                    }
                    for j in 0..ny {
                        acc += gains.l2[(i, j)] * innov[j];
                    }
                    out[nx + i] = acc;
                }
            };

            deriv(&state, &mut k1);
            for i in 0..2 * nx {
                stage[i] = state[i] + 0.5 * h * k1[i];
            }
            deriv(&stage, &mut k2);
            for i in 0..2 * nx {
                stage[i] = state[i] + 0.5 * h * k2[i];
            }
            deriv(&stage, &mut k3);
            for i in 0..2 * nx {
                stage[i] = state[i] + h * k3[i];
            }
            deriv(&stage, &mut k4);
            for i in 0..2 * nx {
                state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        let t = n as f64 * h;

        if state.iter().any(|v| !v.is_finite() || mat::fabs(*v) > 1e9) {
            return Err(SimError::NonFiniteState { t, trace: Box::new(trace) });
        }

        let w_now = &w_series[n];
        // trigger evaluation at the grid point, dwell guard first
        if let Some(trig) = trigger {
            let xh = &state[nx..];
            if t - last_u >= trig.controller.tau * (1.0 - 1e-12) {
                let xe: Vec<f64> = xs.iter().zip(xh).map(|(a, b)| a - b).collect();
                if norm2(&xe) > trig.controller.sigma * norm2(xh) + trig.controller.eps {
                    xs.copy_from_slice(xh);
                    u_held = control(gains, p, &plant.cq, &xs, &mut buf_q);
                    last_u = t;
                    trace.events_u.push(t);
                }
            }
            if let Some(out_ch) = &trig.output {
                if t - last_y >= out_ch.tau * (1.0 - 1e-12) {
                    let x = &state[..nx];
                    let mut y_now = plant.c.mul_vec(x);
                    let fww = plant.fw.mul_vec(w_now);
                    for (yi, fi) in y_now.iter_mut().zip(&fww) {
                        *yi += fi;
                    }
                    let ye: Vec<f64> = ys.iter().zip(&y_now).map(|(a, b)| a - b).collect();
                    if norm2(&ye) > out_ch.sigma * norm2(&y_now) + out_ch.eps {
                        ys.copy_from_slice(&y_now);
                        last_y = t;
                        trace.events_y.push(t);
                    }
                }
            }
        }

        let u_now = if etm {
            u_held.clone()
        } else {
            control(gains, p, &plant.cq, &state[nx..], &mut buf_q)
        };
        record(&mut trace, t, &state, &u_now, w_now, &xs, &ys, etm, dual);
    }

    Ok(trace)
}

/// Attaches the Lyapunov series `V(t) = z(t)^T P z(t)` (with `z = (x; e)`)
/// to the trace.
pub fn lyapunov_trace(trace: &mut SimTrace, p: &Mat) -> Result<(), SimError> {
    let nx = trace.x.first().map(|r| r.len()).unwrap_or(0);
    if p.shape() != (2 * nx, 2 * nx) {
        return Err(SimError::Shape("P must be 2nx square"));
    }
    let mut v = Vec::with_capacity(trace.len());
    for i in 0..trace.len() {
        let z = trace.z_at(i);
        let pz = p.mul_vec(&z);
        v.push(z.iter().zip(&pz).map(|(a, b)| a * b).sum());
    }
    trace.v = Some(v);
    Ok(())
}
