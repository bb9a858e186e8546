//! Gain synthesis pipelines.
//!
//! Two parameterizations of the multiplier drive two pipelines:
//!
//! * [`synthesize_block_diagonal`] solves the decoupled observer/controller
//!   inequalities with the family encoded through one scaling scalar each,
//!   then extracts the gains in closed form;
//! * [`synthesize_anti_triangular`] solves the observer inequality jointly
//!   with the strict boundedness condition (sharing the free pair
//!   `(X1, Y1)`), the controller inequality at a fixed `X2`, and extracts
//!   `L1` through a pseudoinverse.
//!
//! Both pipelines assemble a composite Lyapunov certificate
//! `P = diag(P2^{-1}, beta0 P1)` with decay rate `alpha0` and disturbance
//! gain `mu`, and can recertify the result by re-solving the closed-loop
//! inequality at a chosen rate ([`recompute_certificate`]), optionally
//! minimizing the condition number of `P`.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::iqc::{factor_blocks, FactorBlocks, IqcError, MultiplierFactorization, PlantModel};
use crate::lmi::build::{
    build_anti_triangular_joint, build_controller_block_diagonal, build_observer_block_diagonal,
    build_recertification,
};
use crate::lmi::solve::{solve_feasibility, SolveOptions};
use crate::lmi::{Assignment, LmiError, LmiProblem};
use crate::mat::{self, Mat, MatError};

/// Observer gains `L1, L2` and controller gains `K1, K2`.
///
/// Shapes: `L1: nq x ny`, `L2: nx x ny`, `K1: nu x nx`, `K2: nu x np`.
#[derive(Debug, Clone)]
pub struct GainSet {
    pub l1: Mat,
    pub l2: Mat,
    pub k1: Mat,
    pub k2: Mat,
}

impl GainSet {
    pub fn check_shapes(&self, plant: &PlantModel) -> Result<(), SynthesisError> {
        let ok = self.l1.shape() == (plant.nq(), plant.ny())
            && self.l2.shape() == (plant.nx(), plant.ny())
            && self.k1.shape() == (plant.nu(), plant.nx())
            && self.k2.shape() == (plant.nu(), plant.np());
        if ok && [&self.l1, &self.l2, &self.k1, &self.k2].iter().all(|m| m.is_finite()) {
            Ok(())
        } else {
            Err(SynthesisError::Shape("gain shapes do not match the plant"))
        }
    }
}

/// Matrices of the closed loop in stacked coordinates `z = (x; e)`:
/// `z' = A_c z + H1 p + H2 dp + H3 Dp + H4 w`, plus the two event-channel
/// input matrices `H5` (held-state error) and `H6` (held-output error).
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub a_c: Mat,
    pub h1: Mat,
    pub h2: Mat,
    pub h3: Mat,
    pub h4: Mat,
    pub h5: Mat,
    pub h6: Mat,
}

/// Assembles the closed-loop matrices for a plant and gain set.
pub fn closed_loop_matrices(plant: &PlantModel, gains: &GainSet) -> Result<ClosedLoop, SynthesisError> {
    gains.check_shapes(plant)?;
    let nx = plant.nx();
    let bk1 = &plant.b * &gains.k1;
    let bk2 = &plant.b * &gains.k2;
    let a_bk1 = &plant.a + &bk1;
    let a_l2c = &plant.a + &(&gains.l2 * &plant.c);
    let mut a_c = Mat::zeros(2 * nx, 2 * nx);
    a_c.set_block(0, 0, &a_bk1);
    a_c.set_block(0, nx, &bk1.scale(-1.0));
    a_c.set_block(nx, nx, &a_l2c);

    let zx = Mat::zeros(nx, plant.np());
    let h1 = Mat::vcat(&[&(&plant.e + &bk2), &zx]);
    let h2 = Mat::vcat(&[&zx, &plant.e.scale(-1.0)]);
    let h3 = Mat::vcat(&[&bk2, &zx]);
    let h4 = Mat::vcat(&[&plant.ew, &(&plant.ew + &(&gains.l2 * &plant.fw))]);
    let h5 = Mat::vcat(&[&bk1, &Mat::zeros(nx, nx)]);
    let h6 = Mat::vcat(&[&Mat::zeros(nx, plant.ny()), &gains.l2]);
    Ok(ClosedLoop { a_c, h1, h2, h3, h4, h5, h6 })
}

/// A Lyapunov certificate for the closed loop: `V(z) = z^T P z` satisfies
/// `dV/dt <= -alpha0 V + mu |w|^2`.
///
/// `theta`, `beta0` and `kappa_hat` are the constants of the composite
/// construction (`theta` couples the two sub-functions, `beta0` weights the
/// error block, `kappa_hat` bounds the controller mismatch over the
/// estimation error). Recomputed certificates carry `theta = 0`,
/// `beta0 = 1`, `kappa_hat` copied from the synthesis stage when available.
#[derive(Debug, Clone)]
pub struct StabilityCertificate {
    pub p: Mat,
    pub alpha0: f64,
    pub mu: f64,
    pub theta: f64,
    pub beta0: f64,
    pub kappa_hat: f64,
}

/// Synthesis mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthesisMode {
    /// Block-diagonal parameterization, full controller structure.
    BlockDiagonal,
    /// Anti-triangular parameterization.
    AntiTriangular,
    /// Block-diagonal with the nonlinearity feedthrough disabled
    /// (`R4 = 0`, so `K2 = 0` and `u = K1 xhat`).
    SimplifiedController,
}

/// Options shared by the pipelines.
#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    /// Candidate observer rates; the largest feasible one is kept.
    pub alpha1_grid: Vec<f64>,
    /// Candidate controller rates; the largest feasible one is kept.
    pub alpha2_grid: Vec<f64>,
    pub mode: SynthesisMode,
    /// Feasibility margin applied to every inequality.
    pub margin: f64,
    /// Pins `mu1` instead of leaving it a decision scalar.
    pub mu1: Option<f64>,
    /// Pins `mu2`.
    pub mu2: Option<f64>,
    /// Fixed `X2` for the anti-triangular mode; defaults to the
    /// factorization's family base.
    pub x2_fixed: Option<Mat>,
    /// Re-solve the closed-loop inequality at the composite rate after
    /// extraction.
    pub recertify: bool,
    /// During recertification, minimize the condition number of `P`.
    pub condition_number_objective: bool,
    /// Moderation of the extracted gains: appends scale anchors
    /// (`P ⪰ I`, family scalars `>= 1`) and norm-cap blocks
    /// (`R^T P^{-1} R ⪯ nu^2 I` via a Schur block) to the stage problems,
    /// bounding the gain formulas' ratios by roughly `nu`. A grid point
    /// that is infeasible with the caps is retried without them, so the
    /// cap is a preference, not a restriction.
    pub gain_cap: Option<f64>,
    pub solver: SolveOptions,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            alpha1_grid: vec![1.0],
            alpha2_grid: vec![1.0],
            mode: SynthesisMode::BlockDiagonal,
            margin: 1e-6,
            mu1: None,
            mu2: None,
            x2_fixed: None,
            recertify: false,
            condition_number_objective: false,
            gain_cap: Some(20.0),
            solver: SolveOptions::default(),
        }
    }
}

#[derive(Debug)]
pub enum SynthesisError {
    /// No grid point was feasible; carries `(alpha, best_residual)` per
    /// attempted grid point.
    LmiInfeasible { stage: &'static str, residuals: Vec<(f64, f64)> },
    /// The controller-side multiplier's lower-right block is not negative
    /// definite and no Lipschitz constant was supplied.
    M24NotNegative { lambda_max: f64 },
    Kappa3NotPositive { value: f64 },
    X1RankDeficient,
    IllConditioned { what: &'static str, condition: f64 },
    Shape(&'static str),
    Iqc(IqcError),
    Lmi(LmiError),
    Mat(MatError),
}

impl fmt::Display for SynthesisError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SynthesisError::LmiInfeasible { stage, residuals } => {
                write!(f, "{stage} inequality infeasible; residuals per rate:")?;
                for (a, r) in residuals {
                    write!(f, " ({a}: {r:.3e})")?;
                }
                Ok(())
            }
            SynthesisError::M24NotNegative { lambda_max } => write!(
                f,
                "controller multiplier block M24 is not negative definite (lambda_max {lambda_max:e}) and no Lipschitz constant is available"
            ),
            SynthesisError::Kappa3NotPositive { value } => {
                write!(f, "kappa3 = {value:e} is not positive; mismatch bound unavailable")
            }
            SynthesisError::X1RankDeficient => write!(f, "solved X1 is rank deficient"),
            SynthesisError::IllConditioned { what, condition } => {
                write!(f, "{what} is ill-conditioned ({condition:e}); aborting extraction")
            }
            SynthesisError::Shape(s) => write!(f, "{s}"),
            SynthesisError::Iqc(e) => write!(f, "{e}"),
            SynthesisError::Lmi(e) => write!(f, "{e}"),
            SynthesisError::Mat(e) => write!(f, "{e}"),
        }
    }
}

impl From<IqcError> for SynthesisError {
    fn from(e: IqcError) -> Self {
        SynthesisError::Iqc(e)
    }
}
impl From<LmiError> for SynthesisError {
    fn from(e: LmiError) -> Self {
        SynthesisError::Lmi(e)
    }
}
impl From<MatError> for SynthesisError {
    fn from(e: MatError) -> Self {
        SynthesisError::Mat(e)
    }
}

/// Everything a successful synthesis produced.
#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub gains: GainSet,
    pub certificate: StabilityCertificate,
    /// Post-recertification certificate when requested.
    pub recertified: Option<StabilityCertificate>,
    pub alpha1: f64,
    pub alpha2: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub observer: Assignment,
    pub controller: Assignment,
}

fn line_search(
    stage: &'static str,
    grid: &[f64],
    mut attempt: impl FnMut(f64) -> Result<Assignment, f64>,
) -> Result<(f64, Assignment), SynthesisError> {
    let mut sorted: Vec<f64> = grid.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sorted.dedup();
    if sorted.is_empty() {
        return Err(SynthesisError::Shape("empty rate grid"));
    }
    let mut residuals = Vec::new();
    for alpha in sorted {
        match attempt(alpha) {
            Ok(asg) => return Ok((alpha, asg)),
            Err(best) => residuals.push((alpha, best)),
        }
    }
    Err(SynthesisError::LmiInfeasible { stage, residuals })
}

fn solver_opts(opts: &SynthesisOptions) -> SolveOptions {
    let mut s = opts.solver.clone();
    s.margin = opts.margin;
    if s.polish_vars.is_none() {
        // shrink only the gain numerators; X1 sits in a denominator role
        s.polish_vars = Some(
            ["R1", "R2", "R3", "R4"].iter().map(|n| alloc::string::String::from(*n)).collect(),
        );
    }
    s
}

fn push_spd_anchor(prob: &mut LmiProblem, var: &str) {
    if let Some(v) = prob.var_index(var) {
        let n = prob.vars[v].rows;
        let mut b = crate::lmi::LmiBlock::new("anchor", n);
        b.add_const(&Mat::identity(n));
        b.add_self_adjoint(Mat::identity(n).scale(-1.0), v, Mat::identity(n));
        prob.blocks.push(b);
    }
}

fn push_scalar_anchor(prob: &mut LmiProblem, var: &str) {
    if let Some(v) = prob.var_index(var) {
        let mut b = crate::lmi::LmiBlock::new("anchor", 1);
        b.add_const(&Mat::scalar(1.0));
        b.add_scaled(v, Mat::scalar(-1.0));
        prob.blocks.push(b);
    }
}

/// Norm cap `[[ -D, R ], [ R^T, -nu^2 I ]] ⪯ 0`, i.e.
/// `R^T D^{-1} R ⪯ nu^2 I`. `denom` names a positive-definite variable, or
/// a family pair `(scalar var, base)` when the denominator is
/// family-scaled, or nothing for a plain `nu I` denominator. When
/// `transpose_r` the variable enters as `R^T` in the upper-right corner.
fn push_gain_cap(
    prob: &mut LmiProblem,
    r_var: &str,
    denom: CapDenominator<'_>,
    nu: f64,
    transpose_r: bool,
) {
    let Some(rv) = prob.var_index(r_var) else { return };
    let (r_rows, r_cols) = (prob.vars[rv].rows, prob.vars[rv].cols);
    let (top, bottom) = if transpose_r { (r_cols, r_rows) } else { (r_rows, r_cols) };
    let n = top + bottom;
    let e_top = Mat::embedder(n, 0, top);
    let e_bot = Mat::embedder(n, top, bottom);
    let mut b = crate::lmi::LmiBlock::new("gain_cap", n);
    match denom {
        CapDenominator::SpdVar(name) => {
            if let Some(dv) = prob.var_index(name) {
                b.add_self_adjoint(e_top.scale(-1.0), dv, e_top.transpose());
            } else {
                return;
            }
        }
        CapDenominator::Family(scalar_name, base) => {
            if let Some(sv) = prob.var_index(scalar_name) {
                let emb = (&(&e_top * &base.scale(-1.0)) * &e_top.transpose()).symmetrized();
                b.add_scaled(sv, emb);
            } else {
                return;
            }
        }
        CapDenominator::Identity => {
            b.add_const(&(&e_top * &e_top.transpose()).scale(-nu));
        }
    }
    if transpose_r {
        b.add_sym_pair_transposed(e_top.clone(), rv, e_bot.transpose());
    } else {
        b.add_sym_pair(e_top.clone(), rv, e_bot.transpose());
    }
    let corner = match denom {
        // with an identity denominator the block encodes |R| <= nu directly
        CapDenominator::Identity => nu,
        _ => nu * nu,
    };
    b.add_const(&(&e_bot * &e_bot.transpose()).scale(-corner));
    prob.blocks.push(b);
}

enum CapDenominator<'a> {
    SpdVar(&'a str),
    Family(&'a str, &'a Mat),
    Identity,
}

/// Solves a stage problem, preferring the gain-capped variant and falling
/// back to the plain one when the caps make the point infeasible.
fn solve_stage(
    base: &LmiProblem,
    capped: Option<LmiProblem>,
    sopts: &SolveOptions,
) -> Result<Assignment, f64> {
    if let Some(capped) = capped {
        if let Ok(a) = solve_feasibility(&capped, sopts) {
            return Ok(a);
        }
    }
    solve_feasibility(base, sopts).map_err(|inf| inf.best_residual)
}

/// Block-diagonal synthesis. `lipschitz` is the nonlinearity's global
/// Lipschitz constant when one exists; it relaxes the `M24 < 0` gate and
/// provides the alternative mismatch bound.
pub fn synthesize_block_diagonal(
    plant: &PlantModel,
    mf_obs: &MultiplierFactorization,
    mf_ctrl: &MultiplierFactorization,
    lipschitz: Option<f64>,
    opts: &SynthesisOptions,
) -> Result<SynthesisResult, SynthesisError> {
    let fb1 = factor_blocks(plant, mf_obs)?;
    let fb2 = factor_blocks(plant, mf_ctrl)?;
    let np = plant.np();
    let nq = plant.nq();

    let m24 = mf_ctrl.m.block(nq, nq, np, np).symmetrized();
    let m24_max = mat::lambda_max(&m24)?;
    let m24_negative = m24_max < 0.0;
    if !m24_negative && lipschitz.is_none() && opts.mode != SynthesisMode::SimplifiedController {
        return Err(SynthesisError::M24NotNegative { lambda_max: m24_max });
    }

    let sopts = solver_opts(opts);
    let (alpha1, obs) = line_search("observer", &opts.alpha1_grid, |a1| {
        let base = build_observer_block_diagonal(plant, &fb1, (&mf_obs.x0, &mf_obs.y0), a1, opts.mu1)
            .map_err(|_| f64::INFINITY)?;
        let capped = opts.gain_cap.map(|nu| {
            let mut capped = base.clone();
            push_spd_anchor(&mut capped, "P1");
            push_scalar_anchor(&mut capped, "lambda1");
            push_gain_cap(&mut capped, "R1", CapDenominator::SpdVar("P1"), nu, false);
            push_gain_cap(&mut capped, "R2", CapDenominator::Family("lambda1", &mf_obs.x0), nu, false);
            capped
        });
        solve_stage(&base, capped, &sopts)
    })?;
    let pin_r4 = opts.mode == SynthesisMode::SimplifiedController;
    let (alpha2, ctrl) = line_search("controller", &opts.alpha2_grid, |a2| {
        let base = build_controller_block_diagonal(
            plant,
            &fb2,
            (&mf_ctrl.x0, &mf_ctrl.y0),
            a2,
            opts.mu2,
            pin_r4,
        )
        .map_err(|_| f64::INFINITY)?;
        let capped = opts.gain_cap.map(|nu| {
            let mut capped = base.clone();
            push_spd_anchor(&mut capped, "P2");
            push_scalar_anchor(&mut capped, "lambda2");
            push_gain_cap(&mut capped, "R3", CapDenominator::SpdVar("P2"), nu, true);
            push_gain_cap(&mut capped, "R4", CapDenominator::Family("lambda2", &mf_ctrl.y0), nu, true);
            capped
        });
        solve_stage(&base, capped, &sopts)
    })?;

    // observer-side extraction
    let p1 = obs.get("P1").unwrap().symmetrized();
    let r1 = obs.get("R1").unwrap().clone();
    let r2 = obs.get("R2").unwrap().clone();
    let lam1 = obs.scalar("lambda1").unwrap();
    if lam1 <= 1e-12 {
        return Err(SynthesisError::IllConditioned { what: "family scalar lambda1", condition: f64::INFINITY });
    }
    let x1 = mf_obs.x0.scale(lam1);
    let x1_inv = mat::inv(&x1).map_err(map_ill("X1"))?;
    let g11_inv = mat::inv(&fb1.gamma1).map_err(map_ill("Gamma11"))?;
    let l1 = &(&g11_inv * &x1_inv) * &r2;
    let p1_inv = mat::inv(&p1).map_err(map_ill("P1"))?;
    let l2 = &(&p1_inv * &r1) + &(&(&plant.e * &fb1.t4_inv_t3) * &l1);

    // controller-side extraction
    let p2 = ctrl.get("P2").unwrap().symmetrized();
    let r3 = ctrl.get("R3").unwrap().clone();
    let lam2 = ctrl.scalar("lambda2").unwrap();
    if lam2 <= 1e-12 {
        return Err(SynthesisError::IllConditioned { what: "family scalar lambda2", condition: f64::INFINITY });
    }
    let x2 = mf_ctrl.x0.scale(lam2);
    let y2 = mf_ctrl.y0.scale(lam2);
    let (_, _, _, t24) = mf_ctrl.t_blocks();
    let k2 = if pin_r4 {
        Mat::zeros(plant.nu(), np)
    } else {
        let r4 = ctrl.get("R4").unwrap().clone();
        let y2_inv = mat::inv(&y2).map_err(map_ill("Y2"))?;
        &(&r4 * &y2_inv) * &t24
    };
    let p2_inv = mat::inv(&p2).map_err(map_ill("P2"))?;
    let k1 = &(&r3 * &p2_inv) + &(&(&k2 * &fb2.t4_inv_t3) * &plant.cq);

    let gains = GainSet { l1, l2, k1, k2 };
    gains.check_shapes(plant)?;

    // mismatch bound: both routes when available, the smaller wins
    let family = if m24_negative { Some((&x2, &y2)) } else { None };
    let kappa_hat = delta_k_bound(&gains, &plant.cq, &fb2, family, lipschitz)?;

    let mu1 = opts.mu1.unwrap_or_else(|| obs.scalar("mu1").unwrap());
    let mu2 = opts.mu2.unwrap_or_else(|| ctrl.scalar("mu2").unwrap());
    let certificate =
        composite_certificate(plant, &p1, &p2, alpha1, alpha2, mu1, mu2, kappa_hat)?;

    let recertified = if opts.recertify {
        let (cert, _) = recompute_certificate(
            plant,
            &gains,
            &mf_ctrl.m,
            certificate.alpha0,
            opts.condition_number_objective,
            &sopts,
        )?;
        Some(StabilityCertificate { kappa_hat, ..cert })
    } else {
        None
    };

    Ok(SynthesisResult {
        gains,
        certificate,
        recertified,
        alpha1,
        alpha2,
        mu1,
        mu2,
        observer: obs,
        controller: ctrl,
    })
}

/// Anti-triangular synthesis: the observer inequality and the strict
/// boundedness condition are solved jointly in the shared free pair
/// `(X1, Y1)`; the controller inequality is solved at the fixed `X2`.
pub fn synthesize_anti_triangular(
    plant: &PlantModel,
    mf1: &MultiplierFactorization,
    mf2: &MultiplierFactorization,
    lipschitz: Option<f64>,
    opts: &SynthesisOptions,
) -> Result<SynthesisResult, SynthesisError> {
    let fb1 = factor_blocks(plant, mf1)?;
    let fb2 = factor_blocks(plant, mf2)?;
    let x2_fixed = opts.x2_fixed.clone().unwrap_or_else(|| mf2.x0.clone());
    if x2_fixed.shape() != (plant.nq(), plant.np()) {
        return Err(SynthesisError::Shape("X2 must be nq x np"));
    }
    let sopts = solver_opts(opts);

    // The observer stage searches a free reduced pair; gain moderation
    // there trades away exactly the injection strength the closed-loop
    // certificate needs, so it runs without caps or polish.
    let mut obs_opts = sopts.clone();
    obs_opts.polish = false;
    let (alpha1, obs) = line_search("observer", &opts.alpha1_grid, |a1| {
        let (base, _) = build_anti_triangular_joint(
            plant,
            &fb1,
            &fb2,
            a1,
            opts.alpha2_grid[0],
            &x2_fixed,
            opts.mu1,
            opts.mu2,
            opts.margin,
        )
        .map_err(|_| f64::INFINITY)?;
        solve_stage(&base, None, &obs_opts)
    })?;
    let (alpha2, ctrl) = line_search("controller", &opts.alpha2_grid, |a2| {
        let (_, base) = build_anti_triangular_joint(
            plant,
            &fb1,
            &fb2,
            alpha1,
            a2,
            &x2_fixed,
            opts.mu1,
            opts.mu2,
            opts.margin,
        )
        .map_err(|_| f64::INFINITY)?;
        let capped = opts.gain_cap.map(|nu| {
            let mut capped = base.clone();
            push_spd_anchor(&mut capped, "P2");
            push_gain_cap(&mut capped, "R3", CapDenominator::SpdVar("P2"), nu, true);
            push_gain_cap(&mut capped, "R4", CapDenominator::Identity, nu, true);
            capped
        });
        solve_stage(&base, capped, &sopts)
    })?;

    let p1 = obs.get("P1").unwrap().symmetrized();
    let r1 = obs.get("R1").unwrap().clone();
    let r2 = obs.get("R2").unwrap().clone();
    let x1 = obs.get("X1").unwrap().clone();
    let y1 = obs.get("Y1").unwrap().symmetrized();

    // L1 through the pseudoinverse of X1^T (full column rank required)
    let sv = mat::singular_values(&x1)?;
    let smax = sv.first().copied().unwrap_or(0.0);
    let rank = sv.iter().filter(|s| **s > 1e-9 * smax.max(1e-300)).count();
    if rank < plant.np() || smax == 0.0 {
        return Err(SynthesisError::X1RankDeficient);
    }
    let x1t_pinv = mat::pinv(&x1.transpose(), 1e-9)?;
    let g11_inv = mat::inv(&fb1.gamma1).map_err(map_ill("Gamma11"))?;
    let l1 = &(&g11_inv * &x1t_pinv) * &r2;
    let p1_inv = mat::inv(&p1).map_err(map_ill("P1"))?;
    let l2 = &(&p1_inv * &r1) + &(&(&plant.e * &fb1.t4_inv_t3) * &l1);

    let p2 = ctrl.get("P2").unwrap().symmetrized();
    let r3 = ctrl.get("R3").unwrap().clone();
    let r4 = ctrl.get("R4").unwrap().clone();
    let (_, _, _, t24) = mf2.t_blocks();
    let k2 = &r4 * &t24;
    let p2_inv = mat::inv(&p2).map_err(map_ill("P2"))?;
    let k1 = &(&r3 * &p2_inv) + &(&(&k2 * &fb2.t4_inv_t3) * &plant.cq);
    let gains = GainSet { l1, l2, k1, k2 };
    gains.check_shapes(plant)?;

    // mismatch bound from the boundedness condition (observer-side factor)
    let (_, _, _, _t14) = mf1.t_blocks();
    let kt1 = &gains.k1 - &(&(&gains.k2 * &fb1.t4_inv_t3) * &plant.cq);
    let kt2 = &gains.k2 * &fb1.t4_inv;
    let kappa1 = 2.0 * (&(&plant.cq.transpose() * &fb1.gamma1.transpose()) * &x1).fro_norm();
    let bound = &(&(&fb1.gamma2.transpose() * &x1) + &(&x1.transpose() * &fb1.gamma2)) + &y1;
    let kappa2 = -mat::lambda_min(&bound.symmetrized())?;
    if kappa2 <= 0.0 {
        return Err(SynthesisError::Kappa3NotPositive { value: kappa2 });
    }
    let mut kappa_hat = kt1.fro_norm() + kt2.fro_norm() * kappa1 / kappa2;
    if let Some(ell) = lipschitz {
        let lip = gains.k1.fro_norm() + ell * gains.k2.fro_norm() * plant.cq.fro_norm();
        kappa_hat = kappa_hat.min(lip);
    }

    let mu1 = opts.mu1.unwrap_or_else(|| obs.scalar("mu1").unwrap());
    let mu2 = opts.mu2.unwrap_or_else(|| ctrl.scalar("mu2").unwrap());
    let certificate =
        composite_certificate(plant, &p1, &p2, alpha1, alpha2, mu1, mu2, kappa_hat)?;
    let recertified = if opts.recertify {
        let (cert, _) = recompute_certificate(
            plant,
            &gains,
            &mf1.m,
            certificate.alpha0,
            opts.condition_number_objective,
            &sopts,
        )?;
        Some(StabilityCertificate { kappa_hat, ..cert })
    } else {
        None
    };

    Ok(SynthesisResult {
        gains,
        certificate,
        recertified,
        alpha1,
        alpha2,
        mu1,
        mu2,
        observer: obs,
        controller: ctrl,
    })
}

fn map_ill(what: &'static str) -> impl Fn(MatError) -> SynthesisError {
    move |e| match e {
        MatError::Singular { condition } => SynthesisError::IllConditioned { what, condition },
        other => SynthesisError::Mat(other),
    }
}

/// Bound `kappa_hat` on `|Delta k| / |e|`, the controller mismatch per unit
/// of estimation error.
///
/// Two routes exist: the multiplier route (requires the transformed
/// controller-side multiplier to have `kappa3 > 0`, i.e. `M24 < 0`) and the
/// Lipschitz route `|K1| + ell |K2| |Cq|`. When both are available the
/// smaller bound is returned.
pub fn delta_k_bound(
    gains: &GainSet,
    cq: &Mat,
    fb2: &FactorBlocks,
    family: Option<(&Mat, &Mat)>,
    lipschitz: Option<f64>,
) -> Result<f64, SynthesisError> {
    let mut best: Option<f64> = None;
    if let Some(ell) = lipschitz {
        best = Some(gains.k1.fro_norm() + ell * gains.k2.fro_norm() * cq.fro_norm());
    }
    if let Some((x2, y2)) = family {
        let x2_inv = mat::inv(x2).map_err(map_ill("X2"))?;
        let y2_inv = mat::inv(y2).map_err(map_ill("Y2"))?;
        let g21 = &fb2.gamma1;
        let g22 = &fb2.gamma2;
        let cg = g21 * cq; // Gamma21 Cq
        let kappa1 = mat::lambda_max(&(&(&cg.transpose() * &x2_inv) * &cg).symmetrized())?;
        let kappa2 = 2.0 * (&(&cg.transpose() * &x2_inv) * g22).fro_norm();
        let kappa3 =
            mat::lambda_min(&(&y2_inv - &(&(&g22.transpose() * &x2_inv) * g22)).symmetrized())?;
        if kappa3 <= 0.0 {
            if best.is_none() {
                return Err(SynthesisError::Kappa3NotPositive { value: kappa3 });
            }
        } else {
            let kappa =
                (kappa2 + mat::sqrt(kappa2 * kappa2 + 4.0 * kappa1 * kappa3)) / (2.0 * kappa3);
            let kt1 = &gains.k1 - &(&(&gains.k2 * &fb2.t4_inv_t3) * cq);
            let kt2 = &gains.k2 * &fb2.t4_inv;
            let v = kt1.fro_norm() + kt2.fro_norm() * kappa;
            best = Some(best.map_or(v, |b| b.min(v)));
        }
    }
    best.ok_or(SynthesisError::Shape("no mismatch bound route available"))
}

/// Composite certificate from the two stage solutions:
/// `c1 = alpha1 lmin(P1)/lmax(P1)`, `c2 = alpha2 lmin(P3)/lmax(P3)` with
/// `P3 = P2^{-1}`, `alpha0 = 0.9 min(c1, c2)`,
/// `beta0 = theta^2 / (4 lmax(P1) lmax(P3) (c1-alpha0)(c2-alpha0))`
/// (floored at 1 when the coupling vanishes), `P = diag(P3, beta0 P1)`,
/// `mu = beta0 mu1 + mu2`.
#[allow(clippy::too_many_arguments)]
pub fn composite_certificate(
    plant: &PlantModel,
    p1: &Mat,
    p2: &Mat,
    alpha1: f64,
    alpha2: f64,
    mu1: f64,
    mu2: f64,
    kappa_hat: f64,
) -> Result<StabilityCertificate, SynthesisError> {
    let nx = plant.nx();
    let p3 = mat::inv(p2).map_err(map_ill("P2"))?.symmetrized();
    let e1 = mat::sym_eig(p1)?;
    let e3 = mat::sym_eig(&p3)?;
    if e1.lambda_min() <= 0.0 || e3.lambda_min() <= 0.0 {
        return Err(SynthesisError::Shape("stage matrices must be positive definite"));
    }
    let theta = 2.0 * (&p3 * &plant.b).fro_norm() * kappa_hat;
    let c1 = alpha1 * e1.lambda_min() / e1.lambda_max();
    let c2 = alpha2 * e3.lambda_min() / e3.lambda_max();
    let alpha0 = 0.9 * c1.min(c2);
    let denom = 4.0 * e1.lambda_max() * e3.lambda_max() * (c1 - alpha0) * (c2 - alpha0);
    let beta0 = if theta == 0.0 { 1.0 } else { (theta * theta / denom).max(f64::MIN_POSITIVE) };
    let mut p = Mat::zeros(2 * nx, 2 * nx);
    p.set_block(0, 0, &p3);
    p.set_block(nx, nx, &p1.scale(beta0));
    Ok(StabilityCertificate { p, alpha0, mu: beta0 * mu1 + mu2, theta, beta0, kappa_hat })
}

/// Re-solves the closed-loop inequality for `(P, mu, sigma1..sigma3)` at a
/// fixed rate `alpha0`. With `minimize_condition` the extra constraints
/// `I ⪯ P ⪯ t I` are bisected on `t`, which normalizes the returned `P` to
/// unit smallest eigenvalue (the trigger formulas are invariant to that
/// scaling).
pub fn recompute_certificate(
    plant: &PlantModel,
    gains: &GainSet,
    multiplier: &Mat,
    alpha0: f64,
    minimize_condition: bool,
    solver: &SolveOptions,
) -> Result<(StabilityCertificate, Assignment), SynthesisError> {
    if !(alpha0 > 0.0) {
        return Err(SynthesisError::Shape("alpha0 must be positive"));
    }
    let base = build_recertification(plant, gains, multiplier, alpha0)?;
    let asg0 = solve_feasibility(&base, solver).map_err(|inf| SynthesisError::LmiInfeasible {
        stage: "recertification",
        residuals: vec![(alpha0, inf.best_residual)],
    })?;

    let finish = |asg: Assignment| -> Result<(StabilityCertificate, Assignment), SynthesisError> {
        let p = asg.get("P").unwrap().symmetrized();
        let mu = asg.scalar("mu").unwrap();
        Ok((
            StabilityCertificate { p, alpha0, mu, theta: 0.0, beta0: 1.0, kappa_hat: 0.0 },
            asg,
        ))
    };

    if !minimize_condition {
        return finish(asg0);
    }

    // normalize so that lmin(P) = 1; the problem is homogeneous, so the
    // scaled assignment stays feasible and satisfies I ⪯ P
    let p0 = asg0.get("P").unwrap().symmetrized();
    let e0 = mat::sym_eig(&p0)?;
    if e0.lambda_min() <= 0.0 {
        return Err(SynthesisError::Shape("recertified P must be positive definite"));
    }
    let scale = 1.0 / e0.lambda_min();
    let mut warm = asg0.values.clone();
    for v in warm.values_mut() {
        *v = v.scale(scale * 1.0000001);
    }
    let cond0 = e0.lambda_max() / e0.lambda_min();

    let mut t_lo = 1.0;
    let mut t_hi = cond0 * 1.01 + 1e-6;
    let mut best = base.pack(&warm)?;
    let mut best_asg = None;
    // verify the warm point at t_hi
    if let Ok(a) = solve_conditioned(&base, t_hi, solver, Some(best.clone())) {
        best = base.pack(&a.values)?;
        best_asg = Some(a);
    }
    while t_hi - t_lo > 1e-4 * t_hi.max(1.0) {
        let t_mid = 0.5 * (t_lo + t_hi);
        match solve_conditioned(&base, t_mid, solver, Some(best.clone())) {
            Ok(a) => {
                best = base.pack(&a.values)?;
                best_asg = Some(a);
                t_hi = t_mid;
            }
            Err(_) => t_lo = t_mid,
        }
    }
    match best_asg {
        Some(a) => finish(a),
        None => finish(asg0),
    }
}

/// Base recertification problem plus `I ⪯ P ⪯ t I`.
fn solve_conditioned(
    base: &LmiProblem,
    t: f64,
    solver: &SolveOptions,
    warm: Option<Vec<f64>>,
) -> Result<Assignment, crate::lmi::solve::Infeasible> {
    let mut prob = base.clone();
    let vp = prob.var_index("P").expect("recertification declares P");
    let n = prob.vars[vp].rows;
    let mut lower = crate::lmi::LmiBlock::new("cond_lower", n);
    lower.add_const(&Mat::identity(n));
    lower.add_self_adjoint(Mat::identity(n).scale(-1.0), vp, Mat::identity(n));
    prob.blocks.push(lower);
    let mut upper = crate::lmi::LmiBlock::new("cond_upper", n);
    upper.add_const(&Mat::identity(n).scale(-t));
    upper.add_self_adjoint(Mat::identity(n), vp, Mat::identity(n));
    prob.blocks.push(upper);
    let mut opts = solver.clone();
    opts.warm_start = warm;
    solve_feasibility(&prob, &opts)
}

/// Residual (largest eigenvalue) of the proof-stage observer inequality
/// assembled directly from a gain set: `Phi + (phi0; varphi)^T Mtilde1
/// (phi0; varphi)` with `R1 = P1 Ltilde2` substituted.
#[allow(clippy::too_many_arguments)]
pub fn observer_stage_residual(
    plant: &PlantModel,
    fb1: &FactorBlocks,
    p1: &Mat,
    gains: &GainSet,
    m_tilde1: &Mat,
    mu1: f64,
    alpha1: f64,
) -> Result<f64, SynthesisError> {
    let (nx, np, nw, nq) = (plant.nx(), plant.np(), plant.nw(), plant.nq());
    let lt2 = &gains.l2 - &(&(&plant.e * &fb1.t4_inv_t3) * &gains.l1);
    let acl = &fb1.a_tilde + &(&lt2 * &plant.c);
    let phi0 = &(&(p1 * &acl) + &(&acl.transpose() * p1)) + &p1.scale(alpha1);
    let p1e = (p1 * &fb1.e_tilde).scale(-1.0);
    let p1w = p1 * &(&plant.ew + &(&lt2 * &plant.fw));
    let z_np = Mat::zeros(np, np);
    let z_nw = Mat::zeros(np, nw);
    let mu_i = Mat::identity(nw).scale(-mu1);
    let phi = Mat::from_blocks(&[
        &[&phi0, &p1e, &p1w],
        &[&p1e.transpose(), &z_np, &z_nw],
        &[&p1w.transpose(), &z_nw.transpose(), &mu_i],
    ]);
    let cq_l1c = &plant.cq + &(&gains.l1 * &plant.c);
    let phi0_row = Mat::hcat(&[
        &(&fb1.gamma1 * &cq_l1c).scale(-1.0),
        &fb1.gamma2,
        &(&(&fb1.gamma1 * &gains.l1) * &plant.fw).scale(-1.0),
    ]);
    let mut varphi = Mat::zeros(np, nx + np + nw);
    varphi.set_block(0, nx, &Mat::identity(np));
    let stacked = Mat::vcat(&[&phi0_row, &varphi]);
    debug_assert_eq!(stacked.rows(), nq + np);
    let total = &phi + &(&(&stacked.transpose() * m_tilde1) * &stacked);
    Ok(mat::lambda_max(&total.symmetrized())?)
}

/// Residual of the proof-stage controller inequality assembled directly
/// from a gain set: `PsiHat + (psi0; varphi)^T Mtilde2 (psi0; varphi)` with
/// `P3 = P2^{-1}`.
#[allow(clippy::too_many_arguments)]
pub fn controller_stage_residual(
    plant: &PlantModel,
    fb2: &FactorBlocks,
    p2: &Mat,
    gains: &GainSet,
    m_tilde2: &Mat,
    mu2: f64,
    alpha2: f64,
) -> Result<f64, SynthesisError> {
    let (nx, np, nw, nq) = (plant.nx(), plant.np(), plant.nw(), plant.nq());
    let p3 = mat::inv(p2).map_err(map_ill("P2"))?.symmetrized();
    let kt1 = &gains.k1 - &(&(&gains.k2 * &fb2.t4_inv_t3) * &plant.cq);
    let kt2 = &gains.k2 * &fb2.t4_inv;
    let acl = &fb2.a_tilde + &(&plant.b * &kt1);
    let psi0 = &(&(&p3 * &acl) + &(&acl.transpose() * &p3)) + &p3.scale(alpha2);
    let etp = &p3 * &(&fb2.e_tilde + &(&plant.b * &kt2));
    let p3w = &p3 * &plant.ew;
    let z_np = Mat::zeros(np, np);
    let z_nw = Mat::zeros(np, nw);
    let mu_i = Mat::identity(nw).scale(-mu2);
    let psi = Mat::from_blocks(&[
        &[&psi0, &etp, &p3w],
        &[&etp.transpose(), &z_np, &z_nw],
        &[&p3w.transpose(), &z_nw.transpose(), &mu_i],
    ]);
    let psi0_row = Mat::hcat(&[
        &(&fb2.gamma1 * &plant.cq),
        &fb2.gamma2,
        &Mat::zeros(nq, nw),
    ]);
    let mut varphi = Mat::zeros(np, nx + np + nw);
    varphi.set_block(0, nx, &Mat::identity(np));
    let stacked = Mat::vcat(&[&psi0_row, &varphi]);
    let total = &psi + &(&(&stacked.transpose() * m_tilde2) * &stacked);
    Ok(mat::lambda_max(&total.symmetrized())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iqc;
    use crate::presets;

    fn example_opts() -> SynthesisOptions {
        SynthesisOptions { mu1: Some(0.1), mu2: Some(0.1), ..SynthesisOptions::default() }
    }

    #[test]
    fn closed_loop_shapes() {
        let plant = presets::single_link_arm();
        let gains = presets::single_link_arm_reference_gains();
        let cl = closed_loop_matrices(&plant, &gains).unwrap();
        assert_eq!(cl.a_c.shape(), (4, 4));
        assert_eq!(cl.h1.shape(), (4, 1));
        assert_eq!(cl.h4.shape(), (4, 1));
        assert_eq!(cl.h5.shape(), (4, 2));
        assert_eq!(cl.h6.shape(), (4, 1));
        // A_c upper-left is A + B K1
        assert!((cl.a_c[(1, 0)] - (-7.3936)).abs() < 1e-12);
        // no e -> x coupling in the lower-left block
        assert_eq!(cl.a_c[(2, 0)], 0.0);
        assert_eq!(cl.a_c[(3, 0)], 0.0);
    }

    #[test]
    fn block_diagonal_synthesis_on_example() {
        let plant = presets::single_link_arm();
        let mf = presets::single_link_arm_multiplier();
        let r = synthesize_block_diagonal(&plant, &mf, &mf, Some(1.0), &example_opts()).unwrap();
        // gain extraction inverts cleanly back to the solved variables
        let p1 = r.observer.get("P1").unwrap();
        let r1 = r.observer.get("R1").unwrap();
        let lam1 = r.observer.scalar("lambda1").unwrap();
        let x1 = mf.x0.scale(lam1);
        let fb1 = iqc::factor_blocks(&plant, &mf).unwrap();
        let lt2 = &r.gains.l2 - &(&(&plant.e * &fb1.t4_inv_t3) * &r.gains.l1);
        let r1_back = p1 * &lt2;
        assert!((&r1_back - r1).fro_norm() < 1e-7 * r1.fro_norm().max(1.0));
        let r2_back = &(&x1 * &fb1.gamma1) * &r.gains.l1;
        assert!((&r2_back - r.observer.get("R2").unwrap()).fro_norm() < 1e-7);
        let p2 = r.controller.get("P2").unwrap();
        let r3_back = &(&r.gains.k1
            - &(&(&r.gains.k2 * &fb1.t4_inv_t3) * &plant.cq))
            * p2;
        assert!((&r3_back - r.controller.get("R3").unwrap()).fro_norm() < 1e-7);
        let lam2 = r.controller.scalar("lambda2").unwrap();
        let y2 = mf.y0.scale(lam2);
        let (_, _, _, t24) = mf.t_blocks();
        let t24_inv = mat::inv(&t24).unwrap();
        let r4_back = &(&r.gains.k2 * &t24_inv) * &y2;
        assert!((&r4_back - r.controller.get("R4").unwrap()).fro_norm() < 1e-7);

        // composite certificate is positive definite with positive rate
        assert!(mat::lambda_min(&r.certificate.p).unwrap() > 0.0);
        assert!(r.certificate.alpha0 > 0.0);

        // back-substituted proof-stage inequalities hold
        let x1m = mf.x0.scale(lam1);
        let y1m = mf.y0.scale(lam1);
        let mut mt1 = Mat::zeros(2, 2);
        mt1.set_block(0, 0, &x1m);
        mt1.set_block(1, 1, &y1m.scale(-1.0));
        let res_o = observer_stage_residual(&plant, &fb1, &p1.symmetrized(),
            &r.gains, &mt1, 0.1, r.alpha1).unwrap();
        assert!(res_o <= 1e-6, "observer stage residual {res_o}");
        let x2m = mf.x0.scale(lam2);
        let mut mt2 = Mat::zeros(2, 2);
        mt2.set_block(0, 0, &mat::inv(&x2m).unwrap());
        mt2.set_block(1, 1, &mat::inv(&y2).unwrap().scale(-1.0));
        let res_c = controller_stage_residual(&plant, &fb1, &p2.symmetrized(),
            &r.gains, &mt2, 0.1, r.alpha2).unwrap();
        assert!(res_c <= 1e-6, "controller stage residual {res_c}");
    }

    #[test]
    fn lipschitz_collapse_of_gain_formulas() {
        // with T2 = T3 = 0 the correction terms vanish:
        // L2 = P1^{-1} R1 and K1 = R3 P2^{-1}
        let plant = presets::single_link_arm();
        let mf = presets::single_link_arm_multiplier();
        let r = synthesize_block_diagonal(&plant, &mf, &mf, Some(1.0), &example_opts()).unwrap();
        let p1 = r.observer.get("P1").unwrap().symmetrized();
        let l2_direct = &mat::inv(&p1).unwrap() * r.observer.get("R1").unwrap();
        assert!((&l2_direct - &r.gains.l2).fro_norm() < 1e-8 * r.gains.l2.fro_norm().max(1.0));
        let p2 = r.controller.get("P2").unwrap().symmetrized();
        let k1_direct = r.controller.get("R3").unwrap() * &mat::inv(&p2).unwrap();
        assert!((&k1_direct - &r.gains.k1).fro_norm() < 1e-8 * r.gains.k1.fro_norm().max(1.0));
    }

    #[test]
    fn delta_k_zero_gains() {
        let plant = presets::single_link_arm();
        let mf = presets::single_link_arm_multiplier();
        let fb = iqc::factor_blocks(&plant, &mf).unwrap();
        let gains = GainSet {
            l1: Mat::scalar(0.0),
            l2: Mat::zeros(2, 1),
            k1: Mat::zeros(1, 2),
            k2: Mat::scalar(0.0),
        };
        let k = delta_k_bound(&gains, &plant.cq, &fb,
            Some((&Mat::scalar(1.0), &Mat::scalar(1.0))), Some(1.0)).unwrap();
        assert_eq!(k, 0.0);
    }

    #[test]
    fn delta_k_lipschitz_route_reference_gains() {
        let plant = presets::single_link_arm();
        let mf = presets::single_link_arm_multiplier();
        let fb = iqc::factor_blocks(&plant, &mf).unwrap();
        let gains = presets::single_link_arm_reference_gains();
        let k = delta_k_bound(&gains, &plant.cq, &fb, None, Some(1.0)).unwrap();
        let expect = libm::sqrt(7.3936f64 * 7.3936 + 3.9937 * 3.9937) + 1.0;
        assert!((k - expect).abs() < 1e-9);
    }

    #[test]
    fn delta_k_quadratic_root_matches_scalar_recurrence() {
        // scalar instance evaluated against a brute-force root scan
        let plant = presets::single_link_arm();
        let sec = iqc::mm_sector(&Mat::scalar(0.0), &Mat::scalar(1.0), &Mat::scalar(1.0)).unwrap();
        let fb = iqc::factor_blocks(&plant, &sec).unwrap();
        let gains = presets::single_link_arm_reference_gains();
        let (x2, y2) = (Mat::scalar(0.8), Mat::scalar(0.6));
        let k = delta_k_bound(&gains, &plant.cq, &fb, Some((&x2, &y2)), None).unwrap();

        // brute force: largest ratio |dp|/|e| satisfying
        // kappa1 e^2 + kappa2 e dp - kappa3 dp^2 >= 0 is the positive root
        let g21 = fb.gamma1[(0, 0)];
        let g22 = fb.gamma2[(0, 0)];
        let cq = plant.cq.fro_norm();
        let kappa1 = cq * g21 * g21 * cq / x2[(0, 0)];
        let kappa2 = 2.0 * libm::fabs(cq * g21 * g22 / x2[(0, 0)]);
        let kappa3 = 1.0 / y2[(0, 0)] - g22 * g22 / x2[(0, 0)];
        assert!(kappa3 > 0.0);
        let mut root = 0.0f64;
        let mut r = 0.0;
        while r < 50.0 {
            if kappa1 + kappa2 * r - kappa3 * r * r >= 0.0 {
                root = r;
            }
            r += 1e-4;
        }
        let (_, _, _, t4) = sec.t_blocks();
        let kt1 = &gains.k1 - &(&(&gains.k2 * &fb.t4_inv_t3) * &plant.cq);
        let kt2 = &gains.k2 * &mat::inv(&t4).unwrap();
        let expect = kt1.fro_norm() + kt2.fro_norm() * root;
        assert!((k - expect).abs() < 1e-3, "formula {k} vs scan {expect}");
    }

    #[test]
    fn m24_gate_blocks_positive_real_without_lipschitz() {
        let plant = presets::single_link_arm();
        let pr = iqc::mm_positive_real(&Mat::scalar(1.0)).unwrap();
        let lip = presets::single_link_arm_multiplier();
        let err = synthesize_block_diagonal(&plant, &lip, &pr, None, &example_opts());
        assert!(matches!(err, Err(SynthesisError::M24NotNegative { .. })));
    }

    #[test]
    fn recompute_monotone_in_rate() {
        // a certificate at alpha0 also satisfies the inequality at alpha0/2
        let plant = presets::single_link_arm();
        let gains = presets::single_link_arm_reference_gains();
        let mf = presets::single_link_arm_multiplier();
        let (cert, asg) = recompute_certificate(&plant, &gains, &mf.m, 0.25, false,
            &SolveOptions::default()).unwrap();
        assert!(mat::lambda_min(&cert.p).unwrap() > 0.0);
        let weaker = build_recertification(&plant, &gains, &mf.m, 0.125).unwrap();
        let worst = weaker.check_assignment(&asg.values, 0.0).unwrap();
        assert!(worst <= 0.0, "weaker-rate inequality violated: {worst}");
    }
}
