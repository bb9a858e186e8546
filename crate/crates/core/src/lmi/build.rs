//! Assembly of the synthesis inequalities as [`LmiProblem`]s.
//!
//! Three families are built here:
//!
//! * the closed-loop recertification inequality, which checks a *given*
//!   gain set against a multiplier and yields the Lyapunov matrix `P`
//!   and rate pair `(alpha0, mu)`;
//! * the observer/controller pair for the block-diagonal multiplier
//!   parameterization, linear in `(P1, R1, R2, X1, Y1, mu1)` and
//!   `(P2, R3, R4, X2, Y2, mu2)` respectively, with the family coupling
//!   `X = lambda X0, Y = lambda Y0` encoded through one scalar;
//! * the observer/controller/boundedness triple for the anti-triangular
//!   parameterization, where `(X1, Y1)` are free matrix unknowns shared
//!   between the observer inequality and the strict boundedness condition.

use crate::iqc::{FactorBlocks, PlantModel};
use crate::lmi::{LmiBlock, LmiError, LmiProblem, Sense, VarStructure};
use crate::mat::Mat;
use crate::synthesis::{closed_loop_matrices, GainSet};

/// Builds the recertification problem for a fixed gain set: decision
/// variables `P` (positive definite, size `2nx`), `mu > 0`, and the three
/// constraint multipliers `sigma1..sigma3 >= 0`. Feasibility at rate
/// `alpha0` certifies `dV/dt <= -alpha0 V + mu |w|^2` for `V = z^T P z`
/// along the closed loop.
pub fn build_recertification(
    plant: &PlantModel,
    gains: &GainSet,
    multiplier: &Mat,
    alpha0: f64,
) -> Result<LmiProblem, LmiError> {
    let (nx, np, nq, nw) = (plant.nx(), plant.np(), plant.nq(), plant.nw());
    if multiplier.shape() != (nq + np, nq + np) {
        return Err(LmiError::ShapeMismatch { context: "multiplier size must be nq+np" });
    }
    let cl = closed_loop_matrices(plant, gains)
        .map_err(|_| LmiError::ShapeMismatch { context: "gain shapes" })?;
    let n = 2 * nx + 3 * np + nw;

    let mut prob = LmiProblem::new();
    prob.fixed_scalars.insert("alpha0".into(), alpha0);
    let vp = prob.add_var("P", 2 * nx, 2 * nx, VarStructure::SymmetricPosDef)?;
    let vmu = prob.add_var("mu", 1, 1, VarStructure::PosScalar)?;
    let vs1 = prob.add_var("sigma1", 1, 1, VarStructure::NonnegScalar)?;
    let vs2 = prob.add_var("sigma2", 1, 1, VarStructure::NonnegScalar)?;
    let vs3 = prob.add_var("sigma3", 1, 1, VarStructure::NonnegScalar)?;

    let mut block = LmiBlock::new("recertification", n);

    // coordinates: (x, e, p, dp, Dp, w)
    let z = Mat::embedder(n, 0, 2 * nx); // z-rows selector, n x 2nx
    let w_cat =
        Mat::hcat(&[&cl.a_c, &cl.h1, &cl.h2, &cl.h3, &cl.h4]);
    debug_assert_eq!(w_cat.shape(), (2 * nx, n));
    block.add_sym_pair(z.clone(), vp, w_cat);
    block.add_self_adjoint(z.scale(alpha0), vp, z.transpose());

    let selectors = recertification_selectors(plant, gains);
    for (var, sel) in [(vs1, &selectors.s2), (vs2, &selectors.s3), (vs3, &selectors.s4)] {
        let smms = &(&sel.transpose() * multiplier) * sel;
        block.add_scaled(var, smms.symmetrized());
    }
    let s5ts5 = &selectors.s5.transpose() * &selectors.s5;
    block.add_scaled(vmu, s5ts5.scale(-1.0));

    prob.blocks.push(block);
    Ok(prob)
}

/// The constraint selectors of the recertification inequality, mapping the
/// stacked coordinate vector `(x, e, p, dp, Dp, w)` onto the three
/// increment pairs and the disturbance:
///
/// * `s2` selects `(q; p) = (Cq x; p)`,
/// * `s3` selects `(dq; dp)` with `dq = -(Cq + L1 C) e - L1 Fw w`,
/// * `s4` selects `(Dq; Dp)` with `Dq = -Cq e`,
/// * `s5` selects `w`.
pub struct RecertificationSelectors {
    pub s2: Mat,
    pub s3: Mat,
    pub s4: Mat,
    pub s5: Mat,
}

pub fn recertification_selectors(plant: &PlantModel, gains: &GainSet) -> RecertificationSelectors {
    let (nx, np, nq, nw) = (plant.nx(), plant.np(), plant.nq(), plant.nw());
    let n = 2 * nx + 3 * np + nw;

    let mut s2 = Mat::zeros(nq + np, n);
    s2.set_block(0, 0, &plant.cq);
    s2.set_block(nq, 2 * nx, &Mat::identity(np));

    let mut s3 = Mat::zeros(nq + np, n);
    let cq_l1c = &plant.cq + &(&gains.l1 * &plant.c);
    s3.set_block(0, nx, &cq_l1c.scale(-1.0));
    s3.set_block(0, 2 * nx + 3 * np, &(&gains.l1 * &plant.fw).scale(-1.0));
    s3.set_block(nq, 2 * nx + np, &Mat::identity(np));

    let mut s4 = Mat::zeros(nq + np, n);
    s4.set_block(0, nx, &plant.cq.scale(-1.0));
    s4.set_block(nq, 2 * nx + 2 * np, &Mat::identity(np));

    let mut s5 = Mat::zeros(nw, n);
    s5.set_block(0, 2 * nx + 3 * np, &Mat::identity(nw));

    RecertificationSelectors { s2, s3, s4, s5 }
}

/// Observer-side inequality for the block-diagonal parameterization.
///
/// Decision variables: `P1` (positive definite, `nx`), `R1: nx x ny`,
/// `R2: nq x ny`, the family scalar `lambda1 >= 0` (so `X1 = lambda1 X0`,
/// `Y1 = lambda1 Y0`), and `mu1 > 0` unless pinned.
pub fn build_observer_block_diagonal(
    plant: &PlantModel,
    fb: &FactorBlocks,
    family: (&Mat, &Mat),
    alpha1: f64,
    mu1: Option<f64>,
) -> Result<LmiProblem, LmiError> {
    let (nx, np, nq, nw, ny) = (plant.nx(), plant.np(), plant.nq(), plant.nw(), plant.ny());
    let (x0, y0) = family;
    if x0.shape() != (nq, nq) || y0.shape() != (np, np) {
        return Err(LmiError::ShapeMismatch { context: "family base shapes" });
    }
    let n = nx + np + nw + nq;
    let emb_e = Mat::embedder(n, 0, nx);
    let emb_dp = Mat::embedder(n, nx, np);
    let emb_w = Mat::embedder(n, nx + np, nw);
    let emb_s = Mat::embedder(n, nx + np + nw, nq);

    let mut prob = LmiProblem::new();
    prob.fixed_scalars.insert("alpha1".into(), alpha1);
    let vp1 = prob.add_var("P1", nx, nx, VarStructure::SymmetricPosDef)?;
    let vr1 = prob.add_var("R1", nx, ny, VarStructure::Full)?;
    let vr2 = prob.add_var("R2", nq, ny, VarStructure::Full)?;
    let vlam = prob.add_var("lambda1", 1, 1, VarStructure::NonnegScalar)?;

    let mut block = LmiBlock::new("observer", n);

    // P1 Atilde1 + Atilde1^T P1 + alpha1 P1 at (e, e)
    block.add_sym_pair(emb_e.clone(), vp1, &fb.a_tilde * &emb_e.transpose());
    block.add_self_adjoint(emb_e.scale(alpha1), vp1, emb_e.transpose());
    // R1 C + C^T R1^T at (e, e)
    block.add_sym_pair(emb_e.clone(), vr1, &plant.c * &emb_e.transpose());
    // -P1 Etilde1 at (e, dp)
    block.add_sym_pair(emb_e.clone(), vp1, &fb.e_tilde.scale(-1.0) * &emb_dp.transpose());
    // P1 Ew + R1 Fw at (e, w)
    block.add_sym_pair(emb_e.clone(), vp1, &plant.ew * &emb_w.transpose());
    block.add_sym_pair(emb_e.clone(), vr1, &plant.fw * &emb_w.transpose());
    // -mu1 I at (w, w)
    let w_eye = &emb_w * &emb_w.transpose();
    match mu1 {
        Some(v) => {
            prob.fixed_scalars.insert("mu1".into(), v);
            block.add_const(&w_eye.scale(-v));
        }
        None => {
            let vmu = prob.add_var("mu1", 1, 1, VarStructure::PosScalar)?;
            block.add_scaled(vmu, w_eye.scale(-1.0));
        }
    }
    // coupling row -(X1 Gamma11 Cq + R2 C) at (s, e), X1 Gamma12 at (s, dp),
    // -R2 Fw at (s, w), -X1 at (s, s), -Y1 at (dp, dp); X1, Y1 scale with
    // lambda1 over the family base
    block.add_sym_pair(emb_s.clone(), vr2, &plant.c.scale(-1.0) * &emb_e.transpose());
    block.add_sym_pair(emb_s.clone(), vr2, &plant.fw.scale(-1.0) * &emb_w.transpose());
    let mut f_lam = Mat::zeros(n, n);
    f_lam = &f_lam + &(&(&emb_dp * &y0.scale(-1.0)) * &emb_dp.transpose());
    let x0g11cq = &(x0 * &fb.gamma1) * &plant.cq;
    let se = &(&emb_s * &x0g11cq.scale(-1.0)) * &emb_e.transpose();
    f_lam = &(&f_lam + &se) + &se.transpose();
    let sdp = &(&emb_s * &(x0 * &fb.gamma2)) * &emb_dp.transpose();
    f_lam = &(&f_lam + &sdp) + &sdp.transpose();
    f_lam = &f_lam + &(&(&emb_s * &x0.scale(-1.0)) * &emb_s.transpose());
    block.add_scaled(vlam, f_lam.symmetrized());

    prob.blocks.push(block);
    Ok(prob)
}

/// Controller-side inequality for the block-diagonal parameterization.
///
/// Decision variables: `P2` (positive definite, `nx`), `R3: nu x nx`,
/// `R4: nu x np` (absent when `pin_r4_zero`, the simplified-controller
/// mode), the family scalar `lambda2`, and `mu2 > 0` unless pinned.
pub fn build_controller_block_diagonal(
    plant: &PlantModel,
    fb: &FactorBlocks,
    family: (&Mat, &Mat),
    alpha2: f64,
    mu2: Option<f64>,
    pin_r4_zero: bool,
) -> Result<LmiProblem, LmiError> {
    let (nx, np, nq, nw, nu) = (plant.nx(), plant.np(), plant.nq(), plant.nw(), plant.nu());
    let (x0, y0) = family;
    if x0.shape() != (nq, nq) || y0.shape() != (np, np) {
        return Err(LmiError::ShapeMismatch { context: "family base shapes" });
    }
    let n = nx + np + nw + nq;
    let emb_x = Mat::embedder(n, 0, nx);
    let emb_tp = Mat::embedder(n, nx, np);
    let emb_w = Mat::embedder(n, nx + np, nw);
    let emb_s = Mat::embedder(n, nx + np + nw, nq);

    let mut prob = LmiProblem::new();
    prob.fixed_scalars.insert("alpha2".into(), alpha2);
    let vp2 = prob.add_var("P2", nx, nx, VarStructure::SymmetricPosDef)?;
    let vr3 = prob.add_var("R3", nu, nx, VarStructure::Full)?;
    let vr4 = if pin_r4_zero {
        None
    } else {
        Some(prob.add_var("R4", nu, np, VarStructure::Full)?)
    };
    let vlam = prob.add_var("lambda2", 1, 1, VarStructure::NonnegScalar)?;

    let mut block = LmiBlock::new("controller", n);

    // Atilde2 P2 + P2 Atilde2^T + B R3 + R3^T B^T + alpha2 P2 at (x, x)
    block.add_sym_pair(&emb_x * &fb.a_tilde, vp2, emb_x.transpose());
    block.add_self_adjoint(emb_x.scale(alpha2), vp2, emb_x.transpose());
    block.add_sym_pair(&emb_x * &plant.b, vr3, emb_x.transpose());
    // B R4 at (x, tp)
    if let Some(vr4) = vr4 {
        block.add_sym_pair(&emb_x * &plant.b, vr4, emb_tp.transpose());
    }
    // Ew at (x, w), constant
    let xw = &(&emb_x * &plant.ew) * &emb_w.transpose();
    block.add_const(&(&xw + &xw.transpose()));
    // -mu2 I at (w, w)
    let w_eye = &emb_w * &emb_w.transpose();
    match mu2 {
        Some(v) => {
            prob.fixed_scalars.insert("mu2".into(), v);
            block.add_const(&w_eye.scale(-v));
        }
        None => {
            let vmu = prob.add_var("mu2", 1, 1, VarStructure::PosScalar)?;
            block.add_scaled(vmu, w_eye.scale(-1.0));
        }
    }
    // Gamma21 Cq P2 at (s, x)
    block.add_sym_pair(&(&emb_s * &fb.gamma1) * &plant.cq, vp2, emb_x.transpose());
    // family-scaled entries: Etilde2 Y2 at (x, tp), Gamma22 Y2 at (s, tp),
    // -Y2 at (tp, tp), -X2 at (s, s)
    let mut f_lam = Mat::zeros(n, n);
    let xtp = &(&emb_x * &(&fb.e_tilde * y0)) * &emb_tp.transpose();
    f_lam = &(&f_lam + &xtp) + &xtp.transpose();
    let stp = &(&emb_s * &(&fb.gamma2 * y0)) * &emb_tp.transpose();
    f_lam = &(&f_lam + &stp) + &stp.transpose();
    f_lam = &f_lam + &(&(&emb_tp * &y0.scale(-1.0)) * &emb_tp.transpose());
    f_lam = &f_lam + &(&(&emb_s * &x0.scale(-1.0)) * &emb_s.transpose());
    block.add_scaled(vlam, f_lam.symmetrized());

    prob.blocks.push(block);
    Ok(prob)
}

/// The three problems of the anti-triangular parameterization.
pub struct AntiTriangularProblems {
    /// Observer inequality in `(P1, R1, R2, X1, Y1, mu1)`.
    pub observer: LmiProblem,
    /// Controller inequality in `(P2, R3, R4, Y2, mu2)` with `X2` fixed.
    pub controller: LmiProblem,
    /// Strict boundedness condition in `(X1, Y1)` alone:
    /// `Gamma12^T X1 + X1^T Gamma12 + Y1 < 0`.
    pub boundedness: LmiProblem,
}

/// Builds the anti-triangular problems. `x2_fixed` is the caller-chosen
/// `X2` block (`nq x np`); `strict_margin` is the definiteness margin for
/// the boundedness condition.
pub fn build_anti_triangular(
    plant: &PlantModel,
    fb1: &FactorBlocks,
    fb2: &FactorBlocks,
    alpha1: f64,
    alpha2: f64,
    x2_fixed: &Mat,
    mu1: Option<f64>,
    mu2: Option<f64>,
    strict_margin: f64,
) -> Result<AntiTriangularProblems, LmiError> {
    let (nq, np) = (plant.nq(), plant.np());
    if x2_fixed.shape() != (nq, np) {
        return Err(LmiError::ShapeMismatch { context: "X2 must be nq x np" });
    }

    let mut observer = LmiProblem::new();
    observer.fixed_scalars.insert("alpha1".into(), alpha1);
    let vars = add_anti_triangular_observer_vars(&mut observer, plant, mu1)?;
    add_anti_triangular_observer_block(&mut observer, plant, fb1, &vars, alpha1, mu1);

    let mut boundedness = LmiProblem::new();
    let bx1 = boundedness.add_var("X1", nq, np, VarStructure::Full)?;
    let by1 = boundedness.add_var("Y1", np, np, VarStructure::Symmetric)?;
    add_boundedness_block(&mut boundedness, fb1, bx1, by1, strict_margin);

    let controller = build_anti_triangular_controller(plant, fb2, alpha2, x2_fixed, mu2)?;

    Ok(AntiTriangularProblems { observer, controller, boundedness })
}

/// Joint observer + boundedness problem sharing `(X1, Y1)`, which is how
/// the synthesis pipeline actually solves the pair, plus the controller
/// problem.
pub fn build_anti_triangular_joint(
    plant: &PlantModel,
    fb1: &FactorBlocks,
    fb2: &FactorBlocks,
    alpha1: f64,
    alpha2: f64,
    x2_fixed: &Mat,
    mu1: Option<f64>,
    mu2: Option<f64>,
    strict_margin: f64,
) -> Result<(LmiProblem, LmiProblem), LmiError> {
    let (nq, np) = (plant.nq(), plant.np());
    if x2_fixed.shape() != (nq, np) {
        return Err(LmiError::ShapeMismatch { context: "X2 must be nq x np" });
    }
    let mut observer = LmiProblem::new();
    observer.fixed_scalars.insert("alpha1".into(), alpha1);
    let vars = add_anti_triangular_observer_vars(&mut observer, plant, mu1)?;
    add_anti_triangular_observer_block(&mut observer, plant, fb1, &vars, alpha1, mu1);
    add_boundedness_block(&mut observer, fb1, vars.x1, vars.y1, strict_margin);
    let controller = build_anti_triangular_controller(plant, fb2, alpha2, x2_fixed, mu2)?;
    Ok((observer, controller))
}

struct AtObserverVars {
    p1: usize,
    r1: usize,
    r2: usize,
    x1: usize,
    y1: usize,
    mu1: Option<usize>,
}

fn add_anti_triangular_observer_vars(
    prob: &mut LmiProblem,
    plant: &PlantModel,
    mu1: Option<f64>,
) -> Result<AtObserverVars, LmiError> {
    let (nx, np, nq, ny) = (plant.nx(), plant.np(), plant.nq(), plant.ny());
    let p1 = prob.add_var("P1", nx, nx, VarStructure::SymmetricPosDef)?;
    let r1 = prob.add_var("R1", nx, ny, VarStructure::Full)?;
    let r2 = prob.add_var("R2", np, ny, VarStructure::Full)?;
    let x1 = prob.add_var("X1", nq, np, VarStructure::Full)?;
    let y1 = prob.add_var("Y1", np, np, VarStructure::Symmetric)?;
    let mu1 = match mu1 {
        Some(v) => {
            prob.fixed_scalars.insert("mu1".into(), v);
            None
        }
        None => Some(prob.add_var("mu1", 1, 1, VarStructure::PosScalar)?),
    };
    Ok(AtObserverVars { p1, r1, r2, x1, y1, mu1 })
}

fn add_anti_triangular_observer_block(
    prob: &mut LmiProblem,
    plant: &PlantModel,
    fb1: &FactorBlocks,
    vars: &AtObserverVars,
    alpha1: f64,
    mu1_pin: Option<f64>,
) {
    let (nx, np, nw) = (plant.nx(), plant.np(), plant.nw());
    let nq = plant.nq();
    let n = nx + np + nw;
    let emb_e = Mat::embedder(n, 0, nx);
    let emb_dp = Mat::embedder(n, nx, np);
    let emb_w = Mat::embedder(n, nx + np, nw);

    let mut block = LmiBlock::new("observer", n);
    block.add_sym_pair(emb_e.clone(), vars.p1, &fb1.a_tilde * &emb_e.transpose());
    block.add_self_adjoint(emb_e.scale(alpha1), vars.p1, emb_e.transpose());
    block.add_sym_pair(emb_e.clone(), vars.r1, &plant.c * &emb_e.transpose());
    block.add_sym_pair(emb_e.clone(), vars.p1, &fb1.e_tilde.scale(-1.0) * &emb_dp.transpose());
    block.add_sym_pair(emb_e.clone(), vars.p1, &plant.ew * &emb_w.transpose());
    block.add_sym_pair(emb_e.clone(), vars.r1, &plant.fw * &emb_w.transpose());
    let w_eye = &emb_w * &emb_w.transpose();
    match (mu1_pin, vars.mu1) {
        (Some(v), _) => block.add_const(&w_eye.scale(-v)),
        (None, Some(vmu)) => block.add_scaled(vmu, w_eye.scale(-1.0)),
        (None, None) => unreachable!(),
    }

    // increment selector rows:
    //   up_q = (-Gamma11 Cq | Gamma12 | 0),  up_p = (0 | I | 0)
    let mut up_q = Mat::zeros(nq, n);
    up_q.set_block(0, 0, &(&fb1.gamma1 * &plant.cq).scale(-1.0));
    up_q.set_block(0, nx, &fb1.gamma2);
    let mut up_p = Mat::zeros(np, n);
    up_p.set_block(0, nx, &Mat::identity(np));

    // up_q^T X1 up_p + up_p^T X1^T up_q + up_p^T Y1 up_p
    block.add_sym_pair(up_q.transpose(), vars.x1, up_p.clone());
    block.add_self_adjoint(up_p.transpose(), vars.y1, up_p.clone());

    // output-injection coupling: R2 row (-C | 0 | -Fw) against up_p
    let mut g = Mat::zeros(plant.ny(), n);
    g.set_block(0, 0, &plant.c.scale(-1.0));
    g.set_block(0, nx + np, &plant.fw.scale(-1.0));
    block.add_sym_pair(up_p.transpose(), vars.r2, g);

    prob.blocks.push(block);
}

fn add_boundedness_block(
    prob: &mut LmiProblem,
    fb1: &FactorBlocks,
    x1: usize,
    y1: usize,
    strict_margin: f64,
) {
    let np = fb1.gamma2.cols();
    let mut block = LmiBlock::new("boundedness", np);
    block.sense = Sense::NegDef { margin: strict_margin };
    // Gamma12^T X1 + X1^T Gamma12 + Y1 < 0
    block.add_sym_pair(fb1.gamma2.transpose(), x1, Mat::identity(np));
    block.add_self_adjoint(Mat::identity(np), y1, Mat::identity(np));
    prob.blocks.push(block);
}

fn build_anti_triangular_controller(
    plant: &PlantModel,
    fb2: &FactorBlocks,
    alpha2: f64,
    x2_fixed: &Mat,
    mu2: Option<f64>,
) -> Result<LmiProblem, LmiError> {
    let (nx, np, nw, nu, nq) = (plant.nx(), plant.np(), plant.nw(), plant.nu(), plant.nq());
    let n = nx + np + nw;
    let emb_x = Mat::embedder(n, 0, nx);
    let emb_tp = Mat::embedder(n, nx, np);
    let emb_w = Mat::embedder(n, nx + np, nw);

    let mut prob = LmiProblem::new();
    prob.fixed_scalars.insert("alpha2".into(), alpha2);
    let vp2 = prob.add_var("P2", nx, nx, VarStructure::SymmetricPosDef)?;
    let vr3 = prob.add_var("R3", nu, nx, VarStructure::Full)?;
    let vr4 = prob.add_var("R4", nu, np, VarStructure::Full)?;
    let vy2 = prob.add_var("Y2", np, np, VarStructure::Symmetric)?;

    let mut block = LmiBlock::new("controller", n);
    block.add_sym_pair(&emb_x * &fb2.a_tilde, vp2, emb_x.transpose());
    block.add_self_adjoint(emb_x.scale(alpha2), vp2, emb_x.transpose());
    block.add_sym_pair(&emb_x * &plant.b, vr3, emb_x.transpose());
    // Etilde2 at (x, tp): constant in this parameterization
    let xtp = &(&emb_x * &fb2.e_tilde) * &emb_tp.transpose();
    block.add_const(&(&xtp + &xtp.transpose()));
    block.add_sym_pair(&emb_x * &plant.b, vr4, emb_tp.transpose());
    let xw = &(&emb_x * &plant.ew) * &emb_w.transpose();
    block.add_const(&(&xw + &xw.transpose()));
    let w_eye = &emb_w * &emb_w.transpose();
    match mu2 {
        Some(v) => {
            prob.fixed_scalars.insert("mu2".into(), v);
            block.add_const(&w_eye.scale(-v));
        }
        None => {
            let vmu = prob.add_var("mu2", 1, 1, VarStructure::PosScalar)?;
            block.add_scaled(vmu, w_eye.scale(-1.0));
        }
    }

    // up3_q = (0 | Gamma22 | 0), up3_p = (0 | I | 0)
    let mut up3_q = Mat::zeros(nq, n);
    up3_q.set_block(0, nx, &fb2.gamma2);
    let mut up3_p = Mat::zeros(np, n);
    up3_p.set_block(0, nx, &Mat::identity(np));

    // fixed X2 part of up3^T Mtilde2 up3
    let qxp = &(&up3_q.transpose() * x2_fixed) * &up3_p;
    block.add_const(&(&qxp + &qxp.transpose()));
    // free Y2 part
    block.add_self_adjoint(up3_p.transpose(), vy2, up3_p.clone());
    // coupling X2^T Gamma21 Cq P2 row against up3_p
    let sx = Mat::hcat(&[
        &Mat::identity(nx),
        &Mat::zeros(nx, np),
        &Mat::zeros(nx, nw),
    ]);
    let l = &(&up3_p.transpose() * &x2_fixed.transpose()) * &(&fb2.gamma1 * &plant.cq);
    block.add_sym_pair(l, vp2, sx);

    prob.blocks.push(block);
    Ok(prob)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iqc::{self, factor_blocks};
    use crate::lmi::solve::{solve_feasibility, SolveOptions};
    use crate::mat;
    use crate::presets;
    use crate::rng::Lcg64;
    use alloc::collections::BTreeMap;
    use alloc::string::String;

    /// Literal assembly of the observer inequality
    /// `[[Phi - phi_y^T Y1 phi_y, phi^T], [phi, -X1]]` for cross-checking
    /// the term-based builder.
    fn observer_literal(
        plant: &crate::iqc::PlantModel,
        fb: &crate::iqc::FactorBlocks,
        p1: &Mat,
        r1: &Mat,
        r2: &Mat,
        x1: &Mat,
        y1: &Mat,
        mu1: f64,
        alpha1: f64,
    ) -> Mat {
        let (nx, np, nw, nq) = (plant.nx(), plant.np(), plant.nw(), plant.nq());
        let phi0 = &(&(&fb.a_tilde.transpose() * p1) + &(p1 * &fb.a_tilde))
            + &(&(&(&plant.c.transpose() * &r1.transpose()) + &(r1 * &plant.c))
                + &p1.scale(alpha1));
        let p1e = (p1 * &fb.e_tilde).scale(-1.0);
        let p1w = &(p1 * &plant.ew) + &(r1 * &plant.fw);
        let z_np = Mat::zeros(np, np);
        let z_nw = Mat::zeros(np, nw);
        let mu_i = Mat::identity(nw).scale(-mu1);
        let phi = Mat::from_blocks(&[
            &[&phi0, &p1e, &p1w],
            &[&p1e.transpose(), &z_np, &z_nw],
            &[&p1w.transpose(), &z_nw.transpose(), &mu_i],
        ]);
        // phi_y = (0, I, 0), so phi_y^T Y1 phi_y embeds Y1 at the middle block
        let mut y_embed = Mat::zeros(nx + np + nw, nx + np + nw);
        y_embed.set_block(nx, nx, y1);
        let upper_left = &phi - &y_embed;

        let phi_row = Mat::hcat(&[
            &(&(&(x1 * &fb.gamma1) * &plant.cq) + &(r2 * &plant.c)).scale(-1.0),
            &(x1 * &fb.gamma2),
            &(r2 * &plant.fw).scale(-1.0),
        ]);
        debug_assert_eq!(phi_row.shape(), (nq, nx + np + nw));
        Mat::from_blocks(&[
            &[&upper_left, &phi_row.transpose()],
            &[&phi_row, &x1.scale(-1.0)],
        ])
    }

    /// Literal assembly of the controller inequality.
    fn controller_literal(
        plant: &crate::iqc::PlantModel,
        fb: &crate::iqc::FactorBlocks,
        p2: &Mat,
        r3: &Mat,
        r4: &Mat,
        x2: &Mat,
        y2: &Mat,
        mu2: f64,
        alpha2: f64,
    ) -> Mat {
        let (np, nw) = (plant.np(), plant.nw());
        let psi0 = &(&(&fb.a_tilde * p2) + &(p2 * &fb.a_tilde.transpose()))
            + &(&(&(&plant.b * r3) + &(&r3.transpose() * &plant.b.transpose()))
                + &p2.scale(alpha2));
        let etp = &(&fb.e_tilde * y2) + &(&plant.b * r4);
        let z_np = Mat::zeros(np, np);
        let z_nw = Mat::zeros(np, nw);
        let mu_i = Mat::identity(nw).scale(-mu2);
        let psi = Mat::from_blocks(&[
            &[&psi0, &etp, &plant.ew],
            &[&etp.transpose(), &z_np, &z_nw],
            &[&plant.ew.transpose(), &z_nw.transpose(), &mu_i],
        ]);
        let n3 = psi.rows();
        let mut y_embed = Mat::zeros(n3, n3);
        y_embed.set_block(plant.nx(), plant.nx(), y2);
        let upper_left = &psi - &y_embed;
        let psi_row = Mat::hcat(&[
            &(&(&fb.gamma1 * &plant.cq) * p2),
            &(&fb.gamma2 * y2),
            &Mat::zeros(plant.nq(), nw),
        ]);
        Mat::from_blocks(&[
            &[&upper_left, &psi_row.transpose()],
            &[&psi_row, &x2.scale(-1.0)],
        ])
    }

    #[test]
    fn observer_builder_matches_literal_assembly() {
        let plant = presets::single_link_arm();
        let mf = presets::single_link_arm_multiplier();
        let fb = factor_blocks(&plant, &mf).unwrap();
        let prob =
            build_observer_block_diagonal(&plant, &fb, (&mf.x0, &mf.y0), 1.0, None).unwrap();

        let mut rng = Lcg64::new(17);
        for _ in 0..10 {
            let x: alloc::vec::Vec<f64> =
                (0..prob.n_scalars()).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let values = prob.unpack(&x);
            let built = prob.eval_block(&prob.blocks[0], &values).unwrap();
            let lam = values["lambda1"][(0, 0)];
            let literal = observer_literal(
                &plant,
                &fb,
                &values["P1"],
                &values["R1"],
                &values["R2"],
                &mf.x0.scale(lam),
                &mf.y0.scale(lam),
                values["mu1"][(0, 0)],
                1.0,
            );
            assert!(
                (&built - &literal).fro_norm() < 1e-12,
                "builder disagrees with literal assembly"
            );
        }
    }

    #[test]
    fn controller_builder_matches_literal_assembly() {
        let plant = presets::single_link_arm();
        let mf = presets::single_link_arm_multiplier();
        let fb = factor_blocks(&plant, &mf).unwrap();
        let prob = build_controller_block_diagonal(&plant, &fb, (&mf.x0, &mf.y0), 1.0, None, false)
            .unwrap();

        let mut rng = Lcg64::new(29);
        for _ in 0..10 {
            let x: alloc::vec::Vec<f64> =
                (0..prob.n_scalars()).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let values = prob.unpack(&x);
            let built = prob.eval_block(&prob.blocks[0], &values).unwrap();
            let lam = values["lambda2"][(0, 0)];
            let literal = controller_literal(
                &plant,
                &fb,
                &values["P2"],
                &values["R3"],
                &values["R4"],
                &mf.x0.scale(lam),
                &mf.y0.scale(lam),
                values["mu2"][(0, 0)],
                1.0,
            );
            assert!((&built - &literal).fro_norm() < 1e-12);
        }
    }

    #[test]
    fn recertification_matches_literal_assembly() {
        let plant = presets::single_link_arm();
        let gains = presets::single_link_arm_reference_gains();
        let mf = presets::single_link_arm_multiplier();
        let alpha0 = 0.25;
        let prob = build_recertification(&plant, &gains, &mf.m, alpha0).unwrap();
        let cl = closed_loop_matrices(&plant, &gains).unwrap();
        let sel = recertification_selectors(&plant, &gains);

        let mut rng = Lcg64::new(41);
        for _ in 0..10 {
            let x: alloc::vec::Vec<f64> =
                (0..prob.n_scalars()).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let values = prob.unpack(&x);
            let built = prob.eval_block(&prob.blocks[0], &values).unwrap();

            let p = &values["P"];
            let (nx, np, nw) = (plant.nx(), plant.np(), plant.nw());
            let n = 2 * nx + 3 * np + nw;
            let s0 = &(&(p * &cl.a_c) + &(&cl.a_c.transpose() * p)) + &p.scale(alpha0);
            let s1 = Mat::hcat(&[&(p * &cl.h1), &(p * &cl.h2), &(p * &cl.h3), &(p * &cl.h4)]);
            let mut literal = Mat::zeros(n, n);
            literal.set_block(0, 0, &s0);
            literal.set_block(0, 2 * nx, &s1);
            literal.set_block(2 * nx, 0, &s1.transpose());
            for (name, s) in
                [("sigma1", &sel.s2), ("sigma2", &sel.s3), ("sigma3", &sel.s4)]
            {
                let smm = &(&s.transpose() * &mf.m) * s;
                literal = &literal + &smm.scale(values[name][(0, 0)]);
            }
            literal =
                &literal - &(&sel.s5.transpose() * &sel.s5).scale(values["mu"][(0, 0)]);
            assert!((&built - &literal.symmetrized()).fro_norm() < 1e-12);
        }
    }

    #[test]
    fn observer_feasible_on_example_and_homogeneous() {
        let plant = presets::single_link_arm();
        let mf = presets::single_link_arm_multiplier();
        let fb = factor_blocks(&plant, &mf).unwrap();
        // mu1 free: with every variable free the block is linear in the
        // assignment, so scaling a feasible point stays feasible
        let prob =
            build_observer_block_diagonal(&plant, &fb, (&mf.x0, &mf.y0), 1.0, None).unwrap();
        let asg = solve_feasibility(&prob, &SolveOptions::default()).unwrap();
        assert!(asg.residual <= -1e-6 + 1e-8);

        let mut scaled: BTreeMap<String, Mat> = BTreeMap::new();
        for (k, v) in &asg.values {
            scaled.insert(k.clone(), v.scale(2.0));
        }
        let m = prob.eval_block(&prob.blocks[0], &scaled).unwrap();
        let m_unscaled = prob.eval_block(&prob.blocks[0], &asg.values).unwrap();
        assert!((&m - &m_unscaled.scale(2.0)).fro_norm() < 1e-10);
        assert!(mat::lambda_max(&m.symmetrized()).unwrap() <= -1e-6);
    }

    #[test]
    fn unobservable_pair_infeasible() {
        // (A, C) = (I2, zero row) is undetectable: no observer inequality
        // solution exists
        let plant = crate::iqc::PlantModel::new(
            Mat::identity(2),
            Mat::col(&[0.0, 1.0]),
            Mat::row(&[0.0, 0.0]),
            Mat::scalar(0.0),
            Mat::row(&[1.0, 0.0]),
            Mat::col(&[0.0, -1.0]),
            Mat::col(&[0.0, 0.0]),
            Mat::scalar(0.0),
        )
        .unwrap();
        let mf = iqc::mm_lipschitz(1.0, 1, 1).unwrap();
        let fb = factor_blocks(&plant, &mf).unwrap();
        let prob =
            build_observer_block_diagonal(&plant, &fb, (&mf.x0, &mf.y0), 1.0, Some(0.1)).unwrap();
        let mut opts = SolveOptions::default();
        opts.max_iter = 800;
        opts.restarts = 4;
        let err = solve_feasibility(&prob, &opts).unwrap_err();
        assert!(err.best_residual > 0.0);
    }

    #[test]
    fn uncontrollable_pair_infeasible() {
        // (A, B) = (I2, 0): cannot stabilize
        let plant = crate::iqc::PlantModel::new(
            Mat::identity(2),
            Mat::col(&[0.0, 0.0]),
            Mat::row(&[1.0, 0.0]),
            Mat::scalar(0.0),
            Mat::row(&[1.0, 0.0]),
            Mat::col(&[0.0, -1.0]),
            Mat::col(&[0.0, 0.0]),
            Mat::scalar(0.0),
        )
        .unwrap();
        let mf = iqc::mm_lipschitz(1.0, 1, 1).unwrap();
        let fb = factor_blocks(&plant, &mf).unwrap();
        let prob =
            build_controller_block_diagonal(&plant, &fb, (&mf.x0, &mf.y0), 1.0, Some(0.1), false)
                .unwrap();
        let mut opts = SolveOptions::default();
        opts.max_iter = 800;
        opts.restarts = 4;
        let err = solve_feasibility(&prob, &opts).unwrap_err();
        assert!(err.best_residual > 0.0);
    }

    #[test]
    fn boundedness_reduces_to_y1_when_gamma12_zero() {
        // with a zero Gamma12 the strict condition is just Y1 < 0
        let plant = presets::single_link_arm();
        let mf = presets::single_link_arm_multiplier();
        let fb = factor_blocks(&plant, &mf).unwrap();
        assert!(fb.gamma2.fro_norm() < 1e-15);
        let probs = build_anti_triangular(
            &plant,
            &fb,
            &fb,
            1.0,
            1.0,
            &Mat::scalar(1.0),
            Some(0.1),
            Some(0.1),
            1e-6,
        )
        .unwrap();
        let mut values: BTreeMap<String, Mat> = BTreeMap::new();
        values.insert("X1".into(), Mat::scalar(5.0));
        values.insert("Y1".into(), Mat::scalar(-0.5));
        let b = &probs.boundedness.blocks[0];
        let m = probs.boundedness.eval_block(b, &values).unwrap();
        assert!((m[(0, 0)] + 0.5).abs() < 1e-14);
    }

    #[test]
    fn recertification_accepts_lyapunov_solution_when_nonlinearity_absent() {
        // disturbance-free plant, stable A, zero gains, p weighted out by
        // the multiplier: P = diag(Q, Q) from the Lyapunov equation
        // A^T Q + Q A = -I satisfies the inequality at small alpha0
        let a = Mat::from_rows(&[&[-1.0, 0.5], &[0.0, -2.0]]);
        let plant = crate::iqc::PlantModel::new(
            a.clone(),
            Mat::col(&[0.0, 1.0]),
            Mat::row(&[1.0, 0.0]),
            Mat::scalar(0.0),
            Mat::row(&[1.0, 0.0]),
            Mat::zeros(2, 1),
            Mat::zeros(2, 1),
            Mat::scalar(0.0),
        )
        .unwrap();
        let gains = GainSet {
            l1: Mat::scalar(0.0),
            l2: Mat::zeros(2, 1),
            k1: Mat::zeros(1, 2),
            k2: Mat::scalar(0.0),
        };
        // solve A^T Q + Q A = -I by the Kronecker linear system
        let q = solve_lyapunov(&a);
        let lyap = &(&a.transpose() * &q) + &(&q * &a);
        assert!((&lyap + &Mat::identity(2)).fro_norm() < 1e-10);

        let m = iqc::mm_lipschitz(1.0, 1, 1).unwrap().m;
        let alpha0 = 1e-3;
        let prob = build_recertification(&plant, &gains, &m, alpha0).unwrap();
        let mut values: BTreeMap<String, Mat> = BTreeMap::new();
        let mut p = Mat::zeros(4, 4);
        p.set_block(0, 0, &q);
        p.set_block(2, 2, &q);
        values.insert("P".into(), p);
        values.insert("mu".into(), Mat::scalar(1.0));
        // sigma1 = sigma3 = 0; sigma2 small positive handles the dp channel
        values.insert("sigma1".into(), Mat::scalar(0.0));
        values.insert("sigma2".into(), Mat::scalar(0.0));
        values.insert("sigma3".into(), Mat::scalar(0.0));
        let worst = prob.check_assignment(&values, 1e-9).unwrap();
        assert!(worst <= 1e-9, "substituted Lyapunov solution rejected: {worst}");

        // and the solver finds some assignment on its own
        let asg = solve_feasibility(&prob, &SolveOptions::default()).unwrap();
        assert!(asg.residual <= -1e-6 + 1e-8);
    }

    /// Dense Lyapunov solve via the 4x4 Kronecker system, test-only oracle.
    fn solve_lyapunov(a: &Mat) -> Mat {
        let n = a.rows();
        let mut k = Mat::zeros(n * n, n * n);
        // vec(A^T Q + Q A) = (I (x) A^T + A^T (x) I) vec(Q)
        for i in 0..n {
            for j in 0..n {
                for r in 0..n {
                    for c in 0..n {
                        let row = i * n + j;
                        let col = r * n + c;
                        let mut v = 0.0;
                        if j == c {
                            v += a[(r, i)];
                        }
                        if i == r {
                            v += a[(c, j)];
                        }
                        k[(row, col)] += v;
                    }
                }
            }
        }
        let rhs = Mat::from_fn(n * n, 1, |idx, _| {
            let (i, j) = (idx / n, idx % n);
            if i == j {
                -1.0
            } else {
                0.0
            }
        });
        let qv = mat::solve(&k, &rhs).unwrap();
        Mat::from_fn(n, n, |i, j| qv[(i * n + j, 0)]).symmetrized()
    }

    #[test]
    fn grossly_large_rate_infeasible_for_reference_gains() {
        let plant = presets::single_link_arm();
        let gains = presets::single_link_arm_reference_gains();
        let mf = presets::single_link_arm_multiplier();
        let prob = build_recertification(&plant, &gains, &mf.m, 1e6).unwrap();
        let mut opts = SolveOptions::default();
        opts.max_iter = 600;
        opts.restarts = 3;
        let err = solve_feasibility(&prob, &opts).unwrap_err();
        assert!(err.best_residual > 0.0);
    }
}
