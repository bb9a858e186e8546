//! Incremental multiplier matrices and their factorizations.
//!
//! A nonlinearity `p : R^nq -> R^np` with `p(0) = 0` is characterized by a
//! symmetric multiplier `M` for which the incremental quadratic constraint
//!
//! ```text
//! (dq; dp)^T M (dq; dp) >= 0,   dq = q2 - q1,  dp = p(q2) - p(q1)
//! ```
//!
//! holds for all `q1, q2`. The catalog builds `M` together with an
//! invertible factor `T` and a family base `(X0, Y0)` such that
//! `M ∝ T^T Mtilde T` with `Mtilde` in one of three shapes (see
//! [`FactorForm`]); the synthesis LMIs consume the factor blocks, never `M`
//! itself. Positive scalings `lambda * (X0, Y0)` stay inside the family.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::mat::{self, Mat, MatError};
use crate::rng::Lcg64;

/// Errors from catalog construction and validation.
#[derive(Debug)]
pub enum IqcError {
    NonPositiveGamma,
    SingularS,
    ShapeMismatch(&'static str),
    DimMismatch,
    /// Assembled multiplier is positive semidefinite and therefore carries
    /// no information about the nonlinearity.
    TrivialMultiplier { lambda_min: f64 },
    /// Declared nonlinearity does not vanish at the origin.
    NonzeroAtOrigin { norm: f64 },
    EvaluatorFailure,
    SingularT { condition: f64 },
    SingularT4 { condition: f64 },
    SingularGamma1 { condition: f64 },
    Mat(MatError),
}

impl From<MatError> for IqcError {
    fn from(e: MatError) -> Self {
        IqcError::Mat(e)
    }
}

impl fmt::Display for IqcError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IqcError::NonPositiveGamma => write!(f, "Lipschitz bound must be positive"),
            IqcError::SingularS => write!(f, "S must be symmetric and invertible"),
            IqcError::ShapeMismatch(c) => write!(f, "shape mismatch in {c}"),
            IqcError::DimMismatch => write!(f, "nq and np must agree for this multiplier"),
            IqcError::TrivialMultiplier { lambda_min } => {
                write!(f, "multiplier is positive semidefinite (lambda_min {lambda_min:e}); it constrains nothing")
            }
            IqcError::NonzeroAtOrigin { norm } => {
                write!(f, "nonlinearity must vanish at the origin, |p(0)| = {norm:e}")
            }
            IqcError::EvaluatorFailure => write!(f, "nonlinearity evaluator failed"),
            IqcError::SingularT { condition } => {
                write!(f, "factor T is singular or ill-conditioned (cond {condition:e})")
            }
            IqcError::SingularT4 { condition } => {
                write!(f, "T4 block is singular or ill-conditioned (cond {condition:e})")
            }
            IqcError::SingularGamma1 { condition } => {
                write!(f, "Gamma1 block is singular or ill-conditioned (cond {condition:e})")
            }
            IqcError::Mat(e) => write!(f, "{e}"),
        }
    }
}

/// The plant
///
/// ```text
/// x' = A x + B u + E p(q) + Ew w
/// y  = C x + D u + Fw w
/// q  = Cq x
/// ```
///
/// with state dimension `nx`, input `nu`, output `ny`, nonlinearity input
/// `nq`, nonlinearity output `np`, disturbance `nw`.
#[derive(Debug, Clone)]
pub struct PlantModel {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
    pub cq: Mat,
    pub e: Mat,
    pub ew: Mat,
    pub fw: Mat,
}

impl PlantModel {
    /// Validates all shapes against the dimensions implied by `a`, `b`, `c`,
    /// `cq`, `e`, `ew`.
    pub fn new(
        a: Mat,
        b: Mat,
        c: Mat,
        d: Mat,
        cq: Mat,
        e: Mat,
        ew: Mat,
        fw: Mat,
    ) -> Result<Self, IqcError> {
        let nx = a.rows();
        if a.cols() != nx {
            return Err(IqcError::ShapeMismatch("A must be square"));
        }
        let nu = b.cols();
        let ny = c.rows();
        let nq = cq.rows();
        let np = e.cols();
        let nw = ew.cols();
        if nx == 0 || nq == 0 || np == 0 {
            return Err(IqcError::ShapeMismatch("nx, nq, np must be at least 1"));
        }
        if b.rows() != nx
            || c.cols() != nx
            || d.shape() != (ny, nu)
            || cq.cols() != nx
            || e.rows() != nx
            || ew.rows() != nx
            || fw.shape() != (ny, nw)
        {
            return Err(IqcError::ShapeMismatch("plant matrix dimensions are inconsistent"));
        }
        for m in [&a, &b, &c, &d, &cq, &e, &ew, &fw] {
            if !m.is_finite() {
                return Err(IqcError::Mat(MatError::NonFiniteEntry));
            }
        }
        Ok(PlantModel { a, b, c, d, cq, e, ew, fw })
    }

    pub fn nx(&self) -> usize {
        self.a.rows()
    }
    pub fn nu(&self) -> usize {
        self.b.cols()
    }
    pub fn ny(&self) -> usize {
        self.c.rows()
    }
    pub fn nq(&self) -> usize {
        self.cq.rows()
    }
    pub fn np(&self) -> usize {
        self.e.cols()
    }
    pub fn nw(&self) -> usize {
        self.ew.cols()
    }

    /// `true` when both disturbance channels are identically zero.
    pub fn is_disturbance_free(&self) -> bool {
        self.ew.fro_norm() == 0.0 && self.fw.fro_norm() == 0.0
    }
}

/// Multiplier class of a nonlinearity.
#[derive(Debug)]
pub enum NonlinearityKind {
    /// `|p(q2) - p(q1)| <= gamma |q2 - q1|`.
    Lipschitz { gamma: f64 },
    /// `(p - K1 q)^T S (p - K2 q) <= 0`.
    Sector { k1: Mat, k2: Mat, s: Mat },
    /// `p^T S q >= 0`.
    PositiveReal { s: Mat },
    /// User-characterized; the user supplies the multiplier data.
    Custom,
}

type Evaluator = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// A nonlinearity with its evaluator and (optional) global Lipschitz
/// constant. The constant is required by the event-trigger design; plain
/// gain synthesis works without it.
pub struct Nonlinearity {
    pub kind: NonlinearityKind,
    pub lipschitz_const: Option<f64>,
    nq: usize,
    np: usize,
    eval: Evaluator,
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Nonlinearity")
            .field("kind", &self.kind)
            .field("lipschitz_const", &self.lipschitz_const)
            .field("nq", &self.nq)
            .field("np", &self.np)
            .finish()
    }
}

impl Nonlinearity {
    /// Wraps an evaluator, checking `p(0) = 0` numerically.
    pub fn new(
        kind: NonlinearityKind,
        nq: usize,
        np: usize,
        eval: Evaluator,
        lipschitz_const: Option<f64>,
    ) -> Result<Self, IqcError> {
        let origin = vec![0.0; nq];
        let p0 = eval(&origin);
        if p0.len() != np || !p0.iter().all(|v| v.is_finite()) {
            return Err(IqcError::EvaluatorFailure);
        }
        let norm: f64 = mat::sqrt(p0.iter().map(|v| v * v).sum());
        if norm > 1e-12 {
            return Err(IqcError::NonzeroAtOrigin { norm });
        }
        Ok(Nonlinearity { kind, lipschitz_const, nq, np, eval })
    }

    /// Componentwise scalar map (`nq == np`).
    pub fn componentwise(
        kind: NonlinearityKind,
        n: usize,
        f: fn(f64) -> f64,
        lipschitz_const: Option<f64>,
    ) -> Result<Self, IqcError> {
        Nonlinearity::new(
            kind,
            n,
            n,
            Box::new(move |q: &[f64]| q.iter().map(|&v| f(v)).collect()),
            lipschitz_const,
        )
    }

    /// `p(q) = sin(q)` componentwise; globally Lipschitz with constant 1.
    pub fn sine(n: usize) -> Self {
        Nonlinearity::componentwise(
            NonlinearityKind::Lipschitz { gamma: 1.0 },
            n,
            libm::sin,
            Some(1.0),
        )
        .expect("sine vanishes at the origin")
    }

    /// Unit saturation `p(q) = clamp(q, -1, 1)` componentwise; sits in the
    /// sector `[0, 1]` and is globally Lipschitz with constant 1.
    pub fn saturation(n: usize) -> Self {
        Nonlinearity::componentwise(
            NonlinearityKind::Sector {
                k1: Mat::zeros(n, n),
                k2: Mat::identity(n),
                s: Mat::identity(n),
            },
            n,
            |v| v.clamp(-1.0, 1.0),
            Some(1.0),
        )
        .expect("saturation vanishes at the origin")
    }

    /// `p(q) = q |q|` componentwise; monotone (positive real) but not
    /// globally Lipschitz.
    pub fn signed_square(n: usize) -> Self {
        Nonlinearity::componentwise(
            NonlinearityKind::PositiveReal { s: Mat::identity(n) },
            n,
            |v| v * libm::fabs(v),
            None,
        )
        .expect("signed square vanishes at the origin")
    }

    /// Identically zero map.
    pub fn zero(nq: usize, np: usize) -> Self {
        Nonlinearity::new(
            NonlinearityKind::Lipschitz { gamma: 1.0 },
            nq,
            np,
            Box::new(move |_q: &[f64]| vec![0.0; np]),
            Some(0.0),
        )
        .expect("zero map vanishes at the origin")
    }

    pub fn nq(&self) -> usize {
        self.nq
    }

    pub fn np(&self) -> usize {
        self.np
    }

    pub fn eval(&self, q: &[f64]) -> Vec<f64> {
        (self.eval)(q)
    }

    /// Evaluation into a preallocated buffer (simulation hot path).
    pub fn eval_into(&self, q: &[f64], out: &mut [f64]) {
        let v = (self.eval)(q);
        out.copy_from_slice(&v);
    }
}

/// Shape of the reduced multiplier `Mtilde` in `M ∝ T^T Mtilde T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorForm {
    /// `Mtilde = diag(X, -Y)`; observer-side block-diagonal parameterization.
    BlockDiagonal,
    /// `Mtilde = diag(X^{-1}, -Y^{-1})`; controller-side block-diagonal
    /// parameterization.
    BlockDiagonalInverse,
    /// `Mtilde = [[0, X], [X^T, Y]]`.
    AntiTriangular,
}

/// A multiplier `M`, its factor `T` (partitioned in four blocks), the family
/// base pair `(X0, Y0)`, and the declared reduced shape.
///
/// The family is the set of positive scalings `lambda (X0, Y0)`, `lambda > 0`.
/// `reassembly_constant` documents the fixed proportionality `c` in
/// `c * M = T^T Mtilde(X0, Y0) T`.
#[derive(Debug, Clone)]
pub struct MultiplierFactorization {
    pub m: Mat,
    pub t: Mat,
    pub x0: Mat,
    pub y0: Mat,
    pub form: FactorForm,
    pub reassembly_constant: f64,
    pub nq: usize,
    pub np: usize,
}

impl MultiplierFactorization {
    fn validate(self) -> Result<Self, IqcError> {
        let n = self.nq + self.np;
        if self.m.shape() != (n, n) || self.t.shape() != (n, n) {
            return Err(IqcError::ShapeMismatch("multiplier and factor must be (nq+np) square"));
        }
        if self.m.asymmetry() > 1e-9 * self.m.fro_norm().max(1.0) {
            return Err(IqcError::Mat(MatError::Asymmetric { deviation: self.m.asymmetry() }));
        }
        let c = mat::cond_2(&self.t)?;
        if !c.is_finite() || c > 1e12 {
            return Err(IqcError::SingularT { condition: c });
        }
        // A positive-semidefinite multiplier satisfies the constraint for
        // every map and certifies nothing; reject it.
        let lmin = mat::lambda_min(&self.m.symmetrized())?;
        if lmin >= -1e-9 {
            return Err(IqcError::TrivialMultiplier { lambda_min: lmin });
        }
        Ok(self)
    }

    /// Factor blocks `(T1, T2, T3, T4)` with `T1: nq x nq`, `T4: np x np`.
    pub fn t_blocks(&self) -> (Mat, Mat, Mat, Mat) {
        let (nq, np) = (self.nq, self.np);
        (
            self.t.block(0, 0, nq, nq),
            self.t.block(0, nq, nq, np),
            self.t.block(nq, 0, np, nq),
            self.t.block(nq, nq, np, np),
        )
    }

    /// Reduced multiplier at a family member `(x, y)` under the declared form.
    pub fn m_tilde(&self, x: &Mat, y: &Mat) -> Result<Mat, IqcError> {
        let n = self.nq + self.np;
        let mut mt = Mat::zeros(n, n);
        match self.form {
            FactorForm::BlockDiagonal => {
                mt.set_block(0, 0, x);
                mt.set_block(self.nq, self.nq, &-y);
            }
            FactorForm::BlockDiagonalInverse => {
                mt.set_block(0, 0, &mat::inv(x)?);
                mt.set_block(self.nq, self.nq, &-(&mat::inv(y)?));
            }
            FactorForm::AntiTriangular => {
                mt.set_block(0, self.nq, x);
                mt.set_block(self.nq, 0, &x.transpose());
                mt.set_block(self.nq, self.nq, y);
            }
        }
        Ok(mt)
    }

    /// `T^T Mtilde(X0, Y0) T`, which equals `reassembly_constant * M`.
    pub fn reassembled(&self) -> Result<Mat, IqcError> {
        let mt = self.m_tilde(&self.x0, &self.y0)?;
        Ok(&(&self.t.transpose() * &mt) * &self.t)
    }
}

/// Multiplier for a globally Lipschitz nonlinearity with bound `gamma`:
/// `M = diag(gamma^2 I, -I)`, `T = diag(gamma I, I)`, family base `(I, I)`.
pub fn mm_lipschitz(gamma: f64, nq: usize, np: usize) -> Result<MultiplierFactorization, IqcError> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(IqcError::NonPositiveGamma);
    }
    let n = nq + np;
    let mut m = Mat::zeros(n, n);
    for i in 0..nq {
        m[(i, i)] = gamma * gamma;
    }
    for i in nq..n {
        m[(i, i)] = -1.0;
    }
    let mut t = Mat::identity(n);
    for i in 0..nq {
        t[(i, i)] = gamma;
    }
    MultiplierFactorization {
        m,
        t,
        x0: Mat::identity(nq),
        y0: Mat::identity(np),
        form: FactorForm::BlockDiagonal,
        reassembly_constant: 1.0,
        nq,
        np,
    }
    .validate()
}

/// Multiplier for a sector-bounded nonlinearity
/// `(p - K1 q)^T S (p - K2 q) <= 0`:
///
/// ```text
/// M = [[-K1^T S K2 - K2^T S K1,  (S(K1+K2))^T],
///      [ S(K1+K2),               -2S         ]]
/// T = [[K2 - K1,  0], [K2 + K1, -2I]]
/// ```
///
/// The family base is `(S/2, S/2)` so that `T^T diag(X0, -Y0) T = M`
/// exactly; positive scalings recover the whole `(lambda S, lambda S)`
/// family. Requires `nq == np` and `K2 - K1` invertible.
pub fn mm_sector(k1: &Mat, k2: &Mat, s: &Mat) -> Result<MultiplierFactorization, IqcError> {
    let n = s.rows();
    if s.shape() != (n, n) || s.asymmetry() > 1e-9 * s.fro_norm().max(1.0) {
        return Err(IqcError::SingularS);
    }
    if k1.shape() != (n, n) || k2.shape() != (n, n) {
        return Err(IqcError::ShapeMismatch("sector multiplier requires square K1, K2 of the S size"));
    }
    let cs = mat::cond_2(s)?;
    if !cs.is_finite() || cs > 1e12 {
        return Err(IqcError::SingularS);
    }
    let k1s = &k1.transpose() * s;
    let k2s = &k2.transpose() * s;
    let m11 = &(&k1s * k2).scale(-1.0) - &(&k2s * k1);
    let m21 = s * &(k1 + k2);
    let m22 = s.scale(-2.0);
    let m = Mat::from_blocks(&[&[&m11.symmetrized(), &m21.transpose()], &[&m21, &m22]]);

    let t11 = k2 - k1;
    let t21 = k2 + k1;
    let t = Mat::from_blocks(&[
        &[&t11, &Mat::zeros(n, n)],
        &[&t21, &Mat::identity(n).scale(-2.0)],
    ]);
    MultiplierFactorization {
        m,
        t,
        x0: s.scale(0.5),
        y0: s.scale(0.5),
        form: FactorForm::BlockDiagonal,
        reassembly_constant: 1.0,
        nq: n,
        np: n,
    }
    .validate()
}

/// Multiplier for a positive-real (monotone-type) nonlinearity
/// `p^T S q >= 0`: `M = [[0, S], [S, 0]]`, `T = [[I, I], [I, -I]]`, family
/// base `(S, S)`. Reassembly carries the documented constant 2:
/// `T^T diag(S, -S) T = 2M`.
pub fn mm_positive_real(s: &Mat) -> Result<MultiplierFactorization, IqcError> {
    let n = s.rows();
    if s.shape() != (n, n) || s.asymmetry() > 1e-9 * s.fro_norm().max(1.0) {
        return Err(IqcError::SingularS);
    }
    let cs = mat::cond_2(s)?;
    if !cs.is_finite() || cs > 1e12 {
        return Err(IqcError::SingularS);
    }
    let z = Mat::zeros(n, n);
    let m = Mat::from_blocks(&[&[&z, s], &[s, &z]]);
    let i = Mat::identity(n);
    let t = Mat::from_blocks(&[&[&i, &i], &[&i, &i.scale(-1.0)]]);
    MultiplierFactorization {
        m,
        t,
        x0: s.clone(),
        y0: s.clone(),
        form: FactorForm::BlockDiagonal,
        reassembly_constant: 2.0,
        nq: n,
        np: n,
    }
    .validate()
}

/// Anti-triangular factorization of the positive-real multiplier:
/// `T = I`, `Mtilde = [[0, S], [S, 0]]` itself (family base `(S, 0)`).
/// This is the natural entry point for the anti-triangular synthesis
/// pipeline, where the reduced pair `(X, Y)` is searched over.
pub fn mm_positive_real_anti_triangular(s: &Mat) -> Result<MultiplierFactorization, IqcError> {
    let n = s.rows();
    if s.shape() != (n, n) || s.asymmetry() > 1e-9 * s.fro_norm().max(1.0) {
        return Err(IqcError::SingularS);
    }
    let cs = mat::cond_2(s)?;
    if !cs.is_finite() || cs > 1e12 {
        return Err(IqcError::SingularS);
    }
    let z = Mat::zeros(n, n);
    let m = Mat::from_blocks(&[&[&z, s], &[s, &z]]);
    MultiplierFactorization {
        m,
        t: Mat::identity(2 * n),
        x0: s.clone(),
        y0: Mat::zeros(n, n),
        form: FactorForm::AntiTriangular,
        reassembly_constant: 1.0,
        nq: n,
        np: n,
    }
    .validate()
}

/// User-supplied multiplier data. Symmetry of `M`, invertibility of `T` and
/// nontriviality are validated; family validity against the actual
/// nonlinearity is the caller's responsibility (use [`validate_dqc`]).
pub fn mm_custom(
    m: Mat,
    t: Mat,
    x0: Mat,
    y0: Mat,
    form: FactorForm,
    nq: usize,
    np: usize,
) -> Result<MultiplierFactorization, IqcError> {
    MultiplierFactorization { m, t, x0, y0, form, reassembly_constant: 1.0, nq, np }.validate()
}

/// Result of a sampled incremental-quadratic-constraint check.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// Smallest sampled value of the quadratic form.
    pub min_quadform: f64,
    /// Number of samples with form value below `-tol`.
    pub violations: usize,
    pub samples: usize,
}

/// Samples `n_samples` pairs `(q1, q2)` uniformly from the hypercube
/// `[-domain_halfwidth, domain_halfwidth]^nq` and evaluates the incremental
/// quadratic form of `m` on the increments. Deterministic per `seed`.
pub fn validate_dqc(
    p: &Nonlinearity,
    m: &Mat,
    domain_halfwidth: f64,
    n_samples: usize,
    seed: u64,
    tol: f64,
) -> Result<ValidationReport, IqcError> {
    let nq = p.nq();
    let np = p.np();
    if m.shape() != (nq + np, nq + np) {
        return Err(IqcError::ShapeMismatch("multiplier size must be nq+np"));
    }
    let mut rng = Lcg64::new(seed);
    let mut min_quadform = f64::INFINITY;
    let mut violations = 0usize;
    let mut q1 = vec![0.0; nq];
    let mut q2 = vec![0.0; nq];
    let mut z = vec![0.0; nq + np];
    for _ in 0..n_samples {
        for k in 0..nq {
            q1[k] = rng.uniform(-domain_halfwidth, domain_halfwidth);
            q2[k] = rng.uniform(-domain_halfwidth, domain_halfwidth);
        }
        let p1 = p.eval(&q1);
        let p2 = p.eval(&q2);
        if p1.len() != np || p2.len() != np {
            return Err(IqcError::EvaluatorFailure);
        }
        for k in 0..nq {
            z[k] = q2[k] - q1[k];
        }
        for k in 0..np {
            let d = p2[k] - p1[k];
            if !d.is_finite() {
                return Err(IqcError::EvaluatorFailure);
            }
            z[nq + k] = d;
        }
        // z^T M z
        let mut v = 0.0;
        for i in 0..z.len() {
            let zi = z[i];
            if zi == 0.0 {
                continue;
            }
            for j in 0..z.len() {
                v += zi * m[(i, j)] * z[j];
            }
        }
        if v < min_quadform {
            min_quadform = v;
        }
        if v < -tol {
            violations += 1;
        }
    }
    Ok(ValidationReport { min_quadform, violations, samples: n_samples })
}

/// Auxiliary blocks derived from a factorization and the plant:
///
/// ```text
/// Gamma1 = T1 - T2 T4^{-1} T3        (invertible when T is)
/// Gamma2 = T2 T4^{-1}
/// Atilde = A - E T4^{-1} T3 Cq
/// Etilde = E T4^{-1}
/// ```
#[derive(Debug, Clone)]
pub struct FactorBlocks {
    pub gamma1: Mat,
    pub gamma2: Mat,
    pub a_tilde: Mat,
    pub e_tilde: Mat,
    /// `T4^{-1} T3`, kept because the gain formulas reuse it.
    pub t4_inv_t3: Mat,
    /// `T4^{-1}`.
    pub t4_inv: Mat,
    /// `T4` itself.
    pub t4: Mat,
    /// `T3`.
    pub t3: Mat,
}

/// Derives [`FactorBlocks`] from a plant and a factorization. `T4` and
/// `Gamma1` must be invertible (condition number below `1e12`).
pub fn factor_blocks(
    plant: &PlantModel,
    mf: &MultiplierFactorization,
) -> Result<FactorBlocks, IqcError> {
    if mf.nq != plant.nq() || mf.np != plant.np() {
        return Err(IqcError::ShapeMismatch("factorization dimensions must match the plant"));
    }
    let (t1, t2, t3, t4) = mf.t_blocks();
    let c4 = mat::cond_2(&t4)?;
    if !c4.is_finite() || c4 > 1e12 {
        return Err(IqcError::SingularT4 { condition: c4 });
    }
    let t4_inv = mat::inv_guarded(&t4, 1e12).map_err(|_| IqcError::SingularT4 { condition: c4 })?;
    let t4_inv_t3 = &t4_inv * &t3;
    let gamma1 = &t1 - &(&t2 * &t4_inv_t3);
    let cg = mat::cond_2(&gamma1)?;
    if !cg.is_finite() || cg > 1e12 {
        return Err(IqcError::SingularGamma1 { condition: cg });
    }
    let gamma2 = &t2 * &t4_inv;
    let a_tilde = &plant.a - &(&(&plant.e * &t4_inv_t3) * &plant.cq);
    let e_tilde = &plant.e * &t4_inv;
    Ok(FactorBlocks { gamma1, gamma2, a_tilde, e_tilde, t4_inv_t3, t4_inv, t4, t3 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn lipschitz_unit_gamma_scalar() {
        let mf = mm_lipschitz(1.0, 1, 1).unwrap();
        assert_eq!(mf.m, Mat::from_rows(&[&[1.0, 0.0], &[0.0, -1.0]]));
        let re = mf.reassembled().unwrap();
        assert!((&re - &mf.m.scale(mf.reassembly_constant)).fro_norm() < 1e-12);
    }

    #[test]
    fn lipschitz_gamma_two() {
        let mf = mm_lipschitz(2.0, 1, 1).unwrap();
        assert_eq!(mf.m, Mat::from_rows(&[&[4.0, 0.0], &[0.0, -1.0]]));
    }

    #[test]
    fn lipschitz_rejects_nonpositive_gamma() {
        assert!(matches!(mm_lipschitz(0.0, 1, 1), Err(IqcError::NonPositiveGamma)));
        assert!(matches!(mm_lipschitz(-1.0, 2, 2), Err(IqcError::NonPositiveGamma)));
    }

    #[test]
    fn sector_scalar_examples() {
        // K1=0, K2=1, S=1
        let mf =
            mm_sector(&Mat::scalar(0.0), &Mat::scalar(1.0), &Mat::scalar(1.0)).unwrap();
        assert!((&mf.m - &Mat::from_rows(&[&[0.0, 1.0], &[1.0, -2.0]])).fro_norm() < 1e-12);
        // K1=-1, K2=1, S=1
        let mf =
            mm_sector(&Mat::scalar(-1.0), &Mat::scalar(1.0), &Mat::scalar(1.0)).unwrap();
        assert!((&mf.m - &Mat::from_rows(&[&[2.0, 0.0], &[0.0, -2.0]])).fro_norm() < 1e-12);
    }

    #[test]
    fn sector_reassembly_random_2x2() {
        let mut rng = crate::rng::Lcg64::new(11);
        for _ in 0..20 {
            let k1 = Mat::from_fn(2, 2, |_, _| rng.uniform(-1.0, 1.0));
            let mut k2 = Mat::from_fn(2, 2, |_, _| rng.uniform(-1.0, 1.0));
            // keep K2 - K1 comfortably invertible
            k2[(0, 0)] += 3.0;
            k2[(1, 1)] += 3.0;
            let s = Mat::identity(2);
            let mf = match mm_sector(&k1, &k2, &s) {
                Ok(mf) => mf,
                // a random draw may assemble a PSD (trivial) multiplier
                Err(IqcError::TrivialMultiplier { .. }) => continue,
                Err(e) => panic!("unexpected error: {e}"),
            };
            let re = mf.reassembled().unwrap();
            assert!(
                (&re - &mf.m.scale(mf.reassembly_constant)).fro_norm()
                    < 1e-9 * mf.m.fro_norm().max(1.0)
            );
        }
    }

    #[test]
    fn positive_real_scalar_and_block() {
        let mf = mm_positive_real(&Mat::scalar(1.0)).unwrap();
        assert!((&mf.m - &Mat::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]])).fro_norm() < 1e-12);
        // reassembly constant 2
        let re = mf.reassembled().unwrap();
        assert!((&re - &mf.m.scale(2.0)).fro_norm() < 1e-12);

        let mf2 = mm_positive_real(&Mat::identity(2)).unwrap();
        assert_eq!(mf2.m.shape(), (4, 4));
        assert!((mf2.m[(0, 2)] - 1.0).abs() < 1e-15);
        assert!((mf2.m[(1, 3)] - 1.0).abs() < 1e-15);
        let re2 = mf2.reassembled().unwrap();
        assert!((&re2 - &mf2.m.scale(2.0)).fro_norm() < 1e-12);
    }

    #[test]
    fn positive_real_anti_triangular_exact() {
        let mf = mm_positive_real_anti_triangular(&Mat::scalar(1.0)).unwrap();
        let re = mf.reassembled().unwrap();
        assert!((&re - &mf.m).fro_norm() < 1e-15);
    }

    #[test]
    fn constructors_reject_psd_multiplier() {
        // K1 = K2 = I makes the sector multiplier -2*[[I,-I],[-I,I]]... check
        // instead a custom PSD matrix.
        let m = Mat::identity(2);
        let err = mm_custom(m, Mat::identity(2), Mat::identity(1), Mat::identity(1),
            FactorForm::BlockDiagonal, 1, 1);
        assert!(matches!(err, Err(IqcError::TrivialMultiplier { .. })));
    }

    #[test]
    fn validate_sine_lipschitz() {
        let p = Nonlinearity::sine(1);
        let mf = mm_lipschitz(1.0, 1, 1).unwrap();
        let r = validate_dqc(&p, &mf.m, 10.0, 100_000, 7, 1e-9).unwrap();
        assert_eq!(r.violations, 0, "min form value {}", r.min_quadform);
    }

    #[test]
    fn validate_identity_form_vanishes() {
        let p = Nonlinearity::componentwise(
            NonlinearityKind::Lipschitz { gamma: 1.0 },
            1,
            |v| v,
            Some(1.0),
        )
        .unwrap();
        let mf = mm_lipschitz(1.0, 1, 1).unwrap();
        let r = validate_dqc(&p, &mf.m, 5.0, 10_000, 3, 1e-9).unwrap();
        assert_eq!(r.violations, 0);
        assert!(r.min_quadform.abs() < 1e-9);
    }

    #[test]
    fn validate_detects_violation() {
        // p(q) = 2q breaks the gamma = 1 bound: q1=0, q2=1 gives 1 - 4 = -3
        let p = Nonlinearity::componentwise(
            NonlinearityKind::Lipschitz { gamma: 2.0 },
            1,
            |v| 2.0 * v,
            Some(2.0),
        )
        .unwrap();
        let mf = mm_lipschitz(1.0, 1, 1).unwrap();
        let r = validate_dqc(&p, &mf.m, 10.0, 10_000, 5, 1e-9).unwrap();
        assert!(r.violations > 0);
        assert!(r.min_quadform < -1.0);
    }

    #[test]
    fn validate_scaling_closure() {
        let p = Nonlinearity::sine(1);
        let mf = mm_lipschitz(1.0, 1, 1).unwrap();
        for lambda in [0.5, 3.0] {
            let r = validate_dqc(&p, &mf.m.scale(lambda), 10.0, 50_000, 13, 1e-9).unwrap();
            assert_eq!(r.violations, 0, "scaling {lambda} broke the constraint");
        }
    }

    #[test]
    fn nonzero_origin_rejected() {
        let err = Nonlinearity::componentwise(
            NonlinearityKind::Lipschitz { gamma: 1.0 },
            1,
            |v| v + 1.0,
            None,
        );
        assert!(matches!(err, Err(IqcError::NonzeroAtOrigin { .. })));
    }

    #[test]
    fn factor_blocks_lipschitz_collapse() {
        // T2 = T3 = 0 collapses the auxiliary blocks to the plant matrices.
        let plant = presets::single_link_arm();
        let mf = mm_lipschitz(1.0, 1, 1).unwrap();
        let fb = factor_blocks(&plant, &mf).unwrap();
        assert!((&fb.gamma1 - &Mat::scalar(1.0)).fro_norm() < 1e-14);
        assert!(fb.gamma2.fro_norm() < 1e-14);
        assert!((&fb.a_tilde - &plant.a).fro_norm() < 1e-14);
        assert!((&fb.e_tilde - &plant.e).fro_norm() < 1e-14);
    }

    #[test]
    fn factor_blocks_sector_hand_case() {
        // K1=0, K2=1, S=1: T = [[1,0],[1,-2]]
        // Gamma1 = T1 - T2 T4^{-1} T3 = 1, Gamma2 = T2 T4^{-1} = 0
        let plant = presets::single_link_arm();
        let mf = mm_sector(&Mat::scalar(0.0), &Mat::scalar(1.0), &Mat::scalar(1.0)).unwrap();
        let fb = factor_blocks(&plant, &mf).unwrap();
        assert!((fb.gamma1[(0, 0)] - 1.0).abs() < 1e-14);
        assert!(fb.gamma2.fro_norm() < 1e-14);
        // Atilde = A - E T4^{-1} T3 Cq with T3 = 1, T4 = -2
        let expect = &plant.a - &(&(&plant.e * &Mat::scalar(-0.5)) * &plant.cq);
        assert!((&fb.a_tilde - &expect).fro_norm() < 1e-14);
    }

    #[test]
    fn factor_blocks_reconstruct_t_blocks() {
        // T1 = Gamma1 + Gamma2 T3 and T2 = Gamma2 T4
        for mf in [
            mm_lipschitz(2.5, 1, 1).unwrap(),
            mm_sector(&Mat::scalar(-1.0), &Mat::scalar(1.0), &Mat::scalar(1.0)).unwrap(),
            mm_positive_real(&Mat::scalar(1.0)).unwrap(),
        ] {
            let plant = presets::single_link_arm();
            let fb = factor_blocks(&plant, &mf).unwrap();
            let (t1, t2, _, _) = mf.t_blocks();
            let t1r = &fb.gamma1 + &(&fb.gamma2 * &fb.t3);
            let t2r = &fb.gamma2 * &fb.t4;
            assert!((&t1 - &t1r).fro_norm() < 1e-9);
            assert!((&t2 - &t2r).fro_norm() < 1e-9);
        }
    }
}
