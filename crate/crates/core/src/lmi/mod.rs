//! Affine symmetric-matrix constraint problems in named decision variables.
//!
//! A problem is a set of matrix [`DecisionVar`]s plus a list of
//! [`LmiBlock`]s. Each block is an affine symmetric-valued map of the
//! variables, constrained negative semidefinite (or strictly negative
//! definite with a margin). Blocks are built from paired terms so the map
//! is symmetric by construction.
//!
//! Submodules: [`build`] assembles the synthesis inequalities, [`solve`]
//! is the internal feasibility heuristic, [`sdpa`] exports problems in the
//! SDPA sparse text format for external solvers.

pub mod build;
pub mod sdpa;
pub mod solve;

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::mat::{self, Mat, MatError};

/// Structural constraint on a decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarStructure {
    Full,
    Symmetric,
    SymmetricPosDef,
    NonnegScalar,
    PosScalar,
}

/// A named matrix decision variable.
#[derive(Debug, Clone)]
pub struct DecisionVar {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub structure: VarStructure,
}

impl DecisionVar {
    /// Number of scalar unknowns: upper triangle for symmetric structures,
    /// all entries otherwise.
    pub fn n_scalars(&self) -> usize {
        match self.structure {
            VarStructure::Full => self.rows * self.cols,
            VarStructure::Symmetric | VarStructure::SymmetricPosDef => {
                self.rows * (self.rows + 1) / 2
            }
            VarStructure::NonnegScalar | VarStructure::PosScalar => 1,
        }
    }
}

/// One affine term of a block.
#[derive(Debug, Clone)]
pub enum Term {
    /// `left * V * right` (or `left * V^T * right` when `transpose_var`).
    Sandwich { left: Mat, var: usize, right: Mat, transpose_var: bool },
    /// Scalar variable times a fixed symmetric coefficient matrix.
    Scaled { var: usize, coeff: Mat },
}

/// Constraint sense of a block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sense {
    NegSemidef,
    /// Strict inequality, enforced with at least the given margin.
    NegDef { margin: f64 },
}

/// An affine symmetric-matrix constraint `constant + sum(terms) ⪯ 0`.
#[derive(Debug, Clone)]
pub struct LmiBlock {
    pub label: String,
    pub constant: Mat,
    pub terms: Vec<Term>,
    pub sense: Sense,
}

impl LmiBlock {
    pub fn new(label: &str, n: usize) -> Self {
        LmiBlock {
            label: label.to_string(),
            constant: Mat::zeros(n, n),
            terms: Vec::new(),
            sense: Sense::NegSemidef,
        }
    }

    pub fn size(&self) -> usize {
        self.constant.rows()
    }

    /// Adds a fixed symmetric contribution.
    pub fn add_const(&mut self, m: &Mat) {
        self.constant = &self.constant + m;
    }

    /// Adds `left * V * right` together with its transpose partner, keeping
    /// the block symmetric for any `V`.
    pub fn add_sym_pair(&mut self, left: Mat, var: usize, right: Mat) {
        self.terms.push(Term::Sandwich {
            left: right.transpose(),
            var,
            right: left.transpose(),
            transpose_var: true,
        });
        self.terms.push(Term::Sandwich { left, var, right, transpose_var: false });
    }

    /// Adds a single `left * V * right` term that is symmetric on its own
    /// (for symmetric `V` and `right = left^T` up to scaling).
    pub fn add_self_adjoint(&mut self, left: Mat, var: usize, right: Mat) {
        self.terms.push(Term::Sandwich { left, var, right, transpose_var: false });
    }

    /// Adds `left * V^T * right` together with its transpose partner.
    pub fn add_sym_pair_transposed(&mut self, left: Mat, var: usize, right: Mat) {
        self.terms.push(Term::Sandwich {
            left: right.transpose(),
            var,
            right: left.transpose(),
            transpose_var: false,
        });
        self.terms.push(Term::Sandwich { left, var, right, transpose_var: true });
    }

    /// Adds `v * coeff` for a scalar variable `v` and symmetric `coeff`.
    pub fn add_scaled(&mut self, var: usize, coeff: Mat) {
        self.terms.push(Term::Scaled { var, coeff });
    }
}

/// Errors from problem assembly and evaluation.
#[derive(Debug)]
pub enum LmiError {
    DuplicateVar(String),
    UnknownVar(String),
    ShapeMismatch { context: &'static str },
    Mat(MatError),
}

impl From<MatError> for LmiError {
    fn from(e: MatError) -> Self {
        LmiError::Mat(e)
    }
}

impl fmt::Display for LmiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LmiError::DuplicateVar(n) => write!(f, "duplicate decision variable {n}"),
            LmiError::UnknownVar(n) => write!(f, "unknown decision variable {n}"),
            LmiError::ShapeMismatch { context } => write!(f, "shape mismatch in {context}"),
            LmiError::Mat(e) => write!(f, "{e}"),
        }
    }
}

/// A feasibility problem: variables, blocks, and the fixed scalars the
/// blocks were assembled with (recorded for reporting and round-trips).
#[derive(Debug, Clone, Default)]
pub struct LmiProblem {
    pub vars: Vec<DecisionVar>,
    pub blocks: Vec<LmiBlock>,
    pub fixed_scalars: BTreeMap<String, f64>,
}

impl LmiProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        structure: VarStructure,
    ) -> Result<usize, LmiError> {
        if self.vars.iter().any(|v| v.name == name) {
            return Err(LmiError::DuplicateVar(name.to_string()));
        }
        match structure {
            VarStructure::Symmetric | VarStructure::SymmetricPosDef if rows != cols => {
                return Err(LmiError::ShapeMismatch { context: "symmetric variables must be square" })
            }
            VarStructure::NonnegScalar | VarStructure::PosScalar if (rows, cols) != (1, 1) => {
                return Err(LmiError::ShapeMismatch { context: "scalar variables must be 1x1" })
            }
            _ => {}
        }
        self.vars.push(DecisionVar { name: name.to_string(), rows, cols, structure });
        Ok(self.vars.len() - 1)
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }

    /// Total number of scalar unknowns.
    pub fn n_scalars(&self) -> usize {
        self.vars.iter().map(|v| v.n_scalars()).sum()
    }

    /// Evaluates one block at a named assignment, through the term list
    /// (this is the path independent of the scalarized solver form).
    pub fn eval_block(
        &self,
        block: &LmiBlock,
        values: &BTreeMap<String, Mat>,
    ) -> Result<Mat, LmiError> {
        let mut acc = block.constant.clone();
        for term in &block.terms {
            match term {
                Term::Sandwich { left, var, right, transpose_var } => {
                    let v = self.lookup(values, *var)?;
                    let vm = if *transpose_var { v.transpose() } else { v.clone() };
                    acc = &acc + &(&(left * &vm) * right);
                }
                Term::Scaled { var, coeff } => {
                    let v = self.lookup(values, *var)?;
                    if v.shape() != (1, 1) {
                        return Err(LmiError::ShapeMismatch { context: "scaled term expects a scalar" });
                    }
                    acc = &acc + &coeff.scale(v[(0, 0)]);
                }
            }
        }
        Ok(acc)
    }

    fn lookup<'a>(
        &self,
        values: &'a BTreeMap<String, Mat>,
        var: usize,
    ) -> Result<&'a Mat, LmiError> {
        let dv = &self.vars[var];
        let v = values.get(&dv.name).ok_or_else(|| LmiError::UnknownVar(dv.name.clone()))?;
        if v.shape() != (dv.rows, dv.cols) {
            return Err(LmiError::ShapeMismatch { context: "assignment shape" });
        }
        Ok(v)
    }

    /// Independent check of an assignment: evaluates every block through the
    /// term list and verifies the structural constraints. Returns the worst
    /// block eigenvalue.
    pub fn check_assignment(
        &self,
        values: &BTreeMap<String, Mat>,
        tol: f64,
    ) -> Result<f64, LmiError> {
        let mut worst = f64::NEG_INFINITY;
        for block in &self.blocks {
            let m = self.eval_block(block, values)?;
            let lmax = mat::lambda_max(&m.symmetrized())?;
            if lmax > worst {
                worst = lmax;
            }
            if lmax > tol {
                return Ok(lmax);
            }
        }
        for dv in &self.vars {
            let v = self.lookup(values, self.var_index(&dv.name).unwrap())?;
            match dv.structure {
                VarStructure::SymmetricPosDef => {
                    let lmin = mat::lambda_min(&v.symmetrized())?;
                    if lmin <= 0.0 {
                        return Ok(f64::INFINITY);
                    }
                }
                VarStructure::NonnegScalar => {
                    if v[(0, 0)] < 0.0 {
                        return Ok(f64::INFINITY);
                    }
                }
                VarStructure::PosScalar => {
                    if v[(0, 0)] <= 0.0 {
                        return Ok(f64::INFINITY);
                    }
                }
                _ => {}
            }
        }
        Ok(worst)
    }
}

/// A solved assignment: variable values plus the worst block eigenvalue.
#[derive(Debug, Clone)]
pub struct Assignment {
    pub values: BTreeMap<String, Mat>,
    pub residual: f64,
}

impl Assignment {
    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.values.get(name)
    }

    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.values.get(name).map(|m| m[(0, 0)])
    }
}

/// The scalarized (basis-expanded) form shared by the internal solver and
/// the SDPA exporter: each block is `constant + sum_k x_k G_k` over the
/// packed scalar unknowns.
#[derive(Debug, Clone)]
pub struct Scalarized {
    pub n_scalars: usize,
    /// Per variable: offset of its first scalar.
    pub offsets: Vec<usize>,
    pub blocks: Vec<ScalarizedBlock>,
}

#[derive(Debug, Clone)]
pub struct ScalarizedBlock {
    pub label: String,
    pub size: usize,
    pub constant: Mat,
    /// `(scalar index, symmetric basis matrix)`, ascending in index.
    pub basis: Vec<(usize, Mat)>,
    /// Additional margin from a strict sense.
    pub extra_margin: f64,
}

impl LmiProblem {
    /// Packed scalar layout: variables in declaration order; `Full` entries
    /// row-major; symmetric structures upper-triangle row-major.
    pub fn scalarize(&self) -> Scalarized {
        let mut offsets = Vec::with_capacity(self.vars.len());
        let mut n = 0usize;
        for v in &self.vars {
            offsets.push(n);
            n += v.n_scalars();
        }
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let size = b.size();
            let mut acc: BTreeMap<usize, Mat> = BTreeMap::new();
            for term in &b.terms {
                match term {
                    Term::Sandwich { left, var, right, transpose_var } => {
                        let dv = &self.vars[*var];
                        for (k, basis) in var_basis(dv) {
                            let bm = if *transpose_var { basis.transpose() } else { basis };
                            let contrib = &(left * &bm) * right;
                            let slot = acc
                                .entry(offsets[*var] + k)
                                .or_insert_with(|| Mat::zeros(size, size));
                            *slot = &*slot + &contrib;
                        }
                    }
                    Term::Scaled { var, coeff } => {
                        let slot = acc
                            .entry(offsets[*var])
                            .or_insert_with(|| Mat::zeros(size, size));
                        *slot = &*slot + coeff;
                    }
                }
            }
            let basis: Vec<(usize, Mat)> =
                acc.into_iter().map(|(k, g)| (k, g.symmetrized())).collect();
            let extra_margin = match b.sense {
                Sense::NegSemidef => 0.0,
                Sense::NegDef { margin } => margin,
            };
            blocks.push(ScalarizedBlock {
                label: b.label.clone(),
                size,
                constant: b.constant.symmetrized(),
                basis,
                extra_margin,
            });
        }
        Scalarized { n_scalars: n, offsets, blocks }
    }

    /// Unpacks a scalar vector into named variable values.
    pub fn unpack(&self, x: &[f64]) -> BTreeMap<String, Mat> {
        let mut values = BTreeMap::new();
        let mut off = 0usize;
        for v in &self.vars {
            let m = match v.structure {
                VarStructure::Full => {
                    Mat::from_vec(v.rows, v.cols, x[off..off + v.rows * v.cols].to_vec())
                }
                VarStructure::Symmetric | VarStructure::SymmetricPosDef => {
                    let mut m = Mat::zeros(v.rows, v.rows);
                    let mut k = off;
                    for i in 0..v.rows {
                        for j in i..v.rows {
                            m[(i, j)] = x[k];
                            m[(j, i)] = x[k];
                            k += 1;
                        }
                    }
                    m
                }
                VarStructure::NonnegScalar | VarStructure::PosScalar => Mat::scalar(x[off]),
            };
            values.insert(v.name.clone(), m);
            off += v.n_scalars();
        }
        values
    }

    /// Packs named values into the scalar layout (inverse of [`unpack`]).
    pub fn pack(&self, values: &BTreeMap<String, Mat>) -> Result<Vec<f64>, LmiError> {
        let mut x = Vec::with_capacity(self.n_scalars());
        for v in &self.vars {
            let m = values.get(&v.name).ok_or_else(|| LmiError::UnknownVar(v.name.clone()))?;
            if m.shape() != (v.rows, v.cols) {
                return Err(LmiError::ShapeMismatch { context: "pack" });
            }
            match v.structure {
                VarStructure::Full => {
                    for i in 0..v.rows {
                        for j in 0..v.cols {
                            x.push(m[(i, j)]);
                        }
                    }
                }
                VarStructure::Symmetric | VarStructure::SymmetricPosDef => {
                    for i in 0..v.rows {
                        for j in i..v.rows {
                            x.push(0.5 * (m[(i, j)] + m[(j, i)]));
                        }
                    }
                }
                VarStructure::NonnegScalar | VarStructure::PosScalar => x.push(m[(0, 0)]),
            }
        }
        Ok(x)
    }
}

/// Basis matrices of a variable's scalar components, in packed order.
fn var_basis(v: &DecisionVar) -> Vec<(usize, Mat)> {
    let mut out = Vec::with_capacity(v.n_scalars());
    match v.structure {
        VarStructure::Full => {
            let mut k = 0;
            for i in 0..v.rows {
                for j in 0..v.cols {
                    let mut b = Mat::zeros(v.rows, v.cols);
                    b[(i, j)] = 1.0;
                    out.push((k, b));
                    k += 1;
                }
            }
        }
        VarStructure::Symmetric | VarStructure::SymmetricPosDef => {
            let mut k = 0;
            for i in 0..v.rows {
                for j in i..v.rows {
                    let mut b = Mat::zeros(v.rows, v.rows);
                    b[(i, j)] = 1.0;
                    b[(j, i)] = 1.0;
                    out.push((k, b));
                    k += 1;
                }
            }
        }
        VarStructure::NonnegScalar | VarStructure::PosScalar => {
            out.push((0, Mat::scalar(1.0)));
        }
    }
    out
}

/// Evaluates a scalarized block at `x`.
pub fn eval_scalarized(block: &ScalarizedBlock, x: &[f64]) -> Mat {
    let mut m = block.constant.clone();
    for (k, g) in &block.basis {
        let xk = x[*k];
        if xk != 0.0 {
            m = &m + &g.scale(xk);
        }
    }
    m
}
