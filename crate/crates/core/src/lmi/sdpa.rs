//! SDPA sparse-format (`.dat-s`) export and import.
//!
//! The exported problem is the scalarized feasibility problem in SDPA's
//! standard dual form
//!
//! ```text
//! minimize    c^T x
//! subject to  X = sum_k x_k F_k - F_0,   X ⪰ 0 (block diagonal)
//! ```
//!
//! with `c = 0`. Every constraint block of the source problem contributes
//! one SDPA block with `F_0 = constant (+ margin I for strict senses)` and
//! `F_k = -G_k`; every positive-definite matrix variable contributes a
//! block `V ⪰ 0`; sign-constrained scalars are gathered into one trailing
//! diagonal block. Scalar unknowns are ordered exactly as in
//! [`LmiProblem::scalarize`] (declaration order; `Full` entries row-major;
//! symmetric structures upper-triangle row-major), so an external solver's
//! primal vector can be re-imported directly with [`import_solution`].
//!
//! File layout: `mDIM`, `nBLOCK`, `bLOCKsTRUCT` (negative entry = diagonal
//! block), the objective line, then one `k b i j v` line per upper-triangle
//! nonzero, all 1-indexed except `k = 0` for `F_0`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::lmi::{Assignment, LmiError, LmiProblem, VarStructure};
use crate::mat::Mat;

/// A parsed (or to-be-written) SDPA sparse problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpaProblem {
    pub m_dim: usize,
    pub block_struct: Vec<i64>,
    pub objective: Vec<f64>,
    /// `(matrix k, block b, i, j, value)`; `k = 0` is the constant matrix,
    /// blocks and indices are 1-based, `i <= j`.
    pub entries: Vec<(usize, usize, usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SdpaParseError {
    MissingHeader(&'static str),
    BadNumber { line: usize },
    BadEntry { line: usize },
}

impl core::fmt::Display for SdpaParseError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SdpaParseError::MissingHeader(which) => write!(f, "missing header line: {which}"),
            SdpaParseError::BadNumber { line } => write!(f, "unparseable number on line {line}"),
            SdpaParseError::BadEntry { line } => write!(f, "malformed entry on line {line}"),
        }
    }
}

/// Converts an [`LmiProblem`] to the SDPA block form.
pub fn to_sdpa(problem: &LmiProblem) -> SdpaProblem {
    let s = problem.scalarize();
    let m_dim = s.n_scalars;
    let mut block_struct: Vec<i64> = Vec::new();
    let mut entries: Vec<(usize, usize, usize, usize, f64)> = Vec::new();

    let push_dense = |entries: &mut Vec<(usize, usize, usize, usize, f64)>,
                          k: usize,
                          b: usize,
                          m: &Mat,
                          scale: f64| {
        for i in 0..m.rows() {
            for j in i..m.cols() {
                let v = m[(i, j)] * scale;
                if v != 0.0 {
                    entries.push((k, b, i + 1, j + 1, v));
                }
            }
        }
    };

    // constraint blocks: X_b = sum x_k (-G_k) - constant ⪰ 0
    for blk in &s.blocks {
        block_struct.push(blk.size as i64);
        let b = block_struct.len();
        let mut f0 = blk.constant.clone();
        if blk.extra_margin != 0.0 {
            f0 = &f0 + &Mat::identity(blk.size).scale(blk.extra_margin);
        }
        push_dense(&mut entries, 0, b, &f0, 1.0);
        for (k, g) in &blk.basis {
            push_dense(&mut entries, k + 1, b, g, -1.0);
        }
    }

    // positive-definite variable blocks: V ⪰ 0
    for (vi, v) in problem.vars.iter().enumerate() {
        if v.structure != VarStructure::SymmetricPosDef {
            continue;
        }
        block_struct.push(v.rows as i64);
        let b = block_struct.len();
        let mut k = s.offsets[vi];
        for i in 0..v.rows {
            for j in i..v.rows {
                entries.push((k + 1, b, i + 1, j + 1, 1.0));
                k += 1;
            }
        }
    }

    // sign-constrained scalars as one diagonal block
    let signed: Vec<usize> = problem
        .vars
        .iter()
        .enumerate()
        .filter(|(_, v)| {
            matches!(v.structure, VarStructure::NonnegScalar | VarStructure::PosScalar)
        })
        .map(|(vi, _)| s.offsets[vi])
        .collect();
    if !signed.is_empty() {
        block_struct.push(-(signed.len() as i64));
        let b = block_struct.len();
        for (slot, k) in signed.iter().enumerate() {
            entries.push((k + 1, b, slot + 1, slot + 1, 1.0));
        }
    }

    SdpaProblem { m_dim, block_struct, objective: alloc::vec![0.0; m_dim], entries }
}

/// Serializes to `.dat-s` text.
pub fn write_sdpa(p: &SdpaProblem) -> String {
    let mut out = String::new();
    out.push_str(&format!("{}\n", p.m_dim));
    out.push_str(&format!("{}\n", p.block_struct.len()));
    let bs: Vec<String> = p.block_struct.iter().map(|b| b.to_string()).collect();
    out.push_str(&bs.join(" "));
    out.push('\n');
    let c: Vec<String> = p.objective.iter().map(|v| format_f64(*v)).collect();
    out.push_str(&c.join(" "));
    out.push('\n');
    for (k, b, i, j, v) in &p.entries {
        out.push_str(&format!("{} {} {} {} {}\n", k, b, i, j, format_f64(*v)));
    }
    out
}

/// Exports a problem as `.dat-s` text.
pub fn export_sdpa(problem: &LmiProblem) -> String {
    write_sdpa(&to_sdpa(problem))
}

fn format_f64(v: f64) -> String {
    if v == libm::trunc(v) && libm::fabs(v) < 1e15 {
        format!("{}", v as i64)
    } else {
        // shortest round-trip decimal
        format!("{v}")
    }
}

/// Parses `.dat-s` text. Comment lines (starting with `"` or `*`) and the
/// usual brace/comma separators in the structure lines are accepted.
pub fn parse_sdpa(text: &str) -> Result<SdpaProblem, SdpaParseError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| {
            let t = l.trim_start();
            !t.is_empty() && !t.starts_with('"') && !t.starts_with('*')
        });

    let mut next_tokens = |what: &'static str| -> Result<(usize, Vec<String>), SdpaParseError> {
        let (idx, line) = lines.next().ok_or(SdpaParseError::MissingHeader(what))?;
        let cleaned: String = line
            .chars()
            .map(|c| if matches!(c, '{' | '}' | '(' | ')' | ',') { ' ' } else { c })
            .collect();
        Ok((idx + 1, cleaned.split_whitespace().map(|s| s.to_string()).collect()))
    };

    let (l1, t1) = next_tokens("mDIM")?;
    let m_dim: usize =
        t1.first().and_then(|s| s.parse().ok()).ok_or(SdpaParseError::BadNumber { line: l1 })?;
    let (l2, t2) = next_tokens("nBLOCK")?;
    let n_block: usize =
        t2.first().and_then(|s| s.parse().ok()).ok_or(SdpaParseError::BadNumber { line: l2 })?;
    let (l3, t3) = next_tokens("bLOCKsTRUCT")?;
    if t3.len() < n_block {
        return Err(SdpaParseError::BadEntry { line: l3 });
    }
    let mut block_struct = Vec::with_capacity(n_block);
    for tok in t3.iter().take(n_block) {
        block_struct.push(tok.parse::<i64>().map_err(|_| SdpaParseError::BadNumber { line: l3 })?);
    }
    let (l4, t4) = next_tokens("objective")?;
    if t4.len() < m_dim {
        return Err(SdpaParseError::BadEntry { line: l4 });
    }
    let mut objective = Vec::with_capacity(m_dim);
    for tok in t4.iter().take(m_dim) {
        objective.push(tok.parse::<f64>().map_err(|_| SdpaParseError::BadNumber { line: l4 })?);
    }

    let mut entries = Vec::new();
    for (idx, line) in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 5 {
            return Err(SdpaParseError::BadEntry { line: idx + 1 });
        }
        let k: usize = toks[0].parse().map_err(|_| SdpaParseError::BadNumber { line: idx + 1 })?;
        let b: usize = toks[1].parse().map_err(|_| SdpaParseError::BadNumber { line: idx + 1 })?;
        let i: usize = toks[2].parse().map_err(|_| SdpaParseError::BadNumber { line: idx + 1 })?;
        let j: usize = toks[3].parse().map_err(|_| SdpaParseError::BadNumber { line: idx + 1 })?;
        let v: f64 = toks[4].parse().map_err(|_| SdpaParseError::BadNumber { line: idx + 1 })?;
        entries.push((k, b, i, j, v));
    }
    Ok(SdpaProblem { m_dim, block_struct, objective, entries })
}

/// Re-imports an external solver's primal vector (in the documented scalar
/// order) as a named [`Assignment`], computing the residual through the
/// term-list evaluation path.
pub fn import_solution(problem: &LmiProblem, x: &[f64]) -> Result<Assignment, LmiError> {
    if x.len() != problem.n_scalars() {
        return Err(LmiError::ShapeMismatch { context: "solution vector length" });
    }
    let values = problem.unpack(x);
    let residual = problem.check_assignment(&values, f64::INFINITY)?;
    Ok(Assignment { values, residual })
}
