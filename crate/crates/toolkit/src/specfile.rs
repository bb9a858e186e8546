//! System-description file parser.
//!
//! The format is line-oriented `key = value` pairs under bracketed
//! sections. `#` starts a comment; matrices are whitespace-separated
//! row-major numbers with shapes taken from `[dims]`. Unknown sections or
//! keys are rejected.
//!
//! ```text
//! [dims]          nx nu ny nq np nw
//! [matrices]      A B C D Cq E Ew Fw      (D, Ew, Fw default to zero)
//! [nonlinearity]  kind (sin | saturation | signed_square | zero),
//!                 lipschitz_const
//! [multiplier]    kind (lipschitz | sector | positive_real |
//!                 positive_real_anti | custom) plus its parameters
//! [options]       synthesis / trigger / simulation settings
//! ```

use std::collections::BTreeMap;
use std::fmt;

use etc_core::etm::TriggerVariant;
use etc_core::iqc::{
    self, FactorForm, MultiplierFactorization, Nonlinearity, PlantModel,
};
use etc_core::mat::Mat;
use etc_core::synthesis::SynthesisMode;

#[derive(Debug)]
pub struct ParseError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

fn err(line: Option<usize>, message: impl Into<String>) -> ParseError {
    ParseError { line, message: message.into() }
}

/// Which closed-loop configuration to simulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigKind {
    A,
    B,
    C,
}

impl ConfigKind {
    pub fn parse(s: &str) -> Result<Self, ParseError> {
        match s {
            "a" => Ok(ConfigKind::A),
            "b" => Ok(ConfigKind::B),
            "c" => Ok(ConfigKind::C),
            other => Err(err(None, format!("unknown configuration `{other}` (expected a|b|c)"))),
        }
    }
}

/// Resolved `[options]` with documented defaults.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub mode: SynthesisMode,
    pub alpha1_grid: Vec<f64>,
    pub alpha2_grid: Vec<f64>,
    pub mu1: Option<f64>,
    pub mu2: Option<f64>,
    pub alpha0: f64,
    pub minimize_condition: bool,
    pub margin: f64,
    pub gain_cap: Option<f64>,
    pub x2_fixed: Option<Mat>,
    pub rho: f64,
    pub a1: f64,
    pub a2: f64,
    pub eps: f64,
    pub eps_u: f64,
    pub eps_y: f64,
    pub omega0: f64,
    pub ell: Option<f64>,
    pub horizon: f64,
    pub step: Option<f64>,
    pub seed: u64,
    pub x0: Vec<f64>,
    pub xhat0: Vec<f64>,
    pub config: ConfigKind,
    pub trigger_variant: TriggerVariant,
    pub windows: Vec<(f64, f64)>,
}

/// A fully parsed system description.
#[derive(Debug)]
pub struct SpecFile {
    pub plant: PlantModel,
    pub nonlinearity: Nonlinearity,
    pub multiplier: MultiplierFactorization,
    pub options: RunOptions,
}

struct Section {
    entries: BTreeMap<String, (usize, String)>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    fn reject_leftovers(&self, name: &str) -> Result<(), ParseError> {
        if let Some((key, (line, _))) = self.entries.iter().next() {
            return Err(err(Some(*line), format!("unknown key `{key}` in section [{name}]")));
        }
        Ok(())
    }
}

fn split_sections(text: &str) -> Result<BTreeMap<String, Section>, ParseError> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            if !line.ends_with(']') {
                return Err(err(Some(line_no), "malformed section header"));
            }
            let name = line[1..line.len() - 1].trim().to_string();
            if !matches!(name.as_str(), "dims" | "matrices" | "nonlinearity" | "multiplier" | "options")
            {
                return Err(err(Some(line_no), format!("unknown section [{name}]")));
            }
            if sections.contains_key(&name) {
                return Err(err(Some(line_no), format!("duplicate section [{name}]")));
            }
            sections.insert(name.clone(), Section { entries: BTreeMap::new() });
            current = Some(name);
            continue;
        }
        let Some(section) = current.as_ref() else {
            return Err(err(Some(line_no), "entry before any section header"));
        };
        let Some(eq) = line.find('=') else {
            return Err(err(Some(line_no), "expected `key = value`"));
        };
        let key = line[..eq].trim().to_string();
        let value = line[eq + 1..].trim().to_string();
        let sec = sections.get_mut(section).unwrap();
        if sec.entries.contains_key(&key) {
            return Err(err(Some(line_no), format!("duplicate key `{key}`")));
        }
        sec.entries.insert(key, (line_no, value));
    }
    Ok(sections)
}

fn parse_usize(v: &(usize, String)) -> Result<usize, ParseError> {
    v.1.parse().map_err(|_| err(Some(v.0), format!("expected an integer, got `{}`", v.1)))
}

fn parse_f64(v: &(usize, String)) -> Result<f64, ParseError> {
    v.1.parse().map_err(|_| err(Some(v.0), format!("expected a number, got `{}`", v.1)))
}

fn parse_u64(v: &(usize, String)) -> Result<u64, ParseError> {
    v.1.parse().map_err(|_| err(Some(v.0), format!("expected an integer, got `{}`", v.1)))
}

fn parse_bool(v: &(usize, String)) -> Result<bool, ParseError> {
    match v.1.as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(err(Some(v.0), format!("expected a boolean, got `{other}`"))),
    }
}

fn parse_vector(v: &(usize, String)) -> Result<Vec<f64>, ParseError> {
    v.1.split_whitespace()
        .map(|t| t.parse().map_err(|_| err(Some(v.0), format!("bad number `{t}`"))))
        .collect()
}

fn parse_matrix(v: &(usize, String), rows: usize, cols: usize, name: &str) -> Result<Mat, ParseError> {
    let vals = parse_vector(v)?;
    if vals.len() != rows * cols {
        return Err(err(
            Some(v.0),
            format!("matrix {name} needs {rows}x{cols} = {} entries, got {}", rows * cols, vals.len()),
        ));
    }
    Ok(Mat::from_vec(rows, cols, vals))
}

pub fn parse_spec(text: &str) -> Result<SpecFile, ParseError> {
    let mut sections = split_sections(text)?;

    // [dims]
    let mut dims = sections.remove("dims").ok_or_else(|| err(None, "missing [dims] section"))?;
    let mut dim = |k: &str| -> Result<usize, ParseError> {
        dims.take(k).ok_or_else(|| err(None, format!("[dims] missing `{k}`"))).and_then(|v| parse_usize(&v))
    };
    let nx = dim("nx")?;
    let nu = dim("nu")?;
    let ny = dim("ny")?;
    let nq = dim("nq")?;
    let np = dim("np")?;
    let nw = dim("nw")?;
    dims.reject_leftovers("dims")?;

    // [matrices]
    let mut mats =
        sections.remove("matrices").ok_or_else(|| err(None, "missing [matrices] section"))?;
    let mut required = |k: &str, r: usize, c: usize| -> Result<Mat, ParseError> {
        mats.take(k)
            .ok_or_else(|| err(None, format!("[matrices] missing `{k}`")))
            .and_then(|v| parse_matrix(&v, r, c, k))
    };
    let a = required("A", nx, nx)?;
    let b = required("B", nx, nu)?;
    let c = required("C", ny, nx)?;
    let cq = required("Cq", nq, nx)?;
    let e = required("E", nx, np)?;
    let mut optional = |k: &str, r: usize, cdim: usize| -> Result<Mat, ParseError> {
        match mats.take(k) {
            Some(v) => parse_matrix(&v, r, cdim, k),
            None => Ok(Mat::zeros(r, cdim)),
        }
    };
    let d = optional("D", ny, nu)?;
    let ew = optional("Ew", nx, nw)?;
    let fw = optional("Fw", ny, nw)?;
    mats.reject_leftovers("matrices")?;
    let plant = PlantModel::new(a, b, c, d, cq, e, ew, fw)
        .map_err(|e| err(None, format!("inconsistent plant matrices: {e}")))?;

    // [nonlinearity]
    let mut nl =
        sections.remove("nonlinearity").ok_or_else(|| err(None, "missing [nonlinearity] section"))?;
    let kind = nl.take("kind").ok_or_else(|| err(None, "[nonlinearity] missing `kind`"))?;
    let ell_entry = nl.take("lipschitz_const").map(|v| parse_f64(&v)).transpose()?;
    nl.reject_leftovers("nonlinearity")?;
    if nq != np && kind.1 != "zero" {
        return Err(err(Some(kind.0), "builtin nonlinearities require nq == np"));
    }
    let mut nonlinearity = match kind.1.as_str() {
        "sin" => Nonlinearity::sine(nq),
        "saturation" => Nonlinearity::saturation(nq),
        "signed_square" => Nonlinearity::signed_square(nq),
        "zero" => Nonlinearity::zero(nq, np),
        other => return Err(err(Some(kind.0), format!("unknown nonlinearity kind `{other}`"))),
    };
    if ell_entry.is_some() {
        nonlinearity.lipschitz_const = ell_entry;
    }

    // [multiplier]
    let mut mm =
        sections.remove("multiplier").ok_or_else(|| err(None, "missing [multiplier] section"))?;
    let mkind = mm.take("kind").ok_or_else(|| err(None, "[multiplier] missing `kind`"))?;
    let multiplier = match mkind.1.as_str() {
        "lipschitz" => {
            let gamma = mm
                .take("gamma")
                .ok_or_else(|| err(Some(mkind.0), "lipschitz multiplier needs `gamma`"))
                .and_then(|v| parse_f64(&v))?;
            iqc::mm_lipschitz(gamma, nq, np)
        }
        "sector" => {
            let k1v = mm.take("k1").ok_or_else(|| err(Some(mkind.0), "sector needs `k1`"))?;
            let k2v = mm.take("k2").ok_or_else(|| err(Some(mkind.0), "sector needs `k2`"))?;
            let sv = mm.take("s").ok_or_else(|| err(Some(mkind.0), "sector needs `s`"))?;
            let k1 = parse_matrix(&k1v, np, nq, "k1")?;
            let k2 = parse_matrix(&k2v, np, nq, "k2")?;
            let s = parse_matrix(&sv, np, np, "s")?;
            iqc::mm_sector(&k1, &k2, &s)
        }
        "positive_real" => {
            let sv = mm.take("s").ok_or_else(|| err(Some(mkind.0), "positive_real needs `s`"))?;
            let s = parse_matrix(&sv, nq, nq, "s")?;
            iqc::mm_positive_real(&s)
        }
        "positive_real_anti" => {
            let sv =
                mm.take("s").ok_or_else(|| err(Some(mkind.0), "positive_real_anti needs `s`"))?;
            let s = parse_matrix(&sv, nq, nq, "s")?;
            iqc::mm_positive_real_anti_triangular(&s)
        }
        "custom" => {
            let m = parse_matrix(
                &mm.take("m").ok_or_else(|| err(Some(mkind.0), "custom needs `m`"))?,
                nq + np,
                nq + np,
                "m",
            )?;
            let t = parse_matrix(
                &mm.take("t").ok_or_else(|| err(Some(mkind.0), "custom needs `t`"))?,
                nq + np,
                nq + np,
                "t",
            )?;
            let form_entry =
                mm.take("form").ok_or_else(|| err(Some(mkind.0), "custom needs `form`"))?;
            let form = match form_entry.1.as_str() {
                "block_diagonal" => FactorForm::BlockDiagonal,
                "block_diagonal_inverse" => FactorForm::BlockDiagonalInverse,
                "anti_triangular" => FactorForm::AntiTriangular,
                other => return Err(err(Some(form_entry.0), format!("unknown form `{other}`"))),
            };
            let (x_rows, x_cols) = match form {
                FactorForm::AntiTriangular => (nq, np),
                _ => (nq, nq),
            };
            let x0 = parse_matrix(
                &mm.take("x0").ok_or_else(|| err(Some(mkind.0), "custom needs `x0`"))?,
                x_rows,
                x_cols,
                "x0",
            )?;
            let y0 = parse_matrix(
                &mm.take("y0").ok_or_else(|| err(Some(mkind.0), "custom needs `y0`"))?,
                np,
                np,
                "y0",
            )?;
            iqc::mm_custom(m, t, x0, y0, form, nq, np)
        }
        other => return Err(err(Some(mkind.0), format!("unknown multiplier kind `{other}`"))),
    }
    .map_err(|e| err(None, format!("multiplier construction failed: {e}")))?;
    mm.reject_leftovers("multiplier")?;

    // [options]
    let mut opt = sections
        .remove("options")
        .unwrap_or(Section { entries: BTreeMap::new() });
    let mode = match opt.take("mode") {
        Some(v) => match v.1.as_str() {
            "thm1" => SynthesisMode::BlockDiagonal,
            "thm2" => SynthesisMode::AntiTriangular,
            "cor2" => SynthesisMode::SimplifiedController,
            other => return Err(err(Some(v.0), format!("unknown mode `{other}` (thm1|thm2|cor2)"))),
        },
        None => SynthesisMode::BlockDiagonal,
    };
    let grid = |o: Option<(usize, String)>, default: Vec<f64>| -> Result<Vec<f64>, ParseError> {
        match o {
            Some(v) => {
                let g = parse_vector(&v)?;
                if g.is_empty() {
                    return Err(err(Some(v.0), "grid must not be empty"));
                }
                Ok(g)
            }
            None => Ok(default),
        }
    };
    let alpha1_grid = grid(opt.take("alpha1_grid"), vec![1.0])?;
    let alpha2_grid = grid(opt.take("alpha2_grid"), vec![1.0])?;
    let scalar = |o: Option<(usize, String)>, dflt: f64| -> Result<f64, ParseError> {
        o.map(|v| parse_f64(&v)).transpose().map(|v| v.unwrap_or(dflt))
    };
    let mu1 = opt.take("mu1").map(|v| parse_f64(&v)).transpose()?;
    let mu2 = opt.take("mu2").map(|v| parse_f64(&v)).transpose()?;
    let alpha0 = scalar(opt.take("alpha0"), 0.25)?;
    let minimize_condition =
        opt.take("minimize_condition").map(|v| parse_bool(&v)).transpose()?.unwrap_or(true);
    let margin = scalar(opt.take("margin"), 1e-6)?;
    let gain_cap = match opt.take("gain_cap") {
        Some(v) => {
            let g = parse_f64(&v)?;
            (g > 0.0).then_some(g)
        }
        None => Some(20.0),
    };
    let x2_fixed = opt.take("x2_fixed").map(|v| parse_matrix(&v, nq, np, "x2_fixed")).transpose()?;
    let rho = scalar(opt.take("rho"), 0.8)?;
    let a1 = scalar(opt.take("a1"), 0.5)?;
    let a2 = scalar(opt.take("a2"), 0.5)?;
    let eps = scalar(opt.take("eps"), 0.005)?;
    let eps_u = scalar(opt.take("eps_u"), eps)?;
    let eps_y = scalar(opt.take("eps_y"), eps)?;
    let omega0 = scalar(opt.take("omega0"), 0.02)?;
    let ell = opt.take("ell").map(|v| parse_f64(&v)).transpose()?;
    let horizon = scalar(opt.take("horizon"), 20.0)?;
    let step = match opt.take("step") {
        Some(v) => {
            let s = parse_f64(&v)?;
            (s > 0.0).then_some(s)
        }
        None => None,
    };
    let seed = opt.take("seed").map(|v| parse_u64(&v)).transpose()?.unwrap_or(1);
    let x0 = match opt.take("x0") {
        Some(v) => parse_vector(&v)?,
        None => vec![0.0; nx],
    };
    let xhat0 = match opt.take("xhat0") {
        Some(v) => parse_vector(&v)?,
        None => vec![0.0; nx],
    };
    if x0.len() != nx || xhat0.len() != nx {
        return Err(err(None, "x0 / xhat0 must have nx entries"));
    }
    let config = match opt.take("config") {
        Some(v) => ConfigKind::parse(&v.1).map_err(|e| err(Some(v.0), e.message))?,
        None => ConfigKind::C,
    };
    let trigger_variant = match opt.take("trigger_variant") {
        Some(v) => match v.1.as_str() {
            "standard" => TriggerVariant::Standard,
            "noise_free" => TriggerVariant::NoiseFree,
            other => return Err(err(Some(v.0), format!("unknown trigger variant `{other}`"))),
        },
        None => TriggerVariant::Standard,
    };
    let windows = match opt.take("windows") {
        Some(v) => {
            let vals = parse_vector(&v)?;
            if vals.len() % 2 != 0 || vals.is_empty() {
                return Err(err(Some(v.0), "windows must be pairs of endpoints"));
            }
            vals.chunks(2).map(|c| (c[0], c[1])).collect()
        }
        None => vec![(0.0, horizon), (3.0, horizon)],
    };
    opt.reject_leftovers("options")?;

    Ok(SpecFile {
        plant,
        nonlinearity,
        multiplier,
        options: RunOptions {
            mode,
            alpha1_grid,
            alpha2_grid,
            mu1,
            mu2,
            alpha0,
            minimize_condition,
            margin,
            gain_cap,
            x2_fixed,
            rho,
            a1,
            a2,
            eps,
            eps_u,
            eps_y,
            omega0,
            ell,
            horizon,
            step,
            seed,
            x0,
            xhat0,
            config,
            trigger_variant,
            windows,
        },
    })
}
