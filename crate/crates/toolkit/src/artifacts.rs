//! On-disk artifact formats.
//!
//! Gains, certificates and trigger designs share one line format:
//! `name,rows,cols,v1,...,vk` (row-major entries, 17-significant-digit
//! floats for lossless round-trips). Traces and event logs follow the
//! documented CSV layouts:
//!
//! * `trace.csv`: header `t,x1..xn,xh1..xhn,u1..um,w1..wk,V`, one row per
//!   grid point;
//! * `events.csv`: header `channel,k,t_k,gap` with `channel` in `{u, y}`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use etc_core::analysis::InterExecStats;
use etc_core::etm::{
    EtmConfig, TriggerChannel, TriggerConstants, TriggerDesign,
};
use etc_core::mat::Mat;
use etc_core::sim::{Configuration, SimTrace};
use etc_core::synthesis::{GainSet, StabilityCertificate};

/// 17 significant digits: exact binary64 round-trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{:.16e}", v)
}

#[derive(Debug)]
pub struct IoError(pub String);

impl std::fmt::Display for IoError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<std::io::Error> for IoError {
    fn from(e: std::io::Error) -> Self {
        IoError(e.to_string())
    }
}

/// Ordered name -> matrix table, the shared artifact container.
#[derive(Debug, Default)]
pub struct MatTable {
    entries: Vec<(String, Mat)>,
}

impl MatTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, m: Mat) {
        self.entries.push((name.to_string(), m));
    }

    pub fn push_scalar(&mut self, name: &str, v: f64) {
        self.push(name, Mat::scalar(v));
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.get(name).map(|m| m[(0, 0)])
    }

    pub fn required(&self, name: &str) -> Result<&Mat, IoError> {
        self.get(name).ok_or_else(|| IoError(format!("missing entry `{name}`")))
    }

    pub fn required_scalar(&self, name: &str) -> Result<f64, IoError> {
        Ok(self.required(name)?[(0, 0)])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (name, m) in &self.entries {
            let _ = write!(out, "{},{},{}", name, m.rows(), m.cols());
            for i in 0..m.rows() {
                for j in 0..m.cols() {
                    let _ = write!(out, ",{}", fmt_f64(m[(i, j)]));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, IoError> {
        let mut t = MatTable::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() < 3 {
                return Err(IoError(format!("line {}: expected name,rows,cols,...", idx + 1)));
            }
            let rows: usize = fields[1]
                .trim()
                .parse()
                .map_err(|_| IoError(format!("line {}: bad row count", idx + 1)))?;
            let cols: usize = fields[2]
                .trim()
                .parse()
                .map_err(|_| IoError(format!("line {}: bad column count", idx + 1)))?;
            if fields.len() != 3 + rows * cols {
                return Err(IoError(format!(
                    "line {}: expected {} entries, got {}",
                    idx + 1,
                    rows * cols,
                    fields.len() - 3
                )));
            }
            let mut vals = Vec::with_capacity(rows * cols);
            for f in &fields[3..] {
                vals.push(
                    f.trim()
                        .parse::<f64>()
                        .map_err(|_| IoError(format!("line {}: bad number `{f}`", idx + 1)))?,
                );
            }
            t.push(fields[0].trim(), Mat::from_vec(rows, cols, vals));
        }
        Ok(t)
    }

    pub fn write_file(&self, path: &Path) -> Result<(), IoError> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self, IoError> {
        let text = fs::read_to_string(path)
            .map_err(|e| IoError(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

pub fn write_gains(path: &Path, g: &GainSet) -> Result<(), IoError> {
    let mut t = MatTable::new();
    t.push("L1", g.l1.clone());
    t.push("L2", g.l2.clone());
    t.push("K1", g.k1.clone());
    t.push("K2", g.k2.clone());
    t.write_file(path)
}

pub fn read_gains(path: &Path) -> Result<GainSet, IoError> {
    let t = MatTable::read_file(path)?;
    Ok(GainSet {
        l1: t.required("L1")?.clone(),
        l2: t.required("L2")?.clone(),
        k1: t.required("K1")?.clone(),
        k2: t.required("K2")?.clone(),
    })
}

pub fn write_certificate(path: &Path, c: &StabilityCertificate) -> Result<(), IoError> {
    let mut t = MatTable::new();
    t.push("P", c.p.clone());
    t.push_scalar("alpha0", c.alpha0);
    t.push_scalar("mu", c.mu);
    t.push_scalar("theta", c.theta);
    t.push_scalar("beta0", c.beta0);
    t.push_scalar("kappa_hat", c.kappa_hat);
    t.write_file(path)
}

pub fn read_certificate(path: &Path) -> Result<StabilityCertificate, IoError> {
    let t = MatTable::read_file(path)?;
    Ok(StabilityCertificate {
        p: t.required("P")?.clone(),
        alpha0: t.required_scalar("alpha0")?,
        mu: t.required_scalar("mu")?,
        theta: t.required_scalar("theta")?,
        beta0: t.required_scalar("beta0")?,
        kappa_hat: t.required_scalar("kappa_hat")?,
    })
}

pub fn write_trigger(path: &Path, d: &TriggerDesign) -> Result<(), IoError> {
    let mut t = MatTable::new();
    t.push_scalar("config", if d.config == EtmConfig::ControllerOnly { 1.0 } else { 2.0 });
    t.push_scalar("noise_free", if d.noise_free { 1.0 } else { 0.0 });
    t.push_scalar("sigma_u", d.controller.sigma);
    t.push_scalar("eps_u", d.controller.eps);
    t.push_scalar("tau_u", d.controller.tau);
    if let Some(out) = &d.output {
        t.push_scalar("sigma_y", out.sigma);
        t.push_scalar("eps_y", out.eps);
        t.push_scalar("tau_y", out.tau);
    }
    let k = &d.constants;
    t.push_scalar("s1", k.s1);
    if let Some(s2) = k.s2 {
        t.push_scalar("s2", s2);
    }
    t.push_scalar("eta1", k.eta1);
    t.push_scalar("eta2", k.eta2);
    t.push_scalar("eta3", k.eta3);
    t.push_scalar("eta4", k.eta4);
    if let Some(v) = k.eta5 {
        t.push_scalar("eta5", v);
    }
    if let Some(v) = k.eta6 {
        t.push_scalar("eta6", v);
    }
    if let Some(v) = k.d1 {
        t.push_scalar("d1", v);
    }
    if let Some(v) = k.d2 {
        t.push_scalar("d2", v);
    }
    t.push_scalar("rho", k.rho);
    t.push_scalar("c", k.c);
    if let Some(v) = k.a1 {
        t.push_scalar("a1", v);
    }
    if let Some(v) = k.a2 {
        t.push_scalar("a2", v);
    }
    t.push_scalar("omega0", k.omega0);
    t.push_scalar("ell", k.ell);
    t.write_file(path)
}

pub fn read_trigger(path: &Path) -> Result<TriggerDesign, IoError> {
    let t = MatTable::read_file(path)?;
    let config = if t.required_scalar("config")? == 1.0 {
        EtmConfig::ControllerOnly
    } else {
        EtmConfig::Dual
    };
    let controller = TriggerChannel {
        sigma: t.required_scalar("sigma_u")?,
        eps: t.required_scalar("eps_u")?,
        tau: t.required_scalar("tau_u")?,
    };
    let output = match (t.scalar("sigma_y"), t.scalar("eps_y"), t.scalar("tau_y")) {
        (Some(sigma), Some(eps), Some(tau)) => Some(TriggerChannel { sigma, eps, tau }),
        _ => None,
    };
    if config == EtmConfig::Dual && output.is_none() {
        return Err(IoError("dual trigger file lacks the output channel".into()));
    }
    Ok(TriggerDesign {
        controller,
        output,
        constants: TriggerConstants {
            s1: t.required_scalar("s1")?,
            s2: t.scalar("s2"),
            eta1: t.required_scalar("eta1")?,
            eta2: t.required_scalar("eta2")?,
            eta3: t.required_scalar("eta3")?,
            eta4: t.required_scalar("eta4")?,
            eta5: t.scalar("eta5"),
            eta6: t.scalar("eta6"),
            d1: t.scalar("d1"),
            d2: t.scalar("d2"),
            rho: t.required_scalar("rho")?,
            c: t.required_scalar("c")?,
            a1: t.scalar("a1"),
            a2: t.scalar("a2"),
            omega0: t.required_scalar("omega0")?,
            ell: t.required_scalar("ell")?,
        },
        config,
        noise_free: t.required_scalar("noise_free")? != 0.0,
    })
}

/// Writes every `stride`-th grid point (always including the first);
/// `stride = 1` is the full, audit-grade trace.
pub fn write_trace_decimated(path: &Path, trace: &SimTrace, stride: usize) -> Result<(), IoError> {
    let stride = stride.max(1);
    let nx = trace.x.first().map(|r| r.len()).unwrap_or(0);
    let nu = trace.u.first().map(|r| r.len()).unwrap_or(0);
    let nw = trace.w.first().map(|r| r.len()).unwrap_or(0);
    let mut out = String::new();
    out.push('t');
    for i in 1..=nx {
        let _ = write!(out, ",x{i}");
    }
    for i in 1..=nx {
        let _ = write!(out, ",xh{i}");
    }
    for i in 1..=nu {
        let _ = write!(out, ",u{i}");
    }
    for i in 1..=nw {
        let _ = write!(out, ",w{i}");
    }
    out.push_str(",V\n");
    for i in (0..trace.len()).step_by(stride) {
        let _ = write!(out, "{}", fmt_f64(trace.times[i]));
        for v in &trace.x[i] {
            let _ = write!(out, ",{}", fmt_f64(*v));
        }
        for v in &trace.xhat[i] {
            let _ = write!(out, ",{}", fmt_f64(*v));
        }
        for v in &trace.u[i] {
            let _ = write!(out, ",{}", fmt_f64(*v));
        }
        for v in &trace.w[i] {
            let _ = write!(out, ",{}", fmt_f64(*v));
        }
        let v = trace.v.as_ref().map(|v| v[i]).unwrap_or(0.0);
        let _ = write!(out, ",{}", fmt_f64(v));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a trace written by [`write_trace`], reconstructing the derived
/// series (`err`). Held-value series are not stored in the CSV;
/// [`crate::commands`] rebuilds them from the event log when auditing.
pub fn read_trace(path: &Path, nx: usize, nu: usize, nw: usize) -> Result<SimTrace, IoError> {
    let text =
        fs::read_to_string(path).map_err(|e| IoError(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| IoError("empty trace file".into()))?;
    let expected_cols = 1 + 2 * nx + nu + nw + 1;
    if header.split(',').count() != expected_cols {
        return Err(IoError(format!(
            "trace header has {} columns, expected {expected_cols}",
            header.split(',').count()
        )));
    }
    let mut times = Vec::new();
    let mut x = Vec::new();
    let mut xhat = Vec::new();
    let mut u = Vec::new();
    let mut w = Vec::new();
    let mut v = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|_| IoError(format!("trace line {}: bad number", idx + 2)))?;
        if vals.len() != expected_cols {
            return Err(IoError(format!("trace line {}: wrong column count", idx + 2)));
        }
        let mut k = 0;
        times.push(vals[k]);
        k += 1;
        x.push(vals[k..k + nx].to_vec());
        k += nx;
        xhat.push(vals[k..k + nx].to_vec());
        k += nx;
        u.push(vals[k..k + nu].to_vec());
        k += nu;
        w.push(vals[k..k + nw].to_vec());
        k += nw;
        v.push(vals[k]);
    }
    let err = x
        .iter()
        .zip(&xhat)
        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p - q).collect())
        .collect();
    let step = if times.len() >= 2 { times[1] - times[0] } else { 0.0 };
    Ok(SimTrace {
        times,
        x,
        xhat,
        err,
        u,
        w,
        xhat_held: Vec::new(),
        y_held: Vec::new(),
        events_u: Vec::new(),
        events_y: Vec::new(),
        v: Some(v),
        step,
        configuration: Configuration::Continuous,
    })
}

pub fn write_events(path: &Path, trace: &SimTrace) -> Result<(), IoError> {
    let mut out = String::from("channel,k,t_k,gap\n");
    for (channel, events) in [("u", &trace.events_u), ("y", &trace.events_y)] {
        for (k, t) in events.iter().enumerate() {
            let gap = if k == 0 { 0.0 } else { t - events[k - 1] };
            let _ = write!(out, "{channel},{k},{},{}\n", fmt_f64(*t), fmt_f64(gap));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads an event log into `(events_u, events_y)`.
pub fn read_events(path: &Path) -> Result<(Vec<f64>, Vec<f64>), IoError> {
    let text =
        fs::read_to_string(path).map_err(|e| IoError(format!("{}: {e}", path.display())))?;
    let mut u = Vec::new();
    let mut y = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(IoError(format!("events line {}: expected 4 fields", idx + 1)));
        }
        let t: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| IoError(format!("events line {}: bad time", idx + 1)))?;
        match fields[0].trim() {
            "u" => u.push(t),
            "y" => y.push(t),
            other => return Err(IoError(format!("events line {}: unknown channel `{other}`", idx + 1))),
        }
    }
    Ok((u, y))
}

/// Four-column inter-execution report: a text table plus a CSV twin.
pub fn render_report(stats: &[InterExecStats]) -> (String, String) {
    let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    let mut txt = String::from("inter-execution times (seconds)\n\n");
    let mut windows: Vec<(f64, f64)> = Vec::new();
    for s in stats {
        if !windows.contains(&s.window) {
            windows.push(s.window);
        }
    }
    let _ = write!(txt, "{:<16}", "");
    for w in &windows {
        let _ = write!(txt, "min[{},{}]  avg[{},{}]  ", w.0, w.1, w.0, w.1);
    }
    txt.push('\n');
    for channel in ["output ETM", "controller ETM"] {
        let want = if channel == "output ETM" {
            etc_core::analysis::Channel::Output
        } else {
            etc_core::analysis::Channel::Controller
        };
        let rows: Vec<&InterExecStats> = stats.iter().filter(|s| s.channel == want).collect();
        if rows.is_empty() {
            continue;
        }
        let _ = write!(txt, "{channel:<16}");
        for w in &windows {
            if let Some(s) = rows.iter().find(|s| s.window == *w) {
                let _ = write!(txt, "{:>10}  {:>10}  ", fmt_opt(s.tau_min), fmt_opt(s.tau_avg));
            }
        }
        txt.push('\n');
    }

    let mut csv = String::from("channel,window_start,window_end,tau_min,tau_avg,count\n");
    for s in stats {
        let name = match s.channel {
            etc_core::analysis::Channel::Controller => "u",
            etc_core::analysis::Channel::Output => "y",
        };
        let _ = write!(
            csv,
            "{name},{},{},{},{},{}\n",
            fmt_f64(s.window.0),
            fmt_f64(s.window.1),
            s.tau_min.map(fmt_f64).unwrap_or_else(|| "-".into()),
            s.tau_avg.map(fmt_f64).unwrap_or_else(|| "-".into()),
            s.count
        );
    }
    (txt, csv)
}
