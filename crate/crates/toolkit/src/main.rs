//! Command-line front end: parse a system description, then synthesize
//! gains, design triggers, simulate the closed loop, audit traces, and
//! export feasibility problems for external solvers.
//!
//! Exit codes are a stable scripting contract: `0` success, `1` input
//! error, `2` synthesis infeasible, `3` numerical abort.

mod artifacts;
mod specfile;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use etc_core::analysis::{
    audit_trigger_invariants, interexec_stats, ultimate_bound, verify_decrease, Channel,
};
use etc_core::etm::{trigger_config_b, trigger_config_c, EtmConfig, TriggerDesign};
use etc_core::lmi::build::{
    build_anti_triangular, build_controller_block_diagonal, build_observer_block_diagonal,
    build_recertification,
};
use etc_core::lmi::sdpa::export_sdpa;
use etc_core::lmi::solve::SolveOptions;
use etc_core::iqc::factor_blocks;
use etc_core::sim::{lyapunov_trace, simulate, Configuration, Disturbance, SimConfig, SimError, SimTrace};
use etc_core::synthesis::{
    recompute_certificate, synthesize_anti_triangular, synthesize_block_diagonal, GainSet,
    StabilityCertificate, SynthesisError, SynthesisMode, SynthesisOptions,
};

use artifacts::fmt_f64;
use specfile::{ConfigKind, RunOptions, SpecFile};

#[derive(Parser)]
#[command(
    name = "etc-toolkit",
    version,
    about = "Observer-based event-triggered controller synthesis, simulation and certification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize gains and a stability certificate from a system description
    Synth {
        spec: PathBuf,
        /// Synthesis mode: thm1 (block-diagonal), thm2 (anti-triangular),
        /// cor2 (simplified controller); overrides the spec file
        #[arg(long)]
        mode: Option<String>,
        /// Recertification rate; overrides the spec file
        #[arg(long)]
        alpha0: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        margin: Option<f64>,
        /// Replace the composite certificate by a recomputed closed-loop
        /// certificate at `alpha0`
        #[arg(long)]
        recertify: bool,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Design event-trigger parameters from gains and a certificate
    Trigger {
        spec: PathBuf,
        #[arg(long)]
        gains: PathBuf,
        /// Certificate file; optional with --recompute
        #[arg(long)]
        cert: Option<PathBuf>,
        /// Trigger configuration: b (controller channel) or c (dual)
        #[arg(long)]
        config: Option<String>,
        /// Recompute the certificate at the spec's alpha0 before designing
        #[arg(long)]
        recompute: bool,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Simulate the closed loop and write trace, events and report
    Simulate {
        spec: PathBuf,
        #[arg(long)]
        gains: PathBuf,
        #[arg(long)]
        cert: PathBuf,
        #[arg(long)]
        trigger: Option<PathBuf>,
        /// Configuration: a (continuous), b, or c; overrides the spec file
        #[arg(long)]
        config: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        /// Run this many seeds (seed, seed+1, ...) concurrently; the
        /// ETC_TOOLKIT_THREADS environment variable caps the parallelism
        #[arg(long)]
        batch: Option<usize>,
        /// Write every Nth trace row (plotting convenience). Event logs
        /// and reports keep full resolution; audits need an undecimated
        /// trace
        #[arg(long, default_value_t = 1)]
        decimate: usize,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Audit an existing trace: Lyapunov decrease, trigger invariants,
    /// ultimate bounds
    Verify {
        spec: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long)]
        gains: PathBuf,
        #[arg(long)]
        cert: PathBuf,
        #[arg(long)]
        trigger: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Export a feasibility problem in SDPA sparse format (.dat-s)
    ExportSdpa {
        spec: PathBuf,
        /// One of: prop1, thm1-obs, thm1-ctrl, thm2
        #[arg(long)]
        which: String,
        /// Gains file (required for prop1)
        #[arg(long)]
        gains: Option<PathBuf>,
        #[arg(long)]
        alpha0: Option<f64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Inter-execution-time report from an event log
    Report {
        #[arg(long)]
        events: PathBuf,
        /// Flat list of window endpoints, e.g. "0 20 3 20"
        #[arg(long)]
        windows: Option<String>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

struct CliError {
    code: u8,
    message: String,
}

fn input_err(message: impl Into<String>) -> CliError {
    CliError { code: 1, message: message.into() }
}

fn numerical_err(message: impl Into<String>) -> CliError {
    CliError { code: 3, message: message.into() }
}

impl From<artifacts::IoError> for CliError {
    fn from(e: artifacts::IoError) -> Self {
        input_err(e.0)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn load_spec(path: &Path) -> Result<(SpecFile, String), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    let spec = specfile::parse_spec(&text).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    let digest = {
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        let bytes = h.finalize();
        let mut hex = String::with_capacity(bytes.len() * 2);
        for b in bytes {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    };
    Ok((spec, digest))
}

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| input_err(format!("{}: {e}", dir.display())))
}

struct Manifest {
    lines: Vec<String>,
    t0: Instant,
    last: Instant,
}

impl Manifest {
    fn new(command: &str, digest: &str) -> Self {
        let now = Instant::now();
        Manifest {
            lines: vec![
                format!("toolkit_version = {}", env!("CARGO_PKG_VERSION")),
                format!("command = {command}"),
                format!("spec_sha256 = {digest}"),
            ],
            t0: now,
            last: now,
        }
    }

    fn record(&mut self, key: &str, value: impl std::fmt::Display) {
        self.lines.push(format!("{key} = {value}"));
    }

    fn stage(&mut self, name: &str) {
        let now = Instant::now();
        self.lines.push(format!(
            "stage_{name}_ms = {:.3}",
            now.duration_since(self.last).as_secs_f64() * 1e3
        ));
        self.last = now;
    }

    fn write(mut self, dir: &Path) -> Result<(), CliError> {
        self.lines
            .push(format!("total_ms = {:.3}", self.t0.elapsed().as_secs_f64() * 1e3));
        std::fs::write(dir.join("run_manifest.txt"), self.lines.join("\n") + "\n")
            .map_err(|e| input_err(e.to_string()))?;
        Ok(())
    }
}

fn synthesis_options(opts: &RunOptions, seed: Option<u64>, margin: Option<f64>, recertify: bool) -> SynthesisOptions {
    let mut solver = SolveOptions::default();
    if let Some(s) = seed {
        solver.seed = s;
    }
    SynthesisOptions {
        alpha1_grid: opts.alpha1_grid.clone(),
        alpha2_grid: opts.alpha2_grid.clone(),
        mode: opts.mode,
        margin: margin.unwrap_or(opts.margin),
        mu1: opts.mu1,
        mu2: opts.mu2,
        x2_fixed: opts.x2_fixed.clone(),
        recertify,
        condition_number_objective: opts.minimize_condition,
        gain_cap: opts.gain_cap,
        solver,
    }
}

fn map_synth_err(e: SynthesisError) -> CliError {
    match e {
        SynthesisError::LmiInfeasible { .. } => CliError { code: 2, message: e.to_string() },
        SynthesisError::M24NotNegative { .. } | SynthesisError::Shape(_) => input_err(e.to_string()),
        other => numerical_err(other.to_string()),
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth { spec, mode, alpha0, seed, margin, recertify, out_dir } => {
            cmd_synth(&spec, mode, alpha0, seed, margin, recertify, &out_dir)
        }
        Command::Trigger { spec, gains, cert, config, recompute, out_dir } => {
            cmd_trigger(&spec, &gains, cert.as_deref(), config, recompute, &out_dir)
        }
        Command::Simulate {
            spec,
            gains,
            cert,
            trigger,
            config,
            seed,
            step,
            horizon,
            batch,
            decimate,
            out_dir,
        } => cmd_simulate(
            &spec,
            &gains,
            &cert,
            trigger.as_deref(),
            config,
            seed,
            step,
            horizon,
            batch,
            decimate.max(1),
            &out_dir,
        ),
        Command::Verify { spec, trace, events, gains, cert, trigger, out_dir } => cmd_verify(
            &spec,
            &trace,
            events.as_deref(),
            &gains,
            &cert,
            trigger.as_deref(),
            &out_dir,
        ),
        Command::ExportSdpa { spec, which, gains, alpha0, out_dir } => {
            cmd_export_sdpa(&spec, &which, gains.as_deref(), alpha0, &out_dir)
        }
        Command::Report { events, windows, out_dir } => cmd_report(&events, windows, &out_dir),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    spec_path: &Path,
    mode: Option<String>,
    alpha0: Option<f64>,
    seed: Option<u64>,
    margin: Option<f64>,
    recertify: bool,
    out_dir: &Path,
) -> Result<(), CliError> {
    let (mut spec, digest) = load_spec(spec_path)?;
    if let Some(m) = mode {
        spec.options.mode = match m.as_str() {
            "thm1" => SynthesisMode::BlockDiagonal,
            "thm2" => SynthesisMode::AntiTriangular,
            "cor2" => SynthesisMode::SimplifiedController,
            other => return Err(input_err(format!("unknown mode `{other}`"))),
        };
    }
    if let Some(a) = alpha0 {
        spec.options.alpha0 = a;
    }
    ensure_out_dir(out_dir)?;
    let mut manifest = Manifest::new("synth", &digest);
    manifest.record("mode", format!("{:?}", spec.options.mode));
    manifest.record("alpha0", spec.options.alpha0);

    let mut opts = synthesis_options(&spec.options, seed, margin, recertify);
    let ell = spec.options.ell.or(spec.nonlinearity.lipschitz_const);
    let result = match spec.options.mode {
        SynthesisMode::AntiTriangular => {
            // recertification inside the pipeline uses the spec's rate
            let r = synthesize_anti_triangular(
                &spec.plant,
                &spec.multiplier,
                &spec.multiplier,
                ell,
                &SynthesisOptions { recertify: false, ..opts.clone() },
            )
            .map_err(map_synth_err)?;
            r
        }
        _ => {
            opts.recertify = false;
            synthesize_block_diagonal(&spec.plant, &spec.multiplier, &spec.multiplier, ell, &opts)
                .map_err(map_synth_err)?
        }
    };
    manifest.stage("synthesis");

    let certificate = if recertify {
        let (cert, _) = recompute_certificate(
            &spec.plant,
            &result.gains,
            &spec.multiplier.m,
            spec.options.alpha0,
            spec.options.minimize_condition,
            &opts.solver,
        )
        .map_err(map_synth_err)?;
        manifest.stage("recertification");
        StabilityCertificate { kappa_hat: result.certificate.kappa_hat, ..cert }
    } else {
        result.certificate.clone()
    };

    artifacts::write_gains(&out_dir.join("gains.csv"), &result.gains)?;
    artifacts::write_certificate(&out_dir.join("certificate.csv"), &certificate)?;
    manifest.record("alpha1", result.alpha1);
    manifest.record("alpha2", result.alpha2);
    manifest.record("mu1", result.mu1);
    manifest.record("mu2", result.mu2);
    manifest.record("certificate", if recertify { "recomputed" } else { "composite" });
    manifest.stage("artifacts");
    manifest.write(out_dir)?;
    println!(
        "synthesized gains (alpha1 = {}, alpha2 = {}); certificate alpha0 = {}, mu = {}",
        result.alpha1,
        result.alpha2,
        certificate.alpha0,
        certificate.mu
    );
    Ok(())
}

fn resolve_ell(spec: &SpecFile) -> Result<f64, CliError> {
    spec.options
        .ell
        .or(spec.nonlinearity.lipschitz_const)
        .ok_or_else(|| input_err("trigger design needs a global Lipschitz constant (set `ell` or `lipschitz_const`)"))
}

fn cmd_trigger(
    spec_path: &Path,
    gains_path: &Path,
    cert_path: Option<&Path>,
    config: Option<String>,
    recompute: bool,
    out_dir: &Path,
) -> Result<(), CliError> {
    let (spec, digest) = load_spec(spec_path)?;
    let gains = artifacts::read_gains(gains_path)?;
    gains.check_shapes(&spec.plant).map_err(|e| input_err(e.to_string()))?;
    ensure_out_dir(out_dir)?;
    let mut manifest = Manifest::new("trigger", &digest);

    let cert = if recompute {
        let (cert, _) = recompute_certificate(
            &spec.plant,
            &gains,
            &spec.multiplier.m,
            spec.options.alpha0,
            spec.options.minimize_condition,
            &SolveOptions::default(),
        )
        .map_err(map_synth_err)?;
        manifest.stage("recertification");
        artifacts::write_certificate(&out_dir.join("certificate.csv"), &cert)?;
        cert
    } else {
        let path = cert_path
            .ok_or_else(|| input_err("either --cert or --recompute is required"))?;
        artifacts::read_certificate(path)?
    };

    let config = match config {
        Some(c) => ConfigKind::parse(&c).map_err(|e| input_err(e.message))?,
        None => spec.options.config,
    };
    let ell = resolve_ell(&spec)?;
    let o = &spec.options;
    let design = match config {
        ConfigKind::A => {
            return Err(input_err("the continuous configuration has no trigger to design"))
        }
        ConfigKind::B => trigger_config_b(
            &spec.plant,
            &gains,
            &cert,
            ell,
            o.omega0,
            o.rho,
            o.eps,
            o.trigger_variant,
        ),
        ConfigKind::C => trigger_config_c(
            &spec.plant,
            &gains,
            &cert,
            ell,
            o.omega0,
            o.rho,
            o.a1,
            o.a2,
            o.eps_u,
            o.eps_y,
            o.trigger_variant,
        ),
    }
    .map_err(|e| match e {
        etc_core::etm::EtmError::DNotZero => {
            input_err("dual-channel trigger design requires D = 0")
        }
        other => input_err(other.to_string()),
    })?;
    manifest.stage("design");

    artifacts::write_trigger(&out_dir.join("trigger.csv"), &design)?;
    manifest.record("config", match config { ConfigKind::B => "b", _ => "c" });
    manifest.record("tau_u", fmt_f64(design.controller.tau));
    if let Some(out) = &design.output {
        manifest.record("tau_y", fmt_f64(out.tau));
    }
    manifest.write(out_dir)?;
    print!(
        "trigger design: sigma_u = {:.6e}, eps_u = {}, tau_u = {:.6e} s",
        design.controller.sigma, design.controller.eps, design.controller.tau
    );
    if let Some(out) = &design.output {
        print!(
            "; sigma_y = {:.6e}, eps_y = {}, tau_y = {:.6e} s",
            out.sigma, out.eps, out.tau
        );
    }
    println!();
    Ok(())
}

fn run_one_simulation(
    spec: &SpecFile,
    gains: &GainSet,
    cert: &StabilityCertificate,
    trigger: Option<&TriggerDesign>,
    config: ConfigKind,
    seed: u64,
    step: Option<f64>,
    horizon: Option<f64>,
) -> Result<SimTrace, CliError> {
    let configuration = match config {
        ConfigKind::A => Configuration::Continuous,
        ConfigKind::B => Configuration::EtmController,
        ConfigKind::C => Configuration::EtmDual,
    };
    let trigger = match configuration {
        Configuration::Continuous => None,
        _ => Some(
            trigger
                .ok_or_else(|| input_err("this configuration requires --trigger"))?
                .clone(),
        ),
    };
    // default step: min(1e-3, tau_min / 10)
    let default_step = trigger
        .as_ref()
        .map(|t| {
            let mut tau = t.controller.tau;
            if let Some(out) = &t.output {
                tau = tau.min(out.tau);
            }
            (tau / 10.0).min(1e-3)
        })
        .unwrap_or(1e-3);
    let cfg = SimConfig {
        configuration,
        horizon: horizon.unwrap_or(spec.options.horizon),
        step: step.or(spec.options.step).unwrap_or(default_step),
        x0: spec.options.x0.clone(),
        xhat0: spec.options.xhat0.clone(),
        disturbance: if spec.options.omega0 > 0.0 {
            Disturbance::UniformBox { omega0: spec.options.omega0, seed }
        } else {
            Disturbance::Zero
        },
        trigger,
    };
    let mut trace = simulate(&spec.plant, gains, &spec.nonlinearity, &cfg).map_err(|e| match e {
        SimError::NonFiniteState { t, .. } => {
            numerical_err(format!("state blew up at t = {t}; aborting"))
        }
        SimError::StepTooLarge { step, tau } => {
            input_err(format!("step {step} exceeds tau/4 for dwell time {tau}"))
        }
        other => input_err(other.to_string()),
    })?;
    lyapunov_trace(&mut trace, &cert.p).map_err(|e| input_err(e.to_string()))?;
    Ok(trace)
}

fn trace_report(trace: &SimTrace, windows: &[(f64, f64)]) -> Vec<etc_core::analysis::InterExecStats> {
    let mut stats = Vec::new();
    for (channel, events) in
        [(Channel::Output, &trace.events_y), (Channel::Controller, &trace.events_u)]
    {
        if events.is_empty() {
            continue;
        }
        for w in windows {
            if let Ok(s) = interexec_stats(channel, events, *w) {
                stats.push(s);
            }
        }
    }
    stats
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    spec_path: &Path,
    gains_path: &Path,
    cert_path: &Path,
    trigger_path: Option<&Path>,
    config: Option<String>,
    seed: Option<u64>,
    step: Option<f64>,
    horizon: Option<f64>,
    batch: Option<usize>,
    decimate: usize,
    out_dir: &Path,
) -> Result<(), CliError> {
    let (spec, digest) = load_spec(spec_path)?;
    let gains = artifacts::read_gains(gains_path)?;
    gains.check_shapes(&spec.plant).map_err(|e| input_err(e.to_string()))?;
    let cert = artifacts::read_certificate(cert_path)?;
    let config = match config {
        Some(c) => ConfigKind::parse(&c).map_err(|e| input_err(e.message))?,
        None => spec.options.config,
    };
    let trigger = match trigger_path {
        Some(p) => Some(artifacts::read_trigger(p)?),
        None => None,
    };
    if config == ConfigKind::A && trigger.is_some() {
        eprintln!("warning: continuous configuration ignores the trigger file");
    }
    ensure_out_dir(out_dir)?;
    let mut manifest = Manifest::new("simulate", &digest);
    let base_seed = seed.unwrap_or(spec.options.seed);
    manifest.record("config", format!("{config:?}"));
    manifest.record("seed", base_seed);

    let n_runs = batch.unwrap_or(1).max(1);
    if n_runs == 1 {
        let trace =
            run_one_simulation(&spec, &gains, &cert, trigger.as_ref(), config, base_seed, step, horizon)?;
        manifest.stage("simulation");
        artifacts::write_trace_decimated(&out_dir.join("trace.csv"), &trace, decimate)?;
        manifest.record("decimate", decimate);
        artifacts::write_events(&out_dir.join("events.csv"), &trace)?;
        let stats = trace_report(&trace, &spec.options.windows);
        let (txt, csv) = artifacts::render_report(&stats);
        std::fs::write(out_dir.join("report.txt"), &txt).map_err(|e| input_err(e.to_string()))?;
        std::fs::write(out_dir.join("report.csv"), &csv).map_err(|e| input_err(e.to_string()))?;
        manifest.record("samples", trace.len());
        manifest.record("events_u", trace.events_u.len());
        manifest.record("events_y", trace.events_y.len());
        manifest.stage("artifacts");
        manifest.write(out_dir)?;
        print!("{txt}");
        return Ok(());
    }

    // batch mode: seeds base..base+n, parallel up to ETC_TOOLKIT_THREADS
    let cap = std::env::var("ETC_TOOLKIT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|v| *v >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let seeds: Vec<u64> = (0..n_runs as u64).map(|k| base_seed + k).collect();
    let mut results: Vec<Option<Result<SimTrace, CliError>>> = seeds.iter().map(|_| None).collect();
    for chunk_start in (0..seeds.len()).step_by(cap) {
        let chunk_end = (chunk_start + cap).min(seeds.len());
        let chunk_results: Vec<Result<SimTrace, CliError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = seeds[chunk_start..chunk_end]
                .iter()
                .map(|s| {
                    let spec = &spec;
                    let gains = &gains;
                    let cert = &cert;
                    let trigger = trigger.as_ref();
                    scope.spawn(move || {
                        run_one_simulation(spec, gains, cert, trigger, config, *s, step, horizon)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
        });
        for (offset, r) in chunk_results.into_iter().enumerate() {
            results[chunk_start + offset] = Some(r);
        }
    }
    manifest.stage("simulation");
    for (s, r) in seeds.iter().zip(results.into_iter()) {
        let trace = r.expect("all runs recorded")?;
        artifacts::write_trace_decimated(
            &out_dir.join(format!("trace_s{s}.csv")),
            &trace,
            decimate,
        )?;
        artifacts::write_events(&out_dir.join(format!("events_s{s}.csv")), &trace)?;
        let stats = trace_report(&trace, &spec.options.windows);
        let (txt, _) = artifacts::render_report(&stats);
        std::fs::write(out_dir.join(format!("report_s{s}.txt")), txt)
            .map_err(|e| input_err(e.to_string()))?;
    }
    manifest.record("batch", n_runs);
    manifest.record("threads", cap);
    manifest.stage("artifacts");
    manifest.write(out_dir)?;
    println!("batch of {n_runs} runs written to {}", out_dir.display());
    Ok(())
}

/// Rebuilds the held-value series of an ETM trace from its event log.
fn reconstruct_held(trace: &mut SimTrace, plant: &etc_core::iqc::PlantModel, dual: bool) {
    let mut held = Vec::with_capacity(trace.len());
    let mut ev = trace.events_u.iter().peekable();
    let mut current = trace.xhat.first().cloned().unwrap_or_default();
    for i in 0..trace.len() {
        while let Some(&&te) = ev.peek() {
            if te <= trace.times[i] + 1e-12 {
                let idx = ((te / trace.step).round() as usize).min(trace.len() - 1);
                current = trace.xhat[idx].clone();
                ev.next();
            } else {
                break;
            }
        }
        held.push(current.clone());
    }
    trace.xhat_held = held;
    if dual {
        let y_at = |i: usize| -> Vec<f64> {
            let mut y = plant.c.mul_vec(&trace.x[i]);
            let fww = plant.fw.mul_vec(&trace.w[i]);
            for (yi, fi) in y.iter_mut().zip(&fww) {
                *yi += fi;
            }
            y
        };
        let mut held = Vec::with_capacity(trace.len());
        let mut ev = trace.events_y.iter().peekable();
        let mut current = y_at(0);
        for i in 0..trace.len() {
            while let Some(&&te) = ev.peek() {
                if te <= trace.times[i] + 1e-12 {
                    let idx = ((te / trace.step).round() as usize).min(trace.len() - 1);
                    current = y_at(idx);
                    ev.next();
                } else {
                    break;
                }
            }
            held.push(current.clone());
        }
        trace.y_held = held;
    }
}

fn cmd_verify(
    spec_path: &Path,
    trace_path: &Path,
    events_path: Option<&Path>,
    gains_path: &Path,
    cert_path: &Path,
    trigger_path: Option<&Path>,
    out_dir: &Path,
) -> Result<(), CliError> {
    let (spec, digest) = load_spec(spec_path)?;
    let gains = artifacts::read_gains(gains_path)?;
    gains.check_shapes(&spec.plant).map_err(|e| input_err(e.to_string()))?;
    let cert = artifacts::read_certificate(cert_path)?;
    let mut trace =
        artifacts::read_trace(trace_path, spec.plant.nx(), spec.plant.nu(), spec.plant.nw())?;
    ensure_out_dir(out_dir)?;
    let mut manifest = Manifest::new("verify", &digest);

    // recompute the Lyapunov series from the certificate (authoritative)
    lyapunov_trace(&mut trace, &cert.p).map_err(|e| input_err(e.to_string()))?;
    let design = trigger_path.map(|tp| artifacts::read_trigger(tp)).transpose()?;

    // Event-triggered traces satisfy the practical decrease inequality
    // with the design's decay split and absolute-threshold offset, not the
    // continuous-time one; pick the inequality that matches the inputs.
    let (label, decrease) = match &design {
        Some(d) => {
            let eig = etc_core::mat::sym_eig(&cert.p).map_err(|e| input_err(e.to_string()))?;
            let k = &d.constants;
            let decay_z = (1.0 - k.rho) * cert.alpha0 * eig.lambda_min() - k.c;
            let alpha_eff = decay_z.max(0.0) / eig.lambda_max();
            let offset = match (&d.output, k.s2) {
                (Some(out), Some(s2)) => {
                    let e0 = k.s1 * d.controller.eps + s2 * out.eps;
                    e0 * e0 / k.c
                }
                _ => {
                    let se = k.s1 * d.controller.eps;
                    se * se / k.c
                }
            };
            let base = etc_core::analysis::decrease_slack_bound(&trace, alpha_eff, cert.mu)
                .map_err(|e| input_err(e.to_string()))?;
            let rep = verify_decrease(&trace, alpha_eff, cert.mu, Some(offset + base))
                .map_err(|e| input_err(e.to_string()))?;
            ("practical lyapunov decrease (event-triggered)", rep)
        }
        None => {
            let rep = verify_decrease(&trace, cert.alpha0, cert.mu, None)
                .map_err(|e| input_err(e.to_string()))?;
            ("lyapunov decrease", rep)
        }
    };
    manifest.stage("decrease_check");

    let mut report = String::new();
    report.push_str(&format!(
        "{label}: {} violations over {} samples (worst margin {:.3e}, slack {:.3e}) -> {}\n",
        decrease.violations,
        decrease.samples_checked,
        decrease.worst_margin,
        decrease.slack_used,
        if decrease.violations == 0 { "PASS" } else { "FAIL" }
    ));

    if let (Some(design), Some(ep)) = (design, events_path) {
        let (ev_u, ev_y) = artifacts::read_events(ep)?;
        trace.events_u = ev_u;
        trace.events_y = ev_y;
        trace.configuration = match design.config {
            EtmConfig::ControllerOnly => Configuration::EtmController,
            EtmConfig::Dual => Configuration::EtmDual,
        };
        reconstruct_held(&mut trace, &spec.plant, design.config == EtmConfig::Dual);
        let audit = audit_trigger_invariants(&trace, &design, &spec.plant)
            .map_err(|e| input_err(e.to_string()))?;
        report.push_str(&format!(
            "trigger invariants: worst controller ratio {:.4}{} (slack {:.3e}) -> {}\n",
            audit.worst_ratio_u,
            audit
                .worst_ratio_y
                .map(|r| format!(", worst output ratio {r:.4}"))
                .unwrap_or_default(),
            audit.slack,
            if audit.holds { "PASS" } else { "FAIL" }
        ));
        // dwell respected in the log
        for (name, events, tau) in [
            ("controller", &trace.events_u, design.controller.tau),
            ("output", &trace.events_y, design.output.as_ref().map(|o| o.tau).unwrap_or(0.0)),
        ] {
            if events.len() >= 2 && tau > 0.0 {
                let min_gap = events
                    .windows(2)
                    .map(|w| w[1] - w[0])
                    .fold(f64::INFINITY, f64::min);
                report.push_str(&format!(
                    "{name} channel: min inter-event gap {:.6e} vs dwell {:.6e} -> {}\n",
                    min_gap,
                    tau,
                    if min_gap >= tau - trace.step { "PASS" } else { "FAIL" }
                ));
            }
        }
        manifest.stage("trigger_audit");
    }

    let (bx, be) = ultimate_bound(&trace, 0.25).map_err(|e| input_err(e.to_string()))?;
    report.push_str(&format!(
        "ultimate bound over the trailing quarter: |x| <= {bx:.6e}, |e| <= {be:.6e}\n"
    ));
    manifest.stage("bounds");

    std::fs::write(out_dir.join("verify_report.txt"), &report)
        .map_err(|e| input_err(e.to_string()))?;
    manifest.write(out_dir)?;
    print!("{report}");
    Ok(())
}

fn cmd_export_sdpa(
    spec_path: &Path,
    which: &str,
    gains_path: Option<&Path>,
    alpha0: Option<f64>,
    out_dir: &Path,
) -> Result<(), CliError> {
    let (spec, digest) = load_spec(spec_path)?;
    ensure_out_dir(out_dir)?;
    let mut manifest = Manifest::new("export-sdpa", &digest);
    let fb = factor_blocks(&spec.plant, &spec.multiplier)
        .map_err(|e| input_err(e.to_string()))?;
    let o = &spec.options;
    let a0 = alpha0.unwrap_or(o.alpha0);
    let write = |name: &str, text: String| -> Result<(), CliError> {
        let path = out_dir.join(format!("{name}.dat-s"));
        std::fs::write(&path, text).map_err(|e| input_err(e.to_string()))?;
        println!("wrote {}", path.display());
        Ok(())
    };
    match which {
        "prop1" => {
            let gp = gains_path.ok_or_else(|| input_err("prop1 export requires --gains"))?;
            let gains = artifacts::read_gains(gp)?;
            let prob = build_recertification(&spec.plant, &gains, &spec.multiplier.m, a0)
                .map_err(|e| input_err(e.to_string()))?;
            write("prop1", export_sdpa(&prob))?;
        }
        "thm1-obs" => {
            let prob = build_observer_block_diagonal(
                &spec.plant,
                &fb,
                (&spec.multiplier.x0, &spec.multiplier.y0),
                o.alpha1_grid[0],
                o.mu1,
            )
            .map_err(|e| input_err(e.to_string()))?;
            write("thm1-obs", export_sdpa(&prob))?;
        }
        "thm1-ctrl" => {
            let prob = build_controller_block_diagonal(
                &spec.plant,
                &fb,
                (&spec.multiplier.x0, &spec.multiplier.y0),
                o.alpha2_grid[0],
                o.mu2,
                o.mode == SynthesisMode::SimplifiedController,
            )
            .map_err(|e| input_err(e.to_string()))?;
            write("thm1-ctrl", export_sdpa(&prob))?;
        }
        "thm2" => {
            let x2 = o.x2_fixed.clone().unwrap_or_else(|| spec.multiplier.x0.clone());
            let probs = build_anti_triangular(
                &spec.plant,
                &fb,
                &fb,
                o.alpha1_grid[0],
                o.alpha2_grid[0],
                &x2,
                o.mu1,
                o.mu2,
                o.margin,
            )
            .map_err(|e| input_err(e.to_string()))?;
            write("thm2-obs", export_sdpa(&probs.observer))?;
            write("thm2-ctrl", export_sdpa(&probs.controller))?;
            write("thm2-bound", export_sdpa(&probs.boundedness))?;
        }
        other => {
            return Err(input_err(format!(
                "unknown export target `{other}` (prop1|thm1-obs|thm1-ctrl|thm2)"
            )))
        }
    }
    manifest.stage("export");
    manifest.write(out_dir)?;
    Ok(())
}

fn cmd_report(events_path: &Path, windows: Option<String>, out_dir: &Path) -> Result<(), CliError> {
    let (ev_u, ev_y) = artifacts::read_events(events_path)?;
    let windows: Vec<(f64, f64)> = match windows {
        Some(w) => {
            let vals: Result<Vec<f64>, _> = w.split_whitespace().map(|t| t.parse()).collect();
            let vals = vals.map_err(|_| input_err("bad --windows list"))?;
            if vals.len() % 2 != 0 || vals.is_empty() {
                return Err(input_err("--windows must list pairs of endpoints"));
            }
            vals.chunks(2).map(|c| (c[0], c[1])).collect()
        }
        None => {
            let horizon = ev_u
                .iter()
                .chain(ev_y.iter())
                .fold(0.0f64, |a, b| a.max(*b));
            vec![(0.0, horizon), (3.0, horizon)]
        }
    };
    ensure_out_dir(out_dir)?;
    let mut stats = Vec::new();
    for (channel, events) in [(Channel::Output, &ev_y), (Channel::Controller, &ev_u)] {
        if events.is_empty() {
            continue;
        }
        for w in &windows {
            stats.push(
                interexec_stats(channel, events, *w).map_err(|e| input_err(e.to_string()))?,
            );
        }
    }
    let (txt, csv) = artifacts::render_report(&stats);
    std::fs::write(out_dir.join("report.txt"), &txt).map_err(|e| input_err(e.to_string()))?;
    std::fs::write(out_dir.join("report.csv"), &csv).map_err(|e| input_err(e.to_string()))?;
    print!("{txt}");
    Ok(())
}
