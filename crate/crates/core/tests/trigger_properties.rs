//! Trigger-design and audit properties that cut across modules.

use etc_core::analysis::audit_trigger_invariants;
use etc_core::etm::{trigger_config_b, trigger_config_c, TriggerChannel, TriggerDesign, TriggerVariant};
use etc_core::presets;
use etc_core::sim::{simulate, Configuration, Disturbance, SimConfig};
use etc_core::synthesis::{synthesize_block_diagonal, SynthesisOptions};

fn example_opts(seed: u64) -> SynthesisOptions {
    let mut o = SynthesisOptions { mu1: Some(0.1), mu2: Some(0.1), ..SynthesisOptions::default() };
    o.solver.seed = seed;
    o
}

#[test]
fn controller_channel_invariant_holds_and_detects_inflated_dwell() {
    let plant = presets::single_link_arm();
    let p = presets::single_link_arm_nonlinearity();
    let gains = presets::single_link_arm_reference_gains();
    let cert = etc_core::synthesis::StabilityCertificate {
        p: etc_core::mat::Mat::identity(4),
        alpha0: 0.25,
        mu: 1.0,
        theta: 0.0,
        beta0: 1.0,
        kappa_hat: 0.0,
    };
    let design = trigger_config_b(&plant, &gains, &cert, 1.0, 0.02, 0.8, 0.005,
        TriggerVariant::Standard).unwrap();
    let (x0, xhat0) = presets::single_link_arm_initial_states();
    let h = (design.controller.tau / 5.0).min(1e-3);
    let run = |d: TriggerDesign| {
        let cfg = SimConfig {
            configuration: Configuration::EtmController,
            horizon: 5.0,
            step: h,
            x0: x0.clone(),
            xhat0: xhat0.clone(),
            disturbance: Disturbance::UniformBox { omega0: 0.02, seed: 3 },
            trigger: Some(d),
        };
        simulate(&plant, &gains, &p, &cfg).unwrap()
    };

    // designed parameters: the relaxed condition holds at every grid point
    let trace = run(design.clone());
    let audit = audit_trigger_invariants(&trace, &design, &plant).unwrap();
    assert!(audit.holds, "designed dwell must keep the invariant: {audit:?}");

    // adversarial control: inflating the dwell far beyond its designed
    // value blocks due updates and the audited ratio escapes past 1
    let inflated = TriggerDesign {
        controller: TriggerChannel { tau: design.controller.tau * 100.0, ..design.controller },
        ..design.clone()
    };
    let trace = run(inflated.clone());
    // audit against the original design's thresholds and slack
    let audit = audit_trigger_invariants(&trace, &design, &plant).unwrap();
    assert!(
        audit.worst_ratio_u > 1.0 + audit.slack,
        "inflated dwell should break the invariant: {audit:?}"
    );
    assert!(!audit.holds);
}

#[test]
fn dwell_times_positive_over_twenty_seeded_synthesis_runs() {
    let plant = presets::single_link_arm();
    let mf = presets::single_link_arm_multiplier();
    for seed in 0..20u64 {
        let r = synthesize_block_diagonal(&plant, &mf, &mf, Some(1.0), &example_opts(seed))
            .unwrap_or_else(|e| panic!("seed {seed}: synthesis failed: {e}"));
        // the composite certificate is enough for trigger design
        let cert = &r.certificate;
        let b = trigger_config_b(&plant, &r.gains, cert, 1.0, 0.02, 0.8, 0.005,
            TriggerVariant::Standard)
            .unwrap();
        assert!(b.controller.tau > 0.0, "seed {seed}: nonpositive controller dwell");
        let c = trigger_config_c(&plant, &r.gains, cert, 1.0, 0.02, 0.8, 0.5, 0.5,
            0.005, 0.005, TriggerVariant::Standard)
            .unwrap();
        assert!(c.controller.tau > 0.0);
        assert!(c.output.unwrap().tau > 0.0, "seed {seed}: nonpositive output dwell");
    }
}

#[test]
fn noise_free_variant_takes_the_interval_midpoint() {
    let plant = presets::single_link_arm(); // Fw = 0
    let gains = presets::single_link_arm_reference_gains();
    let cert = etc_core::synthesis::StabilityCertificate {
        p: etc_core::mat::Mat::identity(4),
        alpha0: 0.25,
        mu: 1.0,
        theta: 0.0,
        beta0: 1.0,
        kappa_hat: 0.0,
    };
    let std = trigger_config_b(&plant, &gains, &cert, 1.0, 0.02, 0.8, 0.005,
        TriggerVariant::Standard).unwrap();
    let nf = trigger_config_b(&plant, &gains, &cert, 1.0, 0.02, 0.8, 0.005,
        TriggerVariant::NoiseFree).unwrap();
    assert!((nf.controller.sigma - 0.5 * std.controller.sigma).abs() < 1e-15);
    assert!(nf.noise_free);

    // the variant is refused when the output carries measurement noise
    let mut noisy = presets::single_link_arm();
    noisy.fw = etc_core::mat::Mat::scalar(0.3);
    let err = trigger_config_b(&noisy, &gains, &cert, 1.0, 0.02, 0.8, 0.005,
        TriggerVariant::NoiseFree);
    assert!(matches!(err, Err(etc_core::etm::EtmError::NoiseFreeNeedsFwZero)));
}
