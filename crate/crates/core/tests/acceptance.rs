//! End-to-end acceptance checks. Each test prints one PASS/FAIL line
//! (straight to stdout so it shows without --nocapture) and then asserts.

use std::io::Write;
use std::time::Instant;

use linewatch::acoustic::{
    detection_latency, localize_event, propagate, AcousticSensor, WaveModel, GAS_WAVE_SPEED, LIQUID_WAVE_SPEED,
};
use linewatch::availability::{compare_configurations, ComponentChain};
use linewatch::balance::{accumulate, BalanceSample};
use linewatch::network::{ElevationProfile, GRAVITY};
use linewatch::scenario::{sweep, GridParameter, RunOutput, SweepGrid};
use linewatch::{
    discretize, run_scenario, BoundaryConditions, EndCondition, Eos, FluidModel, LeakEvent, LineModel, LiquidEos,
    PipelineModel, RtmDetector, Scenario, ScenarioTemplate, Schedule, ShadowModel, SolverSettings, VotingPolicy,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(name: &str, pass: bool, detail: String) {
    let tag = if pass { "PASS" } else { "FAIL" };
    // println! would be swallowed by the test harness
    #[allow(clippy::explicit_write)]
    writeln!(std::io::stdout(), "{tag} {name}: {detail}").unwrap();
    assert!(pass, "{name}: {detail}");
}

fn standard() -> ScenarioTemplate {
    ScenarioTemplate::load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/standard.toml")).unwrap()
}

fn run(t: &ScenarioTemplate) -> RunOutput {
    let out = run_scenario(&t.build().unwrap()).unwrap();
    assert!(out.report.failure.is_none(), "{:?}", out.report.failure);
    out
}

fn quiet(t: ScenarioTemplate) -> ScenarioTemplate {
    t.with("telemetry.noise_fraction", 0.0).unwrap()
}

#[test]
fn rtm_sensitivity() {
    let t0 = Instant::now();
    let first = run(&standard());
    let wall = t0.elapsed().as_secs_f64();
    let mut latencies = vec![first.report.metrics.rtm_latency];
    for seed in 2..=5 {
        latencies.push(
            run(&standard().with("run.seed", seed).unwrap())
                .report
                .metrics
                .rtm_latency,
        );
    }
    let quiet_latency = run(&quiet(standard())).report.metrics.rtm_latency;
    let noisy_ok = latencies.iter().all(|l| l.is_some_and(|l| l <= 600.0));
    let pass = noisy_ok && quiet_latency.is_some_and(|l| l <= 60.0) && wall < 120.0;
    verdict(
        "rtm sensitivity (1% leak, <=600 s noisy over 5 seeds, <=60 s noiseless, <120 s wall)",
        pass,
        format!("noisy latencies {latencies:?} s, noiseless {quiet_latency:?} s, wall {wall:.2} s"),
    );
}

#[test]
fn discrepancy_signs_before_alarm() {
    // The step onset rings the line at a period near the poll interval, so
    // the trend is the mean shift of the post-onset polls up to the alarm
    // against the last pre-onset poll, not a slope through the ringing.
    let out = run(&quiet(standard()));
    let rtm = out.report.rtm.unwrap();
    let alarm = rtm.verdict.declared_time.expect("no alarm");
    let onset = out.report.ground_truth[0].start_time;
    let before = rtm.trace.iter().rfind(|r| r.t < onset).unwrap();
    let window: Vec<_> = rtm.trace.iter().filter(|r| r.t >= onset && r.t <= alarm).collect();
    let mut pass = !window.is_empty();
    let mut detail = Vec::new();
    for id in ["PT-5000", "PT-7500"] {
        let i = rtm.indicators.iter().position(|x| x == id).unwrap();
        let shift = |f: fn(&linewatch::rtm::PollRecord) -> &Vec<Option<f64>>| {
            let base = f(before)[i].unwrap();
            window.iter().map(|r| f(r)[i].unwrap() - base).sum::<f64>() / window.len() as f64
        };
        let (dm, dd) = (shift(|r| &r.measured), shift(|r| &r.modeled));
        pass &= dm < 0.0 && dd > 0.0;
        detail.push(format!("{id} measured {dm:+.0} Pa, modeled {dd:+.0} Pa"));
    }
    verdict(
        "downstream pressure: measured falls, modeled rises before alarm",
        pass,
        format!(
            "{} polls from onset to alarm at {alarm} s; {}",
            window.len(),
            detail.join("; ")
        ),
    );
}

#[test]
fn mass_conservation() {
    // an hour of inlet pressure swings, with and without a leak
    let ramp = toml::Value::Array(
        [(0, 6.8), (600, 6.8), (1200, 5.5), (2400, 7.2), (3000, 6.0)]
            .iter()
            .map(|&(t, p)| toml::Value::Array(vec![t.into(), format!("{p} bar").into()]))
            .collect(),
    );
    let base = standard()
        .with("boundary.inlet.schedule", ramp)
        .unwrap()
        .with("rtm.enabled", false)
        .unwrap()
        .with("balance.enabled", false)
        .unwrap()
        .without("boundary.inlet.value")
        .unwrap();

    let no_leak = run(&base.clone().with("leaks", toml::Value::Array(vec![])).unwrap())
        .report
        .mass_ledger;
    let leak = run(&base).report.mass_ledger;
    let pass = no_leak.steps == 3600
        && leak.steps == 3600
        && no_leak.max_relative_step_residual < 1e-8
        && leak.max_relative_step_residual < 1e-8
        && leak.leak_mass > 0.0;
    verdict(
        "mass ledger closes every step (<1e-8 of linepack)",
        pass,
        format!(
            "max step residual {:.2e} without leak, {:.2e} with leak ({:.1} kg leaked)",
            no_leak.max_relative_step_residual, leak.max_relative_step_residual, leak.leak_mass
        ),
    );
}

#[test]
fn steady_state_matches_closed_form() {
    let water = || {
        let eos = LiquidEos::new(1000.0, 1e5, 288.15, 2e9, -2e-4).unwrap();
        FluidModel::new(Eos::Liquid(eos), 4180.0, 1414.0).unwrap()
    };
    let cases = [
        ("flat", 0.02, 0.0, 70.0),
        ("inclined", 0.02, 60.0, 70.0),
        ("high-friction", 0.06, 0.0, 50.0),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, f, rise, q) in cases {
        let (length, diameter) = (10_000.0, 0.3);
        let mut pipe = PipelineModel::uniform(length, diameter, f).unwrap();
        pipe.elevation = ElevationProfile::new(vec![(0.0, 0.0), (length, rise)]).unwrap();
        let grid = discretize(&pipe, 100.0).unwrap();
        let model = LineModel::new(pipe, water(), grid).unwrap();
        let bc = BoundaryConditions {
            inlet: EndCondition::mass_flow(Schedule::constant(q)),
            outlet: EndCondition::pressure(Schedule::constant(2e5)),
            supply_temperature: Schedule::constant(288.15),
        };
        let s = model.steady_state(&bc, 0.0, &[], &SolverSettings::default()).unwrap();
        let n = s.node_count();
        let rho = s.rho.iter().sum::<f64>() / n as f64;
        let v = q / (rho * std::f64::consts::PI * diameter * diameter / 4.0);
        let expected = f * length / diameter * rho * v * v / 2.0 + rho * GRAVITY * rise;
        let got = s.p[0] - s.p[n - 1];
        let rel = (got - expected).abs() / expected;
        pass &= rel < 5e-3;
        detail.push(format!("{name} {:.4}%", 100.0 * rel));
    }
    verdict(
        "steady pressure drop vs Darcy-Weisbach plus hydrostatic (<0.5%)",
        pass,
        detail.join(", "),
    );
}

#[test]
fn acoustic_forward_inverse() {
    let resolution = 0.01;
    let speed = 1414.0;
    let sensors: Vec<AcousticSensor> = [0.0, 5000.0, 10_000.0]
        .iter()
        .map(|&x| AcousticSensor {
            id: format!("AT-{x}"),
            position: x,
            trigger_threshold: 500.0,
            resolution,
        })
        .collect();
    let wave = WaveModel {
        speed,
        attenuation: 1e-4,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut located = 0;
    for _ in 0..100 {
        let leak = LeakEvent {
            position: rng.random_range(1.0..9999.0),
            start_time: rng.random_range(10.0..1000.0),
            mass_rate: 1.0,
        };
        let arrivals = propagate(&leak, 2e4, &sensors, &wave).unwrap();
        if let Some(fix) = localize_event(&arrivals, speed).unwrap() {
            located += 1;
            worst = worst.max((fix.localization.position - leak.position).abs());
        }
    }
    let bound = speed * resolution;

    // a mile from the nearest sensor: five seconds in gas, one in liquid
    let mut latencies = Vec::new();
    let mut latency_ok = true;
    for (speed, expected) in [(GAS_WAVE_SPEED, 5.0), (LIQUID_WAVE_SPEED, 1.0)] {
        let leak = LeakEvent {
            position: 1609.34,
            start_time: 100.0,
            mass_rate: 1.0,
        };
        let wave = WaveModel {
            speed,
            attenuation: 0.0,
        };
        let lat = detection_latency(&leak, &propagate(&leak, 2e4, &sensors, &wave).unwrap()).unwrap();
        latency_ok &= lat <= expected + 1e-9 && lat > expected - resolution - 1e-9;
        latencies.push(lat);
    }
    verdict(
        "acoustic localize(propagate(x)) within speed x resolution; mile latencies",
        located == 100 && worst <= bound && latency_ok,
        format!(
            "{located}/100 located, worst error {worst:.2} m (bound {bound:.2} m); gas {:.2} s, liquid {:.2} s",
            latencies[0], latencies[1]
        ),
    );
}

#[test]
fn balance_identity() {
    // identity over every window of a noisy run with gaps
    let out = run(&standard()
        .with("telemetry.dropout", 0.02)
        .unwrap()
        .with("run.horizon", "3 h")
        .unwrap());
    let bal = out.report.balance.unwrap();
    let mut worst: f64 = 0.0;
    for w in bal.windows.iter().filter_map(|w| w.totals) {
        let scale = w.v_in.abs().max(w.v_out.abs());
        worst = worst.max((w.imbalance - (w.v_in - w.v_out - w.delta_linepack)).abs() / scale);
    }
    let identity_ok = bal.windows.len() == 3 && worst <= 4.0 * f64::EPSILON;

    // a 1 kg/s leak present for the whole window
    let leak = quiet(standard())
        .with("leaks.0.start_time", 0)
        .unwrap()
        .with("leaks.0.rate", "1 kg/s")
        .unwrap();
    let out = run(&leak);
    let w = out.report.balance.unwrap().windows[0].totals.unwrap();
    let rel = (w.imbalance - 3600.0).abs() / 3600.0;

    // the metered volumes agree with an independent integration of the telemetry
    let samples: Vec<BalanceSample> = out
        .telemetry
        .iter()
        .map(|f| BalanceSample {
            t: f.poll_time,
            q_in: f.good("FT-IN"),
            q_out: f.good("FT-OUT"),
            inventory: Some(0.0),
        })
        .collect();
    let redo = accumulate(&samples).unwrap().totals.unwrap();
    let volumes_ok = (redo.v_in - w.v_in).abs() < 1e-9 * w.v_in && (redo.v_out - w.v_out).abs() < 1e-9 * w.v_out;
    verdict(
        "balance identity to machine precision; 1 kg/s x 3600 s within 1%",
        identity_ok && rel < 0.01 && volumes_ok,
        format!(
            "worst identity error {worst:.1e} (relative) over {} windows; leak window imbalance {:.2} kg ({:.3}%)",
            bal.windows.len(),
            w.imbalance,
            100.0 * rel
        ),
    );
}

fn detector(s: &Scenario, m: usize, k: usize) -> RtmDetector {
    let cfg = s.rtm.as_ref().unwrap();
    let policy = VotingPolicy {
        consecutive_required: m,
        min_indicators: k,
        ..cfg.policy
    };
    let supply = s.boundary.supply_temperature.value_at(0.0);
    let shadow = ShadowModel::new(s.model.clone(), cfg.settings, &policy, s.solver, supply).unwrap();
    RtmDetector::new(shadow, policy).unwrap()
}

#[test]
fn voting_dominance_and_specificity() {
    let mut dominance_ok = true;
    let mut strict_votes = 0;
    let mut loose_votes = 0;
    for seed in 1..=5 {
        // a 5% leak so that both policies vote
        let s = standard()
            .with("run.seed", seed)
            .unwrap()
            .with("leaks.0.rate", "3.5 kg/s")
            .unwrap()
            .build()
            .unwrap();
        let out = run_scenario(&s).unwrap();
        let (mut strict, mut loose) = (detector(&s, 3, 2), detector(&s, 1, 1));
        for f in &out.telemetry {
            let a = strict.process(f).unwrap().vote;
            let b = loose.process(f).unwrap().vote;
            dominance_ok &= !a || b;
            strict_votes += a as usize;
            loose_votes += b as usize;
        }
        let (a, b) = (strict.finalize().unwrap(), loose.finalize().unwrap());
        if let Some(ta) = a.declared_time {
            dominance_ok &= b.declared_time.is_some_and(|tb| tb <= ta);
        }
    }

    let idle = |k: usize| {
        let t = standard()
            .with("run.horizon", "24 h")
            .unwrap()
            .with("leaks", toml::Value::Array(vec![]))
            .unwrap()
            .with("rtm.min_indicators", k as i64)
            .unwrap()
            .with("acoustic.enabled", false)
            .unwrap()
            .with("output.state_dump_interval", "6 h")
            .unwrap();
        let r = run(&t).report;
        let rtm = r.rtm.unwrap();
        (
            rtm.verdict.declared_time,
            rtm.trace.iter().filter(|p| p.vote).count(),
            r.metrics.false_alarms,
        )
    };
    let (declared, votes, _) = idle(VotingPolicy::DEFAULT_MIN_INDICATORS);
    let (declared_k1, votes_k1, _) = idle(1);
    verdict(
        "(3,2) votes within (1,1) votes on every seed; no false alarm in 24 h idle run",
        dominance_ok && declared.is_none() && votes == 0,
        format!(
            "5 seeds: {strict_votes} strict / {loose_votes} loose votes; 24 h idle at M=3,K=2: alarm {declared:?}, {votes} votes; \
             at M=3,K=1: alarm {declared_k1:?}, {votes_k1} votes"
        ),
    );
}

#[test]
fn availability_presets() {
    let ranking = compare_configurations(&ComponentChain::presets(0.99)).unwrap();
    let get = |name: &str| ranking.iter().find(|r| r.availability.name == name).unwrap();
    let checks = [("mass_flow", 11), ("pressure", 13), ("acoustic", 7)];
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, n) in checks {
        let a = get(name).availability.product;
        pass &= (a - 0.99f64.powi(n)).abs() <= 1e-12;
        detail.push(format!("{name} {a:.9} (0.99^{n})"));
    }
    let order: Vec<&str> = ranking.iter().map(|r| r.availability.name.as_str()).collect();
    pass &= order == ["acoustic", "mass_flow", "pressure"];
    verdict(
        "preset chain uptimes at a=0.99 and ranking by element count",
        pass,
        format!("{}; ranking {order:?}", detail.join(", ")),
    );
}

#[test]
fn location_accuracy() {
    let mut worst: f64 = 0.0;
    for x in ["3 km", "6.2 km", "8.5 km"] {
        let out = run(&quiet(standard()).with("leaks.0.position", x).unwrap());
        worst = worst.max(out.report.metrics.rtm_location_error.unwrap_or(f64::INFINITY));
    }
    let dx = 100.0;

    let noisy = standard()
        .with("telemetry.noise_fraction", 0.005)
        .unwrap()
        .with("leaks.0.rate", "5 kg/s")
        .unwrap()
        .with("acoustic.enabled", false)
        .unwrap();
    let grid = SweepGrid {
        parameters: vec![GridParameter {
            path: "run.seed".into(),
            values: (1..=20).map(toml::Value::from).collect(),
        }],
    };
    let mut errors: Vec<f64> = sweep(&noisy, &grid)
        .iter()
        .map(|r| {
            r.report
                .as_ref()
                .and_then(|rep| rep.metrics.rtm_location_error)
                .unwrap_or(f64::INFINITY)
        })
        .collect();
    errors.sort_by(f64::total_cmp);
    let median = 0.5 * (errors[9] + errors[10]);
    let limit = 0.05 * 10_000.0;
    verdict(
        "location: noiseless within one cell, median within 5% of length at 0.5% noise",
        worst <= dx && median <= limit,
        format!(
            "noiseless worst {worst} m; 20-seed median {median} m (limit {limit} m), max {}",
            errors[19]
        ),
    );
}
