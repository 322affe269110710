use super::*;

fn standard() -> ScenarioTemplate {
    ScenarioTemplate::load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/standard.toml")).unwrap()
}

fn config_error(r: Result<Scenario>) -> (String, String) {
    match r {
        Err(Error::Config { path, message }) => (path, message),
        Err(e) => panic!("expected a configuration error, got {e}"),
        Ok(_) => panic!("expected a configuration error"),
    }
}

#[test]
fn standard_file_builds() {
    let s = standard().build().unwrap();
    assert_eq!(s.model.node_count(), 101);
    assert_eq!(s.leaks.len(), 1);
    assert!((s.leaks[0].mass_rate - 0.7).abs() < 1e-12);
    assert_eq!(s.leaks[0].start_time, 900.0);
    assert_eq!(s.instruments()[0].noise_sigma, 0.002 * 80.0);
    assert_eq!(s.poll_interval, 5.0);
    let rtm = s.rtm.unwrap();
    assert!((rtm.policy.flow_threshold - 0.48).abs() < 1e-12);
    assert!((rtm.policy.pressure_threshold - 6000.0).abs() < 1e-9);
    assert_eq!(s.availability.len(), 3);
    assert_eq!(s.acoustic.unwrap().wave.speed, 1414.0);
}

#[test]
fn errors_carry_the_field_path() {
    let (path, msg) = config_error(standard().with("leaks.0.rate", "0.7 furlongs/s").unwrap().build());
    assert_eq!(path, "leaks[0].rate");
    assert!(msg.contains("unit"), "{msg}");

    let (path, msg) = config_error(standard().with("pipeline.diamter", 0.3).unwrap().build());
    assert!(path.starts_with("pipeline"), "{path}");
    assert!(msg.contains("unknown field"), "{msg}");

    let (path, _) = config_error(
        standard()
            .with("instruments.3.span", toml::Value::Array(vec![]))
            .unwrap()
            .build(),
    );
    assert!(path.starts_with("instruments[3].span"), "{path}");
}

#[test]
fn cross_checks_at_load_time() {
    let (path, _) = config_error(standard().with("leaks.0.position", 0).unwrap().build());
    assert_eq!(path, "leaks[0].position");

    let (path, _) = config_error(standard().with("leaks.0.start_time", "2 h").unwrap().build());
    assert_eq!(path, "leaks[0].start_time");

    let (path, _) = config_error(standard().with("telemetry.poll_interval", 2.5).unwrap().build());
    assert_eq!(path, "telemetry.poll_interval");

    let (path, msg) = config_error(standard().with("solver.dx", "3 km").unwrap().build());
    assert_eq!(path, "solver.dx");
    assert!(msg.contains("smaller dx"), "{msg}");

    let (path, _) = config_error(standard().with("instruments.7.position", "9.9 km").unwrap().build());
    assert_eq!(path, "rtm.shadow_outlet");

    let (path, _) = config_error(standard().with("boundary.outlet.kind", "pressure").unwrap().build());
    assert_eq!(path, "boundary.outlet.loss_coefficient");
}

#[test]
fn near_critical_fluid_is_rejected() {
    let t = standard()
        .with("fluid.critical_pressure", "6.8 bar")
        .unwrap()
        .with("fluid.critical_temperature", "15 degC")
        .unwrap();
    let (path, _) = config_error(t.build());
    assert!(path.starts_with("boundary") || path.starts_with("fluid"), "{path}");
}

#[test]
fn overrides_and_hashes() {
    let base = standard();
    let mut t = base.clone();
    t.set("rtm.min_indicators", 2).unwrap();
    assert_eq!(t.build().unwrap().rtm.unwrap().policy.min_indicators, 2);
    assert_ne!(t.hash(), base.hash());
    assert!(t.set("leaks.5.rate", 1.0).is_err());
    assert!(t.set("leaks.x.rate", 1.0).is_err());
    assert!(t.set("name.sub", 1.0).is_err());
    assert!(t.remove("rtm.min_indicators").unwrap().is_some());
    assert!(t.remove("rtm.min_indicators").unwrap().is_none());
    assert!(t.remove("nothing.here").is_err());
    t.set("rtm.min_indicators", 1).unwrap();
    assert_eq!(t.hash(), base.hash());

    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/standard.toml")).unwrap();
    let commented = ScenarioTemplate::parse(&format!("{text}\n# trailing note\n")).unwrap();
    assert_eq!(commented.hash(), base.hash());
    assert_eq!(base.hash().len(), 64);
}

#[test]
fn syntax_errors_are_config_errors() {
    let (path, _) = config_error(Scenario::from_toml_str("[run\nhorizon = 1"));
    assert_eq!(path, "(syntax)");
}

#[test]
fn gas_line_runs() {
    let t = standard()
        .with("fluid", toml::Value::Table(toml::Table::new()))
        .unwrap()
        .with("fluid.kind", "gas")
        .unwrap()
        .with("fluid.gas_constant", 518.3)
        .unwrap()
        .with("fluid.specific_heat", 2200.0)
        .unwrap()
        .with("fluid.sound_speed", "430 m/s")
        .unwrap()
        .with("fluid.z_model", "calibrated")
        .unwrap()
        .with("fluid.z_exponent", 3.825)
        .unwrap()
        .with("fluid.z_reference", 0.9)
        .unwrap()
        .with("fluid.reference_pressure", "50 bar")
        .unwrap()
        .with("fluid.reference_temperature", "15 degC")
        .unwrap()
        .with("boundary.inlet.value", "50 bar")
        .unwrap()
        .with("boundary.outlet.kind", "mass_flow")
        .unwrap()
        .with("boundary.outlet.value", "20 kg/s")
        .unwrap()
        .without("boundary.outlet.loss_coefficient")
        .unwrap();
    // widen spans for gas service
    let mut t = t;
    for i in [1, 3, 4, 5, 6] {
        t.set(
            &format!("instruments.{i}.span"),
            toml::Value::Array(vec![0.into(), "60 bar".into()]),
        )
        .unwrap();
    }
    for i in [0, 7] {
        t.set(
            &format!("instruments.{i}.span"),
            toml::Value::Array(vec![0.into(), "40 kg/s".into()]),
        )
        .unwrap();
    }
    let s = t
        .with("run.horizon", "2 min")
        .unwrap()
        .with("leaks", toml::Value::Array(vec![]))
        .unwrap()
        .with("balance.enabled", false)
        .unwrap()
        .build()
        .unwrap();
    assert!(s.model.fluid.is_gas());
    let out = run_scenario(&s).unwrap();
    assert_eq!(out.report.status, RunStatus::Completed, "{:?}", out.report.failure);
    assert_eq!(out.telemetry.len(), 25);
    let q = out.telemetry[24].good("FT-IN").unwrap();
    assert!((q - 20.0).abs() < 0.5, "{q}");
}

#[test]
fn solver_failure_gives_partial_report() {
    // outlet demand far beyond what the inlet pressure can push
    let s = standard()
        .with("boundary.outlet.kind", "mass_flow")
        .unwrap()
        .with(
            "boundary.outlet.schedule",
            toml::Value::Array(vec![
                toml::Value::Array(vec![0.into(), 70.0.into()]),
                toml::Value::Array(vec![60.into(), 70.0.into()]),
                toml::Value::Array(vec![120.into(), 600.0.into()]),
            ]),
        )
        .unwrap()
        .without("boundary.outlet.loss_coefficient")
        .unwrap()
        .without("boundary.outlet.value")
        .unwrap();
    let s = s
        .with("run.horizon", "10 min")
        .unwrap()
        .with("leaks", toml::Value::Array(vec![]))
        .unwrap()
        .build()
        .unwrap();
    let out = run_scenario(&s).unwrap();
    let r = &out.report;
    assert_eq!(r.status, RunStatus::Failed);
    let f = r.failure.as_ref().unwrap();
    assert_eq!(f.stage, "plant");
    assert!(f.time > 60.0 && f.time < 600.0, "{f:?}");
    assert!(out.telemetry.len() < 121);
    assert!(r.rtm.is_some());
}
