use super::*;

#[test]
fn selectors() {
    assert_eq!(parse_selector("all").unwrap(), Suite::ALL.to_vec());
    assert_eq!(parse_selector("default").unwrap().len(), 8);
    assert_eq!(parse_selector("hopf").unwrap(), vec![Suite::Hopf]);
    assert_eq!(parse_selector("wall, hopf,wall").unwrap(), vec![Suite::Wall, Suite::Hopf]);
    assert!(parse_selector("hopff").is_err());
    assert!(parse_selector(" ").is_err());
    for s in Suite::ALL {
        assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.name()));
    }
}

#[test]
fn hopf_selector_runs_only_field_checks() {
    let r = run(&[Suite::Hopf], 3, &Scenario::default());
    assert!(!r.checks.is_empty());
    assert!(r.checks.iter().all(|c| c.suite == Suite::Hopf));
    assert!(r.pass, "{:#?}", r.checks);
}

#[test]
fn wall_suite_passes_and_is_deterministic() {
    let a = run(&[Suite::Wall], 9, &Scenario::default());
    assert!(a.pass, "{:#?}", a.checks);
    let b = run(&[Suite::Wall], 9, &Scenario::default());
    assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
}

#[test]
fn failures_are_entries() {
    let mut sink = Sink {
        suite: Suite::Wall,
        checks: Vec::new(),
    };
    sink.below("ok", Ok(0.5), 1.0);
    sink.above("low", Ok(0.5), 1.0);
    sink.flag("broken", Err(Error::InvalidParameter("x".into())));
    let pass: Vec<bool> = sink.checks.iter().map(|c| c.pass).collect();
    assert_eq!(pass, [true, false, false]);
    assert!(sink.checks[2].metric.is_nan());
    assert!(sink.checks[2].error.as_deref().unwrap().contains('x'));
}
