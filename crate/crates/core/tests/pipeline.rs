use spdc_bell::config::ScenarioFile;
use spdc_bell::fitting::fit_scan;
use spdc_bell::polarization::BellKind;
use spdc_bell::scenario::{prepare_state, scan_with, AxisKind, ExecutionMode, ScanOptions, Source};

fn options(file: &ScenarioFile, axis_kind: AxisKind, stop: f64) -> ScanOptions {
    let s = file.resolve().unwrap();
    ScanOptions {
        axis_kind,
        start: 0.0,
        stop,
        steps: 128,
        analyzers: s.analyzers,
        base_knobs: s.knobs,
        noise: None,
        mode: ExecutionMode::Reference,
    }
}

#[test]
fn builtin_scenario_round_trips_through_toml() {
    let file = ScenarioFile::builtin();
    let again = ScenarioFile::from_toml_str(&file.to_toml_string()).unwrap();
    assert_eq!(file, again);
}

#[test]
fn pump_scan_fits_back_to_its_period() {
    let file = ScenarioFile::builtin();
    let source = Source::new(&file.resolve().unwrap().source).unwrap();
    let scan = scan_with(&source, &options(&file, AxisKind::PumpDelay, 1600.0)).unwrap();
    let fit = fit_scan(&scan).unwrap();
    assert!((fit.period / 400.0 - 1.0).abs() < 1e-3, "{}", fit.period);
    assert!((fit.visibility - scan.metadata.visibility_bound).abs() < 1e-6);
}

#[test]
fn reference_and_parallel_scans_agree() {
    let file = ScenarioFile::builtin();
    let source = Source::new(&file.resolve().unwrap().source).unwrap();
    let mut opts = options(&file, AxisKind::SignalTilt, 2920.0);
    let a = scan_with(&source, &opts).unwrap();
    opts.mode = ExecutionMode::Parallel;
    let b = scan_with(&source, &opts).unwrap();
    assert_eq!(a.rates, b.rates);
}

#[test]
fn every_bell_state_is_preparable() {
    let s = ScenarioFile::builtin().resolve().unwrap();
    let source = Source::new(&s.source).unwrap();
    for kind in [BellKind::PhiPlus, BellKind::PhiMinus, BellKind::PsiPlus, BellKind::PsiMinus] {
        let p = prepare_state(&source, kind, &s.polarization).unwrap();
        assert!(p.fidelity > 0.999, "{kind:?}: {}", p.fidelity);
    }
}
