use std::path::{Path, PathBuf};

use clap::Args;
use spdc_bell::config::ScenarioFile;
use spdc_bell::fitting::{fit_fringe, fit_scan, poisson_variances, FitResult};
use spdc_bell::polarization::{BellKind, Port};
use spdc_bell::scenario::{
    prepare_state, scan_with, sweep as run_sweep, AxisKind, ExecutionMode, Scenario, ScanOptions, Source,
    SweepParameter,
};

use crate::output::{read_fringe_csv, sidecar, write_csv, write_text, CliError, CliResult, Report, RunManifest};
use crate::Common;

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// pump_delay | signal_tilt | idler_tilt | both_tilts | analyzer2_angle
    #[arg(long)]
    pub axis: Option<String>,
    /// START:STOP in axis units (nm of path difference, or degrees); STOP is excluded.
    #[arg(long, allow_hyphen_values = true)]
    pub range: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Replace rates by Poisson counts (see the scenario's [noise] section).
    #[arg(long)]
    pub noise: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// crystal_length | filter_fwhm | compensation_error_fs | pump_ratio
    #[arg(long)]
    pub parameter: String,
    /// Comma list (`none` allowed for filter_fwhm) or START:STOP:N inclusive.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: String,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV with a header row and columns axis_value, rate.
    pub input: PathBuf,
    /// Treat rates as counts and weight by Poisson variances.
    #[arg(long)]
    pub poisson: bool,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// phi+ | phi- | psi+ | psi-
    #[arg(long)]
    pub target: String,
}

fn mode(common: &Common) -> ExecutionMode {
    if common.reference {
        ExecutionMode::Reference
    } else {
        ExecutionMode::Parallel
    }
}

fn load(common: &Common) -> CliResult<ScenarioFile> {
    let mut file = match &common.config {
        Some(p) => ScenarioFile::from_path(p)?,
        None => ScenarioFile::builtin(),
    };
    if let Some(seed) = common.seed {
        file.noise.seed = seed;
    }
    Ok(file)
}

fn resolve(common: &Common, file: &ScenarioFile) -> CliResult<Scenario> {
    file.resolve().map_err(|e| {
        let mut err = CliError::from(e);
        if let Some(p) = &common.config {
            err.message = format!("{}: {}", p.display(), err.message);
        }
        err
    })
}

fn required_output(common: &Common) -> CliResult<&Path> {
    common
        .output
        .as_deref()
        .ok_or_else(|| CliError::config("--output is required for this command"))
}

fn parse_range(s: &str) -> CliResult<(f64, f64)> {
    let bad = || CliError::config(format!("--range '{s}': expected START:STOP"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

pub fn parse_grid(s: &str) -> CliResult<Vec<Option<f64>>> {
    let bad = |what: &str| CliError::config(format!("--grid '{s}': {what}"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let a: f64 = parts[0].trim().parse().map_err(|_| bad("bad START"))?;
        let b: f64 = parts[1].trim().parse().map_err(|_| bad("bad STOP"))?;
        let n: usize = parts[2].trim().parse().map_err(|_| bad("bad N"))?;
        return match n {
            0 => Err(bad("N must be >= 1")),
            1 => Ok(vec![Some(a)]),
            _ => Ok((0..n).map(|k| Some(a + (b - a) * k as f64 / (n - 1) as f64)).collect()),
        };
    }
    if parts.len() != 1 {
        return Err(bad("expected a comma list or START:STOP:N"));
    }
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| match t.trim() {
            "none" => Ok(None),
            v => v.parse().map(Some).map_err(|_| bad(&format!("'{v}' is not a number"))),
        })
        .collect()
}

fn fit_lines(report: &mut Report, fit: &FitResult) {
    report.push("visibility_fit", fit.visibility);
    report.push("visibility_raw", fit.raw_visibility);
    report.push("period", fit.period);
    report.push("phase_rad", fit.phase_rad);
    report.push("offset", fit.offset);
    report.push("rms_residual", fit.rms_residual);
    report.push("converged", fit.converged);
    report.push("iterations", fit.iterations);
    report.push("degenerate_period", fit.degenerate);
}

pub fn scan(common: &Common, args: &ScanArgs, argv: &[String]) -> CliResult<()> {
    let output = required_output(common)?;
    let mut file = load(common)?;
    if let Some(a) = &args.axis {
        file.scan.axis_kind = a.parse::<AxisKind>()?;
    }
    if let Some(r) = &args.range {
        (file.scan.start, file.scan.stop) = parse_range(r)?;
    }
    if let Some(n) = args.steps {
        file.scan.steps = n;
    }
    if args.noise {
        file.noise.enabled = true;
    }
    let scenario = resolve(common, &file)?;
    let source = Source::new(&scenario.source)?;
    let opts = ScanOptions {
        axis_kind: scenario.scan.axis_kind,
        start: scenario.scan.start,
        stop: scenario.scan.stop,
        steps: scenario.scan.steps,
        analyzers: scenario.analyzers,
        base_knobs: scenario.knobs.clone(),
        noise: scenario.noise.enabled.then(|| scenario.noise.clone()),
        mode: mode(common),
    };
    let scan = scan_with(&source, &opts)?;

    let rows: Vec<Vec<String>> = scan
        .axis
        .iter()
        .zip(&scan.rates)
        .map(|(x, r)| vec![x.to_string(), r.to_string()])
        .collect();
    write_csv(output, &["axis_value", "rate"], &rows)?;

    let fit = fit_scan(&scan);
    let mut report = Report::default();
    report.push("axis_kind", scan.axis_kind.as_str());
    report.push("axis_unit", scan.axis_kind.unit());
    report.push("steps", scan.axis.len());
    report.push("visibility_bound", scan.metadata.visibility_bound);
    if let Some(c) = scan.metadata.compensator.first() {
        report.push("compensator_thickness_mm", c.thickness_mm);
    }
    match &fit {
        Ok(f) => fit_lines(&mut report, f),
        Err(e) => report.push("fit_error", e),
    }
    for (k, note) in scan.metadata.notes.iter().enumerate() {
        report.push(&format!("note_{}", k + 1), note);
    }
    let report_path = sidecar(output, ".report.txt");
    write_text(&report_path, &report.render())?;

    let manifest_path = sidecar(output, ".manifest.toml");
    let mut manifest = RunManifest::new("scan", argv, common.config.as_deref(), common.reference);
    manifest.output_paths = vec![path_str(output), path_str(&report_path), path_str(&manifest_path)];
    manifest.seed = if scenario.noise.enabled { Some(scenario.noise.seed) } else { common.seed };
    manifest.write(&manifest_path)?;

    fit.map(|_| ()).map_err(CliError::from)
}

pub fn sweep(common: &Common, args: &SweepArgs, argv: &[String]) -> CliResult<()> {
    let output = required_output(common)?;
    let parameter: SweepParameter = args.parameter.parse()?;
    let grid = parse_grid(&args.grid)?;
    let file = load(common)?;
    resolve(common, &file)?;
    let points = run_sweep(&file, parameter, &grid, mode(common))?;
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            let v = p.value.map_or_else(|| "none".to_string(), |v| v.to_string());
            vec![v, p.visibility.to_string()]
        })
        .collect();
    write_csv(output, &["parameter_value", "visibility"], &rows)?;
    let manifest_path = sidecar(output, ".manifest.toml");
    let mut manifest = RunManifest::new("sweep", argv, common.config.as_deref(), common.reference);
    manifest.output_paths = vec![path_str(output), path_str(&manifest_path)];
    manifest.seed = common.seed;
    manifest.write(&manifest_path)
}

pub fn fit(common: &Common, args: &FitArgs, argv: &[String]) -> CliResult<()> {
    let (x, y) = read_fringe_csv(&args.input)?;
    let var = args.poisson.then(|| poisson_variances(&y));
    let fit = fit_fringe(&x, &y, var.as_deref())?;
    let mut report = Report::default();
    report.push("input", args.input.display());
    report.push("points", x.len());
    fit_lines(&mut report, &fit);
    emit_report(common, "fit", argv, &report)
}

pub fn prepare(common: &Common, args: &PrepareArgs, argv: &[String]) -> CliResult<()> {
    let target: BellKind = args.target.parse()?;
    if matches!(target, BellKind::Custom) {
        return Err(CliError::config("--target must be one of phi+, phi-, psi+, psi-"));
    }
    let file = load(common)?;
    let scenario = resolve(common, &file)?;
    let source = Source::new(&scenario.source)?;
    let p = prepare_state(&source, target, &scenario.polarization)?;
    let mut report = Report::default();
    report.push("target", args.target.to_lowercase());
    report.push("pump_delta_x_nm", p.knobs.pump_delta_x_nm);
    report.push("signal_tilt_deg", p.knobs.signal_tilt_deg);
    report.push("idler_tilt_deg", p.knobs.idler_tilt_deg);
    report.push("hwp_inserted", p.hwp.is_some());
    if let Some((axis, port)) = p.hwp {
        report.push("hwp_axis_deg", axis);
        report.push(
            "hwp_port",
            match port {
                Port::One => 1,
                Port::Two => 2,
            },
        );
    }
    report.push("visibility", p.visibility);
    report.push("fidelity", p.fidelity);
    for (name, c) in ["hh", "hv", "vh", "vv"].iter().zip(p.state.coefficients) {
        report.push(&format!("state_{name}"), format!("{} {}", c.re, c.im));
    }
    emit_report(common, "prepare", argv, &report)
}

fn emit_report(common: &Common, command: &str, argv: &[String], report: &Report) -> CliResult<()> {
    match &common.output {
        None => {
            print!("{}", report.render());
            Ok(())
        }
        Some(out) => {
            write_text(out, &report.render())?;
            let manifest_path = sidecar(out, ".manifest.toml");
            let mut manifest = RunManifest::new(command, argv, common.config.as_deref(), common.reference);
            manifest.output_paths = vec![path_str(out), path_str(&manifest_path)];
            manifest.seed = common.seed;
            manifest.write(&manifest_path)
        }
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}
