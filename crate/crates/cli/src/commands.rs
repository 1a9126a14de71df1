use std::env;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use qsv_core::protocol::{
    self, ByteLink, ClosingLink, Link, MemoryLink, Violation,
};
use qsv_core::simulator::{
    self, bitstring, format_sig9, FigureProfile, NoiseModel, RunSummary, SamplingMode, TrialConfig,
};
use qsv_core::statistics;
use qsv_core::strategies::{Direction, StrategyKind};
use qsv_core::QsvError;
use serde::{Deserialize, Serialize};

use crate::output::{join_sig9, print_json, print_line, print_table, read_file, to_json, write_file};
use crate::{
    AnalyzeArgs, BoundArgs, ChannelArg, CliError, DirectionArg, InfoArgs, Preset, ProtocolArgs,
    SimulateArgs, ValidateArgs, OUTPUT_DIR_ENV,
};

type CmdResult = Result<(), CliError>;

fn parse_kind(s: &str) -> Result<StrategyKind, CliError> {
    Ok(s.parse::<StrategyKind>()?)
}

/// `λ₂` of `kind`; the angle may be omitted for strategies that do not
/// depend on it.
fn lambda2_for(kind: StrategyKind, theta: Option<f64>) -> Result<f64, CliError> {
    match (theta, kind) {
        (Some(t), _) => Ok(kind.build(t)?.lambda2()),
        (None, StrategyKind::BiLocc) => Ok(1.0 / 3.0),
        (None, StrategyKind::Global) => Ok(0.0),
        (None, k) => Err(CliError::Usage(format!("--theta is required for strategy '{k}'"))),
    }
}

/// Parses `ideal`, `depolarizing:V`, `dephasing:P` or `misalignment:DEG`.
pub fn parse_noise(text: &str) -> Result<NoiseModel, CliError> {
    let (name, arg) = match text.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (text, None),
    };
    let value = || -> Result<f64, CliError> {
        arg.ok_or_else(|| CliError::Usage(format!("noise '{name}' needs a value, e.g. {name}:0.9")))?
            .parse::<f64>()
            .map_err(|e| CliError::Usage(format!("noise value in '{text}': {e}")))
    };
    match name {
        "ideal" if arg.is_none() => Ok(NoiseModel::Ideal),
        "depolarizing" => Ok(NoiseModel::Depolarizing { visibility: value()? }),
        "dephasing" => Ok(NoiseModel::Dephasing { p: value()? }),
        "misalignment" => Ok(NoiseModel::Misalignment { dtheta_deg: value()? }),
        _ => Err(CliError::Usage(format!(
            "unknown noise '{text}' (expected ideal, depolarizing:V, dephasing:P or misalignment:DEG)"
        ))),
    }
}

// ---------------------------------------------------------------------------
// info / bound
// ---------------------------------------------------------------------------

pub fn info(args: InfoArgs) -> CmdResult {
    let strategy = parse_kind(&args.strategy)?.build(args.theta)?;
    let report = strategy.report();
    if args.json {
        print_json(&report);
        return Ok(());
    }
    let settings = report
        .settings
        .iter()
        .zip(&report.probabilities)
        .map(|(l, p)| format!("{l}:{}", format_sig9(*p)))
        .collect::<Vec<_>>()
        .join(" ");
    print_table(&[
        ("strategy", report.kind.clone()),
        ("direction", report.direction.clone().unwrap_or_else(|| "-".into())),
        ("theta_deg", format_sig9(report.theta_deg)),
        ("lambda2", format_sig9(report.lambda2)),
        ("constant_factor", report.constant_factor.map_or("-".into(), format_sig9)),
        ("settings", if settings.is_empty() { "effective operator".into() } else { settings }),
        ("spectrum", join_sig9(&report.spectrum)),
        ("entangled_measurement", report.entangled_measurement.to_string()),
    ]);
    Ok(())
}

#[derive(Serialize)]
struct BoundReport {
    strategy: String,
    theta_deg: Option<f64>,
    epsilon: f64,
    delta: f64,
    lambda2: f64,
    exact: f64,
    ceiling: u64,
    asymptotic: f64,
}

pub fn bound(args: BoundArgs) -> CmdResult {
    let kind = parse_kind(&args.strategy)?;
    let lambda2 = lambda2_for(kind, args.theta)?;
    let n = statistics::required_measurements(args.epsilon, args.delta, lambda2)?;
    let report = BoundReport {
        strategy: kind.name().into(),
        theta_deg: args.theta,
        epsilon: args.epsilon,
        delta: args.delta,
        lambda2,
        exact: n.exact,
        ceiling: n.ceiling,
        asymptotic: n.asymptotic,
    };
    if args.json {
        print_json(&report);
    } else {
        print_table(&[
            ("strategy", report.strategy),
            ("lambda2", format_sig9(lambda2)),
            ("exact", format_sig9(n.exact)),
            ("ceiling", n.ceiling.to_string()),
            ("asymptotic", format_sig9(n.asymptotic)),
        ]);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

/// On-disk run configuration. Unknown keys are rejected.
#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct RunConfigFile {
    theta_deg: f64,
    strategy: String,
    #[serde(default)]
    noise: NoiseModel,
    #[serde(default = "default_measurements")]
    measurements_per_trial: u64,
    #[serde(default = "default_trials")]
    trials: u64,
    #[serde(default = "default_delta")]
    delta: f64,
    #[serde(default)]
    master_seed: u64,
    #[serde(default)]
    sampling: SamplingMode,
    #[serde(default)]
    output_dir: Option<PathBuf>,
}

fn default_measurements() -> u64 {
    200
}
fn default_trials() -> u64 {
    50
}
fn default_delta() -> f64 {
    0.05
}

/// Headline numbers of one run.
#[derive(Serialize)]
struct RunDigest {
    strategy: String,
    theta_deg: f64,
    lambda2: f64,
    trials: u64,
    measurements_per_trial: u64,
    delta: f64,
    theory_slope: f64,
    all_accept_slope: Option<f64>,
    all_accept_trials: u64,
    averaged_prefix_slope: Option<f64>,
    std_slope: Option<f64>,
    accept_frequency: f64,
    final_mean_inv_eps: Option<f64>,
}

impl From<&RunSummary> for RunDigest {
    fn from(s: &RunSummary) -> Self {
        RunDigest {
            strategy: s.strategy.clone(),
            theta_deg: s.theta_deg,
            lambda2: s.lambda2,
            trials: s.trials,
            measurements_per_trial: s.measurements_per_trial,
            delta: s.delta,
            theory_slope: s.theory_slope,
            all_accept_slope: s.all_accept_slope,
            all_accept_trials: s.all_accept_trials,
            averaged_prefix_slope: s.averaged_prefix_slope,
            std_slope: s.std_slope,
            accept_frequency: s.accept_frequency,
            final_mean_inv_eps: s.per_n.last().and_then(|p| p.mean_inv_eps),
        }
    }
}

#[derive(Serialize)]
struct SimulateReport {
    output_dir: String,
    files: Vec<String>,
    runs: Vec<RunDigest>,
}

fn output_dir(flag: Option<PathBuf>, config: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = flag
        .or(config)
        .or_else(|| env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn file_names(paths: &[PathBuf]) -> Vec<String> {
    paths
        .iter()
        .map(|p| p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned()))
        .collect()
}

pub fn simulate(args: SimulateArgs) -> CmdResult {
    if let Some(preset) = args.preset {
        let mut profile = match preset {
            Preset::Ideal => FigureProfile::ideal(),
            Preset::Fig3 | Preset::Fig4 => FigureProfile::demo(),
        };
        if let Some(n) = &args.noise {
            profile.noise = parse_noise(n)?;
        }
        if let Some(seed) = args.seed {
            profile.master_seed = seed;
        }
        let dir = output_dir(args.out, None)?;
        let mut runs = Vec::new();
        let mut paths = Vec::new();
        if matches!(preset, Preset::Fig3 | Preset::Ideal) {
            let (s, p) = simulator::reproduce_fig3(&dir, &profile)?;
            runs.extend(s);
            paths.extend(p);
        }
        if matches!(preset, Preset::Fig4 | Preset::Ideal) {
            let (s, p) = simulator::reproduce_fig4(&dir, &profile)?;
            runs.extend(s);
            paths.extend(p);
        }
        print_json(&SimulateReport {
            output_dir: dir.display().to_string(),
            files: file_names(&paths),
            runs: runs.iter().map(RunDigest::from).collect(),
        });
        return Ok(());
    }

    let path = args.config.expect("clap enforces --config or --preset");
    let text = read_file(&path)?;
    let file: RunConfigFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: invalid config: {e}", path.display())))?;
    let config = TrialConfig {
        theta_deg: file.theta_deg,
        strategy: parse_kind(&file.strategy)?,
        noise: file.noise,
        measurements_per_trial: file.measurements_per_trial,
        trials: file.trials,
        delta: file.delta,
        master_seed: file.master_seed,
        sampling: file.sampling,
    };
    let summary = simulator::run_experiment(&config)?;
    let dir = output_dir(args.out, file.output_dir)?;

    let mut csv = Vec::new();
    simulator::write_curve_csv(&mut csv, std::slice::from_ref(&summary), None)
        .map_err(|e| CliError::Io(e.to_string()))?;
    let csv_path = dir.join("run.csv");
    write_file(&csv_path, &csv)?;
    let summary_path = dir.join("summary.json");
    write_file(&summary_path, format!("{}\n", to_json(&summary)).as_bytes())?;

    print_json(&SimulateReport {
        output_dir: dir.display().to_string(),
        files: file_names(&[csv_path, summary_path]),
        runs: vec![RunDigest::from(&summary)],
    });
    Ok(())
}

// ---------------------------------------------------------------------------
// protocol / validate
// ---------------------------------------------------------------------------

fn session_kind(d: DirectionArg) -> StrategyKind {
    match d {
        DirectionArg::Ab => StrategyKind::UniLocc(Direction::AliceToBob),
        DirectionArg::Ba => StrategyKind::UniLocc(Direction::BobToAlice),
        DirectionArg::Bi => StrategyKind::BiLocc,
    }
}

pub fn protocol(args: ProtocolArgs) -> CmdResult {
    let config = TrialConfig {
        theta_deg: args.theta,
        strategy: session_kind(args.direction),
        noise: parse_noise(&args.noise)?,
        measurements_per_trial: args.rounds,
        trials: 1,
        delta: 0.05,
        master_seed: args.seed,
        sampling: SamplingMode::Auto,
    };
    let base: Box<dyn Link> = match (args.channel, args.fault_truncate_bytes) {
        (_, Some(b)) => Box::new(ByteLink::truncated_after(b)),
        (ChannelArg::Bytes, None) => Box::new(ByteLink::new()),
        (ChannelArg::Memory, None) => Box::new(MemoryLink),
    };
    let mut link: Box<dyn Link> = match args.fault_close_after {
        Some(k) => Box::new(ClosingLink::new(base, k)),
        None => base,
    };
    let session = protocol::run_session(&config, 0, &mut link)?;

    if let Some(path) = &args.transcript {
        let mut buf = Vec::new();
        protocol::write_transcript(&mut buf, &session.transcript).map_err(|e| CliError::Io(e.to_string()))?;
        write_file(path, &buf)?;
    }
    if let Some(e) = &session.abort {
        return Err(CliError::Protocol(format!(
            "protocol error: {e} ({} rounds completed)",
            session.record.n()
        )));
    }
    let summary = session.summary()?;
    let json = to_json(&summary);
    if let Some(path) = &args.summary {
        write_file(path, format!("{json}\n").as_bytes())?;
    }
    print_line(&json);
    Ok(())
}

fn print_violations(violations: &[Violation]) {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for v in violations {
        let round = v.round.map_or_else(|| "-".to_string(), |r| r.to_string());
        let _ = writeln!(out, "round {round}: {:?}: {}", v.kind, v.message);
    }
}

pub fn validate(args: ValidateArgs) -> CmdResult {
    let kind = parse_kind(&args.strategy)?;
    let file = fs::File::open(&args.transcript)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.transcript.display())))?;
    let log = protocol::read_transcript(BufReader::new(file)).map_err(|e| match e {
        QsvError::Io(m) => CliError::Io(m),
        other => CliError::Usage(other.to_string()),
    })?;
    let violations = protocol::validate_transcript(&log, kind, args.theta, None)?;
    if args.json {
        print_json(&violations);
    } else if violations.is_empty() {
        print_line(&format!("ok: {} frames, no violations", log.len()));
    } else {
        print_violations(&violations);
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Protocol(format!("{} violation(s)", violations.len())))
    }
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

/// JSON record file. Extra keys (seed, setting trace, ...) are ignored.
#[derive(Deserialize)]
struct RecordFile {
    bits: String,
    #[serde(default)]
    strategy: Option<String>,
    #[serde(default, alias = "theta")]
    theta_deg: Option<f64>,
}

#[derive(Serialize)]
struct AnalyzeReport {
    n: u64,
    m: u64,
    delta: f64,
    strategy: String,
    lambda2: f64,
    claim: bool,
    epsilon: Option<f64>,
    fidelity_lower_bound: Option<f64>,
}

fn load_record(path: &Path) -> Result<RecordFile, CliError> {
    let text = read_file(path)?;
    if text.trim_start().starts_with('{') {
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: invalid record: {e}", path.display())))
    } else {
        Ok(RecordFile { bits: text, strategy: None, theta_deg: None })
    }
}

pub fn analyze(args: AnalyzeArgs) -> CmdResult {
    let record = load_record(&args.record)?;
    let bits = bitstring::parse(&record.bits).map_err(CliError::Usage)?;
    if bits.is_empty() {
        return Err(CliError::Usage("record contains no measurements".into()));
    }
    let strategy = args
        .strategy
        .or(record.strategy)
        .ok_or_else(|| CliError::Usage("no strategy in the record; pass --strategy".into()))?;
    let kind = parse_kind(&strategy)?;
    let lambda2 = lambda2_for(kind, args.theta.or(record.theta_deg))?;

    let n = bits.len() as u64;
    let m = bits.iter().filter(|b| **b).count() as u64;
    let (epsilon, fidelity) = match statistics::verdict(n, m, args.delta, lambda2) {
        Ok(v) => (Some(v.epsilon), Some(v.fidelity_lower_bound())),
        Err(QsvError::NoClaim { .. }) => (None, None),
        Err(e) => return Err(e.into()),
    };

    if let Some(path) = &args.curve {
        let curve = statistics::record_inverse_infidelity_curve(&bits, args.delta, lambda2)?;
        let mut csv = String::from("n,m,inv_eps\n");
        let mut accepted = 0u64;
        for ((k, inv), bit) in curve.iter().zip(&bits) {
            accepted += u64::from(*bit);
            csv.push_str(&format!("{k},{accepted},{}\n", inv.map(format_sig9).unwrap_or_default()));
        }
        if path.as_os_str() == "-" {
            let _ = std::io::stdout().lock().write_all(csv.as_bytes());
        } else {
            write_file(path, csv.as_bytes())?;
        }
    }

    let report = AnalyzeReport {
        n,
        m,
        delta: args.delta,
        strategy: kind.name().into(),
        lambda2,
        claim: epsilon.is_some(),
        epsilon,
        fidelity_lower_bound: fidelity,
    };
    if args.json {
        print_json(&report);
    } else if args.curve.as_deref().is_none_or(|p| p.as_os_str() != "-") {
        let verdict = match (epsilon, fidelity) {
            (Some(e), Some(f)) => format!(
                "fidelity >= {} with confidence {} (epsilon {})",
                format_sig9(f),
                format_sig9(1.0 - args.delta),
                format_sig9(e)
            ),
            _ => format!(
                "no claim: accept frequency {} is too low for confidence {}",
                format_sig9(m as f64 / n as f64),
                format_sig9(1.0 - args.delta)
            ),
        };
        print_table(&[
            ("n", n.to_string()),
            ("m", m.to_string()),
            ("delta", format_sig9(args.delta)),
            ("strategy", report.strategy.clone()),
            ("lambda2", format_sig9(lambda2)),
            ("verdict", verdict),
        ]);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_specs() {
        assert_eq!(parse_noise("ideal").unwrap(), NoiseModel::Ideal);
        assert_eq!(parse_noise("depolarizing:0.9").unwrap(), NoiseModel::Depolarizing { visibility: 0.9 });
        assert_eq!(parse_noise("misalignment:-2").unwrap(), NoiseModel::Misalignment { dtheta_deg: -2.0 });
        assert!(parse_noise("depolarizing").is_err());
        assert!(parse_noise("ideal:1").is_err());
        assert!(parse_noise("thermal:0.1").is_err());
    }

    #[test]
    fn lambda2_needs_theta_only_when_it_matters() {
        assert_eq!(lambda2_for(StrategyKind::Global, None).unwrap(), 0.0);
        assert!(lambda2_for(StrategyKind::Lo, None).is_err());
        assert!((lambda2_for(StrategyKind::BiLocc, None).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }
}
