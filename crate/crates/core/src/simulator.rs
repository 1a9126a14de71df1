//! Monte Carlo verification runs.
//!
//! # Randomness
//!
//! Every trial owns a `ChaCha8Rng` (rand_chacha 0.3) seeded with
//! `ChaCha8Rng::seed_from_u64(trial_seed(master_seed, trial_index))`, where
//! `trial_seed` is SplitMix64 applied to
//! `master_seed + (trial_index + 1) · 0x9E3779B97F4A7C15` (wrapping). Uniform
//! variates are `rng.gen::<f64>()` (53-bit, in `[0, 1)`). A round consumes
//! them in a fixed order:
//!
//! 1. direction (role-switching protocol sessions only): Alice leads if `u < p_alice`;
//! 2. setting: first index whose cumulative probability exceeds `u`;
//! 3. leader outcome: outcome 1 if `u < tr(Π₁ σ)`;
//! 4. follower: ACCEPT if `u < tr(Π_acc σ_a)` on the conditioned state.
//!
//! Effective-operator rounds consume a single variate: ACCEPT if `u < tr(Ωσ)`.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QsvError, Result};
use crate::quantum::{expectation, target_state, DensityMatrix, Matrix4, PureState, C64};
use crate::statistics::{self, fit_proportional, fit_slope};
use crate::strategies::{pick_index, Direction, MeasurementSetting, Strategy, StrategyKind};

/// Number of leading measurements used for the all-accept slope fits.
pub const PREFIX_WINDOW: u64 = 25;

/// Branches whose probability falls below this are treated as impossible.
const BRANCH_FLOOR: f64 = 1e-15;

// ---------------------------------------------------------------------------
// Noise
// ---------------------------------------------------------------------------

/// Model of the state the source actually emits.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModel {
    #[default]
    Ideal,
    /// `v|Ψ><Ψ| + (1 - v) I/4`
    Depolarizing { visibility: f64 },
    /// HV↔VH coherences scaled by `1 - p`.
    Dephasing { p: f64 },
    /// Emits `|Ψ(θ + dθ)>`.
    Misalignment { dtheta_deg: f64 },
    /// Explicit density matrix, row-major `[re, im]` pairs.
    Custom { rows: Vec<Vec<[f64; 2]>> },
}


fn unit_interval(name: &str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(QsvError::Domain(format!("{name} = {x} must lie in [0, 1]")))
    }
}

/// Density matrix emitted under `model` when the target is `|Ψ(θ)>`.
pub fn apply_noise(theta_deg: f64, model: &NoiseModel) -> Result<DensityMatrix> {
    let ideal = target_state(theta_deg)?.density();
    match model {
        NoiseModel::Ideal => Ok(ideal),
        NoiseModel::Depolarizing { visibility } => {
            unit_interval("visibility", *visibility)?;
            Ok(ideal.mix(*visibility, &DensityMatrix::maximally_mixed()))
        }
        NoiseModel::Dephasing { p } => {
            unit_interval("dephasing p", *p)?;
            let mut m = *ideal.matrix();
            m.0[1][2] *= 1.0 - p;
            m.0[2][1] *= 1.0 - p;
            DensityMatrix::new(m)
        }
        NoiseModel::Misalignment { dtheta_deg } => {
            // The rotated vector is a valid state for any angle, so no range check.
            if !dtheta_deg.is_finite() {
                return Err(QsvError::Domain(format!("dtheta = {dtheta_deg} must be finite")));
            }
            let (s, c) = (theta_deg + dtheta_deg).to_radians().sin_cos();
            let z = C64::new(0.0, 0.0);
            Ok(PureState::new([z, C64::new(c, 0.0), C64::new(-s, 0.0), z])?.density())
        }
        NoiseModel::Custom { rows } => {
            if rows.len() != 4 || rows.iter().any(|r| r.len() != 4) {
                return Err(QsvError::InvalidDensity("custom matrix must be 4×4".into()));
            }
            let mut m = Matrix4::zero();
            for (i, row) in rows.iter().enumerate() {
                for (j, [re, im]) in row.iter().enumerate() {
                    m.0[i][j] = C64::new(*re, *im);
                }
            }
            DensityMatrix::new(m)
        }
    }
}

// ---------------------------------------------------------------------------
// Seeding
// ---------------------------------------------------------------------------

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `index` under `master_seed`.
pub fn trial_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(master_seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

pub fn trial_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Rounds
// ---------------------------------------------------------------------------

/// How a round's accept bit is drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Sequential setting → leader → follower sampling when the strategy has
    /// explicit settings, Bernoulli(tr(Ωσ)) otherwise.
    #[default]
    Auto,
    /// Always Bernoulli(tr(Ωσ)).
    Effective,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoundOutcome {
    pub accept: bool,
    pub setting: Option<u8>,
    pub leader_outcome: Option<u8>,
}

/// Leader measurement on `sigma`: returns the outcome bit and the
/// conditioned state.
pub(crate) fn leader_branch(
    setting: &MeasurementSetting,
    sigma: &DensityMatrix,
    u: f64,
) -> (u8, DensityMatrix) {
    let one = sigma.condition(&setting.leader_operator(1));
    let zero = sigma.condition(&setting.leader_operator(0));
    let p1 = one.as_ref().map_or(0.0, |b| b.1);
    let mut outcome = u8::from(u < p1);
    // Guard against landing on a numerically-empty branch.
    let prob = |o: u8| if o == 1 { p1 } else { zero.as_ref().map_or(0.0, |b| b.1) };
    if prob(outcome) <= BRANCH_FLOOR {
        outcome ^= 1;
    }
    let state = match (outcome, one, zero) {
        (1, Some((s, _)), _) | (0, _, Some((s, _))) => s,
        // Both branches empty cannot happen for a trace-one state.
        _ => *sigma,
    };
    (outcome, state)
}

/// Probability that the follower's accept projector passes on `conditioned`.
pub(crate) fn follower_accept_probability(
    setting: &MeasurementSetting,
    leader_outcome: u8,
    conditioned: &DensityMatrix,
) -> f64 {
    setting
        .follower_operator(leader_outcome)
        .trace_product(conditioned.matrix())
        .re
}

/// Precomputed per-round law for one strategy acting on one state.
#[derive(Clone, Debug)]
pub enum RoundSampler {
    Effective {
        accept: f64,
    },
    Settings {
        probabilities: Vec<f64>,
        /// Per setting: `tr(Π₁σ)`.
        leader_one: Vec<f64>,
        /// Per setting and leader outcome: follower pass probability.
        follower: Vec<[f64; 2]>,
        /// Per setting: probability of each leader outcome, for the guard.
        leader_probs: Vec<[f64; 2]>,
    },
}

impl RoundSampler {
    pub fn new(strategy: &Strategy, sigma: &DensityMatrix, mode: SamplingMode) -> Self {
        if mode == SamplingMode::Effective || !strategy.has_settings() {
            return RoundSampler::Effective {
                accept: expectation(strategy.omega(), sigma),
            };
        }
        let settings = strategy.settings();
        let mut leader_one = Vec::with_capacity(settings.len());
        let mut follower = Vec::with_capacity(settings.len());
        let mut leader_probs = Vec::with_capacity(settings.len());
        for s in settings {
            let mut probs = [0.0; 2];
            let mut pass = [0.0; 2];
            for a in 0..2u8 {
                if let Some((cond, p)) = sigma.condition(&s.leader_operator(a)) {
                    probs[a as usize] = p;
                    pass[a as usize] = follower_accept_probability(s, a, &cond);
                }
            }
            leader_one.push(probs[1]);
            follower.push(pass);
            leader_probs.push(probs);
        }
        RoundSampler::Settings {
            probabilities: settings.iter().map(|s| s.probability).collect(),
            leader_one,
            follower,
            leader_probs,
        }
    }

    /// Marginal accept probability of one round.
    pub fn accept_probability(&self) -> f64 {
        match self {
            RoundSampler::Effective { accept } => *accept,
            RoundSampler::Settings { probabilities, follower, leader_probs, .. } => probabilities
                .iter()
                .zip(follower.iter().zip(leader_probs))
                .map(|(p, (f, l))| p * (l[0] * f[0] + l[1] * f[1]))
                .sum(),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> RoundOutcome {
        match self {
            RoundSampler::Effective { accept } => RoundOutcome {
                accept: rng.gen::<f64>() < *accept,
                setting: None,
                leader_outcome: None,
            },
            RoundSampler::Settings { probabilities, leader_one, follower, leader_probs } => {
                let l = pick_index(probabilities.iter().copied(), rng.gen::<f64>());
                let mut a = u8::from(rng.gen::<f64>() < leader_one[l]);
                if leader_probs[l][a as usize] <= BRANCH_FLOOR {
                    a ^= 1;
                }
                let accept = rng.gen::<f64>() < follower[l][a as usize];
                RoundOutcome {
                    accept,
                    setting: Some(l as u8),
                    leader_outcome: Some(a),
                }
            }
        }
    }
}

/// One verification round on `sigma`.
pub fn run_round<R: Rng + ?Sized>(
    strategy: &Strategy,
    sigma: &DensityMatrix,
    mode: SamplingMode,
    rng: &mut R,
) -> RoundOutcome {
    RoundSampler::new(strategy, sigma, mode).draw(rng)
}

// ---------------------------------------------------------------------------
// Trials
// ---------------------------------------------------------------------------

/// Parameters of a batch of verification trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialConfig {
    pub theta_deg: f64,
    #[serde(with = "kind_name")]
    pub strategy: StrategyKind,
    #[serde(default)]
    pub noise: NoiseModel,
    pub measurements_per_trial: u64,
    pub trials: u64,
    pub delta: f64,
    pub master_seed: u64,
    #[serde(default)]
    pub sampling: SamplingMode,
}

impl TrialConfig {
    /// 50 trials of 200 measurements at δ = 0.05.
    pub fn standard(theta_deg: f64, strategy: StrategyKind, noise: NoiseModel, master_seed: u64) -> Self {
        TrialConfig {
            theta_deg,
            strategy,
            noise,
            measurements_per_trial: 200,
            trials: 50,
            delta: 0.05,
            master_seed,
            sampling: SamplingMode::Auto,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.measurements_per_trial == 0 || self.trials == 0 {
            return Err(QsvError::Domain("trial and measurement counts must be at least 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(QsvError::Domain(format!("delta = {} must lie in (0, 1)", self.delta)));
        }
        Ok(())
    }
}

/// Serialises a [`StrategyKind`] by its short name (`lo`, `uni`, `uni_ba`, `bi`, `global`).
pub mod kind_name {
    use crate::strategies::StrategyKind;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(k: &StrategyKind, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(k.name())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<StrategyKind, D::Error> {
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }
}

/// Accept/reject sequence of one trial.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_index: u64,
    pub seed: u64,
    #[serde(with = "bitstring")]
    pub bits: Vec<bool>,
    /// Setting index per round; empty for effective-operator sampling.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub settings: Vec<u8>,
    /// Leading party per round; only filled by role-switching sessions.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub directions: Vec<Direction>,
}

impl TrialRecord {
    pub fn n(&self) -> u64 {
        self.bits.len() as u64
    }

    pub fn accepts(&self) -> u64 {
        self.bits.iter().filter(|b| **b).count() as u64
    }
}

/// Serialises `Vec<bool>` as a string of `0`/`1`.
pub mod bitstring {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn to_string(bits: &[bool]) -> String {
        bits.iter().map(|b| if *b { '1' } else { '0' }).collect()
    }

    pub fn parse(s: &str) -> Result<Vec<bool>, String> {
        s.chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                other => Err(format!("invalid bit character '{other}'")),
            })
            .collect()
    }

    pub fn serialize<S: Serializer>(bits: &[bool], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&to_string(bits))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<bool>, D::Error> {
        let s = String::deserialize(d)?;
        parse(&s).map_err(D::Error::custom)
    }
}

/// Runs trial `index` of `config`.
pub fn run_trial(config: &TrialConfig, index: u64) -> Result<TrialRecord> {
    config.validate()?;
    let strategy = config.strategy.build(config.theta_deg)?;
    let sigma = apply_noise(config.theta_deg, &config.noise)?;
    let sampler = RoundSampler::new(&strategy, &sigma, config.sampling);
    Ok(trial_with_sampler(&sampler, config, index))
}

fn trial_with_sampler(sampler: &RoundSampler, config: &TrialConfig, index: u64) -> TrialRecord {
    let seed = trial_seed(config.master_seed, index);
    let mut rng = trial_rng(seed);
    let n = config.measurements_per_trial as usize;
    let mut bits = Vec::with_capacity(n);
    let mut settings = Vec::new();
    for _ in 0..n {
        let out = sampler.draw(&mut rng);
        bits.push(out.accept);
        if let Some(l) = out.setting {
            settings.push(l);
        }
    }
    TrialRecord {
        trial_index: index,
        seed,
        bits,
        settings,
        directions: Vec::new(),
    }
}

/// All trials of `config`, in trial-index order. Trials run in parallel.
pub fn run_trials(config: &TrialConfig) -> Result<Vec<TrialRecord>> {
    config.validate()?;
    let strategy = config.strategy.build(config.theta_deg)?;
    let sigma = apply_noise(config.theta_deg, &config.noise)?;
    let sampler = RoundSampler::new(&strategy, &sigma, config.sampling);
    Ok((0..config.trials)
        .into_par_iter()
        .map(|i| trial_with_sampler(&sampler, config, i))
        .collect())
}

// ---------------------------------------------------------------------------
// Summaries
// ---------------------------------------------------------------------------

/// Cross-trial statistics of `1/ε` at one prefix length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefixStats {
    pub n: u64,
    /// Mean over trials with a valid verdict at this `n`.
    pub mean_inv_eps: Option<f64>,
    pub std_inv_eps: Option<f64>,
    pub valid_trials: u64,
    /// Asymptotic ideal line `n (1 - λ₂) / ln(1/δ)`.
    pub theory_inv_eps: f64,
    /// Exact ideal all-accept value `(1 - λ₂) / (1 - δ^{1/n})`.
    pub ideal_inv_eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: String,
    pub theta_deg: f64,
    pub lambda2: f64,
    pub delta: f64,
    pub trials: u64,
    pub measurements_per_trial: u64,
    pub per_n: Vec<PrefixStats>,
    /// Slope `s` of the `std = s·n` fit.
    pub std_slope: Option<f64>,
    /// Trials whose first `PREFIX_WINDOW` rounds all accepted.
    pub all_accept_trials: u64,
    /// Slope of the all-accept single-trial curves over the first window.
    pub all_accept_slope: Option<f64>,
    /// Slope of the averaged curve (all trials) over the first window.
    pub averaged_prefix_slope: Option<f64>,
    /// `(1 - λ₂) / ln(1/δ)`.
    pub theory_slope: f64,
    pub accept_frequency: f64,
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    };
    (Some(mean), Some(std))
}

/// Aggregates trial records into per-prefix statistics and slope fits.
pub fn summarize(config: &TrialConfig, strategy: &Strategy, records: &[TrialRecord]) -> Result<RunSummary> {
    let lambda2 = strategy.lambda2();
    let delta = config.delta;
    let n_max = config.measurements_per_trial;
    let curves = records
        .par_iter()
        .map(|r| statistics::record_inverse_infidelity_curve(&r.bits, delta, lambda2))
        .collect::<Result<Vec<_>>>()?;

    let theory_slope = (1.0 - lambda2) / (1.0 / delta).ln();
    let per_n: Vec<PrefixStats> = (0..n_max as usize)
        .map(|i| {
            let n = i as u64 + 1;
            let values: Vec<f64> = curves.iter().filter_map(|c| c[i].1).collect();
            let (mean, std) = mean_std(&values);
            PrefixStats {
                n,
                mean_inv_eps: mean,
                std_inv_eps: std,
                valid_trials: values.len() as u64,
                theory_inv_eps: theory_slope * n as f64,
                ideal_inv_eps: 1.0 / statistics::all_accept_infidelity(n, delta, lambda2),
            }
        })
        .collect();

    let std_points: Vec<(f64, f64)> = per_n
        .iter()
        .filter_map(|p| p.std_inv_eps.map(|s| (p.n as f64, s)))
        .collect();
    let std_slope = fit_proportional(&std_points).ok();

    let window = PREFIX_WINDOW.min(n_max) as usize;
    let all_accept_trials = records
        .iter()
        .filter(|r| r.bits[..window].iter().all(|b| *b))
        .count() as u64;
    let all_accept_slope = if all_accept_trials > 0 {
        let pts: Vec<(f64, f64)> = per_n[..window]
            .iter()
            .map(|p| (p.n as f64, p.ideal_inv_eps))
            .collect();
        fit_slope(&pts).ok()
    } else {
        None
    };
    let averaged: Vec<(f64, f64)> = per_n[..window]
        .iter()
        .filter_map(|p| p.mean_inv_eps.map(|m| (p.n as f64, m)))
        .collect();
    let averaged_prefix_slope = fit_slope(&averaged).ok();

    let total: u64 = records.iter().map(|r| r.n()).sum();
    let accepted: u64 = records.iter().map(|r| r.accepts()).sum();

    Ok(RunSummary {
        strategy: strategy.kind().name().to_string(),
        theta_deg: config.theta_deg,
        lambda2,
        delta,
        trials: records.len() as u64,
        measurements_per_trial: n_max,
        per_n,
        std_slope,
        all_accept_trials,
        all_accept_slope,
        averaged_prefix_slope,
        theory_slope,
        accept_frequency: accepted as f64 / total as f64,
    })
}

/// Runs every trial of `config` and aggregates them.
pub fn run_experiment(config: &TrialConfig) -> Result<RunSummary> {
    let strategy = config.strategy.build(config.theta_deg)?;
    let records = run_trials(config)?;
    summarize(config, &strategy, &records)
}

// ---------------------------------------------------------------------------
// Figure reproduction
// ---------------------------------------------------------------------------

/// Shared parameters of the figure runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FigureProfile {
    pub noise: NoiseModel,
    pub trials: u64,
    pub measurements_per_trial: u64,
    pub delta: f64,
    pub master_seed: u64,
}

impl FigureProfile {
    /// Noise-free states: every trial accepts every round.
    pub fn ideal() -> Self {
        FigureProfile {
            noise: NoiseModel::Ideal,
            ..Self::demo()
        }
    }

    /// Depolarized states (`v = 0.97`) whose averaged curves visibly
    /// saturate within 200 measurements.
    pub fn demo() -> Self {
        FigureProfile {
            noise: NoiseModel::Depolarizing { visibility: 0.97 },
            trials: 50,
            measurements_per_trial: 200,
            delta: 0.05,
            master_seed: 2020,
        }
    }

    pub fn config(&self, theta_deg: f64, strategy: StrategyKind) -> TrialConfig {
        TrialConfig {
            theta_deg,
            strategy,
            noise: self.noise.clone(),
            measurements_per_trial: self.measurements_per_trial,
            trials: self.trials,
            delta: self.delta,
            master_seed: self.master_seed,
            sampling: SamplingMode::Auto,
        }
    }
}

/// Formats `x` with 9 significant digits in positional notation.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_nan() { String::new() } else { format!("{x}") };
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // Rounding can carry into a new digit (9.99999999995 → 10.00000000).
    let digits = s.chars().filter(|c| c.is_ascii_digit()).count();
    let leading_zeros = s
        .trim_start_matches('-')
        .chars()
        .take_while(|c| *c == '0' || *c == '.')
        .filter(|c| *c == '0')
        .count();
    if digits - leading_zeros > 9 && decimals > 0 {
        format!("{x:.prec$}", prec = decimals - 1)
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(format_sig9).unwrap_or_default()
}

pub const CSV_HEADER: &str = "strategy,n,mean_inv_eps,std_inv_eps,theory_inv_eps";

/// Writes per-n rows `strategy,n,mean,std,theory` for each summary.
pub fn write_curve_csv<W: Write>(out: &mut W, summaries: &[RunSummary], n_limit: Option<u64>) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for s in summaries {
        for p in s.per_n.iter().take(n_limit.unwrap_or(u64::MAX) as usize) {
            writeln!(
                out,
                "{},{},{},{},{}",
                s.strategy,
                p.n,
                opt(p.mean_inv_eps),
                opt(p.std_inv_eps),
                format_sig9(p.theory_inv_eps)
            )?;
        }
    }
    Ok(())
}

/// Like [`write_curve_csv`] over the first window, with an extra column for
/// the all-accept single-trial curve (empty when no trial qualifies).
fn write_prefix_csv<W: Write>(out: &mut W, summaries: &[RunSummary]) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER},all_accept_inv_eps")?;
    for s in summaries {
        let window = PREFIX_WINDOW.min(s.measurements_per_trial) as usize;
        for p in &s.per_n[..window] {
            let all_accept = (s.all_accept_trials > 0).then_some(p.ideal_inv_eps);
            writeln!(
                out,
                "{},{},{},{},{},{}",
                s.strategy,
                p.n,
                opt(p.mean_inv_eps),
                opt(p.std_inv_eps),
                format_sig9(p.theory_inv_eps),
                opt(all_accept)
            )?;
        }
    }
    Ok(())
}

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> Result<PathBuf> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf).map_err(|e| QsvError::Io(format!("{}: {e}", path.display())))?;
    Ok(path.to_path_buf())
}

fn run_all(profile: &FigureProfile, theta_deg: f64, kinds: &[StrategyKind]) -> Result<Vec<RunSummary>> {
    kinds
        .iter()
        .map(|k| run_experiment(&profile.config(theta_deg, *k)))
        .collect()
}

/// Figure 3 runs at θ = 60°: LO, Uni and Bi. Writes `fig3a.csv` (all `n`)
/// and `fig3b.csv` (first window).
pub fn reproduce_fig3(dir: &Path, profile: &FigureProfile) -> Result<(Vec<RunSummary>, Vec<PathBuf>)> {
    let kinds = [
        StrategyKind::Lo,
        StrategyKind::UniLocc(Direction::AliceToBob),
        StrategyKind::BiLocc,
    ];
    let summaries = run_all(profile, 60.0, &kinds)?;
    let a = write_file(&dir.join("fig3a.csv"), |w| write_curve_csv(w, &summaries, None))?;
    let b = write_file(&dir.join("fig3b.csv"), |w| write_prefix_csv(w, &summaries))?;
    Ok((summaries, vec![a, b]))
}

/// Figure 4 runs: Uni and Bi at θ = 70° (`fig4a.csv`) and 80° (`fig4b.csv`).
pub fn reproduce_fig4(dir: &Path, profile: &FigureProfile) -> Result<(Vec<RunSummary>, Vec<PathBuf>)> {
    let kinds = [StrategyKind::UniLocc(Direction::AliceToBob), StrategyKind::BiLocc];
    let mut all = Vec::new();
    let mut paths = Vec::new();
    for (theta, name) in [(70.0, "fig4a.csv"), (80.0, "fig4b.csv")] {
        let summaries = run_all(profile, theta, &kinds)?;
        paths.push(write_file(&dir.join(name), |w| write_curve_csv(w, &summaries, None))?);
        all.extend(summaries);
    }
    Ok((all, paths))
}
