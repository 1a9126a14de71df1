//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the report is always
//! printed: `cargo test -p qsv-core --test acceptance`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use qsv_core::protocol::{
    run_session, validate_transcript, ByteLink, MemoryLink, ViolationKind,
};
use qsv_core::quantum::{expectation, target_state, DensityMatrix, Matrix4};
use qsv_core::simulator::{
    apply_noise, run_experiment, run_trial, trial_rng, FigureProfile, NoiseModel, RoundSampler,
    SamplingMode, TrialConfig, PREFIX_WINDOW,
};
use qsv_core::statistics::{
    all_accept_infidelity, confidence_bound, fit_slope, infidelity_at_confidence,
    inverse_infidelity_curve, as_points,
};
use qsv_core::strategies::{
    lo_optimal_lambda2, uni_locc_spectral_form, Direction, ProjectorName, Strategy, StrategyKind,
};
use qsv_core::QsvError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// `(1 - λ₂)/ln 20`, evaluated at 30 digits.
const SLOPE_LO_60: f64 = 0.137199530621324931;
const SLOPE_UNI_60: f64 = 0.190747543254476602;
const SLOPE_UNI_70: f64 = 0.177272576432411624;
const SLOPE_UNI_80: f64 = 0.169459007504369428;
const SLOPE_BI: f64 = 0.222538800463556035;
/// `(2 + sin120°)/(4 + sin120°)`, 30 digits.
const LO_LAMBDA2_60: f64 = 0.588986938201237855;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let took = start.elapsed();
    o.detail.push_str(&format!(" [{:.2} s", took.as_secs_f64()));
    if let Some(limit) = limit {
        o.detail.push_str(&format!(", limit {} s", limit.as_secs()));
        if took > limit {
            o.pass = false;
            o.detail.push_str(", TOO SLOW");
        }
    }
    o.detail.push(']');
    o
}

fn uni(d: Direction) -> StrategyKind {
    StrategyKind::UniLocc(d)
}

// ---------------------------------------------------------------------------

fn c1_operator_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let theta = 45.0 + 45.0 * rng.gen_range(1e-9..1.0 - 1e-9);
        let built = Strategy::uni_locc(theta, Direction::AliceToBob).unwrap();
        let closed = uni_locc_spectral_form(theta).unwrap();
        worst = worst.max(built.omega().frobenius_distance(&closed));
    }
    outcome(worst < 1e-9, format!("max Frobenius distance {worst:.2e} over 200 angles (tol 1e-9)"))
}

fn c2_figures_of_merit() -> Outcome {
    let t: f64 = 60.0;
    let (s, c) = t.to_radians().sin_cos();
    let lo = Strategy::lo_optimal(t).unwrap();
    let checks = [
        ("LO lambda2", lo.lambda2(), LO_LAMBDA2_60),
        ("LO lambda2 formula", lo_optimal_lambda2(t), LO_LAMBDA2_60),
        ("LO constant", lo.constant_factor().unwrap(), 2.0 + s * c),
        ("Uni constant", Strategy::uni_locc(t, Direction::AliceToBob).unwrap().constant_factor().unwrap(), 1.75),
        ("Uni(B->A) constant", Strategy::uni_locc(t, Direction::BobToAlice).unwrap().constant_factor().unwrap(), 1.75),
        ("Bi constant", Strategy::bi_locc(t).unwrap().constant_factor().unwrap(), 1.5),
        ("Global constant", Strategy::global(t).unwrap().constant_factor().unwrap(), 1.0),
    ];
    let worst = checks.iter().map(|(_, g, w)| (g - w).abs()).fold(0.0, f64::max);
    let failed: Vec<&str> = checks.iter().filter(|(_, g, w)| (g - w).abs() > 1e-9).map(|c| c.0).collect();
    outcome(
        failed.is_empty(),
        format!(
            "LO lambda2 {:.9}, constants LO {:.9} / Uni 1.75 / Bi 1.5 / Global 1, max deviation {worst:.1e} (tol 1e-9){}; printed 0.588989 differs from the formula by {:.1e}",
            lo.lambda2(),
            2.0 + s * c,
            if failed.is_empty() { String::new() } else { format!(", failing: {failed:?}") },
            (lo.lambda2() - 0.588989).abs()
        ),
    )
}

fn c3_ideal_slopes() -> Outcome {
    let delta = 0.05;
    let cases = [
        ("LO", StrategyKind::Lo, 0.135, SLOPE_LO_60),
        ("Uni", uni(Direction::AliceToBob), 0.188, SLOPE_UNI_60),
        ("Bi", StrategyKind::BiLocc, 0.22, SLOPE_BI),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, kind, reported, asymptotic) in cases {
        let s = kind.build(60.0).unwrap();
        let curve = inverse_infidelity_curve(s.lambda2(), delta, PREFIX_WINDOW).unwrap();
        let fit = fit_slope(&as_points(&curve)).unwrap();
        // Simulated noise-free trials must reproduce the same curve.
        let cfg = TrialConfig::standard(60.0, kind, NoiseModel::Ideal, 7);
        let summary = run_experiment(&cfg).unwrap();
        let sim_fit = summary.all_accept_slope.unwrap_or(f64::NAN);
        // Far-field slope of the exact curve against the closed asymptote.
        let far = inverse_infidelity_curve(s.lambda2(), delta, 2_000_000).unwrap();
        let far_slope = fit_slope(&as_points(&far[1_999_000..])).unwrap();
        let ok = (fit - reported).abs() <= 0.005
            && sim_fit == fit
            && summary.all_accept_trials == 50
            && (summary.theory_slope - asymptotic).abs() < 1e-6
            && (far_slope - asymptotic).abs() < 1e-6;
        pass &= ok;
        parts.push(format!("{name} fit {fit:.4} (target {reported}), asymptote {:.7}", summary.theory_slope));
    }
    outcome(pass, parts.join("; "))
}

fn c4_bound_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_rt, mut worst_cf): (f64, f64) = (0.0, 0.0);
    let (mut claims, mut all_accept) = (0, 0);
    for _ in 0..10_000 {
        let n: u64 = rng.gen_range(1..=2000);
        let m: u64 = if rng.gen_bool(0.2) { n } else { rng.gen_range(0..=n) };
        let delta: f64 = rng.gen_range(1e-4..0.5);
        let lambda2: f64 = rng.gen_range(0.0..0.95);
        match infidelity_at_confidence(n, m, delta, lambda2) {
            Ok(eps) => {
                claims += 1;
                let back = confidence_bound(n, m, lambda2, eps).unwrap();
                worst_rt = worst_rt.max((back - delta).abs());
                if m == n {
                    all_accept += 1;
                    worst_cf = worst_cf.max((eps - all_accept_infidelity(n, delta, lambda2)).abs());
                }
            }
            Err(QsvError::NoClaim { .. }) => {
                if m == n {
                    // Only legitimate when the closed form exceeds 1.
                    let cf = all_accept_infidelity(n, delta, lambda2);
                    if cf <= 1.0 - 1e-9 {
                        worst_cf = f64::INFINITY;
                    }
                }
            }
            Err(e) => return outcome(false, format!("unexpected error {e}")),
        }
    }
    outcome(
        worst_rt < 1e-9 && worst_cf < 1e-10,
        format!(
            "{claims} claims: max |delta' - delta| {worst_rt:.1e} (tol 1e-9); {all_accept} all-accept cases: max closed-form deviation {worst_cf:.1e} (tol 1e-10)"
        ),
    )
}

fn random_noisy_state(theta: f64, rng: &mut ChaCha8Rng) -> DensityMatrix {
    let mut g = Matrix4::zero();
    for row in g.0.iter_mut() {
        for x in row.iter_mut() {
            *x = Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        }
    }
    let gg = g * g.adjoint();
    let tr = gg.trace().re;
    let random = DensityMatrix::new(gg.scale(1.0 / tr)).unwrap();
    let v: f64 = rng.gen_range(0.5..1.0);
    target_state(theta).unwrap().density().mix(v, &random)
}

fn accept_count(sampler: &RoundSampler, rounds: u64, rng: &mut ChaCha8Rng) -> u64 {
    (0..rounds).filter(|_| sampler.draw(rng).accept).count() as u64
}

fn c5_sampling_paths() -> Outcome {
    let rounds = 100_000u64;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_z: f64 = 0.0;
    let mut cases = 0;
    for d in [Direction::AliceToBob, Direction::BobToAlice] {
        for _ in 0..20 {
            let theta = rng.gen_range(46.0..89.0);
            let s = Strategy::uni_locc(theta, d).unwrap();
            let sigma = random_noisy_state(theta, &mut rng);
            let p = expectation(s.omega(), &sigma);
            let by_setting = RoundSampler::new(&s, &sigma, SamplingMode::Auto);
            let effective = RoundSampler::new(&s, &sigma, SamplingMode::Effective);
            let a = accept_count(&by_setting, rounds, &mut trial_rng(rng.gen())) as f64 / rounds as f64;
            let b = accept_count(&effective, rounds, &mut trial_rng(rng.gen())) as f64 / rounds as f64;
            let sd = (2.0 * p * (1.0 - p) / rounds as f64).sqrt();
            let z = if sd > 0.0 { (a - b).abs() / sd } else if a == b { 0.0 } else { f64::INFINITY };
            worst_z = worst_z.max(z);
            cases += 1;
        }
    }
    outcome(worst_z < 4.0, format!("{cases} states x 1e5 rounds, Uni A->B and B->A: max |difference| {worst_z:.2} sigma (tol 4)"))
}

fn c6_accept_law() -> Outcome {
    let rounds = 100_000u64;
    let mut worst_z: f64 = 0.0;
    let mut ideal_rejects = 0;
    let mut seed = 600;
    for theta in [60.0, 70.0, 80.0] {
        for kind in [uni(Direction::AliceToBob), StrategyKind::BiLocc] {
            for v in [1.0, 0.95, 0.9] {
                seed += 1;
                let s = kind.build(theta).unwrap();
                let sigma = apply_noise(theta, &NoiseModel::Depolarizing { visibility: v }).unwrap();
                let p = expectation(s.omega(), &sigma);
                let sampler = RoundSampler::new(&s, &sigma, SamplingMode::Auto);
                let k = accept_count(&sampler, rounds, &mut trial_rng(seed));
                if v == 1.0 {
                    ideal_rejects += rounds - k;
                    continue;
                }
                let sd = (p * (1.0 - p) / rounds as f64).sqrt();
                worst_z = worst_z.max((k as f64 / rounds as f64 - p).abs() / sd);
            }
        }
    }
    outcome(
        worst_z < 3.0 && ideal_rejects == 0,
        format!("Uni and Bi at 60/70/80 deg, v in {{1, 0.95, 0.9}}: max deviation {worst_z:.2} sigma (tol 3), rejections at v=1: {ideal_rejects}"),
    )
}

fn c7_figure4_ordering() -> Outcome {
    let profile = FigureProfile::ideal();
    let mut pass = true;
    let mut parts = Vec::new();
    for (theta, uni_slope) in [(70.0, SLOPE_UNI_70), (80.0, SLOPE_UNI_80)] {
        let u = run_experiment(&profile.config(theta, uni(Direction::AliceToBob))).unwrap();
        let b = run_experiment(&profile.config(theta, StrategyKind::BiLocc)).unwrap();
        let ordered = u.per_n.iter().zip(&b.per_n).all(|(pu, pb)| {
            pb.theory_inv_eps > pu.theory_inv_eps && pb.ideal_inv_eps > pu.ideal_inv_eps
        });
        let slopes_ok = (u.theory_slope - uni_slope).abs() < 1e-6 && (b.theory_slope - SLOPE_BI).abs() < 1e-6;
        pass &= ordered && slopes_ok;
        parts.push(format!(
            "{theta} deg: Bi {:.6} > Uni {:.6} at all n: {ordered}",
            b.theory_slope, u.theory_slope
        ));
    }
    parts.push(format!("printed 0.169458 differs from the 80 deg slope by {:.1e}", (SLOPE_UNI_80 - 0.169458).abs()));
    outcome(pass, parts.join("; "))
}

fn c8_protocol() -> Outcome {
    let mut problems = Vec::new();
    let noise = NoiseModel::Depolarizing { visibility: 0.9 };
    let mut total_violations = 0;
    for d in [Direction::AliceToBob, Direction::BobToAlice] {
        let mut cfg = TrialConfig::standard(60.0, uni(d), noise.clone(), 88);
        cfg.measurements_per_trial = 10_000;
        let mem = run_session(&cfg, 0, &mut MemoryLink).unwrap();
        let bytes = run_session(&cfg, 0, &mut ByteLink::new()).unwrap();
        let v = validate_transcript(&mem.transcript, uni(d), 60.0, Some(&mem.record)).unwrap();
        total_violations += v.len();
        if mem.abort.is_some() || mem.record.n() != 10_000 {
            problems.push(format!("{d}: session incomplete"));
        }
        if mem.record != bytes.record {
            problems.push(format!("{d}: memory and byte channels disagree"));
        }
        if mem.record != run_trial(&cfg, 0).unwrap() {
            problems.push(format!("{d}: session differs from simulator trial"));
        }
    }
    if total_violations > 0 {
        problems.push(format!("{total_violations} violations on clean sessions"));
    }

    // Fault fixture 1: follower asks for |H> after Z outcome 1.
    let kind = uni(Direction::AliceToBob);
    let mut cfg = TrialConfig::standard(60.0, kind, noise, 89);
    cfg.measurements_per_trial = 300;
    let s = run_session(&cfg, 0, &mut MemoryLink).unwrap();
    let mut log = s.transcript.clone();
    let round = log
        .chunks(7)
        .position(|r| r.len() == 7 && r[0].payload & 0x7f == 2 && r[2].payload & 1 == 1)
        .expect("a Z round with leader outcome 1");
    let req = &mut log[round * 7 + 4];
    req.payload = (req.payload & 0x80) | u32::from(ProjectorName::H.code());
    let v = validate_transcript(&log, kind, 60.0, Some(&s.record)).unwrap();
    if !(v.len() == 1 && v[0].kind == ViolationKind::ConditionalProjector) {
        problems.push(format!("wrong-projector fixture gave {v:?}"));
    }

    // Fault fixture 2: final round truncated.
    let mut log = s.transcript.clone();
    log.truncate(log.len() - 4);
    let mut record = s.record.clone();
    record.bits.pop();
    record.settings.pop();
    let v = validate_transcript(&log, kind, 60.0, Some(&record)).unwrap();
    if !(v.len() == 1 && v[0].kind == ViolationKind::IncompleteRound) {
        problems.push(format!("truncation fixture gave {v:?}"));
    }

    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            "1e4-round A->B and B->A sessions: 0 violations, memory = bytes = simulator records; both fault fixtures give exactly the expected violation".into()
        } else {
            problems.join("; ")
        },
    )
}

fn c9_noise_bend() -> Outcome {
    let profile = FigureProfile::demo();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, kind) in [
        ("LO", StrategyKind::Lo),
        ("Uni", uni(Direction::AliceToBob)),
        ("Bi", StrategyKind::BiLocc),
    ] {
        let s = run_experiment(&profile.config(60.0, kind)).unwrap();
        let ratio = |n: usize| s.per_n[n - 1].mean_inv_eps.unwrap_or(f64::NAN) / s.per_n[n - 1].ideal_inv_eps;
        let (r50, r200) = (ratio(50), ratio(200));
        // Bends: the shortfall grows with n and is substantial by n = 200.
        let bends = r200 < r50 && r200 < 0.9;
        pass &= bends;
        parts.push(format!(
            "{name} mean/ideal {r50:.2} at n=50, {r200:.2} at n=200 (averaged slope {:.3}, s {:.3})",
            s.averaged_prefix_slope.unwrap_or(f64::NAN),
            s.std_slope.unwrap_or(f64::NAN)
        ));
    }
    outcome(
        pass,
        format!(
            "depolarized demo states (v = 0.97) bend below the ideal lines: {}. Lab values 0.13/0.17/0.187, s = 0.039/0.052/0.049 and the 2.1%/1.3% gaps depend on unpublished state data and are not reproduced",
            parts.join("; ")
        ),
    )
}

fn main() -> ExitCode {
    let secs = |s| Some(Duration::from_secs(s));
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Outcome>)> = vec![
        ("operator identity", Box::new(move || timed(secs(1), c1_operator_identity))),
        ("spectral figures of merit", Box::new(|| timed(None, c2_figures_of_merit))),
        ("ideal-state slopes", Box::new(move || timed(secs(1), c3_ideal_slopes))),
        ("bound consistency", Box::new(move || timed(secs(10), c4_bound_consistency))),
        ("sampling-path equivalence", Box::new(move || timed(secs(30), c5_sampling_paths))),
        ("accept-probability law", Box::new(move || timed(secs(30), c6_accept_law))),
        ("figure-4 ordering", Box::new(|| timed(None, c7_figure4_ordering))),
        ("protocol conformance", Box::new(|| timed(None, c8_protocol))),
        ("noise bend (qualitative substitute)", Box::new(|| timed(None, c9_noise_bend))),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let o = run();
        failures += usize::from(!o.pass);
        println!("[{}] {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {} of 9 criteria passed", 9 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
