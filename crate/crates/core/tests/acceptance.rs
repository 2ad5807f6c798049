//! Acceptance criteria A1–A10. Runs as a plain binary (`harness = false`)
//! so every criterion prints one PASS/FAIL line; exits non-zero if any
//! criterion fails.
//!
//! The golden IPPO metrics used by A10 come from a build without the
//! expert branch:
//! `LEED_REGEN_GOLDEN=1 cargo test -p leed --no-default-features --test acceptance`

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use leed::demo::ProviderKind;
use leed::env::{AgentSpec, RoadEnv};
use leed::graph::{load_graph, RoadGraph};
use leed::harness::{self, LlmSource};
use leed::nn::MlpParams;
use leed::ppo;
use leed::trainer::{oracle_return, Mode, TrainConfig, Trainer};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn grid5() -> Arc<RoadGraph> {
    let text = std::fs::read_to_string(fixtures().join("grid5.json")).unwrap();
    Arc::new(load_graph(&text).unwrap())
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

// ---------------------------------------------------------------- A1

fn euclid(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Cheapest of every monotone warping path from (i, j) to the end.
fn all_warping_paths(a: &[(f64, f64)], b: &[(f64, f64)], i: usize, j: usize) -> f64 {
    let here = euclid(a[i], b[j]);
    let (last_i, last_j) = (i + 1 == a.len(), j + 1 == b.len());
    if last_i && last_j {
        return here;
    }
    let mut best = f64::INFINITY;
    if !last_i {
        best = best.min(all_warping_paths(a, b, i + 1, j));
    }
    if !last_j {
        best = best.min(all_warping_paths(a, b, i, j + 1));
    }
    if !last_i && !last_j {
        best = best.min(all_warping_paths(a, b, i + 1, j + 1));
    }
    here + best
}

fn a1() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let mut seq = || -> Vec<(f64, f64)> {
            let len = rng.gen_range(1..=8);
            (0..len)
                .map(|_| (rng.gen_range(0..=8) as f64, rng.gen_range(0..=8) as f64))
                .collect()
        };
        let (a, b) = (seq(), seq());
        let got = leed::dtw::dtw_distance(&a, &b).unwrap();
        worst = worst.max((got - all_warping_paths(&a, &b, 0, 0)).abs());
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(worst < 1e-9 && secs < 10.0, format!("max |error| {worst:.1e}, {secs:.2}s"))
}

// ---------------------------------------------------------------- A2

fn random_coords(net: &MlpParams, count: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, bool, usize)> {
    (0..count)
        .map(|_| {
            let layer = rng.gen_range(0..net.layers.len());
            let bias = rng.gen_bool(0.2);
            let len = if bias { net.layers[layer].bias.len() } else { net.layers[layer].weights.len() };
            (layer, bias, rng.gen_range(0..len))
        })
        .collect()
}

fn nudge(net: &MlpParams, (layer, bias, i): (usize, bool, usize), h: f64) -> MlpParams {
    let mut p = net.clone();
    if bias {
        p.layers[layer].bias[i] += h;
    } else {
        p.layers[layer].weights[i] += h;
    }
    p
}

fn pick(grads: &MlpParams, (layer, bias, i): (usize, bool, usize)) -> f64 {
    if bias {
        grads.layers[layer].bias[i]
    } else {
        grads.layers[layer].weights[i]
    }
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn a2() -> Outcome {
    let started = Instant::now();
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let in_dim = rng.gen_range(3..12);
        let out_dim = rng.gen_range(2..6);
        let x: Vec<f64> = (0..in_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();

        // policy: d · log π + c · H over a random mask
        let policy = MlpParams::init_random(in_dim, out_dim, &mut rng);
        let mut mask: Vec<bool> = (0..out_dim).map(|_| rng.gen_bool(0.7)).collect();
        mask[rng.gen_range(0..out_dim)] = true;
        let d: Vec<f64> = (0..out_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c: f64 = rng.gen_range(-1.0..1.0);
        let loss = |p: &MlpParams| -> f64 {
            let out = leed::nn::PolicyOutput::from_logits(&p.forward(&x).unwrap(), &mask).unwrap();
            let lp: f64 = (0..out_dim).filter(|&j| mask[j]).map(|j| d[j] * out.log_probs[j]).sum();
            lp + c * out.entropy
        };
        let out = leed::nn::PolicyOutput::from_logits(&policy.forward(&x).unwrap(), &mask).unwrap();
        let upstream = out.logit_grad(&mask, &d, c);
        let grads = policy.backward(&[(&x, &upstream)]).unwrap();
        for coord in random_coords(&policy, 60, &mut rng) {
            let numeric = (loss(&nudge(&policy, coord, h)) - loss(&nudge(&policy, coord, -h))) / (2.0 * h);
            worst = worst.max(rel_error(pick(&grads, coord), numeric));
        }

        // value: d · V
        let value = MlpParams::init_random(in_dim, 1, &mut rng);
        let dv: f64 = rng.gen_range(-1.0..1.0);
        let vloss = |p: &MlpParams| p.forward(&x).unwrap()[0] * dv;
        let grads = value.backward(&[(&x, &[dv])]).unwrap();
        for coord in random_coords(&value, 60, &mut rng) {
            let numeric = (vloss(&nudge(&value, coord, h)) - vloss(&nudge(&value, coord, -h))) / (2.0 * h);
            worst = worst.max(rel_error(pick(&grads, coord), numeric));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(worst < 1e-4 && secs < 30.0, format!("max relative error {worst:.1e}, {secs:.2}s"))
}

// ---------------------------------------------------------------- A3

fn a3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let len = rng.gen_range(1..=20);
        let gamma = [0.0, 0.5, 0.9, 0.99][rng.gen_range(0..4)];
        let rewards: Vec<f64> = (0..len).map(|_| rng.gen_range(-2.0..12.0)).collect();
        let values: Vec<f64> = (0..len).map(|_| rng.gen_range(-5.0..20.0)).collect();
        // arrival means no bootstrap; otherwise bootstrap from V(s_T)
        let tail = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(-5.0..20.0) };
        let returns = ppo::bootstrapped_returns(&rewards, tail, gamma);
        let adv = ppo::advantages(&returns, &values).unwrap();
        for t in 0..len {
            let mut g = 0.0;
            for (j, r) in rewards.iter().enumerate().skip(t) {
                g += gamma.powi((j - t) as i32) * r;
            }
            g += gamma.powi((len - t) as i32) * tail;
            worst = worst.max((returns[t] - g).abs()).max((adv[t] - (g - values[t])).abs());
        }
    }
    outcome(worst < 1e-9, format!("max |error| {worst:.1e}"))
}

// ---------------------------------------------------------------- A4

fn a4() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for (k, total) in [(1, 1), (1, 500), (250, 500), (500, 500)] {
        if ppo::alpha_weight(k, total, 0.0).unwrap() != 1.0 {
            ok = false;
            notes.push(format!("α({k},{total},0) != 1"));
        }
    }
    // 100 epochs × 10 distances
    let total = 100;
    let dists: Vec<f64> = (0..10).map(|i| i as f64 * 5.0).collect();
    let grid: Vec<Vec<f64>> = (1..=total)
        .map(|k| dists.iter().map(|&d| ppo::alpha_weight(k, total, d).unwrap()).collect())
        .collect();
    let in_range = grid.iter().flatten().all(|&a| a > 0.0 && a <= 1.0);
    let dec_in_d = grid.iter().all(|row| row.windows(2).all(|w| w[1] < w[0]));
    let dec_in_k = (1..dists.len()).all(|j| grid.windows(2).all(|w| w[1][j] < w[0][j]));
    let spot = ppo::alpha_weight(1, 100, 189.91).unwrap();
    let spot_ok = (spot - 0.1497).abs() <= 1e-4;
    ok &= in_range && dec_in_d && dec_in_k && spot_ok;
    notes.push(format!(
        "range {in_range}, decreasing in D {dec_in_d}, in k {dec_in_k}, α(0.01, 189.91) = {spot:.5}"
    ));
    outcome(ok, notes.join("; "))
}

// ---------------------------------------------------------------- A5

fn a5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(1..50);
        let logp: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..0.0)).collect();
        let adv: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let s = ppo::clipped_surrogate(&logp, &logp, &adv, 0.2).unwrap();
        let mean = adv.iter().sum::<f64>() / n as f64;
        worst = worst.max((s.objective - mean).abs());
    }
    let up = ppo::clipped_surrogate(&[1.5f64.ln()], &[0.0], &[1.0], 0.2).unwrap().objective;
    let down = ppo::clipped_surrogate(&[0.5f64.ln()], &[0.0], &[-1.0], 0.2).unwrap().objective;
    outcome(
        worst <= 1e-12 && up == 1.2 && down == -0.8,
        format!("identity error {worst:.1e}; (1.5, +1) -> {up}; (0.5, -1) -> {down}"),
    )
}

// ---------------------------------------------------------------- A6 / A7

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const EPOCHS: usize = 300;
const WINDOW: usize = 10;

fn probe_agents() -> Vec<AgentSpec> {
    vec![
        AgentSpec { agent_id: 0, start: 0, dest: 24, depart_time: 0 },
        AgentSpec { agent_id: 1, start: 4, dest: 20, depart_time: 0 },
        AgentSpec { agent_id: 2, start: 24, dest: 0, depart_time: 0 },
    ]
}

fn probe_config(mode: Mode, seed: u64) -> TrainConfig {
    TrainConfig {
        agents: Some(probe_agents()),
        epochs: EPOCHS,
        mode,
        provider: if mode == Mode::Ippo { ProviderKind::None } else { ProviderKind::Oracle },
        seed,
        wall_clock: false,
        ..Default::default()
    }
}

/// Per-epoch mean agent reward; stops early once `stop` says so.
fn learning_curve(mode: Mode, seed: u64, stop: impl Fn(&[f64]) -> bool) -> Vec<f64> {
    let config = probe_config(mode, seed);
    let provider = harness::build_provider(&config, &LlmSource::Endpoint).unwrap();
    let mut trainer = Trainer::new(config, grid5(), provider).unwrap();
    let mut curve = Vec::with_capacity(EPOCHS);
    for _ in 0..EPOCHS {
        curve.push(trainer.run_epoch().unwrap().mean_reward_a);
        if stop(&curve) {
            break;
        }
    }
    curve
}

/// First epoch (1-based) whose trailing mean over the last `WINDOW`
/// epochs (fewer at the start) reaches `target`.
fn reach(curve: &[f64], target: f64) -> Option<usize> {
    (0..curve.len()).find_map(|k| {
        let lo = (k + 1).saturating_sub(WINDOW);
        let w = &curve[lo..=k];
        (w.iter().sum::<f64>() / w.len() as f64 >= target).then_some(k + 1)
    })
}

/// Median with unreached runs counted as never reaching.
fn median_reach(xs: &[Option<usize>]) -> Option<f64> {
    let mut v: Vec<f64> = xs.iter().map(|x| x.map_or(f64::INFINITY, |e| e as f64)).collect();
    v.sort_by(f64::total_cmp);
    let m = v[v.len() / 2];
    m.is_finite().then_some(m)
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn final_mean(curve: &[f64]) -> f64 {
    let tail = &curve[curve.len().saturating_sub(100)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

struct Probe {
    target: f64,
    ippo: Vec<Option<usize>>,
    leed_curves: Vec<Vec<f64>>,
}

fn run_probe() -> Probe {
    let mut env = RoadEnv::new(grid5(), probe_agents(), Default::default(), 200).unwrap();
    let target = 0.8 * oracle_return(&mut env).unwrap();
    let ippo = SEEDS
        .iter()
        .map(|&s| reach(&learning_curve(Mode::Ippo, s, |c| reach(c, target).is_some()), target))
        .collect();
    let leed_curves = SEEDS.iter().map(|&s| learning_curve(Mode::Leed, s, |_| false)).collect();
    Probe { target, ippo, leed_curves }
}

fn a6(p: &Probe) -> (Outcome, Outcome) {
    let reached = p.ippo.iter().filter(|r| r.is_some()).count();
    let i = outcome(reached >= 3, format!("R* = {:.2}; IPPO reach epochs {:?}", p.target, p.ippo));
    let leed: Vec<Option<usize>> = p.leed_curves.iter().map(|c| reach(c, p.target)).collect();
    let (mi, ml) = (median_reach(&p.ippo), median_reach(&leed));
    let pass = matches!((mi, ml), (Some(a), Some(b)) if b <= 0.7 * a);
    let ii = outcome(
        pass,
        format!(
            "LEED reach epochs {leed:?}; median LEED {} vs 0.7 × median IPPO {}",
            ml.map_or("never".into(), |m| format!("{m:.1}")),
            mi.map_or("never".into(), |m| format!("{:.2}", 0.7 * m))
        ),
    );
    (i, ii)
}

fn a7(p: &Probe) -> Outcome {
    let leed: Vec<f64> = p.leed_curves.iter().map(|c| final_mean(c)).collect();
    let fixed = |alpha: f64| -> Vec<f64> {
        SEEDS
            .iter()
            .map(|&s| final_mean(&learning_curve(Mode::FixedAlpha(alpha), s, |_| false)))
            .collect()
    };
    let (f2, f5) = (fixed(0.2), fixed(0.5));
    let (ml, m2, m5) = (median(&leed), median(&f2), median(&f5));
    outcome(
        ml >= m2 && ml >= m5,
        format!("median final-100 reward: LEED {ml:.3}, fixed 0.2 {m2:.3}, fixed 0.5 {m5:.3}"),
    )
}

// ---------------------------------------------------------------- A8

fn a8() -> Outcome {
    let g = grid5();
    let specs = vec![
        AgentSpec { agent_id: 0, start: 0, dest: 24, depart_time: 0 },
        AgentSpec { agent_id: 1, start: 4, dest: 20, depart_time: 0 },
        AgentSpec { agent_id: 2, start: 24, dest: 0, depart_time: 0 },
        AgentSpec { agent_id: 3, start: 20, dest: 4, depart_time: 0 },
    ];
    let crafted = r#"{"0": [0, 1, 2, 3, 4, 9, 14, 19, 24], "1": [4, 3, 2, 1, 0, 5, 10, 15, 20],
        "2": [24, 19, 14, 9, 4, 3, 2, 1, 0], "3": [20, 4]}"#;
    let (set, _) = leed::demo::parse_lenient(crafted, 4, &g);
    let valid: Vec<bool> = specs
        .iter()
        .zip(&set.sequences)
        .map(|(s, seq)| leed::demo::validate_route(&g, s, &seq.waypoints()))
        .collect();
    let crafted_rate = leed::demo::validity_rate(&valid);

    let mut env = RoadEnv::new(g.clone(), specs.clone(), Default::default(), 200).unwrap();
    let oracle = leed::demo::oracle_expert(&g, &specs).unwrap();
    let exec = leed::demo::execute_demos(
        &mut env,
        &oracle,
        leed::demo::InvalidRouteFallback::SkipAgent,
        0,
        |_, _, _| 0.0,
    )
    .unwrap();
    let oracle_rate = leed::demo::validity_rate(&exec.valid);

    let mut config = harness::load_config(&fixtures().join("configs/grid5_llm_mock.json")).unwrap();
    config.graph = Some(fixtures().join("grid5.json"));
    let llm = LlmSource::Scripted(fixtures().join("mock_improving"));
    let records = harness::demo_report(&config, &g, 3, 10, &llm, None).unwrap();
    let validity: Vec<f64> = records.iter().map(|r| r.validity_rate).collect();
    let dtw: Vec<f64> = records.iter().map(|r| r.mean_dtw).collect();
    let trend = validity.windows(2).all(|w| w[1] >= w[0]) && dtw.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        crafted_rate == 75.0 && oracle_rate == 100.0 && trend,
        format!("crafted {crafted_rate}, oracle {oracle_rate}, phases validity {validity:?} dtw {dtw:.2?}"),
    )
}

// ---------------------------------------------------------------- A9

fn a9() -> Outcome {
    let base = TrainConfig { epochs: 10, ..Default::default() };
    let rows = match harness::sweep_agents(&base, &grid5(), &[5, 10, 15, 20], &[0], 1, &LlmSource::Endpoint, None) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("sweep failed: {e}")),
    };
    let t5 = rows[0].seconds_per_epoch;
    let within = rows
        .iter()
        .all(|r| r.seconds_per_epoch <= 3.0 * t5 * r.agents as f64 / 5.0);
    let times: Vec<String> = rows
        .iter()
        .map(|r| format!("{}: {:.4}s", r.agents, r.seconds_per_epoch))
        .collect();
    outcome(rows.len() == 4 && within, format!("per-epoch {}", times.join(", ")))
}

// ---------------------------------------------------------------- A10

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/ippo_metrics.csv")
}

fn golden_config() -> TrainConfig {
    TrainConfig {
        agents: Some(probe_agents()),
        epochs: 30,
        mode: Mode::Ippo,
        provider: ProviderKind::None,
        seed: 7,
        wall_clock: false,
        ..Default::default()
    }
}

fn train_metrics(config: &TrainConfig, llm: &LlmSource, out: &Path) -> Vec<u8> {
    let graph = grid5();
    harness::run_train(config, graph, "fixture", llm, out).unwrap();
    std::fs::read(out.join(leed::trainer::METRICS_FILE)).unwrap()
}

fn a10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut notes = Vec::new();
    let mut ok = true;

    if cfg!(feature = "experts") {
        let mut config = harness::load_config(&fixtures().join("configs/grid5_llm_mock.json")).unwrap();
        config.epochs = 25;
        let llm = LlmSource::Scripted(fixtures().join("mock_improving"));
        let a = train_metrics(&config, &llm, &dir.path().join("a"));
        let b = train_metrics(&config, &llm, &dir.path().join("b"));
        ok &= a == b;
        notes.push(format!("mock LEED runs identical: {}", a == b));
    }

    let ippo = train_metrics(&golden_config(), &LlmSource::Endpoint, &dir.path().join("ippo"));
    if std::env::var_os("LEED_REGEN_GOLDEN").is_some() {
        if cfg!(feature = "experts") {
            return outcome(false, "golden runs must be regenerated with --no-default-features");
        }
        std::fs::create_dir_all(golden_path().parent().unwrap()).unwrap();
        std::fs::write(golden_path(), &ippo).unwrap();
        notes.push("golden regenerated".into());
    }
    match std::fs::read(golden_path()) {
        Ok(golden) => {
            ok &= golden == ippo;
            notes.push(format!("IPPO matches expert-disabled golden: {}", golden == ippo));
        }
        Err(e) => {
            ok = false;
            notes.push(format!("golden missing: {e}"));
        }
    }
    outcome(ok, notes.join("; "))
}

// ----------------------------------------------------------------

fn main() {
    // `cargo test -- --list` and friends pass flags; there is nothing to list
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let started = Instant::now();
    let mut results: Vec<(&str, &str, Outcome)> = Vec::new();
    let mut report = |id: &'static str, name: &'static str, o: Outcome| {
        println!("{id:<7} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };

    report("A1", "DTW oracle equivalence", a1());
    report("A2", "gradient exactness", a2());
    report("A3", "return/advantage oracle", a3());
    report("A4", "α-schedule laws", a4());
    report("A5", "surrogate identities", a5());
    if cfg!(feature = "experts") {
        let probe_started = Instant::now();
        let probe = run_probe();
        let (i, ii) = a6(&probe);
        let under = probe_started.elapsed().as_secs_f64();
        report("A6(i)", "IPPO reaches R*", i);
        report("A6(ii)", "LEED reaches R* in ≤ 0.7× IPPO epochs", ii);
        report(
            "A6(t)",
            "learning-efficacy runtime",
            outcome(under < 900.0, format!("{under:.0}s for the A6 runs (limit 900s)")),
        );
        report("A7", "dynamic α ≥ fixed α 0.2 and 0.5", a7(&probe));
        report("A8", "validity-rate accounting and demo trend", a8());
        report("A9", "scalability smoke", a9());
    } else {
        println!("A6–A9 need the `experts` feature; skipped in this build");
    }
    report("A10", "determinism and golden IPPO run", a10());

    let failed: Vec<&str> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed ({:.0}s)",
        results.len() - failed.len(),
        failed.len(),
        started.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
