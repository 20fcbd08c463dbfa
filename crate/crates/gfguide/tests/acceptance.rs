//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails or overruns its time bound.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use gfguide::config::ExperimentConfig;
use gfguide::harness::{Axis, Experiment, RunOptions, CSV_COLUMNS};
use gfguide::mock::{MockReply, MockServer};
use gfguide::remote::{RemoteReward, RemoteSpec, ScoreRequest};
use gfguide_core::ensemble::{consensus, normalized_sum, select, weighted_sum, CandidateScores};
use gfguide_core::guidance::{
    hjb_control_oracle, soft_control, value_mc, FailurePolicy, GuidanceConfig, GuidanceMode, GuidanceWindow, Sampler,
};
use gfguide_core::models::{eps_predict, Condition, DecoderSpec, Denoiser, GuidanceScale, Mixture, ScoreModelSpec};
use gfguide_core::rewards::{FrameScorer, FramewiseReward, KeyFrameSet, Reward};
use gfguide_core::rng::{derive_seed, NoiseStreams, StreamKey};
use gfguide_core::schedule::{build_schedule, ddim_mean, forward_sample, tweedie, NoiseSchedule, ScheduleKind};
use gfguide_core::{LatentVideo, RewardError};
use proptest::prelude::*;
use proptest::test_runner::{Config as PtConfig, TestRunner};
use rand::Rng;

// Tolerances and bounds, as stated by the acceptance criteria.
const C1_REL_TOL: f64 = 1e-10;
const C1_SIGMA_TOL: f64 = 1e-9;
const C2_KS_MAX: f64 = 0.02;
const C2_SEEDS: usize = 10_000;
const C3_REL_TOL: f64 = 1e-5;
const C3_PROBES: usize = 100;
const C4_VALUE_PATHS: usize = 5_000;
const C4_VALUE_SE: f64 = 2.0;
const C4_HJB_PATHS: usize = 10_000;
const C4_HJB_H: f64 = 1e-2;
const C4_HJB_REL: f64 = 0.10;
const C4_SOFT_N: usize = 10_000;
const C4_SOFT_COS: f64 = 0.95;
const C5_SEEDS: usize = 200;
const C5_P: f64 = 0.01;
const C6_SEEDS: usize = 200;
const C6_BUDGET: usize = 100;
const C8_CASES: u32 = 1000;
const C9_CONFIGS: usize = 50;
const C10_RATIO: f64 = 0.5;
const C10_SEEDS: usize = 20;
const C11_SLACK: Duration = Duration::from_millis(50);

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn unit_schedule(steps: usize, eta: f64) -> NoiseSchedule {
    build_schedule(&ScheduleKind::default(), steps, eta).unwrap()
}

fn c1_schedule_exactness() -> Outcome {
    let s = unit_schedule(50, 1.0);
    let oracle = alphabar_oracle(1e-4, 2e-2, 1000, 50);
    let table_err = s
        .alphabars()
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let streams = NoiseStreams::new(1);
    let mut worst = 0.0f64;
    for t in 1..=50 {
        for k in 0..4 {
            let z0 = streams.normal(StreamKey::Step { t, candidate: 2 * k }, 4, 8).scaled(1.5);
            let eps = streams.normal(StreamKey::Step { t, candidate: 2 * k + 1 }, 4, 8);
            let zt = forward_sample(&z0, t, &eps, &s).map_err(|e| e.to_string())?;
            let back = tweedie(&zt, &eps, t, &s).map_err(|e| e.to_string())?;
            worst = worst.max(rel_err(back.as_slice(), z0.as_slice()));
        }
    }
    let two = NoiseSchedule::new(vec![1.0, 0.9, 0.8], 1.0).unwrap();
    let sigma = two.sigma(2).unwrap();
    let sigma_err = (sigma - (1.0f64 / 18.0).sqrt()).abs();
    check(
        worst <= C1_REL_TOL && sigma_err <= C1_SIGMA_TOL && table_err <= 1e-12,
        format!(
            "tweedie(forward) max rel err {worst:.2e} (<= {C1_REL_TOL:e}); sigma = {sigma:.6} err {sigma_err:.1e}; alphabar vs oracle {table_err:.1e}"
        ),
    )
}

fn gaussian_spec(frames: usize, dims: usize, mean: f64, var: f64) -> ScoreModelSpec {
    let m = Mixture::new(vec![1.0], vec![LatentVideo::filled(frames, dims, mean)], vec![var]).unwrap();
    ScoreModelSpec::single(m).unwrap()
}

fn plain_config(frames: usize, seed: u64) -> GuidanceConfig {
    GuidanceConfig {
        n: 1,
        window: GuidanceWindow::none(0),
        mode: GuidanceMode::Select,
        ensemble: Default::default(),
        key_frames: KeyFrameSet::default_for(frames).unwrap(),
        cfg_w: GuidanceScale::new(1.0).unwrap(),
        seed,
        on_reward_failure: FailurePolicy::Abort,
    }
}

/// Final samples of `seeds` unguided runs, one column per coordinate.
fn sample_columns(spec: &ScoreModelSpec, sched: &NoiseSchedule, seeds: usize) -> Result<Vec<Vec<f64>>, String> {
    let zero = FramewiseReward(FrameScorer::Zero);
    let rewards: [&dyn Reward; 1] = [&zero];
    let cond = Condition::new("c");
    let dims = spec.frames() * spec.dims();
    let mut cols = vec![Vec::with_capacity(seeds); dims];
    for i in 0..seeds {
        let mut cfg = plain_config(spec.frames(), derive_seed(0xC2, i as u64));
        cfg.window = GuidanceWindow::none(sched.steps());
        let rec = Sampler::new(spec, &cond, sched, &DecoderSpec::Identity, &rewards, &cfg)
            .run()
            .map_err(|e| e.to_string())?;
        for (c, &x) in cols.iter_mut().zip(rec.z0.as_slice()) {
            c.push(x);
        }
    }
    Ok(cols)
}

fn c2_sampler_fidelity() -> Outcome {
    let spec = gaussian_spec(1, 4, 0.0, 1.0);
    // Literal 50-step product schedule.
    let literal = build_schedule(
        &ScheduleKind::LinearBeta {
            beta_start: 1e-4,
            beta_end: 2e-2,
            train_steps: None,
        },
        50,
        1.0,
    )
    .unwrap();
    let mut cols = sample_columns(&spec, &literal, C2_SEEDS)?;
    let std_normal = normal_cdf(0.0, 1.0);
    let ks: Vec<f64> = cols.iter_mut().map(|c| ks_statistic(c, &std_normal)).collect();
    let ks_max = ks.iter().copied().fold(0.0, f64::max);

    // Default 1000-rung ladder: the chain's own analytic z_0 law.
    let ladder = unit_schedule(50, 1.0);
    let (a, _, v) = gaussian_chain(ladder.alphabars(), 1.0, 1.0, 50);
    let sd = (a * a + v).sqrt();
    let mut cols = sample_columns(&spec, &ladder, C2_SEEDS)?;
    let own = normal_cdf(0.0, sd);
    let ks_ladder = cols.iter_mut().map(|c| ks_statistic(c, &own)).fold(0.0, f64::max);
    check(
        ks_max < C2_KS_MAX && ks_ladder < C2_KS_MAX,
        format!(
            "per-dim KS vs N(0,1) {:?} (max {ks_max:.4} < {C2_KS_MAX}); 1000-rung ladder KS vs analytic N(0,{sd:.4}^2) {ks_ladder:.4}",
            ks.iter().map(|k| format!("{k:.4}")).collect::<Vec<_>>()
        ),
    )
}

fn c3_score_exactness() -> Outcome {
    let s = unit_schedule(50, 1.0);
    let mut rng = NoiseStreams::new(3).rng(StreamKey::Init);
    let mut worst = 0.0f64;
    for probe in 0..C3_PROBES {
        let k = rng.random_range(1..=3usize);
        let (f, d) = (rng.random_range(1..=3usize), rng.random_range(1..=4usize));
        let mut w: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        let means: Vec<Vec<f64>> = (0..k).map(|_| (0..f * d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let vars: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.5)).collect();
        let mix = Mixture::new(
            w.clone(),
            means.iter().map(|m| LatentVideo::from_vec(f, d, m.clone()).unwrap()).collect(),
            vars.clone(),
        )
        .map_err(|e| e.to_string())?;
        let spec = ScoreModelSpec::single(mix).unwrap();
        let t = rng.random_range(1..=50usize);
        let z: Vec<f64> = (0..f * d).map(|_| rng.random_range(-2.5..2.5)).collect();
        let zv = LatentVideo::from_vec(f, d, z.clone()).unwrap();
        let eps = eps_predict(&spec, &zv, t, &Condition::new("c"), &s).map_err(|e| e.to_string())?;

        let ab = s.alphabar(t);
        let h = 1e-4 * (ab * vars.iter().copied().fold(f64::INFINITY, f64::min) + 1.0 - ab).sqrt();
        let fd: Vec<f64> = (0..z.len())
            .map(|j| {
                let (mut zp, mut zm) = (z.clone(), z.clone());
                zp[j] += h;
                zm[j] -= h;
                let g = (gmm_log_density(&zp, &w, &means, &vars, ab) - gmm_log_density(&zm, &w, &means, &vars, ab)) / (2.0 * h);
                -(1.0 - ab).sqrt() * g
            })
            .collect();
        let e = rel_err(eps.as_slice(), &fd);
        if e > worst {
            worst = e;
        }
        if !e.is_finite() {
            return Err(format!("probe {probe}: non-finite error"));
        }
    }
    check(worst < C3_REL_TOL, format!("max rel err over {C3_PROBES} probes {worst:.2e} (< {C3_REL_TOL:e})"))
}

fn c4_control_consistency() -> Outcome {
    let (m0, s0sq, alpha, t) = (0.3, 0.5, 2.0, 10usize);
    let target = [1.0, -0.5, 0.8];
    let spec = gaussian_spec(1, 3, m0, s0sq);
    let s = unit_schedule(50, 1.0);
    let cond = Condition::new("c");
    let den = Denoiser::new(&spec, &cond, GuidanceScale::new(1.0).unwrap()).unwrap();
    let z_t = LatentVideo::from_vec(1, 3, vec![0.2, -0.4, 0.9]).unwrap();
    let reward = |z: &LatentVideo| -> f64 { -z.as_slice().iter().zip(&target).map(|(x, a)| (x - a) * (x - a)).sum::<f64>() };

    // analytic value and control
    let (a, beta, v) = gaussian_chain(s.alphabars(), 1.0, s0sq, t);
    let mean: Vec<f64> = z_t.as_slice().iter().map(|z| a * z + beta * m0).collect();
    let dist2: f64 = mean.iter().zip(&target).map(|(m, g)| (m - g) * (m - g)).sum();
    let v_true = -(alpha * 3.0 / 2.0) * (1.0 + 2.0 * v / alpha).ln() - alpha * dist2 / (alpha + 2.0 * v);
    let sigma = s.sigma(t).unwrap();
    let u_true: Vec<f64> = mean
        .iter()
        .zip(&target)
        .map(|(m, g)| sigma * sigma / alpha * (-2.0 * alpha * a * (m - g) / (alpha + 2.0 * v)))
        .collect();

    let est = value_mc(&z_t, t, alpha, C4_VALUE_PATHS, &den, &s, &reward, 41).map_err(|e| e.to_string())?;
    let z_score = (est.value - v_true).abs() / est.std_error;

    let hjb = hjb_control_oracle(&z_t, t, alpha, C4_HJB_PATHS, C4_HJB_H, &den, &s, &reward, 43).map_err(|e| e.to_string())?;
    let hjb_err = rel_err(hjb.control.as_slice(), &u_true);

    let eps = den.eps(&z_t, t, &s).map_err(|e| e.to_string())?;
    let step = ddim_mean(&z_t, &eps, t, &s).map_err(|e| e.to_string())?;
    let streams = NoiseStreams::new(47);
    let mut cands = Vec::with_capacity(C4_SOFT_N);
    let mut rewards = Vec::with_capacity(C4_SOFT_N);
    for i in 0..C4_SOFT_N {
        let zi = step.perturb(&streams.normal(StreamKey::Step { t, candidate: i }, 1, 3)).unwrap();
        let ei = den.eps(&zi, t - 1, &s).unwrap();
        rewards.push(reward(&tweedie(&zi, &ei, t - 1, &s).unwrap()));
        cands.push(zi);
    }
    let soft = soft_control(&cands, &rewards, &step.mean, alpha).map_err(|e| e.to_string())?;
    let cos_hjb = cosine(soft.u.as_slice(), hjb.control.as_slice());
    let cos_true = cosine(soft.u.as_slice(), &u_true);

    check(
        z_score <= C4_VALUE_SE && hjb_err < C4_HJB_REL && cos_hjb > C4_SOFT_COS,
        format!(
            "value {:.5} vs analytic {v_true:.5} ({z_score:.2} SE <= {C4_VALUE_SE}); HJB rel err {hjb_err:.3} (< {C4_HJB_REL}); soft-vs-HJB cosine {cos_hjb:.4} (> {C4_SOFT_COS}), soft-vs-analytic {cos_true:.4}",
            est.value
        ),
    )
}

fn minor_mode_config(reps: usize, extra: &str) -> ExperimentConfig {
    let text = format!(
        r#"{{"schema_version": 1, "name": "minor", "scenario": {{"kind": "gmm-minor-mode"}},
            "steps": 50, "eta": 1.0, "seed": 2024, "replications": {reps},
            "guidance": {{"n": 10, "window": {{"kind": "first", "steps": 10}}}} {extra}}}"#
    );
    ExperimentConfig::from_json(&text).unwrap()
}

fn experiment(cfg: ExperimentConfig, dir: &Path, jobs: usize) -> Result<Experiment, String> {
    Experiment::new(
        cfg,
        RunOptions {
            out_dir: Some(dir.to_path_buf()),
            seed: None,
            jobs,
            endpoint: None,
        },
    )
    .map_err(|e| e.to_string())
}

fn c5_guidance_lift() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(minor_mode_config(C5_SEEDS, ""), dir.path(), 4)?;
    let report = exp.run().map_err(|e| e.to_string())?;
    let (base, guided) = (&report.outcomes[0], &report.outcomes[1]);
    let (mut wins, mut losses) = (0u64, 0u64);
    for (b, g) in base.iter().zip(guided) {
        assert_eq!(b.seed, g.seed);
        match (b.mode_hit.unwrap(), g.mode_hit.unwrap()) {
            (false, true) => wins += 1,
            (true, false) => losses += 1,
            _ => {}
        }
    }
    let hits = |o: &[gfguide::harness::RunOutcome]| o.iter().filter(|r| r.mode_hit == Some(true)).count();
    let (hb, hg) = (hits(base), hits(guided));
    let p = sign_test_p(wins, losses);
    check(
        hg > hb && p < C5_P,
        format!("minor-mode hits guided {hg}/{C5_SEEDS} vs unguided {hb}/{C5_SEEDS}; discordant {wins}:{losses}, sign-test p = {p:.2e} (< {C5_P})"),
    )
}

fn c6_fixed_nfe() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(minor_mode_config(C6_SEEDS, ""), dir.path(), 4)?;
    let report = exp.compare_nfe(C6_BUDGET).map_err(|e| e.to_string())?;
    let row = |label: &str| report.rows.iter().find(|r| r.method == label).cloned();
    let guided = row("guided-n6-first10").ok_or("no guided-n6-first10 row")?;
    let best = row("best-of-2").ok_or("no best-of-2 row")?;
    let all_budget = report.rows.iter().all(|r| r.nfe_per_run == C6_BUDGET as f64);
    check(
        all_budget && guided.mean_final_reward >= best.mean_final_reward,
        format!(
            "NFE per run {:?} (all {C6_BUDGET}: {all_budget}); guided {:.3} ± {:.3} >= best-of-2 {:.3} ± {:.3}",
            report.rows.iter().map(|r| (r.method.clone(), r.nfe_per_run)).collect::<Vec<_>>(),
            guided.mean_final_reward,
            guided.std_error,
            best.mean_final_reward,
            best.std_error
        ),
    )
}

fn csv_rows(path: &Path) -> Result<Vec<Vec<String>>, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    let header: Vec<String> = r.headers().map_err(|e| e.to_string())?.iter().map(String::from).collect();
    if header != CSV_COLUMNS {
        return Err(format!("unexpected CSV header {header:?}"));
    }
    r.records()
        .map(|rec| rec.map(|x| x.iter().map(String::from).collect()).map_err(|e| e.to_string()))
        .collect()
}

fn c7_ablation_shape() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(minor_mode_config(100, ""), dir.path(), 4)?;
    let n_axis = exp.ablate(Axis::N).map_err(|e| e.to_string())?;
    let labels: Vec<String> = n_axis.rows.iter().map(|r| r.method.clone()).collect();
    let want = ["n=1", "n=3", "n=5", "n=10"];
    if labels != want {
        return Err(format!("n-axis labels {labels:?}"));
    }
    let base_arm = exp.comparator_arms().map_err(|e| e.to_string())?.remove(0);
    let base = exp.run_arm(&base_arm).map_err(|e| e.to_string())?;
    let n1 = &n_axis.outcomes[0];
    let same_paths = base.iter().zip(n1).all(|(b, g)| b.seed == g.seed && b.record.z0 == g.record.z0);
    let base_row = gfguide::harness::SummaryRow::from_outcomes("n=1", &base);
    let (r1, rb) = (&n_axis.rows[0], &base_row);
    let same_stats = r1.mean_final_reward == rb.mean_final_reward
        && r1.std_error == rb.std_error
        && r1.mode_hit_rate == rb.mode_hit_rate;
    let n_rows = csv_rows(&n_axis.csv)?.len();

    let w_axis = exp.ablate(Axis::Window).map_err(|e| e.to_string())?;
    let w_labels: Vec<String> = w_axis.rows.iter().map(|r| r.method.clone()).collect();
    let w_want = ["none", "[T,T-5]", "[T-5,T-10]", "[T,T-10]"];
    let w_rows = csv_rows(&w_axis.csv)?.len();
    check(
        same_paths && same_stats && n_rows == 4 && w_labels == w_want && w_rows == 4,
        format!(
            "n-axis {labels:?} ({n_rows} CSV rows), n=1 trajectories identical to baseline: {same_paths}, stats equal: {same_stats}; window-axis {w_labels:?} ({w_rows} CSV rows); hit rates n {:?}",
            n_axis.rows.iter().map(|r| r.mode_hit_rate.unwrap()).collect::<Vec<_>>()
        ),
    )
}

fn grid_rows(rows: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..14).prop_flat_map(move |n| {
        prop::collection::vec(prop::collection::vec((-60i32..60).prop_map(|k| k as f64 / 4.0), n), rows)
    })
}

/// Strictly increasing piecewise-linear map through random knots.
fn piecewise(knots: &[(f64, f64)], x: f64) -> f64 {
    // knots: (breakpoint offset, slope); breakpoints at -15 + cumulative offsets
    let mut y = 0.0;
    let mut left = -20.0;
    for (i, &(gap, slope)) in knots.iter().enumerate() {
        let right = if i + 1 == knots.len() { f64::INFINITY } else { left + gap };
        if x <= right {
            return y + slope * (x - left);
        }
        y += slope * (right - left);
        left = right;
    }
    y
}

fn c8_ensemble_properties() -> Outcome {
    let mut runner = TestRunner::new(PtConfig {
        cases: C8_CASES,
        failure_persistence: None,
        ..PtConfig::default()
    });
    let knots = prop::collection::vec((0.5f64..6.0, 0.1f64..5.0), 1..6);
    runner
        .run(&(grid_rows(2), knots.clone(), knots), |(rows, k1, k2)| {
            let warped = vec![
                rows[0].iter().map(|&x| piecewise(&k1, x)).collect(),
                rows[1].iter().map(|&x| piecewise(&k2, x)).collect(),
            ];
            prop_assert_eq!(consensus(&CandidateScores::new(rows).unwrap()), consensus(&CandidateScores::new(warped).unwrap()));
            Ok(())
        })
        .map_err(|e| format!("consensus invariance: {e}"))?;
    runner
        .run(&(grid_rows(2), 0.1f64..10.0, -50.0f64..50.0, 0.1f64..10.0, -50.0f64..50.0), |(rows, a1, b1, a2, b2)| {
            let moved = vec![
                rows[0].iter().map(|&x| a1 * x + b1).collect(),
                rows[1].iter().map(|&x| a2 * x + b2).collect(),
            ];
            let (x, y) = (normalized_sum(&CandidateScores::new(rows).unwrap()), normalized_sum(&CandidateScores::new(moved).unwrap()));
            for (p, q) in x.iter().zip(&y) {
                prop_assert!((p - q).abs() <= 1e-9);
            }
            Ok(())
        })
        .map_err(|e| format!("normalized-sum invariance: {e}"))?;
    runner
        .run(&(grid_rows(1), prop::collection::vec((0.5f64..6.0, 0.1f64..5.0), 1..6)), |(rows, k)| {
            let v = &rows[0];
            let w: Vec<f64> = v.iter().map(|&x| piecewise(&k, x)).collect();
            prop_assert_eq!(select(v).unwrap(), select(&w).unwrap());
            Ok(())
        })
        .map_err(|e| format!("select invariance: {e}"))?;
    runner
        .run(&grid_rows(2), |rows| {
            let s = CandidateScores::new(rows.clone()).unwrap();
            prop_assert_eq!(&weighted_sum(&s, 1.0).unwrap(), &rows[0]);
            prop_assert_eq!(&weighted_sum(&s, 0.0).unwrap(), &rows[1]);
            Ok(())
        })
        .map_err(|e| format!("weighted-sum degeneracy: {e}"))?;
    let borda = consensus(&CandidateScores::new(vec![vec![2.0, 3.0, 1.0], vec![3.0, 2.0, 1.0]]).unwrap());
    check(
        borda == [5.0, 5.0, 2.0],
        format!("4 suites x {C8_CASES} cases passed; Borda hand example {borda:?}"),
    )
}

fn c9_nfe_accounting() -> Outcome {
    let spec = {
        let m = Mixture::new(
            vec![0.7, 0.3],
            vec![LatentVideo::filled(2, 2, -1.0), LatentVideo::filled(2, 2, 1.0)],
            vec![0.2, 0.2],
        )
        .unwrap();
        ScoreModelSpec::single(m).unwrap()
    };
    let reward = FramewiseReward(FrameScorer::NegDistance { target: Some(vec![1.0, 1.0]) });
    let rewards: [&dyn Reward; 1] = [&reward];
    let cond = Condition::new("c");
    let mut rng = NoiseStreams::new(9).rng(StreamKey::Init);
    let mut checked = Vec::new();
    for i in 0..C9_CONFIGS {
        let steps = rng.random_range(2..=60usize);
        let n = rng.random_range(1..=8usize);
        let p = rng.random_range(0.0..1.0);
        let ts: Vec<usize> = (1..=steps).filter(|_| rng.random_bool(p)).collect();
        let sched = unit_schedule(steps, 1.0);
        let mut cfg = plain_config(2, i as u64);
        cfg.n = n;
        cfg.window = GuidanceWindow::from_steps(steps, &ts).unwrap();
        let rec = Sampler::new(&spec, &cond, &sched, &DecoderSpec::Identity, &rewards, &cfg)
            .run()
            .map_err(|e| e.to_string())?;
        // candidates at t = 1 are final samples and need no extra evaluation
        let oracle = steps + ts.iter().filter(|&&t| t >= 2).count() * (n - 1);
        let logged: usize = rec.steps.iter().map(|s| s.nfe).sum();
        let covered = rec.steps.iter().map(|s| s.t).eq((1..=steps).rev());
        if rec.total_nfe != oracle || logged != oracle || !covered {
            return Err(format!(
                "config {i}: T={steps} n={n} |W|={}: total {} / logged {logged} vs {oracle}",
                ts.len(),
                rec.total_nfe
            ));
        }
        checked.push(rec.total_nfe);
    }
    check(
        true,
        format!("{C9_CONFIGS} random configs exact (NFE range {}..={})", checked.iter().min().unwrap(), checked.iter().max().unwrap()),
    )
}

fn c10_inverse() -> Outcome {
    let text = format!(
        r#"{{"schema_version": 1, "name": "inverse",
            "scenario": {{"kind": "inverse-gmm", "frames": 4, "dims": 8, "components": 8, "spread": 1.5, "variance": 0.05, "seed": 11}},
            "steps": 100, "eta": 1.0, "seed": 7, "replications": {C10_SEEDS},
            "guidance": {{"n": 10, "window": {{"kind": "all"}}}},
            "inverse": {{"pool": 4, "ground_truth": {{"prior-sample": {{"seed": 99}}}}}}}}"#
    );
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(ExperimentConfig::from_json(&text).unwrap(), dir.path(), 4)?;
    let report = exp.inverse().map_err(|e| e.to_string())?;
    let (u, g) = (report.rows[0].mean_mse.unwrap(), report.rows[1].mean_mse.unwrap());
    check(
        report.rows[0].method == "unguided" && g <= C10_RATIO * u,
        format!("mean MSE guided {g:.4} vs unguided {u:.4} (ratio {:.3} <= {C10_RATIO}), pool 4, T=100, n=10", g / u),
    )
}

fn request(id: u64) -> ScoreRequest {
    ScoreRequest {
        run_id: "acceptance".into(),
        candidate_id: id,
        prompt: "p".into(),
        key_frames: vec![1, 2],
        frames: vec![vec![1.0, 2.0], vec![3.0, 4.0]],
        scale: Default::default(),
    }
}

fn client(endpoint: String, timeout_ms: u64, retries: u32) -> RemoteReward {
    RemoteReward::new(RemoteSpec {
        timeout_ms,
        retries,
        backoff_ms: 5,
        ..RemoteSpec::new(endpoint)
    })
}

fn c11_remote_protocol() -> Outcome {
    let mut notes = Vec::new();
    let echo = MockServer::start(|_, _| MockReply::score(7.0)).map_err(|e| e.to_string())?;
    let got = client(echo.endpoint(), 1000, 0).send(&request(1)).map_err(|e| e.to_string())?;
    let sent = echo.requests();
    if got.value != 7.0 || sent.len() != 1 || sent[0] != request(1) || got.latency.is_none() {
        return Err(format!("round trip: value {} requests {:?}", got.value, sent));
    }
    notes.push("round trip 7".to_string());

    let timeout_ms = 200;
    let slow = MockServer::start(|_, _| MockReply::Delayed(Duration::from_millis(1500), Box::new(MockReply::score(1.0))))
        .map_err(|e| e.to_string())?;
    let started = Instant::now();
    let err = client(slow.endpoint(), timeout_ms, 3).send(&request(2)).unwrap_err();
    let took = started.elapsed();
    let bound = Duration::from_millis(timeout_ms) + C11_SLACK;
    if !matches!(err, RewardError::Timeout { candidate: 2, .. }) || took > bound || slow.hits() != 1 {
        return Err(format!("timeout: {err:?} after {took:?} (bound {bound:?}), {} hits", slow.hits()));
    }
    notes.push(format!("timeout after {} ms", took.as_millis()));

    let bad = MockServer::start(|_, _| MockReply::raw(r#"{"score": "high"}"#)).map_err(|e| e.to_string())?;
    let err = client(bad.endpoint(), 1000, 3).send(&request(3)).unwrap_err();
    match &err {
        RewardError::Protocol { candidate: 3, field, .. } if field == "score" && bad.hits() == 1 => {}
        other => return Err(format!("malformed: {other:?}, {} hits", bad.hits())),
    }
    notes.push("protocol error names `score`, not retried".into());

    let flaky = MockServer::start(|_, hit| if hit < 2 { MockReply::status(503) } else { MockReply::score(4.5) })
        .map_err(|e| e.to_string())?;
    let ok = client(flaky.endpoint(), 1000, 2).send(&request(4)).map_err(|e| e.to_string())?;
    if ok.value != 4.5 || flaky.hits() != 3 {
        return Err(format!("retry: value {} after {} hits", ok.value, flaky.hits()));
    }
    let down = MockServer::start(|_, _| MockReply::Hangup).map_err(|e| e.to_string())?;
    let err = client(down.endpoint(), 1000, 2).send(&request(5)).unwrap_err();
    if !matches!(err, RewardError::Transport { candidate: 5, attempts: 3, .. }) || down.hits() != 3 {
        return Err(format!("transport: {err:?}, {} hits", down.hits()));
    }
    notes.push("503 x2 then success in 3 attempts; hangups exhaust 3 attempts".into());
    check(true, notes.join("; "))
}

fn jsonl_files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "jsonl") {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn c12_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    fs::write(
        &config,
        r#"{"schema_version": 1, "name": "det", "scenario": {"kind": "gmm-minor-mode"}, "seed": 5, "replications": 12,
            "guidance": {"n": 6, "window": {"kind": "first", "steps": 10}, "candidate_jobs": 3},
            "comparators": [{"method": "baseline"}, {"method": "guided"}, {"method": "best-of-n", "paths": 2},
                            {"method": "classifier", "weight": 1.5}]}"#,
    )
    .unwrap();
    let exe = env!("CARGO_BIN_EXE_gfguide");
    let mut trees = Vec::new();
    for (i, jobs) in ["1", "1", "4"].iter().enumerate() {
        let out = dir.path().join(format!("out{i}"));
        let st = Command::new(exe)
            .args(["run", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .args(["--jobs", jobs])
            .env_remove("GFGUIDE_OUT")
            .output()
            .map_err(|e| e.to_string())?;
        if !st.status.success() {
            return Err(format!("cli failed: {}", String::from_utf8_lossy(&st.stderr)));
        }
        trees.push(jsonl_files(&out));
    }
    let files = trees[0].len();
    check(
        files == 48 && trees[0] == trees[1] && trees[0] == trees[2],
        format!("{files} JSONL logs byte-identical across two --jobs 1 runs and one --jobs 4 run"),
    )
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "schedule/DDIM exactness", limit: Duration::from_secs(1), run: c1_schedule_exactness },
        Criterion { id: 2, name: "sampler fidelity", limit: Duration::from_secs(60), run: c2_sampler_fidelity },
        Criterion { id: 3, name: "score exactness", limit: Duration::from_secs(5), run: c3_score_exactness },
        Criterion { id: 4, name: "control-theory consistency", limit: Duration::from_secs(300), run: c4_control_consistency },
        Criterion { id: 5, name: "guidance lift", limit: Duration::from_secs(180), run: c5_guidance_lift },
        Criterion { id: 6, name: "fixed-NFE protocol", limit: Duration::from_secs(300), run: c6_fixed_nfe },
        Criterion { id: 7, name: "ablation shape", limit: Duration::from_secs(600), run: c7_ablation_shape },
        Criterion { id: 8, name: "ensemble properties", limit: Duration::from_secs(10), run: c8_ensemble_properties },
        Criterion { id: 9, name: "NFE accounting", limit: Duration::from_secs(5), run: c9_nfe_accounting },
        Criterion { id: 10, name: "inverse problem", limit: Duration::from_secs(300), run: c10_inverse },
        Criterion { id: 11, name: "remote protocol", limit: Duration::from_secs(10), run: c11_remote_protocol },
        Criterion { id: 12, name: "determinism", limit: Duration::from_secs(60), run: c12_determinism },
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| filter.is_empty() || filter.contains(&c.id)) {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(c.run).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let took = started.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if took <= c.limit => (true, d),
            Ok(d) => (false, format!("{d}; over time bound {:?}", c.limit)),
            Err(d) => (false, d),
        };
        failed += usize::from(!ok);
        println!(
            "{} criterion {:>2} {}: {} [{:.2}s / {}s]",
            if ok { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            detail,
            took.as_secs_f64(),
            c.limit.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
