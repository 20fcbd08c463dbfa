//! Seeded batch execution, comparator arms and log/summary emission.
//!
//! Seeds: replication `r` of every arm uses `derive_seed(experiment_seed, r)`
//! (paired design); steps and candidates draw from streams of that seed, see
//! `gfguide_core::rng`. Inverse-problem truths use
//! `derive_seed(truth_seed, r)` and observation noise the `Init` stream of
//! `derive_seed(run_seed, OBSERVATION_TAG)`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use gfguide_core::ensemble::EnsembleSpec;
use gfguide_core::guidance::{
    nfe_budget, Clock, GuidanceConfig, GuidanceMode, GuidanceWindow, RunRecord, Sampler, StepKind, StepLog, WindowSpec,
};
use gfguide_core::models::GuidanceScale;
use gfguide_core::rewards::{avg_pool, Reward};
use gfguide_core::rng::{derive_seed, NoiseStreams, StreamKey};
use gfguide_core::schedule::NoiseSchedule;
use gfguide_core::LatentVideo;
use serde::Serialize;

use crate::config::{Comparator, ExperimentConfig, GroundTruth, RewardKind, RewardSpec, ENV_ENDPOINT, ENV_OUT};
use crate::error::HarnessError;
use crate::exec::Threaded;
use crate::scenario::Scenario;

pub const OBSERVATION_TAG: u64 = 0x0b5e_0b5e;

/// Columns of every summary CSV, in order.
pub const CSV_COLUMNS: [&str; 10] = [
    "method",
    "runs",
    "mean_final_reward",
    "std_error",
    "mean_final_reward_2",
    "mode_hit_rate",
    "mean_mse",
    "nfe_per_run",
    "total_nfe",
    "wall_time_s",
];

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: usize,
    pub endpoint: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Baseline,
    Guided,
    BestOfN(usize),
    Classifier(f64),
}

/// One row of a comparison: a method with its settings.
#[derive(Debug, Clone)]
pub struct Arm {
    pub label: String,
    pub method: Method,
    pub steps: usize,
    pub guidance: GuidanceConfig,
    pub rewards: Vec<RewardSpec>,
}

impl Arm {
    /// NFE of one run by the accounting rule.
    pub fn expected_nfe(&self) -> usize {
        match self.method {
            Method::Baseline | Method::Classifier(_) => self.steps,
            Method::Guided => nfe_budget(self.guidance.mode, &self.guidance.window, self.guidance.n),
            Method::BestOfN(p) => p * self.steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub replication: usize,
    pub seed: u64,
    pub record: RunRecord,
    /// Best-of-N: combined score of every path and the chosen one.
    pub paths: Option<(Vec<f64>, usize)>,
    pub mode_hit: Option<bool>,
    pub mse: Option<f64>,
    pub wall: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub runs: usize,
    pub mean_final_reward: f64,
    pub std_error: f64,
    pub mean_final_reward_2: Option<f64>,
    pub mode_hit_rate: Option<f64>,
    pub mean_mse: Option<f64>,
    pub nfe_per_run: f64,
    pub total_nfe: usize,
    pub wall_time_s: f64,
}

impl SummaryRow {
    pub fn from_outcomes(method: &str, runs: &[RunOutcome]) -> Self {
        let n = runs.len() as f64;
        let first: Vec<f64> = runs.iter().map(|r| r.record.final_rewards[0]).collect();
        let mean = first.iter().sum::<f64>() / n;
        let var = if runs.len() > 1 {
            first.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let mean_of = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
        let total_nfe = runs.iter().map(|r| r.record.total_nfe).sum();
        SummaryRow {
            method: method.to_string(),
            runs: runs.len(),
            mean_final_reward: mean,
            std_error: (var / n).sqrt(),
            mean_final_reward_2: mean_of(runs.iter().filter_map(|r| r.record.final_rewards.get(1).copied()).collect()),
            mode_hit_rate: mean_of(runs.iter().filter_map(|r| r.mode_hit.map(|h| h as u8 as f64)).collect()),
            mean_mse: mean_of(runs.iter().filter_map(|r| r.mse).collect()),
            nfe_per_run: total_nfe as f64 / n,
            total_nfe,
            wall_time_s: runs.iter().map(|r| r.wall.as_secs_f64()).sum(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub rows: Vec<SummaryRow>,
    /// Per arm, in row order.
    pub outcomes: Vec<Vec<RunOutcome>>,
    /// Infeasible settings and other remarks.
    pub notes: Vec<String>,
    pub csv: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    N,
    Window,
    Policy,
    Beta,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::N => "n",
            Axis::Window => "window",
            Axis::Policy => "policy",
            Axis::Beta => "beta",
        }
    }
}

struct WallClock(Instant);

impl Clock for WallClock {
    fn now(&self) -> Duration {
        self.0.elapsed()
    }
}

pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub scenario: Scenario,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub jobs: usize,
    rewards: Vec<RewardSpec>,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig, opts: RunOptions) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let scenario = cfg.scenario()?;
        let mut rewards = cfg.reward_specs(&scenario)?;
        let endpoint = opts.endpoint.clone().or_else(|| std::env::var(ENV_ENDPOINT).ok());
        if let Some(ep) = endpoint {
            rewards.iter_mut().for_each(|r| r.set_endpoint(&ep));
        }
        let out_dir = opts
            .out_dir
            .clone()
            .or_else(|| std::env::var_os(ENV_OUT).map(PathBuf::from))
            .or_else(|| cfg.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok(Experiment {
            seed: opts.seed.unwrap_or(cfg.seed),
            jobs: opts.jobs.max(1),
            cfg,
            scenario,
            out_dir,
            rewards,
        })
    }

    pub fn run_seed(&self, replication: usize) -> u64 {
        derive_seed(self.seed, replication as u64)
    }

    fn guidance(&self, steps: usize) -> Result<GuidanceConfig, HarnessError> {
        self.cfg.guidance(steps, self.seed, self.scenario.spec.frames())
    }

    fn arm(&self, label: String, method: Method) -> Result<Arm, HarnessError> {
        Ok(Arm {
            label,
            method,
            steps: self.cfg.steps,
            guidance: self.guidance(self.cfg.steps)?,
            rewards: self.rewards.clone(),
        })
    }

    /// The configured comparators.
    pub fn comparator_arms(&self) -> Result<Vec<Arm>, HarnessError> {
        self.cfg
            .comparators
            .iter()
            .map(|c| {
                let method = match *c {
                    Comparator::Baseline { .. } => Method::Baseline,
                    Comparator::Guided { .. } => Method::Guided,
                    Comparator::BestOfN { paths, .. } => Method::BestOfN(paths),
                    Comparator::Classifier { weight, .. } => Method::Classifier(weight),
                };
                self.arm(c.label(), method)
            })
            .collect()
    }

    pub fn run(&self) -> Result<Report, HarnessError> {
        let arms = self.comparator_arms()?;
        self.execute("run", &arms, Vec::new())
    }

    pub fn ablation_arms(&self, axis: Axis) -> Result<Vec<Arm>, HarnessError> {
        let base = self.arm(String::new(), Method::Guided)?;
        let steps = self.cfg.steps;
        let ab = &self.cfg.ablation;
        let arms: Vec<Arm> = match axis {
            Axis::N => ab
                .n
                .iter()
                .map(|&n| {
                    let mut a = base.clone();
                    a.label = format!("n={n}");
                    a.guidance.n = n;
                    a
                })
                .collect(),
            Axis::Window => ab
                .window
                .iter()
                .map(|w| {
                    let mut a = base.clone();
                    a.label = w.label();
                    a.guidance.window = w.resolve(steps).map_err(|e| HarnessError::config("window", e))?;
                    Ok(a)
                })
                .collect::<Result<_, HarnessError>>()?,
            Axis::Policy => self
                .cfg
                .policies(&self.scenario)
                .into_iter()
                .map(|q| {
                    let mut a = base.clone();
                    a.label = format!("scale={}-{}", q.lo, q.hi);
                    for r in &mut a.rewards {
                        r.quantize = Some(q.clone());
                    }
                    a
                })
                .collect(),
            Axis::Beta => {
                if self.rewards.len() != 2 {
                    return Err(HarnessError::config(
                        "rewards",
                        format!("the beta axis needs exactly 2 rewards, got {}", self.rewards.len()),
                    ));
                }
                ab.beta
                    .iter()
                    .map(|&beta| {
                        let mut a = base.clone();
                        a.label = format!("beta={beta}");
                        a.guidance.ensemble = EnsembleSpec::WeightedSum { beta };
                        a
                    })
                    .collect()
            }
        };
        for a in &arms {
            a.guidance
                .validate(&self.cfg.schedule()?, a.rewards.len(), self.scenario.spec.frames())
                .map_err(HarnessError::from_core_config)?;
        }
        Ok(arms)
    }

    pub fn ablate(&self, axis: Axis) -> Result<Report, HarnessError> {
        let arms = self.ablation_arms(axis)?;
        self.execute(&format!("ablate-{}", axis.name()), &arms, Vec::new())
    }

    /// Arms that each spend exactly `budget` evaluations per run, plus notes
    /// on the comparators that cannot.
    pub fn nfe_arms(&self, budget: usize) -> Result<(Vec<Arm>, Vec<String>), HarnessError> {
        if budget == 0 {
            return Err(HarnessError::config("budget", "must be positive"));
        }
        let t = self.cfg.steps;
        let mut notes = Vec::new();
        let mut arms = Vec::new();

        let mut base = self.arm(format!("baseline-T{budget}"), Method::Baseline)?;
        base.steps = budget;
        base.guidance = self.guidance(budget)?;
        arms.push(base);

        if budget % t == 0 && budget / t >= 2 {
            let n = budget / t;
            arms.push(self.arm(format!("best-of-{n}"), Method::BestOfN(n))?);
        } else {
            notes.push(format!(
                "best-of-N infeasible: {budget} = N x {t} has no integer solution with N >= 2"
            ));
        }

        match self.solve_guided(budget)? {
            Ok((window, n)) => {
                let mut a = self.arm(String::new(), Method::Guided)?;
                a.label = format!("guided-n{n}-{}", window.label());
                a.guidance.n = n;
                a.guidance.window = window.resolve(t)?;
                arms.push(a);
            }
            Err(why) => notes.push(why),
        }
        for a in &arms {
            debug_assert_eq!(a.expected_nfe(), budget, "{}", a.label);
        }
        Ok((arms, notes))
    }

    /// Guided `(window, n)` with `T + L (n - 1) = budget`, where `L` counts
    /// guided steps with `t >= 2`. Prefers the configured window, then the
    /// "first k steps" window with `k` closest to it.
    fn solve_guided(&self, budget: usize) -> Result<Result<(WindowSpec, usize), String>, HarnessError> {
        let t = self.cfg.steps;
        if budget <= t {
            return Ok(Err(format!("guided infeasible: budget {budget} leaves no evaluations beyond T = {t}")));
        }
        let extra = budget - t;
        let effective = |w: &GuidanceWindow| w.timesteps().iter().filter(|&&s| s >= 2).count();
        let configured = self.cfg.guidance.window.clone();
        let l = effective(&configured.resolve(t)?);
        if l > 0 && extra % l == 0 && extra / l >= 1 {
            return Ok(Ok((configured, 1 + extra / l)));
        }
        let mut ks: Vec<usize> = (1..t).collect();
        ks.sort_by_key(|&k| (k.abs_diff(l), std::cmp::Reverse(k)));
        for k in ks {
            if extra % k == 0 {
                return Ok(Ok((WindowSpec::First { steps: k }, 1 + extra / k)));
            }
        }
        Ok(Err(format!(
            "guided infeasible: no window size L in [1, {}] divides {budget} - {t} = {extra}",
            t - 1
        )))
    }

    pub fn compare_nfe(&self, budget: usize) -> Result<Report, HarnessError> {
        let (arms, notes) = self.nfe_arms(budget)?;
        let report = self.execute(&format!("compare-nfe-{budget}"), &arms, notes)?;
        for row in &report.rows {
            if row.nfe_per_run != budget as f64 {
                return Err(HarnessError::Runtime(format!(
                    "{} spent {} NFE per run, budget is {budget}",
                    row.method, row.nfe_per_run
                )));
            }
        }
        Ok(report)
    }

    pub fn inverse_arms(&self) -> Result<Vec<Arm>, HarnessError> {
        if self.cfg.inverse.is_none() {
            return Err(HarnessError::config("inverse", "the inverse command needs an `inverse` section"));
        }
        if let Some(r) = &self.cfg.rewards {
            if r.len() != 1 || r[0].kind != RewardKind::Degradation {
                return Err(HarnessError::config("rewards", "inverse runs use the degradation reward only"));
            }
        }
        let rewards = vec![RewardSpec::degradation()];
        let mut unguided = self.arm("unguided".into(), Method::Baseline)?;
        unguided.rewards = rewards.clone();
        let mut guided = self.arm("guided".into(), Method::Guided)?;
        guided.rewards = rewards;
        guided.guidance.window = GuidanceWindow::all(self.cfg.steps);
        guided.guidance.ensemble = EnsembleSpec::Single;
        Ok(vec![unguided, guided])
    }

    pub fn inverse(&self) -> Result<Report, HarnessError> {
        let arms = self.inverse_arms()?;
        self.execute("inverse", &arms, Vec::new())
    }

    /// Ground truth and pooled observation of replication `r`.
    pub fn inverse_data(&self, r: usize) -> Result<Option<(LatentVideo, LatentVideo, usize)>, HarnessError> {
        let Some(inv) = &self.cfg.inverse else { return Ok(None) };
        let truth = match &inv.ground_truth {
            GroundTruth::PriorSample { seed } => self.scenario.sample_truth(derive_seed(*seed, r as u64))?,
            GroundTruth::Frames(rows) => {
                let z = LatentVideo::from_frames(rows).map_err(|e| HarnessError::config("ground_truth", e))?;
                if z.shape() != (self.scenario.spec.frames(), self.scenario.spec.dims()) {
                    return Err(HarnessError::config("ground_truth", format!("shape {:?} does not match the model", z.shape())));
                }
                z
            }
        };
        let mut obs = avg_pool(&truth, inv.pool).map_err(|e| HarnessError::config("pool", e))?;
        if inv.observation_noise > 0.0 {
            let noise = NoiseStreams::new(derive_seed(self.run_seed(r), OBSERVATION_TAG))
                .normal(StreamKey::Init, obs.frames(), obs.dims());
            obs = obs.lincomb(1.0, &noise, inv.observation_noise)?;
        }
        Ok(Some((truth, obs, inv.pool)))
    }

    /// Runs one replication of `arm`.
    pub fn run_one(&self, arm: &Arm, sched: &NoiseSchedule, r: usize) -> Result<RunOutcome, HarnessError> {
        let started = Instant::now();
        let seed = self.run_seed(r);
        let data = self.inverse_data(r)?;
        let rewards = arm
            .rewards
            .iter()
            .map(|s| s.build(data.as_ref().map(|(_, obs, pool)| (obs, *pool))))
            .collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<&dyn Reward> = rewards.iter().map(|b| b.as_ref() as &dyn Reward).collect();

        let mut gcfg = arm.guidance.clone();
        gcfg.seed = seed;
        let mut cond = &self.scenario.condition;
        if let Method::Classifier(weight) = arm.method {
            cond = self.scenario.classifier_condition.as_ref().ok_or_else(|| {
                HarnessError::config("comparators", format!("scenario {} has no classifier condition", self.scenario.name))
            })?;
            gcfg.mode = GuidanceMode::Classifier { weight };
            gcfg.window = GuidanceWindow::all(arm.steps);
            gcfg.cfg_w = GuidanceScale::new(0.0)?;
        }
        let run_id = format!("{}/{}/r{r}", self.cfg.name, arm.label);
        let clock = WallClock(started);
        let sampler = Sampler {
            spec: &self.scenario.spec,
            cond,
            sched,
            decoder: &self.cfg.decoder,
            rewards: &refs,
            cfg: &gcfg,
            run_id: &run_id,
            executor: Threaded {
                jobs: self.cfg.guidance.candidate_jobs,
            },
            clock: Some(&clock),
        };
        let (record, paths) = match arm.method {
            Method::Baseline => (sampler.run_unguided()?, None),
            Method::Guided | Method::Classifier(_) => (sampler.run()?, None),
            Method::BestOfN(p) => {
                let b = sampler.best_of_n(p)?;
                (b.record, Some((b.path_scores, b.selected)))
            }
        };
        let mode_hit = self.scenario.probe.as_ref().filter(|_| data.is_none()).map(|p| p.hit(&record.z0));
        let mse = match &data {
            Some((truth, _, _)) => Some(record.z0.sq_dist(truth)? / truth.len() as f64),
            None => None,
        };
        Ok(RunOutcome {
            replication: r,
            seed,
            record,
            paths,
            mode_hit,
            mse,
            wall: started.elapsed(),
        })
    }

    /// Runs all replications of one arm, up to `jobs` at a time.
    pub fn run_arm(&self, arm: &Arm) -> Result<Vec<RunOutcome>, HarnessError> {
        let sched = self.cfg.schedule_with_steps(arm.steps)?;
        let reps = self.cfg.replications;
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<RunOutcome, HarnessError>>>> = (0..reps).map(|_| Mutex::new(None)).collect();
        let work = || loop {
            let r = next.fetch_add(1, Ordering::Relaxed);
            if r >= reps {
                break;
            }
            *slots[r].lock().unwrap() = Some(self.run_one(arm, &sched, r));
        };
        let workers = self.jobs.min(reps);
        if workers <= 1 {
            work();
        } else {
            thread::scope(|s| {
                for _ in 0..workers {
                    s.spawn(work);
                }
            });
        }
        slots
            .into_iter()
            .map(|m| m.into_inner().unwrap().expect("every replication ran"))
            .collect()
    }

    fn execute(&self, tag: &str, arms: &[Arm], notes: Vec<String>) -> Result<Report, HarnessError> {
        let dir = self.out_dir.join(tag);
        fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
        let mut rows = Vec::with_capacity(arms.len());
        let mut outcomes = Vec::with_capacity(arms.len());
        for arm in arms {
            let runs = self.run_arm(arm)?;
            let arm_dir = dir.join(sanitize(&arm.label));
            fs::create_dir_all(&arm_dir).map_err(|e| HarnessError::io(&arm_dir, e))?;
            for run in &runs {
                let path = arm_dir.join(format!("run-{:04}.jsonl", run.replication));
                write_atomic(&path, &jsonl(self, arm, run))?;
            }
            let row = SummaryRow::from_outcomes(&arm.label, &runs);
            debug_assert_eq!(row.total_nfe, runs.iter().map(|r| r.record.total_nfe).sum::<usize>());
            rows.push(row);
            outcomes.push(runs);
        }
        let csv = self.out_dir.join(format!("{tag}.csv"));
        write_atomic(&csv, &summary_csv(&rows)?)?;
        Ok(Report {
            rows,
            outcomes,
            notes,
            csv,
        })
    }
}

/// Directory-safe version of an arm label.
pub fn sanitize(label: &str) -> String {
    let s: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.=".contains(c) { c } else { '_' })
        .collect();
    s.trim_matches('_').to_string()
}

/// Writes `bytes` to a sibling temp file, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = BufWriter::new(File::create(&tmp).map_err(|e| HarnessError::io(&tmp, e))?);
        f.write_all(bytes).map_err(|e| HarnessError::io(&tmp, e))?;
        f.flush().map_err(|e| HarnessError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

#[derive(Serialize)]
struct RunLine<'a> {
    r#type: &'static str,
    experiment: &'a str,
    scenario: &'a str,
    method: &'a str,
    replication: usize,
    seed: u64,
    steps: usize,
    eta: f64,
    n: usize,
    window: Vec<usize>,
    expected_nfe: usize,
}

#[derive(Serialize)]
struct StepLine<'a> {
    r#type: &'static str,
    t: usize,
    kind: StepKind,
    raw: &'a [Vec<Option<f64>>],
    combined: &'a [Option<f64>],
    selected: Option<usize>,
    ess: Option<f64>,
    nfe: usize,
    failures: &'a [String],
}

impl<'a> StepLine<'a> {
    fn new(s: &'a StepLog) -> Self {
        StepLine {
            r#type: "step",
            t: s.t,
            kind: s.kind,
            raw: &s.raw,
            combined: &s.combined,
            selected: s.selected,
            ess: s.ess,
            nfe: s.nfe,
            failures: &s.failures,
        }
    }
}

#[derive(Serialize)]
struct PathsLine<'a> {
    r#type: &'static str,
    scores: &'a [f64],
    selected: usize,
}

#[derive(Serialize)]
struct FinalLine<'a> {
    r#type: &'static str,
    final_rewards: &'a [f64],
    total_nfe: usize,
    mode_hit: Option<bool>,
    mse: Option<f64>,
    z0: Vec<Vec<f64>>,
}

/// Per-run log: a header, one line per step, then the final outcome.
/// Wall time is left out so reruns are byte-identical.
fn jsonl(exp: &Experiment, arm: &Arm, run: &RunOutcome) -> Vec<u8> {
    let mut out = Vec::new();
    let mut line = |v: &dyn erased::Line| {
        out.extend_from_slice(v.json().as_bytes());
        out.push(b'\n');
    };
    line(&RunLine {
        r#type: "run",
        experiment: &exp.cfg.name,
        scenario: exp.scenario.name,
        method: &arm.label,
        replication: run.replication,
        seed: run.seed,
        steps: arm.steps,
        eta: exp.cfg.eta,
        n: arm.guidance.n,
        window: match arm.method {
            Method::Guided => arm.guidance.window.timesteps(),
            Method::Classifier(_) => GuidanceWindow::all(arm.steps).timesteps(),
            _ => Vec::new(),
        },
        expected_nfe: arm.expected_nfe(),
    });
    if let Some((scores, selected)) = &run.paths {
        line(&PathsLine {
            r#type: "paths",
            scores,
            selected: *selected,
        });
    }
    for s in &run.record.steps {
        line(&StepLine::new(s));
    }
    line(&FinalLine {
        r#type: "final",
        final_rewards: &run.record.final_rewards,
        total_nfe: run.record.total_nfe,
        mode_hit: run.mode_hit,
        mse: run.mse,
        z0: run.record.z0.rows().map(<[f64]>::to_vec).collect(),
    });
    out
}

mod erased {
    pub trait Line {
        fn json(&self) -> String;
    }

    impl<T: serde::Serialize> Line for T {
        fn json(&self) -> String {
            serde_json::to_string(self).expect("log lines serialize")
        }
    }
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let io = |e: csv::Error| HarnessError::Io(e.to_string());
    w.write_record(CSV_COLUMNS).map_err(io)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.runs.to_string(),
            r.mean_final_reward.to_string(),
            r.std_error.to_string(),
            opt(r.mean_final_reward_2),
            opt(r.mode_hit_rate),
            opt(r.mean_mse),
            r.nfe_per_run.to_string(),
            r.total_nfe.to_string(),
            format!("{:.3}", r.wall_time_s),
        ])
        .map_err(io)?;
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.to_string()))
}
