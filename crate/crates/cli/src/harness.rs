//! Cell planning and execution.
//!
//! A cell is one `(algorithm, setting, β, n, seed)` combination. Its random
//! streams are keyed by `(n << 32) | seed` and a stage name, so the clean data
//! of a given `(n, seed)` is shared by every setting and algorithm, and no
//! cell's draws depend on which other cells run.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use brier_align::domain::{sample_preference_dataset, AlignmentInstance, FinitePolicyClass};
use brier_align::error::Error as CoreError;
use brier_align::eval::{
    concentrability, dg_rate_term, duality_gap, err_stat, policy_table, select_c, subopt_gap, v_max_diagnostic, RunRecord, C_GRID,
};
use brier_align::objectives::SELFPLAY_CLIP;
use brier_align::mechanisms::{apply_pipeline, c_factor, Epsilon, PipelineKind, PipelineSetting};
use brier_align::objectives::{LossSpec, PairCounts};
use brier_align::presets;
use brier_align::regression::{run_regression_cell, RegressionInstance, RegressionRecord};
use brier_align::rng::stream;
use brier_align::selfplay::{estimate_preference_model, iterative_squarechipo, sample_unlabeled, SelfPlayConfig};
use brier_align::solvers::{argmin_by, build_realizable_class_with, oracle_beta, sample_policy_cdp, DistractorConfig, BETA_MIN};

use crate::config::{Algorithm, BetaMode, ExperimentConfig, InstanceSource, ScheduleKind};
use crate::error::{ConfigError, HarnessError};
use crate::{persist, report};

/// Stream key of an `(n, seed)` pair.
pub fn cell_key(n: usize, seed: u64) -> u64 {
    (n as u64) << 32 | (seed & 0xffff_ffff)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub algorithm: Algorithm,
    pub setting: PipelineSetting,
    /// `None` for algorithms without a `β` axis.
    pub beta: Option<f64>,
    pub n: usize,
    pub seed: u64,
}

/// Everything shared across cells: the instance and the classes per `β`.
pub struct World {
    pub bt: Option<AlignmentInstance>,
    classes: BTreeMap<u64, FinitePolicyClass>,
    pub selfplay: Option<presets::SelfPlayPreset>,
    pub regression: Option<RegressionInstance>,
}

impl World {
    pub fn class(&self, beta: f64) -> &FinitePolicyClass {
        &self.classes[&beta.to_bits()]
    }
}

/// One executed cell.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub record: RunRecord,
    pub regression: Option<RegressionRecord>,
    pub selfplay: Option<SelfPlayRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellFailure {
    pub algorithm: String,
    pub setting: String,
    pub epsilon: Epsilon,
    pub alpha: f64,
    pub beta: Option<f64>,
    pub n: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub records: Vec<RunRecord>,
    pub regression: Vec<RegressionRecord>,
    pub selfplay: Vec<SelfPlayRecord>,
    pub failures: Vec<CellFailure>,
}

fn load_bt(cfg: &ExperimentConfig) -> Result<AlignmentInstance, HarnessError> {
    let inst = match &cfg.instance {
        InstanceSource::Preset(name) if name == "reference" => presets::reference_instance()?,
        InstanceSource::Preset(name) => {
            return Err(ConfigError::new("instance.preset", format!("`{name}` is not a Bradley-Terry preset")).into())
        }
        InstanceSource::Generate { seed, num_contexts, num_actions, r_max } => AlignmentInstance::generate_bt(
            *num_contexts,
            *num_actions,
            *r_max,
            &mut stream(*seed, 0, "preset/instance"),
        )
        .map_err(|e| ConfigError::new("instance.generate", e.to_string()))?,
        InstanceSource::File(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError::new("instance.file", format!("{}: {e}", path.display())))?;
            AlignmentInstance::from_json(&text).map_err(|e| ConfigError::new("instance.file", e.to_string()))?
        }
    };
    if !inst.is_bradley_terry() {
        return Err(ConfigError::new("mode", "instance carries no reward table").into());
    }
    Ok(inst)
}

fn class_seed(cfg: &ExperimentConfig) -> u64 {
    match &cfg.instance {
        InstanceSource::Generate { seed, .. } => *seed,
        InstanceSource::Preset(_) => presets::REFERENCE_SEED,
        InstanceSource::File(_) => cfg.master_seed,
    }
}

fn build_class(cfg: &ExperimentConfig, inst: &AlignmentInstance, beta: f64) -> Result<FinitePolicyClass, HarnessError> {
    let recipe: DistractorConfig = cfg.class.distractors.unwrap_or(presets::REFERENCE_DISTRACTOR_CONFIG);
    Ok(build_realizable_class_with(
        inst,
        beta,
        cfg.class.num_distractors,
        &recipe,
        &mut stream(class_seed(cfg), 0, "preset/class"),
    )?)
}

/// Theoretical statistical error at `n` for a setting, used by oracle-`β` mode.
pub fn err_estimate(setting: &PipelineSetting, class_size: usize, zeta: f64, n: usize) -> Result<f64, CoreError> {
    let log_term = (class_size as f64 / zeta).ln();
    let n = n as f64;
    let c = c_factor(setting.local_epsilon())?;
    let mut e = (c * c * log_term / n).sqrt();
    if setting.kind() == PipelineKind::Cdp {
        e += log_term / (n * setting.epsilon().value());
    }
    Ok(e)
}

/// Expands the config into cells and builds the shared world.
pub fn plan(cfg: &ExperimentConfig) -> Result<(World, Vec<Cell>), HarnessError> {
    cfg.validate()?;
    let algorithms = cfg.algorithms();
    let settings = cfg.settings().map_err(|e| ConfigError::new("pipeline", e))?;
    let mut world = World { bt: None, classes: BTreeMap::new(), selfplay: None, regression: None };
    let mut cells = Vec::new();
    for &alg in &algorithms {
        match alg {
            Algorithm::Selfplay => {
                if cfg.instance != InstanceSource::Preset("selfplay".into()) {
                    return Err(ConfigError::new("instance", "selfplay runs on the `selfplay` preset").into());
                }
                if world.selfplay.is_none() {
                    world.selfplay = Some(presets::selfplay_preset()?);
                }
            }
            Algorithm::RegressionLab => {
                if cfg.instance != InstanceSource::Preset("regression_lab".into()) {
                    return Err(ConfigError::new("instance", "regression_lab runs on the `regression_lab` preset").into());
                }
                if world.regression.is_none() {
                    world.regression = Some(presets::regression_lab()?);
                }
            }
            _ => {
                if world.bt.is_none() {
                    world.bt = Some(load_bt(cfg)?);
                }
            }
        }
        for setting in &settings {
            for &n in cfg.n_values() {
                let betas: Vec<Option<f64>> = match alg {
                    Algorithm::Selfplay | Algorithm::RegressionLab => vec![None],
                    _ => match cfg.beta_mode {
                        BetaMode::Oracle => vec![Some(oracle_beta_for(cfg, &mut world, setting, n)?)],
                        _ => cfg.betas().into_iter().map(Some).collect(),
                    },
                };
                for beta in betas {
                    if let Some(b) = beta {
                        ensure_class(cfg, &mut world, b)?;
                    }
                    for seed in 0..cfg.seeds {
                        cells.push(Cell { algorithm: alg, setting: *setting, beta, n, seed });
                    }
                }
            }
        }
    }
    Ok((world, cells))
}

fn ensure_class(cfg: &ExperimentConfig, world: &mut World, beta: f64) -> Result<(), HarnessError> {
    if !world.classes.contains_key(&beta.to_bits()) {
        let inst = world.bt.as_ref().expect("bt instance loaded before classes");
        let class = build_class(cfg, inst, beta)?;
        world.classes.insert(beta.to_bits(), class);
    }
    Ok(())
}

/// `β` from the oracle formula, with `C*` and `V_max` measured on the class
/// built at the configured base `β`.
fn oracle_beta_for(cfg: &ExperimentConfig, world: &mut World, setting: &PipelineSetting, n: usize) -> Result<f64, HarnessError> {
    ensure_class(cfg, world, cfg.beta)?;
    let inst = world.bt.as_ref().expect("bt instance");
    let base = world.class(cfg.beta);
    let c_star = concentrability(base.get(0), inst);
    let v_max = v_max_diagnostic(base, inst, cfg.beta)?;
    let e = err_estimate(setting, base.len(), cfg.zeta, n)?;
    Ok(oracle_beta(c_star, e, v_max, inst.r_max)?.max(BETA_MIN))
}

fn base_record(cell: &Cell) -> RunRecord {
    RunRecord {
        setting: cell.setting.kind().name().to_string(),
        algorithm: cell.algorithm.name().to_string(),
        epsilon: cell.setting.epsilon(),
        alpha: cell.setting.alpha(),
        n: cell.n,
        m: None,
        t: None,
        seed: cell.seed,
        beta: cell.beta,
        chosen: None,
        sg: None,
        dg: None,
        err_stat: None,
        err2_gen: None,
        c_star: None,
        wall_ms: None,
    }
}

fn run_bt_cell(world: &World, cell: &Cell, master_seed: u64) -> Result<RunRecord, CoreError> {
    let inst = world.bt.as_ref().expect("bt instance");
    let beta = cell.beta.expect("bt cells carry β");
    let class = world.class(beta);
    let key = cell_key(cell.n, cell.seed);
    let clean = sample_preference_dataset(inst, cell.n, &mut stream(master_seed, key, "bt/data"))?;
    let observed = apply_pipeline(&clean, &cell.setting, &mut stream(master_seed, key, "bt/channel"))?;
    let (nx, na) = (inst.num_contexts(), inst.num_actions());
    let chosen = match cell.algorithm {
        Algorithm::CdpSample => {
            let spec = LossSpec::CentralScore { beta, r_max: inst.r_max };
            let mut rng = stream(master_seed, key, "bt/fit");
            sample_policy_cdp(class, &inst.pi_ref, &observed, &spec, cell.setting.epsilon().value(), &mut rng)?
        }
        alg => {
            let spec = match alg {
                Algorithm::SquareChipo => {
                    LossSpec::SquareChipo { beta, r_max: inst.r_max, epsilon: cell.setting.local_epsilon() }
                }
                Algorithm::LogChipo => LossSpec::LogChipo { beta, r_max: inst.r_max },
                Algorithm::Dpo => LossSpec::Dpo { beta },
                _ => unreachable!("non-BT algorithm in a BT cell"),
            };
            let counts = PairCounts::from_samples(nx, na, &observed.samples)?;
            argmin_by(class.len(), |i| {
                counts.loss(class.get(i), &inst.pi_ref, &spec).map_err(|e| CoreError::Candidate { index: i, source: Box::new(e) })
            })?
            .0
        }
    };
    let star = class.get(0);
    let fitted = class.get(chosen);
    let mut rec = base_record(cell);
    rec.chosen = Some(chosen);
    rec.sg = Some(subopt_gap(fitted, star, inst)?);
    rec.err_stat = Some(err_stat(fitted, inst, beta)?);
    rec.c_star = Some(concentrability(star, inst));
    Ok(rec)
}

fn selfplay_config(cfg: &ExperimentConfig, cell: &Cell) -> SelfPlayConfig {
    let t = cfg.t.unwrap_or(1);
    let m = cfg.m.unwrap_or(cell.n);
    match cfg.schedule {
        ScheduleKind::Theorem => SelfPlayConfig::theorem(t, m, cell.n, cell.setting),
        ScheduleKind::Fixed => SelfPlayConfig {
            beta: cfg.beta,
            eta: cfg.eta.expect("validated"),
            t,
            m,
            n: cell.n,
            setting: cell.setting,
        },
    }
}

/// Diagnostics of one self-play cell beyond the duality gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfPlayRecord {
    pub n: usize,
    pub m: usize,
    pub t: usize,
    pub seed: u64,
    pub setting: String,
    pub epsilon: Epsilon,
    pub alpha: f64,
    pub chosen_model: usize,
    pub dg: f64,
    /// Largest `|f|` over candidates and rounds, before clipping.
    pub max_abs_f: f64,
    /// `max_abs_f` exceeds the clip radius used as `V_max`.
    pub clip_active: bool,
    /// Minimizing `C` of `subopt(π̂, C) + C·B` over the grid, and that value.
    pub best_c: f64,
    pub bound: f64,
}

/// Runs one self-play cell on a preset.
pub fn run_selfplay(
    preset: &presets::SelfPlayPreset,
    sp: &SelfPlayConfig,
    seed: u64,
    master_seed: u64,
    zeta: f64,
) -> Result<SelfPlayRecord, CoreError> {
    let inst = &preset.instance;
    let key = cell_key(sp.n, seed);
    let clean = sample_preference_dataset(inst, sp.n, &mut stream(master_seed, key, "selfplay/data"))?;
    let observed = apply_pipeline(&clean, &sp.setting, &mut stream(master_seed, key, "selfplay/channel"))?;
    let ell_idx = estimate_preference_model(
        &observed,
        &preset.models,
        &sp.setting,
        &mut stream(master_seed, key, "selfplay/estimate"),
    )?;
    let triples = sample_unlabeled(inst, sp.m, &mut stream(master_seed, key, "selfplay/unlabeled"))?;
    let out = iterative_squarechipo(
        inst,
        preset.models.get(ell_idx),
        &preset.policies,
        sp,
        &triples,
        &mut stream(master_seed, key, "selfplay/iterate"),
    )?;
    let mixture = policy_table(&out.policy, inst);
    let rate = dg_rate_term(&sp.setting, sp.n, sp.m, SELFPLAY_CLIP, preset.models.len(), preset.policies.len(), zeta)?;
    let (best_c, bound) = select_c(&mixture, inst, &preset.policies, rate, &C_GRID)?;
    Ok(SelfPlayRecord {
        n: sp.n,
        m: sp.m,
        t: sp.t,
        seed,
        setting: sp.setting.kind().name().to_string(),
        epsilon: sp.setting.epsilon(),
        alpha: sp.setting.alpha(),
        chosen_model: ell_idx,
        dg: duality_gap(&mixture, inst, &preset.policies),
        max_abs_f: out.max_abs_f,
        clip_active: out.max_abs_f > SELFPLAY_CLIP,
        best_c,
        bound,
    })
}

fn run_selfplay_cell(world: &World, cfg: &ExperimentConfig, cell: &Cell, master_seed: u64) -> Result<CellOutcome, CoreError> {
    let preset = world.selfplay.as_ref().expect("selfplay preset");
    let sp = selfplay_config(cfg, cell);
    let diag = run_selfplay(preset, &sp, cell.seed, master_seed, cfg.zeta)?;
    let mut rec = base_record(cell);
    rec.m = Some(sp.m);
    rec.t = Some(sp.t);
    rec.beta = Some(sp.beta);
    rec.chosen = Some(diag.chosen_model);
    rec.dg = Some(diag.dg);
    Ok(CellOutcome { record: rec, regression: None, selfplay: Some(diag) })
}

fn run_cell(world: &World, cfg: &ExperimentConfig, cell: &Cell, master_seed: u64) -> Result<CellOutcome, CoreError> {
    match cell.algorithm {
        Algorithm::RegressionLab => {
            let lab = world.regression.as_ref().expect("regression preset");
            let r = run_regression_cell(lab, &cell.setting, cell.n, master_seed, cell.seed)?;
            let mut rec = base_record(cell);
            rec.err2_gen = Some(r.err2);
            Ok(CellOutcome { record: rec, regression: Some(r), selfplay: None })
        }
        Algorithm::Selfplay => run_selfplay_cell(world, cfg, cell, master_seed),
        _ => Ok(CellOutcome { record: run_bt_cell(world, cell, master_seed)?, regression: None, selfplay: None }),
    }
}

fn eps_key(e: Epsilon) -> f64 {
    match e {
        Epsilon::Finite(v) => v,
        Epsilon::Infinite => f64::INFINITY,
    }
}

/// Output order: algorithm, setting, ε, α, n, β, seed.
pub fn record_order(a: &RunRecord, b: &RunRecord) -> Ordering {
    a.algorithm
        .cmp(&b.algorithm)
        .then_with(|| a.setting.cmp(&b.setting))
        .then_with(|| eps_key(a.epsilon).total_cmp(&eps_key(b.epsilon)))
        .then_with(|| a.alpha.total_cmp(&b.alpha))
        .then_with(|| a.n.cmp(&b.n))
        .then_with(|| a.beta.unwrap_or(0.0).total_cmp(&b.beta.unwrap_or(0.0)))
        .then_with(|| a.seed.cmp(&b.seed))
}

fn regression_order(a: &RegressionRecord, b: &RegressionRecord) -> Ordering {
    a.setting
        .cmp(&b.setting)
        .then_with(|| eps_key(a.epsilon).total_cmp(&eps_key(b.epsilon)))
        .then_with(|| a.alpha.total_cmp(&b.alpha))
        .then_with(|| a.n.cmp(&b.n))
        .then_with(|| a.seed.cmp(&b.seed))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses rayon's default.
    pub jobs: Option<usize>,
    pub budget: Option<u64>,
    pub timing: bool,
}

/// Plans and executes every cell. Failed cells are collected, not fatal.
#[allow(clippy::result_large_err)]
pub fn execute(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutput, HarnessError> {
    let (world, cells) = plan(cfg)?;
    if let Some(budget) = opts.budget.or(cfg.budget) {
        if cells.len() as u64 > budget {
            return Err(HarnessError::Budget { cells: cells.len() as u64, budget });
        }
    }
    let work = || -> Vec<Result<CellOutcome, CellFailure>> {
        cells
            .par_iter()
            .map(|cell| {
                let start = Instant::now();
                run_cell(&world, cfg, cell, cfg.master_seed)
                    .map(|mut o| {
                        if opts.timing {
                            o.record.wall_ms = Some(start.elapsed().as_secs_f64() * 1e3);
                        }
                        o
                    })
                    .map_err(|e| CellFailure {
                        algorithm: cell.algorithm.name().to_string(),
                        setting: cell.setting.kind().name().to_string(),
                        epsilon: cell.setting.epsilon(),
                        alpha: cell.setting.alpha(),
                        beta: cell.beta,
                        n: cell.n,
                        seed: cell.seed,
                        error: e.to_string(),
                    })
            })
            .collect()
    };
    let results = match opts.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .map_err(|e| ConfigError::new("jobs", e.to_string()))?
            .install(work),
        None => work(),
    };
    let mut out = RunOutput::default();
    for r in results {
        match r {
            Ok(o) => {
                out.records.push(o.record);
                out.regression.extend(o.regression);
                out.selfplay.extend(o.selfplay);
            }
            Err(f) => out.failures.push(f),
        }
    }
    out.records.sort_by(record_order);
    out.regression.sort_by(regression_order);
    out.selfplay.sort_by(|a, b| {
        a.setting
            .cmp(&b.setting)
            .then_with(|| eps_key(a.epsilon).total_cmp(&eps_key(b.epsilon)))
            .then_with(|| a.alpha.total_cmp(&b.alpha))
            .then_with(|| a.n.cmp(&b.n))
            .then_with(|| a.seed.cmp(&b.seed))
    });
    Ok(out)
}

/// Executes `cfg` and writes `runs.csv`, `regression.csv` and `selfplay.csv` (when any),
/// `failures.json` (when any), `summary.json` and `plot.svg` into `out`.
pub fn run_to_dir(cfg: &ExperimentConfig, opts: &RunOptions, out: &Path) -> Result<RunOutput, HarnessError> {
    let output = execute(cfg, opts)?;
    persist::write_bytes(&out.join(persist::RUNS_FILE), &persist::runs_csv(&output.records)?)?;
    if !output.regression.is_empty() {
        persist::write_bytes(&out.join(persist::REGRESSION_FILE), &persist::regression_csv(&output.regression)?)?;
    }
    if !output.selfplay.is_empty() {
        persist::write_bytes(&out.join(persist::SELFPLAY_FILE), &persist::selfplay_csv(&output.selfplay)?)?;
    }
    if !output.failures.is_empty() {
        persist::write_failures(&out.join(persist::FAILURES_FILE), &output.failures)?;
    }
    report::write_summary(&output.records, cfg.zeta, out)?;
    Ok(output)
}
