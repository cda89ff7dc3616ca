//! Policy fitting and the regularized-optimum solver.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{dirichlet, AlignmentInstance, FinitePolicyClass, LogLinearClass, ObservedDataset, Table};
use crate::error::{Error, Result};
use crate::mechanisms::{exp_mechanism_distribution, exp_mechanism_sample};
use crate::objectives::{central_score, phi, LossSpec};

/// Sensitivity of the central score: every per-sample term lies in `[0, 4]`.
pub const CENTRAL_SENSITIVITY: f64 = 4.0;

/// Floor returned by [`oracle_beta`] when the statistical error is zero.
pub const BETA_MIN: f64 = 1e-4;

const ROOT_TOL: f64 = 1e-12;

/// Exhaustive argmin over a finite list of candidates. Ties go to the lowest
/// index; a failing candidate aborts with its index attached.
pub fn fit_finite<F>(class: &FinitePolicyClass, mut loss: F) -> Result<(usize, f64)>
where
    F: FnMut(usize, &Table) -> Result<f64>,
{
    argmin_by(class.len(), |i| loss(i, class.get(i)))
}

/// Lowest-index argmin of `loss(i)` over `0..len`.
pub fn argmin_by<F>(len: usize, mut loss: F) -> Result<(usize, f64)>
where
    F: FnMut(usize) -> Result<f64>,
{
    if len == 0 {
        return Err(Error::Input("cannot minimize over an empty class".into()));
    }
    let mut best = (0, f64::INFINITY);
    for i in 0..len {
        let v = loss(i).map_err(|e| Error::Candidate {
            index: i,
            source: Box::new(e),
        })?;
        if v.is_nan() {
            return Err(Error::Candidate {
                index: i,
                source: Box::new(Error::Domain("loss is NaN".into())),
            });
        }
        if v < best.1 || i == 0 {
            best = (i, v);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    Constant { step: f64 },
    /// `step / √t` at iteration `t ≥ 1`.
    InvSqrt { step: f64 },
}

impl StepSchedule {
    fn at(self, t: usize) -> f64 {
        match self {
            StepSchedule::Constant { step } => step,
            StepSchedule::InvSqrt { step } => step / (t as f64).sqrt(),
        }
    }

    fn base(self) -> f64 {
        match self {
            StepSchedule::Constant { step } | StepSchedule::InvSqrt { step } => step,
        }
    }
}

/// Projected gradient descent settings. The box comes from the class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GDConfig {
    pub schedule: StepSchedule,
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for GDConfig {
    fn default() -> Self {
        GDConfig {
            schedule: StepSchedule::Constant { step: 0.01 },
            max_iters: 1000,
            grad_tol: 1e-6,
        }
    }
}

impl GDConfig {
    pub fn validate(&self) -> Result<()> {
        let s = self.schedule.base();
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::param("step", format!("must be positive, got {s}")));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::param("grad_tol", format!("must be positive, got {}", self.grad_tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdResult {
    pub theta: Vec<f64>,
    /// Loss at every visited iterate, starting with `θ₀`.
    pub trajectory: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Full-batch projected gradient descent on the class box. Stops at the first
/// iterate whose projected-gradient norm is within `grad_tol`.
pub fn fit_loglinear<F>(class: &LogLinearClass, mut loss_grad: F, cfg: &GDConfig, theta0: &[f64]) -> Result<GdResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate()?;
    if !class.contains(theta0) {
        return Err(Error::Input("initial parameter lies outside the box".into()));
    }
    let mut theta = theta0.to_vec();
    let mut trajectory = Vec::new();
    for t in 0..=cfg.max_iters {
        let (value, grad) = loss_grad(&theta)?;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Solver {
                context: t,
                reason: format!("non-finite loss or gradient at iteration {t}: loss {value}, theta {theta:?}"),
            });
        }
        trajectory.push(value);
        // gradient mapping: (θ − P(θ − g)) reduces to g in the interior
        let mut probe: Vec<f64> = theta.iter().zip(&grad).map(|(x, g)| x - g).collect();
        class.project(&mut probe);
        let mapped: Vec<f64> = theta.iter().zip(&probe).map(|(x, p)| x - p).collect();
        if norm(&mapped) <= cfg.grad_tol {
            return Ok(GdResult { theta, trajectory, iterations: t, converged: true });
        }
        if t == cfg.max_iters {
            break;
        }
        let step = cfg.schedule.at(t + 1);
        for (x, g) in theta.iter_mut().zip(&grad) {
            *x -= step * g;
        }
        class.project(&mut theta);
    }
    Ok(GdResult {
        theta,
        trajectory,
        iterations: cfg.max_iters,
        converged: false,
    })
}

fn central_params(spec: &LossSpec) -> Result<()> {
    match spec {
        LossSpec::CentralScore { .. } => spec.validate(),
        other => Err(Error::Mode(format!("central-DP sampling needs a central_score spec, got {other:?}"))),
    }
}

/// Central score of every candidate.
pub fn central_scores(class: &FinitePolicyClass, pi_ref: &Table, dataset: &ObservedDataset, spec: &LossSpec) -> Result<Vec<f64>> {
    central_params(spec)?;
    class
        .members()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            central_score(p, pi_ref, dataset, spec).map_err(|e| Error::Candidate { index: i, source: Box::new(e) })
        })
        .collect()
}

/// Exact output distribution of [`sample_policy_cdp`].
pub fn cdp_distribution(
    class: &FinitePolicyClass,
    pi_ref: &Table,
    dataset: &ObservedDataset,
    spec: &LossSpec,
    epsilon: f64,
) -> Result<Vec<f64>> {
    exp_mechanism_distribution(&central_scores(class, pi_ref, dataset, spec)?, epsilon, CENTRAL_SENSITIVITY)
}

/// Draws a policy index with probability `∝ exp(−ε/8 · score)`.
pub fn sample_policy_cdp<R: Rng + ?Sized>(
    class: &FinitePolicyClass,
    pi_ref: &Table,
    dataset: &ObservedDataset,
    spec: &LossSpec,
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    exp_mechanism_sample(&central_scores(class, pi_ref, dataset, spec)?, epsilon, CENTRAL_SENSITIVITY, rng)
}

/// Solves `w + e^w = v` by safeguarded Newton; the root `e^w` is `φ⁻¹(v)`.
pub fn phi_inverse_log(v: f64) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::Domain(format!("phi inverse of non-finite value {v}")));
    }
    let (mut lo, mut hi) = if v < 1.0 { (v - 1.0, v) } else { (0.0, v.ln()) };
    let g = |w: f64| w + w.exp() - v;
    let mut w = 0.5 * (lo + hi);
    for _ in 0..200 {
        let gw = g(w);
        if gw == 0.0 {
            return Ok(w);
        }
        if gw < 0.0 {
            lo = w;
        } else {
            hi = w;
        }
        let newton = w - gw / (1.0 + w.exp());
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - w).abs() <= ROOT_TOL * w.abs().max(1.0) {
            // one more Newton step lands at machine precision
            let polish = next - g(next) / (1.0 + next.exp());
            return Ok(if polish.is_finite() { polish } else { next });
        }
        w = next;
    }
    Ok(w)
}

/// `φ⁻¹(v)`, the unique `u > 0` with `u + log u = v`.
pub fn phi_inverse(v: f64) -> Result<f64> {
    Ok(phi_inverse_log(v)?.exp())
}

/// For one context, finds the row `p` with `r_a − coef·φ(p_a/q_a) = Z` for
/// every action and `Σ p = 1`. Returns the row and `Z`.
pub fn solve_regularized_row(reward: &[f64], q: &[f64], coef: f64, context: usize) -> Result<(Vec<f64>, f64)> {
    if !(coef > 0.0 && coef.is_finite()) {
        return Err(Error::param("beta", format!("must be positive, got {coef}")));
    }
    let mass = |z: f64| -> Result<f64> {
        reward
            .iter()
            .zip(q)
            .try_fold(0.0, |acc, (&r, &qa)| Ok(acc + qa * phi_inverse((r - z) / coef)?))
    };
    let r_max = reward.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let r_min = reward.iter().copied().fold(f64::INFINITY, f64::min);
    let q_min = q.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = r_max - coef;
    let mut lo = r_min - coef * phi(1.0 / q_min)?;
    let mut widened = 0;
    while !(mass(lo)? >= 1.0 && mass(hi)? <= 1.0) {
        widened += 1;
        if widened > 60 {
            return Err(Error::Solver {
                context,
                reason: format!("could not bracket the normalizer (lo {lo}, hi {hi})"),
            });
        }
        let w = (hi - lo).max(1.0);
        lo -= w;
        hi += w;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= ROOT_TOL * mid.abs().max(1.0) {
            break;
        }
        if mass(mid)? > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let z = 0.5 * (lo + hi);
    let mut row: Vec<f64> = reward
        .iter()
        .zip(q)
        .map(|(&r, &qa)| Ok(qa * phi_inverse((r - z) / coef)?))
        .collect::<Result<_>>()?;
    let s: f64 = row.iter().sum();
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::Solver {
            context,
            reason: format!("row mass {s} at normalizer {z}"),
        });
    }
    row.iter_mut().for_each(|p| *p /= s);
    if let Some(a) = row.iter().position(|&p| !(p > 0.0)) {
        return Err(Error::Solver {
            context,
            reason: format!("action {a} underflowed to zero probability"),
        });
    }
    Ok((row, z))
}

/// Row-wise [`solve_regularized_row`] over a reward table.
pub fn solve_regularized(reward: &Table, pi_ref: &Table, coef: f64) -> Result<Table> {
    let mut data = Vec::with_capacity(reward.rows() * reward.cols());
    for x in 0..reward.rows() {
        data.extend(solve_regularized_row(reward.row(x), pi_ref.row(x), coef, x)?.0);
    }
    Table::new(reward.rows(), reward.cols(), data)
}

/// The maximizer `π*_β` of the mixed χ²/KL-regularized objective, from the
/// stationarity condition `r*(x,a) = βφ(π/π_ref) + Z(x)`.
pub fn solve_pi_beta_star(instance: &AlignmentInstance, beta: f64) -> Result<Table> {
    solve_regularized(instance.reward()?, &instance.pi_ref, beta)
}

/// Per-context standard deviation over actions of `r*(x,a) − βφ(π/π_ref)`.
pub fn stationarity_residuals(policy: &Table, instance: &AlignmentInstance, beta: f64) -> Result<Vec<f64>> {
    let reward = instance.reward()?;
    (0..policy.rows())
        .map(|x| {
            let vals: Vec<f64> = (0..policy.cols())
                .map(|a| Ok(reward.get(x, a) - beta * phi(policy.get(x, a) / instance.pi_ref.get(x, a))?))
                .collect::<Result<_>>()?;
            Ok(crate::stats::population_sd(&vals))
        })
        .collect()
}

/// How distractors are drawn around `π*_β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistractorConfig {
    pub weight_lo: f64,
    pub weight_hi: f64,
    /// Stratify the weights log-uniformly over `[weight_lo, weight_hi]`
    /// instead of drawing them uniformly.
    pub log_stratified: bool,
    /// Keep only distractors whose value does not exceed `J(π*_β)`.
    pub dominated_only: bool,
}

impl Default for DistractorConfig {
    fn default() -> Self {
        DistractorConfig {
            weight_lo: 0.1,
            weight_hi: 0.5,
            log_stratified: false,
            dominated_only: false,
        }
    }
}

const MAX_DISTRACTOR_ATTEMPTS: usize = 10_000;

/// `{π*_β}` followed by `num_distractors` perturbations, each mixing every
/// row of `π*_β` with a flat-Dirichlet row at a weight in `[0.1, 0.5]`.
pub fn build_realizable_class<R: Rng + ?Sized>(
    instance: &AlignmentInstance,
    beta: f64,
    num_distractors: usize,
    rng: &mut R,
) -> Result<FinitePolicyClass> {
    build_realizable_class_with(instance, beta, num_distractors, &DistractorConfig::default(), rng)
}

pub fn build_realizable_class_with<R: Rng + ?Sized>(
    instance: &AlignmentInstance,
    beta: f64,
    num_distractors: usize,
    cfg: &DistractorConfig,
    rng: &mut R,
) -> Result<FinitePolicyClass> {
    if !(0.0 < cfg.weight_lo && cfg.weight_lo <= cfg.weight_hi && cfg.weight_hi <= 1.0) {
        return Err(Error::param("weight", format!("need 0 < lo ≤ hi ≤ 1, got [{}, {}]", cfg.weight_lo, cfg.weight_hi)));
    }
    let star = solve_pi_beta_star(instance, beta)?;
    let j_star = crate::eval::value_j(&star, instance)?;
    let (nx, na) = (star.rows(), star.cols());
    let flat = vec![1.0; na];
    let mut members = vec![star.clone()];
    for k in 0..num_distractors {
        let w = if cfg.log_stratified {
            let (l, h) = (cfg.weight_lo.ln(), cfg.weight_hi.ln());
            let u: f64 = rng.random();
            (l + (k as f64 + u) / num_distractors as f64 * (h - l)).exp()
        } else {
            rng.random_range(cfg.weight_lo..=cfg.weight_hi)
        };
        let mut attempt = 0;
        let member = loop {
            let mut data = Vec::with_capacity(nx * na);
            for x in 0..nx {
                let d = dirichlet(&flat, rng);
                data.extend(star.row(x).iter().zip(&d).map(|(p, t)| (1.0 - w) * p + w * t));
            }
            let mut t = Table::new(nx, na, data)?;
            for x in 0..nx {
                let s: f64 = t.row(x).iter().sum();
                t.row_mut(x).iter_mut().for_each(|p| *p /= s);
            }
            if !cfg.dominated_only || crate::eval::value_j(&t, instance)? <= j_star {
                break t;
            }
            attempt += 1;
            if attempt >= MAX_DISTRACTOR_ATTEMPTS {
                return Err(Error::Solver {
                    context: k,
                    reason: "no dominated distractor found".into(),
                });
            }
        };
        members.push(member);
    }
    FinitePolicyClass::new(members)
}

/// `√(2/C*) · V_max · err_stat / R_max`, or [`BETA_MIN`] when `err_stat = 0`.
pub fn oracle_beta(c_star: f64, err_stat: f64, v_max: f64, r_max: f64) -> Result<f64> {
    if !(c_star >= 1.0 && c_star.is_finite()) {
        return Err(Error::param("c_star", format!("must be at least 1, got {c_star}")));
    }
    if !(err_stat >= 0.0 && err_stat.is_finite()) {
        return Err(Error::param("err_stat", format!("must be non-negative, got {err_stat}")));
    }
    if !(v_max > 0.0 && r_max > 0.0) {
        return Err(Error::param("v_max", "V_max and R_max must be positive"));
    }
    if err_stat == 0.0 {
        return Ok(BETA_MIN);
    }
    Ok((2.0 / c_star).sqrt() * v_max * err_stat / r_max)
}
