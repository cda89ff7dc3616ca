//! Iterative Square-χPO for general preferences: estimate a preference model
//! from (possibly corrupted, privatized) labels, then run self-play policy
//! optimization over a finite class.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{AlignmentInstance, FinitePolicyClass, ObservedDataset, PipelineTag, Policy, PreferenceTable, Table};
use crate::error::{Error, Result};
use crate::mechanisms::{c_factor, exp_mechanism_sample, PipelineSetting};
use crate::objectives::{clip, f_from_h, reward_diff_target, Link, LinkTable, PairCounts, SELFPLAY_CLIP};
use crate::rng::sample_categorical;
use crate::solvers::{argmin_by, solve_regularized, CENTRAL_SENSITIVITY};

/// One unlabeled draw `x ∼ ρ`, `a, b ∼ π_ref(·|x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UnlabeledTriple {
    pub x: usize,
    pub a: usize,
    pub b: usize,
}

/// Finite list of candidate preference functions with values in `[−1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceModelClass {
    members: Vec<PreferenceTable>,
}

impl PreferenceModelClass {
    pub fn new(members: Vec<PreferenceTable>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Invalid("preference model class is empty".into()));
        }
        let shape = (members[0].contexts(), members[0].actions());
        for (i, m) in members.iter().enumerate() {
            if (m.contexts(), m.actions()) != shape {
                return Err(Error::Invalid(format!("member {i} has a different shape")));
            }
            m.check_range().map_err(|e| Error::Candidate { index: i, source: Box::new(e) })?;
        }
        Ok(PreferenceModelClass { members })
    }

    pub fn members(&self) -> &[PreferenceTable] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn get(&self, i: usize) -> &PreferenceTable {
        &self.members[i]
    }
}

/// `Σ (ℓ(x, a¹, a⁰) − c·(2z − 1))²` for every candidate.
pub fn preference_scores(counts: &PairCounts, class: &PreferenceModelClass, c: f64) -> Vec<f64> {
    let (nx, na) = (class.get(0).contexts(), class.get(0).actions());
    class
        .members()
        .iter()
        .map(|ell| {
            let mut total = 0.0;
            for x in 0..nx {
                for a1 in 0..na {
                    for a0 in 0..na {
                        let [n0, n1] = counts.get(x, a1, a0);
                        if n0 + n1 > 0 {
                            let v = ell.get(x, a1, a0);
                            total += n1 as f64 * (v - c).powi(2) + n0 as f64 * (v + c).powi(2);
                        }
                    }
                }
            }
            total
        })
        .collect()
}

/// Local branch: debiased least-squares argmin. Central branch: exponential
/// mechanism over the `c = 1` scores with `Δ = 4`.
pub fn estimate_preference_model<R: Rng + ?Sized>(
    dataset: &ObservedDataset,
    class: &PreferenceModelClass,
    setting: &PipelineSetting,
    rng: &mut R,
) -> Result<usize> {
    let central = matches!(setting, PipelineSetting::Cdp { .. });
    if central != (dataset.tag == PipelineTag::CdpInput) {
        return Err(Error::Config(format!(
            "{:?} dataset cannot be fit with the {} branch",
            dataset.tag,
            setting.kind().name()
        )));
    }
    if dataset.is_empty() {
        return Err(Error::Input("no preference data".into()));
    }
    let (nx, na) = (class.get(0).contexts(), class.get(0).actions());
    let counts = PairCounts::from_samples(nx, na, &dataset.samples)?;
    if central {
        let scores = preference_scores(&counts, class, 1.0);
        exp_mechanism_sample(&scores, setting.epsilon().value(), CENTRAL_SENSITIVITY, rng)
    } else {
        let scores = preference_scores(&counts, class, c_factor(setting.local_epsilon())?);
        Ok(argmin_by(scores.len(), |i| Ok(scores[i]))?.0)
    }
}

/// `m` i.i.d. triples.
pub fn sample_unlabeled<R: Rng + ?Sized>(instance: &AlignmentInstance, m: usize, rng: &mut R) -> Result<Vec<UnlabeledTriple>> {
    if m == 0 {
        return Err(Error::param("m", "must be at least 1"));
    }
    Ok((0..m)
        .map(|_| {
            let x = sample_categorical(&instance.rho, rng);
            let row = instance.pi_ref.row(x);
            let a = sample_categorical(row, rng);
            let b = sample_categorical(row, rng);
            UnlabeledTriple { x, a, b }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// `β = 1/√T`, `η = 1/T`.
    Theorem,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfPlayConfig {
    pub beta: f64,
    pub eta: f64,
    pub t: usize,
    pub m: usize,
    pub n: usize,
    pub setting: PipelineSetting,
}

impl SelfPlayConfig {
    /// The theorem schedule `β = 1/√T`, `η = 1/T`.
    pub fn theorem(t: usize, m: usize, n: usize, setting: PipelineSetting) -> Self {
        let tf = t as f64;
        SelfPlayConfig { beta: 1.0 / tf.sqrt(), eta: 1.0 / tf, t, m, n, setting }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::param("beta", format!("must be positive, got {}", self.beta)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::param("eta", format!("must be positive, got {}", self.eta)));
        }
        if self.t == 0 || self.m == 0 || self.n == 0 {
            return Err(Error::param("T", "T, m and n must all be at least 1"));
        }
        self.setting.validate()?;
        Ok(())
    }
}

/// One self-play step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub t: usize,
    pub chosen_index: usize,
    pub loss: f64,
    /// The shared `b_t(x)` draw for every context.
    pub b_t: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfPlayOutput {
    /// Uniform mixture of `π¹ … π^T`.
    pub policy: Policy,
    pub iterations: Vec<IterationLog>,
    /// `max |f^{β,η}|` seen over all candidates and iterations.
    pub max_abs_f: f64,
}

/// Unlabeled triples aggregated per `(x, a, b)` cell.
fn triple_counts(triples: &[UnlabeledTriple], nx: usize, na: usize) -> Result<Vec<u64>> {
    let mut c = vec![0u64; nx * na * na];
    for t in triples {
        if t.x >= nx || t.a >= na || t.b >= na {
            return Err(Error::Input(format!("triple {t:?} out of range")));
        }
        c[(t.x * na + t.a) * na + t.b] += 1;
    }
    Ok(c)
}

/// Self-play loss of every class member against `πᵗ`, given shared `b_t`.
/// Also returns the largest `|f|` seen.
#[allow(clippy::too_many_arguments)]
fn iteration_losses(
    links: &[LinkTable],
    links_t: &LinkTable,
    ell_hat: &PreferenceTable,
    counts: &[u64],
    b_t: &[usize],
    beta: f64,
    eta: f64,
    nx: usize,
    na: usize,
) -> Result<(Vec<f64>, f64)> {
    let mut max_f = 0.0f64;
    let mut out = Vec::with_capacity(links.len());
    for (i, l) in links.iter().enumerate() {
        let mut total = 0.0;
        for x in 0..nx {
            for a in 0..na {
                for b in 0..na {
                    let n = counts[(x * na + a) * na + b];
                    if n == 0 {
                        continue;
                    }
                    let h = l.diff(x, a, b).map_err(|e| Error::Candidate { index: i, source: Box::new(e) })?;
                    let f = f_from_h(h, links_t.diff(x, a, b)?, beta, eta);
                    max_f = max_f.max(f.abs());
                    let r = clip(f, SELFPLAY_CLIP) - reward_diff_target(ell_hat, b_t, x, a, b);
                    total += n as f64 * r * r;
                }
            }
        }
        out.push(total);
    }
    Ok((out, max_f))
}

/// Runs `T` rounds starting from `π¹ = π_ref`: at round `t` one `b_t(x) ∼ πᵗ(x)`
/// is drawn per context, and `π^{t+1}` is the class member minimizing the
/// clipped self-play regression on the fixed unlabeled set.
pub fn iterative_squarechipo<R: Rng + ?Sized>(
    instance: &AlignmentInstance,
    ell_hat: &PreferenceTable,
    class: &FinitePolicyClass,
    cfg: &SelfPlayConfig,
    triples: &[UnlabeledTriple],
    rng: &mut R,
) -> Result<SelfPlayOutput> {
    cfg.validate()?;
    let (nx, na) = (instance.num_contexts(), instance.num_actions());
    let counts = triple_counts(triples, nx, na)?;
    let links: Vec<LinkTable> = class.members().iter().map(|p| LinkTable::new(p, &instance.pi_ref, Link::Phi)).collect();
    let mut current = instance.pi_ref.clone();
    let mut components = vec![current.clone()];
    let mut iterations = Vec::with_capacity(cfg.t.saturating_sub(1));
    let mut max_abs_f = 0.0f64;
    for t in 1..cfg.t {
        let b_t: Vec<usize> = (0..nx).map(|x| sample_categorical(current.row(x), rng)).collect();
        let links_t = LinkTable::new(&current, &instance.pi_ref, Link::Phi);
        let (losses, mf) = iteration_losses(&links, &links_t, ell_hat, &counts, &b_t, cfg.beta, cfg.eta, nx, na)
            .map_err(|e| Error::Iteration { iteration: t, source: Box::new(e) })?;
        max_abs_f = max_abs_f.max(mf);
        let (idx, loss) = argmin_by(losses.len(), |i| Ok(losses[i]))
            .map_err(|e| Error::Iteration { iteration: t, source: Box::new(e) })?;
        current = class.get(idx).clone();
        components.push(current.clone());
        iterations.push(IterationLog { t, chosen_index: idx, loss, b_t });
    }
    Ok(SelfPlayOutput { policy: Policy::Mixture(components), iterations, max_abs_f })
}

/// Recomputes the loss of one candidate at a logged iteration, for checking
/// that the objective is fixed within an iteration.
pub fn replay_iteration_loss(
    instance: &AlignmentInstance,
    ell_hat: &PreferenceTable,
    candidate: &Table,
    previous: &Table,
    log: &IterationLog,
    cfg: &SelfPlayConfig,
    triples: &[UnlabeledTriple],
) -> Result<f64> {
    crate::objectives::policy_opt_loss(candidate, previous, &instance.pi_ref, ell_hat, triples, &log.b_t, cfg.beta, cfg.eta)
}

/// Mirror-descent iterates against the true preference function, used to
/// seed a class with near-equilibrium members: each step solves
/// `ℓ*(x, a, πᵏ) + (β/η)φ(πᵏ/π_ref) = (1 + 1/η)β·φ(π/π_ref) + Z(x)`.
pub fn mirror_descent_iterates(instance: &AlignmentInstance, beta: f64, eta: f64, steps: usize) -> Result<Vec<Table>> {
    let (nx, na) = (instance.num_contexts(), instance.num_actions());
    let mut current = instance.pi_ref.clone();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut reward = Table::filled(nx, na, 0.0);
        for x in 0..nx {
            for a in 0..na {
                let vs: f64 = (0..na).map(|b| current.get(x, b) * instance.ell(x, a, b)).sum();
                let u = current.get(x, a) / instance.pi_ref.get(x, a);
                reward.set(x, a, vs + beta / eta * crate::objectives::phi(u)?);
            }
        }
        current = solve_regularized(&reward, &instance.pi_ref, (1.0 + 1.0 / eta) * beta)?;
        out.push(current.clone());
    }
    Ok(out)
}
