//! Least-squares generalization lab on a finite feature domain with a finite
//! hypothesis class, under the same label channels as the alignment data.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{dirichlet, PreferenceSample};
use crate::error::{Error, Result};
use crate::mechanisms::{apply_pipeline, c_factor, exp_mechanism_distribution, exp_mechanism_sample, Epsilon, PipelineSetting};
use crate::rng::{bernoulli, sample_categorical, stream};
use crate::solvers::{argmin_by, CENTRAL_SENSITIVITY};
use crate::stats;

/// Realizable regression world: `E[y′ | u] = h*(u)` with `h* ∈ H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionInstance {
    pub rho: Vec<f64>,
    pub hypotheses: Vec<Vec<f64>>,
    pub h_star: usize,
}

impl RegressionInstance {
    pub fn new(rho: Vec<f64>, hypotheses: Vec<Vec<f64>>, h_star: usize) -> Result<Self> {
        let inst = RegressionInstance { rho, hypotheses, h_star };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.rho.len();
        if k == 0 {
            return Err(Error::Invalid("feature domain is empty".into()));
        }
        if self.rho.iter().any(|&p| !(p > 0.0)) || (self.rho.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid("rho must be a positive probability vector".into()));
        }
        if self.h_star >= self.hypotheses.len() {
            return Err(Error::Invalid(format!(
                "h_star index {} outside a class of {}",
                self.h_star,
                self.hypotheses.len()
            )));
        }
        for (i, h) in self.hypotheses.iter().enumerate() {
            if h.len() != k || h.iter().any(|v| !(-1.0..=1.0).contains(v)) {
                return Err(Error::Invalid(format!("hypothesis {i} must map {k} points into [-1, 1]")));
            }
        }
        Ok(())
    }

    pub fn domain_size(&self) -> usize {
        self.rho.len()
    }

    pub fn h_star_values(&self) -> &[f64] {
        &self.hypotheses[self.h_star]
    }
}

/// One labelled point; `y` is on the ±1 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegressionSample {
    pub u: usize,
    pub y: i8,
}

/// `u ∼ ρ′`, `y′ = 1` with probability `(1 + h*(u))/2`, else `−1`.
pub fn gen_regression_data<R: Rng + ?Sized>(instance: &RegressionInstance, n: usize, rng: &mut R) -> Result<Vec<RegressionSample>> {
    if n == 0 {
        return Err(Error::param("n", "must be at least 1"));
    }
    let h = instance.h_star_values();
    Ok((0..n)
        .map(|_| {
            let u = sample_categorical(&instance.rho, rng);
            let y = if bernoulli(0.5 * (1.0 + h[u]), rng) { 1 } else { -1 };
            RegressionSample { u, y }
        })
        .collect())
}

/// Runs the ±1 labels through the bit channel of `setting`.
pub fn apply_regression_channel<R: Rng + ?Sized>(
    data: &[RegressionSample],
    setting: &PipelineSetting,
    rng: &mut R,
) -> Result<Vec<RegressionSample>> {
    let bits: Vec<PreferenceSample> = data
        .iter()
        .map(|s| PreferenceSample { x: s.u, a0: 0, a1: 0, y: u8::from(s.y > 0) })
        .collect();
    let observed = apply_pipeline(&bits, setting, rng)?;
    Ok(observed
        .samples
        .iter()
        .map(|s| RegressionSample { u: s.x, y: if s.y == 1 { 1 } else { -1 } })
        .collect())
}

/// Per-point counts of `y = −1` and `y = +1`.
fn label_counts(data: &[RegressionSample], k: usize) -> Result<Vec<[u64; 2]>> {
    let mut c = vec![[0u64; 2]; k];
    for s in data {
        if s.u >= k || !(s.y == 1 || s.y == -1) {
            return Err(Error::Input(format!("sample {s:?} out of range")));
        }
        c[s.u][usize::from(s.y > 0)] += 1;
    }
    Ok(c)
}

/// `Σᵢ (h(uᵢ) − c·yᵢ)²` for every hypothesis.
pub fn square_losses(data: &[RegressionSample], hypotheses: &[Vec<f64>], c: f64) -> Result<Vec<f64>> {
    let k = hypotheses.first().map_or(0, Vec::len);
    let counts = label_counts(data, k)?;
    Ok(hypotheses
        .iter()
        .map(|h| {
            counts
                .iter()
                .zip(h)
                .map(|([neg, pos], v)| *pos as f64 * (v - c).powi(2) + *neg as f64 * (v + c).powi(2))
                .sum()
        })
        .collect())
}

/// `argmin_h Σ (h(uᵢ) − c(ε)zᵢ)²`, lowest index on ties.
pub fn fit_ls_local(data: &[RegressionSample], hypotheses: &[Vec<f64>], epsilon: Epsilon) -> Result<usize> {
    if data.is_empty() {
        return Err(Error::Input("no data to fit".into()));
    }
    let losses = square_losses(data, hypotheses, c_factor(epsilon)?)?;
    Ok(argmin_by(losses.len(), |i| Ok(losses[i]))?.0)
}

/// Exact output distribution of [`fit_ls_cdp`].
pub fn cdp_hypothesis_distribution(data: &[RegressionSample], hypotheses: &[Vec<f64>], epsilon: f64) -> Result<Vec<f64>> {
    exp_mechanism_distribution(&square_losses(data, hypotheses, 1.0)?, epsilon, CENTRAL_SENSITIVITY)
}

/// Exponential-mechanism draw with scores `Σ (h(uᵢ) − yᵢ)²` and `Δ = 4`.
pub fn fit_ls_cdp<R: Rng + ?Sized>(data: &[RegressionSample], hypotheses: &[Vec<f64>], epsilon: f64, rng: &mut R) -> Result<usize> {
    exp_mechanism_sample(&square_losses(data, hypotheses, 1.0)?, epsilon, CENTRAL_SENSITIVITY, rng)
}

/// `Σ_u ρ′(u)(ĥ(u) − h*(u))²`.
pub fn gen_error(index: usize, instance: &RegressionInstance) -> Result<f64> {
    let h = instance
        .hypotheses
        .get(index)
        .ok_or_else(|| Error::Input(format!("hypothesis {index} out of range")))?;
    Ok(instance
        .rho
        .iter()
        .zip(h)
        .zip(instance.h_star_values())
        .map(|((w, a), b)| w * (a - b).powi(2))
        .sum())
}

/// Fits one dataset after it has passed through the channel of `setting`.
pub fn fit_for_setting<R: Rng + ?Sized>(
    observed: &[RegressionSample],
    hypotheses: &[Vec<f64>],
    setting: &PipelineSetting,
    rng: &mut R,
) -> Result<usize> {
    match *setting {
        PipelineSetting::Cdp { epsilon, .. } => fit_ls_cdp(observed, hypotheses, epsilon.value(), rng),
        other => fit_ls_local(observed, hypotheses, other.local_epsilon()),
    }
}

/// One `(n, seed)` cell of a bound-curve experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionRecord {
    pub n: usize,
    pub seed: u64,
    pub setting: String,
    pub epsilon: Epsilon,
    pub alpha: f64,
    pub err2: f64,
}

/// Runs one cell with streams derived from `(master_seed, seed)`, so the
/// clean draw for a seed is shared by every setting.
pub fn run_regression_cell(
    instance: &RegressionInstance,
    setting: &PipelineSetting,
    n: usize,
    master_seed: u64,
    seed: u64,
) -> Result<RegressionRecord> {
    let cell = (n as u64) << 32 | seed;
    let data = gen_regression_data(instance, n, &mut stream(master_seed, cell, "regression/data"))?;
    let observed = apply_regression_channel(&data, setting, &mut stream(master_seed, cell, "regression/channel"))?;
    let chosen = fit_for_setting(&observed, &instance.hypotheses, setting, &mut stream(master_seed, cell, "regression/fit"))?;
    Ok(RegressionRecord {
        n,
        seed,
        setting: setting.kind().name().to_string(),
        epsilon: setting.epsilon(),
        alpha: setting.alpha(),
        err2: gen_error(chosen, instance)?,
    })
}

/// Every `(n, seed)` cell for `n` in the grid and `seed < num_seeds`, sorted
/// by `(n, seed)`.
pub fn bound_curve_experiment(
    instance: &RegressionInstance,
    setting: &PipelineSetting,
    n_grid: &[usize],
    num_seeds: u64,
    master_seed: u64,
) -> Result<Vec<RegressionRecord>> {
    if n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("n grid must be strictly increasing".into()));
    }
    let cells: Vec<(usize, u64)> = n_grid.iter().flat_map(|&n| (0..num_seeds).map(move |s| (n, s))).collect();
    cells
        .par_iter()
        .map(|&(n, s)| run_regression_cell(instance, setting, n, master_seed, s))
        .collect()
}

/// Mean and standard error of `err2` per grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub mean: f64,
    pub stderr: Option<f64>,
}

pub fn summarize_curve(records: &[RegressionRecord]) -> Vec<CurvePoint> {
    let mut ns: Vec<usize> = records.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    ns.into_iter()
        .map(|n| {
            let v: Vec<f64> = records.iter().filter(|r| r.n == n).map(|r| r.err2).collect();
            CurvePoint { n, mean: stats::mean(&v).unwrap_or(f64::NAN), stderr: stats::stderr(&v) }
        })
        .collect()
}

/// Default lab world: `|U| = 8`, `ρ′ ∼ Dirichlet(4)`, `h* ∼ U[−0.6, 0.6]`, and
/// 15 distractors `clip(h* + δ·s)` where `s` is a signed ±1 threshold step
/// and the offsets `δ` are spread log-uniformly over `[0.004, 1]`.
pub fn lab_preset<R: Rng + ?Sized>(rng: &mut R) -> Result<RegressionInstance> {
    const K: usize = 8;
    const DISTRACTORS: usize = 15;
    let rho = dirichlet(&[4.0; K], rng);
    let h_star: Vec<f64> = (0..K).map(|_| rng.random_range(-0.6..=0.6)).collect();
    let (lo, hi) = (0.004f64.ln(), 1.0f64.ln());
    let mut hypotheses = vec![h_star.clone()];
    for k in 0..DISTRACTORS {
        let u: f64 = rng.random();
        let delta = (lo + (k as f64 + u) / DISTRACTORS as f64 * (hi - lo)).exp();
        let threshold = rng.random_range(1..K);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let h = h_star
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let step = if i >= threshold { 1.0 } else { -1.0 };
                (v + delta * sign * step).clamp(-1.0, 1.0)
            })
            .collect();
        hypotheses.push(h);
    }
    RegressionInstance::new(rho, hypotheses, 0)
}
