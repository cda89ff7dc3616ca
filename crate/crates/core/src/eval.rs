//! Exact evaluators over finite instances.

use serde::{Deserialize, Serialize};

use crate::domain::{AlignmentInstance, FinitePolicyClass, Policy, Table};
use crate::error::{Error, Result};
use crate::mechanisms::{c_factor, Epsilon, PipelineSetting};
use crate::objectives::{clip, phi};
use crate::stats::{ols, LineFit};

/// `J(π) = E_{x∼ρ, a∼π(·|x)} r*(x,a)`.
pub fn value_j(policy: &Table, instance: &AlignmentInstance) -> Result<f64> {
    let reward = instance.reward()?;
    Ok(instance
        .rho
        .iter()
        .enumerate()
        .map(|(x, &w)| w * policy.row(x).iter().zip(reward.row(x)).map(|(p, r)| p * r).sum::<f64>())
        .sum())
}

/// `J(comparator) − J(policy)`.
pub fn subopt_gap(policy: &Table, comparator: &Table, instance: &AlignmentInstance) -> Result<f64> {
    Ok(value_j(comparator, instance)? - value_j(policy, instance)?)
}

/// `Σ_x ρ(x) Σ_a π(a|x)²/π_ref(a|x)`.
pub fn concentrability(policy: &Table, instance: &AlignmentInstance) -> f64 {
    instance
        .rho
        .iter()
        .enumerate()
        .map(|(x, &w)| {
            w * policy
                .row(x)
                .iter()
                .zip(instance.pi_ref.row(x))
                .map(|(p, q)| p * p / q)
                .sum::<f64>()
        })
        .sum()
}

/// `½ Σ_a q(a)(p(a)/q(a) − 1)²`.
pub fn chi2_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Input("distributions differ in length".into()));
    }
    if let Some(i) = q.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Domain(format!("reference mass at {i} is {}", q[i])));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| b * (a / b - 1.0).powi(2)).sum::<f64>())
}

/// `E_{x∼ρ} D_χ²(π(x) ‖ π_ref(x))`, the aggregate that satisfies
/// `C^π = 2·D + 1`.
pub fn chi2_to_reference(policy: &Table, instance: &AlignmentInstance) -> Result<f64> {
    instance
        .rho
        .iter()
        .enumerate()
        .try_fold(0.0, |acc, (x, &w)| Ok(acc + w * chi2_divergence(policy.row(x), instance.pi_ref.row(x))?))
}

/// `max_x D_χ²(π(x) ‖ π_ref(x))`.
pub fn max_chi2_to_reference(policy: &Table, instance: &AlignmentInstance) -> Result<f64> {
    (0..policy.rows()).try_fold(0.0f64, |acc, x| Ok(acc.max(chi2_divergence(policy.row(x), instance.pi_ref.row(x))?)))
}

/// `e^{2R_max} · (V_max/R_max) · √C*`.
pub fn kappa(c_star: f64, v_max: f64, r_max: f64) -> f64 {
    (2.0 * r_max).exp() * (v_max / r_max) * c_star.sqrt()
}

/// Clipped implicit-reward-difference error under `ρ ⊗ π_ref ⊗ π_ref`, with
/// `r̂ = βφ(π̂/π_ref)`.
pub fn err_stat(policy: &Table, instance: &AlignmentInstance, beta: f64) -> Result<f64> {
    let reward = instance.reward()?;
    let radius = 2.0 * instance.r_max;
    let mut total = 0.0;
    for (x, &w) in instance.rho.iter().enumerate() {
        let q = instance.pi_ref.row(x);
        let r_hat: Vec<f64> = (0..q.len())
            .map(|a| Ok(beta * phi(policy.get(x, a) / q[a])?))
            .collect::<Result<_>>()?;
        for a in 0..q.len() {
            for b in 0..q.len() {
                let d_hat = clip(r_hat[a] - r_hat[b], radius);
                let d_star = clip(reward.get(x, a) - reward.get(x, b), radius);
                total += w * q[a] * q[b] * (d_hat - d_star).powi(2);
            }
        }
    }
    Ok(total)
}

/// `max_{π∈Π, x, a, b} β·|φ(π(a|x)/π_ref(a|x)) − φ(π(b|x)/π_ref(b|x))|`,
/// the tightest `V_max` the class admits.
pub fn v_max_diagnostic(class: &FinitePolicyClass, instance: &AlignmentInstance, beta: f64) -> Result<f64> {
    let mut best = 0.0f64;
    for p in class.members() {
        for x in 0..p.rows() {
            let vals: Vec<f64> = (0..p.cols())
                .map(|a| phi(p.get(x, a) / instance.pi_ref.get(x, a)))
                .collect::<Result<_>>()?;
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            best = best.max(beta * (hi - lo));
        }
    }
    Ok(best)
}

/// `ℓ*(π, π′) = E_{x∼ρ, a∼π, b∼π′} ℓ*(x, a, b)`.
pub fn ell_value(pi: &Table, pi_prime: &Table, instance: &AlignmentInstance) -> f64 {
    let na = instance.num_actions();
    let mut total = 0.0;
    for (x, &w) in instance.rho.iter().enumerate() {
        let mut s = 0.0;
        for a in 0..na {
            let pa = pi.get(x, a);
            if pa == 0.0 {
                continue;
            }
            for b in 0..na {
                s += pa * pi_prime.get(x, b) * instance.ell(x, a, b);
            }
        }
        total += w * s;
    }
    total
}

/// `max_{π∈Π} ℓ*(π, π̂) − min_{π∈Π} ℓ*(π̂, π)`.
pub fn duality_gap(policy: &Table, instance: &AlignmentInstance, class: &FinitePolicyClass) -> f64 {
    let best_response = class
        .members()
        .iter()
        .map(|p| ell_value(p, policy, instance))
        .fold(f64::NEG_INFINITY, f64::max);
    let worst_opponent = class
        .members()
        .iter()
        .map(|p| ell_value(policy, p, instance))
        .fold(f64::INFINITY, f64::min);
    best_response - worst_opponent
}

/// Materializes any policy variant for the evaluators above.
pub fn policy_table(policy: &Policy, instance: &AlignmentInstance) -> Table {
    policy.to_table(&instance.pi_ref)
}

/// The payoff matrix `M[i][j] = ℓ*(π_i, π_j)` over a finite class.
pub fn payoff_matrix(class: &FinitePolicyClass, instance: &AlignmentInstance) -> Vec<Vec<f64>> {
    class
        .members()
        .iter()
        .map(|p| class.members().iter().map(|q| ell_value(p, q, instance)).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameSolution {
    /// Maximizing (row) player's mixed strategy.
    pub row: Vec<f64>,
    /// Minimizing (column) player's mixed strategy.
    pub col: Vec<f64>,
    /// `max_i (M y)_i − min_j (xᵀ M)_j`, computed exactly from `M`.
    pub gap: f64,
    pub value: f64,
    pub iterations: usize,
}

fn check_matrix(m: &[Vec<f64>]) -> Result<(usize, usize)> {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(Error::Input("payoff matrix is empty".into()));
    }
    if m.iter().any(|r| r.len() != cols) {
        return Err(Error::Input("payoff matrix is ragged".into()));
    }
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Input("payoff matrix has non-finite entries".into()));
    }
    Ok((rows, cols))
}

/// Exploitability of a strategy pair and `xᵀMy`.
pub fn exploitability(m: &[Vec<f64>], row: &[f64], col: &[f64]) -> (f64, f64) {
    let my: Vec<f64> = m.iter().map(|r| r.iter().zip(col).map(|(a, b)| a * b).sum()).collect();
    let cols = col.len();
    let xm: Vec<f64> = (0..cols).map(|j| m.iter().zip(row).map(|(r, x)| x * r[j]).sum()).collect();
    let value: f64 = my.iter().zip(row).map(|(a, x)| a * x).sum();
    let best_row = my.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let best_col = xm.iter().copied().fold(f64::INFINITY, f64::min);
    (best_row - best_col, value)
}

/// Zero-sum game `max_x min_y xᵀMy`. A pure saddle point is returned exactly
/// when one exists; otherwise optimistic multiplicative weights runs on both
/// sides and the averaged strategies are returned with their exact gap.
pub fn solve_matrix_game(m: &[Vec<f64>], iterations: usize, tolerance: f64) -> Result<GameSolution> {
    let (rows, cols) = check_matrix(m)?;
    for i in 0..rows {
        for j in 0..cols {
            let v = m[i][j];
            let col_max = (0..rows).all(|k| m[k][j] <= v);
            let row_min = m[i].iter().all(|&w| w >= v);
            if col_max && row_min {
                let mut row = vec![0.0; rows];
                let mut col = vec![0.0; cols];
                row[i] = 1.0;
                col[j] = 1.0;
                let (gap, value) = exploitability(m, &row, &col);
                return Ok(GameSolution { row, col, gap, value, iterations: 0 });
            }
        }
    }

    let scale = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    let lr = 0.1 / scale;
    let mut lx = vec![0.0f64; rows];
    let mut ly = vec![0.0f64; cols];
    let mut last_gx = vec![0.0; rows];
    let mut last_gy = vec![0.0; cols];
    let mut sum_x = vec![0.0; rows];
    let mut sum_y = vec![0.0; cols];
    let softmax = |l: &[f64]| {
        let mx = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = l.iter().map(|v| (v - mx).exp()).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect::<Vec<_>>()
    };
    let mut best: Option<GameSolution> = None;
    let check_every = 64;
    for t in 1..=iterations.max(1) {
        // optimistic step: play with the last gradient counted twice
        let x = softmax(&lx.iter().zip(&last_gx).map(|(l, g)| l + lr * g).collect::<Vec<_>>());
        let y = softmax(&ly.iter().zip(&last_gy).map(|(l, g)| l - lr * g).collect::<Vec<_>>());
        let gx: Vec<f64> = m.iter().map(|r| r.iter().zip(&y).map(|(a, b)| a * b).sum()).collect();
        let gy: Vec<f64> = (0..cols).map(|j| m.iter().zip(&x).map(|(r, xi)| xi * r[j]).sum()).collect();
        for (l, g) in lx.iter_mut().zip(&gx) {
            *l += lr * g;
        }
        for (l, g) in ly.iter_mut().zip(&gy) {
            *l -= lr * g;
        }
        last_gx = gx;
        last_gy = gy;
        sum_x.iter_mut().zip(&x).for_each(|(s, v)| *s += v);
        sum_y.iter_mut().zip(&y).for_each(|(s, v)| *s += v);
        if t % check_every == 0 || t == iterations.max(1) {
            let row: Vec<f64> = sum_x.iter().map(|s| s / t as f64).collect();
            let col: Vec<f64> = sum_y.iter().map(|s| s / t as f64).collect();
            // the current iterate is often better than the average
            for (r, c) in [(row, col), (x.clone(), y.clone())] {
                let (gap, value) = exploitability(m, &r, &c);
                if best.as_ref().is_none_or(|b| gap < b.gap) {
                    best = Some(GameSolution { row: r, col: c, gap, value, iterations: t });
                }
            }
            if best.as_ref().is_some_and(|b| b.gap <= tolerance) {
                break;
            }
        }
    }
    Ok(best.expect("at least one iteration ran"))
}

/// `max_{π∈Π, x, a, b} π(a|x)·π_MW(b|x) / (π_ref(a|x)·π_ref(b|x))`.
pub fn unilateral_concentrability(class: &FinitePolicyClass, instance: &AlignmentInstance, pi_mw: &Table) -> f64 {
    let na = instance.num_actions();
    let mut best = 0.0f64;
    for x in 0..instance.num_contexts() {
        let q = instance.pi_ref.row(x);
        let mw = (0..na).map(|b| pi_mw.get(x, b) / q[b]).fold(0.0, f64::max);
        for p in class.members() {
            let pa = (0..na).map(|a| p.get(x, a) / q[a]).fold(0.0, f64::max);
            best = best.max(pa * mw);
        }
    }
    best
}

/// Mixes class members with the given weights into one table.
pub fn mix_members(class: &FinitePolicyClass, weights: &[f64]) -> Table {
    let first = class.get(0);
    let mut out = Table::filled(first.rows(), first.cols(), 0.0);
    for (m, &w) in class.members().iter().zip(weights) {
        for x in 0..first.rows() {
            for (o, v) in out.row_mut(x).iter_mut().zip(m.row(x)) {
                *o += w * v;
            }
        }
    }
    out
}

/// Whether `max_x D_χ²(π(x) ‖ π_ref(x)) ≤ C`.
pub fn in_pi_c(policy: &Table, instance: &AlignmentInstance, c: f64) -> Result<bool> {
    Ok(max_chi2_to_reference(policy, instance)? <= c)
}

/// `max_{π∈Π} ℓ*(π, π̂) − max_{π∈Π∩Π_C} ℓ*(π, π̂)`.
pub fn subopt_c(policy: &Table, instance: &AlignmentInstance, class: &FinitePolicyClass, c: f64) -> Result<f64> {
    if c.is_infinite() && c > 0.0 {
        return Ok(0.0);
    }
    let mut all = f64::NEG_INFINITY;
    let mut within = f64::NEG_INFINITY;
    for p in class.members() {
        let v = ell_value(p, policy, instance);
        all = all.max(v);
        if in_pi_c(p, instance, c)? {
            within = within.max(v);
        }
    }
    if within == f64::NEG_INFINITY {
        return Err(Error::Undefined(format!("no class member lies in Pi_C for C = {c}")));
    }
    Ok(all - within)
}

/// Default `C` grid for [`select_c`].
pub const C_GRID: [f64; 6] = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0];

/// The rate term `B` of the duality-gap bound for `setting`, with `ζ` in
/// place of `δ`: `V_max·log(|Π|/ζ)/√m + k·√(log(|L||Π|/ζ)/n) + √(α·a·log(|Π|/ζ))`,
/// where `k` is `c(ε)` for local settings and `1 + 1/√ε` under central DP, and
/// `a` is `c(ε)` under LTC and 1 otherwise.
pub fn dg_rate_term(
    setting: &PipelineSetting,
    n: usize,
    m: usize,
    v_max: f64,
    num_models: usize,
    num_policies: usize,
    zeta: f64,
) -> Result<f64> {
    if n == 0 || m == 0 || num_models == 0 || num_policies == 0 || !(zeta > 0.0 && zeta <= 1.0) {
        return Err(Error::Input("rate term needs positive n, m, class sizes and zeta in (0, 1]".into()));
    }
    let lp = (num_policies as f64 / zeta).ln();
    let llp = (num_models as f64 * num_policies as f64 / zeta).ln();
    let (k, a) = match setting {
        PipelineSetting::Cdp { epsilon, .. } => (1.0 + 1.0 / epsilon.value().sqrt(), 1.0),
        PipelineSetting::Ltc { epsilon, .. } => {
            let c = c_factor(*epsilon)?;
            (c, c)
        }
        other => (c_factor(other.local_epsilon())?, 1.0),
    };
    Ok(v_max * lp / (m as f64).sqrt() + k * (llp / n as f64).sqrt() + (setting.alpha() * a * lp).sqrt())
}

/// `argmin_C subopt(π̂, C) + C·rate` over `grid`, lowest `C` on ties. Grid
/// points with an empty `Π ∩ Π_C` are skipped.
pub fn select_c(
    policy: &Table,
    instance: &AlignmentInstance,
    class: &FinitePolicyClass,
    rate: f64,
    grid: &[f64],
) -> Result<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for &c in grid {
        let v = match subopt_c(policy, instance, class, c) {
            Ok(s) => s + c * rate,
            Err(Error::Undefined(_)) => continue,
            Err(e) => return Err(e),
        };
        if best.is_none_or(|b| v < b.1) {
            best = Some((c, v));
        }
    }
    best.ok_or_else(|| Error::Undefined("no grid value of C admits a class member".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual: f64,
}

/// OLS slope of `log value` on `log n`.
pub fn rate_fit(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::Input(format!("rate fit needs at least 3 points, got {}", points.len())));
    }
    if let Some(p) = points.iter().find(|p| !(p.0 > 0.0) || !(p.1 > 0.0)) {
        return Err(Error::Input(format!("rate fit needs positive n and value, got {p:?}")));
    }
    let x: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let LineFit { slope, intercept, residual } = ols(&x, &y)?;
    Ok(RateFit { slope, intercept, residual })
}

/// One experiment outcome. Fields that do not apply to a run are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub setting: String,
    pub algorithm: String,
    pub epsilon: Epsilon,
    pub alpha: f64,
    pub n: usize,
    pub m: Option<usize>,
    pub t: Option<usize>,
    pub seed: u64,
    pub beta: Option<f64>,
    pub chosen: Option<usize>,
    pub sg: Option<f64>,
    pub dg: Option<f64>,
    pub err_stat: Option<f64>,
    pub err2_gen: Option<f64>,
    pub c_star: Option<f64>,
    pub wall_ms: Option<f64>,
}

impl RunRecord {
    /// Gaps within this distance below zero count as numerical zero.
    pub const GAP_FLOOR: f64 = -1e-9;

    pub fn check(&self) -> Result<()> {
        for (name, v) in [("sg", self.sg), ("dg", self.dg)] {
            if let Some(v) = v {
                if v < Self::GAP_FLOOR {
                    return Err(Error::Invalid(format!("{name} = {v} is below the numerical floor")));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{PreferenceModel, PreferenceTable};
    use crate::rng::from_seed;
    use crate::solvers::solve_pi_beta_star;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn hand() -> AlignmentInstance {
        AlignmentInstance::new(
            vec![0.4, 0.6],
            Table::from_rows(vec![vec![0.5, 0.5], vec![0.3, 0.7]]).unwrap(),
            PreferenceModel::BradleyTerry { reward: Table::from_rows(vec![vec![1.0, 0.0], vec![0.2, 0.7]]).unwrap() },
            1.0,
        )
        .unwrap()
    }

    fn general(ell: PreferenceTable, nx: usize) -> AlignmentInstance {
        let na = ell.actions();
        AlignmentInstance::new(
            vec![1.0 / nx as f64; nx],
            Table::uniform(nx, na),
            PreferenceModel::General { ell_star: ell },
            1.0,
        )
        .unwrap()
    }

    fn random_policy<R: Rng>(nx: usize, na: usize, rng: &mut R) -> Table {
        let rows = (0..nx).map(|_| crate::domain::dirichlet(&vec![1.0; na], rng)).collect();
        Table::from_rows(rows).unwrap()
    }

    #[test]
    fn value_examples() {
        let inst = hand();
        let argmax = Table::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_relative_eq!(value_j(&argmax, &inst).unwrap(), 0.4 * 1.0 + 0.6 * 0.7, epsilon = 1e-15);
        let anti = Table::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_relative_eq!(subopt_gap(&anti, &argmax, &inst).unwrap(), 0.4 * 1.0 + 0.6 * 0.5, epsilon = 1e-15);
        assert_eq!(subopt_gap(&argmax, &argmax, &inst).unwrap(), 0.0);
        // π_ref: 0.4·0.5 + 0.6·(0.3·0.2 + 0.7·0.7)
        assert_relative_eq!(value_j(&inst.pi_ref, &inst).unwrap(), 0.2 + 0.6 * 0.55, epsilon = 1e-15);
        let constant = AlignmentInstance::new(
            vec![1.0],
            Table::from_rows(vec![vec![0.2, 0.8]]).unwrap(),
            PreferenceModel::BradleyTerry { reward: Table::filled(1, 2, 0.3) },
            1.0,
        )
        .unwrap();
        assert_relative_eq!(value_j(&constant.pi_ref, &constant).unwrap(), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn concentrability_examples() {
        let single = AlignmentInstance::new(
            vec![1.0],
            Table::uniform(1, 2),
            PreferenceModel::BradleyTerry { reward: Table::filled(1, 2, 0.0) },
            1.0,
        )
        .unwrap();
        let p = Table::from_rows(vec![vec![0.75, 0.25]]).unwrap();
        assert_relative_eq!(concentrability(&p, &single), 1.25, epsilon = 1e-15);
        assert_relative_eq!(chi2_divergence(p.row(0), single.pi_ref.row(0)).unwrap(), 0.125, epsilon = 1e-15);
        assert_eq!(concentrability(&single.pi_ref, &single), 1.0);
        let det = Table::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let inst = hand();
        // 0.4/0.5 + 0.6/0.7
        assert_relative_eq!(concentrability(&det, &inst), 0.4 / 0.5 + 0.6 / 0.7, epsilon = 1e-15);
        let k = 5;
        let mut d = vec![0.0; k];
        d[2] = 1.0;
        assert_relative_eq!(chi2_divergence(&d, &vec![1.0 / k as f64; k]).unwrap(), (k as f64 - 1.0) / 2.0, epsilon = 1e-14);
        assert_eq!(chi2_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
    }

    #[test]
    fn identity_closure() {
        let mut rng = from_seed(17);
        let inst = AlignmentInstance::generate_bt(3, 3, 1.0, &mut rng).unwrap();
        for _ in 0..100 {
            let p = random_policy(3, 3, &mut rng);
            let lhs = concentrability(&p, &inst);
            let rhs = 2.0 * chi2_to_reference(&p, &inst).unwrap() + 1.0;
            assert!((lhs - rhs).abs() <= 1e-10);
        }
    }

    #[test]
    fn kappa_examples() {
        assert_relative_eq!(kappa(1.0, 1.5, 1.5), 3f64.exp(), epsilon = 1e-12);
        assert_relative_eq!(kappa(4.0, 2.0, 1.0), 4.0 * 2f64.exp(), epsilon = 1e-12);
        assert_relative_eq!(4.0 * 2f64.exp(), 29.556, epsilon = 1e-3);
        assert!(kappa(2.0, 1.0, 1.0) > kappa(1.5, 1.0, 1.0));
    }

    #[test]
    fn err_stat_examples() {
        let inst = hand();
        let star = solve_pi_beta_star(&inst, 0.5).unwrap();
        assert!(err_stat(&star, &inst, 0.5).unwrap() <= 1e-6);
        let e = err_stat(&inst.pi_ref, &inst, 0.5).unwrap();
        // π = π_ref gives r̂ differences of zero, so the error is E[(Δ*)²]
        let oracle = 0.4 * 2.0 * 0.25 * 1.0 + 0.6 * 2.0 * 0.3 * 0.7 * 0.25;
        assert_relative_eq!(e, oracle, epsilon = 1e-14);
        let zero = Table::from_rows(vec![vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        assert!(err_stat(&zero, &inst, 0.5).is_err());
    }

    #[test]
    fn ell_value_and_gaps() {
        let ell = PreferenceTable::from_fn(1, 2, |_, a, b| match (a, b) {
            (0, 1) => 0.6,
            (1, 0) => -0.6,
            _ => 0.0,
        });
        let inst = general(ell, 1);
        let p = Table::from_rows(vec![vec![0.3, 0.7]]).unwrap();
        let q = Table::from_rows(vec![vec![0.8, 0.2]]).unwrap();
        assert_eq!(ell_value(&p, &p, &inst), 0.0);
        assert_relative_eq!(ell_value(&p, &q, &inst), 0.3 * 0.2 * 0.6 - 0.7 * 0.8 * 0.6, epsilon = 1e-15);
        let zero = general(PreferenceTable::zeros(1, 2), 1);
        assert_eq!(ell_value(&p, &q, &zero), 0.0);
        let class = FinitePolicyClass::new(vec![p.clone(), q.clone(), Table::from_rows(vec![vec![1.0, 0.0]]).unwrap()]).unwrap();
        assert_eq!(duality_gap(&q, &zero, &class), 0.0);
        // action 0 is a Condorcet winner; the pure policy on it has zero gap
        let pure = class.get(2).clone();
        assert!(duality_gap(&pure, &inst, &class).abs() < 1e-15);
        // by enumeration: best response to p is the pure member, worst opponent is the pure member
        let expected = ell_value(&pure, &p, &inst) - ell_value(&p, &pure, &inst);
        assert_relative_eq!(duality_gap(&p, &inst, &class), expected, epsilon = 1e-15);
    }

    #[test]
    fn game_examples() {
        let s = solve_matrix_game(&[vec![0.0, 1.0], vec![-1.0, 0.0]], 10_000, 1e-9).unwrap();
        assert_eq!(s.row, vec![1.0, 0.0]);
        assert_eq!(s.col, vec![1.0, 0.0]);
        assert_eq!(s.gap, 0.0);
        assert_eq!(s.value, 0.0);
        let s = solve_matrix_game(&[vec![1.0, -1.0], vec![-1.0, 1.0]], 100_000, 1e-4).unwrap();
        assert!(s.gap <= 1e-4);
        for v in s.row.iter().chain(&s.col) {
            assert!((v - 0.5).abs() < 1e-3);
        }
        let s = solve_matrix_game(&[vec![0.3]], 10, 1e-9).unwrap();
        assert_eq!((s.gap, s.row.clone()), (0.0, vec![1.0]));
        assert!(solve_matrix_game(&[vec![f64::NAN]], 10, 1e-9).is_err());
        // rock-paper-scissors needs a genuinely mixed solution
        let rps = vec![vec![0.0, 1.0, -1.0], vec![-1.0, 0.0, 1.0], vec![1.0, -1.0, 0.0]];
        let s = solve_matrix_game(&rps, 200_000, 1e-4).unwrap();
        assert!(s.gap <= 1e-4);
        // asymmetric starting point: a shifted biased game
        let m = vec![vec![2.0, -1.0], vec![-1.0, 1.0]];
        let s = solve_matrix_game(&m, 200_000, 1e-6).unwrap();
        assert!(s.gap <= 1e-6);
        assert_relative_eq!(s.row[0], 0.4, epsilon = 1e-4);
    }

    #[test]
    fn unilateral_examples() {
        let inst = hand();
        let only_ref = FinitePolicyClass::new(vec![inst.pi_ref.clone()]).unwrap();
        assert_relative_eq!(unilateral_concentrability(&only_ref, &inst, &inst.pi_ref), 1.0, epsilon = 1e-15);
        let k = 4;
        let single = general(PreferenceTable::zeros(1, k), 1);
        let mut det = vec![0.0; k];
        det[1] = 1.0;
        let class = FinitePolicyClass::new(vec![Table::from_rows(vec![det]).unwrap()]).unwrap();
        assert_relative_eq!(unilateral_concentrability(&class, &single, &single.pi_ref), k as f64, epsilon = 1e-12);
        let mw = Table::from_rows(vec![vec![0.5, 0.5], vec![0.9, 0.1]]).unwrap();
        let c2 = FinitePolicyClass::new(vec![Table::from_rows(vec![vec![0.8, 0.2], vec![0.5, 0.5]]).unwrap()]).unwrap();
        // context 0: (0.8/0.5)(0.5/0.5) = 1.6; context 1: (0.5/0.3)(0.9/0.3) = 5
        assert_relative_eq!(unilateral_concentrability(&c2, &inst, &mw), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn subopt_c_examples() {
        let ell = PreferenceTable::from_fn(1, 2, |_, a, b| 0.8 * (b as f64 - a as f64));
        let inst = general(ell, 1);
        let far = Table::from_rows(vec![vec![0.99, 0.01]]).unwrap();
        let class = FinitePolicyClass::new(vec![inst.pi_ref.clone(), far.clone()]).unwrap();
        let p = Table::from_rows(vec![vec![0.4, 0.6]]).unwrap();
        assert_eq!(subopt_c(&p, &inst, &class, f64::INFINITY).unwrap(), 0.0);
        assert_eq!(subopt_c(&p, &inst, &class, 0.0).unwrap(), ell_value(&far, &p, &inst) - ell_value(&inst.pi_ref, &p, &inst));
        assert_eq!(subopt_c(&p, &inst, &class, 1.0).unwrap(), 0.0);
        let no_ref = FinitePolicyClass::new(vec![far]).unwrap();
        assert!(matches!(subopt_c(&p, &inst, &no_ref, 0.1), Err(Error::Undefined(_))));
    }

    #[test]
    fn select_c_trades_subopt_against_rate() {
        let ell = PreferenceTable::from_fn(1, 2, |_, a, b| 0.8 * (b as f64 - a as f64));
        let inst = general(ell, 1);
        // D(far) = 0.4802; only pi_ref lies in Pi_C for C = 0.1
        let far = Table::from_rows(vec![vec![0.99, 0.01]]).unwrap();
        let class = FinitePolicyClass::new(vec![inst.pi_ref.clone(), far.clone()]).unwrap();
        let p = Table::from_rows(vec![vec![0.6, 0.4]]).unwrap();
        // subopt(p, 0.1) = 0.8·(0.4 − 0.01) − 0.8·(0.4 − 0.5) = 0.392
        let (c, v) = select_c(&p, &inst, &class, 0.01, &[0.1, 1.0]).unwrap();
        assert_eq!(c, 1.0);
        assert_relative_eq!(v, 0.01, epsilon = 1e-15);
        let (c, v) = select_c(&p, &inst, &class, 1.0, &[0.1, 1.0]).unwrap();
        assert_eq!(c, 0.1);
        assert_relative_eq!(v, 0.492, epsilon = 1e-12);
        let no_ref = FinitePolicyClass::new(vec![far]).unwrap();
        assert!(select_c(&p, &inst, &no_ref, 0.01, &[0.1]).is_err());
        assert_eq!(select_c(&p, &inst, &no_ref, 0.01, &C_GRID).unwrap().0, 1.0);
    }

    #[test]
    fn rate_term_examples() {
        let n = 100;
        let m = 400;
        let lp = (8.0f64 / 0.05).ln();
        let llp = (64.0f64 / 0.05).ln();
        let clean = dg_rate_term(&PipelineSetting::Clean, n, m, 4.0, 8, 8, 0.05).unwrap();
        assert!((clean - (4.0 * lp / 20.0 + (llp / 100.0).sqrt())).abs() < 1e-12);
        let eps = Epsilon::Finite(1.0);
        let c = c_factor(eps).unwrap();
        let ctl = PipelineSetting::Ctl { epsilon: eps, alpha: 0.1, adversary: Default::default() };
        let ltc = PipelineSetting::Ltc { epsilon: eps, alpha: 0.1, adversary: Default::default() };
        let cdp = PipelineSetting::Cdp { epsilon: eps, alpha: 0.1, adversary: Default::default() };
        let base = 4.0 * lp / 20.0;
        let want_ctl = base + c * (llp / 100.0).sqrt() + (0.1 * lp).sqrt();
        let want_ltc = base + c * (llp / 100.0).sqrt() + (0.1 * c * lp).sqrt();
        let want_cdp = base + 2.0 * (llp / 100.0).sqrt() + (0.1 * lp).sqrt();
        assert!((dg_rate_term(&ctl, n, m, 4.0, 8, 8, 0.05).unwrap() - want_ctl).abs() < 1e-12);
        assert!((dg_rate_term(&ltc, n, m, 4.0, 8, 8, 0.05).unwrap() - want_ltc).abs() < 1e-12);
        assert!((dg_rate_term(&cdp, n, m, 4.0, 8, 8, 0.05).unwrap() - want_cdp).abs() < 1e-12);
        assert!(dg_rate_term(&ctl, 0, m, 4.0, 8, 8, 0.05).is_err());
    }

    #[test]
    fn rate_fit_examples() {
        let pts: Vec<_> = (7..14).map(|k| { let n = 2f64.powi(k); (n, 1.0 / n) }).collect();
        assert!((rate_fit(&pts).unwrap().slope + 1.0).abs() <= 1e-12);
        let pts: Vec<_> = (7..14).map(|k| (2f64.powi(k), 3.0)).collect();
        assert!(rate_fit(&pts).unwrap().slope.abs() <= 1e-12);
        let pts: Vec<_> = (7..14).map(|k| { let n = 2f64.powi(k); (n, 4.0 / n.sqrt()) }).collect();
        assert!((rate_fit(&pts).unwrap().slope + 0.5).abs() <= 1e-12);
        assert!(rate_fit(&pts[..2]).is_err());
        assert!(rate_fit(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
    }

    #[test]
    fn mixture_evaluations_are_averages() {
        let mut rng = from_seed(23);
        let inst = hand();
        let members: Vec<Table> = (0..5).map(|_| random_policy(2, 2, &mut rng)).collect();
        let mix = Policy::Mixture(members.clone()).to_table(&inst.pi_ref);
        let avg = members.iter().map(|m| value_j(m, &inst).unwrap()).sum::<f64>() / 5.0;
        assert!((value_j(&mix, &inst).unwrap() - avg).abs() <= 1e-12);
        let other = random_policy(2, 2, &mut rng);
        let avg = members.iter().map(|m| ell_value(m, &other, &inst)).sum::<f64>() / 5.0;
        assert!((ell_value(&mix, &other, &inst) - avg).abs() <= 1e-12);
    }
}
