//! Links and losses. Every loss is returned in minimization orientation.

use serde::{Deserialize, Serialize};

use crate::domain::{LogLinearPolicy, ObservedDataset, PreferenceSample, PreferenceTable, Table};
use crate::error::{Error, Result};
use crate::mechanisms::{c_factor, Epsilon};
use crate::selfplay::UnlabeledTriple;

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log σ(z)` without cancellation for large `|z|`.
#[inline]
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// `φ(u) = u + log u`.
pub fn phi(u: f64) -> Result<f64> {
    if u > 0.0 && u.is_finite() {
        Ok(u + u.ln())
    } else {
        Err(Error::Domain(format!("phi is defined for positive u, got {u}")))
    }
}

/// `max(min(v, r), −r)`.
#[inline]
pub fn clip(v: f64, r: f64) -> f64 {
    v.min(r).max(-r)
}

/// Constant `e^{−R} + 2 + e^R` of the sigmoid mean-value bound
/// `|z − z'| ≤ C·|σ(z) − σ(z')|` on `[−R, R]`.
pub fn sigmoid_mvt_constant(r: f64) -> f64 {
    (-r).exp() + 2.0 + r.exp()
}

fn ratio(policy: &Table, pi_ref: &Table, x: usize, a: usize) -> Result<f64> {
    let p = policy.get(x, a);
    if p > 0.0 {
        Ok(p / pi_ref.get(x, a))
    } else {
        Err(Error::Domain(format!(
            "policy puts probability {p} on action {a} in context {x}"
        )))
    }
}

/// `φ(π(a|x)/π_ref(a|x)) − φ(π(b|x)/π_ref(b|x))`.
pub fn h_chipo(policy: &Table, pi_ref: &Table, x: usize, a: usize, b: usize) -> Result<f64> {
    Ok(phi(ratio(policy, pi_ref, x, a)?)? - phi(ratio(policy, pi_ref, x, b)?)?)
}

/// `log(π(a|x)/π_ref(a|x)) − log(π(b|x)/π_ref(b|x))`.
pub fn h_dpo(policy: &Table, pi_ref: &Table, x: usize, a: usize, b: usize) -> Result<f64> {
    Ok(ratio(policy, pi_ref, x, a)?.ln() - ratio(policy, pi_ref, x, b)?.ln())
}

/// Per-(x, a) link values of one policy, with zero-probability entries kept
/// as `None` so they only fail when queried.
#[derive(Debug, Clone)]
pub struct LinkTable {
    actions: usize,
    values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Phi,
    Log,
}

impl LinkTable {
    pub fn new(policy: &Table, pi_ref: &Table, link: Link) -> Self {
        let values = policy
            .data()
            .iter()
            .zip(pi_ref.data())
            .map(|(&p, &q)| {
                (p > 0.0).then(|| {
                    let u = p / q;
                    match link {
                        Link::Phi => u + u.ln(),
                        Link::Log => u.ln(),
                    }
                })
            })
            .collect();
        LinkTable {
            actions: policy.cols(),
            values,
        }
    }

    #[inline]
    pub fn value(&self, x: usize, a: usize) -> Result<f64> {
        self.values[x * self.actions + a].ok_or_else(|| {
            Error::Domain(format!("policy puts zero probability on action {a} in context {x}"))
        })
    }

    /// `link(x, a) − link(x, b)`.
    #[inline]
    pub fn diff(&self, x: usize, a: usize, b: usize) -> Result<f64> {
        Ok(self.value(x, a)? - self.value(x, b)?)
    }
}

/// Objective selector with its scalar parameters baked in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossSpec {
    SquareChipo { beta: f64, r_max: f64, epsilon: Epsilon },
    LogChipo { beta: f64, r_max: f64 },
    Dpo { beta: f64 },
    CentralScore { beta: f64, r_max: f64 },
}

impl LossSpec {
    pub fn beta(&self) -> f64 {
        match *self {
            LossSpec::SquareChipo { beta, .. }
            | LossSpec::LogChipo { beta, .. }
            | LossSpec::Dpo { beta }
            | LossSpec::CentralScore { beta, .. } => beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let beta = self.beta();
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::param("beta", format!("must be positive, got {beta}")));
        }
        match *self {
            LossSpec::SquareChipo { r_max, epsilon, .. } => {
                check_r_max(r_max)?;
                epsilon.validate()?;
            }
            LossSpec::LogChipo { r_max, .. } | LossSpec::CentralScore { r_max, .. } => {
                check_r_max(r_max)?
            }
            LossSpec::Dpo { .. } => {}
        }
        Ok(())
    }

    fn link(&self) -> Link {
        match self {
            LossSpec::Dpo { .. } => Link::Log,
            _ => Link::Phi,
        }
    }
}

fn check_r_max(r_max: f64) -> Result<()> {
    if r_max > 0.0 && r_max.is_finite() {
        Ok(())
    } else {
        Err(Error::param("r_max", format!("must be positive, got {r_max}")))
    }
}

/// `2σ(clip_{2R}(βh)) − 1`, the predicted ±1 preference.
#[inline]
pub fn predicted_preference(beta_h: f64, r_max: f64) -> f64 {
    2.0 * sigmoid(clip(beta_h, 2.0 * r_max)) - 1.0
}

/// Loss of one sample given `h(x, a1, a0)` and the target scale `c`.
#[inline]
fn square_term(h: f64, beta: f64, r_max: f64, c: f64, signed_label: f64) -> f64 {
    let r = predicted_preference(beta * h, r_max) - c * signed_label;
    r * r
}

/// `−log σ(s·clip(βh))` with `s = ±1` from the label, i.e. `a₊ = a^z`.
#[inline]
fn log_term(h: f64, beta: f64, clip_radius: Option<f64>, signed_label: f64) -> f64 {
    let mut v = beta * h;
    if let Some(r) = clip_radius {
        v = clip(v, r);
    }
    -log_sigmoid(signed_label * v)
}

/// Loss of one observed sample under `spec`, given the policy's link table.
fn sample_loss(spec: &LossSpec, links: &LinkTable, s: &PreferenceSample, c: f64) -> Result<f64> {
    let h = links.diff(s.x, s.a1, s.a0)?;
    let z = s.signed_label();
    Ok(match *spec {
        LossSpec::SquareChipo { beta, r_max, .. } => square_term(h, beta, r_max, c, z),
        LossSpec::CentralScore { beta, r_max } => square_term(h, beta, r_max, 1.0, z),
        LossSpec::LogChipo { beta, r_max } => log_term(h, beta, Some(2.0 * r_max), z),
        LossSpec::Dpo { beta } => log_term(h, beta, None, z),
    })
}

fn target_scale(spec: &LossSpec) -> Result<f64> {
    match *spec {
        LossSpec::SquareChipo { epsilon, .. } => c_factor(epsilon),
        _ => Ok(1.0),
    }
}

/// Sums the per-sample loss of `spec` over `dataset`, in sample order.
pub fn loss(policy: &Table, pi_ref: &Table, dataset: &ObservedDataset, spec: &LossSpec) -> Result<f64> {
    spec.validate()?;
    let links = LinkTable::new(policy, pi_ref, spec.link());
    let c = target_scale(spec)?;
    dataset
        .samples
        .iter()
        .try_fold(0.0, |acc, s| Ok(acc + sample_loss(spec, &links, s, c)?))
}

/// Per-sample loss values, in sample order.
pub fn per_sample_losses(
    policy: &Table,
    pi_ref: &Table,
    samples: &[PreferenceSample],
    spec: &LossSpec,
) -> Result<Vec<f64>> {
    spec.validate()?;
    let links = LinkTable::new(policy, pi_ref, spec.link());
    let c = target_scale(spec)?;
    samples.iter().map(|s| sample_loss(spec, &links, s, c)).collect()
}

fn expect_kind(spec: &LossSpec, want: &str, ok: bool) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Mode(format!("expected a {want} loss spec, got {spec:?}")))
    }
}

/// `Σ [2σ(clip_{2R}(β h_χPO(x, a¹, a⁰))) − 1 − c(ε)(2z − 1)]²`.
pub fn square_chipo_loss(policy: &Table, pi_ref: &Table, dataset: &ObservedDataset, spec: &LossSpec) -> Result<f64> {
    expect_kind(spec, "square_chipo", matches!(spec, LossSpec::SquareChipo { .. }))?;
    loss(policy, pi_ref, dataset, spec)
}

/// `−Σ log σ(clip_{2R}(β h_χPO(x, a₊, a₋)))`.
pub fn log_chipo_loss(policy: &Table, pi_ref: &Table, dataset: &ObservedDataset, spec: &LossSpec) -> Result<f64> {
    expect_kind(spec, "log_chipo", matches!(spec, LossSpec::LogChipo { .. }))?;
    loss(policy, pi_ref, dataset, spec)
}

/// `−Σ log σ(β h_DPO(x, a₊, a₋))`.
pub fn dpo_loss(policy: &Table, pi_ref: &Table, dataset: &ObservedDataset, spec: &LossSpec) -> Result<f64> {
    expect_kind(spec, "dpo", matches!(spec, LossSpec::Dpo { .. }))?;
    loss(policy, pi_ref, dataset, spec)
}

/// The square loss with `c = 1`; every term lies in `[0, 4]`.
pub fn central_score(policy: &Table, pi_ref: &Table, dataset: &ObservedDataset, spec: &LossSpec) -> Result<f64> {
    expect_kind(spec, "central_score", matches!(spec, LossSpec::CentralScore { .. }))?;
    loss(policy, pi_ref, dataset, spec)
}

/// Label counts per `(x, a1, a0)` cell. Every loss here depends on the data
/// only through these counts, so large datasets can be scored in
/// `O(|X|·|A|²)` per candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCounts {
    contexts: usize,
    actions: usize,
    /// `[count of y = 0, count of y = 1]` per cell.
    counts: Vec<[u64; 2]>,
}

impl PairCounts {
    pub fn new(contexts: usize, actions: usize) -> Self {
        PairCounts {
            contexts,
            actions,
            counts: vec![[0; 2]; contexts * actions * actions],
        }
    }

    pub fn from_samples(contexts: usize, actions: usize, samples: &[PreferenceSample]) -> Result<Self> {
        let mut out = PairCounts::new(contexts, actions);
        for s in samples {
            s.check_bounds(contexts, actions)?;
            out.add(s);
        }
        Ok(out)
    }

    #[inline]
    fn index(&self, x: usize, a1: usize, a0: usize) -> usize {
        (x * self.actions + a1) * self.actions + a0
    }

    pub fn add(&mut self, s: &PreferenceSample) {
        let i = self.index(s.x, s.a1, s.a0);
        self.counts[i][usize::from(s.y)] += 1;
    }

    pub fn get(&self, x: usize, a1: usize, a0: usize) -> [u64; 2] {
        self.counts[self.index(x, a1, a0)]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|c| c[0] + c[1]).sum()
    }

    /// The loss of `spec` summed over all counted samples.
    pub fn loss(&self, policy: &Table, pi_ref: &Table, spec: &LossSpec) -> Result<f64> {
        spec.validate()?;
        let links = LinkTable::new(policy, pi_ref, spec.link());
        let c = target_scale(spec)?;
        let mut total = 0.0;
        for x in 0..self.contexts {
            for a1 in 0..self.actions {
                for a0 in 0..self.actions {
                    let [n0, n1] = self.get(x, a1, a0);
                    if n0 + n1 == 0 {
                        continue;
                    }
                    for (y, n) in [(0u8, n0), (1u8, n1)] {
                        if n > 0 {
                            let s = PreferenceSample { x, a0, a1, y };
                            total += n as f64 * sample_loss(spec, &links, &s, c)?;
                        }
                    }
                }
            }
        }
        Ok(total)
    }
}

/// `(1 + 1/η)·β·h_π(x,a,b) − (β/η)·h_π′(x,a,b)`.
#[allow(clippy::too_many_arguments)]
pub fn f_beta_eta(
    pi: &Table,
    pi_prime: &Table,
    pi_ref: &Table,
    beta: f64,
    eta: f64,
    x: usize,
    a: usize,
    b: usize,
) -> Result<f64> {
    check_beta_eta(beta, eta)?;
    Ok(f_from_h(
        h_chipo(pi, pi_ref, x, a, b)?,
        h_chipo(pi_prime, pi_ref, x, a, b)?,
        beta,
        eta,
    ))
}

#[inline]
pub fn f_from_h(h_pi: f64, h_prime: f64, beta: f64, eta: f64) -> f64 {
    (1.0 + 1.0 / eta) * beta * h_pi - (beta / eta) * h_prime
}

fn check_beta_eta(beta: f64, eta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::param("beta", format!("must be positive, got {beta}")));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::param("eta", format!("must be positive, got {eta}")));
    }
    Ok(())
}

/// Clip radius of the self-play regression.
pub const SELFPLAY_CLIP: f64 = 4.0;

/// `r̂ᵗ(x,a) − r̂ᵗ(x,b)` with `r̂ᵗ(x,a) = ℓ̂(x, a, b_t(x))`.
#[inline]
pub fn reward_diff_target(ell_hat: &PreferenceTable, b_t: &[usize], x: usize, a: usize, b: usize) -> f64 {
    ell_hat.get(x, a, b_t[x]) - ell_hat.get(x, b, b_t[x])
}

/// `Σ (clip₄(f^{β,η}_{π,πᵗ}(x,a,b)) − r̂ᵗ_diff(x,a,b))²` over the unlabeled
/// triples, with one `b_t` per context shared by all terms.
#[allow(clippy::too_many_arguments)]
pub fn policy_opt_loss(
    pi: &Table,
    pi_t: &Table,
    pi_ref: &Table,
    ell_hat: &PreferenceTable,
    triples: &[UnlabeledTriple],
    b_t: &[usize],
    beta: f64,
    eta: f64,
) -> Result<f64> {
    check_beta_eta(beta, eta)?;
    let links = LinkTable::new(pi, pi_ref, Link::Phi);
    let links_t = LinkTable::new(pi_t, pi_ref, Link::Phi);
    triples.iter().try_fold(0.0, |acc, t| {
        let f = f_from_h(links.diff(t.x, t.a, t.b)?, links_t.diff(t.x, t.a, t.b)?, beta, eta);
        let r = clip(f, SELFPLAY_CLIP) - reward_diff_target(ell_hat, b_t, t.x, t.a, t.b);
        Ok(acc + r * r)
    })
}

/// Per-(x, a) gradient pieces of `φ(π_θ(a|x)/π_ref(a|x))`:
/// `∇θ φ(u_a) = (u_a + 1)(ψ(x,a) − E_{π_θ(x)} ψ)`.
struct LogLinearLinks {
    phi: Vec<f64>,
    grad: Vec<Vec<f64>>,
    actions: usize,
}

impl LogLinearLinks {
    fn new(policy: &LogLinearPolicy, pi_ref: &Table) -> Result<Self> {
        let fm = &policy.features;
        let (nx, na, d) = (pi_ref.rows(), pi_ref.cols(), fm.dim);
        if fm.num_contexts != nx || fm.num_actions != na {
            return Err(Error::Input("feature map shape does not match pi_ref".into()));
        }
        let mut phi_v = Vec::with_capacity(nx * na);
        let mut grad = Vec::with_capacity(nx * na);
        for x in 0..nx {
            let row = policy.row(pi_ref.row(x), x);
            let mut mean = vec![0.0; d];
            for (a, &p) in row.iter().enumerate() {
                for (m, &f) in mean.iter_mut().zip(fm.psi(x, a)) {
                    *m += p * f;
                }
            }
            for (a, &p) in row.iter().enumerate() {
                let u = p / pi_ref.get(x, a);
                phi_v.push(phi(u)?);
                grad.push(fm.psi(x, a).iter().zip(&mean).map(|(f, m)| (u + 1.0) * (f - m)).collect());
            }
        }
        Ok(LogLinearLinks { phi: phi_v, grad, actions: na })
    }

    fn h(&self, x: usize, a: usize, b: usize) -> f64 {
        self.phi[x * self.actions + a] - self.phi[x * self.actions + b]
    }

    /// Adds `scale · ∇θ h(x, a, b)` into `out`.
    fn add_grad_h(&self, out: &mut [f64], scale: f64, x: usize, a: usize, b: usize) {
        let ga = &self.grad[x * self.actions + a];
        let gb = &self.grad[x * self.actions + b];
        for ((o, p), q) in out.iter_mut().zip(ga).zip(gb) {
            *o += scale * (p - q);
        }
    }
}

/// Square-χPO loss of a log-linear policy and its gradient in `θ`. The clip
/// has zero slope outside its range.
pub fn square_chipo_loss_grad(
    policy: &LogLinearPolicy,
    pi_ref: &Table,
    dataset: &ObservedDataset,
    spec: &LossSpec,
) -> Result<(f64, Vec<f64>)> {
    let (beta, r_max, c) = match *spec {
        LossSpec::SquareChipo { beta, r_max, epsilon } => (beta, r_max, c_factor(epsilon)?),
        LossSpec::CentralScore { beta, r_max } => (beta, r_max, 1.0),
        _ => return Err(Error::Mode(format!("no analytic gradient for {spec:?}"))),
    };
    spec.validate()?;
    let links = LogLinearLinks::new(policy, pi_ref)?;
    let mut grad = vec![0.0; policy.theta.len()];
    let mut total = 0.0;
    let radius = 2.0 * r_max;
    for s in &dataset.samples {
        let v = beta * links.h(s.x, s.a1, s.a0);
        let sg = sigmoid(clip(v, radius));
        let resid = 2.0 * sg - 1.0 - c * s.signed_label();
        total += resid * resid;
        if v.abs() < radius {
            let scale = 2.0 * resid * 2.0 * sg * (1.0 - sg) * beta;
            links.add_grad_h(&mut grad, scale, s.x, s.a1, s.a0);
        }
    }
    Ok((total, grad))
}

/// Self-play regression loss of a log-linear `π` against a fixed tabular
/// `πᵗ`, and its gradient in `θ`.
#[allow(clippy::too_many_arguments)]
pub fn policy_opt_loss_grad(
    pi: &LogLinearPolicy,
    pi_t: &Table,
    pi_ref: &Table,
    ell_hat: &PreferenceTable,
    triples: &[UnlabeledTriple],
    b_t: &[usize],
    beta: f64,
    eta: f64,
) -> Result<(f64, Vec<f64>)> {
    check_beta_eta(beta, eta)?;
    let links = LogLinearLinks::new(pi, pi_ref)?;
    let links_t = LinkTable::new(pi_t, pi_ref, Link::Phi);
    let coef = (1.0 + 1.0 / eta) * beta;
    let mut grad = vec![0.0; pi.theta.len()];
    let mut total = 0.0;
    for t in triples {
        let f = f_from_h(links.h(t.x, t.a, t.b), links_t.diff(t.x, t.a, t.b)?, beta, eta);
        let resid = clip(f, SELFPLAY_CLIP) - reward_diff_target(ell_hat, b_t, t.x, t.a, t.b);
        total += resid * resid;
        if f.abs() < SELFPLAY_CLIP {
            links.add_grad_h(&mut grad, 2.0 * resid * coef, t.x, t.a, t.b);
        }
    }
    Ok((total, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{FeatureMap, PipelineTag};
    use crate::rng::from_seed;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use std::sync::Arc;

    const LN3: f64 = 1.098_612_288_668_109_8;

    fn uniform2() -> Table {
        Table::uniform(1, 2)
    }

    fn skewed() -> Table {
        Table::from_rows(vec![vec![0.75, 0.25]]).unwrap()
    }

    fn one(y: u8) -> ObservedDataset {
        ObservedDataset::clean(vec![PreferenceSample { x: 0, a0: 1, a1: 0, y }])
    }

    fn sq(beta: f64, epsilon: Epsilon) -> LossSpec {
        LossSpec::SquareChipo { beta, r_max: 1.0, epsilon }
    }

    #[test]
    fn phi_examples() {
        assert_eq!(phi(1.0).unwrap(), 1.0);
        assert_relative_eq!(phi(std::f64::consts::E).unwrap(), std::f64::consts::E + 1.0, epsilon = 1e-15);
        assert_relative_eq!(phi(2.0).unwrap(), 2.693_147_180_559_945, epsilon = 1e-15);
        assert!(phi(0.0).is_err());
        assert!(phi(-1.0).is_err());
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip(3.0, 2.0), 2.0);
        assert_eq!(clip(-5.0, 2.0), -2.0);
        assert_eq!(clip(0.3, 2.0), 0.3);
    }

    #[test]
    fn h_examples() {
        let r = uniform2();
        assert_eq!(h_chipo(&r, &r, 0, 0, 1).unwrap(), 0.0);
        assert_eq!(h_chipo(&skewed(), &r, 0, 1, 1).unwrap(), 0.0);
        let expected = (1.5 + 1.5f64.ln()) - (0.5 + 0.5f64.ln());
        assert_relative_eq!(h_chipo(&skewed(), &r, 0, 0, 1).unwrap(), expected, epsilon = 1e-15);
        assert_relative_eq!(expected, 2.098_612_288_668_11, epsilon = 1e-12);
        assert_eq!(h_dpo(&r, &r, 0, 0, 1).unwrap(), 0.0);
        assert_eq!(h_dpo(&skewed(), &r, 0, 0, 0).unwrap(), 0.0);
        assert_relative_eq!(h_dpo(&skewed(), &r, 0, 0, 1).unwrap(), LN3, epsilon = 1e-15);
        let zero = Table::from_rows(vec![vec![1.0, 0.0]]).unwrap();
        assert!(matches!(h_chipo(&zero, &r, 0, 0, 1), Err(Error::Domain(_))));
        assert!(h_dpo(&zero, &r, 0, 1, 0).is_err());
    }

    #[test]
    fn square_loss_examples() {
        let r = uniform2();
        assert_eq!(square_chipo_loss(&r, &r, &one(1), &sq(1.0, Epsilon::Infinite)).unwrap(), 1.0);
        let ldp = ObservedDataset::new(one(1).samples, PipelineTag::LdpOnly, Epsilon::Finite(LN3), 0.0).unwrap();
        assert_relative_eq!(
            square_chipo_loss(&r, &r, &ldp, &sq(1.0, Epsilon::Finite(LN3))).unwrap(),
            4.0,
            epsilon = 1e-13
        );
        // β·h = 2 = 2R_max: choose β so that β·h(0, 1) is exactly 2
        let h = h_chipo(&skewed(), &r, 0, 0, 1).unwrap();
        let spec = sq(2.0 / h, Epsilon::Infinite);
        let v = square_chipo_loss(&skewed(), &r, &one(1), &spec).unwrap();
        let oracle = (2.0 / (1.0 + (-2.0f64).exp()) - 2.0).powi(2);
        assert_relative_eq!(v, oracle, epsilon = 1e-12);
        assert_relative_eq!(v, 0.056_83, epsilon = 1e-5);
        let cs = LossSpec::CentralScore { beta: 2.0 / h, r_max: 1.0 };
        assert_relative_eq!(central_score(&skewed(), &r, &one(1), &cs).unwrap(), oracle, epsilon = 1e-12);
        assert_eq!(central_score(&r, &r, &one(1), &LossSpec::CentralScore { beta: 1.0, r_max: 1.0 }).unwrap(), 1.0);
    }

    #[test]
    fn wrong_spec_kind_is_rejected() {
        let r = uniform2();
        assert!(square_chipo_loss(&r, &r, &one(1), &LossSpec::Dpo { beta: 1.0 }).is_err());
        assert!(loss(&r, &r, &one(1), &LossSpec::Dpo { beta: 0.0 }).is_err());
    }

    #[test]
    fn log_loss_examples() {
        let r = uniform2();
        let data = ObservedDataset::clean(vec![
            PreferenceSample { x: 0, a0: 1, a1: 0, y: 1 },
            PreferenceSample { x: 0, a0: 0, a1: 1, y: 0 },
            PreferenceSample { x: 0, a0: 1, a1: 0, y: 0 },
        ]);
        let ln2 = std::f64::consts::LN_2;
        let lc = LossSpec::LogChipo { beta: 1.0, r_max: 1.0 };
        assert_relative_eq!(log_chipo_loss(&r, &r, &data, &lc).unwrap(), 3.0 * ln2, epsilon = 1e-14);
        assert_relative_eq!(dpo_loss(&r, &r, &data, &LossSpec::Dpo { beta: 1.0 }).unwrap(), 3.0 * ln2, epsilon = 1e-14);

        let h = h_chipo(&skewed(), &r, 0, 0, 1).unwrap();
        let lc = LossSpec::LogChipo { beta: 2.0 / h, r_max: 1.0 };
        let v = log_chipo_loss(&skewed(), &r, &one(1), &lc).unwrap();
        assert_relative_eq!(v, -(1.0 / (1.0 + (-2.0f64).exp())).ln(), epsilon = 1e-14);
        assert_relative_eq!(v, 0.126_928, epsilon = 1e-6);
        // clipping saturates at 2R_max
        let lc_big = LossSpec::LogChipo { beta: 20.0 / h, r_max: 1.0 };
        assert_relative_eq!(log_chipo_loss(&skewed(), &r, &one(1), &lc_big).unwrap(), v, epsilon = 1e-14);

        // swapping (a1, a0) together with the label leaves every loss unchanged
        let swapped = ObservedDataset::clean(vec![PreferenceSample { x: 0, a0: 0, a1: 1, y: 0 }]);
        for spec in [lc, LossSpec::Dpo { beta: 0.7 }, sq(0.7, Epsilon::Infinite)] {
            assert_relative_eq!(
                loss(&skewed(), &r, &one(1), &spec).unwrap(),
                loss(&skewed(), &r, &swapped, &spec).unwrap(),
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn f_beta_eta_examples() {
        let r = uniform2();
        let p = skewed();
        let h = h_chipo(&p, &r, 0, 0, 1).unwrap();
        assert_relative_eq!(f_beta_eta(&p, &p, &r, 0.3, 0.7, 0, 0, 1).unwrap(), 0.3 * h, epsilon = 1e-14);
        assert_eq!(f_beta_eta(&p, &r, &r, 0.3, 0.7, 0, 1, 1).unwrap(), 0.0);
        assert_eq!(f_from_h(2.0, 1.0, 1.0, 1.0), 3.0);
        assert!(f_beta_eta(&p, &p, &r, 0.0, 1.0, 0, 0, 1).is_err());
    }

    #[test]
    fn policy_opt_loss_examples() {
        let r = Table::uniform(1, 3);
        let zero = PreferenceTable::zeros(1, 3);
        let triples: Vec<_> = (0..3)
            .flat_map(|a| (0..3).map(move |b| UnlabeledTriple { x: 0, a, b }))
            .collect();
        assert_eq!(policy_opt_loss(&r, &r, &r, &zero, &triples, &[1], 1.0, 1.0).unwrap(), 0.0);

        let diag: Vec<_> = (0..3).map(|a| UnlabeledTriple { x: 0, a, b: a }).collect();
        let p = Table::from_rows(vec![vec![0.7, 0.2, 0.1]]).unwrap();
        let ell = PreferenceTable::from_fn(1, 3, |_, a, b| if a > b { 0.8 } else { -0.3 });
        assert_eq!(policy_opt_loss(&p, &r, &r, &ell, &diag, &[2], 0.5, 0.1).unwrap(), 0.0);

        // single triple with f = 5 (clipped to 4) and target 2
        let q = Table::from_rows(vec![vec![0.9, 0.1]]).unwrap();
        let u = uniform2();
        let h = h_chipo(&q, &u, 0, 0, 1).unwrap();
        let ell = PreferenceTable::from_fn(1, 2, |_, a, _| if a == 0 { 1.0 } else { -1.0 });
        let t = [UnlabeledTriple { x: 0, a: 0, b: 1 }];
        let v = policy_opt_loss(&q, &q, &u, &ell, &t, &[1], 5.0 / h, 0.3).unwrap();
        assert_relative_eq!(v, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn sigmoid_mvt_spot_value() {
        let c = sigmoid_mvt_constant(1.0);
        assert_relative_eq!(c, 5.086_161_269_630_488, epsilon = 1e-12);
        let d = sigmoid(1.0) - sigmoid(-1.0);
        assert_relative_eq!(d, 0.462_117_157_260_009_8, epsilon = 1e-12);
        assert!(c * d >= 2.0);
        assert_relative_eq!(c * d, 2.3504, epsilon = 1e-4);
    }

    #[test]
    fn counts_match_per_sample_sum() {
        let mut rng = from_seed(3);
        let pi_ref = Table::from_rows(vec![vec![0.2, 0.5, 0.3], vec![0.6, 0.1, 0.3]]).unwrap();
        let pi = Table::from_rows(vec![vec![0.5, 0.2, 0.3], vec![0.1, 0.1, 0.8]]).unwrap();
        let samples: Vec<_> = (0..500)
            .map(|_| PreferenceSample {
                x: rng.random_range(0..2),
                a0: rng.random_range(0..3),
                a1: rng.random_range(0..3),
                y: rng.random_range(0..2),
            })
            .collect();
        let counts = PairCounts::from_samples(2, 3, &samples).unwrap();
        assert_eq!(counts.total(), 500);
        let ds = ObservedDataset::new(samples, PipelineTag::LdpOnly, Epsilon::Finite(0.5), 0.0).unwrap();
        for spec in [
            sq(0.8, Epsilon::Finite(0.5)),
            LossSpec::LogChipo { beta: 0.8, r_max: 1.0 },
            LossSpec::Dpo { beta: 0.8 },
            LossSpec::CentralScore { beta: 0.8, r_max: 1.0 },
        ] {
            let a = loss(&pi, &pi_ref, &ds, &spec).unwrap();
            let b = counts.loss(&pi, &pi_ref, &spec).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn square_chipo_gradient_matches_finite_differences() {
        let mut rng = from_seed(11);
        let (nx, na, d) = (3, 4, 3);
        let fm = Arc::new(FeatureMap::random(nx, na, d, &mut rng));
        let pi_ref = Table::from_rows(vec![
            vec![0.1, 0.2, 0.3, 0.4],
            vec![0.25, 0.25, 0.25, 0.25],
            vec![0.4, 0.3, 0.2, 0.1],
        ])
        .unwrap();
        let samples: Vec<_> = (0..200)
            .map(|_| PreferenceSample {
                x: rng.random_range(0..nx),
                a0: rng.random_range(0..na),
                a1: rng.random_range(0..na),
                y: rng.random_range(0..2),
            })
            .collect();
        let ds = ObservedDataset::new(samples, PipelineTag::LdpOnly, Epsilon::Finite(1.0), 0.0).unwrap();
        let spec = sq(0.5, Epsilon::Finite(1.0));
        let step = 1e-5;
        let mut checked = 0;
        while checked < 20 {
            let theta: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let pol = LogLinearPolicy::new(fm.clone(), theta.clone()).unwrap();
            // skip points near a clip boundary
            let links = LogLinearLinks::new(&pol, &pi_ref).unwrap();
            let near = ds.samples.iter().any(|s| {
                let v = 0.5 * links.h(s.x, s.a1, s.a0);
                (v.abs() - 2.0).abs() < 1e-3
            });
            if near {
                continue;
            }
            let (_, g) = square_chipo_loss_grad(&pol, &pi_ref, &ds, &spec).unwrap();
            for k in 0..d {
                let mut tp = theta.clone();
                tp[k] += step;
                let mut tm = theta.clone();
                tm[k] -= step;
                let lp = square_chipo_loss(&table_of(&fm, &tp, &pi_ref), &pi_ref, &ds, &spec).unwrap();
                let lm = square_chipo_loss(&table_of(&fm, &tm, &pi_ref), &pi_ref, &ds, &spec).unwrap();
                let fd = (lp - lm) / (2.0 * step);
                assert!(rel_err(g[k], fd) <= 1e-4, "k={k} analytic={} fd={fd}", g[k]);
            }
            checked += 1;
        }
    }

    fn table_of(fm: &Arc<FeatureMap>, theta: &[f64], pi_ref: &Table) -> Table {
        crate::domain::Policy::LogLinear(LogLinearPolicy::new(fm.clone(), theta.to_vec()).unwrap()).to_table(pi_ref)
    }

    proptest! {
        #[test]
        fn h_is_antisymmetric(p in prop::collection::vec(0.01f64..1.0, 3), q in prop::collection::vec(0.01f64..1.0, 3), a in 0usize..3, b in 0usize..3) {
            let norm = |v: Vec<f64>| { let s: f64 = v.iter().sum(); v.into_iter().map(|x| x / s).collect::<Vec<_>>() };
            let pi = Table::from_rows(vec![norm(p)]).unwrap();
            let pr = Table::from_rows(vec![norm(q)]).unwrap();
            prop_assert_eq!(h_chipo(&pi, &pr, 0, a, b).unwrap(), -h_chipo(&pi, &pr, 0, b, a).unwrap());
            prop_assert_eq!(h_dpo(&pi, &pr, 0, a, b).unwrap(), -h_dpo(&pi, &pr, 0, b, a).unwrap());
            let f = f_beta_eta(&pi, &pr, &pr, 0.4, 0.2, 0, a, b).unwrap();
            let g = f_beta_eta(&pi, &pr, &pr, 0.4, 0.2, 0, b, a).unwrap();
            prop_assert_eq!(f, -g);
        }

        #[test]
        fn terms_are_bounded(v in -50.0f64..50.0, r in 0.1f64..4.0, eps in 0.05f64..5.0, y in 0u8..2) {
            let pred = predicted_preference(v, r);
            prop_assert!(pred >= 2.0 * sigmoid(-2.0 * r) - 1.0 && pred <= 2.0 * sigmoid(2.0 * r) - 1.0);
            prop_assert!(pred > -1.0 && pred < 1.0);
            let c = c_factor(Epsilon::Finite(eps)).unwrap();
            let z = 2.0 * f64::from(y) - 1.0;
            prop_assert!(square_term(v, 1.0, r, c, z) <= (1.0 + c).powi(2));
            prop_assert!(square_term(v, 1.0, r, 1.0, z) <= 4.0);
        }

        #[test]
        fn sigmoid_mean_value_bound(z in -1.0f64..1.0, w in -1.0f64..1.0, k in 0usize..3) {
            let r = [1.0, 2.0, 4.0][k];
            let (z, w) = (z * r, w * r);
            prop_assert!((z - w).abs() <= sigmoid_mvt_constant(r) * (sigmoid(z) - sigmoid(w)).abs() + 1e-12);
        }
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert_relative_eq!(log_sigmoid(0.0), -std::f64::consts::LN_2, epsilon = 1e-15);
        assert_relative_eq!(log_sigmoid(-800.0), -800.0, epsilon = 1e-12);
        assert!(log_sigmoid(800.0) <= 0.0 && log_sigmoid(800.0) > -1e-300);
        assert_relative_eq!(sigmoid(1.0), 0.731_058_578_630_004_9, epsilon = 1e-15);
    }

    #[test]
    fn spec_serde() {
        let s: LossSpec = serde_json::from_str(r#"{"kind":"square_chipo","beta":0.5,"r_max":1.0,"epsilon":"inf"}"#).unwrap();
        assert_eq!(s, sq(0.5, Epsilon::Infinite));
        assert!(serde_json::from_str::<LossSpec>(r#"{"kind":"dpo","beta":0.5,"extra":1}"#).is_err());
    }
}
