//! Label channels: randomized response, Huber corruption, their two
//! composition orders, and the exponential mechanism.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ObservedDataset, PipelineTag, PreferenceSample};
use crate::error::{Error, Result};
use crate::rng::bernoulli;

/// Privacy level. `Infinite` is an explicit "no privacy" sentinel so that the
/// clean and corruption-only reductions are exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Epsilon {
    Finite(f64),
    Infinite,
}

impl Epsilon {
    pub fn is_finite(self) -> bool {
        matches!(self, Epsilon::Finite(_))
    }

    pub fn value(self) -> f64 {
        match self {
            Epsilon::Finite(e) => e,
            Epsilon::Infinite => f64::INFINITY,
        }
    }

    /// Rejects non-positive or NaN finite values.
    pub fn validate(self) -> Result<Self> {
        match self {
            Epsilon::Finite(e) if !(e > 0.0) || e.is_nan() => {
                Err(Error::param("epsilon", format!("must be positive, got {e}")))
            }
            Epsilon::Finite(e) if e.is_infinite() => Ok(Epsilon::Infinite),
            other => Ok(other),
        }
    }
}

impl From<f64> for Epsilon {
    fn from(e: f64) -> Self {
        if e.is_infinite() && e > 0.0 {
            Epsilon::Infinite
        } else {
            Epsilon::Finite(e)
        }
    }
}

impl fmt::Display for Epsilon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Epsilon::Finite(e) => write!(f, "{e}"),
            Epsilon::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Epsilon {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Epsilon::Finite(e) => s.serialize_f64(*e),
            Epsilon::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Epsilon {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(e) => Ok(Epsilon::from(e)),
            Repr::Text(t) if matches!(t.as_str(), "inf" | "infinity" | "Infinity") => {
                Ok(Epsilon::Infinite)
            }
            Repr::Text(t) => Err(serde::de::Error::custom(format!(
                "epsilon must be a number or \"inf\", got {t:?}"
            ))),
        }
    }
}

/// The corrupting distribution `B_i`, as a stationary function of the sample
/// it replaces.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adversary {
    /// Outputs `1 − current label`.
    #[default]
    Flip,
    ConstantLabel(u8),
    BernoulliQ(f64),
}

impl Adversary {
    pub fn validate(self) -> Result<Self> {
        match self {
            Adversary::ConstantLabel(b) if b > 1 => {
                Err(Error::param("adversary", format!("constant label must be 0 or 1, got {b}")))
            }
            Adversary::BernoulliQ(q) if !(0.0..=1.0).contains(&q) => {
                Err(Error::param("adversary", format!("q must lie in [0, 1], got {q}")))
            }
            ok => Ok(ok),
        }
    }

    /// Bernoulli parameter of the replacement label given the current one.
    pub fn bernoulli_param(self, sample: &PreferenceSample) -> f64 {
        self.param_for_label(sample.y)
    }

    fn param_for_label(self, y: u8) -> f64 {
        match self {
            Adversary::Flip => f64::from(1 - y),
            Adversary::ConstantLabel(b) => f64::from(b),
            Adversary::BernoulliQ(q) => q,
        }
    }

    /// `P(output = 1)` when the current label is 1 with probability `p_one`.
    fn output_one_probability(self, p_one: f64) -> f64 {
        match self {
            Adversary::Flip => 1.0 - p_one,
            Adversary::ConstantLabel(b) => f64::from(b),
            Adversary::BernoulliQ(q) => q,
        }
    }
}

/// Which channel turns clean labels into observed ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PipelineSetting {
    Clean,
    CorruptOnly { alpha: f64, adversary: Adversary },
    LdpOnly { epsilon: Epsilon },
    /// Corruption, then randomized response.
    Ctl { epsilon: Epsilon, alpha: f64, adversary: Adversary },
    /// Randomized response, then corruption.
    Ltc { epsilon: Epsilon, alpha: f64, adversary: Adversary },
    /// Corruption only; the learner privatizes with the exponential mechanism at `epsilon`.
    Cdp { epsilon: Epsilon, alpha: f64, adversary: Adversary },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineKind {
    Clean,
    CorruptOnly,
    LdpOnly,
    Ctl,
    Ltc,
    Cdp,
}

impl PipelineKind {
    pub fn name(self) -> &'static str {
        match self {
            PipelineKind::Clean => "clean",
            PipelineKind::CorruptOnly => "corrupt_only",
            PipelineKind::LdpOnly => "ldp_only",
            PipelineKind::Ctl => "ctl",
            PipelineKind::Ltc => "ltc",
            PipelineKind::Cdp => "cdp",
        }
    }
}

/// Config-file form of a [`PipelineSetting`]: `{kind, epsilon, alpha, adversary}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSpec {
    pub kind: PipelineKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<Epsilon>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversary: Option<Adversary>,
}

fn check_alpha(alpha: f64) -> Result<f64> {
    if (0.0..=0.5).contains(&alpha) {
        Ok(alpha)
    } else {
        Err(Error::param("alpha", format!("must lie in [0, 1/2], got {alpha}")))
    }
}

impl PipelineSetting {
    pub fn kind(&self) -> PipelineKind {
        match self {
            PipelineSetting::Clean => PipelineKind::Clean,
            PipelineSetting::CorruptOnly { .. } => PipelineKind::CorruptOnly,
            PipelineSetting::LdpOnly { .. } => PipelineKind::LdpOnly,
            PipelineSetting::Ctl { .. } => PipelineKind::Ctl,
            PipelineSetting::Ltc { .. } => PipelineKind::Ltc,
            PipelineSetting::Cdp { .. } => PipelineKind::Cdp,
        }
    }

    pub fn epsilon(&self) -> Epsilon {
        match *self {
            PipelineSetting::Clean | PipelineSetting::CorruptOnly { .. } => Epsilon::Infinite,
            PipelineSetting::LdpOnly { epsilon }
            | PipelineSetting::Ctl { epsilon, .. }
            | PipelineSetting::Ltc { epsilon, .. }
            | PipelineSetting::Cdp { epsilon, .. } => epsilon,
        }
    }

    pub fn alpha(&self) -> f64 {
        match *self {
            PipelineSetting::Clean | PipelineSetting::LdpOnly { .. } => 0.0,
            PipelineSetting::CorruptOnly { alpha, .. }
            | PipelineSetting::Ctl { alpha, .. }
            | PipelineSetting::Ltc { alpha, .. }
            | PipelineSetting::Cdp { alpha, .. } => alpha,
        }
    }

    pub fn adversary(&self) -> Option<Adversary> {
        match *self {
            PipelineSetting::Clean | PipelineSetting::LdpOnly { .. } => None,
            PipelineSetting::CorruptOnly { adversary, .. }
            | PipelineSetting::Ctl { adversary, .. }
            | PipelineSetting::Ltc { adversary, .. }
            | PipelineSetting::Cdp { adversary, .. } => Some(adversary),
        }
    }

    /// True for the settings whose learner uses the local (debiased
    /// least-squares) branch.
    pub fn is_local(&self) -> bool {
        !matches!(self, PipelineSetting::Cdp { .. })
    }

    /// Epsilon of the local randomizer, if any. `Infinite` for `Cdp`, whose
    /// privacy lives in the learner.
    pub fn local_epsilon(&self) -> Epsilon {
        match self {
            PipelineSetting::Cdp { .. } => Epsilon::Infinite,
            other => other.epsilon(),
        }
    }

    pub fn validate(self) -> Result<Self> {
        match self {
            PipelineSetting::Clean => Ok(self),
            PipelineSetting::CorruptOnly { alpha, adversary } => Ok(PipelineSetting::CorruptOnly {
                alpha: check_alpha(alpha)?,
                adversary: adversary.validate()?,
            }),
            PipelineSetting::LdpOnly { epsilon } => Ok(PipelineSetting::LdpOnly {
                epsilon: epsilon.validate()?,
            }),
            PipelineSetting::Ctl { epsilon, alpha, adversary } => Ok(PipelineSetting::Ctl {
                epsilon: epsilon.validate()?,
                alpha: check_alpha(alpha)?,
                adversary: adversary.validate()?,
            }),
            PipelineSetting::Ltc { epsilon, alpha, adversary } => Ok(PipelineSetting::Ltc {
                epsilon: epsilon.validate()?,
                alpha: check_alpha(alpha)?,
                adversary: adversary.validate()?,
            }),
            PipelineSetting::Cdp { epsilon, alpha, adversary } => {
                if !epsilon.is_finite() {
                    return Err(Error::param("epsilon", "central DP needs a finite epsilon"));
                }
                Ok(PipelineSetting::Cdp {
                    epsilon: epsilon.validate()?,
                    alpha: check_alpha(alpha)?,
                    adversary: adversary.validate()?,
                })
            }
        }
    }

    pub fn to_spec(&self) -> PipelineSpec {
        let kind = self.kind();
        let has_eps = !matches!(kind, PipelineKind::Clean | PipelineKind::CorruptOnly);
        let has_corr = !matches!(kind, PipelineKind::Clean | PipelineKind::LdpOnly);
        PipelineSpec {
            kind,
            epsilon: has_eps.then(|| self.epsilon()),
            alpha: has_corr.then(|| self.alpha()),
            adversary: self.adversary(),
        }
    }

    pub fn from_spec(spec: PipelineSpec) -> Result<Self> {
        let need_eps = || {
            spec.epsilon
                .ok_or_else(|| Error::Config(format!("pipeline `{}` needs `epsilon`", spec.kind.name())))
        };
        let need_alpha = || {
            spec.alpha
                .ok_or_else(|| Error::Config(format!("pipeline `{}` needs `alpha`", spec.kind.name())))
        };
        let adversary = spec.adversary.unwrap_or_default();
        let unexpected = |field: &str| {
            Err(Error::Config(format!(
                "pipeline `{}` does not take `{field}`",
                spec.kind.name()
            )))
        };
        let setting = match spec.kind {
            PipelineKind::Clean => {
                if spec.epsilon.is_some() {
                    return unexpected("epsilon");
                }
                if spec.alpha.is_some() {
                    return unexpected("alpha");
                }
                PipelineSetting::Clean
            }
            PipelineKind::CorruptOnly => {
                if spec.epsilon.is_some() {
                    return unexpected("epsilon");
                }
                PipelineSetting::CorruptOnly { alpha: need_alpha()?, adversary }
            }
            PipelineKind::LdpOnly => {
                if spec.alpha.is_some() {
                    return unexpected("alpha");
                }
                PipelineSetting::LdpOnly { epsilon: need_eps()? }
            }
            PipelineKind::Ctl => PipelineSetting::Ctl {
                epsilon: need_eps()?,
                alpha: need_alpha()?,
                adversary,
            },
            PipelineKind::Ltc => PipelineSetting::Ltc {
                epsilon: need_eps()?,
                alpha: need_alpha()?,
                adversary,
            },
            PipelineKind::Cdp => PipelineSetting::Cdp {
                epsilon: need_eps()?,
                alpha: spec.alpha.unwrap_or(0.0),
                adversary,
            },
        };
        setting.validate()
    }
}

impl Serialize for PipelineSetting {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_spec().serialize(s)
    }
}

impl<'de> Deserialize<'de> for PipelineSetting {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        PipelineSetting::from_spec(PipelineSpec::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

/// `e^ε / (1 + e^ε)`, the probability that randomized response keeps the
/// label. Defined for `ε ≥ 0`; `ε = 0` gives a fair coin.
pub fn rr_keep_probability(epsilon: Epsilon) -> Result<f64> {
    match epsilon {
        Epsilon::Infinite => Ok(1.0),
        Epsilon::Finite(e) if e >= 0.0 && e.is_finite() => Ok(1.0 / (1.0 + (-e).exp())),
        Epsilon::Finite(e) => Err(Error::param("epsilon", format!("must be non-negative, got {e}"))),
    }
}

/// Keeps `y` with probability `e^ε/(1+e^ε)`, otherwise flips it.
pub fn randomized_response<R: Rng + ?Sized>(y: u8, epsilon: Epsilon, rng: &mut R) -> Result<u8> {
    if y > 1 {
        return Err(Error::Input(format!("label must be 0 or 1, got {y}")));
    }
    match epsilon.validate()? {
        Epsilon::Infinite => Ok(y),
        eps => {
            let keep = rr_keep_probability(eps)?;
            Ok(if bernoulli(keep, rng) { y } else { 1 - y })
        }
    }
}

/// Debiasing factor `(e^ε + 1)/(e^ε − 1)`; 1 at `ε = ∞`.
pub fn c_factor(epsilon: Epsilon) -> Result<f64> {
    match epsilon.validate()? {
        Epsilon::Infinite => Ok(1.0),
        // coth(ε/2), which stays finite where e^ε would overflow
        Epsilon::Finite(e) => Ok(1.0 / (0.5 * e).tanh()),
    }
}

/// With probability `1 − α` returns the sample's current label, otherwise a
/// draw from the adversary's Bernoulli.
pub fn huber_corrupt<R: Rng + ?Sized>(
    sample: &PreferenceSample,
    alpha: f64,
    adversary: Adversary,
    rng: &mut R,
) -> Result<u8> {
    check_alpha(alpha)?;
    if bernoulli(alpha, rng) {
        Ok(u8::from(bernoulli(adversary.bernoulli_param(sample), rng)))
    } else {
        Ok(sample.y)
    }
}

/// Runs every label through the channel described by `setting`, in input order.
pub fn apply_pipeline<R: Rng + ?Sized>(
    dataset: &[PreferenceSample],
    setting: &PipelineSetting,
    rng: &mut R,
) -> Result<ObservedDataset> {
    let setting = setting.validate()?;
    let mut out = dataset.to_vec();
    let tag = match setting {
        PipelineSetting::Clean => PipelineTag::Clean,
        PipelineSetting::CorruptOnly { alpha, adversary } => {
            for s in &mut out {
                s.y = huber_corrupt(s, alpha, adversary, rng)?;
            }
            PipelineTag::CorruptOnly
        }
        PipelineSetting::LdpOnly { epsilon } => {
            for s in &mut out {
                s.y = randomized_response(s.y, epsilon, rng)?;
            }
            PipelineTag::LdpOnly
        }
        PipelineSetting::Ctl { epsilon, alpha, adversary } => {
            for s in &mut out {
                s.y = huber_corrupt(s, alpha, adversary, rng)?;
                s.y = randomized_response(s.y, epsilon, rng)?;
            }
            PipelineTag::Ctl
        }
        PipelineSetting::Ltc { epsilon, alpha, adversary } => {
            for s in &mut out {
                s.y = randomized_response(s.y, epsilon, rng)?;
                s.y = huber_corrupt(s, alpha, adversary, rng)?;
            }
            PipelineTag::Ltc
        }
        PipelineSetting::Cdp { alpha, adversary, .. } => {
            for s in &mut out {
                s.y = huber_corrupt(s, alpha, adversary, rng)?;
            }
            PipelineTag::CdpInput
        }
    };
    ObservedDataset::new(out, tag, setting.local_epsilon(), setting.alpha())
}

/// Closed-form `P(observed label = 1)` when the clean label is 1 with
/// probability `p_one`.
pub fn observed_one_probability(p_one: f64, setting: &PipelineSetting) -> Result<f64> {
    let setting = setting.validate()?;
    let corrupt = |p: f64, alpha: f64, adv: Adversary| (1.0 - alpha) * p + alpha * adv.output_one_probability(p);
    let privatize = |p: f64, eps: Epsilon| -> Result<f64> {
        let k = rr_keep_probability(eps)?;
        Ok(k * p + (1.0 - k) * (1.0 - p))
    };
    Ok(match setting {
        PipelineSetting::Clean => p_one,
        PipelineSetting::CorruptOnly { alpha, adversary }
        | PipelineSetting::Cdp { alpha, adversary, .. } => corrupt(p_one, alpha, adversary),
        PipelineSetting::LdpOnly { epsilon } => privatize(p_one, epsilon)?,
        PipelineSetting::Ctl { epsilon, alpha, adversary } => {
            privatize(corrupt(p_one, alpha, adversary), epsilon)?
        }
        PipelineSetting::Ltc { epsilon, alpha, adversary } => {
            corrupt(privatize(p_one, epsilon)?, alpha, adversary)
        }
    })
}

fn check_scores(scores: &[f64], epsilon: f64, sensitivity: f64) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Input("exponential mechanism needs at least one candidate".into()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Input(format!("score {i} is not finite: {}", scores[i])));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::param("epsilon", format!("must be finite and positive, got {epsilon}")));
    }
    if !(sensitivity > 0.0 && sensitivity.is_finite()) {
        return Err(Error::param("sensitivity", format!("must be positive, got {sensitivity}")));
    }
    Ok(())
}

/// Log-probabilities of the exponential mechanism that favours low scores:
/// `log P(i) = −ε·s_i/(2Δ) − log Σ_j exp(−ε·s_j/(2Δ))`.
pub fn exp_mechanism_log_probs(scores: &[f64], epsilon: f64, sensitivity: f64) -> Result<Vec<f64>> {
    check_scores(scores, epsilon, sensitivity)?;
    let scale = epsilon / (2.0 * sensitivity);
    let best = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = scores.iter().map(|&s| -scale * (s - best)).collect();
    let log_z = shifted.iter().map(|v| v.exp()).sum::<f64>().ln();
    Ok(shifted.into_iter().map(|v| v - log_z).collect())
}

pub fn exp_mechanism_distribution(scores: &[f64], epsilon: f64, sensitivity: f64) -> Result<Vec<f64>> {
    check_scores(scores, epsilon, sensitivity)?;
    let scale = epsilon / (2.0 * sensitivity);
    let best = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = scores.iter().map(|&s| (-scale * (s - best)).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|p| *p /= z);
    Ok(w)
}

/// Samples index `i` with probability proportional to `exp(−ε·s_i/(2Δ))`.
pub fn exp_mechanism_sample<R: Rng + ?Sized>(
    scores: &[f64],
    epsilon: f64,
    sensitivity: f64,
    rng: &mut R,
) -> Result<usize> {
    let probs = exp_mechanism_distribution(scores, epsilon, sensitivity)?;
    Ok(crate::rng::sample_categorical(&probs, rng))
}

/// `max_i |log p_i − log q_i|` over two output distributions given as
/// log-probabilities.
pub fn max_abs_log_ratio(log_p: &[f64], log_q: &[f64]) -> f64 {
    log_p
        .iter()
        .zip(log_q)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;

    const LN3: f64 = 1.098_612_288_668_109_8;

    fn sample(y: u8) -> PreferenceSample {
        PreferenceSample { x: 0, a0: 0, a1: 1, y }
    }

    fn within_3_sigma(count: usize, n: usize, p: f64) -> bool {
        let mean = count as f64 / n as f64;
        (mean - p).abs() <= 3.0 * (p * (1.0 - p) / n as f64).sqrt()
    }

    #[test]
    fn rr_examples() {
        let mut rng = from_seed(1);
        for _ in 0..100 {
            assert_eq!(randomized_response(1, Epsilon::Infinite, &mut rng).unwrap(), 1);
        }
        assert_eq!(rr_keep_probability(Epsilon::Finite(0.0)).unwrap(), 0.5);
        assert!((rr_keep_probability(Epsilon::Finite(LN3)).unwrap() - 0.75).abs() < 1e-15);
        let n = 100_000;
        let kept = (0..n)
            .filter(|_| randomized_response(1, Epsilon::Finite(LN3), &mut rng).unwrap() == 1)
            .count();
        assert!(within_3_sigma(kept, n, 0.75));
    }

    #[test]
    fn rr_rejects_bad_epsilon() {
        let mut rng = from_seed(1);
        assert!(randomized_response(1, Epsilon::Finite(0.0), &mut rng).is_err());
        assert!(randomized_response(1, Epsilon::Finite(-1.0), &mut rng).is_err());
        assert!(c_factor(Epsilon::Finite(0.0)).is_err());
    }

    #[test]
    fn c_factor_examples() {
        assert_eq!(c_factor(Epsilon::Infinite).unwrap(), 1.0);
        assert!((c_factor(Epsilon::Finite(LN3)).unwrap() - 2.0).abs() < 1e-14);
        assert!((c_factor(Epsilon::Finite(std::f64::consts::LN_2)).unwrap() - 3.0).abs() < 1e-14);
        assert!((c_factor(Epsilon::Finite(800.0)).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn huber_examples() {
        let mut rng = from_seed(2);
        for _ in 0..1000 {
            assert_eq!(huber_corrupt(&sample(1), 0.0, Adversary::Flip, &mut rng).unwrap(), 1);
        }
        let n = 100_000;
        // the corrupted half is always flipped
        let flips = (0..n)
            .filter(|_| huber_corrupt(&sample(1), 0.5, Adversary::Flip, &mut rng).unwrap() == 0)
            .count();
        assert!(within_3_sigma(flips, n, 0.5));
        let coin = (0..n)
            .filter(|_| huber_corrupt(&sample(1), 0.5, Adversary::BernoulliQ(0.5), &mut rng).unwrap() == 0)
            .count();
        assert!(within_3_sigma(coin, n, 0.25));
        let ones = (0..n)
            .filter(|_| huber_corrupt(&sample(0), 0.2, Adversary::ConstantLabel(1), &mut rng).unwrap() == 1)
            .count();
        assert!(within_3_sigma(ones, n, 0.2));
        assert!(huber_corrupt(&sample(0), 0.6, Adversary::Flip, &mut rng).is_err());
        assert!(huber_corrupt(&sample(0), -0.1, Adversary::Flip, &mut rng).is_err());
    }

    #[test]
    fn ctl_mixture_arithmetic() {
        let setting = PipelineSetting::Ctl {
            epsilon: Epsilon::Finite(LN3),
            alpha: 0.1,
            adversary: Adversary::Flip,
        };
        let p = observed_one_probability(1.0, &setting).unwrap();
        assert!((p - 0.70).abs() < 1e-14);
        let data: Vec<_> = (0..100_000).map(|_| sample(1)).collect();
        let obs = apply_pipeline(&data, &setting, &mut from_seed(5)).unwrap();
        let ones = obs.samples.iter().filter(|s| s.y == 1).count();
        assert!(within_3_sigma(ones, data.len(), 0.70));
        assert_eq!(obs.tag, PipelineTag::Ctl);
    }

    #[test]
    fn reductions_are_exact_in_closed_form() {
        for &p in &[0.1, 0.5, 0.83] {
            let ctl0 = PipelineSetting::Ctl {
                epsilon: Epsilon::Finite(0.7),
                alpha: 0.0,
                adversary: Adversary::Flip,
            };
            let ldp = PipelineSetting::LdpOnly { epsilon: Epsilon::Finite(0.7) };
            assert_eq!(
                observed_one_probability(p, &ctl0).unwrap(),
                observed_one_probability(p, &ldp).unwrap()
            );
            let ltc_inf = PipelineSetting::Ltc {
                epsilon: Epsilon::Infinite,
                alpha: 0.2,
                adversary: Adversary::ConstantLabel(1),
            };
            let corrupt = PipelineSetting::CorruptOnly {
                alpha: 0.2,
                adversary: Adversary::ConstantLabel(1),
            };
            assert_eq!(
                observed_one_probability(p, &ltc_inf).unwrap(),
                observed_one_probability(p, &corrupt).unwrap()
            );
        }
    }

    #[test]
    fn order_sensitivity_closed_form() {
        let eps = Epsilon::Finite(0.5);
        let k = rr_keep_probability(eps).unwrap();
        let alpha = 0.1;
        for &p in &[0.0, 0.2, 0.5, 0.9, 1.0] {
            // Flip and randomized response are both symmetric binary channels, so they commute.
            let ctl = observed_one_probability(p, &PipelineSetting::Ctl { epsilon: eps, alpha, adversary: Adversary::Flip }).unwrap();
            let ltc = observed_one_probability(p, &PipelineSetting::Ltc { epsilon: eps, alpha, adversary: Adversary::Flip }).unwrap();
            let corrupted = (1.0 - alpha) * p + alpha * (1.0 - p);
            let expected_ctl = k * corrupted + (1.0 - k) * (1.0 - corrupted);
            let privatized = k * p + (1.0 - k) * (1.0 - p);
            let expected_ltc = (1.0 - alpha) * privatized + alpha * (1.0 - privatized);
            assert!((ctl - expected_ctl).abs() < 1e-15);
            assert!((ltc - expected_ltc).abs() < 1e-15);
            assert!((ctl - ltc).abs() < 1e-15);

            // A constant adversary does not commute: after debiasing, LTC's bias is c(ε) times CTL's.
            let c = c_factor(eps).unwrap();
            let adv = Adversary::ConstantLabel(1);
            let ctl = observed_one_probability(p, &PipelineSetting::Ctl { epsilon: eps, alpha, adversary: adv }).unwrap();
            let ltc = observed_one_probability(p, &PipelineSetting::Ltc { epsilon: eps, alpha, adversary: adv }).unwrap();
            let clean = 2.0 * p - 1.0;
            let bias_ctl = c * (2.0 * ctl - 1.0) - (1.0 - alpha) * clean;
            let bias_ltc = c * (2.0 * ltc - 1.0) - (1.0 - alpha) * clean;
            assert!((bias_ctl - alpha).abs() < 1e-12);
            assert!((bias_ltc - alpha * c).abs() < 1e-12);
        }
    }

    #[test]
    fn rr_ldp_audit_exact() {
        for &e in &[0.1, 0.5, 1.0, 2.0, 5.0] {
            let eps = Epsilon::Finite(e);
            let k = rr_keep_probability(eps).unwrap();
            let out = |v: u8, y: u8| if v == y { k } else { 1.0 - k };
            for v in 0..2 {
                for y in 0..2 {
                    for y2 in 0..2 {
                        assert!((out(v, y) / out(v, y2)).ln() <= e + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn exp_mechanism_examples() {
        let d = exp_mechanism_distribution(&[3.0, 3.0, 3.0, 3.0], 1.0, 4.0).unwrap();
        assert!(d.iter().all(|&p| (p - 0.25).abs() < 1e-15));
        let d = exp_mechanism_distribution(&[0.0, LN3], 8.0, 4.0).unwrap();
        assert!((d[0] - 0.75).abs() < 1e-14 && (d[1] - 0.25).abs() < 1e-14);
        let mut rng = from_seed(9);
        for _ in 0..100 {
            assert_eq!(exp_mechanism_sample(&[12.5], 1.0, 4.0, &mut rng).unwrap(), 0);
        }
        assert!(exp_mechanism_sample(&[0.0, f64::NAN], 1.0, 4.0, &mut rng).is_err());
        assert!(exp_mechanism_sample(&[], 1.0, 4.0, &mut rng).is_err());
        // max-shift keeps huge scores finite
        let d = exp_mechanism_distribution(&[1e6, 1e6 + 1.0], 8.0, 4.0).unwrap();
        assert!((d[0] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn pipeline_spec_round_trip() {
        let s = PipelineSetting::Ltc {
            epsilon: Epsilon::Finite(0.5),
            alpha: 0.1,
            adversary: Adversary::ConstantLabel(1),
        };
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<PipelineSetting>(&text).unwrap(), s);
        let clean: PipelineSetting = serde_json::from_str(r#"{"kind":"clean"}"#).unwrap();
        assert_eq!(clean, PipelineSetting::Clean);
        let inf: PipelineSetting = serde_json::from_str(r#"{"kind":"ldp_only","epsilon":"inf"}"#).unwrap();
        assert_eq!(inf, PipelineSetting::LdpOnly { epsilon: Epsilon::Infinite });
        assert!(serde_json::from_str::<PipelineSetting>(r#"{"kind":"ctl","epsilon":1.0}"#).is_err());
        assert!(serde_json::from_str::<PipelineSetting>(r#"{"kind":"ctl","epsilon":1.0,"alpha":0.7}"#).is_err());
        assert!(serde_json::from_str::<PipelineSetting>(r#"{"kind":"clean","bogus":1}"#).is_err());
        let flip: PipelineSetting =
            serde_json::from_str(r#"{"kind":"corrupt_only","alpha":0.1,"adversary":"flip"}"#).unwrap();
        assert_eq!(flip.adversary(), Some(Adversary::Flip));
    }
}
