//! Ground-truth worlds, policies, policy classes and preference data.
//!
//! Contexts and actions are dense indices `0..num_contexts` and
//! `0..num_actions`. Every table is stored row-major with one row per context.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanisms::Epsilon;
use crate::objectives::sigmoid;
use crate::rng::{bernoulli, sample_categorical};

/// Tolerance used when checking that probability rows sum to one.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A dense `rows × cols` table of reals, indexed `(context, action)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Table {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Input("table dimensions must be positive".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::Input(format!(
                "table data has {} entries, expected {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Table { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Table {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn uniform(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 1.0 / cols as f64)
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Input("ragged table rows".into()));
        }
        Self::new(r, c, rows.into_iter().flatten().collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, x: usize, a: usize) -> f64 {
        self.data[x * self.cols + a]
    }

    #[inline]
    pub fn set(&mut self, x: usize, a: usize, v: f64) {
        self.data[x * self.cols + a] = v;
    }

    #[inline]
    pub fn row(&self, x: usize) -> &[f64] {
        &self.data[x * self.cols..(x + 1) * self.cols]
    }

    pub fn row_mut(&mut self, x: usize) -> &mut [f64] {
        &mut self.data[x * self.cols..(x + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    /// Checks that every row is a probability vector. With `strict`, every
    /// entry must also be positive.
    pub fn check_simplex_rows(&self, strict: bool, what: &str) -> Result<()> {
        for x in 0..self.rows {
            let row = self.row(x);
            if let Some(a) = row
                .iter()
                .position(|&p| !p.is_finite() || p < 0.0 || (strict && p <= 0.0))
            {
                return Err(Error::Invalid(format!(
                    "{what}: entry ({x},{a}) = {} is not a valid probability",
                    row[a]
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::Invalid(format!("{what}: row {x} sums to {s}")));
            }
        }
        Ok(())
    }
}

impl Serialize for Table {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Table {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Table::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

/// Preference function `ℓ(x, a, b)` over `contexts × actions × actions`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceTable {
    contexts: usize,
    actions: usize,
    data: Vec<f64>,
}

impl PreferenceTable {
    pub fn zeros(contexts: usize, actions: usize) -> Self {
        PreferenceTable {
            contexts,
            actions,
            data: vec![0.0; contexts * actions * actions],
        }
    }

    /// Builds `ℓ(x,a,b) = f(x,a,b)` for every triple.
    pub fn from_fn(contexts: usize, actions: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(contexts, actions);
        for x in 0..contexts {
            for a in 0..actions {
                for b in 0..actions {
                    t.set(x, a, b, f(x, a, b));
                }
            }
        }
        t
    }

    pub fn contexts(&self) -> usize {
        self.contexts
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    #[inline]
    pub fn get(&self, x: usize, a: usize, b: usize) -> f64 {
        self.data[(x * self.actions + a) * self.actions + b]
    }

    #[inline]
    pub fn set(&mut self, x: usize, a: usize, b: usize, v: f64) {
        self.data[(x * self.actions + a) * self.actions + b] = v;
    }

    pub fn is_antisymmetric(&self) -> bool {
        (0..self.contexts).all(|x| {
            (0..self.actions).all(|a| {
                (0..self.actions).all(|b| self.get(x, a, b) == -self.get(x, b, a))
            })
        })
    }

    pub fn check_range(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite() || v.abs() > 1.0) {
            Some(i) => Err(Error::Invalid(format!(
                "preference value {} at flat index {i} is outside [-1, 1]",
                self.data[i]
            ))),
            None => Ok(()),
        }
    }
}

impl Serialize for PreferenceTable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let nested: Vec<Vec<Vec<f64>>> = (0..self.contexts)
            .map(|x| {
                (0..self.actions)
                    .map(|a| (0..self.actions).map(|b| self.get(x, a, b)).collect())
                    .collect()
            })
            .collect();
        nested.serialize(s)
    }
}

impl<'de> Deserialize<'de> for PreferenceTable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let nested = Vec::<Vec<Vec<f64>>>::deserialize(d)?;
        let contexts = nested.len();
        let actions = nested.first().map_or(0, Vec::len);
        if contexts == 0 || actions == 0 {
            return Err(D::Error::custom("empty preference table"));
        }
        let mut t = PreferenceTable::zeros(contexts, actions);
        for (x, plane) in nested.iter().enumerate() {
            if plane.len() != actions || plane.iter().any(|r| r.len() != actions) {
                return Err(D::Error::custom("preference table must be X x A x A"));
            }
            for (a, row) in plane.iter().enumerate() {
                for (b, &v) in row.iter().enumerate() {
                    t.set(x, a, b, v);
                }
            }
        }
        Ok(t)
    }
}

/// How labels are generated: a bounded latent reward (Bradley-Terry) or a
/// direct antisymmetric preference function.
#[derive(Debug, Clone, PartialEq)]
pub enum PreferenceModel {
    BradleyTerry { reward: Table },
    General { ell_star: PreferenceTable },
}

/// The ground-truth world.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentInstance {
    pub rho: Vec<f64>,
    pub pi_ref: Table,
    pub model: PreferenceModel,
    pub r_max: f64,
    /// Bound on implicit-reward differences; computed and stored by
    /// [`crate::eval::v_max_diagnostic`] rather than assumed.
    pub v_max: Option<f64>,
}

/// On-disk form of an [`AlignmentInstance`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    pub num_contexts: usize,
    pub num_actions: usize,
    pub rho: Vec<f64>,
    pub pi_ref: Table,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<Table>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ell_star: Option<PreferenceTable>,
    pub r_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_max: Option<f64>,
}

impl AlignmentInstance {
    pub fn new(
        rho: Vec<f64>,
        pi_ref: Table,
        model: PreferenceModel,
        r_max: f64,
    ) -> Result<Self> {
        let inst = AlignmentInstance {
            rho,
            pi_ref,
            model,
            r_max,
            v_max: None,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn num_contexts(&self) -> usize {
        self.pi_ref.rows()
    }

    pub fn num_actions(&self) -> usize {
        self.pi_ref.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let (nx, na) = (self.num_contexts(), self.num_actions());
        if !(self.r_max.is_finite() && self.r_max > 0.0) {
            return Err(Error::Invalid(format!("r_max must be positive, got {}", self.r_max)));
        }
        if let Some(v) = self.v_max {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Invalid(format!("v_max must be positive, got {v}")));
            }
        }
        if self.rho.len() != nx {
            return Err(Error::Invalid(format!(
                "rho has {} entries for {nx} contexts",
                self.rho.len()
            )));
        }
        if self.rho.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::Invalid("rho entries must be positive".into()));
        }
        let s: f64 = self.rho.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Invalid(format!("rho sums to {s}")));
        }
        self.pi_ref.check_simplex_rows(true, "pi_ref")?;
        match &self.model {
            PreferenceModel::BradleyTerry { reward } => {
                if reward.rows() != nx || reward.cols() != na {
                    return Err(Error::Invalid("reward table shape mismatch".into()));
                }
                if let Some(&r) = reward
                    .data()
                    .iter()
                    .find(|&&r| !(r.is_finite() && (0.0..=self.r_max).contains(&r)))
                {
                    return Err(Error::Invalid(format!(
                        "reward entry {r} outside [0, {}]",
                        self.r_max
                    )));
                }
            }
            PreferenceModel::General { ell_star } => {
                if ell_star.contexts() != nx || ell_star.actions() != na {
                    return Err(Error::Invalid("ell_star shape mismatch".into()));
                }
                ell_star.check_range()?;
                if !ell_star.is_antisymmetric() {
                    return Err(Error::Invalid("ell_star must be antisymmetric".into()));
                }
            }
        }
        Ok(())
    }

    pub fn from_spec(spec: InstanceSpec) -> Result<Self> {
        let model = match (spec.reward, spec.ell_star) {
            (Some(reward), None) => PreferenceModel::BradleyTerry { reward },
            (None, Some(ell_star)) => PreferenceModel::General { ell_star },
            _ => {
                return Err(Error::Invalid(
                    "exactly one of `reward` and `ell_star` must be present".into(),
                ))
            }
        };
        if spec.pi_ref.rows() != spec.num_contexts || spec.pi_ref.cols() != spec.num_actions {
            return Err(Error::Invalid(
                "pi_ref shape disagrees with num_contexts/num_actions".into(),
            ));
        }
        let inst = AlignmentInstance {
            rho: spec.rho,
            pi_ref: spec.pi_ref,
            model,
            r_max: spec.r_max,
            v_max: spec.v_max,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn to_spec(&self) -> InstanceSpec {
        let (reward, ell_star) = match &self.model {
            PreferenceModel::BradleyTerry { reward } => (Some(reward.clone()), None),
            PreferenceModel::General { ell_star } => (None, Some(ell_star.clone())),
        };
        InstanceSpec {
            num_contexts: self.num_contexts(),
            num_actions: self.num_actions(),
            rho: self.rho.clone(),
            pi_ref: self.pi_ref.clone(),
            reward,
            ell_star,
            r_max: self.r_max,
            v_max: self.v_max,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_spec(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_spec())?)
    }

    pub fn reward(&self) -> Result<&Table> {
        match &self.model {
            PreferenceModel::BradleyTerry { reward } => Ok(reward),
            PreferenceModel::General { .. } => Err(Error::Mode(
                "operation needs a Bradley-Terry reward table".into(),
            )),
        }
    }

    pub fn ell_star(&self) -> Result<&PreferenceTable> {
        match &self.model {
            PreferenceModel::General { ell_star } => Ok(ell_star),
            PreferenceModel::BradleyTerry { .. } => Err(Error::Mode(
                "operation needs a general preference table".into(),
            )),
        }
    }

    pub fn is_bradley_terry(&self) -> bool {
        matches!(self.model, PreferenceModel::BradleyTerry { .. })
    }

    /// `σ(r*(x,a1) − r*(x,a0))`: probability that `a1` is preferred to `a0`.
    pub fn bt_preference_prob(&self, x: usize, a1: usize, a0: usize) -> Result<f64> {
        let r = self.reward()?;
        Ok(sigmoid(r.get(x, a1) - r.get(x, a0)))
    }

    /// `P*(a1 ≻ a0 | x)` under whichever model the instance carries.
    pub fn preference_prob(&self, x: usize, a1: usize, a0: usize) -> f64 {
        match &self.model {
            PreferenceModel::BradleyTerry { reward } => {
                sigmoid(reward.get(x, a1) - reward.get(x, a0))
            }
            PreferenceModel::General { ell_star } => 0.5 * (1.0 + ell_star.get(x, a1, a0)),
        }
    }

    /// `ℓ(x,a,b) = 2 P*(a ≻ b | x) − 1`. In the Bradley-Terry case this is
    /// `tanh((r*(x,a) − r*(x,b))/2)`, which is odd in floating point too.
    pub fn ell(&self, x: usize, a: usize, b: usize) -> f64 {
        match &self.model {
            PreferenceModel::General { ell_star } => ell_star.get(x, a, b),
            PreferenceModel::BradleyTerry { reward } => (0.5 * (reward.get(x, a) - reward.get(x, b))).tanh(),
        }
    }

    /// Seed-generated Bradley-Terry world: rewards uniform on `[0, r_max]`,
    /// `pi_ref` rows and `rho` drawn from a flat Dirichlet.
    pub fn generate_bt<R: Rng + ?Sized>(
        num_contexts: usize,
        num_actions: usize,
        r_max: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if num_contexts == 0 || num_actions == 0 {
            return Err(Error::param("dimensions", "must be positive"));
        }
        let rho = dirichlet(&vec![1.0; num_contexts], rng);
        let mut pi_ref = Vec::with_capacity(num_contexts * num_actions);
        for _ in 0..num_contexts {
            pi_ref.extend(dirichlet(&vec![1.0; num_actions], rng));
        }
        let reward: Vec<f64> = (0..num_contexts * num_actions)
            .map(|_| rng.random::<f64>() * r_max)
            .collect();
        Self::new(
            rho,
            Table::new(num_contexts, num_actions, pi_ref)?,
            PreferenceModel::BradleyTerry {
                reward: Table::new(num_contexts, num_actions, reward)?,
            },
            r_max,
        )
    }
}

/// Draws from `Dirichlet(alpha)` by normalizing independent Gamma draws.
/// Entries are floored at `1e-12` before renormalizing so the result is
/// strictly positive.
pub fn dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = alpha
        .iter()
        .map(|&a| {
            Gamma::new(a, 1.0)
                .expect("Dirichlet concentration must be positive")
                .sample(rng)
                .max(1e-12)
        })
        .collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|p| *p /= s);
    v
}

/// Feature map `ψ(x, a) ∈ ℝ^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub num_contexts: usize,
    pub num_actions: usize,
    pub dim: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(num_contexts: usize, num_actions: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != num_contexts * num_actions * dim {
            return Err(Error::Input("feature map has the wrong number of entries".into()));
        }
        Ok(FeatureMap {
            num_contexts,
            num_actions,
            dim,
            data,
        })
    }

    /// Standard-normal features.
    pub fn random<R: Rng + ?Sized>(num_contexts: usize, num_actions: usize, dim: usize, rng: &mut R) -> Self {
        let data = (0..num_contexts * num_actions * dim)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        FeatureMap {
            num_contexts,
            num_actions,
            dim,
            data,
        }
    }

    #[inline]
    pub fn psi(&self, x: usize, a: usize) -> &[f64] {
        let start = (x * self.num_actions + a) * self.dim;
        &self.data[start..start + self.dim]
    }
}

/// `π_θ(a|x) ∝ π_ref(a|x) · exp(θ·ψ(x,a))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLinearPolicy {
    pub features: Arc<FeatureMap>,
    pub theta: Vec<f64>,
}

impl LogLinearPolicy {
    pub fn new(features: Arc<FeatureMap>, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != features.dim {
            return Err(Error::Input(format!(
                "theta has dimension {}, feature map has {}",
                theta.len(),
                features.dim
            )));
        }
        Ok(LogLinearPolicy { features, theta })
    }

    /// Probability row for context `x`, computed with a max-shift.
    pub fn row(&self, pi_ref_row: &[f64], x: usize) -> Vec<f64> {
        let logits: Vec<f64> = (0..pi_ref_row.len())
            .map(|a| dot(&self.theta, self.features.psi(x, a)))
            .collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut row: Vec<f64> = pi_ref_row
            .iter()
            .zip(&logits)
            .map(|(&q, &l)| q * (l - m).exp())
            .collect();
        let z: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= z);
        row
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A conditional distribution over actions given contexts.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Tabular(Table),
    LogLinear(LogLinearPolicy),
    /// Uniform mixture of tabular members.
    Mixture(Vec<Table>),
}

impl Policy {
    /// `π(a|x)`. `pi_ref_row` is the reference row for `x`; only the
    /// log-linear variant reads it.
    pub fn prob(&self, pi_ref_row: &[f64], x: usize, a: usize) -> f64 {
        match self {
            Policy::Tabular(t) => t.get(x, a),
            Policy::LogLinear(p) => p.row(pi_ref_row, x)[a],
            Policy::Mixture(members) => {
                members.iter().map(|t| t.get(x, a)).sum::<f64>() / members.len() as f64
            }
        }
    }

    /// Materializes the policy as a table over the reference's shape.
    pub fn to_table(&self, pi_ref: &Table) -> Table {
        match self {
            Policy::Tabular(t) => t.clone(),
            Policy::LogLinear(p) => {
                let mut data = Vec::with_capacity(pi_ref.rows() * pi_ref.cols());
                for x in 0..pi_ref.rows() {
                    data.extend(p.row(pi_ref.row(x), x));
                }
                Table::new(pi_ref.rows(), pi_ref.cols(), data).expect("shape matches pi_ref")
            }
            Policy::Mixture(members) => {
                let mut out = Table::filled(pi_ref.rows(), pi_ref.cols(), 0.0);
                let w = 1.0 / members.len() as f64;
                for m in members {
                    for (o, v) in out.data.iter_mut().zip(m.data()) {
                        *o += w * v;
                    }
                }
                out
            }
        }
    }
}

/// `π(a|x)` for any policy variant.
pub fn policy_prob(policy: &Policy, pi_ref_row: &[f64], x: usize, a: usize) -> f64 {
    policy.prob(pi_ref_row, x, a)
}

/// A finite, non-empty list of tabular policies.
#[derive(Debug, Clone, PartialEq)]
pub struct FinitePolicyClass {
    members: Vec<Table>,
}

impl FinitePolicyClass {
    pub fn new(members: Vec<Table>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Input("policy class must be non-empty".into()));
        }
        for (i, m) in members.iter().enumerate() {
            m.check_simplex_rows(false, &format!("policy class member {i}"))?;
        }
        Ok(FinitePolicyClass { members })
    }

    pub fn members(&self) -> &[Table] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn get(&self, i: usize) -> &Table {
        &self.members[i]
    }
}

/// Log-linear policies with `θ` restricted to a box.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLinearClass {
    pub features: Arc<FeatureMap>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LogLinearClass {
    pub fn new(features: Arc<FeatureMap>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != features.dim || upper.len() != features.dim {
            return Err(Error::Input("box bounds must match the feature dimension".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| l > u) {
            return Err(Error::Input("box lower bound exceeds upper bound".into()));
        }
        Ok(LogLinearClass {
            features,
            lower,
            upper,
        })
    }

    pub fn project(&self, theta: &mut [f64]) {
        for ((t, &l), &u) in theta.iter_mut().zip(&self.lower).zip(&self.upper) {
            *t = t.clamp(l, u);
        }
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(t, (l, u))| (*l..=*u).contains(t))
    }

    pub fn policy(&self, theta: Vec<f64>) -> Result<LogLinearPolicy> {
        LogLinearPolicy::new(self.features.clone(), theta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyClass {
    Finite(FinitePolicyClass),
    LogLinear(LogLinearClass),
}

/// One preference tuple. `y = 1` means `a1` was preferred to `a0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PreferenceSample {
    pub x: usize,
    pub a0: usize,
    pub a1: usize,
    pub y: u8,
}

impl PreferenceSample {
    pub fn new(x: usize, a0: usize, a1: usize, y: u8) -> Result<Self> {
        if y > 1 {
            return Err(Error::Input(format!("label must be 0 or 1, got {y}")));
        }
        Ok(PreferenceSample { x, a0, a1, y })
    }

    /// The label on the ±1 scale, `2y − 1`.
    #[inline]
    pub fn signed_label(&self) -> f64 {
        2.0 * f64::from(self.y) - 1.0
    }

    pub fn check_bounds(&self, num_contexts: usize, num_actions: usize) -> Result<()> {
        if self.x >= num_contexts || self.a0 >= num_actions || self.a1 >= num_actions || self.y > 1 {
            return Err(Error::Input(format!("sample {self:?} out of range")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PipelineTag {
    Clean,
    CorruptOnly,
    LdpOnly,
    Ctl,
    Ltc,
    CdpInput,
}

impl PipelineTag {
    pub fn has_ldp(self) -> bool {
        matches!(self, PipelineTag::LdpOnly | PipelineTag::Ctl | PipelineTag::Ltc)
    }

    pub fn has_corruption(self) -> bool {
        matches!(
            self,
            PipelineTag::CorruptOnly | PipelineTag::Ctl | PipelineTag::Ltc | PipelineTag::CdpInput
        )
    }
}

/// Preference data after the corruption/privacy pipeline. The `y` field of
/// each sample holds the observed label (`z` or `ȳ`).
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedDataset {
    pub samples: Vec<PreferenceSample>,
    pub tag: PipelineTag,
    /// Local privacy level applied to the labels; `Infinite` when no
    /// randomizer ran.
    pub epsilon: Epsilon,
    pub alpha: f64,
}

impl ObservedDataset {
    pub fn new(
        samples: Vec<PreferenceSample>,
        tag: PipelineTag,
        epsilon: Epsilon,
        alpha: f64,
    ) -> Result<Self> {
        if epsilon.is_finite() && !tag.has_ldp() {
            return Err(Error::Input(format!(
                "{tag:?} dataset cannot carry a finite local epsilon"
            )));
        }
        if alpha != 0.0 && !tag.has_corruption() {
            return Err(Error::Input(format!("{tag:?} dataset cannot carry alpha = {alpha}")));
        }
        Ok(ObservedDataset {
            samples,
            tag,
            epsilon,
            alpha,
        })
    }

    /// Wraps clean labels.
    pub fn clean(samples: Vec<PreferenceSample>) -> Self {
        ObservedDataset {
            samples,
            tag: PipelineTag::Clean,
            epsilon: Epsilon::Infinite,
            alpha: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Draws `n` i.i.d. tuples: `x ∼ ρ`, `a0, a1 ∼ π_ref(·|x)` independently,
/// `y ∼ Ber(P*(a1 ≻ a0 | x))`.
pub fn sample_preference_dataset<R: Rng + ?Sized>(
    instance: &AlignmentInstance,
    n: usize,
    rng: &mut R,
) -> Result<Vec<PreferenceSample>> {
    if n == 0 {
        return Err(Error::param("n", "must be at least 1"));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let x = sample_categorical(&instance.rho, rng);
        let row = instance.pi_ref.row(x);
        let a0 = sample_categorical(row, rng);
        let a1 = sample_categorical(row, rng);
        let p = instance.preference_prob(x, a1, a0);
        let y = u8::from(bernoulli(p, rng));
        out.push(PreferenceSample { x, a0, a1, y });
    }
    Ok(out)
}
