//! Named reference worlds, fixed by seed so numbers are comparable across runs.

use crate::domain::{AlignmentInstance, FinitePolicyClass, PreferenceModel, PreferenceTable, Table};
use crate::error::Result;
use crate::regression::{lab_preset, RegressionInstance};
use crate::rng::stream;
use crate::selfplay::{mirror_descent_iterates, PreferenceModelClass};
use crate::solvers::{build_realizable_class_with, DistractorConfig};

/// Seed of the 3×3 reference alignment instance.
pub const REFERENCE_SEED: u64 = 8;
/// Default `β` of the reference experiments.
pub const REFERENCE_BETA: f64 = 0.5;
pub const REFERENCE_DISTRACTORS: usize = 15;
/// Seed of the regression lab world.
pub const LAB_SEED: u64 = 1;

/// Distractor recipe of the reference class.
pub const REFERENCE_DISTRACTOR_CONFIG: DistractorConfig = DistractorConfig {
    weight_lo: 0.08,
    weight_hi: 0.5,
    log_stratified: true,
    dominated_only: true,
};

/// 3 contexts × 3 actions, `R_max = 1`, seed-generated.
pub fn reference_instance() -> Result<AlignmentInstance> {
    AlignmentInstance::generate_bt(3, 3, 1.0, &mut stream(REFERENCE_SEED, 0, "preset/instance"))
}

/// `{π*_β}` plus 15 dominated distractors.
pub fn reference_class(instance: &AlignmentInstance, beta: f64) -> Result<FinitePolicyClass> {
    build_realizable_class_with(
        instance,
        beta,
        REFERENCE_DISTRACTORS,
        &REFERENCE_DISTRACTOR_CONFIG,
        &mut stream(REFERENCE_SEED, 0, "preset/class"),
    )
}

pub fn regression_lab() -> Result<RegressionInstance> {
    lab_preset(&mut stream(LAB_SEED, 0, "preset/lab"))
}

/// 2-context, 2-action general-preference world with its model class and
/// policy class.
#[derive(Debug, Clone)]
pub struct SelfPlayPreset {
    pub instance: AlignmentInstance,
    pub models: PreferenceModelClass,
    pub policies: FinitePolicyClass,
}

/// Preference strengths of the self-play world, per context.
const SELFPLAY_ELL: [f64; 2] = [0.3, -0.2];
const SELFPLAY_PI_REF: [[f64; 2]; 2] = [[0.5, 0.5], [0.6, 0.4]];

fn two_action_ell(values: [f64; 2]) -> PreferenceTable {
    PreferenceTable::from_fn(2, 2, |x, a, b| match (a, b) {
        (0, 1) => values[x],
        (1, 0) => -values[x],
        _ => 0.0,
    })
}

fn selfplay_instance(ell: [f64; 2]) -> Result<AlignmentInstance> {
    AlignmentInstance::new(
        vec![0.5, 0.5],
        Table::from_rows(SELFPLAY_PI_REF.iter().map(|r| r.to_vec()).collect())?,
        PreferenceModel::General { ell_star: two_action_ell(ell) },
        1.0,
    )
}

/// Policies: `π_ref`, four mirror-descent iterates under `ℓ*` and three under
/// `−ℓ*`, all at the `T = 32` schedule. Models: `ℓ*` and its sign patterns at
/// full and half strength.
pub fn selfplay_preset() -> Result<SelfPlayPreset> {
    let instance = selfplay_instance(SELFPLAY_ELL)?;
    let mut models = vec![two_action_ell(SELFPLAY_ELL)];
    for scale in [1.0, 0.5] {
        for signs in [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]] {
            let v = [scale * signs[0] * SELFPLAY_ELL[0].abs(), scale * signs[1] * SELFPLAY_ELL[1].abs()];
            if v != SELFPLAY_ELL && models.len() < 8 {
                models.push(two_action_ell(v));
            }
        }
    }
    let models = PreferenceModelClass::new(models)?;
    let t = 32usize;
    let (beta, eta) = (1.0 / (t as f64).sqrt(), 1.0 / t as f64);
    let mut policies = vec![instance.pi_ref.clone()];
    policies.extend(mirror_descent_iterates(&instance, beta, eta, 4)?);
    let reversed = selfplay_instance([-SELFPLAY_ELL[0], -SELFPLAY_ELL[1]])?;
    policies.extend(mirror_descent_iterates(&reversed, beta, eta, 3)?);
    Ok(SelfPlayPreset { instance, models, policies: FinitePolicyClass::new(policies)? })
}
