//! Acceptance criteria: the experiment configurations and the verdict
//! functions, shared by the acceptance test target and `report`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use brier_align::domain::{
    FeatureMap, LogLinearPolicy, ObservedDataset, PipelineTag, Policy, PreferenceSample, PreferenceTable,
    Table,
};
use brier_align::eval::{
    chi2_to_reference, concentrability, duality_gap, err_stat, exploitability, rate_fit, solve_matrix_game, RunRecord,
};
use brier_align::mechanisms::{c_factor, max_abs_log_ratio, Epsilon};
use brier_align::objectives::{
    f_from_h, h_chipo, policy_opt_loss, policy_opt_loss_grad, sigmoid, sigmoid_mvt_constant, square_chipo_loss,
    square_chipo_loss_grad, LossSpec, SELFPLAY_CLIP,
};
use brier_align::presets;
use brier_align::rng::from_seed;
use brier_align::selfplay::UnlabeledTriple;
use brier_align::solvers::{cdp_distribution, solve_pi_beta_star, stationarity_residuals};
use brier_align::stats::{mean, paired_t_test_greater};

use crate::config::ExperimentConfig;

pub const MASTER_SEED: u64 = 1;
pub const SIGNIFICANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub id: u8,
    pub name: &'static str,
    pub pass: bool,
    pub measured: String,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}] {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.id, self.name, self.measured)
    }
}

fn verdict(id: u8, name: &'static str, pass: bool, measured: String) -> Verdict {
    Verdict { id, name, pass, measured }
}

pub const NAMES: [&str; 10] = [
    "clean rate",
    "ldp cost",
    "ctl/ltc separation",
    "central dp",
    "regression lab",
    "identities",
    "gradients",
    "self-play",
    "game solver",
    "determinism",
];

const REFERENCE: &str = r#""instance": {"preset": "reference"}, "mode": "bt""#;
const N_GRID: &str = "[128, 256, 512, 1024, 2048, 4096, 8192]";

fn config(body: &str) -> ExperimentConfig {
    let text = format!(r#"{{"schema_version": 1, "master_seed": {MASTER_SEED}, {body}}}"#);
    ExperimentConfig::from_json(&text).unwrap_or_else(|e| panic!("built-in config is invalid: {e}\n{text}"))
}

/// The runs behind criterion `id`, by name. Criteria without data return
/// an empty list.
pub fn experiments(id: u8) -> Vec<(&'static str, ExperimentConfig)> {
    match id {
        1 => vec![(
            "clean_rate",
            config(&format!(
                r#"{REFERENCE}, "pipeline": {{"kind": "clean"}}, "algorithm": "square_chipo", "n_grid": {N_GRID}, "seeds": 100"#
            )),
        )],
        2 => vec![(
            "ldp_cost",
            config(&format!(
                r#"{REFERENCE}, "pipeline": {{"kind": "ctl", "epsilon": 1.0, "alpha": 0.0}}, "algorithm": "square_chipo",
                   "n_grid": [8192], "seeds": 200, "axes": {{"epsilon": [0.5, 1.0, 2.0, "inf"]}}"#
            )),
        )],
        3 => vec![(
            "ctl_ltc",
            config(&format!(
                r#"{REFERENCE}, "pipeline": {{"kind": "ctl", "epsilon": 0.5, "alpha": 0.1, "adversary": "flip"}},
                   "algorithm": "square_chipo", "n_grid": [8192], "seeds": 200,
                   "axes": {{"pipeline": ["ctl", "ltc", "ldp_only"]}}"#
            )),
        )],
        4 => vec![
            (
                "cdp",
                config(&format!(
                    r#"{REFERENCE}, "pipeline": {{"kind": "cdp", "epsilon": 1.0, "alpha": 0.0}}, "algorithm": "cdp_sample",
                       "n_grid": [8192, 32768], "seeds": 200"#
                )),
            ),
            (
                "cdp_clean",
                config(&format!(
                    r#"{REFERENCE}, "pipeline": {{"kind": "clean"}}, "algorithm": "square_chipo", "n_grid": [8192, 32768], "seeds": 200"#
                )),
            ),
        ],
        5 => {
            let lab = r#""instance": {"preset": "regression_lab"}, "mode": "bt", "algorithm": "regression_lab""#;
            vec![
                ("lab_rate", config(&format!(r#"{lab}, "pipeline": {{"kind": "clean"}}, "n_grid": {N_GRID}, "seeds": 100"#))),
                (
                    "lab_ldp",
                    config(&format!(
                        r#"{lab}, "pipeline": {{"kind": "ldp_only", "epsilon": 1.0}}, "n_grid": [8192], "seeds": 200,
                           "axes": {{"pipeline": ["clean", "ldp_only"], "epsilon": [0.5, 1.0, 2.0]}}"#
                    )),
                ),
                (
                    "lab_ctl_ltc",
                    config(&format!(
                        r#"{lab}, "pipeline": {{"kind": "ctl", "epsilon": 0.5, "alpha": 0.1, "adversary": "flip"}},
                           "n_grid": [8192], "seeds": 200, "axes": {{"pipeline": ["ctl", "ltc", "ldp_only"]}}"#
                    )),
                ),
                (
                    "lab_cdp",
                    config(&format!(
                        r#"{lab}, "pipeline": {{"kind": "cdp", "epsilon": 1.0, "alpha": 0.1, "adversary": "flip"}},
                           "n_grid": [8192], "seeds": 200, "axes": {{"epsilon": [0.5, 1.0], "alpha": [0.05, 0.1]}}"#
                    )),
                ),
            ]
        }
        8 => vec![(
            "selfplay",
            config(
                r#""instance": {"preset": "selfplay"}, "mode": "general", "pipeline": {"kind": "clean"},
                   "algorithm": "selfplay", "T": 32, "schedule": "theorem", "n_grid": [128, 4096], "seeds": 50"#,
            ),
        )],
        _ => vec![],
    }
}

/// A supplementary run: the CTL/LTC comparison with an adversary that does
/// not commute with randomized response.
pub fn ctl_ltc_constant_label() -> ExperimentConfig {
    config(&format!(
        r#"{REFERENCE}, "pipeline": {{"kind": "ctl", "epsilon": 0.5, "alpha": 0.1, "adversary": {{"constant_label": 1}}}},
           "algorithm": "square_chipo", "n_grid": [8192], "seeds": 200,
           "axes": {{"pipeline": ["ctl", "ltc", "ldp_only"]}}"#
    ))
}

/// Runtime ceilings in seconds, where one is stated.
pub fn runtime_limit(id: u8) -> Option<f64> {
    match id {
        1 => Some(120.0),
        2 | 8 => Some(180.0),
        5 => Some(300.0),
        _ => None,
    }
}

fn metric(r: &RunRecord) -> Option<f64> {
    r.sg.or(r.dg).or(r.err2_gen)
}

/// Metric values of one series at `n`, keyed by seed.
fn series(records: &[RunRecord], algorithm: &str, setting: &str, eps: Option<Epsilon>, alpha: Option<f64>, n: usize) -> BTreeMap<u64, f64> {
    records
        .iter()
        .filter(|r| {
            r.algorithm == algorithm
                && r.setting == setting
                && r.n == n
                && eps.is_none_or(|e| r.epsilon == e)
                && alpha.is_none_or(|a| r.alpha == a)
        })
        .filter_map(|r| metric(r).map(|v| (r.seed, v)))
        .collect()
}

fn mean_of(s: &BTreeMap<u64, f64>) -> Option<f64> {
    mean(&s.values().copied().collect::<Vec<_>>())
}

fn ns_of(records: &[RunRecord], algorithm: &str, setting: &str) -> Vec<usize> {
    let mut ns: Vec<usize> = records.iter().filter(|r| r.algorithm == algorithm && r.setting == setting).map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    ns
}

fn slope_of(records: &[RunRecord], algorithm: &str, setting: &str) -> Option<(f64, usize)> {
    let ns = ns_of(records, algorithm, setting);
    let pts: Vec<(f64, f64)> = ns
        .iter()
        .filter_map(|&n| mean_of(&series(records, algorithm, setting, None, None, n)).map(|m| (n as f64, m)))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    rate_fit(&pts).ok().map(|f| (f.slope, pts.len()))
}

fn fmt_slope(s: Option<(f64, usize)>) -> String {
    match s {
        Some((v, k)) => format!("{v:.3} over {k} sizes"),
        None => "undefined".into(),
    }
}

fn within_factor(ratio: f64, factor: f64) -> bool {
    ratio.is_finite() && ratio >= 1.0 / factor && ratio <= factor
}

/// Criterion 1.
pub fn clean_rate(records: &[RunRecord]) -> Option<Verdict> {
    let grid: Vec<RunRecord> = records.iter().filter(|r| (128..=8192).contains(&r.n)).cloned().collect();
    if ns_of(&grid, "square_chipo", "clean").len() < 3 {
        return None;
    }
    let s = slope_of(&grid, "square_chipo", "clean");
    let pass = s.is_some_and(|(v, _)| (-0.70..=-0.30).contains(&v));
    Some(verdict(1, NAMES[0], pass, format!("mean SG slope {} (window [-0.70, -0.30])", fmt_slope(s))))
}

/// Criterion 2: `SG(ε)/SG(∞)` within a factor 3 of `c(ε)` at the largest `n`.
pub fn ldp_cost(records: &[RunRecord]) -> Option<Verdict> {
    let n = *ns_of(records, "square_chipo", "ctl").last()?;
    let base = mean_of(&series(records, "square_chipo", "ctl", Some(Epsilon::Infinite), Some(0.0), n))?;
    let mut parts = Vec::new();
    let mut pass = base > 0.0;
    for e in [0.5, 1.0, 2.0] {
        let eps = Epsilon::Finite(e);
        let m = mean_of(&series(records, "square_chipo", "ctl", Some(eps), Some(0.0), n))?;
        let c = c_factor(eps).ok()?;
        let r = m / base / c;
        pass &= within_factor(r, 3.0);
        parts.push(format!("eps {e}: ratio {:.3} vs c {c:.3} ({r:.2}x)", m / base));
    }
    Some(verdict(2, NAMES[1], pass, format!("n {n}: {}", parts.join("; "))))
}

/// Paired one-sided test that LTC's excess over the matched LDP-only mean
/// exceeds CTL's.
fn separation(records: &[RunRecord], algorithm: &str, n: usize, eps: Epsilon, alpha: f64) -> Option<(bool, String)> {
    let ldp = mean_of(&series(records, algorithm, "ldp_only", Some(eps), None, n))?;
    let ctl = series(records, algorithm, "ctl", Some(eps), Some(alpha), n);
    let ltc = series(records, algorithm, "ltc", Some(eps), Some(alpha), n);
    let seeds: Vec<u64> = ctl.keys().filter(|s| ltc.contains_key(s)).copied().collect();
    if seeds.len() < 2 {
        return None;
    }
    let a: Vec<f64> = seeds.iter().map(|s| ltc[s] - ldp).collect();
    let b: Vec<f64> = seeds.iter().map(|s| ctl[s] - ldp).collect();
    let (ma, mb) = (mean(&a)?, mean(&b)?);
    match paired_t_test_greater(&a, &b) {
        Ok(t) => Some((
            t.p_value < SIGNIFICANCE,
            format!("excess LTC {ma:.3e}, CTL {mb:.3e}, paired t {:.3}, p {:.4} ({} seeds)", t.t, t.p_value, seeds.len()),
        )),
        Err(e) => Some((false, format!("excess LTC {ma:.3e}, CTL {mb:.3e}, test undefined: {e}"))),
    }
}

/// Criterion 3.
pub fn ctl_ltc(records: &[RunRecord]) -> Option<Verdict> {
    let n = *ns_of(records, "square_chipo", "ltc").last()?;
    let (pass, text) = separation(records, "square_chipo", n, Epsilon::Finite(0.5), 0.1)?;
    Some(verdict(3, NAMES[2], pass, format!("n {n}: {text}")))
}

/// Exact enumeration audit of the central mechanism: every dataset of up to
/// `max_samples` samples over a 1×2 world, against every neighbor that
/// changes one sample, for every candidate count up to `max_candidates`.
/// Returns the largest `|log P(D) − log P(D')|` and `ε`.
pub fn cdp_audit(epsilon: f64, max_samples: usize, max_candidates: usize) -> (f64, f64) {
    let pi_ref = Table::from_rows(vec![vec![0.5, 0.5]]).expect("valid table");
    let all_policies: Vec<Table> = (0..max_candidates)
        .map(|i| {
            let p = 0.05 + 0.9 * i as f64 / (max_candidates.max(2) - 1) as f64;
            Table::from_rows(vec![vec![p, 1.0 - p]]).expect("valid table")
        })
        .collect();
    // every (a0, a1, y) of a 2-action world
    let atoms: Vec<PreferenceSample> = (0..2)
        .flat_map(|a0| (0..2).flat_map(move |a1| (0..2u8).map(move |y| PreferenceSample { x: 0, a0, a1, y })))
        .collect();
    let spec = LossSpec::CentralScore { beta: 2.0, r_max: 1.0 };
    let mut worst = 0.0f64;
    for k in 2..=max_candidates {
        let class = brier_align::domain::FinitePolicyClass::new(all_policies[..k].to_vec()).expect("valid class");
        for size in 1..=max_samples {
            // datasets as multisets are enough: the mechanism depends on counts only
            for combo in multisets(atoms.len(), size) {
                let samples: Vec<PreferenceSample> = combo.iter().map(|&i| atoms[i]).collect();
                let ds = ObservedDataset::new(samples.clone(), PipelineTag::CdpInput, Epsilon::Infinite, 0.0)
                    .expect("valid dataset");
                let p = cdp_distribution(&class, &pi_ref, &ds, &spec, epsilon).expect("distribution");
                let lp: Vec<f64> = p.iter().map(|v| v.ln()).collect();
                for j in 0..samples.len() {
                    for (ai, atom) in atoms.iter().enumerate() {
                        if ai == combo[j] {
                            continue;
                        }
                        let mut nb = samples.clone();
                        nb[j] = *atom;
                        let dn = ObservedDataset::new(nb, PipelineTag::CdpInput, Epsilon::Infinite, 0.0).expect("valid dataset");
                        let q = cdp_distribution(&class, &pi_ref, &dn, &spec, epsilon).expect("distribution");
                        let lq: Vec<f64> = q.iter().map(|v| v.ln()).collect();
                        worst = worst.max(max_abs_log_ratio(&lp, &lq));
                    }
                }
            }
        }
    }
    (worst, epsilon)
}

/// Non-decreasing index sequences of length `size` over `0..k`.
fn multisets(k: usize, size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; size];
    loop {
        out.push(cur.clone());
        let mut i = size;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] + 1 < k {
                let v = cur[i] + 1;
                cur[i..].iter_mut().for_each(|c| *c = v);
                break;
            }
        }
    }
}

/// Criterion 4. `audit` is the result of [`cdp_audit`].
pub fn central_dp(records: &[RunRecord], audit: (f64, f64)) -> Option<Verdict> {
    let ns = ns_of(records, "cdp_sample", "cdp");
    let (n_lo, n_hi) = (*ns.first()?, *ns.last()?);
    if n_hi != 4 * n_lo {
        return None;
    }
    let excess = |n: usize| -> Option<f64> {
        let cdp = mean_of(&series(records, "cdp_sample", "cdp", Some(Epsilon::Finite(1.0)), None, n))?;
        let clean = mean_of(&series(records, "square_chipo", "clean", None, None, n))?;
        Some(cdp - clean)
    };
    let (lo, hi) = (excess(n_lo)?, excess(n_hi)?);
    let shrink = lo / hi;
    let audit_ok = audit.0 <= audit.1 + 1e-9;
    let pass = audit_ok && lo > 0.0 && (hi <= 0.0 || shrink >= 2.0);
    Some(verdict(
        4,
        NAMES[3],
        pass,
        format!(
            "audit max log-ratio {:.6} (eps {}); excess SG n {n_lo}: {lo:.3e}, n {n_hi}: {hi:.3e}, shrink {shrink:.2}x",
            audit.0, audit.1
        ),
    ))
}

/// The four regression-lab properties, each as a sub-verdict.
pub fn regression_lab(records: &[RunRecord]) -> Option<(Verdict, Vec<(String, bool)>)> {
    let alg = "regression_lab";
    let mut parts = Vec::new();
    // rate
    let s = slope_of(records, alg, "clean")?;
    parts.push((format!("clean slope {:.3} (window [-1.35, -0.65])", s.0), (-1.35..=-0.65).contains(&s.0)));
    // LDP scaling
    let n = *ns_of(records, alg, "ldp_only").last()?;
    let base = mean_of(&series(records, alg, "clean", None, None, n))?;
    let mut ok = base > 0.0;
    let mut text = Vec::new();
    for e in [0.5, 1.0, 2.0] {
        let eps = Epsilon::Finite(e);
        let m = mean_of(&series(records, alg, "ldp_only", Some(eps), None, n))?;
        let c2 = c_factor(eps).ok()?.powi(2);
        ok &= within_factor(m / base / c2, 3.0);
        text.push(format!("eps {e}: {:.2} vs c^2 {c2:.2}", m / base));
    }
    parts.push((format!("ldp ratio at n {n}: {}", text.join(", ")), ok));
    // separation
    let n_sep = *ns_of(records, alg, "ltc").last()?;
    let (ok, text) = separation(records, alg, n_sep, Epsilon::Finite(0.5), 0.1)?;
    parts.push((format!("ctl/ltc at n {n_sep}: {text}"), ok));
    // cDP additivity
    let n_cdp = *ns_of(records, alg, "cdp").last()?;
    let clean = mean_of(&series(records, alg, "clean", None, None, n_cdp))?;
    let mut ks = Vec::new();
    for e in [0.5, 1.0] {
        for a in [0.05, 0.1] {
            let m = mean_of(&series(records, alg, "cdp", Some(Epsilon::Finite(e)), Some(a), n_cdp))?;
            let excess = m - clean;
            ks.push((e, a, excess, excess / (1.0 / (n_cdp as f64 * e) + a)));
        }
    }
    let positive = ks.iter().all(|k| k.3 > 0.0);
    let g = if positive { (ks.iter().map(|k| k.3.ln()).sum::<f64>() / ks.len() as f64).exp() } else { f64::NAN };
    let dev = ks.iter().map(|k| (k.3 / g).max(g / k.3)).fold(0.0, f64::max);
    parts.push((
        format!(
            "cdp additivity at n {n_cdp}: {}; max deviation from the common scale {dev:.2}x (limit 3x)",
            ks.iter().map(|k| format!("(eps {}, alpha {}) excess {:.2e}", k.0, k.1, k.2)).collect::<Vec<_>>().join(", ")
        ),
        positive && dev <= 3.0,
    ));
    let pass = parts.iter().all(|p| p.1);
    let summary = parts.iter().filter(|p| !p.1).map(|p| p.0.clone()).collect::<Vec<_>>();
    let measured = if pass {
        format!("all four properties hold ({})", parts[0].0)
    } else {
        format!("failing: {}", summary.join(" | "))
    };
    Some((verdict(5, NAMES[4], pass, measured), parts))
}

/// Measured exponent of the corruption term: slope of log excess error
/// against log α at fixed ε (reported, not asserted).
pub fn alpha_exponent(records: &[RunRecord]) -> Option<f64> {
    let alg = "regression_lab";
    let n = *ns_of(records, alg, "cdp").last()?;
    let clean = mean_of(&series(records, alg, "clean", None, None, n))?;
    let pts: Vec<(f64, f64)> = [0.05, 0.1]
        .iter()
        .filter_map(|&a| mean_of(&series(records, alg, "cdp", Some(Epsilon::Finite(1.0)), Some(a), n)).map(|m| (a, m - clean)))
        .collect();
    if pts.len() != 2 || pts.iter().any(|p| p.1 <= 0.0) {
        return None;
    }
    Some((pts[1].1 / pts[0].1).ln() / (pts[1].0 / pts[0].0).ln())
}

/// Criterion 8. `dg_ref` is `DG(π_ref)` on the preset.
pub fn selfplay(records: &[RunRecord], dg_ref: f64) -> Option<Verdict> {
    let ns = ns_of(records, "selfplay", "clean");
    let (lo, hi) = (*ns.first()?, *ns.last()?);
    if lo == hi {
        return None;
    }
    let s_lo = series(records, "selfplay", "clean", None, None, lo);
    let s_hi = series(records, "selfplay", "clean", None, None, hi);
    let (m_lo, m_hi) = (mean_of(&s_lo)?, mean_of(&s_hi)?);
    let worst = s_hi.values().copied().fold(0.0, f64::max);
    let pass = m_hi <= 0.5 * m_lo && worst <= dg_ref;
    Some(verdict(
        8,
        NAMES[7],
        pass,
        format!("mean DG n=m={lo}: {m_lo:.3e}, n=m={hi}: {m_hi:.3e} (ratio {:.3}); max DG at {hi} {worst:.3e} vs DG(pi_ref) {dg_ref:.3e}", m_hi / m_lo),
    ))
}

pub fn selfplay_reference_gap() -> f64 {
    let p = presets::selfplay_preset().expect("preset builds");
    duality_gap(&p.instance.pi_ref, &p.instance, &p.policies)
}

fn random_policy<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Table {
    let data: Vec<Vec<f64>> = (0..rows)
        .map(|_| {
            let v: Vec<f64> = (0..cols).map(|_| rng.random::<f64>() + 1e-3).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
        .collect();
    Table::from_rows(data).expect("valid rows")
}

/// Criterion 6.
pub fn identities() -> Verdict {
    let mut rng = from_seed(MASTER_SEED);
    let reference = presets::reference_instance().expect("preset builds");
    let sp = presets::selfplay_preset().expect("preset builds").instance;
    let mut worst_c = 0.0f64;
    for inst in [&reference, &sp] {
        for _ in 0..100 {
            let p = random_policy(inst.num_contexts(), inst.num_actions(), &mut rng);
            let d = chi2_to_reference(&p, inst).expect("positive reference");
            worst_c = worst_c.max((concentrability(&p, inst) - (2.0 * d + 1.0)).abs());
        }
    }
    let mut worst_res = 0.0f64;
    let mut worst_err = 0.0f64;
    for beta in [0.1, presets::REFERENCE_BETA, 2.0] {
        let star = solve_pi_beta_star(&reference, beta).expect("solver");
        worst_res = stationarity_residuals(&star, &reference, beta).expect("bt").into_iter().fold(worst_res, f64::max);
        worst_err = worst_err.max(err_stat(&star, &reference, beta).expect("positive policy"));
    }
    let mut mvt_ok = true;
    for r in [1.0, 2.0, 4.0] {
        let c = sigmoid_mvt_constant(r);
        for _ in 0..10_000 {
            let (z, w) = (rng.random_range(-r..=r), rng.random_range(-r..=r));
            let lhs = (z - w).abs();
            let rhs = c * (sigmoid(z) - sigmoid(w)).abs();
            mvt_ok &= lhs <= rhs * (1.0 + 1e-12) + 1e-15;
        }
    }
    let pass = worst_c <= 1e-10 && worst_res <= 1e-8 && worst_err <= 1e-6 && mvt_ok;
    verdict(
        6,
        NAMES[5],
        pass,
        format!(
            "max |C - (2D+1)| {worst_c:.2e}; max stationarity residual {worst_res:.2e}; max err_stat(pi*) {worst_err:.2e}; mean-value bound {}",
            if mvt_ok { "holds on 3x10^4 pairs" } else { "violated" }
        ),
    )
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn loglinear_table(fm: &Arc<FeatureMap>, theta: &[f64], pi_ref: &Table) -> Table {
    Policy::LogLinear(LogLinearPolicy::new(fm.clone(), theta.to_vec()).expect("dimension matches")).to_table(pi_ref)
}

/// Criterion 7: central differences with step `1e-5` at 20 random points per
/// loss, skipping points within `1e-3` of a clip boundary.
pub fn gradients() -> Verdict {
    const STEP: f64 = 1e-5;
    let mut rng = from_seed(MASTER_SEED.wrapping_add(7));
    let (nx, na, d) = (3, 3, 4);
    let fm = Arc::new(FeatureMap::random(nx, na, d, &mut rng));
    let pi_ref = random_policy(nx, na, &mut rng);
    let samples: Vec<PreferenceSample> = (0..300)
        .map(|_| PreferenceSample {
            x: rng.random_range(0..nx),
            a0: rng.random_range(0..na),
            a1: rng.random_range(0..na),
            y: rng.random_range(0..2),
        })
        .collect();
    let ds = ObservedDataset::new(samples, PipelineTag::LdpOnly, Epsilon::Finite(1.0), 0.0).expect("valid dataset");
    let spec = LossSpec::SquareChipo { beta: 0.5, r_max: 1.0, epsilon: Epsilon::Finite(1.0) };
    let pi_t = random_policy(nx, na, &mut rng);
    let ell = PreferenceTable::from_fn(nx, na, |x, a, b| ((x + 2 * a) as f64 - (x + 2 * b) as f64) / 8.0);
    let triples: Vec<UnlabeledTriple> =
        (0..200).map(|_| UnlabeledTriple { x: rng.random_range(0..nx), a: rng.random_range(0..na), b: rng.random_range(0..na) }).collect();
    let b_t: Vec<usize> = (0..nx).map(|_| rng.random_range(0..na)).collect();
    let (beta, eta) = (0.4, 0.5);

    let mut worst = [0.0f64; 2];
    let mut checked = [0usize; 2];
    let mut attempts = 0;
    while (checked[0] < 20 || checked[1] < 20) && attempts < 10_000 {
        attempts += 1;
        let theta: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
        let table = loglinear_table(&fm, &theta, &pi_ref);
        let pol = LogLinearPolicy::new(fm.clone(), theta.clone()).expect("dimension matches");
        if checked[0] < 20 {
            let near = ds.samples.iter().any(|s| {
                let v = spec.beta() * h_at(&table, &pi_ref, s.x, s.a1, s.a0);
                (v.abs() - 2.0).abs() < 1e-3
            });
            if !near {
                let (_, g) = square_chipo_loss_grad(&pol, &pi_ref, &ds, &spec).expect("gradient");
                for (k, gk) in g.iter().enumerate() {
                    let fd = central_difference(&theta, k, STEP, |t| {
                        square_chipo_loss(&loglinear_table(&fm, t, &pi_ref), &pi_ref, &ds, &spec).expect("loss")
                    });
                    worst[0] = worst[0].max(rel_err(*gk, fd));
                }
                checked[0] += 1;
            }
        }
        if checked[1] < 20 {
            let near = triples.iter().any(|t| {
                let f = f_from_h(
                    h_at(&table, &pi_ref, t.x, t.a, t.b),
                    h_at(&pi_t, &pi_ref, t.x, t.a, t.b),
                    beta,
                    eta,
                );
                (f.abs() - SELFPLAY_CLIP).abs() < 1e-3
            });
            if !near {
                let (_, g) = policy_opt_loss_grad(&pol, &pi_t, &pi_ref, &ell, &triples, &b_t, beta, eta).expect("gradient");
                for (k, gk) in g.iter().enumerate() {
                    let fd = central_difference(&theta, k, STEP, |t| {
                        policy_opt_loss(&loglinear_table(&fm, t, &pi_ref), &pi_t, &pi_ref, &ell, &triples, &b_t, beta, eta)
                            .expect("loss")
                    });
                    worst[1] = worst[1].max(rel_err(*gk, fd));
                }
                checked[1] += 1;
            }
        }
    }
    let pass = checked == [20, 20] && worst[0] <= 1e-4 && worst[1] <= 1e-4;
    verdict(
        7,
        NAMES[6],
        pass,
        format!(
            "max relative error square_chipo {:.2e} ({} points), policy_opt {:.2e} ({} points)",
            worst[0], checked[0], worst[1], checked[1]
        ),
    )
}

fn h_at(policy: &Table, pi_ref: &Table, x: usize, a: usize, b: usize) -> f64 {
    h_chipo(policy, pi_ref, x, a, b).expect("positive policy")
}

fn central_difference(theta: &[f64], k: usize, step: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut tp = theta.to_vec();
    tp[k] += step;
    let mut tm = theta.to_vec();
    tm[k] -= step;
    (f(&tp) - f(&tm)) / (2.0 * step)
}

/// Criterion 9.
pub fn game_solver() -> Verdict {
    let pennies = vec![vec![1.0, -1.0], vec![-1.0, 1.0]];
    let mp = solve_matrix_game(&pennies, 200_000, 1e-4).expect("finite matrix");
    let (gap_mp, _) = exploitability(&pennies, &mp.row, &mp.col);
    let mp_ok = gap_mp <= 1e-4 && mp.row.iter().chain(&mp.col).all(|p| (p - 0.5).abs() <= 1e-3);
    let dom = vec![vec![0.0, 1.0], vec![-1.0, 0.0]];
    let ds = solve_matrix_game(&dom, 10_000, 1e-9).expect("finite matrix");
    let dom_ok = ds.row == vec![1.0, 0.0] && ds.gap == 0.0 && ds.value == 0.0;
    verdict(
        9,
        NAMES[8],
        mp_ok && dom_ok,
        format!(
            "matching pennies row {:?} col {:?} gap {gap_mp:.2e}; dominant-row game row {:?} gap {} value {}",
            round3(&mp.row),
            round3(&mp.col),
            ds.row,
            ds.gap,
            ds.value
        ),
    )
}

fn round3(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e3).round() / 1e3).collect()
}

/// Criterion 10, from the bytes of two runs of the same configurations.
pub fn determinism(first: &[Vec<u8>], second: &[Vec<u8>]) -> Verdict {
    let same = first.len() == second.len() && first.iter().zip(second).all(|(a, b)| a == b);
    let bytes: usize = first.iter().map(Vec::len).sum();
    verdict(10, NAMES[9], same, format!("{} CSV files, {bytes} bytes, {}", first.len(), if same { "identical" } else { "differ" }))
}

/// Verdicts computable from a record set alone, plus the in-process checks.
/// Criteria without matching records are omitted.
pub fn verdicts_from_records(records: &[RunRecord]) -> Vec<Verdict> {
    let mut out = Vec::new();
    out.extend(clean_rate(records));
    out.extend(ldp_cost(records));
    out.extend(ctl_ltc(records));
    if !ns_of(records, "cdp_sample", "cdp").is_empty() {
        out.extend(central_dp(records, cdp_audit(1.0, 4, 4)));
    }
    out.extend(regression_lab(records).map(|v| v.0));
    out.push(identities());
    out.push(gradients());
    if !ns_of(records, "selfplay", "clean").is_empty() {
        out.extend(selfplay(records, selfplay_reference_gap()));
    }
    out.push(game_solver());
    out.sort_by_key(|v| v.id);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn built_in_configs_parse() {
        for id in 1..=10 {
            for (name, cfg) in experiments(id) {
                assert!(cfg.validate().is_ok(), "{name}");
            }
        }
        ctl_ltc_constant_label().validate().unwrap();
    }

    #[test]
    fn multisets_are_counted() {
        // C(k + s - 1, s)
        assert_eq!(multisets(8, 2).len(), 36);
        assert_eq!(multisets(3, 3).len(), 10);
    }

    #[test]
    fn small_audit_respects_epsilon() {
        let (worst, eps) = cdp_audit(0.7, 2, 3);
        assert!(worst <= eps + 1e-9, "{worst}");
        assert!(worst > 0.0);
    }

    #[test]
    fn deterministic_checks_pass() {
        assert!(identities().pass, "{}", identities());
        assert!(gradients().pass, "{}", gradients());
        assert!(game_solver().pass, "{}", game_solver());
    }
}
