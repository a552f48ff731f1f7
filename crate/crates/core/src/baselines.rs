//! Comparison schemes: random-mode NAFD, greedy NAFD, HD and FD.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::netgen::{LargeScaleChannels, SystemConfig};
use crate::perfmodel::{dl_se_nafd, ul_se_nafd, DesignVariables, PowerParams, Scheme, SchemeResult};
use crate::scasolver::{run_fixed_modes, run_with_restoration, Objective, ScaConfig, ScaError, ScaOutcome, SchemeModel};

/// UL, DL and not-yet-assigned AP indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApSets {
    pub ul: Vec<usize>,
    pub dl: Vec<usize>,
    pub unassigned: Vec<usize>,
}

impl ApSets {
    pub fn new(num_aps: usize) -> Self {
        Self { ul: Vec::new(), dl: Vec::new(), unassigned: (0..num_aps).collect() }
    }

    pub fn is_partition(&self, num_aps: usize) -> bool {
        let mut seen = vec![0u8; num_aps];
        for &i in self.ul.iter().chain(&self.dl).chain(&self.unassigned) {
            if i >= num_aps {
                return false;
            }
            seen[i] += 1;
        }
        seen.iter().all(|&c| c == 1)
    }

    /// `(a, b)` indicators; unassigned APs get `a = b = 0`.
    pub fn indicators(&self, num_aps: usize) -> (Vec<f64>, Vec<f64>) {
        let mut a = vec![0.0; num_aps];
        let mut b = vec![0.0; num_aps];
        for &i in &self.dl {
            a[i] = 1.0;
        }
        for &i in &self.ul {
            b[i] = 1.0;
        }
        (a, b)
    }

    fn assign(&mut self, ap: usize, ul: bool) {
        self.unassigned.retain(|&i| i != ap);
        if ul {
            self.ul.push(ap);
        } else {
            self.dl.push(ap);
        }
    }
}

/// Independent fair coins for `a`; `b = 1 − a`.
pub fn random_modes(num_aps: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<f64> = (0..num_aps).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
    let b = a.iter().map(|v| 1.0 - v).collect();
    (a, b)
}

/// Fixed greedy controls: equal power split at DL APs, full UL power, unit LSFD weights.
pub fn fixed_controls(ch: &LargeScaleChannels, cfg: &SystemConfig, a: &[f64], b: &[f64]) -> DesignVariables {
    let mut v = DesignVariables::full_power(ch, a, cfg.antennas);
    v.b = b.to_vec();
    v
}

/// Sum SE of the NAFD formulas under the fixed controls.
pub fn fixed_sum_se(ch: &LargeScaleChannels, cfg: &SystemConfig, sets: &ApSets) -> f64 {
    let (a, b) = sets.indicators(ch.num_aps());
    let v = fixed_controls(ch, cfg, &a, &b);
    dl_se_nafd(ch, cfg, &v).iter().chain(&ul_se_nafd(ch, cfg, &v)).sum()
}

/// Greedy mode assignment: each round adds the AP/mode pair with the larger
/// sum SE, UL winning ties. Unassigned APs neither serve nor interfere.
pub fn greedy_modes(ch: &LargeScaleChannels, cfg: &SystemConfig) -> ApSets {
    let mut sets = ApSets::new(ch.num_aps());
    while !sets.unassigned.is_empty() {
        let best = |ul: bool| {
            let mut top: Option<(usize, f64)> = None;
            for &i in &sets.unassigned {
                let mut trial = sets.clone();
                trial.assign(i, ul);
                let s = fixed_sum_se(ch, cfg, &trial);
                if top.is_none_or(|(_, t)| s > t) {
                    top = Some((i, s));
                }
            }
            top.unwrap()
        };
        let (iu, su) = best(true);
        let (id, sd) = best(false);
        if su >= sd {
            sets.assign(iu, true);
        } else {
            sets.assign(id, false);
        }
    }
    sets
}

/// RVFD: random modes, then SCA over the continuous variables.
pub fn optimize_rvfd(
    ch: &LargeScaleChannels,
    cfg: &SystemConfig,
    params: &PowerParams,
    objective: Objective,
    sca: &ScaConfig,
    seed: u64,
) -> Result<ScaOutcome, ScaError> {
    let model = SchemeModel::variant(Scheme::Rvfd, ch, cfg, params);
    let (a, b) = random_modes(ch.num_aps(), seed);
    run_fixed_modes(&model, objective, &a, &b, sca, seed)
}

/// GVFD: greedy modes with the fixed controls, evaluated without optimization.
pub fn evaluate_gvfd(ch: &LargeScaleChannels, cfg: &SystemConfig, params: &PowerParams) -> SchemeResult {
    let m = ch.num_aps();
    let (a, b) = greedy_modes(ch, cfg).indicators(m);
    let model = SchemeModel::variant(Scheme::Gvfd, ch, cfg, params);
    model.evaluate(&fixed_controls(ch, cfg, &a, &b))
}

pub fn optimize_hd(
    ch: &LargeScaleChannels,
    cfg: &SystemConfig,
    params: &PowerParams,
    objective: Objective,
    sca: &ScaConfig,
    seed: u64,
) -> Result<ScaOutcome, ScaError> {
    run_with_restoration(&SchemeModel::hd(ch, cfg, params), objective, sca, seed)
}

pub fn optimize_fd(
    ch: &LargeScaleChannels,
    cfg: &SystemConfig,
    params: &PowerParams,
    objective: Objective,
    sca: &ScaConfig,
    seed: u64,
) -> Result<ScaOutcome, ScaError> {
    run_with_restoration(&SchemeModel::fd(ch, cfg, params), objective, sca, seed)
}

pub fn optimize_nafd(
    ch: &LargeScaleChannels,
    cfg: &SystemConfig,
    params: &PowerParams,
    objective: Objective,
    sca: &ScaConfig,
    seed: u64,
) -> Result<ScaOutcome, ScaError> {
    run_with_restoration(&SchemeModel::nafd(ch, cfg, params), objective, sca, seed)
}
