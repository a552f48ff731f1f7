//! Experiment runner: sweeps, realizations, schemes, aggregation and output files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{evaluate_gvfd, optimize_fd, optimize_hd, optimize_nafd, optimize_rvfd};
use crate::netgen::{realize, SystemConfig};
use crate::perfmodel::{self, Backhaul, PowerParams, Scheme, SchemeResult};
use crate::scasolver::{IterRecord, Objective, ScaConfig, ScaOutcome};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Number of APs.
    Aps,
    /// UEs per direction (`K_d = K_u`), pilot length `K_d + K_u`.
    Ues,
    /// Antennas per AP with the total antenna count `N M` held fixed.
    Antennas,
    /// Residual SI over noise, dB.
    SiDb,
    /// SE target for every UE.
    Qos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

impl Sweep {
    /// Base configuration moved to `value` along the axis.
    pub fn apply(&self, base: &SystemConfig, value: f64) -> Result<SystemConfig, HarnessError> {
        let mut c = base.clone();
        let count = |v: f64| {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(HarnessError::InvalidPlan(format!("{:?} needs positive integers, got {v}", self.axis)))
            }
        };
        match self.axis {
            SweepAxis::Aps => c.num_aps = count(value)?,
            SweepAxis::Ues => {
                let k = count(value)?;
                c.num_dl_ues = k;
                c.num_ul_ues = k;
                c.pilot_len = 2 * k;
            }
            SweepAxis::Antennas => {
                let n = count(value)?;
                let total = base.num_aps * base.antennas;
                if total % n != 0 {
                    return Err(HarnessError::InvalidPlan(format!("{n} antennas do not divide N M = {total}")));
                }
                if n < 2 {
                    return Err(HarnessError::InvalidPlan("full duplex needs at least 2 antennas per AP".into()));
                }
                c.num_aps = total / n;
                c.antennas = n;
                c.fd_tx_antennas = n / 2;
                c.fd_rx_antennas = n - n / 2;
            }
            SweepAxis::SiDb => c.si_over_noise_db = value,
            SweepAxis::Qos => {
                c.qos_dl = value;
                c.qos_ul = value;
            }
        }
        Ok(c)
    }
}

/// Everything a run needs; loaded from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub system: SystemConfig,
    pub power: PowerParams,
    pub sweep: Option<Sweep>,
    pub schemes: Vec<Scheme>,
    pub objective: Objective,
    pub realizations: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Overrides the SCA multi-start count.
    pub starts: Option<usize>,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            system: SystemConfig::default(),
            power: PowerParams::default(),
            sweep: None,
            schemes: vec![Scheme::Nafd, Scheme::Hd, Scheme::Fd],
            objective: Objective::Se,
            realizations: 20,
            seed: 1,
            out: None,
            starts: None,
        }
    }
}

impl ExperimentPlan {
    /// 20 realizations of the default M = 20, K = 2 + 2 scenario.
    pub fn desk() -> Self {
        Self { starts: Some(1), ..Self::default() }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let plan: Self = serde_json::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidPlan(m));
        if self.realizations == 0 {
            return bad("realizations must be at least 1".into());
        }
        if self.schemes.is_empty() {
            return bad("no schemes selected".into());
        }
        for (i, c) in self.configs()?.iter().enumerate() {
            if let Err(e) = c.validate() {
                return bad(format!("sweep point {i}: {e}"));
            }
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() || s.values.windows(2).any(|w| w[0] >= w[1]) {
                return bad("sweep values must be nonempty and strictly increasing".into());
            }
        }
        self.power.validate().map_err(|e| HarnessError::InvalidPlan(e.to_string()))
    }

    /// `(sweep value, configuration)` per sweep point; a single point without a sweep.
    pub fn points(&self) -> Result<Vec<(Option<f64>, SystemConfig)>, HarnessError> {
        match &self.sweep {
            None => Ok(vec![(None, self.system.clone())]),
            Some(s) => s.values.iter().map(|&v| Ok((Some(v), s.apply(&self.system, v)?))).collect(),
        }
    }

    fn configs(&self) -> Result<Vec<SystemConfig>, HarnessError> {
        Ok(self.points()?.into_iter().map(|p| p.1).collect())
    }

    pub fn sca_config(&self, cfg: &SystemConfig) -> ScaConfig {
        let mut c = ScaConfig::new(self.objective, cfg.num_dl_ues, cfg.num_ul_ues);
        if let Some(s) = self.starts {
            c.starts = s;
        }
        c
    }
}

/// Realization seed from the master seed and the sweep/realization indices.
pub fn realization_seed(master: u64, sweep_index: usize, realization: usize) -> u64 {
    let mut z = master ^ (sweep_index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (realization as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One scheme on one realization. `sum_se` and `ee` are zero when QoS failed or
/// the solver errored; `result` keeps the unzeroed figures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub sweep_index: usize,
    pub sweep_value: Option<f64>,
    pub realization: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub sum_se: f64,
    pub ee: f64,
    pub feasible: bool,
    pub error: Option<String>,
    pub result: Option<SchemeResult>,
    /// EE of the same variables under the full-backhaul power bound (NAFD formulas only).
    pub ee_full_backhaul: Option<f64>,
    /// Rate-dependent backhaul power as a share of the total power.
    pub backhaul_share: Option<f64>,
    pub penalty_ratio: Option<f64>,
    pub binary_gap: Option<f64>,
    pub relaxed_converged: Option<bool>,
    pub relaxed_trace: Vec<IterRecord>,
    pub polish_trace: Vec<IterRecord>,
}

impl Record {
    fn failed(sweep_index: usize, sweep_value: Option<f64>, realization: usize, seed: u64, scheme: Scheme, error: String) -> Self {
        Self {
            sweep_index,
            sweep_value,
            realization,
            seed,
            scheme,
            sum_se: 0.0,
            ee: 0.0,
            feasible: false,
            error: Some(error),
            result: None,
            ee_full_backhaul: None,
            backhaul_share: None,
            penalty_ratio: None,
            binary_gap: None,
            relaxed_converged: None,
            relaxed_trace: Vec::new(),
            polish_trace: Vec::new(),
        }
    }
}

/// Aggregate of one sweep point and scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub sweep_value: Option<f64>,
    pub scheme: Scheme,
    pub objective: Objective,
    pub realizations: usize,
    pub mean_sum_se: f64,
    pub se_std_err: f64,
    pub mean_ee: f64,
    pub ee_std_err: f64,
    pub infeasible_rate: f64,
    pub errors: usize,
}

pub const CSV_HEADER: [&str; 10] = [
    "sweep_value",
    "scheme",
    "objective",
    "realizations",
    "mean_sum_se",
    "se_std_err",
    "mean_ee",
    "ee_std_err",
    "infeasible_rate",
    "errors",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub plan: ExperimentPlan,
    pub records: Vec<Record>,
    pub summary: Vec<SummaryRow>,
}

/// Solves one scheme on given channels and packs the record.
#[allow(clippy::too_many_arguments)]
pub fn solve_scheme(
    scheme: Scheme,
    ch: &crate::netgen::LargeScaleChannels,
    cfg: &SystemConfig,
    plan: &ExperimentPlan,
    sweep_index: usize,
    sweep_value: Option<f64>,
    realization: usize,
    seed: u64,
) -> Record {
    let sca = plan.sca_config(cfg);
    let params = &plan.power;
    let obj = plan.objective;
    let outcome: Result<Option<ScaOutcome>, String> = match scheme {
        Scheme::Nafd => optimize_nafd(ch, cfg, params, obj, &sca, seed).map(Some),
        Scheme::Rvfd => optimize_rvfd(ch, cfg, params, obj, &sca, seed).map(Some),
        Scheme::Hd => optimize_hd(ch, cfg, params, obj, &sca, seed).map(Some),
        Scheme::Fd => optimize_fd(ch, cfg, params, obj, &sca, seed).map(Some),
        Scheme::Gvfd => Ok(None),
    }
    .map_err(|e| e.to_string());
    let (result, out) = match outcome {
        Err(e) => return Record::failed(sweep_index, sweep_value, realization, seed, scheme, e),
        Ok(Some(o)) => (o.result.clone(), Some(o)),
        Ok(None) => (evaluate_gvfd(ch, cfg, params), None),
    };
    let ee_full_backhaul = matches!(scheme, Scheme::Nafd | Scheme::Rvfd | Scheme::Gvfd)
        .then(|| perfmodel::evaluate(scheme, ch, cfg, params, &result.vars, Backhaul::Full).ee);
    let pb = &result.power_breakdown;
    let backhaul_share = (result.power_total > 0.0).then(|| pb.traffic_backhaul / result.power_total);
    let shown = if result.feasible { result.clone() } else { result.zeroed() };
    Record {
        sweep_index,
        sweep_value,
        realization,
        seed,
        scheme,
        sum_se: shown.sum_se,
        ee: shown.ee,
        feasible: result.feasible,
        error: None,
        ee_full_backhaul,
        backhaul_share,
        penalty_ratio: out.as_ref().filter(|o| o.relaxed.is_some()).map(|o| o.penalty_ratio),
        binary_gap: out.as_ref().filter(|o| o.relaxed.is_some()).map(|o| o.binary_gap),
        relaxed_converged: out.as_ref().and_then(|o| o.relaxed.as_ref()).map(|r| r.converged),
        relaxed_trace: out.as_ref().and_then(|o| o.relaxed.as_ref()).map(|r| r.trace.clone()).unwrap_or_default(),
        polish_trace: out.as_ref().map(|o| o.polish.trace.clone()).unwrap_or_default(),
        result: Some(result),
    }
}

/// Runs every sweep point, realization and scheme on `workers` threads. Output
/// order is fixed by the indices, whatever the thread count.
pub fn run(plan: &ExperimentPlan, workers: usize) -> Result<RunOutput, HarnessError> {
    plan.validate()?;
    let points = plan.points()?;
    let tasks: Vec<(usize, usize)> =
        (0..points.len()).flat_map(|s| (0..plan.realizations).map(move |r| (s, r))).collect();
    let work = |&(si, r): &(usize, usize)| -> Vec<Record> {
        let (value, cfg) = &points[si];
        let seed = realization_seed(plan.seed, si, r);
        match realize(cfg, seed) {
            Ok((_, ch)) => plan.schemes.iter().map(|&s| solve_scheme(s, &ch, cfg, plan, si, *value, r, seed)).collect(),
            Err(e) => plan.schemes.iter().map(|&s| Record::failed(si, *value, r, seed, s, e.to_string())).collect(),
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::InvalidPlan(e.to_string()))?;
    let nested: Vec<Vec<Record>> = pool.install(|| tasks.par_iter().map(work).collect());
    let records: Vec<Record> = nested.into_iter().flatten().collect();
    let summary = aggregate(plan, &records);
    Ok(RunOutput { plan: plan.clone(), records, summary })
}

fn mean_and_std_err(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One row per sweep point and scheme, in plan order.
pub fn aggregate(plan: &ExperimentPlan, records: &[Record]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    let n_points = plan.sweep.as_ref().map_or(1, |s| s.values.len());
    for si in 0..n_points {
        for &scheme in &plan.schemes {
            let sel: Vec<&Record> = records.iter().filter(|r| r.sweep_index == si && r.scheme == scheme).collect();
            if sel.is_empty() {
                continue;
            }
            let se: Vec<f64> = sel.iter().map(|r| r.sum_se).collect();
            let ee: Vec<f64> = sel.iter().map(|r| r.ee).collect();
            let (mean_sum_se, se_std_err) = mean_and_std_err(&se);
            let (mean_ee, ee_std_err) = mean_and_std_err(&ee);
            rows.push(SummaryRow {
                sweep_value: sel[0].sweep_value,
                scheme,
                objective: plan.objective,
                realizations: sel.len(),
                mean_sum_se,
                se_std_err,
                mean_ee,
                ee_std_err,
                infeasible_rate: sel.iter().filter(|r| !r.feasible).count() as f64 / sel.len() as f64,
                errors: sel.iter().filter(|r| r.error.is_some()).count(),
            });
        }
    }
    rows
}

/// Summary CSV; the header is written even when there are no rows.
pub fn write_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `summary.csv` and `records.json` into `dir`.
pub fn emit(output: &RunOutput, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    write_csv(&output.summary, fs::File::create(dir.join("summary.csv"))?)?;
    let json = serde_json::to_string_pretty(output)?;
    fs::write(dir.join("records.json"), json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentPlan {
        ExperimentPlan {
            system: SystemConfig::with_sizes(3, 1, 1),
            schemes: vec![Scheme::Gvfd, Scheme::Hd],
            realizations: 2,
            starts: Some(1),
            ..ExperimentPlan::default()
        }
    }

    #[test]
    fn seeds_differ_across_indices() {
        let mut seen = std::collections::HashSet::new();
        for s in 0..5 {
            for r in 0..50 {
                assert!(seen.insert(realization_seed(7, s, r)));
            }
        }
        assert_eq!(realization_seed(7, 1, 2), realization_seed(7, 1, 2));
        assert_ne!(realization_seed(7, 1, 2), realization_seed(8, 1, 2));
    }

    #[test]
    fn sweep_axes_move_the_right_fields() {
        let base = SystemConfig::default();
        let ues = Sweep { axis: SweepAxis::Ues, values: vec![3.0] }.apply(&base, 3.0).unwrap();
        assert_eq!((ues.num_dl_ues, ues.num_ul_ues, ues.pilot_len), (3, 3, 6));
        let n = Sweep { axis: SweepAxis::Antennas, values: vec![4.0] }.apply(&base, 4.0).unwrap();
        assert_eq!(n.num_aps * n.antennas, base.num_aps * base.antennas);
        assert_eq!(n.fd_tx_antennas + n.fd_rx_antennas, 4);
        assert!(Sweep { axis: SweepAxis::Antennas, values: vec![3.0] }.apply(&base, 3.0).is_err());
        assert!(Sweep { axis: SweepAxis::Aps, values: vec![2.5] }.apply(&base, 2.5).is_err());
        let q = Sweep { axis: SweepAxis::Qos, values: vec![1.0] }.apply(&base, 1.0).unwrap();
        assert_eq!((q.qos_dl, q.qos_ul), (1.0, 1.0));
    }

    #[test]
    fn plan_rejects_bad_sweeps() {
        let mut p = tiny();
        p.sweep = Some(Sweep { axis: SweepAxis::Aps, values: vec![4.0, 3.0] });
        assert!(p.validate().is_err());
        p.sweep = None;
        p.realizations = 0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn plan_json_round_trip() {
        let mut p = tiny();
        p.sweep = Some(Sweep { axis: SweepAxis::SiDb, values: vec![40.0, 50.0] });
        let text = serde_json::to_string(&p).unwrap();
        assert_eq!(ExperimentPlan::from_json(&text).unwrap(), p);
        assert!(ExperimentPlan::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn single_realization_single_scheme_gives_one_row() {
        let p = ExperimentPlan { realizations: 1, schemes: vec![Scheme::Gvfd], ..tiny() };
        let out = run(&p, 1).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.summary.len(), 1);
        assert_eq!(out.summary[0].se_std_err, 0.0);
    }

    #[test]
    fn empty_results_give_header_only_csv() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), CSV_HEADER.join(",") + "\n");
    }

    #[test]
    fn aggregates_match_records() {
        let p = ExperimentPlan { sweep: Some(Sweep { axis: SweepAxis::Aps, values: vec![2.0, 3.0] }), ..tiny() };
        let out = run(&p, 2).unwrap();
        assert_eq!(out.records.len(), 2 * 2 * 2);
        for row in &out.summary {
            let vals: Vec<&Record> =
                out.records.iter().filter(|r| r.sweep_value == row.sweep_value && r.scheme == row.scheme).collect();
            let mean = vals.iter().map(|r| r.sum_se).sum::<f64>() / vals.len() as f64;
            assert!((mean - row.mean_sum_se).abs() < 1e-12);
            for r in vals {
                if !r.feasible {
                    assert_eq!((r.sum_se, r.ee), (0.0, 0.0));
                }
            }
        }
    }
}
