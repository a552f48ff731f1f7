//! Closed-form SE, power, backhaul and energy-efficiency evaluation.
//!
//! Gains in [`LargeScaleChannels`] are divided by the noise power and transmit
//! powers stay in watts, so `ρ·β` products are the usual normalized SNRs and
//! `ρ_d σ_n²` collapses to the DL power budget in watts.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::mat::Mat;
use crate::netgen::{LargeScaleChannels, SystemConfig};

/// Slack used when deciding whether an SE meets its QoS target.
pub const QOS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PerfError {
    #[error("invalid design variables: {0}")]
    InvalidVariables(String),
}

/// Mode indicators, DL power control, UL power control and LSFD weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignVariables {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// AP × DL UE
    pub theta: Mat,
    pub varsigma: Vec<f64>,
    /// AP × UL UE
    pub alpha: Mat,
}

impl DesignVariables {
    /// All-zero controls with every AP in DL mode and unit LSFD weights.
    pub fn zeros(num_aps: usize, num_dl: usize, num_ul: usize) -> Self {
        Self {
            a: vec![1.0; num_aps],
            b: vec![0.0; num_aps],
            theta: Mat::zeros(num_aps, num_dl),
            varsigma: vec![0.0; num_ul],
            alpha: Mat::filled(num_aps, num_ul, 1.0),
        }
    }

    /// Uniform full-power controls: every AP splits its DL budget equally.
    pub fn full_power(ch: &LargeScaleChannels, a: &[f64], tx_antennas: usize) -> Self {
        let (m, kd, ku) = (ch.num_aps(), ch.num_dl(), ch.num_ul());
        let theta = Mat::from_fn(m, kd, |i, k| {
            if a[i] > 0.5 && ch.gamma_dl[(i, k)] > 0.0 {
                (1.0 / (tx_antennas as f64 * kd as f64 * ch.gamma_dl[(i, k)])).sqrt()
            } else {
                0.0
            }
        });
        Self {
            a: a.to_vec(),
            b: a.iter().map(|v| 1.0 - v).collect(),
            theta,
            varsigma: vec![1.0; ku],
            alpha: Mat::filled(m, ku, 1.0),
        }
    }

    /// Per-AP DL utilization `N Σ_k γ θ²`, at most one when the power constraint holds.
    pub fn dl_utilization(&self, ch: &LargeScaleChannels, tx_antennas: f64) -> Vec<f64> {
        (0..ch.num_aps())
            .map(|m| {
                tx_antennas
                    * (0..ch.num_dl())
                        .map(|k| ch.gamma_dl[(m, k)] * self.theta[(m, k)].powi(2))
                        .sum::<f64>()
            })
            .collect()
    }

    pub fn validate(&self, ch: &LargeScaleChannels, tx_antennas: usize, tol: f64) -> Result<(), PerfError> {
        let (m, kd, ku) = (ch.num_aps(), ch.num_dl(), ch.num_ul());
        let bad = |s: String| Err(PerfError::InvalidVariables(s));
        if self.a.len() != m
            || self.b.len() != m
            || self.varsigma.len() != ku
            || (self.theta.rows(), self.theta.cols()) != (m, kd)
            || (self.alpha.rows(), self.alpha.cols()) != (m, ku)
        {
            return bad("dimension mismatch".into());
        }
        let all = self
            .a
            .iter()
            .chain(&self.b)
            .chain(&self.varsigma)
            .chain(self.theta.as_slice())
            .chain(self.alpha.as_slice());
        if all.clone().any(|v| !v.is_finite()) {
            return bad("non-finite entry".into());
        }
        for i in 0..m {
            if (self.a[i] + self.b[i] - 1.0).abs() > tol || self.a[i] < -tol || self.b[i] < -tol {
                return bad(format!("AP {i}: a + b must be 1 with a, b in [0, 1]"));
            }
            if self.a[i] <= tol && (0..kd).any(|k| self.theta[(i, k)] > tol) {
                return bad(format!("AP {i} is not in DL mode but transmits"));
            }
        }
        for (i, u) in self.dl_utilization(ch, tx_antennas as f64).iter().enumerate() {
            if *u > 1.0 + tol {
                return bad(format!("AP {i} exceeds its power budget ({u})"));
            }
        }
        if self.theta.as_slice().iter().any(|&t| t < -tol) {
            return bad("negative theta".into());
        }
        if self.varsigma.iter().any(|&s| s < -tol || s > 1.0 + tol) {
            return bad("varsigma outside [0, 1]".into());
        }
        if self.alpha.as_slice().iter().any(|&x| x * x > 1.0 + tol) {
            return bad("alpha squared above 1".into());
        }
        Ok(())
    }

    fn with_all_modes(&self) -> Self {
        let mut v = self.clone();
        v.a.iter_mut().for_each(|x| *x = 1.0);
        v.b.iter_mut().for_each(|x| *x = 1.0);
        v
    }
}

/// Antenna counts, powers and prelog of one duplexing scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub tx_antennas: f64,
    pub rx_antennas: f64,
    pub rho_d: f64,
    pub rho_u: f64,
    pub prelog: f64,
}

impl Link {
    pub fn nafd(cfg: &SystemConfig) -> Self {
        let n = cfg.antennas as f64;
        Self { tx_antennas: n, rx_antennas: n, rho_d: cfg.p_dl_max_w, rho_u: cfg.p_ul_max_w, prelog: cfg.prelog() }
    }

    pub fn hd(cfg: &SystemConfig) -> Self {
        Self { prelog: 0.5 * cfg.prelog(), ..Self::nafd(cfg) }
    }

    pub fn fd(cfg: &SystemConfig) -> Self {
        Self {
            tx_antennas: cfg.fd_tx_antennas as f64,
            rx_antennas: cfg.fd_rx_antennas as f64,
            ..Self::nafd(cfg)
        }
    }

    pub fn se(&self, sinr: f64) -> f64 {
        self.prelog * sinr.log2_1p()
    }
}

trait Log2OnePlus {
    fn log2_1p(self) -> f64;
}

impl Log2OnePlus for f64 {
    fn log2_1p(self) -> f64 {
        self.ln_1p() / std::f64::consts::LN_2
    }
}

/// DL SINR per UE: `Ξ_k² / Ω_k`.
pub fn dl_sinr(link: &Link, ch: &LargeScaleChannels, vars: &DesignVariables) -> Vec<f64> {
    let (m, kd, ku) = (ch.num_aps(), ch.num_dl(), ch.num_ul());
    let n = link.tx_antennas;
    (0..kd)
        .map(|k| {
            let xi = n * link.rho_d.sqrt() * (0..m).map(|i| vars.theta[(i, k)] * ch.gamma_dl[(i, k)]).sum::<f64>();
            let mut omega = 1.0;
            for i in 0..m {
                let inner: f64 = (0..kd).map(|kp| vars.theta[(i, kp)].powi(2) * ch.gamma_dl[(i, kp)]).sum();
                omega += link.rho_d * n * ch.beta_dl[(i, k)] * inner;
            }
            omega += link.rho_u * (0..ku).map(|l| vars.varsigma[l] * ch.beta_du[(k, l)]).sum::<f64>();
            xi * xi / omega
        })
        .collect()
}

/// UL SINR per UE after LSFD combining at the CPU. `beta_ap[(m, i)]` is the gain
/// from transmitting AP `i` into receiving AP `m`.
pub fn ul_sinr(link: &Link, ch: &LargeScaleChannels, vars: &DesignVariables) -> Vec<f64> {
    let (m, kd, ku) = (ch.num_aps(), ch.num_dl(), ch.num_ul());
    let tx_load: Vec<f64> = (0..m)
        .map(|i| (0..kd).map(|k| vars.theta[(i, k)].powi(2) * ch.gamma_dl[(i, k)]).sum())
        .collect();
    (0..ku)
        .map(|l| {
            let mut amp = 0.0;
            let mut den = 0.0;
            for i in 0..m {
                let b = vars.b[i];
                if b <= 0.0 {
                    continue;
                }
                let (al, g) = (vars.alpha[(i, l)], ch.gamma_ul[(i, l)]);
                let w = b * al * al * g;
                amp += (b * vars.varsigma[l]).sqrt() * al * g;
                let ue: f64 = (0..ku).map(|q| vars.varsigma[q] * ch.beta_ul[(i, q)]).sum();
                let ap: f64 = (0..m).map(|j| ch.beta_ap[(i, j)] * tx_load[j]).sum();
                den += w * (link.rho_u * ue + link.rho_d * link.tx_antennas * ap + 1.0);
            }
            let num = link.rx_antennas * link.rho_u * amp * amp;
            if den > 0.0 {
                num / den
            } else {
                0.0
            }
        })
        .collect()
}

pub fn dl_se_nafd(ch: &LargeScaleChannels, cfg: &SystemConfig, vars: &DesignVariables) -> Vec<f64> {
    let link = Link::nafd(cfg);
    dl_sinr(&link, ch, vars).into_iter().map(|s| link.se(s)).collect()
}

pub fn ul_se_nafd(ch: &LargeScaleChannels, cfg: &SystemConfig, vars: &DesignVariables) -> Vec<f64> {
    let link = Link::nafd(cfg);
    ul_sinr(&link, ch, vars).into_iter().map(|s| link.se(s)).collect()
}

/// Half-duplex DL: every AP serves both directions in separate half slots.
pub fn dl_se_hd(ch: &LargeScaleChannels, cfg: &SystemConfig, vars: &DesignVariables) -> Vec<f64> {
    let link = Link::hd(cfg);
    let ch = ch.without_cross_links();
    dl_sinr(&link, &ch, &vars.with_all_modes()).into_iter().map(|s| link.se(s)).collect()
}

pub fn ul_se_hd(ch: &LargeScaleChannels, cfg: &SystemConfig, vars: &DesignVariables) -> Vec<f64> {
    let link = Link::hd(cfg);
    let ch = ch.without_cross_links();
    ul_sinr(&link, &ch, &vars.with_all_modes()).into_iter().map(|s| link.se(s)).collect()
}

/// Full-duplex DL with `N_t` transmit antennas per AP.
pub fn dl_se_fd(ch: &LargeScaleChannels, cfg: &SystemConfig, vars: &DesignVariables) -> Vec<f64> {
    let link = Link::fd(cfg);
    dl_sinr(&link, ch, &vars.with_all_modes()).into_iter().map(|s| link.se(s)).collect()
}

/// Full-duplex UL with `N_r` receive antennas and residual self-interference.
pub fn ul_se_fd(ch: &LargeScaleChannels, cfg: &SystemConfig, vars: &DesignVariables) -> Vec<f64> {
    let link = Link::fd(cfg);
    let ch = ch.full_duplex();
    ul_sinr(&link, &ch, &vars.with_all_modes()).into_iter().map(|s| link.se(s)).collect()
}

/// Per-AP backhaul rate `B(a_m Σ S_ul + b_m Σ S_dl)` in bit/s.
pub fn backhaul_rate(vars: &DesignVariables, se_dl: &[f64], se_ul: &[f64], bandwidth_hz: f64) -> Vec<f64> {
    let (sdl, sul): (f64, f64) = (se_dl.iter().sum(), se_ul.iter().sum());
    vars.a.iter().zip(&vars.b).map(|(a, b)| bandwidth_hz * (a * sul + b * sdl)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerParams {
    pub p_fdl: f64,
    pub p_ful: f64,
    pub p_cdl: f64,
    pub p_cul: f64,
    /// W per bit/s
    pub p_bt: f64,
    pub zeta: f64,
    pub chi: f64,
    pub p_u: f64,
    pub p_d: f64,
    pub p_sis: f64,
}

impl Default for PowerParams {
    fn default() -> Self {
        Self {
            p_fdl: 0.825,
            p_ful: 0.825,
            p_cdl: 0.2,
            p_cul: 0.2,
            p_bt: 0.25e-9,
            zeta: 0.4,
            chi: 0.3,
            p_u: 0.1,
            p_d: 0.1,
            p_sis: 0.0,
        }
    }
}

impl PowerParams {
    pub fn validate(&self) -> Result<(), PerfError> {
        let powers = [self.p_fdl, self.p_ful, self.p_cdl, self.p_cul, self.p_bt, self.p_u, self.p_d, self.p_sis];
        if powers.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(PerfError::InvalidVariables("powers must be finite and non-negative".into()));
        }
        if !(self.zeta > 0.0 && self.zeta <= 1.0 && self.chi > 0.0 && self.chi <= 1.0) {
            return Err(PerfError::InvalidVariables("amplifier efficiencies must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Fixed UE circuit power `Ku P_U + Kd P_D`.
    pub fn ue_fixed(&self, num_dl: usize, num_ul: usize) -> f64 {
        num_ul as f64 * self.p_u + num_dl as f64 * self.p_d
    }
}

/// Total power split by origin, in watts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerBreakdown {
    /// AP amplifier power.
    pub transmit: f64,
    /// Per-antenna circuit power, including SIS for full duplex.
    pub circuit: f64,
    pub fixed_backhaul: f64,
    pub traffic_backhaul: f64,
    /// UE amplifier and circuit power.
    pub ue: f64,
}

impl PowerBreakdown {
    pub fn total(&self) -> f64 {
        self.transmit + self.circuit + self.fixed_backhaul + self.traffic_backhaul + self.ue
    }

    fn scaled(self, k: f64) -> Self {
        Self {
            transmit: k * self.transmit,
            circuit: k * self.circuit,
            fixed_backhaul: k * self.fixed_backhaul,
            traffic_backhaul: k * self.traffic_backhaul,
            ue: k * self.ue,
        }
    }
}

fn shared_terms(
    ch: &LargeScaleChannels,
    cfg: &SystemConfig,
    params: &PowerParams,
    vars: &DesignVariables,
    tx_antennas: f64,
) -> (f64, f64) {
    let transmit = cfg.p_dl_max_w / params.zeta * vars.dl_utilization(ch, tx_antennas).iter().sum::<f64>();
    let ue = cfg.p_ul_max_w / params.chi * vars.varsigma.iter().sum::<f64>()
        + params.ue_fixed(ch.num_dl(), ch.num_ul());
    (transmit, ue)
}

fn nafd_common(
    ch: &LargeScaleChannels,
    cfg: &SystemConfig,
    params: &PowerParams,
    vars: &DesignVariables,
) -> PowerBreakdown {
    let n = cfg.antennas as f64;
    let (transmit, ue) = shared_terms(ch, cfg, params, vars, n);
    let circuit = vars.a.iter().zip(&vars.b).map(|(a, b)| n * (a * params.p_cdl + b * params.p_cul)).sum();
    let fixed_backhaul = vars.a.iter().zip(&vars.b).map(|(a, b)| a * params.p_fdl + b * params.p_ful).sum();
    PowerBreakdown { transmit, circuit, fixed_backhaul, traffic_backhaul: 0.0, ue }
}

/// NAFD power where each AP only carries the traffic of its own direction.
pub fn power_total_nafd(
    ch: &LargeScaleChannels,
    cfg: &SystemConfig,
    params: &PowerParams,
    vars: &DesignVariables,
    se_dl: &[f64],
    se_ul: &[f64],
) -> PowerBreakdown {
    let (sdl, sul): (f64, f64) = (se_dl.iter().sum(), se_ul.iter().sum());
    let load: f64 = vars.a.iter().zip(&vars.b).map(|(a, b)| b * sul + a * sdl).sum();
    PowerBreakdown {
        traffic_backhaul: cfg.bandwidth_hz * load * params.p_bt,
        ..nafd_common(ch, cfg, params, vars)
    }
}

/// NAFD power with every AP carrying the full DL and UL traffic.
pub fn power_total_fbh_nafd(
    ch: &LargeScaleChannels,
    cfg: &SystemConfig,
    params: &PowerParams,
    vars: &DesignVariables,
    se_dl: &[f64],
    se_ul: &[f64],
) -> PowerBreakdown {
    let sum: f64 = se_dl.iter().chain(se_ul).sum();
    PowerBreakdown {
        traffic_backhaul: cfg.bandwidth_hz * ch.num_aps() as f64 * sum * params.p_bt,
        ..nafd_common(ch, cfg, params, vars)
    }
}

/// Half-duplex power: both circuit sets on every AP, averaged over the two half slots.
pub fn power_total_hd(
    ch: &LargeScaleChannels,
    cfg: &SystemConfig,
    params: &PowerParams,
    vars: &DesignVariables,
    se_dl: &[f64],
    se_ul: &[f64],
) -> PowerBreakdown {
    let n = cfg.antennas as f64;
    let m = ch.num_aps() as f64;
    let (transmit, ue) = shared_terms(ch, cfg, params, vars, n);
    let sum: f64 = se_dl.iter().chain(se_ul).sum();
    PowerBreakdown {
        transmit,
        circuit: m * n * (params.p_cdl + params.p_cul),
        fixed_backhaul: m * (params.p_fdl + params.p_ful),
        traffic_backhaul: cfg.bandwidth_hz * m * sum * params.p_bt,
        ue,
    }
    .scaled(0.5)
}

pub fn power_total_fd(
    ch: &LargeScaleChannels,
    cfg: &SystemConfig,
    params: &PowerParams,
    vars: &DesignVariables,
    se_dl: &[f64],
    se_ul: &[f64],
) -> PowerBreakdown {
    let (nt, nr) = (cfg.fd_tx_antennas as f64, cfg.fd_rx_antennas as f64);
    let m = ch.num_aps() as f64;
    let (transmit, ue) = shared_terms(ch, cfg, params, vars, nt);
    let sum: f64 = se_dl.iter().chain(se_ul).sum();
    PowerBreakdown {
        transmit,
        circuit: m * (nt * params.p_cdl + nr * params.p_cul + nr * params.p_sis),
        fixed_backhaul: m * (params.p_fdl + params.p_ful),
        traffic_backhaul: cfg.bandwidth_hz * m * sum * params.p_bt,
        ue,
    }
}

/// Energy efficiency in bit/Joule.
pub fn energy_efficiency(sum_se: f64, power_total: f64, bandwidth_hz: f64, prelog: f64) -> f64 {
    if sum_se == 0.0 {
        return 0.0;
    }
    bandwidth_hz * sum_se / (prelog * power_total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Nafd,
    Rvfd,
    Gvfd,
    Hd,
    Fd,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [Scheme::Nafd, Scheme::Rvfd, Scheme::Gvfd, Scheme::Hd, Scheme::Fd];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Nafd => "nafd",
            Scheme::Rvfd => "rvfd",
            Scheme::Gvfd => "gvfd",
            Scheme::Hd => "hd",
            Scheme::Fd => "fd",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown scheme `{s}`"))
    }
}

/// Which backhaul model enters the NAFD power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backhaul {
    PerDirection,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeResult {
    pub scheme: Scheme,
    pub se_dl: Vec<f64>,
    pub se_ul: Vec<f64>,
    pub sum_se: f64,
    pub power_total: f64,
    pub power_breakdown: PowerBreakdown,
    pub ee: f64,
    pub feasible: bool,
    pub vars: DesignVariables,
}

impl SchemeResult {
    /// Copy with SE and EE set to zero, used when QoS cannot be met.
    pub fn zeroed(&self) -> Self {
        Self {
            se_dl: vec![0.0; self.se_dl.len()],
            se_ul: vec![0.0; self.se_ul.len()],
            sum_se: 0.0,
            ee: 0.0,
            ..self.clone()
        }
    }
}

/// Evaluates a scheme from scratch. RVFD and GVFD use the NAFD formulas.
pub fn evaluate(
    scheme: Scheme,
    ch: &LargeScaleChannels,
    cfg: &SystemConfig,
    params: &PowerParams,
    vars: &DesignVariables,
    backhaul: Backhaul,
) -> SchemeResult {
    let (se_dl, se_ul, power) = match scheme {
        Scheme::Nafd | Scheme::Rvfd | Scheme::Gvfd => {
            let dl = dl_se_nafd(ch, cfg, vars);
            let ul = ul_se_nafd(ch, cfg, vars);
            let p = match backhaul {
                Backhaul::PerDirection => power_total_nafd(ch, cfg, params, vars, &dl, &ul),
                Backhaul::Full => power_total_fbh_nafd(ch, cfg, params, vars, &dl, &ul),
            };
            (dl, ul, p)
        }
        Scheme::Hd => {
            let dl = dl_se_hd(ch, cfg, vars);
            let ul = ul_se_hd(ch, cfg, vars);
            let p = power_total_hd(ch, cfg, params, vars, &dl, &ul);
            (dl, ul, p)
        }
        Scheme::Fd => {
            let dl = dl_se_fd(ch, cfg, vars);
            let ul = ul_se_fd(ch, cfg, vars);
            let p = power_total_fd(ch, cfg, params, vars, &dl, &ul);
            (dl, ul, p)
        }
    };
    let sum_se = se_dl.iter().chain(&se_ul).sum();
    let power_total = power.total();
    let feasible = se_dl.iter().all(|&s| s >= cfg.qos_dl - QOS_TOL) && se_ul.iter().all(|&s| s >= cfg.qos_ul - QOS_TOL);
    SchemeResult {
        scheme,
        ee: energy_efficiency(sum_se, power_total, cfg.bandwidth_hz, cfg.prelog()),
        se_dl,
        se_ul,
        sum_se,
        power_total,
        power_breakdown: power,
        feasible,
        vars: vars.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgen::realize;
    use proptest::prelude::*;

    fn unit_channels(m: usize, kd: usize, ku: usize) -> LargeScaleChannels {
        LargeScaleChannels {
            beta_dl: Mat::filled(m, kd, 1.0),
            beta_ul: Mat::filled(m, ku, 1.0),
            beta_du: Mat::zeros(kd, ku),
            beta_ap: Mat::zeros(m, m),
            gamma_dl: Mat::filled(m, kd, 1.0),
            gamma_ul: Mat::filled(m, ku, 1.0),
            residual_si: 0.0,
        }
    }

    fn toy_config(m: usize, n: usize, kd: usize, ku: usize) -> SystemConfig {
        SystemConfig { antennas: n, pilot_len: 0, ..SystemConfig::with_sizes(m, kd, ku) }
    }

    fn random_vars(ch: &LargeScaleChannels, n: usize, seed: u64, binary: bool) -> DesignVariables {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (m, kd, ku) = (ch.num_aps(), ch.num_dl(), ch.num_ul());
        let a: Vec<f64> = (0..m)
            .map(|_| if binary { rng.random_range(0..2) as f64 } else { rng.random_range(0.0..1.0) })
            .collect();
        let mut theta = Mat::from_fn(m, kd, |_, _| rng.random_range(0.0..1.0));
        for i in 0..m {
            let u: f64 = (0..kd).map(|k| n as f64 * ch.gamma_dl[(i, k)] * theta[(i, k)].powi(2)).sum();
            let s = a[i].sqrt() * rng.random_range(0.0..1.0) / u.sqrt();
            for k in 0..kd {
                theta[(i, k)] *= s;
            }
        }
        DesignVariables {
            b: a.iter().map(|x| 1.0 - x).collect(),
            a,
            theta,
            varsigma: (0..ku).map(|_| rng.random_range(0.0..1.0)).collect(),
            alpha: Mat::from_fn(m, ku, |_, _| rng.random_range(0.0..1.0)),
        }
    }

    fn default_instance(seed: u64) -> (LargeScaleChannels, SystemConfig) {
        let cfg = SystemConfig::with_sizes(6, 2, 2);
        let (_, ch) = realize(&cfg, seed).unwrap();
        (ch, cfg)
    }

    #[test]
    fn zero_controls_give_zero_se() {
        let (ch, cfg) = default_instance(1);
        let v = DesignVariables::zeros(6, 2, 2);
        assert!(dl_se_nafd(&ch, &cfg, &v).iter().all(|&s| s == 0.0));
        assert!(ul_se_nafd(&ch, &cfg, &v).iter().all(|&s| s == 0.0));
    }

    #[test]
    fn single_ap_dl_example() {
        let ch = unit_channels(1, 1, 0);
        let cfg = toy_config(1, 1, 1, 0);
        let mut v = DesignVariables::zeros(1, 1, 0);
        v.theta[(0, 0)] = 1.0;
        let se = dl_se_nafd(&ch, &cfg, &v);
        assert!((se[0] - 1.5f64.log2()).abs() < 1e-15);
    }

    #[test]
    fn no_ul_aps_gives_zero_ul_se() {
        let (ch, cfg) = default_instance(2);
        let v = DesignVariables::full_power(&ch, &[1.0; 6], cfg.antennas);
        assert!(ul_se_nafd(&ch, &cfg, &v).iter().all(|&s| s == 0.0));
    }

    #[test]
    fn hand_evaluated_two_ap_ul() {
        // Two UL APs, one UE, N=1, ρ_u=1, unit gains: SINR = (2)² / (2·(1+1)) = 1.
        let ch = unit_channels(2, 0, 1);
        let mut cfg = toy_config(2, 1, 0, 1);
        cfg.p_ul_max_w = 1.0;
        let mut v = DesignVariables::zeros(2, 0, 1);
        v.a = vec![0.0; 2];
        v.b = vec![1.0; 2];
        v.varsigma[0] = 1.0;
        let se = ul_se_nafd(&ch, &cfg, &v);
        assert!((se[0] - 1.0).abs() < 1e-15);
        let hd = ul_se_hd(&ch, &cfg, &v);
        assert!((hd[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_ap_power_example() {
        let ch = unit_channels(1, 0, 0);
        let cfg = toy_config(1, 2, 0, 0);
        let v = DesignVariables::zeros(1, 0, 0);
        let p = power_total_nafd(&ch, &cfg, &PowerParams::default(), &v, &[], &[]);
        assert!((p.total() - 1.225).abs() < 1e-12);
    }

    #[test]
    fn traffic_backhaul_unit_conversion() {
        let ch = unit_channels(1, 1, 0);
        let cfg = SystemConfig { bandwidth_hz: 1e9, ..toy_config(1, 2, 1, 0) };
        let v = DesignVariables::zeros(1, 1, 0);
        let p = power_total_nafd(&ch, &cfg, &PowerParams::default(), &v, &[1.0], &[]);
        assert!((p.traffic_backhaul - 0.25).abs() < 1e-12);
    }

    #[test]
    fn backhaul_rate_examples() {
        let mut v = DesignVariables::zeros(2, 1, 1);
        v.a = vec![1.0, 0.0];
        v.b = vec![0.0, 1.0];
        let r = backhaul_rate(&v, &[2.0], &[3.0], 10.0);
        assert_eq!(r, vec![30.0, 20.0]);
        assert_eq!(backhaul_rate(&v, &[0.0], &[0.0], 10.0), vec![0.0, 0.0]);
    }

    #[test]
    fn full_backhaul_adds_excluded_direction() {
        let ch = unit_channels(1, 1, 1);
        let cfg = toy_config(1, 1, 1, 1);
        let pp = PowerParams::default();
        let v = DesignVariables::zeros(1, 1, 1);
        let per = power_total_nafd(&ch, &cfg, &pp, &v, &[1.0], &[2.0]);
        let full = power_total_fbh_nafd(&ch, &cfg, &pp, &v, &[1.0], &[2.0]);
        assert!((full.total() - per.total() - cfg.bandwidth_hz * 2.0 * pp.p_bt).abs() < 1e-12);
        let zero = power_total_fbh_nafd(&ch, &cfg, &pp, &v, &[0.0], &[0.0]);
        assert_eq!(zero, power_total_nafd(&ch, &cfg, &pp, &v, &[0.0], &[0.0]));
    }

    #[test]
    fn hd_and_fd_fixed_floors() {
        let ch = unit_channels(3, 0, 0);
        let cfg = toy_config(3, 2, 0, 0);
        let pp = PowerParams::default();
        let v = DesignVariables::zeros(3, 0, 0);
        let hd = power_total_hd(&ch, &cfg, &pp, &v, &[], &[]);
        assert!((hd.total() - 0.5 * 3.0 * (2.0 * 0.4 + 1.65)).abs() < 1e-12);
        let fd = power_total_fd(&ch, &cfg, &pp, &v, &[], &[]);
        assert!((fd.total() - 3.0 * (0.4 + 1.65)).abs() < 1e-12);
    }

    #[test]
    fn energy_efficiency_basics() {
        assert_eq!(energy_efficiency(0.0, 5.0, 1e6, 0.9), 0.0);
        let e1 = energy_efficiency(3.0, 2.0, 1e6, 0.5);
        assert!((e1 - 3e6).abs() < 1e-6);
        assert!((energy_efficiency(3.0, 4.0, 1e6, 0.5) - e1 / 2.0).abs() < 1e-6);
    }

    #[test]
    fn strong_si_kills_fd_uplink() {
        let (ch, cfg) = default_instance(3);
        let v = DesignVariables::full_power(&ch, &[1.0; 6], cfg.fd_tx_antennas);
        let mut clean = ch.clone();
        clean.residual_si = 0.0;
        let base = ul_se_fd(&clean, &cfg, &v);
        let with_si = ul_se_fd(&ch, &cfg, &v);
        let mut huge = ch.clone();
        huge.residual_si = 1e30;
        let dead = ul_se_fd(&huge, &cfg, &v);
        for l in 0..2 {
            assert!(with_si[l] < base[l]);
            assert!(dead[l] < 1e-15);
        }
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!("xx".parse::<Scheme>().is_err());
    }

    #[test]
    fn validate_rejects_bad_variables() {
        let (ch, cfg) = default_instance(4);
        let mut v = DesignVariables::full_power(&ch, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0], cfg.antennas);
        assert!(v.validate(&ch, cfg.antennas, 1e-9).is_ok());
        v.theta[(1, 0)] = 1e-3;
        assert!(v.validate(&ch, cfg.antennas, 1e-9).is_err());
        v.theta[(1, 0)] = 0.0;
        v.theta[(0, 0)] *= 2.0;
        assert!(v.validate(&ch, cfg.antennas, 1e-9).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn nafd_reduces_to_fd(seed in any::<u64>()) {
            let (mut ch, mut cfg) = default_instance(seed % 50);
            ch.residual_si = 0.0;
            cfg.fd_tx_antennas = cfg.antennas;
            cfg.fd_rx_antennas = cfg.antennas;
            let mut v = random_vars(&ch, cfg.antennas, seed, false);
            v.a = vec![1.0; 6];
            v.b = vec![1.0; 6];
            v.alpha = Mat::filled(6, 2, 1.0);
            let nafd = ul_sinr(&Link::nafd(&cfg), &ch, &v);
            let fd = ul_sinr(&Link::fd(&cfg), &ch.full_duplex(), &v);
            for (x, y) in nafd.iter().zip(&fd) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300));
            }
        }

        #[test]
        fn hd_is_half_of_nafd_without_cross_links(seed in any::<u64>()) {
            let (ch, cfg) = default_instance(seed % 50);
            let v = random_vars(&ch, cfg.antennas, seed, false);
            let mut both = v.clone();
            both.a = vec![1.0; 6];
            both.b = vec![1.0; 6];
            let bare = ch.without_cross_links();
            let (hd_dl, hd_ul) = (dl_se_hd(&ch, &cfg, &v), ul_se_hd(&ch, &cfg, &v));
            let (n_dl, n_ul) = (dl_se_nafd(&bare, &cfg, &both), ul_se_nafd(&bare, &cfg, &both));
            for (h, n) in hd_dl.iter().chain(&hd_ul).zip(n_dl.iter().chain(&n_ul)) {
                prop_assert!((h - 0.5 * n).abs() <= 1e-12 * n.abs().max(1e-300));
            }
        }

        #[test]
        fn dl_se_non_increasing_in_ul_power(seed in any::<u64>(), l in 0usize..2, bump in 0.0f64..1.0) {
            let (ch, cfg) = default_instance(seed % 50);
            let v = random_vars(&ch, cfg.antennas, seed, true);
            let mut w = v.clone();
            w.varsigma[l] = (w.varsigma[l] + bump).min(1.0);
            for (x, y) in dl_se_nafd(&ch, &cfg, &v).iter().zip(dl_se_nafd(&ch, &cfg, &w)) {
                prop_assert!(y <= x + 1e-15);
            }
        }

        #[test]
        fn ul_se_non_increasing_in_dl_power(seed in any::<u64>(), k in 0usize..2, s in 0.0f64..1.0) {
            let (ch, cfg) = default_instance(seed % 50);
            let v = random_vars(&ch, cfg.antennas, seed, true);
            let mut w = v.clone();
            for i in 0..6 {
                w.theta[(i, k)] *= s;
            }
            for (x, y) in ul_se_nafd(&ch, &cfg, &v).iter().zip(ul_se_nafd(&ch, &cfg, &w)) {
                prop_assert!(y >= x - 1e-15);
            }
        }

        #[test]
        fn per_direction_backhaul_bounded_by_full(seed in any::<u64>()) {
            let (ch, cfg) = default_instance(seed % 50);
            let v = random_vars(&ch, cfg.antennas, seed, true);
            let pp = PowerParams::default();
            let r1 = evaluate(Scheme::Nafd, &ch, &cfg, &pp, &v, Backhaul::PerDirection);
            let r2 = evaluate(Scheme::Nafd, &ch, &cfg, &pp, &v, Backhaul::Full);
            prop_assert!(r1.power_breakdown.traffic_backhaul <= r2.power_breakdown.traffic_backhaul * (1.0 + 1e-12));
            prop_assert!(r2.ee <= r1.ee * (1.0 + 1e-12));
            prop_assert!(r1.se_dl.iter().chain(&r1.se_ul).all(|&s| s >= 0.0));
            prop_assert!((r1.sum_se - r1.se_dl.iter().chain(&r1.se_ul).sum::<f64>()).abs() < 1e-15);
        }
    }
}
