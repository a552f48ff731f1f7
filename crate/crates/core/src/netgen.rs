//! Network geometry and large-scale channel statistics.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::mat::Mat;

pub const BOLTZMANN: f64 = 1.381e-23;
/// Shadowing standard deviation in dB.
pub const SHADOW_STD_DB: f64 = 4.0;
/// Shadowing decorrelation distance in meters.
pub const DECORRELATION_M: f64 = 9.0;
pub const PLACEMENT_CAP: usize = 100_000;
const DUPLICATE_NUDGE_M: f64 = 0.1;
const MIN_LINK_DISTANCE_M: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetgenError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("AP placement failed after {0} attempts")]
    PlacementFailure(usize),
    #[error("shadowing covariance is not positive definite")]
    CovarianceNotPsd,
}

/// Scenario constants. Powers are in watts, SE targets in bit/s/Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub num_aps: usize,
    pub antennas: usize,
    pub fd_tx_antennas: usize,
    pub fd_rx_antennas: usize,
    pub num_dl_ues: usize,
    pub num_ul_ues: usize,
    pub coherence_len: usize,
    pub pilot_len: usize,
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
    pub noise_temp_k: f64,
    pub p_dl_max_w: f64,
    pub p_ul_max_w: f64,
    pub p_pilot_w: f64,
    pub qos_dl: f64,
    pub qos_ul: f64,
    pub si_over_noise_db: f64,
    pub area_side_m: f64,
    pub min_ap_spacing_m: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            num_aps: 20,
            antennas: 2,
            fd_tx_antennas: 1,
            fd_rx_antennas: 1,
            num_dl_ues: 2,
            num_ul_ues: 2,
            coherence_len: 200,
            pilot_len: 4,
            bandwidth_hz: 50e6,
            noise_figure_db: 9.0,
            noise_temp_k: 290.0,
            p_dl_max_w: 1.0,
            p_ul_max_w: 0.1,
            p_pilot_w: 0.1,
            qos_dl: 0.2,
            qos_ul: 0.2,
            si_over_noise_db: 50.0,
            area_side_m: 500.0,
            min_ap_spacing_m: 50.0,
        }
    }
}

impl SystemConfig {
    /// Default scenario with `τ_t = K_d + K_u`.
    pub fn with_sizes(num_aps: usize, num_dl_ues: usize, num_ul_ues: usize) -> Self {
        Self { num_aps, num_dl_ues, num_ul_ues, pilot_len: num_dl_ues + num_ul_ues, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), NetgenError> {
        let bad = |m: &str| Err(NetgenError::InvalidConfig(m.to_string()));
        if self.num_aps == 0 {
            return bad("num_aps must be at least 1");
        }
        if self.num_dl_ues == 0 || self.num_ul_ues == 0 {
            return bad("num_dl_ues and num_ul_ues must be at least 1");
        }
        if self.antennas == 0 || self.fd_tx_antennas + self.fd_rx_antennas != self.antennas {
            return bad("fd_tx_antennas + fd_rx_antennas must equal antennas");
        }
        if self.pilot_len < self.num_dl_ues + self.num_ul_ues {
            return bad("pilot_len must be at least num_dl_ues + num_ul_ues");
        }
        if self.pilot_len >= self.coherence_len {
            return bad("pilot_len must be below coherence_len");
        }
        let positive = [
            self.bandwidth_hz,
            self.noise_temp_k,
            self.p_dl_max_w,
            self.p_ul_max_w,
            self.p_pilot_w,
            self.area_side_m,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("bandwidth, temperature, powers and area side must be positive");
        }
        if !(self.min_ap_spacing_m >= 0.0) || !(self.qos_dl >= 0.0) || !(self.qos_ul >= 0.0) {
            return bad("spacing and QoS targets must be nonnegative");
        }
        if !self.noise_figure_db.is_finite() || !self.si_over_noise_db.is_finite() {
            return bad("noise figure and SI level must be finite");
        }
        Ok(())
    }

    /// `k_B · T0 · B · F` in watts.
    pub fn noise_power(&self) -> f64 {
        BOLTZMANN * self.noise_temp_k * self.bandwidth_hz * db_to_linear(self.noise_figure_db)
    }

    /// Payload fraction `(τ_c − τ_t)/τ_c`.
    pub fn prelog(&self) -> f64 {
        (self.coherence_len - self.pilot_len) as f64 / self.coherence_len as f64
    }

    pub fn residual_si(&self) -> f64 {
        db_to_linear(self.si_over_noise_db)
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkGeometry {
    pub ap_positions: Vec<Point>,
    pub dl_ue_positions: Vec<Point>,
    pub ul_ue_positions: Vec<Point>,
    pub area_side: f64,
}

/// All large-scale gains and estimate variances of one realization, divided by the noise power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LargeScaleChannels {
    /// AP × DL UE
    pub beta_dl: Mat,
    /// AP × UL UE
    pub beta_ul: Mat,
    /// DL UE × UL UE
    pub beta_du: Mat,
    /// AP × AP, zero diagonal unless built by [`LargeScaleChannels::full_duplex`].
    pub beta_ap: Mat,
    pub gamma_dl: Mat,
    pub gamma_ul: Mat,
    /// Residual self-interference over noise, linear.
    pub residual_si: f64,
}

impl LargeScaleChannels {
    pub fn num_aps(&self) -> usize {
        self.beta_dl.rows()
    }

    pub fn num_dl(&self) -> usize {
        self.beta_dl.cols()
    }

    pub fn num_ul(&self) -> usize {
        self.beta_ul.cols()
    }

    /// Copy with the AP–AP diagonal set to the residual self-interference level.
    pub fn full_duplex(&self) -> Self {
        let mut c = self.clone();
        for m in 0..c.num_aps() {
            c.beta_ap[(m, m)] = c.residual_si;
        }
        c
    }

    /// Copy with UE–UE and AP–AP gains removed.
    pub fn without_cross_links(&self) -> Self {
        let mut c = self.clone();
        c.beta_du = Mat::zeros(c.num_dl(), c.num_ul());
        c.beta_ap = Mat::zeros(c.num_aps(), c.num_aps());
        c
    }
}

pub fn torus_distance(p: Point, q: Point, area_side: f64) -> f64 {
    let wrap = |a: f64, b: f64| {
        let d = (a - b).abs() % area_side;
        d.min(area_side - d)
    };
    wrap(p[0], q[0]).hypot(wrap(p[1], q[1]))
}

/// Path loss in dB at distance `d` meters.
pub fn path_loss_db(d: f64) -> f64 {
    -30.5 - 36.7 * d.log10()
}

/// MMSE estimate variance `τ_t ρ_t β² / (τ_t ρ_t β + 1)`.
pub fn estimation_variances(beta: f64, tau_t: f64, rho_t: f64) -> f64 {
    let snr = tau_t * rho_t * beta;
    snr * beta / (snr + 1.0)
}

fn uniform_point(rng: &mut ChaCha8Rng, side: f64) -> Point {
    [rng.random_range(0.0..side), rng.random_range(0.0..side)]
}

pub fn place_network(config: &SystemConfig, seed: u64) -> Result<NetworkGeometry, NetgenError> {
    config.validate()?;
    let side = config.area_side_m;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut aps: Vec<Point> = Vec::with_capacity(config.num_aps);
    let mut attempts = 0usize;
    while aps.len() < config.num_aps {
        attempts += 1;
        if attempts > PLACEMENT_CAP {
            return Err(NetgenError::PlacementFailure(PLACEMENT_CAP));
        }
        let p = uniform_point(&mut rng, side);
        if aps.iter().all(|&q| torus_distance(p, q, side) >= config.min_ap_spacing_m) {
            aps.push(p);
        }
    }
    let mut ues: Vec<Point> =
        (0..config.num_dl_ues + config.num_ul_ues).map(|_| uniform_point(&mut rng, side)).collect();
    for i in 1..ues.len() {
        while ues[..i].contains(&ues[i]) {
            ues[i][0] = (ues[i][0] + DUPLICATE_NUDGE_M) % side;
        }
    }
    let ul = ues.split_off(config.num_dl_ues);
    Ok(NetworkGeometry { ap_positions: aps, dl_ue_positions: ues, ul_ue_positions: ul, area_side: side })
}

/// Per-AP shadowing covariance (dB²) across the given UEs.
pub fn shadowing_covariance(ues: &[Point], area_side: f64) -> DMatrix<f64> {
    let k = ues.len();
    DMatrix::from_fn(k, k, |i, j| {
        let delta = torus_distance(ues[i], ues[j], area_side);
        SHADOW_STD_DB.powi(2) * 2f64.powf(-delta / DECORRELATION_M)
    })
}

fn lower_factor(cov: DMatrix<f64>) -> Result<DMatrix<f64>, NetgenError> {
    if let Some(ch) = cov.clone().cholesky() {
        return Ok(ch.l());
    }
    let k = cov.nrows();
    let jittered = cov + DMatrix::<f64>::identity(k, k) * 1e-10;
    jittered.cholesky().map(|c| c.l()).ok_or(NetgenError::CovarianceNotPsd)
}

fn gain(d: f64, shadow_db: f64, noise: f64) -> f64 {
    db_to_linear(path_loss_db(d.max(MIN_LINK_DISTANCE_M)) + shadow_db) / noise
}

pub fn large_scale_fading(
    geom: &NetworkGeometry,
    config: &SystemConfig,
    seed: u64,
) -> Result<LargeScaleChannels, NetgenError> {
    let side = geom.area_side;
    let noise = config.noise_power();
    let m = geom.ap_positions.len();
    let kd = geom.dl_ue_positions.len();
    let ku = geom.ul_ue_positions.len();
    let ues: Vec<Point> = geom.dl_ue_positions.iter().chain(&geom.ul_ue_positions).copied().collect();
    let l = lower_factor(shadowing_covariance(&ues, side))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { rng.sample(StandardNormal) };

    let mut beta_dl = Mat::zeros(m, kd);
    let mut beta_ul = Mat::zeros(m, ku);
    for (a, &ap) in geom.ap_positions.iter().enumerate() {
        let w: Vec<f64> = (0..ues.len()).map(|_| normal()).collect();
        for (u, &ue) in ues.iter().enumerate() {
            let shadow: f64 = (0..=u).map(|j| l[(u, j)] * w[j]).sum();
            let b = gain(torus_distance(ap, ue, side), shadow, noise);
            if u < kd {
                beta_dl[(a, u)] = b;
            } else {
                beta_ul[(a, u - kd)] = b;
            }
        }
    }
    let beta_du = Mat::from_fn(kd, ku, |k, q| {
        let d = torus_distance(geom.dl_ue_positions[k], geom.ul_ue_positions[q], side);
        gain(d, SHADOW_STD_DB * normal(), noise)
    });
    let beta_ap = Mat::from_fn(m, m, |i, j| {
        if i == j {
            0.0
        } else {
            let d = torus_distance(geom.ap_positions[i], geom.ap_positions[j], side);
            gain(d, SHADOW_STD_DB * normal(), noise)
        }
    });
    let tau = config.pilot_len as f64;
    let rho_t = config.p_pilot_w;
    Ok(LargeScaleChannels {
        gamma_dl: beta_dl.map(|b| estimation_variances(b, tau, rho_t)),
        gamma_ul: beta_ul.map(|b| estimation_variances(b, tau, rho_t)),
        beta_dl,
        beta_ul,
        beta_du,
        beta_ap,
        residual_si: config.residual_si(),
    })
}

/// Geometry and channels for one realization; geometry and fading use separate seed streams.
pub fn realize(config: &SystemConfig, seed: u64) -> Result<(NetworkGeometry, LargeScaleChannels), NetgenError> {
    let geom = place_network(config, seed)?;
    let ch = large_scale_fading(&geom, config, seed ^ 0x9e37_79b9_7f4a_7c15)?;
    Ok((geom, ch))
}
