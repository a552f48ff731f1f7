//! Independent checks: Monte-Carlo SE over small-scale fading and exhaustive
//! mode enumeration for tiny networks.

use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::netgen::LargeScaleChannels;
use crate::perfmodel::{DesignVariables, Link};
use crate::scasolver::{run_fixed_modes, Objective, ScaConfig, ScaError, SchemeModel};

type C = Complex<f64>;

/// Number of independent batches behind each confidence half-width.
pub const MC_BATCHES: usize = 20;
pub const MIN_SAMPLES: usize = 10_000;

/// SE estimate with a 3-sigma half-width from batch means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub se: f64,
    pub half_width: f64,
}

impl McEstimate {
    pub fn contains(&self, value: f64) -> bool {
        (self.se - value).abs() <= self.half_width
    }
}

/// Box–Muller complex Gaussian source.
pub struct Gaussian {
    rng: ChaCha8Rng,
}

impl Gaussian {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// One draw of CN(0, var).
    pub fn cn(&mut self, var: f64) -> C {
        let u1: f64 = 1.0 - self.rng.random::<f64>();
        let u2: f64 = self.rng.random::<f64>();
        let r = (-2.0 * u1.ln()).sqrt() * (0.5 * var).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        C::new(r * c, r * s)
    }

    pub fn cn_vec(&mut self, n: usize, var: f64) -> Vec<C> {
        (0..n).map(|_| self.cn(var)).collect()
    }
}

fn dot_conj(x: &[C], y: &[C]) -> C {
    // xᵀ y*
    x.iter().zip(y).map(|(a, b)| a * b.conj()).sum()
}

/// Running sums of a complex variable and its squared modulus.
#[derive(Default, Clone, Copy)]
struct Moments {
    sum: C,
    sq: f64,
}

impl Moments {
    fn push(&mut self, z: C) {
        self.sum += z;
        self.sq += z.norm_sqr();
    }

    fn mean(&self, n: f64) -> C {
        self.sum / n
    }

    fn variance(&self, n: f64) -> f64 {
        self.sq / n - self.mean(n).norm_sqr()
    }
}

fn batch_seed(seed: u64, batch: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(batch as u64 + 1)
}

fn summarize(link: &Link, per_batch: &[Vec<f64>], pooled: Vec<f64>) -> Vec<McEstimate> {
    let nb = per_batch.len() as f64;
    pooled
        .into_iter()
        .enumerate()
        .map(|(u, sinr)| {
            let ses: Vec<f64> = per_batch.iter().map(|b| link.se(b[u])).collect();
            let mean = ses.iter().sum::<f64>() / nb;
            let var = ses.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (nb - 1.0);
            McEstimate { se: link.se(sinr), half_width: 3.0 * (var / nb).sqrt() }
        })
        .collect()
}

fn split(n_samples: usize) -> usize {
    n_samples.max(MIN_SAMPLES).div_ceil(MC_BATCHES)
}

/// DL SE by sampling the detection terms and forming the use-and-then-forget bound.
/// `link` selects the antenna counts and prelog; `ch` must already carry any
/// scheme-specific gains.
pub fn mc_dl_se(link: &Link, ch: &LargeScaleChannels, vars: &DesignVariables, n_samples: usize, seed: u64) -> Vec<McEstimate> {
    let (m, kd, ku) = (ch.num_aps(), ch.num_dl(), ch.num_ul());
    let n = link.tx_antennas as usize;
    let per = split(n_samples);
    // ds[k], di[k][k'], ui[k][l]
    let mut total_ds = vec![Moments::default(); kd];
    let mut total_di = vec![vec![0.0; kd]; kd];
    let mut total_ui = vec![vec![0.0; ku]; kd];
    let mut batches = Vec::with_capacity(MC_BATCHES);
    for batch in 0..MC_BATCHES {
        let mut g = Gaussian::new(batch_seed(seed, batch));
        let mut ds = vec![Moments::default(); kd];
        let mut di = vec![vec![0.0; kd]; kd];
        let mut ui = vec![vec![0.0; ku]; kd];
        for _ in 0..per {
            let est: Vec<Vec<Vec<C>>> =
                (0..m).map(|i| (0..kd).map(|k| g.cn_vec(n, ch.gamma_dl[(i, k)])).collect()).collect();
            for k in 0..kd {
                let mut acc = vec![C::new(0.0, 0.0); kd];
                for i in 0..m {
                    let err = g.cn_vec(n, (ch.beta_dl[(i, k)] - ch.gamma_dl[(i, k)]).max(0.0));
                    let true_ch: Vec<C> = est[i][k].iter().zip(&err).map(|(a, b)| a + b).collect();
                    for kp in 0..kd {
                        acc[kp] += dot_conj(&true_ch, &est[i][kp]) * vars.theta[(i, kp)];
                    }
                }
                ds[k].push(acc[k]);
                for kp in 0..kd {
                    if kp != k {
                        di[k][kp] += acc[kp].norm_sqr();
                    }
                }
                for l in 0..ku {
                    ui[k][l] += g.cn(ch.beta_du[(k, l)]).norm_sqr();
                }
            }
        }
        let sinr = dl_bound(link, vars, &ds, &di, &ui, per as f64);
        batches.push(sinr);
        for k in 0..kd {
            total_ds[k].sum += ds[k].sum;
            total_ds[k].sq += ds[k].sq;
            for kp in 0..kd {
                total_di[k][kp] += di[k][kp];
            }
            for l in 0..ku {
                total_ui[k][l] += ui[k][l];
            }
        }
    }
    let pooled = dl_bound(link, vars, &total_ds, &total_di, &total_ui, (per * MC_BATCHES) as f64);
    summarize(link, &batches, pooled)
}

fn dl_bound(
    link: &Link,
    vars: &DesignVariables,
    ds: &[Moments],
    di: &[Vec<f64>],
    ui: &[Vec<f64>],
    n: f64,
) -> Vec<f64> {
    (0..ds.len())
        .map(|k| {
            let signal = link.rho_d * ds[k].mean(n).norm_sqr();
            if signal == 0.0 {
                return 0.0;
            }
            let bu = link.rho_d * ds[k].variance(n);
            let dint: f64 = di[k].iter().map(|v| link.rho_d * v / n).sum();
            let uint: f64 = ui[k].iter().zip(&vars.varsigma).map(|(v, s)| link.rho_u * s * v / n).sum();
            signal / (bu + dint + uint + 1.0)
        })
        .collect()
}

/// UL SE after LSFD combining, including AP–AP interference through `beta_ap`
/// (whose diagonal carries residual self-interference for full duplex).
pub fn mc_ul_se(link: &Link, ch: &LargeScaleChannels, vars: &DesignVariables, n_samples: usize, seed: u64) -> Vec<McEstimate> {
    let (m, kd, ku) = (ch.num_aps(), ch.num_dl(), ch.num_ul());
    let (nt, nr) = (link.tx_antennas as usize, link.rx_antennas as usize);
    let per = split(n_samples);
    let zero = C::new(0.0, 0.0);
    let mut total = UlSums::new(ku);
    let mut batches = Vec::with_capacity(MC_BATCHES);
    for batch in 0..MC_BATCHES {
        let mut g = Gaussian::new(batch_seed(seed, batch) ^ 0x5555_5555);
        let mut sums = UlSums::new(ku);
        for _ in 0..per {
            // UL estimates and true channels at every receiving AP
            let est: Vec<Vec<Vec<C>>> =
                (0..m).map(|i| (0..ku).map(|l| g.cn_vec(nr, ch.gamma_ul[(i, l)])).collect()).collect();
            let chan: Vec<Vec<Vec<C>>> = (0..m)
                .map(|i| {
                    (0..ku)
                        .map(|q| {
                            let e = g.cn_vec(nr, (ch.beta_ul[(i, q)] - ch.gamma_ul[(i, q)]).max(0.0));
                            est[i][q].iter().zip(e).map(|(a, b)| a + b).collect()
                        })
                        .collect()
                })
                .collect();
            // DL precoded streams θ_ik ĝ*_ik at every transmitting AP
            let streams: Vec<Vec<Vec<C>>> = (0..m)
                .map(|i| {
                    (0..kd)
                        .map(|k| g.cn_vec(nt, ch.gamma_dl[(i, k)]).into_iter().map(|v| v.conj() * vars.theta[(i, k)]).collect())
                        .collect()
                })
                .collect();
            // interference seen at receiver m from stream k
            let mut cli = vec![vec![vec![zero; nr]; kd]; m];
            for rx in 0..m {
                if vars.b[rx] <= 0.0 {
                    continue;
                }
                for tx in 0..m {
                    let var = ch.beta_ap[(rx, tx)];
                    if var <= 0.0 {
                        continue;
                    }
                    let z: Vec<C> = g.cn_vec(nr * nt, var);
                    for k in 0..kd {
                        for r in 0..nr {
                            cli[rx][k][r] += (0..nt).map(|c| z[r * nt + c] * streams[tx][k][c]).sum::<C>();
                        }
                    }
                }
            }
            for l in 0..ku {
                let mut gain = vec![zero; ku];
                let mut cross = vec![zero; kd];
                let mut noise = zero;
                for i in 0..m {
                    let w = vars.b[i].sqrt() * vars.alpha[(i, l)];
                    if w == 0.0 {
                        continue;
                    }
                    let h = &est[i][l];
                    for q in 0..ku {
                        gain[q] += w * dot_conj(&chan[i][q], h);
                    }
                    for k in 0..kd {
                        cross[k] += w * dot_conj(&cli[i][k], h);
                    }
                    let wn = g.cn_vec(nr, 1.0);
                    noise += w * dot_conj(&wn, h);
                }
                sums.push(l, &gain, &cross, noise);
            }
        }
        batches.push(sums.bound(link, vars, per as f64));
        total.merge(&sums);
    }
    let pooled = total.bound(link, vars, (per * MC_BATCHES) as f64);
    summarize(link, &batches, pooled)
}

struct UlSums {
    own: Vec<Moments>,
    other: Vec<Vec<f64>>,
    cli: Vec<f64>,
    noise: Vec<f64>,
}

impl UlSums {
    fn new(ku: usize) -> Self {
        Self {
            own: vec![Moments::default(); ku],
            other: vec![vec![0.0; ku]; ku],
            cli: vec![0.0; ku],
            noise: vec![0.0; ku],
        }
    }

    fn push(&mut self, l: usize, gain: &[C], cross: &[C], noise: C) {
        for (q, z) in gain.iter().enumerate() {
            if q == l {
                self.own[l].push(*z);
            } else {
                self.other[l][q] += z.norm_sqr();
            }
        }
        self.cli[l] += cross.iter().map(|z| z.norm_sqr()).sum::<f64>();
        self.noise[l] += noise.norm_sqr();
    }

    fn merge(&mut self, o: &UlSums) {
        for l in 0..self.own.len() {
            self.own[l].sum += o.own[l].sum;
            self.own[l].sq += o.own[l].sq;
            for q in 0..self.own.len() {
                self.other[l][q] += o.other[l][q];
            }
            self.cli[l] += o.cli[l];
            self.noise[l] += o.noise[l];
        }
    }

    fn bound(&self, link: &Link, vars: &DesignVariables, n: f64) -> Vec<f64> {
        (0..self.own.len())
            .map(|l| {
                let s = vars.varsigma[l];
                let signal = link.rho_u * s * self.own[l].mean(n).norm_sqr();
                if signal == 0.0 {
                    return 0.0;
                }
                let bu = link.rho_u * s * self.own[l].variance(n);
                let ui: f64 = self.other[l].iter().zip(&vars.varsigma).map(|(v, q)| link.rho_u * q * v / n).sum();
                let cli = link.rho_d * self.cli[l] / n;
                signal / (bu + ui + cli + self.noise[l] / n)
            })
            .collect()
    }
}

/// Sample mean of `‖ĝ‖⁴` for `ĝ ~ CN(0, γ I_N)`.
pub fn fourth_moment(n: usize, gamma: f64, samples: usize, seed: u64) -> f64 {
    let mut g = Gaussian::new(seed);
    let mut acc = 0.0;
    for _ in 0..samples {
        let v = g.cn_vec(n, gamma);
        let p: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        acc += p * p;
    }
    acc / samples as f64
}

/// Result of enumerating every DL/UL mode vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSearch {
    pub best_a: Vec<f64>,
    pub best_sum_se: f64,
    pub best_feasible: bool,
    /// `(a, sum SE, feasible)` for every candidate in enumeration order.
    pub candidates: Vec<(Vec<f64>, f64, bool)>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("exhaustive search needs at most {MAX_EXHAUSTIVE_APS} APs, got {0}")]
    InstanceTooLarge(usize),
    #[error(transparent)]
    Sca(#[from] ScaError),
}

pub const MAX_EXHAUSTIVE_APS: usize = 8;

/// Enumerates all `2^M` binary mode vectors with `b = 1 − a`, optimizes the
/// continuous variables of each by SCA and keeps the best sum SE. Feasible
/// candidates beat infeasible ones.
pub fn exhaustive_mode_search(model: &SchemeModel, cfg: &ScaConfig, seed: u64) -> Result<ModeSearch, OracleError> {
    let m = model.ch.num_aps();
    if m > MAX_EXHAUSTIVE_APS {
        return Err(OracleError::InstanceTooLarge(m));
    }
    let mut candidates = Vec::with_capacity(1 << m);
    for mask in 0u32..(1 << m) {
        let a: Vec<f64> = (0..m).map(|i| f64::from((mask >> i) & 1)).collect();
        let b: Vec<f64> = a.iter().map(|v| 1.0 - v).collect();
        let out = run_fixed_modes(model, Objective::Se, &a, &b, cfg, seed)?;
        candidates.push((a, out.result.sum_se, out.result.feasible));
    }
    let best = candidates
        .iter()
        .max_by(|x, y| (x.2, x.1).partial_cmp(&(y.2, y.1)).unwrap())
        .cloned()
        .unwrap();
    Ok(ModeSearch { best_a: best.0, best_sum_se: best.1, best_feasible: best.2, candidates })
}
