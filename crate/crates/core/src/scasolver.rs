//! Lifted SE / EE problems, their convex restrictions around an iterate, and the
//! successive convex approximation loop with binary penalty and QoS slacks.
//!
//! Internally the DL controls are `p_mk = √(N γ_mk) θ_mk`, so per-AP power is
//! `Σ_k p_mk² ≤ 1` and the mode coupling reads `p_mk² ≤ a_m`. The UL
//! interference products `α̂·ς` and `α̂·t̄` enter the denominator through
//! quarter-square upper bounds instead of extra lifted variables.

use qcqp::{solve, Affine, ConvexQcqp, QuadExpr, SolveError, Status, Tolerances};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mat::Mat;
use crate::netgen::{LargeScaleChannels, SystemConfig};
use crate::perfmodel::{self, dl_sinr, ul_sinr, Backhaul, DesignVariables, Link, PowerParams, Scheme, SchemeResult};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScaError {
    #[error("subproblem solver failed twice in a row at iteration {0}")]
    Stalled(usize),
    #[error("expansion point is not finite")]
    ExpansionSingular,
    #[error(transparent)]
    Solver(#[from] SolveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Se,
    Ee,
}

impl std::str::FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "se" => Ok(Objective::Se),
            "ee" => Ok(Objective::Ee),
            _ => Err(format!("unknown objective `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaConfig {
    pub lambda: f64,
    pub phi: f64,
    /// Target for `C(a, b) / (M K)`.
    pub eps_binary: f64,
    /// `max_m min(a_m, 1 − a_m)` above which λ is doubled at convergence.
    pub binary_gap_tol: f64,
    pub max_lambda_doublings: usize,
    pub rel_obj_tol: f64,
    pub max_outer_iters: usize,
    pub restoration: bool,
    pub slack_threshold: f64,
    pub feas_tol: f64,
    pub kkt_tol: f64,
    pub max_solver_iters: usize,
    /// Gain of an AP's own DL signal into its UL receiver in the relaxed problem.
    pub self_coupling: f64,
    /// Half-width of the uniform draw of the initial `a` around one half.
    pub init_spread: f64,
    pub starts: usize,
}

impl ScaConfig {
    pub fn new(objective: Objective, num_dl: usize, num_ul: usize) -> Self {
        Self {
            lambda: match objective {
                Objective::Se => 1.0,
                Objective::Ee => 10.0,
            },
            phi: 100.0 * (num_dl + num_ul) as f64,
            eps_binary: 5e-5,
            binary_gap_tol: 1e-3,
            max_lambda_doublings: 8,
            rel_obj_tol: 1e-4,
            max_outer_iters: 50,
            restoration: true,
            slack_threshold: 1e-3,
            feas_tol: 1e-7,
            kkt_tol: 1e-6,
            max_solver_iters: 200,
            self_coupling: 1000.0,
            init_spread: 0.3,
            starts: 10,
        }
    }

    fn tolerances(&self) -> Tolerances {
        Tolerances { feas_tol: self.feas_tol, kkt_tol: self.kkt_tol, max_iter: self.max_solver_iters }
    }
}

/// Non-rate-dependent power `P̃ = c_u Σ u_m + c_ς Σ ς + c_0 + Σ (c_a a_m + c_b b_m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerModel {
    pub per_utilization: f64,
    pub per_ul_power: f64,
    pub constant: f64,
    pub per_dl_ap: f64,
    pub per_ul_ap: f64,
}

impl PowerModel {
    fn value(&self, util: &[f64], varsigma: &[f64], a: &[f64], b: &[f64]) -> f64 {
        self.per_utilization * util.iter().sum::<f64>()
            + self.per_ul_power * varsigma.iter().sum::<f64>()
            + self.constant
            + a.iter().zip(b).map(|(a, b)| self.per_dl_ap * a + self.per_ul_ap * b).sum::<f64>()
    }
}

/// Channels and constants of one duplexing scheme as seen by the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeModel {
    pub scheme: Scheme,
    /// Gains as generated, used for the final re-evaluation.
    pub raw: LargeScaleChannels,
    /// Gains with scheme adjustments (cross links removed or SI diagonal).
    pub ch: LargeScaleChannels,
    pub link: Link,
    pub cfg: SystemConfig,
    pub params: PowerParams,
    pub power: PowerModel,
}

impl SchemeModel {
    pub fn nafd(ch: &LargeScaleChannels, cfg: &SystemConfig, params: &PowerParams) -> Self {
        Self::variant(Scheme::Nafd, ch, cfg, params)
    }

    /// NAFD formulas reported under another scheme label (random or greedy modes).
    pub fn variant(scheme: Scheme, ch: &LargeScaleChannels, cfg: &SystemConfig, params: &PowerParams) -> Self {
        let n = cfg.antennas as f64;
        Self {
            scheme,
            raw: ch.clone(),
            ch: ch.clone(),
            link: Link::nafd(cfg),
            cfg: cfg.clone(),
            params: params.clone(),
            power: PowerModel {
                per_utilization: cfg.p_dl_max_w / params.zeta,
                per_ul_power: cfg.p_ul_max_w / params.chi,
                constant: params.ue_fixed(ch.num_dl(), ch.num_ul()),
                per_dl_ap: n * params.p_cdl + params.p_fdl,
                per_ul_ap: n * params.p_cul + params.p_ful,
            },
        }
    }

    pub fn hd(ch: &LargeScaleChannels, cfg: &SystemConfig, params: &PowerParams) -> Self {
        let base = Self::nafd(ch, cfg, params);
        let p = base.power;
        Self {
            scheme: Scheme::Hd,
            ch: ch.without_cross_links(),
            link: Link::hd(cfg),
            power: PowerModel {
                per_utilization: 0.5 * p.per_utilization,
                per_ul_power: 0.5 * p.per_ul_power,
                constant: 0.5 * p.constant,
                per_dl_ap: 0.5 * p.per_dl_ap,
                per_ul_ap: 0.5 * p.per_ul_ap,
            },
            ..base
        }
    }

    pub fn fd(ch: &LargeScaleChannels, cfg: &SystemConfig, params: &PowerParams) -> Self {
        let base = Self::nafd(ch, cfg, params);
        let (nt, nr) = (cfg.fd_tx_antennas as f64, cfg.fd_rx_antennas as f64);
        Self {
            scheme: Scheme::Fd,
            ch: ch.full_duplex(),
            link: Link::fd(cfg),
            power: PowerModel {
                per_dl_ap: nt * params.p_cdl + params.p_fdl,
                per_ul_ap: nr * (params.p_cul + params.p_sis) + params.p_ful,
                ..base.power
            },
            ..base
        }
    }

    pub fn for_scheme(scheme: Scheme, ch: &LargeScaleChannels, cfg: &SystemConfig, params: &PowerParams) -> Self {
        match scheme {
            Scheme::Hd => Self::hd(ch, cfg, params),
            Scheme::Fd => Self::fd(ch, cfg, params),
            s => Self::variant(s, ch, cfg, params),
        }
    }

    /// Modes every HD / FD AP uses.
    pub fn native_modes(&self) -> Option<Modes> {
        match self.scheme {
            Scheme::Hd | Scheme::Fd => {
                let m = self.ch.num_aps();
                Some(Modes::Fixed { a: vec![1.0; m], b: vec![1.0; m] })
            }
            _ => None,
        }
    }

    fn dims(&self) -> (usize, usize, usize) {
        (self.ch.num_aps(), self.ch.num_dl(), self.ch.num_ul())
    }

    /// Final figures from perfmodel for binary variables.
    pub fn evaluate(&self, vars: &DesignVariables) -> SchemeResult {
        perfmodel::evaluate(self.scheme, &self.raw, &self.cfg, &self.params, vars, Backhaul::PerDirection)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Modes {
    /// `a ∈ [0, 1]` optimized, `b = 1 − a`.
    Relaxed,
    /// Constant indicators; `a = b = 1` is full duplex, `a = b = 0` leaves the AP idle.
    Fixed { a: Vec<f64>, b: Vec<f64> },
}

/// Every variable of the lifted problem. Entries of absent variables are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedPoint {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Scaled DL control `√(N γ) θ`, AP × DL UE.
    pub p: Mat,
    pub varsigma: Vec<f64>,
    pub alpha: Mat,
    /// `ω ≤ √(b ς)`
    pub omega: Mat,
    /// `ω̃ ≤ ω α`
    pub omega_tilde: Mat,
    /// `α̃ ≥ α²`
    pub alpha_tilde: Mat,
    /// `α̂ ≥ b α̃`
    pub alpha_hat: Mat,
    /// `t̄_i ≥ Σ_k p_ik²`
    pub t_bar: Vec<f64>,
    pub q_dl: Vec<f64>,
    pub q_ul: Vec<f64>,
    pub z_dl: Vec<f64>,
    pub z_ul: Vec<f64>,
    pub t: f64,
    pub p_hat: f64,
}

impl LiftedPoint {
    pub fn binary_gap(&self) -> f64 {
        self.a.iter().map(|&a| a.min(1.0 - a).max(0.0)).fold(0.0, f64::max)
    }

    pub fn penalty(&self) -> f64 {
        self.a.iter().chain(&self.b).map(|&x| x - x * x).sum()
    }

    pub fn slack(&self) -> f64 {
        self.z_dl.iter().chain(&self.z_ul).sum()
    }
}

/// A lifted SE or EE problem for one scheme and one mode setting.
#[derive(Debug, Clone)]
pub struct LiftedProblem {
    pub model: SchemeModel,
    pub objective: Objective,
    pub modes: Modes,
    pub slacks: bool,
    /// Relaxed APs whose `a` has been held constant.
    pub frozen: Vec<Option<f64>>,
    /// Power normalization for the EE epigraph.
    pub power_ref: f64,
    layout: Layout,
}

#[derive(Debug, Clone, Default)]
struct Layout {
    n: usize,
    a: Vec<Option<usize>>,
    p: Vec<Option<usize>>,
    varsigma: Vec<usize>,
    alpha: Vec<Option<usize>>,
    omega: Vec<Option<usize>>,
    omega_tilde: Vec<Option<usize>>,
    alpha_tilde: Vec<Option<usize>>,
    alpha_hat: Vec<Option<usize>>,
    t_bar: Vec<Option<usize>>,
    q_dl: Vec<usize>,
    q_ul: Vec<usize>,
    z_dl: Vec<Option<usize>>,
    z_ul: Vec<Option<usize>>,
    t: Option<usize>,
    p_hat: Option<usize>,
}

/// Variable and constraint counts of a compiled subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubproblemSize {
    pub variables: usize,
    pub linear: usize,
    pub quadratic: usize,
}

/// Counts `(A_v, A_l, A_q)` quoted for the fully lifted SE problem with `K_d = K_u = K`.
pub fn reference_counts(m: usize, k: usize) -> SubproblemSize {
    SubproblemSize {
        variables: 2 * m + 3 * k + 9 * m * k + m * k * k + m * m * k * k,
        linear: 5 * m + 4 * k + 9 * m * k + m * k * k + m * m * k * k,
        quadratic: m + 2 * k + 7 * m * k + m * k * k + m * m * k * k,
    }
}

const KAPPA_RANGE: f64 = 10.0;

fn kappa(xn: f64, yn: f64) -> f64 {
    if xn > 1e-9 && yn > 1e-9 {
        (yn / xn).sqrt().clamp(1.0 / KAPPA_RANGE, KAPPA_RANGE)
    } else {
        1.0
    }
}

/// Upper bound on `xy` for `x, y ≥ 0`, tight at `(xn, yn)`.
pub fn product_upper_bound(x: f64, y: f64, xn: f64, yn: f64) -> f64 {
    0.25 * ((x + y).powi(2) - 2.0 * (xn - yn) * (x - y) + (xn - yn).powi(2))
}

/// Upper bound on `−xy` for `x, y ≥ 0`, tight at `(xn, yn)`.
pub fn neg_product_upper_bound(x: f64, y: f64, xn: f64, yn: f64) -> f64 {
    0.25 * ((x - y).powi(2) - 2.0 * (xn + yn) * (x + y) + (xn + yn).powi(2))
}

/// Concave minorant of `ln(1 + x²/y)` around `(xn, yn)`, valid for `x > 0`, `y > 0`.
pub fn log_ratio_minorant(x: f64, y: f64, xn: f64, yn: f64) -> f64 {
    let r = xn * xn / yn;
    let d = xn * xn / (yn * (xn * xn + yn));
    r.ln_1p() - r + 2.0 * xn * x / yn - d * (x * x + y)
}

/// `w·xy` bounded above; exact when either factor is constant.
fn add_product(e: &mut QuadExpr, x: &Affine, y: &Affine, xn: f64, yn: f64, w: f64) {
    if w == 0.0 {
        return;
    }
    if x.is_constant() {
        e.add_affine(y, w * x.constant);
    } else if y.is_constant() {
        e.add_affine(x, w * y.constant);
    } else {
        let k = kappa(xn, yn);
        let (xs, ys) = (x.scaled(k), y.scaled(1.0 / k));
        let d = k * xn - yn / k;
        e.add_square(&xs.add(&ys), 0.25 * w);
        e.add_affine(&xs.add(&ys.scaled(-1.0)), -0.5 * w * d);
        e.add_constant(0.25 * w * d * d);
    }
}

/// `−w·xy` bounded above; exact when either factor is constant.
fn add_neg_product(e: &mut QuadExpr, x: &Affine, y: &Affine, xn: f64, yn: f64, w: f64) {
    if w == 0.0 {
        return;
    }
    if x.is_constant() {
        e.add_affine(y, -w * x.constant);
    } else if y.is_constant() {
        e.add_affine(x, -w * y.constant);
    } else {
        let k = kappa(xn, yn);
        let (xs, ys) = (x.scaled(k), y.scaled(1.0 / k));
        let s = k * xn + yn / k;
        e.add_square(&xs.add(&ys.scaled(-1.0)), 0.25 * w);
        e.add_affine(&xs.add(&ys), -0.5 * w * s);
        e.add_constant(0.25 * w * s * s);
    }
}

/// Builds the lifted SE problem (objective `−Σ q + λ C(a, b)`).
pub fn lift_se_problem(model: &SchemeModel, modes: Modes, slacks: bool) -> LiftedProblem {
    LiftedProblem::new(model.clone(), Objective::Se, modes, slacks)
}

/// Builds the lifted EE problem (objective `−t + λ C(a, b)` with `t p̂ ≤ Σ q`, `p̂ ≥ P̃`).
pub fn lift_ee_problem(model: &SchemeModel, modes: Modes, slacks: bool) -> LiftedProblem {
    LiftedProblem::new(model.clone(), Objective::Ee, modes, slacks)
}

impl LiftedProblem {
    pub fn new(model: SchemeModel, objective: Objective, modes: Modes, slacks: bool) -> Self {
        let m = model.ch.num_aps();
        Self::with_frozen(model, objective, modes, slacks, vec![None; m])
    }

    fn with_frozen(model: SchemeModel, objective: Objective, modes: Modes, slacks: bool, frozen: Vec<Option<f64>>) -> Self {
        let (m, kd, ku) = model.dims();
        let pm = model.power;
        let power_ref = pm.per_utilization * 0.5 * m as f64
            + pm.per_ul_power * ku as f64
            + pm.constant
            + 0.5 * m as f64 * (pm.per_dl_ap + pm.per_ul_ap);
        let mut lp = Self { model, objective, modes, slacks, frozen, power_ref: power_ref.max(1e-9), layout: Layout::default() };
        let mut n = 0usize;
        let mut next = || {
            n += 1;
            n - 1
        };
        let mut l = Layout::default();
        l.a = (0..m).map(|i| (lp.is_relaxed() && lp.frozen[i].is_none()).then(&mut next)).collect();
        l.p = (0..m * kd)
            .map(|j| {
                let (i, k) = (j / kd, j % kd);
                (lp.can_dl(i) && lp.model.ch.gamma_dl[(i, k)] > 0.0).then(&mut next)
            })
            .collect();
        l.varsigma = (0..ku).map(|_| next()).collect();
        let ul_slot = |lp: &Self, j: usize| {
            let (i, q) = (j / ku, j % ku);
            lp.can_ul(i) && lp.model.ch.gamma_ul[(i, q)] > 0.0
        };
        l.alpha = (0..m * ku).map(|j| ul_slot(&lp, j).then(&mut next)).collect();
        l.omega = (0..m * ku).map(|j| ul_slot(&lp, j).then(&mut next)).collect();
        l.omega_tilde = (0..m * ku).map(|j| ul_slot(&lp, j).then(&mut next)).collect();
        l.alpha_tilde = (0..m * ku).map(|j| ul_slot(&lp, j).then(&mut next)).collect();
        l.alpha_hat = (0..m * ku).map(|j| ul_slot(&lp, j).then(&mut next)).collect();
        l.t_bar = (0..m)
            .map(|i| {
                let heard = (0..m).any(|r| lp.can_ul(r) && lp.model.ch.beta_ap[(r, i)] > 0.0);
                (ku > 0 && lp.can_dl(i) && heard && (0..kd).any(|k| l.p[i * kd + k].is_some())).then(&mut next)
            })
            .collect();
        l.q_dl = (0..kd).map(|_| next()).collect();
        l.q_ul = (0..ku).map(|_| next()).collect();
        l.z_dl = (0..kd).map(|_| slacks.then(&mut next)).collect();
        l.z_ul = (0..ku).map(|_| slacks.then(&mut next)).collect();
        if objective == Objective::Ee {
            l.t = Some(next());
            l.p_hat = Some(next());
        }
        l.n = n;
        lp.layout = l;
        lp
    }

    pub fn is_relaxed(&self) -> bool {
        matches!(self.modes, Modes::Relaxed)
    }

    fn fixed_a(&self, m: usize) -> Option<f64> {
        match &self.modes {
            Modes::Relaxed => self.frozen[m],
            Modes::Fixed { a, .. } => Some(a[m]),
        }
    }

    fn fixed_b(&self, m: usize) -> Option<f64> {
        match &self.modes {
            Modes::Relaxed => self.frozen[m].map(|a| 1.0 - a),
            Modes::Fixed { b, .. } => Some(b[m]),
        }
    }

    /// Copy with every free `a` within `tol` of 0 or 1 held at its value in `pt`.
    fn freeze_near_binary(&self, pt: &LiftedPoint, tol: f64) -> Option<Self> {
        if !self.is_relaxed() {
            return None;
        }
        let mut frozen = self.frozen.clone();
        let mut changed = false;
        for (i, f) in frozen.iter_mut().enumerate() {
            if f.is_none() && pt.a[i].min(1.0 - pt.a[i]) < tol {
                *f = Some(pt.a[i]);
                changed = true;
            }
        }
        changed.then(|| Self::with_frozen(self.model.clone(), self.objective, self.modes.clone(), self.slacks, frozen))
    }

    fn can_dl(&self, m: usize) -> bool {
        self.fixed_a(m).is_none_or(|a| a > 0.0)
    }

    fn can_ul(&self, m: usize) -> bool {
        self.fixed_b(m).is_none_or(|b| b > 0.0)
    }

    fn a_expr(&self, m: usize) -> Affine {
        match self.fixed_a(m) {
            Some(a) => Affine::constant(a),
            None => Affine::var(self.layout.a[m].unwrap()),
        }
    }

    fn b_expr(&self, m: usize) -> Affine {
        match self.fixed_b(m) {
            Some(b) => Affine::constant(b),
            None => Affine { terms: vec![(self.layout.a[m].unwrap(), -1.0)], constant: 1.0 },
        }
    }

    pub fn num_variables(&self) -> usize {
        self.layout.n
    }

    fn kd(&self) -> usize {
        self.model.ch.num_dl()
    }

    fn ku(&self) -> usize {
        self.model.ch.num_ul()
    }

    fn qos_dl(&self) -> f64 {
        self.model.cfg.qos_dl
    }

    fn qos_ul(&self) -> f64 {
        self.model.cfg.qos_ul
    }

    fn se_scale(&self) -> f64 {
        self.model.link.prelog / std::f64::consts::LN_2
    }

    /// Variable vector of a point.
    pub fn to_vector(&self, pt: &LiftedPoint) -> Vec<f64> {
        let l = &self.layout;
        let (m, kd, ku) = self.model.dims();
        let mut x = vec![0.0; l.n];
        let mut put = |s: Option<usize>, v: f64| {
            if let Some(j) = s {
                x[j] = v;
            }
        };
        for i in 0..m {
            put(l.a[i], pt.a[i]);
            put(l.t_bar[i], pt.t_bar[i]);
            for k in 0..kd {
                put(l.p[i * kd + k], pt.p[(i, k)]);
            }
            for q in 0..ku {
                let j = i * ku + q;
                put(l.alpha[j], pt.alpha[(i, q)]);
                put(l.omega[j], pt.omega[(i, q)]);
                put(l.omega_tilde[j], pt.omega_tilde[(i, q)]);
                put(l.alpha_tilde[j], pt.alpha_tilde[(i, q)]);
                put(l.alpha_hat[j], pt.alpha_hat[(i, q)]);
            }
        }
        for q in 0..ku {
            put(Some(l.varsigma[q]), pt.varsigma[q]);
            put(Some(l.q_ul[q]), pt.q_ul[q]);
            put(l.z_ul[q], pt.z_ul[q]);
        }
        for k in 0..kd {
            put(Some(l.q_dl[k]), pt.q_dl[k]);
            put(l.z_dl[k], pt.z_dl[k]);
        }
        put(l.t, pt.t);
        put(l.p_hat, pt.p_hat);
        x
    }

    /// Point from a variable vector; auxiliaries are copied, not tightened.
    pub fn from_vector(&self, x: &[f64]) -> LiftedPoint {
        let l = &self.layout;
        let (m, kd, ku) = self.model.dims();
        let get = |s: Option<usize>| s.map_or(0.0, |j| x[j]);
        let a: Vec<f64> = (0..m).map(|i| self.fixed_a(i).unwrap_or_else(|| get(l.a[i]))).collect();
        let b: Vec<f64> = (0..m).map(|i| self.fixed_b(i).unwrap_or(1.0 - a[i])).collect();
        let ul = |slots: &[Option<usize>]| Mat::from_fn(m, ku, |i, q| get(slots[i * ku + q]));
        LiftedPoint {
            p: Mat::from_fn(m, kd, |i, k| get(l.p[i * kd + k])),
            varsigma: l.varsigma.iter().map(|&j| x[j]).collect(),
            alpha: ul(&l.alpha),
            omega: ul(&l.omega),
            omega_tilde: ul(&l.omega_tilde),
            alpha_tilde: ul(&l.alpha_tilde),
            alpha_hat: ul(&l.alpha_hat),
            t_bar: l.t_bar.iter().map(|&s| get(s)).collect(),
            q_dl: l.q_dl.iter().map(|&j| x[j]).collect(),
            q_ul: l.q_ul.iter().map(|&j| x[j]).collect(),
            z_dl: l.z_dl.iter().map(|&s| get(s)).collect(),
            z_ul: l.z_ul.iter().map(|&s| get(s)).collect(),
            t: get(l.t),
            p_hat: get(l.p_hat),
            a,
            b,
        }
    }

    /// Design variables (θ recovered from p) of a point.
    pub fn design_variables(&self, pt: &LiftedPoint) -> DesignVariables {
        let (m, kd, ku) = self.model.dims();
        let n = self.model.link.tx_antennas;
        let l = &self.layout;
        DesignVariables {
            a: pt.a.clone(),
            b: pt.b.clone(),
            theta: Mat::from_fn(m, kd, |i, k| {
                let g = self.model.ch.gamma_dl[(i, k)];
                if g > 0.0 {
                    pt.p[(i, k)] / (n * g).sqrt()
                } else {
                    0.0
                }
            }),
            varsigma: pt.varsigma.clone(),
            alpha: Mat::from_fn(m, ku, |i, q| if l.alpha[i * ku + q].is_some() { pt.alpha[(i, q)] } else { 0.0 }),
        }
    }

    /// True per-UE SEs of a point under the scheme's formulas.
    pub fn true_se(&self, pt: &LiftedPoint) -> (Vec<f64>, Vec<f64>) {
        let v = self.design_variables(pt);
        let link = &self.model.link;
        let dl = dl_sinr(link, &self.model.ch, &v).into_iter().map(|s| link.se(s)).collect();
        let ul = ul_sinr(link, &self.model.ch, &v).into_iter().map(|s| link.se(s)).collect();
        (dl, ul)
    }

    /// Non-rate-dependent power of a point, divided by `power_ref`.
    pub fn scaled_power(&self, pt: &LiftedPoint) -> f64 {
        let (m, kd, _) = self.model.dims();
        let util: Vec<f64> = (0..m).map(|i| (0..kd).map(|k| pt.p[(i, k)].powi(2)).sum()).collect();
        self.model.power.value(&util, &pt.varsigma, &pt.a, &pt.b) / self.power_ref
    }

    /// Projects the primary variables into their boxes and power budgets, then sets
    /// every auxiliary so its defining inequality holds with equality.
    pub fn tighten(&self, pt: &LiftedPoint) -> LiftedPoint {
        let (m, kd, ku) = self.model.dims();
        let l = &self.layout;
        let mut out = pt.clone();
        for i in 0..m {
            if let Some(a) = self.fixed_a(i) {
                out.a[i] = a;
                out.b[i] = self.fixed_b(i).unwrap();
            } else {
                out.a[i] = pt.a[i].clamp(0.0, 1.0);
                out.b[i] = 1.0 - out.a[i];
            }
            let cap = if self.is_relaxed() { out.a[i].sqrt() } else { 1.0 };
            let mut u = 0.0;
            for k in 0..kd {
                let v = if l.p[i * kd + k].is_some() { pt.p[(i, k)].clamp(0.0, cap) } else { 0.0 };
                out.p[(i, k)] = v;
                u += v * v;
            }
            if u > 1.0 {
                let s = u.sqrt();
                for k in 0..kd {
                    out.p[(i, k)] /= s;
                }
                u = 1.0;
            }
            out.t_bar[i] = if l.t_bar[i].is_some() { u } else { 0.0 };
        }
        for q in 0..ku {
            out.varsigma[q] = pt.varsigma[q].clamp(0.0, 1.0);
        }
        for i in 0..m {
            for q in 0..ku {
                if l.alpha[i * ku + q].is_some() {
                    let al = pt.alpha[(i, q)].clamp(0.0, 1.0);
                    let w = (out.b[i] * out.varsigma[q]).max(0.0).sqrt();
                    out.alpha[(i, q)] = al;
                    out.omega[(i, q)] = w;
                    out.omega_tilde[(i, q)] = w * al;
                    out.alpha_tilde[(i, q)] = al * al;
                    out.alpha_hat[(i, q)] = out.b[i] * al * al;
                } else {
                    for mm in [&mut out.alpha, &mut out.omega, &mut out.omega_tilde, &mut out.alpha_tilde, &mut out.alpha_hat] {
                        mm[(i, q)] = 0.0;
                    }
                }
            }
        }
        let (dl, ul) = self.true_se(&out);
        out.q_dl = dl;
        out.q_ul = ul;
        if self.slacks {
            out.z_dl = out.q_dl.iter().map(|q| (self.qos_dl() - q).max(0.0)).collect();
            out.z_ul = out.q_ul.iter().map(|q| (self.qos_ul() - q).max(0.0)).collect();
        } else {
            out.z_dl = vec![0.0; kd];
            out.z_ul = vec![0.0; ku];
        }
        if self.objective == Objective::Ee {
            out.p_hat = self.scaled_power(&out);
            out.t = out.q_dl.iter().chain(&out.q_ul).sum::<f64>() / out.p_hat;
        } else {
            out.t = 0.0;
            out.p_hat = 0.0;
        }
        out
    }

    /// Penalized objective `−Σq (or −t) + λ C(a, b) + φ Σ z` at a point.
    pub fn penalized_objective(&self, pt: &LiftedPoint, lambda: f64, phi: f64) -> f64 {
        let gain = match self.objective {
            Objective::Se => pt.q_dl.iter().chain(&pt.q_ul).sum::<f64>(),
            Objective::Ee => pt.t,
        };
        let pen = if self.is_relaxed() { lambda * pt.penalty() } else { 0.0 };
        -gain + pen + if self.slacks { phi * pt.slack() } else { 0.0 }
    }

    fn dl_parts(&self, k: usize) -> (Affine, Vec<(usize, f64)>, Affine) {
        // Ξ = x (linear), Ω = Σ w p² + affine
        let (m, kd, ku) = self.model.dims();
        let ch = &self.model.ch;
        let link = &self.model.link;
        let mut xi = Affine::default();
        for i in 0..m {
            if let Some(j) = self.layout.p[i * kd + k] {
                xi.terms.push((j, (link.rho_d * link.tx_antennas * ch.gamma_dl[(i, k)]).sqrt()));
            }
        }
        let mut sq = Vec::new();
        for i in 0..m {
            for kp in 0..kd {
                if let Some(j) = self.layout.p[i * kd + kp] {
                    sq.push((j, link.rho_d * ch.beta_dl[(i, k)]));
                }
            }
        }
        let mut lin = Affine::constant(1.0);
        for q in 0..ku {
            lin.terms.push((self.layout.varsigma[q], link.rho_u * ch.beta_du[(k, q)]));
        }
        (xi, sq, lin)
    }

    /// `(Ξ, Ω)` of DL UE `k` at a point.
    fn dl_xy(&self, k: usize, x: &[f64]) -> (f64, f64) {
        let (xi, sq, lin) = self.dl_parts(k);
        let y = lin.eval(x) + sq.iter().map(|&(j, w)| w * x[j] * x[j]).sum::<f64>();
        (xi.eval(x), y)
    }

    /// `−Ŝ_dl,k` as a convex expression around `xn`.
    fn dl_surrogate_expr(&self, k: usize, xn: &[f64]) -> QuadExpr {
        let (x0, y0) = self.dl_xy(k, xn);
        let c = self.se_scale();
        let mut e = QuadExpr::new();
        if x0 <= 0.0 {
            return e;
        }
        let (xi, sq, lin) = self.dl_parts(k);
        // normalize so that the expansion denominator is one
        let (xs, ys) = (xi.scaled(1.0 / y0.sqrt()), 1.0 / y0);
        let xb = x0 / y0.sqrt();
        let r = xb * xb;
        let d = r / (r + 1.0);
        e.add_square(&xs, c * d);
        for &(j, w) in &sq {
            e.add_square(&Affine::var(j), c * d * w * ys);
        }
        e.add_affine(&lin, c * d * ys);
        e.add_affine(&xs, -2.0 * c * xb);
        e.add_constant(-c * (r.ln_1p() - r));
        e
    }

    fn ul_gain(&self, q: usize) -> f64 {
        let (m, _, ku) = self.model.dims();
        (0..m)
            .filter(|&i| self.layout.alpha[i * ku + q].is_some())
            .map(|i| self.model.ch.gamma_ul[(i, q)])
            .fold(0.0, f64::max)
    }

    /// `Ψ` of UL UE `l` (linear in ω̃).
    fn ul_psi(&self, l: usize) -> Affine {
        let (m, _, ku) = self.model.dims();
        let link = &self.model.link;
        let g = self.ul_gain(l);
        let mut e = Affine::default();
        for i in 0..m {
            if let Some(j) = self.layout.omega_tilde[i * ku + l] {
                e.terms.push((j, (link.rx_antennas * link.rho_u).sqrt() * self.model.ch.gamma_ul[(i, l)] / g));
            }
        }
        e
    }

    /// Adds `w·Φ` of UL UE `l` to `e`, bounding the bilinear products around `xn`.
    fn add_ul_phi(&self, e: &mut QuadExpr, l: usize, xn: &[f64], w: f64) {
        let (m, _, ku) = self.model.dims();
        let ch = &self.model.ch;
        let link = &self.model.link;
        let lay = &self.layout;
        let g = self.ul_gain(l);
        for i in 0..m {
            let Some(ah) = lay.alpha_hat[i * ku + l] else { continue };
            let gi = w * ch.gamma_ul[(i, l)] / (g * g);
            let ahx = Affine::var(ah);
            e.add_term(ah, gi);
            for q in 0..ku {
                let sv = lay.varsigma[q];
                add_product(e, &ahx, &Affine::var(sv), xn[ah], xn[sv], gi * link.rho_u * ch.beta_ul[(i, q)]);
            }
            for src in 0..m {
                if let Some(tb) = lay.t_bar[src] {
                    add_product(e, &ahx, &Affine::var(tb), xn[ah], xn[tb], gi * link.rho_d * ch.beta_ap[(i, src)]);
                }
            }
        }
    }

    /// `(Ψ, Φ)` of UL UE `l` at a point with exact products.
    fn ul_xy(&self, l: usize, x: &[f64]) -> (f64, f64) {
        let (m, _, ku) = self.model.dims();
        let ch = &self.model.ch;
        let link = &self.model.link;
        let lay = &self.layout;
        let g = self.ul_gain(l);
        let mut phi = 0.0;
        for i in 0..m {
            let Some(ah) = lay.alpha_hat[i * ku + l] else { continue };
            let gi = ch.gamma_ul[(i, l)] / (g * g);
            let mut inner = 1.0;
            for q in 0..ku {
                inner += link.rho_u * ch.beta_ul[(i, q)] * x[lay.varsigma[q]];
            }
            for src in 0..m {
                if let Some(tb) = lay.t_bar[src] {
                    inner += link.rho_d * ch.beta_ap[(i, src)] * x[tb];
                }
            }
            phi += gi * x[ah] * inner;
        }
        (self.ul_psi(l).eval(x), phi)
    }

    /// `−Ŝ_ul,l` as a convex expression around `xn`.
    fn ul_surrogate_expr(&self, l: usize, xn: &[f64]) -> QuadExpr {
        let mut e = QuadExpr::new();
        if self.ul_gain(l) <= 0.0 {
            return e;
        }
        let (x0, y0) = self.ul_xy(l, xn);
        if x0 <= 0.0 || y0 <= 0.0 {
            return e;
        }
        let c = self.se_scale();
        let psi = self.ul_psi(l).scaled(1.0 / y0.sqrt());
        let xb = x0 / y0.sqrt();
        let r = xb * xb;
        let d = r / (r + 1.0);
        e.add_square(&psi, c * d);
        self.add_ul_phi(&mut e, l, xn, c * d / y0);
        e.add_affine(&psi, -2.0 * c * xb);
        e.add_constant(-c * (r.ln_1p() - r));
        e
    }

    /// DL surrogate `Ŝ_dl` evaluated at `at`, expanded at `around`.
    pub fn dl_surrogate(&self, around: &LiftedPoint, at: &LiftedPoint) -> Vec<f64> {
        let (xn, x) = (self.to_vector(around), self.to_vector(at));
        (0..self.kd()).map(|k| -self.dl_surrogate_expr(k, &xn).eval(&x)).collect()
    }

    /// UL surrogate `Ŝ_ul` evaluated at `at`, expanded at `around`.
    pub fn ul_surrogate(&self, around: &LiftedPoint, at: &LiftedPoint) -> Vec<f64> {
        let (xn, x) = (self.to_vector(around), self.to_vector(at));
        (0..self.ku()).map(|l| -self.ul_surrogate_expr(l, &xn).eval(&x)).collect()
    }

    /// Lifted UL SE `S̃_ul(ω̃, α̂, ς, t̄)` with exact products.
    pub fn ul_lifted_se(&self, at: &LiftedPoint) -> Vec<f64> {
        let x = self.to_vector(at);
        (0..self.ku())
            .map(|l| {
                let (p, f) = self.ul_xy(l, &x);
                if f > 0.0 {
                    self.model.link.se(p * p / f)
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// DL SE in the lifted variables (equal to the true DL SE).
    pub fn dl_lifted_se(&self, at: &LiftedPoint) -> Vec<f64> {
        let x = self.to_vector(at);
        (0..self.kd())
            .map(|k| {
                let (p, f) = self.dl_xy(k, &x);
                self.model.link.se(p * p / f)
            })
            .collect()
    }

    /// Convex restriction of the lifted problem around `pt`.
    pub fn convexify_at(&self, pt: &LiftedPoint, lambda: f64, phi: f64) -> Result<ConvexQcqp, ScaError> {
        let xn = self.to_vector(pt);
        if xn.iter().any(|v| !v.is_finite()) {
            return Err(ScaError::ExpansionSingular);
        }
        let (m, kd, ku) = self.model.dims();
        let lay = &self.layout;
        let mut prob = ConvexQcqp::new(lay.n);
        let mut bound = |s: Option<usize>, lo: f64, hi: f64| {
            if let Some(j) = s {
                prob.lower[j] = lo;
                prob.upper[j] = hi;
            }
        };
        for i in 0..m {
            bound(lay.a[i], 0.0, 1.0);
            bound(lay.t_bar[i], 0.0, 1.0);
            let cap = match self.modes {
                Modes::Relaxed => self.frozen[i].map_or(1.0, |a| a.max(0.0).sqrt().min(1.0)),
                Modes::Fixed { .. } => 1.0,
            };
            for k in 0..kd {
                bound(lay.p[i * kd + k], 0.0, cap);
            }
            for q in 0..ku {
                let j = i * ku + q;
                for s in [lay.alpha[j], lay.omega[j], lay.omega_tilde[j], lay.alpha_tilde[j], lay.alpha_hat[j]] {
                    bound(s, 0.0, 1.0);
                }
            }
        }
        for q in 0..ku {
            bound(Some(lay.varsigma[q]), 0.0, 1.0);
        }
        for (k, &j) in lay.q_dl.iter().enumerate() {
            let lo = if self.slacks { 0.0 } else { self.qos_dl() };
            bound(Some(j), lo, f64::INFINITY);
            bound(lay.z_dl[k], 0.0, f64::INFINITY);
        }
        for (l, &j) in lay.q_ul.iter().enumerate() {
            let lo = if self.slacks { 0.0 } else { self.qos_ul() };
            bound(Some(j), lo, f64::INFINITY);
            bound(lay.z_ul[l], 0.0, f64::INFINITY);
        }
        if let (Some(t), Some(ph)) = (lay.t, lay.p_hat) {
            prob.lower[t] = 0.0;
            prob.lower[ph] = 1e-6;
        }

        let mut cons = Vec::new();
        // per-AP power and mode coupling
        for i in 0..m {
            let ps: Vec<usize> = (0..kd).filter_map(|k| lay.p[i * kd + k]).collect();
            if ps.is_empty() {
                continue;
            }
            let mut e = QuadExpr::new();
            for &j in &ps {
                e.add_square(&Affine::var(j), 1.0);
            }
            e.add_constant(-1.0);
            cons.push(e.le_zero());
            if let Some(aj) = lay.a[i] {
                for &j in &ps {
                    let mut c = QuadExpr::new();
                    c.add_square(&Affine::var(j), 1.0).add_term(aj, -1.0);
                    cons.push(c.le_zero());
                }
            }
            if let Some(tb) = lay.t_bar[i] {
                let mut c = QuadExpr::new();
                for &j in &ps {
                    c.add_square(&Affine::var(j), 1.0);
                }
                c.add_term(tb, -1.0);
                cons.push(c.le_zero());
            }
        }
        // UL liftings
        for i in 0..m {
            let b = self.b_expr(i);
            let bn = b.eval(&xn);
            for q in 0..ku {
                let j = i * ku + q;
                let (Some(al), Some(om), Some(ot), Some(at), Some(ah)) =
                    (lay.alpha[j], lay.omega[j], lay.omega_tilde[j], lay.alpha_tilde[j], lay.alpha_hat[j])
                else {
                    continue;
                };
                let sv = lay.varsigma[q];
                let mut c = QuadExpr::new();
                c.add_square(&Affine::var(al), 1.0).add_term(at, -1.0);
                cons.push(c.le_zero());
                let mut c = QuadExpr::new();
                c.add_square(&Affine::var(om), 1.0);
                add_neg_product(&mut c, &b, &Affine::var(sv), bn, xn[sv], 1.0);
                cons.push(c.le_zero());
                let mut c = QuadExpr::new();
                c.add_term(ot, 1.0);
                add_neg_product(&mut c, &Affine::var(om), &Affine::var(al), xn[om], xn[al], 1.0);
                cons.push(c.le_zero());
                let mut c = QuadExpr::new();
                add_product(&mut c, &b, &Affine::var(at), bn, xn[at], 1.0);
                c.add_term(ah, -1.0);
                cons.push(c.le_zero());
            }
        }
        // SE surrogates and QoS
        for k in 0..kd {
            let mut e = self.dl_surrogate_expr(k, &xn);
            e.add_term(lay.q_dl[k], 1.0);
            cons.push(e.le_zero());
            if let Some(z) = lay.z_dl[k] {
                let mut c = QuadExpr::new();
                c.add_term(lay.q_dl[k], -1.0).add_term(z, -1.0).add_constant(self.qos_dl());
                cons.push(c.le_zero());
            }
        }
        for l in 0..ku {
            let mut e = self.ul_surrogate_expr(l, &xn);
            e.add_term(lay.q_ul[l], 1.0);
            cons.push(e.le_zero());
            if let Some(z) = lay.z_ul[l] {
                let mut c = QuadExpr::new();
                c.add_term(lay.q_ul[l], -1.0).add_term(z, -1.0).add_constant(self.qos_ul());
                cons.push(c.le_zero());
            }
        }
        // EE epigraph
        if let (Some(t), Some(ph)) = (lay.t, lay.p_hat) {
            let mut c = QuadExpr::new();
            add_product(&mut c, &Affine::var(t), &Affine::var(ph), xn[t], xn[ph], 1.0);
            for &j in lay.q_dl.iter().chain(&lay.q_ul) {
                c.add_term(j, -1.0);
            }
            cons.push(c.le_zero());
            let pm = self.model.power;
            let s = 1.0 / self.power_ref;
            let mut c = QuadExpr::new();
            for i in 0..m {
                for k in 0..kd {
                    if let Some(j) = lay.p[i * kd + k] {
                        c.add_square(&Affine::var(j), s * pm.per_utilization);
                    }
                }
                c.add_affine(&self.a_expr(i), s * pm.per_dl_ap);
                c.add_affine(&self.b_expr(i), s * pm.per_ul_ap);
            }
            for q in 0..ku {
                c.add_term(lay.varsigma[q], s * pm.per_ul_power);
            }
            c.add_constant(s * pm.constant).add_term(ph, -1.0);
            cons.push(c.le_zero());
        }
        prob.constraints = cons;

        // objective
        let mut obj = vec![0.0; lay.n];
        match (self.objective, lay.t) {
            (Objective::Ee, Some(t)) => obj[t] = -1.0,
            _ => {
                for &j in lay.q_dl.iter().chain(&lay.q_ul) {
                    obj[j] = -1.0;
                }
            }
        }
        for i in 0..m {
            if let Some(j) = lay.a[i] {
                // linearized a − a² + b − b² with b = 1 − a
                obj[j] += lambda * (2.0 - 4.0 * xn[j]);
            }
        }
        for &j in lay.z_dl.iter().chain(&lay.z_ul).flatten() {
            obj[j] += phi;
        }
        prob.objective = obj;
        Ok(prob)
    }

    /// Variable and constraint counts of the compiled subproblem around `pt`.
    pub fn size(&self, pt: &LiftedPoint) -> SubproblemSize {
        let p = self.convexify_at(pt, 1.0, 1.0).expect("finite point");
        let quadratic = p.constraints.iter().filter(|c| !c.factor().is_empty()).count();
        let bounds = p.lower.iter().chain(&p.upper).filter(|v| v.is_finite()).count();
        SubproblemSize { variables: p.n, linear: p.constraints.len() - quadratic + bounds, quadratic }
    }

    /// Random starting point satisfying every constraint except QoS.
    pub fn initial_point(&self, seed: u64, spread: f64) -> LiftedPoint {
        let (m, kd, ku) = self.model.dims();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..m)
            .map(|i| match self.fixed_a(i) {
                Some(a) => a,
                None if spread > 0.0 => rng.random_range(0.5 - spread..0.5 + spread),
                None => 0.5,
            })
            .collect();
        let b: Vec<f64> = (0..m).map(|i| self.fixed_b(i).unwrap_or(1.0 - a[i])).collect();
        let share = 1.0 / kd.max(1) as f64;
        let p = Mat::from_fn(m, kd, |i, k| {
            if self.layout.p[i * kd + k].is_some() {
                a[i].min(share).sqrt()
            } else {
                0.0
            }
        });
        let raw = LiftedPoint {
            a,
            b,
            p,
            varsigma: vec![1.0; ku],
            alpha: Mat::filled(m, ku, 1.0),
            omega: Mat::zeros(m, ku),
            omega_tilde: Mat::zeros(m, ku),
            alpha_tilde: Mat::zeros(m, ku),
            alpha_hat: Mat::zeros(m, ku),
            t_bar: vec![0.0; m],
            q_dl: vec![0.0; kd],
            q_ul: vec![0.0; ku],
            z_dl: vec![0.0; kd],
            z_ul: vec![0.0; ku],
            t: 0.0,
            p_hat: 0.0,
        };
        self.tighten(&raw)
    }

    /// Point for this problem built from design variables.
    pub fn point_from_design(&self, v: &DesignVariables) -> LiftedPoint {
        let (m, kd, ku) = self.model.dims();
        let n = self.model.link.tx_antennas;
        let raw = LiftedPoint {
            a: v.a.clone(),
            b: v.b.clone(),
            p: Mat::from_fn(m, kd, |i, k| (n * self.model.ch.gamma_dl[(i, k)]).sqrt() * v.theta[(i, k)]),
            varsigma: v.varsigma.clone(),
            alpha: v.alpha.clone(),
            omega: Mat::zeros(m, ku),
            omega_tilde: Mat::zeros(m, ku),
            alpha_tilde: Mat::zeros(m, ku),
            alpha_hat: Mat::zeros(m, ku),
            t_bar: vec![0.0; m],
            q_dl: vec![0.0; kd],
            q_ul: vec![0.0; ku],
            z_dl: vec![0.0; kd],
            z_ul: vec![0.0; ku],
            t: 0.0,
            p_hat: 0.0,
        };
        self.tighten(&raw)
    }
}

/// Distance from a binary value below which a relaxed `a` stops moving.
pub const FREEZE_TOL: f64 = 1e-5;

/// One outer SCA iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    pub sum_se: f64,
    pub binary_gap: f64,
    pub slack: f64,
    pub lambda: f64,
    pub status: String,
    pub solver_iters: usize,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaRun {
    pub point: LiftedPoint,
    pub trace: Vec<IterRecord>,
    pub converged: bool,
    pub lambda: f64,
}

/// Runs SCA from `init` (which is tightened first).
pub fn run_sca(problem: &LiftedProblem, init: &LiftedPoint, cfg: &ScaConfig) -> Result<ScaRun, ScaError> {
    let tol = cfg.tolerances();
    let mut owned = problem.clone();
    let mut problem = &owned;
    let mut lambda = cfg.lambda;
    let mut doublings = 0;
    let mut pt = problem.tighten(init);
    let mut obj = problem.penalized_objective(&pt, lambda, cfg.phi);
    let mut trace = vec![record(problem, 0, &pt, obj, lambda, "Initial", 0, true)];
    let mut failures = 0;
    let mut converged = false;
    for it in 1..=cfg.max_outer_iters {
        let sub = problem.convexify_at(&pt, lambda, cfg.phi)?;
        let warm = problem.to_vector(&pt);
        let sol = solve(&sub, Some(&warm), &tol)?;
        let status = format!("{:?}", sol.status);
        let usable = matches!(sol.status, Status::Optimal | Status::MaxIter) && sol.x.iter().all(|v| v.is_finite());
        if sol.status == Status::Optimal {
            failures = 0;
        } else {
            failures += 1;
            if failures >= 2 {
                if trace.iter().skip(1).any(|r| r.accepted) {
                    break;
                }
                return Err(ScaError::Stalled(it));
            }
        }
        let cand = if usable { Some(problem.tighten(&problem.from_vector(&sol.x))) } else { None };
        let cand_obj = cand.as_ref().map(|c| problem.penalized_objective(c, lambda, cfg.phi));
        let accepted = matches!(cand_obj, Some(v) if v <= obj + 1e-12 * obj.abs().max(1.0));
        if accepted {
            let (c, v) = (cand.unwrap(), cand_obj.unwrap());
            let change = (obj - v).abs() / obj.abs().max(1.0);
            pt = c;
            obj = v;
            trace.push(record(problem, it, &pt, obj, lambda, &status, sol.iterations, true));
            if let Some(p) = problem.freeze_near_binary(&pt, FREEZE_TOL) {
                owned = p;
                problem = &owned;
            }
            if change < cfg.rel_obj_tol {
                if problem.is_relaxed() && pt.binary_gap() > cfg.binary_gap_tol && doublings < cfg.max_lambda_doublings {
                    lambda *= 2.0;
                    doublings += 1;
                    obj = problem.penalized_objective(&pt, lambda, cfg.phi);
                    continue;
                }
                converged = true;
                break;
            }
        } else {
            trace.push(record(problem, it, &pt, obj, lambda, &status, sol.iterations, false));
            if sol.status == Status::Optimal {
                // no descent from an exact solve: the iterate is stationary up to solver accuracy
                converged = true;
                break;
            }
        }
    }
    Ok(ScaRun { point: pt, trace, converged, lambda })
}

#[allow(clippy::too_many_arguments)]
fn record(p: &LiftedProblem, iter: usize, pt: &LiftedPoint, obj: f64, lambda: f64, status: &str, solver_iters: usize, accepted: bool) -> IterRecord {
    IterRecord {
        iter,
        objective: obj,
        sum_se: pt.q_dl.iter().chain(&pt.q_ul).sum(),
        binary_gap: if p.is_relaxed() { pt.binary_gap() } else { 0.0 },
        slack: pt.slack(),
        lambda,
        status: status.to_string(),
        solver_iters,
        accepted,
    }
}

/// Relaxed-mode problem of a scheme. Each AP's own DL signal is coupled into its
/// UL receiver with gain `cfg.self_coupling`; the term vanishes whenever
/// `a_m b_m = 0`, so binary points keep their values.
pub fn relaxed_problem(model: &SchemeModel, objective: Objective, cfg: &ScaConfig) -> LiftedProblem {
    let mut m = model.clone();
    for i in 0..m.ch.num_aps() {
        let d = m.ch.beta_ap[(i, i)].max(cfg.self_coupling);
        m.ch.beta_ap[(i, i)] = d;
    }
    LiftedProblem::new(m, objective, Modes::Relaxed, cfg.restoration)
}

/// Algorithm 1: SE maximization with relaxed modes from `init`.
pub fn run_algorithm1(model: &SchemeModel, init: &LiftedPoint, cfg: &ScaConfig) -> Result<ScaRun, ScaError> {
    run_sca(&relaxed_problem(model, Objective::Se, cfg), init, cfg)
}

/// Algorithm 2: EE (full-backhaul bound) maximization with relaxed modes from `init`.
pub fn run_algorithm2(model: &SchemeModel, init: &LiftedPoint, cfg: &ScaConfig) -> Result<ScaRun, ScaError> {
    run_sca(&relaxed_problem(model, Objective::Ee, cfg), init, cfg)
}

/// Rounds relaxed modes; ties at one half go to DL iff the AP's best DL estimate
/// variance exceeds its best UL one.
pub fn round_modes(model: &SchemeModel, a: &[f64]) -> Vec<f64> {
    let (_, kd, ku) = model.dims();
    a.iter()
        .enumerate()
        .map(|(m, &v)| {
            if (v - 0.5).abs() < 1e-12 {
                let dl = (0..kd).map(|k| model.ch.gamma_dl[(m, k)]).fold(0.0, f64::max);
                let ul = (0..ku).map(|l| model.ch.gamma_ul[(m, l)]).fold(0.0, f64::max);
                if dl > ul {
                    1.0
                } else {
                    0.0
                }
            } else if v > 0.5 {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Rounded modes where each direction with UEs keeps at least one AP: if
/// rounding empties a direction, the AP with the largest relaxed share of it
/// is moved over.
pub fn round_with_coverage(model: &SchemeModel, a: &[f64]) -> Vec<f64> {
    let (m, kd, ku) = model.dims();
    let mut r = round_modes(model, a);
    let pick = |key: &dyn Fn(usize) -> f64| (0..m).max_by(|&i, &j| key(i).total_cmp(&key(j)));
    if kd > 0 && r.iter().all(|&v| v == 0.0) {
        if let Some(i) = pick(&|i| a[i]) {
            r[i] = 1.0;
        }
    }
    if ku > 0 && r.iter().all(|&v| v == 1.0) {
        if let Some(i) = pick(&|i| -a[i]) {
            r[i] = 0.0;
        }
    }
    r
}

/// Outcome of a full optimization of one scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaOutcome {
    pub result: SchemeResult,
    pub relaxed: Option<ScaRun>,
    pub polish: ScaRun,
    /// `C(a, b) / (M K)` at the relaxed solution.
    pub penalty_ratio: f64,
    pub binary_gap: f64,
    /// Set when the relaxed modes were not within the gap tolerance before rounding.
    pub rounding_flagged: bool,
    pub slack: f64,
}

/// Rounds the relaxed modes, zeroes DL power at UL APs and re-optimizes the
/// continuous variables with the modes fixed.
pub fn round_and_repair(
    model: &SchemeModel,
    objective: Objective,
    relaxed: &LiftedPoint,
    cfg: &ScaConfig,
) -> Result<(LiftedProblem, ScaRun), ScaError> {
    let a = round_with_coverage(model, &relaxed.a);
    let b: Vec<f64> = a.iter().map(|v| 1.0 - v).collect();
    optimize_fixed(model, objective, Modes::Fixed { a, b }, Some(relaxed), cfg, 0)
}

/// SCA over the continuous variables with constant modes, started from `warm`
/// when given.
pub fn optimize_fixed(
    model: &SchemeModel,
    objective: Objective,
    modes: Modes,
    warm: Option<&LiftedPoint>,
    cfg: &ScaConfig,
    seed: u64,
) -> Result<(LiftedProblem, ScaRun), ScaError> {
    let problem = LiftedProblem::new(model.clone(), objective, modes, cfg.restoration);
    let init = match warm {
        Some(w) => {
            let mut v = problem.design_variables(w);
            if let Modes::Fixed { a, b } = &problem.modes {
                v.a = a.clone();
                v.b = b.clone();
            }
            let mut pt = problem.point_from_design(&v);
            if pt.q_dl.iter().chain(&pt.q_ul).all(|&q| q == 0.0) {
                pt = problem.initial_point(seed, 0.0);
            }
            pt
        }
        None => problem.initial_point(seed, 0.0),
    };
    let run = run_sca(&problem, &init, cfg)?;
    Ok((problem, run))
}

fn finish(
    model: &SchemeModel,
    problem: &LiftedProblem,
    polish: ScaRun,
    relaxed: Option<ScaRun>,
    cfg: &ScaConfig,
) -> ScaOutcome {
    let (m, kd, ku) = model.dims();
    let vars = problem.design_variables(&polish.point);
    let mut result = model.evaluate(&vars);
    let slack = polish.point.slack();
    result.feasible = result.feasible && slack < cfg.slack_threshold;
    let (penalty_ratio, binary_gap) = relaxed
        .as_ref()
        .map(|r| (r.point.penalty() / (m * kd.max(ku).max(1)) as f64, r.point.binary_gap()))
        .unwrap_or((0.0, 0.0));
    ScaOutcome {
        result,
        rounding_flagged: binary_gap > cfg.binary_gap_tol,
        relaxed,
        polish,
        penalty_ratio,
        binary_gap,
        slack,
    }
}

fn start_seed(seed: u64, start: usize) -> u64 {
    seed.wrapping_mul(0x2545_f491_4f6c_dd1d).wrapping_add(start as u64)
}

fn score(objective: Objective, r: &SchemeResult) -> (bool, f64) {
    let v = match objective {
        Objective::Se => r.sum_se,
        Objective::Ee => r.ee,
    };
    (r.feasible, v)
}

/// Full pipeline: relaxed SCA with QoS slacks, rounding, fixed-mode polish and
/// re-evaluation, repeated over `cfg.starts` initial points (the first at
/// `a = 0.5`). Feasible outcomes beat infeasible ones, then the objective
/// decides. HD and FD skip the relaxed phase.
pub fn run_with_restoration(
    model: &SchemeModel,
    objective: Objective,
    cfg: &ScaConfig,
    seed: u64,
) -> Result<ScaOutcome, ScaError> {
    if let Some(modes) = model.native_modes() {
        let (problem, run) = optimize_fixed(model, objective, modes, None, cfg, seed)?;
        return Ok(finish(model, &problem, run, None, cfg));
    }
    let relaxed_problem = relaxed_problem(model, objective, cfg);
    let mut best: Option<ScaOutcome> = None;
    let mut last_err = None;
    for start in 0..cfg.starts.max(1) {
        let spread = if start == 0 { 0.0 } else { cfg.init_spread };
        let init = relaxed_problem.initial_point(start_seed(seed, start), spread);
        let attempt = run_sca(&relaxed_problem, &init, cfg).and_then(|relaxed| {
            let (problem, polish) = round_and_repair(model, objective, &relaxed.point, cfg)?;
            Ok(finish(model, &problem, polish, Some(relaxed), cfg))
        });
        match attempt {
            Ok(out) => {
                if best.as_ref().is_none_or(|b| score(objective, &out.result) > score(objective, &b.result)) {
                    best = Some(out);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap())
}

/// Optimizes continuous variables for given binary modes and reports the result.
pub fn run_fixed_modes(
    model: &SchemeModel,
    objective: Objective,
    a: &[f64],
    b: &[f64],
    cfg: &ScaConfig,
    seed: u64,
) -> Result<ScaOutcome, ScaError> {
    let modes = Modes::Fixed { a: a.to_vec(), b: b.to_vec() };
    let (problem, run) = optimize_fixed(model, objective, modes, None, cfg, seed)?;
    Ok(finish(model, &problem, run, None, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgen::realize;
    use proptest::prelude::*;

    fn model(m: usize, k: usize, seed: u64) -> SchemeModel {
        let cfg = SystemConfig::with_sizes(m, k, k);
        let ch = realize(&cfg, seed).unwrap().1;
        SchemeModel::nafd(&ch, &cfg, &PowerParams::default())
    }

    proptest! {
        #[test]
        fn quarter_square_bounds(x in 0.0..3.0f64, y in 0.0..3.0f64, xn in 0.0..3.0f64, yn in 0.0..3.0f64) {
            prop_assert!(product_upper_bound(x, y, xn, yn) >= x * y - 1e-12);
            prop_assert!(neg_product_upper_bound(x, y, xn, yn) >= -x * y - 1e-12);
            prop_assert!((product_upper_bound(xn, yn, xn, yn) - xn * yn).abs() < 1e-12);
            prop_assert!((neg_product_upper_bound(xn, yn, xn, yn) + xn * yn).abs() < 1e-12);
        }

        #[test]
        fn balanced_products_bound_and_touch(x in 0.0..3.0f64, y in 0.0..3.0f64, xn in 0.0..3.0f64, yn in 0.0..3.0f64, w in 0.1..5.0f64) {
            let (vx, vy) = (Affine::var(0), Affine::var(1));
            let mut up = QuadExpr::new();
            add_product(&mut up, &vx, &vy, xn, yn, w);
            let mut down = QuadExpr::new();
            add_neg_product(&mut down, &vx, &vy, xn, yn, w);
            prop_assert!(up.eval(&[x, y]) >= w * x * y - 1e-10);
            prop_assert!(down.eval(&[x, y]) >= -w * x * y - 1e-10);
            prop_assert!((up.eval(&[xn, yn]) - w * xn * yn).abs() < 1e-10);
            prop_assert!((down.eval(&[xn, yn]) + w * xn * yn).abs() < 1e-10);
        }

        #[test]
        fn log_ratio_minorant_is_tight_below(x in 0.01..3.0f64, y in 0.01..3.0f64, xn in 0.01..3.0f64, yn in 0.01..3.0f64) {
            prop_assert!(log_ratio_minorant(x, y, xn, yn) <= (x * x / y).ln_1p() + 1e-12);
            prop_assert!((log_ratio_minorant(xn, yn, xn, yn) - (xn * xn / yn).ln_1p()).abs() < 1e-12);
        }
    }

    #[test]
    fn products_with_a_constant_factor_are_exact() {
        let mut e = QuadExpr::new();
        add_product(&mut e, &Affine::constant(0.3), &Affine::var(0), 0.3, 1.0, 2.0);
        assert!((e.eval(&[0.7]) - 2.0 * 0.3 * 0.7).abs() < 1e-15);
    }

    #[test]
    fn tightened_lifting_reproduces_true_se() {
        let p = relaxed_problem(&model(4, 2, 1), Objective::Se, &ScaConfig::new(Objective::Se, 2, 2));
        for seed in 0..5 {
            let pt = p.initial_point(seed, 0.4);
            let (dl, ul) = p.true_se(&pt);
            for (a, b) in p.ul_lifted_se(&pt).iter().zip(&ul) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
            for (a, b) in p.dl_lifted_se(&pt).iter().zip(&dl) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn loose_auxiliaries_only_lower_the_lifted_ul_se() {
        let p = relaxed_problem(&model(4, 2, 2), Objective::Se, &ScaConfig::new(Objective::Se, 2, 2));
        let pt = p.initial_point(3, 0.3);
        let exact = p.ul_lifted_se(&pt);
        let mut loose = pt.clone();
        loose.omega_tilde = pt.omega_tilde.map(|v| 0.9 * v);
        loose.alpha_hat = pt.alpha_hat.map(|v| (1.1 * v).min(1.0));
        loose.t_bar = pt.t_bar.iter().map(|v| (1.2 * v).min(1.0)).collect();
        for (l, e) in p.ul_lifted_se(&loose).iter().zip(&exact) {
            assert!(l <= e);
        }
    }

    #[test]
    fn expansion_point_is_feasible_for_its_restriction() {
        for objective in [Objective::Se, Objective::Ee] {
            let p = relaxed_problem(&model(5, 2, 4), objective, &ScaConfig::new(objective, 2, 2));
            let pt = p.initial_point(1, 0.2);
            let sub = p.convexify_at(&pt, 1.0, 10.0).unwrap();
            let x = p.to_vector(&pt);
            for c in &sub.constraints {
                assert!(c.value(&x) <= 1e-9, "{}", c.value(&x));
            }
            for j in 0..x.len() {
                assert!(x[j] >= sub.lower[j] - 1e-12 && x[j] <= sub.upper[j] + 1e-12);
            }
        }
    }

    #[test]
    fn vector_round_trip() {
        let p = relaxed_problem(&model(3, 2, 5), Objective::Ee, &ScaConfig::new(Objective::Ee, 2, 2));
        let pt = p.initial_point(2, 0.3);
        assert_eq!(p.to_vector(&p.from_vector(&p.to_vector(&pt))), p.to_vector(&pt));
    }

    #[test]
    fn sca_trace_is_monotone_and_deterministic() {
        let m = model(4, 1, 6);
        let cfg = ScaConfig::new(Objective::Se, 1, 1);
        let init = relaxed_problem(&m, Objective::Se, &cfg).initial_point(0, 0.0);
        let r1 = run_algorithm1(&m, &init, &cfg).unwrap();
        let r2 = run_algorithm1(&m, &init, &cfg).unwrap();
        assert_eq!(r1, r2);
        for w in r1.trace.windows(2) {
            if w[0].lambda == w[1].lambda {
                assert!(w[1].objective <= w[0].objective + 1e-10);
            }
        }
    }

    #[test]
    fn single_ap_network() {
        let m = model(1, 1, 7);
        let cfg = ScaConfig::new(Objective::Se, 1, 1);
        let out = run_with_restoration(&m, Objective::Se, &cfg, 7).unwrap();
        let a = out.result.vars.a[0];
        assert!(a == 0.0 || a == 1.0);
        assert!(out.result.sum_se >= 0.0);
        // one AP cannot serve both directions
        assert!(!out.result.feasible);
    }

    #[test]
    fn rounding_keeps_both_directions_served() {
        let m = model(3, 1, 8);
        assert_eq!(round_modes(&m, &[0.2, 0.7, 0.4]), vec![0.0, 1.0, 0.0]);
        assert_eq!(round_with_coverage(&m, &[0.2, 0.3, 0.4]), vec![0.0, 0.0, 1.0]);
        assert_eq!(round_with_coverage(&m, &[0.6, 0.9, 0.8]), vec![0.0, 1.0, 1.0]);
    }

    #[test]
    fn reference_counts_small_case() {
        let c = reference_counts(1, 1);
        assert_eq!((c.variables, c.linear, c.quadratic), (16, 20, 12));
    }

    #[test]
    fn fixed_modes_skip_mode_variables() {
        let m = model(3, 1, 9);
        let cfg = ScaConfig::new(Objective::Se, 1, 1);
        let out = run_fixed_modes(&m, Objective::Se, &[1.0, 0.0, 1.0], &[0.0, 1.0, 0.0], &cfg, 9).unwrap();
        assert_eq!(out.result.vars.a, vec![1.0, 0.0, 1.0]);
        assert!(out.result.vars.theta.row(1).iter().all(|&t| t == 0.0));
        assert!(out.relaxed.is_none());
    }
}
