use nalgebra::{DMatrix, DVector};

use crate::certify::residuals;
use crate::problem::ConvexQcqp;
use crate::SolveError;

/// Termination tolerances. Primal violations are row-normalized, KKT measures are
/// relative to `1 + ‖c‖∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub feas_tol: f64,
    pub kkt_tol: f64,
    pub max_iter: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { feas_tol: 1e-7, kkt_tol: 1e-6, max_iter: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimalSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: Status,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// One multiplier per constraint.
    pub duals: Vec<f64>,
    pub lower_duals: Vec<f64>,
    pub upper_duals: Vec<f64>,
}

const DIVERGENCE_NORM: f64 = 1e10;
const STEP_FRACTION: f64 = 0.99;

struct Row {
    support: Vec<usize>,
    lin: Vec<f64>,
    quad: Option<Vec<f64>>,
    rhs: f64,
    scale: f64,
    origin: usize,
}

impl Row {
    fn gather(&self, x: &[f64], buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend(self.support.iter().map(|&j| x[j]));
    }

    /// Value and local gradient at the gathered point `xl`.
    fn eval(&self, xl: &[f64], grad: &mut [f64]) -> f64 {
        let k = xl.len();
        let mut v = -self.rhs;
        grad.copy_from_slice(&self.lin);
        for a in 0..k {
            v += self.lin[a] * xl[a];
        }
        if let Some(q) = &self.quad {
            for a in 0..k {
                let qa = &q[a * k..(a + 1) * k];
                let mut t = 0.0;
                for b in 0..k {
                    t += qa[b] * xl[b];
                }
                v += t * xl[a];
                grad[a] += 2.0 * t;
            }
        }
        v
    }

    fn curvature(&self, dl: &[f64]) -> f64 {
        let Some(q) = &self.quad else { return 0.0 };
        let k = dl.len();
        let mut v = 0.0;
        for a in 0..k {
            let mut t = 0.0;
            for b in 0..k {
                t += q[a * k + b] * dl[b];
            }
            v += t * dl[a];
        }
        v
    }
}

struct Reduced {
    n: usize,
    c: Vec<f64>,
    rows: Vec<Row>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

struct Presolved {
    red: Reduced,
    free: Vec<usize>,
    x_full: Vec<f64>,
    obj_scale: f64,
}

enum PresolveOutcome {
    Ready(Presolved),
    Infeasible(Vec<f64>),
    Unbounded(Vec<f64>),
}

fn presolve(p: &ConvexQcqp, tol: &Tolerances) -> PresolveOutcome {
    let n = p.n;
    let mut x_full = vec![0.0; n];
    let mut map = vec![usize::MAX; n];
    let mut free = Vec::new();
    for j in 0..n {
        if p.lower[j].is_finite() && p.upper[j] - p.lower[j] <= 1e-13 * (1.0 + p.lower[j].abs()) {
            x_full[j] = 0.5 * (p.lower[j] + p.upper[j]);
        } else {
            map[j] = free.len();
            free.push(j);
        }
    }
    let obj_scale = p.objective.iter().fold(0.0f64, |m, c| m.max(c.abs())).max(1.0);
    let nr = free.len();
    let c: Vec<f64> = free.iter().map(|&j| p.objective[j] / obj_scale).collect();
    let lower: Vec<f64> = free.iter().map(|&j| p.lower[j]).collect();
    let upper: Vec<f64> = free.iter().map(|&j| p.upper[j]).collect();

    let mut rows = Vec::new();
    let mut touched = vec![false; nr];
    for (r, con) in p.constraints.iter().enumerate() {
        let mut rhs = con.rhs();
        let mut lin_pairs: Vec<(usize, f64)> = Vec::new();
        for (j, v) in con.linear_part().iter() {
            if map[j] == usize::MAX {
                rhs -= v * x_full[j];
            } else {
                lin_pairs.push((map[j], v));
            }
        }
        let mut factor_rows: Vec<Vec<(usize, f64)>> = Vec::new();
        for f in con.factor() {
            let mut off = 0.0;
            let mut fr = Vec::new();
            for (j, v) in f.iter() {
                if map[j] == usize::MAX {
                    off += v * x_full[j];
                } else {
                    fr.push((map[j], v));
                }
            }
            for &(j, v) in &fr {
                lin_pairs.push((j, 2.0 * off * v));
            }
            rhs -= off * off;
            if !fr.is_empty() {
                factor_rows.push(fr);
            }
        }
        let mut support: Vec<usize> = lin_pairs.iter().map(|&(j, _)| j).collect();
        for fr in &factor_rows {
            support.extend(fr.iter().map(|&(j, _)| j));
        }
        support.sort_unstable();
        support.dedup();
        let k = support.len();
        let local = |j: usize| support.binary_search(&j).unwrap();
        let mut lin = vec![0.0; k];
        for &(j, v) in &lin_pairs {
            lin[local(j)] += v;
        }
        let quad = if factor_rows.is_empty() {
            None
        } else {
            let mut q = vec![0.0; k * k];
            for fr in &factor_rows {
                for &(ja, va) in fr {
                    let a = local(ja);
                    for &(jb, vb) in fr {
                        q[a * k + local(jb)] += va * vb;
                    }
                }
            }
            Some(q)
        };
        let lin_max = lin.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let quad_max = quad.as_ref().map_or(0.0, |q| q.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        if lin_max == 0.0 && quad_max == 0.0 {
            if -rhs > tol.feas_tol * con.scale() {
                return PresolveOutcome::Infeasible(x_full);
            }
            continue;
        }
        let scale = lin_max.max(quad_max).max(1.0);
        for &j in &support {
            touched[j] = true;
        }
        rows.push(Row {
            support,
            lin: lin.iter().map(|v| v / scale).collect(),
            quad: quad.map(|q| q.iter().map(|v| v / scale).collect()),
            rhs: rhs / scale,
            scale,
            origin: r,
        });
    }
    for j in 0..nr {
        if !touched[j]
            && ((c[j] < 0.0 && upper[j] == f64::INFINITY) || (c[j] > 0.0 && lower[j] == f64::NEG_INFINITY))
        {
            return PresolveOutcome::Unbounded(x_full);
        }
    }
    PresolveOutcome::Ready(Presolved { red: Reduced { n: nr, c, rows, lower, upper }, free, x_full, obj_scale })
}

struct IpmState {
    x: Vec<f64>,
    z: Vec<f64>,
    zl: Vec<f64>,
    zu: Vec<f64>,
}

enum IpmEnd {
    Converged,
    Diverged,
    Stuck,
}

struct IpmResult {
    state: IpmState,
    end: IpmEnd,
    iterations: usize,
    kkt: f64,
}

fn interior_start(red: &Reduced, x0: &[f64]) -> Vec<f64> {
    (0..red.n)
        .map(|j| {
            let (l, u) = (red.lower[j], red.upper[j]);
            let mut v = x0[j];
            if !v.is_finite() {
                v = 0.0;
            }
            match (l.is_finite(), u.is_finite()) {
                (true, true) => {
                    let d = 1e-2 * (u - l).min(1.0);
                    v.clamp(l + d, u - d)
                }
                (true, false) => v.max(l + 1e-2),
                (false, true) => v.min(u - 1e-2),
                (false, false) => v,
            }
        })
        .collect()
}

/// Mehrotra predictor-corrector on the scaled problem. `accept` is consulted whenever the
/// scaled measures look converged and has the final say.
fn interior_point(
    red: &Reduced,
    x0: &[f64],
    tol: &Tolerances,
    max_iter: usize,
    accept: &mut dyn FnMut(&IpmState) -> Option<f64>,
) -> Result<IpmResult, SolveError> {
    let n = red.n;
    let m = red.rows.len();
    let lo: Vec<usize> = (0..n).filter(|&j| red.lower[j].is_finite()).collect();
    let up: Vec<usize> = (0..n).filter(|&j| red.upper[j].is_finite()).collect();
    let npairs = (m + lo.len() + up.len()).max(1) as f64;

    let offsets: Vec<usize> = red
        .rows
        .iter()
        .scan(0, |acc, r| {
            let o = *acc;
            *acc += r.support.len();
            Some(o)
        })
        .collect();
    let total_support: usize = red.rows.iter().map(|r| r.support.len()).sum();
    let mut grads = vec![0.0; total_support];
    let mut fvals = vec![0.0; m];
    let mut xl = Vec::new();
    let mut dl = Vec::new();

    let mut x = interior_start(red, x0);
    let eval_rows = |x: &[f64], fvals: &mut [f64], grads: &mut [f64], xl: &mut Vec<f64>| {
        for (r, row) in red.rows.iter().enumerate() {
            row.gather(x, xl);
            let k = row.support.len();
            fvals[r] = row.eval(xl, &mut grads[offsets[r]..offsets[r] + k]);
        }
    };
    eval_rows(&x, &mut fvals, &mut grads, &mut xl);
    let mut s: Vec<f64> = fvals.iter().map(|f| (-f).max(1.0)).collect();
    let mut z: Vec<f64> = s.iter().map(|s| 1.0 / s).collect();
    let mut zl = vec![0.0; n];
    let mut zu = vec![0.0; n];
    for &j in &lo {
        zl[j] = 1.0 / (x[j] - red.lower[j]);
    }
    for &j in &up {
        zu[j] = 1.0 / (red.upper[j] - x[j]);
    }

    let cnorm = red.c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let feas_in = 0.5 * tol.feas_tol;
    let kkt_in = 0.5 * tol.kkt_tol;
    let mut rd = vec![0.0; n];
    let mut rp = vec![0.0; m];
    let mut kmat = DMatrix::<f64>::zeros(n, n);
    let mut last_kkt = f64::INFINITY;
    let mut small_steps = 0usize;
    let mut best_merit = f64::INFINITY;
    let mut since_best = 0usize;

    for it in 0..max_iter {
        for r in 0..m {
            rp[r] = fvals[r] + s[r];
        }
        rd.copy_from_slice(&red.c);
        for (r, row) in red.rows.iter().enumerate() {
            let g = &grads[offsets[r]..offsets[r] + row.support.len()];
            for (a, &j) in row.support.iter().enumerate() {
                rd[j] += z[r] * g[a];
            }
        }
        for &j in &lo {
            rd[j] -= zl[j];
        }
        for &j in &up {
            rd[j] += zu[j];
        }
        let mut comp_sum = 0.0;
        let mut comp_max = 0.0f64;
        for r in 0..m {
            comp_sum += s[r] * z[r];
            comp_max = comp_max.max(s[r] * z[r]);
        }
        for &j in &lo {
            let p = (x[j] - red.lower[j]) * zl[j];
            comp_sum += p;
            comp_max = comp_max.max(p);
        }
        for &j in &up {
            let p = (red.upper[j] - x[j]) * zu[j];
            comp_sum += p;
            comp_max = comp_max.max(p);
        }
        let mu = comp_sum / npairs;
        let pinf = rp.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let dinf = rd.iter().fold(0.0f64, |a, v| a.max(v.abs())) / (1.0 + cnorm);
        last_kkt = dinf.max(comp_max);
        if pinf <= feas_in && dinf <= kkt_in && comp_max <= kkt_in {
            let st = IpmState { x: x.clone(), z: z.clone(), zl: zl.clone(), zu: zu.clone() };
            if let Some(k) = accept(&st) {
                return Ok(IpmResult { state: st, end: IpmEnd::Converged, iterations: it, kkt: k });
            }
        }
        let xnorm = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if xnorm > DIVERGENCE_NORM || !xnorm.is_finite() {
            return Ok(IpmResult {
                state: IpmState { x, z, zl, zu },
                end: IpmEnd::Diverged,
                iterations: it,
                kkt: last_kkt,
            });
        }
        let merit = pinf.max(dinf).max(mu);
        if merit < 0.5 * best_merit {
            best_merit = merit;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best > 40 || small_steps > 6 {
            return Ok(IpmResult {
                state: IpmState { x, z, zl, zu },
                end: IpmEnd::Stuck,
                iterations: it,
                kkt: last_kkt,
            });
        }

        kmat.fill(0.0);
        for (r, row) in red.rows.iter().enumerate() {
            let k = row.support.len();
            let g = &grads[offsets[r]..offsets[r] + k];
            let w = z[r] / s[r];
            let zq = 2.0 * z[r];
            for a in 0..k {
                let ja = row.support[a];
                let wa = w * g[a];
                match &row.quad {
                    Some(q) => {
                        let qa = &q[a * k..(a + 1) * k];
                        for b in 0..k {
                            kmat[(row.support[b], ja)] += wa * g[b] + zq * qa[b];
                        }
                    }
                    None => {
                        for b in 0..k {
                            kmat[(row.support[b], ja)] += wa * g[b];
                        }
                    }
                }
            }
        }
        for &j in &lo {
            kmat[(j, j)] += zl[j] / (x[j] - red.lower[j]);
        }
        for &j in &up {
            kmat[(j, j)] += zu[j] / (red.upper[j] - x[j]);
        }
        let Some(chol) = Factor::new(&mut kmat) else {
            return Ok(IpmResult {
                state: IpmState { x, z, zl, zu },
                end: IpmEnd::Stuck,
                iterations: it,
                kkt: last_kkt,
            });
        };

        let solve_dir = |rp_eff: &[f64], rc: &[f64], rlo: &[f64], rup: &[f64]| -> Vec<f64> {
            let mut rhs = DVector::<f64>::zeros(n);
            for j in 0..n {
                rhs[j] = -rd[j];
            }
            for (r, row) in red.rows.iter().enumerate() {
                let g = &grads[offsets[r]..offsets[r] + row.support.len()];
                let t = (z[r] * rp_eff[r] - rc[r]) / s[r];
                for (a, &j) in row.support.iter().enumerate() {
                    rhs[j] -= g[a] * t;
                }
            }
            for &j in &lo {
                rhs[j] += rlo[j] / (x[j] - red.lower[j]);
            }
            for &j in &up {
                rhs[j] -= rup[j] / (red.upper[j] - x[j]);
            }
            chol.solve(&mut rhs);
            rhs.iter().copied().collect()
        };
        let recover = |dx: &[f64], rp_eff: &[f64], rc: &[f64], rlo: &[f64], rup: &[f64]| {
            let mut ds = vec![0.0; m];
            let mut dz = vec![0.0; m];
            for (r, row) in red.rows.iter().enumerate() {
                let g = &grads[offsets[r]..offsets[r] + row.support.len()];
                let jdx: f64 = row.support.iter().enumerate().map(|(a, &j)| g[a] * dx[j]).sum();
                ds[r] = -rp_eff[r] - jdx;
                dz[r] = (-rc[r] - z[r] * ds[r]) / s[r];
            }
            let mut dzl = vec![0.0; n];
            let mut dzu = vec![0.0; n];
            for &j in &lo {
                dzl[j] = (rlo[j] - zl[j] * dx[j]) / (x[j] - red.lower[j]);
            }
            for &j in &up {
                dzu[j] = (rup[j] + zu[j] * dx[j]) / (red.upper[j] - x[j]);
            }
            (ds, dz, dzl, dzu)
        };
        let max_steps = |dx: &[f64], ds: &[f64], dz: &[f64], dzl: &[f64], dzu: &[f64]| {
            let mut ap = 1.0f64;
            let mut ad = 1.0f64;
            for r in 0..m {
                if ds[r] < 0.0 {
                    ap = ap.min(-s[r] / ds[r]);
                }
                if dz[r] < 0.0 {
                    ad = ad.min(-z[r] / dz[r]);
                }
            }
            for &j in &lo {
                if dx[j] < 0.0 {
                    ap = ap.min(-(x[j] - red.lower[j]) / dx[j]);
                }
                if dzl[j] < 0.0 {
                    ad = ad.min(-zl[j] / dzl[j]);
                }
            }
            for &j in &up {
                if dx[j] > 0.0 {
                    ap = ap.min((red.upper[j] - x[j]) / dx[j]);
                }
                if dzu[j] < 0.0 {
                    ad = ad.min(-zu[j] / dzu[j]);
                }
            }
            (ap, ad)
        };

        let rc0: Vec<f64> = (0..m).map(|r| s[r] * z[r]).collect();
        let mut rlo0 = vec![0.0; n];
        let mut rup0 = vec![0.0; n];
        for &j in &lo {
            rlo0[j] = -(x[j] - red.lower[j]) * zl[j];
        }
        for &j in &up {
            rup0[j] = -(red.upper[j] - x[j]) * zu[j];
        }
        let dxa = solve_dir(&rp, &rc0, &rlo0, &rup0);
        let (dsa, dza, dzla, dzua) = recover(&dxa, &rp, &rc0, &rlo0, &rup0);
        let (apa, ada) = max_steps(&dxa, &dsa, &dza, &dzla, &dzua);
        let mut mu_aff = 0.0;
        for r in 0..m {
            mu_aff += (s[r] + apa * dsa[r]) * (z[r] + ada * dza[r]);
        }
        for &j in &lo {
            mu_aff += (x[j] + apa * dxa[j] - red.lower[j]) * (zl[j] + ada * dzla[j]);
        }
        for &j in &up {
            mu_aff += (red.upper[j] - x[j] - apa * dxa[j]) * (zu[j] + ada * dzua[j]);
        }
        mu_aff /= npairs;
        let sigma = if mu > 0.0 { (mu_aff / mu).clamp(0.0, 1.0).powi(3) } else { 0.0 };
        let smu = sigma * mu;

        let mut rp_c = rp.clone();
        for (r, row) in red.rows.iter().enumerate() {
            if row.quad.is_some() {
                row.gather(&dxa, &mut dl);
                rp_c[r] += row.curvature(&dl);
            }
        }
        let rc: Vec<f64> = (0..m).map(|r| s[r] * z[r] + dsa[r] * dza[r] - smu).collect();
        let mut rlo = vec![0.0; n];
        let mut rup = vec![0.0; n];
        for &j in &lo {
            rlo[j] = smu - (x[j] - red.lower[j]) * zl[j] - dxa[j] * dzla[j];
        }
        for &j in &up {
            rup[j] = smu - (red.upper[j] - x[j]) * zu[j] + dxa[j] * dzua[j];
        }
        let dx = solve_dir(&rp_c, &rc, &rlo, &rup);
        let (ds, dz, dzl, dzu) = recover(&dx, &rp_c, &rc, &rlo, &rup);
        let (ap, ad) = max_steps(&dx, &ds, &dz, &dzl, &dzu);
        let alpha = (STEP_FRACTION * ap.min(ad)).min(1.0);
        if alpha < 1e-8 {
            small_steps += 1;
        } else {
            small_steps = 0;
        }
        for j in 0..n {
            x[j] += alpha * dx[j];
        }
        for r in 0..m {
            s[r] += alpha * ds[r];
            z[r] += alpha * dz[r];
        }
        for &j in &lo {
            zl[j] += alpha * dzl[j];
        }
        for &j in &up {
            zu[j] += alpha * dzu[j];
        }
        eval_rows(&x, &mut fvals, &mut grads, &mut xl);
    }
    Ok(IpmResult { state: IpmState { x, z, zl, zu }, end: IpmEnd::Stuck, iterations: max_iter, kkt: last_kkt })
}

/// Jacobi-scaled Cholesky factor of the Newton matrix with escalating diagonal shifts.
struct Factor {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    dinv: Vec<f64>,
}

impl Factor {
    fn new(k: &mut DMatrix<f64>) -> Option<Self> {
        let n = k.nrows();
        let dmax = (0..n).fold(0.0f64, |a, j| a.max(k[(j, j)]));
        if !dmax.is_finite() {
            return None;
        }
        let floor = 1e-14 * dmax.max(1e-300);
        let dinv: Vec<f64> = (0..n).map(|j| 1.0 / k[(j, j)].max(floor).sqrt()).collect();
        for c in 0..n {
            for r in 0..n {
                k[(r, c)] *= dinv[r] * dinv[c];
            }
        }
        let mut delta = 1e-12;
        while delta < 1e-1 {
            let mut kk = k.clone();
            for j in 0..n {
                kk[(j, j)] += delta;
            }
            if let Some(chol) = nalgebra::Cholesky::new(kk) {
                return Some(Self { chol, dinv });
            }
            delta *= 100.0;
        }
        None
    }

    fn solve(&self, rhs: &mut DVector<f64>) {
        for (j, v) in rhs.iter_mut().enumerate() {
            *v *= self.dinv[j];
        }
        self.chol.solve_mut(rhs);
        for (j, v) in rhs.iter_mut().enumerate() {
            *v *= self.dinv[j];
        }
    }
}

/// Solves the convex QCQP. Returns a status rather than an error for infeasible,
/// unbounded, or non-converged problems.
pub fn solve(
    problem: &ConvexQcqp,
    warm_start: Option<&[f64]>,
    tol: &Tolerances,
) -> Result<PrimalSolution, SolveError> {
    problem.validate()?;
    if let Some(w) = warm_start {
        if w.len() != problem.n {
            return Err(SolveError::InvalidProblem(format!(
                "warm start has length {}, expected {}",
                w.len(),
                problem.n
            )));
        }
    }
    let pre = match presolve(problem, tol) {
        PresolveOutcome::Ready(p) => p,
        PresolveOutcome::Infeasible(x) => return Ok(terminal(problem, x, Status::Infeasible, 0)),
        PresolveOutcome::Unbounded(x) => return Ok(terminal(problem, x, Status::Unbounded, 0)),
    };
    let red = &pre.red;
    let x0: Vec<f64> = match warm_start {
        Some(w) => pre.free.iter().map(|&j| w[j]).collect(),
        None => vec![0.0; red.n],
    };

    let mut accept = |st: &IpmState| -> Option<f64> {
        let sol = expand(problem, &pre, st, Status::Optimal, 0, 0.0);
        let res = residuals(problem, &sol.x, &sol.duals, &sol.lower_duals, &sol.upper_duals);
        res.passes(tol).then(|| res.kkt())
    };
    let first = interior_point(red, &x0, tol, tol.max_iter, &mut accept)?;
    let mut used = first.iterations;
    match first.end {
        IpmEnd::Converged => {
            return Ok(expand(problem, &pre, &first.state, Status::Optimal, used, first.kkt));
        }
        IpmEnd::Diverged | IpmEnd::Stuck => {}
    }

    let (tau, x_feas, p1_iters) = phase_one(red, &x0, tol)?;
    used += p1_iters;
    if tau > tol.feas_tol {
        let st = IpmState { x: x_feas, z: vec![0.0; red.rows.len()], zl: vec![0.0; red.n], zu: vec![0.0; red.n] };
        return Ok(expand(problem, &pre, &st, Status::Infeasible, used, f64::INFINITY));
    }
    if matches!(first.end, IpmEnd::Diverged) {
        return Ok(expand(problem, &pre, &first.state, Status::Unbounded, used, first.kkt));
    }
    let budget = tol.max_iter.saturating_sub(used).max(tol.max_iter / 4);
    let second = interior_point(red, &x_feas, tol, budget, &mut accept)?;
    used += second.iterations;
    let status = match second.end {
        IpmEnd::Converged => Status::Optimal,
        IpmEnd::Diverged => Status::Unbounded,
        IpmEnd::Stuck => Status::MaxIter,
    };
    Ok(expand(problem, &pre, &second.state, status, used, second.kkt))
}

/// `min τ s.t. g_r(x) ≤ τ, τ ≥ −1`; returns the optimal τ and its x.
fn phase_one(red: &Reduced, x0: &[f64], tol: &Tolerances) -> Result<(f64, Vec<f64>, usize), SolveError> {
    let n = red.n;
    let x = interior_start(red, x0);
    let mut xl = Vec::new();
    let mut tau0 = 0.0f64;
    for row in &red.rows {
        row.gather(&x, &mut xl);
        let mut g = vec![0.0; xl.len()];
        tau0 = tau0.max(row.eval(&xl, &mut g));
    }
    let rows = red
        .rows
        .iter()
        .map(|r| {
            let mut support = r.support.clone();
            support.push(n);
            let mut lin = r.lin.clone();
            lin.push(-1.0);
            let k = support.len();
            let quad = r.quad.as_ref().map(|q| {
                let k0 = k - 1;
                let mut qq = vec![0.0; k * k];
                for a in 0..k0 {
                    qq[a * k..a * k + k0].copy_from_slice(&q[a * k0..(a + 1) * k0]);
                }
                qq
            });
            Row { support, lin, quad, rhs: r.rhs, scale: r.scale, origin: r.origin }
        })
        .collect();
    let mut c = vec![0.0; n + 1];
    c[n] = 1.0;
    let mut lower = red.lower.clone();
    lower.push(-1.0);
    let mut upper = red.upper.clone();
    upper.push(f64::INFINITY);
    let p1 = Reduced { n: n + 1, c, rows, lower, upper };
    let mut start = x;
    start.push(tau0 + 1.0);
    let strict = Tolerances { feas_tol: 1e-2 * tol.feas_tol, kkt_tol: tol.kkt_tol, max_iter: tol.max_iter };
    let mut accept = |st: &IpmState| Some(st.x[n]);
    let res = interior_point(&p1, &start, &strict, tol.max_iter, &mut accept)?;
    let mut xs = res.state.x;
    let t = xs.pop().unwrap_or(0.0);
    let mut worst = f64::NEG_INFINITY;
    for row in &red.rows {
        row.gather(&xs, &mut xl);
        let mut g = vec![0.0; xl.len()];
        worst = worst.max(row.eval(&xl, &mut g));
    }
    if red.rows.is_empty() {
        worst = -1.0;
    }
    Ok((t.max(worst), xs, res.iterations))
}

fn terminal(problem: &ConvexQcqp, x: Vec<f64>, status: Status, iterations: usize) -> PrimalSolution {
    let m = problem.constraints.len();
    PrimalSolution {
        objective: problem.objective_value(&x),
        x,
        status,
        kkt_residual: f64::INFINITY,
        iterations,
        duals: vec![0.0; m],
        lower_duals: vec![0.0; problem.n],
        upper_duals: vec![0.0; problem.n],
    }
}

fn expand(
    problem: &ConvexQcqp,
    pre: &Presolved,
    st: &IpmState,
    status: Status,
    iterations: usize,
    kkt: f64,
) -> PrimalSolution {
    let n = problem.n;
    let mut x = pre.x_full.clone();
    let mut lower_duals = vec![0.0; n];
    let mut upper_duals = vec![0.0; n];
    let mut is_free = vec![false; n];
    for (k, &j) in pre.free.iter().enumerate() {
        x[j] = st.x[k];
        is_free[j] = true;
        if problem.lower[j].is_finite() {
            lower_duals[j] = pre.obj_scale * st.zl[k];
        }
        if problem.upper[j].is_finite() {
            upper_duals[j] = pre.obj_scale * st.zu[k];
        }
    }
    let mut duals = vec![0.0; problem.constraints.len()];
    for (r, row) in pre.red.rows.iter().enumerate() {
        duals[row.origin] = pre.obj_scale * st.z[r] / row.scale;
    }
    if pre.free.len() < n {
        let mut g = problem.objective.clone();
        for (con, &z) in problem.constraints.iter().zip(&duals) {
            if z != 0.0 {
                let mut gr = vec![0.0; n];
                con.gradient_into(&x, &mut gr);
                for j in 0..n {
                    g[j] += z * gr[j];
                }
            }
        }
        for j in (0..n).filter(|&j| !is_free[j]) {
            if g[j] > 0.0 {
                lower_duals[j] = g[j];
            } else {
                upper_duals[j] = -g[j];
            }
        }
    }
    PrimalSolution {
        objective: problem.objective_value(&x),
        x,
        status,
        kkt_residual: kkt,
        iterations,
        duals,
        lower_duals,
        upper_duals,
    }
}
