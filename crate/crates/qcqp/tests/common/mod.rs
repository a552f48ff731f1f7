//! Reference solvers that share no code with the interior-point method.
#![allow(dead_code)]

use qcqp::{Constraint, ConvexQcqp, SparseVec};
use rand::Rng;

/// Random bounded convex QCQP with a strictly feasible interior point.
pub fn random_qcqp<R: Rng>(rng: &mut R, n: usize, n_quad: usize, n_lin: usize) -> ConvexQcqp {
    let mut p = ConvexQcqp::new(n);
    p.objective = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    p.lower = vec![-5.0; n];
    p.upper = vec![5.0; n];
    let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    for _ in 0..n_quad {
        let nf = rng.random_range(1..=n);
        let factor: Vec<SparseVec> = (0..nf)
            .map(|_| SparseVec::from_pairs((0..n).map(|j| (j, rng.random_range(-1.0..1.0)))))
            .collect();
        let a = SparseVec::from_pairs((0..n).map(|j| (j, rng.random_range(-1.0..1.0))));
        let mut con = Constraint::ConvexQuad { factor, a, rhs: 0.0 };
        let g = con.value(&x0);
        if let Constraint::ConvexQuad { rhs, .. } = &mut con {
            *rhs = g + rng.random_range(0.5..2.0);
        }
        p.constraints.push(con);
    }
    for _ in 0..n_lin {
        let a = SparseVec::from_pairs((0..n).map(|j| (j, rng.random_range(-1.0..1.0))));
        let rhs = a.dot(&x0) + rng.random_range(0.1..1.0);
        p.constraints.push(Constraint::Linear { a, rhs });
    }
    p
}

fn grad(con: &Constraint, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    con.gradient_into(x, &mut g);
    g
}

fn project(p: &ConvexQcqp, x: &mut [f64]) {
    for j in 0..p.n {
        x[j] = x[j].clamp(p.lower[j], p.upper[j]);
    }
}

fn lagrangian(p: &ConvexQcqp, x: &[f64], lam: &[f64], rho: f64) -> (f64, Vec<f64>) {
    let mut v = p.objective_value(x);
    let mut g = p.objective.clone();
    for (con, &l) in p.constraints.iter().zip(lam) {
        let t = (l + rho * con.value(x)).max(0.0);
        v += (t * t - l * l) / (2.0 * rho);
        if t > 0.0 {
            for (gj, cj) in g.iter_mut().zip(grad(con, x)) {
                *gj += t * cj;
            }
        }
    }
    (v, g)
}

/// Augmented Lagrangian outer loop with an accelerated projected-gradient inner solver
/// (backtracking step, gradient-based restart). Requires finite bounds on every variable.
pub fn pg_oracle(p: &ConvexQcqp) -> (Vec<f64>, f64) {
    let n = p.n;
    let m = p.constraints.len();
    let mut x = vec![0.0; n];
    project(p, &mut x);
    let mut lam = vec![0.0; m];
    let mut rho = 10.0;
    let mut step = 1.0;
    for _outer in 0..200 {
        let mut y = x.clone();
        let mut t = 1.0f64;
        for _inner in 0..20_000 {
            let (fy, gy) = lagrangian(p, &y, &lam, rho);
            let mut xn;
            loop {
                xn = y.iter().zip(&gy).map(|(a, b)| a - step * b).collect::<Vec<_>>();
                project(p, &mut xn);
                let d: Vec<f64> = xn.iter().zip(&y).map(|(a, b)| a - b).collect();
                let (fx, _) = lagrangian(p, &xn, &lam, rho);
                let model = fy
                    + gy.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>()
                    + d.iter().map(|v| v * v).sum::<f64>() / (2.0 * step);
                if fx <= model + 1e-15 * fy.abs().max(1.0) {
                    break;
                }
                step *= 0.5;
            }
            let moved: f64 = xn.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let gm: f64 = gy.iter().zip(xn.iter().zip(&y)).map(|(g, (a, b))| g * (a - b)).sum();
            let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            if gm > 0.0 {
                y = xn.clone();
                t = 1.0;
            } else {
                y = xn.iter().zip(&x).map(|(a, b)| a + (t - 1.0) / tn * (a - b)).collect();
                t = tn;
            }
            x = xn;
            step *= 1.2;
            if moved < 1e-14 {
                break;
            }
        }
        let viol = p.constraints.iter().map(|c| c.value(&x).max(0.0)).fold(0.0, f64::max);
        for (l, con) in lam.iter_mut().zip(&p.constraints) {
            *l = (*l + rho * con.value(&x)).max(0.0);
        }
        if viol < 1e-12 {
            let comp = lam
                .iter()
                .zip(&p.constraints)
                .map(|(l, c)| (l * c.value(&x)).abs())
                .fold(0.0, f64::max);
            if comp < 1e-11 {
                break;
            }
        } else {
            rho = (rho * 2.0).min(1e6);
        }
    }
    let obj = p.objective_value(&x);
    (x, obj)
}

fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..n {
                        a[r][c] -= f * a[col][c];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Brute-force vertex enumeration for a bounded LP: every choice of `n` active
/// inequalities (rows and bounds) is solved and the best feasible vertex kept.
pub fn lp_vertex_oracle(p: &ConvexQcqp) -> Option<f64> {
    let n = p.n;
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for con in &p.constraints {
        let Constraint::Linear { a, rhs } = con else { panic!("LP oracle needs linear rows") };
        let mut dense = vec![0.0; n];
        for (i, v) in a.iter() {
            dense[i] += v;
        }
        rows.push((dense, *rhs));
    }
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        rows.push((e.clone(), p.upper[j]));
        e[j] = -1.0;
        rows.push((e, -p.lower[j]));
    }
    let total = rows.len();
    let mut best: Option<f64> = None;
    let mut pick: Vec<usize> = (0..n).collect();
    loop {
        let a: Vec<Vec<f64>> = pick.iter().map(|&i| rows[i].0.clone()).collect();
        let b: Vec<f64> = pick.iter().map(|&i| rows[i].1).collect();
        if let Some(x) = solve_dense(a, b) {
            let feasible = rows
                .iter()
                .all(|(r, d)| r.iter().zip(&x).map(|(u, v)| u * v).sum::<f64>() <= d + 1e-9);
            if feasible {
                let v = p.objective_value(&x);
                best = Some(best.map_or(v, |b: f64| b.min(v)));
            }
        }
        let mut k = n;
        loop {
            if k == 0 {
                return best;
            }
            k -= 1;
            if pick[k] < total - n + k {
                pick[k] += 1;
                for t in k + 1..n {
                    pick[t] = pick[t - 1] + 1;
                }
                break;
            }
        }
    }
}
