use crate::problem::ConvexQcqp;
use crate::solver::{PrimalSolution, Tolerances};

/// Optimality residuals recomputed from the problem data alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    /// Largest row-normalized constraint or bound violation.
    pub primal: f64,
    /// `‖c + Σ z_r ∇g_r − z_l + z_u‖∞ / (1 + ‖c‖∞)`.
    pub stationarity: f64,
    /// Largest `|multiplier · constraint value|`, relative like stationarity.
    pub complementarity: f64,
    /// Largest negative multiplier magnitude, relative like stationarity.
    pub dual_sign: f64,
}

impl Residuals {
    pub fn kkt(&self) -> f64 {
        self.stationarity.max(self.complementarity).max(self.dual_sign)
    }

    pub fn passes(&self, tol: &Tolerances) -> bool {
        self.primal <= tol.feas_tol && self.kkt() <= tol.kkt_tol
    }
}

pub fn certify(problem: &ConvexQcqp, solution: &PrimalSolution) -> Residuals {
    residuals(
        problem,
        &solution.x,
        &solution.duals,
        &solution.lower_duals,
        &solution.upper_duals,
    )
}

pub fn residuals(
    problem: &ConvexQcqp,
    x: &[f64],
    duals: &[f64],
    lower_duals: &[f64],
    upper_duals: &[f64],
) -> Residuals {
    let n = problem.n;
    let cnorm = 1.0 + problem.objective.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut primal = 0.0f64;
    let mut comp = 0.0f64;
    let mut sign = 0.0f64;
    let mut grad = problem.objective.clone();
    let mut gr = vec![0.0; n];
    for (con, &z) in problem.constraints.iter().zip(duals) {
        let g = con.value(x);
        primal = primal.max(g.max(0.0) / con.scale());
        comp = comp.max((z * g).abs());
        sign = sign.max(-z);
        gr.iter_mut().for_each(|v| *v = 0.0);
        con.gradient_into(x, &mut gr);
        for j in 0..n {
            grad[j] += z * gr[j];
        }
    }
    for j in 0..n {
        let (l, u) = (problem.lower[j], problem.upper[j]);
        if l.is_finite() {
            primal = primal.max((l - x[j]).max(0.0) / l.abs().max(1.0));
            comp = comp.max((lower_duals[j] * (x[j] - l)).abs());
        }
        if u.is_finite() {
            primal = primal.max((x[j] - u).max(0.0) / u.abs().max(1.0));
            comp = comp.max((upper_duals[j] * (u - x[j])).abs());
        }
        sign = sign.max(-lower_duals[j]).max(-upper_duals[j]);
        grad[j] += upper_duals[j] - lower_duals[j];
    }
    let stat = grad.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if x.iter().chain(duals).chain(lower_duals).chain(upper_duals).any(|v| !v.is_finite()) {
        return Residuals {
            primal: f64::INFINITY,
            stationarity: f64::INFINITY,
            complementarity: f64::INFINITY,
            dual_sign: f64::INFINITY,
        };
    }
    Residuals {
        primal,
        stationarity: stat / cnorm,
        complementarity: comp / cnorm,
        dual_sign: sign.max(0.0) / cnorm,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Constraint, SparseVec};
    use crate::solver::solve;

    #[test]
    fn perturbed_solution_reports_violation() {
        let mut p = ConvexQcqp::new(1);
        p.objective[0] = 1.0;
        p.constraints.push(Constraint::Linear { a: SparseVec::from_pairs([(0, -1.0)]), rhs: -1.0 });
        let mut sol = solve(&p, None, &Tolerances::default()).unwrap();
        assert!(certify(&p, &sol).passes(&Tolerances::default()));
        sol.x[0] -= 1e-3;
        let r = certify(&p, &sol);
        assert!((r.primal - 1e-3).abs() < 1e-6);
        assert!(!r.passes(&Tolerances::default()));
    }
}
