use std::collections::BTreeMap;

use crate::SolveError;

/// Sparse vector stored as parallel index/value arrays.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVec {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseVec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut v = Self::new();
        for (i, x) in pairs {
            v.push(i, x);
        }
        v
    }

    pub fn push(&mut self, i: usize, x: f64) {
        self.idx.push(i);
        self.val.push(x);
    }

    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&i, &v)| v * x[i]).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.idx.iter().copied().zip(self.val.iter().copied())
    }

    pub fn max_abs(&self) -> f64 {
        self.val.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Merges duplicate indices and drops exact zeros.
    pub fn compact(&self) -> Self {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for (i, v) in self.iter() {
            *acc.entry(i).or_insert(0.0) += v;
        }
        Self::from_pairs(acc.into_iter().filter(|&(_, v)| v != 0.0))
    }
}

/// A single constraint of a [`ConvexQcqp`].
#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    /// `aᵀx ≤ rhs`
    Linear { a: SparseVec, rhs: f64 },
    /// `Σ_j (r_jᵀx)² + aᵀx ≤ rhs`, i.e. `Q = Σ_j r_j r_jᵀ` supplied through its factor rows.
    ConvexQuad {
        factor: Vec<SparseVec>,
        a: SparseVec,
        rhs: f64,
    },
}

impl Constraint {
    pub fn linear_part(&self) -> &SparseVec {
        match self {
            Constraint::Linear { a, .. } | Constraint::ConvexQuad { a, .. } => a,
        }
    }

    pub fn rhs(&self) -> f64 {
        match self {
            Constraint::Linear { rhs, .. } | Constraint::ConvexQuad { rhs, .. } => *rhs,
        }
    }

    pub fn factor(&self) -> &[SparseVec] {
        match self {
            Constraint::Linear { .. } => &[],
            Constraint::ConvexQuad { factor, .. } => factor,
        }
    }

    /// `g(x) = xᵀQx + aᵀx − rhs`; the constraint holds when this is ≤ 0.
    pub fn value(&self, x: &[f64]) -> f64 {
        let quad: f64 = self.factor().iter().map(|r| r.dot(x).powi(2)).sum();
        quad + self.linear_part().dot(x) - self.rhs()
    }

    pub fn gradient_into(&self, x: &[f64], g: &mut [f64]) {
        for (i, v) in self.linear_part().iter() {
            g[i] += v;
        }
        for r in self.factor() {
            let t = 2.0 * r.dot(x);
            for (i, v) in r.iter() {
                g[i] += t * v;
            }
        }
    }

    /// Magnitude used to normalize violations of this row.
    pub fn scale(&self) -> f64 {
        let lin = self.linear_part().max_abs();
        let quad = self
            .factor()
            .iter()
            .map(|r| r.max_abs().powi(2))
            .fold(0.0, f64::max);
        lin.max(quad).max(1.0)
    }
}

/// `minimize cᵀx` subject to linear and convex-quadratic constraints and box bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexQcqp {
    pub n: usize,
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ConvexQcqp {
    /// Problem with `n` free variables and a zero objective.
    pub fn new(n: usize) -> Self {
        Self {
            n,
            objective: vec![0.0; n],
            constraints: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        let n = self.n;
        if self.objective.len() != n || self.lower.len() != n || self.upper.len() != n {
            return Err(SolveError::InvalidProblem(format!(
                "dimension mismatch: n={n}, c={}, lower={}, upper={}",
                self.objective.len(),
                self.lower.len(),
                self.upper.len()
            )));
        }
        if let Some(j) = self.objective.iter().position(|c| !c.is_finite()) {
            return Err(SolveError::InvalidProblem(format!("objective entry {j} is not finite")));
        }
        for j in 0..n {
            let (l, u) = (self.lower[j], self.upper[j]);
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(SolveError::InvalidProblem(format!("bad bounds [{l}, {u}] on variable {j}")));
            }
        }
        for (r, con) in self.constraints.iter().enumerate() {
            if !con.rhs().is_finite() {
                return Err(SolveError::InvalidProblem(format!("constraint {r} has a non-finite rhs")));
            }
            check_sparse(con.linear_part(), n, r)?;
            for f in con.factor() {
                check_sparse(f, n, r).map_err(|e| match e {
                    SolveError::InvalidProblem(m) if m.contains("finite") => {
                        SolveError::NumericalBreakdown(format!("factor of constraint {r} is not finite"))
                    }
                    other => other,
                })?;
            }
        }
        Ok(())
    }
}

fn check_sparse(v: &SparseVec, n: usize, r: usize) -> Result<(), SolveError> {
    if v.idx.len() != v.val.len() {
        return Err(SolveError::InvalidProblem(format!("constraint {r}: ragged sparse vector")));
    }
    if let Some(&i) = v.idx.iter().find(|&&i| i >= n) {
        return Err(SolveError::InvalidProblem(format!("constraint {r}: index {i} out of range")));
    }
    if v.val.iter().any(|x| !x.is_finite()) {
        return Err(SolveError::InvalidProblem(format!("constraint {r}: coefficient not finite")));
    }
    Ok(())
}

/// Affine expression `Σ c_i x_i + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affine {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(i: usize) -> Self {
        Self { terms: vec![(i, 1.0)], constant: 0.0 }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            terms: self.terms.iter().map(|&(i, c)| (i, c * k)).collect(),
            constant: self.constant * k,
        }
    }

    pub fn add(&self, other: &Affine) -> Self {
        let mut terms = self.terms.clone();
        terms.extend_from_slice(&other.terms);
        Self { terms, constant: self.constant + other.constant }
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|&(_, c)| c == 0.0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }
}

/// Accumulates `Σ w_j (affine_j)² + linear + constant` and emits `… ≤ 0` constraints.
#[derive(Debug, Clone, Default)]
pub struct QuadExpr {
    linear: Vec<(usize, f64)>,
    constant: f64,
    squares: Vec<SparseVec>,
}

impl QuadExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_constant(&mut self, c: f64) -> &mut Self {
        self.constant += c;
        self
    }

    pub fn add_term(&mut self, i: usize, c: f64) -> &mut Self {
        if c != 0.0 {
            self.linear.push((i, c));
        }
        self
    }

    pub fn add_affine(&mut self, e: &Affine, k: f64) -> &mut Self {
        for &(i, c) in &e.terms {
            self.add_term(i, k * c);
        }
        self.constant += k * e.constant;
        self
    }

    /// Adds `w·(e)²` with `w ≥ 0`.
    pub fn add_square(&mut self, e: &Affine, w: f64) -> &mut Self {
        assert!(w >= 0.0, "square weight must be nonnegative");
        if w == 0.0 {
            return self;
        }
        let s = w.sqrt();
        let row = SparseVec::from_pairs(e.terms.iter().map(|&(i, c)| (i, c * s))).compact();
        let o = e.constant * s;
        if o != 0.0 {
            for (i, v) in row.iter() {
                self.add_term(i, 2.0 * o * v);
            }
            self.constant += o * o;
        }
        if !row.is_empty() {
            self.squares.push(row);
        }
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant
            + self.linear.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
            + self.squares.iter().map(|r| r.dot(x).powi(2)).sum::<f64>()
    }

    /// The constraint `self ≤ 0`.
    pub fn le_zero(&self) -> Constraint {
        let a = SparseVec::from_pairs(self.linear.iter().copied()).compact();
        let rhs = -self.constant;
        if self.squares.is_empty() {
            Constraint::Linear { a, rhs }
        } else {
            Constraint::ConvexQuad { factor: self.squares.clone(), a, rhs }
        }
    }

    /// Linear terms only, accumulated per index; used for objectives.
    pub fn dense_linear(&self, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; n];
        for &(i, v) in &self.linear {
            c[i] += v;
        }
        c
    }
}
