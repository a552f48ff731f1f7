//! Line-oriented text format for [`ConvexQcqp`].
//!
//! ```text
//! qcqp <n>
//! c <i>:<v> ...                 objective entries (omitted ones are 0)
//! lb <i> <v>                    finite lower bound
//! ub <i> <v>                    finite upper bound
//! lin <rhs> ; <i>:<v> ...       aᵀx ≤ rhs
//! quad <rhs> ; <i>:<v> ... | <i>:<v> ... | ...
//!                               first group is a, each later group one factor row r_j
//! end
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Numbers use Rust's
//! shortest round-trip formatting, so `parse(dump(p)) == p`.

use std::fmt::Write as _;

use crate::problem::{Constraint, ConvexQcqp, SparseVec};

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("line {line}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub msg: String,
}

fn write_sparse(out: &mut String, v: &SparseVec) {
    for (i, x) in v.iter() {
        let _ = write!(out, " {i}:{x:?}");
    }
}

pub fn dump(p: &ConvexQcqp) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "qcqp {}", p.n);
    out.push('c');
    for (i, &c) in p.objective.iter().enumerate() {
        if c != 0.0 {
            let _ = write!(out, " {i}:{c:?}");
        }
    }
    out.push('\n');
    for j in 0..p.n {
        if p.lower[j].is_finite() {
            let _ = writeln!(out, "lb {j} {:?}", p.lower[j]);
        }
        if p.upper[j].is_finite() {
            let _ = writeln!(out, "ub {j} {:?}", p.upper[j]);
        }
    }
    for con in &p.constraints {
        match con {
            Constraint::Linear { a, rhs } => {
                let _ = write!(out, "lin {rhs:?} ;");
                write_sparse(&mut out, a);
            }
            Constraint::ConvexQuad { factor, a, rhs } => {
                let _ = write!(out, "quad {rhs:?} ;");
                write_sparse(&mut out, a);
                for f in factor {
                    out.push_str(" |");
                    write_sparse(&mut out, f);
                }
            }
        }
        out.push('\n');
    }
    out.push_str("end\n");
    out
}

fn num(tok: &str, line: usize) -> Result<f64, ParseError> {
    tok.parse::<f64>().map_err(|_| ParseError { line, msg: format!("bad number `{tok}`") })
}

fn index(tok: &str, n: usize, line: usize) -> Result<usize, ParseError> {
    let i = tok.parse::<usize>().map_err(|_| ParseError { line, msg: format!("bad index `{tok}`") })?;
    if i >= n {
        return Err(ParseError { line, msg: format!("index {i} out of range") });
    }
    Ok(i)
}

fn sparse(group: &str, n: usize, line: usize) -> Result<SparseVec, ParseError> {
    let mut v = SparseVec::new();
    for tok in group.split_whitespace() {
        let (i, x) = tok
            .split_once(':')
            .ok_or_else(|| ParseError { line, msg: format!("expected i:v, got `{tok}`") })?;
        v.push(index(i, n, line)?, num(x, line)?);
    }
    Ok(v)
}

pub fn parse(text: &str) -> Result<ConvexQcqp, ParseError> {
    let mut problem: Option<ConvexQcqp> = None;
    let mut ended = false;
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if ended {
            return Err(ParseError { line, msg: "content after `end`".into() });
        }
        let (head, rest) = t.split_once(char::is_whitespace).unwrap_or((t, ""));
        if head == "qcqp" {
            if problem.is_some() {
                return Err(ParseError { line, msg: "duplicate header".into() });
            }
            let n = rest.trim().parse::<usize>().map_err(|_| ParseError { line, msg: "bad dimension".into() })?;
            problem = Some(ConvexQcqp::new(n));
            continue;
        }
        let p = problem.as_mut().ok_or_else(|| ParseError { line, msg: "missing `qcqp <n>` header".into() })?;
        let n = p.n;
        match head {
            "c" => {
                for (i, v) in sparse(rest, n, line)?.iter() {
                    p.objective[i] += v;
                }
            }
            "lb" | "ub" => {
                let toks: Vec<&str> = rest.split_whitespace().collect();
                if toks.len() != 2 {
                    return Err(ParseError { line, msg: format!("`{head}` expects index and value") });
                }
                let j = index(toks[0], n, line)?;
                let v = num(toks[1], line)?;
                if head == "lb" {
                    p.lower[j] = v;
                } else {
                    p.upper[j] = v;
                }
            }
            "lin" | "quad" => {
                let (rhs, body) = rest
                    .split_once(';')
                    .ok_or_else(|| ParseError { line, msg: "expected `;` after rhs".into() })?;
                let rhs = num(rhs.trim(), line)?;
                let mut groups = body.split('|');
                let a = sparse(groups.next().unwrap_or(""), n, line)?;
                if head == "lin" {
                    if groups.next().is_some() {
                        return Err(ParseError { line, msg: "linear constraint with factor rows".into() });
                    }
                    p.constraints.push(Constraint::Linear { a, rhs });
                } else {
                    let factor = groups.map(|g| sparse(g, n, line)).collect::<Result<Vec<_>, _>>()?;
                    p.constraints.push(Constraint::ConvexQuad { factor, a, rhs });
                }
            }
            "end" => ended = true,
            other => return Err(ParseError { line, msg: format!("unknown directive `{other}`") }),
        }
    }
    if !ended {
        return Err(ParseError { line: text.lines().count(), msg: "missing `end`".into() });
    }
    problem.ok_or(ParseError { line: 0, msg: "empty input".into() })
}
