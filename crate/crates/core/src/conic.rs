//! Solver-neutral second-order cone program over real variables, plus a
//! line-oriented text format for dumps and interchange.
//!
//! ```text
//! conic 1
//! var W_dru
//! var Q_t0
//! row nodal_balance eq 0e0 | 0e0 0:1e0 1:-2.5e-1
//! cone w_cone 2 | 0e0 0:1e0 | 0e0 1:2e0 | 0e0 0:1e0 1:-1e0
//! objective | 0e0 0:1e0
//! ```
//!
//! A `row` reads `tag relation rhs | expr` and means `expr (=|<=) rhs`.
//! A `cone` reads `tag n | scalar | v1 | ... | vn` and means
//! `||(v1..vn)|| <= scalar`. Each expression is a constant followed by
//! `index:coefficient` terms. Blank lines and `#` comments are ignored.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

/// Role of a constraint within the dispatch problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    VoltageBounds,
    Capability,
    FlowLimit,
    NodalBalance,
    BranchFlow,
    FrequencyBand,
    ReactiveDemand,
    WCone,
    Objective,
    Regularization,
    /// Rows not produced by the dispatch builder.
    Other,
}

impl Tag {
    pub const ALL: [Tag; 11] = [
        Tag::VoltageBounds,
        Tag::Capability,
        Tag::FlowLimit,
        Tag::NodalBalance,
        Tag::BranchFlow,
        Tag::FrequencyBand,
        Tag::ReactiveDemand,
        Tag::WCone,
        Tag::Objective,
        Tag::Regularization,
        Tag::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Tag::VoltageBounds => "voltage_bounds",
            Tag::Capability => "capability",
            Tag::FlowLimit => "flow_limit",
            Tag::NodalBalance => "nodal_balance",
            Tag::BranchFlow => "branch_flow",
            Tag::FrequencyBand => "frequency_band",
            Tag::ReactiveDemand => "reactive_demand",
            Tag::WCone => "w_cone",
            Tag::Objective => "objective",
            Tag::Regularization => "regularization",
            Tag::Other => "other",
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tag {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Tag::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown tag {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    Eq,
    Le,
}

/// `constant + sum(coef * x[index])`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(i: usize) -> Self {
        Self { terms: vec![(i, 1.0)], constant: 0.0 }
    }

    pub fn term(mut self, i: usize, c: f64) -> Self {
        if c != 0.0 {
            self.terms.push((i, c));
        }
        self
    }

    pub fn plus(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }

    /// `|constant| + sum |coef * x|`, the magnitude used for relative checks.
    pub fn magnitude(&self, x: &[f64]) -> f64 {
        self.constant.abs() + self.terms.iter().map(|&(i, c)| (c * x[i]).abs()).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineRow {
    pub expr: LinExpr,
    pub relation: Relation,
    pub rhs: f64,
    pub tag: Tag,
}

impl AffineRow {
    /// Amount by which `x` violates the row, relative to the size of the
    /// terms involved (floored at one).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let lhs = self.expr.eval(x);
        let raw = match self.relation {
            Relation::Eq => (lhs - self.rhs).abs(),
            Relation::Le => (lhs - self.rhs).max(0.0),
        };
        raw / (1.0 + self.rhs.abs() + self.expr.magnitude(x)).max(1.0)
    }
}

/// `||vector|| <= scalar`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocCone {
    pub scalar: LinExpr,
    pub vector: Vec<LinExpr>,
    pub tag: Tag,
}

impl SocCone {
    /// `scalar - ||vector||`; nonnegative inside the cone.
    pub fn slack(&self, x: &[f64]) -> f64 {
        self.scalar.eval(x) - self.vector.iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt()
    }

    pub fn violation(&self, x: &[f64]) -> f64 {
        let scale = 1.0 + self.scalar.eval(x).abs();
        (-self.slack(x)).max(0.0) / scale
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConicProgram {
    pub variables: Vec<String>,
    pub rows: Vec<AffineRow>,
    pub cones: Vec<SocCone>,
    pub objective: LinExpr,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>) -> usize {
        self.variables.push(name.into());
        self.variables.len() - 1
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn add_row(&mut self, expr: LinExpr, relation: Relation, rhs: f64, tag: Tag) {
        self.rows.push(AffineRow { expr, relation, rhs, tag });
    }

    /// `lo <= expr <= hi` as two rows (one equality when `lo == hi`).
    pub fn add_range(&mut self, expr: LinExpr, lo: f64, hi: f64, tag: Tag) {
        if lo == hi {
            self.add_row(expr, Relation::Eq, lo, tag);
            return;
        }
        let neg = LinExpr {
            terms: expr.terms.iter().map(|&(i, c)| (i, -c)).collect(),
            constant: -expr.constant,
        };
        self.add_row(expr, Relation::Le, hi, tag);
        self.add_row(neg, Relation::Le, -lo, tag);
    }

    pub fn add_cone(&mut self, scalar: LinExpr, vector: Vec<LinExpr>, tag: Tag) {
        self.cones.push(SocCone { scalar, vector, tag });
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.eval(x)
    }

    /// Tags present in the program; the objective always contributes its own.
    pub fn tags(&self) -> BTreeSet<Tag> {
        let mut tags: BTreeSet<Tag> = self.rows.iter().map(|r| r.tag).collect();
        tags.extend(self.cones.iter().map(|c| c.tag));
        tags.insert(Tag::Objective);
        tags
    }

    /// Largest relative violation over all rows and cones.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self.rows.iter().map(|r| r.violation(x));
        let cones = self.cones.iter().map(|c| c.violation(x));
        rows.chain(cones).fold(0.0, f64::max)
    }

    /// Checks that every expression refers to a declared variable and every
    /// coefficient is finite.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        let check = |e: &LinExpr, what: &str| -> Result<()> {
            if !e.constant.is_finite() {
                return Err(Error::InvalidParameter(format!("{what}: non-finite constant")));
            }
            for &(i, c) in &e.terms {
                if i >= n {
                    return Err(Error::InvalidParameter(format!("{what}: variable {i} is not declared")));
                }
                if !c.is_finite() {
                    return Err(Error::InvalidParameter(format!("{what}: non-finite coefficient")));
                }
            }
            Ok(())
        };
        for (k, r) in self.rows.iter().enumerate() {
            check(&r.expr, &format!("row {k}"))?;
            if !r.rhs.is_finite() {
                return Err(Error::InvalidParameter(format!("row {k}: non-finite rhs")));
            }
        }
        for (k, c) in self.cones.iter().enumerate() {
            check(&c.scalar, &format!("cone {k}"))?;
            for e in &c.vector {
                check(e, &format!("cone {k}"))?;
            }
        }
        check(&self.objective, "objective")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("conic 1\n");
        for v in &self.variables {
            let _ = writeln!(out, "var {v}");
        }
        for r in &self.rows {
            let rel = match r.relation {
                Relation::Eq => "eq",
                Relation::Le => "le",
            };
            let _ = writeln!(out, "row {} {rel} {:e} | {}", r.tag, r.rhs, fmt_expr(&r.expr));
        }
        for c in &self.cones {
            let _ = write!(out, "cone {} {} | {}", c.tag, c.vector.len(), fmt_expr(&c.scalar));
            for e in &c.vector {
                let _ = write!(out, " | {}", fmt_expr(e));
            }
            out.push('\n');
        }
        let _ = writeln!(out, "objective | {}", fmt_expr(&self.objective));
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut prog = ConicProgram::new();
        let mut seen_header = false;
        let mut seen_objective = false;
        for (k, raw) in text.lines().enumerate() {
            let line_no = k + 1;
            let err = |msg: String| Error::ConicFormat { line: line_no, msg };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if !seen_header {
                if line != "conic 1" {
                    return Err(err(format!("expected header \"conic 1\", got {line:?}")));
                }
                seen_header = true;
                continue;
            }
            let mut parts = line.split('|').map(str::trim);
            let head: Vec<&str> = parts.next().unwrap_or("").split_whitespace().collect();
            let exprs: Vec<&str> = parts.collect();
            match head.first().copied() {
                Some("var") => {
                    if head.len() != 2 || !exprs.is_empty() {
                        return Err(err("var takes exactly one name".into()));
                    }
                    prog.add_var(head[1]);
                }
                Some("row") => {
                    if head.len() != 4 || exprs.len() != 1 {
                        return Err(err("row needs: tag relation rhs | expr".into()));
                    }
                    let tag = head[1].parse().map_err(err)?;
                    let relation = match head[2] {
                        "eq" => Relation::Eq,
                        "le" => Relation::Le,
                        other => return Err(err(format!("unknown relation {other:?}"))),
                    };
                    let rhs = parse_f64(head[3]).map_err(err)?;
                    let expr = parse_expr(exprs[0]).map_err(err)?;
                    prog.add_row(expr, relation, rhs, tag);
                }
                Some("cone") => {
                    if head.len() != 3 {
                        return Err(err("cone needs: tag n | scalar | v1 .. vn".into()));
                    }
                    let tag = head[1].parse().map_err(err)?;
                    let n: usize = head[2].parse().map_err(|_| err(format!("bad cone size {:?}", head[2])))?;
                    if exprs.len() != n + 1 {
                        return Err(err(format!("cone declares {n} entries but lists {}", exprs.len().saturating_sub(1))));
                    }
                    let scalar = parse_expr(exprs[0]).map_err(err)?;
                    let vector = exprs[1..].iter().map(|e| parse_expr(e)).collect::<std::result::Result<_, _>>().map_err(err)?;
                    prog.add_cone(scalar, vector, tag);
                }
                Some("objective") => {
                    if head.len() != 1 || exprs.len() != 1 {
                        return Err(err("objective needs: objective | expr".into()));
                    }
                    if seen_objective {
                        return Err(err("objective given twice".into()));
                    }
                    prog.objective = parse_expr(exprs[0]).map_err(err)?;
                    seen_objective = true;
                }
                Some(other) => return Err(err(format!("unknown statement {other:?}"))),
                None => return Err(err("empty statement".into())),
            }
        }
        if !seen_header {
            return Err(Error::ConicFormat { line: 0, msg: "missing header".into() });
        }
        prog.validate()?;
        Ok(prog)
    }
}

fn fmt_expr(e: &LinExpr) -> String {
    let mut s = format!("{:e}", e.constant);
    for &(i, c) in &e.terms {
        let _ = write!(s, " {i}:{c:e}");
    }
    s
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    s.parse::<f64>().map_err(|_| format!("bad number {s:?}"))
}

fn parse_expr(s: &str) -> std::result::Result<LinExpr, String> {
    let mut tok = s.split_whitespace();
    let constant = parse_f64(tok.next().ok_or("empty expression")?)?;
    let mut terms = Vec::new();
    for t in tok {
        let (i, c) = t.split_once(':').ok_or_else(|| format!("bad term {t:?}"))?;
        let i = i.parse::<usize>().map_err(|_| format!("bad index {i:?}"))?;
        terms.push((i, parse_f64(c)?));
    }
    Ok(LinExpr { terms, constant })
}
