//! Cone membership tests and the mixed-integer conic model.
//!
//! The model uses one exponential cone per observation for the epigraph
//! `t_i ≥ exp(wᵀx_i + b)` and one rotated quadratic cone per feature for
//! `w_j² ≤ s_j z_j`:
//!
//! ```text
//! min  (1/n) Σ t_i − (1/n) Σ y_i (wᵀx_i + b) + (1/γ) Σ s_j + (1/n) Σ log y_i!
//! s.t. Σ z_j ≤ k,  (t_i, 1, wᵀx_i + b) ∈ K_exp,  (s_j/2, z_j, w_j) ∈ K_rq,
//!      z ∈ {0,1}^m   (plus z_j = 0 / z_j = 1 rows for screened indices)
//! ```
//!
//! # Text format
//!
//! Line oriented, `#` starts a comment line:
//!
//! ```text
//! VAR <name> <count>
//! INT <name> [<name> ...]
//! OBJ <coeff> <var> [<coeff> <var> ...] CONST <c>
//! ROW LIN <le|eq> <rhs> <coeff> <var> [<coeff> <var> ...]
//! ROW EXP <affine> ; <affine> ; <affine>
//! ROW RQUAD <affine> ; <affine> ; <affine>
//! ```
//!
//! A variable reference is `name[index]` (zero-based). An affine expression
//! is `<coeff>*<var> + <coeff>*<var> + ... + <const>`, every token separated
//! by whitespace; a bare number is a constant. Numbers are written as the
//! shortest decimal that round-trips.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::loss::log_factorial;

pub const DEFAULT_CONE_TOL: f64 = 1e-9;

/// Real number or `+∞`. Serializes `+∞` as the string `"+inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtendedReal {
    Finite(f64),
    PosInf,
}

impl ExtendedReal {
    pub fn is_infinite(self) -> bool {
        matches!(self, ExtendedReal::PosInf)
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtendedReal::Finite(v) => Some(v),
            ExtendedReal::PosInf => None,
        }
    }
}

impl Serialize for ExtendedReal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ExtendedReal::Finite(v) => s.serialize_f64(*v),
            ExtendedReal::PosInf => s.serialize_str("+inf"),
        }
    }
}

impl<'de> Deserialize<'de> for ExtendedReal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Tag(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(ExtendedReal::Finite(v)),
            Raw::Tag(t) if t == "+inf" => Ok(ExtendedReal::PosInf),
            Raw::Tag(t) => Err(serde::de::Error::custom(format!("unknown sentinel `{t}`"))),
        }
    }
}

/// Closure of `{(x1, x2, x3) : x2 > 0, x1 ≥ x2 exp(x3 / x2)}`.
pub fn in_exp_cone(x1: f64, x2: f64, x3: f64, tol: f64) -> bool {
    if x2 > tol {
        return x1 >= x2 * (x3 / x2).exp() - tol;
    }
    if x2.abs() <= tol {
        return x1 >= -tol && x3 <= tol;
    }
    false
}

/// `{(x1, x2, x3) : 2 x1 x2 ≥ x3², x1, x2 ≥ 0}`.
pub fn in_rq_cone(x1: f64, x2: f64, x3: f64, tol: f64) -> bool {
    2.0 * x1 * x2 >= x3 * x3 - tol && x1 >= -tol && x2 >= -tol
}

/// `w²/z`, with `0` at `(0, 0)` and `+∞` for `z = 0, w ≠ 0`.
pub fn perspective_value(w: f64, z: f64) -> ExtendedReal {
    if z > 0.0 {
        ExtendedReal::Finite(w * w / z)
    } else if w == 0.0 {
        ExtendedReal::Finite(0.0)
    } else {
        ExtendedReal::PosInf
    }
}

/// Conjugate of the perspective of `w²`: zero on `ζ = −λ²/4`, `+∞` elsewhere.
pub fn fenchel_p_star(lambda: f64, zeta: f64, tol: f64) -> ExtendedReal {
    if (zeta + lambda * lambda / 4.0).abs() <= tol {
        ExtendedReal::Finite(0.0)
    } else {
        ExtendedReal::PosInf
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarDecl {
    pub name: String,
    pub count: usize,
}

/// Scalar variable: `index`-th entry of declared vector `var`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarRef {
    pub var: usize,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub coeff: f64,
    pub var: VarRef,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AffineExpr {
    pub terms: Vec<Term>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(coeff: f64, var: VarRef) -> Self {
        Self {
            terms: vec![Term { coeff, var }],
            constant: 0.0,
        }
    }

    pub fn evaluate(&self, point: &[Vec<f64>]) -> f64 {
        self.constant
            + self
                .terms
                .iter()
                .map(|t| t.coeff * point[t.var.var][t.var.index])
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub sense: Sense,
    pub rhs: f64,
    pub terms: Vec<Term>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConicProblem {
    pub vars: Vec<VarDecl>,
    /// Names of vector variables restricted to {0, 1}.
    pub integer: Vec<String>,
    pub objective: Vec<Term>,
    pub constant_term: f64,
    pub linear_rows: Vec<LinearRow>,
    pub exp_cones: Vec<[AffineExpr; 3]>,
    pub rq_cones: Vec<[AffineExpr; 3]>,
}

/// Variable slots used by [`build_conic_model`].
pub mod slots {
    pub const W: usize = 0;
    pub const B: usize = 1;
    pub const T: usize = 2;
    pub const S: usize = 3;
    pub const Z: usize = 4;
}

impl ConicProblem {
    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }

    pub fn evaluate_objective(&self, point: &[Vec<f64>]) -> f64 {
        self.constant_term
            + self
                .objective
                .iter()
                .map(|t| t.coeff * point[t.var.var][t.var.index])
                .sum::<f64>()
    }

    /// Checks every row, cone and integrality restriction at `point`.
    pub fn is_feasible(&self, point: &[Vec<f64>], tol: f64) -> bool {
        let rows_ok = self.linear_rows.iter().all(|r| {
            let lhs: f64 = r.terms.iter().map(|t| t.coeff * point[t.var.var][t.var.index]).sum();
            match r.sense {
                Sense::Le => lhs <= r.rhs + tol,
                Sense::Eq => (lhs - r.rhs).abs() <= tol,
            }
        });
        let exp_ok = self.exp_cones.iter().all(|c| {
            in_exp_cone(c[0].evaluate(point), c[1].evaluate(point), c[2].evaluate(point), tol)
        });
        let rq_ok = self.rq_cones.iter().all(|c| {
            in_rq_cone(c[0].evaluate(point), c[1].evaluate(point), c[2].evaluate(point), tol)
        });
        let int_ok = self.integer.iter().all(|name| {
            self.var_index(name).map_or(false, |v| {
                point[v].iter().all(|x| x.abs() <= tol || (x - 1.0).abs() <= tol)
            })
        });
        rows_ok && exp_ok && rq_ok && int_ok
    }
}

/// Builds the conic model with `z_j = 0` rows for `fixed0` and `z_j = 1` rows
/// for `fixed1`.
pub fn build_conic_model(
    d: &Dataset,
    gamma: f64,
    k: usize,
    fixed0: &[usize],
    fixed1: &[usize],
) -> Result<ConicProblem> {
    let (n, m) = (d.n(), d.m());
    if let Some(&j) = fixed0.iter().chain(fixed1).find(|&&j| j >= m) {
        return Err(Error::DimensionMismatch(format!(
            "fixed index {j} out of range for {m} features"
        )));
    }
    if let Some(j) = fixed0.iter().find(|j| fixed1.contains(j)) {
        return Err(Error::InvalidConfig(format!("index {j} is fixed to both zero and one")));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidConfig(format!("gamma = {gamma} must be positive")));
    }
    use slots::*;
    let v = |var: usize, index: usize| VarRef { var, index };
    let inv_n = 1.0 / n as f64;

    let vars = vec![
        VarDecl { name: "w".into(), count: m },
        VarDecl { name: "b".into(), count: 1 },
        VarDecl { name: "t".into(), count: n },
        VarDecl { name: "s".into(), count: m },
        VarDecl { name: "z".into(), count: m },
    ];

    let mut yx = vec![0.0; m];
    let y: Vec<f64> = d.y().iter().map(|&c| c as f64).collect();
    d.transpose_mul_into(&y, &mut yx);
    let mut objective = Vec::with_capacity(n + 2 * m + 1);
    objective.extend((0..n).map(|i| Term { coeff: inv_n, var: v(T, i) }));
    objective.extend((0..m).map(|j| Term { coeff: -yx[j] * inv_n, var: v(W, j) }));
    objective.push(Term {
        coeff: -d.mean_count(),
        var: v(B, 0),
    });
    objective.extend((0..m).map(|j| Term { coeff: 1.0 / gamma, var: v(S, j) }));
    let constant_term = d.y().iter().map(|&c| log_factorial(c)).sum::<f64>() * inv_n;

    let mut linear_rows = vec![LinearRow {
        sense: Sense::Le,
        rhs: k as f64,
        terms: (0..m).map(|j| Term { coeff: 1.0, var: v(Z, j) }).collect(),
    }];
    for (set, rhs) in [(fixed0, 0.0), (fixed1, 1.0)] {
        let mut sorted = set.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        for j in sorted {
            linear_rows.push(LinearRow {
                sense: Sense::Eq,
                rhs,
                terms: vec![Term { coeff: 1.0, var: v(Z, j) }],
            });
        }
    }

    let exp_cones = (0..n)
        .map(|i| {
            let row = d.row(i);
            let mut terms: Vec<Term> = (0..m).map(|j| Term { coeff: row[j], var: v(W, j) }).collect();
            terms.push(Term { coeff: 1.0, var: v(B, 0) });
            [
                AffineExpr::var(1.0, v(T, i)),
                AffineExpr::constant(1.0),
                AffineExpr { terms, constant: 0.0 },
            ]
        })
        .collect();
    let rq_cones = (0..m)
        .map(|j| {
            [
                AffineExpr::var(0.5, v(S, j)),
                AffineExpr::var(1.0, v(Z, j)),
                AffineExpr::var(1.0, v(W, j)),
            ]
        })
        .collect();

    Ok(ConicProblem {
        vars,
        integer: vec!["z".into()],
        objective,
        constant_term,
        linear_rows,
        exp_cones,
        rq_cones,
    })
}

fn fmt_num(x: f64) -> String {
    // Debug is the shortest round-trip form and switches to exponents for
    // very large or small magnitudes.
    format!("{x:?}")
}

fn write_var(out: &mut String, p: &ConicProblem, r: VarRef) {
    let _ = write!(out, "{}[{}]", p.vars[r.var].name, r.index);
}

fn write_affine(out: &mut String, p: &ConicProblem, e: &AffineExpr) {
    let mut first = true;
    for t in &e.terms {
        if !first {
            out.push_str(" + ");
        }
        first = false;
        out.push_str(&fmt_num(t.coeff));
        out.push('*');
        write_var(out, p, t.var);
    }
    if first || e.constant != 0.0 {
        if !first {
            out.push_str(" + ");
        }
        out.push_str(&fmt_num(e.constant));
    }
}

fn write_cone_row(out: &mut String, p: &ConicProblem, kind: &str, cone: &[AffineExpr; 3]) {
    out.push_str("ROW ");
    out.push_str(kind);
    for (idx, e) in cone.iter().enumerate() {
        out.push_str(if idx == 0 { " " } else { " ; " });
        write_affine(out, p, e);
    }
    out.push('\n');
}

/// Serializes the model in the text format described in the module docs.
pub fn write_model<W: Write>(p: &ConicProblem, mut sink: W) -> Result<()> {
    let mut line = String::new();
    writeln!(sink, "# mixed-integer conic model")?;
    for v in &p.vars {
        writeln!(sink, "VAR {} {}", v.name, v.count)?;
    }
    if !p.integer.is_empty() {
        writeln!(sink, "INT {}", p.integer.join(" "))?;
    }
    line.push_str("OBJ");
    for t in &p.objective {
        line.push(' ');
        line.push_str(&fmt_num(t.coeff));
        line.push(' ');
        write_var(&mut line, p, t.var);
    }
    let _ = writeln!(line, " CONST {}", fmt_num(p.constant_term));
    sink.write_all(line.as_bytes())?;
    for r in &p.linear_rows {
        line.clear();
        let sense = match r.sense {
            Sense::Le => "le",
            Sense::Eq => "eq",
        };
        let _ = write!(line, "ROW LIN {sense} {}", fmt_num(r.rhs));
        for t in &r.terms {
            line.push(' ');
            line.push_str(&fmt_num(t.coeff));
            line.push(' ');
            write_var(&mut line, p, t.var);
        }
        line.push('\n');
        sink.write_all(line.as_bytes())?;
    }
    for c in &p.exp_cones {
        line.clear();
        write_cone_row(&mut line, p, "EXP", c);
        sink.write_all(line.as_bytes())?;
    }
    for c in &p.rq_cones {
        line.clear();
        write_cone_row(&mut line, p, "RQUAD", c);
        sink.write_all(line.as_bytes())?;
    }
    sink.flush()?;
    Ok(())
}

pub fn export_model(p: &ConicProblem, path: &Path) -> Result<()> {
    write_model(p, BufWriter::new(File::create(path)?))
}

pub fn import_model(path: &Path) -> Result<ConicProblem> {
    parse_model(&std::fs::read_to_string(path)?)
}

struct Cursor<'a> {
    line: usize,
    tokens: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(line: usize, text: &'a str) -> Self {
        let mut tokens = Vec::new();
        let mut start = None;
        for (i, ch) in text.char_indices() {
            if ch.is_whitespace() {
                if let Some(s) = start.take() {
                    tokens.push((s + 1, &text[s..i]));
                }
            } else if start.is_none() {
                start = Some(i);
            }
        }
        if let Some(s) = start {
            tokens.push((s + 1, &text[s..]));
        }
        Self {
            line,
            tokens,
            pos: 0,
        }
    }

    fn err_at(&self, column: usize, message: impl Into<String>) -> Error {
        Error::ModelSyntax {
            line: self.line,
            column,
            message: message.into(),
        }
    }

    fn column(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map_or_else(|| self.tokens.last().map_or(1, |t| t.0 + t.1.len()), |t| t.0)
    }

    fn peek(&self) -> Option<&'a str> {
        self.tokens.get(self.pos).map(|t| t.1)
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let tok = self
            .tokens
            .get(self.pos)
            .copied()
            .ok_or_else(|| self.err_at(self.column(), format!("expected {what}")))?;
        self.pos += 1;
        Ok(tok)
    }

    fn number(&mut self, what: &str) -> Result<f64> {
        let (col, tok) = self.next(what)?;
        tok.parse::<f64>()
            .map_err(|_| self.err_at(col, format!("expected {what}, found `{tok}`")))
    }

    fn done(&self) -> Result<()> {
        match self.tokens.get(self.pos) {
            None => Ok(()),
            Some(&(col, tok)) => Err(self.err_at(col, format!("unexpected token `{tok}`"))),
        }
    }
}

fn parse_var(cur: &Cursor, p: &ConicProblem, col: usize, tok: &str) -> Result<VarRef> {
    let open = tok.find('[');
    let (name, rest) = match open {
        Some(i) if tok.ends_with(']') => (&tok[..i], &tok[i + 1..tok.len() - 1]),
        _ => return Err(cur.err_at(col, format!("expected `name[index]`, found `{tok}`"))),
    };
    let var = p
        .var_index(name)
        .ok_or_else(|| cur.err_at(col, format!("undeclared variable `{name}`")))?;
    let index: usize = rest
        .parse()
        .map_err(|_| cur.err_at(col, format!("bad index in `{tok}`")))?;
    if index >= p.vars[var].count {
        return Err(cur.err_at(
            col,
            format!("index {index} out of range for `{name}` of size {}", p.vars[var].count),
        ));
    }
    Ok(VarRef { var, index })
}

fn parse_affine(cur: &mut Cursor, p: &ConicProblem) -> Result<AffineExpr> {
    let mut expr = AffineExpr::default();
    let mut seen_constant = false;
    loop {
        let (col, tok) = cur.next("affine term")?;
        if let Some((coeff, var)) = tok.split_once('*') {
            let coeff: f64 = coeff
                .parse()
                .map_err(|_| cur.err_at(col, format!("bad coefficient in `{tok}`")))?;
            let var = parse_var(cur, p, col + tok.find('*').unwrap() + 1, var)?;
            expr.terms.push(Term { coeff, var });
        } else {
            if seen_constant {
                return Err(cur.err_at(col, "affine expression has two constants"));
            }
            expr.constant = tok
                .parse()
                .map_err(|_| cur.err_at(col, format!("expected `coeff*var` or a number, found `{tok}`")))?;
            seen_constant = true;
        }
        match cur.peek() {
            Some("+") => {
                cur.pos += 1;
            }
            _ => return Ok(expr),
        }
    }
}

fn parse_cone(cur: &mut Cursor, p: &ConicProblem) -> Result<[AffineExpr; 3]> {
    let a = parse_affine(cur, p)?;
    for _ in 0..1 {
        let (col, tok) = cur.next("`;`")?;
        if tok != ";" {
            return Err(cur.err_at(col, format!("expected `;`, found `{tok}`")));
        }
    }
    let b = parse_affine(cur, p)?;
    let (col, tok) = cur.next("`;`")?;
    if tok != ";" {
        return Err(cur.err_at(col, format!("expected `;`, found `{tok}`")));
    }
    let c = parse_affine(cur, p)?;
    cur.done()?;
    Ok([a, b, c])
}

fn parse_pairs(cur: &mut Cursor, p: &ConicProblem, stop: Option<&str>) -> Result<Vec<Term>> {
    let mut terms = Vec::new();
    while let Some(tok) = cur.peek() {
        if Some(tok) == stop {
            break;
        }
        let coeff = cur.number("coefficient")?;
        let (col, tok) = cur.next("variable")?;
        let var = parse_var(cur, p, col, tok)?;
        terms.push(Term { coeff, var });
    }
    Ok(terms)
}

/// Parses the text format; errors carry 1-based line and column.
pub fn parse_model(text: &str) -> Result<ConicProblem> {
    let mut p = ConicProblem::default();
    let mut seen_obj = false;
    for (idx, raw) in text.lines().enumerate() {
        let mut cur = Cursor::new(idx + 1, raw);
        let Some((col, head)) = cur.tokens.first().copied() else {
            continue;
        };
        if head.starts_with('#') {
            continue;
        }
        cur.pos = 1;
        match head {
            "VAR" => {
                let (c, name) = cur.next("variable name")?;
                if p.var_index(name).is_some() {
                    return Err(cur.err_at(c, format!("variable `{name}` declared twice")));
                }
                let (c, count) = cur.next("variable count")?;
                let count: usize = count
                    .parse()
                    .map_err(|_| cur.err_at(c, format!("bad count `{count}`")))?;
                cur.done()?;
                p.vars.push(VarDecl {
                    name: name.to_string(),
                    count,
                });
            }
            "INT" => {
                while let Some((c, name)) = cur.tokens.get(cur.pos).copied() {
                    if p.var_index(name).is_none() {
                        return Err(cur.err_at(c, format!("undeclared variable `{name}`")));
                    }
                    p.integer.push(name.to_string());
                    cur.pos += 1;
                }
            }
            "OBJ" => {
                if seen_obj {
                    return Err(cur.err_at(col, "second OBJ line"));
                }
                seen_obj = true;
                p.objective = parse_pairs(&mut cur, &p, Some("CONST"))?;
                if cur.peek() == Some("CONST") {
                    cur.pos += 1;
                    p.constant_term = cur.number("constant")?;
                }
                cur.done()?;
            }
            "ROW" => {
                let (c, kind) = cur.next("row kind")?;
                match kind {
                    "LIN" => {
                        let (c, sense) = cur.next("`le` or `eq`")?;
                        let sense = match sense {
                            "le" => Sense::Le,
                            "eq" => Sense::Eq,
                            other => {
                                return Err(cur.err_at(c, format!("unknown sense `{other}`")))
                            }
                        };
                        let rhs = cur.number("right-hand side")?;
                        let terms = parse_pairs(&mut cur, &p, None)?;
                        p.linear_rows.push(LinearRow { sense, rhs, terms });
                    }
                    "EXP" => {
                        let cone = parse_cone(&mut cur, &p)?;
                        p.exp_cones.push(cone);
                    }
                    "RQUAD" => {
                        let cone = parse_cone(&mut cur, &p)?;
                        p.rq_cones.push(cone);
                    }
                    other => return Err(cur.err_at(c, format!("unknown row kind `{other}`"))),
                }
            }
            other => return Err(cur.err_at(col, format!("unknown keyword `{other}`"))),
        }
    }
    Ok(p)
}
