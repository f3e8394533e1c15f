//! Small dense conic solver and closed-form projections.
//!
//! Models are written over complex Hermitian PSD matrices and nonnegative
//! scalars. Constraints are affine in trace forms `Re tr(C X)`, or real
//! symmetric linear matrix inequalities whose entries are such forms. The
//! objective is affine plus an optional sum of `−w log det F(x)` terms.
//!
//! ```
//! use cfisac::conic::{LinExpr, Lmi, Model, SolveOptions, Status};
//! use nalgebra::DMatrix;
//! use num_complex::Complex64;
//!
//! // min tr X  s.t.  X ⪰ I (as an LMI on X − I)
//! let mut m = Model::new();
//! let x = m.add_herm(2);
//! let id = DMatrix::<Complex64>::identity(2, 2);
//! m.minimize(LinExpr::herm(x, id));
//! let mut lmi = Lmi::new(2);
//! for i in 0..2 {
//!     for j in i..2 {
//!         let mut e = DMatrix::<Complex64>::zeros(2, 2);
//!         e[(i, j)] = Complex64::new(if i == j { 1.0 } else { 0.5 }, 0.0);
//!         e[(j, i)] = e[(i, j)];
//!         lmi.set(i, j, LinExpr::herm(x, e).with_const(if i == j { -1.0 } else { 0.0 }));
//!     }
//! }
//! m.add_lmi(lmi);
//! let sol = m.solve(&SolveOptions::default()).unwrap();
//! assert_eq!(sol.status, Status::Optimal);
//! assert!((sol.objective - 2.0).abs() < 1e-6);
//! ```

mod ipm;
pub mod proj;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::channel::C64;
use crate::error::{Error, Result};
use ipm::{Block, Coef, Kind, StdProblem, Val};
pub use ipm::{Residuals, Status};
pub use proj::{box_project, project_power_ball};

pub type CMat = DMatrix<C64>;

/// Affine form `constant + Σ a·s_i + Σ Re tr(C·X_h)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinExpr {
    pub constant: f64,
    pub scal: Vec<(usize, f64)>,
    pub herm: Vec<(usize, CMat)>,
}

impl LinExpr {
    pub fn zero() -> Self {
        Self::default()
    }
    pub fn constant(c: f64) -> Self {
        Self { constant: c, ..Self::default() }
    }
    pub fn scalar(i: usize, a: f64) -> Self {
        Self { scal: vec![(i, a)], ..Self::default() }
    }
    pub fn herm(h: usize, c: CMat) -> Self {
        Self { herm: vec![(h, c)], ..Self::default() }
    }
    pub fn with_const(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }
    pub fn with_scalar(mut self, i: usize, a: f64) -> Self {
        self.scal.push((i, a));
        self
    }
    pub fn with_herm(mut self, h: usize, c: CMat) -> Self {
        self.herm.push((h, c));
        self
    }
    pub fn add(&mut self, other: &LinExpr, a: f64) {
        self.constant += a * other.constant;
        self.scal.extend(other.scal.iter().map(|&(i, v)| (i, a * v)));
        self.herm.extend(other.herm.iter().map(|(h, c)| (*h, c * C64::from(a))));
    }
    pub fn scaled(&self, a: f64) -> LinExpr {
        let mut e = LinExpr::zero();
        e.add(self, a);
        e
    }
    pub fn eval(&self, herm: &[CMat], scal: &[f64]) -> f64 {
        let mut v = self.constant;
        for &(i, a) in &self.scal {
            v += a * scal[i];
        }
        for (h, c) in &self.herm {
            v += (c * &herm[*h]).trace().re;
        }
        v
    }
}

/// Real symmetric matrix of affine forms; the constraint is `F(x) ⪰ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Lmi {
    pub dim: usize,
    /// Upper triangle, row-major.
    entries: Vec<LinExpr>,
}

impl Lmi {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: vec![LinExpr::zero(); dim * (dim + 1) / 2] }
    }
    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * self.dim - i * i.saturating_sub(1) / 2 + (j - i)
    }
    pub fn set(&mut self, i: usize, j: usize, e: LinExpr) {
        let k = self.idx(i, j);
        self.entries[k] = e;
    }
    pub fn get(&self, i: usize, j: usize) -> &LinExpr {
        &self.entries[self.idx(i, j)]
    }
    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut LinExpr {
        let k = self.idx(i, j);
        &mut self.entries[k]
    }
    pub fn eval(&self, herm: &[CMat], scal: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for j in i..self.dim {
                let v = self.get(i, j).eval(herm, scal);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }
    fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.dim).flat_map(move |i| (i..self.dim).map(move |j| (i, j)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Cap on the summed dimension of Hermitian variables.
    pub dim_cap: usize,
    pub infeas_margin: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 200, dim_cap: 128, infeas_margin: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct ConicSolution {
    pub status: Status,
    pub herm: Vec<CMat>,
    pub scal: Vec<f64>,
    /// Model objective at the returned point, logdet terms included.
    pub objective: f64,
    pub residuals: Residuals,
    pub iterations: usize,
    pub note: String,
}

impl ConicSolution {
    /// Optimal, or stalled with every residual below `loose_tol`.
    pub fn is_usable(&self, loose_tol: f64) -> bool {
        match self.status {
            Status::Optimal => true,
            Status::Infeasible => false,
            Status::MaxIter | Status::NumericalFailure => {
                self.residuals.max() <= loose_tol && self.objective.is_finite()
            }
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Model {
    herm_dims: Vec<usize>,
    n_scal: usize,
    le: Vec<(LinExpr, f64)>,
    eq: Vec<(LinExpr, f64)>,
    lmis: Vec<Lmi>,
    objective: LinExpr,
    logdets: Vec<(f64, Lmi)>,
}

fn realify_sym(c: &CMat) -> DMatrix<f64> {
    // ½·R((C + Cᴴ)/2), so that ⟨coef, R(X)⟩ = Re tr(C X)
    let n = c.nrows();
    let h = (c + c.adjoint()) * C64::from(0.5);
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let v = h[(i, j)] * 0.5;
            out[(i, j)] = v.re;
            out[(i + n, j + n)] = v.re;
            out[(i + n, j)] = v.im;
            out[(i, j + n)] = -v.im;
        }
    }
    out
}

fn log_det(m: &DMatrix<f64>) -> Option<f64> {
    let l = nalgebra::Cholesky::new(m.clone())?.l();
    Some(2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

fn unit_sym(dim: usize, i: usize, j: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(dim, dim);
    if i == j {
        e[(i, i)] = 1.0;
    } else {
        e[(i, j)] = 0.5;
        e[(j, i)] = 0.5;
    }
    e
}

/// Accumulates the per-block coefficients of one standard-form row.
#[derive(Default)]
struct RowBuilder {
    dense: BTreeMap<usize, DMatrix<f64>>,
    sparse: BTreeMap<usize, BTreeMap<usize, f64>>,
}

impl RowBuilder {
    fn dense(&mut self, b: usize, m: DMatrix<f64>, a: f64) {
        match self.dense.get_mut(&b) {
            Some(acc) => *acc += m * a,
            None => {
                self.dense.insert(b, m * a);
            }
        }
    }
    fn sparse(&mut self, b: usize, i: usize, a: f64) {
        *self.sparse.entry(b).or_default().entry(i).or_insert(0.0) += a;
    }
    fn finish(self) -> Vec<(usize, Coef)> {
        let mut out: Vec<(usize, Coef)> = self.dense.into_iter().map(|(b, m)| (b, Coef::Dense(m))).collect();
        out.extend(self.sparse.into_iter().map(|(b, e)| {
            (b, Coef::Sparse(e.into_iter().filter(|&(_, v)| v != 0.0).collect()))
        }));
        out.sort_by_key(|(b, _)| *b);
        out
    }
}

enum Orientation {
    Primal { lin: Option<usize> },
    Dual,
}

impl Model {
    pub fn new() -> Self {
        Self::default()
    }
    /// Adds an `n×n` Hermitian PSD variable and returns its index.
    pub fn add_herm(&mut self, n: usize) -> usize {
        self.herm_dims.push(n);
        self.herm_dims.len() - 1
    }
    /// Adds a nonnegative scalar and returns its index.
    pub fn add_scalar(&mut self) -> usize {
        self.n_scal += 1;
        self.n_scal - 1
    }
    pub fn num_herm(&self) -> usize {
        self.herm_dims.len()
    }
    pub fn num_scalars(&self) -> usize {
        self.n_scal
    }
    pub fn herm_dim(&self, h: usize) -> usize {
        self.herm_dims[h]
    }
    /// `expr ≤ rhs`.
    pub fn add_le(&mut self, expr: LinExpr, rhs: f64) {
        self.le.push((expr, rhs));
    }
    /// `expr ≥ rhs`.
    pub fn add_ge(&mut self, expr: LinExpr, rhs: f64) {
        self.le.push((expr.scaled(-1.0), -rhs));
    }
    pub fn add_eq(&mut self, expr: LinExpr, rhs: f64) {
        self.eq.push((expr, rhs));
    }
    pub fn add_lmi(&mut self, lmi: Lmi) {
        self.lmis.push(lmi);
    }
    pub fn minimize(&mut self, expr: LinExpr) {
        self.objective = expr;
    }
    /// Adds `−w·log det F(x)` to the objective.
    pub fn add_neg_logdet(&mut self, w: f64, f: Lmi) {
        self.logdets.push((w, f));
    }

    /// Objective at a given point; `+∞` if a logdet argument is not PD.
    pub fn objective_at(&self, herm: &[CMat], scal: &[f64]) -> f64 {
        let mut v = self.objective.eval(herm, scal);
        for (w, f) in &self.logdets {
            match log_det(&f.eval(herm, scal)) {
                Some(ld) => v -= w * ld,
                None => return f64::INFINITY,
            }
        }
        v
    }

    fn check(&self, opt: &SolveOptions) -> Result<()> {
        let tot: usize = self.herm_dims.iter().sum();
        if tot > opt.dim_cap {
            return Err(Error::Domain(format!("Hermitian dimension {tot} exceeds cap {}", opt.dim_cap)));
        }
        let check_expr = |e: &LinExpr| -> Result<()> {
            for &(i, a) in &e.scal {
                if i >= self.n_scal || !a.is_finite() {
                    return Err(Error::Build(format!("bad scalar term ({i}, {a})")));
                }
            }
            for (h, c) in &e.herm {
                let n = *self.herm_dims.get(*h).ok_or_else(|| Error::Build(format!("unknown variable {h}")))?;
                if c.nrows() != n || c.ncols() != n {
                    return Err(Error::Build(format!("coefficient of variable {h} is not {n}×{n}")));
                }
                if c.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                    return Err(Error::NonFinite(format!("coefficient of variable {h}")));
                }
            }
            if !e.constant.is_finite() {
                return Err(Error::NonFinite("constant term".into()));
            }
            Ok(())
        };
        check_expr(&self.objective)?;
        for (e, r) in self.le.iter().chain(&self.eq) {
            check_expr(e)?;
            if !r.is_finite() {
                return Err(Error::NonFinite("right-hand side".into()));
            }
        }
        for l in self.lmis.iter().chain(self.logdets.iter().map(|(_, l)| l)) {
            for e in &l.entries {
                check_expr(e)?;
            }
        }
        for (w, _) in &self.logdets {
            if !(*w > 0.0) {
                return Err(Error::Domain("logdet weight must be positive".into()));
            }
        }
        Ok(())
    }

    fn compile(&self) -> (StdProblem, Orientation) {
        if self.herm_dims.is_empty() && self.eq.is_empty() && self.n_scal > 0 {
            self.compile_dual()
        } else {
            self.compile_primal()
        }
    }

    fn compile_primal(&self) -> (StdProblem, Orientation) {
        let mut blocks = Vec::new();
        let mut c = Vec::new();
        for &n in &self.herm_dims {
            blocks.push(Block { kind: Kind::Psd, dim: 2 * n, nu: 0.0 });
            c.push(Val::Psd(DMatrix::zeros(2 * n, 2 * n)));
        }
        let n_lin = self.n_scal + self.le.len();
        let lin = (n_lin > 0).then(|| {
            blocks.push(Block { kind: Kind::Lin, dim: n_lin, nu: 0.0 });
            c.push(Val::Lin(DVector::zeros(n_lin)));
            blocks.len() - 1
        });
        let lmi0 = blocks.len();
        for l in &self.lmis {
            blocks.push(Block { kind: Kind::Psd, dim: l.dim, nu: 0.0 });
            c.push(Val::Psd(DMatrix::zeros(l.dim, l.dim)));
        }
        let ld0 = blocks.len();
        for (w, l) in &self.logdets {
            blocks.push(Block { kind: Kind::Psd, dim: l.dim, nu: *w });
            c.push(Val::Psd(DMatrix::zeros(l.dim, l.dim)));
        }

        for (h, cm) in &self.objective.herm {
            if let Val::Psd(m) = &mut c[*h] {
                *m += realify_sym(cm);
            }
        }
        if let Some(lb) = lin {
            if let Val::Lin(v) = &mut c[lb] {
                for &(i, a) in &self.objective.scal {
                    v[i] += a;
                }
            }
        }

        let push_expr = |rb: &mut RowBuilder, e: &LinExpr| {
            for (h, cm) in &e.herm {
                rb.dense(*h, realify_sym(cm), 1.0);
            }
            for &(i, a) in &e.scal {
                rb.sparse(lin.expect("scalar block"), i, a);
            }
        };

        let mut rows = Vec::new();
        let mut b = Vec::new();
        for (k, (e, r)) in self.le.iter().enumerate() {
            let mut rb = RowBuilder::default();
            push_expr(&mut rb, e);
            rb.sparse(lin.expect("slack block"), self.n_scal + k, 1.0);
            rows.push(rb.finish());
            b.push(r - e.constant);
        }
        for (e, r) in &self.eq {
            let mut rb = RowBuilder::default();
            push_expr(&mut rb, e);
            rows.push(rb.finish());
            b.push(r - e.constant);
        }
        let slack_rows = |blk: usize, l: &Lmi, rows: &mut Vec<Vec<(usize, Coef)>>, b: &mut Vec<f64>| {
            for (i, j) in l.pairs() {
                let e = l.get(i, j);
                let mut rb = RowBuilder::default();
                push_expr(&mut rb, e);
                rb.dense(blk, unit_sym(l.dim, i, j), -1.0);
                rows.push(rb.finish());
                b.push(-e.constant);
            }
        };
        for (t, l) in self.lmis.iter().enumerate() {
            slack_rows(lmi0 + t, l, &mut rows, &mut b);
        }
        for (t, (_, l)) in self.logdets.iter().enumerate() {
            slack_rows(ld0 + t, l, &mut rows, &mut b);
        }
        (StdProblem { blocks, c, rows, b: DVector::from_vec(b) }, Orientation::Primal { lin })
    }

    fn compile_dual(&self) -> (StdProblem, Orientation) {
        let n = self.n_scal;
        let n_le = self.le.len();
        let mut blocks = vec![Block { kind: Kind::Lin, dim: n_le + n, nu: 0.0 }];
        let mut cl = DVector::zeros(n_le + n);
        for (k, (e, r)) in self.le.iter().enumerate() {
            cl[k] = r - e.constant;
        }
        let mut c = vec![Val::Lin(cl)];
        let const_mat = |l: &Lmi| {
            let mut m = DMatrix::zeros(l.dim, l.dim);
            for (i, j) in l.pairs() {
                m[(i, j)] = l.get(i, j).constant;
                m[(j, i)] = m[(i, j)];
            }
            m
        };
        let lmi0 = blocks.len();
        for l in &self.lmis {
            blocks.push(Block { kind: Kind::Psd, dim: l.dim, nu: 0.0 });
            c.push(Val::Psd(const_mat(l)));
        }
        for (w, l) in &self.logdets {
            blocks.push(Block { kind: Kind::Psd, dim: l.dim, nu: *w });
            c.push(Val::Psd(const_mat(l)));
        }

        let mut rows: Vec<RowBuilder> = (0..n).map(|_| RowBuilder::default()).collect();
        for (k, (e, _)) in self.le.iter().enumerate() {
            for &(j, a) in &e.scal {
                rows[j].sparse(0, k, a);
            }
        }
        for (j, rb) in rows.iter_mut().enumerate() {
            rb.sparse(0, n_le + j, -1.0);
        }
        let all: Vec<&Lmi> = self.lmis.iter().chain(self.logdets.iter().map(|(_, l)| l)).collect();
        for (t, l) in all.iter().enumerate() {
            let blk = lmi0 + t;
            for (i, k) in l.pairs() {
                for &(j, a) in &l.get(i, k).scal {
                    let mut e = DMatrix::zeros(l.dim, l.dim);
                    e[(i, k)] = -a;
                    e[(k, i)] = -a;
                    rows[j].dense(blk, e, 1.0);
                }
            }
        }
        let mut b = DVector::zeros(n);
        for &(j, a) in &self.objective.scal {
            b[j] -= a;
        }
        let rows = rows.into_iter().map(RowBuilder::finish).collect();
        (StdProblem { blocks, c, rows, b }, Orientation::Dual)
    }

    /// Solves the model; errors only on malformed input.
    pub fn solve(&self, opt: &SolveOptions) -> Result<ConicSolution> {
        self.check(opt)?;
        let (prob, orient) = self.compile();
        let std = ipm::solve(&prob, &ipm::Options { tol: opt.tol, max_iter: opt.max_iter, infeas_margin: opt.infeas_margin });
        let (herm, scal, status) = match orient {
            Orientation::Primal { lin } => {
                let herm = self
                    .herm_dims
                    .iter()
                    .enumerate()
                    .map(|(h, &n)| {
                        let y = std.x[h].psd();
                        CMat::from_fn(n, n, |i, j| {
                            C64::new(
                                0.5 * (y[(i, j)] + y[(i + n, j + n)]),
                                0.5 * (y[(i + n, j)] - y[(i, j + n)]),
                            )
                        })
                    })
                    .collect();
                let scal = match lin {
                    Some(lb) => std.x[lb].lin().iter().take(self.n_scal).copied().collect(),
                    None => Vec::new(),
                };
                (herm, scal, std.status)
            }
            Orientation::Dual => {
                let status = match (std.status, std.unbounded) {
                    (_, true) => Status::Infeasible,
                    (Status::Infeasible, false) => Status::NumericalFailure,
                    (s, false) => s,
                };
                (Vec::new(), std.y.iter().copied().collect(), status)
            }
        };
        let objective = self.objective_at(&herm, &scal);
        let mut note = std.note;
        if matches!(orient, Orientation::Dual) && std.status == Status::Infeasible && !std.unbounded {
            note = "model unbounded below".into();
        }
        Ok(ConicSolution { status, herm, scal, objective, residuals: std.res, iterations: std.iters, note })
    }

    /// Plain-text listing of the model.
    ///
    /// Lines: `herm <dims...>`, `scalars <n>`, then `objective`, `le`, `eq`
    /// records followed by an expression, and `lmi <dim>` / `logdet <w> <dim>`
    /// headers followed by one `  <i> <j> <expr>` line per upper-triangle
    /// entry. An expression is `c=<const>` then `s<i>:<a>` terms, then
    /// `h<v>:[re,im;...]` terms with rows separated by `;`.
    pub fn dump(&self) -> String {
        let mut s = String::from("cfisac-conic v1\n");
        let dims: Vec<String> = self.herm_dims.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(s, "herm {}", dims.join(" "));
        let _ = writeln!(s, "scalars {}", self.n_scal);
        let _ = writeln!(s, "objective {}", fmt_expr(&self.objective));
        for (e, r) in &self.le {
            let _ = writeln!(s, "le {} <= {r:e}", fmt_expr(e));
        }
        for (e, r) in &self.eq {
            let _ = writeln!(s, "eq {} == {r:e}", fmt_expr(e));
        }
        let entries = |s: &mut String, l: &Lmi| {
            for (i, j) in l.pairs() {
                let _ = writeln!(s, "  {i} {j} {}", fmt_expr(l.get(i, j)));
            }
        };
        for l in &self.lmis {
            let _ = writeln!(s, "lmi {}", l.dim);
            entries(&mut s, l);
        }
        for (w, l) in &self.logdets {
            let _ = writeln!(s, "logdet {w:e} {}", l.dim);
            entries(&mut s, l);
        }
        s
    }
}

fn fmt_expr(e: &LinExpr) -> String {
    let mut s = format!("c={:e}", e.constant);
    for &(i, a) in &e.scal {
        let _ = write!(s, " s{i}:{a:e}");
    }
    for (h, c) in &e.herm {
        let rows: Vec<String> = (0..c.nrows())
            .map(|i| (0..c.ncols()).map(|j| format!("{:e},{:e}", c[(i, j)].re, c[(i, j)].im)).collect::<Vec<_>>().join(" "))
            .collect();
        let _ = write!(s, " h{h}:[{}]", rows.join(";"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cdiag(v: &[f64]) -> CMat {
        CMat::from_diagonal(&nalgebra::DVector::from_iterator(v.len(), v.iter().map(|&x| C64::from(x))))
    }

    fn entry(n: usize, i: usize, j: usize) -> CMat {
        // Re tr(E X) = Re X_ij
        let mut e = CMat::zeros(n, n);
        if i == j {
            e[(i, i)] = C64::from(1.0);
        } else {
            e[(i, j)] = C64::from(0.5);
            e[(j, i)] = C64::from(0.5);
        }
        e
    }

    #[test]
    fn lmi_index_roundtrip() {
        for d in 1..6 {
            let l = Lmi::new(d);
            let mut seen = vec![false; d * (d + 1) / 2];
            for (i, j) in l.pairs() {
                let k = l.idx(i, j);
                assert!(!seen[k]);
                seen[k] = true;
                assert_eq!(k, l.idx(j, i));
            }
        }
    }

    #[test]
    fn trace_min_with_identity_floor() {
        let mut m = Model::new();
        let x = m.add_herm(3);
        m.minimize(LinExpr::herm(x, cdiag(&[1.0; 3])));
        let mut l = Lmi::new(3);
        for i in 0..3 {
            for j in i..3 {
                l.set(i, j, LinExpr::herm(x, entry(3, i, j)).with_const(if i == j { -1.0 } else { 0.0 }));
            }
        }
        m.add_lmi(l);
        let s = m.solve(&SolveOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert!((s.objective - 3.0).abs() < 1e-6);
        assert!((&s.herm[0] - cdiag(&[1.0; 3])).norm() < 1e-5);
    }

    #[test]
    fn min_eigen_problem() {
        let mut m = Model::new();
        let x = m.add_herm(2);
        m.minimize(LinExpr::herm(x, cdiag(&[1.0, 2.0])));
        m.add_eq(LinExpr::herm(x, cdiag(&[1.0, 1.0])), 1.0);
        let s = m.solve(&SolveOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert!((s.objective - 1.0).abs() < 1e-6);
        assert!((s.herm[0][(0, 0)].re - 1.0).abs() < 1e-5);
    }

    #[test]
    fn negative_trace_is_infeasible() {
        let mut m = Model::new();
        let x = m.add_herm(2);
        m.add_le(LinExpr::herm(x, cdiag(&[1.0, 1.0])), -1.0);
        let s = m.solve(&SolveOptions::default()).unwrap();
        assert_eq!(s.status, Status::Infeasible);
    }

    #[test]
    fn scalar_lp_and_infeasible_lp() {
        // min -x0 - x1, x0 + 2 x1 <= 4, 3 x0 + x1 <= 6  -> x = (1.6, 1.2)
        let mut m = Model::new();
        let a = m.add_scalar();
        let b = m.add_scalar();
        m.minimize(LinExpr::scalar(a, -1.0).with_scalar(b, -1.0));
        m.add_le(LinExpr::scalar(a, 1.0).with_scalar(b, 2.0), 4.0);
        m.add_le(LinExpr::scalar(a, 3.0).with_scalar(b, 1.0), 6.0);
        let s = m.solve(&SolveOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert!((s.scal[0] - 1.6).abs() < 1e-5 && (s.scal[1] - 1.2).abs() < 1e-5);

        let mut m = Model::new();
        let a = m.add_scalar();
        m.add_le(LinExpr::scalar(a, 1.0), -1.0);
        let s = m.solve(&SolveOptions::default()).unwrap();
        assert_eq!(s.status, Status::Infeasible);
    }

    #[test]
    fn scalar_logdet() {
        // min x - log x  -> x = 1, objective 1
        let mut m = Model::new();
        let a = m.add_scalar();
        m.minimize(LinExpr::scalar(a, 1.0));
        let mut l = Lmi::new(1);
        l.set(0, 0, LinExpr::scalar(a, 1.0));
        m.add_neg_logdet(1.0, l);
        let s = m.solve(&SolveOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert!((s.scal[0] - 1.0).abs() < 1e-5, "{:?}", s.scal);
        assert!((s.objective - 1.0).abs() < 1e-6);
    }

    #[test]
    fn complex_logdet_maximises_determinant() {
        // max log det X s.t. tr X = 2, X 2×2 Hermitian -> X = I
        let mut m = Model::new();
        let x = m.add_herm(2);
        m.add_eq(LinExpr::herm(x, cdiag(&[1.0, 1.0])), 2.0);
        let mut l = Lmi::new(2);
        for i in 0..2 {
            for j in i..2 {
                l.set(i, j, LinExpr::herm(x, entry(2, i, j)));
            }
        }
        m.add_neg_logdet(1.0, l);
        let s = m.solve(&SolveOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal, "{}", s.note);
        assert!((&s.herm[0] - cdiag(&[1.0, 1.0])).norm() < 1e-5);
    }

    #[test]
    fn complex_coupling_is_respected() {
        // min Re tr(C X), tr X = 1 with C = [[0, j],[−j, 0]]: λ_min(C) = −1
        let mut m = Model::new();
        let x = m.add_herm(2);
        let mut c = CMat::zeros(2, 2);
        c[(0, 1)] = C64::new(0.0, 1.0);
        c[(1, 0)] = C64::new(0.0, -1.0);
        m.minimize(LinExpr::herm(x, c.clone()));
        m.add_eq(LinExpr::herm(x, cdiag(&[1.0, 1.0])), 1.0);
        let s = m.solve(&SolveOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert!((s.objective + 1.0).abs() < 1e-6);
        let v = (&c * &s.herm[0]).trace();
        assert!((v.re + 1.0).abs() < 1e-5);
    }

    #[test]
    fn dimension_cap_is_enforced() {
        let mut m = Model::new();
        m.add_herm(100);
        m.add_herm(40);
        assert!(m.solve(&SolveOptions::default()).is_err());
    }

    #[test]
    fn dump_lists_all_records() {
        let mut m = Model::new();
        let x = m.add_herm(1);
        let a = m.add_scalar();
        m.minimize(LinExpr::scalar(a, 1.0));
        m.add_le(LinExpr::herm(x, cdiag(&[1.0])), 1.0);
        let d = m.dump();
        assert!(d.starts_with("cfisac-conic v1\nherm 1\nscalars 1\nobjective"));
        assert!(d.contains("\nle "));
    }
}
