//! Primal-dual interior-point method for block semidefinite programs in
//! standard form:
//!
//! ```text
//! min  Σ_b ⟨C_b, X_b⟩ − Σ_{b∈L} ν_b log det X_b   s.t.  A(X) = b,  X_b ⪰ 0
//! max  bᵀy + Σ_{b∈L} ν_b log det Z_b + const     s.t.  C − A*(y) = Z ⪰ 0
//! ```
//!
//! Blocks are dense symmetric (`Psd`) or diagonal (`Lin`). Search directions
//! use Nesterov-Todd scaling; the centering weight follows Mehrotra's rule.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Kind {
    Psd,
    Lin,
}

#[derive(Clone, Debug)]
pub(crate) struct Block {
    pub kind: Kind,
    pub dim: usize,
    /// Weight of `−log det` in the primal objective (0 for plain blocks).
    pub nu: f64,
}

/// Coefficient of one row on one block.
#[derive(Clone, Debug)]
pub(crate) enum Coef {
    Dense(DMatrix<f64>),
    Sparse(Vec<(usize, f64)>),
}

#[derive(Clone, Debug)]
pub(crate) enum Val {
    Psd(DMatrix<f64>),
    Lin(DVector<f64>),
}

impl Val {
    fn zeros(b: &Block) -> Val {
        match b.kind {
            Kind::Psd => Val::Psd(DMatrix::zeros(b.dim, b.dim)),
            Kind::Lin => Val::Lin(DVector::zeros(b.dim)),
        }
    }
    fn ident(b: &Block, s: f64) -> Val {
        match b.kind {
            Kind::Psd => Val::Psd(DMatrix::identity(b.dim, b.dim) * s),
            Kind::Lin => Val::Lin(DVector::from_element(b.dim, s)),
        }
    }
    fn dot(&self, o: &Val) -> f64 {
        match (self, o) {
            (Val::Psd(a), Val::Psd(b)) => a.dot(b),
            (Val::Lin(a), Val::Lin(b)) => a.dot(b),
            _ => unreachable!("block kind mismatch"),
        }
    }
    fn norm2(&self) -> f64 {
        self.dot(self)
    }
    fn axpy(&mut self, a: f64, o: &Val) {
        match (self, o) {
            (Val::Psd(x), Val::Psd(y)) => *x += y * a,
            (Val::Lin(x), Val::Lin(y)) => x.axpy(a, y, 1.0),
            _ => unreachable!("block kind mismatch"),
        }
    }
    pub fn psd(&self) -> &DMatrix<f64> {
        match self {
            Val::Psd(m) => m,
            Val::Lin(_) => panic!("not a PSD block"),
        }
    }
    pub fn lin(&self) -> &DVector<f64> {
        match self {
            Val::Lin(v) => v,
            Val::Psd(_) => panic!("not a linear block"),
        }
    }
}

fn coef_dot(c: &Coef, v: &Val) -> f64 {
    match (c, v) {
        (Coef::Dense(a), Val::Psd(x)) => a.dot(x),
        (Coef::Sparse(e), Val::Lin(x)) => e.iter().map(|&(i, a)| a * x[i]).sum(),
        _ => unreachable!("coefficient kind mismatch"),
    }
}

fn coef_axpy(out: &mut Val, a: f64, c: &Coef) {
    match (out, c) {
        (Val::Psd(x), Coef::Dense(m)) => *x += m * a,
        (Val::Lin(x), Coef::Sparse(e)) => {
            for &(i, v) in e {
                x[i] += a * v;
            }
        }
        _ => unreachable!("coefficient kind mismatch"),
    }
}

fn coef_norm2(c: &Coef) -> f64 {
    match c {
        Coef::Dense(m) => m.norm_squared(),
        Coef::Sparse(e) => e.iter().map(|&(_, v)| v * v).sum(),
    }
}

#[derive(Clone, Debug)]
pub(crate) struct StdProblem {
    pub blocks: Vec<Block>,
    pub c: Vec<Val>,
    /// `rows[i]` lists `(block, coefficient)` pairs.
    pub rows: Vec<Vec<(usize, Coef)>>,
    pub b: DVector<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Status {
    Optimal,
    Infeasible,
    MaxIter,
    NumericalFailure,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Residuals {
    /// `‖b − A(X)‖ / (1 + ‖b‖)`.
    pub primal: f64,
    /// `‖C − A*(y) − Z‖ / (1 + ‖C‖)`.
    pub dual: f64,
    /// `|pobj − dobj| / max(1, |pobj|, |dobj|)`.
    pub gap: f64,
    /// Complementarity measure relative to the objective scale.
    pub compl: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.gap).max(self.compl)
    }
}

pub(crate) struct StdSolution {
    pub x: Vec<Val>,
    pub y: DVector<f64>,
    pub z: Vec<Val>,
    pub status: Status,
    pub res: Residuals,
    pub iters: usize,
    pub pobj: f64,
    pub dobj: f64,
    pub note: String,
    /// A primal ray was found (the standard-form primal is unbounded).
    pub unbounded: bool,
}

struct Work<'a> {
    p: &'a StdProblem,
    /// rows touching each block: (row, index into rows[row])
    touch: Vec<Vec<(usize, usize)>>,
    n_tot: f64,
}

impl<'a> Work<'a> {
    fn new(p: &'a StdProblem) -> Self {
        let mut touch = vec![Vec::new(); p.blocks.len()];
        for (i, row) in p.rows.iter().enumerate() {
            for (t, (b, _)) in row.iter().enumerate() {
                touch[*b].push((i, t));
            }
        }
        let n_tot = p.blocks.iter().map(|b| b.dim as f64).sum::<f64>().max(1.0);
        Self { p, touch, n_tot }
    }

    fn a_op(&self, x: &[Val]) -> DVector<f64> {
        DVector::from_iterator(
            self.p.rows.len(),
            self.p.rows.iter().map(|row| row.iter().map(|(b, c)| coef_dot(c, &x[*b])).sum::<f64>()),
        )
    }

    fn at_op(&self, y: &DVector<f64>) -> Vec<Val> {
        let mut out: Vec<Val> = self.p.blocks.iter().map(Val::zeros).collect();
        for (i, row) in self.p.rows.iter().enumerate() {
            if y[i] != 0.0 {
                for (b, c) in row {
                    coef_axpy(&mut out[*b], y[i], c);
                }
            }
        }
        out
    }
}

fn chol(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    Cholesky::new(m.clone()).map(|c| c.l())
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// NT scaling per block: `W` with `W Z W = X` (dense), or `x/z` (diagonal).
fn nt_scaling(blocks: &[Block], x: &[Val], z: &[Val]) -> Option<Vec<Val>> {
    let mut out = Vec::with_capacity(blocks.len());
    for (bi, blk) in blocks.iter().enumerate() {
        match blk.kind {
            Kind::Psd => {
                let l = chol(x[bi].psd())?;
                let r = chol(z[bi].psd())?;
                let svd = (r.transpose() * &l).svd(true, true);
                let v = svd.v_t?.transpose();
                let s = svd.singular_values;
                if s.iter().any(|&v| !(v > 0.0)) {
                    return None;
                }
                let mut g = &l * v;
                for (j, mut col) in g.column_iter_mut().enumerate() {
                    col /= s[j].sqrt();
                }
                out.push(Val::Psd(sym(&g * g.transpose())));
            }
            Kind::Lin => {
                let (xv, zv) = (x[bi].lin(), z[bi].lin());
                out.push(Val::Lin(xv.zip_map(zv, |a, b| a / b)));
            }
        }
    }
    Some(out)
}

fn inv_psd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    Cholesky::new(m.clone()).map(|c| sym(c.inverse()))
}

fn log_det_psd(m: &DMatrix<f64>) -> Option<f64> {
    let l = chol(m)?;
    Some(2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Largest step in `[0, ∞)` keeping `x + α dx` in the cone.
fn max_step(blocks: &[Block], x: &[Val], dx: &[Val]) -> f64 {
    let mut alpha = f64::INFINITY;
    for (bi, blk) in blocks.iter().enumerate() {
        match blk.kind {
            Kind::Psd => {
                let Some(l) = chol(x[bi].psd()) else { return 0.0 };
                let li = l.clone().try_inverse().unwrap_or_else(|| DMatrix::zeros(blk.dim, blk.dim));
                let m = sym(&li * dx[bi].psd() * li.transpose());
                let lam = SymmetricEigen::new(m).eigenvalues.min();
                if lam < 0.0 {
                    alpha = alpha.min(-1.0 / lam);
                }
            }
            Kind::Lin => {
                for (xi, di) in x[bi].lin().iter().zip(dx[bi].lin().iter()) {
                    if *di < 0.0 {
                        alpha = alpha.min(-xi / di);
                    }
                }
            }
        }
    }
    alpha
}

enum SchurSolver {
    Chol(Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl SchurSolver {
    fn solve(&self, r: &DVector<f64>) -> DVector<f64> {
        match self {
            SchurSolver::Chol(c) => c.solve(r),
            SchurSolver::Lu(l) => l.solve(r).unwrap_or_else(|| DVector::from_element(r.len(), f64::NAN)),
        }
    }
}

struct Dir {
    dx: Vec<Val>,
    dy: DVector<f64>,
    dz: Vec<Val>,
}

pub(crate) struct Options {
    pub tol: f64,
    pub max_iter: usize,
    pub infeas_margin: f64,
}

/// Row-equilibrates and rescales the objective, solves, then maps the
/// iterates back to the original problem.
pub(crate) fn solve(p: &StdProblem, opt: &Options) -> StdSolution {
    let row_scale: Vec<f64> = p
        .rows
        .iter()
        .map(|r| {
            let n = r.iter().map(|(_, c)| coef_norm2(c)).sum::<f64>().sqrt();
            if n > 0.0 { 1.0 / n } else { 1.0 }
        })
        .collect();
    let c_max = p.c.iter().map(|v| v.norm2()).sum::<f64>().sqrt();
    let s = 1.0 / c_max.max(1.0);
    let mut q = p.clone();
    for (row, &r) in q.rows.iter_mut().zip(&row_scale) {
        for (_, c) in row.iter_mut() {
            match c {
                Coef::Dense(m) => *m *= r,
                Coef::Sparse(e) => e.iter_mut().for_each(|(_, v)| *v *= r),
            }
        }
    }
    for (bi, r) in row_scale.iter().enumerate() {
        q.b[bi] *= r;
    }
    for c in q.c.iter_mut() {
        match c {
            Val::Psd(m) => *m *= s,
            Val::Lin(v) => *v *= s,
        }
    }
    for b in q.blocks.iter_mut() {
        b.nu *= s;
    }
    let mut sol = solve_core(&q, opt);
    for (i, r) in row_scale.iter().enumerate() {
        sol.y[i] *= r / s;
    }
    for z in sol.z.iter_mut() {
        match z {
            Val::Psd(m) => *m /= s,
            Val::Lin(v) => *v /= s,
        }
    }
    sol.pobj /= s;
    sol.dobj /= s;
    sol
}

fn solve_core(p: &StdProblem, opt: &Options) -> StdSolution {
    let w = Work::new(p);
    let m = p.rows.len();
    let nb = p.blocks.len();

    let b_norm = p.b.norm();
    let c_norm = p.c.iter().map(|v| v.norm2()).sum::<f64>().sqrt();
    let a_norms: Vec<f64> = p.rows.iter().map(|r| r.iter().map(|(_, c)| coef_norm2(c)).sum::<f64>().sqrt()).collect();
    let nmax = p.blocks.iter().map(|b| b.dim).max().unwrap_or(1) as f64;
    let mut xi = 10f64.max(nmax.sqrt());
    for i in 0..m {
        xi = xi.max((1.0 + p.b[i].abs()) / (1.0 + a_norms[i]));
    }
    let mut eta = 10f64.max(nmax.sqrt()).max(c_norm.sqrt());
    for &a in &a_norms {
        eta = eta.max(a);
    }
    let nu_max = p.blocks.iter().map(|b| b.nu).fold(0.0, f64::max);
    eta = eta.max(4.0 * nu_max / xi);

    let mut x: Vec<Val> = p.blocks.iter().map(|b| Val::ident(b, xi)).collect();
    let mut z: Vec<Val> = p.blocks.iter().map(|b| Val::ident(b, eta)).collect();
    let mut y = DVector::zeros(m);

    let mut status = Status::MaxIter;
    let mut note = String::new();
    let mut res = Residuals::default();
    let (mut pobj, mut dobj) = (0.0, 0.0);
    let mut iters = 0;
    let mut unbounded = false;

    for it in 0..=opt.max_iter {
        iters = it;
        // residuals
        let ax = w.a_op(&x);
        let rp = &p.b - &ax;
        let aty = w.at_op(&y);
        let mut rd: Vec<Val> = p.c.clone();
        for bi in 0..nb {
            rd[bi].axpy(-1.0, &aty[bi]);
            rd[bi].axpy(-1.0, &z[bi]);
        }
        let rd_norm = rd.iter().map(|v| v.norm2()).sum::<f64>().sqrt();

        let mut compl = 0.0;
        let mut pl = 0.0;
        let mut dl = 0.0;
        let mut ok = true;
        for (bi, blk) in p.blocks.iter().enumerate() {
            let xz = x[bi].dot(&z[bi]);
            if blk.nu > 0.0 {
                let (Some(lx), Some(lz)) = (log_det_psd(x[bi].psd()), log_det_psd(z[bi].psd())) else {
                    ok = false;
                    break;
                };
                let n = blk.dim as f64;
                pl -= blk.nu * lx;
                dl += blk.nu * (n - n * blk.nu.ln() + lz);
                compl += (xz - blk.nu * (lx + lz - n * blk.nu.ln()) - blk.nu * n).max(0.0);
            } else {
                compl += xz;
            }
        }
        if !ok {
            status = Status::NumericalFailure;
            note = "lost positive definiteness".into();
            break;
        }
        pobj = p.c.iter().zip(&x).map(|(c, xv)| c.dot(xv)).sum::<f64>() + pl;
        dobj = p.b.dot(&y) + dl;
        let scale = pobj.abs().max(dobj.abs()).max(1.0);
        res = Residuals {
            primal: rp.norm() / (1.0 + b_norm),
            dual: rd_norm / (1.0 + c_norm),
            gap: (pobj - dobj).abs() / scale,
            compl: compl / scale,
        };
        if !res.max().is_finite() {
            status = Status::NumericalFailure;
            note = "non-finite iterate".into();
            break;
        }
        if res.max() <= opt.tol {
            status = Status::Optimal;
            break;
        }
        // infeasibility certificates
        let by = p.b.dot(&y);
        if by > 0.0 {
            let mut r = aty.clone();
            for bi in 0..nb {
                r[bi].axpy(1.0, &z[bi]);
            }
            let rn = r.iter().map(|v| v.norm2()).sum::<f64>().sqrt();
            if rn / by <= opt.infeas_margin {
                status = Status::Infeasible;
                note = "dual ray certifies primal infeasibility".into();
                break;
            }
        }
        let cx: f64 = p.c.iter().zip(&x).map(|(c, xv)| c.dot(xv)).sum();
        let x_norm = x.iter().map(|v| v.norm2()).sum::<f64>().sqrt();
        if cx < 0.0 && x_norm > 1e8 && ax.norm() / -cx <= opt.infeas_margin {
            status = Status::NumericalFailure;
            note = "primal ray: problem unbounded".into();
            unbounded = true;
            break;
        }
        if it == opt.max_iter {
            break;
        }

        // Newton system
        let Some(scal) = nt_scaling(&p.blocks, &x, &z) else {
            status = Status::NumericalFailure;
            note = "scaling failed".into();
            break;
        };
        let mut mm = DMatrix::<f64>::zeros(m, m);
        for (bi, blk) in p.blocks.iter().enumerate() {
            let t = &w.touch[bi];
            let mut add = |u: usize, v: usize, val: f64| {
                let (i, j) = (t[u].0, t[v].0);
                mm[(i, j)] += val;
                if u != v {
                    mm[(j, i)] += val;
                }
            };
            match blk.kind {
                Kind::Psd => {
                    let wb = scal[bi].psd();
                    let coefs: Vec<&DMatrix<f64>> = t
                        .iter()
                        .map(|&(i, ti)| match &p.rows[i][ti].1 {
                            Coef::Dense(a) => a,
                            Coef::Sparse(_) => unreachable!("dense coefficient expected"),
                        })
                        .collect();
                    for u in 0..t.len() {
                        let prod = wb * coefs[u] * wb;
                        for v in u..t.len() {
                            add(u, v, coefs[v].dot(&prod));
                        }
                    }
                }
                Kind::Lin => {
                    let d = scal[bi].lin();
                    // scatter each row into a dense work vector once
                    let mut dense = vec![0.0; blk.dim];
                    let coefs: Vec<&Vec<(usize, f64)>> = t
                        .iter()
                        .map(|&(i, ti)| match &p.rows[i][ti].1 {
                            Coef::Sparse(e) => e,
                            Coef::Dense(_) => unreachable!("sparse coefficient expected"),
                        })
                        .collect();
                    for u in 0..t.len() {
                        for &(a, va) in coefs[u] {
                            dense[a] += va * d[a];
                        }
                        for v in u..t.len() {
                            let val: f64 = coefs[v].iter().map(|&(a, vb)| vb * dense[a]).sum();
                            if val != 0.0 {
                                add(u, v, val);
                            }
                        }
                        for &(a, _) in coefs[u] {
                            dense[a] = 0.0;
                        }
                    }
                }
            }
        }
        let diag_max = (0..m).map(|i| mm[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
        let schur = match Cholesky::new(mm.clone()).or_else(|| {
            let mut r = mm.clone();
            for i in 0..m {
                r[(i, i)] += 1e-12 * diag_max;
            }
            Cholesky::new(r)
        }) {
            Some(c) => SchurSolver::Chol(c),
            None => SchurSolver::Lu(mm.clone().lu()),
        };

        let zinv: Option<Vec<Val>> = p
            .blocks
            .iter()
            .enumerate()
            .map(|(bi, blk)| match blk.kind {
                Kind::Psd => inv_psd(z[bi].psd()).map(Val::Psd),
                Kind::Lin => Some(Val::Lin(z[bi].lin().map(|v| 1.0 / v))),
            })
            .collect();
        let Some(zinv) = zinv else {
            status = Status::NumericalFailure;
            note = "dual slack singular".into();
            break;
        };

        let w_apply = |bi: usize, r: &Val| -> Val {
            match (&scal[bi], r) {
                (Val::Psd(wb), Val::Psd(rm)) => Val::Psd(sym(wb * rm * wb)),
                (Val::Lin(d), Val::Lin(rv)) => Val::Lin(d.component_mul(rv)),
                _ => unreachable!(),
            }
        };
        let wrdw: Vec<Val> = (0..nb).map(|bi| w_apply(bi, &rd[bi])).collect();
        let a_wrdw = w.a_op(&wrdw);

        let direction = |sig_mu: f64| -> Dir {
            let rc: Vec<Val> = p
                .blocks
                .iter()
                .enumerate()
                .map(|(bi, blk)| {
                    let tgt = sig_mu + blk.nu;
                    let mut v = zinv[bi].clone();
                    match &mut v {
                        Val::Psd(mv) => *mv *= tgt,
                        Val::Lin(vv) => *vv *= tgt,
                    }
                    v.axpy(-1.0, &x[bi]);
                    v
                })
                .collect();
            let rhs = &rp - w.a_op(&rc) + &a_wrdw;
            let dy = schur.solve(&rhs);
            let atdy = w.at_op(&dy);
            let mut dz = rd.clone();
            let mut dx = rc;
            for bi in 0..nb {
                dz[bi].axpy(-1.0, &atdy[bi]);
                let wdzw = w_apply(bi, &dz[bi]);
                dx[bi].axpy(-1.0, &wdzw);
            }
            Dir { dx, dy, dz }
        };

        let mu = compl_measure(&p.blocks, &x, &z) / w.n_tot;
        let aff = direction(0.0);
        if aff.dy.iter().any(|v| !v.is_finite()) {
            status = Status::NumericalFailure;
            note = "Schur solve produced non-finite values".into();
            break;
        }
        let ap = max_step(&p.blocks, &x, &aff.dx).min(1.0);
        let ad = max_step(&p.blocks, &z, &aff.dz).min(1.0);
        let mut xa = x.clone();
        let mut za = z.clone();
        for bi in 0..nb {
            xa[bi].axpy(ap, &aff.dx[bi]);
            za[bi].axpy(ad, &aff.dz[bi]);
        }
        let mu_aff = compl_measure(&p.blocks, &xa, &za) / w.n_tot;
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3).clamp(0.0, 1.0) } else { 0.1 };
        let dir = direction(sigma * mu);

        let ap = (0.95 * max_step(&p.blocks, &x, &dir.dx)).min(1.0);
        let ad = (0.95 * max_step(&p.blocks, &z, &dir.dz)).min(1.0);
        if !(ap > 1e-14 || ad > 1e-14) {
            status = Status::NumericalFailure;
            note = "step length collapsed".into();
            break;
        }
        for bi in 0..nb {
            x[bi].axpy(ap, &dir.dx[bi]);
            z[bi].axpy(ad, &dir.dz[bi]);
            if let Val::Psd(mv) = &mut x[bi] {
                *mv = sym(mv.clone());
            }
            if let Val::Psd(mv) = &mut z[bi] {
                *mv = sym(mv.clone());
            }
        }
        y.axpy(ad, &dir.dy, 1.0);
    }

    StdSolution { x, y, z, status, res, iters, pobj, dobj, note, unbounded }
}

fn compl_measure(blocks: &[Block], x: &[Val], z: &[Val]) -> f64 {
    blocks
        .iter()
        .enumerate()
        .map(|(bi, b)| {
            let xz = x[bi].dot(&z[bi]);
            if b.nu > 0.0 {
                (xz - b.nu * b.dim as f64).abs()
            } else {
                xz
            }
        })
        .sum()
}
