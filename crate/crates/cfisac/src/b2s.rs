//! Alternating SDR beamforming and SCA association updates with rank-one
//! recovery, binarisation and an exact CRB check of the final design.
//!
//! Covariances are optimised in units of `P_max` and SINR rows are divided
//! by `σ²`; every sensing block is rescaled by a fixed diagonal so that the
//! solver sees entries of order one.

use std::time::Instant;

use nalgebra::{DMatrix, Matrix2, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSet, CVec, C64};
use crate::conic::{project_power_ball, CMat, LinExpr, Lmi, Model, SolveOptions, Status};
use crate::error::{Error, Result};
use crate::fim::{crb_report, phi, CrbReport, J11Map};
use crate::params::SystemParams;
use crate::rng::stream;
use crate::signal::{sinr, IsacDesign};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct B2sConfig {
    pub eps_bcd: f64,
    pub max_iter: usize,
    pub tau_delta: f64,
    /// Weight of the `ℓ1` association regulariser.
    pub psi_weight: f64,
    pub samples: usize,
    pub bin_threshold: f64,
    /// Price on `Σ tr W_k` (in `P_max` units) that pins down flat directions.
    pub power_price: f64,
    /// Multiplier applied to `λ_k` on SINR slacks and to sensing slacks.
    pub slack_penalty: f64,
    pub rank_tol: f64,
    /// Residual level at which a stalled solve is still accepted.
    pub loose_tol: f64,
    pub update_association: bool,
    /// Sensing objective and CRB surrogate on (ISAC) or off (comm-only,
    /// minimum power).
    pub sensing: bool,
    pub solver: SolveOptions,
}

impl Default for B2sConfig {
    fn default() -> Self {
        Self {
            eps_bcd: 1e-3,
            max_iter: 50,
            tau_delta: 0.1,
            psi_weight: 0.0,
            samples: 50,
            bin_threshold: 0.5,
            power_price: 1e-3,
            slack_penalty: 10.0,
            rank_tol: 1e-6,
            loose_tol: 1e-4,
            update_association: true,
            sensing: true,
            solver: SolveOptions::default(),
        }
    }
}

impl B2sConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_bcd > 0.0) || self.max_iter == 0 || self.tau_delta < 0.0 || !(self.solver.tol > 0.0) {
            return Err(Error::Config("B2S tolerances must be positive and max_iter ≥ 1".into()));
        }
        if !(0.0..=1.0).contains(&self.bin_threshold) {
            return Err(Error::Config("binarisation threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Problem data for one run.
#[derive(Clone, Debug)]
pub struct B2sInput<'a> {
    pub ch: &'a ChannelSet,
    pub params: &'a SystemParams,
    /// Candidate association `ξ[m][k]`.
    pub xi: Vec<Vec<bool>>,
    /// Pairs `(m, s)` entering the sensing objective and CRB surrogate.
    pub sense: Vec<Vec<bool>>,
    /// Pairs `(m, s)` used for the exact CRB report.
    pub eval_mask: Vec<Vec<bool>>,
    pub q_sen: Vec<CMat>,
    /// Slack weights `λ_k`.
    pub lambda: Vec<f64>,
    /// Initial beamformers `w[m][k]`; scaled MRT when absent.
    pub warm: Option<Vec<Vec<CVec>>>,
    /// Seed of the randomisation stream.
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlackMode {
    None,
    Sinr,
    SinrAndSensing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub slack: SlackMode,
    pub pw_status: Status,
    pub pw_residual: f64,
    pub pd_status: Option<Status>,
    pub pd_residual: f64,
    pub max_delta_change: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct B2sTrace {
    /// `J⁽⁰⁾`, `+inf` when the initial point is not feasible.
    pub initial_objective: f64,
    pub rows: Vec<TraceRow>,
    /// Wall-clock seconds per iteration: (beamforming, association).
    pub stage_seconds: Vec<(f64, f64)>,
    pub status: String,
}

impl B2sTrace {
    pub fn objectives(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.objective).collect()
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["iter", "objective", "slack", "pw_status", "pw_residual", "pd_status", "pd_residual", "max_delta_change"])?;
        for r in &self.rows {
            w.write_record([
                r.iter.to_string(),
                format!("{:.12e}", r.objective),
                format!("{:?}", r.slack),
                format!("{:?}", r.pw_status),
                format!("{:.3e}", r.pw_residual),
                r.pd_status.map_or("-".into(), |s| format!("{s:?}")),
                format!("{:.3e}", r.pd_residual),
                format!("{:.6e}", r.max_delta_change),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_timing_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["iter", "beamforming_s", "association_s"])?;
        for (i, (a, b)) in self.stage_seconds.iter().enumerate() {
            w.write_record([i.to_string(), format!("{a:.6}"), format!("{b:.6}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Checks of the final binary design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub sinr: Vec<f64>,
    /// `γ_k / γ_th − 1`.
    pub sinr_margin: Vec<f64>,
    pub sinr_ok: bool,
    pub ap_power: Vec<f64>,
    pub power_ok: bool,
    pub crb: CrbReport,
    /// Exact Schur-complement LMI holds for every target.
    pub crb_lmi_ok: bool,
    pub rank_one: bool,
    pub recovery_failed: bool,
    pub reenabled: usize,
}

#[derive(Clone, Debug)]
pub struct B2sOutcome {
    pub design: IsacDesign,
    pub relaxed_delta: Vec<Vec<f64>>,
    /// Lifted covariances `W_k` in watts.
    pub lifted: Vec<CMat>,
    pub trace: B2sTrace,
    pub report: VerifyReport,
}

struct Pair {
    m: usize,
    map: J11Map,
    /// Diagonal rescaling of the 2×2 block.
    d: [f64; 2],
    /// `J11` of the pilot covariance.
    jq: Matrix2<f64>,
}

/// Precomputed, δ-independent quantities.
struct Ctx<'a> {
    inp: &'a B2sInput<'a>,
    cfg: &'a B2sConfig,
    p: f64,
    sigma2: f64,
    gamma: f64,
    inv_eps: f64,
    offs: Vec<usize>,
    dims: Vec<usize>,
    n_tot: usize,
    pairs: Vec<Pair>,
    /// `Σ_m h_mkᴴ Q_m h_mk / σ²`.
    isi: Vec<f64>,
    /// Per-AP beam budget in `P_max` units.
    budget: Vec<f64>,
}

const ENTRIES: [(usize, usize, usize); 3] = [(0, 0, 0), (0, 1, 1), (1, 1, 2)];

impl<'a> Ctx<'a> {
    fn new(inp: &'a B2sInput<'a>, cfg: &'a B2sConfig) -> Result<Self> {
        let ch = inp.ch;
        let params = inp.params;
        let (mm, kk) = (ch.num_aps(), ch.num_ues());
        let p = params.p_max();
        let sigma2 = params.noise_power();
        let dims: Vec<usize> = (0..mm).map(|m| ch.ue[m].first().map_or(0, |l| l.h.len())).collect();
        let mut offs = vec![0; mm];
        for m in 1..mm {
            offs[m] = offs[m - 1] + dims[m - 1];
        }
        let n_tot = dims.iter().sum();
        for k in 0..kk {
            if !(0..mm).any(|m| inp.xi[m][k]) {
                return Err(Error::InfeasibleByConstruction(format!("UE {k} has no visible AP")));
            }
        }
        let mut pairs = Vec::new();
        if cfg.sensing {
            for s in 0..ch.num_sts() {
                for m in 0..mm {
                    if !inp.sense[m][s] {
                        continue;
                    }
                    let map = J11Map::new(&ch.st[m][s], params, sigma2)?;
                    let iso = CMat::identity(dims[m], dims[m]) * C64::from(p / dims[m] as f64);
                    let jr = map.eval(&iso);
                    let d = [diag_scale(jr[(0, 0)]), diag_scale(jr[(1, 1)])];
                    let jq = map.eval(&inp.q_sen[m]);
                    pairs.push(Pair { m, map, d, jq });
                }
            }
        }
        let isi = (0..kk)
            .map(|k| {
                (0..mm)
                    .map(|m| {
                        let h = &ch.ue[m][k].h;
                        (h.adjoint() * &inp.q_sen[m] * h)[(0, 0)].re.max(0.0)
                    })
                    .sum::<f64>()
                    / sigma2
            })
            .collect();
        let budget = (0..mm).map(|m| ((p - inp.q_sen[m].trace().re) / p).max(0.0)).collect();
        Ok(Self {
            inp,
            cfg,
            p,
            sigma2,
            gamma: params.gamma_th(),
            inv_eps: 1.0 / params.eps_th,
            offs,
            dims,
            n_tot,
            pairs,
            isi,
            budget,
        })
    }

    fn mm(&self) -> usize {
        self.dims.len()
    }
    fn kk(&self) -> usize {
        self.inp.lambda.len()
    }

    fn embed(&self, m: usize, c: &CMat) -> CMat {
        let mut out = CMat::zeros(self.n_tot, self.n_tot);
        out.view_mut((self.offs[m], self.offs[m]), (self.dims[m], self.dims[m])).copy_from(c);
        out
    }

    fn block(&self, w: &CMat, m: usize) -> CMat {
        w.view((self.offs[m], self.offs[m]), (self.dims[m], self.dims[m])).into_owned()
    }

    /// `D_j h̃_k` for association column `j`.
    fn masked_channel(&self, delta: &[Vec<f64>], j: usize, k: usize) -> CVec {
        let mut g = self.inp.ch.stacked_ue(k);
        for m in 0..self.mm() {
            for i in 0..self.dims[m] {
                g[self.offs[m] + i] *= delta[m][j];
            }
        }
        g
    }

    /// True `J11` of a pair for normalised covariances `v` and associations.
    fn j11(&self, pr: &Pair, v: &[CMat], delta: &[Vec<f64>]) -> Matrix2<f64> {
        let mut x = self.inp.q_sen[pr.m].clone();
        for (k, vk) in v.iter().enumerate() {
            let d2 = delta[pr.m][k] * delta[pr.m][k];
            if d2 != 0.0 {
                x += self.block(vk, pr.m) * C64::from(d2 * self.p);
            }
        }
        pr.map.eval(&x)
    }

    /// Surrogate objective `J`.
    fn objective(&self, v: &[CMat], delta: &[Vec<f64>], sl: &Slacks) -> f64 {
        let power: f64 = v.iter().map(|x| x.trace().re).sum();
        let mut j = if self.cfg.sensing { self.cfg.power_price * power } else { power };
        for pr in &self.pairs {
            j += phi(&self.j11(pr, v, delta), self.inp.params.eps_phi);
        }
        j += self.cfg.slack_penalty * sl.sinr.iter().zip(&self.inp.lambda).map(|(s, l)| s * l).sum::<f64>();
        j += self.cfg.slack_penalty * sl.sense.iter().sum::<f64>();
        j
    }

    /// Feasibility of `(v, δ, slacks)` for the beamforming subproblem.
    fn feasible(&self, v: &[CMat], delta: &[Vec<f64>], sl: &Slacks, tol: f64) -> bool {
        let kk = self.kk();
        for k in 0..kk {
            let lhs = self.sinr_lhs(v, delta, k) + sl.sinr[k];
            if lhs < self.gamma * (1.0 + self.isi[k]) - tol * (1.0 + self.gamma * (1.0 + self.isi[k])) {
                return false;
            }
        }
        for m in 0..self.mm() {
            let pw: f64 = v.iter().map(|x| self.block(x, m).trace().re).sum();
            if pw > self.budget[m] + tol {
                return false;
            }
        }
        for (t, pr) in self.pairs.iter().enumerate() {
            let j = self.j11(pr, v, delta);
            let dm = Matrix2::new(pr.d[0], 0.0, 0.0, pr.d[1]);
            let a = dm * (j - Matrix2::identity() * self.inv_eps) * dm + Matrix2::identity() * sl.sense[t];
            if a.symmetric_eigenvalues().min() < -tol {
                return false;
            }
        }
        true
    }

    /// `(signal − γ·MU interference) / σ²` for lifted `v`.
    fn sinr_lhs(&self, v: &[CMat], delta: &[Vec<f64>], k: usize) -> f64 {
        let q = |j: usize| {
            let g = self.masked_channel(delta, j, k);
            (g.adjoint() * &v[j] * &g)[(0, 0)].re * self.p / self.sigma2
        };
        let mut s = q(k);
        for j in 0..self.kk() {
            if j != k {
                s -= self.gamma * q(j);
            }
        }
        s
    }

    fn sensing_lmis(&self, pr: &Pair, entry: impl Fn(usize, usize, usize) -> LinExpr, slack: Option<usize>) -> (Lmi, Lmi) {
        // objective block D(J + ε_φ I)D and constraint block D(J − ε⁻¹ I)D + t I
        let eps_phi = self.inp.params.eps_phi;
        let mut obj = Lmi::new(2);
        let mut con = Lmi::new(2);
        for &(p, q, idx) in &ENTRIES {
            let base = entry(p, q, idx);
            let diag = if p == q { pr.d[p] * pr.d[p] } else { 0.0 };
            obj.set(p, q, base.clone().with_const(eps_phi * diag));
            let mut c = base.with_const(-self.inv_eps * diag);
            if p == q {
                if let Some(s) = slack {
                    c = c.with_scalar(s, 1.0);
                }
            }
            con.set(p, q, c);
        }
        (obj, con)
    }
}

fn diag_scale(v: f64) -> f64 {
    if v > 0.0 && v.is_finite() {
        1.0 / v.sqrt()
    } else {
        1.0
    }
}

#[derive(Clone, Debug, Default)]
struct Slacks {
    sinr: Vec<f64>,
    sense: Vec<f64>,
}

impl Slacks {
    fn zero(kk: usize, np: usize) -> Self {
        Self { sinr: vec![0.0; kk], sense: vec![0.0; np] }
    }
}

struct PwSolution {
    v: Vec<CMat>,
    slacks: Slacks,
    status: Status,
    residual: f64,
}

fn solve_pw(ctx: &Ctx, delta: &[Vec<f64>], mode: SlackMode) -> Result<Option<PwSolution>> {
    let kk = ctx.kk();
    let mm = ctx.mm();
    let mut model = Model::new();
    let vars: Vec<usize> = (0..kk).map(|_| model.add_herm(ctx.n_tot)).collect();
    let s_sinr: Vec<Option<usize>> =
        (0..kk).map(|_| (mode != SlackMode::None).then(|| model.add_scalar())).collect();
    let s_sense: Vec<Option<usize>> =
        ctx.pairs.iter().map(|_| (mode == SlackMode::SinrAndSensing).then(|| model.add_scalar())).collect();

    let id = CMat::identity(ctx.n_tot, ctx.n_tot);
    let price = if ctx.cfg.sensing { ctx.cfg.power_price } else { 1.0 };
    let mut obj = LinExpr::zero();
    for &v in &vars {
        obj = obj.with_herm(v, &id * C64::from(price));
    }
    for k in 0..kk {
        if let Some(s) = s_sinr[k] {
            obj = obj.with_scalar(s, ctx.cfg.slack_penalty * ctx.inp.lambda[k]);
        }
    }
    for s in s_sense.iter().flatten() {
        obj = obj.with_scalar(*s, ctx.cfg.slack_penalty);
    }
    model.minimize(obj);

    let scale = ctx.p / ctx.sigma2;
    for k in 0..kk {
        let mut e = LinExpr::zero();
        for j in 0..kk {
            let g = ctx.masked_channel(delta, j, k);
            let c = &g * g.adjoint();
            let a = if j == k { scale } else { -ctx.gamma * scale };
            e = e.with_herm(vars[j], c * C64::from(a));
        }
        if let Some(s) = s_sinr[k] {
            e = e.with_scalar(s, 1.0);
        }
        model.add_ge(e, ctx.gamma * (1.0 + ctx.isi[k]));
    }
    for m in 0..mm {
        let em = ctx.embed(m, &CMat::identity(ctx.dims[m], ctx.dims[m]));
        let mut e = LinExpr::zero();
        for &v in &vars {
            e = e.with_herm(v, em.clone());
        }
        model.add_le(e, ctx.budget[m]);
    }
    for (t, pr) in ctx.pairs.iter().enumerate() {
        let entry = |p: usize, q: usize, idx: usize| {
            let dd = pr.d[p] * pr.d[q];
            let mut e = LinExpr::constant(dd * pr.jq[(p, q)]);
            for k in 0..kk {
                let d2 = delta[pr.m][k] * delta[pr.m][k];
                if d2 != 0.0 {
                    e = e.with_herm(vars[k], ctx.embed(pr.m, &(&pr.map.c[idx] * C64::from(d2 * ctx.p * dd))));
                }
            }
            e
        };
        let (o, c) = ctx.sensing_lmis(pr, entry, s_sense[t]);
        model.add_neg_logdet(1.0, o);
        model.add_lmi(c);
    }

    let sol = model.solve(&ctx.cfg.solver)?;
    if sol.status == Status::Infeasible || !sol.is_usable(ctx.cfg.loose_tol) {
        return Ok(None);
    }
    let v: Vec<CMat> = sol.herm.iter().map(hermitise).collect();
    let slacks = Slacks {
        sinr: s_sinr.iter().map(|s| s.map_or(0.0, |i| sol.scal[i].max(0.0))).collect(),
        sense: s_sense.iter().map(|s| s.map_or(0.0, |i| sol.scal[i].max(0.0))).collect(),
    };
    Ok(Some(PwSolution { v, slacks, status: sol.status, residual: sol.residuals.max() }))
}

fn hermitise(x: &CMat) -> CMat {
    (x + x.adjoint()) * C64::from(0.5)
}

/// Real symmetric `Re(B)` with `B[m,m'] = h_mᴴ V[m,m'] h_m'` over `free` APs.
fn quad_form(ctx: &Ctx, v: &CMat, k: usize, free: &[usize]) -> DMatrix<f64> {
    let n = free.len();
    let mut out = DMatrix::zeros(n, n);
    for (a, &m) in free.iter().enumerate() {
        for (b, &m2) in free.iter().enumerate() {
            let blk = v.view((ctx.offs[m], ctx.offs[m2]), (ctx.dims[m], ctx.dims[m2]));
            let h1 = &ctx.inp.ch.ue[m][k].h;
            let h2 = &ctx.inp.ch.ue[m2][k].h;
            out[(a, b)] = (h1.adjoint() * blk * h2)[(0, 0)].re;
        }
    }
    (&out + out.transpose()) * 0.5
}

/// Factor `F` with `FᵀF = A` for PSD `A`, dropping negligible directions.
fn psd_factor(a: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(a.clone());
    let top = e.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..a.nrows()).filter(|&i| e.eigenvalues[i] > 1e-12 * top && top > 0.0).collect();
    let mut f = DMatrix::zeros(keep.len(), a.ncols());
    for (r, &i) in keep.iter().enumerate() {
        let s = e.eigenvalues[i].sqrt();
        for c in 0..a.ncols() {
            f[(r, c)] = s * e.eigenvectors[(c, i)];
        }
    }
    f
}

struct PdSolution {
    delta: Vec<Vec<f64>>,
    status: Status,
    residual: f64,
}

fn solve_pd(ctx: &Ctx, v: &[CMat], di: &[Vec<f64>], sl: &Slacks) -> Result<Option<PdSolution>> {
    let kk = ctx.kk();
    let mm = ctx.mm();
    let xi = &ctx.inp.xi;
    let mut model = Model::new();
    // free association variables
    let mut var = vec![vec![None; kk]; mm];
    let mut list = Vec::new();
    for m in 0..mm {
        for k in 0..kk {
            if xi[m][k] {
                let i = model.add_scalar();
                var[m][k] = Some(i);
                list.push((m, k, i));
            }
        }
    }
    let n = list.len();
    let scale = ctx.p / ctx.sigma2;

    // prox epigraph
    let prox = model.add_scalar();
    let mut obj = LinExpr::scalar(prox, 0.5 * ctx.cfg.tau_delta);
    for &(m, k, i) in &list {
        obj = obj.with_scalar(i, ctx.cfg.psi_weight - ctx.cfg.tau_delta * di[m][k]);
    }
    let mut lp = Lmi::new(n + 1);
    lp.set(0, 0, LinExpr::scalar(prox, 1.0));
    for (r, &(_, _, i)) in list.iter().enumerate() {
        lp.set(0, r + 1, LinExpr::scalar(i, 1.0));
        lp.set(r + 1, r + 1, LinExpr::constant(1.0));
    }
    model.add_lmi(lp);
    for &(_, _, i) in &list {
        model.add_le(LinExpr::scalar(i, 1.0), 1.0);
    }
    model.minimize(obj);

    for k in 0..kk {
        // linearised own-signal term û_k
        let free_k: Vec<usize> = (0..mm).filter(|&m| var[m][k].is_some()).collect();
        let pk = quad_form(ctx, &v[k], k, &free_k) * scale;
        let dk = nalgebra::DVector::from_iterator(free_k.len(), free_k.iter().map(|&m| di[m][k]));
        let grad = &pk * &dk * 2.0;
        let u0 = dk.dot(&(&pk * &dk));
        // interference epigraph over the other columns
        let mut rows: Vec<(usize, DMatrix<f64>, Vec<usize>)> = Vec::new();
        for j in 0..kk {
            if j == k {
                continue;
            }
            let free_j: Vec<usize> = (0..mm).filter(|&m| var[m][j].is_some()).collect();
            let b = quad_form(ctx, &v[j], k, &free_j) * (ctx.gamma * scale);
            let f = psd_factor(&b);
            if f.nrows() > 0 {
                rows.push((j, f, free_j));
            }
        }
        let mut e = LinExpr::constant(u0);
        for (a, &m) in free_k.iter().enumerate() {
            e = e.with_scalar(var[m][k].unwrap(), -grad[a]);
        }
        let r_tot: usize = rows.iter().map(|(_, f, _)| f.nrows()).sum();
        if r_tot > 0 {
            let t = model.add_scalar();
            e = e.with_scalar(t, 1.0);
            let mut l = Lmi::new(r_tot + 1);
            l.set(0, 0, LinExpr::scalar(t, 1.0));
            let mut r0 = 1;
            for (j, f, free_j) in &rows {
                for r in 0..f.nrows() {
                    let mut fe = LinExpr::zero();
                    for (c, &m) in free_j.iter().enumerate() {
                        if f[(r, c)] != 0.0 {
                            fe = fe.with_scalar(var[m][*j].unwrap(), f[(r, c)]);
                        }
                    }
                    l.set(0, r0 + r, fe);
                    l.set(r0 + r, r0 + r, LinExpr::constant(1.0));
                }
                r0 += f.nrows();
            }
            model.add_lmi(l);
        }
        model.add_le(e, sl.sinr[k] - ctx.gamma * (1.0 + ctx.isi[k]));
    }

    for (t, pr) in ctx.pairs.iter().enumerate() {
        let per_k: Vec<Matrix2<f64>> =
            (0..kk).map(|k| pr.map.eval(&(ctx.block(&v[k], pr.m) * C64::from(ctx.p)))).collect();
        let entry = |p: usize, q: usize, _idx: usize| {
            let dd = pr.d[p] * pr.d[q];
            let mut e = LinExpr::constant(dd * pr.jq[(p, q)]);
            for k in 0..kk {
                let c = per_k[k][(p, q)] * dd;
                let d0 = di[pr.m][k];
                // tangent minorant of δ² at δ⁽ⁱ⁾
                match var[pr.m][k] {
                    Some(i) => {
                        e = e.with_scalar(i, 2.0 * d0 * c).with_const(-d0 * d0 * c);
                    }
                    None => {}
                }
            }
            e
        };
        let (o, mut c) = ctx.sensing_lmis(pr, entry, None);
        if sl.sense[t] != 0.0 {
            for p in 0..2 {
                c.get_mut(p, p).constant += sl.sense[t];
            }
        }
        model.add_neg_logdet(1.0, o);
        model.add_lmi(c);
    }

    let sol = model.solve(&ctx.cfg.solver)?;
    if !sol.is_usable(ctx.cfg.loose_tol) {
        return Ok(None);
    }
    let mut delta = vec![vec![0.0; kk]; mm];
    for &(m, k, i) in &list {
        delta[m][k] = sol.scal[i].clamp(0.0, 1.0);
    }
    Ok(Some(PdSolution { delta, status: sol.status, residual: sol.residuals.max() }))
}

/// Scaled MRT: each AP splits its beam budget evenly over its visible UEs.
pub fn mrt_beams(ch: &ChannelSet, xi: &[Vec<bool>], budget_w: &[f64]) -> Vec<Vec<CVec>> {
    (0..ch.num_aps())
        .map(|m| {
            let vis = xi[m].iter().filter(|&&b| b).count().max(1) as f64;
            (0..ch.num_ues())
                .map(|k| {
                    let h = &ch.ue[m][k].h;
                    let nh = h.norm();
                    if xi[m][k] && nh > 0.0 {
                        h * C64::from((budget_w[m] / vis).sqrt() / nh)
                    } else {
                        CVec::zeros(h.len())
                    }
                })
                .collect()
        })
        .collect()
}

fn lift(ctx: &Ctx, w: &[Vec<CVec>]) -> Vec<CMat> {
    (0..ctx.kk())
        .map(|k| {
            let mut s = CVec::zeros(ctx.n_tot);
            for m in 0..ctx.mm() {
                s.rows_mut(ctx.offs[m], ctx.dims[m]).copy_from(&w[m][k]);
            }
            (&s * s.adjoint()) * C64::from(1.0 / ctx.p)
        })
        .collect()
}

/// Principal eigenpair of a Hermitian PSD matrix and `λ₂/λ₁`.
fn principal(w: &CMat) -> (f64, CVec, f64) {
    let n = w.nrows();
    let e = SymmetricEigen::new(w.clone());
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| e.eigenvalues[b].total_cmp(&e.eigenvalues[a]));
    let l1 = e.eigenvalues[idx[0]].max(0.0);
    let l2 = if n > 1 { e.eigenvalues[idx[1]].max(0.0) } else { 0.0 };
    let ratio = if l1 > 0.0 { l2 / l1 } else { 0.0 };
    (l1, e.eigenvectors.column(idx[0]).into_owned(), ratio)
}

/// Rank-one recovery of stacked beamformers `w̃_k` from `W_k` (watts).
///
/// Returns `w[m][k]`, whether every `W_k` was rank one, and whether an
/// SINR-feasible candidate was found.
pub fn recover_rank_one(
    ch: &ChannelSet,
    params: &SystemParams,
    lifted: &[CMat],
    delta: &[Vec<f64>],
    q_sen: &[CMat],
    st_sense: &[Vec<bool>],
    samples: usize,
    rank_tol: f64,
    sensing: bool,
    seed: u64,
) -> Result<(Vec<Vec<CVec>>, bool, bool)> {
    let mm = ch.num_aps();
    let dims: Vec<usize> = (0..mm).map(|m| q_sen[m].nrows()).collect();
    let mut offs = vec![0; mm];
    for m in 1..mm {
        offs[m] = offs[m - 1] + dims[m - 1];
    }
    let p = params.p_max();
    let budget: Vec<f64> = (0..mm).map(|m| (p - q_sen[m].trace().re).max(0.0)).collect();
    let sigma2 = params.noise_power();
    let gamma = params.gamma_th();
    let maps: Vec<(usize, J11Map)> = if sensing {
        let mut v = Vec::new();
        for s in 0..ch.num_sts() {
            for m in 0..mm {
                if st_sense[m][s] {
                    v.push((m, J11Map::new(&ch.st[m][s], params, sigma2)?));
                }
            }
        }
        v
    } else {
        Vec::new()
    };

    let eig: Vec<(f64, CVec, f64)> = lifted.iter().map(principal).collect();
    let rank_one = eig.iter().all(|e| e.2 <= rank_tol);

    let to_design = |stacked: &[CVec]| -> Vec<Vec<CVec>> {
        let mut w: Vec<Vec<CVec>> = (0..mm)
            .map(|m| stacked.iter().map(|s| s.rows(offs[m], dims[m]).into_owned()).collect())
            .collect();
        for m in 0..mm {
            w[m] = project_power_ball(&w[m], budget[m]);
        }
        w
    };
    let score = |w: &Vec<Vec<CVec>>| -> Result<(bool, f64, f64)> {
        let d = IsacDesign { delta: delta.to_vec(), w: w.clone(), q_sen: q_sen.to_vec(), st_mask: st_sense.to_vec() };
        let g = sinr(ch, &d, sigma2)?;
        let margin = g.iter().map(|x| x / gamma - 1.0).fold(f64::INFINITY, f64::min);
        let ok = margin >= -1e-9;
        let obj = if sensing {
            maps.iter().map(|(m, map)| phi(&map.eval(&d.tx_covariance(*m)), params.eps_phi)).sum()
        } else {
            (0..mm).map(|m| d.beam_power(m)).sum()
        };
        Ok((ok, obj, margin))
    };

    let eig_cand: Vec<CVec> = eig.iter().map(|(l, u, _)| u * C64::from(l.sqrt())).collect();
    let first = to_design(&eig_cand);
    if rank_one {
        let (ok, _, _) = score(&first)?;
        return Ok((first, true, ok));
    }

    let factors: Vec<CMat> = lifted
        .iter()
        .map(|w| {
            let e = SymmetricEigen::new(w.clone());
            let mut f = e.eigenvectors.clone();
            for (j, mut col) in f.column_iter_mut().enumerate() {
                col *= C64::from(e.eigenvalues[j].max(0.0).sqrt());
            }
            f
        })
        .collect();
    let mut rng = stream(seed, "b2s-randomisation", &[]);
    let mut best: Option<(bool, f64, f64, Vec<Vec<CVec>>)> = None;
    let mut consider = |cand: Vec<Vec<CVec>>| -> Result<()> {
        let (ok, obj, margin) = score(&cand)?;
        let better = match &best {
            None => true,
            Some((bok, bobj, bmargin, _)) => match (ok, *bok) {
                (true, false) => true,
                (false, true) => false,
                (true, true) => obj < *bobj,
                (false, false) => margin > *bmargin,
            },
        };
        if better {
            best = Some((ok, obj, margin, cand));
        }
        Ok(())
    };
    consider(first)?;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    for _ in 0..samples {
        let stacked: Vec<CVec> = factors
            .iter()
            .map(|f| {
                let z = CVec::from_fn(f.ncols(), |_, _| {
                    let a: f64 = rng.sample(StandardNormal);
                    let b: f64 = rng.sample(StandardNormal);
                    C64::new(a * h, b * h)
                });
                f * z
            })
            .collect();
        consider(to_design(&stacked))?;
    }
    let (ok, _, _, w) = best.expect("at least one candidate");
    Ok((w, false, ok))
}

/// Threshold relaxed associations (ties map to 1) within `ξ`.
pub fn binarize(delta: &[Vec<f64>], xi: &[Vec<bool>], threshold: f64) -> Vec<Vec<f64>> {
    delta
        .iter()
        .zip(xi)
        .map(|(row, xr)| row.iter().zip(xr).map(|(&d, &x)| if x && d >= threshold { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Binarise, greedily re-enable masked APs for UEs that miss the SINR
/// target, then report exact SINR, power and CRB.
pub fn binarize_and_verify(
    ch: &ChannelSet,
    params: &SystemParams,
    relaxed: &[Vec<f64>],
    xi: &[Vec<bool>],
    w: Vec<Vec<CVec>>,
    q_sen: &[CMat],
    eval_mask: &[Vec<bool>],
    threshold: f64,
) -> Result<(IsacDesign, VerifyReport)> {
    let sigma2 = params.noise_power();
    let gamma = params.gamma_th();
    let mut d = IsacDesign { delta: binarize(relaxed, xi, threshold), w, q_sen: q_sen.to_vec(), st_mask: eval_mask.to_vec() };
    let mut reenabled = 0;
    loop {
        let g = sinr(ch, &d, sigma2)?;
        let mut changed = false;
        for (k, gk) in g.iter().enumerate() {
            if *gk >= gamma {
                continue;
            }
            let cand = (0..ch.num_aps())
                .filter(|&m| xi[m][k] && d.delta[m][k] == 0.0)
                .max_by(|&a, &b| ch.ue[a][k].h.norm().total_cmp(&ch.ue[b][k].h.norm()));
            if let Some(m) = cand {
                d.delta[m][k] = 1.0;
                reenabled += 1;
                changed = true;
                break;
            }
        }
        if !changed {
            break;
        }
    }
    let g = sinr(ch, &d, sigma2)?;
    let margins: Vec<f64> = g.iter().map(|x| x / gamma - 1.0).collect();
    let ap_power: Vec<f64> = (0..d.num_aps()).map(|m| d.ap_power(m)).collect();
    let p = params.p_max();
    let crb = crb_report(ch, &d, eval_mask, params);
    let report = VerifyReport {
        sinr_ok: margins.iter().all(|&x| x >= -1e-9),
        sinr: g,
        sinr_margin: margins,
        power_ok: ap_power.iter().all(|&x| x <= p + 1e-9),
        ap_power,
        crb_lmi_ok: crb.per_st.iter().all(|s| s.lmi_ok),
        crb,
        rank_one: false,
        recovery_failed: false,
        reenabled,
    };
    Ok((d, report))
}

/// Runs the full alternating design loop.
pub fn run_b2s(inp: &B2sInput, cfg: &B2sConfig) -> Result<B2sOutcome> {
    cfg.validate()?;
    let ctx = Ctx::new(inp, cfg)?;
    let kk = ctx.kk();
    let np = ctx.pairs.len();

    let mut delta: Vec<Vec<f64>> = inp.xi.iter().map(|r| r.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).collect();
    let w0 = match &inp.warm {
        Some(w) => w.clone(),
        None => {
            let b: Vec<f64> = ctx.budget.iter().map(|x| x * ctx.p).collect();
            mrt_beams(inp.ch, &inp.xi, &b)
        }
    };
    let mut v = lift(&ctx, &w0);
    let mut slacks = Slacks::zero(kk, np);
    let mut trace = B2sTrace::default();
    let j0 = if ctx.feasible(&v, &delta, &slacks, cfg.solver.tol) { ctx.objective(&v, &delta, &slacks) } else { f64::INFINITY };
    trace.initial_objective = j0;
    let mut j_prev = j0;
    let mut mode = SlackMode::None;

    for it in 0..cfg.max_iter {
        let t0 = Instant::now();
        let mut pw = None;
        for m in [SlackMode::None, SlackMode::Sinr, SlackMode::SinrAndSensing] {
            if (m as u8) < (mode as u8) || (!cfg.sensing && m == SlackMode::SinrAndSensing) {
                continue;
            }
            if let Some(s) = solve_pw(&ctx, &delta, m)? {
                mode = m;
                pw = Some(s);
                break;
            }
        }
        let Some(pw) = pw else {
            if it == 0 {
                return Err(Error::B2sInfeasible { stage: "beamforming".into(), iter: it });
            }
            trace.status = format!("beamforming subproblem failed at iteration {it}; kept previous iterate");
            break;
        };
        let t_pw = t0.elapsed().as_secs_f64();
        let incumbent = (v.clone(), delta.clone(), slacks.clone());
        v = pw.v;
        slacks = pw.slacks;

        let t1 = Instant::now();
        let (pd_status, pd_res, new_delta) = if cfg.update_association {
            match solve_pd(&ctx, &v, &delta, &slacks)? {
                Some(pd) => (Some(pd.status), pd.residual, pd.delta),
                None => (Some(Status::NumericalFailure), f64::NAN, delta.clone()),
            }
        } else {
            (None, 0.0, delta.clone())
        };
        let t_pd = t1.elapsed().as_secs_f64();
        let change = delta
            .iter()
            .flatten()
            .zip(new_delta.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        // keep δ⁽ⁱ⁾ if the update would leave the feasible set of the next step
        if ctx.feasible(&v, &new_delta, &slacks, cfg.loose_tol) {
            delta = new_delta;
        }
        let mut j = ctx.objective(&v, &delta, &slacks);
        let mut stalled = false;
        if j > j_prev {
            // inexact subproblem solve; keep the incumbent
            (v, delta, slacks) = incumbent;
            j = j_prev;
            stalled = true;
        }
        trace.rows.push(TraceRow {
            iter: it,
            objective: j,
            slack: mode,
            pw_status: pw.status,
            pw_residual: pw.residual,
            pd_status,
            pd_residual: pd_res,
            max_delta_change: change,
        });
        trace.stage_seconds.push((t_pw, t_pd));
        let rel = if j_prev.is_finite() { (j - j_prev).abs() / j_prev.abs().max(1.0) } else { f64::INFINITY };
        j_prev = j;
        if stalled {
            trace.status = format!("stalled at iteration {it}; kept incumbent");
            break;
        }
        if rel <= cfg.eps_bcd {
            trace.status = format!("converged after {} iterations", it + 1);
            break;
        }
        if it + 1 == cfg.max_iter {
            trace.status = format!("reached iteration cap {}", cfg.max_iter);
        }
    }

    let lifted: Vec<CMat> = v.iter().map(|x| x * C64::from(ctx.p)).collect();
    let (w, rank_one, found) = recover_rank_one(
        inp.ch,
        inp.params,
        &lifted,
        &delta,
        &inp.q_sen,
        &inp.sense,
        cfg.samples,
        cfg.rank_tol,
        cfg.sensing,
        inp.seed,
    )?;
    let (design, mut report) =
        binarize_and_verify(inp.ch, inp.params, &delta, &inp.xi, w, &inp.q_sen, &inp.eval_mask, cfg.bin_threshold)?;
    report.rank_one = rank_one;
    report.recovery_failed = !found;
    Ok(B2sOutcome { design, relaxed_delta: delta, lifted, trace, report })
}
