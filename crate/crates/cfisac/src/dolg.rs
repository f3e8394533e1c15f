//! Multi-agent PPO over per-AP actors conditioned on graph-transformer
//! embeddings, with centralised critic and decentralised execution.
//!
//! Each AP maps a latent action to relaxed associations and beamformers,
//! which are projected onto the visibility box and the per-AP power ball
//! before the environment sees them, so every executed action is feasible.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::baselines::SeedContext;
use crate::channel::{CVec, C64};
use crate::conic::{box_project, project_power_ball};
use crate::error::{Error, Result};
use crate::fim::CrbReport;
use crate::gtn::graph::DesignState;
use crate::gtn::model::slog;
use crate::gtn::{build_graph, Gtn, GtnConfig, InteractionGraph, ParamStore, Tape, Tensor, Var};
use crate::par;
use crate::rng::{derive, stream};
use crate::scenario::{generate_scenario, los_probability, ScenarioConfig};
use crate::signal::{CommReport, IsacDesign};
use crate::SystemParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DolgConfig {
    pub scenario: ScenarioConfig,
    pub gtn: GtnConfig,
    /// Condition actors and critic on encoder embeddings; off gives the
    /// plain MARL baseline.
    pub use_gtn: bool,
    pub iterations: usize,
    pub episodes_per_iter: usize,
    pub horizon: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub lr: f64,
    pub epochs: usize,
    /// Transitions per gradient step; `0` uses the whole batch.
    pub minibatch: usize,
    pub actor_hidden: usize,
    pub critic_hidden: usize,
    pub init_log_std: f64,
    pub value_coef: f64,
    /// Critic output multiplier, so that unit-scale outputs cover returns.
    pub value_scale: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    /// Per-UE rate weight; `None` means `1/K`.
    pub omega_rate: Option<f64>,
    pub omega_crb: f64,
    pub omega_p: f64,
}

impl Default for DolgConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            gtn: GtnConfig::paper(),
            use_gtn: true,
            iterations: 500,
            episodes_per_iter: 64,
            horizon: 16,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            lr: 3e-4,
            epochs: 4,
            minibatch: 256,
            actor_hidden: 64,
            critic_hidden: 64,
            init_log_std: -0.5,
            value_coef: 0.5,
            value_scale: 10.0,
            entropy_coef: 0.0,
            max_grad_norm: 1.0,
            omega_rate: None,
            omega_crb: 1.0,
            omega_p: 0.01,
        }
    }
}

impl DolgConfig {
    /// Desk-scale profile used by tests: small encoder, short batches and a
    /// myopic discount, since episodes are static.
    pub fn toy() -> Self {
        Self {
            gtn: GtnConfig::default(),
            iterations: 200,
            episodes_per_iter: 8,
            gamma: 0.0,
            lr: 1e-2,
            minibatch: 32,
            actor_hidden: 32,
            critic_hidden: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.episodes_per_iter == 0 || self.epochs == 0 {
            return Err(Error::Config("horizon, episodes_per_iter and epochs must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) || self.clip < 0.0 || !(self.lr > 0.0) {
            return Err(Error::Config("invalid PPO hyperparameters".into()));
        }
        if self.use_gtn {
            self.gtn.validate()?;
        }
        Ok(())
    }

    pub fn omega_rate(&self, num_ues: usize) -> f64 {
        self.omega_rate.unwrap_or(1.0 / num_ues.max(1) as f64)
    }
}

/// Latent action width `K + 2·K·N_m`.
pub fn action_dim(num_ues: usize, antennas: usize) -> usize {
    num_ues + 2 * num_ues * antennas
}

/// Sigmoid associations projected onto `[0, ξ]`, and `√P_max`-scaled complex
/// beams projected onto the ball of radius `budget`.
pub fn map_action(z: &[f64], xi: &[bool], antennas: usize, p_max: f64, budget: f64) -> Result<(Vec<f64>, Vec<CVec>)> {
    let kk = xi.len();
    if z.len() != action_dim(kk, antennas) {
        return Err(Error::Build(format!("action has {} entries, expected {}", z.len(), action_dim(kk, antennas))));
    }
    let raw: Vec<f64> = z[..kk].iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect();
    let xif: Vec<f64> = xi.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let delta = box_project(&raw, &xif);
    let s = p_max.sqrt();
    let w: Vec<CVec> = (0..kk)
        .map(|k| {
            let o = kk + 2 * k * antennas;
            CVec::from_fn(antennas, |n, _| C64::new(z[o + n], z[o + antennas + n]) * s)
        })
        .collect();
    Ok((delta, project_power_ball(&w, budget.max(0.0))))
}

/// Shared scalar objective `Σ ω R_k − ω_CRB Σ tr CRB_s − ω_P P_tot`, with
/// `R_k` in bit/s/Hz and capped CRB traces.
pub fn reward(comm: &CommReport, crb: &CrbReport, bandwidth: f64, omega_rate: f64, omega_crb: f64, omega_p: f64) -> f64 {
    let se: f64 = comm.rate.iter().map(|r| r / bandwidth).sum();
    omega_rate * se - omega_crb * crb.total_capped() - omega_p * comm.p_tot
}

/// `[γ_k − γ_th]_k ‖ [ε_th − CRB_s]_s`, with capped CRB traces.
pub fn residuals(comm: &CommReport, crb: &CrbReport, params: &SystemParams) -> Vec<f64> {
    let g = params.gamma_th();
    comm.sinr.iter().map(|x| x - g).chain(crb.per_st.iter().map(|s| params.eps_th - s.tr_crb_capped)).collect()
}

/// Mean magnitude of the negative parts of the residuals.
pub fn violation(delta: &[f64]) -> f64 {
    if delta.is_empty() {
        0.0
    } else {
        delta.iter().map(|x| (-x).max(0.0)).sum::<f64>() / delta.len() as f64
    }
}

/// One static realisation seen by all agents.
#[derive(Clone, Debug)]
pub struct Env {
    pub ctx: SeedContext,
    pub q_sen: Vec<crate::signal::CMat>,
    /// Beam budget `P_max − tr Q^sen_m`.
    pub budget: Vec<f64>,
    psi: Vec<Vec<f64>>,
}

/// Result of executing one joint action.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub design: IsacDesign,
    pub comm: CommReport,
    pub crb: CrbReport,
    pub reward: f64,
    pub residuals: Vec<f64>,
    /// Power and box constraints hold for every AP.
    pub hard_ok: bool,
}

impl Env {
    pub fn new(ctx: SeedContext) -> Result<Self> {
        let q_sen = ctx.pilots(&ctx.mask.st)?;
        let p = &ctx.params;
        let pm = p.p_max();
        let sigma2 = p.noise_power();
        let budget = q_sen.iter().map(|q| (pm - q.trace().re).max(0.0)).collect();
        let (mm, kk) = (ctx.scenario.num_aps(), ctx.scenario.num_ues());
        let mut psi = Vec::with_capacity(mm);
        for m in 0..mm {
            let mut row: Vec<f64> = (0..kk).map(|k| (pm * ctx.channels.ue[m][k].h.norm_squared() / sigma2).ln_1p() / 10.0).collect();
            let mut pl = 0.0;
            for k in 0..kk {
                pl += los_probability(ctx.channels.ue[m][k].geom.r, p.los_beta)?;
            }
            row.push(pl / kk.max(1) as f64);
            psi.push(row);
        }
        Ok(Self { ctx, q_sen, budget, psi })
    }

    pub fn num_aps(&self) -> usize {
        self.ctx.scenario.num_aps()
    }

    pub fn num_ues(&self) -> usize {
        self.ctx.scenario.num_ues()
    }

    /// Pilot-only starting point with zero beams and `δ = ξ`.
    pub fn idle_design(&self) -> IsacDesign {
        let sc = &self.ctx.scenario;
        IsacDesign {
            delta: (0..sc.num_aps()).map(|m| (0..sc.num_ues()).map(|k| self.ctx.mask.ue_f64(m, k)).collect()).collect(),
            w: (0..sc.num_aps()).map(|m| vec![CVec::zeros(sc.antennas(m)); sc.num_ues()]).collect(),
            q_sen: self.q_sen.clone(),
            st_mask: self.ctx.mask.st.clone(),
        }
    }

    /// Local statistics `(ψ_m, ι_m, ϱ_m)` given the previously executed design.
    pub fn local_obs(&self, prev: &IsacDesign) -> Vec<Vec<f64>> {
        let p = &self.ctx.params;
        let sigma2 = p.noise_power();
        let kk = self.num_ues();
        (0..self.num_aps())
            .map(|m| {
                let mut o = self.psi[m].clone();
                for k in 0..kk {
                    let h = &self.ctx.channels.ue[m][k].h;
                    let i: f64 = (0..kk)
                        .filter(|&j| j != k)
                        .map(|j| prev.delta[m][j] * prev.delta[m][j] * h.dotc(&prev.w[m][j]).norm_sqr())
                        .sum();
                    o.push((i / sigma2).ln_1p() / 10.0);
                }
                o.push(prev.ap_power(m) / p.p_max());
                o
            })
            .collect()
    }

    pub fn graph(&self, state: &IsacDesign) -> Result<InteractionGraph> {
        build_graph(&self.ctx.scenario, &self.ctx.channels, &self.ctx.params, &DesignState::from_design(state))
    }

    /// Maps and projects every agent's action, then evaluates the design.
    pub fn step(&self, z: &[Vec<f64>], cfg: &DolgConfig) -> Result<StepOutcome> {
        let p = &self.ctx.params;
        let mut delta = Vec::with_capacity(self.num_aps());
        let mut w = Vec::with_capacity(self.num_aps());
        for (m, zm) in z.iter().enumerate() {
            let (d, b) = map_action(zm, &self.ctx.mask.ue[m], self.ctx.scenario.antennas(m), p.p_max(), self.budget[m])?;
            delta.push(d);
            w.push(b);
        }
        let design = IsacDesign { delta, w, q_sen: self.q_sen.clone(), st_mask: self.ctx.mask.st.clone() };
        let hard_ok = (0..self.num_aps()).all(|m| {
            let power: f64 = self.q_sen[m].trace().re
                + design.w[m].iter().zip(&design.delta[m]).map(|(v, d)| d * d * v.norm_squared()).sum::<f64>();
            power <= p.p_max() * (1.0 + 1e-12)
                && design.delta[m].iter().zip(&self.ctx.mask.ue[m]).all(|(&d, &x)| (0.0..=if x { 1.0 } else { 0.0 }).contains(&d))
        });
        let (comm, crb) = self.ctx.evaluate(&design)?;
        let r = reward(&comm, &crb, p.bandwidth_hz, cfg.omega_rate(self.num_ues()), cfg.omega_crb, cfg.omega_p);
        let residuals = residuals(&comm, &crb, p);
        Ok(StepOutcome { design, comm, crb, reward: r, residuals, hard_ok })
    }
}

#[derive(Clone, Debug)]
struct Mlp {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

impl Mlp {
    fn init(store: &mut ParamStore, name: &str, din: usize, hidden: usize, dout: usize, out_scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let w1 = store.push_uniform(format!("{name}.w1"), din, hidden, din, rng);
        let b1 = store.push_uniform(format!("{name}.b1"), 1, hidden, din, rng);
        let w2 = store.push_uniform(format!("{name}.w2"), hidden, dout, hidden, rng);
        store.get_mut(w2).scale_mut(out_scale);
        let b2 = store.push(format!("{name}.b2"), Tensor::zeros(1, dout));
        Self { w1, b1, w2, b2 }
    }

    fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let a = tape.matmul(x, Var::new(self.w1))?;
        let a = tape.add_row(a, Var::new(self.b1))?;
        let a = tape.relu(a);
        let o = tape.matmul(a, Var::new(self.w2))?;
        tape.add_row(o, Var::new(self.b2))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActMode {
    Sample,
    Mean,
}

/// Shared encoder, per-AP actors and the centralised critic.
#[derive(Clone, Debug)]
pub struct Policy {
    pub cfg: DolgConfig,
    pub store: ParamStore,
    pub gtn: Option<Gtn>,
    actors: Vec<(Mlp, usize)>,
    critic: Mlp,
    pub num_ues: usize,
    pub num_sts: usize,
    pub antennas: Vec<usize>,
}

/// Per-agent observation: the embedding row (if any) and local statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub embedding: Option<Tensor>,
    pub local: Vec<f64>,
}

impl Observation {
    fn row(&self) -> Tensor {
        let e = self.embedding.as_ref().map_or(0, |t| t.ncols());
        Tensor::from_fn(1, e + self.local.len(), |_, j| if j < e { self.embedding.as_ref().unwrap()[(0, j)] } else { self.local[j - e] })
    }
}

fn local_dim(num_ues: usize) -> usize {
    (num_ues + 1) + num_ues + 1
}

fn gauss_logp(z: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    // Same operation order as the loss, so the ratio is exactly 1 on-policy.
    let c = 0.5 * (2.0 * std::f64::consts::PI).ln() * z.len() as f64;
    let quad: f64 = z.iter().zip(mean).zip(log_std).map(|((z, m), s)| ((z - m) * (-s).exp()).powi(2)).sum();
    let lsum: f64 = log_std.iter().sum();
    (-0.5 * quad + -c) - lsum
}

/// Critic input of residuals: signed logs of `Δ` normalised by the targets.
fn residual_features(delta: &[f64], num_ues: usize, params: &SystemParams) -> Vec<f64> {
    delta.iter().enumerate().map(|(i, &x)| slog(if i < num_ues { x / params.gamma_th() } else { x / params.eps_th })).collect()
}

impl Policy {
    pub fn new(cfg: &DolgConfig, antennas: &[usize], num_ues: usize, num_sts: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream(seed, "dolg-init", &[]);
        let mut store = ParamStore::new();
        let gtn = if cfg.use_gtn { Some(Gtn::init(&cfg.gtn, antennas, &mut store, "gtn.", &mut rng)?) } else { None };
        let emb = if cfg.use_gtn { cfg.gtn.d_h } else { 0 };
        let obs = emb + local_dim(num_ues);
        let actors = antennas
            .iter()
            .enumerate()
            .map(|(m, &n)| {
                let dz = action_dim(num_ues, n);
                let mlp = Mlp::init(&mut store, &format!("actor{m}"), obs, cfg.actor_hidden, dz, 0.1, &mut rng);
                let ls = store.push(format!("actor{m}.log_std"), Tensor::from_element(1, dz, cfg.init_log_std));
                (mlp, ls)
            })
            .collect();
        let cin = if cfg.use_gtn { 2 * cfg.gtn.d_h } else { num_ues + 1 } + num_ues + num_sts;
        let critic = Mlp::init(&mut store, "critic", cin, cfg.critic_hidden, 1, 1.0, &mut rng);
        Ok(Self { cfg: cfg.clone(), store, gtn, actors, critic, num_ues, num_sts, antennas: antennas.to_vec() })
    }

    pub fn num_aps(&self) -> usize {
        self.antennas.len()
    }

    /// Encodes the graph and assembles every agent's observation.
    pub fn observe(&self, graph: Option<&InteractionGraph>, local: &[Vec<f64>]) -> Result<(Vec<Observation>, Option<(Tensor, Tensor)>)> {
        let emb = match (&self.gtn, graph) {
            (Some(g), Some(graph)) => {
                let mut tape = Tape::with_leaves(self.store.tensors());
                let e = g.forward(&mut tape, graph)?;
                Some((tape.value(e.g_ap).clone(), tape.value(e.g_ue).clone()))
            }
            (Some(_), None) => return Err(Error::Build("encoder policy needs a graph".into())),
            _ => None,
        };
        let obs = local
            .iter()
            .enumerate()
            .map(|(m, l)| Observation { embedding: emb.as_ref().map(|(a, _)| a.rows(m, 1).into_owned()), local: l.clone() })
            .collect();
        Ok((obs, emb))
    }

    /// Action of agent `m` from its own observation only.
    pub fn act(&self, m: usize, obs: &Observation, mode: ActMode, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, f64)> {
        let (mean, log_std) = self.actor_stats(m, obs)?;
        let z: Vec<f64> = match mode {
            ActMode::Mean => mean.clone(),
            ActMode::Sample => mean
                .iter()
                .zip(&log_std)
                .map(|(mu, s)| {
                    let e: f64 = rng.sample(StandardNormal);
                    mu + s.exp() * e
                })
                .collect(),
        };
        let lp = gauss_logp(&z, &mean, &log_std);
        Ok((z, lp))
    }

    /// Mean and log standard deviation of agent `m`'s policy.
    pub fn actor_stats(&self, m: usize, obs: &Observation) -> Result<(Vec<f64>, Vec<f64>)> {
        let (mlp, ls) = &self.actors[m];
        let mut tape = Tape::with_leaves(self.store.tensors());
        let x = tape.leaf(obs.row());
        let mu = mlp.forward(&mut tape, x)?;
        Ok((tape.value(mu).iter().copied().collect(), self.store.get(*ls).iter().copied().collect()))
    }

    fn critic_input(&self, emb: Option<(&Tensor, &Tensor)>, local: &[Vec<f64>], resid: &[f64], params: &SystemParams) -> Tensor {
        let mut v: Vec<f64> = match emb {
            Some((gap, gue)) => {
                let mean = |t: &Tensor| (0..t.ncols()).map(|j| t.column(j).mean()).collect::<Vec<_>>();
                mean(gap).into_iter().chain(mean(gue)).collect()
            }
            None => (0..=self.num_ues).map(|j| local.iter().map(|l| l[j]).sum::<f64>() / local.len().max(1) as f64).collect(),
        };
        v.extend(residual_features(resid, self.num_ues, params));
        Tensor::from_row_slice(1, v.len(), &v)
    }

    pub fn value(&self, emb: Option<(&Tensor, &Tensor)>, local: &[Vec<f64>], resid: &[f64], params: &SystemParams) -> Result<f64> {
        let mut tape = Tape::with_leaves(self.store.tensors());
        let x = tape.leaf(self.critic_input(emb, local, resid, params));
        let v = self.critic.forward(&mut tape, x)?;
        Ok(self.cfg.value_scale * tape.scalar(v))
    }

    /// Clipped-surrogate, value and entropy loss of one transition, built on
    /// `tape`; returns the loss node and diagnostics.
    fn loss(&self, tape: &mut Tape, tr: &Transition, params: &SystemParams, batch: f64) -> Result<(Var, LossParts)> {
        let emb = match (&self.gtn, &tr.graph) {
            (Some(g), Some(graph)) => Some(g.forward(tape, graph)?),
            _ => None,
        };
        let mut total = tape.constant_scalar(0.0);
        let mut parts = LossParts::default();
        let eps = self.cfg.clip;
        let adv = tape.constant_scalar(tr.advantage);
        for m in 0..self.num_aps() {
            let (mlp, ls) = &self.actors[m];
            let loc = tape.leaf(Tensor::from_row_slice(1, tr.local[m].len(), &tr.local[m]));
            let x = match &emb {
                Some(e) => {
                    let row = tape.gather(e.g_ap, Arc::new(vec![m]))?;
                    tape.concat(&[row, loc])?
                }
                None => loc,
            };
            let mu = mlp.forward(tape, x)?;
            let z = tape.leaf(Tensor::from_row_slice(1, tr.z[m].len(), &tr.z[m]));
            let diff = tape.sub(z, mu)?;
            let neg = tape.affine(Var::new(*ls), -1.0, 0.0);
            let inv = tape.exp(neg);
            let sc = tape.mul(diff, inv)?;
            let sq = tape.mul(sc, sc)?;
            let quad = tape.sum(sq);
            let lsum = tape.sum(Var::new(*ls));
            let c = 0.5 * (2.0 * std::f64::consts::PI).ln() * tr.z[m].len() as f64;
            let lq = tape.affine(quad, -0.5, -c);
            let logp = tape.sub(lq, lsum)?;
            let dl = tape.affine(logp, 1.0, -tr.logp[m]);
            let ratio = tape.exp(dl);
            let s1 = tape.mul(ratio, adv)?;
            let clipped = tape.clamp(ratio, 1.0 - eps, 1.0 + eps);
            let s2 = tape.mul(clipped, adv)?;
            // Ties take the clipped branch.
            let surr = tape.min(s2, s1)?;
            let neg_surr = tape.affine(surr, -1.0 / batch, 0.0);
            total = tape.add(total, neg_surr)?;
            if self.cfg.entropy_coef != 0.0 {
                let ent = tape.affine(lsum, -self.cfg.entropy_coef / batch, 0.0);
                total = tape.add(total, ent)?;
            }
            let r = tape.scalar(ratio);
            parts.ratio_dev = parts.ratio_dev.max((r - 1.0).abs());
            parts.actor -= tape.scalar(surr) / batch;
        }
        let cin = match &emb {
            Some(e) => {
                let gap = tape.value(e.g_ap).clone();
                let gue = tape.value(e.g_ue).clone();
                let mean_ap = tape.leaf(Tensor::from_element(1, gap.nrows(), 1.0 / gap.nrows() as f64));
                let mean_ue = tape.leaf(Tensor::from_element(1, gue.nrows(), 1.0 / gue.nrows() as f64));
                let a = tape.matmul(mean_ap, e.g_ap)?;
                let b = tape.matmul(mean_ue, e.g_ue)?;
                let rf = residual_features(&tr.prev_residuals, self.num_ues, params);
                let r = tape.leaf(Tensor::from_row_slice(1, rf.len(), &rf));
                tape.concat(&[a, b, r])?
            }
            None => tape.leaf(self.critic_input(None, &tr.local, &tr.prev_residuals, params)),
        };
        let v = self.critic.forward(tape, cin)?;
        let v = tape.affine(v, self.cfg.value_scale, -tr.ret);
        let v2 = tape.mul(v, v)?;
        let vl = tape.affine(v2, self.cfg.value_coef / batch, 0.0);
        parts.value = tape.scalar(vl);
        total = tape.add(total, vl)?;
        Ok((total, parts))
    }
}

#[derive(Serialize, Deserialize)]
struct PolicyMeta {
    config: DolgConfig,
    antennas: Vec<usize>,
    num_ues: usize,
    num_sts: usize,
}

impl Policy {
    /// Writes the tensor archive to `path` and the shape metadata next to it
    /// with a `.json` extension.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::gtn::ckpt::save(&self.store, path)?;
        let meta = PolicyMeta { config: self.cfg.clone(), antennas: self.antennas.clone(), num_ues: self.num_ues, num_sts: self.num_sts };
        std::fs::write(path.with_extension("json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let meta: PolicyMeta = serde_json::from_str(&std::fs::read_to_string(path.with_extension("json"))?)?;
        let mut p = Self::new(&meta.config, &meta.antennas, meta.num_ues, meta.num_sts, 0)?;
        let store = crate::gtn::ckpt::load(path)?;
        if p.store.load_matching(&store) != p.store.len() {
            return Err(Error::Config(format!("checkpoint {} does not match its metadata", path.display())));
        }
        Ok(p)
    }

    /// Encoder-derived B2S inputs: per-UE slack weights and warm-start
    /// beamformers with budget `P_max − tr Q^sen_m`.
    pub fn b2s_hints(&self, env: &Env) -> Result<Option<(Vec<f64>, Vec<Vec<CVec>>)>> {
        let Some(gtn) = &self.gtn else { return Ok(None) };
        let w0 = initial_design(self, env)?;
        let g = env.graph(&w0)?;
        let mut tape = Tape::with_leaves(self.store.tensors());
        let e = gtn.forward(&mut tape, &g)?;
        let lam = gtn.feasibility_weights(&mut tape, e.g_ue)?;
        let lambda = tape.value(lam).iter().copied().collect();
        Ok(Some((lambda, gtn.warm_start(&self.store, tape.value(e.h), env.num_ues(), &env.budget))))
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct LossParts {
    actor: f64,
    value: f64,
    ratio_dev: f64,
}

/// One stored step of the joint rollout.
#[derive(Clone, Debug)]
pub struct Transition {
    pub graph: Option<Arc<InteractionGraph>>,
    pub local: Vec<Vec<f64>>,
    pub prev_residuals: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    pub logp: Vec<f64>,
    pub reward: f64,
    pub value: f64,
    pub residuals: Vec<f64>,
    pub done: bool,
    pub advantage: f64,
    pub ret: f64,
    pub hard_ok: bool,
    pub sum_se: f64,
    pub tr_crb: f64,
    pub power: f64,
}

/// Generalised advantage estimation over one trajectory.
///
/// `values` has one more entry than `rewards` (bootstrap); `dones[t]` cuts
/// the recursion after step `t`.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * live - values[t];
        acc = delta + gamma * lambda * live * acc;
        adv[t] = acc;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Adam with bias correction and global-norm clipping.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_norm: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, max_norm: f64) -> Self {
        let z: Vec<Tensor> = store.tensors().iter().map(|t| Tensor::zeros(t.nrows(), t.ncols())).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, max_norm, m: z.clone(), v: z, t: 0 }
    }

    /// Applies one update; returns the pre-clipping gradient norm.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> f64 {
        let norm = grads.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt();
        let scale = if self.max_norm > 0.0 && norm > self.max_norm { self.max_norm / norm } else { 1.0 };
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (i, g) in grads.iter().enumerate() {
            let p = store.get_mut(i);
            for j in 0..g.len() {
                let gj = g[j] * scale;
                self.m[i][j] = b1 * self.m[i][j] + (1.0 - b1) * gj;
                self.v[i][j] = b2 * self.v[i][j] + (1.0 - b2) * gj * gj;
                p[j] -= self.lr * (self.m[i][j] / c1) / ((self.v[i][j] / c2).sqrt() + self.eps);
            }
        }
        norm
    }
}

/// Per-iteration learning-curve statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iter: usize,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub sum_rate: f64,
    pub mean_tr_crb: f64,
    pub violation: f64,
    pub hard_violations: usize,
    pub mean_power: f64,
    pub actor_loss: f64,
    pub value_loss: f64,
}

pub fn write_curve_csv(rows: &[CurveRow], path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// A feasible realisation for episode key `key`, trying fresh salts when
/// placement fails.
fn sample_env(cfg: &DolgConfig, params: &SystemParams, key: u64) -> Result<Env> {
    for salt in 0..16u64 {
        let seed = derive(key, "dolg-scenario", &[salt]);
        if let Ok(sc) = generate_scenario(&cfg.scenario, params, seed) {
            return Env::new(SeedContext::new(sc, params)?);
        }
    }
    Err(Error::ScenarioInfeasible { seed: key, retries: 16 })
}

/// Initial design state: encoder warm start with `δ = ξ`.
///
/// The first pass uses a pilot-only state (sensing cue zero); its warm start
/// then defines the state the episode starts from.
pub fn initial_design(policy: &Policy, env: &Env) -> Result<IsacDesign> {
    let idle = env.idle_design();
    let Some(gtn) = &policy.gtn else { return Ok(idle) };
    let g = env.graph(&idle)?;
    let mut tape = Tape::with_leaves(policy.store.tensors());
    let e = gtn.forward(&mut tape, &g)?;
    let w = gtn.warm_start(&policy.store, tape.value(e.h), env.num_ues(), &env.budget);
    Ok(IsacDesign { w, ..idle })
}

/// Rolls one episode of `cfg.horizon` joint steps.
pub fn rollout(policy: &Policy, env: &Env, mode: ActMode, rng: &mut ChaCha8Rng) -> Result<(Vec<Transition>, StepOutcome)> {
    let cfg = &policy.cfg;
    let params = &env.ctx.params;
    let mut prev = initial_design(policy, env)?;
    let mut prev_res = vec![0.0; env.num_ues() + env.ctx.scenario.num_sts()];
    let mut out = Vec::with_capacity(cfg.horizon);
    let mut last = None;
    for t in 0..cfg.horizon {
        let graph = if policy.gtn.is_some() { Some(Arc::new(env.graph(&prev)?)) } else { None };
        let local = env.local_obs(&prev);
        let (obs, emb) = policy.observe(graph.as_deref(), &local)?;
        let mut z = Vec::with_capacity(obs.len());
        let mut logp = Vec::with_capacity(obs.len());
        for (m, o) in obs.iter().enumerate() {
            let (zm, lp) = policy.act(m, o, mode, rng)?;
            z.push(zm);
            logp.push(lp);
        }
        let value = policy.value(emb.as_ref().map(|(a, b)| (a, b)), &local, &prev_res, params)?;
        let step = env.step(&z, cfg)?;
        out.push(Transition {
            graph,
            local,
            prev_residuals: prev_res.clone(),
            z,
            logp,
            reward: step.reward,
            value,
            residuals: step.residuals.clone(),
            done: t + 1 == cfg.horizon,
            advantage: 0.0,
            ret: 0.0,
            hard_ok: step.hard_ok,
            sum_se: step.comm.rate.iter().sum::<f64>() / params.bandwidth_hz,
            tr_crb: step.crb.total_capped(),
            power: step.comm.p_tot,
        });
        prev_res = step.residuals.clone();
        prev = step.design.clone();
        last = Some(step);
    }
    Ok((out, last.expect("horizon ≥ 1")))
}

/// Sums per-transition gradients in input order.
fn batch_gradients(policy: &Policy, batch: &[&Transition], params: &SystemParams) -> Result<(Vec<Tensor>, LossParts)> {
    let n = batch.len() as f64;
    let per: Vec<Result<(Vec<Tensor>, LossParts)>> = par::map(batch, |tr| {
        let mut tape = Tape::with_leaves(policy.store.tensors());
        let (l, parts) = policy.loss(&mut tape, tr, params, n)?;
        if !tape.scalar(l).is_finite() {
            return Err(Error::NonFinite("PPO loss".into()));
        }
        let g = tape.backward(l)?;
        Ok(((0..policy.store.len()).map(|i| g.or_zeros(Var::new(i), policy.store.get(i))).collect(), parts))
    });
    let mut total: Vec<Tensor> = policy.store.tensors().iter().map(|t| Tensor::zeros(t.nrows(), t.ncols())).collect();
    let mut parts = LossParts::default();
    for r in per {
        let (g, p) = r?;
        for (a, b) in total.iter_mut().zip(g) {
            *a += b;
        }
        parts.actor += p.actor;
        parts.value += p.value;
        parts.ratio_dev = parts.ratio_dev.max(p.ratio_dev);
    }
    Ok((total, parts))
}

/// Gradient of the summed PPO loss over `batch`, one tensor per parameter.
pub fn policy_gradients(policy: &Policy, batch: &[Transition], params: &SystemParams) -> Result<Vec<Tensor>> {
    let refs: Vec<&Transition> = batch.iter().collect();
    Ok(batch_gradients(policy, &refs, params)?.0)
}

/// Clipped PPO epochs over a filled buffer with normalised advantages.
pub fn ppo_update(policy: &mut Policy, opt: &mut Adam, buffer: &mut [Transition], params: &SystemParams) -> Result<(f64, f64)> {
    if buffer.is_empty() {
        return Err(Error::Config("empty rollout buffer".into()));
    }
    let n = buffer.len() as f64;
    let mean = buffer.iter().map(|t| t.advantage).sum::<f64>() / n;
    let sd = (buffer.iter().map(|t| (t.advantage - mean).powi(2)).sum::<f64>() / n).sqrt();
    for t in buffer.iter_mut() {
        t.advantage = (t.advantage - mean) / (sd + 1e-8);
    }
    let mb = if policy.cfg.minibatch == 0 { buffer.len() } else { policy.cfg.minibatch.min(buffer.len()) };
    let (mut actor, mut value) = (0.0, 0.0);
    for _ in 0..policy.cfg.epochs {
        for chunk in buffer.chunks(mb) {
            let refs: Vec<&Transition> = chunk.iter().collect();
            let (g, parts) = batch_gradients(policy, &refs, params)?;
            opt.step(&mut policy.store, &g);
            actor = parts.actor;
            value = parts.value;
        }
    }
    Ok((actor, value))
}

/// Trains from scratch; the curve depends only on `(cfg, params, seed)`.
pub fn train(cfg: &DolgConfig, params: &SystemParams, seed: u64) -> Result<(Policy, Vec<CurveRow>)> {
    cfg.validate()?;
    let probe = sample_env(cfg, params, derive(seed, "dolg-shape", &[]))?;
    let ant: Vec<usize> = (0..probe.num_aps()).map(|m| probe.ctx.scenario.antennas(m)).collect();
    let mut policy = Policy::new(cfg, &ant, probe.num_ues(), probe.ctx.scenario.num_sts(), seed)?;
    let mut opt = Adam::new(&policy.store, cfg.lr, cfg.max_grad_norm);
    let mut curve = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let episodes: Vec<Result<Vec<Transition>>> = par::map_range(cfg.episodes_per_iter, |ep| {
            let key = derive(seed, "dolg-episode", &[it as u64, ep as u64]);
            let env = sample_env(cfg, params, key)?;
            let mut rng = stream(key, "dolg-actions", &[]);
            let (mut trs, _) = rollout(&policy, &env, ActMode::Sample, &mut rng)?;
            let rewards: Vec<f64> = trs.iter().map(|t| t.reward).collect();
            let mut values: Vec<f64> = trs.iter().map(|t| t.value).collect();
            values.push(0.0);
            let dones: Vec<bool> = trs.iter().map(|t| t.done).collect();
            let (adv, ret) = gae(&rewards, &values, &dones, cfg.gamma, cfg.gae_lambda);
            for (t, (a, r)) in trs.iter_mut().zip(adv.into_iter().zip(ret)) {
                t.advantage = a;
                t.ret = r;
            }
            Ok(trs)
        });
        let mut buffer: Vec<Transition> = Vec::new();
        for e in episodes {
            buffer.extend(e?);
        }
        let n = buffer.len() as f64;
        let rm = buffer.iter().map(|t| t.reward).sum::<f64>() / n;
        let rs = (buffer.iter().map(|t| (t.reward - rm).powi(2)).sum::<f64>() / n).sqrt();
        let row_stats = (
            buffer.iter().map(|t| t.sum_se).sum::<f64>() / n,
            buffer.iter().map(|t| t.tr_crb).sum::<f64>() / n,
            buffer.iter().map(|t| violation(&t.residuals)).sum::<f64>() / n,
            buffer.iter().filter(|t| !t.hard_ok).count(),
            buffer.iter().map(|t| t.power).sum::<f64>() / n,
        );
        let (actor, value) = ppo_update(&mut policy, &mut opt, &mut buffer, params)?;
        curve.push(CurveRow {
            iter: it,
            reward_mean: rm,
            reward_std: rs,
            sum_rate: row_stats.0,
            mean_tr_crb: row_stats.1,
            violation: row_stats.2,
            hard_violations: row_stats.3,
            mean_power: row_stats.4,
            actor_loss: actor,
            value_loss: value,
        });
    }
    Ok((policy, curve))
}

/// Deterministic evaluation on a shared realisation: runs one mean-mode
/// episode and reports the final design. `runtime_s` is the wall time of a
/// single inference step (encoder plus all actors).
#[derive(Clone, Debug)]
pub struct PolicyEval {
    pub design: IsacDesign,
    pub comm: CommReport,
    pub crb: CrbReport,
    pub reward: f64,
    pub runtime_s: f64,
    pub hard_ok: bool,
}

pub fn evaluate(policy: &Policy, ctx: &SeedContext) -> Result<PolicyEval> {
    if ctx.scenario.num_aps() != policy.num_aps() || ctx.scenario.num_ues() != policy.num_ues {
        return Err(Error::Config("policy and scenario dimensions differ".into()));
    }
    let env = Env::new(ctx.clone())?;
    let mut rng = stream(ctx.seed, "dolg-eval", &[]);
    let (trs, last) = rollout(policy, &env, ActMode::Mean, &mut rng)?;
    let runtime_s = inference_time(policy, &env)?;
    Ok(PolicyEval {
        design: last.design,
        comm: last.comm,
        crb: last.crb,
        reward: last.reward,
        runtime_s,
        hard_ok: trs.iter().all(|t| t.hard_ok),
    })
}

/// Wall time of one decentralised decision: graph encoding plus every
/// actor's mean action.
pub fn inference_time(policy: &Policy, env: &Env) -> Result<f64> {
    let state = env.idle_design();
    let local = env.local_obs(&state);
    let graph = if policy.gtn.is_some() { Some(env.graph(&state)?) } else { None };
    let t0 = Instant::now();
    let (obs, _) = policy.observe(graph.as_ref(), &local)?;
    let mut rng = stream(0, "unused", &[]);
    for (m, o) in obs.iter().enumerate() {
        policy.act(m, o, ActMode::Mean, &mut rng)?;
    }
    Ok(t0.elapsed().as_secs_f64())
}
