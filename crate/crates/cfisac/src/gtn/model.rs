//! Graph-transformer encoder, readouts and optimisation-interface heads.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{CVec, C64};
use crate::error::{Error, Result};
use crate::signal::CMat;

use super::graph::{InteractionGraph, AP_EDGE_DIM, NODE_DIM, UE_EDGE_DIM};
use super::tape::{softplus, Tape, Tensor, Var};

/// Named dense tensors, addressed by insertion index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    /// Uniform `(−1/√fan_in, 1/√fan_in)` initialisation.
    pub fn push_uniform(&mut self, name: impl Into<String>, rows: usize, cols: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> usize {
        let b = 1.0 / (fan_in.max(1) as f64).sqrt();
        let t = Tensor::from_fn(rows, cols, |_, _| rng.random_range(-b..b));
        self.push(name, t)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Copies every tensor whose name also exists in `other` with the same shape.
    pub fn load_matching(&mut self, other: &ParamStore) -> usize {
        let mut n = 0;
        for (name, t) in other.iter() {
            if let Some(i) = self.find(name) {
                if self.tensors[i].shape() == t.shape() {
                    self.tensors[i] = t.clone();
                    n += 1;
                }
            }
        }
        n
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GtnConfig {
    pub d_h: usize,
    pub heads: usize,
    pub layers: usize,
    /// FFN hidden width as a multiple of `d_h`.
    pub ffn_mult: usize,
    pub eps_w: f64,
    pub eps_p: f64,
    pub ln_eps: f64,
}

impl Default for GtnConfig {
    fn default() -> Self {
        Self { d_h: 16, heads: 2, layers: 2, ffn_mult: 2, eps_w: 1e-8, eps_p: 1e-8, ln_eps: 1e-5 }
    }
}

impl GtnConfig {
    /// Paper-scale encoder: three layers, four heads, width 128.
    pub fn paper() -> Self {
        Self { d_h: 128, heads: 4, layers: 3, ..Self::default() }
    }

    pub fn head_dim(&self) -> usize {
        self.d_h / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_h == 0 || self.heads == 0 || self.d_h % self.heads != 0 {
            return Err(Error::Config(format!("d_h = {} must be a positive multiple of heads = {}", self.d_h, self.heads)));
        }
        if self.layers == 0 || self.ffn_mult == 0 || !(self.eps_w > 0.0) || !(self.eps_p > 0.0) {
            return Err(Error::Config("layers, ffn_mult, eps_w and eps_p must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct TypeIdx {
    q: Vec<usize>,
    k: Vec<usize>,
    v: Vec<usize>,
    u: Vec<usize>,
}

#[derive(Clone, Debug)]
struct LayerIdx {
    ap: TypeIdx,
    ue: TypeIdx,
    gate_w: usize,
    gate_b: usize,
    wo: usize,
    ln1: (usize, usize),
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    ln2: (usize, usize),
}

/// Parameter layout of one encoder inside a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Gtn {
    pub cfg: GtnConfig,
    in_w: usize,
    in_b: usize,
    in_ln: (usize, usize),
    edge_ap: (usize, usize),
    edge_ue: (usize, usize),
    layers: Vec<LayerIdx>,
    pool_ap: usize,
    pool_ue: usize,
    /// `(Re, Im)` of `U_{w,m}`, stored as `d_h × N_m`.
    u_w: Vec<(usize, usize)>,
    u_lambda: usize,
}

/// Encoder outputs plus intermediate attention and gate values.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// `MK × d_h` final node embeddings.
    pub h: Var,
    /// `M × d_h`.
    pub g_ap: Var,
    /// `K × d_h`.
    pub g_ue: Var,
    /// Attention columns `(layer, is_ue_type, head, α)`.
    pub attention: Vec<(usize, bool, usize, Var)>,
    /// Per layer: `(η, m^AP, m^UE, fused)`.
    pub fusion: Vec<(Var, Var, Var, Var)>,
}

impl Gtn {
    /// Registers a freshly initialised encoder for arrays of `antennas[m]`
    /// elements under `prefix`.
    pub fn init(cfg: &GtnConfig, antennas: &[usize], store: &mut ParamStore, prefix: &str, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let (dh, da, dff) = (cfg.d_h, cfg.head_dim(), cfg.d_h * cfg.ffn_mult);
        let mut u = |name: &str, r: usize, c: usize, fan: usize| store.push_uniform(format!("{prefix}{name}"), r, c, fan, rng);
        let in_w = u("in.w", NODE_DIM, dh, NODE_DIM);
        let in_b = u("in.b", 1, dh, NODE_DIM);
        let edge_ap = (u("edge.ap.A", AP_EDGE_DIM, da, AP_EDGE_DIM), u("edge.ap.a", 1, da, AP_EDGE_DIM));
        let edge_ue = (u("edge.ue.A", UE_EDGE_DIM, da, UE_EDGE_DIM), u("edge.ue.a", 1, da, UE_EDGE_DIM));
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let mut ty = |t: &str| TypeIdx {
                q: (0..cfg.heads).map(|c| u(&format!("l{l}.{t}.q{c}"), dh, da, dh)).collect(),
                k: (0..cfg.heads).map(|c| u(&format!("l{l}.{t}.k{c}"), dh, da, dh)).collect(),
                v: (0..cfg.heads).map(|c| u(&format!("l{l}.{t}.v{c}"), dh, da, dh)).collect(),
                u: (0..cfg.heads).map(|c| u(&format!("l{l}.{t}.u{c}"), da, 1, da)).collect(),
            };
            let ap = ty("ap");
            let ue = ty("ue");
            layers.push(LayerIdx {
                ap,
                ue,
                gate_w: u(&format!("l{l}.gate.w"), 3 * dh, dh, 3 * dh),
                gate_b: u(&format!("l{l}.gate.b"), 1, dh, 3 * dh),
                wo: u(&format!("l{l}.wo"), dh, dh, dh),
                ln1: (0, 0),
                w1: u(&format!("l{l}.ffn.w1"), dh, dff, dh),
                b1: u(&format!("l{l}.ffn.b1"), 1, dff, dh),
                w2: u(&format!("l{l}.ffn.w2"), dff, dh, dff),
                b2: u(&format!("l{l}.ffn.b2"), 1, dh, dff),
                ln2: (0, 0),
            });
        }
        let pool_ap = u("pool.a", dh, 1, dh);
        let pool_ue = u("pool.c", dh, 1, dh);
        let u_w = antennas
            .iter()
            .enumerate()
            .map(|(m, &n)| (u(&format!("head.w{m}.re"), dh, n, dh), u(&format!("head.w{m}.im"), dh, n, dh)))
            .collect();
        let u_lambda = u("head.lambda", dh, 1, dh);
        let mut ln = |name: String| {
            (store.push(format!("{name}.g"), Tensor::from_element(1, dh, 1.0)), store.push(format!("{name}.b"), Tensor::zeros(1, dh)))
        };
        let in_ln = ln(format!("{prefix}in.ln"));
        for (l, layer) in layers.iter_mut().enumerate() {
            layer.ln1 = ln(format!("{prefix}l{l}.ln1"));
            layer.ln2 = ln(format!("{prefix}l{l}.ln2"));
        }
        Ok(Self { cfg: cfg.clone(), in_w, in_b, in_ln, edge_ap, edge_ue, layers, pool_ap, pool_ue, u_w, u_lambda })
    }

    pub fn num_aps(&self) -> usize {
        self.u_w.len()
    }

    /// Indices of the gate weight and bias of every layer.
    pub fn gate_params(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.gate_w, l.gate_b)).collect()
    }

    pub fn lambda_param(&self) -> usize {
        self.u_lambda
    }

    #[allow(clippy::too_many_arguments)]
    fn attend(
        &self,
        tape: &mut Tape,
        h: Var,
        psi: Option<Var>,
        dst: &std::sync::Arc<Vec<usize>>,
        src: &std::sync::Arc<Vec<usize>>,
        n: usize,
        idx: &TypeIdx,
        c: usize,
    ) -> Result<(Var, Option<Var>)> {
        let da = self.cfg.head_dim();
        let Some(psi) = psi else {
            return Ok((tape.leaf(Tensor::zeros(n, da)), None));
        };
        let q = tape.matmul(h, Var(idx.q[c]))?;
        let k = tape.matmul(h, Var(idx.k[c]))?;
        let v = tape.matmul(h, Var(idx.v[c]))?;
        let qe = tape.gather(q, dst.clone())?;
        let ke = tape.gather(k, src.clone())?;
        let qk = tape.mul(qe, ke)?;
        let dotp = tape.row_sum(qk);
        let s = tape.affine(dotp, 1.0 / (da as f64).sqrt(), 0.0);
        let bias = tape.matmul(psi, Var(idx.u[c]))?;
        let logit = tape.add(s, bias)?;
        let alpha = tape.segment_softmax(logit, dst.clone(), n)?;
        let ve = tape.gather(v, src.clone())?;
        let wv = tape.mul_col(ve, alpha)?;
        let msg = tape.scatter_add(wv, dst.clone(), n)?;
        Ok((msg, Some(alpha)))
    }

    /// Runs the encoder on a tape whose leading leaves are the store tensors.
    pub fn forward(&self, tape: &mut Tape, g: &InteractionGraph) -> Result<Encoded> {
        if g.num_aps != self.num_aps() {
            return Err(Error::Build(format!("encoder built for {} APs, graph has {}", self.num_aps(), g.num_aps)));
        }
        let n = g.num_nodes();
        let eps = self.cfg.ln_eps;
        let x = tape.leaf(g.nodes.map(slog));
        let z = tape.matmul(x, Var(self.in_w))?;
        let z = tape.add_row(z, Var(self.in_b))?;
        let mut h = tape.layer_norm(z, Var(self.in_ln.0), Var(self.in_ln.1), eps)?;

        let edge = |tape: &mut Tape, feat: &Tensor, p: (usize, usize)| -> Result<Option<Var>> {
            if feat.nrows() == 0 {
                return Ok(None);
            }
            let e = tape.leaf(feat.map(slog));
            let a = tape.matmul(e, Var(p.0))?;
            let a = tape.add_row(a, Var(p.1))?;
            Ok(Some(tape.relu(a)))
        };
        let psi_ap = edge(tape, &g.ap_feat, self.edge_ap)?;
        let psi_ue = edge(tape, &g.ue_feat, self.edge_ue)?;

        let mut attention = Vec::new();
        let mut fusion = Vec::new();
        for (l, lp) in self.layers.iter().enumerate() {
            let mut typed = |tape: &mut Tape, is_ue: bool| -> Result<Var> {
                let (psi, dst, src, idx) =
                    if is_ue { (psi_ue, &g.ue_dst, &g.ue_src, &lp.ue) } else { (psi_ap, &g.ap_dst, &g.ap_src, &lp.ap) };
                let mut heads = Vec::with_capacity(self.cfg.heads);
                for c in 0..self.cfg.heads {
                    let (msg, alpha) = self.attend(tape, h, psi, dst, src, n, idx, c)?;
                    if let Some(a) = alpha {
                        attention.push((l, is_ue, c, a));
                    }
                    heads.push(msg);
                }
                tape.concat(&heads)
            };
            let m_ap = typed(tape, false)?;
            let m_ue = typed(tape, true)?;
            let cat = tape.concat(&[m_ap, m_ue, h])?;
            let gl = tape.matmul(cat, Var(lp.gate_w))?;
            let gl = tape.add_row(gl, Var(lp.gate_b))?;
            let eta = tape.sigmoid(gl);
            let diff = tape.sub(m_ap, m_ue)?;
            let mix = tape.mul(eta, diff)?;
            let fused = tape.add(m_ue, mix)?;
            fusion.push((eta, m_ap, m_ue, fused));

            let o = tape.matmul(fused, Var(lp.wo))?;
            let r1 = tape.add(h, o)?;
            let h1 = tape.layer_norm(r1, Var(lp.ln1.0), Var(lp.ln1.1), eps)?;
            let f = tape.matmul(h1, Var(lp.w1))?;
            let f = tape.add_row(f, Var(lp.b1))?;
            let f = tape.relu(f);
            let f = tape.matmul(f, Var(lp.w2))?;
            let f = tape.add_row(f, Var(lp.b2))?;
            let r2 = tape.add(h1, f)?;
            h = tape.layer_norm(r2, Var(lp.ln2.0), Var(lp.ln2.1), eps)?;
        }

        let pool = |tape: &mut Tape, p: usize, seg: &std::sync::Arc<Vec<usize>>, nseg: usize| -> Result<Var> {
            let s = tape.matmul(h, Var(p))?;
            let w = tape.segment_softmax(s, seg.clone(), nseg)?;
            let wh = tape.mul_col(h, w)?;
            tape.scatter_add(wh, seg.clone(), nseg)
        };
        let g_ap = pool(tape, self.pool_ap, &g.node_ap, g.num_aps)?;
        let g_ue = pool(tape, self.pool_ue, &g.node_ue, g.num_ues)?;
        Ok(Encoded { h, g_ap, g_ue, attention, fusion })
    }

    /// `λ_k = softplus(u_λᵀ g^UE_k)` as a `K×1` node.
    pub fn feasibility_weights(&self, tape: &mut Tape, g_ue: Var) -> Result<Var> {
        let z = tape.matmul(g_ue, Var(self.u_lambda))?;
        Ok(tape.softplus(z))
    }

    /// Warm-start beamformers from final node embeddings (`MK × d_h`).
    ///
    /// Each direction is normalised with `ε_w`, then every AP is rescaled to
    /// `budget[m]` with the `ε_p`-stabilised factor.
    pub fn warm_start(&self, store: &ParamStore, h: &Tensor, num_ues: usize, budget: &[f64]) -> Vec<Vec<CVec>> {
        (0..self.num_aps())
            .map(|m| {
                let (ur, ui) = (store.get(self.u_w[m].0), store.get(self.u_w[m].1));
                let mut w: Vec<CVec> = (0..num_ues)
                    .map(|k| {
                        let row = h.row(m * num_ues + k);
                        let re = row * ur;
                        let im = row * ui;
                        let v = CVec::from_iterator(re.len(), re.iter().zip(im.iter()).map(|(&a, &b)| C64::new(a, b)));
                        let nv = v.norm();
                        v / C64::from(nv + self.cfg.eps_w)
                    })
                    .collect();
                let tot: f64 = w.iter().map(|v| v.norm_squared()).sum();
                let s = (budget[m] / (tot + self.cfg.eps_p)).sqrt();
                for v in &mut w {
                    *v *= C64::from(s);
                }
                w
            })
            .collect()
    }
}

/// `sign(x)·ln(1 + |x|)`, applied to raw node and edge features before the
/// first linear map.
pub fn slog(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

/// `λ_k` evaluated off-tape.
pub fn softplus_weights(g_ue: &Tensor, u_lambda: &Tensor) -> Vec<f64> {
    (g_ue * u_lambda).iter().map(|&x| softplus(x)).collect()
}

/// Stacked rank-one lifts `w̃_k w̃_kᴴ`.
pub fn lift_stacked(w: &[Vec<CVec>]) -> Vec<CMat> {
    let kk = w.first().map_or(0, |r| r.len());
    (0..kk)
        .map(|k| {
            let n: usize = w.iter().map(|r| r[k].len()).sum();
            let s = CVec::from_iterator(n, w.iter().flat_map(|r| r[k].iter().copied()));
            &s * s.adjoint()
        })
        .collect()
}
