//! Heterogeneous AP–UE interaction graph.

use std::sync::Arc;

use nalgebra::Matrix2;

use crate::channel::{ChannelSet, CVec, C64};
use crate::error::Result;
use crate::fim::J11Map;
use crate::params::SystemParams;
use crate::scenario::{dist, los_probability, Scenario, Vec2};
use crate::signal::{CMat, IsacDesign};

use super::tape::Tensor;

pub const NODE_DIM: usize = 8;
pub const AP_EDGE_DIM: usize = 5;
pub const UE_EDGE_DIM: usize = 7;

/// Design state the graph is conditioned on.
///
/// `blocks[m][k]` is the AP-`m` diagonal block `S_m W_k S_mᴴ` of each lifted
/// covariance, in watts.
#[derive(Clone, Debug)]
pub struct DesignState {
    pub delta: Vec<Vec<f64>>,
    pub blocks: Vec<Vec<CMat>>,
    pub q_sen: Vec<CMat>,
    pub st_mask: Vec<Vec<bool>>,
}

impl DesignState {
    pub fn from_design(d: &IsacDesign) -> Self {
        Self {
            delta: d.delta.clone(),
            blocks: d.w.iter().map(|r| r.iter().map(|w| w * w.adjoint()).collect()).collect(),
            q_sen: d.q_sen.clone(),
            st_mask: d.st_mask.clone(),
        }
    }

    /// From stacked lifted covariances `W_k` (watts).
    pub fn from_lifted(lifted: &[CMat], delta: &[Vec<f64>], q_sen: &[CMat], st_mask: &[Vec<bool>]) -> Self {
        let mut off = 0;
        let mut blocks = Vec::with_capacity(q_sen.len());
        for q in q_sen {
            let n = q.nrows();
            blocks.push(lifted.iter().map(|w| w.view((off, off), (n, n)).into_owned()).collect());
            off += n;
        }
        Self { delta: delta.to_vec(), blocks, q_sen: q_sen.to_vec(), st_mask: st_mask.to_vec() }
    }

    /// `Q_m = Σ_k δ² S_m W_k S_mᴴ + Q^sen_m`, optionally without UE `skip`.
    pub fn covariance(&self, m: usize, skip: Option<usize>) -> CMat {
        let mut x = self.q_sen[m].clone();
        for (k, b) in self.blocks[m].iter().enumerate() {
            if Some(k) != skip {
                x += b * C64::from(self.delta[m][k] * self.delta[m][k]);
            }
        }
        x
    }
}

/// Node features, typed edge lists and edge features. Node `i = m·K + k`.
///
/// Each edge `(dst, src)` carries a message from `src` into `dst`, so the
/// typed neighbourhood of `i` is the set of `src` with `dst = i`.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionGraph {
    pub num_aps: usize,
    pub num_ues: usize,
    pub nodes: Tensor,
    pub ap_dst: Arc<Vec<usize>>,
    pub ap_src: Arc<Vec<usize>>,
    pub ap_feat: Tensor,
    pub ue_dst: Arc<Vec<usize>>,
    pub ue_src: Arc<Vec<usize>>,
    pub ue_feat: Tensor,
    /// `m` of each node, for AP pooling.
    pub node_ap: Arc<Vec<usize>>,
    /// `k` of each node, for UE pooling.
    pub node_ue: Arc<Vec<usize>>,
}

impl InteractionGraph {
    pub fn num_nodes(&self) -> usize {
        self.num_aps * self.num_ues
    }

    pub fn node(&self, m: usize, k: usize) -> usize {
        m * self.num_ues + k
    }
}

/// `|xᴴy| / (‖x‖‖y‖)`; zero for empty, zero-norm or mismatched vectors.
pub fn similarity(x: &CVec, y: &CVec) -> f64 {
    if x.len() != y.len() {
        return 0.0;
    }
    let d = x.norm() * y.norm();
    if d > 0.0 {
        x.dotc(y).norm() / d
    } else {
        0.0
    }
}

/// Phase-curvature index `‖a − e^{-jkr}1‖² / N`.
pub fn curvature_index(a: &CVec, r: f64, k: f64) -> f64 {
    let p = C64::from_polar(1.0, -k * r);
    a.iter().map(|x| (x - p).norm_sqr()).sum::<f64>() / a.len().max(1) as f64
}

fn logdet2(j: &Matrix2<f64>, eps: f64) -> f64 {
    let m = j + Matrix2::identity() * eps;
    (m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]).max(f64::MIN_POSITIVE).ln()
}

fn unit(from: Vec2, to: Vec2) -> Vec2 {
    let r = dist(from, to);
    if r > 0.0 {
        [(to[0] - from[0]) / r, (to[1] - from[1]) / r]
    } else {
        [0.0, 0.0]
    }
}

/// Rayleigh distance floored at one wavelength so single-element arrays keep
/// a finite cross-field ratio.
fn rayleigh(sc: &Scenario, m: usize, params: &SystemParams) -> f64 {
    let lambda = params.wavelength();
    sc.rayleigh(m, lambda).max(lambda)
}

/// Sensing cue `ζ_{m,k}`: log-det information lost at AP `m` without UE `k`.
pub fn sensing_cue(ch: &ChannelSet, params: &SystemParams, state: &DesignState) -> Result<Vec<Vec<f64>>> {
    let n0 = params.noise_power();
    let (mm, kk) = (ch.num_aps(), ch.num_ues());
    let mut z = vec![vec![0.0; kk]; mm];
    for m in 0..mm {
        let maps: Vec<J11Map> =
            (0..ch.num_sts()).filter(|&s| state.st_mask[m][s]).map(|s| J11Map::new(&ch.st[m][s], params, n0)).collect::<Result<_>>()?;
        if maps.is_empty() {
            continue;
        }
        let full = state.covariance(m, None);
        let base: f64 = maps.iter().map(|j| logdet2(&j.eval(&full), params.eps_0)).sum();
        for (k, zk) in z[m].iter_mut().enumerate() {
            if state.delta[m][k] == 0.0 {
                continue;
            }
            let part = state.covariance(m, Some(k));
            *zk = base - maps.iter().map(|j| logdet2(&j.eval(&part), params.eps_0)).sum::<f64>();
        }
    }
    Ok(z)
}

pub fn build_graph(sc: &Scenario, ch: &ChannelSet, params: &SystemParams, state: &DesignState) -> Result<InteractionGraph> {
    let (mm, kk) = (sc.num_aps(), sc.num_ues());
    let k0 = params.wavenumber();
    let zeta = sensing_cue(ch, params, state)?;
    let idx = |m: usize, k: usize| m * kk + k;

    let mut ratio = vec![vec![0.0; kk]; mm];
    let mut plos = vec![vec![0.0; kk]; mm];
    let mut qhat = vec![vec![[0.0; 2]; kk]; mm];
    let mut nodes = Tensor::zeros(mm * kk, NODE_DIM);
    for m in 0..mm {
        let rr = rayleigh(sc, m, params);
        for k in 0..kk {
            let link = &ch.ue[m][k];
            let r = link.geom.r;
            ratio[m][k] = r / rr;
            plos[m][k] = los_probability(r, params.los_beta)?;
            qhat[m][k] = unit(sc.ap_positions[m], sc.ue_positions[k]);
            let g = link.gain_eff(k0);
            let row = [
                ratio[m][k],
                if r < rr { 1.0 } else { 0.0 },
                plos[m][k],
                link.pathloss.ln(),
                g.re,
                g.im,
                curvature_index(&link.steering, r, k0),
                zeta[m][k],
            ];
            for (j, v) in row.into_iter().enumerate() {
                nodes[(idx(m, k), j)] = v;
            }
        }
    }

    let (mut ap_dst, mut ap_src, mut ap_rows) = (Vec::new(), Vec::new(), Vec::new());
    for m in 0..mm {
        for k in 0..kk {
            for k2 in (0..kk).filter(|&x| x != k) {
                ap_dst.push(idx(m, k));
                ap_src.push(idx(m, k2));
                ap_rows.push([
                    qhat[m][k][0] - qhat[m][k2][0],
                    qhat[m][k][1] - qhat[m][k2][1],
                    ratio[m][k] - ratio[m][k2],
                    plos[m][k] - plos[m][k2],
                    similarity(&ch.ue[m][k].steering, &ch.ue[m][k2].steering),
                ]);
            }
        }
    }
    let (mut ue_dst, mut ue_src, mut ue_rows) = (Vec::new(), Vec::new(), Vec::new());
    for m in 0..mm {
        for k in 0..kk {
            for m2 in (0..mm).filter(|&x| x != m) {
                ue_dst.push(idx(m, k));
                ue_src.push(idx(m2, k));
                ue_rows.push([
                    qhat[m][k][0] - qhat[m2][k][0],
                    qhat[m][k][1] - qhat[m2][k][1],
                    ratio[m][k],
                    ratio[m2][k],
                    plos[m][k],
                    plos[m2][k],
                    similarity(&ch.ue[m][k].steering, &ch.ue[m2][k].steering),
                ]);
            }
        }
    }
    let ap_feat = Tensor::from_fn(ap_rows.len(), AP_EDGE_DIM, |e, j| ap_rows[e][j]);
    let ue_feat = Tensor::from_fn(ue_rows.len(), UE_EDGE_DIM, |e, j| ue_rows[e][j]);
    Ok(InteractionGraph {
        num_aps: mm,
        num_ues: kk,
        nodes,
        ap_dst: Arc::new(ap_dst),
        ap_src: Arc::new(ap_src),
        ap_feat,
        ue_dst: Arc::new(ue_dst),
        ue_src: Arc::new(ue_src),
        ue_feat,
        node_ap: Arc::new((0..mm * kk).map(|i| i / kk).collect()),
        node_ue: Arc::new((0..mm * kk).map(|i| i % kk).collect()),
    })
}
