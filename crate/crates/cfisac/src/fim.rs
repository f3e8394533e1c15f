//! Fisher information and Cramér-Rao bounds for echo-based target sensing.
//!
//! Per AP `m` and target `s` the unknowns are `(r, θ, Re β_rt, Im β_rt)`.
//! The round-trip channel is `G = β_rt a aᵀ` with the spherical response `a`,
//! and the per-AP FIM entry is `(2T/N0) Re tr(G_q 𝕏 G_pᴴ)`.

use nalgebra::{Matrix2, Matrix4};
use serde::{Deserialize, Serialize};

use crate::channel::{range_slope_deficit, steering_jacobian, steering_near, ChannelSet, Link, LinkGeometry, C64};
use crate::error::{domain, Error, Result};
use crate::params::{db_to_lin, SystemParams};
use crate::signal::{CMat, IsacDesign};

/// `∂G/∂(r, θ, Re β, Im β)`.
#[derive(Clone, Debug)]
pub struct JacobianBlocks {
    pub g: [CMat; 4],
}

fn sym_outer(x: &crate::channel::CVec, y: &crate::channel::CVec) -> CMat {
    x * y.transpose() + y * x.transpose()
}

pub fn channel_jacobian_blocks(link: &LinkGeometry, beta_rt: C64, k: f64) -> Result<JacobianBlocks> {
    let a = steering_near(link, k);
    let (dr, dt) = steering_jacobian(link, k)?;
    let aat = &a * a.transpose();
    Ok(JacobianBlocks {
        g: [
            sym_outer(&dr, &a) * beta_rt,
            sym_outer(&dt, &a) * beta_rt,
            aat.clone(),
            aat * C64::new(0.0, 1.0),
        ],
    })
}

/// Same as [`channel_jacobian_blocks`] but with the range block shifted by a
/// multiple of `a aᵀ` (a nuisance direction). The Schur complement over the
/// gain parameters is unchanged, and it no longer cancels catastrophically.
pub fn deflated_jacobian_blocks(link: &LinkGeometry, beta_rt: C64, k: f64) -> Result<JacobianBlocks> {
    let mut jb = channel_jacobian_blocks(link, beta_rt, k)?;
    let a = steering_near(link, k);
    let def = range_slope_deficit(link);
    let mj = C64::new(0.0, -k);
    let dr = crate::channel::CVec::from_iterator(a.len(), a.iter().zip(&def).map(|(x, &e)| mj * e * x));
    jb.g[0] = sym_outer(&dr, &a) * beta_rt;
    Ok(jb)
}

/// `(2T/N0) Re tr(G_q 𝕏 G_pᴴ)` for all `p, q`.
pub fn per_ap_fim(x: &CMat, blocks: &JacobianBlocks, n0: f64, slots: usize) -> Result<Matrix4<f64>> {
    if !(n0 > 0.0) {
        return domain("noise power must be positive");
    }
    if slots == 0 {
        return domain("slot count must be positive");
    }
    let scale = 2.0 * slots as f64 / n0;
    let gx: Vec<CMat> = blocks.g.iter().map(|g| g * x).collect();
    let mut j = Matrix4::zeros();
    for p in 0..4 {
        for q in p..4 {
            // tr(G_q X G_pᴴ) = Σ_ij (G_q X)_ij conj(G_p)_ij
            let v: C64 = gx[q].iter().zip(blocks.g[p].iter()).map(|(a, b)| a * b.conj()).sum();
            j[(p, q)] = scale * v.re;
            j[(q, p)] = j[(p, q)];
        }
    }
    // The (Re, Im) cross term is identically zero; remove rounding residue.
    j[(2, 3)] = 0.0;
    j[(3, 2)] = 0.0;
    Ok(j)
}

/// Geometric Schur complement `J11 − J12 J22⁻¹ J12ᵀ` of one per-AP block.
pub fn schur_geometric(j: &Matrix4<f64>) -> Result<Matrix2<f64>> {
    let j11 = j.fixed_view::<2, 2>(0, 0).into_owned();
    let j12 = j.fixed_view::<2, 2>(0, 2).into_owned();
    let j22 = j.fixed_view::<2, 2>(2, 2).into_owned();
    let scale = j22.abs().max();
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::SingularFim("gain block is zero".into()));
    }
    let inv = j22.try_inverse().ok_or_else(|| Error::SingularFim("gain block singular".into()))?;
    let s = j11 - j12 * inv * j12.transpose();
    Ok((s + s.transpose()) * 0.5)
}

/// Invert a symmetric 2×2 information matrix, rejecting near-singular ones.
pub fn invert_info(s: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    let (a, b, c) = (s[(0, 0)], s[(0, 1)], s[(1, 1)]);
    let det = a * c - b * b;
    let tol = 1e-13 * (a.abs() * c.abs()).max(f64::MIN_POSITIVE);
    if !(a > 0.0 && c > 0.0 && det > tol) || !det.is_finite() {
        return Err(Error::SingularFim(format!("det {det:e}")));
    }
    Ok(Matrix2::new(c / det, -b / det, -b / det, a / det))
}

/// CRB blocks from stacked per-AP FIMs (block-diagonal over APs).
pub fn crb_from_blocks(per_ap: &[Matrix4<f64>]) -> Result<Vec<Matrix2<f64>>> {
    if per_ap.is_empty() {
        return Err(Error::SingularFim("no participating AP".into()));
    }
    per_ap.iter().map(|j| invert_info(&schur_geometric(j)?)).collect()
}

/// Echo round-trip gain `β̃²` scaled by the configured echo gain.
pub fn round_trip_gain(link: &Link, params: &SystemParams) -> C64 {
    let b = link.gain_eff(params.wavenumber());
    b * b * db_to_lin(params.echo_gain_db).sqrt()
}

/// Numerically stable geometric information of AP `m` about a target.
pub fn geometric_info(x: &CMat, link: &Link, params: &SystemParams, n0: f64) -> Result<Matrix2<f64>> {
    let jb = deflated_jacobian_blocks(&link.geom, round_trip_gain(link, params), params.wavenumber())?;
    schur_geometric(&per_ap_fim(x, &jb, n0, params.slots)?)
}

/// Full 4×4 per-AP FIM (direct parameterization).
pub fn link_fim(x: &CMat, link: &Link, params: &SystemParams, n0: f64) -> Result<Matrix4<f64>> {
    let jb = channel_jacobian_blocks(&link.geom, round_trip_gain(link, params), params.wavenumber())?;
    per_ap_fim(x, &jb, n0, params.slots)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StCrb {
    /// Participating APs and their 2×2 CRB blocks (row-major), `None` if singular.
    pub aps: Vec<usize>,
    pub blocks: Vec<Option<[f64; 4]>>,
    /// Sum of block traces, `inf` if any block is singular.
    pub tr_crb: f64,
    /// `min(tr_crb, cap)`.
    pub tr_crb_capped: f64,
    pub meets_eps: bool,
    /// Exact LMI check `Schur ⪰ ε⁻¹ I` on every block.
    pub lmi_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrbReport {
    pub per_st: Vec<StCrb>,
}

impl CrbReport {
    pub fn total_capped(&self) -> f64 {
        self.per_st.iter().map(|s| s.tr_crb_capped).sum()
    }
    pub fn mean_capped(&self) -> f64 {
        if self.per_st.is_empty() {
            0.0
        } else {
            self.total_capped() / self.per_st.len() as f64
        }
    }
}

/// Exact CRB of each target for per-AP transmit covariances `xs`, using the
/// APs flagged in `mask[m][s]`.
pub fn crb_report_cov(ch: &ChannelSet, xs: &[CMat], mask: &[Vec<bool>], params: &SystemParams) -> CrbReport {
    let n0 = params.noise_power();
    let cap = params.crb_cap();
    let mut per_st = Vec::with_capacity(ch.num_sts());
    for s in 0..ch.num_sts() {
        let aps: Vec<usize> = (0..ch.num_aps()).filter(|&m| mask[m][s]).collect();
        let mut blocks = Vec::with_capacity(aps.len());
        let mut tr = 0.0;
        let mut lmi_ok = !aps.is_empty();
        for &m in &aps {
            let info = geometric_info(&xs[m], &ch.st[m][s], params, n0);
            let crb = info.as_ref().ok().and_then(|i| invert_info(i).ok());
            match (info, crb) {
                (Ok(i), Some(c)) => {
                    let lam = i.symmetric_eigenvalues().min();
                    lmi_ok &= lam >= 1.0 / params.eps_th;
                    tr += c.trace();
                    blocks.push(Some([c[(0, 0)], c[(0, 1)], c[(1, 0)], c[(1, 1)]]));
                }
                _ => {
                    lmi_ok = false;
                    tr = f64::INFINITY;
                    blocks.push(None);
                }
            }
        }
        if aps.is_empty() {
            tr = f64::INFINITY;
        }
        per_st.push(StCrb {
            aps,
            blocks,
            tr_crb: tr,
            tr_crb_capped: tr.min(cap),
            meets_eps: tr <= params.eps_th,
            lmi_ok,
        });
    }
    CrbReport { per_st }
}

pub fn crb_report(ch: &ChannelSet, d: &IsacDesign, mask: &[Vec<bool>], params: &SystemParams) -> CrbReport {
    let xs: Vec<CMat> = (0..d.num_aps()).map(|m| d.tx_covariance(m)).collect();
    crb_report_cov(ch, &xs, mask, params)
}

/// `J11` of one (AP, target) pair as an affine map `X ↦ [Re tr(C_pq X)]`.
#[derive(Clone, Debug)]
pub struct J11Map {
    /// Hermitian coefficients for `(r,r)`, `(r,θ)`, `(θ,θ)`.
    pub c: [CMat; 3],
}

impl J11Map {
    pub fn new(link: &Link, params: &SystemParams, n0: f64) -> Result<Self> {
        let jb = channel_jacobian_blocks(&link.geom, round_trip_gain(link, params), params.wavenumber())?;
        let scale = 2.0 * params.slots as f64 / n0;
        let herm = |p: usize, q: usize| {
            let a = jb.g[p].adjoint() * &jb.g[q];
            (&a + a.adjoint()) * C64::from(0.5 * scale)
        };
        Ok(Self { c: [herm(0, 0), herm(0, 1), herm(1, 1)] })
    }

    pub fn eval(&self, x: &CMat) -> Matrix2<f64> {
        let t = |c: &CMat| -> f64 { c.iter().zip(x.transpose().iter()).map(|(a, b)| (a * b).re).sum() };
        let (rr, rt, tt) = (t(&self.c[0]), t(&self.c[1]), t(&self.c[2]));
        Matrix2::new(rr, rt, rt, tt)
    }
}

/// `−log det(J + εI)` (natural log); `+inf` if the argument is not PD.
pub fn phi(j11: &Matrix2<f64>, eps: f64) -> f64 {
    let m = j11 + Matrix2::identity() * eps;
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    if m[(0, 0)] > 0.0 && det > 0.0 {
        -det.ln()
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_covariance_gives_zero_fim() {
        let l = LinkGeometry::new(2.0, 0.3, (0..4).map(|i| [i as f64 * 5e-4, 0.0]).collect()).unwrap();
        let jb = channel_jacobian_blocks(&l, C64::new(0.3, 0.1), 6283.0).unwrap();
        let x = CMat::zeros(4, 4);
        assert_eq!(per_ap_fim(&x, &jb, 1.0, 4).unwrap(), Matrix4::zeros());
        assert!(per_ap_fim(&x, &jb, 0.0, 4).is_err());
    }

    #[test]
    fn zero_gain_kills_geometric_blocks() {
        let l = LinkGeometry::new(2.0, 0.3, (0..3).map(|i| [i as f64 * 5e-4, 0.0]).collect()).unwrap();
        let jb = channel_jacobian_blocks(&l, C64::new(0.0, 0.0), 6283.0).unwrap();
        assert_eq!(jb.g[0].norm(), 0.0);
        assert_eq!(jb.g[1].norm(), 0.0);
        let a = steering_near(&l, 6283.0);
        assert!((&jb.g[2] - &a * a.transpose()).norm() < 1e-15);
    }

    #[test]
    fn diagonal_information_inverts() {
        let mut j = Matrix4::zeros();
        j[(0, 0)] = 4.0;
        j[(1, 1)] = 4.0;
        j[(2, 2)] = 1.0;
        j[(3, 3)] = 1.0;
        let c = crb_from_blocks(&[j]).unwrap();
        assert!((c[0] - Matrix2::identity() * 0.25).norm() < 1e-15);
        assert!(crb_from_blocks(&[Matrix4::zeros()]).is_err());
    }

    #[test]
    fn phi_at_zero_information() {
        let v = phi(&Matrix2::zeros(), 1e-6);
        assert!((v - 2.0 * (1e6f64).ln()).abs() < 1e-9);
    }
}
