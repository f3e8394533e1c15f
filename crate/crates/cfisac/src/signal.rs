//! Composite ISAC transmit signals, SINR, rate, power and energy efficiency.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::channel::{steering_near, ChannelSet, CVec, LinkGeometry, C64};
use crate::error::{domain, Result};
use crate::scenario::{Scenario, VisibilityMask};

pub type CMat = DMatrix<C64>;

/// Associations, per-AP beamformers and fixed sensing pilots.
#[derive(Clone, Debug)]
pub struct IsacDesign {
    /// `delta[m][k]` in `[0, 1]`.
    pub delta: Vec<Vec<f64>>,
    /// `w[m][k]` of length `N_m`.
    pub w: Vec<Vec<CVec>>,
    pub q_sen: Vec<CMat>,
    pub st_mask: Vec<Vec<bool>>,
}

impl IsacDesign {
    pub fn num_aps(&self) -> usize {
        self.w.len()
    }
    pub fn num_ues(&self) -> usize {
        self.w.first().map_or(0, |r| r.len())
    }

    /// Per-AP transmit covariance `Σ_k δ² w wᴴ + Q^sen`.
    pub fn tx_covariance(&self, m: usize) -> CMat {
        let mut x = self.q_sen[m].clone();
        for (k, w) in self.w[m].iter().enumerate() {
            let d2 = self.delta[m][k] * self.delta[m][k];
            if d2 != 0.0 {
                x += (w * w.adjoint()) * C64::from(d2);
            }
        }
        x
    }

    /// Beamforming power allocated at AP `m`.
    pub fn beam_power(&self, m: usize) -> f64 {
        self.w[m].iter().map(|w| w.norm_squared()).sum()
    }

    /// Total radiated power at AP `m` (beams plus pilots).
    pub fn ap_power(&self, m: usize) -> f64 {
        self.beam_power(m) + self.q_sen[m].trace().re
    }

    /// Stacked beamformer `w̃_k`.
    pub fn stacked(&self, k: usize) -> CVec {
        let n: usize = self.w.iter().map(|r| r[k].len()).sum();
        CVec::from_iterator(n, self.w.iter().flat_map(|r| r[k].iter().copied()))
    }
}

/// `σ² = −174 dBm/Hz + 10 log10(B) + F`, in watts.
pub fn noise_power(bandwidth: f64, noise_figure_db: f64) -> Result<f64> {
    if !(bandwidth > 0.0) {
        return domain("bandwidth must be positive");
    }
    let dbm = -174.0 + 10.0 * bandwidth.log10() + noise_figure_db;
    Ok(10f64.powf((dbm - 30.0) / 10.0))
}

/// Pilot covariances: each AP splits `ρ P_max` evenly over its sensed STs,
/// each share pointed at the region centre.
pub fn sensing_pilot_covariance(
    sc: &Scenario,
    st_mask: &[Vec<bool>],
    rho_sen: f64,
    p_max: f64,
    wavenumber: f64,
) -> Result<Vec<CMat>> {
    if !(0.0..1.0).contains(&rho_sen) {
        return domain("rho_sen must lie in [0, 1)");
    }
    let mut out = Vec::with_capacity(sc.num_aps());
    for m in 0..sc.num_aps() {
        let n = sc.antennas(m);
        let mut q = CMat::zeros(n, n);
        let vis: Vec<usize> = (0..sc.num_sts()).filter(|&s| st_mask[m][s]).collect();
        if rho_sen > 0.0 && !vis.is_empty() {
            let share = rho_sen * p_max / vis.len() as f64 / n as f64;
            for &s in &vis {
                let link = LinkGeometry::between(sc, m, sc.st_regions[s].center)?;
                let a = steering_near(&link, wavenumber);
                q += (&a * a.adjoint()) * C64::from(share);
            }
        }
        out.push(q);
    }
    Ok(out)
}

/// Per-UE interference breakdown and SINR.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinrBreakdown {
    pub signal: Vec<f64>,
    pub i_mu: Vec<f64>,
    pub i_si: Vec<f64>,
    pub sinr: Vec<f64>,
}

pub fn sinr_breakdown(ch: &ChannelSet, d: &IsacDesign, sigma2: f64) -> Result<SinrBreakdown> {
    if !(sigma2 > 0.0) {
        return domain("noise power must be positive");
    }
    let (mm, kk) = (ch.num_aps(), ch.num_ues());
    // c[k][j] = Σ_m δ_mj h_mkᴴ w_mj
    let mut c = vec![vec![C64::new(0.0, 0.0); kk]; kk];
    for m in 0..mm {
        for k in 0..kk {
            let h = &ch.ue[m][k].h;
            for j in 0..kk {
                let dmj = d.delta[m][j];
                if dmj != 0.0 {
                    c[k][j] += h.dotc(&d.w[m][j]) * dmj;
                }
            }
        }
    }
    let mut out = SinrBreakdown { signal: vec![], i_mu: vec![], i_si: vec![], sinr: vec![] };
    for k in 0..kk {
        let s = c[k][k].norm_sqr();
        let imu: f64 = (0..kk).filter(|&j| j != k).map(|j| c[k][j].norm_sqr()).sum();
        let isi: f64 = (0..mm)
            .map(|m| {
                let h = &ch.ue[m][k].h;
                (h.adjoint() * &d.q_sen[m] * h)[(0, 0)].re.max(0.0)
            })
            .sum();
        out.signal.push(s);
        out.i_mu.push(imu);
        out.i_si.push(isi);
        out.sinr.push(s / (imu + isi + sigma2));
    }
    Ok(out)
}

pub fn sinr(ch: &ChannelSet, d: &IsacDesign, sigma2: f64) -> Result<Vec<f64>> {
    Ok(sinr_breakdown(ch, d, sigma2)?.sinr)
}

/// SINR from lifted covariances `W_k` (stacked, `N_tot × N_tot`).
pub fn sinr_lifted(
    ch: &ChannelSet,
    delta: &[Vec<f64>],
    w: &[CMat],
    q_sen: &[CMat],
    sigma2: f64,
) -> Result<Vec<f64>> {
    if !(sigma2 > 0.0) {
        return domain("noise power must be positive");
    }
    let (mm, kk) = (ch.num_aps(), ch.num_ues());
    let mut out = Vec::with_capacity(kk);
    for k in 0..kk {
        let h = ch.stacked_ue(k);
        let quad = |j: usize| {
            let mut g = h.clone();
            let mut off = 0;
            for m in 0..mm {
                let n = ch.ue[m][k].h.len();
                for i in 0..n {
                    g[off + i] *= delta[m][j];
                }
                off += n;
            }
            (g.adjoint() * &w[j] * &g)[(0, 0)].re
        };
        let s = quad(k);
        let imu: f64 = (0..kk).filter(|&j| j != k).map(quad).sum();
        let isi: f64 = (0..mm)
            .map(|m| {
                let hm = &ch.ue[m][k].h;
                (hm.adjoint() * &q_sen[m] * hm)[(0, 0)].re
            })
            .sum();
        out.push(s / (imu + isi + sigma2));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommReport {
    pub sinr: Vec<f64>,
    pub rate: Vec<f64>,
    pub i_mu: Vec<f64>,
    pub i_si: Vec<f64>,
    pub sum_rate: f64,
    pub p_tot: f64,
    pub ee: f64,
}

pub fn comm_report(ch: &ChannelSet, d: &IsacDesign, sigma2: f64, bandwidth: f64) -> Result<CommReport> {
    let b = sinr_breakdown(ch, d, sigma2)?;
    let rate: Vec<f64> = b.sinr.iter().map(|g| bandwidth * (1.0 + g).log2()).collect();
    let sum_rate = rate.iter().sum();
    let p_tot: f64 = (0..d.num_aps()).map(|m| d.ap_power(m)).sum();
    let ee = if p_tot > 0.0 { sum_rate / p_tot } else { 0.0 };
    Ok(CommReport { sinr: b.sinr, rate, i_mu: b.i_mu, i_si: b.i_si, sum_rate, p_tot, ee })
}

impl CommReport {
    pub fn csv_row(&self, seed: u64, scheme: &str, k: usize) -> Vec<String> {
        let gl: Vec<String> = self.sinr.iter().map(|g| format!("{g:.9e}")).collect();
        vec![
            seed.to_string(),
            scheme.to_string(),
            k.to_string(),
            gl.join(";"),
            format!("{:.9e}", self.sum_rate),
            format!("{:.9e}", self.ee),
            format!("{:.9e}", self.p_tot),
        ]
    }
}

/// Trivial design: zero beams, given associations and pilots.
pub fn zero_design(sc: &Scenario, mask: &VisibilityMask, q_sen: Vec<CMat>) -> IsacDesign {
    let (mm, kk) = (sc.num_aps(), sc.num_ues());
    IsacDesign {
        delta: (0..mm).map(|m| (0..kk).map(|k| mask.ue_f64(m, k)).collect()).collect(),
        w: (0..mm).map(|m| vec![CVec::zeros(sc.antennas(m)); kk]).collect(),
        q_sen,
        st_mask: mask.st.clone(),
    }
}
