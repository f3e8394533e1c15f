//! Heuristic beamformers and the architectural reference schemes.
//!
//! Every scheme is evaluated on the same scenario and channel realisation
//! of a seed, and the CRB of every scheme is reported over the common
//! LoS-visibility sensing set.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::b2s::{run_b2s, B2sConfig, B2sInput, VerifyReport};
use crate::channel::{channel_set, ChannelSet, CVec, C64};
use crate::error::{Error, Result};
use crate::fim::{crb_report, CrbReport};
use crate::params::SystemParams;
use crate::scenario::{dist, visibility_mask, Scenario, VisibilityMask};
use crate::signal::{comm_report, sensing_pilot_covariance, CMat, CommReport, IsacDesign};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    CellFree,
    Multicell,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignMode {
    Joint,
    FixedAssociation,
    CommOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Beamformer {
    B2s,
    Mrt,
    Zf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub arch: Architecture,
    pub design: DesignMode,
    pub beam: Beamformer,
}

impl SchemeSpec {
    pub const fn new(arch: Architecture, design: DesignMode, beam: Beamformer) -> Self {
        Self { arch, design, beam }
    }

    /// Rejects combinations without a meaning (joint association needs B2S).
    pub fn validate(&self) -> Result<()> {
        if self.design == DesignMode::Joint && self.beam != Beamformer::B2s {
            return Err(Error::Config("joint association requires the B2S designer".into()));
        }
        if self.design == DesignMode::Joint && self.arch == Architecture::Multicell {
            return Err(Error::Config("multicell association is fixed".into()));
        }
        Ok(())
    }

    /// Parses a scheme name such as `cf_joint`, `mc_comm` or `heuristic`.
    pub fn parse(name: &str) -> Result<Self> {
        use Architecture::*;
        use Beamformer::*;
        use DesignMode::*;
        let s = match name {
            "cf_joint" | "b2s" => Self::new(CellFree, Joint, B2s),
            "cf_fixed" => Self::new(CellFree, FixedAssociation, B2s),
            "cf_comm" => Self::new(CellFree, CommOnly, B2s),
            "mc_isac" => Self::new(Multicell, FixedAssociation, B2s),
            "mc_comm" => Self::new(Multicell, CommOnly, B2s),
            "heuristic" | "mrt" => Self::new(CellFree, FixedAssociation, Mrt),
            "zf" => Self::new(CellFree, FixedAssociation, Zf),
            _ => return Err(Error::Config(format!("unknown scheme {name:?}"))),
        };
        Ok(s)
    }

    pub fn name(&self) -> &'static str {
        use Architecture::*;
        use Beamformer::*;
        use DesignMode::*;
        match (self.arch, self.design, self.beam) {
            (CellFree, Joint, B2s) => "cf_joint",
            (CellFree, FixedAssociation, B2s) => "cf_fixed",
            (CellFree, CommOnly, B2s) => "cf_comm",
            (Multicell, FixedAssociation, B2s) => "mc_isac",
            (Multicell, CommOnly, B2s) => "mc_comm",
            (CellFree, _, Mrt) => "heuristic",
            (CellFree, _, Zf) => "zf",
            (Multicell, _, Mrt) => "mc_mrt",
            (Multicell, _, Zf) => "mc_zf",
            (_, Joint, _) => "invalid",
        }
    }
}

/// The five system designs compared across `K`.
pub const SYSTEM_SCHEMES: [&str; 5] = ["mc_comm", "mc_isac", "cf_comm", "cf_fixed", "cf_joint"];

/// Equal-split MRT: `w_mk = sqrt(P_m/|U_m|)·h/‖h‖` for served UEs.
pub fn mrt_beamformers(ch: &ChannelSet, mask: &[Vec<bool>], budget: &[f64]) -> Vec<Vec<CVec>> {
    crate::b2s::mrt_beams(ch, mask, budget)
}

/// Per-AP regularised zero forcing over the served UEs, equal power split.
///
/// Channels are normalised before inversion; the ridge `1e-8` is added to
/// the normalised Gram matrix only when it is rank deficient.
pub fn zf_beamformers(ch: &ChannelSet, mask: &[Vec<bool>], budget: &[f64]) -> Vec<Vec<CVec>> {
    (0..ch.num_aps())
        .map(|m| {
            let served: Vec<usize> = (0..ch.num_ues()).filter(|&k| mask[m][k] && ch.ue[m][k].h.norm() > 0.0).collect();
            let n_ant = ch.ue[m].first().map_or(0, |l| l.h.len());
            let mut out = vec![CVec::zeros(n_ant); ch.num_ues()];
            if served.is_empty() {
                return out;
            }
            let hn = CMat::from_columns(
                &served.iter().map(|&k| ch.ue[m][k].h.normalize()).collect::<Vec<_>>(),
            );
            let mut gram = hn.adjoint() * &hn;
            let min_eig = gram.clone().symmetric_eigenvalues().min();
            if min_eig <= 1e-8 {
                for i in 0..served.len() {
                    gram[(i, i)] += C64::from(1e-8);
                }
            }
            let inv = gram.clone().try_inverse().unwrap_or_else(|| {
                let e = gram.clone().svd(true, true);
                e.pseudo_inverse(1e-12).unwrap_or(gram)
            });
            let dirs = &hn * inv;
            let share = (budget[m] / served.len() as f64).sqrt();
            for (c, &k) in served.iter().enumerate() {
                let d = dirs.column(c).into_owned();
                let n = d.norm();
                if n > 0.0 {
                    out[k] = d * C64::from(share / n);
                }
            }
            out
        })
        .collect()
}

/// Single-AP serving and sensing sets.
///
/// Each UE is served by its highest-`p_LoS` AP (ties to the lower index);
/// each ST is sensed by its nearest LoS-visible AP.
pub fn multicell_association(sc: &Scenario, vis: &VisibilityMask) -> VisibilityMask {
    let mm = sc.num_aps();
    let nearest = |p: [f64; 2], allowed: &dyn Fn(usize) -> bool| -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for m in (0..mm).filter(|&m| allowed(m)) {
            let r = dist(sc.ap_positions[m], p);
            if best.is_none_or(|(_, b)| r < b) {
                best = Some((m, r));
            }
        }
        best.map(|(m, _)| m)
    };
    let mut ue = vec![vec![false; sc.num_ues()]; mm];
    for (k, &p) in sc.ue_positions.iter().enumerate() {
        if let Some(m) = nearest(p, &|_| true) {
            ue[m][k] = true;
        }
    }
    let mut st = vec![vec![false; sc.num_sts()]; mm];
    for (s, reg) in sc.st_regions.iter().enumerate() {
        if let Some(m) = nearest(reg.center, &|m| vis.st[m][s]) {
            st[m][s] = true;
        }
    }
    VisibilityMask { ue, st }
}

/// Shared realisation of one seed.
#[derive(Clone, Debug)]
pub struct SeedContext {
    pub scenario: Scenario,
    pub mask: VisibilityMask,
    pub channels: ChannelSet,
    pub params: SystemParams,
    pub seed: u64,
}

impl SeedContext {
    pub fn new(scenario: Scenario, params: &SystemParams) -> Result<Self> {
        let mask = visibility_mask(&scenario, params.p_th, params.los_beta)?;
        let channels = channel_set(&scenario, params)?;
        let seed = scenario.seed;
        Ok(Self { scenario, mask, channels, params: params.clone(), seed })
    }

    /// Pilots of `ρ_sen P_max` per AP over the STs in `st_mask`.
    pub fn pilots(&self, st_mask: &[Vec<bool>]) -> Result<Vec<CMat>> {
        let p = &self.params;
        sensing_pilot_covariance(&self.scenario, st_mask, p.rho_sen, p.p_max(), p.wavenumber())
    }

    /// Design metrics: communication report and CRB on the common set.
    pub fn evaluate(&self, d: &IsacDesign) -> Result<(CommReport, CrbReport)> {
        let p = &self.params;
        let comm = comm_report(&self.channels, d, p.noise_power(), p.bandwidth_hz)?;
        let crb = crb_report(&self.channels, d, &self.mask.st, p);
        Ok((comm, crb))
    }
}

#[derive(Clone, Debug)]
pub struct SchemeResult {
    pub scheme: String,
    pub design: IsacDesign,
    pub comm: CommReport,
    pub crb: CrbReport,
    pub runtime_s: f64,
    /// B2S verification, when the scheme ran B2S.
    pub verify: Option<VerifyReport>,
    pub b2s_iterations: usize,
    /// Non-empty when the designer failed and MRT was used instead.
    pub fallback: String,
}

/// Runs one scheme on a shared realisation. `lambda` and `warm` feed B2S.
pub fn evaluate_scheme(
    spec: &SchemeSpec,
    ctx: &SeedContext,
    cfg: &B2sConfig,
    lambda: Option<&[f64]>,
    warm: Option<Vec<Vec<CVec>>>,
) -> Result<SchemeResult> {
    spec.validate()?;
    let t0 = Instant::now();
    let p = &ctx.params;
    let assoc = match spec.arch {
        Architecture::CellFree => ctx.mask.clone(),
        Architecture::Multicell => multicell_association(&ctx.scenario, &ctx.mask),
    };
    let q_sen = ctx.pilots(&assoc.st)?;
    let kk = ctx.scenario.num_ues();
    let heuristic = |beam: Beamformer| -> IsacDesign {
        let budget = vec![p.p_max() * (1.0 - p.rho_sen); ctx.scenario.num_aps()];
        let w = match beam {
            Beamformer::Zf => zf_beamformers(&ctx.channels, &assoc.ue, &budget),
            _ => mrt_beamformers(&ctx.channels, &assoc.ue, &budget),
        };
        IsacDesign {
            delta: assoc.ue.iter().map(|r| r.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).collect(),
            w,
            q_sen: q_sen.clone(),
            st_mask: ctx.mask.st.clone(),
        }
    };
    let (design, verify, iters, fallback) = match spec.beam {
        Beamformer::Mrt | Beamformer::Zf => (heuristic(spec.beam), None, 0, String::new()),
        Beamformer::B2s => {
            let mut c = cfg.clone();
            c.update_association = spec.design == DesignMode::Joint;
            c.sensing = spec.design != DesignMode::CommOnly;
            let lam = lambda.map(|l| l.to_vec()).unwrap_or_else(|| vec![1.0; kk]);
            let inp = B2sInput {
                ch: &ctx.channels,
                params: p,
                xi: assoc.ue.clone(),
                sense: assoc.st.clone(),
                eval_mask: ctx.mask.st.clone(),
                q_sen: q_sen.clone(),
                lambda: lam,
                warm,
                seed: crate::rng::derive(ctx.seed, "b2s", &[]),
            };
            match run_b2s(&inp, &c) {
                Ok(o) => {
                    let n = o.trace.rows.len();
                    (o.design, Some(o.report), n, String::new())
                }
                Err(e) => (heuristic(Beamformer::Mrt), None, 0, e.to_string()),
            }
        }
    };
    let (comm, crb) = ctx.evaluate(&design)?;
    Ok(SchemeResult {
        scheme: spec.name().to_string(),
        design,
        comm,
        crb,
        runtime_s: t0.elapsed().as_secs_f64(),
        verify,
        b2s_iterations: iters,
        fallback,
    })
}

/// `Re`-part Gram matrix of normalised channels, used in tests.
pub fn channel_correlation(ch: &ChannelSet, m: usize) -> DMatrix<f64> {
    let kk = ch.num_ues();
    DMatrix::from_fn(kk, kk, |i, j| {
        let a = &ch.ue[m][i].h;
        let b = &ch.ue[m][j].h;
        a.dotc(b).norm() / (a.norm() * b.norm()).max(f64::MIN_POSITIVE)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scenario, ScenarioConfig};

    fn ctx(seed: u64) -> SeedContext {
        let params = SystemParams::default();
        let sc = generate_scenario(&ScenarioConfig::default(), &params, seed).unwrap();
        SeedContext::new(sc, &params).unwrap()
    }

    #[test]
    fn mrt_uses_exact_budget() {
        let c = ctx(3);
        let b = vec![0.9; c.scenario.num_aps()];
        let w = mrt_beamformers(&c.channels, &c.mask.ue, &b);
        for m in 0..c.scenario.num_aps() {
            let p: f64 = w[m].iter().map(|v| v.norm_squared()).sum();
            if c.mask.ue[m].iter().any(|&x| x) {
                assert!((p - 0.9).abs() < 1e-12);
            } else {
                assert_eq!(p, 0.0);
            }
        }
    }

    #[test]
    fn zf_nulls_other_users() {
        let c = ctx(5);
        let all = vec![vec![true; c.scenario.num_ues()]; c.scenario.num_aps()];
        let b = vec![1.0; c.scenario.num_aps()];
        let w = zf_beamformers(&c.channels, &all, &b);
        for m in 0..c.scenario.num_aps() {
            for k in 0..c.scenario.num_ues() {
                for j in 0..c.scenario.num_ues() {
                    if j != k {
                        let h = &c.channels.ue[m][j].h;
                        let v = h.dotc(&w[m][k]).norm();
                        assert!(v <= 1e-8 * h.norm() * w[m][k].norm(), "{v:e}");
                    }
                }
            }
        }
    }

    #[test]
    fn multicell_serves_each_ue_once() {
        let c = ctx(7);
        let mc = multicell_association(&c.scenario, &c.mask);
        for k in 0..c.scenario.num_ues() {
            assert_eq!((0..c.scenario.num_aps()).filter(|&m| mc.ue[m][k]).count(), 1);
        }
        for s in 0..c.scenario.num_sts() {
            assert!((0..c.scenario.num_aps()).filter(|&m| mc.st[m][s]).count() <= 1);
        }
    }

    #[test]
    fn scheme_names_roundtrip() {
        for n in SYSTEM_SCHEMES.iter().chain(&["heuristic", "zf"]) {
            assert_eq!(SchemeSpec::parse(n).unwrap().name(), *n);
        }
        assert!(SchemeSpec::new(Architecture::Multicell, DesignMode::Joint, Beamformer::B2s).validate().is_err());
    }
}
