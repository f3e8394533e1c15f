//! THz pathloss, cross-field steering vectors, their derivatives, and channels.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::params::{db_to_lin, SystemParams, SPEED_OF_LIGHT};
use crate::scenario::{dist, Scenario, Vec2};

pub type C64 = Complex64;
pub type CVec = DVector<C64>;

/// Near-field iff `r < R` strictly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Near,
    Far,
}

/// Geometry of one AP-to-point link, in the array frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkGeometry {
    pub r: f64,
    pub theta: f64,
    /// Element offsets relative to element 0 (array frame, element axis = x).
    pub offsets: Vec<Vec2>,
    pub elem_dist: Vec<f64>,
}

fn u(theta: f64) -> Vec2 {
    [theta.cos(), theta.sin()]
}

fn u_prime(theta: f64) -> Vec2 {
    [-theta.sin(), theta.cos()]
}

fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

impl LinkGeometry {
    /// Link from an explicit polar description and array-frame offsets.
    pub fn new(r: f64, theta: f64, offsets: Vec<Vec2>) -> Result<Self> {
        if !(r > 0.0) {
            return domain("link distance must be positive");
        }
        let p = [r * theta.cos(), r * theta.sin()];
        let elem_dist: Vec<f64> = offsets.iter().map(|d| (p[0] - d[0]).hypot(p[1] - d[1])).collect();
        if let Some(&bad) = elem_dist.iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::SingularGeometry(bad));
        }
        Ok(Self { r, theta, offsets, elem_dist })
    }

    /// Link from AP `m` of `sc` to a global point.
    pub fn between(sc: &Scenario, m: usize, target: Vec2) -> Result<Self> {
        let ap = sc.ap_positions[m];
        let arr = sc.ap_array[m];
        let r = dist(ap, target);
        let phi = (target[1] - ap[1]).atan2(target[0] - ap[0]);
        let offsets = (0..arr.num_antennas).map(|n| [n as f64 * arr.element_spacing, 0.0]).collect();
        Self::new(r, phi - arr.orientation, offsets)
    }

    pub fn num_elements(&self) -> usize {
        self.offsets.len()
    }

    /// Aperture along the element axis.
    pub fn aperture(&self) -> f64 {
        self.offsets.iter().map(|d| d[0].hypot(d[1])).fold(0.0, f64::max)
    }
}

/// Pathloss `(4πfr/c)² e^{κr}` (linear).
pub fn pathloss(f: f64, r: f64, kappa: f64) -> Result<f64> {
    if !(f > 0.0) {
        return domain("frequency must be positive");
    }
    if !(r > 0.0) {
        return domain("distance must be positive");
    }
    if kappa < 0.0 {
        return domain("absorption must be non-negative");
    }
    let x = 4.0 * std::f64::consts::PI * f * r / SPEED_OF_LIGHT;
    Ok(x * x * (kappa * r).exp())
}

/// Spherical-wavefront response `e^{-jk r_n}`.
pub fn steering_near(link: &LinkGeometry, k: f64) -> CVec {
    CVec::from_iterator(link.num_elements(), link.elem_dist.iter().map(|&rn| C64::from_polar(1.0, -k * rn)))
}

/// Planar response `e^{-jk (r - uᵀd_n)}`.
pub fn steering_far(link: &LinkGeometry, k: f64) -> CVec {
    let uu = u(link.theta);
    CVec::from_iterator(
        link.num_elements(),
        link.offsets.iter().map(|&d| C64::from_polar(1.0, -k * (link.r - dot(uu, d)))),
    )
}

pub fn steering_vector(link: &LinkGeometry, regime: Regime, k: f64) -> CVec {
    match regime {
        Regime::Near => steering_near(link, k),
        Regime::Far => steering_far(link, k),
    }
}

/// Derivatives of the spherical response with respect to `r` and `θ`.
pub fn steering_jacobian(link: &LinkGeometry, k: f64) -> Result<(CVec, CVec)> {
    let a = steering_near(link, k);
    let (uu, up) = (u(link.theta), u_prime(link.theta));
    let n = link.num_elements();
    let mut dr = CVec::zeros(n);
    let mut dt = CVec::zeros(n);
    let mj = C64::new(0.0, -k);
    for i in 0..n {
        let rn = link.elem_dist[i];
        if rn < 1e-12 {
            return Err(Error::SingularGeometry(rn));
        }
        let d = link.offsets[i];
        let v = [link.r * uu[0] - d[0], link.r * uu[1] - d[1]];
        dr[i] = mj * (dot(uu, v) / rn) * a[i];
        dt[i] = mj * (link.r * dot(up, v) / rn) * a[i];
    }
    Ok((dr, dt))
}

/// `∂r_n/∂r − 1`, evaluated without cancellation.
pub fn range_slope_deficit(link: &LinkGeometry) -> Vec<f64> {
    let (uu, up) = (u(link.theta), u_prime(link.theta));
    link.offsets
        .iter()
        .zip(&link.elem_dist)
        .map(|(&d, &rn)| {
            let a = link.r - dot(uu, d);
            let b = dot(up, d);
            -b * b / ((a + rn) * rn)
        })
        .collect()
}

/// One AP-to-entity link with its channel.
#[derive(Clone, Debug)]
pub struct Link {
    pub geom: LinkGeometry,
    pub regime: Regime,
    pub rayleigh: f64,
    pub pathloss: f64,
    /// Real amplitude gain `sqrt(G_t G_r / L)`.
    pub gain: f64,
    pub steering: CVec,
    pub h: CVec,
}

impl Link {
    /// Gain with the carrier phase `β e^{-j2πfr/c}`.
    pub fn gain_eff(&self, k: f64) -> C64 {
        C64::from_polar(self.gain, -k * self.geom.r)
    }
}

pub fn regime_for(r: f64, rayleigh: f64) -> Regime {
    if r < rayleigh {
        Regime::Near
    } else {
        Regime::Far
    }
}

/// Build a link to `target`; `rx_gain` is linear.
pub fn make_link(sc: &Scenario, m: usize, target: Vec2, params: &SystemParams, rx_gain: f64) -> Result<Link> {
    let geom = LinkGeometry::between(sc, m, target)?;
    let lambda = params.wavelength();
    let rayleigh = sc.rayleigh(m, lambda);
    let regime = regime_for(geom.r, rayleigh);
    let k = params.wavenumber();
    let pl = pathloss(params.carrier_hz, geom.r, params.kappa_at(params.carrier_hz))?;
    let gain = (db_to_lin(params.tx_gain_dbi) * rx_gain / pl).sqrt();
    let steering = steering_vector(&geom, regime, k);
    let h = steering.map(|x| x * gain);
    Ok(Link { geom, regime, rayleigh, pathloss: pl, gain, steering, h })
}

/// All links of a scenario: `ue[m][k]` and `st[m][s]` (to the true ST position).
#[derive(Clone, Debug)]
pub struct ChannelSet {
    pub ue: Vec<Vec<Link>>,
    pub st: Vec<Vec<Link>>,
    pub wavenumber: f64,
}

pub fn channel_set(sc: &Scenario, params: &SystemParams) -> Result<ChannelSet> {
    let g_ue = db_to_lin(params.ue_rx_gain_dbi);
    let mut ue = Vec::with_capacity(sc.num_aps());
    let mut st = Vec::with_capacity(sc.num_aps());
    for m in 0..sc.num_aps() {
        ue.push(sc.ue_positions.iter().map(|&p| make_link(sc, m, p, params, g_ue)).collect::<Result<Vec<_>>>()?);
        st.push(
            sc.st_regions
                .iter()
                .map(|s| make_link(sc, m, s.true_position, params, 1.0))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok(ChannelSet { ue, st, wavenumber: params.wavenumber() })
}

impl ChannelSet {
    pub fn num_aps(&self) -> usize {
        self.ue.len()
    }
    pub fn num_ues(&self) -> usize {
        self.ue.first().map_or(0, |v| v.len())
    }
    pub fn num_sts(&self) -> usize {
        self.st.first().map_or(0, |v| v.len())
    }

    /// Stacked channel `h̃_k` over all APs.
    pub fn stacked_ue(&self, k: usize) -> CVec {
        let parts: Vec<&CVec> = self.ue.iter().map(|row| &row[k].h).collect();
        let n: usize = parts.iter().map(|v| v.len()).sum();
        CVec::from_iterator(n, parts.into_iter().flat_map(|v| v.iter().copied()))
    }

    /// CSV dump: link id, r, θ, regime, |β|.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["link", "r_m", "theta_rad", "regime", "abs_beta"])?;
        let kinds = [("ue", &self.ue), ("st", &self.st)];
        for (tag, set) in kinds {
            for (m, row) in set.iter().enumerate() {
                for (x, l) in row.iter().enumerate() {
                    let regime = match l.regime {
                        Regime::Near => "near",
                        Regime::Far => "far",
                    };
                    wr.write_record([
                        format!("ap{m}-{tag}{x}"),
                        format!("{:.9e}", l.geom.r),
                        format!("{:.9e}", l.geom.theta),
                        regime.to_string(),
                        format!("{:.9e}", l.gain),
                    ])?;
                }
            }
        }
        wr.flush()?;
        Ok(())
    }
}
