//! Network geometry: AP/UE/ST placement, array apertures, LoS visibility.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::params::SystemParams;
use crate::rng;

pub type Vec2 = [f64; 2];

/// Maximum number of generation attempts per seed.
pub const MAX_RETRIES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub width: f64,
    pub height: f64,
}

impl Area {
    pub fn contains(&self, p: Vec2) -> bool {
        p[0] >= 0.0 && p[0] <= self.width && p[1] >= 0.0 && p[1] <= self.height
    }
}

/// Uniform linear array laid along `orientation`; element 0 sits at the AP.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub num_antennas: usize,
    pub element_spacing: f64,
    pub orientation: f64,
}

impl ArraySpec {
    pub fn aperture(&self) -> f64 {
        self.num_antennas.saturating_sub(1) as f64 * self.element_spacing
    }

    /// Element offsets relative to the AP position, in the global frame.
    pub fn offsets(&self) -> Vec<Vec2> {
        let (s, c) = self.orientation.sin_cos();
        (0..self.num_antennas)
            .map(|n| {
                let d = n as f64 * self.element_spacing;
                [d * c, d * s]
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StRegion {
    pub center: Vec2,
    pub radius: f64,
    pub true_position: Vec2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub ap_positions: Vec<Vec2>,
    pub ap_array: Vec<ArraySpec>,
    pub ue_positions: Vec<Vec2>,
    pub st_regions: Vec<StRegion>,
    pub area: Area,
    pub seed: u64,
}

/// Binary LoS eligibility: `ue[m][k]` and `st[m][s]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisibilityMask {
    pub ue: Vec<Vec<bool>>,
    pub st: Vec<Vec<bool>>,
}

impl VisibilityMask {
    pub fn num_aps(&self) -> usize {
        self.ue.len()
    }

    pub fn ue_f64(&self, m: usize, k: usize) -> f64 {
        if self.ue[m][k] {
            1.0
        } else {
            0.0
        }
    }

    /// APs participating in sensing of ST `s`.
    pub fn st_aps(&self, s: usize) -> Vec<usize> {
        (0..self.st.len()).filter(|&m| self.st[m][s]).collect()
    }
}

/// Generation recipe. Array spacing of zero means half a wavelength.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub area: Area,
    pub num_aps: usize,
    pub num_ues: usize,
    pub num_sts: usize,
    pub num_antennas: usize,
    pub element_spacing: f64,
    pub st_radius: f64,
    /// Draw array orientations uniformly; otherwise all arrays lie along x.
    pub random_orientation: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            area: Area { width: 100.0, height: 100.0 },
            num_aps: 3,
            num_ues: 2,
            num_sts: 1,
            num_antennas: 4,
            element_spacing: 0.0,
            st_radius: 2.0,
            random_orientation: true,
        }
    }
}

pub fn rayleigh_distance(aperture: f64, wavelength: f64) -> Result<f64> {
    if !(wavelength > 0.0) {
        return domain("wavelength must be positive");
    }
    if aperture < 0.0 {
        return domain("aperture must be non-negative");
    }
    Ok(2.0 * aperture * aperture / wavelength)
}

pub fn los_probability(r: f64, beta: f64) -> Result<f64> {
    if r < 0.0 || r.is_nan() {
        return domain("distance must be non-negative");
    }
    if beta < 0.0 {
        return domain("blockage rate must be non-negative");
    }
    Ok((-beta * r).exp())
}

pub fn dist(a: Vec2, b: Vec2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn visible(r: f64, p_th: f64, beta: f64) -> bool {
    (-beta * r).exp() >= p_th
}

pub fn visibility_mask(sc: &Scenario, p_th: f64, beta: f64) -> Result<VisibilityMask> {
    if !(0.0..=1.0).contains(&p_th) {
        return domain("p_th must lie in [0, 1]");
    }
    if beta < 0.0 {
        return domain("blockage rate must be non-negative");
    }
    let ue = sc
        .ap_positions
        .iter()
        .map(|&p| sc.ue_positions.iter().map(|&u| visible(dist(p, u), p_th, beta)).collect())
        .collect();
    let st = sc
        .ap_positions
        .iter()
        .map(|&p| sc.st_regions.iter().map(|st| visible(dist(p, st.center), p_th, beta)).collect())
        .collect();
    Ok(VisibilityMask { ue, st })
}

fn uniform_point<R: Rng>(rng: &mut R, area: Area) -> Vec2 {
    [rng.random::<f64>() * area.width, rng.random::<f64>() * area.height]
}

/// Draw a scenario. Each UE index owns its own random stream, so scenarios
/// with more UEs extend (rather than reshuffle) those with fewer.
pub fn generate_scenario(cfg: &ScenarioConfig, params: &SystemParams, seed: u64) -> Result<Scenario> {
    if !(cfg.area.width > 0.0 && cfg.area.height > 0.0) {
        return domain("area dimensions must be positive");
    }
    if cfg.num_aps == 0 || cfg.num_ues == 0 || cfg.num_sts == 0 || cfg.num_antennas == 0 {
        return domain("M, K, S and N must be at least 1");
    }
    if cfg.st_radius < 0.0 {
        return domain("ST radius must be non-negative");
    }
    let spacing = if cfg.element_spacing > 0.0 {
        cfg.element_spacing
    } else {
        params.wavelength() / 2.0
    };
    let (p_th, beta) = (params.p_th, params.los_beta);
    'attempt: for attempt in 0..MAX_RETRIES as u64 {
        let mut g = rng::stream(seed, "ap", &[attempt]);
        let mut ap_positions = Vec::with_capacity(cfg.num_aps);
        let mut ap_array = Vec::with_capacity(cfg.num_aps);
        for _ in 0..cfg.num_aps {
            ap_positions.push(uniform_point(&mut g, cfg.area));
            let orientation = if cfg.random_orientation {
                g.random::<f64>() * std::f64::consts::TAU
            } else {
                0.0
            };
            ap_array.push(ArraySpec { num_antennas: cfg.num_antennas, element_spacing: spacing, orientation });
        }
        let mut st_regions = Vec::with_capacity(cfg.num_sts);
        for s in 0..cfg.num_sts as u64 {
            let mut gs = rng::stream(seed, "st", &[attempt, s]);
            let mut found = None;
            for _ in 0..MAX_RETRIES {
                let c = uniform_point(&mut gs, cfg.area);
                let rad = cfg.st_radius * gs.random::<f64>().sqrt();
                let ang = gs.random::<f64>() * std::f64::consts::TAU;
                let q = [c[0] + rad * ang.cos(), c[1] + rad * ang.sin()];
                let seen = ap_positions.iter().any(|&p| visible(dist(p, c), p_th, beta));
                if seen && cfg.area.contains(q) {
                    found = Some(StRegion { center: c, radius: cfg.st_radius, true_position: q });
                    break;
                }
            }
            match found {
                Some(r) => st_regions.push(r),
                None => continue 'attempt,
            }
        }
        let mut ue_positions = Vec::with_capacity(cfg.num_ues);
        for k in 0..cfg.num_ues as u64 {
            let mut gu = rng::stream(seed, "ue", &[attempt, k]);
            let mut found = None;
            for _ in 0..MAX_RETRIES {
                let u = uniform_point(&mut gu, cfg.area);
                if ap_positions.iter().any(|&p| visible(dist(p, u), p_th, beta)) {
                    found = Some(u);
                    break;
                }
            }
            match found {
                Some(u) => ue_positions.push(u),
                None => continue 'attempt,
            }
        }
        return Ok(Scenario { ap_positions, ap_array, ue_positions, st_regions, area: cfg.area, seed });
    }
    Err(Error::ScenarioInfeasible { seed, retries: MAX_RETRIES })
}

impl Scenario {
    pub fn num_aps(&self) -> usize {
        self.ap_positions.len()
    }
    pub fn num_ues(&self) -> usize {
        self.ue_positions.len()
    }
    pub fn num_sts(&self) -> usize {
        self.st_regions.len()
    }
    pub fn antennas(&self, m: usize) -> usize {
        self.ap_array[m].num_antennas
    }
    pub fn total_antennas(&self) -> usize {
        self.ap_array.iter().map(|a| a.num_antennas).sum()
    }
    /// Offset of AP `m`'s block inside stacked vectors.
    pub fn block_offset(&self, m: usize) -> usize {
        self.ap_array[..m].iter().map(|a| a.num_antennas).sum()
    }

    pub fn rayleigh(&self, m: usize, wavelength: f64) -> f64 {
        rayleigh_distance(self.ap_array[m].aperture(), wavelength).unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let pts = self
            .ap_positions
            .iter()
            .chain(self.ue_positions.iter())
            .chain(self.st_regions.iter().flat_map(|s| [&s.center, &s.true_position]));
        for p in pts {
            if !self.area.contains(*p) {
                return domain(format!("position {p:?} outside area"));
            }
        }
        if self.ap_array.len() != self.ap_positions.len() {
            return domain("array list does not match AP list");
        }
        if self.ap_array.iter().any(|a| a.num_antennas == 0) {
            return domain("every AP needs at least one antenna");
        }
        for s in &self.st_regions {
            if s.radius < 0.0 || dist(s.true_position, s.center) > s.radius * (1.0 + 1e-12) + 1e-12 {
                return domain("ST outside its uncertainty disk");
            }
        }
        Ok(())
    }

    /// Keep the first `k` UEs (nested draws make this a K-sweep primitive).
    pub fn truncate_ues(&self, k: usize) -> Scenario {
        let mut s = self.clone();
        s.ue_positions.truncate(k);
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Scenario> {
        let sc: Scenario = serde_json::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }
}
