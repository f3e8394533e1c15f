//! Physical and algorithmic constants shared by every module.

use serde::{Deserialize, Serialize};

/// Propagation speed used throughout (m/s).
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// System-level parameters for one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystemParams {
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    /// Molecular absorption coefficient used when no table entry applies (1/m).
    pub kappa: f64,
    /// Optional (frequency Hz, κ 1/m) table, linearly interpolated.
    pub kappa_table: Vec<(f64, f64)>,
    pub tx_gain_dbi: f64,
    pub ue_rx_gain_dbi: f64,
    /// Extra round-trip gain applied to echoes (dB).
    pub echo_gain_db: f64,
    pub p_max_dbm: f64,
    pub noise_figure_db: f64,
    pub gamma_th_db: f64,
    pub eps_th: f64,
    pub rho_sen: f64,
    pub slots: usize,
    pub eps_phi: f64,
    pub eps_0: f64,
    /// CRB cap as a multiple of `eps_th`.
    pub crb_cap_factor: f64,
    pub los_beta: f64,
    pub p_th: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            carrier_hz: 0.3e12,
            bandwidth_hz: 5.0e9,
            kappa: 0.005,
            kappa_table: Vec::new(),
            tx_gain_dbi: 20.0,
            ue_rx_gain_dbi: 20.0,
            echo_gain_db: 240.0,
            p_max_dbm: 30.0,
            noise_figure_db: 7.0,
            gamma_th_db: 5.0,
            eps_th: 1e-2,
            rho_sen: 0.1,
            slots: 64,
            eps_phi: 1e-6,
            eps_0: 1e-6,
            crb_cap_factor: 1e3,
            los_beta: 0.01,
            p_th: 0.5,
        }
    }
}

pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watt(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

impl SystemParams {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    /// Free-space wavenumber 2πf/c.
    pub fn wavenumber(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.carrier_hz / SPEED_OF_LIGHT
    }

    pub fn p_max(&self) -> f64 {
        dbm_to_watt(self.p_max_dbm)
    }

    pub fn gamma_th(&self) -> f64 {
        db_to_lin(self.gamma_th_db)
    }

    pub fn noise_power(&self) -> f64 {
        crate::signal::noise_power(self.bandwidth_hz, self.noise_figure_db)
            .expect("bandwidth must be positive")
    }

    pub fn crb_cap(&self) -> f64 {
        self.crb_cap_factor * self.eps_th
    }

    /// Absorption coefficient at `f`, interpolating the table when present.
    pub fn kappa_at(&self, f: f64) -> f64 {
        let t = &self.kappa_table;
        if t.is_empty() {
            return self.kappa;
        }
        if f <= t[0].0 {
            return t[0].1;
        }
        for w in t.windows(2) {
            let ((f0, k0), (f1, k1)) = (w[0], w[1]);
            if f <= f1 {
                let a = if f1 > f0 { (f - f0) / (f1 - f0) } else { 0.0 };
                return k0 + a * (k1 - k0);
            }
        }
        t[t.len() - 1].1
    }

    pub fn validate(&self) -> crate::Result<()> {
        let bad = |m: &str| Err(crate::Error::Config(m.to_string()));
        if !(self.carrier_hz > 0.0) || !(self.bandwidth_hz > 0.0) {
            return bad("carrier and bandwidth must be positive");
        }
        if self.kappa < 0.0 {
            return bad("kappa must be non-negative");
        }
        if !(0.0..1.0).contains(&self.rho_sen) {
            return bad("rho_sen must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.p_th) {
            return bad("p_th must lie in [0, 1]");
        }
        if self.slots == 0 || !(self.eps_th > 0.0) {
            return bad("slots and eps_th must be positive");
        }
        Ok(())
    }
}
