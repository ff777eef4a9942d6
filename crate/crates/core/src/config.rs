//! Scenario configuration.
//!
//! A scenario is stored as a flat TOML table of `key = value` lines; the
//! canonical form is what [`ScenarioConfig::to_toml`] writes. Every key has an
//! SI unit in its name (`_m`, `_hz`, `_s`, `_per_m`, `_db`).

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::geometry::{self, ArrayConfig};
use crate::{Error, Result};

/// Number of propagation paths per realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PathCount {
    /// Always `L` paths.
    Fixed(usize),
    /// `L ~ U{min, max}` per realization, written `[min, max]`.
    Uniform([usize; 2]),
}

impl PathCount {
    pub fn bounds(&self) -> (usize, usize) {
        match *self {
            PathCount::Fixed(l) => (l, l),
            PathCount::Uniform([lo, hi]) => (lo, hi),
        }
    }
}

/// How analog combiners relate to samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CombinerMode {
    /// One combiner realization for the whole dataset, drawn from `combiner_seed`.
    Fixed,
    /// A fresh combiner (and initializer) per sample.
    PerSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub num_subarrays: usize,
    pub elems_per_subarray: usize,
    pub sa_spacing_m: f64,
    pub ae_spacing_m: f64,
    pub carrier_hz: f64,
    /// Pilot length `N_p` (`Q`).
    pub n_pilots: usize,
    pub paths: PathCount,
    /// LoS source distance `r₁`.
    pub los_distance_m: f64,
    /// LoS delay `τ₁`.
    pub los_delay_s: f64,
    /// `r_l ~ U(min, max)` for NLoS paths.
    pub scatterer_distance_m: [f64; 2],
    /// `τ_l ~ U(min, max)` for NLoS paths.
    pub nlos_delay_s: [f64; 2],
    /// Flat molecular absorption coefficient, used when no table is given.
    pub k_abs_per_m: f64,
    /// Optional CSV `frequency_hz,k_abs_per_m` overriding `k_abs_per_m`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub absorption_table: Option<PathBuf>,
    /// Complex refractive index `[re, im]` of reflecting surfaces.
    pub refractive_index: [f64; 2],
    pub roughness_m: f64,
    /// Near/far-field threshold `Z`. Derived as `2D²/λ_c` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rayleigh_distance_m: Option<f64>,
    /// OFDM subcarriers `K`; 1 means narrowband.
    pub subcarriers: usize,
    /// OFDM bandwidth `B`.
    pub bandwidth_hz: f64,
    /// Per-sample SNR drawn uniformly from `[low, high]` dB.
    pub snr_db: [f64; 2],
    pub combiner: CombinerMode,
    pub combiner_seed: u64,
}

impl ScenarioConfig {
    /// Baseline narrowband scenario.
    pub fn baseline() -> Self {
        Self {
            num_subarrays: 4,
            elems_per_subarray: 256,
            sa_spacing_m: 5.6e-2,
            ae_spacing_m: 5.0e-4,
            carrier_hz: 3.0e11,
            n_pilots: 128,
            paths: PathCount::Fixed(5),
            los_distance_m: 30.0,
            los_delay_s: 100e-9,
            scatterer_distance_m: [10.0, 25.0],
            nlos_delay_s: [100e-9, 110e-9],
            k_abs_per_m: 0.0033,
            absorption_table: None,
            refractive_index: [2.24, -0.025],
            roughness_m: 8.8e-5,
            rayleigh_distance_m: Some(20.0),
            subcarriers: 1,
            bandwidth_hz: 15e9,
            snr_db: [0.0, 20.0],
            combiner: CombinerMode::Fixed,
            combiner_seed: 2024,
        }
    }

    /// Baseline extended to `K = 32` subcarriers over `B = 15 GHz`.
    pub fn wideband() -> Self {
        Self { subcarriers: 32, ..Self::baseline() }
    }

    /// Desk-scale scenario: one 4×4 subarray, 8 pilots, two paths.
    pub fn toy() -> Self {
        Self {
            num_subarrays: 1,
            elems_per_subarray: 16,
            n_pilots: 8,
            paths: PathCount::Fixed(2),
            ..Self::baseline()
        }
    }

    pub fn array(&self) -> ArrayConfig {
        ArrayConfig {
            num_subarrays: self.num_subarrays,
            elems_per_subarray: self.elems_per_subarray,
            sa_spacing_m: self.sa_spacing_m,
            ae_spacing_m: self.ae_spacing_m,
            carrier_hz: self.carrier_hz,
        }
    }

    /// Real token width `2·S·S̄`.
    pub fn token_width(&self) -> usize {
        2 * self.num_subarrays * self.elems_per_subarray
    }

    /// Real observation width `2·S·N_p`.
    pub fn observation_width(&self) -> usize {
        2 * self.num_subarrays * self.n_pilots
    }

    pub fn rayleigh_distance(&self) -> f64 {
        self.rayleigh_distance_m.unwrap_or_else(|| {
            let cfg = self.array();
            geometry::rayleigh_distance(geometry::aperture(&cfg), cfg.wavelength()).unwrap_or(0.0)
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.array().validate()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_pilots == 0 {
            return bad("n_pilots must be >= 1".into());
        }
        let (lo, hi) = self.paths.bounds();
        if lo == 0 || lo > hi {
            return bad(format!("path count bounds [{lo}, {hi}] invalid (need 1 <= min <= max)"));
        }
        if !(self.los_distance_m > 0.0) {
            return bad("los_distance_m must be > 0".into());
        }
        let [rmin, rmax] = self.scatterer_distance_m;
        if !(rmin > 0.0 && rmin < rmax) {
            return bad(format!("scatterer_distance_m = [{rmin}, {rmax}] is empty or non-positive"));
        }
        let [dmin, dmax] = self.nlos_delay_s;
        if !(dmin <= dmax) {
            return bad(format!("nlos_delay_s = [{dmin}, {dmax}] is empty"));
        }
        if !(self.k_abs_per_m >= 0.0) || !(self.roughness_m >= 0.0) {
            return bad("k_abs_per_m and roughness_m must be >= 0".into());
        }
        if let Some(z) = self.rayleigh_distance_m {
            if !(z > 0.0) {
                return bad("rayleigh_distance_m must be > 0".into());
            }
        }
        if self.subcarriers == 0 || !(self.bandwidth_hz > 0.0) {
            return bad("subcarriers must be >= 1 and bandwidth_hz > 0".into());
        }
        if !(self.snr_db[0] <= self.snr_db[1]) {
            return bad(format!("snr_db = {:?} has low > high", self.snr_db));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash_hex(&self) -> String {
        hex_digest(serde_json::to_string(self).expect("scenario serializes").as_bytes())
    }

    pub fn hash_bytes(&self) -> [u8; 32] {
        Sha256::digest(serde_json::to_string(self).expect("scenario serializes").as_bytes()).into()
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
