//! Array-of-subarrays (AoSA) geometry.
//!
//! The base station is a `√S × √S` grid of subarrays, each a `√S̄ × √S̄` grid
//! of antenna elements, lying in the x–y plane with the first element of the
//! first subarray at the origin. All lengths are meters, frequencies Hz.
//!
//! Channel vectors are laid out subarray-major: element `(s, s̄)` (1-based)
//! lives at flat index `(s − 1)·S̄ + (s̄ − 1)`. Every module shares this order.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Propagation speed used throughout the channel model, m/s.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    /// Number of subarrays `S` (one RF chain each). Perfect square.
    pub num_subarrays: usize,
    /// Antenna elements per subarray `S̄`. Perfect square.
    pub elems_per_subarray: usize,
    /// Spacing between neighbouring subarrays `d_sub`, meters.
    pub sa_spacing_m: f64,
    /// Spacing between neighbouring elements `d_a`, meters.
    pub ae_spacing_m: f64,
    /// Carrier frequency `f_c`, Hz.
    pub carrier_hz: f64,
}

fn exact_sqrt(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}

impl ArrayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_subarrays == 0 || exact_sqrt(self.num_subarrays).is_none() {
            return Err(Error::Config(format!(
                "num_subarrays = {} is not a positive perfect square",
                self.num_subarrays
            )));
        }
        if self.elems_per_subarray == 0 || exact_sqrt(self.elems_per_subarray).is_none() {
            return Err(Error::Config(format!(
                "elems_per_subarray = {} is not a positive perfect square",
                self.elems_per_subarray
            )));
        }
        if !(self.carrier_hz > 0.0) {
            return Err(Error::Config(format!("carrier_hz = {} must be > 0", self.carrier_hz)));
        }
        if !(self.ae_spacing_m >= 0.0) {
            return Err(Error::Config("ae_spacing_m must be >= 0".into()));
        }
        let sa_extent = (self.ae_side() - 1) as f64 * self.ae_spacing_m;
        if self.num_subarrays > 1 && !(self.sa_spacing_m > sa_extent) {
            return Err(Error::Config(format!(
                "sa_spacing_m = {} must exceed the subarray extent {} (subarrays overlap)",
                self.sa_spacing_m, sa_extent
            )));
        }
        Ok(())
    }

    /// `√S`.
    pub fn sa_side(&self) -> usize {
        exact_sqrt(self.num_subarrays).unwrap_or(0)
    }

    /// `√S̄`.
    pub fn ae_side(&self) -> usize {
        exact_sqrt(self.elems_per_subarray).unwrap_or(0)
    }

    /// Total element count `S·S̄`.
    pub fn num_elements(&self) -> usize {
        self.num_subarrays * self.elems_per_subarray
    }

    /// Carrier wavelength `λ_c = c / f_c`.
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    /// Pitch between the first elements of adjacent subarrays.
    fn sa_pitch(&self) -> f64 {
        (self.ae_side() as f64 - 1.0) * self.ae_spacing_m + self.sa_spacing_m
    }
}

/// 1-based `(s, s̄)` pair identifying one antenna element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ElementIndex {
    pub sa: usize,
    pub ae: usize,
}

/// Row/column decomposition `(m, n, m̄, n̄)` of an [`ElementIndex`], all 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridPosition {
    pub sa_row: usize,
    pub sa_col: usize,
    pub ae_row: usize,
    pub ae_col: usize,
}

impl ElementIndex {
    pub fn new(sa: usize, ae: usize) -> Self {
        Self { sa, ae }
    }

    /// `s = (m−1)√S + n`, `s̄ = (m̄−1)√S̄ + n̄`.
    pub fn from_grid(pos: GridPosition, cfg: &ArrayConfig) -> Result<Self> {
        let (sa_side, ae_side) = (cfg.sa_side(), cfg.ae_side());
        let in_range = |v: usize, side: usize| (1..=side).contains(&v);
        if !(in_range(pos.sa_row, sa_side)
            && in_range(pos.sa_col, sa_side)
            && in_range(pos.ae_row, ae_side)
            && in_range(pos.ae_col, ae_side))
        {
            return Err(Error::Index(format!("{pos:?} outside a {sa_side}x{sa_side} / {ae_side}x{ae_side} grid")));
        }
        Ok(Self {
            sa: (pos.sa_row - 1) * sa_side + pos.sa_col,
            ae: (pos.ae_row - 1) * ae_side + pos.ae_col,
        })
    }

    pub fn to_grid(self, cfg: &ArrayConfig) -> Result<GridPosition> {
        self.check(cfg)?;
        let (sa_side, ae_side) = (cfg.sa_side(), cfg.ae_side());
        Ok(GridPosition {
            sa_row: (self.sa - 1) / sa_side + 1,
            sa_col: (self.sa - 1) % sa_side + 1,
            ae_row: (self.ae - 1) / ae_side + 1,
            ae_col: (self.ae - 1) % ae_side + 1,
        })
    }

    /// 0-based position in a vectorized channel.
    pub fn flat(self, cfg: &ArrayConfig) -> Result<usize> {
        self.check(cfg)?;
        Ok((self.sa - 1) * cfg.elems_per_subarray + (self.ae - 1))
    }

    pub fn from_flat(flat: usize, cfg: &ArrayConfig) -> Result<Self> {
        if flat >= cfg.num_elements() {
            return Err(Error::Index(format!("flat index {flat} >= {}", cfg.num_elements())));
        }
        Ok(Self {
            sa: flat / cfg.elems_per_subarray + 1,
            ae: flat % cfg.elems_per_subarray + 1,
        })
    }

    fn check(self, cfg: &ArrayConfig) -> Result<()> {
        if !(1..=cfg.num_subarrays).contains(&self.sa) || !(1..=cfg.elems_per_subarray).contains(&self.ae) {
            return Err(Error::Index(format!(
                "(s={}, s̄={}) outside S={}, S̄={}",
                self.sa, self.ae, cfg.num_subarrays, cfg.elems_per_subarray
            )));
        }
        Ok(())
    }
}

/// Position `p_{s,s̄}` of one element in meters. The z component is always 0.
pub fn ae_position(idx: ElementIndex, cfg: &ArrayConfig) -> Result<[f64; 3]> {
    let g = idx.to_grid(cfg)?;
    let pitch = cfg.sa_pitch();
    let d_a = cfg.ae_spacing_m;
    Ok([
        (g.sa_row - 1) as f64 * pitch + (g.ae_row - 1) as f64 * d_a,
        (g.sa_col - 1) as f64 * pitch + (g.ae_col - 1) as f64 * d_a,
        0.0,
    ])
}

/// Aperture `D`: the largest distance between two elements, i.e. the diagonal
/// of the square bounding the whole array.
pub fn aperture(cfg: &ArrayConfig) -> f64 {
    let side = (cfg.sa_side() as f64 - 1.0) * cfg.sa_pitch() + (cfg.ae_side() as f64 - 1.0) * cfg.ae_spacing_m;
    std::f64::consts::SQRT_2 * side
}

/// Rayleigh distance `Z = 2D²/λ`.
pub fn rayleigh_distance(aperture_m: f64, wavelength_m: f64) -> Result<f64> {
    if !(aperture_m >= 0.0) || !(wavelength_m > 0.0) {
        return Err(Error::Domain(format!(
            "rayleigh_distance needs D >= 0 and λ > 0, got D={aperture_m}, λ={wavelength_m}"
        )));
    }
    Ok(2.0 * aperture_m * aperture_m / wavelength_m)
}

/// An array configuration together with its element positions in vectorization order.
#[derive(Debug, Clone)]
pub struct ArrayGeometry {
    config: ArrayConfig,
    positions: Vec<[f64; 3]>,
}

impl ArrayGeometry {
    pub fn new(config: ArrayConfig) -> Result<Self> {
        config.validate()?;
        let positions = (0..config.num_elements())
            .map(|flat| ae_position(ElementIndex::from_flat(flat, &config)?, &config))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, positions })
    }

    pub fn config(&self) -> &ArrayConfig {
        &self.config
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn num_elements(&self) -> usize {
        self.positions.len()
    }

    pub fn aperture(&self) -> f64 {
        aperture(&self.config)
    }

    /// Rayleigh distance at the carrier.
    pub fn rayleigh_distance(&self) -> f64 {
        rayleigh_distance(self.aperture(), self.config.wavelength()).expect("validated config")
    }
}
