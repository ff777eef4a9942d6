//! Reflector material and frequency-dependent molecular absorption.

use std::path::Path;

use num_complex::Complex64;

use crate::{Error, Result};

const FLAT_TABLE_CSV: &str = include_str!("../../assets/absorption_flat.csv");

/// Molecular absorption coefficient `k_abs(f)` in 1/m.
#[derive(Debug, Clone, PartialEq)]
pub enum AbsorptionTable {
    /// Same coefficient at every frequency.
    Constant(f64),
    /// Piecewise-linear interpolation between `(frequency_hz, k_abs_per_m)`
    /// knots sorted by frequency. Lookups outside the knot range fail.
    Table(Vec<(f64, f64)>),
}

impl AbsorptionTable {
    /// The bundled flat table (`k_abs = 0.0033 /m` over 200–400 GHz).
    pub fn flat_default() -> Self {
        Self::parse_csv(FLAT_TABLE_CSV.as_bytes(), "<bundled absorption_flat.csv>").expect("bundled table parses")
    }

    pub fn from_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::parse_csv(file, &path.display().to_string())
    }

    /// Parses `frequency_hz,k_abs_per_m` rows (header required).
    pub fn parse_csv<R: std::io::Read>(reader: R, origin: &str) -> Result<Self> {
        let fmt = |detail: String| Error::Format { path: origin.into(), detail };
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| fmt(e.to_string()))?.clone();
        if headers.len() != 2 || &headers[0] != "frequency_hz" || &headers[1] != "k_abs_per_m" {
            return Err(fmt(format!("expected header `frequency_hz,k_abs_per_m`, got {headers:?}")));
        }
        let mut knots = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| fmt(e.to_string()))?;
            let parse = |i: usize| rec[i].parse::<f64>().map_err(|e| fmt(format!("{:?}: {e}", &rec[i])));
            knots.push((parse(0)?, parse(1)?));
        }
        Self::from_knots(knots).map_err(|e| fmt(e.to_string()))
    }

    pub fn from_knots(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Config("absorption table has no rows".into()));
        }
        if knots.iter().any(|&(f, k)| !(f > 0.0) || !(k >= 0.0)) {
            return Err(Error::Config("absorption table needs f > 0 and k_abs >= 0".into()));
        }
        if knots.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(Error::Config("absorption table frequencies must be strictly increasing".into()));
        }
        Ok(Self::Table(knots))
    }

    pub fn k_abs(&self, freq_hz: f64) -> Result<f64> {
        match self {
            Self::Constant(k) => Ok(*k),
            Self::Table(knots) => {
                let (lo, hi) = (knots[0].0, knots[knots.len() - 1].0);
                if !(lo..=hi).contains(&freq_hz) {
                    return Err(Error::Config(format!(
                        "frequency {freq_hz:.6e} Hz outside absorption table range [{lo:.6e}, {hi:.6e}] Hz"
                    )));
                }
                let i = knots.partition_point(|&(f, _)| f <= freq_hz);
                if i == knots.len() {
                    return Ok(knots[i - 1].1);
                }
                let (f0, k0) = knots[i - 1];
                let (f1, k1) = knots[i];
                Ok(k0 + (k1 - k0) * (freq_hz - f0) / (f1 - f0))
            }
        }
    }
}

/// Reflecting-surface and atmosphere properties shared by all paths.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialModel {
    pub absorption: AbsorptionTable,
    pub refractive_index: Complex64,
    /// Surface roughness `σ_rough`, meters.
    pub roughness_m: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_table_is_flat() {
        let t = AbsorptionTable::flat_default();
        for f in [2.0e11, 2.9e11, 3.0e11, 3.0725e11, 4.0e11] {
            assert_eq!(t.k_abs(f).unwrap(), 0.0033);
        }
        let err = t.k_abs(4.5e11).unwrap_err().to_string();
        assert!(err.contains("outside absorption table range"), "{err}");
    }

    #[test]
    fn piecewise_linear_interpolation() {
        let t = AbsorptionTable::from_knots(vec![(1.0, 0.0), (3.0, 2.0), (4.0, 0.0)]).unwrap();
        assert_eq!(t.k_abs(1.0).unwrap(), 0.0);
        assert_eq!(t.k_abs(2.0).unwrap(), 1.0);
        assert_eq!(t.k_abs(3.0).unwrap(), 2.0);
        assert_eq!(t.k_abs(3.5).unwrap(), 1.0);
        assert_eq!(t.k_abs(4.0).unwrap(), 0.0);
        assert!(t.k_abs(0.5).is_err());
    }

    #[test]
    fn malformed_tables() {
        assert!(AbsorptionTable::parse_csv("f,k\n1,2\n".as_bytes(), "x").is_err());
        assert!(AbsorptionTable::parse_csv("frequency_hz,k_abs_per_m\n2,1\n1,1\n".as_bytes(), "x").is_err());
        assert!(AbsorptionTable::parse_csv("frequency_hz,k_abs_per_m\n".as_bytes(), "x").is_err());
        assert!(AbsorptionTable::parse_csv("frequency_hz,k_abs_per_m\n1,abc\n".as_bytes(), "x").is_err());
    }
}
