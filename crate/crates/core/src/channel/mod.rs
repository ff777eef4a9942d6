//! Hybrid near/far-field multipath channel synthesis.
//!
//! A realization is the normalized superposition of `L` paths, each with an
//! array response chosen by comparing its source distance with the Rayleigh
//! distance. Wideband realizations evaluate the same paths at every OFDM
//! subcarrier frequency and normalize each subcarrier separately.

mod gains;
mod material;
mod response;

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::Rng;

pub use gains::{los_path_gain, nlos_path_gain, reflection_coefficient};
pub use material::{AbsorptionTable, MaterialModel};
pub use response::{classify, direction_vector, far_field_response, near_field_response, select_response, Field};

use crate::config::{PathCount, ScenarioConfig};
use crate::geometry::{ArrayGeometry, SPEED_OF_LIGHT};
use crate::{Error, Result};

/// Parameters of one propagation path. Angles in radians, distances in
/// meters, delays in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParams {
    pub azimuth: f64,
    pub elevation: f64,
    pub distance_m: f64,
    pub delay_s: f64,
    /// Angle of incidence on the last reflector; unused for the LoS path.
    pub incidence: f64,
    pub is_los: bool,
}

/// The paths of one realization. Path 0 is the LoS path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    paths: Vec<PathParams>,
    /// Real path gains `α_l` at the carrier.
    gains: Vec<f64>,
}

impl PathSet {
    pub fn new(paths: Vec<PathParams>, material: &MaterialModel, carrier_hz: f64) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::Config("a path set needs at least one path".into()));
        }
        if !paths[0].is_los || paths[1..].iter().any(|p| p.is_los) {
            return Err(Error::Config("exactly one LoS path, stored first, is required".into()));
        }
        if let Some(p) = paths.iter().find(|p| !(p.distance_m > 0.0)) {
            return Err(Error::Domain(format!("path distance {} must be > 0", p.distance_m)));
        }
        let gains = path_gains(&paths, material, carrier_hz)?;
        Ok(Self { paths, gains })
    }

    pub fn paths(&self) -> &[PathParams] {
        &self.paths
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Number of paths whose response is near-field under threshold `z`.
    pub fn near_field_count(&self, rayleigh_m: f64) -> usize {
        self.paths.iter().filter(|p| classify(p.distance_m, rayleigh_m) == Field::Near).count()
    }
}

/// `α_l(f)` for every path: absorption on the LoS path, `|Γ_l| α₁` otherwise.
pub fn path_gains(paths: &[PathParams], material: &MaterialModel, freq_hz: f64) -> Result<Vec<f64>> {
    let k_abs = material.absorption.k_abs(freq_hz)?;
    let alpha1 = los_path_gain(paths[0].distance_m, freq_hz, k_abs);
    paths
        .iter()
        .map(|p| {
            if p.is_los {
                Ok(alpha1)
            } else {
                let gamma = reflection_coefficient(p.incidence, material.refractive_index, material.roughness_m, freq_hz)?;
                Ok(nlos_path_gain(gamma, alpha1))
            }
        })
        .collect()
}

/// Draws a path set from the scenario's distributions.
///
/// Both angles of every path are uniform (`θ ~ U(−π/2, π/2)`,
/// `φ ~ U(−π, π)`); NLoS paths additionally draw distance, delay and
/// incidence angle `φ_in ~ U(0, π/2)`.
pub fn sample_paths<R: Rng + ?Sized>(scenario: &ScenarioConfig, material: &MaterialModel, rng: &mut R) -> Result<PathSet> {
    let [rmin, rmax] = scenario.scatterer_distance_m;
    if !(rmin > 0.0 && rmin < rmax) {
        return Err(Error::Config(format!("scatterer distance range [{rmin}, {rmax}] is empty")));
    }
    let n_paths = match scenario.paths {
        PathCount::Fixed(l) => l,
        PathCount::Uniform([lo, hi]) => rng.random_range(lo..=hi),
    };
    if n_paths == 0 {
        return Err(Error::Config("path count must be >= 1".into()));
    }
    let [dmin, dmax] = scenario.nlos_delay_s;
    let mut paths = Vec::with_capacity(n_paths);
    for l in 0..n_paths {
        let elevation = rng.random_range(-FRAC_PI_2..FRAC_PI_2);
        let azimuth = rng.random_range(-PI..PI);
        if l == 0 {
            paths.push(PathParams {
                azimuth,
                elevation,
                distance_m: scenario.los_distance_m,
                delay_s: scenario.los_delay_s,
                incidence: 0.0,
                is_los: true,
            });
        } else {
            let distance_m = rng.random_range(rmin..rmax);
            let delay_s = if dmin < dmax { rng.random_range(dmin..dmax) } else { dmin };
            let incidence = rng.random_range(0.0..FRAC_PI_2);
            paths.push(PathParams { azimuth, elevation, distance_m, delay_s, incidence, is_los: false });
        }
    }
    PathSet::new(paths, material, scenario.carrier_hz)
}

/// A synthesized channel: one row per subcarrier (a single row when
/// narrowband), each of length `S·S̄` in the subarray-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub freqs_hz: Vec<f64>,
    pub rows: Vec<Vec<Complex64>>,
    /// Normalization factor `γ` applied to each row.
    pub gammas: Vec<f64>,
}

impl ChannelRealization {
    pub fn num_subcarriers(&self) -> usize {
        self.rows.len()
    }
}

/// OFDM subcarrier frequencies `f_k = f_c + (k − 1 − (K−1)/2)·B/K`, k = 1..K.
pub fn subcarrier_frequencies(carrier_hz: f64, subcarriers: usize, bandwidth_hz: f64) -> Vec<f64> {
    let half = (subcarriers as f64 - 1.0) / 2.0;
    (0..subcarriers)
        .map(|k| carrier_hz + (k as f64 - half) * bandwidth_hz / subcarriers as f64)
        .collect()
}

/// Everything needed to turn a [`PathSet`] into channel vectors.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    geometry: ArrayGeometry,
    material: MaterialModel,
    rayleigh_m: f64,
}

impl ChannelModel {
    pub fn new(geometry: ArrayGeometry, material: MaterialModel, rayleigh_m: f64) -> Result<Self> {
        if !(rayleigh_m > 0.0) {
            return Err(Error::Config(format!("Rayleigh distance {rayleigh_m} must be > 0")));
        }
        Ok(Self { geometry, material, rayleigh_m })
    }

    pub fn from_scenario(scenario: &ScenarioConfig) -> Result<Self> {
        scenario.validate()?;
        let absorption = match &scenario.absorption_table {
            Some(path) => AbsorptionTable::from_csv(path)?,
            None => AbsorptionTable::Constant(scenario.k_abs_per_m),
        };
        let material = MaterialModel {
            absorption,
            refractive_index: Complex64::new(scenario.refractive_index[0], scenario.refractive_index[1]),
            roughness_m: scenario.roughness_m,
        };
        Self::new(ArrayGeometry::new(scenario.array())?, material, scenario.rayleigh_distance())
    }

    pub fn geometry(&self) -> &ArrayGeometry {
        &self.geometry
    }

    pub fn material(&self) -> &MaterialModel {
        &self.material
    }

    pub fn rayleigh_distance(&self) -> f64 {
        self.rayleigh_m
    }

    /// Unnormalized `Σ_l α_l a_l e^{−j2π f τ_l}` with caller-supplied gains.
    fn superpose(&self, paths: &PathSet, gains: &[f64], freq_hz: f64) -> Vec<Complex64> {
        let mut h = vec![Complex64::new(0.0, 0.0); self.geometry.num_elements()];
        for (p, &alpha) in paths.paths().iter().zip(gains) {
            let (_, dist) = response::path_distances(&self.geometry, p.azimuth, p.elevation, p.distance_m, self.rayleigh_m);
            let coef = alpha * Complex64::from_polar(1.0, -2.0 * PI * freq_hz * p.delay_s);
            for (acc, a) in h.iter_mut().zip(response::phasors(&dist, freq_hz)) {
                *acc += coef * a;
            }
        }
        h
    }

    /// Narrowband channel at `freq_hz`, scaled so `‖h‖² = S·S̄`. Returns the
    /// vector and its normalization factor `γ`.
    pub fn synthesize(&self, paths: &PathSet, freq_hz: f64) -> Result<(Vec<Complex64>, f64)> {
        let gains = path_gains(paths.paths(), &self.material, freq_hz)?;
        self.synthesize_with_gains(paths, &gains, freq_hz)
    }

    /// As [`ChannelModel::synthesize`] but with explicit (possibly signed) gains.
    pub fn synthesize_with_gains(&self, paths: &PathSet, gains: &[f64], freq_hz: f64) -> Result<(Vec<Complex64>, f64)> {
        if gains.len() != paths.len() {
            return Err(Error::Shape(format!("{} gains for {} paths", gains.len(), paths.len())));
        }
        let mut h = self.superpose(paths, gains, freq_hz);
        let gamma = self.normalize(&mut h)?;
        Ok((h, gamma))
    }

    fn normalize(&self, h: &mut [Complex64]) -> Result<f64> {
        let energy: f64 = h.iter().map(|z| z.norm_sqr()).sum();
        if !(energy > f64::MIN_POSITIVE) || !energy.is_finite() {
            return Err(Error::DegenerateChannel);
        }
        let gamma = (self.geometry.num_elements() as f64 / energy).sqrt();
        h.iter_mut().for_each(|z| *z *= gamma);
        Ok(gamma)
    }

    /// Wideband channel over `K` subcarriers spanning `B` Hz around the carrier.
    ///
    /// Array responses at subcarrier `k` are advanced from subcarrier `k − 1`
    /// by a per-element phase step, which equals direct evaluation at `f_k`
    /// up to rounding.
    pub fn wideband(&self, paths: &PathSet, subcarriers: usize, bandwidth_hz: f64) -> Result<ChannelRealization> {
        if subcarriers == 0 || !(bandwidth_hz > 0.0) {
            return Err(Error::Config("wideband channel needs K >= 1 and B > 0".into()));
        }
        let fc = self.geometry.config().carrier_hz;
        let freqs = subcarrier_frequencies(fc, subcarriers, bandwidth_hz);
        let gains = freqs
            .iter()
            .map(|&f| path_gains(paths.paths(), &self.material, f))
            .collect::<Result<Vec<_>>>()?;
        let n = self.geometry.num_elements();
        let mut rows = vec![vec![Complex64::new(0.0, 0.0); n]; subcarriers];
        let df = bandwidth_hz / subcarriers as f64;
        for (l, p) in paths.paths().iter().enumerate() {
            let (_, dist) = response::path_distances(&self.geometry, p.azimuth, p.elevation, p.distance_m, self.rayleigh_m);
            let mut current = response::phasors(&dist, freqs[0]);
            let step: Vec<Complex64> = dist
                .iter()
                .map(|&d| Complex64::from_polar(1.0, -2.0 * PI * df * d / SPEED_OF_LIGHT))
                .collect();
            for (k, row) in rows.iter_mut().enumerate() {
                let coef = gains[k][l] * Complex64::from_polar(1.0, -2.0 * PI * freqs[k] * p.delay_s);
                for (acc, a) in row.iter_mut().zip(&current) {
                    *acc += coef * a;
                }
                if k + 1 < subcarriers {
                    current.iter_mut().zip(&step).for_each(|(c, s)| *c *= s);
                }
            }
        }
        let gammas = rows.iter_mut().map(|row| self.normalize(row)).collect::<Result<Vec<_>>>()?;
        Ok(ChannelRealization { freqs_hz: freqs, rows, gammas })
    }

    /// Narrowband at the carrier when `K = 1`, wideband otherwise.
    pub fn realize(&self, paths: &PathSet, subcarriers: usize, bandwidth_hz: f64) -> Result<ChannelRealization> {
        if subcarriers == 1 {
            let fc = self.geometry.config().carrier_hz;
            let (h, gamma) = self.synthesize(paths, fc)?;
            Ok(ChannelRealization { freqs_hz: vec![fc], rows: vec![h], gammas: vec![gamma] })
        } else {
            self.wideband(paths, subcarriers, bandwidth_hz)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn baseline_model() -> (ScenarioConfig, ChannelModel) {
        let sc = ScenarioConfig::baseline();
        let model = ChannelModel::from_scenario(&sc).unwrap();
        (sc, model)
    }

    fn energy(h: &[Complex64]) -> f64 {
        h.iter().map(|z| z.norm_sqr()).sum()
    }

    #[test]
    fn baseline_sampling_respects_ranges() {
        let (sc, model) = baseline_model();
        let mut rng = stream(1, Purpose::Misc, 0, 0);
        for _ in 0..200 {
            let ps = sample_paths(&sc, model.material(), &mut rng).unwrap();
            assert_eq!(ps.len(), 5);
            let los = ps.paths()[0];
            assert!(los.is_los && los.distance_m == 30.0 && los.delay_s == 100e-9);
            for p in &ps.paths()[1..] {
                assert!(!p.is_los);
                assert!((10.0..25.0).contains(&p.distance_m));
                assert!((100e-9..110e-9).contains(&p.delay_s));
                assert!((0.0..FRAC_PI_2).contains(&p.incidence));
            }
            for p in ps.paths() {
                assert!((-FRAC_PI_2..FRAC_PI_2).contains(&p.elevation));
                assert!((-PI..PI).contains(&p.azimuth));
            }
        }
    }

    #[test]
    fn variable_path_count_covers_range() {
        let (mut sc, model) = baseline_model();
        sc.paths = PathCount::Uniform([2, 7]);
        let mut rng = stream(2, Purpose::Misc, 0, 0);
        let mut seen = [0usize; 8];
        for _ in 0..3000 {
            seen[sample_paths(&sc, model.material(), &mut rng).unwrap().len()] += 1;
        }
        assert_eq!(seen[0] + seen[1], 0);
        for l in 2..=7 {
            assert!((400..600).contains(&seen[l]), "L={l}: {}", seen[l]);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let (sc, model) = baseline_model();
        let a = sample_paths(&sc, model.material(), &mut stream(9, Purpose::Misc, 1, 1)).unwrap();
        let b = sample_paths(&sc, model.material(), &mut stream(9, Purpose::Misc, 1, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_distance_range_is_config_error() {
        let (mut sc, model) = baseline_model();
        sc.scatterer_distance_m = [20.0, 20.0];
        let r = sample_paths(&sc, model.material(), &mut stream(0, Purpose::Misc, 0, 0));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn synthesized_channel_is_normalized() {
        let (sc, model) = baseline_model();
        let mut rng = stream(3, Purpose::Misc, 0, 0);
        for _ in 0..20 {
            let ps = sample_paths(&sc, model.material(), &mut rng).unwrap();
            let (h, _) = model.synthesize(&ps, sc.carrier_hz).unwrap();
            assert!((energy(&h) - 1024.0).abs() / 1024.0 < 1e-12);
        }
    }

    #[test]
    fn single_los_path_closed_form() {
        let (sc, model) = baseline_model();
        let los = PathParams { azimuth: 0.4, elevation: 0.2, distance_m: 30.0, delay_s: 1e-7, incidence: 0.0, is_los: true };
        let ps = PathSet::new(vec![los], model.material(), sc.carrier_hz).unwrap();
        let (h, gamma) = model.synthesize(&ps, sc.carrier_hz).unwrap();
        let a = far_field_response(model.geometry(), 0.4, 0.2, 30.0, sc.carrier_hz).unwrap();
        let delay = Complex64::from_polar(1.0, -2.0 * PI * sc.carrier_hz * 1e-7);
        // A unit-modulus vector of length 1024 has energy 1024 already, so γα₁ = 1.
        assert!((gamma * ps.gains()[0] - 1.0).abs() < 1e-12);
        for (x, y) in h.iter().zip(&a) {
            assert!((x - y * delay).norm() < 1e-9);
        }
    }

    #[test]
    fn exact_cancellation_is_degenerate() {
        let (sc, model) = baseline_model();
        let los = PathParams { azimuth: 0.4, elevation: 0.2, distance_m: 30.0, delay_s: 1e-7, incidence: 0.0, is_los: true };
        let twin = PathParams { is_los: false, incidence: 0.3, ..los };
        let ps = PathSet::new(vec![los, twin], model.material(), sc.carrier_hz).unwrap();
        let r = model.synthesize_with_gains(&ps, &[1.0, -1.0], sc.carrier_hz);
        assert!(matches!(r, Err(Error::DegenerateChannel)));
    }

    #[test]
    fn far_only_paths_flagged() {
        let (mut sc, model) = baseline_model();
        sc.scatterer_distance_m = [20.0, 40.0];
        let mut rng = stream(4, Purpose::Misc, 0, 0);
        for _ in 0..50 {
            let ps = sample_paths(&sc, model.material(), &mut rng).unwrap();
            assert_eq!(ps.near_field_count(model.rayleigh_distance()), 0);
        }
    }

    #[test]
    fn subcarrier_grid() {
        let f = subcarrier_frequencies(3e11, 1, 15e9);
        assert_eq!(f, vec![3e11]);
        let f = subcarrier_frequencies(3e11, 32, 15e9);
        assert_eq!(f.len(), 32);
        assert!((f[0] - (3e11 - 15.5 * 15e9 / 32.0)).abs() < 1e-3);
        assert!((f[31] - (3e11 + 15.5 * 15e9 / 32.0)).abs() < 1e-3);
        assert!((f[31] - 3e11 - 7.265_625e9).abs() < 1e-3);
    }

    #[test]
    fn wideband_single_subcarrier_is_narrowband() {
        let (sc, model) = baseline_model();
        let ps = sample_paths(&sc, model.material(), &mut stream(5, Purpose::Misc, 0, 0)).unwrap();
        let wb = model.wideband(&ps, 1, 15e9).unwrap();
        let (h, _) = model.synthesize(&ps, sc.carrier_hz).unwrap();
        assert_eq!(wb.rows[0], h);
    }

    #[test]
    fn wideband_rows_match_direct_evaluation() {
        let (sc, model) = baseline_model();
        let ps = sample_paths(&sc, model.material(), &mut stream(6, Purpose::Misc, 0, 0)).unwrap();
        let wb = model.wideband(&ps, 32, 15e9).unwrap();
        for (k, row) in wb.rows.iter().enumerate() {
            let (h, _) = model.synthesize(&ps, wb.freqs_hz[k]).unwrap();
            let err: f64 = row.iter().zip(&h).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-9, "row {k}: {err}");
            assert!((energy(row) - 1024.0).abs() / 1024.0 < 1e-12);
        }
    }

    #[test]
    fn absorption_table_range_is_enforced() {
        let (sc, _) = baseline_model();
        let geom = ArrayGeometry::new(sc.array()).unwrap();
        let narrow = AbsorptionTable::from_knots(vec![(2.95e11, 0.0033), (3.05e11, 0.0033)]).unwrap();
        let material = MaterialModel { absorption: narrow, refractive_index: Complex64::new(2.24, -0.025), roughness_m: 8.8e-5 };
        let model = ChannelModel::new(geom, material, 20.0).unwrap();
        let ps = sample_paths(&sc, model.material(), &mut stream(7, Purpose::Misc, 0, 0)).unwrap();
        assert!(model.wideband(&ps, 4, 5e9).is_ok());
        let err = model.wideband(&ps, 32, 15e9).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("outside absorption table")), "{err}");
    }
}
