//! Array response vectors under spherical (near-field) and planar (far-field)
//! wavefronts.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::geometry::{ArrayGeometry, SPEED_OF_LIGHT};
use crate::{Error, Result};

/// Which wavefront model produced a response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Near,
    Far,
}

/// Unit vector `t = [sinθ cosφ, sinθ sinφ, cosθ]`.
pub fn direction_vector(theta: f64, phi: f64) -> [f64; 3] {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    [st * cp, st * sp, ct]
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Per-element propagation distance `‖p − r·t‖` (exact, spherical).
pub(crate) fn near_field_distances(geom: &ArrayGeometry, phi: f64, theta: f64, r: f64) -> Vec<f64> {
    let t = direction_vector(theta, phi);
    let src = [r * t[0], r * t[1], r * t[2]];
    geom.positions()
        .iter()
        .map(|p| ((p[0] - src[0]).powi(2) + (p[1] - src[1]).powi(2) + (p[2] - src[2]).powi(2)).sqrt())
        .collect()
}

/// Per-element first-order distance `r − pᵀt` (planar).
pub(crate) fn far_field_distances(geom: &ArrayGeometry, phi: f64, theta: f64, r: f64) -> Vec<f64> {
    let t = direction_vector(theta, phi);
    geom.positions().iter().map(|p| r - dot(p, &t)).collect()
}

pub(crate) fn phasors(distances: &[f64], freq_hz: f64) -> Vec<Complex64> {
    let k = 2.0 * PI * freq_hz / SPEED_OF_LIGHT;
    distances.iter().map(|&d| Complex64::from_polar(1.0, -k * d)).collect()
}

fn check_distance(r: f64) -> Result<()> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("source distance r = {r} must be > 0")));
    }
    Ok(())
}

/// Near-field response: element `(s, s̄)` is `exp(−j 2π f/c ‖p_{s,s̄} − r t‖)`.
pub fn near_field_response(geom: &ArrayGeometry, phi: f64, theta: f64, r: f64, freq_hz: f64) -> Result<Vec<Complex64>> {
    check_distance(r)?;
    Ok(phasors(&near_field_distances(geom, phi, theta, r), freq_hz))
}

/// Far-field response: element `(s, s̄)` is `exp(−j 2π f/c (r − p_{s,s̄}ᵀ t))`,
/// the first-order expansion of the near-field distance.
pub fn far_field_response(geom: &ArrayGeometry, phi: f64, theta: f64, r: f64, freq_hz: f64) -> Result<Vec<Complex64>> {
    check_distance(r)?;
    Ok(phasors(&far_field_distances(geom, phi, theta, r), freq_hz))
}

/// Near field strictly inside the Rayleigh distance, far field otherwise.
pub fn classify(r: f64, rayleigh_m: f64) -> Field {
    if r < rayleigh_m {
        Field::Near
    } else {
        Field::Far
    }
}

pub(crate) fn path_distances(geom: &ArrayGeometry, phi: f64, theta: f64, r: f64, rayleigh_m: f64) -> (Field, Vec<f64>) {
    match classify(r, rayleigh_m) {
        Field::Near => (Field::Near, near_field_distances(geom, phi, theta, r)),
        Field::Far => (Field::Far, far_field_distances(geom, phi, theta, r)),
    }
}

/// Response selected by comparing `r` with the Rayleigh distance.
pub fn select_response(
    geom: &ArrayGeometry,
    phi: f64,
    theta: f64,
    r: f64,
    rayleigh_m: f64,
    freq_hz: f64,
) -> Result<(Field, Vec<Complex64>)> {
    if !(rayleigh_m > 0.0) {
        return Err(Error::Domain(format!("Rayleigh distance {rayleigh_m} must be > 0")));
    }
    check_distance(r)?;
    let (field, d) = path_distances(geom, phi, theta, r, rayleigh_m);
    Ok((field, phasors(&d, freq_hz)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ArrayConfig;

    fn baseline_array() -> ArrayGeometry {
        ArrayGeometry::new(ArrayConfig {
            num_subarrays: 4,
            elems_per_subarray: 256,
            sa_spacing_m: 5.6e-2,
            ae_spacing_m: 5.0e-4,
            carrier_hz: 3.0e11,
        })
        .unwrap()
    }

    const FC: f64 = 3.0e11;

    #[test]
    fn direction_vectors() {
        let v = direction_vector(0.0, 0.7);
        assert!((v[0]).abs() < 1e-16 && (v[1]).abs() < 1e-16 && (v[2] - 1.0).abs() < 1e-16);
        let v = direction_vector(PI / 2.0, 0.0);
        assert!((v[0] - 1.0).abs() < 1e-16 && v[1].abs() < 1e-16 && v[2].abs() < 1e-16);
        let v = direction_vector(PI / 4.0, PI / 4.0);
        assert!((v[0] - 0.5).abs() < 1e-15);
        assert!((v[1] - 0.5).abs() < 1e-15);
        assert!((v[2] - 2f64.sqrt() / 2.0).abs() < 1e-15);
        for (th, ph) in [(0.3, -2.0), (-1.2, 3.0), (1.5, 0.1)] {
            let v = direction_vector(th, ph);
            assert!((dot(&v, &v) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn responses_have_unit_modulus() {
        let g = baseline_array();
        for a in [
            near_field_response(&g, 0.4, -0.3, 12.0, FC).unwrap(),
            far_field_response(&g, 0.4, -0.3, 30.0, FC).unwrap(),
        ] {
            assert_eq!(a.len(), 1024);
            assert!(a.iter().all(|z| (z.norm() - 1.0).abs() < 1e-14));
        }
    }

    #[test]
    fn near_field_first_element_phase() {
        let g = baseline_array();
        let r = 12.345;
        let a = near_field_response(&g, 1.1, 0.7, r, FC).unwrap();
        let k = 2.0 * PI * FC / SPEED_OF_LIGHT;
        let expected = Complex64::from_polar(1.0, -k * r);
        assert!((a[0] - expected).norm() < 1e-9);
    }

    #[test]
    fn far_field_boresight_is_uniform() {
        let g = baseline_array();
        let r = 30.0;
        let a = far_field_response(&g, 0.9, 0.0, r, FC).unwrap();
        let k = 2.0 * PI * FC / SPEED_OF_LIGHT;
        let expected = Complex64::from_polar(1.0, -k * r);
        assert!(a.iter().all(|z| (z - expected).norm() < 1e-9));
    }

    #[test]
    fn far_field_adjacent_element_phase_step() {
        let g = baseline_array();
        let (phi, theta) = (0.6, 0.8);
        let a = far_field_response(&g, phi, theta, 30.0, FC).unwrap();
        let k = 2.0 * PI * FC / SPEED_OF_LIGHT;
        let step = (a[1] * a[0].conj()).arg();
        let expected = k * 5.0e-4 * theta.sin() * phi.sin();
        assert!((step - expected).abs() < 1e-9, "{step} vs {expected}");
    }

    #[test]
    fn near_converges_to_far_at_long_range() {
        let g = baseline_array();
        let mut worst: f64 = 0.0;
        for (phi, theta) in [(0.0, 0.0), (0.3, 1.2), (-2.5, -0.9), (3.0, 1.5)] {
            let nf = near_field_response(&g, phi, theta, 1e4, FC).unwrap();
            let ff = far_field_response(&g, phi, theta, 1e4, FC).unwrap();
            for (a, b) in nf.iter().zip(&ff) {
                worst = worst.max((a * b.conj()).arg().abs());
            }
        }
        assert!(worst < 1e-2, "max phase gap {worst}");
    }

    #[test]
    fn select_response_boundary() {
        let g = baseline_array();
        let z = 20.0;
        let (f, v) = select_response(&g, 0.1, 0.2, z - 1e-9, z, FC).unwrap();
        assert_eq!(f, Field::Near);
        assert_eq!(v, near_field_response(&g, 0.1, 0.2, z - 1e-9, FC).unwrap());
        let (f, v) = select_response(&g, 0.1, 0.2, z, z, FC).unwrap();
        assert_eq!(f, Field::Far);
        assert_eq!(v, far_field_response(&g, 0.1, 0.2, z, FC).unwrap());
        assert_eq!(classify(30.0, 20.0), Field::Far);
        assert_eq!(classify(12.0, 20.0), Field::Near);
    }

    #[test]
    fn non_positive_distance_rejected() {
        let g = baseline_array();
        assert!(matches!(near_field_response(&g, 0.0, 0.0, 0.0, FC), Err(Error::Domain(_))));
        assert!(matches!(near_field_response(&g, 0.0, 0.0, -1.0, FC), Err(Error::Domain(_))));
    }
}
