//! Path attenuation: molecular absorption on the LoS path and rough-surface
//! reflection on NLoS paths.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;

use crate::geometry::SPEED_OF_LIGHT;
use crate::{Error, Result};

/// `α₁ = c/(4π f r₁) · exp(−½ k_abs r₁)`.
pub fn los_path_gain(r1_m: f64, freq_hz: f64, k_abs_per_m: f64) -> f64 {
    SPEED_OF_LIGHT / (4.0 * PI * freq_hz * r1_m) * (-0.5 * k_abs_per_m * r1_m).exp()
}

/// Fresnel-type reflection coefficient with a Rayleigh roughness factor.
///
/// The refraction angle `φ_ref = asin(sin φ_in / n_t)` is evaluated with the
/// principal branches of complex `asin` and `cos`.
pub fn reflection_coefficient(phi_in: f64, refractive_index: Complex64, roughness_m: f64, freq_hz: f64) -> Result<Complex64> {
    if !(0.0..FRAC_PI_2).contains(&phi_in) {
        return Err(Error::Domain(format!("incidence angle {phi_in} outside [0, π/2)")));
    }
    let n_t = refractive_index;
    let cos_in = phi_in.cos();
    let phi_ref = (Complex64::from(phi_in.sin()) / n_t).asin();
    let n_cos_ref = n_t * phi_ref.cos();
    let fresnel = (cos_in - n_cos_ref) / (cos_in + n_cos_ref);
    let k = 2.0 * PI * freq_hz * roughness_m * cos_in / SPEED_OF_LIGHT;
    // 8π²f²σ²cos²φ/c² = 2 (2π f σ cosφ / c)²
    Ok(fresnel * (-2.0 * k * k).exp())
}

/// `α_l = |Γ_l| α₁`.
pub fn nlos_path_gain(gamma: Complex64, alpha1: f64) -> f64 {
    gamma.norm() * alpha1
}

#[cfg(test)]
mod tests {
    use super::*;

    const N_T: Complex64 = Complex64::new(2.24, -0.025);

    /// Second route: cos φ_ref = √(1 − sin²φ_in / n_t²) and the roughness
    /// exponent written out term by term.
    fn reflection_oracle(phi_in: f64, n_t: Complex64, sigma: f64, f: f64) -> Complex64 {
        let s = phi_in.sin();
        let cos_ref = (Complex64::new(1.0, 0.0) - Complex64::from(s * s) / (n_t * n_t)).sqrt();
        let c = phi_in.cos();
        let num = Complex64::from(c) - n_t * cos_ref;
        let den = Complex64::from(c) + n_t * cos_ref;
        let expo = -(8.0 * PI * PI * f * f * sigma * sigma * c * c) / (SPEED_OF_LIGHT * SPEED_OF_LIGHT);
        num / den * expo.exp()
    }

    #[test]
    fn los_gain_examples() {
        let f = SPEED_OF_LIGHT / (4.0 * PI);
        assert!((los_path_gain(1.0, f, 0.0) - 1.0).abs() < 1e-15);
        let a = los_path_gain(30.0, 3.0e11, 0.0033);
        // 3e8 / (4π·3e11·30) · e^{-0.0495}
        let calc = 2.652_582_384_864_922e-6 * 0.951_705_158_136_462_2;
        assert!((a - calc).abs() / calc < 1e-12, "{a}");
        assert!((a - 2.525e-6).abs() < 1e-9);
        let r = los_path_gain(10.0, 3.0e11, 0.0) / los_path_gain(20.0, 3.0e11, 0.0);
        assert!((r - 2.0).abs() < 1e-14);
    }

    #[test]
    fn reflection_closed_forms() {
        let g = reflection_coefficient(0.7, Complex64::new(1.0, 0.0), 0.0, 3e11).unwrap();
        assert!(g.norm() < 1e-15);
        let g = reflection_coefficient(0.0, N_T, 0.0, 3e11).unwrap();
        let expected = (Complex64::new(1.0, 0.0) - N_T) / (Complex64::new(1.0, 0.0) + N_T);
        assert!((g - expected).norm() < 1e-15);
    }

    #[test]
    fn reflection_matches_independent_route() {
        let phi = PI / 4.0;
        let g = reflection_coefficient(phi, N_T, 8.8e-5, 3e11).unwrap();
        let o = reflection_oracle(phi, N_T, 8.8e-5, 3e11);
        assert!((g - o).norm() / o.norm() < 1e-12);
        // Frozen from a 40-digit evaluation at the baseline material, φ_in = π/4.
        let golden = Complex64::new(-0.368_868_876_504_800_66, 0.003_420_334_841_557_082_3);
        assert!((g - golden).norm() / golden.norm() < 1e-12, "{g}");
        for phi in [0.0, 0.2, 0.9, 1.3, 1.55] {
            let g = reflection_coefficient(phi, N_T, 8.8e-5, 2.9e11).unwrap();
            let o = reflection_oracle(phi, N_T, 8.8e-5, 2.9e11);
            assert!((g - o).norm() <= 1e-12 * o.norm().max(1e-300));
        }
    }

    #[test]
    fn reflection_angle_domain() {
        assert!(reflection_coefficient(FRAC_PI_2, N_T, 0.0, 3e11).is_err());
        assert!(reflection_coefficient(-0.1, N_T, 0.0, 3e11).is_err());
    }

    #[test]
    fn nlos_gain_examples() {
        assert_eq!(nlos_path_gain(Complex64::new(0.0, 0.0), 2.5e-6), 0.0);
        assert_eq!(nlos_path_gain(Complex64::new(0.0, 1.0), 2.5e-6), 2.5e-6);
        assert!((nlos_path_gain(Complex64::new(0.3, 0.0), 2.5e-6) - 7.5e-7).abs() < 1e-21);
    }
}
