//! Hybrid-combining pilot measurements.
//!
//! Each pilot `p` uses a block-diagonal analog combiner `W_RF,p` (S·S̄ × S):
//! element `(s, s̄)` feeds only RF chain `s`, through a one-bit phase shifter
//! with weight `±1/√S̄`. Stacking all pilots gives `W_RF^H` of size
//! `(S·N_p) × (S·S̄)`, whose rows are ordered pilot-major `(p, s)`.
//!
//! Real-valued vectors stack real then imaginary parts, `[Re(v), Im(v)]`,
//! and complex matrices expand as `[[Re, −Im], [Im, Re]]`.
//!
//! SNR convention: `snr_db = 10·log10(1/σ_n²)`, the per-element signal power
//! being 1 because `‖h‖² = S·S̄` and the pilot symbol is 1. Noise is drawn per
//! pilot on every antenna element, `ñ_p ~ CN(0, σ_n² I)`, before combining.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::channel::ChannelRealization;
use crate::geometry::ArrayConfig;
use crate::linalg::{self, PseudoInverse};
use crate::rng::{self, Purpose};
use crate::{Error, Result};

/// `σ_n² = 10^(−snr_db/10)`.
pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// `[Re(v), Im(v)]`.
pub fn complex_to_real(v: &[Complex64]) -> Vec<f64> {
    v.iter().map(|z| z.re).chain(v.iter().map(|z| z.im)).collect()
}

/// Inverse of [`complex_to_real`].
pub fn real_to_complex(v: &[f64]) -> Result<Vec<Complex64>> {
    if v.len() % 2 != 0 {
        return Err(Error::Shape(format!("real vector of odd length {} has no complex form", v.len())));
    }
    let n = v.len() / 2;
    Ok((0..n).map(|i| Complex64::new(v[i], v[n + i])).collect())
}

/// `[[Re(W), −Im(W)], [Im(W), Re(W)]]`.
pub fn real_expand(w: &DMatrix<Complex64>) -> DMatrix<f64> {
    let (m, n) = w.shape();
    DMatrix::from_fn(2 * m, 2 * n, |i, j| {
        let z = w[(i % m, j % n)];
        match (i < m, j < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

/// A noisy pilot observation in stacked-real form: one row of length
/// `2·S·N_p` per subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub rows: Vec<Vec<f64>>,
    pub snr_db: f64,
    pub noise_var: f64,
}

/// The stacked analog combiner of one pilot sequence together with its
/// real expansion and pseudoinverse.
#[derive(Debug, Clone)]
pub struct MeasurementOperator {
    num_subarrays: usize,
    elems_per_subarray: usize,
    n_pilots: usize,
    /// Row `(p, s)` of `W_RF^H` restricted to block `s`, at
    /// `((p·S + s)·S̄ + s̄)`.
    weights: Vec<Complex64>,
    real: DMatrix<f64>,
    pinv: DMatrix<f64>,
    seed: u64,
}

impl MeasurementOperator {
    /// Draws every in-block weight i.i.d. from `{−1, +1}/√S̄`.
    pub fn generate(cfg: &ArrayConfig, n_pilots: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if n_pilots == 0 {
            return Err(Error::Config("n_pilots must be >= 1".into()));
        }
        let mut rng = rng::stream(seed, Purpose::Combiner, 0, 0);
        let amp = 1.0 / (cfg.elems_per_subarray as f64).sqrt();
        let weights = (0..n_pilots * cfg.num_elements())
            .map(|_| Complex64::new(if rng.random::<bool>() { amp } else { -amp }, 0.0))
            .collect();
        let mut op = Self::from_weights(cfg.num_subarrays, cfg.elems_per_subarray, n_pilots, weights)?;
        op.seed = seed;
        Ok(op)
    }

    /// Builds an operator from explicit in-block weights (see field layout).
    pub fn from_weights(num_subarrays: usize, elems_per_subarray: usize, n_pilots: usize, weights: Vec<Complex64>) -> Result<Self> {
        if weights.len() != n_pilots * num_subarrays * elems_per_subarray {
            return Err(Error::Shape(format!(
                "{} weights for S={num_subarrays}, S̄={elems_per_subarray}, N_p={n_pilots}",
                weights.len()
            )));
        }
        let mut op = Self {
            num_subarrays,
            elems_per_subarray,
            n_pilots,
            weights,
            real: DMatrix::zeros(0, 0),
            pinv: DMatrix::zeros(0, 0),
            seed: 0,
        };
        op.real = real_expand(&op.stacked_hermitian());
        op.pinv = op.blockwise_pseudo_inverse()?;
        Ok(op)
    }

    pub fn num_subarrays(&self) -> usize {
        self.num_subarrays
    }

    pub fn elems_per_subarray(&self) -> usize {
        self.elems_per_subarray
    }

    pub fn n_pilots(&self) -> usize {
        self.n_pilots
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `S·S̄`.
    pub fn channel_len(&self) -> usize {
        self.num_subarrays * self.elems_per_subarray
    }

    /// `S·N_p`.
    pub fn observation_len(&self) -> usize {
        self.num_subarrays * self.n_pilots
    }

    /// Weight of element `(s, s̄)` (0-based) in the combiner output `(p, s)`.
    pub fn weight(&self, pilot: usize, sa: usize, ae: usize) -> Complex64 {
        self.weights[(pilot * self.num_subarrays + sa) * self.elems_per_subarray + ae]
    }

    /// Dense `W_RF,p` (S·S̄ × S) of one pilot.
    pub fn combiner(&self, pilot: usize) -> DMatrix<Complex64> {
        let (s_n, sb_n) = (self.num_subarrays, self.elems_per_subarray);
        let mut w = DMatrix::zeros(s_n * sb_n, s_n);
        for s in 0..s_n {
            for sb in 0..sb_n {
                // W_RF,p = (W_RF,p^H)^H
                w[(s * sb_n + sb, s)] = self.weight(pilot, s, sb).conj();
            }
        }
        w
    }

    /// Dense stacked `W_RF^H`, `(S·N_p) × (S·S̄)`.
    pub fn stacked_hermitian(&self) -> DMatrix<Complex64> {
        let (s_n, sb_n) = (self.num_subarrays, self.elems_per_subarray);
        let mut w = DMatrix::zeros(self.observation_len(), self.channel_len());
        for p in 0..self.n_pilots {
            for s in 0..s_n {
                for sb in 0..sb_n {
                    w[(p * s_n + s, s * sb_n + sb)] = self.weight(p, s, sb);
                }
            }
        }
        w
    }

    /// Real expansion of `W_RF^H`, `(2·S·N_p) × (2·S·S̄)`.
    pub fn real_matrix(&self) -> &DMatrix<f64> {
        &self.real
    }

    /// Pseudoinverse of [`MeasurementOperator::real_matrix`].
    pub fn pseudo_inverse(&self) -> &DMatrix<f64> {
        &self.pinv
    }

    /// The real expansion decouples into one `2N_p × 2S̄` block per subarray;
    /// the pseudoinverse is assembled from the blocks' pseudoinverses.
    fn blockwise_pseudo_inverse(&self) -> Result<DMatrix<f64>> {
        let (s_n, sb_n, np) = (self.num_subarrays, self.elems_per_subarray, self.n_pilots);
        let (obs, ch) = (self.observation_len(), self.channel_len());
        let mut pinv = DMatrix::zeros(2 * ch, 2 * obs);
        for s in 0..s_n {
            let block = DMatrix::from_fn(np, sb_n, |p, sb| self.weight(p, s, sb));
            let PseudoInverse { matrix, rank, condition } = linalg::pseudo_inverse(&real_expand(&block));
            if rank < 2 * np.min(sb_n) {
                return Err(Error::RankDeficient { rank, rows: 2 * np.min(sb_n), condition });
            }
            // Local rows: [Re s̄ | Im s̄]; local cols: [Re p | Im p].
            for (li, gi) in (0..sb_n).map(|sb| s * sb_n + sb).chain((0..sb_n).map(|sb| ch + s * sb_n + sb)).enumerate() {
                for (lj, gj) in (0..np).map(|p| p * s_n + s).chain((0..np).map(|p| obs + p * s_n + s)).enumerate() {
                    pinv[(gi, gj)] = matrix[(li, lj)];
                }
            }
        }
        Ok(pinv)
    }

    /// `W_RF^H v` for one complex channel vector, without noise.
    pub fn apply(&self, h: &[Complex64]) -> Result<Vec<Complex64>> {
        if h.len() != self.channel_len() {
            return Err(Error::Shape(format!("channel length {} != S·S̄ = {}", h.len(), self.channel_len())));
        }
        let (s_n, sb_n) = (self.num_subarrays, self.elems_per_subarray);
        let mut y = Vec::with_capacity(self.observation_len());
        for p in 0..self.n_pilots {
            for s in 0..s_n {
                let w = &self.weights[(p * s_n + s) * sb_n..(p * s_n + s + 1) * sb_n];
                y.push(w.iter().zip(&h[s * sb_n..(s + 1) * sb_n]).map(|(a, b)| a * b).sum());
            }
        }
        Ok(y)
    }

    /// `ỹ = W_RF^H h̃ + [W_RF,p^H ñ_p]_p` for one complex channel vector.
    pub fn observe_vector<R: Rng + ?Sized>(&self, h: &[Complex64], noise_var: f64, rng: &mut R) -> Result<Vec<Complex64>> {
        let mut y = self.apply(h)?;
        if noise_var > 0.0 {
            let std = (noise_var / 2.0).sqrt();
            let (s_n, sb_n) = (self.num_subarrays, self.elems_per_subarray);
            let mut noise = vec![Complex64::new(0.0, 0.0); self.channel_len()];
            for p in 0..self.n_pilots {
                for n in noise.iter_mut() {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    *n = Complex64::new(std * re, std * im);
                }
                for s in 0..s_n {
                    let w = &self.weights[(p * s_n + s) * sb_n..(p * s_n + s + 1) * sb_n];
                    let combined: Complex64 = w.iter().zip(&noise[s * sb_n..(s + 1) * sb_n]).map(|(a, b)| a * b).sum();
                    y[p * s_n + s] += combined;
                }
            }
        }
        Ok(y)
    }

    /// Observes every subcarrier row of `h` through the same combiner.
    pub fn observe<R: Rng + ?Sized>(&self, h: &ChannelRealization, snr_db: f64, rng: &mut R) -> Result<Observation> {
        let noise_var = noise_variance(snr_db);
        let rows = h
            .rows
            .iter()
            .map(|row| Ok(complex_to_real(&self.observe_vector(row, noise_var, rng)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Observation { rows, snr_db, noise_var })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn small_cfg(s: usize, sb: usize) -> ArrayConfig {
        ArrayConfig { num_subarrays: s, elems_per_subarray: sb, sa_spacing_m: 5.6e-2, ae_spacing_m: 5e-4, carrier_hz: 3e11 }
    }

    fn random_channel(n: usize, seed: u64) -> Vec<Complex64> {
        let mut r = stream(seed, Purpose::Misc, 0, 0);
        (0..n).map(|_| Complex64::new(r.sample(StandardNormal), r.sample(StandardNormal))).collect()
    }

    #[test]
    fn combiner_structure() {
        let cfg = small_cfg(4, 16);
        let op = MeasurementOperator::generate(&cfg, 6, 11).unwrap();
        let amp = 0.25;
        for p in 0..6 {
            let w = op.combiner(p);
            assert_eq!(w.shape(), (64, 4));
            for col in 0..4 {
                let nz: Vec<usize> = (0..64).filter(|&r| w[(r, col)].norm() != 0.0).collect();
                assert_eq!(nz, (col * 16..(col + 1) * 16).collect::<Vec<_>>());
                assert!(nz.iter().all(|&r| (w[(r, col)] - amp).norm() == 0.0 || (w[(r, col)] + amp).norm() == 0.0));
                let norm: f64 = (0..64).map(|r| w[(r, col)].norm_sqr()).sum();
                assert!((norm - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn baseline_dimensions() {
        let cfg = small_cfg(4, 256);
        let op = MeasurementOperator::generate(&cfg, 128, 1).unwrap();
        assert_eq!(op.stacked_hermitian().shape(), (512, 1024));
        assert_eq!(op.real_matrix().shape(), (1024, 2048));
        assert_eq!(op.pseudo_inverse().shape(), (2048, 1024));
    }

    #[test]
    fn blockwise_pinv_matches_dense() {
        let cfg = small_cfg(4, 16);
        let op = MeasurementOperator::generate(&cfg, 3, 5).unwrap();
        let dense = linalg::pseudo_inverse(op.real_matrix()).matrix;
        let diff = (&dense - op.pseudo_inverse()).abs().max();
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn complex_real_conversions() {
        assert_eq!(complex_to_real(&[Complex64::new(1.0, 2.0)]), vec![1.0, 2.0]);
        let v = random_channel(7, 3);
        assert_eq!(real_to_complex(&complex_to_real(&v)).unwrap(), v);
        assert!(matches!(real_to_complex(&[1.0, 2.0, 3.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn real_expansion_matches_complex_product() {
        let mut r = stream(8, Purpose::Misc, 0, 0);
        let w = DMatrix::from_fn(4, 4, |_, _| Complex64::new(r.sample(StandardNormal), r.sample(StandardNormal)));
        let v = random_channel(4, 9);
        let wv: Vec<Complex64> = (0..4).map(|i| (0..4).map(|j| w[(i, j)] * v[j]).sum()).collect();
        let lhs = real_expand(&w) * nalgebra::DVector::from_vec(complex_to_real(&v));
        let rhs = complex_to_real(&wv);
        for (a, b) in lhs.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn real_expansion_keeps_block_sparsity() {
        let op = MeasurementOperator::generate(&small_cfg(4, 4), 2, 3).unwrap();
        let c = op.stacked_hermitian();
        let (m, n) = c.shape();
        let r = op.real_matrix();
        for i in 0..2 * m {
            for j in 0..2 * n {
                if c[(i % m, j % n)].norm() == 0.0 {
                    assert_eq!(r[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn noiseless_observation_is_linear_map() {
        let op = MeasurementOperator::generate(&small_cfg(4, 16), 5, 2).unwrap();
        let h = random_channel(64, 4);
        let real = ChannelRealization { freqs_hz: vec![3e11], rows: vec![h.clone()], gammas: vec![1.0] };
        let obs = op.observe(&real, f64::INFINITY, &mut stream(0, Purpose::Misc, 0, 0)).unwrap();
        assert_eq!(obs.noise_var, 0.0);
        let expected = op.real_matrix() * nalgebra::DVector::from_vec(complex_to_real(&h));
        for (a, b) in obs.rows[0].iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn linearity() {
        let op = MeasurementOperator::generate(&small_cfg(1, 16), 8, 2).unwrap();
        let (h1, h2) = (random_channel(16, 1), random_channel(16, 2));
        let (a, b) = (Complex64::new(0.5, -1.5), Complex64::new(2.0, 0.25));
        let mix: Vec<Complex64> = h1.iter().zip(&h2).map(|(x, y)| a * x + b * y).collect();
        let lhs = op.apply(&mix).unwrap();
        let (y1, y2) = (op.apply(&h1).unwrap(), op.apply(&h2).unwrap());
        for i in 0..lhs.len() {
            assert!((lhs[i] - (a * y1[i] + b * y2[i])).norm() < 1e-12);
        }
    }

    #[test]
    fn snr_convention() {
        assert_eq!(noise_variance(0.0), 1.0);
        assert!((noise_variance(20.0) - 0.01).abs() < 1e-18);
        assert_eq!(noise_variance(f64::INFINITY), 0.0);
    }

    #[test]
    fn observation_is_deterministic() {
        let op = MeasurementOperator::generate(&small_cfg(1, 16), 8, 2).unwrap();
        let h = ChannelRealization { freqs_hz: vec![3e11], rows: vec![random_channel(16, 5)], gammas: vec![1.0] };
        let a = op.observe(&h, 10.0, &mut stream(3, Purpose::Misc, 0, 0)).unwrap();
        let b = op.observe(&h, 10.0, &mut stream(3, Purpose::Misc, 0, 0)).unwrap();
        assert_eq!(a, b);
        let c = op.observe(&h, 10.0, &mut stream(4, Purpose::Misc, 0, 0)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn combined_noise_is_white_with_unit_variance_at_zero_db() {
        // Each combiner column has unit norm and rows use disjoint blocks or
        // fresh pilots, so the combined noise keeps variance σ² per entry.
        let op = MeasurementOperator::generate(&small_cfg(1, 16), 8, 2).unwrap();
        let zero = vec![Complex64::new(0.0, 0.0); 16];
        let mut rng = stream(6, Purpose::Misc, 0, 0);
        let (mut re2, mut im2, mut n) = (0.0, 0.0, 0usize);
        for _ in 0..20_000 {
            for z in op.observe_vector(&zero, 1.0, &mut rng).unwrap() {
                re2 += z.re * z.re;
                im2 += z.im * z.im;
                n += 1;
            }
        }
        assert!((re2 / n as f64 - 0.5).abs() < 0.01);
        assert!((im2 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn wideband_uses_same_operator_per_row() {
        let op = MeasurementOperator::generate(&small_cfg(1, 16), 4, 2).unwrap();
        let rows = vec![random_channel(16, 1), random_channel(16, 2), random_channel(16, 3)];
        let h = ChannelRealization { freqs_hz: vec![1.0, 2.0, 3.0], rows: rows.clone(), gammas: vec![1.0; 3] };
        let obs = op.observe(&h, f64::INFINITY, &mut stream(0, Purpose::Misc, 0, 0)).unwrap();
        assert_eq!(obs.rows.len(), 3);
        for (row, y) in rows.iter().zip(&obs.rows) {
            assert_eq!(complex_to_real(&op.apply(row).unwrap()), *y);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let op = MeasurementOperator::generate(&small_cfg(1, 16), 4, 2).unwrap();
        assert!(matches!(op.apply(&[Complex64::new(0.0, 0.0); 15]), Err(Error::Shape(_))));
    }
}
