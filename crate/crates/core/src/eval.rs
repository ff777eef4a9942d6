//! Benchmarks: NMSE sweeps, generalization, near-field PMF, wideband
//! surfaces, hyperparameter sweeps and inference timing.
//!
//! Every sweep point draws its samples from its own RNG stream, so results
//! do not depend on the worker count. All CSV output uses fixed formatting.

use std::path::Path;
use std::time::Instant;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::brt::{BrtHyperParams, BrtModel};
use crate::channel::{sample_paths, ChannelModel};
use crate::config::{PathCount, ScenarioConfig};
use crate::data::{Batch, SampleGenerator};
use crate::estimators::to_db;
use crate::rng::{self, Purpose};
use crate::tensor::Mat;
use crate::training::{self, TrainConfig, TrainOutputs};
use crate::{Error, Result};

/// dB value reported for an exactly zero NMSE.
pub const NMSE_FLOOR_DB: f64 = -300.0;

/// Samples generated per batch inside a sweep point.
const EVAL_CHUNK: usize = 250;

pub trait Estimator: Sync {
    fn label(&self) -> String;
    /// Estimates for every sample of `batch`, laid out like `batch.truth`.
    fn estimate(&self, batch: &Batch) -> Result<Mat<f64>>;
}

/// The linear initializer `ĥ₀ = W y`.
pub struct LsEstimator;

impl Estimator for LsEstimator {
    fn label(&self) -> String {
        "ls".into()
    }

    fn estimate(&self, batch: &Batch) -> Result<Mat<f64>> {
        Ok(batch.h0.clone())
    }
}

/// Returns the true channel.
pub struct OracleEstimator;

impl Estimator for OracleEstimator {
    fn label(&self) -> String {
        "oracle".into()
    }

    fn estimate(&self, batch: &Batch) -> Result<Mat<f64>> {
        Ok(batch.truth.clone())
    }
}

pub struct BrtEstimator<'a> {
    pub model: &'a BrtModel<f64>,
    pub label: String,
}

impl<'a> BrtEstimator<'a> {
    pub fn new(model: &'a BrtModel<f64>) -> Self {
        Self { model, label: "brt".into() }
    }
}

impl Estimator for BrtEstimator<'_> {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn estimate(&self, batch: &Batch) -> Result<Mat<f64>> {
        self.model.estimate(&batch.h0, batch.samples)
    }
}

/// `‖h − ĥ‖² / ‖h‖²` of each sample, all subcarriers together.
pub fn per_sample_nmse(batch: &Batch, estimate: &Mat<f64>) -> Result<Vec<f64>> {
    if estimate.shape() != batch.truth.shape() {
        return Err(Error::Shape(format!("estimate {:?} vs truth {:?}", estimate.shape(), batch.truth.shape())));
    }
    let rows = batch.subcarriers;
    (0..batch.samples)
        .map(|s| {
            let (mut err, mut norm) = (0.0, 0.0);
            for r in s * rows..(s + 1) * rows {
                for (h, e) in batch.truth.row(r).iter().zip(estimate.row(r)) {
                    err += (h - e) * (h - e);
                    norm += h * h;
                }
            }
            if norm == 0.0 {
                return Err(Error::DegenerateChannel);
            }
            Ok(err / norm)
        })
        .collect()
}

/// Mean of per-sample linear NMSE values with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmseStats {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl NmseStats {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        Self { mean, stderr: (var / n as f64).sqrt(), samples: n }
    }

    pub fn nmse_db(&self) -> f64 {
        if self.mean > 0.0 {
            to_db(self.mean)
        } else {
            NMSE_FLOOR_DB
        }
    }

    /// Delta-method standard error in dB.
    pub fn stderr_db(&self) -> f64 {
        if self.mean > 0.0 {
            10.0 / std::f64::consts::LN_10 * self.stderr / self.mean
        } else {
            0.0
        }
    }
}

/// Runs `f` over `items` on up to `workers` threads, keeping item order.
pub fn par_map<T, R, F>(items: &[T], workers: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> Result<R> + Sync,
{
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let parts: Vec<Result<Vec<(usize, R)>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let f = &f;
                scope.spawn(move || (w..items.len()).step_by(workers).map(|i| f(i, &items[i]).map(|r| (i, r))).collect())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    let mut out: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    for part in parts {
        for (i, r) in part? {
            out[i] = Some(r);
        }
    }
    Ok(out.into_iter().map(|r| r.expect("every index visited")).collect())
}

/// Per-sample NMSE of each estimator over `n` samples at a fixed SNR. All
/// estimators see the same samples, drawn from streams `(seed, point, ·)`.
pub fn evaluate_point(estimators: &[&dyn Estimator], gen: &SampleGenerator, snr_db: Option<f64>, n: usize, seed: u64, point: u64) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![Vec::with_capacity(n); estimators.len()];
    let mut done = 0;
    let mut chunk = 0;
    while done < n {
        let m = EVAL_CHUNK.min(n - done);
        let mut r = rng::stream(seed, Purpose::EvalBatch, point, chunk);
        let batch = match snr_db {
            Some(snr) => gen.batch_at(m, snr, &mut r)?,
            None => gen.batch(m, &mut r)?,
        };
        for (e, acc) in estimators.iter().zip(out.iter_mut()) {
            acc.extend(per_sample_nmse(&batch, &e.estimate(&batch)?)?);
        }
        done += m;
        chunk += 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub snr_db: f64,
    pub stats: NmseStats,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,snr_db,nmse_db,stderr_db,samples\n");
        for r in &self.rows {
            s.push_str(&format!("{},{:.3},{:.6},{:.6},{}\n", r.label, r.snr_db, r.stats.nmse_db(), r.stats.stderr_db(), r.stats.samples));
        }
        s
    }

    pub fn curve(&self, label: &str) -> Vec<(f64, f64)> {
        self.rows.iter().filter(|r| r.label == label).map(|r| (r.snr_db, r.stats.nmse_db())).collect()
    }
}

/// NMSE versus SNR. Grid point `i` uses streams `(seed, EvalBatch, i, ·)`.
pub fn nmse_sweep(estimators: &[&dyn Estimator], gen: &SampleGenerator, snr_grid: &[f64], n: usize, seed: u64, workers: usize) -> Result<SweepTable> {
    if n == 0 {
        return Err(Error::Config("sweep needs at least one sample per point".into()));
    }
    let points = par_map(snr_grid, workers, |i, &snr| evaluate_point(estimators, gen, Some(snr), n, seed, i as u64))?;
    let mut rows = Vec::new();
    for (e_idx, e) in estimators.iter().enumerate() {
        for (&snr, per) in snr_grid.iter().zip(&points) {
            rows.push(SweepRow { label: e.label(), snr_db: snr, stats: NmseStats::from_samples(&per[e_idx]) });
        }
    }
    Ok(SweepTable { rows })
}

/// A reference curve, e.g. digitized results of another method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselinePoint {
    pub snr_db: f64,
    pub nmse_db: f64,
    pub label: String,
}

/// Reads a CSV with header `snr_db,nmse_db,label`.
pub fn read_baseline_csv(path: &Path) -> Result<Vec<BaselinePoint>> {
    let fail = |detail: String| Error::Format { path: path.into(), detail };
    let mut reader = csv::Reader::from_path(path).map_err(|e| fail(e.to_string()))?;
    let headers = reader.headers().map_err(|e| fail(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["snr_db", "nmse_db", "label"] {
        return Err(fail(format!("expected header snr_db,nmse_db,label, found {}", headers.iter().collect::<Vec<_>>().join(","))));
    }
    reader.deserialize().map(|r| r.map_err(|e| fail(e.to_string()))).collect()
}

/// Distribution of the number of near-field paths.
#[derive(Debug, Clone, PartialEq)]
pub struct NearFieldPmf {
    /// `probs[k] = P(k near-field paths)`, `k = 0..=L_max`.
    pub probs: Vec<BigRational>,
}

impl NearFieldPmf {
    pub fn to_f64(&self) -> Vec<f64> {
        self.probs.iter().map(|p| p.to_f64().unwrap_or(f64::NAN)).collect()
    }

    pub fn total(&self) -> BigRational {
        self.probs.iter().fold(BigRational::zero(), |acc, p| acc + p)
    }
}

fn exact(x: f64) -> Result<BigRational> {
    BigRational::from_float(x).ok_or_else(|| Error::Domain(format!("{x} is not finite")))
}

fn binomial(n: usize, k: usize) -> BigInt {
    (0..k).fold(BigInt::one(), |acc, i| acc * BigInt::from(n - i) / BigInt::from(i + 1))
}

/// Closed form: the LoS path is near-field iff `r₁ < Z`; each NLoS path is
/// independently near-field with `p = clamp((Z − r_min)/(r_max − r_min), 0, 1)`.
/// A random path count mixes the per-`L` distributions uniformly.
pub fn near_field_pmf(scenario: &ScenarioConfig) -> Result<NearFieldPmf> {
    let [rmin, rmax] = scenario.scatterer_distance_m;
    if !(rmin < rmax) {
        return Err(Error::Config(format!("scatterer distance range [{rmin}, {rmax}] is empty")));
    }
    let z = scenario.rayleigh_distance();
    let p = ((exact(z)? - exact(rmin)?) / (exact(rmax)? - exact(rmin)?)).clamp(BigRational::zero(), BigRational::one());
    let q = BigRational::one() - &p;
    let los = usize::from(scenario.los_distance_m < z);
    let (lo, hi) = scenario.paths.bounds();
    if lo == 0 {
        return Err(Error::Config("path count must be >= 1".into()));
    }
    let weight = BigRational::new(BigInt::one(), BigInt::from(hi - lo + 1));
    let mut probs = vec![BigRational::zero(); hi + 1];
    for l in lo..=hi {
        let n = l - 1;
        for k in 0..=n {
            let term = BigRational::from_integer(binomial(n, k)) * pow(&p, k) * pow(&q, n - k);
            probs[k + los] += &weight * term;
        }
    }
    Ok(NearFieldPmf { probs })
}

fn pow(x: &BigRational, e: usize) -> BigRational {
    (0..e).fold(BigRational::one(), |acc, _| acc * x)
}

/// Empirical PMF over `n` sampled path sets (length `L_max + 1`).
pub fn monte_carlo_pmf(scenario: &ScenarioConfig, n: usize, seed: u64, workers: usize) -> Result<Vec<f64>> {
    let channel = ChannelModel::from_scenario(scenario)?;
    let z = channel.rayleigh_distance();
    let (_, hi) = scenario.paths.bounds();
    const CHUNK: usize = 50_000;
    let chunks: Vec<usize> = (0..n.div_ceil(CHUNK)).map(|c| CHUNK.min(n - c * CHUNK)).collect();
    let counts = par_map(&chunks, workers, |c, &m| {
        let mut r = rng::stream(seed, Purpose::MonteCarlo, 0, c as u64);
        let mut counts = vec![0u64; hi + 1];
        for _ in 0..m {
            counts[sample_paths(scenario, channel.material(), &mut r)?.near_field_count(z)] += 1;
        }
        Ok(counts)
    })?;
    let mut total = vec![0u64; hi + 1];
    for c in counts {
        for (t, v) in total.iter_mut().zip(c) {
            *t += v;
        }
    }
    Ok(total.into_iter().map(|c| c as f64 / n as f64).collect())
}

/// `near_field_paths,probability,exact,monte_carlo`; `monte_carlo` is empty
/// when no empirical estimate is given.
pub fn pmf_csv(pmf: &NearFieldPmf, monte_carlo: Option<&[f64]>) -> String {
    let mut s = String::from("near_field_paths,probability,exact,monte_carlo\n");
    for (k, p) in pmf.probs.iter().enumerate() {
        let mc = monte_carlo.and_then(|m| m.get(k)).map(|v| format!("{v:.6}")).unwrap_or_default();
        s.push_str(&format!("{k},{:.12},{p},{mc}\n", p.to_f64().unwrap_or(f64::NAN)));
    }
    s
}

/// Which scenario parameter a generalization sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantAxis {
    Distance,
    Paths,
    Bandwidth,
}

/// Standard variants of `base` along `axis`: scatterer ranges, `L = 2..7`,
/// or `B ∈ {5, 10, 15, 20, 25}` GHz.
pub fn standard_variants(base: &ScenarioConfig, axis: VariantAxis) -> Vec<(String, ScenarioConfig)> {
    match axis {
        VariantAxis::Distance => [[5.0, 15.0], [10.0, 25.0], [15.0, 30.0], [20.0, 35.0], [25.0, 40.0]]
            .into_iter()
            .map(|r| (format!("r{}-{}", r[0], r[1]), ScenarioConfig { scatterer_distance_m: r, ..base.clone() }))
            .collect(),
        VariantAxis::Paths => (2..=7)
            .map(|l| (format!("L{l}"), ScenarioConfig { paths: PathCount::Fixed(l), ..base.clone() }))
            .collect(),
        VariantAxis::Bandwidth => [5e9, 10e9, 15e9, 20e9, 25e9]
            .into_iter()
            .map(|b| (format!("B{}GHz", b / 1e9), ScenarioConfig { bandwidth_hz: b, ..base.clone() }))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationRow {
    pub variant: String,
    pub stats: NmseStats,
    /// Variant NMSE minus reference NMSE, in dB.
    pub delta_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationTable {
    pub snr_db: Option<f64>,
    pub reference: NmseStats,
    pub rows: Vec<GeneralizationRow>,
}

impl GeneralizationTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,nmse_db,stderr_db,delta_nmse_db,samples\n");
        for r in &self.rows {
            s.push_str(&format!("{},{:.6},{:.6},{:.6},{}\n", r.variant, r.stats.nmse_db(), r.stats.stderr_db(), r.delta_db, r.stats.samples));
        }
        s
    }
}

/// `ΔNMSE` in dB of `variant` relative to `reference`.
pub fn delta_nmse_db(variant: &NmseStats, reference: &NmseStats) -> f64 {
    variant.nmse_db() - reference.nmse_db()
}

/// Evaluates one fixed estimator on the reference scenario and on every
/// variant. Index 0 is the reference, variant `i` is stream point `i + 1`.
/// `snr_db = None` draws SNR from each scenario's range.
pub fn generalization_sweep(
    estimator: &dyn Estimator,
    reference: &ScenarioConfig,
    variants: &[(String, ScenarioConfig)],
    snr_db: Option<f64>,
    n: usize,
    seed: u64,
    workers: usize,
) -> Result<GeneralizationTable> {
    let mut scenarios = vec![reference];
    scenarios.extend(variants.iter().map(|(_, s)| s));
    let stats = par_map(&scenarios, workers, |i, sc| {
        let gen = SampleGenerator::new(sc)?;
        let per = evaluate_point(&[estimator], &gen, snr_db, n, seed, i as u64)?;
        Ok(NmseStats::from_samples(&per[0]))
    })?;
    let reference = stats[0];
    let rows = variants
        .iter()
        .zip(&stats[1..])
        .map(|((name, _), s)| GeneralizationRow { variant: name.clone(), stats: *s, delta_db: delta_nmse_db(s, &reference) })
        .collect();
    Ok(GeneralizationTable { snr_db, reference, rows })
}

/// Per-subcarrier NMSE over an SNR grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidebandSurface {
    pub snr_grid: Vec<f64>,
    /// `nmse_db[k][j]`: subcarrier `k` at `snr_grid[j]`.
    pub nmse_db: Vec<Vec<f64>>,
}

impl WidebandSurface {
    /// `(min, max, standard deviation)` across subcarriers of the dB values at
    /// each SNR.
    pub fn spread(&self) -> Vec<(f64, f64, f64)> {
        (0..self.snr_grid.len())
            .map(|j| {
                let col: Vec<f64> = self.nmse_db.iter().map(|r| r[j]).collect();
                let mean = col.iter().sum::<f64>() / col.len() as f64;
                let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
                (col.iter().copied().fold(f64::INFINITY, f64::min), col.iter().copied().fold(f64::NEG_INFINITY, f64::max), sd)
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("subcarrier,snr_db,nmse_db\n");
        for (k, row) in self.nmse_db.iter().enumerate() {
            for (snr, v) in self.snr_grid.iter().zip(row) {
                s.push_str(&format!("{k},{snr:.3},{v:.6}\n"));
            }
        }
        s
    }

    pub fn spread_csv(&self) -> String {
        let mut s = String::from("snr_db,min_nmse_db,max_nmse_db,std_nmse_db\n");
        for (snr, (lo, hi, sd)) in self.snr_grid.iter().zip(self.spread()) {
            s.push_str(&format!("{snr:.3},{lo:.6},{hi:.6},{sd:.6}\n"));
        }
        s
    }
}

pub fn wideband_surface(estimator: &dyn Estimator, gen: &SampleGenerator, snr_grid: &[f64], n: usize, seed: u64, workers: usize) -> Result<WidebandSurface> {
    let k = gen.scenario().subcarriers;
    let columns = par_map(snr_grid, workers, |i, &snr| {
        let mut sums = vec![0.0; k];
        let (mut done, mut chunk) = (0, 0);
        while done < n {
            let m = EVAL_CHUNK.min(n - done);
            let batch = gen.batch_at(m, snr, &mut rng::stream(seed, Purpose::EvalBatch, i as u64, chunk))?;
            let est = estimator.estimate(&batch)?;
            for r in 0..batch.truth.rows() {
                let (t, e) = (batch.truth.row(r), est.row(r));
                let norm: f64 = t.iter().map(|v| v * v).sum();
                let err: f64 = t.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
                sums[r % k] += err / norm;
            }
            done += m;
            chunk += 1;
        }
        Ok(sums.into_iter().map(|s| NmseStats { mean: s / n as f64, stderr: 0.0, samples: n }.nmse_db()).collect::<Vec<_>>())
    })?;
    let nmse_db = (0..k).map(|kk| columns.iter().map(|c| c[kk]).collect()).collect();
    Ok(WidebandSurface { snr_grid: snr_grid.to_vec(), nmse_db })
}

/// Mean NMSE of every refinement iterate `ĥ_0 … ĥ_{N_t}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub stats: Vec<NmseStats>,
    /// Fraction of samples with `NMSE(ĥ_{N_t}) ≤ NMSE(ĥ_0)`.
    pub improved_fraction: f64,
}

impl IterationTrace {
    pub fn means_db(&self) -> Vec<f64> {
        self.stats.iter().map(NmseStats::nmse_db).collect()
    }

    pub fn is_non_increasing(&self) -> bool {
        self.stats.windows(2).all(|w| w[1].mean <= w[0].mean)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,nmse_db,stderr_db\n");
        for (t, st) in self.stats.iter().enumerate() {
            s.push_str(&format!("{t},{:.6},{:.6}\n", st.nmse_db(), st.stderr_db()));
        }
        s
    }
}

pub fn iteration_trace(model: &BrtModel<f64>, gen: &SampleGenerator, snr_db: Option<f64>, n: usize, seed: u64) -> Result<IterationTrace> {
    let iters = model.hyper().iters;
    let mut per: Vec<Vec<f64>> = vec![Vec::with_capacity(n); iters + 1];
    let (mut done, mut chunk) = (0, 0);
    while done < n {
        let m = EVAL_CHUNK.min(n - done);
        let mut r = rng::stream(seed, Purpose::EvalBatch, 0, chunk);
        let batch = match snr_db {
            Some(snr) => gen.batch_at(m, snr, &mut r)?,
            None => gen.batch(m, &mut r)?,
        };
        let trace = model.refine(&batch.h0, m)?;
        for (t, est) in trace.estimates.iter().enumerate() {
            per[t].extend(per_sample_nmse(&batch, est)?);
        }
        done += m;
        chunk += 1;
    }
    let improved = per[iters].iter().zip(&per[0]).filter(|(last, first)| last <= first).count();
    Ok(IterationTrace { stats: per.iter().map(|v| NmseStats::from_samples(v)).collect(), improved_fraction: improved as f64 / n as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HyperAxis {
    Iters,
    Heads,
    Depth,
}

impl HyperAxis {
    fn apply(self, base: &BrtHyperParams, value: usize) -> BrtHyperParams {
        let mut h = base.clone();
        match self {
            HyperAxis::Iters => h.iters = value,
            HyperAxis::Heads => h.heads = value,
            HyperAxis::Depth => h.depth = value,
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperRow {
    pub value: usize,
    pub params: usize,
    pub stats: NmseStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperSweep {
    pub axis: HyperAxis,
    pub snr_db: f64,
    pub rows: Vec<HyperRow>,
    /// Per-iteration trace of the model with the most iterations (iters axis only).
    pub trace: Option<IterationTrace>,
}

impl HyperSweep {
    pub fn to_csv(&self) -> String {
        let axis = serde_json::to_value(self.axis).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        let mut s = format!("{axis},params,nmse_db,stderr_db,samples\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{:.6},{:.6},{}\n", r.value, r.params, r.stats.nmse_db(), r.stats.stderr_db(), r.stats.samples));
        }
        s
    }
}

/// Trains one model per value of `axis` and evaluates each at `snr_db`.
/// Model `i` is initialized from `seed + i`; all share the training and
/// evaluation streams.
pub fn hyper_sweep(
    axis: HyperAxis,
    values: &[usize],
    scenario: &ScenarioConfig,
    base: &BrtHyperParams,
    train_cfg: &TrainConfig,
    snr_db: f64,
    n: usize,
    seed: u64,
) -> Result<HyperSweep> {
    let gen = SampleGenerator::new(scenario)?;
    let mut rows = Vec::with_capacity(values.len());
    let mut best: Option<(usize, BrtModel<f64>)> = None;
    for (i, &v) in values.iter().enumerate() {
        let hyper = axis.apply(base, v);
        let mut model = BrtModel::new(hyper, seed.wrapping_add(i as u64))?;
        training::train(&mut model, &gen, train_cfg, &TrainOutputs::default())?;
        let per = evaluate_point(&[&BrtEstimator::new(&model)], &gen, Some(snr_db), n, seed, 0)?;
        rows.push(HyperRow { value: v, params: model.num_params(), stats: NmseStats::from_samples(&per[0]) });
        if axis == HyperAxis::Iters && best.as_ref().is_none_or(|(b, _)| v > *b) {
            best = Some((v, model));
        }
    }
    let trace = match best {
        Some((_, model)) => Some(iteration_trace(&model, &gen, Some(snr_db), n, seed)?),
        None => None,
    };
    Ok(HyperSweep { axis, snr_db, rows, trace })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub subcarriers: usize,
    pub batch: usize,
    pub per_batch_ms: f64,
    pub per_sample_ms: f64,
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("subcarriers,batch,per_batch_ms,per_sample_ms\n");
    for r in rows {
        s.push_str(&format!("{},{},{:.6},{:.6}\n", r.subcarriers, r.batch, r.per_batch_ms, r.per_sample_ms));
    }
    s
}

/// Wall-clock forward time of the `f32` model. For each subcarrier count the
/// model is resized to that many tokens; `warmup` untimed passes precede
/// `reps` timed ones, and the mean is reported.
pub fn bench_inference(model: &BrtModel<f64>, batch_sizes: &[usize], subcarrier_counts: &[usize], warmup: usize, reps: usize, seed: u64) -> Result<Vec<BenchRow>> {
    use rand_distr::{Distribution, StandardNormal};
    if reps == 0 {
        return Err(Error::Config("bench needs reps >= 1".into()));
    }
    let mut rows = Vec::new();
    for &k in subcarrier_counts {
        let h = model.hyper();
        let state = if h.state_tokens == h.tokens { k } else { h.state_tokens };
        let fast = model.resized(k, state)?.to_f32();
        for (j, &b) in batch_sizes.iter().enumerate() {
            let mut r = rng::stream(seed, Purpose::Misc, k as u64, j as u64);
            let x = Mat::<f32>::from_fn(b * k, h.token_width, |_, _| StandardNormal.sample(&mut r));
            for _ in 0..warmup {
                fast.estimate(&x, b)?;
            }
            let start = Instant::now();
            for _ in 0..reps {
                std::hint::black_box(fast.estimate(std::hint::black_box(&x), b)?);
            }
            let per_batch_ms = start.elapsed().as_secs_f64() * 1e3 / reps as f64;
            rows.push(BenchRow { subcarriers: k, batch: b, per_batch_ms, per_sample_ms: per_batch_ms / b as f64 });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ratio(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn baseline_pmf_is_binomial() {
        let pmf = near_field_pmf(&ScenarioConfig::baseline()).unwrap();
        let expected = [ratio(1, 81), ratio(8, 81), ratio(24, 81), ratio(32, 81), ratio(16, 81), ratio(0, 1)];
        assert_eq!(pmf.probs, expected);
        assert_eq!(pmf.total(), BigRational::one());
    }

    #[test]
    fn pmf_point_masses() {
        let far = ScenarioConfig { scatterer_distance_m: [20.0, 30.0], ..ScenarioConfig::baseline() };
        assert_eq!(near_field_pmf(&far).unwrap().to_f64(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let near = ScenarioConfig { scatterer_distance_m: [5.0, 15.0], los_distance_m: 10.0, ..ScenarioConfig::baseline() };
        assert_eq!(near_field_pmf(&near).unwrap().to_f64(), vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn pmf_mixture_over_path_counts() {
        let sc = ScenarioConfig { paths: PathCount::Uniform([2, 3]), ..ScenarioConfig::baseline() };
        let pmf = near_field_pmf(&sc).unwrap();
        // L=2: (1/3, 2/3); L=3: (1/9, 4/9, 4/9)
        assert_eq!(pmf.probs, vec![ratio(2, 9), ratio(5, 9), ratio(2, 9), ratio(0, 1)]);
    }

    #[test]
    fn stats_floor_and_delta_method() {
        let zero = NmseStats::from_samples(&[0.0, 0.0]);
        assert_eq!(zero.nmse_db(), NMSE_FLOOR_DB);
        let s = NmseStats::from_samples(&[1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.stderr - 1.0).abs() < 1e-15);
        assert!((s.stderr_db() - 10.0 / std::f64::consts::LN_10 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_hits_floor_and_ls_improves_with_snr() {
        let gen = SampleGenerator::new(&ScenarioConfig::toy()).unwrap();
        let grid = [0.0, 10.0, 20.0, 30.0];
        let t = nmse_sweep(&[&OracleEstimator, &LsEstimator], &gen, &grid, 300, 4, 2).unwrap();
        assert!(t.curve("oracle").iter().all(|&(_, v)| v == NMSE_FLOOR_DB));
        let ls = t.curve("ls");
        assert!(ls.windows(2).all(|w| w[1].1 <= w[0].1), "{ls:?}");
        let again = nmse_sweep(&[&OracleEstimator, &LsEstimator], &gen, &grid, 300, 4, 1).unwrap();
        assert_eq!(t.to_csv(), again.to_csv());
    }

    #[test]
    fn delta_is_antisymmetric() {
        let a = NmseStats { mean: 0.01, stderr: 0.0, samples: 1 };
        let b = NmseStats { mean: 0.3, stderr: 0.0, samples: 1 };
        assert_eq!(delta_nmse_db(&a, &b), -delta_nmse_db(&b, &a));
    }

    #[test]
    fn generalization_reference_variant_has_zero_delta() {
        let sc = ScenarioConfig::toy();
        let variants = vec![("same".to_string(), sc.clone()), ("L4".to_string(), ScenarioConfig { paths: PathCount::Fixed(4), ..sc.clone() })];
        let t = generalization_sweep(&LsEstimator, &sc, &variants, Some(10.0), 100, 1, 2).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert!(t.rows.iter().all(|r| r.delta_db.is_finite()));
        assert_eq!(t.rows[0].stats.samples, 100);
    }

    #[test]
    fn wideband_surface_shape() {
        let sc = ScenarioConfig { subcarriers: 4, ..ScenarioConfig::toy() };
        let gen = SampleGenerator::new(&sc).unwrap();
        let s = wideband_surface(&LsEstimator, &gen, &[0.0, 20.0], 50, 3, 2).unwrap();
        assert_eq!(s.nmse_db.len(), 4);
        assert!(s.nmse_db.iter().all(|r| r.len() == 2 && r[1] < r[0]));
        assert_eq!(s.spread().len(), 2);
        assert_eq!(s.to_csv().lines().count(), 9);
    }

    #[test]
    fn bench_schema() {
        let sc = ScenarioConfig::toy();
        let model = BrtModel::new(BrtHyperParams::toy(sc.token_width(), 1), 0).unwrap();
        let rows = bench_inference(&model, &[1, 2], &[1, 2], 1, 2, 0).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(bench_csv(&rows).starts_with("subcarriers,batch,per_batch_ms,per_sample_ms\n"));
        assert!(rows.iter().all(|r| r.per_batch_ms > 0.0));
    }

    #[test]
    fn baseline_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.csv");
        std::fs::write(&p, "snr_db,nmse_db,label\n0,-5.5,omp\n10,-12,omp\n").unwrap();
        let pts = read_baseline_csv(&p).unwrap();
        assert_eq!(pts[1], BaselinePoint { snr_db: 10.0, nmse_db: -12.0, label: "omp".into() });
        std::fs::write(&p, "snr,nmse\n0,1\n").unwrap();
        assert!(read_baseline_csv(&p).is_err());
    }
}
