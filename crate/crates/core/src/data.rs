//! Sample generation and the on-disk dataset format.
//!
//! A sample is one channel realization, its noisy observation, and the
//! linear estimate `ĥ₀`. Batches stack samples along rows with `K` rows
//! (subcarriers) per sample.
//!
//! Dataset files hold `(y, h)` pairs:
//!
//! ```text
//! magic "HFBRTDS1"                                       8 bytes
//! subcarriers K, y length, h length, record count        4 × u64 LE
//! scenario hash (SHA-256 of canonical JSON)              32 bytes
//! records: snr_db (f64 LE), then K·y_len + K·h_len complex
//!          values as (re, im) f32 LE pairs, y before h, row-major
//! ```
//!
//! A JSON sidecar (`<file>.json`) records the scenario, the combiner seed,
//! the SNR policy and the hash.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_paths, ChannelModel};
use crate::config::{CombinerMode, ScenarioConfig};
use crate::estimators::{build_initializer, LinearInitializer};
use crate::measurement::{complex_to_real, real_to_complex, MeasurementOperator};
use crate::tensor::Mat;
use crate::{Error, Result};

/// A batch in stacked-real form; every matrix has `samples·K` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub samples: usize,
    pub subcarriers: usize,
    pub h0: Mat<f64>,
    pub truth: Mat<f64>,
    pub y: Mat<f64>,
    pub snr_db: Vec<f64>,
    pub num_paths: Vec<usize>,
    pub near_field_paths: Vec<usize>,
}

impl Batch {
    /// Rows `s·K..(s+1)·K` of `m` flattened.
    pub fn sample_rows(m: &Mat<f64>, subcarriers: usize, s: usize) -> Vec<f64> {
        m.as_slice()[s * subcarriers * m.cols()..(s + 1) * subcarriers * m.cols()].to_vec()
    }
}

/// Draws training and evaluation samples for one scenario.
#[derive(Debug, Clone)]
pub struct SampleGenerator {
    scenario: ScenarioConfig,
    channel: ChannelModel,
    op: MeasurementOperator,
    init: LinearInitializer,
}

impl SampleGenerator {
    pub fn new(scenario: &ScenarioConfig) -> Result<Self> {
        let channel = ChannelModel::from_scenario(scenario)?;
        let op = MeasurementOperator::generate(&scenario.array(), scenario.n_pilots, scenario.combiner_seed)?;
        let init = build_initializer(&op);
        Ok(Self { scenario: scenario.clone(), channel, op, init })
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.scenario
    }

    pub fn channel(&self) -> &ChannelModel {
        &self.channel
    }

    pub fn operator(&self) -> &MeasurementOperator {
        &self.op
    }

    pub fn initializer(&self) -> &LinearInitializer {
        &self.init
    }

    /// `n` fresh samples with SNR drawn uniformly from the scenario range.
    pub fn batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch> {
        self.batch_with(n, rng, |r| {
            let [lo, hi] = self.scenario.snr_db;
            if lo < hi {
                r.random_range(lo..=hi)
            } else {
                lo
            }
        })
    }

    /// `n` fresh samples at a fixed SNR.
    pub fn batch_at<R: Rng + ?Sized>(&self, n: usize, snr_db: f64, rng: &mut R) -> Result<Batch> {
        self.batch_with(n, rng, |_| snr_db)
    }

    fn batch_with<R: Rng + ?Sized>(&self, n: usize, rng: &mut R, mut snr: impl FnMut(&mut R) -> f64) -> Result<Batch> {
        let k = self.scenario.subcarriers;
        let (width, obs_width) = (self.scenario.token_width(), self.scenario.observation_width());
        let mut h0 = Vec::with_capacity(n * k * width);
        let mut truth = Vec::with_capacity(n * k * width);
        let mut ys = Vec::with_capacity(n * k * obs_width);
        let (mut snrs, mut num_paths, mut near) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        let z = self.channel.rayleigh_distance();
        for _ in 0..n {
            let paths = sample_paths(&self.scenario, self.channel.material(), rng)?;
            let real = self.channel.realize(&paths, k, self.scenario.bandwidth_hz)?;
            let snr_db = snr(rng);
            let per_sample;
            let (op, init) = match self.scenario.combiner {
                CombinerMode::Fixed => (&self.op, &self.init),
                CombinerMode::PerSample => {
                    let op = MeasurementOperator::generate(&self.scenario.array(), self.scenario.n_pilots, rng.next_u64())?;
                    let init = build_initializer(&op);
                    per_sample = (op, init);
                    (&per_sample.0, &per_sample.1)
                }
            };
            let obs = op.observe(&real, snr_db, rng)?;
            for (row, y) in real.rows.iter().zip(&obs.rows) {
                truth.extend(complex_to_real(row));
                h0.extend(init.apply(y)?);
                ys.extend_from_slice(y);
            }
            snrs.push(snr_db);
            num_paths.push(paths.len());
            near.push(paths.near_field_count(z));
        }
        Ok(Batch {
            samples: n,
            subcarriers: k,
            h0: Mat::from_vec(n * k, width, h0)?,
            truth: Mat::from_vec(n * k, width, truth)?,
            y: Mat::from_vec(n * k, obs_width, ys)?,
            snr_db: snrs,
            num_paths,
            near_field_paths: near,
        })
    }
}

const DS_MAGIC: &[u8; 8] = b"HFBRTDS1";

/// One stored pair in complex form, `K` rows each.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub snr_db: f64,
    pub y: Vec<Vec<Complex64>>,
    pub h: Vec<Vec<Complex64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub scenario: ScenarioConfig,
    pub combiner_seed: u64,
    pub snr_policy: String,
    pub scenario_hash: String,
    pub records: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub subcarriers: usize,
    pub y_len: usize,
    pub h_len: usize,
    pub records: usize,
    pub scenario_hash: [u8; 32],
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes `batch` (converted back to complex) plus its sidecar.
pub fn write_dataset(path: &Path, gen: &SampleGenerator, batch: &Batch, seed: u64) -> Result<()> {
    let sc = gen.scenario();
    let k = batch.subcarriers;
    let header = DatasetHeader {
        subcarriers: k,
        y_len: sc.observation_width() / 2,
        h_len: sc.token_width() / 2,
        records: batch.samples,
        scenario_hash: sc.hash_bytes(),
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(DS_MAGIC)?;
    for v in [header.subcarriers, header.y_len, header.h_len, header.records] {
        out.write_all(&(v as u64).to_le_bytes())?;
    }
    out.write_all(&header.scenario_hash)?;
    for s in 0..batch.samples {
        out.write_all(&batch.snr_db[s].to_le_bytes())?;
        for m in [&batch.y, &batch.truth] {
            for r in 0..k {
                for z in real_to_complex(m.row(s * k + r))? {
                    out.write_all(&(z.re as f32).to_le_bytes())?;
                    out.write_all(&(z.im as f32).to_le_bytes())?;
                }
            }
        }
    }
    out.flush()?;
    let side = DatasetSidecar {
        scenario: sc.clone(),
        combiner_seed: sc.combiner_seed,
        snr_policy: format!("uniform dB over [{}, {}]", sc.snr_db[0], sc.snr_db[1]),
        scenario_hash: sc.hash_hex(),
        records: batch.samples as u64,
        seed,
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

/// Reads a dataset file. The sidecar is optional for reading.
pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<Record>)> {
    let fmt = |d: &str| Error::Format { path: path.into(), detail: d.into() };
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| fmt("truncated header"))?;
    if &magic != DS_MAGIC {
        return Err(fmt("not a dataset file (bad magic)"));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(|_| fmt("truncated header"))?;
        *d = u64::from_le_bytes(b) as usize;
    }
    let mut hash = [0u8; 32];
    r.read_exact(&mut hash).map_err(|_| fmt("truncated header"))?;
    let header = DatasetHeader { subcarriers: dims[0], y_len: dims[1], h_len: dims[2], records: dims[3], scenario_hash: hash };
    let read_rows = |r: &mut dyn Read, len: usize| -> Result<Vec<Vec<Complex64>>> {
        let mut buf = vec![0u8; len * 8];
        (0..header.subcarriers)
            .map(|_| {
                r.read_exact(&mut buf).map_err(|_| fmt("truncated record"))?;
                Ok(buf
                    .chunks_exact(8)
                    .map(|c| {
                        let re = f32::from_le_bytes(c[..4].try_into().expect("4 bytes"));
                        let im = f32::from_le_bytes(c[4..].try_into().expect("4 bytes"));
                        Complex64::new(re as f64, im as f64)
                    })
                    .collect())
            })
            .collect()
    };
    let mut records = Vec::with_capacity(header.records.min(1 << 20));
    for _ in 0..header.records {
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(|_| fmt("truncated record"))?;
        let y = read_rows(&mut r, header.y_len)?;
        let h = read_rows(&mut r, header.h_len)?;
        records.push(Record { snr_db: f64::from_le_bytes(b), y, h });
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(fmt("trailing bytes after last record"));
    }
    Ok((header, records))
}

pub fn read_sidecar(path: &Path) -> Result<DatasetSidecar> {
    let text = std::fs::read_to_string(sidecar_path(path))?;
    Ok(serde_json::from_str(&text)?)
}
