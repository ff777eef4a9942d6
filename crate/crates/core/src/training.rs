//! Online-generation training: NMSE loss, AdamW, reduce-on-plateau.
//!
//! Every epoch draws fresh training and validation samples. Batch `i` of
//! epoch `e` comes from its own RNG stream, so the sample sequence does not
//! depend on how many producer threads generate it.

use std::io::Write;
use std::path::{Path, PathBuf};

use crossbeam_channel::bounded;
use serde::{Deserialize, Serialize};

use crate::brt::{BrtHyperParams, BrtModel};
use crate::config::ScenarioConfig;
use crate::data::{Batch, SampleGenerator};
use crate::estimators::to_db;
use crate::rng::{self, Purpose};
use crate::tensor::{self, Gradients, Graph, ParamStore};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub samples_per_epoch: usize,
    pub val_samples: usize,
    pub batch_size: usize,
    /// Base step size `α`.
    pub lr: f64,
    /// Decoupled decay rate `λ`: each step shrinks parameters by
    /// `η·λ·θ`, independent of `α` (`η` is the scheduler multiplier).
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    /// Relative improvement required to reset the plateau counter.
    pub plateau_threshold: f64,
    pub seed: u64,
    /// Producer threads generating batches.
    pub workers: usize,
}

impl TrainConfig {
    /// Full-scale settings: 500 000 / 50 000 samples, batch 64,
    /// `α = 5e−5`, decay factor 0.01 relative to `α`.
    pub fn full_scale() -> Self {
        Self {
            epochs: 100,
            samples_per_epoch: 500_000,
            val_samples: 50_000,
            batch_size: 64,
            lr: 5e-5,
            weight_decay: 5e-5 * 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            plateau_factor: 0.5,
            plateau_patience: 5,
            plateau_threshold: 1e-4,
            seed: 0,
            workers: 1,
        }
    }

    /// Desk-scale settings for the toy scenario.
    pub fn toy() -> Self {
        Self {
            epochs: 30,
            samples_per_epoch: 200,
            val_samples: 200,
            batch_size: 8,
            lr: 3e-3,
            weight_decay: 3e-3 * 0.01,
            ..Self::full_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.samples_per_epoch == 0 || self.val_samples == 0 || self.batch_size == 0 || self.workers == 0 {
            return Err(Error::Config("epochs, sample counts, batch_size and workers must be >= 1".into()));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("lr and weight_decay must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam betas must lie in [0, 1) and eps > 0".into()));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) || self.plateau_patience == 0 {
            return Err(Error::Config("plateau factor must lie in (0, 1) and patience >= 1".into()));
        }
        Ok(())
    }

    fn batch_sizes(&self, total: usize) -> Vec<usize> {
        let mut sizes = vec![self.batch_size; total / self.batch_size];
        if total % self.batch_size != 0 {
            sizes.push(total % self.batch_size);
        }
        sizes
    }
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    lr: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(store: &ParamStore<f64>, lr: f64, weight_decay: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || store.iter().map(|(_, _, m)| vec![0.0; m.len()]).collect();
        Self { lr, weight_decay, beta1, beta2, eps, step: 0, m: zeros(), v: zeros() }
    }

    pub fn from_config(store: &ParamStore<f64>, cfg: &TrainConfig) -> Self {
        Self::new(store, cfg.lr, cfg.weight_decay, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// `θ ← θ − η·(α·m̂/(√v̂ + ε) + λ·θ)` with scheduler multiplier `η`.
    pub fn step(&mut self, store: &mut ParamStore<f64>, grads: &Gradients<f64>, multiplier: f64) {
        self.step += 1;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t));
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let g = grads.get(id).as_slice();
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            for (i, theta) in store.get_mut(id).as_mut_slice().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let adaptive = self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                *theta -= multiplier * (adaptive + self.weight_decay * *theta);
            }
        }
    }
}

/// Multiplies the learning rate by `factor` after `patience` consecutive
/// epochs without a relative improvement of at least `threshold`.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    factor: f64,
    patience: usize,
    threshold: f64,
    best: f64,
    bad_epochs: usize,
    multiplier: f64,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize, threshold: f64) -> Self {
        Self { factor, patience, threshold, best: f64::INFINITY, bad_epochs: 0, multiplier: 1.0 }
    }

    pub fn multiplier(&self) -> f64 {
        self.multiplier
    }

    /// Records a validation metric (lower is better). Returns whether the
    /// rate was reduced.
    pub fn observe(&mut self, metric: f64) -> bool {
        if metric < self.best * (1.0 - self.threshold) {
            self.best = metric;
            self.bad_epochs = 0;
            return false;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.multiplier *= self.factor;
            self.bad_epochs = 0;
            return true;
        }
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_nmse_db: f64,
    pub val_nmse_db: f64,
    /// Linear-initializer NMSE on the same validation samples.
    pub val_ls_nmse_db: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// `epoch,train_nmse_db,val_nmse_db,lr` with fixed formatting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_nmse_db,val_nmse_db,lr\n");
        for r in &self.epochs {
            s.push_str(&format!("{},{:.6},{:.6},{:.6e}\n", r.epoch, r.train_nmse_db, r.val_nmse_db, r.lr));
        }
        s
    }
}

/// Where [`train`] writes its outputs. All optional.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    pub checkpoint: Option<PathBuf>,
    pub log_csv: Option<PathBuf>,
}

/// Mean per-sample NMSE of `batch.h0` refined by `model`.
pub fn batch_loss(model: &BrtModel<f64>, batch: &Batch, grads: Option<&mut Gradients<f64>>) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.input(&batch.h0);
    let trace = model.refine_graph(&mut g, x, batch.samples)?;
    let t = g.input(&batch.truth);
    let loss = g.nmse_loss(*trace.last().expect("non-empty"), t, batch.samples)?;
    if let Some(grads) = grads {
        g.backward(loss, Some(grads))?;
    }
    Ok(g.value(loss).get(0, 0))
}

/// Linear-initializer NMSE of a batch (mean over samples).
pub fn linear_loss(batch: &Batch) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let (e, t) = (g.input(&batch.h0), g.input(&batch.truth));
    let l = g.nmse_loss(e, t, batch.samples)?;
    Ok(g.value(l).get(0, 0))
}

/// Generates `sizes.len()` batches on `workers` threads and hands them to
/// `consume` in index order. Batch `i` uses stream `(seed, purpose, major, i)`.
pub fn produce_batches<F>(gen: &SampleGenerator, seed: u64, purpose: Purpose, major: u64, sizes: &[usize], workers: usize, mut consume: F) -> Result<()>
where
    F: FnMut(usize, Batch) -> Result<()>,
{
    let workers = workers.max(1).min(sizes.len().max(1));
    if workers == 1 {
        for (i, &n) in sizes.iter().enumerate() {
            let b = gen.batch(n, &mut rng::stream(seed, purpose, major, i as u64))?;
            consume(i, b)?;
        }
        return Ok(());
    }
    std::thread::scope(|scope| {
        let mut receivers = Vec::with_capacity(workers);
        for w in 0..workers {
            let (tx, rx) = bounded::<Result<Batch>>(2);
            receivers.push(rx);
            scope.spawn(move || {
                for i in (w..sizes.len()).step_by(workers) {
                    let b = gen.batch(sizes[i], &mut rng::stream(seed, purpose, major, i as u64));
                    let failed = b.is_err();
                    if tx.send(b).is_err() || failed {
                        return;
                    }
                }
            });
        }
        for i in 0..sizes.len() {
            let b = receivers[i % workers]
                .recv()
                .map_err(|_| Error::Config("batch producer stopped early".into()))??;
            // Dropping the receivers on error unblocks and stops producers.
            consume(i, b)?;
        }
        Ok(())
    })
}

/// Trains `model` in place on fresh samples from `gen`.
///
/// A non-finite loss or gradient aborts with [`Error::NonFiniteLoss`]; the
/// model is restored to the state at the start of the failing epoch and,
/// if a checkpoint path is set, that state is saved.
pub fn train(model: &mut BrtModel<f64>, gen: &SampleGenerator, cfg: &TrainConfig, outputs: &TrainOutputs) -> Result<TrainReport> {
    cfg.validate()?;
    if model.hyper().tokens != gen.scenario().subcarriers || model.hyper().token_width != gen.scenario().token_width() {
        return Err(Error::Config(format!(
            "model expects {} tokens of width {}, scenario gives {} of width {}",
            model.hyper().tokens,
            model.hyper().token_width,
            gen.scenario().subcarriers,
            gen.scenario().token_width()
        )));
    }
    let mut opt = AdamW::from_config(model.params(), cfg);
    let mut sched = PlateauScheduler::new(cfg.plateau_factor, cfg.plateau_patience, cfg.plateau_threshold);
    let mut report = TrainReport { epochs: Vec::with_capacity(cfg.epochs) };
    let mut log = match &outputs.log_csv {
        Some(p) => {
            let mut f = std::fs::File::create(p)?;
            f.write_all(b"epoch,train_nmse_db,val_nmse_db,lr\n")?;
            Some(f)
        }
        None => None,
    };
    let train_sizes = cfg.batch_sizes(cfg.samples_per_epoch);
    for epoch in 0..cfg.epochs {
        let last_good = model.params().clone();
        let lr_now = cfg.lr * sched.multiplier();
        let mut train_sum = 0.0;
        let mut grads = Gradients::zeros_like(model.params());
        let result = produce_batches(gen, cfg.seed, Purpose::TrainBatch, epoch as u64, &train_sizes, cfg.workers, |step, batch| {
            grads.zero();
            let loss = batch_loss(model, &batch, Some(&mut grads))?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::NonFiniteLoss { epoch, step, detail: format!("loss = {loss}, gradients finite = {}", grads.all_finite()) });
            }
            opt.step(model.params_mut(), &grads, sched.multiplier());
            train_sum += loss * batch.samples as f64;
            Ok(())
        });
        if let Err(e) = result {
            if matches!(e, Error::NonFiniteLoss { .. }) {
                *model = BrtModel::from_params(model.hyper().clone(), last_good)?;
                if let Some(p) = &outputs.checkpoint {
                    save_model(p, model, gen.scenario(), Some(cfg))?;
                }
            }
            return Err(e);
        }
        let (val, val_ls) = validate(model, gen, cfg, epoch as u64)?;
        if !val.is_finite() {
            *model = BrtModel::from_params(model.hyper().clone(), last_good)?;
            if let Some(p) = &outputs.checkpoint {
                save_model(p, model, gen.scenario(), Some(cfg))?;
            }
            return Err(Error::NonFiniteLoss { epoch, step: train_sizes.len(), detail: format!("validation NMSE = {val}") });
        }
        let rec = EpochRecord {
            epoch: epoch + 1,
            train_nmse_db: to_db(train_sum / cfg.samples_per_epoch as f64),
            val_nmse_db: to_db(val),
            val_ls_nmse_db: to_db(val_ls),
            lr: lr_now,
        };
        if let Some(f) = &mut log {
            writeln!(f, "{},{:.6},{:.6},{:.6e}", rec.epoch, rec.train_nmse_db, rec.val_nmse_db, rec.lr)?;
        }
        report.epochs.push(rec);
        sched.observe(val);
    }
    if let Some(p) = &outputs.checkpoint {
        save_model(p, model, gen.scenario(), Some(cfg))?;
    }
    Ok(report)
}

/// Mean validation NMSE of the model and of the linear initializer over the
/// validation samples of `epoch`.
pub fn validate(model: &BrtModel<f64>, gen: &SampleGenerator, cfg: &TrainConfig, epoch: u64) -> Result<(f64, f64)> {
    let (mut sum, mut sum_ls) = (0.0, 0.0);
    produce_batches(gen, cfg.seed, Purpose::ValBatch, epoch, &cfg.batch_sizes(cfg.val_samples), cfg.workers, |_, b| {
        sum += batch_loss(model, &b, None)? * b.samples as f64;
        sum_ls += linear_loss(&b)? * b.samples as f64;
        Ok(())
    })?;
    Ok((sum / cfg.val_samples as f64, sum_ls / cfg.val_samples as f64))
}

/// Continues training a model on a new scenario. Positional embeddings and
/// learned initial states are resized to the new token count first (rows
/// kept, new rows zero). State tokens follow the token count when they
/// matched it before.
pub fn fine_tune(model: &BrtModel<f64>, gen: &SampleGenerator, cfg: &TrainConfig, outputs: &TrainOutputs) -> Result<(BrtModel<f64>, TrainReport)> {
    let h = model.hyper();
    let tokens = gen.scenario().subcarriers;
    let state_tokens = if h.state_tokens == h.tokens { tokens } else { h.state_tokens };
    if h.token_width != gen.scenario().token_width() {
        return Err(Error::Config(format!("token width {} differs from scenario width {}", h.token_width, gen.scenario().token_width())));
    }
    let mut tuned = model.resized(tokens, state_tokens)?;
    let report = train(&mut tuned, gen, cfg, outputs)?;
    Ok((tuned, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: String,
    pub hyper: BrtHyperParams,
    pub scenario: ScenarioConfig,
    pub train: Option<TrainConfig>,
}

pub fn save_model(path: &Path, model: &BrtModel<f64>, scenario: &ScenarioConfig, train: Option<&TrainConfig>) -> Result<()> {
    let header = CheckpointHeader {
        format: "hfbrt-brt".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        hyper: model.hyper().clone(),
        scenario: scenario.clone(),
        train: train.cloned(),
    };
    tensor::save_checkpoint(path, &serde_json::to_value(&header)?, model.params())
}

pub fn load_model(path: &Path) -> Result<(BrtModel<f64>, CheckpointHeader)> {
    let (header, store) = tensor::load_checkpoint(path)?;
    let header: CheckpointHeader =
        serde_json::from_value(header).map_err(|e| Error::Format { path: path.into(), detail: format!("checkpoint header: {e}") })?;
    let model = BrtModel::from_params(header.hyper.clone(), store)?;
    Ok((model, header))
}

/// Scenario, model and training settings of the desk-scale preset.
pub fn toy_preset() -> (ScenarioConfig, BrtHyperParams, TrainConfig) {
    let sc = ScenarioConfig::toy();
    let hyper = BrtHyperParams::toy(sc.token_width(), sc.subcarriers);
    (sc, hyper, TrainConfig::toy())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::batch_nmse;
    use crate::tensor::Mat;

    #[test]
    fn plateau_reduces_once_per_trigger() {
        let mut s = PlateauScheduler::new(0.5, 3, 1e-4);
        assert!(!s.observe(1.0));
        assert!(!s.observe(1.0));
        assert!(!s.observe(0.99995));
        assert!(s.observe(1.0));
        assert_eq!(s.multiplier(), 0.5);
        assert!(!s.observe(1.0));
        assert!(!s.observe(1.0));
        assert!(s.observe(1.0));
        assert_eq!(s.multiplier(), 0.25);
        assert!(!s.observe(0.5));
        assert_eq!(s.multiplier(), 0.25);
    }

    fn single_param(value: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Mat::filled(1, 2, value)).unwrap();
        s
    }

    #[test]
    fn decoupled_weight_decay() {
        let mut store = single_param(2.0);
        let grads = Gradients::zeros_like(&store);
        let mut opt = AdamW::new(&store, 0.0, 0.1, 0.9, 0.999, 1e-8);
        opt.step(&mut store, &grads, 1.0);
        assert_eq!(store.by_name("w").unwrap().as_slice(), &[1.8, 1.8]);
        opt.step(&mut store, &grads, 1.0);
        assert!((store.by_name("w").unwrap().get(0, 0) - 1.62).abs() < 1e-15);
        let mut store = single_param(2.0);
        let mut opt = AdamW::new(&store, 0.0, 0.0, 0.9, 0.999, 1e-8);
        opt.step(&mut store, &grads, 1.0);
        assert_eq!(store.by_name("w").unwrap().as_slice(), &[2.0, 2.0]);
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        let mut store = single_param(0.0);
        let mut grads = Gradients::zeros_like(&store);
        let id = store.id("w").unwrap();
        let mut g = Graph::new();
        let x = g.param(&store, id);
        let s = g.sum_all(x).unwrap();
        let s = g.scale(s, 3.0).unwrap();
        g.backward(s, Some(&mut grads)).unwrap();
        drop(g);
        let mut opt = AdamW::new(&store, 1e-3, 0.0, 0.9, 0.999, 1e-8);
        let mut prev = 0.0;
        for _ in 0..500 {
            opt.step(&mut store, &grads, 1.0);
            let now = store.get(id).get(0, 0);
            let step = (prev - now).abs();
            assert!((step - 1e-3).abs() < 1e-9, "{step}");
            prev = now;
        }
    }

    #[test]
    fn loss_matches_metric() {
        let (sc, hyper, _) = toy_preset();
        let gen = SampleGenerator::new(&sc).unwrap();
        let model = BrtModel::new(hyper, 1).unwrap();
        let b = gen.batch(6, &mut rng::stream(1, Purpose::Misc, 0, 0)).unwrap();
        let est = model.estimate(&b.h0, 6).unwrap();
        let rows = |m: &Mat<f64>| (0..6).map(|s| m.row(s).to_vec()).collect::<Vec<_>>();
        let expected = batch_nmse(&rows(&b.truth), &rows(&est)).unwrap();
        assert!((batch_loss(&model, &b, None).unwrap() - expected).abs() < 1e-12);
        let ls = batch_nmse(&rows(&b.truth), &rows(&b.h0)).unwrap();
        assert!((linear_loss(&b).unwrap() - ls).abs() < 1e-12);
    }

    #[test]
    fn batches_independent_of_worker_count() {
        let gen = SampleGenerator::new(&ScenarioConfig::toy()).unwrap();
        let sizes = [3, 3, 3, 2, 3];
        let collect = |workers| {
            let mut out = Vec::new();
            produce_batches(&gen, 9, Purpose::TrainBatch, 2, &sizes, workers, |i, b| {
                out.push((i, b));
                Ok(())
            })
            .unwrap();
            out
        };
        let one = collect(1);
        assert_eq!(one, collect(3));
        assert_eq!(one.iter().map(|(i, _)| *i).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn short_run_is_reproducible_and_checkpoints() {
        let (sc, hyper, mut cfg) = toy_preset();
        cfg.epochs = 2;
        cfg.samples_per_epoch = 16;
        cfg.val_samples = 8;
        let gen = SampleGenerator::new(&sc).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = TrainOutputs { checkpoint: Some(dir.path().join("m.ckpt")), log_csv: Some(dir.path().join("log.csv")) };
        let mut a = BrtModel::new(hyper.clone(), 3).unwrap();
        let ra = train(&mut a, &gen, &cfg, &out).unwrap();
        let log_a = std::fs::read(dir.path().join("log.csv")).unwrap();
        let mut b = BrtModel::new(hyper, 3).unwrap();
        cfg.workers = 2;
        let rb = train(&mut b, &gen, &cfg, &TrainOutputs::default()).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(String::from_utf8(log_a).unwrap(), ra.to_csv());
        let (loaded, header) = load_model(&dir.path().join("m.ckpt")).unwrap();
        assert_eq!(loaded.params(), a.params());
        assert_eq!(header.scenario, sc);
    }

    #[test]
    fn fine_tune_resizes_tokens() {
        let (sc, hyper, mut cfg) = toy_preset();
        cfg.epochs = 1;
        cfg.samples_per_epoch = 4;
        cfg.val_samples = 4;
        cfg.batch_size = 2;
        let model = BrtModel::new(hyper, 3).unwrap();
        let wide = ScenarioConfig { subcarriers: 4, ..sc };
        let gen = SampleGenerator::new(&wide).unwrap();
        let (tuned, report) = fine_tune(&model, &gen, &cfg, &TrainOutputs::default()).unwrap();
        assert_eq!(tuned.hyper().tokens, 4);
        assert_eq!(tuned.hyper().state_tokens, 4);
        assert_eq!(tuned.params().by_name("pos").unwrap().shape(), (4, 32));
        assert_eq!(report.epochs.len(), 1);
        let c0_old = model.params().by_name("c0.0").unwrap();
        let c0_new = model.resized(4, 4).unwrap().params().by_name("c0.0").unwrap().clone();
        assert_eq!(c0_new.row(0), c0_old.row(0));
        assert!(c0_new.row(3).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn non_finite_loss_aborts_with_last_good_state() {
        let (sc, hyper, mut cfg) = toy_preset();
        cfg.epochs = 1;
        cfg.samples_per_epoch = 4;
        cfg.val_samples = 4;
        let gen = SampleGenerator::new(&sc).unwrap();
        let mut model = BrtModel::new(hyper, 3).unwrap();
        let id = model.params().id("beta.0").unwrap();
        model.params_mut().replace(id, Mat::filled(1, 1, f64::NAN));
        let before = model.params().clone();
        let dir = tempfile::tempdir().unwrap();
        let out = TrainOutputs { checkpoint: Some(dir.path().join("m.ckpt")), log_csv: None };
        let err = train(&mut model, &gen, &cfg, &out).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { epoch: 0, step: 0, .. }), "{err}");
        assert!(dir.path().join("m.ckpt").exists());
        assert_eq!(model.params().len(), before.len());
    }
}
