//! Mini-batch training with Adam, validation-based model selection and early
//! stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::Config;
use crate::datamodel::StudentHistory;
use crate::error::{Error, Result};
use crate::kernel::tensor::Parameters;
use crate::kernel::Dropout;
use crate::model::row::row_loss_and_grad;
use crate::model::{HitsktParams, Model, ModelShape};

use super::adam::Adam;
use super::checkpoint::Checkpoint;
use super::evaluate::evaluate;
use super::split::{split_samples, students_without, Sample, Split};

/// Samples per sequential gradient chunk. Chunks are summed in index order,
/// so the batch gradient does not depend on how many threads ran them.
const CHUNK: usize = 4;

/// Name of the environment variable capping worker threads.
pub const THREADS_VAR: &str = "HITSKT_THREADS";

/// A pool sized by `HITSKT_THREADS`, or rayon's default when unset.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_VAR) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::InvalidArgument(format!("{THREADS_VAR}={v} is not a positive integer")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-item loss over the epoch's batches.
    pub train_loss: f64,
    pub train_auc: Option<f64>,
    pub val_auc: Option<f64>,
    /// Seconds since training started.
    pub wall_time: f64,
}

impl EpochMetrics {
    /// One `key=value` record; `wall_time` is left out when `timed` is false.
    pub fn line(&self, timed: bool) -> String {
        let opt = |v: Option<f64>| v.map_or("NA".to_string(), |a| a.to_string());
        let mut s = format!(
            "epoch={} train_loss={} train_auc={} val_auc={}",
            self.epoch,
            self.train_loss,
            opt(self.train_auc),
            opt(self.val_auc)
        );
        if timed {
            s.push_str(&format!(" wall_time={:.3}", self.wall_time));
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    EpochBudget,
    Patience,
    TargetReached,
}

/// Windows of each split, built once.
#[derive(Clone, Debug)]
pub struct Datasets {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub students_without_val: usize,
    pub students_without_test: usize,
}

impl Datasets {
    pub fn new(histories: &[StudentHistory], shape: &ModelShape) -> Self {
        Datasets {
            train: split_samples(histories, shape.lengths, Split::Train),
            val: split_samples(histories, shape.lengths, Split::Val),
            test: split_samples(histories, shape.lengths, Split::Test),
            students_without_val: students_without(histories, Split::Val),
            students_without_test: students_without(histories, Split::Test),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    /// Parameters of the best validation epoch.
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub log: Vec<EpochMetrics>,
    pub stop: StopReason,
}

fn dropout_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    // splitmix64 finalizer over the three inputs
    let mut z = seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Loss, item count and summed gradient of one batch.
fn batch_gradient(model: &Model, data: &[Sample], batch: &[usize], epoch: usize, seed: u64) -> Result<(f64, usize, HitsktParams)> {
    let p = model.config.dropout;
    let parts: Vec<Result<(f64, usize, HitsktParams)>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = model.params.zeros_like();
            let (mut loss, mut items) = (0.0, 0);
            for &i in chunk {
                let s = &data[i];
                let mut drop = if p > 0.0 { Dropout::new(p, dropout_seed(seed, epoch, i)) } else { Dropout::off() };
                let (l, n, _) = row_loss_and_grad(model, &s.row, &s.targets, &mut drop, &mut g)?;
                loss += l;
                items += n;
            }
            Ok((loss, items, g))
        })
        .collect();
    let mut total = model.params.zeros_like();
    let (mut loss, mut items) = (0.0, 0);
    for part in parts {
        let (l, n, g) = part?;
        loss += l;
        items += n;
        total.accumulate(&g);
    }
    Ok((loss, items, total))
}

fn scale(g: &mut HitsktParams, by: f64) {
    g.visit_mut("", &mut |_, t| t.data_mut().iter_mut().for_each(|v| *v *= by));
}

/// Trains from a fresh initialization drawn from `config.train.seed`, on a
/// pool sized by `HITSKT_THREADS`. `on_epoch` sees every metrics record as
/// soon as it exists.
pub fn train(
    config: &Config,
    histories: &[StudentHistory],
    shape: ModelShape,
    data: &Datasets,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainRun> {
    config.validate()?;
    let pool = thread_pool()?;
    let t = &config.train;
    let mut rng = ChaCha8Rng::seed_from_u64(t.seed);
    let mut model = Model::new(config.model.clone(), shape, &mut rng)?;
    let mut opt = Adam::new(&model.params, t.learning_rate);
    let started = Instant::now();
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(Option<f64>, usize, Checkpoint)> = None;
    let mut stale = 0;
    let mut stop = StopReason::EpochBudget;
    for epoch in 1..=t.epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut items) = (0.0, 0usize);
        for (b, batch) in order.chunks(t.batch_size).enumerate() {
            let (l, n, mut g) = pool.install(|| batch_gradient(&model, &data.train, batch, epoch, t.seed))?;
            if !l.is_finite() || !g.all_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            if n == 0 {
                continue;
            }
            scale(&mut g, 1.0 / n as f64);
            opt.step(&mut model.params, &g);
            model.params.emb.zero_padding_rows();
            loss += l;
            items += n;
        }
        let train_eval = pool.install(|| evaluate(&model, histories, &data.train))?;
        let val_eval = pool.install(|| evaluate(&model, histories, &data.val))?;
        let m = EpochMetrics {
            epoch,
            train_loss: if items > 0 { loss / items as f64 } else { 0.0 },
            train_auc: train_eval.auc,
            val_auc: val_eval.auc,
            wall_time: started.elapsed().as_secs_f64(),
        };
        on_epoch(&m);
        log.push(m.clone());
        // without any validation AUC the latest epoch is kept
        let improved = match (&best, m.val_auc) {
            (None, _) => true,
            (Some((Some(b), _, _)), Some(v)) => v > *b,
            (Some((None, _, _)), _) => true,
            (Some((Some(_), _, _)), None) => false,
        };
        if improved {
            let ck = Checkpoint::new(config.clone(), shape, epoch as u64, rng.clone(), model.params.clone());
            best = Some((m.val_auc, epoch, ck));
            stale = 0;
        } else {
            stale += 1;
        }
        if let (Some(target), Some(a)) = (t.target_train_auc, m.train_auc) {
            if a >= target {
                stop = StopReason::TargetReached;
                break;
            }
        }
        if t.patience > 0 && stale >= t.patience {
            stop = StopReason::Patience;
            break;
        }
    }
    let (_, best_epoch, ck) = match best {
        Some(b) => b,
        None => (None, 0, Checkpoint::new(config.clone(), shape, 0, rng, model.params)),
    };
    Ok(TrainRun {
        best: ck,
        best_epoch,
        log,
        stop,
    })
}
