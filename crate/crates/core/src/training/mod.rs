//! Loss terms, network assembly and the three-stage training procedure.

mod config;
pub mod losses;
mod networks;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::optim::{AdamW, EarlyStopping, PlateauScheduler};
use crate::autodiff::{AutodiffError, ParamStore, Tape, Tensor, Var};
use crate::dataset::{mix, NormalizedBatch};
use crate::flow::{standard_normal, FlowError};
pub use config::{parse_kv, ConfigError, LossWeights, Stage, TrainConfig};
pub use networks::{
    completed_stage, store_normalization, stored_normalization, DecoderConfig, EncoderConfig,
    NetworkAssembly, NetworkConfig, NORM_KEY, N_PARAMS, STAGE_KEY,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error("stage prerequisite: {stage} needs a completed stage {needed} checkpoint (found stage {found})")]
    Prerequisite {
        stage: Stage,
        needed: u32,
        found: u32,
    },
    #[error("frozen weights changed during stage {0}")]
    FrozenMutated(Stage),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-term loss values; `total` is the weighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub rec: f64,
    pub lat: f64,
    pub nf: f64,
}

impl LossParts {
    fn add_scaled(&mut self, o: &LossParts, w: f64) {
        self.total += w * o.total;
        self.rec += w * o.rec;
        self.lat += w * o.lat;
        self.nf += w * o.nf;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train: LossParts,
    pub val: LossParts,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
    /// Epoch whose weights were kept (lowest validation loss).
    pub best_epoch: usize,
}

impl TrainLog {
    /// Loss columns. Wall time lives in a separate table so that the loss
    /// log is byte-identical across reruns.
    pub const CSV_HEADER: &'static str =
        "epoch,lr,loss_total,loss_rec,loss_lat,loss_nf,val_total,val_rec,val_lat,val_nf";
    pub const TIMING_HEADER: &'static str = "epoch,wall_seconds";

    pub fn write_csv(&self, out: impl Write) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER.split(','))?;
        for e in &self.epochs {
            let row = [
                e.lr,
                e.train.total,
                e.train.rec,
                e.train.lat,
                e.train.nf,
                e.val.total,
                e.val.rec,
                e.val.lat,
                e.val.nf,
            ];
            let mut rec = vec![e.epoch.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()
    }

    pub fn write_timing_csv(&self, out: impl Write) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::TIMING_HEADER.split(','))?;
        for e in &self.epochs {
            w.write_record([e.epoch.to_string(), e.wall_seconds.to_string()])?;
        }
        w.flush()
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Rows `idx` of a normalised batch as tensors `(x, sigma, theta)`.
pub fn gather(
    b: &NormalizedBatch,
    idx: &[usize],
) -> Result<(Tensor, Tensor, Tensor), AutodiffError> {
    let nb = b.n_bins;
    let mut x = Vec::with_capacity(idx.len() * nb);
    let mut s = Vec::with_capacity(idx.len() * nb);
    let mut t = Vec::with_capacity(idx.len() * N_PARAMS);
    for &i in idx {
        x.extend_from_slice(&b.x[i * nb..(i + 1) * nb]);
        s.extend_from_slice(&b.sigma[i * nb..(i + 1) * nb]);
        t.extend_from_slice(&b.theta[i * N_PARAMS..(i + 1) * N_PARAMS]);
    }
    Ok((
        Tensor::new(&[idx.len(), nb], x)?,
        Tensor::new(&[idx.len(), nb], s)?,
        Tensor::new(&[idx.len(), N_PARAMS], t)?,
    ))
}

/// Graph of the stage loss for one batch. Returns the total and the
/// unweighted parts.
pub fn batch_loss(
    tape: &mut Tape,
    nets: &NetworkAssembly,
    store: &ParamStore,
    cfg: &TrainConfig,
    (x, sigma, theta): (&Tensor, &Tensor, &Tensor),
    noise_seed: u64,
) -> Result<(Var, LossParts), TrainError> {
    if cfg.stage == Stage::Decoder {
        let t = tape.constant(theta.clone());
        let recon = nets.decode(tape, store, t)?;
        let rec = losses::gaussian_nll(tape, recon, x, sigma)?;
        let v = tape.value(rec).item();
        return Ok((
            rec,
            LossParts {
                total: v,
                rec: v,
                lat: 0.0,
                nf: 0.0,
            },
        ));
    }
    let w = cfg.effective_weights();
    let b = x.shape()[0];
    let xv = tape.constant(x.clone());
    let ctx = nets.encode(tape, store, xv)?;
    let flow = nets.flow.bind(tape, store)?;
    let tv = tape.constant(theta.clone());
    let lq = flow.log_prob(tape, tv, ctx)?;
    let nf = losses::flow_nll(tape, lq);
    let z = tape.constant(standard_normal(b, N_PARAMS, noise_seed));
    let (draws, _) = flow.sample(tape, z, ctx)?;
    let lat = losses::latent_mse(tape, draws, theta)?;
    let nf_w = tape.scale(nf, w.nf);
    let lat_w = tape.scale(lat, w.lat);
    let mut total = tape.add(nf_w, lat_w)?;
    let mut parts = LossParts {
        total: 0.0,
        rec: 0.0,
        lat: tape.value(lat).item(),
        nf: tape.value(nf).item(),
    };
    if w.rec > 0.0 {
        let recon = nets.decode(tape, store, draws)?;
        let rec = losses::gaussian_nll(tape, recon, x, sigma)?;
        parts.rec = tape.value(rec).item();
        let rec_w = tape.scale(rec, w.rec);
        total = tape.add(total, rec_w)?;
    }
    parts.total = tape.value(total).item();
    Ok((total, parts))
}

/// Stage loss over a whole batch set without gradients, in chunks.
pub fn evaluate(
    nets: &NetworkAssembly,
    store: &ParamStore,
    cfg: &TrainConfig,
    data: &NormalizedBatch,
    seed: u64,
) -> Result<LossParts, TrainError> {
    let mut acc = LossParts::default();
    let chunk = 256;
    let idx: Vec<usize> = (0..data.n).collect();
    for (k, rows) in idx.chunks(chunk).enumerate() {
        let (x, s, t) = gather(data, rows)?;
        let mut tape = Tape::new();
        let (_, parts) = batch_loss(
            &mut tape,
            nets,
            store,
            cfg,
            (&x, &s, &t),
            mix(seed, k as u64),
        )?;
        acc.add_scaled(&parts, rows.len() as f64 / data.n as f64);
    }
    Ok(acc)
}

fn check_data(nets: &NetworkAssembly, d: &NormalizedBatch, what: &str) -> Result<(), TrainError> {
    if d.n == 0 || d.n_bins != nets.config.n_bins {
        return Err(TrainError::Data(format!(
            "{what} set has {} rows of {} bins; network expects {} bins",
            d.n, d.n_bins, nets.config.n_bins
        )));
    }
    Ok(())
}

/// Prefix whose weights train in a stage; everything else is frozen.
fn trainable_prefixes(stage: Stage) -> &'static [&'static str] {
    match stage {
        Stage::Decoder => &["decoder."],
        Stage::Synthetic | Stage::Real => &["encoder.", "flow."],
    }
}

/// Train one stage in place. The weights of the epoch with the lowest
/// validation loss are kept. `on_epoch` sees every completed epoch.
pub fn run_stage(
    cfg: &TrainConfig,
    nets: &NetworkAssembly,
    store: &mut ParamStore,
    train: &NormalizedBatch,
    val: &NormalizedBatch,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainLog, TrainError> {
    cfg.validate()?;
    check_data(nets, train, "training")?;
    check_data(nets, val, "validation")?;
    let found = completed_stage(store);
    let needed = match cfg.stage {
        Stage::Decoder => 0,
        Stage::Synthetic if cfg.effective_weights().rec == 0.0 => 0,
        Stage::Synthetic => 1,
        Stage::Real => 2,
    };
    if found < needed {
        return Err(TrainError::Prerequisite {
            stage: cfg.stage,
            needed,
            found,
        });
    }
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for n in &names {
        let trainable = trainable_prefixes(cfg.stage)
            .iter()
            .any(|p| n.starts_with(p));
        store.set_frozen(n, !trainable);
    }
    store.reset_optimizer();
    let frozen_sum = |s: &ParamStore| -> u64 {
        s.iter()
            .filter(|(_, e)| e.frozen)
            .fold(0u64, |h, (n, _)| h.rotate_left(7) ^ s.checksum(n))
    };
    let frozen_before = frozen_sum(store);

    let opt = AdamW {
        weight_decay: cfg.weight_decay,
        ..AdamW::default()
    };
    let mut sched = PlateauScheduler::new(cfg.lr, cfg.lr_floor).with_patience(cfg.patience);
    sched.factor = cfg.plateau_factor;
    sched.threshold = cfg.improvement_threshold;
    let mut stopper = EarlyStopping::new(cfg.early_stop_window, cfg.improvement_threshold);
    let mut log = TrainLog::default();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut order: Vec<usize> = (0..train.n).collect();
    let val_seed = mix(cfg.seed, u64::MAX);
    let start = Instant::now();
    for epoch in 0..cfg.max_epochs {
        let lr = sched.lr();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64)));
        let mut acc = LossParts::default();
        for (bi, rows) in order.chunks(cfg.batch_size).enumerate() {
            let (x, s, t) = gather(train, rows)?;
            let mut tape = Tape::new();
            let noise = mix(mix(cfg.seed, epoch as u64), bi as u64 + 1);
            let (loss, parts) = batch_loss(&mut tape, nets, store, cfg, (&x, &s, &t), noise)?;
            if !parts.total.is_finite() {
                return Err(TrainError::NonFinite { epoch, batch: bi });
            }
            let grads = tape.backward(loss)?;
            store.zero_grad();
            store.accumulate(&tape, &grads)?;
            opt.step(store, lr);
            acc.add_scaled(&parts, rows.len() as f64 / train.n as f64);
        }
        // Fixed validation noise keeps epochs comparable.
        let val_parts = evaluate(nets, store, cfg, val, val_seed)?;
        if !val_parts.total.is_finite() {
            return Err(TrainError::NonFinite {
                epoch,
                batch: usize::MAX,
            });
        }
        let rec = EpochRecord {
            epoch,
            lr,
            train: acc,
            val: val_parts,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&rec);
        log.epochs.push(rec);
        if best.as_ref().is_none_or(|(b, _)| val_parts.total < *b) {
            best = Some((val_parts.total, store.clone()));
            log.best_epoch = epoch;
        }
        sched.step(val_parts.total);
        if stopper.observe(val_parts.total) {
            log.stopped_early = true;
            break;
        }
    }
    if let Some((_, b)) = best {
        store.load_values_from(&b)?;
    }
    if frozen_sum(store) != frozen_before {
        return Err(TrainError::FrozenMutated(cfg.stage));
    }
    let stage = cfg.stage.index().max(found);
    store.set_frozen(STAGE_KEY, false);
    store.set_value(STAGE_KEY, Tensor::scalar(stage as f64))?;
    store.set_frozen(STAGE_KEY, true);
    Ok(log)
}
