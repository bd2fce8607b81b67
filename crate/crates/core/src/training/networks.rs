//! Encoder, flow and decoder wiring.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{conv_padding, nn, AutodiffError, ParamStore, Tape, Tensor, Var};
use crate::dataset::{mix, Normalization};
use crate::flow::{FlowConfig, FlowError, FlowModel, PosteriorDraws, PreparedFlow};

pub const N_PARAMS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub dense: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            channels: vec![32, 64, 64],
            kernel: 5,
            stride: 2,
            dense: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderConfig {
    pub dense: usize,
    pub steps: usize,
    pub features: usize,
    pub gru_hidden: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            dense: 128,
            steps: 30,
            features: 16,
            gru_hidden: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub n_bins: usize,
    pub encoder: EncoderConfig,
    pub flow: FlowConfig,
    pub decoder: DecoderConfig,
}

impl NetworkConfig {
    pub fn new(n_bins: usize) -> Self {
        Self {
            n_bins,
            encoder: EncoderConfig::default(),
            flow: FlowConfig::default(),
            decoder: DecoderConfig::default(),
        }
    }

    pub fn context(&self) -> usize {
        self.flow.context
    }

    /// Sequence length after the convolution stack.
    pub fn conv_out_len(&self) -> usize {
        let mut len = self.n_bins;
        for _ in &self.encoder.channels {
            len = conv_padding(len, self.encoder.kernel, self.encoder.stride).1;
        }
        len
    }

    /// Values emitted per decoder step before resampling.
    pub fn head_width(&self) -> usize {
        self.n_bins.div_ceil(self.decoder.steps)
    }
}

/// Encoder, flow and decoder sharing one [`ParamStore`] under the prefixes
/// `encoder.`, `flow.` and `decoder.`.
#[derive(Clone, Debug)]
pub struct NetworkAssembly {
    pub config: NetworkConfig,
    pub flow: FlowModel,
    /// `[n_bins, steps·head_width]` linear-interpolation matrix, absent when
    /// the decoder already emits `n_bins` values.
    resample: Option<Tensor>,
    /// Spectra passed through the encoder, shared between clones.
    encoded_rows: Arc<AtomicU64>,
}

fn resample_matrix(from: usize, to: usize) -> Tensor {
    let mut m = Tensor::zeros(&[to, from]);
    for i in 0..to {
        let s = if to == 1 {
            0.0
        } else {
            i as f64 * (from - 1) as f64 / (to - 1) as f64
        };
        let lo = (s.floor() as usize).min(from - 1);
        let hi = (lo + 1).min(from - 1);
        let t = s - lo as f64;
        m.data_mut()[i * from + lo] += 1.0 - t;
        m.data_mut()[i * from + hi] += t;
    }
    m
}

impl NetworkAssembly {
    pub fn new(config: NetworkConfig) -> Result<Self, AutodiffError> {
        if config.flow.dim != N_PARAMS {
            return Err(AutodiffError::Contract(format!(
                "flow dimension {} must be {N_PARAMS}",
                config.flow.dim
            )));
        }
        if config.n_bins < config.encoder.kernel {
            return Err(AutodiffError::Contract(format!(
                "{} bins are fewer than the kernel size {}",
                config.n_bins, config.encoder.kernel
            )));
        }
        let emitted = config.decoder.steps * config.head_width();
        let resample = (emitted != config.n_bins).then(|| resample_matrix(emitted, config.n_bins));
        Ok(Self {
            flow: FlowModel::new(config.flow),
            resample,
            config,
            encoded_rows: Arc::default(),
        })
    }

    /// Fresh weights for every component from one seed.
    pub fn init(&self, seed: u64) -> Result<ParamStore, AutodiffError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let c = &self.config;
        let mut c_in = 1;
        for (i, &ch) in c.encoder.channels.iter().enumerate() {
            nn::init_conv1d(
                &mut s,
                &format!("encoder.conv{i}"),
                c_in,
                ch,
                c.encoder.kernel,
                &mut rng,
            )?;
            c_in = ch;
        }
        nn::init_dense(
            &mut s,
            "encoder.fc0",
            c_in * c.conv_out_len(),
            c.encoder.dense,
            &mut rng,
        )?;
        nn::init_dense(
            &mut s,
            "encoder.fc1",
            c.encoder.dense,
            c.context(),
            &mut rng,
        )?;
        self.flow.init(&mut s, &mut rng)?;
        let d = &c.decoder;
        nn::init_dense(&mut s, "decoder.fc0", N_PARAMS, d.dense, &mut rng)?;
        nn::init_dense(
            &mut s,
            "decoder.fc1",
            d.dense,
            d.steps * d.features,
            &mut rng,
        )?;
        nn::init_gru(&mut s, "decoder.gru_f", d.features, d.gru_hidden, &mut rng)?;
        nn::init_gru(&mut s, "decoder.gru_b", d.features, d.gru_hidden, &mut rng)?;
        nn::init_dense(
            &mut s,
            "decoder.head",
            2 * d.gru_hidden,
            c.head_width(),
            &mut rng,
        )?;
        s.insert(STAGE_KEY, Tensor::scalar(0.0))?;
        s.set_frozen(STAGE_KEY, true);
        Ok(s)
    }

    /// Total spectra encoded so far by this assembly and its clones.
    pub fn encoded_rows(&self) -> u64 {
        self.encoded_rows.load(Ordering::Relaxed)
    }

    /// `x [B, n_bins]` to context `[B, C]`.
    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
    ) -> Result<Var, AutodiffError> {
        let c = &self.config;
        let b = tape.shape(x)[0];
        self.encoded_rows.fetch_add(b as u64, Ordering::Relaxed);
        let mut h = tape.reshape(x, &[b, 1, c.n_bins])?;
        for i in 0..c.encoder.channels.len() {
            let conv =
                nn::Conv1d::bind(tape, store, &format!("encoder.conv{i}"), c.encoder.stride)?;
            h = conv.forward(tape, h)?;
            h = tape.gelu(h);
        }
        let flat = tape.value(h).len() / b;
        let h = tape.reshape(h, &[b, flat])?;
        let h = nn::Dense::bind(tape, store, "encoder.fc0")?.forward(tape, h)?;
        let h = tape.gelu(h);
        nn::Dense::bind(tape, store, "encoder.fc1")?.forward(tape, h)
    }

    /// Parameters `[B, 5]` in unit coordinates to a reconstructed
    /// preprocessed spectrum `[B, n_bins]`.
    pub fn decode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        theta: Var,
    ) -> Result<Var, AutodiffError> {
        let c = &self.config;
        let d = &c.decoder;
        let b = tape.shape(theta)[0];
        let h = nn::Dense::bind(tape, store, "decoder.fc0")?.forward(tape, theta)?;
        let h = tape.gelu(h);
        let h = nn::Dense::bind(tape, store, "decoder.fc1")?.forward(tape, h)?;
        let h = tape.gelu(h);
        let seq = tape.reshape(h, &[b, d.steps, d.features])?;
        let f = nn::Gru::bind(tape, store, "decoder.gru_f")?;
        let r = nn::Gru::bind(tape, store, "decoder.gru_b")?;
        let h = nn::bigru(tape, seq, &f, &r)?;
        let h = nn::Dense::bind(tape, store, "decoder.head")?.forward(tape, h)?;
        let h = tape.reshape(h, &[b, d.steps * c.head_width()])?;
        match &self.resample {
            Some(m) => {
                let m = tape.constant(m.clone());
                tape.matmul_t(h, m)
            }
            None => Ok(h),
        }
    }

    /// Contexts for rows of `x [n, n_bins]` without gradients.
    pub fn contexts(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<Vec<f64>>, AutodiffError> {
        let n = x.len() / self.config.n_bins;
        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::new(&[n, self.config.n_bins], x.to_vec())?);
        let c = self.encode(&mut tape, store, xv)?;
        Ok(tape
            .value(c)
            .data()
            .chunks(self.config.context())
            .map(<[f64]>::to_vec)
            .collect())
    }

    /// Decoder reconstructions for rows of unit-coordinate parameters.
    pub fn reconstruct(
        &self,
        store: &ParamStore,
        theta: &[f64],
    ) -> Result<Vec<Vec<f64>>, AutodiffError> {
        let n = theta.len() / N_PARAMS;
        let mut tape = Tape::new();
        let t = tape.constant(Tensor::new(&[n, N_PARAMS], theta.to_vec())?);
        let y = self.decode(&mut tape, store, t)?;
        Ok(tape
            .value(y)
            .data()
            .chunks(self.config.n_bins)
            .map(<[f64]>::to_vec)
            .collect())
    }

    /// `n` posterior draws for one preprocessed spectrum; the encoder runs
    /// once.
    pub fn posterior(
        &self,
        store: &ParamStore,
        x: &[f64],
        n: usize,
        seed: u64,
    ) -> Result<PosteriorDraws, FlowError> {
        let flow = self.flow.prepare(store)?;
        self.posterior_with(&flow, store, x, n, seed)
    }

    /// As [`Self::posterior`] with flow weights prepared in advance.
    pub fn posterior_with(
        &self,
        flow: &PreparedFlow,
        store: &ParamStore,
        x: &[f64],
        n: usize,
        seed: u64,
    ) -> Result<PosteriorDraws, FlowError> {
        if x.len() != self.config.n_bins {
            return Err(FlowError::Shape(format!(
                "spectrum of {} bins, network expects {}",
                x.len(),
                self.config.n_bins
            )));
        }
        let ctx = self.contexts(store, x)?.remove(0);
        flow.sample(&ctx, n, seed)
    }

    /// `n` draws for every row of `x [m, n_bins]`, spectrum `i` seeded with
    /// `mix(seed, i)`. Rows are encoded in chunks, once each.
    pub fn posteriors(
        &self,
        store: &ParamStore,
        x: &[f64],
        n: usize,
        seed: u64,
        workers: usize,
    ) -> Result<Vec<PosteriorDraws>, FlowError> {
        let nb = self.config.n_bins;
        if x.len() % nb != 0 {
            return Err(FlowError::Shape(format!(
                "{} values are not rows of {nb} bins",
                x.len()
            )));
        }
        let flow = self.flow.prepare(store)?;
        let mut contexts = Vec::with_capacity(x.len() / nb);
        for chunk in x.chunks(256 * nb) {
            contexts.extend(self.contexts(store, chunk)?);
        }
        crate::parallel::par_map(contexts.len(), workers, |i| {
            flow.sample(&contexts[i], n, mix(seed, i as u64))
        })
    }
}

/// Scalar entry recording the last completed training stage.
pub const STAGE_KEY: &str = "meta.stage";

pub fn completed_stage(store: &ParamStore) -> u32 {
    store.value(STAGE_KEY).map_or(0, |t| t.item() as u32)
}

/// Entry holding the training set's `[mean, std, reference exposure]`, so
/// later stages and inference standardise inputs the same way.
pub const NORM_KEY: &str = "meta.norm";

pub fn store_normalization(
    store: &mut ParamStore,
    norm: &Normalization,
) -> Result<(), AutodiffError> {
    let t = Tensor::row(&[norm.mean, norm.std, norm.reference_exposure]);
    if store.value(NORM_KEY).is_some() {
        store.set_frozen(NORM_KEY, false);
        store.set_value(NORM_KEY, t)?;
    } else {
        store.insert(NORM_KEY, t)?;
    }
    store.set_frozen(NORM_KEY, true);
    Ok(())
}

pub fn stored_normalization(store: &ParamStore) -> Option<Normalization> {
    let v = store.value(NORM_KEY)?.data();
    (v.len() == 3 && v[1] > 0.0 && v[2] > 0.0).then(|| Normalization {
        mean: v[0],
        std: v[1],
        reference_exposure: v[2],
    })
}
