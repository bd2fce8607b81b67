use std::fs::File;
use std::path::Path;

use fspnet::autodiff::{checkpoint, ParamStore};
use fspnet::baseline::{
    autocorr_time, greedy_fit, mh_chain, spectrum_target, write_chain_csv, ChainConfig,
    GREEDY_STEPS,
};
use fspnet::dataset::{
    self, generate_dataset, mix, params_to_unit, split, Dataset, ExposurePolicy, GenerateConfig,
    NormalizedBatch, PriorBox,
};
use fspnet::flow::PosteriorDraws;
use fspnet::metrics::{
    self, coverage_curve, default_levels, emit_coverage, min_draws_for, poisson_observations,
    posterior_means_physical, reconstruct_and_score, self_consistency_split, BenchConfig,
    EvalReport, MIN_COVERAGE_SPECTRA,
};
use fspnet::parallel::par_map;
use fspnet::physics::{EnergyGrid, ResponseModel, Spectrum, PARAM_NAMES};
use fspnet::training::{
    completed_stage, run_stage, store_normalization, stored_normalization, NetworkAssembly,
    NetworkConfig, Stage, TrainConfig, TrainError,
};

use crate::settings::{d, output_file, Settings};
use crate::{
    BenchmarkArgs, CliError, CoverageArgs, EvaluateArgs, GenerateArgs, InferArgs, McmcArgs,
    TrainArgs,
};

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    dataset::load(path).map_err(|e| CliError::io(path, e))
}

fn first_rows(ds: Dataset, limit: Option<usize>) -> Dataset {
    match limit {
        Some(n) if n < ds.len() => ds.select(&(0..n).collect::<Vec<_>>()),
        _ => ds,
    }
}

fn response_for(ds: &Dataset) -> Result<ResponseModel, CliError> {
    ResponseModel::new(
        EnergyGrid::new(ds.n_bins).map_err(runtime)?,
        ds.response.clone(),
    )
    .map_err(runtime)
}

/// Checkpoint plus the matching network; every network weight must be
/// present with the right shape.
fn load_model(path: &Path, n_bins: usize) -> Result<(NetworkAssembly, ParamStore), CliError> {
    let nets = NetworkAssembly::new(NetworkConfig::new(n_bins)).map_err(runtime)?;
    let ckpt = checkpoint::load(path).map_err(|e| CliError::io(path, e))?;
    let mut fresh = nets.init(0).map_err(runtime)?;
    checkpoint::restore_into(&mut fresh, &ckpt, "").map_err(|e| {
        CliError::Runtime(format!(
            "{} does not fit a {n_bins}-bin network: {e}",
            path.display()
        ))
    })?;
    Ok((nets, ckpt))
}

fn trained_model(path: &Path, n_bins: usize) -> Result<(NetworkAssembly, ParamStore), CliError> {
    let (nets, store) = load_model(path, n_bins)?;
    let stage = completed_stage(&store);
    if stage < Stage::Synthetic.index() {
        return Err(CliError::Usage(format!(
            "stage prerequisite: {} has completed stage {stage}, inference needs a trained flow (stage 2)",
            path.display()
        )));
    }
    Ok((nets, store))
}

/// Network inputs standardised with the checkpoint's training constants.
fn inputs(ds: &Dataset, store: &ParamStore, prior: &PriorBox) -> NormalizedBatch {
    let mut ds = ds.clone();
    if let Some(norm) = stored_normalization(store) {
        ds.norm = norm;
    }
    ds.normalized(prior)
}

fn targets(ds: &Dataset, prior: &PriorBox) -> Vec<[f64; 5]> {
    ds.params
        .iter()
        .map(|p| params_to_unit(p, prior).0)
        .collect()
}

fn spectra(ds: &Dataset) -> Vec<Spectrum> {
    (0..ds.len()).map(|i| ds.spectrum(i)).collect()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))
}

fn workers(s: &Settings) -> Result<usize, CliError> {
    s.positive("workers")
}

pub fn generate(a: GenerateArgs) -> Result<(), CliError> {
    let out = output_file(&a.out)?;
    let mut s = Settings::new(&[
        ("n", d(1000)),
        ("bins", d(240)),
        ("noisy", d(false)),
        ("seed", d(0)),
        ("workers", d(1)),
        ("exposure_min", String::new()),
        ("exposure_max", String::new()),
    ])?;
    s.apply_file(a.common.config.as_deref())?;
    s.flag("n", a.n)?;
    s.flag("bins", a.bins)?;
    s.flag("noisy", a.noisy)?;
    s.flag("seed", a.common.seed)?;
    s.flag("workers", a.workers)?;
    s.flag("exposure_min", a.exposure_min)?;
    s.flag("exposure_max", a.exposure_max)?;
    let exposure = match (
        s.optional::<f64>("exposure_min")?,
        s.optional::<f64>("exposure_max")?,
    ) {
        (None, None) => ExposurePolicy::Fixed,
        (Some(min), Some(max)) if min > 0.0 && min <= max => ExposurePolicy::Uniform { min, max },
        (Some(min), Some(max)) => {
            return Err(CliError::Usage(format!(
                "exposure range [{min}, {max}] is empty or non-positive"
            )))
        }
        _ => {
            return Err(CliError::Usage(
                "exposure_min and exposure_max go together".into(),
            ))
        }
    };
    let cfg = GenerateConfig {
        n: s.positive("n")?,
        n_bins: s.positive("bins")?,
        noisy: s.get("noisy")?,
        seed: s.get("seed")?,
        workers: workers(&s)?,
        exposure,
        ..GenerateConfig::default()
    };
    print!("{}", s.render());
    let ds = generate_dataset(&cfg).map_err(runtime)?;
    dataset::save(&ds, &out).map_err(|e| CliError::io(&out, e))?;
    eprintln!(
        "wrote {} spectra x {} bins to {}",
        ds.len(),
        ds.n_bins,
        out.display()
    );
    Ok(())
}

const TRAIN_KEYS: [&str; 15] = [
    "stage",
    "lr",
    "lr_floor",
    "w_rec",
    "w_lat",
    "w_nf",
    "decoder_free",
    "batch_size",
    "max_epochs",
    "patience",
    "plateau_factor",
    "early_stop_window",
    "improvement_threshold",
    "weight_decay",
    "seed",
];

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let mut defaults: Vec<(&'static str, String)> =
        TRAIN_KEYS.iter().map(|k| (*k, String::new())).collect();
    defaults.push(("train_fraction", d(0.8)));
    let mut s = Settings::new(&defaults)?;
    s.apply_file(a.common.config.as_deref())?;
    s.flag("stage", a.stage)?;
    s.flag("seed", a.common.seed)?;
    s.flag("max_epochs", a.epochs)?;
    s.flag("lr", a.lr)?;
    s.flag("batch_size", a.batch_size)?;
    s.flag("decoder_free", a.decoder_free)?;
    s.flag("w_rec", a.w_rec)?;
    s.flag("w_lat", a.w_lat)?;
    s.flag("w_nf", a.w_nf)?;
    s.flag("train_fraction", a.train_fraction)?;
    if s.raw("stage").is_empty() {
        return Err(CliError::Usage(
            "--stage is required (decoder, synthetic or real)".into(),
        ));
    }
    let kv = s
        .entries()
        .filter(|(k, v)| TRAIN_KEYS.contains(k) && !v.is_empty())
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let mut cfg = TrainConfig::new(Stage::Decoder);
    cfg.apply(&kv).map_err(|e| CliError::Usage(e.to_string()))?;
    let fraction: f64 = s.get("train_fraction")?;
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CliError::Usage(format!(
            "train_fraction {fraction} outside (0, 1)"
        )));
    }

    let full = load_dataset(&a.train)?;
    let (train_ds, val_ds) = match &a.val {
        Some(v) => (full, load_dataset(v)?),
        None => split(&full, fraction, cfg.seed).map_err(runtime)?,
    };
    if train_ds.n_bins != val_ds.n_bins {
        return Err(CliError::Usage(format!(
            "training has {} bins, validation {}",
            train_ds.n_bins, val_ds.n_bins
        )));
    }
    let (nets, mut store) = match &a.init {
        Some(p) => load_model(p, train_ds.n_bins)?,
        None => {
            let nets =
                NetworkAssembly::new(NetworkConfig::new(train_ds.n_bins)).map_err(runtime)?;
            let store = nets.init(cfg.seed).map_err(runtime)?;
            (nets, store)
        }
    };
    if stored_normalization(&store).is_none() {
        store_normalization(&mut store, &train_ds.compute_normalization()).map_err(runtime)?;
    }
    let prior = PriorBox::default();
    let train_b = inputs(&train_ds, &store, &prior);
    let val_b = inputs(&val_ds, &store, &prior);

    let log = run_stage(&cfg, &nets, &mut store, &train_b, &val_b, &mut |e| {
        eprintln!(
            "epoch {:>3}  lr {:.2e}  train {:.6e}  val {:.6e} (rec {:.4e} lat {:.4e} nf {:.4e})  {:.1}s",
            e.epoch, e.lr, e.train.total, e.val.total, e.val.rec, e.val.lat, e.val.nf, e.wall_seconds
        )
    })
    .map_err(|e| match e {
        TrainError::Prerequisite { .. } | TrainError::Config(_) | TrainError::Data(_) => CliError::Usage(e.to_string()),
        other => runtime(other),
    })?;
    std::fs::create_dir_all(&a.outdir).map_err(|e| CliError::io(&a.outdir, e))?;
    let mut echo = cfg.to_kv();
    if a.val.is_none() {
        echo.push_str(&format!("train_fraction = {fraction}\n"));
    }
    let path = a.outdir.join("config.txt");
    std::fs::write(&path, echo).map_err(|e| CliError::io(&path, e))?;
    let ck = a.outdir.join("checkpoint.fspc");
    checkpoint::save(&store, &ck).map_err(|e| CliError::io(&ck, e))?;
    let path = a.outdir.join("train_log.csv");
    log.save_csv(&path).map_err(|e| CliError::io(&path, e))?;
    let path = a.outdir.join("train_timing.csv");
    log.write_timing_csv(File::create(&path).map_err(|e| CliError::io(&path, e))?)
        .map_err(|e| CliError::io(&path, e))?;
    eprintln!(
        "stage {} done: {} epochs, best {}{}",
        cfg.stage,
        log.epochs.len(),
        log.best_epoch,
        if log.stopped_early {
            ", stopped early"
        } else {
            ""
        }
    );
    Ok(())
}

fn posterior_settings(
    common: &crate::Common,
    draws: usize,
    extra: &[(&'static str, String)],
) -> Result<Settings, CliError> {
    let mut keys = vec![
        ("draws", d(draws)),
        ("seed", d(0)),
        ("workers", d(1)),
        ("limit", String::new()),
    ];
    keys.extend_from_slice(extra);
    let mut s = Settings::new(&keys)?;
    s.apply_file(common.config.as_deref())?;
    s.flag("seed", common.seed)?;
    Ok(s)
}

/// Posterior draws for every row plus what they were drawn from.
struct Posteriors {
    ds: Dataset,
    draws: Vec<PosteriorDraws>,
}

fn draw_posteriors(checkpoint: &Path, data: &Path, s: &Settings) -> Result<Posteriors, CliError> {
    let n_draws = s.positive("draws")?;
    let seed: u64 = s.get("seed")?;
    let w = workers(s)?;
    let ds = first_rows(load_dataset(data)?, s.optional("limit")?);
    let (nets, store) = trained_model(checkpoint, ds.n_bins)?;
    let batch = inputs(&ds, &store, &PriorBox::default());
    let draws = nets
        .posteriors(&store, &batch.x, n_draws, seed, w)
        .map_err(runtime)?;
    Ok(Posteriors { ds, draws })
}

pub fn infer(a: InferArgs) -> Result<(), CliError> {
    let mut s = posterior_settings(&a.common, 1000, &[])?;
    s.flag("draws", a.draws)?;
    s.flag("workers", a.workers)?;
    s.flag("limit", a.limit)?;
    s.positive("draws")?;
    s.echo(&a.outdir)?;
    let p = draw_posteriors(&a.checkpoint, &a.data, &s)?;
    let prior = PriorBox::default();
    let path = a.outdir.join("posterior.csv");
    let mut w = csv_writer(&path)?;
    let mut header = vec!["spectrum".to_string(), "draw".to_string()];
    header.extend(PARAM_NAMES.iter().map(|n| format!("u_{n}")));
    header.extend(PARAM_NAMES.iter().map(|n| n.to_string()));
    header.push("log_q".into());
    w.write_record(&header).map_err(runtime)?;
    for (i, d) in p.draws.iter().enumerate() {
        for k in 0..d.len() {
            let u: [f64; 5] = std::array::from_fn(|j| d.draw(k)[j]);
            let phys = dataset::unit_to_params(&u.map(|v| v.clamp(-1.0, 1.0)), &prior);
            let mut r = vec![i.to_string(), k.to_string()];
            r.extend(u.iter().chain(&phys).map(f64::to_string));
            r.push(d.log_q[k].to_string());
            w.write_record(&r).map_err(runtime)?;
        }
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    eprintln!("wrote {} posteriors to {}", p.draws.len(), path.display());
    Ok(())
}

pub fn mcmc(a: McmcArgs) -> Result<(), CliError> {
    let mut s = Settings::new(&[
        ("steps", d(20_000)),
        ("burn_in", d(5_000)),
        ("seed", d(0)),
        ("workers", d(1)),
        ("limit", d(1)),
        ("start", "centre".into()),
    ])?;
    s.apply_file(a.common.config.as_deref())?;
    s.flag("steps", a.steps)?;
    s.flag("burn_in", a.burn_in)?;
    s.flag("seed", a.common.seed)?;
    s.flag("workers", a.workers)?;
    s.flag("limit", a.limit)?;
    s.flag("start", a.start)?;
    let steps = s.positive("steps")?;
    let burn_in: usize = s.get("burn_in")?;
    let seed: u64 = s.get("seed")?;
    let w = workers(&s)?;
    let from_truth = match s.raw("start") {
        "centre" | "center" => false,
        "truth" => true,
        other => {
            return Err(CliError::Usage(format!(
                "start must be centre or truth, got `{other}`"
            )))
        }
    };
    let limit = s.positive("limit")?;
    s.echo(&a.outdir)?;

    let ds = first_rows(load_dataset(&a.data)?, Some(limit));
    let response = response_for(&ds)?;
    let prior = PriorBox::default();
    let chains = par_map(ds.len(), w, |i| {
        let init = if from_truth {
            params_to_unit(&ds.params[i], &prior).0
        } else {
            [0.0; 5]
        };
        let cfg = ChainConfig::new(5, burn_in + steps, burn_in, mix(seed, i as u64));
        mh_chain(&ds.spectrum(i), &response, &prior, &init, &cfg)
    })
    .map_err(runtime)?;
    let path = a.outdir.join("summary.csv");
    let mut summary = csv_writer(&path)?;
    summary
        .write_record([
            "spectrum",
            "kept_steps",
            "acceptance_rate",
            "proposal_scale",
            "tau",
            "warnings",
        ])
        .map_err(runtime)?;
    for (i, c) in chains.iter().enumerate() {
        let chain_path = a.outdir.join(format!("chain_{i:04}.csv"));
        write_chain_csv(
            File::create(&chain_path).map_err(|e| CliError::io(&chain_path, e))?,
            c,
            &prior,
        )
        .map_err(runtime)?;
        let tau = autocorr_time(&c.samples, c.dim)
            .map(|t| t.max.to_string())
            .unwrap_or_else(|_| "nan".into());
        summary
            .write_record([
                i.to_string(),
                c.len().to_string(),
                c.acceptance_rate.to_string(),
                c.scale
                    .iter()
                    .map(f64::to_string)
                    .collect::<Vec<_>>()
                    .join(";"),
                tau,
                c.warnings.join("; "),
            ])
            .map_err(runtime)?;
    }
    summary.flush().map_err(|e| CliError::io(&path, e))?;
    eprintln!("wrote {} chains to {}", chains.len(), a.outdir.display());
    Ok(())
}

/// Observed spectra for scoring: noiseless data get one seeded Poisson
/// realisation, since the generating parameters would otherwise score zero.
fn observations(ds: &Dataset, seed: u64) -> Vec<Spectrum> {
    let spectra = spectra(ds);
    if ds.noisy {
        spectra
    } else {
        poisson_observations(&spectra, mix(seed, 0x0b5e_7e))
    }
}

pub fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let mut s = posterior_settings(&a.common, 200, &[("fit", d(true))])?;
    s.flag("draws", a.draws)?;
    s.flag("workers", a.workers)?;
    s.flag("limit", a.limit)?;
    s.flag("fit", a.fit)?;
    let compare: Vec<(String, &Path)> = a
        .compare
        .iter()
        .map(|c| match c.split_once('=') {
            Some((name, p)) if !name.is_empty() && !p.is_empty() => {
                Ok((name.to_string(), Path::new(p)))
            }
            _ => Err(CliError::Usage(format!(
                "--compare expects NAME=CHECKPOINT, got `{c}`"
            ))),
        })
        .collect::<Result<_, _>>()?;
    let do_fit: bool = s.get("fit")?;
    s.positive("draws")?;
    s.echo(&a.outdir)?;

    let seed: u64 = s.get("seed")?;
    let w = workers(&s)?;
    let prior = PriorBox::default();
    let p = draw_posteriors(&a.checkpoint, &a.data, &s)?;
    let ds = &p.ds;
    let truths = targets(ds, &prior);
    let rates: Vec<f64> = (0..ds.len())
        .map(|i| ds.row_counts(i).iter().map(|&c| c as f64).sum::<f64>() / ds.exposure(i))
        .collect();
    let mut report = EvalReport::from_posteriors(&truths, &p.draws, &rates).map_err(runtime)?;
    let response = response_for(ds)?;
    let observed = observations(ds, seed);
    let score = |params: &[[f64; 5]]| {
        reconstruct_and_score(params, &observed, &response, w).map_err(runtime)
    };
    report
        .pgstat
        .push(("truth".into(), score(&ds.params)?.reduced));
    report.pgstat.push((
        "flow".into(),
        score(&posterior_means_physical(&p.draws, &prior))?.reduced,
    ));
    for (name, path) in &compare {
        let other = draw_posteriors(path, &a.data, &s)?;
        report.pgstat.push((
            name.clone(),
            score(&posterior_means_physical(&other.draws, &prior))?.reduced,
        ));
    }
    if do_fit {
        let fits = par_map(ds.len(), w, |i| {
            let target = spectrum_target(&observed[i], &response, &prior);
            greedy_fit(target, &[0.0; 5], GREEDY_STEPS, 0.1, mix(seed, i as u64))
                .map(|f| dataset::unit_to_params(&std::array::from_fn(|j| f.position[j]), &prior))
        })
        .map_err(runtime)?;
        report
            .pgstat
            .push((format!("fit{GREEDY_STEPS}"), score(&fits)?.reduced));
    }
    let n_draws = p.draws.iter().map(PosteriorDraws::len).min().unwrap_or(0);
    if ds.len() >= MIN_COVERAGE_SPECTRA && n_draws >= min_draws_for(0.9) {
        let t: Vec<Vec<f64>> = truths.iter().map(|t| t.to_vec()).collect();
        report.coverage = coverage_curve(&p.draws, &t, &default_levels()).map_err(runtime)?;
    } else {
        eprintln!(
            "coverage skipped: needs {MIN_COVERAGE_SPECTRA} spectra and {} draws",
            min_draws_for(0.9)
        );
    }
    let files = report.emit(&a.outdir).map_err(runtime)?;
    for (j, name) in PARAM_NAMES.iter().enumerate() {
        eprintln!("pcc {name:>5} {:.4}", report.pcc[j]);
    }
    for (name, _) in &report.pgstat {
        eprintln!(
            "median reduced pgstat {name}: {:.4}",
            report.median_pgstat(name).unwrap_or(f64::NAN)
        );
    }
    eprintln!("wrote {} files to {}", files.len(), a.outdir.display());
    Ok(())
}

pub fn coverage(a: CoverageArgs) -> Result<(), CliError> {
    let mut s = posterior_settings(&a.common, 500, &[])?;
    s.flag("draws", a.draws)?;
    s.flag("workers", a.workers)?;
    s.flag("limit", a.limit)?;
    let n_draws = s.positive("draws")?;
    let levels = default_levels();
    let need = levels.iter().map(|&l| min_draws_for(l)).max().unwrap_or(1) + 1;
    if n_draws < need {
        return Err(CliError::Usage(format!(
            "coverage needs at least {need} draws per spectrum"
        )));
    }
    s.echo(&a.outdir)?;
    let seed: u64 = s.get("seed")?;
    let prior = PriorBox::default();
    let p = draw_posteriors(&a.checkpoint, &a.data, &s)?;
    let truths: Vec<Vec<f64>> = targets(&p.ds, &prior).iter().map(|t| t.to_vec()).collect();
    let table = coverage_curve(&p.draws, &truths, &levels).map_err(runtime)?;
    let (rest, pseudo) = self_consistency_split(&p.draws, mix(seed, 0x5e1f));
    let selfc = coverage_curve(&rest, &pseudo, &levels).map_err(runtime)?;
    emit_coverage(&table, &a.outdir, "coverage").map_err(runtime)?;
    emit_coverage(&selfc, &a.outdir, "self_consistency").map_err(runtime)?;

    let path = a.outdir.join("coverage_check.csv");
    let mut w = csv_writer(&path)?;
    w.write_record([
        "level",
        "coverage",
        "abs_error",
        "self_coverage",
        "binomial_se",
        "self_z",
    ])
    .map_err(runtime)?;
    let pairs = (selfc.n_spectra * 5) as f64;
    for (i, &l) in levels.iter().enumerate() {
        let se = (l * (1.0 - l) / pairs).sqrt();
        w.write_record([
            l.to_string(),
            table.coverage[i].to_string(),
            (table.coverage[i] - l).abs().to_string(),
            selfc.coverage[i].to_string(),
            se.to_string(),
            ((selfc.coverage[i] - l) / se).to_string(),
        ])
        .map_err(runtime)?;
        eprintln!(
            "level {l:.1}: coverage {:.3}, self-consistency {:.3}",
            table.coverage[i], selfc.coverage[i]
        );
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(())
}

pub fn benchmark(a: BenchmarkArgs) -> Result<(), CliError> {
    let defaults = BenchConfig::default();
    let mut s = Settings::new(&[
        ("seed", d(0)),
        ("limit", d(100)),
        ("draws", d(defaults.flow_draws)),
        ("chain_steps", d(defaults.chain_steps)),
        ("burn_in", d(defaults.burn_in)),
        ("effective_samples", d(defaults.effective_samples)),
    ])?;
    s.apply_file(a.common.config.as_deref())?;
    s.flag("seed", a.common.seed)?;
    s.flag("limit", a.limit)?;
    s.flag("draws", a.draws)?;
    s.flag("chain_steps", a.chain_steps)?;
    s.flag("burn_in", a.burn_in)?;
    s.flag("effective_samples", a.effective_samples)?;
    let cfg = BenchConfig {
        flow_draws: s.positive("draws")?,
        effective_samples: s.positive("effective_samples")?,
        chain_steps: s.positive("chain_steps")?,
        burn_in: s.get("burn_in")?,
        greedy_steps: GREEDY_STEPS,
        seed: s.get("seed")?,
    };
    let limit = s.positive("limit")?;
    s.echo(&a.outdir)?;
    let prior = PriorBox::default();
    let ds = first_rows(load_dataset(&a.data)?, Some(limit));
    let (nets, store) = trained_model(&a.checkpoint, ds.n_bins)?;
    let batch = inputs(&ds, &store, &prior);
    let response = response_for(&ds)?;
    let observed = observations(&ds, cfg.seed);
    let units = targets(&ds, &prior);
    let t = metrics::benchmark(
        &nets, &store, &batch.x, &observed, &units, &response, &prior, &cfg,
    )
    .map_err(runtime)?;
    let path = a.outdir.join("timing.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["quantity", "value"]).map_err(runtime)?;
    for (k, v) in t.rows() {
        w.write_record([k.to_string(), v.to_string()])
            .map_err(runtime)?;
        eprintln!("{k:>28} {v:.6e}");
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(())
}
