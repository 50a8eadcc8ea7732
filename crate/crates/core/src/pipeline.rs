//! Orchestration behind the CLI subcommands: data generation, training,
//! ensemble sampling, baselines, evaluation, ablation, and rendering.

use std::path::{Path, PathBuf};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};

use crate::baselines;
use crate::condition::{self, AuxChannels, ConditionTensor, CHANNEL_GROUPS};
use crate::diffusion::{
    self, lat_weight, masked_sample, rf_sample, Denoiser, ForwardMode, LatWeight, SamplerKind, TrainItem,
};
use crate::error::{Error, Result};
use crate::field::{FieldVolume, MaskVolume, MISSING};
use crate::io::checkpoint::{self, CheckpointHeader, LoadSide};
use crate::io::config::{ModelKind, RunConfig, SamplerChoice};
use crate::io::gridfile::{self, GridHeader};
use crate::io::report::{MetricReport, SummaryLine, WindowMetrics};
use crate::io::{atomic_write, sidecar_paths};
use crate::metrics::{self, HoleDomain, MetricMeans, SensitivityTable};
use crate::schedule::NoiseSchedule;
use crate::synthgen;
use crate::tensor::{AdamConfig, AdamState, EmaState, ParamStore, Tape, Tensor};
use crate::unet::{EvalNet, UNet};

fn seq_base(dir: &Path, split: &str, index: usize, part: &str) -> PathBuf {
    dir.join(format!("{split}_{index:04}.{part}"))
}

/// Generates the training corpus and the held-out evaluation windows.
/// Returns `(train_count, eval_count)`.
pub fn cmd_gen_data(cfg: &RunConfig, out_dir: &Path) -> Result<(usize, usize)> {
    let synth = cfg.synth_config()?;
    let total = cfg.sequences + cfg.eval_windows;
    let dataset = synthgen::gen_dataset(&synth, total)?;
    std::fs::create_dir_all(out_dir)?;
    for (idx, seq) in dataset.iter().enumerate() {
        let (split, local) = if idx < cfg.sequences {
            ("train", idx)
        } else {
            ("eval", idx - cfg.sequences)
        };
        write_sequence(cfg, out_dir, split, local, seq)?;
    }
    Ok((cfg.sequences, cfg.eval_windows))
}

fn write_sequence(
    cfg: &RunConfig,
    dir: &Path,
    split: &str,
    index: usize,
    seq: &synthgen::SynthSequence,
) -> Result<()> {
    let (l, h, w) = seq.truth.dims();
    let truth = gridfile::from_field(&seq.truth, "field", "normalized", cfg.seed);
    gridfile::write(&seq_base(dir, split, index, "truth"), &truth.header, &truth.data)?;

    let xbar = condition::mask_apply(&seq.truth, &seq.mask)?;
    let masked = gridfile::from_field(&xbar, "field", "normalized", cfg.seed);
    gridfile::write(&seq_base(dir, split, index, "masked"), &masked.header, &masked.data)?;

    let mask_header = GridHeader::new([1, l, h, w], vec!["mask".into()], "binary", cfg.seed);
    let mask_data: Vec<f32> = seq.mask.data().iter().map(|&m| m as f32).collect();
    gridfile::write(&seq_base(dir, split, index, "mask"), &mask_header, &mask_data)?;

    let aux_names: Vec<String> = condition::CHANNEL_NAMES[2..].iter().map(|s| s.to_string()).collect();
    let aux_header = GridHeader::new([8, l, h, w], aux_names, "normalized", cfg.seed);
    let aux_data: Vec<f32> = seq.aux.data().iter().map(|&v| v as f32).collect();
    gridfile::write(&seq_base(dir, split, index, "aux"), &aux_header, &aux_data)?;
    Ok(())
}

/// One sequence loaded back from disk.
pub fn load_sequence(dir: &Path, split: &str, index: usize) -> Result<TrainItem> {
    let truth = gridfile::to_field(&gridfile::read(&seq_base(dir, split, index, "truth"))?)?;
    let mask = gridfile::to_mask(&gridfile::read(&seq_base(dir, split, index, "mask"))?)?;
    let aux_grid = gridfile::read(&seq_base(dir, split, index, "aux"))?;
    if aux_grid.header.dims[0] != condition::AUX_CHANNELS {
        return Err(Error::Data(format!(
            "aux grid has {} channels, expected {}",
            aux_grid.header.dims[0],
            condition::AUX_CHANNELS
        )));
    }
    let [_, l, h, w] = aux_grid.header.dims;
    let aux = AuxChannels::from_raw(l, h, w, aux_grid.data.iter().map(|&v| v as f64).collect())
        .map_err(|e| Error::Data(e.to_string()))?;
    if truth.dims() != (l, h, w) || mask.dims() != (l, h, w) {
        return Err(Error::Data(format!("sequence {split} {index}: component dims disagree")));
    }
    Ok(TrainItem { x0: truth, mask, aux })
}

fn count_split(dir: &Path, split: &str) -> usize {
    let mut n = 0;
    while sidecar_paths(&seq_base(dir, split, n, "truth")).0.exists() {
        n += 1;
    }
    n
}

fn checkpoint_header(cfg: &RunConfig, epoch: usize, store: &ParamStore, ema: &EmaState) -> CheckpointHeader {
    let (arrays, _) = checkpoint::snapshot(store, ema);
    CheckpointHeader {
        version: checkpoint::CKPT_VERSION,
        model: cfg.model,
        epoch,
        t_steps: cfg.t_steps,
        schedule: cfg.schedule,
        beta_min: cfg.beta_min,
        beta_max: cfg.beta_max,
        cosine_s: cfg.cosine_s,
        base_channels: cfg.base_channels,
        with_time: cfg.model != ModelKind::Supervised,
        grid: (cfg.grid_l, cfg.grid_h, cfg.grid_w),
        arrays,
    }
}

/// Supervised regression step: the masked field maps directly to the full
/// field under a latitude-weighted L1 loss.
#[allow(clippy::too_many_arguments)]
fn supervised_train_step(
    items: &[&TrainItem],
    net: &UNet,
    store: &mut ParamStore,
    opt: &mut AdamState,
    ema: &mut EmaState,
    lat_w: &LatWeight,
    rng: &mut StdRng,
) -> Result<f64> {
    let (l, h, w) = items[0].x0.dims();
    let plane = l * h * w;
    let b = items.len();
    let mut x_in = Vec::with_capacity(b * plane);
    let mut target = Vec::with_capacity(b * plane);
    let mut cond = Vec::with_capacity(b * condition::CHANNELS * plane);
    for item in items {
        let xbar = condition::mask_apply(&item.x0, &item.mask)?;
        let c = condition::assemble_condition_from_aux(&xbar, &item.mask, &item.aux)?;
        x_in.extend_from_slice(xbar.data());
        target.extend_from_slice(item.x0.data());
        cond.extend_from_slice(c.data());
    }
    let x_in = Tensor::from_vec(&[b, 1, l, h, w], x_in)?;
    let target = Tensor::from_vec(&[b, 1, l, h, w], target)?;
    let cond = Tensor::from_vec(&[b, condition::CHANNELS, l, h, w], cond)?;
    let times = vec![0.0; b];

    let mut tape = Tape::new();
    let pred = net.forward(&mut tape, store, &x_in, &times, &cond, ForwardMode::Train, rng)?;
    let tv = tape.leaf(&target, false);
    let diff = tape.sub(pred, tv)?;
    let adiff = tape.abs(diff);
    let mut weights = Vec::with_capacity(b * plane);
    let one = lat_w.expand(l, w);
    for _ in 0..b {
        weights.extend_from_slice(&one);
    }
    let wv = tape.leaf_owned(vec![b, 1, l, h, w], weights, false);
    let weighted = tape.mul(adiff, wv)?;
    let loss = tape.mean_all(weighted);
    let loss_val = tape.value(loss)[0];
    if !loss_val.is_finite() {
        return Err(Error::numeric("supervised_train_step", format!("loss is not finite ({loss_val})")));
    }
    tape.backward(loss)?;
    tape.accumulate_param_grads(store);
    opt.step(store)?;
    ema.update(store);
    Ok(loss_val)
}

/// Training summary: per-epoch mean losses.
#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub epoch_losses: Vec<f64>,
    pub checkpoint: PathBuf,
}

/// Trains the configured model on the corpus in `data_dir`, writing an EMA
/// checkpoint after every epoch plus a loss log. `resume` restarts from a
/// previous checkpoint's raw parameters.
pub fn cmd_train(cfg: &RunConfig, data_dir: &Path, out_dir: &Path, resume: Option<&Path>) -> Result<TrainSummary> {
    cfg.validate()?;
    let n = count_split(data_dir, "train");
    if n == 0 {
        return Err(Error::Data(format!("no training sequences under {}", data_dir.display())));
    }
    let items: Vec<TrainItem> = (0..n).map(|i| load_sequence(data_dir, "train", i)).collect::<Result<_>>()?;
    let grid = cfg.grid()?;
    for item in &items {
        if item.x0.dims() != (grid.l, grid.h, grid.w) {
            return Err(Error::Data("training data dims do not match the configured grid".into()));
        }
    }
    std::fs::create_dir_all(out_dir)?;

    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let net = UNet::new(cfg.unet_config(), &mut store, &mut rng)?;
    let sched = cfg.noise_schedule()?;
    let lat_w = lat_weight(&grid, cfg.lat_eps)?;
    let mut opt = AdamState::new(
        AdamConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        },
        &store,
    );
    let mut start_epoch = 0usize;
    let mut ema = EmaState::new(cfg.ema_decay, &store)?;
    if let Some(path) = resume {
        let ckpt = checkpoint::read(path)?;
        check_compat(cfg, &ckpt.header)?;
        checkpoint::load_into(&ckpt, LoadSide::Params, &mut store)?;
        // Restore the EMA shadow alongside the raw parameters.
        let mut shadow_store = clone_store_shapes(&store);
        checkpoint::load_into(&ckpt, LoadSide::Ema, &mut shadow_store)?;
        for (i, id) in shadow_store.ids().enumerate() {
            ema.shadow_mut()[i].copy_from_slice(shadow_store.tensor(id).data());
        }
        start_epoch = ckpt.header.epoch;
    }

    let ckpt_base = out_dir.join("checkpoint");
    if cfg.epochs == 0 {
        // Zero-epoch run: the checkpoint is the initialization.
        let header = checkpoint_header(cfg, start_epoch, &store, &ema);
        let (_, arrays) = checkpoint::snapshot(&store, &ema);
        checkpoint::write(&ckpt_base, &header, &arrays)?;
    }
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut log = String::new();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut acc = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch) {
            // Pair each field with a random mask from the corpus pool.
            let batch: Vec<TrainItem> = chunk
                .iter()
                .map(|&i| {
                    let mask_idx = rng.random_range(0..n);
                    let mut item = TrainItem {
                        x0: items[i].x0.clone(),
                        mask: items[mask_idx].mask.clone(),
                        aux: items[i].aux.clone(),
                    };
                    augment_item(&mut item, &mut rng);
                    Ok(item)
                })
                .collect::<Result<_>>()?;
            let refs: Vec<&TrainItem> = batch.iter().collect();
            let loss = match cfg.model {
                ModelKind::Ddpm => {
                    diffusion::train_step(&refs, &net, &mut store, &sched, &mut opt, &mut ema, &lat_w, &mut rng)?
                }
                ModelKind::RectifiedFlow => {
                    diffusion::rf_train_step(&refs, &net, &mut store, &mut opt, &mut ema, &lat_w, &mut rng)?
                }
                ModelKind::Supervised => {
                    supervised_train_step(&refs, &net, &mut store, &mut opt, &mut ema, &lat_w, &mut rng)?
                }
            };
            acc += loss;
            batches += 1;
        }
        let mean = acc / batches as f64;
        epoch_losses.push(mean);
        log.push_str(&format!("epoch {} loss {}\n", start_epoch + epoch + 1, mean));
        atomic_write(&out_dir.join("loss.log"), log.as_bytes())?;
        let header = checkpoint_header(cfg, start_epoch + epoch + 1, &store, &ema);
        let (_, arrays) = checkpoint::snapshot(&store, &ema);
        checkpoint::write(&ckpt_base, &header, &arrays)?;
    }
    Ok(TrainSummary {
        epoch_losses,
        checkpoint: ckpt_base,
    })
}

fn clone_store_shapes(store: &ParamStore) -> ParamStore {
    let mut out = ParamStore::new();
    for (name, tensor) in store.iter() {
        out.register(name.to_string(), Tensor::zeros(tensor.shape()));
    }
    out
}

fn augment_item(item: &mut TrainItem, rng: &mut StdRng) {
    let ops = condition::AugmentOps::sample(rng);
    let (l, h, w) = item.x0.dims();
    condition::apply_flips(item.x0.data_mut(), l, h, w, ops);
    condition::apply_flips(item.mask.data_mut(), l, h, w, ops);
    // Aux channels flip frame-wise like any other volume.
    let mut aux_data = item.aux.data().to_vec();
    for c in 0..condition::AUX_CHANNELS {
        let plane = l * h * w;
        condition::apply_flips(&mut aux_data[c * plane..(c + 1) * plane], l, h, w, ops);
    }
    item.aux = AuxChannels::from_raw(l, h, w, aux_data).expect("shape preserved");
}

fn check_compat(cfg: &RunConfig, header: &CheckpointHeader) -> Result<()> {
    let mismatch = |what: &str| {
        Err(Error::Config(format!(
            "checkpoint {what} does not match the runtime configuration"
        )))
    };
    if header.model != cfg.model {
        return mismatch("model kind");
    }
    if header.grid != (cfg.grid_l, cfg.grid_h, cfg.grid_w) {
        return mismatch("grid");
    }
    if header.t_steps != cfg.t_steps || header.schedule != cfg.schedule {
        return mismatch("schedule");
    }
    if header.base_channels != cfg.base_channels {
        return mismatch("base_channels");
    }
    Ok(())
}

/// Loads a checkpoint's EMA parameters into a fresh network.
pub fn load_eval_model(cfg: &RunConfig, ckpt_path: &Path) -> Result<(UNet, ParamStore)> {
    let ckpt = checkpoint::read(ckpt_path)?;
    check_compat(cfg, &ckpt.header)?;
    let mut store = ParamStore::new();
    let mut rng = StdRng::seed_from_u64(0);
    let net = UNet::new(cfg.unet_config(), &mut store, &mut rng)?;
    checkpoint::load_into(&ckpt, LoadSide::Ema, &mut store)?;
    Ok((net, store))
}

/// Draws one inpainting sample for the configured model kind.
fn sample_once(
    cfg: &RunConfig,
    net: &UNet,
    store: &ParamStore,
    xbar: &FieldVolume,
    mask: &MaskVolume,
    cond: &ConditionTensor,
    sched: &NoiseSchedule,
    rng: &mut StdRng,
) -> Result<FieldVolume> {
    let eval = EvalNet { net, store };
    match cfg.model {
        ModelKind::Ddpm => {
            let sampler = match cfg.sampler {
                SamplerChoice::Ancestral => SamplerKind::Ancestral,
                SamplerChoice::Ddim => SamplerKind::Ddim {
                    steps: cfg.ddim_steps,
                },
            };
            masked_sample(xbar, mask, cond, &eval, sched, rng, sampler)
        }
        ModelKind::RectifiedFlow => rf_sample(xbar, mask, cond, &eval, cfg.rf_steps, rng),
        ModelKind::Supervised => {
            let (l, h, w) = xbar.dims();
            let pred = eval.predict(xbar.data(), (l, h, w), 0.0, cond)?;
            let mut out = pred;
            for (i, (&m, &obs)) in mask.data().iter().zip(xbar.data()).enumerate() {
                out[i] = if m == 1 { obs } else { out[i].clamp(0.0, 1.0) };
            }
            Ok(FieldVolume::from_vec(l, h, w, out)?)
        }
    }
}

/// Ensemble sampling: K members from distinct seeds plus their mean, all
/// with observed pixels enforced from the input.
pub struct SampleOutput {
    pub members: Vec<FieldVolume>,
    pub mean: FieldVolume,
}

#[allow(clippy::too_many_arguments)]
pub fn sample_ensemble(
    cfg: &RunConfig,
    net: &UNet,
    store: &ParamStore,
    xbar: &FieldVolume,
    mask: &MaskVolume,
    aux: &AuxChannels,
    k: usize,
    seed: u64,
) -> Result<SampleOutput> {
    if k == 0 {
        return Err(Error::invalid("sample_ensemble", "ensemble size must be >= 1"));
    }
    let cond = condition::assemble_condition_from_aux(xbar, mask, aux)?;
    let sched = cfg.noise_schedule()?;
    let mut members = Vec::with_capacity(k);
    for member in 0..k {
        let mut rng = StdRng::seed_from_u64(seed.wrapping_add(member as u64));
        members.push(sample_once(cfg, net, store, xbar, mask, &cond, &sched, &mut rng)?);
    }
    let (l, h, w) = xbar.dims();
    let mut mean = vec![0.0; l * h * w];
    for m in &members {
        for (acc, &v) in mean.iter_mut().zip(m.data()) {
            *acc += v;
        }
    }
    for v in &mut mean {
        *v /= k as f64;
    }
    // The deterministic prediction keeps observed pixels verbatim.
    for (i, (&mk, &obs)) in mask.data().iter().zip(xbar.data()).enumerate() {
        if mk == 1 {
            mean[i] = obs;
        }
    }
    Ok(SampleOutput {
        members,
        mean: FieldVolume::from_vec(l, h, w, mean)?,
    })
}

/// CLI entry: sample an ensemble for one masked input and write the members
/// and the mean as grid files.
#[allow(clippy::too_many_arguments)]
pub fn cmd_sample(
    cfg: &RunConfig,
    ckpt_path: &Path,
    input_base: &Path,
    mask_base: &Path,
    aux_base: &Path,
    out_dir: &Path,
    k: usize,
) -> Result<Vec<PathBuf>> {
    let (net, store) = load_eval_model(cfg, ckpt_path)?;
    let xbar_grid = gridfile::read(input_base)?;
    let xbar = gridfile::to_field(&xbar_grid)?;
    let mask = gridfile::to_mask(&gridfile::read(mask_base)?)?;
    let aux_grid = gridfile::read(aux_base)?;
    let [c, l, h, w] = aux_grid.header.dims;
    if c != condition::AUX_CHANNELS {
        return Err(Error::Data(format!("aux grid has {c} channels, expected 8")));
    }
    if (l, h, w) != (cfg.grid_l, cfg.grid_h, cfg.grid_w) {
        return Err(Error::Data("input grid does not match the configured grid".into()));
    }
    let aux = AuxChannels::from_raw(l, h, w, aux_grid.data.iter().map(|&v| v as f64).collect())
        .map_err(|e| Error::Data(e.to_string()))?;
    let out = sample_ensemble(cfg, &net, &store, &xbar, &mask, &aux, k, cfg.seed)?;
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (i, member) in out.members.iter().enumerate() {
        let base = out_dir.join(format!("member_{i:02}"));
        let g = gridfile::from_field(member, "field", "normalized", cfg.seed.wrapping_add(i as u64));
        gridfile::write(&base, &g.header, &g.data)?;
        written.push(base);
    }
    let mean_base = out_dir.join("mean");
    let g = gridfile::from_field(&out.mean, "field", "normalized", cfg.seed);
    gridfile::write(&mean_base, &g.header, &g.data)?;
    written.push(mean_base);
    Ok(written)
}

/// Baseline method selector for the CLI.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineMethod {
    Tli,
    TliLf,
}

impl BaselineMethod {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tli" => Ok(BaselineMethod::Tli),
            "tli-lf" => Ok(BaselineMethod::TliLf),
            other => Err(Error::Config(format!("unknown baseline method {other:?}"))),
        }
    }
}

/// Runs a non-learned baseline over one masked input file.
pub fn cmd_baseline(method: BaselineMethod, input_base: &Path, out_base: &Path) -> Result<()> {
    let xbar = gridfile::to_field(&gridfile::read(input_base)?)?;
    let filled = match method {
        BaselineMethod::Tli => baselines::tli(&xbar),
        BaselineMethod::TliLf => baselines::tli_with_fill(&xbar).field,
    };
    let g = gridfile::from_field(&filled, "field", "normalized", 0);
    gridfile::write(out_base, &g.header, &g.data)
}

/// Per-window metrics for aligned prediction/truth/mask volumes.
pub fn evaluate_windows(
    preds: &[FieldVolume],
    truths: &[FieldVolume],
    masks: &[MaskVolume],
    ms_ssim_scales: usize,
) -> Result<Vec<WindowMetrics>> {
    if preds.len() != truths.len() || preds.len() != masks.len() || preds.is_empty() {
        return Err(Error::Data("evaluate: window lists must be nonempty and aligned".into()));
    }
    let mut out = Vec::with_capacity(preds.len());
    for ((pred, truth), mask) in preds.iter().zip(truths).zip(masks) {
        if pred.dims() != truth.dims() || pred.dims() != mask.dims() {
            return Err(Error::Data("evaluate: window dims disagree".into()));
        }
        let hole = HoleDomain::from_observation_mask(mask);
        out.push(WindowMetrics {
            rmse: metrics::rmse_hole(pred, truth, &hole)?,
            tg_rmse: metrics::tg_rmse(pred, truth, &hole)?,
            pearson: metrics::pearson_hole(pred, truth, &hole)?,
            ms_ssim: metrics::ms_ssim_hole(pred, truth, &hole, ms_ssim_scales)?.0,
            bdi: metrics::bdi(pred, truth, &hole)?,
        });
    }
    Ok(out)
}

/// Builds the full report: per-window records plus bootstrap summaries.
pub fn build_report(windows: Vec<WindowMetrics>, resamples: usize, seed: u64) -> Result<MetricReport> {
    let mut summaries = Vec::new();
    let columns: [(&str, Box<dyn Fn(&WindowMetrics) -> Option<f64>>); 5] = [
        ("rmse", Box::new(|w: &WindowMetrics| Some(w.rmse))),
        ("tg_rmse", Box::new(|w: &WindowMetrics| Some(w.tg_rmse))),
        ("pearson", Box::new(|w: &WindowMetrics| w.pearson)),
        ("ms_ssim", Box::new(|w: &WindowMetrics| Some(w.ms_ssim))),
        ("bdi", Box::new(|w: &WindowMetrics| Some(w.bdi))),
    ];
    for (name, get) in columns {
        let values: Vec<f64> = windows.iter().filter_map(&get).collect();
        if values.is_empty() {
            continue;
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let (lo, hi) = if values.len() >= 2 {
            metrics::bootstrap_ci(&values, 0.95, resamples, seed)?
        } else {
            (mean, mean)
        };
        // Guard the interval invariant against bootstrap quantile noise.
        summaries.push(SummaryLine {
            metric: name.to_string(),
            mean,
            lo: lo.min(mean),
            hi: hi.max(mean),
        });
    }
    let report = MetricReport { windows, summaries };
    report.validate()?;
    Ok(report)
}

/// CLI entry: evaluates aligned prediction/truth/mask grid files and writes
/// the report.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    pred_bases: &[PathBuf],
    truth_bases: &[PathBuf],
    mask_bases: &[PathBuf],
    out_path: &Path,
) -> Result<MetricReport> {
    if pred_bases.len() != truth_bases.len() || pred_bases.len() != mask_bases.len() {
        return Err(Error::Data("evaluate: file lists must be aligned".into()));
    }
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    let mut masks = Vec::new();
    for ((p, t), m) in pred_bases.iter().zip(truth_bases).zip(mask_bases) {
        preds.push(gridfile::to_field(&gridfile::read(p)?)?);
        truths.push(gridfile::to_field(&gridfile::read(t)?)?);
        masks.push(gridfile::to_mask(&gridfile::read(m)?)?);
    }
    let windows = evaluate_windows(&preds, &truths, &masks, cfg.ms_ssim_scales)?;
    let report = build_report(windows, cfg.bootstrap_resamples, cfg.seed)?;
    atomic_write(out_path, report.to_text().as_bytes())?;
    Ok(report)
}

/// Metric means over the evaluation windows for one model variant, with an
/// optional condition group blanked before sampling.
#[allow(clippy::too_many_arguments)]
fn ablation_means(
    cfg: &RunConfig,
    net: &UNet,
    store: &ParamStore,
    eval_items: &[TrainItem],
    blank_group: Option<usize>,
    k: usize,
) -> Result<MetricMeans> {
    let sched = cfg.noise_schedule()?;
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    let mut masks = Vec::new();
    for (widx, item) in eval_items.iter().enumerate() {
        let xbar = condition::mask_apply(&item.x0, &item.mask)?;
        let mut cond = condition::assemble_condition_from_aux(&xbar, &item.mask, &item.aux)?;
        if let Some(g) = blank_group {
            cond.blank_group(g);
        }
        let (l, h, w) = item.x0.dims();
        let mut mean = vec![0.0; l * h * w];
        for member in 0..k {
            let mut rng = StdRng::seed_from_u64(cfg.seed.wrapping_add((widx * k + member) as u64));
            let s = sample_once(cfg, net, store, &xbar, &item.mask, &cond, &sched, &mut rng)?;
            for (acc, &v) in mean.iter_mut().zip(s.data()) {
                *acc += v;
            }
        }
        for v in &mut mean {
            *v /= k as f64;
        }
        for (i, (&mk, &obs)) in item.mask.data().iter().zip(xbar.data()).enumerate() {
            if mk == 1 {
                mean[i] = obs;
            }
        }
        preds.push(FieldVolume::from_vec(l, h, w, mean)?);
        truths.push(item.x0.clone());
        masks.push(item.mask.clone());
    }
    let windows = evaluate_windows(&preds, &truths, &masks, cfg.ms_ssim_scales)?;
    let n = windows.len() as f64;
    Ok(MetricMeans {
        rmse: windows.iter().map(|w| w.rmse).sum::<f64>() / n,
        ms_ssim: windows.iter().map(|w| w.ms_ssim).sum::<f64>() / n,
        tg_rmse: windows.iter().map(|w| w.tg_rmse).sum::<f64>() / n,
        bdi: windows.iter().map(|w| w.bdi).sum::<f64>() / n,
    })
}

/// Re-runs sampling with each condition group forced to the missing
/// sentinel and derives the per-group contributions.
pub fn cmd_ablate(cfg: &RunConfig, ckpt_path: &Path, data_dir: &Path, out_path: &Path) -> Result<SensitivityTable> {
    let (net, store) = load_eval_model(cfg, ckpt_path)?;
    let n_eval = count_split(data_dir, "eval");
    if n_eval == 0 {
        return Err(Error::Data(format!("no evaluation sequences under {}", data_dir.display())));
    }
    let eval_items: Vec<TrainItem> = (0..n_eval)
        .map(|i| load_sequence(data_dir, "eval", i))
        .collect::<Result<_>>()?;
    let k = cfg.ensemble;
    let full = ablation_means(cfg, &net, &store, &eval_items, None, k)?;
    let mut ablated = Vec::new();
    for (g, (name, _)) in CHANNEL_GROUPS.iter().enumerate() {
        let means = ablation_means(cfg, &net, &store, &eval_items, Some(g), k)?;
        ablated.push((name.to_string(), means));
    }
    let table = metrics::sensitivity(&full, &ablated)?;
    let mut text = String::new();
    text.push_str("group delta contribution\n");
    for (i, g) in table.groups.iter().enumerate() {
        let r = table
            .contribution
            .as_ref()
            .map(|c| c[i].to_string())
            .unwrap_or_else(|| "undef".to_string());
        text.push_str(&format!("{g} {} {r}\n", table.delta[i]));
    }
    atomic_write(out_path, text.as_bytes())?;
    Ok(table)
}

/// Gradient stops of the rendering colormap (value 0 -> deep blue,
/// 1 -> bright yellow); the missing sentinel renders as mid gray.
pub const RENDER_MISSING_GRAY: [u8; 3] = [128, 128, 128];

fn colormap(v: f64) -> [u8; 3] {
    let stops: [(f64, [f64; 3]); 3] = [
        (0.0, [15.0, 25.0, 80.0]),
        (0.5, [40.0, 160.0, 140.0]),
        (1.0, [250.0, 240.0, 80.0]),
    ];
    let v = v.clamp(0.0, 1.0);
    let (a, b) = if v <= 0.5 { (stops[0], stops[1]) } else { (stops[1], stops[2]) };
    let t = (v - a.0) / (b.0 - a.0);
    let mut rgb = [0u8; 3];
    for (i, c) in rgb.iter_mut().enumerate() {
        *c = (a.1[i] + t * (b.1[i] - a.1[i])).round() as u8;
    }
    rgb
}

/// Renders each frame of a single-channel grid file as a binary PPM image,
/// `(H, W)` pixels, with missing values in the documented gray.
pub fn cmd_render(field_base: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let grid = gridfile::read(field_base)?;
    if grid.header.dims[0] != 1 {
        return Err(Error::Data("render expects a single-channel grid".into()));
    }
    let [_, l, h, w] = grid.header.dims;
    std::fs::create_dir_all(out_dir)?;
    let stem = field_base
        .file_name()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "field".to_string());
    let mut written = Vec::with_capacity(l);
    for f in 0..l {
        let mut ppm = format!("P6\n{w} {h}\n255\n").into_bytes();
        for i in 0..h {
            for j in 0..w {
                let v = grid.data[(f * h + i) * w + j] as f64;
                let rgb = if v == MISSING { RENDER_MISSING_GRAY } else { colormap(v) };
                ppm.extend_from_slice(&rgb);
            }
        }
        let path = out_dir.join(format!("{stem}.frame{f:02}.ppm"));
        atomic_write(&path, &ppm)?;
        written.push(path);
    }
    Ok(written)
}
