use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use lsf_core::baseline::{pretrain_encoder, pretraining_subset, ModalityEncoder};
use lsf_core::costmodel::{write_scaling_table, ScalingRow};
use lsf_core::dataset::{LatentSet, WindowDataset};
use lsf_core::fusion::{self, evaluate, write_curve, ClassifierHead, Metrics, SequenceSample};
use lsf_core::ingest::{load_labels, load_stream, prepare_windows, Schema};
use lsf_core::nn::Tensor;
use lsf_core::pipeline::{
    baseline_cost, build_sequences, encode_modalities, fit_and_evaluate, fuse_windows, head_config,
    images_for, median, permutation, pipeline_shape, split_samples, time_encoding, unified_cost,
    BaselineEncoders, EncodedModalities, LatentEncoder, WindowSet,
};
use lsf_core::spectral::{Colormap, SpectralImage};
use lsf_core::synthetic::{generic_images, stress_stream};
use lsf_core::vqvae::{reconstruction_mse, train_vqvae, write_loss_curve, VqVaeModel};
use lsf_core::weights::{load_store, save_store};

use crate::config::RunConfig;
use crate::exit::UsageError;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn load_windows(path: &Path) -> Result<WindowSet> {
    let ds = WindowDataset::load(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ds.window_set()?)
}

pub fn synth(cfg: &RunConfig, out: &Path, noise: bool) -> Result<()> {
    let stream = stress_stream(&cfg.stream(noise))?;
    let names: Vec<&str> = stream.channel_names().collect();
    let columns: Vec<Vec<f64>> = names
        .iter()
        .map(|n| stream.channel(n).and_then(|c| c.values()).expect("synthetic channels are complete"))
        .collect();
    let mut w = csv::Writer::from_writer(create(out)?);
    let mut header = vec![cfg.timestamp_column.as_str()];
    header.extend(&names);
    header.push(&cfg.label_column);
    w.write_record(&header)?;
    let n = columns.first().map_or(0, Vec::len);
    for i in 0..n {
        let mut row = vec![format!("{}", i as f64 / cfg.rate_hz)];
        row.extend(columns.iter().map(|c| c[i].to_string()));
        row.push(stream.labels.label_at(i).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    log::info!("wrote {n} samples of {} channels to {}", names.len(), out.display());
    Ok(())
}

pub fn ingest(cfg: &RunConfig, input: &Path, labels: Option<&Path>, out: &Path) -> Result<()> {
    let mut schema = Schema::identity(&cfg.columns);
    schema.timestamp_column = cfg.timestamp_column.clone();
    schema.rate_hz = cfg.source_rate_hz;
    if labels.is_none() {
        schema = schema.with_label_column(&cfg.label_column);
    }
    let mut stream = load_stream(input, &schema)?;
    if let Some(path) = labels {
        stream.labels = load_labels(path)?;
    }
    let windows = prepare_windows(&stream, cfg.rate_hz, &cfg.window())?;
    let ds = WindowDataset::from_channels(&windows)?;
    ds.save(out).with_context(|| format!("writing {}", out.display()))?;
    log::info!(
        "wrote {} windows ({} channels × {}) to {}",
        ds.windows.len(),
        ds.channels.len(),
        ds.windows.len() / ds.channels.len().max(1),
        out.display()
    );
    Ok(())
}

pub fn dump(input: &Path, out: Option<&Path>) -> Result<()> {
    let ds = WindowDataset::load(input).with_context(|| format!("reading {}", input.display()))?;
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["channel".to_string(), "start_index".into(), "label".into()];
    header.extend((0..ds.window_len).map(|i| format!("v{i}")));
    w.write_record(&header)?;
    for win in &ds.windows {
        let mut row = vec![win.channel_name.clone(), win.start_index.to_string(), win.label.to_string()];
        // Stored as f32, so print the shortest f32 representation.
        row.extend(win.values.iter().map(|&v| (v as f32).to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn train_encoder(cfg: &RunConfig, out: &Path, curve: Option<&Path>, windows: Option<&Path>) -> Result<()> {
    let images: Vec<Tensor<f32>> = match windows {
        None => generic_images(cfg.train_images, cfg.seed),
        Some(path) => {
            let set = load_windows(path)?;
            let all: Vec<Tensor<f32>> = images_for(&set, &cfg.modalities, &cfg.spectral(), &Colormap::default())?
                .into_values()
                .flatten()
                .map(SpectralImage::into_pixels)
                .collect();
            pretraining_subset(all.len(), cfg.train_images, cfg.seed)
                .into_iter()
                .map(|i| all[i].clone())
                .collect()
        }
    };
    log::info!("training encoder on {} images for {} steps", images.len(), cfg.steps);
    let (model, losses) = train_vqvae(&images, &cfg.vq())?;
    if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
        log::info!(
            "reconstruction loss {:.5} -> {:.5}; final mse {:.5}",
            first.reconstruction,
            last.reconstruction,
            reconstruction_mse(&model, &images)?
        );
    }
    model.save(out).with_context(|| format!("writing {}", out.display()))?;
    if let Some(p) = curve {
        write_loss_curve(&losses, create(p)?)?;
    }
    Ok(())
}

pub fn encode(cfg: &RunConfig, encoder: &Path, windows: &Path, out: &Path) -> Result<()> {
    let model = VqVaeModel::load(encoder)
        .with_context(|| format!("reading {}", encoder.display()))?
        .into_inference();
    let set = load_windows(windows)?;
    let images = images_for(&set, &cfg.modalities, &cfg.spectral(), &Colormap::default())?;
    let encoded = encode_modalities(&model, &images, &cfg.modalities)?;
    log::info!(
        "encoded {} windows × {} modalities with {} encoder load(s)",
        set.len(),
        cfg.modalities.len(),
        encoded.encoder_loads
    );
    let latents = LatentSet::new(cfg.modalities.clone(), set.starts, set.labels, encoded.latents)?;
    latents.save(out).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

/// Sequences of the selected modalities, split as in training.
fn split_sequences(cfg: &RunConfig, latents: &LatentSet) -> Result<(Vec<SequenceSample>, Vec<SequenceSample>)> {
    if let Some(m) = cfg.modalities.iter().find(|m| !latents.modalities.contains(m)) {
        return Err(UsageError(format!(
            "modality `{m}` is not in the latent file (has {})",
            latents.modalities.join(",")
        ))
        .into());
    }
    let fused = fuse_windows(&latents.latents, &cfg.modalities)?;
    let samples = build_sequences(&fused, &latents.labels, cfg.l, cfg.seq_stride)?;
    Ok(split_samples(&samples, cfg.test_fraction, cfg.seed))
}

pub fn train_classifier(cfg: &RunConfig, latents: &Path, out: &Path, curve: Option<&Path>) -> Result<()> {
    let set = LatentSet::load(latents).with_context(|| format!("reading {}", latents.display()))?;
    let (train, test) = split_sequences(cfg, &set)?;
    log::info!("training classifier on {} sequences ({} held out)", train.len(), test.len());
    let exp = cfg.experiment();
    let (head, stats) = fusion::train_classifier(&train, head_config(cfg.modalities.len(), set.shape[0], cfg.l), &exp.train)?;
    for s in &stats {
        log::debug!("epoch {} loss {:.5} accuracy {:.3}", s.epoch, s.loss, s.accuracy);
    }
    save_store(head.params(), out).with_context(|| format!("writing {}", out.display()))?;
    if let Some(p) = curve {
        write_curve(&stats, create(p)?)?;
    }
    Ok(())
}

pub enum EvalSource {
    Model { latents: PathBuf, head: PathBuf },
    Scores(PathBuf),
}

#[derive(Clone, Copy)]
pub enum EvalSplit {
    Train,
    Test,
    All,
}

fn read_scores(path: &Path) -> Result<(Vec<f64>, Vec<u8>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = || anyhow::anyhow!("{}: line {}: expected `score,label`", path.display(), i + 2);
        scores.push(rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?);
        labels.push(rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?);
    }
    Ok((scores, labels))
}

pub fn eval(cfg: &RunConfig, source: EvalSource, split: EvalSplit, out: Option<&Path>) -> Result<()> {
    let metrics = match source {
        EvalSource::Scores(path) => {
            let (scores, labels) = read_scores(&path)?;
            Metrics::from_scores(&scores, &labels, cfg.threshold)?
        }
        EvalSource::Model { latents, head } => {
            let set = LatentSet::load(&latents).with_context(|| format!("reading {}", latents.display()))?;
            let params = load_store(&head).with_context(|| format!("reading {}", head.display()))?;
            let head = ClassifierHead::from_params(head_config(cfg.modalities.len(), set.shape[0], cfg.l), params)?;
            let (train, test) = split_sequences(cfg, &set)?;
            let data = match split {
                EvalSplit::Train => train,
                EvalSplit::Test if !test.is_empty() => test,
                _ => train.into_iter().chain(test).collect(),
            };
            evaluate(&head, &data, cfg.threshold)?
        }
    };
    let json = serde_json::to_string_pretty(&metrics)?;
    println!("{json}");
    if let Some(p) = out {
        let mut w = create(p)?;
        writeln!(w, "{json}")?;
        w.flush()?;
    }
    Ok(())
}

pub enum BenchSystems {
    Synthetic,
    Files {
        encoder: PathBuf,
        baseline_dir: PathBuf,
        windows: PathBuf,
    },
}

pub struct BenchOptions {
    pub systems: BenchSystems,
    pub range: RangeInclusive<usize>,
    pub repeats: usize,
    pub metrics: bool,
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct RuntimeRow {
    #[serde(rename = "M")]
    m: usize,
    runtime_s_unified: f64,
    runtime_s_baseline: f64,
    gap_s: f64,
}

#[derive(Serialize)]
struct RuntimeRun {
    #[serde(rename = "M")]
    m: usize,
    system: &'static str,
    repeat: usize,
    seconds: f64,
}

#[derive(Serialize)]
struct MetricsRow {
    #[serde(rename = "M")]
    m: usize,
    modalities: String,
    unified_accuracy: f64,
    unified_f1: f64,
    unified_auc: Option<f64>,
    baseline_accuracy: f64,
    baseline_f1: f64,
    baseline_auc: Option<f64>,
}

#[derive(Serialize)]
struct MacsRow {
    #[serde(rename = "M")]
    m: usize,
    unified_macs: u64,
    baseline_macs: u64,
    unified_energy_j: f64,
    baseline_energy_j: f64,
    unified_traffic_bytes: u64,
    baseline_traffic_bytes: u64,
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn build_systems(
    cfg: &RunConfig,
    opts: &BenchOptions,
    all: &[String],
) -> Result<(WindowSet, BTreeMap<String, Vec<SpectralImage>>, VqVaeModel, BaselineEncoders)> {
    let spectral = cfg.spectral();
    let cmap = Colormap::default();
    match &opts.systems {
        BenchSystems::Files {
            encoder,
            baseline_dir,
            windows,
        } => {
            let set = load_windows(windows)?;
            let images = images_for(&set, all, &spectral, &cmap)?;
            let vq = VqVaeModel::load(encoder)
                .with_context(|| format!("reading {}", encoder.display()))?
                .into_inference();
            let encs = all
                .iter()
                .map(|m| {
                    let p = baseline_dir.join(format!("{m}.lsfw"));
                    ModalityEncoder::load(m, &p).with_context(|| format!("reading {}", p.display()))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((set, images, vq, BaselineEncoders::new(encs)?))
        }
        BenchSystems::Synthetic => {
            let stream = stress_stream(&cfg.stream(false))?;
            let set = lsf_core::pipeline::window_set(&stream, cfg.rate_hz, &cfg.window())?;
            let images = images_for(&set, all, &spectral, &cmap)?;
            if !opts.metrics {
                log::info!("timing and cost only: encoders are left untrained");
                let vq = VqVaeModel::new(cfg.k, cfg.d, cfg.seed)?.into_inference();
                return Ok((set, images, vq, BaselineEncoders::untrained(all, cfg.d, cfg.seed)?));
            }
            log::info!("training shared encoder on {} generic images", cfg.train_images);
            let (vq, _) = train_vqvae(&generic_images(cfg.train_images, cfg.seed), &cfg.vq())?;
            let pre = cfg.pretrain();
            let mut encs = Vec::new();
            for m in all {
                let data: Vec<(Tensor<f32>, u8)> = pretraining_subset(set.len(), pre.samples, cfg.seed)
                    .into_iter()
                    .map(|i| (images[m][i].pixels().clone(), set.labels[i]))
                    .collect();
                log::info!("pretraining `{m}` encoder on {} images", data.len());
                encs.push(pretrain_encoder(m, &data, &pre)?.0);
            }
            Ok((set, images, vq.into_inference(), BaselineEncoders::new(encs)?))
        }
    }
}

fn timed(
    enc: &dyn LatentEncoder,
    fixed: &BTreeMap<String, SpectralImage>,
    order: &[String],
    m: usize,
    system: &'static str,
    repeats: usize,
    runs: &mut Vec<RuntimeRun>,
) -> Result<f64> {
    let times = time_encoding(enc, fixed, order, repeats)?;
    for (repeat, &seconds) in times.iter().enumerate() {
        log::info!("M={m} {system} run {repeat}: {seconds:.6} s");
        runs.push(RuntimeRun {
            m,
            system,
            repeat,
            seconds,
        });
    }
    Ok(median(&times))
}

pub fn bench(cfg: &RunConfig, opts: &BenchOptions) -> Result<()> {
    let all = permutation(*opts.range.end())?;
    let (set, images, vq, base) = build_systems(cfg, opts, &all)?;
    let fixed: BTreeMap<String, SpectralImage> = images
        .iter()
        .map(|(m, v)| {
            v.first()
                .cloned()
                .map(|img| (m.clone(), img))
                .ok_or_else(|| anyhow::anyhow!("no windows to benchmark"))
        })
        .collect::<Result<_>>()?;
    let encoded: Option<(EncodedModalities, EncodedModalities)> = if opts.metrics {
        Some((
            encode_modalities(&vq, &images, &all)?,
            encode_modalities(&base, &images, &all)?,
        ))
    } else {
        None
    };

    let cost_cfg = cfg.cost();
    let exp = cfg.experiment();
    let (mut scaling, mut runtime, mut runs, mut metrics, mut macs) = (vec![], vec![], vec![], vec![], vec![]);
    for m in opts.range.clone() {
        let order = permutation(m)?;
        let shape = pipeline_shape(&order, cfg.l, cfg.window_len, &cfg.spectral());
        let u = unified_cost(&vq, &shape, &cost_cfg)?;
        let b = baseline_cost(&base, &shape, &cost_cfg)?;
        let mut row = ScalingRow::from_costs(&u, &b, &cost_cfg);
        row.runtime_s_unified = timed(&vq, &fixed, &order, m, "unified", opts.repeats, &mut runs)?;
        row.runtime_s_baseline = timed(&base, &fixed, &order, m, "baseline", opts.repeats, &mut runs)?;
        let (ut, bt) = (u.inference(&cost_cfg), b.inference(&cost_cfg));
        macs.push(MacsRow {
            m,
            unified_macs: ut.macs,
            baseline_macs: bt.macs,
            unified_energy_j: ut.energy_j,
            baseline_energy_j: bt.energy_j,
            unified_traffic_bytes: ut.fetch_bytes + ut.write_bytes,
            baseline_traffic_bytes: bt.fetch_bytes + bt.write_bytes,
        });
        runtime.push(RuntimeRow {
            m,
            runtime_s_unified: row.runtime_s_unified,
            runtime_s_baseline: row.runtime_s_baseline,
            gap_s: row.runtime_s_baseline - row.runtime_s_unified,
        });
        scaling.push(row);
        if let Some((ue, be)) = &encoded {
            let ur = fit_and_evaluate(ue, &set.labels, &order, vq.embedding_dim(), &exp)?;
            let br = fit_and_evaluate(be, &set.labels, &order, base.embedding_dim(), &exp)?;
            log::info!(
                "M={m} accuracy unified {:.3} baseline {:.3}",
                ur.test_metrics.accuracy,
                br.test_metrics.accuracy
            );
            metrics.push(MetricsRow {
                m,
                modalities: order.join("+"),
                unified_accuracy: ur.test_metrics.accuracy,
                unified_f1: ur.test_metrics.f1,
                unified_auc: ur.test_metrics.auc,
                baseline_accuracy: br.test_metrics.accuracy,
                baseline_f1: br.test_metrics.f1,
                baseline_auc: br.test_metrics.auc,
            });
        }
    }

    let dir = &opts.out_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join("scaling_table.csv");
    write_scaling_table(&scaling, create(&path)?)?;
    log::info!("wrote {}", path.display());
    write_rows(&dir.join("fig3_runtime.csv"), &runtime)?;
    write_rows(&dir.join("fig3_runtime_runs.csv"), &runs)?;
    write_rows(&dir.join("fig5_macs.csv"), &macs)?;
    if opts.metrics {
        write_rows(&dir.join("fig4_metrics.csv"), &metrics)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CostSummary {
    system: &'static str,
    modalities: String,
    encoder_loads: usize,
    macs: u64,
    inference_macs: u64,
    encoder_params: u64,
    fetch_bytes: u64,
    write_bytes: u64,
    energy_j: f64,
}

pub fn cost(cfg: &RunConfig, baseline: bool, out: Option<&Path>) -> Result<()> {
    let shape = pipeline_shape(&cfg.modalities, cfg.l, cfg.window_len, &cfg.spectral());
    let cost_cfg = cfg.cost();
    let (name, c) = if baseline {
        let base = BaselineEncoders::untrained(&cfg.modalities, cfg.d, cfg.seed)?;
        ("baseline", baseline_cost(&base, &shape, &cost_cfg)?)
    } else {
        let vq = VqVaeModel::new(cfg.k, cfg.d, cfg.seed)?.into_inference();
        ("unified", unified_cost(&vq, &shape, &cost_cfg)?)
    };
    let total = c.total(&cost_cfg);
    if let Some(p) = out {
        total.write_breakdown(create(p)?)?;
    }
    let summary = CostSummary {
        system: name,
        modalities: cfg.modalities.join("+"),
        encoder_loads: c.encoder_loads,
        macs: total.macs,
        inference_macs: c.inference(&cost_cfg).macs,
        encoder_params: c.encode.params,
        fetch_bytes: total.fetch_bytes,
        write_bytes: total.write_bytes,
        energy_j: total.energy_j,
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}
