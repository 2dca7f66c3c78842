//! The pipeline stages behind each subcommand.

use std::io::Write;
use std::path::{Path, PathBuf};

use eend_core::model::{export_attention, forward};
use eend_core::scoring::{binarize, default_speaker_names, der_counts, labels_to_segments, DerConfig, DerCounts};
use eend_core::simulator::{sample_mixture, speaker_pool};
use eend_core::training::{fine_tune_with, train_with, EpochStats, TrainOutcome};
use eend_core::{FeatureSequence, Matrix, ModelConfig, ModelParams, Rng, SegmentList};

use crate::config::RunConfig;
use crate::dataset::{self, Manifest, MixtureRecord};
use crate::error::{CliError, Result};
use crate::{checkpoint, featcache, rttm, wav};

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(CliError::io(path))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(CliError::io(path))
}

/// Simulates `sim.n_mixtures` mixtures into `out`. Mixture `i` is drawn
/// from stream `i` of the run seed.
pub fn simulate(cfg: &RunConfig, out: &Path, write_features: bool) -> Result<Manifest> {
    let spec = cfg.sim_spec();
    let noise = cfg.noise_source();
    let speakers = speaker_pool(cfg.sim.n_speaker_pool, 0, cfg.sim.speaker_seed);
    let feats = cfg.feature_config();
    for sub in ["wav", "rttm"] {
        create_dir(&out.join(sub))?;
    }
    if write_features {
        create_dir(&out.join("feats"))?;
    }
    let meta_path = out.join(dataset::METADATA);
    let mut meta = Vec::new();
    let mut ids = Vec::with_capacity(cfg.sim.n_mixtures);
    let mut overlaps = Vec::with_capacity(cfg.sim.n_mixtures);
    let mut total_duration = 0.0;
    for i in 0..cfg.sim.n_mixtures {
        let id = dataset::mixture_id(i);
        let m = sample_mixture(&spec, &speakers, &noise, &mut Rng::stream(cfg.seed, i as u64))?;
        let names: Vec<String> = m.speaker_ids.iter().map(|&s| dataset::speaker_name(s)).collect();
        let segs = labels_to_segments(&m.labels, 0.01, &names)?;
        wav::write_wav(&dataset::wav_path(out, &id), &m.waveform, m.sample_rate)?;
        rttm::write_recording(&out.join("rttm"), &id, &segs)?;
        if write_features {
            featcache::save(&out.join("feats").join(format!("{id}.feats")), &feats.extract(&m.waveform)?)?;
        }
        let record = MixtureRecord {
            id: id.clone(),
            seed: cfg.seed,
            stream: i as u64,
            duration_s: m.duration_s(),
            overlap_ratio: m.overlap_ratio,
            speakers: names,
            n_utterances: m.utterances.len(),
            sim: cfg.sim.clone(),
        };
        serde_json::to_writer(&mut meta, &record).map_err(|e| CliError::format(&meta_path, e))?;
        meta.push(b'\n');
        total_duration += m.duration_s();
        overlaps.push(m.overlap_ratio);
        ids.push(id);
    }
    write_file(&meta_path, meta)?;
    let (mean, stdev) = dataset::mean_stdev(&overlaps);
    let manifest = Manifest {
        n_mixtures: ids.len(),
        sample_rate: spec.sample_rate,
        seed: cfg.seed,
        total_duration_s: total_duration,
        overlap_ratio_mean: mean,
        overlap_ratio_stdev: stdev,
        recordings: ids,
        sim: cfg.sim.clone(),
    };
    let path = out.join(dataset::MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::format(&path, e))?;
    write_file(&path, json + "\n")?;
    Ok(manifest)
}

/// Files produced by `train` and `adapt`.
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub final_checkpoint: PathBuf,
    pub averaged_checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub curve: Vec<EpochStats>,
}

/// Writes per-epoch checkpoints as training runs; the first write error
/// is kept and reported once training returns.
struct EpochWriter<'a> {
    dir: PathBuf,
    cfg: &'a ModelConfig,
    error: Option<CliError>,
    every: usize,
    quiet: bool,
}

impl EpochWriter<'_> {
    fn on_epoch(&mut self, s: &EpochStats, p: &ModelParams) {
        if !self.quiet {
            eprintln!("epoch {:4}  loss {:.6}  lr {:.3e}", s.epoch, s.mean_loss, s.lr);
        }
        if self.error.is_none() && self.every > 0 && s.epoch % self.every == 0 {
            let path = self.dir.join(format!("epoch_{:04}.ckpt", s.epoch));
            self.error = checkpoint::save(&path, self.cfg, p).err();
        }
    }
}

fn write_training_outputs(
    cfg: &RunConfig,
    model: &ModelConfig,
    out: &Path,
    outcome: TrainOutcome,
    writer: EpochWriter<'_>,
) -> Result<TrainArtifacts> {
    if let Some(e) = writer.error {
        return Err(e);
    }
    let final_checkpoint = out.join("final.ckpt");
    let averaged_checkpoint = out.join("averaged.ckpt");
    checkpoint::save(&final_checkpoint, model, &outcome.final_params)?;
    checkpoint::save(&averaged_checkpoint, model, &outcome.averaged)?;
    let loss_csv = out.join("loss.csv");
    let mut w = csv::Writer::from_path(&loss_csv).map_err(|e| CliError::format(&loss_csv, e))?;
    let wrap = |e: csv::Error| CliError::format(&loss_csv, e);
    w.write_record(["epoch", "mean_loss", "lr"]).map_err(wrap)?;
    for s in &outcome.curve {
        w.write_record([s.epoch.to_string(), s.mean_loss.to_string(), s.lr.to_string()])
            .map_err(wrap)?;
    }
    w.flush().map_err(CliError::io(&loss_csv))?;
    write_file(&out.join("config.toml"), cfg.to_toml())?;
    Ok(TrainArtifacts {
        final_checkpoint,
        averaged_checkpoint,
        loss_csv,
        curve: outcome.curve,
    })
}

fn prepare_run(out: &Path) -> Result<PathBuf> {
    let ckpt_dir = out.join("checkpoints");
    create_dir(&ckpt_dir)?;
    Ok(ckpt_dir)
}

/// Trains from scratch on the dataset in `data`, writing into `out`.
pub fn train(cfg: &RunConfig, data: &Path, out: &Path, quiet: bool) -> Result<TrainArtifacts> {
    let recs = dataset::load_recordings(data)?;
    let feats = cfg.feature_config();
    let model = cfg.model_config(feats.output_dim());
    model.validate()?;
    let examples = dataset::examples(&recs, &feats, model.n_speakers)?;
    let mut writer = EpochWriter {
        dir: prepare_run(out)?,
        cfg: &model,
        error: None,
        every: cfg.train.checkpoint_every,
        quiet,
    };
    let outcome = train_with(&model, &examples, &cfg.train_config(), |s, p| writer.on_epoch(s, p))?;
    write_training_outputs(cfg, &model, out, outcome, writer)
}

/// Fine-tunes `checkpoint` on `data` at the constant adaptation rate.
pub fn adapt(cfg: &RunConfig, checkpoint_path: &Path, data: &Path, out: &Path, quiet: bool) -> Result<TrainArtifacts> {
    let (model, params) = checkpoint::load(checkpoint_path)?;
    let feats = cfg.feature_config();
    if model.input_dim != feats.output_dim() {
        return Err(CliError::Config(format!(
            "checkpoint expects {}-dimensional features, the feature config gives {}",
            model.input_dim,
            feats.output_dim()
        )));
    }
    let recs = dataset::load_recordings(data)?;
    let examples = dataset::examples(&recs, &feats, model.n_speakers)?;
    let mut writer = EpochWriter {
        dir: prepare_run(out)?,
        cfg: &model,
        error: None,
        every: cfg.train.checkpoint_every,
        quiet,
    };
    let outcome = fine_tune_with(
        &model,
        params,
        &examples,
        cfg.adapt.lr,
        cfg.adapt.epochs,
        &cfg.train_config(),
        |s, p| writer.on_epoch(s, p),
    )?;
    write_training_outputs(cfg, &model, out, outcome, writer)
}

/// An inference input: a WAV file, a feature file, or a dataset directory.
fn input_features(cfg: &RunConfig, input: &Path) -> Result<Vec<(String, FeatureSequence)>> {
    let feats = cfg.feature_config();
    let one = |path: &Path| -> Result<(String, FeatureSequence)> {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| CliError::format(path, "file name is not valid UTF-8"))?
            .to_string();
        if path.extension().is_some_and(|e| e == "feats") {
            return Ok((id, featcache::load(path)?));
        }
        let (wave, sr) = wav::read_wav(path)?;
        if sr != feats.logmel.sample_rate {
            return Err(CliError::format(path, format!("sample rate {sr} Hz, expected {}", feats.logmel.sample_rate)));
        }
        Ok((id, feats.extract(&wave)?))
    };
    if input.is_file() {
        return Ok(vec![one(input)?]);
    }
    let dir = if input.join("wav").is_dir() { input.join("wav") } else { input.to_path_buf() };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(CliError::io(&dir))?
        .map(|e| e.map(|e| e.path()).map_err(CliError::io(&dir)))
        .collect::<Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "wav" || e == "feats"));
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Usage(format!("no .wav or .feats files in {}", dir.display())));
    }
    paths.iter().map(|p| one(p)).collect()
}

fn check_dims(model: &ModelConfig, id: &str, x: &FeatureSequence) -> Result<()> {
    if x.dim() != model.input_dim {
        return Err(CliError::Usage(format!(
            "{id}: features have dimension {} but the checkpoint expects {}",
            x.dim(),
            model.input_dim
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct InferOptions {
    pub threshold: f64,
    pub median_window: usize,
    pub write_posteriors: bool,
}

/// Full-sequence inference; writes `<id>.rttm` (and `<id>.posteriors.csv`)
/// into `out` and returns the segments per recording.
pub fn infer(
    cfg: &RunConfig,
    checkpoint_path: &Path,
    input: &Path,
    out: &Path,
    opts: &InferOptions,
) -> Result<Vec<(String, SegmentList)>> {
    let (model, params) = checkpoint::load(checkpoint_path)?;
    let inputs = input_features(cfg, input)?;
    create_dir(out)?;
    let names = default_speaker_names(model.n_speakers);
    let mut results = Vec::with_capacity(inputs.len());
    for (id, x) in inputs {
        check_dims(&model, &id, &x)?;
        let (z, _) = forward(&params, &model, &x)?;
        if opts.write_posteriors {
            write_matrix_csv(&out.join(format!("{id}.posteriors.csv")), &z)?;
        }
        let labels = binarize(&z, opts.threshold, opts.median_window)?;
        let segs = labels_to_segments(&labels, x.frame_shift_s, &names)?;
        rttm::write_recording(out, &id, &segs)?;
        results.push((id, segs));
    }
    Ok(results)
}

pub fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| CliError::format(path, e))?;
    for t in 0..m.rows() {
        w.write_record(m.row(t).iter().map(|v| v.to_string()))
            .map_err(|e| CliError::format(path, e))?;
    }
    w.flush().map_err(CliError::io(path))
}

/// Per-recording and pooled DER counts.
#[derive(Debug, Clone)]
pub struct ScoreResult {
    pub per_file: Vec<(String, DerCounts)>,
    pub total: DerCounts,
    pub config: DerConfig,
}

/// Scores every hypothesis recording against its reference. Ids present on
/// only one side are an error listing all of them.
pub fn score(ref_path: &Path, hyp_path: &Path, config: DerConfig) -> Result<ScoreResult> {
    let refs = rttm::read_rttm_set(ref_path)?;
    let hyps = rttm::read_rttm_set(hyp_path)?;
    let mut unmatched: Vec<String> = refs
        .keys()
        .filter(|k| !hyps.contains_key(*k))
        .map(|k| format!("{k} (reference only)"))
        .collect();
    unmatched.extend(hyps.keys().filter(|k| !refs.contains_key(*k)).map(|k| format!("{k} (hypothesis only)")));
    if !unmatched.is_empty() {
        return Err(CliError::Unmatched(unmatched));
    }
    if refs.is_empty() {
        return Err(CliError::Usage(format!("no RTTM files found in {}", ref_path.display())));
    }
    let mut per_file = Vec::with_capacity(refs.len());
    let mut total = DerCounts::default();
    for (id, r) in &refs {
        let c = der_counts(r, &hyps[id], &config)?;
        total += c;
        per_file.push((id.clone(), c));
    }
    Ok(ScoreResult { per_file, total, config })
}

/// Writes `<prefix>.csv` and `<prefix>.pgm` for one attention matrix and
/// returns it. `block` and `head` are 0-based.
pub fn dump_attention(
    cfg: &RunConfig,
    checkpoint_path: &Path,
    input: &Path,
    block: usize,
    head: usize,
    prefix: &Path,
) -> Result<Matrix> {
    let (model, params) = checkpoint::load(checkpoint_path)?;
    if block >= model.n_blocks || head >= model.n_heads {
        return Err(CliError::Usage(format!(
            "block {block} / head {head} out of range for {} blocks of {} heads (0-based)",
            model.n_blocks, model.n_heads
        )));
    }
    if !input.is_file() {
        return Err(CliError::Usage(format!("{} is not a file", input.display())));
    }
    let (id, x) = input_features(cfg, input)?.remove(0);
    check_dims(&model, &id, &x)?;
    let (_, cache) = forward(&params, &model, &x)?;
    let a = export_attention(&cache, block, head)?;
    if let Some(parent) = prefix.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_matrix_csv(&prefix.with_extension("csv"), &a)?;
    write_file(&prefix.with_extension("pgm"), pgm(&a))?;
    Ok(a)
}

/// Plain (P2) grayscale image: 0 is white, the matrix maximum is black.
pub fn pgm(m: &Matrix) -> String {
    let max = m.data().iter().cloned().fold(0.0, f64::max);
    let mut out = Vec::new();
    writeln!(out, "P2\n{} {}\n255", m.cols(), m.rows()).expect("writing to memory");
    for t in 0..m.rows() {
        let row: Vec<String> = m
            .row(t)
            .iter()
            .map(|&v| {
                let level = if max > 0.0 { (255.0 * v.max(0.0) / max).round() } else { 0.0 };
                (255 - level as u32).to_string()
            })
            .collect();
        writeln!(out, "{}", row.join(" ")).expect("writing to memory");
    }
    String::from_utf8(out).expect("ASCII")
}
