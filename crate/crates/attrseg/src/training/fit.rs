//! The optimization loop: batched gradient steps on the trainable set,
//! append-only loss log, periodic checkpoints and exact resume. Training
//! consumes precomputed embeddings and frozen-encoder pyramids, so no
//! backend is in the loop.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;

use super::loss::{compute_loss_on, TrainConfig, TrainError};
use super::optim::AdamW;
use crate::datakit::mask::Bitmap;
use crate::metrics::{giou, EmptyPolicy};
use crate::segcore::{FeaturePyramid, SegModel, TapeBinding};
use crate::tensor::{Mat, Tape, Var};

/// One training sample, fully materialized: frozen-encoder pyramid, raw
/// prompt embeddings and the ground-truth mask.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub sample_id: String,
    pub pyramid: FeaturePyramid,
    /// `k x d_llm` raw backend embeddings for the prompt.
    pub raw_prompt: Mat,
    /// Ground truth as a `(h*w) x 1` column of 0/1.
    pub gt_flat: Mat,
    pub gt_mask: Bitmap,
}

pub fn bitmap_to_column(mask: &Bitmap) -> Mat {
    Mat::from_vec(
        mask.height() * mask.width(),
        1,
        mask.data().iter().map(|&v| v as f64).collect(),
    )
}

#[derive(Clone, Copy, Debug)]
pub struct LossRecord {
    pub iteration: u64,
    pub total: f64,
    pub bce: f64,
    pub dice: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

impl LossRecord {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{:.12}\t{:.12}\t{:.12}\t{}\t{:.3}",
            self.iteration, self.total, self.bce, self.dice, self.lr, self.wall_ms
        )
    }

    pub fn parse_line(line: &str) -> Option<Self> {
        let mut parts = line.split('\t');
        Some(Self {
            iteration: parts.next()?.parse().ok()?,
            total: parts.next()?.parse().ok()?,
            bce: parts.next()?.parse().ok()?,
            dice: parts.next()?.parse().ok()?,
            lr: parts.next()?.parse().ok()?,
            wall_ms: parts.next()?.parse().ok()?,
        })
    }
}

/// One gradient step over a batch. Gradients are collected for trainable
/// parameters only; the frozen encoder never moves.
pub fn train_step(
    model: &mut SegModel,
    optim: &mut AdamW,
    batch: &[&TrainSample],
    cfg: &TrainConfig,
    iteration: u64,
) -> Result<(f64, f64, f64), TrainError> {
    assert!(!batch.is_empty(), "train_step needs a non-empty batch");
    let tape = Tape::new();
    let binding = TapeBinding::new(&tape, &model.store);
    let mut totals: Option<Var> = None;
    let mut bces: Option<Var> = None;
    let mut dices: Option<Var> = None;
    for sample in batch {
        let levels = model.pyramid_on(&tape, &sample.pyramid);
        let raw = tape.constant(sample.raw_prompt.clone());
        let logits = model.logits_on(&binding, &levels, raw)?;
        if logits.flat.rows() != sample.gt_flat.rows() {
            return Err(TrainError::Shape(format!(
                "sample {}: logits {} pixels vs gt {}",
                sample.sample_id,
                logits.flat.rows(),
                sample.gt_flat.rows()
            )));
        }
        let (t, b, d) = compute_loss_on(logits.flat, &sample.gt_flat, cfg);
        totals = Some(match totals { Some(acc) => acc.add(t), None => t });
        bces = Some(match bces { Some(acc) => acc.add(b), None => b });
        dices = Some(match dices { Some(acc) => acc.add(d), None => d });
    }
    let scale = 1.0 / batch.len() as f64;
    let total = totals.expect("non-empty batch").scale(scale);
    let bce = bces.expect("non-empty batch").scale(scale).scalar();
    let dice = dices.expect("non-empty batch").scale(scale).scalar();
    let total_value = total.scalar();
    if !total_value.is_finite() {
        return Err(TrainError::Divergence {
            iteration,
            batch_ids: batch.iter().map(|s| s.sample_id.clone()).collect(),
        });
    }
    let grads = total.backward();
    let mut grad_map = BTreeMap::new();
    for (name, var) in binding.bound() {
        if model.store.is_trainable(&name) {
            if let Some(g) = grads.get(var) {
                grad_map.insert(name, g.clone());
            }
        }
    }
    optim.apply(&mut model.store, &grad_map);
    Ok((total_value, bce, dice))
}

#[derive(Debug)]
pub struct FitReport {
    pub final_checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub records: Vec<LossRecord>,
}

fn checkpoint_path(out_dir: &Path, iteration: u64) -> PathBuf {
    out_dir.join(format!("ckpt_{iteration:06}.bin"))
}

fn save_checkpoint(
    model: &SegModel,
    optim: &AdamW,
    iteration: u64,
    path: &Path,
) -> Result<(), TrainError> {
    let mut combined = model.store.clone();
    optim.export_state(&mut combined);
    let mut meta = BTreeMap::new();
    meta.insert(
        "model_config".to_string(),
        serde_json::to_string(&model.config).expect("config serializes"),
    );
    meta.insert("iteration".to_string(), iteration.to_string());
    combined.save(path, &meta)?;
    Ok(())
}

/// Restores model parameters, optimizer state and the iteration counter.
pub fn load_checkpoint(
    model: &mut SegModel,
    optim: &mut AdamW,
    path: &Path,
) -> Result<u64, TrainError> {
    let (loaded, meta) = SegModel::load(path)?;
    if loaded.config != model.config {
        return Err(TrainError::Config(format!(
            "checkpoint config differs from run config ({})",
            path.display()
        )));
    }
    model.store = loaded.store;
    let (raw, _) = crate::segcore::ParamStore::load(path)?;
    optim.import_state(&raw);
    Ok(meta.get("iteration").and_then(|s| s.parse().ok()).unwrap_or(0))
}

/// Runs `total_iterations` steps (resuming when asked), checkpointing every
/// `checkpoint_every` iterations plus a final checkpoint. Batches are a
/// pure function of (seed, iteration), so a resumed run continues the
/// identical sequence.
pub fn fit(
    model: &mut SegModel,
    samples: &[TrainSample],
    cfg: &TrainConfig,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<FitReport, TrainError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(TrainError::Config("no training samples".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut optim = AdamW::from_config(cfg);
    let start_iteration = match resume {
        Some(path) => load_checkpoint(model, &mut optim, path)?,
        None => 0,
    };
    let log_path = out_dir.join("loss_log.tsv");
    let mut log = std::fs::OpenOptions::new().create(true).append(true).open(&log_path)?;
    let started = Instant::now();
    let mut records = Vec::new();
    for iteration in start_iteration..cfg.total_iterations {
        let mut rng = crate::rng::derive_rng_indexed(cfg.seed, "batch", iteration);
        let batch: Vec<&TrainSample> =
            (0..cfg.batch_size).map(|_| &samples[rng.random_range(0..samples.len())]).collect();
        let (total, bce, dice) = train_step(model, &mut optim, &batch, cfg, iteration)?;
        let record = LossRecord {
            iteration,
            total,
            bce,
            dice,
            lr: cfg.learning_rate,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        writeln!(log, "{}", record.to_line())?;
        records.push(record);
        let done = iteration + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.total_iterations
        {
            save_checkpoint(model, &optim, done, &checkpoint_path(out_dir, done))?;
        }
    }
    let final_path = out_dir.join("ckpt_final.bin");
    save_checkpoint(model, &optim, cfg.total_iterations, &final_path)?;
    Ok(FitReport { final_checkpoint: final_path, loss_log: log_path, records })
}

/// Mean IoU of thresholded predictions over a sample set (training-side
/// health metric).
pub fn training_giou(model: &SegModel, samples: &[TrainSample]) -> Result<f64, TrainError> {
    let mut pairs = Vec::with_capacity(samples.len());
    for sample in samples {
        let tape = Tape::new();
        let binding = TapeBinding::new(&tape, &model.store);
        let levels = model.pyramid_on(&tape, &sample.pyramid);
        let raw = tape.constant(sample.raw_prompt.clone());
        let logits = model.logits_on(&binding, &levels, raw)?;
        let mask = SegModel::logits_to_mask(&logits.to_mat(), logits.h, logits.w);
        pairs.push((mask, sample.gt_mask.clone()));
    }
    giou(&pairs, EmptyPolicy::ScoreOne)
        .map_err(|e| TrainError::Config(format!("evaluation failed: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segcore::{ImageTensor, ModelConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_model(seed: u64) -> SegModel {
        SegModel::new(ModelConfig {
            d_llm: 8,
            d_vis: 16,
            d_hidden: 16,
            heads: 2,
            d_ffn: 32,
            blocks_per_stage: 1,
            decoder_blocks: 1,
            seed,
            ..ModelConfig::default()
        })
    }

    fn toy_samples(model: &SegModel, n: usize) -> Vec<TrainSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        (0..n)
            .map(|i| {
                let img = ImageTensor {
                    h: 32,
                    w: 32,
                    rgb: (0..3 * 32 * 32).map(|_| rng.random::<f64>()).collect(),
                };
                let pyramid = model.encode_image(&img).unwrap();
                let gt_mask = Bitmap::from_fn(32, 32, |y, x| (y / 8 + x / 8 + i) % 2 == 0);
                TrainSample {
                    sample_id: format!("s{i}"),
                    pyramid,
                    raw_prompt: Mat::randn(&mut rng, 4, 8, 1.0),
                    gt_flat: bitmap_to_column(&gt_mask),
                    gt_mask,
                }
            })
            .collect()
    }

    fn quick_cfg(iters: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            total_iterations: iters,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn frozen_encoder_untouched_and_loss_decreases() {
        let mut model = toy_model(1);
        let samples = toy_samples(&model, 3);
        let before = model.store.clone();
        let dir = std::env::temp_dir().join(format!("attrseg-fit-{}", std::process::id()));
        let report = fit(&mut model, &samples, &quick_cfg(30), &dir.join("a"), None).unwrap();
        assert_eq!(report.records.len(), 30);
        for name in model.store.names().filter(|n| n.starts_with("encoder.")) {
            assert!(model.store.param_bits_equal(&before, name), "{name} moved");
        }
        // Adapters must have moved.
        assert!(!model.store.param_bits_equal(&before, "adapter.s8.attn.o.w"));
        let first = report.records.first().unwrap().total;
        let last = report.records.last().unwrap().total;
        assert!(last < first, "loss did not decrease: {first} -> {last}");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn zero_iterations_checkpoint_equals_init() {
        let mut model = toy_model(2);
        let samples = toy_samples(&model, 2);
        let init = model.store.clone();
        let dir = std::env::temp_dir().join(format!("attrseg-fit0-{}", std::process::id()));
        let cfg = TrainConfig { total_iterations: 0, ..quick_cfg(0) };
        let report = fit(&mut model, &samples, &cfg, &dir, None).unwrap();
        let (loaded, _) = SegModel::load(&report.final_checkpoint).unwrap();
        for name in init.names() {
            assert!(init.param_bits_equal(&loaded.store, name), "{name} differs");
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn resume_continues_identical_loss_sequence() {
        let dir = std::env::temp_dir().join(format!("attrseg-resume-{}", std::process::id()));
        // Full run: 12 iterations with a checkpoint at 6.
        let mut full = toy_model(3);
        let samples = toy_samples(&full, 3);
        let cfg = TrainConfig { checkpoint_every: 6, ..quick_cfg(12) };
        let full_report = fit(&mut full, &samples, &cfg, &dir.join("full"), None).unwrap();

        // Fresh model resumed from the mid checkpoint.
        let mut resumed = toy_model(3);
        let resume_path = dir.join("full").join("ckpt_000006.bin");
        let resumed_report =
            fit(&mut resumed, &samples, &cfg, &dir.join("resumed"), Some(&resume_path)).unwrap();
        assert_eq!(resumed_report.records.len(), 6);
        for (a, b) in full_report.records[6..].iter().zip(&resumed_report.records) {
            assert_eq!(a.iteration, b.iteration);
            assert_eq!(a.total.to_bits(), b.total.to_bits(), "iteration {}", a.iteration);
            assert_eq!(a.bce.to_bits(), b.bce.to_bits());
            assert_eq!(a.dice.to_bits(), b.dice.to_bits());
        }
        // Final parameters agree bit-for-bit.
        for name in full.store.names() {
            assert!(full.store.param_bits_equal(&resumed.store, name), "{name} differs");
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn divergence_reports_batch_ids() {
        let mut model = toy_model(4);
        let mut samples = toy_samples(&model, 1);
        // Poison the prompt so the forward pass goes non-finite.
        samples[0].raw_prompt = Mat::from_fn(4, 8, |_, _| f64::INFINITY);
        let mut optim = AdamW::from_config(&quick_cfg(1));
        let batch: Vec<&TrainSample> = samples.iter().collect();
        let err = train_step(&mut model, &mut optim, &batch, &quick_cfg(1), 7).unwrap_err();
        match err {
            TrainError::Divergence { iteration, batch_ids } => {
                assert_eq!(iteration, 7);
                assert_eq!(batch_ids, vec!["s0".to_string()]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
