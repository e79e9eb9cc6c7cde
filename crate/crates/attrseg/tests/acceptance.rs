//! Acceptance suite: one test per criterion, each printing a PASS line
//! with its measured numbers (run with `--nocapture` to see them).
//!
//! ```bash
//! cargo test -p attrseg --test acceptance -- --nocapture --test-threads=1
//! ```

use std::collections::BTreeMap;

use attrseg::bundle::build_benchmark;
use attrseg::cli::ablate::{run_suite, Suite};
use attrseg::cli::cache::{cache_digest, cache_traces, CacheOptions, PromptArm};
use attrseg::cli::load_backend;
use attrseg::cli::train_cmd::assemble_samples;
use attrseg::datakit::mask::Bitmap;
use attrseg::datakit::rle::{decode_mask, encode_mask};
use attrseg::datakit::{validate_split, Manifest};
use attrseg::metrics::{cider, ciou, giou, iou, rouge_l, CiderItem, EmptyPolicy};
use attrseg::segcore::{
    lam_attention_weights, ImageTensor, ModelConfig, ParamStore, SegModel, TapeBinding,
};
use attrseg::tensor::gradcheck::fd_grad;
use attrseg::tensor::{Mat, Tape};
use attrseg::training::{compute_loss_on, fit, training_giou, TrainConfig, TrainSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tmp(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("attrseg-accept-{}-{name}", std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    dir
}

/// The training-heavy criteria hold this lock so their stated runtime
/// budgets are measured without fighting each other for cores.
static HEAVY: std::sync::Mutex<()> = std::sync::Mutex::new(());

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, density: f64) -> Bitmap {
    Bitmap::from_fn(h, w, |_, _| rng.random::<f64>() < density)
}

/// Criterion 1: metric oracles. iou/giou/ciou match integer pixel counting
/// on 1000 random pairs exactly; the worked batch and text-metric cases hit
/// their stated tolerances.
#[test]
fn acceptance_1_metric_oracles() {
    let started = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);

    // Independent pixel-counting oracle: explicit loops over raw buffers.
    let oracle_iu = |a: &Bitmap, b: &Bitmap| -> (u64, u64) {
        let mut inter = 0u64;
        let mut union = 0u64;
        for y in 0..a.height() {
            for x in 0..a.width() {
                let (p, g) = (a.get(y, x), b.get(y, x));
                if p == 1 && g == 1 {
                    inter += 1;
                }
                if p == 1 || g == 1 {
                    union += 1;
                }
            }
        }
        (inter, union)
    };

    let mut pairs = Vec::with_capacity(1000);
    for i in 0..1000 {
        let density = 0.05 + 0.9 * (i as f64 / 999.0);
        let pred = random_mask(&mut rng, 20, 20, density);
        let gt = random_mask(&mut rng, 20, 20, 1.0 - density * 0.5);
        pairs.push((pred, gt));
    }
    let mut oracle_inter_sum = 0u64;
    let mut oracle_union_sum = 0u64;
    let mut oracle_iou_sum = 0.0f64;
    for (pred, gt) in &pairs {
        let (i, u) = oracle_iu(pred, gt);
        let oracle_pair_iou = if u == 0 { 1.0 } else { i as f64 / u as f64 };
        // Exact equality: both sides divide the same integers.
        assert_eq!(iou(pred, gt).unwrap(), oracle_pair_iou);
        oracle_inter_sum += i;
        oracle_union_sum += u;
        oracle_iou_sum += oracle_pair_iou;
    }
    assert_eq!(giou(&pairs, EmptyPolicy::ScoreOne).unwrap(), oracle_iou_sum / 1000.0);
    assert_eq!(
        ciou(&pairs, EmptyPolicy::ScoreOne).unwrap(),
        oracle_inter_sum as f64 / oracle_union_sum as f64
    );

    // Worked batch: IoUs {1/3, 1} -> gIoU 2/3, cIoU 3/7.
    let mut pred = Bitmap::zeros(4, 4);
    let mut gt = Bitmap::zeros(4, 4);
    for (y, x) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        pred.set(y, x, true);
    }
    for (y, x) in [(1, 0), (1, 1), (2, 0), (2, 1)] {
        gt.set(y, x, true);
    }
    let ident = Bitmap::from_fn(2, 2, |y, x| y == 0 && x == 0);
    let worked = vec![(pred, gt), (ident.clone(), ident)];
    assert!((giou(&worked, EmptyPolicy::ScoreOne).unwrap() - 2.0 / 3.0).abs() < 1e-9);
    assert!((ciou(&worked, EmptyPolicy::ScoreOne).unwrap() - 3.0 / 7.0).abs() < 1e-9);

    // ROUGE-L worked case.
    let rouge = rouge_l("a c d", "a b c d").f;
    assert!((rouge - 0.8356).abs() < 1e-4, "rouge {rouge}");

    // CIDEr identical-caption case.
    let identical = vec![
        CiderItem {
            hypothesis: "a red circle sits in the upper left".into(),
            references: vec!["a red circle sits in the upper left".into()],
        },
        CiderItem {
            hypothesis: "the blue square fills the lower half".into(),
            references: vec!["the blue square fills the lower half".into()],
        },
    ];
    let identical_score = cider(&identical).unwrap();
    for s in &identical_score.per_item {
        assert!((s - 10.0).abs() < 1e-6, "identical-caption per-item {s}");
    }

    // CIDEr 3-image toy corpus vs a brute-force n-gram oracle (linear
    // scans over Vec-based vectors; no shared code with the implementation).
    let toy = vec![
        CiderItem {
            hypothesis: "a large red circle in the image".into(),
            references: vec![
                "the large red circle sits in the image".into(),
                "a big red circle in the picture".into(),
            ],
        },
        CiderItem {
            hypothesis: "a dog runs over green grass".into(),
            references: vec!["a brown dog runs across the green grass".into()],
        },
        CiderItem {
            hypothesis: "the yellow kite flies above the beach".into(),
            references: vec!["a yellow kite floats above the sandy beach".into()],
        },
    ];
    let got = cider(&toy).unwrap();
    let expect = brute_force_cider(&toy);
    assert!(
        (got.corpus - expect).abs() < 1e-6,
        "toy corpus: implementation {} vs oracle {expect}",
        got.corpus
    );

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "criterion 1 took {elapsed:.1}s (budget 10s)");
    println!(
        "acceptance 1 (metric oracles): PASS — 1000 exact pairs; rouge {rouge:.4}; cider toy {:.6} in {elapsed:.1}s",
        got.corpus
    );
}

/// Fully independent CIDEr-D: tokenization by hand, n-gram vectors as
/// sorted Vec pairs, document frequencies by linear scan.
fn brute_force_cider(items: &[CiderItem]) -> f64 {
    let toks = |s: &str| -> Vec<String> {
        s.to_lowercase()
            .chars()
            .map(|c| if c.is_alphanumeric() { c } else { ' ' })
            .collect::<String>()
            .split_whitespace()
            .map(str::to_string)
            .collect()
    };
    let grams = |t: &[String], n: usize| -> Vec<Vec<String>> {
        if t.len() < n {
            return Vec::new();
        }
        (0..=t.len() - n).map(|i| t[i..i + n].to_vec()).collect()
    };
    let count_of = |gs: &[Vec<String>], g: &[String]| gs.iter().filter(|x| x.as_slice() == g).count();
    let n_images = items.len() as f64;
    let mut total = 0.0;
    for item in items {
        let hyp = toks(&item.hypothesis);
        let mut per_n_sum = [0.0f64; 4];
        for reference in &item.references {
            let refr = toks(reference);
            let delta = hyp.len() as f64 - refr.len() as f64;
            let penalty = (-(delta * delta) / (2.0 * 36.0)).exp();
            for n in 1..=4usize {
                let hyp_grams = grams(&hyp, n);
                let ref_grams = grams(&refr, n);
                let mut uniq_h: Vec<Vec<String>> = Vec::new();
                for g in &hyp_grams {
                    if !uniq_h.contains(g) {
                        uniq_h.push(g.clone());
                    }
                }
                let mut uniq_r: Vec<Vec<String>> = Vec::new();
                for g in &ref_grams {
                    if !uniq_r.contains(g) {
                        uniq_r.push(g.clone());
                    }
                }
                let idf = |g: &[String]| -> f64 {
                    let mut df = 0.0f64;
                    for other in items {
                        let mut seen = false;
                        for r in &other.references {
                            if grams(&toks(r), n).iter().any(|x| x.as_slice() == g) {
                                seen = true;
                            }
                        }
                        if seen {
                            df += 1.0;
                        }
                    }
                    n_images.ln() - df.max(1.0).ln()
                };
                let mut dot = 0.0;
                for g in &uniq_h {
                    let hw = count_of(&hyp_grams, g) as f64 * idf(g);
                    let rw = count_of(&ref_grams, g) as f64 * idf(g);
                    if rw > 0.0 {
                        dot += hw.min(rw) * rw;
                    }
                }
                let norm = |gs: &[Vec<String>], uniq: &[Vec<String>]| -> f64 {
                    uniq.iter()
                        .map(|g| {
                            let w = count_of(gs, g) as f64 * idf(g);
                            w * w
                        })
                        .sum::<f64>()
                        .sqrt()
                };
                let nh = norm(&hyp_grams, &uniq_h);
                let nr = norm(&ref_grams, &uniq_r);
                if nh > 0.0 && nr > 0.0 {
                    per_n_sum[n - 1] += dot / (nh * nr) * penalty;
                }
            }
        }
        let mean_n = per_n_sum.iter().sum::<f64>() / 4.0;
        total += mean_n / item.references.len() as f64 * 10.0;
    }
    total / items.len() as f64
}

/// Criterion 2: freshly initialized adapters are the identity bit-exactly
/// on 100 random (V, E) pairs, and attention rows sum to 1 within 1e-6.
#[test]
fn acceptance_2_adapter_identity_at_init() {
    let started = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2002);
    let mut max_row_err: f64 = 0.0;
    for case in 0..100u64 {
        let mut store = ParamStore::new();
        let mut init_rng = ChaCha8Rng::seed_from_u64(9000 + case);
        attrseg::segcore::adapter::init_adapter(&mut store, &mut init_rng, 8, 32, 64);
        let rows = 4 + (case as usize % 13);
        let k = 1 + (case as usize % 5);
        let v = Mat::randn(&mut rng, rows, 32, 1.0);
        let e = Mat::randn(&mut rng, k, 32, 1.0);
        let tape = Tape::new();
        let binding = TapeBinding::new(&tape, &store);
        let out = attrseg::segcore::lam_forward(
            &binding,
            8,
            tape.constant(v.clone()),
            tape.constant(e.clone()),
            4,
        )
        .unwrap()
        .value();
        assert_eq!(out.rows(), v.rows());
        for (a, b) in out.data().iter().zip(v.data()) {
            assert_eq!(a.to_bits(), b.to_bits(), "case {case}: identity not bit-exact");
        }
        let weights = lam_attention_weights(&store, 8, &v, &e, 4).unwrap();
        for w in weights {
            for r in 0..w.rows() {
                let sum: f64 = w.row(r).iter().sum();
                max_row_err = max_row_err.max((sum - 1.0).abs());
            }
        }
    }
    assert!(max_row_err < 1e-6, "attention row sums off by {max_row_err}");
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 5.0, "criterion 2 took {elapsed:.1}s (budget 5s)");
    println!(
        "acceptance 2 (adapter identity-at-init): PASS — 100 bit-exact pairs, max row-sum err {max_row_err:.2e} in {elapsed:.1}s"
    );
}

/// Criterion 3: analytic gradients of the combined mask loss through
/// decoder, adapters and projection match central finite differences within
/// 1e-4 relative error on toy shapes.
#[test]
fn acceptance_3_gradient_correctness() {
    let started = std::time::Instant::now();
    let config = ModelConfig {
        d_llm: 8,
        d_vis: 16,
        d_hidden: 16,
        heads: 2,
        d_ffn: 32,
        blocks_per_stage: 1,
        decoder_blocks: 1,
        seed: 3003,
        ..ModelConfig::default()
    };
    let model = SegModel::new(config.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    // 32x32 image -> pyramid levels 4x4 / 2x2 / 1x1 (all <= 8x8); k = 3.
    let img = ImageTensor { h: 32, w: 32, rgb: (0..3 * 32 * 32).map(|_| rng.random()).collect() };
    let pyramid = model.encode_image(&img).unwrap();
    let raw = Mat::randn(&mut rng, 3, 8, 1.0);
    let gt = Mat::from_fn(32 * 32, 1, |r, _| ((r / 7) % 2) as f64);
    let train_cfg = TrainConfig { lambda_bce: 1.0, lambda_dice: 0.5, ..TrainConfig::default() };

    let loss_with = |store: &ParamStore, raw_val: &Mat| -> f64 {
        let probe = SegModel { config: config.clone(), store: store.clone() };
        let tape = Tape::new();
        let binding = TapeBinding::new(&tape, &probe.store);
        let levels = probe.pyramid_on(&tape, &pyramid);
        let logits = probe.logits_on(&binding, &levels, tape.leaf(raw_val.clone())).unwrap();
        compute_loss_on(logits.flat, &gt, &train_cfg).0.scalar()
    };

    // Analytic gradients from one taped pass.
    let tape = Tape::new();
    let binding = TapeBinding::new(&tape, &model.store);
    let levels = model.pyramid_on(&tape, &pyramid);
    let raw_var = tape.leaf(raw.clone());
    let logits = model.logits_on(&binding, &levels, raw_var).unwrap();
    let (total, _, _) = compute_loss_on(logits.flat, &gt, &train_cfg);
    let grads = total.backward();

    // Input-side gradient (through the whole stack) on every entry.
    let fd_raw = fd_grad(&raw, |m| loss_with(&model.store, m), 1e-5);
    let analytic_raw = grads.get(raw_var).unwrap();
    let mut worst: (f64, String) = (0.0, String::new());
    let mut checked_entries = 0usize;
    for i in 0..raw.len() {
        let (a, n) = (analytic_raw.data()[i], fd_raw.data()[i]);
        let err = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        if err > worst.0 {
            worst = (err, format!("prompt-embedding[{i}]"));
        }
        checked_entries += 1;
    }

    // Parameter gradients: probe a deterministic subset of entries in every
    // trainable parameter touched by the forward pass.
    for (name, var) in binding.bound() {
        if !model.store.is_trainable(&name) {
            continue;
        }
        let Some(analytic) = grads.get(var) else { continue };
        let base = model.store.get(&name).clone();
        let stride = (base.len() / 6).max(1);
        for i in (0..base.len()).step_by(stride) {
            let mut probe_store = model.store.clone();
            let numeric = {
                let h = 1e-5;
                let mut plus = base.clone();
                plus.data_mut()[i] += h;
                probe_store.set_value(&name, plus);
                let fp = loss_with(&probe_store, &raw);
                let mut minus = base.clone();
                minus.data_mut()[i] -= h;
                probe_store.set_value(&name, minus);
                let fm = loss_with(&probe_store, &raw);
                (fp - fm) / (2.0 * h)
            };
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if err > worst.0 {
                worst = (err, format!("{name}[{i}]"));
            }
            checked_entries += 1;
        }
    }
    assert!(
        worst.0 < 1e-4,
        "gradient mismatch at {}: rel err {:.3e}",
        worst.1,
        worst.0
    );
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "criterion 3 took {elapsed:.1}s (budget 60s)");
    println!(
        "acceptance 3 (gradient correctness): PASS — {checked_entries} entries, worst rel err {:.2e} at {} in {elapsed:.1}s",
        worst.0, worst.1
    );
}

fn benchmark_samples(
    dir: &std::path::Path,
    train_count: usize,
    eval_count: usize,
    seed: u64,
    model: &SegModel,
) -> (Vec<TrainSample>, Manifest) {
    let paths = build_benchmark(dir, train_count, eval_count, 64, seed).unwrap();
    let backend = load_backend(&paths.backend_descriptor).unwrap();
    let manifest = Manifest::load(&paths.train_manifest).unwrap();
    let cache_dir = dir.join("cache_train");
    let opts = CacheOptions { seed, ..CacheOptions::default() };
    let report = cache_traces(&manifest, backend.as_ref(), &cache_dir, &opts).unwrap();
    assert!(report.failures.is_empty(), "caching failed: {:?}", report.failures);
    let samples = assemble_samples(model, &manifest, &cache_dir, PromptArm::FullChain).unwrap();
    (samples, manifest)
}

/// Criterion 4: 10-sample overfit reaches train gIoU > 0.95 in 500
/// iterations with the encoder bit-identical before and after.
#[test]
fn acceptance_4_overfit_smoke() {
    let _serial = HEAVY.lock().unwrap_or_else(std::sync::PoisonError::into_inner);
    let started = std::time::Instant::now();
    let dir = tmp("overfit");
    let mut model = SegModel::new(ModelConfig { seed: 4004, ..ModelConfig::default() });
    let (samples, _) = benchmark_samples(&dir, 10, 2, 4004, &model);
    assert_eq!(samples.len(), 10);
    let encoder_before = model.store.clone();
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 8,
        total_iterations: 500,
        seed: 4004,
        ..TrainConfig::default()
    };
    fit(&mut model, &samples, &cfg, &dir.join("train"), None).unwrap();
    let train_giou = training_giou(&model, &samples).unwrap();
    assert!(train_giou > 0.95, "train gIoU {train_giou} after 500 iterations");
    for name in model.store.names().filter(|n| n.starts_with("encoder.")) {
        assert!(
            model.store.param_bits_equal(&encoder_before, name),
            "frozen encoder parameter {name} changed"
        );
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 600.0, "criterion 4 took {elapsed:.1}s (budget 600s)");
    println!(
        "acceptance 4 (overfit smoke): PASS — train gIoU {train_giou:.4}, encoder frozen, in {elapsed:.0}s"
    );
    std::fs::remove_dir_all(&dir).ok();
}

/// Criterion 5: ablation direction checks on the synthetic benchmark
/// (500 train / 100 eval, shared seed): full-chain >= name-only and
/// multi-scale >= single-scale, each with a 0.01 gIoU margin.
#[test]
fn acceptance_5_ablation_directions() {
    let _serial = HEAVY.lock().unwrap_or_else(std::sync::PoisonError::into_inner);
    let started = std::time::Instant::now();
    let dir = tmp("ablation");
    let data = dir.join("data");
    build_benchmark(&data, 500, 100, 64, 5005).unwrap();

    let steps =
        run_suite(Suite::PromptSteps, &data, &dir.join("steps"), 5005, 800, 8, 1e-3).unwrap();
    let arm = |report: &attrseg::cli::ablate::AblationReport, label: &str| -> f64 {
        report.arms.iter().find(|a| a.arm == label).map(|a| a.giou).unwrap()
    };
    let full = arm(&steps, "full-chain");
    let name_only = arm(&steps, "steps1+2");
    assert!(
        full >= name_only - 0.01,
        "full-chain gIoU {full:.4} should not trail name-only {name_only:.4}"
    );

    let scales = run_suite(Suite::Scales, &data, &dir.join("scales"), 5005, 800, 8, 1e-3).unwrap();
    let multi = arm(&scales, "multi-scale");
    let single = arm(&scales, "single-scale");
    assert!(
        multi >= single - 0.01,
        "multi-scale gIoU {multi:.4} should not trail single-scale {single:.4}"
    );

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 1800.0, "criterion 5 took {elapsed:.0}s (budget 1800s)");
    println!(
        "acceptance 5 (ablation directions): PASS — prompt steps {:.4}/{:.4}/{:.4} (reason/name/full), scales {single:.4} -> {multi:.4}, in {elapsed:.0}s",
        arm(&steps, "step1-only"), name_only, full
    );
    std::fs::remove_dir_all(&dir).ok();
}

/// Criterion 6: identical seeds give identical loss logs; resume continues
/// the identical sequence; trace caching is idempotent.
#[test]
fn acceptance_6_determinism_and_resume() {
    let _serial = HEAVY.lock().unwrap_or_else(std::sync::PoisonError::into_inner);
    let started = std::time::Instant::now();
    let dir = tmp("determinism");
    let model_cfg = ModelConfig { seed: 6006, ..ModelConfig::default() };
    let base = SegModel::new(model_cfg.clone());
    let (samples, manifest) = benchmark_samples(&dir, 6, 2, 6006, &base);

    let cfg = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 4,
        total_iterations: 24,
        checkpoint_every: 12,
        seed: 6006,
        ..TrainConfig::default()
    };
    // Two runs from identical seeds.
    let mut run_a = SegModel::new(model_cfg.clone());
    let report_a = fit(&mut run_a, &samples, &cfg, &dir.join("a"), None).unwrap();
    let mut run_b = SegModel::new(model_cfg.clone());
    let report_b = fit(&mut run_b, &samples, &cfg, &dir.join("b"), None).unwrap();
    assert_eq!(report_a.records.len(), report_b.records.len());
    for (ra, rb) in report_a.records.iter().zip(&report_b.records) {
        assert_eq!(ra.total.to_bits(), rb.total.to_bits(), "iteration {}", ra.iteration);
        assert_eq!(ra.bce.to_bits(), rb.bce.to_bits());
        assert_eq!(ra.dice.to_bits(), rb.dice.to_bits());
    }

    // Resume from the mid checkpoint continues the identical sequence.
    let mut resumed = SegModel::new(model_cfg.clone());
    let report_r = fit(
        &mut resumed,
        &samples,
        &cfg,
        &dir.join("resumed"),
        Some(&dir.join("a").join("ckpt_000012.bin")),
    )
    .unwrap();
    assert_eq!(report_r.records.len(), 12);
    for (ra, rr) in report_a.records[12..].iter().zip(&report_r.records) {
        assert_eq!(ra.total.to_bits(), rr.total.to_bits(), "iteration {}", ra.iteration);
    }
    for name in run_a.store.names() {
        assert!(run_a.store.param_bits_equal(&resumed.store, name), "{name} differs after resume");
    }

    // Trace caching is idempotent: rerun makes zero backend calls and the
    // digest is unchanged.
    let backend = load_backend(&dir.join("backend.json")).unwrap();
    let cache_dir = dir.join("cache_train");
    let opts = CacheOptions { seed: 6006, ..CacheOptions::default() };
    let digest_before = cache_digest(&cache_dir).unwrap();
    let rerun = cache_traces(&manifest, backend.as_ref(), &cache_dir, &opts).unwrap();
    assert_eq!(rerun.backend_calls, 0, "rerun must not call the backend");
    assert_eq!(rerun.cached, 0);
    assert_eq!(cache_digest(&cache_dir).unwrap(), digest_before);

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "criterion 6 took {elapsed:.0}s (budget 300s)");
    println!(
        "acceptance 6 (determinism and resume): PASS — {} bit-identical loss records, exact resume, idempotent cache, in {elapsed:.0}s",
        report_a.records.len()
    );
    std::fs::remove_dir_all(&dir).ok();
}

/// Criterion 7: the mask codec round-trips 1000 random masks and the split
/// validator reports exactly a planted train/eval overlap.
#[test]
fn acceptance_7_data_integrity() {
    let started = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7007);
    for case in 0..1000 {
        let h = 1 + (case % 24);
        let w = 1 + ((case * 7) % 24);
        let mask = random_mask(&mut rng, h, w, 0.35);
        let back = decode_mask(&encode_mask(&mask)).unwrap();
        assert_eq!(back, mask, "roundtrip failed at case {case}");
    }

    // Planted overlap detection.
    let record = |image: &str| attrseg::datakit::SampleRecord {
        sample_id: format!("id-{image}"),
        image: image.into(),
        mask: attrseg::datakit::MaskRef::Rle(encode_mask(&Bitmap::zeros(2, 2))),
        category: attrseg::datakit::Category::Semantic,
        phrase: Some("thing".into()),
        query: None,
        description: None,
    };
    let train: Vec<_> = (0..50).map(|i| record(&format!("t{i}.ppm"))).collect();
    let mut eval: Vec<_> = (0..50).map(|i| record(&format!("e{i}.ppm"))).collect();
    let clean = validate_split(&train, &eval);
    assert!(clean.is_clean());
    eval.push(record("t17.ppm"));
    let leaked = validate_split(&train, &eval);
    assert_eq!(leaked.overlap, vec!["t17.ppm".to_string()]);

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "criterion 7 took {elapsed:.1}s (budget 10s)");
    println!(
        "acceptance 7 (data integrity): PASS — 1000 codec roundtrips, planted leak detected, in {elapsed:.1}s"
    );
}

/// Model checkpoints written by training stay loadable for inference and a
/// BTreeMap of metadata survives.
#[test]
fn checkpoint_meta_is_preserved() {
    let dir = tmp("ckpt-meta");
    std::fs::create_dir_all(&dir).unwrap();
    let model = SegModel::new(ModelConfig {
        d_llm: 8,
        d_vis: 16,
        d_hidden: 16,
        heads: 2,
        d_ffn: 32,
        blocks_per_stage: 1,
        decoder_blocks: 1,
        seed: 1,
        ..ModelConfig::default()
    });
    let mut meta = BTreeMap::new();
    meta.insert("note".to_string(), "hello".to_string());
    let path = dir.join("m.ckpt");
    model.save(&path, &meta).unwrap();
    let (_, loaded_meta) = SegModel::load(&path).unwrap();
    assert_eq!(loaded_meta.get("note").map(String::as_str), Some("hello"));
    std::fs::remove_dir_all(&dir).ok();
}
