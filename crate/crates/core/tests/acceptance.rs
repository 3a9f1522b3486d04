//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fail.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use chroma_core::autodiff::gradcheck::DEFAULT_TOLERANCE;
use chroma_core::autodiff::Tape;
use chroma_core::colorspace::{assemble, extract_grayscale, lab_to_srgb, normalize, rgb_to_lab, srgb_to_lab, RgbImage};
use chroma_core::dataset::{uniform_noise, Corpus};
use chroma_core::inference::{colorize, GanColorizer};
use chroma_core::network::{ChannelTarget, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec};
use chroma_core::training::{d_loss, g_loss, l2_loss, Checkpoint, NetworkGradCheck, TrainConfig, Trainer};
use chroma_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Smooth, face-like test image: a warm central blob over soft gradients.
fn smooth_image(size: usize, variant: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(variant);
    let (cx, cy): (f32, f32) = (rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7));
    let tint: [f32; 3] = [rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15)];
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f32 / (size - 1) as f32, y as f32 / (size - 1) as f32);
            let (dx, dy) = (fx - cx, fy - cy);
            let blob = (-(dx * dx + dy * dy) / 0.05).exp();
            data.extend([
                0.45 + 0.35 * blob + 0.1 * fx + tint[0],
                0.35 + 0.15 * blob + 0.2 * fy + tint[1],
                0.30 + 0.25 * (1.0 - fy) - 0.1 * blob + tint[2],
            ]);
        }
    }
    RgbImage::new(size, size, data).unwrap()
}

fn corpus(n: usize, size: usize) -> Corpus {
    let images = (0..n as u64)
        .map(|i| (PathBuf::from(format!("img{i:02}.png")), smooth_image(size, i)))
        .collect();
    Corpus::from_images(size, images).unwrap()
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let check = NetworkGradCheck::default();
    let report = check.run().map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(
        report.passes(DEFAULT_TOLERANCE) && elapsed < Duration::from_secs(60),
        format!(
            "width {} size {}: max_rel_err={:.3e} over {} coords in {:.1?} (need < 1e-4, < 60 s)",
            check.base_width, check.image_size, report.max_rel_err, report.checked, elapsed
        ),
    )
}

fn colorspace_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 20_000;
    let mut worst = 0f64;
    for _ in 0..n {
        let rgb = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
        let back = lab_to_srgb(srgb_to_lab(rgb));
        for c in 0..3 {
            worst = worst.max((back[c] - rgb[c]).abs());
        }
    }
    let white = srgb_to_lab([1.0, 1.0, 1.0]);
    let black = srgb_to_lab([0.0, 0.0, 0.0]);
    let red = srgb_to_lab([1.0, 0.0, 0.0]);
    let refs_ok = (white[0] - 100.0).abs() < 1e-3
        && black.iter().all(|v| v.abs() < 1e-9)
        && (red[0] - 53.24).abs() <= 0.05
        && (red[1] - 80.09).abs() <= 0.05
        && (red[2] - 67.20).abs() <= 0.05;
    ensure(
        worst < 1.0 / 255.0 && refs_ok,
        format!(
            "{n} pixels max round-trip err {worst:.2e} (< {:.2e}); white L={:.4}, black L={:.4}, red=({:.2}, {:.2}, {:.2})",
            1.0 / 255.0,
            white[0],
            black[0],
            red[0],
            red[1],
            red[2]
        ),
    )
}

fn loss_oracles() -> Outcome {
    let mut tape = Tape::<f64>::new();
    let half = tape.constant(Tensor::full([3, 1], 0.5));
    let d = d_loss(&mut tape, half, half).map_err(|e| e.to_string())?;
    let d_val = tape.value(d).data()[0];
    let d_ok = (d_val - 2.0 * 2f64.ln()).abs() <= 1e-6;

    let mut t32 = Tape::<f32>::new();
    let h32 = t32.constant(Tensor::full([2, 1], 0.5));
    let d32 = d_loss(&mut t32, h32, h32).map_err(|e| e.to_string())?;
    let d32_ok = (f64::from(t32.value(d32).data()[0]) - 2.0 * 2f64.ln()).abs() <= 1e-6;

    // hand-built batch: per-example means (0.25+4)/2 and (0.25+0.25)/2, batch loss 1.1875
    let pred = Tensor::new([2, 1, 1, 2], vec![1.0, 2.0, 0.5, -0.5]).unwrap();
    let target = Tensor::new([2, 1, 1, 2], vec![0.5, 0.0, 0.0, 0.0]).unwrap();
    let mut tape = Tape::<f64>::new();
    let (p, t) = (tape.constant(pred), tape.constant(target));
    let l2 = l2_loss(&mut tape, p, t).map_err(|e| e.to_string())?;
    let l2_val = tape.value(l2).data()[0];
    let mean_ok = (l2_val - 1.1875).abs() < 1e-15;
    let dprob = tape.constant(Tensor::new([2, 1], vec![0.3, 0.9]).unwrap());
    let g0 = g_loss(&mut tape, p, t, Some(dprob), 0.0).map_err(|e| e.to_string())?;
    let g0_ok = tape.value(g0).data()[0] == l2_val;
    let g1 = g_loss(&mut tape, p, t, Some(dprob), 0.1).map_err(|e| e.to_string())?;
    let expected = 1.1875 + 0.1 * -(0.3f64.ln() + 0.9f64.ln()) / 2.0;
    let g1_ok = (tape.value(g1).data()[0] - expected).abs() < 1e-12;
    ensure(
        d_ok && d32_ok && mean_ok && g0_ok && g1_ok,
        format!(
            "d_loss(0.5,0.5)={d_val:.9} (2ln2={:.9}); l2 batch mean={l2_val} (hand 1.1875); g_loss(w_adv=0)==l2: {g0_ok}; weighted g_loss matches: {g1_ok}",
            2.0 * 2f64.ln()
        ),
    )
}

fn shape_invariants() -> Outcome {
    let g = Generator::<f32>::build(GeneratorSpec::new(4), 1).map_err(|e| e.to_string())?;
    let mut notes = Vec::new();
    let mut ok = true;
    for s in [16, 32, 64] {
        let l = uniform_noise(s as u64, [2, 1, s, s]).map(|v| 0.5 * (v + 1.0));
        let z = uniform_noise(s as u64 + 100, [2, 1, s, s]);
        let out = g.predict(&l, &z, None).map_err(|e| e.to_string())?;
        ok &= out.shape() == [2, 1, s, s];
        let d = Discriminator::<f32>::build(DiscriminatorSpec::new(4, s), 2).map_err(|e| e.to_string())?;
        let probs = d.predict(&l, &out).map_err(|e| e.to_string())?;
        let inside = probs.data().iter().all(|&p| p > 0.0 && p < 1.0);
        ok &= inside && probs.shape() == [2, 1];
        notes.push(format!("S={s} -> {:?}, D in (0,1): {inside}", out.shape()));
    }
    // extreme inputs push the logit hard; the probability must still stay inside
    let d = Discriminator::<f32>::build(DiscriminatorSpec::new(4, 16), 3).map_err(|e| e.to_string())?;
    let big = Tensor::full([1, 1, 16, 16], 1e4f32);
    let probs = d.predict(&big, &big.map(|v| -v)).map_err(|e| e.to_string())?;
    ok &= probs.data().iter().all(|&p| p > 0.0 && p < 1.0);
    for bad in [8, 24, 40] {
        let l = Tensor::<f32>::zeros([1, 1, bad, bad]);
        let rejected = g.predict(&l, &l, None).is_err()
            && Discriminator::<f32>::build(DiscriminatorSpec::new(4, bad), 0).is_err();
        ok &= rejected;
        notes.push(format!("S={bad} rejected: {rejected}"));
    }
    ensure(ok, notes.join("; "))
}

fn overfit_smoke() -> Outcome {
    let start = Instant::now();
    let size = 32;
    let image = smooth_image(size, 0);
    let data = Corpus::from_images(size, vec![(PathBuf::from("face.png"), image.clone())]).unwrap();
    let config = TrainConfig {
        image_size: size,
        base_width: 16,
        batch_norm: true,
        batch_size: 1,
        learning_rate: 0.05,
        adversarial_weight: 0.0,
        epochs: 500,
        seed: 0,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(config).map_err(|e| e.to_string())?;
    let pairs = data.pairs();
    let mut first_below = None;
    let mut last = [f32::NAN; 2];
    for _ in 0..500 {
        trainer
            .train_epoch(&pairs, |r| last[r.channel as usize] = r.g_loss)
            .map_err(|e| e.to_string())?;
        if first_below.is_none() && last.iter().all(|&l| l < 0.01) {
            first_below = Some(trainer.step);
        }
    }
    let colorizer = GanColorizer::from_checkpoint(&Checkpoint::from_trainer(&trainer), None).map_err(|e| e.to_string())?;
    let result = colorize(&colorizer, &image, 0, Some(&image)).map_err(|e| e.to_string())?;
    let ab = result.ab_mse.unwrap();
    let elapsed = start.elapsed();
    ensure(
        first_below.is_some() && ab < 5.0 && elapsed < Duration::from_secs(600),
        format!(
            "L2 < 0.01 for both channels at step {first_below:?}; final L2 A={:.2e} B={:.2e}; colorize ab_mse={ab:.3} (< 5); {:.1?} (< 10 min)",
            last[0], last[1], elapsed
        ),
    )
}

fn adversarial_smoke() -> Outcome {
    let start = Instant::now();
    let data = corpus(16, 32);
    let config = TrainConfig {
        image_size: 32,
        batch_size: 4,
        epochs: 20,
        seed: 7,
        ..TrainConfig::default()
    };
    let (w_adv, width) = (config.adversarial_weight, config.base_width);
    let mut trainer = Trainer::new(config).map_err(|e| e.to_string())?;
    let mut d_losses: Vec<f32> = Vec::new();
    let mut all_finite = true;
    let pairs = data.pairs();
    for _ in 0..20 {
        trainer
            .train_epoch(&pairs, |r| {
                all_finite &= r.d_loss.is_finite() && r.g_loss.is_finite();
                d_losses.push(r.d_loss);
            })
            .map_err(|e| e.to_string())?;
    }
    // two records (A, B) per step
    let tail = &d_losses[d_losses.len() - 100..];
    let min_tail = tail.iter().copied().fold(f32::INFINITY, f32::min);
    ensure(
        all_finite && trainer.step == 80 && min_tail >= 1e-3,
        format!(
            "w_adv={w_adv}, width {width}: {} steps, all finite: {all_finite}; min d_loss over final 50 steps = {min_tail:.4} (>= 1e-3); {:.1?}",
            trainer.step,
            start.elapsed()
        ),
    )
}

fn determinism_and_persistence() -> Outcome {
    let data = corpus(4, 16);
    let config = TrainConfig {
        image_size: 16,
        base_width: 4,
        batch_size: 2,
        epochs: 4,
        seed: 11,
        mode: chroma_core::training::Mode::General,
        ..TrainConfig::default()
    };
    let run = |epochs: u64| {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Trainer::new(TrainConfig { epochs, ..config.clone() }).unwrap();
        t.fit(&data, dir.path()).unwrap();
        (dir, t)
    };
    let (a, ta) = run(4);
    let (b, _) = run(4);
    let csv_a = std::fs::read(a.path().join("metrics.csv")).unwrap();
    let same_csv = csv_a == std::fs::read(b.path().join("metrics.csv")).unwrap();

    let bytes = Checkpoint::from_trainer(&ta).to_bytes();
    let loaded = Checkpoint::from_bytes(&bytes).unwrap();
    let byte_identical = loaded.to_bytes() == bytes;
    let l = uniform_noise(1, [2, 1, 16, 16]).map(|v| v.abs());
    let z = uniform_noise(2, [2, 1, 16, 16]);
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let mut forward_equal = true;
    for c in ChannelTarget::BOTH {
        let before = ta.gan(c).generator.predict(&l, &z, None).unwrap();
        let after = loaded.generator(c).unwrap().predict(&l, &z, None).unwrap();
        forward_equal &= bits(&before) == bits(&after);
        let db = ta.gan(c).discriminator.predict(&l, &before).unwrap();
        let da = loaded.discriminator(c).unwrap().predict(&l, &after).unwrap();
        forward_equal &= bits(&db) == bits(&da);
    }

    let (c, _) = run(2);
    let mut resumed = Checkpoint::load(&c.path().join("epoch_0002.ckpt")).unwrap().into_trainer().unwrap();
    resumed.config.epochs = 4;
    resumed.fit(&data, c.path()).unwrap();
    let resume_csv = std::fs::read(c.path().join("metrics.csv")).unwrap() == csv_a;
    let resume_ckpt = std::fs::read(c.path().join("epoch_0004.ckpt")).unwrap()
        == std::fs::read(a.path().join("epoch_0004.ckpt")).unwrap();

    ensure(
        same_csv && byte_identical && forward_equal && resume_csv && resume_ckpt,
        format!(
            "identical metrics CSVs: {same_csv}; save-load-save byte-identical: {byte_identical}; forward bitwise equal: {forward_equal}; resumed CSV equal: {resume_csv}; resumed checkpoint equal: {resume_ckpt}"
        ),
    )
}

fn pipeline_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let count = 128;
    let mut worst = 0f32;
    for _ in 0..count {
        let (w, h) = (rng.gen_range(4..24), rng.gen_range(4..24));
        let bytes: Vec<u8> = (0..w * h * 3).map(|_| rng.gen()).collect();
        let img = RgbImage::from_rgb8(&image::RgbImage::from_raw(w as u32, h as u32, bytes).unwrap());
        let pair = normalize(&rgb_to_lab(&img));
        let out = assemble(&extract_grayscale(&img), &pair.target_a, &pair.target_b).map_err(|e| e.to_string())?;
        for (a, b) in out.data().iter().zip(img.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(
        worst < 1.0 / 255.0,
        format!("{count} random images, max per-channel error {worst:.2e} (< {:.2e})", 1.0 / 255.0),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gradient oracle", gradient_oracle),
        ("colorspace oracle", colorspace_oracle),
        ("loss-formula oracles", loss_oracles),
        ("shape invariants", shape_invariants),
        ("overfit smoke", overfit_smoke),
        ("adversarial smoke", adversarial_smoke),
        ("determinism and persistence", determinism_and_persistence),
        ("pipeline identity", pipeline_identity),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail})", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
