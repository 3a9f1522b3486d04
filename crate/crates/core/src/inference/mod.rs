//! Checkpoint-driven colorization, fidelity metrics and comparison grids.

mod grid;
mod metrics;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub use grid::{emit_grid, render_grid, GridItem, GRID_GAP};
pub use metrics::{ab_mse, mean, median, psnr_rgb, PSNR_CAP_DB};

use crate::colorspace::{assemble, extract_grayscale, lab_to_rgb, normalize, rgb_to_lab, LabImage, RgbImage};
use crate::dataset::{fit_square, uniform_noise, Example};
use crate::error::{Error, Result};
use crate::network::{ChannelTarget, Generator};
use crate::tensor::Tensor;
use crate::training::Checkpoint;

/// Default noise seed, so repeated runs give the same picture.
pub const DEFAULT_Z_SEED: u64 = 0;

/// Produces normalized `(a, b)` planes for an `S x S` input.
pub trait Colorizer: Sync {
    fn image_size(&self) -> usize;

    /// `input` is already `S x S`; `l` is its normalized lightness plane.
    fn chroma(&self, input: &RgbImage, l: &Tensor<f32>, z_seed: u64) -> Result<(Tensor<f32>, Tensor<f32>)>;
}

/// The two trained generators of a checkpoint.
#[derive(Clone, Debug)]
pub struct GanColorizer {
    size: usize,
    a: Generator<f32>,
    b: Generator<f32>,
}

impl GanColorizer {
    /// `size`, when given, must match the size the checkpoint was trained at.
    pub fn from_checkpoint(ck: &Checkpoint, size: Option<usize>) -> Result<Self> {
        let trained = ck.meta.config.image_size;
        if let Some(s) = size.filter(|&s| s != trained) {
            return Err(Error::config(
                "size",
                format!("checkpoint was trained at {trained}x{trained}, requested {s}x{s}"),
            ));
        }
        Ok(Self {
            size: trained,
            a: ck.generator(ChannelTarget::A)?,
            b: ck.generator(ChannelTarget::B)?,
        })
    }

    pub fn load(path: &Path, size: Option<usize>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, size)
    }
}

impl Colorizer for GanColorizer {
    fn image_size(&self) -> usize {
        self.size
    }

    fn chroma(&self, _input: &RgbImage, l: &Tensor<f32>, z_seed: u64) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let z = uniform_noise(z_seed, l.shape().to_vec());
        Ok((self.a.predict(l, &z, None)?, self.b.predict(l, &z, None)?))
    }
}

/// Returns the input's own chrominance; a reference point for the pipeline
/// and metrics.
#[derive(Clone, Copy, Debug)]
pub struct IdentityColorizer {
    pub size: usize,
}

impl Colorizer for IdentityColorizer {
    fn image_size(&self) -> usize {
        self.size
    }

    fn chroma(&self, input: &RgbImage, _l: &Tensor<f32>, _z_seed: u64) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let pair = normalize(&rgb_to_lab(input));
        Ok((pair.target_a, pair.target_b))
    }
}

#[derive(Clone, Debug)]
pub struct ColorizationResult {
    pub output: RgbImage,
    pub ab_mse: Option<f64>,
    pub psnr_rgb: Option<f64>,
}

/// Center-crops to a square and resizes to `size`; a no-op when already there.
pub fn fit_to(image: &RgbImage, size: usize) -> RgbImage {
    if image.width() == size && image.height() == size {
        return image.clone();
    }
    RgbImage::from_rgb8(&fit_square(&image.to_rgb8(), size))
}

/// The image reduced to its lightness, rendered as gray sRGB.
pub fn grayscale_rgb(image: &RgbImage) -> RgbImage {
    let lab = rgb_to_lab(image);
    let n = lab.l.len();
    let gray = LabImage::new(image.width(), image.height(), lab.l, vec![0.0; n], vec![0.0; n]).expect("same size");
    lab_to_rgb(&gray)
}

/// Grayscales `image` (after fitting it to the colorizer's size), predicts
/// chrominance and reassembles. Metrics are filled in iff `truth` is given.
pub fn colorize(
    colorizer: &dyn Colorizer,
    image: &RgbImage,
    z_seed: u64,
    truth: Option<&RgbImage>,
) -> Result<ColorizationResult> {
    let size = colorizer.image_size();
    let input = fit_to(image, size);
    let l = extract_grayscale(&input);
    let (a, b) = colorizer.chroma(&input, &l, z_seed)?;
    let output = assemble(&l, &a, &b)?;
    let (ab, psnr) = match truth {
        Some(t) => {
            let t = fit_to(t, size);
            (
                Some(ab_mse(&rgb_to_lab(&output), &rgb_to_lab(&t))?),
                Some(psnr_rgb(&output, &t)?),
            )
        }
        None => (None, None),
    };
    Ok(ColorizationResult {
        output,
        ab_mse: ab,
        psnr_rgb: psnr,
    })
}

/// Noise seeds of `count` variants starting at `z_seed`.
pub fn variant_seeds(z_seed: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|k| z_seed.wrapping_add(k)).collect()
}

/// `out.png` becomes `out_1.png`, `out_2.png`, ... for variants.
pub fn variant_path(path: &Path, index: usize) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_{index}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{index}"),
    };
    path.with_file_name(name)
}

#[derive(Clone, Debug)]
pub struct EvalRow {
    pub path: PathBuf,
    pub ab_mse: f64,
    pub psnr_db: f64,
    pub input: RgbImage,
    pub output: RgbImage,
    pub truth: RgbImage,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    fn column(&self, f: impl Fn(&EvalRow) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }

    pub fn mean_ab_mse(&self) -> f64 {
        mean(&self.column(|r| r.ab_mse))
    }

    pub fn median_ab_mse(&self) -> f64 {
        median(&self.column(|r| r.ab_mse))
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(&self.column(|r| r.psnr_db))
    }

    pub fn median_psnr(&self) -> f64 {
        median(&self.column(|r| r.psnr_db))
    }

    /// Per-image rows in corpus order, then `AGGREGATE` with the means.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("path,ab_mse,psnr_db\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.6},{:.6}", r.path.display(), r.ab_mse, r.psnr_db);
        }
        let _ = writeln!(s, "AGGREGATE,{:.6},{:.6}", self.mean_ab_mse(), self.mean_psnr());
        s
    }

    pub fn summary_line(&self) -> String {
        format!(
            "images={} ab_mse_mean={:.4} ab_mse_median={:.4} psnr_mean={:.3} psnr_median={:.3}",
            self.rows.len(),
            self.mean_ab_mse(),
            self.median_ab_mse(),
            self.mean_psnr(),
            self.median_psnr()
        )
    }

    pub fn grid_items(&self) -> Vec<GridItem> {
        self.rows
            .iter()
            .map(|r| GridItem {
                input: r.input.clone(),
                predicted: r.output.clone(),
                truth: Some(r.truth.clone()),
            })
            .collect()
    }
}

/// Colorizes every example against itself as ground truth. Runs in parallel;
/// rows keep the order of `examples`.
pub fn evaluate(colorizer: &dyn Colorizer, examples: &[Example], z_seed: u64) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::precondition("evaluate", "empty test set"));
    }
    let rows = crate::threads::parallel_map(examples, |ex| {
        let truth = fit_to(&ex.image, colorizer.image_size());
        let res = colorize(colorizer, &truth, z_seed, Some(&truth))?;
        Ok(EvalRow {
            path: ex.path.clone(),
            ab_mse: res.ab_mse.expect("truth supplied"),
            psnr_db: res.psnr_rgb.expect("truth supplied"),
            input: grayscale_rgb(&truth),
            output: res.output,
            truth,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::{Mode, TrainConfig, Trainer};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fresh(mode: Mode) -> Checkpoint {
        let t = Trainer::new(TrainConfig {
            base_width: 2,
            image_size: 16,
            mode,
            ..TrainConfig::default()
        })
        .unwrap();
        Checkpoint::from_trainer(&t)
    }

    fn random_image(w: usize, h: usize, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::new(w, h, (0..w * h * 3).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn fresh_checkpoint_gives_valid_deterministic_output() {
        for mode in [Mode::Makeup, Mode::General] {
            let c = GanColorizer::from_checkpoint(&fresh(mode), None).unwrap();
            let img = random_image(20, 28, 1);
            let r1 = colorize(&c, &img, 7, None).unwrap();
            let r2 = colorize(&c, &img, 7, None).unwrap();
            assert_eq!((r1.output.width(), r1.output.height()), (16, 16));
            assert!(r1.output.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(r1.output.to_rgb8(), r2.output.to_rgb8());
            assert!(r1.ab_mse.is_none() && r1.psnr_rgb.is_none());
        }
    }

    #[test]
    fn lightness_is_preserved() {
        let c = GanColorizer::from_checkpoint(&fresh(Mode::Makeup), None).unwrap();
        let img = grayscale_rgb(&random_image(16, 16, 4));
        let out = colorize(&c, &img, 0, None).unwrap().output;
        let (li, lo) = (extract_grayscale(&img), extract_grayscale(&out));
        for (a, b) in li.data().iter().zip(lo.data()) {
            assert!((a - b).abs() < 1.0 / 255.0, "{a} vs {b}");
        }
    }

    #[test]
    fn size_mismatch_is_an_error() {
        assert!(GanColorizer::from_checkpoint(&fresh(Mode::Makeup), Some(32)).is_err());
        assert!(GanColorizer::from_checkpoint(&fresh(Mode::Makeup), Some(16)).is_ok());
    }

    #[test]
    fn variants_differ() {
        let c = GanColorizer::from_checkpoint(&fresh(Mode::Makeup), None).unwrap();
        let img = random_image(16, 16, 2);
        let outs: Vec<_> = variant_seeds(0, 3)
            .into_iter()
            .map(|s| colorize(&c, &img, s, None).unwrap().output.to_rgb8())
            .collect();
        assert_ne!(outs[0], outs[1]);
        assert_ne!(outs[1], outs[2]);
        assert_eq!(variant_path(Path::new("x/out.png"), 2), PathBuf::from("x/out_2.png"));
    }

    #[test]
    fn identity_evaluation() {
        let examples: Vec<Example> = (0..2)
            .map(|i| Example::from_image(PathBuf::from(format!("{i}.png")), RgbImage::from_rgb8(&random_image(16, 16, i).to_rgb8())))
            .collect();
        let report = evaluate(&IdentityColorizer { size: 16 }, &examples, 0).unwrap();
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "path,ab_mse,psnr_db");
        assert!(lines[1].starts_with("0.png,"));
        assert!(lines[3].starts_with("AGGREGATE,"));
        assert!(report.mean_ab_mse() < 1e-3, "{}", report.summary_line());
        assert!(report.mean_psnr() > 45.0, "{}", report.summary_line());
        assert!(evaluate(&IdentityColorizer { size: 16 }, &[], 0).is_err());
    }

    #[test]
    fn evaluation_is_deterministic() {
        let c = GanColorizer::from_checkpoint(&fresh(Mode::Makeup), None).unwrap();
        let examples: Vec<Example> = (0..3)
            .map(|i| Example::from_image(PathBuf::from(format!("{i}.png")), random_image(16, 16, 10 + i)))
            .collect();
        let a = evaluate(&c, &examples, 0).unwrap().to_csv();
        let b = evaluate(&c, &examples, 0).unwrap().to_csv();
        assert_eq!(a, b);
    }
}
