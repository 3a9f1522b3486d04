//! Image corpora: directory scanning, crop manifests, preparation, splits and
//! seeded minibatch iteration.

mod batch;
mod prepare;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use batch::{batches, uniform_noise, Batches, Minibatch};
pub use prepare::{prepare, PrepareReport};

use crate::colorspace::{normalize, rgb_to_lab, NetImagePair, RgbImage};
use crate::error::{Error, Result};

pub const SUPPORTED_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Side length used when none is configured.
pub const DEFAULT_TARGET_SIZE: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl CropRect {
    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.w > 0
            && self.h > 0
            && u64::from(self.x) + u64::from(self.w) <= u64::from(width)
            && u64::from(self.y) + u64::from(self.h) <= u64::from(height)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Relative to the manifest's root.
    pub path: PathBuf,
    pub crop: Option<CropRect>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub target_size: usize,
    pub split_seed: u64,
    pub train_fraction: f64,
}

impl DatasetManifest {
    pub fn with_target_size(mut self, size: usize) -> Result<Self> {
        validate_image_size(size, "target_size")?;
        self.target_size = size;
        Ok(self)
    }
}

/// Sizes must survive four 2x poolings.
pub fn validate_image_size(size: usize, field: &str) -> Result<()> {
    if size == 0 || size % 16 != 0 {
        return Err(Error::Config {
            field: field.to_string(),
            message: format!("image size must be a positive multiple of 16, got {size}"),
        });
    }
    Ok(())
}

/// Parses a crop sidecar: one `path [x y w h]` per line, `#` starts a comment.
pub fn parse_crop_manifest(text: &str) -> Result<BTreeMap<PathBuf, Option<CropRect>>> {
    let mut crops = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = |msg: &str| Error::config(format!("manifest line {}", lineno + 1), msg.to_string());
        let crop = match fields.len() {
            1 => None,
            5 => {
                let nums = fields[1..]
                    .iter()
                    .map(|f| f.parse::<u32>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| bad(&format!("crop fields must be non-negative integers: {e}")))?;
                if nums[2] == 0 || nums[3] == 0 {
                    return Err(bad("crop width and height must be positive"));
                }
                Some(CropRect {
                    x: nums[0],
                    y: nums[1],
                    w: nums[2],
                    h: nums[3],
                })
            }
            n => return Err(bad(&format!("expected `path` or `path x y w h`, got {n} fields"))),
        };
        crops.insert(PathBuf::from(fields[0]), crop);
    }
    Ok(crops)
}

pub fn is_supported(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| SUPPORTED_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            walk(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanReport {
    pub manifest: DatasetManifest,
    /// Files ignored because of their extension.
    pub skipped: usize,
}

/// Lists supported images under `root` in lexicographic path order and
/// attaches crop rectangles from `crops` by relative path.
pub fn scan(root: &Path, crops: Option<&BTreeMap<PathBuf, Option<CropRect>>>) -> Result<ScanReport> {
    let mut files = Vec::new();
    walk(root, &mut files)?;
    let mut rel: Vec<PathBuf> = files
        .iter()
        .map(|p| p.strip_prefix(root).unwrap_or(p).to_path_buf())
        .collect();
    rel.sort();
    let mut skipped = 0;
    let mut entries = Vec::new();
    for path in rel {
        if !is_supported(&path) {
            warn!("skipping unsupported file {}", path.display());
            skipped += 1;
            continue;
        }
        let crop = crops.and_then(|c| c.get(&path).copied().flatten());
        entries.push(ManifestEntry { path, crop });
    }
    if let Some(crops) = crops {
        for listed in crops.keys() {
            if !entries.iter().any(|e| &e.path == listed) {
                warn!("manifest names {} but no such image was found", listed.display());
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::EmptyDataset(root.to_path_buf()));
    }
    Ok(ScanReport {
        manifest: DatasetManifest {
            root: root.to_path_buf(),
            entries,
            target_size: DEFAULT_TARGET_SIZE,
            split_seed: 0,
            train_fraction: 0.8,
        },
        skipped,
    })
}

/// Seeded shuffle, then the first `round(fraction · N)` items train.
pub fn split<T: Clone>(items: &[T], train_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(
            "train_fraction",
            format!("must lie strictly between 0 and 1, got {train_fraction}"),
        ));
    }
    if items.len() < 2 {
        return Err(Error::precondition(
            "split",
            format!("need at least 2 items, got {}", items.len()),
        ));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_fraction * items.len() as f64).round() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

pub fn load_rgb8(path: &Path) -> Result<image::RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_rgb8())
}

/// Center-crops to the largest square and resizes to `size × size`.
pub fn fit_square(img: &image::RgbImage, size: usize) -> image::RgbImage {
    let (w, h) = img.dimensions();
    let side = w.min(h);
    let (x0, y0) = ((w - side) / 2, (h - side) / 2);
    let square = image::imageops::crop_imm(img, x0, y0, side, side).to_image();
    if side as usize == size {
        return square;
    }
    resize(&square, size)
}

pub(crate) fn resize(img: &image::RgbImage, size: usize) -> image::RgbImage {
    image::imageops::resize(
        img,
        size as u32,
        size as u32,
        image::imageops::FilterType::Triangle,
    )
}

/// A decoded example in network space.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub path: PathBuf,
    pub image: RgbImage,
    pub pair: NetImagePair,
}

impl Example {
    pub fn from_image(path: PathBuf, image: RgbImage) -> Self {
        let pair = normalize(&rgb_to_lab(&image));
        Self { path, image, pair }
    }
}

/// All images of a prepared directory, fitted to `size × size`, in scan order.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub size: usize,
    pub examples: Vec<Example>,
}

impl Corpus {
    pub fn load(dir: &Path, size: usize) -> Result<Self> {
        validate_image_size(size, "size")?;
        let scan = scan(dir, None)?;
        let examples = crate::threads::parallel_map(&scan.manifest.entries, |entry| {
            let img = load_rgb8(&dir.join(&entry.path))?;
            Ok(Example::from_image(
                entry.path.clone(),
                RgbImage::from_rgb8(&fit_square(&img, size)),
            ))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Ok(Self { size, examples })
    }

    pub fn from_images(size: usize, images: Vec<(PathBuf, RgbImage)>) -> Result<Self> {
        validate_image_size(size, "size")?;
        let examples = images
            .into_iter()
            .map(|(path, img)| {
                if img.width() != size || img.height() != size {
                    return Err(Error::Shape {
                        op: "corpus",
                        axis: "width",
                        expected: size,
                        found: img.width(),
                    });
                }
                Ok(Example::from_image(path, img))
            })
            .collect::<Result<Vec<_>>>()?;
        if examples.is_empty() {
            return Err(Error::EmptyDataset(PathBuf::from("<memory>")));
        }
        Ok(Self { size, examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn pairs(&self) -> Vec<&NetImagePair> {
        self.examples.iter().map(|e| &e.pair).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(path: &Path, w: u32, h: u32, rgb: [u8; 3]) {
        image::RgbImage::from_pixel(w, h, image::Rgb(rgb)).save(path).unwrap();
    }

    #[test]
    fn scan_lists_pngs_in_sorted_order() {
        let dir = tempfile::tempdir().unwrap();
        for i in (0..10).rev() {
            write_png(&dir.path().join(format!("img{i:02}.png")), 4, 4, [i * 20, 0, 0]);
        }
        let report = scan(dir.path(), None).unwrap();
        assert_eq!(report.skipped, 0);
        let names: Vec<_> = report.manifest.entries.iter().map(|e| e.path.clone()).collect();
        let expected: Vec<_> = (0..10).map(|i| PathBuf::from(format!("img{i:02}.png"))).collect();
        assert_eq!(names, expected);
    }

    #[test]
    fn scan_skips_unsupported_files() {
        let dir = tempfile::tempdir().unwrap();
        write_png(&dir.path().join("a.png"), 4, 4, [1, 2, 3]);
        fs::write(dir.path().join("notes.txt"), "hello").unwrap();
        let report = scan(dir.path(), None).unwrap();
        assert_eq!(report.manifest.entries.len(), 1);
        assert_eq!(report.skipped, 1);
    }

    #[test]
    fn scan_of_empty_directory_fails() {
        let dir = tempfile::tempdir().unwrap();
        let err = scan(dir.path(), None).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset(_)));
        assert!(err.to_string().contains("no images found"));
    }

    #[test]
    fn crop_manifest_parsing() {
        let text = "# faces\nface1.png 10 20 100 120\n\nface2.png   # uncropped\n";
        let crops = parse_crop_manifest(text).unwrap();
        assert_eq!(
            crops[Path::new("face1.png")],
            Some(CropRect { x: 10, y: 20, w: 100, h: 120 })
        );
        assert_eq!(crops[Path::new("face2.png")], None);
        assert!(parse_crop_manifest("a.png 1 2 3").is_err());
        assert!(parse_crop_manifest("a.png 1 2 -3 4").is_err());
        assert!(parse_crop_manifest("a.png 0 0 0 4").is_err());
    }

    #[test]
    fn scan_attaches_crops() {
        let dir = tempfile::tempdir().unwrap();
        write_png(&dir.path().join("a.png"), 8, 8, [1, 2, 3]);
        write_png(&dir.path().join("b.png"), 8, 8, [1, 2, 3]);
        let crops = parse_crop_manifest("b.png 0 0 4 4").unwrap();
        let m = scan(dir.path(), Some(&crops)).unwrap().manifest;
        assert_eq!(m.entries[0].crop, None);
        assert_eq!(m.entries[1].crop, Some(CropRect { x: 0, y: 0, w: 4, h: 4 }));
    }

    #[test]
    fn split_examples() {
        let items: Vec<u32> = (0..10).collect();
        let (train, test) = split(&items, 0.8, 42).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        let mut all: Vec<u32> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, items);
        assert_eq!(split(&items, 0.8, 42).unwrap(), (train.clone(), test));
        let (other, _) = split(&items, 0.8, 43).unwrap();
        assert_ne!(other, train);
    }

    #[test]
    fn split_rejects_bad_inputs() {
        assert!(split(&[1], 0.5, 0).is_err());
        assert!(split(&[1, 2, 3], 0.0, 0).is_err());
        assert!(split(&[1, 2, 3], 1.0, 0).is_err());
    }

    #[test]
    fn fit_square_center_crops_then_resizes() {
        let mut img = image::RgbImage::from_pixel(12, 8, image::Rgb([0, 0, 0]));
        // columns 2..10 are the central square; paint them white
        for y in 0..8 {
            for x in 2..10 {
                img.put_pixel(x, y, image::Rgb([255, 255, 255]));
            }
        }
        let out = fit_square(&img, 16);
        assert_eq!(out.dimensions(), (16, 16));
        assert!(out.pixels().all(|p| p.0 == [255, 255, 255]));
    }

    #[test]
    fn target_size_must_be_divisible_by_16() {
        assert!(validate_image_size(64, "s").is_ok());
        assert!(validate_image_size(40, "s").is_err());
        assert!(validate_image_size(0, "s").is_err());
    }

    proptest::proptest! {
        #[test]
        fn split_is_a_partition(n in 2usize..200, frac in 0.01f64..0.99, seed in proptest::prelude::any::<u64>()) {
            let items: Vec<usize> = (0..n).collect();
            let (train, test) = split(&items, frac, seed).unwrap();
            proptest::prop_assert_eq!(train.len(), (frac * n as f64).round() as usize);
            let mut all: Vec<usize> = train.into_iter().chain(test).collect();
            all.sort_unstable();
            proptest::prop_assert_eq!(all, items);
        }
    }
}
