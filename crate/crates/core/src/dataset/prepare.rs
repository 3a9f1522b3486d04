use std::fs;
use std::path::{Path, PathBuf};

use super::{load_rgb8, resize, DatasetManifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::threads::parallel_map;

#[derive(Debug, Default)]
pub struct PrepareReport {
    /// Output paths written, in manifest order.
    pub written: Vec<PathBuf>,
    pub failed: Vec<(PathBuf, Error)>,
}

impl PrepareReport {
    pub fn processed(&self) -> usize {
        self.written.len()
    }
}

fn output_path(out_dir: &Path, entry: &ManifestEntry) -> PathBuf {
    out_dir.join(&entry.path).with_extension("png")
}

fn prepare_one(manifest: &DatasetManifest, entry: &ManifestEntry, out_dir: &Path) -> Result<PathBuf> {
    let src = manifest.root.join(&entry.path);
    let mut img = load_rgb8(&src)?;
    if let Some(c) = entry.crop {
        if !c.fits(img.width(), img.height()) {
            return Err(Error::precondition(
                "prepare",
                format!(
                    "{}: crop {}x{}+{}+{} exceeds the {}x{} source",
                    entry.path.display(),
                    c.w,
                    c.h,
                    c.x,
                    c.y,
                    img.width(),
                    img.height()
                ),
            ));
        }
        img = image::imageops::crop_imm(&img, c.x, c.y, c.w, c.h).to_image();
    }
    let size = manifest.target_size as u32;
    if img.dimensions() != (size, size) {
        img = resize(&img, manifest.target_size);
    }
    let dst = output_path(out_dir, entry);
    if let Some(parent) = dst.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save_with_format(&dst, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: dst.clone(),
            source,
        })?;
    Ok(dst)
}

/// Crops (when a rectangle is given) and resizes every entry to a
/// `target_size` square PNG under `out_dir`, keeping relative paths. A failing
/// file is reported and the rest are still processed.
pub fn prepare(manifest: &DatasetManifest, entries: &[ManifestEntry], out_dir: &Path) -> Result<PrepareReport> {
    super::validate_image_size(manifest.target_size, "size")?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let results = parallel_map(entries, |entry| prepare_one(manifest, entry, out_dir));
    let mut report = PrepareReport::default();
    for (entry, result) in entries.iter().zip(results) {
        match result {
            Ok(path) => report.written.push(path),
            Err(e) => report.failed.push((entry.path.clone(), e)),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{parse_crop_manifest, scan};

    fn manifest_for(dir: &Path, crops: Option<&str>, size: usize) -> DatasetManifest {
        let table = crops.map(|c| parse_crop_manifest(c).unwrap());
        scan(dir, table.as_ref())
            .unwrap()
            .manifest
            .with_target_size(size)
            .unwrap()
    }

    #[test]
    fn resizes_to_target() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        image::RgbImage::from_fn(512, 512, |x, y| image::Rgb([(x % 256) as u8, (y % 256) as u8, 7]))
            .save(src.path().join("big.png"))
            .unwrap();
        let m = manifest_for(src.path(), None, 256);
        let report = prepare(&m, &m.entries, out.path()).unwrap();
        assert_eq!(report.processed(), 1);
        let img = image::open(out.path().join("big.png")).unwrap();
        assert_eq!((img.width(), img.height()), (256, 256));
    }

    #[test]
    fn crop_takes_the_named_rectangle() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        // top-left 100x100 is red, the rest blue
        image::RgbImage::from_fn(300, 200, |x, y| {
            if x < 100 && y < 100 {
                image::Rgb([255, 0, 0])
            } else {
                image::Rgb([0, 0, 255])
            }
        })
        .save(src.path().join("a.png"))
        .unwrap();
        let m = manifest_for(src.path(), Some("a.png 0 0 100 100"), 64);
        prepare(&m, &m.entries, out.path()).unwrap();
        let img = image::open(out.path().join("a.png")).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (64, 64));
        assert!(img.pixels().all(|p| p.0 == [255, 0, 0]));
    }

    #[test]
    fn constant_source_stays_constant_and_output_is_idempotent() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        image::RgbImage::from_pixel(90, 70, image::Rgb([12, 200, 99]))
            .save(src.path().join("c.png"))
            .unwrap();
        let m = manifest_for(src.path(), None, 32);
        prepare(&m, &m.entries, out.path()).unwrap();
        let first = fs::read(out.path().join("c.png")).unwrap();
        let img = image::load_from_memory(&first).unwrap().to_rgb8();
        assert!(img.pixels().all(|p| p.0 == [12, 200, 99]));
        prepare(&m, &m.entries, out.path()).unwrap();
        assert_eq!(fs::read(out.path().join("c.png")).unwrap(), first);
    }

    #[test]
    fn corrupt_file_fails_alone() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        image::RgbImage::from_pixel(16, 16, image::Rgb([1, 2, 3]))
            .save(src.path().join("good.png"))
            .unwrap();
        fs::write(src.path().join("bad.png"), b"definitely not a png").unwrap();
        let m = manifest_for(src.path(), None, 16);
        let report = prepare(&m, &m.entries, out.path()).unwrap();
        assert_eq!(report.processed(), 1);
        assert_eq!(report.failed.len(), 1);
        assert_eq!(report.failed[0].0, PathBuf::from("bad.png"));
        assert!(out.path().join("good.png").exists());
    }

    #[test]
    fn out_of_bounds_crop_fails() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        image::RgbImage::from_pixel(16, 16, image::Rgb([1, 2, 3]))
            .save(src.path().join("a.png"))
            .unwrap();
        let m = manifest_for(src.path(), Some("a.png 8 8 10 10"), 16);
        let report = prepare(&m, &m.entries, out.path()).unwrap();
        assert_eq!(report.failed.len(), 1);
    }
}
