use std::path::Path;

use crate::colorspace::RgbImage;
use crate::error::{Error, Result};

/// Separator width between tiles, in pixels.
pub const GRID_GAP: u32 = 2;

/// One grid row: `input | predicted | truth`.
#[derive(Clone, Debug)]
pub struct GridItem {
    pub input: RgbImage,
    pub predicted: RgbImage,
    pub truth: Option<RgbImage>,
}

/// Lays out one row per item on a white canvas. Rows without ground truth
/// leave the third column blank; the column is omitted when no row has one.
pub fn render_grid(items: &[GridItem]) -> Result<image::RgbImage> {
    let first = items
        .first()
        .ok_or_else(|| Error::precondition("emit_grid", "no images to lay out"))?;
    let (tw, th) = (first.input.width(), first.input.height());
    let cols = if items.iter().any(|it| it.truth.is_some()) { 3 } else { 2 };
    for it in items {
        for tile in [Some(&it.input), Some(&it.predicted), it.truth.as_ref()].into_iter().flatten() {
            if tile.width() != tw || tile.height() != th {
                return Err(Error::precondition(
                    "emit_grid",
                    format!("tile is {}x{}, expected {tw}x{th}", tile.width(), tile.height()),
                ));
            }
        }
    }
    let (tw, th) = (tw as u32, th as u32);
    let rows = items.len() as u32;
    let width = cols * tw + (cols - 1) * GRID_GAP;
    let height = rows * th + (rows - 1) * GRID_GAP;
    let mut canvas = image::RgbImage::from_pixel(width, height, image::Rgb([255, 255, 255]));
    for (r, it) in items.iter().enumerate() {
        let y = r as u32 * (th + GRID_GAP);
        for (c, tile) in [Some(&it.input), Some(&it.predicted), it.truth.as_ref()].into_iter().enumerate() {
            if let Some(tile) = tile {
                let x = c as u32 * (tw + GRID_GAP);
                image::imageops::replace(&mut canvas, &tile.to_rgb8(), i64::from(x), i64::from(y));
            }
        }
    }
    Ok(canvas)
}

/// Renders and writes the grid as PNG, returning its dimensions.
pub fn emit_grid(items: &[GridItem], path: &Path) -> Result<(u32, u32)> {
    let canvas = render_grid(items)?;
    canvas
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(canvas.dimensions())
}
