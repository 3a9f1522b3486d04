use crate::colorspace::{LabImage, RgbImage};
use crate::error::{Error, Result};

/// Reported for an exact match instead of an infinite PSNR.
pub const PSNR_CAP_DB: f64 = 99.0;

fn same_size(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    for (axis, x, y) in [("width", a.0, b.0), ("height", a.1, b.1)] {
        if x != y {
            return Err(Error::Shape {
                op,
                axis,
                expected: y,
                found: x,
            });
        }
    }
    Ok(())
}

/// Mean squared error over both chrominance planes, in LAB units.
pub fn ab_mse(pred: &LabImage, truth: &LabImage) -> Result<f64> {
    same_size("ab_mse", (pred.width(), pred.height()), (truth.width(), truth.height()))?;
    let n = pred.a.len();
    if n == 0 {
        return Ok(0.0);
    }
    let sq = |p: &[f32], t: &[f32]| -> f64 {
        p.iter()
            .zip(t)
            .map(|(&p, &t)| {
                let d = f64::from(p) - f64::from(t);
                d * d
            })
            .sum()
    };
    Ok((sq(&pred.a, &truth.a) + sq(&pred.b, &truth.b)) / (2 * n) as f64)
}

/// `10 log10(1 / mse)` over unit-range RGB channels, capped at [`PSNR_CAP_DB`].
pub fn psnr_rgb(pred: &RgbImage, truth: &RgbImage) -> Result<f64> {
    same_size("psnr_rgb", (pred.width(), pred.height()), (truth.width(), truth.height()))?;
    let n = pred.data().len();
    if n == 0 {
        return Ok(PSNR_CAP_DB);
    }
    let mse = pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(&p, &t)| {
            let d = f64::from(p) - f64::from(t);
            d * d
        })
        .sum::<f64>()
        / n as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
