//! sRGB ↔ CIELAB (D65, 2° observer) and the image-space ↔ network-space scaling.
//!
//! Network inputs are `L / 100`; chrominance targets are `a / 110` and `b / 110`.

use std::sync::LazyLock;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const L_SCALE: f32 = 100.0;
pub const CHROMA_SCALE: f32 = 110.0;

/// Linear sRGB → XYZ (D65).
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

struct Derived {
    xyz_to_rgb: [[f64; 3]; 3],
    white: [f64; 3],
}

static DERIVED: LazyLock<Derived> = LazyLock::new(|| {
    let m = RGB_TO_XYZ;
    // white is the image of (1, 1, 1) so sRGB white lands on a = b = 0
    let white = [0, 1, 2].map(|r| m[r].iter().sum());
    Derived {
        xyz_to_rgb: invert3(&m),
        white,
    }
});

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let adj = [
        [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
        [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
        [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
    ];
    let det = m[0][0] * adj[0][0] + m[0][1] * adj[1][0] + m[0][2] * adj[2][0];
    adj.map(|row| row.map(|v| v / det))
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    m.map(|row| row[0] * v[0] + row[1] * v[1] + row[2] * v[2])
}

const EPSILON: f64 = 216.0 / 24389.0;
const KAPPA: f64 = 24389.0 / 27.0;

fn lab_f(t: f64) -> f64 {
    if t > EPSILON {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

fn lab_f_inv(f: f64) -> f64 {
    let cube = f * f * f;
    if cube > EPSILON {
        cube
    } else {
        (116.0 * f - 16.0) / KAPPA
    }
}

pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

/// One sRGB triple (components in `[0, 1]`, clamped) to `(L, a, b)`.
pub fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let d = &*DERIVED;
    let lin = rgb.map(|c| srgb_to_linear(c.clamp(0.0, 1.0)));
    let xyz = mat_vec(&RGB_TO_XYZ, lin);
    let [fx, fy, fz] = [0, 1, 2].map(|i| lab_f(xyz[i] / d.white[i]));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

fn lab_to_linear(lab: [f64; 3]) -> [f64; 3] {
    let d = &*DERIVED;
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let xyz = [fx, fy, fz]
        .map(lab_f_inv)
        .iter()
        .zip(d.white)
        .map(|(t, w)| t * w)
        .collect::<Vec<_>>();
    mat_vec(&d.xyz_to_rgb, [xyz[0], xyz[1], xyz[2]])
}

/// One `(L, a, b)` triple to sRGB, hard-clamped into `[0, 1]`.
pub fn lab_to_srgb(lab: [f64; 3]) -> [f64; 3] {
    lab_to_linear(lab).map(|c| linear_to_srgb(c).clamp(0.0, 1.0))
}

// Colors this close to the cube are clamped instead of chroma-mapped. f32 LAB
// storage alone moves boundary colors ~1e-6 outside, and near the R=G=1 edge a
// constant-L chroma ray can stay outside for most of its length, so mapping
// such a color would pull it almost to gray. Clamping within this slack moves
// any sRGB component by at most 12.92e-4.
const GAMUT_SLACK: f64 = 1e-4;

fn in_gamut(lin: &[f64; 3]) -> bool {
    lin.iter().all(|&c| (-GAMUT_SLACK..=1.0 + GAMUT_SLACK).contains(&c))
}

/// Like [`lab_to_srgb`], but an out-of-gamut colour first has its chroma
/// scaled toward the neutral axis until it fits, so lightness survives.
pub fn lab_to_srgb_preserving_lightness(lab: [f64; 3]) -> [f64; 3] {
    let lin = lab_to_linear(lab);
    if in_gamut(&lin) {
        return lin.map(|c| linear_to_srgb(c).clamp(0.0, 1.0));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..48 {
        let mid = 0.5 * (lo + hi);
        if in_gamut(&lab_to_linear([lab[0], lab[1] * mid, lab[2] * mid])) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lab_to_linear([lab[0], lab[1] * lo, lab[2] * lo]).map(|c| linear_to_srgb(c).clamp(0.0, 1.0))
}

/// Interleaved RGB pixels with components in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl RgbImage {
    /// Components are clamped into `[0, 1]`.
    pub fn new(width: usize, height: usize, mut data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Shape {
                op: "rgb_image",
                axis: "data",
                expected: width * height * 3,
                found: data.len(),
            });
        }
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let data = std::iter::repeat(rgb)
            .take(width * height)
            .flatten()
            .map(|v| v.clamp(0.0, 1.0))
            .collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&v| f32::from(v) / 255.0).collect(),
        }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self
            .data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    /// Writes 8-bit PNG, creating parent directories.
    pub fn save_png(&self, path: &std::path::Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f32; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }
}

/// Planar CIELAB image.
#[derive(Clone, Debug, PartialEq)]
pub struct LabImage {
    width: usize,
    height: usize,
    pub l: Vec<f32>,
    pub a: Vec<f32>,
    pub b: Vec<f32>,
}

impl LabImage {
    pub fn new(width: usize, height: usize, l: Vec<f32>, a: Vec<f32>, b: Vec<f32>) -> Result<Self> {
        let n = width * height;
        for (axis, plane) in [("L", &l), ("a", &a), ("b", &b)] {
            if plane.len() != n {
                return Err(Error::Shape {
                    op: "lab_image",
                    axis: match axis {
                        "L" => "L",
                        "a" => "a",
                        _ => "b",
                    },
                    expected: n,
                    found: plane.len(),
                });
            }
        }
        Ok(Self {
            width,
            height,
            l,
            a,
            b,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

pub fn rgb_to_lab(img: &RgbImage) -> LabImage {
    let n = img.width * img.height;
    let (mut l, mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for p in img.pixels() {
        let lab = srgb_to_lab(p.map(f64::from));
        l.push(lab[0].clamp(0.0, 100.0) as f32);
        a.push(lab[1] as f32);
        b.push(lab[2] as f32);
    }
    LabImage {
        width: img.width,
        height: img.height,
        l,
        a,
        b,
    }
}

pub fn lab_to_rgb(img: &LabImage) -> RgbImage {
    let data = (0..img.l.len())
        .flat_map(|i| {
            lab_to_srgb([img.l[i], img.a[i], img.b[i]].map(f64::from)).map(|c| c as f32)
        })
        .collect();
    RgbImage {
        width: img.width,
        height: img.height,
        data,
    }
}

/// Network input plane `L / 100` as a `[1, 1, H, W]` tensor.
pub fn extract_grayscale(img: &RgbImage) -> Tensor<f32> {
    let lab = rgb_to_lab(img);
    let data = lab.l.iter().map(|&l| l / L_SCALE).collect();
    Tensor::new([1, 1, img.height, img.width], data).expect("plane length matches")
}

/// Network-space view of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct NetImagePair {
    pub input_l: Tensor<f32>,
    pub target_a: Tensor<f32>,
    pub target_b: Tensor<f32>,
}

pub fn normalize(lab: &LabImage) -> NetImagePair {
    let plane = |v: &[f32], s: f32| {
        Tensor::new([1, 1, lab.height, lab.width], v.iter().map(|&x| x / s).collect())
            .expect("plane length matches")
    };
    NetImagePair {
        input_l: plane(&lab.l, L_SCALE),
        target_a: plane(&lab.a, CHROMA_SCALE),
        target_b: plane(&lab.b, CHROMA_SCALE),
    }
}

pub fn denormalize(pair: &NetImagePair) -> Result<LabImage> {
    let (_, _, h, w) = pair.input_l.dims4("denormalize")?;
    let scale = |t: &Tensor<f32>, s: f32| t.data().iter().map(|&x| x * s).collect::<Vec<_>>();
    LabImage::new(
        w,
        h,
        scale(&pair.input_l, L_SCALE),
        scale(&pair.target_a, CHROMA_SCALE),
        scale(&pair.target_b, CHROMA_SCALE),
    )
}

fn single_plane(t: &Tensor<f32>, op: &'static str) -> Result<(usize, usize)> {
    let (b, c, h, w) = t.dims4(op)?;
    if b != 1 {
        return Err(Error::Shape {
            op,
            axis: "batch",
            expected: 1,
            found: b,
        });
    }
    if c != 1 {
        return Err(Error::Shape {
            op,
            axis: "channel",
            expected: 1,
            found: c,
        });
    }
    Ok((h, w))
}

/// Recombines network-space planes into an sRGB image.
///
/// Chroma that falls outside the sRGB gamut is pulled toward gray before
/// the final clamp, so the rendered lightness matches `l_norm`.
pub fn assemble(l_norm: &Tensor<f32>, a_norm: &Tensor<f32>, b_norm: &Tensor<f32>) -> Result<RgbImage> {
    const OP: &str = "assemble";
    let (h, w) = single_plane(l_norm, OP)?;
    for t in [a_norm, b_norm] {
        single_plane(t, OP)?;
        l_norm.expect_same_shape(t, OP)?;
    }
    let mut data = Vec::with_capacity(h * w * 3);
    for i in 0..h * w {
        let lab = [
            (f64::from(l_norm.data()[i]) * f64::from(L_SCALE)).clamp(0.0, 100.0),
            f64::from(a_norm.data()[i]) * f64::from(CHROMA_SCALE),
            f64::from(b_norm.data()[i]) * f64::from(CHROMA_SCALE),
        ];
        data.extend(lab_to_srgb_preserving_lightness(lab).map(|c| c as f32));
    }
    RgbImage::new(w, h, data)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Textbook CIE evaluation with the (6/29) constants and the commonly
    /// published D65 reference white, written independently of the module.
    fn oracle_lab(rgb: [f64; 3]) -> [f64; 3] {
        let lin = |c: f64| {
            if c > 0.04045 {
                ((c + 0.055) / 1.055).powf(2.4)
            } else {
                c / 12.92
            }
        };
        let (r, g, b) = (lin(rgb[0]), lin(rgb[1]), lin(rgb[2]));
        let x = 0.4124 * r + 0.3576 * g + 0.1805 * b;
        let y = 0.2126 * r + 0.7152 * g + 0.0722 * b;
        let z = 0.0193 * r + 0.1192 * g + 0.9505 * b;
        let delta: f64 = 6.0 / 29.0;
        let f = |t: f64| {
            if t > delta.powi(3) {
                t.powf(1.0 / 3.0)
            } else {
                t / (3.0 * delta * delta) + 4.0 / 29.0
            }
        };
        let (fx, fy, fz) = (f(x / 0.95047), f(y / 1.0), f(z / 1.08883));
        [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
    }

    #[test]
    fn reference_points() {
        let white = srgb_to_lab([1.0, 1.0, 1.0]);
        assert!((white[0] - 100.0).abs() < 1e-4, "{white:?}");
        assert!(white[1].abs() < 0.01 && white[2].abs() < 0.01, "{white:?}");

        assert_eq!(srgb_to_lab([0.0, 0.0, 0.0]), [0.0, 0.0, 0.0]);

        let red = srgb_to_lab([1.0, 0.0, 0.0]);
        let oracle = oracle_lab([1.0, 0.0, 0.0]);
        for (got, want) in red.iter().zip([53.24, 80.09, 67.20]) {
            assert!((got - want).abs() < 0.05, "{red:?}");
        }
        for (got, want) in red.iter().zip(oracle) {
            assert!((got - want).abs() < 0.05, "{red:?} vs {oracle:?}");
        }
    }

    #[test]
    fn agrees_with_independent_formula_on_random_colours() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let rgb = [rng.gen::<f64>(), rng.gen(), rng.gen()];
            let (got, want) = (srgb_to_lab(rgb), oracle_lab(rgb));
            for (g, w) in got.iter().zip(want) {
                assert!((g - w).abs() < 0.05, "{rgb:?}: {got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn round_trip_is_within_one_code_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f32> = (0..3 * 1000).map(|_| rng.gen()).collect();
        let img = RgbImage::new(1000, 1, data).unwrap();
        let back = lab_to_rgb(&rgb_to_lab(&img));
        let max_err = img
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err < 1.0 / 255.0, "{max_err}");
    }

    #[test]
    fn white_lab_maps_to_white_rgb() {
        let rgb = lab_to_srgb([100.0, 0.0, 0.0]);
        assert!(rgb.iter().all(|&c| (c - 1.0).abs() < 1.0 / 255.0), "{rgb:?}");
    }

    #[test]
    fn out_of_gamut_is_clamped() {
        let rgb = lab_to_srgb([50.0, 120.0, -120.0]);
        assert!(rgb.iter().all(|c| (0.0..=1.0).contains(c)), "{rgb:?}");
        let kept = lab_to_srgb_preserving_lightness([50.0, 120.0, -120.0]);
        assert!(kept.iter().all(|c| (0.0..=1.0).contains(c)), "{kept:?}");
        assert!((srgb_to_lab(kept)[0] - 50.0).abs() < 1e-3);
    }

    #[test]
    fn grayscale_examples() {
        let white = extract_grayscale(&RgbImage::filled(3, 2, [1.0; 3]));
        assert_eq!(white.shape(), &[1, 1, 2, 3]);
        assert!(white.data().iter().all(|&v| (v - 1.0).abs() < 1e-6));
        let black = extract_grayscale(&RgbImage::filled(3, 2, [0.0; 3]));
        assert!(black.data().iter().all(|&v| v == 0.0));
        let gray = extract_grayscale(&RgbImage::filled(1, 1, [0.5; 3]));
        let expected = oracle_lab([0.5; 3])[0] / 100.0;
        assert!((f64::from(gray.data()[0]) - expected).abs() < 1e-4);
        assert!((gray.data()[0] - 0.5339).abs() < 1e-3, "{}", gray.data()[0]);
    }

    #[test]
    fn lightness_is_strictly_increasing_in_gray_level() {
        let ls: Vec<f64> = (0..=1000).map(|i| srgb_to_lab([i as f64 / 1000.0; 3])[0]).collect();
        assert!(ls.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn assemble_examples() {
        let l = Tensor::full([1, 1, 2, 2], 0.6f32);
        let zero = Tensor::zeros([1, 1, 2, 2]);
        let gray = assemble(&l, &zero, &zero).unwrap();
        for p in gray.pixels() {
            assert!((p[0] - p[1]).abs() < 1e-5 && (p[1] - p[2]).abs() < 1e-5, "{p:?}");
        }
        let a = Tensor::full([1, 1, 2, 2], 0.3f32);
        let b = Tensor::full([1, 1, 2, 2], -0.2f32);
        let out = assemble(&l, &a, &b).unwrap();
        let first = out.pixel(0, 0);
        assert!(out.pixels().all(|p| p == first));

        let wrong = Tensor::zeros([1, 1, 2, 3]);
        assert!(matches!(assemble(&l, &wrong, &zero), Err(Error::Shape { .. })));
    }

    #[test]
    fn identity_pipeline_reproduces_source() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f32> = (0..3 * 64).map(|_| rng.gen()).collect();
        let img = RgbImage::new(8, 8, data).unwrap();
        let pair = normalize(&rgb_to_lab(&img));
        let out = assemble(&extract_grayscale(&img), &pair.target_a, &pair.target_b).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1.0 / 255.0);
        }
    }

    #[test]
    fn identity_pipeline_on_cube_surface() {
        // saturated colors sit on the gamut boundary, where f32 rounding lands
        // them just outside
        let mut px = vec![[255u8, 255, 27]];
        for u in (0..=255).step_by(5) {
            for v in (0..=255).step_by(5) {
                for fixed in [0u8, 255] {
                    px.extend([[fixed, u as u8, v as u8], [u as u8, fixed, v as u8], [u as u8, v as u8, fixed]]);
                }
            }
        }
        let raw: Vec<u8> = px.iter().flatten().copied().collect();
        let img = RgbImage::from_rgb8(&image::RgbImage::from_raw(px.len() as u32, 1, raw).unwrap());
        let pair = normalize(&rgb_to_lab(&img));
        let out = assemble(&extract_grayscale(&img), &pair.target_a, &pair.target_b).unwrap();
        for (i, (a, b)) in img.data().iter().zip(out.data()).enumerate() {
            assert!((a - b).abs() < 1.0 / 255.0, "{:?}: {a} vs {b}", px[i / 3]);
        }
    }

    #[test]
    fn rgb8_conversion_round_trips() {
        let raw: Vec<u8> = (0..=255).chain(0..=255).chain(0..=255).collect();
        let src = image::RgbImage::from_raw(256, 1, raw).unwrap();
        assert_eq!(RgbImage::from_rgb8(&src).to_rgb8(), src);
    }

    proptest! {
        #[test]
        fn identity_pipeline_any_8bit_pixel(px in any::<[u8; 3]>()) {
            let img = RgbImage::from_rgb8(&image::RgbImage::from_raw(1, 1, px.to_vec()).unwrap());
            let pair = normalize(&rgb_to_lab(&img));
            let out = assemble(&extract_grayscale(&img), &pair.target_a, &pair.target_b).unwrap();
            for (a, b) in img.data().iter().zip(out.data()) {
                prop_assert!((a - b).abs() < 1.0 / 255.0);
            }
        }

        #[test]
        fn grayscale_ignores_chrominance(r in 0.0f32..=1.0, g in 0.0f32..=1.0, b in 0.0f32..=1.0) {
            let img = RgbImage::new(1, 1, vec![r, g, b]).unwrap();
            let mut lab = rgb_to_lab(&img);
            let before = extract_grayscale(&img).data()[0];
            lab.a[0] = 0.0;
            lab.b[0] = 0.0;
            let after = extract_grayscale(&lab_to_rgb(&lab)).data()[0];
            prop_assert!((before - after).abs() < 1e-3);
        }

        #[test]
        fn assemble_keeps_lightness_for_any_chroma(l in 0.0f32..=1.0, a in -1.5f32..1.5, b in -1.5f32..1.5) {
            let t = |v| Tensor::full([1, 1, 1, 1], v);
            let out = assemble(&t(l), &t(a), &t(b)).unwrap();
            let l_back = rgb_to_lab(&out).l[0] / L_SCALE;
            prop_assert!((l_back - l).abs() < 1.0 / 255.0, "{} vs {}", l_back, l);
        }

        #[test]
        fn normalize_then_denormalize_is_identity(l in 0.0f32..=100.0, a in -128.0f32..127.0, b in -128.0f32..127.0) {
            let lab = LabImage::new(1, 1, vec![l], vec![a], vec![b]).unwrap();
            let back = denormalize(&normalize(&lab)).unwrap();
            prop_assert!((back.l[0] - l).abs() <= f32::EPSILON * l.abs().max(1.0));
            prop_assert!((back.a[0] - a).abs() <= f32::EPSILON * a.abs().max(1.0));
            prop_assert!((back.b[0] - b).abs() <= f32::EPSILON * b.abs().max(1.0));
        }
    }
}
