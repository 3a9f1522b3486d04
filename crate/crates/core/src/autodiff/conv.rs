//! im2col-based convolution kernels shared by the tape's forward and backward passes.

use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Padding {
    /// Zero padding of `(k - 1) / 2`; with stride 1 the spatial size is kept.
    Same,
    /// No padding; output is `H - k + 1` at stride 1.
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub hout: usize,
    pub wout: usize,
}

impl ConvGeometry {
    pub fn new(
        cin: usize,
        h: usize,
        w: usize,
        k: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if k % 2 == 0 {
            return Err(Error::precondition(
                "conv2d",
                format!("kernel size must be odd, got {k}"),
            ));
        }
        if stride == 0 {
            return Err(Error::precondition("conv2d", "stride must be at least 1"));
        }
        let pad = match padding {
            Padding::Same => (k - 1) / 2,
            Padding::Valid => 0,
        };
        if h + 2 * pad < k {
            return Err(Error::Shape {
                op: "conv2d",
                axis: "height",
                expected: k,
                found: h + 2 * pad,
            });
        }
        if w + 2 * pad < k {
            return Err(Error::Shape {
                op: "conv2d",
                axis: "width",
                expected: k,
                found: w + 2 * pad,
            });
        }
        Ok(Self {
            cin,
            h,
            w,
            k,
            stride,
            pad,
            hout: (h + 2 * pad - k) / stride + 1,
            wout: (w + 2 * pad - k) / stride + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn out_pixels(&self) -> usize {
        self.hout * self.wout
    }

    /// Source coordinate for output position `o` and kernel tap `t`, if inside the image.
    #[inline]
    fn source(&self, o: usize, t: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + t) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

/// Unfolds one image `[cin, h, w]` into `cols: [cin·k·k, hout·wout]`.
pub(crate) fn im2col<T: Scalar>(image: &[T], g: &ConvGeometry, cols: &mut [T]) {
    let hw_out = g.out_pixels();
    for c in 0..g.cin {
        let plane = &image[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.hout {
                    let line = &mut dst[oy * g.wout..(oy + 1) * g.wout];
                    match g.source(oy, ky, g.h) {
                        None => line.iter_mut().for_each(|v| *v = T::zero()),
                        Some(iy) => {
                            let src = &plane[iy * g.w..(iy + 1) * g.w];
                            for (ox, v) in line.iter_mut().enumerate() {
                                *v = match g.source(ox, kx, g.w) {
                                    Some(ix) => src[ix],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `cols` back into `image`, accumulating.
pub(crate) fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry, image: &mut [T]) {
    let hw_out = g.out_pixels();
    for c in 0..g.cin {
        let plane = &mut image[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.hout {
                    let Some(iy) = g.source(oy, ky, g.h) else {
                        continue;
                    };
                    for ox in 0..g.wout {
                        if let Some(ix) = g.source(ox, kx, g.w) {
                            plane[iy * g.w + ix] += src[oy * g.wout + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward pass over a whole batch. `out` has layout `[batch, cout, hout, wout]`.
pub(crate) fn forward<T: Scalar>(
    input: &[T],
    batch: usize,
    g: &ConvGeometry,
    kernel: &[T],
    bias: &[T],
    out: &mut [T],
) {
    let cout = bias.len();
    let in_len = g.cin * g.h * g.w;
    let out_len = cout * g.out_pixels();
    let mut cols = vec![T::zero(); g.patch_len() * g.out_pixels()];
    for b in 0..batch {
        im2col(&input[b * in_len..(b + 1) * in_len], g, &mut cols);
        let dst = &mut out[b * out_len..(b + 1) * out_len];
        T::gemm(
            cout,
            g.patch_len(),
            g.out_pixels(),
            kernel,
            false,
            &cols,
            false,
            dst,
            false,
        );
        for (co, &bv) in bias.iter().enumerate() {
            dst[co * g.out_pixels()..(co + 1) * g.out_pixels()]
                .iter_mut()
                .for_each(|v| *v += bv);
        }
    }
}

/// Gradients of the convolution. Each `Option` is filled (accumulating) when present.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Scalar>(
    input: &[T],
    batch: usize,
    g: &ConvGeometry,
    kernel: &[T],
    cout: usize,
    grad_out: &[T],
    mut grad_input: Option<&mut [T]>,
    mut grad_kernel: Option<&mut [T]>,
    mut grad_bias: Option<&mut [T]>,
) {
    let in_len = g.cin * g.h * g.w;
    let hw = g.out_pixels();
    let out_len = cout * hw;
    let mut cols = vec![T::zero(); g.patch_len() * hw];
    for b in 0..batch {
        let dy = &grad_out[b * out_len..(b + 1) * out_len];
        if let Some(gk) = grad_kernel.as_deref_mut() {
            im2col(&input[b * in_len..(b + 1) * in_len], g, &mut cols);
            T::gemm(cout, hw, g.patch_len(), dy, false, &cols, true, gk, true);
        }
        if let Some(gb) = grad_bias.as_deref_mut() {
            for (co, acc) in gb.iter_mut().enumerate() {
                *acc += dy[co * hw..(co + 1) * hw].iter().copied().sum::<T>();
            }
        }
        if let Some(gi) = grad_input.as_deref_mut() {
            T::gemm(g.patch_len(), cout, hw, kernel, true, dy, false, &mut cols, false);
            col2im(&cols, g, &mut gi[b * in_len..(b + 1) * in_len]);
        }
    }
}
