use ndarray::{Array2, Array4};

use crate::Scalar;

/// Geometry of a strided, zero-padded square-kernel convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn cols(&self) -> usize {
        self.batch * self.out_height() * self.out_width()
    }
}

/// Unfolds `x` (standard layout, NCHW) into a `(C·k·k, N·Ho·Wo)` matrix.
pub(crate) fn im2col<T: Scalar>(x: &[T], g: ConvGeometry) -> Array2<T> {
    let (ho, wo) = (g.out_height(), g.out_width());
    let plane = g.height * g.width;
    let mut out = Array2::<T>::zeros((g.rows(), g.cols()));
    let dst = out.as_slice_mut().expect("fresh array is contiguous");
    let ncols = g.cols();
    for c in 0..g.channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let row_dst = &mut dst[row * ncols..(row + 1) * ncols];
                for n in 0..g.batch {
                    let src = &x[(n * g.channels + c) * plane..(n * g.channels + c + 1) * plane];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                        if iy < 0 || iy >= g.height as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * g.width..(iy as usize + 1) * g.width];
                        let base = (n * ho + oy) * wo;
                        for ox in 0..wo {
                            let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                            if ix >= 0 && (ix as usize) < g.width {
                                row_dst[base + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into an NCHW tensor.
pub(crate) fn col2im<T: Scalar>(cols: &Array2<T>, g: ConvGeometry) -> Array4<T> {
    let (ho, wo) = (g.out_height(), g.out_width());
    debug_assert_eq!(cols.dim(), (g.rows(), g.cols()));
    let cols = cols.as_standard_layout();
    let src = cols.as_slice().expect("standard layout");
    let plane = g.height * g.width;
    let mut out = Array4::<T>::zeros((g.batch, g.channels, g.height, g.width));
    let dst = out.as_slice_mut().expect("fresh array is contiguous");
    let ncols = g.cols();
    for c in 0..g.channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let row_src = &src[row * ncols..(row + 1) * ncols];
                for n in 0..g.batch {
                    let img = &mut dst[(n * g.channels + c) * plane..(n * g.channels + c + 1) * plane];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                        if iy < 0 || iy >= g.height as isize {
                            continue;
                        }
                        let img_row = &mut img[iy as usize * g.width..(iy as usize + 1) * g.width];
                        let base = (n * ho + oy) * wo;
                        for ox in 0..wo {
                            let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                            if ix >= 0 && (ix as usize) < g.width {
                                img_row[ix as usize] += row_src[base + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}
