use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array4, ArrayD, ArrayView2, ArrayViewMut2, Ix2};

use super::im2col::{col2im, im2col, ConvGeometry};
use super::{join, Module, Param, TensorKind};
use crate::Scalar;

/// `(N, C, H, W)` → `(C, N·H·W)`.
fn channels_major<T: Scalar>(x: &Array4<T>) -> Array2<T> {
    let (n, c, h, w) = x.dim();
    x.view()
        .permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((c, n * h * w))
        .expect("contiguous")
}

/// `(C, N·H·W)` → `(N, C, H, W)`.
fn batch_major<T: Scalar>(m: Array2<T>, n: usize, h: usize, w: usize) -> Array4<T> {
    let c = m.nrows();
    m.into_shape_with_order((c, n, h, w))
        .expect("contiguous")
        .permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .into_owned()
}

fn matrix<T: Scalar>(a: &ArrayD<T>, rows: usize, cols: usize) -> ArrayView2<'_, T> {
    a.view()
        .into_shape_with_order((rows, cols))
        .expect("parameter tensors are contiguous")
        .into_dimensionality::<Ix2>()
        .expect("rank 2")
}

fn matrix_mut<T: Scalar>(a: &mut ArrayD<T>, rows: usize, cols: usize) -> ArrayViewMut2<'_, T> {
    a.view_mut()
        .into_shape_with_order((rows, cols))
        .expect("parameter tensors are contiguous")
        .into_dimensionality::<Ix2>()
        .expect("rank 2")
}

#[derive(Clone, Debug)]
struct ConvCache<T> {
    cols: Array2<T>,
    geom: ConvGeometry,
}

/// Bias-free 2-D convolution with square kernels. Weight layout
/// `(out, in, k, k)`.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    cache: Option<ConvCache<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Conv2d {
            weight: Param::zeros(&[out_channels, in_channels, kernel, kernel]),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            cache: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn output_size(&self, input: usize) -> usize {
        (input + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn geometry(&self, x: &Array4<T>) -> ConvGeometry {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv input channels");
        ConvGeometry {
            batch: n,
            channels: c,
            height: h,
            width: w,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
        }
    }

    fn apply(&self, x: &Array4<T>) -> (Array4<T>, ConvCache<T>) {
        let geom = self.geometry(x);
        let x = x.as_standard_layout();
        let cols = im2col(x.as_slice().expect("standard layout"), geom);
        let w = matrix(&self.weight.value, self.out_channels, geom.rows());
        let out = w.dot(&cols);
        let y = batch_major(out, geom.batch, geom.out_height(), geom.out_width());
        (y, ConvCache { cols, geom })
    }

    pub fn forward_eval(&self, x: &Array4<T>) -> Array4<T> {
        self.apply(x).0
    }

    pub fn forward_train(&mut self, x: &Array4<T>) -> Array4<T> {
        let (y, cache) = self.apply(x);
        self.cache = Some(cache);
        y
    }

    /// Accumulates the weight gradient and returns the input gradient.
    pub fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let cache = self.cache.take().expect("backward without forward_train");
        let dy_mat = channels_major(dy);
        let rows = cache.geom.rows();
        {
            let mut gw = matrix_mut(&mut self.weight.grad, self.out_channels, rows);
            general_mat_mul(T::one(), &dy_mat, &cache.cols.t(), T::one(), &mut gw);
        }
        let w = matrix(&self.weight.value, self.out_channels, rows);
        let dcols = w.t().dot(&dy_mat);
        col2im(&dcols, cache.geom)
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
    }

    fn visit_tensors(&self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, &ArrayD<T>)) {
        f(&join(prefix, "weight"), TensorKind::Parameter, &self.weight.value);
    }

    fn visit_tensors_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, &mut ArrayD<T>)) {
        f(&join(prefix, "weight"), TensorKind::Parameter, &mut self.weight.value);
    }
}

#[derive(Clone, Debug)]
struct TransposeCache<T> {
    input: Array2<T>,
    geom: ConvGeometry,
    in_height: usize,
    in_width: usize,
}

/// Bias-free transposed convolution (the adjoint of [`Conv2d`] with the
/// same kernel, stride and padding). Weight layout `(in, out, k, k)`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d<T> {
    pub weight: Param<T>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
    cache: Option<TransposeCache<T>>,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvTranspose2d {
            weight: Param::zeros(&[in_channels, out_channels, kernel, kernel]),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            output_padding: 0,
            cache: None,
        }
    }

    /// Extra rows/columns appended at the bottom/right so that odd-sized
    /// encoder maps can be matched exactly.
    pub fn with_output_padding(mut self, output_padding: usize) -> Self {
        assert!(
            output_padding < self.stride.max(1),
            "output padding must be below the stride"
        );
        self.output_padding = output_padding;
        self
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn output_size(&self, input: usize) -> usize {
        (input - 1) * self.stride + self.kernel + self.output_padding - 2 * self.padding
    }

    fn apply(&self, x: &Array4<T>) -> (Array4<T>, TransposeCache<T>) {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "transposed conv input channels");
        let geom = ConvGeometry {
            batch: n,
            channels: self.out_channels,
            height: self.output_size(h),
            width: self.output_size(w),
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
        };
        debug_assert_eq!((geom.out_height(), geom.out_width()), (h, w));
        let input = channels_major(x);
        let wm = matrix(&self.weight.value, self.in_channels, geom.rows());
        let cols = wm.t().dot(&input);
        let y = col2im(&cols, geom);
        (
            y,
            TransposeCache {
                input,
                geom,
                in_height: h,
                in_width: w,
            },
        )
    }

    pub fn forward_eval(&self, x: &Array4<T>) -> Array4<T> {
        self.apply(x).0
    }

    pub fn forward_train(&mut self, x: &Array4<T>) -> Array4<T> {
        let (y, cache) = self.apply(x);
        self.cache = Some(cache);
        y
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let cache = self.cache.take().expect("backward without forward_train");
        let dy = dy.as_standard_layout();
        let dcols = im2col(dy.as_slice().expect("standard layout"), cache.geom);
        let rows = cache.geom.rows();
        {
            let mut gw = matrix_mut(&mut self.weight.grad, self.in_channels, rows);
            general_mat_mul(T::one(), &cache.input, &dcols.t(), T::one(), &mut gw);
        }
        let wm = matrix(&self.weight.value, self.in_channels, rows);
        let dx = wm.dot(&dcols);
        batch_major(dx, cache.geom.batch, cache.in_height, cache.in_width)
    }
}

impl<T: Scalar> Module<T> for ConvTranspose2d<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
    }

    fn visit_tensors(&self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, &ArrayD<T>)) {
        f(&join(prefix, "weight"), TensorKind::Parameter, &self.weight.value);
    }

    fn visit_tensors_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, &mut ArrayD<T>)) {
        f(&join(prefix, "weight"), TensorKind::Parameter, &mut self.weight.value);
    }
}
