use ndarray::{Array1, Array4, ArrayD, Axis, IxDyn};

use super::{join, Module, Param, TensorKind};
use crate::Scalar;

const EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug)]
struct NormCache<T> {
    normalized: Array4<T>,
    inv_std: Array1<T>,
}

/// Per-channel batch normalisation over `(N, H, W)`.
#[derive(Clone, Debug)]
pub struct BatchNorm2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub running_mean: ArrayD<T>,
    pub running_var: ArrayD<T>,
    cache: Option<NormCache<T>>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            weight: Param::filled(&[channels], T::one()),
            bias: Param::zeros(&[channels]),
            running_mean: ArrayD::zeros(IxDyn(&[channels])),
            running_var: ArrayD::ones(IxDyn(&[channels])),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.weight.len()
    }

    fn affine(&self, x: &Array4<T>, mean: &[T], inv_std: &[T]) -> Array4<T> {
        let mut y = x.to_owned();
        for (c, mut plane) in y.axis_iter_mut(Axis(1)).enumerate() {
            let scale = self.weight.value[c] * inv_std[c];
            let shift = self.bias.value[c] - mean[c] * scale;
            plane.mapv_inplace(|v| v * scale + shift);
        }
        y
    }

    pub fn forward_eval(&self, x: &Array4<T>) -> Array4<T> {
        let eps = T::lit(EPS);
        let mean: Vec<T> = self.running_mean.iter().copied().collect();
        let inv_std: Vec<T> = self.running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        self.affine(x, &mean, &inv_std)
    }

    pub fn forward_train(&mut self, x: &Array4<T>) -> Array4<T> {
        let (n, c, h, w) = x.dim();
        let count = n * h * w;
        let m = T::from_usize(count).unwrap();
        let eps = T::lit(EPS);
        let momentum = T::lit(MOMENTUM);
        let mut mean = Array1::<T>::zeros(c);
        let mut inv_std = Array1::<T>::zeros(c);
        for (ch, plane) in x.axis_iter(Axis(1)).enumerate() {
            let mu = plane.sum() / m;
            let var = plane.fold(T::zero(), |acc, &v| acc + (v - mu) * (v - mu)) / m;
            mean[ch] = mu;
            inv_std[ch] = T::one() / (var + eps).sqrt();
            let unbiased = if count > 1 { var * m / (m - T::one()) } else { var };
            self.running_mean[ch] = (T::one() - momentum) * self.running_mean[ch] + momentum * mu;
            self.running_var[ch] = (T::one() - momentum) * self.running_var[ch] + momentum * unbiased;
        }
        let mut normalized = x.to_owned();
        for (ch, mut plane) in normalized.axis_iter_mut(Axis(1)).enumerate() {
            let (mu, s) = (mean[ch], inv_std[ch]);
            plane.mapv_inplace(|v| (v - mu) * s);
        }
        let mut y = normalized.clone();
        for (ch, mut plane) in y.axis_iter_mut(Axis(1)).enumerate() {
            let (g, b) = (self.weight.value[ch], self.bias.value[ch]);
            plane.mapv_inplace(|v| v * g + b);
        }
        self.cache = Some(NormCache { normalized, inv_std });
        y
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let cache = self.cache.take().expect("backward without forward_train");
        let (n, _, h, w) = dy.dim();
        let m = T::from_usize(n * h * w).unwrap();
        let mut dx = Array4::<T>::zeros(dy.dim());
        for (ch, ((dy_c, xhat_c), mut dx_c)) in dy
            .axis_iter(Axis(1))
            .zip(cache.normalized.axis_iter(Axis(1)))
            .zip(dx.axis_iter_mut(Axis(1)))
            .enumerate()
        {
            let sum_dy = dy_c.sum();
            let sum_dy_xhat = dy_c.iter().zip(xhat_c.iter()).map(|(&a, &b)| a * b).sum::<T>();
            self.weight.grad[ch] += sum_dy_xhat;
            self.bias.grad[ch] += sum_dy;
            let k = self.weight.value[ch] * cache.inv_std[ch] / m;
            ndarray::Zip::from(&mut dx_c)
                .and(&dy_c)
                .and(&xhat_c)
                .for_each(|d, &g, &xh| *d = k * (m * g - sum_dy - xh * sum_dy_xhat));
        }
        dx
    }
}

impl<T: Scalar> Module<T> for BatchNorm2d<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }

    fn visit_tensors(&self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, &ArrayD<T>)) {
        f(&join(prefix, "weight"), TensorKind::Parameter, &self.weight.value);
        f(&join(prefix, "bias"), TensorKind::Parameter, &self.bias.value);
        f(&join(prefix, "running_mean"), TensorKind::Buffer, &self.running_mean);
        f(&join(prefix, "running_var"), TensorKind::Buffer, &self.running_var);
    }

    fn visit_tensors_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, &mut ArrayD<T>)) {
        f(&join(prefix, "weight"), TensorKind::Parameter, &mut self.weight.value);
        f(&join(prefix, "bias"), TensorKind::Parameter, &mut self.bias.value);
        f(
            &join(prefix, "running_mean"),
            TensorKind::Buffer,
            &mut self.running_mean,
        );
        f(&join(prefix, "running_var"), TensorKind::Buffer, &mut self.running_var);
    }
}
