//! Adversarial, contextual and latent training losses and their weighted
//! combination. All losses are batch means.

use ndarray::{Array, Array1, Array2, ArrayView, ArrayView1, ArrayView2, Axis, Dimension, Zip};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

/// Probabilities are clamped to `[EPS, 1 - EPS]` inside logarithms.
pub const PROB_EPS: f64 = 1e-7;

/// Weights of the generator objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    #[serde(default = "LossWeights::default_adv")]
    pub lambda_adv: f64,
    #[serde(default = "LossWeights::default_con")]
    pub lambda_con: f64,
    #[serde(default = "LossWeights::default_lat")]
    pub lambda_lat: f64,
}

impl LossWeights {
    fn default_adv() -> f64 {
        1.0
    }
    fn default_con() -> f64 {
        40.0
    }
    fn default_lat() -> f64 {
        1.0
    }

    pub fn new(lambda_adv: f64, lambda_con: f64, lambda_lat: f64) -> Result<Self> {
        let w = LossWeights {
            lambda_adv,
            lambda_con,
            lambda_lat,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_adv, self.lambda_con, self.lambda_lat];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative: {all:?}"
            )));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(Error::Config("loss weights must not all be zero".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        LossWeights {
            lambda_adv: alpha * self.lambda_adv,
            lambda_con: alpha * self.lambda_con,
            lambda_lat: alpha * self.lambda_lat,
        }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_adv: 1.0,
            lambda_con: 40.0,
            lambda_lat: 1.0,
        }
    }
}

/// How the feature-space distance is reduced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentNorm {
    /// Mean of squared elementwise differences.
    #[default]
    Mse,
    /// Per-sample Euclidean norm, averaged over the batch.
    L2,
}

/// The three generator terms of one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub adv: f64,
    pub con: f64,
    pub lat: f64,
}

/// Loss values of one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub adv_g: f64,
    pub adv_d: f64,
    pub con: f64,
    pub lat: f64,
    pub total_g: f64,
}

#[inline]
fn clamp_prob<T: Scalar>(p: T) -> T {
    // NaN must survive the clamp so divergence is detected downstream.
    if p.is_nan() {
        return p;
    }
    let eps = T::lit(PROB_EPS);
    p.max(eps).min(T::one() - eps)
}

#[inline]
fn clamp_active<T: Scalar>(p: T) -> bool {
    let eps = T::lit(PROB_EPS);
    p < eps || p > T::one() - eps
}

fn mean_of<T: Scalar>(n: usize) -> T {
    T::one() / T::from_usize(n.max(1)).unwrap()
}

fn check_same(a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::shape(a, b));
    }
    Ok(())
}

/// Discriminator loss: `−mean log p_real − mean log(1 − p_fake)`.
pub fn adversarial_loss_d<T: Scalar>(p_real: ArrayView1<T>, p_fake: ArrayView1<T>) -> T {
    adversarial_loss_d_grad(p_real, p_fake).0
}

/// Loss and gradients with respect to `p_real` and `p_fake`.
pub fn adversarial_loss_d_grad<T: Scalar>(p_real: ArrayView1<T>, p_fake: ArrayView1<T>) -> (T, Array1<T>, Array1<T>) {
    let (real, d_real) = neg_log_mean(p_real, false);
    let (fake, d_fake) = neg_log_mean(p_fake, true);
    (real + fake, d_real, d_fake)
}

/// Non-saturating generator loss: `−mean log p_fake`.
pub fn adversarial_loss_g<T: Scalar>(p_fake: ArrayView1<T>) -> T {
    adversarial_loss_g_grad(p_fake).0
}

pub fn adversarial_loss_g_grad<T: Scalar>(p_fake: ArrayView1<T>) -> (T, Array1<T>) {
    neg_log_mean(p_fake, false)
}

/// `−mean log(q)` with `q = p` or `q = 1 − p`.
fn neg_log_mean<T: Scalar>(p: ArrayView1<T>, complement: bool) -> (T, Array1<T>) {
    let scale = mean_of::<T>(p.len());
    let mut loss = T::zero();
    let mut grad = Array1::zeros(p.len());
    for (g, &raw) in grad.iter_mut().zip(p.iter()) {
        let c = clamp_prob(raw);
        let q = if complement { T::one() - c } else { c };
        loss -= q.ln();
        if !clamp_active(raw) {
            let dq = -scale / q;
            *g = if complement { -dq } else { dq };
        }
    }
    (loss * scale, grad)
}

/// Mean absolute elementwise difference.
pub fn contextual_loss<T: Scalar, D: Dimension>(x: ArrayView<T, D>, x_hat: ArrayView<T, D>) -> Result<T> {
    check_same(x.shape(), x_hat.shape())?;
    let n = x.len();
    let sum = Zip::from(&x)
        .and(&x_hat)
        .fold(T::zero(), |acc, &a, &b| acc + (a - b).abs());
    Ok(sum * mean_of::<T>(n))
}

/// Gradient of [`contextual_loss`] with respect to `x_hat`.
pub fn contextual_loss_grad<T: Scalar, D: Dimension>(
    x: ArrayView<T, D>,
    x_hat: ArrayView<T, D>,
) -> Result<(T, Array<T, D>)> {
    let loss = contextual_loss(x.view(), x_hat.view())?;
    let scale = mean_of::<T>(x.len());
    let mut grad = x_hat.to_owned();
    Zip::from(&mut grad).and(&x).for_each(|g, &a| {
        let d = *g - a;
        *g = if d > T::zero() {
            scale
        } else if d < T::zero() {
            -scale
        } else {
            T::zero()
        };
    });
    Ok((loss, grad))
}

/// Distance between discriminator features of inputs and reconstructions.
pub fn latent_loss<T: Scalar>(f_x: ArrayView2<T>, f_xhat: ArrayView2<T>, norm: LatentNorm) -> Result<T> {
    Ok(latent_loss_grad(f_x, f_xhat, norm)?.0)
}

/// Loss and gradient with respect to `f_xhat` (`f_x` is a constant target).
pub fn latent_loss_grad<T: Scalar>(
    f_x: ArrayView2<T>,
    f_xhat: ArrayView2<T>,
    norm: LatentNorm,
) -> Result<(T, Array2<T>)> {
    check_same(f_x.shape(), f_xhat.shape())?;
    let mut diff = f_xhat.to_owned();
    diff -= &f_x;
    match norm {
        LatentNorm::Mse => {
            let scale = mean_of::<T>(diff.len());
            let loss = diff.iter().map(|&d| d * d).sum::<T>() * scale;
            let two = T::lit(2.0);
            diff.mapv_inplace(|d| two * scale * d);
            Ok((loss, diff))
        }
        LatentNorm::L2 => {
            let scale = mean_of::<T>(diff.nrows());
            let mut loss = T::zero();
            for mut row in diff.axis_iter_mut(Axis(0)) {
                let norm = row.iter().map(|&d| d * d).sum::<T>().sqrt();
                loss += norm;
                if norm > T::zero() {
                    row.mapv_inplace(|d| scale * d / norm);
                } else {
                    row.fill(T::zero());
                }
            }
            Ok((loss * scale, diff))
        }
    }
}

/// Per-sample mean absolute difference over all non-batch axes.
pub fn contextual_per_sample<T: Scalar>(x: &ndarray::Array4<T>, x_hat: &ndarray::Array4<T>) -> Result<Array1<T>> {
    check_same(x.shape(), x_hat.shape())?;
    Ok(x.outer_iter()
        .zip(x_hat.outer_iter())
        .map(|(a, b)| contextual_loss(a, b).expect("equal shapes"))
        .collect())
}

/// Per-sample latent distance, reduced like [`latent_loss`].
pub fn latent_per_sample<T: Scalar>(f_x: ArrayView2<T>, f_xhat: ArrayView2<T>, norm: LatentNorm) -> Result<Array1<T>> {
    check_same(f_x.shape(), f_xhat.shape())?;
    Ok(f_x
        .outer_iter()
        .zip(f_xhat.outer_iter())
        .map(|(a, b)| {
            let sq = a.iter().zip(b.iter()).map(|(&p, &q)| (p - q) * (p - q)).sum::<T>();
            match norm {
                LatentNorm::Mse => sq * mean_of::<T>(a.len()),
                LatentNorm::L2 => sq.sqrt(),
            }
        })
        .collect())
}

/// `λ_adv·adv + λ_con·con + λ_lat·lat`; any non-finite part is a
/// divergence.
pub fn total_generator_loss(parts: LossParts, w: &LossWeights) -> Result<f64> {
    for (term, v) in [
        ("adversarial", parts.adv),
        ("contextual", parts.con),
        ("latent", parts.lat),
    ] {
        if !v.is_finite() {
            return Err(Error::Divergence {
                term,
                epoch: None,
                history: None,
            });
        }
    }
    Ok(w.lambda_adv * parts.adv + w.lambda_con * parts.con + w.lambda_lat * parts.lat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array4};
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn discriminator_loss_values() {
        let eps = PROB_EPS;
        let perfect = adversarial_loss_d(array![1.0 - eps].view(), array![eps].view());
        assert!(perfect < 1e-6);
        let chance = adversarial_loss_d(array![0.5, 0.5].view(), array![0.5, 0.5].view());
        assert!((chance - 2.0 * LN2).abs() < 1e-12);
        assert!((chance - 1.3863).abs() < 1e-4);
        let worst = adversarial_loss_d(array![eps].view(), array![1.0 - eps].view());
        assert!(worst.is_finite() && worst > 30.0);
        let beyond = adversarial_loss_d(array![0.0f64].view(), array![1.0].view());
        assert!(beyond.is_finite());
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn generator_loss_values() {
        assert!(adversarial_loss_g(array![1.0 - PROB_EPS].view()) < 1e-6);
        assert!((adversarial_loss_g(array![0.5f64].view()) - LN2).abs() < 1e-12);
        assert!((adversarial_loss_g(array![0.5f32].view()) - 0.6931).abs() < 1e-4);
        let worst = adversarial_loss_g(array![PROB_EPS].view());
        assert!(worst.is_finite() && worst > 15.0);
    }

    #[test]
    fn nan_probabilities_are_not_absorbed() {
        assert!(adversarial_loss_g(array![f64::NAN].view()).is_nan());
        assert!(adversarial_loss_d(array![0.5].view(), array![f64::NAN].view()).is_nan());
    }

    #[test]
    fn contextual_values() {
        let x = Array4::<f64>::from_elem((2, 1, 3, 3), 1.0);
        assert_eq!(contextual_loss(x.view(), x.view()).unwrap(), 0.0);
        let y = Array4::<f64>::from_elem((2, 1, 3, 3), -1.0);
        assert_eq!(contextual_loss(x.view(), y.view()).unwrap(), 2.0);
        let z = Array4::<f64>::zeros((2, 1, 3, 4));
        assert!(matches!(
            contextual_loss(x.view(), z.view()),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn latent_values() {
        let a = Array2::<f64>::zeros((3, 5));
        let b = Array2::<f64>::ones((3, 5));
        assert_eq!(latent_loss(a.view(), a.view(), LatentNorm::Mse).unwrap(), 0.0);
        assert_eq!(latent_loss(a.view(), b.view(), LatentNorm::Mse).unwrap(), 1.0);
        let l2 = latent_loss(a.view(), b.view(), LatentNorm::L2).unwrap();
        assert!((l2 - 5f64.sqrt()).abs() < 1e-12);
        assert!(latent_loss(a.view(), Array2::zeros((3, 4)).view(), LatentNorm::Mse).is_err());
    }

    #[test]
    fn weighted_total() {
        let parts = LossParts {
            adv: 0.5,
            con: 0.1,
            lat: 0.2,
        };
        let total = total_generator_loss(parts, &LossWeights::default()).unwrap();
        assert!((total - 4.7).abs() < 1e-12);
        let masked = LossWeights::new(0.0, 1.0, 0.0).unwrap();
        assert_eq!(total_generator_loss(parts, &masked).unwrap(), 0.1);
        let bad = LossParts { lat: f64::NAN, ..parts };
        let err = total_generator_loss(bad, &LossWeights::default()).unwrap_err();
        assert!(matches!(err, Error::Divergence { term: "latent", .. }));
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::new(0.0, 0.0, 0.0).is_err());
        assert!(LossWeights::new(-1.0, 1.0, 0.0).is_err());
        assert_eq!(LossWeights::default(), LossWeights::new(1.0, 40.0, 1.0).unwrap());
    }

    #[test]
    fn per_sample_reductions_average_to_batch_loss() {
        let x = Array4::from_shape_fn((3, 2, 2, 2), |(a, b, c, d)| (a + b * 2 + c * 3 + d) as f64 * 0.1);
        let y = x.mapv(|v| v * 0.5 - 0.2);
        let per = contextual_per_sample(&x, &y).unwrap();
        let batch = contextual_loss(x.view(), y.view()).unwrap();
        assert!((per.mean().unwrap() - batch).abs() < 1e-12);
        let f = x.clone().into_shape_with_order((3, 8)).unwrap();
        let g = y.clone().into_shape_with_order((3, 8)).unwrap();
        let per = latent_per_sample(f.view(), g.view(), LatentNorm::Mse).unwrap();
        let batch = latent_loss(f.view(), g.view(), LatentNorm::Mse).unwrap();
        assert!((per.mean().unwrap() - batch).abs() < 1e-12);
    }

    fn scalar_mean_abs(a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..a.len() {
            s += (a[i] - b[i]).abs();
        }
        s / a.len() as f64
    }

    fn scalar_mean_sq(a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..a.len() {
            s += (a[i] - b[i]) * (a[i] - b[i]);
        }
        s / a.len() as f64
    }

    fn finite_difference_check(loss: impl Fn(&Array1<f64>) -> f64, at: &Array1<f64>, grad: &Array1<f64>) {
        let h = 1e-6;
        for i in 0..at.len() {
            let mut p = at.clone();
            p[i] += h;
            let mut m = at.clone();
            m[i] -= h;
            let num = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!(
                (num - grad[i]).abs() <= 1e-6 * (1.0 + num.abs()),
                "{i}: {num} vs {}",
                grad[i]
            );
        }
    }

    proptest! {
        #[test]
        fn contextual_matches_scalar_loop(v in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..64)) {
            let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let x = Array1::from(a.clone());
            let y = Array1::from(b.clone());
            let got = contextual_loss(x.view(), y.view()).unwrap();
            prop_assert!((got - scalar_mean_abs(&a, &b)).abs() < 1e-6);
            prop_assert_eq!(got, contextual_loss(y.view(), x.view()).unwrap());
            prop_assert!(got >= 0.0);
        }

        #[test]
        fn latent_matches_scalar_loop(v in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..64)) {
            let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let n = a.len();
            let x = Array2::from_shape_vec((1, n), a.clone()).unwrap();
            let y = Array2::from_shape_vec((1, n), b.clone()).unwrap();
            let got = latent_loss(x.view(), y.view(), LatentNorm::Mse).unwrap();
            prop_assert!((got - scalar_mean_sq(&a, &b)).abs() < 1e-6);
            prop_assert_eq!(got, latent_loss(y.view(), x.view(), LatentNorm::Mse).unwrap());
            let l2 = latent_loss(x.view(), y.view(), LatentNorm::L2).unwrap();
            prop_assert!((l2 - l2_oracle(&a, &b)).abs() < 1e-9);
        }

        #[test]
        fn total_is_linear_in_weights(alpha in 0.0f64..10.0, adv in 0.0f64..5.0, con in 0.0f64..5.0, lat in 0.0f64..5.0) {
            let parts = LossParts { adv, con, lat };
            let w = LossWeights::default();
            let scaled = total_generator_loss(parts, &w.scaled(alpha)).unwrap();
            let base = total_generator_loss(parts, &w).unwrap();
            prop_assert!((scaled - alpha * base).abs() <= 1e-9 * (1.0 + scaled.abs()));
        }

        #[test]
        fn adversarial_losses_are_nonnegative(p in prop::collection::vec(0.0f64..=1.0, 1..16), q in prop::collection::vec(0.0f64..=1.0, 1..16)) {
            let p = Array1::from(p);
            let q = Array1::from(q);
            prop_assert!(adversarial_loss_d(p.view(), q.view()) >= 0.0);
            prop_assert!(adversarial_loss_g(q.view()) >= 0.0);
        }

        #[test]
        fn loss_gradients_match_finite_differences(p in prop::collection::vec(0.05f64..0.95, 1..8)) {
            let at = Array1::from(p);
            let (_, g) = adversarial_loss_g_grad(at.view());
            finite_difference_check(|v| adversarial_loss_g(v.view()), &at, &g);
            let real = at.mapv(|v| 1.0 - v * 0.5);
            let (_, _, gf) = adversarial_loss_d_grad(real.view(), at.view());
            finite_difference_check(|v| adversarial_loss_d(real.view(), v.view()), &at, &gf);
            let (_, gr, _) = adversarial_loss_d_grad(at.view(), real.view());
            finite_difference_check(|v| adversarial_loss_d(v.view(), real.view()), &at, &gr);
        }
    }

    fn l2_oracle(a: &[f64], b: &[f64]) -> f64 {
        scalar_mean_sq(a, b).mul_add(a.len() as f64, 0.0).sqrt()
    }
}
