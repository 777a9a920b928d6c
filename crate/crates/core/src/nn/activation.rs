use ndarray::{Array4, Zip};
use serde::{Deserialize, Serialize};

use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    LeakyRelu(f64),
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: &Array4<T>) -> Array4<T> {
        match self {
            Activation::LeakyRelu(slope) => {
                let s = T::lit(slope);
                x.mapv(|v| if v > T::zero() { v } else { v * s })
            }
            Activation::Relu => x.mapv(|v| if v > T::zero() { v } else { T::zero() }),
            Activation::Tanh => x.mapv(|v| v.tanh()),
            Activation::Sigmoid => x.mapv(sigmoid),
            Activation::Identity => x.clone(),
        }
    }

    /// Input gradient given the forward *output* `y`.
    pub fn backward<T: Scalar>(self, y: &Array4<T>, dy: &Array4<T>) -> Array4<T> {
        let mut dx = dy.clone();
        match self {
            Activation::LeakyRelu(slope) => {
                let s = T::lit(slope);
                Zip::from(&mut dx).and(y).for_each(|d, &o| {
                    if o <= T::zero() {
                        *d *= s
                    }
                });
            }
            Activation::Relu => Zip::from(&mut dx).and(y).for_each(|d, &o| {
                if o <= T::zero() {
                    *d = T::zero()
                }
            }),
            Activation::Tanh => Zip::from(&mut dx).and(y).for_each(|d, &o| *d *= T::one() - o * o),
            Activation::Sigmoid => Zip::from(&mut dx).and(y).for_each(|d, &o| *d *= o * (T::one() - o)),
            Activation::Identity => {}
        }
        dx
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
