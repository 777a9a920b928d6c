use ndarray::{Array4, ArrayD};

use super::{join, Activation, BatchNorm2d, Conv2d, ConvTranspose2d, Module, Param, TensorKind};
use crate::Scalar;

#[derive(Clone, Debug)]
pub enum Resample<T> {
    Down(Conv2d<T>),
    Up(ConvTranspose2d<T>),
}

impl<T: Scalar> Resample<T> {
    pub fn in_channels(&self) -> usize {
        match self {
            Resample::Down(c) => c.in_channels(),
            Resample::Up(c) => c.in_channels(),
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            Resample::Down(c) => c.out_channels(),
            Resample::Up(c) => c.out_channels(),
        }
    }

    pub fn output_size(&self, input: usize) -> usize {
        match self {
            Resample::Down(c) => c.output_size(input),
            Resample::Up(c) => c.output_size(input),
        }
    }
}

/// Convolution → optional batch norm → activation.
#[derive(Clone, Debug)]
pub struct Block<T> {
    pub conv: Resample<T>,
    pub norm: Option<BatchNorm2d<T>>,
    pub activation: Activation,
    output: Option<Array4<T>>,
}

impl<T: Scalar> Block<T> {
    pub fn new(conv: Resample<T>, normalize: bool, activation: Activation) -> Self {
        let norm = normalize.then(|| BatchNorm2d::new(conv.out_channels()));
        Block {
            conv,
            norm,
            activation,
            output: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.conv.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels()
    }

    pub fn forward_eval(&self, x: &Array4<T>) -> Array4<T> {
        let mut h = match &self.conv {
            Resample::Down(c) => c.forward_eval(x),
            Resample::Up(c) => c.forward_eval(x),
        };
        if let Some(norm) = &self.norm {
            h = norm.forward_eval(&h);
        }
        self.activation.apply(&h)
    }

    pub fn forward_train(&mut self, x: &Array4<T>) -> Array4<T> {
        let mut h = match &mut self.conv {
            Resample::Down(c) => c.forward_train(x),
            Resample::Up(c) => c.forward_train(x),
        };
        if let Some(norm) = &mut self.norm {
            h = norm.forward_train(&h);
        }
        let y = self.activation.apply(&h);
        self.output = Some(y.clone());
        y
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let y = self.output.take().expect("backward without forward_train");
        let mut d = self.activation.backward(&y, dy);
        if let Some(norm) = &mut self.norm {
            d = norm.backward(&d);
        }
        match &mut self.conv {
            Resample::Down(c) => c.backward(&d),
            Resample::Up(c) => c.backward(&d),
        }
    }
}

impl<T: Scalar> Module<T> for Block<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        let conv = join(prefix, "conv");
        match &mut self.conv {
            Resample::Down(c) => c.visit_params(&conv, f),
            Resample::Up(c) => c.visit_params(&conv, f),
        }
        if let Some(norm) = &mut self.norm {
            norm.visit_params(&join(prefix, "norm"), f);
        }
    }

    fn visit_tensors(&self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, &ArrayD<T>)) {
        let conv = join(prefix, "conv");
        match &self.conv {
            Resample::Down(c) => c.visit_tensors(&conv, f),
            Resample::Up(c) => c.visit_tensors(&conv, f),
        }
        if let Some(norm) = &self.norm {
            norm.visit_tensors(&join(prefix, "norm"), f);
        }
    }

    fn visit_tensors_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, &mut ArrayD<T>)) {
        let conv = join(prefix, "conv");
        match &mut self.conv {
            Resample::Down(c) => c.visit_tensors_mut(&conv, f),
            Resample::Up(c) => c.visit_tensors_mut(&conv, f),
        }
        if let Some(norm) = &mut self.norm {
            norm.visit_tensors_mut(&join(prefix, "norm"), f);
        }
    }
}
