use ndarray::{Array1, Array2, Array4, ArrayD, Zip};

use super::{GeneratorConfig, KERNEL, LEAKY_SLOPE, PADDING, STRIDE};
use crate::nn::init::init_parameters;
use crate::nn::{Activation, Block, Conv2d, Module, Param, Resample, TensorKind};
use crate::{Error, Result, Scalar};

/// Realness probabilities and the feature tap `f(x)` for a batch.
#[derive(Clone, Debug)]
pub struct DiscriminatorOutput<T> {
    /// `(batch,)`, each in (0, 1).
    pub probabilities: Array1<T>,
    /// `(batch, feature_len)`: flattened post-activation output of the last
    /// convolutional block.
    pub features: Array2<T>,
}

/// DCGAN discriminator: the generator's encoder topology followed by a
/// valid convolution to a single logit and a sigmoid.
#[derive(Clone, Debug)]
pub struct Discriminator<T> {
    config: GeneratorConfig,
    blocks: Vec<Block<T>>,
    classifier: Conv2d<T>,
    feature_shape: (usize, usize, usize),
    probabilities: Option<Array1<T>>,
}

pub fn build_discriminator<T: Scalar>(config: &GeneratorConfig, seed: u64) -> Result<Discriminator<T>> {
    config.validate()?;
    let n_blocks = config.blocks();
    let res = config.resolutions();
    let leaky = Activation::LeakyRelu(LEAKY_SLOPE);
    let mut blocks = Vec::with_capacity(n_blocks);
    let mut in_c = config.in_channels;
    for i in 0..n_blocks {
        let out_c = config.channels(i);
        let conv = Conv2d::new(in_c, out_c, KERNEL, STRIDE, PADDING);
        blocks.push(Block::new(Resample::Down(conv), i > 0, leaky));
        in_c = out_c;
    }
    let final_res = res[n_blocks];
    let classifier = Conv2d::new(in_c, 1, final_res, 1, 0);
    let mut d = Discriminator {
        config: config.clone(),
        blocks,
        classifier,
        feature_shape: (in_c, final_res, final_res),
        probabilities: None,
    };
    init_parameters(&mut d, seed);
    Ok(d)
}

impl<T: Scalar> Discriminator<T> {
    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    /// Length of the flattened feature vector.
    pub fn feature_len(&self) -> usize {
        let (c, h, w) = self.feature_shape;
        c * h * w
    }

    fn check_input(&self, x: &Array4<T>) -> Result<()> {
        let (n, c, h, w) = x.dim();
        let s = self.config.input_size;
        if n == 0 || c != self.config.in_channels || h != s || w != s {
            return Err(Error::shape(&[n.max(1), self.config.in_channels, s, s], &[n, c, h, w]));
        }
        Ok(())
    }

    fn head(&self, features: &Array4<T>, logits: Array4<T>) -> DiscriminatorOutput<T> {
        let n = features.dim().0;
        let probabilities = logits
            .into_shape_with_order(n)
            .expect("one logit per sample")
            .mapv(crate::nn::sigmoid);
        let features = features
            .to_owned()
            .into_shape_with_order((n, self.feature_len()))
            .expect("contiguous features");
        DiscriminatorOutput {
            probabilities,
            features,
        }
    }

    /// Evaluation-mode forward pass (running statistics, no caching).
    pub fn discriminate(&self, x: &Array4<T>) -> Result<DiscriminatorOutput<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for block in &self.blocks {
            h = block.forward_eval(&h);
        }
        let logits = self.classifier.forward_eval(&h);
        Ok(self.head(&h, logits))
    }

    pub fn forward_train(&mut self, x: &Array4<T>) -> Result<DiscriminatorOutput<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for block in &mut self.blocks {
            h = block.forward_train(&h);
        }
        let logits = self.classifier.forward_train(&h);
        let out = self.head(&h, logits);
        self.probabilities = Some(out.probabilities.clone());
        Ok(out)
    }

    /// Back-propagates gradients with respect to the probabilities and
    /// (optionally) the feature tap; returns the input gradient.
    pub fn backward(&mut self, d_probabilities: &Array1<T>, d_features: Option<&Array2<T>>) -> Array4<T> {
        let p = self.probabilities.take().expect("backward without forward_train");
        let n = p.len();
        let mut d_logits = d_probabilities.clone();
        Zip::from(&mut d_logits)
            .and(&p)
            .for_each(|d, &p| *d *= p * (T::one() - p));
        let d_logits = d_logits
            .into_shape_with_order((n, 1, 1, 1))
            .expect("one logit per sample");
        let mut dh = self.classifier.backward(&d_logits);
        if let Some(df) = d_features {
            let (c, h, w) = self.feature_shape;
            let df = df
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((n, c, h, w))
                .expect("feature gradient shape");
            dh += &df;
        }
        for block in self.blocks.iter_mut().rev() {
            dh = block.backward(&dh);
        }
        dh
    }
}

impl<T: Scalar> Module<T> for Discriminator<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params(&crate::nn::join(prefix, &format!("blocks.{i}")), f);
        }
        self.classifier.visit_params(&crate::nn::join(prefix, "classifier"), f);
    }

    fn visit_tensors(&self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, &ArrayD<T>)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_tensors(&crate::nn::join(prefix, &format!("blocks.{i}")), f);
        }
        self.classifier.visit_tensors(&crate::nn::join(prefix, "classifier"), f);
    }

    fn visit_tensors_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, &mut ArrayD<T>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_tensors_mut(&crate::nn::join(prefix, &format!("blocks.{i}")), f);
        }
        self.classifier
            .visit_tensors_mut(&crate::nn::join(prefix, "classifier"), f);
    }
}
