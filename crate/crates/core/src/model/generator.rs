use ndarray::{concatenate, s, Array2, Array4, ArrayD, Axis};

use super::{GeneratorConfig, KERNEL, LEAKY_SLOPE, PADDING, STRIDE};
use crate::nn::init::init_parameters;
use crate::nn::{Activation, Block, Conv2d, ConvTranspose2d, Module, Param, Resample, TensorKind};
use crate::{Error, Result, Scalar};

/// One encoder → decoder concatenation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SkipLink {
    pub encoder_block: usize,
    pub decoder_block: usize,
    pub resolution: usize,
    /// Channels arriving from the decoder path (upsampled features).
    pub upsampled_channels: usize,
    /// Channels arriving from the encoder.
    pub skip_channels: usize,
}

/// Latent codes plus the per-block encoder activations used by the skips.
#[derive(Clone, Debug)]
pub struct Encoding<T> {
    /// `(batch, nz)`.
    pub latent: Array2<T>,
    pub activations: Vec<Array4<T>>,
}

#[derive(Clone, Debug)]
pub struct GeneratorOutput<T> {
    pub reconstruction: Array4<T>,
    pub latent: Array2<T>,
}

/// Bow-tie encoder-decoder with U-Net style skip concatenation.
///
/// Encoder block `i` halves the resolution and emits `base·2^i` channels.
/// A valid convolution maps the last encoder map to the `nz`-dimensional
/// code; a transposed convolution of the same kernel opens the decoder.
/// Decoder block `k` undoes encoder block `B-1-k`, consuming the
/// concatenation of the upsampled features and that block's activation.
#[derive(Clone, Debug)]
pub struct Generator<T> {
    config: GeneratorConfig,
    encoder: Vec<Block<T>>,
    bottleneck: Conv2d<T>,
    decoder_stem: Block<T>,
    decoder: Vec<Block<T>>,
    skips: Vec<SkipLink>,
}

pub fn build_generator<T: Scalar>(config: &GeneratorConfig, seed: u64) -> Result<Generator<T>> {
    config.validate()?;
    let blocks = config.blocks();
    let res = config.resolutions();
    let leaky = Activation::LeakyRelu(LEAKY_SLOPE);

    let mut encoder = Vec::with_capacity(blocks);
    let mut in_c = config.in_channels;
    for i in 0..blocks {
        let out_c = config.channels(i);
        let conv = Conv2d::new(in_c, out_c, KERNEL, STRIDE, PADDING);
        encoder.push(Block::new(Resample::Down(conv), i > 0, leaky));
        in_c = out_c;
    }
    let deepest = config.channels(blocks - 1);
    let final_res = res[blocks];
    let bottleneck = Conv2d::new(deepest, config.nz, final_res, 1, 0);
    let decoder_stem = Block::new(
        Resample::Up(ConvTranspose2d::new(config.nz, deepest, final_res, 1, 0)),
        true,
        Activation::Relu,
    );

    let mut decoder = Vec::with_capacity(blocks);
    let mut skips = Vec::with_capacity(blocks);
    let mut up_c = deepest;
    for k in 0..blocks {
        let level = blocks - 1 - k;
        let skip_c = config.channels(level);
        let is_head = level == 0;
        let out_c = if is_head {
            config.in_channels
        } else {
            config.channels(level - 1)
        };
        let output_padding = res[level] - STRIDE * res[level + 1];
        let conv =
            ConvTranspose2d::new(up_c + skip_c, out_c, KERNEL, STRIDE, PADDING).with_output_padding(output_padding);
        let activation = if is_head { Activation::Tanh } else { Activation::Relu };
        decoder.push(Block::new(Resample::Up(conv), !is_head, activation));
        skips.push(SkipLink {
            encoder_block: level,
            decoder_block: k,
            resolution: res[level + 1],
            upsampled_channels: up_c,
            skip_channels: skip_c,
        });
        up_c = out_c;
    }

    let mut g = Generator {
        config: config.clone(),
        encoder,
        bottleneck,
        decoder_stem,
        decoder,
        skips,
    };
    g.validate_structure()?;
    init_parameters(&mut g, seed);
    Ok(g)
}

impl<T: Scalar> Generator<T> {
    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn skip_links(&self) -> &[SkipLink] {
        &self.skips
    }

    pub fn skips_enabled(&self) -> bool {
        self.config.skip_connections
    }

    /// Switches between concatenating encoder activations and concatenating
    /// zeros (the ablation).
    pub fn set_skips_enabled(&mut self, enabled: bool) {
        self.config.skip_connections = enabled;
    }

    /// Structural check of the skip wiring: each decoder block's declared
    /// input channels equal its upsampled channels plus the encoder channels
    /// concatenated onto them, at matching resolution.
    pub fn validate_structure(&self) -> Result<()> {
        let blocks = self.encoder.len();
        if self.decoder.len() != blocks || self.skips.len() != blocks {
            return Err(Error::Config(format!(
                "asymmetric generator: {} encoder blocks, {} decoder blocks",
                blocks,
                self.decoder.len()
            )));
        }
        let res = self.config.resolutions();
        let mut up_c = self.decoder_stem.out_channels();
        for link in &self.skips {
            let block = &self.decoder[link.decoder_block];
            let enc = &self.encoder[link.encoder_block];
            if link.upsampled_channels != up_c
                || link.skip_channels != enc.out_channels()
                || block.in_channels() != link.upsampled_channels + link.skip_channels
                || link.resolution != res[link.encoder_block + 1]
                || block.conv.output_size(link.resolution) != res[link.encoder_block]
            {
                return Err(Error::Config(format!("inconsistent skip wiring at {link:?}")));
            }
            up_c = block.out_channels();
        }
        if up_c != self.config.in_channels {
            return Err(Error::Config("decoder head does not restore the input channels".into()));
        }
        Ok(())
    }

    fn check_input(&self, x: &Array4<T>) -> Result<()> {
        let (n, c, h, w) = x.dim();
        let s = self.config.input_size;
        if n == 0 || c != self.config.in_channels || h != s || w != s {
            return Err(Error::shape(&[n.max(1), self.config.in_channels, s, s], &[n, c, h, w]));
        }
        Ok(())
    }

    fn skip_input(&self, up: &Array4<T>, skip: &Array4<T>) -> Array4<T> {
        if self.config.skip_connections {
            concatenate(Axis(1), &[up.view(), skip.view()]).expect("matching resolutions")
        } else {
            let zeros = Array4::zeros(skip.dim());
            concatenate(Axis(1), &[up.view(), zeros.view()]).expect("matching resolutions")
        }
    }

    fn latent_rows(z: Array4<T>) -> Array2<T> {
        let n = z.dim().0;
        let nz = z.len() / n;
        z.into_shape_with_order((n, nz)).expect("contiguous latent")
    }

    /// Evaluation-mode encoding.
    pub fn encode(&self, x: &Array4<T>) -> Result<Encoding<T>> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.encoder.len());
        let mut h = x.clone();
        for block in &self.encoder {
            h = block.forward_eval(&h);
            activations.push(h.clone());
        }
        let z = self.bottleneck.forward_eval(&h);
        Ok(Encoding {
            latent: Self::latent_rows(z),
            activations,
        })
    }

    fn decode_eval(&self, latent: &Array2<T>, activations: &[Array4<T>]) -> Array4<T> {
        let (n, nz) = latent.dim();
        let z = latent
            .to_owned()
            .into_shape_with_order((n, nz, 1, 1))
            .expect("contiguous");
        let mut d = self.decoder_stem.forward_eval(&z);
        for (block, link) in self.decoder.iter().zip(&self.skips) {
            let input = self.skip_input(&d, &activations[link.encoder_block]);
            d = block.forward_eval(&input);
        }
        d
    }

    /// Evaluation-mode forward pass returning both the reconstruction and
    /// the latent code.
    pub fn forward_eval(&self, x: &Array4<T>) -> Result<GeneratorOutput<T>> {
        let enc = self.encode(x)?;
        let reconstruction = self.decode_eval(&enc.latent, &enc.activations);
        Ok(GeneratorOutput {
            reconstruction,
            latent: enc.latent,
        })
    }

    /// Evaluation-mode reconstruction, same shape as `x`, values in (-1, 1).
    pub fn reconstruct(&self, x: &Array4<T>) -> Result<Array4<T>> {
        Ok(self.forward_eval(x)?.reconstruction)
    }

    /// Training-mode forward pass (batch statistics); caches for
    /// [`Generator::backward`].
    pub fn forward_train(&mut self, x: &Array4<T>) -> Result<GeneratorOutput<T>> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.encoder.len());
        let mut h = x.clone();
        for block in &mut self.encoder {
            h = block.forward_train(&h);
            activations.push(h.clone());
        }
        let z = self.bottleneck.forward_train(&h);
        let latent = Self::latent_rows(z.clone());
        let mut d = self.decoder_stem.forward_train(&z);
        for k in 0..self.decoder.len() {
            let link = self.skips[k];
            let input = self.skip_input(&d, &activations[link.encoder_block]);
            d = self.decoder[k].forward_train(&input);
        }
        Ok(GeneratorOutput {
            reconstruction: d,
            latent,
        })
    }

    /// Back-propagates the reconstruction gradient, accumulating parameter
    /// gradients; returns the gradient with respect to the input.
    pub fn backward(&mut self, d_reconstruction: &Array4<T>) -> Array4<T> {
        let blocks = self.encoder.len();
        let mut skip_grads: Vec<Option<Array4<T>>> = vec![None; blocks];
        let mut d = d_reconstruction.clone();
        for k in (0..blocks).rev() {
            let link = self.skips[k];
            let d_input = self.decoder[k].backward(&d);
            let up = link.upsampled_channels;
            d = d_input.slice(s![.., ..up, .., ..]).to_owned();
            if self.config.skip_connections {
                skip_grads[link.encoder_block] = Some(d_input.slice(s![.., up.., .., ..]).to_owned());
            }
        }
        let dz = self.decoder_stem.backward(&d);
        let mut dh = self.bottleneck.backward(&dz);
        let mut dx = dh.clone();
        for i in (0..blocks).rev() {
            if let Some(g) = skip_grads[i].take() {
                dh += &g;
            }
            dx = self.encoder[i].backward(&dh);
            dh = dx.clone();
        }
        dx
    }
}

impl<T: Scalar> Module<T> for Generator<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, b) in self.encoder.iter_mut().enumerate() {
            b.visit_params(&crate::nn::join(prefix, &format!("encoder.{i}")), f);
        }
        self.bottleneck.visit_params(&crate::nn::join(prefix, "bottleneck"), f);
        self.decoder_stem
            .visit_params(&crate::nn::join(prefix, "decoder_stem"), f);
        for (i, b) in self.decoder.iter_mut().enumerate() {
            b.visit_params(&crate::nn::join(prefix, &format!("decoder.{i}")), f);
        }
    }

    fn visit_tensors(&self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, &ArrayD<T>)) {
        for (i, b) in self.encoder.iter().enumerate() {
            b.visit_tensors(&crate::nn::join(prefix, &format!("encoder.{i}")), f);
        }
        self.bottleneck.visit_tensors(&crate::nn::join(prefix, "bottleneck"), f);
        self.decoder_stem
            .visit_tensors(&crate::nn::join(prefix, "decoder_stem"), f);
        for (i, b) in self.decoder.iter().enumerate() {
            b.visit_tensors(&crate::nn::join(prefix, &format!("decoder.{i}")), f);
        }
    }

    fn visit_tensors_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, &mut ArrayD<T>)) {
        for (i, b) in self.encoder.iter_mut().enumerate() {
            b.visit_tensors_mut(&crate::nn::join(prefix, &format!("encoder.{i}")), f);
        }
        self.bottleneck
            .visit_tensors_mut(&crate::nn::join(prefix, "bottleneck"), f);
        self.decoder_stem
            .visit_tensors_mut(&crate::nn::join(prefix, "decoder_stem"), f);
        for (i, b) in self.decoder.iter_mut().enumerate() {
            b.visit_tensors_mut(&crate::nn::join(prefix, &format!("decoder.{i}")), f);
        }
    }
}
