//! The skip-connected encoder-decoder generator and the feature-tapped
//! discriminator.

mod discriminator;
mod generator;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use discriminator::{build_discriminator, Discriminator, DiscriminatorOutput};
pub use generator::{build_generator, Encoding, Generator, GeneratorOutput, SkipLink};

pub const DEFAULT_NZ: usize = 100;
pub const DEFAULT_BASE_FILTERS: usize = 64;
pub const LEAKY_SLOPE: f64 = 0.2;

/// Kernel, stride and padding of every resampling convolution.
pub(crate) const KERNEL: usize = 4;
pub(crate) const STRIDE: usize = 2;
pub(crate) const PADDING: usize = 1;

fn default_nz() -> usize {
    DEFAULT_NZ
}

fn default_base_filters() -> usize {
    DEFAULT_BASE_FILTERS
}

fn default_true() -> bool {
    true
}

/// Architecture of the generator; the discriminator mirrors its encoder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Side length of the square input images.
    pub input_size: usize,
    pub in_channels: usize,
    #[serde(default = "default_nz")]
    pub nz: usize,
    #[serde(default = "default_base_filters")]
    pub base_filters: usize,
    /// Number of stride-2 blocks; when absent, halve until a 2×2 map.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_blocks: Option<usize>,
    /// Concatenate encoder activations into the decoder. Disabling feeds
    /// zeros of the same shape instead, leaving the parameter layout intact.
    #[serde(default = "default_true")]
    pub skip_connections: bool,
}

impl GeneratorConfig {
    pub fn new(input_size: usize, in_channels: usize) -> Self {
        GeneratorConfig {
            input_size,
            in_channels,
            nz: DEFAULT_NZ,
            base_filters: DEFAULT_BASE_FILTERS,
            n_blocks: None,
            skip_connections: true,
        }
    }

    /// Block count: the explicit value, or the number of halvings that
    /// leaves a 2×2 map (5 for 64×64, 4 for 32×32).
    pub fn blocks(&self) -> usize {
        self.n_blocks.unwrap_or_else(|| {
            let mut size = self.input_size;
            let mut blocks = 0;
            while size >= 4 {
                size /= 2;
                blocks += 1;
            }
            blocks.max(1)
        })
    }

    /// Spatial size after each encoder block, starting with the input.
    pub fn resolutions(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_size];
        for _ in 0..self.blocks() {
            let s = *sizes.last().unwrap();
            if s < 2 {
                break;
            }
            sizes.push((s + 2 * PADDING - KERNEL) / STRIDE + 1);
        }
        sizes
    }

    /// Output channels of encoder block `i`.
    pub fn channels(&self, block: usize) -> usize {
        self.base_filters << block
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.nz == 0 || self.base_filters == 0 {
            return Err(Error::Config(
                "in_channels, nz and base_filters must be positive".into(),
            ));
        }
        let blocks = self.blocks();
        if blocks == 0 {
            return Err(Error::Config("n_blocks must be at least 1".into()));
        }
        if blocks >= usize::BITS as usize || self.input_size >> blocks == 0 {
            return Err(Error::Config(format!(
                "input size {} is too small for {} stride-2 blocks",
                self.input_size, blocks
            )));
        }
        debug_assert_eq!(self.resolutions().len(), blocks + 1);
        Ok(())
    }
}
