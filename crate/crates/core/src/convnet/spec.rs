use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ConvNetError, Tensor};

/// conv(k x k, stride 1) -> ReLU -> 2x2 max-pool (stride 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Two patches stacked as channels, one linear output.
    TwoChannel,
    /// One weight-shared branch per patch; descriptors are the flattened
    /// block features.
    Siamese,
}

impl HeadKind {
    pub fn input_channels(self) -> usize {
        match self {
            HeadKind::TwoChannel => 2,
            HeadKind::Siamese => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_size: usize,
    pub blocks: Vec<ConvBlock>,
    pub head: HeadKind,
}

pub const SUPPORTED_INPUT_SIZES: [usize; 3] = [16, 32, 64];

impl NetSpec {
    pub fn new(input_size: usize, blocks: Vec<ConvBlock>, head: HeadKind) -> Result<Self, ConvNetError> {
        let spec = Self {
            input_size,
            blocks,
            head,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// conv(c->32, 5) - pool - conv(32->64, 5) - pool - FC(-> 1).
    pub fn default_for(input_size: usize, head: HeadKind) -> Result<Self, ConvNetError> {
        Self::new(
            input_size,
            vec![
                ConvBlock {
                    in_ch: head.input_channels(),
                    out_ch: 32,
                    kernel: 5,
                },
                ConvBlock {
                    in_ch: 32,
                    out_ch: 64,
                    kernel: 5,
                },
            ],
            head,
        )
    }

    pub fn two_channel(input_size: usize) -> Result<Self, ConvNetError> {
        Self::default_for(input_size, HeadKind::TwoChannel)
    }

    pub fn validate(&self) -> Result<(), ConvNetError> {
        let bad = |m: String| Err(ConvNetError::InvalidSpec(m));
        if !SUPPORTED_INPUT_SIZES.contains(&self.input_size) {
            return bad(format!(
                "input size {} not in {SUPPORTED_INPUT_SIZES:?}",
                self.input_size
            ));
        }
        if self.blocks.is_empty() {
            return bad("at least one conv block is required".into());
        }
        if self.blocks[0].in_ch != self.head.input_channels() {
            return bad(format!(
                "first block takes {} channels, head {:?} needs {}",
                self.blocks[0].in_ch,
                self.head,
                self.head.input_channels()
            ));
        }
        let mut side = self.input_size;
        let mut ch = self.blocks[0].in_ch;
        for (i, b) in self.blocks.iter().enumerate() {
            if b.in_ch != ch {
                return bad(format!("block {i} expects {} channels, gets {ch}", b.in_ch));
            }
            if b.kernel == 0 || b.out_ch == 0 {
                return bad(format!("block {i} has a zero kernel or channel count"));
            }
            if b.kernel > side {
                return bad(format!("block {i} kernel {} exceeds side {side}", b.kernel));
            }
            side = (side - b.kernel + 1) / 2;
            if side == 0 {
                return bad(format!("spatial size vanishes after block {i}"));
            }
            ch = b.out_ch;
        }
        Ok(())
    }

    /// Spatial side of the input to each block, followed by the final side.
    pub fn sides(&self) -> Vec<usize> {
        let mut sides = vec![self.input_size];
        let mut side = self.input_size;
        for b in &self.blocks {
            side = (side - b.kernel + 1) / 2;
            sides.push(side);
        }
        sides
    }

    /// Width of the flattened block output feeding the linear head.
    pub fn feature_len(&self) -> usize {
        let side = *self.sides().last().unwrap();
        self.blocks.last().unwrap().out_ch * side * side
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Weights and biases for every conv block, then the linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    spec: NetSpec,
    layers: Vec<LayerParams>,
}

impl NetworkParams {
    pub fn zeros(spec: &NetSpec) -> Self {
        let layers = Self::shapes(spec)
            .into_iter()
            .map(|(w, b)| LayerParams {
                weight: Tensor::zeros(w),
                bias: Tensor::zeros(b),
            })
            .collect();
        Self {
            spec: spec.clone(),
            layers,
        }
    }

    /// Uniform in `+-sqrt(6 / (fan_in + fan_out))` per layer, zero biases.
    pub fn init(spec: &NetSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(spec);
        for (i, layer) in params.layers.iter_mut().enumerate() {
            let (fan_in, fan_out) = match spec.blocks.get(i) {
                Some(b) => (b.in_ch * b.kernel * b.kernel, b.out_ch * b.kernel * b.kernel),
                None => (spec.feature_len(), 1),
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in layer.weight.data_mut() {
                *w = rng.random_range(-limit..limit) as f32;
            }
        }
        params
    }

    pub fn from_layers(spec: &NetSpec, layers: Vec<LayerParams>) -> Result<Self, ConvNetError> {
        spec.validate()?;
        let shapes = Self::shapes(spec);
        if shapes.len() != layers.len() {
            return Err(ConvNetError::ShapeMismatch(format!(
                "spec has {} layers, got {}",
                shapes.len(),
                layers.len()
            )));
        }
        for (i, ((w, b), l)) in shapes.iter().zip(&layers).enumerate() {
            if l.weight.shape() != w.as_slice() || l.bias.shape() != b.as_slice() {
                return Err(ConvNetError::ShapeMismatch(format!(
                    "layer {i}: expected {w:?}/{b:?}, got {:?}/{:?}",
                    l.weight.shape(),
                    l.bias.shape()
                )));
            }
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    /// Weight and bias shapes in declaration order.
    pub fn shapes(spec: &NetSpec) -> Vec<(Vec<usize>, Vec<usize>)> {
        let mut shapes: Vec<_> = spec
            .blocks
            .iter()
            .map(|b| (vec![b.out_ch, b.in_ch, b.kernel, b.kernel], vec![b.out_ch]))
            .collect();
        shapes.push((vec![1, spec.feature_len()], vec![1]));
        shapes
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape_algebra() {
        for (size, side) in [(16, 1), (32, 5), (64, 13)] {
            let spec = NetSpec::two_channel(size).unwrap();
            let sides = spec.sides();
            for (i, b) in spec.blocks.iter().enumerate() {
                assert_eq!(sides[i + 1], (sides[i] - b.kernel + 1) / 2);
            }
            assert_eq!(*sides.last().unwrap(), side);
            assert_eq!(spec.feature_len(), 64 * side * side);
        }
        assert_eq!(NetSpec::two_channel(32).unwrap().feature_len(), 64 * 5 * 5);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(NetSpec::two_channel(24).is_err());
        let one_ch = vec![ConvBlock { in_ch: 1, out_ch: 4, kernel: 3 }];
        assert!(NetSpec::new(16, one_ch.clone(), HeadKind::TwoChannel).is_err());
        assert!(NetSpec::new(16, one_ch, HeadKind::Siamese).is_ok());
        let vanishing = vec![
            ConvBlock { in_ch: 2, out_ch: 4, kernel: 5 },
            ConvBlock { in_ch: 4, out_ch: 4, kernel: 5 },
            ConvBlock { in_ch: 4, out_ch: 4, kernel: 3 },
        ];
        assert!(NetSpec::new(16, vanishing, HeadKind::TwoChannel).is_err());
        let broken_chain = vec![
            ConvBlock { in_ch: 2, out_ch: 4, kernel: 3 },
            ConvBlock { in_ch: 5, out_ch: 4, kernel: 3 },
        ];
        assert!(NetSpec::new(32, broken_chain, HeadKind::TwoChannel).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let spec = NetSpec::two_channel(32).unwrap();
        let a = NetworkParams::init(&spec, 7);
        assert_eq!(a, NetworkParams::init(&spec, 7));
        assert_ne!(a, NetworkParams::init(&spec, 8));
        let limit = (6.0f64 / (2.0 * 25.0 + 32.0 * 25.0)).sqrt() as f32;
        assert!(a.layers()[0].weight.data().iter().all(|w| w.abs() <= limit));
        assert!(a.layers().iter().all(|l| l.bias.data().iter().all(|&b| b == 0.0)));
        assert_eq!(a.n_params(), 2 * 32 * 25 + 32 + 32 * 64 * 25 + 64 + 1600 + 1);
    }
}
