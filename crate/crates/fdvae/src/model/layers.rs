//! Parameterized layers backed by `candle` variables.
//!
//! Weight init is fan-in-scaled uniform `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
//! with zero biases, always drawn from a caller-provided seeded stream so
//! that two bundles built from the same seed are bit-identical.

use candle_core::{Tensor, Var};
use rand::Rng;

use super::{shape_mismatch, ModelError};
use crate::device;

fn uniform_data(rng: &mut impl Rng, n: usize, bound: f32) -> Vec<f32> {
    (0..n).map(|_| (rng.gen::<f32>() * 2.0 - 1.0) * bound).collect()
}

/// 2-D convolution with square kernel, explicit stride/padding, and bias.
#[derive(Debug)]
pub struct Conv2d {
    pub weight: Var,
    pub bias: Var,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(
        rng: &mut impl Rng,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self, ModelError> {
        let fan_in = in_channels * kernel * kernel;
        let bound = 1.0 / (fan_in as f32).sqrt();
        let w = uniform_data(rng, out_channels * fan_in, bound);
        let weight = Var::from_tensor(&Tensor::from_vec(
            w,
            (out_channels, in_channels, kernel, kernel),
            &device(),
        )?)?;
        let bias = Var::from_tensor(&Tensor::zeros(out_channels, candle_core::DType::F32, &device())?)?;
        Ok(Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        let y = x.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, 1)?;
        let b = self.bias.as_tensor().reshape((1, self.out_channels, 1, 1))?;
        Ok(y.broadcast_add(&b)?)
    }

    pub fn vars(&self) -> Vec<Var> {
        vec![self.weight.clone(), self.bias.clone()]
    }
}

/// 2-D transposed convolution with square kernel and bias.
#[derive(Debug)]
pub struct ConvTranspose2d {
    pub weight: Var,
    pub bias: Var,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvTranspose2d {
    pub fn new(
        rng: &mut impl Rng,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self, ModelError> {
        let fan_in = in_channels * kernel * kernel;
        let bound = 1.0 / (fan_in as f32).sqrt();
        let w = uniform_data(rng, in_channels * out_channels * kernel * kernel, bound);
        let weight = Var::from_tensor(&Tensor::from_vec(
            w,
            (in_channels, out_channels, kernel, kernel),
            &device(),
        )?)?;
        let bias = Var::from_tensor(&Tensor::zeros(out_channels, candle_core::DType::F32, &device())?)?;
        Ok(Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        let y = x.conv_transpose2d(self.weight.as_tensor(), self.padding, 0, self.stride, 1)?;
        let b = self.bias.as_tensor().reshape((1, self.out_channels, 1, 1))?;
        Ok(y.broadcast_add(&b)?)
    }

    pub fn vars(&self) -> Vec<Var> {
        vec![self.weight.clone(), self.bias.clone()]
    }
}

/// One affine map `x W + b` with weight shape `[in, out]`.
#[derive(Debug)]
pub struct Affine {
    pub weight: Var,
    pub bias: Var,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Affine {
    pub fn new(rng: &mut impl Rng, in_dim: usize, out_dim: usize) -> Result<Self, ModelError> {
        let bound = 1.0 / (in_dim as f32).sqrt();
        let w = uniform_data(rng, in_dim * out_dim, bound);
        Self::from_data(w, vec![0.0; out_dim], in_dim, out_dim)
    }

    /// All-zero map; used to freeze the downstream transform out of a model.
    pub fn zeros(in_dim: usize, out_dim: usize) -> Result<Self, ModelError> {
        Self::from_data(vec![0.0; in_dim * out_dim], vec![0.0; out_dim], in_dim, out_dim)
    }

    /// Identity map; requires `in_dim == out_dim`.
    pub fn identity(dim: usize) -> Result<Self, ModelError> {
        let mut w = vec![0.0f32; dim * dim];
        for i in 0..dim {
            w[i * dim + i] = 1.0;
        }
        Self::from_data(w, vec![0.0; dim], dim, dim)
    }

    pub fn from_data(
        weight: Vec<f32>,
        bias: Vec<f32>,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Self, ModelError> {
        let weight = Var::from_tensor(&Tensor::from_vec(weight, (in_dim, out_dim), &device())?)?;
        let bias = Var::from_tensor(&Tensor::from_vec(bias, out_dim, &device())?)?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    /// `[B, in] -> [B, out]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        if x.dims().len() != 2 || x.dims()[1] != self.in_dim {
            return Err(shape_mismatch("affine", format!("[B, {}]", self.in_dim), x));
        }
        Ok(x.matmul(self.weight.as_tensor())?
            .broadcast_add(self.bias.as_tensor())?)
    }

    /// Same forward pass but through a constant copy of the parameters, so
    /// gradients reach the input and never these weights. This is how the
    /// adversarial terms reverse: the encoder-side objective is built on
    /// detached head parameters.
    pub fn forward_detached_params(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        if x.dims().len() != 2 || x.dims()[1] != self.in_dim {
            return Err(shape_mismatch("affine", format!("[B, {}]", self.in_dim), x));
        }
        Ok(x.matmul(&self.weight.as_tensor().detach())?
            .broadcast_add(&self.bias.as_tensor().detach())?)
    }

    pub fn vars(&self) -> Vec<Var> {
        vec![self.weight.clone(), self.bias.clone()]
    }
}

/// A scalar-logit head on a latent subspace: `[B, in] -> [B]`.
///
/// The sigmoid of the returned logit is the class-1 probability.
pub fn classify_head(head: &Affine, subspace: &Tensor) -> Result<Tensor, ModelError> {
    if head.out_dim != 1 {
        return Err(ModelError::ShapeMismatch {
            op: "classify_head",
            expected: "[in, 1] head".to_string(),
            got: format!("[{}, {}]", head.in_dim, head.out_dim),
        });
    }
    Ok(head.forward(subspace)?.squeeze(1)?)
}

/// Fully connected stack with leaky-ReLU between layers and raw logits out.
#[derive(Debug)]
pub struct Mlp {
    pub layers: Vec<Affine>,
    pub negative_slope: f64,
}

impl Mlp {
    pub fn new(rng: &mut impl Rng, dims: &[usize], negative_slope: f64) -> Result<Self, ModelError> {
        let layers = dims
            .windows(2)
            .map(|w| Affine::new(rng, w[0], w[1]))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            layers,
            negative_slope,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i != last {
                let scaled = (&h * self.negative_slope)?;
                h = h.maximum(&scaled)?;
            }
        }
        Ok(h)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|l| l.vars()).collect()
    }
}
