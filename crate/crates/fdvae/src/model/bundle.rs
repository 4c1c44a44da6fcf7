//! The complete model family: convolutional encoder/decoder, the
//! total-correlation discriminator, per-subspace attribute heads, and the
//! downstream classifier heads.
//!
//! Geometry is fixed:
//!
//! | encoder      | out ch | kernel | stride | pad | spatial out |
//! |--------------|-------:|-------:|-------:|----:|------------:|
//! | conv1        |     32 |      4 |      2 |   1 |       32×32 |
//! | conv2        |     32 |      4 |      2 |   1 |       16×16 |
//! | conv3        |     64 |      4 |      2 |   1 |         8×8 |
//! | conv4        |     64 |      4 |      2 |   1 |         4×4 |
//! | conv5        |    256 |      4 |      1 |   0 |         1×1 |
//! | conv6        |    120 |      1 |      1 |   0 |         1×1 |
//!
//! The 120 encoder outputs split into 60 posterior means and 60 log
//! variances (clamped to `[-10, 10]`). The decoder mirrors it back:
//! conv7 (1×1, 60→256) then five transposed convolutions with channels
//! 64, 64, 32, 32, 3 ending at 64×64 with no output activation.

use std::collections::BTreeMap;

use candle_core::{Tensor, Var};
use rand::Rng;

use super::latent::{GaussianPosterior, LATENT_DIM, SUBSPACE_DIM};
use super::layers::{Affine, Conv2d, ConvTranspose2d, Mlp};
use super::{shape_mismatch, ModelError};
use crate::train::stream;

/// Width of the image inputs and reconstructions (square).
pub const IMAGE_SIZE: usize = 64;
/// Channel count of image inputs and reconstructions.
pub const IMAGE_CHANNELS: usize = 3;
/// Log-variances are clamped to this symmetric range before use.
pub const LOG_VAR_CLAMP: f64 = 10.0;
/// Width of the "sensitive" block used by the ffvae-style baseline.
pub const SENSITIVE_DIM: usize = 30;

/// Convolutional encoder producing a diagonal-Gaussian posterior over the
/// 60-dim latent code.
#[derive(Debug)]
pub struct Encoder {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub conv3: Conv2d,
    pub conv4: Conv2d,
    pub conv5: Conv2d,
    pub conv6: Conv2d,
}

impl Encoder {
    pub fn new(rng: &mut impl Rng) -> Result<Self, ModelError> {
        Ok(Self {
            conv1: Conv2d::new(rng, IMAGE_CHANNELS, 32, 4, 2, 1)?,
            conv2: Conv2d::new(rng, 32, 32, 4, 2, 1)?,
            conv3: Conv2d::new(rng, 32, 64, 4, 2, 1)?,
            conv4: Conv2d::new(rng, 64, 64, 4, 2, 1)?,
            conv5: Conv2d::new(rng, 64, 256, 4, 1, 0)?,
            conv6: Conv2d::new(rng, 256, 2 * LATENT_DIM, 1, 1, 0)?,
        })
    }

    /// `[B, 3, 64, 64] -> ([B, 60] mu, [B, 60] log_var)`.
    pub fn forward(&self, x: &Tensor) -> Result<GaussianPosterior, ModelError> {
        let dims = x.dims();
        if dims.len() != 4
            || dims[1] != IMAGE_CHANNELS
            || dims[2] != IMAGE_SIZE
            || dims[3] != IMAGE_SIZE
        {
            return Err(shape_mismatch(
                "encoder",
                format!("[B, {IMAGE_CHANNELS}, {IMAGE_SIZE}, {IMAGE_SIZE}]"),
                x,
            ));
        }
        let h = self.conv1.forward(x)?.relu()?;
        let h = self.conv2.forward(&h)?.relu()?;
        let h = self.conv3.forward(&h)?.relu()?;
        let h = self.conv4.forward(&h)?.relu()?;
        let h = self.conv5.forward(&h)?.relu()?;
        let h = self.conv6.forward(&h)?; // no activation on the stats layer
        let flat = h.reshape((dims[0], 2 * LATENT_DIM))?;
        Ok(GaussianPosterior {
            mu: flat.narrow(1, 0, LATENT_DIM)?,
            log_var: flat
                .narrow(1, LATENT_DIM, LATENT_DIM)?
                .clamp(-LOG_VAR_CLAMP, LOG_VAR_CLAMP)?,
        })
    }

    pub fn vars(&self) -> Vec<Var> {
        [
            &self.conv1, &self.conv2, &self.conv3, &self.conv4, &self.conv5, &self.conv6,
        ]
        .iter()
        .flat_map(|c| c.vars())
        .collect()
    }

    fn collect_named(&self, out: &mut BTreeMap<String, Var>) {
        for (i, conv) in [
            &self.conv1, &self.conv2, &self.conv3, &self.conv4, &self.conv5, &self.conv6,
        ]
        .iter()
        .enumerate()
        {
            out.insert(format!("encoder.conv{}.weight", i + 1), conv.weight.clone());
            out.insert(format!("encoder.conv{}.bias", i + 1), conv.bias.clone());
        }
    }
}

/// Transposed-convolutional decoder from the latent code back to an image.
#[derive(Debug)]
pub struct Decoder {
    pub conv7: Conv2d,
    pub deconv1: ConvTranspose2d,
    pub deconv2: ConvTranspose2d,
    pub deconv3: ConvTranspose2d,
    pub deconv4: ConvTranspose2d,
    pub deconv5: ConvTranspose2d,
}

impl Decoder {
    pub fn new(rng: &mut impl Rng) -> Result<Self, ModelError> {
        Ok(Self {
            conv7: Conv2d::new(rng, LATENT_DIM, 256, 1, 1, 0)?,
            deconv1: ConvTranspose2d::new(rng, 256, 64, 4, 1, 0)?,
            deconv2: ConvTranspose2d::new(rng, 64, 64, 4, 2, 1)?,
            deconv3: ConvTranspose2d::new(rng, 64, 32, 4, 2, 1)?,
            deconv4: ConvTranspose2d::new(rng, 32, 32, 4, 2, 1)?,
            deconv5: ConvTranspose2d::new(rng, 32, IMAGE_CHANNELS, 4, 2, 1)?,
        })
    }

    /// `[B, 60] -> [B, 3, 64, 64]`, raw values (no output activation).
    pub fn forward(&self, z: &Tensor) -> Result<Tensor, ModelError> {
        let dims = z.dims();
        if dims.len() != 2 || dims[1] != LATENT_DIM {
            return Err(shape_mismatch("decoder", format!("[B, {LATENT_DIM}]"), z));
        }
        let h = z.reshape((dims[0], LATENT_DIM, 1, 1))?;
        let h = self.conv7.forward(&h)?.relu()?;
        let h = self.deconv1.forward(&h)?.relu()?;
        let h = self.deconv2.forward(&h)?.relu()?;
        let h = self.deconv3.forward(&h)?.relu()?;
        let h = self.deconv4.forward(&h)?.relu()?;
        Ok(self.deconv5.forward(&h)?)
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.conv7.vars();
        for d in [
            &self.deconv1, &self.deconv2, &self.deconv3, &self.deconv4, &self.deconv5,
        ] {
            v.extend(d.vars());
        }
        v
    }

    fn collect_named(&self, out: &mut BTreeMap<String, Var>) {
        out.insert("decoder.conv7.weight".into(), self.conv7.weight.clone());
        out.insert("decoder.conv7.bias".into(), self.conv7.bias.clone());
        for (i, d) in [
            &self.deconv1, &self.deconv2, &self.deconv3, &self.deconv4, &self.deconv5,
        ]
        .iter()
        .enumerate()
        {
            out.insert(format!("decoder.deconv{}.weight", i + 1), d.weight.clone());
            out.insert(format!("decoder.deconv{}.bias", i + 1), d.bias.clone());
        }
    }
}

/// Per-subspace scalar-logit heads.
///
/// `cls_*` pull attribute information *into* their subspace; `adv_*` are the
/// adversaries that detect leakage, which the encoder is trained to defeat:
/// `adv_p` reads the protected attribute off `z_t`, `adv_t` reads the target
/// attribute off `z_p`. `sensitive` is the ffvae-style head over the first
/// 30 latent dims.
#[derive(Debug)]
pub struct AttributeHeads {
    pub cls_t: Affine,
    pub cls_p: Affine,
    pub adv_p: Affine,
    pub adv_t: Affine,
    pub sensitive: Affine,
}

impl AttributeHeads {
    pub fn new(rng: &mut impl Rng) -> Result<Self, ModelError> {
        Ok(Self {
            cls_t: Affine::new(rng, SUBSPACE_DIM, 1)?,
            cls_p: Affine::new(rng, SUBSPACE_DIM, 1)?,
            adv_p: Affine::new(rng, SUBSPACE_DIM, 1)?,
            adv_t: Affine::new(rng, SUBSPACE_DIM, 1)?,
            sensitive: Affine::new(rng, SENSITIVE_DIM, 1)?,
        })
    }

    /// Heads trained jointly with the encoder (they share its objective).
    pub fn cls_vars(&self) -> Vec<Var> {
        let mut v = self.cls_t.vars();
        v.extend(self.cls_p.vars());
        v.extend(self.sensitive.vars());
        v
    }

    /// Heads trained against the encoder, on their own optimizer.
    pub fn adv_vars(&self) -> Vec<Var> {
        let mut v = self.adv_p.vars();
        v.extend(self.adv_t.vars());
        v
    }

    fn collect_named(&self, out: &mut BTreeMap<String, Var>) {
        for (name, head) in [
            ("cls_t", &self.cls_t),
            ("cls_p", &self.cls_p),
            ("adv_p", &self.adv_p),
            ("adv_t", &self.adv_t),
            ("sensitive", &self.sensitive),
        ] {
            out.insert(format!("heads.{name}.weight"), head.weight.clone());
            out.insert(format!("heads.{name}.bias"), head.bias.clone());
        }
    }
}

/// Everything trained in the representation phase.
///
/// All components are always constructed, each from its own labeled init
/// stream, regardless of which loss terms a variant activates. That keeps
/// initial weights bit-identical across variants of the same seed, so
/// ablations differ only through the objectives that are actually applied.
#[derive(Debug)]
pub struct ModelBundle {
    pub encoder: Encoder,
    pub decoder: Decoder,
    /// Density-ratio discriminator over the full code: logits
    /// `[real, shuffled]` per sample.
    pub discriminator: Mlp,
    pub heads: AttributeHeads,
}

impl ModelBundle {
    pub fn new(seed: u64) -> Result<Self, ModelError> {
        Ok(Self {
            encoder: Encoder::new(&mut stream(seed, "init/encoder"))?,
            decoder: Decoder::new(&mut stream(seed, "init/decoder"))?,
            discriminator: Mlp::new(
                &mut stream(seed, "init/discriminator"),
                &[LATENT_DIM, 256, 256, 2],
                0.2,
            )?,
            heads: AttributeHeads::new(&mut stream(seed, "init/heads"))?,
        })
    }

    /// Posterior for a batch of images.
    pub fn encode(&self, x: &Tensor) -> Result<GaussianPosterior, ModelError> {
        self.encoder.forward(x)
    }

    /// Reconstruction from a latent code.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor, ModelError> {
        self.decoder.forward(z)
    }

    /// Two-class logits `[B, 2]` distinguishing joint-posterior samples
    /// (class 0) from subspace-shuffled ones (class 1).
    pub fn discriminate(&self, z: &Tensor) -> Result<Tensor, ModelError> {
        self.discriminator.forward(z)
    }

    /// Parameters stepped by the main (encoder-side) optimizer.
    pub fn model_vars(&self) -> Vec<Var> {
        let mut v = self.encoder.vars();
        v.extend(self.decoder.vars());
        v.extend(self.heads.cls_vars());
        v
    }

    pub fn discriminator_vars(&self) -> Vec<Var> {
        self.discriminator.vars()
    }

    pub fn adversary_vars(&self) -> Vec<Var> {
        self.heads.adv_vars()
    }

    /// Every parameter, keyed by a stable dotted name.
    pub fn named_vars(&self) -> BTreeMap<String, Var> {
        let mut out = BTreeMap::new();
        self.encoder.collect_named(&mut out);
        self.decoder.collect_named(&mut out);
        for (i, layer) in self.discriminator.layers.iter().enumerate() {
            out.insert(format!("discriminator.fc{}.weight", i + 1), layer.weight.clone());
            out.insert(format!("discriminator.fc{}.bias", i + 1), layer.bias.clone());
        }
        self.heads.collect_named(&mut out);
        out
    }

    /// Copy parameter values out as plain tensors. The copies own their
    /// storage: later updates to the variables cannot alias into them.
    pub fn export_tensors(&self) -> Result<BTreeMap<String, Tensor>, ModelError> {
        self.named_vars()
            .into_iter()
            .map(|(k, v)| Ok((k, v.as_tensor().copy()?)))
            .collect()
    }

    /// Overwrite parameters from a named tensor map. The map must cover
    /// exactly this bundle's parameter set with matching shapes.
    pub fn load_tensors(&self, tensors: &BTreeMap<String, Tensor>) -> Result<(), ModelError> {
        load_into(&self.named_vars(), tensors)
    }
}

/// Heads for the downstream phase: the transform `f` over the mutual
/// subspace, the task head `d`, and the adversary `d̃` on `f`'s output.
#[derive(Debug)]
pub struct DownstreamHeads {
    pub transform: Affine,
    pub task: Affine,
    pub adversary: Affine,
}

impl DownstreamHeads {
    /// `task_in_dim` is the width of the task head's input, which depends on
    /// the configured downstream input (20 for subspace inputs, 30 for the
    /// ffvae-style blocks, 60 for full-code inputs).
    pub fn new(seed: u64, task_in_dim: usize) -> Result<Self, ModelError> {
        let mut rng = stream(seed, "init/downstream");
        Ok(Self {
            transform: Affine::new(&mut rng, SUBSPACE_DIM, SUBSPACE_DIM)?,
            task: Affine::new(&mut rng, task_in_dim, 1)?,
            adversary: Affine::new(&mut rng, SUBSPACE_DIM, 1)?,
        })
    }

    /// Parameters minimizing the task objective (`d` and `f`).
    pub fn task_vars(&self) -> Vec<Var> {
        let mut v = self.task.vars();
        v.extend(self.transform.vars());
        v
    }

    pub fn adversary_vars(&self) -> Vec<Var> {
        self.adversary.vars()
    }

    pub fn named_vars(&self) -> BTreeMap<String, Var> {
        let mut out = BTreeMap::new();
        for (name, head) in [
            ("transform", &self.transform),
            ("task", &self.task),
            ("adversary", &self.adversary),
        ] {
            out.insert(format!("downstream.{name}.weight"), head.weight.clone());
            out.insert(format!("downstream.{name}.bias"), head.bias.clone());
        }
        out
    }

    /// Copy parameter values out as plain tensors (owned storage).
    pub fn export_tensors(&self) -> Result<BTreeMap<String, Tensor>, ModelError> {
        self.named_vars()
            .into_iter()
            .map(|(k, v)| Ok((k, v.as_tensor().copy()?)))
            .collect()
    }

    pub fn load_tensors(&self, tensors: &BTreeMap<String, Tensor>) -> Result<(), ModelError> {
        load_into(&self.named_vars(), tensors)
    }
}

fn load_into(
    vars: &BTreeMap<String, Var>,
    tensors: &BTreeMap<String, Tensor>,
) -> Result<(), ModelError> {
    for name in tensors.keys() {
        if !vars.contains_key(name) {
            return Err(ModelError::IncompatibleCheckpoint(format!(
                "unexpected tensor `{name}`"
            )));
        }
    }
    for (name, var) in vars {
        let src = tensors.get(name).ok_or_else(|| {
            ModelError::IncompatibleCheckpoint(format!("missing tensor `{name}`"))
        })?;
        if src.dims() != var.dims() {
            return Err(ModelError::IncompatibleCheckpoint(format!(
                "tensor `{name}` has shape {:?}, expected {:?}",
                src.dims(),
                var.dims()
            )));
        }
        var.set(src)?;
    }
    Ok(())
}
