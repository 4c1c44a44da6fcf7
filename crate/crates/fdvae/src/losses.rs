//! Every training objective as a pure function of model outputs and labels.
//!
//! Sign conventions are fixed for minimization:
//! - the encoder/decoder/classifier side minimizes
//!   `recon + kl_beta·kl + alpha·tc + beta·(cls_t + cls_p) + gamma·(adv_t + adv_p)`
//!   where the `adv_*` terms are the *negated* adversary log-losses, so
//!   driving them down means defeating the adversaries;
//! - the discriminator minimizes its own cross-entropy (never part of the
//!   encoder total);
//! - the adversary heads minimize plain BCE on their detached inputs.
//!
//! All functions return 0-dim tensors so gradients can flow; use
//! [`LossReport`] for the extracted scalar values.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

/// Errors from loss computation.
#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error("{op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("label at index {index} is {value}; labels must be exactly 0 or 1")]
    LabelOutOfRange { index: usize, value: f64 },
    #[error("loss component `{component}` is non-finite ({value})")]
    NonFiniteComponent { component: &'static str, value: f64 },
    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

fn shape_err(op: &'static str, expected: impl Into<String>, t: &Tensor) -> LossError {
    LossError::ShapeMismatch {
        op,
        expected: expected.into(),
        got: format!("{:?}", t.dims()),
    }
}

/// Weights on the loss terms. `alpha` scales the total-correlation term,
/// `beta` the attribute-classification term, `gamma` the adversarial
/// decorrelation term, and `kl_beta` the KL term (1 except for the
/// beta-VAE-style variant).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_kl_beta")]
    pub kl_beta: f64,
}

fn default_alpha() -> f64 {
    50.0
}

fn default_beta() -> f64 {
    5.0
}

fn default_gamma() -> f64 {
    10.0
}

fn default_kl_beta() -> f64 {
    1.0
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            beta: default_beta(),
            gamma: default_gamma(),
            kl_beta: default_kl_beta(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("kl_beta", self.kl_beta),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(LossError::InvalidWeights(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Scalar values of each component of one representation-phase step.
///
/// Components a variant does not compute are `None` and stay absent from
/// serialized logs — never silently zero-but-present. The `adv_*` fields
/// hold the encoder-side (negated) values; `disc` is the discriminator's own
/// objective, logged for monitoring but excluded from `total`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub recon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cls_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cls_p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adv_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adv_p: Option<f64>,
    /// Predictiveness head on a designated sensitive block (ffvae-style
    /// variants only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensitive: Option<f64>,
    pub total: f64,
}

/// The differentiable pieces a variant computed for one step.
///
/// `adv_t` / `adv_p` must already be encoder-side (negated BCE) values.
#[derive(Debug, Clone, Default)]
pub struct ReprLossTerms {
    pub recon: Option<Tensor>,
    pub kl: Option<Tensor>,
    pub tc: Option<Tensor>,
    pub disc: Option<Tensor>,
    pub cls_t: Option<Tensor>,
    pub cls_p: Option<Tensor>,
    pub adv_t: Option<Tensor>,
    pub adv_p: Option<Tensor>,
    pub sensitive: Option<Tensor>,
}

/// `0.5 · mean over batch of the summed squared error per sample`
/// (Gaussian reconstruction log-likelihood with unit variance, constants
/// dropped). Inputs must have identical shapes with the batch first.
pub fn reconstruction_loss(x: &Tensor, x_hat: &Tensor) -> Result<Tensor, LossError> {
    if x.dims() != x_hat.dims() || x.dims().is_empty() {
        return Err(shape_err("reconstruction_loss", format!("{:?}", x.dims()), x_hat));
    }
    let batch = x.dims()[0];
    let per_sample = (x - x_hat)?.sqr()?.reshape((batch, ()))?.sum(1)?;
    Ok((per_sample.mean(0)? * 0.5)?)
}

/// Analytic KL from a diagonal Gaussian to the standard normal prior:
/// `mean over batch of 0.5 · Σ_j (exp(log_var_j) + mu_j² − 1 − log_var_j)`.
pub fn kl_divergence(post: &crate::model::GaussianPosterior) -> Result<Tensor, LossError> {
    if post.mu.dims() != post.log_var.dims() || post.mu.dims().len() != 2 {
        return Err(shape_err("kl_divergence", format!("{:?}", post.mu.dims()), &post.log_var));
    }
    let term = ((post.log_var.exp()? + post.mu.sqr()?)? - 1.0)?;
    let term = (term - &post.log_var)?;
    Ok((term.sum(1)?.mean(0)? * 0.5)?)
}

/// Encoder-side total-correlation penalty from discriminator logits on the
/// *real* (joint) latents: `mean(l_real − l_fake)`, the two-class softmax
/// identity for `log(D/(1−D))`.
pub fn tc_loss(logits_real: &Tensor) -> Result<Tensor, LossError> {
    if logits_real.dims().len() != 2 || logits_real.dims()[1] != 2 {
        return Err(shape_err("tc_loss", "[B, 2]", logits_real));
    }
    let l_real = logits_real.narrow(1, 0, 1)?;
    let l_fake = logits_real.narrow(1, 1, 1)?;
    Ok((l_real - l_fake)?.mean_all()?)
}

/// `softplus(x) = max(x, 0) + ln(1 + exp(−|x|))`, elementwise and stable.
fn softplus(x: &Tensor) -> Result<Tensor, LossError> {
    let tail = ((x.abs()?.neg()?.exp()? + 1.0)?).log()?;
    Ok((x.relu()? + tail)?)
}

fn two_class_ce(logits: &Tensor, target_class: usize, op: &'static str) -> Result<Tensor, LossError> {
    if logits.dims().len() != 2 || logits.dims()[1] != 2 {
        return Err(shape_err(op, "[B, 2]", logits));
    }
    let l_target = logits.narrow(1, target_class, 1)?;
    let l_other = logits.narrow(1, 1 - target_class, 1)?;
    softplus(&(l_other - l_target)?)?.mean_all().map_err(Into::into)
}

/// The discriminator's own objective: mean two-class cross-entropy with
/// joint-posterior samples labeled class 0 ("real") and subspace-shuffled
/// samples labeled class 1 ("fake"). Both sides weighted equally.
pub fn discriminator_loss(
    logits_real: &Tensor,
    logits_fake: &Tensor,
) -> Result<Tensor, LossError> {
    let real = two_class_ce(logits_real, 0, "discriminator_loss")?;
    let fake = two_class_ce(logits_fake, 1, "discriminator_loss")?;
    Ok(((real + fake)? * 0.5)?)
}

fn validate_labels(labels: &Tensor, op: &'static str) -> Result<(), LossError> {
    if labels.dims().len() != 1 {
        return Err(shape_err(op, "[B] labels", labels));
    }
    let values = labels.to_dtype(candle_core::DType::F64)?.to_vec1::<f64>()?;
    for (index, value) in values.into_iter().enumerate() {
        if value != 0.0 && value != 1.0 {
            return Err(LossError::LabelOutOfRange { index, value });
        }
    }
    Ok(())
}

/// Mean binary cross-entropy from logits, in the overflow-safe form
/// `max(x, 0) − x·y + ln(1 + exp(−|x|))`.
pub fn binary_cross_entropy(logits: &Tensor, labels: &Tensor) -> Result<Tensor, LossError> {
    if logits.dims() != labels.dims() || logits.dims().len() != 1 {
        return Err(shape_err("binary_cross_entropy", "[B] logits and labels", logits));
    }
    validate_labels(labels, "binary_cross_entropy")?;
    let tail = ((logits.abs()?.neg()?.exp()? + 1.0)?).log()?;
    let per = ((logits.relu()? - (logits * labels)?)? + tail)?;
    per.mean_all().map_err(Into::into)
}

/// Attribute pull-in term: `BCE(t(z_t), y_t) + BCE(p(z_p), y_p)`, each a
/// batch mean. Returns the two components; add them for the scalar term.
pub fn decorrelation_cls_loss(
    logit_t: &Tensor,
    y_t: &Tensor,
    logit_p: &Tensor,
    y_p: &Tensor,
) -> Result<(Tensor, Tensor), LossError> {
    Ok((
        binary_cross_entropy(logit_t, y_t)?,
        binary_cross_entropy(logit_p, y_p)?,
    ))
}

/// Both sides of the leakage min-max, from one pair of adversary logits:
/// `p̃` reads the protected label off `z_t`, `t̃` reads the target label off
/// `z_p`.
#[derive(Debug, Clone)]
pub struct AdvLoss {
    /// What the adversary heads minimize: `BCE(p̃) + BCE(t̃)`.
    pub adversary: Tensor,
    /// What the encoder minimizes: the negation, i.e. the encoder is
    /// rewarded for making the adversaries wrong. Per-head values included
    /// for reporting.
    pub encoder: Tensor,
    pub encoder_t: Tensor,
    pub encoder_p: Tensor,
}

/// Decorrelation adversary objective. Detachment policy is the caller's:
/// pass logits computed through detached head parameters when stepping the
/// encoder on `.encoder`, and logits on detached latents when stepping the
/// heads on `.adversary`.
pub fn decorrelation_adv_loss(
    logit_p_on_zt: &Tensor,
    y_p: &Tensor,
    logit_t_on_zp: &Tensor,
    y_t: &Tensor,
) -> Result<AdvLoss, LossError> {
    let bce_p = binary_cross_entropy(logit_p_on_zt, y_p)?;
    let bce_t = binary_cross_entropy(logit_t_on_zp, y_t)?;
    let adversary = (&bce_p + &bce_t)?;
    Ok(AdvLoss {
        encoder: adversary.neg()?,
        encoder_t: bce_t.neg()?,
        encoder_p: bce_p.neg()?,
        adversary,
    })
}

/// Downstream objectives: the task head's BCE, the adversary head's BCE,
/// and the transform objective `task − adversary` (the transform `f` is
/// stepped toward good task predictions *and* a defeated adversary).
pub fn downstream_loss(
    logit_task: &Tensor,
    y_t: &Tensor,
    logit_adv: &Tensor,
    y_p: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), LossError> {
    let task = binary_cross_entropy(logit_task, y_t)?;
    let adversary = binary_cross_entropy(logit_adv, y_p)?;
    let transform = (&task - &adversary)?;
    Ok((task, adversary, transform))
}

fn finite_scalar(component: &'static str, t: &Tensor) -> Result<f64, LossError> {
    let value = t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
    if !value.is_finite() {
        return Err(LossError::NonFiniteComponent { component, value });
    }
    Ok(value)
}

/// Combine computed terms into the encoder-side total and a scalar report:
/// `total = recon + kl_beta·kl + alpha·tc + beta·(cls_t + cls_p)
/// + gamma·(adv_t + adv_p) + beta·sensitive`. Absent terms contribute
/// nothing and stay absent from the report; the discriminator term is
/// report-only.
pub fn total_representation_loss(
    terms: &ReprLossTerms,
    weights: &LossWeights,
) -> Result<(Tensor, LossReport), LossError> {
    weights.validate()?;
    let recon = terms
        .recon
        .as_ref()
        .ok_or_else(|| LossError::InvalidWeights("reconstruction term is mandatory".into()))?;
    let mut total = recon.clone();
    let recon_v = finite_scalar("recon", recon)?;

    let add = |total: &mut Tensor,
                   term: &Option<Tensor>,
                   weight: f64,
                   component: &'static str|
     -> Result<Option<f64>, LossError> {
        match term {
            None => Ok(None),
            Some(t) => {
                let v = finite_scalar(component, t)?;
                *total = (&*total + (t * weight)?)?;
                Ok(Some(v))
            }
        }
    };

    let kl = add(&mut total, &terms.kl, weights.kl_beta, "kl")?;
    let tc = add(&mut total, &terms.tc, weights.alpha, "tc")?;
    let cls_t = add(&mut total, &terms.cls_t, weights.beta, "cls_t")?;
    let cls_p = add(&mut total, &terms.cls_p, weights.beta, "cls_p")?;
    let adv_t = add(&mut total, &terms.adv_t, weights.gamma, "adv_t")?;
    let adv_p = add(&mut total, &terms.adv_p, weights.gamma, "adv_p")?;
    let sensitive = add(&mut total, &terms.sensitive, weights.beta, "sensitive")?;
    let disc = match &terms.disc {
        None => None,
        Some(t) => Some(finite_scalar("disc", t)?),
    };

    let report = LossReport {
        recon: recon_v,
        kl,
        tc,
        disc,
        cls_t,
        cls_p,
        adv_t,
        adv_p,
        sensitive,
        total: finite_scalar("total", &total)?,
    };
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GaussianPosterior;
    use candle_core::{DType, Tensor, Var};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn dev() -> candle_core::Device {
        crate::device()
    }

    fn scalar(t: &Tensor) -> f64 {
        t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
    }

    fn t1(v: &[f32]) -> Tensor {
        Tensor::from_vec(v.to_vec(), v.len(), &dev()).unwrap()
    }

    // ---- reconstruction -------------------------------------------------

    #[test]
    fn recon_zero_on_identity() {
        let x = Tensor::rand(-1.0f32, 1.0, (2, 3, 8, 8), &dev()).unwrap();
        assert_eq!(scalar(&reconstruction_loss(&x, &x).unwrap()), 0.0);
    }

    #[test]
    fn recon_closed_form_on_unit_residual() {
        // All-ones residual over 3*64*64 pixels: 0.5 * 12288 = 6144.
        let x = Tensor::zeros((2, 3, 64, 64), DType::F32, &dev()).unwrap();
        let x_hat = Tensor::ones((2, 3, 64, 64), DType::F32, &dev()).unwrap();
        let loss = scalar(&reconstruction_loss(&x, &x_hat).unwrap());
        assert!((loss - 6144.0).abs() < 1e-3, "got {loss}");
    }

    #[test]
    fn recon_is_quadratic_in_residual() {
        let x = Tensor::zeros((3, 3, 8, 8), DType::F32, &dev()).unwrap();
        let r = Tensor::rand(-1.0f32, 1.0, (3, 3, 8, 8), &dev()).unwrap();
        let one = scalar(&reconstruction_loss(&x, &r).unwrap());
        let two = scalar(&reconstruction_loss(&x, &(&r * 2.0).unwrap()).unwrap());
        assert!((two - 4.0 * one).abs() < 1e-2 * one.max(1.0));
    }

    #[test]
    fn recon_rejects_shape_mismatch() {
        let x = Tensor::zeros((2, 3, 8, 8), DType::F32, &dev()).unwrap();
        let y = Tensor::zeros((2, 3, 4, 4), DType::F32, &dev()).unwrap();
        assert!(matches!(
            reconstruction_loss(&x, &y),
            Err(LossError::ShapeMismatch { .. })
        ));
    }

    // ---- KL --------------------------------------------------------------

    fn posterior(mu: Vec<f32>, log_var: Vec<f32>, dims: (usize, usize)) -> GaussianPosterior {
        GaussianPosterior {
            mu: Tensor::from_vec(mu, dims, &dev()).unwrap(),
            log_var: Tensor::from_vec(log_var, dims, &dev()).unwrap(),
        }
    }

    #[test]
    fn kl_zero_at_prior() {
        let post = posterior(vec![0.0; 60], vec![0.0; 60], (1, 60));
        assert_eq!(scalar(&kl_divergence(&post).unwrap()), 0.0);
    }

    #[test]
    fn kl_single_dim_closed_form() {
        // mu=1, log_var=0: 0.5 * (1 + 1 - 1 - 0) = 0.5.
        let post = posterior(vec![1.0], vec![0.0], (1, 1));
        assert!((scalar(&kl_divergence(&post).unwrap()) - 0.5).abs() < 1e-7);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        // KL = E_q[log q(z) - log p(z)] estimated with 10^6 reparameterized
        // samples in f64, one random 8-dim posterior.
        let mut rng = crate::train::stream(5, "test/kl-mc");
        let dim = 8;
        let mu: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let lv: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();

        let post = posterior(
            mu.iter().map(|&v| v as f32).collect(),
            lv.iter().map(|&v| v as f32).collect(),
            (1, dim),
        );
        let analytic = scalar(&kl_divergence(&post).unwrap());

        let normal = StandardNormal;
        let n = 1_000_000usize;
        let mut acc = 0.0f64;
        for _ in 0..n {
            for j in 0..dim {
                let eps: f64 = normal.sample(&mut rng);
                let sigma = (0.5 * lv[j]).exp();
                let z = mu[j] + sigma * eps;
                // log q - log p, with the 0.5*ln(2π) terms cancelling.
                acc += -0.5 * lv[j] - 0.5 * eps * eps + 0.5 * z * z;
            }
        }
        let mc = acc / n as f64;
        assert!(
            (mc - analytic).abs() <= 0.02 * analytic.abs().max(0.05),
            "analytic {analytic}, monte-carlo {mc}"
        );
    }

    // ---- TC and discriminator --------------------------------------------

    #[test]
    fn tc_zero_logits() {
        let logits = Tensor::zeros((4, 2), DType::F32, &dev()).unwrap();
        assert_eq!(scalar(&tc_loss(&logits).unwrap()), 0.0);
    }

    #[test]
    fn tc_constant_margin() {
        let logits = Tensor::from_vec(vec![2.0f32, 0.0, 2.0, 0.0], (2, 2), &dev()).unwrap();
        assert!((scalar(&tc_loss(&logits).unwrap()) - 2.0).abs() < 1e-7);
    }

    #[test]
    fn tc_matches_scalar_loop() {
        let vals = vec![0.3f32, -0.7, 1.2, 0.4, -2.0, 0.9, 0.0, -0.1];
        let logits = Tensor::from_vec(vals.clone(), (4, 2), &dev()).unwrap();
        let want: f64 = vals
            .chunks(2)
            .map(|p| (p[0] - p[1]) as f64)
            .sum::<f64>()
            / 4.0;
        assert!((scalar(&tc_loss(&logits).unwrap()) - want).abs() < 1e-6);
    }

    #[test]
    fn disc_loss_at_chance_is_ln2() {
        let z = Tensor::zeros((8, 2), DType::F32, &dev()).unwrap();
        let loss = scalar(&discriminator_loss(&z, &z).unwrap());
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-6, "got {loss}");
    }

    #[test]
    fn disc_loss_vanishes_when_confident_and_correct() {
        let real = Tensor::from_vec(vec![30.0f32, -30.0], (1, 2), &dev()).unwrap();
        let fake = Tensor::from_vec(vec![-30.0f32, 30.0], (1, 2), &dev()).unwrap();
        assert!(scalar(&discriminator_loss(&real, &fake).unwrap()) < 1e-9);
    }

    #[test]
    fn disc_loss_unit_margin_arithmetic() {
        // (1,0) for real and (0,1) for fake: each side ln(1 + e^{-1}).
        let real = Tensor::from_vec(vec![1.0f32, 0.0], (1, 2), &dev()).unwrap();
        let fake = Tensor::from_vec(vec![0.0f32, 1.0], (1, 2), &dev()).unwrap();
        let want = (1.0 + (-1.0f64).exp()).ln();
        let got = scalar(&discriminator_loss(&real, &fake).unwrap());
        assert!((got - want).abs() < 1e-6, "want {want}, got {got}");
    }

    // ---- BCE and the attribute terms ---------------------------------------

    #[test]
    fn bce_zero_logit_is_ln2() {
        let got = scalar(&binary_cross_entropy(&t1(&[0.0]), &t1(&[1.0])).unwrap());
        assert!((got - std::f64::consts::LN_2).abs() < 1e-7);
    }

    #[test]
    fn bce_rejects_non_binary_labels() {
        assert!(matches!(
            binary_cross_entropy(&t1(&[0.0]), &t1(&[0.5])),
            Err(LossError::LabelOutOfRange { index: 0, .. })
        ));
    }

    #[test]
    fn bce_is_stable_at_extreme_logits() {
        let got = scalar(&binary_cross_entropy(&t1(&[500.0]), &t1(&[1.0])).unwrap());
        assert!(got.is_finite() && got < 1e-6);
        let bad = scalar(&binary_cross_entropy(&t1(&[-500.0]), &t1(&[1.0])).unwrap());
        assert!(bad.is_finite() && (bad - 500.0).abs() < 1e-3);
    }

    #[test]
    fn bce_symmetric_under_logit_label_flip() {
        let mut rng = crate::train::stream(6, "test/bce-flip");
        for _ in 0..50 {
            let x: f32 = rng.gen::<f32>() * 20.0 - 10.0;
            let y: f32 = if rng.gen::<bool>() { 1.0 } else { 0.0 };
            let a = scalar(&binary_cross_entropy(&t1(&[x]), &t1(&[y])).unwrap());
            let b = scalar(&binary_cross_entropy(&t1(&[-x]), &t1(&[1.0 - y])).unwrap());
            assert!((a - b).abs() < 1e-6, "x={x} y={y}: {a} vs {b}");
        }
    }

    #[test]
    fn cls_loss_zero_logits() {
        let (t, p) = decorrelation_cls_loss(
            &t1(&[0.0, 0.0]),
            &t1(&[1.0, 0.0]),
            &t1(&[0.0, 0.0]),
            &t1(&[0.0, 1.0]),
        )
        .unwrap();
        let total = scalar(&t) + scalar(&p);
        assert!((total - 2.0 * std::f64::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn cls_loss_unit_margin_arithmetic() {
        // logit 1 with label 1 and logit -1 with label 0, on both heads:
        // each head mean ln(1 + e^{-1}), total 2·ln(1 + e^{-1}).
        let logits = t1(&[1.0, -1.0]);
        let labels = t1(&[1.0, 0.0]);
        let (t, p) = decorrelation_cls_loss(&logits, &labels, &logits, &labels).unwrap();
        let want = 2.0 * (1.0 + (-1.0f64).exp()).ln();
        let got = scalar(&t) + scalar(&p);
        assert!((got - want).abs() < 1e-6, "want {want}, got {got}");
    }

    #[test]
    fn adv_loss_signs_and_chance_point() {
        let zero = t1(&[0.0, 0.0]);
        let y = t1(&[1.0, 0.0]);
        let adv = decorrelation_adv_loss(&zero, &y, &zero, &y).unwrap();
        let a = scalar(&adv.adversary);
        let e = scalar(&adv.encoder);
        assert!((a - 2.0 * std::f64::consts::LN_2).abs() < 1e-6);
        assert!((a + e).abs() < 1e-9, "encoder side must be the negation");
    }

    #[test]
    fn adv_loss_perfect_adversary_is_worst_for_encoder() {
        let confident = t1(&[40.0, -40.0]);
        let y = t1(&[1.0, 0.0]);
        let adv = decorrelation_adv_loss(&confident, &y, &confident, &y).unwrap();
        assert!(scalar(&adv.adversary) < 1e-9);
        // Encoder objective approaches its maximum (0 from below).
        assert!(scalar(&adv.encoder) > -1e-9);
    }

    #[test]
    fn adv_loss_scalar_oracle() {
        let bce = |x: f64, y: f64| x.max(0.0) - x * y + (1.0 + (-x.abs()).exp()).ln();
        let lp = t1(&[0.7, -1.3]);
        let yp = t1(&[1.0, 1.0]);
        let lt = t1(&[2.0, 0.1]);
        let yt = t1(&[0.0, 1.0]);
        let want_p = (bce(0.7, 1.0) + bce(-1.3, 1.0)) / 2.0;
        let want_t = (bce(2.0, 0.0) + bce(0.1, 1.0)) / 2.0;
        let adv = decorrelation_adv_loss(&lp, &yp, &lt, &yt).unwrap();
        assert!((scalar(&adv.adversary) - (want_p + want_t)).abs() < 1e-6);
        assert!((scalar(&adv.encoder_p) + want_p).abs() < 1e-6);
        assert!((scalar(&adv.encoder_t) + want_t).abs() < 1e-6);
    }

    #[test]
    fn downstream_loss_zero_logits_and_oracle() {
        let zero = t1(&[0.0]);
        let y = t1(&[1.0]);
        let (task, adv, transform) = downstream_loss(&zero, &y, &zero, &y).unwrap();
        assert!((scalar(&task) - std::f64::consts::LN_2).abs() < 1e-7);
        assert!((scalar(&adv) - std::f64::consts::LN_2).abs() < 1e-7);
        assert!(scalar(&transform).abs() < 1e-9);

        let bce = |x: f64, y: f64| x.max(0.0) - x * y + (1.0 + (-x.abs()).exp()).ln();
        let (task, adv, transform) =
            downstream_loss(&t1(&[1.5]), &t1(&[1.0]), &t1(&[-0.4]), &t1(&[0.0])).unwrap();
        let want_task = bce(1.5, 1.0);
        let want_adv = bce(-0.4, 0.0);
        assert!((scalar(&task) - want_task).abs() < 1e-6);
        assert!((scalar(&adv) - want_adv).abs() < 1e-6);
        assert!((scalar(&transform) - (want_task - want_adv)).abs() < 1e-6);
    }

    // ---- total -----------------------------------------------------------

    fn const_term(v: f64) -> Option<Tensor> {
        Some(Tensor::full(v, (), &dev()).unwrap())
    }

    #[test]
    fn total_all_zero_components() {
        let terms = ReprLossTerms {
            recon: const_term(0.0),
            kl: const_term(0.0),
            tc: const_term(0.0),
            cls_t: const_term(0.0),
            cls_p: const_term(0.0),
            adv_t: const_term(0.0),
            adv_p: const_term(0.0),
            sensitive: const_term(0.0),
            disc: const_term(0.0),
        };
        let (total, report) = total_representation_loss(&terms, &LossWeights::default()).unwrap();
        assert_eq!(scalar(&total), 0.0);
        assert_eq!(report.total, 0.0);
    }

    #[test]
    fn total_recon_plus_kl() {
        let terms = ReprLossTerms {
            recon: const_term(1.0),
            kl: const_term(1.0),
            ..Default::default()
        };
        let (total, report) = total_representation_loss(&terms, &LossWeights::default()).unwrap();
        assert_eq!(scalar(&total), 2.0);
        assert_eq!(report.tc, None);
        assert_eq!(report.cls_t, None);
        assert_eq!(report.adv_p, None);
        assert_eq!(report.disc, None);
    }

    #[test]
    fn total_hand_arithmetic() {
        // recon 3, kl 2, tc 0.1, cls 0.2 (split 0.15 + 0.05), adv 0.05
        // (split 0.03 + 0.02) at the default weights:
        // 3 + 2 + 50·0.1 + 5·0.2 + 10·0.05 = 11.5.
        let terms = ReprLossTerms {
            recon: const_term(3.0),
            kl: const_term(2.0),
            tc: const_term(0.1),
            cls_t: const_term(0.15),
            cls_p: const_term(0.05),
            adv_t: const_term(0.03),
            adv_p: const_term(0.02),
            disc: const_term(0.7),
            ..Default::default()
        };
        let (total, report) = total_representation_loss(&terms, &LossWeights::default()).unwrap();
        assert!((scalar(&total) - 11.5).abs() < 1e-9);
        assert!((report.total - 11.5).abs() < 1e-9);
        assert_eq!(report.disc, Some(0.7));
    }

    #[test]
    fn total_is_linear_in_each_component() {
        let weights = LossWeights::default();
        let base = ReprLossTerms {
            recon: const_term(1.0),
            kl: const_term(1.0),
            tc: const_term(1.0),
            cls_t: const_term(1.0),
            cls_p: const_term(1.0),
            adv_t: const_term(1.0),
            adv_p: const_term(1.0),
            sensitive: const_term(1.0),
            disc: None,
        };
        let (t0, _) = total_representation_loss(&base, &weights).unwrap();
        let t0 = scalar(&t0);
        let perturbed = |f: &dyn Fn(&mut ReprLossTerms)| {
            let mut terms = base.clone();
            f(&mut terms);
            scalar(&total_representation_loss(&terms, &weights).unwrap().0)
        };
        let cases: Vec<(Box<dyn Fn(&mut ReprLossTerms)>, f64)> = vec![
            (Box::new(|t| t.recon = const_term(2.0)), 1.0),
            (Box::new(|t| t.kl = const_term(2.0)), weights.kl_beta),
            (Box::new(|t| t.tc = const_term(2.0)), weights.alpha),
            (Box::new(|t| t.cls_t = const_term(2.0)), weights.beta),
            (Box::new(|t| t.cls_p = const_term(2.0)), weights.beta),
            (Box::new(|t| t.adv_t = const_term(2.0)), weights.gamma),
            (Box::new(|t| t.adv_p = const_term(2.0)), weights.gamma),
            (Box::new(|t| t.sensitive = const_term(2.0)), weights.beta),
        ];
        for (f, coeff) in cases {
            let t1v = perturbed(&*f);
            assert!(
                (t1v - t0 - coeff).abs() < 1e-9,
                "unit perturbation must add the coefficient {coeff}, got {}",
                t1v - t0
            );
        }
    }

    #[test]
    fn total_rejects_non_finite() {
        let terms = ReprLossTerms {
            recon: const_term(1.0),
            kl: const_term(f64::NAN),
            ..Default::default()
        };
        assert!(matches!(
            total_representation_loss(&terms, &LossWeights::default()),
            Err(LossError::NonFiniteComponent { component: "kl", .. })
        ));
    }

    #[test]
    fn weights_validation() {
        let bad = LossWeights {
            alpha: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(LossWeights::default().validate().is_ok());
    }

    #[test]
    fn report_serializes_without_absent_terms() {
        let report = LossReport {
            recon: 1.0,
            kl: Some(2.0),
            tc: None,
            disc: None,
            cls_t: None,
            cls_p: None,
            adv_t: None,
            adv_p: None,
            sensitive: None,
            total: 3.0,
        };
        let json = serde_json::to_string(&report).unwrap();
        assert!(!json.contains("tc"), "absent terms must not serialize: {json}");
        assert!(!json.contains("adv_t"));
        let back: LossReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    // ---- gradient checks ---------------------------------------------------

    /// Central finite differences vs analytic gradients for a scalar loss
    /// built from a 10-parameter vector, all in f64.
    fn grad_check(name: &str, f: &dyn Fn(&Tensor) -> Tensor, theta0: &[f64]) {
        assert_eq!(theta0.len(), 10, "toy model uses exactly 10 parameters");
        let var = Var::from_vec(theta0.to_vec(), 10, &dev()).unwrap();
        let loss = f(var.as_tensor());
        let grads = loss.backward().unwrap();
        let analytic = grads
            .get(var.as_tensor())
            .expect("loss must depend on the parameters")
            .to_vec1::<f64>()
            .unwrap();

        let h = 1e-4;
        for i in 0..10 {
            let mut plus = theta0.to_vec();
            plus[i] += h;
            let mut minus = theta0.to_vec();
            minus[i] -= h;
            let fp = f(&Tensor::from_vec(plus, 10, &dev()).unwrap())
                .to_scalar::<f64>()
                .unwrap();
            let fm = f(&Tensor::from_vec(minus, 10, &dev()).unwrap())
                .to_scalar::<f64>()
                .unwrap();
            let fd = (fp - fm) / (2.0 * h);
            let denom = analytic[i].abs().max(fd.abs()).max(1e-6);
            let rel = (analytic[i] - fd).abs() / denom;
            assert!(
                rel < 1e-3,
                "{name}: parameter {i}: analytic {} vs fd {fd} (rel {rel})",
                analytic[i]
            );
        }
    }

    fn theta() -> Vec<f64> {
        vec![0.31, -0.84, 0.52, 0.07, -0.66, 1.23, -0.11, 0.48, -1.02, 0.95]
    }

    #[test]
    fn grad_check_reconstruction() {
        let x = Tensor::from_vec(
            (0..10).map(|i| (i as f64) * 0.1 - 0.4).collect::<Vec<_>>(),
            (2, 5),
            &dev(),
        )
        .unwrap();
        grad_check(
            "reconstruction",
            &|p| {
                let x_hat = p.reshape((2, 5)).unwrap();
                reconstruction_loss(&x, &x_hat).unwrap()
            },
            &theta(),
        );
    }

    #[test]
    fn grad_check_kl() {
        grad_check(
            "kl",
            &|p| {
                let post = GaussianPosterior {
                    mu: p.narrow(0, 0, 5).unwrap().reshape((1, 5)).unwrap(),
                    log_var: p.narrow(0, 5, 5).unwrap().reshape((1, 5)).unwrap(),
                };
                kl_divergence(&post).unwrap()
            },
            &theta(),
        );
    }

    #[test]
    fn grad_check_tc() {
        grad_check(
            "tc",
            &|p| tc_loss(&p.reshape((5, 2)).unwrap()).unwrap(),
            &theta(),
        );
    }

    #[test]
    fn grad_check_discriminator() {
        grad_check(
            "discriminator",
            &|p| {
                let real = p.narrow(0, 0, 6).unwrap().reshape((3, 2)).unwrap();
                let fake = p.narrow(0, 6, 4).unwrap().reshape((2, 2)).unwrap();
                discriminator_loss(&real, &fake).unwrap()
            },
            &theta(),
        );
    }

    #[test]
    fn grad_check_bce_and_cls() {
        let y = Tensor::from_vec(vec![1.0f64, 0.0, 1.0, 1.0, 0.0], 5, &dev()).unwrap();
        grad_check(
            "cls",
            &|p| {
                let (t, pp) = decorrelation_cls_loss(
                    &p.narrow(0, 0, 5).unwrap(),
                    &y,
                    &p.narrow(0, 5, 5).unwrap(),
                    &y,
                )
                .unwrap();
                (&t + &pp).unwrap()
            },
            &theta(),
        );
    }

    #[test]
    fn grad_check_adv_encoder_side() {
        let y = Tensor::from_vec(vec![1.0f64, 0.0, 1.0, 0.0, 0.0], 5, &dev()).unwrap();
        grad_check(
            "adv",
            &|p| {
                decorrelation_adv_loss(
                    &p.narrow(0, 0, 5).unwrap(),
                    &y,
                    &p.narrow(0, 5, 5).unwrap(),
                    &y,
                )
                .unwrap()
                .encoder
            },
            &theta(),
        );
    }

    #[test]
    fn grad_check_downstream_transform_side() {
        let y = Tensor::from_vec(vec![1.0f64, 0.0, 1.0, 0.0, 1.0], 5, &dev()).unwrap();
        grad_check(
            "downstream",
            &|p| {
                let (_, _, transform) = downstream_loss(
                    &p.narrow(0, 0, 5).unwrap(),
                    &y,
                    &p.narrow(0, 5, 5).unwrap(),
                    &y,
                )
                .unwrap();
                transform
            },
            &theta(),
        );
    }

    #[test]
    fn grad_check_total() {
        let y = Tensor::from_vec(vec![1.0f64, 0.0], 2, &dev()).unwrap();
        grad_check(
            "total",
            &|p| {
                let terms = ReprLossTerms {
                    recon: Some(
                        reconstruction_loss(
                            &Tensor::zeros((1, 2), DType::F64, &dev()).unwrap(),
                            &p.narrow(0, 0, 2).unwrap().reshape((1, 2)).unwrap(),
                        )
                        .unwrap(),
                    ),
                    kl: Some(
                        kl_divergence(&GaussianPosterior {
                            mu: p.narrow(0, 2, 2).unwrap().reshape((1, 2)).unwrap(),
                            log_var: p.narrow(0, 4, 2).unwrap().reshape((1, 2)).unwrap(),
                        })
                        .unwrap(),
                    ),
                    tc: Some(tc_loss(&p.narrow(0, 6, 2).unwrap().reshape((1, 2)).unwrap()).unwrap()),
                    cls_t: Some(binary_cross_entropy(&p.narrow(0, 8, 2).unwrap(), &y).unwrap()),
                    ..Default::default()
                };
                total_representation_loss(&terms, &LossWeights::default())
                    .unwrap()
                    .0
            },
            &theta(),
        );
    }
}
