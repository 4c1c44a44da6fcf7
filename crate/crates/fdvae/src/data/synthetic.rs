//! Synthetic biased image datasets.
//!
//! Each sample is a 64×64 RGB scene: a bright shape on a noisy, tinted
//! background. The target label controls the shape class (square vs circle),
//! the protected label controls the hue (warm vs cool) of both the shape and
//! the background tint, and position/size are nuisance factors. The train
//! split's label agreement is an exact count (`round(rho · n)`), eval splits
//! are exactly balanced, and every pixel is reproducible from the spec alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, ImageDataset, Record, RecordSource, SplitSet};
use crate::train::stream;

const SIDE: usize = 64;
const PLANE: usize = SIDE * SIDE;

/// Shape classes; the target attribute selects one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Square,
    Circle,
}

/// Everything needed to re-render one synthetic image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    pub shape: Shape,
    /// Warm (orange) palette when true, cool (blue) otherwise.
    pub warm: bool,
    pub cx: f32,
    pub cy: f32,
    /// Half-extent of the shape in pixels.
    pub half: f32,
    /// Uniform pixel-noise amplitude.
    pub noise: f32,
    pub noise_seed: u64,
}

impl RenderSpec {
    /// A fixed, jitter-free spec for the given labels; test fixtures only.
    pub fn placeholder(target: u8, protected: u8) -> Self {
        Self {
            shape: if target == 1 { Shape::Square } else { Shape::Circle },
            warm: protected == 1,
            cx: 32.0,
            cy: 32.0,
            half: 13.0,
            noise: 0.1,
            noise_seed: 0,
        }
    }
}

/// Parameters of a generated dataset. Validation/test sizes must be
/// divisible by 4 so the four label cells can be exactly balanced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    /// Probability that a train sample's target and protected labels agree.
    pub rho: f64,
    pub seed: u64,
    /// Background/pixel noise amplitude in `[0, 1)`.
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_noise() -> f64 {
    0.15
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if !self.rho.is_finite() || !(0.0..=1.0).contains(&self.rho) {
            return Err(DataError::InvalidSpec(format!(
                "rho must lie in [0, 1], got {}",
                self.rho
            )));
        }
        if !self.noise.is_finite() || !(0.0..1.0).contains(&self.noise) {
            return Err(DataError::InvalidSpec(format!(
                "noise must lie in [0, 1), got {}",
                self.noise
            )));
        }
        for (name, n) in [("validation", self.validation), ("test", self.test)] {
            if n % 4 != 0 {
                return Err(DataError::InvalidSpec(format!(
                    "{name} count {n} is not divisible by 4; balanced cells are impossible"
                )));
            }
        }
        Ok(())
    }
}

/// Deterministically generate the three splits described by `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SplitSet, DataError> {
    spec.validate()?;
    Ok(SplitSet {
        train: generate_split(spec, "train", spec.train, Some(spec.rho)),
        validation: generate_split(spec, "validation", spec.validation, None),
        test: generate_split(spec, "test", spec.test, None),
    })
}

/// `rho = None` means exactly balanced cells (eval splits).
fn generate_split(spec: &SyntheticSpec, split: &str, n: usize, rho: Option<f64>) -> ImageDataset {
    let mut labels = Vec::with_capacity(n);
    match rho {
        Some(rho) => {
            // Exact-count agreement: round(rho·n) agreeing pairs, halved
            // across (1,1)/(0,0); the rest disagree, halved across
            // (1,0)/(0,1).
            let agree = ((rho * n as f64).round() as usize).min(n);
            let disagree = n - agree;
            push_labels(&mut labels, (1, 1), agree.div_ceil(2));
            push_labels(&mut labels, (0, 0), agree / 2);
            push_labels(&mut labels, (1, 0), disagree.div_ceil(2));
            push_labels(&mut labels, (0, 1), disagree / 2);
        }
        None => {
            let q = n / 4;
            for cell in [(1, 1), (1, 0), (0, 1), (0, 0)] {
                push_labels(&mut labels, cell, q);
            }
        }
    }
    // Interleave the cells so any prefix of the split is label-mixed.
    let perm = crate::train::permutation(n, &mut stream(spec.seed, &format!("synthetic/order/{split}")));
    let records = perm
        .into_iter()
        .enumerate()
        .map(|(i, j)| {
            let (target, protected) = labels[j];
            let mut rng = stream(spec.seed, &format!("synthetic/render/{split}/{i}"));
            Record {
                id: format!("syn-{split}-{i:05}"),
                target,
                protected,
                source: RecordSource::Synthetic(RenderSpec {
                    shape: if target == 1 { Shape::Square } else { Shape::Circle },
                    warm: protected == 1,
                    cx: 32.0 + rng.gen_range(-8.0..8.0),
                    cy: 32.0 + rng.gen_range(-8.0..8.0),
                    half: rng.gen_range(10.0..16.0),
                    noise: spec.noise as f32,
                    noise_seed: rng.gen(),
                }),
            }
        })
        .collect();
    ImageDataset::new(records)
}

fn push_labels(labels: &mut Vec<(u8, u8)>, cell: (u8, u8), count: usize) {
    labels.extend(std::iter::repeat(cell).take(count));
}

/// Render a spec to CHW pixels in `[-1, 1]`, length `3·64·64`.
pub fn render_pixels(spec: &RenderSpec) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.noise_seed);
    // (background tint, shape color) per channel.
    let (tint, fill) = if spec.warm {
        ([0.12f32, 0.0, -0.12], [0.85f32, 0.05, -0.75])
    } else {
        ([-0.12f32, 0.0, 0.12], [-0.75f32, 0.05, 0.85])
    };
    let mut pixels = vec![0.0f32; 3 * PLANE];
    for y in 0..SIDE {
        for x in 0..SIDE {
            let dx = x as f32 - spec.cx;
            let dy = y as f32 - spec.cy;
            let inside = match spec.shape {
                Shape::Square => dx.abs() <= spec.half && dy.abs() <= spec.half,
                Shape::Circle => dx * dx + dy * dy <= spec.half * spec.half,
            };
            for c in 0..3 {
                let base = if inside { fill[c] } else { tint[c] };
                let noise = spec.noise * (rng.gen::<f32>() * 2.0 - 1.0);
                pixels[c * PLANE + y * SIDE + x] = (base + noise).clamp(-1.0, 1.0);
            }
        }
    }
    pixels
}

/// Fraction of records whose target and protected labels agree.
pub fn label_agreement(dataset: &ImageDataset) -> f64 {
    if dataset.is_empty() {
        return 0.0;
    }
    let agree = dataset
        .records()
        .iter()
        .filter(|r| r.target == r.protected)
        .count();
    agree as f64 / dataset.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(rho: f64) -> SyntheticSpec {
        SyntheticSpec {
            train: 2000,
            validation: 400,
            test: 400,
            rho,
            seed: 13,
            noise: 0.15,
        }
    }

    fn pearson(a: &[u8], b: &[u8]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
        let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for (&x, &y) in a.iter().zip(b) {
            cov += (x as f64 - ma) * (y as f64 - mb);
            va += (x as f64 - ma).powi(2);
            vb += (y as f64 - mb).powi(2);
        }
        cov / (va.sqrt() * vb.sqrt()).max(1e-12)
    }

    #[test]
    fn train_agreement_is_exact() {
        for rho in [0.5, 0.8, 0.95] {
            let split = generate_synthetic(&spec(rho)).unwrap();
            let got = label_agreement(&split.train);
            let want = (rho * 2000.0).round() / 2000.0;
            assert!(
                (got - want).abs() < 1e-12,
                "rho {rho}: agreement {got}, want {want}"
            );
            assert!((got - rho).abs() <= 0.02, "within the ±2% contract");
        }
    }

    #[test]
    fn balanced_rho_means_independent_labels() {
        let split = generate_synthetic(&spec(0.5)).unwrap();
        let t = split.train.target_labels();
        let p = split.train.protected_labels();
        assert!(pearson(&t, &p).abs() < 1e-9, "exact-count construction");
    }

    #[test]
    fn eval_splits_are_exactly_balanced() {
        let split = generate_synthetic(&spec(0.8)).unwrap();
        for ds in [&split.validation, &split.test] {
            for t in [0u8, 1] {
                for p in [0u8, 1] {
                    assert_eq!(ds.cell_count(t, p), 100);
                }
            }
            let corr = pearson(&ds.target_labels(), &ds.protected_labels());
            assert!(corr.abs() < 0.05);
        }
    }

    #[test]
    fn generation_is_bit_identical() {
        let a = generate_synthetic(&spec(0.8)).unwrap();
        let b = generate_synthetic(&spec(0.8)).unwrap();
        assert_eq!(a.train.records(), b.train.records());
        assert_eq!(a.test.records(), b.test.records());
        for idx in [0usize, 57, 399] {
            let pa = a.validation.pixels(idx).unwrap();
            let pb = b.validation.pixels(idx).unwrap();
            assert!(pa.iter().zip(&pb).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate_synthetic(&spec(0.8)).unwrap();
        let b = generate_synthetic(&SyntheticSpec { seed: 14, ..spec(0.8) }).unwrap();
        assert_ne!(a.train.records(), b.train.records());
    }

    #[test]
    fn pixels_are_bounded_and_sized() {
        let split = generate_synthetic(&spec(0.8)).unwrap();
        let px = split.train.pixels(0).unwrap();
        assert_eq!(px.len(), 3 * 64 * 64);
        assert!(px.iter().all(|v| (-1.0..=1.0).contains(v) && v.is_finite()));
    }

    #[test]
    fn palette_tracks_protected_label() {
        // Mean red-minus-blue is strongly positive for warm images and
        // strongly negative for cool ones.
        let split = generate_synthetic(&spec(0.5)).unwrap();
        let mut warm_score = 0.0;
        let mut cool_score = 0.0;
        let mut warm_n = 0;
        let mut cool_n = 0;
        for i in 0..200 {
            let r = split.train.record(i);
            let px = split.train.pixels(i).unwrap();
            let red: f32 = px[..PLANE].iter().sum();
            let blue: f32 = px[2 * PLANE..].iter().sum();
            let score = (red - blue) / PLANE as f32;
            if r.protected == 1 {
                warm_score += score;
                warm_n += 1;
            } else {
                cool_score += score;
                cool_n += 1;
            }
        }
        assert!(warm_score / (warm_n as f32) > 0.1);
        assert!(cool_score / (cool_n as f32) < -0.1);
    }

    #[test]
    fn shape_tracks_target_label() {
        // A circle inscribed in the square bounding box covers π/4 of it;
        // count bright shape pixels to tell them apart.
        let warm_fill_red = 0.85f32;
        for (target, expect_square) in [(1u8, true), (0u8, false)] {
            let px = render_pixels(&RenderSpec {
                shape: if target == 1 { Shape::Square } else { Shape::Circle },
                warm: true,
                cx: 32.0,
                cy: 32.0,
                half: 12.0,
                noise: 0.0,
                noise_seed: 1,
            });
            let bright = px[..PLANE]
                .iter()
                .filter(|&&v| (v - warm_fill_red).abs() < 1e-4)
                .count();
            let square_area = 25 * 25; // (2·12 + 1)² lattice points
            if expect_square {
                assert_eq!(bright, square_area);
            } else {
                assert!(bright < square_area * 85 / 100, "circle covers ~π/4");
                assert!(bright > square_area / 2);
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(matches!(
            generate_synthetic(&SyntheticSpec { rho: 1.2, ..spec(0.8) }),
            Err(DataError::InvalidSpec(_))
        ));
        assert!(matches!(
            generate_synthetic(&SyntheticSpec { validation: 401, ..spec(0.8) }),
            Err(DataError::InvalidSpec(_))
        ));
        assert!(matches!(
            generate_synthetic(&SyntheticSpec { noise: 1.0, ..spec(0.8) }),
            Err(DataError::InvalidSpec(_))
        ));
    }
}
