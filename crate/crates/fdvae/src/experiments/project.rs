//! Per-subspace embedding export with a shared 2-D principal-component
//! projection.
//!
//! Every sample contributes three 20-dim rows — one per latent subspace
//! (`TAL` = target, `PAL` = protected, `MAL` = residual) — so structure can
//! be compared across subspaces in one coordinate system.  The projection is
//! fit on all subspace rows jointly, not per subspace.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use super::ExperimentError;
use crate::data::ImageDataset;
use crate::model::{ModelBundle, SUBSPACE_DIM};
use crate::train::{embed_dataset, LatentTable};

/// Subspace tags in latent order; row `3i + j` of the export belongs to
/// sample `i`, subspace `SUBSPACE_TAGS[j]`.
pub const SUBSPACE_TAGS: [&str; 3] = ["TAL", "PAL", "MAL"];

/// File names created inside the embeddings directory.
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const PROJECTION_FILE: &str = "projection-2d.csv";

/// A fitted 2-D principal-component projection.
#[derive(Debug, Clone)]
pub struct Projection {
    /// Per-point 2-D coordinates, in input row order.
    pub coords: Vec<[f64; 2]>,
    /// The two orthonormal basis vectors (largest eigenvalue first).
    pub basis: [Vec<f64>; 2],
    /// Column means removed before projecting.
    pub mean: Vec<f64>,
    /// Eigenvalues of the two retained components (largest first).
    pub eigenvalues: [f64; 2],
}

impl Projection {
    /// Map a 2-D coordinate back into the original space:
    /// `mean + x·basis₀ + y·basis₁`.
    pub fn reconstruct(&self, coord: [f64; 2]) -> Vec<f64> {
        self.mean
            .iter()
            .zip(self.basis[0].iter().zip(self.basis[1].iter()))
            .map(|(m, (b0, b1))| m + coord[0] * b0 + coord[1] * b1)
            .collect()
    }
}

/// Project `points` (rows) onto their top two principal components.
///
/// The covariance matrix uses the `n − 1` denominator; components are the
/// eigenvectors with the two largest eigenvalues, each normalized to unit
/// length.  Requires at least two points of at least two dimensions.
pub fn pca_project(points: &[Vec<f64>]) -> Result<Projection, ExperimentError> {
    if points.len() < 2 {
        return Err(ExperimentError::InvalidValue(format!(
            "projection requires at least 2 points, got {}",
            points.len()
        )));
    }
    let dim = points[0].len();
    if dim < 2 {
        return Err(ExperimentError::InvalidValue(format!(
            "projection requires at least 2 dimensions, got {dim}"
        )));
    }
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(ExperimentError::InvalidValue(format!(
            "ragged point set: expected dimension {dim}, found {}",
            bad.len()
        )));
    }

    let n = points.len();
    let mut mean = vec![0.0f64; dim];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    // Centered data matrix, one row per point.
    let centered = DMatrix::from_fn(n, dim, |i, j| points[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eigen = cov.symmetric_eigen();

    // SymmetricEigen does not order its eigenpairs; pick the two largest.
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[b]
            .partial_cmp(&eigen.eigenvalues[a])
            .expect("covariance eigenvalues are finite")
    });
    let component = |rank: usize| -> (DVector<f64>, f64) {
        let idx = order[rank];
        let v = eigen.eigenvectors.column(idx).into_owned();
        (v.normalize(), eigen.eigenvalues[idx])
    };
    let (b0, l0) = component(0);
    let (b1, l1) = component(1);

    let coords = (0..n)
        .map(|i| {
            let row = centered.row(i);
            [(row * &b0)[(0, 0)], (row * &b1)[(0, 0)]]
        })
        .collect();
    Ok(Projection {
        coords,
        basis: [b0.iter().copied().collect(), b1.iter().copied().collect()],
        mean,
        eigenvalues: [l0, l1],
    })
}

/// Paths and row count of a completed embedding export.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingExport {
    pub embeddings_file: PathBuf,
    pub projection_file: PathBuf,
    /// Data rows written to each file (3 × samples).
    pub rows: usize,
}

/// Encode `dataset`, split each posterior mean into its three subspaces, and
/// write two CSV files into `out_dir`: the per-subspace 20-dim embeddings and
/// their joint 2-D principal-component projection.
pub fn export_embeddings(
    bundle: &ModelBundle,
    dataset: &ImageDataset,
    out_dir: &Path,
    batch_size: usize,
) -> Result<EmbeddingExport, ExperimentError> {
    if dataset.is_empty() {
        return Err(ExperimentError::InvalidValue(
            "cannot export embeddings for an empty dataset".into(),
        ));
    }
    let table = embed_dataset(bundle, dataset, batch_size)?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| ExperimentError::io(out_dir.display().to_string(), e))?;

    let points = subspace_rows(&table)?;
    let mut embeddings = String::from("sample_id,subspace,");
    for d in 0..SUBSPACE_DIM {
        embeddings.push_str(&format!("v{d:02},"));
    }
    embeddings.push_str("y_t,y_p\n");
    for (i, record) in dataset.records().iter().enumerate() {
        for (j, tag) in SUBSPACE_TAGS.iter().enumerate() {
            let row = &points[3 * i + j];
            embeddings.push_str(&format!("{},{tag},", record.id));
            for v in row {
                embeddings.push_str(&format!("{v},"));
            }
            embeddings.push_str(&format!("{},{}\n", table.y_t[i], table.y_p[i]));
        }
    }
    let embeddings_file = out_dir.join(EMBEDDINGS_FILE);
    std::fs::write(&embeddings_file, embeddings)
        .map_err(|e| ExperimentError::io(embeddings_file.display().to_string(), e))?;

    let projection = pca_project(&points)?;
    let mut projected = String::from("sample_id,subspace,x,y,y_t,y_p\n");
    for (i, record) in dataset.records().iter().enumerate() {
        for (j, tag) in SUBSPACE_TAGS.iter().enumerate() {
            let [x, y] = projection.coords[3 * i + j];
            projected.push_str(&format!(
                "{},{tag},{x},{y},{},{}\n",
                record.id, table.y_t[i], table.y_p[i]
            ));
        }
    }
    let projection_file = out_dir.join(PROJECTION_FILE);
    std::fs::write(&projection_file, projected)
        .map_err(|e| ExperimentError::io(projection_file.display().to_string(), e))?;

    Ok(EmbeddingExport {
        embeddings_file,
        projection_file,
        rows: points.len(),
    })
}

/// Flatten a latent table into 3N subspace rows: sample 0's TAL, PAL, MAL,
/// then sample 1's, and so on.
fn subspace_rows(table: &LatentTable) -> Result<Vec<Vec<f64>>, ExperimentError> {
    let mut rows = Vec::with_capacity(3 * table.len());
    for i in 0..table.len() {
        let z: Vec<f32> = table.z.narrow(0, i, 1)?.flatten_all()?.to_vec1()?;
        for j in 0..3 {
            rows.push(
                z[j * SUBSPACE_DIM..(j + 1) * SUBSPACE_DIM]
                    .iter()
                    .map(|&v| v as f64)
                    .collect(),
            );
        }
    }
    Ok(rows)
}
