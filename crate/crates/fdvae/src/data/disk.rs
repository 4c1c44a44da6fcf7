//! Attribute-annotated image directories.
//!
//! Expected layout:
//!
//! ```text
//! <root>/images/<file>            the images themselves
//! <root>/annotations.csv          header: file,<attr1>,<attr2>,...  values in {0,1}
//! <root>/partition.csv            optional; header: file,split  values in {train,val,test}
//! ```
//!
//! Images are center-cropped to a square, bilinearly resized to 64×64, and
//! scaled to `[-1, 1]`.

use std::collections::HashMap;
use std::path::Path;

use super::{AttributePair, DataError, Record, RecordSource};

const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Load every record of `split` under `root`, labeled by `pair`.
///
/// When `partition.csv` is absent the directory is treated as an
/// unpartitioned pool: all records are returned for any requested split
/// (composition into splits is then the caller's job, see
/// [`super::compose_split`]).
pub fn load_attribute_dataset(
    root: &Path,
    pair: &AttributePair,
    split: &str,
) -> Result<Vec<Record>, DataError> {
    pair.validate()?;
    if !SPLITS.contains(&split) {
        return Err(DataError::InvalidSpec(format!(
            "unknown split `{split}`; expected one of {SPLITS:?}"
        )));
    }
    let partition = load_partition(root)?;

    let path = root.join("annotations.csv");
    let mut reader = csv::Reader::from_path(&path).map_err(|e| csv_error(&path, 1, e))?;
    let headers = reader
        .headers()
        .map_err(|e| csv_error(&path, 1, e))?
        .clone();
    let available: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let column = |attribute: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .skip(1)
            .position(|h| h == attribute)
            .map(|i| i + 1)
            .ok_or_else(|| DataError::UnknownAttribute {
                attribute: attribute.to_string(),
                available: available.clone(),
            })
    };
    let target_col = column(&pair.target)?;
    let protected_col = column(&pair.protected)?;

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e
                .position()
                .map(|p| p.line() as usize)
                .unwrap_or_default();
            csv_error_at(&path, line, e.to_string())
        })?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or_default();
        let file = row
            .get(0)
            .filter(|f| !f.is_empty())
            .ok_or_else(|| csv_error_at(&path, line, "empty file column".into()))?;

        if let Some(partition) = &partition {
            match partition.get(file) {
                Some(s) if s == split => {}
                Some(_) => continue,
                None => {
                    return Err(csv_error_at(
                        &path,
                        line,
                        format!("`{file}` missing from partition.csv"),
                    ))
                }
            }
        }

        let label = |col: usize, invert: bool| -> Result<u8, DataError> {
            let raw = row
                .get(col)
                .ok_or_else(|| csv_error_at(&path, line, format!("missing column {col}")))?;
            let value = match raw.trim() {
                "0" => 0u8,
                "1" => 1u8,
                other => {
                    return Err(csv_error_at(
                        &path,
                        line,
                        format!("label `{other}` is not 0/1"),
                    ))
                }
            };
            Ok(if invert { 1 - value } else { value })
        };
        let target = label(target_col, pair.invert_target)?;
        let protected = label(protected_col, pair.invert_protected)?;

        let image = root.join("images").join(file);
        if !image.is_file() {
            return Err(DataError::MissingImageFile { path: image });
        }
        records.push(Record {
            id: file.to_string(),
            target,
            protected,
            source: RecordSource::Disk { path: image },
        });
    }
    Ok(records)
}

fn load_partition(root: &Path) -> Result<Option<HashMap<String, String>>, DataError> {
    let path = root.join("partition.csv");
    if !path.is_file() {
        return Ok(None);
    }
    let mut reader = csv::Reader::from_path(&path).map_err(|e| csv_error(&path, 1, e))?;
    let mut map = HashMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(&path, 0, e))?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or_default();
        let (Some(file), Some(split)) = (row.get(0), row.get(1)) else {
            return Err(csv_error_at(&path, line, "expected columns file,split".into()));
        };
        if !SPLITS.contains(&split) {
            return Err(csv_error_at(
                &path,
                line,
                format!("split `{split}` is not one of {SPLITS:?}"),
            ));
        }
        map.insert(file.to_string(), split.to_string());
    }
    Ok(Some(map))
}

fn csv_error(path: &Path, line: usize, e: csv::Error) -> DataError {
    csv_error_at(path, line, e.to_string())
}

fn csv_error_at(path: &Path, line: usize, reason: String) -> DataError {
    DataError::CorruptAnnotation {
        path: path.to_path_buf(),
        line,
        reason,
    }
}

/// Load, center-crop, resize to 64×64, and scale to `[-1, 1]` (CHW order).
pub fn load_image_pixels(path: &Path) -> Result<Vec<f32>, DataError> {
    let img = image::open(path).map_err(|source| DataError::ImageDecode {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let side = w.min(h);
    let cropped = image::imageops::crop_imm(&rgb, (w - side) / 2, (h - side) / 2, side, side);
    let resized = image::imageops::resize(
        &cropped.to_image(),
        64,
        64,
        image::imageops::FilterType::Triangle,
    );
    let mut pixels = vec![0.0f32; 3 * 64 * 64];
    for (x, y, px) in resized.enumerate_pixels() {
        for c in 0..3 {
            pixels[c * 64 * 64 + y as usize * 64 + x as usize] =
                px.0[c] as f32 / 255.0 * 2.0 - 1.0;
        }
    }
    Ok(pixels)
}
