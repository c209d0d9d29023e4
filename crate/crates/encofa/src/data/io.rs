//! Delimited-text persistence for vector datasets.
//!
//! A dataset directory holds `train.csv`, `val.csv`, `test.csv`,
//! `ood_pool.csv`, and `dataset.toml`. Split files use the header
//! `id,true_label,observed_label,true_type,x0..x{D-1}`; the pool file has
//! no observed label or type (`id,true_label,x0..`). Floats are written
//! with Rust's shortest round-trip formatting, so save/load is lossless
//! and byte-stable.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{DatasetMeta, DatasetSplits, InputShape, OodSample, Sample, TrueType};
use crate::error::{Error, Result};

pub fn save_dataset_dir(dir: &Path, splits: &DatasetSplits, pool: &[OodSample]) -> Result<()> {
    if let InputShape::Image { .. } = splits.meta.input_shape {
        return Err(Error::Data(
            "image datasets are directory-per-class; only vector datasets persist as csv".into(),
        ));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dim = splits.meta.input_shape.len();
    write_split(&dir.join("train.csv"), &splits.train, dim)?;
    write_split(&dir.join("val.csv"), &splits.val, dim)?;
    write_split(&dir.join("test.csv"), &splits.test, dim)?;
    write_pool(&dir.join("ood_pool.csv"), pool, dim)?;
    let meta = toml::to_string_pretty(&splits.meta)
        .map_err(|e| Error::Runtime(format!("serializing dataset meta: {e}")))?;
    fs::write(dir.join("dataset.toml"), meta).map_err(|e| Error::io(dir.join("dataset.toml"), e))
}

pub fn load_dataset_dir(dir: &Path) -> Result<(DatasetSplits, Vec<OodSample>)> {
    let meta_path = dir.join("dataset.toml");
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: DatasetMeta = toml::from_str(&meta_text)
        .map_err(|e| Error::Data(format!("parsing {}: {e}", meta_path.display())))?;
    let dim = meta.input_shape.len();
    let splits = DatasetSplits {
        train: read_split(&dir.join("train.csv"), dim)?,
        val: read_split(&dir.join("val.csv"), dim)?,
        test: read_split(&dir.join("test.csv"), dim)?,
        meta,
    };
    let pool = read_pool(&dir.join("ood_pool.csv"), dim)?;
    Ok((splits, pool))
}

fn write_split(path: &Path, samples: &[Sample], dim: usize) -> Result<()> {
    let mut out = String::new();
    out.push_str("id,true_label,observed_label,true_type");
    for d in 0..dim {
        let _ = write!(out, ",x{d}");
    }
    out.push('\n');
    for s in samples {
        let _ = write!(
            out,
            "{},{},{},{}",
            s.id,
            s.true_label,
            s.observed_label,
            s.true_type.as_str()
        );
        for x in &s.input {
            let _ = write!(out, ",{x}");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn write_pool(path: &Path, pool: &[OodSample], dim: usize) -> Result<()> {
    let mut out = String::new();
    out.push_str("id,true_label");
    for d in 0..dim {
        let _ = write!(out, ",x{d}");
    }
    out.push('\n');
    for s in pool {
        let _ = write!(out, "{},{}", s.id, s.true_label);
        for x in &s.input {
            let _ = write!(out, ",{x}");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_split(path: &Path, dim: usize) -> Result<Vec<Sample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty file", path.display())))?;
    if !header.starts_with("id,true_label,observed_label,true_type") {
        return Err(Error::Data(format!(
            "{}: unexpected header {header:?}",
            path.display()
        )));
    }
    let mut samples = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 + dim {
            return Err(Error::Data(format!(
                "{} line {}: expected {} fields, got {}",
                path.display(),
                lineno + 2,
                4 + dim,
                fields.len()
            )));
        }
        let parse_err = |what: &str| {
            Error::Data(format!("{} line {}: bad {what}", path.display(), lineno + 2))
        };
        samples.push(Sample {
            id: fields[0].parse().map_err(|_| parse_err("id"))?,
            true_label: fields[1].parse().map_err(|_| parse_err("true_label"))?,
            observed_label: fields[2].parse().map_err(|_| parse_err("observed_label"))?,
            true_type: TrueType::parse(fields[3])?,
            input: fields[4..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| parse_err("feature value")))
                .collect::<Result<Vec<f64>>>()?,
        });
    }
    Ok(samples)
}

fn read_pool(path: &Path, dim: usize) -> Result<Vec<OodSample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    lines.next();
    let mut pool = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 + dim {
            return Err(Error::Data(format!(
                "{} line {}: expected {} fields, got {}",
                path.display(),
                lineno + 2,
                2 + dim,
                fields.len()
            )));
        }
        let parse_err = |what: &str| {
            Error::Data(format!("{} line {}: bad {what}", path.display(), lineno + 2))
        };
        pool.push(OodSample {
            id: fields[0].parse().map_err(|_| parse_err("id"))?,
            true_label: fields[1].parse().map_err(|_| parse_err("true_label"))?,
            input: fields[2..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| parse_err("feature value")))
                .collect::<Result<Vec<f64>>>()?,
        });
    }
    Ok(pool)
}

#[cfg(test)]
mod tests {
    use super::super::{generate_blobs, inject_noise, InstanceProfile, NoiseSpec};
    use super::*;

    #[test]
    fn round_trip_is_lossless() {
        let (splits, pool) = generate_blobs(20, 3, 2, 8, 4.0, 0).unwrap();
        let splits = inject_noise(
            splits,
            &pool,
            &NoiseSpec {
                alpha: 0.4,
                beta: 0.5,
                seed: 3,
                instance_profile: InstanceProfile::TruncatedGaussian,
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset_dir(dir.path(), &splits, &pool).unwrap();
        let (loaded, loaded_pool) = load_dataset_dir(dir.path()).unwrap();
        assert_eq!(loaded.train, splits.train);
        assert_eq!(loaded.val, splits.val);
        assert_eq!(loaded.test, splits.test);
        assert_eq!(loaded_pool, pool);
        assert_eq!(loaded.meta.id_class_count, splits.meta.id_class_count);
        assert!(loaded.meta.noise.is_some());
    }

    #[test]
    fn save_is_byte_stable() {
        let (splits, pool) = generate_blobs(10, 2, 1, 4, 4.0, 1).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        save_dataset_dir(d1.path(), &splits, &pool).unwrap();
        save_dataset_dir(d2.path(), &splits, &pool).unwrap();
        for f in ["train.csv", "val.csv", "test.csv", "ood_pool.csv"] {
            let a = fs::read(d1.path().join(f)).unwrap();
            let b = fs::read(d2.path().join(f)).unwrap();
            assert_eq!(a, b, "{f} differs");
        }
    }

    #[test]
    fn missing_dir_is_an_io_error_naming_the_path() {
        let err = load_dataset_dir(Path::new("/nonexistent/encofa-data")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("/nonexistent/encofa-data"), "{msg}");
    }
}
