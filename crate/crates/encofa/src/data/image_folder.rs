//! Directory-per-class image loader.
//!
//! Layout: `root/<class-name>/*.{png,jpg,jpeg}`. Classes listed in
//! `id_classes` become ID classes 0..K in list order; `ood_classes`
//! continue the numbering and land in the OOD pool. ID samples are split
//! 70/10/20 per class after a seeded shuffle of the (sorted) file list.

use std::path::{Path, PathBuf};

use image::imageops::FilterType;

use super::noise::shuffle;
use super::{split_sizes, DatasetMeta, DatasetSplits, InputShape, OodSample, Sample, TrueType};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone)]
pub struct ImageFolderOptions {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Seed for the per-class split shuffle.
    pub seed: u64,
}

impl Default for ImageFolderOptions {
    fn default() -> Self {
        ImageFolderOptions {
            channels: 3,
            height: 32,
            width: 32,
            seed: 0,
        }
    }
}

/// Load an image-folder dataset. Every listed class directory must exist;
/// an empty `ood_classes` list yields an empty pool (open-set injection
/// will then refuse to run).
pub fn load_image_folder(
    root: &Path,
    id_classes: &[String],
    ood_classes: &[String],
    opts: &ImageFolderOptions,
) -> Result<(DatasetSplits, Vec<OodSample>)> {
    if !root.is_dir() {
        return Err(Error::Data(format!(
            "image dataset root {} does not exist",
            root.display()
        )));
    }
    if id_classes.len() < 2 {
        return Err(Error::Config(
            "image dataset needs at least 2 ID classes".into(),
        ));
    }
    if opts.channels != 1 && opts.channels != 3 {
        return Err(Error::Config(format!(
            "image channels must be 1 or 3, got {}",
            opts.channels
        )));
    }

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    let mut pool = Vec::new();
    let mut next_id = 0usize;

    for (class, name) in id_classes.iter().enumerate() {
        let files = class_files(root, name)?;
        let mut order: Vec<usize> = (0..files.len()).collect();
        let mut rng = stream_rng(opts.seed, "image-split", class as u64, 0);
        shuffle(&mut order, &mut rng);
        let (n_train, n_val, _) = split_sizes(files.len());
        for (pos, &fi) in order.iter().enumerate() {
            let input = load_pixels(&files[fi], opts)?;
            let sample = Sample {
                id: next_id,
                input,
                observed_label: class,
                true_label: class,
                true_type: TrueType::Clean,
            };
            next_id += 1;
            if pos < n_train {
                train.push(sample);
            } else if pos < n_train + n_val {
                val.push(sample);
            } else {
                test.push(sample);
            }
        }
    }

    for (off, name) in ood_classes.iter().enumerate() {
        let class = id_classes.len() + off;
        for file in class_files(root, name)? {
            pool.push(OodSample {
                id: next_id,
                input: load_pixels(&file, opts)?,
                true_label: class,
            });
            next_id += 1;
        }
    }

    let splits = DatasetSplits {
        train,
        val,
        test,
        meta: DatasetMeta {
            input_shape: InputShape::Image {
                channels: opts.channels,
                height: opts.height,
                width: opts.width,
            },
            id_class_count: id_classes.len(),
            ood_class_count: ood_classes.len(),
            noise: None,
        },
    };
    Ok((splits, pool))
}

fn class_files(root: &Path, class_name: &str) -> Result<Vec<PathBuf>> {
    let dir = root.join(class_name);
    if !dir.is_dir() {
        return Err(Error::Data(format!(
            "missing class directory {}",
            dir.display()
        )));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase),
                Some(ref ext) if ext == "png" || ext == "jpg" || ext == "jpeg"
            )
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!(
            "class directory {} holds no images",
            dir.display()
        )));
    }
    Ok(files)
}

/// Decode, resize, and flatten to channel-major [0,1] floats.
fn load_pixels(path: &Path, opts: &ImageFolderOptions) -> Result<Vec<f64>> {
    let img = image::open(path)
        .map_err(|e| Error::Data(format!("decoding {}: {e}", path.display())))?
        .resize_exact(opts.width as u32, opts.height as u32, FilterType::Triangle);
    let (h, w) = (opts.height, opts.width);
    let mut out = vec![0.0f64; opts.channels * h * w];
    if opts.channels == 1 {
        let gray = img.to_luma8();
        for (y, x, p) in gray.enumerate_pixels().map(|(x, y, p)| (y, x, p)) {
            out[y as usize * w + x as usize] = f64::from(p.0[0]) / 255.0;
        }
    } else {
        let rgb = img.to_rgb8();
        for (x, y, p) in rgb.enumerate_pixels() {
            for c in 0..3 {
                out[c * h * w + y as usize * w + x as usize] = f64::from(p.0[c]) / 255.0;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    fn write_class(root: &Path, name: &str, count: usize, tint: u8) {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).unwrap();
        for i in 0..count {
            let img = RgbImage::from_fn(20, 20, |x, y| {
                Rgb([tint, (x * 12) as u8, (y * 12 + i as u32) as u8])
            });
            img.save(dir.join(format!("img_{i:03}.png"))).unwrap();
        }
    }

    fn id_names() -> Vec<String> {
        (0..5).map(|i| format!("id{i}")).collect()
    }

    fn ood_names() -> Vec<String> {
        (0..3).map(|i| format!("ood{i}")).collect()
    }

    #[test]
    fn splits_are_70_10_20_per_class() {
        let dir = tempfile::tempdir().unwrap();
        for (i, name) in id_names().iter().enumerate() {
            write_class(dir.path(), name, 20, i as u8 * 40);
        }
        for (i, name) in ood_names().iter().enumerate() {
            write_class(dir.path(), name, 10, 200 + i as u8 * 10);
        }
        let (splits, pool) = load_image_folder(
            dir.path(),
            &id_names(),
            &ood_names(),
            &ImageFolderOptions { channels: 3, height: 8, width: 8, seed: 0 },
        )
        .unwrap();
        assert_eq!(splits.train.len(), 5 * 14);
        assert_eq!(splits.val.len(), 5 * 2);
        assert_eq!(splits.test.len(), 5 * 4);
        assert_eq!(pool.len(), 30);
        assert_eq!(splits.meta.input_shape.len(), 3 * 8 * 8);
        for s in &splits.train {
            assert!(s.input.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        // OOD class numbering continues after the ID classes.
        assert!(pool.iter().all(|s| (5..8).contains(&s.true_label)));
    }

    #[test]
    fn empty_ood_list_yields_empty_pool() {
        let dir = tempfile::tempdir().unwrap();
        for (i, name) in id_names().iter().enumerate() {
            write_class(dir.path(), name, 10, i as u8 * 40);
        }
        let (_, pool) =
            load_image_folder(dir.path(), &id_names(), &[], &ImageFolderOptions::default())
                .unwrap();
        assert!(pool.is_empty());
    }

    #[test]
    fn missing_paths_are_named_in_errors() {
        let err = load_image_folder(
            Path::new("/nonexistent/images"),
            &id_names(),
            &[],
            &ImageFolderOptions::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("/nonexistent/images"));

        let dir = tempfile::tempdir().unwrap();
        write_class(dir.path(), "id0", 5, 0);
        let err = load_image_folder(
            dir.path(),
            &["id0".into(), "id1".into()],
            &[],
            &ImageFolderOptions::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("id1"), "{err}");
    }
}
