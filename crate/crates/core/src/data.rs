//! Datasets: synthetic blob and digit-image generators, IDX binary
//! ingestion, train/validation splitting, normalization, and pad-crop/flip
//! augmentation.

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::path::Path;

/// A labeled dataset. Image features are (n, c, h, w); flat features are
/// (n, d).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample feature shape.
    pub fn sample_shape(&self) -> Vec<usize> {
        self.features.shape[1..].to_vec()
    }

    /// Gather the given rows into a batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let row = self.features.row_size();
        let mut shape = self.features.shape.clone();
        shape[0] = indices.len();
        let mut data = Vec::with_capacity(indices.len() * row);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
            labels.push(self.labels[i]);
        }
        (Tensor::from_vec(&shape, data), labels)
    }
}

// --- synthetic generators ----------------------------------------------------

/// Gaussian blobs: one spherical cluster per class in `dims` dimensions.
pub fn gen_blobs(samples: usize, num_classes: usize, dims: usize, seed: u64) -> Result<Dataset> {
    if samples == 0 || num_classes < 2 || dims == 0 {
        return Err(Error::Config(format!(
            "blobs need samples > 0, classes >= 2, dims > 0 (got {samples}, {num_classes}, {dims})"
        )));
    }
    let mut rng = rng::stream(seed, rng::STREAM_DATA);
    let centers: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| (0..dims).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let mut data = Vec::with_capacity(samples * dims);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let c = i % num_classes;
        labels.push(c);
        for d in 0..dims {
            data.push(centers[c][d] + 0.6 * rng.sample::<f64, _>(StandardNormal));
        }
    }
    Ok(Dataset {
        features: Tensor::from_vec(&[samples, dims], data),
        labels,
        num_classes,
    })
}

/// 5x7 pixel glyphs for the digits 0-9, row-major, '1' = ink.
const DIGIT_GLYPHS: [[u8; 7]; 10] = [
    [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110],
    [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
    [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111],
    [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110],
    [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010],
    [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110],
    [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110],
    [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000],
    [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110],
    [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100],
];

pub const DIGIT_IMAGE_SIZE: usize = 16;
const GLYPH_SCALE: usize = 2;
const GLYPH_W: usize = 5 * GLYPH_SCALE;
const GLYPH_H: usize = 7 * GLYPH_SCALE;
const DIGIT_NOISE_SIGMA: f64 = 0.25;
const DIGIT_DROPOUT: f64 = 0.08;

/// Ten-class digit images, 1x16x16 in [0, 1]: a scaled glyph at a random
/// offset with intensity jitter, ink dropout, and pixel noise. Classes are
/// balanced round-robin.
pub fn gen_digits(samples: usize, seed: u64) -> Result<Dataset> {
    if samples == 0 {
        return Err(Error::Config("digits need samples > 0".into()));
    }
    let s = DIGIT_IMAGE_SIZE;
    let mut rng = rng::stream(seed, rng::STREAM_DATA);
    let mut data = vec![0.0; samples * s * s];
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let class = i % 10;
        labels.push(class);
        let glyph = &DIGIT_GLYPHS[class];
        let ox = rng.gen_range(0..=s - GLYPH_W);
        let oy = rng.gen_range(0..=s - GLYPH_H);
        let intensity = 0.6 + 0.4 * rng.gen::<f64>();
        let img = &mut data[i * s * s..(i + 1) * s * s];
        for gy in 0..7 {
            for gx in 0..5 {
                if glyph[gy] >> (4 - gx) & 1 == 0 {
                    continue;
                }
                if rng.gen::<f64>() < DIGIT_DROPOUT {
                    continue;
                }
                for dy in 0..GLYPH_SCALE {
                    for dx in 0..GLYPH_SCALE {
                        let y = oy + gy * GLYPH_SCALE + dy;
                        let x = ox + gx * GLYPH_SCALE + dx;
                        img[y * s + x] = intensity;
                    }
                }
            }
        }
        for px in img.iter_mut() {
            let noise: f64 = rng.sample(StandardNormal);
            *px = (*px + DIGIT_NOISE_SIGMA * noise).clamp(0.0, 1.0);
        }
    }
    Ok(Dataset {
        features: Tensor::from_vec(&[samples, 1, s, s], data),
        labels,
        num_classes: 10,
    })
}

// --- IDX binary format ---------------------------------------------------------

const IDX_TYPE_U8: u8 = 0x08;

struct IdxReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> IdxReader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Parse {
                offset: self.pos,
                message: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32_be(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parse an IDX byte buffer of unsigned bytes with the expected number of
/// dimensions; returns the dimension sizes and the payload.
fn parse_idx(bytes: &[u8], expect_dims: usize) -> Result<(Vec<usize>, &[u8])> {
    let mut r = IdxReader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic[0] != 0 || magic[1] != 0 {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad magic prefix {:02x}{:02x}", magic[0], magic[1]),
        });
    }
    if magic[2] != IDX_TYPE_U8 {
        return Err(Error::Parse {
            offset: 2,
            message: format!("unsupported element type 0x{:02x}, expected unsigned byte", magic[2]),
        });
    }
    let dims = magic[3] as usize;
    if dims != expect_dims {
        return Err(Error::Parse {
            offset: 3,
            message: format!("expected {expect_dims} dimensions, file declares {dims}"),
        });
    }
    let mut sizes = Vec::with_capacity(dims);
    for i in 0..dims {
        sizes.push(r.u32_be(&format!("dimension {i}"))? as usize);
    }
    let count: usize = sizes.iter().product();
    let data = r.take(count, "payload")?;
    if r.pos != bytes.len() {
        return Err(Error::Parse {
            offset: r.pos,
            message: format!("{} trailing bytes after payload", bytes.len() - r.pos),
        });
    }
    Ok((sizes, data))
}

/// Load an IDX image file (n, h, w of unsigned bytes) and an IDX label file
/// (n unsigned bytes) into a dataset scaled to [0, 1] with a channel axis.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let img_bytes = std::fs::read(images)?;
    let (img_sizes, img_data) = parse_idx(&img_bytes, 3)?;
    let lab_bytes = std::fs::read(labels)?;
    let (lab_sizes, lab_data) = parse_idx(&lab_bytes, 1)?;
    let (n, h, w) = (img_sizes[0], img_sizes[1], img_sizes[2]);
    if lab_sizes[0] != n {
        return Err(Error::Parse {
            offset: 4,
            message: format!("{} labels for {} images", lab_sizes[0], n),
        });
    }
    if n == 0 || h == 0 || w == 0 {
        return Err(Error::Parse {
            offset: 4,
            message: format!("degenerate image dimensions {n}x{h}x{w}"),
        });
    }
    let features = Tensor::from_vec(
        &[n, 1, h, w],
        img_data.iter().map(|&b| b as f64 / 255.0).collect(),
    );
    let labels: Vec<usize> = lab_data.iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().max().copied().unwrap_or(0) + 1;
    Ok(Dataset {
        features,
        labels,
        num_classes: num_classes.max(2),
    })
}

/// Write images (n, 1, h, w in [0, 1]) as an IDX unsigned-byte file.
pub fn write_idx_images(path: &Path, ds: &Dataset) -> Result<()> {
    let shape = &ds.features.shape;
    let (n, h, w) = (shape[0], shape[2], shape[3]);
    let mut bytes = Vec::with_capacity(16 + n * h * w);
    bytes.extend_from_slice(&[0, 0, IDX_TYPE_U8, 3]);
    for d in [n, h, w] {
        bytes.extend_from_slice(&(d as u32).to_be_bytes());
    }
    bytes.extend(ds.features.data.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Write labels as an IDX unsigned-byte file.
pub fn write_idx_labels(path: &Path, ds: &Dataset) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + ds.len());
    bytes.extend_from_slice(&[0, 0, IDX_TYPE_U8, 1]);
    bytes.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    bytes.extend(ds.labels.iter().map(|&l| l as u8));
    std::fs::write(path, bytes)?;
    Ok(())
}

// --- splitting, normalization, augmentation --------------------------------------

/// Split off a seeded random validation subset; the remainder stays in
/// order as the training set.
pub fn split_validation(ds: &Dataset, val_size: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if val_size >= ds.len() {
        return Err(Error::Config(format!(
            "validation size {val_size} must be smaller than the dataset ({})",
            ds.len()
        )));
    }
    let mut rng = rng::stream(seed, rng::STREAM_DATA);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    shuffle(&mut order, &mut rng);
    let mut val_idx = order[..val_size].to_vec();
    val_idx.sort_unstable();
    let in_val = {
        let mut flags = vec![false; ds.len()];
        for &i in &val_idx {
            flags[i] = true;
        }
        flags
    };
    let train_idx: Vec<usize> = (0..ds.len()).filter(|&i| !in_val[i]).collect();
    let (tf, tl) = ds.batch(&train_idx);
    let (vf, vl) = ds.batch(&val_idx);
    Ok((
        Dataset { features: tf, labels: tl, num_classes: ds.num_classes },
        Dataset { features: vf, labels: vl, num_classes: ds.num_classes },
    ))
}

/// Fisher-Yates shuffle driven by the given stream.
pub fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// Per-channel normalization statistics, computed on the training split.
#[derive(Debug, Clone)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Channel statistics of an image dataset, or whole-tensor statistics
    /// of flat features (treated as one channel).
    pub fn fit(train: &Dataset) -> Normalizer {
        let shape = &train.features.shape;
        let channels = if shape.len() == 4 { shape[1] } else { 1 };
        let mut mean = vec![0.0; channels];
        let mut sq = vec![0.0; channels];
        let mut count = vec![0usize; channels];
        if shape.len() == 4 {
            let (n, hw) = (shape[0], shape[2] * shape[3]);
            for b in 0..n {
                for c in 0..channels {
                    let off = (b * channels + c) * hw;
                    for i in 0..hw {
                        let v = train.features.data[off + i];
                        mean[c] += v;
                        sq[c] += v * v;
                        count[c] += 1;
                    }
                }
            }
        } else {
            for &v in &train.features.data {
                mean[0] += v;
                sq[0] += v * v;
                count[0] += 1;
            }
        }
        let mut std = vec![0.0; channels];
        for c in 0..channels {
            mean[c] /= count[c] as f64;
            let var = (sq[c] / count[c] as f64 - mean[c] * mean[c]).max(0.0);
            std[c] = var.sqrt().max(1e-8);
        }
        Normalizer { mean, std }
    }

    /// Normalize a dataset in place with these statistics.
    pub fn apply(&self, ds: &mut Dataset) {
        let shape = ds.features.shape.clone();
        if shape.len() == 4 {
            let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * hw;
                    for i in 0..hw {
                        ds.features.data[off + i] =
                            (ds.features.data[off + i] - self.mean[ch]) / self.std[ch];
                    }
                }
            }
        } else {
            for v in ds.features.data.iter_mut() {
                *v = (*v - self.mean[0]) / self.std[0];
            }
        }
    }
}

/// Augmentation switches for image batches.
#[derive(Debug, Clone, Copy)]
pub struct Augment {
    /// Zero-pad by this many pixels, then crop back at a random offset.
    pub pad_crop: usize,
    /// Mirror horizontally with probability one half.
    pub hflip: bool,
}

impl Augment {
    pub fn is_noop(&self) -> bool {
        self.pad_crop == 0 && !self.hflip
    }

    /// Augment a (n, c, h, w) batch in place; shapes and labels never change.
    pub fn apply(&self, batch: &mut Tensor, rng: &mut ChaCha8Rng) {
        if self.is_noop() {
            return;
        }
        let (n, c, h, w) = (
            batch.shape[0],
            batch.shape[1],
            batch.shape[2],
            batch.shape[3],
        );
        let p = self.pad_crop;
        let mut sample = vec![0.0; c * h * w];
        for b in 0..n {
            let off = b * c * h * w;
            if p > 0 {
                let dy = rng.gen_range(0..=2 * p) as isize - p as isize;
                let dx = rng.gen_range(0..=2 * p) as isize - p as isize;
                sample.copy_from_slice(&batch.data[off..off + c * h * w]);
                for ch in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            let sy = y as isize + dy;
                            let sx = x as isize + dx;
                            let v = if sy >= 0 && (sy as usize) < h && sx >= 0 && (sx as usize) < w
                            {
                                sample[(ch * h + sy as usize) * w + sx as usize]
                            } else {
                                0.0
                            };
                            batch.data[off + (ch * h + y) * w + x] = v;
                        }
                    }
                }
            }
            if self.hflip && rng.gen::<bool>() {
                for ch in 0..c {
                    for y in 0..h {
                        let row = off + (ch * h + y) * w;
                        batch.data[row..row + w].reverse();
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_path(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("sparselab-test-{}-{name}", std::process::id()));
        p
    }

    #[test]
    fn blobs_are_balanced_and_seeded() {
        let a = gen_blobs(90, 3, 5, 7).unwrap();
        let b = gen_blobs(90, 3, 5, 7).unwrap();
        let c = gen_blobs(90, 3, 5, 8).unwrap();
        assert_eq!(a.features, b.features);
        assert_ne!(a.features, c.features);
        assert_eq!(a.features.shape, vec![90, 5]);
        for class in 0..3 {
            assert_eq!(a.labels.iter().filter(|&&l| l == class).count(), 30);
        }
        assert!(gen_blobs(0, 3, 5, 7).is_err());
        assert!(gen_blobs(10, 1, 5, 7).is_err());
    }

    #[test]
    fn digits_have_image_shape_and_balanced_classes() {
        let ds = gen_digits(200, 3).unwrap();
        assert_eq!(ds.features.shape, vec![200, 1, 16, 16]);
        assert_eq!(ds.num_classes, 10);
        for class in 0..10 {
            assert_eq!(ds.labels.iter().filter(|&&l| l == class).count(), 20);
        }
        assert!(ds.features.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let again = gen_digits(200, 3).unwrap();
        assert_eq!(ds.features, again.features);
    }

    #[test]
    fn digit_classes_are_visually_distinct() {
        // Mean image of each class should differ clearly from other classes.
        let ds = gen_digits(500, 1).unwrap();
        let px = 256;
        let mut means = vec![vec![0.0; px]; 10];
        let mut counts = vec![0usize; 10];
        for (i, &l) in ds.labels.iter().enumerate() {
            counts[l] += 1;
            for (j, m) in means[l].iter_mut().enumerate() {
                *m += ds.features.data[i * px + j];
            }
        }
        for (m, &cnt) in means.iter_mut().zip(&counts) {
            for v in m.iter_mut() {
                *v /= cnt as f64;
            }
        }
        for a in 0..10 {
            for b in (a + 1)..10 {
                let dist: f64 = means[a]
                    .iter()
                    .zip(&means[b])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                assert!(dist > 0.05, "classes {a} and {b} look identical ({dist})");
            }
        }
    }

    #[test]
    fn idx_round_trip_preserves_images_and_labels() {
        let ds = gen_digits(40, 9).unwrap();
        let img = temp_path("imgs.idx");
        let lab = temp_path("labels.idx");
        write_idx_images(&img, &ds).unwrap();
        write_idx_labels(&lab, &ds).unwrap();
        let back = load_idx(&img, &lab).unwrap();
        assert_eq!(back.features.shape, ds.features.shape);
        assert_eq!(back.labels, ds.labels);
        let max_err = ds
            .features
            .data
            .iter()
            .zip(&back.features.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err <= 0.5 / 255.0 + 1e-12, "quantization error {max_err}");
        std::fs::remove_file(&img).ok();
        std::fs::remove_file(&lab).ok();
    }

    #[test]
    fn idx_parser_rejects_malformed_files() {
        let p = temp_path("bad.idx");
        let cases: Vec<(Vec<u8>, &str)> = vec![
            (vec![], "empty"),
            (vec![1, 0, 8, 1, 0, 0, 0, 0], "bad magic"),
            (vec![0, 0, 0x0D, 1, 0, 0, 0, 0], "float type"),
            (vec![0, 0, 8, 2, 0, 0, 0, 1], "truncated dims"),
            (vec![0, 0, 8, 1, 0, 0, 0, 5, 1, 2], "truncated payload"),
            (vec![0, 0, 8, 1, 0, 0, 0, 1, 9, 9], "trailing bytes"),
        ];
        for (bytes, what) in cases {
            std::fs::write(&p, &bytes).unwrap();
            let err = load_idx(&p, &p).unwrap_err();
            assert!(matches!(err, Error::Parse { .. }), "{what}: {err}");
        }
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn validation_split_is_disjoint_and_seeded() {
        let ds = gen_blobs(100, 4, 3, 5).unwrap();
        let (train, val) = split_validation(&ds, 20, 11).unwrap();
        assert_eq!(train.len(), 80);
        assert_eq!(val.len(), 20);
        let (train2, val2) = split_validation(&ds, 20, 11).unwrap();
        assert_eq!(train.features, train2.features);
        assert_eq!(val.labels, val2.labels);
        let total_sum: f64 = ds.features.data.iter().sum();
        let split_sum: f64 =
            train.features.data.iter().sum::<f64>() + val.features.data.iter().sum::<f64>();
        assert!((total_sum - split_sum).abs() < 1e-9);
        assert!(split_validation(&ds, 100, 1).is_err());
    }

    #[test]
    fn normalizer_stats_come_from_train_split_only() {
        let train = gen_digits(100, 2).unwrap();
        let norm = Normalizer::fit(&train);
        let other = gen_digits(50, 99).unwrap();
        let norm_after_new_test_set = Normalizer::fit(&train);
        let _ = other;
        assert_eq!(norm.mean, norm_after_new_test_set.mean);
        let mut normalized = train.clone();
        norm.apply(&mut normalized);
        let refit = Normalizer::fit(&normalized);
        assert!(refit.mean[0].abs() < 1e-9);
        assert!((refit.std[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn augmentation_preserves_shape_and_is_seeded() {
        let ds = gen_digits(16, 4).unwrap();
        let aug = Augment { pad_crop: 2, hflip: true };
        let (mut b1, labels) = ds.batch(&(0..16).collect::<Vec<_>>());
        let mut b2 = b1.clone();
        let shape = b1.shape.clone();
        aug.apply(&mut b1, &mut rng::stream(5, rng::STREAM_AUGMENT));
        aug.apply(&mut b2, &mut rng::stream(5, rng::STREAM_AUGMENT));
        assert_eq!(b1, b2);
        assert_eq!(b1.shape, shape);
        assert_eq!(labels.len(), 16);
        let noop = Augment { pad_crop: 0, hflip: false };
        let before = b1.clone();
        noop.apply(&mut b1, &mut rng::stream(5, rng::STREAM_AUGMENT));
        assert_eq!(b1, before);
    }

    #[test]
    fn pad_crop_shifts_content() {
        let mut img = Tensor::zeros(&[1, 1, 4, 4]);
        img.data[5] = 1.0; // (1,1)
        let aug = Augment { pad_crop: 1, hflip: false };
        // Find a seed that produces a nonzero shift.
        let mut moved = false;
        for seed in 0..20 {
            let mut t = img.clone();
            aug.apply(&mut t, &mut rng::stream(seed, rng::STREAM_AUGMENT));
            let sum: f64 = t.data.iter().sum();
            assert!(sum <= 1.0 + 1e-12);
            if t.data[5] != 1.0 && sum > 0.0 {
                moved = true;
            }
        }
        assert!(moved, "pad-crop never shifted the pixel");
    }
}
