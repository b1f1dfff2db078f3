//! Datasets: synthetic binary generators and a bit-exact IDX-format loader.
//!
//! The IDX container is the standard big-endian format:
//! `[magic u32][dims u32...][payload u8...]`, magic 0x00000803 for image
//! files (3 dims: count, rows, cols) and 0x00000801 for label files (1 dim).
//! Pixels load as `u8 / 255` into [0, 1] and re-encode byte-identically.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{self, purpose};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// A labeled dataset with its input-box metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub name: String,
    /// Componentwise clamp range the features live in.
    pub input_box: (f64, f64),
    /// (rows, cols) when the features are flattened images.
    pub image_dims: Option<(u32, u32)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.rows() != self.labels.len() {
            return Err(Error::DimMismatch {
                left: self.features.rows(),
                right: self.labels.len(),
            });
        }
        let (lo, hi) = self.input_box;
        if !self.features.data().iter().all(|&v| v >= lo && v <= hi) {
            return Err(Error::InvalidConfig(format!(
                "dataset '{}' has features outside [{lo}, {hi}]",
                self.name
            )));
        }
        for &l in &self.labels {
            if l >= self.classes {
                return Err(Error::InvalidLabel {
                    index: l,
                    classes: self.classes,
                });
            }
        }
        Ok(())
    }

    /// The first `n` examples (dataset order), for metrics subsets.
    pub fn head(&self, n: usize) -> Result<Dataset> {
        let n = n.min(self.len());
        let rows: Vec<Vec<f64>> = (0..n).map(|i| self.features.row(i).to_vec()).collect();
        Ok(Dataset {
            features: Tensor::from_rows(&rows)?,
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
            name: format!("{}[..{}]", self.name, n),
            input_box: self.input_box,
            image_dims: self.image_dims,
        })
    }
}

/// Two interleaved half-circle arcs with Gaussian noise; balanced classes
/// (any odd remainder goes to class 0). Arc parameters are evenly spaced, so
/// with zero noise the first class-0 point is exactly (1, 0).
pub fn gen_two_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidConfig("two-moons needs n >= 1".into()));
    }
    if !noise.is_finite() || noise < 0.0 {
        return Err(Error::InvalidConfig(format!("noise must be >= 0, got {noise}")));
    }
    let n_out = n - n / 2;
    let n_in = n / 2;
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut stream = rng::stream(seed, &[purpose::DATA_GEN, n as u64]);

    let arc = |count: usize, k: usize| {
        if count <= 1 {
            0.0
        } else {
            PI * k as f64 / (count - 1) as f64
        }
    };
    for k in 0..n_out {
        let t = arc(n_out, k);
        let mut x = t.cos();
        let mut y = t.sin();
        if noise > 0.0 {
            let (gx, gy): (f64, f64) = (stream.sample(StandardNormal), stream.sample(StandardNormal));
            x += noise * gx;
            y += noise * gy;
        }
        rows.push(vec![x, y]);
        labels.push(0);
    }
    for k in 0..n_in {
        let t = arc(n_in, k);
        let mut x = 1.0 - t.cos();
        let mut y = 0.5 - t.sin();
        if noise > 0.0 {
            let (gx, gy): (f64, f64) = (stream.sample(StandardNormal), stream.sample(StandardNormal));
            x += noise * gx;
            y += noise * gy;
        }
        rows.push(vec![x, y]);
        labels.push(1);
    }
    let input_box = (-3.0, 3.0);
    let mut features = Tensor::from_rows(&rows)?;
    for v in features.data_mut() {
        *v = v.clamp(input_box.0, input_box.1);
    }
    let ds = Dataset {
        features,
        labels,
        classes: 2,
        name: "two_moons".into(),
        input_box,
        image_dims: None,
    };
    ds.validate()?;
    Ok(ds)
}

/// Isotropic Gaussian blobs, one center per class, `n` points split evenly
/// (remainder to the earliest classes).
pub fn gen_gaussian_blobs(n: usize, centers: &[Vec<f64>], sigma: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || centers.is_empty() {
        return Err(Error::InvalidConfig("blobs need n >= 1 and at least one center".into()));
    }
    let dim = centers[0].len();
    if dim == 0 || centers.iter().any(|c| c.len() != dim) {
        return Err(Error::InvalidConfig("blob centers must share a positive dimension".into()));
    }
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidConfig(format!("sigma must be >= 0, got {sigma}")));
    }
    let classes = centers.len();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (class, center) in centers.iter().enumerate() {
        let count = n / classes + usize::from(class < n % classes);
        let mut stream = rng::stream(seed, &[purpose::DATA_GEN, 0x0b10b5, class as u64]);
        for _ in 0..count {
            let row: Vec<f64> = center
                .iter()
                .map(|&c| {
                    let g: f64 = stream.sample(StandardNormal);
                    c + sigma * g
                })
                .collect();
            rows.push(row);
            labels.push(class);
        }
    }
    let input_box = (-3.0, 3.0);
    let mut features = Tensor::from_rows(&rows)?;
    for v in features.data_mut() {
        *v = v.clamp(input_box.0, input_box.1);
    }
    let ds = Dataset {
        features,
        labels,
        classes,
        name: "gaussian_blobs".into(),
        input_box,
        image_dims: None,
    };
    ds.validate()?;
    Ok(ds)
}

struct IdxReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> IdxReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn read_u32_be(&mut self) -> Result<u32> {
        if self.pos + 4 > self.bytes.len() {
            return Err(Error::IdxTruncated {
                needed: self.pos + 4,
                available: self.bytes.len(),
            });
        }
        let v = u32::from_be_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v)
    }

    fn read_payload(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.pos + len > self.bytes.len() {
            return Err(Error::IdxTruncated {
                needed: self.pos + len,
                available: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }
}

fn parse_idx_images(bytes: &[u8]) -> Result<(Vec<u8>, u32, u32, u32)> {
    let mut r = IdxReader::new(bytes);
    let magic = r.read_u32_be()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::IdxBadMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = r.read_u32_be()?;
    let rows = r.read_u32_be()?;
    let cols = r.read_u32_be()?;
    let payload = r.read_payload(count as usize * rows as usize * cols as usize)?;
    Ok((payload.to_vec(), count, rows, cols))
}

fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = IdxReader::new(bytes);
    let magic = r.read_u32_be()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::IdxBadMagic {
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let count = r.read_u32_be()?;
    Ok(r.read_payload(count as usize)?.to_vec())
}

/// Load an image/label file pair, scaling pixels to [0, 1] and keeping at
/// most `limit` examples (0 means no limit).
pub fn load_idx(path_images: &Path, path_labels: &Path, limit: usize) -> Result<Dataset> {
    let (pixels, count, rows, cols) = parse_idx_images(&fs::read(path_images)?)?;
    let labels_raw = parse_idx_labels(&fs::read(path_labels)?)?;
    if count as usize != labels_raw.len() {
        return Err(Error::IdxCountMismatch {
            images: count as usize,
            labels: labels_raw.len(),
        });
    }
    let keep = if limit == 0 {
        count as usize
    } else {
        limit.min(count as usize)
    };
    let px = rows as usize * cols as usize;
    let features: Vec<f64> = pixels[..keep * px].iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = labels_raw[..keep].iter().map(|&b| b as usize).collect();
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let ds = Dataset {
        features: Tensor::from_vec(vec![keep, px], features)?,
        labels,
        classes: classes.max(2),
        name: "idx".into(),
        input_box: (0.0, 1.0),
        image_dims: Some((rows, cols)),
    };
    ds.validate()?;
    Ok(ds)
}

/// Re-encode a loaded dataset as an IDX image file (u8 pixels recovered from
/// the [0, 1] floats by rounding).
pub fn encode_idx_images(ds: &Dataset) -> Result<Vec<u8>> {
    let (rows, cols) = ds.image_dims.ok_or_else(|| {
        Error::InvalidConfig("dataset has no image dimensions to encode".into())
    })?;
    let mut out = Vec::with_capacity(16 + ds.features.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    out.extend_from_slice(&rows.to_be_bytes());
    out.extend_from_slice(&cols.to_be_bytes());
    for &v in ds.features.data() {
        out.push((v * 255.0).round() as u8);
    }
    Ok(out)
}

/// Re-encode labels as an IDX label file.
pub fn encode_idx_labels(ds: &Dataset) -> Result<Vec<u8>> {
    if ds.labels.iter().any(|&l| l > u8::MAX as usize) {
        return Err(Error::InvalidConfig("labels exceed the u8 range".into()));
    }
    let mut out = Vec::with_capacity(8 + ds.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    out.extend(ds.labels.iter().map(|&l| l as u8));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_moons_is_balanced_and_deterministic() {
        let a = gen_two_moons(1000, 0.15, 7).unwrap();
        assert_eq!(a.labels.iter().filter(|&&l| l == 0).count(), 500);
        assert_eq!(a.labels.iter().filter(|&&l| l == 1).count(), 500);
        let b = gen_two_moons(1000, 0.15, 7).unwrap();
        assert_eq!(a, b);
        let c = gen_two_moons(1000, 0.15, 8).unwrap();
        assert_ne!(a.features.data(), c.features.data());
    }

    #[test]
    fn two_moons_noiseless_first_point() {
        let ds = gen_two_moons(10, 0.0, 0).unwrap();
        assert_eq!(ds.features.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn two_moons_features_in_box() {
        let ds = gen_two_moons(500, 0.3, 3).unwrap();
        ds.validate().unwrap();
    }

    #[test]
    fn blobs_separable_when_tight() {
        let centers = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        let ds = gen_gaussian_blobs(100, &centers, 0.01, 5).unwrap();
        for i in 0..ds.len() {
            let x = ds.features.row(i)[0];
            if ds.labels[i] == 0 {
                assert!(x > 0.0);
            } else {
                assert!(x < 0.0);
            }
        }
    }

    #[test]
    fn blobs_deterministic_and_counted() {
        let centers = vec![vec![0.5], vec![-0.5], vec![0.0]];
        let a = gen_gaussian_blobs(4, &centers, 0.1, 9).unwrap();
        let b = gen_gaussian_blobs(4, &centers, 0.1, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        // remainder goes to the earliest classes
        assert_eq!(a.labels, vec![0, 0, 1, 2]);
    }

    #[test]
    fn blob_means_match_centers_within_clt_band() {
        let centers = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        let sigma = 0.2;
        let n = 2000;
        let ds = gen_gaussian_blobs(n, &centers, sigma, 11).unwrap();
        let band = 3.0 * sigma / ((n / 2) as f64).sqrt();
        for class in 0..2 {
            let mut mean = vec![0.0; 2];
            let mut count = 0;
            for i in 0..ds.len() {
                if ds.labels[i] == class {
                    for (m, v) in mean.iter_mut().zip(ds.features.row(i)) {
                        *m += v;
                    }
                    count += 1;
                }
            }
            for (m, c) in mean.iter().zip(&centers[class]) {
                assert!((m / count as f64 - c).abs() <= band);
            }
        }
    }

    fn fixture_pair(dir: &Path, n: u32, rows: u32, cols: u32) -> (std::path::PathBuf, std::path::PathBuf) {
        let mut images = Vec::new();
        images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        images.extend_from_slice(&n.to_be_bytes());
        images.extend_from_slice(&rows.to_be_bytes());
        images.extend_from_slice(&cols.to_be_bytes());
        // deterministic pseudo-pixels
        let mut state = 0x12345678u32;
        for _ in 0..(n * rows * cols) {
            state = state.wrapping_mul(1664525).wrapping_add(1013904223);
            images.push((state >> 24) as u8);
        }
        let mut labels = Vec::new();
        labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        labels.extend_from_slice(&n.to_be_bytes());
        for i in 0..n {
            labels.push((i % 10) as u8);
        }
        let pi = dir.join("images.idx");
        let pl = dir.join("labels.idx");
        fs::write(&pi, images).unwrap();
        fs::write(&pl, labels).unwrap();
        (pi, pl)
    }

    #[test]
    fn idx_roundtrip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (pi, pl) = fixture_pair(dir.path(), 50, 28, 28);
        let ds = load_idx(&pi, &pl, 0).unwrap();
        assert_eq!(ds.len(), 50);
        assert_eq!(ds.dim(), 784);
        assert_eq!(ds.image_dims, Some((28, 28)));
        assert_eq!(encode_idx_images(&ds).unwrap(), fs::read(&pi).unwrap());
        assert_eq!(encode_idx_labels(&ds).unwrap(), fs::read(&pl).unwrap());
    }

    #[test]
    fn idx_limit_caps_examples() {
        let dir = tempfile::tempdir().unwrap();
        let (pi, pl) = fixture_pair(dir.path(), 50, 4, 4);
        let ds = load_idx(&pi, &pl, 10).unwrap();
        assert_eq!(ds.len(), 10);
    }

    #[test]
    fn idx_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let (pi, pl) = fixture_pair(dir.path(), 5, 2, 2);
        let mut broken = fs::read(&pi).unwrap();
        broken[3] = 0x42;
        let pb = dir.path().join("broken.idx");
        fs::write(&pb, broken).unwrap();
        assert!(matches!(
            load_idx(&pb, &pl, 0),
            Err(Error::IdxBadMagic { found: 0x0000_0842, .. })
        ));
    }

    #[test]
    fn idx_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let (pi, pl) = fixture_pair(dir.path(), 5, 2, 2);
        let full = fs::read(&pi).unwrap();
        let pb = dir.path().join("short.idx");
        fs::write(&pb, &full[..full.len() - 3]).unwrap();
        assert!(matches!(load_idx(&pb, &pl, 0), Err(Error::IdxTruncated { .. })));
    }

    #[test]
    fn idx_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (pi, _) = fixture_pair(dir.path(), 5, 2, 2);
        let mut labels = Vec::new();
        labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        labels.extend_from_slice(&3u32.to_be_bytes());
        labels.extend_from_slice(&[0, 1, 2]);
        let pl = dir.path().join("labels3.idx");
        fs::write(&pl, labels).unwrap();
        assert!(matches!(
            load_idx(&pi, &pl, 0),
            Err(Error::IdxCountMismatch { images: 5, labels: 3 })
        ));
    }
}
