//! Datasets: synthetic long-tail generators, long-tail subsampling of
//! multi-class pools, MNIST IDX and CIFAR-10 binary readers, and the
//! `ADSET1` on-disk format.

use std::fs;
use std::path::Path;

use crate::io::write_atomic;
use crate::linalg::Matrix;
use crate::rng::Prng;
use crate::{Error, Result};

/// Binary dataset with features in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<u8>,
    p: f64,
    name: String,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<u8>, name: impl Into<String>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape {
                context: "dataset labels",
                expected: features.rows(),
                got: labels.len(),
            });
        }
        if let Some(&y) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::BadLabel(y));
        }
        if let Some(v) = features
            .as_slice()
            .iter()
            .find(|v| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidArgument(format!(
                "feature value {v} outside [0, 1]"
            )));
        }
        let p = if labels.is_empty() {
            0.0
        } else {
            labels.iter().map(|&y| y as usize).sum::<usize>() as f64 / labels.len() as f64
        };
        Ok(Self {
            features,
            labels,
            p,
            name: name.into(),
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Fraction of positive labels.
    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn n_pos(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn n_neg(&self) -> usize {
        self.len() - self.n_pos()
    }

    /// Same labels, new features (e.g. an attacked copy).
    pub fn with_features(&self, features: Matrix, name: impl Into<String>) -> Result<Self> {
        Dataset::new(features, self.labels.clone(), name)
    }

    pub fn subset(&self, idx: &[usize], name: impl Into<String>) -> Result<Self> {
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(self.features.select_rows(idx), labels, name)
    }

    /// First `n_first` rows and the remainder.
    pub fn split_at(&self, n_first: usize) -> Result<(Self, Self)> {
        if n_first > self.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot split {} rows at {n_first}",
                self.len()
            )));
        }
        let head: Vec<usize> = (0..n_first).collect();
        let tail: Vec<usize> = (n_first..self.len()).collect();
        Ok((
            self.subset(&head, format!("{}-train", self.name))?,
            self.subset(&tail, format!("{}-test", self.name))?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongTailSpec {
    pub n_classes: usize,
    pub n_max: usize,
    /// Least-to-most frequent class size ratio.
    pub imbalance: f64,
    pub positive_class_ids: Vec<usize>,
}

impl LongTailSpec {
    /// Ten classes, imbalance 0.01, the last five classes positive.
    pub fn ten_class(n_max: usize) -> Self {
        Self {
            n_classes: 10,
            n_max,
            imbalance: 0.01,
            positive_class_ids: (5..10).collect(),
        }
    }
}

/// `size_c = round(n_max · imbalance^(c / (n_classes − 1)))`.
pub fn longtail_class_sizes(spec: &LongTailSpec) -> Result<Vec<usize>> {
    if spec.n_classes < 2 {
        return Err(Error::InvalidArgument("need at least two classes".into()));
    }
    if !(spec.imbalance > 0.0 && spec.imbalance <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "imbalance must lie in (0, 1], got {}",
            spec.imbalance
        )));
    }
    let last = (spec.n_classes - 1) as f64;
    Ok((0..spec.n_classes)
        .map(|c| (spec.n_max as f64 * spec.imbalance.powf(c as f64 / last)).round() as usize)
        .collect())
}

/// Positive count, negative count and `ρ = n⁺ / n⁻` after binarization.
pub fn binarize_longtail(
    class_sizes: &[usize],
    positive_class_ids: &[usize],
) -> Result<(usize, usize, f64)> {
    if let Some(&c) = positive_class_ids.iter().find(|&&c| c >= class_sizes.len()) {
        return Err(Error::InvalidArgument(format!("class id {c} out of range")));
    }
    let mut n_pos = 0;
    let mut n_neg = 0;
    for (c, &size) in class_sizes.iter().enumerate() {
        if positive_class_ids.contains(&c) {
            n_pos += size;
        } else {
            n_neg += size;
        }
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument(
            "binarization leaves one side empty".into(),
        ));
    }
    Ok((n_pos, n_neg, n_pos as f64 / n_neg as f64))
}

/// Two isotropic unit-variance Gaussian clusters whose means differ by
/// `separation` along a random unit direction. Roughly a fraction `rho` of
/// the points are positive. All coordinates share one affine map onto
/// `[0, 1]`, so the geometry of the clusters is preserved.
pub fn gen_synthetic_longtail(
    seed: u64,
    n: usize,
    d: usize,
    rho: f64,
    separation: f64,
) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need n >= 2, got {n}")));
    }
    if d < 2 {
        return Err(Error::InvalidArgument(format!("need d >= 2, got {d}")));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "rho must lie in (0,1), got {rho}"
        )));
    }
    let mut rng = Prng::new(seed);
    let direction = rng.unit_vector(d);
    let mut raw = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = (rng.uniform(0.0, 1.0) < rho) as u8;
        let shift = if y == 1 {
            separation / 2.0
        } else {
            -separation / 2.0
        };
        for u in &direction {
            raw.push(rng.normal(0.0, 1.0) + shift * u);
        }
        labels.push(y);
    }
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let scaled = raw
        .into_iter()
        .map(|v| ((v - lo) / span).clamp(0.0, 1.0))
        .collect();
    Dataset::new(
        Matrix::from_vec(n, d, scaled)?,
        labels,
        format!("synthetic-s{seed}"),
    )
}

/// Class-indexed image pool with raw 8-bit pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPool {
    pub dim: usize,
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl RawPool {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn row(&self, i: usize) -> &[u8] {
        &self.pixels[i * self.dim..(i + 1) * self.dim]
    }

    fn indices_by_class(&self, n_classes: usize) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); n_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            if (y as usize) < n_classes {
                by_class[y as usize].push(i);
            }
        }
        by_class
    }

    fn materialize(&self, idx: &[usize], positive: &[usize], name: String) -> Result<Dataset> {
        let mut feats = Vec::with_capacity(idx.len() * self.dim);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            feats.extend(self.row(i).iter().map(|&b| b as f64 / 255.0));
            labels.push(positive.contains(&(self.labels[i] as usize)) as u8);
        }
        Dataset::new(Matrix::from_vec(idx.len(), self.dim, feats)?, labels, name)
    }

    /// Whole pool binarized by class membership, in file order.
    pub fn binarize(
        &self,
        positive_class_ids: &[usize],
        name: impl Into<String>,
    ) -> Result<Dataset> {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.materialize(&idx, positive_class_ids, name.into())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize, what: &'static str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::format(what, "truncated header"))
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

/// Parses an IDX image file and its label file.
pub fn parse_mnist_idx(images: &[u8], labels: &[u8]) -> Result<RawPool> {
    let magic = be_u32(images, 0, "IDX images")?;
    if magic != IDX_IMAGES {
        return Err(Error::format(
            "IDX images",
            format!("bad magic {magic:#010x}"),
        ));
    }
    let n = be_u32(images, 4, "IDX images")? as usize;
    let rows = be_u32(images, 8, "IDX images")? as usize;
    let cols = be_u32(images, 12, "IDX images")? as usize;
    let dim = rows * cols;
    let body = &images[16..];
    if body.len() != n * dim {
        return Err(Error::format(
            "IDX images",
            format!("expected {} pixel bytes, found {}", n * dim, body.len()),
        ));
    }

    let magic = be_u32(labels, 0, "IDX labels")?;
    if magic != IDX_LABELS {
        return Err(Error::format(
            "IDX labels",
            format!("bad magic {magic:#010x}"),
        ));
    }
    let n_labels = be_u32(labels, 4, "IDX labels")? as usize;
    let label_body = &labels[8..];
    if n_labels != n || label_body.len() != n {
        return Err(Error::format(
            "IDX labels",
            format!(
                "expected {n} labels, header says {n_labels}, found {}",
                label_body.len()
            ),
        ));
    }
    Ok(RawPool {
        dim,
        pixels: body.to_vec(),
        labels: label_body.to_vec(),
    })
}

pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<RawPool> {
    parse_mnist_idx(&read_file(images_path)?, &read_file(labels_path)?)
}

pub fn encode_mnist_idx(pool: &RawPool, rows: usize, cols: usize) -> (Vec<u8>, Vec<u8>) {
    let mut images = Vec::with_capacity(16 + pool.pixels.len());
    images.extend(IDX_IMAGES.to_be_bytes());
    images.extend((pool.len() as u32).to_be_bytes());
    images.extend((rows as u32).to_be_bytes());
    images.extend((cols as u32).to_be_bytes());
    images.extend(&pool.pixels);
    let mut labels = Vec::with_capacity(8 + pool.len());
    labels.extend(IDX_LABELS.to_be_bytes());
    labels.extend((pool.len() as u32).to_be_bytes());
    labels.extend(&pool.labels);
    (images, labels)
}

pub const CIFAR_RECORD: usize = 3073;

/// Parses CIFAR-10 binary batches: 1 label byte followed by 3072 pixels.
pub fn parse_cifar10_bin(bytes: &[u8]) -> Result<RawPool> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::format(
            "CIFAR-10 batch",
            format!("length {} is not a multiple of {CIFAR_RECORD}", bytes.len()),
        ));
    }
    let mut pool = RawPool {
        dim: CIFAR_RECORD - 1,
        pixels: Vec::with_capacity(bytes.len()),
        labels: Vec::with_capacity(bytes.len() / CIFAR_RECORD),
    };
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        if rec[0] > 9 {
            return Err(Error::format(
                "CIFAR-10 batch",
                format!("label {} > 9", rec[0]),
            ));
        }
        pool.labels.push(rec[0]);
        pool.pixels.extend_from_slice(&rec[1..]);
    }
    Ok(pool)
}

pub fn load_cifar10_bin(path: &Path) -> Result<RawPool> {
    parse_cifar10_bin(&read_file(path)?)
}

/// Concatenates several pools with equal dimension.
pub fn merge_pools(pools: Vec<RawPool>) -> Result<RawPool> {
    let mut iter = pools.into_iter();
    let mut out = match iter.next() {
        Some(p) => p,
        None => return Err(Error::InvalidArgument("no pools to merge".into())),
    };
    for p in iter {
        if p.dim != out.dim {
            return Err(Error::Shape {
                context: "merge_pools",
                expected: out.dim,
                got: p.dim,
            });
        }
        out.pixels.extend(p.pixels);
        out.labels.extend(p.labels);
    }
    Ok(out)
}

/// Per-class uniform subsample without replacement down to the long-tail
/// class sizes, binarized by `spec.positive_class_ids` and shuffled.
pub fn subsample_longtail(pool: &RawPool, spec: &LongTailSpec, seed: u64) -> Result<Dataset> {
    let sizes = longtail_class_sizes(spec)?;
    binarize_longtail(&sizes, &spec.positive_class_ids)?;
    let by_class = pool.indices_by_class(spec.n_classes);
    let mut rng = Prng::new(seed);
    let mut chosen = Vec::with_capacity(sizes.iter().sum());
    for (c, (&need, idx)) in sizes.iter().zip(&by_class).enumerate() {
        if idx.len() < need {
            return Err(Error::InsufficientPool {
                class: c,
                have: idx.len(),
                need,
            });
        }
        let mut idx = idx.clone();
        rng.shuffle(&mut idx);
        chosen.extend_from_slice(&idx[..need]);
    }
    rng.shuffle(&mut chosen);
    pool.materialize(
        &chosen,
        &spec.positive_class_ids,
        format!("longtail-{}-s{seed}", spec.imbalance),
    )
}

const ADSET_MAGIC: &[u8; 6] = b"ADSET1";
const ADSET_HEADER: usize = 6 + 8 + 8 + 8;

/// `ADSET1` | n: u64 | d: u64 | p: f64 | n·d f64 features | n label bytes,
/// all little-endian.
pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let (n, d) = (ds.len(), ds.dim());
    let mut out = Vec::with_capacity(ADSET_HEADER + n * d * 8 + n);
    out.extend(ADSET_MAGIC);
    out.extend((n as u64).to_le_bytes());
    out.extend((d as u64).to_le_bytes());
    out.extend(ds.p().to_le_bytes());
    for v in ds.features().as_slice() {
        out.extend(v.to_le_bytes());
    }
    out.extend(ds.labels());
    out
}

pub fn decode_dataset(bytes: &[u8], name: impl Into<String>) -> Result<Dataset> {
    if bytes.len() < ADSET_HEADER || &bytes[..6] != ADSET_MAGIC {
        return Err(Error::format("dataset file", "missing ADSET1 header"));
    }
    let n = u64::from_le_bytes(bytes[6..14].try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(bytes[14..22].try_into().unwrap()) as usize;
    let p = f64::from_le_bytes(bytes[22..30].try_into().unwrap());
    let expected = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(8))
        .and_then(|b| b.checked_add(ADSET_HEADER + n))
        .ok_or_else(|| Error::format("dataset file", "header sizes overflow"))?;
    if bytes.len() != expected {
        return Err(Error::format(
            "dataset file",
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let feats = bytes[ADSET_HEADER..ADSET_HEADER + n * d * 8]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let labels = bytes[ADSET_HEADER + n * d * 8..].to_vec();
    let ds = Dataset::new(Matrix::from_vec(n, d, feats)?, labels, name)?;
    if ds.p().to_bits() != p.to_bits() {
        return Err(Error::format(
            "dataset file",
            format!("header p {p} disagrees with label mean {}", ds.p()),
        ));
    }
    Ok(ds)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    write_atomic(path, &encode_dataset(ds))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_dataset(&read_file(path)?, name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_size_examples() {
        let flat = LongTailSpec {
            n_classes: 4,
            n_max: 100,
            imbalance: 1.0,
            positive_class_ids: vec![2, 3],
        };
        assert_eq!(longtail_class_sizes(&flat).unwrap(), vec![100; 4]);

        let sizes = longtail_class_sizes(&LongTailSpec::ten_class(5000)).unwrap();
        // 5000 · 0.01^(9/9)
        assert_eq!(sizes[0], 5000);
        assert_eq!(sizes[9], 50);
        assert!(sizes.windows(2).all(|w| w[0] >= w[1]));
        // independent evaluation of the decay formula
        for (c, &s) in sizes.iter().enumerate() {
            let expected = (5000.0 * (0.01f64.ln() * c as f64 / 9.0).exp()).round() as usize;
            assert_eq!(s, expected);
        }
        assert!(longtail_class_sizes(&LongTailSpec {
            n_classes: 1,
            ..flat.clone()
        })
        .is_err());
    }

    #[test]
    fn binarize_examples() {
        let (p, n, rho) = binarize_longtail(&[10, 20, 30, 40], &[0, 1, 2]).unwrap();
        assert_eq!((p, n), (60, 40));
        assert_eq!(rho, 1.5);
        let (_, _, rho) = binarize_longtail(&[7; 10], &[5, 6, 7, 8, 9]).unwrap();
        assert_eq!(rho, 1.0);
        assert!(binarize_longtail(&[5, 5], &[]).is_err());
        assert!(binarize_longtail(&[5, 5], &[0, 1]).is_err());
    }

    #[test]
    fn synthetic_positive_fraction_concentrates() {
        let n = 4000;
        let ds = gen_synthetic_longtail(3, n, 5, 0.1, 2.0).unwrap();
        assert!((ds.p() - 0.1).abs() <= 2.0 / (n as f64).sqrt());
        assert_eq!(ds, gen_synthetic_longtail(3, n, 5, 0.1, 2.0).unwrap());
        assert!(ds
            .features()
            .as_slice()
            .iter()
            .all(|v| (0.0..=1.0).contains(v)));
        assert!(gen_synthetic_longtail(3, n, 1, 0.1, 2.0).is_err());
        assert!(gen_synthetic_longtail(3, 1, 4, 0.1, 2.0).is_err());
    }

    #[test]
    fn idx_examples() {
        let pool = RawPool {
            dim: 4,
            pixels: vec![0, 255, 0, 255, 255, 0, 51, 0],
            labels: vec![3, 7],
        };
        let (img, lab) = encode_mnist_idx(&pool, 2, 2);
        assert_eq!(&img[..4], &[0, 0, 8, 3]);
        let back = parse_mnist_idx(&img, &lab).unwrap();
        assert_eq!(back, pool);
        let ds = back.binarize(&[7], "t").unwrap();
        assert_eq!(ds.features().row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(ds.features().row(1)[2], 0.2);
        assert_eq!(ds.labels(), &[0, 1]);

        let mut bad = img.clone();
        bad[3] = 0x04;
        assert!(matches!(
            parse_mnist_idx(&bad, &lab),
            Err(Error::Format { .. })
        ));
        assert!(parse_mnist_idx(&img[..img.len() - 1], &lab).is_err());
        assert!(parse_mnist_idx(&img, &lab[..lab.len() - 1]).is_err());
    }

    #[test]
    fn cifar_examples() {
        let mut rec = vec![3u8];
        rec.extend((0..3072).map(|i| (i % 256) as u8));
        let pool = parse_cifar10_bin(&rec).unwrap();
        assert_eq!(pool.labels, vec![3]);
        assert_eq!(pool.pixels, rec[1..].to_vec());
        assert!(parse_cifar10_bin(&[]).unwrap().is_empty());
        assert!(parse_cifar10_bin(&rec[..100]).is_err());
    }

    fn tiny_pool(per_class: usize) -> RawPool {
        let mut pool = RawPool {
            dim: 2,
            pixels: Vec::new(),
            labels: Vec::new(),
        };
        for c in 0..10u8 {
            for i in 0..per_class {
                pool.pixels.extend([c * 10, (i % 256) as u8]);
                pool.labels.push(c);
            }
        }
        pool
    }

    #[test]
    fn subsample_examples() {
        let pool = tiny_pool(40);
        let balanced = LongTailSpec {
            imbalance: 1.0,
            ..LongTailSpec::ten_class(40)
        };
        let ds = subsample_longtail(&pool, &balanced, 1).unwrap();
        assert_eq!(ds.len(), 400);
        assert_eq!(ds.n_pos(), 200);

        let lt = LongTailSpec::ten_class(40);
        let a = subsample_longtail(&pool, &lt, 5).unwrap();
        let b = subsample_longtail(&pool, &lt, 5).unwrap();
        assert_eq!(a, b);
        let sizes = longtail_class_sizes(&lt).unwrap();
        assert_eq!(a.len(), sizes.iter().sum::<usize>());
        assert_eq!(a.n_pos(), sizes[5..].iter().sum::<usize>());

        let small = tiny_pool(10);
        assert!(matches!(
            subsample_longtail(&small, &lt, 5),
            Err(Error::InsufficientPool { class: 0, .. })
        ));
    }

    #[test]
    fn dataset_file_round_trip() {
        let ds = gen_synthetic_longtail(9, 50, 3, 0.3, 1.0).unwrap();
        let bytes = encode_dataset(&ds);
        let back = decode_dataset(&bytes, ds.name()).unwrap();
        assert_eq!(back, ds);
        for (a, b) in back
            .features()
            .as_slice()
            .iter()
            .zip(ds.features().as_slice())
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let header_p = f64::from_le_bytes(bytes[22..30].try_into().unwrap());
        let recomputed = ds.labels().iter().map(|&y| y as f64).sum::<f64>() / 50.0;
        assert_eq!(header_p, recomputed);

        assert!(decode_dataset(&bytes[..bytes.len() - 3], "x").is_err());
        assert!(decode_dataset(&bytes[..10], "x").is_err());
        let mut corrupt = bytes.clone();
        corrupt[0] = b'X';
        assert!(decode_dataset(&corrupt, "x").is_err());
    }

    #[test]
    fn dataset_invariants_enforced() {
        let m = Matrix::from_vec(2, 1, vec![0.5, 1.5]).unwrap();
        assert!(Dataset::new(m, vec![0, 1], "x").is_err());
        let m = Matrix::from_vec(2, 1, vec![0.5, 0.5]).unwrap();
        assert!(Dataset::new(m.clone(), vec![0, 2], "x").is_err());
        assert!(Dataset::new(m, vec![0], "x").is_err());
    }
}
