//! Datasets: IDX image files, synthetic manifold samples, block downscaling.

use std::fs;
use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ReadBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::Vector;

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;

/// A finite sample of points in `R^d`, with optional labels and per-feature
/// bounds that contain every point.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    points: Vec<Vector>,
    labels: Option<Vec<usize>>,
    bounds: Vec<(f64, f64)>,
    image_side: Option<usize>,
}

impl Dataset {
    /// Builds a dataset. Without explicit `bounds` the empirical per-feature
    /// min/max is used.
    pub fn new(
        name: impl Into<String>,
        points: Vec<Vector>,
        labels: Option<Vec<usize>>,
        bounds: Option<Vec<(f64, f64)>>,
    ) -> Result<Self> {
        let d = points.first().map_or(0, |p| p.len());
        for p in &points {
            check_dim(d, p.len())?;
            if !p.is_finite() {
                return Err(Error::InvalidArgument("non-finite data point".into()));
            }
        }
        if let Some(l) = &labels {
            if l.len() != points.len() {
                return Err(Error::CountMismatch {
                    images: points.len(),
                    labels: l.len(),
                });
            }
        }
        let bounds = match bounds {
            Some(b) => {
                check_dim(d, b.len())?;
                for (i, (lo, hi)) in b.iter().enumerate() {
                    if !(lo <= hi) {
                        return Err(Error::InvalidBounds {
                            feature: i,
                            min: *lo,
                            max: *hi,
                        });
                    }
                    if points.iter().any(|p| p[i] < *lo || p[i] > *hi) {
                        return Err(Error::InvalidArgument(format!(
                            "feature {i} has values outside [{lo}, {hi}]"
                        )));
                    }
                }
                b
            }
            None => empirical_bounds(&points, d),
        };
        Ok(Dataset {
            name: name.into(),
            points,
            labels,
            bounds,
            image_side: None,
        })
    }

    /// Marks points as `side × side` row-major images.
    pub fn with_image_side(mut self, side: usize) -> Result<Self> {
        check_dim(side * side, self.dim())?;
        self.image_side = Some(side);
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn points(&self) -> &[Vector] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &Vector {
        &self.points[i]
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn image_side(&self) -> Option<usize> {
        self.image_side
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.len())
    }

    /// Sub-dataset holding the given indices, bounds unchanged.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            points: indices.iter().map(|&i| self.points[i].clone()).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            bounds: self.bounds.clone(),
            image_side: self.image_side,
        }
    }
}

fn empirical_bounds(points: &[Vector], d: usize) -> Vec<(f64, f64)> {
    (0..d)
        .map(|i| {
            points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p[i]), hi.max(p[i]))
            })
        })
        .collect()
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

fn truncated(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |_| Error::TruncatedFile(path.display().to_string())
}

/// Raw IDX image payload: `count` images of `rows × cols` bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<Vec<u8>>,
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    let bytes = read_file(path)?;
    let mut cur = Cursor::new(bytes.as_slice());
    let magic = cur.read_u32::<BigEndian>().map_err(truncated(path))?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = cur.read_u32::<BigEndian>().map_err(truncated(path))? as usize;
    let rows = cur.read_u32::<BigEndian>().map_err(truncated(path))? as usize;
    let cols = cur.read_u32::<BigEndian>().map_err(truncated(path))? as usize;
    let size = rows * cols;
    let payload = &bytes[16..];
    if payload.len() < count * size {
        return Err(Error::TruncatedFile(path.display().to_string()));
    }
    let pixels = payload[..count * size]
        .chunks(size.max(1))
        .take(count)
        .map(<[u8]>::to_vec)
        .collect();
    Ok(IdxImages { rows, cols, pixels })
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_file(path)?;
    let mut cur = Cursor::new(bytes.as_slice());
    let magic = cur.read_u32::<BigEndian>().map_err(truncated(path))?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let count = cur.read_u32::<BigEndian>().map_err(truncated(path))? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(Error::TruncatedFile(path.display().to_string()));
    }
    Ok(payload[..count].to_vec())
}

/// Loads IDX images (and optionally labels), scaling pixels by `1/255`.
/// Bounds are `[0, 1]` for every feature.
pub fn load_idx(images_path: &Path, labels_path: Option<&Path>) -> Result<Dataset> {
    let images = read_idx_images(images_path)?;
    let labels = match labels_path {
        Some(p) => {
            let l = read_idx_labels(p)?;
            if l.len() != images.pixels.len() {
                return Err(Error::CountMismatch {
                    images: images.pixels.len(),
                    labels: l.len(),
                });
            }
            Some(l.into_iter().map(usize::from).collect())
        }
        None => None,
    };
    let d = images.rows * images.cols;
    let points = images
        .pixels
        .iter()
        .map(|px| px.iter().map(|&b| f64::from(b) / 255.0).collect())
        .collect();
    let name = images_path
        .file_name()
        .map_or_else(|| "idx".to_string(), |n| n.to_string_lossy().into_owned());
    let ds = Dataset::new(name, points, labels, Some(vec![(0.0, 1.0); d]))?;
    if images.rows == images.cols {
        ds.with_image_side(images.rows)
    } else {
        Ok(ds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Points in the span of the first `intrinsic` axes.
    Subspace,
    /// Uniform on the unit sphere in the first `intrinsic + 1` axes.
    Sphere,
    /// `classes` Gaussian clusters with centres in the first `intrinsic` axes.
    GaussianBlobs { classes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(flatten)]
    pub kind: SyntheticKind,
    pub dim: usize,
    pub intrinsic: usize,
    pub count: usize,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Samples a synthetic dataset. Ambient noise `N(0, noise²)` is added to
/// every coordinate; with `noise = 0` the points lie exactly on the manifold.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let SyntheticSpec {
        kind,
        dim,
        intrinsic,
        count,
        noise,
        seed,
    } = *spec;
    if intrinsic == 0 || intrinsic >= dim {
        return Err(Error::InvalidSpec(format!(
            "intrinsic dimension {intrinsic} must be in 1..{dim}"
        )));
    }
    if count == 0 || !(noise >= 0.0) {
        return Err(Error::InvalidSpec("count >= 1 and noise >= 0 required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = move |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let mut labels = None;
    let mut points: Vec<Vector> = match kind {
        SyntheticKind::Subspace => (0..count)
            .map(|_| {
                let mut p = Vector::zeros(dim);
                for v in p.iter_mut().take(intrinsic) {
                    *v = normal(&mut rng);
                }
                p
            })
            .collect(),
        SyntheticKind::Sphere => (0..count)
            .map(|_| {
                let mut p = Vector::zeros(dim);
                loop {
                    for v in p.iter_mut().take(intrinsic + 1) {
                        *v = normal(&mut rng);
                    }
                    let n = p.norm();
                    if n > 1e-12 {
                        return p.scaled(1.0 / n);
                    }
                }
            })
            .collect(),
        SyntheticKind::GaussianBlobs { classes } => {
            if classes == 0 {
                return Err(Error::InvalidSpec("blobs need at least one class".into()));
            }
            let centres: Vec<Vector> = (0..classes)
                .map(|_| {
                    let mut c = Vector::zeros(dim);
                    for v in c.iter_mut().take(intrinsic) {
                        *v = 3.0 * normal(&mut rng);
                    }
                    c
                })
                .collect();
            let mut l = Vec::with_capacity(count);
            let pts = (0..count)
                .map(|i| {
                    let class = i % classes;
                    l.push(class);
                    let mut p = centres[class].clone();
                    for v in p.iter_mut().take(intrinsic) {
                        *v += normal(&mut rng);
                    }
                    p
                })
                .collect();
            labels = Some(l);
            pts
        }
    };
    if noise > 0.0 {
        for p in &mut points {
            for v in p.iter_mut() {
                *v += noise * normal(&mut rng);
            }
        }
    }
    let name = match kind {
        SyntheticKind::Subspace => "synthetic-subspace",
        SyntheticKind::Sphere => "synthetic-sphere",
        SyntheticKind::GaussianBlobs { .. } => "synthetic-blobs",
    };
    Dataset::new(name, points, labels, None)
}

/// Block-average pooling of square images by `factor` in each direction.
pub fn downscale(ds: &Dataset, factor: usize) -> Result<Dataset> {
    let side = match ds.image_side() {
        Some(s) => s,
        None => {
            let s = (ds.dim() as f64).sqrt().round() as usize;
            if s * s != ds.dim() {
                return Err(Error::NotAnImage);
            }
            s
        }
    };
    if factor == 0 || side % factor != 0 {
        return Err(Error::NotDivisible { side, factor });
    }
    let out = side / factor;
    let norm = 1.0 / (factor * factor) as f64;
    let points = ds
        .points()
        .iter()
        .map(|p| {
            let mut q = Vector::zeros(out * out);
            for r in 0..side {
                for c in 0..side {
                    q[(r / factor) * out + c / factor] += p[r * side + c] * norm;
                }
            }
            q
        })
        .collect();
    let bounds = (0..out * out)
        .map(|i| {
            let (r, c) = (i / out, i % out);
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for dr in 0..factor {
                for dc in 0..factor {
                    let (l, h) = ds.bounds()[(r * factor + dr) * side + c * factor + dc];
                    lo = lo.min(l);
                    hi = hi.max(h);
                }
            }
            (lo, hi)
        })
        .collect();
    let mut down = Dataset::new(ds.name(), points, ds.labels.clone(), Some(bounds))?;
    down.image_side = Some(out);
    Ok(down)
}

/// Dataset manifest: a small TOML file naming IDX files and how to load them.
///
/// ```toml
/// name = "digits"
/// images = "digits-images-idx3-ubyte"   # relative to the manifest
/// labels = "digits-labels-idx1-ubyte"   # optional
/// d = 64                                 # after downscaling
/// bounds = [0.0, 1.0]                    # applied to every feature
/// downscale = 1                          # optional block-average factor
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub images: PathBuf,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    pub d: usize,
    #[serde(default = "unit_bounds")]
    pub bounds: [f64; 2],
    #[serde(default)]
    pub downscale: Option<usize>,
}

fn unit_bounds() -> [f64; 2] {
    [0.0, 1.0]
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Loads the dataset the manifest describes; relative paths resolve
    /// against `base_dir`.
    pub fn load(&self, base_dir: &Path) -> Result<Dataset> {
        let images = base_dir.join(&self.images);
        let labels = self.labels.as_ref().map(|l| base_dir.join(l));
        let mut ds = load_idx(&images, labels.as_deref())?;
        if let Some(f) = self.downscale.filter(|f| *f > 1) {
            ds = downscale(&ds, f)?;
        }
        check_dim(self.d, ds.dim())?;
        let [lo, hi] = self.bounds;
        let ds = Dataset {
            name: self.name.clone(),
            bounds: vec![(lo, hi); ds.dim()],
            ..ds
        };
        for (i, p) in ds.points.iter().enumerate() {
            if p.iter().any(|v| *v < lo || *v > hi) {
                return Err(Error::format(
                    &images,
                    format!("point {i} lies outside manifest bounds [{lo}, {hi}]"),
                ));
            }
        }
        Ok(ds)
    }
}

/// Draws `k` distinct indices from `0..n` (all of them when `k >= n`),
/// returned in increasing order.
pub fn sample_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    let k = k.min(n);
    for i in 0..k {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    let mut out = idx[..k].to_vec();
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixtures() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
    }

    /// Writes IDX bytes by hand, independently of the reader.
    fn idx_images_bytes(rows: u32, cols: u32, images: &[Vec<u8>]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&2051u32.to_be_bytes());
        b.extend_from_slice(&(images.len() as u32).to_be_bytes());
        b.extend_from_slice(&rows.to_be_bytes());
        b.extend_from_slice(&cols.to_be_bytes());
        for img in images {
            b.extend_from_slice(img);
        }
        b
    }

    #[test]
    fn reference_fixture_loads() {
        let dir = fixtures();
        let ds = load_idx(
            &dir.join("four-images-idx3-ubyte"),
            Some(&dir.join("four-labels-idx1-ubyte")),
        )
        .unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.dim(), 6);
        assert_eq!(ds.labels().unwrap(), &[0, 1, 2, 9]);
        assert!(ds.points().iter().flat_map(|p| p.iter()).all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(ds.point(2)[1], 51.0 / 255.0);
        // Not square, so no image side.
        assert_eq!(ds.image_side(), None);
    }

    #[test]
    fn pixel_bytes_round_trip_exactly() {
        let images = vec![vec![0u8, 7, 255, 128], vec![1, 2, 3, 4], vec![9, 8, 7, 6]];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("imgs");
        fs::write(&path, idx_images_bytes(2, 2, &images)).unwrap();
        let raw = read_idx_images(&path).unwrap();
        assert_eq!(raw.pixels, images);
        let ds = load_idx(&path, None).unwrap();
        let back: Vec<Vec<u8>> = ds
            .points()
            .iter()
            .map(|p| p.iter().map(|v| (v * 255.0).round() as u8).collect())
            .collect();
        assert_eq!(back, images);
        assert_eq!(ds.image_side(), Some(2));
    }

    #[test]
    fn labels_file_with_image_magic_is_rejected() {
        let dir = fixtures();
        let images = dir.join("four-images-idx3-ubyte");
        assert!(matches!(
            load_idx(&images, Some(&images)),
            Err(Error::BadMagic { expected: 2049, found: 2051 })
        ));
    }

    #[test]
    fn truncated_payload_is_reported() {
        let mut bytes = idx_images_bytes(2, 2, &[vec![1, 2, 3, 4], vec![5, 6, 7, 8]]);
        bytes.truncate(bytes.len() - 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short");
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_idx(&path, None), Err(Error::TruncatedFile(_))));
        fs::write(&path, [0u8, 0, 8]).unwrap();
        assert!(matches!(load_idx(&path, None), Err(Error::TruncatedFile(_))));
    }

    #[test]
    fn image_and_label_counts_must_agree() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = dir.path().join("i");
        let labels = dir.path().join("l");
        fs::write(&imgs, idx_images_bytes(1, 1, &[vec![1], vec![2]])).unwrap();
        let mut l = Vec::new();
        l.extend_from_slice(&2049u32.to_be_bytes());
        l.extend_from_slice(&3u32.to_be_bytes());
        l.extend_from_slice(&[0, 1, 2]);
        fs::write(&labels, l).unwrap();
        assert!(matches!(
            load_idx(&imgs, Some(&labels)),
            Err(Error::CountMismatch { images: 2, labels: 3 })
        ));
    }

    fn spec(kind: SyntheticKind, noise: f64) -> SyntheticSpec {
        SyntheticSpec {
            kind,
            dim: 4,
            intrinsic: 2,
            count: 50,
            noise,
            seed: 17,
        }
    }

    #[test]
    fn noiseless_subspace_has_zero_trailing_coordinates() {
        let ds = generate_synthetic(&spec(SyntheticKind::Subspace, 0.0)).unwrap();
        for p in ds.points() {
            assert_eq!(p[2], 0.0);
            assert_eq!(p[3], 0.0);
        }
    }

    #[test]
    fn noiseless_sphere_points_have_unit_norm() {
        let ds = generate_synthetic(&spec(SyntheticKind::Sphere, 0.0)).unwrap();
        for p in ds.points() {
            assert!((p[..3].iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
            assert_eq!(p[3], 0.0);
        }
    }

    #[test]
    fn synthetic_generation_is_seed_deterministic() {
        for kind in [
            SyntheticKind::Subspace,
            SyntheticKind::Sphere,
            SyntheticKind::GaussianBlobs { classes: 3 },
        ] {
            let a = generate_synthetic(&spec(kind, 0.1)).unwrap();
            let b = generate_synthetic(&spec(kind, 0.1)).unwrap();
            assert_eq!(a, b);
            for p in a.points() {
                for (v, (lo, hi)) in p.iter().zip(a.bounds()) {
                    assert!(lo <= v && v <= hi);
                }
            }
        }
    }

    #[test]
    fn invalid_synthetic_spec() {
        let mut s = spec(SyntheticKind::Subspace, 0.0);
        s.intrinsic = 4;
        assert!(matches!(generate_synthetic(&s), Err(Error::InvalidSpec(_))));
    }

    fn images(side: usize, pixels: Vec<Vec<f64>>) -> Dataset {
        Dataset::new(
            "img",
            pixels.into_iter().map(Vector::from).collect(),
            None,
            Some(vec![(0.0, 1.0); side * side]),
        )
        .unwrap()
        .with_image_side(side)
        .unwrap()
    }

    #[test]
    fn downscale_all_ones() {
        let ds = images(4, vec![vec![1.0; 16]]);
        let down = downscale(&ds, 2).unwrap();
        assert_eq!(down.point(0), &Vector::from(vec![1.0; 4]));
        assert_eq!(down.image_side(), Some(2));
        assert_eq!(down.bounds(), &[(0.0, 1.0); 4]);
    }

    #[test]
    fn downscale_checkerboard_averages_to_half() {
        let px = (0..16).map(|i| ((i / 4 + i % 4) % 2) as f64).collect();
        let down = downscale(&images(4, vec![px]), 2).unwrap();
        assert_eq!(down.point(0), &Vector::from(vec![0.5; 4]));
    }

    #[test]
    fn downscale_requires_divisibility() {
        let ds = images(4, vec![vec![0.0; 16]]);
        assert!(matches!(downscale(&ds, 3), Err(Error::NotDivisible { side: 4, factor: 3 })));
    }

    #[test]
    fn sampled_indices_are_distinct_and_sorted() {
        let s = sample_indices(100, 20, 4);
        assert_eq!(s.len(), 20);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(sample_indices(5, 10, 4), vec![0, 1, 2, 3, 4]);
        assert_eq!(s, sample_indices(100, 20, 4));
    }
}
