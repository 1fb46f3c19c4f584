//! Patch-feature grids, their reduction to three-channel semantic maps and
//! the `RPF1` container they arrive in.
//!
//! A [`PcaTransform`] is fitted once on the reference object's tokens and then
//! applied unchanged to every query, so both sides share one basis and one
//! normalization range.
//!
//! `RPF1` layout: the 4 magic bytes `RPF1`, little-endian `u32` width, height,
//! channel count and patch size, then `width * height * channels`
//! little-endian `f32` values in row-major `(y, x, channel)` order.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

pub const MAGIC: &[u8; 4] = b"RPF1";
pub const HEADER_LEN: usize = 20;

/// A `width x height` grid of `dim`-dimensional patch tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    dim: usize,
    patch_size: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, dim: usize, patch_size: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("feature grid must be non-empty"));
        }
        if dim < 3 {
            return Err(Error::invalid(format!("feature dimension must be at least 3, got {dim}")));
        }
        if data.len() != width * height * dim {
            return Err(Error::invalid(format!(
                "{} values for a {width}x{height}x{dim} grid",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite feature value at index {i}")));
        }
        Ok(Self {
            width,
            height,
            dim,
            patch_size,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn token(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.dim;
        &self.data[i..i + self.dim]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        for v in [self.width, self.height, self.dim, self.patch_size] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let format = |offset: usize, message: String| Error::Format { offset, message };
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(format(0, "missing RPF1 magic".into()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(format(bytes.len(), format!("header truncated at {} bytes", bytes.len())));
        }
        let field = |i: usize| {
            let o = 4 + 4 * i;
            u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize
        };
        let (w, h, d, patch) = (field(0), field(1), field(2), field(3));
        if w == 0 || h == 0 {
            return Err(format(4, format!("empty grid {w}x{h}")));
        }
        if d < 3 {
            return Err(format(12, format!("feature dimension {d} is below 3")));
        }
        let count = w
            .checked_mul(h)
            .and_then(|v| v.checked_mul(d))
            .filter(|v| v.checked_mul(4).is_some_and(|b| b <= isize::MAX as usize))
            .ok_or_else(|| format(4, format!("grid {w}x{h}x{d} overflows")))?;
        let expected = HEADER_LEN + 4 * count;
        if bytes.len() < expected {
            return Err(format(
                bytes.len(),
                format!("payload truncated: expected {expected} bytes, found {}", bytes.len()),
            ));
        }
        if bytes.len() > expected {
            return Err(format(expected, format!("{} trailing bytes", bytes.len() - expected)));
        }
        let mut data = Vec::with_capacity(count);
        for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(format(HEADER_LEN + 4 * i, "non-finite feature value".into()));
            }
            data.push(v);
        }
        Ok(Self {
            width: w,
            height: h,
            dim: d,
            patch_size: patch,
            data,
        })
    }

    /// Grid-resolution mask: a token is on when the mask pixel under its
    /// centre is on.
    pub fn grid_mask(&self, mask: &Mask) -> Mask {
        mask.resize_nearest(self.width, self.height)
    }
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let bytes = fs::read(path.as_ref())?;
    FeatureMap::from_bytes(&bytes)
}

pub fn save_features(path: impl AsRef<Path>, features: &FeatureMap) -> Result<()> {
    fs::write(path, features.to_bytes())?;
    Ok(())
}

/// Mean, top-3 principal directions and the reference projection range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaTransform {
    pub mean: Vec<f64>,
    /// `dim` rows of three basis coefficients; columns are orthonormal.
    pub basis: Vec<[f64; 3]>,
    /// Variances along the three directions, descending.
    pub eigenvalues: [f64; 3],
    /// Sum of all eigenvalues of the masked covariance.
    pub total_variance: f64,
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl PcaTransform {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Projection onto the basis before normalization.
    pub fn project(&self, x: &[f32]) -> [f64; 3] {
        let mut p = [0.0; 3];
        for ((v, m), b) in x.iter().zip(&self.mean).zip(&self.basis) {
            let c = *v as f64 - m;
            p[0] += c * b[0];
            p[1] += c * b[1];
            p[2] += c * b[2];
        }
        p
    }

    /// Projection rescaled with the reference range and clamped to `[0, 1]`.
    pub fn normalize(&self, p: [f64; 3]) -> [f32; 3] {
        let mut out = [0.0f32; 3];
        for c in 0..3 {
            let span = self.max[c] - self.min[c];
            out[c] = ((p[c] - self.min[c]) / span).clamp(0.0, 1.0) as f32;
        }
        out
    }

    pub fn explained_variance_ratio(&self) -> f64 {
        self.eigenvalues.iter().sum::<f64>() / self.total_variance
    }
}

/// A three-channel semantic image and the mask it is valid on.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMap {
    pub image: Image,
    pub mask: Mask,
}

/// Relative eigenvalue below which a direction counts as absent.
const RANK_TOLERANCE: f64 = 1e-10;

/// Fits the transform on the tokens under `mask` (any resolution; it is
/// resampled to the feature grid).
pub fn fit_pca(features: &FeatureMap, mask: &Mask) -> Result<PcaTransform> {
    let grid = features.grid_mask(mask);
    let d = features.dim();
    let rows: Vec<&[f32]> = (0..features.height())
        .flat_map(|y| (0..features.width()).map(move |x| (x, y)))
        .filter(|&(x, y)| grid.get(x, y))
        .map(|(x, y)| features.token(x, y))
        .collect();
    let n = rows.len();
    if n < 3 {
        return Err(Error::DegenerateFeatures { rank: n.saturating_sub(1) });
    }
    let mut mean = vec![0.0f64; d];
    for r in &rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += *v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] as f64 - mean[j]);

    // Eigen-decompose whichever of the covariance and the Gram matrix is smaller.
    let (values, vectors) = if n < d {
        let gram = &centered * centered.transpose() / n as f64;
        let eig = SymmetricEigen::new(gram);
        let order = descending(&eig.eigenvalues);
        let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vecs: Vec<Vec<f64>> = order
            .iter()
            .take(3)
            .map(|&i| {
                let u = eig.eigenvectors.column(i);
                let v = centered.transpose() * u;
                let norm = v.norm();
                v.iter().map(|x| x / norm).collect()
            })
            .collect();
        (vals, vecs)
    } else {
        let cov = centered.transpose() * &centered / n as f64;
        let eig = SymmetricEigen::new(cov);
        let order = descending(&eig.eigenvalues);
        let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vecs = order
            .iter()
            .take(3)
            .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
            .collect();
        (vals, vecs)
    };
    let top = values[0].max(0.0);
    let rank = values.iter().filter(|v| **v > RANK_TOLERANCE * top && **v > 0.0).count();
    if rank < 3 {
        return Err(Error::DegenerateFeatures { rank });
    }
    let mut basis = vec![[0.0f64; 3]; d];
    for (c, mut v) in vectors.into_iter().enumerate() {
        // Largest-magnitude entry positive; the first one wins ties.
        let mut k = 0;
        for (i, x) in v.iter().enumerate() {
            if x.abs() > v[k].abs() {
                k = i;
            }
        }
        if v[k] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for (row, x) in basis.iter_mut().zip(v) {
            row[c] = x;
        }
    }
    let total_variance = values.iter().filter(|v| **v > 0.0).sum();
    let mut t = PcaTransform {
        mean,
        basis,
        eigenvalues: [values[0], values[1], values[2]],
        total_variance,
        min: [f64::INFINITY; 3],
        max: [f64::NEG_INFINITY; 3],
    };
    for r in &rows {
        let p = t.project(r);
        for c in 0..3 {
            t.min[c] = t.min[c].min(p[c]);
            t.max[c] = t.max[c].max(p[c]);
        }
    }
    Ok(t)
}

fn descending(values: &nalgebra::DVector<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Projects every token, normalizes, upsamples nearest-neighbour to
/// `width x height` and zeroes pixels outside `mask` (given at that resolution).
pub fn apply_pca(
    features: &FeatureMap,
    transform: &PcaTransform,
    mask: &Mask,
    width: usize,
    height: usize,
) -> Result<SemanticMap> {
    if features.dim() != transform.dim() {
        return Err(Error::invalid(format!(
            "features have {} channels, transform expects {}",
            features.dim(),
            transform.dim()
        )));
    }
    if mask.width() != width || mask.height() != height {
        return Err(Error::invalid(format!(
            "mask {}x{} does not match target {width}x{height}",
            mask.width(),
            mask.height()
        )));
    }
    let (gw, gh) = (features.width(), features.height());
    let tokens: Vec<[f32; 3]> = (0..gh)
        .flat_map(|y| (0..gw).map(move |x| (x, y)))
        .map(|(x, y)| transform.normalize(transform.project(features.token(x, y))))
        .collect();
    let mut image = Image::zeros(width, height, 3);
    for y in 0..height {
        let ty = (y * gh / height).min(gh - 1);
        for x in 0..width {
            if !mask.get(x, y) {
                continue;
            }
            let tx = (x * gw / width).min(gw - 1);
            image.pixel_mut(x, y).copy_from_slice(&tokens[ty * gw + tx]);
        }
    }
    Ok(SemanticMap {
        image,
        mask: mask.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_features(w: usize, h: usize, d: usize, seed: u64) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        FeatureMap::new(w, h, d, 14, data).unwrap()
    }

    fn full_mask(w: usize, h: usize) -> Mask {
        Mask::new(w, h, true)
    }

    #[test]
    fn container_round_trip_is_byte_exact() {
        let f = random_features(16, 16, 32, 1);
        let bytes = f.to_bytes();
        assert_eq!(&bytes[..4], b"RPF1");
        assert_eq!(bytes.len(), 20 + 16 * 16 * 32 * 4);
        let back = FeatureMap::from_bytes(&bytes).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.to_bytes(), bytes);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.rpf");
        save_features(&p, &f).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), bytes);
        assert_eq!(load_features(&p).unwrap(), f);
    }

    #[test]
    fn header_echo_for_large_grid() {
        let d = 1024;
        let mut bytes = b"RPF1".to_vec();
        for v in [16u32, 16, d, 14] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.resize(20 + 16 * 16 * 1024 * 4, 0);
        let f = FeatureMap::from_bytes(&bytes).unwrap();
        assert_eq!((f.width(), f.height(), f.dim(), f.patch_size()), (16, 16, 1024, 14));
    }

    #[test]
    fn format_errors_carry_offsets() {
        let bytes = random_features(4, 4, 3, 2).to_bytes();
        let offset = |b: &[u8]| match FeatureMap::from_bytes(b) {
            Err(Error::Format { offset, .. }) => offset,
            other => panic!("expected format error, got {other:?}"),
        };
        assert_eq!(offset(b"RPF2xxxxxxxxxxxxxxxxxxxx"), 0);
        assert_eq!(offset(&bytes[..10]), 10);
        assert_eq!(offset(&bytes[..bytes.len() - 1]), bytes.len() - 1);
        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(offset(&long), bytes.len());
        let mut huge = bytes[..20].to_vec();
        huge[4..8].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        assert_eq!(offset(&huge), 4);
        let mut nan = bytes.clone();
        nan[24..28].copy_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(offset(&nan), 24);
    }

    #[test]
    fn affine_subspace_is_reconstructed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 12;
        let origin: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dirs: Vec<Vec<f64>> = (0..3).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let mut data = Vec::new();
        for _ in 0..64 {
            let c: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            for j in 0..d {
                data.push((origin[j] + c[0] * dirs[0][j] + c[1] * dirs[1][j] + c[2] * dirs[2][j]) as f32);
            }
        }
        let f = FeatureMap::new(8, 8, d, 14, data).unwrap();
        let t = fit_pca(&f, &full_mask(8, 8)).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let tok = f.token(x, y);
                let p = t.project(tok);
                for j in 0..d {
                    let rec = t.mean[j] + t.basis[j][0] * p[0] + t.basis[j][1] * p[1] + t.basis[j][2] * p[2];
                    assert!((rec - tok[j] as f64).abs() < 1e-5, "residual {}", rec - tok[j] as f64);
                }
            }
        }
        // orthonormal basis
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = t.basis.iter().map(|r| r[a] * r[b]).sum();
                assert!((dot - (a == b) as u8 as f64).abs() < 1e-6);
            }
        }
    }

    /// Brute-force oracle: power iteration with deflation on the explicit
    /// d x d covariance.
    fn power_top3(f: &FeatureMap) -> ([f64; 3], f64) {
        let d = f.dim();
        let n = f.width() * f.height();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                mean[j] += f.data()[i * d + j] as f64 / n as f64;
            }
        }
        let mut cov = vec![vec![0.0; d]; d];
        for i in 0..n {
            for a in 0..d {
                for b in 0..d {
                    cov[a][b] += (f.data()[i * d + a] as f64 - mean[a]) * (f.data()[i * d + b] as f64 - mean[b]) / n as f64;
                }
            }
        }
        let trace: f64 = (0..d).map(|i| cov[i][i]).sum();
        let mut vals = [0.0; 3];
        for val in vals.iter_mut() {
            let mut v = vec![1.0 / (d as f64).sqrt(); d];
            let mut lambda = 0.0;
            for _ in 0..5000 {
                let w: Vec<f64> = (0..d).map(|a| (0..d).map(|b| cov[a][b] * v[b]).sum()).collect();
                let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                lambda = norm;
                v = w.iter().map(|x| x / norm).collect();
            }
            *val = lambda;
            for a in 0..d {
                for b in 0..d {
                    cov[a][b] -= lambda * v[a] * v[b];
                }
            }
        }
        (vals, trace)
    }

    #[test]
    fn isotropic_features_explain_about_three_over_d() {
        let f = random_features(20, 20, 16, 4);
        let t = fit_pca(&f, &full_mask(20, 20)).unwrap();
        let (vals, trace) = power_top3(&f);
        for c in 0..3 {
            assert!((t.eigenvalues[c] - vals[c]).abs() < 1e-6 * vals[0], "{:?} vs {vals:?}", t.eigenvalues);
        }
        assert!((t.total_variance - trace).abs() < 1e-9);
        let ratio = t.explained_variance_ratio();
        let oracle = vals.iter().sum::<f64>() / trace;
        assert!((ratio - oracle).abs() < 1e-6);
        // sampling noise lifts the top three a little above 3/d
        assert!(ratio > 3.0 / 16.0 && ratio < 2.0 * 3.0 / 16.0, "ratio {ratio}");
    }

    #[test]
    fn gram_and_covariance_paths_agree() {
        // 5x5 tokens with d = 40 uses the Gram matrix, masked to a 3x... subset
        let f = random_features(5, 5, 40, 6);
        let t = fit_pca(&f, &full_mask(5, 5)).unwrap();
        let (vals, _) = power_top3(&f);
        for c in 0..3 {
            assert!((t.eigenvalues[c] - vals[c]).abs() < 1e-6 * vals[0]);
        }
    }

    #[test]
    fn duplicated_vectors_give_identical_transform() {
        let f = random_features(4, 4, 6, 5);
        let mut doubled = f.data().to_vec();
        doubled.extend_from_slice(f.data());
        let g = FeatureMap::new(4, 8, 6, 14, doubled).unwrap();
        let a = fit_pca(&f, &full_mask(4, 4)).unwrap();
        let b = fit_pca(&g, &full_mask(4, 8)).unwrap();
        for (ra, rb) in a.basis.iter().zip(&b.basis) {
            for c in 0..3 {
                assert!((ra[c] - rb[c]).abs() < 1e-9);
            }
        }
        assert_eq!(a.min.map(|v| (v * 1e9).round()), b.min.map(|v| (v * 1e9).round()));
    }

    #[test]
    fn degenerate_rank_is_rejected() {
        // every token on one line
        let data: Vec<f32> = (0..16).flat_map(|i| [i as f32, 2.0 * i as f32, 1.0, 0.5]).collect();
        let f = FeatureMap::new(4, 4, 4, 14, data).unwrap();
        assert!(matches!(fit_pca(&f, &full_mask(4, 4)), Err(Error::DegenerateFeatures { rank: 1 })));
        let g = random_features(4, 4, 4, 1);
        let two = Mask::from_fn(4, 4, |x, y| y == 0 && x < 2);
        assert!(matches!(fit_pca(&g, &two), Err(Error::DegenerateFeatures { .. })));
    }

    #[test]
    fn reference_range_is_exactly_unit() {
        let f = random_features(16, 16, 24, 7);
        let mask = Mask::from_fn(64, 64, |x, y| (8..56).contains(&x) && (4..60).contains(&y));
        let t = fit_pca(&f, &mask).unwrap();
        let s = apply_pca(&f, &t, &mask, 64, 64).unwrap();
        for c in 0..3 {
            let vals: Vec<f32> = (0..64 * 64)
                .filter(|i| mask.get(i % 64, i / 64))
                .map(|i| s.image.get(i % 64, i / 64, c))
                .collect();
            assert_eq!(vals.iter().cloned().fold(f32::INFINITY, f32::min), 0.0);
            assert_eq!(vals.iter().cloned().fold(f32::NEG_INFINITY, f32::max), 1.0);
        }
        for y in 0..64 {
            for x in 0..64 {
                if !mask.get(x, y) {
                    assert_eq!(s.image.pixel(x, y), &[0.0, 0.0, 0.0]);
                }
            }
        }
    }

    #[test]
    fn mean_features_map_to_uniform_interior_value() {
        let f = random_features(8, 8, 10, 8);
        let t = fit_pca(&f, &full_mask(8, 8)).unwrap();
        let mean: Vec<f32> = t.mean.iter().map(|v| *v as f32).collect();
        let data: Vec<f32> = (0..64).flat_map(|_| mean.clone()).collect();
        let g = FeatureMap::new(8, 8, 10, 14, data).unwrap();
        let s = apply_pca(&g, &t, &full_mask(32, 32), 32, 32).unwrap();
        let first = s.image.pixel(0, 0).to_vec();
        for c in 0..3 {
            // the centred reference projections straddle zero
            assert!(first[c] > 0.0 && first[c] < 1.0);
            let expect = (-t.min[c] / (t.max[c] - t.min[c])) as f32;
            assert!((first[c] - expect).abs() < 1e-5);
        }
        assert!(s.image.data().chunks(3).all(|p| p == first.as_slice()));
    }

    #[test]
    fn projection_matches_dense_matrix_product() {
        let f = random_features(6, 6, 9, 9);
        let t = fit_pca(&f, &full_mask(6, 6)).unwrap();
        let q = random_features(5, 1, 9, 10);
        let basis = DMatrix::from_fn(3, 9, |r, c| t.basis[c][r]);
        for x in 0..5 {
            let v = nalgebra::DVector::from_fn(9, |j, _| q.token(x, 0)[j] as f64 - t.mean[j]);
            let dense = &basis * v;
            let p = t.project(q.token(x, 0));
            for c in 0..3 {
                assert!((dense[c] - p[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let f = random_features(4, 4, 6, 1);
        let t = fit_pca(&f, &full_mask(4, 4)).unwrap();
        let g = random_features(4, 4, 7, 1);
        assert!(apply_pca(&g, &t, &full_mask(8, 8), 8, 8).is_err());
    }

    #[test]
    fn sign_convention_holds() {
        let f = random_features(10, 10, 8, 11);
        let t = fit_pca(&f, &full_mask(10, 10)).unwrap();
        for c in 0..3 {
            let col: Vec<f64> = t.basis.iter().map(|r| r[c]).collect();
            let k = col.iter().enumerate().fold(0, |k, (i, v)| if v.abs() > col[k].abs() { i } else { k });
            assert!(col[k] > 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn projection_is_affine(a in -3.0f64..3.0, seed in 0u64..1000) {
            let f = random_features(5, 5, 6, 12);
            let t = fit_pca(&f, &full_mask(5, 5)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            // a*(x - mean) + mean projects to a * project(x)
            let scaled: Vec<f32> = x.iter().zip(&t.mean).map(|(v, m)| (a * (v - m) + m) as f32).collect();
            let xf: Vec<f32> = x.iter().map(|v| *v as f32).collect();
            let p = t.project(&xf);
            let q = t.project(&scaled);
            for c in 0..3 {
                prop_assert!((q[c] - a * p[c]).abs() < 1e-5);
            }
        }
    }
}
