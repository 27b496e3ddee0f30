//! Visual vocabulary: k-means over region feature vectors and 1-NN codeword
//! assignment.
//!
//! Binary file layout (all little-endian):
//!
//! | offset | size      | field                          |
//! |--------|-----------|--------------------------------|
//! | 0      | 4         | magic `b"BMCB"`                |
//! | 4      | 4         | format version (u32, = 1)      |
//! | 8      | 4         | k (u32)                        |
//! | 12     | 4         | d (u32)                        |
//! | 16     | 8 * k * d | centroids, row-major f64       |

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CODEBOOK_MAGIC: &[u8; 4] = b"BMCB";
pub const CODEBOOK_VERSION: u32 = 1;
pub const DEFAULT_K: usize = 1250;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    k: usize,
    dim: usize,
    centroids: Vec<f64>,
}

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Codebook {
    /// `centroids` is row-major `k x dim`.
    pub fn new(k: usize, dim: usize, centroids: Vec<f64>) -> Result<Self> {
        if k == 0 || dim == 0 {
            return Err(Error::InvalidConfig(format!("codebook needs k >= 1 and d >= 1, got k={k} d={dim}")));
        }
        if centroids.len() != k * dim {
            return Err(Error::DimensionMismatch {
                expected: k * dim,
                got: centroids.len(),
            });
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite centroid value".into()));
        }
        Ok(Codebook { k, dim, centroids })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: r.len(),
            });
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroid(&self, j: usize) -> &[f64] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }

    pub fn centroids(&self) -> impl Iterator<Item = &[f64]> {
        self.centroids.chunks_exact(self.dim)
    }

    fn check_dim(&self, feature: &[f64]) -> Result<()> {
        if feature.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: feature.len(),
            });
        }
        Ok(())
    }

    /// Nearest centroid by squared Euclidean distance; ties go to the smaller index.
    pub fn assign(&self, feature: &[f64]) -> Result<u32> {
        self.check_dim(feature)?;
        Ok(self.nearest(feature).0 as u32)
    }

    fn nearest(&self, feature: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (j, c) in self.centroids().enumerate() {
            let d = squared_distance(feature, c);
            if d < best.1 {
                best = (j, d);
            }
        }
        best
    }

    /// Sum of squared distances from each feature to its nearest centroid.
    pub fn inertia(&self, features: &[Vec<f64>]) -> Result<f64> {
        for f in features {
            self.check_dim(f)?;
        }
        Ok(features.iter().map(|f| self.nearest(f).1).sum())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.centroids.len());
        out.extend_from_slice(CODEBOOK_MAGIC);
        out.extend_from_slice(&CODEBOOK_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.k as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.centroids {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::MalformedCodebook(m.to_string());
        if bytes.len() < 16 {
            return Err(bad("file shorter than header"));
        }
        if &bytes[0..4] != CODEBOOK_MAGIC {
            return Err(bad("bad magic"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        if word(4) != CODEBOOK_VERSION {
            return Err(bad("unsupported version"));
        }
        let (k, dim) = (word(8) as usize, word(12) as usize);
        let body = &bytes[16..];
        if body.len() != 8 * k * dim {
            return Err(bad("payload length does not match k * d"));
        }
        let centroids = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(k, dim, centroids).map_err(|e| bad(&e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn assign_codeword(codebook: &Codebook, feature: &[f64]) -> Result<u32> {
    codebook.assign(feature)
}

pub fn inertia(codebook: &Codebook, features: &[Vec<f64>]) -> Result<f64> {
    codebook.inertia(features)
}

/// Scales `v` to unit L2 norm; the zero vector is left unchanged.
pub fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iterations: usize,
    /// Stop once the relative inertia improvement drops below this.
    pub tolerance: f64,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        CodebookConfig {
            k: DEFAULT_K,
            seed: 0,
            max_iterations: 100,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedCodebook {
    pub codebook: Codebook,
    /// Inertia after the initial assignment and after every Lloyd iteration.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

fn assign_all(centroids: &[f64], dim: usize, features: &[Vec<f64>]) -> Vec<(usize, f64)> {
    features
        .par_iter()
        .map(|f| {
            let mut best = (0, f64::INFINITY);
            for (j, c) in centroids.chunks_exact(dim).enumerate() {
                let d = squared_distance(f, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .collect()
}

fn kmeans_plus_plus(features: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = features.len();
    let dim = features[0].len();
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&features[first]);
    let mut dist: Vec<f64> = features.iter().map(|f| squared_distance(f, &features[first])).collect();

    for _ in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            if dist[chosen] == 0.0 {
                // Rounding walked past the end; take the last point with mass.
                chosen = dist.iter().rposition(|&d| d > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = features[pick].clone();
        for (d, f) in dist.iter_mut().zip(features) {
            *d = d.min(squared_distance(f, &c));
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}

/// Lloyd's k-means with seeded k-means++ initialization.
///
/// Point assignment runs in parallel; centroid sums are accumulated in input
/// order so the result does not depend on the worker count. Empty clusters
/// are reseeded to the points farthest from their current centroids. The
/// returned centroids are relabelled by first appearance of their cluster in
/// `features`.
pub fn train_codebook(features: &[Vec<f64>], config: &CodebookConfig) -> Result<TrainedCodebook> {
    let k = config.k;
    if k == 0 {
        return Err(Error::InvalidConfig("k must be positive".into()));
    }
    if config.max_iterations == 0 {
        return Err(Error::InvalidConfig("max_iterations must be positive".into()));
    }
    if !(config.tolerance >= 0.0) {
        return Err(Error::InvalidConfig("tolerance must be non-negative".into()));
    }
    if features.len() < k {
        return Err(Error::InsufficientData {
            needed: k,
            got: features.len(),
        });
    }
    let dim = features[0].len();
    if dim == 0 {
        return Err(Error::InvalidConfig("feature dimension must be positive".into()));
    }
    for f in features {
        if f.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: f.len(),
            });
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite feature value".into()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut centroids = kmeans_plus_plus(features, k, &mut rng);
    let mut assignment = assign_all(&centroids, dim, features);
    let mut history = vec![assignment.iter().map(|a| a.1).sum::<f64>()];
    let mut iterations = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (f, &(j, _)) in features.iter().zip(&assignment) {
            counts[j] += 1;
            for (s, v) in sums[j * dim..(j + 1) * dim].iter_mut().zip(f) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let inv = counts[j] as f64;
                for (c, s) in centroids[j * dim..(j + 1) * dim]
                    .iter_mut()
                    .zip(&sums[j * dim..(j + 1) * dim])
                {
                    *c = s / inv;
                }
            }
        }

        let empty: Vec<usize> = (0..k).filter(|&j| counts[j] == 0).collect();
        if !empty.is_empty() {
            // Distance of each point to its (updated) own centroid.
            let mut far: Vec<(usize, f64)> = features
                .iter()
                .zip(&assignment)
                .enumerate()
                .map(|(i, (f, &(j, _)))| (i, squared_distance(f, &centroids[j * dim..(j + 1) * dim])))
                .collect();
            far.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            for (slot, &(point, _)) in empty.iter().zip(&far) {
                centroids[slot * dim..(slot + 1) * dim].copy_from_slice(&features[point]);
            }
        }

        let next = assign_all(&centroids, dim, features);
        let current: f64 = next.iter().map(|a| a.1).sum();
        let previous = *history.last().unwrap();
        history.push(current);
        let stable = next.iter().zip(&assignment).all(|(a, b)| a.0 == b.0);
        assignment = next;
        if stable && empty.is_empty() {
            break;
        }
        let improvement = if previous > 0.0 {
            (previous - current) / previous
        } else {
            0.0
        };
        if improvement < config.tolerance {
            break;
        }
    }

    // Relabel clusters by first appearance in the input.
    let mut order: Vec<usize> = Vec::with_capacity(k);
    let mut seen = vec![false; k];
    for &(j, _) in &assignment {
        if !seen[j] {
            seen[j] = true;
            order.push(j);
        }
    }
    order.extend((0..k).filter(|&j| !seen[j]));
    let relabelled: Vec<f64> = order
        .iter()
        .flat_map(|&j| centroids[j * dim..(j + 1) * dim].iter().copied())
        .collect();

    Ok(TrainedCodebook {
        codebook: Codebook::new(k, dim, relabelled)?,
        inertia_history: history,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
    use rand_distr::{Distribution, Normal};

    fn cfg(k: usize, seed: u64) -> CodebookConfig {
        CodebookConfig {
            k,
            seed,
            max_iterations: 100,
            tolerance: 0.0,
        }
    }

    fn scan_oracle(cb: &Codebook, f: &[f64]) -> u32 {
        let dists: Vec<f64> = (0..cb.k())
            .map(|j| cb.centroid(j).iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum())
            .collect();
        let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
        dists.iter().position(|&d| d == min).unwrap() as u32
    }

    #[test]
    fn two_pure_clusters() {
        let pts = vec![vec![0.0], vec![0.0], vec![10.0], vec![10.0]];
        for seed in 0..10 {
            let t = train_codebook(&pts, &cfg(2, seed)).unwrap();
            assert_eq!(t.codebook.centroid(0), &[0.0]);
            assert_eq!(t.codebook.centroid(1), &[10.0]);
        }
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let pts: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let t = train_codebook(&pts, &cfg(7, 3)).unwrap();
        assert_eq!(t.codebook.inertia(&pts).unwrap(), 0.0);
        for (i, p) in pts.iter().enumerate() {
            assert_eq!(t.codebook.centroid(i), p.as_slice());
        }
    }

    #[test]
    fn recovers_planted_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let centers = [[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [0.0, 10.0, 0.0]];
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for i in 0..300 {
            let c = i % 3;
            pts.push(centers[c].iter().map(|x| x + noise.sample(&mut rng)).collect::<Vec<_>>());
            labels.push(c);
        }
        let t = train_codebook(&pts, &cfg(3, 9)).unwrap();
        // Relabelling by first appearance makes cluster j == planted label j.
        for (p, &l) in pts.iter().zip(&labels) {
            assert_eq!(t.codebook.assign(p).unwrap() as usize, l);
        }
    }

    #[test]
    fn errors() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(matches!(
            train_codebook(&pts, &cfg(3, 0)),
            Err(Error::InsufficientData { needed: 3, got: 2 })
        ));
        let mixed = vec![vec![0.0], vec![1.0, 2.0]];
        assert!(matches!(
            train_codebook(&mixed, &cfg(1, 0)),
            Err(Error::DimensionMismatch { .. })
        ));
        let cb = Codebook::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert!(matches!(cb.assign(&[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(cb.inertia(&[vec![1.0]]).is_err());
    }

    #[test]
    fn assignment_and_ties() {
        let rows: Vec<Vec<f64>> = (0..10).map(|j| vec![j as f64, 0.0]).collect();
        let cb = Codebook::from_rows(&rows).unwrap();
        assert_eq!(cb.assign(&[7.0, 0.0]).unwrap(), 7);

        let mut rows = vec![vec![100.0, 100.0]; 6];
        rows[2] = vec![-1.0, 0.0];
        rows[5] = vec![1.0, 0.0];
        let cb = Codebook::from_rows(&rows).unwrap();
        assert_eq!(cb.assign(&[0.0, 3.0]).unwrap(), 2);
    }

    #[test]
    fn inertia_values() {
        let cb = Codebook::from_rows(&[vec![0.0, 0.0], vec![5.0, 5.0]]).unwrap();
        assert_eq!(cb.inertia(&[vec![0.0, 0.0], vec![5.0, 5.0]]).unwrap(), 0.0);
        assert_eq!(cb.inertia(&[vec![0.0, 3.0]]).unwrap(), 9.0);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..2).map(|_| rng.random_range(-10.0..10.0)).collect())
            .collect();
        let direct: f64 = pts
            .iter()
            .map(|p| {
                let j = scan_oracle(&cb, p) as usize;
                cb.centroid(j).iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            })
            .sum();
        assert!((cb.inertia(&pts).unwrap() - direct).abs() < 1e-9 * direct);
    }

    #[test]
    fn random_assignment_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200 {
            let k = rng.random_range(1..20);
            let d = rng.random_range(1..6);
            let rows: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect())
                .collect();
            let cb = Codebook::from_rows(&rows).unwrap();
            let f: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
            assert_eq!(cb.assign(&f).unwrap(), scan_oracle(&cb, &f));
        }
    }

    #[test]
    fn empty_clusters_are_reseeded() {
        // Many duplicates: k-means++ falls back to uniform picks once all
        // distances are zero, which can leave clusters empty.
        let mut pts = vec![vec![0.0]; 20];
        pts.extend(vec![vec![1.0]; 3]);
        pts.push(vec![2.0]);
        let t = train_codebook(&pts, &cfg(3, 5)).unwrap();
        assert_eq!(t.codebook.k(), 3);
        assert_eq!(t.codebook.inertia(&pts).unwrap(), 0.0);
    }

    #[test]
    fn file_round_trip_and_layout() {
        let cb = Codebook::from_rows(&[vec![1.5, -2.0], vec![0.25, 8.0], vec![3.0, 3.0]]).unwrap();
        let bytes = cb.to_bytes();
        assert_eq!(&bytes[..4], b"BMCB");
        assert_eq!(bytes[4..8], 1u32.to_le_bytes());
        assert_eq!(bytes[8..12], 3u32.to_le_bytes());
        assert_eq!(bytes[12..16], 2u32.to_le_bytes());
        assert_eq!(bytes[16..24], 1.5f64.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 6 * 8);
        assert_eq!(Codebook::from_bytes(&bytes).unwrap(), cb);
        assert!(Codebook::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Codebook::from_bytes(b"XXXX").is_err());

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cb.bin");
        cb.save(&p).unwrap();
        assert_eq!(Codebook::load(&p).unwrap(), cb);
    }

    #[test]
    fn normalizes() {
        let mut v = vec![3.0, 4.0];
        l2_normalize(&mut v);
        assert_eq!(v, vec![0.6, 0.8]);
        let mut z = vec![0.0, 0.0];
        l2_normalize(&mut z);
        assert_eq!(z, vec![0.0, 0.0]);
    }

    #[test]
    fn training_is_independent_of_thread_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<Vec<f64>> = (0..400)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| train_codebook(&pts, &cfg(12, 2)).unwrap().codebook)
        };
        assert_eq!(run(1), run(4));
    }

    proptest! {
        #[test]
        fn inertia_never_increases(seed in 0u64..1000, k in 1usize..8, n in 8usize..60) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..3).map(|_| rng.random_range(-10.0..10.0)).collect())
                .collect();
            let t = train_codebook(&pts, &cfg(k, seed)).unwrap();
            for w in t.inertia_history.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", t.inertia_history);
            }
            let again = train_codebook(&pts, &cfg(k, seed)).unwrap();
            prop_assert_eq!(t.codebook, again.codebook);
        }

        #[test]
        fn centroid_maps_to_itself(seed in 0u64..500, k in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..3).map(|_| rng.random_range(-3.0..3.0)).collect())
                .collect();
            let cb = Codebook::from_rows(&rows).unwrap();
            for j in 0..k {
                prop_assert_eq!(cb.assign(cb.centroid(j)).unwrap() as usize, j);
            }
        }
    }
}
