//! Visual vocabulary and bag-of-words histograms.

use rand::seq::index::sample;
use rand::Rng;

/// Sparse L1-normalised word histogram, sorted by word index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Bow {
    entries: Vec<(u32, f64)>,
}

impl Bow {
    pub fn from_entries(mut entries: Vec<(u32, f64)>) -> Self {
        entries.sort_by_key(|e| e.0);
        entries.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        entries.retain(|e| e.1 != 0.0);
        Self { entries }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Bow) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        let (a, b) = (&self.entries, &other.entries);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    /// Cosine similarity; zero when either histogram is empty.
    pub fn cosine(&self, other: &Bow) -> f64 {
        let n = self.norm() * other.norm();
        if n == 0.0 {
            0.0
        } else {
            (self.dot(other) / n).clamp(-1.0, 1.0)
        }
    }

    /// Dense copy of length `size`.
    pub fn to_dense(&self, size: usize) -> Vec<f64> {
        let mut v = vec![0.0; size];
        for &(w, x) in &self.entries {
            v[w as usize] = x;
        }
        v
    }
}

/// `V` centroids of dimension `D`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    dim: usize,
    centroids: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VocabularyError {
    #[error("vocabulary needs at least one centroid")]
    Empty,
    #[error("centroid data length {len} is not a multiple of dimension {dim}")]
    Shape { len: usize, dim: usize },
    #[error("training sample has {have} descriptors, fewer than {want} words")]
    SampleTooSmall { have: usize, want: usize },
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Vocabulary {
    pub fn new(dim: usize, centroids: Vec<f64>) -> Result<Self, VocabularyError> {
        if dim == 0 || centroids.is_empty() {
            return Err(VocabularyError::Empty);
        }
        if !centroids.len().is_multiple_of(dim) {
            return Err(VocabularyError::Shape { len: centroids.len(), dim });
        }
        Ok(Self { dim, centroids })
    }

    pub fn size(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    pub fn raw(&self) -> &[f64] {
        &self.centroids
    }

    /// Nearest centroid by L2; ties go to the lowest index.
    pub fn nearest(&self, d: &[f64]) -> u32 {
        let mut best = (0u32, f64::INFINITY);
        for (i, c) in self.centroids.chunks_exact(self.dim).enumerate() {
            let dist = sq_dist(c, d);
            if dist < best.1 {
                best = (i as u32, dist);
            }
        }
        best.0
    }

    /// L1-normalised word histogram of a descriptor set.
    pub fn quantise<'a, I>(&self, descriptors: I) -> Bow
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut counts: Vec<(u32, f64)> = descriptors.into_iter().map(|d| (self.nearest(d), 1.0)).collect();
        let n = counts.len() as f64;
        if n == 0.0 {
            return Bow::default();
        }
        counts.iter_mut().for_each(|c| c.1 /= n);
        Bow::from_entries(counts)
    }

    /// Lloyd's k-means seeded from `words` distinct sample points.
    pub fn train<R: Rng + ?Sized>(
        sample_set: &[Vec<f64>],
        words: usize,
        iterations: usize,
        rng: &mut R,
    ) -> Result<Self, VocabularyError> {
        if words == 0 {
            return Err(VocabularyError::Empty);
        }
        if sample_set.len() < words {
            return Err(VocabularyError::SampleTooSmall { have: sample_set.len(), want: words });
        }
        let dim = sample_set[0].len();
        let mut idx = sample(rng, sample_set.len(), words).into_vec();
        idx.sort_unstable();
        let mut centroids: Vec<f64> = idx.iter().flat_map(|&i| sample_set[i].iter().copied()).collect();
        let mut assign = vec![usize::MAX; sample_set.len()];
        for _ in 0..iterations {
            let voc = Vocabulary { dim, centroids: centroids.clone() };
            let mut changed = false;
            for (a, d) in assign.iter_mut().zip(sample_set) {
                let w = voc.nearest(d) as usize;
                if *a != w {
                    *a = w;
                    changed = true;
                }
            }
            let mut sums = vec![0.0; words * dim];
            let mut counts = vec![0usize; words];
            for (&a, d) in assign.iter().zip(sample_set) {
                counts[a] += 1;
                for (s, x) in sums[a * dim..(a + 1) * dim].iter_mut().zip(d) {
                    *s += x;
                }
            }
            for w in 0..words {
                if counts[w] == 0 {
                    // Re-seed an empty cluster at the point worst served by its centroid.
                    let far = (0..sample_set.len())
                        .max_by(|&i, &j| {
                            let di = sq_dist(&sample_set[i], voc.centroid(assign[i]));
                            let dj = sq_dist(&sample_set[j], voc.centroid(assign[j]));
                            di.total_cmp(&dj).then(j.cmp(&i))
                        })
                        .unwrap_or(0);
                    centroids[w * dim..(w + 1) * dim].copy_from_slice(&sample_set[far]);
                    changed = true;
                } else {
                    for k in 0..dim {
                        centroids[w * dim + k] = sums[w * dim + k] / counts[w] as f64;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        Ok(Vocabulary { dim, centroids })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::world::random_unit_vector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_vocab(rng: &mut ChaCha8Rng, v: usize, d: usize) -> Vocabulary {
        let c: Vec<f64> = (0..v).flat_map(|_| random_unit_vector(rng, d)).collect();
        Vocabulary::new(d, c).unwrap()
    }

    #[test]
    fn descriptors_at_centroids_give_one_hot_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let voc = random_vocab(&mut rng, 8, 4);
        let ds = [voc.centroid(2).to_vec(), voc.centroid(5).to_vec(), voc.centroid(2).to_vec()];
        let bow = voc.quantise(ds.iter().map(|d| d.as_slice()));
        assert_eq!(bow.entries(), &[(2, 2.0 / 3.0), (5, 1.0 / 3.0)]);
    }

    #[test]
    fn empty_input_is_zero_histogram() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let voc = random_vocab(&mut rng, 8, 4);
        assert!(voc.quantise(std::iter::empty()).is_zero());
    }

    #[test]
    fn quantise_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let voc = random_vocab(&mut rng, 32, 6);
        let ds: Vec<Vec<f64>> = (0..200).map(|_| random_unit_vector(&mut rng, 6)).collect();
        let bow = voc.quantise(ds.iter().map(|d| d.as_slice()));
        let mut dense = vec![0.0; 32];
        for d in &ds {
            let mut best = 0;
            for i in 1..32 {
                let di: f64 = (0..6).map(|k| (voc.centroid(i)[k] - d[k]).powi(2)).sum();
                let db: f64 = (0..6).map(|k| (voc.centroid(best)[k] - d[k]).powi(2)).sum();
                if di < db {
                    best = i;
                }
            }
            dense[best] += 1.0 / 200.0;
        }
        let got = bow.to_dense(32);
        for (a, b) in got.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut rev = ds.clone();
        rev.reverse();
        let bow2 = voc.quantise(rev.iter().map(|d| d.as_slice()));
        for (a, b) in bow2.to_dense(32).iter().zip(&got) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let voc = Vocabulary::new(1, vec![-1.0, 1.0]).unwrap();
        assert_eq!(voc.nearest(&[0.0]), 0);
    }

    #[test]
    fn kmeans_is_deterministic_and_sized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ds: Vec<Vec<f64>> = (0..500).map(|_| random_unit_vector(&mut rng, 8)).collect();
        let a = Vocabulary::train(&ds, 16, 10, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = Vocabulary::train(&ds, 16, 10, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.size(), 16);
        assert!(Vocabulary::train(&ds[..4], 16, 10, &mut rng).is_err());
    }

    #[test]
    fn cosine_of_self_is_one() {
        let b = Bow::from_entries(vec![(3, 0.5), (1, 0.25), (7, 0.25)]);
        assert!((b.cosine(&b) - 1.0).abs() < 1e-12);
        let o = Bow::from_entries(vec![(4, 1.0)]);
        assert_eq!(b.cosine(&o), 0.0);
    }
}
