//! Seeded synthetic pools for benchmarks and tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::Dataset;
use crate::error::Result;

/// Isotropic Gaussian clusters, one per class. Points are interleaved by
/// class (point `i` belongs to class `i % C`) so id order carries no
/// cluster structure.
#[derive(Debug, Clone)]
pub struct BlobSpec {
    pub centers: Vec<Vec<f64>>,
    pub std_dev: f64,
    pub points: usize,
    pub seed: u64,
}

impl BlobSpec {
    /// Four unit-variance Gaussians on the corners of a square with side 8.
    pub fn four_gaussians(points: usize, seed: u64) -> Self {
        BlobSpec {
            centers: vec![
                vec![-4.0, -4.0],
                vec![4.0, -4.0],
                vec![-4.0, 4.0],
                vec![4.0, 4.0],
            ],
            std_dev: 1.0,
            points,
            seed,
        }
    }

    pub fn generate(&self, name: &str) -> Result<Dataset> {
        let c = self.centers.len();
        let q = self.centers[0].len();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let normal = Normal::new(0.0, self.std_dev).expect("std_dev must be finite and >= 0");
        let mut features = Vec::with_capacity(self.points * q);
        let mut labels = Vec::with_capacity(self.points);
        for i in 0..self.points {
            let class = i % c;
            for d in 0..q {
                features.push(self.centers[class][d] + normal.sample(&mut rng));
            }
            labels.push(class);
        }
        Dataset::new(name, self.points, q, features, Some(labels), c.max(2))
    }
}

/// Uniform points in the unit hypercube with random labels.
pub fn uniform_cube(n: usize, q: usize, classes: usize, seed: u64) -> Result<Dataset> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features: Vec<f64> = (0..n * q).map(|_| rng.random::<f64>()).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    Dataset::new("uniform", n, q, features, Some(labels), classes)
}
