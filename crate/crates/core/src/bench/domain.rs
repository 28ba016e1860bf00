//! Synthetic input domains: eight Gaussian classes in a low-dimensional
//! space, labelled by the nearest class center.

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from;

pub const NUM_CLASSES: usize = 8;

/// One input domain with its lower labelling function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub domain_id: usize,
    /// Dimension of the class centers.
    pub base_dim: usize,
    pub centers: Vec<Vec<f32>>,
    pub noise_scale: f32,
    pub seed: u64,
    /// Optional `input_dim x base_dim` matrix with orthonormal columns that
    /// embeds samples into a different input space.
    pub embedding: Option<Vec<Vec<f32>>>,
}

impl DomainSpec {
    /// Draws centers from a standard normal until every pair is at least
    /// `4 * noise_scale` apart.
    pub fn generate(domain_id: usize, base_dim: usize, noise_scale: f32, seed: u64) -> Result<Self> {
        if base_dim == 0 || !(noise_scale > 0.0) {
            return Err(Error::InvalidArgument("domain needs a positive dimension and noise scale".into()));
        }
        let mut rng = rng_from(&[b"domain", &seed.to_le_bytes(), &(domain_id as u64).to_le_bytes()]);
        for _ in 0..10_000 {
            let centers: Vec<Vec<f32>> = (0..NUM_CLASSES)
                .map(|_| (0..base_dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect())
                .collect();
            let ok = (0..NUM_CLASSES)
                .all(|a| (0..a).all(|b| dist2(&centers[a], &centers[b]).sqrt() >= 4.0 * noise_scale));
            if ok {
                return Ok(Self {
                    domain_id,
                    base_dim,
                    centers,
                    noise_scale,
                    seed,
                    embedding: None,
                });
            }
        }
        Err(Error::InvalidArgument(format!(
            "could not place {NUM_CLASSES} centers {}-noise apart in {base_dim} dimensions",
            4.0 * noise_scale
        )))
    }

    /// The same domain seen through a fixed random linear embedding into
    /// `input_dim` dimensions.
    pub fn embedded(mut self, input_dim: usize) -> Result<Self> {
        if input_dim < self.base_dim {
            return Err(Error::InvalidArgument("embedding cannot reduce the dimension".into()));
        }
        let mut rng = rng_from(&[b"embedding", &self.seed.to_le_bytes(), &(self.domain_id as u64).to_le_bytes()]);
        let g = DMatrix::from_fn(input_dim, self.base_dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = g.qr().q();
        self.embedding = Some(
            (0..input_dim)
                .map(|r| (0..self.base_dim).map(|c| q[(r, c)] as f32).collect())
                .collect(),
        );
        Ok(self)
    }

    pub fn input_dim(&self) -> usize {
        self.embedding.as_ref().map_or(self.base_dim, Vec::len)
    }

    fn nearest(&self, x: &[f32]) -> usize {
        let mut best = 0;
        let mut best_d = f32::INFINITY;
        for (k, c) in self.centers.iter().enumerate() {
            let d = dist2(x, c);
            if d < best_d {
                best = k;
                best_d = d;
            }
        }
        best
    }

    /// Lower labelling function on an input of this domain.
    pub fn label(&self, x: &[f32]) -> usize {
        match &self.embedding {
            None => self.nearest(x),
            Some(e) => {
                let base: Vec<f32> = (0..self.base_dim)
                    .map(|c| e.iter().zip(x).map(|(row, &xi)| row[c] * xi).sum())
                    .collect();
                self.nearest(&base)
            }
        }
    }

    /// A sample of class `class`, drawn until the nearest center agrees.
    pub fn sample<R: Rng>(&self, class: usize, rng: &mut R) -> Vec<f32> {
        let center = &self.centers[class];
        let base = loop {
            let x: Vec<f32> = center
                .iter()
                .map(|&c| c + self.noise_scale * rng.sample::<f32, _>(StandardNormal))
                .collect();
            if self.nearest(&x) == class {
                break x;
            }
        };
        match &self.embedding {
            None => base,
            Some(e) => e.iter().map(|row| row.iter().zip(&base).map(|(a, b)| a * b).sum()).collect(),
        }
    }

    /// `n` samples with balanced classes (class `i % 8` for row `i`).
    pub fn sample_balanced<R: Rng>(&self, n: usize, rng: &mut R) -> (Array2<f32>, Vec<u8>) {
        let mut x = Array2::zeros((n, self.input_dim()));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % NUM_CLASSES;
            let s = self.sample(c, rng);
            x.row_mut(i).assign(&ndarray::ArrayView1::from(&s[..]));
            labels.push(c as u8);
        }
        (x, labels)
    }
}

fn dist2(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn centers_are_separated() {
        let d = DomainSpec::generate(3, 16, 0.9, 11).unwrap();
        for a in 0..8 {
            for b in 0..a {
                assert!(dist2(&d.centers[a], &d.centers[b]).sqrt() >= 3.6);
            }
        }
        assert_eq!(d, DomainSpec::generate(3, 16, 0.9, 11).unwrap());
    }

    #[test]
    fn samples_carry_their_class() {
        let d = DomainSpec::generate(1, 16, 1.0, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for c in 0..8 {
            for _ in 0..20 {
                assert_eq!(d.label(&d.sample(c, &mut rng)), c);
            }
        }
    }

    #[test]
    fn embedding_preserves_labels() {
        let d = DomainSpec::generate(2, 16, 1.0, 5).unwrap().embedded(32).unwrap();
        assert_eq!(d.input_dim(), 32);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for c in 0..8 {
            let x = d.sample(c, &mut rng);
            assert_eq!(x.len(), 32);
            assert_eq!(d.label(&x), c);
        }
    }
}
