//! Labeled sample collections fed to the trainer.

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Sample {
    /// One network input of shape (C, T, H, W).
    pub input: Tensor,
    pub label: usize,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        Dataset { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Stacks the referenced samples into a batch tensor and a label vector.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        if indices.is_empty() {
            return Err(CoreError::EmptyDataset);
        }
        let shape = self.samples[indices[0]].input.shape().to_vec();
        let mut data = Vec::with_capacity(indices.len() * self.samples[indices[0]].input.numel());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = &self.samples[i];
            if s.input.shape() != shape {
                return Err(CoreError::ShapeMismatch {
                    op: "batch",
                    left: shape,
                    right: s.input.shape().to_vec(),
                });
            }
            data.extend_from_slice(s.input.data());
            labels.push(s.label);
        }
        let mut batch_shape = vec![indices.len()];
        batch_shape.extend_from_slice(&shape);
        Ok((Tensor::new(&batch_shape, data)?, labels))
    }

    /// Deterministic split: every k-th sample (by a seeded permutation) goes
    /// to the held-out side, at the requested fraction.
    pub fn split(&self, holdout_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = (0..self.len()).collect();
        fisher_yates(&mut idx, &mut rng);
        let n_holdout = ((self.len() as f64) * holdout_fraction).round() as usize;
        let (holdout, train) = idx.split_at(n_holdout.min(self.len()));
        let pick = |ids: &[usize]| {
            Dataset::new(ids.iter().map(|&i| self.samples[i].clone()).collect())
        };
        (pick(train), pick(holdout))
    }
}

pub(crate) fn fisher_yates<R: rand::Rng>(idx: &mut [usize], rng: &mut R) {
    for i in (1..idx.len()).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
}
