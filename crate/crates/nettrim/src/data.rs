//! In-memory image datasets, deterministic splits and batch serving.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Labeled images, shape `(N, C, H, W)` with pixel values in [0, 1].
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<u8>) -> Result<Self> {
        let shape = images.shape();
        if shape.len() != 4 {
            return Err(Error::Input(format!(
                "dataset images must be (N, C, H, W), got {shape:?}"
            )));
        }
        if shape[0] != labels.len() {
            return Err(Error::Input(format!(
                "{} images but {} labels",
                shape[0],
                labels.len()
            )));
        }
        if let Some(&bad) = images
            .as_slice()
            .iter()
            .find(|&&p| !(0.0..=1.0).contains(&p))
        {
            return Err(Error::Input(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(Dataset { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Per-example shape `(C, H, W)`.
    pub fn example_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    /// Gather a new dataset from example indices (copies pixels).
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let shape = self.images.shape();
        let per_ex: usize = shape[1..].iter().product();
        let src = self.images.as_slice();
        let mut data = Vec::with_capacity(indices.len() * per_ex);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Input(format!(
                    "index {i} out of range for dataset of {}",
                    self.len()
                )));
            }
            data.extend_from_slice(&src[i * per_ex..(i + 1) * per_ex]);
            labels.push(self.labels[i]);
        }
        let mut new_shape = shape.to_vec();
        new_shape[0] = indices.len();
        Ok(Dataset {
            images: Tensor::new(new_shape, data)?,
            labels,
        })
    }
}

/// How to carve the statistics set out of the training set.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub stat_set_size: usize,
    pub seed: u64,
}

/// Seeded disjoint index split; both halves keep ascending original order.
pub(crate) fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if spec.stat_set_size < 1 {
        return Err(Error::Input("stat_set_size must be >= 1".into()));
    }
    if spec.stat_set_size >= n {
        return Err(Error::Input(format!(
            "stat_set_size {} must be smaller than the dataset ({n})",
            spec.stat_set_size
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let mut stat: Vec<usize> = order[..spec.stat_set_size].to_vec();
    let mut rest: Vec<usize> = order[spec.stat_set_size..].to_vec();
    stat.sort_unstable();
    rest.sort_unstable();
    Ok((rest, stat))
}

/// Split a training set into (remainder, statistics set). The statistics
/// set is where zero-activation rates get measured; it never touches the
/// test set.
pub fn split_stat_set(train: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let (rest, stat) = split_indices(train.len(), spec)?;
    Ok((train.subset(&rest)?, train.subset(&stat)?))
}

/// One served batch (owned copies).
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<u8>,
}

/// Ordered batch sequence over a dataset. Without a seed the original
/// order is kept; with a seed, a deterministic permutation. The final
/// batch may be short.
pub fn batches(
    dataset: &Dataset,
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> Result<BatchIter<'_>> {
    if batch_size < 1 {
        return Err(Error::Input("batch_size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    if let Some(seed) = shuffle_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
    }
    Ok(BatchIter {
        dataset,
        order,
        batch_size,
        pos: 0,
    })
}

pub struct BatchIter<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        let ds = self
            .dataset
            .subset(idx)
            .expect("indices in range by construction");
        Some(Batch {
            images: ds.images,
            labels: ds.labels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dataset whose examples are identifiable by their first pixel.
    fn tagged_dataset(n: usize) -> Dataset {
        let mut data = vec![0.0f32; n * 4];
        for i in 0..n {
            data[i * 4] = i as f32 / n as f32;
        }
        Dataset::new(
            Tensor::new(vec![n, 1, 2, 2], data).unwrap(),
            (0..n).map(|i| (i % 10) as u8).collect(),
        )
        .unwrap()
    }

    #[test]
    fn batch_sizes_with_short_tail() {
        let ds = tagged_dataset(10);
        let sizes: Vec<usize> = batches(&ds, 4, None).unwrap().map(|b| b.labels.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn unshuffled_batches_preserve_order() {
        let ds = tagged_dataset(9);
        let labels: Vec<u8> = batches(&ds, 4, None)
            .unwrap()
            .flat_map(|b| b.labels)
            .collect();
        assert_eq!(labels, ds.labels());
    }

    #[test]
    fn same_seed_same_order() {
        let ds = tagged_dataset(32);
        let a: Vec<u8> = batches(&ds, 5, Some(9)).unwrap().flat_map(|b| b.labels).collect();
        let b: Vec<u8> = batches(&ds, 5, Some(9)).unwrap().flat_map(|b| b.labels).collect();
        assert_eq!(a, b);
        let c: Vec<u8> = batches(&ds, 5, Some(10)).unwrap().flat_map(|b| b.labels).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn shuffled_batches_are_a_permutation() {
        let ds = tagged_dataset(23);
        let mut tags: Vec<f32> = batches(&ds, 4, Some(3))
            .unwrap()
            .flat_map(|b| {
                let per_ex = 4;
                (0..b.labels.len())
                    .map(|i| b.images.as_slice()[i * per_ex])
                    .collect::<Vec<_>>()
            })
            .collect();
        tags.sort_by(f32::total_cmp);
        let want: Vec<f32> = (0..23).map(|i| i as f32 / 23.0).collect();
        assert_eq!(tags, want);
    }

    #[test]
    fn split_is_disjoint_and_exact() {
        let spec = SplitSpec {
            stat_set_size: 10_000,
            seed: 7,
        };
        let (rest, stat) = split_indices(60_000, &spec).unwrap();
        assert_eq!(rest.len(), 50_000);
        assert_eq!(stat.len(), 10_000);
        let mut all: Vec<usize> = rest.iter().chain(stat.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..60_000).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let spec = SplitSpec {
            stat_set_size: 5,
            seed: 11,
        };
        assert_eq!(
            split_indices(50, &spec).unwrap(),
            split_indices(50, &spec).unwrap()
        );
    }

    #[test]
    fn split_rejects_oversized_stat_set() {
        let ds = tagged_dataset(60);
        let spec = SplitSpec {
            stat_set_size: 60,
            seed: 0,
        };
        assert!(split_stat_set(&ds, &spec).is_err());
    }

    #[test]
    fn pixels_outside_unit_range_are_rejected() {
        let t = Tensor::new(vec![1, 1, 1, 2], vec![0.5, 1.5]).unwrap();
        assert!(Dataset::new(t, vec![0]).is_err());
    }
}
