//! Synthetic Gaussian-cluster classification data.
//!
//! Class centers are drawn from `N(0, center_scale^2)` per coordinate, then
//! each sample is its class center plus `N(0, spread^2)` noise. Samples are
//! interleaved by class so every split is balanced.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub holdout_per_class: usize,
    pub center_scale: f64,
    pub spread: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            dim: 8,
            train_per_class: 64,
            holdout_per_class: 64,
            center_scale: 1.0,
            spread: 0.8,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub train: Split,
    pub holdout: Split,
}

impl Dataset {
    pub fn generate(config: &DatasetConfig) -> Result<Self> {
        if config.classes < 2 || config.dim == 0 {
            return Err(Error::InvalidConfig(
                "dataset needs at least 2 classes and 1 dimension".into(),
            ));
        }
        if !(config.spread >= 0.0 && config.center_scale > 0.0) {
            return Err(Error::InvalidConfig(
                "spread must be >= 0 and center_scale > 0".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let center_dist = Normal::new(0.0, config.center_scale).expect("checked scale");
        let centers: Vec<Vec<f64>> = (0..config.classes)
            .map(|_| {
                (0..config.dim)
                    .map(|_| center_dist.sample(&mut rng))
                    .collect()
            })
            .collect();
        let noise = Normal::new(0.0, config.spread).expect("checked spread");

        let mut draw = |per_class: usize| {
            let mut split = Split {
                inputs: Vec::with_capacity(per_class * config.classes),
                labels: Vec::with_capacity(per_class * config.classes),
            };
            for _ in 0..per_class {
                for (label, center) in centers.iter().enumerate() {
                    split
                        .inputs
                        .push(center.iter().map(|c| c + noise.sample(&mut rng)).collect());
                    split.labels.push(label);
                }
            }
            split
        };
        let train = draw(config.train_per_class);
        let holdout = draw(config.holdout_per_class);
        Ok(Self {
            config: config.clone(),
            train,
            holdout,
        })
    }
}
