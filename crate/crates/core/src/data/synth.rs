//! Synthetic images with planted redundancy.
//!
//! Informative channels carry a class-specific Gaussian blob plus isotropic
//! pixel noise; noise channels carry a blob at a random, class-independent
//! location plus the same pixel noise. With equal-covariance Gaussian noise
//! the Bayes rule is linear in the informative channels:
//! `argmax_c <mu_c, x> - |mu_c|^2 / 2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{DatasetHandle, Split};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_samples: usize,
    pub n_informative: usize,
    pub n_noise: usize,
    pub class_count: usize,
    pub side: usize,
    pub blob_sigma: f32,
    pub amplitude: f32,
    pub noise_std: f32,
}

/// Blob centres on a 3x3 lattice per informative channel.
const LATTICE: usize = 3;

impl SynthSpec {
    pub fn new(seed: u64, n_samples: usize, n_informative: usize, n_noise: usize, class_count: usize) -> Self {
        Self {
            seed,
            n_samples,
            n_informative,
            n_noise,
            class_count,
            side: 16,
            blob_sigma: 1.5,
            amplitude: 1.0,
            noise_std: 0.4,
        }
    }

    pub fn channels(&self) -> usize {
        self.n_informative + self.n_noise
    }

    pub fn sample_shape(&self) -> [usize; 3] {
        [self.channels(), self.side, self.side]
    }

    fn validate(&self) -> Result<()> {
        if self.n_samples < 2 || self.n_informative == 0 || self.class_count < 2 {
            return Err(Error::InvalidArgument(
                "synthetic data needs >= 2 samples, >= 1 informative channel and >= 2 classes".into(),
            ));
        }
        if self.class_count > self.n_informative * LATTICE * LATTICE {
            return Err(Error::InvalidArgument(format!(
                "{} classes do not fit on {} informative channels ({} blob sites each)",
                self.class_count,
                self.n_informative,
                LATTICE * LATTICE
            )));
        }
        if self.side < 8 {
            return Err(Error::InvalidArgument("synthetic images must be at least 8x8".into()));
        }
        Ok(())
    }

    fn lattice_centre(&self, slot: usize) -> (f32, f32) {
        let step = self.side as f32 / LATTICE as f32;
        let at = |k: usize| step * (k as f32 + 0.5) - 0.5;
        (at(slot / LATTICE), at(slot % LATTICE))
    }

    fn paint_blob(&self, plane: &mut [f32], cy: f32, cx: f32) {
        let two_s2 = 2.0 * self.blob_sigma * self.blob_sigma;
        for y in 0..self.side {
            for x in 0..self.side {
                let d2 = (y as f32 - cy).powi(2) + (x as f32 - cx).powi(2);
                plane[y * self.side + x] += self.amplitude * (-d2 / two_s2).exp();
            }
        }
    }

    /// Noise-free class means over the full `(C, H, W)` sample.
    pub fn prototypes(&self) -> Result<Vec<Vec<f32>>> {
        self.validate()?;
        let plane = self.side * self.side;
        Ok((0..self.class_count)
            .map(|c| {
                let mut img = vec![0.0f32; self.channels() * plane];
                let ch = c % self.n_informative;
                let (cy, cx) = self.lattice_centre(c / self.n_informative);
                self.paint_blob(&mut img[ch * plane..(ch + 1) * plane], cy, cx);
                img
            })
            .collect())
    }

    /// Generates all `n_samples` samples with round-robin labels.
    pub fn generate(&self) -> Result<Split> {
        let protos = self.prototypes()?;
        let plane = self.side * self.side;
        let inf_len = self.n_informative * plane;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let pixel = Normal::new(0.0f32, self.noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let lo = self.blob_sigma;
        let hi = self.side as f32 - 1.0 - self.blob_sigma;
        let mut images = Vec::with_capacity(self.n_samples * self.channels() * plane);
        let mut labels = Vec::with_capacity(self.n_samples);
        for i in 0..self.n_samples {
            let label = i % self.class_count;
            let mut img = protos[label].clone();
            for ch in 0..self.n_noise {
                let (cy, cx) = (rng.random_range(lo..hi), rng.random_range(lo..hi));
                let start = inf_len + ch * plane;
                self.paint_blob(&mut img[start..start + plane], cy, cx);
            }
            for v in img.iter_mut() {
                *v += pixel.sample(&mut rng);
            }
            images.extend(img);
            labels.push(label);
        }
        Split::new(self.sample_shape(), images, labels)
    }

    /// Builds the dataset: the last fifth of the samples is the test split,
    /// the rest is the training pool from which validation is carved.
    pub fn build(&self) -> Result<DatasetHandle> {
        let all = self.generate()?;
        let n_test = (self.n_samples / 5).max(1);
        let n_pool = self.n_samples - n_test;
        let pool = all.subset(&(0..n_pool).collect::<Vec<_>>());
        let test = all.subset(&(n_pool..self.n_samples).collect::<Vec<_>>());
        DatasetHandle::from_pool(
            pool,
            test,
            self.class_count,
            self.seed,
            format!(
                "synth-redundant:seed={},n={},informative={},noise={},classes={}",
                self.seed, self.n_samples, self.n_informative, self.n_noise, self.class_count
            ),
            "none (gaussian blobs + pixel noise)",
        )
    }
}

/// Planted-redundancy dataset with default geometry (16x16 images).
pub fn synth_redundant(
    seed: u64,
    n_samples: usize,
    n_informative_channels: usize,
    n_noise_channels: usize,
    class_count: usize,
) -> Result<DatasetHandle> {
    SynthSpec::new(seed, n_samples, n_informative_channels, n_noise_channels, class_count).build()
}
