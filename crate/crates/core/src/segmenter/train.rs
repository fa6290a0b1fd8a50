use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::net::ToyUNet;
use super::patches::{sample_patches, PatchBatch};
use super::{SegmenterConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::loss::{compound_gradient_slice, compound_loss_slice, LossParams};
use crate::reduce::pairwise_sum;
use crate::scalar::Scalar;
use crate::volume::{ImageVolume, LabelVolume};

/// One preprocessed study: PET and CT on a shared grid plus its lesion mask.
#[derive(Debug, Clone)]
pub struct TrainingCase<T> {
    pub pet: ImageVolume<T>,
    pub ct: ImageVolume<T>,
    pub mask: LabelVolume,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean patch loss per epoch, evaluated before each batch's update.
    pub losses: Vec<f64>,
    pub patches: usize,
}

/// Loss and parameter gradient for one patch.
pub fn patch_loss_and_grad<T: Scalar>(net: &ToyUNet<T>, image: &[T], label: &[T], loss: &LossParams) -> Result<(T, Vec<T>)> {
    let cache = net.forward_cached(image, net.config().patch_size)?;
    let l = compound_loss_slice(&cache.probs, label, loss);
    let mut dp = vec![T::zero(); label.len()];
    compound_gradient_slice(&cache.probs, label, loss, &mut dp);
    Ok((l, net.backward(&cache, &dp)))
}

pub fn patch_loss<T: Scalar>(net: &ToyUNet<T>, image: &[T], label: &[T], loss: &LossParams) -> Result<T> {
    let p = net.forward(image, net.config().patch_size)?;
    Ok(compound_loss_slice(&p, label, loss))
}

/// Fixed patch pool: `patches_per_case` per study, each study with its own
/// derived seed.
pub fn build_pool<T: Scalar>(data: &[TrainingCase<T>], patch: [usize; 3], tc: &TrainConfig) -> Result<PatchBatch<T>> {
    let mut pool = PatchBatch {
        patch_size: patch,
        images: Vec::new(),
        labels: Vec::new(),
        origins: Vec::new(),
        seed: tc.seed,
    };
    for (i, case) in data.iter().enumerate() {
        let seed = tc.seed.wrapping_add((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let b = sample_patches(&case.pet, &case.ct, &case.mask, patch, tc.foreground_fraction, tc.patches_per_case, seed)?;
        pool.images.extend(b.images);
        pool.labels.extend(b.labels);
        pool.origins.extend(b.origins);
    }
    Ok(pool)
}

/// Trains a freshly initialized network.
pub fn train<T: Scalar>(config: &SegmenterConfig, data: &[TrainingCase<T>], tc: &TrainConfig) -> Result<(ToyUNet<T>, TrainReport)> {
    let net = ToyUNet::init(config)?;
    train_from(net, data, tc)
}

/// Plain minibatch SGD. Within a batch, per-patch gradients are computed
/// concurrently and reduced in batch order.
pub fn train_from<T: Scalar>(mut net: ToyUNet<T>, data: &[TrainingCase<T>], tc: &TrainConfig) -> Result<(ToyUNet<T>, TrainReport)> {
    tc.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pool = build_pool(data, net.config().patch_size, tc)?;
    if pool.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let lr = T::of(tc.learning_rate);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut losses = Vec::with_capacity(tc.epochs);
    let mut patch_losses = vec![T::zero(); pool.len()];

    for epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(tc.batch_size) {
            let results: Vec<(T, Vec<T>)> = batch
                .par_iter()
                .map(|&i| patch_loss_and_grad(&net, &pool.images[i], &pool.labels[i], &tc.loss))
                .collect::<Result<_>>()?;
            let scale = lr / T::of_usize(batch.len());
            let mut total = vec![T::zero(); net.num_params()];
            for (&i, (l, g)) in batch.iter().zip(&results) {
                if !l.is_finite() {
                    return Err(Error::DivergenceDetected { epoch, loss: l.as_f64() });
                }
                patch_losses[i] = *l;
                for (t, &gv) in total.iter_mut().zip(g) {
                    *t += gv;
                }
            }
            for (p, g) in net.params_mut().iter_mut().zip(&total) {
                *p -= scale * *g;
            }
        }
        let mean = pairwise_sum(&patch_losses).as_f64() / pool.len() as f64;
        if !mean.is_finite() || net.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::DivergenceDetected { epoch, loss: mean });
        }
        losses.push(mean);
    }
    Ok((
        net,
        TrainReport {
            losses,
            patches: pool.len(),
        },
    ))
}
