//! Small 3D encoder-decoder with skip connections.
//!
//! Level `l` of the encoder is one 3x3x3 convolution (`in -> widths[l]`)
//! followed by LeakyReLU; levels are separated by 2x average pooling. The
//! decoder mirrors it: nearest 2x upsampling, concatenation
//! `[upsampled, skip]`, convolution back to `widths[l]`, LeakyReLU. A 1x1
//! head and the logistic function produce per-voxel probabilities.
//!
//! Parameters live in one flat vector described by [`TensorSpec`]s, so
//! gradients, SGD updates and checkpoints all share the same layout.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ops::{self, KERNEL};
use super::SegmenterConfig;
use crate::error::{Error, Result};
use crate::reduce::pairwise_sum_by;
use crate::scalar::Scalar;

/// PET and CT.
pub const IN_CHANNELS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    cin: usize,
    cout: usize,
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyUNet<T> {
    config: SegmenterConfig,
    params: Vec<T>,
    layout: Vec<TensorSpec>,
}

/// Intermediate activations kept for the backward pass.
pub struct ForwardCache<T> {
    dims: Vec<[usize; 3]>,
    enc_in: Vec<Vec<T>>,
    enc_z: Vec<Vec<T>>,
    enc_a: Vec<Vec<T>>,
    dec_in: Vec<Vec<T>>,
    dec_z: Vec<Vec<T>>,
    dec_a: Vec<Vec<T>>,
    pub probs: Vec<T>,
}

pub fn layout_for(config: &SegmenterConfig) -> Vec<TensorSpec> {
    let w = &config.widths;
    let mut specs = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, shape: Vec<usize>| {
        let spec = TensorSpec { name, shape, offset };
        offset += spec.len();
        specs.push(spec);
    };
    for l in 0..config.levels {
        let cin = if l == 0 { IN_CHANNELS } else { w[l - 1] };
        push(format!("enc{l}.weight"), vec![w[l], cin, 3, 3, 3]);
        push(format!("enc{l}.bias"), vec![w[l]]);
    }
    for l in 0..config.levels - 1 {
        push(format!("dec{l}.weight"), vec![w[l], w[l + 1] + w[l], 3, 3, 3]);
        push(format!("dec{l}.bias"), vec![w[l]]);
    }
    push("head.weight".into(), vec![1, w[0]]);
    push("head.bias".into(), vec![1]);
    specs
}

impl<T: Scalar> ToyUNet<T> {
    /// All parameters zero: every output is exactly 0.5.
    pub fn zeros(config: &SegmenterConfig) -> Result<Self> {
        config.validate()?;
        let layout = layout_for(config);
        let n = layout.last().map_or(0, |s| s.offset + s.len());
        Ok(Self {
            config: config.clone(),
            params: vec![T::zero(); n],
            layout,
        })
    }

    /// He-normal weights from `config.seed`, zero biases.
    pub fn init(config: &SegmenterConfig) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for spec in &net.layout {
            if !spec.name.ends_with(".weight") {
                continue;
            }
            let fan_in: usize = spec.shape[1..].iter().product();
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
            for v in &mut net.params[spec.range()] {
                *v = T::of(normal.sample(&mut rng));
            }
        }
        Ok(net)
    }

    pub fn from_parts(config: &SegmenterConfig, params: Vec<T>) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        if params.len() != net.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.config
    }

    pub fn layout(&self) -> &[TensorSpec] {
        &self.layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn convs(&self) -> (Vec<Conv>, Vec<Conv>, usize, usize) {
        let w = &self.config.widths;
        let l = self.config.levels;
        let mut it = self.layout.iter();
        let mut take = |cin, cout| {
            let wt = it.next().expect("weight spec").offset;
            let b = it.next().expect("bias spec").offset;
            Conv { cin, cout, weight: wt, bias: b }
        };
        let enc: Vec<Conv> = (0..l)
            .map(|i| take(if i == 0 { IN_CHANNELS } else { w[i - 1] }, w[i]))
            .collect();
        let dec: Vec<Conv> = (0..l - 1).map(|i| take(w[i + 1] + w[i], w[i])).collect();
        let head = take(w[0], 1);
        (enc, dec, head.weight, head.bias)
    }

    fn check_input(&self, input: &[T], dims: [usize; 3]) -> Result<()> {
        if dims != self.config.patch_size || input.len() != IN_CHANNELS * ops::voxels(dims) {
            return Err(Error::ShapeMismatch {
                expected: vec![IN_CHANNELS, self.config.patch_size[0], self.config.patch_size[1], self.config.patch_size[2]],
                got: vec![input.len() / ops::voxels(dims).max(1), dims[0], dims[1], dims[2]],
            });
        }
        Ok(())
    }

    /// Probabilities for one two-channel patch of `config.patch_size`.
    pub fn forward(&self, input: &[T], dims: [usize; 3]) -> Result<Vec<T>> {
        Ok(self.forward_cached(input, dims)?.probs)
    }

    pub fn forward_cached(&self, input: &[T], dims: [usize; 3]) -> Result<ForwardCache<T>> {
        self.check_input(input, dims)?;
        let (enc, dec, hw, hb) = self.convs();
        let p = &self.params;
        let levels = self.config.levels;

        let mut level_dims = vec![dims];
        for l in 1..levels {
            level_dims.push(ops::half(level_dims[l - 1]));
        }

        let mut enc_in = Vec::with_capacity(levels);
        let mut enc_z = Vec::with_capacity(levels);
        let mut enc_a: Vec<Vec<T>> = Vec::with_capacity(levels);
        for (l, c) in enc.iter().enumerate() {
            let x = if l == 0 {
                input.to_vec()
            } else {
                ops::avg_pool2(&enc_a[l - 1], enc[l - 1].cout, level_dims[l - 1])
            };
            let z = ops::conv3_forward(
                &x,
                c.cin,
                level_dims[l],
                &p[c.weight..c.weight + c.cout * c.cin * KERNEL],
                &p[c.bias..c.bias + c.cout],
                c.cout,
            );
            enc_a.push(ops::leaky_forward(&z));
            enc_in.push(x);
            enc_z.push(z);
        }

        let mut dec_in = vec![Vec::new(); levels.saturating_sub(1)];
        let mut dec_z = vec![Vec::new(); levels.saturating_sub(1)];
        let mut dec_a: Vec<Vec<T>> = vec![Vec::new(); levels.saturating_sub(1)];
        for l in (0..levels - 1).rev() {
            let below = if l + 1 == levels - 1 { &enc_a[l + 1] } else { &dec_a[l + 1] };
            let below_c = self.config.widths[l + 1];
            let mut cat = ops::upsample2(below, below_c, level_dims[l + 1]);
            cat.extend_from_slice(&enc_a[l]);
            let c = dec[l];
            let z = ops::conv3_forward(
                &cat,
                c.cin,
                level_dims[l],
                &p[c.weight..c.weight + c.cout * c.cin * KERNEL],
                &p[c.bias..c.bias + c.cout],
                c.cout,
            );
            dec_a[l] = ops::leaky_forward(&z);
            dec_in[l] = cat;
            dec_z[l] = z;
        }

        let feat = if levels > 1 { &dec_a[0] } else { &enc_a[0] };
        let nv = ops::voxels(dims);
        let w0 = self.config.widths[0];
        let probs = (0..nv)
            .map(|v| {
                let mut z = p[hb];
                for c in 0..w0 {
                    z += p[hw + c] * feat[c * nv + v];
                }
                sigmoid(z)
            })
            .collect();

        Ok(ForwardCache {
            dims: level_dims,
            enc_in,
            enc_z,
            enc_a,
            dec_in,
            dec_z,
            dec_a,
            probs,
        })
    }

    /// Parameter gradient given `∂loss/∂p` for the cached forward pass.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_probs: &[T]) -> Vec<T> {
        let (enc, dec, hw, hb) = self.convs();
        let p = &self.params;
        let levels = self.config.levels;
        let w = &self.config.widths;
        let nv = ops::voxels(cache.dims[0]);
        let mut grad = vec![T::zero(); p.len()];

        let dlogit: Vec<T> = cache
            .probs
            .iter()
            .zip(grad_probs)
            .map(|(&pr, &g)| g * pr * (T::one() - pr))
            .collect();
        let feat = if levels > 1 { &cache.dec_a[0] } else { &cache.enc_a[0] };
        grad[hb] = pairwise_sum_by(nv, |v| dlogit[v]);
        for c in 0..w[0] {
            grad[hw + c] = pairwise_sum_by(nv, |v| dlogit[v] * feat[c * nv + v]);
        }
        let mut d_feat = vec![T::zero(); w[0] * nv];
        for c in 0..w[0] {
            let wc = p[hw + c];
            for v in 0..nv {
                d_feat[c * nv + v] = wc * dlogit[v];
            }
        }

        let mut conv_back = |c: Conv, input: &[T], z: &[T], mut d_a: Vec<T>, dims: [usize; 3], need_input: bool| {
            ops::leaky_backward(z, &mut d_a);
            let g = ops::conv3_backward(
                input,
                c.cin,
                dims,
                &p[c.weight..c.weight + c.cout * c.cin * KERNEL],
                c.cout,
                &d_a,
                need_input,
            );
            grad[c.weight..c.weight + g.weight.len()].copy_from_slice(&g.weight);
            grad[c.bias..c.bias + g.bias.len()].copy_from_slice(&g.bias);
            g.input
        };

        // decoder, top level first
        let mut d_skip: Vec<Vec<T>> = vec![Vec::new(); levels.saturating_sub(1)];
        let mut d_h = d_feat;
        for l in 0..levels - 1 {
            let d_cat = conv_back(dec[l], &cache.dec_in[l], &cache.dec_z[l], d_h, cache.dims[l], true)
                .expect("input gradient requested");
            let up_len = w[l + 1] * ops::voxels(cache.dims[l]);
            d_skip[l] = d_cat[up_len..].to_vec();
            d_h = ops::upsample2_backward(&d_cat[..up_len], w[l + 1], cache.dims[l + 1]);
        }

        // encoder, bottleneck first
        let mut d_a = d_h;
        for l in (0..levels).rev() {
            if l < levels - 1 {
                let mut from_pool = d_a;
                for (a, s) in from_pool.iter_mut().zip(&d_skip[l]) {
                    *a += *s;
                }
                d_a = from_pool;
            }
            let d_in = conv_back(enc[l], &cache.enc_in[l], &cache.enc_z[l], d_a, cache.dims[l], l > 0);
            d_a = match d_in {
                Some(d) => ops::avg_pool2_backward(&d, enc[l - 1].cout, cache.dims[l - 1]),
                None => Vec::new(),
            };
        }
        grad
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn cfg(patch: usize, widths: Vec<usize>) -> SegmenterConfig {
        SegmenterConfig {
            patch_size: [patch; 3],
            levels: widths.len(),
            widths,
            seed: 11,
        }
    }

    fn input(patch: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..2 * patch * patch * patch).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    #[test]
    fn zero_network_outputs_half() {
        let c = cfg(8, vec![3, 4]);
        let net = ToyUNet::<f64>::zeros(&c).unwrap();
        let out = net.forward(&input(8, 1), [8; 3]).unwrap();
        assert!(out.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn deterministic_and_in_unit_interval() {
        let c = cfg(8, vec![3, 4]);
        let a = ToyUNet::<f64>::init(&c).unwrap();
        let b = ToyUNet::<f64>::init(&c).unwrap();
        let x = input(8, 2);
        let pa = a.forward(&x, [8; 3]).unwrap();
        assert_eq!(pa, b.forward(&x, [8; 3]).unwrap());
        assert!(pa.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn output_shape_for_several_configs() {
        for (patch, widths) in [(8, vec![2]), (8, vec![2, 3]), (16, vec![2, 2, 2]), (8, vec![4, 2]), (16, vec![1, 2])] {
            let c = cfg(patch, widths);
            let net = ToyUNet::<f64>::init(&c).unwrap();
            let out = net.forward(&input(patch, 3), [patch; 3]).unwrap();
            assert_eq!(out.len(), patch * patch * patch);
        }
    }

    #[test]
    fn wrong_patch_is_rejected() {
        let net = ToyUNet::<f64>::zeros(&cfg(8, vec![2, 2])).unwrap();
        assert!(matches!(net.forward(&input(4, 0), [4; 3]), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn layout_is_contiguous() {
        let net = ToyUNet::<f32>::zeros(&cfg(8, vec![4, 8])).unwrap();
        let mut expect = 0;
        for s in net.layout() {
            assert_eq!(s.offset, expect);
            expect += s.len();
        }
        assert_eq!(expect, net.num_params());
        // enc0 2->4, enc1 4->8, dec0 12->4, head 4->1
        assert_eq!(net.num_params(), 4 * 2 * 27 + 4 + 8 * 4 * 27 + 8 + 4 * 12 * 27 + 4 + 4 + 1);
    }
}
