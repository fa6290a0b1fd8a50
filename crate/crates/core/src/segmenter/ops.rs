//! Dense 3D operators with hand-written backward passes.
//!
//! Tensors are channel-major: `data[((c * nz + k) * ny + j) * nx + i]` for
//! spatial dims `[nx, ny, nz]`. Convolutions are 3x3x3 with zero padding.

use rayon::prelude::*;

use crate::reduce::pairwise_sum;
use crate::scalar::Scalar;

pub const KERNEL: usize = 27;
pub const LEAKY_SLOPE: f64 = 0.01;

#[inline]
pub fn voxels(dims: [usize; 3]) -> usize {
    dims[0] * dims[1] * dims[2]
}

/// Zero-bordered copy layout: one voxel of padding on every side, so each
/// kernel tap becomes a single contiguous shift over the padded buffer.
struct Padded {
    dims: [usize; 3],
    len: usize,
    /// Range of padded indices spanning all interior voxels.
    lo: usize,
    hi: usize,
}

impl Padded {
    fn new(dims: [usize; 3]) -> Self {
        let [px, py, pz] = dims.map(|d| d + 2);
        let lo = 1 + px + px * py;
        let hi = dims[0] + px * (dims[1] + py * dims[2]) + 1;
        Self {
            dims,
            len: px * py * pz,
            lo,
            hi,
        }
    }

    #[inline]
    fn tap_offset(&self, t: usize) -> isize {
        let [px, py] = [self.dims[0] as isize + 2, self.dims[1] as isize + 2];
        let [dx, dy, dz] = [(t % 3) as isize - 1, ((t / 3) % 3) as isize - 1, (t / 9) as isize - 1];
        dx + px * (dy + py * dz)
    }

    fn pad<T: Scalar>(&self, src: &[T], channels: usize) -> Vec<T> {
        let [nx, ny, nz] = self.dims;
        let nv = nx * ny * nz;
        let (px, py) = (nx + 2, ny + 2);
        let mut out = vec![T::zero(); channels * self.len];
        for c in 0..channels {
            for k in 0..nz {
                for j in 0..ny {
                    let s = c * nv + (k * ny + j) * nx;
                    let d = c * self.len + ((k + 1) * py + j + 1) * px + 1;
                    out[d..d + nx].copy_from_slice(&src[s..s + nx]);
                }
            }
        }
        out
    }

    fn unpad_into<T: Scalar>(&self, src: &[T], dst: &mut [T]) {
        let [nx, ny, nz] = self.dims;
        let (px, py) = (nx + 2, ny + 2);
        for k in 0..nz {
            for j in 0..ny {
                let s = ((k + 1) * py + j + 1) * px + 1;
                let d = (k * ny + j) * nx;
                dst[d..d + nx].copy_from_slice(&src[s..s + nx]);
            }
        }
    }
}

#[inline]
fn axpy<T: Scalar>(w: T, x: &[T], y: &mut [T]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y += w * x;
    }
}

/// Dot product with eight fixed interleaved accumulators.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `weight` is `[cout][cin][27]` with taps ordered x-fastest.
pub fn conv3_forward<T: Scalar>(input: &[T], cin: usize, dims: [usize; 3], weight: &[T], bias: &[T], cout: usize) -> Vec<T> {
    let nv = voxels(dims);
    debug_assert_eq!(input.len(), cin * nv);
    debug_assert_eq!(weight.len(), cout * cin * KERNEL);
    let pd = Padded::new(dims);
    let xp = pd.pad(input, cin);
    let (lo, hi) = (pd.lo, pd.hi);
    let mut out = vec![T::zero(); cout * nv];
    out.par_chunks_mut(nv).enumerate().for_each(|(o, out_o)| {
        let mut acc = vec![bias[o]; pd.len];
        for c in 0..cin {
            let x_c = &xp[c * pd.len..(c + 1) * pd.len];
            for t in 0..KERNEL {
                let w = weight[(o * cin + c) * KERNEL + t];
                let off = pd.tap_offset(t);
                let src = &x_c[(lo as isize + off) as usize..(hi as isize + off) as usize];
                axpy(w, src, &mut acc[lo..hi]);
            }
        }
        pd.unpad_into(&acc, out_o);
    });
    out
}

pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv3_backward<T: Scalar>(
    input: &[T],
    cin: usize,
    dims: [usize; 3],
    weight: &[T],
    cout: usize,
    grad_out: &[T],
    need_input: bool,
) -> ConvGrads<T> {
    let nv = voxels(dims);
    let bias: Vec<T> = (0..cout).map(|o| pairwise_sum(&grad_out[o * nv..(o + 1) * nv])).collect();
    let pd = Padded::new(dims);
    let (lo, hi) = (pd.lo, pd.hi);
    let xp = pd.pad(input, cin);
    // zero border: padded positions contribute nothing to the sums below
    let gp = pd.pad(grad_out, cout);

    let mut gw = vec![T::zero(); cout * cin * KERNEL];
    gw.par_chunks_mut(cin * KERNEL).enumerate().for_each(|(o, gw_o)| {
        let g_o = &gp[o * pd.len + lo..o * pd.len + hi];
        for c in 0..cin {
            let x_c = &xp[c * pd.len..(c + 1) * pd.len];
            for t in 0..KERNEL {
                let off = pd.tap_offset(t);
                let src = &x_c[(lo as isize + off) as usize..(hi as isize + off) as usize];
                gw_o[c * KERNEL + t] = dot(g_o, src);
            }
        }
    });

    let input_grad = need_input.then(|| {
        let mut gi = vec![T::zero(); cin * nv];
        gi.par_chunks_mut(nv).enumerate().for_each(|(c, gi_c)| {
            let mut acc = vec![T::zero(); pd.len];
            for o in 0..cout {
                let g_o = &gp[o * pd.len + lo..o * pd.len + hi];
                for t in 0..KERNEL {
                    let w = weight[(o * cin + c) * KERNEL + t];
                    let off = pd.tap_offset(t);
                    let dst = &mut acc[(lo as isize + off) as usize..(hi as isize + off) as usize];
                    axpy(w, g_o, dst);
                }
            }
            pd.unpad_into(&acc, gi_c);
        });
        gi
    });

    ConvGrads {
        input: input_grad,
        weight: gw,
        bias,
    }
}

pub fn leaky_forward<T: Scalar>(z: &[T]) -> Vec<T> {
    let s = T::of(LEAKY_SLOPE);
    z.iter().map(|&v| if v > T::zero() { v } else { s * v }).collect()
}

/// Multiplies `grad` by the activation derivative at `z`, in place.
pub fn leaky_backward<T: Scalar>(z: &[T], grad: &mut [T]) {
    let s = T::of(LEAKY_SLOPE);
    for (g, &v) in grad.iter_mut().zip(z) {
        if v <= T::zero() {
            *g *= s;
        }
    }
}

pub fn half(dims: [usize; 3]) -> [usize; 3] {
    dims.map(|d| d / 2)
}

/// 2x2x2 average pooling; `dims` must be even.
pub fn avg_pool2<T: Scalar>(input: &[T], channels: usize, dims: [usize; 3]) -> Vec<T> {
    let [nx, ny, _] = dims;
    let h = half(dims);
    let (nvi, nvo) = (voxels(dims), voxels(h));
    let eighth = T::of(0.125);
    let mut out = vec![T::zero(); channels * nvo];
    for c in 0..channels {
        let src = &input[c * nvi..(c + 1) * nvi];
        let dst = &mut out[c * nvo..(c + 1) * nvo];
        for k in 0..h[2] {
            for j in 0..h[1] {
                for i in 0..h[0] {
                    let mut s = T::zero();
                    for dz in 0..2 {
                        for dy in 0..2 {
                            let row = ((2 * k + dz) * ny + 2 * j + dy) * nx + 2 * i;
                            s += src[row] + src[row + 1];
                        }
                    }
                    dst[(k * h[1] + j) * h[0] + i] = s * eighth;
                }
            }
        }
    }
    out
}

/// Gradient of [`avg_pool2`]; `dims` are the pre-pooling dims.
pub fn avg_pool2_backward<T: Scalar>(grad_out: &[T], channels: usize, dims: [usize; 3]) -> Vec<T> {
    let [nx, ny, nz] = dims;
    let h = half(dims);
    let (nvi, nvo) = (voxels(dims), voxels(h));
    let eighth = T::of(0.125);
    let mut out = vec![T::zero(); channels * nvi];
    for c in 0..channels {
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let g = grad_out[c * nvo + ((k / 2) * h[1] + j / 2) * h[0] + i / 2];
                    out[c * nvi + (k * ny + j) * nx + i] = g * eighth;
                }
            }
        }
    }
    out
}

/// Nearest-neighbour 2x upsampling from `small` dims.
pub fn upsample2<T: Scalar>(input: &[T], channels: usize, small: [usize; 3]) -> Vec<T> {
    let big = small.map(|d| d * 2);
    let (nvs, nvb) = (voxels(small), voxels(big));
    let mut out = vec![T::zero(); channels * nvb];
    for c in 0..channels {
        for k in 0..big[2] {
            for j in 0..big[1] {
                for i in 0..big[0] {
                    out[c * nvb + (k * big[1] + j) * big[0] + i] =
                        input[c * nvs + ((k / 2) * small[1] + j / 2) * small[0] + i / 2];
                }
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Scalar>(grad_out: &[T], channels: usize, small: [usize; 3]) -> Vec<T> {
    let big = small.map(|d| d * 2);
    let (nvs, nvb) = (voxels(small), voxels(big));
    let mut out = vec![T::zero(); channels * nvs];
    for c in 0..channels {
        for k in 0..small[2] {
            for j in 0..small[1] {
                for i in 0..small[0] {
                    let mut s = T::zero();
                    for dz in 0..2 {
                        for dy in 0..2 {
                            let row = c * nvb + ((2 * k + dz) * big[1] + 2 * j + dy) * big[0] + 2 * i;
                            s += grad_out[row] + grad_out[row + 1];
                        }
                    }
                    out[c * nvs + (k * small[1] + j) * small[0] + i] = s;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Direct 7-loop convolution.
    fn conv_oracle(input: &[f64], cin: usize, dims: [usize; 3], w: &[f64], b: &[f64], cout: usize) -> Vec<f64> {
        let [nx, ny, nz] = dims;
        let nv = nx * ny * nz;
        let mut out = vec![0.0; cout * nv];
        for o in 0..cout {
            for k in 0..nz {
                for j in 0..ny {
                    for i in 0..nx {
                        let mut s = b[o];
                        for c in 0..cin {
                            for dz in 0..3 {
                                for dy in 0..3 {
                                    for dx in 0..3 {
                                        let (x, y, z) = (i + dx, j + dy, k + dz);
                                        if x < 1 || y < 1 || z < 1 || x > nx || y > ny || z > nz {
                                            continue;
                                        }
                                        let v = input[c * nv + ((z - 1) * ny + y - 1) * nx + x - 1];
                                        s += w[(o * cin + c) * 27 + dz * 9 + dy * 3 + dx] * v;
                                    }
                                }
                            }
                        }
                        out[o * nv + (k * ny + j) * nx + i] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dims = [5, 4, 3];
        let (cin, cout) = (2, 3);
        let x = random(cin * 60, &mut rng);
        let w = random(cout * cin * 27, &mut rng);
        let b = random(cout, &mut rng);
        let fast = conv3_forward(&x, cin, dims, &w, &b, cout);
        let slow = conv_oracle(&x, cin, dims, &w, &b, cout);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), g> = <x, conv^T(g)> + <b, sum g>, and dW by finite linearity
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dims = [4, 3, 5];
        let (cin, cout) = (3, 2);
        let nv = 60;
        let x = random(cin * nv, &mut rng);
        let w = random(cout * cin * 27, &mut rng);
        let zero_b = vec![0.0; cout];
        let g = random(cout * nv, &mut rng);
        let y = conv3_forward(&x, cin, dims, &w, &zero_b, cout);
        let grads = conv3_backward(&x, cin, dims, &w, cout, &g, true);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(grads.input.as_ref().unwrap()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
        let rhs_w: f64 = w.iter().zip(&grads.weight).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs_w).abs() < 1e-9);
    }

    #[test]
    fn pool_and_upsample_are_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dims = [4, 6, 2];
        let x = random(2 * 48, &mut rng);
        let g = random(2 * 6, &mut rng);
        let p = avg_pool2(&x, 2, dims);
        let pb = avg_pool2_backward(&g, 2, dims);
        let l: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
        let r: f64 = x.iter().zip(&pb).map(|(a, b)| a * b).sum();
        assert!((l - r).abs() < 1e-12);

        let small = half(dims);
        let u = upsample2(&g, 2, small);
        let ub = upsample2_backward(&x, 2, small);
        let l: f64 = u.iter().zip(&x).map(|(a, b)| a * b).sum();
        let r: f64 = g.iter().zip(&ub).map(|(a, b)| a * b).sum();
        assert!((l - r).abs() < 1e-12);
    }

    #[test]
    fn pool_of_constant() {
        let p = avg_pool2(&vec![2.0f64; 64], 1, [4, 4, 4]);
        assert!(p.iter().all(|&v| v == 2.0));
    }
}
