//! Coronal maximum-intensity projections: the classifier input.
//!
//! A coronal MIP collapses the anterior-posterior axis of a canonical (RAS)
//! volume. Pixel rows run from superior (row 0) to inferior, columns follow
//! the voxel x axis, so voxel `(x, y, z)` lands on row `nz - 1 - z`,
//! column `x`.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volume::ImageVolume;

/// Side length used for the classifier input.
pub const DEFAULT_MIP_SIZE: usize = 640;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjectionAxis {
    AnteriorPosterior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MipImage<T> {
    height: usize,
    width: usize,
    /// Row-major, row 0 superior.
    pixels: Vec<T>,
    pub projection_axis: ProjectionAxis,
    pub source_id: String,
    /// Set by [`normalize_mip`] when the input was constant.
    pub degenerate: bool,
}

impl<T: Scalar> MipImage<T> {
    pub fn new(height: usize, width: usize, pixels: Vec<T>, source_id: impl Into<String>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::ShapeMismatch {
                expected: vec![height, width],
                got: vec![pixels.len()],
            });
        }
        Ok(Self {
            height,
            width,
            pixels,
            projection_axis: ProjectionAxis::AnteriorPosterior,
            source_id: source_id.into(),
            degenerate: false,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.pixels[row * self.width + col]
    }

    /// Pixel that voxel column `(x, *, z)` projects onto.
    pub fn at_voxel(&self, x: usize, z: usize) -> T {
        self.get(self.height - 1 - z, x)
    }

    pub fn is_normalized(&self) -> bool {
        self.pixels.iter().all(|&p| p >= T::zero() && p <= T::one())
    }

    fn with_pixels(&self, height: usize, width: usize, pixels: Vec<T>) -> Self {
        Self {
            height,
            width,
            pixels,
            projection_axis: self.projection_axis,
            source_id: self.source_id.clone(),
            degenerate: self.degenerate,
        }
    }

    /// Portable float grid: ASCII line `PFG1 <height> <width>\n`, then
    /// `height * width` little-endian `f32` values in row-major order.
    pub fn write_pfg<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "PFG1 {} {}", self.height, self.width)?;
        for &p in &self.pixels {
            w.write_all(&(p.as_f64() as f32).to_le_bytes())?;
        }
        w.flush()
    }

    pub fn read_pfg<R: BufRead>(mut r: R) -> Result<Self> {
        let mut line = String::new();
        r.read_line(&mut line)
            .map_err(|e| Error::InvalidParameter(format!("float grid header: {e}")))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::InvalidParameter(format!("bad float grid header `{}`", line.trim()));
        if parts.len() != 3 || parts[0] != "PFG1" {
            return Err(bad());
        }
        let h: usize = parts[1].parse().map_err(|_| bad())?;
        let w: usize = parts[2].parse().map_err(|_| bad())?;
        let mut buf = vec![0u8; h * w * 4];
        r.read_exact(&mut buf)
            .map_err(|e| Error::InvalidParameter(format!("float grid body: {e}")))?;
        let pixels = buf
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        Self::new(h, w, pixels, "")
    }

    /// 8-bit grayscale PNG, linearly scaled from the pixel range to 0..=255.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (lo, hi) = min_max(&self.pixels);
        let span = (hi - lo).as_f64();
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .map(|&p| {
                if span > 0.0 {
                    (((p - lo).as_f64() / span) * 255.0).round().clamp(0.0, 255.0) as u8
                } else {
                    0
                }
            })
            .collect();
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches dimensions");
        img.save(path)
            .map_err(|e| Error::write_io(path, std::io::Error::other(e.to_string())))
    }
}

fn min_max<T: Scalar>(values: &[T]) -> (T, T) {
    values
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Coronal MIP of a canonical volume: pixel `(x, z)` is the maximum over `y`.
pub fn coronal_mip<T: Scalar>(vol: &ImageVolume<T>, source_id: &str) -> Result<MipImage<T>> {
    let g = vol.geometry();
    if !g.orientation.is_canonical() {
        return Err(Error::NotCanonical(g.orientation.to_string()));
    }
    let [nx, ny, nz] = g.dims;
    let v = vol.voxels();
    let mut pixels = vec![T::neg_infinity(); nx * nz];
    for z in 0..nz {
        let row = &mut pixels[(nz - 1 - z) * nx..(nz - z) * nx];
        for y in 0..ny {
            let line = &v[nx * (y + ny * z)..nx * (y + ny * z) + nx];
            for (p, &val) in row.iter_mut().zip(line) {
                if val > *p {
                    *p = val;
                }
            }
        }
    }
    MipImage::new(nz, nx, pixels, source_id)
}

/// Bilinear resize with pixel-center alignment and edge clamping.
pub fn resize_mip<T: Scalar>(mip: &MipImage<T>, out_h: usize, out_w: usize) -> Result<MipImage<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidParameter(format!("resize target {out_h}x{out_w}")));
    }
    if out_h == mip.height && out_w == mip.width {
        return Ok(mip.clone());
    }
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, T)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, T::of(src - i0 as f64))
            })
            .collect()
    };
    let rows = taps(mip.height, out_h);
    let cols = taps(mip.width, out_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(r0, r1, fr) in &rows {
        for &(c0, c1, fc) in &cols {
            let top = mip.get(r0, c0) * (T::one() - fc) + mip.get(r0, c1) * fc;
            let bottom = mip.get(r1, c0) * (T::one() - fc) + mip.get(r1, c1) * fc;
            out.push(top * (T::one() - fr) + bottom * fr);
        }
    }
    Ok(mip.with_pixels(out_h, out_w, out))
}

/// Per-image min-max scaling to `[0, 1]`. A constant image becomes all zeros
/// with `degenerate` set.
pub fn normalize_mip<T: Scalar>(mip: &MipImage<T>) -> MipImage<T> {
    let (lo, hi) = min_max(&mip.pixels);
    let span = hi - lo;
    if !(span > T::zero()) {
        let mut out = mip.with_pixels(mip.height, mip.width, vec![T::zero(); mip.pixels.len()]);
        out.degenerate = true;
        return out;
    }
    let pixels = mip
        .pixels
        .iter()
        .map(|&p| ((p - lo) / span).max(T::zero()).min(T::one()))
        .collect();
    let mut out = mip.with_pixels(mip.height, mip.width, pixels);
    out.degenerate = false;
    out
}

/// Classifier input: coronal MIP, resized to `size x size`, normalized.
pub fn classifier_input<T: Scalar>(vol: &ImageVolume<T>, source_id: &str, size: usize) -> Result<MipImage<T>> {
    let mip = coronal_mip(vol, source_id)?;
    Ok(normalize_mip(&resize_mip(&mip, size, size)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Geometry, Modality};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vol(dims: [usize; 3], f: impl FnMut(usize, usize, usize) -> f64) -> ImageVolume<f64> {
        ImageVolume::from_fn(Geometry::canonical(dims, [1.0; 3]).unwrap(), Modality::Pet, f).unwrap()
    }

    #[test]
    fn constant_volume_gives_constant_mip() {
        let m = coronal_mip(&vol([4, 5, 6], |_, _, _| 3.5), "c").unwrap();
        assert_eq!((m.height(), m.width()), (6, 4));
        assert!(m.pixels().iter().all(|&p| p == 3.5));
    }

    #[test]
    fn single_hot_voxel() {
        let (hi, hj, hk) = (2, 3, 1);
        let m = coronal_mip(&vol([5, 6, 4], |i, j, k| if (i, j, k) == (hi, hj, hk) { 10.0 } else { 0.0 }), "h").unwrap();
        for z in 0..4 {
            for x in 0..5 {
                let want = if (x, z) == (hi, hk) { 10.0 } else { 0.0 };
                assert_eq!(m.at_voxel(x, z), want);
            }
        }
        // superior is up: the hot voxel sits on row nz-1-k
        assert_eq!(m.get(4 - 1 - hk, hi), 10.0);
    }

    #[test]
    fn random_volume_matches_brute_force_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v = vol([8, 8, 8], |_, _, _| rng.random::<f64>());
        let m = coronal_mip(&v, "r").unwrap();
        for z in 0..8 {
            for x in 0..8 {
                let want = (0..8).map(|y| v.get(x, y, z)).fold(f64::MIN, f64::max);
                assert_eq!(m.at_voxel(x, z), want);
            }
        }
    }

    #[test]
    fn requires_canonical() {
        let g = Geometry::new([2, 2, 2], [1.0; 3], [0.0; 3], "LAS".parse().unwrap()).unwrap();
        let v = ImageVolume::filled(g, 1.0f64, Modality::Pet).unwrap();
        assert!(matches!(coronal_mip(&v, ""), Err(Error::NotCanonical(_))));
    }

    #[test]
    fn resize_cases() {
        let m = MipImage::new(2, 2, vec![0.0f64, 1.0, 1.0, 0.0], "").unwrap();
        assert_eq!(resize_mip(&m, 2, 2).unwrap(), m);
        let r = resize_mip(&m, 3, 3).unwrap();
        assert_eq!((r.height(), r.width()), (3, 3));
        assert!((r.get(1, 1) - 0.5).abs() < 1e-12);

        let c = MipImage::new(3, 5, vec![0.7f64; 15], "").unwrap();
        let rc = resize_mip(&c, 640, 640).unwrap();
        assert!(rc.pixels().iter().all(|&p| (p - 0.7).abs() < 1e-12));
    }

    #[test]
    fn normalize_cases() {
        let m = MipImage::new(1, 3, vec![0.0f64, 5.0, 10.0], "").unwrap();
        assert_eq!(normalize_mip(&m).pixels(), &[0.0, 0.5, 1.0]);

        let c = normalize_mip(&MipImage::new(2, 2, vec![4.0f64; 4], "").unwrap());
        assert!(c.degenerate);
        assert!(c.pixels().iter().all(|&p| p == 0.0));

        let unit = MipImage::new(1, 4, vec![0.0f64, 0.25, 1.0, 0.5], "").unwrap();
        assert_eq!(normalize_mip(&unit).pixels(), unit.pixels());
    }

    #[test]
    fn pfg_round_trip() {
        let m = MipImage::new(2, 3, vec![0.0f32, 0.1, 0.2, 0.3, 0.4, 1.0], "").unwrap();
        let mut buf = Vec::new();
        m.write_pfg(&mut buf).unwrap();
        let back = MipImage::<f32>::read_pfg(&buf[..]).unwrap();
        assert_eq!(back.pixels(), m.pixels());
    }
}
