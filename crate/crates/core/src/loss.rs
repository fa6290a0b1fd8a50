//! Dice + focal training objective with analytic gradients.
//!
//! Dice loss uses the squared-denominator form
//! `1 - (2 Σ p g + ε) / (Σ p² + Σ g² + ε)`. Focal loss is the voxel mean of
//! `-α_t (1 - p_t)^γ ln p_t` with `p_t = p` on foreground and `1 - p` on
//! background, after clamping `p` to `[δ, 1 - δ]`.
//!
//! The slice functions (`*_slice`) are the primitives shared with training;
//! the field wrappers add geometry checks. All reductions use fixed-block
//! pairwise summation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reduce::pairwise_sum_by;
use crate::scalar::Scalar;
use crate::volume::{Geometry, LabelVolume};

/// Probability clamp applied before logarithms.
pub const CLAMP: f64 = 1e-7;

/// How `α` is applied per voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    /// `α_t = α` on every voxel.
    #[default]
    Uniform,
    /// `α_t = α` on foreground, `1 - α` on background.
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossParams {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub lambda_dice: f64,
    pub lambda_focal: f64,
    pub alpha_mode: AlphaMode,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
            epsilon: 1e-5,
            lambda_dice: 1.0,
            lambda_focal: 1.0,
            alpha_mode: AlphaMode::Uniform,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("loss: {m}")));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return bad("gamma must be finite and >= 0");
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return bad("epsilon must be > 0");
        }
        if !(self.lambda_dice >= 0.0 && self.lambda_focal >= 0.0) || self.lambda_dice + self.lambda_focal <= 0.0 {
            return bad("lambda weights must be >= 0 with a positive sum");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityField<T> {
    geometry: Geometry,
    values: Vec<T>,
}

impl<T: Scalar> ProbabilityField<T> {
    pub fn new(geometry: Geometry, values: Vec<T>) -> Result<Self> {
        check_len(&geometry, values.len())?;
        if let Some(v) = values.iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
            return Err(Error::InvalidParameter(format!("probability {} outside [0, 1]", v.as_f64())));
        }
        Ok(Self { geometry, values })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthField<T> {
    geometry: Geometry,
    values: Vec<T>,
}

impl<T: Scalar> GroundTruthField<T> {
    pub fn new(geometry: Geometry, values: Vec<T>) -> Result<Self> {
        check_len(&geometry, values.len())?;
        if values.iter().any(|&v| v != T::zero() && v != T::one()) {
            return Err(Error::InvalidParameter("ground truth must be binary".into()));
        }
        Ok(Self { geometry, values })
    }

    /// Nonzero labels become 1.
    pub fn from_mask(mask: &LabelVolume) -> Self {
        Self {
            geometry: mask.geometry().clone(),
            values: mask.labels().iter().map(|&l| if l != 0 { T::one() } else { T::zero() }).collect(),
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }
}

fn check_len(geometry: &Geometry, n: usize) -> Result<()> {
    geometry.validate()?;
    if n != geometry.voxel_count() {
        return Err(Error::ShapeMismatch {
            expected: geometry.dims.to_vec(),
            got: vec![n],
        });
    }
    Ok(())
}

fn check_pair<T: Scalar>(p: &ProbabilityField<T>, g: &GroundTruthField<T>) -> Result<()> {
    p.geometry.ensure_same(&g.geometry, "prediction vs ground truth")
}

// ---- slice primitives -------------------------------------------------

fn check_slices<T>(p: &[T], g: &[T]) {
    assert_eq!(p.len(), g.len(), "prediction and target lengths differ");
}

fn dice_terms<T: Scalar>(p: &[T], g: &[T], eps: T) -> (T, T) {
    let n = p.len();
    let num = T::of(2.0) * pairwise_sum_by(n, |i| p[i] * g[i]) + eps;
    let den = pairwise_sum_by(n, |i| p[i] * p[i]) + pairwise_sum_by(n, |i| g[i] * g[i]) + eps;
    (num, den)
}

pub fn dice_loss_slice<T: Scalar>(p: &[T], g: &[T], eps: T) -> T {
    check_slices(p, g);
    let (num, den) = dice_terms(p, g, eps);
    T::one() - num / den
}

#[inline]
fn alpha_t<T: Scalar>(alpha: T, mode: AlphaMode, fg: bool) -> T {
    match (mode, fg) {
        (AlphaMode::Balanced, false) => T::one() - alpha,
        _ => alpha,
    }
}

#[inline]
fn clamp<T: Scalar>(p: T) -> T {
    let d = T::of(CLAMP);
    p.max(d).min(T::one() - d)
}

pub fn focal_loss_slice<T: Scalar>(p: &[T], g: &[T], alpha: T, gamma: T, mode: AlphaMode) -> T {
    check_slices(p, g);
    let n = p.len();
    if n == 0 {
        return T::zero();
    }
    let total = pairwise_sum_by(n, |i| {
        let fg = g[i] > T::of(0.5);
        let pc = clamp(p[i]);
        let pt = if fg { pc } else { T::one() - pc };
        -alpha_t(alpha, mode, fg) * (T::one() - pt).powf(gamma) * pt.ln()
    });
    total / T::of_usize(n)
}

pub fn compound_loss_slice<T: Scalar>(p: &[T], g: &[T], params: &LossParams) -> T {
    let mut total = T::zero();
    if params.lambda_dice != 0.0 {
        total += T::of(params.lambda_dice) * dice_loss_slice(p, g, T::of(params.epsilon));
    }
    if params.lambda_focal != 0.0 {
        total += T::of(params.lambda_focal)
            * focal_loss_slice(p, g, T::of(params.alpha), T::of(params.gamma), params.alpha_mode);
    }
    total
}

/// Writes `∂loss/∂p_i` into `out`. The focal term has zero gradient where
/// the clamp is active.
pub fn compound_gradient_slice<T: Scalar>(p: &[T], g: &[T], params: &LossParams, out: &mut [T]) {
    check_slices(p, g);
    assert_eq!(out.len(), p.len());
    let n = p.len();
    out.iter_mut().for_each(|o| *o = T::zero());
    if n == 0 {
        return;
    }
    if params.lambda_dice != 0.0 {
        let (num, den) = dice_terms(p, g, T::of(params.epsilon));
        let lam = T::of(params.lambda_dice);
        let two = T::of(2.0);
        let den2 = den * den;
        for i in 0..n {
            out[i] += lam * -(two * g[i] * den - num * two * p[i]) / den2;
        }
    }
    if params.lambda_focal != 0.0 {
        let lam = T::of(params.lambda_focal) / T::of_usize(n);
        let alpha = T::of(params.alpha);
        let gamma = T::of(params.gamma);
        let d = T::of(CLAMP);
        for i in 0..n {
            if p[i] < d || p[i] > T::one() - d {
                continue;
            }
            let fg = g[i] > T::of(0.5);
            let a = alpha_t(alpha, params.alpha_mode, fg);
            let pi = p[i];
            let q = T::one() - pi;
            let grad = if fg {
                // d/dp [-(1-p)^γ ln p]
                gamma * pow_m1(q, gamma) * pi.ln() - q.powf(gamma) / pi
            } else {
                // d/dp [-p^γ ln(1-p)]
                -(gamma * pow_m1(pi, gamma) * q.ln()) + pi.powf(gamma) / q
            };
            out[i] += lam * a * grad;
        }
    }
}

/// `x^(γ-1)`, taken as 0 when `γ = 0` so the product with γ vanishes.
#[inline]
fn pow_m1<T: Scalar>(x: T, gamma: T) -> T {
    if gamma == T::zero() {
        T::zero()
    } else {
        x.powf(gamma - T::one())
    }
}

// ---- field wrappers ---------------------------------------------------

pub fn dice_loss<T: Scalar>(p: &ProbabilityField<T>, g: &GroundTruthField<T>, eps: f64) -> Result<T> {
    check_pair(p, g)?;
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter("epsilon must be > 0".into()));
    }
    Ok(dice_loss_slice(&p.values, &g.values, T::of(eps)))
}

pub fn focal_loss<T: Scalar>(
    p: &ProbabilityField<T>,
    g: &GroundTruthField<T>,
    alpha: f64,
    gamma: f64,
    mode: AlphaMode,
) -> Result<T> {
    check_pair(p, g)?;
    LossParams {
        alpha,
        gamma,
        ..LossParams::default()
    }
    .validate()?;
    Ok(focal_loss_slice(&p.values, &g.values, T::of(alpha), T::of(gamma), mode))
}

pub fn compound_loss<T: Scalar>(p: &ProbabilityField<T>, g: &GroundTruthField<T>, params: &LossParams) -> Result<T> {
    check_pair(p, g)?;
    params.validate()?;
    Ok(compound_loss_slice(&p.values, &g.values, params))
}

pub fn compound_loss_gradient<T: Scalar>(
    p: &ProbabilityField<T>,
    g: &GroundTruthField<T>,
    params: &LossParams,
) -> Result<Vec<T>> {
    check_pair(p, g)?;
    params.validate()?;
    let mut out = vec![T::zero(); p.values.len()];
    compound_gradient_slice(&p.values, &g.values, params, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(n: usize) -> Geometry {
        Geometry::canonical([n, 1, 1], [1.0; 3]).unwrap()
    }

    fn fields(p: &[f64], g: &[f64]) -> (ProbabilityField<f64>, GroundTruthField<f64>) {
        (
            ProbabilityField::new(geom(p.len()), p.to_vec()).unwrap(),
            GroundTruthField::new(geom(g.len()), g.to_vec()).unwrap(),
        )
    }

    #[test]
    fn dice_examples() {
        let (p, g) = fields(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0]);
        assert_eq!(dice_loss(&p, &g, 1e-5).unwrap(), 0.0);
        let (p, g) = fields(&[0.0, 0.0], &[0.0, 0.0]);
        assert_eq!(dice_loss(&p, &g, 1e-5).unwrap(), 0.0);
        let (p, g) = fields(&[0.5, 0.5], &[1.0, 0.0]);
        assert!((dice_loss(&p, &g, 1e-12).unwrap() - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn focal_single_voxel() {
        let (p, g) = fields(&[0.5], &[1.0]);
        let l = focal_loss(&p, &g, 0.25, 2.0, AlphaMode::Uniform).unwrap();
        assert!((l - 0.25 * 0.25 * 2f64.ln()).abs() < 1e-15);
        let lb = focal_loss(&p, &g, 0.25, 2.0, AlphaMode::Balanced).unwrap();
        assert_eq!(l, lb);
    }

    #[test]
    fn balanced_weights_background() {
        let (p, g) = fields(&[0.3], &[0.0]);
        let u = focal_loss(&p, &g, 0.25, 2.0, AlphaMode::Uniform).unwrap();
        let b = focal_loss(&p, &g, 0.25, 2.0, AlphaMode::Balanced).unwrap();
        assert!((b - u * 3.0).abs() < 1e-15);
    }

    #[test]
    fn confident_prediction_is_near_zero() {
        let d = CLAMP;
        let (p, g) = fields(&[1.0, 0.0], &[1.0, 0.0]);
        let l = focal_loss(&p, &g, 0.25, 2.0, AlphaMode::Uniform).unwrap();
        assert!(l <= 0.25 * d.powi(2) * (1.0 - d).ln().abs() + 1e-30);
    }

    #[test]
    fn compound_projections() {
        let (p, g) = fields(&[0.2, 0.9, 0.4], &[0.0, 1.0, 1.0]);
        let base = LossParams::default();
        let d = dice_loss(&p, &g, base.epsilon).unwrap();
        let f = focal_loss(&p, &g, base.alpha, base.gamma, base.alpha_mode).unwrap();
        let only_dice = LossParams { lambda_focal: 0.0, ..base };
        let only_focal = LossParams { lambda_dice: 0.0, ..base };
        assert_eq!(compound_loss(&p, &g, &only_dice).unwrap(), d);
        assert_eq!(compound_loss(&p, &g, &only_focal).unwrap(), f);
        assert_eq!(compound_loss(&p, &g, &base).unwrap(), d + f);
    }

    #[test]
    fn symmetric_gradient() {
        let (p, g) = fields(&[0.3; 8], &[1.0; 8]);
        let gr = compound_loss_gradient(&p, &g, &LossParams::default()).unwrap();
        assert!(gr.iter().all(|&v| v == gr[0]));
    }

    #[test]
    fn bce_gradient() {
        let pv = [0.1, 0.7, 0.45, 0.99];
        let gv = [0.0, 1.0, 1.0, 0.0];
        let (p, g) = fields(&pv, &gv);
        let params = LossParams {
            lambda_dice: 0.0,
            gamma: 0.0,
            alpha: 1.0,
            ..LossParams::default()
        };
        let gr = compound_loss_gradient(&p, &g, &params).unwrap();
        for i in 0..4 {
            let oracle = (pv[i] - gv[i]) / (pv[i] * (1.0 - pv[i])) / 4.0;
            assert!((gr[i] - oracle).abs() < 1e-12 * oracle.abs().max(1.0));
        }
    }

    #[test]
    fn mismatch_and_validation() {
        let p = ProbabilityField::new(geom(2), vec![0.5, 0.5]).unwrap();
        let g = GroundTruthField::new(geom(3), vec![0.0; 3]).unwrap();
        assert!(matches!(dice_loss(&p, &g, 1e-5), Err(Error::GeometryMismatch(_))));
        assert!(ProbabilityField::new(geom(1), vec![1.5]).is_err());
        assert!(GroundTruthField::new(geom(1), vec![0.5]).is_err());
        let bad = LossParams { lambda_dice: 0.0, lambda_focal: 0.0, ..LossParams::default() };
        assert!(bad.validate().is_err());
        assert!(LossParams { alpha: 0.0, ..LossParams::default() }.validate().is_err());
    }
}
