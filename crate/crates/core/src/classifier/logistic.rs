//! Logistic regression over MIP features.
//!
//! Training runs full-batch gradient descent in standardized feature space
//! with step halving whenever a step would raise the loss, so the recorded
//! loss curve never increases. The standardization is folded back into the
//! stored weights, so inference works on raw features.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::features::{extract_features, FeatureVector};
use super::{ClassificationResult, ClassifierSource, TracerClass};
use crate::error::{Error, Result};
use crate::mip::MipImage;
use crate::reduce::pairwise_sum_by;
use crate::scalar::Scalar;

const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 500,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub final_loss: f64,
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifierModel<T> {
    pub weights: Vec<T>,
    pub bias: T,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    weights: Vec<f64>,
    bias: f64,
    meta: TrainingMeta,
}

const MODEL_FORMAT: &str = "tracerseg-linear-classifier v1";

impl<T: Scalar> LinearClassifierModel<T> {
    /// Probability of PSMA.
    pub fn score(&self, features: &[T]) -> Result<f64> {
        if features.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                got: features.len(),
            });
        }
        let z = self.bias.as_f64()
            + pairwise_sum_by(features.len(), |i| self.weights[i].as_f64() * features[i].as_f64());
        Ok(sigmoid(z))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            weights: self.weights.iter().map(|w| w.as_f64()).collect(),
            bias: self.bias.as_f64(),
            meta: self.meta.clone(),
        };
        let text = serde_json::to_string_pretty(&file).expect("model serializes");
        std::fs::write(path, text).map_err(|e| Error::write_io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::read_io(path, e))?;
        let file: ModelFile =
            serde_json::from_str(&text).map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))?;
        if file.format != MODEL_FORMAT {
            return Err(Error::InvalidParameter(format!("{}: unknown model format", path.display())));
        }
        Ok(Self {
            weights: file.weights.into_iter().map(T::of).collect(),
            bias: T::of(file.bias),
            meta: file.meta,
        })
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

struct Standardized {
    rows: Vec<Vec<f64>>,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

fn standardize<T: Scalar>(samples: &[(FeatureVector<T>, TracerClass)], dim: usize) -> Standardized {
    let n = samples.len();
    let mut mean = vec![0.0; dim];
    let mut scale = vec![1.0; dim];
    for d in 0..dim {
        mean[d] = pairwise_sum_by(n, |i| samples[i].0 .0[d].as_f64()) / n as f64;
        let var = pairwise_sum_by(n, |i| (samples[i].0 .0[d].as_f64() - mean[d]).powi(2)) / n as f64;
        if var.sqrt() > 1e-12 {
            scale[d] = var.sqrt();
        }
    }
    let rows = samples
        .iter()
        .map(|(f, _)| (0..dim).map(|d| (f.0[d].as_f64() - mean[d]) / scale[d]).collect())
        .collect();
    Standardized { rows, mean, scale }
}

fn loss_and_grad(rows: &[Vec<f64>], y: &[f64], w: &[f64], b: f64) -> (f64, Vec<f64>, f64) {
    let n = rows.len();
    let z: Vec<f64> = rows
        .iter()
        .map(|r| b + pairwise_sum_by(w.len(), |d| w[d] * r[d]))
        .collect();
    let loss = pairwise_sum_by(n, |i| if y[i] > 0.5 { softplus(-z[i]) } else { softplus(z[i]) }) / n as f64;
    let resid: Vec<f64> = (0..n).map(|i| sigmoid(z[i]) - y[i]).collect();
    let gw = (0..w.len())
        .map(|d| pairwise_sum_by(n, |i| resid[i] * rows[i][d]) / n as f64)
        .collect();
    let gb = pairwise_sum_by(n, |i| resid[i]) / n as f64;
    (loss, gw, gb)
}

fn loss_only(rows: &[Vec<f64>], y: &[f64], w: &[f64], b: f64) -> f64 {
    let n = rows.len();
    pairwise_sum_by(n, |i| {
        let z = b + pairwise_sum_by(w.len(), |d| w[d] * rows[i][d]);
        if y[i] > 0.5 {
            softplus(-z)
        } else {
            softplus(z)
        }
    }) / n as f64
}

/// Fits a logistic model on `(features, tracer)` pairs. PSMA is the positive
/// class.
pub fn fit_builtin<T: Scalar>(
    samples: &[(FeatureVector<T>, TracerClass)],
    config: &FitConfig,
) -> Result<LinearClassifierModel<T>> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(config.learning_rate > 0.0) || !config.learning_rate.is_finite() || config.epochs == 0 {
        return Err(Error::InvalidParameter("learning rate and epochs must be positive".into()));
    }
    let dim = samples[0].0.len();
    if dim == 0 {
        return Err(Error::InvalidParameter("feature vectors are empty".into()));
    }
    for (f, _) in samples {
        if f.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: f.len() });
        }
    }
    let has = |c| samples.iter().any(|(_, t)| *t == c);
    if !(has(TracerClass::Fdg) && has(TracerClass::Psma)) {
        return Err(Error::SingleClassTrainingSet);
    }

    let std = standardize(samples, dim);
    let y: Vec<f64> = samples
        .iter()
        .map(|(_, t)| if *t == TracerClass::Psma { 1.0 } else { 0.0 })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = Normal::new(0.0, 0.01).expect("valid normal");
    let mut w: Vec<f64> = (0..dim).map(|_| init.sample(&mut rng)).collect();
    let mut b = 0.0;
    let mut lr = config.learning_rate;
    let mut history = Vec::with_capacity(config.epochs);

    let (mut loss, mut gw, mut gb) = loss_and_grad(&std.rows, &y, &w, b);
    for _ in 0..config.epochs {
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let w_new: Vec<f64> = w.iter().zip(&gw).map(|(wi, gi)| wi - lr * gi).collect();
            let b_new = b - lr * gb;
            let l_new = loss_only(&std.rows, &y, &w_new, b_new);
            if l_new <= loss {
                w = w_new;
                b = b_new;
                accepted = true;
                break;
            }
            lr *= 0.5;
        }
        if accepted {
            (loss, gw, gb) = loss_and_grad(&std.rows, &y, &w, b);
        }
        history.push(loss);
    }

    // fold standardization: w_raw = w / s, b_raw = b - sum(w * m / s)
    let weights: Vec<f64> = (0..dim).map(|d| w[d] / std.scale[d]).collect();
    let bias = b - pairwise_sum_by(dim, |d| weights[d] * std.mean[d]);

    Ok(LinearClassifierModel {
        weights: weights.into_iter().map(T::of).collect(),
        bias: T::of(bias),
        meta: TrainingMeta {
            epochs: config.epochs,
            learning_rate: config.learning_rate,
            seed: config.seed,
            final_loss: loss,
            loss_history: history,
        },
    })
}

/// Decision rule: PSMA iff the PSMA probability is strictly above 0.5.
pub fn classify_features<T: Scalar>(
    features: &FeatureVector<T>,
    model: &LinearClassifierModel<T>,
) -> Result<ClassificationResult> {
    let s = model.score(features.as_slice())?;
    let tracer = if s > 0.5 { TracerClass::Psma } else { TracerClass::Fdg };
    Ok(ClassificationResult {
        tracer,
        confidence: s.max(1.0 - s),
        features: features.as_slice().iter().map(|v| v.as_f64()).collect(),
        source: ClassifierSource::Builtin,
    })
}

pub fn classify<T: Scalar>(mip: &MipImage<T>, model: &LinearClassifierModel<T>) -> Result<ClassificationResult> {
    let features = extract_features(mip)?;
    classify_features(&features, model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(v: &[f64]) -> FeatureVector<f64> {
        FeatureVector(v.to_vec())
    }

    fn toy_set() -> Vec<(FeatureVector<f64>, TracerClass)> {
        let mut s = Vec::new();
        for i in 0..10 {
            let t = i as f64 / 10.0;
            s.push((fv(&[1.0 + t, 5.0 - t]), TracerClass::Psma));
            s.push((fv(&[-1.0 - t, 5.0 + t]), TracerClass::Fdg));
        }
        s
    }

    fn model(w: &[f64], b: f64) -> LinearClassifierModel<f64> {
        LinearClassifierModel {
            weights: w.to_vec(),
            bias: b,
            meta: TrainingMeta {
                epochs: 0,
                learning_rate: 0.0,
                seed: 0,
                final_loss: 0.0,
                loss_history: vec![],
            },
        }
    }

    #[test]
    fn tie_goes_to_fdg() {
        let r = classify_features(&fv(&[0.0]), &model(&[1.0], 0.0)).unwrap();
        assert_eq!(r.tracer, TracerClass::Fdg);
        assert_eq!(r.confidence, 0.5);
        let r = classify_features(&fv(&[1e-6]), &model(&[1.0], 0.0)).unwrap();
        assert_eq!(r.tracer, TracerClass::Psma);
    }

    #[test]
    fn dimension_mismatch() {
        let e = classify_features(&fv(&[1.0, 2.0]), &model(&[1.0], 0.0)).unwrap_err();
        assert!(matches!(e, Error::DimensionMismatch { expected: 1, got: 2 }));
    }

    #[test]
    fn single_class_rejected() {
        let s = vec![(fv(&[1.0]), TracerClass::Fdg), (fv(&[2.0]), TracerClass::Fdg)];
        assert!(matches!(fit_builtin(&s, &FitConfig::default()), Err(Error::SingleClassTrainingSet)));
        assert!(matches!(fit_builtin::<f64>(&[], &FitConfig::default()), Err(Error::EmptyDataset)));
    }

    #[test]
    fn separable_set_is_learned_and_loss_never_rises() {
        let s = toy_set();
        let m = fit_builtin(&s, &FitConfig::default()).unwrap();
        for (f, t) in &s {
            assert_eq!(classify_features(f, &m).unwrap().tracer, *t);
        }
        let h = &m.meta.loss_history;
        assert!(h.windows(2).all(|p| p[1] <= p[0]));
        assert!(m.meta.final_loss < 0.1);
    }

    #[test]
    fn deterministic_per_seed() {
        let s = toy_set();
        let c = FitConfig { seed: 9, ..FitConfig::default() };
        assert_eq!(fit_builtin(&s, &c).unwrap(), fit_builtin(&s, &c).unwrap());
    }

    #[test]
    fn folded_weights_match_standardized_scores() {
        // oracle: recompute the standardized logit from the raw model
        let s = toy_set();
        let m = fit_builtin(&s, &FitConfig { epochs: 50, ..FitConfig::default() }).unwrap();
        let st = standardize(&s, 2);
        let w_std: Vec<f64> = (0..2).map(|d| m.weights[d] * st.scale[d]).collect();
        let b_std = m.bias + (0..2).map(|d| m.weights[d] * st.mean[d]).sum::<f64>();
        for (i, (f, _)) in s.iter().enumerate() {
            let z_std = b_std + (0..2).map(|d| w_std[d] * st.rows[i][d]).sum::<f64>();
            assert!((m.score(f.as_slice()).unwrap() - sigmoid(z_std)).abs() < 1e-12);
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let m = fit_builtin(&toy_set(), &FitConfig { epochs: 20, ..FitConfig::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        assert_eq!(LinearClassifierModel::<f64>::load(&p).unwrap(), m);
    }

    #[test]
    fn stable_sigmoid_and_softplus() {
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
    }
}
