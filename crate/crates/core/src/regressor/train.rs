use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{backward_matrices, design_matrices, raw_loss, Gradients, RegressorModel};
use crate::dataset::PsfDataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Full-batch update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Gradient descent with heavy-ball momentum.
    Momentum,
    /// Adam with `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    #[default]
    Adam,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Full-batch training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    /// Momentum coefficient; used by [`Optimizer::Momentum`] only.
    pub momentum: f64,
    /// Seeds the train/validation split.
    pub seed: u64,
    pub validation_fraction: f64,
    /// Stop after this many epochs without a new best validation loss.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4000,
            optimizer: Optimizer::Adam,
            learning_rate: 2e-3,
            momentum: 0.9,
            seed: 0,
            validation_fraction: 0.2,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidParameter(format!(
                "validation fraction {}",
                self.validation_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParameter(format!("momentum {}", self.momentum)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch whose weights were returned.
    pub best_epoch: usize,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

impl TrainHistory {
    /// `epoch,train_mse,val_mse` with shortest round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_mse,val_mse\n");
        for r in &self.records {
            let val = r.val_mse.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{}\n", r.epoch, r.train_mse, val));
        }
        s
    }
}

/// Seeded split into (train, validation) index lists, each sorted.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_val = (fraction * n as f64).round() as usize;
    if fraction > 0.0 && n >= 2 {
        n_val = n_val.clamp(1, n - 1);
    } else if n < 2 {
        n_val = 0;
    }
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

fn rows<T: Scalar>(m: &Array2<T>, idx: &[usize]) -> Array2<T> {
    m.select(Axis(0), idx)
}

struct OptimizerState<T> {
    kind: Optimizer,
    lr: T,
    mu: T,
    /// Momentum velocity, or Adam's first moment.
    first: Vec<(Array2<T>, Array1<T>)>,
    /// Adam's second moment.
    second: Vec<(Array2<T>, Array1<T>)>,
}

impl<T: Scalar> OptimizerState<T> {
    fn new(cfg: &TrainConfig, model: &RegressorModel<T>) -> Self {
        let zeros = || {
            model
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weights.raw_dim()), Array1::zeros(l.bias.len())))
                .collect()
        };
        Self {
            kind: cfg.optimizer,
            lr: T::lit(cfg.learning_rate),
            mu: T::lit(cfg.momentum),
            first: zeros(),
            second: zeros(),
        }
    }

    /// Applies update number `t` (1-based).
    fn step(&mut self, model: &mut RegressorModel<T>, grads: &Gradients<T>, t: usize) {
        let (lr, mu) = (self.lr, self.mu);
        let layers = model.layers.iter_mut().zip(&grads.layers);
        match self.kind {
            Optimizer::Momentum => {
                for ((layer, g), (vw, vb)) in layers.zip(self.first.iter_mut()) {
                    vw.zip_mut_with(&g.weights, |v, &d| *v = mu * *v - lr * d);
                    vb.zip_mut_with(&g.bias, |v, &d| *v = mu * *v - lr * d);
                    layer.weights += &*vw;
                    layer.bias += &*vb;
                }
            }
            Optimizer::Adam => {
                let (b1, b2) = (T::lit(BETA1), T::lit(BETA2));
                let c1 = T::one() - T::lit(BETA1.powi(t as i32));
                let c2 = T::one() - T::lit(BETA2.powi(t as i32));
                let eps = T::lit(ADAM_EPS);
                let update = |p: &mut T, m: &mut T, v: &mut T, d: T| {
                    *m = b1 * *m + (T::one() - b1) * d;
                    *v = b2 * *v + (T::one() - b2) * d * d;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                };
                for (((layer, g), (mw, mb)), (vw, vb)) in
                    layers.zip(self.first.iter_mut()).zip(self.second.iter_mut())
                {
                    ndarray::Zip::from(&mut layer.weights)
                        .and(mw)
                        .and(vw)
                        .and(&g.weights)
                        .for_each(|p, m, v, &d| update(p, m, v, d));
                    ndarray::Zip::from(&mut layer.bias)
                        .and(mb)
                        .and(vb)
                        .and(&g.bias)
                        .for_each(|p, m, v, &d| update(p, m, v, d));
                }
            }
        }
    }
}

/// Trains `model` on `dataset`, returning the weights with the best
/// validation loss (training loss when there is no validation split).
pub fn train<T: Scalar>(
    model: &RegressorModel<T>,
    dataset: &PsfDataset<T>,
    cfg: &TrainConfig,
) -> Result<(RegressorModel<T>, TrainHistory)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidParameter("cannot train on an empty dataset".into()));
    }
    let (x, y) = design_matrices(model, dataset)?;
    let (train_idx, val_idx) = split_indices(dataset.len(), cfg.validation_fraction, cfg.seed);
    let (xt, yt) = (rows(&x, &train_idx), rows(&y, &train_idx));
    let (xv, yv) = (rows(&x, &val_idx), rows(&y, &val_idx));

    let mut state = OptimizerState::new(cfg, model);
    let mut current = model.clone();
    let mut history = TrainHistory {
        train_indices: train_idx,
        val_indices: val_idx.clone(),
        ..TrainHistory::default()
    };
    let mut best: Option<(T, RegressorModel<T>, T)> = None;
    let mut since_best = 0usize;

    for epoch in 0..cfg.epochs {
        let (loss, grads) = backward_matrices(&current, xt.view(), yt.view())?;
        let val = (!val_idx.is_empty()).then(|| raw_loss(&current, xv.view(), yv.view()));
        let watched = val.unwrap_or(loss);
        if !loss.is_finite() || !watched.is_finite() {
            return Err(Error::DivergenceDetected {
                epoch,
                loss: loss.to_f64_lossy(),
            });
        }
        history.records.push(EpochRecord {
            epoch,
            train_mse: loss.to_f64_lossy(),
            val_mse: val.map(Scalar::to_f64_lossy),
        });
        let improved = best.as_ref().is_none_or(|(b, _, _)| watched < *b);
        if improved {
            best = Some((watched, current.clone(), loss));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
        state.step(&mut current, &grads, epoch + 1);
    }
    let (_, mut best_model, best_train) = match best {
        Some(b) => b,
        None => {
            let loss = raw_loss(&current, xt.view(), yt.view());
            (loss, current, loss)
        }
    };
    best_model.set_training_mse(Some(best_train));
    Ok((best_model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::FieldPoint;
    use crate::lens::{analytic_psf, generate_dataset, PlanGroup, SamplingPlan, SyntheticLensSpec};

    fn dataset(plan: SamplingPlan) -> PsfDataset<f64> {
        generate_dataset(&SyntheticLensSpec::default(), &plan, 7, 8.0).unwrap()
    }

    fn grid_plan() -> SamplingPlan {
        SamplingPlan {
            name: "grid".into(),
            groups: vec![PlanGroup {
                dz: vec![-40.0, -20.0, 0.0, 20.0, 40.0],
                r: vec![0.0, 1.5, 3.0],
                phi: vec![0.0, 90.0, 180.0, 270.0],
            }],
        }
    }

    #[test]
    fn split_is_seeded_and_disjoint() {
        let (t, v) = split_indices(100, 0.2, 5);
        assert_eq!(v.len(), 20);
        assert_eq!(t.len(), 80);
        let mut all: Vec<usize> = t.iter().chain(&v).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(split_indices(100, 0.2, 5), (t, v));
        assert_ne!(split_indices(100, 0.2, 6).1, split_indices(100, 0.2, 5).1);
        assert_eq!(split_indices(1, 0.5, 0), (vec![0], vec![]));
        assert_eq!(split_indices(3, 0.0, 0).1.len(), 0);
    }

    #[test]
    fn memorizes_a_single_entry() {
        let ds = dataset(SamplingPlan::single(FieldPoint::new(10.0, 1.0, 30.0)));
        let model = RegressorModel::for_dataset(&ds, &[16], 1).unwrap();
        let cfg = TrainConfig {
            epochs: 2000,
            optimizer: Optimizer::Momentum,
            learning_rate: 1.0,
            validation_fraction: 0.0,
            ..TrainConfig::default()
        };
        let (m, h) = train(&model, &ds, &cfg).unwrap();
        let last = h.records[h.best_epoch].train_mse;
        assert!(last < 1e-6, "train mse {last}");
        assert!(m.training_mse().unwrap() < 1e-6);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = dataset(grid_plan());
        let model = RegressorModel::for_dataset(&ds, &[12, 12], 3).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            seed: 9,
            ..TrainConfig::default()
        };
        let (a, ha) = train(&model, &ds, &cfg).unwrap();
        let (b, hb) = train(&model, &ds, &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
        assert_eq!(ha.to_csv(), hb.to_csv());
        assert_eq!(ha.val_indices.len(), 9);
    }

    #[test]
    fn training_reduces_loss_and_fits_points() {
        let ds = dataset(grid_plan());
        let model = RegressorModel::for_dataset(&ds, &[32, 32], 7).unwrap();
        let cfg = TrainConfig {
            epochs: 1500,
            validation_fraction: 0.0,
            ..TrainConfig::default()
        };
        let (m, h) = train(&model, &ds, &cfg).unwrap();
        let first = h.records[0].train_mse;
        let best = h.records[h.best_epoch].train_mse;
        assert!(best < first / 10.0, "{first} -> {best}");
        // A training point, post-processed, against the analytic oracle.
        let spec = SyntheticLensSpec::default();
        let p = FieldPoint::new(20.0, 1.5, 90.0);
        let pred = m.forward(&p).unwrap();
        let oracle = analytic_psf(&spec, &p, 7, 8.0).unwrap();
        let mse = pred
            .values()
            .iter()
            .zip(oracle.values())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / 49.0;
        assert!(mse < 2.0 * m.training_mse().unwrap(), "{mse} vs {:?}", m.training_mse());
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let ds = dataset(grid_plan());
        let model = RegressorModel::for_dataset(&ds, &[16], 3).unwrap();
        let cfg = TrainConfig {
            epochs: 2000,
            optimizer: Optimizer::Momentum,
            learning_rate: 1e6,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&model, &ds, &cfg),
            Err(Error::DivergenceDetected { .. })
        ));
    }

    #[test]
    fn patience_stops_early() {
        let ds = dataset(grid_plan());
        let model = RegressorModel::for_dataset(&ds, &[8], 3).unwrap();
        // Steps below one ulp leave the weights, and so the loss, unchanged.
        let cfg = TrainConfig {
            epochs: 10_000,
            optimizer: Optimizer::Momentum,
            learning_rate: 1e-30,
            momentum: 0.0,
            patience: Some(5),
            ..TrainConfig::default()
        };
        let (_, h) = train(&model, &ds, &cfg).unwrap();
        assert!(h.records.len() < 10_000);
    }

    #[test]
    fn config_validation() {
        let ds = dataset(grid_plan());
        let model = RegressorModel::for_dataset(&ds, &[4], 3).unwrap();
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(train(&model, &ds, &bad).is_err());
        let bad = TrainConfig {
            validation_fraction: 1.0,
            ..TrainConfig::default()
        };
        assert!(train(&model, &ds, &bad).is_err());
        let empty = dataset(SamplingPlan::empty());
        assert!(train(&model, &empty, &TrainConfig::default()).is_err());
    }
}
