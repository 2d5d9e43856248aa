use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FusionModel, Mode};
use crate::connectivity::WindowTensor;
use crate::error::{Error, Result};
use crate::signal_io::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    /// Train first on inverted labels, then continue from those weights on
    /// the true labels with a freshly drawn output head.
    #[serde(default)]
    pub label_flip_second_phase: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            learning_rate: 1e-3,
            batch_size: 16,
            optimizer: Optimizer::Adam,
            label_flip_second_phase: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::in_field("epochs")(Error::invalid("must be ≥ 1")));
        }
        if self.batch_size == 0 {
            return Err(Error::in_field("batch_size")(Error::invalid("must be ≥ 1")));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::in_field("learning_rate")(Error::invalid(
                "must be finite and ≥ 0",
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: u8,
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct OptState {
    kind: Optimizer,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl OptState {
    fn new(kind: Optimizer, lr: f64, n: usize) -> Self {
        OptState {
            kind,
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            Optimizer::Adam => {
                self.step += 1;
                let c1 = 1.0 - BETA1.powi(self.step);
                let c2 = 1.0 - BETA2.powi(self.step);
                for k in 0..params.len() {
                    self.m[k] = BETA1 * self.m[k] + (1.0 - BETA1) * grad[k];
                    self.v[k] = BETA2 * self.v[k] + (1.0 - BETA2) * grad[k] * grad[k];
                    let mh = self.m[k] / c1;
                    let vh = self.v[k] / c2;
                    params[k] -= self.lr * mh / (vh.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

fn run_phase(
    model: &mut FusionModel,
    ds: &[WindowTensor],
    targets: &[f64],
    cfg: &TrainConfig,
    phase: u8,
    rng: &mut ChaCha8Rng,
    history: &mut TrainHistory,
) -> Result<()> {
    let n = ds.len();
    let mut opt = OptState::new(cfg.optimizer, cfg.learning_rate, model.n_params());
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut losses = vec![0.0; n];
        let mut correct = vec![false; n];
        for batch in order.chunks(cfg.batch_size) {
            let seeds: Vec<u64> = batch.iter().map(|_| rng.random()).collect();
            let m = &*model;
            let results = batch
                .iter()
                .zip(&seeds)
                .map(|(&i, &seed)| {
                    let pass = m.forward_pass(&ds[i], Mode::Train { seed })?;
                    let p = pass.probability();
                    let (loss, grad) = pass.loss_and_gradient(targets[i], m.n_params());
                    Ok((p, loss, grad))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grad = vec![0.0; model.n_params()];
            for (&i, (p, loss, g)) in batch.iter().zip(&results) {
                losses[i] = *loss;
                correct[i] = (*p >= 0.5) == (targets[i] >= 0.5);
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            opt.apply(&mut model.params, &grad);
        }
        let loss = losses.iter().sum::<f64>() / n as f64;
        if !loss.is_finite() || model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        let accuracy = correct.iter().filter(|c| **c).count() as f64 / n as f64;
        log::debug!("phase {phase} epoch {epoch}: loss {loss:.5}, accuracy {accuracy:.3}");
        history.epochs.push(EpochRecord {
            phase,
            epoch,
            loss,
            accuracy,
        });
    }
    Ok(())
}

/// Seeded mini-batch training. Per-sample gradients are summed in batch
/// order, so a fixed seed gives bit-identical parameters.
pub fn train(model: &FusionModel, ds: &[WindowTensor], cfg: &TrainConfig) -> Result<(FusionModel, TrainHistory)> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for label in [Label::NonSeizure, Label::Seizure] {
        let count = ds.iter().filter(|t| t.label == label).count();
        if count == 0 {
            return Err(Error::ClassTooSmall {
                label: label.as_u8(),
                count,
                min: 1,
            });
        }
    }
    let truth: Vec<f64> = ds.iter().map(|t| t.label.as_u8() as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = model.clone();
    let mut history = TrainHistory::default();
    if cfg.label_flip_second_phase {
        let flipped: Vec<f64> = truth.iter().map(|y| 1.0 - y).collect();
        run_phase(&mut model, ds, &flipped, cfg, 1, &mut rng, &mut history)?;
        model.reinitialize_head(&mut rng);
        run_phase(&mut model, ds, &truth, cfg, 2, &mut rng, &mut history)?;
    } else {
        run_phase(&mut model, ds, &truth, cfg, 1, &mut rng, &mut history)?;
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::{random_tensor, tiny};
    use crate::model::ModelConfig;

    fn toy_dataset(cfg: &ModelConfig, n: usize) -> Vec<WindowTensor> {
        (0..n)
            .map(|k| {
                let mut t = random_tensor(cfg, 100 + k as u64);
                if k % 2 == 0 {
                    t.label = Label::Seizure;
                    t.values.mapv_inplace(|v| v + 1.0);
                } else {
                    t.label = Label::NonSeizure;
                }
                t
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mcfg = tiny(2);
        let m = FusionModel::build(&mcfg).unwrap();
        let ds = toy_dataset(&mcfg, 8);
        let cfg = TrainConfig {
            epochs: 3,
            learning_rate: 0.0,
            batch_size: 3,
            ..Default::default()
        };
        let (out, hist) = train(&m, &ds, &cfg).unwrap();
        assert_eq!(out.params, m.params);
        assert!(hist.epochs.windows(2).all(|w| w[0].loss == w[1].loss));
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let mcfg = ModelConfig {
            dropout: 0.3,
            ..tiny(3)
        };
        let m = FusionModel::build(&mcfg).unwrap();
        let ds = toy_dataset(&mcfg, 8);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            label_flip_second_phase: true,
            ..Default::default()
        };
        let (a, ha) = train(&m, &ds, &cfg).unwrap();
        let (b, hb) = train(&m, &ds, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(ha, hb);
        assert_eq!(ha.epochs.len(), 4);
        assert_eq!(ha.epochs[2].phase, 2);
    }

    #[test]
    fn sgd_step_decreases_single_sample_loss() {
        for scheme in 1..=4 {
            let mcfg = tiny(scheme);
            let m = FusionModel::build(&mcfg).unwrap();
            let x = random_tensor(&mcfg, 9);
            let (l0, g) = m.loss_and_gradient(&x, 1.0, Mode::Eval).unwrap();
            let mut stepped = m.clone();
            let mut opt = OptState::new(Optimizer::Sgd, 1e-3, m.n_params());
            opt.apply(&mut stepped.params, &g);
            let (l1, _) = stepped.loss_and_gradient(&x, 1.0, Mode::Eval).unwrap();
            assert!(l1 < l0, "scheme {scheme}: {l1} !< {l0}");
        }
    }

    #[test]
    fn training_input_checks() {
        let mcfg = tiny(2);
        let m = FusionModel::build(&mcfg).unwrap();
        assert!(matches!(
            train(&m, &[], &TrainConfig::default()),
            Err(Error::EmptyDataset)
        ));
        let mut ds = toy_dataset(&mcfg, 4);
        // an oversized batch is the whole dataset
        let whole = |batch_size| TrainConfig {
            epochs: 2,
            batch_size,
            ..Default::default()
        };
        assert_eq!(
            train(&m, &ds, &whole(50)).unwrap().0.params,
            train(&m, &ds, &whole(4)).unwrap().0.params
        );
        ds.iter_mut().for_each(|t| t.label = Label::Seizure);
        let ok = TrainConfig {
            batch_size: 2,
            ..Default::default()
        };
        assert!(matches!(train(&m, &ds, &ok), Err(Error::ClassTooSmall { .. })));
    }

    #[test]
    fn learns_a_shifted_toy_problem() {
        let mcfg = tiny(2);
        let m = FusionModel::build(&mcfg).unwrap();
        let ds = toy_dataset(&mcfg, 16);
        let cfg = TrainConfig {
            epochs: 40,
            learning_rate: 1e-2,
            batch_size: 4,
            ..Default::default()
        };
        let (_, hist) = train(&m, &ds, &cfg).unwrap();
        let first = hist.epochs.first().unwrap().loss;
        let last = hist.epochs.last().unwrap();
        assert!(last.loss < first * 0.5, "{first} → {}", last.loss);
        assert_eq!(last.accuracy, 1.0);
    }
}
