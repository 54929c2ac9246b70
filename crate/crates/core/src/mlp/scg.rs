//! Scaled conjugate gradient (Møller) over the flat parameter vector.
//!
//! One iteration is one epoch: a full-batch gradient at the current point, a
//! finite-difference curvature probe along the search direction, and a trial
//! step whose acceptance drives the Levenberg-style scale `lambda`.

use serde::{Deserialize, Serialize};

use super::{objective, Batch, MlpError, MlpModel, NormParams, TrainingMeta};
use crate::dataset::LabeledDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub grad_tol: f64,
    pub rng_seed: u64,
    pub sigma: f64,
    pub lambda: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 2000,
            grad_tol: 1e-7,
            rng_seed: 0,
            sigma: 1e-4,
            lambda: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MlpError> {
        if self.max_epochs == 0 {
            return Err(MlpError::Config("max_epochs must be at least 1".into()));
        }
        if !(self.grad_tol.is_finite() && self.grad_tol >= 0.0) {
            return Err(MlpError::Config("grad_tol must be finite and non-negative".into()));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(MlpError::Config("sigma must be finite and positive".into()));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(MlpError::Config("lambda must be finite and positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    GradientTolerance,
    /// The search direction vanished, so no further progress is possible.
    ZeroDirection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub grad_inf_norm: f64,
    pub step_accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub initial_loss: f64,
    pub initial_grad_inf_norm: f64,
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: StopReason,
}

impl TrainTrace {
    pub fn epochs_run(&self) -> usize {
        self.epochs.len()
    }

    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(self.initial_loss, |e| e.loss)
    }

    pub fn final_grad_inf_norm(&self) -> f64 {
        self.epochs.last().map_or(self.initial_grad_inf_norm, |e| e.grad_inf_norm)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn axpy(w: &[f64], alpha: f64, p: &[f64]) -> Vec<f64> {
    w.iter().zip(p).map(|(wi, pi)| wi + alpha * pi).collect()
}

/// Fits normalization on `data`, then minimizes mean cross-entropy from the
/// parameters of `model`. Returns the trained model and the per-epoch trace.
pub fn train_scg(model: &MlpModel, data: &LabeledDataset, cfg: &TrainConfig) -> Result<(MlpModel, TrainTrace), MlpError> {
    cfg.validate()?;
    if data.n_features() != model.n_inputs() && !data.is_empty() {
        return Err(MlpError::InputDim {
            expected: model.n_inputs(),
            got: data.n_features(),
        });
    }
    let mut out = model.clone();
    out.norm = if data.is_empty() {
        NormParams::identity(model.n_inputs())
    } else {
        NormParams::fit(&data.x)
    };
    let batch = Batch::new(&out, data)?;
    let sizes = out.layer_sizes.clone();
    let n = out.params.len();

    let mut w = out.params.clone();
    let (mut loss, mut g) = objective(&sizes, &w, &batch);
    if !loss.is_finite() {
        return Err(MlpError::NonFinite { what: "loss", epoch: 0 });
    }
    let initial_loss = loss;
    let initial_grad = inf_norm(&g);

    let mut r: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut p = r.clone();
    let mut success = true;
    let mut lambda = cfg.lambda;
    let mut lambda_bar = 0.0;
    let mut delta = 0.0;
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        let p2 = dot(&p, &p);
        if p2 == 0.0 {
            stop_reason = StopReason::ZeroDirection;
            break;
        }
        if success {
            let sigma = cfg.sigma / p2.sqrt();
            let (_, g_probe) = objective(&sizes, &axpy(&w, sigma, &p), &batch);
            delta = g_probe.iter().zip(&g).zip(&p).map(|((gs, g0), pi)| (gs - g0) / sigma * pi).sum();
        }
        delta += (lambda - lambda_bar) * p2;
        if delta <= 0.0 {
            lambda_bar = 2.0 * (lambda - delta / p2);
            delta = -delta + lambda * p2;
            lambda = lambda_bar;
        }
        let mu = dot(&p, &r);
        if !(mu.is_finite() && delta.is_finite()) {
            return Err(MlpError::NonFinite { what: "step size", epoch });
        }
        if mu == 0.0 {
            // Direction orthogonal to the gradient: restart along steepest descent.
            p.clone_from(&r);
            success = true;
            lambda_bar = 0.0;
            epochs.push(EpochRecord {
                epoch,
                loss,
                grad_inf_norm: inf_norm(&g),
                step_accepted: false,
            });
            if inf_norm(&g) < cfg.grad_tol {
                stop_reason = StopReason::GradientTolerance;
                break;
            }
            continue;
        }
        let alpha = mu / delta;
        let w_new = axpy(&w, alpha, &p);
        let (loss_new, g_new) = objective(&sizes, &w_new, &batch);
        if !loss_new.is_finite() {
            return Err(MlpError::NonFinite { what: "loss", epoch });
        }
        let comparison = 2.0 * delta * (loss - loss_new) / (mu * mu);

        let accepted = comparison >= 0.0;
        if accepted {
            w = w_new;
            loss = loss_new;
            g = g_new;
            let r_old = std::mem::replace(&mut r, g.iter().map(|v| -v).collect());
            lambda_bar = 0.0;
            success = true;
            if epoch % n == 0 {
                p.clone_from(&r);
            } else {
                let beta = (dot(&r, &r) - dot(&r, &r_old)) / mu;
                p = axpy(&r, beta, &p);
            }
            if comparison >= 0.75 {
                lambda *= 0.25;
            }
        } else {
            lambda_bar = lambda;
            success = false;
        }
        if comparison < 0.25 {
            lambda += delta * (1.0 - comparison) / p2;
        }
        if !lambda.is_finite() {
            return Err(MlpError::NonFinite { what: "scale parameter", epoch });
        }

        let grad_inf_norm = inf_norm(&g);
        epochs.push(EpochRecord {
            epoch,
            loss,
            grad_inf_norm,
            step_accepted: accepted,
        });
        if grad_inf_norm < cfg.grad_tol {
            stop_reason = StopReason::GradientTolerance;
            break;
        }
    }

    out.params = w;
    let trace = TrainTrace {
        initial_loss,
        initial_grad_inf_norm: initial_grad,
        epochs,
        stop_reason,
    };
    out.training = Some(TrainingMeta {
        seed: cfg.rng_seed,
        epochs_run: trace.epochs_run(),
        final_loss: trace.final_loss(),
        final_grad_norm: trace.final_grad_inf_norm(),
        stop_reason,
        max_epochs: cfg.max_epochs,
        grad_tol: cfg.grad_tol,
    });
    Ok((out, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::fit;

    fn xor() -> LabeledDataset {
        LabeledDataset::new(
            vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]],
            vec![0, 1, 1, 0],
            vec!["zero".into(), "one".into()],
        )
        .unwrap()
    }

    #[test]
    fn learns_xor() {
        let cfg = TrainConfig {
            max_epochs: 500,
            rng_seed: 3,
            ..TrainConfig::default()
        };
        let (model, trace) = fit(&[2, 8, 2], &xor(), &cfg).unwrap();
        let data = xor();
        for (x, &y) in data.x.iter().zip(&data.y) {
            assert_eq!(model.predict(x).unwrap().0, y);
        }
        assert!(trace.final_loss() < trace.initial_loss);
    }

    #[test]
    fn single_epoch_runs_once() {
        let cfg = TrainConfig {
            max_epochs: 1,
            ..TrainConfig::default()
        };
        let (model, trace) = fit(&[2, 4, 2], &xor(), &cfg).unwrap();
        assert_eq!(trace.epochs_run(), 1);
        assert_eq!(model.training.unwrap().epochs_run, 1);
    }

    #[test]
    fn loose_tolerance_stops_after_first_epoch() {
        let cfg = TrainConfig {
            grad_tol: 1e6,
            ..TrainConfig::default()
        };
        let (_, trace) = fit(&[2, 4, 2], &xor(), &cfg).unwrap();
        assert_eq!(trace.epochs_run(), 1);
        assert_eq!(trace.stop_reason, StopReason::GradientTolerance);
    }

    #[test]
    fn deterministic() {
        let cfg = TrainConfig {
            max_epochs: 50,
            rng_seed: 11,
            ..TrainConfig::default()
        };
        let a = fit(&[2, 5, 2], &xor(), &cfg).unwrap();
        let b = fit(&[2, 5, 2], &xor(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = TrainConfig {
            max_epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(fit(&[2, 2], &xor(), &cfg), Err(MlpError::Config(_))));
    }
}
