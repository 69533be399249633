//! Adam minimization with convergence detection and trace recording.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam hyperparameters and moment estimates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        AdamState {
            t: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            lr: 0.2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn with_lr(dim: usize, lr: f64) -> Self {
        AdamState {
            lr,
            ..AdamState::new(dim)
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    for i in 0..params.len() {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        params[i] -= state.lr * mhat / (vhat.sqrt() + state.eps);
    }
    Ok(())
}

/// Per-iteration record of an optimization run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: u64,
    pub time_ms: f64,
    pub objective: f64,
    pub grad_norm: f64,
    /// Structural event label (e.g. an evidence-cluster split), if any.
    pub event: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
}

impl RunTrace {
    pub fn push(&mut self, rec: TraceRecord) {
        if let Some(last) = self.records.last() {
            assert!(rec.iteration > last.iteration, "iterations must increase");
        }
        self.records.push(rec);
    }

    /// Append another trace, shifting its iteration numbers and timestamps
    /// to continue after this one.
    pub fn extend_shifted(&mut self, other: &RunTrace) {
        let (base_iter, base_ms) = self
            .records
            .last()
            .map(|r| (r.iteration, r.time_ms))
            .unwrap_or((0, 0.0));
        for r in &other.records {
            self.records.push(TraceRecord {
                iteration: base_iter + r.iteration + 1,
                time_ms: base_ms + r.time_ms,
                ..r.clone()
            });
        }
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.records.last().map(|r| r.objective)
    }

    pub fn write_csv(&self, mut out: impl std::io::Write) -> Result<()> {
        writeln!(out, "iteration,time_ms,objective,grad_norm,event")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{:.3},{:.12e},{:.6e},{}",
                r.iteration, r.time_ms, r.objective, r.grad_norm, r.event
            )?;
        }
        Ok(())
    }
}

/// Stopping rules for [`minimize`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinimizeConfig {
    pub max_iters: u64,
    pub grad_tol: f64,
    /// Relative objective change over a 10-iteration window.
    pub obj_tol: f64,
    pub lr: f64,
}

impl Default for MinimizeConfig {
    fn default() -> Self {
        MinimizeConfig {
            max_iters: 2000,
            grad_tol: 1e-5,
            obj_tol: 1e-8,
            lr: 0.2,
        }
    }
}

pub struct MinimizeResult {
    pub params: Vec<f64>,
    pub objective: f64,
    pub trace: RunTrace,
    pub adam: AdamState,
}

const OBJ_WINDOW: usize = 10;

/// Minimize `objective(params) -> (value, gradient)` with Adam, returning the
/// best parameters seen. An existing Adam state may be passed to continue a
/// previous run (used by coarse-to-fine stages).
pub fn minimize(
    mut objective: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    initial: &[f64],
    config: &MinimizeConfig,
    resume: Option<AdamState>,
) -> Result<MinimizeResult> {
    let start = Instant::now();
    let mut params = initial.to_vec();
    let mut adam = resume.unwrap_or_else(|| AdamState::with_lr(params.len(), config.lr));
    assert_eq!(adam.m.len(), params.len());
    let mut trace = RunTrace::default();
    let mut best_params = params.clone();
    let mut best_obj = f64::INFINITY;
    let mut window: Vec<f64> = Vec::new();

    for iter in 0..config.max_iters {
        let (value, grad) = objective(&params)?;
        if !value.is_finite() {
            return Err(Error::DivergenceDetected);
        }
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        trace.push(TraceRecord {
            iteration: iter,
            time_ms: start.elapsed().as_secs_f64() * 1e3,
            objective: value,
            grad_norm,
            event: String::new(),
        });
        if value < best_obj {
            best_obj = value;
            best_params.copy_from_slice(&params);
        }
        if grad_norm < config.grad_tol {
            break;
        }
        window.push(value);
        if window.len() > OBJ_WINDOW {
            window.remove(0);
            let lo = window.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if (hi - lo).abs() <= config.obj_tol * (1.0 + lo.abs()) {
                break;
            }
        }
        adam_step(&mut params, &grad, &mut adam)?;
    }

    if best_obj == f64::INFINITY {
        // max_iters == 0: evaluate once so the result is well defined.
        let (value, _) = objective(&params)?;
        best_obj = value;
    }
    Ok(MinimizeResult {
        params: best_params,
        objective: best_obj,
        trace,
        adam,
    })
}

/// Run `minimize` from `n_starts` initial points and keep the best final
/// objective; per-start seeds are derived from `master_seed`.
pub fn multi_start(
    mut objective: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    mut init_for_seed: impl FnMut(u64) -> Vec<f64>,
    n_starts: usize,
    master_seed: u64,
    config: &MinimizeConfig,
) -> Result<MinimizeResult> {
    assert!(n_starts >= 1);
    let mut best: Option<MinimizeResult> = None;
    for s in 0..n_starts {
        let seed = master_seed.wrapping_add(s as u64).wrapping_mul(0x9e3779b97f4a7c15);
        let initial = init_for_seed(seed);
        let result = minimize(&mut objective, &initial, config, None)?;
        let better = match &best {
            None => true,
            Some(b) => result.objective < b.objective,
        };
        if better {
            best = Some(result);
        }
    }
    Ok(best.unwrap())
}
