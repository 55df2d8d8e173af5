use super::config::ModelConfig;
use super::ANNEAL_FACTOR;
use crate::error::{Error, Result};

/// Linear warmup from 0 to the peak rate, then one decay by
/// [`ANNEAL_FACTOR`] for every anneal point already passed.
pub fn learning_rate(step: usize, cfg: &ModelConfig) -> Result<f64> {
    if step > cfg.total_steps {
        return Err(Error::contract(format!(
            "step {step} outside 0..={}",
            cfg.total_steps
        )));
    }
    let peak = cfg.learning_rate;
    if step < cfg.warmup_steps {
        return Ok(peak * step as f64 / cfg.warmup_steps as f64);
    }
    let passed = cfg.anneal_steps.iter().filter(|&&a| step > a).count();
    Ok(peak * ANNEAL_FACTOR.powi(passed as i32))
}
