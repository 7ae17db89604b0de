use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OneCycleConfig {
    pub warmup_fraction: f64,
    pub initial_divisor: f64,
    pub final_divisor: f64,
}

impl Default for OneCycleConfig {
    fn default() -> Self {
        Self {
            warmup_fraction: 0.05,
            initial_divisor: 10.0,
            final_divisor: 1000.0,
        }
    }
}

/// Index of the step at which the schedule peaks.
pub fn warmup_end(total_steps: usize, cfg: &OneCycleConfig) -> usize {
    if total_steps < 2 {
        return 0;
    }
    let last = total_steps - 1;
    ((cfg.warmup_fraction * last as f64).round() as usize).clamp(1, last)
}

/// `weight * a + (1 - weight) * b`, exact at both ends.
fn blend(a: f64, b: f64, weight: f64) -> f64 {
    a * weight + b * (1.0 - weight)
}

/// Cosine rise from `max_lr / initial_divisor` to `max_lr`, then cosine
/// descent to `max_lr / final_divisor` at the last step.
pub fn onecycle_lr(step: usize, total_steps: usize, max_lr: f64, cfg: &OneCycleConfig) -> f64 {
    let start = max_lr / cfg.initial_divisor;
    let end = max_lr / cfg.final_divisor;
    if total_steps < 2 {
        return start;
    }
    let step = step.min(total_steps - 1);
    let peak = warmup_end(total_steps, cfg);
    if step <= peak {
        let t = step as f64 / peak as f64;
        blend(start, max_lr, (1.0 + (PI * t).cos()) / 2.0)
    } else {
        let t = (step - peak) as f64 / (total_steps - 1 - peak) as f64;
        blend(max_lr, end, (1.0 + (PI * t).cos()) / 2.0)
    }
}
