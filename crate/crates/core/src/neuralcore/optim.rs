use serde::{Deserialize, Serialize};

use super::{ParamStore, Scalar, TensorError};

/// Plain SGD on the gradients stored in `params`: `p ← p − lr·g`.
///
/// Every gradient is checked before anything is written, so a non-finite
/// value leaves the parameters untouched.
pub fn sgd_step<T: Scalar>(params: &mut ParamStore<T>, lr: T) -> Result<(), TensorError> {
    for (_, name, t) in params.iter() {
        if let Some(g) = t.grad() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TensorError::NonFinite(name.to_string()));
            }
        }
    }
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let t = params.get_mut(id);
        let Some(g) = t.grad().map(<[T]>::to_vec) else { continue };
        for (p, gv) in t.data_mut().iter_mut().zip(g) {
            *p -= lr * gv;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub total_steps: usize,
    pub max_lr: f64,
    pub warmup_fraction: f64,
    pub div: f64,
    pub final_div: f64,
}

impl LrSchedule {
    pub fn new(total_steps: usize, max_lr: f64) -> Self {
        LrSchedule {
            total_steps,
            max_lr,
            warmup_fraction: 0.3,
            div: 25.0,
            final_div: 1e4,
        }
    }

    /// Step at which the peak is reached.
    pub fn warmup_end(&self) -> usize {
        let n = self.total_steps;
        if n < 3 {
            return 0;
        }
        let raw = (self.warmup_fraction * (n - 1) as f64).round() as usize;
        raw.clamp(1, n - 2)
    }

    pub fn lr(&self, step: usize) -> f64 {
        one_cycle_lr(step, self)
    }
}

/// Linear warm-up from `max_lr/div` to `max_lr`, then cosine annealing to
/// `max_lr/final_div` at the last step. Steps past the end keep the final rate.
pub fn one_cycle_lr(step: usize, sched: &LrSchedule) -> f64 {
    let n = sched.total_steps.max(1);
    let step = step.min(n - 1);
    let hi = sched.max_lr;
    let lo = hi / sched.div;
    let end = hi / sched.final_div;
    match n {
        1 => return hi,
        2 => return if step == 0 { hi } else { end },
        _ => {}
    }
    let warm = sched.warmup_end();
    if step <= warm {
        let t = step as f64 / warm as f64;
        hi * t + lo * (1.0 - t)
    } else {
        let t = (step - warm) as f64 / (n - 1 - warm) as f64;
        end + (hi - end) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}
