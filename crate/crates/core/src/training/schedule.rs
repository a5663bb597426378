use crate::error::{EfaError, Result};

/// Number of warm-up updates for a run of `total_steps`.
pub fn warmup_steps(total_steps: usize, warmup_frac: f64) -> usize {
    ((total_steps as f64) * warmup_frac).round() as usize
}

/// Linear warm-up from 0 to `base_lr` over the warm-up steps, then linear
/// decay to 0 at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, base_lr: f64, warmup_frac: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(EfaError::InvalidArgument("total_steps must be at least 1".into()));
    }
    if step > total_steps {
        return Err(EfaError::InvalidArgument(format!("step {step} is past the end of the schedule ({total_steps})")));
    }
    if !(0.0..=1.0).contains(&warmup_frac) {
        return Err(EfaError::Config(format!("warmup_frac must be in [0, 1], got {warmup_frac}")));
    }
    let warmup = warmup_steps(total_steps, warmup_frac);
    Ok(if step < warmup {
        base_lr * step as f64 / warmup as f64
    } else if warmup == total_steps {
        base_lr
    } else {
        base_lr * (total_steps - step) as f64 / (total_steps - warmup) as f64
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn anchor_points() {
        assert_eq!(lr_at(0, 100, 1e-3, 0.1).unwrap(), 0.0);
        assert_eq!(lr_at(10, 100, 1e-3, 0.1).unwrap(), 1e-3);
        assert_eq!(lr_at(55, 100, 1e-3, 0.1).unwrap(), 0.5e-3);
        assert_eq!(lr_at(100, 100, 1e-3, 0.1).unwrap(), 0.0);
        assert_eq!(lr_at(0, 10, 1.0, 0.0).unwrap(), 1.0);
        assert!(lr_at(1, 0, 1.0, 0.1).is_err());
        assert!(lr_at(11, 10, 1.0, 0.1).is_err());
    }

    proptest! {
        #[test]
        fn bounded_and_unimodal(total in 1usize..500, frac in 0.0f64..0.5, base in 1e-6f64..1.0) {
            let lrs: Vec<f64> = (0..=total).map(|s| lr_at(s, total, base, frac).unwrap()).collect();
            prop_assert!(lrs.iter().all(|&v| (0.0..=base * (1.0 + 1e-12)).contains(&v)));
            let peak = warmup_steps(total, frac);
            prop_assert!(lrs[..=peak].windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(lrs[peak..].windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
