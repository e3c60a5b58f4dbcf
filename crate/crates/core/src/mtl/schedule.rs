//! Linear warmup followed by linear decay to zero.

/// Learning rate at `step` of `total_steps`: rises linearly from 0 to
/// `peak_lr` over the first `warmup_fraction * total_steps` steps, then falls
/// linearly back to 0 at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, peak_lr: f64, warmup_fraction: f64) -> f64 {
    lr_at_position(step as f64, total_steps, peak_lr, warmup_fraction)
}

/// [`lr_at`] for a fractional position, so the warmup boundary can be hit
/// exactly when `warmup_fraction * total_steps` is not an integer.
pub fn lr_at_position(t: f64, total_steps: usize, peak_lr: f64, warmup_fraction: f64) -> f64 {
    let total = total_steps as f64;
    if total_steps == 0 || t <= 0.0 || t >= total {
        return 0.0;
    }
    let warmup = warmup_fraction * total;
    if t <= warmup {
        peak_lr * (t / warmup)
    } else {
        peak_lr * ((total - t) / ((1.0 - warmup_fraction) * total))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PEAK: f64 = 5e-5;

    #[test]
    fn reference_points() {
        assert_eq!(lr_at(0, 1000, PEAK, 0.1), 0.0);
        assert_eq!(lr_at(100, 1000, PEAK, 0.1), 5e-5);
        assert_eq!(lr_at(1000, 1000, PEAK, 0.1), 0.0);
        let mid = lr_at(550, 1000, PEAK, 0.1);
        assert!((mid - 2.5e-5).abs() < 1e-18, "{mid}");
        assert_eq!(lr_at(5, 0, PEAK, 0.1), 0.0);
    }

    #[test]
    fn single_peak() {
        let t = 1000;
        let values: Vec<f64> = (0..=t).map(|s| lr_at(s, t, PEAK, 0.1)).collect();
        let argmax = (0..=t).max_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
        assert_eq!(argmax, 100);
        assert!(values[..=100].windows(2).all(|w| w[0] < w[1]));
        assert!(values[100..].windows(2).all(|w| w[0] > w[1]));
    }
}
