use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decay {
    Cosine,
    Constant,
}

/// Linear warmup to `peak`, then decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub peak: f64,
    /// Fraction of the steps spent warming up, in `[0, 1)`.
    pub warmup_fraction: f64,
    pub decay: Decay,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            peak: 1.0,
            warmup_fraction: 0.1,
            decay: Decay::Cosine,
        }
    }
}

impl ScheduleSpec {
    pub fn constant(peak: f64) -> Self {
        Self {
            peak,
            warmup_fraction: 0.0,
            decay: Decay::Constant,
        }
    }

    pub fn warmup_steps(&self, total: usize) -> usize {
        libm::floor(self.warmup_fraction * total as f64) as usize
    }
}

/// Learning rate at `step` of `total`.
pub fn schedule(step: usize, total: usize, spec: &ScheduleSpec) -> f64 {
    let warm = spec.warmup_steps(total);
    // Starts above zero so the first update is not forced to vanish.
    if step < warm {
        return spec.peak * (step + 1) as f64 / (warm + 1) as f64;
    }
    match spec.decay {
        Decay::Constant => spec.peak,
        Decay::Cosine => {
            let span = (total - warm) as f64;
            let progress = (step - warm) as f64 / span;
            spec.peak * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * progress))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn warmup_endpoint_is_peak() {
        let spec = ScheduleSpec { peak: 0.7, ..Default::default() };
        assert_eq!(schedule(100, 1000, &spec), 0.7);
        assert_eq!(schedule(0, 1000, &spec), 0.7 / 101.0);
        assert!(schedule(50, 1000, &spec) < 0.7);
    }

    #[test]
    fn decay_endpoint_is_small() {
        let spec = ScheduleSpec::default();
        let (t, w) = (1000.0, 100.0);
        let last = schedule(999, 1000, &spec);
        let bound = 0.5 * (1.0 - libm::cos(core::f64::consts::PI * (t - 1.0 - w) / (t - w)));
        assert!(last <= 1.0 - bound + 1e-15);
        assert!(last < 1e-5);
    }

    #[test]
    fn constant_schedule() {
        let spec = ScheduleSpec::constant(0.3);
        assert!((0..50).all(|s| schedule(s, 50, &spec) == 0.3));
    }

    proptest! {
        #[test]
        fn peaks_once_and_decays_monotonically(total in 2usize..3000, frac in 0.0f64..0.9) {
            let spec = ScheduleSpec { peak: 1.0, warmup_fraction: frac, decay: Decay::Cosine };
            let lrs: alloc::vec::Vec<f64> = (0..total).map(|s| schedule(s, total, &spec)).collect();
            prop_assert!(lrs.iter().all(|&x| x >= 0.0 && x <= 1.0));
            let warm = spec.warmup_steps(total);
            prop_assert_eq!(lrs.iter().filter(|&&x| x == 1.0).count(), 1);
            prop_assert_eq!(lrs[warm], 1.0);
            for s in warm + 1..total {
                prop_assert!(lrs[s] <= lrs[s - 1]);
            }
            for s in 1..=warm {
                prop_assert!(lrs[s] >= lrs[s - 1]);
            }
        }
    }
}
