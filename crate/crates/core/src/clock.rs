//! Simulated time. Nothing here reads a wall clock: time moves only when a
//! component charges a cost.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Microseconds since scenario start. Monotone non-decreasing.
#[derive(Debug, Clone, Copy, Default, PartialEq, PartialOrd)]
pub struct SimClock {
    now_us: f64,
}

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now_us(&self) -> f64 {
        self.now_us
    }

    pub fn advance(&mut self, us: f64) {
        assert!(
            us.is_finite() && us >= 0.0,
            "clock cannot advance by {us} µs"
        );
        self.now_us += us;
    }
}

/// Zero-mean Gaussian noise added to every charged cost, truncated so that
/// a charge is never negative.
#[derive(Debug, Clone)]
pub struct Jitter {
    noise: Option<Normal<f64>>,
    rng: ChaCha8Rng,
}

impl Jitter {
    pub fn new(std_us: f64, rng: ChaCha8Rng) -> Self {
        assert!(std_us.is_finite() && std_us >= 0.0);
        let noise = (std_us > 0.0).then(|| Normal::new(0.0, std_us).expect("finite std"));
        Self { noise, rng }
    }

    /// Zero-cost stages stay free: there is no work to jitter.
    pub fn perturb(&mut self, cost_us: f64) -> f64 {
        if cost_us == 0.0 {
            return 0.0;
        }
        match &self.noise {
            Some(noise) => (cost_us + noise.sample(&mut self.rng)).max(0.0),
            None => cost_us,
        }
    }

    /// Uniform draw from `[lo, hi]`, sharing the jitter stream.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi > lo {
            self.rng.gen_range(lo..=hi)
        } else {
            lo
        }
    }
}

/// Charges costs against a clock, applying jitter.
pub struct CostMeter<'a> {
    clock: &'a mut SimClock,
    jitter: &'a mut Jitter,
}

impl<'a> CostMeter<'a> {
    pub fn new(clock: &'a mut SimClock, jitter: &'a mut Jitter) -> Self {
        Self { clock, jitter }
    }

    pub fn charge(&mut self, cost_us: f64) {
        let charged = self.jitter.perturb(cost_us);
        self.clock.advance(charged);
    }

    /// Charges an already-random amount without further jitter.
    pub fn charge_exact(&mut self, us: f64) {
        self.clock.advance(us);
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.jitter.uniform(lo, hi)
    }

    pub fn now_us(&self) -> f64 {
        self.clock.now_us()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_jitter_charges_exact_cost() {
        let mut clock = SimClock::new();
        let mut jitter = Jitter::new(0.0, ChaCha8Rng::seed_from_u64(1));
        let mut meter = CostMeter::new(&mut clock, &mut jitter);
        meter.charge(12.5);
        meter.charge(7.5);
        assert_eq!(clock.now_us(), 20.0);
    }

    #[test]
    fn zero_cost_stays_zero_under_jitter() {
        let mut j = Jitter::new(500.0, ChaCha8Rng::seed_from_u64(4));
        assert!((0..1000).all(|_| j.perturb(0.0) == 0.0));
    }

    #[test]
    fn jittered_charge_is_never_negative() {
        let mut jitter = Jitter::new(1_000.0, ChaCha8Rng::seed_from_u64(2));
        for _ in 0..10_000 {
            assert!(jitter.perturb(1.0) >= 0.0);
        }
    }

    #[test]
    #[should_panic]
    fn clock_refuses_to_run_backwards() {
        SimClock::new().advance(-1.0);
    }
}
