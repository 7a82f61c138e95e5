use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Time-to-touch distribution, a normal truncated to non-negative values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PresenceDist {
    pub mean_us: f64,
    pub std_us: f64,
}

/// A user's reaction time to the presence prompt, first contact vs. primed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserPresenceModel {
    pub unprimed: PresenceDist,
    pub primed: PresenceDist,
}

impl UserPresenceModel {
    /// Rows of the user study, in milliseconds converted to µs.
    pub fn subject(id: u8) -> Option<Self> {
        let (u_mean, u_std, p_mean, p_std) = match id {
            1 => (5_041.0, 943.0, 750.0, 227.0),
            2 => (3_980.0, 585.0, 344.0, 116.0),
            3 => (5_441.0, 844.0, 707.0, 277.0),
            _ => return None,
        };
        Some(Self {
            unprimed: PresenceDist {
                mean_us: u_mean * 1e3,
                std_us: u_std * 1e3,
            },
            primed: PresenceDist {
                mean_us: p_mean * 1e3,
                std_us: p_std * 1e3,
            },
        })
    }

    /// Same delay every time.
    pub fn fixed(delay_us: f64) -> Self {
        let dist = PresenceDist {
            mean_us: delay_us,
            std_us: 0.0,
        };
        Self {
            unprimed: dist,
            primed: dist,
        }
    }

    pub fn dist(&self, primed: bool) -> PresenceDist {
        if primed {
            self.primed
        } else {
            self.unprimed
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for d in [self.unprimed, self.primed] {
            if !(d.mean_us.is_finite() && d.mean_us > 0.0) {
                return Err(format!("presence mean must be > 0, got {}", d.mean_us));
            }
            if !(d.std_us.is_finite() && d.std_us >= 0.0) {
                return Err(format!("presence std must be >= 0, got {}", d.std_us));
            }
        }
        Ok(())
    }
}

/// One draw from the selected distribution, resampling negatives.
pub fn sample_presence<R: Rng + ?Sized>(
    user: &UserPresenceModel,
    primed: bool,
    rng: &mut R,
) -> f64 {
    let dist = user.dist(primed);
    if dist.std_us == 0.0 {
        return dist.mean_us;
    }
    let normal = Normal::new(dist.mean_us, dist.std_us).expect("validated parameters");
    loop {
        let x = normal.sample(rng);
        if x >= 0.0 {
            return x;
        }
    }
}
