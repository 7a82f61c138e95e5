use super::AttackError;

pub const TRAIN_FRACTION: f64 = 0.7;
pub const MIN_PER_CLASS: usize = 10;

/// Midpoint threshold between the training means of the two classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdClassifier {
    pub threshold_us: f64,
    pub train_fraction: f64,
    pub train_mean_e_us: f64,
    pub train_mean_d_us: f64,
    /// Misclassified fraction of the held-out observations of both classes.
    pub test_error: f64,
    pub test_size: usize,
}

impl ThresholdClassifier {
    /// `true` means "candidate present".
    pub fn classify(&self, timing_us: f64) -> bool {
        timing_us >= self.threshold_us
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkVerdict {
    pub linked: bool,
    pub t_e_mean_us: f64,
    pub t_d_mean_us: f64,
    pub margin_us: f64,
}

fn split(xs: &[f64]) -> (&[f64], &[f64]) {
    let train = ((xs.len() as f64 * TRAIN_FRACTION).round() as usize).clamp(1, xs.len() - 1);
    xs.split_at(train)
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Splits each class by order, fits on the first 70% and scores the rest.
pub fn fit_threshold(e: &[f64], d: &[f64]) -> Result<ThresholdClassifier, AttackError> {
    for (class, xs) in [("e", e), ("d", d)] {
        if xs.len() < MIN_PER_CLASS {
            return Err(AttackError::TooFewObservations {
                class,
                got: xs.len(),
                need: MIN_PER_CLASS,
            });
        }
    }
    let (e_train, e_test) = split(e);
    let (d_train, d_test) = split(d);
    let (me, md) = (mean(e_train), mean(d_train));
    if !(me.is_finite() && md.is_finite()) {
        return Err(AttackError::NonFiniteMeans);
    }
    let mut classifier = ThresholdClassifier {
        threshold_us: (me + md) / 2.0,
        train_fraction: TRAIN_FRACTION,
        train_mean_e_us: me,
        train_mean_d_us: md,
        test_error: 0.0,
        test_size: e_test.len() + d_test.len(),
    };
    let wrong = e_test.iter().filter(|&&t| classifier.classify(t)).count()
        + d_test.iter().filter(|&&t| !classifier.classify(t)).count();
    classifier.test_error = wrong as f64 / classifier.test_size as f64;
    Ok(classifier)
}

/// Strict majority of the probe observations must land on the
/// candidate-present side.
pub fn decide_link(classifier: &ThresholdClassifier, d: &[f64]) -> LinkVerdict {
    let above = d.iter().filter(|&&t| classifier.classify(t)).count();
    let t_d_mean_us = if d.is_empty() { f64::NAN } else { mean(d) };
    LinkVerdict {
        linked: 2 * above > d.len(),
        t_e_mean_us: classifier.train_mean_e_us,
        t_d_mean_us,
        margin_us: (t_d_mean_us - classifier.threshold_us).abs(),
    }
}
