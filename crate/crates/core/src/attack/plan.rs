use rand::RngCore;

use super::AttackError;
use crate::authenticator::KeyHandle;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Filler {
    Random,
    Candidate,
}

impl Filler {
    pub fn as_str(self) -> &'static str {
        match self {
            Filler::Random => "random",
            Filler::Candidate => "candidate",
        }
    }
}

/// One probe list: `n` filler entries followed by the anchor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbePlan {
    pub n: usize,
    pub filler: Filler,
    pub candidate: KeyHandle,
    pub anchor: KeyHandle,
}

impl ProbePlan {
    pub fn new(
        n: usize,
        filler: Filler,
        candidate: KeyHandle,
        anchor: KeyHandle,
    ) -> Result<Self, AttackError> {
        if n == 0 {
            return Err(AttackError::ZeroRepetitions);
        }
        Ok(Self {
            n,
            filler,
            candidate,
            anchor,
        })
    }

    pub fn list_len(&self) -> usize {
        self.n + 1
    }
}

/// Random filler draws fresh handles as long as the anchor, so they pass any
/// length check and fail on the first real one.
pub fn build_probe_list<R: RngCore>(plan: &ProbePlan, rng: &mut R) -> Vec<KeyHandle> {
    let mut list: Vec<KeyHandle> = match plan.filler {
        Filler::Random => (0..plan.n)
            .map(|_| KeyHandle::random(plan.anchor.len(), rng))
            .collect(),
        Filler::Candidate => vec![plan.candidate.clone(); plan.n],
    };
    list.push(plan.anchor.clone());
    list
}
