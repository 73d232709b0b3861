//! Exhaustive combination over the power set of a frame.
//!
//! Focal elements are bitmasks over frame indices and every pair of focal
//! elements is intersected explicitly. This is slow and general, and shares
//! no code with the specialised singleton-plus-`Θ` combiners, which is what
//! makes it useful as a cross-check.

use super::{EvidenceError, MassVector, Rule, TOTAL_CONFLICT_EPS};
use std::collections::BTreeMap;

/// A general basic belief assignment: focal set (bitmask) to mass.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralBba {
    n: usize,
    masses: BTreeMap<u64, f64>,
}

impl GeneralBba {
    pub fn new(n: usize, masses: BTreeMap<u64, f64>) -> Result<Self, EvidenceError> {
        if !(2..64).contains(&n) {
            return Err(EvidenceError::FrameTooSmall(n));
        }
        let full = Self::full_mask(n);
        for (&set, &m) in &masses {
            if set == 0 || set & !full != 0 {
                return Err(EvidenceError::FocalOutsideFrame(set));
            }
            if !m.is_finite() || m < 0.0 {
                return Err(EvidenceError::InvalidMass { index: set as usize, value: m });
            }
        }
        let sum: f64 = masses.values().sum();
        if (sum - 1.0).abs() > super::SUM_TOLERANCE {
            return Err(EvidenceError::NotNormalized(sum));
        }
        Ok(Self { n, masses })
    }

    pub fn from_mass_vector(m: &MassVector) -> Self {
        let mut masses = BTreeMap::new();
        for (i, &v) in m.singletons().iter().enumerate() {
            if v > 0.0 {
                masses.insert(1u64 << i, v);
            }
        }
        if m.theta() > 0.0 {
            masses.insert(Self::full_mask(m.n()), m.theta());
        }
        Self { n: m.n(), masses }
    }

    /// Fails if any compound proper subset carries mass.
    pub fn to_mass_vector(&self) -> Result<MassVector, EvidenceError> {
        let full = Self::full_mask(self.n);
        let mut singletons = vec![0.0; self.n];
        let mut theta = 0.0;
        for (&set, &m) in &self.masses {
            if set == full {
                theta += m;
            } else if set.count_ones() == 1 {
                singletons[set.trailing_zeros() as usize] += m;
            } else if m > 0.0 {
                return Err(EvidenceError::CompoundFocal(set));
            }
        }
        MassVector::new(singletons, theta)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mass(&self, set: u64) -> f64 {
        self.masses.get(&set).copied().unwrap_or(0.0)
    }

    pub fn focal_elements(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.masses.iter().map(|(&s, &m)| (s, m))
    }

    pub fn full_mask(n: usize) -> u64 {
        (1u64 << n) - 1
    }
}

/// Combines two general BBAs; returns the fused BBA and the conflict mass.
pub fn powerset_oracle(
    a: &GeneralBba,
    b: &GeneralBba,
    rule: Rule,
) -> Result<(GeneralBba, f64), EvidenceError> {
    if a.n != b.n {
        return Err(EvidenceError::FrameMismatch { left: a.n, right: b.n });
    }
    let mut joint: BTreeMap<u64, f64> = BTreeMap::new();
    let mut conflict = 0.0;
    for (sa, ma) in a.focal_elements() {
        for (sb, mb) in b.focal_elements() {
            let inter = sa & sb;
            if inter == 0 {
                conflict += ma * mb;
            } else {
                *joint.entry(inter).or_insert(0.0) += ma * mb;
            }
        }
    }
    match rule {
        Rule::Dempster => {
            if conflict >= 1.0 - TOTAL_CONFLICT_EPS {
                return Err(EvidenceError::TotalConflict(conflict));
            }
            joint.values_mut().for_each(|m| *m /= 1.0 - conflict);
        }
        Rule::Yager => {
            if conflict > 0.0 {
                *joint.entry(GeneralBba::full_mask(a.n)).or_insert(0.0) += conflict;
            }
        }
    }
    Ok((GeneralBba { n: a.n, masses: joint }, conflict))
}
