//! The black-box boundary between the attacker and the victim.
//!
//! The attack engine sees exactly this surface: a probability vector per
//! query plus a query counter. Nothing else about the victim leaks through.

use crate::audio_io::AudioClip;

/// K non-negative probabilities summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(pub Vec<f64>);

impl ProbVector {
    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Black-box classifier f: clip -> [0,1]^K.
pub trait Oracle: Sync {
    fn predict(&self, clip: &AudioClip) -> ProbVector;
    /// Monotone count of predict calls since construction.
    fn query_count(&self) -> u64;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_go_to_lowest_index() {
        let p = ProbVector(vec![0.25, 0.25, 0.25, 0.25]);
        assert_eq!(p.argmax(), 0);
        let q = ProbVector(vec![0.1, 0.45, 0.45]);
        assert_eq!(q.argmax(), 1);
    }
}
