use serde::{Deserialize, Serialize};

use super::ClassifyError;

/// One step between consecutive IPID samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delta {
    Forward(u16),
    /// The counter appeared to move backwards (reordering or a foreign
    /// counter); carries the raw modular difference.
    Artifact(u16),
}

impl Delta {
    pub fn forward(self) -> Option<u16> {
        match self {
            Delta::Forward(d) => Some(d),
            Delta::Artifact(_) => None,
        }
    }
}

/// `ipid[i+1] - ipid[i]` modulo 65536. Differences of 32768 or more are
/// marked as artifacts rather than read as huge forward jumps.
pub fn diff_series(ipids: &[u16]) -> Result<Vec<Delta>, ClassifyError> {
    if ipids.len() < 2 {
        return Err(ClassifyError::TooShort {
            need: 2,
            got: ipids.len(),
        });
    }
    Ok(ipids
        .windows(2)
        .map(|w| {
            let d = w[1].wrapping_sub(w[0]);
            if d >= 32768 {
                Delta::Artifact(d)
            } else {
                Delta::Forward(d)
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wraps_and_flags() {
        assert_eq!(diff_series(&[65535, 2]).unwrap(), vec![Delta::Forward(3)]);
        assert_eq!(
            diff_series(&[100, 101, 102]).unwrap(),
            vec![Delta::Forward(1), Delta::Forward(1)]
        );
        assert_eq!(diff_series(&[10, 9]).unwrap(), vec![Delta::Artifact(65535)]);
        assert!(diff_series(&[1]).is_err());
    }

    proptest! {
        #[test]
        fn offset_invariant(v in proptest::collection::vec(any::<u16>(), 2..50), c in any::<u16>()) {
            let shifted: Vec<u16> = v.iter().map(|x| x.wrapping_add(c)).collect();
            prop_assert_eq!(diff_series(&v).unwrap(), diff_series(&shifted).unwrap());
        }
    }
}
