//! Patient-wise train/validation/test partitioning.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::CineSample;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Subset::Train),
            "validation" | "val" => Ok(Subset::Validation),
            "test" => Ok(Subset::Test),
            _ => Err(Error::InvalidConfig(format!("unknown split {s:?} (expected train, validation or test)"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn cases(&self, subset: Subset) -> &[String] {
        match subset {
            Subset::Train => &self.train,
            Subset::Validation => &self.validation,
            Subset::Test => &self.test,
        }
    }

    pub fn subset_of(&self, case_id: &str) -> Option<Subset> {
        [Subset::Train, Subset::Validation, Subset::Test]
            .into_iter()
            .find(|&s| self.cases(s).iter().any(|c| c == case_id))
    }

    /// The samples whose case belongs to `subset`, in their original order.
    pub fn select<'a>(&self, samples: &'a [CineSample], subset: Subset) -> Vec<&'a CineSample> {
        let cases = self.cases(subset);
        samples.iter().filter(|s| cases.contains(&s.case_id)).collect()
    }
}

/// Shuffle the (sorted, de-duplicated) case ids with `seed` and cut them by
/// `ratio`. Each part gets `⌊n·r/Σr⌋` cases; leftovers go one at a time to
/// train, then validation, then test.
pub fn split_patients(case_ids: &[String], ratio: (usize, usize, usize), seed: u64) -> Result<DatasetSplit> {
    let weights = [ratio.0, ratio.1, ratio.2];
    let total: usize = weights.iter().sum();
    let parts = weights.iter().filter(|&&w| w > 0).count();
    if total == 0 {
        return Err(Error::InvalidConfig("split ratio must have a positive part".into()));
    }
    let mut ids = case_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() != case_ids.len() {
        return Err(Error::InvalidConfig("duplicate case ids".into()));
    }
    let n = ids.len();
    if n < parts {
        return Err(Error::NotEnoughCases { cases: n, parts });
    }
    ids.shuffle(&mut crate::rng::stream(seed, &[0x5917]));

    let mut counts = weights.map(|w| n * w / total);
    let mut left = n - counts.iter().sum::<usize>();
    while left > 0 {
        for (c, &w) in counts.iter_mut().zip(&weights) {
            if left > 0 && w > 0 {
                *c += 1;
                left -= 1;
            }
        }
    }
    let test = ids.split_off(counts[0] + counts[1]);
    let validation = ids.split_off(counts[0]);
    Ok(DatasetSplit { train: ids, validation, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("case{i:02}")).collect()
    }

    #[test]
    fn sizes() {
        let s = split_patients(&ids(45), (1, 1, 1), 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (15, 15, 15));
        let s = split_patients(&ids(4), (1, 1, 1), 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (2, 1, 1));
        let s = split_patients(&ids(5), (1, 1, 1), 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (2, 2, 1));
        let s = split_patients(&ids(40), (4, 0, 1), 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (32, 0, 8));
    }

    #[test]
    fn deterministic_disjoint_and_complete() {
        let a = split_patients(&ids(30), (1, 1, 1), 9).unwrap();
        assert_eq!(a, split_patients(&ids(30), (1, 1, 1), 9).unwrap());
        assert_ne!(a, split_patients(&ids(30), (1, 1, 1), 10).unwrap());
        let mut all: Vec<String> = a.train.iter().chain(&a.validation).chain(&a.test).cloned().collect();
        all.sort();
        assert_eq!(all, ids(30));
    }

    #[test]
    fn errors() {
        assert!(matches!(split_patients(&ids(2), (1, 1, 1), 0), Err(Error::NotEnoughCases { cases: 2, parts: 3 })));
        assert!(split_patients(&["a".into(), "a".into(), "b".into()], (1, 1, 1), 0).is_err());
    }
}
