use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EventError, PatientId};

/// Randomly partitions patients into (train, test).
///
/// The train side receives `floor(n * train_fraction)` patients. The result
/// depends only on the patient set, the fraction and the seed.
pub fn split_patients(
    patients: &BTreeSet<PatientId>,
    train_fraction: f64,
    seed: u64,
) -> Result<(BTreeSet<PatientId>, BTreeSet<PatientId>), EventError> {
    if patients.is_empty() {
        return Err(EventError::EmptyPatientSet);
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(EventError::InvalidFraction(train_fraction));
    }
    let mut ids: Vec<&PatientId> = patients.iter().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // The epsilon absorbs representation error such as 0.29 * 100 = 28.999...
    let n_train = ((ids.len() as f64) * train_fraction + 1e-9).floor() as usize;
    let train = ids[..n_train].iter().map(|p| (*p).clone()).collect();
    let test = ids[n_train..].iter().map(|p| (*p).clone()).collect();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> BTreeSet<PatientId> {
        (0..n).map(|i| PatientId::new(format!("P{i:05}"))).collect()
    }

    #[test]
    fn half_split_is_disjoint_and_exhaustive() {
        let all = ids(10);
        let (train, test) = split_patients(&all, 0.5, 7).unwrap();
        assert_eq!(train.len(), 5);
        assert_eq!(test.len(), 5);
        assert!(train.is_disjoint(&test));
        let union: BTreeSet<_> = train.union(&test).cloned().collect();
        assert_eq!(union, all);
    }

    #[test]
    fn deterministic_for_seed() {
        let all = ids(100);
        assert_eq!(split_patients(&all, 0.3, 1).unwrap(), split_patients(&all, 0.3, 1).unwrap());
        assert_ne!(split_patients(&all, 0.3, 1).unwrap(), split_patients(&all, 0.3, 2).unwrap());
    }

    #[test]
    fn floor_rule() {
        let (train, test) = split_patients(&ids(1000), 0.42, 3).unwrap();
        assert_eq!(train.len(), 420);
        assert_eq!(test.len(), 580);
        let (train, _) = split_patients(&ids(100), 0.29, 3).unwrap();
        assert_eq!(train.len(), 29);
        let (train, _) = split_patients(&ids(7), 0.5, 3).unwrap();
        assert_eq!(train.len(), 3);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            split_patients(&BTreeSet::new(), 0.5, 0),
            Err(EventError::EmptyPatientSet)
        ));
        assert!(matches!(split_patients(&ids(3), 0.0, 0), Err(EventError::InvalidFraction(_))));
        assert!(matches!(split_patients(&ids(3), 1.0, 0), Err(EventError::InvalidFraction(_))));
    }
}
