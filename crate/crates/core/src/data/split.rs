use rand::seq::SliceRandom;

use super::Dataset;
use crate::rng::seeded;
use crate::{Error, Result};

/// Disjoint train/validation index lists (ascending).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Stratified 80/20 split with `|train| = round(0.8 N)`.
///
/// Each class contributes `floor(0.8 n_c)` training samples; the remaining
/// training slots go to the classes with the largest fractional remainders
/// (ties: lowest class), so every class is within one sample of 80%.
pub fn split_80_20(ds: &Dataset, seed: u64) -> Result<Split> {
    let n = ds.len();
    if n < 5 {
        return Err(Error::Data(format!("cannot split {n} samples; need at least 5")));
    }
    let mut by_class = vec![Vec::new(); ds.class_count()];
    for (i, &l) in ds.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    let total = (0.8 * n as f64).round() as usize;
    let mut quota: Vec<usize> = by_class.iter().map(|c| c.len() * 4 / 5).collect();
    let mut order: Vec<usize> = (0..by_class.len()).collect();
    // remainders in fifths keep the comparison exact
    order.sort_by_key(|&c| std::cmp::Reverse(by_class[c].len() * 4 % 5));
    let mut left = total - quota.iter().sum::<usize>();
    for &c in &order {
        if left == 0 {
            break;
        }
        if quota[c] < by_class[c].len() && by_class[c].len() * 4 % 5 != 0 {
            quota[c] += 1;
            left -= 1;
        }
    }
    let mut rng = seeded(seed, 0x5917);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (members, &q) in by_class.iter_mut().zip(&quota) {
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..q]);
        val.extend_from_slice(&members[q..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok(Split { train, val })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(labels: Vec<usize>, classes: usize) -> Dataset {
        let n = labels.len();
        Dataset::new((0..n).map(|i| i as f64).collect(), (1, 1, 1), labels, classes).unwrap()
    }

    #[test]
    fn balanced_ten() {
        let ds = dataset((0..10).map(|i| i % 2).collect(), 2);
        let s = split_80_20(&ds, 3).unwrap();
        assert_eq!((s.train.len(), s.val.len()), (8, 2));
        let val_labels: Vec<usize> = s.val.iter().map(|&i| ds.labels()[i]).collect();
        assert!(val_labels.contains(&0) && val_labels.contains(&1));
        assert_eq!(s, split_80_20(&ds, 3).unwrap());
    }

    #[test]
    fn too_small() {
        assert!(split_80_20(&dataset(vec![0, 1, 0, 1], 2), 0).is_err());
    }

    #[test]
    fn uneven_classes_within_one() {
        for n in 5..60 {
            let labels: Vec<usize> = (0..n).map(|i| (i * i + 3 * i) % 3).collect();
            let ds = dataset(labels, 3);
            let s = split_80_20(&ds, n as u64).unwrap();
            assert_eq!(s.train.len(), (0.8 * n as f64).round() as usize);
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
            let hist = ds.class_histogram();
            for c in 0..3 {
                let t = s.train.iter().filter(|&&i| ds.labels()[i] == c).count() as f64;
                assert!((t - 0.8 * hist[c] as f64).abs() <= 1.0);
            }
        }
    }
}
