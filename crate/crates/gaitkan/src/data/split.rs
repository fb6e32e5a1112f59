//! Trial-level 80/20 splits and the ten stratified test divisions.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{class_counts, Activity, DataError, GaitLabel, Stiffness, Trial, Window};

/// Trial-granularity train/test partition for one subject.
///
/// The test side holds exactly one turning trial per (turn type, stiffness)
/// cell — nine turning events — plus three straight trials; everything else
/// (including L-Test trials) trains. Per-class window counts for either side
/// come from [`class_counts`] at a chosen window size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataSplit {
    pub train: Vec<Trial>,
    pub test: Vec<Trial>,
}

const TEST_STRAIGHT: usize = 3;

/// Splits one subject's trials. Deterministic per seed.
pub fn split_trials(trials: &[Trial], seed: u64) -> Result<DataSplit, DataError> {
    let subject = trials
        .first()
        .map(|t| t.subject.clone())
        .unwrap_or_default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5911_7001);
    let mut test_keys: Vec<String> = Vec::new();

    for turn in Activity::TURN_TYPES {
        for stiffness in Stiffness::ALL {
            let cell: Vec<&Trial> = trials
                .iter()
                .filter(|t| t.activity == turn && t.stiffness == stiffness)
                .collect();
            if cell.is_empty() {
                return Err(DataError::MissingCell {
                    subject,
                    turn: turn.token(),
                    stiffness: stiffness.token(),
                });
            }
            let pick = cell
                .choose(&mut rng)
                .expect("cell verified non-empty");
            test_keys.push(pick.key());
        }
    }

    let straights: Vec<&Trial> = trials
        .iter()
        .filter(|t| t.activity == Activity::Straight)
        .collect();
    if straights.len() < TEST_STRAIGHT + 1 {
        return Err(DataError::NotEnoughStraight {
            subject,
            got: straights.len(),
            min: TEST_STRAIGHT + 1,
        });
    }
    let mut straight_pool: Vec<&Trial> = straights;
    straight_pool.shuffle(&mut rng);
    for t in straight_pool.iter().take(TEST_STRAIGHT) {
        test_keys.push(t.key());
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for t in trials {
        if test_keys.contains(&t.key()) {
            test.push(t.clone());
        } else {
            train.push(t.clone());
        }
    }
    Ok(DataSplit { train, test })
}

const NUM_DIVISIONS: usize = 10;
const MIN_PER_CLASS: usize = 10;

/// Partitions test windows into ten disjoint folds with stratified random
/// sampling: per class, a seeded shuffle dealt round-robin, so fold counts
/// per class differ by at most one. The same fold assignment is reused for
/// every model compared (paired design); [`fold_checksum`] fingerprints it.
pub fn ten_divisions(windows: &[Window], seed: u64) -> Result<Vec<Vec<usize>>, DataError> {
    let counts = class_counts(windows);
    for label in GaitLabel::ALL {
        let got = counts[label.index()] as usize;
        if got < MIN_PER_CLASS {
            return Err(DataError::ClassTooSmall {
                class: label.token(),
                got,
                min: MIN_PER_CLASS,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd1f1_5104);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); NUM_DIVISIONS];
    for label in GaitLabel::ALL {
        let mut indices: Vec<usize> = windows
            .iter()
            .enumerate()
            .filter(|(_, w)| w.label == label)
            .map(|(i, _)| i)
            .collect();
        indices.shuffle(&mut rng);
        for (pos, idx) in indices.into_iter().enumerate() {
            folds[pos % NUM_DIVISIONS].push(idx);
        }
    }
    for fold in folds.iter_mut() {
        fold.sort_unstable();
    }
    Ok(folds)
}

/// Stratified holdout for hyperparameter tuning: about `fraction` of each
/// class (at least one window per class) moves to the validation side.
/// Returns (train indices, validation indices), deterministic per seed.
pub fn validation_split(
    windows: &[Window],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    assert!((0.0..1.0).contains(&fraction), "fraction in [0, 1)");
    let counts = class_counts(windows);
    for label in GaitLabel::ALL {
        if counts[label.index()] < 2 {
            return Err(DataError::ClassTooSmall {
                class: label.token(),
                got: counts[label.index()] as usize,
                min: 2,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a11_da70);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for label in GaitLabel::ALL {
        let mut indices: Vec<usize> = windows
            .iter()
            .enumerate()
            .filter(|(_, w)| w.label == label)
            .map(|(i, _)| i)
            .collect();
        indices.shuffle(&mut rng);
        let take = ((indices.len() as f64 * fraction).round() as usize)
            .clamp(1, indices.len() - 1);
        val.extend(indices.drain(..take));
        train.extend(indices);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// FNV-1a fingerprint of a fold assignment; equal checksums across compared
/// models certify the paired design.
pub fn fold_checksum(folds: &[Vec<usize>]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut mix = |v: u64| {
        hash ^= v;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for (i, fold) in folds.iter().enumerate() {
        mix(0xf01d ^ i as u64);
        for &idx in fold {
            mix(idx as u64);
        }
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LabeledSample, NUM_CHANNELS};

    fn trial(subject: &str, activity: Activity, stiffness: Stiffness, index: u32) -> Trial {
        Trial {
            subject: subject.into(),
            activity,
            stiffness,
            trial_index: index,
            samples: vec![
                LabeledSample {
                    tick: 0,
                    channels: [0.0; NUM_CHANNELS],
                    label: GaitLabel::Sw,
                };
                10
            ],
        }
    }

    fn subject_trials(per_cell: u32, straights: u32) -> Vec<Trial> {
        let mut out = Vec::new();
        for turn in Activity::TURN_TYPES {
            for stiffness in Stiffness::ALL {
                for i in 0..per_cell {
                    out.push(trial("A01", turn, stiffness, i));
                }
            }
        }
        for i in 0..straights {
            out.push(trial("A01", Activity::Straight, Stiffness::Intermediate, i));
        }
        out
    }

    #[test]
    fn forced_selection_with_one_trial_per_cell() {
        let trials = subject_trials(1, 4);
        let split = split_trials(&trials, 0).unwrap();
        assert_eq!(split.test.len(), 12);
        assert_eq!(split.train.len(), 1); // the remaining straight trial
    }

    #[test]
    fn one_trial_per_cell_invariant_for_any_seed() {
        let trials = subject_trials(3, 5);
        for seed in [0u64, 1, 99] {
            let split = split_trials(&trials, seed).unwrap();
            for turn in Activity::TURN_TYPES {
                for stiffness in Stiffness::ALL {
                    let n = split
                        .test
                        .iter()
                        .filter(|t| t.activity == turn && t.stiffness == stiffness)
                        .count();
                    assert_eq!(n, 1, "seed {seed} cell ({turn:?},{stiffness:?})");
                }
            }
            let straight = split
                .test
                .iter()
                .filter(|t| t.activity == Activity::Straight)
                .count();
            assert_eq!(straight, 3);
            // disjointness at trial granularity
            for t in &split.test {
                assert!(!split.train.iter().any(|u| u.key() == t.key()));
            }
            assert_eq!(split.train.len() + split.test.len(), trials.len());
        }
    }

    #[test]
    fn different_seeds_differ_and_same_seed_repeats() {
        let trials = subject_trials(3, 5);
        let keys = |s: &DataSplit| {
            let mut k: Vec<String> = s.test.iter().map(Trial::key).collect();
            k.sort();
            k
        };
        let a = split_trials(&trials, 1).unwrap();
        let b = split_trials(&trials, 1).unwrap();
        assert_eq!(keys(&a), keys(&b));
        let differs = (2u64..20).any(|s| keys(&split_trials(&trials, s).unwrap()) != keys(&a));
        assert!(differs, "selection never varied across 18 seeds");
    }

    #[test]
    fn missing_cell_is_named() {
        let mut trials = subject_trials(1, 4);
        trials.retain(|t| !(t.activity == Activity::Step90 && t.stiffness == Stiffness::Stiff));
        match split_trials(&trials, 0) {
            Err(DataError::MissingCell {
                turn, stiffness, ..
            }) => {
                assert_eq!(turn, "step90");
                assert_eq!(stiffness, "stiff");
            }
            other => panic!("expected MissingCell, got {other:?}"),
        }
    }

    fn windows_with_counts(sw: usize, st: usize, sp: usize) -> Vec<Window> {
        let mk = |label, i: usize| Window {
            data: vec![0.0; 10 * NUM_CHANNELS],
            width: 10,
            label,
            trial: "t".into(),
            start: i,
        };
        let mut out = Vec::new();
        for i in 0..sw {
            out.push(mk(GaitLabel::Sw, i));
        }
        for i in 0..st {
            out.push(mk(GaitLabel::St, i));
        }
        for i in 0..sp {
            out.push(mk(GaitLabel::Sp, i));
        }
        out
    }

    #[test]
    fn exact_divisibility_gives_equal_folds() {
        let ws = windows_with_counts(210, 60, 30);
        let folds = ten_divisions(&ws, 3).unwrap();
        for fold in &folds {
            let counts = class_counts(&fold.iter().map(|&i| ws[i].clone()).collect::<Vec<_>>());
            assert_eq!(counts, [21, 6, 3]);
        }
    }

    #[test]
    fn folds_partition_the_test_set() {
        let ws = windows_with_counts(53, 17, 11);
        let folds = ten_divisions(&ws, 9).unwrap();
        let mut seen = vec![false; ws.len()];
        for fold in &folds {
            for &i in fold {
                assert!(!seen[i], "index {i} in two folds");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&b| b), "union must cover the test set");
    }

    #[test]
    fn fold_counts_differ_by_at_most_one_per_class() {
        // enumeration over remainder distributions
        for (sw, st, sp) in [(101, 23, 17), (57, 19, 13), (210, 61, 34)] {
            let ws = windows_with_counts(sw, st, sp);
            let folds = ten_divisions(&ws, 5).unwrap();
            for class in GaitLabel::ALL {
                let per_fold: Vec<usize> = folds
                    .iter()
                    .map(|f| f.iter().filter(|&&i| ws[i].label == class).count())
                    .collect();
                let lo = per_fold.iter().min().unwrap();
                let hi = per_fold.iter().max().unwrap();
                assert!(hi - lo <= 1, "class {class:?}: {per_fold:?}");
                let total: usize = per_fold.iter().sum();
                assert_eq!(
                    total,
                    ws.iter().filter(|w| w.label == class).count()
                );
            }
        }
    }

    #[test]
    fn small_class_rejected() {
        let ws = windows_with_counts(100, 50, 9);
        assert!(matches!(
            ten_divisions(&ws, 0),
            Err(DataError::ClassTooSmall { class: "SP", .. })
        ));
    }

    #[test]
    fn validation_split_is_stratified_and_disjoint() {
        let ws = windows_with_counts(90, 30, 20);
        let (train, val) = validation_split(&ws, 0.1, 4).unwrap();
        assert_eq!(train.len() + val.len(), ws.len());
        let mut seen = vec![false; ws.len()];
        for &i in train.iter().chain(&val) {
            assert!(!seen[i]);
            seen[i] = true;
        }
        // ~10 % per class, at least one
        let count = |idx: &[usize], l: GaitLabel| idx.iter().filter(|&&i| ws[i].label == l).count();
        assert_eq!(count(&val, GaitLabel::Sw), 9);
        assert_eq!(count(&val, GaitLabel::St), 3);
        assert_eq!(count(&val, GaitLabel::Sp), 2);
        // deterministic per seed
        assert_eq!(validation_split(&ws, 0.1, 4).unwrap(), (train, val));
    }

    #[test]
    fn checksum_tracks_assignment() {
        let ws = windows_with_counts(40, 20, 15);
        let f1 = ten_divisions(&ws, 1).unwrap();
        let f2 = ten_divisions(&ws, 1).unwrap();
        let f3 = ten_divisions(&ws, 2).unwrap();
        assert_eq!(fold_checksum(&f1), fold_checksum(&f2));
        assert_ne!(fold_checksum(&f1), fold_checksum(&f3));
    }
}
