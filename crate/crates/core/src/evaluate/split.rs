use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitScheme {
    GroupKFold(usize),
    Loso,
}

impl fmt::Display for SplitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitScheme::GroupKFold(k) => write!(f, "kfold{k}"),
            SplitScheme::Loso => f.write_str("loso"),
        }
    }
}

impl FromStr for SplitScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        if s == "loso" {
            return Ok(SplitScheme::Loso);
        }
        s.strip_prefix("kfold")
            .and_then(|k| k.parse().ok())
            .filter(|k| *k >= 3)
            .map(SplitScheme::GroupKFold)
            .ok_or_else(|| format!("unknown split {s:?} (expected kfold<k> with k ≥ 3, or loso)"))
    }
}

/// Participant sets of one fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub scheme: SplitScheme,
    pub folds: Vec<Fold>,
}

impl SplitPlan {
    pub fn build(scheme: SplitScheme, participants: &[String], seed: u64) -> Result<Self, EvalError> {
        match scheme {
            SplitScheme::GroupKFold(k) => group_kfold(participants, k, seed),
            SplitScheme::Loso => loso(participants),
        }
    }

    /// Fails if any fold shares a participant between sides or drops one.
    pub fn assert_no_leakage(&self) -> Result<(), EvalError> {
        for f in &self.folds {
            check_fold(f)?;
        }
        Ok(())
    }

    /// Total number of participant overlaps across all folds.
    pub fn leakage_count(&self) -> usize {
        self.folds.iter().map(overlaps).sum()
    }
}

fn overlaps(f: &Fold) -> usize {
    let sets: Vec<BTreeSet<&String>> = [&f.train, &f.val, &f.test].iter().map(|s| s.iter().collect()).collect();
    let mut n = 0;
    for i in 0..3 {
        for j in i + 1..3 {
            n += sets[i].intersection(&sets[j]).count();
        }
    }
    n + [&f.train, &f.val, &f.test].iter().map(|s| s.len()).sum::<usize>()
        - sets.iter().map(BTreeSet::len).sum::<usize>()
}

pub(crate) fn check_fold(f: &Fold) -> Result<(), EvalError> {
    let n = overlaps(f);
    if n > 0 {
        return Err(EvalError::Leakage {
            fold: f.index,
            detail: format!("{n} participant overlap(s)"),
        });
    }
    if f.train.is_empty() || f.val.is_empty() || f.test.is_empty() {
        return Err(EvalError::Leakage {
            fold: f.index,
            detail: "empty side".into(),
        });
    }
    Ok(())
}

fn dedup(participants: &[String]) -> Result<Vec<String>, EvalError> {
    let set: BTreeSet<&String> = participants.iter().collect();
    if set.len() != participants.len() {
        return Err(EvalError::DuplicateParticipant);
    }
    Ok(participants.to_vec())
}

/// Seeded shuffle, then round-robin dealing into `k` groups. Fold `i`
/// tests group `i`, validates on group `(i + 1) mod k` and trains on the rest.
pub fn group_kfold(participants: &[String], k: usize, seed: u64) -> Result<SplitPlan, EvalError> {
    let mut order = dedup(participants)?;
    if k < 3 || k > order.len() {
        return Err(EvalError::TooFewParticipants {
            participants: order.len(),
            needed: k.max(3),
        });
    }
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut groups: Vec<Vec<String>> = vec![Vec::new(); k];
    for (i, p) in order.into_iter().enumerate() {
        groups[i % k].push(p);
    }
    let folds = (0..k)
        .map(|i| {
            let v = (i + 1) % k;
            Fold {
                index: i,
                train: (0..k)
                    .filter(|g| *g != i && *g != v)
                    .flat_map(|g| groups[g].iter().cloned())
                    .collect(),
                val: groups[v].clone(),
                test: groups[i].clone(),
            }
        })
        .collect();
    let plan = SplitPlan {
        scheme: SplitScheme::GroupKFold(k),
        folds,
    };
    plan.assert_no_leakage()?;
    Ok(plan)
}

/// Number of validation participants per leave-one-out fold.
pub fn loso_val_size(n: usize) -> usize {
    (((n - 1) as f64 / 5.0).round() as usize).clamp(1, n - 2)
}

/// One fold per participant. Validation takes the next participants in
/// input order (cyclically) after the held-out one.
pub fn loso(participants: &[String]) -> Result<SplitPlan, EvalError> {
    let order = dedup(participants)?;
    let n = order.len();
    if n < 3 {
        return Err(EvalError::TooFewParticipants {
            participants: n,
            needed: 3,
        });
    }
    let nv = loso_val_size(n);
    let folds = (0..n)
        .map(|i| {
            let val_idx: Vec<usize> = (1..=nv).map(|d| (i + d) % n).collect();
            Fold {
                index: i,
                train: (0..n)
                    .filter(|j| *j != i && !val_idx.contains(j))
                    .map(|j| order[j].clone())
                    .collect(),
                val: val_idx.iter().map(|&j| order[j].clone()).collect(),
                test: vec![order[i].clone()],
            }
        })
        .collect();
    let plan = SplitPlan {
        scheme: SplitScheme::Loso,
        folds,
    };
    plan.assert_no_leakage()?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("P{i:02}")).collect()
    }

    fn all_of(f: &Fold) -> BTreeSet<String> {
        f.train.iter().chain(&f.val).chain(&f.test).cloned().collect()
    }

    #[test]
    fn twenty_three_into_five() {
        let plan = group_kfold(&ids(23), 5, 42).unwrap();
        let mut sizes: Vec<usize> = plan.folds.iter().map(|f| f.test.len()).collect();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(sizes, vec![5, 5, 5, 4, 4]);
        for f in &plan.folds {
            assert_eq!(all_of(f).len(), 23);
        }
        assert_eq!(plan.leakage_count(), 0);
    }

    #[test]
    fn k_equal_n_matches_loso_test_sets() {
        let p = ids(7);
        let kf = group_kfold(&p, 7, 3).unwrap();
        let lo = loso(&p).unwrap();
        let tests = |plan: &SplitPlan| -> BTreeSet<Vec<String>> { plan.folds.iter().map(|f| f.test.clone()).collect() };
        assert_eq!(tests(&kf), tests(&lo));
    }

    #[test]
    fn loso_examples() {
        let plan = loso(&ids(23)).unwrap();
        assert_eq!(plan.folds.len(), 23);
        let tests: Vec<&String> = plan.folds.iter().flat_map(|f| &f.test).collect();
        assert_eq!(tests.len(), 23);
        assert_eq!(tests.iter().collect::<BTreeSet<_>>().len(), 23);
        assert_eq!(plan.folds[0].val.len(), 4);
        assert_eq!(plan.folds[22].val, vec!["P01", "P02", "P03", "P04"]);
        assert!(loso(&ids(2)).is_err());
    }

    #[test]
    fn errors() {
        assert!(matches!(group_kfold(&ids(4), 5, 0), Err(EvalError::TooFewParticipants { .. })));
        assert!(matches!(group_kfold(&ids(10), 2, 0), Err(EvalError::TooFewParticipants { .. })));
        let dup = vec!["P1".to_string(), "P1".to_string(), "P2".to_string()];
        assert!(matches!(loso(&dup), Err(EvalError::DuplicateParticipant)));
        let leaky = SplitPlan {
            scheme: SplitScheme::Loso,
            folds: vec![Fold {
                index: 0,
                train: vec!["A".into(), "B".into()],
                val: vec!["C".into()],
                test: vec!["B".into()],
            }],
        };
        assert_eq!(leaky.leakage_count(), 1);
        assert!(matches!(leaky.assert_no_leakage(), Err(EvalError::Leakage { fold: 0, .. })));
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("kfold5".parse::<SplitScheme>().unwrap(), SplitScheme::GroupKFold(5));
        assert_eq!("LOSO".parse::<SplitScheme>().unwrap(), SplitScheme::Loso);
        assert!("kfold2".parse::<SplitScheme>().is_err());
        assert!("holdout".parse::<SplitScheme>().is_err());
    }

    proptest! {
        #[test]
        fn kfold_sizes_balanced_and_disjoint(n in 3usize..40, k in 3usize..10, seed in any::<u64>()) {
            prop_assume!(k <= n);
            let plan = group_kfold(&ids(n), k, seed).unwrap();
            let sizes: Vec<usize> = plan.folds.iter().map(|f| f.test.len()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            prop_assert_eq!(plan.leakage_count(), 0);
            let tested: BTreeSet<&String> = plan.folds.iter().flat_map(|f| &f.test).collect();
            prop_assert_eq!(tested.len(), n);
        }
    }
}
