use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::train::argmax;

/// Probabilities closer than this are treated as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Per-fold scores; `confusion[true][predicted]`, class 1 (High) is positive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_index: usize,
    pub accuracy: f64,
    pub recall: f64,
    pub n_test_samples: usize,
    pub confusion: [[usize; 2]; 2],
    /// Samples whose fused decision was a tie (decision-level fusion only).
    #[serde(default)]
    pub fusion_ties: usize,
}

/// Scores `(probabilities, true class)` pairs. The predicted class is the
/// argmax, ties going to the lower index. Recall is 0 when no positives exist.
pub fn metrics(predictions: &[(Vec<f64>, usize)]) -> Result<FoldResult, EvalError> {
    let classes: Vec<(usize, usize)> = predictions.iter().map(|(p, y)| (argmax(p), *y)).collect();
    confusion_metrics(&classes)
}

/// Same as [`metrics`] for already-decided `(predicted, true)` classes.
pub fn confusion_metrics(pairs: &[(usize, usize)]) -> Result<FoldResult, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyPredictions);
    }
    let mut confusion = [[0usize; 2]; 2];
    for &(pred, truth) in pairs {
        if pred > 1 || truth > 1 {
            return Err(EvalError::InvalidProbabilities(format!(
                "binary metrics got predicted {pred}, true {truth}"
            )));
        }
        confusion[truth][pred] += 1;
    }
    let n = pairs.len();
    let (tp, fnn, tn) = (confusion[1][1], confusion[1][0], confusion[0][0]);
    let recall = if tp + fnn == 0 { 0.0 } else { tp as f64 / (tp + fnn) as f64 };
    Ok(FoldResult {
        fold_index: 0,
        accuracy: (tp + tn) as f64 / n as f64,
        recall,
        n_test_samples: n,
        confusion,
        fusion_ties: 0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FuseRule {
    Sum,
    Max,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Fusion {
    #[default]
    ModalityLevel,
    DecisionSum,
    DecisionMax,
}

impl Fusion {
    pub fn rule(self) -> Option<FuseRule> {
        match self {
            Fusion::ModalityLevel => None,
            Fusion::DecisionSum => Some(FuseRule::Sum),
            Fusion::DecisionMax => Some(FuseRule::Max),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Fusion::ModalityLevel => "modality",
            Fusion::DecisionSum => "sum",
            Fusion::DecisionMax => "max",
        }
    }
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Fusion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "modality" => Ok(Fusion::ModalityLevel),
            "sum" => Ok(Fusion::DecisionSum),
            "max" => Ok(Fusion::DecisionMax),
            other => Err(format!("unknown fusion {other:?} (expected modality, sum or max)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FusedDecision {
    pub class: usize,
    pub tie: bool,
}

/// Combines per-classifier probability vectors.
///
/// `Sum` picks the class with the largest summed probability; `Max` the
/// class holding the single largest probability. Scores within
/// [`TIE_TOLERANCE`] of the best count as tied; the lowest tied class wins.
pub fn decision_fuse(per_classifier: &[Vec<f64>], rule: FuseRule) -> Result<FusedDecision, EvalError> {
    if per_classifier.len() < 2 {
        return Err(EvalError::NoClassifiers(per_classifier.len()));
    }
    let c = per_classifier[0].len();
    for p in per_classifier {
        let sum: f64 = p.iter().sum();
        if p.len() != c || c == 0 || p.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(EvalError::InvalidProbabilities(format!("{p:?}")));
        }
    }
    let scores: Vec<f64> = (0..c)
        .map(|k| {
            let col = per_classifier.iter().map(|p| p[k]);
            match rule {
                FuseRule::Sum => col.sum(),
                FuseRule::Max => col.fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = (0..c).filter(|&k| best - scores[k] <= TIE_TOLERANCE).collect();
    let decision = FusedDecision {
        class: tied[0],
        tie: tied.len() > 1,
    };
    if decision.tie {
        log::debug!("decision fusion tie among classes {tied:?}; choosing {}", decision.class);
    }
    Ok(decision)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn metrics_examples() {
        let all_right = vec![(vec![0.2, 0.8], 1), (vec![0.7, 0.3], 0)];
        assert_eq!(metrics(&all_right).unwrap().accuracy, 1.0);
        let mixed = vec![
            (vec![0.1, 0.9], 1),
            (vec![0.8, 0.2], 1),
            (vec![0.7, 0.3], 0),
            (vec![0.4, 0.6], 0),
        ];
        let r = metrics(&mixed).unwrap();
        assert_eq!((r.accuracy, r.recall), (0.5, 0.5));
        assert_eq!(r.confusion, [[1, 1], [1, 1]]);
        let all_low = vec![(vec![0.9, 0.1], 1), (vec![0.6, 0.4], 0)];
        assert_eq!(metrics(&all_low).unwrap().recall, 0.0);
        let no_pos = vec![(vec![0.9, 0.1], 0)];
        assert_eq!(metrics(&no_pos).unwrap().recall, 0.0);
        assert!(matches!(metrics(&[]), Err(EvalError::EmptyPredictions)));
    }

    #[test]
    fn fuse_examples() {
        let probs = vec![vec![0.6, 0.4], vec![0.3, 0.7], vec![0.55, 0.45]];
        assert_eq!(decision_fuse(&probs, FuseRule::Sum).unwrap(), FusedDecision { class: 1, tie: false });
        assert_eq!(decision_fuse(&probs, FuseRule::Max).unwrap(), FusedDecision { class: 1, tie: false });
        let uniform = vec![vec![0.5, 0.5]; 3];
        for rule in [FuseRule::Sum, FuseRule::Max] {
            assert_eq!(decision_fuse(&uniform, rule).unwrap(), FusedDecision { class: 0, tie: true });
        }
        assert!(matches!(decision_fuse(&probs[..1], FuseRule::Sum), Err(EvalError::NoClassifiers(1))));
        assert!(decision_fuse(&[vec![0.5, 0.6], vec![0.5, 0.5]], FuseRule::Sum).is_err());
    }

    #[test]
    fn fusion_parsing() {
        assert_eq!("sum".parse::<Fusion>().unwrap(), Fusion::DecisionSum);
        assert_eq!("modality".parse::<Fusion>().unwrap().rule(), None);
        assert!("mean".parse::<Fusion>().is_err());
    }

    fn prob2() -> impl Strategy<Value = Vec<f64>> {
        (0.0f64..=1.0).prop_map(|p| vec![p, 1.0 - p])
    }

    proptest! {
        #[test]
        fn sum_equals_mean_then_argmax(ps in prop::collection::vec(prob2(), 2..6)) {
            let fused = decision_fuse(&ps, FuseRule::Sum).unwrap();
            let n = ps.len() as f64;
            let mean: Vec<f64> = (0..2).map(|k| ps.iter().map(|p| p[k]).sum::<f64>() / n).collect();
            if (mean[0] - mean[1]).abs() * n > TIE_TOLERANCE {
                prop_assert_eq!(fused.class, argmax(&mean));
            } else {
                prop_assert_eq!(fused.class, 0);
            }
        }

        #[test]
        fn fusion_ignores_classifier_order(mut ps in prop::collection::vec(prob2(), 2..6), rot in 0usize..6) {
            let a = (decision_fuse(&ps, FuseRule::Sum).unwrap(), decision_fuse(&ps, FuseRule::Max).unwrap());
            let len = ps.len();
            ps.rotate_left(rot % len);
            ps.reverse();
            let b = (decision_fuse(&ps, FuseRule::Sum).unwrap(), decision_fuse(&ps, FuseRule::Max).unwrap());
            prop_assert_eq!(a, b);
        }
    }
}
