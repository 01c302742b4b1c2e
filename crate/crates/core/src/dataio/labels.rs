use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{BoundaryPolicy, DataError, Dimension, LabelAssignment, LabelCase, Level, SamRating, Sex};

/// Maps a raw 1–7 rating to Low/High.
pub fn binarize_rating(raw: u8, policy: BoundaryPolicy) -> Result<Level, DataError> {
    if !(1..=7).contains(&raw) {
        return Err(DataError::RatingOutOfRange(raw));
    }
    match (policy, raw) {
        (_, r) if r < 4 => Ok(Level::Low),
        (_, r) if r > 4 => Ok(Level::High),
        (BoundaryPolicy::LE4Low, _) => Ok(Level::Low),
        (BoundaryPolicy::StrictGT4, _) => Err(DataError::AmbiguousBoundary),
    }
}

/// Expert-assigned per-video labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct G2Label {
    pub video_id: String,
    pub valence: Level,
    pub arousal: Level,
}

fn majority(video: &str, dim: Dimension, levels: &[Level]) -> Result<(Level, f64), DataError> {
    let high = levels.iter().filter(|l| **l == Level::High).count();
    let low = levels.len() - high;
    if levels.is_empty() {
        return Err(DataError::EmptyVideo(video.to_string()));
    }
    if high == low {
        return Err(DataError::MajorityTie {
            video: video.to_string(),
            dimension: dim,
        });
    }
    let (level, count) = if high > low { (Level::High, high) } else { (Level::Low, low) };
    Ok((level, count as f64 / levels.len() as f64))
}

/// Derives labels for one of the four labeling cases.
///
/// Output order is deterministic: input order for per-rating cases, video id
/// order for `Majority`, table order for `G2`.
pub fn derive_labels(
    ratings: &[SamRating],
    case: LabelCase,
    policy: BoundaryPolicy,
    g2_table: Option<&[G2Label]>,
) -> Result<Vec<LabelAssignment>, DataError> {
    match case {
        LabelCase::General | LabelCase::MalesOnly => ratings
            .iter()
            .filter(|r| case == LabelCase::General || r.sex == Sex::Male)
            .map(|r| {
                Ok(LabelAssignment {
                    case,
                    video_id: r.video_id.clone(),
                    participant_id: Some(r.participant_id.clone()),
                    valence: binarize_rating(r.valence_raw, policy)?,
                    arousal: binarize_rating(r.arousal_raw, policy)?,
                    valence_fraction: None,
                    arousal_fraction: None,
                })
            })
            .collect(),
        LabelCase::Majority => {
            if ratings.is_empty() {
                return Err(DataError::NoRatings);
            }
            let mut by_video: BTreeMap<&str, (Vec<Level>, Vec<Level>)> = BTreeMap::new();
            for r in ratings {
                let e = by_video.entry(r.video_id.as_str()).or_default();
                e.0.push(binarize_rating(r.valence_raw, policy)?);
                e.1.push(binarize_rating(r.arousal_raw, policy)?);
            }
            by_video
                .into_iter()
                .map(|(video, (val, aro))| {
                    let (valence, vf) = majority(video, Dimension::Valence, &val)?;
                    let (arousal, af) = majority(video, Dimension::Arousal, &aro)?;
                    Ok(LabelAssignment {
                        case,
                        video_id: video.to_string(),
                        participant_id: None,
                        valence,
                        arousal,
                        valence_fraction: Some(vf),
                        arousal_fraction: Some(af),
                    })
                })
                .collect()
        }
        LabelCase::G2 => {
            let table = g2_table.ok_or(DataError::MissingG2Table)?;
            for r in ratings {
                if !table.iter().any(|g| g.video_id == r.video_id) {
                    return Err(DataError::EmptyVideo(r.video_id.clone()));
                }
            }
            Ok(table
                .iter()
                .map(|g| LabelAssignment {
                    case,
                    video_id: g.video_id.clone(),
                    participant_id: None,
                    valence: g.valence,
                    arousal: g.arousal,
                    valence_fraction: None,
                    arousal_fraction: None,
                })
                .collect())
        }
    }
}

/// Lookup of derived labels by `(participant, video)`.
#[derive(Clone, Debug)]
pub struct LabelSet {
    case: LabelCase,
    per_video: HashMap<String, LabelAssignment>,
    per_pair: HashMap<(String, String), LabelAssignment>,
}

impl LabelSet {
    pub fn new(case: LabelCase, labels: Vec<LabelAssignment>) -> Self {
        let mut set = Self {
            case,
            per_video: HashMap::new(),
            per_pair: HashMap::new(),
        };
        for l in labels {
            match &l.participant_id {
                Some(p) => {
                    set.per_pair.insert((p.clone(), l.video_id.clone()), l);
                }
                None => {
                    set.per_video.insert(l.video_id.clone(), l);
                }
            }
        }
        set
    }

    pub fn case(&self) -> LabelCase {
        self.case
    }

    pub fn get(&self, participant: &str, video: &str) -> Option<&LabelAssignment> {
        if self.case.is_per_video() {
            self.per_video.get(video)
        } else {
            self.per_pair.get(&(participant.to_string(), video.to_string()))
        }
    }

    pub fn level(&self, participant: &str, video: &str, dim: Dimension) -> Option<Level> {
        self.get(participant, video).map(|l| l.level(dim))
    }

    pub fn len(&self) -> usize {
        self.per_video.len() + self.per_pair.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rating(p: &str, v: &str, val: u8, aro: u8, sex: Sex) -> SamRating {
        SamRating {
            participant_id: p.into(),
            video_id: v.into(),
            valence_raw: val,
            arousal_raw: aro,
            sex,
        }
    }

    #[test]
    fn binarize_examples() {
        assert_eq!(binarize_rating(2, BoundaryPolicy::LE4Low).unwrap(), Level::Low);
        assert_eq!(binarize_rating(7, BoundaryPolicy::StrictGT4).unwrap(), Level::High);
        assert!(matches!(
            binarize_rating(4, BoundaryPolicy::StrictGT4),
            Err(DataError::AmbiguousBoundary)
        ));
        assert_eq!(binarize_rating(4, BoundaryPolicy::LE4Low).unwrap(), Level::Low);
        assert!(matches!(
            binarize_rating(0, BoundaryPolicy::LE4Low),
            Err(DataError::RatingOutOfRange(0))
        ));
        assert!(binarize_rating(8, BoundaryPolicy::LE4Low).is_err());
    }

    #[test]
    fn unanimous_majority() {
        let ratings: Vec<_> = (0..23)
            .map(|i| rating(&format!("P{i}"), "Great ocean road", 6, 2, Sex::Male))
            .collect();
        let labels = derive_labels(&ratings, LabelCase::Majority, BoundaryPolicy::LE4Low, None).unwrap();
        assert_eq!(labels.len(), 1);
        assert_eq!(labels[0].valence, Level::High);
        assert_eq!(labels[0].valence_fraction, Some(1.0));
        assert!(labels[0].participant_id.is_none());
    }

    #[test]
    fn two_way_split_is_a_tie() {
        let ratings = vec![
            rating("A", "V", 2, 6, Sex::Male),
            rating("B", "V", 6, 6, Sex::Female),
        ];
        let err = derive_labels(&ratings, LabelCase::Majority, BoundaryPolicy::LE4Low, None).unwrap_err();
        assert!(matches!(
            err,
            DataError::MajorityTie {
                dimension: Dimension::Valence,
                ..
            }
        ));
    }

    #[test]
    fn g2_requires_table_covering_rated_videos() {
        let ratings = vec![rating("A", "V1", 2, 6, Sex::Male)];
        assert!(matches!(
            derive_labels(&ratings, LabelCase::G2, BoundaryPolicy::LE4Low, None),
            Err(DataError::MissingG2Table)
        ));
        let table = vec![G2Label {
            video_id: "V2".into(),
            valence: Level::High,
            arousal: Level::Low,
        }];
        assert!(matches!(
            derive_labels(&ratings, LabelCase::G2, BoundaryPolicy::LE4Low, Some(&table)),
            Err(DataError::EmptyVideo(_))
        ));
        let table = vec![G2Label {
            video_id: "V1".into(),
            valence: Level::High,
            arousal: Level::Low,
        }];
        let labels =
            derive_labels(&ratings, LabelCase::G2, BoundaryPolicy::LE4Low, Some(&table)).unwrap();
        assert_eq!(labels[0].valence, Level::High);
        assert_eq!(labels[0].arousal, Level::Low);
    }

    #[test]
    fn strict_policy_propagates_ambiguity() {
        let ratings = vec![rating("A", "V", 4, 6, Sex::Male)];
        assert!(matches!(
            derive_labels(&ratings, LabelCase::General, BoundaryPolicy::StrictGT4, None),
            Err(DataError::AmbiguousBoundary)
        ));
    }

    #[test]
    fn label_set_lookup_by_case() {
        let ratings = vec![
            rating("A", "V", 2, 6, Sex::Male),
            rating("B", "V", 6, 6, Sex::Male),
            rating("C", "V", 6, 2, Sex::Male),
        ];
        let general = LabelSet::new(
            LabelCase::General,
            derive_labels(&ratings, LabelCase::General, BoundaryPolicy::LE4Low, None).unwrap(),
        );
        assert_eq!(general.level("A", "V", Dimension::Valence), Some(Level::Low));
        assert_eq!(general.level("Z", "V", Dimension::Valence), None);
        let majority = LabelSet::new(
            LabelCase::Majority,
            derive_labels(&ratings, LabelCase::Majority, BoundaryPolicy::LE4Low, None).unwrap(),
        );
        for p in ["A", "B", "C", "unseen"] {
            assert_eq!(majority.level(p, "V", Dimension::Valence), Some(Level::High));
        }
    }

    /// Brute-force mode of a multiset of binarized levels, if strictly above half.
    fn brute_mode(levels: &[Level]) -> Option<(Level, f64)> {
        for candidate in [Level::Low, Level::High] {
            let n = levels.iter().filter(|l| **l == candidate).count();
            if 2 * n > levels.len() {
                return Some((candidate, n as f64 / levels.len() as f64));
            }
        }
        None
    }

    /// Visits every multiset of ratings in 1..=7 of the given size.
    fn multisets(size: usize, min: u8, prefix: &mut Vec<u8>, out: &mut dyn FnMut(&[u8])) {
        if prefix.len() == size {
            out(prefix);
            return;
        }
        for r in min..=7 {
            prefix.push(r);
            multisets(size, r, prefix, out);
            prefix.pop();
        }
    }

    #[test]
    fn majority_matches_exhaustive_mode_for_small_multisets() {
        let mut checked = 0;
        for size in 1..=5 {
            multisets(size, 1, &mut Vec::new(), &mut |ms| {
                for policy in [BoundaryPolicy::LE4Low, BoundaryPolicy::StrictGT4] {
                    let ratings: Vec<_> = ms
                        .iter()
                        .enumerate()
                        .map(|(i, r)| rating(&format!("P{i}"), "V", *r, *r, Sex::Female))
                        .collect();
                    let levels: Result<Vec<_>, _> =
                        ms.iter().map(|r| binarize_rating(*r, policy)).collect();
                    let derived = derive_labels(&ratings, LabelCase::Majority, policy, None);
                    match (levels, brute_mode_or_tie(ms, policy), derived) {
                        (Err(_), _, Err(DataError::AmbiguousBoundary)) => {}
                        (Ok(_), Some((lvl, frac)), Ok(labels)) => {
                            assert_eq!(labels[0].valence, lvl, "{ms:?}");
                            assert!((labels[0].valence_fraction.unwrap() - frac).abs() < 1e-12);
                        }
                        (Ok(_), None, Err(DataError::MajorityTie { .. })) => {}
                        (l, b, d) => panic!("{ms:?} {policy:?}: {l:?} {b:?} {d:?}"),
                    }
                    checked += 1;
                }
            });
        }
        assert_eq!(checked, 2 * (7 + 28 + 84 + 210 + 462));
    }

    fn brute_mode_or_tie(ms: &[u8], policy: BoundaryPolicy) -> Option<(Level, f64)> {
        let levels: Vec<Level> = ms
            .iter()
            .filter_map(|r| binarize_rating(*r, policy).ok())
            .collect();
        brute_mode(&levels)
    }

    proptest! {
        #[test]
        fn males_only_equals_general_restricted_to_males(
            raw in proptest::collection::vec((1u8..=7, 1u8..=7, any::<bool>(), 0usize..4), 0..40)
        ) {
            let ratings: Vec<_> = raw
                .iter()
                .enumerate()
                .map(|(i, (v, a, male, vid))| {
                    rating(&format!("P{i}"), &format!("V{vid}"), *v, *a,
                           if *male { Sex::Male } else { Sex::Female })
                })
                .collect();
            let general = derive_labels(&ratings, LabelCase::General, BoundaryPolicy::LE4Low, None).unwrap();
            let males = derive_labels(&ratings, LabelCase::MalesOnly, BoundaryPolicy::LE4Low, None).unwrap();
            let restricted: Vec<_> = general
                .into_iter()
                .zip(&ratings)
                .filter(|(_, r)| r.sex == Sex::Male)
                .map(|(mut l, _)| { l.case = LabelCase::MalesOnly; l })
                .collect();
            prop_assert_eq!(restricted, males);
        }
    }
}
