use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::split::check_fold;
use super::{confusion_metrics, decision_fuse, metrics, EvalError, Fold, FoldResult, Fusion, SplitPlan};
use crate::dataio::{Dimension, LabelSet};
use crate::graph::Tensor;
use crate::model::{Model, ModelConfig};
use crate::preprocess::WindowedTensor;
use crate::train::{fit, Sample, TrainConfig, TrainLog};

/// Assembles one sample per `(participant, video)`, with inputs in the
/// config's channel order and the label for `dim`.
pub fn build_samples(
    tensors: &[WindowedTensor],
    labels: &LabelSet,
    dim: Dimension,
    config: &ModelConfig,
) -> Result<Vec<Sample>, EvalError> {
    let wanted: BTreeSet<&str> = config.channels().into_iter().collect();
    let mut by_pair: BTreeMap<(String, String), HashMap<String, Arc<Tensor>>> = BTreeMap::new();
    for t in tensors {
        if !wanted.contains(t.source.channel.as_str()) {
            continue;
        }
        by_pair
            .entry((t.source.participant_id.clone(), t.source.video_id.clone()))
            .or_default()
            .insert(t.source.channel.clone(), Arc::new(t.values.clone()));
    }
    if by_pair.is_empty() {
        return Err(EvalError::MissingChannel {
            channel: config.channels().join(","),
            participant: "*".into(),
            video: "*".into(),
        });
    }
    by_pair
        .into_iter()
        .map(|((p, v), mut chans)| {
            let inputs = config
                .channels()
                .into_iter()
                .map(|c| {
                    chans.remove(c).ok_or_else(|| EvalError::MissingChannel {
                        channel: c.to_string(),
                        participant: p.clone(),
                        video: v.clone(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let level = labels.level(&p, &v, dim).ok_or_else(|| EvalError::MissingLabel {
                participant: p.clone(),
                video: v.clone(),
            })?;
            Ok(Sample {
                participant_id: p,
                video_id: v,
                inputs,
                label: level.class_index(),
            })
        })
        .collect()
}

/// Distinct participant ids in first-seen order.
pub fn participants_of(samples: &[Sample]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    samples
        .iter()
        .filter(|s| seen.insert(s.participant_id.clone()))
        .map(|s| s.participant_id.clone())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedLog {
    pub model: String,
    pub log: TrainLog,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub folds: Vec<FoldResult>,
    pub train_logs: Vec<Vec<NamedLog>>,
    pub mean_accuracy: f64,
    pub mean_recall: f64,
}

struct FoldSides<'a> {
    train: Vec<&'a Sample>,
    val: Vec<&'a Sample>,
    test: Vec<&'a Sample>,
}

fn split_samples<'a>(samples: &'a [Sample], fold: &Fold) -> Result<FoldSides<'a>, EvalError> {
    check_fold(fold)?;
    let side = |ids: &[String]| -> BTreeSet<String> { ids.iter().cloned().collect() };
    let (tr, va, te) = (side(&fold.train), side(&fold.val), side(&fold.test));
    let mut out = FoldSides {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for s in samples {
        let p = &s.participant_id;
        match (tr.contains(p), va.contains(p), te.contains(p)) {
            (true, false, false) => out.train.push(s),
            (false, true, false) => out.val.push(s),
            (false, false, true) => out.test.push(s),
            (false, false, false) => {}
            _ => {
                return Err(EvalError::Leakage {
                    fold: fold.index,
                    detail: format!("participant {p} on more than one side"),
                })
            }
        }
    }
    for (name, side) in [("training", &out.train), ("validation", &out.val), ("test", &out.test)] {
        if side.is_empty() {
            return Err(EvalError::EmptySide { fold: fold.index, side: name });
        }
    }
    let ids = |v: &[&Sample]| v.iter().map(|s| s.participant_id.clone()).collect::<BTreeSet<_>>();
    let (a, b, c) = (ids(&out.train), ids(&out.val), ids(&out.test));
    if !a.is_disjoint(&b) || !a.is_disjoint(&c) || !b.is_disjoint(&c) {
        return Err(EvalError::Leakage {
            fold: fold.index,
            detail: "sample sides share a participant".into(),
        });
    }
    Ok(out)
}

fn seeded(config: &ModelConfig, train: &TrainConfig, fold: usize) -> (ModelConfig, TrainConfig) {
    let mut m = config.clone();
    m.seed = config.seed.wrapping_add(fold as u64);
    let mut t = train.clone();
    t.seed = train.seed.wrapping_add(fold as u64);
    (m, t)
}

fn train_and_predict(
    config: ModelConfig,
    train_cfg: &TrainConfig,
    sides: &FoldSides,
) -> Result<(Vec<Vec<f64>>, TrainLog), EvalError> {
    let model = Model::new(config)?;
    let (model, log) = fit(model, &sides.train, &sides.val, train_cfg)?;
    let probs = sides
        .test
        .iter()
        .map(|s| model.predict(&s.input_refs()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((probs, log))
}

/// Copies of `samples` keeping only the inputs in `range`.
fn restrict_samples(samples: &[&Sample], range: std::ops::Range<usize>) -> Vec<Sample> {
    samples
        .iter()
        .map(|s| Sample {
            inputs: s.inputs[range.clone()].to_vec(),
            ..(*s).clone()
        })
        .collect()
}

fn run_fold(
    samples: &[Sample],
    fold: &Fold,
    config: &ModelConfig,
    train_cfg: &TrainConfig,
    fusion: Fusion,
) -> Result<(FoldResult, Vec<NamedLog>), EvalError> {
    let sides = split_samples(samples, fold)?;
    let (config, train_cfg) = seeded(config, train_cfg, fold.index);
    let labels: Vec<usize> = sides.test.iter().map(|s| s.label).collect();
    let (mut result, logs) = match fusion.rule() {
        None => {
            let (probs, log) = train_and_predict(config, &train_cfg, &sides)?;
            let preds: Vec<(Vec<f64>, usize)> = probs.into_iter().zip(labels).collect();
            (metrics(&preds)?, vec![NamedLog { model: "fused".into(), log }])
        }
        Some(rule) => {
            if config.domains.len() < 2 {
                return Err(EvalError::NoClassifiers(config.domains.len()));
            }
            let mut per_domain = Vec::new();
            let mut logs = Vec::new();
            let mut start = 0;
            for d in &config.domains {
                let range = start..start + d.modalities.len();
                start = range.end;
                let sub = config.restrict(d.domain).expect("domain present");
                let (tr, va, te) = (
                    restrict_samples(&sides.train, range.clone()),
                    restrict_samples(&sides.val, range.clone()),
                    restrict_samples(&sides.test, range),
                );
                let sub_sides = FoldSides {
                    train: tr.iter().collect(),
                    val: va.iter().collect(),
                    test: te.iter().collect(),
                };
                let (probs, log) = train_and_predict(sub, &train_cfg, &sub_sides)?;
                per_domain.push(probs);
                logs.push(NamedLog {
                    model: d.domain.to_string(),
                    log,
                });
            }
            let mut ties = 0;
            let mut pairs = Vec::with_capacity(labels.len());
            for (i, y) in labels.iter().enumerate() {
                let votes: Vec<Vec<f64>> = per_domain.iter().map(|p| p[i].clone()).collect();
                let fused = decision_fuse(&votes, rule)?;
                ties += usize::from(fused.tie);
                pairs.push((fused.class, *y));
            }
            if ties > 0 {
                log::info!("fold {}: {ties} fused decision tie(s) resolved to the lower class", fold.index);
            }
            let mut r = confusion_metrics(&pairs)?;
            r.fusion_ties = ties;
            (r, logs)
        }
    };
    result.fold_index = fold.index;
    Ok((result, logs))
}

/// Trains and tests one model (or one per domain for decision fusion) per
/// fold. Folds run in parallel; fold `i` seeds from `seed + i`.
pub fn run_experiment(
    samples: &[Sample],
    config: &ModelConfig,
    train_cfg: &TrainConfig,
    plan: &SplitPlan,
    fusion: Fusion,
) -> Result<ExperimentResult, EvalError> {
    plan.assert_no_leakage()?;
    let outcomes = plan
        .folds
        .par_iter()
        .map(|f| run_fold(samples, f, config, train_cfg, fusion))
        .collect::<Result<Vec<_>, _>>()?;
    let (folds, train_logs): (Vec<FoldResult>, Vec<Vec<NamedLog>>) = outcomes.into_iter().unzip();
    let n = folds.len() as f64;
    Ok(ExperimentResult {
        mean_accuracy: folds.iter().map(|f| f.accuracy).sum::<f64>() / n,
        mean_recall: folds.iter().map(|f| f.recall).sum::<f64>() / n,
        folds,
        train_logs,
    })
}
