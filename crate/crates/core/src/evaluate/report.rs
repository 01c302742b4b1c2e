use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalError, ExperimentResult, FoldResult, Fusion, NamedLog, SplitScheme};
use crate::dataio::{Dimension, Domain, LabelCase};
use crate::model::Variant;

/// Row label such as `emomsase:Peripheral+Trunk+Head`; decision fusion
/// appends `/sum` or `/max`.
pub fn combination_name(variant: Variant, domains: &[Domain], fusion: Fusion) -> String {
    let doms: Vec<String> = domains.iter().map(Domain::to_string).collect();
    let mut name = format!("{variant}:{}", doms.join("+"));
    if fusion != Fusion::ModalityLevel {
        name.push('/');
        name.push_str(fusion.as_str());
    }
    name
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub combination: String,
    pub label_case: String,
    pub metric: String,
    pub value: f64,
}

pub fn result_rows(combination: &str, label_case: LabelCase, dim: Dimension, result: &ExperimentResult) -> Vec<ResultRow> {
    [("accuracy", result.mean_accuracy), ("recall", result.mean_recall)]
        .into_iter()
        .map(|(m, value)| ResultRow {
            combination: combination.to_string(),
            label_case: label_case.as_str().to_string(),
            metric: format!("{dim}_{m}"),
            value,
        })
        .collect()
}

/// `combination,label_case,metric,value` with six-decimal values.
pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["combination", "label_case", "metric", "value"])?;
    for r in rows {
        w.write_record([
            r.combination.as_str(),
            r.label_case.as_str(),
            r.metric.as_str(),
            &format!("{:.6}", r.value),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>, EvalError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<ResultRow>, _>>()?)
}

/// Full per-fold detail of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub combination: String,
    pub label_case: LabelCase,
    pub dimension: Dimension,
    pub variant: Variant,
    pub fusion: Fusion,
    pub split: SplitScheme,
    pub seed: u64,
    pub mean_accuracy: f64,
    pub mean_recall: f64,
    pub folds: Vec<FoldResult>,
    pub train_logs: Vec<Vec<NamedLog>>,
}

pub fn write_report_json(path: &Path, reports: &[ExperimentReport]) -> Result<(), EvalError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, reports)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_report_json(path: &Path) -> Result<Vec<ExperimentReport>, EvalError> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}
