use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context};
use rayon::prelude::*;

use super::{GradcheckArgs, ReportArgs, RunConfig, SynthArgs, UsageError};
use crate::dataio::{
    channel_domain, derive_labels, load_recordings, make_synthetic, read_g2_table, read_ratings, write_dataset,
    LabelCase, LabelSet, RawRecording, SyntheticChannel, SyntheticSpec, CHANNEL_CATALOG,
};
use crate::evaluate::{
    build_samples, combination_name, participants_of, read_results_csv, result_rows, run_experiment,
    write_report_json, write_results_csv, ExperimentReport, ResultRow, SplitPlan,
};
use crate::model::{micro_grad_check, ModelConfig, Variant};
use crate::preprocess::{cache_key, preprocess_channel, read_cached, write_cached, ChannelProfile, PreprocessError, WindowedTensor};

/// Rate used for a synthetic channel given without one.
fn synthetic_rate(channel: &str) -> Option<f64> {
    let (_, domain, rate) = CHANNEL_CATALOG.iter().find(|(n, _, _)| *n == channel)?;
    Some(match (rate, domain) {
        (Some(r), _) => *r,
        (None, crate::dataio::Domain::Head) => 50.0,
        (None, _) => 4.0,
    })
}

fn parse_synth_channel(s: &str) -> Result<SyntheticChannel, UsageError> {
    let (name, rate) = match s.split_once(':') {
        Some((n, r)) => (n, Some(r.parse::<f64>().map_err(|e| UsageError(format!("channel {s:?}: {e}")))?)),
        None => (s, None),
    };
    let rate = rate
        .or_else(|| synthetic_rate(name))
        .ok_or_else(|| UsageError(format!("unknown channel {name:?}")))?;
    Ok(SyntheticChannel::new(name, rate))
}

pub fn cmd_synth(args: &SynthArgs) -> anyhow::Result<ExitCode> {
    let channels = if args.channels.is_empty() {
        SyntheticSpec::default_channels()
    } else {
        args.channels.iter().map(|c| parse_synth_channel(c)).collect::<Result<_, _>>()?
    };
    let mut spec = SyntheticSpec::new(args.participants, args.seed, args.separation, channels);
    spec.n_videos = args.videos;
    spec.duration_s = args.duration;
    spec.agreement = args.agreement;
    let data = make_synthetic(&spec).map_err(|e| UsageError(e.to_string()))?;
    write_dataset(&args.out, &data).with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "wrote {} recordings, {} ratings to {}",
        data.recordings.len(),
        data.ratings.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChannelSummary {
    pub channel: String,
    pub recordings: usize,
    /// Distinct `(T, F)` shapes seen.
    pub shapes: BTreeSet<(usize, usize)>,
    pub computed: usize,
    pub cached: usize,
}

/// Per-channel outcome of a preprocessing pass, in catalog order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PreprocessSummary {
    pub channels: Vec<ChannelSummary>,
}

impl PreprocessSummary {
    pub fn computed(&self) -> usize {
        self.channels.iter().map(|c| c.computed).sum()
    }

    pub fn cached(&self) -> usize {
        self.channels.iter().map(|c| c.cached).sum()
    }
}

impl fmt::Display for PreprocessSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.channels {
            let shapes: Vec<String> = c.shapes.iter().map(|(t, w)| format!("{t}x{w}")).collect();
            writeln!(
                f,
                "{}: {} recordings, T x F = {} ({} computed, {} cached)",
                c.channel,
                c.recordings,
                shapes.join(", "),
                c.computed,
                c.cached
            )?;
        }
        Ok(())
    }
}

fn catalog_rank(channel: &str) -> usize {
    CHANNEL_CATALOG
        .iter()
        .position(|(n, _, _)| *n == channel)
        .unwrap_or(usize::MAX)
}

/// Channels to process: the explicit list, or every supported channel in the
/// data, restricted to the selected domains.
fn select_channels(cfg: &RunConfig, recordings: &[RawRecording]) -> anyhow::Result<Vec<String>> {
    let present: BTreeSet<&str> = recordings.iter().map(|r| r.channel.as_str()).collect();
    let in_domains = |c: &str| cfg.domains.is_empty() || channel_domain(c).is_some_and(|d| cfg.domains.contains(&d));
    let mut chosen: Vec<String> = if cfg.channels.is_empty() {
        present
            .iter()
            .filter(|c| in_domains(c))
            .filter(|c| match ChannelProfile::for_channel(c) {
                Ok(_) => true,
                Err(e) => {
                    log::warn!("skipping {c}: {e}");
                    false
                }
            })
            .map(|c| c.to_string())
            .collect()
    } else {
        let mut out = Vec::new();
        for c in &cfg.channels {
            ChannelProfile::for_channel(c).map_err(|e| UsageError(e.to_string()))?;
            if !in_domains(c) {
                return Err(UsageError(format!("channel {c} is outside the selected domains")).into());
            }
            if !present.contains(c.as_str()) {
                bail!("channel {c} is listed in the config but has no recordings in {}", cfg.data_dir.display());
            }
            out.push(c.clone());
        }
        out
    };
    for d in &cfg.domains {
        if !chosen.iter().any(|c| channel_domain(c) == Some(*d)) {
            bail!("domain {d} was selected but no usable channel of it is present");
        }
    }
    if chosen.is_empty() {
        bail!("no usable channels in {}", cfg.data_dir.display());
    }
    chosen.sort_by_key(|c| catalog_rank(c));
    chosen.dedup();
    Ok(chosen)
}

/// Preprocesses the selected recordings through the cache. Returns tensors
/// in manifest order.
pub fn preprocess_all(cfg: &RunConfig) -> anyhow::Result<(Vec<WindowedTensor>, PreprocessSummary, Vec<String>)> {
    let manifest = cfg.data_dir.join("manifest.csv");
    let recordings = load_recordings(&cfg.data_dir, &manifest).with_context(|| format!("loading {}", manifest.display()))?;
    let channels = select_channels(cfg, &recordings)?;
    let wanted: BTreeSet<&str> = channels.iter().map(String::as_str).collect();
    let selected: Vec<&RawRecording> = recordings.iter().filter(|r| wanted.contains(r.channel.as_str())).collect();
    fs::create_dir_all(&cfg.cache_dir).with_context(|| format!("creating {}", cfg.cache_dir.display()))?;
    let outcomes = selected
        .par_iter()
        .map(|rec| -> Result<(WindowedTensor, bool, String), PreprocessError> {
            let wrap = |e: PreprocessError| PreprocessError::Recording {
                context: rec.label(),
                source: Box::new(e),
            };
            let profile = ChannelProfile::for_channel(&rec.channel).map_err(wrap)?;
            let key = cache_key(rec, &profile);
            if let Some(hit) = read_cached(&cfg.cache_dir, &key).map_err(wrap)? {
                return Ok((hit, true, key));
            }
            let t = preprocess_channel(rec, &profile)?;
            write_cached(&cfg.cache_dir, &key, &t).map_err(wrap)?;
            Ok((t, false, key))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut per: BTreeMap<usize, ChannelSummary> = BTreeMap::new();
    let mut index = String::from("key,participant_id,video_id,channel,windows,window_len\n");
    for (t, hit, key) in &outcomes {
        let s = &t.source;
        let e = per
            .entry(catalog_rank(&s.channel))
            .or_insert_with(|| ChannelSummary {
                channel: s.channel.clone(),
                ..ChannelSummary::default()
            });
        e.recordings += 1;
        e.shapes.insert(t.values.shape());
        if *hit {
            e.cached += 1;
        } else {
            e.computed += 1;
        }
        index.push_str(&format!(
            "{key},{},{},{},{},{}\n",
            s.participant_id,
            s.video_id,
            s.channel,
            t.windows(),
            t.window_len()
        ));
    }
    fs::write(cfg.cache_dir.join("index.csv"), index)?;
    let summary = PreprocessSummary {
        channels: per.into_values().collect(),
    };
    Ok((outcomes.into_iter().map(|o| o.0).collect(), summary, channels))
}

pub fn cmd_preprocess(cfg: &RunConfig) -> anyhow::Result<PreprocessSummary> {
    let (_, summary, _) = preprocess_all(cfg)?;
    Ok(summary)
}

fn load_labels(cfg: &RunConfig) -> anyhow::Result<LabelSet> {
    let ratings_path = cfg.data_dir.join("ratings.csv");
    let ratings = read_ratings(&ratings_path).with_context(|| format!("reading {}", ratings_path.display()))?;
    let g2 = if cfg.labels == LabelCase::G2 {
        let p = cfg.data_dir.join("g2.csv");
        Some(read_g2_table(&p).with_context(|| format!("reading {}", p.display()))?)
    } else {
        None
    };
    let labels = derive_labels(&ratings, cfg.labels, cfg.boundary, g2.as_deref()).context("deriving labels")?;
    Ok(LabelSet::new(cfg.labels, labels))
}

pub fn cmd_run(cfg: &RunConfig) -> anyhow::Result<ExitCode> {
    let (mut tensors, summary, channels) = preprocess_all(cfg)?;
    log::info!("preprocessed {} new, {} cached", summary.computed(), summary.cached());
    let labels = load_labels(cfg)?;
    if cfg.labels == LabelCase::MalesOnly {
        tensors.retain(|t| labels.get(&t.source.participant_id, &t.source.video_id).is_some());
    }
    let refs: Vec<&str> = channels.iter().map(String::as_str).collect();
    let mut model_cfg = ModelConfig::from_channels(&refs, cfg.model.hidden, cfg.model.variant, cfg.seed)?;
    model_cfg.reduction = cfg.model.reduction;
    model_cfg.layers = cfg.model.layers;
    model_cfg.validate()?;
    let train_cfg = cfg.resolved_train();
    let domains: Vec<_> = model_cfg.domains.iter().map(|d| d.domain).collect();
    let combination = combination_name(cfg.model.variant, &domains, cfg.fusion);

    let logs_dir = cfg.out_dir.join("logs");
    fs::create_dir_all(&logs_dir).with_context(|| format!("creating {}", logs_dir.display()))?;
    let mut rows: Vec<ResultRow> = Vec::new();
    let mut reports = Vec::new();
    for &dim in &cfg.dimensions {
        let samples = build_samples(&tensors, &labels, dim, &model_cfg)?;
        let plan = SplitPlan::build(cfg.split, &participants_of(&samples), cfg.seed)?;
        let result = run_experiment(&samples, &model_cfg, &train_cfg, &plan, cfg.fusion)
            .with_context(|| format!("{combination} {dim}"))?;
        for (fold, logs) in result.train_logs.iter().enumerate() {
            for named in logs {
                let path = logs_dir.join(format!("{dim}_fold{fold}_{}.csv", named.model.to_lowercase()));
                named.log.write_csv(&path)?;
            }
        }
        println!(
            "{combination} {} {dim}: accuracy {:.4}, recall {:.4} over {} folds",
            cfg.labels,
            result.mean_accuracy,
            result.mean_recall,
            result.folds.len()
        );
        rows.extend(result_rows(&combination, cfg.labels, dim, &result));
        reports.push(ExperimentReport {
            combination: combination.clone(),
            label_case: cfg.labels,
            dimension: dim,
            variant: cfg.model.variant,
            fusion: cfg.fusion,
            split: cfg.split,
            seed: cfg.seed,
            mean_accuracy: result.mean_accuracy,
            mean_recall: result.mean_recall,
            folds: result.folds,
            train_logs: result.train_logs,
        });
    }
    write_results_csv(&cfg.out_dir.join("results.csv"), &rows)?;
    write_report_json(&cfg.out_dir.join("report.json"), &reports)?;
    fs::write(cfg.out_dir.join("config.json"), serde_json::to_string_pretty(cfg)? + "\n")?;
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> anyhow::Result<ExitCode> {
    let file = RunConfig::load(args.config.as_deref())?;
    let variant: Variant = args.variant.unwrap_or(file.model.variant);
    let first = args.seed.unwrap_or(file.seed);
    if !(args.epsilon > 0.0) || !(args.tolerance >= 0.0) {
        return Err(UsageError("epsilon must be positive and tolerance non-negative".into()).into());
    }
    let frozen: Vec<&str> = args.freeze.iter().map(String::as_str).collect();
    let mut worst = 0.0f64;
    let mut failures = 0;
    for seed in first..first + args.seeds {
        let report = micro_grad_check(variant, seed, args.epsilon, args.tolerance, &frozen).map_err(|e| match e {
            crate::model::ModelError::Graph(crate::graph::GraphError::UnknownParam(p)) => {
                anyhow::Error::new(UsageError(format!("unknown parameter {p}")))
            }
            other => other.into(),
        })?;
        let max = report.max_rel_error();
        worst = worst.max(max);
        let ok = report.passed();
        failures += usize::from(!ok);
        let at = report.worst().map_or("-", |p| p.name.as_str());
        println!(
            "seed {seed}: max relative error {max:.3e} at {at} {}",
            if ok { "PASS" } else { "FAIL" }
        );
        for p in report.params.iter().filter(|p| p.frozen) {
            println!(
                "  frozen {}: analytic {} numeric {}",
                p.name, p.max_abs_analytic, p.max_abs_numeric
            );
        }
    }
    println!(
        "{variant}: {} of {} seeds passed, max relative error {worst:.3e} (tolerance {:e})",
        args.seeds as usize - failures,
        args.seeds,
        args.tolerance
    );
    Ok(if failures == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

/// `(combination, label_case)` with its metric values.
type GridRow = ((String, String), BTreeMap<String, f64>);

/// `(combination, label_case)` rows by metric columns, in first-seen order.
fn pivot(rows: &[ResultRow]) -> (Vec<String>, Vec<GridRow>) {
    let mut metrics: Vec<String> = Vec::new();
    let mut table: Vec<GridRow> = Vec::new();
    for r in rows {
        if !metrics.contains(&r.metric) {
            metrics.push(r.metric.clone());
        }
        let key = (r.combination.clone(), r.label_case.clone());
        match table.iter_mut().find(|(k, _)| *k == key) {
            Some((_, m)) => {
                m.insert(r.metric.clone(), r.value);
            }
            None => table.push((key, BTreeMap::from([(r.metric.clone(), r.value)]))),
        }
    }
    (metrics, table)
}

fn write_grid(path: &Path, metrics: &[String], table: &[GridRow]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["combination".to_string(), "label_case".to_string()];
    header.extend(metrics.iter().cloned());
    w.write_record(&header)?;
    for ((comb, case), vals) in table {
        let mut rec = vec![comb.clone(), case.clone()];
        rec.extend(metrics.iter().map(|m| vals.get(m).map_or(String::new(), |v| format!("{v:.6}"))));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_report(args: &ReportArgs) -> anyhow::Result<ExitCode> {
    let files = if args.results.is_empty() {
        vec![args.out.join("results.csv")]
    } else {
        args.results.clone()
    };
    let mut rows = Vec::new();
    for f in &files {
        rows.extend(read_results_csv(f).with_context(|| format!("reading {}", f.display()))?);
    }
    let (metrics, table) = pivot(&rows);
    let width = table.iter().map(|((c, _), _)| c.len()).max().unwrap_or(0).max("combination".len());
    let mut out = std::io::stdout().lock();
    write!(out, "{:<width$}  {:<8}", "combination", "labels")?;
    for m in &metrics {
        write!(out, "  {m:>17}")?;
    }
    writeln!(out)?;
    for ((comb, case), vals) in &table {
        write!(out, "{comb:<width$}  {case:<8}")?;
        for m in &metrics {
            match vals.get(m) {
                Some(v) => write!(out, "  {v:>17.4}")?,
                None => write!(out, "  {:>17}", "-")?,
            }
        }
        writeln!(out)?;
    }
    if let Some(path) = &args.csv {
        write_grid(path, &metrics, &table)?;
    }
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Domain;

    fn tiny_dataset(dir: &Path) {
        let mut spec = SyntheticSpec::new(
            3,
            1,
            2.0,
            vec![SyntheticChannel::new("ACC_Z", 64.0), SyntheticChannel::new("L_EP_Y", 50.0)],
        );
        spec.n_videos = 2;
        spec.duration_s = 42.0;
        write_dataset(dir, &make_synthetic(&spec).unwrap()).unwrap();
    }

    fn config(root: &Path) -> RunConfig {
        RunConfig {
            data_dir: root.join("data"),
            cache_dir: root.join("cache"),
            out_dir: root.join("out"),
            ..RunConfig::default()
        }
    }

    #[test]
    fn preprocess_reports_shapes_and_hits_cache_on_rerun() {
        let root = tempfile::tempdir().unwrap();
        tiny_dataset(&root.path().join("data"));
        let cfg = config(root.path());
        let first = cmd_preprocess(&cfg).unwrap();
        assert_eq!(first.computed(), 12);
        let text = first.to_string();
        assert!(text.contains("ACC_Z: 6 recordings, T x F = 39x128 (6 computed, 0 cached)"), "{text}");
        assert!(text.contains("L_EP_Y: 6 recordings, T x F = 19x200"), "{text}");
        let index = fs::read_to_string(cfg.cache_dir.join("index.csv")).unwrap();
        let second = cmd_preprocess(&cfg).unwrap();
        assert_eq!((second.computed(), second.cached()), (0, 12));
        assert_eq!(fs::read_to_string(cfg.cache_dir.join("index.csv")).unwrap(), index);
    }

    #[test]
    fn channel_selection_errors_name_the_channel() {
        let root = tempfile::tempdir().unwrap();
        tiny_dataset(&root.path().join("data"));
        let mut cfg = config(root.path());
        cfg.channels = vec!["ACC_Z".into(), "EDA".into()];
        let err = cmd_preprocess(&cfg).unwrap_err().to_string();
        assert!(err.contains("EDA"), "{err}");
        cfg.channels = vec!["GSR".into()];
        assert!(cmd_preprocess(&cfg).unwrap_err().downcast_ref::<UsageError>().is_some());
        cfg.channels.clear();
        cfg.domains = vec![Domain::Trunk];
        assert!(cmd_preprocess(&cfg).unwrap_err().to_string().contains("Trunk"));
        cfg.domains = vec![Domain::Head];
        let only_head = cmd_preprocess(&cfg).unwrap();
        assert_eq!(only_head.channels.len(), 1);
        assert_eq!(only_head.channels[0].channel, "L_EP_Y");
    }

    #[test]
    fn synth_channel_specs() {
        assert_eq!(parse_synth_channel("ACC_Z").unwrap().sample_rate_hz, 64.0);
        assert_eq!(parse_synth_channel("L_EP_X").unwrap().sample_rate_hz, 50.0);
        assert_eq!(parse_synth_channel("TEMP").unwrap().sample_rate_hz, 4.0);
        assert_eq!(parse_synth_channel("EDA:8").unwrap().sample_rate_hz, 8.0);
        assert!(parse_synth_channel("NOPE").is_err());
        assert!(parse_synth_channel("EDA:x").is_err());
    }

    #[test]
    fn pivot_groups_metrics() {
        let row = |c: &str, m: &str, v| ResultRow {
            combination: c.into(),
            label_case: "general".into(),
            metric: m.into(),
            value: v,
        };
        let rows = vec![
            row("a", "valence_accuracy", 0.5),
            row("a", "valence_recall", 0.25),
            row("b", "valence_accuracy", 0.75),
        ];
        let (metrics, table) = pivot(&rows);
        assert_eq!(metrics, vec!["valence_accuracy", "valence_recall"]);
        assert_eq!(table.len(), 2);
        assert_eq!(table[1].1.get("valence_recall"), None);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("grid.csv");
        write_grid(&p, &metrics, &table).unwrap();
        assert_eq!(
            fs::read_to_string(&p).unwrap(),
            "combination,label_case,valence_accuracy,valence_recall\na,general,0.500000,0.250000\nb,general,0.750000,\n"
        );
    }
}
