use super::*;
use crate::dataio::{
    derive_labels, make_synthetic, BoundaryPolicy, Dimension, Domain, LabelCase, LabelSet, SyntheticChannel,
    SyntheticSpec,
};
use crate::model::{ModelConfig, Variant};
use crate::preprocess::{preprocess_channel, ChannelProfile, WindowedTensor};
use crate::train::TrainConfig;

fn tiny_data(case: LabelCase) -> (Vec<WindowedTensor>, LabelSet) {
    let mut spec = SyntheticSpec::new(
        5,
        4,
        2.0,
        vec![SyntheticChannel::new("ACC_Z", 64.0), SyntheticChannel::new("LAT_ACC", 256.0)],
    );
    spec.n_videos = 4;
    spec.duration_s = 42.0;
    let data = make_synthetic(&spec).unwrap();
    let tensors = data
        .recordings
        .iter()
        .map(|r| preprocess_channel(r, &ChannelProfile::for_channel(&r.channel).unwrap()).unwrap())
        .collect();
    let labels = derive_labels(&data.ratings, case, BoundaryPolicy::LE4Low, Some(&data.g2)).unwrap();
    (tensors, LabelSet::new(case, labels))
}

fn quick_train() -> TrainConfig {
    TrainConfig {
        max_epochs: 2,
        early_stop_patience: 1,
        batch_size: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn samples_follow_config_order_and_labels() {
    let (tensors, labels) = tiny_data(LabelCase::General);
    let cfg = ModelConfig::from_channels(&["LAT_ACC", "ACC_Z"], 4, Variant::EmoMsaSe, 0).unwrap();
    let samples = build_samples(&tensors, &labels, Dimension::Valence, &cfg).unwrap();
    assert_eq!(samples.len(), 20);
    assert_eq!(samples[0].inputs[0].shape(), (39, 128));
    assert_eq!(samples[0].inputs[1].shape(), (39, 512));
    assert_eq!(participants_of(&samples).len(), 5);
    let missing = ModelConfig::from_channels(&["ACC_Z", "EDA"], 4, Variant::EmoMsaSe, 0).unwrap();
    assert!(matches!(
        build_samples(&tensors, &labels, Dimension::Valence, &missing),
        Err(EvalError::MissingChannel { .. })
    ));
}

#[test]
fn majority_labels_are_constant_per_video() {
    let (tensors, labels) = tiny_data(LabelCase::Majority);
    let cfg = ModelConfig::from_channels(&["ACC_Z"], 4, Variant::EmoMsaSe, 0).unwrap();
    for dim in [Dimension::Valence, Dimension::Arousal] {
        let samples = build_samples(&tensors, &labels, dim, &cfg).unwrap();
        for s in &samples {
            let want = labels.level("", &s.video_id, dim).unwrap().class_index();
            assert_eq!(s.label, want);
        }
    }
}

#[test]
fn modality_and_decision_runs_complete() {
    let (tensors, labels) = tiny_data(LabelCase::General);
    let train = quick_train();
    for (variant, fusion) in [
        (Variant::LstmSa, Fusion::ModalityLevel),
        (Variant::EmoMsaSe, Fusion::DecisionSum),
        (Variant::LstmMsa, Fusion::DecisionMax),
    ] {
        let cfg = ModelConfig::from_channels(&["ACC_Z", "LAT_ACC"], 4, variant, 1).unwrap();
        let samples = build_samples(&tensors, &labels, Dimension::Valence, &cfg).unwrap();
        let plan = group_kfold(&participants_of(&samples), 3, 0).unwrap();
        let res = run_experiment(&samples, &cfg, &train, &plan, fusion).unwrap();
        assert_eq!(res.folds.len(), 3);
        assert_eq!(res.folds.iter().map(|f| f.n_test_samples).sum::<usize>(), 20);
        let expect_models = if fusion == Fusion::ModalityLevel { 1 } else { 2 };
        assert!(res.train_logs.iter().all(|l| l.len() == expect_models));
        let mean = res.folds.iter().map(|f| f.accuracy).sum::<f64>() / 3.0;
        assert!((res.mean_accuracy - mean).abs() < 1e-15);
        for (i, f) in res.folds.iter().enumerate() {
            assert_eq!(f.fold_index, i);
            assert_eq!(f.confusion.iter().flatten().sum::<usize>(), f.n_test_samples);
        }
    }
}

#[test]
fn decision_fusion_needs_two_domains() {
    let (tensors, labels) = tiny_data(LabelCase::General);
    let cfg = ModelConfig::from_channels(&["ACC_Z"], 4, Variant::EmoMsaSe, 1).unwrap();
    let samples = build_samples(&tensors, &labels, Dimension::Valence, &cfg).unwrap();
    let plan = group_kfold(&participants_of(&samples), 3, 0).unwrap();
    assert!(matches!(
        run_experiment(&samples, &cfg, &quick_train(), &plan, Fusion::DecisionSum),
        Err(EvalError::NoClassifiers(1))
    ));
}

#[test]
fn identical_classifiers_fuse_to_their_argmax() {
    for p in [[0.3, 0.7], [0.8, 0.2], [0.51, 0.49]] {
        let v = vec![p.to_vec(); 3];
        let single = crate::train::argmax(&p);
        assert_eq!(decision_fuse(&v, FuseRule::Sum).unwrap().class, single);
        assert_eq!(decision_fuse(&v, FuseRule::Max).unwrap().class, single);
    }
}

#[test]
fn results_csv_and_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let res = ExperimentResult {
        folds: vec![confusion_metrics(&[(1, 1), (0, 1)]).unwrap()],
        train_logs: vec![vec![]],
        mean_accuracy: 0.5,
        mean_recall: 0.5,
    };
    let name = combination_name(Variant::EmoMsaSe, &[Domain::Peripheral, Domain::Trunk, Domain::Head], Fusion::ModalityLevel);
    assert_eq!(name, "emomsase:Peripheral+Trunk+Head");
    assert_eq!(
        combination_name(Variant::LstmSa, &[Domain::Head], Fusion::DecisionMax),
        "lstmsa:Head/max"
    );
    let rows = result_rows(&name, LabelCase::Majority, Dimension::Valence, &res);
    let path = dir.path().join("results.csv");
    write_results_csv(&path, &rows).unwrap();
    assert_eq!(
        std::fs::read_to_string(&path).unwrap(),
        "combination,label_case,metric,value\n\
         emomsase:Peripheral+Trunk+Head,majority,valence_accuracy,0.500000\n\
         emomsase:Peripheral+Trunk+Head,majority,valence_recall,0.500000\n"
    );
    assert_eq!(read_results_csv(&path).unwrap(), rows);
    let report = ExperimentReport {
        combination: name,
        label_case: LabelCase::Majority,
        dimension: Dimension::Valence,
        variant: Variant::EmoMsaSe,
        fusion: Fusion::ModalityLevel,
        split: SplitScheme::GroupKFold(5),
        seed: 7,
        mean_accuracy: res.mean_accuracy,
        mean_recall: res.mean_recall,
        folds: res.folds.clone(),
        train_logs: res.train_logs.clone(),
    };
    let jpath = dir.path().join("report.json");
    write_report_json(&jpath, std::slice::from_ref(&report)).unwrap();
    assert_eq!(read_report_json(&jpath).unwrap(), vec![report]);
}
