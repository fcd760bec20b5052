mod common;

use std::cell::RefCell;
use std::fs;
use std::path::Path;
use std::process::Command;

use common::tiny_config;
use metadefa::commands::{self, HeatmapRequest, CHECKPOINT_FILE, HISTORY_FILE, INITIAL_FILE};
use metadefa::dataset::{load_image_folder, write_domain};
use metadefa::heatmap::{self, gray_levels};
use metadefa::report::AVERAGE;
use metadefa::{checkpoint, netpbm, Error};
use metadefa_core::rng::Stream;
use metadefa_core::{
    DomainDataset, LabeledImage, Learner, LossBreakdown, LossWeights, ParamSet, Tensor, TinyCnn, TinyCnnConfig,
};

fn bytes(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn generated_domains_survive_a_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let generated = config.dataset.load().unwrap();
    let manifests = commands::cmd_gen_data(&config, dir.path()).unwrap();
    assert_eq!(manifests.len(), generated.len());
    for (manifest, original) in manifests.iter().zip(&generated) {
        let loaded = load_image_folder(dir.path(), manifest, 16).unwrap();
        assert_eq!(&loaded, original);
    }
}

#[test]
fn loader_failures_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = tiny_config(root);
    let source = config.dataset.load().unwrap().remove(0);
    let manifest = write_domain(root, &source).unwrap();
    let text = fs::read_to_string(&manifest).unwrap();

    let empty = root.join("empty.tsv");
    fs::write(&empty, "#classes\tdisk\n").unwrap();
    assert!(matches!(load_image_folder(root, &empty, 16), Err(Error::NoSamples(_))));

    let unknown = root.join("unknown.tsv");
    fs::write(&unknown, text.replacen("\tdisk\n", "\thexagon\n", 1)).unwrap();
    assert!(matches!(
        load_image_folder(root, &unknown, 16),
        Err(Error::UnknownClass { line: 2, .. })
    ));

    let missing = root.join("missing.tsv");
    fs::write(&missing, text.replacen("images/source/0000.ppm", "images/nowhere.ppm", 1)).unwrap();
    assert!(matches!(load_image_folder(root, &missing, 16), Err(Error::Unreadable { .. })));

    netpbm::write_gray(&root.join("small.pgm"), 4, 4, &[255; 16]).unwrap();
    let bad_mask = root.join("bad_mask.tsv");
    fs::write(&bad_mask, text.replacen("masks/source/0000.pgm", "small.pgm", 1)).unwrap();
    assert!(matches!(
        load_image_folder(root, &bad_mask, 16),
        Err(Error::MaskShape {
            expected: (16, 16),
            found: (4, 4),
            ..
        })
    ));
}

#[test]
fn masks_are_binarized_and_absent_masks_fall_back() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    netpbm::write_ppm(&root.join("a.ppm"), &Tensor::full(&[3, 2, 2], 0.5)).unwrap();
    netpbm::write_gray(&root.join("a.pgm"), 2, 2, &[0, 127, 128, 255]).unwrap();
    fs::write(root.join("d.tsv"), "a.ppm\ta.pgm\tx\na.ppm\t-\ty\n").unwrap();
    let d = load_image_folder(root, &root.join("d.tsv"), 2).unwrap();
    assert_eq!(d.class_names, vec!["x", "y"]);
    assert_eq!(d.samples[0].mask().unwrap().data(), &[0.0, 0.0, 1.0, 1.0]);
    assert!(d.samples[1].mask().is_some());
}

#[test]
fn training_twice_gives_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    commands::cmd_train(&tiny_config(a.path())).unwrap();
    commands::cmd_train(&tiny_config(b.path())).unwrap();
    for seed in [0, 1] {
        for file in [CHECKPOINT_FILE, INITIAL_FILE, HISTORY_FILE] {
            let rel = Path::new(&format!("seed_{seed}")).join(file);
            assert_eq!(bytes(&a.path().join(&rel)), bytes(&b.path().join(&rel)), "{}", rel.display());
        }
    }
    let history = fs::read_to_string(a.path().join("seed_0").join(HISTORY_FILE)).unwrap();
    let mut lines = history.lines();
    assert_eq!(
        lines.next(),
        Some("epoch,ce,cam,minor_ori,minor_aug,style,total,val_accuracy")
    );
    assert_eq!(lines.count(), 2);
}

#[test]
fn zero_epochs_saves_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny_config(dir.path());
    config.meta.epochs = 0;
    commands::cmd_train(&config).unwrap();
    let seed_dir = config.seed_dir(0);
    assert_eq!(bytes(&seed_dir.join(CHECKPOINT_FILE)), bytes(&seed_dir.join(INITIAL_FILE)));
}

#[test]
fn constant_model_scores_chance_on_balanced_targets() {
    let config = tiny_config(Path::new("unused"));
    let domains = config.dataset.load().unwrap();
    let model = TinyCnn::new(config.model.clone()).unwrap();
    let mut rng = metadefa_core::rng::stream(0, &[]);
    let zeros = model.init_params(&mut rng).zeros_like();
    let targets = vec!["stripes".to_string(), "grainy".to_string()];
    let acc = commands::evaluate_seed(&model, &zeros, &domains, "source", &targets, 0).unwrap();
    for a in acc {
        assert_eq!(a.accuracy, 0.25, "{}", a.domain);
    }
}

/// Predicts class 0 and remembers every image it was shown.
struct Spy {
    seen: RefCell<Vec<Tensor>>,
}

impl Learner for Spy {
    fn init_params(&self, _: &mut Stream) -> ParamSet {
        ParamSet::new()
    }

    fn pair_loss(
        &self,
        _: &ParamSet,
        _: &LabeledImage,
        _: &LabeledImage,
        _: &LossWeights,
    ) -> metadefa_core::Result<(LossBreakdown, ParamSet)> {
        unreachable!("evaluation never trains")
    }

    fn predict(&self, _: &ParamSet, image: &LabeledImage) -> metadefa_core::Result<usize> {
        self.seen.borrow_mut().push(image.pixels().clone());
        Ok(0)
    }
}

#[test]
fn evaluation_never_touches_the_source_domain() {
    let config = tiny_config(Path::new("unused"));
    let domains = config.dataset.load().unwrap();
    let source: &DomainDataset = &domains[0];
    let spy = Spy {
        seen: RefCell::new(Vec::new()),
    };
    let targets: Vec<String> = domains[1..].iter().map(|d| d.name.clone()).collect();
    commands::evaluate_seed(&spy, &ParamSet::new(), &domains, &source.name, &targets, 0).unwrap();
    {
        let seen = spy.seen.borrow();
        assert_eq!(seen.len(), domains[1..].iter().map(|d| d.samples.len()).sum::<usize>());
        assert!(source.samples.iter().all(|s| !seen.contains(s.pixels())));
    }

    let leaky = vec![targets[0].clone(), source.name.clone()];
    let err = commands::evaluate_seed(&spy, &ParamSet::new(), &domains, &source.name, &leaky, 0).unwrap_err();
    assert!(matches!(err, Error::SourceLeak(_)));
}

#[test]
fn eval_report_aggregates_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    commands::cmd_train(&config).unwrap();
    let report = commands::cmd_eval(&config).unwrap();
    assert_eq!(report, commands::cmd_eval(&config).unwrap());
    assert_eq!(report.per_seed_detail.len(), 2 * 3);
    let targets = ["stripes", "speckle", "grainy"];
    for t in targets {
        let v: Vec<f64> = report
            .per_seed_detail
            .iter()
            .filter(|d| d.domain == t)
            .map(|d| d.accuracy)
            .collect();
        let mean = (v[0] + v[1]) / 2.0;
        let std = ((v[0] - mean).powi(2) + (v[1] - mean).powi(2)).sqrt();
        let s = report.summary(t).unwrap();
        assert!((s.mean - mean).abs() < 1e-15 && (s.std - std).abs() < 1e-15, "{t}");
    }
    let csv = fs::read_to_string(dir.path().join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + targets.len() + 1);
    assert!(csv.lines().last().unwrap().starts_with(AVERAGE));
}

#[test]
fn eval_without_checkpoints_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let err = commands::cmd_eval(&tiny_config(dir.path())).unwrap_err();
    assert!(matches!(err, Error::Unreadable { .. }));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn ablation_baseline_row_is_plain_cross_entropy_training() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny_config(dir.path());
    config.meta.epochs = 1;
    let rows = commands::cmd_ablate(&config).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["ce", "ce+cam", "ce+cam+minor", "ce+cam+minor+style"]);

    let plain_dir = tempfile::tempdir().unwrap();
    let mut plain = config.clone();
    plain.output_dir = plain_dir.path().to_path_buf();
    plain.loss_weights = LossWeights::new(0.0, 0.0);
    commands::cmd_train(&plain).unwrap();
    let report = commands::cmd_eval(&plain).unwrap();
    assert_eq!(rows[0].report.per_domain_accuracy, report.per_domain_accuracy);

    let csv = fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(
        lines[0],
        "config,stripes_mean,stripes_std,speckle_mean,speckle_std,grainy_mean,grainy_std,average_mean,average_std"
    );
    for (line, name) in lines[1..].iter().zip(names) {
        assert_eq!(line.split(',').next(), Some(name));
        assert_eq!(line.split(',').count(), 9);
    }
}

#[test]
fn heatmaps_match_input_size_and_one_hot_feature_maps() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let model = TinyCnn::new(config.model.clone()).unwrap();
    let mut params = model.init_params(&mut metadefa_core::rng::stream(5, &[]));
    let (label, k) = (2, 3);
    let fc = params.get_mut("fc.weight").unwrap();
    let channels = fc.shape()[1];
    for (i, w) in fc.data_mut().iter_mut().enumerate() {
        *w = if i == label * channels + k { 1.0 } else { 0.0 };
    }
    let ckpt = dir.path().join("onehot.bin");
    checkpoint::save(&ckpt, &params).unwrap();

    // A 32×32 input is downsampled 2× for the 16×16 model.
    let sample = config.dataset.load().unwrap()[1].samples[7].clone();
    let big = Tensor::new(
        &[3, 32, 32],
        metadefa::dataset::resize_nearest(sample.pixels().data(), 3, 16, 16, 32, 32),
    )
    .unwrap();
    let image = dir.path().join("in.ppm");
    netpbm::write_ppm(&image, &big).unwrap();

    let out = dir.path().join("maps");
    let req = HeatmapRequest {
        checkpoint: ckpt,
        image,
        mask: None,
        class: Some(label),
        seed: 0,
        output: out.clone(),
    };
    let written = commands::cmd_heatmap(&config, &req).unwrap();
    assert_eq!(written.len(), 4);
    for (path, name) in written.iter().zip(heatmap::FILES) {
        assert_eq!(path, &out.join(name));
        let r = netpbm::read(path).unwrap();
        assert_eq!((r.width, r.height, r.channels), (32, 32, 1));
    }

    let bundle = model.forward(&params, sample.pixels(), label).unwrap();
    let s = bundle.feature_maps.shape()[1];
    let fk = Tensor::new(&[s, s], bundle.feature_maps.channel(k).to_vec()).unwrap();
    let expected = gray_levels(&fk, 32, 32);
    let raw = bytes(&out.join("cam.pgm"));
    assert_eq!(&raw[raw.len() - 32 * 32..], expected.as_slice());
    assert_eq!(commands::cmd_heatmap(&config, &req).unwrap(), written);
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_metadefa")).args(args).output().unwrap()
}

#[test]
fn exit_codes_distinguish_config_and_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"seeds": [], "typo": 1}"#).unwrap();
    assert_eq!(cli(&["train", "--config", bad.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(cli(&["frobnicate"]).status.code(), Some(1));

    let config = serde_json::to_string(&tiny_config(dir.path())).unwrap();
    let good = dir.path().join("good.json");
    fs::write(&good, config).unwrap();
    let out = dir.path().join("nothing_trained");
    let status = cli(&["eval", "--config", good.to_str().unwrap(), "--output", out.to_str().unwrap()]).status;
    assert_eq!(status.code(), Some(2));

    let status = cli(&["gen-data", "--config", good.to_str().unwrap(), "--output", out.to_str().unwrap()]).status;
    assert_eq!(status.code(), Some(0));
    assert!(out.join("source.tsv").exists());
}

#[test]
fn model_must_fit_the_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny_config(dir.path());
    config.model = TinyCnnConfig {
        input_size: 32,
        ..config.model
    };
    assert!(matches!(commands::cmd_train(&config), Err(Error::Config(_))));
}
