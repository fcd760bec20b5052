//! The subcommands, as library functions so tests can drive them directly.

use std::fs;
use std::path::{Path, PathBuf};

use metadefa_core::augment::{apply_corruptions, background_substitute, pseudo_mask};
use metadefa_core::metaloop::{self, accuracy};
use metadefa_core::rng;
use metadefa_core::{DomainDataset, LabeledImage, Learner, LossTerms, ParamSet, Tensor, TinyCnn};
use rand::seq::IndexedRandom;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::dataset::{resize_nearest, write_domain};
use crate::error::{Error, Result};
use crate::heatmap;
use crate::netpbm;
use crate::report::{self, AblationRow, EvalReport, SeedAccuracy};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const INITIAL_FILE: &str = "initial.bin";
pub const HISTORY_FILE: &str = "history.csv";

/// Loaded domains plus the model they feed.
pub struct Experiment {
    pub domains: Vec<DomainDataset>,
    pub model: TinyCnn,
    pub targets: Vec<String>,
}

impl Experiment {
    pub fn load(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let domains = config.dataset.load()?;
        let targets = config.targets(&domains)?;
        let model = TinyCnn::new(config.model.clone()).map_err(|e| Error::Config(e.to_string()))?;
        for d in &domains {
            let first = &d.samples[0];
            if d.class_names.len() != config.model.num_classes {
                return Err(Error::Config(format!(
                    "domain `{}` has {} classes but the model has {}",
                    d.name,
                    d.class_names.len(),
                    config.model.num_classes
                )));
            }
            if first.height() != config.model.input_size || first.width() != config.model.input_size {
                return Err(Error::Config(format!(
                    "domain `{}` images are {}x{} but the model expects {}",
                    d.name,
                    first.height(),
                    first.width(),
                    config.model.input_size
                )));
            }
        }
        Ok(Self {
            domains,
            model,
            targets,
        })
    }

    pub fn domain(&self, name: &str) -> Result<&DomainDataset> {
        self.domains
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| Error::UnknownDomain(name.into()))
    }
}

/// Trains one run per seed; writes `initial.bin`, `checkpoint.bin` and
/// `history.csv` under `<output_dir>/seed_<k>/`. Returns the history paths.
pub fn cmd_train(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let exp = Experiment::load(config)?;
    let source = exp.domain(&config.source_domain)?;
    let mut paths = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let outcome = metaloop::train(&exp.model, &source.samples, &config.setup(seed))?;
        let dir = config.seed_dir(seed);
        checkpoint::save(&dir.join(INITIAL_FILE), &outcome.initial)?;
        checkpoint::save(&dir.join(CHECKPOINT_FILE), &outcome.params)?;
        let history = dir.join(HISTORY_FILE);
        report::write_history(&history, &outcome.history)?;
        if let Some(last) = outcome.history.last() {
            log::info!(
                "seed {seed}: epoch {} loss {:.4} val accuracy {:.3}",
                last.epoch,
                last.train_loss.total,
                last.val_accuracy
            );
        }
        paths.push(history);
    }
    Ok(paths)
}

/// Top-1 accuracy of `params` on each target. Only target domains are read;
/// naming the source among them is an error.
pub fn evaluate_seed<L: Learner + ?Sized>(
    learner: &L,
    params: &ParamSet,
    domains: &[DomainDataset],
    source_domain: &str,
    targets: &[String],
    seed: u64,
) -> Result<Vec<SeedAccuracy>> {
    targets
        .iter()
        .map(|t| {
            if t == source_domain {
                return Err(Error::SourceLeak(t.clone()));
            }
            let domain = domains
                .iter()
                .find(|d| &d.name == t)
                .ok_or_else(|| Error::UnknownDomain(t.clone()))?;
            Ok(SeedAccuracy {
                seed,
                domain: t.clone(),
                accuracy: accuracy(learner, params, &domain.samples)?,
            })
        })
        .collect()
}

/// Evaluates every seed's checkpoint on the target domains and writes
/// `eval.json`, `eval.csv` and `eval_seeds.csv` into `output_dir`.
pub fn cmd_eval(config: &RunConfig) -> Result<EvalReport> {
    let exp = Experiment::load(config)?;
    let mut detail = Vec::new();
    let mut histories = Vec::new();
    for &seed in &config.seeds {
        let dir = config.seed_dir(seed);
        let params = checkpoint::load(&dir.join(CHECKPOINT_FILE))?;
        detail.extend(evaluate_seed(
            &exp.model,
            &params,
            &exp.domains,
            &config.source_domain,
            &exp.targets,
            seed,
        )?);
        histories.push(dir.join(HISTORY_FILE));
    }
    let report = EvalReport::aggregate(&config.source_domain, &exp.targets, detail, histories);
    report.write(&config.output_dir)?;
    Ok(report)
}

/// The four cumulative loss configurations: CE only, then adding the CAM
/// term, the minor pair and finally the style term.
pub fn ablation_configs(config: &RunConfig) -> Vec<(&'static str, RunConfig)> {
    let rows = [
        ("ce", LossTerms::CE_ONLY),
        ("ce+cam", LossTerms { cam: true, ..LossTerms::CE_ONLY }),
        ("ce+cam+minor", LossTerms { style: false, ..LossTerms::ALL }),
        ("ce+cam+minor+style", LossTerms::ALL),
    ];
    rows.into_iter()
        .map(|(name, terms)| {
            let mut c = config.clone();
            c.loss_weights.terms = terms;
            c.output_dir = config.output_dir.join("ablation").join(name);
            (name, c)
        })
        .collect()
}

/// Trains and evaluates every ablation row; writes `ablation.csv` and
/// `ablation_seeds.csv` into `output_dir`.
pub fn cmd_ablate(config: &RunConfig) -> Result<Vec<AblationRow>> {
    let exp = Experiment::load(config)?;
    let mut rows = Vec::new();
    for (name, c) in ablation_configs(config) {
        log::info!("ablation row `{name}`");
        cmd_train(&c)?;
        rows.push(AblationRow {
            name: name.into(),
            report: cmd_eval(&c)?,
        });
    }
    report::write_ablation(&config.output_dir, &exp.targets, &rows)?;
    Ok(rows)
}

/// Inputs for a heatmap export.
#[derive(Debug, Clone)]
pub struct HeatmapRequest {
    pub checkpoint: PathBuf,
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
    /// Class whose CAM is drawn; the predicted class when absent.
    pub class: Option<usize>,
    pub seed: u64,
    pub output: PathBuf,
}

/// Writes `cam.pgm`, `caam.pgm`, `cam_aug.pgm` and `caam_aug.pgm`, each the
/// size of the input image. The enhanced view takes its background from a
/// source-domain sample of another class.
pub fn cmd_heatmap(config: &RunConfig, req: &HeatmapRequest) -> Result<Vec<PathBuf>> {
    let exp = Experiment::load(config)?;
    let params = checkpoint::load(&req.checkpoint)?;
    let raster = netpbm::read(&req.image)?;
    if raster.channels != 3 {
        return Err(Error::Malformed {
            path: req.image.clone(),
            reason: "expected a colour (P6) image".into(),
        });
    }
    let (h, w) = (raster.height, raster.width);
    let size = config.model.input_size;
    let pixels = Tensor::new(&[3, size, size], resize_nearest(raster.to_planar().data(), 3, h, w, size, size))?;
    let mask = match &req.mask {
        Some(path) => {
            let m = netpbm::read(path)?;
            if m.channels != 1 || (m.height, m.width) != (h, w) {
                return Err(Error::MaskShape {
                    path: path.clone(),
                    expected: (h, w),
                    found: (m.height, m.width),
                });
            }
            let bits: Vec<f64> = m.samples.iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect();
            Tensor::new(&[size, size], resize_nearest(&bits, 1, h, w, size, size))?
        }
        None => pseudo_mask(size, size),
    };
    let label = match req.class {
        Some(c) if c < config.model.num_classes => c,
        Some(c) => return Err(Error::Config(format!("class {c} out of range"))),
        None => exp.model.predict(&params, &pixels)?,
    };
    let image = LabeledImage::new(0, pixels, label, Some(mask))?;

    let mut stream = rng::stream(req.seed, &[rng::tag_of("heatmap")]);
    let donors: Vec<&LabeledImage> = exp
        .domain(&config.source_domain)?
        .samples
        .iter()
        .filter(|s| s.label != label)
        .collect();
    let donor = donors
        .choose(&mut stream)
        .ok_or(metadefa_core::Error::NoDonor { label })?;
    let substituted = background_substitute(&image, donor, &mut stream)?;
    let augmented = apply_corruptions(&substituted, &config.corruption, &mut stream);

    fs::create_dir_all(&req.output).map_err(Error::write(&req.output))?;
    heatmap::export(
        &exp.model,
        &params,
        image.pixels(),
        augmented.pixels(),
        label,
        &req.output,
        (h, w),
    )
}

/// Writes every configured domain as PPM/PGM files plus a manifest under `root`.
pub fn cmd_gen_data(config: &RunConfig, root: &Path) -> Result<Vec<PathBuf>> {
    config.validate()?;
    config.dataset.load()?.iter().map(|d| write_domain(root, d)).collect()
}
