use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use entroseg_core::detection::EnsembleMember;
use entroseg_core::evaluation::{load_ground_truth, match_detections, Averaging, EvaluationReport, GroundTruthBox, ImageResult};
use entroseg_core::pipeline::{detect_image, entropy_report, PipelineConfig, Segmenter};
use rayon::prelude::*;
use serde::Serialize;

use crate::render::{label_map, load_image, overlay, save_png};
use crate::report::{DetectDoc, EntropyDoc, SegmentDoc};

/// A command failure, split by the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Unreadable input, bad configuration, missing ground truth.
    Input(anyhow::Error),
    /// The pipeline ran and could not produce a result.
    Pipeline(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Pipeline(_) => 2,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Input(e) | Failure::Pipeline(e) => e,
        }
    }
}

pub trait Classify<T> {
    fn input(self) -> Result<T, Failure>;
    fn pipeline(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Input(e.into()))
    }

    fn pipeline(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Pipeline(e.into()))
    }
}

/// Where a command sends its documents: always stdout, and a file in the
/// output directory when one was given.
pub struct Sink {
    out: Option<PathBuf>,
}

impl Sink {
    pub fn new(out: Option<PathBuf>) -> Result<Self, Failure> {
        if let Some(dir) = &out {
            fs::create_dir_all(dir)
                .with_context(|| format!("cannot create output directory {}", dir.display()))
                .input()?;
        }
        Ok(Self { out })
    }

    pub fn path(&self, name: &str) -> Option<PathBuf> {
        self.out.as_ref().map(|d| d.join(name))
    }

    fn write_json(&self, name: &str, doc: &impl Serialize) -> Result<String, Failure> {
        let mut text = serde_json::to_string_pretty(doc).context("serializing output").pipeline()?;
        text.push('\n');
        if let Some(path) = self.path(name) {
            fs::write(&path, &text)
                .with_context(|| format!("cannot write {}", path.display()))
                .input()?;
        }
        Ok(text)
    }

    pub fn emit(&self, name: &str, doc: &impl Serialize) -> Result<(), Failure> {
        print!("{}", self.write_json(name, doc)?);
        Ok(())
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned())
}

fn display_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

pub fn entropy(image: &Path, cfg: &PipelineConfig, sink: &Sink) -> Result<(), Failure> {
    let img = load_image(image).input()?;
    let report = entropy_report(&img, cfg.entropy_threshold).pipeline()?;
    let doc = EntropyDoc {
        image: display_name(image),
        width: img.width(),
        height: img.height(),
        report,
    };
    sink.emit(&format!("{}.entropy.json", stem(image)), &doc)
}

pub fn segment(image: &Path, cfg: &PipelineConfig, sink: &Sink) -> Result<(), Failure> {
    let img = load_image(image).input()?;
    let segmenter = Segmenter::new(cfg).input()?;
    let started = Instant::now();
    let out = segmenter.segment(&img).pipeline()?;
    log::info!(
        "{}: {} segments, k={}, {:.3} s",
        image.display(),
        out.segments.len(),
        out.k,
        started.elapsed().as_secs_f64()
    );
    let name = stem(image);
    if let Some(path) = sink.path(&format!("{name}.labels.png")) {
        save_png(&label_map(&out.grid, &out.labels), &path).input()?;
    }
    sink.emit(&format!("{name}.segments.json"), &SegmentDoc::new(display_name(image), cfg.seed, &out))
}

/// Runs the full pipeline on one image and reports detector trouble:
/// a detector that failed everywhere is a warning, all of them failing is
/// an error.
fn run_detect(
    image: &Path,
    segmenter: &Segmenter,
    members: &[EnsembleMember],
) -> Result<(entroseg_core::image::RasterImage, DetectDoc), Failure> {
    let img = load_image(image).input()?;
    let started = Instant::now();
    let out = detect_image(&img, segmenter, members).pipeline()?;
    let diag = &out.ensemble.diagnostics;
    if diag.all_failed() {
        let reasons: Vec<String> = diag.failures.iter().map(|f| format!("{}: {}", f.model_id, f.reason)).collect();
        return Err(Failure::Pipeline(anyhow!(
            "{}: every detector failed ({})",
            image.display(),
            reasons.join("; ")
        )));
    }
    let per_model = diag.tasks / members.len().max(1);
    for m in members {
        if diag.model_failed(&m.descriptor.model_id, per_model) {
            log::warn!("{}: detector {} failed on every crop, continuing without it", image.display(), m.descriptor.model_id);
        }
    }
    log::info!(
        "{}: {} boxes from {} crops, {:.3} s",
        image.display(),
        out.ensemble.boxes.len(),
        out.crops.len(),
        started.elapsed().as_secs_f64()
    );
    let doc = DetectDoc::new(display_name(image), &out);
    Ok((img, doc))
}

pub fn detect(image: &Path, truth: Option<&Path>, cfg: &PipelineConfig, sink: &Sink) -> Result<(), Failure> {
    let truth = truth.map(load_ground_truth).transpose().input()?;
    let segmenter = Segmenter::new(cfg).input()?;
    let members = cfg.members().input()?;
    let (img, mut doc) = run_detect(image, &segmenter, &members)?;
    if let Some(gts) = &truth {
        doc.metrics = Some(match_detections(&doc.detections, gts, cfg.match_iou));
    }
    let name = stem(image);
    if let Some(path) = sink.path(&format!("{name}.overlay.png")) {
        save_png(&overlay(&img, &doc.detections, truth.as_deref().unwrap_or(&[])), &path).input()?;
    }
    sink.emit(&format!("{name}.detections.json"), &doc)
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Images of a dataset directory paired with their `gt_<stem>.txt` files,
/// looked up next to the image and then in a `gt/` subdirectory.
pub fn dataset(dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>, Failure> {
    let entries = fs::read_dir(dir)
        .with_context(|| format!("cannot read dataset directory {}", dir.display()))
        .input()?;
    let mut images = Vec::new();
    for entry in entries {
        let path = entry.input()?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if path.is_file() && is_image {
            images.push(path);
        }
    }
    if images.is_empty() {
        return Err(Failure::Input(anyhow!("no images in {}", dir.display())));
    }
    images.sort();
    images
        .into_iter()
        .map(|img| {
            let gt_name = format!("gt_{}.txt", stem(&img));
            [dir.join(&gt_name), dir.join("gt").join(&gt_name)]
                .into_iter()
                .find(|p| p.is_file())
                .map(|gt| (img.clone(), gt))
                .ok_or_else(|| Failure::Input(anyhow!("missing ground truth {gt_name} for {}", img.display())))
        })
        .collect()
}

pub fn evaluate(dir: &Path, averaging: Averaging, table: bool, cfg: &PipelineConfig, sink: &Sink) -> Result<(), Failure> {
    let items = dataset(dir)?;
    let truths: Vec<Vec<GroundTruthBox>> = items
        .iter()
        .map(|(_, gt)| load_ground_truth(gt).with_context(|| format!("in {}", gt.display())))
        .collect::<anyhow::Result<_>>()
        .input()?;
    let segmenter = Segmenter::new(cfg).input()?;
    let members = cfg.members().input()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .context("starting worker pool")
        .pipeline()?;
    log::info!("evaluating {} images on {} workers", items.len(), pool.current_num_threads());

    // Results come back in dataset order; everything is written afterwards
    // from this thread.
    let docs: Vec<DetectDoc> = pool.install(|| {
        items
            .par_iter()
            .zip(&truths)
            .map(|((image, _), gts)| {
                let (_, mut doc) = run_detect(image, &segmenter, &members)?;
                doc.metrics = Some(match_detections(&doc.detections, gts, cfg.match_iou));
                Ok(doc)
            })
            .collect::<Result<_, Failure>>()
    })?;

    let mut per_image = Vec::with_capacity(docs.len());
    for ((image, _), doc) in items.iter().zip(&docs) {
        if sink.out.is_some() {
            sink.write_json(&format!("{}.detections.json", stem(image)), doc)?;
        }
        per_image.push(ImageResult {
            image: doc.image.clone(),
            detections: doc.detections.len(),
            metrics: doc.metrics.expect("set above"),
        });
    }
    let report = EvaluationReport::new(per_image, cfg.match_iou, averaging).pipeline()?;
    let text = report.to_table();
    if let Some(path) = sink.path("evaluation.txt") {
        fs::write(&path, &text)
            .with_context(|| format!("cannot write {}", path.display()))
            .input()?;
    }
    if table {
        sink.write_json("evaluation.json", &report)?;
        print!("{text}");
        Ok(())
    } else {
        sink.emit("evaluation.json", &report)
    }
}
