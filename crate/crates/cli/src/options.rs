use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use entroseg_core::pipeline::{DetectorSpec, PipelineConfig};

/// Flags shared by every subcommand. Anything given here overrides the
/// config file.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML pipeline configuration.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Super-pixel side in pixels.
    #[arg(long, global = true, value_name = "N")]
    pub cell_size: Option<usize>,
    /// Strength of the spatial smoothness term.
    #[arg(long, global = true, value_name = "X")]
    pub beta: Option<f64>,
    /// Number of mixture classes.
    #[arg(long, global = true, value_name = "N")]
    pub k: Option<usize>,
    /// Probability floor for the most accurate detector.
    #[arg(long, global = true, value_name = "X")]
    pub p_th: Option<f64>,
    /// Probability floor for every other detector.
    #[arg(long, global = true, value_name = "X")]
    pub p_tl: Option<f64>,
    #[arg(long, global = true, value_name = "X")]
    pub nms_threshold: Option<f64>,
    /// Entropy (bits) at or above which an image counts as scene-like.
    #[arg(long, global = true, value_name = "X")]
    pub entropy_threshold: Option<f64>,
    /// `builtin`, or an external service as `[ID=]HOST:PORT[@ACCURACY]`.
    /// Repeat to build an ensemble; replaces the configured roster.
    #[arg(long = "detector", global = true, value_name = "SPEC")]
    pub detectors: Vec<String>,
    /// Also run the detectors on the whole image.
    #[arg(long, global = true)]
    pub include_full_image: bool,
    /// Directory for JSON reports and images.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads for dataset runs (0 = one per core).
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
}

impl CommonArgs {
    pub fn load_config(&self) -> anyhow::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => read_config(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.cell_size {
            cfg.cell_size = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.k {
            cfg.k = Some(v);
            cfg.k_range = None;
        }
        if let Some(v) = self.p_th {
            cfg.ensemble.p_th = v;
        }
        if let Some(v) = self.p_tl {
            cfg.ensemble.p_tl = v;
        }
        if let Some(v) = self.nms_threshold {
            cfg.ensemble.nms_threshold = v;
        }
        if let Some(v) = self.entropy_threshold {
            cfg.entropy_threshold = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if self.include_full_image {
            cfg.include_full_image = true;
        }
        if !self.detectors.is_empty() {
            cfg.detectors = self
                .detectors
                .iter()
                .enumerate()
                .map(|(i, s)| parse_detector(s, i))
                .collect::<anyhow::Result<_>>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_config(path: &Path) -> anyhow::Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    PipelineConfig::from_toml(&text).with_context(|| format!("in {}", path.display()))
}

/// Accuracy assumed for an external detector given without one; equal to
/// the built-in detector's, so ties fall back to model-id order.
const DEFAULT_EXTERNAL_ACCURACY: f64 = 0.5;

pub fn parse_detector(spec: &str, index: usize) -> anyhow::Result<DetectorSpec> {
    let spec = spec.trim();
    if spec.eq_ignore_ascii_case("builtin") {
        return Ok(DetectorSpec::builtin());
    }
    let rest = spec.strip_prefix("tcp://").unwrap_or(spec);
    let (id, rest) = match rest.split_once('=') {
        Some((id, rest)) => (id.to_string(), rest),
        None => (format!("external-{index}"), rest),
    };
    let (endpoint, accuracy) = match rest.rsplit_once('@') {
        Some((endpoint, acc)) => {
            let acc: f64 = acc
                .parse()
                .with_context(|| format!("detector {spec:?}: accuracy {acc:?} is not a number"))?;
            (endpoint, acc)
        }
        None => (rest, DEFAULT_EXTERNAL_ACCURACY),
    };
    let Some((host, port)) = endpoint.rsplit_once(':') else {
        bail!("detector {spec:?}: expected `builtin` or HOST:PORT");
    };
    if host.is_empty() || port.parse::<u16>().is_err() {
        bail!("detector {spec:?}: expected `builtin` or HOST:PORT");
    }
    if id.is_empty() {
        bail!("detector {spec:?}: empty model id");
    }
    Ok(DetectorSpec::external(id, endpoint, accuracy))
}
