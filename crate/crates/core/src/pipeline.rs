//! End-to-end wiring: dilation, super-pixel features, spatially regularized
//! clustering, segment extraction and ensemble detection.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::detection::{
    run_ensemble_with, CropPolicy, DetectorDescriptor, DetectorKind, EnsembleConfig, EnsembleMember, EnsembleOutput, ExternalDetector,
    ReferenceDetector, ReferenceParams,
};
use crate::error::{Error, Result};
use crate::evaluation::DEFAULT_MATCH_IOU;
use crate::filterbank::{build_lm_filterbank, BankConvolver, FilterBank, DEFAULT_DERIV_SCALES, DEFAULT_SUPPORT};
use crate::image::{
    classify_entropy, dilate, shannon_entropy, to_grayscale, DilationKernel, EntropyClass, GrayImage, RasterImage,
    DEFAULT_ENTROPY_THRESHOLD,
};
use crate::segmentation::{
    em_fit, map_labels, merge_segments, select_k, EmOptions, Segment, SegmentSet, DEFAULT_BETA, DEFAULT_K,
    DEFAULT_MAX_ITER, DEFAULT_MAX_SWEEPS, DEFAULT_PADDING, DEFAULT_TOL,
};
use crate::superpixel::{
    build_adjacency, compute_features, partition, standardize, AdjacencyGraph, Connectivity, DistanceNormalization,
    PixelRect, SuperPixelFeatures, SuperPixelGrid, DEFAULT_CELL_SIZE,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DilationConfig {
    pub sigma: f64,
    pub radius: usize,
}

impl Default for DilationConfig {
    fn default() -> Self {
        Self {
            sigma: DilationKernel::DEFAULT_SIGMA,
            radius: DilationKernel::DEFAULT_RADIUS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterBankConfig {
    /// Kernel side in pixels (odd).
    pub support: usize,
    /// Number of oriented-derivative scales.
    pub deriv_scales: usize,
}

impl Default for FilterBankConfig {
    fn default() -> Self {
        Self {
            support: DEFAULT_SUPPORT,
            deriv_scales: DEFAULT_DERIV_SCALES,
        }
    }
}

/// Which image the super-pixel statistics are measured on.
///
/// The original image is the default: dilation (a max filter) erases dark
/// texture finer than its footprint and smears bright regions across
/// boundaries, and on a flat/checkerboard split the diagonal mixture then
/// prefers to isolate the boundary columns over separating the halves.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSource {
    Dilated,
    #[default]
    Original,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    pub model_id: String,
    pub kind: DetectorKind,
    /// Validation F-score; the most accurate detector gets priority in fusion.
    pub accuracy: f64,
    /// `host:port` of an external detector service.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<f64>,
}

impl DetectorSpec {
    pub fn builtin() -> Self {
        Self {
            model_id: "reference".into(),
            kind: DetectorKind::Builtin,
            accuracy: 0.5,
            endpoint: None,
            timeout_secs: None,
        }
    }

    pub fn external(model_id: impl Into<String>, endpoint: impl Into<String>, accuracy: f64) -> Self {
        Self {
            model_id: model_id.into(),
            kind: DetectorKind::External,
            accuracy,
            endpoint: Some(endpoint.into()),
            timeout_secs: None,
        }
    }

    pub fn descriptor(&self) -> DetectorDescriptor {
        DetectorDescriptor::new(self.model_id.clone(), self.accuracy, self.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub cell_size: usize,
    pub dilation: DilationConfig,
    pub filterbank: FilterBankConfig,
    pub features_from: FeatureSource,
    pub connectivity: Connectivity,
    pub distance_normalization: DistanceNormalization,
    /// Fixed number of classes. Mutually exclusive with `k_range`.
    pub k: Option<usize>,
    /// Inclusive range searched by BIC when set.
    pub k_range: Option<[usize; 2]>,
    pub beta: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub max_sweeps: usize,
    /// Pixels added around each segment's bounding box before cropping.
    pub padding: usize,
    pub entropy_threshold: f64,
    pub ensemble: EnsembleConfig,
    /// Also run every detector on the whole image.
    pub include_full_image: bool,
    /// Discard detections touching a crop edge inside the image.
    pub drop_truncated: bool,
    pub detectors: Vec<DetectorSpec>,
    pub reference: ReferenceParams,
    pub match_iou: f64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cell_size: DEFAULT_CELL_SIZE,
            dilation: DilationConfig::default(),
            filterbank: FilterBankConfig::default(),
            features_from: FeatureSource::default(),
            connectivity: Connectivity::default(),
            distance_normalization: DistanceNormalization::default(),
            k: None,
            k_range: None,
            beta: DEFAULT_BETA,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
            max_sweeps: DEFAULT_MAX_SWEEPS,
            padding: DEFAULT_PADDING,
            entropy_threshold: DEFAULT_ENTROPY_THRESHOLD,
            ensemble: EnsembleConfig::default(),
            include_full_image: false,
            drop_truncated: true,
            detectors: vec![DetectorSpec::builtin()],
            reference: ReferenceParams::default(),
            match_iou: DEFAULT_MATCH_IOU,
            workers: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        self.ensemble.validate()?;
        if self.cell_size < 2 {
            return bad(format!("cell_size must be >= 2, got {}", self.cell_size));
        }
        if self.dilation.radius == 0 || !(self.dilation.sigma > 0.0) {
            return bad("dilation radius and sigma must be positive".into());
        }
        if self.k.is_some() && self.k_range.is_some() {
            return bad("set either k or k_range, not both".into());
        }
        if self.k == Some(0) {
            return bad("k must be >= 1".into());
        }
        if let Some([lo, hi]) = self.k_range {
            if lo == 0 || lo > hi {
                return bad(format!("k_range [{lo}, {hi}] is empty or starts at 0"));
            }
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return bad(format!("beta must be a finite value >= 0, got {}", self.beta));
        }
        for (name, v) in [("entropy_threshold", self.entropy_threshold / 8.0), ("match_iou", self.match_iou)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} is out of range"));
            }
        }
        if self.detectors.is_empty() {
            return bad("at least one detector is required".into());
        }
        let mut ids: Vec<&str> = self.detectors.iter().map(|d| d.model_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("detector model ids must be unique".into());
        }
        for d in &self.detectors {
            if !(0.0..=1.0).contains(&d.accuracy) {
                return bad(format!("accuracy of {} is outside [0, 1]", d.model_id));
            }
            if d.kind == DetectorKind::External && d.endpoint.is_none() {
                return bad(format!("external detector {} has no endpoint", d.model_id));
            }
        }
        Ok(())
    }

    pub fn dilation_kernel(&self) -> Result<DilationKernel> {
        DilationKernel::gaussian(self.dilation.radius, self.dilation.sigma)
    }

    pub fn filter_bank(&self) -> Result<FilterBank> {
        build_lm_filterbank(self.filterbank.support, self.filterbank.deriv_scales)
    }

    /// Instantiates the detector roster.
    pub fn members(&self) -> Result<Vec<EnsembleMember>> {
        self.detectors
            .iter()
            .map(|spec| {
                let detector: Arc<dyn crate::detection::Detector> = match spec.kind {
                    DetectorKind::Builtin => Arc::new(ReferenceDetector::new(self.reference)),
                    DetectorKind::External => {
                        let endpoint = spec.endpoint.clone().ok_or_else(|| {
                            Error::InvalidConfig(format!("external detector {} has no endpoint", spec.model_id))
                        })?;
                        let mut det = ExternalDetector::new(endpoint);
                        if let Some(t) = spec.timeout_secs {
                            det = det.with_timeout(Duration::from_secs_f64(t));
                        }
                        Arc::new(det)
                    }
                };
                Ok(EnsembleMember::new(detector, spec.descriptor()))
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SegmentationOutput {
    pub grid: SuperPixelGrid,
    /// Standardized features the mixture was fitted on.
    pub features: SuperPixelFeatures,
    pub graph: Option<AdjacencyGraph>,
    /// Final class of every cell.
    pub labels: Vec<usize>,
    pub k: usize,
    pub em_iterations: usize,
    pub em_converged: bool,
    pub icm_sweeps: usize,
    pub segments: SegmentSet,
}

/// Holds the dilation kernel and filter bank so they are built once per
/// configuration rather than once per image.
pub struct Segmenter {
    config: PipelineConfig,
    kernel: DilationKernel,
    bank: FilterBank,
}

impl Segmenter {
    pub fn new(config: &PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            kernel: config.dilation_kernel()?,
            bank: config.filter_bank()?,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// Color and texture features of every cell, before standardization.
    pub fn raw_features(&self, img: &RasterImage, grid: &SuperPixelGrid) -> Result<SuperPixelFeatures> {
        let dilated;
        let source = match self.config.features_from {
            FeatureSource::Dilated => {
                dilated = dilate(img, &self.kernel)?;
                &dilated
            }
            FeatureSource::Original => img,
        };
        let channels: Vec<GrayImage> = (0..source.channels()).map(|c| source.channel(c)).collect();
        let refs: Vec<&GrayImage> = channels.iter().collect();
        let convolver = BankConvolver::new(&self.bank, img.width(), img.height())?;
        let stacks = convolver.pooled(&refs)?;
        compute_features(source, &stacks, grid)
    }

    pub fn segment(&self, img: &RasterImage) -> Result<SegmentationOutput> {
        let cfg = &self.config;
        let grid = partition(img.width(), img.height(), cfg.cell_size)?;
        let (features, _) = standardize(&self.raw_features(img, &grid)?)?;

        if grid.len() < 2 {
            let labels = vec![0; grid.len()];
            let segments = merge_segments(&labels, &grid, cfg.padding);
            return Ok(SegmentationOutput {
                grid,
                features,
                graph: None,
                labels,
                k: 1,
                em_iterations: 0,
                em_converged: true,
                icm_sweeps: 0,
                segments,
            });
        }
        let graph = build_adjacency(&grid, &features, cfg.connectivity, cfg.distance_normalization)?;
        let k = match (cfg.k, cfg.k_range) {
            (_, Some([lo, hi])) => select_k(&features, lo..=hi.min(grid.len()), cfg.seed)?,
            (Some(k), None) => k,
            (None, None) => DEFAULT_K.min(grid.len()),
        };
        let opts = EmOptions {
            k,
            beta: cfg.beta,
            max_iter: cfg.max_iter,
            tol: cfg.tol,
            seed: cfg.seed,
        };
        let fit = em_fit(&features, Some(&graph), &opts)?;
        let icm = map_labels(&fit.params, &features, &graph, cfg.beta, cfg.max_sweeps, Some(&fit.labels))?;
        let labels = icm.labels.labels().to_vec();
        let segments = merge_segments(&labels, &grid, cfg.padding);
        log::debug!(
            "segmented {}x{}: k={k}, {} EM iterations, {} ICM sweeps, {} segments",
            img.width(),
            img.height(),
            fit.iterations,
            icm.sweeps,
            segments.len()
        );
        Ok(SegmentationOutput {
            grid,
            features,
            graph: Some(graph),
            labels,
            k,
            em_iterations: fit.iterations,
            em_converged: fit.converged,
            icm_sweeps: icm.sweeps,
            segments,
        })
    }
}

pub fn segment_image(img: &RasterImage, config: &PipelineConfig) -> Result<SegmentationOutput> {
    Segmenter::new(config)?.segment(img)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub entropy: f64,
    pub class: EntropyClass,
    pub threshold: f64,
}

pub fn entropy_report(img: &RasterImage, threshold: f64) -> Result<EntropyReport> {
    let entropy = shannon_entropy(&to_grayscale(img)?);
    Ok(EntropyReport {
        entropy,
        class: classify_entropy(entropy, threshold),
        threshold,
    })
}

#[derive(Debug, Clone)]
pub struct DetectionOutput {
    pub entropy: EntropyReport,
    pub segmentation: SegmentationOutput,
    /// The crops the detectors ran on, including the whole-image crop when
    /// requested.
    pub crops: SegmentSet,
    pub ensemble: EnsembleOutput,
}

/// Segments `img` and runs the ensemble on every segment crop.
pub fn detect_image(img: &RasterImage, segmenter: &Segmenter, members: &[EnsembleMember]) -> Result<DetectionOutput> {
    let cfg = segmenter.config();
    let entropy = entropy_report(img, cfg.entropy_threshold)?;
    let segmentation = segmenter.segment(img)?;
    let mut crops = segmentation.segments.clone();
    if cfg.include_full_image {
        crops.segments.push(Segment {
            label: segmentation.k,
            cells: Vec::new(),
            bbox: PixelRect {
                x0: 0,
                y0: 0,
                x1: img.width(),
                y1: img.height(),
            },
        });
    }
    let policy = CropPolicy {
        drop_truncated: cfg.drop_truncated,
        truncation_margin: CropPolicy::DEFAULT_MARGIN,
    };
    let ensemble = run_ensemble_with(img, &crops, members, &cfg.ensemble, &policy)?;
    Ok(DetectionOutput {
        entropy,
        segmentation,
        crops,
        ensemble,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_documented_values() {
        let c = PipelineConfig::default();
        assert_eq!(c.ensemble, EnsembleConfig { p_th: 0.9, p_tl: 0.8, nms_threshold: 0.95 });
        assert_eq!(c.entropy_threshold, 6.5);
        assert_eq!(c.cell_size, 16);
        assert_eq!((c.dilation.sigma, c.dilation.radius), (2.0, 5));
        assert_eq!(c.padding, 8);
        assert_eq!(c.beta, 1.0);
        assert!(!c.include_full_image);
        c.validate().unwrap();
    }

    #[test]
    fn toml_roundtrip_and_partial_files() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
        let partial = PipelineConfig::from_toml("seed = 7\nk = 2\n[ensemble]\np_th = 0.95\n").unwrap();
        assert_eq!((partial.seed, partial.k, partial.ensemble.p_th), (7, Some(2), 0.95));
        assert_eq!(partial.ensemble.p_tl, 0.8);
        let roster = PipelineConfig::from_toml(
            "[[detectors]]\nmodel_id = \"tb\"\nkind = \"external\"\naccuracy = 0.8\nendpoint = \"127.0.0.1:9000\"\n",
        )
        .unwrap();
        assert_eq!(roster.detectors.len(), 1);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for text in [
            "k = 2\nk_range = [2, 4]",
            "bogus = 1",
            "beta = -1.0",
            "[ensemble]\np_th = 0.5",
            "[[detectors]]\nmodel_id = \"x\"\nkind = \"external\"\naccuracy = 0.5",
            "cell_size = 1",
        ] {
            assert!(PipelineConfig::from_toml(text).is_err(), "{text}");
        }
    }

    #[test]
    fn single_class_gives_one_segment() {
        let mut img = RasterImage::filled(64, 64, 3, 0.3).unwrap();
        for y in 0..64 {
            for x in 32..64 {
                img.set(x, y, 1, 0.9);
            }
        }
        let cfg = PipelineConfig { k: Some(1), ..Default::default() };
        let out = segment_image(&img, &cfg).unwrap();
        assert_eq!(out.segments.len(), 1);
        assert_eq!(out.segments.segments[0].bbox, PixelRect { x0: 0, y0: 0, x1: 64, y1: 64 });
    }

    #[test]
    fn flat_and_checkerboard_halves_split() {
        let img = crate::synth::half_flat_checkerboard(128, 8);
        let cfg = PipelineConfig { k: Some(2), ..Default::default() };
        let out = segment_image(&img, &cfg).unwrap();
        let left = out.labels[0];
        for c in 0..out.grid.len() {
            let on_left = out.grid.position(c).1 < out.grid.cols() / 2;
            assert_eq!(on_left, out.labels[c] == left, "cell {c}: {:?}", out.labels);
        }
    }

}
