//! Novelty detection: the trained feature-to-density chain, the
//! extreme-value threshold, per-simulation voting and evaluation metrics.
//!
//! Training fits, in order, a min-max normalizer, PCA with `q` components,
//! kurtosis ICA on the component scores and one KDME marginal per
//! independent component. The joint density of a segment is the product of
//! the marginals. The novelty threshold is the median of block minima of the
//! training densities.

mod report;

pub use report::{DetectionReport, SegmentScore, SimulationVerdict};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::decomposition::{pca_fit, robust_ica_fit, IcaConfig, IcaModel, PcaModel};
use crate::error::{invalid, Error, Result};
use crate::features::{build_feature_vector, AccelSegment, EtaGrid, FeatureVector, Normalizer};
use crate::kdme::{fit_kdme, KdmeConfig, KdmeModel};
use crate::linalg::rows_to_matrix;
use crate::persist::{decode_envelope, encode_envelope};
use crate::seed::derive_seed;

/// Identifier and version of the model file format.
pub const MODEL_FORMAT: &str = "shm-kdme-novelty-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Retained principal / independent components.
    pub q: usize,
    pub block_window: usize,
    pub kdme: KdmeConfig,
    pub ica: IcaConfig,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            q: 4,
            block_window: 30,
            kdme: KdmeConfig::default(),
            ica: IcaConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub q: usize,
    pub eta_grid: EtaGrid,
    pub segment_seconds: f64,
    pub training_segments: usize,
    pub block_window: usize,
    pub seed: u64,
    /// SHA-256 of the run configuration that produced the model, if any.
    #[serde(default)]
    pub config_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoveltyModel {
    pub metadata: ModelMetadata,
    pub normalizer: Normalizer,
    pub pca: PcaModel,
    pub ica: IcaModel,
    pub marginals: Vec<KdmeModel>,
    pub threshold: f64,
    /// Joint densities of the training segments, in training order.
    pub training_densities: Vec<f64>,
}

/// Median of a non-empty slice (mean of the central pair for even length).
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(invalid("median of an empty sequence"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Median of the minima of consecutive `window`-sized blocks of `densities`;
/// a trailing partial block is dropped.
pub fn block_minima_threshold(densities: &[f64], window: usize) -> Result<f64> {
    if window == 0 {
        return Err(invalid("block window must be positive"));
    }
    if densities.len() < window {
        return Err(invalid(format!(
            "{} densities are fewer than the block window {window}",
            densities.len()
        )));
    }
    let minima: Vec<f64> = densities
        .chunks_exact(window)
        .map(|b| b.iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    median(&minima)
}

/// Independent-component coordinates of one feature vector.
fn components(model: &NoveltyModel, features: &FeatureVector) -> Result<Vec<f64>> {
    let normalized = model.normalizer.apply(features)?;
    let scores = model.pca.transform(normalized.as_slice())?;
    model.ica.transform(&scores)
}

impl NoveltyModel {
    pub fn q(&self) -> usize {
        self.metadata.q
    }

    /// `Σ_k ln f_k(s_k)`; `-inf` when any marginal underflows.
    pub fn log_joint_density(&self, features: &FeatureVector) -> Result<f64> {
        let s = components(self, features)?;
        Ok(s.iter().zip(&self.marginals).map(|(v, m)| m.pdf(*v).ln()).sum())
    }

    /// Product of the marginal densities, computed in log space.
    pub fn joint_density(&self, features: &FeatureVector) -> Result<f64> {
        Ok(self.log_joint_density(features)?.exp())
    }

    /// Density and novelty flag (`density < threshold`).
    pub fn classify(&self, features: &FeatureVector) -> Result<(f64, bool)> {
        let d = self.joint_density(features)?;
        Ok((d, is_novel(d, self.threshold)))
    }

    /// Features of a raw segment with this model's `η` grid.
    pub fn features(&self, segment: &AccelSegment) -> Result<FeatureVector> {
        let expected = self.metadata.segment_seconds;
        if (segment.duration() - expected).abs() > 1e-6 * expected {
            return Err(invalid(format!(
                "segment lasts {} s but the model was trained on {expected} s segments",
                segment.duration()
            )));
        }
        build_feature_vector(segment, &self.metadata.eta_grid)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode_envelope(MODEL_FORMAT, MODEL_FORMAT_VERSION, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let model: NoveltyModel = decode_envelope(MODEL_FORMAT, MODEL_FORMAT_VERSION, bytes)?;
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let q = self.metadata.q;
        let d = self.normalizer.dim();
        if self.pca.dim() != d || d != 4 * self.metadata.eta_grid.len() {
            return Err(Error::Format(format!(
                "feature dimension mismatch: normalizer {d}, PCA {}, grid {}",
                self.pca.dim(),
                self.metadata.eta_grid.len()
            )));
        }
        if self.pca.components() != q
            || self.ica.components() != q
            || self.ica.whitening.means.len() != q
            || self.marginals.len() != q
        {
            return Err(Error::Format(format!("component count is not {q} throughout the model")));
        }
        if !(self.threshold > 0.0) || !self.threshold.is_finite() {
            return Err(Error::Format(format!("threshold {} is not positive", self.threshold)));
        }
        for m in &self.marginals {
            m.validate()?;
        }
        Ok(())
    }
}

pub fn is_novel(density: f64, threshold: f64) -> bool {
    density < threshold
}

pub fn joint_density(model: &NoveltyModel, features: &FeatureVector) -> Result<f64> {
    model.joint_density(features)
}

pub fn classify_segment(model: &NoveltyModel, features: &FeatureVector) -> Result<(f64, bool)> {
    model.classify(features)
}

/// Trains on raw segments, computing features with `eta_grid`.
pub fn train(segments: &[AccelSegment], eta_grid: &EtaGrid, config: &DetectorConfig) -> Result<NoveltyModel> {
    let Some(first) = segments.first() else {
        return Err(invalid("no training segments"));
    };
    let seconds = first.duration();
    if let Some(s) = segments.iter().find(|s| (s.duration() - seconds).abs() > 1e-9 * seconds) {
        return Err(invalid(format!(
            "training segments differ in length ({} s and {} s)",
            seconds,
            s.duration()
        )));
    }
    let features = segments
        .par_iter()
        .map(|s| build_feature_vector(s, eta_grid))
        .collect::<Result<Vec<_>>>()?;
    train_on_features(&features, eta_grid, seconds, config)
}

/// Trains on precomputed feature vectors (in training order).
pub fn train_on_features(
    features: &[FeatureVector],
    eta_grid: &EtaGrid,
    segment_seconds: f64,
    config: &DetectorConfig,
) -> Result<NoveltyModel> {
    let n = features.len();
    if config.block_window == 0 {
        return Err(invalid("block window must be positive"));
    }
    if n < 2 * config.block_window {
        return Err(invalid(format!(
            "{n} training segments; at least {} (twice the block window) are needed",
            2 * config.block_window
        )));
    }
    let d = 4 * eta_grid.len();
    if let Some((i, f)) = features.iter().enumerate().find(|(_, f)| f.len() != d) {
        return Err(invalid(format!("training vector {i} has dimension {}, expected {d}", f.len())));
    }
    let max_q = (n - 1).min(d);
    if config.q == 0 || config.q > max_q {
        return Err(invalid(format!(
            "q = {} is not feasible; it must be in 1..={max_q} for {n} segments of dimension {d}",
            config.q
        )));
    }

    let normalizer = Normalizer::fit(features)?;
    let normalized: Vec<Vec<f64>> = features
        .iter()
        .map(|f| normalizer.apply(f).map(|v| v.0))
        .collect::<Result<_>>()?;
    let pca = pca_fit(&rows_to_matrix(&normalized), config.q)?;
    let scores = pca.transform_matrix(&rows_to_matrix(&normalized))?;
    let ica_config = IcaConfig {
        seed: derive_seed(config.seed, 1),
        ..config.ica
    };
    let ica = robust_ica_fit(&scores, &ica_config)?;
    if !ica.all_converged() {
        log::warn!("ICA did not converge for every component: {:?}", ica.converged);
    }
    let sources: Vec<Vec<f64>> = (0..n)
        .map(|i| ica.transform(&scores.row(i).iter().copied().collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    let columns = DMatrix::from_fn(n, config.q, |i, k| sources[i][k]);
    let marginals = (0..config.q)
        .map(|k| {
            let kdme = KdmeConfig {
                seed: derive_seed(config.seed, 100 + k as u64),
                ..config.kdme.clone()
            };
            let column: Vec<f64> = columns.column(k).iter().copied().collect();
            fit_kdme(&column, &kdme)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut model = NoveltyModel {
        metadata: ModelMetadata {
            q: config.q,
            eta_grid: eta_grid.clone(),
            segment_seconds,
            training_segments: n,
            block_window: config.block_window,
            seed: config.seed,
            config_sha256: None,
        },
        normalizer,
        pca,
        ica,
        marginals,
        threshold: 0.0,
        training_densities: Vec::new(),
    };
    let densities = features
        .iter()
        .map(|f| model.joint_density(f))
        .collect::<Result<Vec<_>>>()?;
    let threshold = block_minima_threshold(&densities, config.block_window)?;
    if !(threshold > 0.0) {
        return Err(Error::Numerical(format!(
            "novelty threshold {threshold:e} is not positive; training densities underflow"
        )));
    }
    model.threshold = threshold;
    model.training_densities = densities;
    Ok(model)
}

/// Outcome of majority voting over one simulation's segments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub damaged: bool,
    pub novel_segments: usize,
    pub segments: usize,
    pub median_density: f64,
}

/// Damaged when at least half the segments (rounded up) are novel.
pub fn vote_simulation(flags: &[bool], densities: &[f64]) -> Result<Vote> {
    if flags.is_empty() {
        return Err(invalid("cannot vote on a simulation without segments"));
    }
    if flags.len() != densities.len() {
        return Err(invalid("segment flags and densities differ in length"));
    }
    let novel = flags.iter().filter(|f| **f).count();
    Ok(Vote {
        damaged: novel >= flags.len().div_ceil(2),
        novel_segments: novel,
        segments: flags.len(),
        median_density: median(densities)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tn: usize,
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
}

impl Confusion {
    /// Counts from `(predicted damaged, actually damaged)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = Confusion {
            tn: 0,
            tp: 0,
            fn_: 0,
            fp: 0,
        };
        for (pred, truth) in pairs {
            match (pred, truth) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
                (true, false) => c.fp += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tn + self.tp + self.fn_ + self.fp
    }
}

/// Evaluation metrics; ratios with a zero denominator are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
}

pub fn compute_metrics(c: &Confusion) -> Result<Metrics> {
    let total = c.total();
    if total == 0 {
        return Err(invalid("metrics need at least one simulation"));
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let precision = ratio(c.tp, c.tp + c.fp);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Ok(Metrics {
        accuracy: (c.tn + c.tp) as f64 / total as f64,
        recall,
        precision,
        f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn threshold_examples() {
        let a: Vec<f64> = (1..=30).map(f64::from).collect();
        assert_eq!(block_minima_threshold(&a, 30).unwrap(), 1.0);
        let b: Vec<f64> = (1..=60).map(f64::from).collect();
        assert_eq!(block_minima_threshold(&b, 30).unwrap(), 16.0);
        // Trailing partial block is ignored.
        let mut c = b.clone();
        c.extend([0.0; 29]);
        assert_eq!(block_minima_threshold(&c, 30).unwrap(), 16.0);
        assert!(block_minima_threshold(&a[..29], 30).is_err());
        assert!(block_minima_threshold(&a, 0).is_err());
    }

    /// Independent re-implementation: explicit index loops and selection.
    fn brute_force_threshold(d: &[f64], w: usize) -> f64 {
        let blocks = d.len() / w;
        let mut minima = Vec::new();
        for b in 0..blocks {
            let mut m = d[b * w];
            for i in 1..w {
                if d[b * w + i] < m {
                    m = d[b * w + i];
                }
            }
            minima.push(m);
        }
        let mut sorted = Vec::new();
        while !minima.is_empty() {
            let (i, _) = minima
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
            sorted.push(minima.remove(i));
        }
        let k = sorted.len();
        if k % 2 == 1 {
            sorted[k / 2]
        } else {
            (sorted[k / 2 - 1] + sorted[k / 2]) / 2.0
        }
    }

    #[test]
    fn threshold_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [300, 310, 330] {
            let d: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            assert_eq!(block_minima_threshold(&d, 30).unwrap(), brute_force_threshold(&d, 30));
        }
    }

    #[test]
    fn novelty_boundary() {
        assert!(!is_novel(1e-5, 1e-5));
        assert!(is_novel(0.0, 1e-5));
        assert!(is_novel(0.99e-5, 1e-5));
    }

    #[test]
    fn voting_examples() {
        let d = vec![1.0; 10];
        let flags = |k: usize| (0..10).map(|i| i < k).collect::<Vec<_>>();
        assert!(vote_simulation(&flags(6), &d).unwrap().damaged);
        assert!(vote_simulation(&flags(5), &d).unwrap().damaged);
        assert!(!vote_simulation(&flags(4), &d).unwrap().damaged);
        assert!(!vote_simulation(&flags(0), &d).unwrap().damaged);
        assert!(vote_simulation(&[true], &[0.3]).unwrap().damaged);
        let v = vote_simulation(&[false, true, false], &[3.0, 1.0, 2.0]).unwrap();
        assert!(!v.damaged);
        assert_eq!(v.median_density, 2.0);
        assert!(vote_simulation(&[], &[]).is_err());
    }

    fn confusion(tn: usize, tp: usize, fn_: usize, fp: usize) -> Confusion {
        Confusion { tn, tp, fn_, fp }
    }

    #[test]
    fn metric_examples() {
        let m = compute_metrics(&confusion(22, 72, 6, 0)).unwrap();
        assert!((m.accuracy - 0.94).abs() < 5e-4);
        assert!((m.recall.unwrap() - 0.923).abs() < 5e-4);
        assert_eq!(m.precision, Some(1.0));
        assert!((m.f1.unwrap() - 0.96).abs() < 5e-4);
        let m = compute_metrics(&confusion(22, 54, 24, 0)).unwrap();
        assert!((m.accuracy - 0.76).abs() < 5e-4);
        assert!((m.recall.unwrap() - 0.692).abs() < 5e-4);
        assert!((m.f1.unwrap() - 0.818).abs() < 5e-4);
        let m = compute_metrics(&confusion(22, 0, 78, 0)).unwrap();
        assert!((m.accuracy - 0.22).abs() < 1e-12);
        assert_eq!(m.recall, Some(0.0));
        assert_eq!(m.precision, None);
        assert_eq!(m.f1, None);
        assert!(compute_metrics(&confusion(0, 0, 0, 0)).is_err());
        let c = Confusion::from_pairs([(true, true), (false, true), (true, false), (false, false), (false, false)]);
        assert_eq!(c, confusion(2, 1, 1, 1));
    }

    proptest! {
        #[test]
        fn metrics_are_bounded(tn in 0usize..50, tp in 0usize..50, fn_ in 0usize..50, fp in 0usize..50) {
            prop_assume!(tn + tp + fn_ + fp > 0);
            let m = compute_metrics(&confusion(tn, tp, fn_, fp)).unwrap();
            for v in [Some(m.accuracy), m.recall, m.precision, m.f1].into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn threshold_is_a_minimum_or_midpoint(d in prop::collection::vec(0.0f64..1.0, 30..200), w in 1usize..30) {
            let t = block_minima_threshold(&d, w).unwrap();
            let minima: Vec<f64> = d.chunks_exact(w).map(|b| b.iter().copied().fold(f64::INFINITY, f64::min)).collect();
            let hit = minima.contains(&t)
                || minima.iter().any(|a| minima.iter().any(|b| 0.5 * (a + b) == t));
            prop_assert!(hit);
        }

        #[test]
        fn lowering_density_keeps_novelty(d in 0.0f64..1.0, t in 0.0f64..1.0, f in 0.0f64..1.0) {
            if is_novel(d, t) {
                prop_assert!(is_novel(d * f, t));
            }
        }
    }
}
