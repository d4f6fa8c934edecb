use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use shm_kdme_core::detector::{train, train_on_features, DetectorConfig, NoveltyModel};
use shm_kdme_core::features::{segment_record, EtaGrid, FeatureVector};
use shm_kdme_core::kdme::KdmeConfig;
use shm_kdme_core::synth::{generate_training, DatasetConfig};
use shm_kdme_core::Error;

/// Feature vectors driven by three latent factors plus small noise.
fn latent_features(n: usize, grid: &EtaGrid, seed: u64) -> Vec<FeatureVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let d = 4 * grid.len();
    let loadings: Vec<[f64; 3]> = (0..d)
        .map(|j| {
            let t = j as f64 / d as f64;
            [1.0 + t, (6.0 * t).sin(), (t - 0.5).powi(2)]
        })
        .collect();
    (0..n)
        .map(|_| {
            let z: [f64; 3] = [normal.sample(&mut rng), normal.sample(&mut rng).exp(), normal.sample(&mut rng)];
            FeatureVector(
                loadings
                    .iter()
                    .map(|l| 10.0 + l[0] * z[0] + l[1] * z[1] + l[2] * z[2] + 0.01 * normal.sample(&mut rng))
                    .collect(),
            )
        })
        .collect()
}

fn fast_config(q: usize) -> DetectorConfig {
    DetectorConfig {
        q,
        block_window: 10,
        kdme: KdmeConfig {
            n_eval: 400,
            bo_budget: 20,
            acquisition_starts: 16,
            m_range: vec![1, 2],
            ..Default::default()
        },
        seed: 3,
        ..Default::default()
    }
}

fn grid() -> EtaGrid {
    EtaGrid::arithmetic(0.5, 4).unwrap()
}

#[test]
fn joint_density_equals_product_of_marginals() {
    let g = grid();
    let feats = latent_features(200, &g, 1);
    let model = train_on_features(&feats, &g, 60.0, &fast_config(3)).unwrap();
    for f in feats.iter().take(20) {
        let normalized = model.normalizer.apply(f).unwrap();
        let scores = model.pca.transform(normalized.as_slice()).unwrap();
        let sources = model.ica.transform(&scores).unwrap();
        let direct: f64 = sources.iter().zip(&model.marginals).map(|(s, m)| m.pdf(*s)).product();
        let joint = model.joint_density(f).unwrap();
        assert!((joint - direct).abs() <= 1e-10 * direct, "{joint} vs {direct}");
    }
}

#[test]
fn single_component_density_is_the_marginal() {
    let g = grid();
    let feats = latent_features(120, &g, 2);
    let model = train_on_features(&feats, &g, 60.0, &fast_config(1)).unwrap();
    for f in feats.iter().take(10) {
        let normalized = model.normalizer.apply(f).unwrap();
        let s = model.ica.transform(&model.pca.transform(normalized.as_slice()).unwrap()).unwrap();
        assert_eq!(model.joint_density(f).unwrap(), model.marginals[0].pdf(s[0]).ln().exp());
    }
}

#[test]
fn training_densities_and_threshold() {
    let g = grid();
    let feats = latent_features(200, &g, 3);
    let model = train_on_features(&feats, &g, 60.0, &fast_config(3)).unwrap();
    assert_eq!(model.training_densities.len(), 200);
    assert!(model.training_densities.iter().all(|d| d.is_finite() && *d > 0.0));
    let novel = model.training_densities.iter().filter(|d| **d < model.threshold).count();
    // The median of block minima sits in the low tail of the training densities.
    assert!(novel > 0 && novel < 40, "{novel}");

    let mut outlier = feats[0].clone();
    outlier.0.iter_mut().for_each(|v| *v += 25.0);
    let (density, is_novel) = model.classify(&outlier).unwrap();
    assert!(is_novel, "{density} vs {}", model.threshold);
}

#[test]
fn saved_model_reproduces_densities_exactly() {
    let g = grid();
    let feats = latent_features(150, &g, 4);
    let model = train_on_features(&feats, &g, 60.0, &fast_config(2)).unwrap();
    let dir = std::env::temp_dir().join(format!("shm-kdme-model-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.json");
    model.save(&path).unwrap();
    let loaded = NoveltyModel::load(&path).unwrap();
    std::fs::remove_dir_all(&dir).unwrap();
    assert_eq!(loaded, model);
    for f in &feats {
        let a = model.joint_density(f).unwrap();
        let b = loaded.joint_density(f).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs());
    }
}

#[test]
fn corrupted_or_foreign_model_files_are_rejected() {
    let g = grid();
    let feats = latent_features(100, &g, 5);
    let model = train_on_features(&feats, &g, 60.0, &fast_config(1)).unwrap();
    let bytes = model.to_bytes().unwrap();
    let text = String::from_utf8(bytes).unwrap();
    let bumped = text.replacen("\"format_version\":1", "\"format_version\":2", 1);
    assert!(matches!(NoveltyModel::from_bytes(bumped.as_bytes()), Err(Error::Format(_))));
    let tampered = text.replacen("\"block_window\":10", "\"block_window\":11", 1);
    assert!(matches!(NoveltyModel::from_bytes(tampered.as_bytes()), Err(Error::Format(_))));
}

#[test]
fn training_is_deterministic() {
    let g = grid();
    let feats = latent_features(100, &g, 6);
    let a = train_on_features(&feats, &g, 60.0, &fast_config(2)).unwrap();
    let b = train_on_features(&feats, &g, 60.0, &fast_config(2)).unwrap();
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
}

#[test]
fn infeasible_training_requests_fail_early() {
    let g = grid();
    let feats = latent_features(15, &g, 7);
    assert!(matches!(
        train_on_features(&feats, &g, 60.0, &fast_config(2)),
        Err(Error::InvalidInput(_))
    ));
    let feats = latent_features(40, &g, 7);
    assert!(matches!(
        train_on_features(&feats, &g, 60.0, &fast_config(17)),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn trains_on_simulated_ambient_segments() {
    let cfg = DatasetConfig {
        train_hours: 1.0,
        seed: 2,
        ..Default::default()
    };
    let mut segments = Vec::new();
    generate_training(&cfg, |block| {
        segments.extend(segment_record(&block.record, &format!("block_{}", block.index), 60.0)?);
        Ok(())
    })
    .unwrap();
    assert_eq!(segments.len(), 60);
    let model = train(&segments, &EtaGrid::default(), &fast_config(2)).unwrap();
    assert_eq!(model.metadata.training_segments, 60);
    assert!(model.training_densities.iter().all(|d| d.is_finite() && *d > 0.0));
    let f = model.features(&segments[0]).unwrap();
    assert_eq!(f.len(), 400);
}
