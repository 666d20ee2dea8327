//! Rejection reweighting of proposal samples under a feature-space density
//! estimate.

use rand::Rng;

use crate::data::{Provenance, SaSample};
use crate::error::Result;
use crate::kde::Kde;

/// Densities are floored here before inversion.
pub const KDE_FLOOR: f64 = 0.01;
/// The density estimate is fit on the last this-many proposals.
pub const KDE_REFERENCE_SIZE: usize = 10_000;

/// Default feature map: the state coordinates.
pub fn state_features(s: &SaSample) -> Vec<f64> {
    s.s.clone()
}

fn reference_kde(features: &[Vec<f64>], bandwidth: f64) -> Result<Kde<f64>> {
    let start = features.len().saturating_sub(KDE_REFERENCE_SIZE);
    Kde::fit(features[start..].to_vec(), bandwidth)
}

/// Keeps sample `i` with probability `min(1, score_i)` where scores are
/// proportional to `weight_i` and scaled so their mean is
/// `target_size / len`.
fn thin<R: Rng + ?Sized>(
    samples: &[SaSample],
    weights: &[f64],
    target_size: usize,
    provenance: Provenance,
    rng: &mut R,
) -> Vec<SaSample> {
    let mean = weights.iter().sum::<f64>() / weights.len() as f64;
    if !(mean > 0.0) {
        return Vec::new();
    }
    let scale = target_size as f64 / samples.len() as f64 / mean;
    samples
        .iter()
        .zip(weights)
        .filter(|(_, w)| rng.random::<f64>() < *w * scale)
        .map(|(s, _)| SaSample {
            provenance,
            ..s.clone()
        })
        .collect()
}

/// Thins `samples` toward a uniform density over their support in feature
/// space. Acceptance is proportional to `1 / max(kde(f(x)), KDE_FLOOR)`,
/// with an expected output size of about `target_size`.
pub fn reweight_uniform<R: Rng + ?Sized>(
    samples: &[SaSample],
    feature_map: &dyn Fn(&SaSample) -> Vec<f64>,
    bandwidth: f64,
    target_size: usize,
    rng: &mut R,
) -> Result<Vec<SaSample>> {
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    if target_size >= samples.len() {
        log::warn!(
            "uniform reweighting asked for {target_size} of {} samples; returning all",
            samples.len()
        );
        return Ok(samples
            .iter()
            .map(|s| SaSample {
                provenance: Provenance::MocodaU,
                ..s.clone()
            })
            .collect());
    }
    let features: Vec<Vec<f64>> = samples.iter().map(feature_map).collect();
    let kde = reference_kde(&features, bandwidth)?;
    let weights: Vec<f64> = features
        .iter()
        .map(|f| 1.0 / kde.density(f).max(KDE_FLOOR))
        .collect();
    Ok(thin(samples, &weights, target_size, Provenance::MocodaU, rng))
}

/// Thins `samples` toward `target_density` in feature space using the
/// ratio `target / max(kde, KDE_FLOOR)`. The output never leaves the input
/// support; a target that vanishes on every sample gives an empty result.
pub fn reweight_priority<R: Rng + ?Sized>(
    samples: &[SaSample],
    feature_map: &dyn Fn(&SaSample) -> Vec<f64>,
    target_density: &dyn Fn(&[f64]) -> f64,
    bandwidth: f64,
    target_size: usize,
    rng: &mut R,
) -> Result<Vec<SaSample>> {
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let features: Vec<Vec<f64>> = samples.iter().map(feature_map).collect();
    let kde = reference_kde(&features, bandwidth)?;
    let weights: Vec<f64> = features
        .iter()
        .map(|f| target_density(f).max(0.0) / kde.density(f).max(KDE_FLOOR))
        .collect();
    if weights.iter().all(|w| *w == 0.0) {
        log::warn!("priority target is zero on every sample; nothing accepted");
        return Ok(Vec::new());
    }
    Ok(thin(samples, &weights, target_size, Provenance::MocodaP, rng))
}
