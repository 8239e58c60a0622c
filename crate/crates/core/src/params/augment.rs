//! Growing an estimator training set by decoding interpolated latents.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::extract::{extract_params, ExtractionConfig};
use super::GeomParams;
use crate::autodecoder::{decode_to_mesh, default_decode_grid, DecoderWeights, LatentVector};
use crate::error::{invalid, Error, Result};
use crate::geometry::GridSpec;

/// `(1 - alpha) a + alpha b`.
pub fn interpolate_latents(a: &LatentVector, b: &LatentVector, alpha: f64) -> Result<LatentVector> {
    if a.dim() != b.dim() {
        return Err(invalid(format!(
            "latent dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(LatentVector(
        a.0.iter()
            .zip(&b.0)
            .map(|(x, y)| (1.0 - alpha) * x + alpha * y)
            .collect(),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub target_count: usize,
    pub seed: u64,
    pub grid: GridSpec,
    pub extraction: ExtractionConfig,
}

impl AugmentConfig {
    pub fn new(target_count: usize, seed: u64) -> Self {
        let grid = default_decode_grid();
        Self {
            target_count,
            seed,
            extraction: ExtractionConfig::for_grid(grid.cell_size()),
            grid,
        }
    }
}

/// Records plus bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct Augmented {
    pub records: Vec<(LatentVector, GeomParams)>,
    pub attempts: usize,
    pub failures: usize,
}

/// Candidates decoded per parallel round.
const ROUND: usize = 32;
/// Attempts after which a low success rate aborts the run.
const MIN_ATTEMPTS_FOR_RATE: usize = 16;

/// Decode and measure one latent; `None` if the mesh is unusable.
pub fn measure_latent(
    weights: &DecoderWeights,
    z: &LatentVector,
    grid: &GridSpec,
    cfg: &ExtractionConfig,
) -> Result<Option<GeomParams>> {
    let iso = decode_to_mesh(weights, z, grid)?;
    if iso.mesh.is_empty() || iso.touches_boundary {
        return Ok(None);
    }
    match extract_params(&iso.mesh, cfg) {
        Ok((p, _)) => Ok(Some(p)),
        Err(Error::ExtractionFailure(_) | Error::DegenerateGeometry(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Measure the base latents, then add interpolations between random pairs
/// until `target_count` records exist. Deterministic for a given seed
/// regardless of thread count.
pub fn augment_dataset(
    latents: &[LatentVector],
    weights: &DecoderWeights,
    config: &AugmentConfig,
) -> Result<Augmented> {
    if latents.len() < 2 {
        return Err(invalid(format!(
            "augmentation needs at least 2 base latents, got {}",
            latents.len()
        )));
    }
    config.grid.validate()?;
    config.extraction.validate()?;
    let measure = |z: &LatentVector| measure_latent(weights, z, &config.grid, &config.extraction);

    let mut out = Augmented {
        records: Vec::with_capacity(config.target_count),
        attempts: 0,
        failures: 0,
    };
    let push = |out: &mut Augmented, z: LatentVector, p: Option<GeomParams>| {
        out.attempts += 1;
        match p {
            Some(p) if out.records.len() < config.target_count => out.records.push((z, p)),
            Some(_) => {}
            None => out.failures += 1,
        }
    };

    let base: Vec<Option<GeomParams>> = latents.par_iter().map(measure).collect::<Result<_>>()?;
    for (z, p) in latents.iter().zip(base) {
        push(&mut out, z.clone(), p);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    while out.records.len() < config.target_count {
        if out.attempts >= MIN_ATTEMPTS_FOR_RATE && out.failures * 2 > out.attempts {
            return Err(Error::ExtractionFailure(format!(
                "augmentation success rate {}/{} is below 50%; decoder or extractor is broken",
                out.attempts - out.failures,
                out.attempts
            )));
        }
        let candidates = (0..ROUND)
            .map(|_| {
                let i = rng.random_range(0..latents.len());
                let mut j = rng.random_range(0..latents.len() - 1);
                if j >= i {
                    j += 1;
                }
                let alpha = loop {
                    let a: f64 = rng.random();
                    if a > 0.0 {
                        break a;
                    }
                };
                interpolate_latents(&latents[i], &latents[j], alpha)
            })
            .collect::<Result<Vec<_>>>()?;
        let measured: Vec<Option<GeomParams>> =
            candidates.par_iter().map(measure).collect::<Result<_>>()?;
        for (z, p) in candidates.into_iter().zip(measured) {
            if out.records.len() >= config.target_count {
                break;
            }
            push(&mut out, z, p);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints_and_midpoint() {
        let a = LatentVector(vec![1.0, 0.0]);
        let b = LatentVector(vec![0.0, 1.0]);
        assert_eq!(interpolate_latents(&a, &b, 0.0).unwrap(), a);
        assert_eq!(interpolate_latents(&a, &b, 1.0).unwrap(), b);
        assert_eq!(
            interpolate_latents(&a, &b, 0.5).unwrap(),
            LatentVector(vec![0.5, 0.5])
        );
        assert!(interpolate_latents(&a, &LatentVector(vec![0.0]), 0.5).is_err());
    }

    proptest! {
        #[test]
        fn interpolation_stays_in_ball(
            a in proptest::collection::vec(-3.0..3.0f64, 6),
            b in proptest::collection::vec(-3.0..3.0f64, 6),
            alpha in 0.0..=1.0f64,
        ) {
            let (a, b) = (LatentVector(a), LatentVector(b));
            let r = interpolate_latents(&a, &b, alpha).unwrap();
            prop_assert!(r.norm() <= a.norm().max(b.norm()) + 1e-12);
        }
    }

    #[test]
    fn single_base_latent_rejected() {
        let w = DecoderWeights::<f32>::zeros(crate::nn::Architecture {
            input_dim: 5,
            hidden: vec![4],
            output_dim: 1,
            skip_layer: None,
            activation: crate::nn::Activation::Relu,
        })
        .unwrap();
        let cfg = AugmentConfig::new(10, 0);
        assert!(augment_dataset(&[LatentVector(vec![0.0; 2])], &w, &cfg).is_err());
    }
}
