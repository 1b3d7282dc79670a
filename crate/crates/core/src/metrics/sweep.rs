//! Recognizer training defaults and degradation sweeps used to validate the perception metric.

use crate::error::Result;
use crate::metrics::{m_pa, psnr, RecognitionModel, PEAK};
use crate::synth::{
    apply_fog, apply_mix, derive_seed, gen_scene, FogParams, RainParams, Scene, SnowParams,
    WeatherComponent,
};
use crate::tensor::Tensor;

pub const RECOGNIZER_SCENES: usize = 24;
pub const RECOGNIZER_EPOCHS: usize = 20;
pub const RECOGNIZER_LR: f64 = 1e-2;
/// Salt separating recognizer scenes from dataset scenes.
const RECOGNIZER_SALT: u64 = 0x5245_434F_0000_0000;
const SWEEP_SALT: u64 = 0x5357_4545_0000_0000;

/// Fog densities of the monotone check.
pub const FOG_SWEEP_BETAS: [f64; 5] = [0.0, 0.2, 0.4, 0.8, 1.6];
/// Intensity levels of the correlation sweep; level 0 is the clean scene.
pub const SWEEP_LEVELS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
pub const SWEEP_SCENES: usize = 5;

/// Scenes used to fit the recognizer, disjoint from dataset scene seeds.
pub fn recognizer_scenes(
    height: usize,
    width: usize,
    seed: u64,
    count: usize,
) -> Result<Vec<Scene>> {
    (0..count as u64)
        .map(|i| gen_scene(derive_seed(seed, RECOGNIZER_SALT + i), height, width))
        .collect()
}

/// Trains the recognizer with the default budget.
pub fn train_recognizer(height: usize, width: usize, seed: u64) -> Result<RecognitionModel> {
    let scenes = recognizer_scenes(height, width, seed, RECOGNIZER_SCENES)?;
    RecognitionModel::train(&scenes, RECOGNIZER_EPOCHS, RECOGNIZER_LR, seed)
}

/// Perception metric of `clean` fogged at each `beta` against itself.
pub fn fog_sweep(
    clean: &Tensor,
    betas: &[f64],
    r: &RecognitionModel,
    gamma: f64,
) -> Result<Vec<f64>> {
    betas
        .iter()
        .map(|&beta| {
            let fogged = apply_fog(
                clean,
                &FogParams {
                    beta,
                    airlight: [0.85; 3],
                },
                None,
            )?;
            Ok(m_pa(&fogged, clean, r, gamma)?.value)
        })
        .collect()
}

/// One degraded image of the correlation sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub scene: usize,
    pub level: f64,
    pub m_pa: f64,
    pub psnr: f64,
    /// `1 −` recognizer pixel accuracy against the true mask.
    pub pixel_error: f64,
}

/// Fog, rain and snow together, all scaled by `level` in `[0, 1]`.
pub fn sweep_degradation(img: &Tensor, level: f64, seed: u64) -> Result<Tensor> {
    if level == 0.0 {
        return Ok(img.clone());
    }
    let (_, h, _) = img.dims3()?;
    let scale = h as f64 / 64.0;
    let comps = [
        WeatherComponent::Fog(FogParams {
            beta: 1.6 * level,
            airlight: [0.85; 3],
        }),
        WeatherComponent::Rain(RainParams {
            density: 0.5 * level,
            length: (7.0 * scale).max(2.0),
            angle_deg: 10.0,
            brightness: 0.4,
        }),
        WeatherComponent::Snow(SnowParams {
            density: 0.4 * level,
            radius_min: (0.9 * scale).max(0.5),
            radius_max: (1.6 * scale).max(0.6),
        }),
    ];
    apply_mix(img, &comps, seed)
}

/// `scenes × levels` degraded images scored by the perception metric, PSNR and recognizer error.
pub fn degradation_sweep(
    r: &RecognitionModel,
    scenes: usize,
    levels: &[f64],
    height: usize,
    width: usize,
    seed: u64,
    gamma: f64,
) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::with_capacity(scenes * levels.len());
    for s in 0..scenes {
        let scene_seed = derive_seed(seed, SWEEP_SALT + s as u64);
        let scene = gen_scene(scene_seed, height, width)?;
        for &level in levels {
            let img = sweep_degradation(&scene.image, level, scene_seed)?;
            out.push(SweepPoint {
                scene: s,
                level,
                m_pa: m_pa(&img, &scene.image, r, gamma)?.value,
                psnr: psnr(&img, &scene.image, PEAK)?,
                pixel_error: 1.0 - r.pixel_accuracy(&img, &scene.labels)?,
            });
        }
    }
    Ok(out)
}
