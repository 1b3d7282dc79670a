//! Procedural clean scenes and rain / fog / snow / mixed degradations.
//!
//! Everything here is a pure function of its seed and parameters. Fog follows the
//! atmospheric scattering model over a vertical depth ramp; rain and snow are additive
//! particle overlays whose particle sets nest as density grows.

mod dataset;
mod scene;
mod weather;

pub use dataset::{
    build_dataset, derive_seed, quantize, read_ppm, write_ppm, Dataset, DatasetConfig,
    DatasetSplit, Split, WeatherSample, DEFAULT_SPLIT_RATIO, MANIFEST_FILE,
};
pub use scene::{
    gen_clean_scene, gen_scene, Scene, CLASS_GROUND, CLASS_OBJECT_BASE, CLASS_SKY,
    NUM_SEMANTIC_CLASSES,
};
pub use weather::{
    apply_fog, apply_mix, apply_rain, apply_snow, default_depth, rain_mask, sample_params,
    snow_mask, snow_seed, FogParams, RainParams, SnowParams, WeatherComponent, WeatherKind,
    WeatherParams,
};
