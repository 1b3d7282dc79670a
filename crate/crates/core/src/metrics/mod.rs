//! Fidelity metrics and the recognizer-based perception metric.

mod fidelity;
mod perception;
mod report;
mod sweep;

pub use fidelity::{
    gaussian_taps, mse, psnr, ssim, to_gray, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW,
};
pub use perception::{
    m_pa, spearman, Mpa, Recognition, RecognitionModel, DEFAULT_GAMMA, RECOGNIZER_WIDTH,
};
pub use report::{
    ImageMetrics, MetricFn, MetricReport, Passthrough, Restorer, PEAK, SUMMARY_COLUMNS,
    SUMMARY_METRICS,
};
pub use sweep::{
    degradation_sweep, fog_sweep, recognizer_scenes, sweep_degradation, train_recognizer,
    SweepPoint, FOG_SWEEP_BETAS, RECOGNIZER_EPOCHS, RECOGNIZER_LR, RECOGNIZER_SCENES, SWEEP_LEVELS,
    SWEEP_SCENES,
};
