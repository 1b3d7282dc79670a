use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{m_pa, psnr, ssim, RecognitionModel};
use crate::model::MoweModel;
use crate::synth::{WeatherKind, WeatherSample};
use crate::tensor::Tensor;

/// Anything that maps a degraded image to a restored one of the same shape.
pub trait Restorer {
    fn restore_image(&self, img: &Tensor) -> Result<Tensor>;
}

impl Restorer for MoweModel {
    fn restore_image(&self, img: &Tensor) -> Result<Tensor> {
        Ok(self.restore(img)?.image)
    }
}

/// Returns the degraded input unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct Passthrough;

impl Restorer for Passthrough {
    fn restore_image(&self, img: &Tensor) -> Result<Tensor> {
        Ok(img.clone())
    }
}

/// Metrics for one restored test image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub id: String,
    pub weather: WeatherKind,
    pub psnr: f64,
    pub ssim: f64,
    pub m_pa: f64,
    /// Recognizer pixel accuracy on the restored image against the true semantic mask.
    pub pixel_accuracy: f64,
}

/// Summary columns, in order; `average` is the mean of the four weather columns.
pub const SUMMARY_COLUMNS: [(&str, WeatherKind); 4] = [
    ("derain", WeatherKind::Rain),
    ("dehaze", WeatherKind::Fog),
    ("desnow", WeatherKind::Snow),
    ("mixed", WeatherKind::Mix),
];

pub type MetricFn = fn(&ImageMetrics) -> f64;

/// Summary rows, in order.
pub const SUMMARY_METRICS: [(&str, MetricFn); 4] = [
    ("psnr", |m| m.psnr),
    ("ssim", |m| m.ssim),
    ("m_pa", |m| m.m_pa),
    ("pixel_accuracy", |m| m.pixel_accuracy),
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub images: Vec<ImageMetrics>,
}

/// PSNR peak used throughout.
pub const PEAK: f64 = 1.0;

impl MetricReport {
    pub fn evaluate<R: Restorer + ?Sized>(
        restorer: &R,
        samples: &[&WeatherSample],
        recognizer: &RecognitionModel,
        gamma: f64,
    ) -> Result<Self> {
        let mut images = Vec::with_capacity(samples.len());
        for s in samples {
            let out = restorer.restore_image(&s.degraded)?;
            if out.shape() != s.clean.shape() {
                return Err(Error::Dimension(format!(
                    "restorer returned {:?} for a {:?} image",
                    out.shape(),
                    s.clean.shape()
                )));
            }
            images.push(ImageMetrics {
                id: s.id.clone(),
                weather: s.label,
                psnr: psnr(&out, &s.clean, PEAK)?,
                ssim: ssim(&out, &s.clean)?,
                m_pa: m_pa(&out, &s.clean, recognizer, gamma)?.value,
                pixel_accuracy: recognizer.pixel_accuracy(&out, &s.semantic)?,
            });
        }
        Ok(MetricReport { images })
    }

    /// Mean of `metric` over images of `kind`, or `None` when there are none.
    pub fn mean_for(
        &self,
        kind: WeatherKind,
        metric: impl Fn(&ImageMetrics) -> f64,
    ) -> Option<f64> {
        let vals: Vec<f64> = self
            .images
            .iter()
            .filter(|m| m.weather == kind)
            .map(metric)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Summary row of `metric`: the four weather columns then their average.
    pub fn summary_row(&self, metric: impl Fn(&ImageMetrics) -> f64 + Copy) -> [Option<f64>; 5] {
        let mut row = [None; 5];
        for (slot, (_, kind)) in row.iter_mut().zip(SUMMARY_COLUMNS) {
            *slot = self.mean_for(kind, metric);
        }
        let present: Vec<f64> = row[..4].iter().flatten().copied().collect();
        row[4] = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
        row
    }

    /// Mean of `metric` over every image.
    pub fn overall(&self, metric: impl Fn(&ImageMetrics) -> f64) -> Option<f64> {
        (!self.images.is_empty())
            .then(|| self.images.iter().map(metric).sum::<f64>() / self.images.len() as f64)
    }

    pub fn write_images_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["id", "weather", "psnr", "ssim", "m_pa", "pixel_accuracy"])?;
        for m in &self.images {
            w.write_record([
                m.id.clone(),
                m.weather.to_string(),
                format!("{:.6}", m.psnr),
                format!("{:.6}", m.ssim),
                format!("{:.6}", m.m_pa),
                format!("{:.6}", m.pixel_accuracy),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// One row per metric with derain, dehaze, desnow, mixed and average columns.
    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["metric"];
        header.extend(SUMMARY_COLUMNS.iter().map(|(n, _)| *n));
        header.push("average");
        w.write_record(&header)?;
        for (name, f) in SUMMARY_METRICS {
            let mut rec = vec![name.to_string()];
            rec.extend(
                self.summary_row(f)
                    .iter()
                    .map(|v| v.map_or(String::new(), |v| format!("{v:.6}"))),
            );
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
