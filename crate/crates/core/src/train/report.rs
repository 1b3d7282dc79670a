use std::path::Path;

use crate::error::{Error, Result};
use crate::model::RoutingTable;
use crate::synth::WeatherKind;

/// Summary of one training epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    /// Number of completed epochs, starting at 1.
    pub epoch: usize,
    /// Mean restoration L1 over the epoch's samples.
    pub l1: f64,
    /// Mean classifier cross-entropy.
    pub ce: f64,
    /// Classifier accuracy per [`WeatherKind::index`]; `None` when the epoch had no such sample.
    pub accuracy: [Option<f64>; 5],
    /// Routing-score table per MoE layer, accumulated over the epoch.
    pub routing: Vec<RoutingTable>,
}

/// CSV column order of the accuracy fields.
const ACC_ORDER: [WeatherKind; 5] = [
    WeatherKind::Rain,
    WeatherKind::Fog,
    WeatherKind::Snow,
    WeatherKind::Mix,
    WeatherKind::Clear,
];

impl EpochReport {
    pub fn csv_header(&self) -> Vec<String> {
        let mut h = vec!["epoch".to_string(), "l1".into(), "ce".into()];
        h.extend(ACC_ORDER.iter().map(|k| format!("acc_{k}")));
        for t in &self.routing {
            for k in WeatherKind::ALL {
                for e in 0..t.rows[k.index()].len() {
                    h.push(format!("route_l{}_{k}_e{e}", t.layer));
                }
            }
        }
        h
    }

    pub fn csv_record(&self) -> Vec<String> {
        let mut r = vec![
            self.epoch.to_string(),
            format!("{:.6}", self.l1),
            format!("{:.6}", self.ce),
        ];
        r.extend(
            ACC_ORDER
                .iter()
                .map(|k| self.accuracy[k.index()].map_or(String::new(), |a| format!("{a:.4}"))),
        );
        for t in &self.routing {
            for k in WeatherKind::ALL {
                r.extend(t.rows[k.index()].iter().map(|v| format!("{v:.6}")));
            }
        }
        r
    }

    /// Flat numeric form used to persist history in checkpoints.
    pub fn to_row(&self) -> Vec<f64> {
        let mut row = vec![self.epoch as f64, self.l1, self.ce];
        row.extend(self.accuracy.iter().map(|a| a.unwrap_or(f64::NAN)));
        for t in &self.routing {
            row.extend(t.counts.iter().map(|&c| c as f64));
            for r in &t.rows {
                row.extend(r);
            }
        }
        row
    }

    /// Inverse of [`EpochReport::to_row`] for `layers` tables over `experts` experts.
    pub fn from_row(row: &[f64], layers: usize, experts: usize) -> Result<Self> {
        let kinds = WeatherKind::ALL.len();
        let per_layer = kinds + kinds * experts;
        if row.len() != 3 + kinds + layers * per_layer {
            return Err(Error::Format(format!(
                "epoch history row has {} values",
                row.len()
            )));
        }
        let mut accuracy = [None; 5];
        for (k, a) in accuracy.iter_mut().enumerate() {
            let v = row[3 + k];
            *a = (!v.is_nan()).then_some(v);
        }
        let routing = (0..layers)
            .map(|layer| {
                let base = 3 + kinds + layer * per_layer;
                RoutingTable {
                    layer,
                    counts: row[base..base + kinds]
                        .iter()
                        .map(|&c| c as usize)
                        .collect(),
                    rows: (0..kinds)
                        .map(|k| {
                            row[base + kinds + k * experts..base + kinds + (k + 1) * experts]
                                .to_vec()
                        })
                        .collect(),
                }
            })
            .collect();
        Ok(EpochReport {
            epoch: row[0] as usize,
            l1: row[1],
            ce: row[2],
            accuracy,
            routing,
        })
    }
}

/// Writes every report, one row per epoch.
pub fn write_epoch_csv(path: &Path, reports: &[EpochReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if let Some(first) = reports.first() {
        w.write_record(first.csv_header())?;
    }
    for r in reports {
        w.write_record(r.csv_record())?;
    }
    w.flush()?;
    Ok(())
}
