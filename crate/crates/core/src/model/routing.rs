use super::moe::RoutingRecord;
use crate::error::{dim_err, Result};
use crate::synth::WeatherKind;

/// Per-weather share of gate mass sent to each expert in one MoE layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingTable {
    pub layer: usize,
    /// `[num_weather][M]`, indexed by [`WeatherKind::index`]; each row with images sums to 1.
    pub rows: Vec<Vec<f64>>,
    /// Number of images behind each row.
    pub counts: Vec<usize>,
}

impl RoutingTable {
    /// Weather rows that have at least one image.
    pub fn present(&self) -> impl Iterator<Item = (WeatherKind, &[f64])> {
        WeatherKind::ALL
            .into_iter()
            .filter(|k| self.counts[k.index()] > 0)
            .map(|k| (k, self.rows[k.index()].as_slice()))
    }
}

/// One table per layer. `records[i]` holds every layer's record for the image labelled `labels[i]`.
pub fn routing_scores(
    records: &[Vec<RoutingRecord>],
    labels: &[WeatherKind],
) -> Result<Vec<RoutingTable>> {
    if records.len() != labels.len() {
        return dim_err(format!(
            "{} record sets for {} labels",
            records.len(),
            labels.len()
        ));
    }
    let Some(first) = records.first() else {
        return Ok(Vec::new());
    };
    let layers = first.len();
    let mut tables = Vec::with_capacity(layers);
    for (layer, head) in first.iter().enumerate() {
        let m = head.gates.shape()[1];
        let mut rows = vec![vec![0.0; m]; WeatherKind::ALL.len()];
        let mut counts = vec![0; WeatherKind::ALL.len()];
        for (set, &kind) in records.iter().zip(labels) {
            let rec = set.get(layer).ok_or_else(|| {
                crate::Error::Dimension("record sets have different depths".into())
            })?;
            if rec.gates.shape()[1] != m {
                return dim_err("records disagree on the expert count");
            }
            let row = &mut rows[kind.index()];
            for token in rec.gates.data().chunks(m) {
                row.iter_mut().zip(token).for_each(|(r, g)| *r += g);
            }
            counts[kind.index()] += 1;
        }
        for row in &mut rows {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
        tables.push(RoutingTable {
            layer,
            rows,
            counts,
        });
    }
    Ok(tables)
}

/// Jensen–Shannon divergence in bits, in `[0, 1]`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> f64 {
    let kl = |a: &[f64], m: &[f64]| -> f64 {
        a.iter()
            .zip(m)
            .filter(|(x, _)| **x > 0.0)
            .map(|(x, y)| x * (x / y).log2())
            .sum()
    };
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    (0.5 * kl(p, &m) + 0.5 * kl(q, &m)).max(0.0)
}

/// Mean pairwise divergence between present weather rows, averaged over layers.
pub fn mean_js_divergence(tables: &[RoutingTable]) -> f64 {
    let per_layer: Vec<f64> = tables
        .iter()
        .filter_map(|t| {
            let rows: Vec<&[f64]> = t.present().map(|(_, r)| r).collect();
            let mut sum = 0.0;
            let mut pairs = 0;
            for i in 0..rows.len() {
                for j in i + 1..rows.len() {
                    sum += js_divergence(rows[i], rows[j]);
                    pairs += 1;
                }
            }
            (pairs > 0).then(|| sum / pairs as f64)
        })
        .collect();
    if per_layer.is_empty() {
        return 0.0;
    }
    per_layer.iter().sum::<f64>() / per_layer.len() as f64
}
