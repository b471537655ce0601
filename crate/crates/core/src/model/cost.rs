use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepresentationScheme {
    /// One embedding per observed cell, full self-attention among them.
    DenseTuple,
    /// One embedding per cell, observed or not, full self-attention.
    DenseTupleWithMissing,
    /// One embedding per cell, attention along one axis at a time.
    Axial,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub rows: f64,
    /// Attention score entries per layer.
    pub score_entries: f64,
}

/// Embedding rows and per-layer attention score entries for a `T × D`
/// series with sparsity `p`. Dense-tuple row counts are expected values and
/// may be fractional.
pub fn representation_cost(t: usize, d: usize, p: f64, scheme: RepresentationScheme) -> CostReport {
    let cells = (t * d) as f64;
    let (tf, df) = (t as f64, d as f64);
    match scheme {
        RepresentationScheme::DenseTuple => {
            let rows = cells * (1.0 - p);
            CostReport { rows, score_entries: rows * rows }
        }
        RepresentationScheme::DenseTupleWithMissing => CostReport { rows: cells, score_entries: cells * cells },
        RepresentationScheme::Axial => CostReport { rows: cells, score_entries: df * tf * tf + tf * df * df },
    }
}
