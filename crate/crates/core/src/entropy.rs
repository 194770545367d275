//! Structural entropy of dense blocks and the depth/width effectiveness ratio.
//!
//! For a dense block whose `i`-th layer sees `c_i` input channels through a
//! `k_i × k_i` kernel, the entropy after `j` layers is
//!
//! ```text
//! H^j = log(r² · c_{j+1}) · ( Σ_{i<=j} log(c_i · k_i²) + log j! )
//! ```
//!
//! with `r` the (constant) feature resolution of the block. All logarithms are
//! natural; factorials go through log-gamma.

use serde::Serialize;

use crate::arch::{DenseNetConfig, StageConfig};
use crate::error::{Error, Result};

/// `log(n!)` via log-gamma.
pub fn ln_factorial(n: u64) -> f64 {
    libm::lgamma(n as f64 + 1.0)
}

/// Entropy bound of a plain `L`-layer MLP with layer widths `widths`:
/// `w_L · (L · log w_0 + log L!)`.
pub fn mlp_entropy_bound(widths: &[u64]) -> Result<f64> {
    let (first, last) = match (widths.first(), widths.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return Err(Error::Domain("width list is empty".into())),
    };
    if widths.contains(&0) {
        return Err(Error::Domain("widths must be positive".into()));
    }
    let depth = widths.len() as u64;
    Ok(last as f64 * (depth as f64 * (first as f64).ln() + ln_factorial(depth)))
}

/// Entropy summary of one dense stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageEntropy {
    /// Entropy of the full block, in nats.
    pub value: f64,
    /// Entry `j` is the entropy of the block truncated after layer `j + 1`.
    pub cumulative_sequence: Vec<f64>,
    pub effectiveness: f64,
    /// `w_0 + K / 2`.
    pub average_width: f64,
}

pub fn stage_entropy(stage: &StageConfig) -> Result<StageEntropy> {
    if stage.num_layers == 0 {
        return Err(Error::Domain("stage has no layers".into()));
    }
    if stage.in_width == 0 {
        return Err(Error::Domain("stage width must be positive".into()));
    }
    if stage.in_resolution == 0 {
        return Err(Error::Domain("stage resolution must be positive".into()));
    }
    let kernel_area = (stage.kernel_size as f64).powi(2);
    let area = (stage.in_resolution as f64).powi(2);
    let growth = stage.growth_rate as f64;

    let mut layer_sum = 0.0;
    let mut sequence = Vec::with_capacity(stage.num_layers as usize);
    for (j, c) in stage.layer_widths().enumerate() {
        let projected = c as f64 * kernel_area;
        if projected < 1.0 {
            return Err(Error::Domain(format!("layer {} has c·k² = {projected} < 1", j + 1)));
        }
        layer_sum += projected.ln();
        let out_width = c as f64 + growth;
        let depth = j as u64 + 1;
        sequence.push((area * out_width).ln() * (layer_sum + ln_factorial(depth)));
    }

    Ok(StageEntropy {
        value: *sequence.last().expect("num_layers >= 1"),
        cumulative_sequence: sequence,
        effectiveness: effectiveness(stage),
        average_width: stage.in_width as f64 + growth / 2.0,
    })
}

/// `num_layers / in_width`.
pub fn effectiveness(stage: &StageConfig) -> f64 {
    stage.num_layers as f64 / stage.in_width as f64
}

/// Geometric mean of the widths.
pub fn average_width(widths: &[u64]) -> Result<f64> {
    if widths.is_empty() {
        return Err(Error::Domain("width list is empty".into()));
    }
    if widths.contains(&0) {
        return Err(Error::Domain("widths must be positive".into()));
    }
    let log_sum: f64 = widths.iter().map(|&w| (w as f64).ln()).sum();
    Ok((log_sum / widths.len() as f64).exp())
}

/// Per-stage entropies of a whole network, in stage order.
pub fn network_entropies(config: &DenseNetConfig) -> Result<Vec<StageEntropy>> {
    config.stages.iter().map(stage_entropy).collect()
}
