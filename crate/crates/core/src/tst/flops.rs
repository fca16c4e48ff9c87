//! Analytic multiply-add counts for one forward pass of a block at batch 1.

use crate::model::{BlockVariant, ModelConfig};

/// Multiply-adds split by stage kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BlockFlops {
    pub temporal: u64,
    pub spatial: u64,
}

impl BlockFlops {
    pub fn total(&self) -> u64 {
        self.temporal + self.spatial
    }
}

/// Attention over sequences of length `l` at width `d`, `seqs` of them.
pub fn attention(seqs: u64, l: u64, d: u64) -> u64 {
    // Q, K, V and output projections, then scores and the weighted sum
    seqs * (4 * l * d * d + 2 * l * l * d)
}

pub fn feed_forward(rows: u64, d: u64) -> u64 {
    rows * 8 * d * d
}

/// Gated scan mixer over sequences of length `l`.
pub fn ssm_mixer(seqs: u64, l: u64, d: u64, s: u64, conv: u64) -> u64 {
    let proj = 3 * d * d + 2 * d * s;
    // state update and readout per channel and state
    let scan = 2 * d * s;
    seqs * l * (proj + scan + conv * d)
}

pub fn block(cfg: &ModelConfig) -> BlockFlops {
    let (n, t, d, s, w) = (
        cfg.n_sensors as u64,
        cfg.t_hist as u64,
        cfg.d_hidden() as u64,
        cfg.d_state as u64,
        cfg.conv_width as u64,
    );
    let t_attn = attention(n, t, d) + feed_forward(n * t, d);
    let t_ssm = ssm_mixer(n, t, d, s, w) + feed_forward(n * t, d);
    let s_ssm = ssm_mixer(t, n, d, s, w);
    let s_attn = attention(t, n, d);
    match cfg.variant {
        BlockVariant::Fast => BlockFlops { temporal: 2 * t_attn, spatial: s_ssm },
        BlockVariant::SpatialAttention => BlockFlops { temporal: 2 * t_attn, spatial: s_attn },
        BlockVariant::TemporalMamba => BlockFlops { temporal: 2 * t_ssm, spatial: s_ssm },
        BlockVariant::Swapped => BlockFlops { temporal: t_attn, spatial: 2 * s_ssm },
    }
}
