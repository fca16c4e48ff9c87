//! Temporal-spatial-temporal blocks and their ablation variants.

mod attention;
pub mod flops;
mod scan;
mod spatial;

pub use attention::{FeedForward, LayerNorm, MultiHeadAttention, SpatialAttention, TemporalAttention};
pub use spatial::{SpatialSsm, SsmMixer, TemporalSsm};

use crate::error::Result;
use crate::model::{BlockVariant, ModelConfig};
use crate::numerics::{Real, RngState, Tape, Tensor, Var};
use crate::params::{join, ForwardCtx, Parameterized};

/// One stage of a block, acting on `[B, T, N, D]`.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Stage<T: Real = f32> {
    TemporalAttention(TemporalAttention<T>),
    TemporalSsm(TemporalSsm<T>),
    SpatialSsm(SpatialSsm<T>),
    SpatialAttention(SpatialAttention<T>),
}

impl<T: Real> Stage<T> {
    pub fn forward<'t>(
        &self,
        tape: &'t Tape<T>,
        h: Var<'t, T>,
        ctx: &mut ForwardCtx,
    ) -> Result<Var<'t, T>> {
        match self {
            Stage::TemporalAttention(s) => s.forward(tape, h, ctx),
            Stage::TemporalSsm(s) => s.forward(tape, h, ctx),
            Stage::SpatialSsm(s) => s.forward(tape, h),
            Stage::SpatialAttention(s) => s.forward(tape, h, ctx),
        }
    }

    pub fn is_spatial(&self) -> bool {
        matches!(self, Stage::SpatialSsm(_) | Stage::SpatialAttention(_))
    }

    fn params(&self) -> &dyn Parameterized<T> {
        match self {
            Stage::TemporalAttention(s) => s,
            Stage::TemporalSsm(s) => s,
            Stage::SpatialSsm(s) => s,
            Stage::SpatialAttention(s) => s,
        }
    }

    fn params_mut(&mut self) -> &mut dyn Parameterized<T> {
        match self {
            Stage::TemporalAttention(s) => s,
            Stage::TemporalSsm(s) => s,
            Stage::SpatialSsm(s) => s,
            Stage::SpatialAttention(s) => s,
        }
    }
}

/// Three stages applied in order; parameters are never shared between them.
#[derive(Debug, Clone)]
pub struct TstBlock<T: Real = f32> {
    pub variant: BlockVariant,
    pub stages: Vec<Stage<T>>,
}

impl<T: Real> Parameterized<T> for TstBlock<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        for (i, s) in self.stages.iter().enumerate() {
            s.params().visit(&join(prefix, &format!("stage{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.params_mut().visit_mut(&join(prefix, &format!("stage{i}")), f);
        }
    }
}

impl<T: Real> TstBlock<T> {
    pub fn new(cfg: &ModelConfig, rng: &mut RngState) -> Self {
        let w = cfg.d_hidden();
        let t_attn = |rng: &mut RngState| Stage::TemporalAttention(TemporalAttention::new(w, cfg.heads, rng));
        let s_ssm = |rng: &mut RngState| Stage::SpatialSsm(SpatialSsm::new(w, cfg.d_state, cfg.conv_width, rng));
        let stages = match cfg.variant {
            BlockVariant::Fast => vec![t_attn(rng), s_ssm(rng), t_attn(rng)],
            BlockVariant::SpatialAttention => vec![
                t_attn(rng),
                Stage::SpatialAttention(SpatialAttention::new(w, cfg.heads, rng)),
                t_attn(rng),
            ],
            BlockVariant::TemporalMamba => {
                let mut t_ssm = || Stage::TemporalSsm(TemporalSsm::new(w, cfg.d_state, cfg.conv_width, rng));
                let first = t_ssm();
                let last = t_ssm();
                vec![first, s_ssm(rng), last]
            }
            BlockVariant::Swapped => vec![s_ssm(rng), t_attn(rng), s_ssm(rng)],
        };
        TstBlock {
            variant: cfg.variant,
            stages,
        }
    }

    /// `[B, T_h, N, d_h] -> [B, T_h, N, d_h]`
    pub fn forward<'t>(
        &self,
        tape: &'t Tape<T>,
        h: Var<'t, T>,
        ctx: &mut ForwardCtx,
    ) -> Result<Var<'t, T>> {
        self.stages.iter().try_fold(h, |h, s| s.forward(tape, h, ctx))
    }

    /// The first spatial stage, used by the scaling benchmark.
    pub fn spatial_stage(&self) -> Option<&Stage<T>> {
        self.stages.iter().find(|s| s.is_spatial())
    }
}
