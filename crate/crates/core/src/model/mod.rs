//! The full network: embedding, stacked blocks and the skip prediction head.

mod checkpoint;
mod config;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{BlockVariant, ModelConfig, BLOCKS_GRID, D_GRID, HEADS_GRID};

use crate::data::NormStats;
use crate::embedding::{calendar_indices, EmbeddingParams};
use crate::error::{FastError, Result};
use crate::numerics::{init, Real, RngState, Tape, Tensor, Var};
use crate::params::{join, ForwardCtx, Parameterized};
use crate::tst::TstBlock;

/// Data-side context carried with the weights so a checkpoint is usable on
/// its own: normalization statistics and the sensor order of the scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMeta {
    pub norm: NormStats,
    pub sensor_ids: Vec<String>,
}

impl ModelMeta {
    pub fn identity(n_sensors: usize) -> Self {
        ModelMeta {
            norm: NormStats { mean: 0.0, std: 1.0 },
            sensor_ids: (0..n_sensors).map(|i| i.to_string()).collect(),
        }
    }
}

/// Skip contributions and hidden states, one of each per block.
pub type Parts<'t, T> = (Vec<Var<'t, T>>, Vec<Var<'t, T>>);

#[derive(Debug, Clone)]
pub struct FastModel<T: Real = f32> {
    pub config: ModelConfig,
    pub embedding: EmbeddingParams<T>,
    pub blocks: Vec<TstBlock<T>>,
    /// per block, `[T_h, 1]` weights collapsing the time axis
    pub skip_time: Vec<Tensor<T>>,
    /// per block, `[d_h, T_f]`
    pub skip_proj: Vec<Tensor<T>>,
    pub meta: ModelMeta,
}

impl<T: Real> Parameterized<T> for FastModel<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        self.embedding.visit(&join(prefix, "embedding"), f);
        for (l, b) in self.blocks.iter().enumerate() {
            let p = join(prefix, &format!("block{l}"));
            b.visit(&p, f);
            f(&join(&p, "skip_time"), &self.skip_time[l]);
            f(&join(&p, "skip_proj"), &self.skip_proj[l]);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.embedding.visit_mut(&join(prefix, "embedding"), f);
        for (l, b) in self.blocks.iter_mut().enumerate() {
            let p = join(prefix, &format!("block{l}"));
            b.visit_mut(&p, f);
            f(&join(&p, "skip_time"), &mut self.skip_time[l]);
            f(&join(&p, "skip_proj"), &mut self.skip_proj[l]);
        }
    }
}

impl<T: Real> FastModel<T> {
    /// Initializes every parameter from `config.seed`.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let root = RngState::new(config.seed);
        let embedding = EmbeddingParams::new(config, &mut root.split(0));
        let mut block_rng = root.split(1);
        let blocks = (0..config.blocks)
            .map(|_| TstBlock::new(config, &mut block_rng))
            .collect();
        let mut head_rng = root.split(2);
        let skip_time = (0..config.blocks)
            .map(|_| Tensor::full(&[config.t_hist, 1], T::c(1.0 / config.t_hist as f64)).with_grad())
            .collect();
        let skip_proj = (0..config.blocks)
            .map(|_| init::fan_in_uniform(&[config.d_hidden(), config.t_horizon], &mut head_rng))
            .collect();
        Ok(FastModel {
            config: config.clone(),
            embedding,
            blocks,
            skip_time,
            skip_proj,
            meta: ModelMeta::identity(config.n_sensors),
        })
    }

    /// Guards against running a model on data of a different layout.
    pub fn check_compatible(&self, n_sensors: usize, t_hist: usize) -> Result<()> {
        if n_sensors != self.config.n_sensors || t_hist != self.config.t_hist {
            return Err(FastError::Config(format!(
                "model expects (T_h={}, N={}), data has (T_h={t_hist}, N={n_sensors})",
                self.config.t_hist, self.config.n_sensors
            )));
        }
        Ok(())
    }

    /// Per-block skip contributions, each `[B, T_f, N]`, plus the block outputs.
    pub fn forward_parts<'t>(
        &self,
        tape: &'t Tape<T>,
        window: Var<'t, T>,
        tod: &[usize],
        dow: &[usize],
        ctx: &mut ForwardCtx,
    ) -> Result<Parts<'t, T>> {
        let ws = window.shape();
        if ws.len() != 3 {
            return Err(FastError::Config(format!("window must be [B, T_h, N], got {ws:?}")));
        }
        self.check_compatible(ws[2], ws[1])?;
        let (b, n, tf, th) = (ws[0], ws[2], self.config.t_horizon, self.config.t_hist);
        let mut h = self.embedding.embed(tape, window, tod, dow)?;
        let mut parts = Vec::with_capacity(self.blocks.len());
        let mut hidden = Vec::with_capacity(self.blocks.len());
        for (l, block) in self.blocks.iter().enumerate() {
            h = block.forward(tape, h, ctx)?;
            hidden.push(h);
            let p = h
                .matmul(tape.param(&self.skip_proj[l]))?
                .permute(&[0, 2, 3, 1])?
                .reshape(&[b * n * tf, th])?
                .matmul(tape.param(&self.skip_time[l]))?
                .reshape(&[b, n, tf])?
                .permute(&[0, 2, 1])?;
            parts.push(p);
        }
        Ok((parts, hidden))
    }

    /// `window [B, T_h, N]` (normalized) to `[B, T_f, N]` (normalized).
    pub fn forward_batch<'t>(
        &self,
        tape: &'t Tape<T>,
        window: Var<'t, T>,
        tod: &[usize],
        dow: &[usize],
        ctx: &mut ForwardCtx,
    ) -> Result<Var<'t, T>> {
        let (parts, _) = self.forward_parts(tape, window, tod, dow, ctx)?;
        let mut it = parts.into_iter();
        let first = it.next().expect("at least one block");
        it.try_fold(first, |acc, p| acc.add(p))
    }

    /// Eval-mode forward of one normalized window `[T_h, N]` to `[T_f, N]`.
    pub fn forward(&self, window: &Tensor<T>, tod: &[usize], dow: &[usize]) -> Result<Tensor<T>> {
        let s = window.shape();
        if s.len() != 2 {
            return Err(FastError::Config(format!("window must be [T_h, N], got {s:?}")));
        }
        let tape = Tape::no_grad();
        let w = tape.leaf(&window.reshape(&[1, s[0], s[1]])?);
        let y = self.forward_batch(&tape, w, tod, dow, &mut ForwardCtx::eval())?;
        y.to_tensor().reshape(&[self.config.t_horizon, s[1]])
    }

    /// Raw-scale window `[T_h, N]` starting at a calendar position to a
    /// raw-scale forecast `[T_f, N]`.
    pub fn predict(&self, raw: &Tensor<T>, start_slot: usize, start_dow: usize) -> Result<Tensor<T>> {
        let (tod, dow) = calendar_indices(start_slot, start_dow, self.config.t_hist, self.config.slots_per_day);
        let norm = &self.meta.norm;
        let mut x = raw.clone();
        x.data_mut()
            .iter_mut()
            .for_each(|v| *v = T::c(norm.normalize(v.to_f64().unwrap_or(f64::NAN))));
        let mut y = self.forward(&x, &tod, &dow)?;
        y.data_mut()
            .iter_mut()
            .for_each(|v| *v = T::c(norm.denormalize(v.to_f64().unwrap_or(f64::NAN))));
        Ok(y)
    }
}

/// Parameter count by component, computed from shapes alone.
pub fn param_breakdown(cfg: &ModelConfig) -> Vec<(&'static str, usize)> {
    let (d, dh, th, n, tf, s, w, l) = (
        cfg.d,
        cfg.d_hidden(),
        cfg.t_hist,
        cfg.n_sensors,
        cfg.t_horizon,
        cfg.d_state,
        cfg.conv_width,
        cfg.blocks,
    );
    let flow_w = if cfg.use_embedding { d } else { dh };
    let mut out = vec![("flow_mlp", (flow_w + flow_w) + (flow_w * flow_w + flow_w))];
    if cfg.use_embedding {
        out.push(("day_table", 7 * d));
        out.push(("time_table", cfg.slots_per_day * d));
        out.push(("node_pos", th * n * d));
    }
    let norm = 2 * dh;
    let attn = 4 * dh * dh;
    let ffn = (dh * 4 * dh + 4 * dh) + (4 * dh * dh + dh);
    let mixer = dh * dh + (w * dh + dh) + (dh * dh + dh) + 2 * dh * s + dh * s + dh + dh * dh;
    let t_attn = 2 * norm + attn + ffn;
    let t_ssm = 2 * norm + mixer + ffn;
    let s_ssm = norm + mixer;
    let s_attn = norm + attn;
    let block = match cfg.variant {
        BlockVariant::Fast => 2 * t_attn + s_ssm,
        BlockVariant::SpatialAttention => 2 * t_attn + s_attn,
        BlockVariant::TemporalMamba => 2 * t_ssm + s_ssm,
        BlockVariant::Swapped => t_attn + 2 * s_ssm,
    };
    out.push(("blocks", l * block));
    out.push(("skip_time", l * th));
    out.push(("skip_proj", l * dh * tf));
    out
}

pub fn param_count(cfg: &ModelConfig) -> usize {
    param_breakdown(cfg).iter().map(|(_, c)| c).sum()
}
