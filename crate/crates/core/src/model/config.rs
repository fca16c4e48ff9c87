use std::fmt;
use std::str::FromStr;

use crate::error::{FastError, Result};
use crate::kv::KvMap;

/// Arrangement of temporal and spatial stages inside a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockVariant {
    /// attention over time, selective scan over sensors, attention over time
    Fast,
    /// the sensor-axis scan replaced by sensor-axis attention
    SpatialAttention,
    /// both time-axis attention stages replaced by time-axis scans
    TemporalMamba,
    /// scan over sensors, attention over time, scan over sensors
    Swapped,
}

impl BlockVariant {
    pub const ALL: [BlockVariant; 4] = [
        BlockVariant::Fast,
        BlockVariant::SpatialAttention,
        BlockVariant::TemporalMamba,
        BlockVariant::Swapped,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BlockVariant::Fast => "fast",
            BlockVariant::SpatialAttention => "spatial-attention",
            BlockVariant::TemporalMamba => "temporal-mamba",
            BlockVariant::Swapped => "swapped",
        }
    }
}

impl fmt::Display for BlockVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BlockVariant {
    type Err = FastError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "fast" => Ok(BlockVariant::Fast),
            "spatial-attention" | "attention" => Ok(BlockVariant::SpatialAttention),
            "temporal-mamba" | "mamba" => Ok(BlockVariant::TemporalMamba),
            "swapped" => Ok(BlockVariant::Swapped),
            other => Err(FastError::Config(format!("unknown block variant {other:?}"))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_sensors: usize,
    pub t_hist: usize,
    pub t_horizon: usize,
    /// base embedding width; the hidden width is `4 * d` with embeddings on
    pub d: usize,
    pub blocks: usize,
    pub heads: usize,
    pub d_state: usize,
    pub conv_width: usize,
    pub expand: usize,
    pub dropout: f64,
    pub variant: BlockVariant,
    pub use_embedding: bool,
    pub slots_per_day: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_sensors: 16,
            t_hist: 12,
            t_horizon: 12,
            d: 32,
            blocks: 2,
            heads: 4,
            d_state: 64,
            conv_width: 2,
            expand: 1,
            dropout: 0.1,
            variant: BlockVariant::Fast,
            use_embedding: true,
            slots_per_day: 288,
            seed: 0,
        }
    }
}

/// Search grid for width, depth and heads.
pub const D_GRID: [usize; 2] = [32, 64];
pub const BLOCKS_GRID: [usize; 3] = [1, 2, 3];
pub const HEADS_GRID: [usize; 2] = [4, 8];

impl ModelConfig {
    pub fn d_hidden(&self) -> usize {
        if self.use_embedding {
            4 * self.d
        } else {
            self.d
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_sensors", self.n_sensors),
            ("t_hist", self.t_hist),
            ("t_horizon", self.t_horizon),
            ("d", self.d),
            ("blocks", self.blocks),
            ("heads", self.heads),
            ("d_state", self.d_state),
            ("conv_width", self.conv_width),
            ("slots_per_day", self.slots_per_day),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(FastError::Config(format!("{name} must be positive")));
        }
        if !self.d_hidden().is_multiple_of(self.heads) {
            return Err(FastError::Config(format!(
                "hidden width {} not divisible by {} heads",
                self.d_hidden(),
                self.heads
            )));
        }
        if self.expand != 1 {
            return Err(FastError::Config(format!(
                "expansion factor {} unsupported (inner width equals hidden width)",
                self.expand
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(FastError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("n_sensors", self.n_sensors);
        kv.set("t_hist", self.t_hist);
        kv.set("t_horizon", self.t_horizon);
        kv.set("d", self.d);
        kv.set("blocks", self.blocks);
        kv.set("heads", self.heads);
        kv.set("d_state", self.d_state);
        kv.set("conv_width", self.conv_width);
        kv.set("expand", self.expand);
        kv.set("dropout", self.dropout);
        kv.set("variant", self.variant);
        kv.set("use_embedding", self.use_embedding);
        kv.set("slots_per_day", self.slots_per_day);
        kv.set("seed", self.seed);
        kv
    }

    /// Reads known keys over the defaults; unknown keys are ignored so one
    /// file can carry model, training and data settings.
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let d = ModelConfig::default();
        let cfg = ModelConfig {
            n_sensors: kv.get_or("n_sensors", d.n_sensors)?,
            t_hist: kv.get_or("t_hist", d.t_hist)?,
            t_horizon: kv.get_or("t_horizon", d.t_horizon)?,
            d: kv.get_or("d", d.d)?,
            blocks: kv.get_or("blocks", d.blocks)?,
            heads: kv.get_or("heads", d.heads)?,
            d_state: kv.get_or("d_state", d.d_state)?,
            conv_width: kv.get_or("conv_width", d.conv_width)?,
            expand: kv.get_or("expand", d.expand)?,
            dropout: kv.get_or("dropout", d.dropout)?,
            variant: kv.get_or("variant", d.variant)?,
            use_embedding: kv.get_or("use_embedding", d.use_embedding)?,
            slots_per_day: kv.get_or("slots_per_day", d.slots_per_day)?,
            seed: kv.get_or("seed", d.seed)?,
        };
        Ok(cfg)
    }
}
