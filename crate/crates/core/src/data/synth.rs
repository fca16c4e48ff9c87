use std::f64::consts::PI;

use super::TrafficSeries;
use crate::error::{FastError, Result};
use crate::kv::KvMap;
use crate::numerics::RngState;

const SLOTS_PER_DAY: usize = 288;

/// Parameters of the synthetic traffic generator.
///
/// Sensor `i` at step `t` reads
/// `base + amp_i * profile(t, phase_i) * weekday_factor(t) + r_i(t)`, clamped
/// at zero, where the residual propagates downstream along the sensor order:
/// `r_i(t) = memory * r_i(t-1) + decay * r_{i-1}(t-lag) + noise`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub days: usize,
    pub seed: u64,
    pub base: f64,
    pub amp: f64,
    pub noise_std: f64,
    pub lag: usize,
    pub decay: f64,
    pub weekend_scale: f64,
    pub memory: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: 16,
            days: 21,
            seed: 7,
            base: 100.0,
            amp: 200.0,
            noise_std: 15.0,
            lag: 2,
            decay: 0.7,
            weekend_scale: 0.4,
            memory: 0.3,
        }
    }
}

impl SynthSpec {
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let d = SynthSpec::default();
        let spec = SynthSpec {
            n: kv.get_or("N", d.n)?,
            days: kv.get_or("days", d.days)?,
            seed: kv.get_or("seed", d.seed)?,
            base: kv.get_or("base", d.base)?,
            amp: kv.get_or("amp", d.amp)?,
            noise_std: kv.get_or("noise_std", d.noise_std)?,
            lag: kv.get_or("lag", d.lag)?,
            decay: kv.get_or("decay", d.decay)?,
            weekend_scale: kv.get_or("weekend_scale", d.weekend_scale)?,
            memory: kv.get_or("memory", d.memory)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("N", self.n);
        kv.set("days", self.days);
        kv.set("seed", self.seed);
        kv.set("base", self.base);
        kv.set("amp", self.amp);
        kv.set("noise_std", self.noise_std);
        kv.set("lag", self.lag);
        kv.set("decay", self.decay);
        kv.set("weekend_scale", self.weekend_scale);
        kv.set("memory", self.memory);
        kv
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.days < 2 {
            return Err(FastError::Config(format!(
                "synthetic data needs N >= 2 and days >= 2, got N={} days={}",
                self.n, self.days
            )));
        }
        if self.noise_std < 0.0 || !(0.0..1.0).contains(&self.memory.abs()) {
            return Err(FastError::Config("noise_std must be >= 0 and |memory| < 1".into()));
        }
        Ok(())
    }
}

/// Two rush-hour bumps over a floor, in [0, ~1.2].
fn daily_profile(slot: usize, phase_hours: f64) -> f64 {
    let h = slot as f64 * 24.0 / SLOTS_PER_DAY as f64 - phase_hours;
    let bump = |c: f64, w: f64| {
        // wrap distance on the 24h circle
        let d = (h - c + 36.0).rem_euclid(24.0) - 12.0;
        (-d * d / (2.0 * w * w)).exp()
    };
    0.15 + 0.25 * (1.0 - (2.0 * PI * h / 24.0).cos()) / 2.0 + bump(8.0, 1.5) + 0.8 * bump(17.5, 2.0)
}

pub fn synth_generate(spec: &SynthSpec) -> Result<TrafficSeries> {
    spec.validate()?;
    let (n, len) = (spec.n, spec.days * SLOTS_PER_DAY);
    let root = RngState::new(spec.seed);
    let mut shape_rng = root.split(0);
    let amps: Vec<f64> = (0..n).map(|_| spec.amp * shape_rng.uniform_range(0.7, 1.3)).collect();
    let phases: Vec<f64> = (0..n).map(|_| shape_rng.uniform_range(-0.5, 0.5)).collect();
    let mut noise_rng = root.split(1);

    let mut resid = vec![0.0; len * n];
    let mut values = vec![0.0; len * n];
    for t in 0..len {
        let slot = t % SLOTS_PER_DAY;
        let weekend = (t / SLOTS_PER_DAY) % 7 >= 5;
        let day_factor = if weekend { 1.0 - spec.weekend_scale } else { 1.0 };
        for i in 0..n {
            let mut r = spec.noise_std * noise_rng.normal();
            if t > 0 {
                r += spec.memory * resid[(t - 1) * n + i];
            }
            if i > 0 && t >= spec.lag {
                r += spec.decay * resid[(t - spec.lag) * n + i - 1];
            }
            resid[t * n + i] = r;
            let x = spec.base + amps[i] * daily_profile(slot, phases[i]) * day_factor + r;
            values[t * n + i] = x.max(0.0);
        }
    }
    Ok(TrafficSeries {
        values,
        len,
        n_sensors: n,
        interval_minutes: 5,
        start_slot: 0,
        start_dow: 0,
        sensor_ids: (0..n).map(|i| format!("s{i}")).collect(),
    })
}
