//! Input embedding: flow values, calendar context and a learned per
//! (time position, sensor) code, concatenated into the hidden width.

use crate::error::{FastError, Result};
use crate::model::ModelConfig;
use crate::numerics::{init, Real, RngState, Tape, Tensor, Var};
use crate::params::{impl_params, join, Parameterized};

pub const DAYS_PER_WEEK: usize = 7;

/// Two-layer projection of each scalar reading, `1 -> width -> width`.
#[derive(Debug, Clone)]
pub struct FlowMlp<T: Real = f32> {
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

impl_params!(FlowMlp { w1, b1, w2, b2 });

impl<T: Real> FlowMlp<T> {
    pub fn new(width: usize, rng: &mut RngState) -> Self {
        FlowMlp {
            w1: init::fan_in_uniform(&[1, width], rng),
            b1: init::zeros(&[width]),
            w2: init::fan_in_uniform(&[width, width], rng),
            b2: init::zeros(&[width]),
        }
    }

    /// `[..., 1] -> [..., width]`
    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = x
            .linear(tape.param(&self.w1), Some(tape.param(&self.b1)))?
            .relu()?;
        h.linear(tape.param(&self.w2), Some(tape.param(&self.b2)))
    }
}

/// Day-of-week table, time-of-day table and the joint node/position table.
#[derive(Debug, Clone)]
pub struct CalendarTables<T: Real = f32> {
    pub day_table: Tensor<T>,
    pub time_table: Tensor<T>,
    pub node_pos: Tensor<T>,
}

impl_params!(CalendarTables { day_table, time_table, node_pos });

#[derive(Debug, Clone)]
pub struct EmbeddingParams<T: Real = f32> {
    pub flow: FlowMlp<T>,
    /// absent in the no-embedding ablation
    pub calendar: Option<CalendarTables<T>>,
    pub d: usize,
    pub t_hist: usize,
    pub n_sensors: usize,
    pub slots_per_day: usize,
}

impl<T: Real> Parameterized<T> for EmbeddingParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        self.flow.visit(&join(prefix, "flow"), f);
        if let Some(c) = &self.calendar {
            c.visit(prefix, f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.flow.visit_mut(&join(prefix, "flow"), f);
        if let Some(c) = &mut self.calendar {
            c.visit_mut(prefix, f);
        }
    }
}

impl<T: Real> EmbeddingParams<T> {
    pub fn new(cfg: &ModelConfig, rng: &mut RngState) -> Self {
        let d = cfg.d;
        let (flow, calendar) = if cfg.use_embedding {
            let flow = FlowMlp::new(d, rng);
            let calendar = CalendarTables {
                day_table: init::normal(&[DAYS_PER_WEEK, d], 0.02, rng),
                time_table: init::normal(&[cfg.slots_per_day, d], 0.02, rng),
                node_pos: init::normal(&[cfg.t_hist, cfg.n_sensors, d], 0.02, rng),
            };
            (flow, Some(calendar))
        } else {
            (FlowMlp::new(cfg.d_hidden(), rng), None)
        };
        EmbeddingParams {
            flow,
            calendar,
            d,
            t_hist: cfg.t_hist,
            n_sensors: cfg.n_sensors,
            slots_per_day: cfg.slots_per_day,
        }
    }

    pub fn out_width(&self) -> usize {
        if self.calendar.is_some() {
            4 * self.d
        } else {
            self.d
        }
    }

    /// `window [B, T_h, N]` plus per-step calendar indices (`B * T_h` each,
    /// row-major) to `[B, T_h, N, d_h]`.
    pub fn embed<'t>(
        &self,
        tape: &'t Tape<T>,
        window: Var<'t, T>,
        tod: &[usize],
        dow: &[usize],
    ) -> Result<Var<'t, T>> {
        let ws = window.shape();
        if ws.len() != 3 || ws[1] != self.t_hist || ws[2] != self.n_sensors {
            return Err(FastError::Config(format!(
                "window shape {ws:?} does not match (B, {}, {})",
                self.t_hist, self.n_sensors
            )));
        }
        let (b, th, n) = (ws[0], ws[1], ws[2]);
        if tod.len() != b * th || dow.len() != b * th {
            return Err(FastError::Shape(format!(
                "expected {} calendar indices, got tod={} dow={}",
                b * th,
                tod.len(),
                dow.len()
            )));
        }
        if let Some(&bad) = tod.iter().find(|&&i| i >= self.slots_per_day) {
            return Err(FastError::Index(format!(
                "time-of-day index {bad} >= {}",
                self.slots_per_day
            )));
        }
        if let Some(&bad) = dow.iter().find(|&&i| i >= DAYS_PER_WEEK) {
            return Err(FastError::Index(format!("day-of-week index {bad} >= 7")));
        }

        let data = self.flow.forward(tape, window.reshape(&[b, th, n, 1])?)?;
        let Some(cal) = &self.calendar else {
            return Ok(data);
        };
        let d = self.d;
        let full = [b, th, n, d];
        let day = tape
            .embedding_lookup(tape.param(&cal.day_table), dow, &[b, th])?
            .reshape(&[b, th, 1, d])?
            .broadcast_to(&full)?;
        let time = tape
            .embedding_lookup(tape.param(&cal.time_table), tod, &[b, th])?
            .reshape(&[b, th, 1, d])?
            .broadcast_to(&full)?;
        let pos = tape.param(&cal.node_pos).broadcast_to(&full)?;
        tape.concat_lastdim(&[data, day, time, pos])
    }
}

/// Time-of-day and day-of-week indices for `t_hist` consecutive slots
/// starting at (`start_slot`, `start_dow`).
pub fn calendar_indices(
    start_slot: usize,
    start_dow: usize,
    t_hist: usize,
    slots_per_day: usize,
) -> (Vec<usize>, Vec<usize>) {
    (0..t_hist)
        .map(|i| {
            let abs = start_slot + i;
            (
                abs % slots_per_day,
                (start_dow + abs / slots_per_day) % DAYS_PER_WEEK,
            )
        })
        .unzip()
}
