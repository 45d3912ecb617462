//! Controller stepping, memory-port arbitration and the PE register grid.
//!
//! A controller step advances every PE, LU and SU at once. Memory requests
//! issued during a step are arbitrated onto the ports round-robin over the
//! requesting units; a step takes `max(1, ceil(words / words_per_cycle))`
//! cycles.

use std::fmt;

use serde::Serialize;

use super::{ArchConfig, SimResult};

pub(crate) const INPUT_BASE: u64 = 1 << 32;
pub(crate) const OUTPUT_BASE: u64 = 2 << 32;

/// Load/store unit or controller issuing a memory request.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Unit {
    /// LU attached to the left PE of a row.
    LoadLeft(usize),
    /// LU attached to the top PE of a column.
    LoadTop(usize),
    /// SU attached to the bottom PE of a column.
    StoreBottom(usize),
    /// SU attached to the right PE of a row.
    StoreRight(usize),
    /// Controller fetching sparse-format metadata.
    Controller,
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Unit::LoadLeft(i) => write!(f, "LU_L{i}"),
            Unit::LoadTop(j) => write!(f, "LU_T{j}"),
            Unit::StoreBottom(j) => write!(f, "SU_B{j}"),
            Unit::StoreRight(i) => write!(f, "SU_R{i}"),
            Unit::Controller => f.write_str("CTRL"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Action {
    ReadWeight,
    ReadMetadata,
    ReadInput,
    ReadPartial,
    WriteOutput,
    /// The DecU answered a read of a declared-zero weight without memory access.
    EmitZero,
}

impl Action {
    pub fn name(self) -> &'static str {
        match self {
            Action::ReadWeight => "read_weight",
            Action::ReadMetadata => "read_metadata",
            Action::ReadInput => "read_input",
            Action::ReadPartial => "read_partial",
            Action::WriteOutput => "write_output",
            Action::EmitZero => "emit_zero",
        }
    }
}

/// One memory-interface event. `port`/`cycle` are `None` for DecU zero emits.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceEvent {
    pub step: u64,
    pub cycle: Option<u64>,
    pub port: Option<usize>,
    pub unit: Unit,
    pub action: Action,
    pub address: u64,
}

#[derive(Clone, Copy, Debug)]
struct Request {
    unit: Unit,
    action: Action,
    address: u64,
}

pub(crate) struct Engine {
    words_per_cycle: usize,
    words_per_port: usize,
    pending: Vec<Request>,
    zero_emits: Vec<Request>,
    pub result: SimResult,
    trace: Option<Vec<TraceEvent>>,
    rr: usize,
    tile_start: u64,
    tile_steps: Option<Vec<u64>>,
}

impl Engine {
    pub fn new(arch: &ArchConfig, trace: bool) -> Self {
        Self {
            words_per_cycle: arch.words_per_cycle(),
            words_per_port: arch.port_width_bits / arch.word_bits,
            pending: Vec::new(),
            zero_emits: Vec::new(),
            result: SimResult::default(),
            trace: trace.then(Vec::new),
            rr: 0,
            tile_start: 0,
            tile_steps: trace.then(Vec::new),
        }
    }

    #[inline]
    pub fn request(&mut self, unit: Unit, action: Action, address: u64) {
        self.pending.push(Request { unit, action, address });
    }

    #[inline]
    pub fn emit_zero(&mut self, unit: Unit, address: u64) {
        self.result.decu_zero_emits += 1;
        if self.trace.is_some() {
            self.zero_emits.push(Request { unit, action: Action::EmitZero, address });
        }
    }

    pub fn count_mac(&mut self, n: u64) {
        self.result.mac_ops += n;
    }

    pub fn weight_load_phase(&mut self) {
        self.result.weight_load_phases += 1;
    }

    /// Closes the current controller step, arbitrating its requests.
    pub fn end_step(&mut self) {
        self.finish_step(false)
    }

    /// Closes a step that only drains stationary outputs to memory.
    pub fn end_drain_step(&mut self) {
        self.finish_step(true)
    }

    fn finish_step(&mut self, drain: bool) {
        let step = self.result.steps;
        let words = self.pending.len();
        let cycles = words.div_ceil(self.words_per_cycle).max(1) as u64;
        let ordered = self.arbitrate();
        let start_cycle = self.result.cycles;
        for (slot, req) in ordered.iter().enumerate() {
            let r = &mut self.result;
            match req.action {
                Action::ReadWeight => r.weight_words_read += 1,
                Action::ReadMetadata => {
                    r.weight_words_read += 1;
                    r.metadata_words_read += 1;
                }
                Action::ReadInput => r.input_words_read += 1,
                Action::ReadPartial => r.partial_words_read += 1,
                Action::WriteOutput => r.output_words_written += 1,
                Action::EmitZero => unreachable!(),
            }
            if let Some(trace) = &mut self.trace {
                let within = slot % self.words_per_cycle;
                trace.push(TraceEvent {
                    step,
                    cycle: Some(start_cycle + (slot / self.words_per_cycle) as u64),
                    port: Some(within / self.words_per_port),
                    unit: req.unit,
                    action: req.action,
                    address: req.address,
                });
            }
        }
        if let Some(trace) = &mut self.trace {
            trace.extend(self.zero_emits.drain(..).map(|z| TraceEvent {
                step,
                cycle: None,
                port: None,
                unit: z.unit,
                action: z.action,
                address: z.address,
            }));
        }
        self.result.cycles += cycles;
        self.result.stall_cycles += cycles - 1;
        self.result.steps += 1;
        if drain {
            self.result.drain_steps += 1;
        }
        self.rr = self.rr.wrapping_add(1);
    }

    /// Round-robin over requesting units: each round serves one request per
    /// unit, starting from a unit that rotates every step.
    fn arbitrate(&mut self) -> Vec<Request> {
        let pending = std::mem::take(&mut self.pending);
        if pending.len() <= self.words_per_cycle {
            return pending;
        }
        let mut units: Vec<Unit> = Vec::new();
        let mut queues: Vec<Vec<Request>> = Vec::new();
        for req in pending {
            match units.iter().position(|u| *u == req.unit) {
                Some(i) => queues[i].push(req),
                None => {
                    units.push(req.unit);
                    queues.push(vec![req]);
                }
            }
        }
        let n = queues.len();
        let start = self.rr % n;
        let longest = queues.iter().map(Vec::len).max().unwrap_or(0);
        let mut out = Vec::new();
        for round in 0..longest {
            for q in 0..n {
                if let Some(req) = queues[(start + q) % n].get(round) {
                    out.push(*req);
                }
            }
        }
        out
    }

    /// Marks the start of a tile job for per-tile step accounting.
    pub fn begin_tile(&mut self) {
        self.tile_start = self.result.steps;
    }

    pub fn end_tile(&mut self) {
        if let Some(t) = &mut self.tile_steps {
            t.push(self.result.steps - self.tile_start);
        }
    }

    /// Flushes requests still pending (metadata of a fully skipped tail).
    pub fn finish(mut self) -> (SimResult, Option<Vec<TraceEvent>>) {
        if !self.pending.is_empty() || !self.zero_emits.is_empty() {
            self.end_step();
        }
        self.result.steps_per_tile = self.tile_steps.take();
        (self.result, self.trace)
    }
}

/// Registers of one PE: a weight operand (with a zero-gate flag set when the
/// DecU emitted a declared zero), an input operand, and a partial sum.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Pe {
    pub w: f32,
    pub w_live: bool,
    pub x: f32,
    pub acc: f32,
}

pub(crate) struct PeGrid {
    cols: usize,
    pes: Vec<Pe>,
}

impl PeGrid {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { cols, pes: vec![Pe::default(); rows * cols] }
    }

    pub fn clear(&mut self) {
        self.pes.iter_mut().for_each(|p| *p = Pe::default());
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> &Pe {
        &self.pes[i * self.cols + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut Pe {
        &mut self.pes[i * self.cols + j]
    }

    /// PE `(i, j)` writes its weight operand into its right neighbor.
    #[inline]
    pub fn pass_weight_right(&mut self, i: usize, j: usize) {
        let Pe { w, w_live, .. } = *self.at(i, j);
        let n = self.at_mut(i, j + 1);
        n.w = w;
        n.w_live = w_live;
    }

    /// PE `(i, j)` writes its input operand into the PE below.
    #[inline]
    pub fn pass_input_down(&mut self, i: usize, j: usize) {
        let x = self.at(i, j).x;
        self.at_mut(i + 1, j).x = x;
    }

    /// Multiply-accumulate into the own partial sum; returns whether a MAC ran.
    #[inline]
    pub fn mac(&mut self, i: usize, j: usize) -> bool {
        let p = self.at_mut(i, j);
        if p.w_live {
            p.acc += p.w * p.x;
            true
        } else {
            false
        }
    }
}
