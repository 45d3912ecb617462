//! Systolic-array simulator with seven dataflows.
//!
//! A run tiles the GEMM `W · X` onto an `R × C` PE array. Every dataflow is a
//! controller schedule made of whole *steps*; within a step each PE may read
//! its own registers and write its own and its right/lower neighbors'. The
//! memory interface serves at most `words_per_cycle` words per cycle, so a
//! step that moves more words stalls.
//!
//! Tile jobs never overlap: a tile drains before the next one fills.

mod csos;
mod engine;
mod is;
mod os;
mod ws;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{encode_csb, encode_two_stage_bitmap, CsbTile, ElementLookup, FormatKind, TwoStageBitmapTile};
use crate::lowering::{lower_operator, OperatorSpec};
use crate::matrix::DenseMatrix;

pub use engine::{Action, TraceEvent, Unit};
use engine::{Engine, PeGrid, INPUT_BASE, OUTPUT_BASE};

fn default_regfile() -> usize {
    9
}
fn default_ports() -> usize {
    8
}
fn default_width() -> usize {
    32
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchConfig {
    pub pe_rows: usize,
    pub pe_cols: usize,
    #[serde(default = "default_regfile")]
    pub regfile_size: usize,
    #[serde(default = "default_ports")]
    pub mem_ports: usize,
    #[serde(default = "default_width")]
    pub port_width_bits: usize,
    #[serde(default = "default_width")]
    pub word_bits: usize,
    /// Depth of a weight tile along the streamed dimension (K for OS/WS,
    /// M for IS). `None` uses `pe_cols`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tile_depth: Option<usize>,
}

impl ArchConfig {
    /// Array of the given shape with the default memory interface.
    pub fn new(pe_rows: usize, pe_cols: usize) -> Self {
        Self {
            pe_rows,
            pe_cols,
            regfile_size: 9,
            mem_ports: 8,
            port_width_bits: 32,
            word_bits: 32,
            tile_depth: None,
        }
    }

    pub fn with_tile_depth(mut self, depth: usize) -> Self {
        self.tile_depth = Some(depth);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.pe_rows < 2 || self.pe_cols < 2 {
            return Err(Error::InvalidValue(format!(
                "array must be at least 2x2, got {}x{}",
                self.pe_rows, self.pe_cols
            )));
        }
        if self.regfile_size < 9 {
            return Err(Error::InvalidValue(format!(
                "register file needs at least 9 registers, got {}",
                self.regfile_size
            )));
        }
        if self.word_bits != 32 {
            return Err(Error::Unsupported(format!("word width {} (only 32-bit words)", self.word_bits)));
        }
        if self.mem_ports == 0 || self.port_width_bits < self.word_bits || !self.port_width_bits.is_multiple_of(self.word_bits) {
            return Err(Error::InvalidValue(format!(
                "{} ports of {} bits cannot carry {}-bit words",
                self.mem_ports, self.port_width_bits, self.word_bits
            )));
        }
        if self.tile_depth == Some(0) {
            return Err(Error::InvalidValue("tile depth must be positive".into()));
        }
        Ok(())
    }

    pub fn pe_count(&self) -> usize {
        self.pe_rows * self.pe_cols
    }

    pub fn words_per_cycle(&self) -> usize {
        self.mem_ports * (self.port_width_bits / self.word_bits)
    }

    pub fn tile_depth(&self) -> usize {
        self.tile_depth.unwrap_or(self.pe_cols)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dataflow {
    #[serde(rename = "dOS")]
    DOs,
    #[serde(rename = "dWS")]
    DWs,
    #[serde(rename = "dIS")]
    DIs,
    #[serde(rename = "sOS")]
    SOs,
    #[serde(rename = "sWS")]
    SWs,
    #[serde(rename = "sIS")]
    SIs,
    #[serde(rename = "csOS")]
    CsOs,
}

impl Dataflow {
    /// Enumeration order, also the tie-break order of [`best_dataflow`].
    pub const ALL: [Dataflow; 7] =
        [Self::DOs, Self::DWs, Self::DIs, Self::SOs, Self::SWs, Self::SIs, Self::CsOs];

    pub fn name(self) -> &'static str {
        match self {
            Self::DOs => "dOS",
            Self::DWs => "dWS",
            Self::DIs => "dIS",
            Self::SOs => "sOS",
            Self::SWs => "sWS",
            Self::SIs => "sIS",
            Self::CsOs => "csOS",
        }
    }

    pub fn is_sparse(self) -> bool {
        !matches!(self, Self::DOs | Self::DWs | Self::DIs)
    }

    /// Format the weight tiles are stored in.
    pub fn weight_format(self) -> FormatKind {
        match self {
            Self::DOs | Self::DWs | Self::DIs => FormatKind::Dense,
            Self::SOs | Self::SWs | Self::SIs => FormatKind::TwoStageBitmap,
            Self::CsOs => FormatKind::Csb,
        }
    }
}

impl fmt::Display for Dataflow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dataflow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|d| d.name()).collect();
                Error::InvalidValue(format!("unknown dataflow {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// Counters of one simulation run. Weight reads include sparse-format
/// metadata words; DecU zero emits are not reads.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimResult {
    pub cycles: u64,
    pub steps: u64,
    /// Steps that only write stationary outputs back (output-stationary flows).
    pub drain_steps: u64,
    pub stall_cycles: u64,
    pub weight_words_read: u64,
    pub metadata_words_read: u64,
    pub input_words_read: u64,
    pub partial_words_read: u64,
    pub output_words_written: u64,
    pub mac_ops: u64,
    pub weight_load_phases: u64,
    pub decu_zero_emits: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps_per_tile: Option<Vec<u64>>,
}

impl SimResult {
    /// Steps excluding output drains.
    pub fn compute_steps(&self) -> u64 {
        self.steps - self.drain_steps
    }

    /// Sum of two runs executed back to back.
    pub fn add(&self, other: &SimResult) -> SimResult {
        let steps_per_tile = match (&self.steps_per_tile, &other.steps_per_tile) {
            (None, None) => None,
            (a, b) => Some(a.iter().chain(b.iter()).flatten().copied().collect()),
        };
        SimResult {
            cycles: self.cycles + other.cycles,
            steps: self.steps + other.steps,
            drain_steps: self.drain_steps + other.drain_steps,
            stall_cycles: self.stall_cycles + other.stall_cycles,
            weight_words_read: self.weight_words_read + other.weight_words_read,
            metadata_words_read: self.metadata_words_read + other.metadata_words_read,
            input_words_read: self.input_words_read + other.input_words_read,
            partial_words_read: self.partial_words_read + other.partial_words_read,
            output_words_written: self.output_words_written + other.output_words_written,
            mac_ops: self.mac_ops + other.mac_ops,
            weight_load_phases: self.weight_load_phases + other.weight_load_phases,
            decu_zero_emits: self.decu_zero_emits + other.decu_zero_emits,
            steps_per_tile,
        }
    }
}

/// Output, counters and the memory trace of a traced run.
#[derive(Clone, Debug)]
pub struct SimOutput {
    pub output: DenseMatrix,
    pub result: SimResult,
    pub trace: Vec<TraceEvent>,
}

/// Result of a weight fetch by a left-column LU.
enum Fetch {
    Read { value: f32, address: u64 },
    Zero { address: u64 },
}

/// Shared state of one run: operands, tiling geometry, engine and PE array.
struct Ctx<'a> {
    r: usize,
    c: usize,
    t: usize,
    w: &'a DenseMatrix,
    x: &'a DenseMatrix,
    m: usize,
    k: usize,
    n: usize,
    eng: Engine,
    grid: PeGrid,
    out: DenseMatrix,
    written: Vec<bool>,
}

impl<'a> Ctx<'a> {
    fn new(arch: &ArchConfig, w: &'a DenseMatrix, x: &'a DenseMatrix, trace: bool) -> Self {
        let (m, k, n) = (w.rows(), w.cols(), x.cols());
        Self {
            r: arch.pe_rows,
            c: arch.pe_cols,
            t: arch.tile_depth(),
            w,
            x,
            m,
            k,
            n,
            eng: Engine::new(arch, trace),
            grid: PeGrid::new(arch.pe_rows, arch.pe_cols),
            out: DenseMatrix::zeros(m, n),
            written: vec![false; m * n],
        }
    }

    fn weight_address(&self, m: usize, k: usize) -> u64 {
        (m * self.k + k) as u64
    }

    fn input_address(&self, k: usize, n: usize) -> u64 {
        INPUT_BASE + (k * self.n + n) as u64
    }

    fn output_address(&self, m: usize, n: usize) -> u64 {
        OUTPUT_BASE + (m * self.n + n) as u64
    }

    fn dense_fetch(&self, m: usize, k: usize) -> Fetch {
        Fetch::Read { value: self.w.get(m, k), address: self.weight_address(m, k) }
    }

    /// Issues the memory request (or DecU emit) for a fetch; returns the
    /// operand and whether it is live.
    fn issue_fetch(&mut self, unit: Unit, f: Fetch) -> (f32, bool) {
        match f {
            Fetch::Read { value, address } => {
                self.eng.request(unit, Action::ReadWeight, address);
                (value, true)
            }
            Fetch::Zero { address } => {
                self.eng.emit_zero(unit, address);
                (0.0, false)
            }
        }
    }

    /// Reads the current partial sum of an output if an earlier tile wrote it.
    fn read_partial(&mut self, unit: Unit, m: usize, n: usize) -> f32 {
        if self.written[m * self.n + n] {
            let a = self.output_address(m, n);
            self.eng.request(unit, Action::ReadPartial, a);
            self.out.get(m, n)
        } else {
            0.0
        }
    }

    fn write_output(&mut self, unit: Unit, m: usize, n: usize, v: f32) {
        let a = self.output_address(m, n);
        self.eng.request(unit, Action::WriteOutput, a);
        self.out.set(m, n, v);
        self.written[m * self.n + n] = true;
    }
}

/// Two-stage bitmap tiles in a flat weight stream, with their base addresses.
struct BitmapStream {
    tiles: Vec<TwoStageBitmapTile>,
    bases: Vec<u64>,
}

impl BitmapStream {
    fn new(tiles: Vec<TwoStageBitmapTile>) -> Self {
        let mut bases = Vec::with_capacity(tiles.len());
        let mut next = 0u64;
        for t in &tiles {
            bases.push(next);
            next += t.data_words() as u64;
        }
        Self { tiles, bases }
    }

    /// Queues the tile's metadata words onto the next step.
    fn request_metadata(&self, eng: &mut Engine, id: usize) {
        for i in 0..self.tiles[id].metadata_words() {
            eng.request(Unit::Controller, Action::ReadMetadata, self.bases[id] + i as u64);
        }
    }

    /// Fetch of element `e` of non-zero stored column `pos`; `logical` is the
    /// dense address reported for DecU zero emits.
    fn fetch(&self, id: usize, pos: usize, e: usize, logical: u64) -> Fetch {
        let tile = &self.tiles[id];
        match tile.lookup_nonzero(pos, e) {
            ElementLookup::Value { index, value } => Fetch::Read {
                value,
                address: self.bases[id] + (tile.metadata_words() + index) as u64,
            },
            _ => Fetch::Zero { address: logical },
        }
    }
}

fn block(w: &DenseMatrix, r0: usize, rows: usize, c0: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |i, j| w.get(r0 + i, c0 + j))
}

/// Weight tiles for OS/WS: `R × T` blocks, row-major over (M block, K tile).
fn os_bitmap_stream(w: &DenseMatrix, r: usize, t: usize) -> BitmapStream {
    let (m, k) = (w.rows(), w.cols());
    let mut tiles = Vec::new();
    for m0 in (0..m).step_by(r) {
        for k0 in (0..k).step_by(t) {
            tiles.push(encode_two_stage_bitmap(&block(w, m0, r.min(m - m0), k0, t.min(k - k0))));
        }
    }
    BitmapStream::new(tiles)
}

/// Weight tiles for IS: `T × R` blocks over (K block, M tile), stored
/// transposed so that the bitmap's columns are weight rows.
fn is_bitmap_stream(w: &DenseMatrix, r: usize, t: usize) -> BitmapStream {
    let (m, k) = (w.rows(), w.cols());
    let mut tiles = Vec::new();
    for k0 in (0..k).step_by(r) {
        for m0 in (0..m).step_by(t) {
            let b = block(w, m0, t.min(m - m0), k0, r.min(k - k0));
            tiles.push(encode_two_stage_bitmap(&b.transpose()));
        }
    }
    BitmapStream::new(tiles)
}

/// CSB tiles for csOS, same grid as [`os_bitmap_stream`].
fn csb_tiles(w: &DenseMatrix, r: usize, t: usize) -> Vec<CsbTile> {
    let (m, k) = (w.rows(), w.cols());
    let mut tiles = Vec::new();
    for m0 in (0..m).step_by(r) {
        for k0 in (0..k).step_by(t) {
            tiles.push(encode_csb(&block(w, m0, r.min(m - m0), k0, t.min(k - k0))));
        }
    }
    tiles
}

fn check_operands(arch: &ArchConfig, w: &DenseMatrix, x: &DenseMatrix) -> Result<()> {
    arch.validate()?;
    if w.cols() != x.rows() {
        return Err(Error::DimensionMismatch(format!(
            "weights {}x{} cannot multiply inputs {}x{}",
            w.rows(),
            w.cols(),
            x.rows(),
            x.cols()
        )));
    }
    if w.is_empty() || x.is_empty() {
        return Err(Error::Empty("GEMM operands must be non-empty".into()));
    }
    Ok(())
}

fn run(
    arch: &ArchConfig,
    df: Dataflow,
    w: &DenseMatrix,
    x: &DenseMatrix,
    trace: bool,
) -> Result<(DenseMatrix, SimResult, Option<Vec<TraceEvent>>)> {
    check_operands(arch, w, x)?;
    let mut ctx = Ctx::new(arch, w, x, trace);
    match df {
        Dataflow::DOs => os::run(&mut ctx, None),
        Dataflow::SOs => {
            let s = os_bitmap_stream(w, ctx.r, ctx.t);
            os::run(&mut ctx, Some(&s))
        }
        Dataflow::DWs => ws::run(&mut ctx, None),
        Dataflow::SWs => {
            let s = os_bitmap_stream(w, ctx.r, ctx.t);
            ws::run(&mut ctx, Some(&s))
        }
        Dataflow::DIs => is::run(&mut ctx, None),
        Dataflow::SIs => {
            let s = is_bitmap_stream(w, ctx.r, ctx.t);
            is::run(&mut ctx, Some(&s))
        }
        Dataflow::CsOs => {
            let tiles = csb_tiles(w, ctx.r, ctx.t);
            csos::run(&mut ctx, &tiles)
        }
    }
    let Ctx { eng, out, .. } = ctx;
    let (result, trace) = eng.finish();
    Ok((out, result, trace))
}

/// Simulates `W · X` under one dataflow.
pub fn simulate_gemm(
    arch: &ArchConfig,
    df: Dataflow,
    w: &DenseMatrix,
    x: &DenseMatrix,
) -> Result<(DenseMatrix, SimResult)> {
    let (out, result, _) = run(arch, df, w, x, false)?;
    Ok((out, result))
}

/// Like [`simulate_gemm`], additionally recording every memory event and the
/// steps spent per tile job.
pub fn simulate_gemm_traced(arch: &ArchConfig, df: Dataflow, w: &DenseMatrix, x: &DenseMatrix) -> Result<SimOutput> {
    let (output, result, trace) = run(arch, df, w, x, true)?;
    Ok(SimOutput { output, result, trace: trace.unwrap_or_default() })
}

/// Lowers a CONV/FC operator and simulates its GEMM. Weights are the lowered
/// weight matrix; inputs have the shape of [`OperatorSpec::input_shape`].
pub fn simulate_operator(
    arch: &ArchConfig,
    df: Dataflow,
    op: &OperatorSpec,
    weights: &DenseMatrix,
    inputs: &DenseMatrix,
) -> Result<(DenseMatrix, SimResult)> {
    let (w, x) = lower_operator(op, weights, inputs)?;
    simulate_gemm(arch, df, &w, &x)
}

/// Runs all seven dataflows and returns the one with the fewest cycles
/// (ties go to the earlier dataflow in [`Dataflow::ALL`]).
pub fn best_dataflow(
    arch: &ArchConfig,
    op: &OperatorSpec,
    weights: &DenseMatrix,
    inputs: &DenseMatrix,
) -> Result<(Dataflow, SimResult)> {
    let (w, x) = lower_operator(op, weights, inputs)?;
    best_gemm_dataflow(arch, &w, &x)
}

/// [`best_dataflow`] on already lowered GEMM operands.
pub fn best_gemm_dataflow(arch: &ArchConfig, w: &DenseMatrix, x: &DenseMatrix) -> Result<(Dataflow, SimResult)> {
    let mut best: Option<(Dataflow, SimResult)> = None;
    for df in Dataflow::ALL {
        let (_, r) = simulate_gemm(arch, df, w, x)?;
        if best.as_ref().is_none_or(|(_, b)| r.cycles < b.cycles) {
            best = Some((df, r));
        }
    }
    Ok(best.expect("seven dataflows"))
}
