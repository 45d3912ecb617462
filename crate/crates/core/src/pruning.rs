//! Structured vector pruning of tiled weight matrices and the iterative
//! sparsity schedule.
//!
//! Weight matrices are cut into `tile_rows × tile_cols` tiles; every tile is
//! split into whole column vectors (length `tile_rows`) or row vectors
//! (length `tile_cols`). Within an operator group the vectors with the
//! smallest l2-norm are zeroed, so pruned vectors show up as skippable zero
//! columns (or rows) of the sparse tile encodings.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lowering::OperatorKind;
use crate::matrix::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Row,
    Column,
}

impl Orientation {
    pub fn name(self) -> &'static str {
        match self {
            Self::Row => "row",
            Self::Column => "column",
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "row" => Ok(Self::Row),
            "column" | "col" => Ok(Self::Column),
            _ => Err(Error::InvalidValue(format!("unknown orientation {s:?}; expected row or column"))),
        }
    }
}

fn default_attempts() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub vector_len: usize,
    pub orientation: Orientation,
    pub initial_sparsity: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub target_accuracy: f64,
    /// Oracle evaluations per sparsity level before the schedule gives up.
    #[serde(default = "default_attempts")]
    pub max_attempts: usize,
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidValue(msg));
        if self.vector_len == 0 {
            return bad("vector length must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.initial_sparsity) {
            return bad(format!("initial sparsity {} outside [0, 1]", self.initial_sparsity));
        }
        if !self.delta.is_finite() || self.delta <= 0.0 {
            return bad(format!("delta {} must be positive", self.delta));
        }
        if !(0.0..=1.0).contains(&self.target_accuracy) {
            return bad(format!("target accuracy {} outside [0, 1]", self.target_accuracy));
        }
        if !(self.epsilon >= 0.0 && self.epsilon <= self.target_accuracy) {
            return bad(format!("epsilon {} outside [0, target accuracy]", self.epsilon));
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be at least 1".into());
        }
        Ok(())
    }

    /// Sparsity of schedule level `step`, on a 1e-9 grid to keep
    /// `s0 + step·delta` free of accumulated rounding.
    pub fn sparsity_at(&self, step: usize) -> f64 {
        let s = self.initial_sparsity + step as f64 * self.delta;
        ((s * 1e9).round() / 1e9).min(1.0)
    }

    /// Lowest accepted accuracy, `a − ε`.
    pub fn accuracy_floor(&self) -> f64 {
        self.target_accuracy - self.epsilon
    }
}

/// Weight matrices of one operator type pruned under a shared sparsity.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorGroup {
    pub id: usize,
    pub kind: OperatorKind,
    pub members: Vec<DenseMatrix>,
    pub sparsity: f64,
}

impl OperatorGroup {
    pub fn new(id: usize, kind: OperatorKind, members: Vec<DenseMatrix>) -> Self {
        Self { id, kind, members, sparsity: 0.0 }
    }

    pub fn with_sparsity(mut self, s: f64) -> Self {
        self.sparsity = s;
        self
    }
}

/// Location of one prunable vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct VectorId {
    pub matrix: usize,
    pub tile: usize,
    pub vector: usize,
}

#[derive(Clone, Copy, Debug)]
struct Vector {
    id: VectorId,
    r0: usize,
    c0: usize,
    norm: f64,
}

fn tile_vectors(mi: usize, m: &DenseMatrix, tr: usize, tc: usize, o: Orientation) -> Vec<Vector> {
    let mut out = Vec::new();
    let grid_cols = m.cols().div_ceil(tc);
    for r0 in (0..m.rows()).step_by(tr) {
        for c0 in (0..m.cols()).step_by(tc) {
            let tile = (r0 / tr) * grid_cols + c0 / tc;
            let (rows, cols) = (tr.min(m.rows() - r0), tc.min(m.cols() - c0));
            let count = match o {
                Orientation::Column => cols,
                Orientation::Row => rows,
            };
            for v in 0..count {
                let (vr, vc) = match o {
                    Orientation::Column => (r0, c0 + v),
                    Orientation::Row => (r0 + v, c0),
                };
                let sq: f64 = vector_cells(vr, vc, rows, cols, o).map(|(r, c)| (m.get(r, c) as f64).powi(2)).sum();
                out.push(Vector { id: VectorId { matrix: mi, tile, vector: v }, r0: vr, c0: vc, norm: sq.sqrt() });
            }
        }
    }
    out
}

/// Cells of a vector starting at `(r0, c0)` within a clipped tile.
fn vector_cells(r0: usize, c0: usize, rows: usize, cols: usize, o: Orientation) -> Box<dyn Iterator<Item = (usize, usize)>> {
    match o {
        Orientation::Column => Box::new((0..rows).map(move |i| (r0 + i, c0))),
        Orientation::Row => Box::new((0..cols).map(move |j| (r0, c0 + j))),
    }
}

fn check_vector_len(tile_rows: usize, tile_cols: usize, cfg: &PruneConfig) -> Result<()> {
    let expected = match cfg.orientation {
        Orientation::Column => tile_rows,
        Orientation::Row => tile_cols,
    };
    if tile_rows == 0 || tile_cols == 0 {
        return Err(Error::InvalidValue("tile dimensions must be positive".into()));
    }
    if cfg.vector_len != expected {
        return Err(Error::DimensionMismatch(format!(
            "{} vectors of length {} do not fit {tile_rows}x{tile_cols} tiles",
            cfg.orientation, cfg.vector_len
        )));
    }
    Ok(())
}

/// Number of vectors zeroed at sparsity `s` out of `count`.
pub fn prune_quota(s: f64, count: usize) -> usize {
    (((s * count as f64) + 1e-9).floor() as usize).min(count)
}

/// Zeroes the `⌊s·count⌋` smallest-norm vectors of the group, where `s` is
/// the group's sparsity. Ties are broken by (matrix, tile, vector) index.
pub fn prune_vectors(
    group: &OperatorGroup,
    tile_rows: usize,
    tile_cols: usize,
    cfg: &PruneConfig,
) -> Result<Vec<DenseMatrix>> {
    check_vector_len(tile_rows, tile_cols, cfg)?;
    if !(0.0..=1.0).contains(&group.sparsity) {
        return Err(Error::InvalidValue(format!("group sparsity {} outside [0, 1]", group.sparsity)));
    }
    let mut vectors: Vec<Vector> = group
        .members
        .iter()
        .enumerate()
        .flat_map(|(mi, m)| tile_vectors(mi, m, tile_rows, tile_cols, cfg.orientation))
        .collect();
    vectors.sort_by(|a, b| a.norm.partial_cmp(&b.norm).unwrap_or(Ordering::Equal).then(a.id.cmp(&b.id)));
    let quota = prune_quota(group.sparsity, vectors.len());
    let mut out = group.members.clone();
    for v in &vectors[..quota] {
        let m = &mut out[v.id.matrix];
        let rows = tile_rows.min(m.rows() - (v.r0 / tile_rows) * tile_rows);
        let cols = tile_cols.min(m.cols() - (v.c0 / tile_cols) * tile_cols);
        for (r, c) in vector_cells(v.r0, v.c0, rows, cols, cfg.orientation) {
            m.set(r, c, 0.0);
        }
    }
    Ok(out)
}

/// Ids of all vectors that are entirely zero.
pub fn zero_vectors(
    members: &[DenseMatrix],
    tile_rows: usize,
    tile_cols: usize,
    orientation: Orientation,
) -> Vec<VectorId> {
    members
        .iter()
        .enumerate()
        .flat_map(|(mi, m)| tile_vectors(mi, m, tile_rows, tile_cols, orientation))
        .filter(|v| v.norm == 0.0)
        .map(|v| v.id)
        .collect()
}

/// A candidate weight set handed to an [`AccuracyOracle`].
pub struct Candidate<'a> {
    /// Pruned members, indexed like the input groups.
    pub weights: &'a [Vec<DenseMatrix>],
    /// Target sparsity per group.
    pub sparsities: &'a [f64],
    /// Zero-based attempt number at this sparsity level.
    pub attempt: usize,
}

/// Stand-in for retraining plus evaluation: maps a pruned weight set to an
/// accuracy in `[0, 1]`.
pub trait AccuracyOracle {
    fn evaluate(&self, candidate: &Candidate<'_>) -> Result<f64>;
}

impl<F: Fn(&Candidate<'_>) -> Result<f64>> AccuracyOracle for F {
    fn evaluate(&self, candidate: &Candidate<'_>) -> Result<f64> {
        self(candidate)
    }
}

/// Reports `pass` while every group sparsity is at most `max_sparsity`,
/// `fail` above it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdOracle {
    pub max_sparsity: f64,
    pub pass: f64,
    pub fail: f64,
}

impl ThresholdOracle {
    pub fn new(max_sparsity: f64) -> Self {
        Self { max_sparsity, pass: 1.0, fail: 0.0 }
    }
}

impl AccuracyOracle for ThresholdOracle {
    fn evaluate(&self, c: &Candidate<'_>) -> Result<f64> {
        let ok = c.sparsities.iter().all(|&s| s <= self.max_sparsity + 1e-12);
        Ok(if ok { self.pass } else { self.fail })
    }
}

/// Accuracy proportional to the retained weight energy:
/// `base · (‖W_pruned‖² / ‖W_original‖²)^exponent`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyOracle {
    pub base: f64,
    pub exponent: f64,
    original_energy: f64,
}

fn energy<'a>(ms: impl IntoIterator<Item = &'a DenseMatrix>) -> f64 {
    ms.into_iter().flat_map(|m| m.data()).map(|&v| (v as f64).powi(2)).sum()
}

impl EnergyOracle {
    pub fn new(original: &[OperatorGroup], base: f64, exponent: f64) -> Self {
        let original_energy = energy(original.iter().flat_map(|g| &g.members));
        Self { base, exponent, original_energy }
    }
}

impl AccuracyOracle for EnergyOracle {
    fn evaluate(&self, c: &Candidate<'_>) -> Result<f64> {
        if self.original_energy == 0.0 {
            return Ok(self.base);
        }
        let kept = energy(c.weights.iter().flatten()) / self.original_energy;
        Ok((self.base * kept.powf(self.exponent)).clamp(0.0, 1.0))
    }
}

/// One sparsity level tried by the schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub step: usize,
    pub sparsities: Vec<f64>,
    /// Best accuracy seen over the attempts at this level.
    pub accuracy: f64,
    pub attempts: usize,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleOutcome {
    /// Last accepted weights per group (the input if nothing was accepted).
    pub weights: Vec<Vec<DenseMatrix>>,
    pub history: Vec<ScheduleEntry>,
}

impl ScheduleOutcome {
    pub fn accepted_steps(&self) -> usize {
        self.history.iter().filter(|e| e.accepted).count()
    }

    /// Group sparsities of the last accepted level.
    pub fn final_sparsities(&self) -> Option<&[f64]> {
        self.history.iter().rev().find(|e| e.accepted).map(|e| e.sparsities.as_slice())
    }
}

/// Iterative schedule: prune every group at `s_j = s0_j + step·δ_j`, ask the
/// oracle up to `max_attempts` times for an accuracy of at least `a − ε`, and
/// continue from the accepted weights until a level is rejected or every
/// group reached sparsity 1.
pub fn prune_schedule(
    groups: &[OperatorGroup],
    cfgs: &[PruneConfig],
    tile_rows: usize,
    tile_cols: usize,
    oracle: &dyn AccuracyOracle,
) -> Result<ScheduleOutcome> {
    if groups.len() != cfgs.len() {
        return Err(Error::DimensionMismatch(format!("{} groups but {} configs", groups.len(), cfgs.len())));
    }
    if groups.is_empty() {
        return Err(Error::Empty("no operator groups to prune".into()));
    }
    for cfg in cfgs {
        cfg.validate()?;
        check_vector_len(tile_rows, tile_cols, cfg)?;
    }
    let mut accepted: Vec<Vec<DenseMatrix>> = groups.iter().map(|g| g.members.clone()).collect();
    let mut history = Vec::new();
    for step in 0.. {
        let sparsities: Vec<f64> = cfgs.iter().map(|c| c.sparsity_at(step)).collect();
        let candidate: Vec<Vec<DenseMatrix>> = groups
            .iter()
            .zip(&accepted)
            .zip(cfgs.iter().zip(&sparsities))
            .map(|((g, current), (cfg, &s))| {
                let g = OperatorGroup { id: g.id, kind: g.kind, members: current.clone(), sparsity: s };
                prune_vectors(&g, tile_rows, tile_cols, cfg)
            })
            .collect::<Result<_>>()?;
        let mut best = f64::NEG_INFINITY;
        let mut ok = false;
        let mut attempts = 0;
        let max_attempts = cfgs.iter().map(|c| c.max_attempts).max().unwrap_or(1);
        while attempts < max_attempts && !ok {
            let acc = oracle.evaluate(&Candidate { weights: &candidate, sparsities: &sparsities, attempt: attempts })?;
            if !acc.is_finite() {
                return Err(Error::Oracle(format!("non-finite accuracy {acc}")));
            }
            attempts += 1;
            best = best.max(acc);
            ok = cfgs.iter().all(|c| acc >= c.accuracy_floor());
        }
        history.push(ScheduleEntry { step, sparsities: sparsities.clone(), accuracy: best, attempts, accepted: ok });
        if !ok {
            break;
        }
        accepted = candidate;
        if sparsities.iter().all(|&s| s >= 1.0) {
            break;
        }
    }
    Ok(ScheduleOutcome { weights: accepted, history })
}
