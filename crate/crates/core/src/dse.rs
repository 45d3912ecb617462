//! Design-space exploration over array shapes with a fixed PE budget,
//! dataflows and pruning variants.
//!
//! Pruning vectors are tied to the candidate shape: their length is the
//! array height `R`. Column vectors come from `R × T` tiles (the weight tiles
//! of the OS/WS flows), row vectors from `T × R` tiles (the IS weight tiles),
//! where `T` is the tile depth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lowering::{lower_operator, OperatorSpec};
use crate::matrix::DenseMatrix;
use crate::pruning::{
    prune_schedule, prune_vectors, AccuracyOracle, EnergyOracle, OperatorGroup, Orientation, PruneConfig,
    ThresholdOracle,
};
use crate::sim::{simulate_gemm, ArchConfig, Dataflow, SimResult};

/// All `(rows, cols)` with `rows · cols == budget` and both at least
/// `min_dim`, ascending by rows.
pub fn enumerate_shapes(budget: usize, min_dim: usize) -> Vec<(usize, usize)> {
    let min_dim = min_dim.max(1);
    (min_dim..=budget)
        .filter(|r| budget.is_multiple_of(*r) && budget / r >= min_dim)
        .map(|r| (r, budget / r))
        .collect()
}

/// Synthetic accuracy oracle selectable from configuration files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OracleSpec {
    /// Accuracy 1 while every group sparsity is at most `max_sparsity`, else 0.
    Threshold { max_sparsity: f64 },
    /// `base · retained_energy^exponent`.
    Energy { base: f64, exponent: f64 },
}

impl OracleSpec {
    pub fn build(&self, original: &[OperatorGroup]) -> Box<dyn AccuracyOracle + Send + Sync> {
        match *self {
            Self::Threshold { max_sparsity } => Box::new(ThresholdOracle::new(max_sparsity)),
            Self::Energy { base, exponent } => Box::new(EnergyOracle::new(original, base, exponent)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PruneVariant {
    /// Weights as given.
    Dense,
    /// One pruning pass at a fixed group sparsity.
    Fixed { orientation: Orientation, sparsity: f64 },
    /// The iterative schedule against the configured oracle.
    Schedule {
        orientation: Orientation,
        initial_sparsity: f64,
        delta: f64,
        epsilon: f64,
        target_accuracy: f64,
        #[serde(default = "one")]
        max_attempts: usize,
    },
}

fn one() -> usize {
    1
}

impl PruneVariant {
    pub fn orientation(&self) -> Option<Orientation> {
        match self {
            Self::Dense => None,
            Self::Fixed { orientation, .. } | Self::Schedule { orientation, .. } => Some(*orientation),
        }
    }

    /// Short label for tables, e.g. `dense`, `column@0.8`, `row@sched`.
    pub fn label(&self) -> String {
        match self {
            Self::Dense => "dense".into(),
            Self::Fixed { orientation, sparsity } => format!("{orientation}@{sparsity}"),
            Self::Schedule { orientation, .. } => format!("{orientation}@sched"),
        }
    }
}

/// One operator of the workload with its lowered weight matrix and raw inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadOp {
    pub name: String,
    pub spec: OperatorSpec,
    pub weights: DenseMatrix,
    pub inputs: DenseMatrix,
}

#[derive(Clone, Debug)]
pub struct DseConfig {
    pub pe_budget: usize,
    pub min_dim: usize,
    /// Memory interface and tile depth shared by every shape.
    pub mem_ports: usize,
    pub port_width_bits: usize,
    pub tile_depth: Option<usize>,
    pub dataflows: Vec<Dataflow>,
    pub variants: Vec<PruneVariant>,
    pub oracle: OracleSpec,
    pub workload: Vec<WorkloadOp>,
}

impl DseConfig {
    pub fn new(pe_budget: usize, workload: Vec<WorkloadOp>) -> Self {
        Self {
            pe_budget,
            min_dim: 2,
            mem_ports: 8,
            port_width_bits: 32,
            tile_depth: None,
            dataflows: Dataflow::ALL.to_vec(),
            variants: vec![PruneVariant::Dense],
            oracle: OracleSpec::Threshold { max_sparsity: 1.0 },
            workload,
        }
    }

    fn arch(&self, (rows, cols): (usize, usize)) -> ArchConfig {
        ArchConfig {
            mem_ports: self.mem_ports,
            port_width_bits: self.port_width_bits,
            tile_depth: self.tile_depth,
            ..ArchConfig::new(rows, cols)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DseCell {
    pub shape: (usize, usize),
    pub variant: usize,
    pub dataflow: Dataflow,
    pub operator: usize,
    pub result: Option<SimResult>,
    pub error: Option<String>,
}

impl DseCell {
    pub fn cycles(&self) -> Option<u64> {
        self.result.as_ref().map(|r| r.cycles)
    }
}

/// Complete cross product of shapes, variants, operators and dataflows.
/// Cells are ordered shape-major, then variant, operator and dataflow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DseGrid {
    pub shapes: Vec<(usize, usize)>,
    pub variants: Vec<PruneVariant>,
    pub dataflows: Vec<Dataflow>,
    pub operators: Vec<String>,
    /// Vector length used per shape (the array height).
    pub vector_len: Vec<usize>,
    pub cells: Vec<DseCell>,
}

impl DseGrid {
    fn index(&self, s: usize, v: usize, o: usize, d: usize) -> usize {
        ((s * self.variants.len() + v) * self.operators.len() + o) * self.dataflows.len() + d
    }

    pub fn cell(&self, shape: usize, variant: usize, operator: usize, dataflow: usize) -> &DseCell {
        &self.cells[self.index(shape, variant, operator, dataflow)]
    }

    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.result.is_none()).count()
    }

    /// Whole-workload cycles of `(shape, variant)` with one dataflow applied
    /// to every operator.
    pub fn uniform_cycles(&self, shape: usize, variant: usize, dataflow: usize) -> Option<u64> {
        (0..self.operators.len()).map(|o| self.cell(shape, variant, o, dataflow).cycles()).sum()
    }
}

/// Chosen configuration: shape, pruning variant and a dataflow per operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub shape: (usize, usize),
    pub variant: usize,
    pub assignment: Vec<Dataflow>,
    pub operator_cycles: Vec<u64>,
    pub total_cycles: u64,
}

/// Best single cell of one operator over the whole grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalOptimum {
    pub operator: usize,
    pub shape: (usize, usize),
    pub variant: usize,
    pub dataflow: Dataflow,
    pub cycles: u64,
}

fn prune_workload(
    cfg: &DseConfig,
    variant: &PruneVariant,
    arch: &ArchConfig,
    weights: &[DenseMatrix],
) -> Result<Vec<DenseMatrix>> {
    let Some(orientation) = variant.orientation() else {
        return Ok(weights.to_vec());
    };
    let (r, t) = (arch.pe_rows, arch.tile_depth());
    let (tile_rows, tile_cols) = match orientation {
        Orientation::Column => (r, t),
        Orientation::Row => (t, r),
    };
    // One group per operator kind, as in the schedule.
    let mut kinds: Vec<_> = cfg.workload.iter().map(|op| op.spec.kind()).collect();
    kinds.sort();
    kinds.dedup();
    let groups: Vec<OperatorGroup> = kinds
        .iter()
        .enumerate()
        .map(|(id, &kind)| {
            let members =
                cfg.workload.iter().zip(weights).filter(|(op, _)| op.spec.kind() == kind).map(|(_, w)| w.clone());
            OperatorGroup::new(id, kind, members.collect())
        })
        .collect();
    let pruned: Vec<Vec<DenseMatrix>> = match *variant {
        PruneVariant::Dense => unreachable!(),
        PruneVariant::Fixed { orientation, sparsity } => {
            let pc = PruneConfig {
                vector_len: r,
                orientation,
                initial_sparsity: sparsity,
                delta: 1.0,
                epsilon: 0.0,
                target_accuracy: 0.0,
                max_attempts: 1,
            };
            groups
                .iter()
                .map(|g| prune_vectors(&g.clone().with_sparsity(sparsity), tile_rows, tile_cols, &pc))
                .collect::<Result<_>>()?
        }
        PruneVariant::Schedule { orientation, initial_sparsity, delta, epsilon, target_accuracy, max_attempts } => {
            let pc = PruneConfig {
                vector_len: r,
                orientation,
                initial_sparsity,
                delta,
                epsilon,
                target_accuracy,
                max_attempts,
            };
            let oracle = cfg.oracle.build(&groups);
            let cfgs = vec![pc; groups.len()];
            prune_schedule(&groups, &cfgs, tile_rows, tile_cols, oracle.as_ref())?.weights
        }
    };
    // Scatter group members back to workload order.
    let mut cursors = vec![0usize; kinds.len()];
    Ok(cfg
        .workload
        .iter()
        .map(|op| {
            let g = kinds.binary_search(&op.spec.kind()).unwrap();
            cursors[g] += 1;
            pruned[g][cursors[g] - 1].clone()
        })
        .collect())
}

/// Prunes the workload per (shape, variant) and simulates every operator
/// under every dataflow. Cells run in parallel; the grid order is fixed.
pub fn run_dse(cfg: &DseConfig) -> Result<DseGrid> {
    if cfg.workload.is_empty() {
        return Err(Error::Empty("DSE workload has no operators".into()));
    }
    if cfg.dataflows.is_empty() || cfg.variants.is_empty() {
        return Err(Error::Empty("DSE needs at least one dataflow and one variant".into()));
    }
    let shapes = enumerate_shapes(cfg.pe_budget, cfg.min_dim);
    if shapes.is_empty() {
        return Err(Error::Empty(format!(
            "no shape with {} PEs and both dimensions at least {}",
            cfg.pe_budget, cfg.min_dim
        )));
    }
    let lowered: Vec<(DenseMatrix, DenseMatrix)> = cfg
        .workload
        .iter()
        .map(|op| lower_operator(&op.spec, &op.weights, &op.inputs))
        .collect::<Result<_>>()?;
    let weights: Vec<DenseMatrix> = lowered.iter().map(|(w, _)| w.clone()).collect();

    let configs: Vec<(usize, usize)> =
        (0..shapes.len()).flat_map(|s| (0..cfg.variants.len()).map(move |v| (s, v))).collect();
    let pruned: Vec<Result<Vec<DenseMatrix>>> = configs
        .par_iter()
        .map(|&(s, v)| {
            let arch = cfg.arch(shapes[s]);
            arch.validate()?;
            prune_workload(cfg, &cfg.variants[v], &arch, &weights)
        })
        .collect();

    let (n_ops, n_df) = (cfg.workload.len(), cfg.dataflows.len());
    let cells: Vec<DseCell> = (0..configs.len() * n_ops * n_df)
        .into_par_iter()
        .map(|i| {
            let d = i % n_df;
            let o = (i / n_df) % n_ops;
            let sv = i / (n_df * n_ops);
            let (s, v) = configs[sv];
            let dataflow = cfg.dataflows[d];
            let outcome = pruned[sv].as_ref().map_err(|e| e.to_string()).and_then(|ws| {
                simulate_gemm(&cfg.arch(shapes[s]), dataflow, &ws[o], &lowered[o].1).map_err(|e| e.to_string())
            });
            let (result, error) = match outcome {
                Ok((_, r)) => (Some(r), None),
                Err(e) => (None, Some(e)),
            };
            DseCell { shape: shapes[s], variant: v, dataflow, operator: o, result, error }
        })
        .collect();

    Ok(DseGrid {
        vector_len: shapes.iter().map(|s| s.0).collect(),
        shapes,
        variants: cfg.variants.clone(),
        dataflows: cfg.dataflows.clone(),
        operators: cfg.workload.iter().map(|op| op.name.clone()).collect(),
        cells,
    })
}

/// Per operator the fastest dataflow for each (shape, variant), then the
/// (shape, variant) with the smallest summed cycles. Ties go to the earlier
/// entry in enumeration order.
pub fn select_best(grid: &DseGrid) -> Result<Selection> {
    let mut best: Option<Selection> = None;
    for s in 0..grid.shapes.len() {
        'variant: for v in 0..grid.variants.len() {
            let mut assignment = Vec::with_capacity(grid.operators.len());
            let mut operator_cycles = Vec::with_capacity(grid.operators.len());
            for o in 0..grid.operators.len() {
                let pick = (0..grid.dataflows.len())
                    .filter_map(|d| grid.cell(s, v, o, d).cycles().map(|c| (c, d)))
                    .min_by_key(|&(c, d)| (c, d));
                let Some((c, d)) = pick else { continue 'variant };
                assignment.push(grid.dataflows[d]);
                operator_cycles.push(c);
            }
            let total_cycles = operator_cycles.iter().sum();
            if best.as_ref().is_none_or(|b| total_cycles < b.total_cycles) {
                best = Some(Selection { shape: grid.shapes[s], variant: v, assignment, operator_cycles, total_cycles });
            }
        }
    }
    best.ok_or_else(|| Error::Empty("DSE grid has no complete configuration".into()))
}

/// Fastest cell of each operator taken on its own.
pub fn operator_optima(grid: &DseGrid) -> Vec<LocalOptimum> {
    (0..grid.operators.len())
        .filter_map(|o| {
            grid.cells
                .iter()
                .filter(|c| c.operator == o)
                .filter_map(|c| c.cycles().map(|cy| (cy, c)))
                .min_by_key(|(cy, _)| *cy)
                .map(|(cycles, c)| LocalOptimum {
                    operator: o,
                    shape: c.shape,
                    variant: c.variant,
                    dataflow: c.dataflow,
                    cycles,
                })
        })
        .collect()
}
