//! File schemas read and written by the command-line tool.

use std::path::{Path, PathBuf};

use flexisaga::dse::{DseConfig, OracleSpec, PruneVariant, WorkloadOp};
use flexisaga::io::load_matrix;
use flexisaga::lowering::OperatorSpec;
use flexisaga::sim::Dataflow;
use serde::{Deserialize, Serialize};

use crate::failure::{Failure, Outcome};

/// Record of one invocation, written as `manifest.json` in the output directory.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub args: Vec<String>,
    pub inputs: Vec<PathBuf>,
    pub config: Option<serde_json::Value>,
    pub output_dir: PathBuf,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub version: String,
}

impl RunManifest {
    pub fn new(subcommand: &str, output_dir: &Path) -> Self {
        Self {
            subcommand: subcommand.into(),
            args: std::env::args().skip(1).collect(),
            inputs: Vec::new(),
            config: None,
            output_dir: output_dir.to_path_buf(),
            outputs: Vec::new(),
            seed: None,
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    pub fn write(&self) -> Outcome<()> {
        let path = self.output_dir.join("manifest.json");
        write_json(&path, self)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DseOperatorFile {
    pub name: String,
    pub op: OperatorSpec,
    /// Lowered weight matrix (FSMX), relative to the config file.
    pub weights: PathBuf,
    /// Raw input matrix (FSMX), relative to the config file.
    pub inputs: PathBuf,
}

fn default_min_dim() -> usize {
    2
}
fn default_ports() -> usize {
    8
}
fn default_width() -> usize {
    32
}
fn default_dataflows() -> Vec<Dataflow> {
    Dataflow::ALL.to_vec()
}
fn default_variants() -> Vec<PruneVariant> {
    vec![PruneVariant::Dense]
}
fn default_oracle() -> OracleSpec {
    OracleSpec::Threshold { max_sparsity: 1.0 }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DseFile {
    pub pe_budget: usize,
    #[serde(default = "default_min_dim")]
    pub min_dim: usize,
    #[serde(default = "default_ports")]
    pub mem_ports: usize,
    #[serde(default = "default_width")]
    pub port_width_bits: usize,
    #[serde(default)]
    pub tile_depth: Option<usize>,
    #[serde(default = "default_dataflows")]
    pub dataflows: Vec<Dataflow>,
    #[serde(default = "default_variants")]
    pub variants: Vec<PruneVariant>,
    #[serde(default = "default_oracle")]
    pub oracle: OracleSpec,
    pub workload: Vec<DseOperatorFile>,
}

impl DseFile {
    /// Loads every referenced matrix; relative paths resolve against `base`.
    pub fn resolve(&self, base: &Path, inputs: &mut Vec<PathBuf>) -> Outcome<DseConfig> {
        let mut workload = Vec::with_capacity(self.workload.len());
        for op in &self.workload {
            let w = base.join(&op.weights);
            let x = base.join(&op.inputs);
            let weights = load_matrix(&w).map_err(|e| Failure::lib(e, &w))?;
            let inputs_m = load_matrix(&x).map_err(|e| Failure::lib(e, &x))?;
            inputs.push(w);
            inputs.push(x);
            workload.push(WorkloadOp { name: op.name.clone(), spec: op.op, weights, inputs: inputs_m });
        }
        Ok(DseConfig {
            pe_budget: self.pe_budget,
            min_dim: self.min_dim,
            mem_ports: self.mem_ports,
            port_width_bits: self.port_width_bits,
            tile_depth: self.tile_depth,
            dataflows: self.dataflows.clone(),
            variants: self.variants.clone(),
            oracle: self.oracle,
            workload,
        })
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Outcome<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::io(e, path))?;
    serde_json::from_str(&text).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Failure::io(e, path))
}
