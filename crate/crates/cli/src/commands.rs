//! Subcommand implementations.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use flexisaga::dse::{operator_optima, run_dse, select_best, DseGrid, OracleSpec, PruneVariant};
use flexisaga::formats::{encode, footprint_bits, footprint_bits_with_column_height, Encoding, FormatKind};
use flexisaga::io::{load_matrix, store_matrix};
use flexisaga::lowering::{lower_operator, tile_matrix, OperatorKind, OperatorSpec};
use flexisaga::pruning::{prune_schedule, Orientation, OperatorGroup, PruneConfig};
use flexisaga::sim::{best_gemm_dataflow, simulate_gemm, simulate_gemm_traced, ArchConfig, Dataflow, SimResult};
use flexisaga::{measure_sparsity, random_dense, random_sparse, DenseMatrix, Sparsity};
use serde::Serialize;
use serde_json::json;

use crate::failure::{Failure, Outcome};
use crate::schema::{read_json, write_json, DseFile, DseOperatorFile, RunManifest};
use crate::{
    Command, DataflowArg, DecodeArgs, DseArgs, EncodeArgs, FootprintArgs, GenCommand, GenMatrixArgs, GenWorkloadArgs,
    LowerArgs, Preset, PruneArgs, SimArgs,
};

pub fn run(command: Command) -> Outcome<()> {
    match command {
        Command::Footprint(a) => footprint(a),
        Command::Encode(a) => encode_cmd(a),
        Command::Decode(a) => decode_cmd(a),
        Command::Lower(a) => lower(a),
        Command::Prune(a) => prune(a),
        Command::Sim(a) => sim(a),
        Command::Dse(a) => dse(a),
        Command::Gen(GenCommand::Matrix(a)) => gen_matrix(a),
        Command::Gen(GenCommand::Workload(a)) => gen_workload(a),
    }
}

fn prepare(dir: &Path) -> Outcome<()> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::io(e, dir))
}

fn load(path: &Path, manifest: &mut RunManifest) -> Outcome<DenseMatrix> {
    let m = load_matrix(path).map_err(|e| Failure::lib(e, path))?;
    manifest.inputs.push(path.to_path_buf());
    Ok(m)
}

fn store(m: &DenseMatrix, name: &str, manifest: &mut RunManifest) -> Outcome<()> {
    let path = manifest.output_dir.join(name);
    store_matrix(m, &path).map_err(|e| Failure::lib(e, &path))?;
    manifest.outputs.push(path);
    Ok(())
}

fn csv_writer(path: &Path) -> Outcome<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
}

fn csv_done(mut w: csv::Writer<std::fs::File>, path: &Path) -> Outcome<()> {
    w.flush().map_err(|e| Failure::io(e, path))
}

fn csv_row<I, T>(w: &mut csv::Writer<std::fs::File>, path: &Path, row: I) -> Outcome<()>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    w.write_record(row).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_json<T: Serialize>(value: &T) {
    emit(&(serde_json::to_string_pretty(value).expect("serializable") + "\n"));
}

fn footprint(a: FootprintArgs) -> Outcome<()> {
    let mut manifest = RunManifest::new("footprint", &a.out.out_dir);
    let m = load(&a.matrix, &mut manifest)?;
    prepare(&a.out.out_dir)?;
    let dense = footprint_bits(&m, FormatKind::Dense);
    let path = a.out.out_dir.join("footprint.csv");
    let mut w = csv_writer(&path)?;
    csv_row(&mut w, &path, ["format", "bits", "bytes", "ratio_to_dense"])?;
    let mut table = String::from("format,bits,bytes,ratio_to_dense\n");
    for kind in &a.formats.0 {
        let bits = match a.column_height {
            Some(n) => footprint_bits_with_column_height(&m, *kind, n)?,
            None => footprint_bits(&m, *kind),
        };
        let row = [kind.name().to_string(), bits.to_string(), bits.div_ceil(8).to_string(), format!("{:.6}", bits as f64 / dense as f64)];
        table.push_str(&row.join(","));
        table.push('\n');
        csv_row(&mut w, &path, &row)?;
    }
    csv_done(w, &path)?;
    emit(&table);
    manifest.outputs.push(path);
    manifest.config = Some(json!({
        "formats": a.formats.0.iter().map(|k| k.name()).collect::<Vec<_>>(),
        "column_height": a.column_height,
    }));
    manifest.write()
}

fn encode_cmd(a: EncodeArgs) -> Outcome<()> {
    let mut manifest = RunManifest::new("encode", &a.out.out_dir);
    let m = load(&a.matrix, &mut manifest)?;
    prepare(&a.out.out_dir)?;
    let enc = encode(&m, a.format)?;
    let stem = a.matrix.file_stem().and_then(|s| s.to_str()).unwrap_or("matrix");
    let path = a.out.out_dir.join(format!("{stem}.{}.fsen", a.format.name()));
    std::fs::write(&path, enc.to_bytes()).map_err(|e| Failure::io(e, &path))?;
    print_json(&json!({ "format": a.format.name(), "footprint_bits": enc.footprint_bits(), "file": path }));
    manifest.outputs.push(path);
    manifest.config = Some(json!({ "format": a.format.name() }));
    manifest.write()
}

fn decode_cmd(a: DecodeArgs) -> Outcome<()> {
    let mut manifest = RunManifest::new("decode", &a.out.out_dir);
    let bytes = std::fs::read(&a.input).map_err(|e| Failure::io(e, &a.input))?;
    manifest.inputs.push(a.input.clone());
    let enc = Encoding::from_bytes(&bytes).map_err(|e| Failure::lib(e, &a.input))?;
    let m = enc.decode()?;
    prepare(&a.out.out_dir)?;
    let stem = a.input.file_stem().and_then(|s| s.to_str()).unwrap_or("matrix");
    let stem = stem.strip_suffix(&format!(".{}", enc.kind().name())).unwrap_or(stem);
    store(&m, &format!("{stem}.fsmx"), &mut manifest)?;
    manifest.config = Some(json!({ "format": enc.kind().name() }));
    manifest.write()
}

fn lower(a: LowerArgs) -> Outcome<()> {
    let mut manifest = RunManifest::new("lower", &a.out.out_dir);
    let op: OperatorSpec = read_json(&a.op)?;
    let w = load(&a.weights, &mut manifest)?;
    let x = load(&a.inputs, &mut manifest)?;
    let (wl, xl) = lower_operator(&op, &w, &x)?;
    prepare(&a.out.out_dir)?;
    store(&wl, "weights.fsmx", &mut manifest)?;
    store(&xl, "inputs.fsmx", &mut manifest)?;
    let (m, k, n) = op.gemm_dims()?;
    let mut report = json!({ "m": m, "k": k, "n": n });
    if let Some((tr, tc)) = a.tile {
        let wg = tile_matrix(&wl, tr, tc)?;
        report["weight_tiles"] = json!({
            "tile_rows": tr,
            "tile_cols": tc,
            "grid_rows": wg.grid_rows,
            "grid_cols": wg.grid_cols,
            "empty_tiles": wg.tiles().iter().filter(|t| t.nnz() == 0).count(),
        });
    }
    let path = a.out.out_dir.join("lower.json");
    write_json(&path, &report)?;
    print_json(&report);
    manifest.outputs.push(path);
    manifest.config = Some(json!({ "op": op, "tile": a.tile }));
    manifest.write()
}

fn prune(a: PruneArgs) -> Outcome<()> {
    let mut manifest = RunManifest::new("prune", &a.out.out_dir);
    let cfg: PruneConfig = read_json(&a.config)?;
    cfg.validate()?;
    let mut names = Vec::new();
    let mut members = Vec::new();
    let mut seen = HashSet::new();
    for p in &a.weights {
        let name = p.file_name().and_then(|s| s.to_str()).unwrap_or("weights.fsmx").to_string();
        if !seen.insert(name.clone()) {
            return Err(Failure::invalid(format!("two weight files are named {name}")));
        }
        members.push(load(p, &mut manifest)?);
        names.push(name);
    }
    prepare(&a.out.out_dir)?;
    // The group kind only labels the group; one invocation prunes one group.
    let groups = [OperatorGroup::new(0, OperatorKind::Fc, members)];
    let scratch = a.out.out_dir.join("oracle");
    let oracle = a.oracle.build(&groups, &names, &scratch);
    let (tr, tc) = a.tile;
    let outcome = prune_schedule(&groups, std::slice::from_ref(&cfg), tr, tc, oracle.as_ref())?;

    for (m, name) in outcome.weights[0].iter().zip(&names) {
        store(m, name, &mut manifest)?;
    }
    let path = a.out.out_dir.join("history.csv");
    let mut w = csv_writer(&path)?;
    csv_row(&mut w, &path, ["step", "s_j", "accuracy", "attempts", "accepted"])?;
    for e in &outcome.history {
        csv_row(
            &mut w,
            &path,
            [e.step.to_string(), e.sparsities[0].to_string(), e.accuracy.to_string(), e.attempts.to_string(), e.accepted.to_string()],
        )?;
    }
    csv_done(w, &path)?;
    manifest.outputs.push(path);

    let achieved: Vec<f64> = outcome.weights[0].iter().map(|m| measure_sparsity(m).value()).collect();
    print_json(&json!({
        "accepted_steps": outcome.accepted_steps(),
        "final_sparsity": outcome.final_sparsities().map(|s| s[0]),
        "element_sparsity": achieved,
    }));
    manifest.config = Some(json!({ "prune": cfg, "tile": [tr, tc], "oracle": format!("{:?}", a.oracle) }));
    manifest.write()
}

#[derive(Serialize)]
struct SimReport {
    dataflow: Dataflow,
    arch: ArchConfig,
    m: usize,
    k: usize,
    n: usize,
    weight_sparsity: f64,
    result: SimResult,
}

fn sim(a: SimArgs) -> Outcome<()> {
    let mut manifest = RunManifest::new("sim", &a.out.out_dir);
    let arch: ArchConfig = read_json(&a.arch)?;
    arch.validate()?;
    manifest.inputs.push(a.arch.clone());
    let w = load(&a.weights, &mut manifest)?;
    let x = load(&a.inputs, &mut manifest)?;
    let op: Option<OperatorSpec> = a.op.as_deref().map(read_json).transpose()?;
    let (w, x) = match &op {
        Some(op) => lower_operator(op, &w, &x)?,
        None => (w, x),
    };
    let df = match a.dataflow {
        DataflowArg::One(df) => df,
        DataflowArg::Best => best_gemm_dataflow(&arch, &w, &x)?.0,
    };
    prepare(&a.out.out_dir)?;
    let (out, result) = if a.trace {
        let traced = simulate_gemm_traced(&arch, df, &w, &x)?;
        let path = a.out.out_dir.join("trace.csv");
        let mut tw = csv_writer(&path)?;
        csv_row(&mut tw, &path, ["step", "unit", "action", "address", "cycle", "port"])?;
        let opt = |v: Option<String>| v.unwrap_or_default();
        for e in &traced.trace {
            csv_row(
                &mut tw,
                &path,
                [
                    e.step.to_string(),
                    e.unit.to_string(),
                    e.action.name().to_string(),
                    e.address.to_string(),
                    opt(e.cycle.map(|c| c.to_string())),
                    opt(e.port.map(|p| p.to_string())),
                ],
            )?;
        }
        csv_done(tw, &path)?;
        manifest.outputs.push(path);
        (traced.output, traced.result)
    } else {
        simulate_gemm(&arch, df, &w, &x)?
    };
    if a.output {
        store(&out, "output.fsmx", &mut manifest)?;
    }
    let report = SimReport {
        dataflow: df,
        arch,
        m: w.rows(),
        k: w.cols(),
        n: x.cols(),
        weight_sparsity: measure_sparsity(&w).value(),
        result,
    };
    let path = a.out.out_dir.join("result.json");
    write_json(&path, &report)?;
    print_json(&report);
    manifest.outputs.push(path);
    manifest.config = Some(json!({ "arch": report.arch, "dataflow": df.name(), "best": a.dataflow == DataflowArg::Best, "op": op }));
    manifest.write()
}

fn dse(a: DseArgs) -> Outcome<()> {
    let mut manifest = RunManifest::new("dse", &a.out.out_dir);
    let file: DseFile = read_json(&a.config)?;
    manifest.inputs.push(a.config.clone());
    let base = a.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let cfg = file.resolve(&base, &mut manifest.inputs)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| Failure::invalid(format!("thread pool: {e}")))?;
    let grid = pool.install(|| run_dse(&cfg))?;
    prepare(&a.out.out_dir)?;

    let path = a.out.out_dir.join("grid.csv");
    write_grid(&grid, &path)?;
    manifest.outputs.push(path);

    let best = select_best(&grid).ok();
    let summary = json!({
        "shapes": grid.shapes,
        "variants": grid.variants.iter().map(PruneVariant::label).collect::<Vec<_>>(),
        "operators": grid.operators,
        "cells": grid.cells.len(),
        "failed_cells": grid.failed_cells(),
        "best": best.as_ref().map(|s| json!({
            "shape": format!("{}x{}", s.shape.0, s.shape.1),
            "variant": grid.variants[s.variant].label(),
            "assignment": s.assignment,
            "operator_cycles": s.operator_cycles,
            "total_cycles": s.total_cycles,
        })),
        "operator_optima": operator_optima(&grid).iter().map(|o| json!({
            "operator": grid.operators[o.operator],
            "shape": format!("{}x{}", o.shape.0, o.shape.1),
            "variant": grid.variants[o.variant].label(),
            "dataflow": o.dataflow,
            "cycles": o.cycles,
        })).collect::<Vec<_>>(),
    });
    let path = a.out.out_dir.join("summary.json");
    write_json(&path, &summary)?;
    print_json(&summary);
    manifest.outputs.push(path);
    manifest.config = Some(serde_json::to_value(&file).expect("serializable"));
    manifest.write()?;
    if best.is_none() {
        return Err(Failure::invalid("no configuration simulated every operator"));
    }
    Ok(())
}

fn write_grid(grid: &DseGrid, path: &Path) -> Outcome<()> {
    let mut w = csv_writer(path)?;
    csv_row(
        &mut w,
        path,
        ["shape", "dataflow", "n", "orientation", "variant", "operator", "cycles", "reads", "writes", "macs", "error"],
    )?;
    for c in &grid.cells {
        let variant = &grid.variants[c.variant];
        let (cycles, reads, writes, macs) = match &c.result {
            Some(r) => {
                let reads = r.weight_words_read + r.metadata_words_read + r.input_words_read + r.partial_words_read;
                (r.cycles.to_string(), reads.to_string(), r.output_words_written.to_string(), r.mac_ops.to_string())
            }
            None => Default::default(),
        };
        let n = if variant.orientation().is_some() { c.shape.0.to_string() } else { String::new() };
        csv_row(
            &mut w,
            path,
            [
                format!("{}x{}", c.shape.0, c.shape.1),
                c.dataflow.name().to_string(),
                n,
                variant.orientation().map(|o| o.name().to_string()).unwrap_or_default(),
                variant.label(),
                grid.operators[c.operator].clone(),
                cycles,
                reads,
                writes,
                macs,
                c.error.clone().unwrap_or_default(),
            ],
        )?;
    }
    csv_done(w, path)
}

fn gen_matrix(a: GenMatrixArgs) -> Outcome<()> {
    let mut manifest = RunManifest::new("gen", &a.out.out_dir);
    if a.rows == 0 || a.cols == 0 {
        return Err(Failure::invalid(format!("dimensions must be positive, got {}x{}", a.rows, a.cols)));
    }
    let s = Sparsity::new(a.sparsity)?;
    prepare(&a.out.out_dir)?;
    store(&random_sparse(a.rows, a.cols, s, a.seed), &a.name, &mut manifest)?;
    manifest.seed = Some(a.seed);
    manifest.config = Some(json!({ "kind": "matrix", "rows": a.rows, "cols": a.cols, "sparsity": a.sparsity }));
    manifest.write()
}

fn preset_ops(preset: Preset) -> Vec<(&'static str, OperatorSpec, f64)> {
    let conv = |cin, cout, hw, stride| OperatorSpec::Conv {
        in_channels: cin,
        out_channels: cout,
        kernel_h: 3,
        kernel_w: 3,
        input_h: hw,
        input_w: hw,
        stride,
        padding: 1,
    };
    let fc = |inp, out, batch| OperatorSpec::Fc { in_features: inp, out_features: out, batch };
    match preset {
        Preset::Mixed => vec![
            ("conv1", conv(8, 32, 10, 1), 0.0),
            ("conv2", conv(32, 32, 8, 2), 0.0),
            ("fc1", fc(256, 64, 4), 0.0),
            ("fc2", fc(64, 16, 4), 0.0),
        ],
        Preset::Skewed => vec![("tall", fc(32, 144, 2), 0.5), ("wide", fc(32, 4, 144), 0.5), ("square", fc(36, 36, 36), 0.5)],
    }
}

fn gen_workload(a: GenWorkloadArgs) -> Outcome<()> {
    let mut manifest = RunManifest::new("gen", &a.out.out_dir);
    prepare(&a.out.out_dir)?;
    let mut workload = Vec::new();
    for (i, (name, spec, s)) in preset_ops(a.preset).into_iter().enumerate() {
        let (m, k, _) = spec.gemm_dims()?;
        let (ir, ic) = spec.input_shape();
        let seed = a.seed.wrapping_add(2 * i as u64);
        let w = random_sparse(m, k, Sparsity::new(s)?, seed);
        let x = random_dense(ir, ic, seed.wrapping_add(1));
        let (wn, xn) = (format!("{name}_w.fsmx"), format!("{name}_x.fsmx"));
        store(&w, &wn, &mut manifest)?;
        store(&x, &xn, &mut manifest)?;
        workload.push(DseOperatorFile { name: name.into(), op: spec, weights: PathBuf::from(wn), inputs: PathBuf::from(xn) });
    }
    let file = DseFile {
        pe_budget: a.pe_budget,
        min_dim: 2,
        mem_ports: 8,
        port_width_bits: 32,
        tile_depth: None,
        dataflows: Dataflow::ALL.to_vec(),
        variants: vec![
            PruneVariant::Dense,
            PruneVariant::Fixed { orientation: Orientation::Column, sparsity: 0.8 },
            PruneVariant::Fixed { orientation: Orientation::Row, sparsity: 0.8 },
        ],
        oracle: OracleSpec::Threshold { max_sparsity: 1.0 },
        workload,
    };
    let path = a.out.out_dir.join("dse.json");
    write_json(&path, &file)?;
    manifest.outputs.push(path);
    manifest.seed = Some(a.seed);
    manifest.config = Some(json!({ "kind": "workload", "preset": format!("{:?}", a.preset).to_lowercase(), "pe_budget": a.pe_budget }));
    manifest.write()
}
