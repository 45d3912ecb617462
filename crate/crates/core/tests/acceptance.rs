//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report is always printed. Exits
//! non-zero if an asserted criterion fails. Lines tagged `info` report
//! readings that are known not to hold and are not asserted.

use std::cell::RefCell;
use std::process::ExitCode;

use flexisaga::dse::{operator_optima, run_dse, select_best, DseConfig, PruneVariant, WorkloadOp};
use flexisaga::formats::{
    encode, encode_csb, encode_two_stage_bitmap, footprint_bits, footprint_bits_with_column_height,
    zero_column_probability, FormatKind,
};
use flexisaga::lowering::{tile_matrix, OperatorSpec};
use flexisaga::pruning::{
    prune_schedule, prune_vectors, zero_vectors, Candidate, OperatorGroup, Orientation, PruneConfig, ThresholdOracle,
};
use flexisaga::sim::{best_dataflow, simulate_gemm, simulate_operator, ArchConfig, Dataflow};
use flexisaga::{gemm_ref, random_dense, random_sparse, DenseMatrix, SeededRng, Sparsity};

struct Report {
    failed: Vec<String>,
}

impl Report {
    fn line(&mut self, id: &str, pass: bool, text: String) {
        println!("[{}] {id}: {text}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(id.to_string());
        }
    }

    fn info(&self, id: &str, pass: bool, text: String) {
        println!("[INFO] {id} ({}, not asserted): {text}", if pass { "holds" } else { "does not hold" });
    }
}

fn sp(s: f64) -> Sparsity {
    Sparsity::new(s).unwrap()
}

/// Independent f64 GEMM returning exact sums and magnitude sums.
fn oracle_gemm(w: &DenseMatrix, x: &DenseMatrix) -> (Vec<f64>, Vec<f64>) {
    let (m, k, n) = (w.rows(), w.cols(), x.cols());
    let mut exact = vec![0f64; m * n];
    let mut mag = vec![0f64; m * n];
    for i in 0..m {
        for j in 0..n {
            for kk in 0..k {
                let p = w.get(i, kk) as f64 * x.get(kk, j) as f64;
                exact[i * n + j] += p;
                mag[i * n + j] += p.abs();
            }
        }
    }
    (exact, mag)
}

fn criterion_1(rep: &mut Report) {
    let mut rng = SeededRng::new(0xACCE_0001);
    let sparsities = [0.0, 0.5, 0.8, 0.95];
    let (mut cases, mut worst, mut plain_over, mut elems) = (0, 0f64, 0usize, 0usize);
    let mut ref_ok = true;
    let start = std::time::Instant::now();
    for g in 0..100 {
        let dim = |rng: &mut SeededRng| 1 + rng.below(64) as usize;
        let (m, k, n) = (dim(&mut rng), dim(&mut rng), dim(&mut rng));
        let s = sparsities[g % 4];
        let w = random_sparse(m, k, sp(s), rng.next_u64());
        let x = random_dense(k, n, rng.next_u64());
        let arch = ArchConfig {
            tile_depth: if rng.below(2) == 0 { None } else { Some(1 + rng.below(8) as usize) },
            ..ArchConfig::new(2 + rng.below(7) as usize, 2 + rng.below(7) as usize)
        };
        let (exact, mag) = oracle_gemm(&w, &x);
        let r = gemm_ref(&w, &x).unwrap();
        ref_ok &= r.data().iter().zip(&exact).all(|(a, b)| *a == *b as f32);
        for df in Dataflow::ALL {
            let (out, _) = simulate_gemm(&arch, df, &w, &x).unwrap();
            cases += 1;
            for (i, (&got, &e)) in out.data().iter().zip(&exact).enumerate() {
                let err = (got as f64 - e).abs();
                elems += 1;
                if err == 0.0 {
                    continue;
                }
                worst = worst.max(err / mag[i].max(e.abs()));
                if err / e.abs() > 1e-5 {
                    plain_over += 1;
                }
            }
        }
    }
    rep.line(
        "1 functional equivalence",
        cases >= 700 && worst <= 1e-5 && ref_ok && start.elapsed().as_secs() < 300,
        format!(
            "{cases} cases, max |sim-ref|/max(|ref|, sum|w*x|) = {worst:.3e} (tol 1e-5), reference GEMM agrees with f64 oracle: {ref_ok}, {:.1}s",
            start.elapsed().as_secs_f64()
        ),
    );
    rep.info(
        "1 plain relative error",
        plain_over == 0,
        format!("{plain_over} of {elems} elements exceed |sim-ref|/|ref| > 1e-5 (cancellation near zero sums)"),
    );
}

fn example_arch() -> ArchConfig {
    ArchConfig::new(3, 2).with_tile_depth(4)
}

fn two_column_tile() -> DenseMatrix {
    DenseMatrix::from_rows(&[vec![1.5, 0.0, 0.0, -2.0], vec![0.5, 0.0, 0.0, 3.0], vec![0.0, 0.0, 0.0, -1.25]]).unwrap()
}

fn criterion_2(rep: &mut Report) {
    let w = two_column_tile();
    let x = random_dense(4, 2, 2);
    let (_, os) = simulate_gemm(&example_arch(), Dataflow::SOs, &w, &x).unwrap();
    let (_, ws) = simulate_gemm(&example_arch(), Dataflow::SWs, &w, &x).unwrap();
    let wt = w.transpose();
    let (_, is) = simulate_gemm(&example_arch(), Dataflow::SIs, &wt, &random_dense(3, 2, 3)).unwrap();
    let pass = os.compute_steps() == 10
        && ws.compute_steps() == 10
        && is.compute_steps() == 10
        && os.weight_words_read == 7
        && ws.weight_words_read == 7;
    rep.line(
        "2 worked-example step counts",
        pass,
        format!(
            "steps sOS={} sWS={} sIS={} (expect 10 each); weight words sOS={} sWS={} sIS={} (expect 7, 7)",
            os.compute_steps(),
            ws.compute_steps(),
            is.compute_steps(),
            os.weight_words_read,
            ws.weight_words_read,
            is.weight_words_read
        ),
    );
}

fn criterion_3(rep: &mut Report) {
    let w = DenseMatrix::from_rows(&[vec![1.0, 0.0, 2.0, 0.0], vec![3.0, 0.0, 0.0, 4.0], vec![0.0, 0.0, 5.0, 0.0]])
        .unwrap();
    let x = random_dense(4, 2, 4);
    let (_, cs) = simulate_gemm(&example_arch(), Dataflow::CsOs, &w, &x).unwrap();
    let (_, s) = simulate_gemm(&example_arch(), Dataflow::SOs, &w, &x).unwrap();
    let merged = encode_csb(&w).merged_col_count();
    rep.line(
        "3 csOS advantage",
        merged == 2 && cs.weight_load_phases < s.weight_load_phases,
        format!(
            "CSB merged columns {merged}; load phases csOS={} sOS={}; compute steps csOS={} sOS={}",
            cs.weight_load_phases,
            s.weight_load_phases,
            cs.compute_steps(),
            s.compute_steps()
        ),
    );
}

fn criterion_4(rep: &mut Report) {
    let mut rng = SeededRng::new(0xACCE_0004);
    let (mut tiles, mut violations, mut zero_macs) = (0, 0, 0u64);
    while tiles < 1000 {
        let (r, c, t) = (2 + rng.below(5) as usize, 2 + rng.below(5) as usize, 2 + rng.below(7) as usize);
        let n = 1 + rng.below(8) as usize;
        let s = 0.2 + 0.7 * rng.next_unit();
        let arch = ArchConfig::new(r, c).with_tile_depth(t);

        // Column skipping: one R x T tile under sOS/sWS.
        let w = random_sparse(r, t, sp(s), rng.next_u64());
        let nz: Vec<usize> = (0..t).filter(|&j| !w.is_zero_column(j)).collect();
        if nz.is_empty() {
            continue;
        }
        let col = nz[rng.below(nz.len() as u64) as usize];
        let w2 = DenseMatrix::from_fn(r, t, |i, j| if j == col { 0.0 } else { w.get(i, j) });
        let x = random_dense(t, n, rng.next_u64());
        for df in [Dataflow::SOs, Dataflow::SWs] {
            let (_, a) = simulate_gemm(&arch, df, &w, &x).unwrap();
            let (_, b) = simulate_gemm(&arch, df, &w2, &x).unwrap();
            if b.cycles > a.cycles || b.weight_words_read > a.weight_words_read {
                violations += 1;
            }
        }

        // Row skipping: one T x R tile under sIS.
        let wi = random_sparse(t, r, sp(s), rng.next_u64());
        let nzr: Vec<usize> = (0..t).filter(|&i| !wi.is_zero_row(i)).collect();
        if !nzr.is_empty() {
            let row = nzr[rng.below(nzr.len() as u64) as usize];
            let wi2 = DenseMatrix::from_fn(t, r, |i, j| if i == row { 0.0 } else { wi.get(i, j) });
            let xi = random_dense(r, n, rng.next_u64());
            let (_, a) = simulate_gemm(&arch, Dataflow::SIs, &wi, &xi).unwrap();
            let (_, b) = simulate_gemm(&arch, Dataflow::SIs, &wi2, &xi).unwrap();
            if b.cycles > a.cycles || b.weight_words_read > a.weight_words_read {
                violations += 1;
            }
        }

        for df in Dataflow::ALL.into_iter().filter(|d| d.is_sparse()) {
            zero_macs += simulate_gemm(&arch, df, &DenseMatrix::zeros(r, t), &x).unwrap().1.mac_ops;
        }
        tiles += 1;
    }
    rep.line(
        "4 skip monotonicity",
        violations == 0 && zero_macs == 0,
        format!("{tiles} tiles, {violations} monotonicity violations, MACs on zero tiles {zero_macs}"),
    );
}

fn criterion_5(rep: &mut Report) {
    let samples = 100_000usize;
    let mut parts = Vec::new();
    let mut pass = true;
    for (i, (s, n)) in [(0.9, 4usize), (0.9, 16), (0.7, 8)].into_iter().enumerate() {
        let m = random_sparse(n, samples, sp(s), 0xACCE_0005 + i as u64);
        let zeros = (0..samples).filter(|&c| m.is_zero_column(c)).count();
        let p = zero_column_probability(sp(s), n).unwrap();
        let sigma = (p * (1.0 - p) / samples as f64).sqrt();
        let frac = zeros as f64 / samples as f64;
        let z = (frac - p).abs() / sigma;
        pass &= z <= 3.0;
        parts.push(format!("(s={s}, n={n}) observed {frac:.5} expected {p:.5} |z|={z:.2}"));
    }
    rep.line("5 Bernoulli check", pass, parts.join("; "));
}

fn criterion_6(rep: &mut Report) {
    let mut ok = true;
    let mut notes = Vec::new();
    let mut rng = SeededRng::new(0xACCE_0006);
    for _ in 0..20 {
        let (r, c) = (1 + rng.below(40) as usize, 1 + rng.below(40) as usize);
        let m = random_sparse(r, c, sp(rng.next_unit()), rng.next_u64());
        let nnz = m.nnz() as u64;
        ok &= footprint_bits(&m, FormatKind::Dense) == (r * c * 32) as u64;
        ok &= footprint_bits(&m, FormatKind::Bitmap) == 32 * nnz + 32 * (r * c).div_ceil(32) as u64;
        for kind in FormatKind::ALL {
            let enc = encode(&m, kind).unwrap();
            ok &= enc.decode().unwrap().bit_eq(&m);
            ok &= flexisaga::formats::Encoding::from_bytes(&enc.to_bytes()).unwrap().decode().unwrap().bit_eq(&m);
            ok &= enc.footprint_bits() == footprint_bits(&m, kind);
        }
    }
    notes.push(format!("dense identity, bitmap closed form and round trips of all formats: {ok}"));

    let m = random_sparse(128, 512, sp(0.9), 0xACCE_0066);
    let dense = footprint_bits(&m, FormatKind::Dense);
    let bitmap = footprint_bits(&m, FormatKind::Bitmap);
    let mut ordered = bitmap < dense;
    for n in [4, 8, 16] {
        let ts = footprint_bits_with_column_height(&m, FormatKind::TwoStageBitmap, n).unwrap();
        ordered &= ts < bitmap;
        notes.push(format!("n={n}: two-stage {ts} < bitmap {bitmap} < dense {dense}"));
    }
    rep.line("6 footprint properties", ok && ordered, notes.join("; "));

    let whole = footprint_bits(&m, FormatKind::TwoStageBitmap);
    rep.info(
        "6 whole-matrix two-stage ordering",
        whole < bitmap,
        format!("two-stage over the full 128-row height {whole} vs bitmap {bitmap} (all-zero 128-high columns have probability 0.9^128)"),
    );
}

fn criterion_7(rep: &mut Report) {
    let (m, k, n) = (128, 128, 128);
    let w = random_dense(m, k, 71);
    let x = random_dense(k, n, 72);
    let small = ArchConfig::new(8, 8);
    let large = ArchConfig::new(16, 16);
    let (_, a) = simulate_gemm(&small, Dataflow::DOs, &w, &x).unwrap();
    let (_, b) = simulate_gemm(&large, Dataflow::DOs, &w, &x).unwrap();
    let speedup = a.cycles as f64 / b.cycles as f64;
    let mac_util = |r: &flexisaga::sim::SimResult, arch: &ArchConfig| r.mac_ops as f64 / (r.cycles as f64 * arch.pe_count() as f64);
    rep.line(
        "7 linear memory scaling",
        (1.5..=2.5).contains(&speedup),
        format!(
            "dOS {m}x{k}x{n}: 8x8 {} cycles, 16x16 {} cycles, speedup {speedup:.3} (bracket [1.5, 2.5]); PE utilization {:.3} -> {:.3}",
            a.cycles,
            b.cycles,
            mac_util(&a, &small),
            mac_util(&b, &large)
        ),
    );
    let mut all = Vec::new();
    for df in Dataflow::ALL {
        let (_, a) = simulate_gemm(&small, df, &w, &x).unwrap();
        let (_, b) = simulate_gemm(&large, df, &w, &x).unwrap();
        all.push(format!("{df} {:.2}", a.cycles as f64 / b.cycles as f64));
    }
    rep.info("7 speedup per dataflow", true, all.join(", "));
}

fn criterion_8(rep: &mut Report) {
    let (tr, tc) = (4, 8);
    let members = vec![random_dense(16, 32, 81), random_dense(8, 24, 82)];
    let group = OperatorGroup::new(0, flexisaga::lowering::OperatorKind::Fc, members);
    let cfg = PruneConfig {
        vector_len: tr,
        orientation: Orientation::Column,
        initial_sparsity: 0.7,
        delta: 0.01,
        epsilon: 0.0,
        target_accuracy: 1.0,
        max_attempts: 1,
    };
    let threshold = ThresholdOracle::new(0.83);
    let seen: RefCell<Vec<Vec<flexisaga::pruning::VectorId>>> = RefCell::new(Vec::new());
    let recording = |c: &Candidate<'_>| {
        seen.borrow_mut().push(zero_vectors(&c.weights[0], tr, tc, Orientation::Column));
        flexisaga::pruning::AccuracyOracle::evaluate(&threshold, c)
    };
    let out = prune_schedule(std::slice::from_ref(&group), std::slice::from_ref(&cfg), tr, tc, &recording).unwrap();
    let final_s = out.final_sparsities().map(|s| s[0]);
    let seen = seen.into_inner();
    let accepted = &seen[..out.accepted_steps()];
    let mut stays_zero = accepted.windows(2).all(|w| w[0].iter().all(|v| w[1].contains(v)));
    stays_zero &= seen.last().is_some_and(|rejected| accepted.last().unwrap().iter().all(|v| rejected.contains(v)));

    // Encodings of the final weights skip exactly the pruned columns.
    let zeros = zero_vectors(&out.weights[0], tr, tc, Orientation::Column);
    let mut skippable = true;
    for (mi, m) in out.weights[0].iter().enumerate() {
        let grid = tile_matrix(m, tr, tc).unwrap();
        for (t, tile) in grid.tiles().iter().enumerate() {
            let ts = encode_two_stage_bitmap(tile);
            let csb = encode_csb(tile);
            for v in 0..grid.valid_cols(t % grid.grid_cols) {
                let pruned = zeros.contains(&flexisaga::pruning::VectorId { matrix: mi, tile: t, vector: v });
                skippable &= ts.col_bitmap()[v] != pruned;
                skippable &= csb.entries().iter().any(|e| e.col_index == v as i32) != pruned;
            }
        }
    }
    // One more cross-check: the final weights equal a single pruning pass at 0.83.
    let direct = prune_vectors(&group.clone().with_sparsity(0.83), tr, tc, &cfg).unwrap();
    let pass = final_s == Some(0.83) && out.accepted_steps() == 14 && stays_zero && skippable && direct == out.weights[0];
    rep.line(
        "8 pruning schedule",
        pass,
        format!(
            "final s {:?}, accepted steps {}, history {} entries, pruned vectors stay zero: {stays_zero}, pruned columns skipped by both encodings: {skippable}",
            final_s,
            out.accepted_steps(),
            out.history.len()
        ),
    );
}

fn fc_op(name: &str, out: usize, inp: usize, batch: usize, seed: u64) -> WorkloadOp {
    WorkloadOp {
        name: name.into(),
        spec: OperatorSpec::Fc { in_features: inp, out_features: out, batch },
        weights: random_sparse(out, inp, sp(0.5), seed),
        inputs: random_dense(inp, batch, seed + 1),
    }
}

fn criterion_9(rep: &mut Report) {
    let workload = vec![fc_op("tall", 144, 32, 2, 91), fc_op("wide", 4, 32, 144, 93), fc_op("square", 36, 36, 36, 95)];
    let mut cfg = DseConfig::new(72, workload);
    cfg.variants = vec![PruneVariant::Dense, PruneVariant::Fixed { orientation: Orientation::Column, sparsity: 0.8 }];
    let grid = run_dse(&cfg).unwrap();
    let expected = 10 * 7 * cfg.variants.len() * 3;
    let best = select_best(&grid).unwrap();

    let mut brute = (u64::MAX, 0, 0);
    for s in 0..grid.shapes.len() {
        for v in 0..grid.variants.len() {
            let mut total = 0;
            for o in 0..3 {
                let mut m = u64::MAX;
                for d in 0..7 {
                    m = m.min(grid.cells.iter().find(|c| c.shape == grid.shapes[s] && c.variant == v && c.operator == o && c.dataflow == Dataflow::ALL[d]).unwrap().cycles().unwrap());
                }
                total += m;
            }
            if total < brute.0 {
                brute = (total, s, v);
            }
        }
    }
    let optima = operator_optima(&grid);
    let differs = optima.iter().any(|o| {
        o.shape != best.shape || o.variant != best.variant || o.dataflow != best.assignment[o.operator]
    });
    let winners: Vec<String> = optima.iter().map(|o| format!("{}:{}x{} {}", grid.operators[o.operator], o.shape.0, o.shape.1, o.dataflow)).collect();
    rep.line(
        "9 DSE",
        grid.cells.len() == expected
            && grid.failed_cells() == 0
            && best.total_cycles == brute.0
            && best.shape == grid.shapes[brute.1]
            && differs,
        format!(
            "{} cells (expected {expected}), global best {}x{} {} {:?} at {} cycles (brute force {}); per-operator optima [{}]",
            grid.cells.len(),
            best.shape.0,
            best.shape.1,
            grid.variants[best.variant].label(),
            best.assignment.iter().map(|d| d.name()).collect::<Vec<_>>(),
            best.total_cycles,
            brute.0,
            winners.join(", ")
        ),
    );
}

fn criterion_10(rep: &mut Report) {
    let arch = ArchConfig::new(8, 8);
    let ops = [
        (OperatorSpec::Conv { in_channels: 8, out_channels: 32, kernel_h: 3, kernel_w: 3, input_h: 10, input_w: 10, stride: 1, padding: 1 }, 101),
        (OperatorSpec::Conv { in_channels: 32, out_channels: 32, kernel_h: 3, kernel_w: 3, input_h: 8, input_w: 8, stride: 2, padding: 1 }, 102),
        (OperatorSpec::Fc { in_features: 256, out_features: 64, batch: 4 }, 103),
        (OperatorSpec::Fc { in_features: 64, out_features: 16, batch: 4 }, 104),
    ];
    let (mut dense_total, mut sparse_total, mut uniform_total) = (0u64, 0u64, 0u64);
    let mut picks = Vec::new();
    let cfg = |n| PruneConfig {
        vector_len: n,
        orientation: Orientation::Column,
        initial_sparsity: 0.8,
        delta: 0.01,
        epsilon: 0.0,
        target_accuracy: 0.0,
        max_attempts: 1,
    };
    for (spec, seed) in ops {
        let (m, k, _) = spec.gemm_dims().unwrap();
        let w = random_dense(m, k, seed);
        let (ir, ic) = spec.input_shape();
        let x = random_dense(ir, ic, seed + 50);
        let g = OperatorGroup::new(0, spec.kind(), vec![w.clone()]).with_sparsity(0.8);
        let pruned = prune_vectors(&g, 8, arch.tile_depth(), &cfg(8)).unwrap().remove(0);
        let (_, d) = best_dataflow(&arch, &spec, &w, &x).unwrap();
        let (df, s) = best_dataflow(&arch, &spec, &pruned, &x).unwrap();
        let uniform = random_sparse(m, k, sp(0.8), seed + 7);
        let (_, u) = best_dataflow(&arch, &spec, &uniform, &x).unwrap();
        // The pruned operator must still compute the right thing under its winner.
        let (out, _) = simulate_operator(&arch, df, &spec, &pruned, &x).unwrap();
        let (wl, xl) = flexisaga::lowering::lower_operator(&spec, &pruned, &x).unwrap();
        let (exact, mag) = oracle_gemm(&wl, &xl);
        assert!(out.data().iter().zip(exact.iter().zip(&mag)).all(|(a, (e, g))| (*a as f64 - e).abs() <= 1e-5 * g.max(e.abs()).max(f64::MIN_POSITIVE)));
        dense_total += d.cycles;
        sparse_total += s.cycles;
        uniform_total += u.cycles;
        picks.push(df.name());
    }
    let speedup = dense_total as f64 / sparse_total as f64;
    rep.line(
        "10 synthetic sparse-over-dense speedup",
        speedup > 1.0,
        format!(
            "8x8, 4 operators, column-vector pruning at s=0.8: dense {dense_total} cycles, sparse {sparse_total} cycles, speedup {speedup:.3} (winners {picks:?}); uniform 0.8 sparsity speedup {:.3}",
            dense_total as f64 / uniform_total as f64
        ),
    );
    println!("[INFO] 10: speedups of whole trained networks are out of reach for synthetic weights; only the synthetic workload above is measured");
}

fn main() -> ExitCode {
    let mut rep = Report { failed: Vec::new() };
    criterion_1(&mut rep);
    criterion_2(&mut rep);
    criterion_3(&mut rep);
    criterion_4(&mut rep);
    criterion_5(&mut rep);
    criterion_6(&mut rep);
    criterion_7(&mut rep);
    criterion_8(&mut rep);
    criterion_9(&mut rep);
    criterion_10(&mut rep);
    if rep.failed.is_empty() {
        println!("acceptance: all asserted criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed {:?}", rep.failed);
        ExitCode::FAILURE
    }
}
