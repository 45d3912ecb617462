//! Output-stationary schedule over CSB tiles (csOS).
//!
//! A merged weight column is loaded into the left PE column and copied across
//! the rows. The controller keeps, per PE row, the original column index of
//! the stored weights and a temporary index naming the input row currently
//! held by that PE row. A pass loads one input row at the top and moves it
//! down one PE row per step; a row computes when both indices match.
//! Rows holding a zero slot are finished without computing. The first pass
//! serves the index of PE row 0 and sweeps the full array height; further
//! passes serve the first unfinished row and stop at the deepest row that
//! needs the same input.

use super::{Action, Ctx, Unit};
use crate::formats::CsbTile;

pub(super) fn run(ctx: &mut Ctx<'_>, tiles: &[CsbTile]) {
    let k_tiles = ctx.k.div_ceil(ctx.t);
    let bases: Vec<u64> = tiles
        .iter()
        .scan(0u64, |next, t| {
            let base = *next;
            *next += (1 + t.merged_col_count() * t.index_words_per_column() + t.nnz()) as u64;
            Some(base)
        })
        .collect();
    let mut index = vec![-1i32; ctx.r];
    let mut finished = vec![true; ctx.r];
    for (mb, m0) in (0..ctx.m).step_by(ctx.r).enumerate() {
        let re = ctx.r.min(ctx.m - m0);
        for n0 in (0..ctx.n).step_by(ctx.c) {
            let ce = ctx.c.min(ctx.n - n0);
            ctx.eng.begin_tile();
            ctx.grid.clear();
            for kt in 0..k_tiles {
                let id = mb * k_tiles + kt;
                let tile = &tiles[id];
                let k0 = kt * ctx.t;
                let mut addr = bases[id];
                ctx.eng.request(Unit::Controller, Action::ReadMetadata, addr);
                addr += 1;
                for g in 0..tile.merged_col_count() {
                    ctx.eng.weight_load_phase();
                    for _ in 0..tile.index_words_per_column() {
                        ctx.eng.request(Unit::Controller, Action::ReadMetadata, addr);
                        addr += 1;
                    }
                    for (i, e) in tile.merged_column(g).iter().enumerate() {
                        index[i] = e.col_index;
                        finished[i] = e.is_zero_slot();
                        let live = if e.is_zero_slot() {
                            let logical = ctx.weight_address(m0 + i, k0);
                            ctx.eng.emit_zero(Unit::LoadLeft(i), logical);
                            false
                        } else {
                            ctx.eng.request(Unit::LoadLeft(i), Action::ReadWeight, addr);
                            addr += 1;
                            true
                        };
                        for j in 0..ce {
                            let pe = ctx.grid.at_mut(i, j);
                            pe.w = e.value;
                            pe.w_live = live;
                        }
                    }
                    ctx.eng.end_step();
                    // Weight copies to columns beyond the first neighbor.
                    for _ in 2..ce {
                        ctx.eng.end_step();
                    }
                    let mut first_pass = true;
                    while let Some(first) = finished[..re].iter().position(|f| !f) {
                        let target = index[first];
                        let depth = if first_pass {
                            re
                        } else {
                            (0..re).rev().find(|&r| !finished[r] && index[r] == target).unwrap() + 1
                        };
                        first_pass = false;
                        let k = k0 + target as usize;
                        for j in 0..ce {
                            let a = ctx.input_address(k, n0 + j);
                            ctx.eng.request(Unit::LoadTop(j), Action::ReadInput, a);
                        }
                        for r in 0..depth {
                            for j in 0..ce {
                                ctx.grid.at_mut(r, j).x = ctx.x.get(k, n0 + j);
                            }
                            if !finished[r] && index[r] == target {
                                for j in 0..ce {
                                    ctx.grid.mac(r, j);
                                }
                                ctx.eng.count_mac(ce as u64);
                                finished[r] = true;
                            }
                            ctx.eng.end_step();
                        }
                    }
                }
            }
            for i in 0..re {
                for j in 0..ce {
                    let v = ctx.grid.at(i, j).acc;
                    ctx.write_output(Unit::StoreRight(i), m0 + i, n0 + j, v);
                }
            }
            ctx.eng.end_drain_step();
            ctx.eng.end_tile();
        }
    }
}
