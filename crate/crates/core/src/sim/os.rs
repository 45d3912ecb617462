//! Output-stationary schedules (dOS, sOS).
//!
//! Per output tile, every (non-zero) weight column is loaded into the left
//! PE column together with the matching input row into the top PE row; the
//! pair then sweeps the array as a diagonal wavefront. PE `(i, j)` computes
//! at wavefront step `i + j` and forwards its weight right and its input down.

use super::{BitmapStream, Ctx, Fetch, Unit};

pub(super) fn run(ctx: &mut Ctx<'_>, sparse: Option<&BitmapStream>) {
    let k_tiles = ctx.k.div_ceil(ctx.t);
    for (mb, m0) in (0..ctx.m).step_by(ctx.r).enumerate() {
        let re = ctx.r.min(ctx.m - m0);
        for n0 in (0..ctx.n).step_by(ctx.c) {
            let ce = ctx.c.min(ctx.n - n0);
            ctx.eng.begin_tile();
            ctx.grid.clear();
            for kt in 0..k_tiles {
                let k0 = kt * ctx.t;
                let te = ctx.t.min(ctx.k - k0);
                match sparse {
                    None => {
                        for c in 0..te {
                            column(ctx, m0, re, n0, ce, k0 + c, |ctx, m, k| ctx.dense_fetch(m, k));
                        }
                    }
                    Some(s) => {
                        let id = mb * k_tiles + kt;
                        s.request_metadata(&mut ctx.eng, id);
                        for (pos, &c) in s.tiles[id].nonzero_columns().iter().enumerate() {
                            column(ctx, m0, re, n0, ce, k0 + c, |ctx, m, k| {
                                s.fetch(id, pos, m - m0, ctx.weight_address(m, k))
                            });
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

/// Load step plus wavefront for weight column `k` against input row `k`.
fn column(
    ctx: &mut Ctx<'_>,
    m0: usize,
    re: usize,
    n0: usize,
    ce: usize,
    k: usize,
    fetch: impl Fn(&Ctx<'_>, usize, usize) -> Fetch,
) {
    ctx.eng.weight_load_phase();
    for i in 0..re {
        let f = fetch(ctx, m0 + i, k);
        let (w, live) = ctx.issue_fetch(Unit::LoadLeft(i), f);
        let pe = ctx.grid.at_mut(i, 0);
        pe.w = w;
        pe.w_live = live;
    }
    for j in 0..ce {
        let a = ctx.input_address(k, n0 + j);
        ctx.eng.request(Unit::LoadTop(j), super::Action::ReadInput, a);
        ctx.grid.at_mut(0, j).x = ctx.x.get(k, n0 + j);
    }
    ctx.eng.end_step();
    for d in 0..re + ce - 1 {
        let mut macs = 0;
        for i in d.saturating_sub(ce - 1)..=d.min(re - 1) {
            let j = d - i;
            macs += ctx.grid.mac(i, j) as u64;
            if j + 1 < ce {
                ctx.grid.pass_weight_right(i, j);
            }
            if i + 1 < re {
                ctx.grid.pass_input_down(i, j);
            }
        }
        ctx.eng.count_mac(macs);
        ctx.eng.end_step();
    }
}
