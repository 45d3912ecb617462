//! Weight-stationary schedules (dWS, sWS).
//!
//! A group of up to `C` (non-zero) weight columns of one tile is held in the
//! array. For every input column the matching input elements enter the top
//! row and flow down while partial sums flow right; the right PE column
//! writes one output column. Partial outputs of earlier groups are read back
//! through the left LUs.

use super::{Action, BitmapStream, Ctx, Unit};

pub(super) fn run(ctx: &mut Ctx<'_>, sparse: Option<&BitmapStream>) {
    let k_tiles = ctx.k.div_ceil(ctx.t);
    let mut psum_in = vec![0f32; ctx.r];
    for (mb, m0) in (0..ctx.m).step_by(ctx.r).enumerate() {
        let re = ctx.r.min(ctx.m - m0);
        for kt in 0..k_tiles {
            let k0 = kt * ctx.t;
            let te = ctx.t.min(ctx.k - k0);
            ctx.eng.begin_tile();
            // (k, stored column position) per streamed column.
            let cols: Vec<(usize, usize)> = match sparse {
                None => (0..te).map(|c| (k0 + c, c)).collect(),
                Some(s) => {
                    let id = mb * k_tiles + kt;
                    s.request_metadata(&mut ctx.eng, id);
                    s.tiles[id].nonzero_columns().iter().enumerate().map(|(p, &c)| (k0 + c, p)).collect()
                }
            };
            for group in cols.chunks(ctx.c) {
                let cg = group.len();
                ctx.eng.weight_load_phase();
                ctx.grid.clear();
                for i in 0..re {
                    for (j, &(k, pos)) in group.iter().enumerate() {
                        let m = m0 + i;
                        let f = match sparse {
                            None => ctx.dense_fetch(m, k),
                            Some(s) => s.fetch(mb * k_tiles + kt, pos, i, ctx.weight_address(m, k)),
                        };
                        let (w, live) = ctx.issue_fetch(Unit::LoadLeft(i), f);
                        let pe = ctx.grid.at_mut(i, j);
                        pe.w = w;
                        pe.w_live = live;
                    }
                }
                for n in 0..ctx.n {
                    stream_column(ctx, m0, re, group, cg, n, &mut psum_in);
                }
            }
            ctx.eng.end_tile();
        }
    }
}

fn stream_column(
    ctx: &mut Ctx<'_>,
    m0: usize,
    re: usize,
    group: &[(usize, usize)],
    cg: usize,
    n: usize,
    psum_in: &mut [f32],
) {
    for (j, &(k, _)) in group.iter().enumerate() {
        let a = ctx.input_address(k, n);
        ctx.eng.request(Unit::LoadTop(j), Action::ReadInput, a);
        ctx.grid.at_mut(0, j).x = ctx.x.get(k, n);
    }
    for (i, p) in psum_in.iter_mut().enumerate().take(re) {
        *p = ctx.read_partial(Unit::LoadLeft(i), m0 + i, n);
    }
    ctx.eng.end_step();
    for d in 0..re + cg - 1 {
        let mut macs = 0;
        for i in d.saturating_sub(cg - 1)..=d.min(re - 1) {
            let j = d - i;
            let base = if j == 0 { psum_in[i] } else { ctx.grid.at(i, j - 1).acc };
            let pe = *ctx.grid.at(i, j);
            let acc = if pe.w_live {
                macs += 1;
                base + pe.w * pe.x
            } else {
                base
            };
            ctx.grid.at_mut(i, j).acc = acc;
            if i + 1 < re {
                ctx.grid.pass_input_down(i, j);
            }
            if j + 1 == cg {
                ctx.write_output(Unit::StoreRight(i), m0 + i, n, acc);
            }
        }
        ctx.eng.count_mac(macs);
        ctx.eng.end_step();
    }
}
