//! Input-stationary schedules (dIS, sIS).
//!
//! An `R × C` input tile stays in the array. Each (non-zero) weight row
//! segment of length `R` enters the left PE column and flows right while
//! partial sums flow down; the bottom PE row writes one output row. The input
//! tile is loaded with the first weight row that needs it.

use super::{Action, BitmapStream, Ctx, Fetch, Unit};

pub(super) fn run(ctx: &mut Ctx<'_>, sparse: Option<&BitmapStream>) {
    let m_tiles = ctx.m.div_ceil(ctx.t);
    let mut psum_in = vec![0f32; ctx.c];
    for (kb, k0) in (0..ctx.k).step_by(ctx.r).enumerate() {
        let re = ctx.r.min(ctx.k - k0);
        for n0 in (0..ctx.n).step_by(ctx.c) {
            let ce = ctx.c.min(ctx.n - n0);
            ctx.eng.begin_tile();
            ctx.grid.clear();
            let mut loaded = false;
            for mt in 0..m_tiles {
                let m0 = mt * ctx.t;
                let tm = ctx.t.min(ctx.m - m0);
                match sparse {
                    None => {
                        for m in m0..m0 + tm {
                            weight_row(ctx, k0, re, n0, ce, m, &mut loaded, &mut psum_in, |ctx, k| {
                                ctx.dense_fetch(m, k)
                            });
                        }
                    }
                    Some(s) => {
                        let id = kb * m_tiles + mt;
                        s.request_metadata(&mut ctx.eng, id);
                        for (pos, &r) in s.tiles[id].nonzero_columns().iter().enumerate() {
                            let m = m0 + r;
                            weight_row(ctx, k0, re, n0, ce, m, &mut loaded, &mut psum_in, |ctx, k| {
                                s.fetch(id, pos, k - k0, ctx.weight_address(m, k))
                            });
                        }
                    }
                }
            }
            ctx.eng.end_tile();
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn weight_row(
    ctx: &mut Ctx<'_>,
    k0: usize,
    re: usize,
    n0: usize,
    ce: usize,
    m: usize,
    loaded: &mut bool,
    psum_in: &mut [f32],
    fetch: impl Fn(&Ctx<'_>, usize) -> Fetch,
) {
    ctx.eng.weight_load_phase();
    if !*loaded {
        for i in 0..re {
            for j in 0..ce {
                let a = ctx.input_address(k0 + i, n0 + j);
                ctx.eng.request(Unit::LoadTop(j), Action::ReadInput, a);
                ctx.grid.at_mut(i, j).x = ctx.x.get(k0 + i, n0 + j);
            }
        }
        *loaded = true;
    }
    for i in 0..re {
        let f = fetch(ctx, k0 + i);
        let (w, live) = ctx.issue_fetch(Unit::LoadLeft(i), f);
        let pe = ctx.grid.at_mut(i, 0);
        pe.w = w;
        pe.w_live = live;
    }
    for (j, p) in psum_in.iter_mut().enumerate().take(ce) {
        *p = ctx.read_partial(Unit::LoadTop(j), m, n0 + j);
    }
    ctx.eng.end_step();
    for d in 0..re + ce - 1 {
        let mut macs = 0;
        for i in d.saturating_sub(ce - 1)..=d.min(re - 1) {
            let j = d - i;
            let base = if i == 0 { psum_in[j] } else { ctx.grid.at(i - 1, j).acc };
            let pe = *ctx.grid.at(i, j);
            let acc = if pe.w_live {
                macs += 1;
                base + pe.w * pe.x
            } else {
                base
            };
            ctx.grid.at_mut(i, j).acc = acc;
            if j + 1 < ce {
                ctx.grid.pass_weight_right(i, j);
            }
            if i + 1 == re {
                ctx.write_output(Unit::StoreBottom(j), m, n0 + j, acc);
            }
        }
        ctx.eng.count_mac(macs);
        ctx.eng.end_step();
    }
}
