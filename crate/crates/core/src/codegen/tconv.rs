use std::collections::BTreeMap;

use super::gemm::conv_buffers;
use super::ir::{guarded, ArrayDecl, Cond, Expr, Instr, Reg, ScheduleIr};
use super::render::render;
use super::template::{expand_template, Template};
use super::transform::tile_dims;
use super::{decls, params, plan_error, BufferDecl, KernelArtifact, Launch};
use crate::error::Result;
use crate::netops::ConvSpec;
use crate::planner::VariantPlan;

const TEMPLATE: &str = "// tconv: in %(Y):%(X):%(C) -> out %(OY):%(OX):%(OC), KSZ=%(KSZ) stride=%(S) pad=%(P)
// tile %(TILE_Y)x%(TILE_X) outputs from %(ITY)x%(ITX) inputs
// blocking: Mt=%(Mt) Nt=%(Nt) Kb=%(Kb) Mb=%(Mb) Nb=%(Nb) Mg=%(Mg) Ng=%(Ng)
#define BARRIER_SYNC barrier(CLK_LOCAL_MEM_FENCE)
kernel void tconv(%(params))
{
    int const wg_m = get_group_id(0);
    int const wg_n = get_group_id(1);
    int const t_m = get_local_id(0);
    int const t_n = get_local_id(1);
    %(decls)
    %(init_c_t)
    for (int icb = 0; icb < %(ic_iters); ++icb) {
        BARRIER_SYNC;
        %(lm_loads)
        BARRIER_SYNC;
        for (int ci = 0; ci < %(Kb); ++ci) {
            if (%(c_cond)) {
                for (int ky = 0; ky < %(KSZ); ++ky) {
                    %(loads)
                    %(fmas)
                }
            }
        }
    }
    %(transpose_c_t_row)
    %(store_c_t_row)
}
";

pub fn template() -> Template {
    Template::new(
        "tconv",
        TEMPLATE,
        &["lm_loads", "loads", "fmas", "transpose_c_t_row", "store_c_t_row"],
    )
}

fn reg(name: &str, i: i64) -> Reg {
    Reg::new(name, i as u32)
}

pub fn tconv(plan: &VariantPlan, s: &ConvSpec) -> Result<KernelArtifact> {
    let tile = plan
        .tile
        .ok_or_else(|| plan_error(plan, "tconv plan lacks a tile geometry"))?;
    let b = &plan.blocking;
    let (mt, nt, kb, mb, nb) = (b.mt as i64, b.nt as i64, b.kb as i64, b.mb as i64, b.nb as i64);
    let (st, k, pad) = (s.stride as i64, s.kernel_size as i64, s.pad as i64);
    let (ic_n, oc_n) = (s.in_c() as i64, s.out_channels as i64);
    let (oy_n, ox_n) = (s.out_y() as i64, s.out_x() as i64);
    let (tile_y, tile_x, tpr) = (tile.tile_y as i64, tile.tile_x as i64, tile.threads_per_row as i64);
    let (tiles_y, tiles_x) = (tile.tiles_y as i64, tile.tiles_x as i64);
    let (ity, itx) = (tile.in_tile_y as i64, tile.in_tile_x as i64);
    if tile_x != mt * tpr || tile_y * tpr != mb {
        return Err(plan_error(plan, "tile geometry does not match the thread grid"));
    }
    if tiles_y * tile_y < oy_n || tiles_x * tile_x < ox_n || (tile_y - 1) * st + k != ity || (tile_x - 1) * st + k != itx {
        return Err(plan_error(plan, "tiles do not cover the output"));
    }
    if b.mg != (s.batch() as i64 * tiles_y * tiles_x) as u64 {
        return Err(plan_error(plan, "Mg must count batch x tiles"));
    }
    let in_dims = tile_dims(s, &tile)?;
    let (big_ty, big_tx) = (in_dims.size_of("TY").unwrap() as i64, in_dims.size_of("TX").unwrap() as i64);
    let nbt = nb * nt;
    let row_len = (mt - 1) * st + k;

    let wg_m = Expr::var("wg_m");
    let t_m = Expr::var("t_m");
    let t_n = Expr::var("t_n");
    let img = wg_m.clone().div(tiles_y * tiles_x);
    let tyi = wg_m.clone().div(tiles_x).rem(tiles_y);
    let txi = wg_m.rem(tiles_x);
    let ry = t_m.clone().div(tpr);
    let cx = t_m.clone().rem(tpr);
    let oc = |j: i64| Expr::var("wg_n") * nbt + t_n.clone() * nt + j;

    let mut regs = vec![
        ArrayDecl { name: "c_t".into(), len: (mt * nt) as u64 },
        ArrayDecl { name: "in_r".into(), len: row_len as u64 },
        ArrayDecl { name: "b_r".into(), len: nt as u64 },
        ArrayDecl { name: "tmp".into(), len: 1 },
    ];
    let locals = vec![ArrayDecl { name: "in_l".into(), len: (kb * ity * itx) as u64 }];
    let init: Vec<Instr> = (0..mt * nt).map(|i| Instr::mov_imm(reg("c_t", i), 0.0)).collect();

    // cooperative tile load, channels innermost to follow the tiled layout
    let threads = mb * nb;
    let total = kb * ity * itx;
    let e = Expr::var("la") * threads + t_m.clone() * nb + t_n.clone();
    let c = e.clone().rem(kb);
    let rx = e.clone().div(kb).rem(itx);
    let ry_l = e.clone().div(kb * itx);
    let ic = Expr::var("icb") * kb + c.clone();
    let mut conds = Vec::new();
    if total % threads != 0 {
        conds.push(Cond::lt(e, total));
    }
    if ic_n % kb != 0 {
        conds.push(Cond::lt(ic.clone(), ic_n));
    }
    let gy = img.clone() * big_ty + tyi.clone() * (tile_y * st) + ry_l.clone();
    let gx = txi.clone() * (tile_x * st) + rx.clone();
    let lm_loads = vec![Instr::Loop {
        var: "la".into(),
        bound: ((total + threads - 1) / threads) as u64,
        unroll: 1,
        body: guarded(
            conds,
            vec![
                Instr::GlobalLoad {
                    dst: reg("tmp", 0),
                    buf: "in_tiled".into(),
                    index: (gy * big_tx + gx) * ic_n + ic,
                    width: 1,
                },
                Instr::LocalStore {
                    buf: "in_l".into(),
                    index: (c * ity + ry_l) * itx + rx,
                    src: reg("tmp", 0),
                    width: 1,
                },
            ],
        ),
    }];

    // one input row per ky, reused across the unrolled kernel-X positions
    let ci = Expr::var("ci");
    let ky = Expr::var("ky");
    let loads: Vec<Instr> = (0..row_len)
        .map(|j| Instr::LocalLoad {
            dst: reg("in_r", j),
            buf: "in_l".into(),
            index: (ci.clone() * ity + ry.clone() * st + ky.clone()) * itx + cx.clone() * (mt * st) + j,
            width: 1,
        })
        .collect();
    let in_ch = Expr::var("icb") * kb + ci.clone();
    let oc_edge = oc_n % nbt != 0;
    let mut fmas = Vec::new();
    for kx in 0..k {
        for j in 0..nt {
            let load = Instr::GlobalLoad {
                dst: reg("b_r", j),
                buf: "filts".into(),
                index: ((oc(j) * k + ky.clone()) * k + kx) * ic_n + in_ch.clone(),
                width: 1,
            };
            if oc_edge {
                fmas.push(Instr::mov_imm(reg("b_r", j), 0.0));
                fmas.push(Instr::Guard {
                    conds: vec![Cond::lt(oc(j), oc_n)],
                    body: vec![load],
                });
            } else {
                fmas.push(load);
            }
        }
        for m in 0..mt {
            for j in 0..nt {
                fmas.push(Instr::Fma {
                    dst: reg("c_t", m * nt + j),
                    a: reg("in_r", m * st + kx),
                    b: reg("b_r", j),
                });
            }
        }
    }
    let c_cond = Cond::lt(in_ch, ic_n);

    let mut epilogue = Vec::new();
    if s.has_bias {
        regs.push(ArrayDecl { name: "bias_r".into(), len: nt as u64 });
        for j in 0..nt {
            epilogue.push(Instr::mov_imm(reg("bias_r", j), 0.0));
            epilogue.extend(guarded(
                oc_edge.then(|| Cond::lt(oc(j), oc_n)).into_iter().collect(),
                vec![Instr::GlobalLoad {
                    dst: reg("bias_r", j),
                    buf: "bias".into(),
                    index: oc(j),
                    width: 1,
                }],
            ));
        }
        for m in 0..mt {
            for j in 0..nt {
                epilogue.push(Instr::Add {
                    dst: reg("c_t", m * nt + j),
                    a: reg("c_t", m * nt + j),
                    b: reg("bias_r", j),
                });
            }
        }
    }
    if s.fuse_relu {
        epilogue.extend((0..mt * nt).map(|i| Instr::Relu { dst: reg("c_t", i) }));
    }

    let oy = tyi * tile_y + ry;
    let ox0 = txi * tile_x + cx * mt;
    let mut rows = Vec::new();
    for m in 0..mt {
        let ox = ox0.clone() + m;
        let mut row = Vec::new();
        for j in 0..nt {
            let store = Instr::GlobalStore {
                buf: "out".into(),
                index: ((img.clone() * oy_n + oy.clone()) * ox_n + ox.clone()) * oc_n + oc(j),
                src: reg("c_t", m * nt + j),
                width: 1,
            };
            row.extend(guarded(
                oc_edge.then(|| Cond::lt(oc(j), oc_n)).into_iter().collect(),
                vec![store],
            ));
        }
        rows.extend(guarded(
            (tiles_x * tile_x != ox_n).then(|| Cond::lt(ox, ox_n)).into_iter().collect(),
            row,
        ));
    }
    let stores = guarded(
        (tiles_y * tile_y != oy_n).then(|| Cond::lt(oy, oy_n)).into_iter().collect(),
        rows,
    );

    let mut inner = loads.clone();
    inner.extend(fmas.iter().cloned());
    let mut k_loop = vec![Instr::Barrier];
    k_loop.extend(lm_loads.iter().cloned());
    k_loop.push(Instr::Barrier);
    k_loop.push(Instr::Loop {
        var: "ci".into(),
        bound: kb as u64,
        unroll: 1,
        body: vec![Instr::Guard {
            conds: vec![c_cond.clone()],
            body: vec![Instr::Loop {
                var: "ky".into(),
                bound: k as u64,
                unroll: 1,
                body: inner,
            }],
        }],
    });
    let ic_iters = (ic_n + kb - 1) / kb;
    let mut body = init.clone();
    body.push(Instr::Loop {
        var: "icb".into(),
        bound: ic_iters as u64,
        unroll: 1,
        body: k_loop,
    });
    body.extend(epilogue.iter().cloned());
    body.extend(stores.iter().cloned());
    let ir = ScheduleIr {
        kernel: "tconv".into(),
        regs,
        locals,
        body,
    };

    let input = BufferDecl::input("in_tiled", in_dims, "B:TY:TX:C, zero border");
    let buffers = conv_buffers(s, input);
    let consts: BTreeMap<String, String> = [
        ("params", params(&buffers)),
        ("decls", decls(&ir)),
        ("init_c_t", render(&init, 0)),
        ("Y", s.in_y().to_string()),
        ("X", s.in_x().to_string()),
        ("C", ic_n.to_string()),
        ("OY", oy_n.to_string()),
        ("OX", ox_n.to_string()),
        ("OC", oc_n.to_string()),
        ("KSZ", k.to_string()),
        ("S", st.to_string()),
        ("P", pad.to_string()),
        ("TILE_Y", tile_y.to_string()),
        ("TILE_X", tile_x.to_string()),
        ("ITY", ity.to_string()),
        ("ITX", itx.to_string()),
        ("Mt", mt.to_string()),
        ("Nt", nt.to_string()),
        ("Kb", kb.to_string()),
        ("Mb", mb.to_string()),
        ("Nb", nb.to_string()),
        ("Mg", b.mg.to_string()),
        ("Ng", b.ng.to_string()),
        ("ic_iters", ic_iters.to_string()),
        ("c_cond", c_cond.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let blocks: BTreeMap<String, String> = [
        ("lm_loads", render(&lm_loads, 0)),
        ("loads", render(&loads, 0)),
        ("fmas", render(&fmas, 0)),
        ("transpose_c_t_row", render(&epilogue, 0)),
        ("store_c_t_row", render(&stores, 0)),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let text = expand_template(&template(), &consts, &blocks)?;
    let launch = Launch {
        mg: b.mg,
        ng: b.ng,
        mb: b.mb,
        nb: b.nb,
    };
    KernelArtifact::assemble("tconv", text, ir, buffers, launch)
}
