//! GEMM-shaped kernels: sgemm, implicit-GEMM conv, and k1conv, each in a
//! local-memory form and a direct (optionally vectorized) form.

use std::collections::BTreeMap;

use super::ir::{guarded, ArrayDecl, Cond, Expr, Instr, Reg, ScheduleIr};
use super::render::render;
use super::template::{expand_template, Template};
use super::{decls, params, BufferDecl, KernelArtifact, Launch};
use crate::error::Result;
use crate::nda::Dims;
use crate::netops::ConvSpec;
use crate::planner::{Variant, VariantPlan};

const LOCAL_TEMPLATE: &str = "// %(kname): M=%(M) N=%(N) K=%(K)
// blocking: Mt=%(Mt) Nt=%(Nt) Kb=%(Kb) Mb=%(Mb) Nb=%(Nb) Mg=%(Mg) Ng=%(Ng)
#define BARRIER_SYNC barrier(CLK_LOCAL_MEM_FENCE)
kernel void %(kname)(%(params))
{
    int const wg_m = get_group_id(0);
    int const wg_n = get_group_id(1);
    int const t_m = get_local_id(0);
    int const t_n = get_local_id(1);
    %(decls)
    %(init_c_t)
    for (int kb_i = 0; kb_i < %(k_iters); ++kb_i) {
        BARRIER_SYNC;
        %(lm_loads)
        BARRIER_SYNC;
        #pragma unroll %(Kb)
        for (int subk = 0; subk < %(Kb); ++subk) {
            if (%(k_cond)) {
                %(loads)
                %(fmas)
            }
        }
    }
    %(transpose_c_t_row)
    %(store_c_t_row)
}
";

const DIRECT_TEMPLATE: &str = "// %(kname): M=%(M) N=%(N) K=%(K) vector width %(V)
// blocking: Mt=%(Mt) Nt=%(Nt) Kb=%(Kb) Mb=%(Mb) Nb=%(Nb) Mg=%(Mg) Ng=%(Ng)
kernel void %(kname)(%(params))
{
    int const wg_m = get_group_id(0);
    int const wg_n = get_group_id(1);
    int const t_m = get_local_id(0);
    int const t_n = get_local_id(1);
    %(decls)
    %(init_c_t)
    for (int kb_i = 0; kb_i < %(k_iters); ++kb_i) {
        #pragma unroll %(Kb)
        for (int subk = 0; subk < %(Kb); ++subk) {
            if (%(k_cond)) {
                %(loads)
                %(fmas)
            }
        }
    }
    %(transpose_c_t_row)
    %(store_c_t_row)
}
";

const BLOCKS: [&str; 5] = ["lm_loads", "loads", "fmas", "transpose_c_t_row", "store_c_t_row"];

pub fn local_template() -> Template {
    Template::new("gemm_local", LOCAL_TEMPLATE, &BLOCKS)
}

pub fn direct_template() -> Template {
    Template::new("gemm_direct", DIRECT_TEMPLATE, &BLOCKS[1..])
}

/// Convolution geometry needed to gather im2col rows on the fly.
struct PatchGeom {
    y: i64,
    x: i64,
    c: i64,
    oy: i64,
    ox: i64,
    ksz: i64,
    stride: i64,
    pad: i64,
}

enum ALayout {
    /// `a[m*K + k]`.
    RowMajor,
    /// `((k/v)*M + m)*v + k%v`: channel groups outermost.
    Grouped { v: i64 },
    /// Implicit im2col over an input image.
    Patch(PatchGeom),
}

struct Operands {
    m: i64,
    n: i64,
    k: i64,
    a_buf: &'static str,
    a_layout: ALayout,
    b_buf: &'static str,
    c_buf: &'static str,
    bias: Option<&'static str>,
    relu: bool,
}

impl Operands {
    /// Index of `A[m][k]` plus conditions under which it is a real element
    /// (outside them the value is an implicit zero).
    fn a_access(&self, m: Expr, k: Expr) -> (Expr, Vec<Cond>) {
        match &self.a_layout {
            ALayout::RowMajor => (m * self.k + k, vec![]),
            ALayout::Grouped { v } => ((k.clone().div(*v) * self.m + m) * *v + k.rem(*v), vec![]),
            ALayout::Patch(g) => {
                let b = m.clone().div(g.oy * g.ox);
                let oy = m.clone().div(g.ox).rem(g.oy);
                let ox = m.rem(g.ox);
                let ky = k.clone().div(g.ksz * g.c);
                let kx = k.clone().div(g.c).rem(g.ksz);
                let ic = k.rem(g.c);
                let y = oy * g.stride + ky - g.pad;
                let x = ox * g.stride + kx - g.pad;
                let index = ((b * g.y + y.clone()) * g.x + x.clone()) * g.c + ic;
                let conds = if g.pad > 0 {
                    vec![Cond::within(y, 0, g.y), Cond::within(x, 0, g.x)]
                } else {
                    vec![]
                };
                (index, conds)
            }
        }
    }

    /// Cooperative loads walk `A` along `m` when it is the contiguous axis.
    fn a_m_contiguous(&self) -> bool {
        matches!(self.a_layout, ALayout::Grouped { v: 1 })
    }
}

fn reg(name: &str, i: i64) -> Reg {
    Reg::new(name, i as u32)
}

fn zero(name: &str, from: i64, count: i64) -> Vec<Instr> {
    (from..from + count).map(|i| Instr::mov_imm(reg(name, i), 0.0)).collect()
}

/// `cond` only when `extent` is not a multiple of `block`.
fn edge(cond: Cond, extent: i64, block: i64) -> Option<Cond> {
    (extent % block != 0).then_some(cond)
}

struct Built {
    ir: ScheduleIr,
    text: String,
}

fn build(ops: &Operands, plan: &VariantPlan, kname: &str, buffers: &[BufferDecl]) -> Result<Built> {
    let b = &plan.blocking;
    let (mt, nt, kb, mb, nb) = (b.mt as i64, b.nt as i64, b.kb as i64, b.mb as i64, b.nb as i64);
    let vw = plan.vec_width as i64;
    let (mbt, nbt) = (mb * mt, nb * nt);
    let wg_m = Expr::var("wg_m");
    let wg_n = Expr::var("wg_n");
    let t_m = Expr::var("t_m");
    let t_n = Expr::var("t_n");
    let row = |i: i64| wg_m.clone() * mbt + t_m.clone() * mt + i;
    let col = |j: i64| wg_n.clone() * nbt + t_n.clone() * nt + j;

    let mut regs = vec![
        ArrayDecl { name: "c_t".into(), len: (mt * nt) as u64 },
        ArrayDecl { name: "a_r".into(), len: (mt * vw) as u64 },
        ArrayDecl { name: "b_r".into(), len: (nt * vw) as u64 },
    ];
    let mut locals = Vec::new();
    let init = zero("c_t", 0, mt * nt);
    let mut lm_loads = Vec::new();
    let mut loads = Vec::new();
    let mut fmas = Vec::new();

    let (k_step, k_at) = if plan.use_local_mem {
        (kb, Expr::var("kb_i") * kb + Expr::var("subk"))
    } else {
        (kb * vw, (Expr::var("kb_i") * kb + Expr::var("subk")) * vw)
    };
    let k_iters = (ops.k + k_step - 1) / k_step;
    let k_cond = Cond::lt(k_at.clone(), ops.k);

    if plan.use_local_mem {
        regs.push(ArrayDecl { name: "tmp".into(), len: 1 });
        locals.push(ArrayDecl { name: "a_l".into(), len: (kb * mbt) as u64 });
        locals.push(ArrayDecl { name: "b_l".into(), len: (kb * nbt) as u64 });
        let threads = mb * nb;
        let tid = t_m.clone() * nb + t_n.clone();
        let k_base = Expr::var("kb_i") * kb;

        // A tile: kb x (Mb*Mt) staged as a_l[kk][r]
        let total = kb * mbt;
        let e = Expr::var("la") * threads + tid.clone();
        let (r, kk) = if ops.a_m_contiguous() {
            (e.clone().rem(mbt), e.clone().div(mbt))
        } else {
            (e.clone().div(kb), e.clone().rem(kb))
        };
        let m = wg_m.clone() * mbt + r.clone();
        let k = k_base.clone() + kk.clone();
        let conds: Vec<Cond> = [
            edge(Cond::lt(e.clone(), total), total, threads),
            edge(Cond::lt(m.clone(), ops.m), ops.m, mbt),
            edge(Cond::lt(k.clone(), ops.k), ops.k, kb),
        ]
        .into_iter()
        .flatten()
        .collect();
        let (index, inside) = ops.a_access(m, k);
        let mut body = load_or_zero("tmp", 0, ops.a_buf, index, inside, 1);
        body.push(Instr::LocalStore {
            buf: "a_l".into(),
            index: kk * mbt + r,
            src: reg("tmp", 0),
            width: 1,
        });
        lm_loads.push(Instr::Loop {
            var: "la".into(),
            bound: ((total + threads - 1) / threads) as u64,
            unroll: 1,
            body: guarded(conds, body),
        });

        // B tile: kb x (Nb*Nt) staged as b_l[kk][r]
        let total = kb * nbt;
        let e = Expr::var("lb") * threads + tid;
        let (r, kk) = (e.clone().div(kb), e.clone().rem(kb));
        let n = wg_n.clone() * nbt + r.clone();
        let k = k_base + kk.clone();
        let conds: Vec<Cond> = [
            edge(Cond::lt(e.clone(), total), total, threads),
            edge(Cond::lt(n.clone(), ops.n), ops.n, nbt),
            edge(Cond::lt(k.clone(), ops.k), ops.k, kb),
        ]
        .into_iter()
        .flatten()
        .collect();
        let body = vec![
            Instr::GlobalLoad {
                dst: reg("tmp", 0),
                buf: ops.b_buf.into(),
                index: n * ops.k + k,
                width: 1,
            },
            Instr::LocalStore {
                buf: "b_l".into(),
                index: kk * nbt + r,
                src: reg("tmp", 0),
                width: 1,
            },
        ];
        lm_loads.push(Instr::Loop {
            var: "lb".into(),
            bound: ((total + threads - 1) / threads) as u64,
            unroll: 1,
            body: guarded(conds, body),
        });

        let subk = Expr::var("subk");
        for i in 0..mt {
            loads.push(Instr::LocalLoad {
                dst: reg("a_r", i),
                buf: "a_l".into(),
                index: subk.clone() * mbt + t_m.clone() * mt + i,
                width: 1,
            });
        }
        for j in 0..nt {
            loads.push(Instr::LocalLoad {
                dst: reg("b_r", j),
                buf: "b_l".into(),
                index: subk.clone() * nbt + t_n.clone() * nt + j,
                width: 1,
            });
        }
        for i in 0..mt {
            for j in 0..nt {
                fmas.push(Instr::Fma {
                    dst: reg("c_t", i * nt + j),
                    a: reg("a_r", i),
                    b: reg("b_r", j),
                });
            }
        }
    } else {
        for i in 0..mt {
            let m = row(i);
            let (index, mut inside) = ops.a_access(m.clone(), k_at.clone());
            inside.extend(edge(Cond::lt(m, ops.m), ops.m, mbt));
            loads.extend(load_or_zero("a_r", i * vw, ops.a_buf, index, inside, vw));
        }
        for j in 0..nt {
            let n = col(j);
            let inside: Vec<Cond> = edge(Cond::lt(n.clone(), ops.n), ops.n, nbt).into_iter().collect();
            loads.extend(load_or_zero("b_r", j * vw, ops.b_buf, n * ops.k + k_at.clone(), inside, vw));
        }
        for i in 0..mt {
            for j in 0..nt {
                for v in 0..vw {
                    fmas.push(Instr::Fma {
                        dst: reg("c_t", i * nt + j),
                        a: reg("a_r", i * vw + v),
                        b: reg("b_r", j * vw + v),
                    });
                }
            }
        }
    }

    // epilogue: fused bias and activation, then guarded row stores
    let mut epilogue = Vec::new();
    if let Some(bias) = ops.bias {
        regs.push(ArrayDecl { name: "bias_r".into(), len: nt as u64 });
        for jj in 0..nt / vw {
            let n0 = col(jj * vw);
            let inside: Vec<Cond> = edge(Cond::lt(n0.clone(), ops.n), ops.n, nbt).into_iter().collect();
            epilogue.extend(load_or_zero("bias_r", jj * vw, bias, n0, inside, vw));
        }
        for i in 0..mt {
            for j in 0..nt {
                epilogue.push(Instr::Add {
                    dst: reg("c_t", i * nt + j),
                    a: reg("c_t", i * nt + j),
                    b: reg("bias_r", j),
                });
            }
        }
    }
    if ops.relu {
        epilogue.extend((0..mt * nt).map(|i| Instr::Relu { dst: reg("c_t", i) }));
    }
    let mut stores = Vec::new();
    for i in 0..mt {
        let m = row(i);
        let mut row_stores = Vec::new();
        for jj in 0..nt / vw {
            let n0 = col(jj * vw);
            let store = Instr::GlobalStore {
                buf: ops.c_buf.into(),
                index: m.clone() * ops.n + n0.clone(),
                src: reg("c_t", i * nt + jj * vw),
                width: vw as u32,
            };
            row_stores.extend(guarded(
                edge(Cond::lt(n0, ops.n), ops.n, nbt).into_iter().collect(),
                vec![store],
            ));
        }
        stores.extend(guarded(
            edge(Cond::lt(m, ops.m), ops.m, mbt).into_iter().collect(),
            row_stores,
        ));
    }

    let mut inner = loads.clone();
    inner.extend(fmas.iter().cloned());
    let mut k_loop = Vec::new();
    if plan.use_local_mem {
        k_loop.push(Instr::Barrier);
        k_loop.extend(lm_loads.iter().cloned());
        k_loop.push(Instr::Barrier);
    }
    k_loop.push(Instr::Loop {
        var: "subk".into(),
        bound: kb as u64,
        unroll: kb as u32,
        body: vec![Instr::Guard {
            conds: vec![k_cond.clone()],
            body: inner,
        }],
    });
    let mut body = init.clone();
    body.push(Instr::Loop {
        var: "kb_i".into(),
        bound: k_iters as u64,
        unroll: 1,
        body: k_loop,
    });
    body.extend(epilogue.iter().cloned());
    body.extend(stores.iter().cloned());

    let ir = ScheduleIr {
        kernel: kname.to_string(),
        regs,
        locals,
        body,
    };

    let template = if plan.use_local_mem { local_template() } else { direct_template() };
    let consts: BTreeMap<String, String> = [
        ("kname", kname.to_string()),
        ("params", params(buffers)),
        ("decls", decls(&ir)),
        ("M", ops.m.to_string()),
        ("N", ops.n.to_string()),
        ("K", ops.k.to_string()),
        ("V", vw.to_string()),
        ("Mt", mt.to_string()),
        ("Nt", nt.to_string()),
        ("Kb", kb.to_string()),
        ("Mb", mb.to_string()),
        ("Nb", nb.to_string()),
        ("Mg", b.mg.to_string()),
        ("Ng", b.ng.to_string()),
        ("k_iters", k_iters.to_string()),
        ("k_cond", k_cond.to_string()),
        ("init_c_t", render(&init, 0)),
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
    let text = expand_template(&template, &consts, &blocks)?;
    Ok(Built { ir, text })
}

/// Load `width` registers from `buf[index..]`, or zeros where `inside` fails.
fn load_or_zero(dst: &str, at: i64, buf: &str, index: Expr, inside: Vec<Cond>, width: i64) -> Vec<Instr> {
    let load = Instr::GlobalLoad {
        dst: reg(dst, at),
        buf: buf.into(),
        index,
        width: width as u32,
    };
    if inside.is_empty() {
        vec![load]
    } else {
        let mut v = zero(dst, at, width);
        v.push(Instr::Guard {
            conds: inside,
            body: vec![load],
        });
        v
    }
}

fn launch(plan: &VariantPlan) -> Launch {
    let b = &plan.blocking;
    Launch {
        mg: b.mg,
        ng: b.ng,
        mb: b.mb,
        nb: b.nb,
    }
}

pub fn sgemm(plan: &VariantPlan) -> Result<KernelArtifact> {
    let v = plan.gemm_view;
    let (m, n, k) = (v.m as usize, v.n as usize, v.k as usize);
    let buffers = vec![
        BufferDecl::input("a", Dims::new([("M", m), ("K", k)])?, "row-major M:K"),
        BufferDecl::input("bt", Dims::new([("N", n), ("K", k)])?, "row-major N:K (b pre-transposed)"),
        BufferDecl::output("c", Dims::new([("M", m), ("N", n)])?, "row-major M:N"),
    ];
    let ops = Operands {
        m: m as i64,
        n: n as i64,
        k: k as i64,
        a_buf: "a",
        a_layout: ALayout::RowMajor,
        b_buf: "bt",
        c_buf: "c",
        bias: None,
        relu: false,
    };
    let built = build(&ops, plan, "sgemm", &buffers)?;
    KernelArtifact::assemble("sgemm", built.text, built.ir, buffers, launch(plan))
}

/// Conv buffers common to every variant; `input` describes the operand the
/// compute kernel actually reads.
pub(super) fn conv_buffers(s: &ConvSpec, input: BufferDecl) -> Vec<BufferDecl> {
    let mut v = vec![
        input,
        BufferDecl::input("filts", s.filts_dims(), "OC:KY:KX:IC, read as N:K"),
    ];
    if s.has_bias {
        v.push(BufferDecl::input("bias", s.bias_dims(), "OC"));
    }
    v.push(BufferDecl::output("out", s.out_dims(), "row-major, read as M:N"));
    v
}

pub fn conv(plan: &VariantPlan, s: &ConvSpec) -> Result<KernelArtifact> {
    let v = plan.gemm_view;
    let (input, layout, a_buf) = match plan.variant {
        Variant::K1conv | Variant::K1convSimd => {
            let g = plan.vec_width as usize;
            let dims = super::transform::k1_dims(s, g)?;
            (
                BufferDecl::input("in_k1", dims, "channel groups of the vector width innermost, one row per output point"),
                ALayout::Grouped { v: g as i64 },
                "in_k1",
            )
        }
        _ => (
            BufferDecl::input("in", s.in_dims().clone(), "row-major"),
            ALayout::Patch(PatchGeom {
                y: s.in_y() as i64,
                x: s.in_x() as i64,
                c: s.in_c() as i64,
                oy: s.out_y() as i64,
                ox: s.out_x() as i64,
                ksz: s.kernel_size as i64,
                stride: s.stride as i64,
                pad: s.pad as i64,
            }),
            "in",
        ),
    };
    let buffers = conv_buffers(s, input);
    let ops = Operands {
        m: v.m as i64,
        n: v.n as i64,
        k: v.k as i64,
        a_buf,
        a_layout: layout,
        b_buf: "filts",
        c_buf: "out",
        bias: s.has_bias.then_some("bias"),
        relu: s.fuse_relu,
    };
    let name = plan.variant.name();
    let built = build(&ops, plan, name, &buffers)?;
    KernelArtifact::assemble(name, built.text, built.ir, buffers, launch(plan))
}
