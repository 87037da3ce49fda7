//! Input-layout transform kernels, one thread per destination element.

use std::collections::BTreeMap;

use super::ir::{guarded, ArrayDecl, Cond, Expr, Instr, Reg, ScheduleIr};
use super::render::render;
use super::template::{expand_template, vars, Template};
use super::{decls, params, BufferDecl, KernelArtifact, Launch};
use crate::error::{Error, Result};
use crate::nda::Dims;
use crate::netops::ConvSpec;
use crate::planner::{TconvTile, VariantPlan};

const THREADS: i64 = 64;

const TEMPLATE: &str = "// %(kname): %(what)
kernel void %(kname)(%(params))
{
    int const wg_m = get_group_id(0);
    int const t_m = get_local_id(0);
    %(decls)
    %(body)
}
";

/// `KC:M:V` with `V` input channels per group and one row per output point.
pub fn k1_dims(s: &ConvSpec, v: usize) -> Result<Dims> {
    if v == 0 || s.in_c() % v != 0 {
        return Err(Error::Shape(format!("channel group {v} does not divide {} channels", s.in_c())));
    }
    Dims::new([
        ("KC", s.in_c() / v),
        ("M", s.batch() * s.out_y() * s.out_x()),
        ("V", v),
    ])
}

/// Padded, tile-extended input: `B:TY:TX:C`.
pub fn tile_dims(s: &ConvSpec, t: &TconvTile) -> Result<Dims> {
    let (st, k) = (s.stride, s.kernel_size);
    let ty = (t.tiles_y as usize * t.tile_y as usize - 1) * st + k;
    let tx = (t.tiles_x as usize * t.tile_x as usize - 1) * st + k;
    Dims::new([("B", s.batch()), ("TY", ty), ("TX", tx), ("C", s.in_c())])
}

/// `in` offset of `(b, y, x, c)` plus the conditions placing it inside the image.
fn image_read(s: &ConvSpec, b: Expr, y: Expr, x: Expr, c: Expr, may_leave: bool) -> (Expr, Vec<Cond>) {
    let (yy, xx, cc) = (s.in_y() as i64, s.in_x() as i64, s.in_c() as i64);
    let index = ((b * yy + y.clone()) * xx + x.clone()) * cc + c;
    let conds = if may_leave {
        vec![Cond::within(y, 0, yy), Cond::within(x, 0, xx)]
    } else {
        vec![]
    };
    (index, conds)
}

fn gather(name: &str, what: &str, s: &ConvSpec, out: BufferDecl, read: impl Fn(Expr) -> (Expr, Vec<Cond>)) -> Result<KernelArtifact> {
    let len = out.dims.product()? as i64;
    let o = Expr::var("wg_m") * THREADS + Expr::var("t_m");
    let (index, inside) = read(o.clone());
    let tmp = Reg::new("tmp", 0);
    let mut body = vec![Instr::mov_imm(tmp.clone(), 0.0)];
    body.extend(guarded(
        inside,
        vec![Instr::GlobalLoad {
            dst: tmp.clone(),
            buf: "in".into(),
            index,
            width: 1,
        }],
    ));
    body.push(Instr::GlobalStore {
        buf: out.name.clone(),
        index: o.clone(),
        src: tmp,
        width: 1,
    });
    let body = guarded(
        (len % THREADS != 0).then(|| Cond::lt(o, len)).into_iter().collect(),
        body,
    );
    let ir = ScheduleIr {
        kernel: name.into(),
        regs: vec![ArrayDecl { name: "tmp".into(), len: 1 }],
        locals: vec![],
        body,
    };
    let buffers = vec![BufferDecl::input("in", s.in_dims().clone(), "row-major"), out];
    let mut consts = vars(&[("kname", name), ("what", what)]);
    consts.insert("params".into(), params(&buffers));
    consts.insert("decls".into(), decls(&ir));
    let blocks: BTreeMap<String, String> = [("body".to_string(), render(&ir.body, 0))].into();
    let text = expand_template(&Template::new("transform", TEMPLATE, &["body"]), &consts, &blocks)?;
    let launch = Launch {
        mg: ((len + THREADS - 1) / THREADS) as u64,
        ng: 1,
        mb: THREADS as u32,
        nb: 1,
    };
    KernelArtifact::assemble(name, text, ir, buffers, launch)
}

pub fn k1_layout(plan: &VariantPlan, s: &ConvSpec) -> Result<KernelArtifact> {
    let v = plan.vec_width as i64;
    let dims = k1_dims(s, v as usize)?;
    let m_total = dims.size_of("M").unwrap() as i64;
    let (oy, ox) = (s.out_y() as i64, s.out_x() as i64);
    let (st, pad) = (s.stride as i64, s.pad as i64);
    let out = BufferDecl::output("in_k1", dims, "KC:M:V");
    gather("k1_layout", "regroup channels, one row per output point", s, out, |o| {
        let kc = o.clone().div(m_total * v);
        let m = o.clone().div(v).rem(m_total);
        let c = kc * v + o.rem(v);
        let b = m.clone().div(oy * ox);
        let y = m.clone().div(ox).rem(oy) * st - pad;
        let x = m.rem(ox) * st - pad;
        image_read(s, b, y, x, c, s.pad > 0)
    })
}

pub fn tile_layout(plan: &VariantPlan, s: &ConvSpec) -> Result<KernelArtifact> {
    let tile = plan.tile.as_ref().ok_or_else(|| Error::Plan {
        variant: plan.variant.name().into(),
        reason: "tile layout needs a tile geometry".into(),
    })?;
    let dims = tile_dims(s, tile)?;
    let (ty, tx, c) = (
        dims.size_of("TY").unwrap() as i64,
        dims.size_of("TX").unwrap() as i64,
        s.in_c() as i64,
    );
    let pad = s.pad as i64;
    let out = BufferDecl::output("in_tiled", dims, "B:TY:TX:C, zero border");
    gather("tile_layout", "zero-pad and extend to whole tiles", s, out, |o| {
        let ch = o.clone().rem(c);
        let x = o.clone().div(c).rem(tx) - pad;
        let y = o.clone().div(c * tx).rem(ty) - pad;
        let b = o.div(c * tx * ty);
        image_read(s, b, y, x, ch, true)
    })
}
