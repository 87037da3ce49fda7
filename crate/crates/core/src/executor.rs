//! Host emulator for schedule IR.
//!
//! Threads of a workgroup run in lockstep: every instruction executes for
//! all active threads before the next one starts, and guards narrow the
//! active set. A barrier reached by only part of the workgroup is an error.
//! Workgroups never communicate, so they run in any order or in parallel;
//! their stores are collected and applied in launch order.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codegen::ir::{Cond, Expr, Instr, Operand, Reg, BUILTIN_VARS};
use crate::codegen::{BufferRole, KernelArtifact};
use crate::error::{Error, Result};
use crate::nda::Nda;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmuConfig {
    pub check_bounds: bool,
    pub trap_nan: bool,
    pub collect_counters: bool,
    pub workgroup_parallelism: usize,
    /// Shuffle workgroup execution order with this seed.
    pub shuffle_seed: Option<u64>,
}

impl Default for EmuConfig {
    fn default() -> Self {
        EmuConfig {
            check_bounds: true,
            trap_nan: false,
            collect_counters: true,
            workgroup_parallelism: 1,
            shuffle_seed: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficCounters {
    pub global_loads_bytes: u64,
    pub global_stores_bytes: u64,
    pub local_loads_bytes: u64,
    pub local_stores_bytes: u64,
    pub fma_count: u64,
    pub barrier_count: u64,
    /// Global load bytes broken down by buffer.
    pub loads_by_buffer: BTreeMap<String, u64>,
}

impl TrafficCounters {
    pub fn flops(&self) -> u64 {
        2 * self.fma_count
    }

    fn merge(&mut self, o: &TrafficCounters) {
        self.global_loads_bytes += o.global_loads_bytes;
        self.global_stores_bytes += o.global_stores_bytes;
        self.local_loads_bytes += o.local_loads_bytes;
        self.local_stores_bytes += o.local_stores_bytes;
        self.fma_count += o.fma_count;
        self.barrier_count += o.barrier_count;
        for (k, v) in &o.loads_by_buffer {
            *self.loads_by_buffer.entry(k.clone()).or_default() += v;
        }
    }
}

// ---- compiled form -------------------------------------------------------

enum CExpr {
    Affine { c: i64, terms: Vec<(usize, i64)> },
    Sum(Vec<CExpr>),
    Scale(Box<CExpr>, i64),
    Div(Box<CExpr>, i64),
    Mod(Box<CExpr>, i64),
}

impl CExpr {
    #[inline]
    fn eval(&self, env: &[i64]) -> i64 {
        match self {
            CExpr::Affine { c, terms } => terms.iter().fold(*c, |acc, &(s, k)| acc + env[s] * k),
            CExpr::Sum(xs) => xs.iter().map(|x| x.eval(env)).sum(),
            CExpr::Scale(e, k) => e.eval(env) * k,
            CExpr::Div(e, d) => e.eval(env).div_euclid(*d),
            CExpr::Mod(e, d) => e.eval(env).rem_euclid(*d),
        }
    }
}

struct CCond {
    e: CExpr,
    lo: i64,
    hi: i64,
}

#[derive(Clone, Copy)]
enum Space {
    Global(usize),
    Local(usize),
}

enum Op {
    Load { dst: usize, space: Space, idx: CExpr, width: usize, at: usize },
    Store { src: usize, space: Space, idx: CExpr, width: usize, at: usize },
    MovImm { dst: usize, v: f32 },
    MovReg { dst: usize, src: usize },
    Fma { dst: usize, a: usize, b: usize },
    Add { dst: usize, a: usize, b: usize },
    Relu { dst: usize },
    Barrier { at: usize },
    Loop { slot: usize, bound: i64, body: Vec<Op> },
    Guard { conds: Vec<CCond>, body: Vec<Op> },
}

struct Program {
    ops: Vec<Op>,
    nregs: usize,
    nslots: usize,
    locals: Vec<usize>,
    bufs: Vec<String>,
    /// Flattened instruction text for error messages, indexed by `at`.
    sites: Vec<String>,
}

struct Compiler<'a> {
    regs: BTreeMap<&'a str, (usize, usize)>,
    locals: BTreeMap<&'a str, usize>,
    bufs: BTreeMap<&'a str, usize>,
    scope: Vec<(String, usize)>,
    nslots: usize,
    sites: Vec<String>,
}

impl Compiler<'_> {
    fn slot(&self, name: &str) -> Result<usize> {
        if let Some(i) = BUILTIN_VARS.iter().position(|b| *b == name) {
            return Ok(i);
        }
        self.scope
            .iter()
            .rev()
            .find(|(n, _)| n == name)
            .map(|(_, s)| *s)
            .ok_or_else(|| Error::Ir(format!("unbound variable `{name}`")))
    }

    fn expr(&self, e: &Expr) -> Result<CExpr> {
        Ok(match e {
            Expr::Const(v) => CExpr::Affine { c: *v, terms: vec![] },
            Expr::Var(n) => CExpr::Affine {
                c: 0,
                terms: vec![(self.slot(n)?, 1)],
            },
            Expr::Add(xs) => {
                let mut c = 0;
                let mut terms: Vec<(usize, i64)> = Vec::new();
                let mut rest = Vec::new();
                for x in xs {
                    match self.expr(x)? {
                        CExpr::Affine { c: c2, terms: t2 } => {
                            c += c2;
                            for (s, k) in t2 {
                                match terms.iter_mut().find(|(s0, _)| *s0 == s) {
                                    Some(t) => t.1 += k,
                                    None => terms.push((s, k)),
                                }
                            }
                        }
                        other => rest.push(other),
                    }
                }
                let affine = CExpr::Affine { c, terms };
                if rest.is_empty() {
                    affine
                } else {
                    rest.push(affine);
                    CExpr::Sum(rest)
                }
            }
            Expr::Mul(x, k) => match self.expr(x)? {
                CExpr::Affine { c, terms } => CExpr::Affine {
                    c: c * k,
                    terms: terms.into_iter().map(|(s, t)| (s, t * k)).collect(),
                },
                other => CExpr::Scale(Box::new(other), *k),
            },
            Expr::Div(x, d) | Expr::Mod(x, d) if *d <= 0 => {
                return Err(Error::Ir(format!("non-positive divisor {d} in `{x}`")))
            }
            Expr::Div(x, d) => CExpr::Div(Box::new(self.expr(x)?), *d),
            Expr::Mod(x, d) => CExpr::Mod(Box::new(self.expr(x)?), *d),
        })
    }

    fn reg(&self, r: &Reg, width: u32) -> Result<usize> {
        let (base, len) = *self
            .regs
            .get(r.name.as_str())
            .ok_or_else(|| Error::Ir(format!("undeclared register array `{}`", r.name)))?;
        if r.idx as usize + width as usize > len {
            return Err(Error::Ir(format!("{r} (width {width}) exceeds register array of {len}")));
        }
        Ok(base + r.idx as usize)
    }

    fn global(&self, b: &str) -> Result<Space> {
        self.bufs
            .get(b)
            .map(|&i| Space::Global(i))
            .ok_or_else(|| Error::Ir(format!("undeclared global buffer `{b}`")))
    }

    fn local(&self, b: &str) -> Result<Space> {
        self.locals
            .get(b)
            .map(|&i| Space::Local(i))
            .ok_or_else(|| Error::Ir(format!("undeclared local buffer `{b}`")))
    }

    fn site(&mut self, ins: &Instr) -> usize {
        let text = crate::codegen::render::render(std::slice::from_ref(ins), 0);
        self.sites.push(text.trim().to_string());
        self.sites.len() - 1
    }

    fn block(&mut self, body: &[Instr]) -> Result<Vec<Op>> {
        let mut out = Vec::with_capacity(body.len());
        for ins in body {
            out.push(match ins {
                Instr::GlobalLoad { dst, buf, index, width } | Instr::LocalLoad { dst, buf, index, width } => {
                    let space = if matches!(ins, Instr::GlobalLoad { .. }) {
                        self.global(buf)?
                    } else {
                        self.local(buf)?
                    };
                    Op::Load {
                        dst: self.reg(dst, *width)?,
                        space,
                        idx: self.expr(index)?,
                        width: *width as usize,
                        at: self.site(ins),
                    }
                }
                Instr::GlobalStore { buf, index, src, width } | Instr::LocalStore { buf, index, src, width } => {
                    let space = if matches!(ins, Instr::GlobalStore { .. }) {
                        self.global(buf)?
                    } else {
                        self.local(buf)?
                    };
                    Op::Store {
                        src: self.reg(src, *width)?,
                        space,
                        idx: self.expr(index)?,
                        width: *width as usize,
                        at: self.site(ins),
                    }
                }
                Instr::Mov { dst, src } => match src {
                    Operand::Imm(v) => Op::MovImm {
                        dst: self.reg(dst, 1)?,
                        v: *v,
                    },
                    Operand::Reg(r) => Op::MovReg {
                        dst: self.reg(dst, 1)?,
                        src: self.reg(r, 1)?,
                    },
                },
                Instr::Fma { dst, a, b } => Op::Fma {
                    dst: self.reg(dst, 1)?,
                    a: self.reg(a, 1)?,
                    b: self.reg(b, 1)?,
                },
                Instr::Add { dst, a, b } => Op::Add {
                    dst: self.reg(dst, 1)?,
                    a: self.reg(a, 1)?,
                    b: self.reg(b, 1)?,
                },
                Instr::Relu { dst } => Op::Relu { dst: self.reg(dst, 1)? },
                Instr::Barrier => Op::Barrier { at: self.site(ins) },
                Instr::Loop { var, bound, body, .. } => {
                    let slot = self.nslots;
                    self.nslots += 1;
                    self.scope.push((var.clone(), slot));
                    let body = self.block(body)?;
                    self.scope.pop();
                    Op::Loop {
                        slot,
                        bound: *bound as i64,
                        body,
                    }
                }
                Instr::Guard { conds, body } => Op::Guard {
                    conds: conds
                        .iter()
                        .map(|c: &Cond| {
                            Ok(CCond {
                                e: self.expr(&c.expr)?,
                                lo: c.lo,
                                hi: c.hi,
                            })
                        })
                        .collect::<Result<_>>()?,
                    body: self.block(body)?,
                },
            });
        }
        Ok(out)
    }
}

fn compile(art: &KernelArtifact) -> Result<Program> {
    let mut regs = BTreeMap::new();
    let mut nregs = 0usize;
    for d in &art.ir.regs {
        if regs.insert(d.name.as_str(), (nregs, d.len as usize)).is_some() {
            return Err(Error::Ir(format!("register array `{}` declared twice", d.name)));
        }
        nregs += d.len as usize;
    }
    let locals: BTreeMap<&str, usize> = art.ir.locals.iter().enumerate().map(|(i, d)| (d.name.as_str(), i)).collect();
    let bufs: BTreeMap<&str, usize> = art.buffers.iter().enumerate().map(|(i, b)| (b.name.as_str(), i)).collect();
    let mut c = Compiler {
        regs,
        locals,
        bufs,
        scope: Vec::new(),
        nslots: BUILTIN_VARS.len(),
        sites: Vec::new(),
    };
    let ops = c.block(&art.ir.body)?;
    Ok(Program {
        ops,
        nregs,
        nslots: c.nslots,
        locals: art.ir.locals.iter().map(|d| d.len as usize).collect(),
        bufs: art.buffers.iter().map(|b| b.name.clone()).collect(),
        sites: c.sites,
    })
}

// ---- execution -----------------------------------------------------------

struct Machine<'a> {
    prog: &'a Program,
    cfg: &'a EmuConfig,
    globals: &'a [&'a [f32]],
    threads: usize,
    nb: usize,
    env: Vec<i64>,
    regs: Vec<f32>,
    locals: Vec<Vec<f32>>,
    writes: Vec<(usize, usize, f32)>,
    counters: TrafficCounters,
    buf_loads: Vec<u64>,
}

impl<'a> Machine<'a> {
    fn new(prog: &'a Program, cfg: &'a EmuConfig, globals: &'a [&'a [f32]], mb: usize, nb: usize) -> Self {
        let threads = mb * nb;
        Machine {
            prog,
            cfg,
            globals,
            threads,
            nb,
            env: vec![0; prog.nslots],
            regs: vec![0.0; threads * prog.nregs],
            locals: prog.locals.iter().map(|&n| vec![0.0; n]).collect(),
            writes: Vec::new(),
            counters: TrafficCounters::default(),
            buf_loads: vec![0; prog.bufs.len()],
        }
    }

    #[inline]
    fn bind_thread(&mut self, t: usize) {
        self.env[2] = (t / self.nb) as i64;
        self.env[3] = (t % self.nb) as i64;
    }

    fn run_wg(&mut self, wg_m: u64, wg_n: u64) -> Result<()> {
        self.env[0] = wg_m as i64;
        self.env[1] = wg_n as i64;
        self.regs.fill(0.0);
        for l in &mut self.locals {
            l.fill(0.0);
        }
        let all: Vec<u32> = (0..self.threads as u32).collect();
        let prog = self.prog;
        self.exec(&prog.ops, &all)
    }

    fn oob(&self, at: usize, offset: i64, len: usize) -> Error {
        Error::Emulation(format!(
            "out-of-bounds access at `{}`: offset {offset} outside [0, {len}) (wg {},{} thread {},{})",
            self.prog.sites[at], self.env[0], self.env[1], self.env[2], self.env[3]
        ))
    }

    fn exec(&mut self, ops: &[Op], active: &[u32]) -> Result<()> {
        let nregs = self.prog.nregs;
        for op in ops {
            match op {
                Op::Load { dst, space, idx, width, at } => {
                    for &t in active {
                        let t = t as usize;
                        self.bind_thread(t);
                        let off = idx.eval(&self.env);
                        let src: &[f32] = match space {
                            Space::Global(b) => self.globals[*b],
                            Space::Local(l) => &self.locals[*l],
                        };
                        let range = usize::try_from(off)
                            .ok()
                            .filter(|o| o + width <= src.len())
                            .map(|o| o..o + width);
                        let base = t * nregs + dst;
                        match range {
                            Some(r) => self.regs[base..base + width].copy_from_slice(&src[r]),
                            None if self.cfg.check_bounds || matches!(space, Space::Local(_)) => {
                                return Err(self.oob(*at, off, src.len()));
                            }
                            None => self.regs[base..base + width].fill(0.0),
                        }
                    }
                    if self.cfg.collect_counters {
                        let bytes = (4 * width * active.len()) as u64;
                        match space {
                            Space::Global(b) => {
                                self.counters.global_loads_bytes += bytes;
                                self.buf_loads[*b] += bytes;
                            }
                            Space::Local(_) => self.counters.local_loads_bytes += bytes,
                        }
                    }
                }
                Op::Store { src, space, idx, width, at } => {
                    for &t in active {
                        let t = t as usize;
                        self.bind_thread(t);
                        let off = idx.eval(&self.env);
                        let len = match space {
                            Space::Global(b) => self.globals[*b].len(),
                            Space::Local(l) => self.locals[*l].len(),
                        };
                        let ok = off >= 0 && off as usize + width <= len;
                        if !ok {
                            if self.cfg.check_bounds || matches!(space, Space::Local(_)) {
                                return Err(self.oob(*at, off, len));
                            }
                            continue;
                        }
                        let base = t * nregs + src;
                        for w in 0..*width {
                            let v = self.regs[base + w];
                            if self.cfg.trap_nan && v.is_nan() {
                                return Err(Error::Emulation(format!(
                                    "NaN stored at `{}`",
                                    self.prog.sites[*at]
                                )));
                            }
                            match space {
                                Space::Global(b) => self.writes.push((*b, off as usize + w, v)),
                                Space::Local(l) => self.locals[*l][off as usize + w] = v,
                            }
                        }
                    }
                    if self.cfg.collect_counters {
                        let bytes = (4 * width * active.len()) as u64;
                        match space {
                            Space::Global(_) => self.counters.global_stores_bytes += bytes,
                            Space::Local(_) => self.counters.local_stores_bytes += bytes,
                        }
                    }
                }
                Op::MovImm { dst, v } => {
                    for &t in active {
                        self.regs[t as usize * nregs + dst] = *v;
                    }
                }
                Op::MovReg { dst, src } => {
                    for &t in active {
                        let b = t as usize * nregs;
                        self.regs[b + dst] = self.regs[b + src];
                    }
                }
                Op::Fma { dst, a, b } => {
                    for &t in active {
                        let base = t as usize * nregs;
                        let r = &mut self.regs[base..base + nregs];
                        r[*dst] = r[*a].mul_add(r[*b], r[*dst]);
                    }
                    self.counters.fma_count += active.len() as u64;
                }
                Op::Add { dst, a, b } => {
                    for &t in active {
                        let base = t as usize * nregs;
                        self.regs[base + dst] = self.regs[base + a] + self.regs[base + b];
                    }
                }
                Op::Relu { dst } => {
                    for &t in active {
                        let r = &mut self.regs[t as usize * nregs + dst];
                        *r = r.max(0.0);
                    }
                }
                Op::Barrier { at } => {
                    if active.len() != self.threads {
                        return Err(Error::Emulation(format!(
                            "barrier divergence at `{}`: {} of {} threads arrived",
                            self.prog.sites[*at],
                            active.len(),
                            self.threads
                        )));
                    }
                    self.counters.barrier_count += 1;
                }
                Op::Loop { slot, bound, body } => {
                    for i in 0..*bound {
                        self.env[*slot] = i;
                        self.exec(body, active)?;
                    }
                }
                Op::Guard { conds, body } => {
                    let mut next = Vec::with_capacity(active.len());
                    for &t in active {
                        self.bind_thread(t as usize);
                        if conds.iter().all(|c| {
                            let v = c.e.eval(&self.env);
                            c.lo <= v && v < c.hi
                        }) {
                            next.push(t);
                        }
                    }
                    if !next.is_empty() {
                        self.exec(body, &next)?;
                    }
                }
            }
        }
        Ok(())
    }
}

type Outputs = BTreeMap<String, Nda>;

/// Execute every workgroup of `art` over `inputs`.
pub fn run(art: &KernelArtifact, inputs: &BTreeMap<String, Nda>, cfg: &EmuConfig) -> Result<(Outputs, TrafficCounters)> {
    if cfg.workgroup_parallelism == 0 {
        return Err(Error::Emulation("workgroup_parallelism must be positive".into()));
    }
    let prog = compile(art)?;
    let mut out_data: Vec<Option<Vec<f32>>> = Vec::new();
    let mut slices: Vec<Vec<f32>> = Vec::new();
    for b in &art.buffers {
        match b.role {
            BufferRole::Input => {
                let nda = inputs
                    .get(&b.name)
                    .ok_or_else(|| Error::Emulation(format!("missing input buffer `{}`", b.name)))?;
                if nda.dims().len() != b.dims.len() {
                    return Err(Error::Emulation(format!(
                        "input `{}` has {} elements, artifact declares {} ({})",
                        b.name,
                        nda.dims().len(),
                        b.dims.len(),
                        b.dims
                    )));
                }
                slices.push(nda.data().to_vec());
                out_data.push(None);
            }
            BufferRole::Output => {
                slices.push(vec![0.0; b.dims.product()?]);
                out_data.push(Some(Vec::new()));
            }
        }
    }
    let globals: Vec<&[f32]> = slices.iter().map(|v| v.as_slice()).collect();

    let launch = art.launch;
    let mut order: Vec<u64> = (0..launch.wg_count()).collect();
    if let Some(seed) = cfg.shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let chunk = order.len().div_ceil(cfg.workgroup_parallelism * 4).max(1);
    let work = |ids: &[u64]| -> Result<(Vec<(usize, usize, f32)>, TrafficCounters)> {
        let mut m = Machine::new(&prog, cfg, &globals, launch.mb as usize, launch.nb as usize);
        for &id in ids {
            m.run_wg(id / launch.ng, id % launch.ng)?;
        }
        for (i, b) in m.buf_loads.iter().enumerate() {
            if *b > 0 {
                m.counters.loads_by_buffer.insert(prog.bufs[i].clone(), *b);
            }
        }
        Ok((m.writes, m.counters))
    };
    let parts: Vec<Result<_>> = if cfg.workgroup_parallelism == 1 {
        order.chunks(chunk).map(work).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workgroup_parallelism)
            .build()
            .map_err(|e| Error::Emulation(e.to_string()))?;
        pool.install(|| order.par_chunks(chunk).map(work).collect())
    };

    let mut counters = TrafficCounters::default();
    for part in parts {
        let (writes, c) = part?;
        counters.merge(&c);
        for (b, off, v) in writes {
            slices[b][off] = v;
        }
    }
    if !cfg.collect_counters {
        counters = TrafficCounters {
            fma_count: counters.fma_count,
            barrier_count: counters.barrier_count,
            ..Default::default()
        };
    }
    let mut outputs = BTreeMap::new();
    for (i, b) in art.buffers.iter().enumerate() {
        if out_data[i].is_some() {
            let data = std::mem::take(&mut slices[i]);
            outputs.insert(b.name.clone(), Nda::new(b.dims.clone(), data)?);
        }
    }
    Ok((outputs, counters))
}

/// Run `stages` in order; each stage reads the original inputs plus every
/// earlier stage's outputs. Returns the last stage's outputs (or the inputs
/// when there are no stages) and per-stage counters.
pub fn run_pipeline(
    stages: &[KernelArtifact],
    inputs: &BTreeMap<String, Nda>,
    cfg: &EmuConfig,
) -> Result<(Outputs, Vec<TrafficCounters>)> {
    let mut pool = inputs.clone();
    let mut last = inputs.clone();
    let mut counters = Vec::with_capacity(stages.len());
    for st in stages {
        for b in st.inputs() {
            match pool.get(&b.name) {
                None => {
                    return Err(Error::Emulation(format!(
                        "stage `{}` needs buffer `{}` that no earlier stage provides",
                        st.name, b.name
                    )))
                }
                Some(n) if n.dims().len() != b.dims.len() => {
                    return Err(Error::Emulation(format!(
                        "stage `{}` expects `{}` as {}, got {}",
                        st.name,
                        b.name,
                        b.dims,
                        n.dims()
                    )))
                }
                Some(_) => {}
            }
        }
        let (outs, c) = run(st, &pool, cfg)?;
        counters.push(c);
        pool.extend(outs.iter().map(|(k, v)| (k.clone(), v.clone())));
        last = outs;
    }
    Ok((last, counters))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::ir::{ArrayDecl, ScheduleIr};
    use crate::codegen::{BufferDecl, Launch};
    use crate::nda::Dims;

    fn artifact(body: Vec<Instr>, n: usize, launch: Launch) -> KernelArtifact {
        KernelArtifact {
            name: "t".into(),
            source_text: String::new(),
            ir: ScheduleIr {
                kernel: "t".into(),
                regs: vec![ArrayDecl { name: "r".into(), len: 2 }],
                locals: vec![ArrayDecl { name: "l".into(), len: 64 }],
                body,
            },
            buffers: vec![
                BufferDecl {
                    name: "in".into(),
                    dims: Dims::new([("N", n)]).unwrap(),
                    role: BufferRole::Input,
                    layout: String::new(),
                },
                BufferDecl {
                    name: "out".into(),
                    dims: Dims::new([("N", n)]).unwrap(),
                    role: BufferRole::Output,
                    layout: String::new(),
                },
            ],
            launch,
        }
    }

    fn gid(threads: i64) -> Expr {
        Expr::var("wg_m") * threads + Expr::var("t_m")
    }

    fn copy_body(threads: i64) -> Vec<Instr> {
        vec![
            Instr::GlobalLoad {
                dst: Reg::new("r", 0),
                buf: "in".into(),
                index: gid(threads),
                width: 1,
            },
            Instr::GlobalStore {
                buf: "out".into(),
                index: gid(threads),
                src: Reg::new("r", 0),
                width: 1,
            },
        ]
    }

    fn inputs(n: usize) -> BTreeMap<String, Nda> {
        let d = Dims::new([("N", n)]).unwrap();
        [("in".to_string(), Nda::from_fn(d, |i| i[0] as f32))].into()
    }

    const L: Launch = Launch { mg: 4, ng: 1, mb: 8, nb: 1 };

    #[test]
    fn copy_kernel_and_counters() {
        let art = artifact(copy_body(8), 32, L);
        let (out, c) = run(&art, &inputs(32), &EmuConfig::default()).unwrap();
        assert_eq!(out["out"].data(), inputs(32)["in"].data());
        assert_eq!(c.global_loads_bytes, 128);
        assert_eq!(c.global_stores_bytes, 128);
        assert_eq!(c.loads_by_buffer["in"], 128);
    }

    #[test]
    fn constant_zero_store() {
        let body = vec![
            Instr::mov_imm(Reg::new("r", 0), 0.0),
            Instr::GlobalStore {
                buf: "out".into(),
                index: gid(8),
                src: Reg::new("r", 0),
                width: 1,
            },
        ];
        let (out, c) = run(&artifact(body, 32, L), &inputs(32), &EmuConfig::default()).unwrap();
        assert!(out["out"].data().iter().all(|v| *v == 0.0));
        assert_eq!(c.global_stores_bytes, 4 * 32);
    }

    #[test]
    fn corrupted_index_is_a_bounds_error() {
        let mut body = copy_body(8);
        if let Instr::GlobalLoad { index, .. } = &mut body[0] {
            *index = gid(8) + 1;
        }
        let err = run(&artifact(body, 32, L), &inputs(32), &EmuConfig::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("offset 32 outside [0, 32)"), "{msg}");
        assert!(msg.contains("r[0] = in[wg_m*8 + t_m + 1]"), "{msg}");
    }

    #[test]
    fn unchecked_run_skips_bad_accesses() {
        let mut body = copy_body(8);
        if let Instr::GlobalLoad { index, .. } = &mut body[0] {
            *index = gid(8) + 1;
        }
        let cfg = EmuConfig {
            check_bounds: false,
            ..Default::default()
        };
        let (out, _) = run(&artifact(body, 32, L), &inputs(32), &cfg).unwrap();
        assert_eq!(out["out"].data()[31], 0.0);
        assert_eq!(out["out"].data()[0], 1.0);
    }

    #[test]
    fn barrier_divergence_detected() {
        let body = vec![Instr::Guard {
            conds: vec![Cond::lt(Expr::var("t_m"), 4)],
            body: vec![Instr::Barrier],
        }];
        let err = run(&artifact(body, 32, L), &inputs(32), &EmuConfig::default()).unwrap_err();
        assert!(err.to_string().contains("barrier divergence"), "{err}");
    }

    #[test]
    fn local_memory_exchange_through_barrier() {
        // each thread publishes its element, then reads its neighbour's
        let t = Expr::var("t_m");
        let body = vec![
            Instr::GlobalLoad {
                dst: Reg::new("r", 0),
                buf: "in".into(),
                index: gid(8),
                width: 1,
            },
            Instr::LocalStore {
                buf: "l".into(),
                index: t.clone(),
                src: Reg::new("r", 0),
                width: 1,
            },
            Instr::Barrier,
            Instr::LocalLoad {
                dst: Reg::new("r", 1),
                buf: "l".into(),
                index: (t + 1).rem(8),
                width: 1,
            },
            Instr::GlobalStore {
                buf: "out".into(),
                index: gid(8),
                src: Reg::new("r", 1),
                width: 1,
            },
        ];
        let (out, c) = run(&artifact(body, 32, L), &inputs(32), &EmuConfig::default()).unwrap();
        assert_eq!(out["out"].data()[7], 0.0);
        assert_eq!(out["out"].data()[8], 9.0);
        assert_eq!(c.barrier_count, 4);
    }

    #[test]
    fn order_and_parallelism_do_not_matter() {
        let art = artifact(copy_body(8), 32, L);
        let base = run(&art, &inputs(32), &EmuConfig::default()).unwrap();
        for (seed, par) in [(Some(3), 1), (Some(9), 4), (None, 3)] {
            let cfg = EmuConfig {
                shuffle_seed: seed,
                workgroup_parallelism: par,
                ..Default::default()
            };
            assert_eq!(run(&art, &inputs(32), &cfg).unwrap(), base);
        }
    }

    #[test]
    fn missing_and_mismatched_inputs() {
        let art = artifact(copy_body(8), 32, L);
        assert!(run(&art, &BTreeMap::new(), &EmuConfig::default()).is_err());
        assert!(run(&art, &inputs(31), &EmuConfig::default()).is_err());
    }

    #[test]
    fn empty_pipeline_is_identity() {
        let ins = inputs(5);
        let (out, c) = run_pipeline(&[], &ins, &EmuConfig::default()).unwrap();
        assert_eq!(out, ins);
        assert!(c.is_empty());
    }

    #[test]
    fn nan_trap() {
        let body = vec![
            Instr::mov_imm(Reg::new("r", 0), f32::NAN),
            Instr::GlobalStore {
                buf: "out".into(),
                index: gid(8),
                src: Reg::new("r", 0),
                width: 1,
            },
        ];
        let art = artifact(body, 32, L);
        let cfg = EmuConfig {
            trap_nan: true,
            ..Default::default()
        };
        assert!(run(&art, &inputs(32), &cfg).is_err());
        assert!(run(&art, &inputs(32), &EmuConfig::default()).is_ok());
    }
}
