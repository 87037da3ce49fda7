//! Schedule IR: the executable twin of emitted kernel text.
//!
//! Index expressions are built from integer constants, named variables,
//! sums, constant multiples, and floor division / remainder by positive
//! constants. Built-in variables are `wg_m`, `wg_n` (workgroup coordinates)
//! and `t_m`, `t_n` (thread coordinates inside the workgroup); every other
//! variable is bound by an enclosing [`Instr::Loop`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BUILTIN_VARS: [&str; 4] = ["wg_m", "wg_n", "t_m", "t_n"];

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expr {
    Const(i64),
    Var(String),
    Add(Vec<Expr>),
    Mul(Box<Expr>, i64),
    /// Floor division by a positive constant.
    Div(Box<Expr>, i64),
    /// Euclidean remainder by a positive constant.
    Mod(Box<Expr>, i64),
}

impl Expr {
    pub fn var(name: &str) -> Expr {
        Expr::Var(name.to_string())
    }

    pub fn c(v: i64) -> Expr {
        Expr::Const(v)
    }

    pub fn div(self, d: i64) -> Expr {
        assert!(d > 0, "division by non-positive constant");
        match self {
            _ if d == 1 => self,
            Expr::Const(v) => Expr::Const(v.div_euclid(d)),
            e => Expr::Div(Box::new(e), d),
        }
    }

    pub fn rem(self, d: i64) -> Expr {
        assert!(d > 0, "remainder by non-positive constant");
        match self {
            _ if d == 1 => Expr::Const(0),
            Expr::Const(v) => Expr::Const(v.rem_euclid(d)),
            e => Expr::Mod(Box::new(e), d),
        }
    }

    /// Evaluate with a variable lookup; `None` if a variable is unbound.
    pub fn eval(&self, lookup: &dyn Fn(&str) -> Option<i64>) -> Option<i64> {
        Some(match self {
            Expr::Const(v) => *v,
            Expr::Var(n) => lookup(n)?,
            Expr::Add(xs) => {
                let mut s = 0;
                for x in xs {
                    s += x.eval(lookup)?;
                }
                s
            }
            Expr::Mul(e, k) => e.eval(lookup)? * k,
            Expr::Div(e, d) => e.eval(lookup)?.div_euclid(*d),
            Expr::Mod(e, d) => e.eval(lookup)?.rem_euclid(*d),
        })
    }

    pub fn vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(n) => {
                out.insert(n.clone());
            }
            Expr::Add(xs) => xs.iter().for_each(|x| x.vars(out)),
            Expr::Mul(e, _) | Expr::Div(e, _) | Expr::Mod(e, _) => e.vars(out),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(_) => 1,
            Expr::Mul(..) | Expr::Div(..) | Expr::Mod(..) => 2,
            Expr::Const(v) if *v < 0 => 1,
            _ => 3,
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let wrap = |f: &mut fmt::Formatter<'_>, e: &Expr, min: u8| {
            if e.precedence() < min {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        };
        match self {
            Expr::Const(v) => write!(f, "{v}"),
            Expr::Var(n) => f.write_str(n),
            Expr::Add(xs) => {
                for (i, x) in xs.iter().enumerate() {
                    match x {
                        Expr::Const(v) if i > 0 && *v < 0 => write!(f, " - {}", -v)?,
                        _ => {
                            if i > 0 {
                                f.write_str(" + ")?;
                            }
                            wrap(f, x, 2)?;
                        }
                    }
                }
                Ok(())
            }
            Expr::Mul(e, k) => {
                wrap(f, e, 2)?;
                write!(f, "*{k}")
            }
            Expr::Div(e, d) => {
                wrap(f, e, 3)?;
                write!(f, "/{d}")
            }
            Expr::Mod(e, d) => {
                wrap(f, e, 3)?;
                write!(f, "%{d}")
            }
        }
    }
}

impl ops::Add for Expr {
    type Output = Expr;

    fn add(self, rhs: Expr) -> Expr {
        let mut terms = Vec::new();
        let mut konst = 0i64;
        for e in [self, rhs] {
            match e {
                Expr::Add(xs) => {
                    for x in xs {
                        match x {
                            Expr::Const(v) => konst += v,
                            x => terms.push(x),
                        }
                    }
                }
                Expr::Const(v) => konst += v,
                x => terms.push(x),
            }
        }
        if konst != 0 {
            terms.push(Expr::Const(konst));
        }
        match terms.len() {
            0 => Expr::Const(0),
            1 => terms.pop().unwrap(),
            _ => Expr::Add(terms),
        }
    }
}

impl ops::Add<i64> for Expr {
    type Output = Expr;

    fn add(self, rhs: i64) -> Expr {
        self + Expr::Const(rhs)
    }
}

impl ops::Sub<i64> for Expr {
    type Output = Expr;

    fn sub(self, rhs: i64) -> Expr {
        self + Expr::Const(-rhs)
    }
}

impl ops::Mul<i64> for Expr {
    type Output = Expr;

    fn mul(self, k: i64) -> Expr {
        match self {
            _ if k == 0 => Expr::Const(0),
            e if k == 1 => e,
            Expr::Const(v) => Expr::Const(v * k),
            Expr::Mul(e, j) => Expr::Mul(e, j * k),
            e => Expr::Mul(Box::new(e), k),
        }
    }
}

/// `lo <= expr < hi`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cond {
    pub expr: Expr,
    pub lo: i64,
    pub hi: i64,
}

impl Cond {
    pub fn lt(expr: Expr, hi: i64) -> Cond {
        Cond { expr, lo: i64::MIN, hi }
    }

    pub fn within(expr: Expr, lo: i64, hi: i64) -> Cond {
        Cond { expr, lo, hi }
    }
}

impl fmt::Display for Cond {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.lo == i64::MIN {
            write!(f, "{} < {}", self.expr, self.hi)
        } else {
            write!(f, "{} <= {} && {} < {}", self.lo, self.expr, self.expr, self.hi)
        }
    }
}

/// One element of a per-thread register array.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reg {
    pub name: String,
    pub idx: u32,
}

impl Reg {
    pub fn new(name: &str, idx: u32) -> Reg {
        Reg {
            name: name.to_string(),
            idx,
        }
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.name, self.idx)
    }
}

impl Serialize for Reg {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Reg {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bad = || serde::de::Error::custom(format!("register `{s}` is not of the form name[idx]"));
        let (name, rest) = s.split_once('[').ok_or_else(bad)?;
        let idx = rest.strip_suffix(']').and_then(|i| i.parse().ok()).ok_or_else(bad)?;
        Ok(Reg::new(name, idx))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Operand {
    Imm(f32),
    Reg(Reg),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Instr {
    /// `dst[0..width] = buf[index .. index+width]`.
    GlobalLoad { dst: Reg, buf: String, index: Expr, width: u32 },
    GlobalStore { buf: String, index: Expr, src: Reg, width: u32 },
    LocalLoad { dst: Reg, buf: String, index: Expr, width: u32 },
    LocalStore { buf: String, index: Expr, src: Reg, width: u32 },
    Mov { dst: Reg, src: Operand },
    /// `dst += a * b`, fused.
    Fma { dst: Reg, a: Reg, b: Reg },
    Add { dst: Reg, a: Reg, b: Reg },
    Relu { dst: Reg },
    Barrier,
    /// `var` runs over `0..bound`; `unroll` is a hint for the text form.
    Loop { var: String, bound: u64, unroll: u32, body: Vec<Instr> },
    /// Body executes only for threads satisfying every condition.
    Guard { conds: Vec<Cond>, body: Vec<Instr> },
}

impl Instr {
    pub fn mov_imm(dst: Reg, v: f32) -> Instr {
        Instr::Mov {
            dst,
            src: Operand::Imm(v),
        }
    }
}

/// Wrap `body` in a guard unless there is nothing to check.
pub fn guarded(conds: Vec<Cond>, body: Vec<Instr>) -> Vec<Instr> {
    if conds.is_empty() {
        body
    } else {
        vec![Instr::Guard { conds, body }]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayDecl {
    pub name: String,
    pub len: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleIr {
    pub kernel: String,
    pub regs: Vec<ArrayDecl>,
    pub locals: Vec<ArrayDecl>,
    pub body: Vec<Instr>,
}

/// Per-kind instruction totals of a static instruction list.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InstrCounts {
    pub fma: usize,
    pub global_loads: usize,
    pub global_stores: usize,
    pub barriers: usize,
}

pub fn count_instrs(body: &[Instr]) -> InstrCounts {
    let mut c = InstrCounts::default();
    fn walk(body: &[Instr], c: &mut InstrCounts) {
        for i in body {
            match i {
                Instr::Fma { .. } => c.fma += 1,
                Instr::GlobalLoad { .. } => c.global_loads += 1,
                Instr::GlobalStore { .. } => c.global_stores += 1,
                Instr::Barrier => c.barriers += 1,
                Instr::Loop { body, .. } | Instr::Guard { body, .. } => walk(body, c),
                _ => {}
            }
        }
    }
    walk(body, &mut c);
    c
}

impl ScheduleIr {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("IR serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Structural checks: declared names, register ranges, barriers outside
    /// guards, bound variables, and registers written before they are read
    /// (in program order).
    pub fn validate(&self, global_bufs: &[&str]) -> Result<()> {
        let regs: BTreeMap<&str, u64> = self.regs.iter().map(|d| (d.name.as_str(), d.len)).collect();
        let locals: BTreeMap<&str, u64> = self.locals.iter().map(|d| (d.name.as_str(), d.len)).collect();
        let mut cx = Validate {
            regs,
            locals,
            globals: global_bufs.iter().copied().collect(),
            scope: BUILTIN_VARS.iter().map(|s| s.to_string()).collect(),
            written: BTreeSet::new(),
        };
        cx.block(&self.body, false)
    }
}

struct Validate<'a> {
    regs: BTreeMap<&'a str, u64>,
    locals: BTreeMap<&'a str, u64>,
    globals: BTreeSet<&'a str>,
    scope: Vec<String>,
    written: BTreeSet<(String, u32)>,
}

impl Validate<'_> {
    fn reg(&self, r: &Reg, width: u32) -> Result<()> {
        match self.regs.get(r.name.as_str()) {
            Some(&len) if r.idx as u64 + width as u64 <= len => Ok(()),
            Some(&len) => Err(Error::Ir(format!("{r} (width {width}) exceeds register array of {len}"))),
            None => Err(Error::Ir(format!("undeclared register array `{}`", r.name))),
        }
    }

    fn read(&self, r: &Reg, width: u32) -> Result<()> {
        self.reg(r, width)?;
        for i in 0..width {
            if !self.written.contains(&(r.name.clone(), r.idx + i)) {
                return Err(Error::Ir(format!("{}[{}] read before written", r.name, r.idx + i)));
            }
        }
        Ok(())
    }

    fn write(&mut self, r: &Reg, width: u32) -> Result<()> {
        self.reg(r, width)?;
        for i in 0..width {
            self.written.insert((r.name.clone(), r.idx + i));
        }
        Ok(())
    }

    fn expr(&self, e: &Expr) -> Result<()> {
        let mut vs = BTreeSet::new();
        e.vars(&mut vs);
        match vs.iter().find(|v| !self.scope.contains(v)) {
            Some(v) => Err(Error::Ir(format!("unbound variable `{v}` in `{e}`"))),
            None => Ok(()),
        }
    }

    fn global(&self, b: &str) -> Result<()> {
        if self.globals.contains(b) {
            Ok(())
        } else {
            Err(Error::Ir(format!("undeclared global buffer `{b}`")))
        }
    }

    fn local(&self, b: &str) -> Result<()> {
        if self.locals.contains_key(b) {
            Ok(())
        } else {
            Err(Error::Ir(format!("undeclared local buffer `{b}`")))
        }
    }

    fn block(&mut self, body: &[Instr], in_guard: bool) -> Result<()> {
        for ins in body {
            match ins {
                Instr::GlobalLoad { dst, buf, index, width } => {
                    self.global(buf)?;
                    self.expr(index)?;
                    self.write(dst, *width)?;
                }
                Instr::LocalLoad { dst, buf, index, width } => {
                    self.local(buf)?;
                    self.expr(index)?;
                    self.write(dst, *width)?;
                }
                Instr::GlobalStore { buf, index, src, width } => {
                    self.global(buf)?;
                    self.expr(index)?;
                    self.read(src, *width)?;
                }
                Instr::LocalStore { buf, index, src, width } => {
                    self.local(buf)?;
                    self.expr(index)?;
                    self.read(src, *width)?;
                }
                Instr::Mov { dst, src } => {
                    if let Operand::Reg(r) = src {
                        self.read(r, 1)?;
                    }
                    self.write(dst, 1)?;
                }
                Instr::Fma { dst, a, b } => {
                    self.read(dst, 1)?;
                    self.read(a, 1)?;
                    self.read(b, 1)?;
                }
                Instr::Add { dst, a, b } => {
                    self.read(a, 1)?;
                    self.read(b, 1)?;
                    self.write(dst, 1)?;
                }
                Instr::Relu { dst } => self.read(dst, 1)?,
                Instr::Barrier => {
                    if in_guard {
                        return Err(Error::Ir("barrier inside a guard".into()));
                    }
                }
                Instr::Loop { var, body, .. } => {
                    if var.is_empty() || BUILTIN_VARS.contains(&var.as_str()) {
                        return Err(Error::Ir(format!("invalid loop variable `{var}`")));
                    }
                    self.scope.push(var.clone());
                    self.block(body, in_guard)?;
                    self.scope.pop();
                }
                Instr::Guard { conds, body } => {
                    for c in conds {
                        self.expr(&c.expr)?;
                    }
                    self.block(body, true)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expr_building_folds_constants() {
        let e = Expr::var("t_m") * 8 + 3 + Expr::c(2);
        assert_eq!(e.to_string(), "t_m*8 + 5");
        assert_eq!(Expr::var("x") * 1, Expr::var("x"));
        assert_eq!(Expr::var("x") * 0, Expr::c(0));
        assert_eq!((Expr::var("x") - 2).to_string(), "x - 2");
        assert_eq!(Expr::c(7).div(2), Expr::c(3));
        assert_eq!(Expr::var("q").rem(1), Expr::c(0));
        let nested = (Expr::var("a") + Expr::var("b")).div(4) * 3;
        assert_eq!(nested.to_string(), "(a + b)/4*3");
    }

    #[test]
    fn expr_eval_floor_semantics() {
        let e = (Expr::var("v") - 3).div(2);
        let at = |v: i64| e.eval(&|n| (n == "v").then_some(v)).unwrap();
        assert_eq!(at(0), -2);
        assert_eq!(at(7), 2);
        assert_eq!((Expr::var("v") - 3).rem(4).eval(&|_| Some(1)), Some(2));
        assert_eq!(Expr::var("w").eval(&|_| None), None);
    }

    #[test]
    fn reg_json_form() {
        let r = Reg::new("c_t", 12);
        let j = serde_json::to_string(&r).unwrap();
        assert_eq!(j, "\"c_t[12]\"");
        assert_eq!(serde_json::from_str::<Reg>(&j).unwrap(), r);
        assert!(serde_json::from_str::<Reg>("\"c_t12\"").is_err());
    }

    fn tiny(body: Vec<Instr>) -> ScheduleIr {
        ScheduleIr {
            kernel: "k".into(),
            regs: vec![ArrayDecl { name: "r".into(), len: 2 }],
            locals: vec![ArrayDecl { name: "l".into(), len: 4 }],
            body,
        }
    }

    #[test]
    fn validation_catches_structural_errors() {
        let ok = tiny(vec![
            Instr::mov_imm(Reg::new("r", 0), 0.0),
            Instr::GlobalStore {
                buf: "out".into(),
                index: Expr::var("t_m"),
                src: Reg::new("r", 0),
                width: 1,
            },
        ]);
        ok.validate(&["out"]).unwrap();
        assert!(ok.validate(&["other"]).is_err());

        let unread = tiny(vec![Instr::Relu { dst: Reg::new("r", 1) }]);
        assert!(unread.validate(&[]).unwrap_err().to_string().contains("read before written"));

        let barrier = tiny(vec![Instr::Guard {
            conds: vec![Cond::lt(Expr::var("t_m"), 1)],
            body: vec![Instr::Barrier],
        }]);
        assert!(barrier.validate(&[]).is_err());

        let unbound = tiny(vec![Instr::LocalLoad {
            dst: Reg::new("r", 0),
            buf: "l".into(),
            index: Expr::var("k"),
            width: 1,
        }]);
        assert!(unbound.validate(&[]).unwrap_err().to_string().contains("unbound variable `k`"));

        let wide = tiny(vec![Instr::LocalLoad {
            dst: Reg::new("r", 1),
            buf: "l".into(),
            index: Expr::c(0),
            width: 2,
        }]);
        assert!(wide.validate(&[]).is_err());
    }

    #[test]
    fn ir_json_round_trip() {
        let ir = tiny(vec![Instr::Loop {
            var: "k".into(),
            bound: 3,
            unroll: 3,
            body: vec![
                Instr::LocalLoad {
                    dst: Reg::new("r", 0),
                    buf: "l".into(),
                    index: Expr::var("k") + 1,
                    width: 1,
                },
                Instr::Guard {
                    conds: vec![Cond::within(Expr::var("k"), 0, 2)],
                    body: vec![Instr::Fma {
                        dst: Reg::new("r", 0),
                        a: Reg::new("r", 0),
                        b: Reg::new("r", 0),
                    }],
                },
            ],
        }]);
        let back = ScheduleIr::from_json(&ir.to_json()).unwrap();
        assert_eq!(back, ir);
        assert_eq!(count_instrs(&ir.body).fma, 1);
    }
}
