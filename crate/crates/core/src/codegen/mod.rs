//! Kernel emission: source text and schedule IR from one plan.

mod gemm;
pub mod ir;
pub mod render;
mod tconv;
pub mod template;
mod transform;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nda::Dims;
use crate::netops::ConvSpec;
use crate::planner::{check_applicable, gemm_view_of, InputTransform, Variant, VariantPlan};

pub use ir::{ArrayDecl, Cond, Expr, Instr, Operand, Reg, ScheduleIr};
pub use template::{expand_template, Template};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferRole {
    Input,
    Output,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferDecl {
    pub name: String,
    pub dims: Dims,
    pub role: BufferRole,
    pub layout: String,
}

impl BufferDecl {
    fn input(name: &str, dims: Dims, layout: &str) -> Self {
        BufferDecl {
            name: name.into(),
            dims,
            role: BufferRole::Input,
            layout: layout.into(),
        }
    }

    fn output(name: &str, dims: Dims, layout: &str) -> Self {
        BufferDecl {
            name: name.into(),
            dims,
            role: BufferRole::Output,
            layout: layout.into(),
        }
    }
}

/// Launch geometry: an `mg x ng` grid of `mb x nb` workgroups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Launch {
    pub mg: u64,
    pub ng: u64,
    pub mb: u32,
    pub nb: u32,
}

impl Launch {
    pub fn wg_count(&self) -> u64 {
        self.mg * self.ng
    }

    pub fn threads_per_wg(&self) -> u32 {
        self.mb * self.nb
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelArtifact {
    pub name: String,
    pub source_text: String,
    pub ir: ScheduleIr,
    pub buffers: Vec<BufferDecl>,
    pub launch: Launch,
}

impl KernelArtifact {
    pub fn buffer(&self, name: &str) -> Option<&BufferDecl> {
        self.buffers.iter().find(|b| b.name == name)
    }

    pub fn inputs(&self) -> impl Iterator<Item = &BufferDecl> {
        self.buffers.iter().filter(|b| b.role == BufferRole::Input)
    }

    pub fn outputs(&self) -> impl Iterator<Item = &BufferDecl> {
        self.buffers.iter().filter(|b| b.role == BufferRole::Output)
    }

    /// Structural check of the IR against the declared buffers.
    pub fn validate(&self) -> Result<()> {
        let names: Vec<&str> = self.buffers.iter().map(|b| b.name.as_str()).collect();
        self.ir.validate(&names)
    }

    fn assemble(name: &str, text: String, ir: ScheduleIr, buffers: Vec<BufferDecl>, launch: Launch) -> Result<Self> {
        let art = KernelArtifact {
            name: name.to_string(),
            source_text: tidy(&text),
            ir,
            buffers,
            launch,
        };
        if art.source_text.contains("%(") {
            return Err(Error::Template(format!("residual placeholder in `{name}`")));
        }
        art.validate()?;
        Ok(art)
    }
}

/// Drop whitespace-only lines left by empty blocks.
fn tidy(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        if !line.trim().is_empty() {
            out.push_str(line.trim_end());
            out.push('\n');
        }
    }
    out
}

fn params(buffers: &[BufferDecl]) -> String {
    buffers
        .iter()
        .map(|b| match b.role {
            BufferRole::Input => format!("global float const * restrict {}", b.name),
            BufferRole::Output => format!("global float * restrict {}", b.name),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn decls(ir: &ScheduleIr) -> String {
    let mut s = String::new();
    for l in &ir.locals {
        s.push_str(&format!("local float {}[{}];\n", l.name, l.len));
    }
    for r in &ir.regs {
        s.push_str(&format!("float {}[{}];\n", r.name, r.len));
    }
    s
}

fn plan_error(plan: &VariantPlan, reason: impl Into<String>) -> Error {
    Error::Plan {
        variant: plan.variant.name().into(),
        reason: reason.into(),
    }
}

fn check_blocking(plan: &VariantPlan) -> Result<()> {
    let b = &plan.blocking;
    let bad = [b.mt, b.nt, b.kb].iter().any(|v| !(1..=8).contains(v)) || b.mb == 0 || b.nb == 0;
    if bad {
        return Err(plan_error(plan, "blocking out of range"));
    }
    let v = plan.gemm_view;
    if b.mg * (b.mb as u64) * (b.mt as u64) < v.m || b.ng * (b.nb as u64) * (b.nt as u64) < v.n {
        return Err(plan_error(plan, "launch grid does not cover the GEMM view"));
    }
    if plan.vec_width == 0 || !plan.vec_width.is_power_of_two() {
        return Err(plan_error(plan, "vector width must be a power of two"));
    }
    if plan.use_local_mem && plan.vec_width != 1 {
        return Err(plan_error(plan, "local-memory kernels are scalar"));
    }
    if plan.vec_width > 1 && (b.nt % plan.vec_width != 0 || v.k % plan.vec_width as u64 != 0 || v.n % plan.vec_width as u64 != 0) {
        return Err(plan_error(plan, "vector width must divide Nt, N and K"));
    }
    Ok(())
}

/// Emit `c = a * btᵀ` for `a` of dims `M:K` and `bt` of dims `N:K`.
pub fn gen_sgemm(plan: &VariantPlan) -> Result<KernelArtifact> {
    if plan.variant != Variant::Sgemm {
        return Err(plan_error(plan, "gen_sgemm needs an sgemm plan"));
    }
    check_blocking(plan)?;
    gemm::sgemm(plan)
}

/// Emit the compute kernel of a convolution plan.
pub fn gen_conv(plan: &VariantPlan, s: &ConvSpec) -> Result<KernelArtifact> {
    check_applicable(plan.variant, s)?;
    check_blocking(plan)?;
    let want_transform = match plan.variant {
        Variant::K1conv | Variant::K1convSimd => InputTransform::K1Layout,
        Variant::Tconv => InputTransform::TileLayout,
        _ => InputTransform::None,
    };
    if plan.input_transform != want_transform {
        return Err(plan_error(plan, format!("expects input transform {want_transform:?}")));
    }
    if plan.variant == Variant::Tconv {
        return tconv::tconv(plan, s);
    }
    let view = gemm_view_of(s);
    if plan.gemm_view != view {
        return Err(plan_error(
            plan,
            format!("plan GEMM view {:?} does not match the op ({view:?})", plan.gemm_view),
        ));
    }
    if plan.vec_width > 1 && s.in_c() % plan.vec_width as usize != 0 {
        return Err(plan_error(plan, "vector width must divide the input channels"));
    }
    gemm::conv(plan, s)
}

/// Emit the standalone kernel producing the layout `plan` expects.
pub fn gen_input_transform(plan: &VariantPlan, s: &ConvSpec) -> Result<KernelArtifact> {
    match plan.input_transform {
        InputTransform::None => Err(plan_error(plan, "plan has no input transform")),
        InputTransform::K1Layout => transform::k1_layout(plan, s),
        InputTransform::TileLayout => transform::tile_layout(plan, s),
    }
}

/// Transform kernel (if any) followed by the compute kernel.
pub fn gen_pipeline(plan: &VariantPlan, s: &ConvSpec) -> Result<Vec<KernelArtifact>> {
    let mut stages = Vec::new();
    if plan.input_transform != InputTransform::None {
        stages.push(gen_input_transform(plan, s)?);
    }
    stages.push(gen_conv(plan, s)?);
    Ok(stages)
}
