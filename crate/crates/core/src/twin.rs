//! Emulated kernels checked against the naive oracles.

use std::collections::BTreeMap;

use crate::codegen::{gen_pipeline, gen_sgemm};
use crate::error::{Error, Result};
use crate::executor::{run_pipeline, EmuConfig, TrafficCounters};
use crate::nda::{max_rel_err, Dims, Nda};
use crate::netops::{conv_oracle, gemm_bt_ref, ConvSpec};
use crate::planner::VariantPlan;

/// Relative tolerance of every emulator-vs-oracle comparison.
pub const REL_TOL: f64 = 1e-5;
/// Magnitude below which errors are measured absolutely.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct TwinReport {
    pub max_rel_err: f64,
    /// Counters of every stage, compute kernel last.
    pub stages: Vec<TrafficCounters>,
    pub output: Nda,
}

impl TwinReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= REL_TOL
    }

    pub fn compute(&self) -> &TrafficCounters {
        self.stages.last().expect("at least one stage")
    }
}

/// Random operands for `s`: `in`, `filts` and (when requested) `bias`.
pub fn conv_inputs(s: &ConvSpec, seed: u64) -> BTreeMap<String, Nda> {
    let mut m = BTreeMap::new();
    m.insert("in".to_string(), Nda::random_dyadic(s.in_dims().clone(), seed));
    m.insert("filts".to_string(), Nda::random_dyadic(s.filts_dims(), seed.wrapping_add(1)));
    if s.has_bias {
        m.insert("bias".to_string(), Nda::random_dyadic(s.bias_dims(), seed.wrapping_add(2)));
    }
    m
}

/// Generate, emulate and compare one convolution plan.
pub fn conv_twin(plan: &VariantPlan, s: &ConvSpec, seed: u64, cfg: &EmuConfig) -> Result<TwinReport> {
    let stages = gen_pipeline(plan, s)?;
    let inputs = conv_inputs(s, seed);
    let expected = conv_oracle(s, &inputs["in"], &inputs["filts"], inputs.get("bias"))?;
    let (mut outs, counters) = run_pipeline(&stages, &inputs, cfg)?;
    let out = outs
        .remove("out")
        .ok_or_else(|| Error::Emulation("compute kernel produced no `out`".into()))?;
    Ok(TwinReport {
        max_rel_err: max_rel_err(out.data(), expected.data(), ABS_FLOOR),
        stages: counters,
        output: out,
    })
}

/// Generate, emulate and compare one sgemm plan.
pub fn sgemm_twin(plan: &VariantPlan, seed: u64, cfg: &EmuConfig) -> Result<TwinReport> {
    let art = gen_sgemm(plan)?;
    let v = plan.gemm_view;
    let a = Nda::random_dyadic(Dims::new([("M", v.m as usize), ("K", v.k as usize)])?, seed);
    let bt = Nda::random_dyadic(Dims::new([("N", v.n as usize), ("K", v.k as usize)])?, seed.wrapping_add(1));
    let expected = gemm_bt_ref(&a, &bt)?;
    let inputs: BTreeMap<String, Nda> = [("a".to_string(), a), ("bt".to_string(), bt)].into();
    let (mut outs, counters) = run_pipeline(std::slice::from_ref(&art), &inputs, cfg)?;
    let out = outs.remove("c").expect("sgemm writes c");
    Ok(TwinReport {
        max_rel_err: max_rel_err(out.data(), expected.data(), ABS_FLOOR),
        stages: counters,
        output: out,
    })
}
