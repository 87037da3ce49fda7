use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{conv_ai, Bound, Lowering, MachineModel};
use crate::codegen::{gen_pipeline, KernelArtifact};
use crate::error::{Error, Result};
use crate::executor::{EmuConfig, TrafficCounters};
use crate::netops::infer_shapes;
use crate::planner::{gemm_view_of, plan_conv, OpTuning, Tuning, Variant, VariantPlan};
use crate::twin::conv_twin;

use super::suite::{Suite, SuiteEntry};

#[derive(Clone, Debug)]
pub struct SweepOptions {
    /// Verify at dimensions divided by this factor instead of full size.
    pub scale: Option<f64>,
    pub emu: EmuConfig,
    /// Worker threads over suite entries.
    pub jobs: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            scale: None,
            emu: EmuConfig::default(),
            jobs: 1,
        }
    }
}

/// Totals over every stage of the verified pipeline.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CounterSummary {
    pub global_load_bytes: u64,
    pub global_store_bytes: u64,
    pub local_load_bytes: u64,
    pub fma_count: u64,
}

impl CounterSummary {
    fn of(stages: &[TrafficCounters]) -> Self {
        stages.iter().fold(Self::default(), |acc, c| CounterSummary {
            global_load_bytes: acc.global_load_bytes + c.global_loads_bytes,
            global_store_bytes: acc.global_store_bytes + c.global_stores_bytes,
            local_load_bytes: acc.local_load_bytes + c.local_loads_bytes,
            fma_count: acc.fma_count + c.fma_count,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub op: String,
    #[serde(rename = "B")]
    pub batch: usize,
    pub variant: Variant,
    #[serde(rename = "M")]
    pub m: u64,
    #[serde(rename = "N")]
    pub n: u64,
    #[serde(rename = "K")]
    pub k: u64,
    pub flops: u64,
    pub ai: f64,
    pub predicted_bound: Bound,
    pub verified: bool,
    pub max_rel_err: f64,
    pub counters: CounterSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Everything produced for one suite entry.
#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub entry: SuiteEntry,
    pub row: ReportRow,
    /// Full-size plan and pipeline, whatever size was verified.
    pub plan: VariantPlan,
    /// Plan of the emulated run; differs from `plan` under a scale factor.
    pub verified_plan: VariantPlan,
    pub kernels: Vec<KernelArtifact>,
    /// Per-stage counters of the verified run.
    pub stages: Vec<TrafficCounters>,
}

/// Stable 64-bit FNV-1a, used to derive per-op data seeds.
fn fnv1a(text: &str) -> u64 {
    text.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Plan, generate, emulate and verify one entry.
///
/// The variant is selected (or pinned by `tuning`) at full size. Under a
/// scale factor the reduced op is planned with that variant pinned and
/// freshly derived blocking.
pub fn sweep_entry(entry: &SuiteEntry, machine: &MachineModel, tuning: Option<&OpTuning>, opts: &SweepOptions) -> Result<SweepOutcome> {
    let s = &entry.spec;
    let context = |e: Error| Error::Op {
        op: entry.name.clone(),
        source: Box::new(e),
    };
    let plan = plan_conv(s, machine, tuning).map_err(context)?;
    let kernels = gen_pipeline(&plan, s).map_err(context)?;
    let shapes = infer_shapes(s)?;
    let ai = conv_ai(&shapes, Lowering::Direct, machine);
    let view = gemm_view_of(s);

    let (vspec, vplan) = match opts.scale {
        Some(f) => {
            let small = s.scaled(f)?;
            let pin = OpTuning {
                variant: Some(plan.variant),
                ..Default::default()
            };
            let p = plan_conv(&small, machine, Some(&pin)).map_err(context)?;
            (small, p)
        }
        None => (s.clone(), plan.clone()),
    };
    let (verified, max_rel_err, stages, failure) = match conv_twin(&vplan, &vspec, fnv1a(&entry.op_line()), &opts.emu) {
        Ok(r) if r.passed() => (true, r.max_rel_err, r.stages, None),
        Ok(r) => {
            let msg = format!("max relative error {:.3e}", r.max_rel_err);
            (false, r.max_rel_err, r.stages, Some(msg))
        }
        Err(e) => (false, f64::INFINITY, Vec::new(), Some(e.to_string())),
    };
    let row = ReportRow {
        op: entry.name.clone(),
        batch: entry.batch(),
        variant: plan.variant,
        m: view.m,
        n: view.n,
        k: view.k,
        flops: ai.flops,
        ai: ai.ai,
        predicted_bound: ai.predicted_bound,
        verified,
        max_rel_err,
        counters: CounterSummary::of(&stages),
        failure,
    };
    Ok(SweepOutcome {
        entry: entry.clone(),
        row,
        plan,
        verified_plan: vplan,
        kernels,
        stages,
    })
}

/// Sweep every suite entry, in suite order regardless of `opts.jobs`.
pub fn sweep(suite: &Suite, machine: &MachineModel, tuning: &Tuning, opts: &SweepOptions) -> Result<Vec<SweepOutcome>> {
    machine.validate()?;
    if opts.jobs == 0 {
        return Err(Error::Conv("jobs must be positive".into()));
    }
    let one = |e: &SuiteEntry| sweep_entry(e, machine, tuning.get(&e.name), opts);
    let results: Vec<Result<SweepOutcome>> = if opts.jobs == 1 {
        suite.entries().iter().map(one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::Emulation(e.to_string()))?;
        pool.install(|| suite.entries().par_iter().map(one).collect())
    };
    results.into_iter().collect()
}

/// Fail with the first unverified row, if any.
pub fn require_verified(rows: &[ReportRow]) -> Result<()> {
    match rows.iter().find(|r| !r.verified) {
        Some(r) => Err(Error::Verification(
            format!("{} B={}", r.op, r.batch),
            r.failure.clone().unwrap_or_else(|| "unverified".into()),
        )),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netops::ConvSpec;

    fn entry(name: &str, s: ConvSpec) -> SuiteEntry {
        SuiteEntry { name: name.into(), spec: s }
    }

    #[test]
    fn trivial_op_gives_one_passing_row() {
        let suite = Suite::new(
            "one",
            vec![crate::netops::parse_op_line("tiny in=Y:X:C=4:4:2 OC=2 KSZ=1").unwrap()],
            vec![1],
            true,
        )
        .unwrap();
        let out = sweep(&suite, &MachineModel::generic_gpu(), &Tuning::default(), &SweepOptions::default()).unwrap();
        assert_eq!(out.len(), 1);
        let r = &out[0].row;
        assert!(r.verified, "{:?}", r.failure);
        assert_eq!(r.variant, Variant::K1conv);
        assert_eq!((r.m, r.n, r.k), (16, 2, 2));
        assert_eq!(r.counters.fma_count, out[0].verified_plan.executed_fmas());
        assert!(r.counters.fma_count >= 16 * 2 * 2);
    }

    #[test]
    fn scaled_runs_keep_the_full_size_variant() {
        let s = ConvSpec::image(56, 56, 16, 32, 3, 1, 1).unwrap();
        let opts = SweepOptions {
            scale: Some(4.0),
            ..Default::default()
        };
        let o = sweep_entry(&entry("c", s.clone()), &MachineModel::generic_gpu(), None, &opts).unwrap();
        assert_eq!(o.row.variant, Variant::Tconv);
        assert!(o.row.verified);
        assert_eq!(o.row.counters.fma_count, o.verified_plan.executed_fmas());
        assert!(o.row.counters.fma_count >= infer_shapes(&s.scaled(4.0).unwrap()).unwrap().flops / 2);
        assert_eq!(o.row.flops, infer_shapes(&s).unwrap().flops);
    }

    #[test]
    fn strict_check_names_the_failing_row() {
        let s = ConvSpec::image(4, 4, 2, 2, 1, 1, 0).unwrap();
        let mut row = sweep_entry(&entry("x", s), &MachineModel::generic_gpu(), None, &SweepOptions::default())
            .unwrap()
            .row;
        assert!(require_verified(std::slice::from_ref(&row)).is_ok());
        row.verified = false;
        let err = require_verified(&[row]).unwrap_err().to_string();
        assert!(err.contains("`x B=1`"), "{err}");
    }

    #[test]
    fn fnv_is_stable() {
        assert_eq!(fnv1a(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a("a"), 0xaf63_dc4c_8601_ec8c);
    }
}
