//! Write kernel sources, schedule IR and counters for one op to a directory.

use kerngen::analysis::MachineModel;
use kerngen::bench::emit_kernels;
use kerngen::codegen::gen_pipeline;
use kerngen::executor::EmuConfig;
use kerngen::netops::ConvSpec;
use kerngen::planner::plan_conv;
use kerngen::twin::conv_twin;

fn main() -> kerngen::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().join("kerngen-demo").display().to_string());
    let s = ConvSpec::image(24, 24, 16, 32, 1, 1, 0)?.with_bias(true);
    let m = MachineModel::mobile_simd();
    let plan = plan_conv(&s, &m, None)?;
    let kernels = gen_pipeline(&plan, &s)?;
    let r = conv_twin(&plan, &s, 5, &EmuConfig::default())?;
    let files = emit_kernels(dir.as_ref(), "pointwise", plan.variant, &kernels, Some(&r.stages))?;
    println!("{} stage(s) of {} verified (err {:.1e})", kernels.len(), plan.variant, r.max_rel_err);
    println!("{}", files.source.display());
    println!("{}", files.ir.display());
    if let Some(c) = files.counters {
        println!("{}", c.display());
    }
    Ok(())
}
