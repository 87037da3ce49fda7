//! Every applicable variant of one convolution, checked against the oracle.

use kerngen::analysis::MachineModel;
use kerngen::executor::EmuConfig;
use kerngen::netops::ConvSpec;
use kerngen::planner::{check_applicable, plan_conv, select_variant, OpTuning, Variant};
use kerngen::twin::conv_twin;

fn main() -> kerngen::Result<()> {
    for (s, label) in [
        (ConvSpec::image(20, 20, 8, 16, 3, 1, 1)?.with_bias(true).with_relu(true), "3x3 same"),
        (ConvSpec::image(16, 16, 12, 24, 1, 1, 0)?.with_batch(2)?, "1x1 B=2"),
    ] {
        println!("{label}:");
        for v in Variant::CONV_VARIANTS {
            if check_applicable(v, &s).is_err() {
                continue;
            }
            let m = if v.is_simd() { MachineModel::mobile_simd() } else { MachineModel::generic_gpu() };
            let tune = OpTuning { variant: Some(v), ..Default::default() };
            let plan = match plan_conv(&s, &m, Some(&tune)) {
                Ok(p) => p,
                Err(e) => {
                    println!("  {v:<13} not plannable: {e}");
                    continue;
                }
            };
            let r = conv_twin(&plan, &s, 11, &EmuConfig::default())?;
            let pick = if select_variant(&s, &m) == v { " (heuristic choice)" } else { "" };
            println!(
                "  {v:<13} on {:<12} stages {}  max rel err {:.1e}  global loads {} B{pick}",
                m.name,
                r.stages.len(),
                r.max_rel_err,
                r.stages.iter().map(|c| c.global_loads_bytes).sum::<u64>()
            );
        }
    }
    Ok(())
}
