//! Compare global input traffic of the tiled and direct variants.

use kerngen::analysis::MachineModel;
use kerngen::executor::EmuConfig;
use kerngen::netops::ConvSpec;
use kerngen::planner::{plan_conv, OpTuning, Variant};
use kerngen::twin::conv_twin;

fn input_bytes(s: &ConvSpec, v: Variant, buffer: &str) -> kerngen::Result<u64> {
    let tune = OpTuning { variant: Some(v), ..Default::default() };
    let plan = plan_conv(s, &MachineModel::generic_gpu(), Some(&tune))?;
    let r = conv_twin(&plan, s, 3, &EmuConfig::default())?;
    Ok(r.compute().loads_by_buffer.get(buffer).copied().unwrap_or(0))
}

fn main() -> kerngen::Result<()> {
    for s in [
        ConvSpec::image(12, 12, 4, 16, 3, 1, 1)?,
        ConvSpec::image(64, 64, 4, 32, 3, 1, 1)?,
        ConvSpec::image(67, 67, 3, 32, 7, 2, 0)?,
    ] {
        let direct = input_bytes(&s, Variant::Conv, "in")?;
        let tiled = input_bytes(&s, Variant::Tconv, "in_tiled")?;
        println!(
            "{}  K={} S={}: conv kernel reads {direct} B of input, tconv kernel {tiled} B ({:.2}x less, K²/S² = {:.2})",
            s.in_dims(),
            s.kernel_size,
            s.stride,
            direct as f64 / tiled as f64,
            (s.kernel_size * s.kernel_size) as f64 / (s.stride * s.stride) as f64
        );
    }
    Ok(())
}
