//! Shape inference and arithmetic intensity of a few convolutions.

use kerngen::analysis::{conv_ai, knee_ai, sgemm_ai, Lowering, MachineModel};
use kerngen::netops::{infer_shapes, parse_op_line};
use kerngen::planner::gemm_view_of;

fn main() -> kerngen::Result<()> {
    let gpu = MachineModel::generic_gpu();
    println!("{} knee AI = {:.2} flop/byte", gpu.name, knee_ai(&gpu));
    for line in [
        "conv1 in=Y:X:C=205:205:3 OC=96 KSZ=7 stride=2 pad=0",
        "cccp1 in=Y:X:C=55:55:96 OC=96 KSZ=1",
        "inc3a.3x3 in=Y:X:C=28:28:96 OC=128 KSZ=3 pad=same B=5",
    ] {
        let op = parse_op_line(line).map_err(kerngen::Error::Conv)?;
        let sh = infer_shapes(&op.spec)?;
        let v = gemm_view_of(&op.spec);
        let direct = conv_ai(&sh, Lowering::Direct, &gpu);
        let lowered = conv_ai(&sh, Lowering::Im2colGemm, &gpu);
        println!("{}", op.name);
        println!("  out {}  inmat {}", sh.out_dims, sh.inmat_dims);
        println!("  gemm {}x{}x{}  sgemm AI {:.2}", v.m, v.n, v.k, sgemm_ai(v.m, v.n, v.k));
        println!("  direct AI {:.2} ({})  im2col AI {:.2} ({})", direct.ai, direct.predicted_bound, lowered.ai, lowered.predicted_bound);
    }
    Ok(())
}
