//! The naive reference operators on named-dimension arrays.

use kerngen::nda::{Dims, Nda};
use kerngen::netops::{conv_oracle, conv_via_gemm, pool_ref, relu_ref, softmax_ref, ConvSpec, PoolKind};

fn main() -> kerngen::Result<()> {
    let s = ConvSpec::image(6, 6, 2, 3, 3, 1, 1)?.with_bias(true);
    let input = Nda::random_uniform(s.in_dims().clone(), 1, -1.0, 1.0);
    let filts = Nda::random_uniform(s.filts_dims().clone(), 2, -1.0, 1.0);
    let bias = Nda::random_uniform(Dims::new([("OC", 3)])?, 3, -1.0, 1.0);
    let direct = conv_oracle(&s, &input, &filts, Some(&bias))?;
    let lowered = conv_via_gemm(&s, &input, &filts, Some(&bias))?;
    let err = kerngen::nda::max_rel_err(direct.data(), lowered.data(), kerngen::twin::ABS_FLOOR);
    println!("conv {} -> {}  direct vs im2col+gemm max rel err {err:.1e}", input.dims(), direct.dims());

    let act = relu_ref(&direct);
    let pooled = pool_ref(PoolKind::Max, 2, 2, &act)?;
    println!("relu + 2x2 max pool -> {}", pooled.dims());
    let avg = pool_ref(PoolKind::Avg, 3, 3, &act)?;
    let flat = avg.reshape(Dims::new([("C", avg.len())])?)?;
    let probs = softmax_ref(&flat, "C")?;
    println!("3x3 avg pool -> {}  softmax sums to {:.6}", avg.dims(), probs.data().iter().sum::<f32>());
    Ok(())
}
