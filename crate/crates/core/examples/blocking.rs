//! How derived blocking reacts to problem size and machine limits.

use kerngen::analysis::MachineModel;
use kerngen::planner::{derive_blocking, gemm_regs, BlockingOverrides, GemmView};

fn main() -> kerngen::Result<()> {
    let gpu = MachineModel::generic_gpu();
    let mut small = gpu.clone();
    small.name = "small-regs".into();
    small.reg_budget_per_thread = 32;
    for m in [&gpu, &small] {
        println!("{} (regs {}, local {} B)", m.name, m.reg_budget_per_thread, m.local_mem_bytes);
        for (mm, n, k) in [(10_000, 96, 147), (3_025, 384, 2_304), (64, 16, 9), (1, 1000, 4096)] {
            let b = derive_blocking(GemmView::new(mm, n, k), m, &BlockingOverrides::default())?;
            println!(
                "  {mm:>6}x{n:<5}x{k:<5} Mt={} Nt={} Kb={:<3} Mb={:<3} Nb={:<3} wgs={:<5} regs={} local={}",
                b.mt, b.nt, b.kb, b.mb, b.nb, b.mg * b.ng, gemm_regs(b.mt, b.nt, 1), b.local_bytes
            );
        }
    }
    let pinned = BlockingOverrides { mt: Some(2), nt: Some(8), ..Default::default() };
    let b = derive_blocking(GemmView::new(512, 512, 512), &gpu, &pinned)?;
    println!("pinned Mt=2 Nt=8 on 512^3: Kb={} Mb={} Nb={}", b.kb, b.mb, b.nb);
    Ok(())
}
