//! Generate a blocked sgemm kernel, print it, and check it in the emulator.

use kerngen::analysis::MachineModel;
use kerngen::codegen::gen_sgemm;
use kerngen::executor::EmuConfig;
use kerngen::planner::{plan_sgemm, BlockingOverrides, GemmView};
use kerngen::twin::sgemm_twin;

fn main() -> kerngen::Result<()> {
    let plan = plan_sgemm(GemmView::new(300, 96, 147), &MachineModel::generic_gpu(), &BlockingOverrides::default())?;
    let b = &plan.blocking;
    println!(
        "// Mt={} Nt={} Kb={} Mb={} Nb={} grid {}x{}, ~{} registers, {} B local",
        b.mt, b.nt, b.kb, b.mb, b.nb, b.mg, b.ng, b.regs_est, b.local_bytes
    );
    print!("{}", gen_sgemm(&plan)?.source_text);
    let r = sgemm_twin(&plan, 7, &EmuConfig::default())?;
    println!("// emulated: max rel err {:.2e}, {} FMAs, {} global bytes loaded", r.max_rel_err, r.compute().fma_count, r.compute().global_loads_bytes);
    Ok(())
}
