//! Sweep a small suite at reduced size and print the CSV report.

use kerngen::analysis::MachineModel;
use kerngen::bench::{parse_suite, render_report, sweep, ReportFormat, SweepOptions};
use kerngen::planner::Tuning;

const SUITE: &str = "\
suite demo
batch 1 4
stem in=Y:X:C=56:56:32 OC=64 KSZ=3 pad=same
reduce in=Y:X:C=56:56:64 OC=32 KSZ=1
down in=Y:X:C=57:57:32 OC=32 KSZ=5 stride=2
";

fn main() -> kerngen::Result<()> {
    let suite = parse_suite(SUITE, "demo.suite".as_ref())?;
    let opts = SweepOptions { scale: Some(4.0), jobs: 2, ..Default::default() };
    for machine in [MachineModel::generic_gpu(), MachineModel::mobile_simd()] {
        let out = sweep(&suite, &machine, &Tuning::default(), &opts)?;
        let rows: Vec<_> = out.into_iter().map(|o| o.row).collect();
        println!("# {}", machine.name);
        print!("{}", render_report(&rows, ReportFormat::Csv)?);
    }
    Ok(())
}
