use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kerngen::analysis::{conv_ai, knee_ai, roofline_point, sgemm_ai, Lowering, MachineModel};
use kerngen::bench::{emit_kernels, load_suite, render_report, require_verified, sweep, ReportFormat, SweepOptions};
use kerngen::codegen::gen_pipeline;
use kerngen::executor::EmuConfig;
use kerngen::netops::{infer_shapes, parse_op_line, NamedOp};
use kerngen::planner::{gemm_view_of, plan_conv, OpTuning, Tuning, Variant};
use kerngen::twin::conv_twin;
use kerngen::{Error, Result};

#[derive(Parser)]
#[command(name = "kerngen", version, about = "Generate, plan and verify blocked convolution kernels")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Plan, generate and verify every op of a suite and print a report.
    Sweep(SweepArgs),
    /// Generate the kernels of one op.
    Gen(GenArgs),
    /// Arithmetic intensity and roofline figures of one op.
    Ai(AiArgs),
}

#[derive(Args)]
struct SweepArgs {
    /// Suite file (directives plus op lines) or a bare op list.
    #[arg(long)]
    suite: PathBuf,
    /// Machine JSON file or built-in name (generic-gpu, mobile-simd).
    #[arg(long, default_value = "generic-gpu")]
    machine: String,
    /// Per-op tuning overrides (JSON).
    #[arg(long)]
    tune: Option<PathBuf>,
    /// Verify at spatial and channel sizes divided by this factor.
    #[arg(long)]
    scale: Option<f64>,
    /// Write each op's kernels (`.cl`, `.ir.json`) into this directory.
    #[arg(long)]
    emit_dir: Option<PathBuf>,
    #[arg(long, default_value = "csv", value_parser = ["csv", "json", "plotdata"])]
    format: String,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fail (nonzero exit, no report) if any op does not verify.
    #[arg(long)]
    strict: bool,
    /// Disable emulator bounds checking.
    #[arg(long)]
    fast: bool,
    /// Also write per-op traffic counters JSON into the emit directory.
    #[arg(long, requires = "emit_dir")]
    counters: bool,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct GenArgs {
    /// Op line, e.g. "conv1 in=Y:X:C=205:205:3 OC=96 KSZ=7 stride=2 pad=0".
    #[arg(long)]
    op: String,
    #[arg(long, default_value = "generic-gpu")]
    machine: String,
    /// Force a variant instead of the heuristic choice.
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    tune: Option<PathBuf>,
    /// Write `.cl` and `.ir.json` files here instead of printing the source.
    #[arg(long)]
    emit_dir: Option<PathBuf>,
    /// Emulate the kernels on random data and compare with the oracle.
    #[arg(long)]
    verify: bool,
    /// With --verify, print traffic counters as JSON.
    #[arg(long, requires = "verify")]
    counters: bool,
}

#[derive(Args)]
struct AiArgs {
    #[arg(long)]
    op: String,
    #[arg(long, default_value = "generic-gpu")]
    machine: String,
}

fn machine(arg: &str) -> Result<MachineModel> {
    match MachineModel::builtin(arg) {
        Some(m) => Ok(m),
        None => MachineModel::load(arg),
    }
}

fn tuning(path: Option<&Path>) -> Result<Tuning> {
    path.map_or_else(|| Ok(Tuning::default()), Tuning::load)
}

fn op(line: &str) -> Result<NamedOp> {
    parse_op_line(line).map_err(|msg| Error::Parse {
        path: "--op".into(),
        line: 1,
        msg,
    })
}

fn run_sweep(a: SweepArgs) -> Result<bool> {
    let suite = load_suite(&a.suite)?;
    let m = machine(&a.machine)?;
    let t = tuning(a.tune.as_deref())?;
    let format: ReportFormat = a.format.parse()?;
    let opts = SweepOptions {
        scale: a.scale,
        emu: EmuConfig {
            check_bounds: !a.fast,
            ..EmuConfig::default()
        },
        jobs: a.jobs,
    };
    let outcomes = sweep(&suite, &m, &t, &opts)?;
    let rows: Vec<_> = outcomes.iter().map(|o| o.row.clone()).collect();
    if a.strict {
        require_verified(&rows)?;
    }
    if let Some(dir) = &a.emit_dir {
        for o in &outcomes {
            let stem = format!("{}.b{}", o.entry.name, o.entry.batch());
            let counters = a.counters.then_some(o.stages.as_slice());
            emit_kernels(dir, &stem, o.plan.variant, &o.kernels, counters)?;
        }
    }
    let text = render_report(&rows, format)?;
    match &a.out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?,
        None => print!("{text}"),
    }
    let failed = rows.iter().filter(|r| !r.verified).count();
    eprintln!("{}: {} ops, {} verified, {} failed", suite.name, rows.len(), rows.len() - failed, failed);
    Ok(failed == 0)
}

fn run_gen(a: GenArgs) -> Result<bool> {
    let op = op(&a.op)?;
    let m = machine(&a.machine)?;
    let t = tuning(a.tune.as_deref())?;
    let mut tune = t.get(&op.name).cloned().unwrap_or_default();
    if a.variant.is_some() {
        tune = OpTuning { variant: a.variant, ..tune };
    }
    let plan = plan_conv(&op.spec, &m, Some(&tune))?;
    let kernels = gen_pipeline(&plan, &op.spec)?;
    eprintln!("{}", serde_json::to_string(&plan)?);
    match &a.emit_dir {
        Some(dir) => {
            let f = emit_kernels(dir, &op.name, plan.variant, &kernels, None)?;
            eprintln!("wrote {} and {}", f.source.display(), f.ir.display());
        }
        None => {
            for k in &kernels {
                print!("{}", k.source_text);
            }
        }
    }
    if !a.verify {
        return Ok(true);
    }
    let r = conv_twin(&plan, &op.spec, 1, &EmuConfig::default())?;
    eprintln!(
        "verification: {} (max relative error {:.3e})",
        if r.passed() { "pass" } else { "FAIL" },
        r.max_rel_err
    );
    if a.counters {
        println!("{}", serde_json::to_string_pretty(&r.stages)?);
    }
    Ok(r.passed())
}

fn run_ai(a: AiArgs) -> Result<bool> {
    let op = op(&a.op)?;
    let m = machine(&a.machine)?;
    let sh = infer_shapes(&op.spec)?;
    let v = gemm_view_of(&op.spec);
    println!("op          {}", op);
    println!("out         {}", sh.out_dims);
    println!("filts       {}", sh.filts_dims);
    println!("inmat       {}", sh.inmat_dims);
    println!("flops       {}", sh.flops);
    println!("gemm M,N,K  {},{},{} (sgemm AI {:.4})", v.m, v.n, v.k, sgemm_ai(v.m, v.n, v.k));
    println!("knee AI     {:.4} on {}", knee_ai(&m), m.name);
    for (label, lowering) in [("direct", Lowering::Direct), ("im2col", Lowering::Im2colGemm)] {
        let r = conv_ai(&sh, lowering, &m);
        println!(
            "{label:<11} bytes {} AI {:.4} {}-bound, roofline {:.1} GF/s",
            r.bytes_min,
            r.ai,
            r.predicted_bound,
            roofline_point(r.flops, r.bytes_min, &m)
        );
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Sweep(a) => run_sweep(a),
        Cmd::Gen(a) => run_gen(a),
        Cmd::Ai(a) => run_ai(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
