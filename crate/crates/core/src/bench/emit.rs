use std::path::{Path, PathBuf};

use crate::codegen::{KernelArtifact, ScheduleIr};
use crate::error::{Error, Result};
use crate::executor::TrafficCounters;
use crate::planner::Variant;

/// Files written for one op.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmittedFiles {
    pub source: PathBuf,
    pub ir: PathBuf,
    pub counters: Option<PathBuf>,
}

/// Write `<stem>.<variant>.cl` holding every stage's source (transform kernel
/// first) and `<stem>.<variant>.ir.json` holding the array of stage IRs.
/// With `counters`, per-stage traffic counters go to
/// `<stem>.<variant>.counters.json`.
pub fn emit_kernels(
    dir: &Path,
    stem: &str,
    variant: Variant,
    kernels: &[KernelArtifact],
    counters: Option<&[TrafficCounters]>,
) -> Result<EmittedFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let base = dir.join(format!("{stem}.{variant}"));
    let with_ext = |ext: &str| {
        let mut p = base.clone().into_os_string();
        p.push(ext);
        PathBuf::from(p)
    };
    let write = |path: &Path, text: &str| std::fs::write(path, text).map_err(|e| Error::io(path, e));

    let source = with_ext(".cl");
    let text: Vec<&str> = kernels.iter().map(|k| k.source_text.as_str()).collect();
    write(&source, &text.join("\n"))?;

    let ir = with_ext(".ir.json");
    let irs: Vec<&ScheduleIr> = kernels.iter().map(|k| &k.ir).collect();
    write(&ir, &(serde_json::to_string_pretty(&irs)? + "\n"))?;

    let counters = match counters {
        Some(c) => {
            let path = with_ext(".counters.json");
            write(&path, &(serde_json::to_string_pretty(c)? + "\n"))?;
            Some(path)
        }
        None => None,
    };
    Ok(EmittedFiles { source, ir, counters })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::MachineModel;
    use crate::codegen::gen_pipeline;
    use crate::netops::ConvSpec;
    use crate::planner::plan_conv;

    #[test]
    fn writes_source_and_ir_per_op() {
        let s = ConvSpec::image(8, 8, 4, 8, 1, 1, 0).unwrap();
        let plan = plan_conv(&s, &MachineModel::generic_gpu(), None).unwrap();
        let kernels = gen_pipeline(&plan, &s).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_kernels(dir.path(), "net.c1.b1", plan.variant, &kernels, Some(&[TrafficCounters::default()])).unwrap();
        assert!(files.source.ends_with("net.c1.b1.k1conv.cl"));
        let src = std::fs::read_to_string(&files.source).unwrap();
        assert!(src.contains(&kernels[0].source_text) && src.contains(&kernels[1].source_text));
        let irs: Vec<ScheduleIr> = serde_json::from_str(&std::fs::read_to_string(&files.ir).unwrap()).unwrap();
        assert_eq!(irs.len(), 2);
        assert_eq!(irs[1], kernels[1].ir);
        assert!(files.counters.unwrap().exists());
    }
}
