#![allow(dead_code)]

use std::path::PathBuf;

pub fn data(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(rel)
}

/// Compare `actual` with `tests/golden/<name>`. With `KERNGEN_BLESS` set the
/// file is (re)written instead.
pub fn check_golden(name: &str, actual: &str) -> Result<(), String> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("KERNGEN_BLESS").is_some() {
        std::fs::write(&path, actual).map_err(|e| format!("{}: {e}", path.display()))?;
        return Ok(());
    }
    let want = std::fs::read_to_string(&path)
        .map_err(|e| format!("{}: {e} (run with KERNGEN_BLESS=1 to create)", path.display()))?;
    if want == actual {
        return Ok(());
    }
    let (i, (w, a)) = want
        .lines()
        .zip(actual.lines())
        .enumerate()
        .find(|(_, (w, a))| w != a)
        .unwrap_or((want.lines().count().min(actual.lines().count()), ("<end>", "<end>")));
    Err(format!("{name} differs at line {}:\n  golden: {w}\n  actual: {a}", i + 1))
}
