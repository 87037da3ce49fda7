use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::netops::{format_op_line, parse_op_line, parse_op_list, ConvSpec, NamedOp};

pub const DEFAULT_BATCH_SIZES: [usize; 3] = [1, 5, 20];

/// One (op, batch size) instance of a suite.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuiteEntry {
    pub name: String,
    /// Carries the batch size of this instance.
    pub spec: ConvSpec,
}

impl SuiteEntry {
    pub fn batch(&self) -> usize {
        self.spec.batch()
    }

    pub fn op_line(&self) -> String {
        format_op_line(&self.name, &self.spec)
    }
}

/// A named set of convolutions swept over batch sizes.
///
/// Ops whose source line fixed `B=` keep that batch size; all others are
/// instantiated once per entry of `batch_sizes`, batch-major. With `dedup`
/// set, later instances equal (every spec field plus batch) to an earlier one
/// are dropped and the first name wins.
#[derive(Clone, Debug, PartialEq)]
pub struct Suite {
    pub name: String,
    pub ops: Vec<NamedOp>,
    pub batch_sizes: Vec<usize>,
    pub dedup: bool,
    entries: Vec<SuiteEntry>,
    instances: usize,
}

impl Suite {
    pub fn new(name: impl Into<String>, ops: Vec<NamedOp>, batch_sizes: Vec<usize>, dedup: bool) -> Result<Self> {
        let name = name.into();
        if batch_sizes.is_empty() || batch_sizes.contains(&0) {
            return Err(Error::Conv(format!("suite `{name}`: batch sizes must be positive and non-empty")));
        }
        let mut entries = Vec::new();
        let mut instances = 0;
        let mut seen = BTreeSet::new();
        let mut push = |name: &str, spec: ConvSpec| {
            instances += 1;
            if !dedup || seen.insert(spec.clone()) {
                entries.push(SuiteEntry {
                    name: name.to_string(),
                    spec,
                });
            }
        };
        for &b in &batch_sizes {
            for op in ops.iter().filter(|o| !o.batch_given) {
                push(&op.name, op.spec.clone().with_batch(b)?);
            }
        }
        for op in ops.iter().filter(|o| o.batch_given) {
            push(&op.name, op.spec.clone());
        }
        Ok(Suite {
            name,
            ops,
            batch_sizes,
            dedup,
            entries,
            instances,
        })
    }

    pub fn entries(&self) -> &[SuiteEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Instance count before deduplication.
    pub fn instances(&self) -> usize {
        self.instances
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "suite".to_string(), |s| s.to_string_lossy().into_owned())
}

/// Load a suite file.
///
/// A suite file holds op lines plus these directives, one per line:
/// `suite <name>`, `batch <n>...`, `dedup on|off` and `include <op file>`.
/// Included op files (line or JSON form) are resolved relative to the suite
/// file and their op names are prefixed with the file stem and a dot. A bare
/// op list (including a JSON array) loads as a suite named after the file
/// with default batch sizes and dedup on.
pub fn load_suite(path: impl AsRef<Path>) -> Result<Suite> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_suite(&text, path)
}

/// Parse suite text; `path` names the file in errors and anchors includes.
pub fn parse_suite(text: &str, path: &Path) -> Result<Suite> {
    let source = path.display().to_string();
    if text.trim_start().starts_with('[') {
        return Suite::new(stem(path), parse_op_list(text, &source)?, DEFAULT_BATCH_SIZES.to_vec(), true);
    }
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: source.clone(),
        line,
        msg,
    };
    let mut name = stem(path);
    let mut batch_sizes = DEFAULT_BATCH_SIZES.to_vec();
    let mut dedup = true;
    let mut ops = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        let (head, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        match head {
            "" => {}
            "suite" if !rest.is_empty() => name = rest.to_string(),
            "batch" => {
                batch_sizes = rest
                    .split_whitespace()
                    .map(|w| w.parse::<usize>().ok().filter(|&b| b > 0))
                    .collect::<Option<Vec<_>>>()
                    .filter(|v| !v.is_empty())
                    .ok_or_else(|| parse_err(i + 1, format!("bad batch list `{rest}`")))?;
            }
            "dedup" => {
                dedup = match rest {
                    "on" => true,
                    "off" => false,
                    _ => return Err(parse_err(i + 1, format!("dedup expects on|off, got `{rest}`"))),
                }
            }
            "include" if !rest.is_empty() => {
                let inc = path.parent().unwrap_or(Path::new(".")).join(rest);
                let body = std::fs::read_to_string(&inc).map_err(|e| Error::io(&inc, e))?;
                let prefix = stem(&inc);
                for mut op in parse_op_list(&body, &inc.display().to_string())? {
                    op.name = format!("{prefix}.{}", op.name);
                    ops.push(op);
                }
            }
            _ => ops.push(parse_op_line(line).map_err(|m| parse_err(i + 1, m))?),
        }
    }
    Suite::new(name, ops, batch_sizes, dedup)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Suite> {
        parse_suite(text, Path::new("t.suite"))
    }

    #[test]
    fn empty_file_is_an_empty_suite() {
        let s = parse("").unwrap();
        assert!(s.is_empty());
        assert_eq!(s.name, "t");
        let s = parse("# only a comment\n\n").unwrap();
        assert_eq!(s.len(), 0);
    }

    #[test]
    fn duplicates_collapse_under_dedup() {
        let text = "batch 1\na in=Y:X:C=8:8:3 OC=4 KSZ=3 pad=1\nb in=Y:X:C=8:8:3 OC=4 KSZ=3 pad=1\n";
        let s = parse(text).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.instances(), 2);
        assert_eq!(s.entries()[0].name, "a");
        let s = parse(&format!("dedup off\n{text}")).unwrap();
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn bias_and_relu_are_part_of_the_key() {
        let s = parse("batch 1\na in=Y:X:C=8:8:3 OC=4 KSZ=1\nb in=Y:X:C=8:8:3 OC=4 KSZ=1 relu=1\n").unwrap();
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn batch_expansion_is_batch_major() {
        let s = parse("a in=Y:X:C=4:4:2 OC=2 KSZ=1\nb in=Y:X:C=4:4:2 OC=3 KSZ=1\nc in=Y:X:C=4:4:2 OC=5 KSZ=1 B=2\n").unwrap();
        let got: Vec<(String, usize)> = s.entries().iter().map(|e| (e.name.clone(), e.batch())).collect();
        let want = [("a", 1), ("b", 1), ("a", 5), ("b", 5), ("a", 20), ("b", 20), ("c", 2)];
        assert_eq!(got, want.map(|(n, b)| (n.to_string(), b)));
    }

    #[test]
    fn errors_carry_line_numbers() {
        match parse("batch 1\n\nbroken KSZ=3\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("batch 0\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("dedup maybe\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn includes_are_prefixed_with_their_stem() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("net.ops"), "c1 in=Y:X:C=8:8:3 OC=4 KSZ=3\n").unwrap();
        let suite = dir.path().join("s.suite");
        std::fs::write(&suite, "suite demo\nbatch 2\ninclude net.ops\n").unwrap();
        let s = load_suite(&suite).unwrap();
        assert_eq!(s.name, "demo");
        assert_eq!(s.entries()[0].name, "net.c1");
        assert_eq!(s.entries()[0].batch(), 2);
    }

    #[test]
    fn json_op_list_loads_with_defaults() {
        let s = parse(r#"[{"name": "x", "in": "Y:X:C=4:4:1", "OC": 2, "KSZ": 1}]"#).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.batch_sizes, DEFAULT_BATCH_SIZES);
    }
}
