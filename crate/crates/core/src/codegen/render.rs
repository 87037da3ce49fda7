//! OpenCL-flavoured text for IR instruction lists.

use std::fmt::Write;

use super::ir::{Cond, Instr, Operand, Reg};

const INDENT: &str = "    ";

fn imm(v: f32) -> String {
    format!("{v:?}f")
}

fn operand(o: &Operand) -> String {
    match o {
        Operand::Imm(v) => imm(*v),
        Operand::Reg(r) => r.to_string(),
    }
}

fn vec_load(dst: &Reg, src: &str, index: &str, width: u32) -> String {
    if width == 1 {
        format!("{dst} = {src}[{index}];")
    } else {
        format!(
            "vstore{width}(vload{width}(0, {src} + ({index})), 0, {} + {});",
            dst.name, dst.idx
        )
    }
}

fn vec_store(buf: &str, index: &str, src: &Reg, width: u32) -> String {
    if width == 1 {
        format!("{buf}[{index}] = {src};")
    } else {
        format!(
            "vstore{width}(vload{width}(0, {} + {}), 0, {buf} + ({index}));",
            src.name, src.idx
        )
    }
}

fn conds(cs: &[Cond]) -> String {
    cs.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" && ")
}

/// Render `body` at indentation level `depth`.
pub fn render(body: &[Instr], depth: usize) -> String {
    let mut out = String::new();
    render_into(&mut out, body, depth);
    out
}

fn render_into(out: &mut String, body: &[Instr], depth: usize) {
    let pad = INDENT.repeat(depth);
    for ins in body {
        let line = match ins {
            Instr::GlobalLoad { dst, buf, index, width } | Instr::LocalLoad { dst, buf, index, width } => {
                vec_load(dst, buf, &index.to_string(), *width)
            }
            Instr::GlobalStore { buf, index, src, width } | Instr::LocalStore { buf, index, src, width } => {
                vec_store(buf, &index.to_string(), src, *width)
            }
            Instr::Mov { dst, src } => format!("{dst} = {};", operand(src)),
            Instr::Fma { dst, a, b } => format!("{dst} += {a} * {b};"),
            Instr::Add { dst, a, b } => format!("{dst} = {a} + {b};"),
            Instr::Relu { dst } => format!("{dst} = max({dst}, 0.0f);"),
            Instr::Barrier => "BARRIER_SYNC;".to_string(),
            Instr::Loop {
                var,
                bound,
                unroll,
                body,
            } => {
                if *unroll > 1 {
                    let _ = writeln!(out, "{pad}#pragma unroll {unroll}");
                }
                let _ = writeln!(out, "{pad}for (int {var} = 0; {var} < {bound}; ++{var}) {{");
                render_into(out, body, depth + 1);
                let _ = writeln!(out, "{pad}}}");
                continue;
            }
            Instr::Guard { conds: cs, body } => {
                let _ = writeln!(out, "{pad}if ({}) {{", conds(cs));
                render_into(out, body, depth + 1);
                let _ = writeln!(out, "{pad}}}");
                continue;
            }
        };
        let _ = writeln!(out, "{pad}{line}");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::ir::Expr;

    #[test]
    fn renders_each_form() {
        let body = vec![
            Instr::mov_imm(Reg::new("c_t", 0), 0.0),
            Instr::Loop {
                var: "k".into(),
                bound: 4,
                unroll: 4,
                body: vec![Instr::Guard {
                    conds: vec![Cond::lt(Expr::var("k") + 1, 4)],
                    body: vec![
                        Instr::GlobalLoad {
                            dst: Reg::new("a_r", 0),
                            buf: "a".into(),
                            index: Expr::var("k") * 2,
                            width: 4,
                        },
                        Instr::Fma {
                            dst: Reg::new("c_t", 0),
                            a: Reg::new("a_r", 0),
                            b: Reg::new("a_r", 1),
                        },
                    ],
                }],
            },
            Instr::Relu { dst: Reg::new("c_t", 0) },
            Instr::GlobalStore {
                buf: "c".into(),
                index: Expr::var("t_m"),
                src: Reg::new("c_t", 0),
                width: 1,
            },
        ];
        let text = render(&body, 0);
        let expected = "c_t[0] = 0.0f;
#pragma unroll 4
for (int k = 0; k < 4; ++k) {
    if (k + 1 < 4) {
        vstore4(vload4(0, a + (k*2)), 0, a_r + 0);
        c_t[0] += a_r[0] * a_r[1];
    }
}
c_t[0] = max(c_t[0], 0.0f);
c[t_m] = c_t[0];
";
        assert_eq!(text, expected);
    }
}
