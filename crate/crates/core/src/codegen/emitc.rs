//! Host program as C source against the `tiny_vm` API (`docs/tiny_vm.h`).

use std::fmt::Write;

use crate::ir::ElementType;
use crate::transforms::{HostOp, HostProgram};

use super::CodegenError;

fn c_elem(e: ElementType) -> &'static str {
    match e {
        ElementType::F32 => "TINY_VM_F32",
        ElementType::I32 => "TINY_VM_I32",
        ElementType::I8 => "TINY_VM_I8",
    }
}

fn reg_array(rs: &[u32]) -> String {
    if rs.is_empty() {
        return "NULL".into();
    }
    let items: Vec<String> = rs.iter().map(u32::to_string).collect();
    format!("(const uint32_t[]){{{}}}", items.join(", "))
}

/// Replaces anything that is not a C identifier character with `_`.
pub fn c_identifier(name: &str) -> String {
    let mut s: String = name.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
    if s.is_empty() || s.starts_with(|c: char| c.is_ascii_digit()) {
        s.insert(0, '_');
    }
    s
}

/// One API call per host op. A `RETURN` without results becomes a plain
/// `return 0;`.
pub fn emit_host_c(host: &HostProgram, module_name: &str) -> String {
    let name = c_identifier(module_name);
    let mut c = String::new();
    c.push_str("#include <stdint.h>\n#include <stddef.h>\n#include \"tiny_vm.h\"\n\n");
    let _ = writeln!(c, "/* entry argument count: {} (buffer registers from 0) */", host.num_args);
    let _ = writeln!(c, "int {name}_run(tiny_vm_ctx* ctx) {{");
    for op in &host.ops {
        let call = match op {
            HostOp::ConstI64 { dst, value } => format!("tiny_vm_const_i64(ctx, {dst}, INT64_C({value}))"),
            HostOp::Dim { dst, buf, axis } => format!("tiny_vm_dim(ctx, {dst}, {buf}, {axis})"),
            HostOp::Mul { dst, a, b } => format!("tiny_vm_mul(ctx, {dst}, {a}, {b})"),
            HostOp::CeilDiv { dst, a, b } => format!("tiny_vm_ceildiv(ctx, {dst}, {a}, {b})"),
            HostOp::AllocTransient { dst, elem, dims } => format!(
                "tiny_vm_alloc_transient(ctx, {dst}, {}, {}, {})",
                c_elem(*elem),
                dims.len(),
                reg_array(dims)
            ),
            HostOp::BindConstant { dst, ordinal } => format!("tiny_vm_bind_const(ctx, {dst}, {ordinal})"),
            HostOp::Dispatch { region, grid, bindings } => format!(
                "tiny_vm_dispatch(ctx, {region}, {}, {}, {}, {}, {})",
                grid[0],
                grid[1],
                grid[2],
                bindings.len(),
                reg_array(bindings)
            ),
            HostOp::Return { results } if results.is_empty() => {
                c.push_str("  return 0;\n");
                continue;
            }
            HostOp::Return { results } => {
                let _ = writeln!(c, "  return tiny_vm_return(ctx, {}, {});", results.len(), reg_array(results));
                continue;
            }
        };
        let _ = writeln!(c, "  TINY_VM_CHECK({call});");
    }
    c.push_str("}\n");
    c
}

fn bad(line: &str) -> CodegenError {
    CodegenError::MalformedHostSource(line.trim().to_string())
}

fn parse_int<T: std::str::FromStr>(s: &str, line: &str) -> Result<T, CodegenError> {
    s.trim().parse().map_err(|_| bad(line))
}

fn parse_regs(n: usize, arr: &str, line: &str) -> Result<Vec<u32>, CodegenError> {
    let arr = arr.trim();
    let regs: Vec<u32> = if arr == "NULL" {
        vec![]
    } else {
        let inner = arr
            .strip_prefix("(const uint32_t[]){")
            .and_then(|s| s.strip_suffix('}'))
            .ok_or_else(|| bad(line))?;
        inner.split(',').map(|x| parse_int(x, line)).collect::<Result<_, _>>()?
    };
    if regs.len() != n {
        return Err(bad(line));
    }
    Ok(regs)
}

/// Splits `a, b, (const uint32_t[]){1, 2}` at top-level commas.
fn split_args(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let (mut depth, mut start) = (0i32, 0);
    for (i, ch) in s.char_indices() {
        match ch {
            '(' | '{' => depth += 1,
            ')' | '}' => depth -= 1,
            ',' if depth == 0 => {
                out.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(s[start..].trim());
    out
}

/// Recovers the host program from source produced by [`emit_host_c`]. This
/// is how a module carrying C instead of bytecode is run in-process.
pub fn parse_host_c(src: &str) -> Result<HostProgram, CodegenError> {
    let num_args = src
        .lines()
        .find_map(|l| l.strip_prefix("/* entry argument count: "))
        .and_then(|l| l.strip_suffix(" (buffer registers from 0) */"))
        .ok_or_else(|| bad("missing entry-argument comment"))?;
    let num_args = parse_int(num_args, num_args)?;
    let mut ops = Vec::new();
    let mut in_body = false;
    for line in src.lines() {
        let t = line.trim();
        if !in_body {
            in_body = t.ends_with("_run(tiny_vm_ctx* ctx) {");
            continue;
        }
        if t == "}" {
            break;
        }
        if t == "return 0;" {
            ops.push(HostOp::Return { results: vec![] });
            continue;
        }
        let call = t
            .strip_prefix("TINY_VM_CHECK(")
            .and_then(|s| s.strip_suffix(");"))
            .or_else(|| t.strip_prefix("return ").and_then(|s| s.strip_suffix(';')))
            .ok_or_else(|| bad(line))?;
        let (func, rest) = call.split_once('(').ok_or_else(|| bad(line))?;
        let args = split_args(rest.strip_suffix(')').ok_or_else(|| bad(line))?);
        if args.first() != Some(&"ctx") {
            return Err(bad(line));
        }
        let a = &args[1..];
        let int = |i: usize| -> Result<u32, CodegenError> { parse_int(a.get(i).ok_or_else(|| bad(line))?, line) };
        let need = |n: usize| if a.len() == n { Ok(()) } else { Err(bad(line)) };
        let op = match func {
            "tiny_vm_const_i64" => {
                need(2)?;
                let v = a[1].strip_prefix("INT64_C(").and_then(|s| s.strip_suffix(')')).ok_or_else(|| bad(line))?;
                HostOp::ConstI64 { dst: int(0)?, value: parse_int(v, line)? }
            }
            "tiny_vm_dim" => {
                need(3)?;
                HostOp::Dim { dst: int(0)?, buf: int(1)?, axis: int(2)? }
            }
            "tiny_vm_mul" => {
                need(3)?;
                HostOp::Mul { dst: int(0)?, a: int(1)?, b: int(2)? }
            }
            "tiny_vm_ceildiv" => {
                need(3)?;
                HostOp::CeilDiv { dst: int(0)?, a: int(1)?, b: int(2)? }
            }
            "tiny_vm_alloc_transient" => {
                need(4)?;
                let elem = ElementType::ALL.into_iter().find(|e| c_elem(*e) == a[1]).ok_or_else(|| bad(line))?;
                HostOp::AllocTransient { dst: int(0)?, elem, dims: parse_regs(int(2)? as usize, a[3], line)? }
            }
            "tiny_vm_bind_const" => {
                need(2)?;
                HostOp::BindConstant { dst: int(0)?, ordinal: int(1)? }
            }
            "tiny_vm_dispatch" => {
                need(6)?;
                HostOp::Dispatch {
                    region: int(0)?,
                    grid: [int(1)?, int(2)?, int(3)?],
                    bindings: parse_regs(int(4)? as usize, a[5], line)?,
                }
            }
            "tiny_vm_return" => {
                need(2)?;
                HostOp::Return { results: parse_regs(int(0)? as usize, a[1], line)? }
            }
            _ => return Err(bad(line)),
        };
        ops.push(op);
    }
    let host = HostProgram { num_args, ops };
    host.check_registers().map_err(|e| CodegenError::MalformedHostSource(e.to_string()))?;
    Ok(host)
}

/// Counts `tiny_vm_*(` call sites.
pub fn api_call_count(src: &str) -> usize {
    src.match_indices("tiny_vm_")
        .filter(|(i, _)| {
            let rest = &src[i + 8..];
            let name_len = rest.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).unwrap_or(rest.len());
            rest[name_len..].starts_with('(')
        })
        .count()
}
