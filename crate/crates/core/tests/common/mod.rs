#![allow(dead_code)]

use std::path::PathBuf;

use rand::rngs::StdRng;
use rand::Rng;
use tessel::ir::{ElementType, ProgramModule};
use tessel::module_file::{read_module, ModuleFile};
use tessel::pipeline::{compile, CompileOptions};
use tessel::tensor::TensorData;
use tessel::text::parse_module;

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

/// Every `.tir` file of the shipped corpus, by file stem, sorted.
pub fn corpus() -> Vec<(String, ProgramModule)> {
    let mut out: Vec<(String, ProgramModule)> = std::fs::read_dir(corpus_dir())
        .expect("corpus directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "tir"))
        .map(|p| {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            let text = std::fs::read_to_string(&p).unwrap();
            let m = parse_module(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
            (name, m)
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

pub fn compile_to_file(m: &ProgramModule, options: &CompileOptions) -> ModuleFile {
    let c = compile(m, options).expect("compile");
    read_module(&c.module_bytes()).expect("read back")
}

pub fn random_values(rng: &mut StdRng, elem: ElementType, shape: &[usize]) -> TensorData {
    let n: usize = shape.iter().product();
    match elem {
        ElementType::F32 => {
            let v: Vec<f32> = (0..n).map(|_| rng.gen_range(-16i32..=16) as f32 / 8.0).collect();
            TensorData::from_f32(shape, &v)
        }
        ElementType::I32 => {
            let v: Vec<i32> = (0..n).map(|_| rng.gen_range(-1000..=1000)).collect();
            TensorData::from_i32(shape, &v)
        }
        ElementType::I8 => {
            let v: Vec<i8> = (0..n).map(|_| rng.gen()).collect();
            TensorData::from_i8(shape, &v)
        }
    }
}

/// Random inputs for a corpus program. Dynamic extents are chosen so that
/// the program's shape constraints hold.
pub fn corpus_inputs(name: &str, m: &ProgramModule, rng: &mut StdRng) -> Vec<TensorData> {
    let main = m.main().unwrap();
    let shapes: Vec<Vec<usize>> = if name == "dynamic_matmul" {
        let (a, k, b) = (rng.gen_range(1..=20), rng.gen_range(1..=20), rng.gen_range(1..=20));
        vec![vec![a, k], vec![k, b], vec![b]]
    } else {
        main.arg_types().iter().map(|t| t.static_shape().expect("static corpus signature")).collect()
    };
    main.arg_types().iter().zip(&shapes).map(|(t, s)| random_values(rng, t.elem, s)).collect()
}

fn ty(shape: &[usize], elem: ElementType) -> String {
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    format!("tensor<{}x{elem}>", dims.join("x"))
}

/// A random well-typed frontend program over `elem` with extents in 1..=64:
/// element-wise ops, broadcasts, matmuls, row/column sums and reshapes.
pub fn random_program(rng: &mut StdRng, elem: ElementType) -> (String, Vec<Vec<usize>>) {
    let (m, k, n) = (rng.gen_range(1..=64), rng.gen_range(1..=64), rng.gen_range(1..=64));
    let args = vec![vec![m, k], vec![k, n], vec![m, n], vec![n], vec![m]];
    let mut vals: Vec<(String, Vec<usize>)> =
        args.iter().enumerate().map(|(i, s)| (format!("%arg{i}"), s.clone())).collect();
    let mut body = String::new();
    let steps = rng.gen_range(2..=6);
    let mut made = 0;
    while made < steps {
        let id = format!("%v{made}");
        let pick = |rng: &mut StdRng, vals: &[(String, Vec<usize>)]| vals[rng.gen_range(0..vals.len())].clone();
        let line = match rng.gen_range(0..5) {
            0 => {
                let (x, s) = pick(rng, &vals);
                let same: Vec<_> = vals.iter().filter(|(_, t)| *t == s).cloned().collect();
                let (y, _) = same[rng.gen_range(0..same.len())].clone();
                let op = ["add", "sub", "mul", "max"][rng.gen_range(0..4)];
                let t = ty(&s, elem);
                vals.push((id.clone(), s));
                format!("{id} = fe.{op}({x}, {y}) : ({t}, {t}) -> {t}")
            }
            1 => {
                let pairs: Vec<_> = vals
                    .iter()
                    .filter(|(_, a)| a.len() == 2)
                    .flat_map(|x| vals.iter().filter(|(_, b)| b.len() == 2 && b[0] == x.1[1]).map(move |y| (x.clone(), y.clone())))
                    .collect();
                if pairs.is_empty() {
                    continue;
                }
                let ((x, a), (y, b)) = pairs[rng.gen_range(0..pairs.len())].clone();
                let s = vec![a[0], b[1]];
                let line = format!("{id} = fe.matmul({x}, {y}) : ({}, {}) -> {}", ty(&a, elem), ty(&b, elem), ty(&s, elem));
                vals.push((id.clone(), s));
                line
            }
            2 => {
                let cands: Vec<_> = vals
                    .iter()
                    .filter(|(_, v)| v.len() == 1)
                    .flat_map(|x| {
                        vals.iter().filter(|(_, t)| t.len() == 2).filter_map(move |t| {
                            let axes: Vec<usize> = (0..2).filter(|&d| t.1[d] == x.1[0]).collect();
                            (!axes.is_empty()).then(|| (x.clone(), t.clone(), axes))
                        })
                    })
                    .collect();
                if cands.is_empty() {
                    continue;
                }
                let ((x, xs), (t, ts), axes) = cands[rng.gen_range(0..cands.len())].clone();
                let d = axes[rng.gen_range(0..axes.len())];
                let line = format!(
                    "{id} = fe.broadcast({x}, {t}) {{dims = [{d}]}} : ({}, {}) -> {}",
                    ty(&xs, elem),
                    ty(&ts, elem),
                    ty(&ts, elem)
                );
                vals.push((id.clone(), ts));
                line
            }
            3 => {
                let twos: Vec<_> = vals.iter().filter(|(_, s)| s.len() == 2).cloned().collect();
                let (x, s) = twos[rng.gen_range(0..twos.len())].clone();
                let axis = rng.gen_range(0..2);
                let r = vec![s[1 - axis]];
                let line = format!("{id} = fe.reduce_sum({x}) {{axis = {axis}}} : ({}) -> {}", ty(&s, elem), ty(&r, elem));
                vals.push((id.clone(), r));
                line
            }
            _ => {
                let (x, s) = pick(rng, &vals);
                let r = match s.len() {
                    2 if rng.gen_bool(0.5) => vec![s[1], s[0]],
                    2 => vec![s[0] * s[1]],
                    _ => vec![1, s[0]],
                };
                let line = format!("{id} = tensor.reshape({x}) : ({}) -> {}", ty(&s, elem), ty(&r, elem));
                vals.push((id.clone(), r));
                line
            }
        };
        body.push_str("    ");
        body.push_str(&line);
        body.push('\n');
        made += 1;
    }
    let produced = &vals[args.len()..];
    let mut results = vec![produced.last().unwrap().clone()];
    if produced.len() > 1 && rng.gen_bool(0.5) {
        results.insert(0, produced[rng.gen_range(0..produced.len() - 1)].clone());
    }
    let arg_list: Vec<String> = args.iter().enumerate().map(|(i, s)| format!("%arg{i}: {}", ty(s, elem))).collect();
    let res_types: Vec<String> = results.iter().map(|(_, s)| ty(s, elem)).collect();
    let res_names: Vec<String> = results.iter().map(|(v, _)| v.clone()).collect();
    let text = format!(
        "module {{\n  func @main({}) -> ({}) {{\n{body}    return {} : {}\n  }}\n}}\n",
        arg_list.join(", "),
        res_types.join(", "),
        res_names.join(", "),
        res_types.join(", ")
    );
    (text, args)
}
