//! The ten acceptance criteria, one pass/fail line each.

mod common;

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use tessel::codegen::{api_call_count, decode_host_bytecode, Index, KOp, LoopNestKernel};
use tessel::ir::{ElementType, IteratorKind};
use tessel::linalg::{evaluate_module, lower_to_linalg};
use tessel::module_file::{read_module, strip_debug, write_module, ModuleError, ModuleFile};
use tessel::pipeline::{compile, CompileOptions, HostFormat};
use tessel::refinterp::interpret;
use tessel::runtime::{
    dispatch_sync, Arena, BufferFlags, BufferOrigin, Device, HostMode, Instrumentation, RunOptions, Runtime,
    RuntimeError, Scheduler, SimDevice, TensorRef, WorkerState, DEFAULT_ARENA_CAP,
};
use tessel::tensor::TensorData;
use tessel::text::parse_module;
use tessel::transforms::{cse, dce, fuse_elementwise, generic_count, rewrite_conv1x1_to_matmul, HostOp, HostProgram};

use common::{compile_to_file, corpus, corpus_inputs, random_program, random_values};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run_file(file: &ModuleFile, inputs: &[TensorData], options: &RunOptions) -> Result<tessel::runtime::RunOutput, String> {
    let rt = Runtime::default();
    let m = rt.load(file).map_err(|e| e.to_string())?;
    rt.run(&m, inputs, options).map_err(|e| e.to_string())
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5EED_0001);
    let elems = [ElementType::F32, ElementType::I32, ElementType::I8];
    let count = 200;
    for i in 0..count {
        let elem = elems[i % 3];
        let (text, arg_shapes) = random_program(&mut rng, elem);
        let m = parse_module(&text).map_err(|e| format!("program {i}: {e}\n{text}"))?;
        let inputs: Vec<TensorData> = arg_shapes.iter().map(|s| random_values(&mut rng, elem, s)).collect();
        let expected = interpret(&m, &inputs).map_err(|e| format!("program {i}: {e}"))?;
        let file = compile(&m, &CompileOptions::default()).map_err(|e| format!("program {i}: {e}\n{text}"))?;
        let file = read_module(&file.module_bytes()).map_err(|e| e.to_string())?;
        let got = run_file(&file, &inputs, &RunOptions::default()).map_err(|e| format!("program {i}: {e}\n{text}"))?;
        ensure(got.outputs == expected, || format!("program {i} differs from the reference\n{text}"))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}, budget 60 s"))?;
    Ok(format!("{count} programs bit-identical in {:.1} s", elapsed.as_secs_f64()))
}

/// (fixture, generic ops left after fusion). Counts follow from the rule
/// that every all-parallel producer folds into each all-parallel consumer.
fn fusion_fixtures() -> Vec<(&'static str, usize, String)> {
    let t = "tensor<6x10xf32>";
    let ew = |ops: &[(&str, &str, &str)], ret: &str| -> String {
        let body: String = ops
            .iter()
            .enumerate()
            .map(|(i, (op, a, b))| format!("    %{i} = fe.{op}({a}, {b}) : ({t}, {t}) -> {t}\n"))
            .collect();
        format!("module {{\n  func @main(%x: {t}, %y: {t}) -> ({t}) {{\n{body}    return {ret} : {t}\n  }}\n}}")
    };
    vec![
        ("pair", 1, ew(&[("add", "%x", "%y"), ("mul", "%0", "%y")], "%1")),
        ("chain4", 1, ew(&[("add", "%x", "%y"), ("mul", "%0", "%y"), ("max", "%1", "%x"), ("sub", "%2", "%y")], "%3")),
        ("diamond", 1, ew(&[("add", "%x", "%x"), ("mul", "%0", "%y"), ("sub", "%0", "%1")], "%2")),
        ("self_use", 1, ew(&[("mul", "%x", "%y"), ("add", "%0", "%0")], "%1")),
        (
            "broadcast",
            1,
            "module { func @main(%x: tensor<6x10xf32>, %v: tensor<10xf32>) -> (tensor<6x10xf32>) {
                %0 = fe.broadcast(%v, %x) {dims = [1]} : (tensor<10xf32>, tensor<6x10xf32>) -> tensor<6x10xf32>
                %1 = fe.add(%x, %0) : (tensor<6x10xf32>, tensor<6x10xf32>) -> tensor<6x10xf32>
                %2 = fe.max(%1, %x) : (tensor<6x10xf32>, tensor<6x10xf32>) -> tensor<6x10xf32>
                return %2 : tensor<6x10xf32>
            } }"
            .into(),
        ),
        (
            "permutation",
            1,
            "module { func @main(%x: tensor<4x7xi32>, %y: tensor<7x4xi32>) -> (tensor<7x4xi32>) {
                %0 = linalg.generic {iterator_types = [\"parallel\", \"parallel\"], indexing_maps = [affine_map<(i, j) -> (i, j)>, affine_map<(i, j) -> (i, j)>]} ins(%x : tensor<4x7xi32>) outs(%x : tensor<4x7xi32>) {
                ^bb0(%a: i32, %o: i32):
                  %s = arith.muli %a, %a : i32
                  linalg.yield %s : i32
                } -> tensor<4x7xi32>
                %1 = linalg.generic {iterator_types = [\"parallel\", \"parallel\"], indexing_maps = [affine_map<(i, j) -> (j, i)>, affine_map<(i, j) -> (i, j)>, affine_map<(i, j) -> (i, j)>]} ins(%0, %y : tensor<4x7xi32>, tensor<7x4xi32>) outs(%y : tensor<7x4xi32>) {
                ^bb0(%a: i32, %b: i32, %o: i32):
                  %s = arith.subi %a, %b : i32
                  linalg.yield %s : i32
                } -> tensor<7x4xi32>
                return %1 : tensor<7x4xi32>
            } }"
            .into(),
        ),
        (
            "relu_bias_i8",
            1,
            "module { func @main(%x: tensor<5x9xi8>, %b: tensor<5xi8>, %z: tensor<9xi8>) -> (tensor<5x9xi8>) {
                %0 = fe.broadcast(%b, %x) {dims = [0]} : (tensor<5xi8>, tensor<5x9xi8>) -> tensor<5x9xi8>
                %1 = fe.add(%x, %0) : (tensor<5x9xi8>, tensor<5x9xi8>) -> tensor<5x9xi8>
                %2 = fe.broadcast(%z, %x) {dims = [1]} : (tensor<9xi8>, tensor<5x9xi8>) -> tensor<5x9xi8>
                %3 = fe.max(%1, %2) : (tensor<5x9xi8>, tensor<5x9xi8>) -> tensor<5x9xi8>
                return %3 : tensor<5x9xi8>
            } }"
            .into(),
        ),
        (
            "matmul_bias",
            2,
            "module { func @main(%a: tensor<6x3xf32>, %b: tensor<3x10xf32>, %c: tensor<10xf32>) -> (tensor<6x10xf32>) {
                %0 = fe.matmul(%a, %b) : (tensor<6x3xf32>, tensor<3x10xf32>) -> tensor<6x10xf32>
                %1 = fe.broadcast(%c, %0) {dims = [1]} : (tensor<10xf32>, tensor<6x10xf32>) -> tensor<6x10xf32>
                %2 = fe.add(%0, %1) : (tensor<6x10xf32>, tensor<6x10xf32>) -> tensor<6x10xf32>
                return %2 : tensor<6x10xf32>
            } }"
            .into(),
        ),
        (
            "into_reduction",
            2,
            "module { func @main(%x: tensor<6x10xi32>, %y: tensor<6x10xi32>) -> (tensor<6xi32>) {
                %0 = fe.mul(%x, %y) : (tensor<6x10xi32>, tensor<6x10xi32>) -> tensor<6x10xi32>
                %1 = fe.reduce_sum(%0) {axis = 1} : (tensor<6x10xi32>) -> tensor<6xi32>
                return %1 : tensor<6xi32>
            } }"
            .into(),
        ),
        (
            "two_results",
            2,
            "module { func @main(%x: tensor<6x10xf32>, %y: tensor<6x10xf32>) -> (tensor<6x10xf32>, tensor<6x10xf32>) {
                %0 = fe.add(%x, %y) : (tensor<6x10xf32>, tensor<6x10xf32>) -> tensor<6x10xf32>
                %1 = fe.mul(%0, %y) : (tensor<6x10xf32>, tensor<6x10xf32>) -> tensor<6x10xf32>
                %2 = fe.sub(%x, %y) : (tensor<6x10xf32>, tensor<6x10xf32>) -> tensor<6x10xf32>
                %3 = fe.max(%2, %x) : (tensor<6x10xf32>, tensor<6x10xf32>) -> tensor<6x10xf32>
                return %1, %3 : tensor<6x10xf32>, tensor<6x10xf32>
            } }"
            .into(),
        ),
    ]
}

fn fusion_coverage() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5EED_0002);
    let fixtures = fusion_fixtures();
    for (name, expected, text) in &fixtures {
        let m = parse_module(text).map_err(|e| format!("{name}: {e}"))?;
        let lowered = dce(&cse(&lower_to_linalg(&m).map_err(|e| format!("{name}: {e}"))?));
        let fused = fuse_elementwise(&lowered);
        let count = generic_count(&fused);
        ensure(count == *expected, || format!("{name}: {count} generics after fusion, expected {expected}"))?;
        let inputs: Vec<TensorData> = m
            .main()
            .unwrap()
            .arg_types()
            .iter()
            .map(|t| random_values(&mut rng, t.elem, &t.static_shape().unwrap()))
            .collect();
        let before = evaluate_module(&lowered, &inputs).map_err(|e| format!("{name}: {e}"))?;
        let after = evaluate_module(&fused, &inputs).map_err(|e| format!("{name}: {e}"))?;
        ensure(before == after, || format!("{name}: fusion changed the result"))?;
        let file = compile_to_file(&m, &CompileOptions::default());
        let run = run_file(&file, &inputs, &RunOptions::default())?;
        ensure(run.outputs == before, || format!("{name}: compiled result differs"))?;
    }
    Ok(format!("{} fixtures fused to the expected generic counts", fixtures.len()))
}

fn conv_rewrite() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5EED_0003);
    for i in 0..50 {
        let [n, h, w, c, f] = [0; 5].map(|_| rng.gen_range(1..=8usize));
        let xt = format!("tensor<{n}x{h}x{w}x{c}xf32>");
        let wt = format!("tensor<1x1x{c}x{f}xf32>");
        let ot = format!("tensor<{n}x{h}x{w}x{f}xf32>");
        let text = format!(
            "module {{ func @main(%x: {xt}, %w: {wt}) -> ({ot}) {{
                %0 = fe.conv2d(%x, %w) : ({xt}, {wt}) -> {ot}
                return %0 : {ot}
            }} }}"
        );
        let m = parse_module(&text).map_err(|e| e.to_string())?;
        let rewritten = rewrite_conv1x1_to_matmul(&m);
        let convs = rewritten.main().unwrap().body.iter().filter(|op| op.opcode.name() == "fe.conv2d").count();
        ensure(convs == 0, || format!("instance {i}: conv not rewritten"))?;
        let x = random_values(&mut rng, ElementType::F32, &[n, h, w, c]);
        let wt = random_values(&mut rng, ElementType::F32, &[1, 1, c, f]);
        // Direct convolution, written out here as the oracle.
        let xs = x.to_f32();
        let ws = wt.to_f32();
        let mut direct = vec![0f32; n * h * w * f];
        for p in 0..n * h * w {
            for o in 0..f {
                let mut acc = 0f32;
                for ch in 0..c {
                    acc += xs[p * c + ch] * ws[ch * f + o];
                }
                direct[p * f + o] = acc;
            }
        }
        let direct = TensorData::from_f32(&[n, h, w, f], &direct);
        let reference = interpret(&m, &[x.clone(), wt.clone()]).map_err(|e| e.to_string())?;
        ensure(reference[0] == direct, || format!("instance {i}: reference interpreter disagrees with direct conv"))?;
        let file = compile_to_file(&m, &CompileOptions::default());
        let got = run_file(&file, &[x, wt], &RunOptions::default())?;
        ensure(got.outputs[0] == direct, || format!("instance {i} ({n},{h},{w},{c},{f}) differs"))?;
    }
    Ok("50 random 1x1 convolutions bit-identical to the direct oracle".into())
}

fn elementwise_kernel(shape: &str) -> LoopNestKernel {
    let t = format!("tensor<{shape}xf32>");
    let text = format!(
        "module {{ func @main(%a: {t}, %b: {t}) -> ({t}) {{
            %0 = fe.add(%a, %b) : ({t}, {t}) -> {t}
            return %0 : {t}
        }} }}"
    );
    let c = compile(&parse_module(&text).unwrap(), &CompileOptions { vectorize: false, ..Default::default() }).unwrap();
    c.kernels[0].clone()
}

fn scheduler_order() -> Outcome {
    let kernel = elementwise_kernel("64x96");
    let arena = Arena::new(DEFAULT_ARENA_CAP);
    let bind = |flags| TensorRef {
        buffer: arena.allocate(flags, BufferOrigin::HostAlloc, 64 * 96 * 4).unwrap(),
        elem: ElementType::F32,
        shape: vec![64, 96],
    };
    let worker = WorkerState::new(&kernel, [2, 3, 4], vec![bind(BufferFlags::INPUT), bind(BufferFlags::INPUT), bind(BufferFlags::OUTPUT)]);
    let device = SimDevice { instrumentation: Instrumentation { record_work_ids: true, count_writes: false } };
    let record = dispatch_sync(&device, &kernel, &worker).map_err(|e| e.to_string())?;
    let mut expected = Vec::new();
    for z in 0..4 {
        for y in 0..3 {
            for x in 0..2 {
                expected.push([x, y, z]);
            }
        }
    }
    ensure(record.work_ids == expected, || format!("work ids {:?}", record.work_ids))?;
    Ok("grid (2,3,4) ran 24 work items, x fastest, z slowest".into())
}

fn scheduler_equivalence() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5EED_0005);
    let mut checked_once = 0;
    for (name, m) in corpus() {
        let file = compile_to_file(&m, &CompileOptions::default());
        let inputs = corpus_inputs(&name, &m, &mut rng);
        let rt = Runtime::default();
        let loaded = rt.load(&file).map_err(|e| e.to_string())?;
        let instr = Instrumentation { record_work_ids: false, count_writes: true };
        let sync = rt
            .run(&loaded, &inputs, &RunOptions { instrumentation: instr, ..Default::default() })
            .map_err(|e| format!("{name}: {e}"))?;
        for workers in 1..=4 {
            let opts = RunOptions { scheduler: Scheduler::Async { workers }, ..Default::default() };
            let got = rt.run(&loaded, &inputs, &opts).map_err(|e| format!("{name}: {e}"))?;
            ensure(got.outputs == sync.outputs, || format!("{name}: async with {workers} workers differs"))?;
        }
        let regions = loaded.program.ops.iter().filter_map(|op| match op {
            HostOp::Dispatch { region, .. } => Some(*region),
            _ => None,
        });
        for (region, record) in regions.zip(&sync.stats.records) {
            let kernel = loaded.kernels.get(region).unwrap();
            if kernel.dims.iter().any(|d| d.kind == IteratorKind::Reduction) {
                continue;
            }
            for counts in record.write_counts.iter().flatten() {
                ensure(counts.iter().all(|&c| c == 1), || format!("{name}: {} writes an element twice or never", kernel.name))?;
            }
            checked_once += 1;
        }
    }
    Ok(format!("async == sync for 1-4 workers on the corpus; {checked_once} all-parallel dispatches write once"))
}

/// Peak of live transient bytes, from last-use intervals over the program.
fn liveness_peak(p: &HostProgram, consts: &HashMap<u32, i64>) -> usize {
    let returned: Vec<u32> = match p.ops.last() {
        Some(HostOp::Return { results }) => results.clone(),
        _ => vec![],
    };
    let mut intervals = Vec::new();
    for (i, op) in p.ops.iter().enumerate() {
        if let HostOp::AllocTransient { dst, elem, dims } = op {
            if returned.contains(dst) {
                continue;
            }
            let bytes = dims.iter().map(|d| consts[d] as usize).product::<usize>() * elem.byte_width();
            let end = p.ops.iter().enumerate().skip(i + 1).filter(|(_, o)| o.reads().1.contains(dst)).map(|(j, _)| j).max().unwrap_or(i);
            intervals.push((i, end, bytes));
        }
    }
    (0..p.ops.len())
        .map(|t| intervals.iter().filter(|(s, e, _)| *s <= t && t <= *e).map(|(_, _, b)| b).sum::<usize>())
        .max()
        .unwrap_or(0)
}

fn scalar_constants(p: &HostProgram) -> HashMap<u32, i64> {
    p.ops
        .iter()
        .filter_map(|op| match op {
            HostOp::ConstI64 { dst, value } => Some((*dst, *value)),
            _ => None,
        })
        .collect()
}

const SEQUENTIAL: &str = "module { func @main(%x: tensor<128x4xf32>, %w1: tensor<4x128xf32>, %w2: tensor<4x128xf32>, %w3: tensor<4x128xf32>) -> (tensor<128xf32>, tensor<128xf32>, tensor<128xf32>) {
    %0 = fe.matmul(%x, %w1) : (tensor<128x4xf32>, tensor<4x128xf32>) -> tensor<128x128xf32>
    %1 = fe.reduce_sum(%0) {axis = 1} : (tensor<128x128xf32>) -> tensor<128xf32>
    %2 = fe.matmul(%x, %w2) : (tensor<128x4xf32>, tensor<4x128xf32>) -> tensor<128x128xf32>
    %3 = fe.reduce_sum(%2) {axis = 1} : (tensor<128x128xf32>) -> tensor<128xf32>
    %4 = fe.matmul(%x, %w3) : (tensor<128x4xf32>, tensor<4x128xf32>) -> tensor<128x128xf32>
    %5 = fe.reduce_sum(%4) {axis = 1} : (tensor<128x128xf32>) -> tensor<128xf32>
    return %1, %3, %5 : tensor<128xf32>, tensor<128xf32>, tensor<128xf32>
} }";

const PARALLEL: &str = "module { func @main(%x: tensor<128x4xf32>, %w1: tensor<4x128xf32>, %w2: tensor<4x128xf32>) -> (tensor<128x128xf32>) {
    %0 = fe.matmul(%x, %w1) : (tensor<128x4xf32>, tensor<4x128xf32>) -> tensor<128x128xf32>
    %1 = fe.matmul(%x, %w2) : (tensor<128x4xf32>, tensor<4x128xf32>) -> tensor<128x128xf32>
    %2 = fe.matmul(%0, %1) : (tensor<128x128xf32>, tensor<128x128xf32>) -> tensor<128x128xf32>
    return %2 : tensor<128x128xf32>
} }";

fn stream_memory() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5EED_0006);
    let mut report = Vec::new();
    for (label, text, expected) in [("sequential", SEQUENTIAL, 64 << 10), ("2-wide", PARALLEL, 128 << 10)] {
        let m = parse_module(text).unwrap();
        let file = compile_to_file(&m, &CompileOptions::default());
        let rt = Runtime::default();
        let loaded = rt.load(&file).map_err(|e| e.to_string())?;
        let inputs: Vec<TensorData> = m
            .main()
            .unwrap()
            .arg_types()
            .iter()
            .map(|t| random_values(&mut rng, t.elem, &t.static_shape().unwrap()))
            .collect();
        let out = rt.run(&loaded, &inputs, &RunOptions::default()).map_err(|e| e.to_string())?;
        let oracle = liveness_peak(&loaded.program, &scalar_constants(&loaded.program));
        ensure(out.stats.peak_pool_bytes == expected, || format!("{label}: high-water {} bytes, expected {expected}", out.stats.peak_pool_bytes))?;
        ensure(oracle == expected, || format!("{label}: liveness oracle says {oracle}"))?;
        ensure(out.outputs == interpret(&m, &inputs).unwrap(), || format!("{label}: wrong result"))?;
        ensure(out.stats.at_rest_bytes == loaded.constant_bytes(), || format!("{label}: {} bytes at rest", out.stats.at_rest_bytes))?;
        report.push(format!("{label} {} KiB", expected >> 10));
    }
    for (name, m) in corpus() {
        let file = compile_to_file(&m, &CompileOptions::default());
        let rt = Runtime::default();
        let loaded = rt.load(&file).map_err(|e| e.to_string())?;
        let inputs = corpus_inputs(&name, &m, &mut rng);
        let out = rt.run(&loaded, &inputs, &RunOptions::default()).map_err(|e| e.to_string())?;
        ensure(out.stats.at_rest_bytes == loaded.constant_bytes(), || {
            format!("{name}: {} bytes at rest, constants hold {}", out.stats.at_rest_bytes, loaded.constant_bytes())
        })?;
        ensure(rt.pool_live_count() == 0, || format!("{name}: pool blocks still live"))?;
    }
    Ok(format!("high-water {}; at rest == constant pool on every module", report.join(", ")))
}

fn golden_dir() -> std::path::PathBuf {
    std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn emitc_property() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5EED_0007);
    let update = std::env::var_os("TESSEL_UPDATE_GOLDEN").is_some();
    for (name, m) in corpus() {
        let options = CompileOptions { host: HostFormat::EmitC, module_name: name.clone(), ..Default::default() };
        let first = compile(&m, &options).map_err(|e| e.to_string())?.c_source.unwrap();
        let second = compile(&m, &options).map_err(|e| e.to_string())?.c_source.unwrap();
        ensure(first == second, || format!("{name}: two compiles emit different C"))?;
        let golden = golden_dir().join(format!("{name}.c"));
        if update {
            std::fs::write(&golden, &first).map_err(|e| e.to_string())?;
        }
        let stored = std::fs::read_to_string(&golden).map_err(|e| format!("{}: {e}", golden.display()))?;
        ensure(stored == first, || format!("{name}: emitted C differs from {}", golden.display()))?;

        let bc = compile(&m, &CompileOptions::default()).map_err(|e| e.to_string())?;
        let program = decode_host_bytecode(match &bc.contents.host {
            tessel::module_file::HostCode::Bytecode(b) => b,
            _ => unreachable!(),
        })
        .map_err(|e| e.to_string())?;
        let silent = program.ops.iter().filter(|op| matches!(op, HostOp::Return { results } if results.is_empty())).count();
        let calls = api_call_count(&first);
        ensure(calls == program.ops.len() - silent, || format!("{name}: {calls} API calls for {} host ops", program.ops.len()))?;
        for token in ["while", "for", "switch", "goto"] {
            ensure(!first.contains(token), || format!("{name}: emitted C contains `{token}`"))?;
        }

        let inputs = corpus_inputs(&name, &m, &mut rng);
        let interpreted = run_file(&read_module(&bc.module_bytes()).unwrap(), &inputs, &RunOptions::default())?;
        let direct_opts = RunOptions { host: Some(HostMode::Direct), ..Default::default() };
        for file in [
            read_module(&bc.module_bytes()).unwrap(),
            compile_to_file(&m, &CompileOptions { host: HostFormat::EmitC, ..Default::default() }),
        ] {
            let out = run_file(&file, &inputs, &direct_opts)?;
            ensure(out.stats.interpreter_decodes == 0, || format!("{name}: interpreter decoded {} ops", out.stats.interpreter_decodes))?;
            ensure(out.outputs == interpreted.outputs, || format!("{name}: direct and interpreted results differ"))?;
        }
        ensure(interpreted.stats.interpreter_decodes == program.ops.len() as u64, || format!("{name}: decode counter miscounts"))?;
    }
    Ok("direct mode decoded 0 ops on the corpus; C stable and one call per host op".into())
}

fn size_trend() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5EED_0008);
    let mut rows = Vec::new();
    for (name, m) in corpus() {
        let c = compile(&m, &CompileOptions::default()).map_err(|e| e.to_string())?;
        let debug = c.module_bytes();
        let stripped = write_module(&c.contents, false);
        ensure(stripped.len() < debug.len(), || format!("{name}: stripped {} >= debug {}", stripped.len(), debug.len()))?;
        let via_strip = strip_debug(&read_module(&debug).unwrap()).to_bytes();
        ensure(via_strip == stripped, || format!("{name}: strip_debug differs from a stripped compile"))?;
        let inputs = corpus_inputs(&name, &m, &mut rng);
        let a = run_file(&read_module(&debug).unwrap(), &inputs, &RunOptions::default())?;
        let b = run_file(&read_module(&stripped).unwrap(), &inputs, &RunOptions::default())?;
        ensure(a.outputs == b.outputs, || format!("{name}: stripped module behaves differently"))?;
        rows.push(format!("{name} {}->{}", debug.len(), stripped.len()));
    }
    Ok(rows.join(", "))
}

fn error_class(e: &ModuleError) -> &'static str {
    match e {
        ModuleError::BadMagic => "BadMagic",
        ModuleError::UnsupportedVersion(_) => "UnsupportedVersion",
        ModuleError::CorruptSectionTable(_) => "CorruptSectionTable",
        ModuleError::TruncatedPayload(_) => "TruncatedPayload",
        ModuleError::MalformedSection { .. } => "MalformedSection",
    }
}

/// Reads a file and every typed section; any error is fine, a panic is not.
fn probe(bytes: &[u8]) -> Option<ModuleError> {
    let f = match read_module(bytes) {
        Ok(f) => f,
        Err(e) => return Some(e),
    };
    let errs = [
        f.host().err(),
        f.kernels().err(),
        f.constants().err(),
        f.signature().err(),
        f.debug_names().err(),
    ];
    errs.into_iter().flatten().next()
}

fn format_robustness() -> Outcome {
    let mut seeds = Vec::new();
    for (name, m) in corpus() {
        for host in [HostFormat::Bytecode, HostFormat::EmitC] {
            let bytes = compile(&m, &CompileOptions { host, ..Default::default() }).unwrap().module_bytes();
            let back = read_module(&bytes).map_err(|e| format!("{name}: {e}"))?;
            ensure(back.to_bytes() == bytes, || format!("{name}: write/read round trip is not the identity"))?;
            seeds.push(bytes);
        }
    }
    // One fixture per error class.
    let base = seeds[0].clone();
    let mut fixtures: Vec<(&str, Vec<u8>)> = Vec::new();
    let mut bad_magic = base.clone();
    bad_magic[0] ^= 0xFF;
    fixtures.push(("BadMagic", bad_magic));
    let mut version = base.clone();
    version[4] = 9;
    fixtures.push(("UnsupportedVersion", version));
    fixtures.push(("CorruptSectionTable", base[..14].to_vec()));
    fixtures.push(("TruncatedPayload", base[..base.len() - 3].to_vec()));
    let mut sig = read_module(&base).unwrap();
    let s = sig.sections.iter_mut().find(|s| s.kind as u32 == 6).unwrap();
    s.payload.truncate(3);
    fixtures.push(("MalformedSection", sig.to_bytes()));
    for (class, bytes) in &fixtures {
        let got = probe(bytes).map(|e| error_class(&e));
        ensure(got == Some(*class), || format!("fixture for {class} produced {got:?}"))?;
    }

    let mut rng = StdRng::seed_from_u64(0x5EED_0009);
    let mut reached: HashMap<&'static str, usize> = HashMap::new();
    let n = 100_000;
    for _ in 0..n {
        let mut b = seeds[rng.gen_range(0..seeds.len())].clone();
        match rng.gen_range(0..4) {
            0 => {
                for _ in 0..rng.gen_range(1..=4) {
                    let i = rng.gen_range(0..b.len());
                    b[i] = rng.gen();
                }
            }
            1 => b.truncate(rng.gen_range(0..b.len())),
            2 => {
                // Header and section table are where structure lives.
                let i = rng.gen_range(0..b.len().min(140));
                b[i] = rng.gen();
            }
            _ => {
                let i = rng.gen_range(0..=b.len());
                let extra: Vec<u8> = (0..rng.gen_range(1..16)).map(|_| rng.gen()).collect();
                b.splice(i..i, extra);
            }
        }
        let r = catch_unwind(AssertUnwindSafe(|| probe(&b))).map_err(|_| "reader panicked on a mutated file".to_string())?;
        if let Some(e) = r {
            *reached.entry(error_class(&e)).or_default() += 1;
        }
    }
    let mut classes: Vec<_> = reached.into_iter().collect();
    classes.sort();
    Ok(format!("{n} mutations without a panic; all 5 classes have fixtures; fuzz reached {classes:?}"))
}

fn permission_soundness() -> Outcome {
    let arena = Arena::new(DEFAULT_ARENA_CAP);
    let kernel = elementwise_kernel("4x4");
    let pattern: Vec<u8> = (0..64u8).map(|i| i ^ 0x5A).collect();
    let filled = |flags, origin| arena.allocate_init(flags, origin, &pattern).unwrap();
    let view = |b: &Arc<tessel::runtime::Buffer>| TensorRef { buffer: Arc::clone(b), elem: ElementType::F32, shape: vec![4, 4] };
    let device = SimDevice::default();
    let host_only = BufferFlags { host_visible: true, device_visible: false, readable: true, writable: true };

    type Fixture<'a> = (&'a str, Arc<tessel::runtime::Buffer>, Box<dyn Fn(&Arc<tessel::runtime::Buffer>) -> Result<(), RuntimeError> + 'a>);
    let input = || filled(BufferFlags::INPUT, BufferOrigin::HostAlloc);
    let fixtures: Vec<Fixture<'_>> = vec![
        (
            "host read of a device-only buffer",
            filled(BufferFlags::TRANSIENT, BufferOrigin::DeviceAlloc),
            Box::new(|b| b.host_read().map(|_| ())),
        ),
        ("host write to a read-only input", input(), Box::new(|b| b.host_write(&[0xEE; 64]))),
        (
            "host write to a device-only buffer",
            filled(BufferFlags::TRANSIENT, BufferOrigin::DeviceAlloc),
            Box::new(|b| b.host_write(&[0xEE; 64])),
        ),
        (
            "dispatch writing a constant",
            filled(BufferFlags::CONSTANT, BufferOrigin::Constant),
            Box::new(|b| {
                let w = WorkerState::new(&kernel, [1, 1, 1], vec![view(&input()), view(&input()), view(b)]);
                dispatch_sync(&device, &kernel, &w).map(|_| ())
            }),
        ),
        (
            "dispatch reading a host-only buffer",
            filled(host_only, BufferOrigin::HostAlloc),
            Box::new(|b| {
                let out = arena.allocate(BufferFlags::OUTPUT, BufferOrigin::DeviceAlloc, 64).unwrap();
                let w = WorkerState::new(&kernel, [1, 1, 1], vec![view(b), view(&input()), view(&out)]);
                dispatch_sync(&device, &kernel, &w).map(|_| ())
            }),
        ),
        (
            "kernel storing through a read binding",
            filled(BufferFlags::OUTPUT, BufferOrigin::DeviceAlloc),
            Box::new(|b| {
                let mut k = kernel.clone();
                for st in &mut k.stages {
                    st.body.push(KOp::Store { src: 0, binding: 0, index: Index::Map(vec![0, 1]) });
                }
                let out = arena.allocate(BufferFlags::OUTPUT, BufferOrigin::DeviceAlloc, 64).unwrap();
                let w = WorkerState::new(&k, [1, 1, 1], vec![view(b), view(&input()), view(&out)]);
                device.prepare(&k, &w).map(|_| ())
            }),
        ),
    ];
    let total = fixtures.len();
    for (label, buffer, action) in fixtures {
        let before = buffer.snapshot();
        let result = action(&buffer);
        ensure(matches!(result, Err(RuntimeError::PermissionDenied(_))), || format!("{label}: got {result:?}"))?;
        ensure(buffer.snapshot() == before, || format!("{label}: contents changed"))?;
    }
    Ok(format!("{total} fixtures denied with contents unchanged"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("oracle equivalence", oracle_equivalence),
        ("fusion coverage", fusion_coverage),
        ("1x1 conv rewrite", conv_rewrite),
        ("dispatch order", scheduler_order),
        ("scheduler equivalence", scheduler_equivalence),
        ("stream memory", stream_memory),
        ("direct host path", emitc_property),
        ("stripped size", size_trend),
        ("format robustness", format_robustness),
        ("buffer permissions", permission_soundness),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:2} {name}: PASS ({secs:.1} s) {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:2} {name}: FAIL ({secs:.1} s) {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of 10 criteria failed");
        std::process::exit(1);
    }
    println!("all 10 criteria passed");
}
