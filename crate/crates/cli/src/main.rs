use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use tessel::codegen::c_identifier;
use tessel::module_file::{read_module, strip_debug, ModuleError, ModuleFile};
use tessel::pipeline::{compile, CompileError, CompileOptions, HostFormat};
use tessel::refinterp::{interpret, InterpError};
use tessel::runtime::{vm_run, HostMode, RunOptions, RuntimeError, Scheduler};
use tessel::tensor::{TensorData, TensorFileError};
use tessel::text::{parse_module, ParseError};
use tessel::transforms::TileConfig;

#[derive(Parser)]
#[command(name = "tessel", version, about = "Compile, run and inspect tensor programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a .tir program into a .tirm module.
    Compile {
        input: PathBuf,
        /// Output path; defaults to the input with a .tirm extension.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = HostArg::Bytecode)]
        host: HostArg,
        /// Leave out the debug-name section.
        #[arg(long)]
        strip_debug: bool,
        /// Outer tile sizes as `i,j` for every region, or `N=i,j` for region N.
        #[arg(long, value_name = "TILES")]
        tile: Vec<String>,
        #[arg(long)]
        no_vectorize: bool,
    },
    /// Run a compiled module on TNSR1 inputs.
    Run {
        module: PathBuf,
        inputs: Vec<PathBuf>,
        /// Outputs are written to `<prefix><i>.tnsr`.
        #[arg(short, long, default_value = "out")]
        output: String,
        #[arg(long, value_enum, default_value_t = SchedulerArg::Sync)]
        scheduler: SchedulerArg,
        #[arg(long, default_value_t = 2)]
        workers: usize,
        /// Defaults to interpret for bytecode modules and direct for C modules.
        #[arg(long, value_enum)]
        host_mode: Option<HostModeArg>,
        /// Print a `key=value` stats line.
        #[arg(long)]
        stats: bool,
    },
    /// Evaluate a .tir program with the reference interpreter.
    Interpret {
        program: PathBuf,
        inputs: Vec<PathBuf>,
        #[arg(short, long, default_value = "out")]
        output: String,
    },
    /// Print the section table of a module.
    Inspect { module: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum HostArg {
    Bytecode,
    Emitc,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchedulerArg {
    Sync,
    Async,
}

#[derive(Clone, Copy, ValueEnum)]
enum HostModeArg {
    Interpret,
    Direct,
}

/// Usage or I/O failure that carries its own message.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<ParseError>() || cause.is::<CompileError>() {
            return 1;
        }
        if cause.is::<Usage>() || cause.is::<std::io::Error>() || cause.is::<TensorFileError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<InterpError>() {
            return if matches!(e, InterpError::ShapeMismatch(_)) { 2 } else { 1 };
        }
        if cause.is::<ModuleError>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<RuntimeError>() {
            return match e {
                RuntimeError::SignatureMismatch(_) => 2,
                RuntimeError::MalformedBytecode(_) | RuntimeError::Module(_) | RuntimeError::MissingKernel(_) => 3,
                _ => 4,
            };
        }
    }
    4
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Usage(format!("cannot read {}: {e}", path.display())).into())
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Usage(format!("cannot write {}: {e}", path.display())).into())
}

fn read_inputs(paths: &[PathBuf]) -> Result<Vec<TensorData>> {
    paths
        .iter()
        .map(|p| TensorData::decode(&read(p)?).with_context(|| format!("reading {}", p.display())))
        .collect()
}

fn write_outputs(prefix: &str, outputs: &[TensorData]) -> Result<()> {
    for (i, t) in outputs.iter().enumerate() {
        let path = PathBuf::from(format!("{prefix}{i}.tnsr"));
        write(&path, &t.encode())?;
        println!("output={} dtype={} shape={}", path.display(), t.elem, shape_string(&t.shape));
    }
    Ok(())
}

fn shape_string(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

fn parse_tiles(specs: &[String]) -> Result<TileConfig> {
    let mut cfg = TileConfig::default();
    for spec in specs {
        let (region, list) = match spec.split_once('=') {
            Some((r, l)) => (Some(r.trim().parse::<u32>().map_err(|_| Usage(format!("bad region in --tile {spec}")))?), l),
            None => (None, spec.as_str()),
        };
        let tiles = list
            .split(',')
            .map(|t| t.trim().parse::<u64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| Usage(format!("bad --tile {spec}: expected comma-separated integers")))?;
        match region {
            Some(r) => {
                cfg.per_region.insert(r, tiles);
            }
            None => cfg.outer = Some(tiles),
        }
    }
    Ok(cfg)
}

fn load_module(path: &Path) -> Result<ModuleFile> {
    let bytes = read(path)?;
    read_module(&bytes).with_context(|| format!("reading {}", path.display()))
}

fn print_sections(file: &ModuleFile) {
    for s in &file.sections {
        println!("section={} kind={} size={}", s.kind.name(), s.kind as u32, s.payload.len());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Compile { input, output, host, strip_debug, tile, no_vectorize } => {
            let text = String::from_utf8(read(&input)?).map_err(|_| Usage(format!("{} is not UTF-8", input.display())))?;
            let module = parse_module(&text)?;
            let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("module");
            let options = CompileOptions {
                host: match host {
                    HostArg::Bytecode => HostFormat::Bytecode,
                    HostArg::Emitc => HostFormat::EmitC,
                },
                debug: !strip_debug,
                tiles: parse_tiles(&tile)?,
                vectorize: !no_vectorize,
                module_name: c_identifier(stem),
                ..Default::default()
            };
            let compiled = compile(&module, &options)?;
            let out = output.unwrap_or_else(|| input.with_extension("tirm"));
            let bytes = compiled.module_bytes();
            write(&out, &bytes)?;
            println!("output={}", out.display());
            if let Some(c) = &compiled.c_source {
                let c_path = out.with_extension("c");
                write(&c_path, c.as_bytes())?;
                println!("c_source={}", c_path.display());
            }
            print_sections(&read_module(&bytes)?);
            println!("kernels={}", compiled.kernels.len());
            println!("total_size={}", bytes.len());
        }
        Command::Run { module, inputs, output, scheduler, workers, host_mode, stats } => {
            let file = load_module(&module)?;
            let inputs = read_inputs(&inputs)?;
            if workers == 0 {
                bail!(Usage("--workers must be at least 1".into()));
            }
            let options = RunOptions {
                scheduler: match scheduler {
                    SchedulerArg::Sync => Scheduler::Sync,
                    SchedulerArg::Async => Scheduler::Async { workers },
                },
                host: host_mode.map(|m| match m {
                    HostModeArg::Interpret => HostMode::Interpret,
                    HostModeArg::Direct => HostMode::Direct,
                }),
                ..Default::default()
            };
            let out = vm_run(&file, &inputs, &options)?;
            write_outputs(&output, &out.outputs)?;
            if stats {
                let s = &out.stats;
                println!(
                    "peak_pool_bytes={} dispatches={} work_items={} host_ops={} interpreter_decodes={} at_rest_bytes={}",
                    s.peak_pool_bytes, s.dispatches, s.work_items, s.host_ops, s.interpreter_decodes, s.at_rest_bytes
                );
            }
        }
        Command::Interpret { program, inputs, output } => {
            let text = String::from_utf8(read(&program)?).map_err(|_| Usage(format!("{} is not UTF-8", program.display())))?;
            let module = parse_module(&text)?;
            let inputs = read_inputs(&inputs)?;
            let outputs = interpret(&module, &inputs)?;
            write_outputs(&output, &outputs)?;
        }
        Command::Inspect { module } => {
            let file = load_module(&module)?;
            println!("version={}", file.version);
            println!("host={}", if file.host_is_emitc() { "emitc" } else { "bytecode" });
            println!("debug={}", file.has_debug());
            print_sections(&file);
            let kernels = file.kernels()?;
            let names = file.debug_names()?;
            for (i, k) in kernels.iter().enumerate() {
                match names.as_ref().and_then(|n| n.get(i)) {
                    Some(name) => println!("kernel={i} size={} name={name}", k.len()),
                    None => println!("kernel={i} size={}", k.len()),
                }
            }
            if file.has_debug() {
                println!("stripped_size={}", strip_debug(&file).total_size());
            }
            println!("total_size={}", file.total_size());
        }
    }
    Ok(())
}
