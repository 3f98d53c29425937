mod bench;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gradgen::analysis::{build_cfg, StmtTable};
use gradgen::ast::Program;
use gradgen::check::{check, InputSpec, InputSpecs, Tolerance};
use gradgen::diag::render;
use gradgen::frontend::{emit_program, parse_str};
use gradgen::optimize::{run_pipeline, Pass, PassConfig};
use gradgen::registry::Registry;
use gradgen::runtime::{eval, EvalOptions, NoopObserver, Value};
use gradgen::transform::{Differentiator, GradOptions, GradResult};

#[derive(Parser)]
#[command(name = "gradgen", version, about = "Ahead-of-time reverse-mode differentiation of .tsl programs")]
struct Cli {
    /// Extra adjoint templates, loaded over the built-in ones.
    #[arg(long, global = true, value_name = "FILE")]
    adjoints: Option<PathBuf>,
    /// Optimization level; -O0 leaves generated code unoptimized.
    #[arg(short = 'O', global = true, value_name = "LEVEL", default_value_t = 1)]
    opt_level: u8,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the gradient of a function.
    Grad {
        file: PathBuf,
        function: String,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        wrt: Vec<usize>,
        /// Print the primal function's control flow graph (DOT) to stderr.
        #[arg(long)]
        dump_cfg: bool,
        #[arg(short, long, value_name = "OUT")]
        output: Option<PathBuf>,
    },
    /// Evaluate a function. Gradient names such as `dfdx` are generated on demand.
    Run {
        file: PathBuf,
        function: String,
        /// JSON array of arguments.
        #[arg(long, default_value = "[]")]
        args: String,
    },
    /// Compare a gradient with central finite differences at random inputs.
    Check {
        file: PathBuf,
        function: String,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        wrt: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        points: usize,
        #[arg(long, default_value_t = 1e-5)]
        tol_rel: f64,
        #[arg(long, default_value_t = 1e-8)]
        tol_abs: f64,
        /// Sampling spec; defaults to `<file stem>.inputs.json` next to the program.
        #[arg(long, value_name = "FILE")]
        inputs: Option<PathBuf>,
    },
    /// Time generated gradients of the bundled benchmark programs.
    Bench {
        #[arg(long, value_enum, default_value = "mlp")]
        program: BenchProgram,
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long, default_value_t = 50)]
        runs: usize,
        #[arg(long, default_value_t = 16)]
        batch: usize,
    },
    /// Run the optimizer over every function of a file.
    Opt {
        file: PathBuf,
        #[arg(long, value_delimiter = ',', value_enum)]
        passes: Option<Vec<PassName>>,
        #[arg(short, long, value_name = "OUT")]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum BenchProgram {
    Mlp,
    Loop,
}

#[derive(Clone, Copy, ValueEnum)]
enum PassName {
    Simplify,
    Copyprop,
    Dce,
}

/// Exit 1: the input was understood but the work failed.
/// Exit 2: the invocation itself is wrong.
enum Failure {
    Domain(String),
    Usage(String),
}

type Outcome = Result<(), Failure>;

fn domain(e: impl std::fmt::Display) -> Failure {
    Failure::Domain(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Domain(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: &Cli) -> Outcome {
    let d = differentiator(cli)?;
    let optimize = cli.opt_level > 0;
    match &cli.command {
        Command::Grad {
            file,
            function,
            wrt,
            dump_cfg,
            output,
        } => {
            let p = load(file)?;
            let f = p
                .get(function)
                .ok_or_else(|| Failure::Usage(format!("no function named `{function}` in {}", file.display())))?;
            if *dump_cfg {
                let table = StmtTable::new(f);
                eprint!("{}", build_cfg(f, &table).to_dot(f, &table));
            }
            let mut opts = GradOptions::new(wrt.clone());
            opts.optimize = optimize;
            let g = d.grad(&p, function, &opts).map_err(|e| domain(render(&e.diagnostics())))?;
            warn(&g);
            let text = if cli.json {
                let slots: Vec<_> = g
                    .slots
                    .iter()
                    .map(|s| serde_json::json!({"id": s.id, "purpose": format!("{:?}", s.purpose), "variable": s.variable}))
                    .collect();
                serde_json::json!({
                    "name": g.name(),
                    "wrt": g.wrt,
                    "source": g.source,
                    "adjoints": g.adjoints,
                    "slots": slots,
                    "warnings": g.warnings.iter().map(|w| w.to_string()).collect::<Vec<_>>(),
                })
                .to_string()
                    + "\n"
            } else {
                g.source.clone()
            };
            write_out(output.as_deref(), &text)
        }
        Command::Run { file, function, args } => {
            let p = load(file)?;
            let program = resolve(&d, &p, function, optimize)?;
            let args = parse_args(args)?;
            let f = program.get(function).expect("resolved");
            let required = f.params.iter().filter(|p| p.default.is_none()).count();
            if args.len() < required || args.len() > f.params.len() {
                return Err(Failure::Usage(format!(
                    "`{function}` takes {} arguments, {} given",
                    if required == f.params.len() {
                        required.to_string()
                    } else {
                        format!("{required} to {}", f.params.len())
                    },
                    args.len()
                )));
            }
            let opts = EvalOptions {
                checked: std::env::var("ADJOINT_CHECKED").is_ok_and(|v| v == "1"),
            };
            let out = eval(&program, function, &args, &opts, &mut NoopObserver).map_err(domain)?;
            let j = match out.as_slice() {
                [one] => one.to_json(),
                many => serde_json::Value::Array(many.iter().map(Value::to_json).collect()),
            };
            println!("{j}");
            Ok(())
        }
        Command::Check {
            file,
            function,
            wrt,
            points,
            tol_rel,
            tol_abs,
            inputs,
        } => {
            let p = load(file)?;
            let f = p
                .get(function)
                .ok_or_else(|| Failure::Usage(format!("no function named `{function}` in {}", file.display())))?;
            let specs = input_specs(file, inputs.as_deref(), function, f.params.len())?;
            let mut opts = GradOptions::new(wrt.clone());
            opts.optimize = optimize;
            let g = d.grad(&p, function, &opts).map_err(|e| domain(render(&e.diagnostics())))?;
            let tol = Tolerance {
                rel: *tol_rel,
                abs: *tol_abs,
            };
            let report = check(&p, function, &g, &specs, *points, cli.seed, tol).map_err(domain)?;
            if cli.json {
                println!("{}", report.to_json());
            } else {
                print!("{}", report.to_text());
            }
            if report.pass {
                Ok(())
            } else {
                Err(Failure::Domain("gradient does not match finite differences".into()))
            }
        }
        Command::Bench {
            program,
            sizes,
            runs,
            batch,
        } => {
            if *runs == 0 || *batch == 0 || sizes.as_ref().is_some_and(|s| s.contains(&0)) {
                return Err(Failure::Usage("sizes, runs and batch must be positive".into()));
            }
            let rows = bench::run(&d, *program, sizes.clone(), *runs, *batch, cli.seed, optimize).map_err(domain)?;
            eprint!("{}", bench::table(&rows));
            if cli.json {
                println!("{}", bench::json(*program, &rows));
            } else {
                print!("{}", bench::csv(&rows));
            }
            Ok(())
        }
        Command::Opt { file, passes, output } => {
            let p = load(file)?;
            let config = match passes {
                Some(names) => PassConfig {
                    passes: names
                        .iter()
                        .map(|n| match n {
                            PassName::Simplify => Pass::Simplify,
                            PassName::Copyprop => Pass::CopyProp,
                            PassName::Dce => Pass::Dce,
                        })
                        .collect(),
                    ..PassConfig::default()
                },
                None => PassConfig::default(),
            };
            let mut out = p.clone();
            for f in &p.functions {
                let (g, warnings) = run_pipeline(f, &config);
                if !warnings.is_empty() {
                    eprint!("{}", render(&warnings));
                }
                out.upsert(g);
            }
            write_out(output.as_deref(), &emit_program(&out))
        }
    }
}

fn differentiator(cli: &Cli) -> Result<Differentiator, Failure> {
    let mut registry = Registry::with_builtins();
    if let Some(path) = &cli.adjoints {
        let text = read(path)?;
        registry.load_source(&text, true).map_err(domain)?;
    }
    Ok(Differentiator::with_registry(registry))
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Failure::Usage(format!("{}: file not found", path.display())),
        _ => Failure::Usage(format!("{}: {e}", path.display())),
    })
}

fn load(path: &Path) -> Result<Program, Failure> {
    let text = read(path)?;
    parse_str(&text).map_err(|d| Failure::Domain(format!("{}:\n{}", path.display(), render(&d))))
}

fn write_out(path: Option<&Path>, text: &str) -> Outcome {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn warn(g: &GradResult) {
    if !g.warnings.is_empty() {
        eprint!("{}", render(&g.warnings));
    }
}

fn parse_args(text: &str) -> Result<Vec<Value>, Failure> {
    let j: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Failure::Usage(format!("--args is not valid JSON: {e}")))?;
    let items = match j {
        serde_json::Value::Array(items) => items,
        _ => return Err(Failure::Usage("--args must be a JSON array".into())),
    };
    items
        .iter()
        .map(|v| Value::from_json(v).map_err(|e| Failure::Usage(format!("--args: {e}"))))
        .collect()
}

/// The program extended with the named gradient when `name` is not a
/// function of the file but follows the `d<f>d<params>` naming.
fn resolve(d: &Differentiator, p: &Program, name: &str, optimize: bool) -> Result<Program, Failure> {
    if p.get(name).is_some() {
        return Ok(p.clone());
    }
    for f in &p.functions {
        let Some(rest) = name.strip_prefix(&format!("d{}d", f.name)) else {
            continue;
        };
        let n = f.params.len().min(16);
        for mask in 1u32..(1 << n) {
            let wrt: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let joined: String = wrt.iter().map(|i| f.params[*i].name.as_str()).collect();
            if joined != rest {
                continue;
            }
            let mut opts = GradOptions::new(wrt);
            opts.optimize = optimize;
            let g = d.grad(p, &f.name, &opts).map_err(|e| domain(render(&e.diagnostics())))?;
            if g.name() == name {
                warn(&g);
                return Ok(g.program_with(p));
            }
        }
    }
    Err(Failure::Usage(format!("no function named `{name}`")))
}

fn input_specs(file: &Path, explicit: Option<&Path>, function: &str, arity: usize) -> Result<Vec<InputSpec>, Failure> {
    let sidecar = file.with_extension("inputs.json");
    let path = match explicit {
        Some(p) => Some(p.to_path_buf()),
        None if sidecar.exists() => Some(sidecar),
        None => None,
    };
    let Some(path) = path else {
        return Ok(vec![InputSpec::Scalar { low: -1.0, high: 1.0 }; arity]);
    };
    let specs: InputSpecs = serde_json::from_str(&read(&path)?)
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    if specs.function != function {
        return Err(Failure::Usage(format!(
            "{} describes `{}`, not `{function}`",
            path.display(),
            specs.function
        )));
    }
    Ok(specs.params)
}
