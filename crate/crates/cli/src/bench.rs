//! Timing of generated gradients for the bundled mlp and loop programs.

use std::time::Instant;

use gradgen::check::{sample_points, CheckError, InputSpec};
use gradgen::corpus::hand_written;
use gradgen::frontend::parse_str;
use gradgen::runtime::{eval, EvalOptions, NoopObserver, Value};
use gradgen::transform::{Differentiator, GradOptions};

use crate::BenchProgram;

const MLP_INPUTS: usize = 8;
const MLP_CLASSES: usize = 4;

pub const MLP_SIZES: &[usize] = &[100, 1_000, 10_000];
pub const LOOP_SIZES: &[usize] = &[1, 2, 4, 8];

pub struct Row {
    /// Parameter count (mlp) or number of loop steps (loop).
    pub size: usize,
    pub median_ns: u128,
    pub mean_ns: u128,
    /// Transformation plus the first call.
    pub first_call_ns: u128,
    pub transforms: usize,
}

fn mlp_params(hidden: usize) -> usize {
    MLP_INPUTS * hidden + hidden + hidden * MLP_CLASSES + MLP_CLASSES
}

/// Widest hidden layer whose parameter count does not exceed `size`.
fn mlp_hidden(size: usize) -> usize {
    let per_unit = MLP_INPUTS + 1 + MLP_CLASSES;
    (size.saturating_sub(MLP_CLASSES) / per_unit).max(1)
}

fn specs(program: BenchProgram, size: usize, batch: usize) -> (Vec<InputSpec>, usize) {
    let weights = |shape: Vec<usize>| InputSpec::Array {
        shape,
        low: -0.5,
        high: 0.5,
    };
    match program {
        BenchProgram::Mlp => {
            let h = mlp_hidden(size);
            let specs = vec![
                InputSpec::Array {
                    shape: vec![batch, MLP_INPUTS],
                    low: -1.0,
                    high: 1.0,
                },
                weights(vec![MLP_INPUTS, h]),
                weights(vec![h]),
                weights(vec![h, MLP_CLASSES]),
                weights(vec![MLP_CLASSES]),
                InputSpec::OneHot {
                    shape: vec![batch, MLP_CLASSES],
                },
            ];
            (specs, mlp_params(h))
        }
        BenchProgram::Loop => {
            let specs = vec![
                InputSpec::Array {
                    shape: vec![batch],
                    low: 0.1,
                    high: 2.0,
                },
                InputSpec::Fixed {
                    value: serde_json::json!(size),
                },
            ];
            (specs, size)
        }
    }
}

pub fn run(
    base: &Differentiator,
    program: BenchProgram,
    sizes: Option<Vec<usize>>,
    runs: usize,
    batch: usize,
    seed: u64,
    optimize: bool,
) -> Result<Vec<Row>, CheckError> {
    let (name, wrt, default_sizes) = match program {
        BenchProgram::Mlp => ("mlp", vec![1, 2, 3, 4], MLP_SIZES),
        BenchProgram::Loop => ("loop", vec![0], LOOP_SIZES),
    };
    let entry = hand_written().into_iter().find(|e| e.name == name).expect("bundled program");
    let p = parse_str(&entry.source).expect("bundled program parses");
    let sizes = sizes.unwrap_or_else(|| default_sizes.to_vec());
    let mut rows = Vec::with_capacity(sizes.len());
    for size in sizes {
        let (specs, actual) = specs(program, size, batch);
        let args = sample_points(&p, &entry.function, &specs, 1, seed)?.remove(0);
        // a fresh differentiator per size so the first call pays for the transformation
        let d = Differentiator::with_registry(base.registry().clone());
        let mut opts = GradOptions::new(wrt.clone());
        opts.optimize = optimize;

        let start = Instant::now();
        let g = d
            .grad(&p, &entry.function, &opts)
            .map_err(|e| gradgen::runtime::RuntimeError::new(e.to_string()))?;
        let gp = g.program_with(&p);
        call(&gp, g.name(), &args)?;
        let first_call_ns = start.elapsed().as_nanos();

        let mut times = Vec::with_capacity(runs);
        for _ in 0..runs {
            let t = Instant::now();
            call(&gp, g.name(), &args)?;
            times.push(t.elapsed().as_nanos());
        }
        rows.push(Row {
            size: actual,
            median_ns: median(&mut times),
            mean_ns: times.iter().sum::<u128>() / times.len() as u128,
            first_call_ns,
            transforms: d.transform_count(),
        });
    }
    Ok(rows)
}

fn call(program: &gradgen::ast::Program, function: &str, args: &[Value]) -> Result<Vec<Value>, CheckError> {
    Ok(eval(program, function, args, &EvalOptions::default(), &mut NoopObserver)?)
}

pub fn median(times: &mut [u128]) -> u128 {
    times.sort_unstable();
    let n = times.len();
    if n % 2 == 1 {
        times[n / 2]
    } else {
        (times[n / 2 - 1] + times[n / 2]) / 2
    }
}

pub fn csv(rows: &[Row]) -> String {
    let mut out = String::from("size,median_ns,mean_ns,first_call_ns\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.size, r.median_ns, r.mean_ns, r.first_call_ns));
    }
    out
}

pub fn table(rows: &[Row]) -> String {
    let mut out = format!("{:>8} {:>14} {:>14} {:>16}\n", "size", "median_ns", "mean_ns", "first_call_ns");
    for r in rows {
        out.push_str(&format!(
            "{:>8} {:>14} {:>14} {:>16}\n",
            r.size, r.median_ns, r.mean_ns, r.first_call_ns
        ));
    }
    out
}

pub fn json(program: BenchProgram, rows: &[Row]) -> serde_json::Value {
    let name = match program {
        BenchProgram::Mlp => "mlp",
        BenchProgram::Loop => "loop",
    };
    serde_json::json!({
        "program": name,
        "rows": rows.iter().map(|r| serde_json::json!({
            "size": r.size,
            "median_ns": r.median_ns as u64,
            "mean_ns": r.mean_ns as u64,
            "first_call_ns": r.first_call_ns as u64,
            "transforms": r.transforms,
        })).collect::<Vec<_>>(),
    })
}
