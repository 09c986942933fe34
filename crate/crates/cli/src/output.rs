//! CSV tables. Numbers use Rust's shortest round-trip formatting, so equal
//! values always print identically.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use risopt::{SolveReport, TracePoint};

pub const SUMMARY_HEADER: [&str; 10] = ["experiment", "grid_value", "se_de", "se_mc", "ee", "re", "p_sum_w", "outer_iters", "wall_ms", "converged"];

pub const TRACE_HEADER: [&str; 13] = [
    "experiment",
    "iteration",
    "se_de",
    "se_mc",
    "ee",
    "re",
    "objective",
    "f3",
    "f5",
    "power_accepted",
    "phase_accepted",
    "qt_iterations",
    "bcd_iterations",
];

pub fn sink(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

/// Where a failed run's partial trace goes: next to `--out`, or stderr.
pub fn partial_sink(out: Option<&Path>) -> io::Result<(Box<dyn Write>, String)> {
    match out {
        Some(p) => {
            let path = partial_path(p);
            let shown = path.display().to_string();
            Ok((Box::new(File::create(path)?), shown))
        }
        None => Ok((Box::new(io::stderr()), "stderr".into())),
    }
}

pub fn partial_path(out: &Path) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(".partial.csv");
    out.with_file_name(name)
}

pub fn summary_row(experiment: &str, grid_value: f64, r: &SolveReport, timing: bool) -> Vec<String> {
    vec![
        experiment.to_string(),
        grid_value.to_string(),
        r.de_metrics.se.to_string(),
        r.mc_metrics.se.to_string(),
        r.mc_metrics.ee.to_string(),
        r.mc_metrics.re.to_string(),
        r.mc_metrics.p_sum.to_string(),
        r.iterations.to_string(),
        if timing { r.wall_time.as_millis().to_string() } else { String::new() },
        r.converged.to_string(),
    ]
}

fn trace_row(experiment: &str, iteration: usize, p: &TracePoint) -> Vec<String> {
    vec![
        experiment.to_string(),
        iteration.to_string(),
        p.de_se.to_string(),
        p.mc_se.map(|v| v.to_string()).unwrap_or_default(),
        p.ee.to_string(),
        p.re.to_string(),
        p.objective.to_string(),
        p.f3.to_string(),
        p.f5.to_string(),
        p.power_accepted.to_string(),
        p.phase_accepted.to_string(),
        p.qt_iterations.to_string(),
        p.bcd_iterations.to_string(),
    ]
}

/// Writes the initial point as iteration 0 when given, then one row per
/// outer iteration.
pub fn write_trace<W: Write>(w: &mut csv::Writer<W>, experiment: &str, initial: Option<&TracePoint>, trace: &[TracePoint]) -> csv::Result<()> {
    if let Some(p) = initial {
        w.write_record(trace_row(experiment, 0, p))?;
    }
    for (i, p) in trace.iter().enumerate() {
        w.write_record(trace_row(experiment, i + 1, p))?;
    }
    Ok(())
}
