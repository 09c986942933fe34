//! `START:STEP:END` grids.

const MAX_POINTS: usize = 100_000;

/// Parses `START:STEP:END` (inclusive, `STEP > 0`) or a single number.
pub fn parse_grid(text: &str) -> Result<Vec<f64>, String> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("`{s}` is not a finite number"))
    };
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [single] => Ok(vec![num(single)?]),
        [start, step, end] => {
            let (start, step, end) = (num(start)?, num(step)?, num(end)?);
            if !(step > 0.0) {
                return Err(format!("step {step} must be > 0"));
            }
            if end < start {
                return Err(format!("end {end} is below start {start}"));
            }
            // tolerate END landing a rounding error short of the last step
            let n = ((end - start) / step + 1e-9).floor();
            if n >= MAX_POINTS as f64 {
                return Err(format!("more than {MAX_POINTS} grid points"));
            }
            Ok((0..=n as usize).map(|i| start + i as f64 * step).collect())
        }
        _ => Err(format!("`{text}` is neither START:STEP:END nor a number")),
    }
}
