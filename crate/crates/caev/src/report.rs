//! Turns raw run/sweep outputs into per-figure plot-data CSVs and a text
//! summary.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::SimError;
use crate::sim::{SweepReport, TRACE_HEADER};

/// Parsed trace row, column-indexed per [`TRACE_HEADER`].
struct TraceRows {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl TraceRows {
    fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Other(format!("{}: {e}", path.display())))?;
        let mut lines = text.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| SimError::Other(format!("{}: empty trace", path.display())))?;
        if header_line != TRACE_HEADER {
            return Err(SimError::Other(format!(
                "{}: unexpected header `{header_line}`",
                path.display()
            )));
        }
        let header: Vec<String> = header_line.split(',').map(str::to_string).collect();
        let mut rows = Vec::new();
        for (ln, line) in lines.enumerate() {
            let row: Result<Vec<f64>, _> = line.split(',').map(str::parse).collect();
            let row = row.map_err(|e| {
                SimError::Other(format!("{}: line {}: {e}", path.display(), ln + 2))
            })?;
            if row.len() != header.len() {
                return Err(SimError::Other(format!(
                    "{}: line {}: expected {} columns, found {}",
                    path.display(),
                    ln + 2,
                    header.len(),
                    row.len()
                )));
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(SimError::Other(format!("{}: no data rows", path.display())));
        }
        Ok(Self { header, rows })
    }

    fn col(&self, name: &str) -> usize {
        self.header
            .iter()
            .position(|h| h == name)
            .expect("column names come from the fixed header")
    }

    fn write_subset(&self, path: &Path, cols: &[&str]) -> Result<(), SimError> {
        use std::io::Write;
        let idx: Vec<usize> = cols.iter().map(|c| self.col(c)).collect();
        let f = std::fs::File::create(path)
            .map_err(|e| SimError::Other(format!("{}: {e}", path.display())))?;
        let mut f = std::io::BufWriter::new(f);
        let mut emit = || -> std::io::Result<()> {
            writeln!(f, "{}", cols.join(","))?;
            for row in &self.rows {
                let vals: Vec<String> = idx.iter().map(|i| format!("{:.8e}", row[*i])).collect();
                writeln!(f, "{}", vals.join(","))?;
            }
            Ok(())
        };
        emit().map_err(|e| SimError::Other(format!("{}: {e}", path.display())))
    }
}

/// Generate plot-data files and `summary.txt` from the contents of a run or
/// sweep output directory. Errors when the directory holds nothing usable.
pub fn report(dir: &Path) -> Result<(), SimError> {
    let mut summary = String::new();
    let mut produced = false;

    let trace_path = dir.join("trace.csv");
    if trace_path.exists() {
        let trace = TraceRows::load(&trace_path)?;
        trace.write_subset(&dir.join("vehicle.csv"), &["t", "d", "w", "u"])?;
        trace.write_subset(&dir.join("battery.csv"), &["t", "c_surf", "V", "I"])?;
        trace.write_subset(
            &dir.join("residuals.csv"),
            &["t", "r_v_d", "r_v_w", "r_v_a", "r_v_norm", "r_b"],
        )?;
        trace.write_subset(&dir.join("agent.csv"), &["t", "u_RL", "reward"])?;
        produced = true;
    }

    let summary_path = dir.join("summary.json");
    if summary_path.exists() {
        let text = std::fs::read_to_string(&summary_path)
            .map_err(|e| SimError::Other(format!("{}: {e}", summary_path.display())))?;
        let s: crate::sim::Summary = serde_json::from_str(&text)
            .map_err(|e| SimError::Other(format!("{}: {e}", summary_path.display())))?;
        writeln!(summary, "min_d={:.6}", s.min_d).unwrap();
        writeln!(summary, "max_abs_e={:.6}", s.max_abs_e).unwrap();
        writeln!(summary, "collision={}", s.collision).unwrap();
        writeln!(summary, "unsafe_entry={}", s.unsafe_entry).unwrap();
        produced = true;
    }

    let sweep_path = dir.join("sweep.json");
    if sweep_path.exists() {
        let text = std::fs::read_to_string(&sweep_path)
            .map_err(|e| SimError::Other(format!("{}: {e}", sweep_path.display())))?;
        let s: SweepReport = serde_json::from_str(&text)
            .map_err(|e| SimError::Other(format!("{}: {e}", sweep_path.display())))?;
        write_boundary_chart(&s, &dir.join("boundary.csv"))?;
        match s.boundary {
            Some(b) => writeln!(summary, "{}_safe={b}", s.axis).unwrap(),
            None => writeln!(summary, "{}_safe=none", s.axis).unwrap(),
        }
        produced = true;
    }

    if !produced {
        return Err(SimError::Other(format!(
            "{}: no trace.csv, summary.json, or sweep.json found",
            dir.display()
        )));
    }
    if !summary.is_empty() {
        std::fs::write(dir.join("summary.txt"), summary)
            .map_err(|e| SimError::Other(format!("{}: {e}", dir.display())))?;
    }
    Ok(())
}

fn write_boundary_chart(s: &SweepReport, path: &Path) -> Result<(), SimError> {
    use std::io::Write;
    let f = std::fs::File::create(path)
        .map_err(|e| SimError::Other(format!("{}: {e}", path.display())))?;
    let mut f = std::io::BufWriter::new(f);
    let mut emit = || -> std::io::Result<()> {
        writeln!(f, "value,min_d,saturation_frac,unsafe_entry")?;
        for p in &s.points {
            writeln!(
                f,
                "{},{},{},{}",
                p.value, p.min_d, p.saturation_frac, p.unsafe_entry
            )?;
        }
        Ok(())
    };
    emit().map_err(|e| SimError::Other(format!("{}: {e}", path.display())))
}
