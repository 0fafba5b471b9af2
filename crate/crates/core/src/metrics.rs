//! Experiment records and their CSV form.
//!
//! One row per training epoch plus one summary row at the end of each
//! split; summary rows carry `epoch = 0`. The CSV layout is fixed:
//! `split,epoch,method,val_acc,val_err,cum_steps,cum_wall_s`, dot decimal
//! separator, six significant digits on real-valued columns.

use std::io::{self, BufRead, Write};

pub const CSV_HEADER: &str = "split,epoch,method,val_acc,val_err,cum_steps,cum_wall_s";

/// Marker value of the `epoch` column on end-of-split summary rows.
pub const SUMMARY_EPOCH: usize = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub split: usize,
    /// 1-based epoch within the split; 0 marks the split summary row.
    pub epoch: usize,
    pub method: String,
    pub val_acc: f64,
    pub val_err: f64,
    pub cum_steps: u64,
    pub cum_wall_s: f64,
}

impl MetricsRow {
    pub fn is_summary(&self) -> bool {
        self.epoch == SUMMARY_EPOCH
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn push(&mut self, row: MetricsRow) {
        self.rows.push(row);
    }

    pub fn epoch_rows(&self) -> impl Iterator<Item = &MetricsRow> {
        self.rows.iter().filter(|r| !r.is_summary())
    }

    pub fn summary_rows(&self) -> impl Iterator<Item = &MetricsRow> {
        self.rows.iter().filter(|r| r.is_summary())
    }

    /// Final summary row, i.e. the run's end state.
    pub fn final_summary(&self) -> Option<&MetricsRow> {
        self.summary_rows().last()
    }

    /// Checks the structural invariants: cumulative columns never decrease
    /// and `val_err = 1 - val_acc` on every row.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut last_steps = 0u64;
        let mut last_wall = 0.0f64;
        for (i, r) in self.rows.iter().enumerate() {
            if r.cum_steps < last_steps {
                return Err(format!("row {i}: cum_steps decreased"));
            }
            if r.cum_wall_s < last_wall {
                return Err(format!("row {i}: cum_wall_s decreased"));
            }
            if (r.val_err - (1.0 - r.val_acc)).abs() > 1e-12 {
                return Err(format!("row {i}: val_err != 1 - val_acc"));
            }
            last_steps = r.cum_steps;
            last_wall = r.cum_wall_s;
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.split,
                r.epoch,
                r.method,
                format_sig6(r.val_acc),
                format_sig6(r.val_err),
                r.cum_steps,
                format_sig6(r.cum_wall_s)
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: &mut R) -> Result<Self, String> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or("empty csv")?
            .map_err(|e| e.to_string())?;
        if header.trim() != CSV_HEADER {
            return Err(format!("unexpected header: {header}"));
        }
        let mut log = MetricsLog::default();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 7 {
                return Err(format!("row {i}: expected 7 fields, got {}", parts.len()));
            }
            log.push(MetricsRow {
                split: parts[0].parse().map_err(|e| format!("row {i} split: {e}"))?,
                epoch: parts[1].parse().map_err(|e| format!("row {i} epoch: {e}"))?,
                method: parts[2].to_string(),
                val_acc: parts[3]
                    .parse()
                    .map_err(|e| format!("row {i} val_acc: {e}"))?,
                val_err: parts[4]
                    .parse()
                    .map_err(|e| format!("row {i} val_err: {e}"))?,
                cum_steps: parts[5]
                    .parse()
                    .map_err(|e| format!("row {i} cum_steps: {e}"))?,
                cum_wall_s: parts[6]
                    .parse()
                    .map_err(|e| format!("row {i} cum_wall_s: {e}"))?,
            });
        }
        Ok(log)
    }
}

/// Fixed-point decimal rendering with six significant digits.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0.00000".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}
