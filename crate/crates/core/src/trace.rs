//! Closed-loop traces and their three comma-separated output tables.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;
use crate::model::SlotRecord;

pub const SLOTS_FILE: &str = "slots.csv";
pub const EVS_FILE: &str = "evs.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Final state of one session.
#[derive(Debug, Clone, PartialEq)]
pub struct EvOutcome {
    pub id: String,
    pub arrival: usize,
    pub departure: usize,
    /// SOC error at arrival, kWh.
    pub required: f64,
    /// SOC error when the EV left the market, kWh.
    pub remaining: f64,
    pub left_at: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    /// €cent/kWh.
    pub price_mean: f64,
    pub price_stdev: f64,
    pub peak_demand: f64,
    /// Energy drawn by the station, kWh.
    pub total_energy: f64,
    /// Sum of the SOC errors left at departure, kWh.
    pub unmet_energy: f64,
    pub max_iterations: usize,
    pub nonconverged_slots: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub slot_hours: f64,
    pub records: Vec<SlotRecord>,
    /// Sorted by id.
    pub outcomes: Vec<EvOutcome>,
    pub summary: Summary,
}

impl SimulationTrace {
    pub fn new(slot_hours: f64, records: Vec<SlotRecord>, mut outcomes: Vec<EvOutcome>) -> Self {
        outcomes.sort_by(|a, b| a.id.cmp(&b.id));
        let summary = summarize(slot_hours, &records, &outcomes);
        Self {
            slot_hours,
            records,
            outcomes,
            summary,
        }
    }

    pub fn converged(&self) -> bool {
        self.summary.nonconverged_slots == 0
    }
}

fn summarize(slot_hours: f64, records: &[SlotRecord], outcomes: &[EvOutcome]) -> Summary {
    let n = records.len().max(1) as f64;
    let price_mean = records.iter().map(|r| r.price_applied).sum::<f64>() / n;
    let variance = records
        .iter()
        .map(|r| (r.price_applied - price_mean).powi(2))
        .sum::<f64>()
        / n;
    Summary {
        price_mean,
        price_stdev: variance.sqrt(),
        peak_demand: records.iter().map(|r| r.demand_total).fold(0.0, f64::max),
        total_energy: records.iter().map(|r| r.demand_total * slot_hours).sum(),
        unmet_energy: outcomes.iter().map(|o| o.remaining).sum(),
        max_iterations: records.iter().map(|r| r.iterations).max().unwrap_or(0),
        nonconverged_slots: records.iter().filter(|r| !r.converged).count(),
    }
}

/// Positional notation with six significant digits; zero prints as `0.000000`.
pub fn format_sig6(value: f64) -> String {
    if !value.is_finite() {
        return format!("{value}");
    }
    if value == 0.0 {
        return "0.000000".to_string();
    }
    // Round first so that e.g. 9.9999996 picks the exponent of 10.0000.
    let sci = format!("{value:.5e}");
    let (mantissa, exponent) = sci.split_once('e').expect("exponent form");
    let exponent: i32 = exponent.parse().expect("integer exponent");
    let rounded: f64 = format!("{mantissa}e{exponent}").parse().expect("float");
    let decimals = (5 - exponent).max(0) as usize;
    let out = format!("{rounded:.decimals$}");
    if out.starts_with('-') && out[1..].bytes().all(|b| b == b'0' || b == b'.') {
        out[1..].to_string()
    } else {
        out
    }
}

pub fn write_slot_table<W: Write>(trace: &SimulationTrace, mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "slot,time_hours,price_applied,demand_total_kw,p_l_kw,p_s_kw,storage_soc_kwh,iterations,residual_kw,converged"
    )?;
    for r in &trace.records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.slot,
            format_sig6(r.slot as f64 * trace.slot_hours),
            format_sig6(r.price_applied),
            format_sig6(r.demand_total),
            format_sig6(r.p_l),
            format_sig6(r.p_s),
            format_sig6(r.x_s),
            r.iterations,
            format_sig6(r.residual),
            r.converged,
        )?;
    }
    out.flush()
}

pub fn write_ev_table<W: Write>(trace: &SimulationTrace, mut out: W) -> std::io::Result<()> {
    writeln!(out, "slot,ev_id,power_kw,soc_error_kwh")?;
    for r in &trace.records {
        for s in &r.per_ev {
            writeln!(
                out,
                "{},{},{},{}",
                r.slot,
                s.id,
                format_sig6(s.power),
                format_sig6(s.soc_error)
            )?;
        }
    }
    out.flush()
}

pub fn write_summary<W: Write>(trace: &SimulationTrace, mut out: W) -> std::io::Result<()> {
    let s = &trace.summary;
    writeln!(
        out,
        "price_mean,price_stdev,peak_demand_kw,total_energy_kwh,unmet_energy_kwh,max_iterations,nonconverged_slots"
    )?;
    writeln!(
        out,
        "{},{},{},{},{},{},{}",
        format_sig6(s.price_mean),
        format_sig6(s.price_stdev),
        format_sig6(s.peak_demand),
        format_sig6(s.total_energy),
        format_sig6(s.unmet_energy),
        s.max_iterations,
        s.nonconverged_slots,
    )?;
    out.flush()
}

/// Writes `slots.csv`, `evs.csv` and `summary.csv` into `dir`, creating it if needed.
pub fn write_trace(trace: &SimulationTrace, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_slot_table(trace, BufWriter::new(File::create(dir.join(SLOTS_FILE))?))?;
    write_ev_table(trace, BufWriter::new(File::create(dir.join(EVS_FILE))?))?;
    write_summary(trace, BufWriter::new(File::create(dir.join(SUMMARY_FILE))?))?;
    Ok(())
}
