//! CSV and JSON artifacts.
//!
//! All writers are deterministic: identical inputs give identical bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acquisition::DetectionEvent;
use crate::clock_manager::TraceRow;
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct EventRow {
    gate_index: u64,
    time_s: f64,
    d0: u8,
    d1: Option<u8>,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|source| Error::Csv {
        path: path.to_owned(),
        source,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_owned(),
        source,
    }
}

pub fn write_events_csv(path: &Path, events: &[DetectionEvent]) -> Result<()> {
    let mut w = csv_writer(path)?;
    if events.is_empty() {
        w.write_record(["gate_index", "time_s", "d0", "d1"]).map_err(csv_err(path))?;
    }
    for ev in events {
        w.serialize(EventRow {
            gate_index: ev.gate_index,
            time_s: ev.time,
            d0: u8::from(ev.d0),
            d1: ev.d1.map(u8::from),
        })
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_events_csv(path: &Path) -> Result<Vec<DetectionEvent>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut out = Vec::new();
    for row in r.deserialize::<EventRow>() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(1, |p| p.line() as usize);
            Error::Parse {
                path: path.to_owned(),
                line,
                column: 1,
                message: e.to_string(),
            }
        })?;
        out.push(DetectionEvent {
            gate_index: row.gate_index,
            time: row.time_s,
            d0: row.d0 != 0,
            d1: row.d1.map(|b| b != 0),
        });
    }
    Ok(out)
}

pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["cycle_index", "edge_time", "ffd_set", "counter", "clock_delivered"])
        .map_err(csv_err(path))?;
    for r in rows {
        w.write_record([
            r.cycle_index.to_string(),
            r.edge_time.to_string(),
            u8::from(r.ffd_set).to_string(),
            r.counter.to_string(),
            u8::from(r.clock_delivered).to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-block useful percentages in ON/OFF columns plus the theory line.
pub fn write_block_series(path: &Path, on: Option<&[f64]>, off: Option<&[f64]>, theory_pct: f64) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["block_index", "pct_on", "pct_off", "theory_pct"])
        .map_err(csv_err(path))?;
    let n = on.map_or(0, <[f64]>::len).max(off.map_or(0, <[f64]>::len));
    let cell = |col: Option<&[f64]>, i: usize| col.and_then(|c| c.get(i)).map_or(String::new(), |v| format!("{v:.4}"));
    for i in 0..n {
        w.write_record([i.to_string(), cell(on, i), cell(off, i), format!("{theory_pct:.4}")])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One row of a long-format sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mean_photon_number: f64,
    pub quantum_efficiency: f64,
    pub dead_time: f64,
    pub mode: String,
    pub metric: String,
    pub value: f64,
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for row in rows {
        w.serialize(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::io(path, e.into()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn events_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.csv");
        let events = vec![
            DetectionEvent { gate_index: 3, time: 7.5e-7, d0: true, d1: Some(false) },
            DetectionEvent { gate_index: 90, time: 1.0 / 3.0, d0: true, d1: Some(true) },
        ];
        write_events_csv(&path, &events).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("gate_index,time_s,d0,d1\n3,"));
        assert_eq!(read_events_csv(&path).unwrap(), events);
    }

    #[test]
    fn single_detector_rows_leave_d1_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.csv");
        let events = vec![DetectionEvent { gate_index: 0, time: 0.0, d0: true, d1: None }];
        write_events_csv(&path, &events).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "0,0.0,1,");
        assert_eq!(read_events_csv(&path).unwrap(), events);

        write_events_csv(&path, &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "gate_index,time_s,d0,d1\n");
        assert!(read_events_csv(&path).unwrap().is_empty());
    }
}
