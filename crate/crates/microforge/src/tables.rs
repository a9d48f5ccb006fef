//! Plot-ready CSV tables and the JSON shapes shared by reports.
//!
//! Floats are written in Rust's shortest round-trip form, so reading a
//! table back gives the exact values that were written.

use std::collections::BTreeMap;
use std::path::Path;

use microforge_core::homog::EffectiveElasticity;
use microforge_core::metrology::{Comparison, MinkowskiTriple, Stats};
use microforge_core::train::TraceRow;
use serde_json::{json, Value};

use crate::io::{write_atomic, IoError};

pub const TRACE_HEADER: [&str; 5] = ["iter", "phase", "loss_d", "loss_g", "w_estimate"];
pub const HISTOGRAM_HEADER: [&str; 5] = ["metric", "bin_left", "bin_right", "count_real", "count_generated"];
pub const ELASTIC_NAMES: [&str; 10] = ["E", "nu", "E_y", "anisotropy", "C11", "C12", "C13", "C22", "C23", "C33"];

/// Rows of named per-sample values, keyed by a sample id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricTable {
    pub names: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl MetricTable {
    pub fn new(names: &[&str]) -> Self {
        Self { names: names.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn minkowski(ids: &[String], triples: &[MinkowskiTriple]) -> Self {
        let mut t = Self::new(&MinkowskiTriple::NAMES);
        t.rows = ids.iter().zip(triples).map(|(id, m)| (id.clone(), m.values().to_vec())).collect();
        t
    }

    pub fn elastic(ids: &[String], results: &[EffectiveElasticity]) -> Self {
        let mut t = Self::new(&ELASTIC_NAMES);
        t.rows = ids
            .iter()
            .zip(results)
            .map(|(id, r)| {
                let c = &r.c_eff;
                (id.clone(), vec![r.e, r.nu, r.e_y, r.anisotropy, c[0][0], c[0][1], c[0][2], c[1][1], c[1][2], c[2][2]])
            })
            .collect();
        t
    }

    /// Values of one metric in row order.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|(_, v)| v[j]).collect())
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = std::iter::once("id").chain(self.names.iter().map(String::as_str));
        w.write_record(header).expect("in-memory write");
        for (id, vals) in &self.rows {
            let rec = std::iter::once(id.clone()).chain(vals.iter().map(|v| v.to_string()));
            w.write_record(rec).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self, String> {
        let mut r = csv::Reader::from_reader(bytes);
        let header = r.headers().map_err(|e| e.to_string())?.clone();
        if header.get(0) != Some("id") {
            return Err("first column must be id".into());
        }
        let mut t = Self { names: header.iter().skip(1).map(String::from).collect(), rows: Vec::new() };
        for rec in r.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            let vals = rec
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>().map_err(|_| format!("bad number {v:?}")))
                .collect::<Result<Vec<_>, _>>()?;
            t.rows.push((rec.get(0).unwrap_or_default().to_string(), vals));
        }
        Ok(t)
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        write_atomic(path, &self.to_csv())
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        let bytes = crate::io::read_bytes(path)?;
        Self::from_csv(&bytes).map_err(|m| crate::io::malformed(path, m))
    }
}

pub fn trace_to_csv(rows: &[TraceRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRACE_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.iter.to_string(),
            r.phase.to_string(),
            r.loss_d.to_string(),
            r.loss_g.to_string(),
            r.w_estimate.to_string(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn trace_from_csv(bytes: &[u8]) -> Result<Vec<TraceRow>, String> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(|e| e.to_string())?;
    if header.iter().ne(TRACE_HEADER) {
        return Err(format!("unexpected loss trace header {header:?}"));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let f = |i: usize| rec.get(i).unwrap_or_default();
        let bad = |i: usize| format!("bad {} value {:?}", TRACE_HEADER[i], f(i));
        out.push(TraceRow {
            iter: f(0).parse().map_err(|_| bad(0))?,
            phase: f(1).parse().map_err(|_| bad(1))?,
            loss_d: f(2).parse().map_err(|_| bad(2))?,
            loss_g: f(3).parse().map_err(|_| bad(3))?,
            w_estimate: f(4).parse().map_err(|_| bad(4))?,
        });
    }
    Ok(out)
}

pub fn histograms_to_csv(report: &BTreeMap<String, Comparison>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HISTOGRAM_HEADER).expect("in-memory write");
    for (name, c) in report {
        for b in &c.histogram {
            w.write_record([
                name.clone(),
                b.left.to_string(),
                b.right.to_string(),
                b.count_real.to_string(),
                b.count_generated.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    w.into_inner().expect("in-memory flush")
}

pub fn stats_json(s: &Stats) -> Value {
    json!({ "mean": s.mean, "std": s.std, "n": s.n() })
}

/// `{metric: {real: {mean, std, n}, generated: {...}, delta, relative_delta}}`
pub fn comparison_json(report: &BTreeMap<String, Comparison>) -> Value {
    let map = report
        .iter()
        .map(|(name, c)| {
            (
                name.clone(),
                json!({
                    "real": stats_json(&c.real),
                    "generated": stats_json(&c.generated),
                    "delta": c.delta,
                    "relative_delta": c.relative_delta,
                }),
            )
        })
        .collect::<serde_json::Map<_, _>>();
    Value::Object(map)
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes(v: &Value) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("JSON values always serialize");
    out.push(b'\n');
    out
}
