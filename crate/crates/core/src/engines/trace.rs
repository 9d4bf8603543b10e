use serde::Serialize;

use crate::problem::BlockVector;
use crate::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIterReached,
    Diverged,
}

impl Status {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Converged => 0,
            Status::MaxIterReached => 2,
            Status::Diverged => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_metric: f64,
    /// Wall time of each block update in milliseconds; empty unless timing is recorded.
    pub block_ms: Vec<f64>,
}

impl IterationRecord {
    fn bitwise_eq(&self, other: &Self) -> bool {
        let same = |a: f64, b: f64| a.to_bits() == b.to_bits();
        self.k == other.k
            && same(self.objective, other.objective)
            && same(self.primal_residual, other.primal_residual)
            && same(self.dual_metric, other.dual_metric)
            && self.block_ms.len() == other.block_ms.len()
            && self.block_ms.iter().zip(&other.block_ms).all(|(a, b)| same(*a, *b))
    }
}

#[derive(Serialize)]
struct CsvRow {
    k: usize,
    objective: f64,
    primal_residual: f64,
    dual_metric: f64,
    block_ms: f64,
}

/// Append-only per-iteration log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    records: Vec<IterationRecord>,
}

impl IterationTrace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a record. Panics if `k` does not continue the sequence `0, 1, 2, ...`.
    pub fn push(&mut self, record: IterationRecord) {
        assert_eq!(record.k, self.records.len(), "trace records must be appended in order");
        self.records.push(record);
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| a.bitwise_eq(b))
    }

    /// CSV with header `k,objective,primal_residual,dual_metric,block_ms`; the last column
    /// is the total block-update time of the iteration.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(CsvRow {
                k: r.k,
                objective: r.objective,
                primal_residual: r.primal_residual,
                dual_metric: r.dual_metric,
                block_ms: r.block_ms.iter().fold(0.0, |a, b| a + b),
            })
            .expect("in-memory CSV write");
        }
        if self.records.is_empty() {
            w.write_record(["k", "objective", "primal_residual", "dual_metric", "block_ms"])
                .expect("in-memory CSV write");
        }
        String::from_utf8(w.into_inner().expect("in-memory CSV flush")).expect("CSV is UTF-8")
    }
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub status: Status,
    pub iterations: usize,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_metric: f64,
    pub x: BlockVector,
    pub lambda: Vector,
}

/// Non-finite numbers become JSON strings so the report stays valid JSON.
fn json_number(v: f64) -> serde_json::Value {
    serde_json::Number::from_f64(v).map(serde_json::Value::Number).unwrap_or_else(|| v.to_string().into())
}

fn json_vector(v: &Vector) -> serde_json::Value {
    v.iter().map(|x| json_number(*x)).collect()
}

impl ConvergenceReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "status": self.status,
            "iterations": self.iterations,
            "objective": json_number(self.objective),
            "primal_residual": json_number(self.primal_residual),
            "dual_metric": json_number(self.dual_metric),
            "x": self.x.segments().iter().map(json_vector).collect::<Vec<_>>(),
            "lambda": json_vector(&self.lambda),
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: IterationTrace,
    pub report: ConvergenceReport,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(k: usize, r: f64) -> IterationRecord {
        IterationRecord { k, objective: 1.5, primal_residual: r, dual_metric: 0.25, block_ms: vec![] }
    }

    #[test]
    fn csv_has_the_documented_header() {
        let mut t = IterationTrace::new();
        t.push(record(0, 2.0));
        t.push(record(1, 0.5));
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "k,objective,primal_residual,dual_metric,block_ms");
        assert_eq!(lines[1], "0,1.5,2.0,0.25,0.0");
        assert_eq!(lines.len(), 3);
        assert_eq!(IterationTrace::new().to_csv().trim(), "k,objective,primal_residual,dual_metric,block_ms");
    }

    #[test]
    #[should_panic]
    fn records_must_be_consecutive() {
        let mut t = IterationTrace::new();
        t.push(record(1, 1.0));
    }

    #[test]
    fn bitwise_comparison_distinguishes_signed_zero() {
        let mut a = IterationTrace::new();
        let mut b = IterationTrace::new();
        a.push(record(0, 0.0));
        b.push(record(0, -0.0));
        assert_eq!(a, b);
        assert!(!a.bitwise_eq(&b));
        assert!(a.bitwise_eq(&a.clone()));
    }

    #[test]
    fn report_json_survives_infinities() {
        let rep = ConvergenceReport {
            status: Status::Diverged,
            iterations: 3,
            objective: f64::INFINITY,
            primal_residual: f64::NAN,
            dual_metric: 1.0,
            x: BlockVector::from_slices(&[&[1.0]]),
            lambda: Vector::zeros(1),
        };
        let v = rep.to_json();
        assert_eq!(v["status"], "diverged");
        assert_eq!(v["objective"], "inf");
        serde_json::to_string(&v).unwrap();
    }
}
