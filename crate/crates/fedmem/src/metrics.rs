//! Experiment metrics: a flat record type, canonical ordering, uniqueness
//! checks, and strict CSV persistence. Missing values (an absent class in a
//! per-class accuracy, for example) are written as the literal sentinel
//! `absent` and surface as NaN in memory.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "run_id,seed,round,strategy,client_id,split,metric,value";
pub const ABSENT: &str = "absent";

/// Row owner: the server-side global model or one client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ClientId {
    /// Sorts before every client so server rows lead each round block.
    Global,
    Client(usize),
}

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClientId::Global => write!(f, "global"),
            ClientId::Client(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for ClientId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "global" {
            Ok(ClientId::Global)
        } else {
            s.parse::<usize>()
                .map(ClientId::Client)
                .map_err(|_| Error::Schema(format!("client_id {s:?} is neither a number nor \"global\"")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Schema(format!("split {other:?} must be train or test"))),
        }
    }
}

/// One scalar observation of one model at one point of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub run_id: String,
    pub seed: u64,
    pub round: usize,
    pub strategy: String,
    pub client_id: ClientId,
    pub split: Split,
    pub metric: String,
    /// NaN means "absent" and is serialized as the sentinel.
    pub value: f64,
}

impl MetricsRecord {
    fn sort_key(&self) -> (String, usize, ClientId, String, String, Split, u64) {
        (
            self.run_id.clone(),
            self.round,
            self.client_id,
            self.metric.clone(),
            self.strategy.clone(),
            self.split,
            self.seed,
        )
    }

    fn unique_key(&self) -> (String, u64, usize, String, ClientId, Split, String) {
        (
            self.run_id.clone(),
            self.seed,
            self.round,
            self.strategy.clone(),
            self.client_id,
            self.split,
            self.metric.clone(),
        )
    }

    fn to_csv_line(&self) -> String {
        let value = if self.value.is_nan() {
            ABSENT.to_string()
        } else {
            format!("{}", self.value)
        };
        format!(
            "{},{},{},{},{},{},{},{}",
            self.run_id,
            self.seed,
            self.round,
            self.strategy,
            self.client_id,
            self.split,
            self.metric,
            value
        )
    }
}

/// Sort records into the canonical order used for all CSV output:
/// `(run_id, round, client_id, metric)` first, then the remaining fields
/// to make the order total.
pub fn sort_canonical(records: &mut [MetricsRecord]) {
    records.sort_by_key(MetricsRecord::sort_key);
}

/// Error on any duplicated `(run_id, seed, round, strategy, client_id,
/// split, metric)` key.
pub fn check_unique(records: &[MetricsRecord]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for r in records {
        if !seen.insert(r.unique_key()) {
            return Err(Error::Schema(format!(
                "duplicate metrics key: run {} round {} strategy {} client {} metric {}",
                r.run_id, r.round, r.strategy, r.client_id, r.metric
            )));
        }
    }
    Ok(())
}

/// Write records in canonical order. Non-finite, non-NaN values are
/// rejected; NaN becomes the `absent` sentinel.
pub fn write_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    check_unique(records)?;
    for r in records {
        if r.value.is_infinite() {
            return Err(Error::Numeric(format!(
                "non-finite metric value for {} / {}",
                r.run_id, r.metric
            )));
        }
        if r.metric.contains(',') || r.run_id.contains(',') || r.strategy.contains(',') {
            return Err(Error::Schema(format!(
                "metric fields must not contain commas: {} / {}",
                r.run_id, r.metric
            )));
        }
    }
    let mut sorted = records.to_vec();
    sort_canonical(&mut sorted);
    let mut out = String::with_capacity(sorted.len() * 64 + CSV_HEADER.len() + 1);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &sorted {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a metrics CSV, validating the header and every field strictly.
pub fn read_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        Some((_, header)) => {
            return Err(Error::Schema(format!(
                "unexpected header {header:?}, want {CSV_HEADER:?}"
            )))
        }
        None => return Err(Error::Schema("empty metrics file".into())),
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Schema(format!(
                "line {lineno}: expected 8 fields, got {}",
                fields.len()
            )));
        }
        let parse_err = |what: &str, val: &str| {
            Error::Schema(format!("line {lineno}: bad {what} {val:?}"))
        };
        let value = if fields[7] == ABSENT {
            f64::NAN
        } else {
            let v: f64 = fields[7].parse().map_err(|_| parse_err("value", fields[7]))?;
            if !v.is_finite() {
                return Err(parse_err("value", fields[7]));
            }
            v
        };
        records.push(MetricsRecord {
            run_id: fields[0].to_string(),
            seed: fields[1].parse().map_err(|_| parse_err("seed", fields[1]))?,
            round: fields[2].parse().map_err(|_| parse_err("round", fields[2]))?,
            strategy: fields[3].to_string(),
            client_id: fields[4].parse()?,
            split: fields[5].parse()?,
            metric: fields[6].to_string(),
            value,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(round: usize, client: ClientId, metric: &str, value: f64) -> MetricsRecord {
        MetricsRecord {
            run_id: "cfgdeadbeef-s1".into(),
            seed: 1,
            round,
            strategy: "fedavg".into(),
            client_id: client,
            split: Split::Test,
            metric: metric.into(),
            value,
        }
    }

    #[test]
    fn round_trip_preserves_records_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let records = vec![
            rec(1, ClientId::Client(2), "accuracy", 0.5),
            rec(0, ClientId::Global, "accuracy", 0.25),
            rec(0, ClientId::Client(0), "per_class_accuracy:3", f64::NAN),
        ];
        write_csv(&path, &records).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back.len(), 3);
        // Canonical order: round 0 global, round 0 client 0, round 1 client 2.
        assert_eq!(back[0].client_id, ClientId::Global);
        assert_eq!(back[1].client_id, ClientId::Client(0));
        assert!(back[1].value.is_nan(), "absent sentinel surfaces as NaN");
        assert_eq!(back[2].round, 1);
        assert_eq!(back[2].value, 0.5);

        // Byte-identical on rewrite regardless of input order.
        let bytes_a = std::fs::read(&path).unwrap();
        let mut shuffled = vec![records[2].clone(), records[0].clone(), records[1].clone()];
        sort_canonical(&mut shuffled);
        let path_b = dir.path().join("m2.csv");
        write_csv(&path_b, &shuffled).unwrap();
        assert_eq!(bytes_a, std::fs::read(&path_b).unwrap());
    }

    #[test]
    fn duplicates_and_bad_inputs_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let twice = vec![
            rec(0, ClientId::Global, "accuracy", 0.5),
            rec(0, ClientId::Global, "accuracy", 0.6),
        ];
        assert!(matches!(write_csv(&path, &twice), Err(Error::Schema(_))));
        let inf = vec![rec(0, ClientId::Global, "accuracy", f64::INFINITY)];
        assert!(write_csv(&path, &inf).is_err());

        std::fs::write(&path, "wrong,header\n").unwrap();
        assert!(matches!(read_csv(&path), Err(Error::Schema(_))));
        std::fs::write(&path, format!("{CSV_HEADER}\nx,1,0,fedavg,global,test,accuracy\n"))
            .unwrap();
        assert!(matches!(read_csv(&path), Err(Error::Schema(_))));
        std::fs::write(
            &path,
            format!("{CSV_HEADER}\nx,1,0,fedavg,nobody,test,accuracy,0.5\n"),
        )
        .unwrap();
        assert!(matches!(read_csv(&path), Err(Error::Schema(_))));
        std::fs::write(
            &path,
            format!("{CSV_HEADER}\nx,1,0,fedavg,global,dev,accuracy,0.5\n"),
        )
        .unwrap();
        assert!(matches!(read_csv(&path), Err(Error::Schema(_))));
    }

    #[test]
    fn value_formatting_survives_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let v = 0.123456789012345678;
        write_csv(&path, &[rec(0, ClientId::Global, "accuracy", v)]).unwrap();
        let back = read_csv(&path).unwrap();
        // Rust's shortest-round-trip float formatting guarantees equality.
        assert_eq!(back[0].value, v);
    }
}
