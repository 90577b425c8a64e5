//! Flat experiment records and their CSV form.
//!
//! One row per measured quantity: which experiment, a small JSON fragment
//! identifying the point in parameter space, the value, a confidence
//! interval, and the seed that produced it. Values are written with 17
//! significant digits so the CSV round-trips f64 exactly.

use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub experiment: String,
    /// JSON fragment locating the row, e.g. {"t":0.5,"epsilon":0.2}.
    pub param: String,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    rows: Vec<Row>,
}

impl Report {
    pub fn new() -> Self {
        Report::default()
    }

    pub fn push(&mut self, row: Row) {
        self.rows.push(row);
    }

    /// Convenience for the common symmetric-interval case.
    pub fn record(
        &mut self,
        experiment: &str,
        param: String,
        value: f64,
        half_width: f64,
        seed: u64,
    ) {
        self.rows.push(Row {
            experiment: experiment.to_string(),
            param,
            value,
            ci_low: value - half_width,
            ci_high: value + half_width,
            seed,
        });
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn extend(&mut self, other: Report) {
        self.rows.extend(other.rows);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("experiment,param,value,ci_low,ci_high,seed\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.16e},{:.16e},{:.16e},{}\n",
                quote(&r.experiment),
                quote(&r.param),
                r.value,
                r.ci_low,
                r.ci_high,
                r.seed
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    pub fn parse_csv(text: &str) -> Result<Report> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::config("empty report"))?;
        if header != "experiment,param,value,ci_low,ci_high,seed" {
            return Err(Error::config(format!("unexpected report header: {header}")));
        }
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields = split_line(line)
                .ok_or_else(|| Error::config(format!("bad quoting on report line {}", k + 2)))?;
            if fields.len() != 6 {
                return Err(Error::config(format!(
                    "report line {} has {} fields, want 6",
                    k + 2,
                    fields.len()
                )));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::config(format!("bad number {s:?} on line {}", k + 2)))
            };
            rows.push(Row {
                experiment: fields[0].clone(),
                param: fields[1].clone(),
                value: num(&fields[2])?,
                ci_low: num(&fields[3])?,
                ci_high: num(&fields[4])?,
                seed: fields[5].parse().map_err(|_| {
                    Error::config(format!("bad seed {:?} on line {}", fields[5], k + 2))
                })?,
            });
        }
        Ok(Report { rows })
    }

    pub fn read_csv(path: &Path) -> Result<Report> {
        let text = std::fs::read_to_string(path)?;
        Report::parse_csv(&text)
    }
}

/// RFC-4180 quoting: wrap when the field contains a comma, quote or newline,
/// doubling interior quotes.
fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn split_line(line: &str) -> Option<Vec<String>> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut chars = line.chars().peekable();
    let mut quoted = false;
    loop {
        match chars.next() {
            None => {
                if quoted {
                    return None;
                }
                fields.push(cur);
                return Some(fields);
            }
            Some('"') if quoted => {
                if chars.peek() == Some(&'"') {
                    chars.next();
                    cur.push('"');
                } else {
                    quoted = false;
                }
            }
            Some('"') if cur.is_empty() && !quoted => quoted = true,
            Some(',') if !quoted => {
                fields.push(std::mem::take(&mut cur));
            }
            Some(c) => cur.push(c),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trips_exactly() {
        let mut report = Report::new();
        report.record(
            "oracle-compare",
            r#"{"t":0.5,"x":[0.1,-0.2],"quantity":"gap"}"#.to_string(),
            1.0 / 3.0,
            1.25e-4,
            42,
        );
        report.push(Row {
            experiment: "max-principle".to_string(),
            param: r#"{"note":"has \"quotes\" and, commas"}"#.to_string(),
            value: -2.5e-301,
            ci_low: f64::MIN_POSITIVE,
            ci_high: 1e300,
            seed: 0,
        });
        let text = report.to_csv();
        let back = Report::parse_csv(&text).unwrap();
        assert_eq!(back.rows(), report.rows());
    }

    #[test]
    fn bad_headers_and_quoting_are_rejected() {
        assert!(Report::parse_csv("nope\n").is_err());
        assert!(Report::parse_csv(
            "experiment,param,value,ci_low,ci_high,seed\na,\"unterminated,1,2,3,4\n"
        )
        .is_err());
    }
}
