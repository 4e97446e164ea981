//! Pose files.
//!
//! JSON: `{"rate_hz": 8.0, "dim": 8, "persons": {"agent_side": [[..]], "partner_side": [[..]]}}`.
//! CSV: header `t,person,v0,..,v{d-1}` then one row per frame and person.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PoseSequence, PoseVector, Recording, Side};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFile {
    pub rate_hz: f64,
    pub dim: usize,
    pub persons: BTreeMap<Side, Vec<Vec<f64>>>,
}

impl PoseFile {
    pub fn from_sequences<T: Real>(seqs: &[&PoseSequence<T>]) -> Result<Self> {
        let first = seqs.first().ok_or_else(|| Error::Format("no sequences".into()))?;
        let mut persons = BTreeMap::new();
        for s in seqs {
            if s.rate_hz != first.rate_hz || s.dim() != first.dim() {
                return Err(Error::Format("sequences disagree on rate or dim".into()));
            }
            persons.insert(
                s.person,
                s.frames.iter().map(|f| f.iter().map(|v| v.as_f64()).collect()).collect(),
            );
        }
        Ok(PoseFile {
            rate_hz: first.rate_hz.as_f64(),
            dim: first.dim(),
            persons,
        })
    }

    pub fn from_recording<T: Real>(rec: &Recording<T>) -> Result<Self> {
        Self::from_sequences(&[&rec.agent, &rec.partner])
    }

    pub fn sequence<T: Real>(&self, side: Side) -> Result<PoseSequence<T>> {
        let frames = self
            .persons
            .get(&side)
            .ok_or_else(|| Error::Format(format!("pose file has no {side:?} stream")))?;
        if let Some(i) = frames.iter().position(|f| f.len() != self.dim) {
            return Err(Error::Format(format!(
                "{side:?} frame {i} has {} values, header says dim {}",
                frames[i].len(),
                self.dim
            )));
        }
        PoseSequence::new(
            frames
                .iter()
                .map(|f| PoseVector(f.iter().map(|&v| T::c(v)).collect()))
                .collect(),
            T::c(self.rate_hz),
            side,
        )
        .map_err(|e| Error::Format(e.to_string()))
    }

    pub fn recording<T: Real>(&self) -> Result<Recording<T>> {
        Recording::new(self.sequence(Side::AgentSide)?, self.sequence(Side::PartnerSide)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,person");
        for k in 0..self.dim {
            write!(out, ",v{k}").unwrap();
        }
        out.push('\n');
        for (side, frames) in &self.persons {
            let name = side_name(*side);
            for (i, f) in frames.iter().enumerate() {
                write!(out, "{},{name}", i as f64 / self.rate_hz).unwrap();
                for v in f {
                    write!(out, ",{v}").unwrap();
                }
                out.push('\n');
            }
        }
        out
    }

    /// Parses the CSV form; the rate is inferred from the first two timestamps.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Format("empty csv".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 3 || cols[0] != "t" || cols[1] != "person" {
            return Err(Error::Format("csv header must start with t,person".into()));
        }
        let dim = cols.len() - 2;
        let mut persons: BTreeMap<Side, Vec<Vec<f64>>> = BTreeMap::new();
        let mut times: BTreeMap<Side, Vec<f64>> = BTreeMap::new();
        for (n, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(Error::Format(format!("csv row {} has {} fields", n + 2, fields.len())));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Format(format!("csv row {}: {e}", n + 2)))
            };
            let side = parse_side(fields[1])?;
            times.entry(side).or_default().push(parse(fields[0])?);
            persons
                .entry(side)
                .or_default()
                .push(fields[2..].iter().map(|s| parse(s)).collect::<Result<_>>()?);
        }
        let ts = times
            .values()
            .find(|t| t.len() >= 2)
            .ok_or_else(|| Error::Format("csv needs two frames to infer the rate".into()))?;
        let dt = ts[1] - ts[0];
        if !(dt > 0.0) {
            return Err(Error::Format("csv timestamps must increase".into()));
        }
        Ok(PoseFile {
            rate_hz: 1.0 / dt,
            dim,
            persons,
        })
    }

    /// Loads JSON or CSV, chosen by extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            Self::from_csv(&text)
        } else {
            Self::from_json(&text)
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            self.to_csv()
        } else {
            self.to_json()?
        };
        std::fs::write(path, text)?;
        Ok(())
    }
}

fn side_name(side: Side) -> &'static str {
    match side {
        Side::AgentSide => "agent_side",
        Side::PartnerSide => "partner_side",
    }
}

fn parse_side(s: &str) -> Result<Side> {
    match s {
        "agent_side" => Ok(Side::AgentSide),
        "partner_side" => Ok(Side::PartnerSide),
        other => Err(Error::Format(format!("unknown person {other:?}"))),
    }
}
