//! Sample cache: a CSV file of simulated designs with a checksum trailer.
//!
//! ```text
//! # fourbar-opt samples
//! # format_version=1
//! # sim_version=...
//! # fingerprint=<sha256 of the inputs that determine the samples>
//! # plan=<json>                      (training sets only)
//! line,step,oa,bc,ab,t_rms,t_max,reason
//! 0,0,31,257.859,72.705,0.72,1.9,
//! ...
//! # sha256=<digest of every byte above this line>
//! ```
//!
//! Floats are written in shortest round-trip form, so a reloaded cache is bit
//! for bit what was simulated.

use crate::motion::{InfeasibleReason, ObjectiveSample};
use crate::sparse::SamplingPlan;
use crate::Vec3;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const CACHE_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "# fourbar-opt samples";
const COLUMNS: &str = "line,step,oa,bc,ab,t_rms,t_max,reason";

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: checksum mismatch, the file was modified or truncated")]
    Checksum { path: PathBuf },
    #[error("{path}: line {line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRow {
    pub line: usize,
    pub step: usize,
    pub design: Vec3,
    pub sample: ObjectiveSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleCache {
    pub sim_version: String,
    pub fingerprint: String,
    pub plan: Option<SamplingPlan>,
    pub rows: Vec<SampleRow>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl SampleCache {
    /// Whether this cache was produced from the given inputs.
    pub fn matches(&self, sim_version: &str, fingerprint: &str) -> bool {
        self.sim_version == sim_version && self.fingerprint == fingerprint
    }

    /// Rows of one line in step order.
    pub fn line(&self, line: usize) -> impl Iterator<Item = &SampleRow> {
        self.rows.iter().filter(move |r| r.line == line)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "# format_version={CACHE_FORMAT_VERSION}");
        let _ = writeln!(out, "# sim_version={}", self.sim_version);
        let _ = writeln!(out, "# fingerprint={}", self.fingerprint);
        if let Some(plan) = &self.plan {
            let json = serde_json::to_string(plan).expect("plan serializes");
            let _ = writeln!(out, "# plan={json}");
        }
        let _ = writeln!(out, "{COLUMNS}");
        for r in &self.rows {
            let (t_rms, t_max, reason) = match r.sample {
                ObjectiveSample::Value { t_rms, t_max } => {
                    (t_rms.to_string(), t_max.to_string(), "")
                }
                ObjectiveSample::Infeasible { reason } => {
                    (String::new(), String::new(), reason.as_str())
                }
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{t_rms},{t_max},{reason}",
                r.line, r.step, r.design.x, r.design.y, r.design.z
            );
        }
        let digest = sha256_hex(out.as_bytes());
        let _ = writeln!(out, "# sha256={digest}");
        out
    }

    /// Write through a temporary file so readers never see a partial cache.
    pub fn write(&self, path: &Path) -> Result<(), CacheError> {
        write_atomic(path, self.to_csv().as_bytes()).map_err(|source| CacheError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, CacheError> {
        let text = std::fs::read_to_string(path).map_err(|source| CacheError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, CacheError> {
        let format = |line: usize, message: String| CacheError::Format {
            path: path.to_path_buf(),
            line,
            message,
        };
        let body_end = text
            .trim_end_matches('\n')
            .rfind('\n')
            .map(|i| i + 1)
            .ok_or(CacheError::Checksum {
                path: path.to_path_buf(),
            })?;
        let (body, trailer) = text.split_at(body_end);
        let digest = trailer.trim_end().strip_prefix("# sha256=");
        if digest != Some(sha256_hex(body.as_bytes()).as_str()) {
            return Err(CacheError::Checksum {
                path: path.to_path_buf(),
            });
        }

        let mut lines = body.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, MAGIC)) => {}
            _ => return Err(format(1, "not a sample cache".into())),
        }
        let mut sim_version = None;
        let mut fingerprint = None;
        let mut plan = None;
        let mut rows = Vec::new();
        let mut in_data = false;
        for (no, line) in lines {
            if !in_data {
                if line == COLUMNS {
                    in_data = true;
                    continue;
                }
                let Some((key, value)) = line.strip_prefix("# ").and_then(|l| l.split_once('='))
                else {
                    return Err(format(no, format!("unexpected header line {line:?}")));
                };
                match key {
                    "format_version" => {
                        if value != CACHE_FORMAT_VERSION.to_string() {
                            return Err(format(no, format!("unsupported format_version {value}")));
                        }
                    }
                    "sim_version" => sim_version = Some(value.to_string()),
                    "fingerprint" => fingerprint = Some(value.to_string()),
                    "plan" => {
                        plan = Some(
                            serde_json::from_str(value)
                                .map_err(|e| format(no, format!("bad plan: {e}")))?,
                        )
                    }
                    _ => return Err(format(no, format!("unknown header key {key:?}"))),
                }
                continue;
            }
            rows.push(parse_row(line).map_err(|m| format(no, m))?);
        }
        if !in_data {
            return Err(format(0, "missing column header".into()));
        }
        Ok(Self {
            sim_version: sim_version.ok_or_else(|| format(0, "missing sim_version".into()))?,
            fingerprint: fingerprint.ok_or_else(|| format(0, "missing fingerprint".into()))?,
            plan,
            rows,
        })
    }
}

fn parse_row(line: &str) -> Result<SampleRow, String> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 8 {
        return Err(format!("expected 8 fields, found {}", fields.len()));
    }
    let int = |s: &str| s.parse::<usize>().map_err(|e| format!("{s:?}: {e}"));
    let float = |s: &str| s.parse::<f64>().map_err(|e| format!("{s:?}: {e}"));
    let design = Vec3::new(float(fields[2])?, float(fields[3])?, float(fields[4])?);
    let sample = if fields[7].is_empty() {
        ObjectiveSample::Value {
            t_rms: float(fields[5])?,
            t_max: float(fields[6])?,
        }
    } else {
        let reason = InfeasibleReason::parse(fields[7])
            .ok_or_else(|| format!("unknown reason {:?}", fields[7]))?;
        ObjectiveSample::Infeasible { reason }
    };
    Ok(SampleRow {
        line: int(fields[0])?,
        step: int(fields[1])?,
        design,
        sample,
    })
}

/// Write `bytes` to a sibling temporary file, then rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}
