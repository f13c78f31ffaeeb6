//! Line-oriented structured text used for model files.
//!
//! The first line is `<magic> <version>`. Every following non-empty line is
//! one named record:
//!
//! ```text
//! text   case case1
//! scalar thickness_mm 2.0000000000000000e0
//! vector scaler.means 3 1.0e0 2.0e0 3.0e0
//! matrix pca.components 2 3 <6 values, row-major>
//! ```
//!
//! Numbers are written with 17 significant digits so they parse back to the
//! identical `f64`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct RecordWriter {
    out: String,
}

impl RecordWriter {
    pub fn new(magic: &str, version: u32) -> Self {
        Self {
            out: format!("{magic} {version}\n"),
        }
    }

    fn check_name(name: &str) {
        assert!(
            !name.is_empty() && !name.contains(char::is_whitespace),
            "record names must be non-empty without whitespace: {name:?}"
        );
    }

    pub fn text(&mut self, name: &str, value: &str) -> &mut Self {
        Self::check_name(name);
        assert!(!value.contains('\n'), "text records are single-line");
        let _ = writeln!(self.out, "text {name} {value}");
        self
    }

    pub fn scalar(&mut self, name: &str, value: f64) -> &mut Self {
        Self::check_name(name);
        let _ = writeln!(self.out, "scalar {name} {value:.16e}");
        self
    }

    pub fn vector(&mut self, name: &str, values: &[f64]) -> &mut Self {
        Self::check_name(name);
        let _ = write!(self.out, "vector {name} {}", values.len());
        for v in values {
            let _ = write!(self.out, " {v:.16e}");
        }
        self.out.push('\n');
        self
    }

    pub fn matrix(&mut self, name: &str, m: &Array2<f64>) -> &mut Self {
        Self::check_name(name);
        let _ = write!(self.out, "matrix {name} {} {}", m.nrows(), m.ncols());
        for v in m.iter() {
            let _ = write!(self.out, " {v:.16e}");
        }
        self.out.push('\n');
        self
    }

    pub fn finish(self) -> String {
        self.out
    }
}

#[derive(Debug, Clone)]
enum Value {
    Text(String),
    Numbers { dims: Vec<usize>, data: Vec<f64> },
}

#[derive(Debug)]
pub struct RecordReader {
    path: PathBuf,
    pub version: u32,
    records: HashMap<String, (u64, Value)>,
}

impl RecordReader {
    pub fn parse(text: &str, magic: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i as u64 + 1, l));
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "empty file"))?;
        let version = match first.split_once(' ') {
            Some((m, v)) if m == magic => v
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, 1, format!("bad version {v:?}")))?,
            _ => {
                return Err(Error::parse(
                    path,
                    1,
                    format!("expected header '{magic} <version>'"),
                ))
            }
        };
        let mut records = HashMap::new();
        for (line, l) in lines {
            if l.trim().is_empty() {
                continue;
            }
            let err = |m: String| Error::parse(path, line, m);
            let (kind, rest) = l.split_once(' ').ok_or_else(|| err("missing record name".into()))?;
            let (name, body) = rest.split_once(' ').unwrap_or((rest, ""));
            let value = match kind {
                "text" => Value::Text(body.to_string()),
                "scalar" | "vector" | "matrix" => {
                    let rank = match kind {
                        "scalar" => 0,
                        "vector" => 1,
                        _ => 2,
                    };
                    let mut tokens = body.split_ascii_whitespace();
                    let mut dims = Vec::with_capacity(rank);
                    for _ in 0..rank {
                        let d = tokens
                            .next()
                            .and_then(|t| t.parse::<usize>().ok())
                            .ok_or_else(|| err(format!("{name}: missing or bad dimension")))?;
                        dims.push(d);
                    }
                    let data = tokens
                        .map(|t| t.parse::<f64>().map_err(|_| err(format!("{name}: not a number: {t:?}"))))
                        .collect::<Result<Vec<_>>>()?;
                    let expected: usize = dims.iter().product();
                    if data.len() != expected {
                        return Err(err(format!(
                            "{name}: expected {expected} values, found {}",
                            data.len()
                        )));
                    }
                    Value::Numbers { dims, data }
                }
                other => return Err(err(format!("unknown record kind {other:?}"))),
            };
            if records.insert(name.to_string(), (line, value)).is_some() {
                return Err(err(format!("duplicate record {name:?}")));
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            version,
            records,
        })
    }

    fn get(&self, name: &str) -> Result<&(u64, Value)> {
        self.records
            .get(name)
            .ok_or_else(|| Error::parse(&self.path, 0, format!("missing record {name:?}")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.records.contains_key(name)
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.get(name)? {
            (_, Value::Text(s)) => Ok(s),
            (line, _) => Err(Error::parse(&self.path, *line, format!("{name}: expected text"))),
        }
    }

    fn numbers(&self, name: &str, rank: usize) -> Result<(&[usize], &[f64])> {
        match self.get(name)? {
            (_, Value::Numbers { dims, data }) if dims.len() == rank => Ok((dims, data)),
            (line, _) => Err(Error::parse(
                &self.path,
                *line,
                format!("{name}: expected a rank-{rank} numeric record"),
            )),
        }
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        Ok(self.numbers(name, 0)?.1[0])
    }

    /// Scalar that must hold a non-negative integer.
    pub fn count(&self, name: &str) -> Result<u64> {
        let v = self.scalar(name)?;
        if v >= 0.0 && v.fract() == 0.0 && v < 2f64.powi(53) {
            Ok(v as u64)
        } else {
            let line = self.get(name)?.0;
            Err(Error::parse(&self.path, line, format!("{name}: expected a non-negative integer")))
        }
    }

    pub fn vector(&self, name: &str) -> Result<Array1<f64>> {
        Ok(Array1::from(self.numbers(name, 1)?.1.to_vec()))
    }

    pub fn matrix(&self, name: &str) -> Result<Array2<f64>> {
        let (dims, data) = self.numbers(name, 2)?;
        Ok(Array2::from_shape_vec((dims[0], dims[1]), data.to_vec()).expect("count checked"))
    }

    /// Parse error pointing at the record, for semantic checks by callers.
    pub fn error(&self, name: &str, message: impl Into<String>) -> Error {
        let line = self.records.get(name).map_or(0, |r| r.0);
        Error::parse(&self.path, line, message)
    }
}
