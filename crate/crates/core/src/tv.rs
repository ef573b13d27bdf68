//! Tract-variable trajectories and their canonical CSV interchange format.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Frame period shared by trajectories, spectrograms and cortical frames.
pub const FRAME_PERIOD: f64 = 0.010;

pub const N_TV: usize = 6;

/// Channel order is fixed: lip aperture, lip protrusion, tongue body
/// constriction location/degree, tongue tip constriction location/degree.
pub const TV_NAMES: [&str; N_TV] = ["LA", "LP", "TBCL", "TBCD", "TTCL", "TTCD"];

const TIME_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TvTrajectory {
    /// Row-major `frames × 6`.
    values: Vec<f64>,
}

impl TvTrajectory {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() % N_TV != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} values is not a multiple of {N_TV}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "non-finite value at frame {} channel {}",
                i / N_TV,
                TV_NAMES[i % N_TV]
            )));
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[[f64; N_TV]]) -> Result<Self> {
        Self::new(rows.iter().flatten().copied().collect())
    }

    pub fn empty() -> Self {
        Self { values: Vec::new() }
    }

    pub fn frame_period(&self) -> f64 {
        FRAME_PERIOD
    }

    pub fn n_frames(&self) -> usize {
        self.values.len() / N_TV
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * N_TV..(t + 1) * N_TV]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(N_TV)
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.values.iter().skip(c).step_by(N_TV).copied().collect()
    }

    pub fn set_channel(&mut self, c: usize, data: &[f64]) {
        assert_eq!(data.len(), self.n_frames());
        for (t, v) in data.iter().enumerate() {
            self.values[t * N_TV + c] = *v;
        }
    }

    pub fn truncate(&mut self, frames: usize) {
        self.values.truncate(frames * N_TV);
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        let mut header = vec!["time_s"];
        header.extend(TV_NAMES);
        wr.write_record(&header)?;
        for (t, row) in self.rows().enumerate() {
            let mut rec = Vec::with_capacity(N_TV + 1);
            rec.push(format!("{:.3}", t as f64 * FRAME_PERIOD));
            rec.extend(row.iter().map(|v| format!("{v}")));
            wr.write_record(&rec)?;
        }
        wr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header: Vec<String> = rd.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let expected: Vec<&str> = std::iter::once("time_s").chain(TV_NAMES).collect();
        if header != expected {
            return Err(Error::SchemaMismatch(format!(
                "expected header {}, found {}",
                expected.join(","),
                header.join(",")
            )));
        }
        let mut values = Vec::new();
        let mut prev_time: Option<f64> = None;
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            if rec.len() != N_TV + 1 {
                return Err(Error::SchemaMismatch(format!("row {i} has {} fields", rec.len())));
            }
            let parse = |s: &str| -> Result<f64> {
                let v: f64 = s
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidValue(format!("row {i}: cannot parse {s:?}")))?;
                if v.is_nan() {
                    return Err(Error::InvalidValue(format!("row {i}: NaN cell")));
                }
                Ok(v)
            };
            let time = parse(&rec[0])?;
            if let Some(p) = prev_time {
                if ((time - p) - FRAME_PERIOD).abs() > TIME_TOLERANCE {
                    return Err(Error::FramePeriodMismatch(format!(
                        "row {i}: step {:.6} s, expected {FRAME_PERIOD} s",
                        time - p
                    )));
                }
            }
            prev_time = Some(time);
            for field in rec.iter().skip(1) {
                values.push(parse(field)?);
            }
        }
        if values.is_empty() {
            return Err(Error::InvalidValue("trajectory has no rows".into()));
        }
        Self::new(values)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

pub fn load_tv_csv(path: &Path) -> Result<TvTrajectory> {
    TvTrajectory::load_csv(path)
}
