use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw speed readings, one row per timestep, one column per monitoring station.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpeedMatrix {
    /// `(timestep, station)` matrix in the dataset's native speed units.
    pub values: Array2<f64>,
    /// Sampling interval between consecutive rows; 5 minutes for PeMS data.
    pub interval_minutes: u32,
}

impl SpeedMatrix {
    pub fn new(values: Array2<f64>, interval_minutes: u32) -> Result<Self> {
        if values.ncols() == 0 || values.nrows() == 0 {
            return Err(Error::EmptyInput("speed matrix has no entries".into()));
        }
        if interval_minutes == 0 {
            return Err(Error::Config("interval_minutes must be positive".into()));
        }
        Ok(SpeedMatrix {
            values,
            interval_minutes,
        })
    }

    pub fn n_timesteps(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_stations(&self) -> usize {
        self.values.ncols()
    }

    /// Replaces missing readings (zeros or NaN) by linear interpolation along
    /// time, per station. Leading/trailing gaps take the nearest valid value.
    /// A station with no valid reading at all is an error.
    pub fn clean(&mut self) -> Result<()> {
        let (t, n) = self.values.dim();
        for s in 0..n {
            let mut col: Vec<f64> = (0..t).map(|i| self.values[[i, s]]).collect();
            let valid: Vec<usize> = (0..t)
                .filter(|&i| col[i].is_finite() && col[i] != 0.0)
                .collect();
            if valid.is_empty() {
                return Err(Error::Validation(format!(
                    "station {s} has no valid readings to interpolate from"
                )));
            }
            let mut prev: Option<usize> = None;
            let mut next_iter = valid.iter().copied().peekable();
            for i in 0..t {
                while let Some(&v) = next_iter.peek() {
                    if v < i {
                        prev = Some(v);
                        next_iter.next();
                    } else {
                        break;
                    }
                }
                if col[i].is_finite() && col[i] != 0.0 {
                    continue;
                }
                let next = next_iter.peek().copied();
                col[i] = match (prev, next) {
                    (Some(p), Some(q)) => {
                        let w = (i - p) as f64 / (q - p) as f64;
                        col[p] * (1.0 - w) + col[q] * w
                    }
                    (Some(p), None) => col[p],
                    (None, Some(q)) => col[q],
                    (None, None) => unreachable!("valid is non-empty"),
                };
            }
            for i in 0..t {
                self.values[[i, s]] = col[i];
            }
        }
        Ok(())
    }
}

/// Parses a rectangular numeric CSV into a speed matrix
/// (rows = timesteps, columns = stations).
pub fn load_speed_csv(
    path: impl AsRef<Path>,
    delimiter: char,
    has_header: bool,
    interval_minutes: u32,
) -> Result<SpeedMatrix> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_speed_csv(&text, delimiter, has_header, interval_minutes, path)
}

fn parse_speed_csv(
    text: &str,
    delimiter: char,
    has_header: bool,
    interval_minutes: u32,
    path: &Path,
) -> Result<SpeedMatrix> {
    let name = path.display().to_string();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if has_header && idx == 0 {
            continue;
        }
        let mut row = Vec::new();
        for (col, cell) in line.split(delimiter).enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::BadCell {
                path: name.clone(),
                row: idx,
                col,
                message: format!("non-numeric cell `{}`", cell.trim()),
            })?;
            row.push(v);
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::RaggedRows {
                    path: name,
                    row: idx,
                    expected: w,
                    found: row.len(),
                })
            }
            _ => {}
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput(name));
    }
    let n = width.unwrap();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let values = Array2::from_shape_vec((flat.len() / n, n), flat)
        .map_err(|e| Error::Shape(e.to_string()))?;
    SpeedMatrix::new(values, interval_minutes)
}
