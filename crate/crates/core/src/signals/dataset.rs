use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Sampled multichannel input/output record with a fixed sampling interval.
///
/// Rows are samples; `u` is N × m, `y` is N × p.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    u: DMatrix<f64>,
    y: DMatrix<f64>,
    ts: f64,
    input_names: Vec<String>,
    output_names: Vec<String>,
}

fn default_names(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}{i}")).collect()
}

impl Dataset {
    pub fn new(u: DMatrix<f64>, y: DMatrix<f64>, ts: f64) -> Result<Self> {
        let (m, p) = (u.ncols(), y.ncols());
        Self::with_names(u, y, ts, default_names("u", m), default_names("y", p))
    }

    /// Channel names become CSV headers, so inputs must start with `u` and
    /// outputs with `y`.
    pub fn with_names(
        u: DMatrix<f64>,
        y: DMatrix<f64>,
        ts: f64,
        input_names: Vec<String>,
        output_names: Vec<String>,
    ) -> Result<Self> {
        if u.nrows() != y.nrows() {
            return Err(Error::dim("dataset output rows", u.nrows(), y.nrows()));
        }
        if u.nrows() == 0 {
            return Err(Error::InvalidArgument("dataset needs at least one sample".into()));
        }
        if !(ts > 0.0) || !ts.is_finite() {
            return Err(Error::InvalidArgument(format!("sampling interval must be > 0, got {ts}")));
        }
        if input_names.len() != u.ncols() {
            return Err(Error::dim("input names", u.ncols(), input_names.len()));
        }
        if output_names.len() != y.ncols() {
            return Err(Error::dim("output names", y.ncols(), output_names.len()));
        }
        if let Some(bad) = input_names.iter().find(|n| !n.starts_with('u')) {
            return Err(Error::InvalidArgument(format!("input name {bad:?} must start with 'u'")));
        }
        if let Some(bad) = output_names.iter().find(|n| !n.starts_with('y')) {
            return Err(Error::InvalidArgument(format!("output name {bad:?} must start with 'y'")));
        }
        Ok(Dataset {
            u,
            y,
            ts,
            input_names,
            output_names,
        })
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn ts(&self) -> f64 {
        self.ts
    }

    pub fn len(&self) -> usize {
        self.u.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_inputs(&self) -> usize {
        self.u.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.y.ncols()
    }

    pub fn input_names(&self) -> &[String] {
        &self.input_names
    }

    pub fn output_names(&self) -> &[String] {
        &self.output_names
    }

    /// Rows `start..end` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Result<Dataset> {
        if start >= end || end > self.len() {
            return Err(Error::InvalidArgument(format!(
                "slice {start}..{end} out of range for {} samples",
                self.len()
            )));
        }
        let rows = end - start;
        Dataset::with_names(
            self.u.rows(start, rows).into_owned(),
            self.y.rows(start, rows).into_owned(),
            self.ts,
            self.input_names.clone(),
            self.output_names.clone(),
        )
    }

    /// Contiguous prefix/suffix split: the training part holds
    /// `⌊N · fraction⌋` samples.
    pub fn split(&self, fraction: f64) -> Result<(Dataset, Dataset)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "split fraction must lie in (0, 1), got {fraction}"
            )));
        }
        let n = self.len();
        let n_train = (n as f64 * fraction).floor() as usize;
        if n_train < 1 || n_train >= n {
            return Err(Error::InvalidArgument(format!(
                "split of {n} samples at {fraction} leaves an empty part"
            )));
        }
        Ok((self.slice(0, n_train)?, self.slice(n_train, n)?))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file)
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut records = rdr.records();
        let header = match records.next() {
            Some(rec) => rec.map_err(csv_err)?,
            None => {
                return Err(Error::Csv {
                    line: 1,
                    message: "missing header row".into(),
                })
            }
        };
        let mut t_col = None;
        let mut u_cols = vec![];
        let mut y_cols = vec![];
        for (i, name) in header.iter().enumerate() {
            if name == "t" {
                if t_col.replace(i).is_some() {
                    return Err(Error::Csv {
                        line: 1,
                        message: "duplicate \"t\" column".into(),
                    });
                }
            } else if name.starts_with('u') {
                u_cols.push((i, name.to_string()));
            } else if name.starts_with('y') {
                y_cols.push((i, name.to_string()));
            } else {
                return Err(Error::Csv {
                    line: 1,
                    message: format!("header column {name:?} is not \"t\" or u*/y* prefixed"),
                });
            }
        }
        let t_col = t_col.ok_or_else(|| Error::Csv {
            line: 1,
            message: "missing header: no \"t\" column".into(),
        })?;
        if u_cols.is_empty() || y_cols.is_empty() {
            return Err(Error::Csv {
                line: 1,
                message: "header must name at least one u* and one y* column".into(),
            });
        }
        let width = header.len();
        let mut t = vec![];
        let mut u_vals = vec![];
        let mut y_vals = vec![];
        for (row, rec) in records.enumerate() {
            let line = row as u64 + 2;
            let rec = rec.map_err(csv_err)?;
            if rec.len() != width {
                return Err(Error::Csv {
                    line,
                    message: format!("ragged row: {} fields, header has {width}", rec.len()),
                });
            }
            let parse = |i: usize| -> Result<f64> {
                rec[i].parse::<f64>().map_err(|_| Error::Csv {
                    line,
                    message: format!("cannot parse {:?} as a number", &rec[i]),
                })
            };
            t.push(parse(t_col)?);
            for (i, _) in &u_cols {
                u_vals.push(parse(*i)?);
            }
            for (i, _) in &y_cols {
                y_vals.push(parse(*i)?);
            }
        }
        let n = t.len();
        if n < 2 {
            return Err(Error::Csv {
                line: n as u64 + 1,
                message: "at least two data rows are needed to infer the sampling interval".into(),
            });
        }
        let ts = t[1] - t[0];
        if !(ts > 0.0) {
            return Err(Error::Csv {
                line: 3,
                message: format!("non-increasing time column at row 2 (dt = {ts})"),
            });
        }
        for i in 2..n {
            let dt = t[i] - t[i - 1];
            if (dt - ts).abs() > 1e-9 * ts {
                return Err(Error::Csv {
                    line: i as u64 + 2,
                    message: format!("non-uniform time spacing at row {} (dt = {dt}, expected {ts})", i + 1),
                });
            }
        }
        let u = DMatrix::from_row_slice(n, u_cols.len(), &u_vals);
        let y = DMatrix::from_row_slice(n, y_cols.len(), &y_vals);
        Dataset::with_names(
            u,
            y,
            ts,
            u_cols.into_iter().map(|c| c.1).collect(),
            y_cols.into_iter().map(|c| c.1).collect(),
        )
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| match e {
                Error::Csv { message, .. } => Error::io(path, std::io::Error::other(message)),
                other => other,
            })
    }

    /// Columns `t, u*, y*`; values use the shortest exact decimal form.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend(self.input_names.iter().cloned());
        header.extend(self.output_names.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for k in 0..self.len() {
            let mut row = Vec::with_capacity(header.len());
            row.push(fmt_f64(k as f64 * self.ts));
            row.extend(self.u.row(k).iter().map(|&v| fmt_f64(v)));
            row.extend(self.y.row(k).iter().map(|&v| fmt_f64(v)));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Csv {
            line: 0,
            message: e.to_string(),
        })
    }
}

/// Shortest decimal text that parses back to the identical `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Csv {
        line,
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Dataset {
        let u = DMatrix::from_fn(n, 1, |i, _| i as f64);
        let y = DMatrix::from_fn(n, 1, |i, _| 10.0 * i as f64);
        Dataset::new(u, y, 0.5).unwrap()
    }

    #[test]
    fn split_floor_then_remainder() {
        let (a, b) = ramp(3).split(0.9).unwrap();
        assert_eq!((a.len(), b.len()), (2, 1));
        let (a, b) = ramp(10).split(0.5).unwrap();
        assert_eq!(a.u().column(0).as_slice(), &[0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(b.u().column(0).as_slice(), &[5.0, 6.0, 7.0, 8.0, 9.0]);
        assert_eq!(b.ts(), 0.5);
        let (a, b) = ramp(5000).split(0.5).unwrap();
        assert_eq!((a.len(), b.len()), (2500, 2500));
    }

    #[test]
    fn split_rejects_bad_fraction() {
        for f in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(ramp(10).split(f).is_err(), "{f}");
        }
        // floor(1 * 0.5) = 0 leaves the training part empty
        assert!(ramp(1).split(0.5).is_err());
    }

    #[test]
    fn ts_inferred_from_time_column() {
        let text = "t,u1,y1\n0,1,2\n0.5,1,2\n1.0,1,2\n";
        let d = Dataset::read_csv(text.as_bytes()).unwrap();
        assert_eq!(d.ts(), 0.5);
        assert_eq!(d.len(), 3);
    }

    #[test]
    fn non_uniform_spacing_names_row() {
        let text = "t,u1,y1\n0,1,2\n0.5,1,2\n1.1,1,2\n";
        let err = Dataset::read_csv(text.as_bytes()).unwrap_err();
        match &err {
            Error::Csv { line, message } => {
                assert_eq!(*line, 4);
                assert!(message.contains("row 3"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ragged_row_rejected_with_line() {
        let text = "t,u1,y1\n0,1,2\n0.5,1\n";
        match Dataset::read_csv(text.as_bytes()).unwrap_err() {
            Error::Csv { line, .. } => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_header_rejected() {
        assert!(matches!(Dataset::read_csv("".as_bytes()), Err(Error::Csv { line: 1, .. })));
        let text = "0,1,2\n0.5,1,2\n";
        assert!(matches!(Dataset::read_csv(text.as_bytes()), Err(Error::Csv { line: 1, .. })));
    }
}
