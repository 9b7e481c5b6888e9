//! The observed `n x p` panel: rows are time points `i = 1..n` with rescaled
//! time `i/n`, columns are cross-sectional series.

use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PanelSeries {
    values: DMatrix<f64>,
}

impl PanelSeries {
    /// Wraps an `n x p` matrix. Requires `n >= 2`, `p >= 1` and finite entries.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(Error::invalid(
                "panel-data.new",
                format!("panel needs at least 2 time points, got {}", values.nrows()),
            ));
        }
        if values.ncols() < 1 {
            return Err(Error::invalid("panel-data.new", "panel has no columns"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "panel-data.new" });
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::RaggedRow {
                    row: i + 1,
                    expected: p,
                    found: row.len(),
                });
            }
        }
        Self::new(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    /// Observation at 1-based time index `i`.
    pub fn observation(&self, i: usize) -> DVector<f64> {
        self.values.row(i - 1).transpose()
    }

    /// Rescaled time `i/n` of 1-based row `i`.
    pub fn time(&self, i: usize) -> f64 {
        i as f64 / self.n() as f64
    }

    /// The in-sample grid `1/n, 2/n, ..., 1`.
    pub fn time_grid(&self) -> Vec<f64> {
        (1..=self.n()).map(|i| self.time(i)).collect()
    }

    pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read_csv(file, has_header).map_err(|e| match e {
            Error::Io { source, .. } => Error::Io {
                path: path.to_path_buf(),
                source,
            },
            other => other,
        })
    }

    /// Parses comma-separated numeric rows. Rows are numbered from 1 after
    /// the optional header.
    pub fn read_csv<R: Read>(reader: R, has_header: bool) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(has_header)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut width = None;
        for (idx, record) in rdr.records().enumerate() {
            let row = idx + 1;
            let record = record.map_err(|e| Error::Io {
                path: Default::default(),
                source: io::Error::new(io::ErrorKind::InvalidData, e),
            })?;
            let expected = *width.get_or_insert(record.len());
            if record.len() != expected {
                return Err(Error::RaggedRow {
                    row,
                    expected,
                    found: record.len(),
                });
            }
            let parsed = record
                .iter()
                .enumerate()
                .map(|(col, field)| match field.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(Error::BadField {
                        row,
                        column: col + 1,
                        value: field.to_string(),
                    }),
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(parsed);
        }
        if rows.is_empty() {
            return Err(Error::invalid("panel-data.load_csv", "no data rows"));
        }
        Self::from_rows(&rows)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        write_matrix_csv(&self.values, &mut out)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let file = io::BufWriter::new(File::create(path)?);
        self.write_csv(file)
    }

    /// First differences `X_i - X_{i-1}`, an `(n-1) x p` panel.
    pub fn difference(&self) -> Result<Self> {
        let n = self.n();
        if n < 3 {
            return Err(Error::invalid(
                "panel-data.difference",
                format!("need n >= 3 to difference, got n = {n}"),
            ));
        }
        let diff = self.values.rows(1, n - 1) - self.values.rows(0, n - 1);
        Self::new(diff)
    }

    /// Subtracts each column's sample mean.
    pub fn center(&self) -> Self {
        let mut values = self.values.clone();
        for mut col in values.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        Self { values }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: &self.values * factor,
        }
    }

    /// Sub-panel of the first `rows` observations.
    pub fn head(&self, rows: usize) -> Result<Self> {
        Self::new(self.values.rows(0, rows.min(self.n())).into_owned())
    }
}

/// Row-major CSV with `\n` line endings and 17 significant digits.
pub fn write_matrix_csv<W: Write>(m: &DMatrix<f64>, out: &mut W) -> io::Result<()> {
    for row in m.row_iter() {
        let line = row
            .iter()
            .map(|v| format!("{v:.16e}"))
            .collect::<Vec<_>>()
            .join(",");
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn panel(rows: &[&[f64]]) -> PanelSeries {
        PanelSeries::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn parses_plain_rows() {
        let x = PanelSeries::read_csv("1,2\n3,4\n5,6".as_bytes(), false).unwrap();
        assert_eq!((x.n(), x.p()), (3, 2));
        assert_eq!(x.values()[(2, 1)], 6.0);
        assert_eq!(x.values()[(1, 0)], 3.0);
    }

    #[test]
    fn accepts_windows_newlines_and_header() {
        let x = PanelSeries::read_csv("a,b\r\n1,2\r\n3,4\r\n".as_bytes(), true).unwrap();
        assert_eq!((x.n(), x.p()), (2, 2));
    }

    #[test]
    fn reports_bad_field_position() {
        let err = PanelSeries::read_csv("1,abc\n2,3".as_bytes(), false).unwrap_err();
        match err {
            Error::BadField { row, column, .. } => assert_eq!((row, column), (1, 2)),
            other => panic!("unexpected {other:?}"),
        }
        let err = PanelSeries::read_csv("1,2\n2,inf".as_bytes(), false).unwrap_err();
        assert!(matches!(err, Error::BadField { row: 2, column: 2, .. }));
    }

    #[test]
    fn rejects_ragged_rows() {
        let err = PanelSeries::read_csv("1,2\n3\n".as_bytes(), false).unwrap_err();
        assert!(matches!(err, Error::RaggedRow { row: 2, expected: 2, found: 1 }));
    }

    #[test]
    fn single_data_row_is_rejected() {
        let err = PanelSeries::read_csv("a,b\n1,2\n".as_bytes(), true).unwrap_err();
        assert!(err.to_string().contains("at least 2 time points"), "{err}");
    }

    #[test]
    fn difference_examples() {
        let x = panel(&[&[1.0, 1.0], &[2.0, 3.0], &[4.0, 6.0]]);
        let d = x.difference().unwrap();
        assert_eq!(d.values(), &DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]));

        let c = panel(&[&[7.0, 7.0], &[7.0, 7.0], &[7.0, 7.0]]);
        assert!(c.difference().unwrap().values().iter().all(|&v| v == 0.0));

        let short = panel(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert!(short.difference().is_err());
    }

    #[test]
    fn center_examples() {
        let x = panel(&[&[1.0, 5.0], &[2.0, 5.0], &[3.0, 5.0]]);
        let c = x.center();
        assert_eq!(c.values().column(0).as_slice(), &[-1.0, 0.0, 1.0]);
        assert!(c.values().column(1).iter().all(|&v| v == 0.0));
        let again = c.center();
        assert!((again.values() - c.values()).amax() < 1e-15);
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let x = panel(&[&[0.1, -1.0 / 3.0], &[1e-300, 6.02214076e23], &[f64::MIN_POSITIVE, -0.0]]);
        let mut buf = Vec::new();
        x.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(!text.contains('\r'));
        let y = PanelSeries::read_csv(buf.as_slice(), false).unwrap();
        for (a, b) in x.values().iter().zip(y.values().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    proptest! {
        #[test]
        fn difference_and_center_commute_to_zero_mean(
            data in proptest::collection::vec(-1e3f64..1e3, 12..60)
        ) {
            let p = 3;
            let n = data.len() / p;
            prop_assume!(n >= 3);
            let x = PanelSeries::new(DMatrix::from_row_slice(n, p, &data[..n * p])).unwrap();
            for y in [x.center().difference().unwrap().center(), x.difference().unwrap().center()] {
                for col in y.values().column_iter() {
                    let scale = col.amax().max(1.0);
                    prop_assert!(col.mean().abs() <= 1e-12 * scale);
                }
            }
        }

        #[test]
        fn csv_round_trip(data in proptest::collection::vec(proptest::num::f64::NORMAL, 4..40)) {
            let n = data.len() / 2;
            prop_assume!(n >= 2);
            let x = PanelSeries::new(DMatrix::from_row_slice(n, 2, &data[..2 * n])).unwrap();
            let mut buf = Vec::new();
            x.write_csv(&mut buf).unwrap();
            let y = PanelSeries::read_csv(buf.as_slice(), false).unwrap();
            prop_assert!(x.values().iter().zip(y.values().iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
