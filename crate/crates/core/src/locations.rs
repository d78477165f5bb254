//! Control-point sets and their CSV interchange.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Bit pattern of a coordinate row, with `-0.0` folded onto `0.0`.
pub(crate) fn row_key(row: impl Iterator<Item = f64>) -> Vec<u64> {
    row.map(|v| (v + 0.0).to_bits()).collect()
}

/// `n` pairwise distinct sites in `R^d`, `d` in {1, 2, 3}, stored as an `n x d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationSet {
    coords: DMatrix<f64>,
}

impl LocationSet {
    /// Validates dimension, count, distinctness and affine rank.
    pub fn new(coords: DMatrix<f64>) -> Result<Self> {
        let (n, d) = coords.shape();
        if !(1..=3).contains(&d) {
            return Err(Error::Dimension(d));
        }
        if n <= d + 1 {
            return Err(Error::TooFewLocations { n, d });
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite coordinate".into()));
        }
        let mut seen: HashMap<Vec<u64>, usize> = HashMap::with_capacity(n);
        for (i, row) in coords.row_iter().enumerate() {
            if let Some(&first) = seen.get(&row_key(row.iter().copied())) {
                return Err(Error::DuplicateLocation { first, second: i });
            }
            seen.insert(row_key(row.iter().copied()), i);
        }
        let set = LocationSet { coords };
        let rank = set.design_rank();
        if rank < d + 1 {
            return Err(Error::DegenerateGeometry { rank, expected: d + 1 });
        }
        Ok(set)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("ragged coordinate rows".into()));
        }
        Self::new(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
    }

    /// Points `s_i = start + i * step` on the line, `i = 1..=n`.
    pub fn line(n: usize, start: f64, step: f64) -> Result<Self> {
        Self::new(DMatrix::from_fn(n, 1, |i, _| start + (i + 1) as f64 * step))
    }

    pub fn n(&self) -> usize {
        self.coords.nrows()
    }

    pub fn dim(&self) -> usize {
        self.coords.ncols()
    }

    pub fn coords(&self) -> &DMatrix<f64> {
        &self.coords
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.coords.row(i).iter().copied().collect()
    }

    /// The `n x (d+1)` matrix `[1, x_1, ..., x_d]`.
    pub fn design_matrix(&self) -> DMatrix<f64> {
        polynomial_rows(&self.coords)
    }

    fn design_rank(&self) -> usize {
        let x = self.design_matrix();
        let size = x.nrows().max(x.ncols()) as f64;
        let sv = x.svd(false, false).singular_values;
        let smax = sv.iter().fold(0.0_f64, |m, &v| m.max(v));
        let tol = smax * f64::EPSILON * size;
        sv.iter().filter(|&&s| s > tol).count()
    }

    /// Index of the row whose coordinates equal `s` exactly.
    pub fn index_of(&self, s: &[f64]) -> Option<usize> {
        let key = row_key(s.iter().copied());
        self.coords
            .row_iter()
            .position(|r| row_key(r.iter().copied()) == key)
    }

    /// Reads one site per row with `d` numeric columns. A non-numeric first row is a header.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let rows = read_numeric_rows(reader)?;
        if rows.is_empty() {
            return Err(Error::Parse("location file has no rows".into()));
        }
        Self::from_rows(&rows)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_matrix_csv(writer, &self.coords, &coordinate_headers(self.dim()))
    }
}

/// `[1, s']` rows for an arbitrary `m x d` site matrix.
pub fn polynomial_rows(sites: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, d) = sites.shape();
    DMatrix::from_fn(m, d + 1, |i, j| if j == 0 { 1.0 } else { sites[(i, j - 1)] })
}

pub fn coordinate_headers(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("x{j}")).collect()
}

/// Parses a headerless-or-headed numeric CSV into rows.
pub(crate) fn read_numeric_rows<R: Read>(reader: R) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut rows = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if line == 0 => continue,
            Err(e) => return Err(Error::Parse(format!("line {}: {e}", line + 1))),
        }
    }
    Ok(rows)
}

/// Reads a rectangular numeric CSV (optional header) into a matrix.
pub fn read_matrix_csv<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    let rows = read_numeric_rows(reader)?;
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Shape("ragged numeric rows".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn write_matrix_csv<W: Write>(writer: W, m: &DMatrix<f64>, headers: &[String]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(headers)?;
    for row in m.row_iter() {
        wtr.write_record(row.iter().map(|&v| fmt_f64(v)))?;
    }
    wtr.flush()?;
    Ok(())
}
