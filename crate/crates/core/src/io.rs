//! Plain CSV serialization of dense matrices (no header, one line per row).

use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub fn write_matrix_csv<W: Write>(m: &DMatrix<f64>, w: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for row in m.row_iter() {
        wtr.write_record(row.iter().map(|v| v.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_matrix_csv<R: Read>(r: R) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        if *cols.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::ShapeMismatch(format!("ragged matrix CSV at row {rows}")));
        }
        for field in rec.iter() {
            data.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("bad number {field:?}: {e}")))?,
            );
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, cols.unwrap_or(0), &data))
}
