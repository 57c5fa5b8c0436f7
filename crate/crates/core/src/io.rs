//! CSV and JSON file formats shared by the command-line tools.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::snr_pdf::PdfEstimate;
use crate::train::IterMetrics;
use crate::Point;

/// Writes points as CSV with header `x,y`.
pub fn write_points_csv(path: &Path, points: &[Point]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y"])?;
    for p in points {
        w.serialize((p[0], p[1]))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_points_csv(path: &Path) -> Result<Vec<Point>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "x" || &headers[1] != "y" {
        return Err(Error::Format(format!(
            "{}: expected header x,y",
            path.display()
        )));
    }
    r.deserialize::<(f64, f64)>()
        .map(|row| row.map(|(x, y)| [x, y]).map_err(Error::from))
        .collect()
}

/// Header `bin_lo_db,bin_hi_db,density`.
pub fn write_pdf_csv(path: &Path, pdf: &PdfEstimate) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin_lo_db", "bin_hi_db", "density"])?;
    for (e, d) in pdf.bin_edges.windows(2).zip(&pdf.density) {
        w.serialize((e[0], e[1], *d))?;
    }
    w.flush()?;
    Ok(())
}

/// Header `iter,mse,dir,total`.
pub fn write_metrics_csv(path: &Path, metrics: &[IterMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iter", "mse", "dir", "total"])?;
    for m in metrics {
        w.serialize((m.iter, m.mse, m.dir, m.total))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes serialisable rows as CSV, taking the header from the field names.
pub fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_round_trip_bit_exact() {
        let dir = std::env::temp_dir().join(format!("snrflow-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("pts.csv");
        let pts = vec![[0.1, -2.5e-300], [1.0 / 3.0, f64::MAX], [-0.0, 7.0]];
        write_points_csv(&path, &pts).unwrap();
        let back = read_points_csv(&path).unwrap();
        for (a, b) in pts.iter().zip(&back) {
            assert_eq!(a[0].to_bits(), b[0].to_bits());
            assert_eq!(a[1].to_bits(), b[1].to_bits());
        }
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(read_points_csv(&path).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
