//! CSV interchange for point clouds: a header `x0,...,x{d-1}` and one row
//! per point.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn header(dim: usize) -> Vec<String> {
    (0..dim).map(|i| format!("x{i}")).collect()
}

pub fn write_csv<S: Scalar, W: Write>(points: &Tensor<S>, out: W) -> Result<()> {
    let (_, d) = points.require_matrix("point cloud")?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(header(d))?;
    for row in points.rows_iter() {
        w.write_record(row.iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<S: Scalar, R: Read>(input: R) -> Result<Tensor<S>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let hdr = r.headers()?.clone();
    let d = hdr.len();
    if hdr.iter().ne(header(d).iter().map(String::as_str)) {
        return Err(Error::Io(format!("expected header x0..x{}, got {hdr:?}", d.saturating_sub(1))));
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        for field in rec.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Io(format!("row {}: cannot parse {field:?}", i + 1)))?;
            data.push(S::of(v));
        }
        rows += 1;
    }
    Tensor::new(vec![rows, d], data)
}

pub fn save<S: Scalar>(points: &Tensor<S>, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_csv(points, std::io::BufWriter::new(f))
}

pub fn load<S: Scalar>(path: &Path) -> Result<Tensor<S>> {
    read_csv(std::fs::File::open(path)?)
}
