//! Cloud CSV: one row per particle, header `x1,...,xd`, 17 significant digits.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::EmpiricalMeasure;
use crate::error::{Error, Result};
use crate::numeric::fmt17;

pub fn write_cloud_csv_to<W: Write>(mu: &EmpiricalMeasure, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let header: Vec<String> = (1..=mu.dim()).map(|i| format!("x{i}")).collect();
    w.write_record(&header)?;
    for p in mu.iter() {
        w.write_record(p.iter().map(|v| fmt17(*v)))?;
    }
    w.flush().map_err(|e| Error::io("<cloud csv>", e))?;
    Ok(())
}

pub fn write_cloud_csv(mu: &EmpiricalMeasure, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_cloud_csv_to(mu, f)
}

pub fn read_cloud_csv_from<R: Read>(source: R) -> Result<EmpiricalMeasure> {
    let mut r = csv::Reader::from_reader(source);
    let header = r.headers()?.clone();
    let dim = header.len();
    for (i, name) in header.iter().enumerate() {
        if name.trim() != format!("x{}", i + 1) {
            return Err(Error::InvalidInput(format!(
                "cloud CSV header column {} is `{name}`, expected `x{}`",
                i + 1,
                i + 1
            )));
        }
    }
    let mut points = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != dim {
            return Err(Error::InvalidInput(format!("row {} has {} fields", row + 1, rec.len())));
        }
        for field in rec.iter() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::InvalidInput(format!("row {}: `{field}` is not a number", row + 1))
            })?;
            points.push(v);
        }
    }
    EmpiricalMeasure::new(points, dim)
}

pub fn read_cloud_csv(path: &Path) -> Result<EmpiricalMeasure> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_cloud_csv_from(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_required() {
        let r = read_cloud_csv_from("1.0,2.0\n3.0,4.0\n".as_bytes());
        assert!(r.is_err());
        let ok = read_cloud_csv_from("x1,x2\n1.0,2.0\n".as_bytes()).unwrap();
        assert_eq!(ok.dim(), 2);
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(
            vals in prop::collection::vec(-1e300f64..1e300, 1..40),
            dim in 1usize..4,
        ) {
            let n = vals.len() / dim;
            prop_assume!(n >= 1);
            let mu = EmpiricalMeasure::new(vals[..n * dim].to_vec(), dim).unwrap();
            let mut buf = Vec::new();
            write_cloud_csv_to(&mu, &mut buf).unwrap();
            let back = read_cloud_csv_from(buf.as_slice()).unwrap();
            prop_assert_eq!(back.dim(), dim);
            for (a, b) in mu.points().iter().zip(back.points()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
