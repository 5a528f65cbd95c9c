//! Field export: CSV and legacy VTK point data.
//!
//! Points without a flux stencil get `NaN` flux components.

use std::io::Write;

use crate::geometry::{Point, PointCloud};
use crate::problems::fmt17;
use crate::{Error, Result};

fn check_lengths(cloud: &PointCloud, phi: &[f64], flux: &[Option<Point>]) -> Result<()> {
    if phi.len() != cloud.len() || flux.len() != cloud.len() {
        return Err(Error::InvalidArgument(format!(
            "field lengths {} / {} do not match cloud size {}",
            phi.len(),
            flux.len(),
            cloud.len()
        )));
    }
    Ok(())
}

fn flux_or_nan(u: &Option<Point>) -> Point {
    u.unwrap_or([f64::NAN; 3])
}

/// Columns `x, y[, z], phi, ux, uy[, uz]`.
pub fn write_field_csv<W: Write>(cloud: &PointCloud, phi: &[f64], flux: &[Option<Point>], w: W) -> Result<()> {
    check_lengths(cloud, phi, flux)?;
    let d = cloud.dim;
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<&str> = ["x", "y", "z"][..d].to_vec();
    header.push("phi");
    header.extend_from_slice(&["ux", "uy", "uz"][..d]);
    out.write_record(&header)?;
    for i in 0..cloud.len() {
        let u = flux_or_nan(&flux[i]);
        let mut rec: Vec<String> = cloud.positions[i][..d].iter().map(|&v| fmt17(v)).collect();
        rec.push(fmt17(phi[i]));
        rec.extend(u[..d].iter().map(|&v| fmt17(v)));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// ASCII `POLYDATA` with one vertex cell per point, `phi` and `mu` as
/// scalars and the flux as a vector.
pub fn write_vtk<W: Write>(cloud: &PointCloud, phi: &[f64], flux: &[Option<Point>], mu: &[f64], mut w: W) -> Result<()> {
    check_lengths(cloud, phi, flux)?;
    if mu.len() != cloud.len() {
        return Err(Error::InvalidArgument("coefficient length does not match cloud size".into()));
    }
    let n = cloud.len();
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "staggered GMLS solution")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET POLYDATA")?;
    writeln!(w, "POINTS {n} double")?;
    for x in &cloud.positions {
        writeln!(w, "{} {} {}", fmt17(x[0]), fmt17(x[1]), fmt17(x[2]))?;
    }
    writeln!(w, "VERTICES {n} {}", 2 * n)?;
    for i in 0..n {
        writeln!(w, "1 {i}")?;
    }
    writeln!(w, "POINT_DATA {n}")?;
    for (name, values) in [("phi", phi), ("mu", mu)] {
        writeln!(w, "SCALARS {name} double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for v in values {
            writeln!(w, "{}", fmt17(*v))?;
        }
    }
    writeln!(w, "VECTORS flux double")?;
    for u in flux {
        let u = flux_or_nan(u);
        writeln!(w, "{} {} {}", fmt17(u[0]), fmt17(u[1]), fmt17(u[2]))?;
    }
    w.flush()?;
    Ok(())
}

/// Probe samples as `index, s, ux, uy[, uz]` where `s` is the free coordinate.
pub fn write_probe_csv<W: Write>(dim: usize, samples: &[(usize, f64, Point)], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["index", "s"];
    header.extend_from_slice(&["ux", "uy", "uz"][..dim]);
    out.write_record(&header)?;
    for (i, s, u) in samples {
        let mut rec = vec![i.to_string(), fmt17(*s)];
        rec.extend(u[..dim].iter().map(|&v| fmt17(v)));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{all_dirichlet, discretize, CloudParams, Domain};

    fn cloud() -> PointCloud {
        discretize(&Domain::UnitSquare, &CloudParams::new(0.25, 1), &all_dirichlet).unwrap()
    }

    #[test]
    fn field_csv_round_trips_values() {
        let c = cloud();
        let phi: Vec<f64> = c.positions.iter().map(|x| x[0] / 3.0).collect();
        let mut flux: Vec<Option<Point>> = c.positions.iter().map(|x| Some([x[1], -x[0], 0.0])).collect();
        flux[0] = None;
        let mut buf = Vec::new();
        write_field_csv(&c, &phi, &flux, &mut buf).unwrap();
        let mut rdr = csv::Reader::from_reader(buf.as_slice());
        assert_eq!(rdr.headers().unwrap(), vec!["x", "y", "phi", "ux", "uy"]);
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.unwrap();
            let v: Vec<f64> = rec.iter().map(|s| s.parse().unwrap()).collect();
            assert_eq!(v[0], c.positions[i][0]);
            assert_eq!(v[2], phi[i]);
            if i == 0 {
                assert!(v[3].is_nan());
            } else {
                assert_eq!(v[4], -c.positions[i][0]);
            }
        }
    }

    #[test]
    fn vtk_has_consistent_counts() {
        let c = cloud();
        let n = c.len();
        let phi = vec![1.0; n];
        let flux = vec![Some([0.0; 3]); n];
        let mut buf = Vec::new();
        write_vtk(&c, &phi, &flux, &phi, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# vtk DataFile Version 3.0\n"));
        assert!(text.contains(&format!("POINTS {n} double")));
        assert!(text.contains(&format!("POINT_DATA {n}")));
        assert_eq!(text.lines().count(), 5 + n + 1 + n + 1 + 2 * (2 + n) + 1 + n);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let c = cloud();
        assert!(write_field_csv(&c, &[0.0], &[None], Vec::new()).is_err());
    }
}
