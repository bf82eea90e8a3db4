use std::io::{Read, Write};

use crate::grid::Grid;

use super::ExperimentError;

/// Flat field dump: one row per node with coordinates and value, preceded
/// by a `#` comment line carrying `note`.
pub fn write_field_csv<W: Write>(grid: &Grid, values: &[f64], note: &str, mut out: W) -> Result<(), ExperimentError> {
    grid.check_len(values.len())?;
    writeln!(out, "# {note}")?;
    let mut w = csv::Writer::from_writer(out);
    let axes = ["x", "y"];
    let mut header: Vec<&str> = axes[..grid.dim()].to_vec();
    header.push("value");
    w.write_record(&header)?;
    for (k, v) in values.iter().enumerate() {
        let x = grid.position(k);
        let mut rec: Vec<String> = x[..grid.dim()].iter().map(|c| c.to_string()).collect();
        rec.push(v.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the `value` column of a field dump and checks it against the grid.
pub fn read_field_csv<R: Read>(grid: &Grid, input: R) -> Result<Vec<f64>, ExperimentError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let col = r
        .headers()?
        .iter()
        .position(|h| h == "value")
        .ok_or_else(|| ExperimentError::Config("field csv has no value column".into()))?;
    let mut values = Vec::with_capacity(grid.len());
    for rec in r.records() {
        let rec = rec?;
        let v: f64 = rec
            .get(col)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| ExperimentError::Config(format!("bad value on row {}", values.len() + 1)))?;
        values.push(v);
    }
    grid.check_len(values.len())?;
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    #[test]
    fn round_trip_is_exact() {
        let g = build_grid(2, &[(-1.0, 1.0), (0.0, 2.0)], &[5, 7]).unwrap();
        let vals: Vec<f64> = (0..g.len()).map(|k| (k as f64 * 0.37).sin() / 3.0).collect();
        let mut buf = Vec::new();
        write_field_csv(&g, &vals, "seed=3", &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# seed=3\nx,y,value\n"));
        assert_eq!(read_field_csv(&g, &buf[..]).unwrap(), vals);
        let short = build_grid(1, &[(0.0, 1.0)], &[4]).unwrap();
        assert!(read_field_csv(&short, &buf[..]).is_err());
    }
}
