//! Field dumps in the shared CSV layout: one row per cell center, row-major in
//! `y` then `x`, 17 significant digits.

use std::io::{self, Write};

use crate::grid::{center_average_unchecked, Grid, ScalarCellField, VelocityField};
use crate::scalar::Real;

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `x,y,value` rows for a cell field.
pub fn write_scalar_csv<T: Real, W: Write>(
    out: &mut W,
    field: &ScalarCellField<T>,
    grid: &Grid<T>,
) -> io::Result<()> {
    if field.nx() != grid.nx() || field.ny() != grid.ny() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "field does not match grid",
        ));
    }
    writeln!(out, "x,y,value")?;
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            let (x, y) = grid.cell_center(i, j);
            writeln!(
                out,
                "{},{},{}",
                num(x.as_f64()),
                num(y.as_f64()),
                num(field.get(i, j).as_f64())
            )?;
        }
    }
    Ok(())
}

/// Writes `x,y,u1,u2` rows with face values averaged to cell centers.
pub fn write_velocity_csv<T: Real, W: Write>(
    out: &mut W,
    field: &VelocityField<T>,
    grid: &Grid<T>,
) -> io::Result<()> {
    if field.nx() != grid.nx() || field.ny() != grid.ny() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "field does not match grid",
        ));
    }
    let [c1, c2] = center_average_unchecked(field, grid);
    writeln!(out, "x,y,u1,u2")?;
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            let (x, y) = grid.cell_center(i, j);
            writeln!(
                out,
                "{},{},{},{}",
                num(x.as_f64()),
                num(y.as_f64()),
                num(c1.get(i, j).as_f64()),
                num(c2.get(i, j).as_f64())
            )?;
        }
    }
    Ok(())
}
