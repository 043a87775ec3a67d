//! Plain-text grid files: a first line holding `n`, then `n²` whitespace-separated
//! reals in row-major order (first index along `x`).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::TorusGrid;
use crate::spectral::ScalarField;

pub fn parse_grid(text: &str) -> Result<ScalarField> {
    let mut tokens = text.split_whitespace();
    let n: usize = tokens
        .next()
        .ok_or_else(|| Error::Parse("empty grid file".into()))?
        .parse()
        .map_err(|e| Error::Parse(format!("bad grid size: {e}")))?;
    let grid = TorusGrid::new(n)?;
    let values = tokens
        .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("bad value {t:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    if values.len() != grid.len() {
        return Err(Error::Parse(format!("expected {} values, found {}", grid.len(), values.len())));
    }
    ScalarField::new(grid, values)
}

pub fn format_grid(f: &ScalarField) -> String {
    let n = f.grid().n();
    let mut out = format!("{n}\n");
    for i in 0..n {
        for j in 0..n {
            if j > 0 {
                out.push(' ');
            }
            write!(out, "{:e}", f.at(i, j)).expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

pub fn read_grid(path: &Path) -> Result<ScalarField> {
    parse_grid(&std::fs::read_to_string(path)?)
}

pub fn write_grid(path: &Path, f: &ScalarField) -> Result<()> {
    std::fs::write(path, format_grid(f))?;
    Ok(())
}
