//! Grayscale dumps of 2-D grids as plain-text 16-bit PGM.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::heatmap::HeatmapGrid;

pub const MAX_LEVEL: u32 = 65_535;

/// Pixel levels `round(65535 · (v / vmax)^gamma)`, row-major.
pub fn pixel_levels(grid: &HeatmapGrid, gamma: f64) -> Result<Vec<u32>> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    let vmax = grid.max_value();
    Ok(grid
        .values()
        .iter()
        .map(|&v| {
            if vmax <= 0.0 {
                0
            } else {
                (MAX_LEVEL as f64 * (v / vmax).powf(gamma)).round() as u32
            }
        })
        .collect())
}

/// `P2` image with one pixel row per first-axis index.
pub fn render_pgm(grid: &HeatmapGrid, gamma: f64) -> Result<String> {
    if grid.dims() != 2 {
        return Err(Error::invalid("only 2-D grids can be rendered"));
    }
    let m = grid.bins();
    let levels = pixel_levels(grid, gamma)?;
    let mut out = format!("P2\n{m} {m}\n{MAX_LEVEL}\n");
    for row in levels.chunks(m) {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            first = false;
            write!(out, "{v}").expect("write to String");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn render_heatmap_image(grid: &HeatmapGrid, gamma: f64, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, render_pgm(grid, gamma)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatmap::{GridKind, Provenance};
    use crate::ingest::Extent;

    fn grid(values: [f64; 4]) -> HeatmapGrid {
        HeatmapGrid::from_parts(
            Extent::new(vec![(0.0, 1.0), (0.0, 1.0)]).unwrap(),
            2,
            values.to_vec(),
            GridKind::Reference,
            Provenance { period: 0, offset: None },
        )
        .unwrap()
    }

    #[test]
    fn linear_fixture() {
        assert_eq!(
            render_pgm(&grid([0.0, 1.0, 2.0, 4.0]), 1.0).unwrap(),
            "P2\n2 2\n65535\n0 16384\n32768 65535\n"
        );
    }

    #[test]
    fn sqrt_fixture() {
        assert_eq!(
            pixel_levels(&grid([0.0, 1.0, 4.0, 16.0]), 0.5).unwrap(),
            vec![0, 16384, 32768, 65535]
        );
    }

    #[test]
    fn zero_grid_renders_black() {
        assert_eq!(pixel_levels(&grid([0.0; 4]), 1.0).unwrap(), vec![0; 4]);
        assert!(pixel_levels(&grid([0.0; 4]), 0.0).is_err());
    }
}
