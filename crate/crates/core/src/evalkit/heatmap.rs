//! Grayscale PGM rendering of groundings.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Grid;
use crate::numerics::Scalar;

/// Binary PGM (P5) bytes of `values` laid out on `grid`, min-max scaled to
/// 0..=255. A constant input renders as mid-gray 128.
pub fn encode_pgm<T: Scalar>(values: &[T], grid: Grid) -> Result<Vec<u8>> {
    if values.len() != grid.len() {
        return Err(Error::Shape(format!(
            "{} values for a {}x{} grid",
            values.len(),
            grid.rows,
            grid.cols
        )));
    }
    let xs: Vec<f64> = values.iter().map(|v| v.to_f64_lossy()).collect();
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite heatmap value".into()));
    }
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P5\n{} {}\n255\n", grid.cols, grid.rows).into_bytes();
    out.extend(xs.iter().map(|&x| {
        if hi > lo {
            ((x - lo) / (hi - lo) * 255.0).round() as u8
        } else {
            128
        }
    }));
    Ok(out)
}

pub fn export_heatmap<T: Scalar>(values: &[T], grid: Grid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pgm(values, grid)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_and_uniform() {
        let g = Grid::new(2, 2);
        let bytes = encode_pgm(&[0.0f64, 1.0, 0.0, 0.0], g).unwrap();
        assert_eq!(&bytes[..11], b"P5\n2 2\n255\n");
        assert_eq!(&bytes[11..], &[0, 255, 0, 0]);
        let bytes = encode_pgm(&[0.25f64; 4], g).unwrap();
        assert_eq!(&bytes[11..], &[128; 4]);
        assert!(encode_pgm(&[0.0f64; 3], g).is_err());
    }
}
