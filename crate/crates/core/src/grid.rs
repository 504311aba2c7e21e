//! Row-major real-valued pixel grid.

use crate::error::{Error, Result};

/// A `width × height` grid of reals stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Grid {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(
                format!("{} values for {width}x{height}", width * height),
                data.len(),
            ));
        }
        Ok(Grid {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Grid {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Errors unless `other` has the same dimensions.
    pub fn check_same_dims(&self, other: &Grid) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ));
        }
        Ok(())
    }

    pub fn zip_map(&self, other: &Grid, f: impl Fn(f64, f64) -> f64) -> Result<Grid> {
        self.check_same_dims(other)?;
        Ok(Grid {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn median(&self) -> f64 {
        median(&self.data)
    }

    /// Top-left `width × height` window.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Grid> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::Invalid(format!(
                "crop {width}x{height}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        Ok(Grid::from_fn(width, height, |x, y| self.get(x0 + x, y0 + y)))
    }

    /// Centered `width × height` window; odd remainders drop the extra
    /// column/row on the right/bottom.
    pub fn center_crop_to(&self, width: usize, height: usize) -> Result<Grid> {
        if width > self.width || height > self.height {
            return Err(Error::Invalid(format!(
                "crop {width}x{height} exceeds {}x{}",
                self.width, self.height
            )));
        }
        self.crop((self.width - width) / 2, (self.height - height) / 2, width, height)
    }

    /// Non-overlapping `patch × patch` tiles in row-major tile order, each
    /// flattened row-major. Dimensions must be multiples of `patch`.
    pub fn tiles(&self, patch: usize) -> Result<Vec<Vec<f64>>> {
        if patch == 0 || !self.width.is_multiple_of(patch) || !self.height.is_multiple_of(patch) {
            return Err(Error::Invalid(format!(
                "{}x{} is not a multiple of patch {patch}",
                self.width, self.height
            )));
        }
        let mut out = Vec::with_capacity((self.width / patch) * (self.height / patch));
        for ty in (0..self.height).step_by(patch) {
            for tx in (0..self.width).step_by(patch) {
                let mut tile = Vec::with_capacity(patch * patch);
                for y in ty..ty + patch {
                    tile.extend_from_slice(&self.row(y)[tx..tx + patch]);
                }
                out.push(tile);
            }
        }
        Ok(out)
    }

    /// Inverse of [`Grid::tiles`].
    pub fn from_tiles(width: usize, height: usize, patch: usize, tiles: &[Vec<f64>]) -> Result<Grid> {
        if patch == 0 || !width.is_multiple_of(patch) || !height.is_multiple_of(patch) {
            return Err(Error::Invalid(format!(
                "{width}x{height} is not a multiple of patch {patch}"
            )));
        }
        let per_row = width / patch;
        if tiles.len() != per_row * (height / patch) {
            return Err(Error::shape(per_row * (height / patch), tiles.len()));
        }
        if let Some(t) = tiles.iter().find(|t| t.len() != patch * patch) {
            return Err(Error::shape(patch * patch, t.len()));
        }
        Ok(Grid::from_fn(width, height, |x, y| {
            tiles[(y / patch) * per_row + x / patch][(y % patch) * patch + x % patch]
        }))
    }
}

/// Median of a slice; the mean of the two middle values for even lengths.
/// Returns 0 for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[]), 0.0);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Grid::from_vec(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn crop_window() {
        let g = Grid::from_fn(4, 3, |x, y| (10 * y + x) as f64);
        let c = g.crop(1, 1, 2, 2).unwrap();
        assert_eq!(c.as_slice(), &[11.0, 12.0, 21.0, 22.0]);
        assert!(g.crop(3, 0, 2, 1).is_err());
    }

    #[test]
    fn tiles_round_trip() {
        let g = Grid::from_fn(6, 4, |x, y| (10 * y + x) as f64);
        let t = g.tiles(2).unwrap();
        assert_eq!(t.len(), 6);
        assert_eq!(t[1], vec![2.0, 3.0, 12.0, 13.0]);
        assert_eq!(Grid::from_tiles(6, 4, 2, &t).unwrap(), g);
        assert!(g.tiles(4).is_err());
        assert!(Grid::from_tiles(6, 4, 2, &t[1..]).is_err());
    }

    #[test]
    fn center_crop_rectangular() {
        let g = Grid::from_fn(5, 4, |x, y| (10 * y + x) as f64);
        let c = g.center_crop_to(2, 3).unwrap();
        assert_eq!(c.as_slice(), &[1.0, 2.0, 11.0, 12.0, 21.0, 22.0]);
        assert!(g.center_crop_to(6, 1).is_err());
    }
}
