//! Dense per-cell tensor on the BEV grid, stored row-major as
//! `rows x cols x width` with `width` channels per cell.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    rows: usize,
    cols: usize,
    width: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(rows: usize, cols: usize, width: usize) -> Self {
        Field {
            rows,
            cols,
            width,
            data: vec![0.0; rows * cols * width],
        }
    }

    pub fn from_data(rows: usize, cols: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols * width {
            return Err(Error::ShapeMismatch(format!(
                "field data length {} != {rows}x{cols}x{width}",
                data.len()
            )));
        }
        Ok(Field {
            rows,
            cols,
            width,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn same_shape(&self, other: &Field) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.width == other.width
    }

    fn offset(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.rows && col < self.cols);
        (row * self.cols + col) * self.width
    }

    /// All channels of one cell.
    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let o = self.offset(row, col);
        &self.data[o..o + self.width]
    }

    pub fn cell_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let o = self.offset(row, col);
        &mut self.data[o..o + self.width]
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        debug_assert!(ch < self.width);
        self.data[self.offset(row, col) + ch]
    }

    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        debug_assert!(ch < self.width);
        let o = self.offset(row, col);
        self.data[o + ch] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_row_major() {
        let mut f = Field::zeros(2, 3, 2);
        f.set(1, 2, 1, 7.0);
        assert_eq!(f.data()[(1 * 3 + 2) * 2 + 1], 7.0);
        assert_eq!(f.get(1, 2, 1), 7.0);
        assert_eq!(f.cell(1, 2), &[0.0, 7.0]);
    }

    #[test]
    fn from_data_rejects_wrong_length() {
        assert!(Field::from_data(2, 2, 1, vec![0.0; 3]).is_err());
    }
}
