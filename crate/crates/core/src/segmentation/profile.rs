use serde::Serialize;

use super::Mask;
use crate::error::{Error, Result};

/// Per-row foreground counts of a mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SilhouetteProfile {
    rows: Vec<u32>,
    width: u32,
    area: u64,
    max_row: u32,
}

impl SilhouetteProfile {
    pub fn from_rows(rows: Vec<u32>, width: u32) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&l| l > width) {
            return Err(Error::InvalidValue(format!("row count {bad} exceeds width {width}")));
        }
        let area = rows.iter().map(|&l| l as u64).sum();
        if area == 0 {
            return Err(Error::EmptyMask);
        }
        let max_row = rows.iter().copied().max().unwrap_or(0);
        Ok(SilhouetteProfile {
            rows,
            width,
            area,
            max_row,
        })
    }

    /// Foreground count per row, top to bottom, including empty rows.
    pub fn rows(&self) -> &[u32] {
        &self.rows
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    /// Total foreground pixel count.
    pub fn area(&self) -> u64 {
        self.area
    }

    pub fn max_row(&self) -> u32 {
        self.max_row
    }

    /// Rows from the first to the last non-empty one.
    pub fn extent_rows(&self) -> &[u32] {
        let first = self.rows.iter().position(|&l| l > 0).unwrap_or(0);
        let last = self.rows.iter().rposition(|&l| l > 0).unwrap_or(0);
        &self.rows[first..=last]
    }

    /// Height of the tight vertical extent.
    pub fn extent_height(&self) -> usize {
        self.extent_rows().len()
    }
}

pub fn extract_profile(mask: &Mask) -> Result<SilhouetteProfile> {
    let w = mask.width() as usize;
    let rows = mask
        .bits()
        .chunks(w.max(1))
        .map(|row| row.iter().filter(|&&b| b).count() as u32)
        .collect();
    SilhouetteProfile::from_rows(rows, mask.width())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn middle_row() {
        let m = Mask::from_fn(3, 3, |_, y| y == 1);
        let p = extract_profile(&m).unwrap();
        assert_eq!(p.rows(), &[0, 3, 0]);
        assert_eq!((p.area(), p.max_row()), (3, 3));
        assert_eq!(p.extent_rows(), &[3]);
    }

    #[test]
    fn full_mask() {
        let p = extract_profile(&Mask::from_fn(2, 2, |_, _| true)).unwrap();
        assert_eq!(p.rows(), &[2, 2]);
        assert_eq!((p.area(), p.max_row()), (4, 2));
    }

    #[test]
    fn empty_mask_is_error() {
        assert!(matches!(extract_profile(&Mask::new(4, 4)), Err(Error::EmptyMask)));
    }

    #[test]
    fn disk_area_close_to_analytic() {
        let r = 50.0f64;
        let m = Mask::from_fn(120, 120, |x, y| {
            let dx = x as f64 + 0.5 - 60.0;
            let dy = y as f64 + 0.5 - 60.0;
            dx * dx + dy * dy <= r * r
        });
        let p = extract_profile(&m).unwrap();
        let analytic = std::f64::consts::PI * r * r;
        assert!(((p.area() as f64 - analytic) / analytic).abs() < 0.02);
    }

    proptest! {
        #[test]
        fn conservation(w in 1u32..12, h in 1u32..12, seed in any::<u64>()) {
            let m = Mask::from_fn(w, h, |x, y| (seed >> ((x * 7 + y * 3) % 64)) & 1 == 1 || (x == 0 && y == 0));
            let p = extract_profile(&m).unwrap();
            prop_assert_eq!(p.area() as usize, m.count());
            prop_assert_eq!(p.rows().iter().map(|&l| l as u64).sum::<u64>(), p.area());
            prop_assert_eq!(p.max_row(), *p.rows().iter().max().unwrap());
            prop_assert!(p.rows().iter().all(|&l| l <= w));
            prop_assert!(p.max_row() >= 1);
        }
    }
}
