//! Coin-based scale factors, top/side pairing and the shape-class volume
//! formulas.

use std::cmp::Ordering;
use std::f64::consts::PI;

use serde::Serialize;

use crate::dataset::{BoundingBox, Detection, FoodClass, FoodParams, ShapeClass, View};
use crate::error::{Error, Result};
use crate::segmentation::SilhouetteProfile;

/// Diameter of the reference coin in centimetres.
pub const DEFAULT_COIN_DIAMETER_CM: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaleFactor {
    /// Centimetres per pixel.
    pub value: f64,
    pub view: View,
}

/// Highest-scoring calibration detection. Ties prefer the smaller box, then
/// the leftmost one.
pub fn select_calibration(detections: &[Detection]) -> Result<&Detection> {
    detections
        .iter()
        .filter(|d| d.is_calibration())
        .min_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then(a.bbox.area().cmp(&b.bbox.area()))
                .then(a.bbox.x_min.cmp(&b.bbox.x_min))
        })
        .ok_or(Error::MissingCalibration)
}

/// `diameter / ((W + H) / 2)` for the coin's box.
pub fn scale_factor(coin: &BoundingBox, diameter_cm: f64, view: View) -> Result<ScaleFactor> {
    if !(diameter_cm.is_finite() && diameter_cm > 0.0) {
        return Err(Error::InvalidValue(format!("coin diameter must be positive, got {diameter_cm}")));
    }
    let mean_side = (coin.width() as f64 + coin.height() as f64) / 2.0;
    Ok(ScaleFactor {
        value: diameter_cm / mean_side,
        view,
    })
}

/// Index-level result of pairing top entries with side entries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Matching {
    /// `(top index, side index)` in pairing order.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_top: Vec<usize>,
    pub unmatched_side: Vec<usize>,
}

fn score_order(entries: &[(FoodClass, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| entries[b].1.partial_cmp(&entries[a].1).unwrap_or(Ordering::Equal));
    order
}

/// Greedy pairing by food class. Top entries are visited by descending
/// score and each takes the highest-scoring unused side entry of the same
/// class; a side entry is used at most once.
pub fn match_views(top: &[(FoodClass, f64)], side: &[(FoodClass, f64)]) -> Matching {
    let side_order = score_order(side);
    let mut used = vec![false; side.len()];
    let mut out = Matching::default();
    for t in score_order(top) {
        let hit = side_order
            .iter()
            .copied()
            .find(|&s| !used[s] && side[s].0 == top[t].0);
        match hit {
            Some(s) => {
                used[s] = true;
                out.pairs.push((t, s));
            }
            None => out.unmatched_top.push(t),
        }
    }
    out.unmatched_side = side_order.into_iter().filter(|&s| !used[s]).collect();
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub food: FoodClass,
    pub top: SilhouetteProfile,
    pub side: SilhouetteProfile,
    pub alpha_top: ScaleFactor,
    pub alpha_side: ScaleFactor,
}

impl ViewPair {
    pub fn new(
        food: FoodClass,
        top: SilhouetteProfile,
        side: SilhouetteProfile,
        alpha_top: ScaleFactor,
        alpha_side: ScaleFactor,
    ) -> Result<Self> {
        if alpha_top.view != View::Top || alpha_side.view != View::Side {
            return Err(Error::InvalidValue("scale factors do not match their views".into()));
        }
        Ok(ViewPair {
            food,
            top,
            side,
            alpha_top,
            alpha_side,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolumeEstimate {
    pub food: FoodClass,
    pub shape: ShapeClass,
    /// cm³
    pub volume: f64,
    pub beta_applied: f64,
}

/// Volume with β = 1.
pub fn shape_volume(shape: ShapeClass, top: &SilhouetteProfile, side: &SilhouetteProfile, alpha_top: f64, alpha_side: f64) -> Result<f64> {
    let rows = side.extent_rows();
    Ok(match shape {
        ShapeClass::Ellipsoid => {
            let sum_sq: f64 = rows.iter().map(|&l| (l as f64).powi(2)).sum();
            PI / 4.0 * sum_sq * alpha_side.powi(3)
        }
        ShapeClass::Column => {
            let top_area = top.area() as f64 * alpha_top.powi(2);
            top_area * rows.len() as f64 * alpha_side
        }
        ShapeClass::Irregular => {
            let max = side.max_row();
            if max == 0 {
                return Err(Error::EmptyMask);
            }
            let top_area = top.area() as f64 * alpha_top.powi(2);
            let rel: f64 = rows.iter().map(|&l| (l as f64 / max as f64).powi(2)).sum();
            top_area * rel * alpha_side
        }
    })
}

pub fn estimate_volume(pair: &ViewPair, params: &FoodParams) -> Result<VolumeEstimate> {
    estimate_volume_with_beta(pair, params.shape, params.beta)
}

pub fn estimate_volume_with_beta(pair: &ViewPair, shape: ShapeClass, beta: f64) -> Result<VolumeEstimate> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::InvalidValue(format!("beta must be positive, got {beta}")));
    }
    let raw = shape_volume(shape, &pair.top, &pair.side, pair.alpha_top.value, pair.alpha_side.value)?;
    Ok(VolumeEstimate {
        food: pair.food.clone(),
        shape,
        volume: beta * raw,
        beta_applied: beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Label;
    use crate::segmentation::{extract_profile, Mask};
    use proptest::prelude::*;

    fn food(name: &str) -> FoodClass {
        FoodClass::new(name).unwrap()
    }

    fn coin(score: f64, x: u32, size: u32) -> Detection {
        Detection::new(BoundingBox::new(x, 0, x + size, size).unwrap(), Label::Calibration, score).unwrap()
    }

    fn disk(r: f64) -> Mask {
        let n = (2.0 * r).ceil() as u32 + 4;
        let c = n as f64 / 2.0;
        Mask::from_fn(n, n, |x, y| {
            let dx = x as f64 + 0.5 - c;
            let dy = y as f64 + 0.5 - c;
            dx * dx + dy * dy <= r * r
        })
    }

    fn scale(value: f64, view: View) -> ScaleFactor {
        ScaleFactor { value, view }
    }

    #[test]
    fn calibration_selection() {
        let apple = Detection::new(
            BoundingBox::new(0, 0, 5, 5).unwrap(),
            Label::Food(food("apple")),
            0.99,
        )
        .unwrap();
        let dets = vec![apple.clone(), coin(0.7, 0, 10), coin(0.95, 20, 10)];
        assert_eq!(select_calibration(&dets).unwrap().score, 0.95);
        assert_eq!(select_calibration(&dets[1..2]).unwrap(), &dets[1]);
        assert!(matches!(select_calibration(&[apple]), Err(Error::MissingCalibration)));

        let ties = vec![coin(0.9, 30, 12), coin(0.9, 50, 10), coin(0.9, 10, 10)];
        assert_eq!(select_calibration(&ties).unwrap().bbox.x_min, 10);
    }

    #[test]
    fn scale_factor_arithmetic() {
        let f = |w, h| scale_factor(&BoundingBox::new(0, 0, w, h).unwrap(), 2.5, View::Side).unwrap().value;
        assert!((f(100, 100) - 0.025).abs() < 1e-15);
        assert!((f(90, 110) - 0.025).abs() < 1e-15);
        assert!((f(250, 250) - 0.01).abs() < 1e-15);
        assert!(scale_factor(&BoundingBox::new(0, 0, 4, 4).unwrap(), 0.0, View::Top).is_err());
    }

    #[test]
    fn matching_examples() {
        let a = || (food("apple"), 0.9);
        let b = || (food("banana"), 0.8);

        let m = match_views(&[a()], &[a()]);
        assert_eq!(m.pairs, vec![(0, 0)]);
        assert!(m.unmatched_top.is_empty() && m.unmatched_side.is_empty());

        let m = match_views(&[a(), b()], &[b()]);
        assert_eq!(m.pairs, vec![(1, 0)]);
        assert_eq!(m.unmatched_top, vec![0]);

        let m = match_views(&[a(), (food("apple"), 0.5)], &[a()]);
        assert_eq!(m.pairs.len(), 1);
        assert_eq!(m.unmatched_top, vec![1]);
    }

    #[test]
    fn matching_prefers_high_scores() {
        let top = vec![(food("apple"), 0.3), (food("apple"), 0.9)];
        let side = vec![(food("apple"), 0.2), (food("apple"), 0.8)];
        let m = match_views(&top, &side);
        assert_eq!(m.pairs, vec![(1, 1), (0, 0)]);
    }

    #[test]
    fn column_on_cylinder() {
        // Top: rasterised disk r = 50 px; side: 100 full rows.
        let top = extract_profile(&disk(50.0)).unwrap();
        let side = extract_profile(&Mask::from_fn(100, 100, |_, _| true)).unwrap();
        let v = shape_volume(ShapeClass::Column, &top, &side, 0.025, 0.025).unwrap();
        let expected = top.area() as f64 * 0.000625 * 2.5;
        assert!((v - expected).abs() < 1e-9);
        let analytic = PI * 1.25f64.powi(2) * 2.5;
        assert!((v - analytic).abs() / analytic < 0.005, "{v} vs {analytic}");
    }

    #[test]
    fn column_ignores_empty_border_rows() {
        let top = extract_profile(&Mask::from_fn(10, 10, |_, _| true)).unwrap();
        let side = extract_profile(&Mask::from_fn(10, 30, |_, y| (10..20).contains(&y))).unwrap();
        let v = shape_volume(ShapeClass::Column, &top, &side, 1.0, 1.0).unwrap();
        assert_eq!(v, 1000.0);
    }

    #[test]
    fn sphere_formulas() {
        let profile = extract_profile(&disk(60.0)).unwrap();
        let analytic = 4.0 / 3.0 * PI * (60.0f64 * 0.025).powi(3);
        let ell = shape_volume(ShapeClass::Ellipsoid, &profile, &profile, 0.025, 0.025).unwrap();
        let irr = shape_volume(ShapeClass::Irregular, &profile, &profile, 0.025, 0.025).unwrap();
        assert!((ell - analytic).abs() / analytic < 0.02, "ellipsoid {ell}");
        assert!((irr - analytic).abs() / analytic < 0.02, "irregular {irr}");
        assert!((ell - irr).abs() / ell < 0.01);
    }

    #[test]
    fn invalid_beta_rejected() {
        let p = extract_profile(&disk(5.0)).unwrap();
        let pair = ViewPair::new(food("egg"), p.clone(), p, scale(0.1, View::Top), scale(0.1, View::Side)).unwrap();
        assert!(estimate_volume_with_beta(&pair, ShapeClass::Ellipsoid, 0.0).is_err());
        assert!(ViewPair::new(
            food("egg"),
            pair.top.clone(),
            pair.side.clone(),
            scale(0.1, View::Side),
            scale(0.1, View::Side)
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn linear_in_beta(
            rows in proptest::collection::vec(0u32..20, 1..15),
            top_rows in proptest::collection::vec(1u32..20, 1..10),
            beta in 0.1f64..3.0,
            at in 0.01f64..0.1,
            as_ in 0.01f64..0.1,
        ) {
            prop_assume!(rows.iter().any(|&l| l > 0));
            let side = SilhouetteProfile::from_rows(rows, 20).unwrap();
            let top = SilhouetteProfile::from_rows(top_rows, 20).unwrap();
            let pair = ViewPair::new(food("pear"), top, side, scale(at, View::Top), scale(as_, View::Side)).unwrap();
            for shape in ShapeClass::ALL {
                let one = estimate_volume_with_beta(&pair, shape, 1.0).unwrap().volume;
                let scaled = estimate_volume_with_beta(&pair, shape, beta).unwrap().volume;
                prop_assert_eq!(scaled, beta * one);
            }
        }

        #[test]
        fn matching_accounting(
            top in proptest::collection::vec((0usize..3, 0.0f64..1.0), 0..8),
            side in proptest::collection::vec((0usize..3, 0.0f64..1.0), 0..8),
        ) {
            let names = ["apple", "banana", "egg"];
            let top: Vec<_> = top.into_iter().map(|(f, s)| (food(names[f]), s)).collect();
            let side: Vec<_> = side.into_iter().map(|(f, s)| (food(names[f]), s)).collect();
            let m = match_views(&top, &side);
            let mut seen_top = vec![0; top.len()];
            let mut seen_side = vec![0; side.len()];
            for &(t, s) in &m.pairs {
                prop_assert_eq!(&top[t].0, &side[s].0);
                seen_top[t] += 1;
                seen_side[s] += 1;
            }
            for &t in &m.unmatched_top { seen_top[t] += 1; }
            for &s in &m.unmatched_side { seen_side[s] += 1; }
            prop_assert!(seen_top.iter().all(|&c| c == 1));
            prop_assert!(seen_side.iter().all(|&c| c == 1));
        }
    }
}
