//! Mass and calorie conversion, and ratio-of-sums fitting of the
//! per-food compensation factor and density.

use serde::Serialize;

use crate::dataset::FoodClass;
use crate::error::{Error, Result};

/// One food's estimate next to its reference values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationRecord {
    pub scene_id: String,
    pub food: FoodClass,
    pub est_volume: f64,
    pub ref_volume: Option<f64>,
    pub est_mass: Option<f64>,
    pub ref_mass: Option<f64>,
    pub est_calorie: Option<f64>,
}

impl EstimationRecord {
    pub fn new(scene_id: impl Into<String>, food: FoodClass, est_volume: f64) -> Self {
        EstimationRecord {
            scene_id: scene_id.into(),
            food,
            est_volume,
            ref_volume: None,
            est_mass: None,
            ref_mass: None,
            est_calorie: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FitKind {
    Beta,
    Density,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub food: FoodClass,
    pub kind: FitKind,
    pub value: f64,
    pub n_samples: usize,
}

/// `m = rho * v`
pub fn estimate_mass(volume: f64, rho: f64) -> Result<f64> {
    if !(volume.is_finite() && volume >= 0.0) {
        return Err(Error::InvalidValue(format!("volume must be non-negative, got {volume}")));
    }
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::InvalidValue(format!("density must be positive, got {rho}")));
    }
    Ok(rho * volume)
}

/// `C = c * m`; `energy` is the food's Kcal/g, if known.
pub fn estimate_calorie(food: &FoodClass, mass: f64, energy: Option<f64>) -> Result<f64> {
    let c = energy.ok_or_else(|| Error::MissingEnergy(food.to_string()))?;
    if !(mass.is_finite() && mass >= 0.0) {
        return Err(Error::InvalidValue(format!("mass must be non-negative, got {mass}")));
    }
    if !(c.is_finite() && c >= 0.0) {
        return Err(Error::InvalidValue(format!("energy density must be non-negative, got {c}")));
    }
    Ok(c * mass)
}

fn single_food(records: &[EstimationRecord]) -> Result<&FoodClass> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidValue("fit needs at least one record".into()))?;
    if let Some(other) = records.iter().find(|r| r.food != first.food) {
        return Err(Error::MixedFoods(first.food.to_string(), other.food.to_string()));
    }
    Ok(&first.food)
}

fn require(value: Option<f64>, what: &str, r: &EstimationRecord) -> Result<f64> {
    value.ok_or_else(|| Error::InvalidValue(format!("record ({}, {}) has no {what}", r.scene_id, r.food)))
}

/// `beta = sum(V_ref) / sum(v_est)`, where the estimates were computed with
/// beta = 1.
pub fn fit_beta(records: &[EstimationRecord]) -> Result<FitResult> {
    let food = single_food(records)?;
    let mut sum_ref = 0.0;
    let mut sum_est = 0.0;
    for r in records {
        sum_ref += require(r.ref_volume, "reference volume", r)?;
        sum_est += r.est_volume;
    }
    if !(sum_est > 0.0 && sum_est.is_finite()) {
        return Err(Error::DegenerateFit {
            food: food.to_string(),
            reason: format!("estimated volumes sum to {sum_est}"),
        });
    }
    Ok(FitResult {
        food: food.clone(),
        kind: FitKind::Beta,
        value: sum_ref / sum_est,
        n_samples: records.len(),
    })
}

/// `rho = sum(M_ref) / sum(V_ref)`.
pub fn fit_density(records: &[EstimationRecord]) -> Result<FitResult> {
    let food = single_food(records)?;
    let mut sum_mass = 0.0;
    let mut sum_vol = 0.0;
    for r in records {
        sum_mass += require(r.ref_mass, "reference mass", r)?;
        sum_vol += require(r.ref_volume, "reference volume", r)?;
    }
    if !(sum_vol > 0.0 && sum_vol.is_finite()) {
        return Err(Error::DegenerateFit {
            food: food.to_string(),
            reason: format!("reference volumes sum to {sum_vol}"),
        });
    }
    Ok(FitResult {
        food: food.clone(),
        kind: FitKind::Density,
        value: sum_mass / sum_vol,
        n_samples: records.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(food: &str, v: f64, vref: f64) -> EstimationRecord {
        EstimationRecord {
            ref_volume: Some(vref),
            ..EstimationRecord::new("s", FoodClass::new(food).unwrap(), v)
        }
    }

    fn dens(m: f64, vref: f64) -> EstimationRecord {
        EstimationRecord {
            ref_mass: Some(m),
            ..rec("apple", 0.0, vref)
        }
    }

    #[test]
    fn mass_examples() {
        assert!((estimate_mass(100.0, 0.78).unwrap() - 78.0).abs() < 1e-12);
        assert_eq!(estimate_mass(0.0, 0.78).unwrap(), 0.0);
        assert!((estimate_mass(62.13, 1.17).unwrap() - 72.6921).abs() < 1e-9);
        assert!(estimate_mass(-1.0, 1.0).is_err());
        assert!(estimate_mass(1.0, 0.0).is_err());
    }

    #[test]
    fn calorie_examples() {
        let apple = FoodClass::new("apple").unwrap();
        assert!((estimate_calorie(&apple, 78.0, Some(0.52)).unwrap() - 40.56).abs() < 1e-12);
        assert_eq!(estimate_calorie(&apple, 0.0, Some(0.52)).unwrap(), 0.0);
        assert!(matches!(estimate_calorie(&apple, 10.0, None), Err(Error::MissingEnergy(_))));
    }

    #[test]
    fn beta_examples() {
        let fit = fit_beta(&[rec("apple", 80.0, 100.0), rec("apple", 220.0, 200.0)]).unwrap();
        assert_eq!(fit.value, 1.0);
        assert_eq!(fit.n_samples, 2);
        assert_eq!(fit_beta(&[rec("apple", 50.0, 100.0)]).unwrap().value, 2.0);
        assert!(matches!(
            fit_beta(&[rec("apple", 0.0, 100.0), rec("apple", 0.0, 50.0)]),
            Err(Error::DegenerateFit { .. })
        ));
        assert!(matches!(
            fit_beta(&[rec("apple", 1.0, 1.0), rec("pear", 1.0, 1.0)]),
            Err(Error::MixedFoods(..))
        ));
        assert!(fit_beta(&[]).is_err());
    }

    #[test]
    fn density_examples() {
        assert!((fit_density(&[dens(50.0, 100.0), dens(70.0, 100.0)]).unwrap().value - 0.6).abs() < 1e-15);
        assert!((fit_density(&[dens(78.0, 100.0)]).unwrap().value - 0.78).abs() < 1e-15);
        assert!(matches!(fit_density(&[dens(1.0, 0.0)]), Err(Error::DegenerateFit { .. })));
    }

    #[test]
    fn ratio_of_sums_not_mean_of_ratios() {
        // Mean of ratios would be (2 + 0.5) / 2 = 1.25.
        let fit = fit_beta(&[rec("egg", 10.0, 20.0), rec("egg", 100.0, 50.0)]).unwrap();
        assert!((fit.value - 70.0 / 110.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn homogeneous_in_reference_scale(
            pairs in proptest::collection::vec((1.0f64..500.0, 1.0f64..500.0), 1..20),
            s in 0.1f64..10.0,
        ) {
            let base: Vec<_> = pairs.iter().map(|&(v, r)| rec("bun", v, r)).collect();
            let scaled: Vec<_> = pairs.iter().map(|&(v, r)| rec("bun", v, s * r)).collect();
            let a = fit_beta(&base).unwrap().value;
            let b = fit_beta(&scaled).unwrap().value;
            prop_assert!((b - s * a).abs() <= 1e-12 * b.abs());
        }

        #[test]
        fn refit_matches_reference_sum(
            pairs in proptest::collection::vec((1.0f64..500.0, 1.0f64..500.0), 1..20),
        ) {
            let recs: Vec<_> = pairs.iter().map(|&(v, r)| rec("bun", v, r)).collect();
            let beta = fit_beta(&recs).unwrap().value;
            let est: f64 = recs.iter().map(|r| beta * r.est_volume).sum();
            let reference: f64 = recs.iter().map(|r| r.ref_volume.unwrap()).sum();
            prop_assert!((est - reference).abs() <= 1e-9 * reference);
        }

        #[test]
        fn calorie_of_mass_is_linear_in_volume(v in 0.0f64..1000.0, k in 0.0f64..5.0) {
            let food = FoodClass::new("pear").unwrap();
            let c = |v| estimate_calorie(&food, estimate_mass(v, 0.97).unwrap(), Some(0.57)).unwrap();
            prop_assert!((c(k * v) - k * c(v)).abs() <= 1e-9 * (1.0 + c(k * v).abs()));
        }
    }
}
