//! Browser demo: segmentation, volume formulas and parameter fitting on
//! synthetic scenes, exported through `wasm-bindgen`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

use foodcal::calorimetry::{fit_beta, fit_density, EstimationRecord};
use foodcal::dataset::{FoodClass, ShapeClass, View};
use foodcal::measurement::{scale_factor, shape_volume};
use foodcal::segmentation::{extract_profile, grabcut, largest_component, Mask, SegConfig, SilhouetteProfile};
use foodcal::synth::{render, RenderOptions, ShapeKind, ShapeSpec, SyntheticScene, ViewRender};

const MASK_TINT: [u8; 3] = [0, 170, 255];
const BOX_COLOR: [u8; 3] = [255, 200, 0];

fn scene(shape: &str, scale: f64, noise: f64, seed: u32) -> Result<SyntheticScene, String> {
    let kind: ShapeKind = shape.parse().map_err(|e: foodcal::Error| e.to_string())?;
    let opts = RenderOptions {
        scale,
        noise_sigma: Some(noise).filter(|&n| n > 0.0),
        seed: seed as u64,
        ..RenderOptions::default()
    };
    render(&ShapeSpec::new(kind), &opts).map_err(|e| e.to_string())
}

fn segment(view: &ViewRender, seed: u32) -> Result<Mask, String> {
    let config = SegConfig {
        seed: seed as u64,
        ..SegConfig::default()
    };
    grabcut(&view.raster, &view.food_box, &config)
        .map(|m| largest_component(&m))
        .map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub struct Segmentation {
    width: u32,
    height: u32,
    rgba: Vec<u8>,
    iou: f64,
}

#[wasm_bindgen]
impl Segmentation {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> u32 {
        self.height
    }

    /// Image with the mask tinted and the box outlined, RGBA8.
    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    /// IoU of the mask against the rendered silhouette.
    #[wasm_bindgen(getter)]
    pub fn iou(&self) -> f64 {
        self.iou
    }
}

/// Renders a shape and segments its top (or side) view from the food box.
/// The mask covers the box only.
#[wasm_bindgen]
pub fn segment_scene(shape: &str, side: bool, scale: f64, noise: f64, seed: u32) -> Result<Segmentation, String> {
    let scene = scene(shape, scale, noise, seed)?;
    let view = scene.view(if side { View::Side } else { View::Top });
    let mask = segment(view, seed)?;
    let (w, h) = (view.raster.width(), view.raster.height());
    let b = view.food_box;
    let mut rgba = Vec::with_capacity(4 * w as usize * h as usize);
    for y in 0..h {
        for x in 0..w {
            let on_box = b.contains(x, y)
                && (x == b.x_min || y == b.y_min || x + 1 == b.x_max || y + 1 == b.y_max);
            let p = view.raster.get(x, y);
            let c = if on_box {
                BOX_COLOR
            } else if b.contains(x, y) && mask.get(x - b.x_min, y - b.y_min) {
                [0, 1, 2].map(|i| ((p[i] as u16 + MASK_TINT[i] as u16) / 2) as u8)
            } else {
                p
            };
            rgba.extend_from_slice(&[c[0], c[1], c[2], 255]);
        }
    }
    Ok(Segmentation {
        width: w,
        height: h,
        iou: mask.iou(&view.true_mask.crop(&b).map_err(|e| e.to_string())?),
        rgba,
    })
}

#[wasm_bindgen]
pub struct Volumes {
    true_volume: f64,
    ellipsoid: f64,
    column: f64,
    irregular: f64,
}

#[wasm_bindgen]
impl Volumes {
    #[wasm_bindgen(getter)]
    pub fn true_volume(&self) -> f64 {
        self.true_volume
    }

    #[wasm_bindgen(getter)]
    pub fn ellipsoid(&self) -> f64 {
        self.ellipsoid
    }

    #[wasm_bindgen(getter)]
    pub fn column(&self) -> f64 {
        self.column
    }

    #[wasm_bindgen(getter)]
    pub fn irregular(&self) -> f64 {
        self.irregular
    }
}

/// Segments both views, scales them by the coin and applies every shape
/// formula with beta = 1.
#[wasm_bindgen]
pub fn estimate_volumes(shape: &str, scale: f64, noise: f64, seed: u32) -> Result<Volumes, String> {
    let scene = scene(shape, scale, noise, seed)?;
    let measure = |view: View| -> Result<(SilhouetteProfile, f64), String> {
        let r = scene.view(view);
        let profile = extract_profile(&segment(r, seed)?).map_err(|e| e.to_string())?;
        let alpha = scale_factor(&r.coin_box, RenderOptions::default().coin_diameter_cm, view)
            .map_err(|e| e.to_string())?;
        Ok((profile, alpha.value))
    };
    let (top, alpha_top) = measure(View::Top)?;
    let (side, alpha_side) = measure(View::Side)?;
    let volume = |shape| shape_volume(shape, &top, &side, alpha_top, alpha_side).map_err(|e| e.to_string());
    Ok(Volumes {
        true_volume: scene.true_volume,
        ellipsoid: volume(ShapeClass::Ellipsoid)?,
        column: volume(ShapeClass::Column)?,
        irregular: volume(ShapeClass::Irregular)?,
    })
}

#[wasm_bindgen]
pub struct Fit {
    beta: f64,
    rho: f64,
}

#[wasm_bindgen]
impl Fit {
    #[wasm_bindgen(getter)]
    pub fn beta(&self) -> f64 {
        self.beta
    }

    #[wasm_bindgen(getter)]
    pub fn rho(&self) -> f64 {
        self.rho
    }
}

/// Plants `beta` and `rho` in `n` records with uniform multiplicative noise
/// of up to `noise` and fits them back.
#[wasm_bindgen]
pub fn fit_parameters(beta: f64, rho: f64, noise: f64, n: u32, seed: u32) -> Result<Fit, String> {
    if n == 0 {
        return Err("need at least one record".into());
    }
    if !(0.0..1.0).contains(&noise) {
        return Err("noise must lie in [0, 1)".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let food = FoodClass::new("demo").map_err(|e| e.to_string())?;
    let jitter = |rng: &mut ChaCha8Rng| if noise > 0.0 { 1.0 + rng.random_range(-noise..noise) } else { 1.0 };
    let records: Vec<EstimationRecord> = (0..n)
        .map(|i| {
            let est = rng.random_range(50.0..400.0);
            let volume = beta * est * jitter(&mut rng);
            EstimationRecord {
                ref_volume: Some(volume),
                ref_mass: Some(rho * volume * jitter(&mut rng)),
                ..EstimationRecord::new(format!("s{i}"), food.clone(), est)
            }
        })
        .collect();
    Ok(Fit {
        beta: fit_beta(&records).map_err(|e| e.to_string())?.value,
        rho: fit_density(&records).map_err(|e| e.to_string())?.value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_a_sphere() {
        let s = segment_scene("sphere:r=1.5", false, 40.0, 0.0, 7).unwrap();
        assert_eq!(s.rgba().len(), 4 * (s.width() * s.height()) as usize);
        assert!(s.iou() > 0.97, "iou {}", s.iou());
    }

    #[test]
    fn cylinder_column_volume() {
        let v = estimate_volumes("cylinder:r=1.25,h=2.5", 40.0, 0.0, 1).unwrap();
        assert!((v.column() / v.true_volume() - 1.0).abs() < 0.05);
    }

    #[test]
    fn noiseless_fit_is_exact() {
        let f = fit_parameters(1.3, 0.8, 0.0, 20, 3).unwrap();
        assert!((f.beta() - 1.3).abs() < 1e-12);
        assert!((f.rho() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn bad_inputs_are_reported() {
        assert!(segment_scene("cube", false, 40.0, 0.0, 1).is_err());
        assert!(fit_parameters(1.0, 1.0, 0.1, 0, 1).is_err());
    }
}
