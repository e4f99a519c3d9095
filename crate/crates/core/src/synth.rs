//! Synthetic top/side scenes with analytically known volumes.
//!
//! World axes: x to the right, y away from the camera in the side view, z
//! up. The top view looks down z, the side view looks along y. Both are
//! orthographic and sampled at pixel centres, so mask areas are exact
//! counts of centres inside the projected region.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{
    write_annotations_csv, write_ground_truth_csv, BoundingBox, Detection, FoodClass, GroundTruthRecord, Label,
    SceneAnnotation, View,
};
use crate::error::{Error, Result};
use crate::measurement::DEFAULT_COIN_DIAMETER_CM;
use crate::segmentation::{Mask, Raster};

/// Slices used to integrate revolved profiles.
pub const REVOLVED_SLICES: usize = 20_000;

/// Radius as a function of height above the base, `r(t)` for `t` in
/// `[0, height]`.
#[derive(Clone)]
pub struct RadiusProfile(Arc<dyn Fn(f64) -> f64 + Send + Sync>);

impl RadiusProfile {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        RadiusProfile(Arc::new(f))
    }

    pub fn radius(&self, t: f64) -> f64 {
        (self.0)(t).max(0.0)
    }

    /// Sphere of radius `r` as a profile over `[0, 2r]`.
    pub fn sphere(r: f64) -> Self {
        RadiusProfile::new(move |t| (r * r - (t - r).powi(2)).max(0.0).sqrt())
    }

    /// Rounded, bottom-heavy blob of maximum radius about `r` over `[0, h]`.
    pub fn blob(r: f64, h: f64) -> Self {
        RadiusProfile::new(move |t| {
            let u = (t / h).clamp(0.0, 1.0);
            r * (PI * u).sin().sqrt() * (1.0 - 0.35 * u)
        })
    }
}

impl fmt::Debug for RadiusProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("RadiusProfile(..)")
    }
}

/// Dimensions in centimetres.
#[derive(Debug, Clone)]
pub enum ShapeKind {
    Sphere { r: f64 },
    /// Semi-axes along x, y and z.
    Ellipsoid { a: f64, b: f64, c: f64 },
    /// Vertical axis.
    Cylinder { r: f64, h: f64 },
    /// Vertical prism over a simple polygon in the x-y plane.
    Prism { cross_section: Vec<(f64, f64)>, h: f64 },
    /// Solid of revolution about the vertical axis.
    Revolved { profile: RadiusProfile, height: f64 },
}

/// Parses `sphere:r=1.5`, `ellipsoid:a=2,b=1.5,c=1`, `cylinder:r=1.25,h=2.5`,
/// `box:w=3,d=2,h=1` or `blob:r=2,h=3`.
impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let (name, args) = text.split_once(':').unwrap_or((text, ""));
        let name = name.trim();
        let mut values = BTreeMap::new();
        for part in args.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Synth(format!("expected key=value, got `{part}`")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Synth(format!("bad number in `{part}`")))?;
            values.insert(k.trim().to_string(), v);
        }
        let mut take = |key: &str| {
            values
                .remove(key)
                .ok_or_else(|| Error::Synth(format!("`{name}` needs `{key}=`")))
        };
        let kind = match name {
            "sphere" => ShapeKind::Sphere { r: take("r")? },
            "ellipsoid" => ShapeKind::Ellipsoid {
                a: take("a")?,
                b: take("b")?,
                c: take("c")?,
            },
            "cylinder" => ShapeKind::Cylinder {
                r: take("r")?,
                h: take("h")?,
            },
            "box" => {
                let (w, d) = (take("w")?, take("d")?);
                ShapeKind::Prism {
                    cross_section: vec![(0.0, 0.0), (w, 0.0), (w, d), (0.0, d)],
                    h: take("h")?,
                }
            }
            "blob" => {
                let (r, h) = (take("r")?, take("h")?);
                ShapeKind::Revolved {
                    profile: RadiusProfile::blob(r, h),
                    height: h,
                }
            }
            other => {
                return Err(Error::Synth(format!(
                    "unknown shape `{other}` (sphere, ellipsoid, cylinder, box, blob)"
                )))
            }
        };
        if let Some(k) = values.keys().next() {
            return Err(Error::Synth(format!("unexpected parameter `{k}` for `{name}`")));
        }
        Ok(kind)
    }
}

#[derive(Debug, Clone)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub color: [u8; 3],
    pub background: [u8; 3],
}

impl ShapeSpec {
    pub fn new(kind: ShapeKind) -> Self {
        ShapeSpec {
            kind,
            color: [200, 40, 40],
            background: [245, 245, 245],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Synth(format!("{name} must be positive, got {v}")))
            }
        };
        match &self.kind {
            ShapeKind::Sphere { r } => positive("r", *r),
            ShapeKind::Ellipsoid { a, b, c } => positive("a", *a).and(positive("b", *b)).and(positive("c", *c)),
            ShapeKind::Cylinder { r, h } => positive("r", *r).and(positive("h", *h)),
            ShapeKind::Prism { cross_section, h } => {
                positive("h", *h)?;
                if cross_section.len() < 3 {
                    return Err(Error::Synth("prism cross-section needs at least 3 vertices".into()));
                }
                positive("cross-section area", polygon_area(cross_section))
            }
            ShapeKind::Revolved { height, .. } => positive("height", *height),
        }
    }

    /// Extent of the projection in a view: `(u_min, u_max, v_min, v_max)`
    /// where `u` is x and `v` is y (top) or z (side).
    fn extent(&self, view: View) -> (f64, f64, f64, f64) {
        match (&self.kind, view) {
            (ShapeKind::Sphere { r }, _) => (-r, *r, -r, *r),
            (ShapeKind::Ellipsoid { a, b, .. }, View::Top) => (-a, *a, -b, *b),
            (ShapeKind::Ellipsoid { a, c, .. }, View::Side) => (-a, *a, -c, *c),
            (ShapeKind::Cylinder { r, .. }, View::Top) => (-r, *r, -r, *r),
            (ShapeKind::Cylinder { r, h }, View::Side) => (-r, *r, 0.0, *h),
            (ShapeKind::Prism { cross_section, h }, view) => {
                let (x0, x1, y0, y1) = polygon_bounds(cross_section);
                match view {
                    View::Top => (x0, x1, y0, y1),
                    View::Side => (x0, x1, 0.0, *h),
                }
            }
            (ShapeKind::Revolved { profile, height }, view) => {
                let rmax = max_radius(profile, *height);
                match view {
                    View::Top => (-rmax, rmax, -rmax, rmax),
                    View::Side => (-rmax, rmax, 0.0, *height),
                }
            }
        }
    }

    /// `rmax` is the largest radius of a revolved profile, computed once per
    /// render; other shapes ignore it.
    fn contains(&self, view: View, u: f64, v: f64, rmax: f64) -> bool {
        match (&self.kind, view) {
            (ShapeKind::Sphere { r }, _) => u * u + v * v <= r * r,
            (ShapeKind::Ellipsoid { a, b, .. }, View::Top) => (u / a).powi(2) + (v / b).powi(2) <= 1.0,
            (ShapeKind::Ellipsoid { a, c, .. }, View::Side) => (u / a).powi(2) + (v / c).powi(2) <= 1.0,
            (ShapeKind::Cylinder { r, .. }, View::Top) => u * u + v * v <= r * r,
            (ShapeKind::Cylinder { r, h }, View::Side) => u.abs() <= *r && (0.0..=*h).contains(&v),
            (ShapeKind::Prism { cross_section, .. }, View::Top) => point_in_polygon(cross_section, u, v),
            (ShapeKind::Prism { cross_section, h }, View::Side) => {
                let (x0, x1, _, _) = polygon_bounds(cross_section);
                (x0..=x1).contains(&u) && (0.0..=*h).contains(&v)
            }
            (ShapeKind::Revolved { .. }, View::Top) => u * u + v * v <= rmax * rmax,
            (ShapeKind::Revolved { profile, height }, View::Side) => {
                (0.0..=*height).contains(&v) && u.abs() <= profile.radius(v)
            }
        }
    }
}

fn max_radius(profile: &RadiusProfile, height: f64) -> f64 {
    (0..=REVOLVED_SLICES)
        .map(|i| profile.radius(height * i as f64 / REVOLVED_SLICES as f64))
        .fold(0.0, f64::max)
}

pub fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (x0, y0) = poly[i];
            let (x1, y1) = poly[(i + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum();
    twice.abs() / 2.0
}

fn polygon_bounds(poly: &[(f64, f64)]) -> (f64, f64, f64, f64) {
    poly.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(x0, x1, y0, y1), &(x, y)| (x0.min(x), x1.max(x), y0.min(y), y1.max(y)),
    )
}

fn point_in_polygon(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Closed-form volume, or composite Simpson integration of `pi r(t)^2`
/// over [`REVOLVED_SLICES`] slices for revolved profiles. For profiles
/// whose squared radius has a bounded fourth derivative the quadrature
/// error is below 1e-4 relative.
pub fn oracle_volume(spec: &ShapeSpec) -> f64 {
    match &spec.kind {
        ShapeKind::Sphere { r } => 4.0 / 3.0 * PI * r.powi(3),
        ShapeKind::Ellipsoid { a, b, c } => 4.0 / 3.0 * PI * a * b * c,
        ShapeKind::Cylinder { r, h } => PI * r * r * h,
        ShapeKind::Prism { cross_section, h } => polygon_area(cross_section) * h,
        ShapeKind::Revolved { profile, height } => {
            let n = REVOLVED_SLICES;
            let dt = height / n as f64;
            let area = |t: f64| PI * profile.radius(t).powi(2);
            let mut sum = area(0.0) + area(*height);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                sum += w * area(i as f64 * dt);
            }
            sum * dt / 3.0
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderOptions {
    /// Pixels per centimetre.
    pub scale: f64,
    /// Standard deviation of additive per-channel Gaussian noise.
    pub noise_sigma: Option<f64>,
    pub seed: u64,
    /// Fixed canvas size; computed from the layout when absent.
    pub canvas: Option<(u32, u32)>,
    pub coin_diameter_cm: f64,
    pub coin_color: [u8; 3],
    /// Padding added around the tight food bounds for the food box.
    pub food_padding_px: u32,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            scale: 40.0,
            noise_sigma: None,
            seed: 42,
            canvas: None,
            coin_diameter_cm: DEFAULT_COIN_DIAMETER_CM,
            coin_color: [190, 160, 60],
            food_padding_px: 15,
        }
    }
}

const MARGIN_PX: u32 = 30;
const COIN_GAP_PX: u32 = 40;

#[derive(Debug, Clone)]
pub struct ViewRender {
    pub raster: Raster,
    pub coin_box: BoundingBox,
    pub food_box: BoundingBox,
    /// Exact food mask over the whole raster.
    pub true_mask: Mask,
}

impl ViewRender {
    /// Exact food mask restricted to the food box.
    pub fn box_mask(&self) -> Mask {
        self.true_mask.crop(&self.food_box).expect("food box inside raster")
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub top: ViewRender,
    pub side: ViewRender,
    pub true_volume: f64,
}

impl SyntheticScene {
    pub fn view(&self, view: View) -> &ViewRender {
        match view {
            View::Top => &self.top,
            View::Side => &self.side,
        }
    }

    pub fn annotations(&self, scene_id: &str, food: &FoodClass, dir: &Path) -> Vec<SceneAnnotation> {
        [View::Top, View::Side]
            .into_iter()
            .map(|view| {
                let r = self.view(view);
                SceneAnnotation {
                    scene_id: scene_id.to_string(),
                    view,
                    image_path: dir.join(format!("{view}.png")),
                    detections: vec![
                        Detection {
                            bbox: r.food_box,
                            label: Label::Food(food.clone()),
                            score: 1.0,
                        },
                        Detection {
                            bbox: r.coin_box,
                            label: Label::Calibration,
                            score: 1.0,
                        },
                    ],
                }
            })
            .collect()
    }

    /// Writes `top.png`, `side.png`, `annotations.csv` and `truth.csv`.
    pub fn write_dir(&self, dir: &Path, scene_id: &str, food: &FoodClass, density: f64) -> Result<()> {
        if !(density.is_finite() && density > 0.0) {
            return Err(Error::Synth(format!("density must be positive, got {density}")));
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.top.raster.save_png(&dir.join("top.png"))?;
        self.side.raster.save_png(&dir.join("side.png"))?;
        let ann_path = dir.join("annotations.csv");
        let file = fs::File::create(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
        write_annotations_csv(&self.annotations(scene_id, food, dir), file)?;
        let truth_path = dir.join("truth.csv");
        let file = fs::File::create(&truth_path).map_err(|e| Error::io(&truth_path, e))?;
        write_ground_truth_csv(
            &[GroundTruthRecord {
                scene_id: scene_id.to_string(),
                food: food.clone(),
                volume: self.true_volume,
                mass: density * self.true_volume,
            }],
            file,
        )?;
        Ok(())
    }
}

fn bounds_of(mask: &Mask) -> Option<BoundingBox> {
    let mut b: Option<(u32, u32, u32, u32)> = None;
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                b = Some(match b {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
    }
    b.map(|(x0, y0, x1, y1)| BoundingBox {
        x_min: x0,
        y_min: y0,
        x_max: x1 + 1,
        y_max: y1 + 1,
    })
}

fn render_view(spec: &ShapeSpec, view: View, opts: &RenderOptions, seed: u64) -> Result<ViewRender> {
    let s = opts.scale;
    let (u0, u1, v0, v1) = spec.extent(view);
    let rmax = match &spec.kind {
        ShapeKind::Revolved { profile, height } => max_radius(profile, *height),
        _ => 0.0,
    };
    let food_w = ((u1 - u0) * s).ceil() as u32 + 1;
    let food_h = ((v1 - v0) * s).ceil() as u32 + 1;
    let coin_d = (opts.coin_diameter_cm * s).ceil() as u32;
    let pad = opts.food_padding_px;

    let needed_w = 2 * MARGIN_PX + pad + food_w + COIN_GAP_PX + coin_d;
    let needed_h = 2 * (MARGIN_PX + pad) + food_h.max(coin_d);
    let (width, height) = match opts.canvas {
        Some((w, h)) if w < needed_w || h < needed_h => {
            return Err(Error::Synth(format!(
                "{view} view needs a {needed_w}x{needed_h} canvas, got {w}x{h}"
            )))
        }
        Some(c) => c,
        None => (needed_w, needed_h),
    };

    // Pixel position of the extent's left/top corner.
    let ox = (MARGIN_PX + pad) as f64;
    let oy = ((height - food_h) / 2) as f64;
    let coin_r = opts.coin_diameter_cm * s / 2.0;
    let coin_cx = (MARGIN_PX + pad + food_w + COIN_GAP_PX) as f64 + coin_r.round();
    let coin_cy = (height / 2) as f64;

    let food = Mask::from_fn(width, height, |x, y| {
        let u = u0 + (x as f64 + 0.5 - ox) / s;
        // Image rows grow downward; v grows upward in the side view and
        // along +y in the top view.
        let v = match view {
            View::Side => v1 - (y as f64 + 0.5 - oy) / s,
            View::Top => v0 + (y as f64 + 0.5 - oy) / s,
        };
        spec.contains(view, u, v, rmax)
    });
    let coin = Mask::from_fn(width, height, |x, y| {
        let dx = x as f64 + 0.5 - coin_cx;
        let dy = y as f64 + 0.5 - coin_cy;
        dx * dx + dy * dy <= coin_r * coin_r
    });

    let tight = bounds_of(&food).ok_or_else(|| Error::Synth(format!("{view} projection is empty")))?;
    let coin_box = bounds_of(&coin).ok_or_else(|| Error::Synth("coin is empty".into()))?;
    let food_box = BoundingBox {
        x_min: tight.x_min.saturating_sub(pad),
        y_min: tight.y_min.saturating_sub(pad),
        x_max: (tight.x_max + pad).min(width),
        y_max: (tight.y_max + pad).min(height),
    };

    let mut pixels = Vec::with_capacity(width as usize * height as usize);
    for (&f, &c) in food.bits().iter().zip(coin.bits()) {
        pixels.push(if f {
            spec.color
        } else if c {
            opts.coin_color
        } else {
            spec.background
        });
    }
    if let Some(sigma) = opts.noise_sigma.filter(|&s| s > 0.0) {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::Synth(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut pixels {
            for ch in p.iter_mut() {
                *ch = (*ch as f64 + normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8;
            }
        }
    }

    Ok(ViewRender {
        raster: Raster::new(width, height, pixels)?,
        coin_box,
        food_box,
        true_mask: food,
    })
}

/// Renders the top and side views of `spec` with a coin beside the food.
pub fn render(spec: &ShapeSpec, opts: &RenderOptions) -> Result<SyntheticScene> {
    spec.validate()?;
    if opts.scale.is_nan() || opts.scale < 10.0 {
        return Err(Error::Synth(format!("scale must be at least 10 px/cm, got {}", opts.scale)));
    }
    Ok(SyntheticScene {
        top: render_view(spec, View::Top, opts, opts.seed)?,
        side: render_view(spec, View::Side, opts, opts.seed.wrapping_add(1))?,
        true_volume: oracle_volume(spec),
    })
}
