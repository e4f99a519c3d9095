//! Fully automatic GrabCut initialised from a detection box.
//!
//! The image is cropped to the box plus a padding ring, optionally
//! downscaled, and labelled by alternating (a) per-pixel component
//! assignment, (b) GMM re-estimation and (c) an exact min-cut over the
//! pixels strictly inside the box. Everything outside the box interior is
//! fixed background.

use serde::{Deserialize, Serialize};

use super::gmm::{kmeans, regularization, Gmm, Rgb};
use super::maxflow::{min_cut, FlowGraph};
use super::{Mask, Raster};
use crate::dataset::BoundingBox;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct SegConfig {
    /// Longest side of the working crop; larger crops are area-downscaled.
    pub max_side: u32,
    /// Smoothness weight.
    pub gamma: f64,
    /// Mixture components per model.
    pub components: usize,
    /// Maximum outer iterations.
    pub iterations: usize,
    pub seed: u64,
    /// Crop padding around the box as a fraction of the box size.
    pub padding: f64,
    /// Stop when the relative energy decrease falls below this.
    pub tolerance: f64,
}

impl Default for SegConfig {
    fn default() -> Self {
        SegConfig {
            max_side: 600,
            gamma: 50.0,
            components: 5,
            iterations: 5,
            seed: 42,
            padding: 0.10,
            tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrimapState {
    DefiniteBackground,
    ProbableBackground,
    ProbableForeground,
    DefiniteForeground,
}

impl TrimapState {
    pub fn is_foreground(self) -> bool {
        matches!(self, TrimapState::ProbableForeground | TrimapState::DefiniteForeground)
    }

    fn is_fixed(self) -> bool {
        matches!(self, TrimapState::DefiniteBackground | TrimapState::DefiniteForeground)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trimap {
    width: u32,
    height: u32,
    states: Vec<TrimapState>,
}

impl Trimap {
    /// Probable foreground strictly inside `bbox`, definite background on
    /// the box border and everywhere outside it.
    pub fn from_box(width: u32, height: u32, bbox: &BoundingBox) -> Trimap {
        let mut states = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                let interior = x > bbox.x_min && x + 1 < bbox.x_max && y > bbox.y_min && y + 1 < bbox.y_max;
                states.push(if interior {
                    TrimapState::ProbableForeground
                } else {
                    TrimapState::DefiniteBackground
                });
            }
        }
        Trimap { width, height, states }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> TrimapState {
        self.states[y as usize * self.width as usize + x as usize]
    }

    pub fn states(&self) -> &[TrimapState] {
        &self.states
    }
}

#[derive(Debug, Clone)]
pub struct GrabCutOutcome {
    /// Foreground over the box region at input resolution.
    pub mask: Mask,
    /// Energy of the initial labelling followed by one entry per completed
    /// outer iteration.
    pub energies: Vec<f64>,
    /// Downscale factor applied to the crop (1 when none).
    pub scale: f64,
}

pub fn grabcut(image: &Raster, bbox: &BoundingBox, config: &SegConfig) -> Result<Mask> {
    grabcut_detailed(image, bbox, config).map(|o| o.mask)
}

struct Neighbor {
    a: usize,
    b: usize,
    weight: f64,
}

/// 8-connected neighbour pairs with contrast-sensitive weights.
fn neighbor_weights(pixels: &[Rgb], w: usize, h: usize, gamma: f64) -> Vec<Neighbor> {
    let mut pairs = Vec::with_capacity(4 * w * h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                pairs.push((i, i + 1, 1.0));
            }
            if y + 1 < h {
                pairs.push((i, i + w, 1.0));
                if x + 1 < w {
                    pairs.push((i, i + w + 1, std::f64::consts::SQRT_2));
                }
                if x > 0 {
                    pairs.push((i, i + w - 1, std::f64::consts::SQRT_2));
                }
            }
        }
    }
    let diff2 = |a: usize, b: usize| {
        let (p, q) = (&pixels[a], &pixels[b]);
        (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)
    };
    let mean = if pairs.is_empty() {
        0.0
    } else {
        pairs.iter().map(|&(a, b, _)| diff2(a, b)).sum::<f64>() / pairs.len() as f64
    };
    let beta = if mean > 0.0 { 1.0 / (2.0 * mean) } else { 0.0 };
    pairs
        .into_iter()
        .map(|(a, b, dist)| Neighbor {
            a,
            b,
            weight: gamma / dist * (-beta * diff2(a, b)).exp(),
        })
        .collect()
}

fn energy(fg: &[bool], data_fg: &[f64], data_bg: &[f64], neighbors: &[Neighbor]) -> f64 {
    let data: f64 = fg
        .iter()
        .enumerate()
        .map(|(i, &f)| if f { data_fg[i] } else { data_bg[i] })
        .sum();
    let smooth: f64 = neighbors.iter().filter(|n| fg[n.a] != fg[n.b]).map(|n| n.weight).sum();
    data + smooth
}

fn fit_models(pixels: &[Rgb], fg: &[bool], k: usize, seed: u64, eps: f64) -> Result<(Gmm, Gmm)> {
    let (fg_px, bg_px): (Vec<Rgb>, Vec<Rgb>) = {
        let mut f = Vec::new();
        let mut b = Vec::new();
        for (p, &is_fg) in pixels.iter().zip(fg) {
            if is_fg {
                f.push(*p)
            } else {
                b.push(*p)
            }
        }
        (f, b)
    };
    if fg_px.is_empty() || bg_px.is_empty() {
        return Err(Error::DegenerateSegmentation("no pixels to initialise a colour model".into()));
    }
    let (fa, fk) = kmeans(&fg_px, k.min(fg_px.len()), seed);
    let (ba, bk) = kmeans(&bg_px, k.min(bg_px.len()), seed.wrapping_add(1));
    Ok((
        Gmm::from_assignments(&fg_px, &fa, fk, eps),
        Gmm::from_assignments(&bg_px, &ba, bk, eps),
    ))
}

/// Re-estimates both models from the current labelling via hard component
/// assignment.
fn refit(pixels: &[Rgb], fg: &[bool], fg_model: &Gmm, bg_model: &Gmm, eps: f64) -> Result<(Gmm, Gmm)> {
    let mut fg_px = Vec::new();
    let mut bg_px = Vec::new();
    for (p, &is_fg) in pixels.iter().zip(fg) {
        if is_fg {
            fg_px.push(*p);
        } else {
            bg_px.push(*p);
        }
    }
    if fg_px.is_empty() {
        return Err(Error::DegenerateSegmentation("foreground vanished".into()));
    }
    let (fa, _) = fg_model.assign(&fg_px);
    let (ba, _) = bg_model.assign(&bg_px);
    Ok((
        Gmm::from_assignments(&fg_px, &fa, fg_model.len(), eps),
        Gmm::from_assignments(&bg_px, &ba, bg_model.len(), eps),
    ))
}

fn data_terms(pixels: &[Rgb], model: &Gmm) -> Vec<f64> {
    pixels.iter().map(|p| model.best_component(p).1).collect()
}

pub fn grabcut_detailed(image: &Raster, bbox: &BoundingBox, config: &SegConfig) -> Result<GrabCutOutcome> {
    bbox.check_within(image.width(), image.height())?;
    if bbox.area() < 16 {
        return Err(Error::InvalidBox(format!("box area {} is below 16 pixels", bbox.area())));
    }
    if bbox.width() == image.width() && bbox.height() == image.height() {
        return Err(Error::DegenerateSegmentation(
            "box covers the entire image, no background is available".into(),
        ));
    }
    if config.components == 0 || config.max_side == 0 {
        return Err(Error::InvalidValue("segmentation needs at least one component and a positive max side".into()));
    }

    let pad_x = (config.padding * bbox.width() as f64).ceil() as u32;
    let pad_y = (config.padding * bbox.height() as f64).ceil() as u32;
    let crop = BoundingBox {
        x_min: bbox.x_min.saturating_sub(pad_x.max(1)),
        y_min: bbox.y_min.saturating_sub(pad_y.max(1)),
        x_max: (bbox.x_max + pad_x.max(1)).min(image.width()),
        y_max: (bbox.y_max + pad_y.max(1)).min(image.height()),
    };
    let full = image.crop(&crop)?;

    let longest = crop.width().max(crop.height());
    let scale = if longest > config.max_side {
        config.max_side as f64 / longest as f64
    } else {
        1.0
    };
    let (work, local_box) = if scale < 1.0 {
        let w = ((crop.width() as f64 * scale).round() as u32).max(1);
        let h = ((crop.height() as f64 * scale).round() as u32).max(1);
        let sx = w as f64 / crop.width() as f64;
        let sy = h as f64 / crop.height() as f64;
        let b = BoundingBox {
            x_min: ((bbox.x_min - crop.x_min) as f64 * sx).floor() as u32,
            y_min: ((bbox.y_min - crop.y_min) as f64 * sy).floor() as u32,
            x_max: (((bbox.x_max - crop.x_min) as f64 * sx).ceil() as u32).min(w),
            y_max: (((bbox.y_max - crop.y_min) as f64 * sy).ceil() as u32).min(h),
        };
        (full.resize_area(w, h), b)
    } else {
        let b = BoundingBox {
            x_min: bbox.x_min - crop.x_min,
            y_min: bbox.y_min - crop.y_min,
            x_max: bbox.x_max - crop.x_min,
            y_max: bbox.y_max - crop.y_min,
        };
        (full, b)
    };

    let (w, h) = (work.width() as usize, work.height() as usize);
    let trimap = Trimap::from_box(work.width(), work.height(), &local_box);
    let pixels: Vec<Rgb> = work.pixels().iter().map(|p| p.map(f64::from)).collect();
    let neighbors = neighbor_weights(&pixels, w, h, config.gamma);
    let eps = regularization(&pixels);

    // Unknown pixels become graph nodes; fixed ones are folded into
    // terminal capacities.
    let mut node_of = vec![usize::MAX; w * h];
    let mut unknown = Vec::new();
    for (i, s) in trimap.states().iter().enumerate() {
        if !s.is_fixed() {
            node_of[i] = unknown.len();
            unknown.push(i);
        }
    }
    if unknown.is_empty() {
        return Err(Error::DegenerateSegmentation("box has no interior pixels".into()));
    }

    let mut fg: Vec<bool> = trimap.states().iter().map(|s| s.is_foreground()).collect();
    let (mut fg_model, mut bg_model) = fit_models(&pixels, &fg, config.components, config.seed, eps)?;
    let mut energies = vec![energy(
        &fg,
        &data_terms(&pixels, &fg_model),
        &data_terms(&pixels, &bg_model),
        &neighbors,
    )];

    for _ in 0..config.iterations {
        let (new_fg_model, new_bg_model) = refit(&pixels, &fg, &fg_model, &bg_model, eps)?;
        let data_fg = data_terms(&pixels, &new_fg_model);
        let data_bg = data_terms(&pixels, &new_bg_model);

        let mut graph = FlowGraph::with_edge_capacity(unknown.len(), 4 * unknown.len());
        let mut source_cap = vec![0.0f64; unknown.len()];
        let mut sink_cap = vec![0.0f64; unknown.len()];
        for (node, &i) in unknown.iter().enumerate() {
            // Source side is foreground: cutting the source link means
            // paying the background cost and vice versa.
            let m = data_fg[i].min(data_bg[i]);
            source_cap[node] = data_bg[i] - m;
            sink_cap[node] = data_fg[i] - m;
        }
        for n in &neighbors {
            match (node_of[n.a], node_of[n.b]) {
                (usize::MAX, usize::MAX) => {}
                (a, usize::MAX) => {
                    if fg[n.b] {
                        source_cap[a] += n.weight;
                    } else {
                        sink_cap[a] += n.weight;
                    }
                }
                (usize::MAX, b) => {
                    if fg[n.a] {
                        source_cap[b] += n.weight;
                    } else {
                        sink_cap[b] += n.weight;
                    }
                }
                (a, b) => graph.add_edge(a, b, n.weight, n.weight)?,
            }
        }
        for node in 0..unknown.len() {
            graph.add_terminal(node, source_cap[node], sink_cap[node])?;
        }
        let cut = min_cut(&graph)?;

        let mut next = fg.clone();
        for (node, &i) in unknown.iter().enumerate() {
            next[i] = cut.source_side[node];
        }
        let e = energy(&next, &data_fg, &data_bg, &neighbors);
        let prev = *energies.last().expect("initial energy");
        if e > prev + 1e-9 * prev.abs() {
            // Regularised re-estimation can nudge the energy up; keep the
            // previous labelling.
            break;
        }
        fg = next;
        fg_model = new_fg_model;
        bg_model = new_bg_model;
        energies.push(e);
        if !fg.iter().any(|&f| f) {
            break;
        }
        if prev - e < config.tolerance * prev.abs() {
            break;
        }
    }

    let local = Mask::from_fn(local_box.width(), local_box.height(), |x, y| {
        fg[(local_box.y_min + y) as usize * w + (local_box.x_min + x) as usize]
    });
    let mut mask = if scale < 1.0 {
        local.resize_nearest(bbox.width(), bbox.height())
    } else {
        local
    };
    let (bw, bh) = (bbox.width(), bbox.height());
    for x in 0..bw {
        mask.set(x, 0, false);
        mask.set(x, bh - 1, false);
    }
    for y in 0..bh {
        mask.set(0, y, false);
        mask.set(bw - 1, y, false);
    }
    if mask.is_empty() {
        return Err(Error::DegenerateSegmentation(format!(
            "no foreground left after {} iteration(s); energies {:?}",
            energies.len() - 1,
            energies
        )));
    }
    Ok(GrabCutOutcome { mask, energies, scale })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk_scene(size: u32, cx: f64, cy: f64, r: f64, fg: [u8; 3], bg: [u8; 3]) -> (Raster, Mask) {
        let inside = |x: u32, y: u32| {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            dx * dx + dy * dy <= r * r
        };
        let mut raster = Raster::filled(size, size, bg).unwrap();
        for y in 0..size {
            for x in 0..size {
                if inside(x, y) {
                    raster.set(x, y, fg);
                }
            }
        }
        (raster, Mask::from_fn(size, size, inside))
    }

    #[test]
    fn red_disk_on_white() {
        let (img, truth) = disk_scene(200, 100.0, 100.0, 60.0, [220, 30, 30], [255, 255, 255]);
        let bbox = BoundingBox::new(25, 25, 175, 175).unwrap();
        let out = grabcut_detailed(&img, &bbox, &SegConfig::default()).unwrap();
        let iou = out.mask.iou(&truth.crop(&bbox).unwrap());
        assert!(iou >= 0.99, "iou {iou}");
        for w in out.energies.windows(2) {
            assert!(w[1] <= w[0] + 1e-6 * w[0].abs());
        }
    }

    #[test]
    fn black_square_with_five_pixel_margin() {
        let mut img = Raster::filled(120, 120, [255, 255, 255]).unwrap();
        for y in 40..80 {
            for x in 30..90 {
                img.set(x, y, [0, 0, 0]);
            }
        }
        let bbox = BoundingBox::new(25, 35, 95, 85).unwrap();
        let mask = grabcut(&img, &bbox, &SegConfig::default()).unwrap();
        let mut wrong = 0;
        for y in 0..bbox.height() {
            for x in 0..bbox.width() {
                let (gx, gy) = (x + bbox.x_min, y + bbox.y_min);
                let truth = (30..90).contains(&gx) && (40..80).contains(&gy);
                if mask.get(x, y) != truth {
                    let near_edge = [gx.abs_diff(30), gx.abs_diff(89), gy.abs_diff(40), gy.abs_diff(79)]
                        .iter()
                        .any(|&d| d <= 1);
                    assert!(near_edge, "pixel ({gx},{gy}) wrong away from boundary");
                    wrong += 1;
                }
            }
        }
        assert!(wrong < 20, "{wrong} boundary errors");
    }

    #[test]
    fn uniform_image_is_degenerate() {
        let img = Raster::filled(60, 60, [128, 128, 128]).unwrap();
        let bbox = BoundingBox::new(10, 10, 50, 50).unwrap();
        assert!(matches!(
            grabcut(&img, &bbox, &SegConfig::default()),
            Err(Error::DegenerateSegmentation(_))
        ));
    }

    #[test]
    fn whole_image_box_rejected() {
        let img = Raster::filled(30, 30, [1, 2, 3]).unwrap();
        let bbox = BoundingBox::new(0, 0, 30, 30).unwrap();
        assert!(matches!(
            grabcut(&img, &bbox, &SegConfig::default()),
            Err(Error::DegenerateSegmentation(_))
        ));
    }

    #[test]
    fn tiny_box_rejected() {
        let img = Raster::filled(30, 30, [1, 2, 3]).unwrap();
        let bbox = BoundingBox::new(5, 5, 8, 8).unwrap();
        assert!(grabcut(&img, &bbox, &SegConfig::default()).is_err());
    }

    #[test]
    fn deterministic_and_border_clear() {
        let (img, _) = disk_scene(160, 80.0, 80.0, 50.0, [40, 160, 60], [250, 240, 230]);
        let bbox = BoundingBox::new(20, 20, 140, 140).unwrap();
        let cfg = SegConfig::default();
        let a = grabcut(&img, &bbox, &cfg).unwrap();
        let b = grabcut(&img, &bbox, &cfg).unwrap();
        assert_eq!(a, b);
        for x in 0..a.width() {
            assert!(!a.get(x, 0) && !a.get(x, a.height() - 1));
        }
        for y in 0..a.height() {
            assert!(!a.get(0, y) && !a.get(a.width() - 1, y));
        }
    }

    #[test]
    fn downscaled_crop_still_segments() {
        let (img, truth) = disk_scene(300, 150.0, 150.0, 100.0, [200, 60, 20], [245, 245, 245]);
        let bbox = BoundingBox::new(35, 35, 265, 265).unwrap();
        let cfg = SegConfig {
            max_side: 120,
            ..SegConfig::default()
        };
        let out = grabcut_detailed(&img, &bbox, &cfg).unwrap();
        assert!(out.scale < 1.0);
        let iou = out.mask.iou(&truth.crop(&bbox).unwrap());
        assert!(iou >= 0.97, "iou {iou}");
    }
}
