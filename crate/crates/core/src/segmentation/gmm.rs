//! Full-covariance RGB Gaussian mixtures fitted by seeded k-means++ and
//! hard-assignment re-estimation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Rgb = [f64; 3];
type Mat3 = [[f64; 3]; 3];

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Lower bound on the covariance ridge so constant inputs stay invertible.
pub const MIN_REGULARIZATION: f64 = 1e-3;
const KMEANS_ITERATIONS: usize = 10;
const REFINE_ITERATIONS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: Rgb,
    pub cov: Mat3,
    inv: Mat3,
    log_det: f64,
}

impl Component {
    fn new(weight: f64, mean: Rgb, cov: Mat3) -> Self {
        let det = det3(&cov);
        assert!(det > 0.0, "covariance must be positive definite after regularization");
        Component {
            weight,
            mean,
            cov,
            inv: inverse3(&cov, det),
            log_det: det.ln(),
        }
    }

    /// `-ln(weight * N(x | mean, cov))`.
    pub fn cost(&self, x: &Rgb) -> f64 {
        let d = [x[0] - self.mean[0], x[1] - self.mean[1], x[2] - self.mean[2]];
        let mut q = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                q += d[i] * self.inv[i][j] * d[j];
            }
        }
        -self.weight.ln() + 0.5 * (3.0 * LN_2PI + self.log_det + q)
    }
}

fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn inverse3(m: &Mat3, det: f64) -> Mat3 {
    let c = |r0: usize, c0: usize, r1: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    [
        [c(1, 1, 2, 2) / det, -c(0, 1, 2, 2) / det, c(0, 1, 1, 2) / det],
        [-c(1, 0, 2, 2) / det, c(0, 0, 2, 2) / det, -c(0, 0, 1, 2) / det],
        [c(1, 0, 2, 1) / det, -c(0, 0, 2, 1) / det, c(0, 0, 1, 1) / det],
    ]
}

fn dist2(a: &Rgb, b: &Rgb) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Covariance ridge: 1e-3 of the mean per-channel variance, floored at
/// [`MIN_REGULARIZATION`].
pub fn regularization(pixels: &[Rgb]) -> f64 {
    if pixels.is_empty() {
        return MIN_REGULARIZATION;
    }
    let n = pixels.len() as f64;
    let mut mean = [0.0; 3];
    for p in pixels {
        for c in 0..3 {
            mean[c] += p[c];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = 0.0;
    for p in pixels {
        for c in 0..3 {
            var += (p[c] - mean[c]).powi(2);
        }
    }
    (1e-3 * var / (3.0 * n)).max(MIN_REGULARIZATION)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gmm {
    components: Vec<Component>,
}

impl Gmm {
    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Cheapest component for `x` and its cost.
    pub fn best_component(&self, x: &Rgb) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (k, comp) in self.components.iter().enumerate() {
            let c = comp.cost(x);
            if c < best.1 {
                best = (k, c);
            }
        }
        best
    }

    pub fn log_likelihood(&self, x: &Rgb) -> f64 {
        let costs: Vec<f64> = self.components.iter().map(|c| -c.cost(x)).collect();
        let max = costs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max + costs.iter().map(|c| (c - max).exp()).sum::<f64>().ln()
    }

    /// Re-estimates the model from hard assignments. Components with no
    /// pixels are dropped, so the result may have fewer than `k` entries.
    pub fn from_assignments(pixels: &[Rgb], assignment: &[usize], k: usize, eps: f64) -> Gmm {
        assert_eq!(pixels.len(), assignment.len());
        let mut count = vec![0usize; k];
        let mut sum = vec![[0.0f64; 3]; k];
        let mut prod = vec![[[0.0f64; 3]; 3]; k];
        for (p, &a) in pixels.iter().zip(assignment) {
            count[a] += 1;
            for i in 0..3 {
                sum[a][i] += p[i];
                for j in 0..3 {
                    prod[a][i][j] += p[i] * p[j];
                }
            }
        }
        let n = pixels.len() as f64;
        let components = (0..k)
            .filter(|&a| count[a] > 0)
            .map(|a| {
                let c = count[a] as f64;
                let mean = sum[a].map(|s| s / c);
                let mut cov = [[0.0; 3]; 3];
                for i in 0..3 {
                    for j in 0..3 {
                        cov[i][j] = prod[a][i][j] / c - mean[i] * mean[j];
                    }
                    cov[i][i] = cov[i][i].max(0.0) + eps;
                }
                // Symmetrize against rounding.
                for i in 0..3 {
                    for j in (i + 1)..3 {
                        let s = 0.5 * (cov[i][j] + cov[j][i]);
                        cov[i][j] = s;
                        cov[j][i] = s;
                    }
                }
                Component::new(c / n, mean, cov)
            })
            .collect();
        Gmm { components }
    }

    /// Assigns every pixel to its cheapest component; returns the
    /// assignment and the total cost.
    pub fn assign(&self, pixels: &[Rgb]) -> (Vec<usize>, f64) {
        let mut total = 0.0;
        let assignment = pixels
            .iter()
            .map(|p| {
                let (k, c) = self.best_component(p);
                total += c;
                k
            })
            .collect();
        (assignment, total)
    }
}

/// Seeded k-means++ clustering, returning cluster indices in `0..k'` with
/// `k' <= k` (fewer when there are fewer distinct colors).
pub fn kmeans(pixels: &[Rgb], k: usize, seed: u64) -> (Vec<usize>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Rgb> = vec![pixels[rng.random_range(0..pixels.len())]];
    let mut d2: Vec<f64> = pixels.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = pixels.len() - 1;
        for (i, &w) in d2.iter().enumerate() {
            if target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        let c = pixels[pick];
        centers.push(c);
        for (d, p) in d2.iter_mut().zip(pixels) {
            *d = d.min(dist2(p, &c));
        }
    }

    let k = centers.len();
    let nearest = |p: &Rgb, centers: &[Rgb]| {
        let mut best = (0, f64::INFINITY);
        for (i, c) in centers.iter().enumerate() {
            let d = dist2(p, c);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    };
    let mut assignment: Vec<usize> = pixels.iter().map(|p| nearest(p, &centers)).collect();
    for _ in 0..KMEANS_ITERATIONS {
        let mut sum = vec![[0.0; 3]; k];
        let mut count = vec![0usize; k];
        for (p, &a) in pixels.iter().zip(&assignment) {
            count[a] += 1;
            for c in 0..3 {
                sum[a][c] += p[c];
            }
        }
        for i in 0..k {
            if count[i] > 0 {
                centers[i] = sum[i].map(|s| s / count[i] as f64);
            }
        }
        let next: Vec<usize> = pixels.iter().map(|p| nearest(p, &centers)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    (assignment, k)
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: Gmm,
    /// Set when the requested component count was reduced.
    pub warning: Option<String>,
    /// Classification log-likelihood `sum ln(w_k N(x|k))` after each
    /// re-estimation step.
    pub history: Vec<f64>,
}

/// Fits a `k`-component mixture to `pixels`.
pub fn fit_gmm(pixels: &[Rgb], k: usize, seed: u64) -> Result<GmmFit> {
    if pixels.is_empty() {
        return Err(Error::InvalidValue("cannot fit a mixture to zero pixels".into()));
    }
    if k == 0 {
        return Err(Error::InvalidValue("component count must be at least 1".into()));
    }
    let mut warning = None;
    let k = if pixels.len() < k {
        let msg = format!("only {} pixels for {k} components; using {}", pixels.len(), pixels.len());
        log::warn!("{msg}");
        warning = Some(msg);
        pixels.len()
    } else {
        k
    };
    let eps = regularization(pixels);
    let (mut assignment, k_init) = kmeans(pixels, k, seed);
    let mut model = Gmm::from_assignments(pixels, &assignment, k_init, eps);
    let mut history = Vec::new();
    for _ in 0..REFINE_ITERATIONS {
        let (next, cost) = model.assign(pixels);
        history.push(-cost);
        if next == assignment {
            break;
        }
        assignment = next;
        model = Gmm::from_assignments(pixels, &assignment, model.len(), eps);
    }
    Ok(GmmFit {
        model,
        warning,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn separated_clusters_recover_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 4.0).unwrap();
        let centers = [[200.0, 30.0, 30.0], [20.0, 40.0, 220.0]];
        let pixels: Vec<Rgb> = (0..2000)
            .map(|i| centers[i % 2].map(|c| c + noise.sample(&mut rng)))
            .collect();
        let fit = fit_gmm(&pixels, 2, 11).unwrap();
        assert_eq!(fit.model.len(), 2);
        for c in &centers {
            let found = fit
                .model
                .components()
                .iter()
                .any(|comp| (0..3).all(|i| (comp.mean[i] - c[i]).abs() <= 2.0));
            assert!(found, "no component near {c:?}: {:?}", fit.model);
        }
        let wsum: f64 = fit.model.components().iter().map(|c| c.weight).sum();
        assert!((wsum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identical_pixels_collapse_to_one_component() {
        let pixels = vec![[10.0, 20.0, 30.0]; 50];
        let fit = fit_gmm(&pixels, 5, 1).unwrap();
        assert_eq!(fit.model.len(), 1);
        let comp = &fit.model.components()[0];
        assert_eq!(comp.weight, 1.0);
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { MIN_REGULARIZATION } else { 0.0 };
                assert!((comp.cov[i][j] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn too_few_pixels_reduces_k_with_warning() {
        let pixels = vec![[0.0, 0.0, 0.0], [100.0, 0.0, 0.0], [0.0, 100.0, 0.0]];
        let fit = fit_gmm(&pixels, 5, 1).unwrap();
        assert_eq!(fit.model.len(), 3);
        assert!(fit.warning.is_some());
    }

    #[test]
    fn likelihood_non_decreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pixels: Vec<Rgb> = (0..3000)
            .map(|_| [rng.random_range(0.0..255.0), rng.random_range(0.0..120.0), rng.random_range(50.0..60.0)])
            .collect();
        let fit = fit_gmm(&pixels, 5, 4).unwrap();
        for w in fit.history.windows(2) {
            assert!(w[1] >= w[0] - 1e-6 * w[0].abs(), "{:?}", fit.history);
        }
    }

    #[test]
    fn inverse_is_inverse() {
        let m = [[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]];
        let inv = inverse3(&m, det3(&m));
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| m[i][k] * inv[k][j]).sum();
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }
}
