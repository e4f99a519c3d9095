//! Batch orchestration: detections -> segmentation -> scale and pairing ->
//! volume -> mass and calorie, plus calibration and evaluation runs.
//!
//! Scenes are processed independently on a worker pool. A failing scene or
//! food produces an [`Issue`] row and never aborts the batch; outputs are
//! sorted so that any worker count yields identical files.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::calorimetry::{estimate_calorie, estimate_mass, fit_beta, fit_density, EstimationRecord};
use crate::dataset::{
    FoodClass, FoodParams, GroundTruthRecord, Label, ParamTable, SceneAnnotation, ScenePair, ShapeClass, View,
};
use crate::error::{Error, Result};
use crate::evaluation::{average_precision, summarize, EvaluationSummary, GroundTruthBox, Interpolation, ScoredBox};
use crate::measurement::{
    estimate_volume_with_beta, match_views, scale_factor, select_calibration, ViewPair, DEFAULT_COIN_DIAMETER_CM,
};
use crate::segmentation::{extract_profile, grabcut, largest_component, Raster, SegConfig, SilhouetteProfile};

pub const VOLUMES_HEADER: [&str; 7] = [
    "scene_id",
    "food",
    "shape",
    "volume_cm3",
    "beta_applied",
    "alpha_top",
    "alpha_side",
];
pub const CALORIES_HEADER: [&str; 5] = ["scene_id", "food", "volume_cm3", "mass_g", "calorie_kcal"];
pub const ISSUES_HEADER: [&str; 6] = ["scene_id", "view", "food", "severity", "kind", "message"];
pub const FIT_HEADER: [&str; 4] = ["food", "n", "beta", "rho"];

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub params: ParamTable,
    pub coin_diameter_cm: f64,
    /// `seg.seed` is the root seed for every segmentation.
    pub seg: SegConfig,
    pub jobs: usize,
    /// Warn about foods without an energy density.
    pub require_energy: bool,
}

impl PipelineConfig {
    pub fn new(params: ParamTable) -> Self {
        PipelineConfig {
            params,
            coin_diameter_cm: DEFAULT_COIN_DIAMETER_CM,
            seg: SegConfig::default(),
            jobs: 1,
            require_energy: false,
        }
    }
}

/// Supplies the raster behind an annotation.
pub trait ImageSource: Sync {
    fn load(&self, annotation: &SceneAnnotation) -> Result<Raster>;
}

/// Reads `annotation.image_path` from disk.
#[derive(Debug, Clone, Copy, Default)]
pub struct FileImages;

impl ImageSource for FileImages {
    fn load(&self, annotation: &SceneAnnotation) -> Result<Raster> {
        if !annotation.image_path.is_file() {
            return Err(Error::Image {
                path: annotation.image_path.clone(),
                message: "image file not found".into(),
            });
        }
        Raster::load(&annotation.image_path)
    }
}

/// In-memory rasters keyed by (scene id, view).
#[derive(Debug, Clone, Default)]
pub struct MemoryImages(pub HashMap<(String, View), Raster>);

impl ImageSource for MemoryImages {
    fn load(&self, annotation: &SceneAnnotation) -> Result<Raster> {
        self.0
            .get(&(annotation.scene_id.clone(), annotation.view))
            .cloned()
            .ok_or_else(|| Error::Image {
                path: annotation.image_path.clone(),
                message: "no in-memory raster".into(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum IssueKind {
    MissingView,
    Image,
    MissingCalibration,
    DegenerateSegmentation,
    MissingParams,
    UnmatchedTop,
    UnmatchedSide,
    MissingDensity,
    MissingEnergy,
}

impl IssueKind {
    pub fn as_str(self) -> &'static str {
        match self {
            IssueKind::MissingView => "missing-view",
            IssueKind::Image => "image",
            IssueKind::MissingCalibration => "missing-calibration",
            IssueKind::DegenerateSegmentation => "degenerate-segmentation",
            IssueKind::MissingParams => "missing-params",
            IssueKind::UnmatchedTop => "unmatched-top",
            IssueKind::UnmatchedSide => "unmatched-side",
            IssueKind::MissingDensity => "missing-density",
            IssueKind::MissingEnergy => "missing-energy",
        }
    }

    pub fn severity(self) -> Severity {
        match self {
            IssueKind::UnmatchedTop | IssueKind::UnmatchedSide | IssueKind::MissingDensity | IssueKind::MissingEnergy => {
                Severity::Warning
            }
            _ => Severity::Error,
        }
    }

    /// Whether the issue accounts for a food detection that produced no
    /// estimate.
    pub fn consumes_detection(self) -> bool {
        matches!(
            self,
            IssueKind::DegenerateSegmentation
                | IssueKind::MissingParams
                | IssueKind::UnmatchedTop
                | IssueKind::UnmatchedSide
        )
    }
}

impl fmt::Display for IssueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Issue {
    pub scene_id: String,
    pub view: Option<View>,
    pub food: Option<FoodClass>,
    pub kind: IssueKind,
    pub message: String,
}

impl Issue {
    fn scene(scene_id: &str, kind: IssueKind, message: impl Into<String>) -> Self {
        Issue {
            scene_id: scene_id.to_string(),
            view: None,
            food: None,
            kind,
            message: message.into(),
        }
    }

    fn food(scene_id: &str, view: View, food: &FoodClass, kind: IssueKind, message: impl Into<String>) -> Self {
        Issue {
            scene_id: scene_id.to_string(),
            view: Some(view),
            food: Some(food.clone()),
            kind,
            message: message.into(),
        }
    }

    pub fn severity(&self) -> Severity {
        self.kind.severity()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoodEstimate {
    pub scene_id: String,
    pub food: FoodClass,
    pub shape: ShapeClass,
    pub volume: f64,
    pub beta_applied: f64,
    pub alpha_top: f64,
    pub alpha_side: f64,
    pub mass: Option<f64>,
    pub calorie: Option<f64>,
    /// Index of the top-view detection this estimate came from.
    pub top_detection: usize,
    pub side_detection: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneResult {
    pub scene_id: String,
    pub estimates: Vec<FoodEstimate>,
    pub issues: Vec<Issue>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EstimateOutput {
    pub estimates: Vec<FoodEstimate>,
    pub issues: Vec<Issue>,
}

impl EstimateOutput {
    pub fn has_errors(&self) -> bool {
        self.issues.iter().any(|i| i.severity() == Severity::Error)
    }
}

/// Stable per-detection seed independent of scheduling.
pub fn derive_seed(root: u64, scene_id: &str, view: View, index: usize) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in scene_id.bytes().chain(view.as_str().bytes()).chain(index.to_le_bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = root ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Segments one detection into a silhouette profile.
pub fn profile_detection(image: &Raster, detection_box: &crate::dataset::BoundingBox, seg: &SegConfig) -> Result<SilhouetteProfile> {
    let mask = grabcut(image, detection_box, seg)?;
    extract_profile(&largest_component(&mask))
}

struct Segmented {
    index: usize,
    food: FoodClass,
    score: f64,
    profile: SilhouetteProfile,
}

fn segment_view(
    annotation: &SceneAnnotation,
    image: &Raster,
    config: &PipelineConfig,
    issues: &mut Vec<Issue>,
) -> Vec<Segmented> {
    let mut out = Vec::new();
    for (index, det) in annotation.detections.iter().enumerate() {
        let Label::Food(food) = &det.label else { continue };
        if !config.params.contains_key(food) {
            issues.push(Issue::food(
                &annotation.scene_id,
                annotation.view,
                food,
                IssueKind::MissingParams,
                format!("no parameters for `{food}`"),
            ));
            continue;
        }
        let seg = SegConfig {
            seed: derive_seed(config.seg.seed, &annotation.scene_id, annotation.view, index),
            ..config.seg.clone()
        };
        match profile_detection(image, &det.bbox, &seg) {
            Ok(profile) => out.push(Segmented {
                index,
                food: food.clone(),
                score: det.score,
                profile,
            }),
            Err(e) => issues.push(Issue::food(
                &annotation.scene_id,
                annotation.view,
                food,
                IssueKind::DegenerateSegmentation,
                e.to_string(),
            )),
        }
    }
    out
}

fn load_checked(annotation: &SceneAnnotation, images: &dyn ImageSource) -> Result<Raster> {
    let raster = images.load(annotation)?;
    for det in &annotation.detections {
        det.bbox.check_within(raster.width(), raster.height())?;
    }
    Ok(raster)
}

/// Runs one scene. With `raw` set every volume uses beta = 1.
pub fn process_scene(pair: &ScenePair, config: &PipelineConfig, images: &dyn ImageSource, raw: bool) -> SceneResult {
    let scene_id = pair.scene_id.as_str();
    let mut result = SceneResult {
        scene_id: scene_id.to_string(),
        ..SceneResult::default()
    };
    let (Some(top), Some(side)) = (&pair.top, &pair.side) else {
        let missing = if pair.top.is_none() { "top" } else { "side" };
        result
            .issues
            .push(Issue::scene(scene_id, IssueKind::MissingView, format!("no {missing} view")));
        return result;
    };

    let mut views = Vec::with_capacity(2);
    for ann in [top, side] {
        match load_checked(ann, images) {
            Ok(r) => views.push(r),
            Err(e) => {
                result.issues.push(Issue {
                    view: Some(ann.view),
                    ..Issue::scene(scene_id, IssueKind::Image, e.to_string())
                });
                return result;
            }
        }
    }
    let mut alphas = Vec::with_capacity(2);
    for ann in [top, side] {
        let alpha = select_calibration(&ann.detections)
            .and_then(|coin| scale_factor(&coin.bbox, config.coin_diameter_cm, ann.view));
        match alpha {
            Ok(a) => alphas.push(a),
            Err(e) => {
                result.issues.push(Issue {
                    view: Some(ann.view),
                    ..Issue::scene(scene_id, IssueKind::MissingCalibration, e.to_string())
                });
                return result;
            }
        }
    }
    let (alpha_top, alpha_side) = (alphas[0], alphas[1]);

    let tops = segment_view(top, &views[0], config, &mut result.issues);
    let sides = segment_view(side, &views[1], config, &mut result.issues);
    let top_keys: Vec<(FoodClass, f64)> = tops.iter().map(|s| (s.food.clone(), s.score)).collect();
    let side_keys: Vec<(FoodClass, f64)> = sides.iter().map(|s| (s.food.clone(), s.score)).collect();
    let matching = match_views(&top_keys, &side_keys);

    for &t in &matching.unmatched_top {
        result.issues.push(Issue::food(
            scene_id,
            View::Top,
            &tops[t].food,
            IssueKind::UnmatchedTop,
            format!("no side-view `{}` left to pair with", tops[t].food),
        ));
    }
    for &s in &matching.unmatched_side {
        result.issues.push(Issue::food(
            scene_id,
            View::Side,
            &sides[s].food,
            IssueKind::UnmatchedSide,
            format!("no top-view `{}` left to pair with", sides[s].food),
        ));
    }

    for &(t, s) in &matching.pairs {
        let (t, s) = (&tops[t], &sides[s]);
        let params: &FoodParams = &config.params[&t.food];
        let pair = ViewPair {
            food: t.food.clone(),
            top: t.profile.clone(),
            side: s.profile.clone(),
            alpha_top,
            alpha_side,
        };
        let beta = if raw { 1.0 } else { params.beta };
        let estimate = match estimate_volume_with_beta(&pair, params.shape, beta) {
            Ok(v) => v,
            Err(e) => {
                result.issues.push(Issue::food(
                    scene_id,
                    View::Top,
                    &t.food,
                    IssueKind::DegenerateSegmentation,
                    e.to_string(),
                ));
                continue;
            }
        };
        let mass = match params.rho {
            Some(rho) => estimate_mass(estimate.volume, rho).ok(),
            None => {
                result.issues.push(Issue::food(
                    scene_id,
                    View::Top,
                    &t.food,
                    IssueKind::MissingDensity,
                    format!("no density for `{}`", t.food),
                ));
                None
            }
        };
        let calorie = match (mass, params.energy) {
            (Some(m), energy @ Some(_)) => estimate_calorie(&t.food, m, energy).ok(),
            (Some(_), None) if config.require_energy => {
                result.issues.push(Issue::food(
                    scene_id,
                    View::Top,
                    &t.food,
                    IssueKind::MissingEnergy,
                    format!("no energy density for `{}`", t.food),
                ));
                None
            }
            _ => None,
        };
        result.estimates.push(FoodEstimate {
            scene_id: scene_id.to_string(),
            food: t.food.clone(),
            shape: estimate.shape,
            volume: estimate.volume,
            beta_applied: estimate.beta_applied,
            alpha_top: alpha_top.value,
            alpha_side: alpha_side.value,
            mass,
            calorie,
            top_detection: t.index,
            side_detection: s.index,
        });
    }
    result
}

fn run_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidValue(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn sort_output(mut out: EstimateOutput) -> EstimateOutput {
    out.estimates.sort_by(|a, b| {
        (&a.scene_id, &a.food, a.top_detection).cmp(&(&b.scene_id, &b.food, b.top_detection))
    });
    out.issues.sort();
    out
}

fn run_scenes(config: &PipelineConfig, scenes: &[ScenePair], images: &dyn ImageSource, raw: bool) -> Result<EstimateOutput> {
    if config.jobs == 0 {
        return Err(Error::InvalidValue("parallelism must be at least 1".into()));
    }
    let results: Vec<SceneResult> = run_pool(config.jobs, || {
        scenes
            .par_iter()
            .map(|pair| process_scene(pair, config, images, raw))
            .collect()
    })?;
    let mut out = EstimateOutput::default();
    for r in results {
        out.estimates.extend(r.estimates);
        out.issues.extend(r.issues);
    }
    Ok(sort_output(out))
}

/// Estimates volume, mass and calorie for every scene.
pub fn run_estimate(config: &PipelineConfig, scenes: &[ScenePair], images: &dyn ImageSource) -> Result<EstimateOutput> {
    run_scenes(config, scenes, images, false)
}

fn csv_error(e: csv::Error) -> Error {
    Error::InvalidValue(e.to_string())
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_volumes_csv<W: Write>(estimates: &[FoodEstimate], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(VOLUMES_HEADER).map_err(csv_error)?;
    for e in estimates {
        w.write_record([
            e.scene_id.clone(),
            e.food.to_string(),
            e.shape.to_string(),
            e.volume.to_string(),
            e.beta_applied.to_string(),
            e.alpha_top.to_string(),
            e.alpha_side.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::io("<volumes>", e))
}

pub fn write_calories_csv<W: Write>(estimates: &[FoodEstimate], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CALORIES_HEADER).map_err(csv_error)?;
    for e in estimates {
        w.write_record([
            e.scene_id.clone(),
            e.food.to_string(),
            e.volume.to_string(),
            opt(e.mass),
            opt(e.calorie),
        ])
        .map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::io("<calories>", e))
}

pub fn write_issues_csv<W: Write>(issues: &[Issue], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ISSUES_HEADER).map_err(csv_error)?;
    for i in issues {
        w.write_record([
            i.scene_id.clone(),
            i.view.map(|v| v.to_string()).unwrap_or_default(),
            i.food.as_ref().map(|f| f.to_string()).unwrap_or_default(),
            match i.severity() {
                Severity::Warning => "warning".to_string(),
                Severity::Error => "error".to_string(),
            },
            i.kind.to_string(),
            i.message.clone(),
        ])
        .map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::io("<issues>", e))
}

/// Reads a `calories.csv` written by [`write_calories_csv`] back into
/// estimation records.
pub fn parse_calories_csv(text: &str, path: &Path) -> Result<Vec<EstimationRecord>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| Error::malformed(path, 1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != CALORIES_HEADER {
        return Err(Error::malformed(path, 1, format!("expected header `{}`", CALORIES_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::malformed(path, 0, e.to_string()))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let num = |i: usize| -> Result<Option<f64>> {
            if record[i].is_empty() {
                Ok(None)
            } else {
                record[i]
                    .parse()
                    .map(Some)
                    .map_err(|_| Error::malformed(path, line, format!("bad number `{}`", &record[i])))
            }
        };
        let volume = num(2)?.ok_or_else(|| Error::malformed(path, line, "missing volume"))?;
        out.push(EstimationRecord {
            est_mass: num(3)?,
            est_calorie: num(4)?,
            ..EstimationRecord::new(
                &record[0],
                FoodClass::new(&record[1]).map_err(|e| Error::malformed(path, line, e.to_string()))?,
                volume,
            )
        });
    }
    Ok(out)
}

pub fn load_calories_csv(path: &Path) -> Result<Vec<EstimationRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_calories_csv(&text, path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitRow {
    pub food: FoodClass,
    /// Number of volume estimations used for beta.
    pub n: usize,
    pub beta: f64,
    pub rho: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CalibrationOutput {
    pub params: ParamTable,
    pub fits: Vec<FitRow>,
    pub warnings: Vec<String>,
    /// Estimation run (beta = 1) that fed the fit.
    pub raw: EstimateOutput,
}

/// Fits beta from beta = 1 estimates joined with ground truth, and rho from
/// the ground-truth records alone. Foods without data keep their values.
pub fn run_calibrate(
    config: &PipelineConfig,
    scenes: &[ScenePair],
    images: &dyn ImageSource,
    truth: &[GroundTruthRecord],
) -> Result<CalibrationOutput> {
    let raw = run_scenes(config, scenes, images, true)?;
    let truth_by_key: HashMap<(&str, &FoodClass), &GroundTruthRecord> =
        truth.iter().map(|t| ((t.scene_id.as_str(), &t.food), t)).collect();

    let mut warnings = Vec::new();
    let mut key_count: HashMap<(&str, &FoodClass), usize> = HashMap::new();
    for e in &raw.estimates {
        *key_count.entry((e.scene_id.as_str(), &e.food)).or_default() += 1;
    }
    let mut beta_records: BTreeMap<FoodClass, Vec<EstimationRecord>> = BTreeMap::new();
    for e in &raw.estimates {
        let key = (e.scene_id.as_str(), &e.food);
        if key_count[&key] > 1 {
            warnings.push(format!("{}: several `{}` estimates, skipped for fitting", e.scene_id, e.food));
            continue;
        }
        match truth_by_key.get(&key) {
            Some(t) => beta_records.entry(e.food.clone()).or_default().push(EstimationRecord {
                ref_volume: Some(t.volume),
                ref_mass: Some(t.mass),
                ..EstimationRecord::new(&e.scene_id, e.food.clone(), e.volume)
            }),
            None => warnings.push(format!("{}: no ground truth for `{}`", e.scene_id, e.food)),
        }
    }
    let mut rho_records: BTreeMap<FoodClass, Vec<EstimationRecord>> = BTreeMap::new();
    for t in truth {
        if !config.params.contains_key(&t.food) {
            warnings.push(format!("ground truth food `{}` has no parameter row", t.food));
            continue;
        }
        rho_records.entry(t.food.clone()).or_default().push(EstimationRecord {
            ref_volume: Some(t.volume),
            ref_mass: Some(t.mass),
            ..EstimationRecord::new(&t.scene_id, t.food.clone(), 0.0)
        });
    }
    warnings.dedup();

    let mut params = config.params.clone();
    let mut fits = Vec::new();
    for (food, p) in params.iter_mut() {
        let mut n = 0;
        match beta_records.get(food) {
            Some(recs) => match fit_beta(recs) {
                Ok(fit) => {
                    p.beta = fit.value;
                    n = fit.n_samples;
                }
                Err(e) => warnings.push(format!("{food}: {e}; keeping beta = {}", p.beta)),
            },
            None => warnings.push(format!("{food}: no volume estimates; keeping beta = {}", p.beta)),
        }
        match rho_records.get(food) {
            Some(recs) => match fit_density(recs) {
                Ok(fit) => p.rho = Some(fit.value),
                Err(e) => warnings.push(format!("{food}: {e}; keeping rho")),
            },
            None => warnings.push(format!("{food}: no mass records; keeping rho")),
        }
        fits.push(FitRow {
            food: food.clone(),
            n,
            beta: p.beta,
            rho: p.rho,
        });
    }
    Ok(CalibrationOutput {
        params,
        fits,
        warnings,
        raw,
    })
}

pub fn write_fit_report<W: Write>(fits: &[FitRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FIT_HEADER).map_err(csv_error)?;
    for f in fits {
        w.write_record([f.food.to_string(), f.n.to_string(), f.beta.to_string(), opt(f.rho)])
            .map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::io("<fit report>", e))
}

#[derive(Debug, Clone)]
pub struct EvaluateOutput {
    pub summaries: Vec<EvaluationSummary>,
    pub warnings: Vec<String>,
}

/// Joins results with ground truth on (scene id, food) and summarises per
/// food.
pub fn run_evaluate(results: &[EstimationRecord], truth: &[GroundTruthRecord]) -> Result<EvaluateOutput> {
    let by_key: HashMap<(&str, &FoodClass), &GroundTruthRecord> =
        truth.iter().map(|t| ((t.scene_id.as_str(), &t.food), t)).collect();
    let mut warnings = Vec::new();
    let mut joined = Vec::new();
    for r in results {
        match by_key.get(&(r.scene_id.as_str(), &r.food)) {
            Some(t) => joined.push(EstimationRecord {
                ref_volume: Some(t.volume),
                ref_mass: Some(t.mass),
                ..r.clone()
            }),
            None => warnings.push(format!("{}: `{}` has no ground truth, excluded", r.scene_id, r.food)),
        }
    }
    if joined.is_empty() {
        return Err(Error::EmptyJoin("no result matches a ground-truth record".into()));
    }
    let mut expected: Vec<FoodClass> = truth.iter().map(|t| t.food.clone()).collect();
    expected.sort();
    expected.dedup();
    let (summaries, more) = summarize(&joined, &expected)?;
    warnings.extend(more);
    Ok(EvaluateOutput { summaries, warnings })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAp {
    pub label: String,
    pub n_ground_truth: usize,
    pub n_predictions: usize,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub classes: Vec<ClassAp>,
    /// Mean AP over classes that have ground truth.
    pub map: f64,
    pub warnings: Vec<String>,
}

/// Per-class AP of predicted annotations against ground-truth annotations;
/// images are identified by (scene id, view).
pub fn run_detect_eval(
    predictions: &[SceneAnnotation],
    truth: &[SceneAnnotation],
    iou_threshold: f64,
    interpolation: Interpolation,
) -> DetectionReport {
    let image_key = |a: &SceneAnnotation| format!("{}/{}", a.scene_id, a.view);
    let mut preds: BTreeMap<String, Vec<ScoredBox>> = BTreeMap::new();
    let mut gts: BTreeMap<String, Vec<GroundTruthBox>> = BTreeMap::new();
    for a in predictions {
        for d in &a.detections {
            preds.entry(d.label.as_str().to_string()).or_default().push(ScoredBox {
                image: image_key(a),
                bbox: d.bbox,
                score: d.score,
            });
        }
    }
    for a in truth {
        for d in &a.detections {
            gts.entry(d.label.as_str().to_string()).or_default().push(GroundTruthBox {
                image: image_key(a),
                bbox: d.bbox,
            });
        }
    }
    let mut labels: Vec<&String> = preds.keys().chain(gts.keys()).collect();
    labels.sort();
    labels.dedup();
    let mut classes = Vec::new();
    let mut warnings = Vec::new();
    for label in labels {
        let p = preds.get(label).map(Vec::as_slice).unwrap_or(&[]);
        let g = gts.get(label).map(Vec::as_slice).unwrap_or(&[]);
        let r = average_precision(p, g, iou_threshold, interpolation);
        if let Some(w) = r.warning {
            warnings.push(format!("{label}: {w}"));
        }
        classes.push(ClassAp {
            label: label.clone(),
            n_ground_truth: g.len(),
            n_predictions: p.len(),
            ap: r.ap,
        });
    }
    let with_gt: Vec<f64> = classes.iter().filter(|c| c.n_ground_truth > 0).map(|c| c.ap).collect();
    let map = if with_gt.is_empty() {
        0.0
    } else {
        with_gt.iter().sum::<f64>() / with_gt.len() as f64
    };
    DetectionReport { classes, map, warnings }
}

pub fn write_detection_report<W: Write>(report: &DetectionReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["label", "n_ground_truth", "n_predictions", "ap"]).map_err(csv_error)?;
    for c in &report.classes {
        w.write_record([
            c.label.clone(),
            c.n_ground_truth.to_string(),
            c.n_predictions.to_string(),
            c.ap.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.write_record(["mAP".to_string(), String::new(), String::new(), report.map.to_string()])
        .map_err(csv_error)?;
    w.flush().map_err(|e| Error::io("<detection report>", e))
}
