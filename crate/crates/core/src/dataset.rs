//! Food taxonomy, detection annotations, parameter tables and ground-truth
//! records, with loaders for the CSV and VOC-style XML file formats.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label string reserved for the calibration object.
pub const CALIBRATION_LABEL: &str = "coin";

pub const ANNOTATION_HEADER: [&str; 8] = [
    "scene_id", "view", "label", "score", "x_min", "y_min", "x_max", "y_max",
];
pub const PARAMS_HEADER: [&str; 5] = ["food", "shape", "beta", "rho", "energy_kcal_per_g"];
pub const TRUTH_HEADER: [&str; 4] = ["scene_id", "food", "volume_cm3", "mass_g"];
pub const NUTRITION_HEADER: [&str; 2] = ["food", "energy_kcal_per_g"];

/// Per-food shape, compensation factor and density used by the experiments
/// on the 19-class two-view food corpus. Energy densities are left blank.
pub const DEFAULT_PARAMS_CSV: &str = include_str!("../data/default_params.csv");

fn normalize_label(raw: &str) -> String {
    raw.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FoodClass(String);

impl FoodClass {
    pub fn new(name: &str) -> Result<Self> {
        let name = normalize_label(name);
        if name.is_empty() {
            return Err(Error::InvalidValue("empty food name".into()));
        }
        Ok(FoodClass(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for FoodClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for FoodClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FoodClass::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ShapeClass {
    Ellipsoid,
    Column,
    Irregular,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 3] = [ShapeClass::Ellipsoid, ShapeClass::Column, ShapeClass::Irregular];

    pub fn as_str(self) -> &'static str {
        match self {
            ShapeClass::Ellipsoid => "ellipsoid",
            ShapeClass::Column => "column",
            ShapeClass::Irregular => "irregular",
        }
    }
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShapeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match normalize_label(s).as_str() {
            "ellipsoid" => Ok(ShapeClass::Ellipsoid),
            "column" => Ok(ShapeClass::Column),
            "irregular" => Ok(ShapeClass::Irregular),
            _ => Err(Error::UnknownShape(s.trim().to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum View {
    Top,
    Side,
}

impl View {
    pub fn as_str(self) -> &'static str {
        match self {
            View::Top => "top",
            View::Side => "side",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match normalize_label(s).as_str() {
            "top" => Ok(View::Top),
            "side" => Ok(View::Side),
            other => Err(Error::InvalidValue(format!("unknown view `{other}`"))),
        }
    }
}

/// Axis-aligned pixel box. `x_max`/`y_max` are exclusive, so the box covers
/// `width() * height()` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BoundingBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Result<Self> {
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::InvalidBox(format!(
                "({x_min},{y_min},{x_max},{y_max}) has non-positive width or height"
            )));
        }
        Ok(BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> u32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }

    pub fn check_within(&self, width: u32, height: u32) -> Result<()> {
        if self.x_max > width || self.y_max > height {
            return Err(Error::BoxOutsideImage {
                x_min: self.x_min,
                y_min: self.y_min,
                x_max: self.x_max,
                y_max: self.y_max,
                width,
                height,
            });
        }
        Ok(())
    }

    /// Grows the box by `margin` pixels on every side, clamped to the image.
    pub fn expand(&self, margin: u32, width: u32, height: u32) -> BoundingBox {
        BoundingBox {
            x_min: self.x_min.saturating_sub(margin),
            y_min: self.y_min.saturating_sub(margin),
            x_max: (self.x_max + margin).min(width),
            y_max: (self.y_max + margin).min(height),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Label {
    Food(FoodClass),
    Calibration,
}

impl Label {
    pub fn food(&self) -> Option<&FoodClass> {
        match self {
            Label::Food(f) => Some(f),
            Label::Calibration => None,
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Label::Food(f) => f.as_str(),
            Label::Calibration => CALIBRATION_LABEL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub label: Label,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: BoundingBox, label: Label, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidValue(format!("score {score} outside [0, 1]")));
        }
        Ok(Detection { bbox, label, score })
    }

    pub fn is_calibration(&self) -> bool {
        self.label == Label::Calibration
    }
}

/// Detections for one view of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneAnnotation {
    pub scene_id: String,
    pub view: View,
    pub image_path: PathBuf,
    pub detections: Vec<Detection>,
}

/// The set of known food classes. Labels outside it are reported.
#[derive(Debug, Clone, Default)]
pub struct Taxonomy {
    foods: BTreeSet<FoodClass>,
    open: bool,
}

impl Taxonomy {
    pub fn new(foods: impl IntoIterator<Item = FoodClass>) -> Self {
        Taxonomy {
            foods: foods.into_iter().collect(),
            open: false,
        }
    }

    /// Accepts every label as a food class.
    pub fn open() -> Self {
        Taxonomy {
            foods: BTreeSet::new(),
            open: true,
        }
    }

    /// The 19 classes of the default parameter table.
    pub fn standard() -> Self {
        Taxonomy::new(default_params().into_keys())
    }

    pub fn resolve(&self, raw: &str) -> Option<Label> {
        let name = normalize_label(raw);
        if name == CALIBRATION_LABEL {
            return Some(Label::Calibration);
        }
        let food = FoodClass::new(&name).ok()?;
        if self.open || self.foods.contains(&food) {
            Some(Label::Food(food))
        } else {
            None
        }
    }

    pub fn len(&self) -> usize {
        self.foods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.foods.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownLabel {
    pub file: PathBuf,
    pub line: u64,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotationFormat {
    Csv,
    VocXml,
}

impl AnnotationFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(AnnotationFormat::Csv),
            "xml" => Some(AnnotationFormat::VocXml),
            _ => None,
        }
    }
}

impl FromStr for AnnotationFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match normalize_label(s).as_str() {
            "csv" => Ok(AnnotationFormat::Csv),
            "voc" | "voc-xml" | "xml" => Ok(AnnotationFormat::VocXml),
            other => Err(Error::InvalidValue(format!("unknown annotation format `{other}`"))),
        }
    }
}

/// Annotations gathered from one or more files.
#[derive(Debug, Clone, Default)]
pub struct AnnotationSet {
    pub scenes: Vec<SceneAnnotation>,
    pub unknown_labels: Vec<UnknownLabel>,
}

impl AnnotationSet {
    /// Appends `other`, rejecting a (scene_id, view) that is already present.
    pub fn merge(&mut self, other: AnnotationSet) -> Result<()> {
        for scene in other.scenes {
            if self
                .scenes
                .iter()
                .any(|s| s.scene_id == scene.scene_id && s.view == scene.view)
            {
                return Err(Error::DuplicateView {
                    scene_id: scene.scene_id,
                    view: scene.view.to_string(),
                });
            }
            self.scenes.push(scene);
        }
        self.unknown_labels.extend(other.unknown_labels);
        Ok(())
    }

    pub fn pairs(&self) -> Vec<ScenePair> {
        group_scenes(&self.scenes)
    }
}

/// Top and side annotations sharing a scene id.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair {
    pub scene_id: String,
    pub top: Option<SceneAnnotation>,
    pub side: Option<SceneAnnotation>,
}

/// Groups annotations by scene id, sorted by scene id.
pub fn group_scenes(scenes: &[SceneAnnotation]) -> Vec<ScenePair> {
    let mut grouped: BTreeMap<&str, ScenePair> = BTreeMap::new();
    for scene in scenes {
        let pair = grouped.entry(&scene.scene_id).or_insert_with(|| ScenePair {
            scene_id: scene.scene_id.clone(),
            top: None,
            side: None,
        });
        match scene.view {
            View::Top => pair.top = Some(scene.clone()),
            View::Side => pair.side = Some(scene.clone()),
        }
    }
    grouped.into_values().collect()
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Locates the image for a CSV-annotated view relative to the annotation
/// file's directory. Tried in order: `<scene>/<view>.<ext>`,
/// `<scene>_<view>.<ext>`, `<view>.<ext>`. Falls back to the first pattern.
pub fn resolve_image_path(dir: &Path, scene_id: &str, view: View) -> PathBuf {
    let mut candidates = Vec::new();
    for ext in IMAGE_EXTENSIONS {
        candidates.push(dir.join(scene_id).join(format!("{view}.{ext}")));
    }
    for ext in IMAGE_EXTENSIONS {
        candidates.push(dir.join(format!("{scene_id}_{view}.{ext}")));
    }
    for ext in IMAGE_EXTENSIONS {
        candidates.push(dir.join(format!("{view}.{ext}")));
    }
    candidates
        .iter()
        .find(|p| p.is_file())
        .cloned()
        .unwrap_or_else(|| candidates[0].clone())
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn check_header(path: &Path, reader: &mut csv::Reader<&[u8]>, expected: &[&str]) -> Result<()> {
    let header = reader
        .headers()
        .map_err(|e| Error::malformed(path, 1, e.to_string()))?;
    if header.len() != expected.len() {
        return Err(Error::malformed(
            path,
            1,
            format!("expected header `{}`", expected.join(",")),
        ));
    }
    Ok(())
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn parse_field<T: FromStr>(path: &Path, line: u64, name: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::malformed(path, line, format!("cannot parse {name} `{raw}`")))
}

fn parse_optional_f64(path: &Path, line: u64, name: &str, raw: &str) -> Result<Option<f64>> {
    if raw.is_empty() {
        Ok(None)
    } else {
        parse_field(path, line, name, raw).map(Some)
    }
}

/// Loads one annotation file.
pub fn load_annotations(path: &Path, format: AnnotationFormat, taxonomy: &Taxonomy) -> Result<AnnotationSet> {
    let text = read_to_string(path)?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    match format {
        AnnotationFormat::Csv => parse_annotations_csv(&text, path, dir, taxonomy),
        AnnotationFormat::VocXml => parse_annotations_voc(&text, path, dir, taxonomy),
    }
}

/// Parses annotation CSV text. `path` is used for error messages and `dir`
/// for image resolution.
pub fn parse_annotations_csv(text: &str, path: &Path, dir: &Path, taxonomy: &Taxonomy) -> Result<AnnotationSet> {
    let mut reader = csv_reader(text);
    check_header(path, &mut reader, &ANNOTATION_HEADER)?;

    let mut order: Vec<(String, View)> = Vec::new();
    let mut groups: HashMap<(String, View), Vec<Detection>> = HashMap::new();
    let mut unknown_labels = Vec::new();

    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::malformed(path, line, e.to_string())
        })?;
        let line = record_line(&record);
        if record.len() != ANNOTATION_HEADER.len() {
            return Err(Error::malformed(path, line, "expected 8 fields"));
        }
        let scene_id = record[0].to_string();
        if scene_id.is_empty() {
            return Err(Error::malformed(path, line, "empty scene_id"));
        }
        let view: View = record[1]
            .parse()
            .map_err(|e: Error| Error::malformed(path, line, e.to_string()))?;
        let score: f64 = parse_field(path, line, "score", &record[3])?;
        let coords: Vec<u32> = (4..8)
            .map(|i| parse_field(path, line, ANNOTATION_HEADER[i], &record[i]))
            .collect::<Result<_>>()?;
        let bbox = BoundingBox::new(coords[0], coords[1], coords[2], coords[3])
            .map_err(|e| Error::malformed(path, line, e.to_string()))?;

        let key = (scene_id, view);
        if !groups.contains_key(&key) {
            order.push(key.clone());
            groups.insert(key.clone(), Vec::new());
        }
        let Some(label) = taxonomy.resolve(&record[2]) else {
            unknown_labels.push(UnknownLabel {
                file: path.to_path_buf(),
                line,
                label: normalize_label(&record[2]),
            });
            continue;
        };
        let detection = Detection::new(bbox, label, score).map_err(|e| Error::malformed(path, line, e.to_string()))?;
        groups.get_mut(&key).expect("group inserted above").push(detection);
    }

    let scenes = order
        .into_iter()
        .map(|key| {
            let detections = groups.remove(&key).unwrap_or_default();
            let image_path = resolve_image_path(dir, &key.0, key.1);
            SceneAnnotation {
                scene_id: key.0,
                view: key.1,
                image_path,
                detections,
            }
        })
        .collect();
    Ok(AnnotationSet {
        scenes,
        unknown_labels,
    })
}

fn xml_child<'a, 'input>(node: roxmltree::Node<'a, 'input>, name: &str) -> Option<roxmltree::Node<'a, 'input>> {
    node.children().find(|c| c.has_tag_name(name))
}

fn xml_text<'a>(node: roxmltree::Node<'a, '_>, name: &str) -> Option<&'a str> {
    xml_child(node, name).and_then(|c| c.text()).map(str::trim)
}

/// Parses a PASCAL-VOC-style XML file. Scene id and view come from optional
/// `<scene_id>` and `<view>` elements, otherwise from a `<scene>_<view>`
/// filename stem. An optional `<score>` per object defaults to 1.
pub fn parse_annotations_voc(text: &str, path: &Path, dir: &Path, taxonomy: &Taxonomy) -> Result<AnnotationSet> {
    let doc = roxmltree::Document::parse(text)
        .map_err(|e| Error::malformed(path, e.pos().row as u64, e.to_string()))?;
    let line_of = |node: roxmltree::Node| doc.text_pos_at(node.range().start).row as u64;
    let root = doc.root_element();
    if !root.has_tag_name("annotation") {
        return Err(Error::malformed(path, line_of(root), "root element must be <annotation>"));
    }
    let filename = xml_text(root, "filename")
        .ok_or_else(|| Error::malformed(path, line_of(root), "missing <filename>"))?;
    let stem = Path::new(filename)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(filename);

    let (stem_scene, stem_view) = match stem.rsplit_once('_') {
        Some((scene, view)) => (Some(scene), view.parse::<View>().ok()),
        None => (None, None),
    };
    let view = match xml_text(root, "view") {
        Some(v) => v
            .parse()
            .map_err(|e: Error| Error::malformed(path, line_of(root), e.to_string()))?,
        None => stem_view.ok_or_else(|| Error::malformed(path, line_of(root), "cannot determine view"))?,
    };
    let scene_id = match xml_text(root, "scene_id") {
        Some(s) => s.to_string(),
        None if stem_view.is_some() => stem_scene.unwrap_or(stem).to_string(),
        None => stem.to_string(),
    };

    let size = xml_child(root, "size");
    let dims = match size {
        Some(size) => {
            let w = xml_text(size, "width").ok_or_else(|| Error::malformed(path, line_of(size), "missing <width>"))?;
            let h = xml_text(size, "height").ok_or_else(|| Error::malformed(path, line_of(size), "missing <height>"))?;
            Some((
                parse_field::<u32>(path, line_of(size), "width", w)?,
                parse_field::<u32>(path, line_of(size), "height", h)?,
            ))
        }
        None => None,
    };

    let mut detections = Vec::new();
    let mut unknown_labels = Vec::new();
    for object in root.children().filter(|c| c.has_tag_name("object")) {
        let line = line_of(object);
        let name = xml_text(object, "name").ok_or_else(|| Error::malformed(path, line, "object without <name>"))?;
        let score = match xml_text(object, "score") {
            Some(s) => parse_field(path, line, "score", s)?,
            None => 1.0,
        };
        let bndbox = xml_child(object, "bndbox").ok_or_else(|| Error::malformed(path, line, "object without <bndbox>"))?;
        let mut coords = [0u32; 4];
        for (slot, tag) in coords.iter_mut().zip(["xmin", "ymin", "xmax", "ymax"]) {
            let raw = xml_text(bndbox, tag).ok_or_else(|| Error::malformed(path, line, format!("missing <{tag}>")))?;
            // VOC files in the wild carry float coordinates.
            let value: f64 = parse_field(path, line, tag, raw)?;
            if value < 0.0 {
                return Err(Error::malformed(path, line, format!("negative <{tag}>")));
            }
            *slot = value.round() as u32;
        }
        let bbox = BoundingBox::new(coords[0], coords[1], coords[2], coords[3])
            .map_err(|e| Error::malformed(path, line, e.to_string()))?;
        if let Some((w, h)) = dims {
            bbox.check_within(w, h)
                .map_err(|e| Error::malformed(path, line, e.to_string()))?;
        }
        match taxonomy.resolve(name) {
            Some(label) => detections
                .push(Detection::new(bbox, label, score).map_err(|e| Error::malformed(path, line, e.to_string()))?),
            None => unknown_labels.push(UnknownLabel {
                file: path.to_path_buf(),
                line,
                label: normalize_label(name),
            }),
        }
    }

    Ok(AnnotationSet {
        scenes: vec![SceneAnnotation {
            scene_id,
            view,
            image_path: dir.join(filename),
            detections,
        }],
        unknown_labels,
    })
}

/// Writes annotations in the canonical CSV form: scenes in the given order,
/// detections in stored order.
pub fn write_annotations_csv<W: Write>(scenes: &[SceneAnnotation], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let map_err = |e: csv::Error| Error::InvalidValue(e.to_string());
    writer.write_record(ANNOTATION_HEADER).map_err(map_err)?;
    for scene in scenes {
        for det in &scene.detections {
            let b = det.bbox;
            writer
                .write_record([
                    scene.scene_id.clone(),
                    scene.view.to_string(),
                    det.label.as_str().to_string(),
                    det.score.to_string(),
                    b.x_min.to_string(),
                    b.y_min.to_string(),
                    b.x_max.to_string(),
                    b.y_max.to_string(),
                ])
                .map_err(map_err)?;
        }
    }
    writer.flush().map_err(|e| Error::io("<annotations>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoodParams {
    pub food: FoodClass,
    pub shape: ShapeClass,
    /// Volume compensation factor; 1.0 when not fitted.
    pub beta: f64,
    /// Density in g/cm³.
    pub rho: Option<f64>,
    /// Energy density in Kcal/g.
    pub energy: Option<f64>,
}

impl FoodParams {
    pub fn new(food: FoodClass, shape: ShapeClass) -> Self {
        FoodParams {
            food,
            shape,
            beta: 1.0,
            rho: None,
            energy: None,
        }
    }
}

pub type ParamTable = BTreeMap<FoodClass, FoodParams>;

pub fn default_params() -> ParamTable {
    parse_params(DEFAULT_PARAMS_CSV, Path::new("<default params>")).expect("bundled parameter table is valid")
}

pub fn load_params(path: &Path) -> Result<ParamTable> {
    parse_params(&read_to_string(path)?, path)
}

pub fn parse_params(text: &str, path: &Path) -> Result<ParamTable> {
    let mut reader = csv_reader(text);
    check_header(path, &mut reader, &PARAMS_HEADER)?;
    let mut table = ParamTable::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::malformed(path, 0, e.to_string()))?;
        let line = record_line(&record);
        if record.len() != PARAMS_HEADER.len() {
            return Err(Error::malformed(path, line, "expected 5 fields"));
        }
        let food = FoodClass::new(&record[0]).map_err(|e| Error::malformed(path, line, e.to_string()))?;
        let shape: ShapeClass = record[1].parse()?;
        let beta = parse_optional_f64(path, line, "beta", &record[2])?.unwrap_or(1.0);
        let rho = parse_optional_f64(path, line, "rho", &record[3])?;
        let energy = parse_optional_f64(path, line, "energy", &record[4])?;
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidValue(format!("{}:{line}: beta must be positive, got {beta}", path.display())));
        }
        if let Some(rho) = rho {
            if !(rho.is_finite() && rho > 0.0) {
                return Err(Error::InvalidValue(format!("{}:{line}: rho must be positive, got {rho}", path.display())));
            }
        }
        if let Some(energy) = energy {
            if !(energy.is_finite() && energy >= 0.0) {
                return Err(Error::InvalidValue(format!(
                    "{}:{line}: energy must be non-negative, got {energy}",
                    path.display()
                )));
            }
        }
        if table.contains_key(&food) {
            return Err(Error::DuplicateKey(food.to_string(), String::new()));
        }
        table.insert(
            food.clone(),
            FoodParams {
                food,
                shape,
                beta,
                rho,
                energy,
            },
        );
    }
    Ok(table)
}

fn opt_to_string(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_params_csv<W: Write>(table: &ParamTable, out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let map_err = |e: csv::Error| Error::InvalidValue(e.to_string());
    writer.write_record(PARAMS_HEADER).map_err(map_err)?;
    for p in table.values() {
        writer
            .write_record([
                p.food.to_string(),
                p.shape.to_string(),
                p.beta.to_string(),
                opt_to_string(p.rho),
                opt_to_string(p.energy),
            ])
            .map_err(map_err)?;
    }
    writer.flush().map_err(|e| Error::io("<params>", e))?;
    Ok(())
}

/// Reads `food,energy_kcal_per_g` rows.
pub fn load_nutrition(path: &Path) -> Result<BTreeMap<FoodClass, f64>> {
    parse_nutrition(&read_to_string(path)?, path)
}

pub fn parse_nutrition(text: &str, path: &Path) -> Result<BTreeMap<FoodClass, f64>> {
    let mut reader = csv_reader(text);
    check_header(path, &mut reader, &NUTRITION_HEADER)?;
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::malformed(path, 0, e.to_string()))?;
        let line = record_line(&record);
        let food = FoodClass::new(&record[0]).map_err(|e| Error::malformed(path, line, e.to_string()))?;
        let energy: f64 = parse_field(path, line, "energy_kcal_per_g", &record[1])?;
        if !(energy.is_finite() && energy >= 0.0) {
            return Err(Error::malformed(path, line, "energy must be non-negative"));
        }
        if out.insert(food.clone(), energy).is_some() {
            return Err(Error::DuplicateKey(food.to_string(), String::new()));
        }
    }
    Ok(out)
}

/// Copies energy densities into the table. Returns foods that have no
/// parameter row.
pub fn apply_nutrition(table: &mut ParamTable, nutrition: &BTreeMap<FoodClass, f64>) -> Vec<FoodClass> {
    let mut missing = Vec::new();
    for (food, energy) in nutrition {
        match table.get_mut(food) {
            Some(p) => p.energy = Some(*energy),
            None => missing.push(food.clone()),
        }
    }
    missing
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub scene_id: String,
    pub food: FoodClass,
    pub volume: f64,
    pub mass: f64,
}

pub fn load_ground_truth(path: &Path) -> Result<Vec<GroundTruthRecord>> {
    parse_ground_truth(&read_to_string(path)?, path)
}

pub fn parse_ground_truth(text: &str, path: &Path) -> Result<Vec<GroundTruthRecord>> {
    let mut reader = csv_reader(text);
    check_header(path, &mut reader, &TRUTH_HEADER)?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::malformed(path, 0, e.to_string()))?;
        let line = record_line(&record);
        if record.len() != TRUTH_HEADER.len() {
            return Err(Error::malformed(path, line, "expected 4 fields"));
        }
        let scene_id = record[0].to_string();
        let food = FoodClass::new(&record[1]).map_err(|e| Error::malformed(path, line, e.to_string()))?;
        let volume: f64 = parse_field(path, line, "volume_cm3", &record[2])?;
        let mass: f64 = parse_field(path, line, "mass_g", &record[3])?;
        if !(volume.is_finite() && volume > 0.0) {
            return Err(Error::InvalidValue(format!(
                "{}:{line}: volume must be positive, got {volume}",
                path.display()
            )));
        }
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::InvalidValue(format!(
                "{}:{line}: mass must be positive, got {mass}",
                path.display()
            )));
        }
        if !seen.insert((scene_id.clone(), food.clone())) {
            return Err(Error::DuplicateKey(scene_id, food.to_string()));
        }
        out.push(GroundTruthRecord {
            scene_id,
            food,
            volume,
            mass,
        });
    }
    Ok(out)
}

pub fn write_ground_truth_csv<W: Write>(records: &[GroundTruthRecord], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let map_err = |e: csv::Error| Error::InvalidValue(e.to_string());
    writer.write_record(TRUTH_HEADER).map_err(map_err)?;
    for r in records {
        writer
            .write_record([r.scene_id.clone(), r.food.to_string(), r.volume.to_string(), r.mass.to_string()])
            .map_err(map_err)?;
    }
    writer.flush().map_err(|e| Error::io("<truth>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("fixture.csv")
    }

    #[test]
    fn csv_row_maps_to_detection() {
        let text = "scene_id,view,label,score,x_min,y_min,x_max,y_max\nscene01,top,apple,0.98,10,20,110,130\n";
        let set = parse_annotations_csv(text, p(), Path::new("."), &Taxonomy::standard()).unwrap();
        assert_eq!(set.scenes.len(), 1);
        let det = &set.scenes[0].detections[0];
        assert_eq!(det.label, Label::Food(FoodClass::new("apple").unwrap()));
        assert_eq!(det.score, 0.98);
        assert_eq!(det.bbox, BoundingBox::new(10, 20, 110, 130).unwrap());
        assert_eq!(set.scenes[0].view, View::Top);
    }

    #[test]
    fn degenerate_box_is_malformed_with_line() {
        let text = "scene_id,view,label,score,x_min,y_min,x_max,y_max\nscene01,top,apple,0.9,10,20,110,130\nscene01,top,apple,0.9,10,20,10,130\n";
        let err = parse_annotations_csv(text, p(), Path::new("."), &Taxonomy::standard()).unwrap_err();
        match err {
            Error::Malformed { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn labels_are_normalized_and_unknown_reported() {
        let text = "scene_id,view,label,score,x_min,y_min,x_max,y_max\ns,top, Apple ,0.5,0,0,4,4\ns,top,COIN,0.5,5,5,9,9\ns,top,durian,0.5,0,0,4,4\n";
        let set = parse_annotations_csv(text, p(), Path::new("."), &Taxonomy::standard()).unwrap();
        assert_eq!(set.scenes[0].detections.len(), 2);
        assert!(set.scenes[0].detections[1].is_calibration());
        assert_eq!(set.unknown_labels.len(), 1);
        assert_eq!(set.unknown_labels[0].label, "durian");
        assert_eq!(set.unknown_labels[0].line, 4);
    }

    #[test]
    fn score_outside_unit_interval_rejected() {
        let text = "scene_id,view,label,score,x_min,y_min,x_max,y_max\ns,top,apple,1.5,0,0,4,4\n";
        assert!(parse_annotations_csv(text, p(), Path::new("."), &Taxonomy::standard()).is_err());
    }

    #[test]
    fn top_and_side_files_group_into_one_pair() {
        let top = "scene_id,view,label,score,x_min,y_min,x_max,y_max\nscene01,top,apple,0.9,0,0,4,4\n";
        let side = "scene_id,view,label,score,x_min,y_min,x_max,y_max\nscene01,side,apple,0.9,0,0,4,4\n";
        let tax = Taxonomy::standard();
        let mut set = parse_annotations_csv(top, Path::new("a.csv"), Path::new("."), &tax).unwrap();
        set.merge(parse_annotations_csv(side, Path::new("b.csv"), Path::new("."), &tax).unwrap())
            .unwrap();
        let pairs = set.pairs();
        assert_eq!(pairs.len(), 1);
        assert!(pairs[0].top.is_some() && pairs[0].side.is_some());

        let dup = parse_annotations_csv(top, Path::new("c.csv"), Path::new("."), &tax).unwrap();
        assert!(matches!(set.merge(dup), Err(Error::DuplicateView { .. })));
    }

    #[test]
    fn voc_xml_parses_and_checks_bounds() {
        let xml = r#"<annotation>
  <filename>scene07_side.jpg</filename>
  <size><width>100</width><height>80</height><depth>3</depth></size>
  <object><name>coin</name><bndbox><xmin>1</xmin><ymin>2</ymin><xmax>20</xmax><ymax>21</ymax></bndbox></object>
  <object><name>Banana</name><score>0.8</score><bndbox><xmin>30.0</xmin><ymin>10</ymin><xmax>90</xmax><ymax>70</ymax></bndbox></object>
</annotation>"#;
        let set = parse_annotations_voc(xml, Path::new("x.xml"), Path::new("d"), &Taxonomy::standard()).unwrap();
        let scene = &set.scenes[0];
        assert_eq!(scene.scene_id, "scene07");
        assert_eq!(scene.view, View::Side);
        assert_eq!(scene.image_path, Path::new("d/scene07_side.jpg"));
        assert_eq!(scene.detections.len(), 2);
        assert_eq!(scene.detections[1].score, 0.8);

        let outside = xml.replace("<xmax>90</xmax>", "<xmax>101</xmax>");
        let err = parse_annotations_voc(&outside, Path::new("x.xml"), Path::new("d"), &Taxonomy::standard()).unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 5, .. }), "{err:?}");
    }

    #[test]
    fn params_rows() {
        let text = "food,shape,beta,rho,energy_kcal_per_g\napple,ellipsoid,1.08,0.78,\nsachima,column,1.10,0.22,\n";
        let table = parse_params(text, p()).unwrap();
        let apple = &table[&FoodClass::new("apple").unwrap()];
        assert_eq!(apple.shape, ShapeClass::Ellipsoid);
        assert_eq!(apple.beta, 1.08);
        assert_eq!(apple.rho, Some(0.78));
        assert_eq!(apple.energy, None);
        let sachima = &table[&FoodClass::new("sachima").unwrap()];
        assert_eq!((sachima.shape, sachima.beta, sachima.rho), (ShapeClass::Column, 1.10, Some(0.22)));
    }

    #[test]
    fn params_errors() {
        let neg = "food,shape,beta,rho,energy_kcal_per_g\napple,ellipsoid,-1,0.78,\n";
        assert!(matches!(parse_params(neg, p()), Err(Error::InvalidValue(_))));
        let zero_rho = "food,shape,beta,rho,energy_kcal_per_g\napple,ellipsoid,1,0,\n";
        assert!(parse_params(zero_rho, p()).is_err());
        let shape = "food,shape,beta,rho,energy_kcal_per_g\napple,cube,1,0.7,\n";
        assert!(matches!(parse_params(shape, p()), Err(Error::UnknownShape(_))));
    }

    #[test]
    fn blank_beta_defaults_to_one() {
        let text = "food,shape,beta,rho,energy_kcal_per_g\nmango,irregular,,,0.6\n";
        let table = parse_params(text, p()).unwrap();
        let mango = &table[&FoodClass::new("mango").unwrap()];
        assert_eq!(mango.beta, 1.0);
        assert_eq!(mango.energy, Some(0.6));
    }

    #[test]
    fn ground_truth_rows_and_errors() {
        let ok = "scene_id,food,volume_cm3,mass_g\nscene01,apple,333.6,263.8\n";
        let recs = parse_ground_truth(ok, p()).unwrap();
        assert_eq!((recs[0].volume, recs[0].mass), (333.6, 263.8));

        let zero = "scene_id,food,volume_cm3,mass_g\nscene01,apple,0,263.8\n";
        assert!(matches!(parse_ground_truth(zero, p()), Err(Error::InvalidValue(_))));

        let dup = "scene_id,food,volume_cm3,mass_g\nscene01,apple,1,2\nscene01,apple,3,4\n";
        assert!(matches!(parse_ground_truth(dup, p()), Err(Error::DuplicateKey(..))));
    }

    #[test]
    fn bounding_box_invariants() {
        assert!(BoundingBox::new(5, 0, 5, 10).is_err());
        assert!(BoundingBox::new(0, 7, 5, 3).is_err());
        let b = BoundingBox::new(2, 3, 12, 8).unwrap();
        assert_eq!((b.width(), b.height(), b.area()), (10, 5, 50));
        assert!(b.check_within(12, 8).is_ok());
        assert!(b.check_within(11, 8).is_err());
    }
}
