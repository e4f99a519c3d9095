use std::fs;
use std::path::Path;

use foodcal::dataset::{
    default_params, load_annotations, parse_annotations_csv, parse_ground_truth, parse_params,
    write_annotations_csv, write_ground_truth_csv, write_params_csv, AnnotationFormat, BoundingBox, Detection,
    FoodClass, GroundTruthRecord, Label, SceneAnnotation, Taxonomy, View,
};
use foodcal::Error;

fn scene(id: &str, view: View, dets: Vec<Detection>) -> SceneAnnotation {
    SceneAnnotation {
        scene_id: id.into(),
        view,
        image_path: Path::new("imgs").join(format!("{id}_{view}.png")),
        detections: dets,
    }
}

fn det(label: Label, score: f64, b: (u32, u32, u32, u32)) -> Detection {
    Detection::new(BoundingBox::new(b.0, b.1, b.2, b.3).unwrap(), label, score).unwrap()
}

#[test]
fn annotations_survive_a_csv_round_trip() {
    let apple = Label::Food(FoodClass::new("apple").unwrap());
    let twist = Label::Food(FoodClass::new("fired dough twist").unwrap());
    let scenes = vec![
        scene("a1", View::Top, vec![det(apple.clone(), 0.875, (10, 12, 80, 90)), det(Label::Calibration, 1.0, (100, 5, 140, 45))]),
        scene("a1", View::Side, vec![det(apple, 0.5, (3, 4, 50, 60)), det(Label::Calibration, 0.99, (70, 8, 110, 48))]),
        scene("b2", View::Top, vec![det(twist, 0.25, (0, 0, 9, 9))]),
    ];
    let mut bytes = Vec::new();
    write_annotations_csv(&scenes, &mut bytes).unwrap();
    let text = String::from_utf8(bytes).unwrap();
    let set = parse_annotations_csv(&text, Path::new("a.csv"), Path::new("imgs"), &Taxonomy::standard()).unwrap();
    assert!(set.unknown_labels.is_empty());
    let mut got = set.scenes.clone();
    got.sort_by(|a, b| (&a.scene_id, a.view).cmp(&(&b.scene_id, b.view)));
    assert_eq!(got.len(), 3);
    for (g, want) in got.iter().zip(&scenes) {
        assert_eq!((&g.scene_id, g.view), (&want.scene_id, want.view));
        assert_eq!(g.detections, want.detections);
    }
    let pairs = set.pairs();
    assert_eq!(pairs.len(), 2);
    assert!(pairs[1].side.is_none());
}

#[test]
fn parameter_and_truth_tables_round_trip() {
    let params = default_params();
    let mut bytes = Vec::new();
    write_params_csv(&params, &mut bytes).unwrap();
    let back = parse_params(std::str::from_utf8(&bytes).unwrap(), Path::new("p.csv")).unwrap();
    assert_eq!(back, params);

    let truth = vec![
        GroundTruthRecord { scene_id: "s1".into(), food: FoodClass::new("egg").unwrap(), volume: 52.94, mass: 61.64 },
        GroundTruthRecord { scene_id: "s2".into(), food: FoodClass::new("egg").unwrap(), volume: 0.1, mass: 1e-3 },
    ];
    let mut bytes = Vec::new();
    write_ground_truth_csv(&truth, &mut bytes).unwrap();
    assert_eq!(parse_ground_truth(std::str::from_utf8(&bytes).unwrap(), Path::new("t.csv")).unwrap(), truth);
}

#[test]
fn voc_files_load_from_disk_and_merge() {
    let dir = tempfile::tempdir().unwrap();
    let xml = |view: &str, xmax: u32| {
        format!(
            "<annotation>\n  <filename>dish7_{view}.jpg</filename>\n  <size><width>200</width><height>150</height><depth>3</depth></size>\n  \
             <object><name>Lemon</name><bndbox><xmin>10</xmin><ymin>20</ymin><xmax>{xmax}</xmax><ymax>90</ymax></bndbox></object>\n  \
             <object><name>coin</name><bndbox><xmin>150</xmin><ymin>10</ymin><xmax>190.4</xmax><ymax>50</ymax></bndbox></object>\n\
             </annotation>\n"
        )
    };
    let taxonomy = Taxonomy::standard();
    let mut set = foodcal::dataset::AnnotationSet::default();
    for (view, xmax) in [("top", 80), ("side", 300)] {
        let path = dir.path().join(format!("dish7_{view}.xml"));
        fs::write(&path, xml(view, xmax)).unwrap();
        match load_annotations(&path, AnnotationFormat::from_path(&path).unwrap(), &taxonomy) {
            Ok(s) => set.merge(s).unwrap(),
            Err(e) => {
                assert_eq!(view, "side");
                assert!(matches!(e, Error::BoxOutsideImage { .. } | Error::Malformed { .. }), "{e}");
            }
        }
    }
    assert_eq!(set.scenes.len(), 1);
    let top = &set.scenes[0];
    assert_eq!((top.scene_id.as_str(), top.view), ("dish7", View::Top));
    assert_eq!(top.detections[0].label.as_str(), "lemon");
    assert_eq!(top.detections[1].bbox.x_max, 190);
    assert!(top.detections.iter().all(|d| d.score == 1.0));

    let again = load_annotations(&dir.path().join("dish7_top.xml"), AnnotationFormat::VocXml, &taxonomy).unwrap();
    assert!(matches!(set.merge(again), Err(Error::DuplicateView { .. })));
}
