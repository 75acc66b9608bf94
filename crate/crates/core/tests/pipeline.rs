mod common;

use std::fs;

use common::{corpus, tiny_model};
use docie_core::corpus::io::{list_images, save_split, LABELS_FILE};
use docie_core::model::ForwardMode;
use docie_core::pipeline::{extract_file, extract_image, render_overlay, ExtractionRecord, EXTRACTION_VERSION};
use docie_core::raster::Raster;

#[test]
fn blank_page_yields_no_boxes() {
    let (docs, cfg) = corpus(3, 2);
    let model = tiny_model::<f32>(&docs, &cfg, 1);
    let blank = Raster::filled(192, 160, 1, 1.0);
    let pred = extract_image(&model, &blank, None, ForwardMode::default()).unwrap();
    assert!(pred.boxes.is_empty());
    assert!(pred.entities.is_empty());
}

#[test]
fn every_image_gets_a_record_without_reading_labels() {
    let (docs, cfg) = corpus(3, 3);
    let model = tiny_model::<f32>(&docs, &cfg, 1);
    let dir = tempfile::tempdir().unwrap();
    save_split(dir.path(), &docs, &cfg.schema().unwrap()).unwrap();
    // Replace the labels with a dangling link: any attempt to read it fails.
    let labels = dir.path().join(LABELS_FILE);
    fs::remove_file(&labels).unwrap();
    std::os::unix::fs::symlink(dir.path().join("missing"), &labels).unwrap();
    let images = list_images(dir.path()).unwrap();
    assert_eq!(images.len(), 3);
    for path in &images {
        let record = extract_file(&model, path, Some(128), ForwardMode::default()).unwrap();
        assert_eq!(record.version, EXTRACTION_VERSION);
        assert_eq!((record.width, record.height), (192, 160));
        assert!(record.boxes.iter().all(|b| b.x1 <= 192.0 && b.y1 <= 160.0));
        assert_eq!(record.boxes.len(), record.transcripts.len());
        let json = serde_json::to_string(&record).unwrap();
        assert_eq!(serde_json::from_str::<ExtractionRecord>(&json).unwrap(), record);
    }
}

#[test]
fn ground_truth_boxes_give_one_transcript_each() {
    let (docs, cfg) = corpus(3, 1);
    let model = tiny_model::<f32>(&docs, &cfg, 1);
    let pred = model.predict(&docs[0].image, Some(&docs[0].boxes), ForwardMode::default()).unwrap();
    assert_eq!(pred.transcripts.len(), docs[0].boxes.len());
    assert_eq!(pred.tags.len(), docs[0].boxes.len());
    let record = ExtractionRecord::new("x", 192, 160, &pred, &model.schema);
    let overlay = render_overlay(&docs[0].image, &record);
    assert_eq!((overlay.width(), overlay.height(), overlay.channels()), (192, 160, 3));
}
