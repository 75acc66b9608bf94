use std::fs;

use docie_core::corpus::io::{load_split, save_split};
use docie_core::corpus::synth::{generate_corpus, SynthConfig};
use docie_core::corpus::{is_well_formed, LayoutKind, TextKind};
use proptest::prelude::*;

fn config(layout: LayoutKind, text: TextKind) -> SynthConfig {
    SynthConfig { layout, text, ..SynthConfig::default() }
}

#[test]
fn a_hundred_documents_of_every_kind_are_valid() {
    for layout in [LayoutKind::Fixed, LayoutKind::Variable] {
        for text in [TextKind::Structured, TextKind::SemiStructured] {
            let cfg = config(layout, text);
            let schema = cfg.schema().unwrap();
            let docs = generate_corpus(&cfg, 5, 100).unwrap();
            assert_eq!(docs.len(), 100);
            for d in &docs {
                d.validate(&schema).unwrap();
                assert_eq!((d.layout_kind, d.text_kind), (layout, text));
                assert!(!d.ground_truth(&schema).is_empty(), "{} has no entity", d.id);
            }
        }
    }
}

#[test]
fn identical_seeds_give_identical_files() {
    let cfg = SynthConfig::default();
    let schema = cfg.schema().unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        save_split(dir.path(), &generate_corpus(&cfg, 42, 12).unwrap(), &schema).unwrap();
    }
    let mut names: Vec<_> = fs::read_dir(dirs[0].path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 12 + 2);
    for name in names {
        assert_eq!(fs::read(dirs[0].path().join(&name)).unwrap(), fs::read(dirs[1].path().join(&name)).unwrap(), "{name:?}");
    }
    let other = generate_corpus(&cfg, 43, 12).unwrap();
    assert_ne!(other, generate_corpus(&cfg, 42, 12).unwrap());
}

#[test]
fn saved_splits_load_back_unchanged() {
    let cfg = config(LayoutKind::Variable, TextKind::SemiStructured);
    let docs = generate_corpus(&cfg, 8, 6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_split(dir.path(), &docs, &cfg.schema().unwrap()).unwrap();
    let (back, schema) = load_split(dir.path(), true).unwrap();
    assert_eq!(schema, cfg.schema().unwrap());
    assert_eq!(back.len(), docs.len());
    for (a, b) in docs.iter().zip(&back) {
        assert_eq!((&a.id, &a.boxes, &a.transcripts, &a.char_tags), (&b.id, &b.boxes, &b.transcripts, &b.char_tags));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tags_align_with_characters(seed in any::<u64>(), variable in any::<bool>(), semi in any::<bool>()) {
        let layout = if variable { LayoutKind::Variable } else { LayoutKind::Fixed };
        let text = if semi { TextKind::SemiStructured } else { TextKind::Structured };
        for d in generate_corpus(&config(layout, text), seed, 2).unwrap() {
            for (t, tags) in d.transcripts.iter().zip(&d.char_tags) {
                prop_assert_eq!(t.chars().count(), tags.len());
                prop_assert!(is_well_formed(tags));
            }
        }
    }
}
