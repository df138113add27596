//! The JSON cache format shared with the offline embedding exporter.

use std::fs;

use textsense_core::text::{
    load_embedding_cache, pseudo_cache, pseudo_embed, write_embedding_cache, PromptStrategy, TokenMatrix,
};
use textsense_core::Error;

const LABELS: [&str; 7] = ["walk", "wave", "sit", "run", "jump", "squat", "clap"];

fn labels() -> Vec<String> {
    LABELS.iter().map(|s| s.to_string()).collect()
}

#[test]
fn exporter_style_file_loads() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clip_TCE.json");
    fs::write(
        &path,
        r#"{
  "encoder": "clip-vit-b32",
  "strategy": "TCE",
  "dim": 4,
  "entries": {
    "walk": [[0.5, 0.5, 0.5, 0.5]],
    "wave": [[1.0, 0.0, 0.0, 0.0]],
    "sit":  [[0.0, -0.6, 0.8, 0.0]]
  },
  "metadata": {"templates": "project template bank"}
}"#,
    )
    .unwrap();
    let cache = load_embedding_cache(&path).unwrap();
    assert_eq!(cache.encoder_name, "clip-vit-b32");
    assert_eq!(cache.strategy, PromptStrategy::Tce);
    assert_eq!((cache.dim, cache.descriptions(), cache.entries.len()), (4, 1, 3));
    assert_eq!(cache.get("sit").unwrap()[0], vec![0.0, -0.6, 0.8, 0.0]);
}

#[test]
fn written_file_has_exactly_the_shared_fields() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    let cache = pseudo_cache(&labels(), 6, PromptStrategy::Tde).unwrap();
    write_embedding_cache(&path, &cache).unwrap();
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let obj = v.as_object().unwrap();
    let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(keys, ["dim", "encoder", "entries", "strategy"]);
    assert_eq!(obj["strategy"], "TDE");
    assert_eq!(obj["dim"], 6);
    let entries = obj["entries"].as_object().unwrap();
    assert_eq!(entries.len(), 7);
    for vectors in entries.values() {
        let vectors = vectors.as_array().unwrap();
        assert_eq!(vectors.len(), PromptStrategy::Tde.descriptions());
        assert!(vectors.iter().all(|x| x.as_array().unwrap().len() == 6));
    }
}

#[test]
fn seven_label_round_trip_is_bit_exact_and_unit_norm() {
    let dir = tempfile::tempdir().unwrap();
    for strategy in PromptStrategy::ALL {
        let path = dir.path().join(format!("{}.json", strategy.tag()));
        let cache = pseudo_cache(&labels(), 48, strategy).unwrap();
        write_embedding_cache(&path, &cache).unwrap();
        let back = load_embedding_cache(&path).unwrap();
        assert_eq!(back, cache);
        for vectors in back.entries.values() {
            for v in vectors {
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-6);
            }
        }
        if strategy == PromptStrategy::Tle {
            for label in LABELS {
                let direct = pseudo_embed(label, 48, strategy).unwrap();
                assert_eq!(back.get(label).unwrap()[0], direct);
            }
        }
    }
}

#[test]
fn malformed_files_name_the_offending_label() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (
            r#"{"encoder":"e","strategy":"TLE","dim":3,"entries":{"a":[[1,0,0]],"b":[[1,0]]}}"#,
            "b",
        ),
        (
            r#"{"encoder":"e","strategy":"TDE","dim":2,"entries":{"a":[[1,0],[0,1]],"b":[[1,0]]}}"#,
            "b",
        ),
    ];
    for (i, (text, label)) in cases.iter().enumerate() {
        let path = dir.path().join(format!("bad{i}.json"));
        fs::write(&path, text).unwrap();
        let err = load_embedding_cache(&path).unwrap_err();
        match &err {
            Error::DimensionMismatch { label: l, .. } | Error::RaggedEntries { label: l, .. } => {
                assert_eq!(l, label)
            }
            other => panic!("unexpected {other:?}"),
        }
    }
    let path = dir.path().join("strategy.json");
    fs::write(&path, r#"{"encoder":"e","strategy":"XYZ","dim":1,"entries":{"a":[[1]]}}"#).unwrap();
    assert!(matches!(load_embedding_cache(&path), Err(Error::Json { .. })));
}

#[test]
fn tokens_follow_the_label_order_not_the_file_order() {
    let cache = pseudo_cache(&labels(), 5, PromptStrategy::Tce).unwrap();
    let order: Vec<String> = ["sit", "walk"].iter().map(|s| s.to_string()).collect();
    let t = TokenMatrix::from_cache(&cache, &order).unwrap();
    assert_eq!(t.batch(), 2);
    assert_eq!(t.token(0, 0), cache.get("sit").unwrap()[0].as_slice());
    assert_eq!(t.token(1, 0), cache.get("walk").unwrap()[0].as_slice());
    let missing = vec!["fly".to_string()];
    assert!(TokenMatrix::from_cache(&cache, &missing).is_err());
}
