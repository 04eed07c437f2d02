#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use convctl::pipeline::{train_archive, TrainConfig, VectorSource};

/// A small desk model written to disk once per test binary.
pub fn model_path() -> &'static Path {
    static PATH: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    &PATH
        .get_or_init(|| {
            let (train, _) = convctl::desk::generate_splits(120, 6, 7);
            let vectors = convctl::desk::generate_vectors(7);
            let archive = train_archive(
                &train,
                Some(VectorSource {
                    vectors: &vectors,
                    source: "desk".into(),
                    sha256: String::new(),
                }),
                &TrainConfig {
                    seed: 7,
                    ..TrainConfig::default()
                },
            )
            .unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("desk.cvct");
            archive.save(&path).unwrap();
            (dir, path)
        })
        .1
}
