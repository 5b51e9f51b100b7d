//! Paths of the bundled hands, styles, demonstrations, objects and cameras.

use std::path::PathBuf;

pub fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets")
}

pub fn hand_path(name: &str) -> PathBuf {
    root().join("hands").join(format!("{name}.json"))
}

pub fn styles_path(name: &str) -> PathBuf {
    root().join("hands").join(format!("{name}.styles.json"))
}

pub fn demo_path(hand: &str) -> PathBuf {
    root().join("demos").join(format!("{hand}.json"))
}

pub fn objects_dir() -> PathBuf {
    root().join("objects")
}

pub fn cameras_path() -> PathBuf {
    root().join("cameras").join("default.json")
}
