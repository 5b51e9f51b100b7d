//! Run configuration: an optional TOML or JSON file, overridden by flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fungrasp_core::object::AffordanceParams;
use fungrasp_core::trainer::TrainConfig;
use fungrasp_core::{assets, Scene};
use serde::{Deserialize, Serialize};

use crate::UserError;

/// Asset locations; unset entries fall back to the bundled assets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssetPaths {
    pub hand: Option<PathBuf>,
    /// Defaults to `<hand stem>.styles.json` next to the hand file.
    pub styles: Option<PathBuf>,
    pub demo: Option<PathBuf>,
    pub objects: Option<PathBuf>,
    pub cameras: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub episodes: usize,
    pub exhaustive_styles: bool,
    pub strict_success: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            episodes: 500,
            exhaustive_styles: false,
            strict_success: false,
        }
    }
}

/// Everything a subcommand needs. `seed` is the single source of randomness and
/// replaces `train.seed`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub assets: AssetPaths,
    pub affordance: AffordanceParams,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

/// Resolved asset files.
#[derive(Debug, Clone)]
pub struct Assets {
    pub hand: PathBuf,
    pub styles: PathBuf,
    pub demo: PathBuf,
    pub objects: PathBuf,
    pub cameras: PathBuf,
}

impl RunConfig {
    /// Reads a config file; `.json` files are JSON, anything else TOML.
    /// Relative paths inside the file are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UserError::new(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| UserError::new(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| UserError::new(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        let a = &mut cfg.assets;
        for p in [&mut a.hand, &mut a.styles, &mut a.demo, &mut a.objects, &mut a.cameras, &mut cfg.out] {
            fix(p);
        }
        Ok(cfg)
    }

    pub fn assets(&self) -> Result<Assets> {
        let a = &self.assets;
        let hand = a.hand.clone().unwrap_or_else(|| assets::hand_path("inspire_like"));
        let styles = match (&a.styles, &a.hand) {
            (Some(s), _) => s.clone(),
            (None, Some(h)) => {
                let stem = h.file_stem().unwrap_or_default().to_string_lossy();
                h.with_file_name(format!("{stem}.styles.json"))
            }
            (None, None) => assets::styles_path("inspire_like"),
        };
        let resolved = Assets {
            hand,
            styles,
            demo: a.demo.clone().unwrap_or_else(|| assets::demo_path("inspire_like")),
            objects: a.objects.clone().unwrap_or_else(assets::objects_dir),
            cameras: a.cameras.clone().unwrap_or_else(assets::cameras_path),
        };
        for (what, p) in [
            ("hand", &resolved.hand),
            ("styles", &resolved.styles),
            ("demo", &resolved.demo),
            ("objects", &resolved.objects),
            ("cameras", &resolved.cameras),
        ] {
            if !p.exists() {
                return Err(UserError::new(format!("{what} path {} does not exist", p.display())).into());
            }
        }
        Ok(resolved)
    }

    pub fn scene(&self) -> Result<Scene> {
        let a = self.assets()?;
        Scene::load(&a.hand, &a.styles, &a.demo, &a.objects, self.affordance).context("loading assets")
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| UserError::new("a seed is required: pass --seed or set `seed` in the config file").into())
    }

    pub fn workers(&self) -> usize {
        self.workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut t = self.train.clone();
        if let Some(s) = self.seed {
            t.seed = s;
        }
        t.validate().map_err(|e| UserError::new(e.to_string()))?;
        Ok(t)
    }

    /// Digest of the settings that determine results; output location and
    /// worker count are left out because they cannot change outputs.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        c.workers = None;
        fungrasp_core::io::digest(&c)
    }
}
