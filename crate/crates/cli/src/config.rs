//! TOML run configuration. Every table is optional; command-line flags
//! override file values.

use std::path::Path;

use omnivln::chat::ChatEndpoint;
use omnivln::navsim::{EpisodeConfig, SerializerMode};
use omnivln::pipeline::BuildConfig;
use omnivln::view::ViewConfig;
use serde::Deserialize;

use crate::error::Failure;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Arena voxel size used by `gen`.
    pub voxel_size: Option<f64>,
    pub build: BuildConfig,
    pub view: ViewConfig,
    pub episode: EpisodeSection,
    pub backend: BackendSection,
    pub verifier: VerifierSection,
    pub suite: SuiteSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            voxel_size: None,
            build: BuildConfig::default(),
            view: ViewConfig::default(),
            episode: EpisodeSection::default(),
            backend: BackendSection::default(),
            verifier: VerifierSection::default(),
            suite: SuiteSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeSection {
    pub max_steps: usize,
    pub success_radius: f64,
    pub replan_budget: usize,
    pub estimator: String,
    pub mode: SerializerMode,
}

impl Default for EpisodeSection {
    fn default() -> Self {
        let e = EpisodeConfig::default();
        Self { max_steps: e.max_steps, success_radius: e.success_radius, replan_budget: e.replan_budget, estimator: e.estimator, mode: e.mode }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendSection {
    /// `scripted`, `replay` or `http`.
    pub name: String,
    pub endpoint: Option<ChatEndpoint>,
    /// Canned responses for `replay`: JSON array or transcript JSONL.
    pub replay: Option<String>,
}

impl Default for BackendSection {
    fn default() -> Self {
        Self { name: "scripted".into(), endpoint: None, replay: None }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifierSection {
    /// `scripted` (scene ground truth) or `http`.
    pub name: String,
    pub endpoint: Option<ChatEndpoint>,
    /// Panorama image sent with every http verification request.
    pub panorama: Option<String>,
}

impl Default for VerifierSection {
    fn default() -> Self {
        Self { name: "scripted".into(), endpoint: None, panorama: None }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteSection {
    pub datasets: Vec<String>,
    pub seeds: Vec<u64>,
    pub threads: Option<usize>,
}

impl Default for SuiteSection {
    fn default() -> Self {
        Self { datasets: (1..=9).map(|i| format!("D{i}")).collect(), seeds: (0..5).collect(), threads: None }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        let e = &self.episode;
        EpisodeConfig {
            max_steps: e.max_steps,
            success_radius: e.success_radius,
            replan_budget: e.replan_budget,
            mode: e.mode,
            view: self.view.clone(),
            estimator: e.estimator.clone(),
        }
    }

    /// Options blob for the backend registry.
    pub fn backend_options(&self) -> Result<serde_json::Value, Failure> {
        let b = &self.backend;
        Ok(match b.name.as_str() {
            "http" => {
                let ep = b.endpoint.as_ref().ok_or_else(|| Failure::config("backend \"http\" needs a [backend.endpoint] table"))?;
                serde_json::to_value(ep).expect("endpoint serialises")
            }
            "replay" => {
                let path = b.replay.as_ref().ok_or_else(|| Failure::config("backend \"replay\" needs `replay = <file>`"))?;
                serde_json::json!({ "path": path })
            }
            _ => serde_json::Value::Null,
        })
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Failure::config(format!("{name} must be positive, got {v}")))
            }
        };
        if let Some(v) = self.voxel_size {
            positive("voxel_size", v)?;
        }
        positive("build.sample_spacing", self.build.sample_spacing)?;
        positive("build.epsilon", self.build.epsilon)?;
        positive("view.focal_radius", self.view.focal_radius)?;
        positive("episode.success_radius", self.episode.success_radius)?;
        if !(0.0..=1.0).contains(&self.build.verify.tau) {
            return Err(Failure::config(format!("build.verify.tau must lie in [0, 1], got {}", self.build.verify.tau)));
        }
        if self.episode.replan_budget == 0 || self.episode.max_steps == 0 {
            return Err(Failure::config("episode.replan_budget and episode.max_steps must be at least 1"));
        }
        Ok(())
    }
}
