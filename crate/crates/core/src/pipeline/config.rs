use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ErrorSource, PipelineError, PipelineSettings, Result, Stage};
use crate::gateway::{
    list_candidate_keypoints, load_catalogs, point_prompt, DetectorBackend, MockDetector, MockDetectorConfig,
    MockSpec, Prompt, RemoteConfig, RemoteDetector, RemoteNamer, ReplayStore,
};
use crate::mesh::{load_mesh, normalize_mesh, MeshFormat, Normalization, TriangleMesh};
use crate::render::{render, ShadeStyle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DetectorSpec {
    /// Simulated detector described by a TOML or JSON spec.
    Mock { spec: PathBuf },
    Remote {
        #[serde(default)]
        remote: RemoteConfig,
    },
    /// Answers only from a recorded store.
    Replay { dir: PathBuf },
    /// Forwards to a remote endpoint and stores every answer.
    Record {
        dir: PathBuf,
        #[serde(default)]
        remote: RemoteConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum PromptSource {
    /// Keypoint descriptions from a catalog file, one prompt per entry.
    Catalog {
        path: PathBuf,
        category: String,
        #[serde(default)]
        use_short: bool,
    },
    /// Prompts listed in the config itself.
    List { prompts: Vec<Prompt> },
    /// Keypoint names from the mock detector's spec.
    Mock,
    /// Candidate names asked from a remote namer on the first view.
    Namer {
        #[serde(default)]
        remote: RemoteConfig,
        #[serde(default)]
        category: Option<String>,
    },
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("zerokey-out")
}

/// A run as read from TOML. Relative paths are resolved against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mesh: PathBuf,
    /// Defaults to the mesh file stem.
    #[serde(default)]
    pub model_id: Option<String>,
    /// Overrides the mock spec's seed when set.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Write one marker overlay PNG per predicted keypoint.
    #[serde(default)]
    pub overlays: bool,
    #[serde(flatten)]
    pub settings: PipelineSettings,
    pub detector: DetectorSpec,
    pub prompts: PromptSource,
}

fn cfg_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::config(msg)
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| cfg_err(e.to_string()))?;
        cfg.rebase(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.mesh);
        fix(&mut self.output_dir);
        match &mut self.detector {
            DetectorSpec::Mock { spec } => fix(spec),
            DetectorSpec::Replay { dir } | DetectorSpec::Record { dir, .. } => fix(dir),
            DetectorSpec::Remote { .. } => {}
        }
        if let PromptSource::Catalog { path, .. } = &mut self.prompts {
            fix(path);
        }
    }

    pub fn model_id(&self) -> String {
        self.model_id.clone().unwrap_or_else(|| {
            self.mesh
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "model".into())
        })
    }

    /// Checks settings and that every referenced input exists.
    pub fn validate(&self) -> Result<()> {
        self.settings.validate()?;
        let must_exist = |p: &Path, what: &str| {
            if p.exists() {
                Ok(())
            } else {
                Err(cfg_err(format!("{what} {} does not exist", p.display())))
            }
        };
        must_exist(&self.mesh, "mesh")?;
        match &self.detector {
            DetectorSpec::Mock { spec } => must_exist(spec, "mock spec")?,
            DetectorSpec::Replay { dir } => must_exist(dir, "replay store")?,
            _ => {}
        }
        match &self.prompts {
            PromptSource::Catalog { path, .. } => must_exist(path, "prompt catalog")?,
            PromptSource::Mock if !matches!(self.detector, DetectorSpec::Mock { .. }) => {
                return Err(cfg_err("prompt source \"mock\" needs the mock detector"))
            }
            PromptSource::List { prompts } if prompts.is_empty() => return Err(cfg_err("prompt list is empty")),
            _ => {}
        }
        Ok(())
    }

    /// Input files whose digests go into the manifest.
    pub fn input_files(&self) -> Vec<(String, PathBuf)> {
        let mut out = vec![("mesh".to_string(), self.mesh.clone())];
        if let DetectorSpec::Mock { spec } = &self.detector {
            out.push(("mock_spec".into(), spec.clone()));
        }
        if let PromptSource::Catalog { path, .. } = &self.prompts {
            out.push(("catalog".into(), path.clone()));
        }
        out
    }

    /// Loads and normalizes the mesh.
    pub fn load_mesh(&self) -> Result<(TriangleMesh, Normalization)> {
        let format = MeshFormat::from_path(&self.mesh)
            .ok_or_else(|| cfg_err(format!("unknown mesh format: {}", self.mesh.display())))?;
        let raw = load_mesh(&self.mesh, format).map_err(|e| PipelineError::new(Stage::Load, e))?;
        normalize_mesh(&raw).map_err(|e| PipelineError::new(Stage::Load, e))
    }

    /// The mock detector configuration, with the run seed applied.
    pub fn mock_config(&self, mesh: &TriangleMesh) -> Result<Option<MockDetectorConfig>> {
        let DetectorSpec::Mock { spec } = &self.detector else {
            return Ok(None);
        };
        let spec = MockSpec::load(spec).map_err(|e| PipelineError::new(Stage::Config, e))?;
        let mut cfg = spec.resolve(mesh).map_err(|e| PipelineError::new(Stage::Config, e))?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(Some(cfg))
    }

    pub fn build_detector(&self, mesh: &TriangleMesh) -> Result<Box<dyn DetectorBackend>> {
        let gw = |e| PipelineError::new(Stage::Config, ErrorSource::Gateway(e));
        Ok(match &self.detector {
            DetectorSpec::Mock { .. } => {
                let cfg = self.mock_config(mesh)?.expect("mock detector");
                Box::new(MockDetector::new(cfg).map_err(gw)?)
            }
            DetectorSpec::Remote { remote } => Box::new(RemoteDetector::new(remote).map_err(gw)?),
            DetectorSpec::Replay { dir } => Box::new(ReplayStore::replay(dir).map_err(gw)?),
            DetectorSpec::Record { dir, remote } => {
                let inner = RemoteDetector::new(remote).map_err(gw)?;
                Box::new(ReplayStore::record(dir, Box::new(inner)).map_err(gw)?)
            }
        })
    }

    pub fn resolve_prompts(&self, mesh: &TriangleMesh) -> Result<Vec<Prompt>> {
        let prompts = match &self.prompts {
            PromptSource::Catalog {
                path,
                category,
                use_short,
            } => {
                let catalogs = load_catalogs(path).map_err(|e| PipelineError::new(Stage::Prompts, e))?;
                let cat = catalogs
                    .iter()
                    .find(|c| c.category.eq_ignore_ascii_case(category))
                    .ok_or_else(|| cfg_err(format!("category {category} not in {}", path.display())))?;
                cat.entries
                    .iter()
                    .map(|e| Prompt {
                        id: e.id.to_string(),
                        text: point_prompt(e.text(*use_short)),
                    })
                    .collect()
            }
            PromptSource::List { prompts } => prompts.clone(),
            PromptSource::Mock => self
                .mock_config(mesh)?
                .ok_or_else(|| cfg_err("prompt source \"mock\" needs the mock detector"))?
                .keypoints
                .iter()
                .map(|k| Prompt {
                    id: k.id.clone(),
                    text: point_prompt(&k.name),
                })
                .collect(),
            PromptSource::Namer { remote, category } => {
                let mut remote = remote.clone();
                if remote.path == RemoteConfig::default().path {
                    remote.path = "/describe".into();
                }
                let namer = RemoteNamer::new(&remote).map_err(|e| PipelineError::new(Stage::Prompts, e))?;
                let camera = self.settings.cameras()?.remove(0);
                let view = render(mesh, &camera, &ShadeStyle::default(), 0);
                list_candidate_keypoints(&namer, &view, category.as_deref())
                    .map_err(|e| PipelineError::new(Stage::Prompts, e).at_view(0))?
                    .iter()
                    .enumerate()
                    .map(|(i, name)| Prompt {
                        id: i.to_string(),
                        text: point_prompt(name),
                    })
                    .collect()
            }
        };
        Ok(prompts)
    }
}
