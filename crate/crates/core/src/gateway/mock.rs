use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{image_to_percent, prompt_subject, DetectorBackend, DetectorTag, GatewayError, PointResponse, Result, WirePoint, GLOBAL_PROMPT};
use crate::mesh::{SurfacePoint, TriangleMesh};
use crate::render::{visible_projection, RenderedView};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockKeypoint {
    pub id: String,
    /// Name the keypoint answers to inside the point prompt template.
    pub name: String,
    pub anchor: SurfacePoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockDetectorConfig {
    pub keypoints: Vec<MockKeypoint>,
    pub sigma: f64,
    pub outlier: f64,
    pub miss: f64,
    pub multi: f64,
    pub seed: u64,
}

impl MockDetectorConfig {
    pub fn noiseless(keypoints: Vec<MockKeypoint>, seed: u64) -> Self {
        Self {
            keypoints,
            sigma: 0.0,
            outlier: 0.0,
            miss: 0.0,
            multi: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(GatewayError::MockConfig(format!("sigma must be finite and >= 0, got {}", self.sigma)));
        }
        for (name, p) in [("outlier", self.outlier), ("miss", self.miss), ("multi", self.multi)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(GatewayError::MockConfig(format!("{name} probability {p} outside [0,1]")));
            }
        }
        Ok(())
    }
}

/// On-disk mock description: keypoints by position, snapped onto the mesh
/// the pipeline actually renders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockSpec {
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub outlier: f64,
    #[serde(default)]
    pub miss: f64,
    #[serde(default)]
    pub multi: f64,
    #[serde(default)]
    pub seed: u64,
    pub keypoints: Vec<MockKeypointSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockKeypointSpec {
    pub id: String,
    pub name: String,
    pub xyz: [f64; 3],
}

impl MockSpec {
    /// Reads a TOML spec, or JSON when the extension is `.json`.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let bad = |e: String| GatewayError::MockConfig(format!("{}: {e}", path.display()));
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(|e| bad(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| bad(e.to_string()))
        }
    }

    pub fn resolve(&self, mesh: &TriangleMesh) -> Result<MockDetectorConfig> {
        let keypoints = self
            .keypoints
            .iter()
            .map(|k| {
                let anchor = mesh
                    .nearest_surface_point(&k.xyz.into())
                    .ok_or_else(|| GatewayError::MockConfig("mesh is empty".into()))?;
                Ok(MockKeypoint {
                    id: k.id.clone(),
                    name: k.name.clone(),
                    anchor,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let config = MockDetectorConfig {
            keypoints,
            sigma: self.sigma,
            outlier: self.outlier,
            miss: self.miss,
            multi: self.multi,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Simulated detector. Output is a pure function of the config, the view id
/// and the prompt: every query draws the same fixed sequence of random
/// numbers from a generator seeded by those three, so sweeps over sigma or
/// the probabilities reuse identical draws.
#[derive(Debug, Clone)]
pub struct MockDetector {
    config: MockDetectorConfig,
}

impl MockDetector {
    pub fn new(config: MockDetectorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &MockDetectorConfig {
        &self.config
    }

    /// Detections for one ground-truth keypoint in one view.
    pub fn mock_detect(&self, view: &RenderedView, prompt_id: &str) -> Result<Vec<WirePoint>> {
        let kp = self
            .config
            .keypoints
            .iter()
            .find(|k| k.id == prompt_id)
            .ok_or_else(|| GatewayError::UnknownPrompt(prompt_id.to_string()))?;
        Ok(self.detect_keypoint(view, kp))
    }

    fn detect_keypoint(&self, view: &RenderedView, kp: &MockKeypoint) -> Vec<WirePoint> {
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(c.seed, view.view_id as u64, &kp.id));
        let miss_u: f64 = rng.random();
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let outlier_u: f64 = rng.random();
        let outlier_pick: f64 = rng.random();
        let multi_u: f64 = rng.random();
        let z3: f64 = rng.sample(StandardNormal);
        let z4: f64 = rng.sample(StandardNormal);

        let Some((u, v)) = visible_projection(view, &kp.anchor.position) else {
            return Vec::new();
        };
        if miss_u < c.miss {
            return Vec::new();
        }
        let (w, h) = (view.width(), view.height());
        let noisy = |dx: f64, dy: f64| {
            let (x, y) = image_to_percent(
                (u + c.sigma * dx).clamp(0.0, w as f64),
                (v + c.sigma * dy).clamp(0.0, h as f64),
                w,
                h,
            );
            WirePoint { x, y }
        };
        let mut out = vec![noisy(z1, z2)];
        if outlier_u < c.outlier {
            // the answer lands on a random surface pixel instead
            let fg = view.foreground_pixels();
            if !fg.is_empty() {
                let (i, j) = fg[((outlier_pick * fg.len() as f64) as usize).min(fg.len() - 1)];
                let (x, y) = image_to_percent(i as f64 + 0.5, j as f64 + 0.5, w, h);
                out[0] = WirePoint { x, y };
            }
        }
        if multi_u < c.multi {
            out.push(noisy(z3, z4));
        }
        out
    }
}

impl DetectorBackend for MockDetector {
    fn point(&self, view: &RenderedView, prompt: &str) -> Result<PointResponse> {
        if prompt.trim() == GLOBAL_PROMPT {
            let points = self.config.keypoints.iter().flat_map(|k| self.detect_keypoint(view, k)).collect();
            return Ok(PointResponse { points });
        }
        let subject = prompt_subject(prompt).ok_or_else(|| GatewayError::UnknownPrompt(prompt.to_string()))?;
        let kp = self
            .config
            .keypoints
            .iter()
            .find(|k| {
                let name = k.name.trim();
                let name = name.strip_prefix("the ").unwrap_or(name);
                name.eq_ignore_ascii_case(subject)
            })
            .ok_or_else(|| GatewayError::UnknownPrompt(prompt.to_string()))?;
        Ok(PointResponse {
            points: self.detect_keypoint(view, kp),
        })
    }

    fn tag(&self) -> DetectorTag {
        DetectorTag::Mock
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn mix(seed: u64, view: u64, key: &str) -> u64 {
    // FNV-1a over the key keeps the stream independent of platform hashing
    let fnv = key
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3));
    splitmix(splitmix(splitmix(seed) ^ view) ^ fnv)
}
