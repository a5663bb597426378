//! Visual and text encoder contracts.
//!
//! The visual encoder turns sampled frames (or a precomputed fixture) into an
//! `N x D` token matrix; the text encoder turns a lexicon entry into `M x E`
//! step embeddings plus one `1 x E` global embedding. Providers are chosen by
//! name through [`EncoderConfig::provider`]; `toy` is built in and any other
//! name must be registered on an [`EncoderRegistry`].

pub(crate) mod toy;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use toy::{ToyTextEncoder, ToyVisualEncoder};

use crate::data::{jittered_indices, sample_frames, uniform_indices, ActionLexiconEntry, DatasetManifest, MediaRef, SampleRecord};
use crate::error::{EfaError, Result};
pub use crate::features::FeatureMatrix;

pub const TOY_PROVIDER: &str = "toy";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Visual token width `D`.
    pub visual_dim: usize,
    /// Text embedding width `E`.
    pub text_dim: usize,
    pub frames_per_video: usize,
    pub provider: String,
    /// Filled from the run's root seed.
    #[serde(skip)]
    pub seed: u64,
    /// Whether external encoder weights are updated during training. Toy
    /// providers have no weights and ignore it.
    pub fine_tune: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { visual_dim: 16, text_dim: 24, frames_per_video: 6, provider: TOY_PROVIDER.into(), seed: 0, fine_tune: false }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.visual_dim == 0 || self.text_dim == 0 || self.frames_per_video == 0 {
            return Err(EfaError::Config("encoder dims and frames_per_video must be at least 1".into()));
        }
        Ok(())
    }
}

pub enum VisualInput {
    /// Raw bytes of each sampled frame, in temporal order.
    Frames(Vec<Vec<u8>>),
    Fixture(FeatureMatrix),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextFeatures {
    /// `M x E`, one row per step.
    pub steps: FeatureMatrix,
    /// `1 x E`.
    pub global: FeatureMatrix,
}

pub trait VisualEncoder: Send + Sync {
    fn dim(&self) -> usize;
    fn encode(&self, input: &VisualInput) -> Result<FeatureMatrix>;
}

pub trait TextEncoder: Send + Sync {
    fn dim(&self) -> usize;
    fn encode(&self, entry: &ActionLexiconEntry) -> Result<TextFeatures>;
}

type VisualFactory = Arc<dyn Fn(&EncoderConfig) -> Result<Box<dyn VisualEncoder>> + Send + Sync>;
type TextFactory = Arc<dyn Fn(&EncoderConfig) -> Result<Box<dyn TextEncoder>> + Send + Sync>;

/// Named external providers. Only explicitly registered adapters are visible.
#[derive(Clone, Default)]
pub struct EncoderRegistry {
    visual: BTreeMap<String, VisualFactory>,
    text: BTreeMap<String, TextFactory>,
}

impl EncoderRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_visual(
        &mut self,
        name: impl Into<String>,
        factory: impl Fn(&EncoderConfig) -> Result<Box<dyn VisualEncoder>> + Send + Sync + 'static,
    ) {
        self.visual.insert(name.into(), Arc::new(factory));
    }

    pub fn register_text(
        &mut self,
        name: impl Into<String>,
        factory: impl Fn(&EncoderConfig) -> Result<Box<dyn TextEncoder>> + Send + Sync + 'static,
    ) {
        self.text.insert(name.into(), Arc::new(factory));
    }
}

pub struct Encoders {
    pub config: EncoderConfig,
    visual: Box<dyn VisualEncoder>,
    text: Box<dyn TextEncoder>,
}

impl Encoders {
    pub fn new(config: &EncoderConfig, registry: &EncoderRegistry) -> Result<Self> {
        config.validate()?;
        let (visual, text): (Box<dyn VisualEncoder>, Box<dyn TextEncoder>) = if config.provider == TOY_PROVIDER {
            (Box::new(ToyVisualEncoder::new(config.visual_dim, config.seed)), Box::new(ToyTextEncoder::new(config.text_dim, config.seed)))
        } else {
            let unavailable = || EfaError::ProviderUnavailable(config.provider.clone());
            let v = registry.visual.get(&config.provider).ok_or_else(unavailable)?;
            let t = registry.text.get(&config.provider).ok_or_else(unavailable)?;
            (v(config)?, t(config)?)
        };
        if visual.dim() != config.visual_dim || text.dim() != config.text_dim {
            return Err(EfaError::Config(format!(
                "provider `{}` produces ({}, {}) features, config asks for ({}, {})",
                config.provider,
                visual.dim(),
                text.dim(),
                config.visual_dim,
                config.text_dim
            )));
        }
        Ok(Self { config: config.clone(), visual, text })
    }

    pub fn toy(config: &EncoderConfig) -> Result<Self> {
        Self::new(config, &EncoderRegistry::new())
    }

    /// `N x D` visual tokens.
    pub fn visual_encode(&self, input: &VisualInput) -> Result<FeatureMatrix> {
        let out = self.visual.encode(input)?;
        if out.dim() != self.config.visual_dim {
            return Err(EfaError::Shape(format!("visual encoder produced width {}", out.dim())));
        }
        Ok(out)
    }

    /// `(M x E steps, 1 x E global)`.
    pub fn text_encode(&self, entry: &ActionLexiconEntry) -> Result<TextFeatures> {
        let out = self.text.encode(entry)?;
        if out.steps.dim() != self.config.text_dim || out.global.dim() != self.config.text_dim || out.global.rows() != 1 {
            return Err(EfaError::Shape("text encoder produced unexpected shapes".into()));
        }
        Ok(out)
    }

    /// Load whatever `record.media_ref` points at and encode it.
    pub fn encode_record(&self, manifest: &DatasetManifest, record: &SampleRecord) -> Result<FeatureMatrix> {
        let input = load_visual_input(manifest, record, self.config.frames_per_video)?;
        self.visual_encode(&input)
    }
}

/// Resolve a record's media into encoder input. Frame directories are sampled
/// with the uniform spacing rule over the files actually present.
pub fn load_visual_input(manifest: &DatasetManifest, record: &SampleRecord, k: usize) -> Result<VisualInput> {
    load_visual_input_with(manifest, record, k, None)
}

/// Like [`load_visual_input`], but frame directories are sampled with a random
/// offset inside each segment when `jitter` is given.
pub fn load_visual_input_with(
    manifest: &DatasetManifest,
    record: &SampleRecord,
    k: usize,
    jitter: Option<&mut ChaCha8Rng>,
) -> Result<VisualInput> {
    match &record.media_ref {
        MediaRef::Features { path } => Ok(VisualInput::Fixture(FeatureMatrix::read_fixture(&manifest.resolve(path))?)),
        MediaRef::Frames { dir } => {
            let dir = manifest.resolve(dir);
            let files = list_frames(&dir)?;
            let indices = if let Some(rng) = jitter {
                jittered_indices(files.len(), k, rng)?
            } else if files.len() == record.frame_count {
                sample_frames(record, k)?
            } else {
                uniform_indices(files.len(), k)?
            };
            let frames =
                indices.into_iter().map(|i| std::fs::read(&files[i]).map_err(|e| EfaError::io(&files[i], e))).collect::<Result<_>>()?;
            Ok(VisualInput::Frames(frames))
        }
        MediaRef::Handle { id } => Err(EfaError::ProviderUnavailable(format!("media handle `{id}` (needs an external adapter)"))),
    }
}

/// Uniformly sample `k` frames from a directory of frame files.
pub fn load_frame_dir(dir: &Path, k: usize) -> Result<VisualInput> {
    let files = list_frames(dir)?;
    uniform_indices(files.len(), k)?
        .into_iter()
        .map(|i| std::fs::read(&files[i]).map_err(|e| EfaError::io(&files[i], e)))
        .collect::<Result<_>>()
        .map(VisualInput::Frames)
}

fn list_frames(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| EfaError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(EfaError::InvalidArgument(format!("frame directory {} is empty", dir.display())));
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::tests::entry;
    use crate::tensor::Matrix;

    fn encoders() -> Encoders {
        Encoders::toy(&EncoderConfig { visual_dim: 8, text_dim: 12, seed: 42, ..Default::default() }).unwrap()
    }

    fn frames(n: usize) -> Vec<Vec<u8>> {
        (0..n).map(|i| vec![i as u8; 32]).collect()
    }

    #[test]
    fn visual_is_deterministic_and_sensitive() {
        let enc = encoders();
        let a = enc.visual_encode(&VisualInput::Frames(frames(6))).unwrap();
        let b = enc.visual_encode(&VisualInput::Frames(frames(6))).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.rows(), a.dim()), (6, 8));
        let mut changed = frames(6);
        changed[3][0] ^= 1;
        let c = enc.visual_encode(&VisualInput::Frames(changed)).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.as_matrix().row(0), c.as_matrix().row(0));
        assert_ne!(a.as_matrix().row(3), c.as_matrix().row(3));
    }

    #[test]
    fn fixtures_pass_through_unchanged() {
        let enc = encoders();
        let f = FeatureMatrix::new(Matrix::from_fn(12, 8, |i, j| (i * j) as f64)).unwrap();
        assert_eq!(enc.visual_encode(&VisualInput::Fixture(f.clone())).unwrap(), f);
        let wrong = FeatureMatrix::new(Matrix::zeros(12, 5)).unwrap();
        assert!(matches!(enc.visual_encode(&VisualInput::Fixture(wrong)), Err(EfaError::Shape(_))));
    }

    #[test]
    fn text_is_step_local() {
        let enc = encoders();
        let e = entry(0);
        let a = enc.text_encode(&e).unwrap();
        assert_eq!(a.steps.rows(), 5);
        assert_eq!((a.global.rows(), a.global.dim()), (1, 12));
        assert_eq!(a, enc.text_encode(&e).unwrap());
        let mut e2 = e.clone();
        e2.steps[2] = "a completely different third step".into();
        let b = enc.text_encode(&e2).unwrap();
        for i in 0..5 {
            assert_eq!(a.steps.as_matrix().row(i) == b.steps.as_matrix().row(i), i != 2, "row {i}");
        }
        assert_eq!(a.global, b.global);
    }

    #[test]
    fn empty_step_is_rejected() {
        let mut e = entry(0);
        e.steps[1] = " ".into();
        assert!(encoders().text_encode(&e).is_err());
    }

    #[test]
    fn unknown_provider_is_unavailable() {
        let cfg = EncoderConfig { provider: "video-swin".into(), ..Default::default() };
        assert!(matches!(Encoders::toy(&cfg), Err(EfaError::ProviderUnavailable(p)) if p == "video-swin"));
    }

    #[test]
    fn registered_adapters_are_used() {
        let mut reg = EncoderRegistry::new();
        reg.register_visual("ext", |c| Ok(Box::new(ToyVisualEncoder::new(c.visual_dim, 1)) as Box<dyn VisualEncoder>));
        reg.register_text("ext", |c| Ok(Box::new(ToyTextEncoder::new(c.text_dim, 1)) as Box<dyn TextEncoder>));
        let cfg = EncoderConfig { provider: "ext".into(), ..Default::default() };
        assert!(Encoders::new(&cfg, &reg).is_ok());
    }

    #[test]
    fn output_is_finite_for_odd_inputs() {
        let enc = encoders();
        let corpus: Vec<Vec<u8>> = vec![vec![], vec![0xff; 4096], "ünïcödé".as_bytes().to_vec(), vec![0]];
        let v = enc.visual_encode(&VisualInput::Frames(corpus)).unwrap();
        assert!(v.as_matrix().is_finite());
        let mut e = entry(1);
        e.steps[0] = "!!! ??? ...".into();
        e.general_instruction = "😀 emoji-only 🏋️".into();
        let t = enc.text_encode(&e).unwrap();
        assert!(t.steps.as_matrix().is_finite() && t.global.as_matrix().is_finite());
    }

    #[test]
    fn frames_directory_is_sampled() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..10 {
            std::fs::write(dir.path().join(format!("f{i:03}.raw")), [i as u8; 8]).unwrap();
        }
        let mut m = crate::data::manifest::tests::fixture();
        m.base_dir = dir.path().to_path_buf();
        let mut r = m.records[0].clone();
        r.media_ref = MediaRef::Frames { dir: ".".into() };
        r.frame_count = 10;
        let enc = encoders();
        let out = enc.encode_record(&m, &r).unwrap();
        assert_eq!((out.rows(), out.dim()), (6, 8));
    }
}
