//! Run configuration, read from a TOML file and overridden by CLI flags.
//!
//! ```toml
//! dataset = "data/dev.jsonl"
//! split = "dev"
//! translations = "runs/dev/translated.jsonl"   # needed for variant = "english"
//! output_dir = "runs/dev-en"
//! label = "baseline"
//! workers = 4
//!
//! [endpoint]
//! base_url = "http://127.0.0.1:8000/v1"
//! model = "my-model"
//! api_key_env = "OPENAI_API_KEY"
//!
//! [refine]
//! max_attempts = 3
//! temperature_schedule = [0.1, 0.3, 0.5]
//! instruction_variant = "english"
//!
//! [sandbox]
//! interpreter = "python3"
//! shim = "runner/run_suite.py"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use crate::llm::EndpointConfig;
use crate::refine::RefineConfig;
use crate::sandbox::SandboxConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub split: String,
    /// Translated corpus: written by `translate`, read by `evaluate`.
    pub translations: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub label: String,
    pub workers: usize,
    pub resume: bool,
    pub templates_dir: Option<PathBuf>,
    pub endpoint: EndpointConfig,
    /// Endpoint for translation; defaults to `endpoint`.
    pub translator: Option<EndpointConfig>,
    pub refine: RefineConfig,
    pub sandbox: SandboxConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data/dev.jsonl"),
            split: "dev".into(),
            translations: None,
            output_dir: PathBuf::from("runs/default"),
            label: "run".into(),
            workers: 1,
            resume: false,
            templates_dir: None,
            endpoint: EndpointConfig::default(),
            translator: None,
            refine: RefineConfig::default(),
            sandbox: SandboxConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        // Relative paths in the file are relative to the file.
        if let Some(base) = path.parent() {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            fix(&mut cfg.dataset);
            fix(&mut cfg.output_dir);
            fix(&mut cfg.sandbox.shim);
            if let Some(p) = cfg.translations.as_mut() {
                fix(p);
            }
            if let Some(p) = cfg.templates_dir.as_mut() {
                fix(p);
            }
        }
        Ok(cfg)
    }

    pub fn translation_path(&self) -> PathBuf {
        self.translations
            .clone()
            .unwrap_or_else(|| self.output_dir.join("translated.jsonl"))
    }

    pub fn translator_endpoint(&self) -> &EndpointConfig {
        self.translator.as_ref().unwrap_or(&self.endpoint)
    }

    /// Checks invariants and makes sure the output directory accepts writes.
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.workers == 0 {
            bail!("workers must be at least 1");
        }
        self.refine.validate()?;
        fs::create_dir_all(&self.output_dir)
            .with_context(|| format!("creating {}", self.output_dir.display()))?;
        let probe = self.output_dir.join(".write-probe");
        fs::write(&probe, b"ok")
            .with_context(|| format!("output directory {} is not writable", self.output_dir.display()))?;
        let _ = fs::remove_file(probe);
        Ok(())
    }
}
