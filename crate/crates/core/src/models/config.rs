use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    ExactMatch,
    Logreg,
    BigruAtt,
    Han,
    MaxHss,
    CnnLwan,
    BigruLwan,
    ZCnnLwan,
    ZBigruLwan,
    LwHan,
    EnsembleLwan,
}

impl Architecture {
    pub const ALL: [Architecture; 11] = [
        Architecture::ExactMatch,
        Architecture::Logreg,
        Architecture::BigruAtt,
        Architecture::Han,
        Architecture::MaxHss,
        Architecture::CnnLwan,
        Architecture::BigruLwan,
        Architecture::ZCnnLwan,
        Architecture::ZBigruLwan,
        Architecture::LwHan,
        Architecture::EnsembleLwan,
    ];

    /// The eight single-network architectures.
    pub const NEURAL: [Architecture; 8] = [
        Architecture::BigruAtt,
        Architecture::Han,
        Architecture::MaxHss,
        Architecture::CnnLwan,
        Architecture::BigruLwan,
        Architecture::ZCnnLwan,
        Architecture::ZBigruLwan,
        Architecture::LwHan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::ExactMatch => "exact-match",
            Architecture::Logreg => "logreg",
            Architecture::BigruAtt => "bigru-att",
            Architecture::Han => "han",
            Architecture::MaxHss => "max-hss",
            Architecture::CnnLwan => "cnn-lwan",
            Architecture::BigruLwan => "bigru-lwan",
            Architecture::ZCnnLwan => "z-cnn-lwan",
            Architecture::ZBigruLwan => "z-bigru-lwan",
            Architecture::LwHan => "lw-han",
            Architecture::EnsembleLwan => "ensemble-lwan",
        }
    }

    pub fn is_neural(self) -> bool {
        Self::NEURAL.contains(&self)
    }

    pub fn is_hierarchical(self) -> bool {
        matches!(self, Architecture::Han | Architecture::MaxHss | Architecture::LwHan)
    }

    pub fn is_zero_shot(self) -> bool {
        matches!(self, Architecture::ZCnnLwan | Architecture::ZBigruLwan)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|a| a.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown architecture `{s}`")))
    }
}

pub const ENC_UNITS: [usize; 3] = [200, 300, 400];
pub const ENC_LAYERS: [usize; 2] = [1, 2];
pub const BATCH_SIZES: [usize; 3] = [8, 12, 16];
pub const DROPOUTS: [f64; 4] = [0.1, 0.2, 0.3, 0.4];
pub const WORD_DROPOUTS: [f64; 3] = [0.0, 0.01, 0.02];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub enc_units: usize,
    pub enc_layers: usize,
    pub dropout: f64,
    pub word_dropout: f64,
    pub batch_size: usize,
    pub kernel_width: usize,
    pub max_doc_tokens: usize,
    pub max_sections: usize,
    pub max_section_tokens: usize,
    /// Multiply attention-pooled vectors by `1/T`.
    pub scale_by_length: bool,
    /// LWAN decoder rows reuse the attention context vectors.
    pub tie_decoder: bool,
    /// Update the word embeddings; rejected for zero-shot models.
    pub fine_tune_embeddings: bool,
    /// `enc_units` is the GRU size per direction (the BiGRU emits twice that);
    /// otherwise it is the concatenated width.
    pub units_per_direction: bool,
    /// Allow values outside the tuning grid, e.g. toy dimensions in tests.
    pub override_ranges: bool,
    /// Number of n-gram features for the logistic-regression baseline.
    pub logreg_features: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::BigruLwan,
            enc_units: 300,
            enc_layers: 1,
            dropout: 0.2,
            word_dropout: 0.0,
            batch_size: 12,
            kernel_width: 8,
            max_doc_tokens: 2500,
            max_sections: 32,
            max_section_tokens: 256,
            scale_by_length: true,
            tie_decoder: false,
            fine_tune_embeddings: false,
            units_per_direction: true,
            override_ranges: false,
            logreg_features: 200_000,
        }
    }
}

fn in_grid(v: f64, grid: &[f64]) -> bool {
    grid.iter().any(|g| (g - v).abs() < 1e-12)
}

impl ModelConfig {
    pub fn for_architecture(architecture: Architecture) -> Self {
        Self {
            architecture,
            ..Self::default()
        }
    }

    /// Hidden size of each GRU direction.
    pub fn gru_hidden(&self) -> usize {
        if self.units_per_direction {
            self.enc_units
        } else {
            (self.enc_units / 2).max(1)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.enc_units == 0 || self.batch_size == 0 || self.kernel_width == 0 {
            return bad("enc_units, batch_size and kernel_width must be positive".into());
        }
        if self.max_doc_tokens == 0 || self.max_sections == 0 || self.max_section_tokens == 0 {
            return bad("truncation limits must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.word_dropout) {
            return bad("dropout rates must lie in [0, 1)".into());
        }
        if !ENC_LAYERS.contains(&self.enc_layers) {
            return bad(format!("enc_layers must be 1 or 2, got {}", self.enc_layers));
        }
        if self.fine_tune_embeddings && self.architecture.is_zero_shot() {
            return bad("zero-shot models keep their word embeddings frozen".into());
        }
        if self.override_ranges {
            return Ok(());
        }
        if !ENC_UNITS.contains(&self.enc_units) {
            return bad(format!("enc_units {} outside {{200, 300, 400}}", self.enc_units));
        }
        if !BATCH_SIZES.contains(&self.batch_size) {
            return bad(format!("batch_size {} outside {{8, 12, 16}}", self.batch_size));
        }
        if !in_grid(self.dropout, &DROPOUTS) {
            return bad(format!("dropout {} outside {{0.1, 0.2, 0.3, 0.4}}", self.dropout));
        }
        if !in_grid(self.word_dropout, &WORD_DROPOUTS) {
            return bad(format!("word_dropout {} outside {{0, 0.01, 0.02}}", self.word_dropout));
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Unknown keys are
    /// rejected. Keys not mentioned keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("invalid value `{v}` for `{key}`"))
        }
        match key {
            "architecture" | "model" => {
                self.architecture = value.parse().map_err(|e: Error| e.to_string())?;
            }
            "enc_units" => self.enc_units = num(key, value)?,
            "enc_layers" => self.enc_layers = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "word_dropout" => self.word_dropout = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "kernel_width" => self.kernel_width = num(key, value)?,
            "max_doc_tokens" => self.max_doc_tokens = num(key, value)?,
            "max_sections" => self.max_sections = num(key, value)?,
            "max_section_tokens" => self.max_section_tokens = num(key, value)?,
            "scale_by_length" => self.scale_by_length = num(key, value)?,
            "tie_decoder" => self.tie_decoder = num(key, value)?,
            "fine_tune_embeddings" => self.fine_tune_embeddings = num(key, value)?,
            "units_per_direction" => self.units_per_direction = num(key, value)?,
            "override_ranges" => self.override_ranges = num(key, value)?,
            "logreg_features" => self.logreg_features = num(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        format!(
            "architecture = {}\nenc_units = {}\nenc_layers = {}\ndropout = {}\nword_dropout = {}\n\
             batch_size = {}\nkernel_width = {}\nmax_doc_tokens = {}\nmax_sections = {}\n\
             max_section_tokens = {}\nscale_by_length = {}\ntie_decoder = {}\n\
             fine_tune_embeddings = {}\nunits_per_direction = {}\noverride_ranges = {}\n\
             logreg_features = {}\n",
            self.architecture,
            self.enc_units,
            self.enc_layers,
            self.dropout,
            self.word_dropout,
            self.batch_size,
            self.kernel_width,
            self.max_doc_tokens,
            self.max_sections,
            self.max_section_tokens,
            self.scale_by_length,
            self.tie_decoder,
            self.fine_tune_embeddings,
            self.units_per_direction,
            self.override_ranges,
            self.logreg_features,
        )
    }
}
