//! Model and training configuration, plus the flat key-value config file.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::ParagraphAnchor;
use crate::numerics::AdamHyper;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    /// Paragraphs per segment.
    pub n_seg: usize,
    /// Global bank sizes.
    pub n_global_sent: usize,
    pub n_global_para: usize,
    pub n_global_doc: usize,
    /// Attention hops on the local and global graphs.
    pub local_hops: usize,
    pub global_hops: usize,
    /// Embedding width, hidden width, head count, pair token budget.
    pub d_w: usize,
    pub d_h: usize,
    pub heads: usize,
    pub max_pair_len: usize,
    pub encoder_depth: usize,
    /// Optimizer and schedule.
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub warmup: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Inference threshold on selection probabilities.
    pub threshold: f64,
    pub seed: u64,
    /// Ablation switches.
    pub use_global_graph: bool,
    pub use_memory: bool,
    /// Vocabulary frequency floor.
    pub min_token_freq: usize,
    pub paragraph_anchor: ParagraphAnchor,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_seg: 16,
            n_global_sent: 64,
            n_global_para: 32,
            n_global_doc: 4,
            local_hops: 4,
            global_hops: 1,
            d_w: 32,
            d_h: 32,
            heads: 4,
            max_pair_len: 64,
            encoder_depth: 1,
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
            warmup: 0.1,
            batch_size: 4,
            epochs: 5,
            threshold: 0.5,
            seed: 42,
            use_global_graph: true,
            use_memory: true,
            min_token_freq: 1,
            paragraph_anchor: ParagraphAnchor::Cls,
        }
    }
}

impl ModelConfig {
    pub fn adam_hyper(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_seg", self.n_seg),
            ("n_global_sent", self.n_global_sent),
            ("n_global_para", self.n_global_para),
            ("n_global_doc", self.n_global_doc),
            ("d_w", self.d_w),
            ("d_h", self.d_h),
            ("heads", self.heads),
            ("max_pair_len", self.max_pair_len),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("min_token_freq", self.min_token_freq),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold must lie in (0,1), got {}",
                self.threshold
            )));
        }
        if self.d_h % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_h ({}) must be divisible by heads ({})",
                self.d_h, self.heads
            )));
        }
        if self.d_h % 2 != 0 {
            return Err(Error::Config(format!(
                "d_h ({}) must be even for the BiLSTM split",
                self.d_h
            )));
        }
        if !(0.0..1.0).contains(&self.warmup) {
            return Err(Error::Config(format!(
                "warmup must lie in [0,1), got {}",
                self.warmup
            )));
        }
        if self.max_pair_len < 4 {
            return Err(Error::Config(
                "max_pair_len must fit CLS, a token and two SEPs".into(),
            ));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }

    /// Parse the flat `key = value` config format. Unknown keys are
    /// rejected; omitted keys keep their defaults.
    pub fn from_config_str(text: &str) -> Result<ModelConfig> {
        let mut config = ModelConfig::default();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", line_no + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            config.apply(key, value).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", line_no + 1)),
                other => other,
            })?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_config_file(path: &Path) -> Result<ModelConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        ModelConfig::from_config_str(&text)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value for {key}: {value:?}")))
        }
        match key {
            "n_seg" => self.n_seg = parse(key, value)?,
            "n_global_sent" => self.n_global_sent = parse(key, value)?,
            "n_global_para" => self.n_global_para = parse(key, value)?,
            "n_global_doc" => self.n_global_doc = parse(key, value)?,
            "local_hops" => self.local_hops = parse(key, value)?,
            "global_hops" => self.global_hops = parse(key, value)?,
            "d_w" => self.d_w = parse(key, value)?,
            "d_h" => self.d_h = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "max_pair_len" => self.max_pair_len = parse(key, value)?,
            "encoder_depth" => self.encoder_depth = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "warmup" => self.warmup = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "threshold" => self.threshold = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "use_global_graph" => self.use_global_graph = parse(key, value)?,
            "use_memory" => self.use_memory = parse(key, value)?,
            "min_token_freq" => self.min_token_freq = parse(key, value)?,
            "paragraph_anchor" => {
                self.paragraph_anchor = match value {
                    "cls" => ParagraphAnchor::Cls,
                    "last-sep" => ParagraphAnchor::LastSep,
                    other => {
                        return Err(Error::Config(format!(
                            "paragraph_anchor must be cls or last-sep, got {other:?}"
                        )))
                    }
                }
            }
            unknown => {
                return Err(Error::Config(format!("unknown config key {unknown:?}")));
            }
        }
        Ok(())
    }

    /// Render as the flat config format, every field present.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let anchor = match self.paragraph_anchor {
            ParagraphAnchor::Cls => "cls",
            ParagraphAnchor::LastSep => "last-sep",
        };
        let _ = writeln!(s, "n_seg = {}", self.n_seg);
        let _ = writeln!(s, "n_global_sent = {}", self.n_global_sent);
        let _ = writeln!(s, "n_global_para = {}", self.n_global_para);
        let _ = writeln!(s, "n_global_doc = {}", self.n_global_doc);
        let _ = writeln!(s, "local_hops = {}", self.local_hops);
        let _ = writeln!(s, "global_hops = {}", self.global_hops);
        let _ = writeln!(s, "d_w = {}", self.d_w);
        let _ = writeln!(s, "d_h = {}", self.d_h);
        let _ = writeln!(s, "heads = {}", self.heads);
        let _ = writeln!(s, "max_pair_len = {}", self.max_pair_len);
        let _ = writeln!(s, "encoder_depth = {}", self.encoder_depth);
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "beta1 = {}", self.beta1);
        let _ = writeln!(s, "beta2 = {}", self.beta2);
        let _ = writeln!(s, "epsilon = {}", self.epsilon);
        let _ = writeln!(s, "weight_decay = {}", self.weight_decay);
        let _ = writeln!(s, "warmup = {}", self.warmup);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "threshold = {}", self.threshold);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "use_global_graph = {}", self.use_global_graph);
        let _ = writeln!(s, "use_memory = {}", self.use_memory);
        let _ = writeln!(s, "min_token_freq = {}", self.min_token_freq);
        let _ = writeln!(s, "paragraph_anchor = {anchor}");
        s
    }
}
