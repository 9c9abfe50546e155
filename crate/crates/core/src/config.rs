//! Model and training configuration, read from `key = value` text.
//!
//! Recognised keys (all optional, defaults in parentheses):
//!
//! | key | meaning |
//! |---|---|
//! | `d_model` (64) | embedding and hidden width, even and divisible by `heads` |
//! | `heads` (4) | attention heads |
//! | `d_ff` (= `d_model`) | hidden width of feed-forward sublayers |
//! | `ksr_layers` (1) | self-attention blocks in the retrieval encoder |
//! | `decoder_layers` (1) | cross-attention blocks in the decoder |
//! | `f_max` (100) | occurrence counts above this share one embedding row |
//! | `stability` (0.1) | decay stability `S`, per hour |
//! | `residual` (true) | pre-norm residual sublayers; `false` gives bare compositions |
//! | `renormalize_decay` (false) | renormalize session weights after decay |
//! | `dropout` (0) | dropout probability on sublayer outputs |
//! | `ablation` (none) | one of `none`, `no-decay`, `avg-pool`, `no-ksr`, `no-pos` |
//! | `batch_size` (64) | windows per optimizer step |
//! | `learning_rate` (0.001) | Adam step size |
//! | `epochs` (30) | maximum epochs |
//! | `patience` (10) | stop after this many epochs without a better validation AUC; 0 disables |
//! | `seed` (0) | seed for initialization, shuffling and dropout |
//! | `target_train_auc` (unset) | stop once training AUC reaches this value |
//!
//! Unknown keys are errors.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Ablation {
    #[default]
    None,
    /// Session weights are not decayed.
    NoDecay,
    /// Token attention replaced by the plain mean of the attended rows.
    AvgPool,
    /// Decoder reads the embedded answer sequence directly.
    NoKsr,
    /// All positional encodings are zero.
    NoPos,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::None,
        Ablation::NoDecay,
        Ablation::AvgPool,
        Ablation::NoKsr,
        Ablation::NoPos,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoDecay => "no-decay",
            Ablation::AvgPool => "avg-pool",
            Ablation::NoKsr => "no-ksr",
            Ablation::NoPos => "no-pos",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub ksr_layers: usize,
    pub decoder_layers: usize,
    pub f_max: u32,
    pub stability: f64,
    pub residual: bool,
    pub renormalize_decay: bool,
    pub dropout: f64,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            heads: 4,
            d_ff: 64,
            ksr_layers: 1,
            decoder_layers: 1,
            f_max: crate::embedding::DEFAULT_F_MAX,
            stability: 0.1,
            residual: true,
            renormalize_decay: false,
            dropout: 0.0,
            ablation: Ablation::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub target_train_auc: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: 1e-3,
            epochs: 30,
            patience: 10,
            seed: 0,
            target_train_auc: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn boolean(e: &kv::Entry) -> Result<bool> {
    match e.value.as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("line {}: `{}` is not a boolean", e.line, e.value))),
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Config::default();
        let mut d_ff = None;
        for e in kv::parse(text)? {
            let m = &mut c.model;
            let t = &mut c.train;
            match e.key.as_str() {
                "d_model" => m.d_model = kv::value(&e)?,
                "heads" => m.heads = kv::value(&e)?,
                "d_ff" => d_ff = Some(kv::value(&e)?),
                "ksr_layers" => m.ksr_layers = kv::value(&e)?,
                "decoder_layers" => m.decoder_layers = kv::value(&e)?,
                "f_max" => m.f_max = kv::value(&e)?,
                "stability" => m.stability = kv::value(&e)?,
                "residual" => m.residual = boolean(&e)?,
                "renormalize_decay" => m.renormalize_decay = boolean(&e)?,
                "dropout" => m.dropout = kv::value(&e)?,
                "ablation" => m.ablation = e.value.parse()?,
                "batch_size" => t.batch_size = kv::value(&e)?,
                "learning_rate" => t.learning_rate = kv::value(&e)?,
                "epochs" => t.epochs = kv::value(&e)?,
                "patience" => t.patience = kv::value(&e)?,
                "seed" => t.seed = kv::value(&e)?,
                "target_train_auc" => t.target_train_auc = Some(kv::value(&e)?),
                other => return Err(Error::Config(format!("line {}: unknown key `{other}`", e.line))),
            }
        }
        c.model.d_ff = d_ff.unwrap_or(c.model.d_model);
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        let t = &self.train;
        let bad = |msg: String| Err(Error::Config(msg));
        if m.d_model < 2 || m.d_model % 2 != 0 {
            return bad(format!("d_model must be even and at least 2, got {}", m.d_model));
        }
        if m.heads == 0 || m.d_model % m.heads != 0 {
            return bad(format!("d_model {} is not divisible by {} heads", m.d_model, m.heads));
        }
        if m.d_ff == 0 || m.f_max == 0 || t.batch_size == 0 {
            return bad("d_ff, f_max and batch_size must be positive".into());
        }
        if !(m.stability > 0.0 && m.stability.is_finite()) {
            return bad(format!("stability must be positive, got {}", m.stability));
        }
        if !(0.0..1.0).contains(&m.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", m.dropout));
        }
        if !(t.learning_rate >= 0.0 && t.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be non-negative, got {}", t.learning_rate));
        }
        Ok(())
    }

    /// Text that parses back to an equal config.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let mut s = format!(
            "d_model = {}\nheads = {}\nd_ff = {}\nksr_layers = {}\ndecoder_layers = {}\nf_max = {}\n\
             stability = {}\nresidual = {}\nrenormalize_decay = {}\ndropout = {}\nablation = {}\n\
             batch_size = {}\nlearning_rate = {}\nepochs = {}\npatience = {}\nseed = {}\n",
            m.d_model,
            m.heads,
            m.d_ff,
            m.ksr_layers,
            m.decoder_layers,
            m.f_max,
            m.stability,
            m.residual,
            m.renormalize_decay,
            m.dropout,
            m.ablation,
            t.batch_size,
            t.learning_rate,
            t.epochs,
            t.patience,
            t.seed
        );
        if let Some(a) = t.target_train_auc {
            s.push_str(&format!("target_train_auc = {a}\n"));
        }
        s
    }
}
