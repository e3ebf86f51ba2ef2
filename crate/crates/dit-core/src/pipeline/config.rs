use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::geom::{PairMode, Shape};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {msg}")]
    BadValue { key: String, msg: String },
    #[error("config line {line} is not `key = value`")]
    BadLine { line: usize },
    #[error("{0}")]
    Invalid(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Every knob of the pipeline. Parsed from `key = value` lines; flags
/// override file values; the `DIT_SEED` environment variable overrides the
/// seed from either source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    /// Structure-extractor depth (1–4).
    pub n_l: usize,
    /// Interaction-transformer depth.
    pub n_t: usize,
    pub d_model: usize,
    pub heads: usize,
    /// Integrator neighborhood size; capped at points/4 when the model is
    /// built so small clouds stay valid.
    pub k: usize,
    pub k_s: usize,
    pub k_m: usize,
    pub lambda: f64,
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    pub r_inlier: f64,
    pub literal_losses: bool,
    pub temperature: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub points: usize,
    pub mode: PairMode,
    pub shape: Shape,
    pub rot_max_deg: f64,
    pub trans_max: f64,
    pub r_thres: f64,
    pub t_thres: f64,
    pub sw_width: usize,
    pub no_pse: bool,
    pub shallow_wide: bool,
    pub no_pos_enc: bool,
    pub no_gmcce: bool,
    pub untie_phi: bool,
    pub residual_outside_ln: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            n_l: 3,
            n_t: 6,
            d_model: 64,
            heads: 4,
            k: 20,
            k_s: 10,
            k_m: 10,
            lambda: 30.0,
            tau: 0.5,
            alpha: 0.1,
            beta: 1.0,
            r_inlier: 0.05,
            literal_losses: false,
            temperature: 0.1,
            lr: 3e-5,
            epochs: 30,
            batch_size: 1,
            seed: 0,
            points: 128,
            mode: PairMode::Clean,
            shape: Shape::Cube,
            rot_max_deg: 45.0,
            trans_max: 0.5,
            r_thres: 1.0,
            t_thres: 0.01,
            sw_width: 256,
            no_pse: false,
            shallow_wide: false,
            no_pos_enc: false,
            no_gmcce: false,
            untie_phi: false,
            residual_outside_ln: false,
        }
    }
}

macro_rules! config_keys {
    ($($key:literal => $field:ident : $kind:tt),+ $(,)?) => {
        impl PipelineConfig {
            /// Sets one key from its text form.
            pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
                match key {
                    $($key => {
                        self.$field = parse_value!($kind, key, value)?;
                        Ok(())
                    })+
                    _ => Err(ConfigError::UnknownKey(key.to_string())),
                }
            }

            /// All keys in their text form, in declaration order.
            pub fn entries(&self) -> Vec<(String, String)> {
                vec![$(($key.to_string(), value_text!($kind, self.$field))),+]
            }
        }
    };
}

macro_rules! parse_value {
    (usize, $key:expr, $value:expr) => {
        $value.parse::<usize>().map_err(|e| ConfigError::BadValue {
            key: $key.to_string(),
            msg: e.to_string(),
        })
    };
    (u64, $key:expr, $value:expr) => {
        $value.parse::<u64>().map_err(|e| ConfigError::BadValue {
            key: $key.to_string(),
            msg: e.to_string(),
        })
    };
    (f64, $key:expr, $value:expr) => {
        $value.parse::<f64>().map_err(|e| ConfigError::BadValue {
            key: $key.to_string(),
            msg: e.to_string(),
        })
    };
    (bool, $key:expr, $value:expr) => {
        match $value {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(ConfigError::BadValue {
                key: $key.to_string(),
                msg: format!("expected true/false, got `{other}`"),
            }),
        }
    };
    (mode, $key:expr, $value:expr) => {
        PairMode::from_str($value).map_err(|e| ConfigError::BadValue {
            key: $key.to_string(),
            msg: e.to_string(),
        })
    };
    (shape, $key:expr, $value:expr) => {
        Shape::from_str($value).map_err(|e| ConfigError::BadValue {
            key: $key.to_string(),
            msg: e.to_string(),
        })
    };
}

macro_rules! value_text {
    (mode, $v:expr) => {
        $v.name().to_string()
    };
    (shape, $v:expr) => {
        $v.name().to_string()
    };
    ($kind:tt, $v:expr) => {
        $v.to_string()
    };
}

config_keys! {
    "n_l" => n_l: usize,
    "n_t" => n_t: usize,
    "d_model" => d_model: usize,
    "heads" => heads: usize,
    "k" => k: usize,
    "k_s" => k_s: usize,
    "k_m" => k_m: usize,
    "lambda" => lambda: f64,
    "tau" => tau: f64,
    "alpha" => alpha: f64,
    "beta" => beta: f64,
    "r_inlier" => r_inlier: f64,
    "literal_losses" => literal_losses: bool,
    "temperature" => temperature: f64,
    "lr" => lr: f64,
    "epochs" => epochs: usize,
    "batch_size" => batch_size: usize,
    "seed" => seed: u64,
    "points" => points: usize,
    "mode" => mode: mode,
    "shape" => shape: shape,
    "rot_max_deg" => rot_max_deg: f64,
    "trans_max" => trans_max: f64,
    "r_thres" => r_thres: f64,
    "t_thres" => t_thres: f64,
    "sw_width" => sw_width: usize,
    "no_pse" => no_pse: bool,
    "shallow_wide" => shallow_wide: bool,
    "no_pos_enc" => no_pos_enc: bool,
    "no_gmcce" => no_gmcce: bool,
    "untie_phi" => untie_phi: bool,
    "residual_outside_ln" => residual_outside_ln: bool,
}

impl PipelineConfig {
    /// Parses `key = value` lines; `#` comments and blank lines are ignored.
    /// Unknown keys are rejected.
    pub fn parse(text: &str) -> Result<PipelineConfig, ConfigError> {
        let mut cfg = PipelineConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::BadLine { line: lineno + 1 })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PipelineConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        PipelineConfig::parse(&text)
    }

    /// Applies the `DIT_SEED` environment override.
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        if let Ok(v) = std::env::var("DIT_SEED") {
            self.seed = v.parse().map_err(|e: std::num::ParseIntError| ConfigError::BadValue {
                key: "DIT_SEED".to_string(),
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Rebuilds a config from checkpoint header pairs.
    pub fn from_entries(entries: &[(String, String)]) -> Result<PipelineConfig, ConfigError> {
        let mut cfg = PipelineConfig::default();
        for (k, v) in entries {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Integrator neighborhood actually baked into a model built for
    /// `points`-sized clouds.
    pub fn effective_k(&self) -> usize {
        self.k.min(self.points / 4).max(1)
    }

    /// Interaction width after the shallow-wide toggle.
    pub fn pft_width(&self) -> usize {
        if self.shallow_wide {
            self.sw_width
        } else {
            self.d_model
        }
    }

    /// Interaction depth after the shallow-wide toggle.
    pub fn pft_depth(&self) -> usize {
        if self.shallow_wide {
            1
        } else {
            self.n_t
        }
    }

    /// Checks every value against its documented range.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if !(1..=4).contains(&self.n_l) {
            return fail(format!("n_l must be in 1..=4, got {}", self.n_l));
        }
        if self.n_t == 0 {
            return fail("n_t must be at least 1".into());
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return fail(format!(
                "heads ({}) must divide d_model ({})",
                self.heads, self.d_model
            ));
        }
        if self.pft_width() % self.heads != 0 {
            return fail(format!(
                "heads ({}) must divide the interaction width ({})",
                self.heads,
                self.pft_width()
            ));
        }
        if self.d_model % 4 != 0 || self.pft_width() % 4 != 0 {
            return fail("widths must be divisible by the SE reduction (4)".into());
        }
        if self.k == 0 {
            return fail("k must be at least 1".into());
        }
        if self.k_s < 2 {
            return fail("k_s must be at least 2 to form triangles".into());
        }
        if self.k_m == 0 {
            return fail("k_m must be at least 1".into());
        }
        if !(self.lambda > 0.0) {
            return fail(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return fail(format!("tau must be in [0,1], got {}", self.tau));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return fail("alpha and beta must be non-negative".into());
        }
        if !(self.temperature > 0.0) {
            return fail(format!(
                "temperature must be positive, got {}",
                self.temperature
            ));
        }
        if self.lr < 0.0 {
            return fail(format!("lr must be non-negative, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.points < 8 {
            return fail(format!("points must be at least 8, got {}", self.points));
        }
        if self.rot_max_deg < 0.0 || self.trans_max < 0.0 {
            return fail("transform ranges must be non-negative".into());
        }
        if !(self.r_thres > 0.0) || !(self.t_thres > 0.0) {
            return fail("success thresholds must be positive".into());
        }
        if !(self.r_inlier > 0.0) {
            return fail("r_inlier must be positive".into());
        }
        Ok(())
    }
}
