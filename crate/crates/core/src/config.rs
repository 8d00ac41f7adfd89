//! Run configuration: built-in defaults, overlaid by a flat TOML file, then
//! by command-line flags.
//!
//! [`ConfigOverlay`] is both the file schema and the flag set, so every
//! setting can be given either way under the same name (`t1_grid` in a
//! file, `--t1-grid` on the command line).

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::Args;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{Feature, FeatureConfig, DEFAULT_CLICK_CAP, DEFAULT_DURATION_CAP};
use crate::likelihood::{Mode, DEFAULT_ALPHA};
use crate::pipeline::{Thresholds, TrainConfig, DEFAULT_IDLE_TIMEOUT_SECS, DEFAULT_T1, DEFAULT_T2};
use crate::popularity::{BuyBasis, CategoryBounds};
use crate::synth::{PlantedPopularity, SynthConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config file {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid setting {key}: {message}")]
    Invalid { key: &'static str, message: String },
}

fn invalid(key: &'static str, message: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        key,
        message: message.to_string(),
    }
}

macro_rules! settings {
    (
        paths { $( $(#[$pm:meta])* $path:ident ),* $(,)? }
        values { $( $(#[$vm:meta])* $name:ident : $ty:ty = $default:expr ),* $(,)? }
    ) => {
        /// The effective configuration.
        #[derive(Debug, Clone, PartialEq, Serialize)]
        pub struct Config {
            $(
                #[serde(skip_serializing_if = "Option::is_none")]
                pub $path: Option<PathBuf>,
            )*
            $( pub $name: $ty, )*
        }

        impl Default for Config {
            fn default() -> Self {
                Config {
                    $( $path: None, )*
                    $( $name: $default, )*
                }
            }
        }

        /// A partial configuration; unset fields leave the base untouched.
        #[derive(Debug, Clone, Default, PartialEq, Deserialize, Args)]
        #[serde(deny_unknown_fields)]
        pub struct ConfigOverlay {
            $(
                $(#[$pm])*
                #[arg(long, global = true, value_name = "PATH")]
                pub $path: Option<PathBuf>,
            )*
            $(
                $(#[$vm])*
                pub $name: Option<$ty>,
            )*
        }

        impl Config {
            pub fn apply(&mut self, overlay: &ConfigOverlay) {
                $( if let Some(v) = &overlay.$path { self.$path = Some(v.clone()); } )*
                $( if let Some(v) = &overlay.$name { self.$name = v.clone(); } )*
            }
        }
    };
}

settings! {
    paths {
        /// Click log (CSV)
        clicks,
        /// Buy log (CSV)
        buys,
        /// Model bundle file
        model,
        /// Output file, or directory for `gen`
        output,
        /// Where to write rejected input lines (CSV)
        rejects,
    }
    values {
        /// Features keying the model, comma separated
        #[arg(long, global = true, value_delimiter = ',')]
        features: Vec<Feature> = Feature::ALL.to_vec(),
        /// Clicks per item at or above this share one bin
        #[arg(long, global = true)]
        click_cap: u32 = DEFAULT_CLICK_CAP,
        /// Session duration cap in minutes
        #[arg(long, global = true)]
        duration_cap: u32 = DEFAULT_DURATION_CAP,
        /// joint | independent
        #[arg(long, global = true)]
        mode: Mode = Mode::Joint,
        /// Additive smoothing
        #[arg(long, global = true)]
        alpha: f64 = DEFAULT_ALPHA,
        /// What counts as a buy for popularity: events | sessions | quantity
        #[arg(long, global = true)]
        buy_basis: BuyBasis = BuyBasis::Events,
        /// Upper bound of the low popularity category
        #[arg(long, global = true)]
        popularity_low_max: f64 = 0.05,
        /// Upper bound of the medium popularity category
        #[arg(long, global = true)]
        popularity_med_max: f64 = 0.15,
        /// Likelihood-ratio threshold
        #[arg(long, global = true)]
        t1: f64 = DEFAULT_T1,
        /// Popularity-times-clicks threshold
        #[arg(long, global = true)]
        t2: f64 = DEFAULT_T2,
        /// Cross-validation folds
        #[arg(long, global = true)]
        k: usize = 5,
        /// Seed for splits, folds and generation
        #[arg(long, global = true)]
        seed: u64 = 42,
        /// Test share for a holdout evaluation
        #[arg(long, global = true)]
        test_fraction: f64 = 0.25,
        /// Comma-separated t1 values for `sweep`
        #[arg(long, global = true, value_delimiter = ',')]
        t1_grid: Vec<f64> = vec![0.5, 1.0, 2.0, 4.0],
        /// Comma-separated t2 values for `sweep`
        #[arg(long, global = true, value_delimiter = ',')]
        t2_grid: Vec<f64> = vec![0.0, 0.25, 0.5, 1.0],
        /// Streaming session idle timeout in seconds
        #[arg(long, global = true)]
        idle_timeout: f64 = DEFAULT_IDLE_TIMEOUT_SECS,
        /// Worker threads, 0 for one per processor
        #[arg(long, global = true)]
        workers: usize = 0,
        /// Sessions to generate
        #[arg(long, global = true)]
        synth_sessions: usize = 10_000,
        /// Catalogue size for generation
        #[arg(long, global = true)]
        synth_items: usize = 500,
        /// Share of generated sessions that buy
        #[arg(long, global = true)]
        synth_buy_fraction: f64 = 0.05,
        /// Lowest planted item popularity
        #[arg(long, global = true)]
        synth_popularity_low: f64 = 0.005,
        /// Highest planted item popularity
        #[arg(long, global = true)]
        synth_popularity_high: f64 = 0.08,
        /// Mean clicks in a buying session
        #[arg(long, global = true)]
        synth_mean_clicks_buy: f64 = 6.0,
        /// Mean clicks in a non-buying session
        #[arg(long, global = true)]
        synth_mean_clicks_nonbuy: f64 = 3.0,
        /// First day of generated sessions, YYYY-MM-DD
        #[arg(long, global = true)]
        synth_start: String = "2014-04-01".to_string(),
        /// Days covered by generated sessions
        #[arg(long, global = true)]
        synth_days: u32 = 183,
    }
}

impl ConfigOverlay {
    pub fn from_toml(path: &Path, text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.message().to_string(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(path, &text)
    }
}

impl Config {
    /// Defaults, then `file`, then `flags`; the result is validated.
    pub fn resolve(file: Option<&ConfigOverlay>, flags: &ConfigOverlay) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        if let Some(f) = file {
            cfg.apply(f);
        }
        cfg.apply(flags);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train_config()?;
        if self.k < 2 {
            return Err(invalid("k", format!("must be at least 2, got {}", self.k)));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(invalid("test_fraction", "must lie strictly between 0 and 1"));
        }
        for (key, grid) in [("t1_grid", &self.t1_grid), ("t2_grid", &self.t2_grid)] {
            if grid.is_empty() {
                return Err(invalid(key, "must not be empty"));
            }
            for &v in grid {
                Thresholds::new(v, v).map_err(|e| invalid(key, e))?;
            }
        }
        if !(self.idle_timeout > 0.0 && self.idle_timeout.is_finite()) {
            return Err(invalid("idle_timeout", "must be a positive number of seconds"));
        }
        self.synth_config()?;
        Ok(())
    }

    pub fn feature_config(&self) -> Result<FeatureConfig, ConfigError> {
        FeatureConfig::new(self.features.iter().copied(), self.click_cap, self.duration_cap)
            .map_err(|e| invalid("features", e))
    }

    pub fn thresholds(&self) -> Result<Thresholds, ConfigError> {
        Thresholds::new(self.t1, self.t2).map_err(|e| invalid("t1/t2", e))
    }

    pub fn train_config(&self) -> Result<TrainConfig, ConfigError> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(invalid("alpha", "must be a non-negative number"));
        }
        Ok(TrainConfig {
            features: self.feature_config()?,
            mode: self.mode,
            alpha: self.alpha,
            buy_basis: self.buy_basis,
            bounds: CategoryBounds::new(self.popularity_low_max, self.popularity_med_max)
                .map_err(|e| invalid("popularity_low_max/popularity_med_max", e))?,
            thresholds: self.thresholds()?,
        })
    }

    /// Synthetic settings not exposed here keep their generator defaults.
    pub fn synth_config(&self) -> Result<SynthConfig, ConfigError> {
        let start_date = NaiveDate::parse_from_str(&self.synth_start, "%Y-%m-%d")
            .map_err(|e| invalid("synth_start", e))?;
        if self.synth_popularity_low > self.synth_popularity_high {
            return Err(invalid(
                "synth_popularity_low",
                "must not exceed synth_popularity_high",
            ));
        }
        let cfg = SynthConfig {
            seed: self.seed,
            n_sessions: self.synth_sessions,
            n_items: self.synth_items,
            popularity: PlantedPopularity::Uniform {
                low: self.synth_popularity_low,
                high: self.synth_popularity_high,
            },
            buy_session_fraction: self.synth_buy_fraction,
            mean_clicks_buy: self.synth_mean_clicks_buy,
            mean_clicks_nonbuy: self.synth_mean_clicks_nonbuy,
            start_date,
            days: self.synth_days,
            ..SynthConfig::default()
        };
        crate::synth::validate(&cfg).map_err(|e| invalid("synth", e))?;
        Ok(cfg)
    }
}
