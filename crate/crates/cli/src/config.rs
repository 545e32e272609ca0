//! Line-based `key = value` experiment configuration.
//!
//! UTF-8 text; `#` starts a comment anywhere on a line; keys may appear once.
//! Required keys: `K, K_G, M, bandwidth_hz, carrier_hz, scheme,
//! power_dbw_list, trials, seed`. Everything else is optional with defaults
//! drawn from the reference link budget (noise density -208 dBW/Hz, radar
//! path loss 130 dB, cross-section -10 dBm^2, communication path loss 108 dB).

use dfrc_core::grid::OfdmConfig;
use dfrc_core::opt::{BaselineKind, OptimizerOptions};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid value for `{key}`: {msg}")]
    Validation { key: String, msg: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
}

/// Symbol-distribution scheme of one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Psk,
    GaussianOpt,
    GaussianDecouple,
    Baseline(BaselineKind),
}

impl Scheme {
    pub fn needs_channel(self) -> bool {
        matches!(self, Scheme::GaussianOpt | Scheme::GaussianDecouple)
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "psk" => Ok(Scheme::Psk),
            "gaussian-opt" => Ok(Scheme::GaussianOpt),
            "gaussian-decouple" => Ok(Scheme::GaussianDecouple),
            other => {
                if let Some(kind) = other.strip_prefix("baseline:") {
                    Ok(Scheme::Baseline(kind.parse()?))
                } else {
                    Err(format!(
                        "unknown scheme '{other}' (expected psk | gaussian-opt | \
                         gaussian-decouple | baseline:<kind>)"
                    ))
                }
            }
        }
    }
}

/// Source of per-subcarrier communication channel gains.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelSource {
    /// `k,gain` rows, one per subcarrier.
    File(PathBuf),
    /// Synthetic exponential-profile taps, drawn from `channel_seed`.
    Taps(usize),
}

/// One experiment: grid geometry, budgets, scheme, sweep, and seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub subcarriers: usize,
    pub cp_len: usize,
    pub symbols: usize,
    pub bandwidth_hz: f64,
    pub carrier_hz: f64,
    pub noise_density_dbw_hz: f64,
    pub radar_path_loss_db: f64,
    pub rcs_dbm2: f64,
    pub comm_path_loss_db: f64,
    pub scheme: Scheme,
    pub psk_order: u32,
    pub power_dbw_list: Vec<f64>,
    pub rate_constraint_bps_hz: f64,
    pub trials: usize,
    pub seed: u64,
    pub channel_seed: u64,
    pub eps_samples: usize,
    pub channel: ChannelSource,
    pub out_dir: PathBuf,
    pub optimizer: OptimizerOptions,
    /// SHA-256 of the configuration file, recorded in the run manifest.
    pub config_sha256: String,
}

impl ExperimentConfig {
    /// Grid-and-budget view consumed by the core library. The radar loss
    /// folds the path loss and the cross-section into one echo budget.
    pub fn ofdm(&self) -> Result<OfdmConfig, ConfigError> {
        let noise_power = 10f64.powf(self.noise_density_dbw_hz / 10.0) * self.bandwidth_hz;
        OfdmConfig::new(
            self.subcarriers,
            self.cp_len,
            self.symbols,
            self.bandwidth_hz,
            self.carrier_hz,
            noise_power,
            self.radar_path_loss_db - self.rcs_dbm2,
            self.comm_path_loss_db,
        )
        .map_err(|e| ConfigError::Validation {
            key: "K/K_G/M".into(),
            msg: e.to_string(),
        })
    }

    /// Noise power density at the communication receiver (linear W/Hz).
    pub fn comm_noise_density(&self) -> f64 {
        10f64.powf(self.noise_density_dbw_hz / 10.0)
    }
}

fn parse_kv(text: &str) -> Result<BTreeMap<String, (usize, String)>, ConfigError> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Parse {
                line: line_no,
                msg: format!("expected `key = value`, got '{line}'"),
            });
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Parse {
                line: line_no,
                msg: "empty key or value".into(),
            });
        }
        if map.insert(key.clone(), (line_no, value)).is_some() {
            return Err(ConfigError::Parse {
                line: line_no,
                msg: format!("duplicate key `{key}`"),
            });
        }
    }
    Ok(map)
}

struct Reader {
    map: BTreeMap<String, (usize, String)>,
}

impl Reader {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }

    fn parse<T: FromStr>(&mut self, key: &'static str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some((line, value)) => value.parse::<T>().map(Some).map_err(|e| ConfigError::Parse {
                line,
                msg: format!("key `{key}`: {e}"),
            }),
        }
    }

    fn require<T: FromStr>(&mut self, key: &'static str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.parse(key)?.ok_or(ConfigError::Missing(key))
    }
}

/// Load and validate an experiment configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut r = Reader {
        map: parse_kv(&text)?,
    };

    let subcarriers: usize = r.require("K")?;
    let cp_len: usize = r.require("K_G")?;
    let symbols: usize = r.require("M")?;
    let bandwidth_hz: f64 = r.require("bandwidth_hz")?;
    let carrier_hz: f64 = r.require("carrier_hz")?;
    let scheme: Scheme = match r.take("scheme") {
        None => return Err(ConfigError::Missing("scheme")),
        Some((line, value)) => value.parse().map_err(|e| ConfigError::Parse { line, msg: e })?,
    };
    let power_dbw_list: Vec<f64> = match r.take("power_dbw_list") {
        None => return Err(ConfigError::Missing("power_dbw_list")),
        Some((line, value)) => value
            .split(',')
            .map(|tok| tok.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| ConfigError::Parse {
                line,
                msg: format!("key `power_dbw_list`: {e}"),
            })?,
    };
    let trials: usize = r.require("trials")?;
    let seed: u64 = r.require("seed")?;

    let scenario = r
        .parse::<String>("scenario")?
        .unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "experiment".into())
        });
    let noise_density_dbw_hz = r.parse("noise_density_dbw_hz")?.unwrap_or(-208.0);
    let radar_path_loss_db = r.parse("radar_path_loss_db")?.unwrap_or(130.0);
    let rcs_dbm2 = r.parse("rcs_dbm2")?.unwrap_or(-10.0);
    let comm_path_loss_db = r.parse("comm_path_loss_db")?.unwrap_or(108.0);
    let psk_order = r.parse("psk_order")?.unwrap_or(2u32);
    let rate_constraint_bps_hz = r.parse("rate_constraint_bps_hz")?.unwrap_or(0.0);
    let eps_samples = r.parse("eps_samples")?.unwrap_or(8usize);
    let channel_seed = r.parse("channel_seed")?.unwrap_or(seed);
    let out_dir: PathBuf = r
        .parse::<PathBuf>("out_dir")?
        .unwrap_or_else(|| PathBuf::from("results"));

    let channel_file: Option<PathBuf> = r.parse("channel_file")?;
    let channel_taps: Option<usize> = r.parse("channel_taps")?;
    let channel = match (channel_file, channel_taps) {
        (Some(_), Some(_)) => {
            return Err(ConfigError::Validation {
                key: "channel_file".into(),
                msg: "specify either channel_file or channel_taps, not both".into(),
            })
        }
        (Some(file), None) => {
            // Relative gain files resolve against the config's directory.
            let resolved = if file.is_relative() {
                path.parent().unwrap_or(Path::new(".")).join(file)
            } else {
                file
            };
            ChannelSource::File(resolved)
        }
        (None, Some(taps)) => ChannelSource::Taps(taps),
        // The reference NLOS profile has 18 taps.
        (None, None) => ChannelSource::Taps(18),
    };

    let mut optimizer = OptimizerOptions::default();
    if let Some(v) = r.parse("optimizer.admm_max_iters")? {
        optimizer.admm_max_iters = v;
    }
    if let Some(v) = r.parse("optimizer.bcd_max_iters")? {
        optimizer.bcd_max_iters = v;
    }
    if let Some(v) = r.parse("optimizer.scp_max_iters")? {
        optimizer.scp_max_iters = v;
    }
    if let Some(v) = r.parse("optimizer.rel_tol")? {
        optimizer.rel_tol = v;
    }
    if let Some(v) = r.parse("optimizer.qp_tol")? {
        optimizer.qp_tol = v;
    }
    if let Some((line, value)) = r.take("optimizer.rho") {
        if value != "auto" {
            let rho = value.parse::<f64>().map_err(|e| ConfigError::Parse {
                line,
                msg: format!("key `optimizer.rho`: {e}"),
            })?;
            optimizer.rho = Some(rho);
        }
    }
    if let Some(v) = r.parse("optimizer.adapt_rho")? {
        optimizer.adapt_rho = v;
    }
    if let Some(v) = r.parse("optimizer.kaiser_beta")? {
        optimizer.kaiser_beta = v;
    }

    if let Some((line, _)) = r.map.values().next() {
        let key = r.map.keys().next().unwrap().clone();
        return Err(ConfigError::Parse {
            line: *line,
            msg: format!("unknown key `{key}`"),
        });
    }

    let config_sha256 = {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        format!("{:x}", hasher.finalize())
    };

    let cfg = ExperimentConfig {
        scenario,
        subcarriers,
        cp_len,
        symbols,
        bandwidth_hz,
        carrier_hz,
        noise_density_dbw_hz,
        radar_path_loss_db,
        rcs_dbm2,
        comm_path_loss_db,
        scheme,
        psk_order,
        power_dbw_list,
        rate_constraint_bps_hz,
        trials,
        seed,
        channel_seed,
        eps_samples,
        channel,
        out_dir,
        optimizer,
        config_sha256,
    };
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &ExperimentConfig) -> Result<(), ConfigError> {
    cfg.ofdm()?;
    if cfg.power_dbw_list.is_empty() {
        return Err(ConfigError::Validation {
            key: "power_dbw_list".into(),
            msg: "sweep must contain at least one point".into(),
        });
    }
    if cfg.trials == 0 {
        return Err(ConfigError::Validation {
            key: "trials".into(),
            msg: "trials must be at least 1".into(),
        });
    }
    if cfg.eps_samples == 0 {
        return Err(ConfigError::Validation {
            key: "eps_samples".into(),
            msg: "eps_samples must be at least 1".into(),
        });
    }
    if cfg.psk_order == 0 {
        return Err(ConfigError::Validation {
            key: "psk_order".into(),
            msg: "psk_order must be at least 1".into(),
        });
    }
    if cfg.rate_constraint_bps_hz < 0.0 {
        return Err(ConfigError::Validation {
            key: "rate_constraint_bps_hz".into(),
            msg: "rate constraint must be non-negative".into(),
        });
    }
    match &cfg.channel {
        ChannelSource::Taps(taps) if *taps == 0 => {
            return Err(ConfigError::Validation {
                key: "channel_taps".into(),
                msg: "channel_taps must be at least 1".into(),
            });
        }
        ChannelSource::File(file) => {
            if !file.exists() {
                return Err(ConfigError::Validation {
                    key: "channel_file".into(),
                    msg: format!("file {} does not exist", file.display()),
                });
            }
        }
        _ => {}
    }
    Ok(())
}
