//! Config file + flag merging, and error-to-exit-code mapping.

use std::path::{Path, PathBuf};

use mspe::config::{DatasetSource, RunConfig};
use mspe::Error;

use crate::ConfigArgs;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument(_) => EXIT_USAGE,
            Error::Numeric(_) => EXIT_NUMERIC,
            Error::Format { .. } | Error::Version { .. } | Error::Io(_) | Error::Json(_) => EXIT_DATA,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Parse `value` as a TOML literal, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {value}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

/// Config file, then `--set` overrides, then named flags.
pub fn resolve(args: &ConfigArgs) -> CliResult<RunConfig> {
    let mut table = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::data(format!("cannot read config {}: {e}", path.display())))?;
            toml::from_str::<toml::Table>(&text)
                .map_err(|e| CliError::data(format!("config {}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    for kv in &args.overrides {
        let Some((k, v)) = kv.split_once('=') else {
            return Err(CliError::usage(format!("--set expects KEY=VALUE, got '{kv}'")));
        };
        table.insert(k.trim().to_string(), parse_value(v.trim()));
    }
    let named = [
        ("model", args.model.clone().map(toml::Value::String)),
        ("mode", args.mode.clone().map(toml::Value::String)),
        ("steps", args.steps.map(|v| toml::Value::Integer(v as i64))),
        ("seed", args.seed.map(|v| toml::Value::Integer(v as i64))),
        ("output", args.out.clone().map(toml::Value::String)),
    ];
    for (k, v) in named {
        if let Some(v) = v {
            table.insert(k.to_string(), v);
        }
    }
    if args.deterministic {
        table.insert("deterministic".into(), toml::Value::Boolean(true));
    }
    let mut cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| CliError::usage(format!("invalid configuration: {e}")))?;
    if cfg.dataset == DatasetSource::Idx {
        let dir = std::env::var("MSPE_DATA_DIR").ok().map(PathBuf::from);
        let locate = |given: &Option<String>, default: &str| -> Option<String> {
            match (given, &dir) {
                (Some(p), Some(d)) if Path::new(p).is_relative() => Some(d.join(p).display().to_string()),
                (Some(p), _) => Some(p.clone()),
                (None, Some(d)) => Some(d.join(default).display().to_string()),
                (None, None) => None,
            }
        };
        cfg.idx_images = locate(&cfg.idx_images, "train-images-idx3-ubyte");
        cfg.idx_labels = locate(&cfg.idx_labels, "train-labels-idx1-ubyte");
    }
    cfg.validate()?;
    Ok(cfg)
}
