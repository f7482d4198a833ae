//! Scenario files are TOML documents mirroring [`ScenarioScript`]:
//!
//! ```toml
//! seed = 7
//! duration = 600.0
//!
//! [signal]            # optional, defaults shown in SignalParams
//! noise_std = 1.0
//!
//! [[schedule]]
//! tool_id = "10026"
//! program_name = "PRG_RIB_01"
//! workpiece_id = "WP-0001"
//! start = 0.0
//! end = 300.0
//! spindle_speed = 24000.0
//! feedrate = 6000.0
//!
//! [[anomalies]]
//! kind = "chatter"    # chatter | unbalance_growth | bearing_defect
//! start = 20.0
//! end = 21.0
//! magnitude = 30.0
//! frequency = 1230.0
//! ```

use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{ScenarioError, ScenarioScript};

#[derive(Debug, Error)]
pub enum ScenarioFileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: invalid scenario: {source}")]
    Invalid {
        path: PathBuf,
        #[source]
        source: ScenarioError,
    },
    #[error("serializing scenario: {0}")]
    Serialize(String),
}

pub fn write_scenario(script: &ScenarioScript, path: &Path) -> Result<(), ScenarioFileError> {
    script.validate().map_err(|source| ScenarioFileError::Invalid {
        path: path.to_path_buf(),
        source,
    })?;
    let text =
        toml::to_string_pretty(script).map_err(|e| ScenarioFileError::Serialize(e.to_string()))?;
    std::fs::write(path, text).map_err(|source| ScenarioFileError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_scenario(path: &Path) -> Result<ScenarioScript, ScenarioFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioFileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text, path)
}

pub(crate) fn parse_scenario(text: &str, path: &Path) -> Result<ScenarioScript, ScenarioFileError> {
    let script: ScenarioScript = toml::from_str(text).map_err(|e| {
        let (line, column) = e
            .span()
            .map(|s| line_column(text, s.start))
            .unwrap_or((0, 0));
        ScenarioFileError::Parse {
            path: path.to_path_buf(),
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    script.validate().map_err(|source| ScenarioFileError::Invalid {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(script)
}

/// 1-based line and column of a byte offset.
pub(crate) fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |nl| before.len() - nl - 1) + 1;
    (line, column)
}
