//! Settings file for the command-line tool.
//!
//! The format is flat `key = value` text; `#` starts a comment line.
//! One file covers both the metrics pipeline and the synthetic generator,
//! so `generate --config` and the global `--config` read the same thing.
//! Keys left out keep their built-in defaults.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::metrics::{MetricsConfig, SmoothingWindow};
use crate::survey::{ScaleDefinition, ScaleError};
use crate::synth::GeneratorConfig;

/// Environment variable naming a settings file.
pub const CONFIG_ENV: &str = "PROXKIT_CONFIG";

/// Every key the file may contain.
pub const KNOWN_KEYS: [&str; 14] = [
    "trim_leading",
    "smoothing_window",
    "max_smoothing_passes",
    "tie_break",
    "transitions",
    "scale",
    "seed",
    "coupling",
    "n_sessions",
    "session_frames",
    "frame_stride",
    "fps",
    "group_size_weights",
    "base_transition",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key {key:?} given twice")]
    RepeatedKey { line: usize, key: String },
    #[error("line {line}: bad value for {key}: {reason}")]
    BadValue { line: usize, key: String, reason: String },
    #[error("scale file {path}: {source}")]
    Scale { path: PathBuf, source: ScaleError },
    #[error("generator settings: {0}")]
    Generator(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub metrics: MetricsConfig,
    pub generator: GeneratorConfig,
    /// Scale definition file named by `scale`, if any.
    pub scale_path: Option<PathBuf>,
}

fn parse_list(v: &str, want: usize) -> Result<Vec<f64>, String> {
    let xs: Vec<f64> = v
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| format!("{s:?} is not a number")))
        .collect::<Result<_, _>>()?;
    if xs.len() != want {
        return Err(format!("expected {want} comma-separated numbers, got {}", xs.len()));
    }
    Ok(xs)
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "on" => Ok(true),
        "false" | "no" | "off" => Ok(false),
        _ => Err(format!("{v:?} is not a boolean")),
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("{v:?} is not a valid number"))
}

impl Settings {
    /// Applies a settings text on top of the defaults. A relative `scale`
    /// path resolves against `base_dir`. The scale file itself is not read.
    pub fn from_text(text: &str, base_dir: &Path) -> Result<Settings, ConfigError> {
        let mut s = Settings::default();
        let mut seen = std::collections::BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (k, v) = t.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (k, v) = (k.trim(), v.trim());
            if !KNOWN_KEYS.contains(&k) {
                return Err(ConfigError::UnknownKey { line, key: k.to_string() });
            }
            if !seen.insert(k.to_string()) {
                return Err(ConfigError::RepeatedKey { line, key: k.to_string() });
            }
            s.apply(k, v).map_err(|reason| ConfigError::BadValue { line, key: k.to_string(), reason })?;
            if k == "scale" {
                s.scale_path = Some(base_dir.join(v));
            }
        }
        Ok(s)
    }

    fn apply(&mut self, key: &str, v: &str) -> Result<(), String> {
        let g = &mut self.generator;
        match key {
            "trim_leading" => self.metrics.trim_leading = parse_bool(v)?,
            "smoothing_window" => {
                self.metrics.smoothing = match v {
                    "off" | "0" => None,
                    w => Some(SmoothingWindow::new(parse_num(w)?).map_err(|e| e.to_string())?),
                }
            }
            "max_smoothing_passes" => self.metrics.max_smoothing_passes = parse_num(v)?,
            "tie_break" => self.metrics.tie_break = v.parse()?,
            "transitions" => self.metrics.transitions = v.parse()?,
            "scale" => {
                if v.is_empty() {
                    return Err("empty path".into());
                }
            }
            "seed" => g.seed = parse_num(v)?,
            "coupling" => g.coupling = parse_num(v)?,
            "n_sessions" => g.n_sessions = parse_num(v)?,
            "session_frames" => g.session_frames = parse_num(v)?,
            "frame_stride" => g.frame_stride = parse_num(v)?,
            "fps" => g.frames_per_second = parse_num(v)?,
            "group_size_weights" => {
                let w = parse_list(v, 4)?;
                g.group_size_weights.copy_from_slice(&w);
            }
            "base_transition" => {
                let m = parse_list(v, 16)?;
                for (r, row) in g.base_transition.iter_mut().enumerate() {
                    row.copy_from_slice(&m[4 * r..4 * r + 4]);
                }
            }
            _ => unreachable!("key checked against KNOWN_KEYS"),
        }
        Ok(())
    }

    /// Reads a settings file and the scale file it names, then checks the
    /// generator settings.
    pub fn load(path: &Path) -> Result<Settings, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut s = Settings::from_text(&text, base)?;
        if let Some(scale) = &s.scale_path {
            s.generator.scale = load_scale(scale)?;
        }
        s.generator.validate().map_err(|e| ConfigError::Generator(e.0))?;
        Ok(s)
    }

    /// Resolves the settings source: an explicit path wins over
    /// `PROXKIT_CONFIG`; the word `default` (or neither) means built-ins.
    pub fn resolve(explicit: Option<&str>) -> Result<Settings, ConfigError> {
        let from_env = std::env::var(CONFIG_ENV).ok().filter(|v| !v.is_empty());
        match explicit.map(str::to_string).or(from_env) {
            None => Ok(Settings::default()),
            Some(p) if p == "default" => Ok(Settings::default()),
            Some(p) => Settings::load(Path::new(&p)),
        }
    }
}

pub fn load_scale(path: &Path) -> Result<ScaleDefinition, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    text.parse().map_err(|source| ConfigError::Scale { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{TieBreak, TransitionRule};

    #[test]
    fn empty_text_is_defaults() {
        assert_eq!(Settings::from_text("# nothing\n\n", Path::new(".")).unwrap(), Settings::default());
    }

    #[test]
    fn keys_override_defaults() {
        let text = "smoothing_window = off\ntie_break = farthest\ntransitions = bridge\nseed = 7\n\
                    group_size_weights = 1, 0, 0, 0\nscale = gas.txt\n";
        let s = Settings::from_text(text, Path::new("/cfg")).unwrap();
        assert_eq!(s.metrics.smoothing, None);
        assert_eq!(s.metrics.tie_break, TieBreak::FarthestFirst);
        assert_eq!(s.metrics.transitions, TransitionRule::BridgeOffScreen);
        assert_eq!(s.generator.seed, 7);
        assert_eq!(s.generator.group_size_weights, [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.scale_path, Some(PathBuf::from("/cfg/gas.txt")));
    }

    #[test]
    fn bad_input_is_reported_with_line() {
        let err = Settings::from_text("seed = 1\nwindow = 3\n", Path::new(".")).unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { line: 2, .. }));
        let err = Settings::from_text("smoothing_window = 4\n", Path::new(".")).unwrap_err();
        assert!(matches!(err, ConfigError::BadValue { line: 1, .. }));
        let err = Settings::from_text("seed = 1\nseed = 2\n", Path::new(".")).unwrap_err();
        assert!(matches!(err, ConfigError::RepeatedKey { line: 2, .. }));
        assert!(matches!(Settings::from_text("seed\n", Path::new(".")), Err(ConfigError::Syntax { line: 1 })));
        assert!(Settings::from_text("base_transition = 1,0\n", Path::new(".")).is_err());
    }

    #[test]
    fn load_reads_scale_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("scale.txt"), "items = 3\nlikert_min = 1\nlikert_max = 5\nreversed = 2\n").unwrap();
        std::fs::write(dir.path().join("p.conf"), "scale = scale.txt\ncoupling = 0\n").unwrap();
        let s = Settings::load(&dir.path().join("p.conf")).unwrap();
        assert_eq!(s.generator.scale.item_count, 3);
        assert_eq!(s.generator.coupling, 0.0);

        std::fs::write(dir.path().join("bad.conf"), "coupling = 2\n").unwrap();
        assert!(matches!(Settings::load(&dir.path().join("bad.conf")), Err(ConfigError::Generator(_))));
    }
}
