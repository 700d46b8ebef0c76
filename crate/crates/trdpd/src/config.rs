//! Declarative training configuration: a plain `key = value` file with `#`
//! comments. Unknown keys are rejected so typos fail loudly.
//!
//! Recognized keys:
//!
//! ```text
//! peak          = 4.0        # required; noise level the model targets
//! stages        = 8          # diffusion stages T (default 8)
//! filter_size   = 5          # odd kernel size m (default 5)
//! dataset       = patches/   # directory or single-star glob of training
//!                            # patches (PGM/PNG), required by `train`
//! seed          = 0          # Poisson corruption seed (default 0)
//! patch_size    = 180        # center-crop larger inputs to this (0 = off)
//! rbf_count     = 63         # RBF centers per nonlinearity
//! rbf_range     = (derived)  # grid half-range; default 310 * peak / 255
//! rbf_gamma     = (derived)  # RBF width; default = center spacing
//! lbfgs_iters   = 200        # optimizer iteration cap
//! lbfgs_history = 10         # curvature pairs kept
//! grad_tol      = 1e-8       # gradient infinity-norm stopping threshold
//! fd_step       = 1e-3       # gradcheck relative step
//! gradcheck_size = 32        # gradcheck image side
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use trdpd_core::influence::RbfGrid;
use trdpd_core::training::{LbfgsConfig, TrainConfig};

use crate::error::{format_err, Result};

const KNOWN_KEYS: &[&str] = &[
    "peak",
    "stages",
    "filter_size",
    "dataset",
    "seed",
    "patch_size",
    "rbf_count",
    "rbf_range",
    "rbf_gamma",
    "lbfgs_iters",
    "lbfgs_history",
    "grad_tol",
    "fd_step",
    "gradcheck_size",
];

/// Everything a `train` or `gradcheck` run needs from the config file.
#[derive(Debug, Clone)]
pub struct TrainSpec {
    pub train: TrainConfig,
    pub dataset: Option<PathBuf>,
    pub seed: u64,
    pub patch_size: usize,
    pub fd_step: f64,
    pub gradcheck_size: usize,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            train: TrainConfig {
                stages: 8,
                filter_size: 5,
                peak: 4.0,
                rbf: None,
                lbfgs: LbfgsConfig::default(),
            },
            dataset: None,
            seed: 0,
            patch_size: 180,
            fd_step: 1e-3,
            gradcheck_size: 32,
        }
    }
}

pub fn parse_config(text: &str) -> Result<TrainSpec> {
    let mut map: BTreeMap<String, String> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format_err(format!("config line {}: expected key = value", lineno + 1)))?;
        let key = key.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(format_err(format!("config line {}: unknown key `{key}`", lineno + 1)));
        }
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(format_err(format!("config line {}: duplicate key `{key}`", lineno + 1)));
        }
    }

    let get_f64 = |k: &str| -> Result<Option<f64>> {
        map.get(k)
            .map(|v| v.parse::<f64>().map_err(|_| format_err(format!("config: `{k}` is not a number"))))
            .transpose()
    };
    let get_usize = |k: &str| -> Result<Option<usize>> {
        map.get(k)
            .map(|v| v.parse::<usize>().map_err(|_| format_err(format!("config: `{k}` is not an integer"))))
            .transpose()
    };

    let mut spec = TrainSpec::default();
    let peak = get_f64("peak")?.ok_or_else(|| format_err("config: missing required key `peak`"))?;
    if !(peak.is_finite() && peak > 0.0) {
        return Err(format_err("config: `peak` must be positive"));
    }
    spec.train.peak = peak;
    if let Some(v) = get_usize("stages")? {
        spec.train.stages = v;
    }
    if let Some(v) = get_usize("filter_size")? {
        spec.train.filter_size = v;
    }
    if spec.train.filter_size == 0 || spec.train.filter_size % 2 == 0 {
        return Err(format_err("config: `filter_size` must be odd"));
    }

    // RBF grid: any explicit key switches to a custom grid; the rest derive
    // from the defaults for this peak
    let default_grid = RbfGrid::default_for_peak(peak);
    let count = get_usize("rbf_count")?;
    let range = get_f64("rbf_range")?;
    let gamma = get_f64("rbf_gamma")?;
    if count.is_some() || range.is_some() || gamma.is_some() {
        let count = count.unwrap_or(default_grid.count);
        let range = range.unwrap_or_else(|| default_grid.range);
        let gamma = gamma.unwrap_or_else(|| {
            if count > 1 { 2.0 * range / (count as f64 - 1.0) } else { default_grid.gamma }
        });
        let grid = RbfGrid { count, range, gamma };
        grid.validate().map_err(crate::error::Error::Core)?;
        spec.train.rbf = Some(grid);
    }

    if let Some(v) = get_usize("lbfgs_iters")? {
        spec.train.lbfgs.max_iters = v;
    }
    if let Some(v) = get_usize("lbfgs_history")? {
        spec.train.lbfgs.history = v;
    }
    if let Some(v) = get_f64("grad_tol")? {
        spec.train.lbfgs.grad_tol = v;
    }
    if let Some(v) = map.get("dataset") {
        spec.dataset = Some(PathBuf::from(v));
    }
    if let Some(v) = get_usize("seed")? {
        spec.seed = v as u64;
    }
    if let Some(v) = get_usize("patch_size")? {
        spec.patch_size = v;
    }
    if let Some(v) = get_f64("fd_step")? {
        spec.fd_step = v;
    }
    if let Some(v) = get_usize("gradcheck_size")? {
        if v < 4 {
            return Err(format_err("config: `gradcheck_size` must be at least 4"));
        }
        spec.gradcheck_size = v;
    }
    Ok(spec)
}

pub fn load_config(path: &Path) -> Result<TrainSpec> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text).map_err(|e| format_err(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_config() {
        let spec = parse_config(
            "# training setup\n\
             peak = 4\n\
             stages = 3\n\
             filter_size = 5\n\
             dataset = patches/*.pgm\n\
             seed = 7\n\
             rbf_count = 31\n\
             lbfgs_iters = 80\n",
        )
        .unwrap();
        assert_eq!(spec.train.peak, 4.0);
        assert_eq!(spec.train.stages, 3);
        assert_eq!(spec.train.filter_size, 5);
        assert_eq!(spec.seed, 7);
        assert_eq!(spec.train.lbfgs.max_iters, 80);
        let grid = spec.train.rbf.unwrap();
        assert_eq!(grid.count, 31);
        assert!((grid.range - 310.0 * 4.0 / 255.0).abs() < 1e-12);
        assert!((grid.gamma - 2.0 * grid.range / 30.0).abs() < 1e-12);
        assert_eq!(spec.dataset.unwrap(), PathBuf::from("patches/*.pgm"));
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        assert!(parse_config("peak = 4\ntypo_key = 1\n").is_err());
        assert!(parse_config("peak = 4\npeak = 5\n").is_err());
        assert!(parse_config("stages = 3\n").is_err()); // missing peak
        assert!(parse_config("peak = 4\nfilter_size = 4\n").is_err());
    }
}
