use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Solver and pyramid settings for [`register_pair`](super::register_pair).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationOptions {
    pub pyramid_levels: usize,
    pub scale_factor: f64,
    pub max_iterations_per_level: usize,
    pub param_tolerance: f64,
    pub lm_lambda_init: f64,
    pub lm_lambda_up: f64,
    pub lm_lambda_down: f64,
    /// Huber threshold, in intensity units.
    pub robust_threshold: f64,
    pub bidirectional: bool,
    /// Gaussian σ (px) applied inside the mask before the pyramid is built;
    /// 0 disables it.
    pub presmooth_sigma: f64,
}

impl Default for RegistrationOptions {
    fn default() -> Self {
        RegistrationOptions {
            pyramid_levels: 4,
            scale_factor: 0.5,
            max_iterations_per_level: 50,
            param_tolerance: 1e-6,
            lm_lambda_init: 1e-3,
            lm_lambda_up: 10.0,
            lm_lambda_down: 10.0,
            robust_threshold: 0.1,
            bidirectional: true,
            presmooth_sigma: 1.0,
        }
    }
}

impl RegistrationOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("registration option {what}")));
        if self.pyramid_levels == 0 {
            return bad("pyramid_levels must be at least 1");
        }
        if !(self.scale_factor > 0.0 && self.scale_factor < 1.0) {
            return bad("scale_factor must lie in (0, 1)");
        }
        if self.max_iterations_per_level == 0 {
            return bad("max_iterations_per_level must be at least 1");
        }
        if !(self.param_tolerance > 0.0) || !(self.robust_threshold > 0.0) || !(self.lm_lambda_init > 0.0) {
            return bad("param_tolerance, robust_threshold and lm_lambda_init must be positive");
        }
        if !(self.presmooth_sigma >= 0.0) {
            return bad("presmooth_sigma must be >= 0");
        }
        if !(self.lm_lambda_up > 1.0 && self.lm_lambda_down > 1.0) {
            return bad("lm_lambda_up and lm_lambda_down must exceed 1");
        }
        Ok(())
    }

    /// Reads a TOML or JSON file (chosen by extension; JSON for `.json`).
    /// Missing keys keep their defaults.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let opts: RegistrationOptions = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?
        };
        opts.validate()?;
        Ok(opts)
    }
}
