use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    #[default]
    Kds,
    Random,
    None,
}

impl std::fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplingMode::Kds => "kds",
            SamplingMode::Random => "random",
            SamplingMode::None => "none",
        })
    }
}

/// Pipeline knobs. Every field may be set from a TOML file; missing
/// fields take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Low-pass half-window; the filter covers `(2k+1) x (2k+1)` pixels.
    pub k: usize,
    /// Segmentation threshold on the filtered intensity.
    pub t: f32,
    /// Required share of total lung area inside the selected window.
    pub alpha: f64,
    /// Maximum selected window length in slices.
    pub n_c: usize,
    pub n_samples: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub seed: u64,
    pub sampling_mode: SamplingMode,
    /// Square structuring-element radius used before hole filling.
    pub dilate_radius: usize,
    /// KDE evaluation grid size.
    pub grid_size: usize,
    /// Crop each slice to its own box instead of the per-scan union.
    pub per_slice_crop: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 5,
            t: 100.0,
            alpha: 0.5,
            n_c: 1000,
            n_samples: 16,
            out_h: 384,
            out_w: 384,
            seed: 0,
            sampling_mode: SamplingMode::Kds,
            dilate_radius: 3,
            grid_size: 100,
            per_slice_crop: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.k < 1 {
            return fail("k must be >= 1");
        }
        if !(0.0..=255.0).contains(&self.t) {
            return fail("t must lie in [0, 255]");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return fail("alpha must lie in (0, 1]");
        }
        if self.n_c < 1 {
            return fail("n_c must be >= 1");
        }
        if self.n_samples < 1 {
            return fail("n_samples must be >= 1");
        }
        if self.out_h < 1 || self.out_w < 1 {
            return fail("output size must be at least 1x1");
        }
        if self.dilate_radius < 1 {
            return fail("dilate_radius must be >= 1");
        }
        if self.grid_size < 16 {
            return fail("grid_size must be >= 16");
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// Parses `HxW` (also accepts `x` in either case or `*`).
pub fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X', '*'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in {s:?}"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in {s:?}"))?;
    if h == 0 || w == 0 {
        return Err(format!("size must be positive, got {s:?}"));
    }
    Ok((h, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!((c.k, c.t, c.alpha), (5, 100.0, 0.5));
    }

    #[test]
    fn toml_partial_override() {
        let c = PipelineConfig::from_toml_str("k = 3\nalpha = 0.7\nsampling_mode = \"random\"").unwrap();
        assert_eq!(c.k, 3);
        assert_eq!(c.alpha, 0.7);
        assert_eq!(c.sampling_mode, SamplingMode::Random);
        assert_eq!(c.t, 100.0);
    }

    #[test]
    fn toml_rejects_bad_values() {
        assert!(PipelineConfig::from_toml_str("alpha = 0.0").is_err());
        assert!(PipelineConfig::from_toml_str("t = 300.0").is_err());
        assert!(PipelineConfig::from_toml_str("k = 0").is_err());
        assert!(PipelineConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn size_parsing() {
        assert_eq!(parse_size("384x384"), Ok((384, 384)));
        assert_eq!(parse_size("224X256"), Ok((224, 256)));
        assert!(parse_size("0x5").is_err());
        assert!(parse_size("12").is_err());
    }
}
