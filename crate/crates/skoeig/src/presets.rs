//! Experiment configurations bundled with the binary.

use crate::config::{ConfigError, ExperimentConfig};

pub const PRESETS: [(&str, &str); 7] = [
    ("stuart_landau_backward", include_str!("../presets/stuart_landau_backward.cfg")),
    ("stuart_landau_forward", include_str!("../presets/stuart_landau_forward.cfg")),
    ("stuart_landau_fd", include_str!("../presets/stuart_landau_fd.cfg")),
    ("ou_oracle", include_str!("../presets/ou_oracle.cfg")),
    ("morris_lecar_backward", include_str!("../presets/morris_lecar_backward.cfg")),
    ("lorenz_forward", include_str!("../presets/lorenz_forward.cfg")),
    ("lorenz_backward", include_str!("../presets/lorenz_backward.cfg")),
];

pub fn preset_text(name: &str) -> Option<&'static str> {
    let name = name.strip_suffix(".cfg").unwrap_or(name);
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn preset(name: &str) -> Option<Result<ExperimentConfig, ConfigError>> {
    preset_text(name).map(|t| ExperimentConfig::from_json(t, &format!("preset {name}")))
}

/// A config file path, or a bundled preset name when no such file exists.
pub fn resolve(spec: &str) -> Result<ExperimentConfig, ConfigError> {
    let path = std::path::Path::new(spec);
    if path.exists() {
        return ExperimentConfig::load(path);
    }
    preset(spec).unwrap_or_else(|| {
        Err(ConfigError::Invalid(format!(
            "`{spec}` is neither a config file nor a bundled preset"
        )))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses_and_validates() {
        for (name, _) in PRESETS {
            let cfg = preset(name).unwrap().unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(cfg.name, name);
            let mut big = cfg.clone();
            big.apply_paper_scale();
            big.validate().unwrap();
        }
    }

    #[test]
    fn cfg_suffix_is_accepted() {
        assert!(preset_text("ou_oracle.cfg").is_some());
        assert!(preset_text("nope").is_none());
    }
}
