//! Scenario presets compiled into the binary.

use crate::error::{BenchError, Result};
use crate::scenario::Scenario;

const PRESETS: &[(&str, &str)] = &[
    ("fig4a-full", include_str!("../presets/fig4a-full.toml")),
    ("fig4a", include_str!("../presets/fig4a.toml")),
    ("fig4b-full", include_str!("../presets/fig4b-full.toml")),
    ("fig4b", include_str!("../presets/fig4b.toml")),
    ("fig5a-full", include_str!("../presets/fig5a-full.toml")),
    ("fig5a", include_str!("../presets/fig5a.toml")),
    ("fig5b-full", include_str!("../presets/fig5b-full.toml")),
    ("fig5b", include_str!("../presets/fig5b.toml")),
    ("fig6a-full", include_str!("../presets/fig6a-full.toml")),
    ("fig6b-full", include_str!("../presets/fig6b-full.toml")),
    ("fig7a-full", include_str!("../presets/fig7a-full.toml")),
    ("fig7b-full", include_str!("../presets/fig7b-full.toml")),
    ("planar", include_str!("../presets/planar.toml")),
];

pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

/// Raw TOML text of a preset.
pub fn text(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| BenchError::UnknownPreset(name.to_string()))
}

pub fn load(name: &str) -> Result<Scenario> {
    Scenario::from_toml(text(name)?, &format!("preset {name}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses_and_names_itself() {
        for name in names() {
            let sc = load(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(sc.name, name);
            assert!(!sc.description.is_empty());
        }
    }

    #[test]
    fn desk_presets_use_fifty_trials_and_full_ones_two_hundred() {
        for name in names() {
            let sc = load(name).unwrap();
            let expected = if name.ends_with("-full") { 200 } else { 50 };
            assert_eq!(sc.run.trials, expected, "{name}");
        }
    }

    #[test]
    fn unknown_preset_lists_the_available_ones() {
        let err = load("fig9").unwrap_err().to_string();
        assert!(err.contains("fig9") && err.contains("fig4b"), "{err}");
    }
}
