//! Scenario documents shipped with the binary.

pub const PRESETS: [(&str, &str); 5] = [
    ("euclidean_attractor", include_str!("../scenarios/euclidean_attractor.cfg")),
    ("sphere_geodesic", include_str!("../scenarios/sphere_geodesic.cfg")),
    ("sphere_attractor", include_str!("../scenarios/sphere_attractor.cfg")),
    ("sphere_obstacles", include_str!("../scenarios/sphere_obstacles.cfg")),
    ("torque_limited_tracking", include_str!("../scenarios/torque_limited_tracking.cfg")),
];

/// Preset text by name, with or without the `.cfg` extension.
pub fn preset(name: &str) -> Option<&'static str> {
    let stem = name.strip_suffix(".cfg").unwrap_or(name);
    PRESETS.iter().find(|(n, _)| *n == stem).map(|(_, t)| *t)
}

pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse_scenario;

    #[test]
    fn every_preset_parses_and_builds() {
        for (name, text) in PRESETS {
            let s = parse_scenario(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(s.name, name);
        }
    }

    #[test]
    fn lookup_accepts_the_extension() {
        assert!(preset("sphere_obstacles.cfg").is_some());
        assert!(preset("sphere_obstacles").is_some());
        assert!(preset("nope").is_none());
    }
}
