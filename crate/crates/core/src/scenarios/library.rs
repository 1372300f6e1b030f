//! Scenario files shipped with the crate.

use super::spec::{parse_scenario, ScenarioSpec};
use super::ScenarioError;

macro_rules! library {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../../scenarios/", $name, ".scn")))),*]
    };
}

/// `(name, file text)` of every bundled scenario.
pub const LIBRARY: &[(&str, &str)] = library!(
    "baseline",
    "calibration",
    "dos50",
    "eavesdrop_device",
    "eavesdrop_uplink",
    "corrupt",
    "modify",
    "spoof",
    "inject",
    "dos",
    "ddos",
    "scan",
    "unauthorized_control",
    "storage_read",
    "storage_tamper",
    "bad_service",
    "impostor",
    "rogue_join",
    "route_hijack",
);

/// Parses the bundled scenario `name`, `None` if there is none.
pub fn library_scenario(name: &str) -> Option<Result<ScenarioSpec, ScenarioError>> {
    LIBRARY
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| parse_scenario(text))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_file_parses_under_its_own_name() {
        for (name, _) in LIBRARY {
            let s = library_scenario(name).unwrap().unwrap();
            assert_eq!(&s.name, name);
        }
        assert!(library_scenario("nope").is_none());
    }
}
