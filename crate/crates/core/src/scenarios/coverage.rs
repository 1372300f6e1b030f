//! Which modules answer which threat.

use crate::gateway::{Module, ModuleSet};

use super::ScenarioError;

/// Threat rows, in table order.
pub const THREATS: [&str; 18] = [
    "Confidentiality and Privacy",
    "Handling Security Attacks",
    "Authentication in IoT",
    "Identity Spoofing Attack",
    "Access Control in IoT",
    "Trust in IoT",
    "Attacks on Availability",
    "Impersonation Attacks",
    "Eavesdropping",
    "Data Corruption",
    "Data Modification",
    "Secure Routing and Forwarding in IoT",
    "Robustness and resilience management in IoT",
    "Audit Control for IoT",
    "Secure Network Access",
    "Secure Storage",
    "Tamper Resistance",
    "User Identification and Identity Management",
];

/// Rows with no module marked that still belong to one. They are tested
/// against that module instead.
pub const FLAGGED: [(&str, Module); 1] = [("Attacks on Availability", Module::Mitigation)];

/// Responsible modules for `threat`.
pub fn coverage(threat: &str) -> Result<ModuleSet, ScenarioError> {
    use Module::*;
    let mods: &[Module] = match threat {
        "Confidentiality and Privacy" => &[Privacy, KeyMgmt],
        "Handling Security Attacks" => &[Mitigation],
        "Authentication in IoT" => &[KeyMgmt, AuthN],
        "Identity Spoofing Attack" => &[Mitigation],
        "Access Control in IoT" => &[AccessControl],
        "Trust in IoT" => &[Trust],
        "Attacks on Availability" => &[],
        "Impersonation Attacks" => &[Mitigation],
        "Eavesdropping" => &[Privacy, KeyMgmt, Mitigation],
        "Data Corruption" => &[Privacy, KeyMgmt],
        "Data Modification" => &[Privacy, KeyMgmt],
        "Secure Routing and Forwarding in IoT" => &[AuthN, Mitigation],
        "Robustness and resilience management in IoT" => &[Mitigation],
        "Audit Control for IoT" => &[Mitigation],
        "Secure Network Access" => &[KeyMgmt, AuthN],
        "Secure Storage" => &[AccessControl],
        "Tamper Resistance" => &[AccessControl],
        "User Identification and Identity Management" => &[AuthN],
        _ => {
            return Err(ScenarioError::Invalid {
                field: "threat".into(),
                msg: format!("unknown threat '{threat}'"),
            })
        }
    };
    Ok(ModuleSet::of(mods))
}

/// Every marked `(threat, module)` cell, row by row.
pub fn marked_cells() -> Vec<(&'static str, Module)> {
    THREATS
        .iter()
        .flat_map(|t| {
            let set = coverage(t).expect("listed threat");
            Module::ALL.into_iter().filter(move |m| set.contains(*m)).map(move |m| (*t, m))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_rows() {
        assert_eq!(coverage("Trust in IoT").unwrap(), ModuleSet::of(&[Module::Trust]));
        assert_eq!(
            coverage("Eavesdropping").unwrap(),
            ModuleSet::of(&[Module::Privacy, Module::KeyMgmt, Module::Mitigation])
        );
        assert_eq!(coverage("Access Control in IoT").unwrap(), ModuleSet::of(&[Module::AccessControl]));
        assert!(coverage("Attacks on Availability").unwrap().is_empty());
        assert!(coverage("Sybil").is_err());
    }

    #[test]
    fn cell_count() {
        let cells = marked_cells();
        assert_eq!(cells.len(), 25);
        assert_eq!(cells.iter().filter(|(_, m)| *m == Module::Mitigation).count(), 7);
        assert!(cells.iter().all(|(t, _)| *t != FLAGGED[0].0));
    }
}
