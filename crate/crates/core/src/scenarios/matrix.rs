//! Paired on/off runs for every marked cell of the coverage table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use super::coverage::{marked_cells, FLAGGED};
use super::engine::run_scenario;
use super::library::library_scenario;
use super::report::Outcome;
use super::spec::{AttackKind, ScenarioSpec};
use super::ScenarioError;
use crate::gateway::{Module, ModuleSet};
use crate::simnet::Tick;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellMode {
    /// The module stops the attack outright.
    Prevent,
    /// The module notices the attack and answers it.
    Detect,
}

impl CellMode {
    pub fn name(self) -> &'static str {
        match self {
            CellMode::Prevent => "prevent",
            CellMode::Detect => "detect",
        }
    }
}

/// How one cell is exercised.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellPlan {
    pub threat: &'static str,
    pub module: Module,
    pub scenario: &'static str,
    /// Modules of the on-run. The off-run drops `module` and its dependents.
    pub base: ModuleSet,
    pub mode: CellMode,
    pub flagged: bool,
    /// Also require the attacker's traffic in the audit trail.
    pub audit_check: bool,
}

fn scenario_for(threat: &str, module: Module) -> Option<(&'static str, &'static [Module])> {
    use Module::*;
    Some(match (threat, module) {
        ("Confidentiality and Privacy", _) => ("eavesdrop_device", &[Privacy, KeyMgmt]),
        ("Handling Security Attacks", _) => ("inject", &[KeyMgmt, Mitigation]),
        ("Authentication in IoT", _) => ("impostor", &[KeyMgmt, AuthN]),
        ("Identity Spoofing Attack", _) => ("spoof", &[KeyMgmt, Mitigation]),
        ("Access Control in IoT", _) => ("unauthorized_control", &[KeyMgmt, AccessControl]),
        ("Trust in IoT", _) => ("bad_service", &[Trust]),
        ("Attacks on Availability", _) => ("ddos", &[KeyMgmt, Mitigation]),
        ("Impersonation Attacks", _) => ("impostor", &[KeyMgmt, AuthN, Mitigation]),
        ("Eavesdropping", Mitigation) => ("route_hijack", &[KeyMgmt, Mitigation]),
        ("Eavesdropping", _) => ("eavesdrop_uplink", &[Privacy, KeyMgmt]),
        ("Data Corruption", _) => ("corrupt", &[Privacy, KeyMgmt]),
        ("Data Modification", _) => ("modify", &[Privacy, KeyMgmt]),
        ("Secure Routing and Forwarding in IoT", AuthN) => ("route_hijack", &[KeyMgmt, AuthN]),
        ("Secure Routing and Forwarding in IoT", _) => ("route_hijack", &[KeyMgmt, Mitigation]),
        ("Robustness and resilience management in IoT", _) => ("dos", &[KeyMgmt, Mitigation]),
        ("Audit Control for IoT", _) => ("scan", &[KeyMgmt, Mitigation]),
        ("Secure Network Access", _) => ("rogue_join", &[KeyMgmt, AuthN]),
        ("Secure Storage", _) => ("storage_read", &[KeyMgmt, AccessControl]),
        ("Tamper Resistance", _) => ("storage_tamper", &[KeyMgmt, AccessControl]),
        ("User Identification and Identity Management", _) => ("impostor", &[KeyMgmt, AuthN]),
        _ => return None,
    })
}

fn plan_for(threat: &'static str, module: Module, flagged: bool) -> Result<CellPlan, (&'static str, Module)> {
    let (scenario, base) = scenario_for(threat, module).ok_or((threat, module))?;
    Ok(CellPlan {
        threat,
        module,
        scenario,
        base: ModuleSet::of(base),
        mode: if module == Module::Mitigation {
            CellMode::Detect
        } else {
            CellMode::Prevent
        },
        flagged,
        audit_check: threat == "Audit Control for IoT",
    })
}

/// Plans for every marked cell followed by the flagged rows. Cells
/// without a paired scenario come back as `Err`.
pub fn plan() -> Vec<Result<CellPlan, (&'static str, Module)>> {
    marked_cells()
        .into_iter()
        .map(|(t, m)| plan_for(t, m, false))
        .chain(FLAGGED.iter().map(|(t, m)| plan_for(t, *m, true)))
        .collect()
}

/// What a cell needs to know about one run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunSummary {
    pub modules: ModuleSet,
    pub kind: AttackKind,
    pub outcome: Outcome,
    pub contained: bool,
    pub window: Tick,
    pub violations: Vec<String>,
    /// Audit records of flows whose source is an attacker.
    pub attacker_flow_records: u64,
}

fn summarize(spec: &ScenarioSpec) -> Result<RunSummary, String> {
    let out = run_scenario(spec).map_err(|e| e.to_string())?;
    let attack = spec.attacks.first().ok_or("scenario has no attack")?;
    let o = out.report.outcomes.first().ok_or("run reported no outcome")?;
    let attackers: Vec<String> = attack.attackers.iter().map(|n| format!("src={n} ")).collect();
    let attacker_flow_records = out
        .audit
        .lines()
        .iter()
        .filter(|l| l.contains(" ev=flow ") && attackers.iter().any(|a| l.contains(a.as_str())))
        .count() as u64;
    Ok(RunSummary {
        modules: spec.modules.clone(),
        kind: attack.kind,
        outcome: o.outcome,
        contained: o.contained,
        window: spec.detector.window,
        violations: out.report.violations,
        attacker_flow_records,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CellStatus {
    Pass,
    Fail(String),
    Unimplemented(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellResult {
    pub threat: &'static str,
    pub module: Module,
    pub flagged: bool,
    pub plan: Option<CellPlan>,
    pub on: Option<RunSummary>,
    pub off: Option<RunSummary>,
    pub status: CellStatus,
}

fn rate_based(kind: AttackKind) -> bool {
    matches!(kind, AttackKind::Dos | AttackKind::Ddos | AttackKind::Scan)
}

/// Verdict for a cell given both runs.
pub fn judge(plan: &CellPlan, on: &RunSummary, off: &RunSummary) -> CellStatus {
    for (label, r) in [("on", on), ("off", off)] {
        if let Some(v) = r.violations.first() {
            return CellStatus::Fail(format!("{label}-run invariant: {v}"));
        }
    }
    match plan.mode {
        CellMode::Prevent => {
            if on.outcome == Outcome::Missed {
                return CellStatus::Fail("attack succeeded with the module on".into());
            }
            if off.outcome != Outcome::Missed {
                return CellStatus::Fail(format!("off-run was {}, not missed", off.outcome));
            }
        }
        CellMode::Detect => {
            let Outcome::Detected { latency } = on.outcome else {
                return CellStatus::Fail(format!("on-run was {}, not detected", on.outcome));
            };
            if rate_based(on.kind) && latency > 2 * on.window {
                return CellStatus::Fail(format!("latency {latency} exceeds two windows"));
            }
            if !on.contained {
                return CellStatus::Fail("no countermeasure contained the attack".into());
            }
            if off.outcome.is_detected() || off.contained {
                return CellStatus::Fail("off-run still detected or contained the attack".into());
            }
        }
    }
    if plan.audit_check && on.attacker_flow_records == 0 {
        return CellStatus::Fail("attacker traffic missing from the audit trail".into());
    }
    CellStatus::Pass
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grid {
    pub cells: Vec<CellResult>,
}

impl Grid {
    pub fn passed(&self) -> usize {
        self.cells.iter().filter(|c| c.status == CellStatus::Pass).count()
    }

    /// True when every cell passed. Unimplemented cells count as failures.
    pub fn all_pass(&self) -> bool {
        self.passed() == self.cells.len()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<44} {:<11} {:<21} {:<8} {:<22} {:<22} result",
            "threat", "module", "scenario", "mode", "on", "off"
        );
        for c in &self.cells {
            let run = |r: &Option<RunSummary>| r.as_ref().map_or("-".to_string(), |r| r.outcome.to_string());
            let threat = if c.flagged {
                format!("{} (flagged)", c.threat)
            } else {
                c.threat.to_string()
            };
            let (scenario, mode) = c
                .plan
                .as_ref()
                .map_or(("-", "-"), |p| (p.scenario, p.mode.name()));
            let result = match &c.status {
                CellStatus::Pass => "pass".to_string(),
                CellStatus::Fail(why) => format!("FAIL {why}"),
                CellStatus::Unimplemented(why) => format!("UNIMPLEMENTED {why}"),
            };
            let _ = writeln!(
                s,
                "{:<44} {:<11} {:<21} {:<8} {:<22} {:<22} {}",
                threat,
                c.module.name(),
                scenario,
                mode,
                run(&c.on),
                run(&c.off),
                result
            );
        }
        let _ = writeln!(s, "\n{} of {} cells pass", self.passed(), self.cells.len());
        let _ = writeln!(
            s,
            "flagged: the table marks no module for 'Attacks on Availability'; tested against mitigation"
        );
        s
    }
}

/// Runs the grid with scenarios from `lookup`.
pub fn matrix_with<F>(lookup: F) -> Grid
where
    F: Fn(&str) -> Option<Result<ScenarioSpec, ScenarioError>> + Sync,
{
    let plans = plan();
    let mut runs: BTreeMap<(&'static str, String), ScenarioSpec> = BTreeMap::new();
    let mut missing: BTreeMap<&'static str, String> = BTreeMap::new();
    for p in plans.iter().flatten() {
        match lookup(p.scenario) {
            Some(Ok(spec)) => {
                for mods in [p.base.clone(), p.base.without(p.module)] {
                    runs.entry((p.scenario, mods.to_string()))
                        .or_insert_with(|| spec.clone().with_modules(mods));
                }
            }
            Some(Err(e)) => {
                missing.insert(p.scenario, format!("scenario '{}' does not parse: {e}", p.scenario));
            }
            None => {
                missing.insert(p.scenario, format!("no scenario '{}'", p.scenario));
            }
        }
    }
    let done: BTreeMap<(&'static str, String), Result<RunSummary, String>> = runs
        .into_par_iter()
        .map(|(k, spec)| (k, summarize(&spec)))
        .collect();
    let cells = plans
        .into_iter()
        .map(|p| {
            let p = match p {
                Ok(p) => p,
                Err((threat, module)) => {
                    return CellResult {
                        threat,
                        module,
                        flagged: false,
                        plan: None,
                        on: None,
                        off: None,
                        status: CellStatus::Unimplemented("no paired scenario".into()),
                    }
                }
            };
            let mut cell = CellResult {
                threat: p.threat,
                module: p.module,
                flagged: p.flagged,
                plan: Some(p.clone()),
                on: None,
                off: None,
                status: CellStatus::Pass,
            };
            if let Some(why) = missing.get(p.scenario) {
                cell.status = CellStatus::Unimplemented(why.clone());
                return cell;
            }
            let get = |m: &ModuleSet| done[&(p.scenario, m.to_string())].clone();
            match (get(&p.base), get(&p.base.without(p.module))) {
                (Ok(on), Ok(off)) => {
                    cell.status = judge(&p, &on, &off);
                    log::info!("{} / {}: {:?}", p.threat, p.module.name(), cell.status);
                    cell.on = Some(on);
                    cell.off = Some(off);
                }
                (Err(e), _) | (_, Err(e)) => cell.status = CellStatus::Fail(format!("run failed: {e}")),
            }
            cell
        })
        .collect();
    Grid { cells }
}

/// Runs the grid over the bundled scenario library.
pub fn matrix_suite() -> Grid {
    matrix_with(library_scenario)
}
