//! Out-of-band guest inspection: baseline profiles, anomaly checking, and
//! payload extraction.
//!
//! Checking compares a memory snapshot against the template's baseline and
//! nothing else — it never consults worm state, so a process that manages
//! to look like the baseline would genuinely evade it. Reports go stale
//! the moment the VM is restored.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guest::{FileChange, GuestVm, MemorySnapshot, TemplateSpec, VmSnapshotRef};
use crate::ids::{Tick, VmId};
use crate::worm::Payload;

/// What a template's guests look like when healthy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineProfile {
    pub template: String,
    pub known_processes: BTreeSet<String>,
    pub known_modules: BTreeMap<String, BTreeSet<String>>,
}

pub fn build_baseline(template: &TemplateSpec) -> BaselineProfile {
    let mut known_processes = BTreeSet::new();
    let mut known_modules = BTreeMap::new();
    for p in &template.baseline_processes {
        known_processes.insert(p.name.clone());
        known_modules.insert(p.name.clone(), p.modules.iter().cloned().collect());
    }
    BaselineProfile {
        template: template.name.clone(),
        known_processes,
        known_modules,
    }
}

/// Everything a check found wrong with one snapshot, plus disk evidence
/// attached afterwards.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub vm: VmId,
    pub tick: Tick,
    /// Process names seen running or terminated that the baseline lacks.
    pub unknown_processes: Vec<String>,
    /// `(process, module)` pairs where a known process carries an unlisted module.
    pub unknown_modules: Vec<(String, String)>,
    /// Processes present in the table but unlinked from the running list.
    pub hidden_processes: Vec<String>,
    /// Disjoint `[start, len)` sector ranges written since the comparison snapshot.
    pub changed_disk_areas: Vec<(u64, u64)>,
    pub changed_files: Vec<FileChange>,
    #[serde(skip)]
    pub restore_epoch: u64,
}

impl AnomalyReport {
    pub fn is_clean(&self) -> bool {
        self.unknown_processes.is_empty()
            && self.unknown_modules.is_empty()
            && self.hidden_processes.is_empty()
            && self.changed_disk_areas.is_empty()
            && self.changed_files.is_empty()
    }
}

/// Compares one memory snapshot against a baseline. Pure: the result is a
/// function of the two arguments alone.
pub fn check(snapshot: &MemorySnapshot, baseline: &BaselineProfile) -> AnomalyReport {
    let mut unknown: BTreeSet<String> = BTreeSet::new();
    for name in snapshot
        .running_list
        .iter()
        .chain(snapshot.terminated_list.iter())
    {
        if !baseline.known_processes.contains(name) {
            unknown.insert(name.clone());
        }
    }
    let mut unknown_modules = Vec::new();
    for (process, modules) in &snapshot.modules_by_process {
        if !baseline.known_processes.contains(process) {
            continue;
        }
        let known = baseline.known_modules.get(process);
        for module in modules {
            if !known.is_some_and(|k| k.contains(module)) {
                unknown_modules.push((process.clone(), module.clone()));
            }
        }
    }
    AnomalyReport {
        vm: snapshot.vm,
        tick: snapshot.tick,
        unknown_processes: unknown.into_iter().collect(),
        unknown_modules,
        hidden_processes: snapshot.hidden_list.clone(),
        changed_disk_areas: Vec::new(),
        changed_files: Vec::new(),
        restore_epoch: snapshot.restore_epoch,
    }
}

/// Fills in the disk side of a report from the VM's redo log, relative to
/// the given snapshot. Fails if the VM was restored after the report's
/// memory snapshot was taken.
pub fn attach_disk_evidence(
    report: &mut AnomalyReport,
    guest: &GuestVm,
    since: &VmSnapshotRef,
) -> Result<()> {
    ensure_fresh(report, guest)?;
    report.changed_disk_areas = guest.query_changed_disk_areas(since)?;
    report.changed_files = guest.list_changed_files(since)?;
    Ok(())
}

/// Pulls the payload bytes of every process the report flagged, straight
/// from the (paused) guest's memory. Family order; one payload per live
/// infection whose process name is in the report.
pub fn extract_payloads(guest: &GuestVm, report: &AnomalyReport) -> Result<Vec<Payload>> {
    ensure_fresh(report, guest)?;
    let flagged: BTreeSet<&String> = report
        .unknown_processes
        .iter()
        .chain(report.hidden_processes.iter())
        .collect();
    let mut payloads = Vec::new();
    for infection in guest.infections.values() {
        let owns = guest
            .memory
            .running
            .iter()
            .find(|p| p.owner_family.as_deref() == Some(infection.family_id.as_str()));
        if let Some(entry) = owns {
            if flagged.contains(&entry.name) {
                payloads.push(infection.payload.clone());
            }
        }
    }
    Ok(payloads)
}

fn ensure_fresh(report: &AnomalyReport, guest: &GuestVm) -> Result<()> {
    if report.vm != guest.vm || report.restore_epoch != guest.restore_epoch {
        return Err(Error::StaleReport { vm: guest.vm });
    }
    Ok(())
}
