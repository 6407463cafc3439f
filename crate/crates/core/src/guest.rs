//! Simulated guest state: process/module tables, a sparse sector-addressed
//! disk with a redo log of changed sectors, and restorable snapshots.
//!
//! The disk follows the independent non-persistent model: a read-only base
//! image plus a log of every sector written since instantiation. We never
//! store sector payload bytes, only a content fingerprint per sector; the
//! redo size and changed-area queries are what downstream consumers read.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{SnapshotId, Tick, VmId};
use crate::worm::InfectionState;

/// Fixed sector size in bytes.
pub const SECTOR_SIZE: u64 = 512;

/// Bytes per GB of configured disk (binary gigabytes).
pub const BYTES_PER_GB: u64 = 1 << 30;

/// Sector count for a disk of `disk_gb` gigabytes.
pub fn total_sectors(disk_gb: u64) -> u64 {
    disk_gb * BYTES_PER_GB / SECTOR_SIZE
}

/// One process seeded by a template's clean install.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineProcess {
    pub name: String,
    pub modules: Vec<String>,
}

/// A honeypot VM template: hardware sizing, the software subset it carries
/// as lure, and the processes a clean instance runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub name: String,
    pub os_label: String,
    pub ram_mb: u64,
    pub disk_gb: u64,
    pub processors: u32,
    #[serde(default)]
    pub software_set: BTreeSet<String>,
    #[serde(default)]
    pub baseline_processes: Vec<BaselineProcess>,
}

impl TemplateSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::scenario("template with empty name"));
        }
        if self.ram_mb == 0 || self.disk_gb == 0 {
            return Err(Error::scenario(format!(
                "template {:?}: ram_mb and disk_gb must be positive",
                self.name
            )));
        }
        if self.processors == 0 {
            return Err(Error::scenario(format!(
                "template {:?}: processors must be >= 1",
                self.name
            )));
        }
        Ok(())
    }
}

/// An entry in the guest process table. Hidden entries are present in the
/// full table but excluded from the linked running-list view, the way an
/// unlinked process hides from in-guest tools.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessEntry {
    pub name: String,
    pub modules: Vec<String>,
    pub hidden: bool,
    pub owner_family: Option<String>,
    pub payload_bytes: Option<Vec<u8>>,
}

/// Guest memory as the introspection layer sees it: the full process table
/// plus previously terminated processes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuestMemory {
    /// Full table of live processes, hidden ones included.
    pub running: Vec<ProcessEntry>,
    pub terminated: Vec<ProcessEntry>,
}

impl GuestMemory {
    /// The linked view: what an in-guest process lister would show.
    pub fn linked_running(&self) -> impl Iterator<Item = &ProcessEntry> {
        self.running.iter().filter(|p| !p.hidden)
    }

    pub fn hidden(&self) -> impl Iterator<Item = &ProcessEntry> {
        self.running.iter().filter(|p| p.hidden)
    }

    /// Live entry owned by the given worm family, if any.
    pub fn process_of_family(&self, family: &str) -> Option<&ProcessEntry> {
        self.running
            .iter()
            .find(|p| p.owner_family.as_deref() == Some(family))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    Modified,
    Created,
    Added,
    Deleted,
}

impl std::fmt::Display for ChangeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ChangeKind::Modified => "modified",
            ChangeKind::Created => "created",
            ChangeKind::Added => "added",
            ChangeKind::Deleted => "deleted",
        };
        f.write_str(s)
    }
}

/// One recorded file-level change. The full event history is preserved;
/// nothing is collapsed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileChange {
    pub path: String,
    pub kind: ChangeKind,
    /// Disk event sequence at which the change was recorded.
    pub seq: u64,
}

/// One contiguous run of sectors written by a single disk event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectorRun {
    pub start: u64,
    pub len: u64,
    /// Disk event sequence of the write that produced this run.
    pub seq: u64,
    /// Fingerprint of the written content.
    pub tag: u64,
}

/// The change log of an independent non-persistent disk: only sectors
/// written since the base image, plus the file-level event history.
/// Changed sectors are kept as disjoint start-sorted runs, so rewriting
/// the same region stays cheap no matter how large it is.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedoLog {
    pub runs: Vec<SectorRun>,
    pub file_changes: Vec<FileChange>,
    /// Monotonic counter over disk events; snapshots pin it to answer
    /// changed-since queries.
    pub seq: u64,
}

impl RedoLog {
    pub fn changed_sectors(&self) -> u64 {
        self.runs.iter().map(|r| r.len).sum()
    }

    pub fn size_bytes(&self) -> u64 {
        self.changed_sectors() * SECTOR_SIZE
    }
}

/// Sparse guest disk: base image identity plus the redo log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuestDisk {
    pub base_image_id: String,
    pub total_sectors: u64,
    pub redo: RedoLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotKind {
    Pristine,
    Periodic,
}

/// Handle to a stored point-in-time snapshot of one VM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VmSnapshotRef {
    pub id: SnapshotId,
    pub vm: VmId,
    pub tick: Tick,
    pub kind: SnapshotKind,
}

/// Out-of-band view of guest memory at an instant. Immutable once captured.
/// Carries no worm-family labels or payload bytes: the text form is exactly
/// what the checker is allowed to see.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemorySnapshot {
    pub vm: VmId,
    pub tick: Tick,
    pub template: String,
    pub running_list: Vec<String>,
    pub terminated_list: Vec<String>,
    pub hidden_list: Vec<String>,
    pub modules_by_process: BTreeMap<String, BTreeSet<String>>,
    /// Restore generation of the VM at capture time; used for staleness
    /// checks, not part of the text form.
    #[serde(skip)]
    pub restore_epoch: u64,
}

impl MemorySnapshot {
    /// Line-delimited text form: `KIND \t process_name \t module_or_empty`,
    /// ordered by kind (RUN, TERM, HIDDEN, MOD), then name, then module.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for name in &self.running_list {
            out.push_str(&format!("RUN\t{name}\t\n"));
        }
        for name in &self.terminated_list {
            out.push_str(&format!("TERM\t{name}\t\n"));
        }
        for name in &self.hidden_list {
            out.push_str(&format!("HIDDEN\t{name}\t\n"));
        }
        for (name, modules) in &self.modules_by_process {
            for module in modules {
                out.push_str(&format!("MOD\t{name}\t{module}\n"));
            }
        }
        out
    }
}

/// Full restorable snapshot payload kept inside the VM.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredSnapshot {
    meta: VmSnapshotRef,
    memory: GuestMemory,
    redo: RedoLog,
    infections: BTreeMap<String, InfectionState>,
}

/// A simulated VM: process tables, disk, infections, and snapshot store.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuestVm {
    pub vm: VmId,
    pub template: String,
    pub created_at: Tick,
    pub memory: GuestMemory,
    pub disk: GuestDisk,
    /// Live infections keyed by worm family.
    pub infections: BTreeMap<String, InfectionState>,
    /// Bumped on every restore; snapshots and reports taken before a
    /// restore are stale afterwards.
    pub restore_epoch: u64,
    snapshots: Vec<StoredSnapshot>,
    next_snapshot: u64,
}

impl GuestVm {
    /// Builds a VM from a template: baseline processes seeded, redo log
    /// empty, pristine snapshot taken at the creation tick.
    pub fn instantiate_from_template(vm: VmId, template: &TemplateSpec, tick: Tick) -> Self {
        let running = template
            .baseline_processes
            .iter()
            .map(|p| ProcessEntry {
                name: p.name.clone(),
                modules: p.modules.clone(),
                hidden: false,
                owner_family: None,
                payload_bytes: None,
            })
            .collect();
        let mut guest = GuestVm {
            vm,
            template: template.name.clone(),
            created_at: tick,
            memory: GuestMemory {
                running,
                terminated: Vec::new(),
            },
            disk: GuestDisk {
                base_image_id: template.name.clone(),
                total_sectors: total_sectors(template.disk_gb),
                redo: RedoLog::default(),
            },
            infections: BTreeMap::new(),
            restore_epoch: 0,
            snapshots: Vec::new(),
            next_snapshot: 0,
        };
        guest.take_full_snapshot(tick, SnapshotKind::Pristine);
        guest
    }

    /// The pristine snapshot taken at instantiation.
    pub fn pristine_ref(&self) -> VmSnapshotRef {
        self.snapshots[0].meta
    }

    pub fn snapshot_refs(&self) -> Vec<VmSnapshotRef> {
        self.snapshots.iter().map(|s| s.meta).collect()
    }

    /// Stores a full restorable snapshot and returns its handle.
    pub fn take_full_snapshot(&mut self, tick: Tick, kind: SnapshotKind) -> VmSnapshotRef {
        self.next_snapshot += 1;
        let meta = VmSnapshotRef {
            id: SnapshotId(self.next_snapshot),
            vm: self.vm,
            tick,
            kind,
        };
        self.snapshots.push(StoredSnapshot {
            meta,
            memory: self.memory.clone(),
            redo: self.disk.redo.clone(),
            infections: self.infections.clone(),
        });
        meta
    }

    /// Captures the out-of-band memory view: linked running list,
    /// terminated list, hidden list, and per-process module sets.
    pub fn take_memory_snapshot(&self, tick: Tick) -> MemorySnapshot {
        let mut running_list: Vec<String> = self
            .memory
            .linked_running()
            .map(|p| p.name.clone())
            .collect();
        running_list.sort();
        let mut terminated_list: Vec<String> = self
            .memory
            .terminated
            .iter()
            .map(|p| p.name.clone())
            .collect();
        terminated_list.sort();
        let mut hidden_list: Vec<String> =
            self.memory.hidden().map(|p| p.name.clone()).collect();
        hidden_list.sort();
        // Module lists cover running processes, hidden ones included: the
        // out-of-band view walks the full table.
        let mut modules_by_process: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for p in &self.memory.running {
            modules_by_process
                .entry(p.name.clone())
                .or_default()
                .extend(p.modules.iter().cloned());
        }
        MemorySnapshot {
            vm: self.vm,
            tick,
            template: self.template.clone(),
            running_list,
            terminated_list,
            hidden_list,
            modules_by_process,
            restore_epoch: self.restore_epoch,
        }
    }

    fn stored(&self, reference: &VmSnapshotRef) -> Result<&StoredSnapshot> {
        if reference.vm != self.vm {
            return Err(Error::ForeignSnapshot {
                snapshot: reference.id,
                vm: self.vm,
            });
        }
        self.snapshots
            .iter()
            .find(|s| s.meta.id == reference.id)
            .ok_or(Error::ForeignSnapshot {
                snapshot: reference.id,
                vm: self.vm,
            })
    }

    /// Minimal sorted list of disjoint `[start, len)` sector ranges written
    /// since the referenced snapshot.
    pub fn query_changed_disk_areas(&self, since: &VmSnapshotRef) -> Result<Vec<(u64, u64)>> {
        let base_seq = self.stored(since)?.redo.seq;
        let mut ranges: Vec<(u64, u64)> = Vec::new();
        for run in &self.disk.redo.runs {
            if run.seq <= base_seq {
                continue;
            }
            match ranges.last_mut() {
                Some((start, len)) if *start + *len == run.start => *len += run.len,
                _ => ranges.push((run.start, run.len)),
            }
        }
        Ok(ranges)
    }

    /// File-change events recorded since the referenced snapshot, ordered
    /// by path and then by event order.
    pub fn list_changed_files(&self, since: &VmSnapshotRef) -> Result<Vec<FileChange>> {
        let base_seq = self.stored(since)?.redo.seq;
        let mut changes: Vec<FileChange> = self
            .disk
            .redo
            .file_changes
            .iter()
            .filter(|c| c.seq > base_seq)
            .cloned()
            .collect();
        changes.sort_by(|a, b| a.path.cmp(&b.path).then(a.seq.cmp(&b.seq)));
        Ok(changes)
    }

    /// Reverts memory, disk, and infection state to the referenced
    /// snapshot. Snapshot handles stay valid; the restore epoch advances.
    pub fn restore_to_snapshot(&mut self, reference: &VmSnapshotRef) -> Result<()> {
        let stored = self.stored(reference)?;
        let memory = stored.memory.clone();
        let redo = stored.redo.clone();
        let infections = stored.infections.clone();
        self.memory = memory;
        self.disk.redo = redo;
        self.infections = infections;
        self.restore_epoch += 1;
        Ok(())
    }

    /// Exact redo size: changed sector count times the sector size.
    pub fn redo_log_size(&self) -> u64 {
        self.disk.redo.size_bytes()
    }

    /// Marks `count` sectors starting at `start` as written with the given
    /// content fingerprint. Sectors beyond the disk end are ignored.
    pub fn write_sectors(&mut self, start: u64, count: u64, tag: u64) {
        let end = start.saturating_add(count).min(self.disk.total_sectors);
        let start = start.min(self.disk.total_sectors);
        if start >= end {
            return;
        }
        self.disk.redo.seq += 1;
        let seq = self.disk.redo.seq;
        let mut runs = Vec::with_capacity(self.disk.redo.runs.len() + 2);
        for run in &self.disk.redo.runs {
            let run_end = run.start + run.len;
            if run_end <= start || run.start >= end {
                runs.push(*run);
                continue;
            }
            // Keep only the remnants of a run the new write partially covers.
            if run.start < start {
                runs.push(SectorRun {
                    start: run.start,
                    len: start - run.start,
                    seq: run.seq,
                    tag: run.tag,
                });
            }
            if run_end > end {
                runs.push(SectorRun {
                    start: end,
                    len: run_end - end,
                    seq: run.seq,
                    tag: run.tag,
                });
            }
        }
        runs.push(SectorRun {
            start,
            len: end - start,
            seq,
            tag,
        });
        runs.sort_unstable_by_key(|r| r.start);
        self.disk.redo.runs = runs;
    }

    /// Appends a file-level change event.
    pub fn record_file_change(&mut self, path: &str, kind: ChangeKind) {
        self.disk.redo.seq += 1;
        self.disk.redo.file_changes.push(FileChange {
            path: path.to_string(),
            kind,
            seq: self.disk.redo.seq,
        });
    }

    /// Whether the path currently exists according to the file event log.
    pub fn file_exists(&self, path: &str) -> bool {
        self.disk
            .redo
            .file_changes
            .iter()
            .rev()
            .find(|c| c.path == path)
            .map(|c| !matches!(c.kind, ChangeKind::Deleted))
            .unwrap_or(false)
    }

    /// Installs or replaces the process entry owned by a worm family.
    pub fn install_process(
        &mut self,
        name: &str,
        hidden: bool,
        family: &str,
        payload_bytes: Vec<u8>,
    ) {
        let entry = ProcessEntry {
            name: name.to_string(),
            modules: Vec::new(),
            hidden,
            owner_family: Some(family.to_string()),
            payload_bytes: Some(payload_bytes),
        };
        if let Some(existing) = self
            .memory
            .running
            .iter_mut()
            .find(|p| p.owner_family.as_deref() == Some(family))
        {
            *existing = entry;
        } else {
            self.memory.running.push(entry);
        }
    }

    /// Loads a module into an existing process, if present.
    pub fn inject_module(&mut self, process: &str, module: &str) -> bool {
        if let Some(entry) = self
            .memory
            .running
            .iter_mut()
            .find(|p| p.name == process)
        {
            if !entry.modules.iter().any(|m| m == module) {
                entry.modules.push(module.to_string());
            }
            true
        } else {
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xp_template() -> TemplateSpec {
        TemplateSpec {
            name: "windows-xp-professional".into(),
            os_label: "Windows Xp professional".into(),
            ram_mb: 512,
            disk_gb: 5,
            processors: 1,
            software_set: ["iis".into()].into(),
            baseline_processes: vec![
                BaselineProcess {
                    name: "System".into(),
                    modules: vec!["ntoskrnl.exe".into()],
                },
                BaselineProcess {
                    name: "lsass.exe".into(),
                    modules: vec!["ntdll.dll".into(), "kernel32.dll".into()],
                },
            ],
        }
    }

    #[test]
    fn xp_disk_has_expected_sector_count() {
        // 5 GB at 2^30 bytes/GB over 512-byte sectors.
        let guest = GuestVm::instantiate_from_template(VmId(1), &xp_template(), Tick(0));
        assert_eq!(guest.disk.total_sectors, 10_485_760);
    }

    #[test]
    fn instantiation_seeds_baseline_and_empty_redo() {
        let guest = GuestVm::instantiate_from_template(VmId(1), &xp_template(), Tick(0));
        let snap = guest.take_memory_snapshot(Tick(0));
        assert_eq!(snap.running_list, vec!["System", "lsass.exe"]);
        assert!(snap.hidden_list.is_empty());
        assert_eq!(guest.redo_log_size(), 0);
    }

    #[test]
    fn identical_templates_produce_identical_snapshots() {
        let a = GuestVm::instantiate_from_template(VmId(1), &xp_template(), Tick(0));
        let b = GuestVm::instantiate_from_template(VmId(2), &xp_template(), Tick(0));
        assert_eq!(
            a.take_memory_snapshot(Tick(0)).to_text(),
            b.take_memory_snapshot(Tick(0)).to_text()
        );
    }

    #[test]
    fn hidden_process_absent_from_running_present_in_hidden() {
        let mut guest = GuestVm::instantiate_from_template(VmId(1), &xp_template(), Tick(0));
        guest.install_process("wx.exe", true, "fam", b"payload".to_vec());
        let snap = guest.take_memory_snapshot(Tick(1));
        assert!(!snap.running_list.contains(&"wx.exe".to_string()));
        assert_eq!(snap.hidden_list, vec!["wx.exe"]);
    }

    #[test]
    fn snapshots_are_immutable_values() {
        let mut guest = GuestVm::instantiate_from_template(VmId(1), &xp_template(), Tick(0));
        let before = guest.take_memory_snapshot(Tick(0));
        let frozen = before.to_text();
        guest.install_process("wx.exe", false, "fam", b"p".to_vec());
        assert_eq!(before.to_text(), frozen);
        // And repeated capture without events is stable.
        let s1 = guest.take_memory_snapshot(Tick(2));
        let s2 = guest.take_memory_snapshot(Tick(3));
        assert_eq!(s1.to_text(), s2.to_text());
    }

    #[test]
    fn text_form_kind_then_name_then_module() {
        let guest = GuestVm::instantiate_from_template(VmId(1), &xp_template(), Tick(0));
        let text = guest.take_memory_snapshot(Tick(0)).to_text();
        let expected = "RUN\tSystem\t\nRUN\tlsass.exe\t\nMOD\tSystem\tntoskrnl.exe\nMOD\tlsass.exe\tkernel32.dll\nMOD\tlsass.exe\tntdll.dll\n";
        assert_eq!(text, expected);
    }

    #[test]
    fn changed_areas_merge_into_minimal_ranges() {
        let mut guest = GuestVm::instantiate_from_template(VmId(1), &xp_template(), Tick(0));
        let pristine = guest.pristine_ref();
        assert!(guest.query_changed_disk_areas(&pristine).unwrap().is_empty());

        guest.write_sectors(10, 1, 7);
        guest.write_sectors(11, 2, 7);
        guest.write_sectors(40, 1, 7);
        assert_eq!(
            guest.query_changed_disk_areas(&pristine).unwrap(),
            vec![(10, 3), (40, 1)]
        );
    }

    #[test]
    fn changed_areas_match_interval_merge_oracle() {
        // Oracle: collect written sectors in a set, then merge by scanning.
        let mut guest = GuestVm::instantiate_from_template(VmId(1), &xp_template(), Tick(0));
        let pristine = guest.pristine_ref();
        let mut written = BTreeSet::new();
        let mut state = 0x1234_5678_u64;
        for _ in 0..200 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let start = state % 500;
            let len = 1 + (state >> 32) % 8;
            guest.write_sectors(start, len, 1);
            for s in start..(start + len) {
                written.insert(s);
            }
        }
        let mut oracle: Vec<(u64, u64)> = Vec::new();
        for &s in &written {
            match oracle.last_mut() {
                Some((start, len)) if *start + *len == s => *len += 1,
                _ => oracle.push((s, 1)),
            }
        }
        assert_eq!(guest.query_changed_disk_areas(&pristine).unwrap(), oracle);
    }

    #[test]
    fn full_infection_write_covers_expected_sectors() {
        let mut guest = GuestVm::instantiate_from_template(VmId(1), &xp_template(), Tick(0));
        let pristine = guest.pristine_ref();
        guest.write_sectors(1000, 81_920, 9);
        let total: u64 = guest
            .query_changed_disk_areas(&pristine)
            .unwrap()
            .iter()
            .map(|(_, len)| len)
            .sum();
        assert_eq!(total, 81_920);
        assert_eq!(guest.redo_log_size(), 41_943_040);
    }

    #[test]
    fn file_change_history_is_preserved_in_order() {
        let mut guest = GuestVm::instantiate_from_template(VmId(1), &xp_template(), Tick(0));
        let pristine = guest.pristine_ref();
        assert!(guest.list_changed_files(&pristine).unwrap().is_empty());

        guest.record_file_change("/tmp/drop.bin", ChangeKind::Created);
        guest.record_file_change("/tmp/drop.bin", ChangeKind::Deleted);
        let changes = guest.list_changed_files(&pristine).unwrap();
        assert_eq!(changes.len(), 2);
        assert_eq!(changes[0].kind, ChangeKind::Created);
        assert_eq!(changes[1].kind, ChangeKind::Deleted);
        assert!(!guest.file_exists("/tmp/drop.bin"));
    }

    #[test]
    fn foreign_snapshot_refs_are_rejected() {
        let guest_a = GuestVm::instantiate_from_template(VmId(1), &xp_template(), Tick(0));
        let mut guest_b = GuestVm::instantiate_from_template(VmId(2), &xp_template(), Tick(0));
        let foreign = guest_a.pristine_ref();
        assert!(matches!(
            guest_b.restore_to_snapshot(&foreign),
            Err(Error::ForeignSnapshot { .. })
        ));
        assert!(guest_b.query_changed_disk_areas(&foreign).is_err());
        assert!(guest_b.list_changed_files(&foreign).is_err());
    }

    #[test]
    fn pristine_restore_matches_fresh_instantiation() {
        let mut guest = GuestVm::instantiate_from_template(VmId(1), &xp_template(), Tick(0));
        guest.install_process("wx.exe", false, "fam", b"p".to_vec());
        guest.write_sectors(5, 100, 3);
        guest.record_file_change("/wx", ChangeKind::Created);
        guest.restore_to_snapshot(&guest.pristine_ref()).unwrap();

        let fresh = GuestVm::instantiate_from_template(VmId(9), &xp_template(), Tick(0));
        assert_eq!(
            guest.take_memory_snapshot(Tick(5)).to_text(),
            fresh.take_memory_snapshot(Tick(0)).to_text()
        );
        assert_eq!(guest.redo_log_size(), 0);
        assert!(guest.infections.is_empty());
    }

    #[test]
    fn restore_is_idempotent() {
        let mut guest = GuestVm::instantiate_from_template(VmId(1), &xp_template(), Tick(0));
        guest.write_sectors(5, 10, 3);
        let pristine = guest.pristine_ref();
        guest.restore_to_snapshot(&pristine).unwrap();
        let once = guest.take_memory_snapshot(Tick(1)).to_text();
        let redo_once = guest.disk.redo.clone();
        guest.restore_to_snapshot(&pristine).unwrap();
        assert_eq!(guest.take_memory_snapshot(Tick(2)).to_text(), once);
        assert_eq!(guest.disk.redo, redo_once);
    }

    #[test]
    fn redo_size_is_changed_sectors_times_sector_size() {
        let mut guest = GuestVm::instantiate_from_template(VmId(1), &xp_template(), Tick(0));
        assert_eq!(guest.redo_log_size(), 0);
        guest.write_sectors(0, 81_920, 1);
        assert_eq!(guest.redo_log_size(), 41_943_040);
        // Rewriting the same sectors does not grow the log.
        guest.write_sectors(0, 81_920, 2);
        assert_eq!(guest.redo_log_size(), 41_943_040);
        assert!(guest.redo_log_size() < guest.disk.total_sectors * SECTOR_SIZE);
    }

    #[test]
    fn partial_overwrite_splits_runs_and_queries_only_new_sectors() {
        let mut guest = GuestVm::instantiate_from_template(VmId(1), &xp_template(), Tick(0));
        guest.write_sectors(0, 10, 1);
        let mid = guest.take_full_snapshot(Tick(1), SnapshotKind::Periodic);
        guest.write_sectors(5, 3, 2);
        assert_eq!(guest.disk.redo.changed_sectors(), 10);
        assert_eq!(guest.query_changed_disk_areas(&mid).unwrap(), vec![(5, 3)]);
        // The pristine view still sees one contiguous range.
        let pristine = guest.pristine_ref();
        assert_eq!(
            guest.query_changed_disk_areas(&pristine).unwrap(),
            vec![(0, 10)]
        );
    }

    #[test]
    fn restore_to_periodic_snapshot_reverts_later_writes() {
        let mut guest = GuestVm::instantiate_from_template(VmId(1), &xp_template(), Tick(0));
        guest.write_sectors(1, 4, 1);
        let mid = guest.take_full_snapshot(Tick(3), SnapshotKind::Periodic);
        guest.write_sectors(100, 4, 2);
        assert_eq!(guest.disk.redo.changed_sectors(), 8);
        guest.restore_to_snapshot(&mid).unwrap();
        assert_eq!(guest.disk.redo.changed_sectors(), 4);
        assert!(guest.query_changed_disk_areas(&mid).unwrap().is_empty());
    }
}
