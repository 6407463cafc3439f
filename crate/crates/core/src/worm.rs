//! Worm families and the infection engine.
//!
//! A family is a parameterized behavior: an invariant byte region every
//! instance carries, a mutable region re-randomized per infection when the
//! family is polymorphic, an optional pre-send existence check, a memory
//! dormancy period before disk writes, and a scan strategy. Infection
//! attempts are routed through the topology's isolation rule; nothing here
//! can cross a port group.

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{fnv1a, mix64, GroupId, Tick, VmId};
use crate::guest::ChangeKind;
use crate::world::World;

/// How a worm discovers victims.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanStrategy {
    /// Try every port-group peer of the infected host.
    SweepPortGroup,
    /// Try only peers found in the infected host's address book.
    AddressHarvest,
}

/// A worm family's behavior parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WormSpec {
    pub family_id: String,
    /// Byte region preserved across every instance of the family.
    pub invariant_region: String,
    /// Length of the per-infection mutable region.
    pub mutable_region_len: u64,
    pub polymorphic: bool,
    /// Probe whether the target already runs this family before sending code.
    pub checks_existence: bool,
    /// Ticks an infection stays memory-only before touching the disk.
    pub dormancy_ticks: u64,
    pub scan_strategy: ScanStrategy,
    /// Sectors written when the infection goes active on disk.
    pub disk_write_sectors: u64,
    /// Name the infection registers in the guest process table.
    pub process_name: String,
    /// Register as an unlinked (hidden) process.
    pub hidden: bool,
}

impl WormSpec {
    pub fn validate(&self) -> Result<()> {
        if self.family_id.is_empty() {
            return Err(Error::scenario("worm with empty family_id"));
        }
        if self.invariant_region.is_empty() {
            return Err(Error::scenario(format!(
                "worm {:?}: invariant_region must be non-empty",
                self.family_id
            )));
        }
        if self.process_name.is_empty() {
            return Err(Error::scenario(format!(
                "worm {:?}: process_name must be non-empty",
                self.family_id
            )));
        }
        Ok(())
    }

    /// Path of the file the infection drops when it goes active.
    pub fn drop_path(&self) -> String {
        format!("/system/{}", self.process_name)
    }
}

/// Concrete payload bytes of one infection instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payload {
    pub bytes: Vec<u8>,
    pub family_id: String,
    pub instance_nonce: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfectionPhase {
    DormantInMemory,
    ActiveOnDisk,
}

/// One live infection on one VM.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfectionState {
    pub vm: VmId,
    pub family_id: String,
    pub payload: Payload,
    pub phase: InfectionPhase,
    pub infected_at: Tick,
}

/// Result of a single infection attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InfectionOutcome {
    /// Target was clean of the family; a fresh instance is now installed.
    Infected(Payload),
    /// Existence check tripped: target already runs the family, no payload sent.
    RefusedExisting,
    /// Source and target share no port group; nothing was delivered.
    BlockedIsolation,
    /// Target already ran the family and the worm sent code anyway; the
    /// resident instance was replaced by a fresh mutation.
    AlreadyOwnFamily,
}

impl InfectionOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            InfectionOutcome::Infected(_) => "infected",
            InfectionOutcome::RefusedExisting => "refused_existing",
            InfectionOutcome::BlockedIsolation => "blocked_isolation",
            InfectionOutcome::AlreadyOwnFamily => "already_own_family",
        }
    }
}

/// One attempt as it appears in the run trace, with both sides'
/// port-group memberships captured at delivery time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InfectionEvent {
    pub tick: Tick,
    pub family: String,
    pub source: VmId,
    pub target: VmId,
    pub outcome_label: &'static str,
    pub source_groups: Vec<GroupId>,
    pub target_groups: Vec<GroupId>,
}

/// Produces the payload bytes for one infection. The mutable region is a
/// pure function of the seed; non-polymorphic families always emit the
/// canonical payload.
pub fn mutate_payload(spec: &WormSpec, rng_seed: u64) -> Payload {
    let len = spec.mutable_region_len as usize;
    let mutable = if spec.polymorphic {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut buf = vec![0u8; len];
        rng.fill_bytes(&mut buf);
        buf
    } else {
        vec![0u8; len]
    };
    // Layout: first half of the mutable region, invariant core, second half.
    let split = len / 2;
    let mut bytes = Vec::with_capacity(len + spec.invariant_region.len());
    bytes.extend_from_slice(&mutable[..split]);
    bytes.extend_from_slice(spec.invariant_region.as_bytes());
    bytes.extend_from_slice(&mutable[split..]);
    Payload {
        bytes,
        family_id: spec.family_id.clone(),
        instance_nonce: rng_seed,
    }
}

/// Victim candidates for one infected source, in VM-id order.
pub fn select_targets(world: &World, spec: &WormSpec, source: VmId) -> Vec<VmId> {
    let peers = world.topology.peers_of(source);
    match spec.scan_strategy {
        ScanStrategy::SweepPortGroup => peers,
        ScanStrategy::AddressHarvest => {
            let book = world.address_books.get(&source);
            peers
                .into_iter()
                .filter(|vm| book.is_some_and(|b| b.contains(vm)))
                .collect()
        }
    }
}

/// Installs a fresh instance of `family` on `target`, replacing any
/// resident instance of the same family. Used both by infection delivery
/// and by scenario seeding of initially infected VMs.
pub fn install_infection(
    world: &mut World,
    family: &str,
    target: VmId,
    tick: Tick,
    rng_seed: u64,
) -> Result<Payload> {
    let spec = world
        .worms
        .get(family)
        .ok_or_else(|| Error::UnknownFamily(family.to_string()))?
        .clone();
    let payload = mutate_payload(&spec, rng_seed);
    let guest = world.guest_mut(target)?;
    guest.install_process(
        &spec.process_name,
        spec.hidden,
        family,
        payload.bytes.clone(),
    );
    guest.infections.insert(
        family.to_string(),
        InfectionState {
            vm: target,
            family_id: family.to_string(),
            payload: payload.clone(),
            phase: InfectionPhase::DormantInMemory,
            infected_at: tick,
        },
    );
    if spec.dormancy_ticks == 0 {
        activate_on_disk(world, target, family)?;
    }
    Ok(payload)
}

/// Transitions an infection to the on-disk phase: writes the family's
/// sector region and drops its file.
fn activate_on_disk(world: &mut World, vm: VmId, family: &str) -> Result<()> {
    let spec = world
        .worms
        .get(family)
        .ok_or_else(|| Error::UnknownFamily(family.to_string()))?
        .clone();
    let guest = world.guest_mut(vm)?;
    let infection = guest
        .infections
        .get_mut(family)
        .ok_or_else(|| Error::UnknownFamily(family.to_string()))?;
    infection.phase = InfectionPhase::ActiveOnDisk;
    let nonce = infection.payload.instance_nonce;
    if spec.disk_write_sectors > 0 {
        let total = guest.disk.total_sectors;
        let count = spec.disk_write_sectors.min(total);
        // Fixed region per family so re-infections rewrite the same sectors.
        let base = fnv1a(family.as_bytes()) % (total - count + 1);
        guest.write_sectors(base, count, mix64(&[nonce]));
        let path = spec.drop_path();
        let kind = if guest.file_exists(&path) {
            ChangeKind::Modified
        } else {
            ChangeKind::Created
        };
        guest.record_file_change(&path, kind);
    }
    Ok(())
}

/// Delivers one infection attempt from `source` to `target`.
///
/// Isolation is checked first: without a shared port group nothing is
/// delivered. An existence-checking worm probes the target before sending
/// code; a non-checking worm sends a fresh mutation regardless, replacing
/// any instance of its own family already there.
pub fn attempt_infect(
    world: &mut World,
    family: &str,
    source: VmId,
    target: VmId,
    tick: Tick,
    rng_seed: u64,
) -> Result<InfectionOutcome> {
    let spec = world
        .worms
        .get(family)
        .ok_or_else(|| Error::UnknownFamily(family.to_string()))?
        .clone();
    if !world.topology.can_communicate(source, target)? {
        return Ok(InfectionOutcome::BlockedIsolation);
    }
    let already_owned = world.guest(target)?.infections.contains_key(family);
    if spec.checks_existence && already_owned {
        return Ok(InfectionOutcome::RefusedExisting);
    }
    let payload = install_infection(world, family, target, tick, rng_seed)?;
    if already_owned {
        Ok(InfectionOutcome::AlreadyOwnFamily)
    } else {
        Ok(InfectionOutcome::Infected(payload))
    }
}

/// Advances worm state for one tick: applies due dormant-to-active
/// transitions, then runs every live infection's scan-and-infect pass.
/// Deterministic: sources in VM-id order, families in name order, targets
/// in VM-id order, one attempt per (infection, target) per tick.
pub fn step_worms(world: &mut World, tick: Tick) -> Vec<InfectionEvent> {
    // Phase transitions due this tick.
    let mut due: Vec<(VmId, String)> = Vec::new();
    for (vm, guest) in &world.guests {
        for (family, infection) in &guest.infections {
            if infection.phase == InfectionPhase::DormantInMemory {
                let spec = &world.worms[family];
                if infection.infected_at.0 + spec.dormancy_ticks <= tick.0 {
                    due.push((*vm, family.clone()));
                }
            }
        }
    }
    for (vm, family) in due {
        activate_on_disk(world, vm, &family).expect("activation of live infection");
    }

    // Snapshot the live (source, family) pairs; infections installed during
    // this tick do not propagate until the next one.
    let sources: Vec<(VmId, String)> = world
        .guests
        .iter()
        .flat_map(|(vm, guest)| {
            guest
                .infections
                .keys()
                .map(move |family| (*vm, family.clone()))
        })
        .collect();

    let mut events = Vec::new();
    for (source, family) in sources {
        let spec = world.worms[&family].clone();
        for target in select_targets(world, &spec, source) {
            let seed = mix64(&[
                world.seed,
                fnv1a(family.as_bytes()),
                source.0,
                target.0,
                tick.0,
            ]);
            let outcome = attempt_infect(world, &family, source, target, tick, seed)
                .expect("attempt between existing VMs");
            events.push(InfectionEvent {
                tick,
                family: family.clone(),
                source,
                target,
                outcome_label: outcome.label(),
                source_groups: world.topology.groups_of(source),
                target_groups: world.topology.groups_of(target),
            });
        }
    }
    events
}

/// Counts of live infections per family, for reporting.
pub fn live_infections(world: &World) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for guest in world.guests.values() {
        for family in guest.infections.keys() {
            *counts.entry(family.clone()).or_insert(0) += 1;
        }
    }
    counts
}
