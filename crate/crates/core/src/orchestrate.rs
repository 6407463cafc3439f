//! The introspection controller and the VM-inspector state machines.
//!
//! The controller reconciles the inspector fleet against the live network
//! list every tick: inspector count = ceil(live networks / capacity),
//! networks sorted by id and chunked across inspectors in id order. Each
//! inspector runs one network's honeypot lifecycle at a time:
//!
//! Idle → Probe (h1 on the customer group) → after `dwell_ticks` Paired
//! (h1 detached from the customer group, wired to a fresh pair link with
//! h2 from the same template) → every `snapshot_period_ticks` an iteration
//! boundary: snapshot both, check, extract, record, then restore one
//! honeypot alternately so the still-infected peer re-contaminates it →
//! after `rotation_count` iterations Teardown (collect once more, destroy
//! both, free the pair link) → Idle on the next assigned network.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cloud::GroupKind;
use crate::collection::{CollectionDb, RecordDraft};
use crate::error::{Error, Result};
use crate::ids::{GroupId, InspectorId, NetworkId, Tick, VmId};
use crate::introspect::{attach_disk_evidence, build_baseline, check, extract_payloads};
use crate::world::World;

fn default_dwell() -> u64 {
    20
}
fn default_rotation() -> u64 {
    5
}
fn default_period() -> u64 {
    10
}
fn default_networks_per_inspector() -> u32 {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InspectionPolicy {
    /// Ticks honeypot1 stays on the customer network awaiting infection.
    #[serde(default = "default_dwell")]
    pub dwell_ticks: u64,
    /// Restore iterations per pairing; 0 tears the pair down immediately.
    #[serde(default = "default_rotation")]
    pub rotation_count: u64,
    #[serde(default = "default_period")]
    pub snapshot_period_ticks: u64,
    #[serde(default = "default_networks_per_inspector")]
    pub networks_per_inspector: u32,
}

impl Default for InspectionPolicy {
    fn default() -> Self {
        InspectionPolicy {
            dwell_ticks: default_dwell(),
            rotation_count: default_rotation(),
            snapshot_period_ticks: default_period(),
            networks_per_inspector: default_networks_per_inspector(),
        }
    }
}

impl InspectionPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.dwell_ticks == 0 {
            return Err(Error::scenario("policy.dwell_ticks must be >= 1"));
        }
        if self.snapshot_period_ticks == 0 {
            return Err(Error::scenario("policy.snapshot_period_ticks must be >= 1"));
        }
        if self.networks_per_inspector == 0 {
            return Err(Error::scenario("policy.networks_per_inspector must be >= 1"));
        }
        Ok(())
    }
}

/// Where an inspector is in its current network's lifecycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Phase {
    Idle,
    Probe {
        network: NetworkId,
        h1: VmId,
        template: String,
        entered: Tick,
    },
    Paired {
        network: NetworkId,
        h1: VmId,
        h2: VmId,
        pair_group: GroupId,
        template: String,
        entered: Tick,
        /// Completed iteration boundaries.
        iteration: u64,
    },
    Teardown {
        network: NetworkId,
    },
}

#[derive(Debug, Clone)]
pub struct Inspector {
    pub id: InspectorId,
    /// Sorted network chunk this inspector owns.
    pub assigned: Vec<NetworkId>,
    /// Index into `assigned` of the network under (or next up for) inspection.
    pub cursor: usize,
    pub phase: Phase,
}

impl Inspector {
    pub fn honeypots(&self) -> Vec<VmId> {
        match &self.phase {
            Phase::Idle | Phase::Teardown { .. } => Vec::new(),
            Phase::Probe { h1, .. } => vec![*h1],
            Phase::Paired { h1, h2, .. } => vec![*h1, *h2],
        }
    }

    pub fn current_network(&self) -> Option<NetworkId> {
        match &self.phase {
            Phase::Idle => None,
            Phase::Probe { network, .. }
            | Phase::Paired { network, .. }
            | Phase::Teardown { network } => Some(*network),
        }
    }
}

/// One line of lifecycle history, rendered verbatim into the run log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LifecycleEvent {
    InspectorCreated {
        inspector: InspectorId,
        networks: Vec<NetworkId>,
    },
    InspectorDestroyed {
        inspector: InspectorId,
        destroyed_honeypots: Vec<VmId>,
    },
    AssignmentChanged {
        inspector: InspectorId,
        networks: Vec<NetworkId>,
    },
    ProbeStarted {
        inspector: InspectorId,
        network: NetworkId,
        h1: VmId,
        template: String,
    },
    PairFormed {
        inspector: InspectorId,
        network: NetworkId,
        h1: VmId,
        h2: VmId,
        pair_group: GroupId,
    },
    IterationBoundary {
        inspector: InspectorId,
        network: NetworkId,
        iteration: u64,
    },
    Collected {
        inspector: InspectorId,
        network: NetworkId,
        honeypot: VmId,
        family: String,
        record_id: u64,
    },
    Restored {
        inspector: InspectorId,
        network: NetworkId,
        honeypot: VmId,
        iteration: u64,
    },
    TornDown {
        inspector: InspectorId,
        network: NetworkId,
        honeypots: Vec<VmId>,
        template: String,
        /// Final redo-log size of each honeypot, in `honeypots` order.
        redo_bytes: Vec<u64>,
    },
    Advanced {
        inspector: InspectorId,
        next: Option<NetworkId>,
    },
    Aborted {
        inspector: InspectorId,
        network: NetworkId,
        destroyed_honeypots: Vec<VmId>,
    },
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    if items.is_empty() {
        return "-".to_string();
    }
    items
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl fmt::Display for LifecycleEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LifecycleEvent::InspectorCreated { inspector, networks } => {
                write!(f, "inspector {inspector} created networks={}", join(networks))
            }
            LifecycleEvent::InspectorDestroyed {
                inspector,
                destroyed_honeypots,
            } => write!(
                f,
                "inspector {inspector} destroyed honeypots={}",
                join(destroyed_honeypots)
            ),
            LifecycleEvent::AssignmentChanged { inspector, networks } => {
                write!(f, "inspector {inspector} assigned networks={}", join(networks))
            }
            LifecycleEvent::ProbeStarted {
                inspector,
                network,
                h1,
                template,
            } => write!(
                f,
                "inspector {inspector} probe network={network} h1={h1} template={template}"
            ),
            LifecycleEvent::PairFormed {
                inspector,
                network,
                h1,
                h2,
                pair_group,
            } => write!(
                f,
                "inspector {inspector} paired network={network} h1={h1} h2={h2} pair_group={pair_group}"
            ),
            LifecycleEvent::IterationBoundary {
                inspector,
                network,
                iteration,
            } => write!(
                f,
                "inspector {inspector} boundary network={network} iteration={iteration}"
            ),
            LifecycleEvent::Collected {
                inspector,
                network,
                honeypot,
                family,
                record_id,
            } => write!(
                f,
                "inspector {inspector} collected network={network} honeypot={honeypot} family={family} record={record_id}"
            ),
            LifecycleEvent::Restored {
                inspector,
                network,
                honeypot,
                iteration,
            } => write!(
                f,
                "inspector {inspector} restored network={network} honeypot={honeypot} iteration={iteration}"
            ),
            LifecycleEvent::TornDown {
                inspector,
                network,
                honeypots,
                template,
                redo_bytes,
            } => write!(
                f,
                "inspector {inspector} teardown network={network} honeypots={} template={template} redo_bytes={}",
                join(honeypots),
                redo_bytes
                    .iter()
                    .map(|b| b.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            ),
            LifecycleEvent::Advanced { inspector, next } => match next {
                Some(net) => write!(f, "inspector {inspector} idle next={net}"),
                None => write!(f, "inspector {inspector} idle next=-"),
            },
            LifecycleEvent::Aborted {
                inspector,
                network,
                destroyed_honeypots,
            } => write!(
                f,
                "inspector {inspector} aborted network={network} honeypots={}",
                join(destroyed_honeypots)
            ),
        }
    }
}

#[derive(Debug)]
pub struct Orchestrator {
    pub policy: InspectionPolicy,
    pub inspectors: BTreeMap<InspectorId, Inspector>,
    next_inspector: u64,
}

impl Orchestrator {
    pub fn new(policy: InspectionPolicy) -> Self {
        Orchestrator {
            policy,
            inspectors: BTreeMap::new(),
            next_inspector: 0,
        }
    }

    /// Honeypots alive across the fleet right now.
    pub fn active_honeypot_count(&self) -> usize {
        self.inspectors.values().map(|i| i.honeypots().len()).sum()
    }

    /// Reconciles the inspector fleet against the live networks: destroys
    /// surplus inspectors (highest ids first, tearing down their honeypots),
    /// creates missing ones, and re-chunks network assignments.
    pub fn controller_tick(&mut self, world: &mut World, _tick: Tick) -> Result<Vec<LifecycleEvent>> {
        let mut events = Vec::new();
        let live: Vec<NetworkId> = world.topology.list_networks().iter().map(|n| n.id).collect();
        let per = self.policy.networks_per_inspector as usize;
        let want = live.len().div_ceil(per);

        while self.inspectors.len() > want {
            let id = *self.inspectors.keys().next_back().unwrap();
            let destroyed = self.retire_honeypots(world, id)?;
            self.inspectors.remove(&id);
            events.push(LifecycleEvent::InspectorDestroyed {
                inspector: id,
                destroyed_honeypots: destroyed,
            });
        }

        let mut created = Vec::new();
        while self.inspectors.len() < want {
            self.next_inspector += 1;
            let id = InspectorId(self.next_inspector);
            self.inspectors.insert(
                id,
                Inspector {
                    id,
                    assigned: Vec::new(),
                    cursor: 0,
                    phase: Phase::Idle,
                },
            );
            created.push(id);
        }

        let ids: Vec<InspectorId> = self.inspectors.keys().copied().collect();
        for (j, &id) in ids.iter().enumerate() {
            let chunk: Vec<NetworkId> = live.iter().copied().skip(j * per).take(per).collect();
            let ins = self.inspectors.get_mut(&id).unwrap();
            let changed = ins.assigned != chunk;
            if changed {
                let current = ins.current_network();
                ins.assigned = chunk.clone();
                ins.cursor = match current.and_then(|c| ins.assigned.iter().position(|n| *n == c)) {
                    Some(pos) => pos,
                    None if ins.assigned.is_empty() => 0,
                    None => ins.cursor % ins.assigned.len(),
                };
            }
            if created.contains(&id) {
                events.push(LifecycleEvent::InspectorCreated {
                    inspector: id,
                    networks: chunk,
                });
            } else if changed {
                events.push(LifecycleEvent::AssignmentChanged {
                    inspector: id,
                    networks: chunk,
                });
            }
        }
        Ok(events)
    }

    /// Steps every inspector once, in id order.
    pub fn inspector_step_all(
        &mut self,
        world: &mut World,
        db: &mut CollectionDb,
        tick: Tick,
    ) -> Result<Vec<LifecycleEvent>> {
        let ids: Vec<InspectorId> = self.inspectors.keys().copied().collect();
        let mut events = Vec::new();
        for id in ids {
            events.extend(self.step_one(world, db, tick, id)?);
        }
        Ok(events)
    }

    fn step_one(
        &mut self,
        world: &mut World,
        db: &mut CollectionDb,
        tick: Tick,
        id: InspectorId,
    ) -> Result<Vec<LifecycleEvent>> {
        let mut events = Vec::new();
        let phase = self.inspectors[&id].phase.clone();
        match phase {
            Phase::Idle => {
                let (cursor, assigned) = {
                    let ins = self.inspectors.get_mut(&id).unwrap();
                    if ins.assigned.is_empty() {
                        return Ok(events);
                    }
                    ins.cursor %= ins.assigned.len();
                    (ins.cursor, ins.assigned.clone())
                };
                let network = assigned[cursor];
                if world.topology.network(network).is_err() {
                    // Stale assignment; reconciliation rewrites it next tick.
                    return Ok(events);
                }
                let template = world.template_for_network(network)?.name.clone();
                let h1 = world.create_honeypot(&template, tick)?;
                let group = world.topology.network(network)?.port_group;
                world.topology.attach_vm(h1, group)?;
                self.inspectors.get_mut(&id).unwrap().phase = Phase::Probe {
                    network,
                    h1,
                    template: template.clone(),
                    entered: tick,
                };
                events.push(LifecycleEvent::ProbeStarted {
                    inspector: id,
                    network,
                    h1,
                    template,
                });
            }
            Phase::Probe {
                network,
                h1,
                template,
                entered,
            } => {
                if !self.target_is_live(world, id, network) {
                    events.extend(self.abort(world, id)?);
                    return Ok(events);
                }
                if tick.0 - entered.0 < self.policy.dwell_ticks {
                    return Ok(events);
                }
                // Dwell over: seal h1 off the customer network and wire the pair.
                let customer_group = world.topology.network(network)?.port_group;
                world.topology.detach_vm(h1, customer_group)?;
                let switch = world.topology.group(customer_group)?.switch;
                let pair_group = world.topology.create_port_group(switch, GroupKind::PairLink)?;
                let h2 = world.create_honeypot(&template, tick)?;
                world.topology.attach_vm(h1, pair_group)?;
                world.topology.attach_vm(h2, pair_group)?;
                self.inspectors.get_mut(&id).unwrap().phase = Phase::Paired {
                    network,
                    h1,
                    h2,
                    pair_group,
                    template,
                    entered: tick,
                    iteration: 0,
                };
                events.push(LifecycleEvent::PairFormed {
                    inspector: id,
                    network,
                    h1,
                    h2,
                    pair_group,
                });
                if self.policy.rotation_count == 0 {
                    // Zero iterations: the pair is collected and torn down
                    // in the same tick it formed.
                    events.extend(self.finish_pair(world, db, tick, id)?);
                }
            }
            Phase::Paired {
                network,
                h1,
                h2,
                pair_group: _,
                template,
                entered,
                iteration,
            } => {
                if !self.target_is_live(world, id, network) {
                    events.extend(self.abort(world, id)?);
                    return Ok(events);
                }
                let elapsed = tick.0 - entered.0;
                if elapsed == 0 || elapsed % self.policy.snapshot_period_ticks != 0 {
                    return Ok(events);
                }
                let boundary = iteration + 1;
                events.push(LifecycleEvent::IterationBoundary {
                    inspector: id,
                    network,
                    iteration: boundary,
                });
                // Collection strictly before restoration.
                events.extend(collect_pass(
                    world, db, id, network, &template, &[h1, h2], tick,
                )?);
                let victim = if boundary % 2 == 1 { h2 } else { h1 };
                let pristine = world.guest(victim)?.pristine_ref();
                world.guest_mut(victim)?.restore_to_snapshot(&pristine)?;
                events.push(LifecycleEvent::Restored {
                    inspector: id,
                    network,
                    honeypot: victim,
                    iteration: boundary,
                });
                if let Phase::Paired { iteration, .. } =
                    &mut self.inspectors.get_mut(&id).unwrap().phase
                {
                    *iteration = boundary;
                }
                if boundary >= self.policy.rotation_count {
                    events.extend(self.finish_pair(world, db, tick, id)?);
                }
            }
            Phase::Teardown { .. } => {
                let ins = self.inspectors.get_mut(&id).unwrap();
                if !ins.assigned.is_empty() {
                    ins.cursor = (ins.cursor + 1) % ins.assigned.len();
                }
                ins.phase = Phase::Idle;
                let next = ins.assigned.get(ins.cursor).copied();
                events.push(LifecycleEvent::Advanced {
                    inspector: id,
                    next,
                });
            }
        }
        Ok(events)
    }

    /// Final collection sweep, honeypot destruction, and pair-link release.
    fn finish_pair(
        &mut self,
        world: &mut World,
        db: &mut CollectionDb,
        tick: Tick,
        id: InspectorId,
    ) -> Result<Vec<LifecycleEvent>> {
        let Phase::Paired {
            network,
            h1,
            h2,
            pair_group,
            template,
            ..
        } = self.inspectors[&id].phase.clone()
        else {
            return Err(Error::NotPaired);
        };
        let mut events = collect_pass(world, db, id, network, &template, &[h1, h2], tick)?;
        let redo_bytes = vec![
            world.guest(h1)?.redo_log_size(),
            world.guest(h2)?.redo_log_size(),
        ];
        world.destroy_honeypot(h1)?;
        world.destroy_honeypot(h2)?;
        world.topology.destroy_port_group(pair_group)?;
        self.inspectors.get_mut(&id).unwrap().phase = Phase::Teardown { network };
        events.push(LifecycleEvent::TornDown {
            inspector: id,
            network,
            honeypots: vec![h1, h2],
            template,
            redo_bytes,
        });
        Ok(events)
    }

    fn target_is_live(&self, world: &World, id: InspectorId, network: NetworkId) -> bool {
        world.topology.network(network).is_ok()
            && self.inspectors[&id].assigned.contains(&network)
    }

    /// Drops whatever the lifecycle holds and returns to Idle. Used when the
    /// current network vanished or left this inspector's assignment.
    fn abort(&mut self, world: &mut World, id: InspectorId) -> Result<Vec<LifecycleEvent>> {
        let network = self.inspectors[&id]
            .current_network()
            .expect("abort only mid-lifecycle");
        let destroyed = self.retire_honeypots(world, id)?;
        Ok(vec![LifecycleEvent::Aborted {
            inspector: id,
            network,
            destroyed_honeypots: destroyed,
        }])
    }

    /// Destroys an inspector's live honeypots (and pair link) and resets it
    /// to Idle. Returns the destroyed VM ids.
    fn retire_honeypots(&mut self, world: &mut World, id: InspectorId) -> Result<Vec<VmId>> {
        let ins = self.inspectors.get_mut(&id).unwrap();
        let phase = std::mem::replace(&mut ins.phase, Phase::Idle);
        match phase {
            Phase::Idle | Phase::Teardown { .. } => Ok(Vec::new()),
            Phase::Probe { h1, .. } => {
                world.destroy_honeypot(h1)?;
                Ok(vec![h1])
            }
            Phase::Paired {
                h1, h2, pair_group, ..
            } => {
                world.destroy_honeypot(h1)?;
                world.destroy_honeypot(h2)?;
                world.topology.destroy_port_group(pair_group)?;
                Ok(vec![h1, h2])
            }
        }
    }
}

/// Out-of-band inspection of a honeypot set: memory snapshot, baseline
/// check, disk evidence, extraction, and recording. Each distinct payload
/// per (network, family) is recorded once.
fn collect_pass(
    world: &World,
    db: &mut CollectionDb,
    inspector: InspectorId,
    network: NetworkId,
    template_name: &str,
    honeypots: &[VmId],
    tick: Tick,
) -> Result<Vec<LifecycleEvent>> {
    let baseline = build_baseline(world.template(template_name)?);
    let mut events = Vec::new();
    for &hp in honeypots {
        let guest = world.guest(hp)?;
        let snapshot = guest.take_memory_snapshot(tick);
        let mut report = check(&snapshot, &baseline);
        attach_disk_evidence(&mut report, guest, &guest.pristine_ref())?;
        if report.is_clean() {
            continue;
        }
        for payload in extract_payloads(guest, &report)? {
            if db.contains_instance(network, &payload.family_id, &payload.bytes) {
                continue;
            }
            let family = payload.family_id.clone();
            let record_id = db.append(RecordDraft {
                tick,
                network_id: network,
                inspector_id: inspector,
                honeypot_id: hp,
                template_name: template_name.to_string(),
                payload,
                anomaly: report.clone(),
            })?;
            events.push(LifecycleEvent::Collected {
                inspector,
                network,
                honeypot: hp,
                family,
                record_id,
            });
        }
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guest::{BaselineProcess, TemplateSpec};
    use crate::worm::{install_infection, step_worms, ScanStrategy, WormSpec};

    fn template(name: &str, software: &[&str]) -> TemplateSpec {
        TemplateSpec {
            name: name.into(),
            os_label: name.into(),
            ram_mb: 256,
            disk_gb: 1,
            processors: 1,
            software_set: software.iter().map(|s| s.to_string()).collect(),
            baseline_processes: vec![BaselineProcess {
                name: "init".into(),
                modules: vec!["libc.so".into()],
            }],
        }
    }

    fn worm(family: &str, checks: bool) -> WormSpec {
        WormSpec {
            family_id: family.into(),
            invariant_region: format!("CORE-{family}"),
            mutable_region_len: 16,
            polymorphic: true,
            checks_existence: checks,
            dormancy_ticks: 0,
            scan_strategy: ScanStrategy::SweepPortGroup,
            disk_write_sectors: 8,
            process_name: format!("{family}.exe"),
            hidden: false,
        }
    }

    fn policy(dwell: u64, rotation: u64, period: u64, per: u32) -> InspectionPolicy {
        InspectionPolicy {
            dwell_ticks: dwell,
            rotation_count: rotation,
            snapshot_period_ticks: period,
            networks_per_inspector: per,
        }
    }

    fn profile(s: &[&str]) -> std::collections::BTreeSet<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    /// World with one switch and `counts.len()` networks of given VM counts.
    fn build_world(counts: &[u32]) -> (World, Vec<NetworkId>) {
        let mut world = World::new(5);
        world.topology.add_server(None);
        world.register_template(template("plain", &["web"]));
        let sw = world.topology.add_switch();
        let mut nets = Vec::new();
        for &c in counts {
            nets.push(
                world
                    .create_network_with_guests(sw, c, profile(&["web"]), Tick(0))
                    .unwrap(),
            );
        }
        (world, nets)
    }

    /// Runs the full per-tick sequence for `ticks` ticks, collecting events.
    fn drive(
        world: &mut World,
        orch: &mut Orchestrator,
        db: &mut CollectionDb,
        from: u64,
        ticks: u64,
        mut each_tick: impl FnMut(&World, &Orchestrator, u64),
    ) -> Vec<(u64, LifecycleEvent)> {
        let mut events = Vec::new();
        for t in from..from + ticks {
            let tick = Tick(t);
            step_worms(world, tick);
            for e in orch.controller_tick(world, tick).unwrap() {
                events.push((t, e));
            }
            for e in orch.inspector_step_all(world, db, tick).unwrap() {
                events.push((t, e));
            }
            each_tick(world, orch, t);
        }
        events
    }

    #[test]
    fn reconciliation_matches_ceiling_and_chunking() {
        let (mut world, nets) = build_world(&[1, 1, 1, 1]);
        let mut orch = Orchestrator::new(policy(2, 1, 1, 2));
        orch.controller_tick(&mut world, Tick(1)).unwrap();
        assert_eq!(orch.inspectors.len(), 2);
        let assigned: Vec<Vec<NetworkId>> =
            orch.inspectors.values().map(|i| i.assigned.clone()).collect();
        assert_eq!(assigned, vec![vec![nets[0], nets[1]], vec![nets[2], nets[3]]]);
    }

    #[test]
    fn zero_networks_mean_zero_inspectors() {
        let (mut world, nets) = build_world(&[1, 1]);
        let mut orch = Orchestrator::new(policy(2, 1, 1, 2));
        orch.controller_tick(&mut world, Tick(1)).unwrap();
        assert_eq!(orch.inspectors.len(), 1);
        for net in nets {
            world.remove_network(net).unwrap();
        }
        let events = orch.controller_tick(&mut world, Tick(2)).unwrap();
        assert_eq!(orch.inspectors.len(), 0);
        assert!(matches!(
            events[0],
            LifecycleEvent::InspectorDestroyed { .. }
        ));
    }

    #[test]
    fn network_added_mid_run_extends_fleet_within_one_tick() {
        let (mut world, _) = build_world(&[1, 1]);
        let mut orch = Orchestrator::new(policy(2, 1, 1, 2));
        orch.controller_tick(&mut world, Tick(1)).unwrap();
        assert_eq!(orch.inspectors.len(), 1);
        let sw = world.topology.add_switch();
        world
            .create_network_with_guests(sw, 1, profile(&["web"]), Tick(1))
            .unwrap();
        orch.controller_tick(&mut world, Tick(2)).unwrap();
        assert_eq!(orch.inspectors.len(), 2);
    }

    #[test]
    fn full_lifecycle_collects_and_tears_down() {
        let (mut world, nets) = build_world(&[2]);
        world.register_worm(worm("wa", false));
        let victim = *world
            .topology
            .network(nets[0])
            .unwrap()
            .customer_vms
            .iter()
            .next()
            .unwrap();
        install_infection(&mut world, "wa", victim, Tick(0), 1).unwrap();

        let mut orch = Orchestrator::new(policy(2, 2, 2, 2));
        let mut db = CollectionDb::in_memory();
        let events = drive(&mut world, &mut orch, &mut db, 1, 12, |world, orch, _| {
            for ins in orch.inspectors.values() {
                assert!(ins.honeypots().len() <= 2);
                // Pair purity: h2 only ever sits on the pair link.
                if let Phase::Paired { h2, pair_group, .. } = &ins.phase {
                    assert_eq!(world.topology.groups_of(*h2), vec![*pair_group]);
                }
            }
        });
        let kinds: Vec<&str> = events
            .iter()
            .map(|(_, e)| match e {
                LifecycleEvent::InspectorCreated { .. } => "created",
                LifecycleEvent::ProbeStarted { .. } => "probe",
                LifecycleEvent::PairFormed { .. } => "paired",
                LifecycleEvent::IterationBoundary { .. } => "boundary",
                LifecycleEvent::Collected { .. } => "collected",
                LifecycleEvent::Restored { .. } => "restored",
                LifecycleEvent::TornDown { .. } => "teardown",
                LifecycleEvent::Advanced { .. } => "idle",
                _ => "other",
            })
            .collect();
        // Probe at t=1, pair at t=3, boundaries at t=5 and t=7, teardown at
        // t=7, idle at t=8, next probe at t=9 (same network again).
        assert_eq!(kinds[0], "created");
        assert_eq!(kinds[1], "probe");
        assert_eq!(kinds[2], "paired");
        assert_eq!(kinds[3], "boundary");
        assert!(kinds.contains(&"teardown"));
        assert!(db.records().len() >= 3);
        // All honeypots destroyed after teardown completed the cycle and
        // the next lifecycle begins cleanly.
        assert!(events.iter().any(|(t, e)| matches!(e, LifecycleEvent::ProbeStarted { .. }) && *t >= 9));
    }

    #[test]
    fn checking_worm_rotation_zero_collects_exactly_one_instance() {
        let (mut world, nets) = build_world(&[2]);
        world.register_worm(worm("wb", true));
        let victim = *world
            .topology
            .network(nets[0])
            .unwrap()
            .customer_vms
            .iter()
            .next()
            .unwrap();
        install_infection(&mut world, "wb", victim, Tick(0), 1).unwrap();

        let mut orch = Orchestrator::new(policy(3, 0, 2, 2));
        let mut db = CollectionDb::in_memory();
        // One full lifecycle: probe t=1..4, pair+teardown at t=4.
        let events = drive(&mut world, &mut orch, &mut db, 1, 5, |_, _, _| {});
        assert_eq!(db.distinct_instances("wb"), 1);
        assert_eq!(db.records().len(), 1);
        // Pair formed and torn down the same tick.
        let pair_tick = events
            .iter()
            .find_map(|(t, e)| matches!(e, LifecycleEvent::PairFormed { .. }).then_some(*t))
            .unwrap();
        let teardown_tick = events
            .iter()
            .find_map(|(t, e)| matches!(e, LifecycleEvent::TornDown { .. }).then_some(*t))
            .unwrap();
        assert_eq!(pair_tick, teardown_tick);
    }

    #[test]
    fn checking_worm_rotation_k_collects_k_plus_one_distinct() {
        for k in [1u64, 2, 3] {
            let (mut world, nets) = build_world(&[2]);
            world.register_worm(worm("wc", true));
            let victim = *world
                .topology
                .network(nets[0])
                .unwrap()
                .customer_vms
                .iter()
                .next()
                .unwrap();
            install_infection(&mut world, "wc", victim, Tick(0), 1).unwrap();

            let mut orch = Orchestrator::new(policy(2, k, 3, 2));
            let mut db = CollectionDb::in_memory();
            // Single lifecycle window: probe 2 + k iterations x period 3 + slack 1.
            let ticks = 2 + 3 * k + 2;
            drive(&mut world, &mut orch, &mut db, 1, ticks, |_, _, _| {});
            assert_eq!(
                db.distinct_instances("wc"),
                k + 1,
                "rotation_count={k} should harvest k+1 distinct instances"
            );
        }
    }

    #[test]
    fn restore_order_alternates_starting_with_h2() {
        let (mut world, nets) = build_world(&[2]);
        world.register_worm(worm("wd", true));
        let victim = *world
            .topology
            .network(nets[0])
            .unwrap()
            .customer_vms
            .iter()
            .next()
            .unwrap();
        install_infection(&mut world, "wd", victim, Tick(0), 1).unwrap();
        let mut orch = Orchestrator::new(policy(2, 3, 2, 2));
        let mut db = CollectionDb::in_memory();
        let events = drive(&mut world, &mut orch, &mut db, 1, 12, |_, _, _| {});
        let (h1, h2) = events
            .iter()
            .find_map(|(_, e)| match e {
                LifecycleEvent::PairFormed { h1, h2, .. } => Some((*h1, *h2)),
                _ => None,
            })
            .unwrap();
        let restored: Vec<(u64, VmId)> = events
            .iter()
            .filter_map(|(_, e)| match e {
                LifecycleEvent::Restored {
                    honeypot, iteration, ..
                } => Some((*iteration, *honeypot)),
                _ => None,
            })
            .collect();
        assert_eq!(restored, vec![(1, h2), (2, h1), (3, h2)]);
    }

    #[test]
    fn clean_network_produces_no_records_across_a_lifecycle() {
        let (mut world, _) = build_world(&[3]);
        world.register_worm(worm("we", false));
        let mut orch = Orchestrator::new(policy(2, 2, 2, 2));
        let mut db = CollectionDb::in_memory();
        let events = drive(&mut world, &mut orch, &mut db, 1, 10, |_, _, _| {});
        assert!(events.iter().any(|(_, e)| matches!(e, LifecycleEvent::TornDown { .. })));
        assert!(db.records().is_empty());
    }

    #[test]
    fn inspector_cycles_through_its_assigned_networks() {
        let (mut world, nets) = build_world(&[1, 1]);
        world.register_worm(worm("wf", false));
        let mut orch = Orchestrator::new(policy(1, 1, 1, 2));
        let mut db = CollectionDb::in_memory();
        let events = drive(&mut world, &mut orch, &mut db, 1, 12, |_, orch, _| {
            // One network under inspection at a time per inspector.
            for ins in orch.inspectors.values() {
                assert!(ins.current_network().iter().count() <= 1);
            }
        });
        let probed: Vec<NetworkId> = events
            .iter()
            .filter_map(|(_, e)| match e {
                LifecycleEvent::ProbeStarted { network, .. } => Some(*network),
                _ => None,
            })
            .collect();
        // Wraps: n1, n2, n1, ...
        assert!(probed.len() >= 3);
        assert_eq!(probed[0], nets[0]);
        assert_eq!(probed[1], nets[1]);
        assert_eq!(probed[2], nets[0]);
    }

    #[test]
    fn removing_the_probed_network_aborts_and_moves_on() {
        let (mut world, nets) = build_world(&[1, 1]);
        let mut orch = Orchestrator::new(policy(5, 1, 1, 2));
        let mut db = CollectionDb::in_memory();
        drive(&mut world, &mut orch, &mut db, 1, 2, |_, _, _| {});
        let ins = orch.inspectors.values().next().unwrap();
        assert!(matches!(ins.phase, Phase::Probe { network, .. } if network == nets[0]));
        let h1 = ins.honeypots()[0];

        world.remove_network(nets[0]).unwrap();
        let events = drive(&mut world, &mut orch, &mut db, 3, 2, |_, _, _| {});
        assert!(events.iter().any(|(_, e)| matches!(
            e,
            LifecycleEvent::Aborted { destroyed_honeypots, .. } if destroyed_honeypots == &vec![h1]
        )));
        assert!(!world.topology.vm_exists(h1));
        // Next probe lands on the surviving network.
        assert!(events.iter().any(|(_, e)| matches!(
            e,
            LifecycleEvent::ProbeStarted { network, .. } if *network == nets[1]
        )));
    }

    #[test]
    fn shrinking_fleet_destroys_surplus_inspector_honeypots() {
        let (mut world, nets) = build_world(&[1, 1, 1, 1]);
        let mut orch = Orchestrator::new(policy(5, 1, 1, 2));
        let mut db = CollectionDb::in_memory();
        drive(&mut world, &mut orch, &mut db, 1, 2, |_, _, _| {});
        assert_eq!(orch.inspectors.len(), 2);
        let highest = *orch.inspectors.keys().next_back().unwrap();
        let doomed = orch.inspectors[&highest].honeypots();
        assert!(!doomed.is_empty());

        world.remove_network(nets[2]).unwrap();
        world.remove_network(nets[3]).unwrap();
        let events = drive(&mut world, &mut orch, &mut db, 3, 1, |_, _, _| {});
        assert_eq!(orch.inspectors.len(), 1);
        assert!(events.iter().any(|(_, e)| matches!(
            e,
            LifecycleEvent::InspectorDestroyed { inspector, destroyed_honeypots }
                if *inspector == highest && destroyed_honeypots == &doomed
        )));
        for vm in doomed {
            assert!(!world.topology.vm_exists(vm));
        }
    }

    #[test]
    fn honeypot_template_matches_each_network_profile() {
        let mut world = World::new(9);
        world.topology.add_server(None);
        world.register_template(template("redhat", &["httpd"]));
        world.register_template(template("winxp", &["iis"]));
        let sw = world.topology.add_switch();
        world
            .create_network_with_guests(sw, 1, profile(&["iis"]), Tick(0))
            .unwrap();
        world
            .create_network_with_guests(sw, 1, profile(&["httpd"]), Tick(0))
            .unwrap();
        let mut orch = Orchestrator::new(policy(1, 0, 1, 1));
        let mut db = CollectionDb::in_memory();
        let events = drive(&mut world, &mut orch, &mut db, 1, 3, |_, _, _| {});
        let templates: Vec<String> = events
            .iter()
            .filter_map(|(_, e)| match e {
                LifecycleEvent::ProbeStarted { template, .. } => Some(template.clone()),
                _ => None,
            })
            .collect();
        assert_eq!(templates, vec!["winxp".to_string(), "redhat".to_string()]);
    }

    #[test]
    fn migration_during_probe_does_not_change_collection() {
        // Two identical worlds; in one, h1 migrates mid-probe.
        let build = || {
            let mut world = World::new(5);
            world.topology.add_server(None);
            world.topology.add_server(None);
            world.register_template(template("plain", &["web"]));
            let sw = world.topology.add_switch();
            let net = world
                .create_network_with_guests(sw, 2, profile(&["web"]), Tick(0))
                .unwrap();
            world.register_worm(worm("wg", true));
            let victim = *world
                .topology
                .network(net)
                .unwrap()
                .customer_vms
                .iter()
                .next()
                .unwrap();
            install_infection(&mut world, "wg", victim, Tick(0), 1).unwrap();
            world
        };
        let run = |migrate: bool| {
            let mut world = build();
            let mut orch = Orchestrator::new(policy(4, 1, 2, 2));
            let mut db = CollectionDb::in_memory();
            for t in 1..=10u64 {
                let tick = Tick(t);
                step_worms(&mut world, tick);
                orch.controller_tick(&mut world, tick).unwrap();
                orch.inspector_step_all(&mut world, &mut db, tick).unwrap();
                if migrate && t == 2 {
                    let ins = orch.inspectors.values().next().unwrap();
                    let h1 = ins.honeypots()[0];
                    let dest = world.topology.server_ids()[1];
                    world.topology.migrate_vm(h1, dest).unwrap();
                }
            }
            db.records()
                .iter()
                .map(|r| r.payload_bytes.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(false), run(true));
    }
}
