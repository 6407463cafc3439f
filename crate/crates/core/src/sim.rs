//! The deterministic event loop: a validated scenario in, four files out.
//!
//! Each tick runs, in order: worm propagation, the controller's fleet
//! reconciliation, every inspector's lifecycle step, then the dynamic
//! events due that tick in declaration order. Everything observable lands
//! in `run.log`; captures land in `collections.jsonl` as they happen; the
//! metrics report is written in both formats at the end. Identical
//! (config, seed) produces byte-identical files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::collection::CollectionDb;
use crate::error::Result;
use crate::guest::BYTES_PER_GB;
use crate::ids::{GroupId, NetworkId, Tick, VmId};
use crate::orchestrate::{LifecycleEvent, Orchestrator};
use crate::report::{MetricsReport, TemplateRedoRow, TimelinePoint};
use crate::scenario::{
    ground_truth, instantiate_network, DynamicAction, ScenarioConfig, SeededInfection,
    SetupLedger,
};
use crate::world::World;
use crate::worm::{step_worms, InfectionEvent};

pub const RUN_LOG: &str = "run.log";
pub const COLLECTIONS: &str = "collections.jsonl";
pub const REPORT_TABLE: &str = "report.txt";
pub const REPORT_MACHINE: &str = "report.machine";

fn join<T: std::fmt::Display>(items: impl IntoIterator<Item = T>) -> String {
    let parts: Vec<String> = items.into_iter().map(|i| i.to_string()).collect();
    if parts.is_empty() {
        "-".to_string()
    } else {
        parts.join(",")
    }
}

/// Groups the two sides share, the isolation evidence on each worm line.
fn shared_groups(event: &InfectionEvent) -> String {
    let target: BTreeSet<GroupId> = event.target_groups.iter().copied().collect();
    join(
        event
            .source_groups
            .iter()
            .copied()
            .filter(|g| target.contains(g)),
    )
}

fn worm_line(event: &InfectionEvent) -> String {
    format!(
        "worm family={} source={} target={} outcome={} shared={}",
        event.family,
        event.source,
        event.target,
        event.outcome_label,
        shared_groups(event)
    )
}

struct RunState {
    log: String,
    /// Worm families seeded per network; empty set means ground-truth clean.
    truth: BTreeMap<NetworkId, BTreeSet<String>>,
    /// Networks that completed at least one full inspection lifecycle.
    torn_networks: BTreeSet<NetworkId>,
    /// Largest teardown redo size seen per template.
    template_redo: BTreeMap<String, u64>,
    peak_alive: u64,
    timeline: Vec<TimelinePoint>,
}

impl RunState {
    fn logln(&mut self, tick: u64, body: impl std::fmt::Display) {
        let _ = writeln!(self.log, "[t={tick}] {body}");
    }

    fn note_seeded(&mut self, tick: u64, seeded: &[SeededInfection]) {
        for s in seeded {
            self.truth
                .entry(s.network)
                .or_default()
                .insert(s.family.clone());
            self.logln(
                tick,
                format!("seeded family={} vm={} network={}", s.family, s.vm, s.network),
            );
        }
    }

    fn note_lifecycle(&mut self, tick: u64, event: &LifecycleEvent) {
        if let LifecycleEvent::TornDown {
            network,
            template,
            redo_bytes,
            ..
        } = event
        {
            self.torn_networks.insert(*network);
            let slot = self.template_redo.entry(template.clone()).or_insert(0);
            for bytes in redo_bytes {
                *slot = (*slot).max(*bytes);
            }
        }
        self.logln(tick, event);
    }

    fn sample(&mut self, tick: u64, orch: &Orchestrator) {
        let alive: u64 = orch
            .inspectors
            .values()
            .map(|i| i.honeypots().len() as u64)
            .sum();
        self.peak_alive = self.peak_alive.max(alive);
        let count = orch.inspectors.len() as u32;
        if self.timeline.last().map(|p| p.inspectors) != Some(count) {
            self.timeline.push(TimelinePoint {
                tick,
                inspectors: count,
            });
        }
    }
}

fn apply_dynamic_event(
    world: &mut World,
    ledger: &mut SetupLedger,
    state: &mut RunState,
    tick: Tick,
    action: &DynamicAction,
) -> Result<()> {
    match action {
        DynamicAction::AddNetwork {
            switch,
            vm_count,
            software_profile,
            address_books,
            infections,
        } => {
            let sw = ledger.switches[*switch as usize - 1];
            let (net, seeded) = instantiate_network(
                world,
                sw,
                *vm_count,
                software_profile,
                *address_books,
                infections,
                tick,
            )?;
            ledger.networks.push(net);
            state.truth.entry(net).or_default();
            let vms = join(world.topology.network(net)?.customer_vms.iter());
            state.logln(
                tick.0,
                format!("event add_network network={net} switch={sw} vms={vms}"),
            );
            state.note_seeded(tick.0, &seeded);
            ledger.seeded.extend(seeded);
        }
        DynamicAction::RemoveNetwork { network_index } => {
            let net = ledger.networks[*network_index as usize];
            let destroyed = world.remove_network(net)?;
            state.logln(
                tick.0,
                format!("event remove_network network={net} vms={}", join(destroyed)),
            );
        }
        DynamicAction::MigrateVm {
            network_index,
            vm_index,
            server,
        } => {
            let net = ledger.networks[*network_index as usize];
            let vm: VmId = world
                .topology
                .network(net)?
                .customer_vms
                .iter()
                .copied()
                .nth(*vm_index as usize)
                .expect("vm_index validated against vm_count");
            let dest = ledger.servers[*server as usize - 1];
            world.topology.migrate_vm(vm, dest)?;
            state.logln(
                tick.0,
                format!("event migrate_vm vm={vm} network={net} server={dest}"),
            );
        }
    }
    Ok(())
}

fn final_report(
    config: &ScenarioConfig,
    state: &RunState,
    ledger: &SetupLedger,
    db: &CollectionDb,
) -> MetricsReport {
    let mut per_network: BTreeMap<String, u64> = ledger
        .networks
        .iter()
        .map(|n| (n.to_string(), 0))
        .collect();
    for record in db.records() {
        *per_network.entry(record.network_id.to_string()).or_insert(0) += 1;
    }

    let per_family: BTreeMap<String, u64> = config
        .worm_specs
        .iter()
        .map(|spec| (spec.family_id.clone(), db.distinct_instances(&spec.family_id)))
        .collect();

    let disk_bytes: BTreeMap<String, u64> = config
        .effective_templates()
        .iter()
        .map(|t| (t.name.clone(), t.disk_gb * BYTES_PER_GB))
        .collect();
    let per_template_redo: Vec<TemplateRedoRow> = state
        .template_redo
        .iter()
        .map(|(template, &redo)| {
            TemplateRedoRow::new(template.clone(), redo, disk_bytes[template])
        })
        .collect();

    let false_positives = db
        .records()
        .iter()
        .filter(|r| {
            state
                .truth
                .get(&r.network_id)
                .map_or(true, |families| families.is_empty())
        })
        .count() as u64;
    let false_negatives = state
        .truth
        .iter()
        .filter(|(net, families)| {
            !families.is_empty()
                && state.torn_networks.contains(net)
                && db.by_network(**net).is_empty()
        })
        .count() as u64;

    MetricsReport {
        seed: config.seed,
        ticks_run: config.max_ticks,
        total_records: db.records().len() as u64,
        per_network_collections: per_network,
        per_family_distinct: per_family,
        per_template_redo,
        false_positives,
        false_negatives,
        peak_alive_honeypots: state.peak_alive,
        inspector_timeline: state.timeline.clone(),
    }
}

/// Runs a validated scenario to completion, writing `run.log`,
/// `collections.jsonl`, `report.txt`, and `report.machine` under `out_dir`.
pub fn run_scenario(config: &ScenarioConfig, out_dir: &Path) -> Result<MetricsReport> {
    config.validate()?;
    fs::create_dir_all(out_dir)?;

    let (mut world, mut ledger) = crate::scenario::build_world(config)?;
    let mut state = RunState {
        log: String::new(),
        truth: ground_truth(&ledger.seeded),
        torn_networks: BTreeSet::new(),
        template_redo: BTreeMap::new(),
        peak_alive: 0,
        timeline: Vec::new(),
    };
    for net in &ledger.networks {
        state.truth.entry(*net).or_default();
        let network = world.topology.network(*net)?;
        let vms = join(network.customer_vms.iter());
        let group = network.port_group;
        let template = world.template_for_network(*net)?.name.clone();
        state.logln(
            0,
            format!("setup network={net} group={group} vms={vms} template={template}"),
        );
    }
    let seeded = ledger.seeded.clone();
    state.note_seeded(0, &seeded);

    let db_path = out_dir.join(COLLECTIONS);
    if db_path.exists() {
        fs::remove_file(&db_path)?;
    }
    let mut db = CollectionDb::open(&db_path)?;
    let mut orch = Orchestrator::new(config.policy);

    let mut events_by_tick: BTreeMap<u64, Vec<&DynamicAction>> = BTreeMap::new();
    for event in &config.dynamic_events {
        events_by_tick.entry(event.tick).or_default().push(&event.action);
    }

    for t in 1..=config.max_ticks {
        let tick = Tick(t);
        for event in step_worms(&mut world, tick) {
            state.logln(t, worm_line(&event));
        }
        for event in orch.controller_tick(&mut world, tick)? {
            state.logln(t, &event);
        }
        for event in orch.inspector_step_all(&mut world, &mut db, tick)? {
            state.note_lifecycle(t, &event);
        }
        if let Some(actions) = events_by_tick.get(&t) {
            for action in actions {
                apply_dynamic_event(&mut world, &mut ledger, &mut state, tick, action)?;
            }
        }
        state.sample(t, &orch);
    }

    let report = final_report(config, &state, &ledger, &db);
    fs::write(out_dir.join(RUN_LOG), &state.log)?;
    fs::write(out_dir.join(REPORT_TABLE), report.to_table())?;
    fs::write(out_dir.join(REPORT_MACHINE), report.to_machine())?;
    Ok(report)
}
