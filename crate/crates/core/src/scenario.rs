//! Scenario files: the TOML schema, validation, and world construction.
//!
//! A scenario declares the datacenter (servers, switches, customer
//! networks), the worm catalog, the honeypot template catalog, the
//! inspection policy, and a list of timed dynamic events. Loading is
//! strict: unknown fields, dangling references, and out-of-range indexes
//! are rejected with messages naming the offending field.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guest::{BaselineProcess, TemplateSpec};
use crate::ids::{fnv1a, mix64, NetworkId, ServerId, SwitchId, Tick, VmId};
use crate::orchestrate::InspectionPolicy;
use crate::world::World;
use crate::worm::{install_infection, WormSpec};

fn default_switches() -> u32 {
    1
}
fn default_switch_index() -> u32 {
    1
}
fn default_max_ticks() -> u64 {
    100
}

/// How customer VMs on a network populate their address books, the
/// harvest surface for `address_harvest` worms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddressBookMode {
    #[default]
    None,
    Full,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerDecl {
    /// Maximum resident VMs; omitted means uncapped.
    pub capacity: Option<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfectionDecl {
    pub family: String,
    /// Index into the network's customer VMs, in creation order.
    pub vm_index: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDecl {
    /// 1-based index into the declared switches.
    #[serde(default = "default_switch_index")]
    pub switch: u32,
    pub vm_count: u32,
    /// Software the tenant claims to run; honeypot templates are matched
    /// against it by largest overlap.
    #[serde(default)]
    pub software_profile: Vec<String>,
    #[serde(default)]
    pub address_books: AddressBookMode,
    #[serde(default)]
    pub infections: Vec<InfectionDecl>,
}

/// A timed change to the running datacenter. Events share the tick field;
/// the `action` tag selects the shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum DynamicAction {
    AddNetwork {
        #[serde(default = "default_switch_index")]
        switch: u32,
        vm_count: u32,
        #[serde(default)]
        software_profile: Vec<String>,
        #[serde(default)]
        address_books: AddressBookMode,
        #[serde(default)]
        infections: Vec<InfectionDecl>,
    },
    RemoveNetwork {
        /// Index into all networks in creation order (initial declarations
        /// first, then added networks in event order).
        network_index: u32,
    },
    MigrateVm {
        network_index: u32,
        vm_index: u32,
        /// 1-based index into the declared servers.
        server: u32,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicEventDecl {
    pub tick: u64,
    #[serde(flatten)]
    pub action: DynamicAction,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_ticks")]
    pub max_ticks: u64,
    #[serde(default = "default_switches")]
    pub switches: u32,
    #[serde(default)]
    pub servers: Vec<ServerDecl>,
    #[serde(default)]
    pub networks: Vec<NetworkDecl>,
    #[serde(default)]
    pub worm_specs: Vec<WormSpec>,
    /// Omitted means the built-in catalog.
    #[serde(default)]
    pub templates: Vec<TemplateSpec>,
    #[serde(default)]
    pub policy: InspectionPolicy,
    #[serde(default)]
    pub dynamic_events: Vec<DynamicEventDecl>,
}

/// The built-in honeypot template catalog used when a scenario declares
/// none of its own.
pub fn default_template_catalog() -> Vec<TemplateSpec> {
    fn proc(name: &str, modules: &[&str]) -> BaselineProcess {
        BaselineProcess {
            name: name.to_string(),
            modules: modules.iter().map(|m| m.to_string()).collect(),
        }
    }
    fn software(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }
    vec![
        TemplateSpec {
            name: "winxp_pro".into(),
            os_label: "Windows XP Professional".into(),
            ram_mb: 512,
            disk_gb: 5,
            processors: 1,
            software_set: software(&["iis5", "ie6", "outlook_express"]),
            baseline_processes: vec![
                proc("System", &[]),
                proc("smss.exe", &["ntdll.dll"]),
                proc("lsass.exe", &["ntdll.dll", "samsrv.dll"]),
                proc("svchost.exe", &["ntdll.dll", "rpcrt4.dll"]),
                proc("explorer.exe", &["ntdll.dll", "shell32.dll"]),
                proc("inetinfo.exe", &["ntdll.dll", "iisrtl.dll"]),
            ],
        },
        TemplateSpec {
            name: "win2003_ent".into(),
            os_label: "Windows Server 2003 Enterprise".into(),
            ram_mb: 1024,
            disk_gb: 20,
            processors: 1,
            software_set: software(&["iis6", "asp_net", "smb"]),
            baseline_processes: vec![
                proc("System", &[]),
                proc("smss.exe", &["ntdll.dll"]),
                proc("lsass.exe", &["ntdll.dll", "samsrv.dll"]),
                proc("svchost.exe", &["ntdll.dll", "rpcrt4.dll"]),
                proc("w3wp.exe", &["ntdll.dll", "iiscore.dll"]),
            ],
        },
        TemplateSpec {
            name: "redhat_linux".into(),
            os_label: "Red Hat Linux".into(),
            ram_mb: 1024,
            disk_gb: 30,
            processors: 1,
            software_set: software(&["httpd", "sendmail", "openssh"]),
            baseline_processes: vec![
                proc("init", &[]),
                proc("httpd", &["libc.so.6", "mod_ssl.so"]),
                proc("sshd", &["libc.so.6", "libcrypto.so"]),
                proc("sendmail", &["libc.so.6"]),
            ],
        },
        TemplateSpec {
            name: "win2008".into(),
            os_label: "Windows Server 2008".into(),
            ram_mb: 1024,
            disk_gb: 30,
            processors: 1,
            software_set: software(&["iis7", "smb2", "dotnet35"]),
            baseline_processes: vec![
                proc("System", &[]),
                proc("smss.exe", &["ntdll.dll"]),
                proc("lsass.exe", &["ntdll.dll", "samsrv.dll"]),
                proc("svchost.exe", &["ntdll.dll", "rpcrt4.dll"]),
                proc("w3wp.exe", &["ntdll.dll", "iiscore.dll"]),
            ],
        },
    ]
}

impl ScenarioConfig {
    /// The template catalog this scenario runs with.
    pub fn effective_templates(&self) -> Vec<TemplateSpec> {
        if self.templates.is_empty() {
            default_template_catalog()
        } else {
            self.templates.clone()
        }
    }

    /// Effective server declarations: one uncapped server if none given.
    pub fn effective_servers(&self) -> Vec<ServerDecl> {
        if self.servers.is_empty() {
            vec![ServerDecl { capacity: None }]
        } else {
            self.servers.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_ticks == 0 {
            return Err(Error::scenario("max_ticks must be >= 1"));
        }
        if self.switches == 0 {
            return Err(Error::scenario("switches must be >= 1"));
        }
        for (i, server) in self.servers.iter().enumerate() {
            if server.capacity == Some(0) {
                return Err(Error::scenario(format!(
                    "servers[{i}].capacity must be >= 1 when given"
                )));
            }
        }
        self.policy.validate()?;

        let mut families = BTreeSet::new();
        for spec in &self.worm_specs {
            spec.validate()?;
            if !families.insert(spec.family_id.clone()) {
                return Err(Error::scenario(format!(
                    "worm_specs: duplicate family_id {:?}",
                    spec.family_id
                )));
            }
        }

        let templates = self.effective_templates();
        let mut names = BTreeSet::new();
        for template in &templates {
            template.validate()?;
            if !names.insert(template.name.clone()) {
                return Err(Error::scenario(format!(
                    "templates: duplicate name {:?}",
                    template.name
                )));
            }
        }

        for (i, net) in self.networks.iter().enumerate() {
            self.validate_network_decl(
                net.switch,
                net.vm_count,
                &net.infections,
                &families,
                &format!("networks[{i}]"),
            )?;
        }

        // Statically replay the creation ledger so event indexes are
        // checked against the networks that will exist at that point.
        let server_count = self.effective_servers().len() as u32;
        let mut vm_counts: Vec<u32> = self.networks.iter().map(|n| n.vm_count).collect();
        let mut removed: BTreeSet<u32> = BTreeSet::new();
        let mut last_tick = 0;
        for (i, event) in self.dynamic_events.iter().enumerate() {
            let at = format!("dynamic_events[{i}]");
            if event.tick == 0 {
                return Err(Error::scenario(format!("{at}.tick must be >= 1")));
            }
            if event.tick < last_tick {
                return Err(Error::scenario(format!(
                    "{at}.tick is out of order: events must be sorted by tick"
                )));
            }
            last_tick = event.tick;
            match &event.action {
                DynamicAction::AddNetwork {
                    switch,
                    vm_count,
                    infections,
                    ..
                } => {
                    self.validate_network_decl(*switch, *vm_count, infections, &families, &at)?;
                    vm_counts.push(*vm_count);
                }
                DynamicAction::RemoveNetwork { network_index } => {
                    if *network_index as usize >= vm_counts.len() {
                        return Err(Error::scenario(format!(
                            "{at}.network_index {network_index} exceeds the {} networks created by then",
                            vm_counts.len()
                        )));
                    }
                    if !removed.insert(*network_index) {
                        return Err(Error::scenario(format!(
                            "{at}.network_index {network_index} was already removed"
                        )));
                    }
                }
                DynamicAction::MigrateVm {
                    network_index,
                    vm_index,
                    server,
                } => {
                    if *network_index as usize >= vm_counts.len() {
                        return Err(Error::scenario(format!(
                            "{at}.network_index {network_index} exceeds the {} networks created by then",
                            vm_counts.len()
                        )));
                    }
                    if removed.contains(network_index) {
                        return Err(Error::scenario(format!(
                            "{at}.network_index {network_index} refers to a removed network"
                        )));
                    }
                    if *vm_index >= vm_counts[*network_index as usize] {
                        return Err(Error::scenario(format!(
                            "{at}.vm_index {vm_index} exceeds the network's {} VMs",
                            vm_counts[*network_index as usize]
                        )));
                    }
                    if *server == 0 || *server > server_count {
                        return Err(Error::scenario(format!(
                            "{at}.server {server} is not in 1..={server_count}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn validate_network_decl(
        &self,
        switch: u32,
        vm_count: u32,
        infections: &[InfectionDecl],
        families: &BTreeSet<String>,
        at: &str,
    ) -> Result<()> {
        if switch == 0 || switch > self.switches {
            return Err(Error::scenario(format!(
                "{at}.switch {switch} is not in 1..={}",
                self.switches
            )));
        }
        if vm_count == 0 {
            return Err(Error::scenario(format!("{at}.vm_count must be >= 1")));
        }
        for (j, infection) in infections.iter().enumerate() {
            if !families.contains(&infection.family) {
                return Err(Error::scenario(format!(
                    "{at}.infections[{j}].family {:?} is not declared in worm_specs",
                    infection.family
                )));
            }
            if infection.vm_index >= vm_count {
                return Err(Error::scenario(format!(
                    "{at}.infections[{j}].vm_index {} exceeds vm_count {vm_count}",
                    infection.vm_index
                )));
            }
        }
        Ok(())
    }
}

/// Parses and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::scenario(format!("cannot read {}: {e}", path.display()))
    })?;
    let config: ScenarioConfig =
        toml::from_str(&text).map_err(|e| Error::scenario(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

/// One initially seeded infection, for ground truth and run-log output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeededInfection {
    pub network: NetworkId,
    pub vm: VmId,
    pub family: String,
}

/// Identifier maps produced while building the world from a scenario.
#[derive(Debug, Clone)]
pub struct SetupLedger {
    pub servers: Vec<ServerId>,
    pub switches: Vec<SwitchId>,
    /// All networks in creation order; dynamic adds append here.
    pub networks: Vec<NetworkId>,
    pub seeded: Vec<SeededInfection>,
}

/// Seeds one declared infection. The RNG seed mixes the scenario seed,
/// family, and target exactly like in-simulation delivery, with source 0
/// marking an external origin.
pub fn seed_infection(
    world: &mut World,
    network: NetworkId,
    decl: &InfectionDecl,
    tick: Tick,
) -> Result<SeededInfection> {
    let vms: Vec<VmId> = world
        .topology
        .network(network)?
        .customer_vms
        .iter()
        .copied()
        .collect();
    let vm = *vms
        .get(decl.vm_index as usize)
        .ok_or_else(|| Error::scenario(format!("vm_index {} out of range", decl.vm_index)))?;
    let seed = mix64(&[
        world.seed,
        fnv1a(decl.family.as_bytes()),
        0,
        vm.0,
        tick.0,
    ]);
    install_infection(world, &decl.family, vm, tick, seed)?;
    Ok(SeededInfection {
        network,
        vm,
        family: decl.family.clone(),
    })
}

/// Creates a customer network from a declaration: topology, guests,
/// address books, and seeded infections.
pub fn instantiate_network(
    world: &mut World,
    switch: SwitchId,
    vm_count: u32,
    software_profile: &[String],
    address_books: AddressBookMode,
    infections: &[InfectionDecl],
    tick: Tick,
) -> Result<(NetworkId, Vec<SeededInfection>)> {
    let profile: BTreeSet<String> = software_profile.iter().cloned().collect();
    let net = world.create_network_with_guests(switch, vm_count, profile, tick)?;
    if address_books == AddressBookMode::Full {
        world.populate_full_address_books(net)?;
    }
    let mut seeded = Vec::new();
    for decl in infections {
        seeded.push(seed_infection(world, net, decl, tick)?);
    }
    Ok((net, seeded))
}

/// Builds the initial world state a validated scenario describes.
pub fn build_world(config: &ScenarioConfig) -> Result<(World, SetupLedger)> {
    let mut world = World::new(config.seed);
    for template in config.effective_templates() {
        world.register_template(template);
    }
    for spec in &config.worm_specs {
        world.register_worm(spec.clone());
    }
    let servers: Vec<ServerId> = config
        .effective_servers()
        .iter()
        .map(|s| world.topology.add_server(s.capacity))
        .collect();
    let switches: Vec<SwitchId> = (0..config.switches)
        .map(|_| world.topology.add_switch())
        .collect();
    let mut ledger = SetupLedger {
        servers,
        switches,
        networks: Vec::new(),
        seeded: Vec::new(),
    };
    for net in &config.networks {
        let switch = ledger.switches[net.switch as usize - 1];
        let (id, seeded) = instantiate_network(
            &mut world,
            switch,
            net.vm_count,
            &net.software_profile,
            net.address_books,
            &net.infections,
            Tick(0),
        )?;
        ledger.networks.push(id);
        ledger.seeded.extend(seeded);
    }
    Ok((world, ledger))
}

/// Ground-truth map of worm families seeded per network, the reference
/// for false-positive/false-negative accounting.
pub fn ground_truth(seeded: &[SeededInfection]) -> BTreeMap<NetworkId, BTreeSet<String>> {
    let mut map: BTreeMap<NetworkId, BTreeSet<String>> = BTreeMap::new();
    for s in seeded {
        map.entry(s.network).or_default().insert(s.family.clone());
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"
            seed = 7
            max_ticks = 40

            [[networks]]
            vm_count = 3
            software_profile = ["iis5"]
        "#
    }

    fn parse(text: &str) -> Result<ScenarioConfig> {
        let config: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::scenario(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    #[test]
    fn minimal_scenario_gets_defaults() {
        let config = parse(minimal()).unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.switches, 1);
        assert!(config.servers.is_empty());
        assert_eq!(config.effective_servers().len(), 1);
        assert_eq!(config.policy, InspectionPolicy::default());
        let names: Vec<String> = config
            .effective_templates()
            .iter()
            .map(|t| t.name.clone())
            .collect();
        assert_eq!(
            names,
            vec!["winxp_pro", "win2003_ent", "redhat_linux", "win2008"]
        );
    }

    #[test]
    fn default_catalog_matches_sizing() {
        let catalog = default_template_catalog();
        let xp = catalog.iter().find(|t| t.name == "winxp_pro").unwrap();
        assert_eq!((xp.ram_mb, xp.disk_gb, xp.processors), (512, 5, 1));
        let w2k3 = catalog.iter().find(|t| t.name == "win2003_ent").unwrap();
        assert_eq!((w2k3.ram_mb, w2k3.disk_gb, w2k3.processors), (1024, 20, 1));
        let rh = catalog.iter().find(|t| t.name == "redhat_linux").unwrap();
        assert_eq!((rh.ram_mb, rh.disk_gb, rh.processors), (1024, 30, 1));
        let w2k8 = catalog.iter().find(|t| t.name == "win2008").unwrap();
        assert_eq!((w2k8.ram_mb, w2k8.disk_gb, w2k8.processors), (1024, 30, 1));
        for t in &catalog {
            assert!(t.validate().is_ok());
            assert!(!t.baseline_processes.is_empty());
        }
    }

    #[test]
    fn unknown_field_is_rejected_by_name() {
        let err = parse("max_ticks = 5\nbogus_field = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus_field"), "{err}");
    }

    #[test]
    fn infection_of_undeclared_family_is_rejected() {
        let err = parse(
            r#"
                [[networks]]
                vm_count = 2
                [[networks.infections]]
                family = "ghost"
                vm_index = 0
            "#,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("ghost") && msg.contains("networks[0].infections[0]"), "{msg}");
    }

    #[test]
    fn out_of_range_indexes_are_rejected() {
        let bad_switch = parse("[[networks]]\nvm_count = 1\nswitch = 2\n").unwrap_err();
        assert!(bad_switch.to_string().contains("switch 2"), "{bad_switch}");

        let bad_vm = parse(
            r#"
                [[worm_specs]]
                family_id = "w"
                invariant_region = "x"
                mutable_region_len = 4
                polymorphic = true
                checks_existence = false
                dormancy_ticks = 0
                scan_strategy = "sweep_port_group"
                disk_write_sectors = 0
                process_name = "w.exe"
                hidden = false

                [[networks]]
                vm_count = 2
                [[networks.infections]]
                family = "w"
                vm_index = 2
            "#,
        )
        .unwrap_err();
        assert!(bad_vm.to_string().contains("vm_index 2"), "{bad_vm}");
    }

    #[test]
    fn dynamic_event_indexes_follow_the_creation_ledger() {
        let base = r#"
            [[networks]]
            vm_count = 2
        "#;
        // Index 1 exists only after the add at tick 5.
        let ok = format!(
            "{base}
            [[dynamic_events]]
            tick = 5
            action = \"add_network\"
            vm_count = 2

            [[dynamic_events]]
            tick = 6
            action = \"remove_network\"
            network_index = 1
            "
        );
        parse(&ok).unwrap();

        let early = format!(
            "{base}
            [[dynamic_events]]
            tick = 5
            action = \"remove_network\"
            network_index = 1
            "
        );
        let err = parse(&early).unwrap_err();
        assert!(err.to_string().contains("network_index 1"), "{err}");

        let twice = format!(
            "{base}
            [[dynamic_events]]
            tick = 5
            action = \"remove_network\"
            network_index = 0

            [[dynamic_events]]
            tick = 6
            action = \"remove_network\"
            network_index = 0
            "
        );
        let err = parse(&twice).unwrap_err();
        assert!(err.to_string().contains("already removed"), "{err}");

        let migrate_bad_server = format!(
            "{base}
            [[dynamic_events]]
            tick = 3
            action = \"migrate_vm\"
            network_index = 0
            vm_index = 1
            server = 2
            "
        );
        let err = parse(&migrate_bad_server).unwrap_err();
        assert!(err.to_string().contains("server 2"), "{err}");
    }

    #[test]
    fn events_must_be_sorted_by_tick() {
        let err = parse(
            r#"
                [[networks]]
                vm_count = 1

                [[dynamic_events]]
                tick = 9
                action = "migrate_vm"
                network_index = 0
                vm_index = 0
                server = 1

                [[dynamic_events]]
                tick = 3
                action = "migrate_vm"
                network_index = 0
                vm_index = 0
                server = 1
            "#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("sorted by tick"), "{err}");
    }

    #[test]
    fn build_world_seeds_declared_infections() {
        let config = parse(
            r#"
                seed = 11
                [[worm_specs]]
                family_id = "slammer"
                invariant_region = "MARK"
                mutable_region_len = 8
                polymorphic = true
                checks_existence = false
                dormancy_ticks = 0
                scan_strategy = "sweep_port_group"
                disk_write_sectors = 4
                process_name = "slammer.exe"
                hidden = false

                [[networks]]
                vm_count = 3
                software_profile = ["iis5"]
                address_books = "full"
                [[networks.infections]]
                family = "slammer"
                vm_index = 1
            "#,
        )
        .unwrap();
        let (world, ledger) = build_world(&config).unwrap();
        assert_eq!(ledger.networks.len(), 1);
        assert_eq!(ledger.seeded.len(), 1);
        let seeded = &ledger.seeded[0];
        assert_eq!(seeded.family, "slammer");
        let guest = world.guest(seeded.vm).unwrap();
        assert!(guest.infections.contains_key("slammer"));
        // Address books cover the two peers.
        assert_eq!(world.address_books[&seeded.vm].len(), 2);
        let truth = ground_truth(&ledger.seeded);
        assert_eq!(truth[&ledger.networks[0]].len(), 1);
        // Same scenario, same seed: identical payload bytes.
        let (world2, ledger2) = build_world(&config).unwrap();
        assert_eq!(
            world.guest(seeded.vm).unwrap().infections["slammer"].payload,
            world2.guest(ledger2.seeded[0].vm).unwrap().infections["slammer"].payload,
        );
    }
}
