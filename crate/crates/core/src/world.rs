//! Mutable simulation state: the topology plus everything that lives on it.
//!
//! `World` owns the datacenter inventory, the guest state of every VM, the
//! worm catalog, template catalog, and per-VM address books. Modules that
//! mutate several of these at once (worm engine, orchestrator, dynamic
//! events) go through it.

use std::collections::{BTreeMap, BTreeSet};

use crate::cloud::{Topology, VmRole};
use crate::error::{Error, Result};
use crate::guest::{GuestVm, TemplateSpec};
use crate::ids::{NetworkId, SwitchId, Tick, VmId};
use crate::worm::WormSpec;

#[derive(Debug, Clone)]
pub struct World {
    /// Scenario seed; every derived RNG seed mixes this in.
    pub seed: u64,
    pub topology: Topology,
    pub guests: BTreeMap<VmId, GuestVm>,
    pub worms: BTreeMap<String, WormSpec>,
    /// Per-VM harvest surface for address-book scanning worms.
    pub address_books: BTreeMap<VmId, BTreeSet<VmId>>,
    pub templates: BTreeMap<String, TemplateSpec>,
    /// Software profile each network declares; honeypot templates are
    /// matched against it.
    pub network_profiles: BTreeMap<NetworkId, BTreeSet<String>>,
}

impl World {
    pub fn new(seed: u64) -> Self {
        World {
            seed,
            topology: Topology::new(),
            guests: BTreeMap::new(),
            worms: BTreeMap::new(),
            address_books: BTreeMap::new(),
            templates: BTreeMap::new(),
            network_profiles: BTreeMap::new(),
        }
    }

    pub fn register_template(&mut self, template: TemplateSpec) {
        self.templates.insert(template.name.clone(), template);
    }

    pub fn register_worm(&mut self, spec: WormSpec) {
        self.worms.insert(spec.family_id.clone(), spec);
    }

    pub fn template(&self, name: &str) -> Result<&TemplateSpec> {
        self.templates
            .get(name)
            .ok_or_else(|| Error::UnknownTemplate(name.to_string()))
    }

    /// The template luring a software profile: largest software-set
    /// intersection wins, ties broken by template name order.
    pub fn match_template(&self, profile: &BTreeSet<String>) -> Result<&TemplateSpec> {
        self.templates
            .values()
            .max_by(|a, b| {
                let ia = a.software_set.intersection(profile).count();
                let ib = b.software_set.intersection(profile).count();
                // On equal overlap prefer the earlier name, so invert the
                // name comparison under max_by.
                ia.cmp(&ib).then_with(|| b.name.cmp(&a.name))
            })
            .ok_or_else(|| Error::UnknownTemplate("empty template catalog".to_string()))
    }

    pub fn guest(&self, vm: VmId) -> Result<&GuestVm> {
        self.guests.get(&vm).ok_or(Error::UnknownVm(vm))
    }

    pub fn guest_mut(&mut self, vm: VmId) -> Result<&mut GuestVm> {
        self.guests.get_mut(&vm).ok_or(Error::UnknownVm(vm))
    }

    /// Boots guest state for an already-placed VM from a template.
    pub fn add_guest(&mut self, vm: VmId, template: &TemplateSpec, tick: Tick) {
        self.guests
            .insert(vm, GuestVm::instantiate_from_template(vm, template, tick));
    }

    /// Creates a network declaring `profile` and boots all its customer VMs
    /// from the template matching that profile.
    pub fn create_network_with_guests(
        &mut self,
        switch: SwitchId,
        vm_count: u32,
        profile: BTreeSet<String>,
        tick: Tick,
    ) -> Result<NetworkId> {
        let template = self.match_template(&profile)?.clone();
        let net = self.topology.create_network(switch, vm_count)?;
        let vms: Vec<VmId> = self
            .topology
            .network(net)?
            .customer_vms
            .iter()
            .copied()
            .collect();
        for vm in vms {
            self.add_guest(vm, &template, tick);
        }
        self.network_profiles.insert(net, profile);
        Ok(net)
    }

    /// Gives every customer VM on `net` an address book holding all its
    /// network peers, so harvest-scanning worms can spread there.
    pub fn populate_full_address_books(&mut self, net: NetworkId) -> Result<()> {
        let vms: Vec<VmId> = self
            .topology
            .network(net)?
            .customer_vms
            .iter()
            .copied()
            .collect();
        for &vm in &vms {
            let peers: BTreeSet<VmId> = vms.iter().copied().filter(|p| *p != vm).collect();
            self.address_books.insert(vm, peers);
        }
        Ok(())
    }

    /// Tears down a network and all guest state of its customer VMs.
    /// Honeypots attached to the network's group are detached but survive;
    /// their owning inspector handles their teardown.
    pub fn remove_network(&mut self, net: NetworkId) -> Result<Vec<VmId>> {
        let destroyed = self.topology.destroy_network(net)?;
        for vm in &destroyed {
            self.guests.remove(vm);
            self.address_books.remove(vm);
        }
        for book in self.address_books.values_mut() {
            for vm in &destroyed {
                book.remove(vm);
            }
        }
        self.network_profiles.remove(&net);
        Ok(destroyed)
    }

    /// Provisions a honeypot VM running `template_name`, unattached.
    pub fn create_honeypot(&mut self, template_name: &str, tick: Tick) -> Result<VmId> {
        let template = self.template(template_name)?.clone();
        let vm = self.topology.create_vm(VmRole::Honeypot)?;
        self.add_guest(vm, &template, tick);
        Ok(vm)
    }

    pub fn destroy_honeypot(&mut self, vm: VmId) -> Result<()> {
        self.topology.destroy_vm(vm)?;
        self.guests.remove(&vm);
        self.address_books.remove(&vm);
        Ok(())
    }

    pub fn profile_of(&self, net: NetworkId) -> Result<&BTreeSet<String>> {
        self.network_profiles
            .get(&net)
            .ok_or(Error::UnknownNetwork(net))
    }

    /// The honeypot template for a network, resolved from its profile.
    pub fn template_for_network(&self, net: NetworkId) -> Result<&TemplateSpec> {
        self.match_template(self.profile_of(net)?)
    }
}
