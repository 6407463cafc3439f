//! Cloud topology: physical servers, distributed switches, port groups,
//! virtual networks, and VM placement.
//!
//! The one rule everything else leans on: traffic is confined to a port
//! group. Two VMs can talk iff they share a group, and co-location on a
//! physical server grants nothing. Ids are allocated from monotonic
//! counters so that identical build sequences produce identical
//! topologies.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{GroupId, NetworkId, ServerId, SwitchId, VmId};

/// A physical host. `capacity` bounds resident VMs; `None` is unlimited.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhysicalServer {
    pub id: ServerId,
    pub capacity: Option<u32>,
    pub resident: BTreeSet<VmId>,
}

/// A distributed virtual switch owning a set of port groups.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistributedSwitch {
    pub id: SwitchId,
    pub port_groups: BTreeSet<GroupId>,
}

/// What a port group is for. Customer groups back virtual networks;
/// pair links are the private wires between two honeypots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupKind {
    Customer,
    PairLink,
}

/// A distributed port group: the isolation domain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PortGroup {
    pub id: GroupId,
    pub switch: SwitchId,
    pub kind: GroupKind,
    pub members: BTreeSet<VmId>,
}

/// A virtual network: one customer port group plus the customer VMs on it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VirtualNetwork {
    pub id: NetworkId,
    pub port_group: GroupId,
    pub customer_vms: BTreeSet<VmId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VmRole {
    Customer,
    Honeypot,
}

/// A VM's placement and role. Network reachability lives in the port
/// groups, not here.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VmHandle {
    pub id: VmId,
    pub host: ServerId,
    pub role: VmRole,
}

/// The datacenter inventory. All mutation goes through methods that keep
/// the membership and placement invariants.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Topology {
    servers: BTreeMap<ServerId, PhysicalServer>,
    switches: BTreeMap<SwitchId, DistributedSwitch>,
    groups: BTreeMap<GroupId, PortGroup>,
    networks: BTreeMap<NetworkId, VirtualNetwork>,
    vms: BTreeMap<VmId, VmHandle>,
    next_server: u64,
    next_switch: u64,
    next_group: u64,
    next_network: u64,
    next_vm: u64,
    placement_cursor: u64,
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_server(&mut self, capacity: Option<u32>) -> ServerId {
        self.next_server += 1;
        let id = ServerId(self.next_server);
        self.servers.insert(
            id,
            PhysicalServer {
                id,
                capacity,
                resident: BTreeSet::new(),
            },
        );
        id
    }

    pub fn add_switch(&mut self) -> SwitchId {
        self.next_switch += 1;
        let id = SwitchId(self.next_switch);
        self.switches.insert(
            id,
            DistributedSwitch {
                id,
                port_groups: BTreeSet::new(),
            },
        );
        id
    }

    /// Creates a port group on `switch` plus `vm_count` fresh customer VMs
    /// attached to it, and registers the network in the inventory.
    pub fn create_network(&mut self, switch: SwitchId, vm_count: u32) -> Result<NetworkId> {
        if !self.switches.contains_key(&switch) {
            return Err(Error::UnknownSwitch(switch));
        }
        let group = self.create_port_group(switch, GroupKind::Customer)?;
        self.next_network += 1;
        let id = NetworkId(self.next_network);
        let mut customer_vms = BTreeSet::new();
        for _ in 0..vm_count {
            let vm = self.create_vm(VmRole::Customer)?;
            self.attach_vm(vm, group)?;
            customer_vms.insert(vm);
        }
        self.networks.insert(
            id,
            VirtualNetwork {
                id,
                port_group: group,
                customer_vms,
            },
        );
        Ok(id)
    }

    /// Removes a network, its port group, and its customer VMs. Non-customer
    /// members (a probing honeypot, say) are detached but survive.
    /// Returns the destroyed customer VM ids so callers can drop guest state.
    pub fn destroy_network(&mut self, id: NetworkId) -> Result<Vec<VmId>> {
        let net = self.networks.remove(&id).ok_or(Error::UnknownNetwork(id))?;
        let members: Vec<VmId> = self.group(net.port_group)?.members.iter().copied().collect();
        for vm in members {
            self.detach_vm(vm, net.port_group)?;
        }
        self.destroy_port_group(net.port_group)?;
        let destroyed: Vec<VmId> = net.customer_vms.iter().copied().collect();
        for &vm in &destroyed {
            self.destroy_vm(vm)?;
        }
        Ok(destroyed)
    }

    /// Creates an empty port group on `switch`.
    pub fn create_port_group(&mut self, switch: SwitchId, kind: GroupKind) -> Result<GroupId> {
        let sw = self
            .switches
            .get_mut(&switch)
            .ok_or(Error::UnknownSwitch(switch))?;
        self.next_group += 1;
        let id = GroupId(self.next_group);
        sw.port_groups.insert(id);
        self.groups.insert(
            id,
            PortGroup {
                id,
                switch,
                kind,
                members: BTreeSet::new(),
            },
        );
        Ok(id)
    }

    pub fn destroy_port_group(&mut self, id: GroupId) -> Result<()> {
        let group = self.groups.remove(&id).ok_or(Error::UnknownGroup(id))?;
        if let Some(sw) = self.switches.get_mut(&group.switch) {
            sw.port_groups.remove(&id);
        }
        Ok(())
    }

    /// Creates a VM with no network attachment, placed round-robin over
    /// servers with free capacity.
    pub fn create_vm(&mut self, role: VmRole) -> Result<VmId> {
        let server_ids: Vec<ServerId> = self.servers.keys().copied().collect();
        if server_ids.is_empty() {
            return Err(Error::NoPlacement);
        }
        let n = server_ids.len() as u64;
        let mut host = None;
        for offset in 0..n {
            let candidate = server_ids[((self.placement_cursor + offset) % n) as usize];
            let server = &self.servers[&candidate];
            let full = server
                .capacity
                .is_some_and(|cap| server.resident.len() as u32 >= cap);
            if !full {
                host = Some(candidate);
                self.placement_cursor = (self.placement_cursor + offset + 1) % n;
                break;
            }
        }
        let host = host.ok_or(Error::NoPlacement)?;
        self.next_vm += 1;
        let id = VmId(self.next_vm);
        self.vms.insert(id, VmHandle { id, host, role });
        self.servers.get_mut(&host).unwrap().resident.insert(id);
        Ok(id)
    }

    /// Removes a VM from every port group and from its host.
    pub fn destroy_vm(&mut self, vm: VmId) -> Result<()> {
        let handle = self.vms.remove(&vm).ok_or(Error::UnknownVm(vm))?;
        for group in self.groups.values_mut() {
            group.members.remove(&vm);
        }
        if let Some(server) = self.servers.get_mut(&handle.host) {
            server.resident.remove(&vm);
        }
        Ok(())
    }

    pub fn attach_vm(&mut self, vm: VmId, group: GroupId) -> Result<()> {
        if !self.vms.contains_key(&vm) {
            return Err(Error::UnknownVm(vm));
        }
        let kind = self.group(group)?.kind;
        if self.group(group)?.members.contains(&vm) {
            return Err(Error::AlreadyAttached { vm, group });
        }
        if kind == GroupKind::Customer {
            // At most one customer port group per VM; pair links don't count.
            if let Some(existing) = self
                .groups
                .values()
                .find(|g| g.kind == GroupKind::Customer && g.members.contains(&vm))
            {
                return Err(Error::AlreadyAttached {
                    vm,
                    group: existing.id,
                });
            }
        }
        self.groups.get_mut(&group).unwrap().members.insert(vm);
        Ok(())
    }

    pub fn detach_vm(&mut self, vm: VmId, group: GroupId) -> Result<()> {
        if !self.vms.contains_key(&vm) {
            return Err(Error::UnknownVm(vm));
        }
        let g = self.groups.get_mut(&group).ok_or(Error::UnknownGroup(group))?;
        if !g.members.remove(&vm) {
            return Err(Error::NotAMember { vm, group });
        }
        Ok(())
    }

    /// Moves a VM to another physical server. Port-group memberships, and
    /// therefore reachability, are untouched.
    pub fn migrate_vm(&mut self, vm: VmId, dest: ServerId) -> Result<()> {
        let current = self.vm(vm)?.host;
        if current == dest {
            return Ok(());
        }
        let server = self.servers.get(&dest).ok_or(Error::UnknownServer(dest))?;
        if let Some(cap) = server.capacity {
            if server.resident.len() as u32 >= cap {
                return Err(Error::CapacityExceeded {
                    server: dest,
                    capacity: cap,
                });
            }
        }
        self.servers.get_mut(&current).unwrap().resident.remove(&vm);
        self.servers.get_mut(&dest).unwrap().resident.insert(vm);
        self.vms.get_mut(&vm).unwrap().host = dest;
        Ok(())
    }

    /// True iff the two VMs share a port group. Same-host placement grants
    /// nothing; a VM can always reach itself.
    pub fn can_communicate(&self, a: VmId, b: VmId) -> Result<bool> {
        self.vm(a)?;
        self.vm(b)?;
        if a == b {
            return Ok(true);
        }
        Ok(self.shared_group(a, b).is_some())
    }

    /// The lowest-id port group containing both VMs, if any.
    pub fn shared_group(&self, a: VmId, b: VmId) -> Option<GroupId> {
        self.groups
            .values()
            .find(|g| g.members.contains(&a) && g.members.contains(&b))
            .map(|g| g.id)
    }

    /// All port groups the VM is a member of, in id order.
    pub fn groups_of(&self, vm: VmId) -> Vec<GroupId> {
        self.groups
            .values()
            .filter(|g| g.members.contains(&vm))
            .map(|g| g.id)
            .collect()
    }

    /// Every VM sharing at least one port group with `vm`, in id order.
    pub fn peers_of(&self, vm: VmId) -> Vec<VmId> {
        let mut peers = BTreeSet::new();
        for group in self.groups.values() {
            if group.members.contains(&vm) {
                peers.extend(group.members.iter().copied());
            }
        }
        peers.remove(&vm);
        peers.into_iter().collect()
    }

    /// Live networks in id order.
    pub fn list_networks(&self) -> Vec<&VirtualNetwork> {
        self.networks.values().collect()
    }

    pub fn network(&self, id: NetworkId) -> Result<&VirtualNetwork> {
        self.networks.get(&id).ok_or(Error::UnknownNetwork(id))
    }

    pub fn group(&self, id: GroupId) -> Result<&PortGroup> {
        self.groups.get(&id).ok_or(Error::UnknownGroup(id))
    }

    pub fn vm(&self, id: VmId) -> Result<&VmHandle> {
        self.vms.get(&id).ok_or(Error::UnknownVm(id))
    }

    pub fn vm_exists(&self, id: VmId) -> bool {
        self.vms.contains_key(&id)
    }

    pub fn server(&self, id: ServerId) -> Result<&PhysicalServer> {
        self.servers.get(&id).ok_or(Error::UnknownServer(id))
    }

    pub fn server_ids(&self) -> Vec<ServerId> {
        self.servers.keys().copied().collect()
    }

    /// All VM ids in id order.
    pub fn vm_ids(&self) -> Vec<VmId> {
        self.vms.keys().copied().collect()
    }

    /// The network whose customer port group is `group`, if any.
    pub fn network_of_group(&self, group: GroupId) -> Option<NetworkId> {
        self.networks
            .values()
            .find(|n| n.port_group == group)
            .map(|n| n.id)
    }

    /// The network a VM belongs to via its customer port group membership.
    pub fn network_of_vm(&self, vm: VmId) -> Option<NetworkId> {
        self.networks
            .values()
            .find(|n| self.groups[&n.port_group].members.contains(&vm))
            .map(|n| n.id)
    }
}
