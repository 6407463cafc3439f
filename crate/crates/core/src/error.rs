//! Crate-wide error type.

use crate::ids::{GroupId, NetworkId, ServerId, SnapshotId, SwitchId, VmId};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown server {0}")]
    UnknownServer(ServerId),
    #[error("unknown switch {0}")]
    UnknownSwitch(SwitchId),
    #[error("unknown port group {0}")]
    UnknownGroup(GroupId),
    #[error("unknown network {0}")]
    UnknownNetwork(NetworkId),
    #[error("unknown vm {0}")]
    UnknownVm(VmId),
    #[error("vm {vm} is already a member of {group}")]
    AlreadyAttached { vm: VmId, group: GroupId },
    #[error("vm {vm} is not a member of {group}")]
    NotAMember { vm: VmId, group: GroupId },
    #[error("server {server} is at capacity ({capacity} VMs)")]
    CapacityExceeded { server: ServerId, capacity: u32 },
    #[error("no server has free capacity for a new VM")]
    NoPlacement,
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("unknown worm family {0:?}")]
    UnknownFamily(String),
    #[error("vm {0} has been destroyed")]
    VmDestroyed(VmId),
    #[error("snapshot {snapshot} does not belong to vm {vm}")]
    ForeignSnapshot { snapshot: SnapshotId, vm: VmId },
    #[error("anomaly report for {vm} is stale: VM was restored after the report was taken")]
    StaleReport { vm: VmId },
    #[error("snapshot was taken from template {snapshot:?} but baseline is for {baseline:?}")]
    TemplateMismatch { snapshot: String, baseline: String },
    #[error("rotate_restore called outside the paired phase")]
    NotPaired,
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("collection store: {0}")]
    Storage(#[from] std::io::Error),
}

impl Error {
    /// Helper for scenario validation errors that must name the offending field.
    pub fn scenario(msg: impl Into<String>) -> Self {
        Error::Scenario(msg.into())
    }
}
