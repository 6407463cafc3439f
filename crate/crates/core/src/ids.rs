//! Identifier newtypes and the deterministic seed mixer.
//!
//! Every entity id is a monotonically allocated integer so that runs are
//! reproducible; string-y names (worm families, templates, processes) stay
//! plain `String`s owned by their catalogs.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! id_newtype {
    ($(#[$doc:meta])* $name:ident, $prefix:literal) => {
        $(#[$doc])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_newtype!(
    /// A physical server hosting VMs.
    ServerId, "srv"
);
id_newtype!(
    /// A distributed virtual switch.
    SwitchId, "dvs"
);
id_newtype!(
    /// A distributed port group; the unit of traffic isolation.
    GroupId, "pg"
);
id_newtype!(
    /// A virtual network (one customer port group plus its VMs).
    NetworkId, "net"
);
id_newtype!(
    /// A virtual machine, customer or honeypot.
    VmId, "vm"
);
id_newtype!(
    /// A VM inspector created by the introspection controller.
    InspectorId, "ins"
);
id_newtype!(
    /// A point-in-time VM snapshot.
    SnapshotId, "snap"
);

/// Simulation time, a unitless tick counter starting at 0.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Tick(pub u64);

impl Tick {
    pub fn saturating_sub(self, other: Tick) -> u64 {
        self.0.saturating_sub(other.0)
    }
}

impl fmt::Display for Tick {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// splitmix64 step; the standard finalizer-quality 64-bit mixer.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a sequence of words into a single 64-bit value.
///
/// Used to derive per-event RNG seeds from (scenario seed, family, source,
/// target, tick) tuples. Stable across platforms and toolchain versions,
/// unlike `std`'s hasher.
pub fn mix64(words: &[u64]) -> u64 {
    let mut state = 0x243f_6a88_85a3_08d3; // arbitrary fixed offset
    let mut acc = 0u64;
    for &w in words {
        state ^= w;
        acc = acc.rotate_left(23) ^ splitmix64(&mut state);
    }
    splitmix64(&mut acc)
}

/// FNV-1a over a byte string, for folding names into [`mix64`] words.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
