//! Passive WLAN analytics: TCP speed and uplink latency estimation from
//! AP-side packet logs, a discrete-event 802.11 simulator used as the
//! oracle, and an analytical MU-MIMO/TCP throughput model.

pub mod flowsense;
pub mod mumodel;
pub mod phy;
pub mod stats;
pub mod trace;
pub mod uscope;
pub mod validate;
pub mod vst;
pub mod wlansim;

pub use phy::PhyProfile;
