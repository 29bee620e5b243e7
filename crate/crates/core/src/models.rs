//! Bundled example networks.

use crate::network::{parse_network, ReactionNetwork};

pub const TELEGRAPH: &str = include_str!("../models/telegraph.net");
pub const TELEGRAPH_FEEDBACK: &str = include_str!("../models/telegraph_feedback.net");
pub const TELEGRAPH_BURST: &str = include_str!("../models/telegraph_burst.net");
pub const PURE_BIRTH: &str = include_str!("../models/pure_birth.net");

/// Gene switching at constant rates `a(1-G)`, `b·G`, producing `P` at
/// `k1·G` and degrading it at `k2·P` (k1=2, k2=1, a=0.5, b=1).
pub fn telegraph() -> ReactionNetwork {
    parse_network(TELEGRAPH).expect("bundled telegraph model parses")
}

/// Telegraph variant with protein-enhanced activation `a(1 + P/10)(1-G)`.
pub fn telegraph_feedback() -> ReactionNetwork {
    parse_network(TELEGRAPH_FEEDBACK).expect("bundled feedback model parses")
}

/// Telegraph variant where activation also adds one `P` molecule.
pub fn telegraph_burst() -> ReactionNetwork {
    parse_network(TELEGRAPH_BURST).expect("bundled burst model parses")
}

/// Single continuous species born at unit rate.
pub fn pure_birth() -> ReactionNetwork {
    parse_network(PURE_BIRTH).expect("bundled pure-birth model parses")
}
