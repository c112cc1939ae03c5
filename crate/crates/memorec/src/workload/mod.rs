//! Workload generation: navigation specifications, deterministic multi-user
//! request sequences, and the synthetic application that turns request logs
//! into labeled execution traces.

mod gen;
mod nav;
mod synth;

pub use gen::{
    generate_workload, Budget, GenError, ParamDecl, RequestEntry, RequestLog, WorkloadConfig,
};
pub use nav::{load_navigation, NavError, NavigationSpec, RequestKind};
pub use synth::{
    execute_synthetic, AppError, Behavior, MethodNode, RequestSpec, SideEffect, SyntheticApp,
};

/// Deterministic seed derivation so that independent random streams (per
/// user, per phase) never share state. SplitMix64 over the xor of master
/// seed and stream tag.
pub(crate) fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
