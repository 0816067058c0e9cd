//! Packet-type design, verification and simulation of device-to-device coded
//! caching schemes with reduced subpacketization.
pub mod combinat;
pub mod designs;
pub mod engine;
pub mod fscalc;
pub mod search;
pub mod typing;

pub use combinat::CombinatError;
pub use designs::{DesignError, DesignSpec, DpdaMode, SpecialKind, Theorem1Variant};
pub use engine::{
    build_plan, DeliverySession, EngineError, PlanError, SchemePlan, SimulationConfig,
    SystemParams,
};
pub use fscalc::{FsEntry, FsError, FsTable, GlobalFs, McOutcome, McTable, TxRule, ZeroPolicy};
pub use typing::{Grouping, MGroupStructure, TypeVector, TypingError, UniqueSet, UserSet};

/// Environment variable capping worker threads for parallel sweeps.
pub const THREADS_ENV: &str = "PT_CACHE_THREADS";

/// Runs `f` on a rayon pool limited by `PT_CACHE_THREADS` when it is set.
pub fn with_thread_pool<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0);
    match cap.and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}
