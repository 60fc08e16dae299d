//! Reverse reconciliation: multidimensional mapping, multi-edge-type LDPC codes,
//! sum-product decoding and rate adaptation.

pub mod alist;
pub mod bench;
pub mod code;
pub mod decoder;
pub mod frame;
pub mod multidim;
pub mod rate;

pub use code::{build_met_code, gf2_rank, CodeSpec, Ensemble, NodeClass};
pub use decoder::{bp_decode, decode, leak_bits, DecodeOutcome, DEFAULT_MAX_ITER};
pub use frame::{reconcile_frame, ReconcileOptions};
pub use multidim::{multidim_map, multidim_unmap};
pub use rate::{
    choose_operating_point, effective_rate, efficiency, FerPoint, OperatingPoint, RateAdaptConfig,
};

/// Outcome of reconciling one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconciliationResult {
    pub success: bool,
    /// Bob's reference bits as recovered by Alice; present iff `success`.
    pub corrected_bits: Option<Vec<u8>>,
    pub iterations: usize,
    /// Disclosed bits: `(n − k)` syndrome bits plus the shortened values.
    pub syndrome_leak_bits: usize,
    /// The decoder met the syndrome but verification against Bob's bits
    /// failed; such frames count as failures.
    pub verification_failed: bool,
}
