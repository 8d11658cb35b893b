//! The Mamba block: causal depthwise convolution, selective state-space
//! scan, gating and RMS pre-normalization.

mod bench;
mod block;
mod conv;
mod norm;
mod scan;

pub use bench::{time_scan, ScanTiming};
pub use block::{
    mamba_block_forward, mamba_stack_forward, randomize_block, MambaBlockParams, MambaDims, DELTA_INIT_RANGE,
};
pub use conv::causal_depthwise_conv1d;
pub use norm::{rmsnorm, RMS_EPS};
pub use scan::{
    affine_scan_inclusive, scan_backward, scan_forward, scan_forward_associative, selective_scan,
    selective_scan_associative, selective_scan_op, ScanDims, ScanTrace, SsmScanInputs,
};
