//! Selective state-space model: parameters, discretization and scans.

mod params;
mod scan;

pub use params::{discretize, hippo_init, SsmParams};
pub use scan::{
    bidirectional_scan, bidirectional_scan_with, default_workers, scan_backward_cached, scan_forward_cached, selective_scan_parallel,
    selective_scan_parallel_with, selective_scan_seq, Affine, BidirMerge, ScanCache, SelectiveScan,
};
pub(crate) use scan::{merge_directions, split_merge_grad};
