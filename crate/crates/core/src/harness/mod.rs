//! Synthetic scenes and the evaluation harness behind the CLI: alignment
//! error, effective receptive fields, scaling benchmarks and the invariant suite.

mod align;
mod bench;
mod checks;
mod erf;
mod fuse;
mod report;
mod scene;
mod selftest;

pub use align::{alignment_batch, alignment_errors, run_alignment_eval, scene_config_text, staged_voxels, AlignmentBatch, AlignmentStats};
pub use bench::{attention_forward, bench_scaling, loglog_slope, median_ms, BenchOptions, BenchResult};
pub use checks::{centroid_drift, conflict_trial, curve_walk, CurveWalk};
pub use erf::{erf_csv, erf_pgm, lift_features, run_erf_eval, scene_tokens, ErfEval, ErfOptions, ErfVariant, SceneTokens};
pub use fuse::{run_fuse, FuseOptions, FuseOutput};
pub use report::{config_hash, MetricsReport, Provenance, REPORT_SCHEMA};
pub use scene::{default_camera, synth_scene, Aabb, PixelMask, Scene, SceneSpec};
pub use selftest::{
    block_gradient_error, causal_leaks, equivariance_error, local_leaks, random_tokens, scan_gradient_error, scan_oracle_errors, selftest,
};
