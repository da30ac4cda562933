//! One-dimensional scan orders for sparse 3D tokens: space-filling curves and
//! local `w x w` region partitions.

mod curve;
mod region;
mod sort;

pub use curve::{
    coordinate_index, coordinate_inverse, hilbert_index, hilbert_inverse, mean_adjacent_index_distance, mean_adjacent_log_distance,
    morton_index, morton_inverse, CurveOrder, Paradigm, MAX_ORDER,
};
pub use region::{region_partition, RegionAssignment};
pub use sort::{curve_indices, sort_tokens, Permutation, Quantizer};
