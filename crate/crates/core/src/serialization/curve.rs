//! Space-filling curves over a `2^b` cube: Hilbert (transpose form), Z-order and
//! plain lexicographic coordinate order.

use crate::error::{Error, Result};

pub const MAX_ORDER: u32 = 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paradigm {
    Hilbert,
    Zorder,
    Coordinate,
}

impl std::str::FromStr for Paradigm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hilbert" => Ok(Paradigm::Hilbert),
            "zorder" | "z-order" | "morton" => Ok(Paradigm::Zorder),
            "coord" | "coordinate" => Ok(Paradigm::Coordinate),
            other => Err(Error::invalid(format!("unknown curve paradigm '{other}'"))),
        }
    }
}

impl Paradigm {
    pub fn as_str(self) -> &'static str {
        match self {
            Paradigm::Hilbert => "hilbert",
            Paradigm::Zorder => "zorder",
            Paradigm::Coordinate => "coord",
        }
    }
}

/// A curve paradigm together with its order `b` (grid side `2^b`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CurveOrder {
    paradigm: Paradigm,
    order: u32,
}

impl CurveOrder {
    pub fn new(paradigm: Paradigm, order: u32) -> Result<Self> {
        if !(1..=MAX_ORDER).contains(&order) {
            return Err(Error::invalid(format!("curve order must be in 1..={MAX_ORDER}, got {order}")));
        }
        Ok(CurveOrder { paradigm, order })
    }

    /// Smallest order whose side covers `extent` cells.
    pub fn for_extent(paradigm: Paradigm, extent: u64) -> Result<Self> {
        let mut b = 1;
        while (1u64 << b) < extent {
            b += 1;
            if b > MAX_ORDER {
                return Err(Error::invalid(format!("extent {extent} exceeds the largest curve")));
            }
        }
        CurveOrder::new(paradigm, b)
    }

    pub fn paradigm(&self) -> Paradigm {
        self.paradigm
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn side(&self) -> u64 {
        1 << self.order
    }

    pub fn cell_count(&self) -> u64 {
        1 << (3 * self.order)
    }

    pub fn index(&self, cell: [u64; 3]) -> Result<u64> {
        match self.paradigm {
            Paradigm::Hilbert => hilbert_index(cell, self.order),
            Paradigm::Zorder => morton_index(cell, self.order),
            Paradigm::Coordinate => coordinate_index(cell, self.order),
        }
    }

    pub fn inverse(&self, index: u64) -> Result<[u64; 3]> {
        match self.paradigm {
            Paradigm::Hilbert => hilbert_inverse(index, self.order),
            Paradigm::Zorder => morton_inverse(index, self.order),
            Paradigm::Coordinate => coordinate_inverse(index, self.order),
        }
    }
}

fn check_cell(cell: [u64; 3], order: u32) -> Result<()> {
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(Error::invalid(format!("curve order {order} outside 1..={MAX_ORDER}")));
    }
    let side = 1u64 << order;
    if cell.iter().any(|&c| c >= side) {
        return Err(Error::OutOfRange(format!("cell {cell:?} outside a {side}^3 grid")));
    }
    Ok(())
}

fn check_index(index: u64, order: u32) -> Result<()> {
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(Error::invalid(format!("curve order {order} outside 1..={MAX_ORDER}")));
    }
    if index >= 1u64 << (3 * order) {
        return Err(Error::OutOfRange(format!("index {index} outside curve of order {order}")));
    }
    Ok(())
}

/// Hilbert index of a cell, via Skilling's axes-to-transpose transform.
/// The curve starts at the origin: `hilbert_index([0, 0, 0], b) == 0`.
pub fn hilbert_index(cell: [u64; 3], order: u32) -> Result<u64> {
    check_cell(cell, order)?;
    let mut x = cell;
    axes_to_transpose(&mut x, order);
    Ok(interleave_transpose(&x, order))
}

pub fn hilbert_inverse(index: u64, order: u32) -> Result<[u64; 3]> {
    check_index(index, order)?;
    let mut x = deinterleave_transpose(index, order);
    transpose_to_axes(&mut x, order);
    Ok(x)
}

fn axes_to_transpose(x: &mut [u64; 3], order: u32) {
    let n = x.len();
    let m = 1u64 << (order - 1);
    // inverse undo
    let mut q = m;
    while q > 1 {
        let p = q - 1;
        for i in 0..n {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q >>= 1;
    }
    // gray encode
    for i in 1..n {
        x[i] ^= x[i - 1];
    }
    let mut t = 0;
    let mut q = m;
    while q > 1 {
        if x[n - 1] & q != 0 {
            t ^= q - 1;
        }
        q >>= 1;
    }
    for v in x.iter_mut() {
        *v ^= t;
    }
}

fn transpose_to_axes(x: &mut [u64; 3], order: u32) {
    let n = x.len();
    let end = 2u64 << (order - 1);
    // gray decode
    let t = x[n - 1] >> 1;
    for i in (1..n).rev() {
        x[i] ^= x[i - 1];
    }
    x[0] ^= t;
    // undo excess work
    let mut q = 2;
    while q != end {
        let p = q - 1;
        for i in (0..n).rev() {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q <<= 1;
    }
}

/// Transpose form to a scalar: bit `j` of axis 0 is the most significant of each triple.
fn interleave_transpose(x: &[u64; 3], order: u32) -> u64 {
    let mut out = 0;
    for j in (0..order).rev() {
        for v in x {
            out = (out << 1) | ((v >> j) & 1);
        }
    }
    out
}

fn deinterleave_transpose(index: u64, order: u32) -> [u64; 3] {
    let mut x = [0u64; 3];
    let mut shift = 3 * order;
    for j in (0..order).rev() {
        for v in x.iter_mut() {
            shift -= 1;
            *v |= ((index >> shift) & 1) << j;
        }
    }
    x
}

/// Spreads the low 21 bits of `v` so bit `k` lands at bit `3k`.
fn spread3(v: u64) -> u64 {
    let mut x = v & 0x1f_ffff;
    x = (x | (x << 32)) & 0x001f_0000_0000_ffff;
    x = (x | (x << 16)) & 0x001f_0000_ff00_00ff;
    x = (x | (x << 8)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x << 4)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x << 2)) & 0x1249_2492_4924_9249;
    x
}

fn compact3(v: u64) -> u64 {
    let mut x = v & 0x1249_2492_4924_9249;
    x = (x | (x >> 2)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x >> 4)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x >> 8)) & 0x001f_0000_ff00_00ff;
    x = (x | (x >> 16)) & 0x001f_0000_0000_ffff;
    x = (x | (x >> 32)) & 0x1f_ffff;
    x
}

/// Z-order index: bit `k` of x at `3k`, of y at `3k+1`, of z at `3k+2`.
pub fn morton_index(cell: [u64; 3], order: u32) -> Result<u64> {
    check_cell(cell, order)?;
    Ok(spread3(cell[0]) | (spread3(cell[1]) << 1) | (spread3(cell[2]) << 2))
}

pub fn morton_inverse(index: u64, order: u32) -> Result<[u64; 3]> {
    check_index(index, order)?;
    Ok([compact3(index), compact3(index >> 1), compact3(index >> 2)])
}

/// Lexicographic `(x, y, z)` rank.
pub fn coordinate_index(cell: [u64; 3], order: u32) -> Result<u64> {
    check_cell(cell, order)?;
    Ok((cell[0] << (2 * order)) | (cell[1] << order) | cell[2])
}

pub fn coordinate_inverse(index: u64, order: u32) -> Result<[u64; 3]> {
    check_index(index, order)?;
    let mask = (1u64 << order) - 1;
    Ok([index >> (2 * order), (index >> order) & mask, index & mask])
}

/// Visits every face-adjacent cell pair of the full cube with its index distance.
fn for_each_adjacent_distance(curve: CurveOrder, mut visit: impl FnMut(u64)) {
    let side = curve.side();
    for x in 0..side {
        for y in 0..side {
            for z in 0..side {
                let here = curve.index([x, y, z]).expect("cell inside cube");
                for (dx, dy, dz) in [(1, 0, 0), (0, 1, 0), (0, 0, 1)] {
                    let other = [x + dx, y + dy, z + dz];
                    if other.iter().all(|&c| c < side) {
                        visit(here.abs_diff(curve.index(other).expect("cell inside cube")));
                    }
                }
            }
        }
    }
}

/// Mean `|index(p) - index(q)|` over all face-adjacent cell pairs of the full cube.
pub fn mean_adjacent_index_distance(curve: CurveOrder) -> f64 {
    let (mut total, mut pairs) = (0.0, 0u64);
    for_each_adjacent_distance(curve, |d| {
        total += d as f64;
        pairs += 1;
    });
    total / pairs as f64
}

/// Mean `log2 |index(p) - index(q)|` over all face-adjacent cell pairs.
pub fn mean_adjacent_log_distance(curve: CurveOrder) -> f64 {
    let (mut total, mut pairs) = (0.0, 0u64);
    for_each_adjacent_distance(curve, |d| {
        total += (d as f64).log2();
        pairs += 1;
    });
    total / pairs as f64
}
