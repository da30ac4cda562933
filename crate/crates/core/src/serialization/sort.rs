use crate::error::{Error, Result};
use crate::serialization::curve::CurveOrder;
use crate::tokens::TokenSequence;

/// Maps continuous token coordinates to integer curve cells:
/// `floor((c - origin) / cell)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantizer {
    pub origin: [f64; 3],
    pub cell: [f64; 3],
    /// Grid extent in cells; a coordinate exactly on the upper range boundary
    /// is clamped into the last cell.
    pub dims: Option<[u64; 3]>,
}

impl Quantizer {
    /// Coordinates already expressed in cells.
    pub fn cells() -> Self {
        Quantizer { origin: [0.0; 3], cell: [1.0; 3], dims: None }
    }

    pub fn quantize(&self, c: [f64; 3]) -> Result<[u64; 3]> {
        let mut out = [0u64; 3];
        for a in 0..3 {
            let f = ((c[a] - self.origin[a]) / self.cell[a]).floor();
            if !(f >= 0.0) {
                return Err(Error::OutOfRange(format!("coordinate {c:?} below the grid origin")));
            }
            let mut q = f as u64;
            if let Some(d) = self.dims {
                if q >= d[a] {
                    let upper = self.origin[a] + d[a] as f64 * self.cell[a];
                    if c[a] <= upper {
                        q = d[a] - 1;
                    } else {
                        return Err(Error::OutOfRange(format!("coordinate {c:?} beyond the grid")));
                    }
                }
            }
            out[a] = q;
        }
        Ok(out)
    }
}

/// A serialization order: `order[k]` is the token stored at curve position `k`,
/// `inverse[i]` the curve position of token `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    order: Vec<usize>,
    inverse: Vec<usize>,
}

impl Permutation {
    pub fn from_order(order: Vec<usize>) -> Result<Self> {
        if !crate::tokens::is_permutation(&order, order.len()) {
            return Err(Error::invalid("not a permutation"));
        }
        let mut inverse = vec![0; order.len()];
        for (k, &i) in order.iter().enumerate() {
            inverse[i] = k;
        }
        Ok(Permutation { order, inverse })
    }

    pub fn identity(n: usize) -> Self {
        Permutation { order: (0..n).collect(), inverse: (0..n).collect() }
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// `out[k] = items[order[k]]`.
    pub fn apply<T: Clone>(&self, items: &[T]) -> Vec<T> {
        self.order.iter().map(|&i| items[i].clone()).collect()
    }

    /// Undoes [`Permutation::apply`].
    pub fn unapply<T: Clone>(&self, sorted: &[T]) -> Vec<T> {
        self.inverse.iter().map(|&k| sorted[k].clone()).collect()
    }
}

/// Curve index of every token after quantization.
pub fn curve_indices(tokens: &TokenSequence, curve: CurveOrder, quantizer: &Quantizer) -> Result<Vec<u64>> {
    tokens.coords().iter().map(|&c| curve.index(quantizer.quantize(c)?)).collect()
}

/// Sort of tokens by curve index. Tokens sharing a cell are ordered by their
/// raw coordinates, and only exact coordinate ties fall back to storage order,
/// so the result does not depend on storage order for distinct coordinates.
pub fn sort_tokens(tokens: &TokenSequence, curve: CurveOrder, quantizer: &Quantizer) -> Result<Permutation> {
    let keys = curve_indices(tokens, curve, quantizer)?;
    let coords = tokens.coords();
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&i, &j| {
        keys[i].cmp(&keys[j]).then_with(|| (0..3).fold(std::cmp::Ordering::Equal, |o, a| o.then(coords[i][a].total_cmp(&coords[j][a]))))
    });
    Permutation::from_order(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{SeededRng, Tensor};
    use crate::serialization::curve::Paradigm;
    use crate::tokens::Modality;

    fn tokens_at(cells: &[[f64; 3]]) -> TokenSequence {
        TokenSequence::uniform(Tensor::zeros(&[cells.len(), 1]), cells.to_vec(), Modality::Lidar).unwrap()
    }

    #[test]
    fn sorted_input_gives_identity() {
        let curve = CurveOrder::new(Paradigm::Hilbert, 3).unwrap();
        let cells: Vec<[f64; 3]> = (0..20).map(|i| curve.inverse(i * 3).unwrap().map(|v| v as f64)).collect();
        let p = sort_tokens(&tokens_at(&cells), curve, &Quantizer::cells()).unwrap();
        assert_eq!(p, Permutation::identity(20));

        let reversed: Vec<[f64; 3]> = cells.iter().rev().copied().collect();
        let p = sort_tokens(&tokens_at(&reversed), curve, &Quantizer::cells()).unwrap();
        assert_eq!(p.order(), (0..20).rev().collect::<Vec<_>>().as_slice());
    }

    #[test]
    fn coordinate_paradigm_is_lexicographic() {
        let cells = [[1.0, 0.0, 0.0], [0.0, 3.0, 1.0], [0.0, 3.0, 0.0], [0.0, 0.0, 2.0]];
        let curve = CurveOrder::new(Paradigm::Coordinate, 2).unwrap();
        let p = sort_tokens(&tokens_at(&cells), curve, &Quantizer::cells()).unwrap();
        assert_eq!(p.order(), &[3, 2, 1, 0]);
    }

    #[test]
    fn ties_break_on_raw_coordinates_then_storage() {
        let cells = [[1.2, 0.0, 0.0], [0.0, 0.0, 0.0], [1.7, 0.4, 0.9], [1.0, 0.0, 0.0], [1.2, 0.0, 0.0]];
        let curve = CurveOrder::new(Paradigm::Zorder, 2).unwrap();
        let p = sort_tokens(&tokens_at(&cells), curve, &Quantizer::cells()).unwrap();
        assert_eq!(p.order(), &[1, 3, 0, 4, 2]);
    }

    #[test]
    fn out_of_grid_is_an_error() {
        let curve = CurveOrder::new(Paradigm::Hilbert, 2).unwrap();
        assert!(sort_tokens(&tokens_at(&[[4.0, 0.0, 0.0]]), curve, &Quantizer::cells()).is_err());
        assert!(sort_tokens(&tokens_at(&[[-0.5, 0.0, 0.0]]), curve, &Quantizer::cells()).is_err());
    }

    #[test]
    fn quantizer_clamps_upper_boundary() {
        let q = Quantizer { origin: [0.0; 3], cell: [0.5; 3], dims: Some([4, 4, 4]) };
        assert_eq!(q.quantize([2.0, 0.49, 0.5]).unwrap(), [3, 0, 1]);
        assert!(q.quantize([2.01, 0.0, 0.0]).is_err());
    }

    #[test]
    fn permutation_then_inverse_restores_order() {
        let mut rng = SeededRng::new(11);
        let cells: Vec<[f64; 3]> = (0..100).map(|_| [rng.uniform(0.0, 32.0), rng.uniform(0.0, 32.0), rng.uniform(0.0, 32.0)]).collect();
        let curve = CurveOrder::new(Paradigm::Hilbert, 5).unwrap();
        let p = sort_tokens(&tokens_at(&cells), curve, &Quantizer::cells()).unwrap();
        let ids: Vec<usize> = (0..100).collect();
        assert_eq!(p.unapply(&p.apply(&ids)), ids);
        let keys = curve_indices(&tokens_at(&cells), curve, &Quantizer::cells()).unwrap();
        let sorted = p.apply(&keys);
        assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
    }
}
