//! Generation orders, conditioning masks and absorbing-state substitution.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// A generation order in rank form: `ranks[i]` is the 1-based step at which
/// dimension `i` is generated.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation {
    ranks: Vec<u32>,
}

impl Permutation {
    pub fn from_ranks(ranks: Vec<u32>) -> Result<Self> {
        let d = ranks.len();
        if d == 0 {
            return Err(Error::InvalidDimension(0));
        }
        let mut seen = vec![false; d];
        for &r in &ranks {
            let r = r as usize;
            if r == 0 || r > d || seen[r - 1] {
                return Err(Error::Format(format!("ranks are not a bijection of 1..={d}")));
            }
            seen[r - 1] = true;
        }
        Ok(Self { ranks })
    }

    /// Builds from an order list of 1-based dimensions, `order[r]` being the
    /// dimension generated at step `r + 1`.
    pub fn from_order(order: &[u32]) -> Result<Self> {
        let d = order.len();
        let mut ranks = vec![0u32; d];
        for (r, &dim) in order.iter().enumerate() {
            let dim = dim as usize;
            if dim == 0 || dim > d || ranks[dim - 1] != 0 {
                return Err(Error::Format(format!("order is not a bijection of 1..={d}")));
            }
            ranks[dim - 1] = r as u32 + 1;
        }
        Self::from_ranks(ranks)
    }

    pub fn identity(dims: usize) -> Self {
        Self { ranks: (1..=dims as u32).collect() }
    }

    pub fn dims(&self) -> usize {
        self.ranks.len()
    }

    pub fn ranks(&self) -> &[u32] {
        &self.ranks
    }

    pub fn rank(&self, dim: usize) -> usize {
        self.ranks[dim] as usize
    }

    /// Inverse permutation as 1-based dimensions in generation order.
    pub fn order(&self) -> Vec<u32> {
        let mut order = vec![0u32; self.ranks.len()];
        for (dim, &r) in self.ranks.iter().enumerate() {
            order[r as usize - 1] = dim as u32 + 1;
        }
        order
    }

    /// 0-based dimensions in generation order.
    pub fn dims_in_order(&self) -> Vec<usize> {
        self.order().into_iter().map(|d| d as usize - 1).collect()
    }
}

/// Fisher–Yates draw of a uniformly random permutation of `dims` elements.
pub fn sample_permutation(rng: &mut Rng, dims: usize) -> Result<Permutation> {
    if dims == 0 {
        return Err(Error::InvalidDimension(0));
    }
    let mut order: Vec<u32> = (1..=dims as u32).collect();
    order.shuffle(rng);
    Permutation::from_order(&order)
}

/// Conditioning mask: `true` where a dimension is already generated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, dim: usize) -> bool {
        self.bits[dim]
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// `mask[i] = ranks[i] < step` for `step` in `1..=D+1`.
pub fn mask_lt(sigma: &Permutation, step: usize) -> Result<Mask> {
    let d = sigma.dims();
    if step == 0 || step > d + 1 {
        return Err(Error::StepOutOfRange { step, max: d + 1 });
    }
    Ok(Mask::new(sigma.ranks.iter().map(|&r| (r as usize) < step).collect()))
}

/// The value unobserved dimensions decay to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AbsorbingState {
    Broadcast(u32),
    PerDim(Vec<u32>),
}

impl Default for AbsorbingState {
    fn default() -> Self {
        AbsorbingState::Broadcast(0)
    }
}

impl AbsorbingState {
    pub fn value(&self, dim: usize) -> u32 {
        match self {
            AbsorbingState::Broadcast(a) => *a,
            AbsorbingState::PerDim(v) => v[dim],
        }
    }

    pub fn fill(&self, dims: usize) -> Vec<u32> {
        (0..dims).map(|i| self.value(i)).collect()
    }
}

/// `m ⊙ x + (1 − m) ⊙ a`.
pub fn absorb_input(x: &[u32], mask: &Mask, absorbing: &AbsorbingState) -> Result<Vec<u32>> {
    if x.len() != mask.len() {
        return Err(Error::Shape(format!("input has {} dims, mask {}", x.len(), mask.len())));
    }
    if let AbsorbingState::PerDim(v) = absorbing {
        if v.len() != x.len() {
            return Err(Error::Shape(format!("absorbing state has {} dims, input {}", v.len(), x.len())));
        }
    }
    Ok(x.iter().enumerate().map(|(i, &xi)| if mask.get(i) { xi } else { absorbing.value(i) }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use std::collections::HashMap;

    #[test]
    fn single_dimension() {
        let p = sample_permutation(&mut seeded(3), 1).unwrap();
        assert_eq!(p.ranks(), &[1]);
    }

    #[test]
    fn zero_dimensions_rejected() {
        assert!(matches!(sample_permutation(&mut seeded(3), 0), Err(Error::InvalidDimension(0))));
    }

    #[test]
    fn deterministic_given_seed() {
        let a = sample_permutation(&mut seeded(99), 3).unwrap();
        let b = sample_permutation(&mut seeded(99), 3).unwrap();
        assert_eq!(a, b);
        let mut sorted = a.ranks().to_vec();
        sorted.sort();
        assert_eq!(sorted, vec![1, 2, 3]);
    }

    #[test]
    fn uniform_over_all_orders() {
        let mut rng = seeded(2024);
        let n = 10_000;
        let mut counts: HashMap<Vec<u32>, usize> = HashMap::new();
        for _ in 0..n {
            *counts.entry(sample_permutation(&mut rng, 4).unwrap().ranks().to_vec()).or_default() += 1;
        }
        assert_eq!(counts.len(), 24);
        for (_, c) in counts {
            let f = c as f64 / n as f64;
            assert!((f - 1.0 / 24.0).abs() < 0.01, "frequency {f}");
        }
    }

    #[test]
    fn figure_order_to_ranks() {
        let p = Permutation::from_order(&[3, 1, 2, 4]).unwrap();
        assert_eq!(p.ranks(), &[2, 3, 1, 4]);
        assert_eq!(p.order(), vec![3, 1, 2, 4]);
        assert_eq!(mask_lt(&p, 2).unwrap().bits(), &[false, false, true, false]);
    }

    #[test]
    fn mask_boundaries() {
        let p = Permutation::from_ranks(vec![2, 3, 1, 4]).unwrap();
        assert_eq!(mask_lt(&p, 1).unwrap().count(), 0);
        assert_eq!(mask_lt(&p, 5).unwrap().count(), 4);
        assert!(mask_lt(&p, 0).is_err());
        assert!(mask_lt(&p, 6).is_err());
    }

    #[test]
    fn invalid_ranks_rejected() {
        assert!(Permutation::from_ranks(vec![1, 1]).is_err());
        assert!(Permutation::from_ranks(vec![0, 1]).is_err());
        assert!(Permutation::from_ranks(vec![1, 3]).is_err());
    }

    #[test]
    fn absorb_examples() {
        let x = [5, 7];
        let a = AbsorbingState::Broadcast(0);
        assert_eq!(absorb_input(&x, &Mask::new(vec![true, false]), &a).unwrap(), vec![5, 0]);
        assert_eq!(absorb_input(&x, &Mask::new(vec![true, true]), &a).unwrap(), vec![5, 7]);
        assert_eq!(
            absorb_input(&x, &Mask::new(vec![false, false]), &AbsorbingState::Broadcast(9)).unwrap(),
            vec![9, 9]
        );
        assert!(absorb_input(&x, &Mask::new(vec![true]), &a).is_err());
    }

    proptest! {
        #[test]
        fn consecutive_masks_differ_at_rank_t(seed in any::<u64>(), d in 1usize..20) {
            let p = sample_permutation(&mut seeded(seed), d).unwrap();
            for t in 1..=d {
                let a = mask_lt(&p, t).unwrap();
                let b = mask_lt(&p, t + 1).unwrap();
                prop_assert_eq!(a.count(), t - 1);
                let diff: Vec<usize> = (0..d).filter(|&i| a.get(i) != b.get(i)).collect();
                prop_assert_eq!(diff.len(), 1);
                prop_assert_eq!(p.rank(diff[0]), t);
            }
            prop_assert_eq!(Permutation::from_order(&p.order()).unwrap(), p);
        }

        #[test]
        fn absorb_is_idempotent(seed in any::<u64>(), d in 1usize..12, t in 1usize..13) {
            let mut rng = seeded(seed);
            let p = sample_permutation(&mut rng, d).unwrap();
            let m = mask_lt(&p, t.min(d + 1)).unwrap();
            let x: Vec<u32> = (0..d as u32).map(|i| i * 3 + 1).collect();
            let a = AbsorbingState::Broadcast(0);
            let once = absorb_input(&x, &m, &a).unwrap();
            prop_assert_eq!(absorb_input(&once, &m, &a).unwrap(), once);
        }
    }
}
