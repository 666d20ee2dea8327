//! Model-free augmentation by swapping independent components between
//! observed transitions.

use rand::Rng;

use crate::data::{Dataset, Transition};
use crate::env::{AdjacencyMask, MaskFn};
use crate::error::{Error, Result};

/// Children that share parents, together with all of their parents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorComponent {
    pub inputs: Vec<usize>,
    pub children: Vec<usize>,
}

/// Connected components of a mask, grouping children linked through a
/// shared parent. Each child's own state coordinate is treated as one of
/// its inputs so a component always carries the variables it rewrites.
pub fn factor_components(mask: &AdjacencyMask) -> Vec<FactorComponent> {
    let nc = mask.n_children();
    let ni = mask.n_inputs();
    let mut parent: Vec<usize> = (0..nc).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let uses = |i: usize, j: usize| mask.get(i, j) || i == j;
    for i in 0..ni {
        let users: Vec<usize> = (0..nc).filter(|&j| uses(i, j)).collect();
        for w in users.windows(2) {
            let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
            parent[a] = b;
        }
    }
    let mut comps: Vec<FactorComponent> = Vec::new();
    let mut root_of = Vec::new();
    for j in 0..nc {
        let r = find(&mut parent, j);
        match root_of.iter().position(|&x| x == r) {
            Some(k) => comps[k].children.push(j),
            None => {
                root_of.push(r);
                comps.push(FactorComponent {
                    inputs: vec![],
                    children: vec![j],
                });
            }
        }
    }
    for c in &mut comps {
        c.inputs = (0..ni)
            .filter(|&i| c.children.iter().any(|&j| uses(i, j)))
            .collect();
    }
    comps
}

/// Builds up to `n` transitions by stitching components of `base`'s factor
/// graph from independently drawn source transitions. Sources must have
/// mask `base` at their own `(s, a)`, and so must the stitched `(s, a)`;
/// other compositions are rejected. Returns fewer than `n` (with a warning)
/// when the attempt budget runs out. Rewards are left for relabeling.
pub fn coda_swap<R: Rng + ?Sized>(
    dataset: &Dataset,
    mask_fn: &dyn MaskFn,
    base: &AdjacencyMask,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Transition>> {
    let sd = dataset.state_dim;
    if base.n_children() != sd || base.n_inputs() != sd + dataset.action_dim {
        return Err(Error::DimMismatch {
            expected: sd,
            got: base.n_children(),
            context: "swap mask shape",
        });
    }
    let eligible: Vec<&Transition> = dataset
        .transitions
        .iter()
        .filter(|t| mask_fn.mask(&t.state_action()) == *base)
        .collect();
    let comps = factor_components(base);
    let mut out = Vec::with_capacity(n);
    if eligible.len() < 2 || comps.len() < 2 {
        log::warn!("no factorable pairs available for swapping");
        return Ok(out);
    }
    let max_attempts = 50 * n.max(1);
    let mut attempts = 0;
    while out.len() < n && attempts < max_attempts {
        attempts += 1;
        let first = eligible[rng.random_range(0..eligible.len())];
        let mut sa = first.state_action();
        let mut s2 = first.s_next.clone();
        for c in &comps[1..] {
            let src = eligible[rng.random_range(0..eligible.len())];
            let src_sa = src.state_action();
            for &i in &c.inputs {
                sa[i] = src_sa[i];
            }
            for &j in &c.children {
                s2[j] = src.s_next[j];
            }
        }
        if mask_fn.mask(&sa) != *base {
            continue;
        }
        out.push(Transition::new(sa[..sd].to_vec(), sa[sd..].to_vec(), s2, 0.0, false));
    }
    if out.len() < n {
        log::warn!("component swap produced {} of {n} transitions", out.len());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::NavEnv;

    #[test]
    fn nav_base_mask_has_two_components() {
        let comps = factor_components(&NavEnv::base_mask());
        assert_eq!(
            comps,
            vec![
                FactorComponent { inputs: vec![0, 2], children: vec![0] },
                FactorComponent { inputs: vec![1, 3], children: vec![1] },
            ]
        );
        assert_eq!(factor_components(&AdjacencyMask::ones(4, 2)).len(), 1);
    }
}
