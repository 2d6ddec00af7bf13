//! Lexicographic indexing of permutations.

use crate::error::{Error, Result};

pub fn factorial(n: usize) -> usize {
    (1..=n).product()
}

/// The `id`-th permutation of `0..n` in lexicographic order.
pub fn permutation_from_index(n: usize, id: usize) -> Result<Vec<usize>> {
    let total = factorial(n);
    if id >= total {
        return Err(Error::invalid(format!(
            "permutation id {id} out of range for n={n} ({total} permutations)"
        )));
    }
    let mut pool: Vec<usize> = (0..n).collect();
    let mut rem = id;
    let mut out = Vec::with_capacity(n);
    for k in (0..n).rev() {
        let f = factorial(k);
        out.push(pool.remove(rem / f));
        rem %= f;
    }
    Ok(out)
}

/// Inverse of [`permutation_from_index`].
pub fn permutation_index(perm: &[usize]) -> Result<usize> {
    let n = perm.len();
    let mut seen = vec![false; n];
    let mut id = 0;
    for (pos, &v) in perm.iter().enumerate() {
        if v >= n || seen[v] {
            return Err(Error::invalid(format!("{perm:?} is not a permutation")));
        }
        let smaller_unused = (0..v).filter(|&u| !seen[u]).count();
        id += smaller_unused * factorial(n - 1 - pos);
        seen[v] = true;
    }
    Ok(id)
}

pub fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (pos, &v) in perm.iter().enumerate() {
        inv[v] = pos;
    }
    inv
}
