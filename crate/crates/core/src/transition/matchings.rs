use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A set of disjoint unordered pairs drawn from `{0, .., n - 1}` together
/// with the indices left unpaired.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
    pub leftover: Vec<usize>,
}

/// Number of matchings with `pairs` pairs: `n! / (pairs! 2^pairs (n - 2 pairs)!)`.
pub fn matching_count(n: usize, pairs: usize) -> u64 {
    if 2 * pairs > n {
        return 0;
    }
    let mut count: u64 = 1;
    // choose 2*pairs elements, then count perfect matchings on them
    for i in 0..2 * pairs {
        count = count * (n - i) as u64 / (i + 1) as u64;
    }
    for k in (1..2 * pairs).step_by(2) {
        count *= k as u64;
    }
    count
}

/// All matchings of `{0, .., n - 1}` with exactly `pairs` pairs, in
/// canonical order: each pair is increasing and pairs are sorted by their
/// first element.
pub fn enumerate_partial_matchings(n: usize, pairs: usize) -> Result<Vec<Matching>> {
    if 2 * pairs > n {
        return Err(Error::TooManyPairs { n, pairs, max: n / 2 });
    }
    let mut out = Vec::with_capacity(matching_count(n, pairs) as usize);
    let mut current = Vec::with_capacity(pairs);
    let mut used = vec![false; n];
    extend(n, pairs, 0, &mut used, &mut current, &mut out);
    Ok(out)
}

fn extend(
    n: usize,
    pairs: usize,
    start: usize,
    used: &mut [bool],
    current: &mut Vec<(usize, usize)>,
    out: &mut Vec<Matching>,
) {
    if current.len() == pairs {
        let leftover = (0..n).filter(|i| !used[*i]).collect();
        out.push(Matching { pairs: current.clone(), leftover });
        return;
    }
    for i in start..n {
        if used[i] {
            continue;
        }
        used[i] = true;
        for j in i + 1..n {
            if used[j] {
                continue;
            }
            used[j] = true;
            current.push((i, j));
            extend(n, pairs, i + 1, used, current, out);
            current.pop();
            used[j] = false;
        }
        used[i] = false;
    }
}

/// `pm[mask] = sum over perfect matchings of the index set `mask` of the
/// product of `pair(i, j)` over its pairs`; zero for odd sets.
pub(crate) fn perfect_matching_sums<F: Fn(usize, usize) -> f64>(n: usize, pair: F) -> Vec<f64> {
    let size = 1usize << n;
    let mut pm = vec![0.0; size];
    pm[0] = 1.0;
    for mask in 1..size {
        if mask.count_ones() % 2 == 1 {
            continue;
        }
        let i = mask.trailing_zeros() as usize;
        let rest = mask & !(1 << i);
        let mut acc = 0.0;
        let mut bits = rest;
        while bits != 0 {
            let j = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            acc += pair(i, j) * pm[rest & !(1 << j)];
        }
        pm[mask] = acc;
    }
    pm
}
