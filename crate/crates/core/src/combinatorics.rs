//! Pairings (perfect matchings) over time-ordered point indices: enumeration,
//! linked-component decomposition, inchworm properness, and counting and
//! uniform sampling of connected pairings.
//!
//! Points are referred to by their rank in ascending time order, so every
//! predicate here only compares indices.

use std::sync::OnceLock;

use rand::Rng;

use crate::error::{Error, Result};

/// Default largest order m for which connected families may be enumerated.
pub const DEFAULT_ORDER_CAP: usize = 9;

/// Hard ceiling for full enumeration, (m−1)!! grows factorially.
pub const ENUMERATION_LIMIT: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Pairing {
    pairs: Vec<(usize, usize)>,
}

impl Pairing {
    /// Builds a pairing, ordering each pair internally and the list by first index.
    pub fn new(pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut pairs: Vec<_> = pairs
            .into_iter()
            .map(|(a, b)| if a <= b { (a, b) } else { (b, a) })
            .collect();
        pairs.sort_unstable();
        let m = 2 * pairs.len();
        let mut seen = vec![false; m];
        for &(a, b) in &pairs {
            if a == b || b >= m || seen[a] || seen[b] {
                return Err(Error::InvalidArgument(format!(
                    "{pairs:?} is not a perfect matching on 0..{m}"
                )));
            }
            seen[a] = true;
            seen[b] = true;
        }
        Ok(Self { pairs })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Number of matched points.
    pub fn points(&self) -> usize {
        2 * self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairingFamily {
    pub m: usize,
    pub members: Vec<Pairing>,
}

impl PairingFamily {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// (n)!! with the convention (−1)!! = 0!! = 1.
pub fn double_factorial(n: i64) -> u128 {
    let mut acc: u128 = 1;
    let mut k = n;
    while k > 1 {
        acc *= k as u128;
        k -= 2;
    }
    acc
}

/// All perfect matchings on `0..m`, ordered lexicographically by the partner
/// chosen for the smallest unmatched index.
pub fn enumerate_pairings(m: usize) -> Result<PairingFamily> {
    if m % 2 != 0 {
        return Err(Error::InvalidArgument(format!("cannot pair an odd number ({m}) of points")));
    }
    if m > ENUMERATION_LIMIT {
        return Err(Error::InvalidArgument(format!(
            "enumeration of {m} points exceeds the limit {ENUMERATION_LIMIT}"
        )));
    }
    let mut members = Vec::with_capacity(double_factorial(m as i64 - 1) as usize);
    let mut used = vec![false; m];
    let mut current = Vec::with_capacity(m / 2);
    fill_matchings(&mut used, &mut current, &mut members);
    Ok(PairingFamily { m, members })
}

fn fill_matchings(used: &mut [bool], current: &mut Vec<(usize, usize)>, out: &mut Vec<Pairing>) {
    let Some(first) = used.iter().position(|u| !u) else {
        out.push(Pairing { pairs: current.clone() });
        return;
    };
    used[first] = true;
    for partner in first + 1..used.len() {
        if used[partner] {
            continue;
        }
        used[partner] = true;
        current.push((first, partner));
        fill_matchings(used, current, out);
        current.pop();
        used[partner] = false;
    }
    used[first] = false;
}

/// Whether two internally ordered pairs interleave.
pub fn pairs_linked(p1: (usize, usize), p2: (usize, usize)) -> bool {
    let ((s1, s2), (t1, t2)) = (p1, p2);
    (s1 <= t1 && t1 <= s2 && s2 <= t2) || (t1 <= s1 && s1 <= t2 && t2 <= s2)
}

/// Connected components of the link graph, each block sorted, blocks ordered
/// by their smallest index.
pub fn linked_components(q: &Pairing) -> Vec<Pairing> {
    let n = q.pairs.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for a in 0..n {
        for b in a + 1..n {
            if pairs_linked(q.pairs[a], q.pairs[b]) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut blocks: Vec<(usize, Vec<(usize, usize)>)> = Vec::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        match blocks.iter_mut().find(|(r, _)| *r == root) {
            Some((_, block)) => block.push(q.pairs[i]),
            None => blocks.push((root, vec![q.pairs[i]])),
        }
    }
    // q.pairs is sorted by first index and roots are block minima, so blocks
    // already come out ordered by smallest index.
    blocks.into_iter().map(|(_, pairs)| Pairing { pairs }).collect()
}

pub fn is_connected(q: &Pairing) -> bool {
    linked_components(q).len() == 1
}

/// True iff every linked component reaches an index `≥ split`.
pub fn is_inchworm_proper(q: &Pairing, split: usize) -> bool {
    linked_components(q)
        .iter()
        .all(|block| block.pairs.iter().any(|&(_, b)| b >= split))
}

/// Connected pairings on `total_points` points.
pub fn enumerate_connected(total_points: usize) -> Result<PairingFamily> {
    if total_points < 2 || total_points % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "connected pairings need an even point count ≥ 2, got {total_points}"
        )));
    }
    let all = enumerate_pairings(total_points)?;
    let members = all.members.into_iter().filter(is_connected).collect();
    Ok(PairingFamily { m: total_points, members })
}

/// Size of the connected family with `m` integration points plus the head,
/// from N_1 = 1, N_m = (m−1)/2 · Σ_{j odd ≤ m−2} N_j N_{m−1−j}.
pub fn count_connected(m: usize) -> Result<u128> {
    if m % 2 == 0 {
        return Err(Error::InvalidArgument(format!("connected count needs odd m, got {m}")));
    }
    let mut counts = vec![0u128; m + 1];
    counts[1] = 1;
    for n in (3..=m).step_by(2) {
        let sum: u128 = (1..=n - 2).step_by(2).map(|j| counts[j] * counts[n - 1 - j]).sum();
        counts[n] = (n as u128 - 1) / 2 * sum;
    }
    Ok(counts[m])
}

/// Memoized connected families keyed by odd order m (m+1 points including
/// the head), with uniform sampling.
#[derive(Debug)]
pub struct ConnectedCatalog {
    cap: usize,
    families: Vec<OnceLock<Vec<Pairing>>>,
}

impl Default for ConnectedCatalog {
    fn default() -> Self {
        Self::new(DEFAULT_ORDER_CAP)
    }
}

impl ConnectedCatalog {
    pub fn new(cap: usize) -> Self {
        let cap = cap.min(ENUMERATION_LIMIT - 1);
        Self {
            cap,
            families: (0..=cap).map(|_| OnceLock::new()).collect(),
        }
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    /// Connected pairings on `m + 1` points for odd `m`.
    pub fn family(&self, m: usize) -> Result<&[Pairing]> {
        if m % 2 == 0 {
            return Err(Error::InvalidArgument(format!("connected order must be odd, got {m}")));
        }
        if m > self.cap {
            return Err(Error::UnsupportedOrder { order: m, cap: self.cap });
        }
        Ok(self.families[m].get_or_init(|| {
            enumerate_connected(m + 1)
                .expect("point count is even and below the enumeration limit")
                .members
        }))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, m: usize) -> Result<&Pairing> {
        let family = self.family(m)?;
        Ok(&family[rng.random_range(0..family.len())])
    }
}

/// Draws a uniformly random connected pairing on `m + 1` points.
pub fn sample_connected<'a, R: Rng + ?Sized>(
    catalog: &'a ConnectedCatalog,
    rng: &mut R,
    m: usize,
) -> Result<&'a Pairing> {
    catalog.sample(rng, m)
}
