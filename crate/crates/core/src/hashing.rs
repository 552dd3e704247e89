//! Hashing with linear probing on a circular table.
//!
//! Urns and addresses are 1-based. A ball hashed to an occupied urn moves
//! forward (wrapping from `m` to `1`) to the next empty urn; the distance
//! moved is its displacement.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{IntegerLaw, LawSampler};
use crate::error::{domain, Error, Result};

/// Default cap on `n` for [`enumerate_all`]; `(n+1)^n = 9^8 ≈ 4.3e7`.
pub const DEFAULT_ENUMERATION_CAP: usize = 8;
/// Hard budget on visited sequences for any enumeration.
pub const ENUMERATION_BUDGET: u64 = 1_000_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashSequence {
    m: usize,
    addresses: Vec<usize>,
}

impl HashSequence {
    pub fn new(m: usize, addresses: Vec<usize>) -> Result<Self> {
        if addresses.len() >= m {
            return Err(domain(format!(
                "hash sequence of size {} needs a table longer than {m}",
                addresses.len()
            )));
        }
        if let Some(bad) = addresses.iter().find(|&&a| a == 0 || a > m) {
            return Err(domain(format!("address {bad} outside [1, {m}]")));
        }
        Ok(HashSequence { m, addresses })
    }

    /// `n` addresses drawn uniformly from `[1, m]`.
    pub fn random<R: Rng + ?Sized>(m: usize, n: usize, rng: &mut R) -> Result<Self> {
        let addresses = (0..n).map(|_| rng.gen_range(1..=m)).collect();
        HashSequence::new(m, addresses)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.addresses.len()
    }

    pub fn addresses(&self) -> &[usize] {
        &self.addresses
    }

    /// Same table, addresses reordered by `perm` (`perm[i]` is the source index).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        HashSequence {
            m: self.m,
            addresses: perm.iter().map(|&i| self.addresses[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsertionOutcome {
    pub m: usize,
    /// Displacement of each ball, in insertion order.
    pub displacements: Vec<u64>,
    /// Final urn of each ball.
    pub cells: Vec<usize>,
    /// `occupancy[u - 1]` is the ball sitting in urn `u`, if any.
    pub occupancy: Vec<Option<usize>>,
    pub total: u64,
}

/// Sequential insertion with forward circular probing.
pub fn insert_all(seq: &HashSequence) -> InsertionOutcome {
    let m = seq.m;
    let mut occupancy = vec![None; m];
    let mut displacements = Vec::with_capacity(seq.n());
    let mut cells = Vec::with_capacity(seq.n());
    for (ball, &addr) in seq.addresses.iter().enumerate() {
        let mut cell = addr - 1;
        let mut moved = 0u64;
        while occupancy[cell].is_some() {
            cell = (cell + 1) % m;
            moved += 1;
        }
        occupancy[cell] = Some(ball);
        displacements.push(moved);
        cells.push(cell + 1);
    }
    let total = displacements.iter().sum();
    InsertionOutcome {
        m,
        displacements,
        cells,
        occupancy,
        total,
    }
}

/// Arrival counts, partial sums, and attempt counts of an almost-full table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplacementProfile {
    /// `z[i-1]`: balls hashed to urn `i`.
    pub z: Vec<u64>,
    /// `sigma[i] = z_1 + … + z_i`, with `sigma[0] = 0`.
    pub sigma: Vec<u64>,
    /// `h[i-1]`: balls that attempt urn `i`.
    pub h: Vec<u64>,
    pub total: u64,
}

/// Total displacement from the arrival profile, `d = Σ H_i − n` with
/// `H_i = Σ_i − i − min_{k<i}(Σ_k − k) + 1`.
///
/// The minimum runs over the periodic extension of `Σ_k − k`; one period
/// back shifts it by `m − n`. Without the wrap term the identity fails for
/// sequences whose blocks straddle urn `m`.
pub fn displacement_via_profile(seq: &HashSequence) -> Result<DisplacementProfile> {
    if seq.m != seq.n() + 1 {
        return Err(domain(format!(
            "profile formula needs m = n + 1, got m = {} and n = {}",
            seq.m,
            seq.n()
        )));
    }
    let mut z = vec![0u64; seq.m];
    for &a in &seq.addresses {
        z[a - 1] += 1;
    }
    let (sigma, h) = attempt_counts(&z, seq.n() as u64);
    let total = h.iter().sum::<u64>() - seq.n() as u64;
    Ok(DisplacementProfile { z, sigma, h, total })
}

/// `(Σ, H)` for arrival counts `z` over a table of `z.len()` urns holding `n` balls.
fn attempt_counts(z: &[u64], n: u64) -> (Vec<u64>, Vec<u64>) {
    let m = z.len();
    let shift = m as i64 - n as i64;
    let mut sigma = Vec::with_capacity(m + 1);
    sigma.push(0u64);
    for &c in z {
        let last = *sigma.last().unwrap();
        sigma.push(last + c);
    }
    let w: Vec<i64> = sigma
        .iter()
        .enumerate()
        .map(|(k, &s)| s as i64 - k as i64)
        .collect();
    // suffix[i] = min_{i <= k <= m} w_k
    let mut suffix = vec![i64::MAX; m + 2];
    for k in (0..=m).rev() {
        suffix[k] = suffix[k + 1].min(w[k]);
    }
    let mut prefix = i64::MAX;
    let mut h = Vec::with_capacity(m);
    for i in 1..=m {
        prefix = prefix.min(w[i - 1]);
        let low = prefix.min(suffix[i] + shift);
        h.push((w[i] - low + 1) as u64);
    }
    (sigma, h)
}

/// Total displacement of a table of `z.len()` urns with `z` arrivals per urn.
pub(crate) fn displacement_from_counts(z: &[u64]) -> u64 {
    let n: u64 = z.iter().sum();
    if n == 0 {
        return 0;
    }
    let m = z.len();
    // Rotate so the scan starts at the first minimum of Σ_k − k over one
    // period (k < m); earlier periods sit m − n higher, so the periodic
    // minimum becomes the running prefix minimum.
    let mut w = 0i64;
    let mut best = 0i64;
    let mut best_at = 0usize;
    for (k, &c) in z[..m - 1].iter().enumerate() {
        w += c as i64 - 1;
        if w < best {
            best = w;
            best_at = k + 1;
        }
    }
    let mut sum_h = 0u64;
    let mut wk = 0i64;
    let mut low = 0i64;
    for step in 0..m {
        let c = z[(best_at + step) % m];
        let wi = wk + c as i64 - 1;
        // H = Σ_i − i − min_{k<i}(Σ_k − k) + 1
        sum_h += (wi - low + 1) as u64;
        wk = wi;
        low = low.min(wk);
    }
    sum_h - n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    /// First urn of the block (occupied unless the block has length 1).
    pub first_cell: usize,
    /// The trailing empty urn.
    pub empty_cell: usize,
    /// Number of urns, counting the trailing empty one.
    pub length: usize,
    /// Sum of displacements of balls whose final urn lies in the block.
    pub displacement: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockDecomposition {
    /// Ordered by trailing empty urn.
    pub blocks: Vec<Block>,
}

impl BlockDecomposition {
    /// `(length, displacement)` pairs sorted, i.e. the block multiset.
    pub fn multiset(&self) -> Vec<(u64, u64)> {
        let mut v: Vec<(u64, u64)> = self
            .blocks
            .iter()
            .map(|b| (b.length as u64, b.displacement))
            .collect();
        v.sort_unstable();
        v
    }
}

pub fn block_decompose(outcome: &InsertionOutcome) -> Result<BlockDecomposition> {
    let m = outcome.m;
    let empties: Vec<usize> = (0..m).filter(|&c| outcome.occupancy[c].is_none()).collect();
    if empties.is_empty() {
        return Err(domain("block decomposition needs at least one empty urn"));
    }
    // block id of every urn: the index of the first empty urn at or after it
    let mut owner = vec![0usize; m];
    let mut next = 0usize;
    for c in 0..m {
        owner[c] = if c <= empties[empties.len() - 1] {
            while empties[next] < c {
                next += 1;
            }
            next
        } else {
            0
        };
    }
    let mut disp = vec![0u64; empties.len()];
    for (ball, &cell) in outcome.cells.iter().enumerate() {
        disp[owner[cell - 1]] += outcome.displacements[ball];
    }
    let blocks = empties
        .iter()
        .enumerate()
        .map(|(b, &e)| {
            let prev = if b == 0 { empties[empties.len() - 1] } else { empties[b - 1] };
            let length = if empties.len() == 1 {
                m
            } else {
                (e + m - prev) % m
            };
            Block {
                first_cell: (prev + 1) % m + 1,
                empty_cell: e + 1,
                length,
                displacement: disp[b],
            }
        })
        .collect();
    Ok(BlockDecomposition { blocks })
}

/// Exact law of `d_{n+1,n}` as integer counts over all `(n+1)^n` sequences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplacementLaw {
    pub n: usize,
    /// `counts[d]`: sequences with total displacement `d`.
    pub counts: Vec<u64>,
    pub sequences: u64,
}

impl DisplacementLaw {
    pub fn max_displacement(&self) -> u64 {
        self.counts.iter().rposition(|&c| c > 0).unwrap_or(0) as u64
    }

    pub fn pmf(&self, d: u64) -> f64 {
        self.counts.get(d as usize).copied().unwrap_or(0) as f64 / self.sequences as f64
    }

    /// Number of sequences with displacement at least `y`.
    pub fn count_at_least(&self, y: u64) -> u64 {
        self.counts.iter().skip(y as usize).sum()
    }

    pub fn tail(&self, y: u64) -> f64 {
        self.count_at_least(y) as f64 / self.sequences as f64
    }

    pub fn mean(&self) -> f64 {
        self.counts
            .iter()
            .enumerate()
            .map(|(d, &c)| d as f64 * c as f64)
            .sum::<f64>()
            / self.sequences as f64
    }
}

/// Odometer over all `m^n` address vectors, last digit fastest.
#[derive(Debug, Clone)]
pub struct SequenceOdometer {
    m: usize,
    digits: Vec<usize>,
    started: bool,
    done: bool,
}

impl SequenceOdometer {
    pub fn new(m: usize, n: usize) -> Self {
        SequenceOdometer {
            m,
            digits: vec![1; n],
            started: false,
            done: m == 0 && n > 0,
        }
    }

    /// Odometer over the remaining digits with a fixed prefix.
    fn with_prefix(m: usize, prefix: &[usize], n: usize) -> Self {
        let mut digits = prefix.to_vec();
        digits.resize(n, 1);
        SequenceOdometer {
            m,
            digits,
            started: false,
            done: false,
        }
    }

    /// Advances and returns the next address vector, or `None` when exhausted.
    pub fn advance(&mut self) -> Option<&[usize]> {
        self.advance_free(0)
    }

    fn advance_free(&mut self, fixed: usize) -> Option<&[usize]> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            return Some(&self.digits);
        }
        let mut pos = self.digits.len();
        loop {
            if pos == fixed {
                self.done = true;
                return None;
            }
            pos -= 1;
            if self.digits[pos] < self.m {
                self.digits[pos] += 1;
                return Some(&self.digits);
            }
            self.digits[pos] = 1;
        }
    }
}

fn check_budget(what: &str, m: usize, n: usize, budget: u64) -> Result<u64> {
    let needed = (m as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if needed > budget as u128 {
        return Err(Error::Resource {
            what: what.to_string(),
            needed,
            budget: budget as u128,
        });
    }
    Ok(needed as u64)
}

/// Exact law of `d_{n+1,n}` by visiting all `(n+1)^n` hash sequences, `n <= 8`.
pub fn enumerate_all(n: usize) -> Result<DisplacementLaw> {
    if n > DEFAULT_ENUMERATION_CAP {
        return Err(Error::Resource {
            what: format!("enumeration of d_{{{},{}}}", n + 1, n),
            needed: ((n as u128) + 1).pow(n as u32),
            budget: ((DEFAULT_ENUMERATION_CAP as u128) + 1).pow(DEFAULT_ENUMERATION_CAP as u32),
        });
    }
    enumerate_all_with_budget(n, ENUMERATION_BUDGET)
}

pub fn enumerate_all_with_budget(n: usize, budget: u64) -> Result<DisplacementLaw> {
    let m = n + 1;
    let sequences = check_budget("hash sequence enumeration", m, n, budget.min(ENUMERATION_BUDGET))?;
    let max_d = n * n.saturating_sub(1) / 2;
    if n == 0 {
        return Ok(DisplacementLaw {
            n,
            counts: vec![1],
            sequences: 1,
        });
    }
    // Work units: one per first address.
    let partials: Vec<(Vec<u64>, u64)> = (1..=m)
        .into_par_iter()
        .map(|first| {
            let mut counts = vec![0u64; max_d + 1];
            let mut visited = 0u64;
            let mut odo = SequenceOdometer::with_prefix(m, &[first], n);
            let mut z = vec![0u64; m];
            while let Some(addrs) = odo.advance_free(1) {
                z.iter_mut().for_each(|c| *c = 0);
                for &a in addrs {
                    z[a - 1] += 1;
                }
                counts[displacement_from_counts(&z) as usize] += 1;
                visited += 1;
            }
            (counts, visited)
        })
        .collect();
    let mut counts = vec![0u64; max_d + 1];
    let mut visited = 0u64;
    for (c, v) in partials {
        for (acc, x) in counts.iter_mut().zip(c) {
            *acc += x;
        }
        visited += v;
    }
    debug_assert_eq!(visited, sequences);
    Ok(DisplacementLaw {
        n,
        counts,
        sequences: visited,
    })
}

/// Law of the block multiset `{(length, displacement)}` over all `m^n`
/// sequences, as counts.
pub fn block_statistics_law(m: usize, n: usize) -> Result<BTreeMap<Vec<(u64, u64)>, u64>> {
    if n >= m {
        return Err(domain(format!("need n < m, got n = {n}, m = {m}")));
    }
    check_budget("block statistics enumeration", m, n, 100_000_000)?;
    let mut law = BTreeMap::new();
    let mut odo = SequenceOdometer::new(m, n);
    while let Some(addrs) = odo.advance() {
        let seq = HashSequence {
            m,
            addresses: addrs.to_vec(),
        };
        let blocks = block_decompose(&insert_all(&seq))?;
        *law.entry(blocks.multiset()).or_insert(0u64) += 1;
    }
    Ok(law)
}

/// One draw of the block pair `(X, Y)`: block length and in-block displacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairDraw {
    pub x: u64,
    pub y: u64,
    /// The Borel progeny hit its ceiling; `y` is then meaningless.
    pub truncated: bool,
}

/// Sampler for `(X, Y)` with `X ~ Borel(λ)` and `Y | X = l ~ d_{l,l-1}`.
#[derive(Debug, Clone)]
pub struct PairSampler {
    x: LawSampler,
    z: Vec<u64>,
}

impl PairSampler {
    pub fn new(lambda: f64) -> Result<Self> {
        Ok(PairSampler {
            x: IntegerLaw::borel(lambda)?.sampler(),
            z: Vec::new(),
        })
    }

    pub fn with_ceiling(mut self, ceiling: u64) -> Self {
        self.x = self.x.with_ceiling(ceiling);
        self
    }

    pub fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> PairDraw {
        let d = self.x.draw(rng);
        if d.truncated {
            return PairDraw {
                x: d.value,
                y: 0,
                truncated: true,
            };
        }
        PairDraw {
            x: d.value,
            y: self.displacement_given_length(d.value, rng),
            truncated: false,
        }
    }

    /// A draw of `d_{l,l-1}`: `l - 1` uniform addresses in a table of `l` urns.
    pub fn displacement_given_length<R: Rng + ?Sized>(&mut self, l: u64, rng: &mut R) -> u64 {
        if l <= 2 {
            return 0;
        }
        let l = l as usize;
        self.z.clear();
        self.z.resize(l, 0);
        for _ in 0..l - 1 {
            self.z[rng.gen_range(0..l)] += 1;
        }
        displacement_from_counts(&self.z)
    }
}

pub fn sample_pair_xy<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> Result<PairDraw> {
    Ok(PairSampler::new(lambda)?.draw(rng))
}

/// `(1,1,2,2,…,k,k,k+1,…,m_y−k)` in a table of `m_y + 1` urns; its total
/// displacement is `k(m_y − k)`.
pub fn adversarial_sequence(m_y: usize, k: usize) -> Result<HashSequence> {
    if 2 * k > m_y {
        return Err(domain(format!("need k <= m_y / 2, got k = {k}, m_y = {m_y}")));
    }
    let mut addresses = Vec::with_capacity(m_y);
    for q in 1..=k {
        addresses.push(q);
        addresses.push(q);
    }
    addresses.extend(k + 1..=m_y - k);
    HashSequence::new(m_y + 1, addresses)
}

/// `m_y! / 2^k`: distinct orderings of the adversarial multiset.
pub fn permutation_count(m_y: usize, k: usize) -> Result<BigUint> {
    if 2 * k > m_y {
        return Err(domain(format!("need k <= m_y / 2, got k = {k}, m_y = {m_y}")));
    }
    let factorial: BigUint = (1..=m_y as u64).map(BigUint::from).product();
    Ok(factorial >> k)
}

/// Smallest `n` with `n(n−1)/2 >= y`, i.e. `ceil(sqrt(2y + 1/4) + 1/2)`.
pub fn n_y_threshold(y: f64) -> Result<u64> {
    if !(y > 0.0 && y.is_finite()) {
        return Err(domain(format!("threshold needs y > 0, got {y}")));
    }
    let mut n = ((2.0 * y + 0.25).sqrt() + 0.5).ceil() as u64;
    // guard against rounding at exact triangular numbers
    let tri = |n: u64| (n * n.saturating_sub(1)) as f64 / 2.0;
    while n > 1 && tri(n - 1) >= y {
        n -= 1;
    }
    while tri(n) < y {
        n += 1;
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_pcg::Pcg64;

    fn example_sequence() -> HashSequence {
        HashSequence::new(10, vec![6, 9, 1, 9, 9, 6, 2, 5]).unwrap()
    }

    #[test]
    fn worked_example() {
        let out = insert_all(&example_sequence());
        assert_eq!(out.displacements, vec![0, 0, 0, 1, 3, 1, 1, 0]);
        assert_eq!(out.total, 6);
        let blocks = block_decompose(&out).unwrap();
        let summary: Vec<(usize, usize, u64)> = blocks
            .blocks
            .iter()
            .map(|b| (b.empty_cell, b.length, b.displacement))
            .collect();
        assert_eq!(summary, vec![(4, 6, 5), (8, 4, 1)]);
        assert_eq!(blocks.blocks[0].first_cell, 9);
        assert_eq!(blocks.blocks[1].first_cell, 5);
    }

    #[test]
    fn sequence_validation() {
        assert!(HashSequence::new(3, vec![1, 2, 3]).is_err());
        assert!(HashSequence::new(3, vec![0]).is_err());
        assert!(HashSequence::new(3, vec![4]).is_err());
    }

    #[test]
    fn simple_totals() {
        let inj = HashSequence::new(6, vec![3, 1, 5, 2]).unwrap();
        assert_eq!(insert_all(&inj).total, 0);
        let same = HashSequence::new(4, vec![1, 1, 1]).unwrap();
        assert_eq!(insert_all(&same).total, 3);
    }

    #[test]
    fn profile_examples() {
        let p = displacement_via_profile(&HashSequence::new(4, vec![1, 1, 2]).unwrap()).unwrap();
        assert_eq!(p.total, 2);
        assert_eq!(p.z, vec![2, 1, 0, 0]);
        assert_eq!(p.sigma, vec![0, 2, 3, 3, 3]);
        assert_eq!(p.h, vec![2, 2, 1, 0]);
        let single = displacement_via_profile(&HashSequence::new(2, vec![1]).unwrap()).unwrap();
        assert_eq!(single.total, 0);
        let inj = displacement_via_profile(&HashSequence::new(4, vec![2, 3, 1]).unwrap()).unwrap();
        assert_eq!(inj.total, 0);
        // wraps past urn m
        let wrap = displacement_via_profile(&HashSequence::new(4, vec![4, 4, 4]).unwrap()).unwrap();
        assert_eq!(wrap.total, 3);
        assert_eq!(wrap.h, vec![2, 1, 0, 3]);
        assert!(displacement_via_profile(&example_sequence()).is_err());
    }

    #[test]
    fn profile_matches_simulator_exhaustively() {
        for n in 0..=6 {
            let mut odo = SequenceOdometer::new(n + 1, n);
            while let Some(a) = odo.advance() {
                let seq = HashSequence::new(n + 1, a.to_vec()).unwrap();
                let sim = insert_all(&seq).total;
                assert_eq!(displacement_via_profile(&seq).unwrap().total, sim, "{a:?}");
                let mut z = vec![0; n + 1];
                a.iter().for_each(|&x| z[x - 1] += 1);
                assert_eq!(displacement_from_counts(&z), sim);
            }
        }
    }

    #[test]
    fn counts_formula_handles_sparse_tables() {
        let mut rng = Pcg64::seed_from_u64(3);
        for _ in 0..2000 {
            let m = rng.gen_range(2..30);
            let n = rng.gen_range(0..m);
            let seq = HashSequence::random(m, n, &mut rng).unwrap();
            let mut z = vec![0; m];
            seq.addresses().iter().for_each(|&x| z[x - 1] += 1);
            assert_eq!(displacement_from_counts(&z), insert_all(&seq).total);
        }
    }

    #[test]
    fn block_edge_cases() {
        let empty = insert_all(&HashSequence::new(5, vec![]).unwrap());
        let b = block_decompose(&empty).unwrap();
        assert_eq!(b.blocks.len(), 5);
        assert!(b.blocks.iter().all(|b| b.length == 1 && b.displacement == 0));
        let almost = insert_all(&HashSequence::new(5, vec![2, 2, 4, 1]).unwrap());
        let b = block_decompose(&almost).unwrap();
        assert_eq!(b.blocks.len(), 1);
        assert_eq!(b.blocks[0].length, 5);
        assert_eq!(b.blocks[0].displacement, almost.total);
    }

    #[test]
    fn enumerate_small() {
        let law = enumerate_all(3).unwrap();
        assert_eq!(law.sequences, 64);
        assert_eq!(law.max_displacement(), 3);
        let one = enumerate_all(1).unwrap();
        assert_eq!(one.sequences, 2);
        assert_eq!(one.counts, vec![2]);
        assert!(matches!(enumerate_all(9), Err(Error::Resource { .. })));
        assert!(enumerate_all_with_budget(6, 1000).is_err());
    }

    #[test]
    fn adversarial_construction() {
        let s = adversarial_sequence(4, 1).unwrap();
        assert_eq!(s.addresses(), &[1, 1, 2, 3]);
        assert_eq!(insert_all(&s).total, 3);
        assert_eq!(insert_all(&adversarial_sequence(10, 3).unwrap()).total, 21);
        assert_eq!(insert_all(&adversarial_sequence(7, 0).unwrap()).total, 0);
        for m in 1..20 {
            for k in 0..=m / 2 {
                let s = adversarial_sequence(m, k).unwrap();
                assert_eq!(s.m(), m + 1);
                assert_eq!(insert_all(&s).total, (k * (m - k)) as u64);
            }
        }
        assert!(adversarial_sequence(4, 3).is_err());
    }

    #[test]
    fn permutation_counts() {
        assert_eq!(permutation_count(4, 1).unwrap(), BigUint::from(12u32));
        assert_eq!(permutation_count(5, 0).unwrap(), BigUint::from(120u32));
        assert_eq!(permutation_count(6, 3).unwrap(), BigUint::from(90u32));
        assert!(permutation_count(40, 5).unwrap() > BigUint::from(u64::MAX));
    }

    #[test]
    fn threshold_values() {
        assert_eq!(n_y_threshold(3.0).unwrap(), 3);
        assert_eq!(n_y_threshold(1.0).unwrap(), 2);
        let scan = (1u64..).find(|n| n * (n - 1) >= 200).unwrap();
        assert_eq!(n_y_threshold(100.0).unwrap(), scan);
        for y in 1..5000u64 {
            let scan = (1u64..).find(|n| n * (n - 1) / 2 >= y).unwrap();
            assert_eq!(n_y_threshold(y as f64).unwrap(), scan, "y = {y}");
        }
        assert!(n_y_threshold(0.0).is_err());
    }

    #[test]
    fn pair_sampler_small_lengths() {
        let mut rng = Pcg64::seed_from_u64(9);
        let mut s = PairSampler::new(0.3).unwrap();
        for _ in 0..1000 {
            assert_eq!(s.displacement_given_length(1, &mut rng), 0);
            // one ball in two urns never moves
            assert_eq!(s.displacement_given_length(2, &mut rng), 0);
        }
    }
}
