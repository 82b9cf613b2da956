//! Minimum over disjoint cylinder covers inside a finite coordinate window,
//! by memoized search over point bitsets. Used to cross-check the tree
//! recursion in [`crate::outer`].
//!
//! Small windows are searched over every cylinder in the window. Larger
//! windows only use pieces ending at the window's right edge: refining a
//! piece into the future never raises its cost, because each `phi_m` is
//! additive and the minimum over depths is taken per child. With points
//! ordered by their reversed word those pieces are contiguous blocks, which
//! keeps the search linear.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::path::PhiSource;
use crate::scalar::Scalar;
use crate::shift::{window_points, Cylinder, CylinderSet, Symbol};

/// Largest window (in points) the oracle accepts.
pub const MAX_POINTS: usize = 1 << 12;

/// Largest number of memoized partial covers.
pub const MAX_STATES: usize = 4_000_000;

/// Windows with at most this many points are searched over all cylinders.
pub const EXHAUSTIVE_POINTS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMode {
    /// Every cylinder inside the window is a candidate piece.
    Exhaustive,
    /// Only pieces ending at the right edge of the window.
    RightAnchored,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleResult<T> {
    pub value: T,
    pub window: (i64, i64),
    pub points: usize,
    pub mode: OracleMode,
    pub candidates: usize,
    pub states: usize,
}

type Bits = Box<[u64]>;

fn set_bit(bits: &mut [u64], i: usize) {
    bits[i / 64] |= 1 << (i % 64);
}

fn has_bit(bits: &[u64], i: usize) -> bool {
    bits[i / 64] >> (i % 64) & 1 == 1
}

fn disjoint(a: &[u64], b: &[u64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x & y == 0)
}

fn or(a: &[u64], b: &[u64]) -> Bits {
    a.iter().zip(b).map(|(x, y)| x | y).collect()
}

struct Search<'a, T> {
    query: Bits,
    candidates: &'a [(Bits, T)],
    containing: Vec<Vec<usize>>,
    memo: HashMap<Bits, T>,
    n: usize,
}

impl<T: Scalar> Search<'_, T> {
    /// Cheapest completion once every point in `decided` is either covered
    /// or left out. Points are decided in order, and a piece is only placed
    /// at its first point, so each cover is visited exactly once.
    fn best(&mut self, decided: Bits) -> Result<T> {
        if (0..self.n).all(|i| !has_bit(&self.query, i) || has_bit(&decided, i)) {
            return Ok(T::zero());
        }
        let p = (0..self.n)
            .find(|&i| !has_bit(&decided, i))
            .expect("an undecided query point exists");
        if let Some(v) = self.memo.get(&decided) {
            return Ok(v.clone());
        }
        if self.memo.len() >= MAX_STATES {
            return Err(Error::OracleGuard(format!("more than {MAX_STATES} partial covers")));
        }
        let mut best: Option<T> = None;
        if !has_bit(&self.query, p) {
            let mut skip = decided.clone();
            set_bit(&mut skip, p);
            best = Some(self.best(skip)?);
        }
        for ci in self.containing[p].clone() {
            let (bits, cost) = &self.candidates[ci];
            if !disjoint(bits, &decided) {
                continue;
            }
            if best.as_ref().is_some_and(|b| cost >= b) {
                continue;
            }
            let total = cost.clone() + self.best(or(&decided, bits))?;
            if best.as_ref().is_none_or(|b| total < *b) {
                best = Some(total);
            }
        }
        let best = best.expect("the full-length cylinder at a query point always fits");
        self.memo.insert(decided, best.clone());
        Ok(best)
    }
}

/// Exact minimum of `sum phi_m(B_m)` over all finite disjoint families of
/// cylinders inside `[lo, hi]` that cover the query, where a cylinder
/// starting at `s` may be charged at any depth `m` in `[lo, min(s, 0)]`.
pub fn phi_bruteforce<T: Scalar>(
    source: &PhiSource<T>,
    query: &CylinderSet,
    lo: i64,
    hi: i64,
) -> Result<OracleResult<T>> {
    let width = (hi - lo + 1).max(0) as u32;
    let small = (source.alphabet().len() as u64)
        .checked_pow(width)
        .is_some_and(|n| n as usize <= EXHAUSTIVE_POINTS);
    let mode = if small {
        OracleMode::Exhaustive
    } else {
        OracleMode::RightAnchored
    };
    phi_bruteforce_with(source, query, lo, hi, mode)
}

pub fn phi_bruteforce_with<T: Scalar>(
    source: &PhiSource<T>,
    query: &CylinderSet,
    lo: i64,
    hi: i64,
    mode: OracleMode,
) -> Result<OracleResult<T>> {
    let alphabet = source.alphabet();
    if lo > 0 || hi < lo {
        return Err(Error::InvalidQuery(format!("window {lo}:{hi} must satisfy lo <= 0, lo <= hi")));
    }
    if query.min_start().is_some_and(|s| s < lo) || query.max_end().is_some_and(|e| e > hi) {
        return Err(Error::InvalidQuery("query does not fit in the window".into()));
    }
    let width = (hi - lo + 1) as u32;
    let n = (alphabet.len() as u64)
        .checked_pow(width)
        .filter(|&n| n as usize <= MAX_POINTS)
        .ok_or_else(|| Error::OracleGuard(format!("window of width {width} exceeds {MAX_POINTS} points")))?
        as usize;
    let words = n.div_ceil(64);
    let mut points: Vec<Vec<Symbol>> = window_points(alphabet, lo, hi).collect();
    points.sort_by(|a, b| a.iter().rev().cmp(b.iter().rev()));
    let mut qbits = vec![0u64; words];
    for (i, p) in points.iter().enumerate() {
        if query.contains_point(lo, p) {
            set_bit(&mut qbits, i);
        }
    }

    let mut candidates: Vec<(Bits, T)> = Vec::new();
    for start in lo..=hi {
        let first_end = if mode == OracleMode::Exhaustive { start } else { hi };
        for end in first_end..=hi {
            for word in window_points(alphabet, start, end) {
                let c = Cylinder::new(start, word)?;
                let mut cost: Option<T> = None;
                for m in lo..=start.min(0) {
                    let v = source.cylinder_mass(m, &c)?;
                    if cost.as_ref().is_none_or(|b| v < *b) {
                        cost = Some(v);
                    }
                }
                let Some(cost) = cost else { continue };
                let mut bits = vec![0u64; words];
                for (i, p) in points.iter().enumerate() {
                    if c.contains_point(lo, p) {
                        set_bit(&mut bits, i);
                    }
                }
                candidates.push((bits.into_boxed_slice(), cost));
            }
        }
    }
    let mut containing = vec![Vec::new(); n];
    for (ci, (bits, _)) in candidates.iter().enumerate() {
        for (i, slot) in containing.iter_mut().enumerate() {
            if has_bit(bits, i) {
                slot.push(ci);
            }
        }
    }
    // cheap candidates first tightens the pruning bound early
    for list in &mut containing {
        list.sort_by(|&a, &b| {
            candidates[a]
                .1
                .partial_cmp(&candidates[b].1)
                .unwrap_or(std::cmp::Ordering::Equal)
        });
    }
    let mut search = Search {
        query: qbits.into_boxed_slice(),
        candidates: &candidates,
        containing,
        memo: HashMap::new(),
        n,
    };
    let value = search.best(vec![0u64; words].into_boxed_slice())?;
    Ok(OracleResult {
        value,
        window: (lo, hi),
        points: n,
        mode,
        candidates: candidates.len(),
        states: search.memo.len(),
    })
}
