//! The outer measure `Phi(Q) = inf sum_m phi_m(A_m)` on finite unions of
//! cylinders, computed as a minimum-cost disjoint cylinder cover.
//!
//! Within the coordinate window `[-M, R]` (`R` = last query index plus the
//! future depth) every cover can be rewritten at equal cost so that each
//! piece starts at the depth it is charged at and ends at `R`: charging
//! `_s[w]` at depth `m < s` costs the same as charging its past refinements
//! to start `m`, and future refinement is cost-neutral. Such pieces form a
//! suffix tree, so the optimum is an exact tree recursion: a node `_k[v]`
//! either pays `phi_k(_k[v])` or splits into `_{k-1}[e v]`.
//!
//! For finite state spaces `phi_k(_k[v]) = sum_x nu(x) h_v(x)` with
//! `h_{ev}(x) = p_e(x) h_v(w_e x)`, and the cost of a node lying inside the
//! query is positively homogeneous in `h_v`. Those nodes are memoized on the
//! normalized frame, which collapses finite chains to a handful of
//! subproblems per level.

use std::collections::{HashMap, HashSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::par;
use crate::path::{PhiSource, PeriodicDirac};
use crate::scalar::{Arith, Scalar};
use crate::shift::{Alphabet, Cylinder, CylinderSet, Relation, Symbol};
use crate::system::{apply_u_star, MarkovSystem, Point, PointMeasure, UStarOptions};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CoverParams {
    /// `M`: covers may charge depths `-M..=0`.
    pub past_depth: usize,
    /// `L`: pieces may constrain up to `L` indices past the query's end.
    pub future_depth: usize,
    /// Maximum number of evaluated DP nodes per depth.
    pub node_budget: u64,
    pub arith: Arith,
    /// Largest certificate (number of pieces) that is materialized.
    pub cover_limit: usize,
}

impl Default for CoverParams {
    fn default() -> Self {
        CoverParams {
            past_depth: 4,
            future_depth: 0,
            node_budget: 20_000_000,
            arith: Arith::Float,
            cover_limit: 20_000,
        }
    }
}

impl CoverParams {
    pub fn with_depth(&self, past_depth: usize) -> Self {
        CoverParams {
            past_depth,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhiEstimate<T> {
    pub value: T,
    pub params: CoverParams,
    /// Coordinate window `[-M, R]` searched at the final depth.
    pub window: (i64, i64),
    /// Cover pieces grouped by charging depth, closest to 0 first; `None`
    /// when the certificate exceeds `cover_limit`.
    pub optimal_cover: Option<Vec<(i64, CylinderSet)>>,
    /// `(M, value)` for every depth from the smallest admissible one up to `M`.
    pub profile: Vec<(usize, T)>,
    pub converged: bool,
    pub nodes: u64,
}

/// Smallest past depth whose window contains the query.
pub fn min_depth(query: &CylinderSet) -> usize {
    query.min_start().map_or(0, |s| (-s).max(0) as usize)
}

struct SiteKernel<T> {
    /// `step[e][x] = (p_e(x), w_e(x))` where positive.
    step: Vec<Vec<Option<(T, usize)>>>,
    weights: Vec<T>,
}

impl<T: Scalar> SiteKernel<T> {
    fn from_markov(sys: &MarkovSystem<T>, nu: &PointMeasure<T>) -> Result<Self> {
        let n = sys.n_sites().expect("finite space");
        let mut step = Vec::with_capacity(sys.alphabet().len());
        for e in sys.alphabet().symbols() {
            let mut row = vec![None; n];
            for (x, slot) in row.iter_mut().enumerate() {
                let pt = Point::Site(x);
                let p = sys.prob(e, &pt)?;
                if p.is_zero() {
                    continue;
                }
                if let Point::Site(y) = sys.map(e, &pt)? {
                    *slot = Some((p, y));
                }
            }
            step.push(row);
        }
        let mut weights = vec![T::zero(); n];
        for (x, w) in nu.atoms() {
            match x {
                Point::Site(i) if *i < n => weights[*i] = weights[*i].clone() + w.clone(),
                _ => return Err(Error::OutsideCells(sys.point_label(x))),
            }
        }
        Ok(SiteKernel { step, weights })
    }

    /// A periodic point mass is a deterministic cycle started at its phase.
    fn from_dirac(d: &PeriodicDirac) -> Self {
        let p = d.period();
        let step = d
            .alphabet()
            .symbols()
            .map(|e| {
                (0..p)
                    .map(|x| (d.pattern()[x] == e).then(|| (T::one(), (x + 1) % p)))
                    .collect()
            })
            .collect();
        let mut weights = vec![T::zero(); p];
        weights[d.phase().rem_euclid(p as i64) as usize] = T::one();
        SiteKernel { step, weights }
    }

    fn extend(&self, e: Symbol, h: &[T]) -> Vec<T> {
        self.step[e.index()]
            .iter()
            .map(|s| match s {
                Some((p, y)) if !h[*y].is_zero() => p.clone() * h[*y].clone(),
                _ => T::zero(),
            })
            .collect()
    }

    fn charge(&self, h: &[T]) -> T {
        self.weights
            .iter()
            .zip(h)
            .filter(|(w, v)| !w.is_zero() && !v.is_zero())
            .map(|(w, v)| w.clone() * v.clone())
            .sum()
    }
}

enum Kernel<'a, T> {
    Sites(SiteKernel<T>),
    Atoms {
        sys: &'a MarkovSystem<T>,
        nu: &'a PointMeasure<T>,
    },
}

#[derive(Clone)]
enum Frame<T> {
    Sites(Vec<T>),
    Word,
}

#[derive(Clone, PartialEq, Eq, Hash)]
enum FrameKey<K> {
    Sites(Vec<K>),
    Word(Vec<Symbol>),
}

/// Memo key: depth and normalized frame.
type NodeKey<K> = (i64, FrameKey<K>);

/// Cover pieces as `(depth, reversed word)`.
type RawCover = Vec<(i64, Vec<Symbol>)>;

struct Dp<'a, T: Scalar> {
    alphabet: &'a Alphabet,
    kernel: Kernel<'a, T>,
    query: &'a [Cylinder],
    lo: i64,
    memo: HashMap<NodeKey<T::Key>, T>,
    nodes: u64,
    budget: u64,
}

struct CoverSink {
    pieces: Vec<(i64, Vec<Symbol>)>,
    limit: usize,
    overflow: bool,
}

impl CoverSink {
    fn push(&mut self, k: i64, rev: &[Symbol]) {
        if self.pieces.len() >= self.limit {
            self.overflow = true;
            return;
        }
        self.pieces.push((k, rev.iter().rev().copied().collect()));
    }
}

impl<'a, T: Scalar> Dp<'a, T> {
    fn new(source: &'a PhiSource<T>, query: &'a [Cylinder], depth: usize, budget: u64) -> Result<Self> {
        let kernel = match source {
            PhiSource::Markov { sys, nu } if sys.is_finite() => Kernel::Sites(SiteKernel::from_markov(sys, nu)?),
            PhiSource::Markov { sys, nu } => Kernel::Atoms { sys, nu },
            PhiSource::Dirac(d) => Kernel::Sites(SiteKernel::from_dirac(d)),
        };
        Ok(Dp {
            alphabet: source.alphabet(),
            kernel,
            query,
            lo: -(depth as i64),
            memo: HashMap::new(),
            nodes: 0,
            budget,
        })
    }

    fn root_frame(&self) -> Frame<T> {
        match &self.kernel {
            Kernel::Sites(k) => Frame::Sites(vec![T::one(); k.weights.len()]),
            Kernel::Atoms { .. } => Frame::Word,
        }
    }

    fn tick(&mut self) -> Result<()> {
        self.nodes += 1;
        if self.nodes > self.budget {
            return Err(Error::NodeBudget {
                budget: self.budget,
                best_bound: None,
            });
        }
        Ok(())
    }

    fn extend(&self, frame: &Frame<T>, e: Symbol) -> Frame<T> {
        match (&self.kernel, frame) {
            (Kernel::Sites(k), Frame::Sites(h)) => Frame::Sites(k.extend(e, h)),
            _ => Frame::Word,
        }
    }

    /// `phi_k(_k[v])` for a node that may be charged.
    fn direct(&self, k: i64, rev: &[Symbol], frame: &Frame<T>) -> Result<Option<T>> {
        if k > 0 || rev.is_empty() {
            return Ok(None);
        }
        Ok(Some(match (&self.kernel, frame) {
            (Kernel::Sites(kern), Frame::Sites(h)) => kern.charge(h),
            (Kernel::Atoms { sys, nu }, _) => {
                let word: Vec<Symbol> = rev.iter().rev().copied().collect();
                let mut total = T::zero();
                for (x, w) in nu.atoms() {
                    total = total + w.clone() * sys.path_product(x, &word)?.0;
                }
                total
            }
            _ => unreachable!("frame matches kernel"),
        }))
    }

    fn child_active(&self, active: &[usize], index: i64, e: Symbol) -> Vec<usize> {
        active
            .iter()
            .copied()
            .filter(|&i| self.query[i].at(index).is_none_or(|s| s == e))
            .collect()
    }

    fn is_full(&self, k: i64, active: &[usize]) -> bool {
        active.iter().any(|&i| self.query[i].start() >= k)
    }

    /// Minimum cover cost of `_k[v] ∩ Q`.
    fn cost(&mut self, k: i64, rev: &mut Vec<Symbol>, frame: &Frame<T>, active: &[usize]) -> Result<T> {
        if active.is_empty() {
            return Ok(T::zero());
        }
        if self.is_full(k, active) {
            return self.full_cost(k, rev, frame);
        }
        self.tick()?;
        let direct = self.direct(k, rev, frame)?;
        if let Some(d) = &direct {
            if d.is_zero() || k - 1 < self.lo {
                return Ok(d.clone());
            }
        }
        let mut split = T::zero();
        for e in self.alphabet.symbols() {
            let child_active = self.child_active(active, k - 1, e);
            if child_active.is_empty() {
                continue;
            }
            let child = self.extend(frame, e);
            rev.push(e);
            let c = self.cost(k - 1, rev, &child, &child_active);
            rev.pop();
            split = split + c?;
        }
        Ok(match direct {
            Some(d) if T::tie_le(&d, &split) => d,
            _ => split,
        })
    }

    fn normalize(&self, frame: &Frame<T>, k: i64, rev: &[Symbol]) -> Option<(T, Frame<T>, NodeKey<T::Key>)> {
        match frame {
            Frame::Sites(h) => {
                let scale = h.iter().find(|v| !v.is_zero())?.clone();
                let normalized: Vec<T> = h.iter().map(|v| v.clone() / scale.clone()).collect();
                let key = FrameKey::Sites(normalized.iter().map(Scalar::key).collect());
                Some((scale, Frame::Sites(normalized), (k, key)))
            }
            Frame::Word => Some((T::one(), Frame::Word, (k, FrameKey::Word(rev.to_vec())))),
        }
    }

    /// Cost of a node lying inside the query.
    fn full_cost(&mut self, k: i64, rev: &mut Vec<Symbol>, frame: &Frame<T>) -> Result<T> {
        let Some((scale, normalized, key)) = self.normalize(frame, k, rev) else {
            return Ok(T::zero());
        };
        if let Some(c) = self.memo.get(&key) {
            return Ok(scale * c.clone());
        }
        let c = self.full_raw(k, rev, &normalized)?;
        self.memo.insert(key, c.clone());
        Ok(scale * c)
    }

    fn full_raw(&mut self, k: i64, rev: &mut Vec<Symbol>, frame: &Frame<T>) -> Result<T> {
        self.tick()?;
        let direct = self.direct(k, rev, frame)?;
        if let Some(d) = &direct {
            if d.is_zero() || k - 1 < self.lo {
                return Ok(d.clone());
            }
        }
        let mut split = T::zero();
        for e in self.alphabet.symbols() {
            let child = self.extend(frame, e);
            rev.push(e);
            let c = self.full_cost(k - 1, rev, &child);
            rev.pop();
            split = split + c?;
        }
        Ok(match direct {
            Some(d) if T::tie_le(&d, &split) => d,
            _ => split,
        })
    }

    /// Replays the decisions of [`Dp::cost`] and records the charged pieces.
    fn collect(
        &mut self,
        k: i64,
        rev: &mut Vec<Symbol>,
        frame: &Frame<T>,
        active: &[usize],
        sink: &mut CoverSink,
    ) -> Result<()> {
        if active.is_empty() || sink.overflow {
            return Ok(());
        }
        let full = self.is_full(k, active);
        let direct = self.direct(k, rev, frame)?;
        if let Some(d) = &direct {
            if d.is_zero() || k - 1 < self.lo {
                sink.push(k, rev);
                return Ok(());
            }
        }
        let mut split = T::zero();
        let mut children = Vec::new();
        for e in self.alphabet.symbols() {
            let child_active = if full {
                active.to_vec()
            } else {
                self.child_active(active, k - 1, e)
            };
            if child_active.is_empty() {
                continue;
            }
            let child = self.extend(frame, e);
            rev.push(e);
            let c = self.cost(k - 1, rev, &child, &child_active);
            rev.pop();
            split = split + c?;
            children.push((e, child, child_active));
        }
        if let Some(d) = direct {
            if T::tie_le(&d, &split) {
                sink.push(k, rev);
                return Ok(());
            }
        }
        for (e, child, child_active) in children {
            rev.push(e);
            let r = self.collect(k - 1, rev, &child, &child_active, sink);
            rev.pop();
            r?;
        }
        Ok(())
    }
}

fn right_end(query: &CylinderSet, params: &CoverParams) -> i64 {
    query.max_end().unwrap_or(0) + params.future_depth as i64
}

fn check_query(alphabet: &Alphabet, query: &CylinderSet) -> Result<()> {
    query.parts().iter().try_for_each(|c| c.check(alphabet))
}

/// DP value at one past depth, optionally with its certificate.
fn solve_at<T: Scalar>(
    source: &PhiSource<T>,
    query: &CylinderSet,
    depth: usize,
    params: &CoverParams,
    want_cover: bool,
) -> Result<(T, u64, Option<RawCover>)> {
    if query.is_empty() {
        return Ok((T::zero(), 0, Some(Vec::new())));
    }
    if depth < min_depth(query) {
        return Err(Error::InvalidQuery(format!(
            "past depth {depth} does not reach the query start {}",
            query.min_start().unwrap_or(0)
        )));
    }
    let right = right_end(query, params);
    let mut dp = Dp::new(source, query.parts(), depth, params.node_budget)?;
    let all: Vec<usize> = (0..query.len()).collect();
    let root = dp.root_frame();
    let value = dp.cost(right + 1, &mut Vec::new(), &root, &all)?;
    let cover = if want_cover {
        let mut sink = CoverSink {
            pieces: Vec::new(),
            limit: params.cover_limit,
            overflow: false,
        };
        dp.collect(right + 1, &mut Vec::new(), &root, &all, &mut sink)?;
        (!sink.overflow).then_some(sink.pieces)
    } else {
        None
    };
    Ok((value, dp.nodes, cover))
}

/// Upper bound from charging every query part at the latest depth allowed.
fn direct_bound<T: Scalar>(source: &PhiSource<T>, query: &CylinderSet) -> Option<f64> {
    let mut total = 0.0;
    for c in query.parts() {
        let m = c.start().min(0);
        total += source.cylinder_mass(m, c).ok()?.to_f64();
    }
    Some(total)
}

fn group_cover(pieces: Vec<(i64, Vec<Symbol>)>) -> Vec<(i64, CylinderSet)> {
    let mut by_depth: std::collections::BTreeMap<i64, Vec<Cylinder>> = Default::default();
    for (k, w) in pieces {
        by_depth
            .entry(k)
            .or_default()
            .push(Cylinder::new(k, w).expect("pieces have non-empty words"));
    }
    by_depth
        .into_iter()
        .rev()
        .map(|(k, parts)| (k, CylinderSet::from_disjoint(parts)))
        .collect()
}

fn converged<T: Scalar>(profile: &[(usize, T)]) -> bool {
    match profile {
        [.., (_, a), (_, b)] => {
            if T::EXACT {
                a == b
            } else {
                (a.clone() - b.clone()).abs().to_f64() <= 1e-12 * a.to_f64().abs().max(1.0)
            }
        }
        _ => false,
    }
}

/// `Phi` of a finite union of cylinders at past depth `M` and future depth
/// `L`, with the profile over all smaller admissible depths and the
/// optimal cover as a certificate.
pub fn phi_estimate<T: Scalar>(source: &PhiSource<T>, query: &CylinderSet, params: &CoverParams) -> Result<PhiEstimate<T>> {
    check_query(source.alphabet(), query)?;
    let first = min_depth(query);
    if params.past_depth < first {
        return Err(Error::InvalidQuery(format!(
            "past depth {} does not reach the query start {}",
            params.past_depth,
            query.min_start().unwrap_or(0)
        )));
    }
    let depths: Vec<usize> = (first..=params.past_depth).collect();
    let last = params.past_depth;
    let runs = par::map(&depths, |&d| solve_at(source, query, d, params, d == last));
    let mut profile = Vec::with_capacity(runs.len());
    let mut nodes = 0;
    let mut cover = None;
    for (d, run) in depths.iter().zip(runs) {
        match run {
            Ok((v, n, c)) => {
                nodes += n;
                if *d == last {
                    cover = c;
                }
                profile.push((*d, v));
            }
            Err(Error::NodeBudget { budget, .. }) => {
                let best = profile
                    .last()
                    .map(|(_, v): &(usize, T)| v.to_f64())
                    .or_else(|| direct_bound(source, query));
                return Err(Error::NodeBudget {
                    budget,
                    best_bound: best,
                });
            }
            Err(e) => return Err(e),
        }
    }
    let value = profile.last().expect("at least one depth").1.clone();
    Ok(PhiEstimate {
        converged: converged(&profile),
        value,
        params: params.clone(),
        window: (-(last as i64), right_end(query, params)),
        optimal_cover: cover.map(group_cover),
        profile,
        nodes,
    })
}

/// `Phi` at a single past depth, without profile or certificate.
pub fn phi_value<T: Scalar>(source: &PhiSource<T>, query: &CylinderSet, depth: usize, params: &CoverParams) -> Result<T> {
    check_query(source.alphabet(), query)?;
    solve_at(source, query, depth, params, false).map(|(v, _, _)| v)
}

/// Independent estimates for many queries, evaluated in parallel.
pub fn phi_estimate_batch<T: Scalar>(
    source: &PhiSource<T>,
    queries: &[CylinderSet],
    params: &CoverParams,
) -> Vec<Result<PhiEstimate<T>>> {
    par::map(queries, |q| phi_estimate(source, q, params))
}

/// Outcome of checking a certificate against its query.
#[derive(Debug, Clone, Serialize)]
pub struct CoverCheck {
    pub disjoint: bool,
    pub covers_query: bool,
    pub cost_matches: bool,
    pub pieces: usize,
}

impl CoverCheck {
    pub fn is_valid(&self) -> bool {
        self.disjoint && self.covers_query && self.cost_matches
    }
}

/// Verifies that a cover is disjoint, contains the query, and that its
/// pieces, each charged at its depth, add up to the reported value.
pub fn verify_cover<T: Scalar>(
    source: &PhiSource<T>,
    query: &CylinderSet,
    cover: &[(i64, CylinderSet)],
    value: &T,
) -> Result<CoverCheck> {
    let alphabet = source.alphabet();
    let pieces: Vec<&Cylinder> = cover.iter().flat_map(|(_, s)| s.parts()).collect();
    let same_end = pieces.windows(2).all(|w| w[0].end() == w[1].end());
    let disjoint = if same_end {
        // cylinders sharing a right end are nested iff one word is a suffix
        let set: HashSet<(i64, &[Symbol])> = pieces.iter().map(|c| (c.start(), c.word())).collect();
        set.len() == pieces.len()
            && pieces.iter().all(|c| {
                (1..c.len()).all(|cut| !set.contains(&(c.start() + cut as i64, &c.word()[cut..])))
            })
    } else {
        pieces.iter().enumerate().all(|(i, a)| {
            pieces[i + 1..]
                .iter()
                .all(|b| Cylinder::relation(alphabet, a, b).map(|r| r == Relation::Disjoint).unwrap_or(false))
        })
    };
    let union = CylinderSet::from_disjoint(pieces.iter().map(|c| (*c).clone()).collect());
    let covers_query = query.subtract(alphabet, &union).is_empty();
    let mut total = T::zero();
    for (m, set) in cover {
        if set.min_start().is_some_and(|s| s < *m) {
            return Ok(CoverCheck {
                disjoint,
                covers_query,
                cost_matches: false,
                pieces: pieces.len(),
            });
        }
        total = total + source.mass(*m, set)?;
    }
    let cost_matches = if T::EXACT {
        &total == value
    } else {
        (total.clone() - value.clone()).abs().to_f64() <= 1e-12 * value.to_f64().abs().max(1.0)
    };
    Ok(CoverCheck {
        disjoint,
        covers_query,
        cost_matches,
        pieces: pieces.len(),
    })
}

/// Estimate of `Phi_{(-k)}`, the outer measure built from `phi_{-k}`.
pub fn phi_shifted<T: Scalar>(
    source: &PhiSource<T>,
    k: usize,
    query: &CylinderSet,
    params: &CoverParams,
) -> Result<PhiEstimate<T>> {
    let shifted = source.shifted(k, &UStarOptions::default())?;
    phi_estimate(&shifted, query, params)
}

#[derive(Debug, Clone)]
pub struct PhiStar<T> {
    /// `Phi_{(-k)}` estimates for `k = 0..=k_max`.
    pub values: Vec<T>,
    /// Past depth used for each `k`: `M + k_max - k`.
    pub depths: Vec<usize>,
    pub non_decreasing: bool,
    pub last_increment: T,
}

/// The sequence `Phi_{(-k)}(Q)`, `k = 0..=k_max`, each evaluated at past
/// depth `M + k_max - k`. At these matched depths every cover used for
/// `k + 1` is also available for `k`, so the estimates inherit the
/// monotonicity of the exact sequence.
pub fn phi_star_estimate<T: Scalar>(
    source: &PhiSource<T>,
    query: &CylinderSet,
    params: &CoverParams,
    k_max: usize,
) -> Result<PhiStar<T>> {
    check_query(source.alphabet(), query)?;
    let ks: Vec<usize> = (0..=k_max).collect();
    let values = par::map(&ks, |&k| -> Result<T> {
        let shifted = source.shifted(k, &UStarOptions::default())?;
        let depth = params.past_depth + k_max - k;
        solve_at(&shifted, query, depth, params, false).map(|(v, _, _)| v)
    })
    .into_iter()
    .collect::<Result<Vec<T>>>()?;
    let non_decreasing = values.windows(2).all(|w| {
        if T::EXACT {
            w[0] <= w[1]
        } else {
            w[0].to_f64() <= w[1].to_f64() + 1e-12
        }
    });
    let last_increment = match values.as_slice() {
        [.., a, b] => b.clone() - a.clone(),
        _ => T::zero(),
    };
    Ok(PhiStar {
        depths: ks.iter().map(|k| params.past_depth + k_max - k).collect(),
        values,
        non_decreasing,
        last_increment,
    })
}

#[derive(Debug, Clone)]
pub struct Invariance<T> {
    /// `Phi(Q)` at past depth `M + 1`.
    pub phi: T,
    /// `Phi(S^{-1} Q)` at past depth `M`.
    pub phi_preimage: T,
    /// `Phi_{(-1)}(Q)` at past depth `M`.
    pub phi_shifted: T,
    pub residual: f64,
    pub lower_ordered: bool,
    pub upper_ordered: bool,
}

/// `Phi(Q) <= Phi(S^{-1}Q) <= Phi_{(-1)}(Q)` at matched effective depths.
pub fn invariance_residual<T: Scalar>(
    source: &PhiSource<T>,
    query: &CylinderSet,
    params: &CoverParams,
    slack: f64,
) -> Result<Invariance<T>> {
    check_query(source.alphabet(), query)?;
    let m = params.past_depth;
    let pre = query.shift_preimage();
    let phi = solve_at(source, query, m + 1, params, false)?.0;
    let phi_preimage = solve_at(source, &pre, m, params, false)?.0;
    let shifted = source.shifted(1, &UStarOptions::default())?;
    let phi_shifted = solve_at(&shifted, query, m, params, false)?.0;
    let le = |a: &T, b: &T| {
        if T::EXACT && slack == 0.0 {
            a <= b
        } else {
            a.to_f64() <= b.to_f64() + slack
        }
    };
    Ok(Invariance {
        residual: (phi.clone() - phi_preimage.clone()).abs().to_f64(),
        lower_ordered: le(&phi, &phi_preimage),
        upper_ordered: le(&phi_preimage, &phi_shifted),
        phi,
        phi_preimage,
        phi_shifted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Affirmed,
    Violated,
    Inconclusive,
    NotApplicable,
}

#[derive(Debug, Clone)]
pub struct NprReport<T> {
    pub phi_sigma: T,
    pub phi_sigma_le_one: bool,
    /// `max |phi_m(c) - phi_0(c)|` over the family and `m` in `[-M, -1]`.
    pub max_deviation: T,
    /// `1 - Phi(Sigma)` with the estimate plugged in.
    pub bound: T,
    /// True when the estimate is known to equal `Phi` (stationary `nu`).
    pub certified: bool,
    pub deviation_verdict: Verdict,
    /// `|U*nu - nu|_1` (Markov sources only).
    pub u_star_distance: Option<T>,
    pub stationary: bool,
    pub equivalence_verdict: Verdict,
}

/// Checks `Phi(Sigma) <= 1`, `|phi_m - phi_0| <= 1 - Phi(Sigma)` and the
/// equivalence of `Phi(Sigma) = 1` with `U*nu = nu`.
///
/// Since the estimate can only overshoot `Phi`, a deviation within
/// `1 - estimate` proves the inequality; a larger deviation is a definite
/// violation only when the estimate is certified.
pub fn npr_report<T: Scalar>(source: &PhiSource<T>, params: &CoverParams, family: &[Cylinder]) -> Result<NprReport<T>> {
    let sigma = CylinderSet::full(source.alphabet(), 0);
    let phi_sigma = solve_at(source, &sigma, params.past_depth, params, false)?.0;
    let one = T::one();
    let mut max_deviation = T::zero();
    for c in family.iter().filter(|c| c.start() >= 0) {
        let q = CylinderSet::single(c.clone());
        let base = source.mass(0, &q)?;
        for m in 1..=params.past_depth as i64 {
            let d = (source.mass(-m, &q)? - base.clone()).abs();
            max_deviation = T::max_of(max_deviation, d);
        }
    }
    let (u_star_distance, stationary) = match source {
        PhiSource::Markov { sys, nu } => {
            let d = apply_u_star(sys, nu, &UStarOptions::default())?.l1_distance(nu);
            let stat = if T::EXACT { d.is_zero() } else { d.to_f64() <= 1e-12 };
            (Some(d), stat)
        }
        PhiSource::Dirac(d) => {
            let constant = d.pattern().iter().all(|&s| s == d.pattern()[0]);
            (None, constant)
        }
    };
    let bound = one.clone() - phi_sigma.clone();
    let certified = stationary;
    let tol = if T::EXACT { 0.0 } else { 1e-12 };
    let deviation_ok = max_deviation.to_f64() <= bound.to_f64() + tol && (!T::EXACT || max_deviation <= bound);
    let deviation_verdict = if deviation_ok {
        Verdict::Affirmed
    } else if certified {
        Verdict::Violated
    } else {
        Verdict::Inconclusive
    };
    let phi_is_one = if T::EXACT {
        phi_sigma == one
    } else {
        (phi_sigma.to_f64() - 1.0).abs() <= 1e-12
    };
    let equivalence_verdict = match (stationary, phi_is_one) {
        (true, true) => Verdict::Affirmed,
        (true, false) => Verdict::Violated,
        // an upper bound below one proves Phi(Sigma) < 1
        (false, false) => Verdict::Affirmed,
        (false, true) => Verdict::Inconclusive,
    };
    Ok(NprReport {
        phi_sigma_le_one: phi_sigma.to_f64() <= 1.0 + tol,
        phi_sigma,
        max_deviation,
        bound,
        certified,
        deviation_verdict,
        u_star_distance,
        stationary,
        equivalence_verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::scalar::ratio;
    use crate::system::stationary_distribution;
    use num_rational::BigRational;

    fn exact(depth: usize) -> CoverParams {
        CoverParams {
            past_depth: depth,
            arith: Arith::Rational,
            ..CoverParams::default()
        }
    }

    #[test]
    fn example_one_is_null() {
        let src: PhiSource<BigRational> = PhiSource::Dirac(presets::g2());
        let sigma = CylinderSet::full(src.alphabet(), 0);
        let est = phi_estimate(&src, &sigma, &exact(2)).unwrap();
        assert_eq!(est.value, ratio(0, 1));
        let cover = est.optimal_cover.clone().unwrap();
        let check = verify_cover(&src, &sigma, &cover, &est.value).unwrap();
        assert!(check.is_valid(), "{check:?}");
        let star = phi_star_estimate(&src, &sigma, &exact(2), 2).unwrap();
        assert!(star.values.iter().all(|v| *v == ratio(0, 1)));
    }

    #[test]
    fn stationary_chain_collapses_to_phi_zero() {
        let g1 = presets::g1();
        let pi = stationary_distribution(&g1).unwrap().measure;
        let src = PhiSource::markov(g1.clone(), pi.clone());
        for text in ["m=0;w=e11", "m=0;w=e12,e21", "m=-1;w=e11,e12", "m=1;w=e22"] {
            let q = CylinderSet::parse(g1.alphabet(), text).unwrap();
            let est = phi_estimate(&src, &q, &exact(4)).unwrap();
            let m = q.min_start().unwrap().min(0);
            assert_eq!(est.value, src.mass(m, &q).unwrap(), "{text}");
            let cover = est.optimal_cover.clone().unwrap();
            assert!(verify_cover(&src, &q, &cover, &est.value).unwrap().is_valid());
        }
    }

    #[test]
    fn profile_is_non_increasing() {
        let g1 = presets::g1();
        let src = PhiSource::markov(g1.clone(), PointMeasure::dirac(Point::Site(0)));
        let sigma = CylinderSet::full(g1.alphabet(), 0);
        let est = phi_estimate(&src, &sigma, &exact(6)).unwrap();
        assert!(est.profile.windows(2).all(|w| w[1].1 <= w[0].1));
        assert!(est.value < ratio(1, 1));
        assert!(est.value > ratio(0, 1));
        let cover = est.optimal_cover.clone().unwrap();
        assert!(verify_cover(&src, &sigma, &cover, &est.value).unwrap().is_valid());
    }

    #[test]
    fn shared_pieces_beat_per_part_sums() {
        // both parts lie in _0[e11] at time 0, which is cheaper than either
        // part's own depth-(-1) charge when nu sits on state 2
        let g1 = presets::g1();
        let src = PhiSource::markov(g1.clone(), PointMeasure::dirac(Point::Site(1)));
        let q = CylinderSet::parse(g1.alphabet(), "m=-1;w=e11,e11|m=-1;w=e21,e11").unwrap();
        let est = phi_estimate(&src, &q, &exact(1)).unwrap();
        let whole = src.mass(0, &CylinderSet::parse(g1.alphabet(), "m=0;w=e11").unwrap()).unwrap();
        assert!(est.value <= whole);
    }

    #[test]
    fn node_budget_reports_a_bound() {
        let g3 = presets::g3().to_scalar::<f64>();
        let src = PhiSource::markov(g3.clone(), crate::system::nu_zero(&g3));
        let sigma = CylinderSet::full(g3.alphabet(), 0);
        let params = CoverParams {
            past_depth: 8,
            node_budget: 50,
            ..CoverParams::default()
        };
        match phi_estimate(&src, &sigma, &params) {
            Err(Error::NodeBudget { best_bound, .. }) => assert!(best_bound.is_some()),
            other => panic!("expected a budget error, got {other:?}"),
        }
    }

    #[test]
    fn invariance_chain_on_g1() {
        let g1 = presets::g1();
        let src = PhiSource::markov(g1.clone(), PointMeasure::dirac(Point::Site(0)));
        for c in crate::path::cylinder_family(g1.alphabet(), 0, 2) {
            let q = CylinderSet::single(c);
            let inv = invariance_residual(&src, &q, &exact(4), 0.0).unwrap();
            assert!(inv.lower_ordered && inv.upper_ordered);
        }
    }

    #[test]
    fn npr_on_stationary_and_delta() {
        let g1 = presets::g1();
        let family = crate::path::cylinder_family(g1.alphabet(), 0, 2);
        let pi = stationary_distribution(&g1).unwrap().measure;
        let r = npr_report(&PhiSource::markov(g1.clone(), pi), &exact(3), &family).unwrap();
        assert_eq!(r.phi_sigma, ratio(1, 1));
        assert_eq!(r.equivalence_verdict, Verdict::Affirmed);
        assert_eq!(r.deviation_verdict, Verdict::Affirmed);
        let r = npr_report(&PhiSource::markov(g1, PointMeasure::dirac(Point::Site(0))), &exact(3), &family).unwrap();
        assert!(r.phi_sigma < ratio(1, 1) && r.phi_sigma > ratio(0, 1));
        assert!(!r.stationary);
        assert_eq!(r.equivalence_verdict, Verdict::Affirmed);
    }
}
