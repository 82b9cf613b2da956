//! Markov systems `(K_{i(e)}, w_e, p_e)` on finite point sets and compact
//! intervals, the adjoint Markov operator `U*`, contraction diagnostics and
//! stationary distributions.

use std::cmp::Ordering;
use std::collections::{BTreeSet, VecDeque};

use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::shift::{Alphabet, Symbol};

/// A point of the state space `K`: a site of a finite space or a real number.
#[derive(Debug, Clone, PartialEq, PartialOrd)]
pub enum Point<T> {
    Site(usize),
    Real(T),
}

impl<T: Scalar> Point<T> {
    fn order(&self, other: &Self) -> Ordering {
        self.partial_cmp(other).unwrap_or(Ordering::Equal)
    }

    pub fn as_real(&self) -> Option<&T> {
        match self {
            Point::Real(x) => Some(x),
            Point::Site(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FiniteSpace<T> {
    pub labels: Vec<String>,
    /// Distance table indexed by site.
    pub metric: Vec<Vec<T>>,
    /// Zero-based cell index of each site.
    pub cell_of: Vec<usize>,
}

/// `[c_0, c_1), [c_1, c_2), ..., [c_{N-1}, c_N]`.
#[derive(Debug, Clone)]
pub struct IntervalSpace<T> {
    pub breaks: Vec<T>,
}

#[derive(Debug, Clone)]
pub enum StateSpace<T> {
    Finite(FiniteSpace<T>),
    Interval(IntervalSpace<T>),
}

#[derive(Debug, Clone)]
pub enum EdgeMap<T> {
    /// Image site for each site of the source cell (`None` elsewhere).
    Table(Vec<Option<usize>>),
    Affine { slope: T, intercept: T },
}

#[derive(Debug, Clone)]
pub enum EdgeProb<T> {
    /// Probability at each site (only source-cell entries are meaningful).
    Table(Vec<T>),
    /// Polynomial coefficients, constant term first.
    Poly(Vec<T>),
}

#[derive(Debug, Clone)]
pub struct Edge<T> {
    /// Zero-based source cell `i(e)`.
    pub source: usize,
    /// Zero-based target cell `t(e)`.
    pub target: usize,
    pub map: EdgeMap<T>,
    pub prob: EdgeProb<T>,
}

#[derive(Debug, Clone)]
pub struct MarkovSystem<T> {
    alphabet: Alphabet,
    space: StateSpace<T>,
    /// Indexed by symbol.
    edges: Vec<Edge<T>>,
    base_points: Vec<Point<T>>,
    contraction: Option<T>,
}

pub(crate) fn eval_poly<T: Scalar>(coeffs: &[T], x: &T) -> T {
    coeffs
        .iter()
        .rev()
        .fold(T::zero(), |acc, c| acc * x.clone() + c.clone())
}

impl<T: Scalar> MarkovSystem<T> {
    pub fn new(
        alphabet: Alphabet,
        space: StateSpace<T>,
        edges: Vec<Edge<T>>,
        base_points: Vec<Point<T>>,
        contraction: Option<T>,
    ) -> Result<Self> {
        if edges.len() != alphabet.len() {
            return Err(Error::InvalidSystem(format!(
                "{} edges for an alphabet of {} symbols",
                edges.len(),
                alphabet.len()
            )));
        }
        match &space {
            StateSpace::Finite(f) => {
                let n = f.labels.len();
                if n == 0 {
                    return Err(Error::InvalidSystem("no points".into()));
                }
                if f.cell_of.len() != n || f.metric.len() != n || f.metric.iter().any(|r| r.len() != n) {
                    return Err(Error::InvalidSystem("metric/partition size mismatch".into()));
                }
                for (e, edge) in edges.iter().enumerate() {
                    let ok = matches!(&edge.map, EdgeMap::Table(t) if t.len() == n)
                        && matches!(&edge.prob, EdgeProb::Table(t) if t.len() == n);
                    if !ok {
                        return Err(Error::InvalidSystem(format!(
                            "edge `{}` needs per-point map and prob tables",
                            alphabet.name(Symbol(e as u32))
                        )));
                    }
                }
            }
            StateSpace::Interval(iv) => {
                if iv.breaks.len() < 2 || iv.breaks.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::InvalidSystem("interval breaks must increase".into()));
                }
                for (e, edge) in edges.iter().enumerate() {
                    let ok = matches!(edge.map, EdgeMap::Affine { .. })
                        && matches!(&edge.prob, EdgeProb::Poly(c) if !c.is_empty());
                    if !ok {
                        return Err(Error::InvalidSystem(format!(
                            "edge `{}` needs an affine map and a polynomial prob",
                            alphabet.name(Symbol(e as u32))
                        )));
                    }
                }
            }
        }
        Ok(MarkovSystem {
            alphabet,
            space,
            edges,
            base_points,
            contraction,
        })
    }

    /// The same system with every number converted through `f`.
    pub fn convert<U: Scalar>(&self, f: impl Fn(&T) -> U) -> MarkovSystem<U> {
        let space = match &self.space {
            StateSpace::Finite(s) => StateSpace::Finite(FiniteSpace {
                labels: s.labels.clone(),
                metric: s.metric.iter().map(|r| r.iter().map(&f).collect()).collect(),
                cell_of: s.cell_of.clone(),
            }),
            StateSpace::Interval(iv) => StateSpace::Interval(IntervalSpace {
                breaks: iv.breaks.iter().map(&f).collect(),
            }),
        };
        let edges = self
            .edges
            .iter()
            .map(|e| Edge {
                source: e.source,
                target: e.target,
                map: match &e.map {
                    EdgeMap::Table(t) => EdgeMap::Table(t.clone()),
                    EdgeMap::Affine { slope, intercept } => EdgeMap::Affine {
                        slope: f(slope),
                        intercept: f(intercept),
                    },
                },
                prob: match &e.prob {
                    EdgeProb::Table(t) => EdgeProb::Table(t.iter().map(&f).collect()),
                    EdgeProb::Poly(c) => EdgeProb::Poly(c.iter().map(&f).collect()),
                },
            })
            .collect();
        MarkovSystem {
            alphabet: self.alphabet.clone(),
            space,
            edges,
            base_points: self.base_points.iter().map(|p| convert_point(p, &f)).collect(),
            contraction: self.contraction.as_ref().map(&f),
        }
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn space(&self) -> &StateSpace<T> {
        &self.space
    }

    pub fn edge(&self, e: Symbol) -> &Edge<T> {
        &self.edges[e.index()]
    }

    pub fn edges(&self) -> &[Edge<T>] {
        &self.edges
    }

    pub fn base_points(&self) -> &[Point<T>] {
        &self.base_points
    }

    pub fn contraction_constant(&self) -> Option<&T> {
        self.contraction.as_ref()
    }

    pub fn n_cells(&self) -> usize {
        match &self.space {
            StateSpace::Finite(f) => f.cell_of.iter().copied().max().map_or(0, |m| m + 1),
            StateSpace::Interval(iv) => iv.breaks.len() - 1,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self.space, StateSpace::Finite(_))
    }

    pub fn n_sites(&self) -> Option<usize> {
        match &self.space {
            StateSpace::Finite(f) => Some(f.labels.len()),
            StateSpace::Interval(_) => None,
        }
    }

    /// Finite space whose cells are single points: an ordinary finite chain.
    pub fn is_finite_chain(&self) -> bool {
        match &self.space {
            StateSpace::Finite(f) => {
                let mut seen = vec![0usize; self.n_cells()];
                f.cell_of.iter().for_each(|&c| seen[c] += 1);
                seen.iter().all(|&n| n == 1)
            }
            StateSpace::Interval(_) => false,
        }
    }

    pub fn cell_of(&self, x: &Point<T>) -> Option<usize> {
        match (&self.space, x) {
            (StateSpace::Finite(f), Point::Site(i)) => f.cell_of.get(*i).copied(),
            (StateSpace::Interval(iv), Point::Real(x)) => {
                let b = &iv.breaks;
                if x < &b[0] || x > &b[b.len() - 1] {
                    return None;
                }
                (0..b.len() - 1).find(|&i| x < &b[i + 1] || i == b.len() - 2)
            }
            _ => None,
        }
    }

    pub fn sites_in_cell(&self, cell: usize) -> Vec<usize> {
        match &self.space {
            StateSpace::Finite(f) => (0..f.labels.len()).filter(|&s| f.cell_of[s] == cell).collect(),
            StateSpace::Interval(_) => Vec::new(),
        }
    }

    pub fn point_label(&self, x: &Point<T>) -> String {
        match (&self.space, x) {
            (StateSpace::Finite(f), Point::Site(i)) => {
                f.labels.get(*i).cloned().unwrap_or_else(|| format!("#{i}"))
            }
            (_, Point::Real(v)) => format!("{v}"),
            (_, Point::Site(i)) => format!("#{i}"),
        }
    }

    pub fn site(&self, label: &str) -> Result<Point<T>> {
        match &self.space {
            StateSpace::Finite(f) => f
                .labels
                .iter()
                .position(|l| l == label)
                .map(Point::Site)
                .ok_or_else(|| Error::Config(format!("unknown point `{label}`"))),
            StateSpace::Interval(_) => Err(Error::Config("interval spaces have no labeled points".into())),
        }
    }

    /// Raw evaluation of `p_e` without the cell check.
    fn prob_raw(&self, e: Symbol, x: &Point<T>) -> T {
        match (&self.edge(e).prob, x) {
            (EdgeProb::Table(t), Point::Site(i)) => t[*i].clone(),
            (EdgeProb::Poly(c), Point::Real(x)) => eval_poly(c, x),
            _ => T::zero(),
        }
    }

    /// `p_e(x)`, extended by zero outside `K_{i(e)}`.
    pub fn prob(&self, e: Symbol, x: &Point<T>) -> Result<T> {
        let cell = self
            .cell_of(x)
            .ok_or_else(|| Error::OutsideCells(self.point_label(x)))?;
        if cell != self.edge(e).source {
            return Ok(T::zero());
        }
        Ok(self.prob_raw(e, x))
    }

    /// `w_e(x)`; evaluation outside the source cell is an error.
    pub fn map(&self, e: Symbol, x: &Point<T>) -> Result<Point<T>> {
        let out_of_cell = || Error::OutOfCell {
            edge: self.alphabet.name(e).to_string(),
            point: self.point_label(x),
        };
        if self.cell_of(x) != Some(self.edge(e).source) {
            return Err(out_of_cell());
        }
        match (&self.edge(e).map, x) {
            (EdgeMap::Table(t), Point::Site(i)) => t[*i].map(Point::Site).ok_or_else(out_of_cell),
            (EdgeMap::Affine { slope, intercept }, Point::Real(x)) => {
                Ok(Point::Real(slope.clone() * x.clone() + intercept.clone()))
            }
            _ => Err(out_of_cell()),
        }
    }

    /// Symbols with `i(e) = cell`.
    pub fn edges_from(&self, cell: usize) -> impl Iterator<Item = Symbol> + '_ {
        self.alphabet.symbols().filter(move |&e| self.edge(e).source == cell)
    }

    pub fn distance(&self, a: &Point<T>, b: &Point<T>) -> T {
        match (&self.space, a, b) {
            (StateSpace::Finite(f), Point::Site(i), Point::Site(j)) => f.metric[*i][*j].clone(),
            (_, Point::Real(x), Point::Real(y)) => (x.clone() - y.clone()).abs(),
            _ => T::zero(),
        }
    }

    pub fn cell_bounds(&self, cell: usize) -> Option<(T, T)> {
        match &self.space {
            StateSpace::Interval(iv) => Some((iv.breaks[cell].clone(), iv.breaks[cell + 1].clone())),
            StateSpace::Finite(_) => None,
        }
    }

    pub fn cell_diameter(&self, cell: usize) -> T {
        match &self.space {
            StateSpace::Finite(f) => {
                let sites = self.sites_in_cell(cell);
                let mut d = T::zero();
                for &a in &sites {
                    for &b in &sites {
                        d = T::max_of(d, f.metric[a][b].clone());
                    }
                }
                d
            }
            StateSpace::Interval(iv) => iv.breaks[cell + 1].clone() - iv.breaks[cell].clone(),
        }
    }

    pub fn diameter(&self) -> T {
        match &self.space {
            StateSpace::Finite(f) => f
                .metric
                .iter()
                .flatten()
                .cloned()
                .fold(T::zero(), T::max_of),
            StateSpace::Interval(iv) => iv.breaks[iv.breaks.len() - 1].clone() - iv.breaks[0].clone(),
        }
    }

    /// Lipschitz constant of `w_e` on its source cell.
    pub fn map_lipschitz(&self, e: Symbol) -> T {
        match (&self.space, &self.edge(e).map) {
            (_, EdgeMap::Affine { slope, .. }) => slope.abs(),
            (StateSpace::Finite(f), EdgeMap::Table(t)) => {
                let sites = self.sites_in_cell(self.edge(e).source);
                let mut best = T::zero();
                for &a in &sites {
                    for &b in &sites {
                        let d = f.metric[a][b].clone();
                        if a == b || d.is_zero() {
                            continue;
                        }
                        if let (Some(wa), Some(wb)) = (t[a], t[b]) {
                            best = T::max_of(best, f.metric[wa][wb].clone() / d);
                        }
                    }
                }
                best
            }
            _ => T::zero(),
        }
    }

    /// Upper bound on the Lipschitz constant of `p_e` on its source cell.
    /// Exact for affine probabilities and for finite spaces.
    pub fn prob_lipschitz(&self, e: Symbol) -> T {
        let edge = self.edge(e);
        match (&self.space, &edge.prob) {
            (StateSpace::Interval(iv), EdgeProb::Poly(c)) => {
                let lo = iv.breaks[edge.source].abs();
                let hi = iv.breaks[edge.source + 1].abs();
                let r = T::max_of(lo, hi);
                let mut bound = T::zero();
                let mut power = T::one();
                for (k, ck) in c.iter().enumerate().skip(1) {
                    bound = bound + T::from_usize(k) * ck.abs() * power.clone();
                    power = power * r.clone();
                }
                bound
            }
            (StateSpace::Finite(f), EdgeProb::Table(t)) => {
                let sites = self.sites_in_cell(edge.source);
                let mut best = T::zero();
                for &a in &sites {
                    for &b in &sites {
                        let d = f.metric[a][b].clone();
                        if a != b && !d.is_zero() {
                            best = T::max_of(best, (t[a].clone() - t[b].clone()).abs() / d);
                        }
                    }
                }
                best
            }
            _ => T::zero(),
        }
    }

    /// Follows `word` from `x` with the product formula for `P_x`. Returns the
    /// path probability and the orbit endpoint (or `None` once the
    /// probability has become zero).
    pub fn path_product(&self, x: &Point<T>, word: &[Symbol]) -> Result<(T, Option<Point<T>>)> {
        if self.cell_of(x).is_none() {
            return Err(Error::OutsideCells(self.point_label(x)));
        }
        let mut value = T::one();
        let mut cur = x.clone();
        for &e in word {
            let p = self.prob(e, &cur)?;
            if p.is_zero() {
                return Ok((T::zero(), None));
            }
            value = value * p;
            cur = self.map(e, &cur)?;
        }
        Ok((value, Some(cur)))
    }
}

fn convert_point<T: Scalar, U: Scalar>(p: &Point<T>, f: impl Fn(&T) -> U) -> Point<U> {
    match p {
        Point::Site(i) => Point::Site(*i),
        Point::Real(x) => Point::Real(f(x)),
    }
}

impl MarkovSystem<BigRational> {
    /// Float or exact copy of an exactly specified system.
    pub fn to_scalar<U: Scalar>(&self) -> MarkovSystem<U> {
        self.convert(|r| U::from_rational(r))
    }
}

/// A finitely supported measure on `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMeasure<T> {
    atoms: Vec<(Point<T>, T)>,
}

impl<T: Scalar> PointMeasure<T> {
    /// Merges atoms at identical points and drops zero weights.
    pub fn new(atoms: Vec<(Point<T>, T)>) -> Result<Self> {
        if atoms.iter().any(|(_, w)| w.is_negative()) {
            return Err(Error::Config("negative atom weight".into()));
        }
        Ok(Self::canonical(atoms))
    }

    fn canonical(mut atoms: Vec<(Point<T>, T)>) -> Self {
        atoms.sort_by(|a, b| a.0.order(&b.0));
        let mut out: Vec<(Point<T>, T)> = Vec::with_capacity(atoms.len());
        for (p, w) in atoms {
            match out.last_mut() {
                Some((q, acc)) if *q == p => *acc = acc.clone() + w,
                _ => out.push((p, w)),
            }
        }
        out.retain(|(_, w)| !w.is_zero());
        PointMeasure { atoms: out }
    }

    pub fn dirac(x: Point<T>) -> Self {
        PointMeasure {
            atoms: vec![(x, T::one())],
        }
    }

    pub fn zero() -> Self {
        PointMeasure { atoms: Vec::new() }
    }

    /// Uniform over the given points (duplicates add up).
    pub fn uniform(points: &[Point<T>]) -> Self {
        let w = T::one() / T::from_usize(points.len().max(1));
        Self::canonical(points.iter().map(|p| (p.clone(), w.clone())).collect())
    }

    pub fn atoms(&self) -> &[(Point<T>, T)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total(&self) -> T {
        self.atoms.iter().map(|(_, w)| w.clone()).sum()
    }

    pub fn weight_at(&self, x: &Point<T>) -> T {
        self.atoms
            .iter()
            .find(|(p, _)| p == x)
            .map(|(_, w)| w.clone())
            .unwrap_or_else(T::zero)
    }

    pub fn scaled(&self, c: &T) -> Self {
        Self::canonical(self.atoms.iter().map(|(p, w)| (p.clone(), w.clone() * c.clone())).collect())
    }

    /// `self + other`.
    pub fn plus(&self, other: &Self) -> Self {
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().cloned());
        Self::canonical(atoms)
    }

    pub fn l1_distance(&self, other: &Self) -> T {
        let mut atoms: Vec<(Point<T>, T)> = self.atoms.clone();
        atoms.extend(other.atoms.iter().map(|(p, w)| (p.clone(), -w.clone())));
        atoms.sort_by(|a, b| a.0.order(&b.0));
        let mut total = T::zero();
        let mut i = 0;
        while i < atoms.len() {
            let mut acc = T::zero();
            let mut j = i;
            while j < atoms.len() && atoms[j].0 == atoms[i].0 {
                acc = acc + atoms[j].1.clone();
                j += 1;
            }
            total = total + acc.abs();
            i = j;
        }
        total
    }

    pub fn convert<U: Scalar>(&self, f: impl Fn(&T) -> U) -> PointMeasure<U> {
        PointMeasure::canonical(
            self.atoms
                .iter()
                .map(|(p, w)| (convert_point(p, &f), f(w)))
                .collect(),
        )
    }
}

/// Options for [`apply_u_star`].
#[derive(Debug, Clone)]
pub struct UStarOptions {
    /// Maximum number of atoms after a step.
    pub atom_budget: usize,
    /// Atoms lighter than this are dropped and the mass renormalized.
    pub prune_floor: Option<f64>,
}

impl Default for UStarOptions {
    fn default() -> Self {
        UStarOptions {
            atom_budget: 1 << 20,
            prune_floor: None,
        }
    }
}

/// `U*nu = sum_x nu(x) sum_{e: i(e) = i(x)} p_e(x) delta_{w_e x}`.
pub fn apply_u_star<T: Scalar>(
    sys: &MarkovSystem<T>,
    nu: &PointMeasure<T>,
    opts: &UStarOptions,
) -> Result<PointMeasure<T>> {
    let mut out = Vec::with_capacity(nu.len() * 2);
    for (x, w) in nu.atoms() {
        let cell = sys
            .cell_of(x)
            .ok_or_else(|| Error::OutsideCells(sys.point_label(x)))?;
        for e in sys.edges_from(cell) {
            let p = sys.prob(e, x)?;
            if p.is_zero() {
                continue;
            }
            out.push((sys.map(e, x)?, w.clone() * p));
        }
    }
    let mut mu = PointMeasure::canonical(out);
    if let Some(floor) = opts.prune_floor {
        let before = mu.total();
        mu.atoms.retain(|(_, w)| w.to_f64() >= floor);
        let after = mu.total();
        if !after.is_zero() && after != before {
            let c = before / after;
            mu = mu.scaled(&c);
        }
    }
    if mu.len() > opts.atom_budget {
        return Err(Error::AtomBudget {
            budget: opts.atom_budget,
            atoms: mu.len(),
        });
    }
    Ok(mu)
}

pub fn iterate_u_star<T: Scalar>(
    sys: &MarkovSystem<T>,
    nu: &PointMeasure<T>,
    k: usize,
    opts: &UStarOptions,
) -> Result<PointMeasure<T>> {
    let mut mu = nu.clone();
    for _ in 0..k {
        mu = apply_u_star(sys, &mu, opts)?;
    }
    Ok(mu)
}

/// `nu_0 = (1/N) sum_i delta_{x_i}`.
pub fn nu_zero<T: Scalar>(sys: &MarkovSystem<T>) -> PointMeasure<T> {
    PointMeasure::uniform(sys.base_points())
}

/// `nu'_0`: uniform over the base points of the given zero-based cells.
pub fn nu_prime<T: Scalar>(sys: &MarkovSystem<T>, cells: &BTreeSet<usize>) -> Result<PointMeasure<T>> {
    if cells.is_empty() {
        return Err(Error::Config("nu' needs a non-empty set of states".into()));
    }
    let pts = cells
        .iter()
        .map(|&c| {
            sys.base_points()
                .get(c)
                .cloned()
                .ok_or_else(|| Error::Config(format!("no state {}", c + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PointMeasure::uniform(&pts))
}

#[derive(Debug, Clone, Serialize)]
pub struct Finding {
    pub invariant: &'static str,
    pub detail: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }

    fn flag(&mut self, invariant: &'static str, detail: String) {
        self.findings.push(Finding { invariant, detail });
    }
}

/// Checks every structural invariant of a Markov system. Interval systems
/// are checked on a uniform grid of `grid` points plus the cell endpoints.
#[allow(clippy::needless_range_loop)]
pub fn validate_system<T: Scalar>(sys: &MarkovSystem<T>, grid: usize) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = sys.n_cells();
    let name = |e: Symbol| sys.alphabet().name(e).to_string();
    let tol = if T::EXACT { 0.0 } else { 1e-12 };

    let mut hit = vec![false; n];
    for e in sys.alphabet().symbols() {
        let edge = sys.edge(e);
        if edge.source >= n {
            report.flag("source-range", format!("i({}) = {} is not a state", name(e), edge.source + 1));
        } else {
            hit[edge.source] = true;
        }
        if edge.target >= n {
            report.flag("target-range", format!("t({}) = {} is not a state", name(e), edge.target + 1));
        }
    }
    for (c, h) in hit.iter().enumerate() {
        if !h {
            report.flag("source-surjective", format!("no edge leaves state {}", c + 1));
        }
    }

    // sample points per cell
    let mut cell_points: Vec<Vec<Point<T>>> = vec![Vec::new(); n];
    match sys.space() {
        StateSpace::Finite(f) => {
            for (s, &c) in f.cell_of.iter().enumerate() {
                cell_points[c].push(Point::Site(s));
            }
            for (c, pts) in cell_points.iter().enumerate() {
                if pts.is_empty() {
                    report.flag("partition-nonempty", format!("state {} has no points", c + 1));
                }
            }
            let m = &f.metric;
            let k = m.len();
            for i in 0..k {
                if !m[i][i].is_zero() {
                    report.flag("metric-zero-diagonal", format!("d({0},{0}) != 0", f.labels[i]));
                }
                for j in 0..k {
                    if m[i][j] != m[j][i] {
                        report.flag("metric-symmetric", format!("d({},{}) != d({},{})", f.labels[i], f.labels[j], f.labels[j], f.labels[i]));
                    }
                    if m[i][j].is_negative() || (i != j && m[i][j].is_zero()) {
                        report.flag("metric-positive", format!("d({},{}) is not positive", f.labels[i], f.labels[j]));
                    }
                    for l in 0..k {
                        if m[i][l].to_f64() > (m[i][j].clone() + m[j][l].clone()).to_f64() + tol {
                            report.flag("metric-triangle", format!("d({},{}) > d({},{}) + d({},{})", f.labels[i], f.labels[l], f.labels[i], f.labels[j], f.labels[j], f.labels[l]));
                        }
                    }
                }
            }
        }
        StateSpace::Interval(iv) => {
            let grid = grid.max(2);
            for c in 0..n {
                let lo = iv.breaks[c].clone();
                let hi = iv.breaks[c + 1].clone();
                let last = c + 1 == n;
                for g in 0..=grid {
                    let x = lo.clone() + (hi.clone() - lo.clone()) * T::from_usize(g) / T::from_usize(grid);
                    if x == hi && !last {
                        continue;
                    }
                    cell_points[c].push(Point::Real(x));
                }
            }
        }
    }

    for (c, points) in cell_points.iter().enumerate() {
        for x in points {
            let mut total = T::zero();
            for e in sys.edges_from(c) {
                let edge = sys.edge(e);
                let p = sys.prob_raw(e, x);
                // written this way so NaN counts as a violation
                #[allow(clippy::neg_cmp_op_on_partial_ord)]
                if !(p > T::zero()) {
                    report.flag("positivity", format!("p_{}({}) = {} is not positive", name(e), sys.point_label(x), p));
                }
                if p > T::one() {
                    report.flag("positivity", format!("p_{}({}) = {} exceeds 1", name(e), sys.point_label(x), p));
                }
                total = total + p;
                match sys.map(e, x) {
                    Ok(y) => {
                        if edge.target < n && sys.cell_of(&y) != Some(edge.target) {
                            report.flag("target-consistency", format!("w_{}({}) = {} is not in state {}", name(e), sys.point_label(x), sys.point_label(&y), edge.target + 1));
                        }
                    }
                    Err(_) => report.flag("map-defined", format!("w_{} undefined at {}", name(e), sys.point_label(x))),
                }
            }
            let off = (total.clone() - T::one()).abs();
            if off.to_f64() > tol || (T::EXACT && !off.is_zero()) {
                report.flag("normalization", format!("probabilities at {} sum to {}", sys.point_label(x), total));
            }
        }
    }

    if sys.base_points().len() != n {
        report.flag("base-point-cell", format!("{} base points for {} states", sys.base_points().len(), n));
    }
    for (c, x) in sys.base_points().iter().enumerate() {
        if sys.cell_of(x) != Some(c) {
            report.flag("base-point-cell", format!("base point {} is not in state {}", sys.point_label(x), c + 1));
        }
    }
    if let Some(a) = sys.contraction_constant() {
        if !(a > &T::zero() && a < &T::one()) {
            report.flag("contraction-constant", format!("a = {a} is not in (0,1)"));
        }
    }
    report
}

#[derive(Debug, Clone)]
pub struct ContractionReport<T> {
    pub ratio: T,
    pub pairs: usize,
    pub exhaustive: bool,
    pub contractive: bool,
}

fn contraction_term<T: Scalar>(sys: &MarkovSystem<T>, x: &Point<T>, y: &Point<T>) -> Result<Option<T>> {
    let d = sys.distance(x, y);
    if d.is_zero() {
        return Ok(None);
    }
    let cell = sys.cell_of(x).ok_or_else(|| Error::OutsideCells(sys.point_label(x)))?;
    let mut acc = T::zero();
    for e in sys.edges_from(cell) {
        let p = sys.prob(e, x)?;
        acc = acc + p * sys.distance(&sys.map(e, x)?, &sys.map(e, y)?);
    }
    Ok(Some(acc / d))
}

/// `max sum_e p_e(x) d(w_e x, w_e y) / d(x, y)` over sampled pairs of
/// distinct points in a common cell. Finite spaces are paired exhaustively
/// when `samples` covers every ordered pair.
pub fn contraction_ratio<T: Scalar>(
    sys: &MarkovSystem<T>,
    samples: usize,
    seed: u64,
) -> Result<ContractionReport<T>> {
    let samples = samples.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs: Vec<(Point<T>, Point<T>)> = Vec::new();
    let mut exhaustive = false;
    match sys.space() {
        StateSpace::Finite(_) => {
            let mut all = Vec::new();
            for c in 0..sys.n_cells() {
                let sites = sys.sites_in_cell(c);
                for &a in &sites {
                    for &b in &sites {
                        if a != b {
                            all.push((Point::Site(a), Point::Site(b)));
                        }
                    }
                }
            }
            if samples >= all.len() {
                exhaustive = true;
                pairs = all;
            } else {
                for _ in 0..samples {
                    pairs.push(all[rng.gen_range(0..all.len())].clone());
                }
            }
        }
        StateSpace::Interval(iv) => {
            let n = sys.n_cells();
            for c in 0..n {
                let lo = iv.breaks[c].clone();
                let hi = iv.breaks[c + 1].clone();
                let last = c + 1 == n;
                let inside = |x: T| if !last && x == hi { lo.clone() } else { x };
                pairs.push((Point::Real(lo.clone()), Point::Real(inside(hi.clone()))));
                pairs.push((Point::Real(inside(hi.clone())), Point::Real(lo.clone())));
            }
            for _ in 0..samples {
                let c = rng.gen_range(0..n);
                let lo = iv.breaks[c].clone();
                let width = iv.breaks[c + 1].clone() - lo.clone();
                // dyadic fractions keep the rational path exact
                let u = T::from_f64(rng.gen_range(0..1u64 << 30) as f64 / (1u64 << 30) as f64);
                let v = T::from_f64(rng.gen_range(0..1u64 << 30) as f64 / (1u64 << 30) as f64);
                pairs.push((
                    Point::Real(lo.clone() + width.clone() * u),
                    Point::Real(lo + width * v),
                ));
            }
        }
    }
    let mut ratio = T::zero();
    let mut used = 0;
    for (x, y) in &pairs {
        if let Some(r) = contraction_term(sys, x, y)? {
            ratio = T::max_of(ratio, r);
            used += 1;
        }
    }
    let contractive = ratio < T::one();
    Ok(ContractionReport {
        ratio,
        pairs: used,
        exhaustive,
        contractive,
    })
}

/// Site-to-site transition matrix of a finite-points system.
pub fn transition_matrix<T: Scalar>(sys: &MarkovSystem<T>) -> Result<Vec<Vec<T>>> {
    let n = sys
        .n_sites()
        .ok_or_else(|| Error::Unsupported("transition matrix needs a finite space".into()))?;
    let mut p = vec![vec![T::zero(); n]; n];
    for (x, row) in p.iter_mut().enumerate() {
        let pt = Point::Site(x);
        let cell = sys.cell_of(&pt).ok_or_else(|| Error::OutsideCells(sys.point_label(&pt)))?;
        for e in sys.edges_from(cell) {
            let pr = sys.prob(e, &pt)?;
            if let Point::Site(y) = sys.map(e, &pt)? {
                row[y] = row[y].clone() + pr;
            }
        }
    }
    Ok(p)
}

#[derive(Debug, Clone)]
pub struct StationaryResult<T> {
    pub measure: PointMeasure<T>,
    /// Number of closed communicating classes; the fixed point is unique iff 1.
    pub closed_classes: usize,
    pub unique: bool,
}

/// Solves `U*nu = nu` exactly on a finite-points system. With several closed
/// classes, the fixed point supported on the class containing the lowest
/// site is returned and `unique` is false.
pub fn stationary_distribution<T: Scalar>(sys: &MarkovSystem<T>) -> Result<StationaryResult<T>> {
    let p = transition_matrix(sys)?;
    let n = p.len();
    let reach: Vec<Vec<bool>> = (0..n)
        .map(|s| {
            let mut seen = vec![false; n];
            let mut queue = VecDeque::from([s]);
            seen[s] = true;
            while let Some(x) = queue.pop_front() {
                for y in 0..n {
                    if !p[x][y].is_zero() && !seen[y] {
                        seen[y] = true;
                        queue.push_back(y);
                    }
                }
            }
            seen
        })
        .collect();
    let mut classes: Vec<Vec<usize>> = Vec::new();
    let mut assigned = vec![false; n];
    for s in 0..n {
        if assigned[s] {
            continue;
        }
        let class: Vec<usize> = (0..n).filter(|&t| reach[s][t] && reach[t][s]).collect();
        class.iter().for_each(|&t| assigned[t] = true);
        let closed = class.iter().all(|&x| (0..n).all(|y| p[x][y].is_zero() || class.contains(&y)));
        if closed {
            classes.push(class);
        }
    }
    let class = classes
        .first()
        .ok_or_else(|| Error::Singular("no closed class".into()))?
        .clone();
    let c = class.len();
    // rows: balance equations for all but the last site, then normalization
    let mut a = vec![vec![T::zero(); c + 1]; c];
    for (row, &y) in class.iter().enumerate().take(c - 1) {
        for (col, &x) in class.iter().enumerate() {
            a[row][col] = p[x][y].clone() - if x == y { T::one() } else { T::zero() };
        }
    }
    a[c - 1].fill(T::one());
    let pi = solve_augmented(a)?;
    if pi.iter().any(|v| v.to_f64() < -1e-12) {
        return Err(Error::Singular("negative stationary weight".into()));
    }
    let atoms = class
        .iter()
        .zip(pi)
        .map(|(&s, w)| (Point::Site(s), if w.is_negative() { T::zero() } else { w }))
        .collect();
    Ok(StationaryResult {
        measure: PointMeasure::canonical(atoms),
        closed_classes: classes.len(),
        unique: classes.len() == 1,
    })
}

/// Gaussian elimination with partial pivoting on an augmented `n x (n+1)` matrix.
#[allow(clippy::needless_range_loop)]
pub(crate) fn solve_augmented<T: Scalar>(mut a: Vec<Vec<T>>) -> Result<Vec<T>> {
    let n = a.len();
    for col in 0..n {
        let pivot = (col..n)
            .filter(|&r| !a[r][col].is_zero())
            .max_by(|&r, &s| {
                a[r][col]
                    .abs()
                    .partial_cmp(&a[s][col].abs())
                    .unwrap_or(Ordering::Equal)
            })
            .ok_or_else(|| Error::Singular(format!("no pivot in column {col}")))?;
        if !T::EXACT && a[pivot][col].to_f64().abs() < 1e-14 {
            return Err(Error::Singular(format!(
                "pivot {:e} in column {col} is numerically zero",
                a[pivot][col].to_f64()
            )));
        }
        a.swap(col, pivot);
        for r in 0..n {
            if r == col || a[r][col].is_zero() {
                continue;
            }
            let f = a[r][col].clone() / a[col][col].clone();
            for k in col..=n {
                let v = a[col][k].clone() * f.clone();
                a[r][k] = a[r][k].clone() - v;
            }
        }
    }
    Ok((0..n).map(|i| a[i][n].clone() / a[i][i].clone()).collect())
}

/// Per-cell power moments `E[x^j 1_{K_i}]` of a measure on an interval space.
#[derive(Debug, Clone)]
pub struct Moments<T> {
    pub per_cell: Vec<Vec<T>>,
}

impl<T: Scalar> Moments<T> {
    pub fn of(sys: &MarkovSystem<T>, nu: &PointMeasure<T>, degree: usize) -> Result<Self> {
        let mut per_cell = vec![vec![T::zero(); degree + 1]; sys.n_cells()];
        for (x, w) in nu.atoms() {
            let cell = sys.cell_of(x).ok_or_else(|| Error::OutsideCells(sys.point_label(x)))?;
            let v = x
                .as_real()
                .ok_or_else(|| Error::Unsupported("moments need an interval space".into()))?;
            let mut power = w.clone();
            for slot in per_cell[cell].iter_mut() {
                *slot = slot.clone() + power.clone();
                power = power * v.clone();
            }
        }
        Ok(Moments { per_cell })
    }

    pub fn degree(&self) -> usize {
        self.per_cell.first().map_or(0, |m| m.len().saturating_sub(1))
    }

    /// Moments of `U*mu`; the available degree drops by the largest
    /// probability-polynomial degree.
    #[allow(clippy::needless_range_loop)]
    pub fn push_forward(&self, sys: &MarkovSystem<T>) -> Result<Self> {
        let max_prob_deg = sys
            .edges()
            .iter()
            .map(|e| match &e.prob {
                EdgeProb::Poly(c) => c.len() - 1,
                EdgeProb::Table(_) => 0,
            })
            .max()
            .unwrap_or(0);
        let d = self.degree();
        if d < max_prob_deg {
            return Err(Error::Unsupported("not enough moments left".into()));
        }
        let out_deg = d - max_prob_deg;
        let mut out = vec![vec![T::zero(); out_deg + 1]; sys.n_cells()];
        for edge in sys.edges() {
            let (EdgeMap::Affine { slope, intercept }, EdgeProb::Poly(c)) = (&edge.map, &edge.prob) else {
                return Err(Error::Unsupported("moments need affine maps".into()));
            };
            let src = &self.per_cell[edge.source];
            for j in 0..=out_deg {
                // (a x + b)^j = sum_l C(j,l) a^l b^(j-l) x^l
                let binom = binomial_row::<T>(j);
                let mut acc = T::zero();
                for (l, bl) in binom.iter().enumerate() {
                    let coef = bl.clone() * pow(slope, l) * pow(intercept, j - l);
                    if coef.is_zero() {
                        continue;
                    }
                    for (k, ck) in c.iter().enumerate() {
                        acc = acc + coef.clone() * ck.clone() * src[k + l].clone();
                    }
                }
                out[edge.target][j] = out[edge.target][j].clone() + acc;
            }
        }
        Ok(Moments { per_cell: out })
    }

    /// `phi_0(mu)(_0[word])` through the polynomial `x -> P_x(word)`.
    pub fn cylinder_mass(&self, sys: &MarkovSystem<T>, word: &[Symbol]) -> Result<T> {
        let Some(first) = word.first() else {
            return Ok(self.per_cell.iter().map(|m| m[0].clone()).sum());
        };
        let poly = path_polynomial(sys, word)?;
        let m = &self.per_cell[sys.edge(*first).source];
        if poly.len() > m.len() {
            return Err(Error::Unsupported("not enough moments for this word".into()));
        }
        Ok(poly.iter().zip(m).map(|(a, b)| a.clone() * b.clone()).sum())
    }
}

fn pow<T: Scalar>(x: &T, k: usize) -> T {
    (0..k).fold(T::one(), |acc, _| acc * x.clone())
}

fn binomial_row<T: Scalar>(j: usize) -> Vec<T> {
    let mut row = vec![T::one()];
    for _ in 0..j {
        let mut next = vec![T::one(); row.len() + 1];
        for i in 1..row.len() {
            next[i] = row[i - 1].clone() + row[i].clone();
        }
        row = next;
    }
    row
}

/// Coefficients of `x -> P_x(_0[word])` on the source cell of the first symbol.
pub fn path_polynomial<T: Scalar>(sys: &MarkovSystem<T>, word: &[Symbol]) -> Result<Vec<T>> {
    let mut poly = vec![T::one()];
    for (idx, &e) in word.iter().enumerate().rev() {
        let edge = sys.edge(e);
        if let Some(&next) = word.get(idx + 1) {
            if sys.edge(next).source != edge.target {
                return Ok(vec![T::zero()]);
            }
        }
        let (EdgeMap::Affine { slope, intercept }, EdgeProb::Poly(c)) = (&edge.map, &edge.prob) else {
            return Err(Error::Unsupported("path polynomials need an interval system".into()));
        };
        let composed = compose_affine(&poly, slope, intercept);
        poly = poly_mul(c, &composed);
    }
    Ok(poly)
}

fn compose_affine<T: Scalar>(poly: &[T], a: &T, b: &T) -> Vec<T> {
    // Horner in polynomial arithmetic: q(x) = p(a x + b)
    let lin = vec![b.clone(), a.clone()];
    let mut out: Vec<T> = Vec::new();
    for c in poly.iter().rev() {
        out = if out.is_empty() {
            vec![T::zero()]
        } else {
            poly_mul(&out, &lin)
        };
        out[0] = out[0].clone() + c.clone();
    }
    out
}

fn poly_mul<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] = out[i + j].clone() + x.clone() * y.clone();
        }
    }
    out
}

/// Convergence profile of `U*`-iterates on an interval space.
#[derive(Debug, Clone)]
pub struct IterateProfile<T> {
    pub steps: usize,
    /// `max_c |phi_0(U*^{j+1} nu)(c) - phi_0(U*^j nu)(c)|` for `j = 0..steps`.
    pub discrepancies: Vec<f64>,
    /// Cylinder masses of the last iterate on the test family.
    pub final_masses: Vec<(Vec<Symbol>, T)>,
    /// The iterate as atoms, when it fits in the atom budget.
    pub atoms: Option<PointMeasure<T>>,
}

/// Runs `steps` iterations of `U*` from `nu` and measures successive
/// differences on all cylinders `_0[w]` with `|w| <= family_len`.
///
/// Cylinder masses come from exact moment propagation, so the profile is
/// available even when the atomic support outgrows the budget.
pub fn iterate_profile<T: Scalar>(
    sys: &MarkovSystem<T>,
    nu: &PointMeasure<T>,
    steps: usize,
    family_len: usize,
    opts: &UStarOptions,
) -> Result<IterateProfile<T>> {
    let max_prob_deg = sys
        .edges()
        .iter()
        .map(|e| match &e.prob {
            EdgeProb::Poly(c) => c.len() - 1,
            EdgeProb::Table(_) => 0,
        })
        .max()
        .unwrap_or(0);
    let family: Vec<Vec<Symbol>> = (1..=family_len)
        .flat_map(|len| crate::shift::window_points(sys.alphabet(), 0, len as i64 - 1))
        .collect();
    let fam_deg = family_len * max_prob_deg;
    let mut moments = Moments::of(sys, nu, fam_deg + steps * max_prob_deg)?;
    let masses = |m: &Moments<T>| -> Result<Vec<T>> {
        family.iter().map(|w| m.cylinder_mass(sys, w)).collect()
    };
    let mut prev = masses(&moments)?;
    let mut discrepancies = Vec::with_capacity(steps);
    for _ in 0..steps {
        moments = moments.push_forward(sys)?;
        let cur = masses(&moments)?;
        let d = prev
            .iter()
            .zip(&cur)
            .map(|(a, b)| (a.clone() - b.clone()).abs().to_f64())
            .fold(0.0, f64::max);
        discrepancies.push(d);
        prev = cur;
    }
    let atoms = iterate_u_star(sys, nu, steps, opts).ok();
    Ok(IterateProfile {
        steps,
        discrepancies,
        final_masses: family.into_iter().zip(prev).collect(),
        atoms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::scalar::ratio;

    #[test]
    fn g1_is_valid_and_stationary() {
        let g1 = presets::g1();
        assert!(validate_system(&g1, 16).is_valid());
        let st = stationary_distribution(&g1).unwrap();
        assert!(st.unique);
        assert_eq!(st.measure.weight_at(&Point::Site(0)), ratio(4, 7));
        assert_eq!(st.measure.weight_at(&Point::Site(1)), ratio(3, 7));
        let next = apply_u_star(&g1, &st.measure, &UStarOptions::default()).unwrap();
        assert_eq!(next, st.measure);
    }

    #[test]
    fn one_u_star_step_from_state_one() {
        let g1 = presets::g1();
        let mu = apply_u_star(&g1, &PointMeasure::dirac(Point::Site(0)), &UStarOptions::default()).unwrap();
        assert_eq!(mu.atoms(), &[(Point::Site(0), ratio(7, 10)), (Point::Site(1), ratio(3, 10))]);
    }

    #[test]
    fn identity_chain_flags_non_uniqueness() {
        let sys = presets::chain(&[vec![ratio(1, 1), ratio(0, 1)], vec![ratio(0, 1), ratio(1, 1)]]).unwrap();
        let st = stationary_distribution(&sys).unwrap();
        assert!(!st.unique);
        assert_eq!(st.closed_classes, 2);
        let next = apply_u_star(&sys, &st.measure, &UStarOptions::default()).unwrap();
        assert_eq!(next, st.measure);
        assert_eq!(st.measure.total(), ratio(1, 1));
    }

    #[test]
    fn finite_chain_contraction_is_zero() {
        let r = contraction_ratio(&presets::g1(), 100, 1).unwrap();
        assert_eq!(r.ratio, ratio(0, 1));
        assert!(r.exhaustive);
    }

    #[test]
    fn g3_contraction_is_one_half() {
        let r = contraction_ratio(&presets::g3(), 200, 7).unwrap();
        assert_eq!(r.ratio, ratio(1, 2));
        assert!(r.contractive);
    }

    #[test]
    fn expanding_map_is_flagged() {
        let src = r#"
            [space]
            kind = "interval"
            bounds = ["0", "1"]
            [[edge]]
            symbol = "d"
            source = 1
            target = 1
            map = { slope = "2", intercept = "0" }
            prob = ["1"]
            [base_points]
            values = ["0"]
        "#;
        let sys = crate::config::parse_system(src).unwrap().into_markov().unwrap();
        let r = contraction_ratio(&sys, 50, 3).unwrap();
        assert!(r.ratio >= ratio(2, 1));
        assert!(!r.contractive);
        // the doubling map leaves [0,1]
        let report = validate_system(&sys, 8);
        assert!(report.findings.iter().any(|f| f.invariant == "target-consistency"));
    }

    #[test]
    fn validation_flags_zero_probability_and_bad_target() {
        let src = r#"
            [space]
            kind = "finite"
            points = ["a", "b"]
            partition = [1, 2]
            [[edge]]
            symbol = "aa"
            source = 1
            target = 1
            map = { a = "a" }
            prob = { a = "1" }
            [[edge]]
            symbol = "ab"
            source = 1
            target = 3
            map = { a = "b" }
            prob = { a = "0" }
            [[edge]]
            symbol = "ba"
            source = 2
            target = 1
            map = { b = "a" }
            prob = { b = "1" }
        "#;
        let sys = crate::config::parse_system(src).unwrap().into_markov().unwrap();
        let report = validate_system(&sys, 8);
        let names: Vec<_> = report.findings.iter().map(|f| f.invariant).collect();
        assert!(names.contains(&"positivity"));
        assert!(names.contains(&"target-range"));
    }

    #[test]
    fn g3_iterates_settle() {
        let g3 = presets::g3();
        let nu = nu_zero(&g3);
        let prof = iterate_profile(&g3, &nu, 30, 3, &UStarOptions { atom_budget: 1 << 12, prune_floor: None }).unwrap();
        assert!(*prof.discrepancies.last().unwrap() < 1e-6);
        assert!(prof.atoms.is_none());
    }

    #[test]
    fn moments_match_atoms() {
        let g3 = presets::g3();
        let nu = nu_zero(&g3);
        let mu = iterate_u_star(&g3, &nu, 5, &UStarOptions::default()).unwrap();
        let mut m = Moments::of(&g3, &nu, 3 + 5).unwrap();
        for _ in 0..5 {
            m = m.push_forward(&g3).unwrap();
        }
        let word = g3.alphabet().word("0,1,1").unwrap();
        let direct: BigRational = mu
            .atoms()
            .iter()
            .map(|(x, w)| w.clone() * g3.path_product(x, &word).unwrap().0)
            .sum();
        assert_eq!(m.cylinder_mass(&g3, &word).unwrap(), direct);
    }

    #[test]
    fn atom_budget_errors() {
        let g3 = presets::g3();
        let err = iterate_u_star(&g3, &nu_zero(&g3), 6, &UStarOptions { atom_budget: 8, prune_floor: None });
        assert!(matches!(err, Err(Error::AtomBudget { .. })));
    }
}
