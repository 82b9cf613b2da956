//! Alphabets, anchored cylinders and finite disjoint unions of cylinders.
//!
//! A cylinder `_m[e_m, ..., e_n]` is the set of two-sided sequences that read
//! the given word on the index window `m..=n`. Points of the shift space are
//! never materialized; everything here works on index windows.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Symbol(pub u32);

impl Symbol {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// The finite symbol set, in a fixed order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    names: Vec<String>,
}

impl Alphabet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::InvalidAlphabet("alphabet is empty".into()));
        }
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n.contains([',', ';', '|', '=']) || n.trim() != n {
                return Err(Error::InvalidAlphabet(format!("bad symbol name `{n}`")));
            }
            if names[..i].contains(n) {
                return Err(Error::InvalidAlphabet(format!("duplicate symbol `{n}`")));
            }
        }
        Ok(Alphabet { names })
    }

    /// Symbols named `0, 1, ..., n-1`.
    pub fn numbered(n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| i.to_string()))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn symbols(&self) -> impl ExactSizeIterator<Item = Symbol> + Clone {
        (0..self.names.len() as u32).map(Symbol)
    }

    pub fn name(&self, s: Symbol) -> &str {
        &self.names[s.index()]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn symbol(&self, name: &str) -> Result<Symbol> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| Symbol(i as u32))
            .ok_or_else(|| Error::UnknownSymbolName(name.to_string()))
    }

    pub fn check(&self, s: Symbol) -> Result<()> {
        if s.index() < self.names.len() {
            Ok(())
        } else {
            Err(Error::UnknownSymbol(s.index()))
        }
    }

    pub fn word(&self, names: &str) -> Result<Vec<Symbol>> {
        names.split(',').map(|n| self.symbol(n.trim())).collect()
    }

    pub fn format_word(&self, word: &[Symbol]) -> String {
        word.iter().map(|&s| self.name(s)).collect::<Vec<_>>().join(",")
    }
}

/// `_start[word]`: sequences with `sigma_{start+j} = word[j]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cylinder {
    start: i64,
    word: Vec<Symbol>,
}

impl PartialOrd for Cylinder {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cylinder {
    fn cmp(&self, other: &Self) -> Ordering {
        self.start
            .cmp(&other.start)
            .then_with(|| self.word.cmp(&other.word))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Equal,
    Disjoint,
    AContainsB,
    BContainsA,
    Neither,
}

impl Relation {
    pub fn swapped(self) -> Relation {
        match self {
            Relation::AContainsB => Relation::BContainsA,
            Relation::BContainsA => Relation::AContainsB,
            r => r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Past,
    Future,
}

impl Cylinder {
    pub fn new(start: i64, word: Vec<Symbol>) -> Result<Self> {
        if word.is_empty() {
            return Err(Error::CylinderSyntax("empty word".into()));
        }
        Ok(Cylinder { start, word })
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    /// Last constrained index.
    pub fn end(&self) -> i64 {
        self.start + self.word.len() as i64 - 1
    }

    pub fn word(&self) -> &[Symbol] {
        &self.word
    }

    pub fn len(&self) -> usize {
        self.word.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Constraint at an absolute index, if any.
    pub fn at(&self, index: i64) -> Option<Symbol> {
        if index < self.start || index > self.end() {
            None
        } else {
            Some(self.word[(index - self.start) as usize])
        }
    }

    pub fn check(&self, alphabet: &Alphabet) -> Result<()> {
        self.word.iter().try_for_each(|&s| alphabet.check(s))
    }

    pub fn parse(alphabet: &Alphabet, text: &str) -> Result<Self> {
        let bad = |why: &str| Error::CylinderSyntax(format!("`{text}`: {why}"));
        let mut start = None;
        let mut word = None;
        for field in text.split(';') {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| bad("expected key=value"))?;
            match key.trim() {
                "m" => {
                    start = Some(
                        value
                            .trim()
                            .parse::<i64>()
                            .map_err(|_| bad("start index is not an integer"))?,
                    )
                }
                "w" => word = Some(alphabet.word(value)?),
                other => return Err(bad(&format!("unknown key `{other}`"))),
            }
        }
        let start = start.ok_or_else(|| bad("missing m="))?;
        let word = word.ok_or_else(|| bad("missing w="))?;
        Cylinder::new(start, word)
    }

    pub fn display<'a>(&'a self, alphabet: &'a Alphabet) -> impl fmt::Display + 'a {
        CylinderDisplay {
            cylinder: self,
            alphabet,
        }
    }

    /// Set relation between two cylinders over the same alphabet.
    pub fn relation(alphabet: &Alphabet, a: &Cylinder, b: &Cylinder) -> Result<Relation> {
        a.check(alphabet)?;
        b.check(alphabet)?;
        Ok(a.relation_to(b))
    }

    pub(crate) fn relation_to(&self, b: &Cylinder) -> Relation {
        let lo = self.start.max(b.start);
        let hi = self.end().min(b.end());
        for i in lo..=hi {
            if self.at(i) != b.at(i) {
                return Relation::Disjoint;
            }
        }
        let a_in_b_window = b.start <= self.start && self.end() <= b.end();
        let b_in_a_window = self.start <= b.start && b.end() <= self.end();
        match (a_in_b_window, b_in_a_window) {
            (true, true) => Relation::Equal,
            // b's constraints all lie inside a's window and agree: a is smaller
            (false, true) => Relation::BContainsA,
            (true, false) => Relation::AContainsB,
            (false, false) => Relation::Neither,
        }
    }

    pub fn intersects(&self, b: &Cylinder) -> bool {
        self.relation_to(b) != Relation::Disjoint
    }

    /// Partition into `|E|` children, one index further into the past or future.
    pub fn refine(&self, alphabet: &Alphabet, direction: Direction) -> Vec<Cylinder> {
        alphabet
            .symbols()
            .map(|e| match direction {
                Direction::Past => {
                    let mut word = Vec::with_capacity(self.word.len() + 1);
                    word.push(e);
                    word.extend_from_slice(&self.word);
                    Cylinder {
                        start: self.start - 1,
                        word,
                    }
                }
                Direction::Future => {
                    let mut word = self.word.clone();
                    word.push(e);
                    Cylinder {
                        start: self.start,
                        word,
                    }
                }
            })
            .collect()
    }

    /// Past-refine until the cylinder starts exactly at `start` (`start <= self.start`).
    pub fn anchor_at(&self, alphabet: &Alphabet, start: i64) -> Vec<Cylinder> {
        assert!(start <= self.start, "cannot anchor later than the start");
        let mut out = vec![self.clone()];
        for _ in start..self.start {
            out = out
                .iter()
                .flat_map(|c| c.refine(alphabet, Direction::Past))
                .collect();
        }
        out
    }

    /// `S^{-k}` applied to the cylinder: all indices move `k` to the right.
    pub fn shifted(&self, k: i64) -> Cylinder {
        Cylinder {
            start: self.start + k,
            word: self.word.clone(),
        }
    }

    /// Membership of a window point `point` occupying indices `lo..lo+len`.
    pub fn contains_point(&self, lo: i64, point: &[Symbol]) -> bool {
        (self.start..=self.end()).all(|i| {
            let j = i - lo;
            j >= 0 && (j as usize) < point.len() && point[j as usize] == self.word[(i - self.start) as usize]
        })
    }
}

struct CylinderDisplay<'a> {
    cylinder: &'a Cylinder,
    alphabet: &'a Alphabet,
}

impl fmt::Display for CylinderDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "m={};w={}",
            self.cylinder.start,
            self.alphabet.format_word(&self.cylinder.word)
        )
    }
}

/// Finite union of pairwise-disjoint cylinders, sorted by start then word.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct CylinderSet {
    parts: Vec<Cylinder>,
}

impl CylinderSet {
    pub fn empty() -> Self {
        CylinderSet { parts: Vec::new() }
    }

    pub fn new(alphabet: &Alphabet, mut parts: Vec<Cylinder>) -> Result<Self> {
        for p in &parts {
            p.check(alphabet)?;
        }
        parts.sort();
        parts.dedup();
        for (i, a) in parts.iter().enumerate() {
            for b in &parts[i + 1..] {
                if a.intersects(b) {
                    return Err(Error::Overlap(
                        a.display(alphabet).to_string(),
                        b.display(alphabet).to_string(),
                    ));
                }
            }
        }
        Ok(CylinderSet { parts })
    }

    /// Parts already known to be disjoint (internal constructions).
    pub(crate) fn from_disjoint(mut parts: Vec<Cylinder>) -> Self {
        parts.sort();
        parts.dedup();
        debug_assert!(parts
            .iter()
            .enumerate()
            .all(|(i, a)| parts[i + 1..].iter().all(|b| !a.intersects(b))));
        CylinderSet { parts }
    }

    pub fn single(c: Cylinder) -> Self {
        CylinderSet { parts: vec![c] }
    }

    /// The whole shift space, written as the time-`start` partition.
    pub fn full(alphabet: &Alphabet, start: i64) -> Self {
        CylinderSet {
            parts: alphabet
                .symbols()
                .map(|e| Cylinder {
                    start,
                    word: vec![e],
                })
                .collect(),
        }
    }

    pub fn parts(&self) -> &[Cylinder] {
        &self.parts
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn min_start(&self) -> Option<i64> {
        self.parts.iter().map(Cylinder::start).min()
    }

    pub fn max_end(&self) -> Option<i64> {
        self.parts.iter().map(Cylinder::end).max()
    }

    pub fn parse(alphabet: &Alphabet, text: &str) -> Result<Self> {
        let text = text.trim();
        if text.is_empty() {
            return Ok(CylinderSet::empty());
        }
        let parts = text
            .split('|')
            .map(|p| Cylinder::parse(alphabet, p.trim()))
            .collect::<Result<Vec<_>>>()?;
        CylinderSet::new(alphabet, parts)
    }

    pub fn format(&self, alphabet: &Alphabet) -> String {
        self.parts
            .iter()
            .map(|c| c.display(alphabet).to_string())
            .collect::<Vec<_>>()
            .join("|")
    }

    /// `S^{-1}` of the set.
    pub fn shift_preimage(&self) -> CylinderSet {
        self.shifted(1)
    }

    pub fn shifted(&self, k: i64) -> CylinderSet {
        CylinderSet {
            parts: self.parts.iter().map(|c| c.shifted(k)).collect(),
        }
    }

    pub fn intersects_cylinder(&self, c: &Cylinder) -> bool {
        self.parts.iter().any(|p| p.intersects(c))
    }

    pub fn contains_point(&self, lo: i64, point: &[Symbol]) -> bool {
        self.parts.iter().any(|p| p.contains_point(lo, point))
    }

    /// Every part re-anchored to start exactly at `start`.
    pub fn anchored_at(&self, alphabet: &Alphabet, start: i64) -> CylinderSet {
        CylinderSet::from_disjoint(
            self.parts
                .iter()
                .flat_map(|c| c.anchor_at(alphabet, start.min(c.start)))
                .collect(),
        )
    }

    /// `self \ other`, computed by refining parts until each child is either
    /// disjoint from `other` or inside one of its parts.
    pub fn subtract(&self, alphabet: &Alphabet, other: &CylinderSet) -> CylinderSet {
        let mut out = Vec::new();
        for c in &self.parts {
            subtract_cylinder(alphabet, c.clone(), &other.parts, &mut out);
        }
        CylinderSet::from_disjoint(out)
    }

    /// Union with a set that is not necessarily disjoint from `self`.
    pub fn union(&self, alphabet: &Alphabet, other: &CylinderSet) -> CylinderSet {
        let extra = other.subtract(alphabet, self);
        let mut parts = self.parts.clone();
        parts.extend(extra.parts);
        CylinderSet::from_disjoint(parts)
    }

    /// Every window point in `lo..=hi` inside the set (all parts must lie in the window).
    pub fn window_points(&self, alphabet: &Alphabet, lo: i64, hi: i64) -> Vec<Vec<Symbol>> {
        window_points(alphabet, lo, hi)
            .filter(|p| self.contains_point(lo, p))
            .collect()
    }
}

fn subtract_cylinder(alphabet: &Alphabet, c: Cylinder, others: &[Cylinder], out: &mut Vec<Cylinder>) {
    let mut split_toward = None;
    for o in others {
        match c.relation_to(o) {
            Relation::Disjoint => {}
            Relation::Equal | Relation::BContainsA => return,
            Relation::AContainsB | Relation::Neither => {
                // `o` constrains an index outside c's window; refine toward it
                split_toward = Some(if o.start < c.start {
                    Direction::Past
                } else {
                    Direction::Future
                });
                break;
            }
        }
    }
    match split_toward {
        None => out.push(c),
        Some(dir) => {
            for child in c.refine(alphabet, dir) {
                subtract_cylinder(alphabet, child, others, out);
            }
        }
    }
}

/// All words over the window `lo..=hi`, in lexicographic order.
pub fn window_points(alphabet: &Alphabet, lo: i64, hi: i64) -> impl Iterator<Item = Vec<Symbol>> {
    let width = (hi - lo + 1).max(0) as usize;
    let base = alphabet.len() as u64;
    let total = base.checked_pow(width as u32).expect("window too wide");
    (0..total).map(move |mut idx| {
        let mut point = vec![Symbol(0); width];
        for slot in point.iter_mut().rev() {
            *slot = Symbol((idx % base) as u32);
            idx /= base;
        }
        point
    })
}

/// `B_m := C_m \ (C_{m+1} ∪ ... ∪ C_0)`, with each input first past-refined
/// to start exactly at its depth. Depths are the non-positive indices given.
pub fn disjointify(
    alphabet: &Alphabet,
    covers: &[(i64, CylinderSet)],
) -> Result<Vec<(i64, CylinderSet)>> {
    for (m, set) in covers {
        if let Some(s) = set.min_start() {
            if s < *m {
                return Err(Error::InvalidQuery(format!(
                    "cover at depth {m} has a part starting at {s}"
                )));
            }
        }
    }
    let mut order: Vec<usize> = (0..covers.len()).collect();
    // later depths (closer to 0) are subtracted from earlier ones
    order.sort_by_key(|&i| std::cmp::Reverse(covers[i].0));
    let mut taken = CylinderSet::empty();
    let mut out = vec![(0, CylinderSet::empty()); covers.len()];
    for i in order {
        let (m, set) = &covers[i];
        let anchored = set.anchored_at(alphabet, *m);
        let b = anchored.subtract(alphabet, &taken);
        let b = b.anchored_at(alphabet, *m);
        taken = taken.union(alphabet, &anchored);
        out[i] = (*m, b);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ab() -> Alphabet {
        Alphabet::new(["x", "y"]).unwrap()
    }

    fn cyl(a: &Alphabet, s: &str) -> Cylinder {
        Cylinder::parse(a, s).unwrap()
    }

    #[test]
    fn relation_examples() {
        let a = ab();
        let r = |p: &str, q: &str| Cylinder::relation(&a, &cyl(&a, p), &cyl(&a, q)).unwrap();
        assert_eq!(r("m=0;w=x", "m=0;w=x"), Relation::Equal);
        assert_eq!(r("m=0;w=x", "m=0;w=y"), Relation::Disjoint);
        assert_eq!(r("m=-1;w=x,y", "m=0;w=y"), Relation::BContainsA);
        assert_eq!(r("m=0;w=y", "m=-1;w=x,y"), Relation::AContainsB);
        assert_eq!(r("m=0;w=x", "m=1;w=y"), Relation::Neither);
    }

    #[test]
    fn relation_rejects_foreign_symbols() {
        let a = ab();
        let foreign = Cylinder::new(0, vec![Symbol(5)]).unwrap();
        assert!(Cylinder::relation(&a, &foreign, &cyl(&a, "m=0;w=x")).is_err());
    }

    #[test]
    fn refine_examples() {
        let a = ab();
        let c = cyl(&a, "m=0;w=x");
        let past: Vec<String> = c
            .refine(&a, Direction::Past)
            .iter()
            .map(|c| c.display(&a).to_string())
            .collect();
        assert_eq!(past, ["m=-1;w=x,x", "m=-1;w=y,x"]);
        let future: Vec<String> = c
            .refine(&a, Direction::Future)
            .iter()
            .map(|c| c.display(&a).to_string())
            .collect();
        assert_eq!(future, ["m=0;w=x,x", "m=0;w=x,y"]);
    }

    #[test]
    fn shift_preimage_moves_indices() {
        let a = ab();
        let s = CylinderSet::parse(&a, "m=0;w=x,y").unwrap();
        assert_eq!(s.shift_preimage().format(&a), "m=1;w=x,y");
        let t = CylinderSet::parse(&a, "m=-3;w=x").unwrap();
        assert_eq!(t.shift_preimage().shift_preimage().format(&a), "m=-1;w=x");
    }

    #[test]
    fn parse_and_format_round_trip() {
        let a = Alphabet::new(["a", "b", "c"]).unwrap();
        let s = CylinderSet::parse(&a, "m=-2;w=a,b,c|m=0;w=a").unwrap();
        assert_eq!(CylinderSet::parse(&a, &s.format(&a)).unwrap(), s);
        assert!(CylinderSet::parse(&a, "m=0;w=a|m=0;w=a,b").is_err());
        assert!(Cylinder::parse(&a, "m=x;w=a").is_err());
        assert!(Cylinder::parse(&a, "m=0;w=d").is_err());
        assert!(Cylinder::parse(&a, "w=a").is_err());
    }

    #[test]
    fn alphabet_validation() {
        assert!(Alphabet::new(Vec::<String>::new()).is_err());
        assert!(Alphabet::new(["a", "a"]).is_err());
        assert!(Alphabet::new(["a,b"]).is_err());
    }

    #[test]
    fn disjointify_examples() {
        let a = ab();
        let full0 = CylinderSet::full(&a, 0);
        let full1 = CylinderSet::full(&a, -1).anchored_at(&a, -1);
        let out = disjointify(&a, &[(0, full0.clone()), (-1, full1)]).unwrap();
        assert_eq!(out[0].1, full0);
        assert!(out[1].1.is_empty());

        let c0 = CylinderSet::parse(&a, "m=0;w=x").unwrap();
        let c1 = CylinderSet::parse(&a, "m=-1;w=y,x").unwrap();
        let out = disjointify(&a, &[(0, c0.clone()), (-1, c1)]).unwrap();
        assert_eq!(out[0].1, c0);
        assert!(out[1].1.is_empty());
    }

    #[test]
    fn subtract_splits_into_the_future() {
        let a = ab();
        let s = CylinderSet::parse(&a, "m=0;w=x").unwrap();
        let t = CylinderSet::parse(&a, "m=1;w=y").unwrap();
        assert_eq!(s.subtract(&a, &t).format(&a), "m=0;w=x,x");
    }
}
