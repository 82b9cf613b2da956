//! Named example systems and a builder for plain finite chains.

use num_rational::BigRational;
use num_traits::Zero;

use crate::config::{preset, SystemSpec};
use crate::error::{Error, Result};
use crate::path::PeriodicDirac;
use crate::shift::Alphabet;
use crate::system::{Edge, EdgeMap, EdgeProb, FiniteSpace, MarkovSystem, Point, StateSpace};

fn markov(name: &str) -> MarkovSystem<BigRational> {
    preset(name)
        .and_then(SystemSpec::into_markov)
        .expect("embedded preset is valid")
}

/// Two-state chain with rows (0.7, 0.3) and (0.4, 0.6).
pub fn g1() -> MarkovSystem<BigRational> {
    markov("g1")
}

/// Point mass on the alternating sequence with 0 at even indices.
pub fn g2() -> PeriodicDirac {
    match preset("g2").expect("embedded preset is valid") {
        SystemSpec::Dirac(d) => d,
        SystemSpec::Markov(_) => unreachable!("g2 is a measure-mode preset"),
    }
}

/// Place-dependent IFS on `[0,1]` with `w_0 = x/2`, `w_1 = x/2 + 1/2`, `p_0 = (1+x)/3`.
pub fn g3() -> MarkovSystem<BigRational> {
    markov("g3")
}

pub(crate) fn edge_name(i: usize, j: usize, n: usize) -> String {
    if n <= 9 {
        format!("e{}{}", i + 1, j + 1)
    } else {
        format!("e{}_{}", i + 1, j + 1)
    }
}

/// A finite chain on states `1..=n` (one point per state) with one edge per
/// positive entry of the row-stochastic matrix `rows`.
pub fn chain(rows: &[Vec<BigRational>]) -> Result<MarkovSystem<BigRational>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidSystem("transition matrix must be square and non-empty".into()));
    }
    let mut names = Vec::new();
    let mut edges = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        for (j, p) in row.iter().enumerate() {
            if p.is_zero() {
                continue;
            }
            names.push(edge_name(i, j, n));
            let mut map = vec![None; n];
            map[i] = Some(j);
            let mut prob = vec![BigRational::zero(); n];
            prob[i] = p.clone();
            edges.push(Edge {
                source: i,
                target: j,
                map: EdgeMap::Table(map),
                prob: EdgeProb::Table(prob),
            });
        }
    }
    let one = BigRational::from_integer(1.into());
    let space = StateSpace::Finite(FiniteSpace {
        labels: (1..=n).map(|i| i.to_string()).collect(),
        metric: (0..n)
            .map(|i| (0..n).map(|j| if i == j { BigRational::zero() } else { one.clone() }).collect())
            .collect(),
        cell_of: (0..n).collect(),
    });
    MarkovSystem::new(
        Alphabet::new(names)?,
        space,
        edges,
        (0..n).map(Point::Site).collect(),
        None,
    )
}
