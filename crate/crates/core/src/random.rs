//! Seeded generators for random test systems and initial distributions.

use num_rational::BigRational;
use num_traits::Zero;
use rand::Rng;

use crate::error::Result;
use crate::presets;
use crate::scalar::ratio;
use crate::shift::Alphabet;
use crate::system::{Edge, EdgeMap, EdgeProb, FiniteSpace, MarkovSystem, Point, PointMeasure, StateSpace};

/// Small positive integer weights, at least one non-zero, normalized.
fn weights(rng: &mut impl Rng, n: usize, zero_chance: f64) -> Vec<BigRational> {
    loop {
        let raw: Vec<i64> = (0..n)
            .map(|_| if rng.gen_bool(zero_chance) { 0 } else { rng.gen_range(1..=4) })
            .collect();
        let total: i64 = raw.iter().sum();
        if total > 0 {
            return raw.into_iter().map(|w| ratio(w, total)).collect();
        }
    }
}

/// A finite chain on `2..=4` states with rational entries; about a third
/// of the off-diagonal structure is zero.
pub fn random_chain(rng: &mut impl Rng) -> Result<MarkovSystem<BigRational>> {
    let n = rng.gen_range(2..=4);
    let rows: Vec<Vec<BigRational>> = (0..n).map(|_| weights(rng, n, 0.35)).collect();
    presets::chain(&rows)
}

/// A finite-points system with at most three edges, one or two cells of
/// one to three sites each, and site-dependent maps and probabilities.
pub fn random_points_system(rng: &mut impl Rng) -> Result<MarkovSystem<BigRational>> {
    let cells = rng.gen_range(1..=2usize);
    let sizes: Vec<usize> = (0..cells).map(|_| rng.gen_range(1..=3)).collect();
    let mut cell_of = Vec::new();
    for (c, &k) in sizes.iter().enumerate() {
        cell_of.extend(std::iter::repeat_n(c, k));
    }
    let n = cell_of.len();
    let sites_in = |c: usize| (0..n).filter(|&s| cell_of[s] == c).collect::<Vec<_>>();
    let n_edges = rng.gen_range(2..=3usize);
    let mut sources: Vec<usize> = (0..cells).collect();
    while sources.len() < n_edges {
        sources.push(rng.gen_range(0..cells));
    }
    sources.sort_unstable();
    let mut edges: Vec<Edge<BigRational>> = sources
        .iter()
        .map(|&source| {
            let target = rng.gen_range(0..cells);
            let targets = sites_in(target);
            let mut map = vec![None; n];
            for s in sites_in(source) {
                map[s] = Some(targets[rng.gen_range(0..targets.len())]);
            }
            Edge {
                source,
                target,
                map: EdgeMap::Table(map),
                prob: EdgeProb::Table(vec![BigRational::zero(); n]),
            }
        })
        .collect();
    for c in 0..cells {
        let out: Vec<usize> = (0..edges.len()).filter(|&e| edges[e].source == c).collect();
        for s in sites_in(c) {
            for (e, w) in out.iter().zip(weights(rng, out.len(), 0.0)) {
                if let EdgeProb::Table(t) = &mut edges[*e].prob {
                    t[s] = w;
                }
            }
        }
    }
    let names: Vec<String> = (0..edges.len()).map(|e| format!("s{e}")).collect();
    let space = StateSpace::Finite(FiniteSpace {
        labels: (1..=n).map(|i| format!("x{i}")).collect(),
        metric: (0..n)
            .map(|i| (0..n).map(|j| ratio((i as i64 - j as i64).abs(), 1)).collect())
            .collect(),
        cell_of: cell_of.clone(),
    });
    let base = (0..cells).map(|c| Point::Site(sites_in(c)[0])).collect();
    MarkovSystem::new(Alphabet::new(names)?, space, edges, base, None)
}

/// A random probability measure on one to all sites of a finite system.
pub fn random_measure(rng: &mut impl Rng, sys: &MarkovSystem<BigRational>) -> Result<PointMeasure<BigRational>> {
    let n = sys.n_sites().unwrap_or(1);
    let w = weights(rng, n, 0.4);
    PointMeasure::new(w.into_iter().enumerate().map(|(s, w)| (Point::Site(s), w)).collect())
}
