use ddm_core::oracle::{phi_bruteforce_with, OracleMode};
use ddm_core::outer::{phi_value, CoverParams};
use ddm_core::path::PhiSource;
use ddm_core::random::{random_chain, random_measure, random_points_system};
use ddm_core::shift::{disjointify, window_points, Direction};
use ddm_core::{Alphabet, Cylinder, CylinderSet, Relation, Symbol};
use num_rational::BigRational;
use num_traits::Zero;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const LO: i64 = -3;
const HI: i64 = 3;

fn alphabet(n: usize) -> Alphabet {
    Alphabet::numbered(n).unwrap()
}

fn cylinder(n: usize) -> impl Strategy<Value = Cylinder> {
    (-2i64..=0, prop::collection::vec(0..n as u32, 1..=3))
        .prop_map(|(start, w)| Cylinder::new(start, w.into_iter().map(Symbol).collect()).unwrap())
}

fn union_of(a: &Alphabet, parts: &[Cylinder]) -> CylinderSet {
    parts
        .iter()
        .fold(CylinderSet::empty(), |acc, c| acc.union(a, &CylinderSet::single(c.clone())))
}

fn members(a: &Alphabet, s: &CylinderSet) -> Vec<bool> {
    window_points(a, LO, HI).map(|p| s.contains_point(LO, &p)).collect()
}

fn source(seed: u64, points: bool) -> PhiSource<BigRational> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sys = if points {
        random_points_system(&mut rng).unwrap()
    } else {
        random_chain(&mut rng).unwrap()
    };
    let nu = random_measure(&mut rng, &sys).unwrap();
    PhiSource::markov(sys, nu)
}

fn rational(depth: usize) -> CoverParams {
    CoverParams {
        past_depth: depth,
        ..CoverParams::default()
    }
}

/// A query of one to three cylinders inside `[-1, 0]` over the source alphabet.
fn query(src: &PhiSource<BigRational>, picks: &[(bool, u32, u32)]) -> CylinderSet {
    let a = src.alphabet();
    let n = a.len() as u32;
    let parts: Vec<Cylinder> = picks
        .iter()
        .map(|&(long, x, y)| {
            if long {
                Cylinder::new(-1, vec![Symbol(x % n), Symbol(y % n)]).unwrap()
            } else {
                Cylinder::new(0, vec![Symbol(x % n)]).unwrap()
            }
        })
        .collect();
    union_of(a, &parts)
}

fn picks() -> impl Strategy<Value = Vec<(bool, u32, u32)>> {
    prop::collection::vec((any::<bool>(), 0u32..4, 0u32..4), 1..=3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relation_is_symmetric_and_matches_points(n in 2usize..=3, a in cylinder(3), b in cylinder(3)) {
        let al = alphabet(n);
        prop_assume!(a.check(&al).is_ok() && b.check(&al).is_ok());
        let ab = Cylinder::relation(&al, &a, &b).unwrap();
        let ba = Cylinder::relation(&al, &b, &a).unwrap();
        prop_assert_eq!(ab, ba.swapped());

        let pa = members(&al, &CylinderSet::single(a.clone()));
        let pb = members(&al, &CylinderSet::single(b.clone()));
        let both = pa.iter().zip(&pb).any(|(x, y)| *x && *y);
        let a_in_b = pa.iter().zip(&pb).all(|(x, y)| !*x || *y);
        let b_in_a = pa.iter().zip(&pb).all(|(x, y)| !*y || *x);
        let expected = match (both, a_in_b, b_in_a) {
            (false, _, _) => Relation::Disjoint,
            (true, true, true) => Relation::Equal,
            (true, false, true) => Relation::AContainsB,
            (true, true, false) => Relation::BContainsA,
            (true, false, false) => Relation::Neither,
        };
        prop_assert_eq!(ab, expected);
    }

    #[test]
    fn refine_is_a_partition(n in 2usize..=3, c in cylinder(3), past in any::<bool>()) {
        let al = alphabet(n);
        prop_assume!(c.check(&al).is_ok());
        let dir = if past { Direction::Past } else { Direction::Future };
        let children = c.refine(&al, dir);
        prop_assert_eq!(children.len(), n);
        for p in window_points(&al, LO, HI) {
            let hits = children.iter().filter(|k| k.contains_point(LO, &p)).count();
            prop_assert_eq!(hits, usize::from(c.contains_point(LO, &p)));
        }
    }

    #[test]
    fn shift_preimage_moves_membership(n in 2usize..=3, parts in prop::collection::vec(cylinder(3), 1..=3)) {
        let al = alphabet(n);
        prop_assume!(parts.iter().all(|c| c.check(&al).is_ok()));
        let q = union_of(&al, &parts);
        let pre = q.shift_preimage();
        // x lies in S^{-1}Q exactly when Sx lies in Q; reading the same word one
        // index later is the same as shifting it one index earlier
        for p in window_points(&al, LO, HI) {
            prop_assert_eq!(pre.contains_point(LO + 1, &p), q.contains_point(LO, &p));
        }
        prop_assert_eq!(pre.shifted(-1), q);
    }

    #[test]
    fn disjointify_partitions_the_union(
        n in 2usize..=3,
        sets in prop::collection::vec((0i64..=2, prop::collection::vec(cylinder(3), 1..=2)), 1..=3),
    ) {
        let al = alphabet(n);
        prop_assume!(sets.iter().flat_map(|(_, c)| c).all(|c| c.check(&al).is_ok()));
        let covers: Vec<(i64, CylinderSet)> = sets
            .iter()
            .map(|(shift, parts)| {
                let set = union_of(&al, parts);
                let m = set.min_start().unwrap() - shift;
                (m.clamp(LO, 0), set)
            })
            .collect();
        let out = disjointify(&al, &covers).unwrap();
        prop_assert_eq!(out.len(), covers.len());
        for ((m, b), (m0, _)) in out.iter().zip(&covers) {
            prop_assert_eq!(m, m0);
            prop_assert!(b.min_start().is_none_or(|s| s == *m));
        }
        for p in window_points(&al, LO, HI) {
            let inside = covers.iter().any(|(_, c)| c.contains_point(LO, &p));
            let hits = out.iter().filter(|(_, b)| b.contains_point(LO, &p)).count();
            prop_assert_eq!(hits, usize::from(inside));
            for ((_, b), (_, c)) in out.iter().zip(&covers) {
                prop_assert!(!b.contains_point(LO, &p) || c.contains_point(LO, &p));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn path_measures_are_additive_under_refinement(seed in any::<u64>(), points in any::<bool>(), m in -2i64..=0, x in 0u32..4) {
        let src = source(seed, points);
        let al = src.alphabet().clone();
        let c = Cylinder::new(0, vec![Symbol(x % al.len() as u32)]).unwrap();
        let whole = src.cylinder_mass(m, &c).unwrap();
        for dir in [Direction::Future, Direction::Past] {
            let children = c.refine(&al, dir);
            prop_assume!(children.iter().all(|k| k.start() >= m));
            let parts: BigRational = children.iter().map(|k| src.cylinder_mass(m, k).unwrap()).sum();
            prop_assert_eq!(&parts, &whole);
        }
    }

    #[test]
    fn phi_is_bounded_monotone_and_subadditive(seed in any::<u64>(), points in any::<bool>(), a in picks(), b in picks()) {
        let src = source(seed, points);
        let qa = query(&src, &a);
        let qb = query(&src, &b);
        let both = qa.union(src.alphabet(), &qb);
        let params = rational(3);
        let fa = phi_value(&src, &qa, 3, &params).unwrap();
        let fb = phi_value(&src, &qb, 3, &params).unwrap();
        let fab = phi_value(&src, &both, 3, &params).unwrap();
        prop_assert!(fa >= BigRational::zero());
        prop_assert!(fa <= fab && fb <= fab);
        prop_assert!(fab <= fa.clone() + fb);
        // charging the whole query at its start is always available
        let direct = src.mass(-1, &qa).unwrap();
        prop_assert!(fa <= direct);
    }

    #[test]
    fn phi_does_not_increase_with_past_depth(seed in any::<u64>(), points in any::<bool>(), a in picks()) {
        let src = source(seed, points);
        let q = query(&src, &a);
        let values: Vec<BigRational> = (1..=5).map(|d| phi_value(&src, &q, d, &rational(d)).unwrap()).collect();
        prop_assert!(values.windows(2).all(|w| w[1] <= w[0]), "{values:?}");
    }

    #[test]
    fn right_anchored_search_matches_exhaustive(seed in any::<u64>(), a in picks(), lo in -2i64..=-1, extra in 0i64..=1) {
        let src = source(seed, false);
        let q = query(&src, &a);
        let hi = extra;
        let width = (hi - lo + 1) as u32;
        prop_assume!((src.alphabet().len() as u64).pow(width) <= 32);
        let full = phi_bruteforce_with(&src, &q, lo, hi, OracleMode::Exhaustive).unwrap().value;
        let anchored = phi_bruteforce_with(&src, &q, lo, hi, OracleMode::RightAnchored).unwrap().value;
        prop_assert_eq!(full, anchored);
    }

    #[test]
    fn phi_is_superadditive_in_the_initial_distribution(seed in any::<u64>(), points in any::<bool>(), a in picks(), w in 1i64..=9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sys = if points {
            random_points_system(&mut rng).unwrap()
        } else {
            random_chain(&mut rng).unwrap()
        };
        let nu1 = random_measure(&mut rng, &sys).unwrap();
        let nu2 = random_measure(&mut rng, &sys).unwrap();
        let alpha = BigRational::new(w.into(), 10.into());
        let beta = BigRational::new((10 - w).into(), 10.into());
        let mix = nu1.scaled(&alpha).plus(&nu2.scaled(&beta));
        let at = |nu: &ddm_core::PointMeasure<BigRational>| {
            let src = PhiSource::markov(sys.clone(), nu.clone());
            let q = query(&src, &a);
            phi_value(&src, &q, 3, &rational(3)).unwrap()
        };
        let lhs = at(&mix);
        let rhs = alpha * at(&nu1) + beta * at(&nu2);
        prop_assert!(lhs >= rhs, "{lhs} < {rhs}");
    }
}
