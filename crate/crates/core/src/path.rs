//! Path measures `P^m_x`, the cylinder measures `phi_m(nu)`, rectangle
//! masses of `tilde phi_m(nu)` and the consistency identities between them.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::shift::{window_points, Alphabet, Cylinder, CylinderSet, Symbol};
use crate::system::{apply_u_star, iterate_u_star, MarkovSystem, Point, PointMeasure, UStarOptions};

/// `phi_0 = delta_{sigma'}` for the eventually periodic sequence
/// `sigma'_i = pattern[(i + phase) mod p]`, given directly instead of
/// through a Markov system.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeriodicDirac {
    alphabet: Alphabet,
    pattern: Vec<Symbol>,
    phase: i64,
}

impl PeriodicDirac {
    pub fn new(alphabet: Alphabet, pattern: Vec<Symbol>, phase: i64) -> Result<Self> {
        if pattern.is_empty() {
            return Err(Error::Config("periodic pattern is empty".into()));
        }
        pattern.iter().try_for_each(|&s| alphabet.check(s))?;
        Ok(PeriodicDirac {
            alphabet,
            pattern,
            phase,
        })
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn pattern(&self) -> &[Symbol] {
        &self.pattern
    }

    pub fn phase(&self) -> i64 {
        self.phase
    }

    pub fn period(&self) -> usize {
        self.pattern.len()
    }

    pub fn symbol_at(&self, i: i64) -> Symbol {
        self.pattern[(i + self.phase).rem_euclid(self.pattern.len() as i64) as usize]
    }

    /// `phi_0(c)`: 1 if `sigma'` lies in `c`, else 0.
    pub fn contains(&self, c: &Cylinder) -> bool {
        (c.start()..=c.end()).all(|i| c.at(i) == Some(self.symbol_at(i)))
    }

    /// The measure `phi_{-k} = phi_0 o S^{-k}` as a new initial measure.
    pub fn shifted(&self, k: i64) -> Self {
        PeriodicDirac {
            alphabet: self.alphabet.clone(),
            pattern: self.pattern.clone(),
            phase: self.phase + k,
        }
    }
}

/// Where `phi_0` comes from.
#[derive(Debug, Clone)]
pub enum PhiSource<T> {
    Markov {
        sys: MarkovSystem<T>,
        nu: PointMeasure<T>,
    },
    Dirac(PeriodicDirac),
}

impl<T: Scalar> PhiSource<T> {
    pub fn markov(sys: MarkovSystem<T>, nu: PointMeasure<T>) -> Self {
        PhiSource::Markov { sys, nu }
    }

    pub fn alphabet(&self) -> &Alphabet {
        match self {
            PhiSource::Markov { sys, .. } => sys.alphabet(),
            PhiSource::Dirac(d) => d.alphabet(),
        }
    }

    /// Source for `Phi_{(-k)}`: `U*^k nu`, or the Dirac phase moved by `k`.
    pub fn shifted(&self, k: usize, opts: &UStarOptions) -> Result<Self> {
        Ok(match self {
            PhiSource::Markov { sys, nu } => PhiSource::Markov {
                sys: sys.clone(),
                nu: iterate_u_star(sys, nu, k, opts)?,
            },
            PhiSource::Dirac(d) => PhiSource::Dirac(d.shifted(k as i64)),
        })
    }

    /// `phi_m(s)`, requiring every part of `s` to start at or after `m`.
    pub fn mass(&self, m: i64, s: &CylinderSet) -> Result<T> {
        match self {
            PhiSource::Markov { sys, nu } => phi_m_mass(sys, nu, m, s),
            PhiSource::Dirac(d) => {
                check_depth(m, s)?;
                let hits = s.parts().iter().filter(|c| d.contains(&c.shifted(-m))).count();
                Ok(T::from_usize(hits))
            }
        }
    }

    pub fn cylinder_mass(&self, m: i64, c: &Cylinder) -> Result<T> {
        self.mass(m, &CylinderSet::single(c.clone()))
    }
}

fn check_depth(m: i64, s: &CylinderSet) -> Result<()> {
    match s.min_start() {
        Some(start) if start < m => Err(Error::InvalidQuery(format!(
            "part starting at {start} is not in A_{m}; it must start at or after {m}"
        ))),
        _ => Ok(()),
    }
}

/// `P^m_x(c)`. Cylinders starting after `m` are summed over the gap by
/// propagating `delta_x` through `U*`.
pub fn path_prob<T: Scalar>(sys: &MarkovSystem<T>, m: i64, x: &Point<T>, c: &Cylinder) -> Result<T> {
    if c.start() < m {
        return Err(Error::InvalidQuery(format!("cylinder starts before depth {m}")));
    }
    if sys.cell_of(x).is_none() {
        return Err(Error::OutsideCells(sys.point_label(x)));
    }
    let gap = (c.start() - m) as usize;
    let mu = iterate_u_star(sys, &PointMeasure::dirac(x.clone()), gap, &UStarOptions::default())?;
    integrate_word(sys, &mu, c.word())
}

/// `P^m_x(c)` by explicit summation over every word filling the gap.
pub fn path_prob_enumerated<T: Scalar>(
    sys: &MarkovSystem<T>,
    m: i64,
    x: &Point<T>,
    c: &Cylinder,
) -> Result<T> {
    if c.start() < m {
        return Err(Error::InvalidQuery(format!("cylinder starts before depth {m}")));
    }
    let gap = c.start() - m;
    if gap == 0 {
        return Ok(sys.path_product(x, c.word())?.0);
    }
    let mut total = T::zero();
    for mut prefix in window_points(sys.alphabet(), 0, gap - 1) {
        prefix.extend_from_slice(c.word());
        total = total + sys.path_product(x, &prefix)?.0;
    }
    Ok(total)
}

/// `int P_y(_0[word]) dmu(y)`.
fn integrate_word<T: Scalar>(sys: &MarkovSystem<T>, mu: &PointMeasure<T>, word: &[Symbol]) -> Result<T> {
    let mut total = T::zero();
    for (y, w) in mu.atoms() {
        let (p, _) = sys.path_product(y, word)?;
        total = total + w.clone() * p;
    }
    Ok(total)
}

/// `phi_m(nu)(s) = int P^m_x(s) dnu(x)`; parts sharing a start reuse one
/// propagated measure.
pub fn phi_m_mass<T: Scalar>(
    sys: &MarkovSystem<T>,
    nu: &PointMeasure<T>,
    m: i64,
    s: &CylinderSet,
) -> Result<T> {
    check_depth(m, s)?;
    let mut total = T::zero();
    let mut cached: Option<(i64, PointMeasure<T>)> = None;
    // parts are sorted by start, so one cache slot suffices
    for c in s.parts() {
        let gap = c.start() - m;
        let mu = match &cached {
            Some((g, mu)) if *g == gap => mu,
            _ => {
                let mu = iterate_u_star(sys, nu, gap as usize, &UStarOptions::default())?;
                &cached.insert((gap, mu)).1
            }
        };
        total = total + integrate_word(sys, mu, c.word())?;
    }
    Ok(total)
}

/// `phi_m(nu)(s)` through [`path_prob_enumerated`] for every atom.
pub fn phi_m_mass_enumerated<T: Scalar>(
    sys: &MarkovSystem<T>,
    nu: &PointMeasure<T>,
    m: i64,
    s: &CylinderSet,
) -> Result<T> {
    check_depth(m, s)?;
    let mut total = T::zero();
    for c in s.parts() {
        for (x, w) in nu.atoms() {
            total = total + w.clone() * path_prob_enumerated(sys, m, x, c)?;
        }
    }
    Ok(total)
}

/// Maximum absolute residuals of the shift identities at depth `m`.
#[derive(Debug, Clone, Serialize)]
pub struct ShmResiduals {
    /// `phi_{m-1}(nu)(Q)` vs `phi_m(U*nu)(Q)` for `Q` in `A_m`.
    pub u_star: f64,
    /// `phi_{m-1}(nu)(Q)` vs `phi_m(nu)(S^{-1}Q)` for `Q` in `A_{m-1}`.
    pub shift: f64,
    /// `phi_{m-1}(nu)(Q)` vs `phi_m(nu)(Q)` for `Q` in `A_m`; zero when `nu`
    /// is stationary.
    pub consistency: f64,
    /// Propagated vs enumerated evaluation of the same masses.
    pub routes: f64,
    pub checked: usize,
}

fn absdiff<T: Scalar>(a: &T, b: &T) -> f64 {
    (a.clone() - b.clone()).abs().to_f64()
}

/// Evaluates both sides of the shift identities on every test cylinder that
/// lies in the relevant algebra. Left-hand sides use gap enumeration, the
/// right-hand sides use `U*` propagation.
pub fn shm_residuals<T: Scalar>(
    sys: &MarkovSystem<T>,
    nu: &PointMeasure<T>,
    m: i64,
    cylinders: &[Cylinder],
) -> Result<ShmResiduals> {
    let u_nu = apply_u_star(sys, nu, &UStarOptions::default())?;
    let mut out = ShmResiduals {
        u_star: 0.0,
        shift: 0.0,
        consistency: 0.0,
        routes: 0.0,
        checked: 0,
    };
    for c in cylinders {
        if c.start() < m - 1 {
            continue;
        }
        let q = CylinderSet::single(c.clone());
        let lhs = phi_m_mass_enumerated(sys, nu, m - 1, &q)?;
        let lhs_prop = phi_m_mass(sys, nu, m - 1, &q)?;
        out.routes = out.routes.max(absdiff(&lhs, &lhs_prop));
        let shifted = phi_m_mass(sys, nu, m, &q.shift_preimage())?;
        out.shift = out.shift.max(absdiff(&lhs, &shifted));
        if c.start() >= m {
            let via_u = phi_m_mass(sys, &u_nu, m, &q)?;
            out.u_star = out.u_star.max(absdiff(&lhs, &via_u));
            let same_depth = phi_m_mass(sys, nu, m, &q)?;
            out.consistency = out.consistency.max(absdiff(&lhs, &same_depth));
        }
        out.checked += 1;
    }
    Ok(out)
}

/// The `K`-component of a rectangle `A x Q`.
#[derive(Debug, Clone)]
pub enum RectBase<T> {
    Whole,
    /// Union of (zero-based) partition cells.
    Cells(Vec<usize>),
    /// Closed sub-segment `[lo, hi]` of an interval space.
    Segment(T, T),
}

impl<T: Scalar> RectBase<T> {
    fn contains(&self, sys: &MarkovSystem<T>, x: &Point<T>) -> Result<bool> {
        match self {
            RectBase::Whole => Ok(true),
            RectBase::Cells(cells) => Ok(sys.cell_of(x).is_some_and(|c| cells.contains(&c))),
            RectBase::Segment(lo, hi) => {
                let v = x
                    .as_real()
                    .ok_or_else(|| Error::Unsupported("segments need an interval space".into()))?;
                if v == lo || v == hi {
                    return Err(Error::BoundaryAtom(sys.point_label(x)));
                }
                Ok(v > lo && v < hi)
            }
        }
    }
}

/// `tilde phi_m(nu)(A x s) = int_A P^m_x(s) dnu(x)`.
pub fn tilde_phi_rectangle<T: Scalar>(
    sys: &MarkovSystem<T>,
    nu: &PointMeasure<T>,
    m: i64,
    base: &RectBase<T>,
    s: &CylinderSet,
) -> Result<T> {
    tilde_phi_integral(sys, nu, m, base, s, |_| Ok(T::one()))
}

/// `int_{A x s} f(x, sigma) dtilde phi_m(nu)` for integrands that depend on
/// `sigma` only through the orbit endpoint `w_{sigma_end} o ... o w_{sigma_m}(x)`.
pub fn tilde_phi_integral<T: Scalar>(
    sys: &MarkovSystem<T>,
    nu: &PointMeasure<T>,
    m: i64,
    base: &RectBase<T>,
    s: &CylinderSet,
    f: impl Fn(&Point<T>) -> Result<T>,
) -> Result<T> {
    check_depth(m, s)?;
    let mut total = T::zero();
    for (x, w) in nu.atoms() {
        if !base.contains(sys, x)? {
            continue;
        }
        for c in s.parts() {
            let gap = c.start() - m;
            let words: Vec<Vec<Symbol>> = if gap == 0 {
                vec![Vec::new()]
            } else {
                window_points(sys.alphabet(), 0, gap - 1).collect()
            };
            for mut word in words {
                word.extend_from_slice(c.word());
                let (p, end) = sys.path_product(x, &word)?;
                if let Some(end) = end {
                    total = total + w.clone() * p * f(&end)?;
                }
            }
        }
    }
    Ok(total)
}

/// Residuals of `tilde phi_{m-1}(nu)(A x Q) = tilde phi_m(U*nu)(A' x Q)` on
/// whole-space rectangles, and of the averaging identity for
/// `p_{e,m}(x, sigma) = p_e(w_{sigma_0} o ... o w_{sigma_m}(x))`:
/// `int_{K x C} p_{e,m-1} dtilde phi_{m-1}(nu) = int_{K x C} p_{e,m} dtilde phi_m(U*nu)`
/// for every `C = _m[e_m..e_0]`.
#[derive(Debug, Clone, Serialize)]
pub struct RectangleResiduals {
    pub rectangle: f64,
    pub averaging: f64,
    pub checked: usize,
}

pub fn rectangle_residuals<T: Scalar>(
    sys: &MarkovSystem<T>,
    nu: &PointMeasure<T>,
    m: i64,
    cylinders: &[Cylinder],
) -> Result<RectangleResiduals> {
    let u_nu = apply_u_star(sys, nu, &UStarOptions::default())?;
    let mut out = RectangleResiduals {
        rectangle: 0.0,
        averaging: 0.0,
        checked: 0,
    };
    for c in cylinders.iter().filter(|c| c.start() >= m) {
        let q = CylinderSet::single(c.clone());
        let lhs = tilde_phi_rectangle(sys, nu, m - 1, &RectBase::Whole, &q)?;
        let rhs = tilde_phi_rectangle(sys, &u_nu, m, &RectBase::Whole, &q)?;
        out.rectangle = out.rectangle.max(absdiff(&lhs, &rhs));
        if c.start() == m && c.end() == 0 {
            for e in sys.alphabet().symbols() {
                let pe = |y: &Point<T>| sys.prob(e, y);
                let lhs = tilde_phi_integral(sys, nu, m - 1, &RectBase::Whole, &q, pe)?;
                let rhs = tilde_phi_integral(sys, &u_nu, m, &RectBase::Whole, &q, pe)?;
                out.averaging = out.averaging.max(absdiff(&lhs, &rhs));
            }
        }
        out.checked += 1;
    }
    Ok(out)
}

/// All cylinders `_start[w]` with `1 <= |w| <= max_len`.
pub fn cylinder_family(alphabet: &Alphabet, start: i64, max_len: usize) -> Vec<Cylinder> {
    (1..=max_len as i64)
        .flat_map(|len| window_points(alphabet, start, start + len - 1))
        .map(|w| Cylinder::new(start, w).expect("non-empty word"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::scalar::ratio;
    use crate::system::stationary_distribution;
    use num_rational::BigRational;

    fn cyl(a: &Alphabet, s: &str) -> Cylinder {
        Cylinder::parse(a, s).unwrap()
    }

    #[test]
    fn g1_path_product() {
        let g1 = presets::g1();
        let c = cyl(g1.alphabet(), "m=0;w=e11,e12");
        assert_eq!(path_prob(&g1, 0, &Point::Site(0), &c).unwrap(), ratio(21, 100));
        let wrong = cyl(g1.alphabet(), "m=0;w=e21");
        assert_eq!(path_prob(&g1, 0, &Point::Site(0), &wrong).unwrap(), ratio(0, 1));
    }

    #[test]
    fn g3_first_step() {
        let g3 = presets::g3();
        let c = cyl(g3.alphabet(), "m=0;w=0");
        assert_eq!(path_prob(&g3, 0, &Point::Real(ratio(0, 1)), &c).unwrap(), ratio(1, 3));
    }

    #[test]
    fn stationary_masses() {
        let g1 = presets::g1();
        let pi = stationary_distribution(&g1).unwrap().measure;
        let q = CylinderSet::parse(g1.alphabet(), "m=0;w=e11").unwrap();
        assert_eq!(phi_m_mass(&g1, &pi, 0, &q).unwrap(), ratio(2, 5));
        let full = CylinderSet::full(g1.alphabet(), -2);
        assert_eq!(phi_m_mass(&g1, &pi, -3, &full).unwrap(), ratio(1, 1));
    }

    #[test]
    fn g2_cover_masses() {
        let g2 = presets::g2();
        let src: PhiSource<BigRational> = PhiSource::Dirac(g2.clone());
        let a = g2.alphabet();
        let zero = ratio(0, 1);
        assert_eq!(src.mass(0, &CylinderSet::parse(a, "m=0;w=1").unwrap()).unwrap(), zero);
        let q = CylinderSet::parse(a, "m=-1;w=0,0|m=-1;w=1,0").unwrap();
        assert_eq!(src.mass(-1, &q).unwrap(), zero);
        assert_eq!(src.mass(0, &CylinderSet::parse(a, "m=0;w=0").unwrap()).unwrap(), ratio(1, 1));
    }

    #[test]
    fn shift_identities_on_g1() {
        let g1 = presets::g1();
        let nu = PointMeasure::dirac(Point::Site(0));
        for m in [0, -1, -2] {
            let mut fam = cylinder_family(g1.alphabet(), m, 3);
            fam.extend(cylinder_family(g1.alphabet(), m - 1, 3));
            let r = shm_residuals(&g1, &nu, m, &fam).unwrap();
            assert_eq!((r.u_star, r.shift, r.routes), (0.0, 0.0, 0.0));
            assert!(r.consistency > 0.0);
            let rect = rectangle_residuals(&g1, &nu, m, &fam).unwrap();
            assert_eq!((rect.rectangle, rect.averaging), (0.0, 0.0));
        }
    }

    #[test]
    fn rectangles() {
        let g1 = presets::g1();
        let nu = PointMeasure::uniform(&[Point::Site(0), Point::Site(1)]);
        let q = CylinderSet::parse(g1.alphabet(), "m=0;w=e11|m=0;w=e21").unwrap();
        let whole = tilde_phi_rectangle(&g1, &nu, 0, &RectBase::Whole, &q).unwrap();
        assert_eq!(whole, phi_m_mass(&g1, &nu, 0, &q).unwrap());
        let none = tilde_phi_rectangle(&g1, &nu, 0, &RectBase::Cells(vec![]), &q).unwrap();
        assert_eq!(none, ratio(0, 1));
        let g3 = presets::g3();
        let seg = RectBase::Segment(ratio(0, 1), ratio(1, 2));
        let q3 = CylinderSet::parse(g3.alphabet(), "m=0;w=0").unwrap();
        let err = tilde_phi_rectangle(&g3, &PointMeasure::dirac(Point::Real(ratio(0, 1))), 0, &seg, &q3);
        assert!(matches!(err, Err(Error::BoundaryAtom(_))));
    }

    #[test]
    fn depth_precondition() {
        let g1 = presets::g1();
        let q = CylinderSet::parse(g1.alphabet(), "m=-2;w=e11").unwrap();
        assert!(phi_m_mass(&g1, &PointMeasure::dirac(Point::Site(0)), -1, &q).is_err());
    }
}
