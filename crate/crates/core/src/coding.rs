//! The coding map `F(sigma) = lim w_{sigma_0} o ... o w_{sigma_m}(x_{i(sigma_m)})`,
//! the energy `u = log p_{sigma_1} o F`, the conditional expectations
//! `E(1_{_1[e]} | F_m)` and martingale diagnostics of `p_e o F_m`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::path::{phi_m_mass, rectangle_residuals};
use crate::scalar::Scalar;
use crate::shift::{window_points, Cylinder, CylinderSet, Symbol};
use crate::system::{MarkovSystem, Point, PointMeasure};

/// Finite-depth approximation `F_m(sigma)` of the coding map.
#[derive(Debug, Clone)]
pub struct CodingResult<T> {
    pub point: Point<T>,
    /// Rigorous bound on `d(F_m(sigma), F_{m-k}(sigma))` for every `k >= 0`.
    pub error_bound: T,
    /// `a^{|m|} diam(K)` when a contraction constant is given.
    pub contraction_bound: Option<T>,
    /// `d(F_m, F_{m+1})`, a heuristic convergence indicator.
    pub last_displacement: Option<T>,
    /// `m`, i.e. minus the number of symbols before `sigma_0`.
    pub depth_used: i64,
    pub admissible: bool,
}

/// Checks `t(sigma_k) = i(sigma_{k+1})` along the word.
pub fn is_admissible<T: Scalar>(sys: &MarkovSystem<T>, word: &[Symbol]) -> bool {
    word.windows(2)
        .all(|w| sys.edge(w[0]).target == sys.edge(w[1]).source)
}

fn base_point<T: Scalar>(sys: &MarkovSystem<T>, cell: usize) -> Result<Point<T>> {
    sys.base_points()
        .get(cell)
        .cloned()
        .ok_or_else(|| Error::InvalidSystem(format!("no base point for cell {}", cell + 1)))
}

/// `F_m(sigma)` for the past word `sigma_m .. sigma_0` (oldest symbol
/// first), computed forward from the base point `x_{i(sigma_m)}`.
///
/// The bound is the product of the map Lipschitz constants along the word
/// times the diameter of `K_{i(sigma_m)}`: every deeper approximation is the
/// same composition applied to some other point of that cell.
pub fn coding_point<T: Scalar>(sys: &MarkovSystem<T>, word: &[Symbol]) -> Result<CodingResult<T>> {
    let (&first, _) = word
        .split_first()
        .ok_or_else(|| Error::InvalidQuery("coding needs a non-empty past word".into()))?;
    word.iter().try_for_each(|&s| sys.alphabet().check(s))?;
    let depth_used = -(word.len() as i64 - 1);
    let contraction_bound = sys
        .contraction_constant()
        .map(|a| pow(a, depth_used.unsigned_abs()) * sys.diameter());
    if !is_admissible(sys, word) {
        let last = *word.last().expect("non-empty");
        return Ok(CodingResult {
            point: base_point(sys, sys.edge(last).target)?,
            error_bound: T::zero(),
            contraction_bound,
            last_displacement: None,
            depth_used,
            admissible: false,
        });
    }
    let start_cell = sys.edge(first).source;
    let mut x = base_point(sys, start_cell)?;
    let mut lip = T::one();
    for &e in word {
        x = sys.map(e, &x)?;
        lip = lip * sys.map_lipschitz(e);
    }
    // F_{m+1} drops the oldest symbol
    let last_displacement = if word.len() > 1 {
        let shorter = forward(sys, &word[1..])?;
        Some(sys.distance(&x, &shorter))
    } else {
        None
    };
    Ok(CodingResult {
        point: x,
        error_bound: lip * sys.cell_diameter(start_cell),
        contraction_bound,
        last_displacement,
        depth_used,
        admissible: true,
    })
}

fn forward<T: Scalar>(sys: &MarkovSystem<T>, word: &[Symbol]) -> Result<Point<T>> {
    let mut x = base_point(sys, sys.edge(word[0]).source)?;
    for &e in word {
        x = sys.map(e, &x)?;
    }
    Ok(x)
}

fn pow<T: Scalar>(a: &T, n: u64) -> T {
    (0..n).fold(T::one(), |acc, _| acc * a.clone())
}

/// `u(sigma) = log p_{sigma_1}(F(sigma))`, with `log 0 = -inf`.
#[derive(Debug, Clone)]
pub struct EnergyValue<T> {
    /// Natural log; `-inf` is the marker for a zero probability.
    pub value: f64,
    pub neg_infinite: bool,
    pub prob: T,
    /// Bound on `|u(sigma) - value|` propagated from the coding bound.
    pub error_bound: Option<f64>,
    pub coding: CodingResult<T>,
}

/// Energy of the word `sigma_m .. sigma_0 sigma_1`: the last symbol is the
/// next edge, everything before it is the past.
pub fn energy_u<T: Scalar>(sys: &MarkovSystem<T>, word: &[Symbol]) -> Result<EnergyValue<T>> {
    if word.len() < 2 {
        return Err(Error::InvalidQuery("energy needs a past word and a next symbol".into()));
    }
    let (&next, past) = word.split_last().expect("length checked");
    sys.alphabet().check(next)?;
    let coding = coding_point(sys, past)?;
    let continues = sys.edge(*past.last().expect("non-empty")).target == sys.edge(next).source;
    let prob = if coding.admissible && continues {
        sys.prob(next, &coding.point)?
    } else {
        T::zero()
    };
    if !prob.is_positive() {
        return Ok(EnergyValue {
            value: f64::NEG_INFINITY,
            neg_infinite: true,
            prob: T::zero(),
            error_bound: None,
            coding,
        });
    }
    let p = prob.to_f64();
    // |log p - log q| <= |p - q| / min(p, q) and |p - q| <= Lip(p_e) * err
    let dp = sys.prob_lipschitz(next).to_f64() * coding.error_bound.to_f64();
    let error_bound = (dp < p).then(|| dp / (p - dp));
    Ok(EnergyValue {
        value: p.ln(),
        neg_infinite: false,
        prob,
        error_bound,
        coding,
    })
}

/// `E(1_{_1[e]} | F_m)` on the cylinder `_m[word]`.
#[derive(Debug, Clone)]
pub struct CondExp<T> {
    /// `p_e(F_m(sigma))`.
    pub formula: T,
    /// `phi_m(_m[word e]) / phi_m(_m[word])`; `None` when the conditioning
    /// cylinder has zero mass.
    pub ratio: Option<T>,
    pub residual: Option<f64>,
    /// `sum_e p_e(F_m)` over the edges leaving the coding point's cell.
    pub row_sum: T,
}

pub fn cond_exp_fm<T: Scalar>(
    sys: &MarkovSystem<T>,
    nu: &PointMeasure<T>,
    e: Symbol,
    word: &[Symbol],
) -> Result<CondExp<T>> {
    sys.alphabet().check(e)?;
    let coding = coding_point(sys, word)?;
    if !coding.admissible {
        return Err(Error::InvalidQuery(format!(
            "word `{}` is not admissible",
            sys.alphabet().format_word(word)
        )));
    }
    let formula = sys.prob(e, &coding.point)?;
    let row_sum = sys.alphabet().symbols().try_fold(T::zero(), |acc, f| {
        sys.prob(f, &coding.point).map(|p| acc + p)
    })?;
    let m = coding.depth_used;
    let base = Cylinder::new(m, word.to_vec())?;
    let mut extended = word.to_vec();
    extended.push(e);
    let denom = phi_m_mass(sys, nu, m, &CylinderSet::single(base))?;
    let ratio = if denom.is_zero() {
        None
    } else {
        let num = phi_m_mass(sys, nu, m, &CylinderSet::single(Cylinder::new(m, extended)?))?;
        Some(num / denom)
    };
    let residual = ratio
        .as_ref()
        .map(|r| (r.clone() - formula.clone()).abs().to_f64());
    Ok(CondExp {
        formula,
        ratio,
        residual,
        row_sum,
    })
}

/// Draws an admissible past `sigma_{-depth} .. sigma_0` backwards from a
/// uniformly chosen `sigma_0`; `None` if some cell has no incoming edge on
/// the way.
pub fn sample_past<T: Scalar>(sys: &MarkovSystem<T>, depth: usize, rng: &mut ChaCha8Rng) -> Option<Vec<Symbol>> {
    let symbols: Vec<Symbol> = sys.alphabet().symbols().collect();
    let mut rev = vec![symbols[rng.gen_range(0..symbols.len())]];
    for _ in 0..depth {
        let cell = sys.edge(*rev.last().expect("non-empty")).source;
        let into: Vec<Symbol> = symbols
            .iter()
            .copied()
            .filter(|&s| sys.edge(s).target == cell)
            .collect();
        if into.is_empty() {
            return None;
        }
        rev.push(into[rng.gen_range(0..into.len())]);
    }
    rev.reverse();
    Some(rev)
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleRow {
    pub past: String,
    /// `p_e(F_m)` for `m = 0, -1, ..., -depth`.
    pub values: Vec<f64>,
    /// `|p_e(F_m) - p_e(F_{m-1})|`.
    pub increments: Vec<f64>,
    /// `max_k d(F_m, F_{m-k})`: the Cauchy diagnostic of `(F_m)`.
    pub tail_distance: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleReport {
    pub symbol: String,
    pub depth: usize,
    pub rows: Vec<MartingaleRow>,
    /// Whether a contraction constant was available for the bound checks.
    pub bounded: bool,
    /// `Lip(p_e)` on its source cell.
    pub prob_lipschitz: f64,
    /// Pairs `(m, k)` with `d(F_m, F_{m-k}) > a^{|m|} diam(K)`.
    pub distance_violations: usize,
    /// Pairs with `|p_e(F_m) - p_e(F_{m-k})| > Lip(p_e) a^{|m|} diam(K)`.
    pub increment_violations: usize,
    /// Largest observed `d(F_m, F_{m-k}) / (a^{|m|} diam(K))`.
    pub worst_ratio: f64,
    /// Averaging identity `int p_{e,m-1} dphi~_{m-1}(nu) = int p_{e,m} dphi~_m(U*nu)`
    /// over rectangles `K x _m[..]`, for `m = 0, -1, -2`.
    pub averaging_residual: Option<f64>,
}

/// Samples `samples` admissible pasts and tracks `p_e(F_m)` down to depth
/// `-depth`. Every pair `m, m - k` is checked against the contraction bound.
pub fn martingale_diagnostic<T: Scalar>(
    sys: &MarkovSystem<T>,
    nu: Option<&PointMeasure<T>>,
    e: Symbol,
    samples: usize,
    depth: usize,
    seed: u64,
) -> Result<MartingaleReport> {
    sys.alphabet().check(e)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let diam = sys.diameter();
    let lip_p = sys.prob_lipschitz(e);
    let a = sys.contraction_constant().cloned();
    let mut report = MartingaleReport {
        symbol: sys.alphabet().name(e).to_string(),
        depth,
        rows: Vec::with_capacity(samples),
        bounded: a.is_some(),
        prob_lipschitz: lip_p.to_f64(),
        distance_violations: 0,
        increment_violations: 0,
        worst_ratio: 0.0,
        averaging_residual: None,
    };
    for _ in 0..samples {
        let Some(past) = sample_past(sys, depth, &mut rng) else {
            return Err(Error::Unsupported("some cell has no incoming edge; pasts cannot be extended".into()));
        };
        // points[j] = F_{-j}
        let mut points = Vec::with_capacity(depth + 1);
        let mut probs = Vec::with_capacity(depth + 1);
        for j in 0..=depth {
            let c = coding_point(sys, &past[depth - j..])?;
            probs.push(sys.prob(e, &c.point)?);
            points.push(c.point);
        }
        let mut tail_distance = vec![0.0f64; depth + 1];
        for j in 0..=depth {
            let bound = a.as_ref().map(|a| pow(a, j as u64) * diam.clone());
            for k in j + 1..=depth {
                let d = sys.distance(&points[j], &points[k]);
                let dp = (probs[j].clone() - probs[k].clone()).abs();
                tail_distance[j] = tail_distance[j].max(d.to_f64());
                if let Some(b) = &bound {
                    if d > *b {
                        report.distance_violations += 1;
                    }
                    if dp > lip_p.clone() * b.clone() {
                        report.increment_violations += 1;
                    }
                    if b.is_positive() {
                        report.worst_ratio = report.worst_ratio.max((d / b.clone()).to_f64());
                    }
                }
            }
        }
        let values: Vec<f64> = probs.iter().map(Scalar::to_f64).collect();
        let increments = probs
            .windows(2)
            .map(|w| (w[0].clone() - w[1].clone()).abs().to_f64())
            .collect();
        report.rows.push(MartingaleRow {
            past: sys.alphabet().format_word(&past),
            values,
            increments,
            tail_distance,
        });
    }
    if let Some(nu) = nu {
        let mut worst: f64 = 0.0;
        for m in [0i64, -1, -2] {
            let family: Vec<Cylinder> = window_points(sys.alphabet(), m, 0)
                .map(|w| Cylinder::new(m, w))
                .collect::<Result<_>>()?;
            worst = worst.max(rectangle_residuals(sys, nu, m, &family)?.averaging);
        }
        report.averaging_residual = Some(worst);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::scalar::ratio;
    use crate::system::stationary_distribution;
    use num_rational::BigRational;

    #[test]
    fn finite_chain_codes_to_target_state() {
        let g1 = presets::g1();
        let w = g1.alphabet().word("e12,e21,e11").unwrap();
        let c = coding_point(&g1, &w).unwrap();
        assert!(c.admissible);
        assert_eq!(c.point, Point::Site(0));
        assert_eq!(c.error_bound, ratio(0, 1));
        assert_eq!(c.depth_used, -2);
    }

    #[test]
    fn inadmissible_word_falls_back_to_base_point() {
        let g1 = presets::g1();
        let w = g1.alphabet().word("e11,e21").unwrap();
        let c = coding_point(&g1, &w).unwrap();
        assert!(!c.admissible);
        assert_eq!(c.point, Point::Site(0));
    }

    #[test]
    fn g3_all_zero_halves() {
        let g3 = presets::g3();
        let zero = g3.alphabet().symbol("0").unwrap();
        let one = g3.alphabet().symbol("1").unwrap();
        let c = coding_point(&g3, &[zero; 6]).unwrap();
        assert_eq!(c.point, Point::Real(ratio(0, 1)));
        assert_eq!(c.error_bound, ratio(1, 64));
        let c = coding_point(&g3, &[one; 6]).unwrap();
        assert_eq!(c.point, Point::Real(ratio(63, 64)));
        assert_eq!(c.last_displacement, Some(ratio(1, 64)));
    }

    #[test]
    fn energy_on_g1_is_log_transition() {
        let g1 = presets::g1();
        let w = g1.alphabet().word("e21,e11").unwrap();
        let u = energy_u(&g1, &w).unwrap();
        assert!((u.value - 0.7f64.ln()).abs() < 1e-15);
        let bad = g1.alphabet().word("e12,e11").unwrap();
        assert!(energy_u(&g1, &bad).unwrap().neg_infinite);
    }

    #[test]
    fn energy_on_g3_near_log_third() {
        let g3 = presets::g3();
        let zero = g3.alphabet().symbol("0").unwrap();
        let u = energy_u(&g3.to_scalar::<f64>(), &[zero; 12]).unwrap();
        assert!((u.value - (1.0f64 / 3.0).ln()).abs() < 1e-3);
    }

    #[test]
    fn conditional_expectation_matches_ratio() {
        let g1 = presets::g1();
        let nu = PointMeasure::dirac(Point::Site(0));
        let w = g1.alphabet().word("e11,e12,e21").unwrap();
        let e12 = g1.alphabet().symbol("e12").unwrap();
        let r = cond_exp_fm(&g1, &nu, e12, &w).unwrap();
        assert_eq!(r.formula, ratio(3, 10));
        assert_eq!(r.ratio, Some(ratio(3, 10)));
        assert_eq!(r.row_sum, ratio(1, 1));
    }

    #[test]
    fn martingale_on_g1_is_flat_and_averaging_holds() {
        let g1 = presets::g1();
        let pi: PointMeasure<BigRational> = stationary_distribution(&g1).unwrap().measure;
        let e = g1.alphabet().symbol("e11").unwrap();
        let r = martingale_diagnostic(&g1, Some(&pi), e, 5, 6, 1).unwrap();
        assert!(r.rows.iter().all(|row| row.increments.iter().all(|&d| d == 0.0)));
        assert_eq!(r.averaging_residual, Some(0.0));
    }

    #[test]
    fn martingale_on_g3_respects_bounds() {
        let g3 = presets::g3();
        let e = g3.alphabet().symbol("0").unwrap();
        let r = martingale_diagnostic(&g3, None, e, 20, 12, 7).unwrap();
        assert!(r.bounded);
        assert_eq!(r.distance_violations, 0);
        assert_eq!(r.increment_violations, 0);
    }
}
