//! Entropy and the equilibrium identity `h + int u dPhi = 0`, and the
//! pushforward identities for `F(Phi)`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::coding::coding_point;
use crate::error::{Error, Result};
use crate::outer::{phi_estimate, CoverParams};
use crate::par;
use crate::path::{cylinder_family, phi_m_mass, PhiSource};
use crate::scalar::Scalar;
use crate::shift::{window_points, Cylinder, CylinderSet, Symbol};
use crate::system::{apply_u_star, MarkovSystem, Point, PointMeasure, UStarOptions};

/// `|U*nu - nu|_1`.
pub fn stationarity_defect<T: Scalar>(sys: &MarkovSystem<T>, nu: &PointMeasure<T>) -> Result<T> {
    Ok(apply_u_star(sys, nu, &UStarOptions::default())?.l1_distance(nu))
}

fn require_stationary<T: Scalar>(sys: &MarkovSystem<T>, nu: &PointMeasure<T>) -> Result<()> {
    let defect = stationarity_defect(sys, nu)?;
    let ok = if T::EXACT { defect.is_zero() } else { defect.to_f64() <= 1e-12 };
    if ok {
        Ok(())
    } else {
        Err(Error::NotStationary(defect.to_f64()))
    }
}

/// One admissible pair `(e0, e1)` of the exact-chain sums.
#[derive(Debug, Clone, Serialize)]
pub struct PairTerm {
    pub e0: String,
    pub e1: String,
    /// `Phi(_0[e0, e1])`.
    pub mass: f64,
    /// `p_{e1}(F(sigma))` on that cylinder.
    pub prob: f64,
    /// `-mass * log prob`, the entropy summand.
    pub entropy_term: f64,
    /// `mass * log prob`, the energy summand.
    pub energy_term: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExactEquilibrium {
    /// Entropy rate `H(sigma_0, sigma_1) - H(sigma_0)` from block masses.
    pub entropy: f64,
    /// `-sum pi(e0) p(e1) log p(e1)`.
    pub entropy_closed_form: f64,
    /// `int u dPhi` from the energy on length-two cylinders.
    pub energy_integral: f64,
    pub residual: f64,
    /// `sum (entropy_term + energy_term)`, zero when the sums cancel term by term.
    pub termwise_residual: f64,
    /// Total mass `Phi(Sigma)` used for the integrals.
    pub phi_mass_used: f64,
    pub terms: Vec<PairTerm>,
}

fn xlogx(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// Exact evaluation on a finite chain with stationary `nu`, where `Phi(nu)`
/// is the stationary edge chain.
pub fn entropy_exact<T: Scalar>(sys: &MarkovSystem<T>, nu: &PointMeasure<T>) -> Result<ExactEquilibrium> {
    if !sys.is_finite_chain() {
        return Err(Error::Unsupported(
            "exact-chain mode needs a finite chain (one point per cell); use estimate mode".into(),
        ));
    }
    require_stationary(sys, nu)?;
    let alphabet = sys.alphabet();
    let mut single = BTreeMap::new();
    for e in alphabet.symbols() {
        let m = phi_m_mass(sys, nu, 0, &CylinderSet::single(Cylinder::new(0, vec![e])?))?;
        single.insert(e, m);
    }
    let mut terms = Vec::new();
    let mut h2 = 0.0;
    let mut closed = 0.0;
    let mut phi_mass = T::zero();
    for (&e0, pi_e0) in &single {
        phi_mass = phi_mass + pi_e0.clone();
        for e1 in alphabet.symbols() {
            let c = Cylinder::new(0, vec![e0, e1])?;
            let mass = phi_m_mass(sys, nu, 0, &CylinderSet::single(c))?;
            h2 -= xlogx(mass.to_f64());
            if sys.edge(e0).target != sys.edge(e1).source {
                continue;
            }
            let coding = coding_point(sys, &[e0])?;
            let prob = sys.prob(e1, &coding.point)?.to_f64();
            let weight = (pi_e0.clone() * T::from_f64(prob)).to_f64();
            closed -= if prob > 0.0 { weight * prob.ln() } else { 0.0 };
            if mass.is_zero() {
                continue;
            }
            let m = mass.to_f64();
            let log_p = prob.ln();
            terms.push(PairTerm {
                e0: alphabet.name(e0).to_string(),
                e1: alphabet.name(e1).to_string(),
                mass: m,
                prob,
                entropy_term: -(m * log_p),
                energy_term: m * log_p,
            });
        }
    }
    let h1: f64 = -single.values().map(|v| xlogx(v.to_f64())).sum::<f64>();
    let entropy = h2 - h1;
    let energy_integral: f64 = terms.iter().map(|t| t.energy_term).sum();
    let termwise_residual = terms.iter().map(|t| t.entropy_term + t.energy_term).sum();
    Ok(ExactEquilibrium {
        entropy,
        entropy_closed_form: closed,
        energy_integral,
        residual: entropy + energy_integral,
        termwise_residual,
        phi_mass_used: phi_mass.to_f64(),
        terms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateParams {
    pub samples: usize,
    pub burn_in: usize,
    /// Past length `k` of the conditional block entropy `H(sigma_1 | sigma_{-k+1..0})`.
    pub block: usize,
    /// Independent generator streams; fixed so results do not depend on the
    /// thread count.
    pub streams: usize,
    pub seed: u64,
}

impl Default for EstimateParams {
    fn default() -> Self {
        EstimateParams {
            samples: 100_000,
            burn_in: 1_000,
            block: 6,
            streams: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimatedEquilibrium {
    /// Miller-Madow corrected `H_{k+1} - H_k` of the simulated symbols.
    pub entropy: f64,
    /// Sample mean of `log p_{sigma_1}(x)` along the orbit; `-inf` if any
    /// sampled energy was `-inf`.
    pub energy_integral: f64,
    pub residual: f64,
    /// Standard error of the residual from the spread across streams.
    pub standard_error: f64,
    pub samples: usize,
    pub streams: usize,
    /// Simulating the forward chain samples `Phi` only when `nu` is stationary.
    pub heuristic: bool,
}

struct StreamStats {
    log_sum: f64,
    neg_inf: bool,
    /// Counts of `k`- and `(k+1)`-blocks.
    short: BTreeMap<Vec<u32>, u64>,
    long: BTreeMap<Vec<u32>, u64>,
    n: usize,
}

fn block_entropy(counts: &BTreeMap<Vec<u32>, u64>) -> f64 {
    let n: u64 = counts.values().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    let plug_in: f64 = -counts.values().map(|&c| xlogx(c as f64 / n)).sum::<f64>();
    plug_in + (counts.len() as f64 - 1.0) / (2.0 * n)
}

fn stats_entropy(s: &StreamStats) -> f64 {
    block_entropy(&s.long) - block_entropy(&s.short)
}

fn stats_energy(s: &StreamStats) -> f64 {
    if s.neg_inf {
        f64::NEG_INFINITY
    } else {
        s.log_sum / s.n as f64
    }
}

fn sample_measure(nu: &PointMeasure<f64>, rng: &mut ChaCha8Rng) -> Point<f64> {
    let total = nu.total();
    let mut u = rng.gen::<f64>() * total;
    for (x, w) in nu.atoms() {
        if u < *w {
            return x.clone();
        }
        u -= w;
    }
    nu.atoms().last().expect("non-empty measure").0.clone()
}

fn run_stream(
    sys: &MarkovSystem<f64>,
    nu: &PointMeasure<f64>,
    params: &EstimateParams,
    stream: usize,
    n: usize,
) -> Result<StreamStats> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(stream as u64);
    let mut x = sample_measure(nu, &mut rng);
    let k = params.block;
    let mut history: Vec<u32> = Vec::with_capacity(k + 1);
    let mut stats = StreamStats {
        log_sum: 0.0,
        neg_inf: false,
        short: BTreeMap::new(),
        long: BTreeMap::new(),
        n: 0,
    };
    for t in 0..params.burn_in + n {
        let cell = sys.cell_of(&x).ok_or_else(|| Error::OutsideCells(sys.point_label(&x)))?;
        let out: Vec<(Symbol, f64)> = sys
            .edges_from(cell)
            .map(|e| sys.prob(e, &x).map(|p| (e, p)))
            .collect::<Result<_>>()?;
        let mut u = rng.gen::<f64>() * out.iter().map(|(_, p)| p).sum::<f64>();
        let mut chosen = out.last().ok_or_else(|| Error::InvalidSystem("cell without edges".into()))?;
        for o in &out {
            if u < o.1 {
                chosen = o;
                break;
            }
            u -= o.1;
        }
        let (e, p) = *chosen;
        if t >= params.burn_in {
            // x approximates F(sigma) for the past ending at the previous step
            if p > 0.0 {
                stats.log_sum += p.ln();
            } else {
                stats.neg_inf = true;
            }
            stats.n += 1;
        }
        history.push(e.0);
        if history.len() > k + 1 {
            history.remove(0);
        }
        if t >= params.burn_in && history.len() == k + 1 {
            *stats.long.entry(history.clone()).or_default() += 1;
            *stats.short.entry(history[..k].to_vec()).or_default() += 1;
        }
        x = sys.map(e, &x)?;
    }
    Ok(stats)
}

/// Monte Carlo estimate along the simulated forward chain started from `nu`.
pub fn entropy_estimate<T: Scalar>(
    sys: &MarkovSystem<T>,
    nu: &PointMeasure<T>,
    params: &EstimateParams,
) -> Result<EstimatedEquilibrium> {
    let streams = params.streams.max(2);
    let fsys = sys.convert(|v| v.to_f64());
    let fnu = nu.convert(|v| v.to_f64());
    if fnu.is_empty() {
        return Err(Error::Config("initial distribution is empty".into()));
    }
    let per = params.samples.div_ceil(streams);
    let runs: Vec<Result<StreamStats>> = par::map_range(streams, |s| run_stream(&fsys, &fnu, params, s, per));
    let runs: Vec<StreamStats> = runs.into_iter().collect::<Result<_>>()?;
    let mut pooled = StreamStats {
        log_sum: 0.0,
        neg_inf: false,
        short: BTreeMap::new(),
        long: BTreeMap::new(),
        n: 0,
    };
    for r in &runs {
        pooled.log_sum += r.log_sum;
        pooled.neg_inf |= r.neg_inf;
        pooled.n += r.n;
        for (b, c) in &r.short {
            *pooled.short.entry(b.clone()).or_default() += c;
        }
        for (b, c) in &r.long {
            *pooled.long.entry(b.clone()).or_default() += c;
        }
    }
    let entropy = stats_entropy(&pooled);
    let energy_integral = stats_energy(&pooled);
    let per_stream: Vec<f64> = runs.iter().map(|r| stats_entropy(r) + stats_energy(r)).collect();
    let mean = per_stream.iter().sum::<f64>() / per_stream.len() as f64;
    let var = per_stream.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (per_stream.len() - 1) as f64;
    let heuristic = stationarity_defect(sys, nu)
        .map(|d| d.to_f64() > 1e-12)
        .unwrap_or(true);
    Ok(EstimatedEquilibrium {
        entropy,
        energy_integral,
        residual: entropy + energy_integral,
        standard_error: (var / per_stream.len() as f64).sqrt(),
        samples: pooled.n,
        streams,
        heuristic,
    })
}

/// `F(Phi)` and the two pushforward identities.
#[derive(Debug, Clone, Serialize)]
pub struct PushforwardReport {
    /// `(label, mass)` of `F(Phi)`.
    pub coded_measure: Vec<(String, f64)>,
    /// `max |Phi(c) - phi_0(F(Phi))(c)|` over cylinders `_0[w]`, `|w| <= 3`.
    pub sibpm_residual: f64,
    /// `|U* F(Phi) - F(Phi)|_1`.
    pub eoim_residual: f64,
    pub cylinders_checked: usize,
    /// `Phi` equals `phi_0` for stationary `nu`; otherwise the covers only
    /// give upper bounds and the report is indicative.
    pub certified: bool,
    /// Every coding point used was exact (zero error bound).
    pub coding_exact: bool,
}

/// `F(Phi) = sum_w Phi(_{1-L}[w]) delta_{F(w)}` over past words of length
/// `coding_len`; for finite chains `coding_len = 1` is exact.
pub fn pushforward_checks<T: Scalar>(
    sys: &MarkovSystem<T>,
    nu: &PointMeasure<T>,
    params: &CoverParams,
    coding_len: usize,
) -> Result<PushforwardReport> {
    let alphabet = sys.alphabet();
    let source = PhiSource::markov(sys.clone(), nu.clone());
    let coding_len = coding_len.max(1);
    let start = 1 - coding_len as i64;
    let depth = params.past_depth.max(coding_len - 1);
    let cparams = params.with_depth(depth);
    let words: Vec<Vec<Symbol>> = window_points(alphabet, start, 0).collect();
    let masses: Vec<Result<T>> = par::map(&words, |w| {
        let q = CylinderSet::single(Cylinder::new(start, w.clone())?);
        Ok(phi_estimate(&source, &q, &cparams)?.value)
    });
    let mut atoms = Vec::new();
    let mut coding_exact = true;
    for (w, mass) in words.iter().zip(masses) {
        let mass = mass?;
        let c = coding_point(sys, w)?;
        if !c.admissible || mass.is_zero() {
            continue;
        }
        coding_exact &= c.error_bound.is_zero();
        atoms.push((c.point, mass));
    }
    let mu = PointMeasure::new(atoms)?;
    let family = cylinder_family(alphabet, 0, 3);
    let diffs: Vec<Result<f64>> = par::map(&family, |c| {
        let q = CylinderSet::single(c.clone());
        let phi = phi_estimate(&source, &q, params)?.value;
        let pushed = phi_m_mass(sys, &mu, 0, &q)?;
        Ok((phi - pushed).abs().to_f64())
    });
    let mut sibpm = 0.0f64;
    for d in diffs {
        sibpm = sibpm.max(d?);
    }
    let eoim = stationarity_defect(sys, &mu)?.to_f64();
    let certified = stationarity_defect(sys, nu)?.to_f64() <= if T::EXACT { 0.0 } else { 1e-12 };
    Ok(PushforwardReport {
        coded_measure: mu
            .atoms()
            .iter()
            .map(|(x, w)| (sys.point_label(x), w.to_f64()))
            .collect(),
        sibpm_residual: sibpm,
        eoim_residual: eoim,
        cylinders_checked: family.len(),
        certified,
        coding_exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::scalar::ratio;
    use crate::system::{nu_zero, stationary_distribution};
    use num_rational::BigRational;

    #[test]
    fn g1_exact_matches_closed_form() {
        let g1 = presets::g1();
        let pi = stationary_distribution(&g1).unwrap().measure;
        let r = entropy_exact(&g1, &pi).unwrap();
        let want = -((4.0 / 7.0) * (0.7f64 * 0.7f64.ln() + 0.3 * 0.3f64.ln())
            + (3.0 / 7.0) * (0.4 * 0.4f64.ln() + 0.6 * 0.6f64.ln()));
        assert!((r.entropy - want).abs() < 1e-12);
        assert!((r.entropy_closed_form - want).abs() < 1e-12);
        assert!(r.residual.abs() <= 1e-12);
        assert_eq!(r.termwise_residual, 0.0);
    }

    #[test]
    fn exact_mode_rejects_non_stationary() {
        let g1 = presets::g1();
        let nu: PointMeasure<BigRational> = PointMeasure::dirac(Point::Site(0));
        assert!(matches!(entropy_exact(&g1, &nu), Err(Error::NotStationary(_))));
    }

    #[test]
    fn deterministic_cycle_has_zero_entropy() {
        let sys = presets::chain(&[vec![ratio(0, 1), ratio(1, 1)], vec![ratio(1, 1), ratio(0, 1)]]).unwrap();
        let pi = stationary_distribution(&sys).unwrap().measure;
        let r = entropy_exact(&sys, &pi).unwrap();
        assert_eq!(r.entropy, 0.0);
        assert_eq!(r.residual, 0.0);
        let p = pushforward_checks(&sys, &pi, &CoverParams::default().with_depth(2), 1).unwrap();
        assert_eq!(p.coded_measure.iter().map(|a| a.1).collect::<Vec<_>>(), vec![0.5, 0.5]);
    }

    #[test]
    fn g1_pushforward_is_pi() {
        let g1 = presets::g1();
        let pi = stationary_distribution(&g1).unwrap().measure;
        let params = CoverParams {
            arith: crate::Arith::Rational,
            ..CoverParams::default()
        };
        let r = pushforward_checks(&g1, &pi, &params, 1).unwrap();
        assert_eq!(r.sibpm_residual, 0.0);
        assert_eq!(r.eoim_residual, 0.0);
        assert!(r.certified && r.coding_exact);
        assert!((r.coded_measure[0].1 - 4.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn g3_estimate_within_three_standard_errors() {
        let g3 = presets::g3().to_scalar::<f64>();
        let nu = nu_zero(&g3);
        let params = EstimateParams {
            samples: 100_000,
            ..EstimateParams::default()
        };
        let r = entropy_estimate(&g3, &nu, &params).unwrap();
        assert!(r.residual.abs() <= 3.0 * r.standard_error, "{r:?}");
        let again = entropy_estimate(&g3, &nu, &params).unwrap();
        assert_eq!(r.residual, again.residual);
    }
}
