//! The acceptance suite shared by the `acceptance` test target and the
//! `selftest` command. Every criterion is deterministic for its fixed seed.

use num_rational::BigRational;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::coding::martingale_diagnostic;
use crate::equilibrium::{entropy_exact, pushforward_checks, stationarity_defect};
use crate::error::Result;
use crate::oracle::{phi_bruteforce, OracleMode};
use crate::outer::{invariance_residual, phi_estimate, phi_star_estimate, verify_cover, CoverParams};
use crate::path::{cylinder_family, phi_m_mass, rectangle_residuals, shm_residuals, PhiSource};
use crate::presets;
use crate::random::{random_chain, random_measure, random_points_system};
use crate::report::determinism_hash;
use crate::scalar::{ratio, Arith, Scalar};
use crate::shift::{window_points, Cylinder, CylinderSet};
use crate::system::{contraction_ratio, nu_zero, stationary_distribution, MarkovSystem, Point, PointMeasure};

#[derive(Debug, Clone, Serialize)]
pub struct Outcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    /// Numbers behind the verdict; part of the determinism hash.
    pub data: Value,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} [{}] {}: {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

pub const NAMES: [&str; 11] = [
    "g2 null outer measure",
    "stationary collapse",
    "oracle equivalence",
    "monotonicity",
    "shift identities",
    "invariance chain",
    "equilibrium identity",
    "pushforward identities",
    "contraction and coding bounds",
    "g3 positivity evidence",
    "determinism",
];

fn rational(depth: usize) -> CoverParams {
    CoverParams {
        past_depth: depth,
        arith: Arith::Rational,
        ..CoverParams::default()
    }
}

fn float(depth: usize) -> CoverParams {
    CoverParams {
        past_depth: depth,
        arith: Arith::Float,
        ..CoverParams::default()
    }
}

fn outcome(id: u8, run: Result<(bool, String, Value)>) -> Outcome {
    let (passed, detail, data) = run.unwrap_or_else(|e| (false, format!("error: {e}"), json!({"error": e.to_string()})));
    Outcome {
        id,
        name: NAMES[id as usize - 1],
        passed,
        detail,
        data,
    }
}

/// Stationary chains shared by criteria 2 and 4.
fn stationary_chains(count: usize, seed: u64) -> Result<Vec<PhiSource<BigRational>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let sys = random_chain(&mut rng)?;
            let pi = stationary_distribution(&sys)?.measure;
            Ok(PhiSource::markov(sys, pi))
        })
        .collect()
}

/// Random points systems with non-stationary initial distributions, shared
/// by criteria 3 and 4.
fn oracle_sources(systems: usize, measures: usize, seed: u64) -> Result<Vec<PhiSource<BigRational>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..systems {
        let sys = random_points_system(&mut rng)?;
        let mut found = 0;
        let mut tries = 0;
        while found < measures {
            let nu = random_measure(&mut rng, &sys)?;
            tries += 1;
            // some systems fix every measure; keep the last draw then
            if stationarity_defect(&sys, &nu)?.is_zero() && tries < 50 {
                continue;
            }
            out.push(PhiSource::markov(sys.clone(), nu));
            found += 1;
        }
    }
    Ok(out)
}

pub fn criterion_1() -> Outcome {
    outcome(1, (|| {
        let src: PhiSource<BigRational> = PhiSource::Dirac(presets::g2());
        let sigma = CylinderSet::full(src.alphabet(), 0);
        let est = phi_estimate(&src, &sigma, &rational(2))?;
        let cover = est.optimal_cover.clone().unwrap_or_default();
        let check = verify_cover(&src, &sigma, &cover, &est.value)?;
        let star = phi_star_estimate(&src, &sigma, &rational(2), 2)?;
        let zero = ratio(0, 1);
        let passed = est.value == zero
            && est.optimal_cover.is_some()
            && check.is_valid()
            && star.values.iter().all(|v| *v == zero);
        let stars: Vec<String> = star.values.iter().map(|v| v.to_string()).collect();
        Ok((
            passed,
            format!(
                "Phi(Sigma) = {}, cover of {} pieces valid = {}, phi-star = ({})",
                est.value,
                check.pieces,
                check.is_valid(),
                stars.join(",")
            ),
            json!({"value": est.value.to_json(), "pieces": check.pieces, "phi_star": stars}),
        ))
    })())
}

pub fn criterion_2() -> Outcome {
    outcome(2, (|| {
        let sources = stationary_chains(20, 2)?;
        let mut checked = 0usize;
        let mut mismatches = Vec::new();
        for (i, src) in sources.iter().enumerate() {
            let PhiSource::Markov { sys, nu } = src else { unreachable!() };
            let family: Vec<CylinderSet> = cylinder_family(sys.alphabet(), 0, 3)
                .into_iter()
                .map(CylinderSet::single)
                .collect();
            let runs = crate::par::map(&family, |q| -> Result<Option<String>> {
                let want = phi_m_mass(sys, nu, 0, q)?;
                let est = phi_estimate(src, q, &rational(6))?;
                Ok(est
                    .profile
                    .iter()
                    .find(|(_, v)| *v != want)
                    .map(|(m, v)| format!("chain {i} {} M={m}: {v} vs {want}", q.format(sys.alphabet()))))
            });
            for r in runs {
                checked += 1;
                if let Some(m) = r? {
                    mismatches.push(m);
                }
            }
        }
        Ok((
            mismatches.is_empty(),
            format!("{checked} cylinders on 20 chains, depths 0..=6, {} mismatches", mismatches.len()),
            json!({"checked": checked, "mismatches": mismatches}),
        ))
    })())
}

/// Queries inside the window `[lo, hi]`: the whole space, a random
/// cylinder, a union of two random cylinders and a random set of points.
fn window_queries(src: &PhiSource<BigRational>, lo: i64, hi: i64, rng: &mut ChaCha8Rng) -> Result<Vec<CylinderSet>> {
    let a = src.alphabet();
    let random_cylinder = |rng: &mut ChaCha8Rng| -> Result<Cylinder> {
        let start = rng.gen_range(lo..=hi);
        let end = rng.gen_range(start..=hi);
        let word = (start..=end)
            .map(|_| crate::Symbol(rng.gen_range(0..a.len()) as u32))
            .collect();
        Cylinder::new(start, word)
    };
    let single = CylinderSet::single(random_cylinder(rng)?);
    let pair = CylinderSet::single(random_cylinder(rng)?).union(a, &CylinderSet::single(random_cylinder(rng)?));
    let points: Vec<Cylinder> = window_points(a, lo, hi)
        .filter(|_| rng.gen_bool(0.5))
        .map(|w| Cylinder::new(lo, w))
        .collect::<Result<_>>()?;
    let mut out = vec![CylinderSet::full(a, lo), single, pair];
    if !points.is_empty() {
        out.push(CylinderSet::new(a, points)?);
    }
    Ok(out)
}

pub fn criterion_3() -> Outcome {
    outcome(3, (|| {
        let sources = oracle_sources(25, 5, 3)?;
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut jobs = Vec::new();
        for (s, src) in sources.iter().enumerate() {
            for lo in -3i64..=0 {
                for hi in lo..=lo + 3 {
                    for q in window_queries(src, lo, hi, &mut rng)? {
                        jobs.push((s, lo, hi, q));
                    }
                }
            }
        }
        let runs = crate::par::map(&jobs, |(s, lo, hi, q)| -> Result<(OracleMode, Option<String>)> {
            let src = &sources[*s];
            let oracle = phi_bruteforce(src, q, *lo, *hi)?;
            let (mode, oracle) = (oracle.mode, oracle.value);
            let params = CoverParams {
                future_depth: (*hi - q.max_end().unwrap_or(*hi)) as usize,
                ..rational((-lo) as usize)
            };
            let dp = phi_estimate(src, q, &params)?.value;
            let mismatch = (dp != oracle).then(|| {
                format!("source {s} window {lo}:{hi} {}: {dp} vs {oracle}", q.format(src.alphabet()))
            });
            Ok((mode, mismatch))
        });
        let mut mismatches = Vec::new();
        let mut exhaustive = 0;
        for r in runs {
            let (mode, m) = r?;
            exhaustive += usize::from(mode == OracleMode::Exhaustive);
            mismatches.extend(m);
        }
        Ok((
            mismatches.is_empty(),
            format!(
                "{} queries over 16 windows on 25 systems x 5 measures ({exhaustive} exhaustive, {} right-anchored), {} mismatches",
                jobs.len(),
                jobs.len() - exhaustive,
                mismatches.len()
            ),
            json!({"queries": jobs.len(), "exhaustive": exhaustive, "mismatches": mismatches}),
        ))
    })())
}

fn monotone_failures<T: Scalar>(src: &PhiSource<T>, label: &str, params: fn(usize) -> CoverParams) -> Result<Vec<String>> {
    let a = src.alphabet();
    let queries = [
        CylinderSet::full(a, 0),
        CylinderSet::single(Cylinder::new(0, vec![crate::Symbol(0)])?),
    ];
    let mut out = Vec::new();
    for q in &queries {
        let est = phi_estimate(src, q, &params(8))?;
        let ok = est.profile.windows(2).all(|w| {
            if T::EXACT {
                w[1].1 <= w[0].1
            } else {
                w[1].1.to_f64() <= w[0].1.to_f64() + 1e-12
            }
        });
        if !ok {
            out.push(format!("{label} {}: profile increases", q.format(a)));
        }
        let star = phi_star_estimate(src, q, &params(0), 8)?;
        if !star.non_decreasing {
            out.push(format!("{label} {}: phi-star decreases", q.format(a)));
        }
    }
    Ok(out)
}

pub fn criterion_4() -> Outcome {
    outcome(4, (|| {
        let mut sources = stationary_chains(20, 2)?;
        sources.extend(oracle_sources(25, 5, 3)?);
        let runs = crate::par::map_range(sources.len(), |i| -> Result<Vec<String>> {
            let src = &sources[i];
            let mut out = monotone_failures(src, &format!("source {i} rational"), rational)?;
            let PhiSource::Markov { sys, nu } = src else { unreachable!() };
            let fsrc = PhiSource::markov(sys.to_scalar::<f64>(), nu.convert(|w| w.to_f64()));
            out.extend(monotone_failures(&fsrc, &format!("source {i} float"), float)?);
            Ok(out)
        });
        let mut failures = Vec::new();
        for r in runs {
            failures.extend(r?);
        }
        Ok((
            failures.is_empty(),
            format!(
                "{} sources, profiles M=0..=8 and phi-star k=0..=8, rational and float, {} failures",
                sources.len(),
                failures.len()
            ),
            json!({"sources": sources.len(), "failures": failures}),
        ))
    })())
}

fn shm_family(sys: &MarkovSystem<f64>, m: i64) -> Vec<Cylinder> {
    let mut family = Vec::new();
    for start in [m - 1, m, 0] {
        for c in cylinder_family(sys.alphabet(), start, 3) {
            if !family.contains(&c) {
                family.push(c);
            }
        }
    }
    family
}

pub fn criterion_5() -> Outcome {
    outcome(5, (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cases: Vec<(String, MarkovSystem<f64>, PointMeasure<f64>)> = Vec::new();
        let g1 = presets::g1().to_scalar::<f64>();
        cases.push(("g1".into(), g1.clone(), PointMeasure::dirac(Point::Site(0))));
        let g3 = presets::g3().to_scalar::<f64>();
        cases.push(("g3".into(), g3.clone(), nu_zero(&g3)));
        for i in 0..20 {
            let sys = random_points_system(&mut rng)?;
            let nu = random_measure(&mut rng, &sys)?;
            cases.push((format!("random {i}"), sys.to_scalar(), nu.convert(|w| w.to_f64())));
        }
        let mut chains = vec![("g1".to_string(), g1, PointMeasure::dirac(Point::Site(1)))];
        for i in 0..10 {
            let sys = random_chain(&mut rng)?;
            let nu = random_measure(&mut rng, &sys)?;
            chains.push((format!("chain {i}"), sys.to_scalar(), nu.convert(|w| w.to_f64())));
        }
        let mut worst_shm = 0.0f64;
        let mut worst_rect = 0.0f64;
        let mut checked = 0;
        for (_, sys, nu) in &cases {
            for m in [0i64, -1, -2] {
                let r = shm_residuals(sys, nu, m, &shm_family(sys, m))?;
                worst_shm = worst_shm.max(r.u_star).max(r.shift).max(r.routes);
                checked += r.checked;
            }
        }
        for (_, sys, nu) in &chains {
            for m in [0i64, -1, -2] {
                let family: Vec<Cylinder> = (m..=0)
                    .flat_map(|s| cylinder_family(sys.alphabet(), s, 3))
                    .chain(window_points(sys.alphabet(), m, 0).map(|w| Cylinder::new(m, w).expect("non-empty")))
                    .collect();
                let r = rectangle_residuals(sys, nu, m, &family)?;
                worst_rect = worst_rect.max(r.rectangle).max(r.averaging);
            }
        }
        let passed = worst_shm <= 1e-12 && worst_rect <= 1e-12;
        Ok((
            passed,
            format!(
                "{checked} cylinder checks on {} systems, max shift residual {worst_shm:e}; rectangle residual {worst_rect:e} on {} chains",
                cases.len(),
                chains.len()
            ),
            json!({"shm": worst_shm, "rectangle": worst_rect, "checked": checked}),
        ))
    })())
}

pub fn criterion_6() -> Outcome {
    outcome(6, (|| {
        let g1 = presets::g1().to_scalar::<f64>();
        let src = PhiSource::markov(g1.clone(), PointMeasure::dirac(Point::Site(0)));
        let mut failures = Vec::new();
        let mut checked = 0;
        for m in 0..=4usize {
            for c in cylinder_family(g1.alphabet(), 0, 2) {
                let q = CylinderSet::single(c);
                let inv = invariance_residual(&src, &q, &float(m), 1e-9)?;
                checked += 1;
                if !(inv.lower_ordered && inv.upper_ordered) {
                    failures.push(format!(
                        "M={m} {}: {} <= {} <= {}",
                        q.format(g1.alphabet()),
                        inv.phi,
                        inv.phi_preimage,
                        inv.phi_shifted
                    ));
                }
            }
        }
        Ok((
            failures.is_empty(),
            format!("{checked} (cylinder, depth) pairs on g1 from delta_1, {} out of order", failures.len()),
            json!({"checked": checked, "failures": failures}),
        ))
    })())
}

pub fn criterion_7() -> Outcome {
    outcome(7, (|| {
        let mut systems = vec![presets::g1()];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            systems.push(random_chain(&mut rng)?);
        }
        let mut worst = 0.0f64;
        let mut termwise = true;
        let mut residuals = Vec::new();
        for sys in &systems {
            let pi = stationary_distribution(sys)?.measure;
            let r = entropy_exact(sys, &pi)?;
            worst = worst.max(r.residual.abs());
            termwise &= r.termwise_residual == 0.0 && r.terms.iter().all(|t| t.entropy_term == -t.energy_term);
            residuals.push(r.residual);
        }
        Ok((
            worst <= 1e-12 && termwise,
            format!(
                "{} chains, max |h + int u| = {worst:e}, term-wise cancellation {}",
                systems.len(),
                if termwise { "exact" } else { "broken" }
            ),
            json!({"residuals": residuals, "termwise": termwise}),
        ))
    })())
}

pub fn criterion_8() -> Outcome {
    outcome(8, (|| {
        let mut systems = vec![presets::g1()];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            systems.push(random_chain(&mut rng)?);
        }
        let mut sibpm = 0.0f64;
        let mut eoim = 0.0f64;
        for sys in &systems {
            let pi = stationary_distribution(sys)?.measure;
            let r = pushforward_checks(sys, &pi, &rational(3), 1)?;
            sibpm = sibpm.max(r.sibpm_residual);
            eoim = eoim.max(r.eoim_residual);
        }
        Ok((
            sibpm <= 1e-10 && eoim <= 1e-10,
            format!("{} chains, max sibpm {sibpm:e}, max eoim {eoim:e}", systems.len()),
            json!({"sibpm": sibpm, "eoim": eoim}),
        ))
    })())
}

pub fn criterion_9() -> Outcome {
    outcome(9, (|| {
        let g3 = presets::g3();
        let ratio_report = contraction_ratio(&g3, 256, 9)?;
        let half = ratio(1, 2);
        let mut violations = 0;
        let mut worst = 0.0f64;
        let mut rows = 0;
        for (k, e) in g3.alphabet().symbols().enumerate() {
            let r = martingale_diagnostic(&g3, None, e, 100, 20, 90 + k as u64)?;
            violations += r.distance_violations + r.increment_violations;
            worst = worst.max(r.worst_ratio);
            rows += r.rows.len();
        }
        let lip_ok = g3.alphabet().symbols().all(|e| g3.prob_lipschitz(e) == ratio(1, 3));
        Ok((
            ratio_report.ratio == half && violations == 0 && lip_ok,
            format!(
                "contraction ratio {} over {} pairs; {rows} pasts to depth -20, {violations} bound violations, worst d/bound {worst:.3e}",
                ratio_report.ratio, ratio_report.pairs
            ),
            json!({"ratio": ratio_report.ratio.to_json(), "violations": violations, "worst": worst}),
        ))
    })())
}

pub fn criterion_10() -> Outcome {
    outcome(10, (|| {
        let g3 = presets::g3();
        let src = PhiSource::markov(g3.clone(), nu_zero(&g3));
        let sigma = CylinderSet::full(g3.alphabet(), 0);
        let est = phi_estimate(&src, &sigma, &rational(6))?;
        let half = ratio(1, 2);
        let positive = est.profile.iter().all(|(_, v)| *v >= half);
        let mut certified = true;
        for (m, v) in est.profile.iter().filter(|(m, _)| *m <= 3) {
            let oracle = phi_bruteforce(&src, &sigma, -(*m as i64), 0)?.value;
            certified &= oracle == *v;
        }
        let profile: Vec<String> = est.profile.iter().map(|(m, v)| format!("M={m}: {v}")).collect();
        Ok((
            positive && certified,
            format!(
                "profile {}; oracle agrees for M <= 3: {certified}",
                profile.join(", ")
            ),
            json!({"profile": profile, "oracle_agrees": certified}),
        ))
    })())
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteRun {
    pub outcomes: Vec<Outcome>,
    pub determinism_hash: String,
}

/// Criteria 1 to 10 and the hash of their results.
pub fn run_core() -> SuiteRun {
    let runners: [fn() -> Outcome; 10] = [
        criterion_1,
        criterion_2,
        criterion_3,
        criterion_4,
        criterion_5,
        criterion_6,
        criterion_7,
        criterion_8,
        criterion_9,
        criterion_10,
    ];
    let outcomes: Vec<Outcome> = runners.iter().map(|f| f()).collect();
    let determinism_hash = determinism_hash(&serde_json::to_value(&outcomes).expect("outcomes serialize"));
    SuiteRun {
        outcomes,
        determinism_hash,
    }
}

/// Criterion 11: a second run of criteria 1 to 10 reproduces `first`.
pub fn criterion_11(first: &SuiteRun) -> Outcome {
    let second = run_core();
    let same = second.determinism_hash == first.determinism_hash;
    Outcome {
        id: 11,
        name: NAMES[10],
        passed: same,
        detail: format!(
            "hashes {} and {}",
            &first.determinism_hash[..16],
            &second.determinism_hash[..16]
        ),
        data: json!({"first": first.determinism_hash, "second": second.determinism_hash}),
    }
}

/// The complete suite: criteria 1 to 10 followed by the determinism check.
pub fn run_all() -> Vec<Outcome> {
    let first = run_core();
    let eleven = criterion_11(&first);
    let mut out = first.outcomes;
    out.push(eleven);
    out
}
