//! End-to-end use of the public API: presets, initial distributions, the
//! outer measure with its certificate, coding, and the equilibrium report.

use ddm_core::coding::{coding_point, cond_exp_fm};
use ddm_core::config::{initial_measure, parse_measure, preset, to_scalar_measure, InitialSpec};
use ddm_core::equilibrium::{entropy_exact, pushforward_checks};
use ddm_core::oracle::phi_bruteforce;
use ddm_core::outer::{phi_estimate, verify_cover, CoverParams};
use ddm_core::path::PhiSource;
use ddm_core::scalar::ratio;
use ddm_core::system::{stationary_distribution, Point};
use ddm_core::{Arith, CylinderSet, MarkovSystem, PointMeasure};
use num_rational::BigRational;

fn g1() -> MarkovSystem<BigRational> {
    preset("g1").unwrap().into_markov().unwrap()
}

fn exact(depth: usize) -> CoverParams {
    CoverParams {
        past_depth: depth,
        arith: Arith::Rational,
        ..CoverParams::default()
    }
}

#[test]
fn g1_stationary_law_is_four_sevenths() {
    let sys = g1();
    let st = stationary_distribution(&sys).unwrap();
    assert!(st.unique);
    let one = sys.site("1").unwrap();
    assert_eq!(st.measure.weight_at(&one), ratio(4, 7));
    let spec: InitialSpec = "stationary".parse().unwrap();
    assert_eq!(initial_measure(&sys, &spec).unwrap(), st.measure);
}

#[test]
fn certificates_check_out_for_a_non_stationary_start() {
    let sys = g1();
    let nu = initial_measure(&sys, &"dirac:2".parse().unwrap()).unwrap();
    let src = PhiSource::markov(sys, nu);
    let q = CylinderSet::parse(src.alphabet(), "m=0;w=e11|m=-1;w=e21,e12").unwrap();
    let est = phi_estimate(&src, &q, &exact(3)).unwrap();
    let cover = est.optimal_cover.as_ref().expect("small certificate");
    assert!(verify_cover(&src, &q, cover, &est.value).unwrap().is_valid());
    let oracle = phi_bruteforce(&src, &q, -3, 0).unwrap();
    assert_eq!(oracle.value, est.value);
    assert!(est.profile.windows(2).all(|w| w[1].1 <= w[0].1));
}

#[test]
fn measure_files_and_float_conversion_agree() {
    let sys = g1();
    let nu = parse_measure(&sys, r#"atoms = [["1", "1/4"], ["2", 0.75]]"#).unwrap();
    assert_eq!(nu.total(), ratio(1, 1));
    let exact_src = PhiSource::markov(sys.clone(), nu.clone());
    let float_src = PhiSource::markov(sys.convert(ddm_core::Scalar::to_f64), to_scalar_measure::<f64>(&nu));
    let q = CylinderSet::full(exact_src.alphabet(), 0);
    let a = phi_estimate(&exact_src, &q, &exact(4)).unwrap().value;
    let b = phi_estimate(&float_src, &q, &exact(4)).unwrap().value;
    assert!((ddm_core::Scalar::to_f64(&a) - b).abs() < 1e-12);
}

#[test]
fn coding_and_conditional_expectation_on_g1() {
    let sys = g1();
    let a = sys.alphabet().clone();
    let word = a.word("e11,e12").unwrap();
    let c = coding_point(&sys, &word).unwrap();
    assert_eq!(c.point, Point::Site(1));
    let nu: PointMeasure<BigRational> = stationary_distribution(&sys).unwrap().measure;
    let e21 = a.symbol("e21").unwrap();
    let ce = cond_exp_fm(&sys, &nu, e21, &word).unwrap();
    assert_eq!(ce.formula, ratio(2, 5));
    assert_eq!(ce.ratio, Some(ratio(2, 5)));
    assert_eq!(ce.row_sum, ratio(1, 1));
}

#[test]
fn equilibrium_and_pushforward_on_the_stationary_chain() {
    let sys = g1();
    let nu = stationary_distribution(&sys).unwrap().measure;
    let eq = entropy_exact(&sys, &nu).unwrap();
    assert!(eq.residual.abs() <= 1e-12);
    assert!((eq.entropy - eq.entropy_closed_form).abs() <= 1e-12);
    let push = pushforward_checks(&sys, &nu, &exact(2), 1).unwrap();
    assert!(push.certified && push.coding_exact);
    assert_eq!(push.sibpm_residual, 0.0);
    let masses: Vec<f64> = push.coded_measure.iter().map(|(_, w)| *w).collect();
    assert!((masses[0] - 4.0 / 7.0).abs() < 1e-15);
}
