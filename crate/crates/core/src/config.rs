//! TOML system files, embedded presets and initial-distribution specs.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::BigRational;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::path::PeriodicDirac;
use crate::scalar::{parse_rational, rational_from_decimal_f64, Scalar};
use crate::shift::Alphabet;
use crate::system::{
    nu_prime, nu_zero, stationary_distribution, Edge, EdgeMap, EdgeProb, FiniteSpace, IntervalSpace,
    MarkovSystem, Point, PointMeasure, StateSpace,
};

/// A number written as a string (`"7/10"`, `"0.7"`) or a TOML number.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Num {
    Text(String),
    Int(i64),
    Float(f64),
}

impl Num {
    fn exact(&self) -> Result<BigRational> {
        match self {
            Num::Text(s) => parse_rational(s),
            Num::Int(i) => Ok(BigRational::from_integer((*i).into())),
            Num::Float(x) => rational_from_decimal_f64(*x),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    contraction_constant: Option<Num>,
    space: Option<RawSpace>,
    #[serde(default)]
    edge: Vec<RawEdge>,
    base_points: Option<RawBase>,
    measure: Option<RawMeasure>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpace {
    kind: String,
    points: Option<Vec<String>>,
    metric: Option<Vec<Vec<Num>>>,
    partition: Option<Vec<usize>>,
    bounds: Option<Vec<Num>>,
    cuts: Option<Vec<Num>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdge {
    symbol: String,
    source: usize,
    target: usize,
    map: toml::Value,
    prob: toml::Value,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBase {
    points: Option<Vec<String>>,
    values: Option<Vec<Num>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeasure {
    kind: String,
    alphabet: Vec<String>,
    pattern: Vec<String>,
    #[serde(default)]
    phase: i64,
}

/// A loaded system: a Markov system or a directly specified `phi_0`.
#[derive(Debug, Clone)]
pub enum SystemSpec {
    Markov(MarkovSystem<BigRational>),
    Dirac(PeriodicDirac),
}

impl SystemSpec {
    pub fn alphabet(&self) -> &Alphabet {
        match self {
            SystemSpec::Markov(s) => s.alphabet(),
            SystemSpec::Dirac(d) => d.alphabet(),
        }
    }

    pub fn into_markov(self) -> Result<MarkovSystem<BigRational>> {
        match self {
            SystemSpec::Markov(s) => Ok(s),
            SystemSpec::Dirac(_) => Err(Error::Unsupported(
                "a measure-mode preset has no Markov system".into(),
            )),
        }
    }

    pub fn as_markov(&self) -> Option<&MarkovSystem<BigRational>> {
        match self {
            SystemSpec::Markov(s) => Some(s),
            SystemSpec::Dirac(_) => None,
        }
    }
}

fn value_num(v: &toml::Value, what: &str) -> Result<BigRational> {
    match v {
        toml::Value::String(s) => parse_rational(s),
        toml::Value::Integer(i) => Ok(BigRational::from_integer((*i).into())),
        toml::Value::Float(x) => rational_from_decimal_f64(*x),
        other => Err(Error::Config(format!("{what}: expected a number, found {}", other.type_str()))),
    }
}

/// Parses a system file. Syntax errors carry TOML line/column information.
pub fn parse_system(text: &str) -> Result<SystemSpec> {
    let raw: RawFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(m) = raw.measure {
        if raw.space.is_some() || !raw.edge.is_empty() {
            return Err(Error::Config("`[measure]` cannot be combined with `[space]`/`[[edge]]`".into()));
        }
        if m.kind != "periodic-dirac" {
            return Err(Error::Config(format!("unknown measure kind `{}`", m.kind)));
        }
        let alphabet = Alphabet::new(m.alphabet)?;
        let pattern = m
            .pattern
            .iter()
            .map(|s| alphabet.symbol(s))
            .collect::<Result<Vec<_>>>()?;
        return Ok(SystemSpec::Dirac(PeriodicDirac::new(alphabet, pattern, m.phase)?));
    }
    let space = raw.space.ok_or_else(|| Error::Config("missing `[space]` table".into()))?;
    if raw.edge.is_empty() {
        return Err(Error::Config("no `[[edge]]` blocks".into()));
    }
    let alphabet = Alphabet::new(raw.edge.iter().map(|e| e.symbol.clone()))?;
    let contraction = raw.contraction_constant.as_ref().map(Num::exact).transpose()?;
    let zero_based = |n: usize, key: &str, sym: &str| {
        n.checked_sub(1)
            .ok_or_else(|| Error::Config(format!("edge `{sym}`: `{key}` states are numbered from 1")))
    };

    match space.kind.as_str() {
        "finite" => {
            let labels = space
                .points
                .ok_or_else(|| Error::Config("finite space: missing key `points`".into()))?;
            let n = labels.len();
            let index: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
            if index.len() != n {
                return Err(Error::Config("finite space: duplicate point labels".into()));
            }
            let site = |label: &str| {
                index
                    .get(label)
                    .copied()
                    .ok_or_else(|| Error::Config(format!("unknown point `{label}`")))
            };
            let metric = match space.metric {
                Some(rows) => rows
                    .iter()
                    .map(|r| r.iter().map(Num::exact).collect::<Result<Vec<_>>>())
                    .collect::<Result<Vec<_>>>()?,
                None => (0..n)
                    .map(|i| {
                        (0..n)
                            .map(|j| BigRational::from_integer(((i != j) as i64).into()))
                            .collect()
                    })
                    .collect(),
            };
            let cell_of = match space.partition {
                Some(p) => p
                    .iter()
                    .map(|&c| {
                        c.checked_sub(1)
                            .ok_or_else(|| Error::Config("partition: states are numbered from 1".into()))
                    })
                    .collect::<Result<Vec<_>>>()?,
                None => (0..n).collect(),
            };
            let mut edges = Vec::with_capacity(raw.edge.len());
            for e in &raw.edge {
                let source = zero_based(e.source, "source", &e.symbol)?;
                let target = zero_based(e.target, "target", &e.symbol)?;
                let table = |v: &toml::Value, key: &str| -> Result<Vec<(usize, toml::Value)>> {
                    let t = v.as_table().ok_or_else(|| {
                        Error::Config(format!("edge `{}`: `{key}` must be a table keyed by point", e.symbol))
                    })?;
                    t.iter().map(|(k, v)| Ok((site(k)?, v.clone()))).collect()
                };
                let mut map = vec![None; n];
                for (x, v) in table(&e.map, "map")? {
                    let label = v.as_str().ok_or_else(|| {
                        Error::Config(format!("edge `{}`: map values must be point labels", e.symbol))
                    })?;
                    map[x] = Some(site(label)?);
                }
                let mut prob = vec![BigRational::from_integer(0.into()); n];
                for (x, v) in table(&e.prob, "prob")? {
                    prob[x] = value_num(&v, &format!("edge `{}` prob", e.symbol))?;
                }
                edges.push(Edge {
                    source,
                    target,
                    map: EdgeMap::Table(map),
                    prob: EdgeProb::Table(prob),
                });
            }
            let n_cells = cell_of.iter().copied().max().map_or(0, |m| m + 1);
            let base_points = match raw.base_points.and_then(|b| b.points) {
                Some(pts) => pts.iter().map(|l| site(l).map(Point::Site)).collect::<Result<Vec<_>>>()?,
                None => (0..n_cells)
                    .map(|c| {
                        cell_of
                            .iter()
                            .position(|&k| k == c)
                            .map(Point::Site)
                            .ok_or_else(|| Error::Config(format!("state {} has no points", c + 1)))
                    })
                    .collect::<Result<Vec<_>>>()?,
            };
            let space = StateSpace::Finite(FiniteSpace { labels, metric, cell_of });
            Ok(SystemSpec::Markov(MarkovSystem::new(alphabet, space, edges, base_points, contraction)?))
        }
        "interval" => {
            let bounds = space
                .bounds
                .ok_or_else(|| Error::Config("interval space: missing key `bounds`".into()))?;
            if bounds.len() != 2 {
                return Err(Error::Config("interval space: `bounds` needs [lo, hi]".into()));
            }
            let mut breaks = vec![bounds[0].exact()?];
            for c in space.cuts.unwrap_or_default() {
                breaks.push(c.exact()?);
            }
            breaks.push(bounds[1].exact()?);
            let mut edges = Vec::with_capacity(raw.edge.len());
            for e in &raw.edge {
                let source = zero_based(e.source, "source", &e.symbol)?;
                let target = zero_based(e.target, "target", &e.symbol)?;
                let what = format!("edge `{}`", e.symbol);
                let map = e
                    .map
                    .as_table()
                    .ok_or_else(|| Error::Config(format!("{what}: `map` must be {{ slope, intercept }}")))?;
                let field = |k: &str| {
                    map.get(k)
                        .ok_or_else(|| Error::Config(format!("{what}: map is missing key `{k}`")))
                        .and_then(|v| value_num(v, &what))
                };
                let coeffs = match &e.prob {
                    toml::Value::Array(a) => a.iter().map(|v| value_num(v, &what)).collect::<Result<Vec<_>>>()?,
                    v => vec![value_num(v, &what)?],
                };
                edges.push(Edge {
                    source,
                    target,
                    map: EdgeMap::Affine {
                        slope: field("slope")?,
                        intercept: field("intercept")?,
                    },
                    prob: EdgeProb::Poly(coeffs),
                });
            }
            let base_points = match raw.base_points.and_then(|b| b.values) {
                Some(v) => v.iter().map(|x| x.exact().map(Point::Real)).collect::<Result<Vec<_>>>()?,
                None => breaks[..breaks.len() - 1].iter().cloned().map(Point::Real).collect(),
            };
            let space = StateSpace::Interval(IntervalSpace { breaks });
            Ok(SystemSpec::Markov(MarkovSystem::new(alphabet, space, edges, base_points, contraction)?))
        }
        other => Err(Error::Config(format!("unknown space kind `{other}`"))),
    }
}

pub const PRESET_NAMES: [&str; 3] = ["g1", "g2", "g3"];

pub fn preset_source(name: &str) -> Result<&'static str> {
    match name {
        "g1" => Ok(include_str!("../presets/g1.toml")),
        "g2" => Ok(include_str!("../presets/g2.toml")),
        "g3" => Ok(include_str!("../presets/g3.toml")),
        other => Err(Error::Config(format!(
            "unknown preset `{other}` (known: {})",
            PRESET_NAMES.join(", ")
        ))),
    }
}

pub fn preset(name: &str) -> Result<SystemSpec> {
    parse_system(preset_source(name)?)
}

/// How the initial distribution `nu` is chosen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InitialSpec {
    /// Uniform over the base points.
    NuZero,
    /// Uniform over the base points of the listed (1-based) states.
    NuPrime(BTreeSet<usize>),
    /// Point mass at a labeled point or real number.
    Dirac(String),
    Stationary,
    /// Atoms read from a TOML file with `atoms = [[point, weight], ...]`.
    File(String),
}

impl std::str::FromStr for InitialSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "nu0" {
            return Ok(InitialSpec::NuZero);
        }
        if s == "stationary" {
            return Ok(InitialSpec::Stationary);
        }
        if let Some(rest) = s.strip_prefix("nuprime:") {
            let states = rest
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<usize>()
                        .ok()
                        .filter(|&n| n >= 1)
                        .ok_or_else(|| Error::Config(format!("bad state `{t}` in `{s}`")))
                })
                .collect::<Result<BTreeSet<_>>>()?;
            return Ok(InitialSpec::NuPrime(states));
        }
        if let Some(rest) = s.strip_prefix("dirac:") {
            return Ok(InitialSpec::Dirac(rest.trim().to_string()));
        }
        if let Some(rest) = s.strip_prefix("file:") {
            return Ok(InitialSpec::File(rest.trim().to_string()));
        }
        Err(Error::Config(format!(
            "unknown initial distribution `{s}` (nu0, nuprime:<states>, dirac:<point>, stationary, file:<path>)"
        )))
    }
}

impl std::fmt::Display for InitialSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InitialSpec::NuZero => write!(f, "nu0"),
            InitialSpec::NuPrime(s) => {
                let parts: Vec<String> = s.iter().map(|n| n.to_string()).collect();
                write!(f, "nuprime:{}", parts.join(","))
            }
            InitialSpec::Dirac(p) => write!(f, "dirac:{p}"),
            InitialSpec::Stationary => write!(f, "stationary"),
            InitialSpec::File(p) => write!(f, "file:{p}"),
        }
    }
}

fn parse_point(sys: &MarkovSystem<BigRational>, text: &str) -> Result<Point<BigRational>> {
    if sys.is_finite() {
        sys.site(text)
    } else {
        Ok(Point::Real(parse_rational(text)?))
    }
}

/// Resolves an initial distribution exactly.
pub fn initial_measure(
    sys: &MarkovSystem<BigRational>,
    spec: &InitialSpec,
) -> Result<PointMeasure<BigRational>> {
    match spec {
        InitialSpec::NuZero => Ok(nu_zero(sys)),
        InitialSpec::NuPrime(states) => nu_prime(sys, &states.iter().map(|s| s - 1).collect()),
        InitialSpec::Dirac(p) => {
            let x = parse_point(sys, p)?;
            if sys.cell_of(&x).is_none() {
                return Err(Error::OutsideCells(p.clone()));
            }
            Ok(PointMeasure::dirac(x))
        }
        InitialSpec::Stationary => Ok(stationary_distribution(sys)?.measure),
        InitialSpec::File(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read `{path}`: {e}")))?;
            parse_measure(sys, &text)
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAtoms {
    atoms: Vec<(String, Num)>,
}

/// `atoms = [["1", "1/2"], ["2", "1/2"]]`.
pub fn parse_measure(sys: &MarkovSystem<BigRational>, text: &str) -> Result<PointMeasure<BigRational>> {
    let raw: RawAtoms = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let atoms = raw
        .atoms
        .iter()
        .map(|(p, w)| Ok((parse_point(sys, p)?, w.exact()?)))
        .collect::<Result<Vec<_>>>()?;
    let mu = PointMeasure::new(atoms)?;
    for (x, _) in mu.atoms() {
        if sys.cell_of(x).is_none() {
            return Err(Error::OutsideCells(sys.point_label(x)));
        }
    }
    Ok(mu)
}

/// Exact values converted for the chosen arithmetic.
pub fn to_scalar_measure<T: Scalar>(mu: &PointMeasure<BigRational>) -> PointMeasure<T> {
    mu.convert(|r| T::from_rational(r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::ratio;

    #[test]
    fn presets_load() {
        for name in PRESET_NAMES {
            preset(name).unwrap();
        }
        let g1 = preset("g1").unwrap().into_markov().unwrap();
        assert_eq!(g1.alphabet().names(), &["e11", "e12", "e21", "e22"]);
        assert!(g1.is_finite_chain());
        assert!(matches!(preset("g2").unwrap(), SystemSpec::Dirac(_)));
        let g3 = preset("g3").unwrap().into_markov().unwrap();
        assert_eq!(g3.contraction_constant(), Some(&ratio(3, 5)));
    }

    #[test]
    fn missing_prob_names_the_key() {
        let src = r#"
            [space]
            kind = "finite"
            points = ["a"]
            [[edge]]
            symbol = "x"
            source = 1
            target = 1
            map = { a = "a" }
        "#;
        let err = parse_system(src).unwrap_err().to_string();
        assert!(err.contains("prob"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn toml_numbers_are_read_as_decimals() {
        let src = r#"
            [space]
            kind = "finite"
            points = ["a"]
            [[edge]]
            symbol = "x"
            source = 1
            target = 1
            map = { a = "a" }
            prob = { a = 1.0 }
        "#;
        let sys = parse_system(src).unwrap().into_markov().unwrap();
        assert_eq!(sys.prob(crate::shift::Symbol(0), &Point::Site(0)).unwrap(), ratio(1, 1));
    }

    #[test]
    fn initial_specs_round_trip() {
        for s in ["nu0", "nuprime:1,2", "dirac:1", "stationary", "file:x.toml"] {
            let spec: InitialSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        assert!("nuprime:0".parse::<InitialSpec>().is_err());
    }

    #[test]
    fn measure_files() {
        let g1 = preset("g1").unwrap().into_markov().unwrap();
        let mu = parse_measure(&g1, r#"atoms = [["1", "1/4"], ["2", 0.75]]"#).unwrap();
        assert_eq!(mu.total(), ratio(1, 1));
        assert!(parse_measure(&g1, r#"atoms = [["9", "1"]]"#).is_err());
    }
}
