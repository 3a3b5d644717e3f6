//! Sequence diagnostics: pairing traces with window-stability verdicts,
//! rooted-ball type distributions and their total-variation distance,
//! residual/non-dispersive tables, decomposition into weighted connected
//! parts, mass-transport checks, convex combinations of modelings, and the
//! homogeneity test behind vertex-transitive collapse.
//!
//! Every verdict here is a finite-prefix diagnostic. A trace being stable on
//! the last window says nothing about an actual limit, and the reports are
//! worded accordingly: raw values and oscillations first, threshold verdicts
//! second.

use crate::canon::{certificate_hex, CanonRecord};
use crate::error::{Error, Result};
use crate::evaluation::{stone_pairing, Evaluator};
use crate::logic::{free_variables, Formula};
use crate::rational::Rational;
use crate::structures::{
    ball, ball_measure, connected_components, gaifman_graph, induced_substructure, Structure,
};
use crate::Caps;
use num_bigint::BigInt;
use num_traits::One;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Exact pairing values of one formula along a structure sequence.
pub fn pairing_trace(
    seq: &[Structure],
    formula: &Formula,
    p: usize,
    caps: &Caps,
) -> Result<Vec<Rational>> {
    seq.iter()
        .enumerate()
        .map(|(i, a)| stone_pairing(a, formula, p, caps).map_err(|e| e.at_index(i)))
        .collect()
}

/// Trace diagnostics for one formula across the sequence.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FormulaTrace {
    pub formula: String,
    pub arity: usize,
    pub is_sentence: bool,
    /// Exact pairing per structure, in sequence order.
    pub values: Vec<Rational>,
    /// `oscillations[k]` = max − min over `values[k..]`; non-increasing.
    pub oscillations: Vec<Rational>,
    /// Oscillation over the final window.
    pub final_oscillation: Rational,
    /// Verdict: final oscillation ≤ ε. "Window-stable", not "convergent" —
    /// no finite prefix certifies a limit.
    pub window_stable: bool,
    /// For sentences only: whether the final window is constant.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eventually_constant: Option<bool>,
}

/// Window-stability diagnostics for a formula set along a sequence.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub epsilon: Rational,
    pub window: usize,
    /// First index of the final window (`len − window`).
    pub window_start: usize,
    /// Structure ids in sequence order.
    pub structures: Vec<String>,
    pub entries: Vec<FormulaTrace>,
}

/// Compute traces, suffix oscillations, and ε-stability verdicts on the
/// final window for each (formula, arity) entry.
pub fn convergence_report(
    seq: &[Structure],
    formulas: &[(Formula, usize)],
    epsilon: &Rational,
    window: usize,
    caps: &Caps,
) -> Result<ConvergenceReport> {
    if seq.is_empty() {
        return Err(Error::InvalidParams("sequence is empty".to_string()));
    }
    if window == 0 || window > seq.len() {
        return Err(Error::InvalidParams(format!(
            "window must be between 1 and the sequence length {}, got {window}",
            seq.len()
        )));
    }
    let window_start = seq.len() - window;
    let mut entries = Vec::with_capacity(formulas.len());
    for (formula, p) in formulas {
        let values = pairing_trace(seq, formula, *p, caps)?;
        // Suffix max − min, accumulated right to left.
        let mut oscillations = vec![Rational::zero(); values.len()];
        let mut max = values.last().expect("nonempty").clone();
        let mut min = max.clone();
        for k in (0..values.len()).rev() {
            if values[k] > max {
                max = values[k].clone();
            }
            if values[k] < min {
                min = values[k].clone();
            }
            oscillations[k] = &max - &min;
        }
        let final_oscillation = oscillations[window_start].clone();
        let is_sentence = free_variables(formula).is_empty();
        entries.push(FormulaTrace {
            formula: formula.to_string(),
            arity: *p,
            is_sentence,
            window_stable: final_oscillation <= *epsilon,
            eventually_constant: is_sentence
                .then(|| values[window_start..].iter().all(|v| *v == values[window_start])),
            values,
            oscillations,
            final_oscillation,
        });
    }
    Ok(ConvergenceReport {
        epsilon: epsilon.clone(),
        window,
        window_start,
        structures: seq.iter().map(|a| a.structure_id()).collect(),
        entries,
    })
}

/// Distribution of rooted r-ball isomorphism types under the structure's
/// vertex measure. Keys are canonical certificates (hex); masses sum to 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodDistribution {
    pub radius: u32,
    pub structure: String,
    pub masses: BTreeMap<String, Rational>,
}

/// For each vertex, canonicalize the substructure induced on its Gaifman
/// r-ball (rooted at the vertex) and aggregate vertex masses by type.
pub fn ball_type_distribution(
    a: &Structure,
    r: u32,
    caps: &Caps,
) -> Result<NeighborhoodDistribution> {
    let mut masses: BTreeMap<String, Rational> = BTreeMap::new();
    for v in 0..a.n {
        let ball_set = ball(a, v, r)?;
        let record = CanonRecord::of_induced(a, &ball_set, v);
        let cert = certificate_hex(&record, caps.canon)?;
        *masses.entry(cert).or_insert_with(Rational::zero) += &a.vertex_measure(v);
    }
    Ok(NeighborhoodDistribution { radius: r, structure: a.structure_id(), masses })
}

/// Total-variation distance `½ Σ |mass_A(t) − mass_B(t)|` between the two
/// r-ball type distributions.
pub fn local_distance(a: &Structure, b: &Structure, r: u32, caps: &Caps) -> Result<Rational> {
    let da = ball_type_distribution(a, r, caps)?;
    let db = ball_type_distribution(b, r, caps)?;
    let keys: BTreeSet<&String> = da.masses.keys().chain(db.masses.keys()).collect();
    let zero = Rational::zero();
    let mut total = Rational::zero();
    for key in keys {
        let ma = da.masses.get(key).unwrap_or(&zero);
        let mb = db.masses.get(key).unwrap_or(&zero);
        total += &(ma - mb).abs();
    }
    Ok(total / Rational::from_int(2))
}

/// Largest d-ball mass and the least vertex attaining it.
pub fn ball_sup_measure(a: &Structure, d: u32) -> Result<(Rational, usize)> {
    let mut best = ball_measure(a, 0, d)?;
    let mut arg = 0usize;
    for v in 1..a.n {
        let mass = ball_measure(a, v, d)?;
        if mass > best {
            best = mass;
            arg = v;
        }
    }
    Ok((best, arg))
}

/// The raw (d, n) table of largest d-ball masses along a sequence. Residual
/// sequences drive every column to 0 as d-rows are descended late in the
/// sequence; non-dispersive ones push toward 1. The table is reported as-is
/// — no limit claim is made.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DispersionReport {
    pub d_max: u32,
    /// Structure ids in sequence order (columns).
    pub structures: Vec<String>,
    /// `rows[d][i]` = largest d-ball mass in the i-th structure.
    pub rows: Vec<Vec<Rational>>,
}

pub fn dispersion_report(seq: &[Structure], d_max: u32) -> Result<DispersionReport> {
    let mut rows = Vec::with_capacity(d_max as usize + 1);
    for d in 0..=d_max {
        let mut row = Vec::with_capacity(seq.len());
        for (i, a) in seq.iter().enumerate() {
            row.push(ball_sup_measure(a, d).map_err(|e| e.at_index(i))?.0);
        }
        rows.push(row);
    }
    Ok(DispersionReport {
        d_max,
        structures: seq.iter().map(|a| a.structure_id()).collect(),
        rows,
    })
}

/// One connected part of a decomposition: the induced substructure, its mass
/// in the whole, and the original vertices it came from.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CombPart {
    pub structure: Structure,
    pub mass: Rational,
    /// Original vertex indices, ascending; `structure` re-indexes them by
    /// rank.
    pub vertices: Vec<usize>,
}

/// Decompose into connected components with their masses (sorted mass
/// descending, then least original vertex). Weighted structures yield
/// weighted parts, renormalized so each part is itself a modeling.
pub fn comb_decompose(a: &Structure) -> Result<Vec<CombPart>> {
    if !a.signature.constants.is_empty() {
        return Err(Error::SignatureMismatch(
            "constants pin vertices to one component; decomposition is not defined".to_string(),
        ));
    }
    let mut parts = Vec::new();
    for component in connected_components(a) {
        let set: BTreeSet<usize> = component.iter().copied().collect();
        let mut structure = induced_substructure(a, &set)?;
        let mass: Rational = set.iter().map(|&v| a.vertex_measure(v)).sum();
        if a.is_weighted() {
            let weights: Vec<Rational> =
                set.iter().map(|&v| a.vertex_measure(v) / &mass).collect();
            structure.weights = Some(weights);
            structure.validate()?;
        }
        parts.push(CombPart { structure, mass, vertices: set.into_iter().collect() });
    }
    parts.sort_by(|x, y| {
        y.mass.cmp(&x.mass).then_with(|| x.vertices[0].cmp(&y.vertices[0]))
    });
    Ok(parts)
}

/// Premises, pairings, and verdict of one mass-transport check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FmtpReport {
    /// Every φ-vertex has at least `a` neighbors satisfying ψ.
    pub premise_out: bool,
    /// A φ-vertex violating the first premise, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub premise_out_witness: Option<usize>,
    /// Every ψ-vertex has at most `b` neighbors satisfying φ.
    pub premise_in: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub premise_in_witness: Option<usize>,
    /// a·⟨φ⟩ and b·⟨ψ⟩.
    pub lhs: Rational,
    pub rhs: Rational,
    pub inequality: bool,
    /// True when a premise fails, making the verdict vacuous.
    pub vacuous: bool,
    /// premises → inequality.
    pub verdict: bool,
}

fn unary_satisfiers(a: &Structure, formula: &Formula) -> Result<Vec<bool>> {
    let free = free_variables(formula);
    if free != BTreeSet::from([1]) {
        let found: Vec<String> = free.iter().map(|v| format!("x{v}")).collect();
        return Err(Error::WrongFreeVariables {
            expected: "{x1}".to_string(),
            found: format!("{{{}}}", found.join(", ")),
        });
    }
    let mut ev = Evaluator::new(a, formula)?;
    (0..a.n).map(|v| ev.check(&[v])).collect()
}

fn nat_rational(x: u64) -> Rational {
    Rational::from_bigs(BigInt::from(x), BigInt::one()).expect("denominator 1")
}

/// Check the mass-transport inequality `a·⟨φ,M⟩ ≤ b·⟨ψ,M⟩` together with its
/// degree premises, evaluated semantically in M: every φ-vertex needs ≥ a
/// Gaifman neighbors satisfying ψ, every ψ-vertex at most b satisfying φ.
/// The verdict is the implication; vacuous passes are flagged.
pub fn check_fmtp(
    m: &Structure,
    phi: &Formula,
    psi: &Formula,
    a: u64,
    b: u64,
    caps: &Caps,
) -> Result<FmtpReport> {
    let in_phi = unary_satisfiers(m, phi)?;
    let in_psi = unary_satisfiers(m, psi)?;
    let gaifman = gaifman_graph(m);
    let mut premise_out = true;
    let mut premise_out_witness = None;
    let mut premise_in = true;
    let mut premise_in_witness = None;
    for v in 0..m.n {
        if in_phi[v] {
            let count = gaifman.neighbors(v).iter().filter(|&&u| in_psi[u]).count() as u64;
            if count < a && premise_out {
                premise_out = false;
                premise_out_witness = Some(v);
            }
        }
        if in_psi[v] {
            let count = gaifman.neighbors(v).iter().filter(|&&u| in_phi[u]).count() as u64;
            if count > b && premise_in {
                premise_in = false;
                premise_in_witness = Some(v);
            }
        }
    }
    let lhs = nat_rational(a) * stone_pairing(m, phi, 1, caps)?;
    let rhs = nat_rational(b) * stone_pairing(m, psi, 1, caps)?;
    let inequality = lhs <= rhs;
    let vacuous = !(premise_out && premise_in);
    Ok(FmtpReport {
        premise_out,
        premise_out_witness,
        premise_in,
        premise_in_witness,
        inequality,
        vacuous,
        verdict: vacuous || inequality,
        lhs,
        rhs,
    })
}

/// Set-level mass-transport check: premises on neighbor counts between the
/// two vertex sets, inequality on their measures.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StrongFmtpReport {
    pub premise_out: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub premise_out_witness: Option<usize>,
    pub premise_in: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub premise_in_witness: Option<usize>,
    /// a·ν(X) and b·ν(Y).
    pub lhs: Rational,
    pub rhs: Rational,
    pub inequality: bool,
    pub vacuous: bool,
    pub verdict: bool,
}

/// Check `a·ν(X) ≤ b·ν(Y)` under the premises that every X-vertex has at
/// least `a` neighbors in Y and every Y-vertex at most `b` neighbors in X.
pub fn check_strong_fmtp(
    m: &Structure,
    x: &BTreeSet<usize>,
    y: &BTreeSet<usize>,
    a: u64,
    b: u64,
) -> Result<StrongFmtpReport> {
    for &v in x.iter().chain(y.iter()) {
        if v >= m.n {
            return Err(Error::VertexOutOfRange { v, n: m.n });
        }
    }
    let gaifman = gaifman_graph(m);
    let mut premise_out = true;
    let mut premise_out_witness = None;
    for &v in x {
        let count = gaifman.neighbors(v).iter().filter(|u| y.contains(u)).count() as u64;
        if count < a {
            premise_out = false;
            premise_out_witness = Some(v);
            break;
        }
    }
    let mut premise_in = true;
    let mut premise_in_witness = None;
    for &v in y {
        let count = gaifman.neighbors(v).iter().filter(|u| x.contains(u)).count() as u64;
        if count > b {
            premise_in = false;
            premise_in_witness = Some(v);
            break;
        }
    }
    let measure = |set: &BTreeSet<usize>| set.iter().map(|&v| m.vertex_measure(v)).sum::<Rational>();
    let lhs = nat_rational(a) * measure(x);
    let rhs = nat_rational(b) * measure(y);
    let inequality = lhs <= rhs;
    let vacuous = !(premise_out && premise_in);
    Ok(StrongFmtpReport {
        premise_out,
        premise_out_witness,
        premise_in,
        premise_in_witness,
        inequality,
        vacuous,
        verdict: vacuous || inequality,
        lhs,
        rhs,
    })
}

/// Convex combination of modelings: disjoint union with vertex weights
/// `α_i · w_i(v)`. Part weights must be positive and sum to exactly 1;
/// signatures must agree and be free of constants and function symbols (a
/// constant cannot name one vertex across parts, and no total function table
/// covers cross-part tuples).
pub fn convex_combine(parts: &[(Structure, Rational)]) -> Result<Structure> {
    let (first, _) = parts
        .first()
        .ok_or_else(|| Error::InvalidParams("convex combination of zero parts".to_string()))?;
    let signature = first.signature.clone();
    if !signature.constants.is_empty() || !signature.functions.is_empty() {
        return Err(Error::SignatureMismatch(
            "convex combinations are defined for purely relational signatures".to_string(),
        ));
    }
    let total: Rational = parts.iter().map(|(_, alpha)| alpha.clone()).sum();
    if !total.is_one() {
        return Err(Error::WeightSum { got: total.to_string() });
    }
    let mut out = Structure::new(signature.clone(), 0);
    let mut weights: Vec<Rational> = Vec::new();
    for (idx, (part, alpha)) in parts.iter().enumerate() {
        if *alpha <= Rational::zero() {
            return Err(Error::InvalidParams(format!("part {idx} weight {alpha} is not positive")));
        }
        if part.signature != signature {
            return Err(Error::SignatureMismatch(format!("part {idx} uses a different signature")));
        }
        let shift = out.n;
        for (name, tuples) in &part.relations {
            let target = out.relations.entry(name.clone()).or_default();
            for t in tuples {
                target.insert(t.iter().map(|&v| v + shift).collect());
            }
        }
        for v in 0..part.n {
            weights.push(alpha * &part.vertex_measure(v));
        }
        out.n += part.n;
    }
    out.weights = Some(weights);
    out.validate()?;
    Ok(out)
}

/// A formula separating two vertices in a structure that was tested for
/// homogeneity.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HomogeneityWitness {
    pub formula: String,
    pub satisfied: usize,
    pub unsatisfied: usize,
}

/// Does every formula in the set hold on all vertices or none? Returns the
/// first separating (formula, satisfier, non-satisfier) otherwise. On
/// vertex-transitive structures this holds for every unary formula set.
pub fn homogeneity_test(
    a: &Structure,
    formulas: &[Formula],
) -> Result<(bool, Option<HomogeneityWitness>)> {
    for (i, formula) in formulas.iter().enumerate() {
        let sat = unary_satisfiers(a, formula).map_err(|e| e.at_index(i))?;
        let satisfied = sat.iter().position(|&s| s);
        let unsatisfied = sat.iter().position(|&s| !s);
        if let (Some(u), Some(v)) = (satisfied, unsatisfied) {
            return Ok((
                false,
                Some(HomogeneityWitness {
                    formula: formula.to_string(),
                    satisfied: u,
                    unsatisfied: v,
                }),
            ));
        }
    }
    Ok((true, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::parse_formula;

    fn clique(n: usize) -> Structure {
        let edges: Vec<(usize, usize)> = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .collect();
        Structure::graph(n, &edges)
    }

    fn path(n: usize) -> Structure {
        let edges: Vec<(usize, usize)> = (0..n.saturating_sub(1)).map(|u| (u, u + 1)).collect();
        Structure::graph(n, &edges)
    }

    fn cycle(n: usize) -> Structure {
        let edges: Vec<(usize, usize)> = (0..n).map(|u| (u, (u + 1) % n)).collect();
        Structure::graph(n, &edges)
    }

    fn parse(text: &str) -> Formula {
        parse_formula(text, None).unwrap()
    }

    #[test]
    fn trace_on_growing_paths() {
        let seq: Vec<Structure> = (2..=6).map(path).collect();
        let trace = pairing_trace(&seq, &parse("x1~x2"), 2, &Caps::default()).unwrap();
        let expected: Vec<Rational> = (2..=6u32)
            .map(|n| Rational::new(2 * (n as i64 - 1), (n as i64) * (n as i64)))
            .collect();
        assert_eq!(trace, expected);
    }

    #[test]
    fn sentence_traces_are_zero_one() {
        let seq: Vec<Structure> = (3..=6).map(cycle).collect();
        let sentence = parse("exists x1 exists>=3 y (y~x1)");
        let trace = pairing_trace(&seq, &sentence, 0, &Caps::default()).unwrap();
        assert_eq!(trace, vec![Rational::zero(); 4]);
    }

    #[test]
    fn report_oscillations_and_verdicts() {
        let seq: Vec<Structure> = (2..=20).map(path).collect();
        let report = convergence_report(
            &seq,
            &[(parse("x1~x2"), 2)],
            &"1/10".parse().unwrap(),
            5,
            &Caps::default(),
        )
        .unwrap();
        let entry = &report.entries[0];
        assert_eq!(entry.values.len(), 19);
        // Oscillations are non-increasing in the window start.
        for k in 1..entry.oscillations.len() {
            assert!(entry.oscillations[k - 1] >= entry.oscillations[k]);
        }
        // 2(n-1)/n² is below 1/10 from n = 16 on; the final window starts there.
        assert!(entry.window_stable);
        assert_eq!(entry.eventually_constant, None);
        assert_eq!(report.window_start, 14);
    }

    #[test]
    fn alternating_sentence_is_not_eventually_constant() {
        let k2_and_point = Structure::graph(3, &[(0, 1)]);
        let seq = vec![clique(3), k2_and_point.clone(), clique(3), k2_and_point];
        let triangle = parse("exists x1 exists x2 exists x3 (x1~x2 & x2~x3 & x1~x3)");
        let report = convergence_report(
            &seq,
            &[(triangle, 0)],
            &Rational::zero(),
            4,
            &Caps::default(),
        )
        .unwrap();
        let entry = &report.entries[0];
        assert_eq!(entry.eventually_constant, Some(false));
        assert!(!entry.window_stable);
        // A single-element window is trivially constant.
        let report = convergence_report(
            &[clique(3)],
            &[(parse("exists x1 (x1=x1)"), 0)],
            &Rational::zero(),
            1,
            &Caps::default(),
        )
        .unwrap();
        assert!(report.entries[0].window_stable);
        assert_eq!(report.entries[0].eventually_constant, Some(true));
    }

    #[test]
    fn ball_distribution_examples() {
        let caps = Caps::default();
        let d = ball_type_distribution(&cycle(5), 1, &caps).unwrap();
        assert_eq!(d.masses.len(), 1);
        assert_eq!(d.masses.values().next().unwrap(), &Rational::one());
        let d = ball_type_distribution(&path(4), 1, &caps).unwrap();
        assert_eq!(d.masses.len(), 2);
        for mass in d.masses.values() {
            assert_eq!(*mass, Rational::new(1, 2));
        }
        let d = ball_type_distribution(&clique(1), 3, &caps).unwrap();
        assert_eq!(d.masses.len(), 1);
        let total: Rational = d.masses.values().sum();
        assert!(total.is_one());
    }

    #[test]
    fn local_distance_examples() {
        let caps = Caps::default();
        assert_eq!(local_distance(&cycle(100), &cycle(101), 1, &caps).unwrap(), Rational::zero());
        for n in [10usize, 50] {
            assert_eq!(
                local_distance(&path(n), &cycle(n), 1, &caps).unwrap(),
                Rational::new(2, n as i64),
                "paths and cycles differ only at the two endpoints"
            );
        }
        assert_eq!(local_distance(&path(7), &path(7), 2, &caps).unwrap(), Rational::zero());
    }

    #[test]
    fn local_distance_triangle_inequality() {
        let caps = Caps::default();
        let (a, b, c) = (path(6), cycle(6), clique(4));
        let ab = local_distance(&a, &b, 1, &caps).unwrap();
        let bc = local_distance(&b, &c, 1, &caps).unwrap();
        let ac = local_distance(&a, &c, 1, &caps).unwrap();
        assert!(ac <= ab.clone() + bc.clone());
        assert_eq!(ab, local_distance(&b, &a, 1, &caps).unwrap());
        let _ = bc;
    }

    #[test]
    fn ball_sup_measure_examples() {
        // K3 ⊔ K2: the larger component fills its 1-ball.
        let a = Structure::graph(5, &[(0, 1), (0, 2), (1, 2), (3, 4)]);
        assert_eq!(ball_sup_measure(&a, 1).unwrap(), (Rational::new(3, 5), 0));
        assert_eq!(ball_sup_measure(&clique(4), 1).unwrap(), (Rational::one(), 0));
        let edgeless = Structure::graph(4, &[]);
        assert_eq!(ball_sup_measure(&edgeless, 1).unwrap(), (Rational::new(1, 4), 0));
    }

    #[test]
    fn dispersion_table_on_disjoint_edges() {
        // Sequences of m disjoint edges disperse: the largest 1-ball has
        // mass 1/m.
        let seq: Vec<Structure> = (1..=4)
            .map(|m| {
                let edges: Vec<(usize, usize)> = (0..m).map(|i| (2 * i, 2 * i + 1)).collect();
                Structure::graph(2 * m, &edges)
            })
            .collect();
        let report = dispersion_report(&seq, 1).unwrap();
        assert_eq!(report.rows.len(), 2);
        let expected: Vec<Rational> = (1..=4).map(|m| Rational::new(1, m)).collect();
        assert_eq!(report.rows[1], expected);
        // d = 0 rows are single-vertex masses.
        assert_eq!(report.rows[0][3], Rational::new(1, 8));
    }

    #[test]
    fn comb_decomposition_examples() {
        let a = Structure::graph(5, &[(3, 4), (0, 1), (0, 2), (1, 2)]);
        let parts = comb_decompose(&a).unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].mass, Rational::new(3, 5));
        assert_eq!(parts[0].structure, clique(3));
        assert_eq!(parts[1].mass, Rational::new(2, 5));
        assert_eq!(parts[1].vertices, vec![3, 4]);
        let single = comb_decompose(&cycle(4)).unwrap();
        assert_eq!(single.len(), 1);
        assert!(single[0].mass.is_one());
        let edgeless = comb_decompose(&Structure::graph(3, &[])).unwrap();
        assert_eq!(edgeless.len(), 3);
        assert!(edgeless.iter().all(|p| p.mass == Rational::new(1, 3)));
    }

    #[test]
    fn comb_masses_match_reassembly() {
        let a = Structure::graph(5, &[(0, 1), (0, 2), (1, 2), (3, 4)]);
        let parts = comb_decompose(&a).unwrap();
        let recombined = convex_combine(
            &parts.iter().map(|p| (p.structure.clone(), p.mass.clone())).collect::<Vec<_>>(),
        )
        .unwrap();
        let caps = Caps::default();
        // Unary guarded-local pairings survive reassembly exactly.
        for text in ["exists y (dist(x1,y)<=1 & y~x1)", "exists>=2 y (dist(x1,y)<=1 & y~x1)"] {
            let f = parse(text);
            let direct = stone_pairing(&a, &f, 1, &caps).unwrap();
            let via = stone_pairing(&recombined, &f, 1, &caps).unwrap();
            assert_eq!(direct, via);
        }
    }

    fn star() -> Structure {
        Structure::graph(4, &[(0, 1), (0, 2), (0, 3)])
    }

    fn weighted_star() -> Structure {
        let mut s = star();
        s.weights = Some(vec![
            Rational::new(1, 2),
            Rational::new(1, 6),
            Rational::new(1, 6),
            Rational::new(1, 6),
        ]);
        s.validate().unwrap();
        s
    }

    #[test]
    fn fmtp_star_examples() {
        let caps = Caps::default();
        let center = parse("exists>=3 y (y~x1)");
        let leaf = parse("exists<=1 y (y~x1)");
        let report = check_fmtp(&star(), &center, &leaf, 3, 1, &caps).unwrap();
        assert!(report.premise_out && report.premise_in);
        assert!(!report.vacuous);
        assert_eq!(report.lhs, Rational::new(3, 4));
        assert_eq!(report.rhs, Rational::new(3, 4));
        assert!(report.inequality && report.verdict);
        // The weighted star breaks the inequality: 3·(1/2) > 1·(1/2).
        let report = check_fmtp(&weighted_star(), &center, &leaf, 3, 1, &caps).unwrap();
        assert!(report.premise_out && report.premise_in);
        assert_eq!(report.lhs, Rational::new(3, 2));
        assert_eq!(report.rhs, Rational::new(1, 2));
        assert!(!report.inequality && !report.verdict && !report.vacuous);
        // a = 0 premises trivially, inequality 0 ≤ rhs.
        let report = check_fmtp(&star(), &center, &leaf, 0, 1, &caps).unwrap();
        assert!(report.verdict);
    }

    #[test]
    fn fmtp_vacuous_flag() {
        let caps = Caps::default();
        // No vertex of K3 has 5 neighbors, so the premise fails on φ = ⊤.
        let report =
            check_fmtp(&clique(3), &parse("x1=x1"), &parse("x1=x1"), 5, 0, &caps).unwrap();
        assert!(!report.premise_out);
        assert_eq!(report.premise_out_witness, Some(0));
        assert!(report.vacuous);
        assert!(report.verdict, "a failed premise passes vacuously");
        assert!(!report.inequality);
    }

    #[test]
    fn strong_fmtp_examples() {
        let x = BTreeSet::from([0]);
        let y = BTreeSet::from([1, 2, 3]);
        let report = check_strong_fmtp(&star(), &x, &y, 3, 1).unwrap();
        assert!(report.premise_out && report.premise_in && report.inequality && report.verdict);
        assert_eq!(report.lhs, report.rhs);
        let report = check_strong_fmtp(&star(), &BTreeSet::new(), &y, 7, 0).unwrap();
        assert!(report.premise_out, "empty X has no premise violations");
        assert!(report.verdict);
        let report = check_strong_fmtp(&weighted_star(), &x, &y, 3, 1).unwrap();
        assert!(!report.inequality && !report.verdict);
        assert!(matches!(
            check_strong_fmtp(&star(), &BTreeSet::from([9]), &y, 1, 1),
            Err(Error::VertexOutOfRange { v: 9, .. })
        ));
    }

    #[test]
    fn convex_combination_examples() {
        let half = Rational::new(1, 2);
        let combined =
            convex_combine(&[(clique(1), half.clone()), (clique(1), half.clone())]).unwrap();
        assert_eq!(combined.n, 2);
        assert_eq!(combined.vertex_measure(0), half);
        // Weights must sum to one.
        assert!(matches!(
            convex_combine(&[(clique(1), Rational::new(3, 4))]),
            Err(Error::WeightSum { .. })
        ));
        // Linearity of unary pairings over parts.
        let caps = Caps::default();
        let f = parse("exists y (dist(x1,y)<=1 & y~x1)");
        let parts = [(cycle(4), Rational::new(1, 3)), (path(3), Rational::new(2, 3))];
        let combined = convex_combine(&parts).unwrap();
        let lhs = stone_pairing(&combined, &f, 1, &caps).unwrap();
        let rhs = parts
            .iter()
            .map(|(h, alpha)| alpha * &stone_pairing(h, &f, 1, &caps).unwrap())
            .sum::<Rational>();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn homogeneity_examples() {
        let deg2 = parse("exists>=2 y (y~x1)");
        let (ok, witness) = homogeneity_test(&cycle(5), &[deg2.clone()]).unwrap();
        assert!(ok && witness.is_none());
        let (ok, witness) = homogeneity_test(&path(3), &[deg2]).unwrap();
        assert!(!ok);
        let w = witness.unwrap();
        assert_eq!(w.satisfied, 1);
        assert_eq!(w.unsatisfied, 0);
        let (ok, _) = homogeneity_test(&path(3), &[]).unwrap();
        assert!(ok);
    }
}
