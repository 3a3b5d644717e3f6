//! Homomorphism counting and densities, the quantum-graph algebra (formal
//! rational combinations of graphs with disjoint union as product), corpus
//! sup-norms, and density-matrix ranks.
//!
//! The density `t(F,G) = hom(F,G) / |G|^|F|` is the probability that a
//! uniformly random map V(F) → V(G) preserves adjacency. For the
//! quantifier-free, equality-free conjunction produced by
//! [`canonical_formula`], the pairing of that formula with `G` equals
//! `t(F,G)` exactly — the two engines cross-check each other.

use crate::canon::{certificate, CanonRecord};
use crate::error::{Error, Result};
use crate::logic::{Formula, Term};
use crate::rational::Rational;
use crate::structures::{disjoint_union, Structure};
use crate::Caps;
use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Degeneracy order: repeatedly remove a minimum-degree vertex (ties broken
/// by least index); the removal sequence is the backtracking order.
fn degeneracy_order(adj: &[std::collections::BTreeSet<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut degree: Vec<usize> = adj.iter().map(|s| s.len()).collect();
    let mut removed = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let v = (0..n)
            .filter(|&v| !removed[v])
            .min_by_key(|&v| (degree[v], v))
            .expect("vertices remain");
        removed[v] = true;
        order.push(v);
        for &u in &adj[v] {
            if !removed[u] {
                degree[u] -= 1;
            }
        }
    }
    order
}

/// Exact number of adjacency-preserving maps V(F) → V(G), counted by
/// backtracking over F's vertices in degeneracy order.
pub fn hom_count(f: &Structure, g: &Structure, caps: &Caps) -> Result<BigUint> {
    let f_adj = f.simple_graph_adjacency()?;
    let g_adj = g.simple_graph_adjacency()?;
    let search_space = (g.n as u128)
        .checked_pow(f.n as u32)
        .ok_or(Error::CapExceeded { needed: u128::MAX, cap: caps.tuples })?;
    if search_space > caps.tuples as u128 {
        return Err(Error::CapExceeded { needed: search_space, cap: caps.tuples });
    }
    let order = degeneracy_order(&f_adj);
    // Neighbors of each order[i] already placed when position i is reached.
    let mut position = vec![0usize; f.n];
    for (i, &v) in order.iter().enumerate() {
        position[v] = i;
    }
    let placed_neighbors: Vec<Vec<usize>> = order
        .iter()
        .map(|&v| f_adj[v].iter().copied().filter(|&u| position[u] < position[v]).collect())
        .collect();

    fn extend(
        pos: usize,
        order: &[usize],
        placed_neighbors: &[Vec<usize>],
        g_adj: &[std::collections::BTreeSet<usize>],
        image: &mut [usize],
    ) -> BigUint {
        if pos == order.len() {
            return BigUint::one();
        }
        let v = order[pos];
        let mut total = BigUint::zero();
        for w in 0..g_adj.len() {
            if placed_neighbors[pos].iter().all(|&u| g_adj[image[u]].contains(&w)) {
                image[v] = w;
                total += extend(pos + 1, order, placed_neighbors, g_adj, image);
            }
        }
        total
    }

    let mut image = vec![0usize; f.n];
    Ok(extend(0, &order, &placed_neighbors, &g_adj, &mut image))
}

/// Homomorphism density `t(F,G) = hom(F,G) / |G|^|F|`.
pub fn hom_density(f: &Structure, g: &Structure, caps: &Caps) -> Result<Rational> {
    let count = hom_count(f, g, caps)?;
    let total = BigInt::from(g.n).pow(f.n as u32);
    Rational::from_bigs(BigInt::from(count), total)
}

/// The quantifier-free, equality-free conjunction `⋀ xi ~ xj` over the edges
/// of F (vertices shifted to 1-based variable indices); the empty graph gives
/// the constant true formula. Its pairing with any graph G at arity |F|
/// equals `t(F,G)`.
pub fn canonical_formula(f: &Structure) -> Result<Formula> {
    let adj = f.simple_graph_adjacency()?;
    let edge = f.signature.edge_relation()?.to_string();
    let mut conjuncts = Vec::new();
    for u in 0..f.n {
        for &v in adj[u].iter().filter(|&&v| v > u) {
            conjuncts.push(Formula::Rel(
                edge.clone(),
                vec![Term::Var(u as u32 + 1), Term::Var(v as u32 + 1)],
            ));
        }
    }
    Ok(conjuncts
        .into_iter()
        .reduce(|acc, c| Formula::And(Box::new(acc), Box::new(c)))
        .unwrap_or(Formula::True))
}

fn is_single_vertex(g: &Structure) -> bool {
    g.n == 1 && g.relations.values().all(|tuples| tuples.is_empty())
}

/// A formal rational linear combination of graphs, kept canonical: no zero
/// coefficients, no two isomorphic term graphs, and every term graph either
/// the single vertex or free of isolated vertices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantumGraph {
    /// (coefficient, graph) pairs ordered by the graphs' canonical
    /// certificates.
    terms: Vec<(Rational, Structure)>,
}

#[derive(Serialize, Deserialize)]
struct QgTermRepr {
    coef: Rational,
    graph: Structure,
}

#[derive(Serialize, Deserialize)]
struct QgRepr {
    terms: Vec<QgTermRepr>,
}

impl Serialize for QuantumGraph {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = QgRepr {
            terms: self
                .terms
                .iter()
                .map(|(coef, graph)| QgTermRepr { coef: coef.clone(), graph: graph.clone() })
                .collect(),
        };
        repr.serialize(serializer)
    }
}

impl QuantumGraph {
    /// The zero element (empty combination).
    pub fn zero() -> Self {
        QuantumGraph { terms: Vec::new() }
    }

    /// Canonicalize a raw term list: validate each graph against the basis
    /// convention, merge isomorphic graphs by summing coefficients, drop
    /// zeros, and order terms deterministically.
    pub fn new(raw: Vec<(Rational, Structure)>, caps: &Caps) -> Result<Self> {
        let mut merged: BTreeMap<Vec<u8>, (Rational, Structure)> = BTreeMap::new();
        for (coef, graph) in raw {
            let adj = graph.simple_graph_adjacency()?;
            if !is_single_vertex(&graph) && adj.iter().any(|nbrs| nbrs.is_empty()) {
                return Err(Error::NotBasisGraph(format!(
                    "graph on {} vertices has an isolated vertex (only the single vertex or \
                     isolated-vertex-free graphs are basis elements)",
                    graph.n
                )));
            }
            let cert = certificate(&CanonRecord::of_structure(&graph, None), caps.canon)?;
            match merged.get_mut(&cert) {
                Some((total, _)) => *total += &coef,
                None => {
                    merged.insert(cert, (coef, graph));
                }
            }
        }
        let terms = merged
            .into_values()
            .filter(|(coef, _)| !coef.is_zero())
            .collect();
        Ok(QuantumGraph { terms })
    }

    /// A single-term combination.
    pub fn single(coef: Rational, graph: Structure, caps: &Caps) -> Result<Self> {
        QuantumGraph::new(vec![(coef, graph)], caps)
    }

    pub fn terms(&self) -> &[(Rational, Structure)] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Linear combination: sum of the two term lists, re-canonicalized.
    pub fn add(&self, other: &QuantumGraph, caps: &Caps) -> Result<QuantumGraph> {
        let mut raw = self.terms.clone();
        raw.extend(other.terms.iter().cloned());
        QuantumGraph::new(raw, caps)
    }

    /// Scalar multiple; scaling by zero gives the zero element.
    pub fn scale(&self, c: &Rational) -> QuantumGraph {
        if c.is_zero() {
            return QuantumGraph::zero();
        }
        QuantumGraph {
            terms: self.terms.iter().map(|(coef, g)| (coef * c, g.clone())).collect(),
        }
    }

    /// Bilinear product: term graphs multiply by disjoint union, with the
    /// single vertex acting as the unit.
    pub fn mul(&self, other: &QuantumGraph, caps: &Caps) -> Result<QuantumGraph> {
        let mut raw = Vec::new();
        for (c1, g1) in &self.terms {
            for (c2, g2) in &other.terms {
                let product = if is_single_vertex(g1) {
                    g2.clone()
                } else if is_single_vertex(g2) {
                    g1.clone()
                } else {
                    disjoint_union(&[g1.clone(), g2.clone()])?
                };
                raw.push((c1 * c2, product));
            }
        }
        QuantumGraph::new(raw, caps)
    }
}

/// Parse a quantum graph from its JSON form
/// `{"terms":[{"coef":"1/2","graph":{…}}]}` and canonicalize it.
pub fn load_quantum_graph(text: &str, caps: &Caps) -> Result<QuantumGraph> {
    let repr: QgRepr = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        col: e.column(),
        msg: e.to_string(),
    })?;
    let mut raw = Vec::new();
    for term in repr.terms {
        term.graph.validate()?;
        raw.push((term.coef, term.graph));
    }
    QuantumGraph::new(raw, caps)
}

/// Evaluate the combination against a graph: `Σ coefficient · t(term, G)`.
pub fn qg_evaluate(q: &QuantumGraph, g: &Structure, caps: &Caps) -> Result<Rational> {
    let mut total = Rational::zero();
    for (coef, f) in q.terms() {
        total += &(coef * &hom_density(f, g, caps)?);
    }
    Ok(total)
}

/// Maximum of `|qg_evaluate(q, G)|` over the corpus, with the least
/// attaining index. This is a lower bound for the sup-norm over all graphs;
/// the true supremum is not computable from a finite corpus.
pub fn qg_corpus_norm(
    q: &QuantumGraph,
    corpus: &[Structure],
    caps: &Caps,
) -> Result<(Rational, usize)> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut best = Rational::zero();
    let mut arg = 0usize;
    for (i, g) in corpus.iter().enumerate() {
        let value = qg_evaluate(q, g, caps).map_err(|e| e.at_index(i))?.abs();
        if value > best {
            best = value;
            arg = i;
        }
    }
    Ok((best, arg))
}

/// Row-scale a rational matrix to integers (per-row lcm of denominators;
/// scaling cannot change the rank).
fn integer_rows(matrix: &[Vec<Rational>]) -> Vec<Vec<BigInt>> {
    matrix
        .iter()
        .map(|row| {
            let scale = row
                .iter()
                .fold(BigInt::one(), |acc, x| acc.lcm(x.denom()));
            row.iter().map(|x| x.numer() * (&scale / x.denom())).collect()
        })
        .collect()
}

/// Rank by fraction-free (Bareiss) elimination; all divisions are exact.
fn bareiss_rank(mut m: Vec<Vec<BigInt>>) -> usize {
    let rows = m.len();
    if rows == 0 {
        return 0;
    }
    let cols = m[0].len();
    let mut rank = 0;
    let mut prev = BigInt::one();
    for col in 0..cols {
        if rank == rows {
            break;
        }
        let Some(pivot) = (rank..rows).find(|&i| !m[i][col].is_zero()) else {
            continue;
        };
        m.swap(rank, pivot);
        for i in rank + 1..rows {
            for j in col + 1..cols {
                let numerator = &m[rank][col] * &m[i][j] - &m[i][col] * &m[rank][j];
                let (quotient, remainder) = numerator.div_rem(&prev);
                debug_assert!(remainder.is_zero(), "fraction-free step must divide exactly");
                m[i][j] = quotient;
            }
            m[i][col] = BigInt::zero();
        }
        prev = m[rank][col].clone();
        rank += 1;
    }
    rank
}

/// The density matrix `[t(F_i, G_j)]` over patterns × corpus and its exact
/// rank.
pub fn hom_matrix_rank(
    patterns: &[Structure],
    corpus: &[Structure],
    caps: &Caps,
) -> Result<(Vec<Vec<Rational>>, usize)> {
    let mut matrix = Vec::with_capacity(patterns.len());
    for f in patterns {
        let mut row = Vec::with_capacity(corpus.len());
        for g in corpus {
            row.push(hom_density(f, g, caps)?);
        }
        matrix.push(row);
    }
    let rank = bareiss_rank(integer_rows(&matrix));
    Ok((matrix, rank))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::stone_pairing;
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

    fn count(f: &Structure, g: &Structure) -> u64 {
        use num_traits::ToPrimitive;
        hom_count(f, g, &Caps::default()).unwrap().to_u64().unwrap()
    }

    #[test]
    fn hom_count_examples() {
        assert_eq!(count(&clique(2), &clique(3)), 6);
        assert_eq!(count(&clique(1), &clique(5)), 5);
        assert_eq!(count(&clique(3), &clique(2)), 0);
        // Edgeless patterns are unconstrained maps.
        assert_eq!(count(&Structure::graph(2, &[]), &clique(3)), 9);
        assert_eq!(count(&path(3), &clique(3)), 12, "2 choices per endpoint around each center");
    }

    #[test]
    fn hom_cap() {
        let tight = Caps { tuples: 8, ..Caps::default() };
        assert!(matches!(
            hom_count(&clique(2), &clique(3), &tight),
            Err(Error::CapExceeded { needed: 9, cap: 8 })
        ));
    }

    #[test]
    fn density_examples() {
        let caps = Caps::default();
        assert_eq!(hom_density(&clique(2), &clique(3), &caps).unwrap(), Rational::new(2, 3));
        assert_eq!(hom_density(&clique(1), &clique(4), &caps).unwrap(), Rational::one());
        assert_eq!(
            hom_density(&clique(2), &Structure::graph(3, &[]), &caps).unwrap(),
            Rational::zero()
        );
    }

    #[test]
    fn canonical_formula_examples() {
        let parse = |s: &str| parse_formula(s, None).unwrap();
        assert_eq!(canonical_formula(&clique(2)).unwrap(), parse("x1~x2"));
        assert_eq!(canonical_formula(&path(3)).unwrap(), parse("x1~x2 & x2~x3"));
        assert_eq!(canonical_formula(&Structure::graph(2, &[])).unwrap(), Formula::True);
    }

    #[test]
    fn bridge_identity_spot_checks() {
        let caps = Caps::default();
        for f in [clique(2), path(3), clique(3), Structure::graph(2, &[])] {
            for g in [clique(2), clique(3), path(4)] {
                let formula = canonical_formula(&f).unwrap();
                let pairing = stone_pairing(&g, &formula, f.n, &caps).unwrap();
                assert_eq!(pairing, hom_density(&f, &g, &caps).unwrap());
            }
        }
    }

    #[test]
    fn multiplicativity_spot_check() {
        let caps = Caps::default();
        let k2k2 = disjoint_union(&[clique(2), clique(2)]).unwrap();
        let t = hom_density(&k2k2, &clique(3), &caps).unwrap();
        assert_eq!(t, Rational::new(4, 9));
    }

    #[test]
    fn quantum_graph_canonicalization() {
        let caps = Caps::default();
        // Two differently labeled paths merge into one term.
        let p_a = Structure::graph(3, &[(0, 1), (1, 2)]);
        let p_b = Structure::graph(3, &[(0, 2), (2, 1)]);
        let q = QuantumGraph::new(
            vec![(Rational::one(), p_a), (Rational::from_int(2), p_b)],
            &caps,
        )
        .unwrap();
        assert_eq!(q.terms().len(), 1);
        assert_eq!(q.terms()[0].0, Rational::from_int(3));
        // Opposite coefficients cancel to zero.
        let q = QuantumGraph::new(
            vec![
                (Rational::one(), clique(2)),
                (Rational::from_int(-1), clique(2)),
            ],
            &caps,
        )
        .unwrap();
        assert!(q.is_zero());
    }

    #[test]
    fn quantum_graph_basis_convention() {
        let caps = Caps::default();
        assert!(QuantumGraph::single(Rational::one(), clique(1), &caps).is_ok());
        let with_isolated = Structure::graph(4, &[(0, 1), (1, 2)]);
        assert!(matches!(
            QuantumGraph::single(Rational::one(), with_isolated, &caps),
            Err(Error::NotBasisGraph(_))
        ));
    }

    #[test]
    fn quantum_graph_product() {
        let caps = Caps::default();
        let k2 = QuantumGraph::single(Rational::one(), clique(2), &caps).unwrap();
        let squared = k2.mul(&k2, &caps).unwrap();
        assert_eq!(squared.terms().len(), 1);
        assert_eq!(squared.terms()[0].1.n, 4);
        // The single vertex is the unit.
        let unit = QuantumGraph::single(Rational::one(), clique(1), &caps).unwrap();
        let back = unit.mul(&k2, &caps).unwrap();
        assert_eq!(back, k2);
        assert_eq!(unit.mul(&unit, &caps).unwrap(), unit);
    }

    #[test]
    fn qg_evaluation_and_linearity() {
        let caps = Caps::default();
        let k2 = QuantumGraph::single(Rational::one(), clique(2), &caps).unwrap();
        assert_eq!(qg_evaluate(&k2, &clique(3), &caps).unwrap(), Rational::new(2, 3));
        let squared = k2.mul(&k2, &caps).unwrap();
        assert_eq!(qg_evaluate(&squared, &clique(3), &caps).unwrap(), Rational::new(4, 9));
        assert_eq!(qg_evaluate(&QuantumGraph::zero(), &clique(3), &caps).unwrap(), Rational::zero());
        // Linearity.
        let p3 = QuantumGraph::single(Rational::new(1, 2), path(3), &caps).unwrap();
        let sum = k2.add(&p3, &caps).unwrap();
        let lhs = qg_evaluate(&sum, &clique(3), &caps).unwrap();
        let rhs = qg_evaluate(&k2, &clique(3), &caps).unwrap()
            + qg_evaluate(&p3, &clique(3), &caps).unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn corpus_norm_examples() {
        let caps = Caps::default();
        let corpus = vec![clique(2), clique(3), clique(4)];
        let k2 = QuantumGraph::single(Rational::one(), clique(2), &caps).unwrap();
        assert_eq!(qg_corpus_norm(&k2, &corpus, &caps).unwrap(), (Rational::new(3, 4), 2));
        assert_eq!(
            qg_corpus_norm(&QuantumGraph::zero(), &corpus, &caps).unwrap(),
            (Rational::zero(), 0)
        );
        let unit = QuantumGraph::single(Rational::one(), clique(1), &caps).unwrap();
        assert_eq!(qg_corpus_norm(&unit, &corpus, &caps).unwrap().0, Rational::one());
        assert!(matches!(qg_corpus_norm(&k2, &[], &caps), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn corpus_norm_monotone_in_corpus() {
        let caps = Caps::default();
        let q = QuantumGraph::new(
            vec![(Rational::one(), clique(2)), (Rational::new(-1, 2), clique(3))],
            &caps,
        )
        .unwrap();
        let small = vec![clique(2), clique(3)];
        let large = vec![clique(2), clique(3), clique(4), path(4)];
        let (norm_small, _) = qg_corpus_norm(&q, &small, &caps).unwrap();
        let (norm_large, _) = qg_corpus_norm(&q, &large, &caps).unwrap();
        assert!(norm_large >= norm_small);
    }

    #[test]
    fn rank_examples() {
        let caps = Caps::default();
        let (matrix, rank) =
            hom_matrix_rank(&[clique(1), clique(2)], &[clique(2), clique(3)], &caps).unwrap();
        assert_eq!(matrix[0], vec![Rational::one(), Rational::one()]);
        assert_eq!(matrix[1], vec![Rational::new(1, 2), Rational::new(2, 3)]);
        assert_eq!(rank, 2);
        let (_, rank) =
            hom_matrix_rank(&[clique(2), clique(2)], &[clique(2), clique(3)], &caps).unwrap();
        assert_eq!(rank, 1);
        let (_, rank) = hom_matrix_rank(&[clique(1)], &[clique(2)], &caps).unwrap();
        assert_eq!(rank, 1);
        let (_, rank) = hom_matrix_rank(&[], &[clique(2)], &caps).unwrap();
        assert_eq!(rank, 0);
    }

    #[test]
    fn quantum_graph_round_trips_through_json() {
        let caps = Caps::default();
        let q = QuantumGraph::new(
            vec![(Rational::new(1, 2), clique(2)), (Rational::from_int(-2), clique(3))],
            &caps,
        )
        .unwrap();
        let text = serde_json::to_string(&q).unwrap();
        let back = load_quantum_graph(&text, &caps).unwrap();
        assert_eq!(back, q);
    }
}
