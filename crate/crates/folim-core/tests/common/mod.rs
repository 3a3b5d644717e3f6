//! Shared fixtures for the integration suites: seeded randomness, small-graph
//! builders, exhaustive graph enumerations, and formula generators.
//!
//! Everything here is deterministic given the seed, so every suite run checks
//! the same inputs. The enumeration helpers are deliberately written from
//! first principles (bitmask edge sets, minimum over all vertex permutations)
//! so they are independent of the library's own canonicalization code.

#![allow(dead_code)]

use folim_core::logic::{Formula, Term, VarId};
use folim_core::rational::Rational;
use folim_core::structures::{generate, Family, Signature, Structure};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Deterministic generator for a fixture seed.
pub fn seeded(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Graph builders
// ---------------------------------------------------------------------------

pub fn path(n: usize) -> Structure {
    generate(&Family::Path { n }).unwrap()
}

pub fn cycle(n: usize) -> Structure {
    generate(&Family::Cycle { n }).unwrap()
}

pub fn clique(n: usize) -> Structure {
    generate(&Family::Clique { n }).unwrap()
}

pub fn star(n: usize) -> Structure {
    generate(&Family::Star { n }).unwrap()
}

/// Undirected graph on `{0..n-1}` with the given edges (both orientations are
/// inserted).
pub fn graph_from_edges(n: usize, edges: &[(usize, usize)]) -> Structure {
    let mut a = Structure::new(Signature::graph(), n);
    let set = a.relations.entry("E".to_string()).or_default();
    for &(u, v) in edges {
        assert!(u != v && u < n && v < n, "bad edge ({u},{v}) for n={n}");
        set.insert(vec![u, v]);
        set.insert(vec![v, u]);
    }
    a.validate().expect("fixture graph must validate");
    a
}

/// Twelve small graphs of varied shape (1 to 7 vertices): the standing corpus
/// for exact cross-checks.
pub fn corpus12() -> Vec<Structure> {
    vec![
        clique(1),
        clique(2),
        path(3),
        clique(3),
        path(4),
        cycle(4),
        clique(4),
        star(5),
        cycle(5),
        clique(5),
        cycle(6),
        clique(7),
    ]
}

/// Eight-graph sub-corpus used where quadratic pairing over the corpus would
/// be too slow.
pub fn corpus8() -> Vec<Structure> {
    vec![clique(1), clique(2), path(3), clique(3), path(4), cycle(4), cycle(5), clique(4)]
}

// ---------------------------------------------------------------------------
// Exhaustive enumerations
// ---------------------------------------------------------------------------

/// Vertex pairs (i, j) with i < j in lexicographic order; bit b of an edge
/// mask refers to `pairs(k)[b]`.
fn pairs(k: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            out.push((i, j));
        }
    }
    out
}

fn graph_from_mask(k: usize, mask: u32, pairs: &[(usize, usize)]) -> Structure {
    let edges: Vec<(usize, usize)> =
        pairs.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, &p)| p).collect();
    graph_from_edges(k, &edges)
}

/// Every labeled undirected graph on 1..=`max_n` vertices (no loops). There
/// are 2^(k choose 2) on k vertices: 75 in total for `max_n = 4`.
pub fn labeled_graphs_up_to(max_n: usize) -> Vec<Structure> {
    assert!(max_n <= 5, "labeled enumeration grows too fast beyond 5 vertices");
    let mut out = Vec::new();
    for k in 1..=max_n {
        let pairs = pairs(k);
        for mask in 0u32..1 << pairs.len() {
            out.push(graph_from_mask(k, mask, &pairs));
        }
    }
    out
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..k).collect();
    fn heap(a: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k {
            heap(a, k - 1, out);
            if k % 2 == 0 {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
        }
    }
    heap(&mut current, k, &mut out);
    out
}

/// One representative per isomorphism class of undirected graphs on
/// 1..=`max_n` vertices: a graph is kept iff its edge mask is minimal among
/// all vertex permutations (brute force over k! relabelings). Yields
/// 1, 2, 4, 11, 34, 156 graphs on 1..6 vertices — 208 in total.
pub fn nonisomorphic_graphs_up_to(max_n: usize) -> Vec<Structure> {
    assert!(max_n <= 6, "permutation canonicalization is factorial; keep n <= 6");
    let mut out = Vec::new();
    for k in 1..=max_n {
        let pairs = pairs(k);
        let mut bit = vec![vec![0usize; k]; k];
        for (b, &(i, j)) in pairs.iter().enumerate() {
            bit[i][j] = b;
            bit[j][i] = b;
        }
        let perms = permutations(k);
        'mask: for mask in 0u32..1 << pairs.len() {
            for perm in &perms {
                let mut image = 0u32;
                for (b, &(i, j)) in pairs.iter().enumerate() {
                    if mask >> b & 1 == 1 {
                        image |= 1 << bit[perm[i]][perm[j]];
                    }
                }
                if image < mask {
                    continue 'mask;
                }
            }
            out.push(graph_from_mask(k, mask, &pairs));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Random structures
// ---------------------------------------------------------------------------

/// Uniform random graph: n drawn from 1..=`max_n`, each edge present with
/// probability 1/2.
pub fn random_graph(rng: &mut ChaCha20Rng, max_n: usize) -> Structure {
    let n = rng.gen_range(1..=max_n);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(0.5) {
                edges.push((i, j));
            }
        }
    }
    graph_from_edges(n, &edges)
}

/// Random positive rational weights summing to exactly 1.
pub fn random_weights(rng: &mut ChaCha20Rng, n: usize) -> Vec<Rational> {
    let nums: Vec<u128> = (0..n).map(|_| rng.gen_range(1..=10u32) as u128).collect();
    let den: u128 = nums.iter().sum();
    nums.into_iter().map(|p| Rational::ratio(p, den)).collect()
}

/// Random graph, weighted with probability 1/3.
pub fn random_structure(rng: &mut ChaCha20Rng, max_n: usize) -> Structure {
    let mut a = random_graph(rng, max_n);
    if rng.gen_ratio(1, 3) {
        a.weights = Some(random_weights(rng, a.n));
        a.validate().expect("weighted fixture must validate");
    }
    a
}

/// Uniform random permutation of `{1..p}` as a variable-renaming map.
pub fn random_permutation(rng: &mut ChaCha20Rng, p: usize) -> Vec<VarId> {
    let mut perm: Vec<VarId> = (1..=p as VarId).collect();
    for i in (1..perm.len()).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }
    perm
}

// ---------------------------------------------------------------------------
// Random formulas
// ---------------------------------------------------------------------------

fn var(v: VarId) -> Term {
    Term::Var(v)
}

fn pick(rng: &mut ChaCha20Rng, scope: &[VarId]) -> VarId {
    scope[rng.gen_range(0..scope.len())]
}

fn random_atom(rng: &mut ChaCha20Rng, scope: &[VarId]) -> Formula {
    if scope.is_empty() {
        return if rng.gen_bool(0.5) { Formula::True } else { Formula::False };
    }
    match rng.gen_range(0..6) {
        0 => Formula::True,
        1 => Formula::False,
        2 | 3 => Formula::Rel("E".to_string(), vec![var(pick(rng, scope)), var(pick(rng, scope))]),
        4 => Formula::Eq(var(pick(rng, scope)), var(pick(rng, scope))),
        _ => Formula::DistLe(var(pick(rng, scope)), var(pick(rng, scope)), rng.gen_range(0..=2)),
    }
}

fn random_node(
    rng: &mut ChaCha20Rng,
    scope: &mut Vec<VarId>,
    next: &mut VarId,
    qrank: u32,
    size: u32,
) -> Formula {
    // Force a quantifier when nothing is in scope yet, so sentences are not
    // all boolean constants.
    let must_quantify = scope.is_empty() && qrank > 0;
    if size == 0 && !must_quantify {
        return random_atom(rng, scope);
    }
    let choice = if must_quantify { 5 + rng.gen_range(0..3) } else { rng.gen_range(0..8) };
    match choice {
        0 => random_atom(rng, scope),
        1 => Formula::Not(Box::new(random_node(rng, scope, next, qrank, size - 1))),
        2 | 3 | 4 => {
            let a = random_node(rng, scope, next, qrank, size / 2);
            let b = random_node(rng, scope, next, qrank, size / 2);
            match choice {
                2 => Formula::And(Box::new(a), Box::new(b)),
                3 => Formula::Or(Box::new(a), Box::new(b)),
                _ => Formula::Implies(Box::new(a), Box::new(b)),
            }
        }
        _ if qrank == 0 => random_atom(rng, scope),
        _ => {
            let v = *next;
            *next += 1;
            scope.push(v);
            let body = random_node(rng, scope, next, qrank - 1, size.saturating_sub(1));
            scope.pop();
            match choice {
                5 => Formula::Exists(v, Box::new(body)),
                6 => Formula::Forall(v, Box::new(body)),
                _ => {
                    let c = rng.gen_range(1..=3u64);
                    if rng.gen_bool(0.5) {
                        Formula::AtLeast(c, v, Box::new(body))
                    } else {
                        Formula::AtMost(c, v, Box::new(body))
                    }
                }
            }
        }
    }
}

/// Random formula over the graph signature with free variables drawn from
/// `{x1..x_arity}`, quantifier rank at most `qrank`, and roughly `size`
/// connective nodes. May use equality, counting quantifiers, and distance
/// guards.
pub fn random_formula(rng: &mut ChaCha20Rng, arity: usize, qrank: u32, size: u32) -> Formula {
    let mut scope: Vec<VarId> = (1..=arity as VarId).collect();
    let mut next: VarId = arity as VarId + 1;
    random_node(rng, &mut scope, &mut next, qrank, size)
}

// ---------------------------------------------------------------------------
// Guarded-local formula pool
// ---------------------------------------------------------------------------

/// Ten unary formulas in which every quantifier is distance-guarded to the
/// free variable `x1` (so their truth at a vertex depends only on a bounded
/// ball around it). Texts are parsed by the caller.
pub fn guarded_unary_pool() -> Vec<&'static str> {
    vec![
        "x1 = x1",
        "x1 ~ x1",
        "exists y (dist(x1,y) <= 1 & y ~ x1)",
        "exists y (dist(x1,y) <= 1 & !(y = x1))",
        "forall y (dist(x1,y) <= 1 -> y ~ x1 | y = x1)",
        "exists>=2 y (dist(x1,y) <= 1 & y ~ x1)",
        "exists<=1 y (dist(x1,y) <= 2 & y ~ x1)",
        "exists y (dist(x1,y) <= 2 & exists z (dist(y,z) <= 1 & z ~ y & !(z = x1)))",
        "forall y (dist(x1,y) <= 2 -> exists z (dist(y,z) <= 1 & z ~ y))",
        "exists y (dist(x1,y) <= 1 & y ~ x1 & exists>=3 z (dist(z,y) <= 1 & z ~ y))",
    ]
}
