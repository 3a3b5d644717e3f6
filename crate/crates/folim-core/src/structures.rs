//! Signatures, finite structures, finite modelings, Gaifman-graph metric
//! operations, and structure-family generators.
//!
//! A [`Structure`] is a finite relational/functional structure over an explicit
//! [`Signature`], with universe `0..n-1`, optionally carrying exact rational
//! vertex weights that sum to 1 (a finite modeling). The [`GaifmanGraph`]
//! connects vertices that co-occur in a relation tuple or in an
//! (arguments, value) entry of a function table, and carries the distance used
//! by locality-sensitive operations.

use crate::error::{Error, Result};
use crate::rational::Rational;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};

/// Distance value for unreachable vertex pairs.
pub const INFINITE_DISTANCE: u32 = u32::MAX;

/// A named relation or function symbol with its arity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolDecl {
    pub name: String,
    pub arity: usize,
}

impl SymbolDecl {
    pub fn new(name: &str, arity: usize) -> Self {
        SymbolDecl { name: name.to_string(), arity }
    }
}

/// A finite signature: relation symbols, function symbols, constant symbols.
///
/// Names are distinct across all three lists and arities are positive.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    #[serde(default)]
    pub relations: Vec<SymbolDecl>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub functions: Vec<SymbolDecl>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constants: Vec<String>,
}

impl Signature {
    /// Signature of plain graphs: a single binary relation `E`.
    pub fn graph() -> Self {
        Signature { relations: vec![SymbolDecl::new("E", 2)], functions: vec![], constants: vec![] }
    }

    /// Graph signature extended with unary colors `Black` and `White`.
    pub fn colored_graph() -> Self {
        Signature {
            relations: vec![SymbolDecl::new("E", 2), SymbolDecl::new("Black", 1), SymbolDecl::new("White", 1)],
            functions: vec![],
            constants: vec![],
        }
    }

    /// Graph signature extended with a unary relation `Root`.
    pub fn rooted_graph() -> Self {
        Signature {
            relations: vec![SymbolDecl::new("E", 2), SymbolDecl::new("Root", 1)],
            functions: vec![],
            constants: vec![],
        }
    }

    /// Validate name distinctness and positive arities.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for decl in self.relations.iter().chain(self.functions.iter()) {
            if decl.arity == 0 {
                return Err(Error::Invariant(format!("symbol `{}` has arity 0", decl.name)));
            }
            if !seen.insert(decl.name.clone()) {
                return Err(Error::Invariant(format!("duplicate symbol name `{}`", decl.name)));
            }
        }
        for c in &self.constants {
            if !seen.insert(c.clone()) {
                return Err(Error::Invariant(format!("duplicate symbol name `{c}`")));
            }
        }
        Ok(())
    }

    /// Arity of a relation symbol, if declared.
    pub fn relation_arity(&self, name: &str) -> Option<usize> {
        self.relations.iter().find(|d| d.name == name).map(|d| d.arity)
    }

    /// Arity of a function symbol, if declared.
    pub fn function_arity(&self, name: &str) -> Option<usize> {
        self.functions.iter().find(|d| d.name == name).map(|d| d.arity)
    }

    /// True iff `name` is a declared constant.
    pub fn has_constant(&self, name: &str) -> bool {
        self.constants.iter().any(|c| c == name)
    }

    /// True iff this is the plain graph signature shape: exactly one relation,
    /// binary, and no functions or constants.
    pub fn is_graph(&self) -> bool {
        self.relations.len() == 1
            && self.relations[0].arity == 2
            && self.functions.is_empty()
            && self.constants.is_empty()
    }

    /// The relation the edge sugar `t ~ t` resolves to: the unique binary
    /// relation if there is exactly one, otherwise a binary relation named `E`.
    pub fn edge_relation(&self) -> Result<&str> {
        let binary: Vec<&SymbolDecl> = self.relations.iter().filter(|d| d.arity == 2).collect();
        if binary.len() == 1 {
            return Ok(&binary[0].name);
        }
        if let Some(e) = binary.iter().find(|d| d.name == "E") {
            return Ok(&e.name);
        }
        Err(Error::UnknownSymbol {
            name: "~".to_string(),
            context: "no unique binary relation (and none named `E`) to resolve the edge sugar".to_string(),
        })
    }
}

/// Row-major rank of an argument tuple in `0..n^arity` (first argument most
/// significant). Function tables are stored flat in this order.
pub(crate) fn flat_index(args: &[usize], n: usize) -> usize {
    args.iter().fold(0, |acc, &a| acc * n + a)
}

/// A finite structure (or finite modeling, when `weights` is present) over an
/// explicit signature, with universe `0..n-1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Structure {
    pub signature: Signature,
    pub n: usize,
    /// Relation tables: per symbol, a set of arity-length tuples.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub relations: BTreeMap<String, BTreeSet<Vec<usize>>>,
    /// Function tables: per symbol of arity r, a flat row-major array of
    /// length n^r mapping each argument tuple to its value.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub functions: BTreeMap<String, Vec<usize>>,
    /// Constant interpretations.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub constants: BTreeMap<String, usize>,
    /// Optional vertex weights; present iff this is a modeling. Each weight is
    /// positive and the weights sum to exactly 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Rational>>,
}

impl Structure {
    /// Empty structure over a signature (no tuples; functions/constants unset).
    /// Callers populating function or constant symbols must fill their tables
    /// before validation.
    pub fn new(signature: Signature, n: usize) -> Self {
        Structure { signature, n, relations: BTreeMap::new(), functions: BTreeMap::new(), constants: BTreeMap::new(), weights: None }
    }

    /// Plain graph on `n` vertices from an undirected edge list; both
    /// orientations of every edge are stored.
    pub fn graph(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut tuples = BTreeSet::new();
        for &(u, v) in edges {
            tuples.insert(vec![u, v]);
            tuples.insert(vec![v, u]);
        }
        let mut relations = BTreeMap::new();
        relations.insert("E".to_string(), tuples);
        Structure { signature: Signature::graph(), n, relations, functions: BTreeMap::new(), constants: BTreeMap::new(), weights: None }
    }

    /// Insert one relation tuple (both directions must be added explicitly for
    /// symmetric relations).
    pub fn add_tuple(&mut self, relation: &str, tuple: Vec<usize>) {
        self.relations.entry(relation.to_string()).or_default().insert(tuple);
    }

    /// Check every structural invariant: declared symbols, tuple ranges and
    /// arities, total function tables, constant ranges, weight positivity and
    /// unit sum.
    pub fn validate(&self) -> Result<()> {
        self.signature.validate()?;
        if self.n == 0 {
            return Err(Error::Invariant("universe is empty (n must be >= 1)".to_string()));
        }
        for (name, tuples) in &self.relations {
            let arity = self.signature.relation_arity(name).ok_or_else(|| Error::UnknownSymbol {
                name: name.clone(),
                context: "relation table for a symbol not in the signature".to_string(),
            })?;
            for t in tuples {
                if t.len() != arity {
                    return Err(Error::Invariant(format!(
                        "relation `{name}` tuple {t:?} has length {}, arity is {arity}",
                        t.len()
                    )));
                }
                for &v in t {
                    if v >= self.n {
                        return Err(Error::Invariant(format!(
                            "index out of range: relation `{name}` tuple {t:?} mentions vertex {v}, universe size is {}",
                            self.n
                        )));
                    }
                }
            }
        }
        for decl in &self.signature.functions {
            let table = self.functions.get(&decl.name).ok_or_else(|| {
                Error::Invariant(format!("function `{}` has no table", decl.name))
            })?;
            let expected = self.n.checked_pow(decl.arity as u32).ok_or_else(|| {
                Error::Invariant(format!("function `{}` table size overflows", decl.name))
            })?;
            if table.len() != expected {
                return Err(Error::Invariant(format!(
                    "function `{}` table has {} entries, a total table needs {expected}",
                    decl.name,
                    table.len()
                )));
            }
            for (i, &v) in table.iter().enumerate() {
                if v >= self.n {
                    return Err(Error::Invariant(format!(
                        "index out of range: function `{}` entry {i} has value {v}, universe size is {}",
                        decl.name, self.n
                    )));
                }
            }
        }
        for name in self.functions.keys() {
            if self.signature.function_arity(name).is_none() {
                return Err(Error::UnknownSymbol {
                    name: name.clone(),
                    context: "function table for a symbol not in the signature".to_string(),
                });
            }
        }
        for c in &self.signature.constants {
            let &v = self.constants.get(c).ok_or_else(|| {
                Error::Invariant(format!("constant `{c}` is not assigned"))
            })?;
            if v >= self.n {
                return Err(Error::VertexOutOfRange { v, n: self.n });
            }
        }
        for name in self.constants.keys() {
            if !self.signature.has_constant(name) {
                return Err(Error::UnknownSymbol {
                    name: name.clone(),
                    context: "constant assignment for a symbol not in the signature".to_string(),
                });
            }
        }
        if let Some(weights) = &self.weights {
            if weights.len() != self.n {
                return Err(Error::Invariant(format!(
                    "{} weights for {} vertices",
                    weights.len(),
                    self.n
                )));
            }
            for (v, w) in weights.iter().enumerate() {
                if *w <= Rational::zero() {
                    return Err(Error::Invariant(format!("weight of vertex {v} is {w}, must be positive")));
                }
            }
            let total: Rational = weights.iter().sum();
            if !total.is_one() {
                return Err(Error::Invariant(format!("weights sum to {total}, must sum to 1")));
            }
        }
        Ok(())
    }

    /// Measure of one vertex: its weight, or `1/n` when unweighted.
    pub fn vertex_measure(&self, v: usize) -> Rational {
        match &self.weights {
            Some(w) => w[v].clone(),
            None => Rational::uniform(self.n),
        }
    }

    /// True iff this structure carries explicit weights.
    pub fn is_weighted(&self) -> bool {
        self.weights.is_some()
    }

    /// Tuples of a relation (empty set if the table is absent).
    pub fn relation_tuples(&self, name: &str) -> Option<&BTreeSet<Vec<usize>>> {
        self.relations.get(name)
    }

    /// Apply a function symbol to an argument tuple.
    pub fn apply_function(&self, name: &str, args: &[usize]) -> Result<usize> {
        let table = self.functions.get(name).ok_or_else(|| Error::UnknownSymbol {
            name: name.to_string(),
            context: "function application".to_string(),
        })?;
        Ok(table[flat_index(args, self.n)])
    }

    /// Validate that this is a simple graph (plain graph signature, symmetric
    /// and loop-free edge relation) and return its adjacency lists.
    pub fn simple_graph_adjacency(&self) -> Result<Vec<BTreeSet<usize>>> {
        if !self.signature.is_graph() {
            return Err(Error::NonGraphSignature(format!(
                "signature has {} relations, {} functions, {} constants",
                self.signature.relations.len(),
                self.signature.functions.len(),
                self.signature.constants.len()
            )));
        }
        let name = &self.signature.relations[0].name;
        let mut adj = vec![BTreeSet::new(); self.n];
        if let Some(tuples) = self.relations.get(name) {
            for t in tuples {
                let (u, v) = (t[0], t[1]);
                if u >= self.n || v >= self.n {
                    return Err(Error::VertexOutOfRange { v: u.max(v), n: self.n });
                }
                if u == v {
                    return Err(Error::Invariant(format!("loop at vertex {u} in a simple graph")));
                }
                if !tuples.contains(&vec![v, u]) {
                    return Err(Error::Invariant(format!(
                        "edge ({u},{v}) present without ({v},{u}); simple graphs are symmetric"
                    )));
                }
                adj[u].insert(v);
            }
        }
        Ok(adj)
    }

    /// Stable content fingerprint (FNV-1a over the canonical JSON form), used
    /// to identify structures in reports.
    pub fn structure_id(&self) -> String {
        let json = serde_json::to_string(self).expect("structure serialization cannot fail");
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in json.as_bytes() {
            hash ^= u64::from(*byte);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{hash:016x}")
    }
}

/// Parse and validate a structure file (UTF-8 JSON).
pub fn load_structure(text: &str) -> Result<Structure> {
    let structure: Structure = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        col: e.column(),
        msg: e.to_string(),
    })?;
    structure.validate()?;
    Ok(structure)
}

/// The Gaifman graph of a structure: `u ~ v` iff `u != v` co-occur in some
/// relation tuple or in some (arguments, value) entry of a function table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GaifmanGraph {
    pub n: usize,
    adj: Vec<BTreeSet<usize>>,
}

impl GaifmanGraph {
    /// Number of neighbors of `v`.
    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    /// Neighbor set of `v` (sorted).
    pub fn neighbors(&self, v: usize) -> &BTreeSet<usize> {
        &self.adj[v]
    }

    /// True iff `u` and `v` are adjacent.
    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj[u].contains(&v)
    }

    /// All edges as sorted pairs `(u, v)` with `u < v`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (u, nbrs) in self.adj.iter().enumerate() {
            for &v in nbrs.iter() {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// BFS distances from `v`; unreachable vertices get [`INFINITE_DISTANCE`].
    pub fn bfs_distances(&self, v: usize) -> Vec<u32> {
        let mut dist = vec![INFINITE_DISTANCE; self.n];
        let mut queue = VecDeque::new();
        dist[v] = 0;
        queue.push_back(v);
        while let Some(u) = queue.pop_front() {
            for &w in &self.adj[u] {
                if dist[w] == INFINITE_DISTANCE {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// All-pairs BFS distance matrix.
    pub fn all_pairs_distances(&self) -> Vec<Vec<u32>> {
        (0..self.n).map(|v| self.bfs_distances(v)).collect()
    }

    /// Vertices at distance at most `d` from `v` (sorted; `d = 0` gives `{v}`).
    pub fn ball(&self, v: usize, d: u32) -> BTreeSet<usize> {
        self.bfs_distances(v)
            .iter()
            .enumerate()
            .filter(|&(_, &dist)| dist <= d)
            .map(|(u, _)| u)
            .collect()
    }
}

/// Build the Gaifman graph of a structure.
pub fn gaifman_graph(a: &Structure) -> GaifmanGraph {
    let mut adj = vec![BTreeSet::new(); a.n];
    let connect = |tuple: &[usize], adj: &mut Vec<BTreeSet<usize>>| {
        for (i, &u) in tuple.iter().enumerate() {
            for &v in &tuple[i + 1..] {
                if u != v {
                    adj[u].insert(v);
                    adj[v].insert(u);
                }
            }
        }
    };
    for tuples in a.relations.values() {
        for t in tuples {
            connect(t, &mut adj);
        }
    }
    for decl in &a.signature.functions {
        if let Some(table) = a.functions.get(&decl.name) {
            let mut args = vec![0usize; decl.arity];
            for (flat, &value) in table.iter().enumerate() {
                // Decode the row-major rank back into the argument tuple.
                let mut rest = flat;
                for slot in args.iter_mut().rev() {
                    *slot = rest % a.n;
                    rest /= a.n;
                }
                let mut entry = args.clone();
                entry.push(value);
                connect(&entry, &mut adj);
            }
        }
    }
    GaifmanGraph { n: a.n, adj }
}

/// Vertices at Gaifman distance at most `d` from `v`.
pub fn ball(a: &Structure, v: usize, d: u32) -> Result<BTreeSet<usize>> {
    if v >= a.n {
        return Err(Error::VertexOutOfRange { v, n: a.n });
    }
    Ok(gaifman_graph(a).ball(v, d))
}

/// Total measure of the ball of radius `d` around `v` (uniform `1/n` per
/// vertex when unweighted).
pub fn ball_measure(a: &Structure, v: usize, d: u32) -> Result<Rational> {
    let b = ball(a, v, d)?;
    Ok(b.iter().map(|&u| a.vertex_measure(u)).sum())
}

/// Gaifman-graph connected components, each sorted ascending, ordered by
/// decreasing size and then by least vertex.
pub fn connected_components(a: &Structure) -> Vec<Vec<usize>> {
    let g = gaifman_graph(a);
    let mut seen = vec![false; a.n];
    let mut components = Vec::new();
    for start in 0..a.n {
        if seen[start] {
            continue;
        }
        let mut block = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(u) = queue.pop_front() {
            block.push(u);
            for &w in g.neighbors(u) {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        block.sort_unstable();
        components.push(block);
    }
    components.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    components
}

/// Exact search (ascending backtracking, so the greedy choice is explored
/// first) for `m` candidates pairwise at distance >= `d` under `dist`.
/// Candidates must be sorted ascending; the infinite distance counts as far.
pub(crate) fn scattered_among(
    dist: &[Vec<u32>],
    candidates: &[usize],
    d: u32,
    m: usize,
) -> Option<Vec<usize>> {
    fn extend(
        dist: &[Vec<u32>],
        candidates: &[usize],
        d: u32,
        m: usize,
        from: usize,
        chosen: &mut Vec<usize>,
    ) -> bool {
        if chosen.len() == m {
            return true;
        }
        for (i, &v) in candidates.iter().enumerate().skip(from) {
            // Not enough candidates left to finish even if all fit.
            if candidates.len() - i < m - chosen.len() {
                return false;
            }
            if chosen.iter().all(|&u| dist[u][v] >= d) {
                chosen.push(v);
                if extend(dist, candidates, d, m, i + 1, chosen) {
                    return true;
                }
                chosen.pop();
            }
        }
        false
    }
    let mut chosen = Vec::with_capacity(m);
    if extend(dist, candidates, d, m, 0, &mut chosen) {
        Some(chosen)
    } else {
        None
    }
}

/// Some set of `m` vertices pairwise at Gaifman distance >= `d`, or `None` if
/// no such set exists. The search is exact.
pub fn scattered_set(a: &Structure, d: u32, m: usize) -> Result<Option<Vec<usize>>> {
    if m == 0 {
        return Err(Error::InvalidParams("scattered set size m must be >= 1".to_string()));
    }
    let dist = gaifman_graph(a).all_pairs_distances();
    let candidates: Vec<usize> = (0..a.n).collect();
    Ok(scattered_among(&dist, &candidates, d, m))
}

/// Per-vertex invariant used to prune the automorphism search: how often the
/// vertex appears in each (relation, position), its function-table profile,
/// and which constants name it.
fn automorphism_invariant(a: &Structure) -> Vec<Vec<usize>> {
    let mut inv = vec![Vec::new(); a.n];
    for decl in &a.signature.relations {
        let empty = BTreeSet::new();
        let tuples = a.relations.get(&decl.name).unwrap_or(&empty);
        for pos in 0..decl.arity {
            let mut counts = vec![0usize; a.n];
            for t in tuples {
                counts[t[pos]] += 1;
            }
            for v in 0..a.n {
                inv[v].push(counts[v]);
            }
        }
    }
    for decl in &a.signature.functions {
        if let Some(table) = a.functions.get(&decl.name) {
            let mut image_counts = vec![0usize; a.n];
            for &value in table {
                image_counts[value] += 1;
            }
            for v in 0..a.n {
                inv[v].push(image_counts[v]);
            }
        }
    }
    for name in &a.signature.constants {
        let c = a.constants[name];
        for v in 0..a.n {
            inv[v].push(usize::from(v == c));
        }
    }
    inv
}

/// Check whether the total map `perm` preserves all tables. Bijectivity plus
/// forward preservation of every tuple suffices for full preservation.
fn is_automorphism(a: &Structure, perm: &[usize]) -> bool {
    for tuples in a.relations.values() {
        for t in tuples {
            let image: Vec<usize> = t.iter().map(|&v| perm[v]).collect();
            if !tuples.contains(&image) {
                return false;
            }
        }
    }
    for decl in &a.signature.functions {
        let table = &a.functions[&decl.name];
        let mut args = vec![0usize; decl.arity];
        for (flat, &value) in table.iter().enumerate() {
            let mut rest = flat;
            for slot in args.iter_mut().rev() {
                *slot = rest % a.n;
                rest /= a.n;
            }
            let image_args: Vec<usize> = args.iter().map(|&v| perm[v]).collect();
            if table[flat_index(&image_args, a.n)] != perm[value] {
                return false;
            }
        }
    }
    for c in a.constants.values() {
        if perm[*c] != *c {
            return false;
        }
    }
    true
}

fn automorphism_extends(
    a: &Structure,
    inv: &[Vec<usize>],
    perm: &mut Vec<Option<usize>>,
    used: &mut Vec<bool>,
    next: usize,
) -> bool {
    if next == a.n {
        let total: Vec<usize> = perm.iter().map(|p| p.unwrap()).collect();
        return is_automorphism(a, &total);
    }
    if perm[next].is_some() {
        return automorphism_extends(a, inv, perm, used, next + 1);
    }
    'candidate: for w in 0..a.n {
        if used[w] || inv[next] != inv[w] {
            continue;
        }
        // Partial consistency: fully mapped relation tuples must stay in their
        // relation, and mapped function entries must agree.
        perm[next] = Some(w);
        used[w] = true;
        for tuples in a.relations.values() {
            for t in tuples {
                if t.contains(&next) {
                    if let Some(image) = t.iter().map(|&v| perm[v]).collect::<Option<Vec<usize>>>() {
                        if !tuples.contains(&image) {
                            perm[next] = None;
                            used[w] = false;
                            continue 'candidate;
                        }
                    }
                }
            }
        }
        if automorphism_extends(a, inv, perm, used, next + 1) {
            return true;
        }
        perm[next] = None;
        used[w] = false;
    }
    false
}

/// True iff the automorphism group of `a` acts transitively on the universe,
/// by backtracking automorphism search. Requires an unweighted structure and
/// `n <= cap`.
pub fn is_vertex_transitive(a: &Structure, cap: usize) -> Result<bool> {
    if a.is_weighted() {
        return Err(Error::Invariant(
            "vertex transitivity is defined for unweighted structures".to_string(),
        ));
    }
    if a.n > cap {
        return Err(Error::TransitiveCapExceeded { n: a.n, cap });
    }
    let inv = automorphism_invariant(a);
    for target in 1..a.n {
        if inv[0] != inv[target] {
            return Ok(false);
        }
        let mut perm: Vec<Option<usize>> = vec![None; a.n];
        let mut used = vec![false; a.n];
        perm[0] = Some(target);
        used[target] = true;
        if !automorphism_extends(a, &inv, &mut perm, &mut used, 1) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Disjoint union of structures over one shared signature: universes are
/// concatenated with shifted indices. Parts must be unweighted (a weighted
/// union is a convex combination, a different operation) and constant-free
/// (a constant cannot name a vertex in more than one part).
pub fn disjoint_union(parts: &[Structure]) -> Result<Structure> {
    let first = parts.first().ok_or_else(|| Error::InvalidParams("disjoint union of zero parts".to_string()))?;
    let signature = first.signature.clone();
    if !signature.constants.is_empty() {
        return Err(Error::InvalidParams(
            "disjoint union is not defined for signatures with constants".to_string(),
        ));
    }
    // A united flat function table would have to cover cross-part argument
    // tuples, where no part defines a value; reject function symbols up front.
    if !signature.functions.is_empty() {
        return Err(Error::InvalidParams(
            "disjoint union is not defined for signatures with function symbols".to_string(),
        ));
    }
    let mut out = Structure::new(signature.clone(), 0);
    for (idx, part) in parts.iter().enumerate() {
        if part.signature != signature {
            return Err(Error::SignatureMismatch(format!("part {idx} uses a different signature")));
        }
        if part.is_weighted() {
            return Err(Error::InvalidParams(format!(
                "part {idx} is weighted; use a convex combination for modelings"
            )));
        }
        let shift = out.n;
        for (name, tuples) in &part.relations {
            let target = out.relations.entry(name.clone()).or_default();
            for t in tuples {
                target.insert(t.iter().map(|&v| v + shift).collect());
            }
        }
        out.n += part.n;
    }
    Ok(out)
}

/// The substructure induced on a vertex set, re-indexed by rank. Relation
/// tuples survive only when fully inside the set. The set must be closed
/// under functions and contain every constant, since the result is again a
/// total structure. Weights are not carried over; callers that need a
/// modeling renormalize for their own semantics.
pub fn induced_substructure(a: &Structure, vertices: &BTreeSet<usize>) -> Result<Structure> {
    if vertices.is_empty() {
        return Err(Error::InvalidParams("induced substructure on an empty set".to_string()));
    }
    if let Some(&v) = vertices.iter().find(|&&v| v >= a.n) {
        return Err(Error::VertexOutOfRange { v, n: a.n });
    }
    let ordered: Vec<usize> = vertices.iter().copied().collect();
    let rank: BTreeMap<usize, usize> =
        ordered.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut out = Structure::new(a.signature.clone(), vertices.len());
    for (name, tuples) in &a.relations {
        let target = out.relations.entry(name.clone()).or_default();
        for t in tuples {
            if let Some(mapped) = t.iter().map(|v| rank.get(v).copied()).collect::<Option<Vec<_>>>()
            {
                target.insert(mapped);
            }
        }
    }
    for decl in &a.signature.functions {
        let arity = decl.arity;
        let mut table = Vec::with_capacity(ordered.len().pow(arity as u32));
        let mut args = vec![0usize; arity];
        'tuples: loop {
            let source_args: Vec<usize> = args.iter().map(|&i| ordered[i]).collect();
            let value = a.apply_function(&decl.name, &source_args)?;
            let mapped = rank.get(&value).copied().ok_or_else(|| {
                Error::Invariant(format!(
                    "vertex set is not closed under function `{}`: value {value} falls outside",
                    decl.name
                ))
            })?;
            table.push(mapped);
            let mut i = arity;
            while i > 0 {
                i -= 1;
                args[i] += 1;
                if args[i] < ordered.len() {
                    continue 'tuples;
                }
                args[i] = 0;
            }
            break;
        }
        out.functions.insert(decl.name.clone(), table);
    }
    for (name, &v) in &a.constants {
        let mapped = rank.get(&v).copied().ok_or_else(|| {
            Error::Invariant(format!("constant `{name}` names vertex {v} outside the set"))
        })?;
        out.constants.insert(name.clone(), mapped);
    }
    out.validate()?;
    Ok(out)
}

/// Structure families available from [`generate`].
#[derive(Clone, Debug)]
pub enum Family {
    /// Path on `n` vertices (edges i ~ i+1).
    Path { n: usize },
    /// Cycle on `n >= 3` vertices.
    Cycle { n: usize },
    /// Complete graph on `n` vertices.
    Clique { n: usize },
    /// Star on `n` vertices: center 0 joined to 1..n-1.
    Star { n: usize },
    /// Uniform random recursive tree on `n` vertices with `Root = {0}`:
    /// vertex i attaches to a seeded-uniform parent among 0..i-1.
    RootedTreeRandom { n: usize, seed: u64 },
    /// Transitive tournament 0 < 1 < ... < n-1 (arcs (i,j) for i < j) with
    /// unary colors from a string over {B, W}.
    TransitiveTournamentColored { colors: String },
    /// Disjoint union of the given parts (shared signature, unweighted).
    DisjointUnion { parts: Vec<Structure> },
}

impl Family {
    /// Parse a family by name with numeric/string parameters, the CLI surface
    /// for [`generate`]. `parts` is consumed only by `disjoint_union`.
    pub fn from_name(
        name: &str,
        n: Option<usize>,
        seed: Option<u64>,
        colors: Option<&str>,
        parts: Vec<Structure>,
    ) -> Result<Family> {
        let need_n = || n.ok_or_else(|| Error::InvalidParams(format!("family `{name}` needs --n")));
        match name {
            "path" => Ok(Family::Path { n: need_n()? }),
            "cycle" => Ok(Family::Cycle { n: need_n()? }),
            "clique" => Ok(Family::Clique { n: need_n()? }),
            "star" => Ok(Family::Star { n: need_n()? }),
            "rooted_tree_random" => Ok(Family::RootedTreeRandom {
                n: need_n()?,
                seed: seed.ok_or_else(|| Error::InvalidParams("rooted_tree_random needs --seed".to_string()))?,
            }),
            "transitive_tournament_colored" => {
                let colors = colors
                    .ok_or_else(|| Error::InvalidParams("transitive_tournament_colored needs --colors".to_string()))?
                    .to_string();
                if let Some(n) = n {
                    if n != colors.len() {
                        return Err(Error::InvalidParams(format!(
                            "--n {n} disagrees with {} colors",
                            colors.len()
                        )));
                    }
                }
                Ok(Family::TransitiveTournamentColored { colors })
            }
            "disjoint_union" => {
                if parts.is_empty() {
                    return Err(Error::InvalidParams("disjoint_union needs at least one part".to_string()));
                }
                Ok(Family::DisjointUnion { parts })
            }
            other => Err(Error::UnknownFamily(other.to_string())),
        }
    }
}

/// Sample a uniform value in `0..bound` from raw PRNG output by rejection on
/// the masked low bits; bit-reproducible for a fixed seed.
pub(crate) fn uniform_below(rng: &mut ChaCha20Rng, bound: u64) -> u64 {
    assert!(bound > 0);
    if bound == 1 {
        return 0;
    }
    let mask = u64::MAX >> (bound - 1).leading_zeros();
    loop {
        let x = rng.next_u64() & mask;
        if x < bound {
            return x;
        }
    }
}

/// Build a named structure family member.
pub fn generate(family: &Family) -> Result<Structure> {
    let out = match family {
        Family::Path { n } => {
            if *n == 0 {
                return Err(Error::InvalidParams("path needs n >= 1".to_string()));
            }
            let edges: Vec<(usize, usize)> = (1..*n).map(|i| (i - 1, i)).collect();
            Structure::graph(*n, &edges)
        }
        Family::Cycle { n } => {
            if *n < 3 {
                return Err(Error::InvalidParams("cycle needs n >= 3".to_string()));
            }
            let edges: Vec<(usize, usize)> = (0..*n).map(|i| (i, (i + 1) % n)).collect();
            Structure::graph(*n, &edges)
        }
        Family::Clique { n } => {
            if *n == 0 {
                return Err(Error::InvalidParams("clique needs n >= 1".to_string()));
            }
            let mut edges = Vec::new();
            for u in 0..*n {
                for v in u + 1..*n {
                    edges.push((u, v));
                }
            }
            Structure::graph(*n, &edges)
        }
        Family::Star { n } => {
            if *n == 0 {
                return Err(Error::InvalidParams("star needs n >= 1".to_string()));
            }
            let edges: Vec<(usize, usize)> = (1..*n).map(|v| (0, v)).collect();
            Structure::graph(*n, &edges)
        }
        Family::RootedTreeRandom { n, seed } => {
            if *n == 0 {
                return Err(Error::InvalidParams("rooted_tree_random needs n >= 1".to_string()));
            }
            let mut rng = ChaCha20Rng::seed_from_u64(*seed);
            let mut out = Structure::new(Signature::rooted_graph(), *n);
            for i in 1..*n {
                let parent = uniform_below(&mut rng, i as u64) as usize;
                out.add_tuple("E", vec![parent, i]);
                out.add_tuple("E", vec![i, parent]);
            }
            out.add_tuple("Root", vec![0]);
            out
        }
        Family::TransitiveTournamentColored { colors } => {
            let n = colors.len();
            if n == 0 {
                return Err(Error::InvalidParams("color string is empty".to_string()));
            }
            let mut out = Structure::new(Signature::colored_graph(), n);
            for i in 0..n {
                for j in i + 1..n {
                    out.add_tuple("E", vec![i, j]);
                }
            }
            for (i, c) in colors.chars().enumerate() {
                match c {
                    'B' => out.add_tuple("Black", vec![i]),
                    'W' => out.add_tuple("White", vec![i]),
                    other => {
                        return Err(Error::InvalidParams(format!(
                            "color `{other}` at position {i}; colors are B and W"
                        )))
                    }
                }
            }
            out
        }
        Family::DisjointUnion { parts } => disjoint_union(parts)?,
    };
    out.validate()?;
    Ok(out)
}
