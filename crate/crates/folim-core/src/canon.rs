//! Canonical labeling of small structures by color refinement plus
//! individualization backtracking.
//!
//! The certificate of a (optionally rooted) structure is the lexicographically
//! least byte encoding over all refinement-compatible labelings, so two
//! records have equal certificates iff they are isomorphic (respecting the
//! root and all symbol names). Exactness over speed: intended for desk-scale
//! inputs such as neighborhood balls and quantum-graph terms, guarded by a
//! size cap. Certificates ignore vertex weights; isomorphism here is about
//! structure shape, and masses are accounted separately by the callers.

use crate::error::{Error, Result};
use crate::structures::Structure;
use std::collections::{BTreeMap, BTreeSet};

/// Normalized input for canonical labeling. Function tables are flattened to
/// (arguments, value) tuple sets so that partial restrictions (e.g. a ball
/// whose boundary cuts a function entry) stay representable.
#[derive(Clone, Debug)]
pub(crate) struct CanonRecord {
    pub n: usize,
    /// (kind, name, arity, tuples); kind 0 = relation, 1 = function graph.
    blocks: Vec<(u8, String, usize, Vec<Vec<usize>>)>,
    /// (name, vertex) per signature constant; `None` when the constant's
    /// vertex is outside a restricted record.
    constants: Vec<(String, Option<usize>)>,
    root: Option<usize>,
}

impl CanonRecord {
    /// Record for a whole structure.
    pub fn of_structure(a: &Structure, root: Option<usize>) -> CanonRecord {
        let mut blocks = Vec::new();
        for decl in &a.signature.relations {
            let tuples = a
                .relations
                .get(&decl.name)
                .map(|set| set.iter().cloned().collect())
                .unwrap_or_default();
            blocks.push((0u8, decl.name.clone(), decl.arity, tuples));
        }
        for decl in &a.signature.functions {
            let mut tuples = Vec::new();
            if let Some(table) = a.functions.get(&decl.name) {
                let mut args = vec![0usize; decl.arity];
                for (flat, &value) in table.iter().enumerate() {
                    let mut rest = flat;
                    for slot in args.iter_mut().rev() {
                        *slot = rest % a.n;
                        rest /= a.n;
                    }
                    let mut entry = args.clone();
                    entry.push(value);
                    tuples.push(entry);
                }
            }
            blocks.push((1u8, decl.name.clone(), decl.arity + 1, tuples));
        }
        let constants = a
            .signature
            .constants
            .iter()
            .map(|name| (name.clone(), a.constants.get(name).copied()))
            .collect();
        CanonRecord { n: a.n, blocks, constants, root }
    }

    /// Record for the substructure induced on `set`, re-indexed by rank in the
    /// sorted set, rooted at `root` (which must lie in `set`). Function
    /// entries are kept only when arguments and value all lie in the set.
    pub fn of_induced(a: &Structure, set: &BTreeSet<usize>, root: usize) -> CanonRecord {
        debug_assert!(set.contains(&root));
        let rank: BTreeMap<usize, usize> = set.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let keep = |t: &[usize]| -> Option<Vec<usize>> {
            t.iter().map(|v| rank.get(v).copied()).collect()
        };
        let mut blocks = Vec::new();
        for decl in &a.signature.relations {
            let mut tuples = Vec::new();
            if let Some(table) = a.relations.get(&decl.name) {
                for t in table {
                    if let Some(mapped) = keep(t) {
                        tuples.push(mapped);
                    }
                }
            }
            blocks.push((0u8, decl.name.clone(), decl.arity, tuples));
        }
        for decl in &a.signature.functions {
            let mut tuples = Vec::new();
            if let Some(table) = a.functions.get(&decl.name) {
                let mut args = vec![0usize; decl.arity];
                for (flat, &value) in table.iter().enumerate() {
                    let mut rest = flat;
                    for slot in args.iter_mut().rev() {
                        *slot = rest % a.n;
                        rest /= a.n;
                    }
                    let mut entry = args.clone();
                    entry.push(value);
                    if let Some(mapped) = keep(&entry) {
                        tuples.push(mapped);
                    }
                }
            }
            blocks.push((1u8, decl.name.clone(), decl.arity + 1, tuples));
        }
        let constants = a
            .signature
            .constants
            .iter()
            .map(|name| {
                let mapped = a.constants.get(name).and_then(|v| rank.get(v).copied());
                (name.clone(), mapped)
            })
            .collect();
        CanonRecord { n: set.len(), blocks, constants, root: Some(rank[&root]) }
    }

    fn initial_colors(&self) -> Vec<u32> {
        let mut keys: Vec<Vec<usize>> = vec![Vec::new(); self.n];
        for (v, key) in keys.iter_mut().enumerate() {
            key.push(usize::from(self.root == Some(v)));
            for (_, vertex) in &self.constants {
                key.push(usize::from(*vertex == Some(v)));
            }
        }
        for (_, _, arity, tuples) in &self.blocks {
            let mut counts = vec![vec![0usize; *arity]; self.n];
            for t in tuples {
                for (pos, &v) in t.iter().enumerate() {
                    counts[v][pos] += 1;
                }
            }
            for v in 0..self.n {
                keys[v].extend(counts[v].iter());
            }
        }
        assign_ids(&keys)
    }

    /// Refine `colors` to the coarsest stable partition finer than it, using
    /// position-aware tuple signatures.
    fn refine(&self, colors: &mut Vec<u32>) {
        loop {
            let before = distinct(colors);
            let mut contributions: Vec<Vec<Vec<u32>>> = vec![Vec::new(); self.n];
            for (block_idx, (_, _, _, tuples)) in self.blocks.iter().enumerate() {
                for t in tuples {
                    let tuple_colors: Vec<u32> = t.iter().map(|&v| colors[v]).collect();
                    for (pos, &v) in t.iter().enumerate() {
                        let mut item = Vec::with_capacity(tuple_colors.len() + 2);
                        item.push(block_idx as u32);
                        item.push(pos as u32);
                        item.extend(&tuple_colors);
                        contributions[v].push(item);
                    }
                }
            }
            let mut keys: Vec<(u32, Vec<Vec<u32>>)> = Vec::with_capacity(self.n);
            for (v, mut contrib) in contributions.into_iter().enumerate() {
                contrib.sort();
                keys.push((colors[v], contrib));
            }
            let mut ordered: BTreeMap<&(u32, Vec<Vec<u32>>), u32> = BTreeMap::new();
            for key in &keys {
                let next = ordered.len() as u32;
                ordered.entry(key).or_insert(next);
            }
            // Re-walk in key order so ids follow the ordering, and therefore
            // refine the previous partition (old color is the first key part).
            let mut sorted: Vec<&(u32, Vec<Vec<u32>>)> = ordered.keys().copied().collect();
            sorted.sort();
            let ids: BTreeMap<&(u32, Vec<Vec<u32>>), u32> =
                sorted.into_iter().enumerate().map(|(i, k)| (k, i as u32)).collect();
            for v in 0..self.n {
                colors[v] = ids[&keys[v]];
            }
            if distinct(colors) == before {
                return;
            }
        }
    }

    /// Lexicographically least encoding over all refinement-compatible
    /// discrete labelings.
    fn canonical_bytes(&self) -> Vec<u8> {
        let mut colors = self.initial_colors();
        let mut best: Option<Vec<u8>> = None;
        self.search(&mut colors, &mut best);
        best.expect("at least one labeling exists")
    }

    fn search(&self, colors: &mut Vec<u32>, best: &mut Option<Vec<u8>>) {
        self.refine(colors);
        let k = distinct(colors);
        if k == self.n {
            let enc = self.encode(colors);
            if best.as_ref().is_none_or(|b| enc < *b) {
                *best = Some(enc);
            }
            return;
        }
        // First color class with more than one vertex; individualize each
        // member in turn.
        let mut cell_color = 0;
        'outer: for c in 0..k as u32 {
            let mut count = 0;
            for v in 0..self.n {
                if colors[v] == c {
                    count += 1;
                    if count > 1 {
                        cell_color = c;
                        break 'outer;
                    }
                }
            }
        }
        let members: Vec<usize> = (0..self.n).filter(|&v| colors[v] == cell_color).collect();
        for v in members {
            let mut branch = colors.clone();
            branch[v] = k as u32;
            self.search(&mut branch, best);
        }
    }

    /// Encode the record under the discrete coloring (vertex v gets label
    /// `colors[v]`): universe size, then each block's relabeled sorted tuples,
    /// then constants and root. All numbers are big-endian u32.
    fn encode(&self, colors: &[u32]) -> Vec<u8> {
        let mut out = Vec::new();
        let push = |out: &mut Vec<u8>, v: u32| out.extend_from_slice(&v.to_be_bytes());
        push(&mut out, self.n as u32);
        push(&mut out, self.blocks.len() as u32);
        for (kind, name, arity, tuples) in &self.blocks {
            out.push(*kind);
            push(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            push(&mut out, *arity as u32);
            let mut relabeled: Vec<Vec<u32>> =
                tuples.iter().map(|t| t.iter().map(|&v| colors[v]).collect()).collect();
            relabeled.sort();
            relabeled.dedup();
            push(&mut out, relabeled.len() as u32);
            for t in relabeled {
                for v in t {
                    push(&mut out, v);
                }
            }
        }
        push(&mut out, self.constants.len() as u32);
        for (name, vertex) in &self.constants {
            push(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            match vertex {
                Some(v) => {
                    out.push(1);
                    push(&mut out, colors[*v]);
                }
                None => out.push(0),
            }
        }
        match self.root {
            Some(r) => {
                out.push(1);
                push(&mut out, colors[r]);
            }
            None => out.push(0),
        }
        out
    }
}

fn distinct(colors: &[u32]) -> usize {
    let mut seen: Vec<bool> = vec![false; colors.len() + 1];
    let mut count = 0;
    for &c in colors {
        let idx = c as usize;
        if !seen[idx] {
            seen[idx] = true;
            count += 1;
        }
    }
    count
}

fn assign_ids(keys: &[Vec<usize>]) -> Vec<u32> {
    let mut sorted: Vec<&Vec<usize>> = keys.iter().collect();
    sorted.sort();
    sorted.dedup();
    let ids: BTreeMap<&Vec<usize>, u32> =
        sorted.into_iter().enumerate().map(|(i, k)| (k, i as u32)).collect();
    keys.iter().map(|k| ids[k]).collect()
}

/// Canonical certificate of a record; equal certificates mean isomorphic
/// records. Errors above the vertex cap.
pub(crate) fn certificate(record: &CanonRecord, cap: usize) -> Result<Vec<u8>> {
    if record.n > cap {
        return Err(Error::CanonCapExceeded { n: record.n, cap });
    }
    Ok(record.canonical_bytes())
}

/// Canonical certificate of a whole structure (optionally rooted), hex-encoded.
pub(crate) fn certificate_hex(record: &CanonRecord, cap: usize) -> Result<String> {
    let bytes = certificate(record, cap)?;
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    Ok(out)
}

/// True iff `a` and `b` are isomorphic as structures (same signature symbol
/// names and arities, matching tables under some bijection). Vertex weights
/// are not compared.
pub fn isomorphic(a: &Structure, b: &Structure, cap: usize) -> Result<bool> {
    if a.n != b.n || a.signature != b.signature {
        return Ok(false);
    }
    let ca = certificate(&CanonRecord::of_structure(a, None), cap)?;
    let cb = certificate(&CanonRecord::of_structure(b, None), cap)?;
    Ok(ca == cb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structures::{generate, Family, Structure};

    fn cert(a: &Structure) -> Vec<u8> {
        certificate(&CanonRecord::of_structure(a, None), 32).unwrap()
    }

    #[test]
    fn relabeled_graphs_share_certificates() {
        // P4 as 0-1-2-3 and as 2-0-3-1.
        let p4 = generate(&Family::Path { n: 4 }).unwrap();
        let scrambled = Structure::graph(4, &[(2, 0), (0, 3), (3, 1)]);
        assert_eq!(cert(&p4), cert(&scrambled));
        assert!(isomorphic(&p4, &scrambled, 32).unwrap());
    }

    #[test]
    fn non_isomorphic_graphs_differ() {
        let p4 = generate(&Family::Path { n: 4 }).unwrap();
        let star = generate(&Family::Star { n: 4 }).unwrap();
        assert_ne!(cert(&p4), cert(&star));
        assert!(!isomorphic(&p4, &star, 32).unwrap());
        let c4 = generate(&Family::Cycle { n: 4 }).unwrap();
        assert!(!isomorphic(&p4, &c4, 32).unwrap());
    }

    #[test]
    fn cycles_are_canonical_regardless_of_rotation() {
        let c5 = generate(&Family::Cycle { n: 5 }).unwrap();
        let rotated = Structure::graph(5, &[(2, 3), (3, 4), (4, 0), (0, 1), (1, 2)]);
        assert_eq!(cert(&c5), cert(&rotated));
    }

    #[test]
    fn root_distinguishes_otherwise_equal_balls() {
        let p3 = generate(&Family::Path { n: 3 }).unwrap();
        let set: std::collections::BTreeSet<usize> = [0, 1, 2].into_iter().collect();
        let end = certificate(&CanonRecord::of_induced(&p3, &set, 0), 32).unwrap();
        let mid = certificate(&CanonRecord::of_induced(&p3, &set, 1), 32).unwrap();
        let other_end = certificate(&CanonRecord::of_induced(&p3, &set, 2), 32).unwrap();
        assert_eq!(end, other_end);
        assert_ne!(end, mid);
    }

    #[test]
    fn colors_break_symmetry() {
        let bw = generate(&Family::TransitiveTournamentColored { colors: "BW".to_string() }).unwrap();
        let wb = generate(&Family::TransitiveTournamentColored { colors: "WB".to_string() }).unwrap();
        assert!(!isomorphic(&bw, &wb, 32).unwrap());
        assert!(isomorphic(&bw, &bw.clone(), 32).unwrap());
    }

    #[test]
    fn cap_is_enforced() {
        let c5 = generate(&Family::Cycle { n: 5 }).unwrap();
        assert!(matches!(
            certificate(&CanonRecord::of_structure(&c5, None), 4),
            Err(Error::CanonCapExceeded { .. })
        ));
    }
}
