//! Exact and sampled evaluation: model checking, satisfying-set enumeration,
//! Stone pairings against the uniform or weighted vertex measure, scattered
//! local-sentence evaluation, and parameter profiles.
//!
//! The pairing of a formula with p free variables against a structure is the
//! measure of its satisfying set in the product measure on p-tuples: counting
//! measure `|sat| / n^p` for unweighted structures, a product of vertex
//! weights otherwise. Exact paths never touch floating point.

use crate::error::{Error, Result};
use crate::logic::{free_variables, max_var_index, validate_symbols, Formula, Term, VarId};
use crate::rational::Rational;
use crate::structures::{gaifman_graph, scattered_among, uniform_below, Structure, INFINITE_DISTANCE};
use crate::Caps;
use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use std::rc::Rc;

/// Name of the sampling PRNG, recorded in every estimate for
/// reproducibility across platforms and versions.
pub const PRNG_NAME: &str = "chacha20";

/// Nodes whose context count would exceed this are evaluated without
/// memoization, keeping memory bounded on wide enumerations.
const MEMO_CONTEXT_LIMIT: u128 = 1 << 20;

/// A pairing of one formula with one structure, exact or estimated.
///
/// Serializes flat: `{"formula":…,"structure":…,"arity":…,"exact":"2/3"}` or
/// with inline `estimate`/`half_width`/… fields for sampled values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairingResult {
    /// The formula, pretty-printed.
    pub formula: String,
    /// Content hash of the structure (see [`Structure::structure_id`]).
    pub structure: String,
    /// Tuple arity the pairing was computed at.
    pub arity: usize,
    #[serde(flatten)]
    pub value: PairingValue,
}

/// Exact rational value or a seeded Monte-Carlo estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PairingValue {
    Exact {
        exact: Rational,
    },
    Estimate {
        /// Fraction of satisfying draws.
        estimate: f64,
        /// Hoeffding half-width `sqrt(ln(2/(1-confidence)) / (2 samples))`.
        half_width: f64,
        confidence: f64,
        samples: u64,
        seed: u64,
        prng: String,
    },
}

/// Reusable model checker for one (structure, formula) pair.
///
/// Evaluation is standard Tarskian recursion with three accelerations: bound
/// short-circuiting, all-pairs Gaifman distances computed lazily once, and
/// memoization of quantified subformulas keyed by the values of their free
/// variables (so repeated contexts during tuple enumeration are not
/// re-evaluated).
pub struct Evaluator<'a> {
    a: &'a Structure,
    formula: &'a Formula,
    env: Vec<Option<usize>>,
    /// Memo for quantifier nodes: (node address, free-variable values).
    /// Sound because every memoized node lives at least as long as `'a`.
    memo: HashMap<(usize, Vec<usize>), bool>,
    /// Sorted free variables per memoized node; `None` marks nodes with too
    /// many contexts to memoize.
    free_lists: HashMap<usize, Option<Rc<Vec<VarId>>>>,
    distances: Option<Vec<Vec<u32>>>,
    min_p: usize,
}

impl<'a> Evaluator<'a> {
    /// Check the formula's symbols against the structure's signature and set
    /// up an evaluator.
    pub fn new(a: &'a Structure, formula: &'a Formula) -> Result<Self> {
        validate_symbols(formula, &a.signature)?;
        let width = max_var_index(formula) as usize + 1;
        let min_p = free_variables(formula).iter().max().copied().unwrap_or(0) as usize;
        Ok(Evaluator {
            a,
            formula,
            env: vec![None; width],
            memo: HashMap::new(),
            free_lists: HashMap::new(),
            distances: None,
            min_p,
        })
    }

    /// Least arity whose assignments cover the formula's free variables.
    pub fn min_arity(&self) -> usize {
        self.min_p
    }

    /// Does the structure satisfy the formula when `x{i}` denotes
    /// `assignment[i-1]`? Extra coordinates are permitted and ignored.
    pub fn check(&mut self, assignment: &[usize]) -> Result<bool> {
        if self.min_p > assignment.len() {
            return Err(Error::IncompleteAssignment { var: self.min_p as VarId });
        }
        for &v in assignment {
            if v >= self.a.n {
                return Err(Error::VertexOutOfRange { v, n: self.a.n });
            }
        }
        if self.env.len() < assignment.len() + 1 {
            self.env.resize(assignment.len() + 1, None);
        }
        for (i, &v) in assignment.iter().enumerate() {
            self.env[i + 1] = Some(v);
        }
        let root = self.formula;
        let result = self.eval(root);
        for slot in self.env.iter_mut() {
            *slot = None;
        }
        result
    }

    fn eval_term(&self, term: &Term) -> Result<usize> {
        match term {
            Term::Var(v) => self
                .env
                .get(*v as usize)
                .copied()
                .flatten()
                .ok_or(Error::IncompleteAssignment { var: *v }),
            Term::Const(name) => Ok(self.a.constants[name]),
            Term::App(name, args) => {
                let vals: Vec<usize> =
                    args.iter().map(|t| self.eval_term(t)).collect::<Result<_>>()?;
                self.a.apply_function(name, &vals)
            }
        }
    }

    fn distance(&mut self, u: usize, v: usize) -> u32 {
        let table = self
            .distances
            .get_or_insert_with(|| gaifman_graph(self.a).all_pairs_distances());
        table[u][v]
    }

    /// Memo key for a quantifier node: its free-variable values under the
    /// current environment. `None` when the node should not be memoized.
    fn memo_key(&mut self, f: &Formula) -> Result<Option<(usize, Vec<usize>)>> {
        let addr = f as *const Formula as usize;
        let frees = match self.free_lists.get(&addr) {
            Some(entry) => entry.clone(),
            None => {
                let list: Vec<VarId> = free_variables(f).into_iter().collect();
                let contexts = (self.a.n as u128).checked_pow(list.len() as u32);
                let entry = match contexts {
                    Some(c) if c <= MEMO_CONTEXT_LIMIT => Some(Rc::new(list)),
                    _ => None,
                };
                self.free_lists.insert(addr, entry.clone());
                entry
            }
        };
        let Some(frees) = frees else { return Ok(None) };
        let mut vals = Vec::with_capacity(frees.len());
        for &v in frees.iter() {
            vals.push(
                self.env
                    .get(v as usize)
                    .copied()
                    .flatten()
                    .ok_or(Error::IncompleteAssignment { var: v })?,
            );
        }
        Ok(Some((addr, vals)))
    }

    /// Count the vertices that, bound to `v`, make the body true (or false,
    /// with `negate`), stopping as soon as `stop` says the running count
    /// settles the answer.
    fn count_witnesses(
        &mut self,
        v: VarId,
        body: &'a Formula,
        negate: bool,
        stop: impl Fn(u64) -> bool,
    ) -> Result<u64> {
        let slot = v as usize;
        if self.env.len() <= slot {
            self.env.resize(slot + 1, None);
        }
        let saved = self.env[slot];
        let mut count = 0u64;
        for w in 0..self.a.n {
            self.env[slot] = Some(w);
            let holds = self.eval(body);
            if let Err(e) = holds {
                self.env[slot] = saved;
                return Err(e);
            }
            if holds.unwrap() != negate {
                count += 1;
                if stop(count) {
                    break;
                }
            }
        }
        self.env[slot] = saved;
        Ok(count)
    }

    fn eval(&mut self, f: &'a Formula) -> Result<bool> {
        match f {
            Formula::True => Ok(true),
            Formula::False => Ok(false),
            Formula::Rel(name, args) => {
                let tuple: Vec<usize> =
                    args.iter().map(|t| self.eval_term(t)).collect::<Result<_>>()?;
                Ok(self.a.relation_tuples(name).is_some_and(|set| set.contains(&tuple)))
            }
            Formula::Eq(s, t) => Ok(self.eval_term(s)? == self.eval_term(t)?),
            Formula::DistLe(s, t, k) => {
                let u = self.eval_term(s)?;
                let v = self.eval_term(t)?;
                let d = self.distance(u, v);
                Ok(d != INFINITE_DISTANCE && d <= *k)
            }
            Formula::Not(a) => Ok(!self.eval(a)?),
            Formula::And(a, b) => Ok(self.eval(a)? && self.eval(b)?),
            Formula::Or(a, b) => Ok(self.eval(a)? || self.eval(b)?),
            Formula::Implies(a, b) => Ok(!self.eval(a)? || self.eval(b)?),
            Formula::Iff(a, b) => Ok(self.eval(a)? == self.eval(b)?),
            Formula::Exists(v, body) => {
                let key = self.memo_key(f)?;
                if let Some(k) = &key {
                    if let Some(&hit) = self.memo.get(k) {
                        return Ok(hit);
                    }
                }
                let result = self.count_witnesses(*v, body, false, |c| c >= 1)? >= 1;
                if let Some(k) = key {
                    self.memo.insert(k, result);
                }
                Ok(result)
            }
            Formula::Forall(v, body) => {
                let key = self.memo_key(f)?;
                if let Some(k) = &key {
                    if let Some(&hit) = self.memo.get(k) {
                        return Ok(hit);
                    }
                }
                // Universal as "no counterexample", stopping at the first.
                let result = self.count_witnesses(*v, body, true, |c| c >= 1)? == 0;
                if let Some(k) = key {
                    self.memo.insert(k, result);
                }
                Ok(result)
            }
            Formula::AtLeast(a, v, body) => {
                let key = self.memo_key(f)?;
                if let Some(k) = &key {
                    if let Some(&hit) = self.memo.get(k) {
                        return Ok(hit);
                    }
                }
                let threshold = *a;
                let result = threshold == 0
                    || self.count_witnesses(*v, body, false, |c| c >= threshold)? >= threshold;
                if let Some(k) = key {
                    self.memo.insert(k, result);
                }
                Ok(result)
            }
            Formula::AtMost(b, v, body) => {
                let key = self.memo_key(f)?;
                if let Some(k) = &key {
                    if let Some(&hit) = self.memo.get(k) {
                        return Ok(hit);
                    }
                }
                let threshold = *b;
                let result =
                    self.count_witnesses(*v, body, false, |c| c > threshold)? <= threshold;
                if let Some(k) = key {
                    self.memo.insert(k, result);
                }
                Ok(result)
            }
        }
    }
}

/// Tarskian satisfaction: does the structure model the formula when `x{i}`
/// denotes `assignment[i-1]`?
pub fn models(a: &Structure, formula: &Formula, assignment: &[usize]) -> Result<bool> {
    Evaluator::new(a, formula)?.check(assignment)
}

/// Enumerate `[n]^p` in lexicographic order, calling `visit` on each tuple
/// that satisfies the formula.
pub(crate) fn for_each_satisfying(
    a: &Structure,
    formula: &Formula,
    p: usize,
    cap_tuples: u64,
    visit: &mut dyn FnMut(&[usize]),
) -> Result<()> {
    let min_p = free_variables(formula).iter().max().copied().unwrap_or(0) as usize;
    if min_p > p {
        return Err(Error::ArityTooSmall { needed: min_p, got: p });
    }
    let total = (a.n as u128)
        .checked_pow(p as u32)
        .ok_or(Error::CapExceeded { needed: u128::MAX, cap: cap_tuples })?;
    if total > cap_tuples as u128 {
        return Err(Error::CapExceeded { needed: total, cap: cap_tuples });
    }
    let mut ev = Evaluator::new(a, formula)?;
    let mut tuple = vec![0usize; p];
    'outer: loop {
        if ev.check(&tuple)? {
            visit(&tuple);
        }
        let mut i = p;
        while i > 0 {
            i -= 1;
            tuple[i] += 1;
            if tuple[i] < a.n {
                continue 'outer;
            }
            tuple[i] = 0;
        }
        return Ok(());
    }
}

/// The satisfying set `{(v1,…,vp) : A ⊨ φ(v̄)}` in lexicographic order.
pub fn satisfying_set(
    a: &Structure,
    formula: &Formula,
    p: usize,
    caps: &Caps,
) -> Result<Vec<Vec<usize>>> {
    let mut out = Vec::new();
    for_each_satisfying(a, formula, p, caps.tuples, &mut |t| out.push(t.to_vec()))?;
    Ok(out)
}

/// Exact pairing: the product-measure mass of the satisfying set at arity
/// `p` — `|sat|/n^p` for unweighted structures, the sum of weight products
/// otherwise. Always in [0, 1].
pub fn stone_pairing(a: &Structure, formula: &Formula, p: usize, caps: &Caps) -> Result<Rational> {
    if a.is_weighted() {
        let mut total = Rational::zero();
        for_each_satisfying(a, formula, p, caps.tuples, &mut |t| {
            let mass = t
                .iter()
                .fold(Rational::one(), |acc, &v| acc * a.vertex_measure(v));
            total += &mass;
        })?;
        Ok(total)
    } else {
        let mut count: u128 = 0;
        for_each_satisfying(a, formula, p, caps.tuples, &mut |_| count += 1)?;
        Ok(Rational::ratio(count, (a.n as u128).pow(p as u32)))
    }
}

/// [`stone_pairing`] wrapped in a reportable record.
pub fn stone_pairing_result(
    a: &Structure,
    formula: &Formula,
    p: usize,
    caps: &Caps,
) -> Result<PairingResult> {
    Ok(PairingResult {
        formula: formula.to_string(),
        structure: a.structure_id(),
        arity: p,
        value: PairingValue::Exact { exact: stone_pairing(a, formula, p, caps)? },
    })
}

/// Per-coordinate vertex sampler: uniform for unweighted structures, the
/// weight distribution otherwise (integer masses over a common denominator,
/// drawn by rejection so results depend only on the seed).
enum VertexSampler {
    Uniform { n: u64 },
    Weighted { cumulative: Vec<BigUint>, total: BigUint, bytes: usize, top_mask: u8 },
}

impl VertexSampler {
    fn for_structure(a: &Structure) -> Self {
        if !a.is_weighted() {
            return VertexSampler::Uniform { n: a.n as u64 };
        }
        let weights: Vec<Rational> = (0..a.n).map(|v| a.vertex_measure(v)).collect();
        let denom = weights
            .iter()
            .fold(BigUint::one(), |acc, w| acc.lcm(&w.denom().magnitude().clone()));
        let mut cumulative = Vec::with_capacity(a.n);
        let mut running = BigUint::zero();
        for w in &weights {
            let mass = w.numer().magnitude() * (&denom / w.denom().magnitude());
            running += mass;
            cumulative.push(running.clone());
        }
        let bits = running.bits().max(1);
        let bytes = bits.div_ceil(8) as usize;
        let top_bits = bits - 8 * (bytes as u64 - 1);
        let top_mask = if top_bits >= 8 { 0xff } else { (1u8 << top_bits) - 1 };
        VertexSampler::Weighted { cumulative, total: running, bytes, top_mask }
    }

    fn draw(&self, rng: &mut ChaCha20Rng) -> usize {
        match self {
            VertexSampler::Uniform { n } => uniform_below(rng, *n) as usize,
            VertexSampler::Weighted { cumulative, total, bytes, top_mask } => {
                let mut buf = vec![0u8; *bytes];
                let u = loop {
                    rng.fill_bytes(&mut buf);
                    buf[0] &= top_mask;
                    let candidate = BigUint::from_bytes_be(&buf);
                    if candidate < *total {
                        break candidate;
                    }
                };
                cumulative.partition_point(|c| *c <= u)
            }
        }
    }
}

/// Monte-Carlo pairing estimate from `samples` independent tuples drawn by
/// the structure's vertex measure. Reproducible: the same seed, sample
/// count, and structure give the same draws on every platform.
pub fn estimate_stone_pairing(
    a: &Structure,
    formula: &Formula,
    p: usize,
    samples: u64,
    seed: u64,
    confidence: f64,
) -> Result<PairingResult> {
    if samples == 0 {
        return Err(Error::InvalidParams("sample count must be >= 1".to_string()));
    }
    if !(0.0 < confidence && confidence < 1.0) {
        return Err(Error::InvalidParams(format!(
            "confidence must be strictly between 0 and 1, got {confidence}"
        )));
    }
    let mut ev = Evaluator::new(a, formula)?;
    if ev.min_arity() > p {
        return Err(Error::ArityTooSmall { needed: ev.min_arity(), got: p });
    }
    let sampler = VertexSampler::for_structure(a);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut hits = 0u64;
    let mut tuple = vec![0usize; p];
    for _ in 0..samples {
        for slot in tuple.iter_mut() {
            *slot = sampler.draw(&mut rng);
        }
        if ev.check(&tuple)? {
            hits += 1;
        }
    }
    let half_width = ((2.0 / (1.0 - confidence)).ln() / (2.0 * samples as f64)).sqrt();
    Ok(PairingResult {
        formula: formula.to_string(),
        structure: a.structure_id(),
        arity: p,
        value: PairingValue::Estimate {
            estimate: hits as f64 / samples as f64,
            half_width,
            confidence,
            samples,
            seed,
            prng: PRNG_NAME.to_string(),
        },
    })
}

/// Evaluate the basic local sentence "there are `m` vertices pairwise at
/// Gaifman distance > 2r, each satisfying ψ": the ψ-satisfiers are computed
/// first, then an exact scattered-set search runs inside them at distance
/// 2r + 1.
pub fn eval_gaifman_sentence(
    a: &Structure,
    psi: &Formula,
    r: u32,
    m: usize,
) -> Result<bool> {
    let free = free_variables(psi);
    if free != BTreeSet::from([1]) {
        let found: Vec<String> = free.iter().map(|v| format!("x{v}")).collect();
        return Err(Error::WrongFreeVariables {
            expected: "{x1}".to_string(),
            found: format!("{{{}}}", found.join(", ")),
        });
    }
    let mut ev = Evaluator::new(a, psi)?;
    let mut satisfiers = Vec::new();
    for v in 0..a.n {
        if ev.check(&[v])? {
            satisfiers.push(v);
        }
    }
    if m == 0 {
        return Ok(true);
    }
    let d = r
        .checked_mul(2)
        .and_then(|x| x.checked_add(1))
        .ok_or_else(|| Error::InvalidParams("radius too large".to_string()))?;
    let dist = gaifman_graph(a).all_pairs_distances();
    Ok(scattered_among(&dist, &satisfiers, d, m).is_some())
}

/// Exact pairings of several (formula, arity) entries in input order;
/// failures carry the offending index.
pub fn profile(a: &Structure, entries: &[(Formula, usize)], caps: &Caps) -> Result<Vec<Rational>> {
    entries
        .iter()
        .enumerate()
        .map(|(i, (f, p))| stone_pairing(a, f, *p, caps).map_err(|e| e.at_index(i)))
        .collect()
}
