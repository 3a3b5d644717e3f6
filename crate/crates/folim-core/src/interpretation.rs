//! Interpretation schemes: definable translations of structures over one
//! signature into structures over another, together with the matching
//! formula transport.
//!
//! A basic scheme of exponent k sends a structure A to a structure on
//! universe A^k whose relations are carved out by formulas over A. A full
//! scheme additionally quotients A^k by a definable equivalence relation and
//! restricts the domain to a definable subset. Transporting a formula
//! through a scheme rewrites it over the source signature so that
//! satisfaction is preserved; for basic schemes the Stone pairing is
//! preserved as well, since the product measure on (A^k)^p is the product
//! measure on A^{kp}. No measure correspondence is defined for quotients
//! (classes have different sizes), so full-scheme outputs are unweighted and
//! no pairing identity is claimed for them.

use crate::error::{Error, Result};
use crate::evaluation::{for_each_satisfying, stone_pairing, Evaluator};
use crate::logic::{
    classify_fragment, expand_counting, free_variables, max_var_index, parse_formula,
    rename_all_binders, substitute_free, validate_symbols, Formula, Term, VarId,
};
use crate::rational::Rational;
use crate::structures::{uniform_below, Signature, Structure};
use crate::Caps;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// A basic interpretation scheme: exponent k, source and target signatures,
/// and one defining formula per target relation.
///
/// The defining formula for a relation of arity r reads its arguments as r
/// blocks of k source variables, `x1..xk` for the first argument, `x(k+1)..x(2k)`
/// for the second, and so on. The target signature must be purely
/// relational.
#[derive(Clone, Debug)]
pub struct BasicScheme {
    k: usize,
    source: Signature,
    target: Signature,
    theta: BTreeMap<String, Formula>,
}

impl BasicScheme {
    pub fn new(
        k: usize,
        source: Signature,
        target: Signature,
        theta: BTreeMap<String, Formula>,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParams("scheme exponent k must be at least 1".to_string()));
        }
        source.validate()?;
        target.validate()?;
        if !target.functions.is_empty() || !target.constants.is_empty() {
            return Err(Error::SignatureMismatch(
                "the target signature must be purely relational (no functions or constants)"
                    .to_string(),
            ));
        }
        for decl in &target.relations {
            let formula = theta.get(&decl.name).ok_or_else(|| {
                Error::InvalidParams(format!(
                    "no defining formula for target relation `{}`",
                    decl.name
                ))
            })?;
            validate_symbols(formula, &source)?;
            let bound = k.checked_mul(decl.arity).ok_or_else(|| {
                Error::InvalidParams("k times relation arity overflows".to_string())
            })?;
            check_free_bound(formula, bound, &format!("defining formula for `{}`", decl.name))?;
        }
        for name in theta.keys() {
            if target.relation_arity(name).is_none() {
                return Err(Error::UnknownSymbol {
                    name: name.clone(),
                    context: "defining formula for a relation not in the target signature"
                        .to_string(),
                });
            }
        }
        Ok(BasicScheme { k, source, target, theta })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn source(&self) -> &Signature {
        &self.source
    }

    pub fn target(&self) -> &Signature {
        &self.target
    }
}

/// A full interpretation scheme: a basic scheme plus a definable equivalence
/// `E` on k-tuples (free variables within `x1..x(2k)`) and a domain formula
/// `θ0` (free variables within `x1..xk`).
///
/// That `E` really is an equivalence on the given structure, and that every
/// defining formula is constant on E-classes, is verified exhaustively each
/// time the scheme is applied; violations are hard errors carrying a
/// counterexample.
#[derive(Clone, Debug)]
pub struct FullScheme {
    basic: BasicScheme,
    equiv: Formula,
    theta0: Formula,
}

impl FullScheme {
    pub fn new(basic: BasicScheme, equiv: Formula, theta0: Formula) -> Result<Self> {
        validate_symbols(&equiv, &basic.source)?;
        validate_symbols(&theta0, &basic.source)?;
        check_free_bound(&equiv, 2 * basic.k, "the equivalence formula")?;
        check_free_bound(&theta0, basic.k, "the domain formula")?;
        Ok(FullScheme { basic, equiv, theta0 })
    }

    pub fn basic(&self) -> &BasicScheme {
        &self.basic
    }

    pub fn equivalence(&self) -> &Formula {
        &self.equiv
    }

    pub fn domain_formula(&self) -> &Formula {
        &self.theta0
    }
}

fn check_free_bound(formula: &Formula, bound: usize, what: &str) -> Result<()> {
    if let Some(&max) = free_variables(formula).iter().max() {
        if max as usize > bound {
            return Err(Error::InvalidParams(format!(
                "{what} uses x{max}; free variables must lie within x1..x{bound}"
            )));
        }
    }
    Ok(())
}

/// Either kind of interpretation scheme.
#[derive(Clone, Debug)]
pub enum Scheme {
    Basic(BasicScheme),
    Full(FullScheme),
}

impl Scheme {
    fn basic_part(&self) -> &BasicScheme {
        match self {
            Scheme::Basic(s) => s,
            Scheme::Full(s) => &s.basic,
        }
    }

    pub fn k(&self) -> usize {
        self.basic_part().k
    }

    pub fn source(&self) -> &Signature {
        &self.basic_part().source
    }

    pub fn target(&self) -> &Signature {
        &self.basic_part().target
    }

    /// Apply the scheme to a structure over its source signature.
    pub fn apply(&self, a: &Structure, caps: &Caps) -> Result<Structure> {
        match self {
            Scheme::Basic(s) => apply_basic(s, a, caps),
            Scheme::Full(s) => apply_full(s, a, caps),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemeRepr {
    kind: String,
    k: usize,
    source: Signature,
    target: Signature,
    theta: BTreeMap<String, String>,
    #[serde(rename = "E", default)]
    equiv: Option<String>,
    #[serde(default)]
    theta0: Option<String>,
}

/// Parse a scheme from its JSON representation:
/// `{"kind":"basic"|"full","k":…,"source":{…},"target":{…},"theta":{"R":"formula"},…}`
/// with `"E"` and `"theta0"` present exactly for full schemes. Formulas are
/// parsed against the source signature.
pub fn load_scheme(text: &str) -> Result<Scheme> {
    let repr: SchemeRepr = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        col: e.column(),
        msg: e.to_string(),
    })?;
    let mut theta = BTreeMap::new();
    for (name, formula_text) in &repr.theta {
        theta.insert(name.clone(), parse_formula(formula_text, Some(&repr.source))?);
    }
    let basic = BasicScheme::new(repr.k, repr.source.clone(), repr.target.clone(), theta)?;
    match repr.kind.as_str() {
        "basic" => {
            if repr.equiv.is_some() || repr.theta0.is_some() {
                return Err(Error::InvalidParams(
                    "a basic scheme does not take \"E\" or \"theta0\"".to_string(),
                ));
            }
            Ok(Scheme::Basic(basic))
        }
        "full" => {
            let equiv = repr.equiv.as_deref().ok_or_else(|| {
                Error::InvalidParams("a full scheme needs an \"E\" formula".to_string())
            })?;
            let theta0 = repr.theta0.as_deref().ok_or_else(|| {
                Error::InvalidParams("a full scheme needs a \"theta0\" formula".to_string())
            })?;
            let equiv = parse_formula(equiv, Some(&repr.source))?;
            let theta0 = parse_formula(theta0, Some(&repr.source))?;
            Ok(Scheme::Full(FullScheme::new(basic, equiv, theta0)?))
        }
        other => Err(Error::InvalidParams(format!(
            "unknown scheme kind {other:?} (expected \"basic\" or \"full\")"
        ))),
    }
}

/// Index of a k-tuple in the lexicographic enumeration of `[n]^k`.
fn encode_block(block: &[usize], n: usize) -> usize {
    block.iter().fold(0, |acc, &v| acc * n + v)
}

fn decode_block_into(mut index: usize, n: usize, out: &mut [usize]) {
    for slot in out.iter_mut().rev() {
        *slot = index % n;
        index /= n;
    }
}

fn decode_block(index: usize, n: usize, k: usize) -> Vec<usize> {
    let mut out = vec![0usize; k];
    decode_block_into(index, n, &mut out);
    out
}

fn power_within_cap(n: usize, k: usize, cap: u64) -> Result<usize> {
    let total = (n as u128)
        .checked_pow(k as u32)
        .ok_or(Error::CapExceeded { needed: u128::MAX, cap })?;
    if total > cap as u128 {
        return Err(Error::CapExceeded { needed: total, cap });
    }
    Ok(total as usize)
}

fn check_source(scheme: &BasicScheme, a: &Structure) -> Result<()> {
    if a.signature != scheme.source {
        return Err(Error::SignatureMismatch(
            "the structure's signature differs from the scheme's source signature".to_string(),
        ));
    }
    Ok(())
}

/// Apply a basic scheme: the output universe is `A^k` in lexicographic
/// order, and a target relation holds on a tuple of blocks exactly when its
/// defining formula holds on the concatenated block entries. Weighted inputs
/// get k-fold product weights, so uniform maps to uniform and the output is
/// again a modeling.
pub fn apply_basic(scheme: &BasicScheme, a: &Structure, caps: &Caps) -> Result<Structure> {
    check_source(scheme, a)?;
    let k = scheme.k;
    let m = power_within_cap(a.n, k, caps.tuples)?;
    let mut out = Structure::new(scheme.target.clone(), m);
    for decl in &scheme.target.relations {
        let theta = &scheme.theta[&decl.name];
        let mut tuples = std::collections::BTreeSet::new();
        for_each_satisfying(a, theta, k * decl.arity, caps.tuples, &mut |t| {
            tuples.insert(t.chunks(k).map(|block| encode_block(block, a.n)).collect());
        })?;
        out.relations.insert(decl.name.clone(), tuples);
    }
    if a.is_weighted() {
        let weights = (0..m)
            .map(|i| {
                decode_block(i, a.n, k)
                    .iter()
                    .fold(Rational::one(), |acc, &v| acc * a.vertex_measure(v))
            })
            .collect();
        out.weights = Some(weights);
    }
    out.validate()?;
    Ok(out)
}

/// Apply a full scheme: verify that `E` is an equivalence on `A^k` and that
/// every defining formula (and `θ0`) is constant on E-classes, then build
/// the structure on the classes satisfying `θ0`. Class representatives are
/// the lexicographically least members, and the universe lists classes by
/// representative in ascending order. The output is unweighted.
pub fn apply_full(scheme: &FullScheme, a: &Structure, caps: &Caps) -> Result<Structure> {
    full_quotient(scheme, a, caps).map(|(b, _)| b)
}

/// Shared core of [`apply_full`] that also returns, for each output vertex,
/// the tuple index of its class representative in `A^k`.
fn full_quotient(
    scheme: &FullScheme,
    a: &Structure,
    caps: &Caps,
) -> Result<(Structure, Vec<usize>)> {
    let basic = &scheme.basic;
    check_source(basic, a)?;
    let k = basic.k;
    let m = power_within_cap(a.n, k, caps.tuples)?;
    power_within_cap(a.n, 2 * k, caps.tuples)?;
    let tuple_desc = |i: usize| {
        let block = decode_block(i, a.n, k);
        format!("({})", block.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", "))
    };

    let mut related = vec![false; m * m];
    for_each_satisfying(a, &scheme.equiv, 2 * k, caps.tuples, &mut |t| {
        related[encode_block(&t[..k], a.n) * m + encode_block(&t[k..], a.n)] = true;
    })?;
    for i in 0..m {
        if !related[i * m + i] {
            return Err(Error::NotEquivalence {
                law: "reflexive",
                pair: format!("{0} vs {0}", tuple_desc(i)),
            });
        }
    }
    for i in 0..m {
        for j in (i + 1)..m {
            if related[i * m + j] != related[j * m + i] {
                return Err(Error::NotEquivalence {
                    law: "symmetric",
                    pair: format!("{} vs {}", tuple_desc(i), tuple_desc(j)),
                });
            }
        }
    }
    // Union-find with the least member as root, so classes come out keyed by
    // their lexicographically least representative.
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut parent: Vec<usize> = (0..m).collect();
    for i in 0..m {
        for j in (i + 1)..m {
            if related[i * m + j] {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..m {
        members.entry(find(&mut parent, i)).or_default().push(i);
    }
    // Tuples connected through E must be pairwise related, or E is not
    // transitive.
    for class in members.values() {
        for &i in class {
            for &j in class {
                if !related[i * m + j] {
                    return Err(Error::NotEquivalence {
                        law: "transitive",
                        pair: format!("{} vs {}", tuple_desc(i), tuple_desc(j)),
                    });
                }
            }
        }
    }

    let mut sat0 = vec![false; m];
    for_each_satisfying(a, &scheme.theta0, k, caps.tuples, &mut |t| {
        sat0[encode_block(t, a.n)] = true;
    })?;
    for class in members.values() {
        for &i in class {
            if sat0[i] != sat0[class[0]] {
                let (holds, fails) = if sat0[i] { (i, class[0]) } else { (class[0], i) };
                return Err(Error::NotCompatible {
                    theta: "theta0".to_string(),
                    detail: format!(
                        "holds on {} but not on the E-equivalent tuple {}",
                        tuple_desc(holds),
                        tuple_desc(fails)
                    ),
                });
            }
        }
    }

    let class_count = members.len();
    let mut class_of = vec![0usize; m];
    let mut domain_index: Vec<Option<usize>> = Vec::with_capacity(class_count);
    let mut reps = Vec::new();
    for (pos, (rep, class)) in members.iter().enumerate() {
        for &i in class {
            class_of[i] = pos;
        }
        if sat0[*rep] {
            domain_index.push(Some(reps.len()));
            reps.push(*rep);
        } else {
            domain_index.push(None);
        }
    }

    let mut out = Structure::new(basic.target.clone(), reps.len());
    for decl in &basic.target.relations {
        let theta = &basic.theta[&decl.name];
        let r = decl.arity;
        power_within_cap(a.n, k * r, caps.tuples)?;
        let cv_total = (class_count as u128).pow(r as u32) as usize;
        // The defining formula must be constant on each vector of E-classes;
        // `values` records the first value seen per class vector and
        // `first_seen` the block vector that produced it, for error reports.
        let mut values: Vec<i8> = vec![-1; cv_total];
        let mut first_seen: Vec<usize> = vec![0; cv_total];
        let mut ev = Evaluator::new(a, theta)?;
        let mut blocks = vec![0usize; r];
        let mut assignment = vec![0usize; k * r];
        let blocks_desc = |code: usize| {
            let mut parts = Vec::with_capacity(r);
            let mut rest = code;
            for _ in 0..r {
                parts.push(rest % m);
                rest /= m;
            }
            parts.reverse();
            format!(
                "({})",
                parts.iter().map(|&b| tuple_desc(b)).collect::<Vec<_>>().join(", ")
            )
        };
        'outer: loop {
            for (pos, &b) in blocks.iter().enumerate() {
                decode_block_into(b, a.n, &mut assignment[pos * k..(pos + 1) * k]);
            }
            let val = ev.check(&assignment)?;
            let cv = blocks.iter().fold(0usize, |acc, &b| acc * class_count + class_of[b]);
            let bv = blocks.iter().fold(0usize, |acc, &b| acc * m + b);
            if values[cv] < 0 {
                values[cv] = val as i8;
                first_seen[cv] = bv;
                if val {
                    if let Some(tuple) = blocks
                        .iter()
                        .map(|&b| domain_index[class_of[b]])
                        .collect::<Option<Vec<usize>>>()
                    {
                        out.add_tuple(&decl.name, tuple);
                    }
                }
            } else if (values[cv] == 1) != val {
                let (holds, fails) =
                    if val { (bv, first_seen[cv]) } else { (first_seen[cv], bv) };
                return Err(Error::NotCompatible {
                    theta: decl.name.clone(),
                    detail: format!(
                        "holds on {} but not on the E-equivalent arguments {}",
                        blocks_desc(holds),
                        blocks_desc(fails)
                    ),
                });
            }
            let mut i = r;
            while i > 0 {
                i -= 1;
                blocks[i] += 1;
                if blocks[i] < m {
                    continue 'outer;
                }
                blocks[i] = 0;
            }
            break;
        }
    }
    out.validate()?;
    Ok((out, reps))
}

/// Rewrite a formula over the target signature into one over the source
/// signature with the same meaning: each variable becomes a k-block, atoms
/// are replaced by their defining formulas, equality becomes block-wise
/// equality (basic) or the scheme's `E` (full), and quantifiers become
/// blocks of quantifiers, relativized to `θ0` in the full case. Counting
/// quantifiers are expanded first; distance guards do not survive
/// interpretation and are rejected.
pub fn transport_formula(scheme: &Scheme, phi: &Formula) -> Result<Formula> {
    let basic = scheme.basic_part();
    validate_symbols(phi, &basic.target)?;
    let phi = expand_counting(phi);
    if classify_fragment(&phi).uses_dist_guards {
        return Err(Error::DistGuard);
    }
    let max_block = (max_var_index(&phi) as u64) * (basic.k as u64);
    if max_block >= u32::MAX as u64 {
        return Err(Error::InvalidParams(
            "variable indices overflow during transport".to_string(),
        ));
    }
    let mut top = max_block as VarId;
    for theta in basic.theta.values() {
        top = top.max(max_var_index(theta));
    }
    if let Scheme::Full(full) = scheme {
        top = top.max(max_var_index(&full.equiv)).max(max_var_index(&full.theta0));
    }
    let mut fresh = top + 1;
    transport_walk(scheme, &phi, basic.k as VarId, &mut fresh)
}

/// The j-th source variable (1-based) of the block standing for target
/// variable `v`.
fn block_var(v: VarId, j: VarId, k: VarId) -> VarId {
    (v - 1) * k + j
}

fn expect_var(t: &Term) -> VarId {
    match t {
        Term::Var(v) => *v,
        // A purely relational target signature admits no constant or
        // function terms, and the formula was validated against it.
        _ => unreachable!("non-variable term over a purely relational signature"),
    }
}

/// Splice a copy of a scheme formula over fresh binders, with its free
/// variables `x1..x(len(args)·k)` redirected block-wise to the blocks of
/// `args`.
fn splice(theta: &Formula, args: &[VarId], k: VarId, fresh: &mut VarId) -> Formula {
    let renamed = rename_all_binders(theta, fresh);
    let mut map = BTreeMap::new();
    for (pos, &v) in args.iter().enumerate() {
        for j in 1..=k {
            map.insert(pos as VarId * k + j, block_var(v, j, k));
        }
    }
    substitute_free(&renamed, &map, fresh)
}

fn transport_walk(scheme: &Scheme, f: &Formula, k: VarId, fresh: &mut VarId) -> Result<Formula> {
    let quantify = |v: VarId,
                    mut core: Formula,
                    make: fn(VarId, Box<Formula>) -> Formula|
     -> Formula {
        for j in (1..=k).rev() {
            core = make(block_var(v, j, k), Box::new(core));
        }
        core
    };
    match f {
        Formula::True => Ok(Formula::True),
        Formula::False => Ok(Formula::False),
        Formula::Rel(name, args) => {
            let theta = &scheme.basic_part().theta[name];
            let vars: Vec<VarId> = args.iter().map(expect_var).collect();
            Ok(splice(theta, &vars, k, fresh))
        }
        Formula::Eq(s, t) => {
            let (u, v) = (expect_var(s), expect_var(t));
            match scheme {
                Scheme::Basic(_) => {
                    let mut conj: Option<Formula> = None;
                    for j in 1..=k {
                        let atom = Formula::Eq(
                            Term::Var(block_var(u, j, k)),
                            Term::Var(block_var(v, j, k)),
                        );
                        conj = Some(match conj {
                            None => atom,
                            Some(c) => Formula::And(Box::new(c), Box::new(atom)),
                        });
                    }
                    Ok(conj.expect("k >= 1"))
                }
                Scheme::Full(full) => Ok(splice(&full.equiv, &[u, v], k, fresh)),
            }
        }
        Formula::DistLe(..) => Err(Error::DistGuard),
        Formula::Not(a) => Ok(Formula::Not(Box::new(transport_walk(scheme, a, k, fresh)?))),
        Formula::And(a, b) => Ok(Formula::And(
            Box::new(transport_walk(scheme, a, k, fresh)?),
            Box::new(transport_walk(scheme, b, k, fresh)?),
        )),
        Formula::Or(a, b) => Ok(Formula::Or(
            Box::new(transport_walk(scheme, a, k, fresh)?),
            Box::new(transport_walk(scheme, b, k, fresh)?),
        )),
        Formula::Implies(a, b) => Ok(Formula::Implies(
            Box::new(transport_walk(scheme, a, k, fresh)?),
            Box::new(transport_walk(scheme, b, k, fresh)?),
        )),
        Formula::Iff(a, b) => Ok(Formula::Iff(
            Box::new(transport_walk(scheme, a, k, fresh)?),
            Box::new(transport_walk(scheme, b, k, fresh)?),
        )),
        Formula::Exists(v, body) => {
            let inner = transport_walk(scheme, body, k, fresh)?;
            let core = match scheme {
                Scheme::Basic(_) => inner,
                Scheme::Full(full) => Formula::And(
                    Box::new(splice(&full.theta0, &[*v], k, fresh)),
                    Box::new(inner),
                ),
            };
            Ok(quantify(*v, core, Formula::Exists))
        }
        Formula::Forall(v, body) => {
            let inner = transport_walk(scheme, body, k, fresh)?;
            let core = match scheme {
                Scheme::Basic(_) => inner,
                Scheme::Full(full) => Formula::Implies(
                    Box::new(splice(&full.theta0, &[*v], k, fresh)),
                    Box::new(inner),
                ),
            };
            Ok(quantify(*v, core, Formula::Forall))
        }
        Formula::AtLeast(..) | Formula::AtMost(..) => {
            unreachable!("counting quantifiers are expanded before transport")
        }
    }
}

/// How to drive the pointwise satisfaction check.
#[derive(Clone, Copy, Debug)]
pub enum VerifyMode {
    /// Every tuple over the target universe (within the tuple cap).
    Exhaustive,
    /// `trials` seeded uniform random tuples.
    Sample { trials: u64, seed: u64 },
}

/// A tuple on which the transported formula disagrees with the original.
#[derive(Clone, Debug, Serialize)]
pub struct TransportCounterexample {
    /// Tuple of target-structure vertices.
    pub target_tuple: Vec<usize>,
    /// The corresponding source assignment (blocks of the representatives).
    pub source_assignment: Vec<usize>,
    /// Truth value on the target side; the source side is its negation.
    pub target_holds: bool,
}

/// Outcome of checking a transported formula against the applied scheme.
#[derive(Clone, Debug, Serialize)]
pub struct TransportCheck {
    pub formula: String,
    pub transported: String,
    /// Arity of the pointwise check (largest free-variable index).
    pub arity: usize,
    /// Tuples compared.
    pub checked: u64,
    pub pointwise: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<TransportCounterexample>,
    /// Exact pairings on both sides — basic schemes only, where the product
    /// measure transports.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairing_target: Option<Rational>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairing_source: Option<Rational>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairing_equal: Option<bool>,
    pub ok: bool,
}

/// Apply the scheme, transport the formula, and check that satisfaction
/// agrees on every examined tuple — all tuples or a seeded sample. For basic
/// schemes the exact pairing identity `⟨φ, I(A)⟩ = ⟨Ĩ(φ), A⟩` is checked as
/// well. Any mismatch is reported with a counterexample.
pub fn verify_transport(
    scheme: &Scheme,
    a: &Structure,
    phi: &Formula,
    mode: VerifyMode,
    caps: &Caps,
) -> Result<TransportCheck> {
    let psi = transport_formula(scheme, phi)?;
    let k = scheme.k();
    let (b, reps) = match scheme {
        Scheme::Basic(s) => (apply_basic(s, a, caps)?, None),
        Scheme::Full(s) => {
            let (b, reps) = full_quotient(s, a, caps)?;
            (b, Some(reps))
        }
    };
    let p = free_variables(phi).iter().max().copied().unwrap_or(0) as usize;
    let (pointwise, checked, counterexample) =
        pointwise_check(a, &b, phi, &psi, k, reps.as_deref(), p, mode, caps)?;
    let (pairing_target, pairing_source, pairing_equal) = match scheme {
        Scheme::Basic(_) => {
            let target = stone_pairing(&b, phi, p, caps)?;
            let source = stone_pairing(a, &psi, k * p, caps)?;
            let equal = target == source;
            (Some(target), Some(source), Some(equal))
        }
        Scheme::Full(_) => (None, None, None),
    };
    let ok = pointwise && pairing_equal.unwrap_or(true);
    Ok(TransportCheck {
        formula: phi.to_string(),
        transported: psi.to_string(),
        arity: p,
        checked,
        pointwise,
        counterexample,
        pairing_target,
        pairing_source,
        pairing_equal,
        ok,
    })
}

/// Compare `b ⊨ φ(tuple)` with `a ⊨ ψ(blocks of the tuple's representative
/// tuples)` over exhaustive or sampled tuples. `reps` maps target vertices
/// to tuple indices in `A^k` (`None` for basic schemes, where target vertex
/// i IS tuple index i).
#[allow(clippy::too_many_arguments)]
fn pointwise_check(
    a: &Structure,
    b: &Structure,
    phi: &Formula,
    psi: &Formula,
    k: usize,
    reps: Option<&[usize]>,
    p: usize,
    mode: VerifyMode,
    caps: &Caps,
) -> Result<(bool, u64, Option<TransportCounterexample>)> {
    let mut ev_target = Evaluator::new(b, phi)?;
    let mut ev_source = Evaluator::new(a, psi)?;
    let mut assignment = vec![0usize; k * p];
    let mut checked = 0u64;
    let compare = |tuple: &[usize],
                       ev_target: &mut Evaluator,
                       ev_source: &mut Evaluator,
                       assignment: &mut [usize]|
     -> Result<Option<TransportCounterexample>> {
        for (pos, &bv) in tuple.iter().enumerate() {
            let index = reps.map_or(bv, |r| r[bv]);
            decode_block_into(index, a.n, &mut assignment[pos * k..(pos + 1) * k]);
        }
        let target_holds = ev_target.check(tuple)?;
        let source_holds = ev_source.check(assignment)?;
        if target_holds == source_holds {
            return Ok(None);
        }
        Ok(Some(TransportCounterexample {
            target_tuple: tuple.to_vec(),
            source_assignment: assignment.to_vec(),
            target_holds,
        }))
    };
    match mode {
        VerifyMode::Exhaustive => {
            power_within_cap(b.n, p, caps.tuples)?;
            let mut tuple = vec![0usize; p];
            'outer: loop {
                checked += 1;
                if let Some(cex) =
                    compare(&tuple, &mut ev_target, &mut ev_source, &mut assignment)?
                {
                    return Ok((false, checked, Some(cex)));
                }
                let mut i = p;
                while i > 0 {
                    i -= 1;
                    tuple[i] += 1;
                    if tuple[i] < b.n {
                        continue 'outer;
                    }
                    tuple[i] = 0;
                }
                break;
            }
        }
        VerifyMode::Sample { trials, seed } => {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let mut tuple = vec![0usize; p];
            for _ in 0..trials {
                for slot in tuple.iter_mut() {
                    *slot = uniform_below(&mut rng, b.n as u64) as usize;
                }
                checked += 1;
                if let Some(cex) =
                    compare(&tuple, &mut ev_target, &mut ev_source, &mut assignment)?
                {
                    return Ok((false, checked, Some(cex)));
                }
            }
        }
    }
    Ok((true, checked, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::models;

    fn parse(text: &str) -> Formula {
        parse_formula(text, None).unwrap()
    }

    fn basic_graph_scheme(k: usize, edge_formula: &str) -> Scheme {
        Scheme::Basic(
            BasicScheme::new(
                k,
                Signature::graph(),
                Signature::graph(),
                BTreeMap::from([("E".to_string(), parse(edge_formula))]),
            )
            .unwrap(),
        )
    }

    fn identity_scheme() -> Scheme {
        basic_graph_scheme(1, "x1~x2")
    }

    fn complement_scheme() -> Scheme {
        basic_graph_scheme(1, "!(x1~x2) & !(x1=x2)")
    }

    fn full_graph_scheme(k: usize, edge: &str, equiv: &str, theta0: &str) -> Scheme {
        let basic = BasicScheme::new(
            k,
            Signature::graph(),
            Signature::graph(),
            BTreeMap::from([("E".to_string(), parse(edge))]),
        )
        .unwrap();
        Scheme::Full(FullScheme::new(basic, parse(equiv), parse(theta0)).unwrap())
    }

    fn cycle(n: usize) -> Structure {
        let edges: Vec<(usize, usize)> = (0..n).map(|u| (u, (u + 1) % n)).collect();
        Structure::graph(n, &edges)
    }

    fn clique(n: usize) -> Structure {
        let edges: Vec<(usize, usize)> =
            (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        Structure::graph(n, &edges)
    }

    #[test]
    fn scheme_validation() {
        // Exponent 0, non-relational target, missing and out-of-bounds
        // defining formulas are all rejected.
        let theta = BTreeMap::from([("E".to_string(), parse("x1~x2"))]);
        assert!(matches!(
            BasicScheme::new(0, Signature::graph(), Signature::graph(), theta.clone()),
            Err(Error::InvalidParams(_))
        ));
        let mut with_const = Signature::graph();
        with_const.constants.push("c".to_string());
        assert!(matches!(
            BasicScheme::new(1, Signature::graph(), with_const, theta.clone()),
            Err(Error::SignatureMismatch(_))
        ));
        assert!(matches!(
            BasicScheme::new(1, Signature::graph(), Signature::graph(), BTreeMap::new()),
            Err(Error::InvalidParams(_))
        ));
        let wide = BTreeMap::from([("E".to_string(), parse("x1~x3"))]);
        assert!(matches!(
            BasicScheme::new(1, Signature::graph(), Signature::graph(), wide),
            Err(Error::InvalidParams(_))
        ));
        // k = 2 admits x1..x4 for a binary relation.
        assert!(BasicScheme::new(
            2,
            Signature::graph(),
            Signature::graph(),
            BTreeMap::from([("E".to_string(), parse("x1~x3 & x2~x4"))]),
        )
        .is_ok());
    }

    #[test]
    fn identity_scheme_maps_graphs_to_themselves() {
        let caps = Caps::default();
        for g in [cycle(5), clique(4), Structure::graph(3, &[(0, 1)])] {
            assert_eq!(identity_scheme().apply(&g, &caps).unwrap(), g);
        }
    }

    #[test]
    fn complement_of_triangle_is_edgeless() {
        let caps = Caps::default();
        let out = complement_scheme().apply(&clique(3), &caps).unwrap();
        assert_eq!(out.n, 3);
        assert!(out.relation_tuples("E").map_or(true, |t| t.is_empty()));
        // Complementing twice restores the graph.
        let c5 = cycle(5);
        let back = complement_scheme()
            .apply(&complement_scheme().apply(&c5, &caps).unwrap(), &caps)
            .unwrap();
        assert_eq!(back, c5);
    }

    #[test]
    fn square_scheme_on_first_coordinates() {
        // k = 2, relation holds when the first coordinates agree.
        let scheme = basic_graph_scheme(2, "x1=x3");
        let out = scheme.apply(&clique(2), &Caps::default()).unwrap();
        assert_eq!(out.n, 4);
        let tuples = out.relation_tuples("E").unwrap();
        assert_eq!(tuples.len(), 8);
        // (0,1) is index 1 and (0,0) is index 0: first coordinates agree.
        assert!(tuples.contains(&vec![1, 0]));
        // (0,1) vs (1,0) = index 2: first coordinates differ.
        assert!(!tuples.contains(&vec![1, 2]));
    }

    #[test]
    fn product_weights_transport_the_measure() {
        let mut g = clique(2);
        g.weights = Some(vec![Rational::new(1, 3), Rational::new(2, 3)]);
        g.validate().unwrap();
        let caps = Caps::default();
        let out = basic_graph_scheme(2, "x1~x3").apply(&g, &caps).unwrap();
        assert_eq!(out.vertex_measure(0), Rational::new(1, 9));
        assert_eq!(out.vertex_measure(3), Rational::new(4, 9));
        let total: Rational = (0..4).map(|v| out.vertex_measure(v)).sum();
        assert!(total.is_one());
    }

    #[test]
    fn full_identity_quotient_is_the_structure_itself() {
        let scheme = full_graph_scheme(1, "x1~x2", "x1=x2", "true");
        let g = Structure::graph(3, &[(0, 1), (1, 2)]);
        assert_eq!(scheme.apply(&g, &Caps::default()).unwrap(), g);
    }

    #[test]
    fn full_collapse_to_a_point() {
        // E = ⊤ merges everything; on an edgeless graph the edge formula is
        // constant (false), so the quotient is a single vertex.
        let scheme = full_graph_scheme(1, "x1~x2", "true", "true");
        let out = scheme.apply(&Structure::graph(3, &[]), &Caps::default()).unwrap();
        assert_eq!(out.n, 1);
        assert!(out.relation_tuples("E").map_or(true, |t| t.is_empty()));
        // On K2 the edge formula distinguishes (0,1) from (0,0): not
        // E-compatible.
        let err = scheme.apply(&clique(2), &Caps::default()).unwrap_err();
        assert!(matches!(err, Error::NotCompatible { ref theta, .. } if theta == "E"));
    }

    #[test]
    fn full_domain_restriction_drops_isolated_vertices() {
        let scheme = full_graph_scheme(1, "x1~x2", "x1=x2", "exists y (y~x1)");
        let g = Structure::graph(3, &[(0, 1)]);
        let out = scheme.apply(&g, &Caps::default()).unwrap();
        assert_eq!(out, clique(2));
    }

    #[test]
    fn equivalence_laws_are_verified() {
        let caps = Caps::default();
        let p3 = Structure::graph(3, &[(0, 1), (1, 2)]);
        // Adjacency is not reflexive.
        let err = full_graph_scheme(1, "x1~x2", "x1~x2", "true")
            .apply(&p3, &caps)
            .unwrap_err();
        assert!(matches!(err, Error::NotEquivalence { law: "reflexive", .. }));
        // Reflexive closure of adjacency is not transitive on a path.
        let err = full_graph_scheme(1, "x1~x2", "x1=x2 | x1~x2", "true")
            .apply(&p3, &caps)
            .unwrap_err();
        assert!(matches!(err, Error::NotEquivalence { law: "transitive", .. }));
        // A one-directional relation is not symmetric.
        let sig = Signature {
            relations: vec![crate::structures::SymbolDecl::new("R", 2)],
            ..Signature::default()
        };
        let mut d = Structure::new(sig.clone(), 2);
        d.add_tuple("R", vec![0, 1]);
        d.validate().unwrap();
        let basic = BasicScheme::new(
            1,
            sig.clone(),
            Signature::graph(),
            BTreeMap::from([("E".to_string(), parse_formula("R(x1,x2)", Some(&sig)).unwrap())]),
        )
        .unwrap();
        let scheme = Scheme::Full(
            FullScheme::new(
                basic,
                parse_formula("x1=x2 | R(x1,x2)", Some(&sig)).unwrap(),
                Formula::True,
            )
            .unwrap(),
        );
        let err = scheme.apply(&d, &caps).unwrap_err();
        assert!(matches!(err, Error::NotEquivalence { law: "symmetric", .. }));
    }

    #[test]
    fn domain_formula_must_respect_classes() {
        // One class, but θ0 separates the isolated vertex.
        let scheme = full_graph_scheme(1, "!(x1=x1)", "true", "exists y (y~x1)");
        let err = scheme.apply(&Structure::graph(3, &[(0, 1)]), &Caps::default()).unwrap_err();
        assert!(matches!(err, Error::NotCompatible { ref theta, .. } if theta == "theta0"));
    }

    #[test]
    fn transport_substitutes_atoms() {
        let transported = transport_formula(&complement_scheme(), &parse("x1~x2")).unwrap();
        assert_eq!(transported, parse("!(x1~x2) & !(x1=x2)"));
        // The identity scheme leaves formulas unchanged.
        for text in ["x1~x2", "exists x2 (x2~x1)", "forall x2 (x2~x1 | x1=x2)"] {
            let phi = parse(text);
            assert_eq!(transport_formula(&identity_scheme(), &phi).unwrap(), phi);
        }
    }

    #[test]
    fn transport_expands_equality_blockwise() {
        let scheme = basic_graph_scheme(2, "x1~x3 & x2~x4");
        let transported = transport_formula(&scheme, &parse("x1=x2")).unwrap();
        assert_eq!(transported, parse("x1=x3 & x2=x4"));
        // Quantifiers become blocks: one target quantifier, two source ones.
        let transported = transport_formula(&scheme, &parse("exists x2 (x1~x2)")).unwrap();
        assert_eq!(transported, parse("exists x3 exists x4 ((x1~x3) & (x2~x4))"));
    }

    #[test]
    fn transport_rejects_distance_guards() {
        assert!(matches!(
            transport_formula(&identity_scheme(), &parse("dist(x1,x2)<=2")),
            Err(Error::DistGuard)
        ));
        assert!(matches!(
            transport_formula(&identity_scheme(), &parse("exists y (dist(x1,y)<=1 & y~x1)")),
            Err(Error::DistGuard)
        ));
    }

    #[test]
    fn transport_relativizes_full_quantifiers() {
        let scheme = full_graph_scheme(1, "x1~x2", "x1=x2", "exists y (y~x1)");
        let transported = transport_formula(&scheme, &parse("exists x2 (x1~x2)")).unwrap();
        // The bound block is relativized to θ0, with the guard's own binder
        // renamed fresh.
        assert_eq!(transported, parse("exists x2 ((exists x3 (x3~x2)) & x1~x2)"));
        let transported = transport_formula(&scheme, &parse("forall x2 (x1~x2)")).unwrap();
        assert_eq!(transported, parse("forall x2 ((exists x3 (x3~x2)) -> x1~x2)"));
        // Equality becomes the scheme's E.
        let transported = transport_formula(&scheme, &parse("x1=x2")).unwrap();
        assert_eq!(transported, parse("x1=x2"));
    }

    #[test]
    fn verify_complement_on_triangle() {
        let check = verify_transport(
            &complement_scheme(),
            &clique(3),
            &parse("x1~x2"),
            VerifyMode::Exhaustive,
            &Caps::default(),
        )
        .unwrap();
        assert!(check.ok && check.pointwise);
        assert_eq!(check.checked, 9);
        assert_eq!(check.pairing_target, Some(Rational::zero()));
        assert_eq!(check.pairing_source, Some(Rational::zero()));
        assert_eq!(check.pairing_equal, Some(true));
    }

    #[test]
    fn verify_identity_on_various_formulas() {
        let caps = Caps::default();
        for text in [
            "x1~x2",
            "exists y (y~x1)",
            "exists>=2 y (y~x1)",
            "forall x1 exists x2 (x1~x2)",
            "x1=x2 | x1~x2",
        ] {
            let check = verify_transport(
                &identity_scheme(),
                &cycle(5),
                &parse(text),
                VerifyMode::Exhaustive,
                &caps,
            )
            .unwrap();
            assert!(check.ok, "identity transport must verify for {text}");
        }
    }

    #[test]
    fn verify_square_scheme_pairing_identity() {
        let scheme = basic_graph_scheme(2, "x1~x3 & x2~x4");
        let check = verify_transport(
            &scheme,
            &clique(3),
            &parse("exists x2 (x1~x2)"),
            VerifyMode::Exhaustive,
            &Caps::default(),
        )
        .unwrap();
        assert!(check.ok && check.pointwise);
        assert_eq!(check.pairing_equal, Some(true));
        assert_eq!(check.arity, 1);
        assert_eq!(check.checked, 9);
    }

    #[test]
    fn verify_weighted_pairing_identity() {
        let mut g = clique(2);
        g.weights = Some(vec![Rational::new(1, 4), Rational::new(3, 4)]);
        g.validate().unwrap();
        let check = verify_transport(
            &basic_graph_scheme(2, "x1~x3 & x2~x4"),
            &g,
            &parse("x1~x2"),
            VerifyMode::Exhaustive,
            &Caps::default(),
        )
        .unwrap();
        assert!(check.ok);
        assert_eq!(check.pairing_equal, Some(true));
    }

    #[test]
    fn verify_sampled_tuples() {
        let check = verify_transport(
            &basic_graph_scheme(2, "x1~x3 & x2~x4"),
            &clique(3),
            &parse("x1~x2"),
            VerifyMode::Sample { trials: 50, seed: 7 },
            &Caps::default(),
        )
        .unwrap();
        assert!(check.ok);
        assert_eq!(check.checked, 50);
        // Same seed, same trace: the check is reproducible.
        let again = verify_transport(
            &basic_graph_scheme(2, "x1~x3 & x2~x4"),
            &clique(3),
            &parse("x1~x2"),
            VerifyMode::Sample { trials: 50, seed: 7 },
            &Caps::default(),
        )
        .unwrap();
        assert_eq!(check.checked, again.checked);
    }

    #[test]
    fn verify_full_scheme_pointwise_only() {
        let scheme = full_graph_scheme(1, "x1~x2", "x1=x2", "exists y (y~x1)");
        let check = verify_transport(
            &scheme,
            &Structure::graph(3, &[(0, 1)]),
            &parse("x1~x2"),
            VerifyMode::Exhaustive,
            &Caps::default(),
        )
        .unwrap();
        assert!(check.ok && check.pointwise);
        assert!(check.pairing_equal.is_none());
        assert_eq!(check.checked, 4);
    }

    #[test]
    fn corrupted_transport_is_caught_with_counterexample() {
        // Drive the pointwise core with a wrong "transported" formula: the
        // first disagreeing tuple comes back as the counterexample.
        let a = Structure::graph(3, &[(0, 1), (1, 2)]);
        let b = a.clone();
        let phi = parse("x1~x2");
        let wrong = parse("!(x1~x2)");
        let (ok, checked, cex) = pointwise_check(
            &a,
            &b,
            &phi,
            &wrong,
            1,
            None,
            2,
            VerifyMode::Exhaustive,
            &Caps::default(),
        )
        .unwrap();
        assert!(!ok);
        assert_eq!(checked, 1);
        let cex = cex.unwrap();
        assert_eq!(cex.target_tuple, vec![0, 0]);
        assert_eq!(cex.source_assignment, vec![0, 0]);
        assert!(!cex.target_holds);
    }

    #[test]
    fn composing_complement_twice_acts_as_identity() {
        let c5 = cycle(5);
        let phi = parse("x1~x2");
        let once = transport_formula(&complement_scheme(), &phi).unwrap();
        let twice = transport_formula(&complement_scheme(), &once).unwrap();
        for u in 0..5 {
            for v in 0..5 {
                assert_eq!(
                    models(&c5, &phi, &[u, v]).unwrap(),
                    models(&c5, &twice, &[u, v]).unwrap()
                );
            }
        }
    }

    #[test]
    fn full_with_trivial_quotient_matches_basic() {
        // E = coordinate-wise equality and θ0 = ⊤ reduce a full scheme to
        // the underlying basic one.
        let edge = "x1~x3 & x2~x4";
        let basic = basic_graph_scheme(2, edge);
        let full = full_graph_scheme(2, edge, "x1=x3 & x2=x4", "true");
        let caps = Caps::default();
        for g in [clique(2), Structure::graph(3, &[(0, 1), (1, 2)])] {
            assert_eq!(basic.apply(&g, &caps).unwrap(), full.apply(&g, &caps).unwrap());
        }
    }

    #[test]
    fn scheme_json_loading() {
        let text = r#"{
            "kind": "basic",
            "k": 1,
            "source": {"relations": [{"name": "E", "arity": 2}]},
            "target": {"relations": [{"name": "E", "arity": 2}]},
            "theta": {"E": "!(x1~x2) & !(x1=x2)"}
        }"#;
        let scheme = load_scheme(text).unwrap();
        let out = scheme.apply(&clique(3), &Caps::default()).unwrap();
        assert!(out.relation_tuples("E").map_or(true, |t| t.is_empty()));

        let full = r#"{
            "kind": "full",
            "k": 1,
            "source": {"relations": [{"name": "E", "arity": 2}]},
            "target": {"relations": [{"name": "E", "arity": 2}]},
            "theta": {"E": "x1~x2"},
            "E": "x1=x2",
            "theta0": "exists y (y~x1)"
        }"#;
        let scheme = load_scheme(full).unwrap();
        let out = scheme.apply(&Structure::graph(3, &[(0, 1)]), &Caps::default()).unwrap();
        assert_eq!(out.n, 2);

        assert!(matches!(
            load_scheme(r#"{"kind":"affine","k":1,"source":{"relations":[]},"target":{"relations":[]},"theta":{}}"#),
            Err(Error::InvalidParams(_))
        ));
        assert!(matches!(
            load_scheme(r#"{"kind":"full","k":1,"source":{"relations":[{"name":"E","arity":2}]},"target":{"relations":[{"name":"E","arity":2}]},"theta":{"E":"x1~x2"}}"#),
            Err(Error::InvalidParams(_))
        ));
        assert!(matches!(load_scheme("{"), Err(Error::Parse { .. })));
    }
}
