//! First-order formula language: parser, AST, free variables, quantifier
//! rank, fragment classification, variable renaming, and bound calculators.
//!
//! # Grammar (ASCII)
//!
//! - variables `x1`, `x2`, ... (indices start at 1); other identifiers are
//!   bound-variable names, constants, or symbols of the ambient signature
//! - terms: variables, constants, function applications `f(t,...)`
//! - atoms: `R(t,...)`, `t = t`, `t ~ t` (sugar for the edge relation),
//!   `dist(t,t) <= k`, and the literals `true` / `false`
//! - connectives `!`, `&`, `|`, `->`, `<->` with precedence
//!   `! > & > | > -> > <->`; `&` and `|` are left-associative, `->` and `<->`
//!   right-associative
//! - quantifiers `exists v p`, `forall v p`, `exists>=k v p`, `exists<=k v p`;
//!   a quantifier's scope extends as far right as possible (parenthesize to
//!   limit it)
//!
//! The parser renames bound variables so that no variable is bound twice on
//! one path, and assigns fresh indices (above every literal index in the
//! text) to named bound variables, so a formula pretty-prints to text that
//! re-parses to the structurally identical AST.

use crate::error::{Error, Result};
use crate::structures::Signature;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// Variable index; the variable `x7` has index 7.
pub type VarId = u32;

/// First-order term.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Var(VarId),
    Const(String),
    App(String, Vec<Term>),
}

/// First-order formula with counting quantifiers and distance-guard atoms.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Formula {
    True,
    False,
    /// Relation atom `R(t, ...)`.
    Rel(String, Vec<Term>),
    /// Equality atom `t = t`.
    Eq(Term, Term),
    /// Distance guard `dist(t, t) <= k` over the Gaifman graph.
    DistLe(Term, Term, u32),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Iff(Box<Formula>, Box<Formula>),
    Exists(VarId, Box<Formula>),
    Forall(VarId, Box<Formula>),
    /// Counting quantifier: at least `a` witnesses.
    AtLeast(u64, VarId, Box<Formula>),
    /// Counting quantifier: at most `b` witnesses.
    AtMost(u64, VarId, Box<Formula>),
}

/// Syntactic fragment tags of a formula.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FragmentInfo {
    /// No free variables.
    pub is_sentence: bool,
    /// Least p with free variables contained in {x1..xp} (0 for sentences).
    pub min_p: usize,
    /// No quantifiers of any kind.
    pub quantifier_free: bool,
    /// No equality atoms.
    pub equality_free: bool,
    /// Syntactic locality radius: every quantifier is distance-guarded to a
    /// variable of known depth, and this is the largest accumulated guard
    /// depth. Absent when any unguarded quantifier occurs; 0 for
    /// quantifier-free formulas.
    pub locality_radius: Option<u32>,
    /// Contains a `dist(t,t) <= k` atom.
    pub uses_dist_guards: bool,
    /// Contains a counting quantifier.
    pub uses_counting: bool,
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Num(u64),
    LParen,
    RParen,
    Comma,
    Assign, // '='
    Tilde,
    Bang,
    Amp,
    Pipe,
    Arrow,  // '->'
    DArrow, // '<->'
    Le,     // '<='
    Ge,     // '>='
}

#[derive(Clone, Debug)]
struct Lexed {
    tok: Tok,
    pos: usize,
}

fn lex(text: &str) -> Result<Vec<Lexed>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let pos = i;
        let tok = match c {
            '(' => {
                i += 1;
                Tok::LParen
            }
            ')' => {
                i += 1;
                Tok::RParen
            }
            ',' => {
                i += 1;
                Tok::Comma
            }
            '=' => {
                i += 1;
                Tok::Assign
            }
            '~' => {
                i += 1;
                Tok::Tilde
            }
            '!' => {
                i += 1;
                Tok::Bang
            }
            '&' => {
                i += 1;
                Tok::Amp
            }
            '|' => {
                i += 1;
                Tok::Pipe
            }
            '-' => {
                if bytes.get(i + 1) == Some(&b'>') {
                    i += 2;
                    Tok::Arrow
                } else {
                    return Err(Error::Syntax { pos, msg: "expected `->`".to_string() });
                }
            }
            '<' => {
                if text[i..].starts_with("<->") {
                    i += 3;
                    Tok::DArrow
                } else if text[i..].starts_with("<=") {
                    i += 2;
                    Tok::Le
                } else {
                    return Err(Error::Syntax { pos, msg: "expected `<->` or `<=`".to_string() });
                }
            }
            '>' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    i += 2;
                    Tok::Ge
                } else {
                    return Err(Error::Syntax { pos, msg: "expected `>=`".to_string() });
                }
            }
            c if c.is_ascii_digit() => {
                let start = i;
                while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                    i += 1;
                }
                let value: u64 = text[start..i]
                    .parse()
                    .map_err(|_| Error::Syntax { pos, msg: "number too large".to_string() })?;
                Tok::Num(value)
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                Tok::Ident(text[start..i].to_string())
            }
            other => {
                return Err(Error::Syntax { pos, msg: format!("unexpected character `{other}`") });
            }
        };
        out.push(Lexed { tok, pos });
    }
    Ok(out)
}

/// Index of a variable-form identifier (`x` followed by digits not starting
/// with 0), if it is one.
fn var_form(name: &str) -> Option<VarId> {
    let digits = name.strip_prefix('x')?;
    let first = digits.chars().next()?;
    if !first.is_ascii_digit() || first == '0' || !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

const KEYWORDS: [&str; 5] = ["exists", "forall", "dist", "true", "false"];

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Parser<'a> {
    toks: Vec<Lexed>,
    i: usize,
    end: usize,
    sig: Option<&'a Signature>,
    /// Active binders, innermost last: (source token, assigned index).
    scopes: Vec<(String, VarId)>,
    fresh: VarId,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.i).map(|l| &l.tok)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.i).map(|l| l.pos).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.i).map(|l| l.tok.clone());
        if t.is_some() {
            self.i += 1;
        }
        t
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<()> {
        if self.eat(&tok) {
            Ok(())
        } else {
            Err(self.err(&format!("expected {what}")))
        }
    }

    fn err(&self, msg: &str) -> Error {
        Error::Syntax { pos: self.pos(), msg: msg.to_string() }
    }

    fn parse_iff(&mut self) -> Result<Formula> {
        let lhs = self.parse_implies()?;
        if self.eat(&Tok::DArrow) {
            let rhs = self.parse_iff()?;
            return Ok(Formula::Iff(Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn parse_implies(&mut self) -> Result<Formula> {
        let lhs = self.parse_or()?;
        if self.eat(&Tok::Arrow) {
            let rhs = self.parse_implies()?;
            return Ok(Formula::Implies(Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn parse_or(&mut self) -> Result<Formula> {
        let mut lhs = self.parse_and()?;
        while self.eat(&Tok::Pipe) {
            let rhs = self.parse_and()?;
            lhs = Formula::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_and(&mut self) -> Result<Formula> {
        let mut lhs = self.parse_unary()?;
        while self.eat(&Tok::Amp) {
            let rhs = self.parse_unary()?;
            lhs = Formula::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> Result<Formula> {
        if self.eat(&Tok::Bang) {
            let inner = self.parse_unary()?;
            return Ok(Formula::Not(Box::new(inner)));
        }
        match self.peek() {
            Some(Tok::Ident(name)) if name == "exists" => {
                self.i += 1;
                let bound = if self.eat(&Tok::Ge) {
                    Some((true, self.parse_number()?))
                } else if self.eat(&Tok::Le) {
                    Some((false, self.parse_number()?))
                } else {
                    None
                };
                let var = self.parse_binder()?;
                let body = self.parse_iff()?;
                self.scopes.pop();
                Ok(match bound {
                    None => Formula::Exists(var, Box::new(body)),
                    Some((true, k)) => Formula::AtLeast(k, var, Box::new(body)),
                    Some((false, k)) => Formula::AtMost(k, var, Box::new(body)),
                })
            }
            Some(Tok::Ident(name)) if name == "forall" => {
                self.i += 1;
                let var = self.parse_binder()?;
                let body = self.parse_iff()?;
                self.scopes.pop();
                Ok(Formula::Forall(var, Box::new(body)))
            }
            _ => self.parse_primary(),
        }
    }

    fn parse_number(&mut self) -> Result<u64> {
        match self.bump() {
            Some(Tok::Num(v)) => Ok(v),
            _ => {
                self.i = self.i.saturating_sub(1);
                Err(self.err("expected a number"))
            }
        }
    }

    /// Consume a binder identifier, push its scope entry, and return the
    /// variable index it binds. Indexed binders already bound on this path
    /// are renamed to a fresh index.
    fn parse_binder(&mut self) -> Result<VarId> {
        let pos = self.pos();
        let name = match self.bump() {
            Some(Tok::Ident(name)) => name,
            _ => return Err(Error::Syntax { pos, msg: "expected a bound-variable name".to_string() }),
        };
        if KEYWORDS.contains(&name.as_str()) {
            return Err(Error::Syntax { pos, msg: format!("`{name}` is reserved") });
        }
        let id = match var_form(&name) {
            Some(idx) => {
                if self.scopes.iter().any(|(_, bound)| *bound == idx) {
                    let fresh = self.fresh;
                    self.fresh += 1;
                    fresh
                } else {
                    idx
                }
            }
            None => {
                let fresh = self.fresh;
                self.fresh += 1;
                fresh
            }
        };
        self.scopes.push((name, id));
        Ok(id)
    }

    fn parse_primary(&mut self) -> Result<Formula> {
        let pos = self.pos();
        match self.peek() {
            Some(Tok::LParen) => {
                self.i += 1;
                let inner = self.parse_iff()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Some(Tok::Ident(name)) if name == "true" => {
                self.i += 1;
                Ok(Formula::True)
            }
            Some(Tok::Ident(name)) if name == "false" => {
                self.i += 1;
                Ok(Formula::False)
            }
            Some(Tok::Ident(name)) if name == "dist" => {
                self.i += 1;
                self.expect(Tok::LParen, "`(` after dist")?;
                let t1 = self.parse_term()?;
                self.expect(Tok::Comma, "`,`")?;
                let t2 = self.parse_term()?;
                self.expect(Tok::RParen, "`)`")?;
                self.expect(Tok::Le, "`<=`")?;
                let k = self.parse_number()?;
                let k = u32::try_from(k)
                    .map_err(|_| Error::Syntax { pos, msg: "distance bound too large".to_string() })?;
                Ok(Formula::DistLe(t1, t2, k))
            }
            Some(Tok::Ident(_)) => {
                let term = self.parse_term()?;
                if self.eat(&Tok::Assign) {
                    let rhs = self.parse_term()?;
                    return Ok(Formula::Eq(term, rhs));
                }
                if self.eat(&Tok::Tilde) {
                    let rhs = self.parse_term()?;
                    let edge = match self.sig {
                        Some(sig) => sig.edge_relation()?.to_string(),
                        None => "E".to_string(),
                    };
                    return Ok(Formula::Rel(edge, vec![term, rhs]));
                }
                match term {
                    Term::App(name, args) => Ok(Formula::Rel(name, args)),
                    _ => Err(Error::Syntax {
                        pos,
                        msg: "expected an atom (relation, `=`, `~`, or `dist`)".to_string(),
                    }),
                }
            }
            _ => Err(self.err("expected a formula")),
        }
    }

    fn parse_term(&mut self) -> Result<Term> {
        let pos = self.pos();
        let name = match self.bump() {
            Some(Tok::Ident(name)) => name,
            _ => return Err(Error::Syntax { pos, msg: "expected a term".to_string() }),
        };
        if KEYWORDS.contains(&name.as_str()) {
            return Err(Error::Syntax { pos, msg: format!("`{name}` is reserved") });
        }
        if self.eat(&Tok::LParen) {
            let mut args = Vec::new();
            loop {
                args.push(self.parse_term()?);
                if self.eat(&Tok::Comma) {
                    continue;
                }
                self.expect(Tok::RParen, "`)` or `,`")?;
                break;
            }
            return Ok(Term::App(name, args));
        }
        // Innermost binder with this source token, if any.
        if let Some((_, id)) = self.scopes.iter().rev().find(|(text, _)| *text == name) {
            return Ok(Term::Var(*id));
        }
        if let Some(idx) = var_form(&name) {
            return Ok(Term::Var(idx));
        }
        match self.sig {
            Some(sig) => {
                if sig.has_constant(&name) {
                    Ok(Term::Const(name))
                } else {
                    Err(Error::UnknownSymbol {
                        name,
                        context: "not a variable, bound name, or constant of the signature".to_string(),
                    })
                }
            }
            None => Ok(Term::Const(name)),
        }
    }
}

/// Check every symbol a formula uses against a signature: relation and
/// function names with matching arities, and declared constants.
pub fn validate_symbols(formula: &Formula, sig: &Signature) -> Result<()> {
    fn check_term(term: &Term, sig: &Signature) -> Result<()> {
        match term {
            Term::Var(_) => Ok(()),
            Term::Const(name) => {
                if sig.has_constant(name) {
                    Ok(())
                } else {
                    Err(Error::UnknownSymbol {
                        name: name.clone(),
                        context: "not a constant of the signature".to_string(),
                    })
                }
            }
            Term::App(name, args) => {
                match sig.function_arity(name) {
                    Some(arity) if arity == args.len() => {}
                    Some(arity) => {
                        return Err(Error::UnknownSymbol {
                            name: name.clone(),
                            context: format!("function takes {arity} arguments, got {}", args.len()),
                        })
                    }
                    None => {
                        return Err(Error::UnknownSymbol {
                            name: name.clone(),
                            context: "not a function of the signature".to_string(),
                        })
                    }
                }
                args.iter().try_for_each(|a| check_term(a, sig))
            }
        }
    }
    match formula {
        Formula::True | Formula::False => Ok(()),
        Formula::Rel(name, args) => {
            match sig.relation_arity(name) {
                Some(arity) if arity == args.len() => {}
                Some(arity) => {
                    return Err(Error::UnknownSymbol {
                        name: name.clone(),
                        context: format!("relation takes {arity} arguments, got {}", args.len()),
                    })
                }
                None => {
                    return Err(Error::UnknownSymbol {
                        name: name.clone(),
                        context: "not a relation of the signature".to_string(),
                    })
                }
            }
            args.iter().try_for_each(|a| check_term(a, sig))
        }
        Formula::Eq(a, b) | Formula::DistLe(a, b, _) => {
            check_term(a, sig)?;
            check_term(b, sig)
        }
        Formula::Not(a) => validate_symbols(a, sig),
        Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) | Formula::Iff(a, b) => {
            validate_symbols(a, sig)?;
            validate_symbols(b, sig)
        }
        Formula::Exists(_, body)
        | Formula::Forall(_, body)
        | Formula::AtLeast(_, _, body)
        | Formula::AtMost(_, _, body) => validate_symbols(body, sig),
    }
}

/// Parse formula text, optionally resolving symbols against an ambient
/// signature. Without a signature, unknown identifiers become constants and
/// `~` resolves to a relation named `E`.
pub fn parse_formula(text: &str, sig: Option<&Signature>) -> Result<Formula> {
    let toks = lex(text)?;
    // Fresh indices for named bound variables start above every literal index.
    let mut max_literal = 0;
    for lexed in &toks {
        if let Tok::Ident(name) = &lexed.tok {
            if let Some(idx) = var_form(name) {
                max_literal = max_literal.max(idx);
            }
        }
    }
    let mut parser = Parser {
        toks,
        i: 0,
        end: text.len(),
        sig,
        scopes: Vec::new(),
        fresh: max_literal + 1,
    };
    let formula = parser.parse_iff()?;
    if parser.i != parser.toks.len() {
        return Err(parser.err("unexpected trailing input"));
    }
    if let Some(sig) = sig {
        validate_symbols(&formula, sig)?;
    }
    Ok(formula)
}

// ---------------------------------------------------------------------------
// Pretty-printing
// ---------------------------------------------------------------------------

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "x{v}"),
            Term::Const(name) => write!(f, "{name}"),
            Term::App(name, args) => {
                write!(f, "{name}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// Binding strength used for parenthesization: quantifiers share the lowest
/// level because their scope is maximal.
fn level(f: &Formula) -> u8 {
    match f {
        Formula::Iff(..)
        | Formula::Exists(..)
        | Formula::Forall(..)
        | Formula::AtLeast(..)
        | Formula::AtMost(..) => 0,
        Formula::Implies(..) => 1,
        Formula::Or(..) => 2,
        Formula::And(..) => 3,
        Formula::Not(..) => 4,
        _ => 5,
    }
}

fn write_formula(f: &Formula, min_level: u8, out: &mut fmt::Formatter<'_>) -> fmt::Result {
    if level(f) < min_level {
        write!(out, "(")?;
        write_formula(f, 0, out)?;
        return write!(out, ")");
    }
    match f {
        Formula::True => write!(out, "true"),
        Formula::False => write!(out, "false"),
        Formula::Rel(name, args) if name == "E" && args.len() == 2 => {
            write!(out, "{}~{}", args[0], args[1])
        }
        Formula::Rel(name, args) => {
            write!(out, "{name}(")?;
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    write!(out, ",")?;
                }
                write!(out, "{a}")?;
            }
            write!(out, ")")
        }
        Formula::Eq(a, b) => write!(out, "{a}={b}"),
        Formula::DistLe(a, b, k) => write!(out, "dist({a},{b})<={k}"),
        Formula::Not(a) => {
            write!(out, "!")?;
            write_formula(a, 4, out)
        }
        Formula::And(a, b) => {
            write_formula(a, 3, out)?;
            write!(out, " & ")?;
            write_formula(b, 4, out)
        }
        Formula::Or(a, b) => {
            write_formula(a, 2, out)?;
            write!(out, " | ")?;
            write_formula(b, 3, out)
        }
        Formula::Implies(a, b) => {
            write_formula(a, 2, out)?;
            write!(out, " -> ")?;
            write_formula(b, 1, out)
        }
        Formula::Iff(a, b) => {
            write_formula(a, 1, out)?;
            write!(out, " <-> ")?;
            write_formula(b, 0, out)
        }
        Formula::Exists(v, body) => {
            write!(out, "exists x{v} ")?;
            write_formula(body, 0, out)
        }
        Formula::Forall(v, body) => {
            write!(out, "forall x{v} ")?;
            write_formula(body, 0, out)
        }
        Formula::AtLeast(k, v, body) => {
            write!(out, "exists>={k} x{v} ")?;
            write_formula(body, 0, out)
        }
        Formula::AtMost(k, v, body) => {
            write!(out, "exists<={k} x{v} ")?;
            write_formula(body, 0, out)
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_formula(self, 0, f)
    }
}

// ---------------------------------------------------------------------------
// Structural queries
// ---------------------------------------------------------------------------

fn term_vars(term: &Term, out: &mut BTreeSet<VarId>) {
    match term {
        Term::Var(v) => {
            out.insert(*v);
        }
        Term::Const(_) => {}
        Term::App(_, args) => args.iter().for_each(|a| term_vars(a, out)),
    }
}

/// The set of free variable indices.
pub fn free_variables(f: &Formula) -> BTreeSet<VarId> {
    match f {
        Formula::True | Formula::False => BTreeSet::new(),
        Formula::Rel(_, args) => {
            let mut out = BTreeSet::new();
            args.iter().for_each(|a| term_vars(a, &mut out));
            out
        }
        Formula::Eq(a, b) | Formula::DistLe(a, b, _) => {
            let mut out = BTreeSet::new();
            term_vars(a, &mut out);
            term_vars(b, &mut out);
            out
        }
        Formula::Not(a) => free_variables(a),
        Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) | Formula::Iff(a, b) => {
            let mut out = free_variables(a);
            out.extend(free_variables(b));
            out
        }
        Formula::Exists(v, body)
        | Formula::Forall(v, body)
        | Formula::AtLeast(_, v, body)
        | Formula::AtMost(_, v, body) => {
            let mut out = free_variables(body);
            out.remove(v);
            out
        }
    }
}

/// Maximum quantifier nesting depth; counting quantifiers count as one.
pub fn quantifier_rank(f: &Formula) -> u32 {
    match f {
        Formula::True | Formula::False | Formula::Rel(..) | Formula::Eq(..) | Formula::DistLe(..) => 0,
        Formula::Not(a) => quantifier_rank(a),
        Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) | Formula::Iff(a, b) => {
            quantifier_rank(a).max(quantifier_rank(b))
        }
        Formula::Exists(_, body)
        | Formula::Forall(_, body)
        | Formula::AtLeast(_, _, body)
        | Formula::AtMost(_, _, body) => 1 + quantifier_rank(body),
    }
}

/// Largest variable index mentioned anywhere (free or bound), 0 if none.
pub(crate) fn max_var_index(f: &Formula) -> VarId {
    fn term_max(term: &Term) -> VarId {
        match term {
            Term::Var(v) => *v,
            Term::Const(_) => 0,
            Term::App(_, args) => args.iter().map(term_max).max().unwrap_or(0),
        }
    }
    match f {
        Formula::True | Formula::False => 0,
        Formula::Rel(_, args) => args.iter().map(term_max).max().unwrap_or(0),
        Formula::Eq(a, b) | Formula::DistLe(a, b, _) => term_max(a).max(term_max(b)),
        Formula::Not(a) => max_var_index(a),
        Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) | Formula::Iff(a, b) => {
            max_var_index(a).max(max_var_index(b))
        }
        Formula::Exists(v, body)
        | Formula::Forall(v, body)
        | Formula::AtLeast(_, v, body)
        | Formula::AtMost(_, v, body) => (*v).max(max_var_index(body)),
    }
}

fn uses_dist(f: &Formula) -> bool {
    match f {
        Formula::DistLe(..) => true,
        Formula::True | Formula::False | Formula::Rel(..) | Formula::Eq(..) => false,
        Formula::Not(a) => uses_dist(a),
        Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) | Formula::Iff(a, b) => {
            uses_dist(a) || uses_dist(b)
        }
        Formula::Exists(_, body)
        | Formula::Forall(_, body)
        | Formula::AtLeast(_, _, body)
        | Formula::AtMost(_, _, body) => uses_dist(body),
    }
}

fn uses_equality(f: &Formula) -> bool {
    match f {
        Formula::Eq(..) => true,
        Formula::True | Formula::False | Formula::Rel(..) | Formula::DistLe(..) => false,
        Formula::Not(a) => uses_equality(a),
        Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) | Formula::Iff(a, b) => {
            uses_equality(a) || uses_equality(b)
        }
        Formula::Exists(_, body)
        | Formula::Forall(_, body)
        | Formula::AtLeast(_, _, body)
        | Formula::AtMost(_, _, body) => uses_equality(body),
    }
}

fn uses_counting(f: &Formula) -> bool {
    match f {
        Formula::AtLeast(..) | Formula::AtMost(..) => true,
        Formula::True | Formula::False | Formula::Rel(..) | Formula::Eq(..) | Formula::DistLe(..) => false,
        Formula::Not(a) => uses_counting(a),
        Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) | Formula::Iff(a, b) => {
            uses_counting(a) || uses_counting(b)
        }
        Formula::Exists(_, body) | Formula::Forall(_, body) => uses_counting(body),
    }
}

/// Conjuncts of a conjunction tree, left to right.
fn flatten_and(f: &Formula) -> Vec<&Formula> {
    match f {
        Formula::And(a, b) => {
            let mut out = flatten_and(a);
            out.extend(flatten_and(b));
            out
        }
        other => vec![other],
    }
}

/// Guard depth of a quantifier binding `v`: a conjunct `dist(u,v) <= k` (either
/// orientation) with `u` of known depth yields depth(u) + k; the least such
/// value wins when several guards apply.
fn guard_depth(conjuncts: &[&Formula], v: VarId, depths: &BTreeMap<VarId, u32>) -> Option<u32> {
    let mut best: Option<u32> = None;
    for c in conjuncts {
        if let Formula::DistLe(a, b, k) = c {
            let anchor = match (a, b) {
                (Term::Var(u), Term::Var(w)) if *w == v && *u != v => Some(*u),
                (Term::Var(w), Term::Var(u)) if *w == v && *u != v => Some(*u),
                _ => None,
            };
            if let Some(u) = anchor {
                if let Some(&du) = depths.get(&u) {
                    let depth = du + k;
                    best = Some(best.map_or(depth, |b| b.min(depth)));
                }
            }
        }
    }
    best
}

/// Accumulated guard-depth radius; `None` if any quantifier is unguarded.
fn local_radius(f: &Formula, depths: &BTreeMap<VarId, u32>) -> Option<u32> {
    match f {
        Formula::True | Formula::False | Formula::Rel(..) | Formula::Eq(..) | Formula::DistLe(..) => Some(0),
        Formula::Not(a) => local_radius(a, depths),
        Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) | Formula::Iff(a, b) => {
            Some(local_radius(a, depths)?.max(local_radius(b, depths)?))
        }
        Formula::Exists(v, body) | Formula::AtLeast(_, v, body) | Formula::AtMost(_, v, body) => {
            let depth_v = guard_depth(&flatten_and(body), *v, depths)?;
            let mut inner_depths = depths.clone();
            inner_depths.insert(*v, depth_v);
            Some(depth_v.max(local_radius(body, &inner_depths)?))
        }
        Formula::Forall(v, body) => {
            // A local universal quantifier must restrict by implication:
            // forall v (guard & ... -> ...).
            let Formula::Implies(ante, cons) = body.as_ref() else {
                return None;
            };
            let depth_v = guard_depth(&flatten_and(ante), *v, depths)?;
            let mut inner_depths = depths.clone();
            inner_depths.insert(*v, depth_v);
            let inner = local_radius(ante, &inner_depths)?.max(local_radius(cons, &inner_depths)?);
            Some(depth_v.max(inner))
        }
    }
}

/// Compute every fragment tag of a formula.
pub fn classify_fragment(f: &Formula) -> FragmentInfo {
    let free = free_variables(f);
    let min_p = free.iter().max().copied().unwrap_or(0) as usize;
    let quantifier_free = quantifier_rank(f) == 0;
    let depths: BTreeMap<VarId, u32> = free.iter().map(|&v| (v, 0)).collect();
    FragmentInfo {
        is_sentence: free.is_empty(),
        min_p,
        quantifier_free,
        equality_free: !uses_equality(f),
        locality_radius: local_radius(f, &depths),
        uses_dist_guards: uses_dist(f),
        uses_counting: uses_counting(f),
    }
}

// ---------------------------------------------------------------------------
// Variable renaming
// ---------------------------------------------------------------------------

fn substitute_term(term: &Term, map: &BTreeMap<VarId, VarId>) -> Term {
    match term {
        Term::Var(v) => Term::Var(map.get(v).copied().unwrap_or(*v)),
        Term::Const(name) => Term::Const(name.clone()),
        Term::App(name, args) => {
            Term::App(name.clone(), args.iter().map(|a| substitute_term(a, map)).collect())
        }
    }
}

/// Capture-avoiding substitution of free variable occurrences. Binders that
/// would capture an incoming variable are renamed to fresh indices drawn from
/// `fresh`.
pub(crate) fn substitute_free(
    f: &Formula,
    map: &BTreeMap<VarId, VarId>,
    fresh: &mut VarId,
) -> Formula {
    match f {
        Formula::True => Formula::True,
        Formula::False => Formula::False,
        Formula::Rel(name, args) => {
            Formula::Rel(name.clone(), args.iter().map(|a| substitute_term(a, map)).collect())
        }
        Formula::Eq(a, b) => Formula::Eq(substitute_term(a, map), substitute_term(b, map)),
        Formula::DistLe(a, b, k) => {
            Formula::DistLe(substitute_term(a, map), substitute_term(b, map), *k)
        }
        Formula::Not(a) => Formula::Not(Box::new(substitute_free(a, map, fresh))),
        Formula::And(a, b) => Formula::And(
            Box::new(substitute_free(a, map, fresh)),
            Box::new(substitute_free(b, map, fresh)),
        ),
        Formula::Or(a, b) => Formula::Or(
            Box::new(substitute_free(a, map, fresh)),
            Box::new(substitute_free(b, map, fresh)),
        ),
        Formula::Implies(a, b) => Formula::Implies(
            Box::new(substitute_free(a, map, fresh)),
            Box::new(substitute_free(b, map, fresh)),
        ),
        Formula::Iff(a, b) => Formula::Iff(
            Box::new(substitute_free(a, map, fresh)),
            Box::new(substitute_free(b, map, fresh)),
        ),
        Formula::Exists(v, body) => {
            let (v, body) = substitute_binder(*v, body, map, fresh);
            Formula::Exists(v, Box::new(body))
        }
        Formula::Forall(v, body) => {
            let (v, body) = substitute_binder(*v, body, map, fresh);
            Formula::Forall(v, Box::new(body))
        }
        Formula::AtLeast(k, v, body) => {
            let (v, body) = substitute_binder(*v, body, map, fresh);
            Formula::AtLeast(*k, v, Box::new(body))
        }
        Formula::AtMost(k, v, body) => {
            let (v, body) = substitute_binder(*v, body, map, fresh);
            Formula::AtMost(*k, v, Box::new(body))
        }
    }
}

fn substitute_binder(
    v: VarId,
    body: &Formula,
    map: &BTreeMap<VarId, VarId>,
    fresh: &mut VarId,
) -> (VarId, Formula) {
    // The binder shadows v: drop it from the substitution.
    let mut inner: BTreeMap<VarId, VarId> = map.clone();
    inner.remove(&v);
    let body_free = free_variables(body);
    let captures = inner.iter().any(|(u, img)| *img == v && body_free.contains(u));
    if captures {
        let w = *fresh;
        *fresh += 1;
        let renamed = substitute_free(body, &BTreeMap::from([(v, w)]), fresh);
        (w, substitute_free(&renamed, &inner, fresh))
    } else {
        (v, substitute_free(body, &inner, fresh))
    }
}

/// Rename free variables by an injection `tau` (indices absent from the map
/// are unchanged); bound variables are untouched except for capture-avoiding
/// renames.
pub fn permute_variables(f: &Formula, tau: &BTreeMap<VarId, VarId>) -> Result<Formula> {
    let free = free_variables(f);
    let mut images: BTreeMap<VarId, VarId> = BTreeMap::new();
    for &v in &free {
        let img = tau.get(&v).copied().unwrap_or(v);
        if let Some(&prev) = images.get(&img) {
            return Err(Error::NonInjective { a: prev, b: v, image: img });
        }
        images.insert(img, v);
    }
    let mut fresh = max_var_index(f).max(tau.values().copied().max().unwrap_or(0)) + 1;
    Ok(substitute_free(f, tau, &mut fresh))
}

/// Rename every bound variable to a globally fresh index. Used before
/// splicing a formula into a larger one so that no binder can collide with
/// the host formula's variables.
pub(crate) fn rename_all_binders(f: &Formula, fresh: &mut VarId) -> Formula {
    fn walk(f: &Formula, scope: &BTreeMap<VarId, VarId>, fresh: &mut VarId) -> Formula {
        let rebind = |v: &VarId,
                      body: &Formula,
                      scope: &BTreeMap<VarId, VarId>,
                      fresh: &mut VarId| {
            let w = *fresh;
            *fresh += 1;
            let mut inner = scope.clone();
            inner.insert(*v, w);
            (w, walk(body, &inner, fresh))
        };
        match f {
            Formula::True => Formula::True,
            Formula::False => Formula::False,
            Formula::Rel(name, args) => {
                Formula::Rel(name.clone(), args.iter().map(|a| substitute_term(a, scope)).collect())
            }
            Formula::Eq(a, b) => Formula::Eq(substitute_term(a, scope), substitute_term(b, scope)),
            Formula::DistLe(a, b, k) => {
                Formula::DistLe(substitute_term(a, scope), substitute_term(b, scope), *k)
            }
            Formula::Not(a) => Formula::Not(Box::new(walk(a, scope, fresh))),
            Formula::And(a, b) => {
                Formula::And(Box::new(walk(a, scope, fresh)), Box::new(walk(b, scope, fresh)))
            }
            Formula::Or(a, b) => {
                Formula::Or(Box::new(walk(a, scope, fresh)), Box::new(walk(b, scope, fresh)))
            }
            Formula::Implies(a, b) => {
                Formula::Implies(Box::new(walk(a, scope, fresh)), Box::new(walk(b, scope, fresh)))
            }
            Formula::Iff(a, b) => {
                Formula::Iff(Box::new(walk(a, scope, fresh)), Box::new(walk(b, scope, fresh)))
            }
            Formula::Exists(v, body) => {
                let (w, body) = rebind(v, body, scope, fresh);
                Formula::Exists(w, Box::new(body))
            }
            Formula::Forall(v, body) => {
                let (w, body) = rebind(v, body, scope, fresh);
                Formula::Forall(w, Box::new(body))
            }
            Formula::AtLeast(k, v, body) => {
                let (w, body) = rebind(v, body, scope, fresh);
                Formula::AtLeast(*k, w, Box::new(body))
            }
            Formula::AtMost(k, v, body) => {
                let (w, body) = rebind(v, body, scope, fresh);
                Formula::AtMost(*k, w, Box::new(body))
            }
        }
    }
    walk(f, &BTreeMap::new(), fresh)
}

// ---------------------------------------------------------------------------
// Bound calculators and expansions
// ---------------------------------------------------------------------------

/// Locality bounds from the quantifier rank `q >= 1` and free-variable count
/// `n`: radius at most 7^(q-1), local-formula depth at most (7^(q-1)-1)/2,
/// and at most n+q basic local sentences in a Boolean combination.
pub fn gaifman_bounds(q: u32, n: usize) -> Result<(u64, u64, u64)> {
    if q == 0 {
        return Err(Error::InvalidParams("quantifier rank must be at least 1".to_string()));
    }
    let r = 7u64
        .checked_pow(q - 1)
        .ok_or_else(|| Error::InvalidParams(format!("7^{} overflows the radius bound", q - 1)))?;
    let t = (r - 1) / 2;
    let m = (n as u64)
        .checked_add(q as u64)
        .ok_or_else(|| Error::InvalidParams("free-variable count overflows".to_string()))?;
    Ok((r, t, m))
}

fn count_constants(f: &Formula, out: &mut BTreeSet<String>) {
    fn term_constants(term: &Term, out: &mut BTreeSet<String>) {
        match term {
            Term::Var(_) => {}
            Term::Const(name) => {
                out.insert(name.clone());
            }
            Term::App(_, args) => args.iter().for_each(|a| term_constants(a, out)),
        }
    }
    match f {
        Formula::True | Formula::False => {}
        Formula::Rel(_, args) => args.iter().for_each(|a| term_constants(a, out)),
        Formula::Eq(a, b) | Formula::DistLe(a, b, _) => {
            term_constants(a, out);
            term_constants(b, out);
        }
        Formula::Not(a) => count_constants(a, out),
        Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) | Formula::Iff(a, b) => {
            count_constants(a, out);
            count_constants(b, out);
        }
        Formula::Exists(_, body)
        | Formula::Forall(_, body)
        | Formula::AtLeast(_, _, body)
        | Formula::AtMost(_, _, body) => count_constants(body, out),
    }
}

fn has_function_terms(f: &Formula) -> bool {
    fn term_has_app(term: &Term) -> bool {
        matches!(term, Term::App(..))
    }
    match f {
        Formula::True | Formula::False => false,
        Formula::Rel(_, args) => args.iter().any(term_has_app),
        Formula::Eq(a, b) | Formula::DistLe(a, b, _) => term_has_app(a) || term_has_app(b),
        Formula::Not(a) => has_function_terms(a),
        Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) | Formula::Iff(a, b) => {
            has_function_terms(a) || has_function_terms(b)
        }
        Formula::Exists(_, body)
        | Formula::Forall(_, body)
        | Formula::AtLeast(_, _, body)
        | Formula::AtMost(_, _, body) => has_function_terms(body),
    }
}

/// Finite-model bound for sentences of shape `exists x... forall y... psi`
/// with `psi` quantifier-free and function-free (distance guards also
/// disqualify, since they abbreviate quantified formulas): the number of
/// existentials plus the number of distinct constants in `psi`. `None` when
/// the sentence does not have this shape.
pub fn bsr_model_bound(f: &Formula) -> Option<u64> {
    if !free_variables(f).is_empty() {
        return None;
    }
    let mut rest = f;
    let mut existentials: u64 = 0;
    while let Formula::Exists(_, body) = rest {
        existentials += 1;
        rest = body;
    }
    while let Formula::Forall(_, body) = rest {
        rest = body;
    }
    if quantifier_rank(rest) != 0 || has_function_terms(rest) || uses_dist(rest) {
        return None;
    }
    let mut constants = BTreeSet::new();
    count_constants(rest, &mut constants);
    Some(existentials + constants.len() as u64)
}

/// Replace every `dist(s,t) <= k` atom by its first-order expansion over the
/// edge relation of a plain graph signature: a disjunction over path lengths
/// 0..k, where length j contributes j-1 fresh existentials (so quantifier
/// rank k-1 is added at the site).
pub fn expand_distance_atoms(f: &Formula, sig: &Signature) -> Result<Formula> {
    if !sig.is_graph() {
        return Err(Error::NonGraphSignature(
            "distance expansion needs a single binary edge relation".to_string(),
        ));
    }
    let edge = sig.relations[0].name.clone();
    let mut fresh = max_var_index(f) + 1;
    Ok(expand_dist_walk(f, &edge, &mut fresh))
}

fn expand_dist_walk(f: &Formula, edge: &str, fresh: &mut VarId) -> Formula {
    match f {
        Formula::DistLe(a, b, k) => {
            let mut paths: Vec<Formula> = Vec::new();
            for j in 0..=*k {
                paths.push(path_formula(a, b, j, edge, fresh));
            }
            paths
                .into_iter()
                .reduce(|acc, p| Formula::Or(Box::new(acc), Box::new(p)))
                .expect("k+1 >= 1 disjuncts")
        }
        Formula::True => Formula::True,
        Formula::False => Formula::False,
        Formula::Rel(name, args) => Formula::Rel(name.clone(), args.clone()),
        Formula::Eq(a, b) => Formula::Eq(a.clone(), b.clone()),
        Formula::Not(a) => Formula::Not(Box::new(expand_dist_walk(a, edge, fresh))),
        Formula::And(a, b) => Formula::And(
            Box::new(expand_dist_walk(a, edge, fresh)),
            Box::new(expand_dist_walk(b, edge, fresh)),
        ),
        Formula::Or(a, b) => Formula::Or(
            Box::new(expand_dist_walk(a, edge, fresh)),
            Box::new(expand_dist_walk(b, edge, fresh)),
        ),
        Formula::Implies(a, b) => Formula::Implies(
            Box::new(expand_dist_walk(a, edge, fresh)),
            Box::new(expand_dist_walk(b, edge, fresh)),
        ),
        Formula::Iff(a, b) => Formula::Iff(
            Box::new(expand_dist_walk(a, edge, fresh)),
            Box::new(expand_dist_walk(b, edge, fresh)),
        ),
        Formula::Exists(v, body) => Formula::Exists(*v, Box::new(expand_dist_walk(body, edge, fresh))),
        Formula::Forall(v, body) => Formula::Forall(*v, Box::new(expand_dist_walk(body, edge, fresh))),
        Formula::AtLeast(k, v, body) => {
            Formula::AtLeast(*k, *v, Box::new(expand_dist_walk(body, edge, fresh)))
        }
        Formula::AtMost(k, v, body) => {
            Formula::AtMost(*k, *v, Box::new(expand_dist_walk(body, edge, fresh)))
        }
    }
}

/// `s` and `t` joined by a walk of exactly `j` edges: j = 0 is equality,
/// j = 1 one edge, longer walks introduce j-1 fresh inner vertices.
fn path_formula(s: &Term, t: &Term, j: u32, edge: &str, fresh: &mut VarId) -> Formula {
    match j {
        0 => Formula::Eq(s.clone(), t.clone()),
        1 => Formula::Rel(edge.to_string(), vec![s.clone(), t.clone()]),
        _ => {
            let inner: Vec<VarId> = (0..j - 1)
                .map(|_| {
                    let v = *fresh;
                    *fresh += 1;
                    v
                })
                .collect();
            let mut hops: Vec<Formula> = Vec::new();
            let mut prev = s.clone();
            for &v in &inner {
                hops.push(Formula::Rel(edge.to_string(), vec![prev.clone(), Term::Var(v)]));
                prev = Term::Var(v);
            }
            hops.push(Formula::Rel(edge.to_string(), vec![prev, t.clone()]));
            let body = hops
                .into_iter()
                .reduce(|acc, h| Formula::And(Box::new(acc), Box::new(h)))
                .expect("at least two hops");
            inner
                .into_iter()
                .rev()
                .fold(body, |acc, v| Formula::Exists(v, Box::new(acc)))
        }
    }
}

/// Expand counting quantifiers into plain first-order form: `exists>=a` via
/// `a` pairwise-distinct witnesses, `exists<=b` as the negation of
/// `exists>=b+1`. Semantics-preserving on every structure.
pub fn expand_counting(f: &Formula) -> Formula {
    let mut fresh = max_var_index(f) + 1;
    expand_counting_walk(f, &mut fresh)
}

fn expand_counting_walk(f: &Formula, fresh: &mut VarId) -> Formula {
    match f {
        Formula::AtLeast(a, v, body) => {
            let body = expand_counting_walk(body, fresh);
            at_least_expansion(*a, *v, &body, fresh)
        }
        Formula::AtMost(b, v, body) => {
            let body = expand_counting_walk(body, fresh);
            Formula::Not(Box::new(at_least_expansion(*b + 1, *v, &body, fresh)))
        }
        Formula::True => Formula::True,
        Formula::False => Formula::False,
        Formula::Rel(name, args) => Formula::Rel(name.clone(), args.clone()),
        Formula::Eq(a, b) => Formula::Eq(a.clone(), b.clone()),
        Formula::DistLe(a, b, k) => Formula::DistLe(a.clone(), b.clone(), *k),
        Formula::Not(a) => Formula::Not(Box::new(expand_counting_walk(a, fresh))),
        Formula::And(a, b) => Formula::And(
            Box::new(expand_counting_walk(a, fresh)),
            Box::new(expand_counting_walk(b, fresh)),
        ),
        Formula::Or(a, b) => Formula::Or(
            Box::new(expand_counting_walk(a, fresh)),
            Box::new(expand_counting_walk(b, fresh)),
        ),
        Formula::Implies(a, b) => Formula::Implies(
            Box::new(expand_counting_walk(a, fresh)),
            Box::new(expand_counting_walk(b, fresh)),
        ),
        Formula::Iff(a, b) => Formula::Iff(
            Box::new(expand_counting_walk(a, fresh)),
            Box::new(expand_counting_walk(b, fresh)),
        ),
        Formula::Exists(v, body) => Formula::Exists(*v, Box::new(expand_counting_walk(body, fresh))),
        Formula::Forall(v, body) => Formula::Forall(*v, Box::new(expand_counting_walk(body, fresh))),
    }
}

fn at_least_expansion(a: u64, v: VarId, body: &Formula, fresh: &mut VarId) -> Formula {
    match a {
        0 => Formula::True,
        1 => Formula::Exists(v, Box::new(body.clone())),
        _ => {
            let witnesses: Vec<VarId> = (0..a)
                .map(|_| {
                    let w = *fresh;
                    *fresh += 1;
                    w
                })
                .collect();
            let mut conjuncts: Vec<Formula> = Vec::new();
            for (i, &wi) in witnesses.iter().enumerate() {
                for &wj in &witnesses[i + 1..] {
                    conjuncts.push(Formula::Not(Box::new(Formula::Eq(Term::Var(wi), Term::Var(wj)))));
                }
            }
            for &w in &witnesses {
                conjuncts.push(substitute_free(body, &BTreeMap::from([(v, w)]), fresh));
            }
            let matrix = conjuncts
                .into_iter()
                .reduce(|acc, c| Formula::And(Box::new(acc), Box::new(c)))
                .expect("a >= 2 gives conjuncts");
            witnesses
                .into_iter()
                .rev()
                .fold(matrix, |acc, w| Formula::Exists(w, Box::new(acc)))
        }
    }
}

/// Syntactic normal form for deduplication (not logical equivalence):
/// negation normal form with `->`/`<->` eliminated, conjunctions and
/// disjunctions flattened, operands sorted and deduplicated.
pub fn normal_form(f: &Formula) -> Formula {
    sort_flatten(&nnf(f, true))
}

fn nnf(f: &Formula, positive: bool) -> Formula {
    match f {
        Formula::True => {
            if positive {
                Formula::True
            } else {
                Formula::False
            }
        }
        Formula::False => {
            if positive {
                Formula::False
            } else {
                Formula::True
            }
        }
        Formula::Rel(..) | Formula::Eq(..) | Formula::DistLe(..) => {
            if positive {
                f.clone()
            } else {
                Formula::Not(Box::new(f.clone()))
            }
        }
        Formula::Not(a) => nnf(a, !positive),
        Formula::And(a, b) => {
            if positive {
                Formula::And(Box::new(nnf(a, true)), Box::new(nnf(b, true)))
            } else {
                Formula::Or(Box::new(nnf(a, false)), Box::new(nnf(b, false)))
            }
        }
        Formula::Or(a, b) => {
            if positive {
                Formula::Or(Box::new(nnf(a, true)), Box::new(nnf(b, true)))
            } else {
                Formula::And(Box::new(nnf(a, false)), Box::new(nnf(b, false)))
            }
        }
        Formula::Implies(a, b) => {
            if positive {
                Formula::Or(Box::new(nnf(a, false)), Box::new(nnf(b, true)))
            } else {
                Formula::And(Box::new(nnf(a, true)), Box::new(nnf(b, false)))
            }
        }
        Formula::Iff(a, b) => {
            if positive {
                Formula::And(
                    Box::new(Formula::Or(Box::new(nnf(a, false)), Box::new(nnf(b, true)))),
                    Box::new(Formula::Or(Box::new(nnf(a, true)), Box::new(nnf(b, false)))),
                )
            } else {
                Formula::Or(
                    Box::new(Formula::And(Box::new(nnf(a, true)), Box::new(nnf(b, false)))),
                    Box::new(Formula::And(Box::new(nnf(a, false)), Box::new(nnf(b, true)))),
                )
            }
        }
        Formula::Exists(v, body) => {
            if positive {
                Formula::Exists(*v, Box::new(nnf(body, true)))
            } else {
                Formula::Forall(*v, Box::new(nnf(body, false)))
            }
        }
        Formula::Forall(v, body) => {
            if positive {
                Formula::Forall(*v, Box::new(nnf(body, true)))
            } else {
                Formula::Exists(*v, Box::new(nnf(body, false)))
            }
        }
        // The negation flips the counting threshold; the body stays positive.
        Formula::AtLeast(a, v, body) => {
            let inner = Box::new(nnf(body, true));
            if positive {
                Formula::AtLeast(*a, *v, inner)
            } else if *a == 0 {
                Formula::False
            } else {
                Formula::AtMost(*a - 1, *v, inner)
            }
        }
        Formula::AtMost(b, v, body) => {
            let inner = Box::new(nnf(body, true));
            if positive {
                Formula::AtMost(*b, *v, inner)
            } else {
                Formula::AtLeast(*b + 1, *v, inner)
            }
        }
    }
}

fn sort_flatten(f: &Formula) -> Formula {
    fn collect(f: &Formula, conj: bool, out: &mut Vec<Formula>) {
        match (f, conj) {
            (Formula::And(a, b), true) => {
                collect(a, true, out);
                collect(b, true, out);
            }
            (Formula::Or(a, b), false) => {
                collect(a, false, out);
                collect(b, false, out);
            }
            _ => out.push(sort_flatten(f)),
        }
    }
    match f {
        Formula::And(..) | Formula::Or(..) => {
            let conj = matches!(f, Formula::And(..));
            let mut parts = Vec::new();
            collect(f, conj, &mut parts);
            parts.sort();
            parts.dedup();
            parts
                .into_iter()
                .reduce(|acc, p| {
                    if conj {
                        Formula::And(Box::new(acc), Box::new(p))
                    } else {
                        Formula::Or(Box::new(acc), Box::new(p))
                    }
                })
                .expect("nonempty operand list")
        }
        Formula::Not(a) => Formula::Not(Box::new(sort_flatten(a))),
        Formula::Implies(a, b) => {
            Formula::Implies(Box::new(sort_flatten(a)), Box::new(sort_flatten(b)))
        }
        Formula::Iff(a, b) => Formula::Iff(Box::new(sort_flatten(a)), Box::new(sort_flatten(b))),
        Formula::Exists(v, body) => Formula::Exists(*v, Box::new(sort_flatten(body))),
        Formula::Forall(v, body) => Formula::Forall(*v, Box::new(sort_flatten(body))),
        Formula::AtLeast(k, v, body) => Formula::AtLeast(*k, *v, Box::new(sort_flatten(body))),
        Formula::AtMost(k, v, body) => Formula::AtMost(*k, *v, Box::new(sort_flatten(body))),
        other => other.clone(),
    }
}
