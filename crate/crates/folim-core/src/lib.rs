//! First-order statistics of finite relational structures.
//!
//! This crate evaluates first-order formulas — with counting quantifiers and
//! distance guards — over finite structures and weighted finite structures
//! (modelings), and computes the statistics built on top of that:
//!
//! - **Pairings** ([`evaluation`]): the measure of a formula's satisfying
//!   set under the product measure, exactly as a fraction or estimated by
//!   seeded sampling with a Hoeffding half-width.
//! - **Fragments and locality** ([`logic`]): parsing, printing, fragment
//!   classification (sentences, quantifier-free with and without equality,
//!   guarded-local with an accumulated locality radius), neighborhood
//!   bounds, and evaluation of basic local sentences via scattered sets.
//! - **Homomorphism algebra** ([`homalg`]): homomorphism counts and
//!   densities, the quantifier-free formulas whose pairings are densities,
//!   formal rational combinations of graphs with product and corpus
//!   sup-norm, and exact rank of density matrices.
//! - **Sequence diagnostics** ([`convergence`]): pairing traces with
//!   window-stability verdicts, rooted-ball type distributions and their
//!   total-variation distance, ball-mass dispersion tables, decomposition
//!   into weighted connected parts, mass-transport checks, and convex
//!   combinations of modelings.
//! - **Interpretation schemes** ([`interpretation`]): definable
//!   translations of structures between signatures, formula transport, and
//!   verification of the satisfaction and pairing identities.
//!
//! All counts and measures are exact [`rational::Rational`]s; floating
//! point appears only in sampling estimates. Every enumeration that could
//! blow up is bounded by [`Caps`] and fails loudly with the size it would
//! have needed.
//!
//! ```
//! use folim_core::evaluation::stone_pairing;
//! use folim_core::logic::parse_formula;
//! use folim_core::structures::Structure;
//! use folim_core::Caps;
//!
//! let path = Structure::graph(3, &[(0, 1), (1, 2)]);
//! let phi = parse_formula("exists>=2 y (y~x1)", None)?;
//! // Only the middle vertex has two neighbors.
//! let value = stone_pairing(&path, &phi, 1, &Caps::default())?;
//! assert_eq!(value.to_string(), "1/3");
//! # Ok::<(), folim_core::Error>(())
//! ```

pub mod convergence;
pub mod evaluation;
pub mod homalg;
pub mod interpretation;
pub mod logic;
pub mod rational;
pub mod structures;

mod canon;
mod error;

pub use canon::isomorphic;
pub use error::{Error, Result};
pub use evaluation::PRNG_NAME;

/// Resource limits for the enumerations this crate performs.
///
/// Every operation that would enumerate tuples, canonicalize a structure, or
/// search for automorphisms checks the relevant cap first and returns a
/// [`Error::CapExceeded`]-family error instead of hanging. The caps bound
/// work, not correctness: raising them never changes a computed value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Caps {
    /// Largest number of assignment tuples an exact enumeration may visit
    /// (`n^p` for arity-p operations).
    pub tuples: u64,
    /// Largest universe a canonical certificate or isomorphism test may
    /// process; canonicalization is factorial in the worst case.
    pub canon: usize,
    /// Largest universe a vertex-transitivity check may process.
    pub transitive: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Caps { tuples: 10_000_000, canon: 32, transitive: 12 }
    }
}
