//! Batch command-line surface over the library: exact and sampled pairings,
//! homomorphism densities, convergence diagnostics, and interpretation-scheme
//! transforms, emitted as deterministic reports.
//!
//! Every report embeds the run manifest (command, inputs, parameters, tool
//! version, PRNG name), so identical invocations on identical inputs produce
//! byte-identical bytes. JSON is emitted with sorted keys, rationals as
//! `"p/q"` strings, and floating-point numbers at a fixed 10 significant
//! digits. Exit codes: 0 success, 1 domain error (the report is a structured
//! error object), 2 usage error.

use clap::{Args, Parser, Subcommand, ValueEnum};
use folim_core::convergence::{
    ball_type_distribution, check_fmtp, comb_decompose, convergence_report, dispersion_report,
    local_distance, ConvergenceReport,
};
use folim_core::evaluation::{
    estimate_stone_pairing, eval_gaifman_sentence, models, profile, satisfying_set,
    stone_pairing_result,
};
use folim_core::homalg::{hom_count, hom_density, load_quantum_graph, qg_corpus_norm, qg_evaluate};
use folim_core::interpretation::{load_scheme, transport_formula, verify_transport, VerifyMode};
use folim_core::logic::{classify_fragment, gaifman_bounds, parse_formula, Formula};
use folim_core::rational::Rational;
use folim_core::structures::{
    generate, is_vertex_transitive, load_structure, Family, Structure,
};
use folim_core::{Caps, Error, PRNG_NAME};
use serde_json::{json, Map, Value};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

const DEFAULT_CAP_TUPLES: u64 = 10_000_000;

#[derive(Parser)]
#[command(
    name = "folim",
    version,
    about = "First-order statistics of finite relational structures",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Write the report to this file instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Report format; `csv` is available for `converge` traces only.
    #[arg(long, global = true, value_enum, default_value_t = ReportFormat::Json)]
    format: ReportFormat,

    /// Enumeration cap on tuples; overrides the FOLIM_CAP_TUPLES environment
    /// variable, which in turn overrides the default of 10^7.
    #[arg(long, global = true)]
    cap_tuples: Option<u64>,

    /// Largest universe the canonical labeler will process.
    #[arg(long, global = true, default_value_t = 32)]
    cap_canon: usize,

    /// Largest universe the vertex-transitivity search will process.
    #[arg(long, global = true, default_value_t = 12)]
    cap_transitive: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Json,
    Csv,
}

/// Sampling flags shared by `pair` and `transport`.
#[derive(Args)]
struct SampleArgs {
    /// Number of seeded samples; omit for exhaustive/exact evaluation.
    #[arg(long)]
    samples: Option<u64>,

    /// PRNG seed for sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a formula on a structure at one assignment.
    Eval {
        #[arg(long)]
        structure: PathBuf,
        #[arg(long)]
        formula: String,
        /// Comma-separated vertex indices for x1, x2, ...; empty for sentences.
        #[arg(long, default_value = "")]
        assignment: String,
    },
    /// Exact or sampled pairing of a formula with a structure.
    Pair {
        #[arg(long)]
        structure: PathBuf,
        #[arg(long)]
        formula: String,
        /// Tuple arity; defaults to the formula's least sufficient arity.
        #[arg(long)]
        arity: Option<usize>,
        /// Force exact evaluation (the default when --samples is absent).
        #[arg(long, conflicts_with = "samples")]
        exact: bool,
        #[command(flatten)]
        sample: SampleArgs,
        /// Confidence level for the Hoeffding interval.
        #[arg(long, default_value_t = 0.95)]
        confidence: f64,
    },
    /// List the tuples satisfying a formula.
    Sat {
        #[arg(long)]
        structure: PathBuf,
        #[arg(long)]
        formula: String,
        #[arg(long)]
        arity: Option<usize>,
    },
    /// Homomorphism count and density of a pattern into a structure.
    Hom {
        /// The pattern graph F.
        #[arg(long)]
        pattern: PathBuf,
        /// The host structure G.
        #[arg(long)]
        structure: PathBuf,
    },
    /// Evaluate a quantum graph on one structure or sup-norm it over a corpus.
    #[command(group(clap::ArgGroup::new("target").required(true).args(["structure", "manifest"])))]
    Qg {
        /// Quantum graph JSON file.
        #[arg(long)]
        quantum: PathBuf,
        #[arg(long)]
        structure: Option<PathBuf>,
        /// File listing corpus structure paths, one per line.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Exact pairings of a list of formulas against one structure.
    Profile {
        #[arg(long)]
        structure: PathBuf,
        /// Formula file: one formula per line, optional `ARITY|` prefix.
        #[arg(long)]
        formulas: PathBuf,
    },
    /// Pairing traces and stabilization diagnostics along a sequence.
    Converge {
        /// File listing structure paths, one per line, in sequence order.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        formulas: PathBuf,
        /// Stabilization threshold, an exact rational such as `1/100`.
        #[arg(long)]
        epsilon: String,
        /// Number of trailing indices that must oscillate below epsilon.
        #[arg(long)]
        window: usize,
    },
    /// Rooted ball-type distribution, or total-variation distance to --other.
    Local {
        #[arg(long)]
        structure: PathBuf,
        #[arg(long)]
        other: Option<PathBuf>,
        #[arg(long)]
        radius: u32,
    },
    /// Largest-ball-mass table over a sequence, for dispersion diagnostics.
    Dispersion {
        #[arg(long)]
        manifest: PathBuf,
        /// Largest ball radius d to tabulate.
        #[arg(long)]
        d_max: u32,
    },
    /// Connected components with their relative masses.
    Decompose {
        #[arg(long)]
        structure: PathBuf,
    },
    /// Mass-transport inequality check a·⟨phi⟩ <= b·⟨psi⟩ with degree premises.
    Fmtp {
        #[arg(long)]
        structure: PathBuf,
        #[arg(long)]
        phi: String,
        #[arg(long)]
        psi: String,
        #[arg(long)]
        a: u64,
        #[arg(long)]
        b: u64,
    },
    /// Apply an interpretation scheme to a structure.
    Interpret {
        #[arg(long)]
        scheme: PathBuf,
        #[arg(long)]
        structure: PathBuf,
    },
    /// Transport a formula through a scheme; optionally verify on a structure.
    Transport {
        #[arg(long)]
        scheme: PathBuf,
        #[arg(long)]
        formula: String,
        /// When given, check the transported formula against the applied
        /// scheme on this structure (exhaustive unless --samples is set).
        #[arg(long)]
        structure: Option<PathBuf>,
        #[command(flatten)]
        sample: SampleArgs,
    },
    /// Build a named structure family member.
    Generate {
        /// Family name: path, cycle, clique, star, rooted_tree_random,
        /// transitive_tournament_colored, or disjoint_union.
        #[arg(long)]
        family: String,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Color word over {B, W} for colored tournaments.
        #[arg(long)]
        colors: Option<String>,
        /// File listing part structure paths for disjoint_union.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Evaluate a scattered-witness sentence: m satisfiers of a unary formula
    /// pairwise further apart than 2·radius.
    Scattered {
        #[arg(long)]
        structure: PathBuf,
        #[arg(long)]
        formula: String,
        #[arg(long)]
        radius: u32,
        /// Number of pairwise-scattered witnesses required.
        #[arg(long)]
        witnesses: usize,
    },
    /// Decide vertex transitivity by automorphism search.
    Transitive {
        #[arg(long)]
        structure: PathBuf,
    },
    /// Locality bounds implied by quantifier rank and free-variable count.
    #[command(name = "gaifman-bounds")]
    GaifmanBounds {
        #[arg(long)]
        qrank: u32,
        #[arg(long)]
        n: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Eval { .. } => "eval",
            Command::Pair { .. } => "pair",
            Command::Sat { .. } => "sat",
            Command::Hom { .. } => "hom",
            Command::Qg { .. } => "qg",
            Command::Profile { .. } => "profile",
            Command::Converge { .. } => "converge",
            Command::Local { .. } => "local",
            Command::Dispersion { .. } => "dispersion",
            Command::Decompose { .. } => "decompose",
            Command::Fmtp { .. } => "fmtp",
            Command::Interpret { .. } => "interpret",
            Command::Transport { .. } => "transport",
            Command::Generate { .. } => "generate",
            Command::Scattered { .. } => "scattered",
            Command::Transitive { .. } => "transitive",
            Command::GaifmanBounds { .. } => "gaifman-bounds",
        }
    }
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct CliError {
    kind: String,
    message: String,
}

impl CliError {
    fn new(kind: &str, message: String) -> Self {
        CliError { kind: kind.to_string(), message }
    }

    fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::new("io", format!("{}: {err}", path.display()))
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        CliError { kind: err.kind().to_string(), message: err.to_string() }
    }
}

// ---------------------------------------------------------------------------
// Canonical report serialization
// ---------------------------------------------------------------------------

/// Render a float at exactly 10 significant digits (scientific notation),
/// which is still a valid JSON number.
fn format_float(x: f64) -> String {
    format!("{x:.9e}")
}

fn write_json(value: &Value, pretty: bool, depth: usize, out: &mut String) {
    let pad = |out: &mut String, levels: usize| {
        for _ in 0..levels {
            out.push_str("  ");
        }
    };
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else {
                out.push_str(&format_float(n.as_f64().expect("number is i64, u64, or f64")));
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string serializes")),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                if pretty {
                    out.push('\n');
                    pad(out, depth + 1);
                }
                write_json(item, pretty, depth + 1, out);
            }
            if pretty {
                out.push('\n');
                pad(out, depth);
            }
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push('{');
            for (i, (key, item)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                if pretty {
                    out.push('\n');
                    pad(out, depth + 1);
                }
                out.push_str(&serde_json::to_string(key).expect("key serializes"));
                out.push(':');
                if pretty {
                    out.push(' ');
                }
                write_json(item, pretty, depth + 1, out);
            }
            if pretty {
                out.push('\n');
                pad(out, depth);
            }
            out.push('}');
        }
    }
}

/// Canonical pretty report: sorted keys (serde_json maps are ordered),
/// two-space indent, fixed-width floats, trailing newline.
fn canonical_report(value: &Value) -> String {
    let mut out = String::new();
    write_json(value, true, 0, &mut out);
    out.push('\n');
    out
}

/// Single-line rendering used for the manifest header of CSV reports.
fn canonical_line(value: &Value) -> String {
    let mut out = String::new();
    write_json(value, false, 0, &mut out);
    out
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Trace rows of a convergence report: one line per (formula, index).
fn trace_csv(manifest: &Value, report: &ConvergenceReport) -> String {
    let mut out = String::new();
    out.push_str("# manifest ");
    out.push_str(&canonical_line(manifest));
    out.push('\n');
    out.push_str("formula,arity,index,structure,value\n");
    for entry in &report.entries {
        for (i, value) in entry.values.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                csv_field(&entry.formula),
                entry.arity,
                i,
                report.structures[i],
                value
            ));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Input loading
// ---------------------------------------------------------------------------

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn structure_from(path: &Path) -> Result<Structure, CliError> {
    let text = read_file(path)?;
    // Reports wrap their payload under "result"; accept such files
    // transparently so `generate`/`interpret` outputs feed back in as inputs.
    if let Ok(value) = serde_json::from_str::<Value>(&text) {
        if let Some(result) = value.as_object().and_then(|m| m.get("result")) {
            if result.get("n").is_some() && result.get("signature").is_some() {
                let inner = serde_json::to_string(result).expect("value reserializes");
                return Ok(load_structure(&inner)?);
            }
        }
    }
    Ok(load_structure(&text)?)
}

/// Parse a formula, validating symbols against the structure's signature.
fn formula_for(text: &str, structure: &Structure) -> Result<Formula, CliError> {
    Ok(parse_formula(text, Some(&structure.signature))?)
}

/// Structures listed one path per line (relative to the list file), with the
/// paths as written.
fn structure_list(path: &Path) -> Result<(Vec<Structure>, Vec<String>), CliError> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut structures = Vec::new();
    let mut names = Vec::new();
    for line in read_file(path)?.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let entry = base.join(line);
        let a = structure_from(&entry).map_err(|e| {
            CliError::new(&e.kind, format!("{} (listed in {})", e.message, path.display()))
        })?;
        structures.push(a);
        names.push(line.to_string());
    }
    if structures.is_empty() {
        return Err(CliError::new(
            "invalid-params",
            format!("{} lists no structures", path.display()),
        ));
    }
    Ok((structures, names))
}

/// Formulas listed one per line; `#` comments and blank lines are skipped. A
/// line may fix its pairing arity with a numeric `ARITY|` prefix; otherwise
/// the least sufficient arity is used.
fn formula_list(path: &Path) -> Result<Vec<(Formula, usize)>, CliError> {
    let mut out = Vec::new();
    for (lineno, raw) in read_file(path)?.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (arity, body) = match line.split_once('|') {
            Some((head, rest))
                if !head.trim().is_empty() && head.trim().bytes().all(|b| b.is_ascii_digit()) =>
            {
                (Some(head.trim().parse::<usize>().expect("digits parse")), rest)
            }
            _ => (None, line),
        };
        let formula = parse_formula(body, None).map_err(|e| {
            CliError::new(e.kind(), format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        let arity = arity.unwrap_or_else(|| classify_fragment(&formula).min_p);
        out.push((formula, arity));
    }
    if out.is_empty() {
        return Err(CliError::new("invalid-params", format!("{} lists no formulas", path.display())));
    }
    Ok(out)
}

fn parse_assignment(text: &str) -> Result<Vec<usize>, CliError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|part| {
            part.trim().parse::<usize>().map_err(|_| {
                CliError::new("invalid-params", format!("bad assignment entry `{part}`"))
            })
        })
        .collect()
}

fn resolve_cap_tuples(flag: Option<u64>) -> Result<u64, CliError> {
    if let Some(cap) = flag {
        return Ok(cap);
    }
    match std::env::var("FOLIM_CAP_TUPLES") {
        Ok(text) => text.parse().map_err(|_| {
            CliError::new("invalid-params", format!("FOLIM_CAP_TUPLES=`{text}` is not a number"))
        }),
        Err(_) => Ok(DEFAULT_CAP_TUPLES),
    }
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

fn path_string(path: &Path) -> Value {
    Value::String(path.display().to_string())
}

/// The reproducibility record embedded in every report.
fn manifest_for(cli: &Cli, caps: &Caps) -> Value {
    let mut inputs = Map::new();
    let mut params = Map::new();
    params.insert(
        "caps".to_string(),
        json!({"tuples": caps.tuples, "canon": caps.canon, "transitive": caps.transitive}),
    );
    let mut input = |key: &str, path: &PathBuf| {
        inputs.insert(key.to_string(), path_string(path));
    };
    match &cli.command {
        Command::Eval { structure, formula, assignment } => {
            input("structure", structure);
            params.insert("formula".to_string(), json!(formula));
            params.insert("assignment".to_string(), json!(assignment));
        }
        Command::Pair { structure, formula, arity, sample, confidence, .. } => {
            input("structure", structure);
            params.insert("formula".to_string(), json!(formula));
            if let Some(p) = arity {
                params.insert("arity".to_string(), json!(p));
            }
            match sample.samples {
                Some(n) => {
                    params.insert("samples".to_string(), json!(n));
                    params.insert("seed".to_string(), json!(sample.seed));
                    params.insert("confidence".to_string(), json!(confidence));
                }
                None => {
                    params.insert("exact".to_string(), json!(true));
                }
            }
        }
        Command::Sat { structure, formula, arity } => {
            input("structure", structure);
            params.insert("formula".to_string(), json!(formula));
            if let Some(p) = arity {
                params.insert("arity".to_string(), json!(p));
            }
        }
        Command::Hom { pattern, structure } => {
            input("pattern", pattern);
            input("structure", structure);
        }
        Command::Qg { quantum, structure, manifest } => {
            input("quantum", quantum);
            if let Some(path) = structure {
                input("structure", path);
            }
            if let Some(path) = manifest {
                input("manifest", path);
            }
        }
        Command::Profile { structure, formulas } => {
            input("structure", structure);
            input("formulas", formulas);
        }
        Command::Converge { manifest, formulas, epsilon, window } => {
            input("manifest", manifest);
            input("formulas", formulas);
            params.insert("epsilon".to_string(), json!(epsilon));
            params.insert("window".to_string(), json!(window));
        }
        Command::Local { structure, other, radius } => {
            input("structure", structure);
            if let Some(path) = other {
                input("other", path);
            }
            params.insert("radius".to_string(), json!(radius));
        }
        Command::Dispersion { manifest, d_max } => {
            input("manifest", manifest);
            params.insert("d_max".to_string(), json!(d_max));
        }
        Command::Decompose { structure } => {
            input("structure", structure);
        }
        Command::Fmtp { structure, phi, psi, a, b } => {
            input("structure", structure);
            params.insert("phi".to_string(), json!(phi));
            params.insert("psi".to_string(), json!(psi));
            params.insert("a".to_string(), json!(a));
            params.insert("b".to_string(), json!(b));
        }
        Command::Interpret { scheme, structure } => {
            input("scheme", scheme);
            input("structure", structure);
        }
        Command::Transport { scheme, formula, structure, sample } => {
            input("scheme", scheme);
            params.insert("formula".to_string(), json!(formula));
            if let Some(path) = structure {
                input("structure", path);
                if let Some(n) = sample.samples {
                    params.insert("samples".to_string(), json!(n));
                    params.insert("seed".to_string(), json!(sample.seed));
                }
            }
        }
        Command::Generate { family, n, seed, colors, manifest } => {
            params.insert("family".to_string(), json!(family));
            if let Some(n) = n {
                params.insert("n".to_string(), json!(n));
            }
            if let Some(seed) = seed {
                params.insert("seed".to_string(), json!(seed));
            }
            if let Some(colors) = colors {
                params.insert("colors".to_string(), json!(colors));
            }
            if let Some(path) = manifest {
                input("manifest", path);
            }
        }
        Command::Scattered { structure, formula, radius, witnesses } => {
            input("structure", structure);
            params.insert("formula".to_string(), json!(formula));
            params.insert("radius".to_string(), json!(radius));
            params.insert("witnesses".to_string(), json!(witnesses));
        }
        Command::Transitive { structure } => {
            input("structure", structure);
        }
        Command::GaifmanBounds { qrank, n } => {
            params.insert("qrank".to_string(), json!(qrank));
            params.insert("n".to_string(), json!(n));
        }
    }
    let mut manifest = Map::new();
    manifest.insert("command".to_string(), json!(cli.command.name()));
    manifest.insert("inputs".to_string(), Value::Object(inputs));
    manifest.insert("parameters".to_string(), Value::Object(params));
    if let Some(out) = &cli.out {
        manifest.insert("output".to_string(), path_string(out));
    }
    manifest.insert(
        "format".to_string(),
        json!(match cli.format {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        }),
    );
    manifest.insert("version".to_string(), json!(env!("CARGO_PKG_VERSION")));
    manifest.insert("prng".to_string(), json!(PRNG_NAME));
    Value::Object(manifest)
}

// ---------------------------------------------------------------------------
// Command execution
// ---------------------------------------------------------------------------

enum Payload {
    Json(Value),
    Trace(Box<ConvergenceReport>),
}

fn to_json<T: serde::Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("report types serialize")
}

fn execute(command: &Command, caps: &Caps) -> Result<Payload, CliError> {
    let payload = match command {
        Command::Eval { structure, formula, assignment } => {
            let a = structure_from(structure)?;
            let f = formula_for(formula, &a)?;
            let asg = parse_assignment(assignment)?;
            let holds = models(&a, &f, &asg)?;
            json!({"holds": holds})
        }
        Command::Pair { structure, formula, arity, sample, confidence, .. } => {
            let a = structure_from(structure)?;
            let f = formula_for(formula, &a)?;
            let p = arity.unwrap_or_else(|| classify_fragment(&f).min_p);
            let result = match sample.samples {
                Some(n) => estimate_stone_pairing(&a, &f, p, n, sample.seed, *confidence)?,
                None => stone_pairing_result(&a, &f, p, caps)?,
            };
            to_json(&result)
        }
        Command::Sat { structure, formula, arity } => {
            let a = structure_from(structure)?;
            let f = formula_for(formula, &a)?;
            let p = arity.unwrap_or_else(|| classify_fragment(&f).min_p);
            let tuples = satisfying_set(&a, &f, p, caps)?;
            json!({"arity": p, "count": tuples.len(), "tuples": tuples})
        }
        Command::Hom { pattern, structure } => {
            let f = structure_from(pattern)?;
            let g = structure_from(structure)?;
            let count = hom_count(&f, &g, caps)?;
            let density = hom_density(&f, &g, caps)?;
            json!({"hom": count.to_string(), "density": to_json(&density)})
        }
        Command::Qg { quantum, structure, manifest } => {
            let q = load_quantum_graph(&read_file(quantum)?, caps)?;
            match (structure, manifest) {
                (Some(path), None) => {
                    let g = structure_from(path)?;
                    let value = qg_evaluate(&q, &g, caps)?;
                    json!({"value": to_json(&value)})
                }
                (None, Some(path)) => {
                    let (corpus, names) = structure_list(path)?;
                    let (norm, arg) = qg_corpus_norm(&q, &corpus, caps)?;
                    json!({
                        "norm": to_json(&norm),
                        "argmax_index": arg,
                        "argmax_structure": names[arg],
                        "corpus_size": corpus.len(),
                    })
                }
                _ => unreachable!("clap enforces exactly one of --structure/--manifest"),
            }
        }
        Command::Profile { structure, formulas } => {
            let a = structure_from(structure)?;
            let entries = formula_list(formulas)?;
            let values = profile(&a, &entries, caps)?;
            let rows: Vec<Value> = entries
                .iter()
                .zip(&values)
                .map(|((f, p), v)| {
                    json!({"formula": f.to_string(), "arity": p, "value": to_json(v)})
                })
                .collect();
            json!({"structure": a.structure_id(), "entries": rows})
        }
        Command::Converge { manifest, formulas, epsilon, window } => {
            let (seq, _) = structure_list(manifest)?;
            let entries = formula_list(formulas)?;
            let eps = Rational::from_str(epsilon)?;
            let report = convergence_report(&seq, &entries, &eps, *window, caps)?;
            return Ok(Payload::Trace(Box::new(report)));
        }
        Command::Local { structure, other, radius } => {
            let a = structure_from(structure)?;
            match other {
                Some(path) => {
                    let b = structure_from(path)?;
                    let d = local_distance(&a, &b, *radius, caps)?;
                    json!({"radius": radius, "distance": to_json(&d)})
                }
                None => to_json(&ball_type_distribution(&a, *radius, caps)?),
            }
        }
        Command::Dispersion { manifest, d_max } => {
            let (seq, _) = structure_list(manifest)?;
            to_json(&dispersion_report(&seq, *d_max)?)
        }
        Command::Decompose { structure } => {
            let a = structure_from(structure)?;
            json!({"parts": to_json(&comb_decompose(&a)?)})
        }
        Command::Fmtp { structure, phi, psi, a, b } => {
            let m = structure_from(structure)?;
            let phi = formula_for(phi, &m)?;
            let psi = formula_for(psi, &m)?;
            to_json(&check_fmtp(&m, &phi, &psi, *a, *b, caps)?)
        }
        Command::Interpret { scheme, structure } => {
            let scheme = load_scheme(&read_file(scheme)?)?;
            let a = structure_from(structure)?;
            to_json(&scheme.apply(&a, caps)?)
        }
        Command::Transport { scheme, formula, structure, sample } => {
            let scheme = load_scheme(&read_file(scheme)?)?;
            let phi = parse_formula(formula, None)?;
            match structure {
                Some(path) => {
                    let a = structure_from(path)?;
                    let mode = match sample.samples {
                        Some(trials) => VerifyMode::Sample { trials, seed: sample.seed },
                        None => VerifyMode::Exhaustive,
                    };
                    to_json(&verify_transport(&scheme, &a, &phi, mode, caps)?)
                }
                None => {
                    let transported = transport_formula(&scheme, &phi)?;
                    json!({
                        "formula": phi.to_string(),
                        "transported": transported.to_string(),
                        "arity": classify_fragment(&transported).min_p,
                    })
                }
            }
        }
        Command::Generate { family, n, seed, colors, manifest } => {
            let parts = match manifest {
                Some(path) => structure_list(path)?.0,
                None => Vec::new(),
            };
            let family = Family::from_name(family, *n, *seed, colors.as_deref(), parts)?;
            to_json(&generate(&family)?)
        }
        Command::Scattered { structure, formula, radius, witnesses } => {
            let a = structure_from(structure)?;
            let f = formula_for(formula, &a)?;
            let holds = eval_gaifman_sentence(&a, &f, *radius, *witnesses)?;
            json!({"holds": holds})
        }
        Command::Transitive { structure } => {
            let a = structure_from(structure)?;
            json!({"vertex_transitive": is_vertex_transitive(&a, caps.transitive)?})
        }
        Command::GaifmanBounds { qrank, n } => {
            let (radius, depth, sentences) = gaifman_bounds(*qrank, *n)?;
            json!({"radius": radius, "local_depth": depth, "sentences": sentences})
        }
    };
    Ok(Payload::Json(payload))
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

fn write_report(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| CliError::io(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: &Cli) -> Result<i32, CliError> {
    let caps = Caps {
        tuples: resolve_cap_tuples(cli.cap_tuples)?,
        canon: cli.cap_canon,
        transitive: cli.cap_transitive,
    };
    let manifest = manifest_for(cli, &caps);
    let text = match execute(&cli.command, &caps)? {
        Payload::Json(result) => {
            canonical_report(&json!({"manifest": manifest, "result": result}))
        }
        Payload::Trace(report) => match cli.format {
            ReportFormat::Json => {
                canonical_report(&json!({"manifest": manifest, "result": to_json(&report)}))
            }
            ReportFormat::Csv => trace_csv(&manifest, &report),
        },
    };
    write_report(&cli.out, &text)?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    // Flag misuse clap cannot express: CSV is defined for trace output only.
    if cli.format == ReportFormat::Csv && !matches!(cli.command, Command::Converge { .. }) {
        let report = json!({"error": {
            "kind": "usage",
            "message": "--format csv is only available for converge traces",
        }});
        eprint!("{}", canonical_report(&report));
        return ExitCode::from(2);
    }
    match run(&cli) {
        Ok(_) => ExitCode::SUCCESS,
        Err(err) => {
            let report = json!({"error": {"kind": err.kind, "message": err.message}});
            let text = canonical_report(&report);
            if write_report(&cli.out, &text).is_err() {
                eprint!("{text}");
            }
            ExitCode::from(1)
        }
    }
}
