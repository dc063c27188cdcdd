//! Static virtualization of C source: file-scope and function-static objects
//! become arrays indexed by the running stack instance.
//!
//! ```
//! use nsc_globalizer::{globalize_source, TransformConfig};
//!
//! let src = "struct uip_conn *uip_conn;\nvoid f(void) { uip_conn = NULL; }\n";
//! let out = globalize_source(src, &TransformConfig::default()).unwrap();
//! assert!(out.source.contains("struct uip_conn *global_uip_conn[NUM_STACKS];"));
//! assert!(out.source.contains("global_uip_conn[get_stack_id()] = NULL;"));
//! ```

pub mod lexer;
pub mod syntax;
pub mod transform;

use std::fmt;
use std::path::Path;

use thiserror::Error;

pub use lexer::{tokenize, LexError, Token, TokenKind};
pub use syntax::{Analysis, Declaration, DiagKind, Diagnostic, Scope, Storage};
pub use transform::{transform, Transformed};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformConfig {
    pub dim_symbol: String,
    pub accessor: String,
    pub prefix: String,
    /// When set, only these names are virtualized.
    pub include: Option<Vec<String>>,
    pub exclude: Vec<String>,
    pub init_fn_name: String,
}

impl Default for TransformConfig {
    fn default() -> Self {
        TransformConfig {
            dim_symbol: "NUM_STACKS".into(),
            accessor: "get_stack_id()".into(),
            prefix: "global_".into(),
            include: None,
            exclude: Vec::new(),
            init_fn_name: "globaliser_init_globals".into(),
        }
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Non-empty bracket-balanced token sequence without statement separators.
fn is_expression(s: &str) -> bool {
    let Ok(toks) = tokenize(s) else { return false };
    let mut depth = 0i64;
    let mut any = false;
    for t in toks.iter().filter(|t| !t.is_trivia()) {
        any = true;
        match t.text.as_str() {
            "(" | "[" => depth += 1,
            ")" | "]" => depth -= 1,
            ";" | "{" | "}" | "," => return false,
            _ => {}
        }
        if depth < 0 {
            return false;
        }
    }
    any && depth == 0
}

impl TransformConfig {
    pub fn validate(&self) -> Result<(), GlobalizeError> {
        let bad = |msg: String| Err(GlobalizeError::Config(msg));
        if !is_identifier(&self.prefix) {
            return bad(format!("prefix `{}` must be a non-empty identifier", self.prefix));
        }
        if !is_expression(&self.accessor) {
            return bad(format!("accessor `{}` is not an expression", self.accessor));
        }
        if !is_expression(&self.dim_symbol) {
            return bad(format!("dimension `{}` is not an expression", self.dim_symbol));
        }
        if !is_identifier(&self.init_fn_name) {
            return bad(format!("init function name `{}` is not an identifier", self.init_fn_name));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum GlobalizeError {
    #[error(transparent)]
    Lex(#[from] LexError),
    #[error("{line}:{col}: unbalanced bracket")]
    Unbalanced { line: usize, col: usize },
    #[error("{line}:{col}: unsupported initializer: refers to virtualized `{name}`")]
    UnsupportedInitializer { name: String, line: usize, col: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl GlobalizeError {
    /// I/O problems are runtime errors; everything else rejects the input.
    pub fn is_diagnostic(&self) -> bool {
        !matches!(self, GlobalizeError::Io { .. })
    }
}

impl From<syntax::Unbalanced> for GlobalizeError {
    fn from(u: syntax::Unbalanced) -> Self {
        GlobalizeError::Unbalanced { line: u.line, col: u.col }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SymbolOutcome {
    Rewrote { name: String, sites: usize },
    Skipped { name: String, reason: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Report {
    pub symbols: Vec<SymbolOutcome>,
    /// Diagnostics not tied to a symbol.
    pub notes: Vec<String>,
}

impl Report {
    /// Number of virtualized symbols.
    pub fn transformed(&self) -> usize {
        self.symbols.iter().filter(|s| matches!(s, SymbolOutcome::Rewrote { .. })).count()
    }

    pub fn skipped(&self) -> impl Iterator<Item = (&str, &str)> {
        self.symbols.iter().filter_map(|s| match s {
            SymbolOutcome::Skipped { name, reason } => Some((name.as_str(), reason.as_str())),
            SymbolOutcome::Rewrote { .. } => None,
        })
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.symbols {
            match s {
                SymbolOutcome::Rewrote { name, sites } => writeln!(f, "REWROTE {name} {sites} sites")?,
                SymbolOutcome::Skipped { name, reason } => writeln!(f, "SKIPPED {name} {reason}")?,
            }
        }
        for n in &self.notes {
            writeln!(f, "NOTE {n}")?;
        }
        Ok(())
    }
}

/// Declarations, scopes and diagnostics of a token stream.
pub fn find_globals(tokens: &[Token]) -> Result<Analysis, GlobalizeError> {
    let mut a = syntax::analyze(tokens)?;
    for (line, col) in lexer::stray_directives(tokens) {
        a.diagnostics.push(Diagnostic {
            kind: DiagKind::StrayDirective,
            name: None,
            line,
            col,
            message: "preprocessor directive passed through untouched".into(),
        });
    }
    Ok(a)
}

pub fn globalize_source(src: &str, config: &TransformConfig) -> Result<Transformed, GlobalizeError> {
    let tokens = tokenize(src)?;
    let analysis = find_globals(&tokens)?;
    transform(&tokens, &analysis, config)
}

/// Transforms `in_path` into `out_path`. Nothing is written on error.
pub fn globalize_file(in_path: &Path, out_path: &Path, config: &TransformConfig) -> Result<Report, GlobalizeError> {
    let io = |p: &Path, source| GlobalizeError::Io { path: p.display().to_string(), source };
    let src = std::fs::read_to_string(in_path).map_err(|e| io(in_path, e))?;
    let out = globalize_source(&src, config)?;
    std::fs::write(out_path, out.source).map_err(|e| io(out_path, e))?;
    Ok(out.report)
}
