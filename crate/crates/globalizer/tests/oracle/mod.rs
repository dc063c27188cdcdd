//! Brute-force scope oracle: re-walks the token stream backwards from every
//! identifier occurrence to find its innermost binding.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use nsc_globalizer::{find_globals, globalize_source, tokenize, transform, SymbolOutcome, Token, TokenKind, TransformConfig};

const TYPE_WORDS: [&str; 16] = [
    "int", "char", "short", "long", "unsigned", "signed", "void", "float", "double", "_Bool", "const", "volatile",
    "static", "extern", "register", "restrict",
];

pub struct Oracle<'a> {
    pub toks: Vec<&'a Token>,
    /// Original token index of each significant token.
    pub orig: Vec<usize>,
    typedefs: BTreeSet<String>,
}

#[derive(Debug, PartialEq, Eq)]
pub enum Resolution {
    NotReference,
    Local,
    /// Function-static declared in `fn`.
    Static(String),
    File,
}

impl<'a> Oracle<'a> {
    pub fn new(all: &'a [Token]) -> Self {
        let mut toks = Vec::new();
        let mut orig = Vec::new();
        for (i, t) in all.iter().enumerate() {
            if !t.is_trivia() {
                toks.push(t);
                orig.push(i);
            }
        }
        // `typedef ... NAME;` at brace depth 0.
        let mut typedefs = BTreeSet::new();
        let mut depth = 0i32;
        let mut in_typedef = false;
        for (k, t) in toks.iter().enumerate() {
            match t.text.as_str() {
                "{" => depth += 1,
                "}" => depth -= 1,
                "typedef" if depth == 0 => in_typedef = true,
                ";" if depth == 0 && in_typedef => {
                    typedefs.insert(toks[k - 1].text.clone());
                    in_typedef = false;
                }
                _ => {}
            }
        }
        Oracle { toks, orig, typedefs }
    }

    pub fn t(&self, k: usize) -> &str {
        self.toks.get(k).map_or("", |t| t.text.as_str())
    }

    pub fn is_ident(&self, k: usize) -> bool {
        self.toks.get(k).is_some_and(|t| t.kind == TokenKind::Identifier)
    }

    fn is_type_word(&self, k: usize) -> bool {
        let t = self.t(k);
        TYPE_WORDS.contains(&t)
            || self.typedefs.contains(t)
            || (self.is_ident(k) && k > 0 && matches!(self.t(k - 1), "struct" | "union" | "enum"))
            || t == "}" && self.closes_type_body(k)
    }

    /// `}` ending `struct [tag] { ... }`.
    fn closes_type_body(&self, close: usize) -> bool {
        let open = self.open_of(close);
        open > 0
            && (matches!(self.t(open - 1), "struct" | "union" | "enum")
                || (open > 1 && matches!(self.t(open - 2), "struct" | "union" | "enum")))
    }

    fn open_of(&self, close: usize) -> usize {
        let (o, c) = match self.t(close) {
            "}" => ("{", "}"),
            ")" => ("(", ")"),
            _ => ("[", "]"),
        };
        let mut d = 0;
        let mut k = close;
        loop {
            if self.t(k) == c {
                d += 1;
            } else if self.t(k) == o {
                d -= 1;
                if d == 0 {
                    return k;
                }
            }
            k -= 1;
        }
    }

    fn close_of(&self, open: usize) -> usize {
        let (o, c) = match self.t(open) {
            "{" => ("{", "}"),
            "(" => ("(", ")"),
            _ => ("[", "]"),
        };
        let mut d = 0;
        for k in open.. {
            if self.t(k) == o {
                d += 1;
            } else if self.t(k) == c {
                d -= 1;
                if d == 0 {
                    return k;
                }
            }
        }
        unreachable!()
    }

    /// Whether occurrence `k` declares its identifier.
    fn is_declarator(&self, k: usize) -> bool {
        if !matches!(self.t(k + 1), ";" | "," | "=" | "[" | ")") {
            return false;
        }
        let mut p = k;
        while p > 0 && matches!(self.t(p - 1), "*" | "const") {
            p -= 1;
        }
        if p == 0 {
            return false;
        }
        if self.is_type_word(p - 1) {
            return true;
        }
        if self.t(p - 1) != "," {
            return false;
        }
        // In a declaration list: find the start of the statement or list.
        let mut q = p - 1;
        loop {
            if q == 0 {
                return self.is_type_word(0);
            }
            let prev = self.t(q - 1);
            if matches!(prev, ")" | "]" | "}") && q - 1 > 0 {
                let open = self.open_of(q - 1);
                if prev == "}" && !self.closes_type_body(q - 1) && !self.is_initializer_open(open) {
                    return self.is_type_word(q);
                }
                q = open;
                continue;
            }
            if matches!(prev, ";" | "{" | "(") {
                return self.is_type_word(q);
            }
            q -= 1;
        }
    }

    fn is_initializer_open(&self, open: usize) -> bool {
        open > 0 && matches!(self.t(open - 1), "=" | "," | "{")
    }

    /// Statement containing position `k` starts with `static`.
    fn statement_is_static(&self, k: usize) -> bool {
        let mut q = k;
        while q > 0 && !matches!(self.t(q - 1), ";" | "{" | "}") {
            q -= 1;
        }
        (q..k).any(|p| self.t(p) == "static")
    }

    /// `for (` header group starting at `open` covers `k` through its body.
    fn for_extent_covers(&self, open: usize, k: usize) -> bool {
        if open == 0 || self.t(open - 1) != "for" {
            return false;
        }
        let close = self.close_of(open);
        let end = if self.t(close + 1) == "{" {
            self.close_of(close + 1)
        } else {
            let mut e = close + 1;
            while self.t(e) != ";" {
                if matches!(self.t(e), "(" | "[") {
                    e = self.close_of(e);
                }
                e += 1;
            }
            e
        };
        open < k && k <= end
    }

    /// Declarators of `name` inside the paren group `open..close`.
    fn declares_in(&self, open: usize, close: usize, name: &str) -> bool {
        (open + 1..close).any(|p| self.t(p) == name && self.is_ident(p) && self.is_declarator(p))
    }

    pub fn enclosing_function(&self, k: usize) -> Option<String> {
        // Outermost `{` before k that is still open.
        let mut depth = 0;
        let mut outer = None;
        for p in (0..k).rev() {
            match self.t(p) {
                "}" => depth += 1,
                "{" if depth > 0 => depth -= 1,
                "{" => outer = Some(p),
                _ => {}
            }
        }
        let open = outer?;
        if self.t(open - 1) != ")" {
            return None;
        }
        let po = self.open_of(open - 1);
        Some(self.t(po - 1).to_string())
    }

    pub fn resolve(&self, k: usize) -> Resolution {
        let name = self.t(k);
        if k > 0 && matches!(self.t(k - 1), "." | "->" | "goto" | "struct" | "union" | "enum") {
            return Resolution::NotReference;
        }
        if self.t(k + 1) == ":" && k > 0 && matches!(self.t(k - 1), ";" | "{" | "}") {
            return Resolution::NotReference;
        }
        if self.is_declarator(k) {
            return Resolution::NotReference;
        }
        let Some(function) = self.enclosing_function(k) else { return Resolution::NotReference };
        // Inside a struct body?
        let mut depth = 0;
        for p in (0..k).rev() {
            match self.t(p) {
                "}" => depth += 1,
                "{" if depth > 0 => depth -= 1,
                "{" if p > 0 && (matches!(self.t(p - 1), "struct" | "union" | "enum") || self.closes_type_body(self.close_of(p))) => {
                    return Resolution::NotReference;
                }
                _ => {}
            }
        }
        // Walk backwards at the visible level.
        let mut p = k;
        while p > 0 {
            p -= 1;
            let t = self.t(p);
            if t == "}" || t == "]" {
                p = self.open_of(p);
                continue;
            }
            if t == ")" {
                let open = self.open_of(p);
                let after_body = self.t(p + 1) == "{" && self.close_of(p + 1) > k;
                if (after_body || self.for_extent_covers(open, k)) && self.declares_in(open, p, name) {
                    return Resolution::Local;
                }
                p = open;
                continue;
            }
            if t == "(" && self.for_extent_covers(p, k) {
                continue;
            }
            if t == name && self.is_ident(p) && self.is_declarator(p) {
                let at_file = self.enclosing_function(p).is_none();
                return if at_file {
                    Resolution::File
                } else if self.statement_is_static(p) {
                    Resolution::Static(function)
                } else {
                    Resolution::Local
                };
            }
        }
        Resolution::File
    }
}

/// The `.c` files under `dir`, sorted.
pub fn corpus(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "c"))
        .collect();
    files.sort();
    files
}

/// Compares the transformer's rewrite sites on `src` with the oracle and
/// checks stability. Returns the number of rewritten sites.
pub fn check_source(src: &str, config: &TransformConfig) -> Result<usize, String> {
    let toks = tokenize(src).map_err(|e| e.to_string())?;
    let analysis = find_globals(&toks).map_err(|e| e.to_string())?;
    let out = transform(&toks, &analysis, config).map_err(|e| e.to_string())?;
    let statics: BTreeSet<String> = out
        .report
        .symbols
        .iter()
        .filter_map(|s| match s {
            SymbolOutcome::Rewrote { name, .. } if name.contains("::") => Some(name.clone()),
            _ => None,
        })
        .collect();
    let oracle = Oracle::new(&toks);
    let mut expected: BTreeMap<usize, String> = BTreeMap::new();
    for k in 0..oracle.toks.len() {
        if !oracle.is_ident(k) {
            continue;
        }
        let name = oracle.t(k);
        let rewrite = match oracle.resolve(k) {
            Resolution::File => out.file_names.contains(name),
            Resolution::Static(f) => statics.contains(&format!("{f}::{name}")),
            _ => false,
        };
        if rewrite {
            expected.insert(oracle.orig[k], name.to_string());
        }
    }
    if out.sites != expected {
        return Err(format!("rewrite sites {:?} differ from oracle {:?}", out.sites, expected));
    }
    let total: usize = out
        .report
        .symbols
        .iter()
        .map(|s| if let SymbolOutcome::Rewrote { sites, .. } = s { *sites } else { 0 })
        .sum();
    if total != expected.len() {
        return Err(format!("report counts {total} sites, oracle {}", expected.len()));
    }
    let again = globalize_source(&out.source, config).map_err(|e| e.to_string())?;
    if again.source != out.source || !again.sites.is_empty() {
        return Err("output changes under re-transformation".into());
    }
    Ok(expected.len())
}
