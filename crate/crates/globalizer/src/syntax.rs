//! Grammar-free structural scan: declarations, function bodies, scopes and
//! the identifier occurrences that are not references.

use std::collections::BTreeSet;
use std::ops::Range;

use crate::lexer::{Token, TokenKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Storage {
    None,
    Static,
    Extern,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Scope {
    File,
    /// `static` object inside the body of the named function.
    FunctionStatic { function: String },
}

/// One object declarator (`T [*...] name [dims] [= init]`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Declaration {
    pub name: String,
    pub name_token: usize,
    /// Declaration-specifier tokens shared by every declarator of the
    /// statement.
    pub type_tokens: Range<usize>,
    pub pointer_depth: usize,
    /// Token spans of the `[...]` groups following the name.
    pub existing_array_dims: Vec<Range<usize>>,
    pub storage: Storage,
    /// Tokens after `=` up to the end of this declarator.
    pub initializer: Option<Range<usize>>,
    /// The `=` token.
    pub assign_token: Option<usize>,
    pub scope: Scope,
    pub is_const: bool,
    /// The whole statement including its `;`.
    pub statement: Range<usize>,
    pub line: usize,
    pub col: usize,
}

impl Declaration {
    pub fn is_unsized_array(&self, tokens: &[Token]) -> bool {
        self.existing_array_dims.iter().any(|d| tokens[d.clone()].iter().filter(|t| !t.is_trivia()).count() == 2)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DiagKind {
    ParseAmbiguity,
    StrayDirective,
    Collision,
    Unsupported,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub kind: DiagKind,
    pub name: Option<String>,
    pub line: usize,
    pub col: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BindingKind {
    Param,
    Local,
    /// Function-static object; index into `Analysis::decls`.
    Static(usize),
}

/// A block-scope name visible over token indices `start..end`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Binding {
    pub name: String,
    pub start: usize,
    pub end: usize,
    pub kind: BindingKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Function {
    pub name: String,
    /// First significant token of the definition.
    pub start: usize,
    /// `{` through `}` inclusive.
    pub body: Range<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct Analysis {
    pub decls: Vec<Declaration>,
    pub functions: Vec<Function>,
    pub bindings: Vec<Binding>,
    /// Identifier tokens that are declarators, parameters, type names,
    /// members, labels or tags.
    pub non_refs: BTreeSet<usize>,
    /// Initializers of file-scope declarations.
    pub file_initializers: Vec<Range<usize>>,
    pub diagnostics: Vec<Diagnostic>,
    pub typedefs: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unbalanced {
    pub line: usize,
    pub col: usize,
}

const QUALIFIERS: [&str; 12] = [
    "static",
    "extern",
    "typedef",
    "const",
    "volatile",
    "register",
    "auto",
    "inline",
    "restrict",
    "_Thread_local",
    "_Noreturn",
    "_Atomic",
];

const TYPE_KEYWORDS: [&str; 11] =
    ["void", "char", "short", "int", "long", "float", "double", "signed", "unsigned", "_Bool", "_Complex"];

const TAG_KEYWORDS: [&str; 3] = ["struct", "union", "enum"];

const NONE: usize = usize::MAX;

/// Significant tokens with bracket matching, addressed by position.
struct Sig<'a> {
    toks: &'a [Token],
    idx: Vec<usize>,
    matching: Vec<usize>,
}

impl<'a> Sig<'a> {
    fn new(toks: &'a [Token]) -> Result<Sig<'a>, Unbalanced> {
        let idx: Vec<usize> = (0..toks.len()).filter(|&i| !toks[i].is_trivia()).collect();
        let mut matching = vec![NONE; idx.len()];
        let mut stack: Vec<usize> = Vec::new();
        for (p, &i) in idx.iter().enumerate() {
            let t = &toks[i];
            if t.kind != TokenKind::Punctuator {
                continue;
            }
            match t.text.as_str() {
                "(" | "[" | "{" => stack.push(p),
                ")" | "]" | "}" => {
                    let open = stack.pop().ok_or(Unbalanced { line: t.line, col: t.col })?;
                    let want = match t.text.as_str() {
                        ")" => "(",
                        "]" => "[",
                        _ => "{",
                    };
                    if toks[idx[open]].text != want {
                        return Err(Unbalanced { line: t.line, col: t.col });
                    }
                    matching[open] = p;
                    matching[p] = open;
                }
                _ => {}
            }
        }
        if let Some(&open) = stack.last() {
            let t = &toks[idx[open]];
            return Err(Unbalanced { line: t.line, col: t.col });
        }
        Ok(Sig { toks, idx, matching })
    }

    fn len(&self) -> usize {
        self.idx.len()
    }

    fn tok(&self, p: usize) -> Option<&'a Token> {
        self.idx.get(p).map(|&i| &self.toks[i])
    }

    fn text(&self, p: usize) -> &'a str {
        self.tok(p).map_or("", |t| t.text.as_str())
    }

    fn is(&self, p: usize, s: &str) -> bool {
        self.tok(p).is_some_and(|t| t.text == s && matches!(t.kind, TokenKind::Punctuator | TokenKind::Keyword))
    }

    fn is_ident(&self, p: usize) -> bool {
        self.tok(p).is_some_and(|t| t.kind == TokenKind::Identifier)
    }

    fn is_open(&self, p: usize) -> bool {
        self.is(p, "(") || self.is(p, "[") || self.is(p, "{")
    }

    /// Token index of position `p`; the end of the stream for `p == len`.
    fn ti(&self, p: usize) -> usize {
        self.idx.get(p).copied().unwrap_or(self.toks.len())
    }

    /// First depth-0 `;` in `from..to`, or `to`.
    fn find_semi(&self, from: usize, to: usize) -> usize {
        let mut p = from;
        while p < to {
            if self.is_open(p) {
                p = self.matching[p] + 1;
            } else if self.is(p, ";") {
                return p;
            } else {
                p += 1;
            }
        }
        to
    }

    fn pos(&self, p: usize) -> (usize, usize) {
        self.tok(p).map_or((0, 0), |t| (t.line, t.col))
    }
}

/// Parsed specifiers plus one entry per declarator.
#[derive(Debug, Default)]
struct DeclParse {
    spec_end: usize,
    spec_idents: Vec<usize>,
    struct_bodies: Vec<(usize, usize)>,
    is_typedef: bool,
    storage: Option<&'static str>,
    spec_const: bool,
    /// At least one type keyword, tag or typedef name was seen.
    has_type: bool,
    chunks: Vec<Chunk>,
}

#[derive(Debug, Default)]
struct Chunk {
    name: Option<usize>,
    stars: usize,
    const_after_star: bool,
    dims: Vec<(usize, usize)>,
    is_function: bool,
    params: Option<(usize, usize)>,
    eq: Option<usize>,
    init_end: usize,
    ambiguous: Option<String>,
}

fn is_attribute(sig: &Sig<'_>, p: usize) -> bool {
    sig.is_ident(p) && sig.text(p).starts_with("__") && sig.is(p + 1, "(")
}

fn parse_specifiers(sig: &Sig<'_>, a: usize, b: usize, typedefs: &BTreeSet<String>, d: &mut DeclParse) -> usize {
    let mut p = a;
    while p < b {
        let t = sig.text(p);
        let kw = sig.tok(p).is_some_and(|t| t.kind == TokenKind::Keyword);
        if kw && QUALIFIERS.contains(&t) {
            match t {
                "typedef" => d.is_typedef = true,
                "static" => d.storage = Some("static"),
                "extern" => d.storage = Some("extern"),
                "const" => d.spec_const = true,
                _ => {}
            }
            p += 1;
        } else if kw && TYPE_KEYWORDS.contains(&t) {
            d.has_type = true;
            p += 1;
        } else if kw && TAG_KEYWORDS.contains(&t) {
            d.has_type = true;
            p += 1;
            if sig.is_ident(p) {
                d.spec_idents.push(p);
                p += 1;
            }
            if sig.is(p, "{") {
                d.struct_bodies.push((p, sig.matching[p]));
                p = sig.matching[p] + 1;
            }
        } else if is_attribute(sig, p) {
            d.spec_idents.push(p);
            p = sig.matching[p + 1] + 1;
        } else if sig.is_ident(p) && !d.has_type {
            // A typedef name, unless it is the declarator of an implicit int.
            let next_is_declarator = sig.is_ident(p + 1) || sig.is(p + 1, "*") || sig.is(p + 1, "(");
            if !typedefs.contains(sig.text(p)) && !next_is_declarator {
                break;
            }
            d.has_type = true;
            d.spec_idents.push(p);
            p += 1;
        } else {
            break;
        }
    }
    p
}

fn parse_chunk(sig: &Sig<'_>, a: usize, b: usize) -> Chunk {
    let mut c = Chunk { init_end: b, ..Chunk::default() };
    let mut p = a;
    while p < b {
        if sig.is(p, "*") {
            c.stars += 1;
            c.const_after_star = false;
        } else if sig.is(p, "const") {
            c.const_after_star = c.stars > 0;
        } else if !(sig.is(p, "volatile") || sig.is(p, "restrict") || sig.is(p, "_Atomic")) {
            break;
        }
        p += 1;
    }
    if sig.is(p, "(") && p < b {
        // Parenthesized declarator such as a function pointer.
        let close = sig.matching[p];
        let inner = (p + 1..close).find(|&q| sig.is_ident(q));
        c.name = inner;
        c.ambiguous = Some("parenthesized declarator".into());
        p = close + 1;
        while p < b && sig.is_open(p) {
            p = sig.matching[p] + 1;
        }
    } else if p < b && sig.is_ident(p) {
        c.name = Some(p);
        p += 1;
    } else {
        return c;
    }
    while p < b && sig.is(p, "[") {
        c.dims.push((p, sig.matching[p]));
        p = sig.matching[p] + 1;
    }
    if p < b && sig.is(p, "(") && c.ambiguous.is_none() {
        c.is_function = true;
        c.params = Some((p, sig.matching[p]));
        p = sig.matching[p] + 1;
    }
    while p < b && is_attribute(sig, p) {
        p = sig.matching[p + 1] + 1;
    }
    if p < b && sig.is(p, "=") {
        c.eq = Some(p);
    } else if p < b && !c.is_function && c.ambiguous.is_none() {
        c.ambiguous = Some(format!("unexpected `{}` after declarator", sig.text(p)));
    }
    c
}

/// Parses the declaration occupying positions `a..b` (without `;`).
fn parse_declaration(sig: &Sig<'_>, a: usize, b: usize, typedefs: &BTreeSet<String>) -> DeclParse {
    let mut d = DeclParse::default();
    d.spec_end = parse_specifiers(sig, a, b, typedefs, &mut d);
    let mut start = d.spec_end;
    let mut p = d.spec_end;
    while p <= b {
        if p == b || sig.is(p, ",") {
            let c = parse_chunk(sig, start, p);
            let empty = c.name.is_none();
            d.chunks.push(c);
            if empty && p < b {
                // Commas inside something we could not read.
                break;
            }
            start = p + 1;
            p += 1;
        } else if sig.is_open(p) {
            p = sig.matching[p] + 1;
        } else {
            p += 1;
        }
    }
    d
}

fn is_decl_start(sig: &Sig<'_>, p: usize, typedefs: &BTreeSet<String>) -> bool {
    let Some(t) = sig.tok(p) else { return false };
    match t.kind {
        TokenKind::Keyword => {
            QUALIFIERS.contains(&t.text.as_str())
                || TYPE_KEYWORDS.contains(&t.text.as_str())
                || TAG_KEYWORDS.contains(&t.text.as_str())
        }
        TokenKind::Identifier => {
            typedefs.contains(&t.text)
                || sig.is_ident(p + 1)
                || (t.text.ends_with("_t") && sig.is(p + 1, "*") && sig.is_ident(p + 2))
        }
        _ => false,
    }
}

struct Analyzer<'a> {
    sig: Sig<'a>,
    out: Analysis,
}

/// Scans the token stream once.
pub fn analyze(tokens: &[Token]) -> Result<Analysis, Unbalanced> {
    let sig = Sig::new(tokens)?;
    let mut a = Analyzer { sig, out: Analysis::default() };
    a.file_scope();
    Ok(a.out)
}

impl Analyzer<'_> {
    fn diag(&mut self, kind: DiagKind, p: usize, name: Option<String>, message: impl Into<String>) {
        let (line, col) = self.sig.pos(p);
        self.out.diagnostics.push(Diagnostic { kind, name, line, col, message: message.into() });
    }

    fn mark(&mut self, p: usize) {
        if self.sig.is_ident(p) {
            self.out.non_refs.insert(self.sig.ti(p));
        }
    }

    fn mark_range(&mut self, a: usize, b: usize) {
        for p in a..b {
            self.mark(p);
        }
    }

    fn file_scope(&mut self) {
        let n = self.sig.len();
        let mut p = 0;
        while p < n {
            let start = p;
            let mut q = p;
            let mut seen_eq = false;
            let mut tag_seen = false;
            loop {
                if q >= n {
                    let msg = "declaration runs to end of file without `;`";
                    self.diag(DiagKind::ParseAmbiguity, start, None, msg);
                    self.mark_range(start, n);
                    return;
                }
                if self.sig.is(q, "=") {
                    seen_eq = true;
                }
                if TAG_KEYWORDS.iter().any(|k| self.sig.is(q, k)) {
                    tag_seen = true;
                }
                if self.sig.is(q, "{") {
                    let prev_is_tag = q > start
                        && (TAG_KEYWORDS.iter().any(|k| self.sig.is(q - 1, k))
                            || (self.sig.is_ident(q - 1) && q >= start + 2
                                && TAG_KEYWORDS.iter().any(|k| self.sig.is(q - 2, k))));
                    if seen_eq || (tag_seen && prev_is_tag) {
                        q = self.sig.matching[q] + 1;
                        continue;
                    }
                    let close = self.sig.matching[q];
                    self.function_definition(start, q, close);
                    p = close + 1;
                    break;
                }
                if self.sig.is(q, "(") || self.sig.is(q, "[") {
                    q = self.sig.matching[q] + 1;
                    continue;
                }
                if self.sig.is(q, ";") {
                    self.file_declaration(start, q);
                    p = q + 1;
                    break;
                }
                q += 1;
            }
        }
    }

    fn file_declaration(&mut self, a: usize, semi: usize) {
        let d = parse_declaration(&self.sig, a, semi, &self.out.typedefs);
        self.mark_range(a, d.spec_end);
        for &(o, c) in &d.struct_bodies {
            self.mark_range(o, c);
        }
        for c in &d.chunks {
            let Some(name) = c.name else { continue };
            self.mark(name);
            let text = self.sig.text(name).to_string();
            if d.is_typedef {
                self.out.typedefs.insert(text);
                continue;
            }
            if let Some((o, cl)) = c.params {
                self.mark_range(o, cl);
            }
            if c.is_function {
                continue;
            }
            if let Some(why) = &c.ambiguous {
                self.diag(DiagKind::ParseAmbiguity, name, Some(text), why.clone());
                continue;
            }
            let init = c.eq.map(|eq| self.sig.ti(eq + 1)..self.sig.ti(c.init_end));
            if let Some(r) = &init {
                self.out.file_initializers.push(r.clone());
            }
            self.push_decl(&d, c, a, semi, Scope::File);
        }
        // Identifiers in dims are constant expressions, not object uses.
        for c in &d.chunks {
            let end = c.eq.unwrap_or(c.init_end);
            self.mark_range(d.spec_end, end);
        }
    }

    fn push_decl(&mut self, d: &DeclParse, c: &Chunk, a: usize, semi: usize, scope: Scope) -> usize {
        let name = c.name.expect("named chunk");
        let (line, col) = self.sig.pos(name);
        let decl = Declaration {
            name: self.sig.text(name).to_string(),
            name_token: self.sig.ti(name),
            type_tokens: self.sig.ti(a)..self.sig.ti(d.spec_end),
            pointer_depth: c.stars,
            existing_array_dims: c.dims.iter().map(|&(o, cl)| self.sig.ti(o)..self.sig.ti(cl) + 1).collect(),
            storage: match d.storage {
                Some("static") => Storage::Static,
                Some("extern") => Storage::Extern,
                _ => Storage::None,
            },
            initializer: c.eq.map(|eq| self.sig.ti(eq + 1)..self.sig.ti(c.init_end)),
            assign_token: c.eq.map(|eq| self.sig.ti(eq)),
            scope,
            is_const: (d.spec_const && c.stars == 0) || c.const_after_star,
            statement: self.sig.ti(a)..self.sig.ti(semi) + 1,
            line,
            col,
        };
        self.out.decls.push(decl);
        self.out.decls.len() - 1
    }

    fn function_definition(&mut self, a: usize, open: usize, close: usize) {
        let d = parse_declaration(&self.sig, a, open, &self.out.typedefs);
        self.mark_range(a, open);
        let header = d.chunks.first().filter(|c| c.is_function && d.chunks.len() == 1);
        let name = match header.and_then(|c| c.name) {
            Some(n) => self.sig.text(n).to_string(),
            None => {
                self.diag(DiagKind::ParseAmbiguity, a, None, "function header not understood; parameters ignored");
                String::new()
            }
        };
        let body = self.sig.ti(open)..self.sig.ti(close) + 1;
        if let Some((po, pc)) = header.and_then(|c| c.params) {
            for pname in self.parameters(po, pc) {
                self.out.bindings.push(Binding {
                    name: self.sig.text(pname).to_string(),
                    start: body.start,
                    end: body.end,
                    kind: BindingKind::Param,
                });
            }
        }
        self.out.functions.push(Function { name: name.clone(), start: self.sig.ti(a), body });
        self.block(open, close, &name);
    }

    /// Names declared in the parameter list `po..=pc`.
    fn parameters(&mut self, po: usize, pc: usize) -> Vec<usize> {
        let mut names = Vec::new();
        let mut start = po + 1;
        let mut p = po + 1;
        while p <= pc {
            if p == pc || self.sig.is(p, ",") {
                if p > start {
                    let d = parse_declaration(&self.sig, start, p, &self.out.typedefs);
                    if let Some(n) = d.chunks.first().and_then(|c| c.name) {
                        if d.has_type {
                            names.push(n);
                        }
                    }
                }
                start = p + 1;
                p += 1;
            } else if self.sig.is_open(p) {
                p = self.sig.matching[p] + 1;
            } else {
                p += 1;
            }
        }
        names
    }

    /// End position (inclusive) of the statement controlled by a `for`
    /// header closing at `pc`.
    fn for_body_end(&self, pc: usize, close: usize) -> usize {
        if self.sig.is(pc + 1, "{") {
            self.sig.matching[pc + 1]
        } else {
            self.sig.find_semi(pc + 1, close)
        }
    }

    fn block(&mut self, open: usize, close: usize, func: &str) {
        let mut p = open + 1;
        let mut at_start = true;
        let mut pending_colon = false;
        while p < close {
            let sig = &self.sig;
            if sig.is(p, "{") {
                let q = sig.matching[p];
                if p > 0 && sig.is(p - 1, "=") {
                    p = q + 1;
                    at_start = false;
                    continue;
                }
                self.block(p, q, func);
                p = q + 1;
                at_start = true;
                continue;
            }
            if at_start && is_decl_start(sig, p, &self.out.typedefs) {
                let e = sig.find_semi(p, close);
                let scope_end = self.sig.ti(close) + 1;
                self.block_declaration(p, e, scope_end, func);
                p = e + 1;
                at_start = true;
                continue;
            }
            if sig.is(p, "for") && sig.is(p + 1, "(") {
                let pc = sig.matching[p + 1];
                if is_decl_start(sig, p + 2, &self.out.typedefs) {
                    let e = sig.find_semi(p + 2, pc);
                    let end = self.for_body_end(pc, close);
                    let scope_end = self.sig.ti(end) + 1;
                    self.block_declaration(p + 2, e, scope_end, func);
                    p = e + 1;
                    at_start = false;
                    continue;
                }
            }
            if at_start && (sig.is(p, "case") || sig.is(p, "default")) {
                pending_colon = true;
            }
            if at_start && sig.is_ident(p) && sig.is(p + 1, ":") {
                pending_colon = true;
                self.mark(p);
            }
            if self.sig.is(p, "goto") {
                self.mark(p + 1);
            }
            if (self.sig.is(p, ".") || self.sig.is(p, "->")) && self.sig.is_ident(p + 1) {
                self.mark(p + 1);
            }
            at_start = if self.sig.is(p, ":") && pending_colon {
                pending_colon = false;
                true
            } else {
                self.sig.is(p, ";") || self.sig.is(p, "}")
            };
            p += 1;
        }
    }

    fn block_declaration(&mut self, a: usize, semi: usize, scope_end: usize, func: &str) {
        let d = parse_declaration(&self.sig, a, semi, &self.out.typedefs);
        self.mark_range(a, d.spec_end);
        for &(o, c) in &d.struct_bodies {
            self.mark_range(o, c);
        }
        if d.storage == Some("extern") {
            let msg = "block-scope extern declaration left untouched";
            self.diag(DiagKind::ParseAmbiguity, a, None, msg);
            self.mark_range(a, semi);
            return;
        }
        for c in &d.chunks {
            let Some(name) = c.name else { continue };
            self.mark(name);
            if let Some((o, cl)) = c.params {
                self.mark_range(o, cl);
            }
            let text = self.sig.text(name).to_string();
            if d.is_typedef {
                self.out.typedefs.insert(text.clone());
            }
            if c.is_function {
                continue;
            }
            let start = self.sig.ti(name);
            let kind = if d.storage == Some("static") && !d.is_typedef {
                if let Some(why) = &c.ambiguous {
                    self.diag(DiagKind::ParseAmbiguity, name, Some(text.clone()), why.clone());
                    BindingKind::Local
                } else {
                    let i = self.push_decl(&d, c, a, semi, Scope::FunctionStatic { function: func.to_string() });
                    BindingKind::Static(i)
                }
            } else {
                BindingKind::Local
            };
            self.out.bindings.push(Binding { name: text, start, end: scope_end, kind });
        }
    }
}

impl Analysis {
    /// The innermost block-scope binding of `name` visible at token `at`.
    pub fn binding_at(&self, name: &str, at: usize) -> Option<&Binding> {
        self.bindings
            .iter()
            .filter(|b| b.name == name && b.start <= at && at < b.end)
            .max_by_key(|b| b.start)
    }

    /// Whether token `at` lies inside a function body.
    pub fn in_body(&self, at: usize) -> bool {
        self.functions.iter().any(|f| f.body.contains(&at))
    }
}

/// Whether the identifier token `i` is used as an object in an expression.
pub fn is_reference(tokens: &[Token], a: &Analysis, i: usize) -> bool {
    if tokens[i].kind != TokenKind::Identifier || a.non_refs.contains(&i) {
        return false;
    }
    let prev = tokens[..i].iter().rev().find(|t| !t.is_trivia());
    !prev.is_some_and(|t| {
        matches!(t.text.as_str(), "." | "->" | "goto" | "struct" | "union" | "enum")
            && matches!(t.kind, TokenKind::Punctuator | TokenKind::Keyword)
    })
}
