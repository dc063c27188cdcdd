//! Rewriting of virtualized declarations and their references.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::lexer::{Token, TokenKind};
use crate::syntax::{is_reference, Analysis, BindingKind, DiagKind, Scope, Storage};
use crate::{GlobalizeError, Report, SymbolOutcome, TransformConfig};

/// Output of [`transform`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transformed {
    pub source: String,
    /// Reference sites that were rewritten: token index to original name.
    pub sites: BTreeMap<usize, String>,
    /// Names virtualized at file scope.
    pub file_names: BTreeSet<String>,
    pub report: Report,
}

/// Declarations sharing one virtualized object.
struct Group {
    key: String,
    new_name: String,
    decls: Vec<usize>,
    function: Option<String>,
}

fn is_zero_number(text: &str) -> bool {
    let t = text.trim_end_matches(['u', 'U', 'l', 'L', 'f', 'F']);
    if let Some(hex) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        return u64::from_str_radix(hex, 16) == Ok(0);
    }
    t.parse::<f64>() == Ok(0.0)
}

/// Whether an initializer only ever produces all-zero bytes, matching the
/// default state of static storage.
pub fn is_zero_initializer(tokens: &[Token]) -> bool {
    let mut any = false;
    for t in tokens.iter().filter(|t| !t.is_trivia()) {
        any = true;
        let ok = match t.kind {
            TokenKind::Number => is_zero_number(&t.text),
            TokenKind::Char => t.text == "'\\0'",
            TokenKind::Punctuator => matches!(t.text.as_str(), "{" | "}" | "," | "(" | ")" | "*"),
            TokenKind::Keyword => t.text == "void",
            TokenKind::Identifier => t.text == "NULL",
            _ => false,
        };
        if !ok {
            return false;
        }
    }
    any
}

fn text(tokens: &[Token], r: std::ops::Range<usize>) -> String {
    tokens[r].iter().map(|t| t.text.as_str()).collect()
}

fn select_groups(
    tokens: &[Token],
    a: &Analysis,
    config: &TransformConfig,
    report: &mut Report,
) -> Vec<Group> {
    let mut groups: Vec<Group> = Vec::new();
    for (i, d) in a.decls.iter().enumerate() {
        let (key, function) = match &d.scope {
            Scope::File => (d.name.clone(), None),
            Scope::FunctionStatic { function } => (format!("{function}::{}", d.name), Some(function.clone())),
        };
        match groups.iter_mut().find(|g| g.key == key) {
            Some(g) => g.decls.push(i),
            None => {
                let new_name = match &function {
                    None => format!("{}{}", config.prefix, d.name),
                    Some(f) => format!("{}{f}__{}", config.prefix, d.name),
                };
                groups.push(Group { key, new_name, decls: vec![i], function });
            }
        }
    }
    let idents: BTreeSet<&str> =
        tokens.iter().filter(|t| t.kind == TokenKind::Identifier).map(|t| t.text.as_str()).collect();
    let mut chosen = Vec::new();
    for g in groups {
        let decls: Vec<_> = g.decls.iter().map(|&i| &a.decls[i]).collect();
        let name = &decls[0].name;
        let listed = |list: &[String]| list.iter().any(|n| n == name || *n == g.key);
        let reason = if listed(&config.exclude) {
            Some("excluded".to_string())
        } else if config.include.as_ref().is_some_and(|inc| !listed(inc)) {
            Some("not in include list".to_string())
        } else if name.starts_with(&config.prefix) {
            Some(format!("collision: name already carries prefix `{}`", config.prefix))
        } else if idents.contains(g.new_name.as_str()) {
            Some(format!("collision: `{}` already exists", g.new_name))
        } else if decls.iter().any(|d| d.is_const) && config.include.as_ref().is_none_or(|inc| !listed(inc)) {
            Some("const-qualified".to_string())
        } else if decls.iter().any(|d| d.is_unsized_array(tokens)) {
            Some("array without explicit size".to_string())
        } else if g.function.is_some() && decls.len() > 1 {
            Some("several function statics share this name".to_string())
        } else {
            None
        };
        match reason {
            Some(reason) => report.symbols.push(SymbolOutcome::Skipped { name: g.key.clone(), reason }),
            None => chosen.push(g),
        }
    }
    chosen
}

/// Rewrites `tokens` given the scan result `a`.
pub fn transform(tokens: &[Token], a: &Analysis, config: &TransformConfig) -> Result<Transformed, GlobalizeError> {
    config.validate()?;
    let mut report = Report::default();
    for d in &a.diagnostics {
        let reason = format!("{}:{}: {}", d.line, d.col, d.message);
        match (&d.name, &d.kind) {
            (Some(name), DiagKind::ParseAmbiguity) => {
                report.symbols.push(SymbolOutcome::Skipped { name: name.clone(), reason: format!("ambiguous: {reason}") })
            }
            _ => report.notes.push(reason),
        }
    }
    let groups = select_groups(tokens, a, config, &mut report);

    let mut group_of_decl: BTreeMap<usize, usize> = BTreeMap::new();
    let mut file_group: BTreeMap<&str, usize> = BTreeMap::new();
    for (gi, g) in groups.iter().enumerate() {
        for &d in &g.decls {
            group_of_decl.insert(d, gi);
        }
        if g.function.is_none() {
            file_group.insert(a.decls[g.decls[0]].name.as_str(), gi);
        }
    }

    // Where a rewritten reference would end up in a static initializer.
    let static_inits: Vec<_> = a
        .decls
        .iter()
        .filter(|d| d.scope != Scope::File)
        .filter_map(|d| d.initializer.clone())
        .chain(a.file_initializers.iter().cloned())
        .collect();

    let mut replace: BTreeMap<usize, String> = BTreeMap::new();
    let mut sites: BTreeMap<usize, String> = BTreeMap::new();
    let mut counts = vec![0usize; groups.len()];
    let in_body = |i: usize| a.in_body(i);
    for (i, t) in tokens.iter().enumerate() {
        if t.kind != TokenKind::Identifier || !is_reference(tokens, a, i) {
            continue;
        }
        let target = match a.binding_at(&t.text, i) {
            Some(b) => match b.kind {
                BindingKind::Static(d) => group_of_decl.get(&d).copied(),
                _ => None,
            },
            None if in_body(i) || static_inits.iter().any(|r| r.contains(&i)) => file_group.get(t.text.as_str()).copied(),
            None => None,
        };
        let Some(gi) = target else { continue };
        if static_inits.iter().any(|r| r.contains(&i)) {
            return Err(GlobalizeError::UnsupportedInitializer { name: t.text.clone(), line: t.line, col: t.col });
        }
        replace.insert(i, format!("{}[{}]", groups[gi].new_name, config.accessor));
        sites.insert(i, t.text.clone());
        counts[gi] += 1;
    }

    let mut delete: BTreeSet<usize> = BTreeSet::new();
    let mut inits = String::new();
    for g in &groups {
        for &di in &g.decls {
            let d = &a.decls[di];
            replace.insert(d.name_token, format!("{}[{}]", g.new_name, config.dim_symbol));
            let (Some(init), Some(eq)) = (d.initializer.clone(), d.assign_token) else { continue };
            let mut from = eq;
            while from > d.name_token + 1 && tokens[from - 1].is_trivia() {
                from -= 1;
            }
            delete.extend(from..init.end);
            if d.storage == Storage::Extern || is_zero_initializer(&tokens[init.clone()]) {
                continue;
            }
            let init_text = text(tokens, init.clone());
            let init_text = init_text.trim();
            let braced = tokens[init].iter().find(|t| !t.is_trivia()).is_some_and(|t| t.is("{"));
            if braced || !d.existing_array_dims.is_empty() {
                let ty: String = tokens[d.type_tokens.clone()]
                    .iter()
                    .filter(|t| !matches!(t.text.as_str(), "static" | "extern" | "register" | "_Thread_local" | "inline"))
                    .map(|t| t.text.as_str())
                    .collect();
                let dims: String = d.existing_array_dims.iter().map(|r| text(tokens, r.clone())).collect();
                let tmpl = format!("{}init_{}", config.prefix, g.key.replace("::", "__"));
                let _ = writeln!(inits, "    {{");
                let _ = writeln!(inits, "        static {} {}{tmpl}{dims} = {init_text};", ty.trim(), "*".repeat(d.pointer_depth));
                let _ = writeln!(inits, "        unsigned long i_;");
                let _ = writeln!(inits, "        for (i_ = 0; i_ < sizeof {tmpl}; i_++)");
                let _ = writeln!(
                    inits,
                    "            ((unsigned char *)&{}[id])[i_] = ((unsigned char *)&{tmpl})[i_];",
                    g.new_name
                );
                let _ = writeln!(inits, "    }}");
            } else {
                let _ = writeln!(inits, "    {}[id] = {init_text};", g.new_name);
            }
        }
    }

    // Function statics move in front of their function.
    let mut insert: BTreeMap<usize, String> = BTreeMap::new();
    let mut hoisted: BTreeSet<(usize, usize)> = BTreeSet::new();
    for g in &groups {
        let Some(fname) = &g.function else { continue };
        let d = &a.decls[g.decls[0]];
        let stmt = (d.statement.start, d.statement.end);
        if !hoisted.insert(stmt) {
            continue;
        }
        let mut s = String::new();
        for i in d.statement.clone() {
            if delete.contains(&i) {
                continue;
            }
            s.push_str(replace.get(&i).map_or(tokens[i].text.as_str(), String::as_str));
        }
        s.push('\n');
        let f = a.functions.iter().find(|f| &f.name == fname && f.body.contains(&d.name_token)).expect("enclosing function");
        insert.entry(f.start).or_default().push_str(&s);
        delete.extend(d.statement.clone());
        if let Some(prev) = d.statement.start.checked_sub(1) {
            let p = &tokens[prev];
            if p.kind == TokenKind::Whitespace && !p.text.starts_with('#') {
                if let Some(nl) = p.text.rfind('\n') {
                    replace.insert(prev, p.text[..nl].to_string());
                }
            }
        }
    }

    let mut source = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if let Some(s) = insert.get(&i) {
            source.push_str(s);
        }
        if delete.contains(&i) {
            continue;
        }
        source.push_str(replace.get(&i).map_or(t.text.as_str(), String::as_str));
    }
    if !inits.is_empty() {
        if !source.is_empty() && !source.ends_with('\n') {
            source.push('\n');
        }
        let _ = write!(source, "\nvoid {}(int id)\n{{\n{inits}}}\n", config.init_fn_name);
    }

    let file_names = groups.iter().filter(|g| g.function.is_none()).map(|g| g.key.clone()).collect();
    for (g, n) in groups.iter().zip(counts) {
        report.symbols.push(SymbolOutcome::Rewrote { name: g.key.clone(), sites: n });
    }
    Ok(Transformed { source, sites, file_names, report })
}
