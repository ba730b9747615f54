//! Intra-procedural dependence analysis for a C subset.
//!
//! Supported: one function definition (or a bare statement list), brace
//! blocks, declarations, assignments, calls, `if`/`else`, `while`, `do`,
//! `for`, `switch`/`case`, labels, `goto`, `break`, `continue`, `return`.
//! Not supported: macros, aliasing through pointers, inter-procedural flow.
//!
//! Control dependencies link each control header (and the function header)
//! to the statements it directly governs. Data dependencies link a statement
//! defining a plain identifier to each later statement using it, unless a
//! redefinition in between lies on every path (definitions inside branches
//! never kill outer definitions, and mutually exclusive `if`/`else` arms
//! never reach each other). Loop back edges are not modelled.

use std::collections::{BTreeMap, HashSet};

use super::stmt_type::{assignment_op, expression_raw_types, is_keyword, TYPE_KEYWORDS};
use super::{classify_raw_types, DependencyEdge, StatementGraph, StatementNode};
use crate::lexer::{self, Token};

#[derive(Debug, Clone)]
struct Stmt {
    line: usize,
    defs: Vec<String>,
    uses: Vec<String>,
    raw_types: Vec<String>,
    parent: Option<usize>,
    region: Vec<u32>,
}

#[derive(Default)]
struct Analysis {
    defs: Vec<String>,
    uses: Vec<String>,
    raw_types: Vec<String>,
}

impl Analysis {
    fn merge(&mut self, other: Analysis) {
        self.defs.extend(other.defs);
        self.uses.extend(other.uses);
        self.raw_types.extend(other.raw_types);
    }
}

struct Parser<'a> {
    toks: &'a [Token],
    matching: Vec<Option<usize>>,
    stmts: Vec<Stmt>,
    next_region: u32,
    exclusive: HashSet<(u32, u32)>,
}

/// Analyse `code` (comment-stripped) and return its statement graph.
pub fn build_graph_builtin(function_id: &str, code: &str) -> StatementGraph {
    let lexed = lexer::lex(code);
    let directive_lines: HashSet<usize> = {
        let mut first_on_line = BTreeMap::new();
        for t in &lexed.tokens {
            first_on_line.entry(t.line).or_insert(t);
        }
        first_on_line.into_iter().filter(|(_, t)| t.is("#")).map(|(l, _)| l).collect()
    };
    let toks: Vec<Token> = lexed
        .tokens
        .into_iter()
        .filter(|t| !directive_lines.contains(&t.line))
        .collect();

    let mut p = Parser::new(&toks);
    p.parse_unit();

    let lines: Vec<&str> = code.lines().collect();
    let mut by_line: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for s in &p.stmts {
        by_line.entry(s.line).or_default().extend(s.raw_types.iter().cloned());
    }
    let nodes = by_line
        .into_iter()
        .filter(|(line, _)| lines.get(line - 1).is_some_and(|l| !l.trim().is_empty()))
        .map(|(line, raw_types)| StatementNode {
            line_no: line,
            code_text: lines[line - 1].trim().to_string(),
            stmt_type: classify_raw_types(&raw_types),
            raw_types,
        })
        .collect();
    StatementGraph::from_parts(function_id, nodes, p.edges())
}

impl<'a> Parser<'a> {
    fn new(toks: &'a [Token]) -> Self {
        let mut matching = vec![None; toks.len()];
        let mut stack: Vec<usize> = Vec::new();
        for (i, t) in toks.iter().enumerate() {
            match t.text.as_str() {
                "(" | "[" | "{" => stack.push(i),
                ")" | "]" | "}" => {
                    let open = match t.text.as_str() {
                        ")" => "(",
                        "]" => "[",
                        _ => "{",
                    };
                    if stack.last().is_some_and(|&o| toks[o].is(open)) {
                        let o = stack.pop().unwrap();
                        matching[o] = Some(i);
                        matching[i] = Some(o);
                    }
                }
                _ => {}
            }
        }
        Parser { toks, matching, stmts: Vec::new(), next_region: 0, exclusive: HashSet::new() }
    }

    fn new_region(&mut self) -> u32 {
        self.next_region += 1;
        self.next_region
    }

    fn push(&mut self, line: usize, a: Analysis, parent: Option<usize>, region: &[u32]) -> usize {
        self.stmts.push(Stmt {
            line,
            defs: dedup(a.defs),
            uses: dedup(a.uses),
            raw_types: a.raw_types,
            parent,
            region: region.to_vec(),
        });
        self.stmts.len() - 1
    }

    fn parse_unit(&mut self) {
        let n = self.toks.len();
        match self.function_header() {
            Some((brace, close, header)) => {
                let idx = self.push(self.toks[0].line, header, None, &[]);
                self.parse_list(brace + 1, close, Some(idx), &[], None);
                self.parse_list(close + 1, n, None, &[], None);
            }
            None => self.parse_list(0, n, None, &[], None),
        }
    }

    /// Detect `type name(params) {` at the start of the token stream.
    fn function_header(&self) -> Option<(usize, usize, Analysis)> {
        let toks = self.toks;
        let mut depth = 0i32;
        let mut brace = None;
        for (i, t) in toks.iter().enumerate() {
            match t.text.as_str() {
                "(" | "[" => depth += 1,
                ")" | "]" => depth -= 1,
                ";" | "=" if depth == 0 => return None,
                "{" if depth == 0 => {
                    brace = Some(i);
                    break;
                }
                _ => {}
            }
        }
        let brace = brace?;
        let close = self.matching[brace]?;
        let pre = &toks[..brace];
        let last_paren = pre.iter().rposition(|t| t.is(")"))?;
        if pre[last_paren + 1..].iter().any(|t| !t.is_ident()) {
            return None;
        }
        let open = self.matching[last_paren]?;
        if open == 0 || !toks[open - 1].is_ident() || is_keyword(&toks[open - 1].text) {
            return None;
        }
        let name = toks[open - 1].text.clone();
        let mut defs = Vec::new();
        for param in split_depth0(&toks[open + 1..last_paren], ",") {
            let mut depth = 0;
            let mut last = None;
            for t in param {
                match t.text.as_str() {
                    "(" | "[" => depth += 1,
                    ")" | "]" => depth -= 1,
                    _ if depth == 0 && t.is_ident() && !is_keyword(&t.text) => last = Some(t.text.clone()),
                    _ => {}
                }
            }
            let typed = param.iter().filter(|t| t.is_ident()).count() >= 2;
            if let (Some(p), true) = (last, typed) {
                defs.push(p);
            }
        }
        let _ = name;
        Some((
            brace,
            close,
            Analysis { defs, uses: vec![], raw_types: vec!["METHOD".into()] },
        ))
    }

    fn parse_list(&mut self, mut pos: usize, end: usize, parent: Option<usize>, region: &[u32], switch: Option<usize>) {
        let mut region = region.to_vec();
        let base = region.clone();
        while pos < end {
            let t = &self.toks[pos];
            if let (Some(sw), true) = (switch, t.is("case") || t.is("default")) {
                region = base.clone();
                let r = self.new_region();
                region.push(r);
                let colon = self.find_label_colon(pos + 1, end);
                let mut a = Analysis { raw_types: vec!["JUMP_TARGET".into()], ..Default::default() };
                a.uses = variables(&self.toks[pos + 1..colon]);
                self.push(t.line, a, Some(sw), &region);
                pos = colon + 1;
                continue;
            }
            pos = self.parse_stmt(pos, end, parent, &region);
        }
    }

    fn find_label_colon(&self, mut pos: usize, end: usize) -> usize {
        let mut ternary = 0;
        while pos < end {
            match self.toks[pos].text.as_str() {
                "?" => ternary += 1,
                ":" if ternary == 0 => return pos,
                ":" => ternary -= 1,
                _ => {}
            }
            pos += 1;
        }
        end
    }

    /// `(`...`)` directly after `pos`, as (open, close).
    fn parens_after(&self, pos: usize, end: usize) -> Option<(usize, usize)> {
        let open = pos + 1;
        if open < end && self.toks[open].is("(") {
            self.matching[open].filter(|&c| c < end).map(|c| (open, c))
        } else {
            None
        }
    }

    /// Index of the `;` ending a simple statement (or the position where one
    /// should have been).
    fn statement_end(&self, mut pos: usize, end: usize) -> (usize, bool) {
        while pos < end {
            match self.toks[pos].text.as_str() {
                ";" => return (pos, true),
                "}" => return (pos, false),
                "(" | "[" | "{" => match self.matching[pos] {
                    Some(c) if c < end => pos = c + 1,
                    _ => return (end, false),
                },
                _ => pos += 1,
            }
        }
        (end, false)
    }

    fn control(&mut self, kind: &str, line: usize, cond: &[Token]) -> Analysis {
        let mut a = analyze_expression(cond);
        a.raw_types.insert(0, format!("CONTROL_STRUCTURE:{kind}"));
        let _ = line;
        a
    }

    fn parse_stmt(&mut self, pos: usize, end: usize, parent: Option<usize>, region: &[u32]) -> usize {
        let t = &self.toks[pos];
        let line = t.line;
        match t.text.as_str() {
            "{" => {
                let close = self.matching[pos].filter(|&c| c < end).unwrap_or(end);
                self.parse_list(pos + 1, close, parent, region, None);
                close + 1
            }
            ";" | "}" | "else" => pos + 1,
            "if" | "while" | "switch" => {
                let Some((open, close)) = self.parens_after(pos, end) else {
                    return self.unparsable(pos, end, parent, region);
                };
                let kind = t.text.to_ascii_uppercase();
                let a = self.control(&kind, line, &self.toks[open + 1..close]);
                let idx = self.push(line, a, parent, region);
                let r = self.new_region();
                let mut inner = region.to_vec();
                inner.push(r);
                if kind == "SWITCH" && close + 1 < end && self.toks[close + 1].is("{") {
                    let body_close = self.matching[close + 1].filter(|&c| c < end).unwrap_or(end);
                    self.parse_list(close + 2, body_close, Some(idx), &inner, Some(idx));
                    return body_close + 1;
                }
                if close + 1 >= end {
                    return end;
                }
                let after = self.parse_stmt(close + 1, end, Some(idx), &inner);
                if kind == "IF" && after < end && self.toks[after].is("else") && after + 1 < end {
                    let r_else = self.new_region();
                    self.exclusive.insert((r, r_else));
                    self.exclusive.insert((r_else, r));
                    let mut else_region = region.to_vec();
                    else_region.push(r_else);
                    return self.parse_stmt(after + 1, end, Some(idx), &else_region);
                }
                after
            }
            "for" => {
                let Some((open, close)) = self.parens_after(pos, end) else {
                    return self.unparsable(pos, end, parent, region);
                };
                let mut a = Analysis { raw_types: vec!["CONTROL_STRUCTURE:FOR".into()], ..Default::default() };
                for (k, part) in split_depth0(&self.toks[open + 1..close], ";").into_iter().enumerate() {
                    a.merge(if k == 0 { analyze_simple(part) } else { analyze_expression(part) });
                }
                let idx = self.push(line, a, parent, region);
                if close + 1 >= end {
                    return end;
                }
                let r = self.new_region();
                let mut inner = region.to_vec();
                inner.push(r);
                self.parse_stmt(close + 1, end, Some(idx), &inner)
            }
            "do" => {
                let a = Analysis { raw_types: vec!["CONTROL_STRUCTURE:DO".into()], ..Default::default() };
                let idx = self.push(line, a, parent, region);
                if pos + 1 >= end {
                    return end;
                }
                let r = self.new_region();
                let mut inner = region.to_vec();
                inner.push(r);
                let after = self.parse_stmt(pos + 1, end, Some(idx), &inner);
                if after < end && self.toks[after].is("while") {
                    if let Some((open, close)) = self.parens_after(after, end) {
                        let wline = self.toks[after].line;
                        let a = self.control("WHILE", wline, &self.toks[open + 1..close]);
                        self.push(wline, a, Some(idx), &inner);
                        let next = close + 1;
                        return if next < end && self.toks[next].is(";") { next + 1 } else { next };
                    }
                }
                after
            }
            "return" | "goto" | "break" | "continue" => {
                let (semi, _) = self.statement_end(pos + 1, end);
                let body = &self.toks[pos + 1..semi];
                let a = match t.text.as_str() {
                    "return" => {
                        let mut a = analyze_expression(body);
                        a.raw_types.insert(0, "RETURN".into());
                        a
                    }
                    kw => Analysis {
                        raw_types: vec![format!("CONTROL_STRUCTURE:{}", kw.to_ascii_uppercase())],
                        ..Default::default()
                    },
                };
                self.push(line, a, parent, region);
                if semi < end && self.toks[semi].is(";") { semi + 1 } else { semi }
            }
            "case" | "default" => {
                let colon = self.find_label_colon(pos + 1, end);
                let a = Analysis {
                    uses: variables(&self.toks[pos + 1..colon]),
                    raw_types: vec!["JUMP_TARGET".into()],
                    ..Default::default()
                };
                self.push(line, a, parent, region);
                colon + 1
            }
            _ if t.is_ident()
                && !is_keyword(&t.text)
                && self.toks.get(pos + 1).is_some_and(|n| n.is(":"))
                && pos + 1 < end =>
            {
                let a = Analysis { raw_types: vec!["JUMP_TARGET".into()], ..Default::default() };
                self.push(line, a, parent, region);
                pos + 2
            }
            _ => {
                let (semi, terminated) = self.statement_end(pos, end);
                if semi == pos {
                    return pos + 1;
                }
                let a = analyze_simple(&self.toks[pos..semi]);
                self.push(line, a, parent, region);
                if terminated { semi + 1 } else { semi }
            }
        }
    }

    fn unparsable(&mut self, pos: usize, end: usize, parent: Option<usize>, region: &[u32]) -> usize {
        let line = self.toks[pos].line;
        log::warn!("builtin analyzer: could not parse statement on line {line}; keeping it without data edges");
        let (semi, terminated) = self.statement_end(pos + 1, end);
        let a = Analysis {
            uses: variables(&self.toks[pos + 1..semi]),
            raw_types: vec!["UNKNOWN".into()],
            ..Default::default()
        };
        self.push(line, a, parent, region);
        if terminated { semi + 1 } else { semi.max(pos + 1) }
    }

    fn reaches(&self, d: usize, u: usize) -> bool {
        let (rd, ru) = (&self.stmts[d].region, &self.stmts[u].region);
        !rd.iter().any(|a| ru.iter().any(|b| self.exclusive.contains(&(*a, *b))))
    }

    fn killed(&self, d: usize, u: usize, var: &str) -> bool {
        let ru = &self.stmts[u].region;
        self.stmts[d + 1..u].iter().any(|r| {
            r.defs.iter().any(|v| v == var) && ru.len() >= r.region.len() && ru[..r.region.len()] == r.region[..]
        })
    }

    fn edges(&self) -> Vec<DependencyEdge> {
        let mut edges = Vec::new();
        for s in &self.stmts {
            if let Some(p) = s.parent {
                edges.push(DependencyEdge::control(self.stmts[p].line, s.line));
            }
        }
        for u in 0..self.stmts.len() {
            for var in &self.stmts[u].uses {
                for d in 0..u {
                    if self.stmts[d].defs.contains(var) && self.reaches(d, u) && !self.killed(d, u, var) {
                        edges.push(DependencyEdge::data(self.stmts[d].line, self.stmts[u].line, var.clone()));
                    }
                }
            }
        }
        edges
    }
}

fn dedup(v: Vec<String>) -> Vec<String> {
    let mut seen = HashSet::new();
    v.into_iter().filter(|s| seen.insert(s.clone())).collect()
}

fn split_depth0<'t>(toks: &'t [Token], sep: &str) -> Vec<&'t [Token]> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, t) in toks.iter().enumerate() {
        match t.text.as_str() {
            "(" | "[" | "{" => depth += 1,
            ")" | "]" | "}" => depth -= 1,
            s if s == sep && depth == 0 => {
                parts.push(&toks[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&toks[start..]);
    parts
}

fn is_member(toks: &[Token], i: usize) -> bool {
    i > 0 && (toks[i - 1].is(".") || toks[i - 1].is("->"))
}

/// Identifiers read as variables: not keywords, member names, callees or
/// tagged type names.
fn variables(toks: &[Token]) -> Vec<String> {
    let mut out = Vec::new();
    for (i, t) in toks.iter().enumerate() {
        if !t.is_ident() || is_keyword(&t.text) || TYPE_KEYWORDS.contains(&t.text.as_str()) || is_member(toks, i) {
            continue;
        }
        if toks.get(i + 1).is_some_and(|n| n.is("(")) {
            continue;
        }
        if i > 0 && matches!(toks[i - 1].text.as_str(), "struct" | "union" | "enum" | "goto") {
            continue;
        }
        out.push(t.text.clone());
    }
    dedup(out)
}

fn simple_ident(seg: &[Token]) -> Option<&str> {
    match seg {
        [t] if t.is_ident() && !is_keyword(&t.text) => Some(&t.text),
        [o, t, c] if o.is("(") && c.is(")") && t.is_ident() && !is_keyword(&t.text) => Some(&t.text),
        _ => None,
    }
}

fn ends_operand(t: &Token) -> bool {
    (t.is_ident() && !is_keyword(&t.text)) || t.is(")") || t.is("]") || t.kind == lexer::TokenKind::Number
}

fn analyze_simple(toks: &[Token]) -> Analysis {
    try_declaration(toks).unwrap_or_else(|| analyze_expression(toks))
}

fn try_declaration(toks: &[Token]) -> Option<Analysis> {
    let first = toks.first()?;
    if !first.is_ident() || matches!(first.text.as_str(), "return" | "goto" | "case" | "sizeof" | "else" | "do") {
        return None;
    }
    let mut i = 0;
    let mut idents = 0;
    while i < toks.len() && (toks[i].is_ident() || toks[i].is("*")) {
        if toks[i].is_ident() {
            idents += 1;
        }
        i += 1;
    }
    let stop_ok = toks.get(i).is_none_or(|t| matches!(t.text.as_str(), "=" | ";" | "," | "["));
    if idents < 2 || !stop_ok || !toks[i - 1].is_ident() || is_keyword(&toks[i - 1].text) {
        return None;
    }
    let mut decl_start = i - 1;
    while decl_start > 0 && toks[decl_start - 1].is("*") {
        decl_start -= 1;
    }
    let mut a = Analysis { raw_types: vec!["LOCAL".into()], ..Default::default() };
    for declarator in split_depth0(&toks[decl_start..], ",") {
        let Some(name_pos) = declarator.iter().position(|t| t.is_ident() && !is_keyword(&t.text)) else {
            continue;
        };
        let name = declarator[name_pos].text.clone();
        let eq = split_depth0(declarator, "=");
        if eq.len() >= 2 {
            let init_start = eq[0].len() + 1;
            let init = &declarator[init_start..];
            a.raw_types.push("<operator>.assignment".into());
            a.raw_types.extend(expression_raw_types(init));
            a.uses.extend(variables(init));
            a.defs.push(name);
        }
        a.uses.extend(variables(&eq[0][name_pos + 1..]));
    }
    Some(a)
}

fn analyze_expression(toks: &[Token]) -> Analysis {
    let mut a = Analysis::default();
    let mut depth = 0i32;
    let mut ops = Vec::new();
    for (i, t) in toks.iter().enumerate() {
        match t.text.as_str() {
            "(" | "[" | "{" => depth += 1,
            ")" | "]" | "}" => depth -= 1,
            s if depth == 0 && assignment_op(s).is_some() => ops.push(i),
            _ => {}
        }
    }
    let mut raw = expression_raw_types(toks);
    if let Some(&root) = ops.first() {
        let root_name = assignment_op(&toks[root].text).unwrap().to_string();
        if let Some(p) = raw.iter().position(|r| *r == root_name) {
            raw.remove(p);
        }
        raw.insert(0, root_name);
    }
    a.raw_types = raw;

    let mut start = 0;
    for &op in &ops {
        let lhs = &toks[start..op];
        match simple_ident(lhs) {
            Some(name) => {
                a.defs.push(name.to_string());
                if !toks[op].is("=") {
                    a.uses.push(name.to_string());
                }
            }
            None => a.uses.extend(variables(lhs)),
        }
        start = op + 1;
    }
    a.uses.extend(variables(&toks[start..]));

    for (k, t) in toks.iter().enumerate() {
        if !(t.is("++") || t.is("--")) {
            continue;
        }
        let pre = k == 0 || !ends_operand(&toks[k - 1]);
        let target = if pre {
            toks.get(k + 1).filter(|n| {
                n.is_ident()
                    && !is_keyword(&n.text)
                    && !toks.get(k + 2).is_some_and(|m| matches!(m.text.as_str(), "." | "->" | "[" | "("))
            })
        } else {
            Some(&toks[k - 1]).filter(|p| p.is_ident() && !is_keyword(&p.text) && !is_member(toks, k - 1))
        };
        if let Some(v) = target {
            a.defs.push(v.text.clone());
            a.uses.push(v.text.clone());
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegraph::{EdgeKind, StatementType};
    use std::collections::BTreeSet;

    fn edges(code: &str) -> BTreeSet<(usize, usize, EdgeKind, Option<String>)> {
        build_graph_builtin("t", code)
            .edges
            .into_iter()
            .map(|e| (e.src_line, e.dst_line, e.kind, e.variable))
            .collect()
    }

    fn d(s: usize, t: usize, v: &str) -> (usize, usize, EdgeKind, Option<String>) {
        (s, t, EdgeKind::DataDep, Some(v.into()))
    }

    fn c(s: usize, t: usize) -> (usize, usize, EdgeKind, Option<String>) {
        (s, t, EdgeKind::ControlDep, None)
    }

    #[test]
    fn single_def_use() {
        assert_eq!(edges("int a=1;\nint b=a;"), BTreeSet::from([d(1, 2, "a")]));
    }

    #[test]
    fn if_governs_body() {
        assert_eq!(edges("if (a) {\nb=1;\n}"), BTreeSet::from([c(1, 2)]));
    }

    #[test]
    fn redefinition_kills_only_on_all_paths() {
        let code = "int x = 1;\nif (c)\n  x = 2;\nuse(x);\nx = 3;\nuse(x);";
        let e = edges(code);
        assert!(e.contains(&d(1, 4, "x")));
        assert!(e.contains(&d(3, 4, "x")));
        assert!(e.contains(&d(5, 6, "x")));
        assert!(!e.contains(&d(1, 6, "x")));
        assert!(!e.contains(&d(3, 6, "x")));
    }

    #[test]
    fn exclusive_branches_do_not_reach() {
        let code = "if (c) {\n  x = 1;\n} else {\n  y = x;\n}\nz = x;";
        let e = edges(code);
        assert!(!e.contains(&d(2, 4, "x")));
        assert!(e.contains(&d(2, 6, "x")));
        assert!(e.contains(&c(1, 2)) && e.contains(&c(1, 4)));
    }

    #[test]
    fn member_names_are_not_variables() {
        let code = "void f(struct s *timer)\n{\n  struct k *t = get(timer);\n  t->x += g(&t->timer);\n  h(t);\n}";
        let e = edges(code);
        assert!(e.contains(&d(1, 3, "timer")));
        assert!(!e.iter().any(|x| x.0 == 1 && x.1 == 4 && x.2 == EdgeKind::DataDep));
        assert!(e.contains(&d(3, 4, "t")));
        assert!(e.contains(&d(3, 5, "t")), "field update must not redefine the base pointer");
    }

    #[test]
    fn function_header_governs_top_level() {
        let g = build_graph_builtin("f", "int f(int n)\n{\n  int k = n;\n  if (k)\n    return k;\n  return 0;\n}");
        assert_eq!(g.lines(), [1, 3, 4, 5, 6]);
        assert_eq!(g.nodes[0].stmt_type, StatementType::FunctionDeclaration);
        let e: BTreeSet<_> = g.edges.iter().map(|e| (e.src_line, e.dst_line, e.kind)).collect();
        for (s, t) in [(1, 3), (1, 4), (1, 6), (4, 5)] {
            assert!(e.contains(&(s, t, EdgeKind::ControlDep)), "{s}->{t}");
        }
        assert!(!e.contains(&(1, 5, EdgeKind::ControlDep)));
    }

    #[test]
    fn switch_cases_and_labels() {
        let code = "switch (c) {\ncase 1:\n  x = 1;\n  break;\ndefault:\n  y = x;\n}\nout:\nreturn y;";
        let g = build_graph_builtin("s", code);
        let types: Vec<_> = g.nodes.iter().map(|n| n.stmt_type).collect();
        assert_eq!(
            types,
            [
                StatementType::SwitchStatement,
                StatementType::JumpTarget,
                StatementType::AssignmentOperation,
                StatementType::Break,
                StatementType::JumpTarget,
                StatementType::AssignmentOperation,
                StatementType::JumpTarget,
                StatementType::ReturnStatement,
            ]
        );
        let e = edges(code);
        assert!(e.contains(&c(1, 3)) && e.contains(&c(1, 6)));
        assert!(e.contains(&d(3, 6, "x")));
        assert!(e.contains(&d(6, 9, "y")));
    }

    #[test]
    fn unparsable_if_keeps_node() {
        let g = build_graph_builtin("u", "int a = 1;\nif a b;\nc = a;");
        assert_eq!(g.lines(), [1, 2, 3]);
        assert_eq!(g.nodes[1].stmt_type, StatementType::OtherOperation);
        assert!(!g.edges.iter().any(|e| e.src_line == 2));
    }

    #[test]
    fn do_while_and_increments() {
        let code = "int i = 0;\ndo {\n  i++;\n} while (i < 10);\nreturn i;";
        let e = edges(code);
        assert!(e.contains(&d(1, 3, "i")));
        assert!(e.contains(&d(3, 4, "i")));
        assert!(e.contains(&d(3, 5, "i")));
        assert!(e.contains(&c(2, 3)));
    }
}
