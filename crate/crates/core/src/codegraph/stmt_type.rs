use super::{StatementNode, StatementType};
use crate::codegraph::libc_names::is_libc_function;
use crate::lexer::{self, Token, TokenKind};

pub(crate) const KEYWORDS: &[&str] = &[
    "auto", "break", "case", "char", "const", "continue", "default", "do", "double", "else", "enum",
    "extern", "float", "for", "goto", "if", "inline", "int", "long", "register", "restrict",
    "return", "short", "signed", "sizeof", "static", "struct", "switch", "typedef", "union",
    "unsigned", "void", "volatile", "while", "_Bool", "bool", "_Alignof", "alignof",
];

pub(crate) const TYPE_KEYWORDS: &[&str] = &[
    "char", "const", "double", "enum", "float", "int", "long", "short", "signed", "struct", "union",
    "unsigned", "void", "volatile", "_Bool", "bool", "size_t", "ssize_t",
];

pub(crate) fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

pub(crate) fn assignment_op(op: &str) -> Option<&'static str> {
    Some(match op {
        "=" => "<operator>.assignment",
        "+=" => "<operator>.assignmentPlus",
        "-=" => "<operator>.assignmentMinus",
        "*=" => "<operator>.assignmentMultiplication",
        "/=" => "<operator>.assignmentDivision",
        "%=" => "<operator>.assignmentModulo",
        "&=" => "<operator>.assignmentAnd",
        "|=" => "<operator>.assignmentOr",
        "^=" => "<operator>.assignmentXor",
        "<<=" => "<operator>.assignmentShiftLeft",
        ">>=" => "<operator>.assignmentArithmeticShiftRight",
        _ => return None,
    })
}

fn ends_operand(tok: &Token) -> bool {
    matches!(tok.kind, TokenKind::Ident | TokenKind::Number | TokenKind::Str | TokenKind::Char)
        && !is_keyword(&tok.text)
        || matches!(tok.text.as_str(), ")" | "]")
}

fn is_type_token(tok: &Token) -> bool {
    TYPE_KEYWORDS.contains(&tok.text.as_str())
        || (tok.is_ident() && tok.text.ends_with("_t"))
        || tok.is("*")
}

/// `(` at `i` opens a cast like `(unsigned int)` or `(struct foo *)`.
fn is_cast_at(tokens: &[Token], i: usize) -> bool {
    if !tokens[i].is("(") || (i > 0 && ends_operand(&tokens[i - 1])) {
        return false;
    }
    let Some(close) = tokens[i + 1..].iter().position(|t| t.is(")")).map(|p| p + i + 1) else {
        return false;
    };
    let inner = &tokens[i + 1..close];
    if inner.is_empty() {
        return false;
    }
    let typeish = inner.iter().enumerate().all(|(k, t)| {
        is_type_token(t) || (t.is_ident() && k > 0 && matches!(inner[k - 1].text.as_str(), "struct" | "union" | "enum"))
    });
    let followed = tokens.get(close + 1).is_some_and(|t| {
        matches!(t.kind, TokenKind::Ident | TokenKind::Number | TokenKind::Str | TokenKind::Char)
            || matches!(t.text.as_str(), "(" | "&" | "*" | "-" | "!" | "~")
    });
    typeish && followed
}

/// Operator and call node types for an expression, in token order.
pub(crate) fn expression_raw_types(tokens: &[Token]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for (i, tok) in tokens.iter().enumerate() {
        let prev_operand = i > 0 && ends_operand(&tokens[i - 1]);
        let name: Option<String> = match tok.kind {
            TokenKind::Ident if tok.is("sizeof") => Some("<operator>.sizeOf".into()),
            TokenKind::Ident
                if !is_keyword(&tok.text)
                    && tokens.get(i + 1).is_some_and(|t| t.is("("))
                    && !(i > 0 && (tokens[i - 1].is(".") || tokens[i - 1].is("->"))) =>
            {
                Some(format!("CALL:{}", tok.text))
            }
            TokenKind::Punct => {
                let op = match tok.text.as_str() {
                    "+" if prev_operand => "addition",
                    "+" => "plus",
                    "-" if prev_operand => "subtraction",
                    "-" => "minus",
                    "*" if prev_operand => "multiplication",
                    "*" => "indirection",
                    "/" => "division",
                    "%" => "modulo",
                    "&" if prev_operand => "and",
                    "&" => "addressOf",
                    "|" => "or",
                    "^" => "xor",
                    "~" => "not",
                    "<<" => "shiftLeft",
                    ">>" => "arithmeticShiftRight",
                    "<" => "lessThan",
                    ">" => "greaterThan",
                    "<=" => "lessEqualsThan",
                    ">=" => "greaterEqualsThan",
                    "==" => "equals",
                    "!=" => "notEquals",
                    "&&" => "logicalAnd",
                    "||" => "logicalOr",
                    "!" => "logicalNot",
                    "->" => "indirectFieldAccess",
                    "." => "fieldAccess",
                    "[" => "indirectIndexAccess",
                    "?" => "conditional",
                    "++" if prev_operand => "postIncrement",
                    "++" => "preIncrement",
                    "--" if prev_operand => "postDecrement",
                    "--" => "preDecrement",
                    "(" if is_cast_at(tokens, i) => "cast",
                    other => {
                        if let Some(a) = assignment_op(other) {
                            out.push(a.to_string());
                        }
                        ""
                    }
                };
                (!op.is_empty()).then(|| format!("<operator>.{op}"))
            }
            _ => None,
        };
        if let Some(n) = name {
            out.push(n);
        }
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Tier {
    Structure,
    Call,
    Operator,
}

fn operator_group(op: &str) -> StatementType {
    let op = op.rsplit('.').next().unwrap_or(op);
    if op.starts_with("assignment") {
        return StatementType::AssignmentOperation;
    }
    match op {
        "addition" | "subtraction" | "multiplication" | "division" | "modulo" | "plus" | "minus"
        | "preIncrement" | "preDecrement" | "postIncrement" | "postDecrement" | "exponentiation" => {
            StatementType::ArithmeticOperation
        }
        "lessThan" | "greaterThan" | "lessEqualsThan" | "greaterEqualsThan" | "equals" | "notEquals" => {
            StatementType::ComparisonOperation
        }
        "indirectFieldAccess" | "fieldAccess" | "indirectIndexAccess" | "indexAccess" | "indirection"
        | "addressOf" | "pointerShift" | "memberAccess" | "indirectMemberAccess" => StatementType::AccessOperation,
        "logicalAnd" | "logicalOr" | "logicalNot" => StatementType::LogicalOperation,
        "cast" => StatementType::CastOperation,
        _ => StatementType::OtherOperation,
    }
}

fn tier_of(raw: &str) -> Option<(Tier, StatementType)> {
    let (kind, detail) = match raw.split_once(':') {
        Some((k, d)) => (k, Some(d)),
        None => (raw, None),
    };
    let kind_norm: String = kind.chars().filter(|c| *c != '_').collect::<String>().to_ascii_uppercase();
    if kind.starts_with("<operator") {
        return Some((Tier::Operator, operator_group(kind)));
    }
    match kind_norm.as_str() {
        "METHOD" => Some((Tier::Structure, StatementType::FunctionDeclaration)),
        "RETURN" => Some((Tier::Structure, StatementType::ReturnStatement)),
        "JUMPTARGET" => Some((Tier::Structure, StatementType::JumpTarget)),
        "CONTROLSTRUCTURE" => {
            let t = match detail.map(|d| d.to_ascii_uppercase()).as_deref() {
                Some("IF") | Some("ELSE") => StatementType::IfStatement,
                Some("WHILE") | Some("DO") => StatementType::WhileStatement,
                Some("FOR") => StatementType::ForStatement,
                Some("SWITCH") => StatementType::SwitchStatement,
                Some("GOTO") => StatementType::GotoStatement,
                Some("BREAK") => StatementType::Break,
                Some("CONTINUE") => StatementType::Continue,
                _ => return None,
            };
            Some((Tier::Structure, t))
        }
        "CALL" => {
            let name = detail?;
            if name.starts_with("<operator") {
                Some((Tier::Operator, operator_group(name)))
            } else if is_libc_function(name) {
                Some((Tier::Call, StatementType::BuiltinFunctionCall))
            } else {
                Some((Tier::Call, StatementType::ExternalFunctionCall))
            }
        }
        _ => None,
    }
}

/// Category for a merged line: statement structure beats calls, calls beat
/// operators, and the earliest raw type wins within a tier.
pub fn classify_raw_types<S: AsRef<str>>(raw_types: &[S]) -> StatementType {
    raw_types
        .iter()
        .filter_map(|r| tier_of(r.as_ref()))
        .enumerate()
        .min_by_key(|(i, (tier, _))| (*tier, *i))
        .map_or(StatementType::OtherOperation, |(_, (_, t))| t)
}

/// Category of a statement node; derives raw types from the text when the
/// node carries none.
pub fn classify_statement(node: &StatementNode) -> StatementType {
    if node.raw_types.is_empty() {
        classify_raw_types(&raw_types_for_text(&node.code_text))
    } else {
        classify_raw_types(&node.raw_types)
    }
}

/// Raw node types for a single source line analysed in isolation.
pub fn raw_types_for_text(text: &str) -> Vec<String> {
    let tokens = lexer::lex(text).tokens;
    let Some(first) = tokens.first() else {
        return vec![];
    };
    let mut out = Vec::new();
    let mut first = first.text.as_str();
    let mut body = &tokens[..];
    if first == "}" {
        body = &tokens[1..];
        first = body.first().map_or("", |t| t.text.as_str());
    }
    if first == "else" {
        body = &body[1..];
        first = body.first().map_or("", |t| t.text.as_str());
        if first != "if" {
            return vec!["CONTROL_STRUCTURE:ELSE".into()];
        }
    }
    match first {
        "if" | "while" | "for" | "switch" | "do" | "goto" | "break" | "continue" => {
            out.push(format!("CONTROL_STRUCTURE:{}", first.to_ascii_uppercase()));
        }
        "return" => out.push("RETURN".into()),
        "case" | "default" => out.push("JUMP_TARGET".into()),
        _ if body.len() >= 2 && body[0].is_ident() && body[1].is(":") && !is_keyword(first) => {
            out.push("JUMP_TARGET".into());
        }
        _ if looks_like_function_header(body) => out.push("METHOD".into()),
        _ => {}
    }
    out.extend(expression_raw_types(body));
    out
}

fn looks_like_function_header(tokens: &[Token]) -> bool {
    let Some(open) = tokens.iter().position(|t| t.is("(")) else {
        return false;
    };
    let prefix = &tokens[..open];
    let idents = prefix.iter().filter(|t| t.is_ident()).count();
    let last = tokens.last().map(|t| t.text.as_str());
    idents >= 2
        && prefix.iter().all(|t| t.is_ident() || t.is("*"))
        && prefix.last().is_some_and(|t| t.is_ident() && !is_keyword(&t.text))
        && !tokens.iter().any(|t| t.is("=") || t.is(";"))
        && matches!(last, Some(")") | Some("{") | Some(","))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classify_text(s: &str) -> StatementType {
        classify_statement(&StatementNode {
            line_no: 1,
            code_text: s.into(),
            stmt_type: StatementType::OtherOperation,
            raw_types: vec![],
        })
    }

    #[test]
    fn keyword_statements() {
        assert_eq!(classify_text("if (n > 1) {"), StatementType::IfStatement);
        assert_eq!(classify_text("} else if (x) {"), StatementType::IfStatement);
        assert_eq!(classify_text("while (i < n)"), StatementType::WhileStatement);
        assert_eq!(classify_text("for (i = 0; i < n; i++)"), StatementType::ForStatement);
        assert_eq!(classify_text("switch (c) {"), StatementType::SwitchStatement);
        assert_eq!(classify_text("return foo(x);"), StatementType::ReturnStatement);
        assert_eq!(classify_text("goto out;"), StatementType::GotoStatement);
        assert_eq!(classify_text("break;"), StatementType::Break);
        assert_eq!(classify_text("continue;"), StatementType::Continue);
        assert_eq!(classify_text("out:"), StatementType::JumpTarget);
        assert_eq!(classify_text("case 3:"), StatementType::JumpTarget);
        assert_eq!(classify_text("static int parse(char *buf, int n)"), StatementType::FunctionDeclaration);
    }

    #[test]
    fn calls_split_by_libc_membership() {
        assert_eq!(classify_text("memcpy(dst, src, n);"), StatementType::BuiltinFunctionCall);
        assert_eq!(classify_text("helper(x);"), StatementType::ExternalFunctionCall);
        assert_eq!(classify_text("x = helper(y);"), StatementType::ExternalFunctionCall);
    }

    #[test]
    fn operator_groups() {
        assert_eq!(classify_text("a = b;"), StatementType::AssignmentOperation);
        assert_eq!(classify_text("a + b;"), StatementType::ArithmeticOperation);
        assert_eq!(classify_text("i++;"), StatementType::ArithmeticOperation);
        assert_eq!(classify_text("a < b;"), StatementType::ComparisonOperation);
        assert_eq!(classify_text("p->next;"), StatementType::AccessOperation);
        assert_eq!(classify_text("!ok;"), StatementType::LogicalOperation);
        assert_eq!(classify_text("(unsigned int) v;"), StatementType::CastOperation);
        assert_eq!(classify_text("a ^ b;"), StatementType::OtherOperation);
        assert_eq!(classify_text("x;"), StatementType::OtherOperation);
    }

    #[test]
    fn raw_type_precedence() {
        let raw = ["<operator>.assignmentPlus", "CALL:hrtimer_forward", "CONTROL_STRUCTURE:IF"];
        assert_eq!(classify_raw_types(&raw), StatementType::IfStatement);
        assert_eq!(classify_raw_types(&raw[..2]), StatementType::ExternalFunctionCall);
        assert_eq!(classify_raw_types(&raw[..1]), StatementType::AssignmentOperation);
        assert_eq!(classify_raw_types(&["LOCAL", "IDENTIFIER"]), StatementType::OtherOperation);
        assert_eq!(classify_raw_types(&["ControlStructure:WHILE"]), StatementType::WhileStatement);
        assert_eq!(classify_raw_types::<&str>(&[]), StatementType::OtherOperation);
    }
}
