use std::collections::HashMap;

use super::{AtomTemplate, Expr, Predicate, TemplatedModel, Weight, WeightedFormula};
use crate::error::{Error, Result};

/// Parses the line-oriented model language.
///
/// ```text
/// // comment
/// predicate Friends/2
/// W      [x != y ^ !Friends(x,y)]
/// -1.1   [x != y ^ Smokes(x) ^ Friends(x,y) -> Smokes(y)]
/// ```
///
/// When the file declares no predicates at all, predicates are inferred from
/// their first use; otherwise every predicate must be declared.
pub fn parse_model(text: &str) -> Result<TemplatedModel> {
    let lines: Vec<(usize, &str)> = text.lines().enumerate().map(|(i, l)| (i + 1, strip_comment(l).trim())).filter(|(_, l)| !l.is_empty()).collect();

    let mut model = TemplatedModel::default();
    for &(line, l) in &lines {
        if let Some(rest) = l.strip_prefix("predicate") {
            if rest.starts_with(char::is_whitespace) {
                let decl = parse_declaration(line, rest.trim())?;
                if model.predicate_index(&decl.name).is_some() {
                    return Err(syntax(line, format!("predicate `{}` declared twice", decl.name)));
                }
                model.predicates.push(decl);
            }
        }
    }
    let strict = !model.predicates.is_empty();

    for &(line, l) in &lines {
        if l.starts_with("predicate") && l["predicate".len()..].starts_with(char::is_whitespace) {
            continue;
        }
        let formula = parse_formula_line(line, l, &mut model, strict)?;
        model.formulas.push(formula);
    }
    Ok(model)
}

fn strip_comment(line: &str) -> &str {
    match line.find("//") {
        Some(i) => &line[..i],
        None => line,
    }
}

fn syntax(line: usize, message: impl Into<String>) -> Error {
    Error::Syntax { line, message: message.into() }
}

fn parse_declaration(line: usize, decl: &str) -> Result<Predicate> {
    let (name, arity) = decl.split_once('/').ok_or_else(|| syntax(line, "expected `predicate Name/arity`"))?;
    let name = name.trim();
    if !is_identifier(name) {
        return Err(syntax(line, format!("invalid predicate name `{name}`")));
    }
    let arity: usize = arity.trim().parse().map_err(|_| syntax(line, format!("invalid arity `{}`", arity.trim())))?;
    if !(1..=2).contains(&arity) {
        return Err(syntax(line, format!("predicate `{name}` has arity {arity}; only 1 and 2 are supported")));
    }
    Ok(Predicate { name: name.to_string(), arity })
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_') && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_weight(line: usize, tok: &str) -> Result<Weight> {
    let (sign, body) = match tok.as_bytes().first() {
        Some(b'-') => (-1.0, &tok[1..]),
        Some(b'+') => (1.0, &tok[1..]),
        _ => (1.0, tok),
    };
    let weight = if body == "W" {
        Weight::Symbolic(sign)
    } else if let Some(coef) = body.strip_suffix("*W") {
        Weight::Symbolic(sign * parse_number(line, coef)?)
    } else {
        Weight::Fixed(sign * parse_number(line, body)?)
    };
    let value = match weight {
        Weight::Fixed(v) | Weight::Symbolic(v) => v,
    };
    if !value.is_finite() {
        return Err(syntax(line, "hard (infinite) weights are not supported"));
    }
    Ok(weight)
}

fn parse_number(line: usize, s: &str) -> Result<f64> {
    let valid = !s.is_empty()
        && s.chars().all(|c| c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '-' | '+'))
        && s.starts_with(|c: char| c.is_ascii_digit() || c == '.');
    if !valid {
        return Err(syntax(line, format!("invalid weight `{s}`")));
    }
    s.parse().map_err(|_| syntax(line, format!("invalid weight `{s}`")))
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    And,
    Not,
    Neq,
    Implies,
    Iff,
}

fn tokenize(line: usize, s: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            c if c.is_whitespace() => i += 1,
            '(' => (out.push(Token::LParen), i += 1).1,
            ')' => (out.push(Token::RParen), i += 1).1,
            '[' => (out.push(Token::LBracket), i += 1).1,
            ']' => (out.push(Token::RBracket), i += 1).1,
            ',' => (out.push(Token::Comma), i += 1).1,
            '^' => (out.push(Token::And), i += 1).1,
            '!' if s[i..].starts_with("!=") => (out.push(Token::Neq), i += 2).1,
            '!' => (out.push(Token::Not), i += 1).1,
            '-' if s[i..].starts_with("->") => (out.push(Token::Implies), i += 2).1,
            '<' if s[i..].starts_with("<->") => (out.push(Token::Iff), i += 3).1,
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push(Token::Ident(s[start..i].to_string()));
            }
            other => return Err(syntax(line, format!("unexpected character `{other}`"))),
        }
    }
    Ok(out)
}

/// Surface syntax before guards are extracted and atoms are indexed.
#[derive(Debug, Clone)]
enum Surface {
    Atom(String, Vec<String>),
    Guard(String, String),
    Not(Box<Surface>),
    And(Vec<Surface>),
    Or(Vec<Surface>),
    Implies(Box<Surface>, Box<Surface>),
    Iff(Box<Surface>, Box<Surface>),
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    line: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_at(&self, k: usize) -> Option<&Token> {
        self.tokens.get(self.pos + k)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Token) -> Result<()> {
        match self.bump() {
            Some(t) if t == want => Ok(()),
            Some(t) => Err(syntax(self.line, format!("expected {want:?}, found {t:?}"))),
            None => Err(syntax(self.line, format!("expected {want:?}, found end of line"))),
        }
    }

    fn iff(&mut self) -> Result<Surface> {
        let mut lhs = self.implication()?;
        while self.peek() == Some(&Token::Iff) {
            self.bump();
            let rhs = self.implication()?;
            lhs = Surface::Iff(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn implication(&mut self) -> Result<Surface> {
        let lhs = self.disjunction()?;
        if self.peek() == Some(&Token::Implies) {
            self.bump();
            let rhs = self.implication()?;
            return Ok(Surface::Implies(Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn at_or(&self) -> bool {
        matches!(self.peek(), Some(Token::Ident(v)) if v == "v") && !matches!(self.peek_at(1), Some(Token::LParen) | Some(Token::Neq))
    }

    fn disjunction(&mut self) -> Result<Surface> {
        let mut terms = vec![self.conjunction()?];
        while self.at_or() {
            self.bump();
            terms.push(self.conjunction()?);
        }
        Ok(if terms.len() == 1 { terms.pop().unwrap() } else { Surface::Or(terms) })
    }

    fn conjunction(&mut self) -> Result<Surface> {
        let mut terms = vec![self.unary()?];
        while self.peek() == Some(&Token::And) {
            self.bump();
            terms.push(self.unary()?);
        }
        Ok(if terms.len() == 1 { terms.pop().unwrap() } else { Surface::And(terms) })
    }

    fn unary(&mut self) -> Result<Surface> {
        if self.peek() == Some(&Token::Not) {
            self.bump();
            return Ok(Surface::Not(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Surface> {
        match self.bump() {
            Some(Token::LParen) => {
                let e = self.iff()?;
                self.expect(Token::RParen)?;
                Ok(e)
            }
            Some(Token::LBracket) => {
                let e = self.iff()?;
                self.expect(Token::RBracket)?;
                Ok(e)
            }
            Some(Token::Ident(name)) => match self.peek() {
                Some(Token::LParen) => {
                    self.bump();
                    let mut args = Vec::new();
                    loop {
                        match self.bump() {
                            Some(Token::Ident(a)) => args.push(a),
                            _ => return Err(syntax(self.line, format!("malformed argument list for `{name}`"))),
                        }
                        match self.bump() {
                            Some(Token::Comma) => continue,
                            Some(Token::RParen) => break,
                            _ => return Err(syntax(self.line, format!("malformed argument list for `{name}`"))),
                        }
                    }
                    Ok(Surface::Atom(name, args))
                }
                Some(Token::Neq) => {
                    self.bump();
                    match self.bump() {
                        Some(Token::Ident(rhs)) => Ok(Surface::Guard(name, rhs)),
                        _ => Err(syntax(self.line, "expected a variable after `!=`")),
                    }
                }
                _ => Err(syntax(self.line, format!("unexpected identifier `{name}`"))),
            },
            Some(t) => Err(syntax(self.line, format!("unexpected token {t:?}"))),
            None => Err(syntax(self.line, "unexpected end of formula")),
        }
    }
}

/// Removes `x != y` conjuncts from the top level (or from the antecedent of a
/// top-level implication). Returns `None` when nothing but guards remains.
fn extract_guards(node: Surface, guards: &mut Vec<(String, String)>) -> Option<Surface> {
    match node {
        Surface::Guard(a, b) => {
            guards.push((a, b));
            None
        }
        Surface::And(terms) => {
            let mut kept: Vec<Surface> = terms
                .into_iter()
                .filter_map(|t| match t {
                    Surface::Guard(a, b) => {
                        guards.push((a, b));
                        None
                    }
                    other => Some(other),
                })
                .collect();
            match kept.len() {
                0 => None,
                1 => kept.pop(),
                _ => Some(Surface::And(kept)),
            }
        }
        Surface::Implies(lhs, rhs) => match extract_guards(*lhs, guards) {
            Some(lhs) => Some(Surface::Implies(Box::new(lhs), rhs)),
            None => Some(*rhs),
        },
        other => Some(other),
    }
}

fn contains_guard(node: &Surface) -> bool {
    match node {
        Surface::Guard(..) => true,
        Surface::Atom(..) => false,
        Surface::Not(e) => contains_guard(e),
        Surface::And(es) | Surface::Or(es) => es.iter().any(contains_guard),
        Surface::Implies(a, b) | Surface::Iff(a, b) => contains_guard(a) || contains_guard(b),
    }
}

struct Compiler<'m> {
    model: &'m mut TemplatedModel,
    strict: bool,
    line: usize,
    variables: Vec<String>,
    atoms: Vec<AtomTemplate>,
}

impl Compiler<'_> {
    fn variable(&mut self, name: &str) -> usize {
        match self.variables.iter().position(|v| v == name) {
            Some(i) => i,
            None => {
                self.variables.push(name.to_string());
                self.variables.len() - 1
            }
        }
    }

    fn compile(&mut self, node: Surface) -> Result<Expr> {
        Ok(match node {
            Surface::Atom(name, args) => {
                let predicate = match self.model.predicate_index(&name) {
                    Some(p) => p,
                    None if self.strict => {
                        return Err(Error::UndeclaredPredicate { line: self.line, name });
                    }
                    None => {
                        if !(1..=2).contains(&args.len()) {
                            return Err(syntax(self.line, format!("predicate `{name}` has arity {}; only 1 and 2 are supported", args.len())));
                        }
                        self.model.predicates.push(Predicate { name: name.clone(), arity: args.len() });
                        self.model.predicates.len() - 1
                    }
                };
                let expected = self.model.predicates[predicate].arity;
                if expected != args.len() {
                    return Err(Error::ArityMismatch { line: self.line, name, expected, found: args.len() });
                }
                let args = args.iter().map(|a| self.variable(a)).collect();
                let atom = AtomTemplate { predicate, args };
                let index = match self.atoms.iter().position(|a| *a == atom) {
                    Some(i) => i,
                    None => {
                        self.atoms.push(atom);
                        self.atoms.len() - 1
                    }
                };
                Expr::Atom(index)
            }
            Surface::Guard(..) => unreachable!("guards are extracted before compilation"),
            Surface::Not(e) => Expr::Not(Box::new(self.compile(*e)?)),
            Surface::And(es) => Expr::And(es.into_iter().map(|e| self.compile(e)).collect::<Result<_>>()?),
            Surface::Or(es) => Expr::Or(es.into_iter().map(|e| self.compile(e)).collect::<Result<_>>()?),
            Surface::Implies(a, b) => Expr::Implies(Box::new(self.compile(*a)?), Box::new(self.compile(*b)?)),
            Surface::Iff(a, b) => Expr::Iff(Box::new(self.compile(*a)?), Box::new(self.compile(*b)?)),
        })
    }
}

fn parse_formula_line(line: usize, text: &str, model: &mut TemplatedModel, strict: bool) -> Result<WeightedFormula> {
    let (weight_tok, rest) = text.split_once(char::is_whitespace).ok_or_else(|| syntax(line, "expected `<weight> <formula>`"))?;
    let weight = parse_weight(line, weight_tok)?;
    let tokens = tokenize(line, rest)?;
    let mut parser = Parser { tokens: &tokens, pos: 0, line };
    let surface = parser.iff()?;
    if let Some(t) = parser.peek() {
        return Err(syntax(line, format!("trailing input at {t:?}")));
    }

    let mut guards = Vec::new();
    let body = extract_guards(surface, &mut guards).ok_or_else(|| syntax(line, "formula contains no atoms"))?;
    if contains_guard(&body) {
        return Err(syntax(line, "`x != y` guards must be top-level conjuncts"));
    }

    let mut compiler = Compiler { model, strict, line, variables: Vec::new(), atoms: Vec::new() };
    let expr = compiler.compile(body)?;
    if compiler.atoms.len() > 3 {
        return Err(Error::TooManyAtoms { line, count: compiler.atoms.len() });
    }

    let index: HashMap<&str, usize> = compiler.variables.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
    let mut distinct = Vec::new();
    for (a, b) in &guards {
        let (ia, ib) = match (index.get(a.as_str()), index.get(b.as_str())) {
            (Some(&ia), Some(&ib)) => (ia, ib),
            _ => return Err(syntax(line, format!("guard `{a} != {b}` uses a variable that appears in no atom"))),
        };
        if ia == ib {
            return Err(syntax(line, format!("guard `{a} != {b}` can never hold")));
        }
        let pair = (ia.min(ib), ia.max(ib));
        if !distinct.contains(&pair) {
            distinct.push(pair);
        }
    }
    distinct.sort_unstable();

    Ok(WeightedFormula { weight, atoms: compiler.atoms, expr, variables: compiler.variables, distinct, line })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_graph_text() {
        let m = parse_model("W V(x)\n-0.1 [x!=y ^ (V(x) <-> V(y))]").unwrap();
        assert_eq!(m.predicates.len(), 1);
        assert_eq!(m.predicates[0], Predicate { name: "V".into(), arity: 1 });
        assert_eq!(m.formulas.len(), 2);
        assert_eq!(m.formulas[0].weight, Weight::Symbolic(1.0));
        assert_eq!(m.formulas[1].weight, Weight::Fixed(-0.1));
        assert_eq!(m.formulas[1].atoms.len(), 2);
        assert_eq!(m.formulas[1].distinct, vec![(0, 1)]);
        assert!(matches!(m.formulas[1].expr, Expr::Iff(..)));
    }

    #[test]
    fn empty_and_comment_only() {
        assert_eq!(parse_model("").unwrap(), TemplatedModel::default());
        assert_eq!(parse_model("// nothing\n\n   \n").unwrap(), TemplatedModel::default());
    }

    #[test]
    fn friends_smokers_text() {
        let m = parse_model(crate::fixtures::FRIENDS_SMOKERS).unwrap();
        assert_eq!(m.predicates.len(), 3);
        assert_eq!(m.formulas.len(), 5);
        let last = m.formulas.last().unwrap();
        assert_eq!(last.atoms.len(), 3);
        assert_eq!(last.weight, Weight::Fixed(-1.1));
        // guard in the antecedent of the implication becomes a grounding filter
        assert_eq!(last.distinct, vec![(0, 1)]);
        assert!(matches!(last.expr, Expr::Implies(..)));
    }

    #[test]
    fn precedence_and_or_keyword() {
        let m = parse_model("1 A(x) v B(x) ^ C(x)").unwrap();
        match &m.formulas[0].expr {
            Expr::Or(terms) => {
                assert_eq!(terms.len(), 2);
                assert!(matches!(terms[1], Expr::And(_)));
            }
            e => panic!("unexpected {e:?}"),
        }
        // a logical variable called `v` is still an argument
        let m = parse_model("1 [v != x ^ F(v,x)]").unwrap();
        assert_eq!(m.formulas[0].variables, vec!["v".to_string(), "x".to_string()]);
    }

    #[test]
    fn implication_is_right_associative() {
        let m = parse_model("1 A(x) -> B(x) -> C(x)").unwrap();
        match &m.formulas[0].expr {
            Expr::Implies(a, b) => {
                assert_eq!(**a, Expr::Atom(0));
                assert!(matches!(**b, Expr::Implies(..)));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn weights() {
        let m = parse_model("-W Q(x)\n2.5*W Q(x)\n+3 Q(x)\n1e-2 Q(x)").unwrap();
        let ws: Vec<Weight> = m.formulas.iter().map(|f| f.weight).collect();
        assert_eq!(ws, vec![Weight::Symbolic(-1.0), Weight::Symbolic(2.5), Weight::Fixed(3.0), Weight::Fixed(0.01)]);
        assert!(matches!(parse_model("inf Q(x)"), Err(Error::Syntax { line: 1, .. })));
        assert!(matches!(parse_model("1e999 Q(x)"), Err(Error::Syntax { line: 1, .. })));
    }

    #[test]
    fn syntax_error_reports_line() {
        let err = parse_model("// header\nW V(x)\n\n1 V(x) ^\n").unwrap_err();
        assert!(matches!(err, Error::Syntax { line: 4, .. }), "{err:?}");
        let err = parse_model("1 V(x) $ V(y)").unwrap_err();
        assert!(matches!(err, Error::Syntax { line: 1, .. }));
    }

    #[test]
    fn undeclared_predicate() {
        let err = parse_model("predicate V/1\n1 V(x) ^ U(x)").unwrap_err();
        assert_eq!(err, Error::UndeclaredPredicate { line: 2, name: "U".into() });
    }

    #[test]
    fn arity_mismatch() {
        let err = parse_model("predicate F/2\n1 F(x)").unwrap_err();
        assert!(matches!(err, Error::ArityMismatch { line: 2, expected: 2, found: 1, .. }));
        let err = parse_model("1 V(x)\n1 V(x,y)").unwrap_err();
        assert!(matches!(err, Error::ArityMismatch { line: 2, expected: 1, found: 2, .. }));
    }

    #[test]
    fn too_many_atoms() {
        let err = parse_model("1 A(x) ^ B(x) ^ C(x) ^ D(x)").unwrap_err();
        assert_eq!(err, Error::TooManyAtoms { line: 1, count: 4 });
        // repeated atoms count once
        assert!(parse_model("1 A(x) ^ B(x) ^ C(x) ^ A(x)").is_ok());
    }

    #[test]
    fn misplaced_guards() {
        assert!(parse_model("1 !(x != y) ^ F(x,y)").is_err());
        assert!(parse_model("1 x != y").is_err());
        assert!(parse_model("1 [x != z ^ F(x,y)]").is_err());
    }

    #[test]
    fn unsupported_arity_declaration() {
        assert!(parse_model("predicate T/3\n1 T(x,y,z)").is_err());
    }
}
