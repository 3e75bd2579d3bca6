//! Recursive-descent parser for the contract language.
//!
//! Statements are newline-terminated with an optional trailing period. A
//! statement continues onto the next line while parentheses are open, after
//! a trailing `&`, `:-` or `==>`, or when the next line starts with one of
//! those operators.
//!
//! ```text
//! fact       := atom
//! view       := atom ":-" literal { "&" literal }
//! dynamic    := literal { "&" literal } "==>" effect { "&" effect }
//! literal    := ["~"] atom
//! effect     := ["~"] atom
//! atom       := ident [ "(" term { "," term } ")" ]
//! term       := ident [ "(" term { "," term } ")" ] | Var | int | string
//! directive  := "#clause" ident | "#rule" ident
//!             | "#event" ident "/" int { "," ident "/" int }
//!             | "#external" ident "/" int { "," ident "/" int }
//! ```

pub mod check;
pub(crate) mod lexer;

pub use check::{check_program, check_safety, check_stratification, find_negative_cycle, unsafe_variables, StratumAssignment};

use crate::ast::*;
use crate::diagnostics::{has_errors, Code, Diagnostic};
use lexer::{tokenize, Tok, Token};

/// Parses and statically checks one source text.
pub fn parse_program(source: &str, label: &str) -> Result<Program, Vec<Diagnostic>> {
    let (program, diags) = load(&[(label, source)]);
    match program {
        Some(p) => Ok(p),
        None => Err(diags),
    }
}

/// Parses several sources into one program (e.g. rules plus instance
/// facts) and runs the static checks on the merged result. Returns the
/// program when no error-severity diagnostic was produced, along with all
/// diagnostics including warnings.
pub fn load(sources: &[(&str, &str)]) -> (Option<Program>, Vec<Diagnostic>) {
    let mut program = Program::default();
    let mut diags = Vec::new();
    let mut anon = 0usize;
    for (label, source) in sources {
        let (p, d) = parse_syntax_with(source, label, &mut anon);
        program.merge(p);
        diags.extend(d);
    }
    if has_errors(&diags) {
        return (None, diags);
    }
    diags.extend(check_program(&program));
    if has_errors(&diags) {
        (None, diags)
    } else {
        (Some(program), diags)
    }
}

/// Syntax-only parse: no safety, role or stratification checks.
pub fn parse_syntax(source: &str, label: &str) -> (Program, Vec<Diagnostic>) {
    parse_syntax_with(source, label, &mut 0)
}

fn parse_syntax_with(source: &str, label: &str, anon: &mut usize) -> (Program, Vec<Diagnostic>) {
    let tokens = match tokenize(source) {
        Ok(t) => t,
        Err(e) => {
            let span = SourceSpan::new(label, (e.line, e.col), (e.line, e.col));
            return (Program::default(), vec![Diagnostic::error(Code::ParseError, e.message, span)]);
        }
    };
    let mut parser = Parser { tokens, pos: 0, label, diags: Vec::new(), anon };
    let program = parser.program();
    (program, parser.diags)
}

/// Parses a goal: a conjunction of literals, checked for safety as the
/// body of a headless rule.
pub fn parse_goal(source: &str) -> Result<Vec<Literal>, Diagnostic> {
    let label = "<goal>";
    let tokens = tokenize(source).map_err(|e| {
        Diagnostic::error(Code::ParseError, e.message, SourceSpan::new(label, (e.line, e.col), (e.line, e.col)))
    })?;
    let mut anon = 0;
    let mut parser = Parser { tokens, pos: 0, label, diags: Vec::new(), anon: &mut anon };
    let start = parser.peek_span_start();
    let literals = parser.literal_list().map_err(|d| *d)?;
    parser.skip_newlines();
    if parser.peek() == &Tok::Period {
        parser.bump();
    }
    parser.skip_newlines();
    if parser.peek() != &Tok::Eof {
        return Err(parser.unexpected("end of goal"));
    }
    let span = SourceSpan::new(label, start, parser.prev_end());
    check::check_literal_terms(&literals, &span).map_or(Ok(()), Err)?;
    let unsafe_vars = unsafe_variables(&literals, &[]);
    if let Some(v) = unsafe_vars.first() {
        return Err(Diagnostic::error(Code::UnsafeVariable, format!("variable {v} is not bound by a positive literal"), span));
    }
    Ok(literals)
}

/// Parses a single atom; variables are allowed.
pub fn parse_atom(source: &str) -> Result<Atom, Diagnostic> {
    let tokens = tokenize(source).map_err(|e| {
        Diagnostic::error(Code::ParseError, e.message, SourceSpan::new("<atom>", (e.line, e.col), (e.line, e.col)))
    })?;
    let mut anon = 0;
    let mut parser = Parser { tokens, pos: 0, label: "<atom>", diags: Vec::new(), anon: &mut anon };
    let atom = parser.atom().map_err(|d| *d)?;
    parser.skip_newlines();
    if parser.peek() != &Tok::Eof {
        return Err(parser.unexpected("end of atom"));
    }
    Ok(atom)
}

/// Parses a ground atom, as used for injected events.
pub fn parse_ground_atom(source: &str) -> Result<Atom, Diagnostic> {
    let atom = parse_atom(source)?;
    if !atom.is_ground() || atom.args.iter().any(|a| matches!(a, Term::Compound(..))) {
        return Err(Diagnostic::error(
            Code::NonGroundFact,
            format!("`{atom}` must be ground"),
            SourceSpan::new("<atom>", (1, 1), (1, source.len() as u32 + 1)),
        ));
    }
    Ok(atom)
}

type PResult<T> = Result<T, Box<Diagnostic>>;

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    label: &'a str,
    diags: Vec<Diagnostic>,
    anon: &'a mut usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_token(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn peek_span_start(&self) -> (u32, u32) {
        let t = self.peek_token();
        (t.line, t.col)
    }

    fn prev_end(&self) -> (u32, u32) {
        if self.pos == 0 {
            return (1, 1);
        }
        let t = &self.tokens[self.pos - 1];
        (t.end_line, t.end_col)
    }

    fn skip_newlines(&mut self) {
        while self.peek() == &Tok::Newline {
            self.bump();
        }
    }

    /// The first token after any newlines.
    fn peek_past_newlines(&self) -> &Tok {
        let mut i = self.pos;
        while self.tokens[i].tok == Tok::Newline {
            i += 1;
        }
        &self.tokens[i].tok
    }

    fn unexpected(&self, expected: &str) -> Diagnostic {
        let t = self.peek_token();
        Diagnostic::error(
            Code::ParseError,
            format!("expected {expected}, found {}", t.tok.describe()),
            SourceSpan::new(self.label, (t.line, t.col), (t.end_line, t.end_col)),
        )
    }

    fn error_at(&self, token: &Token, code: Code, message: String) -> Box<Diagnostic> {
        Box::new(Diagnostic::error(
            code,
            message,
            SourceSpan::new(self.label, (token.line, token.col), (token.end_line, token.end_col)),
        ))
    }

    fn expect(&mut self, tok: Tok, what: &str) -> PResult<Token> {
        if self.peek() == &tok {
            Ok(self.bump())
        } else {
            Err(Box::new(self.unexpected(what)))
        }
    }

    fn program(&mut self) -> Program {
        let mut program = Program::default();
        let mut pending_clause: Option<Symbol> = None;
        let mut pending_rule: Option<Symbol> = None;
        loop {
            self.skip_newlines();
            if self.peek() == &Tok::Eof {
                break;
            }
            let result = if let Tok::Directive(_) = self.peek() {
                self.directive(&mut program, &mut pending_clause, &mut pending_rule)
            } else {
                let r = self.statement(&mut program, pending_clause.take(), pending_rule.take());
                r.and_then(|_| self.end_of_statement())
            };
            if let Err(d) = result {
                self.diags.push(*d);
                self.recover();
            }
        }
        program
    }

    /// Skips to the start of the next statement.
    fn recover(&mut self) {
        loop {
            match self.peek() {
                Tok::Eof => return,
                Tok::Newline => {
                    self.skip_newlines();
                    if !matches!(self.peek(), Tok::Amp | Tok::If | Tok::Arrow) {
                        return;
                    }
                }
                _ => {
                    self.bump();
                }
            }
        }
    }

    fn end_of_statement(&mut self) -> PResult<()> {
        if self.peek() == &Tok::Period {
            self.bump();
        }
        match self.peek() {
            Tok::Newline | Tok::Eof => Ok(()),
            _ => Err(Box::new(self.unexpected("end of statement"))),
        }
    }

    fn directive(
        &mut self,
        program: &mut Program,
        pending_clause: &mut Option<Symbol>,
        pending_rule: &mut Option<Symbol>,
    ) -> PResult<()> {
        let token = self.bump();
        let Tok::Directive(name) = &token.tok else { unreachable!() };
        match name.as_str() {
            "clause" => *pending_clause = Some(self.directive_ident()?),
            "rule" => *pending_rule = Some(self.directive_ident()?),
            "event" | "external" => {
                loop {
                    let pred = self.pred_ref()?;
                    if name == "event" {
                        program.events.insert(pred);
                    } else {
                        program.declared_externals.insert(pred);
                    }
                    if self.peek() == &Tok::Comma {
                        self.bump();
                    } else {
                        break;
                    }
                }
            }
            other => {
                return Err(self.error_at(&token, Code::ParseError, format!("unknown directive `#{other}`")));
            }
        }
        match self.peek() {
            Tok::Newline | Tok::Eof => Ok(()),
            _ => Err(Box::new(self.unexpected("end of directive"))),
        }
    }

    fn directive_ident(&mut self) -> PResult<Symbol> {
        match self.peek().clone() {
            Tok::Ident(s) | Tok::Var(s) => {
                self.bump();
                Ok(sym(&s))
            }
            Tok::Int(i) => {
                self.bump();
                Ok(sym(&i.to_string()))
            }
            _ => Err(Box::new(self.unexpected("identifier"))),
        }
    }

    fn pred_ref(&mut self) -> PResult<PredId> {
        let name = match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                s
            }
            _ => return Err(Box::new(self.unexpected("predicate name"))),
        };
        self.expect(Tok::Slash, "`/` and arity")?;
        match self.peek().clone() {
            Tok::Int(i) => {
                let token = self.bump();
                let arity = usize::try_from(&i)
                    .map_err(|_| self.error_at(&token, Code::ParseError, format!("invalid arity {i}")))?;
                Ok(PredId::new(&name, arity))
            }
            _ => Err(Box::new(self.unexpected("arity"))),
        }
    }

    fn statement(&mut self, program: &mut Program, clause_id: Option<Symbol>, rule_id: Option<Symbol>) -> PResult<()> {
        let start = self.peek_span_start();
        let start_token = self.peek_token().clone();
        let items = self.literal_list()?;
        match self.peek_past_newlines() {
            Tok::If => {
                self.skip_newlines();
                let op = self.bump();
                let head = match items.as_slice() {
                    [lit] if !lit.negated => lit.atom.clone(),
                    _ => return Err(self.error_at(&op, Code::ParseError, "a rule head must be a single positive atom".into())),
                };
                self.skip_newlines();
                let body = self.literal_list()?;
                let span = SourceSpan::new(self.label, start, self.prev_end());
                if rule_id.is_some() {
                    self.diags.push(Diagnostic::warning(Code::ParseError, "`#rule` applies to dynamic rules only", span.clone()));
                }
                program.push_view(ViewRule { head, body, span, clause_id });
            }
            Tok::Arrow => {
                self.skip_newlines();
                self.bump();
                self.skip_newlines();
                let effects = self
                    .literal_list()?
                    .into_iter()
                    .map(|lit| Effect {
                        kind: if lit.negated { EffectKind::Retract } else { EffectKind::Add },
                        atom: lit.atom,
                    })
                    .collect();
                let span = SourceSpan::new(self.label, start, self.prev_end());
                let rule_id = rule_id.unwrap_or_else(|| sym(&format!("rule_{}", program.dynamics.len() + 1)));
                program.push_dynamic(DynamicRule { condition: items, effects, span, clause_id, rule_id });
            }
            _ => {
                let span = SourceSpan::new(self.label, start, self.prev_end());
                match items.as_slice() {
                    [lit] if !lit.negated => {
                        program.push_fact(Fact { atom: lit.atom.clone(), span, clause_id });
                    }
                    _ => {
                        return Err(self.error_at(
                            &start_token,
                            Code::ParseError,
                            "expected a fact, `:-` rule or `==>` rule".into(),
                        ))
                    }
                }
            }
        }
        Ok(())
    }

    /// `literal { "&" literal }`, following continuation lines.
    fn literal_list(&mut self) -> PResult<Vec<Literal>> {
        let mut out = Vec::new();
        loop {
            let lit = self.literal()?;
            out.push(lit);
            if self.peek_past_newlines() != &Tok::Amp {
                break;
            }
            self.skip_newlines();
            let amp = self.bump();
            self.skip_newlines();
            if matches!(self.peek(), Tok::Arrow | Tok::If) {
                self.diags.push(Diagnostic::warning(
                    Code::TrailingConjunction,
                    "trailing `&` before rule operator is ignored",
                    SourceSpan::new(self.label, (amp.line, amp.col), (amp.end_line, amp.end_col)),
                ));
                break;
            }
        }
        Ok(out)
    }

    fn literal(&mut self) -> PResult<Literal> {
        let negated = if self.peek() == &Tok::Tilde {
            self.bump();
            true
        } else {
            false
        };
        let atom = self.atom()?;
        Ok(Literal::new(negated, atom))
    }

    fn atom(&mut self) -> PResult<Atom> {
        let name = match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                s
            }
            _ => return Err(Box::new(self.unexpected("predicate name"))),
        };
        let args = if self.peek() == &Tok::LParen { self.args()? } else { Vec::new() };
        Ok(Atom::new(&name, args))
    }

    fn args(&mut self) -> PResult<Vec<Term>> {
        self.expect(Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        loop {
            self.skip_newlines();
            args.push(self.term()?);
            self.skip_newlines();
            match self.peek() {
                Tok::Comma => {
                    self.bump();
                }
                Tok::RParen => {
                    self.bump();
                    return Ok(args);
                }
                _ => return Err(Box::new(self.unexpected("`,` or `)`"))),
            }
        }
    }

    fn term(&mut self) -> PResult<Term> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                if self.peek() == &Tok::LParen {
                    Ok(Term::Compound(sym(&s), self.args()?))
                } else {
                    Ok(Term::Const(sym(&s)))
                }
            }
            Tok::Var(s) => {
                self.bump();
                if s == "_" {
                    *self.anon += 1;
                    Ok(Term::Var(sym(&format!("_anon{}", self.anon))))
                } else {
                    Ok(Term::Var(sym(&s)))
                }
            }
            Tok::Int(i) => {
                self.bump();
                Ok(Term::Int(i))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Term::Str(sym(&s)))
            }
            _ => Err(Box::new(self.unexpected("term"))),
        }
    }
}
