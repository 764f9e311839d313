//! Typed first-order language and the weighted-rule DSL.
//!
//! Two source formats are understood:
//!
//! ```text
//! # language declarations
//! type player.
//! const player1:player.
//! pred on_ladder/2 state (player,ladder).
//!
//! # weighted rules
//! 0.73 up(X):-on_ladder(Player,Ladder),same_floor(Player,Ladder).
//! ```
//!
//! Identifiers starting with an uppercase letter (or `_`) are variables.
//! The rule weight is optional and defaults to `0.5`.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Variable that may appear in a rule head without occurring in the body.
pub const STATE_VARIABLE: &str = "X";

pub const DEFAULT_RULE_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LangError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: expected `.` at end of input")]
    MissingPeriod { line: usize },
    #[error("line {line}: duplicate type `{name}`")]
    DuplicateType { line: usize, name: String },
    #[error("line {line}: duplicate constant `{name}`")]
    DuplicateConstant { line: usize, name: String },
    #[error("line {line}: duplicate predicate `{name}`")]
    DuplicatePredicate { line: usize, name: String },
    #[error("line {line}: unknown type `{name}`")]
    UnknownType { line: usize, name: String },
    #[error("line {line}: undeclared predicate `{name}`")]
    UndeclaredPredicate { line: usize, name: String },
    #[error("line {line}: unknown constant `{name}`")]
    UnknownConstant { line: usize, name: String },
    #[error("line {line}: `{name}` expects {expected} argument(s), found {found}")]
    ArityMismatch {
        line: usize,
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: type mismatch: {message}")]
    TypeMismatch { line: usize, message: String },
    #[error("line {line}: rule head `{name}` must be an action or blend predicate")]
    StateHead { line: usize, name: String },
    #[error("line {line}: body atom `{name}` must use a state predicate")]
    NonStateBody { line: usize, name: String },
    #[error("line {line}: weight {weight} outside [0, 1]")]
    WeightOutOfRange { line: usize, weight: f64 },
    #[error("line {line}: function symbol `{name}(...)` is not supported in terms")]
    FunctionSymbol { line: usize, name: String },
    #[error("line {line}: head variable `{var}` does not occur in the body")]
    UnsafeVariable { line: usize, var: String },
    #[error("line {line}: {message}")]
    BadDeclaration { line: usize, message: String },
}

impl LangError {
    pub fn line(&self) -> usize {
        match self {
            LangError::Syntax { line, .. }
            | LangError::MissingPeriod { line }
            | LangError::DuplicateType { line, .. }
            | LangError::DuplicateConstant { line, .. }
            | LangError::DuplicatePredicate { line, .. }
            | LangError::UnknownType { line, .. }
            | LangError::UndeclaredPredicate { line, .. }
            | LangError::UnknownConstant { line, .. }
            | LangError::ArityMismatch { line, .. }
            | LangError::TypeMismatch { line, .. }
            | LangError::StateHead { line, .. }
            | LangError::NonStateBody { line, .. }
            | LangError::WeightOutOfRange { line, .. }
            | LangError::FunctionSymbol { line, .. }
            | LangError::UnsafeVariable { line, .. }
            | LangError::BadDeclaration { line, .. } => *line,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TypeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConstId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PredId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredicateKind {
    Action,
    State,
    Blend,
}

impl PredicateKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "action" => Some(Self::Action),
            "state" => Some(Self::State),
            "blend" => Some(Self::Blend),
            _ => None,
        }
    }
}

impl fmt::Display for PredicateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Action => "action",
            Self::State => "state",
            Self::Blend => "blend",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub name: String,
    pub arg_types: Vec<TypeId>,
    pub kind: PredicateKind,
}

impl Predicate {
    pub fn arity(&self) -> usize {
        self.arg_types.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constant {
    pub name: String,
    pub ty: TypeId,
}

/// Maps the alternative blend-head spellings onto the canonical names.
pub fn canonical_predicate_name(name: &str) -> &str {
    match name {
        "neural_agent" => "neural",
        "logic_agent" => "logic",
        other => other,
    }
}

/// Declared types, constants and predicates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Language {
    types: Vec<String>,
    constants: Vec<Constant>,
    predicates: Vec<Predicate>,
    type_index: HashMap<String, TypeId>,
    const_index: HashMap<String, ConstId>,
    pred_index: HashMap<String, PredId>,
}

impl Language {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_type(&mut self, name: &str) -> Result<TypeId, LangError> {
        self.add_type_at(name, 0)
    }

    fn add_type_at(&mut self, name: &str, line: usize) -> Result<TypeId, LangError> {
        if self.type_index.contains_key(name) {
            return Err(LangError::DuplicateType {
                line,
                name: name.to_string(),
            });
        }
        let id = TypeId(self.types.len());
        self.types.push(name.to_string());
        self.type_index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn add_constant(&mut self, name: &str, ty: &str) -> Result<ConstId, LangError> {
        self.add_constant_at(name, ty, 0)
    }

    fn add_constant_at(&mut self, name: &str, ty: &str, line: usize) -> Result<ConstId, LangError> {
        let ty = self.type_id(ty).ok_or_else(|| LangError::UnknownType {
            line,
            name: ty.to_string(),
        })?;
        if self.const_index.contains_key(name) {
            return Err(LangError::DuplicateConstant {
                line,
                name: name.to_string(),
            });
        }
        let id = ConstId(self.constants.len());
        self.constants.push(Constant {
            name: name.to_string(),
            ty,
        });
        self.const_index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn add_predicate(
        &mut self,
        name: &str,
        kind: PredicateKind,
        arg_types: &[&str],
    ) -> Result<PredId, LangError> {
        let types: Vec<String> = arg_types.iter().map(|s| s.to_string()).collect();
        self.add_predicate_at(name, kind, &types, 0)
    }

    fn add_predicate_at(
        &mut self,
        name: &str,
        kind: PredicateKind,
        arg_types: &[String],
        line: usize,
    ) -> Result<PredId, LangError> {
        let name = canonical_predicate_name(name);
        if self.pred_index.contains_key(name) {
            return Err(LangError::DuplicatePredicate {
                line,
                name: name.to_string(),
            });
        }
        if arg_types.is_empty() {
            return Err(LangError::BadDeclaration {
                line,
                message: format!("predicate `{name}` must have arity >= 1"),
            });
        }
        if kind == PredicateKind::Blend && !(name == "neural" || name == "logic") {
            return Err(LangError::BadDeclaration {
                line,
                message: format!("blend predicate must be `neural` or `logic`, found `{name}`"),
            });
        }
        if kind == PredicateKind::Blend && arg_types.len() != 1 {
            return Err(LangError::BadDeclaration {
                line,
                message: format!("blend predicate `{name}` must have arity 1"),
            });
        }
        let mut ids = Vec::with_capacity(arg_types.len());
        for t in arg_types {
            ids.push(self.type_id(t).ok_or_else(|| LangError::UnknownType {
                line,
                name: t.clone(),
            })?);
        }
        let id = PredId(self.predicates.len());
        self.predicates.push(Predicate {
            name: name.to_string(),
            arg_types: ids,
            kind,
        });
        self.pred_index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn constants(&self) -> &[Constant] {
        &self.constants
    }

    pub fn predicates(&self) -> &[Predicate] {
        &self.predicates
    }

    pub fn type_id(&self, name: &str) -> Option<TypeId> {
        self.type_index.get(name).copied()
    }

    pub fn type_name(&self, id: TypeId) -> &str {
        &self.types[id.0]
    }

    pub fn constant(&self, id: ConstId) -> &Constant {
        &self.constants[id.0]
    }

    pub fn constant_id(&self, name: &str) -> Option<ConstId> {
        self.const_index.get(name).copied()
    }

    pub fn predicate(&self, id: PredId) -> &Predicate {
        &self.predicates[id.0]
    }

    /// Looks a predicate up by name, accepting blend-head aliases.
    pub fn predicate_id(&self, name: &str) -> Option<PredId> {
        self.pred_index.get(canonical_predicate_name(name)).copied()
    }

    /// Constants of a type in declaration order.
    pub fn constants_of_type(&self, ty: TypeId) -> Vec<ConstId> {
        self.constants
            .iter()
            .enumerate()
            .filter(|(_, c)| c.ty == ty)
            .map(|(i, _)| ConstId(i))
            .collect()
    }

    pub fn predicates_of_kind(&self, kind: PredicateKind) -> Vec<PredId> {
        self.predicates
            .iter()
            .enumerate()
            .filter(|(_, p)| p.kind == kind)
            .map(|(i, _)| PredId(i))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Term {
    Var(String),
    Const(ConstId),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Atom {
    pub predicate: PredId,
    pub args: Vec<Term>,
}

/// A weighted definite clause `head :- body`. `weight` is the initial value;
/// trainable copies live as logits inside the policies.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub weight: f64,
    pub head: Atom,
    pub body: Vec<Atom>,
}

impl Rule {
    /// Variables in order of first occurrence, head first.
    pub fn variables(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for atom in std::iter::once(&self.head).chain(&self.body) {
            for t in &atom.args {
                if let Term::Var(v) = t {
                    if !out.contains(&v.as_str()) {
                        out.push(v);
                    }
                }
            }
        }
        out
    }
}

/// An ordered rule list over a shared language. Rule order fixes the weight
/// index used everywhere downstream.
#[derive(Debug, Clone)]
pub struct RuleSet {
    language: Arc<Language>,
    rules: Vec<Rule>,
}

impl RuleSet {
    /// Builds a rule set after structural checks (arity, argument types,
    /// variable safety). Kind restrictions for policy rules are applied by
    /// [`parse_rules`] only, so general definite programs can be grounded too.
    pub fn new(language: Arc<Language>, rules: Vec<Rule>) -> Result<Self, LangError> {
        for rule in &rules {
            check_structure(&language, rule, 0)?;
        }
        Ok(Self { language, rules })
    }

    pub fn empty(language: Arc<Language>) -> Self {
        Self {
            language,
            rules: Vec::new(),
        }
    }

    pub fn language(&self) -> &Arc<Language> {
        &self.language
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.rules.iter().map(|r| r.weight).collect()
    }

    /// Copy of this rule set with replaced weights (e.g. after training).
    pub fn with_weights(&self, weights: &[f64]) -> Self {
        assert_eq!(weights.len(), self.rules.len(), "weight count mismatch");
        let mut out = self.clone();
        for (r, &w) in out.rules.iter_mut().zip(weights) {
            r.weight = w;
        }
        out
    }

    pub fn format(&self) -> String {
        self.rules
            .iter()
            .map(|r| format_rule(&self.language, r))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn format_atom(lang: &Language, atom: &Atom) -> String {
    let args: Vec<&str> = atom
        .args
        .iter()
        .map(|t| match t {
            Term::Var(v) => v.as_str(),
            Term::Const(c) => lang.constant(*c).name.as_str(),
        })
        .collect();
    format!("{}({})", lang.predicate(atom.predicate).name, args.join(","))
}

/// Renders a rule in DSL syntax with the weight at four decimals.
pub fn format_rule(lang: &Language, rule: &Rule) -> String {
    let body: Vec<String> = rule.body.iter().map(|a| format_atom(lang, a)).collect();
    format!(
        "{:.4} {}:-{}.",
        rule.weight,
        format_atom(lang, &rule.head),
        body.join(",")
    )
}

// ---------------------------------------------------------------------------
// Lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Var(String),
    Number(f64),
    LParen,
    RParen,
    Comma,
    Period,
    Neck,
    Colon,
    Slash,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) | Tok::Var(s) => write!(f, "`{s}`"),
            Tok::Number(n) => write!(f, "`{n}`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Period => f.write_str("`.`"),
            Tok::Neck => f.write_str("`:-`"),
            Tok::Colon => f.write_str("`:`"),
            Tok::Slash => f.write_str("`/`"),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, LangError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = 1;
    while i < chars.len() {
        let c = chars[i];
        match c {
            '\n' => {
                line += 1;
                i += 1;
            }
            c if c.is_whitespace() => i += 1,
            '#' | '%' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '(' => {
                out.push((Tok::LParen, line));
                i += 1;
            }
            ')' => {
                out.push((Tok::RParen, line));
                i += 1;
            }
            ',' => {
                out.push((Tok::Comma, line));
                i += 1;
            }
            '.' => {
                out.push((Tok::Period, line));
                i += 1;
            }
            '/' => {
                out.push((Tok::Slash, line));
                i += 1;
            }
            ':' => {
                if chars.get(i + 1) == Some(&'-') {
                    out.push((Tok::Neck, line));
                    i += 2;
                } else {
                    out.push((Tok::Colon, line));
                    i += 1;
                }
            }
            c if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                let start = i;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                    i += 1;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let n = text.parse::<f64>().map_err(|_| LangError::Syntax {
                    line,
                    message: format!("bad number `{text}`"),
                })?;
                out.push((Tok::Number(n), line));
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                if c.is_uppercase() || c == '_' {
                    out.push((Tok::Var(text), line));
                } else {
                    out.push((Tok::Ident(text), line));
                }
            }
            other => {
                return Err(LangError::Syntax {
                    line,
                    message: format!("unexpected character `{other}`"),
                })
            }
        }
    }
    Ok(out)
}

struct Cursor {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    last_line: usize,
}

impl Cursor {
    fn new(toks: Vec<(Tok, usize)>) -> Self {
        let last_line = toks.last().map(|t| t.1).unwrap_or(1);
        Self {
            toks,
            pos: 0,
            last_line,
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn peek_at(&self, off: usize) -> Option<&Tok> {
        self.toks.get(self.pos + off).map(|t| &t.0)
    }

    fn line(&self) -> usize {
        self.toks.get(self.pos).map(|t| t.1).unwrap_or(self.last_line)
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.0.clone());
        self.pos += 1;
        t
    }

    fn unexpected(&self, what: &str) -> LangError {
        match self.peek() {
            Some(t) => LangError::Syntax {
                line: self.line(),
                message: format!("expected {what}, found {t}"),
            },
            None => LangError::Syntax {
                line: self.line(),
                message: format!("expected {what} at end of input"),
            },
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), LangError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else if self.at_end() && tok == Tok::Period {
            Err(LangError::MissingPeriod { line: self.line() })
        } else {
            Err(self.unexpected(what))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, LangError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.unexpected(what)),
        }
    }
}

// ---------------------------------------------------------------------------
// Language declarations

/// Parses `type`, `const` and `pred` declarations.
pub fn parse_language(src: &str) -> Result<Language, LangError> {
    let mut cur = Cursor::new(lex(src)?);
    let mut lang = Language::new();
    while !cur.at_end() {
        let line = cur.line();
        let keyword = cur.ident("a declaration keyword")?;
        match keyword.as_str() {
            "type" => {
                let name = cur.ident("a type name")?;
                cur.expect(Tok::Period, "`.`")?;
                lang.add_type_at(&name, line)?;
            }
            "const" => {
                let name = cur.ident("a constant name")?;
                cur.expect(Tok::Colon, "`:`")?;
                let ty = cur.ident("a type name")?;
                cur.expect(Tok::Period, "`.`")?;
                lang.add_constant_at(&name, &ty, line)?;
            }
            "pred" => {
                let name = cur.ident("a predicate name")?;
                cur.expect(Tok::Slash, "`/`")?;
                let arity = match cur.next() {
                    Some(Tok::Number(n)) if n >= 0.0 && n.fract() == 0.0 => n as usize,
                    _ => {
                        return Err(LangError::Syntax {
                            line,
                            message: "expected an integer arity".into(),
                        })
                    }
                };
                let kind_s = cur.ident("a predicate kind")?;
                let kind = PredicateKind::parse(&kind_s).ok_or_else(|| LangError::BadDeclaration {
                    line,
                    message: format!("unknown predicate kind `{kind_s}` (action, state, blend)"),
                })?;
                cur.expect(Tok::LParen, "`(`")?;
                let mut types = vec![cur.ident("a type name")?];
                while cur.peek() == Some(&Tok::Comma) {
                    cur.next();
                    types.push(cur.ident("a type name")?);
                }
                cur.expect(Tok::RParen, "`)`")?;
                cur.expect(Tok::Period, "`.`")?;
                if types.len() != arity {
                    return Err(LangError::ArityMismatch {
                        line,
                        name,
                        expected: arity,
                        found: types.len(),
                    });
                }
                lang.add_predicate_at(&name, kind, &types, line)?;
            }
            other => {
                return Err(LangError::Syntax {
                    line,
                    message: format!("unknown declaration `{other}`"),
                })
            }
        }
    }
    Ok(lang)
}

// ---------------------------------------------------------------------------
// Rules

fn parse_atom(cur: &mut Cursor, lang: &Language) -> Result<Atom, LangError> {
    let line = cur.line();
    let name = cur.ident("a predicate name")?;
    let pred = lang
        .predicate_id(&name)
        .ok_or_else(|| LangError::UndeclaredPredicate {
            line,
            name: name.clone(),
        })?;
    cur.expect(Tok::LParen, "`(`")?;
    let mut args = Vec::new();
    loop {
        let tline = cur.line();
        match cur.next() {
            Some(Tok::Var(v)) => args.push(Term::Var(v)),
            Some(Tok::Ident(c)) => {
                if cur.peek() == Some(&Tok::LParen) {
                    return Err(LangError::FunctionSymbol { line: tline, name: c });
                }
                let id = lang
                    .constant_id(&c)
                    .ok_or(LangError::UnknownConstant { line: tline, name: c })?;
                args.push(Term::Const(id));
            }
            _ => {
                cur.pos -= 1;
                return Err(cur.unexpected("a term"));
            }
        }
        match cur.peek() {
            Some(Tok::Comma) => {
                cur.next();
            }
            Some(Tok::RParen) => {
                cur.next();
                break;
            }
            _ => return Err(cur.unexpected("`,` or `)`")),
        }
    }
    let p = lang.predicate(pred);
    if p.arity() != args.len() {
        return Err(LangError::ArityMismatch {
            line,
            name: p.name.clone(),
            expected: p.arity(),
            found: args.len(),
        });
    }
    Ok(Atom {
        predicate: pred,
        args,
    })
}

fn check_structure(lang: &Language, rule: &Rule, line: usize) -> Result<(), LangError> {
    if !(0.0..=1.0).contains(&rule.weight) || rule.weight.is_nan() {
        return Err(LangError::WeightOutOfRange {
            line,
            weight: rule.weight,
        });
    }
    if rule.body.is_empty() {
        return Err(LangError::Syntax {
            line,
            message: "rule body must not be empty".into(),
        });
    }
    let mut var_types: HashMap<&str, TypeId> = HashMap::new();
    for atom in std::iter::once(&rule.head).chain(&rule.body) {
        let p = lang.predicate(atom.predicate);
        if p.arity() != atom.args.len() {
            return Err(LangError::ArityMismatch {
                line,
                name: p.name.clone(),
                expected: p.arity(),
                found: atom.args.len(),
            });
        }
        for (t, &ty) in atom.args.iter().zip(&p.arg_types) {
            match t {
                Term::Const(c) => {
                    let cty = lang.constant(*c).ty;
                    if cty != ty {
                        return Err(LangError::TypeMismatch {
                            line,
                            message: format!(
                                "constant `{}` has type `{}` but `{}` expects `{}`",
                                lang.constant(*c).name,
                                lang.type_name(cty),
                                p.name,
                                lang.type_name(ty)
                            ),
                        });
                    }
                }
                Term::Var(v) => match var_types.get(v.as_str()) {
                    Some(&prev) if prev != ty => {
                        return Err(LangError::TypeMismatch {
                            line,
                            message: format!(
                                "variable `{v}` used as both `{}` and `{}`",
                                lang.type_name(prev),
                                lang.type_name(ty)
                            ),
                        })
                    }
                    Some(_) => {}
                    None => {
                        var_types.insert(v, ty);
                    }
                },
            }
        }
    }
    for t in &rule.head.args {
        if let Term::Var(v) = t {
            let in_body = rule
                .body
                .iter()
                .any(|a| a.args.iter().any(|b| matches!(b, Term::Var(w) if w == v)));
            if !in_body && v != STATE_VARIABLE {
                return Err(LangError::UnsafeVariable {
                    line,
                    var: v.clone(),
                });
            }
        }
    }
    Ok(())
}

fn check_policy_kinds(lang: &Language, rule: &Rule, line: usize) -> Result<(), LangError> {
    let head = lang.predicate(rule.head.predicate);
    if head.kind == PredicateKind::State {
        return Err(LangError::StateHead {
            line,
            name: head.name.clone(),
        });
    }
    for a in &rule.body {
        let p = lang.predicate(a.predicate);
        if p.kind != PredicateKind::State {
            return Err(LangError::NonStateBody {
                line,
                name: p.name.clone(),
            });
        }
    }
    Ok(())
}

/// Parses weighted policy/blending rules against a language.
pub fn parse_rules(src: &str, lang: Arc<Language>) -> Result<RuleSet, LangError> {
    let mut cur = Cursor::new(lex(src)?);
    let mut rules = Vec::new();
    while !cur.at_end() {
        let line = cur.line();
        let weight = match cur.peek() {
            Some(Tok::Number(w)) => {
                let w = *w;
                cur.next();
                w
            }
            _ => DEFAULT_RULE_WEIGHT,
        };
        if !(0.0..=1.0).contains(&weight) {
            return Err(LangError::WeightOutOfRange { line, weight });
        }
        let head = parse_atom(&mut cur, &lang)?;
        if cur.peek() != Some(&Tok::Neck) {
            if cur.at_end() {
                return Err(LangError::MissingPeriod { line: cur.line() });
            }
            return Err(cur.unexpected("`:-`"));
        }
        cur.next();
        let mut body = vec![parse_atom(&mut cur, &lang)?];
        loop {
            match cur.peek() {
                Some(Tok::Comma) => {
                    cur.next();
                    body.push(parse_atom(&mut cur, &lang)?);
                }
                Some(Tok::Period) => {
                    cur.next();
                    break;
                }
                None => return Err(LangError::MissingPeriod { line: cur.line() }),
                // `a(X) b(Y)` style input: a new clause started without a period
                Some(Tok::Number(_)) | Some(Tok::Ident(_)) if cur.peek_at(1).is_some() => {
                    return Err(LangError::MissingPeriod { line: cur.line() })
                }
                _ => return Err(cur.unexpected("`,` or `.`")),
            }
        }
        let rule = Rule { weight, head, body };
        check_structure(&lang, &rule, line)?;
        check_policy_kinds(&lang, &rule, line)?;
        rules.push(rule);
    }
    Ok(RuleSet {
        language: lang,
        rules,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const KANGAROO_LANG: &str = "
        type image. type player. type ladder.
        const img:image. const player:player. const ladder1:ladder.
        pred up/1 action (image).
        pred right/1 action (image).
        pred left/1 action (image).
        pred on_ladder/2 state (player,ladder).
        pred same_floor/2 state (player,ladder).
        pred left_of/2 state (player,ladder).
        pred right_of/2 state (player,ladder).
        pred close_by/2 state (player,ladder).
        pred neural/1 blend (image).
        pred logic/1 blend (image).
    ";

    fn lang() -> Arc<Language> {
        Arc::new(parse_language(KANGAROO_LANG).unwrap())
    }

    #[test]
    fn single_line_declarations() {
        let l = parse_language(
            "type player. type ladder. const player1:player. pred on_ladder/2 state (player,ladder).",
        )
        .unwrap();
        assert_eq!(l.types().len(), 2);
        assert_eq!(l.constants().len(), 1);
        assert_eq!(l.predicates_of_kind(PredicateKind::State).len(), 1);
    }

    #[test]
    fn duplicate_predicate_rejected() {
        let err = parse_language(
            "type player. type ladder.\npred on_ladder/2 state (player,ladder).\npred on_ladder/2 state (player,ladder).",
        )
        .unwrap_err();
        assert!(matches!(err, LangError::DuplicatePredicate { line: 3, .. }), "{err}");
    }

    #[test]
    fn unknown_type_rejected() {
        let err = parse_language("pred up/1 action (image).").unwrap_err();
        assert!(matches!(err, LangError::UnknownType { ref name, .. } if name == "image"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_language("type a.\ntype b.\nconst c b.").unwrap_err();
        assert_eq!(err.line(), 3);
    }

    #[test]
    fn parses_weighted_rule() {
        let rs = parse_rules(
            "0.73 up(X):-on_ladder(Player,Ladder),same_floor(Player,Ladder).",
            lang(),
        )
        .unwrap();
        assert_eq!(rs.len(), 1);
        let r = &rs.rules()[0];
        assert_eq!(r.weight, 0.73);
        assert_eq!(rs.language().predicate(r.head.predicate).name, "up");
        assert_eq!(r.body.len(), 2);
    }

    #[test]
    fn blend_alias_is_canonicalised() {
        let rs = parse_rules("0.98 neural_agent(X):-close_by(P,E).", lang()).unwrap();
        let head = rs.language().predicate(rs.rules()[0].head.predicate);
        assert_eq!(head.name, "neural");
        assert_eq!(head.kind, PredicateKind::Blend);
    }

    #[test]
    fn missing_period_is_end_of_input_error() {
        let err = parse_rules("up(X):-on_ladder(P,L)", lang()).unwrap_err();
        assert!(matches!(err, LangError::MissingPeriod { .. }), "{err}");
        assert!(err.to_string().contains("end of input"));
    }

    #[test]
    fn rejects_bad_rules() {
        let l = lang();
        assert!(matches!(
            parse_rules("up(X):-flying(P).", l.clone()),
            Err(LangError::UndeclaredPredicate { .. })
        ));
        assert!(matches!(
            parse_rules("on_ladder(P,L):-same_floor(P,L).", l.clone()),
            Err(LangError::StateHead { .. })
        ));
        assert!(matches!(
            parse_rules("1.5 up(X):-same_floor(P,L).", l.clone()),
            Err(LangError::WeightOutOfRange { .. })
        ));
        assert!(matches!(
            parse_rules("up(X):-same_floor(f(P),L).", l.clone()),
            Err(LangError::FunctionSymbol { .. })
        ));
        assert!(matches!(
            parse_rules("up(Y):-same_floor(P,L).", l.clone()),
            Err(LangError::UnsafeVariable { .. })
        ));
        assert!(matches!(
            parse_rules("up(X):-same_floor(P,P).", l.clone()),
            Err(LangError::TypeMismatch { .. })
        ));
        assert!(matches!(
            parse_rules("up(X):-up(X).", l),
            Err(LangError::NonStateBody { .. })
        ));
    }

    #[test]
    fn default_weight_and_comments() {
        let rs = parse_rules(
            "# climb\nup(X):-on_ladder(P,L). % trailing\n0.2 left(X):-right_of(P,L).",
            lang(),
        )
        .unwrap();
        assert_eq!(rs.weights(), vec![0.5, 0.2]);
    }

    #[test]
    fn format_round_trip_examples() {
        let l = lang();
        let src = "0.73 up(X):-on_ladder(Player,Ladder),same_floor(Player,Ladder).";
        let rs = parse_rules(src, l.clone()).unwrap();
        assert_eq!(
            format_rule(&l, &rs.rules()[0]),
            "0.7300 up(X):-on_ladder(Player,Ladder),same_floor(Player,Ladder)."
        );
        let one = parse_rules("1.0 logic_agent(X):-close_by(P,L).", l.clone()).unwrap();
        assert!(format_rule(&l, &one.rules()[0]).starts_with("1.0000 logic(X)"));
        let three = parse_rules(
            "right(X):-left_of(P,L),same_floor(P,L),close_by(P,ladder1).",
            l.clone(),
        )
        .unwrap();
        assert_eq!(
            format_rule(&l, &three.rules()[0]),
            "0.5000 right(X):-left_of(P,L),same_floor(P,L),close_by(P,ladder1)."
        );
    }

    #[test]
    fn parsing_is_deterministic() {
        let src = "0.1 up(X):-on_ladder(P,L).\n0.2 left(X):-right_of(P,L).\n0.3 right(X):-left_of(P,L).";
        let a = parse_rules(src, lang()).unwrap();
        let b = parse_rules(src, lang()).unwrap();
        assert_eq!(a.rules(), b.rules());
    }
}
