//! Reader, grounder and writer for the open-world PDDL dialect.
//!
//! The dialect is the `:strips :typing` subset of PDDL plus a per-action
//! `:unknown` clause. Atoms listed there (free variables range over every
//! type-compatible object) stop being static once the action runs. Ground
//! static sets are `F \ (effects ∪ unknown)`.
//!
//! Literals whose instantiated arguments fall outside the predicate's
//! declared argument types are vacuous and dropped during grounding, so a
//! schema over `thing` may mention a predicate declared over `door` only.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};

use log::warn;
use thiserror::Error;

use crate::symbolic::{
    Fluent, FluentSet, Literal, Operator, PartialFluentState, StripsTask, SymbolicError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Position {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OwpddlError {
    #[error("parse error at {at}: expected {expected}, found {found}")]
    Parse {
        at: Position,
        expected: String,
        found: String,
    },
    #[error("semantic error: {0}")]
    Semantic(String),
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
}

fn semantic(msg: impl Into<String>) -> OwpddlError {
    OwpddlError::Semantic(msg.into())
}

// ---------------------------------------------------------------------------
// s-expressions

#[derive(Debug, Clone, PartialEq)]
enum SExpr {
    Atom(String, Position),
    List(Vec<SExpr>, Position),
}

impl SExpr {
    fn pos(&self) -> Position {
        match self {
            SExpr::Atom(_, p) | SExpr::List(_, p) => *p,
        }
    }

    fn describe(&self) -> String {
        match self {
            SExpr::Atom(a, _) => format!("`{a}`"),
            SExpr::List(..) => "a list".into(),
        }
    }

    fn atom(&self) -> Option<&str> {
        match self {
            SExpr::Atom(a, _) => Some(a),
            SExpr::List(..) => None,
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        self.atom().is_some_and(|a| a.eq_ignore_ascii_case(kw))
    }
}

#[derive(Debug)]
enum TopItem {
    Comment(String),
    Expr(SExpr),
}

fn expected(found: Option<&SExpr>, what: &str, end: Position) -> OwpddlError {
    OwpddlError::Parse {
        at: found.map_or(end, SExpr::pos),
        expected: what.into(),
        found: found.map_or_else(|| "end of list".into(), SExpr::describe),
    }
}

fn read_toplevel(text: &str) -> Result<Vec<TopItem>, OwpddlError> {
    let mut items = Vec::new();
    let mut stack: Vec<(Vec<SExpr>, Position)> = Vec::new();
    let mut chars = text.char_indices().peekable();
    let (mut line, mut col) = (1usize, 1usize);

    while let Some((i, c)) = chars.next() {
        let here = Position { line, column: col };
        if c == '\n' {
            line += 1;
            col = 1;
            continue;
        }
        col += 1;
        match c {
            ';' => {
                let mut end = text.len();
                while let Some(&(j, d)) = chars.peek() {
                    if d == '\n' {
                        end = j;
                        break;
                    }
                    chars.next();
                    col += 1;
                }
                if stack.is_empty() {
                    items.push(TopItem::Comment(text[i + 1..end].trim().to_string()));
                }
            }
            '(' => stack.push((Vec::new(), here)),
            ')' => {
                let (list, at) = stack.pop().ok_or(OwpddlError::Parse {
                    at: here,
                    expected: "an expression".into(),
                    found: "`)`".into(),
                })?;
                let e = SExpr::List(list, at);
                match stack.last_mut() {
                    Some((parent, _)) => parent.push(e),
                    None => items.push(TopItem::Expr(e)),
                }
            }
            c if c.is_whitespace() => {}
            _ => {
                let mut end = text.len();
                while let Some(&(j, d)) = chars.peek() {
                    if d.is_whitespace() || d == '(' || d == ')' || d == ';' {
                        end = j;
                        break;
                    }
                    chars.next();
                    col += 1;
                }
                let atom = SExpr::Atom(text[i..end].to_string(), here);
                match stack.last_mut() {
                    Some((parent, _)) => parent.push(atom),
                    None => {
                        return Err(OwpddlError::Parse {
                            at: here,
                            expected: "`(`".into(),
                            found: format!("`{}`", &text[i..end]),
                        })
                    }
                }
            }
        }
    }
    if let Some((_, at)) = stack.last() {
        return Err(OwpddlError::Parse {
            at: *at,
            expected: "`)`".into(),
            found: "end of input".into(),
        });
    }
    Ok(items)
}

fn single_expr(text: &str) -> Result<SExpr, OwpddlError> {
    let mut exprs = read_toplevel(text)?.into_iter().filter_map(|i| match i {
        TopItem::Expr(e) => Some(e),
        TopItem::Comment(_) => None,
    });
    let first = exprs.next().ok_or(OwpddlError::Parse {
        at: Position { line: 1, column: 1 },
        expected: "`(define ...)`".into(),
        found: "end of input".into(),
    })?;
    if let Some(extra) = exprs.next() {
        return Err(expected(Some(&extra), "end of input", extra.pos()));
    }
    Ok(first)
}

fn as_list<'a>(e: &'a SExpr, what: &str) -> Result<(&'a [SExpr], Position), OwpddlError> {
    match e {
        SExpr::List(items, p) => Ok((items, *p)),
        other => Err(expected(Some(other), what, other.pos())),
    }
}

fn as_name(e: Option<&SExpr>, what: &str, end: Position) -> Result<String, OwpddlError> {
    match e {
        Some(SExpr::Atom(a, _)) if !a.starts_with(':') => Ok(a.clone()),
        other => Err(expected(other, what, end)),
    }
}

// ---------------------------------------------------------------------------
// syntax trees

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypedName {
    pub name: String,
    pub ty: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateSchema {
    pub name: String,
    pub params: Vec<TypedName>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Term {
    Var(String),
    Const(String),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "?{v}"),
            Term::Const(c) => f.write_str(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtomSchema {
    pub predicate: String,
    pub args: Vec<Term>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiteralSchema {
    pub atom: AtomSchema,
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSchema {
    pub name: String,
    pub params: Vec<TypedName>,
    pub precondition: Vec<LiteralSchema>,
    pub effect: Vec<LiteralSchema>,
    pub unknown: Vec<AtomSchema>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainSource {
    pub name: String,
    /// type → parent; every chain ends at `object`.
    pub types: BTreeMap<String, String>,
    pub predicates: Vec<PredicateSchema>,
    pub actions: Vec<ActionSchema>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProblemSource {
    pub name: String,
    pub domain: String,
    pub objects: Vec<TypedName>,
    pub init: Vec<AtomSchema>,
    pub goal: Vec<LiteralSchema>,
}

const ROOT_TYPE: &str = "object";

impl DomainSource {
    pub fn predicate(&self, name: &str) -> Option<&PredicateSchema> {
        self.predicates.iter().find(|p| p.name == name)
    }

    pub fn action(&self, name: &str) -> Option<&ActionSchema> {
        self.actions.iter().find(|a| a.name == name)
    }

    pub fn has_type(&self, ty: &str) -> bool {
        ty == ROOT_TYPE || self.types.contains_key(ty)
    }

    /// `sub` equals `sup` or descends from it.
    pub fn is_subtype(&self, sub: &str, sup: &str) -> bool {
        let mut cur = sub;
        for _ in 0..=self.types.len() {
            if cur == sup {
                return true;
            }
            match self.types.get(cur) {
                Some(parent) => cur = parent,
                None => return false,
            }
        }
        false
    }

    fn types_overlap(&self, a: &str, b: &str) -> bool {
        self.is_subtype(a, b) || self.is_subtype(b, a)
    }
}

// ---------------------------------------------------------------------------
// parsing

fn parse_typed_list(items: &[SExpr], end: Position) -> Result<Vec<TypedName>, OwpddlError> {
    let mut out = Vec::new();
    let mut pending: Vec<String> = Vec::new();
    let mut i = 0;
    while i < items.len() {
        let name = as_name(items.get(i), "a name or `-`", end)?;
        if name == "-" {
            let ty = as_name(items.get(i + 1), "a type name", end)?;
            if pending.is_empty() {
                return Err(expected(items.get(i), "a name before `-`", end));
            }
            out.extend(pending.drain(..).map(|name| TypedName {
                name,
                ty: ty.clone(),
            }));
            i += 2;
        } else {
            pending.push(name);
            i += 1;
        }
    }
    out.extend(pending.into_iter().map(|name| TypedName {
        name,
        ty: ROOT_TYPE.into(),
    }));
    Ok(out)
}

fn strip_var(name: &str) -> Option<&str> {
    name.strip_prefix('?')
}

fn parse_atom(e: &SExpr) -> Result<AtomSchema, OwpddlError> {
    let (items, at) = as_list(e, "an atom `(pred args...)`")?;
    let predicate = as_name(items.first(), "a predicate name", at)?;
    if predicate.eq_ignore_ascii_case("not") || predicate.eq_ignore_ascii_case("and") {
        return Err(expected(items.first(), "a predicate name", at));
    }
    let args = items[1..]
        .iter()
        .map(|a| {
            let name = as_name(Some(a), "a term", at)?;
            Ok(match strip_var(&name) {
                Some(v) => Term::Var(v.to_string()),
                None => Term::Const(name),
            })
        })
        .collect::<Result<_, OwpddlError>>()?;
    Ok(AtomSchema { predicate, args })
}

fn parse_literal(e: &SExpr) -> Result<LiteralSchema, OwpddlError> {
    let (items, at) = as_list(e, "a literal")?;
    if items.first().is_some_and(|h| h.is_keyword("not")) {
        if items.len() != 2 {
            return Err(expected(items.get(2), "exactly one atom under `not`", at));
        }
        return Ok(LiteralSchema {
            atom: parse_atom(&items[1])?,
            positive: false,
        });
    }
    Ok(LiteralSchema {
        atom: parse_atom(e)?,
        positive: true,
    })
}

/// `()`, a single literal, or `(and lit...)`.
fn parse_conjunction(e: &SExpr) -> Result<Vec<LiteralSchema>, OwpddlError> {
    let (items, _) = as_list(e, "a literal conjunction")?;
    if items.is_empty() {
        return Ok(Vec::new());
    }
    if items[0].is_keyword("and") {
        return items[1..].iter().map(parse_literal).collect();
    }
    Ok(vec![parse_literal(e)?])
}

fn parse_atom_list(e: &SExpr) -> Result<Vec<AtomSchema>, OwpddlError> {
    let (items, _) = as_list(e, "an atom list")?;
    if items.is_empty() {
        return Ok(Vec::new());
    }
    if items[0].is_keyword("and") {
        return items[1..].iter().map(parse_atom).collect();
    }
    if matches!(items[0], SExpr::List(..)) {
        return items.iter().map(parse_atom).collect();
    }
    Ok(vec![parse_atom(e)?])
}

fn parse_action(items: &[SExpr], at: Position) -> Result<ActionSchema, OwpddlError> {
    let name = as_name(items.get(1), "an action name", at)?;
    let mut action = ActionSchema {
        name,
        params: Vec::new(),
        precondition: Vec::new(),
        effect: Vec::new(),
        unknown: Vec::new(),
    };
    let mut seen_effect = false;
    let mut i = 2;
    while i < items.len() {
        let key = &items[i];
        let value = items.get(i + 1).ok_or_else(|| expected(None, "a value", at))?;
        match key.atom().map(str::to_ascii_lowercase).as_deref() {
            Some(":parameters") => {
                let (ps, end) = as_list(value, "a parameter list")?;
                action.params = parse_typed_list(ps, end)?;
                for p in &mut action.params {
                    p.name = strip_var(&p.name)
                        .ok_or_else(|| expected(Some(value), "`?variables`", end))?
                        .to_string();
                }
            }
            Some(":precondition") => action.precondition = parse_conjunction(value)?,
            Some(":effect") => {
                action.effect = parse_conjunction(value)?;
                seen_effect = true;
            }
            Some(":unknown") => action.unknown = parse_atom_list(value)?,
            _ => {
                return Err(expected(
                    Some(key),
                    "`:parameters`, `:precondition`, `:effect` or `:unknown`",
                    at,
                ))
            }
        }
        i += 2;
    }
    if !seen_effect || action.effect.is_empty() {
        return Err(OwpddlError::Parse {
            at,
            expected: "a non-empty `:effect`".into(),
            found: "an action without effects".into(),
        });
    }
    Ok(action)
}

/// Parses a `(define (domain ...) ...)` form and checks that every
/// reference resolves.
pub fn parse_domain(text: &str) -> Result<DomainSource, OwpddlError> {
    let root = single_expr(text)?;
    let (items, at) = as_list(&root, "`(define ...)`")?;
    if !items.first().is_some_and(|h| h.is_keyword("define")) {
        return Err(expected(items.first(), "`define`", at));
    }
    let header = items.get(1).ok_or_else(|| expected(None, "`(domain NAME)`", at))?;
    let (h, hat) = as_list(header, "`(domain NAME)`")?;
    if !h.first().is_some_and(|k| k.is_keyword("domain")) {
        return Err(expected(h.first(), "`domain`", hat));
    }
    let mut domain = DomainSource {
        name: as_name(h.get(1), "a domain name", hat)?,
        types: BTreeMap::new(),
        predicates: Vec::new(),
        actions: Vec::new(),
    };

    for section in &items[2..] {
        let (sec, sat) = as_list(section, "a domain section")?;
        let head = sec.first().ok_or_else(|| expected(None, "a section keyword", sat))?;
        match head.atom().map(str::to_ascii_lowercase).as_deref() {
            Some(":requirements") => {
                for r in &sec[1..] {
                    let ok = r.is_keyword(":strips") || r.is_keyword(":typing")
                        || r.is_keyword(":negative-preconditions");
                    if !ok {
                        return Err(expected(Some(r), "`:strips`, `:typing` or `:negative-preconditions`", sat));
                    }
                }
            }
            Some(":types") => {
                for t in parse_typed_list(&sec[1..], sat)? {
                    domain.types.insert(t.name, t.ty);
                }
            }
            Some(":predicates") => {
                for p in &sec[1..] {
                    let (ps, pat) = as_list(p, "a predicate declaration")?;
                    let name = as_name(ps.first(), "a predicate name", pat)?;
                    let mut params = parse_typed_list(&ps[1..], pat)?;
                    for tn in &mut params {
                        tn.name = strip_var(&tn.name)
                            .ok_or_else(|| expected(Some(p), "`?variables`", pat))?
                            .to_string();
                    }
                    domain.predicates.push(PredicateSchema { name, params });
                }
            }
            Some(":action") => domain.actions.push(parse_action(sec, sat)?),
            _ => {
                return Err(expected(
                    Some(head),
                    "`:requirements`, `:types`, `:predicates` or `:action`",
                    sat,
                ))
            }
        }
    }
    check_domain(&domain)?;
    Ok(domain)
}

fn check_domain(d: &DomainSource) -> Result<(), OwpddlError> {
    for (t, parent) in &d.types {
        if !d.has_type(parent) {
            return Err(semantic(format!("type {t} has unknown parent {parent}")));
        }
        if !d.is_subtype(t, ROOT_TYPE) {
            return Err(semantic(format!("type {t} has a cyclic ancestry")));
        }
    }
    let mut pnames = BTreeSet::new();
    for p in &d.predicates {
        if !pnames.insert(&p.name) {
            return Err(semantic(format!("duplicate predicate {}", p.name)));
        }
        for tn in &p.params {
            if !d.has_type(&tn.ty) {
                return Err(semantic(format!("unknown type {} in predicate {}", tn.ty, p.name)));
            }
        }
    }
    let mut anames = BTreeSet::new();
    for a in &d.actions {
        if !anames.insert(&a.name) {
            return Err(semantic(format!("duplicate action {}", a.name)));
        }
        for tn in &a.params {
            if !d.has_type(&tn.ty) {
                return Err(semantic(format!("unknown type {} in action {}", tn.ty, a.name)));
            }
        }
        let atoms = a
            .precondition
            .iter()
            .chain(&a.effect)
            .map(|l| (&l.atom, true))
            .chain(a.unknown.iter().map(|u| (u, false)));
        for (atom, bound_only) in atoms {
            let p = d.predicate(&atom.predicate).ok_or_else(|| {
                semantic(format!("unknown predicate {} in action {}", atom.predicate, a.name))
            })?;
            if p.params.len() != atom.args.len() {
                return Err(semantic(format!(
                    "predicate {} takes {} arguments, action {} passes {}",
                    p.name,
                    p.params.len(),
                    a.name,
                    atom.args.len()
                )));
            }
            for (term, decl) in atom.args.iter().zip(&p.params) {
                if let Term::Var(v) = term {
                    match a.params.iter().find(|tn| &tn.name == v) {
                        Some(tn) if !d.types_overlap(&tn.ty, &decl.ty) => {
                            return Err(semantic(format!(
                                "?{v}: {} can never fill {}'s {} argument in action {}",
                                tn.ty, p.name, decl.ty, a.name
                            )))
                        }
                        Some(_) => {}
                        None if bound_only => {
                            return Err(semantic(format!(
                                "unbound variable ?{v} in action {}",
                                a.name
                            )))
                        }
                        None => {}
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn parse_problem(text: &str) -> Result<ProblemSource, OwpddlError> {
    let root = single_expr(text)?;
    let (items, at) = as_list(&root, "`(define ...)`")?;
    if !items.first().is_some_and(|h| h.is_keyword("define")) {
        return Err(expected(items.first(), "`define`", at));
    }
    let header = items.get(1).ok_or_else(|| expected(None, "`(problem NAME)`", at))?;
    let (h, hat) = as_list(header, "`(problem NAME)`")?;
    if !h.first().is_some_and(|k| k.is_keyword("problem")) {
        return Err(expected(h.first(), "`problem`", hat));
    }
    let mut problem = ProblemSource {
        name: as_name(h.get(1), "a problem name", hat)?,
        domain: String::new(),
        objects: Vec::new(),
        init: Vec::new(),
        goal: Vec::new(),
    };
    for section in &items[2..] {
        let (sec, sat) = as_list(section, "a problem section")?;
        let head = sec.first().ok_or_else(|| expected(None, "a section keyword", sat))?;
        match head.atom().map(str::to_ascii_lowercase).as_deref() {
            Some(":domain") => problem.domain = as_name(sec.get(1), "a domain name", sat)?,
            Some(":objects") => problem.objects = parse_typed_list(&sec[1..], sat)?,
            Some(":init") => {
                problem.init = sec[1..].iter().map(parse_atom).collect::<Result<_, _>>()?
            }
            Some(":goal") => {
                let g = sec.get(1).ok_or_else(|| expected(None, "a goal", sat))?;
                problem.goal = parse_conjunction(g)?;
            }
            _ => {
                return Err(expected(
                    Some(head),
                    "`:domain`, `:objects`, `:init` or `:goal`",
                    sat,
                ))
            }
        }
    }
    Ok(problem)
}

// ---------------------------------------------------------------------------
// grounding

struct Grounder<'a> {
    domain: &'a DomainSource,
    objects: BTreeMap<String, String>,
}

impl Grounder<'_> {
    fn objects_of(&self, ty: &str) -> Vec<&str> {
        self.objects
            .iter()
            .filter(|(_, oty)| self.domain.is_subtype(oty, ty))
            .map(|(o, _)| o.as_str())
            .collect()
    }

    fn fluents(&self) -> FluentSet {
        let mut out = FluentSet::new();
        for p in &self.domain.predicates {
            let choices: Vec<Vec<&str>> = p.params.iter().map(|tn| self.objects_of(&tn.ty)).collect();
            for tuple in cartesian(&choices) {
                out.insert(Fluent::new(p.name.as_str(), tuple));
            }
        }
        out
    }

    /// `None` when the atom is vacuous under this binding.
    fn ground_atom(
        &self,
        atom: &AtomSchema,
        binding: &HashMap<&str, &str>,
    ) -> Result<Option<Fluent>, OwpddlError> {
        let p = self
            .domain
            .predicate(&atom.predicate)
            .ok_or_else(|| semantic(format!("unknown predicate {}", atom.predicate)))?;
        if p.params.len() != atom.args.len() {
            return Err(semantic(format!("arity mismatch for {}", p.name)));
        }
        let mut args = Vec::with_capacity(atom.args.len());
        for (term, decl) in atom.args.iter().zip(&p.params) {
            let obj = match term {
                Term::Var(v) => *binding
                    .get(v.as_str())
                    .ok_or_else(|| semantic(format!("unbound variable ?{v}")))?,
                Term::Const(c) => c.as_str(),
            };
            let oty = self
                .objects
                .get(obj)
                .ok_or_else(|| semantic(format!("unknown object {obj}")))?;
            if !self.domain.is_subtype(oty, &decl.ty) {
                return Ok(None);
            }
            args.push(obj);
        }
        Ok(Some(Fluent::new(p.name.as_str(), args)))
    }

    fn ground_literals(
        &self,
        lits: &[LiteralSchema],
        binding: &HashMap<&str, &str>,
    ) -> Result<Result<PartialFluentState, SymbolicError>, OwpddlError> {
        let mut out = Vec::new();
        for l in lits {
            if let Some(f) = self.ground_atom(&l.atom, binding)? {
                out.push(Literal::new(f, l.positive));
            }
        }
        Ok(PartialFluentState::new(out))
    }

    /// Free variables of `atom` enumerate over compatible objects.
    fn ground_unknown(
        &self,
        atom: &AtomSchema,
        binding: &HashMap<&str, &str>,
        out: &mut FluentSet,
    ) -> Result<(), OwpddlError> {
        let p = self
            .domain
            .predicate(&atom.predicate)
            .ok_or_else(|| semantic(format!("unknown predicate {}", atom.predicate)))?;
        let choices: Vec<Vec<&str>> = atom
            .args
            .iter()
            .zip(&p.params)
            .map(|(term, decl)| match term {
                Term::Var(v) => match binding.get(v.as_str()) {
                    Some(o) => vec![*o],
                    None => self.objects_of(&decl.ty),
                },
                Term::Const(c) => vec![c.as_str()],
            })
            .collect();
        for tuple in cartesian(&choices) {
            let ground = AtomSchema {
                predicate: atom.predicate.clone(),
                args: tuple.iter().map(|o| Term::Const(o.to_string())).collect(),
            };
            if let Some(f) = self.ground_atom(&ground, binding)? {
                out.insert(f);
            }
        }
        Ok(())
    }

    fn ground_action(
        &self,
        action: &ActionSchema,
        fluents: &FluentSet,
        out: &mut Vec<Operator>,
    ) -> Result<(), OwpddlError> {
        let choices: Vec<Vec<&str>> = action.params.iter().map(|tn| self.objects_of(&tn.ty)).collect();
        for tuple in cartesian(&choices) {
            let binding: HashMap<&str, &str> = action
                .params
                .iter()
                .map(|tn| tn.name.as_str())
                .zip(tuple.iter().copied())
                .collect();
            let name = if tuple.is_empty() {
                action.name.clone()
            } else {
                format!("{}({})", action.name, tuple.join(","))
            };
            let pre = self.ground_literals(&action.precondition, &binding)?;
            let eff = self.ground_literals(&action.effect, &binding)?;
            let (pre, eff) = match (pre, eff) {
                (Ok(p), Ok(e)) => (p, e),
                (Err(e), _) | (_, Err(e)) => {
                    warn!("dropping {name}: {e}");
                    continue;
                }
            };
            let mut changing: FluentSet = eff.fluents().cloned().collect();
            for u in &action.unknown {
                self.ground_unknown(u, &binding, &mut changing)?;
            }
            let statics = fluents.difference(&changing).cloned().collect();
            match Operator::new(name.as_str(), pre, eff, statics) {
                Ok(op) => out.push(op),
                Err(e) => warn!("dropping {name}: {e}"),
            }
        }
        Ok(())
    }
}

fn cartesian<'a>(choices: &[Vec<&'a str>]) -> Vec<Vec<&'a str>> {
    let mut out: Vec<Vec<&str>> = vec![Vec::new()];
    for options in choices {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                options.iter().map(move |o| {
                    let mut next = prefix.clone();
                    next.push(o);
                    next
                })
            })
            .collect();
    }
    out
}

/// Grounds every action schema over every type-compatible object tuple and
/// closes the initial state under the closed-world assumption.
pub fn ground(domain: &DomainSource, problem: &ProblemSource) -> Result<StripsTask, OwpddlError> {
    if !problem.domain.is_empty() && problem.domain != domain.name {
        return Err(semantic(format!(
            "problem targets domain {}, not {}",
            problem.domain, domain.name
        )));
    }
    let mut objects = BTreeMap::new();
    for o in &problem.objects {
        if !domain.has_type(&o.ty) {
            return Err(semantic(format!("object {} has unknown type {}", o.name, o.ty)));
        }
        if objects.insert(o.name.clone(), o.ty.clone()).is_some() {
            return Err(semantic(format!("duplicate object {}", o.name)));
        }
    }
    let g = Grounder { domain, objects };
    let fluents = g.fluents();

    let mut ops = Vec::new();
    for a in &domain.actions {
        g.ground_action(a, &fluents, &mut ops)?;
    }

    let empty = HashMap::new();
    let mut true_atoms = BTreeSet::new();
    for atom in &problem.init {
        if atom.args.iter().any(|t| matches!(t, Term::Var(_))) {
            return Err(semantic("variables are not allowed in :init"));
        }
        let f = g
            .ground_atom(atom, &empty)?
            .filter(|f| fluents.contains(f))
            .ok_or_else(|| semantic(format!("ill-typed initial atom ({})", display_atom(atom))))?;
        true_atoms.insert(f);
    }
    let initial = PartialFluentState::new(
        fluents
            .iter()
            .map(|f| Literal::new(f.clone(), true_atoms.contains(f))),
    )?;
    let mut goal = Vec::new();
    for l in &problem.goal {
        let f = g
            .ground_atom(&l.atom, &empty)?
            .ok_or_else(|| semantic(format!("ill-typed goal atom ({})", display_atom(&l.atom))))?;
        goal.push(Literal::new(f, l.positive));
    }
    let goal = PartialFluentState::new(goal)?;
    Ok(StripsTask::new(fluents, ops, initial, goal)?)
}

fn display_atom(a: &AtomSchema) -> String {
    let mut s = a.predicate.clone();
    for t in &a.args {
        let _ = write!(s, " {t}");
    }
    s
}

// ---------------------------------------------------------------------------
// operator dumps

/// Metadata carried by a discovered operator in a dump file.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMeta {
    pub episode: u64,
    pub value: f64,
    pub preconds: usize,
    pub learner: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DumpedOperator {
    pub operator: Operator,
    pub meta: Option<OperatorMeta>,
}

fn encode_name(name: &str) -> String {
    name.chars()
        .map(|c| match c {
            '(' => '[',
            ')' => ']',
            c if c.is_whitespace() => '_',
            c => c,
        })
        .collect()
}

fn decode_name(name: &str) -> String {
    name.replace('[', "(").replace(']', ")")
}

fn write_fluent(out: &mut String, f: &Fluent) {
    out.push('(');
    out.push_str(f.predicate());
    for a in f.args() {
        out.push(' ');
        out.push_str(a);
    }
    out.push(')');
}

fn write_literals(out: &mut String, state: &PartialFluentState) {
    out.push_str("(and");
    for l in state {
        out.push(' ');
        if l.positive {
            write_fluent(out, &l.fluent);
        } else {
            out.push_str("(not ");
            write_fluent(out, &l.fluent);
            out.push(')');
        }
    }
    out.push(')');
}

/// Writes `op` as a ground `:action` block. The `:unknown` list holds every
/// fluent of `fluents` that is neither an effect nor static.
pub fn serialize_operator(op: &Operator, fluents: &FluentSet) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "(:action {}", encode_name(&op.name));
    out.push_str("  :parameters ()\n  :precondition ");
    write_literals(&mut out, &op.pre);
    out.push_str("\n  :effect ");
    write_literals(&mut out, &op.eff);
    out.push_str("\n  :unknown (and");
    for f in fluents {
        if !op.eff.mentions(f) && !op.static_fluents.contains(f) {
            out.push(' ');
            write_fluent(&mut out, f);
        }
    }
    out.push_str("))\n");
    out
}

/// Serializes a discovered operator with its metadata comment lines.
pub fn serialize_discovered(op: &Operator, fluents: &FluentSet, meta: &OperatorMeta) -> String {
    let mut out = String::new();
    if let Some(l) = meta.learner {
        let _ = writeln!(out, "; learner={l}");
    }
    let _ = writeln!(
        out,
        "; episode={} value={} preconds={}",
        meta.episode, meta.value, meta.preconds
    );
    out.push_str(&serialize_operator(op, fluents));
    out
}

fn parse_meta(comments: &[String]) -> Option<OperatorMeta> {
    let mut fields = HashMap::new();
    for c in comments {
        for kv in c.split_whitespace() {
            if let Some((k, v)) = kv.split_once('=') {
                fields.insert(k.to_string(), v.to_string());
            }
        }
    }
    Some(OperatorMeta {
        episode: fields.get("episode")?.parse().ok()?,
        value: fields.get("value")?.parse().ok()?,
        preconds: fields.get("preconds")?.parse().ok()?,
        learner: fields.get("learner").and_then(|v| v.parse().ok()),
    })
}

fn ground_fluent(atom: &AtomSchema, fluents: &FluentSet) -> Result<Fluent, OwpddlError> {
    let mut args = Vec::new();
    for t in &atom.args {
        match t {
            Term::Const(c) => args.push(c.as_str()),
            Term::Var(v) => return Err(semantic(format!("variable ?{v} in a ground action"))),
        }
    }
    let f = Fluent::new(atom.predicate.as_str(), args);
    if !fluents.contains(&f) {
        return Err(semantic(format!("fluent {f} is not part of the task")));
    }
    Ok(f)
}

fn ground_state(lits: &[LiteralSchema], fluents: &FluentSet) -> Result<PartialFluentState, OwpddlError> {
    let lits = lits
        .iter()
        .map(|l| Ok(Literal::new(ground_fluent(&l.atom, fluents)?, l.positive)))
        .collect::<Result<Vec<_>, OwpddlError>>()?;
    Ok(PartialFluentState::new(lits)?)
}

/// Reads a sequence of ground `:action` blocks over `fluents`.
///
/// Blocks preceded by a `; episode=... value=... preconds=...` line are
/// discovered operators and load with an empty static set; all others get
/// `F \ (effects ∪ unknown)`.
pub fn parse_operator_dump(text: &str, fluents: &FluentSet) -> Result<Vec<DumpedOperator>, OwpddlError> {
    let mut out = Vec::new();
    let mut comments = Vec::new();
    for item in read_toplevel(text)? {
        let e = match item {
            TopItem::Comment(c) => {
                comments.push(c);
                continue;
            }
            TopItem::Expr(e) => e,
        };
        let (items, at) = as_list(&e, "`(:action ...)`")?;
        if !items.first().is_some_and(|h| h.is_keyword(":action")) {
            return Err(expected(items.first(), "`:action`", at));
        }
        let action = parse_action(items, at)?;
        if !action.params.is_empty() {
            return Err(semantic(format!("dumped action {} has parameters", action.name)));
        }
        let meta = parse_meta(&comments);
        comments.clear();
        let pre = ground_state(&action.precondition, fluents)?;
        let eff = ground_state(&action.effect, fluents)?;
        let statics = if meta.is_some() {
            FluentSet::new()
        } else {
            let mut changing: FluentSet = eff.fluents().cloned().collect();
            for u in &action.unknown {
                changing.insert(ground_fluent(u, fluents)?);
            }
            fluents.difference(&changing).cloned().collect()
        };
        let operator = Operator::new(decode_name(&action.name), pre, eff, statics)?;
        out.push(DumpedOperator { operator, meta });
    }
    Ok(out)
}
