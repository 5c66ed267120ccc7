//! Domain and problem files for the supported PDDL subset.
//!
//! Durative actions are read with their `at start` / `at end` / `over all`
//! annotations, but the timing is only recorded: planning treats every
//! action as atomic, with start and end deletes applied before adds.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::sexpr::{self, Pos, SExpr};
use super::{ErrorKind, ParseError};

pub const OBJECT_TYPE: &str = "object";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Timing {
    Instant,
    AtStart,
    AtEnd,
    OverAll,
}

/// Argument of an atom inside an action schema.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term {
    /// Index into the schema parameters.
    Param(usize),
    Const(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomTemplate {
    pub predicate: String,
    pub args: Vec<Term>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Literal {
    pub atom: AtomTemplate,
    pub positive: bool,
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionTerm {
    pub name: String,
    pub args: Vec<Term>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NumericValue {
    Number(f64),
    Function(FunctionTerm),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NumericOp {
    Increase,
    Decrease,
    Assign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericEffect {
    pub op: NumericOp,
    pub target: FunctionTerm,
    pub value: NumericValue,
    pub timing: Timing,
}

/// An `(increase (direct) (indirect))` effect whose value is produced by
/// an external module rather than by any action effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostHook {
    pub direct: FunctionTerm,
    pub indirect: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub ty: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSchema {
    pub name: String,
    pub parameters: Vec<Parameter>,
    pub durative: bool,
    /// Constant duration when given as `(= ?duration <number>)`.
    pub duration: Option<f64>,
    pub precondition: Vec<Literal>,
    pub add: Vec<(AtomTemplate, Timing)>,
    pub delete: Vec<(AtomTemplate, Timing)>,
    pub numeric: Vec<NumericEffect>,
    /// Filled in once the whole domain is known.
    pub cost_hooks: Vec<CostHook>,
}

impl ActionSchema {
    /// Arguments of the first effect on the `triggered` function, if any.
    pub fn triggered_args(&self) -> Option<&[Term]> {
        self.numeric
            .iter()
            .find(|n| n.target.name == "triggered")
            .map(|n| n.target.args.as_slice())
    }

    pub fn has_external_cost(&self) -> bool {
        !self.cost_hooks.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signature {
    pub name: String,
    pub params: Vec<Parameter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub name: String,
    pub requirements: Vec<String>,
    /// Type name to parent type; `object` is the root.
    pub types: BTreeMap<String, String>,
    pub predicates: Vec<Signature>,
    pub functions: Vec<Signature>,
    pub actions: Vec<ActionSchema>,
}

impl Domain {
    pub fn predicate(&self, name: &str) -> Option<&Signature> {
        self.predicates.iter().find(|p| p.name == name)
    }

    pub fn function(&self, name: &str) -> Option<&Signature> {
        self.functions.iter().find(|p| p.name == name)
    }

    pub fn action(&self, name: &str) -> Option<&ActionSchema> {
        self.actions.iter().find(|a| a.name == name)
    }

    /// True when `ty` equals `ancestor` or inherits from it.
    pub fn is_subtype(&self, ty: &str, ancestor: &str) -> bool {
        let mut cur = ty;
        for _ in 0..=self.types.len() {
            if cur == ancestor {
                return true;
            }
            match self.types.get(cur) {
                Some(parent) if parent != cur => cur = parent,
                _ => return false,
            }
        }
        false
    }

    /// Functions written by some action effect.
    pub fn written_functions(&self) -> HashSet<&str> {
        self.actions
            .iter()
            .flat_map(|a| a.numeric.iter().map(|n| n.target.name.as_str()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Proposition {
    pub predicate: String,
    pub args: Vec<String>,
}

impl Proposition {
    pub fn new(predicate: &str, args: &[&str]) -> Self {
        Proposition {
            predicate: predicate.to_string(),
            args: args.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl std::fmt::Display for Proposition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}", self.predicate)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub name: String,
    pub domain: String,
    /// Objects in declaration order with their types.
    pub objects: Vec<(String, String)>,
    pub init: Vec<Proposition>,
    pub numeric_init: Vec<(String, Vec<String>, f64)>,
    pub goal: Vec<Proposition>,
}

impl Problem {
    pub fn object_type(&self, name: &str) -> Option<&str> {
        self.objects
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.as_str())
    }

    pub fn objects_of(&self, domain: &Domain, ty: &str) -> Vec<&str> {
        self.objects
            .iter()
            .filter(|(_, t)| domain.is_subtype(t, ty))
            .map(|(n, _)| n.as_str())
            .collect()
    }
}

fn syntax(pos: Pos, msg: impl Into<String>) -> ParseError {
    ParseError::at(pos, msg)
}

fn unsupported(pos: Pos, msg: impl Into<String>) -> ParseError {
    ParseError::new(ErrorKind::Unsupported, pos, msg)
}

fn semantic(pos: Pos, msg: impl Into<String>) -> ParseError {
    ParseError::new(ErrorKind::Semantic, pos, msg)
}

fn expect_list<'a>(e: &'a SExpr, what: &str) -> Result<&'a [SExpr], ParseError> {
    e.list()
        .ok_or_else(|| syntax(e.pos(), format!("expected a list for {what}")))
}

fn expect_atom<'a>(e: &'a SExpr, what: &str) -> Result<&'a str, ParseError> {
    e.atom()
        .ok_or_else(|| syntax(e.pos(), format!("expected a name for {what}")))
}

/// Single top-level `(define ...)` form.
fn define_body(text: &str, kind: &str) -> Result<(Vec<SExpr>, Pos), ParseError> {
    let top = sexpr::parse(text)?;
    let first = top
        .first()
        .ok_or_else(|| syntax(Pos { line: 1, col: 1 }, "empty input"))?;
    if top.len() > 1 {
        return Err(syntax(top[1].pos(), "unexpected content after `define`"));
    }
    let items = expect_list(first, "define")?;
    if !items.first().is_some_and(|h| h.is_keyword("define")) {
        return Err(syntax(first.pos(), "expected `(define ...)`"));
    }
    let header = items
        .get(1)
        .and_then(SExpr::list)
        .filter(|h| h.len() == 2 && h[0].is_keyword(kind))
        .ok_or_else(|| syntax(first.pos(), format!("expected `({kind} <name>)` header")))?;
    let _ = header;
    Ok((items.to_vec(), first.pos()))
}

/// Parses `a b - t c - u d` style typed lists. Untyped names get `default`.
fn typed_list(items: &[SExpr], default: &str) -> Result<Vec<(String, String, Pos)>, ParseError> {
    let mut out = Vec::new();
    let mut pending: Vec<(String, Pos)> = Vec::new();
    let mut i = 0;
    while i < items.len() {
        let name = expect_atom(&items[i], "typed list entry")?;
        if name == "-" {
            let ty = items
                .get(i + 1)
                .ok_or_else(|| syntax(items[i].pos(), "`-` must be followed by a type"))?;
            let ty = match ty {
                SExpr::Atom(t, _) => t.clone(),
                SExpr::List(v, p) if v.first().is_some_and(|h| h.is_keyword("either")) => {
                    return Err(unsupported(*p, "`either` types are not supported"))
                }
                other => return Err(syntax(other.pos(), "expected a type name")),
            };
            if pending.is_empty() {
                return Err(syntax(items[i].pos(), "type annotation without names"));
            }
            out.extend(pending.drain(..).map(|(n, p)| (n, ty.clone(), p)));
            i += 2;
        } else {
            pending.push((name.to_string(), items[i].pos()));
            i += 1;
        }
    }
    out.extend(pending.into_iter().map(|(n, p)| (n, default.to_string(), p)));
    Ok(out)
}

struct SchemaContext<'a> {
    domain: &'a Domain,
    params: &'a [Parameter],
}

impl SchemaContext<'_> {
    fn term(&self, e: &SExpr) -> Result<Term, ParseError> {
        let name = expect_atom(e, "term")?;
        if let Some(var) = name.strip_prefix('?') {
            self.params
                .iter()
                .position(|p| p.name == var)
                .map(Term::Param)
                .ok_or_else(|| semantic(e.pos(), format!("variable ?{var} is not an action parameter")))
        } else {
            Err(unsupported(
                e.pos(),
                format!("constant `{name}` in action schema (domain constants are not supported)"),
            ))
        }
    }

    fn atom(&self, e: &SExpr) -> Result<AtomTemplate, ParseError> {
        let items = expect_list(e, "atom")?;
        let name = expect_atom(
            items.first().ok_or_else(|| syntax(e.pos(), "empty atom"))?,
            "predicate",
        )?;
        let sig = self
            .domain
            .predicate(name)
            .ok_or_else(|| semantic(e.pos(), format!("undeclared predicate `{name}`")))?;
        if sig.params.len() != items.len() - 1 {
            return Err(semantic(
                e.pos(),
                format!(
                    "predicate `{name}` takes {} arguments, got {}",
                    sig.params.len(),
                    items.len() - 1
                ),
            ));
        }
        let args = items[1..]
            .iter()
            .map(|a| self.term(a))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(AtomTemplate {
            predicate: name.to_string(),
            args,
        })
    }

    fn function_term(&self, e: &SExpr) -> Result<FunctionTerm, ParseError> {
        let items = expect_list(e, "function term")?;
        let name = expect_atom(
            items.first().ok_or_else(|| syntax(e.pos(), "empty function term"))?,
            "function",
        )?;
        let sig = self
            .domain
            .function(name)
            .ok_or_else(|| semantic(e.pos(), format!("undeclared function `{name}`")))?;
        if sig.params.len() != items.len() - 1 {
            return Err(semantic(
                e.pos(),
                format!(
                    "function `{name}` takes {} arguments, got {}",
                    sig.params.len(),
                    items.len() - 1
                ),
            ));
        }
        let args = items[1..]
            .iter()
            .map(|a| self.term(a))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FunctionTerm {
            name: name.to_string(),
            args,
        })
    }

    fn condition(&self, e: &SExpr, timing: Timing, out: &mut Vec<Literal>) -> Result<(), ParseError> {
        let items = expect_list(e, "condition")?;
        let Some(head) = e.head() else {
            // `()` is the empty condition
            return if items.is_empty() {
                Ok(())
            } else {
                Err(syntax(e.pos(), "malformed condition"))
            };
        };
        match head.as_str() {
            "and" => items[1..].iter().try_for_each(|c| self.condition(c, timing, out)),
            "at" | "over" if is_temporal(items) => {
                let t = timing_of(items, e.pos())?;
                if timing != Timing::Instant {
                    return Err(syntax(e.pos(), "nested temporal annotation"));
                }
                let inner = items.get(2).ok_or_else(|| syntax(e.pos(), "missing condition"))?;
                self.condition(inner, t, out)
            }
            "not" => {
                let inner = items.get(1).ok_or_else(|| syntax(e.pos(), "`not` needs an atom"))?;
                out.push(Literal {
                    atom: self.atom(inner)?,
                    positive: false,
                    timing,
                });
                Ok(())
            }
            "or" | "imply" | "forall" | "exists" | "when" | ">" | "<" | ">=" | "<=" | "=" => {
                Err(unsupported(e.pos(), format!("`{head}` in conditions is not supported")))
            }
            _ => {
                out.push(Literal {
                    atom: self.atom(e)?,
                    positive: true,
                    timing,
                });
                Ok(())
            }
        }
    }

    fn effect(&self, e: &SExpr, timing: Timing, schema: &mut ActionSchema) -> Result<(), ParseError> {
        let items = expect_list(e, "effect")?;
        let Some(head) = e.head() else {
            return if items.is_empty() {
                Ok(())
            } else {
                Err(syntax(e.pos(), "malformed effect"))
            };
        };
        match head.as_str() {
            "and" => items[1..].iter().try_for_each(|c| self.effect(c, timing, schema)),
            "at" | "over" if is_temporal(items) => {
                let t = timing_of(items, e.pos())?;
                if t == Timing::OverAll {
                    return Err(unsupported(e.pos(), "`over all` effects are not supported"));
                }
                if timing != Timing::Instant {
                    return Err(syntax(e.pos(), "nested temporal annotation"));
                }
                let inner = items.get(2).ok_or_else(|| syntax(e.pos(), "missing effect"))?;
                self.effect(inner, t, schema)
            }
            "not" => {
                let inner = items.get(1).ok_or_else(|| syntax(e.pos(), "`not` needs an atom"))?;
                schema.delete.push((self.atom(inner)?, timing));
                Ok(())
            }
            "increase" | "decrease" | "assign" => {
                if items.len() != 3 {
                    return Err(syntax(e.pos(), format!("`{head}` takes a function and a value")));
                }
                let op = match head.as_str() {
                    "increase" => NumericOp::Increase,
                    "decrease" => NumericOp::Decrease,
                    _ => NumericOp::Assign,
                };
                let target = self.function_term(&items[1])?;
                let value = match &items[2] {
                    SExpr::Atom(a, p) => NumericValue::Number(
                        a.parse()
                            .map_err(|_| unsupported(*p, format!("numeric value `{a}` is not supported")))?,
                    ),
                    list @ SExpr::List(..) => {
                        let h = list.head().unwrap_or_default();
                        if matches!(h.as_str(), "+" | "-" | "*" | "/") {
                            return Err(unsupported(list.pos(), "arithmetic expressions are not supported"));
                        }
                        NumericValue::Function(self.function_term(list)?)
                    }
                };
                schema.numeric.push(NumericEffect {
                    op,
                    target,
                    value,
                    timing,
                });
                Ok(())
            }
            "forall" | "when" | "scale-up" | "scale-down" => {
                Err(unsupported(e.pos(), format!("`{head}` in effects is not supported")))
            }
            _ => {
                schema.add.push((self.atom(e)?, timing));
                Ok(())
            }
        }
    }
}

/// `(at start ..)`, `(at end ..)` or `(over all ..)`, as opposed to an
/// atom of a predicate that happens to be called `at`.
fn is_temporal(items: &[SExpr]) -> bool {
    items.len() == 3
        && items[1]
            .atom()
            .is_some_and(|a| ["start", "end", "all"].iter().any(|k| a.eq_ignore_ascii_case(k)))
}

fn timing_of(items: &[SExpr], pos: Pos) -> Result<Timing, ParseError> {
    let first = items[0].atom().unwrap_or("").to_ascii_lowercase();
    let second = items.get(1).and_then(SExpr::atom).unwrap_or("").to_ascii_lowercase();
    match (first.as_str(), second.as_str()) {
        ("at", "start") => Ok(Timing::AtStart),
        ("at", "end") => Ok(Timing::AtEnd),
        ("over", "all") => Ok(Timing::OverAll),
        _ => Err(syntax(pos, "expected `at start`, `at end` or `over all`")),
    }
}

fn parse_signatures(items: &[SExpr], domain: &Domain, kind: &str) -> Result<Vec<Signature>, ParseError> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < items.len() {
        let e = &items[i];
        // `- number` after a function declaration
        if e.atom() == Some("-") {
            i += 2;
            continue;
        }
        let list = expect_list(e, kind)?;
        let name = expect_atom(
            list.first().ok_or_else(|| syntax(e.pos(), format!("empty {kind} declaration")))?,
            kind,
        )?;
        let params = typed_list(&list[1..], OBJECT_TYPE)?
            .into_iter()
            .map(|(n, ty, p)| {
                check_type(domain, &ty, p)?;
                Ok(Parameter {
                    name: n.trim_start_matches('?').to_string(),
                    ty,
                })
            })
            .collect::<Result<Vec<_>, ParseError>>()?;
        out.push(Signature {
            name: name.to_string(),
            params,
        });
        i += 1;
    }
    Ok(out)
}

fn check_type(domain: &Domain, ty: &str, pos: Pos) -> Result<(), ParseError> {
    if ty == OBJECT_TYPE || domain.types.contains_key(ty) {
        Ok(())
    } else {
        Err(semantic(pos, format!("undeclared type `{ty}`")))
    }
}

/// Keyword-value pairs such as `:parameters (...) :duration (...)`.
fn keyword_pairs<'a>(items: &'a [SExpr], pos: Pos) -> Result<HashMap<String, &'a SExpr>, ParseError> {
    let mut out = HashMap::new();
    let mut i = 0;
    while i < items.len() {
        let key = expect_atom(&items[i], "keyword")?;
        if !key.starts_with(':') {
            return Err(syntax(items[i].pos(), format!("expected a keyword, got `{key}`")));
        }
        let value = items
            .get(i + 1)
            .ok_or_else(|| syntax(items[i].pos(), format!("`{key}` has no value")))?;
        out.insert(key.to_ascii_lowercase(), value);
        i += 2;
    }
    let _ = pos;
    Ok(out)
}

fn parse_action(e: &SExpr, durative: bool, domain: &Domain) -> Result<ActionSchema, ParseError> {
    let items = expect_list(e, "action")?;
    let name = expect_atom(
        items.get(1).ok_or_else(|| syntax(e.pos(), "action without a name"))?,
        "action name",
    )?;
    let kv = keyword_pairs(&items[2..], e.pos())?;
    let allowed: &[&str] = if durative {
        &[":parameters", ":duration", ":condition", ":effect"]
    } else {
        &[":parameters", ":precondition", ":effect"]
    };
    for k in kv.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(unsupported(e.pos(), format!("action field `{k}` is not supported")));
        }
    }
    let parameters = match kv.get(":parameters") {
        Some(p) => typed_list(expect_list(p, ":parameters")?, OBJECT_TYPE)?
            .into_iter()
            .map(|(n, ty, pos)| {
                let Some(var) = n.strip_prefix('?') else {
                    return Err(syntax(pos, format!("parameter `{n}` must start with `?`")));
                };
                check_type(domain, &ty, pos)?;
                Ok(Parameter {
                    name: var.to_string(),
                    ty,
                })
            })
            .collect::<Result<Vec<_>, _>>()?,
        None => Vec::new(),
    };
    let duration = match kv.get(":duration") {
        Some(d) => {
            let l = expect_list(d, ":duration")?;
            match l {
                [eq, var, SExpr::Atom(v, p)] if eq.is_keyword("=") && var.is_keyword("?duration") => Some(
                    v.parse::<f64>()
                        .map_err(|_| unsupported(*p, "only constant durations are supported"))?,
                ),
                _ => return Err(unsupported(d.pos(), "only `(= ?duration <number>)` is supported")),
            }
        }
        None => None,
    };
    let mut schema = ActionSchema {
        name: name.to_string(),
        parameters,
        durative,
        duration,
        precondition: Vec::new(),
        add: Vec::new(),
        delete: Vec::new(),
        numeric: Vec::new(),
        cost_hooks: Vec::new(),
    };
    let ctx = SchemaContext {
        domain,
        params: &schema.parameters.clone(),
    };
    let cond_key = if durative { ":condition" } else { ":precondition" };
    if let Some(c) = kv.get(cond_key) {
        let mut pre = Vec::new();
        ctx.condition(c, Timing::Instant, &mut pre)?;
        schema.precondition = pre;
    }
    if let Some(eff) = kv.get(":effect") {
        ctx.effect(eff, Timing::Instant, &mut schema)?;
    }
    Ok(schema)
}

/// Parses a domain file.
pub fn parse_domain(text: &str) -> Result<Domain, ParseError> {
    let (items, _) = define_body(text, "domain")?;
    let name = items[1].list().unwrap()[1]
        .atom()
        .ok_or_else(|| syntax(items[1].pos(), "domain name must be a symbol"))?
        .to_string();
    let mut domain = Domain {
        name,
        requirements: Vec::new(),
        types: BTreeMap::new(),
        predicates: Vec::new(),
        functions: Vec::new(),
        actions: Vec::new(),
    };
    let mut action_forms = Vec::new();
    for section in &items[2..] {
        let list = expect_list(section, "domain section")?;
        let head = section.head().unwrap_or_default();
        match head.as_str() {
            ":requirements" => {
                domain.requirements = list[1..]
                    .iter()
                    .map(|r| expect_atom(r, "requirement").map(str::to_string))
                    .collect::<Result<_, _>>()?;
            }
            ":types" => {
                let entries = typed_list(&list[1..], OBJECT_TYPE)?;
                for (n, parent, _) in &entries {
                    domain.types.insert(n.clone(), parent.clone());
                }
                for (_, parent, p) in &entries {
                    check_type(&domain, parent, *p)?;
                }
            }
            ":predicates" => domain.predicates = parse_signatures(&list[1..], &domain, "predicate")?,
            ":functions" => domain.functions = parse_signatures(&list[1..], &domain, "function")?,
            ":action" => action_forms.push((section, false)),
            ":durative-action" => action_forms.push((section, true)),
            ":constants" | ":constraints" | ":derived" => {
                return Err(unsupported(section.pos(), format!("`{head}` is not supported")))
            }
            _ => return Err(syntax(section.pos(), format!("unknown domain section `{head}`"))),
        }
    }
    for (form, durative) in action_forms {
        let schema = parse_action(form, durative, &domain)?;
        domain.actions.push(schema);
    }
    if domain.actions.is_empty() {
        return Err(semantic(items[0].pos(), "domain declares no actions"));
    }
    // an increase whose value is a function no effect ever writes is the
    // hook through which an external module supplies the number
    let written: HashSet<String> = domain.written_functions().into_iter().map(str::to_string).collect();
    for a in &mut domain.actions {
        a.cost_hooks = a
            .numeric
            .iter()
            .filter(|n| n.op == NumericOp::Increase)
            .filter_map(|n| match &n.value {
                NumericValue::Function(f) if !written.contains(&f.name) => Some(CostHook {
                    direct: n.target.clone(),
                    indirect: f.name.clone(),
                }),
                _ => None,
            })
            .collect();
    }
    Ok(domain)
}

fn ground_atom(e: &SExpr, domain: &Domain, problem_objects: &HashMap<String, String>) -> Result<Proposition, ParseError> {
    let items = expect_list(e, "atom")?;
    let name = expect_atom(items.first().ok_or_else(|| syntax(e.pos(), "empty atom"))?, "predicate")?;
    let sig = domain
        .predicate(name)
        .ok_or_else(|| semantic(e.pos(), format!("unknown predicate `{name}`")))?;
    if sig.params.len() != items.len() - 1 {
        return Err(semantic(
            e.pos(),
            format!("predicate `{name}` takes {} arguments, got {}", sig.params.len(), items.len() - 1),
        ));
    }
    let mut args = Vec::with_capacity(items.len() - 1);
    for (a, p) in items[1..].iter().zip(&sig.params) {
        let obj = expect_atom(a, "object")?;
        let ty = problem_objects
            .get(obj)
            .ok_or_else(|| semantic(a.pos(), format!("unknown object `{obj}`")))?;
        if !domain.is_subtype(ty, &p.ty) {
            return Err(semantic(
                a.pos(),
                format!("object `{obj}` of type `{ty}` does not fit parameter type `{}`", p.ty),
            ));
        }
        args.push(obj.to_string());
    }
    Ok(Proposition {
        predicate: name.to_string(),
        args,
    })
}

/// Parses a problem file and validates it against `domain`.
pub fn parse_problem(text: &str, domain: &Domain) -> Result<Problem, ParseError> {
    let (items, pos) = define_body(text, "problem")?;
    let name = items[1].list().unwrap()[1]
        .atom()
        .ok_or_else(|| syntax(items[1].pos(), "problem name must be a symbol"))?
        .to_string();
    let mut problem = Problem {
        name,
        domain: String::new(),
        objects: Vec::new(),
        init: Vec::new(),
        numeric_init: Vec::new(),
        goal: Vec::new(),
    };
    let mut objects: HashMap<String, String> = HashMap::new();
    let mut init_form = None;
    let mut goal_form = None;
    for section in &items[2..] {
        let list = expect_list(section, "problem section")?;
        match section.head().unwrap_or_default().as_str() {
            ":domain" => {
                let d = expect_atom(list.get(1).ok_or_else(|| syntax(section.pos(), "missing domain name"))?, "domain")?;
                if !d.eq_ignore_ascii_case(&domain.name) {
                    return Err(semantic(section.pos(), format!("problem is for domain `{d}`, not `{}`", domain.name)));
                }
                problem.domain = d.to_string();
            }
            ":objects" => {
                for (n, ty, p) in typed_list(&list[1..], OBJECT_TYPE)? {
                    check_type(domain, &ty, p)?;
                    if objects.insert(n.clone(), ty.clone()).is_some() {
                        return Err(semantic(p, format!("object `{n}` declared twice")));
                    }
                    problem.objects.push((n, ty));
                }
            }
            ":init" => init_form = Some(section),
            ":goal" => goal_form = Some(section),
            ":metric" => {}
            other => return Err(unsupported(section.pos(), format!("problem section `{other}` is not supported"))),
        }
    }
    if let Some(init) = init_form {
        for e in &init.list().unwrap()[1..] {
            if e.head().as_deref() == Some("=") {
                let l = e.list().unwrap();
                let (Some(f), Some(SExpr::Atom(v, vp))) = (l.get(1), l.get(2)) else {
                    return Err(syntax(e.pos(), "expected `(= (function args) value)`"));
                };
                let fl = expect_list(f, "function")?;
                let fname = expect_atom(fl.first().ok_or_else(|| syntax(f.pos(), "empty function"))?, "function")?;
                if domain.function(fname).is_none() {
                    return Err(semantic(f.pos(), format!("unknown function `{fname}`")));
                }
                let args = fl[1..]
                    .iter()
                    .map(|a| {
                        let o = expect_atom(a, "object")?;
                        if objects.contains_key(o) {
                            Ok(o.to_string())
                        } else {
                            Err(semantic(a.pos(), format!("unknown object `{o}`")))
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let value = v.parse().map_err(|_| syntax(*vp, format!("`{v}` is not a number")))?;
                problem.numeric_init.push((fname.to_string(), args, value));
            } else {
                let atom = ground_atom(e, domain, &objects)?;
                if !problem.init.contains(&atom) {
                    problem.init.push(atom);
                }
            }
        }
    }
    let goal = goal_form.ok_or_else(|| syntax(pos, "problem has no `:goal`"))?;
    let g = goal.list().unwrap().get(1);
    if let Some(g) = g {
        let conj: Vec<&SExpr> = match g.head().as_deref() {
            Some("and") => g.list().unwrap()[1..].iter().collect(),
            Some("not") | Some("or") | Some("forall") | Some("exists") | Some("imply") => {
                return Err(unsupported(g.pos(), "goals must be conjunctions of positive atoms"))
            }
            None if g.list().is_some_and(|l| l.is_empty()) => Vec::new(),
            _ => vec![g],
        };
        for e in conj {
            if matches!(e.head().as_deref(), Some("not") | Some("or")) {
                return Err(unsupported(e.pos(), "goals must be conjunctions of positive atoms"));
            }
            let atom = ground_atom(e, domain, &objects)?;
            if !problem.goal.contains(&atom) {
                problem.goal.push(atom);
            }
        }
    }
    Ok(problem)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROOMS: &str = include_str!("../../data/room_domain.pddl");

    fn rooms_problem(n: usize, goal: &str) -> String {
        let rooms: Vec<String> = (1..=n).map(|i| format!("L{i}")).collect();
        format!(
            "(define (problem corridor) (:domain rooms)
               (:objects {} - room r rp - robot)
               (:init (robot_in r L1) (robot_in rp L{n}))
               (:goal {goal}))",
            rooms.join(" ")
        )
    }

    #[test]
    fn room_domain_parses() {
        let d = parse_domain(ROOMS).unwrap();
        assert_eq!(d.actions.len(), 1);
        let a = &d.actions[0];
        assert_eq!(a.name, "goto_room");
        assert_eq!(a.parameters.len(), 6);
        assert!(a.durative);
        assert_eq!(a.duration, Some(100.0));
        assert_eq!(a.precondition.len(), 4);
        assert!(a.precondition.iter().all(|l| l.positive && l.timing == Timing::AtStart));
        assert_eq!(a.delete.len(), 2);
        assert_eq!(a.add.len(), 4);
        assert_eq!(a.triggered_args().map(<[Term]>::len), Some(6));
    }

    #[test]
    fn external_increase_is_a_cost_hook() {
        let d = parse_domain(ROOMS).unwrap();
        let a = &d.actions[0];
        assert!(a.has_external_cost());
        assert_eq!(a.cost_hooks.len(), 1);
        assert_eq!(a.cost_hooks[0].direct.name, "act-cost");
        assert_eq!(a.cost_hooks[0].indirect, "external");
    }

    #[test]
    fn empty_input_is_an_error() {
        assert_eq!(parse_domain("").unwrap_err().kind, ErrorKind::Syntax);
    }

    #[test]
    fn unbalanced_domain_reports_position() {
        let err = parse_domain("(define (domain d)\n  (:predicates (p)").unwrap_err();
        assert_eq!(err.kind, ErrorKind::Syntax);
        // the innermost unclosed list is reported
        assert_eq!((err.line, err.col), (2, 3));
    }

    #[test]
    fn undeclared_type_is_rejected() {
        let err = parse_domain(
            "(define (domain d) (:types room)\n (:predicates (in ?x - vehicle))\n (:action a :parameters () :effect (and)))",
        )
        .unwrap_err();
        assert_eq!(err.kind, ErrorKind::Semantic);
        assert_eq!(err.line, 2);
    }

    #[test]
    fn disjunction_is_unsupported() {
        let err = parse_domain(
            "(define (domain d) (:predicates (p) (q))
               (:action a :parameters () :precondition (or (p) (q)) :effect (p)))",
        )
        .unwrap_err();
        assert_eq!(err.kind, ErrorKind::Unsupported);
    }

    #[test]
    fn unknown_variable_and_arity_are_rejected() {
        let d = "(define (domain d) (:predicates (p ?x))
                   (:action a :parameters (?y) :precondition (p ?z) :effect (p ?y)))";
        assert_eq!(parse_domain(d).unwrap_err().kind, ErrorKind::Semantic);
        let d = "(define (domain d) (:predicates (p ?x))
                   (:action a :parameters (?y) :precondition (p ?y ?y) :effect (p ?y)))";
        assert_eq!(parse_domain(d).unwrap_err().kind, ErrorKind::Semantic);
    }

    #[test]
    fn corridor_problem_has_twelve_objects() {
        let d = parse_domain(ROOMS).unwrap();
        let p = parse_problem(&rooms_problem(10, "(and (visited L10) (visited L1))"), &d).unwrap();
        assert_eq!(p.objects.len(), 12);
        assert_eq!(p.objects_of(&d, "room").len(), 10);
        assert_eq!(p.goal.len(), 2);
        assert_eq!(p.goal[0], Proposition::new("visited", &["L10"]));
    }

    #[test]
    fn unknown_goal_object_is_semantic_error() {
        let d = parse_domain(ROOMS).unwrap();
        let err = parse_problem(&rooms_problem(10, "(visited L99)"), &d).unwrap_err();
        assert_eq!(err.kind, ErrorKind::Semantic);
        assert!(err.message.contains("L99"));
    }

    #[test]
    fn unknown_predicate_is_semantic_error() {
        let d = parse_domain(ROOMS).unwrap();
        let err = parse_problem(&rooms_problem(3, "(cleaned L1)"), &d).unwrap_err();
        assert_eq!(err.kind, ErrorKind::Semantic);
    }

    #[test]
    fn empty_goal_is_valid() {
        let d = parse_domain(ROOMS).unwrap();
        assert!(parse_problem(&rooms_problem(3, "(and)"), &d).unwrap().goal.is_empty());
    }
}
