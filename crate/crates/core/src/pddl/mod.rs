//! A STRIPS subset of PDDL: parsing of domains and problems (optionally
//! typed, positive preconditions only) and naive grounding.

mod ground;
pub mod sexpr;

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use crate::state::{Atom, ObjectId, PredId, PredicateOrigin, RelationalState, StateError, Vocabulary};
use sexpr::{Pos, SExpr};

pub use ground::{ground, successors, GroundAction, SuccessorGenerator};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PddlError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("unsupported feature `{feature}` at {line}:{col}")]
    UnsupportedFeature {
        feature: String,
        line: usize,
        col: usize,
    },
    #[error("arity mismatch for `{pred}` at {line}:{col}: expected {expected}, found {found}")]
    ArityMismatch {
        pred: String,
        expected: usize,
        found: usize,
        line: usize,
        col: usize,
    },
    #[error("unknown predicate `{name}` at {line}:{col}")]
    UnknownPredicate { name: String, line: usize, col: usize },
    #[error("unknown object `{name}` at {line}:{col}")]
    UnknownObject { name: String, line: usize, col: usize },
    #[error("unknown type `{name}` at {line}:{col}")]
    UnknownType { name: String, line: usize, col: usize },
    #[error("variable `{name}` at {line}:{col} is not an action parameter")]
    UnboundVariable { name: String, line: usize, col: usize },
    #[error(transparent)]
    State(#[from] StateError),
}

fn syntax(pos: Pos, msg: impl Into<String>) -> PddlError {
    PddlError::Syntax {
        line: pos.line,
        col: pos.col,
        msg: msg.into(),
    }
}

fn unsupported(pos: Pos, feature: &str) -> PddlError {
    PddlError::UnsupportedFeature {
        feature: feature.to_string(),
        line: pos.line,
        col: pos.col,
    }
}

const ROOT_TYPE: &str = "object";
const SUPPORTED_REQUIREMENTS: &[&str] = &[":strips", ":typing"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Term {
    Var(usize),
    Const(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AtomTemplate {
    pub pred: PredId,
    pub args: Vec<Term>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionSchema {
    pub name: String,
    /// `(variable name, type)` pairs.
    pub params: Vec<(String, String)>,
    pub precond: Vec<AtomTemplate>,
    pub add: Vec<AtomTemplate>,
    pub del: Vec<AtomTemplate>,
}

#[derive(Clone, Debug)]
pub struct DomainModel {
    pub name: String,
    /// Type name to parent type. The root `object` is implicit.
    pub types: HashMap<String, String>,
    pub constants: Vec<(String, String)>,
    /// Domain predicates followed by their goal copies and `Obj`.
    pub vocab: Arc<Vocabulary>,
    pub schemas: Vec<ActionSchema>,
}

impl DomainModel {
    pub fn is_subtype(&self, ty: &str, ancestor: &str) -> bool {
        if ancestor == ROOT_TYPE {
            return true;
        }
        let mut cur = ty;
        for _ in 0..=self.types.len() {
            if cur == ancestor {
                return true;
            }
            match self.types.get(cur) {
                Some(parent) => cur = parent,
                None => return false,
            }
        }
        false
    }

    pub fn num_domain_predicates(&self) -> usize {
        self.vocab.domain_predicates().count()
    }
}

/// A parsed planning problem: the initial relational state plus object types.
#[derive(Clone, Debug)]
pub struct Problem {
    pub name: String,
    pub domain: Arc<DomainModel>,
    pub object_types: Vec<String>,
    pub state: RelationalState,
}

fn typed_list(items: &[SExpr]) -> Result<Vec<(String, String, Pos)>, PddlError> {
    let mut out = Vec::new();
    let mut pending: Vec<(String, Pos)> = Vec::new();
    let mut i = 0;
    while i < items.len() {
        let item = &items[i];
        let sym = item
            .as_symbol()
            .ok_or_else(|| match item.head() {
                Some("either") => unsupported(item.pos(), "either"),
                _ => syntax(item.pos(), "expected a name in typed list"),
            })?;
        if sym == "-" {
            let ty = items.get(i + 1).ok_or_else(|| syntax(item.pos(), "missing type after `-`"))?;
            let ty = match ty {
                SExpr::Symbol(t, _) => t.clone(),
                SExpr::List(_, p) => return Err(unsupported(*p, "either")),
            };
            for (name, pos) in pending.drain(..) {
                out.push((name, ty.clone(), pos));
            }
            i += 2;
        } else {
            pending.push((sym.to_string(), item.pos()));
            i += 1;
        }
    }
    for (name, pos) in pending {
        out.push((name, ROOT_TYPE.to_string(), pos));
    }
    Ok(out)
}

fn expect_define<'a>(exprs: &'a [SExpr], kind: &str) -> Result<(&'a [SExpr], String), PddlError> {
    let top = match exprs {
        [one] => one,
        [] => return Err(syntax(Pos { line: 1, col: 1 }, "empty input")),
        [_, second, ..] => return Err(syntax(second.pos(), "trailing content after definition")),
    };
    let items = top
        .as_list()
        .ok_or_else(|| syntax(top.pos(), "expected `(define ...)`"))?;
    if items.first().and_then(SExpr::as_symbol) != Some("define") {
        return Err(syntax(top.pos(), "expected `define`"));
    }
    let header = items.get(1).ok_or_else(|| syntax(top.pos(), "missing header"))?;
    let name = match header.as_list() {
        Some([SExpr::Symbol(k, _), SExpr::Symbol(n, _)]) if k == kind => n.clone(),
        _ => return Err(syntax(header.pos(), format!("expected `({kind} <name>)`"))),
    };
    Ok((&items[2..], name))
}

pub fn parse_domain(text: &str) -> Result<DomainModel, PddlError> {
    let exprs = sexpr::parse(text)?;
    let (sections, name) = expect_define(&exprs, "domain")?;
    let mut types: HashMap<String, String> = HashMap::new();
    let mut constants = Vec::new();
    let mut vocab = Vocabulary::new();
    let mut schema_exprs = Vec::new();

    for section in sections {
        let head = section
            .head()
            .ok_or_else(|| syntax(section.pos(), "expected a section"))?;
        let body = &section.as_list().unwrap()[1..];
        match head {
            ":requirements" => {
                for r in body {
                    let r_name = r.as_symbol().ok_or_else(|| syntax(r.pos(), "bad requirement"))?;
                    if !SUPPORTED_REQUIREMENTS.contains(&r_name) {
                        return Err(unsupported(r.pos(), r_name));
                    }
                }
            }
            ":types" => {
                for (t, parent, _) in typed_list(body)? {
                    if t != ROOT_TYPE {
                        types.insert(t, parent);
                    }
                }
            }
            ":constants" => {
                for (c, ty, _) in typed_list(body)? {
                    constants.push((c, ty));
                }
            }
            ":predicates" => {
                for p in body {
                    let items = p
                        .as_list()
                        .ok_or_else(|| syntax(p.pos(), "expected predicate declaration"))?;
                    let pname = items
                        .first()
                        .and_then(SExpr::as_symbol)
                        .ok_or_else(|| syntax(p.pos(), "missing predicate name"))?;
                    let params = typed_list(&items[1..])?;
                    vocab
                        .add(pname, params.len(), PredicateOrigin::Domain)
                        .map_err(|_| PddlError::ArityMismatch {
                            pred: pname.to_string(),
                            expected: vocab.get(pname).map(|id| vocab.arity(id)).unwrap_or(0),
                            found: params.len(),
                            line: p.pos().line,
                            col: p.pos().col,
                        })?;
                }
            }
            ":action" => schema_exprs.push(section),
            other => return Err(unsupported(section.pos(), other)),
        }
    }

    let check_type = |ty: &str, pos: Pos| -> Result<(), PddlError> {
        if ty == ROOT_TYPE || types.contains_key(ty) {
            Ok(())
        } else {
            Err(PddlError::UnknownType {
                name: ty.to_string(),
                line: pos.line,
                col: pos.col,
            })
        }
    };
    for parent in types.values() {
        check_type(parent, Pos { line: 0, col: 0 })?;
    }
    let mut schemas = Vec::new();
    for s in schema_exprs {
        schemas.push(parse_action(s, &vocab, &constants, &check_type)?);
    }
    let vocab = vocab.with_extensions()?;
    Ok(DomainModel {
        name,
        types,
        constants,
        vocab: Arc::new(vocab),
        schemas,
    })
}

fn parse_action(
    section: &SExpr,
    vocab: &Vocabulary,
    constants: &[(String, String)],
    check_type: &dyn Fn(&str, Pos) -> Result<(), PddlError>,
) -> Result<ActionSchema, PddlError> {
    let items = section.as_list().unwrap();
    let name = items
        .get(1)
        .and_then(SExpr::as_symbol)
        .ok_or_else(|| syntax(section.pos(), "missing action name"))?
        .to_string();
    let mut params = Vec::new();
    let mut precond = Vec::new();
    let mut add = Vec::new();
    let mut del = Vec::new();
    let mut i = 2;
    while i < items.len() {
        let key = items[i]
            .as_symbol()
            .ok_or_else(|| syntax(items[i].pos(), "expected action keyword"))?;
        let value = items
            .get(i + 1)
            .ok_or_else(|| syntax(items[i].pos(), format!("missing value for `{key}`")))?;
        match key {
            ":parameters" => {
                let list = value
                    .as_list()
                    .ok_or_else(|| syntax(value.pos(), "expected parameter list"))?;
                for (v, ty, pos) in typed_list(list)? {
                    if !v.starts_with('?') {
                        return Err(syntax(pos, format!("parameter `{v}` must start with `?`")));
                    }
                    check_type(&ty, pos)?;
                    params.push((v, ty));
                }
            }
            ":precondition" => {
                for lit in conjuncts(value)? {
                    match lit.head() {
                        Some("not") => return Err(unsupported(lit.pos(), "negative-preconditions")),
                        Some(op @ ("or" | "imply" | "exists" | "forall" | "=")) => {
                            return Err(unsupported(lit.pos(), op))
                        }
                        _ => precond.push(template(lit, vocab, &params, constants)?),
                    }
                }
            }
            ":effect" => {
                for lit in conjuncts(value)? {
                    match lit.head() {
                        Some("not") => {
                            let inner = lit
                                .as_list()
                                .and_then(|l| l.get(1))
                                .ok_or_else(|| syntax(lit.pos(), "empty `not`"))?;
                            del.push(template(inner, vocab, &params, constants)?);
                        }
                        Some(op @ ("when" | "forall" | "increase" | "decrease" | "assign")) => {
                            let feature = if op == "when" { "conditional-effects" } else { op };
                            return Err(unsupported(lit.pos(), feature));
                        }
                        _ => add.push(template(lit, vocab, &params, constants)?),
                    }
                }
            }
            other => return Err(unsupported(items[i].pos(), other)),
        }
        i += 2;
    }
    Ok(ActionSchema {
        name,
        params,
        precond,
        add,
        del,
    })
}

/// Flattens `(and a b ...)` into its conjuncts; a bare literal is one conjunct.
fn conjuncts(e: &SExpr) -> Result<Vec<&SExpr>, PddlError> {
    match e {
        SExpr::List(items, _) if items.is_empty() => Ok(Vec::new()),
        SExpr::List(items, _) if e.head() == Some("and") => {
            let mut out = Vec::new();
            for item in &items[1..] {
                out.extend(conjuncts(item)?);
            }
            Ok(out)
        }
        SExpr::List(..) => Ok(vec![e]),
        SExpr::Symbol(_, p) => Err(syntax(*p, "expected a literal")),
    }
}

fn lookup_pred(vocab: &Vocabulary, e: &SExpr, args: usize) -> Result<PredId, PddlError> {
    let name = e.head().ok_or_else(|| syntax(e.pos(), "expected an atom"))?;
    let id = vocab.get(name).ok_or_else(|| PddlError::UnknownPredicate {
        name: name.to_string(),
        line: e.pos().line,
        col: e.pos().col,
    })?;
    if vocab.arity(id) != args {
        return Err(PddlError::ArityMismatch {
            pred: name.to_string(),
            expected: vocab.arity(id),
            found: args,
            line: e.pos().line,
            col: e.pos().col,
        });
    }
    Ok(id)
}

fn template(
    e: &SExpr,
    vocab: &Vocabulary,
    params: &[(String, String)],
    constants: &[(String, String)],
) -> Result<AtomTemplate, PddlError> {
    let items = e.as_list().ok_or_else(|| syntax(e.pos(), "expected an atom"))?;
    let pred = lookup_pred(vocab, e, items.len().saturating_sub(1))?;
    let mut args = Vec::new();
    for a in &items[1..] {
        let s = a.as_symbol().ok_or_else(|| syntax(a.pos(), "expected a term"))?;
        if s.starts_with('?') {
            let idx = params
                .iter()
                .position(|(v, _)| v == s)
                .ok_or_else(|| PddlError::UnboundVariable {
                    name: s.to_string(),
                    line: a.pos().line,
                    col: a.pos().col,
                })?;
            args.push(Term::Var(idx));
        } else if constants.iter().any(|(c, _)| c == s) {
            args.push(Term::Const(s.to_string()));
        } else {
            return Err(PddlError::UnknownObject {
                name: s.to_string(),
                line: a.pos().line,
                col: a.pos().col,
            });
        }
    }
    Ok(AtomTemplate { pred, args })
}

fn ground_atom(
    e: &SExpr,
    vocab: &Vocabulary,
    objects: &HashMap<String, ObjectId>,
) -> Result<Atom, PddlError> {
    let items = e.as_list().ok_or_else(|| syntax(e.pos(), "expected an atom"))?;
    match e.head() {
        Some("not") => return Err(unsupported(e.pos(), "negative literals")),
        Some("=") => return Err(unsupported(e.pos(), "equality")),
        _ => {}
    }
    let pred = lookup_pred(vocab, e, items.len().saturating_sub(1))?;
    let mut args = Vec::new();
    for a in &items[1..] {
        let s = a.as_symbol().ok_or_else(|| syntax(a.pos(), "expected an object"))?;
        let id = objects.get(s).ok_or_else(|| PddlError::UnknownObject {
            name: s.to_string(),
            line: a.pos().line,
            col: a.pos().col,
        })?;
        args.push(*id);
    }
    Ok(Atom::new(pred, args))
}

pub fn parse_problem(text: &str, domain: &Arc<DomainModel>) -> Result<Problem, PddlError> {
    let exprs = sexpr::parse(text)?;
    let (sections, name) = expect_define(&exprs, "problem")?;
    let mut table = ObjectTable::default();
    for (c, t) in &domain.constants {
        table.insert(c, t);
    }
    let mut init = Vec::new();
    let mut goal = Vec::new();
    let mut init_exprs = None;
    let mut goal_expr = None;

    for section in sections {
        let head = section
            .head()
            .ok_or_else(|| syntax(section.pos(), "expected a section"))?;
        let body = &section.as_list().unwrap()[1..];
        match head {
            ":domain" => {}
            ":objects" => {
                for (o, t, pos) in typed_list(body)? {
                    if t != ROOT_TYPE && !domain.types.contains_key(&t) {
                        return Err(PddlError::UnknownType {
                            name: t,
                            line: pos.line,
                            col: pos.col,
                        });
                    }
                    table.insert(&o, &t);
                }
            }
            ":init" => init_exprs = Some(body),
            ":goal" => {
                goal_expr = Some(
                    body.first()
                        .ok_or_else(|| syntax(section.pos(), "empty goal"))?,
                )
            }
            other => return Err(unsupported(section.pos(), other)),
        }
    }
    for e in init_exprs.unwrap_or(&[]) {
        init.push(ground_atom(e, &domain.vocab, &table.index)?);
    }
    if let Some(g) = goal_expr {
        for lit in conjuncts(g)? {
            if let Some(op @ ("or" | "exists" | "forall" | "imply")) = lit.head() {
                return Err(unsupported(lit.pos(), op));
            }
            goal.push(ground_atom(lit, &domain.vocab, &table.index)?);
        }
    }
    let state = RelationalState::new(Arc::clone(&domain.vocab), table.names, init, goal)?;
    Ok(Problem {
        name,
        domain: Arc::clone(domain),
        object_types: table.types,
        state,
    })
}

#[derive(Default)]
struct ObjectTable {
    names: Vec<String>,
    types: Vec<String>,
    index: HashMap<String, ObjectId>,
}

impl ObjectTable {
    fn insert(&mut self, name: &str, ty: &str) {
        if !self.index.contains_key(name) {
            self.index.insert(name.to_string(), self.names.len() as ObjectId);
            self.names.push(name.to_string());
            self.types.push(ty.to_string());
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const GRIPPER_DOMAIN: &str = "
(define (domain gripper-strips)
  (:requirements :strips)
  (:predicates (room ?r) (ball ?b) (gripper ?g) (at-robby ?r)
               (at ?b ?r) (free ?g) (carry ?o ?g))
  (:action move
    :parameters (?from ?to)
    :precondition (and (room ?from) (room ?to) (at-robby ?from))
    :effect (and (at-robby ?to) (not (at-robby ?from))))
  (:action pick
    :parameters (?obj ?room ?gripper)
    :precondition (and (ball ?obj) (room ?room) (gripper ?gripper)
                       (at ?obj ?room) (at-robby ?room) (free ?gripper))
    :effect (and (carry ?obj ?gripper) (not (at ?obj ?room)) (not (free ?gripper))))
  (:action drop
    :parameters (?obj ?room ?gripper)
    :precondition (and (ball ?obj) (room ?room) (gripper ?gripper)
                       (carry ?obj ?gripper) (at-robby ?room))
    :effect (and (at ?obj ?room) (free ?gripper) (not (carry ?obj ?gripper)))))";

    pub(crate) const GRIPPER_PROBLEM: &str = "
(define (problem gripper-2)
  (:domain gripper-strips)
  (:objects rooma roomb ball1 ball2 left right)
  (:init (room rooma) (room roomb) (ball ball1) (ball ball2)
         (gripper left) (gripper right) (at-robby rooma)
         (free left) (free right) (at ball1 rooma) (at ball2 rooma))
  (:goal (and (at ball1 roomb) (at ball2 roomb))))";

    #[test]
    fn gripper_domain_schemas_counted_by_hand() {
        let d = parse_domain(GRIPPER_DOMAIN).unwrap();
        let names: Vec<&str> = d.schemas.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["move", "pick", "drop"]);
        assert_eq!(d.num_domain_predicates(), 7);
        let pick = &d.schemas[1];
        assert_eq!(pick.precond.len(), 6);
        assert_eq!(pick.add.len(), 1);
        assert_eq!(pick.del.len(), 2);
        assert!(d.vocab.get("at_g").is_some());
        assert!(d.vocab.get("Obj").is_some());
    }

    #[test]
    fn empty_predicate_list_is_valid() {
        let d = parse_domain("(define (domain empty) (:predicates))").unwrap();
        assert_eq!(d.num_domain_predicates(), 0);
        assert!(d.schemas.is_empty());
    }

    #[test]
    fn functions_section_rejected() {
        let err = parse_domain("(define (domain f) (:predicates (p)) (:functions (cost)))").unwrap_err();
        assert!(matches!(err, PddlError::UnsupportedFeature { ref feature, .. } if feature == ":functions"));
    }

    #[test]
    fn unsupported_requirements_and_negative_preconditions() {
        let err = parse_domain("(define (domain f) (:requirements :strips :conditional-effects))").unwrap_err();
        assert!(matches!(err, PddlError::UnsupportedFeature { .. }));
        let err = parse_domain(
            "(define (domain f) (:predicates (p ?x))
              (:action a :parameters (?x) :precondition (not (p ?x)) :effect (p ?x)))",
        )
        .unwrap_err();
        assert!(matches!(err, PddlError::UnsupportedFeature { ref feature, .. } if feature == "negative-preconditions"));
    }

    #[test]
    fn arity_mismatch_in_schema() {
        let err = parse_domain(
            "(define (domain f) (:predicates (p ?x))
              (:action a :parameters (?x) :precondition (p ?x ?x) :effect (p ?x)))",
        )
        .unwrap_err();
        assert!(matches!(err, PddlError::ArityMismatch { expected: 1, found: 2, line: 2, .. }));
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_domain("(define (domain f)\n  (:predicates (p ?x)").unwrap_err();
        assert!(matches!(err, PddlError::Syntax { line: 2, col: 3, .. }));
    }

    #[test]
    fn two_ball_gripper_problem() {
        let d = Arc::new(parse_domain(GRIPPER_DOMAIN).unwrap());
        let p = parse_problem(GRIPPER_PROBLEM, &d).unwrap();
        assert_eq!(p.state.num_objects(), 6);
        assert_eq!(p.state.atoms().len(), 11);
        assert_eq!(p.state.goal().len(), 2);
        assert!(!p.state.is_goal());
    }

    #[test]
    fn goal_already_true() {
        let d = Arc::new(parse_domain(GRIPPER_DOMAIN).unwrap());
        let p = parse_problem(
            "(define (problem g) (:domain gripper-strips) (:objects a) (:init (room a)) (:goal (room a)))",
            &d,
        )
        .unwrap();
        assert!(p.state.is_goal());
    }

    #[test]
    fn undeclared_goal_object() {
        let d = Arc::new(parse_domain(GRIPPER_DOMAIN).unwrap());
        let err = parse_problem(
            "(define (problem g) (:domain gripper-strips) (:objects a) (:init (room a)) (:goal (room b)))",
            &d,
        )
        .unwrap_err();
        assert!(matches!(err, PddlError::UnknownObject { ref name, .. } if name == "b"));
        let err = parse_problem(
            "(define (problem g) (:domain gripper-strips) (:objects a) (:init (hall a)) (:goal (room a)))",
            &d,
        )
        .unwrap_err();
        assert!(matches!(err, PddlError::UnknownPredicate { .. }));
    }

    #[test]
    fn typed_objects_and_subtypes() {
        let d = parse_domain(
            "(define (domain t) (:requirements :strips :typing)
               (:types vehicle place - object truck - vehicle)
               (:predicates (at ?v - vehicle ?p - place)))",
        )
        .unwrap();
        assert!(d.is_subtype("truck", "vehicle"));
        assert!(d.is_subtype("truck", "object"));
        assert!(!d.is_subtype("place", "vehicle"));
    }
}
