//! Grounding of action schemas into STRIPS actions over interned atoms.
//!
//! Predicates that no action adds or deletes are static: their facts live
//! in [`Task::static_facts`] and are checked while grounding, so a
//! [`TaskState`] only holds dynamic atoms.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use rustc_hash::{FxHashMap, FxHashSet};

use thiserror::Error;

use super::pddl::{AtomTemplate, Domain, Problem, Proposition, Term};

pub type AtomId = u32;

/// Set of dynamic atoms, kept sorted and duplicate free.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct TaskState(Vec<AtomId>);

impl TaskState {
    pub fn from_atoms(mut atoms: Vec<AtomId>) -> Self {
        atoms.sort_unstable();
        atoms.dedup();
        TaskState(atoms)
    }

    pub fn contains(&self, a: AtomId) -> bool {
        self.0.binary_search(&a).is_ok()
    }

    pub fn atoms(&self) -> &[AtomId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundAction {
    pub schema: Arc<str>,
    pub args: Vec<Arc<str>>,
    pub pre_pos: Vec<AtomId>,
    pub pre_neg: Vec<AtomId>,
    pub add: Vec<AtomId>,
    pub delete: Vec<AtomId>,
    /// Ground arguments of the `triggered` function, if the schema sets it.
    pub triggered: Option<Vec<Arc<str>>>,
    /// Whether the action's cost is supplied by the external module.
    pub external_cost: bool,
}

impl GroundAction {
    /// The triggered tuple read as consecutive (robot, from, to) triples.
    pub fn motions(&self) -> Vec<(&str, &str, &str)> {
        self.triggered
            .as_deref()
            .unwrap_or_default()
            .chunks_exact(3)
            .map(|c| (&*c[0], &*c[1], &*c[2]))
            .collect()
    }

    /// The ground arguments as string slices.
    pub fn arg_names(&self) -> Vec<&str> {
        self.args.iter().map(|a| &**a).collect()
    }
}

impl fmt::Display for GroundAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.schema)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ApplyError {
    #[error("action {action} is not applicable in the given state")]
    Inapplicable { action: String },
}

/// A grounded planning task.
#[derive(Debug, Clone)]
pub struct Task {
    pub atoms: Vec<Proposition>,
    atom_index: HashMap<Proposition, AtomId>,
    pub static_predicates: HashSet<String>,
    pub static_facts: HashSet<Proposition>,
    pub actions: Vec<GroundAction>,
    pub initial: TaskState,
    /// Dynamic goal atoms; `None` when a static goal fact is false.
    pub goal: Option<Vec<AtomId>>,
    /// Type-consistent parameter bindings before static pruning.
    pub raw_bindings: u64,
    /// Actions indexed by their first positive precondition atom; actions
    /// without one are listed under `unconditioned`.
    by_first_pre: HashMap<AtomId, Vec<usize>>,
    unconditioned: Vec<usize>,
}

impl Task {
    pub fn atom_id(&self, p: &Proposition) -> Option<AtomId> {
        self.atom_index.get(p).copied()
    }

    pub fn atom(&self, id: AtomId) -> &Proposition {
        &self.atoms[id as usize]
    }

    /// Whether `p` holds in `s`, consulting static facts for static predicates.
    pub fn holds(&self, s: &TaskState, p: &Proposition) -> bool {
        if self.static_predicates.contains(&p.predicate) {
            self.static_facts.contains(p)
        } else {
            self.atom_id(p).is_some_and(|id| s.contains(id))
        }
    }

    pub fn propositions<'a>(&'a self, s: &'a TaskState) -> impl Iterator<Item = &'a Proposition> + 'a {
        s.atoms().iter().map(|&a| self.atom(a))
    }

    pub fn is_goal(&self, s: &TaskState) -> bool {
        self.goal
            .as_ref()
            .is_some_and(|g| g.iter().all(|&a| s.contains(a)))
    }

    pub fn applicable(&self, s: &TaskState, a: &GroundAction) -> bool {
        a.pre_pos.iter().all(|&p| s.contains(p)) && !a.pre_neg.iter().any(|&p| s.contains(p))
    }

    /// Delete-then-add successor of `s` under `a`.
    pub fn apply(&self, s: &TaskState, a: &GroundAction) -> Result<TaskState, ApplyError> {
        if !self.applicable(s, a) {
            return Err(ApplyError::Inapplicable {
                action: a.to_string(),
            });
        }
        Ok(apply_unchecked(s, a))
    }

    /// Indices of the actions applicable in `s`, in ascending order.
    pub fn applicable_actions(&self, s: &TaskState) -> Vec<usize> {
        let mut out: Vec<usize> = s
            .atoms()
            .iter()
            .filter_map(|a| self.by_first_pre.get(a))
            .flatten()
            .chain(&self.unconditioned)
            .copied()
            .filter(|&i| self.applicable(s, &self.actions[i]))
            .collect();
        out.sort_unstable();
        out
    }
}

pub(crate) fn apply_unchecked(s: &TaskState, a: &GroundAction) -> TaskState {
    let mut atoms: Vec<AtomId> = s
        .atoms()
        .iter()
        .copied()
        .filter(|x| !a.delete.contains(x))
        .collect();
    atoms.extend_from_slice(&a.add);
    TaskState::from_atoms(atoms)
}

/// Argument of a compiled template: a schema parameter or a fixed symbol.
#[derive(Clone, Copy)]
enum Slot {
    Param(usize),
    Sym(u32),
}

/// An atom template with its predicate and constants resolved to symbols.
struct Compiled<'a> {
    template: &'a AtomTemplate,
    key: Vec<Slot>,
}

/// A schema with its templates compiled once before enumeration.
struct CompiledSchema<'a> {
    name: Arc<str>,
    pre: Vec<(Compiled<'a>, bool)>,
    add: Vec<Compiled<'a>>,
    delete: Vec<Compiled<'a>>,
    triggered: Option<Vec<Slot>>,
    external_cost: bool,
}

/// Interns atoms. Lookups go through integer keys (predicate symbol then
/// argument symbols) so that grounding only builds a [`Proposition`] the
/// first time an atom is seen.
struct Interner {
    atoms: Vec<Proposition>,
    index: HashMap<Proposition, AtomId>,
    symbols: HashMap<String, u32>,
    names: Vec<Arc<str>>,
    keyed: FxHashMap<Vec<u32>, AtomId>,
    scratch: Vec<u32>,
}

impl Interner {
    fn new() -> Self {
        Interner {
            atoms: Vec::new(),
            index: HashMap::new(),
            symbols: HashMap::new(),
            names: Vec::new(),
            keyed: FxHashMap::default(),
            scratch: Vec::new(),
        }
    }

    fn symbol(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.symbols.get(name) {
            return id;
        }
        let id = self.symbols.len() as u32;
        self.symbols.insert(name.to_string(), id);
        self.names.push(Arc::from(name));
        id
    }

    fn slot(&mut self, t: &Term) -> Slot {
        match t {
            Term::Param(i) => Slot::Param(*i),
            Term::Const(c) => Slot::Sym(self.symbol(c)),
        }
    }

    fn compile<'a>(&mut self, t: &'a AtomTemplate) -> Compiled<'a> {
        let mut key = vec![Slot::Sym(self.symbol(&t.predicate))];
        key.extend(t.args.iter().map(|a| self.slot(a)));
        Compiled { template: t, key }
    }

    fn proposition_key(&mut self, p: &Proposition) -> Vec<u32> {
        let mut key = vec![self.symbol(&p.predicate)];
        for a in &p.args {
            key.push(self.symbol(a));
        }
        key
    }

    /// Writes the key of `t` under the binding into the scratch buffer.
    fn fill_key(&mut self, t: &Compiled, binding: &[u32]) {
        self.scratch.clear();
        self.scratch.extend(t.key.iter().map(|s| match *s {
            Slot::Param(i) => binding[i],
            Slot::Sym(id) => id,
        }));
    }

    fn name(&self, slot: Slot, binding: &[u32]) -> Arc<str> {
        let id = match slot {
            Slot::Param(i) => binding[i],
            Slot::Sym(id) => id,
        };
        self.names[id as usize].clone()
    }

    fn intern(&mut self, p: Proposition) -> AtomId {
        if let Some(&id) = self.index.get(&p) {
            return id;
        }
        let key = self.proposition_key(&p);
        let id = self.atoms.len() as AtomId;
        self.atoms.push(p.clone());
        self.index.insert(p, id);
        self.keyed.insert(key, id);
        id
    }

    fn intern_compiled(&mut self, t: &Compiled, binding: &[u32]) -> AtomId {
        self.fill_key(t, binding);
        if let Some(&id) = self.keyed.get(self.scratch.as_slice()) {
            return id;
        }
        let names: Vec<&str> = binding.iter().map(|&i| &*self.names[i as usize]).collect();
        let p = instantiate(t.template, &names);
        self.intern(p)
    }

    /// Whether the static fact `t` under the binding is in `facts`.
    fn holds_static(&mut self, facts: &FxHashSet<Vec<u32>>, t: &Compiled, binding: &[u32]) -> bool {
        self.fill_key(t, binding);
        facts.contains(self.scratch.as_slice())
    }
}

fn instantiate(t: &AtomTemplate, binding: &[&str]) -> Proposition {
    Proposition {
        predicate: t.predicate.clone(),
        args: t
            .args
            .iter()
            .map(|a| match a {
                Term::Param(i) => binding[*i].to_string(),
                Term::Const(c) => c.clone(),
            })
            .collect(),
    }
}

fn max_param(t: &AtomTemplate) -> Option<usize> {
    t.args
        .iter()
        .filter_map(|a| match a {
            Term::Param(i) => Some(*i),
            Term::Const(_) => None,
        })
        .max()
}

/// Grounds every schema of `domain` over the objects of `problem`.
///
/// Bindings are enumerated parameter by parameter and cut as soon as a
/// static precondition whose arguments are all bound is violated.
pub fn ground(domain: &Domain, problem: &Problem) -> Task {
    let mut fluent: HashSet<String> = HashSet::new();
    for a in &domain.actions {
        for (t, _) in a.add.iter().chain(&a.delete) {
            fluent.insert(t.predicate.clone());
        }
    }
    let static_predicates: HashSet<String> = domain
        .predicates
        .iter()
        .map(|p| p.name.clone())
        .filter(|p| !fluent.contains(p))
        .collect();
    let static_facts: HashSet<Proposition> = problem
        .init
        .iter()
        .filter(|p| static_predicates.contains(&p.predicate))
        .cloned()
        .collect();

    let mut interner = Interner::new();
    let static_keys: FxHashSet<Vec<u32>> = static_facts
        .iter()
        .map(|p| interner.proposition_key(p))
        .collect();
    let initial = TaskState::from_atoms(
        problem
            .init
            .iter()
            .filter(|p| !static_predicates.contains(&p.predicate))
            .map(|p| interner.intern(p.clone()))
            .collect(),
    );

    let mut actions = Vec::new();
    let mut raw_bindings: u64 = 0;
    for schema in &domain.actions {
        let domains: Vec<Vec<&str>> = schema
            .parameters
            .iter()
            .map(|p| problem.objects_of(domain, &p.ty))
            .collect();
        raw_bindings += domains.iter().map(|d| d.len() as u64).product::<u64>();
        if domains.iter().any(Vec::is_empty) {
            continue;
        }
        let domain_ids: Vec<Vec<u32>> = domains
            .iter()
            .map(|d| d.iter().map(|o| interner.symbol(o)).collect())
            .collect();
        // static literals become checkable once their last parameter is bound
        let mut checks: Vec<Vec<(Compiled, bool)>> = (0..domains.len()).map(|_| Vec::new()).collect();
        let mut unconditional_ok = true;
        let mut pre = Vec::new();
        for lit in &schema.precondition {
            let c = interner.compile(&lit.atom);
            if !static_predicates.contains(&lit.atom.predicate) {
                pre.push((c, lit.positive));
                continue;
            }
            match max_param(&lit.atom) {
                Some(i) => checks[i].push((c, lit.positive)),
                None => {
                    let holds = interner.holds_static(&static_keys, &c, &[]);
                    unconditional_ok &= holds == lit.positive;
                }
            }
        }
        if !unconditional_ok {
            continue;
        }
        let compiled = CompiledSchema {
            name: Arc::from(schema.name.as_str()),
            pre,
            add: schema.add.iter().map(|(t, _)| interner.compile(t)).collect(),
            delete: schema.delete.iter().map(|(t, _)| interner.compile(t)).collect(),
            triggered: schema
                .triggered_args()
                .map(|args| args.iter().map(|a| interner.slot(a)).collect()),
            external_cost: schema.has_external_cost(),
        };

        let n = domains.len();
        if n == 0 {
            actions.push(ground_one(&compiled, &[], &mut interner));
            continue;
        }
        let mut choice = vec![0usize; n];
        let mut binding: Vec<u32> = vec![0; n];
        let mut depth = 0usize;
        // iterative depth-first enumeration of bindings
        loop {
            if choice[depth] == domains[depth].len() {
                if depth == 0 {
                    break;
                }
                choice[depth] = 0;
                depth -= 1;
                choice[depth] += 1;
                continue;
            }
            binding[depth] = domain_ids[depth][choice[depth]];
            let ok = checks[depth]
                .iter()
                .all(|(t, positive)| interner.holds_static(&static_keys, t, &binding) == *positive);
            if !ok {
                choice[depth] += 1;
                continue;
            }
            if depth + 1 < n {
                depth += 1;
                continue;
            }
            actions.push(ground_one(&compiled, &binding, &mut interner));
            choice[depth] += 1;
        }
    }

    let goal = problem
        .goal
        .iter()
        .try_fold(Vec::new(), |mut acc, p| {
            if static_predicates.contains(&p.predicate) {
                static_facts.contains(p).then_some(acc)
            } else {
                acc.push(interner.intern(p.clone()));
                Some(acc)
            }
        });

    let mut by_first_pre: HashMap<AtomId, Vec<usize>> = HashMap::new();
    let mut unconditioned = Vec::new();
    for (i, a) in actions.iter().enumerate() {
        match a.pre_pos.first() {
            Some(&p) => by_first_pre.entry(p).or_default().push(i),
            None => unconditioned.push(i),
        }
    }

    Task {
        atoms: interner.atoms,
        atom_index: interner.index,
        static_predicates,
        static_facts,
        actions,
        initial,
        goal,
        raw_bindings,
        by_first_pre,
        unconditioned,
    }
}

fn ground_one(schema: &CompiledSchema, binding: &[u32], interner: &mut Interner) -> GroundAction {
    let mut pre_pos = Vec::new();
    let mut pre_neg = Vec::new();
    for (t, positive) in &schema.pre {
        let id = interner.intern_compiled(t, binding);
        let target = if *positive { &mut pre_pos } else { &mut pre_neg };
        if !target.contains(&id) {
            target.push(id);
        }
    }
    let mut add = Vec::new();
    for t in &schema.add {
        let id = interner.intern_compiled(t, binding);
        if !add.contains(&id) {
            add.push(id);
        }
    }
    let mut delete = Vec::new();
    for t in &schema.delete {
        let id = interner.intern_compiled(t, binding);
        if !delete.contains(&id) && !add.contains(&id) {
            delete.push(id);
        }
    }
    let triggered = schema
        .triggered
        .as_ref()
        .map(|slots| slots.iter().map(|&s| interner.name(s, binding)).collect());
    GroundAction {
        schema: schema.name.clone(),
        args: binding.iter().map(|&i| interner.names[i as usize].clone()).collect(),
        pre_pos,
        pre_neg,
        add,
        delete,
        triggered,
        external_cost: schema.external_cost,
    }
}
