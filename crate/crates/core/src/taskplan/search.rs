//! Cost-optimal forward search with lazily evaluated action costs.
//!
//! Search nodes are pairs of a task state and an oracle-defined context
//! (for the motion oracle: the roadmap node each robot is pinned to), since
//! the cost of later actions depends on where earlier ones left the robots.
//!
//! The queue holds two kinds of entries. A state entry is expanded as usual;
//! expanding it pushes one deferred entry per applicable action, keyed by
//! `g + lower_bound(action) + h(successor)`. The oracle is only consulted
//! when a deferred entry reaches the front of the queue. With an admissible
//! lower bound and a consistent heuristic this is A* with the same
//! optimality guarantee as uniform-cost search (both default to zero, in
//! which case it *is* uniform-cost search), but actions whose optimistic
//! cost already exceeds the optimum are never sent to the oracle.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::hash::Hash;

use thiserror::Error;

use super::ground::{GroundAction, Task, TaskState};

/// Supplies action costs to the search.
pub trait CostOracle {
    type Context: Clone + Eq + Hash;

    fn initial_context(&self) -> Self::Context;

    /// Cost of `action` from (`state`, `ctx`) and the context afterwards;
    /// `None` marks the action infeasible there. Must be nonnegative and
    /// deterministic within one search.
    fn cost(
        &mut self,
        task: &Task,
        action: &GroundAction,
        state: &TaskState,
        ctx: &Self::Context,
    ) -> Option<(f64, Self::Context)>;

    /// Cheap value never above `cost` (zero is always valid). Infinity
    /// declares the action infeasible without consulting the oracle.
    fn lower_bound(&mut self, _task: &Task, _action: &GroundAction, _ctx: &Self::Context) -> f64 {
        0.0
    }

    /// Estimate of the remaining cost; must be consistent with `cost` for
    /// every context (zero is always valid).
    fn heuristic(&mut self, _task: &Task, _state: &TaskState) -> f64 {
        0.0
    }
}

/// Context-free oracle from a closure.
pub struct FnOracle<F>(pub F);

impl<F> CostOracle for FnOracle<F>
where
    F: FnMut(&Task, &GroundAction, &TaskState) -> Option<f64>,
{
    type Context = ();

    fn initial_context(&self) {}

    fn cost(&mut self, task: &Task, action: &GroundAction, state: &TaskState, _: &()) -> Option<(f64, ())> {
        (self.0)(task, action, state).map(|c| (c, ()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchOptions {
    /// Cache oracle answers per (action, state, context) within the search.
    pub memoize: bool,
    /// Abort after this many state expansions.
    pub max_expansions: Option<usize>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            memoize: true,
            max_expansions: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct SearchStats {
    pub expanded: usize,
    pub generated: usize,
    pub oracle_calls: usize,
    pub memo_hits: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanStep<C> {
    /// Index into [`Task::actions`].
    pub action: usize,
    pub cost: f64,
    pub context_before: C,
    pub context_after: C,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskPlan<C> {
    pub steps: Vec<PlanStep<C>>,
    pub total_cost: f64,
}

impl<C> TaskPlan<C> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("no plan reaches the goal")]
    NoPlan,
    #[error("search stopped after {0} expansions")]
    ExpansionLimit(usize),
}

enum Entry {
    State(usize),
    Deferred { parent: usize, action: usize },
}

struct Queued {
    f: f64,
    seq: u64,
    entry: Entry,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    // min-heap on (f, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct SearchNode<C> {
    state: TaskState,
    ctx: C,
    g: f64,
    closed: bool,
    /// (parent node, action index, step cost)
    parent: Option<(usize, usize, f64)>,
}

type MemoKey<C> = (usize, TaskState, C);

/// Returns a minimum-cost plan for `task` under `oracle`.
pub fn search_optimal_plan<O: CostOracle>(
    task: &Task,
    oracle: &mut O,
    options: SearchOptions,
) -> Result<(TaskPlan<O::Context>, SearchStats), PlanError> {
    let mut stats = SearchStats::default();
    if task.goal.is_none() {
        return Err(PlanError::NoPlan);
    }
    let mut nodes: Vec<SearchNode<O::Context>> = Vec::new();
    let mut index: HashMap<(TaskState, O::Context), usize> = HashMap::new();
    let mut memo: HashMap<MemoKey<O::Context>, Option<(f64, O::Context)>> = HashMap::new();
    let mut heuristics: HashMap<TaskState, f64> = HashMap::new();
    let mut queue = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |queue: &mut BinaryHeap<Queued>, f: f64, entry: Entry| {
        queue.push(Queued { f, seq, entry });
        seq += 1;
    };

    let start_ctx = oracle.initial_context();
    nodes.push(SearchNode {
        state: task.initial.clone(),
        ctx: start_ctx.clone(),
        g: 0.0,
        closed: false,
        parent: None,
    });
    index.insert((task.initial.clone(), start_ctx), 0);
    let h0 = oracle.heuristic(task, &task.initial);
    push(&mut queue, h0, Entry::State(0));

    while let Some(Queued { entry, .. }) = queue.pop() {
        match entry {
            Entry::State(n) => {
                if nodes[n].closed {
                    continue;
                }
                nodes[n].closed = true;
                if task.is_goal(&nodes[n].state) {
                    return Ok((reconstruct(&nodes, n), stats));
                }
                stats.expanded += 1;
                if options.max_expansions.is_some_and(|m| stats.expanded > m) {
                    return Err(PlanError::ExpansionLimit(stats.expanded - 1));
                }
                let state = nodes[n].state.clone();
                for a in task.applicable_actions(&state) {
                    let next = super::ground::apply_unchecked(&state, &task.actions[a]);
                    let h = *heuristics
                        .entry(next.clone())
                        .or_insert_with(|| oracle.heuristic(task, &next));
                    let lb = oracle.lower_bound(task, &task.actions[a], &nodes[n].ctx);
                    if lb == f64::INFINITY {
                        continue;
                    }
                    stats.generated += 1;
                    push(&mut queue, nodes[n].g + lb + h, Entry::Deferred { parent: n, action: a });
                }
            }
            Entry::Deferred { parent, action } => {
                let (state, ctx, g) = {
                    let p = &nodes[parent];
                    (p.state.clone(), p.ctx.clone(), p.g)
                };
                let act = &task.actions[action];
                let answer = if options.memoize {
                    let key = (action, state.clone(), ctx.clone());
                    match memo.get(&key) {
                        Some(v) => {
                            stats.memo_hits += 1;
                            v.clone()
                        }
                        None => {
                            stats.oracle_calls += 1;
                            let v = oracle.cost(task, act, &state, &ctx);
                            memo.insert(key, v.clone());
                            v
                        }
                    }
                } else {
                    stats.oracle_calls += 1;
                    oracle.cost(task, act, &state, &ctx)
                };
                let Some((c, next_ctx)) = answer else { continue };
                debug_assert!(c >= 0.0, "oracle returned a negative cost");
                if !c.is_finite() {
                    continue;
                }
                let next = super::ground::apply_unchecked(&state, act);
                let g_next = g + c;
                let key = (next.clone(), next_ctx.clone());
                let target = match index.get(&key) {
                    Some(&m) if nodes[m].closed || nodes[m].g <= g_next => continue,
                    Some(&m) => {
                        nodes[m].g = g_next;
                        nodes[m].parent = Some((parent, action, c));
                        m
                    }
                    None => {
                        nodes.push(SearchNode {
                            state: next.clone(),
                            ctx: next_ctx,
                            g: g_next,
                            closed: false,
                            parent: Some((parent, action, c)),
                        });
                        index.insert(key, nodes.len() - 1);
                        nodes.len() - 1
                    }
                };
                let h = *heuristics
                    .entry(next.clone())
                    .or_insert_with(|| oracle.heuristic(task, &next));
                push(&mut queue, g_next + h, Entry::State(target));
            }
        }
    }
    Err(PlanError::NoPlan)
}

fn reconstruct<C: Clone>(nodes: &[SearchNode<C>], goal: usize) -> TaskPlan<C> {
    let mut steps = Vec::new();
    let mut cur = goal;
    while let Some((parent, action, cost)) = nodes[cur].parent {
        steps.push(PlanStep {
            action,
            cost,
            context_before: nodes[parent].ctx.clone(),
            context_after: nodes[cur].ctx.clone(),
        });
        cur = parent;
    }
    steps.reverse();
    // summed in execution order so the total matches a forward replay
    let total_cost = steps.iter().fold(0.0, |acc, s| acc + s.cost);
    TaskPlan { steps, total_cost }
}
