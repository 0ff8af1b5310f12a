//! Incremental query evaluation driven by the VM's debugger hooks.
//!
//! Every tracked object lives in a per-class collection. A hook event first
//! checks whether any query domain holds the object's class, then whether the
//! written field is in that query's change set, and only then recomputes the
//! tuples the object takes part in. Results are kept as a set of tuples plus
//! an object → tuples index so that removing an object's old tuples is cheap.
//! Hash joins additionally keep, per side, a key → objects map and the reverse
//! object → key map; the reverse map is what lets a post-write hook find the
//! key an object had before the write.

mod collections;
mod eval;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

pub use collections::Collections;
use eval::Evaluator;

use crate::qlang::{compute_change_set, plan_query, ChangeSet, QueryPlan, TypedQuery};
use crate::qvm::{ClassId, FieldId, HookControl, HookHandler, ObjId, Program, Value, Vm};

pub type QueryId = u32;

/// Ordered object tuple, one entry per domain variable.
pub type Tuple = Vec<ObjId>;

pub const DEFAULT_METHOD_BUDGET: u64 = 100_000;
const MAX_DIAGNOSTICS: usize = 256;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ResultDelta {
    pub query: QueryId,
    /// Program event counter when the change happened.
    pub event: u64,
    pub added: Vec<Tuple>,
    pub removed: Vec<Tuple>,
}

impl ResultDelta {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct QueryFault {
    pub query: QueryId,
    pub event: u64,
    pub message: String,
}

/// Something the engine reports back to its driver after a hook.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EngineOutput {
    Delta(ResultDelta),
    /// The query was removed because its constraint is impure.
    Fault(QueryFault),
}

/// A soft evaluation failure: the tuple counted as false.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub query: QueryId,
    pub event: u64,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct EngineStats {
    /// Hook events received: `rejected + filtered + processed`.
    pub events: u64,
    /// No active query domain holds the object's class.
    pub rejected: u64,
    /// A domain holds the object but the event is outside every change set.
    pub filtered: u64,
    pub processed: u64,
    pub constraint_evals: u64,
    pub full_reevaluations: u64,
    pub sweeps: u64,
    pub swept_handles: u64,
    /// Instructions executed inside methods called by constraints.
    pub method_instructions: u64,
    pub diagnostics: u64,
    pub tracked: u64,
    pub peak_tracked: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("unknown query {0}")]
    UnknownQuery(QueryId),
    #[error("impure constraint: {0}")]
    ImpureConstraint(String),
    #[error("queries are limited to 64 domain variables")]
    TooManyVariables,
}

/// Planner override, mainly for measurements.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
pub enum PlanChoice {
    #[default]
    Auto,
    ForceNested,
}

#[derive(Clone, Debug, Default)]
struct SideIndex {
    forward: HashMap<Vec<Value>, BTreeSet<ObjId>>,
    reverse: HashMap<ObjId, Vec<Value>>,
}

impl SideIndex {
    fn remove(&mut self, obj: ObjId) {
        if let Some(k) = self.reverse.remove(&obj) {
            if let Some(set) = self.forward.get_mut(&k) {
                set.remove(&obj);
                if set.is_empty() {
                    self.forward.remove(&k);
                }
            }
        }
    }

    fn insert(&mut self, obj: ObjId, key: Vec<Value>) {
        self.forward.entry(key.clone()).or_default().insert(obj);
        self.reverse.insert(obj, key);
    }

    fn partners(&self, key: &[Value], except: ObjId) -> Vec<ObjId> {
        self.forward
            .get(key)
            .map(|s| s.iter().copied().filter(|&o| o != except).collect())
            .unwrap_or_default()
    }
}

struct ActiveQuery {
    typed: TypedQuery,
    plan: QueryPlan,
    change_set: ChangeSet,
    stop_on_change: bool,
    /// Per variable: the exact classes of its domain.
    domains: Vec<Vec<ClassId>>,
    /// Per class id: bit i set when variable i's domain holds the class.
    masks: Vec<u64>,
    /// Exact (class, field) pairs in the change set.
    watched: HashSet<(ClassId, FieldId)>,
    results: HashSet<Tuple>,
    by_obj: HashMap<ObjId, HashSet<Tuple>>,
    sides: [SideIndex; 2],
}

impl ActiveQuery {
    fn mask(&self, class: ClassId) -> u64 {
        self.masks[class.index()]
    }

    fn add_tuple(&mut self, t: Tuple) {
        for (i, o) in t.iter().enumerate() {
            if !t[..i].contains(o) {
                self.by_obj.entry(*o).or_default().insert(t.clone());
            }
        }
        self.results.insert(t);
    }

    fn remove_tuple(&mut self, t: &Tuple) {
        for (i, o) in t.iter().enumerate() {
            if !t[..i].contains(o) {
                if let Some(set) = self.by_obj.get_mut(o) {
                    set.remove(t);
                    if set.is_empty() {
                        self.by_obj.remove(o);
                    }
                }
            }
        }
        self.results.remove(t);
    }

    fn sorted_results(&self) -> Vec<Tuple> {
        let mut v: Vec<Tuple> = self.results.iter().cloned().collect();
        v.sort();
        v
    }
}

/// Enumerate the Cartesian product of `lists`.
fn for_each_tuple<E>(
    lists: &[Vec<ObjId>],
    mut f: impl FnMut(&[ObjId]) -> Result<(), E>,
) -> Result<(), E> {
    if lists.iter().any(|l| l.is_empty()) {
        return Ok(());
    }
    let mut idx = vec![0usize; lists.len()];
    let mut tuple: Vec<ObjId> = lists.iter().map(|l| l[0]).collect();
    loop {
        f(&tuple)?;
        let mut pos = lists.len();
        loop {
            if pos == 0 {
                return Ok(());
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < lists[pos].len() {
                tuple[pos] = lists[pos][idx[pos]];
                break;
            }
            idx[pos] = 0;
            tuple[pos] = lists[pos][0];
        }
    }
}

pub struct Engine {
    program: Arc<Program>,
    collections: Collections,
    queries: BTreeMap<QueryId, ActiveQuery>,
    next_id: QueryId,
    /// Per class id: number of (query, variable) domains holding the class.
    domain_refs: Vec<u32>,
    stats: EngineStats,
    diagnostics: VecDeque<Diagnostic>,
    outputs: Vec<EngineOutput>,
    method_budget: u64,
}

impl Engine {
    pub fn new(program: Arc<Program>) -> Engine {
        let n = program.class_count();
        Engine {
            program,
            collections: Collections::new(n),
            queries: BTreeMap::new(),
            next_id: 1,
            domain_refs: vec![0; n],
            stats: EngineStats::default(),
            diagnostics: VecDeque::new(),
            outputs: Vec::new(),
            method_budget: DEFAULT_METHOD_BUDGET,
        }
    }

    pub fn set_method_budget(&mut self, budget: u64) {
        self.method_budget = budget;
    }

    pub fn program(&self) -> &Arc<Program> {
        &self.program
    }

    pub fn stats(&self) -> EngineStats {
        let mut s = self.stats.clone();
        s.tracked = self.collections.len() as u64;
        s.peak_tracked = self.collections.peak() as u64;
        s
    }

    pub fn collections(&self) -> &Collections {
        &self.collections
    }

    /// Most recent soft evaluation failures, oldest first.
    pub fn diagnostics(&self) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics.iter()
    }

    pub fn query_ids(&self) -> Vec<QueryId> {
        self.queries.keys().copied().collect()
    }

    pub fn has_queries(&self) -> bool {
        !self.queries.is_empty()
    }

    pub fn query(&self, id: QueryId) -> Option<&TypedQuery> {
        self.queries.get(&id).map(|q| &q.typed)
    }

    pub fn plan(&self, id: QueryId) -> Option<&QueryPlan> {
        self.queries.get(&id).map(|q| &q.plan)
    }

    pub fn change_set(&self, id: QueryId) -> Option<&ChangeSet> {
        self.queries.get(&id).map(|q| &q.change_set)
    }

    pub fn stop_on_change(&self, id: QueryId) -> Option<bool> {
        self.queries.get(&id).map(|q| q.stop_on_change)
    }

    pub fn set_stop_on_change(&mut self, id: QueryId, stop: bool) -> Result<(), EngineError> {
        self.queries
            .get_mut(&id)
            .map(|q| q.stop_on_change = stop)
            .ok_or(EngineError::UnknownQuery(id))
    }

    /// Current result set, sorted.
    pub fn results(&self, id: QueryId) -> Result<Vec<Tuple>, EngineError> {
        self.queries
            .get(&id)
            .map(ActiveQuery::sorted_results)
            .ok_or(EngineError::UnknownQuery(id))
    }

    /// Outputs accumulated by hook calls since the last drain.
    pub fn take_outputs(&mut self) -> Vec<EngineOutput> {
        std::mem::take(&mut self.outputs)
    }

    /// Register every heap object the engine does not know yet. Objects
    /// allocated while the debugger was disabled bypassed the allocation hook.
    pub fn backfill(&mut self, vm: &Vm) -> usize {
        // Half-built objects are registered by their own creation event.
        let pending = vm.under_construction();
        let mut added = 0;
        for (obj, class) in vm.live_objects() {
            if !pending.contains(&obj) && self.collections.insert(obj, class) {
                added += 1;
            }
        }
        added
    }

    /// Start maintaining `typed` and return its id and initial result.
    pub fn activate(
        &mut self,
        vm: &Vm,
        typed: TypedQuery,
        choice: PlanChoice,
        stop_on_change: bool,
    ) -> Result<(QueryId, Vec<Tuple>), EngineError> {
        if typed.vars.len() > 64 {
            return Err(EngineError::TooManyVariables);
        }
        self.backfill(vm);
        let program = Arc::clone(&self.program);
        let plan = match choice {
            PlanChoice::Auto => plan_query(&typed),
            PlanChoice::ForceNested => QueryPlan::NestedJoin,
        };
        let change_set = compute_change_set(&typed, &program);
        let domains: Vec<Vec<ClassId>> = typed
            .vars
            .iter()
            .map(|v| {
                if v.star {
                    program.subclasses(v.class).to_vec()
                } else {
                    vec![v.class]
                }
            })
            .collect();
        let mut masks = vec![0u64; program.class_count()];
        for (i, d) in domains.iter().enumerate() {
            for c in d {
                masks[c.index()] |= 1 << i;
            }
        }
        let mut watched = HashSet::new();
        for w in &change_set.field_writes {
            let classes = if w.star {
                program.subclasses(w.class).to_vec()
            } else {
                vec![w.class]
            };
            for c in classes {
                watched.insert((c, w.field));
            }
        }
        let mut q = ActiveQuery {
            typed,
            plan,
            change_set,
            stop_on_change,
            domains,
            masks,
            watched,
            results: HashSet::new(),
            by_obj: HashMap::new(),
            sides: Default::default(),
        };
        let id = self.next_id;
        let mut ev = Evaluator::new(vm, self.method_budget);
        let built = Self::build(&mut q, &self.collections, &mut ev);
        self.absorb(&mut ev, id, vm.counters().events);
        let tuples = built.map_err(EngineError::ImpureConstraint)?;
        for t in tuples {
            q.add_tuple(t);
        }
        self.stats.full_reevaluations += 1;
        for d in &q.domains {
            for c in d {
                self.domain_refs[c.index()] += 1;
            }
        }
        let initial = q.sorted_results();
        self.queries.insert(id, q);
        self.next_id += 1;
        Ok((id, initial))
    }

    pub fn deactivate(&mut self, id: QueryId) -> Result<(), EngineError> {
        let q = self
            .queries
            .remove(&id)
            .ok_or(EngineError::UnknownQuery(id))?;
        for d in &q.domains {
            for c in d {
                self.domain_refs[c.index()] -= 1;
            }
        }
        Ok(())
    }

    /// Compute the initial result set (and, for hash joins, the indexes).
    fn build(
        q: &mut ActiveQuery,
        coll: &Collections,
        ev: &mut Evaluator,
    ) -> Result<Vec<Tuple>, String> {
        let lists: Vec<Vec<ObjId>> = q.domains.iter().map(|d| coll.members(d)).collect();
        let QueryPlan::HashJoin(h) = &q.plan else {
            let mut out = Vec::new();
            let c = &q.typed.constraint;
            for_each_tuple(&lists, |t| {
                if ev.holds(c, t)? {
                    out.push(t.to_vec());
                }
                Ok::<(), String>(())
            })?;
            return Ok(out);
        };
        #[allow(clippy::needless_range_loop)]
        for side in 0..2 {
            let (keys, filters) = if side == 0 {
                (&h.left_keys, &h.left_filters)
            } else {
                (&h.right_keys, &h.right_filters)
            };
            for &o in &lists[side] {
                if let Some(k) = side_entry(ev, keys, filters, o)? {
                    q.sides[side].insert(o, k);
                }
            }
        }
        let mut out = Vec::new();
        let mut lefts: Vec<(&ObjId, &Vec<Value>)> = q.sides[0].reverse.iter().collect();
        lefts.sort_by_key(|(o, _)| **o);
        for (&a, k) in lefts {
            if let Some(bs) = q.sides[1].forward.get(k) {
                for &b in bs {
                    let t = vec![a, b];
                    if ev.holds_all(&h.residual, &t)? {
                        out.push(t);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Definitional evaluation over the Cartesian product of the tracked
    /// domains, one constraint evaluation per tuple. Leaves maintained state
    /// untouched.
    pub fn full_evaluate(&mut self, vm: &Vm, id: QueryId) -> Result<Vec<Tuple>, EngineError> {
        let q = self.queries.get(&id).ok_or(EngineError::UnknownQuery(id))?;
        let lists: Vec<Vec<ObjId>> = q
            .domains
            .iter()
            .map(|d| self.collections.members(d))
            .collect();
        let mut ev = Evaluator::new(vm, self.method_budget);
        let mut out = Vec::new();
        let c = &q.typed.constraint;
        let r = for_each_tuple(&lists, |t| {
            if ev.holds(c, t)? {
                out.push(t.to_vec());
            }
            Ok::<(), String>(())
        });
        self.stats.full_reevaluations += 1;
        self.absorb(&mut ev, id, vm.counters().events);
        r.map_err(EngineError::ImpureConstraint)?;
        out.sort();
        Ok(out)
    }

    fn absorb(&mut self, ev: &mut Evaluator, query: QueryId, event: u64) {
        self.stats.constraint_evals += ev.evals;
        self.stats.method_instructions += ev.method_instructions;
        ev.evals = 0;
        ev.method_instructions = 0;
        for message in ev.soft.drain(..) {
            self.stats.diagnostics += 1;
            if self.diagnostics.len() == MAX_DIAGNOSTICS {
                self.diagnostics.pop_front();
            }
            self.diagnostics.push_back(Diagnostic {
                query,
                event,
                message,
            });
        }
    }

    /// Allocation hook: start tracking `obj` and add the tuples it completes.
    pub fn track_new(&mut self, vm: &Vm, obj: ObjId) -> HookControl {
        let Some(class) = vm.class_of(obj) else {
            return HookControl::Continue;
        };
        self.stats.events += 1;
        let fresh = self.collections.insert(obj, class);
        if self.domain_refs[class.index()] == 0 {
            self.stats.rejected += 1;
            return HookControl::Continue;
        }
        if !fresh {
            // Registered earlier by a backfill, which already evaluated it.
            self.stats.filtered += 1;
            return HookControl::Continue;
        }
        self.stats.processed += 1;
        let ids: Vec<QueryId> = self
            .queries
            .iter()
            .filter(|(_, q)| q.mask(class) != 0)
            .map(|(id, _)| *id)
            .collect();
        self.refresh_all(vm, obj, class, &ids)
    }

    /// Field-write hook, called after the write.
    pub fn on_field_write(&mut self, vm: &Vm, obj: ObjId, field: FieldId) -> HookControl {
        let Some(class) = vm.class_of(obj) else {
            return HookControl::Continue;
        };
        self.stats.events += 1;
        if self.domain_refs[class.index()] == 0 {
            self.stats.rejected += 1;
            return HookControl::Continue;
        }
        let ids: Vec<QueryId> = self
            .queries
            .iter()
            .filter(|(_, q)| q.mask(class) != 0 && q.watched.contains(&(class, field)))
            .map(|(id, _)| *id)
            .collect();
        // Untracked objects are still being constructed; their creation
        // event will evaluate them.
        if ids.is_empty() || !self.collections.contains(obj) {
            self.stats.filtered += 1;
            return HookControl::Continue;
        }
        self.stats.processed += 1;
        self.refresh_all(vm, obj, class, &ids)
    }

    fn refresh_all(&mut self, vm: &Vm, obj: ObjId, class: ClassId, ids: &[QueryId]) -> HookControl {
        let event = vm.counters().events;
        let mut control = HookControl::Continue;
        for &id in ids {
            let mut ev = Evaluator::new(vm, self.method_budget);
            let q = self.queries.get_mut(&id).expect("listed query is active");
            let r = refresh(q, &self.collections, &mut ev, obj, class);
            let stop = q.stop_on_change;
            self.absorb(&mut ev, id, event);
            match r {
                Ok((added, removed)) => {
                    if added.is_empty() && removed.is_empty() {
                        continue;
                    }
                    if stop {
                        control = HookControl::Pause;
                    }
                    self.outputs.push(EngineOutput::Delta(ResultDelta {
                        query: id,
                        event,
                        added,
                        removed,
                    }));
                }
                Err(message) => {
                    self.deactivate(id).expect("query is active");
                    self.outputs.push(EngineOutput::Fault(QueryFault {
                        query: id,
                        event,
                        message: format!("impure constraint: {message}"),
                    }));
                    control = HookControl::Pause;
                }
            }
        }
        control
    }

    /// Forget reclaimed objects. Tuples that lose a member disappear without
    /// producing a delta.
    pub fn sweep(&mut self, dead: &[ObjId]) {
        let mut swept = 0;
        for &o in dead {
            if self.collections.remove(o).is_none() {
                continue;
            }
            swept += 1;
            for q in self.queries.values_mut() {
                q.sides[0].remove(o);
                q.sides[1].remove(o);
                if let Some(tuples) = q.by_obj.get(&o).cloned() {
                    for t in &tuples {
                        q.remove_tuple(t);
                    }
                }
            }
        }
        if swept > 0 {
            self.stats.sweeps += 1;
            self.stats.swept_handles += swept;
        }
    }
}

fn side_entry(
    ev: &mut Evaluator,
    keys: &[crate::qlang::CExpr],
    filters: &[crate::qlang::CExpr],
    o: ObjId,
) -> Result<Option<Vec<Value>>, String> {
    let t = [o, o];
    if !filters.is_empty() && !ev.holds_all(filters, &t)? {
        return Ok(None);
    }
    if filters.is_empty() {
        ev.evals += 1;
    }
    ev.key(keys, &t)
}

/// Recompute the tuples containing `o`; returns the sorted (added, removed).
fn refresh(
    q: &mut ActiveQuery,
    coll: &Collections,
    ev: &mut Evaluator,
    o: ObjId,
    class: ClassId,
) -> Result<(Vec<Tuple>, Vec<Tuple>), String> {
    let mask = q.mask(class);
    let old: HashSet<Tuple> = q.by_obj.get(&o).cloned().unwrap_or_default();
    let mut new: Vec<Tuple> = Vec::new();
    if let QueryPlan::HashJoin(h) = &q.plan {
        let mut entry: [Option<Vec<Value>>; 2] = [None, None];
        if mask & 1 != 0 {
            entry[0] = side_entry(ev, &h.left_keys, &h.left_filters, o)?;
        }
        if mask & 2 != 0 {
            entry[1] = side_entry(ev, &h.right_keys, &h.right_filters, o)?;
        }
        if let Some(k) = &entry[0] {
            let mut partners = q.sides[1].partners(k, o);
            if entry[1].as_ref() == Some(k) {
                partners.push(o);
            }
            for b in partners {
                let t = vec![o, b];
                if ev.holds_all(&h.residual, &t)? {
                    new.push(t);
                }
            }
        }
        if let Some(k) = &entry[1] {
            for a in q.sides[0].partners(k, o) {
                let t = vec![a, o];
                if ev.holds_all(&h.residual, &t)? {
                    new.push(t);
                }
            }
        }
        for (side, e) in entry.into_iter().enumerate() {
            q.sides[side].remove(o);
            if let Some(k) = e {
                q.sides[side].insert(o, k);
            }
        }
    } else {
        let arity = q.domains.len();
        let c = &q.typed.constraint;
        for first in 0..arity {
            if mask & (1 << first) == 0 {
                continue;
            }
            // Tuples whose first occurrence of `o` is at `first`.
            let lists: Vec<Vec<ObjId>> = (0..arity)
                .map(|j| match j.cmp(&first) {
                    std::cmp::Ordering::Equal => vec![o],
                    std::cmp::Ordering::Less => {
                        let mut m = coll.members(&q.domains[j]);
                        m.retain(|&x| x != o);
                        m
                    }
                    std::cmp::Ordering::Greater => coll.members(&q.domains[j]),
                })
                .collect();
            for_each_tuple(&lists, |t| {
                if ev.holds(c, t)? {
                    new.push(t.to_vec());
                }
                Ok::<(), String>(())
            })?;
        }
    }
    let new: HashSet<Tuple> = new.into_iter().collect();
    let mut added: Vec<Tuple> = new.difference(&old).cloned().collect();
    let mut removed: Vec<Tuple> = old.difference(&new).cloned().collect();
    for t in &removed {
        q.remove_tuple(t);
    }
    for t in &added {
        q.add_tuple(t.clone());
    }
    added.sort();
    removed.sort();
    Ok((added, removed))
}

impl HookHandler for Engine {
    fn field_write(&mut self, vm: &Vm, obj: ObjId, field: FieldId) -> HookControl {
        self.on_field_write(vm, obj, field)
    }

    fn object_new(&mut self, vm: &Vm, obj: ObjId) -> HookControl {
        self.track_new(vm, obj)
    }

    fn reclaimed(&mut self, _vm: &Vm, dead: &[ObjId]) {
        self.sweep(dead);
    }
}
