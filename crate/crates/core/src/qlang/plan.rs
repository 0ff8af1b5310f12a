use std::fmt;

use super::ast::BinOp;
use super::check::{CExpr, TypedQuery};

/// Evaluation strategy for a query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum QueryPlan {
    /// One domain variable: the constraint is a per-object predicate.
    Selection,
    /// Two domain variables joined on one or more equalities. Variable 0 is
    /// the left side, variable 1 the right.
    HashJoin(HashJoinPlan),
    /// Anything else: enumerate the Cartesian product.
    NestedJoin,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HashJoinPlan {
    /// Key expressions over the left variable only, in textual order.
    pub left_keys: Vec<CExpr>,
    /// Matching key expressions over the right variable only.
    pub right_keys: Vec<CExpr>,
    pub left_filters: Vec<CExpr>,
    pub right_filters: Vec<CExpr>,
    /// Conjuncts mentioning both variables (other than keys) or neither.
    pub residual: Vec<CExpr>,
}

impl QueryPlan {
    pub fn kind(&self) -> PlanKind {
        match self {
            QueryPlan::Selection => PlanKind::Selection,
            QueryPlan::HashJoin(_) => PlanKind::HashJoin,
            QueryPlan::NestedJoin => PlanKind::NestedJoin,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum PlanKind {
    Selection,
    HashJoin,
    NestedJoin,
}

impl fmt::Display for PlanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlanKind::Selection => "selection",
            PlanKind::HashJoin => "hash-join",
            PlanKind::NestedJoin => "nested-join",
        })
    }
}

pub fn plan_query(q: &TypedQuery) -> QueryPlan {
    match q.vars.len() {
        1 => QueryPlan::Selection,
        2 => hash_join(q).map_or(QueryPlan::NestedJoin, QueryPlan::HashJoin),
        _ => QueryPlan::NestedJoin,
    }
}

fn only(e: &CExpr, var: usize) -> bool {
    let vars = e.vars();
    vars.len() == 1 && vars.contains(&var)
}

fn hash_join(q: &TypedQuery) -> Option<HashJoinPlan> {
    let mut plan = HashJoinPlan {
        left_keys: Vec::new(),
        right_keys: Vec::new(),
        left_filters: Vec::new(),
        right_filters: Vec::new(),
        residual: Vec::new(),
    };
    for c in q.constraint.conjuncts() {
        if let CExpr::Binary(BinOp::Eq, l, r) = c {
            if only(l, 0) && only(r, 1) {
                plan.left_keys.push((**l).clone());
                plan.right_keys.push((**r).clone());
                continue;
            }
            if only(l, 1) && only(r, 0) {
                plan.left_keys.push((**r).clone());
                plan.right_keys.push((**l).clone());
                continue;
            }
        }
        if only(c, 0) {
            plan.left_filters.push(c.clone());
        } else if only(c, 1) {
            plan.right_filters.push(c.clone());
        } else {
            plan.residual.push(c.clone());
        }
    }
    (!plan.left_keys.is_empty()).then_some(plan)
}
