//! Constraint evaluation against the live heap.

use crate::qlang::{BinOp, CExpr, UnOp};
use crate::qvm::{ObjId, PureCallError, Value, Vm};

/// Why an expression produced no value.
pub(crate) enum Failure {
    /// The tuple is treated as not satisfying the constraint.
    Soft(String),
    /// A method invoked by the constraint tried to modify state.
    Impure(String),
}

pub(crate) struct Evaluator<'a> {
    pub vm: &'a Vm,
    pub method_budget: u64,
    pub evals: u64,
    pub method_instructions: u64,
    /// Soft failures seen so far, in order.
    pub soft: Vec<String>,
}

impl<'a> Evaluator<'a> {
    pub fn new(vm: &'a Vm, method_budget: u64) -> Self {
        Evaluator {
            vm,
            method_budget,
            evals: 0,
            method_instructions: 0,
            soft: Vec::new(),
        }
    }

    /// Evaluate a boolean constraint on `tuple`, counting one evaluation.
    /// Soft failures make the result false.
    pub fn holds(&mut self, e: &CExpr, tuple: &[ObjId]) -> Result<bool, String> {
        self.evals += 1;
        self.truth(e, tuple)
    }

    /// Evaluate every conjunct in order, counting one evaluation in total.
    pub fn holds_all(&mut self, es: &[CExpr], tuple: &[ObjId]) -> Result<bool, String> {
        self.evals += 1;
        for e in es {
            if !self.truth(e, tuple)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Evaluate key expressions; `None` if any of them fails softly.
    pub fn key(&mut self, es: &[CExpr], tuple: &[ObjId]) -> Result<Option<Vec<Value>>, String> {
        let mut out = Vec::with_capacity(es.len());
        for e in es {
            match self.value(e, tuple) {
                Ok(v) => out.push(v),
                Err(Failure::Soft(m)) => {
                    self.soft.push(m);
                    return Ok(None);
                }
                Err(Failure::Impure(m)) => return Err(m),
            }
        }
        Ok(Some(out))
    }

    fn truth(&mut self, e: &CExpr, tuple: &[ObjId]) -> Result<bool, String> {
        match self.value(e, tuple) {
            Ok(Value::Bool(b)) => Ok(b),
            Ok(other) => {
                self.soft.push(format!(
                    "constraint produced {other:?} instead of a boolean"
                ));
                Ok(false)
            }
            Err(Failure::Soft(m)) => {
                self.soft.push(m);
                Ok(false)
            }
            Err(Failure::Impure(m)) => Err(m),
        }
    }

    pub fn value(&mut self, e: &CExpr, tuple: &[ObjId]) -> Result<Value, Failure> {
        Ok(match e {
            CExpr::Const(v) => *v,
            CExpr::Var(i) => Value::Ref(tuple[*i]),
            CExpr::Field { var, field } => match self.vm.field(tuple[*var], *field) {
                Some(v) => v,
                None => return Err(Failure::Soft("object is no longer live".into())),
            },
            CExpr::Call { var, method, args } => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.value(a, tuple)?);
                }
                match self
                    .vm
                    .call_pure(tuple[*var], *method, &vals, self.method_budget)
                {
                    Ok(r) => {
                        self.method_instructions += r.steps;
                        r.value
                    }
                    Err(PureCallError::Impure(m)) => {
                        return Err(Failure::Impure(format!(
                            "{} {m}",
                            self.vm.program().method_name(*method)
                        )))
                    }
                    Err(other) => {
                        if other == PureCallError::BudgetExceeded {
                            self.method_instructions += self.method_budget;
                        }
                        return Err(Failure::Soft(format!(
                            "{}: {other}",
                            self.vm.program().method_name(*method)
                        )));
                    }
                }
            }
            CExpr::Unary(op, inner) => {
                let v = self.value(inner, tuple)?;
                match (op, v) {
                    (UnOp::Neg, Value::Int(i)) => Value::Int(i.wrapping_neg()),
                    (UnOp::Not, Value::Bool(b)) => Value::Bool(!b),
                    _ => return Err(mismatch(format!("cannot apply {op:?} to {v:?}"))),
                }
            }
            CExpr::Binary(op @ (BinOp::And | BinOp::Or), l, r) => {
                let lv = self.bool_value(l, tuple)?;
                if lv == (*op == BinOp::Or) {
                    Value::Bool(lv)
                } else {
                    Value::Bool(self.bool_value(r, tuple)?)
                }
            }
            CExpr::Binary(op, l, r) => {
                let a = self.value(l, tuple)?;
                let b = self.value(r, tuple)?;
                binary(*op, a, b)?
            }
        })
    }

    fn bool_value(&mut self, e: &CExpr, tuple: &[ObjId]) -> Result<bool, Failure> {
        match self.value(e, tuple)? {
            Value::Bool(b) => Ok(b),
            other => Err(mismatch(format!("expected a boolean, found {other:?}"))),
        }
    }
}

fn mismatch(m: String) -> Failure {
    Failure::Soft(format!("kind mismatch: {m}"))
}

fn binary(op: BinOp, a: Value, b: Value) -> Result<Value, Failure> {
    if op.is_equality() {
        if !a.same_kind(b) {
            return Err(mismatch(format!("cannot compare {a:?} with {b:?}")));
        }
        return Ok(Value::Bool((a == b) == (op == BinOp::Eq)));
    }
    let (Value::Int(x), Value::Int(y)) = (a, b) else {
        return Err(mismatch(format!(
            "`{}` needs integers, found {a:?} and {b:?}",
            op.symbol()
        )));
    };
    Ok(match op {
        BinOp::Add => Value::Int(x.wrapping_add(y)),
        BinOp::Sub => Value::Int(x.wrapping_sub(y)),
        BinOp::Mul => Value::Int(x.wrapping_mul(y)),
        BinOp::Div | BinOp::Mod if y == 0 => return Err(Failure::Soft("division by zero".into())),
        BinOp::Div => Value::Int(x.wrapping_div(y)),
        BinOp::Mod => Value::Int(x.wrapping_rem(y)),
        BinOp::Lt => Value::Bool(x < y),
        BinOp::Le => Value::Bool(x <= y),
        BinOp::Gt => Value::Bool(x > y),
        BinOp::Ge => Value::Bool(x >= y),
        _ => unreachable!("handled above"),
    })
}
