//! Name resolution, kind checking and change-set computation.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use super::ast::{BinOp, Expr, Query, UnOp};
use crate::qvm::{ClassId, FieldId, FieldKind, MethodId, Program, Value};

/// Static kind of a constraint expression. Method results are `Any`: QASM
/// methods do not declare what they return, so their kind is checked when the
/// constraint runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Kind {
    Int,
    Bool,
    Ref,
    Null,
    Any,
}

impl Kind {
    fn of_field(k: FieldKind) -> Kind {
        match k {
            FieldKind::Int => Kind::Int,
            FieldKind::Bool => Kind::Bool,
            FieldKind::Ref => Kind::Ref,
        }
    }

    fn accepts(self, want: Kind) -> bool {
        self == want || self == Kind::Any
    }

    fn comparable(self, other: Kind) -> bool {
        let refish = |k| matches!(k, Kind::Ref | Kind::Null);
        self == Kind::Any || other == Kind::Any || self == other || (refish(self) && refish(other))
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Int => "int",
            Kind::Bool => "bool",
            Kind::Ref => "ref",
            Kind::Null => "null",
            Kind::Any => "any",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TypeError {
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("undeclared variable `{0}`")]
    UnknownVariable(String),
    #[error("class `{class}` has no field `{field}`")]
    UnknownField { class: String, field: String },
    #[error("class `{class}` has no method `{method}`")]
    UnknownMethod { class: String, method: String },
    #[error("`{method}` takes {expected} argument(s), {found} given")]
    Arity {
        method: String,
        expected: usize,
        found: usize,
    },
    #[error("kind mismatch in `{expr}`: {detail}")]
    KindMismatch { expr: String, detail: String },
    #[error("constraint must be boolean, found {0}")]
    NotBoolean(Kind),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DomainVar {
    pub name: String,
    pub class: ClassId,
    pub star: bool,
    /// Index of the declaration the variable came from.
    pub decl: usize,
}

/// Constraint with names resolved against a program.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CExpr {
    Const(Value),
    Var(usize),
    Field {
        var: usize,
        field: FieldId,
    },
    Call {
        var: usize,
        method: MethodId,
        args: Vec<CExpr>,
    },
    Unary(UnOp, Box<CExpr>),
    Binary(BinOp, Box<CExpr>, Box<CExpr>),
}

impl CExpr {
    /// Domain variables the expression mentions.
    pub fn vars(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<usize>) {
        match self {
            CExpr::Const(_) => {}
            CExpr::Var(v) | CExpr::Field { var: v, .. } => {
                out.insert(*v);
            }
            CExpr::Call { var, args, .. } => {
                out.insert(*var);
                for a in args {
                    a.collect_vars(out);
                }
            }
            CExpr::Unary(_, e) => e.collect_vars(out),
            CExpr::Binary(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
        }
    }

    pub fn conjuncts(&self) -> Vec<&CExpr> {
        match self {
            CExpr::Binary(BinOp::And, l, r) => {
                let mut out = l.conjuncts();
                out.extend(r.conjuncts());
                out
            }
            other => vec![other],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct FieldWatch {
    /// Class of the domain whose objects are watched.
    pub class: ClassId,
    pub field: FieldId,
    pub star: bool,
}

/// Program events that can change a query's result.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ChangeSet {
    pub constructors: BTreeSet<(ClassId, bool)>,
    pub field_writes: BTreeSet<FieldWatch>,
}

impl ChangeSet {
    fn domain_matches(program: &Program, domain: ClassId, star: bool, obj_class: ClassId) -> bool {
        obj_class == domain || (star && program.is_subclass_of(obj_class, domain))
    }

    pub fn matches_new(&self, program: &Program, obj_class: ClassId) -> bool {
        self.constructors
            .iter()
            .any(|&(c, star)| Self::domain_matches(program, c, star, obj_class))
    }

    pub fn matches_write(&self, program: &Program, obj_class: ClassId, field: FieldId) -> bool {
        self.field_writes
            .iter()
            .any(|w| w.field == field && Self::domain_matches(program, w.class, w.star, obj_class))
    }
}

#[derive(Clone, Debug)]
pub struct TypedQuery {
    pub source: Query,
    pub vars: Vec<DomainVar>,
    pub constraint: CExpr,
}

impl TypedQuery {
    pub fn text(&self) -> String {
        self.source.to_string()
    }

    /// Whether `class` belongs to the domain of variable `var`.
    pub fn in_domain(&self, program: &Program, var: usize, class: ClassId) -> bool {
        let v = &self.vars[var];
        class == v.class || (v.star && program.is_subclass_of(class, v.class))
    }
}

pub fn typecheck(query: &Query, program: &Program) -> Result<TypedQuery, TypeError> {
    let mut vars = Vec::new();
    for (i, d) in query.decls.iter().enumerate() {
        let class = program
            .class_id(&d.class)
            .filter(|&c| !program.class(c).intrinsic)
            .ok_or_else(|| TypeError::UnknownClass(d.class.clone()))?;
        for v in &d.vars {
            vars.push(DomainVar {
                name: v.clone(),
                class,
                star: d.star,
                decl: i,
            });
        }
    }
    let cx = Checker {
        program,
        vars: &vars,
    };
    let (constraint, kind) = cx.expr(&query.constraint)?;
    if !kind.accepts(Kind::Bool) {
        return Err(TypeError::NotBoolean(kind));
    }
    Ok(TypedQuery {
        source: query.clone(),
        vars,
        constraint,
    })
}

struct Checker<'a> {
    program: &'a Program,
    vars: &'a [DomainVar],
}

impl Checker<'_> {
    fn var(&self, name: &str) -> Result<usize, TypeError> {
        self.vars
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| TypeError::UnknownVariable(name.to_string()))
    }

    fn mismatch<T>(e: &Expr, detail: String) -> Result<T, TypeError> {
        Err(TypeError::KindMismatch {
            expr: e.to_string(),
            detail,
        })
    }

    fn expr(&self, e: &Expr) -> Result<(CExpr, Kind), TypeError> {
        Ok(match e {
            Expr::Int(i) => (CExpr::Const(Value::Int(*i)), Kind::Int),
            Expr::Bool(b) => (CExpr::Const(Value::Bool(*b)), Kind::Bool),
            Expr::Null => (CExpr::Const(Value::Null), Kind::Null),
            Expr::Var(name) => (CExpr::Var(self.var(name)?), Kind::Ref),
            Expr::Field { var, field } => {
                let v = self.var(var)?;
                let class = self.vars[v].class;
                let (id, kind) = self.program.lookup_field(class, field).ok_or_else(|| {
                    TypeError::UnknownField {
                        class: self.program.class_name(class).to_string(),
                        field: field.clone(),
                    }
                })?;
                (CExpr::Field { var: v, field: id }, Kind::of_field(kind))
            }
            Expr::Call { var, method, args } => {
                let v = self.var(var)?;
                let class = self.vars[v].class;
                let id = self
                    .program
                    .lookup_method(class, method)
                    .filter(|_| method != "<init>")
                    .ok_or_else(|| TypeError::UnknownMethod {
                        class: self.program.class_name(class).to_string(),
                        method: method.clone(),
                    })?;
                let expected = self.program.method(id).param_count as usize;
                if expected != args.len() {
                    return Err(TypeError::Arity {
                        method: self.program.method_name(id),
                        expected,
                        found: args.len(),
                    });
                }
                let args = args
                    .iter()
                    .map(|a| self.expr(a).map(|(c, _)| c))
                    .collect::<Result<_, _>>()?;
                (
                    CExpr::Call {
                        var: v,
                        method: id,
                        args,
                    },
                    Kind::Any,
                )
            }
            Expr::Unary(op, inner) => {
                let (c, k) = self.expr(inner)?;
                let want = match op {
                    UnOp::Neg => Kind::Int,
                    UnOp::Not => Kind::Bool,
                };
                if !k.accepts(want) {
                    return Self::mismatch(e, format!("operand is {k}, expected {want}"));
                }
                (CExpr::Unary(*op, Box::new(c)), want)
            }
            Expr::Binary(op, l, r) => {
                let (lc, lk) = self.expr(l)?;
                let (rc, rk) = self.expr(r)?;
                let result = if op.is_equality() {
                    if !lk.comparable(rk) {
                        return Self::mismatch(e, format!("cannot compare {lk} with {rk}"));
                    }
                    Kind::Bool
                } else {
                    let (want, result) = if op.is_arithmetic() {
                        (Kind::Int, Kind::Int)
                    } else if op.is_relational() {
                        (Kind::Int, Kind::Bool)
                    } else {
                        (Kind::Bool, Kind::Bool)
                    };
                    if !lk.accepts(want) || !rk.accepts(want) {
                        return Self::mismatch(
                            e,
                            format!(
                                "`{}` needs {want} operands, found {lk} and {rk}",
                                op.symbol()
                            ),
                        );
                    }
                    result
                };
                (CExpr::Binary(*op, Box::new(lc), Box::new(rc)), result)
            }
        })
    }
}

/// Constructors of every domain class plus the fields the constraint reads.
/// A method call on a variable widens to every field the receiver's class
/// (and, for a starred domain, its subclasses) can hold.
pub fn compute_change_set(q: &TypedQuery, program: &Program) -> ChangeSet {
    let mut cs = ChangeSet::default();
    for v in &q.vars {
        cs.constructors.insert((v.class, v.star));
    }
    let mut stack = vec![&q.constraint];
    while let Some(e) = stack.pop() {
        match e {
            CExpr::Const(_) | CExpr::Var(_) => {}
            CExpr::Field { var, field } => {
                let v = &q.vars[*var];
                cs.field_writes.insert(FieldWatch {
                    class: v.class,
                    field: *field,
                    star: v.star,
                });
            }
            CExpr::Call { var, args, .. } => {
                let v = &q.vars[*var];
                let mut fields = program.all_fields(v.class);
                if v.star {
                    for &sub in program.subclasses(v.class) {
                        if sub != v.class {
                            fields.extend(program.class(sub).fields.iter().map(|f| FieldId {
                                class: sub,
                                slot: f.slot,
                            }));
                        }
                    }
                }
                for field in fields {
                    cs.field_writes.insert(FieldWatch {
                        class: v.class,
                        field,
                        star: v.star,
                    });
                }
                stack.extend(args);
            }
            CExpr::Unary(_, inner) => stack.push(inner),
            CExpr::Binary(_, l, r) => {
                stack.push(l);
                stack.push(r);
            }
        }
    }
    cs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qlang::parse_query;
    use crate::qvm::load_program;

    const SRC: &str = "\
class Main
  method main 0 1
    halt
  end
end
class Molecule
  field x int
  field y int
  field color int
  field next ref
end
class Molecule1 extends Molecule
  field extra int
end
class Output_Buffer
  field count_ int
  field data ref
  method count 0 1
    load 0
    getfield Output_Buffer.count_
    returnv
  end
end
";

    fn check(text: &str) -> Result<TypedQuery, TypeError> {
        typecheck(&parse_query(text).unwrap(), &load_program(SRC).unwrap())
    }

    #[test]
    fn resolves_inherited_fields() {
        let q = check("Molecule1 z. z.x > 350").unwrap();
        let CExpr::Binary(BinOp::Gt, l, _) = &q.constraint else {
            panic!()
        };
        let p = load_program(SRC).unwrap();
        assert_eq!(
            **l,
            CExpr::Field {
                var: 0,
                field: FieldId {
                    class: p.class_id("Molecule").unwrap(),
                    slot: 0
                }
            }
        );
    }

    #[test]
    fn errors() {
        assert_eq!(
            check("Molecul z. true").unwrap_err(),
            TypeError::UnknownClass("Molecul".into())
        );
        assert!(matches!(
            check("Molecule z; Molecule z1. z.x == z1").unwrap_err(),
            TypeError::KindMismatch { .. }
        ));
        assert!(matches!(
            check("Molecule z. z.w == 1").unwrap_err(),
            TypeError::UnknownField { .. }
        ));
        assert!(matches!(
            check("Molecule z. z.x").unwrap_err(),
            TypeError::NotBoolean(Kind::Int)
        ));
        assert!(matches!(
            check("Output_Buffer z. z.count(1) < 0").unwrap_err(),
            TypeError::Arity { .. }
        ));
        assert!(matches!(
            check("Molecule z. q.x == 1").unwrap_err(),
            TypeError::UnknownVariable(_)
        ));
        assert!(check("$Debug d. true").is_err());
    }

    #[test]
    fn ref_null_comparisons() {
        check("Molecule a b. a.next == null && a != b && a.next == b").unwrap();
        check("Output_Buffer z. z.count() == true || z.count() < 3").unwrap();
    }

    #[test]
    fn change_set_excludes_unread_fields() {
        let p = load_program(SRC).unwrap();
        let q = typecheck(
            &parse_query("Molecule* m1 m2. m1.x == m2.x && m1.y == m2.y && m1 != m2").unwrap(),
            &p,
        )
        .unwrap();
        let cs = compute_change_set(&q, &p);
        let mol = p.class_id("Molecule").unwrap();
        assert_eq!(cs.constructors, BTreeSet::from([(mol, true)]));
        let names: Vec<String> = cs
            .field_writes
            .iter()
            .map(|w| p.field_name(w.field))
            .collect();
        assert_eq!(names, ["Molecule.x", "Molecule.y"]);
        assert!(cs.field_writes.iter().all(|w| w.star && w.class == mol));
        let m1 = p.class_id("Molecule1").unwrap();
        let (color, _) = p.lookup_field(mol, "color").unwrap();
        let (x, _) = p.lookup_field(mol, "x").unwrap();
        assert!(cs.matches_write(&p, m1, x));
        assert!(!cs.matches_write(&p, m1, color));
    }

    #[test]
    fn method_call_widens_to_all_fields() {
        let p = load_program(SRC).unwrap();
        let q = typecheck(&parse_query("Output_Buffer z. z.count() < 0").unwrap(), &p).unwrap();
        let cs = compute_change_set(&q, &p);
        let ob = p.class_id("Output_Buffer").unwrap();
        let all: BTreeSet<FieldId> = p.all_fields(ob).into_iter().collect();
        let got: BTreeSet<FieldId> = cs.field_writes.iter().map(|w| w.field).collect();
        assert_eq!(got, all);
    }

    #[test]
    fn constant_constraint_has_no_field_writes() {
        let p = load_program(SRC).unwrap();
        let q = typecheck(&parse_query("Molecule m. false").unwrap(), &p).unwrap();
        let cs = compute_change_set(&q, &p);
        assert!(cs.field_writes.is_empty());
        assert_eq!(cs.constructors.len(), 1);
    }

    #[test]
    fn star_domain_membership() {
        let p = load_program(SRC).unwrap();
        let star = typecheck(&parse_query("Molecule* m. true").unwrap(), &p).unwrap();
        let plain = typecheck(&parse_query("Molecule m. true").unwrap(), &p).unwrap();
        let sub = p.class_id("Molecule1").unwrap();
        assert!(star.in_domain(&p, 0, sub));
        assert!(!plain.in_domain(&p, 0, sub));
    }
}
