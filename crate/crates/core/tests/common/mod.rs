//! Shared test support: random programs, random queries and a reference
//! evaluator that works from the parsed query text and the raw heap.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use qbd::engine::{Engine, QueryId, Tuple};
use qbd::qlang::{parse_query, BinOp, Expr, UnOp};
use qbd::qvm::{ClassId, FieldId, HookControl, HookHandler, ObjId, Program, Value, Vm};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Debug)]
pub struct GenClass {
    pub name: String,
    pub parent: Option<usize>,
    pub ints: Vec<String>,
    pub refs: Vec<String>,
    pub bools: Vec<String>,
    pub overrides_get: bool,
}

#[derive(Clone, Debug)]
pub struct GenProgram {
    pub source: String,
    pub classes: Vec<GenClass>,
    pub allocations: usize,
}

impl GenProgram {
    fn chain(&self, c: usize) -> Vec<usize> {
        let mut out = vec![c];
        let mut cur = self.classes[c].parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.classes[p].parent;
        }
        out
    }

    /// Fields visible on instances of class `c`, by kind.
    pub fn ints(&self, c: usize) -> Vec<String> {
        self.chain(c)
            .iter()
            .flat_map(|&k| self.classes[k].ints.clone())
            .collect()
    }

    pub fn refs(&self, c: usize) -> Vec<String> {
        self.chain(c)
            .iter()
            .flat_map(|&k| self.classes[k].refs.clone())
            .collect()
    }

    pub fn bools(&self, c: usize) -> Vec<String> {
        self.chain(c)
            .iter()
            .flat_map(|&k| self.classes[k].bools.clone())
            .collect()
    }

    fn root(&self, c: usize) -> usize {
        *self.chain(c).last().expect("nonempty")
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GenLimits {
    pub max_classes: usize,
    pub max_ops: usize,
    pub max_allocations: usize,
    pub slots: usize,
}

impl Default for GenLimits {
    fn default() -> Self {
        GenLimits {
            max_classes: 5,
            max_ops: 1500,
            max_allocations: 50,
            slots: 12,
        }
    }
}

/// A random straight-line program over up to `max_classes` classes. Every
/// object access is to a slot known to hold an object of a known class, so
/// generated programs never fault.
pub fn gen_program(r: &mut ChaCha8Rng, lim: GenLimits) -> GenProgram {
    let n = r.gen_range(1..=lim.max_classes);
    let mut classes: Vec<GenClass> = Vec::new();
    for i in 0..n {
        let parent = if i > 0 && r.gen_bool(0.5) {
            Some(r.gen_range(0..i))
        } else {
            None
        };
        let n_ints = if parent.is_none() {
            r.gen_range(1..=2)
        } else {
            r.gen_range(0..=2)
        };
        let ints = (0..n_ints).map(|j| format!("i{i}_{j}")).collect();
        let refs = (0..r.gen_range(0..=1))
            .map(|j| format!("r{i}_{j}"))
            .collect();
        let bools = (0..usize::from(r.gen_bool(0.3)))
            .map(|j| format!("b{i}_{j}"))
            .collect();
        classes.push(GenClass {
            name: format!("C{i}"),
            parent,
            ints,
            refs,
            bools,
            overrides_get: parent.is_some() && r.gen_bool(0.5),
        });
    }
    let mut g = GenProgram {
        source: String::new(),
        classes,
        allocations: 0,
    };

    let mut src = String::new();
    for (i, c) in g.classes.iter().enumerate() {
        match c.parent {
            Some(p) => src.push_str(&format!("class {} extends C{p}\n", c.name)),
            None => src.push_str(&format!("class {}\n", c.name)),
        }
        for f in &c.ints {
            src.push_str(&format!("  field {f} int\n"));
        }
        for f in &c.refs {
            src.push_str(&format!("  field {f} ref\n"));
        }
        for f in &c.bools {
            src.push_str(&format!("  field {f} bool\n"));
        }
        // Constructors chain to the parent and write a field, so creation
        // involves writes to objects no query can see yet.
        src.push_str("  method <init> 0 1\n");
        if let Some(p) = c.parent {
            src.push_str(&format!("    load 0\n    invoke C{p}.<init> 0\n"));
        }
        if let Some(f) = g.ints(i).first() {
            src.push_str(&format!(
                "    load 0\n    const {i}\n    putfield {}.{f}\n",
                c.name
            ));
        }
        src.push_str("    return\n  end\n");
        let ints = g.ints(i);
        if c.parent.is_none() {
            src.push_str(&format!(
                "  method get 0 1\n    load 0\n    getfield {}.{}\n    returnv\n  end\n",
                c.name, ints[0]
            ));
            src.push_str(&format!(
                "  method plus 1 2\n    load 0\n    getfield {n}.{f}\n    load 1\n    add\n    returnv\n  end\n",
                n = c.name,
                f = ints[0]
            ));
            src.push_str(&format!(
                "  method bump 0 1\n    load 0\n    load 0\n    getfield {n}.{f}\n    const 1\n    add\n    putfield {n}.{f}\n    return\n  end\n",
                n = c.name,
                f = ints[0]
            ));
        } else if c.overrides_get {
            let a = ints.last().expect("root has an int");
            src.push_str(&format!(
                "  method get 0 1\n    load 0\n    getfield {n}.{a}\n    const 2\n    mul\n    load 0\n    getfield {n}.{b}\n    sub\n    returnv\n  end\n",
                n = c.name,
                b = ints[0]
            ));
        }
        src.push_str("end\n");
    }

    let slots = lim.slots;
    let mut main = String::new();
    let mut held: Vec<Option<usize>> = vec![None; slots];
    let ops = r.gen_range(10..=lim.max_ops);
    let mut allocs = 0;
    for _ in 0..ops {
        let live: Vec<usize> = (0..slots).filter(|&s| held[s].is_some()).collect();
        let choice = r.gen_range(0..100);
        if live.is_empty() || (choice < 18 && allocs < lim.max_allocations) {
            if allocs >= lim.max_allocations {
                break;
            }
            let s = r.gen_range(0..slots);
            let c = r.gen_range(0..g.classes.len());
            main.push_str(&format!("    new C{c} 0\n    store {s}\n"));
            held[s] = Some(c);
            allocs += 1;
            continue;
        }
        let s = *live.choose(r).expect("nonempty");
        let c = held[s].expect("live");
        let cname = &g.classes[c].name;
        match choice {
            18..=57 => {
                let ints = g.ints(c);
                let f = ints.choose(r).expect("every class has an int");
                main.push_str(&format!("    load {s}\n"));
                if r.gen_bool(0.4) {
                    let t = *live.choose(r).expect("nonempty");
                    let tc = held[t].expect("live");
                    let tf = g.ints(tc).choose(r).cloned().expect("int");
                    main.push_str(&format!(
                        "    load {t}\n    getfield C{tc}.{tf}\n    const {}\n    add\n",
                        r.gen_range(-1..=1)
                    ));
                } else {
                    main.push_str(&format!("    const {}\n", r.gen_range(-2..=4)));
                }
                main.push_str(&format!("    putfield {cname}.{f}\n"));
            }
            58..=71 => {
                let refs = g.refs(c);
                let Some(f) = refs.choose(r) else { continue };
                main.push_str(&format!("    load {s}\n"));
                if r.gen_bool(0.25) {
                    main.push_str("    const null\n");
                } else {
                    main.push_str(&format!("    load {}\n", live.choose(r).expect("nonempty")));
                }
                main.push_str(&format!("    putfield {cname}.{f}\n"));
            }
            72..=77 => {
                let bools = g.bools(c);
                let Some(f) = bools.choose(r) else { continue };
                main.push_str(&format!(
                    "    load {s}\n    const {}\n    putfield {cname}.{f}\n",
                    r.gen_bool(0.5)
                ));
            }
            78..=85 => {
                let root = g.root(c);
                main.push_str(&format!("    load {s}\n    invoke C{root}.bump 0\n"));
            }
            86..=91 => {
                main.push_str(&format!("    const null\n    store {s}\n"));
                held[s] = None;
            }
            _ => {
                let f = g.ints(c).choose(r).cloned().expect("int");
                main.push_str(&format!(
                    "    load {s}\n    getfield {cname}.{f}\n    print\n"
                ));
            }
        }
    }
    src.push_str(&format!("class Main\n  method main 0 {slots}\n"));
    src.push_str(&main);
    src.push_str("    const 0\n    print\n    halt\n  end\nend\n");
    g.source = src;
    g.allocations = allocs;
    g
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Selection,
    Equijoin,
    Join,
    Triple,
}

/// A random well-typed query over `g`'s classes.
pub fn gen_query(r: &mut ChaCha8Rng, g: &GenProgram, shape: Shape) -> String {
    let nvars = match shape {
        Shape::Selection => 1,
        Shape::Equijoin | Shape::Join => 2,
        Shape::Triple => 3,
    };
    let vars: Vec<(String, usize, bool)> = (0..nvars)
        .map(|i| {
            (
                format!("v{i}"),
                r.gen_range(0..g.classes.len()),
                r.gen_bool(0.5),
            )
        })
        .collect();
    let decls: Vec<String> = vars
        .iter()
        .map(|(v, c, star)| format!("C{c}{} {v}", if *star { "*" } else { "" }))
        .collect();

    let mut conj = Vec::new();
    if shape == Shape::Equijoin {
        let (a, ca, _) = &vars[0];
        let (b, cb, _) = &vars[1];
        let (ra, rb) = (g.refs(*ca), g.refs(*cb));
        let eq = if !ra.is_empty() && !rb.is_empty() && r.gen_bool(0.25) {
            format!("{a}.{} == {b}.{}", ra[0], rb[0])
        } else if !ra.is_empty() && r.gen_bool(0.2) {
            format!("{a}.{} == {b}", ra[0])
        } else {
            let fa = g.ints(*ca).choose(r).cloned().expect("int");
            let fb = g.ints(*cb).choose(r).cloned().expect("int");
            if r.gen_bool(0.5) {
                format!("{a}.{fa} == {b}.{fb}")
            } else {
                format!("{b}.{fb} + 1 == {a}.{fa} * 1")
            }
        };
        conj.push(eq);
    }
    let extra = r.gen_range(if conj.is_empty() { 1 } else { 0 }..=2);
    for _ in 0..extra {
        let mut a = gen_atom(r, g, &vars);
        if r.gen_bool(0.2) {
            a = format!("({a} || {})", gen_atom(r, g, &vars));
        }
        if r.gen_bool(0.1) {
            a = format!("!({a})");
        }
        conj.push(a);
    }
    if shape != Shape::Selection && r.gen_bool(0.5) {
        conj.push(format!("{} != {}", vars[0].0, vars[1].0));
    }
    conj.shuffle(r);
    format!("{}. {}", decls.join("; "), conj.join(" && "))
}

fn gen_atom(r: &mut ChaCha8Rng, g: &GenProgram, vars: &[(String, usize, bool)]) -> String {
    let (v, c, _) = vars.choose(r).expect("vars");
    let (w, wc, _) = vars.choose(r).expect("vars");
    let f = g.ints(*c).choose(r).cloned().expect("int");
    let wf = g.ints(*wc).choose(r).cloned().expect("int");
    let rel = ["<", "<=", ">", ">=", "==", "!="].choose(r).expect("ops");
    let k = r.gen_range(-1..=4);
    match r.gen_range(0..11) {
        0 | 1 => format!("{v}.{f} {rel} {k}"),
        2 => format!("{v}.{f} + {w}.{wf} {rel} {k}"),
        3 => format!("{v}.{f} % 2 == {}", r.gen_range(0..=1)),
        4 => format!("{v}.{f} / {w}.{wf} {rel} {}", r.gen_range(0..=1)),
        5 => format!("{v}.get() {rel} {k}"),
        6 => format!("{v}.plus({w}.{wf}) {rel} {k}"),
        7 => match g.refs(*c).choose(r) {
            Some(rf) if r.gen_bool(0.5) => format!("{v}.{rf} == null"),
            Some(rf) => format!("{v}.{rf} == {w}"),
            None => format!("{v} == {w}"),
        },
        8 => match g.bools(*c).choose(r) {
            Some(b) => format!("{v}.{b}"),
            None => format!("-{v}.{f} < {k}"),
        },
        9 => format!("{v}.{f} * 2 - {w}.{wf} {rel} {k}"),
        _ => format!("{v}.{f} {rel} {w}.{wf}"),
    }
}

/// Reference evaluator: walks the parsed query against live, fully
/// constructed objects. It does not use the engine or the type checker.
pub struct Oracle {
    vars: Vec<(String, ClassId, bool)>,
    constraint: Expr,
}

impl Oracle {
    pub fn new(text: &str, program: &Program) -> Oracle {
        let q = parse_query(text).expect("oracle query parses");
        let mut vars = Vec::new();
        for d in &q.decls {
            let c = program.class_id(&d.class).expect("class exists");
            for v in &d.vars {
                vars.push((v.clone(), c, d.star));
            }
        }
        Oracle {
            vars,
            constraint: q.constraint,
        }
    }

    pub fn evaluate(&self, vm: &Vm) -> Vec<Tuple> {
        let program = vm.program();
        let pending = vm.under_construction();
        let live: Vec<(ObjId, ClassId)> = vm
            .live_objects()
            .filter(|(o, _)| !pending.contains(o))
            .collect();
        let domains: Vec<Vec<ObjId>> = self
            .vars
            .iter()
            .map(|(_, c, star)| {
                live.iter()
                    .filter(|(_, oc)| {
                        if *star {
                            program.is_subclass_of(*oc, *c)
                        } else {
                            oc == c
                        }
                    })
                    .map(|(o, _)| *o)
                    .collect()
            })
            .collect();
        let mut out = Vec::new();
        let mut tuple = Vec::with_capacity(self.vars.len());
        self.enumerate(vm, &domains, &mut tuple, &mut out);
        out.sort();
        out
    }

    fn enumerate(
        &self,
        vm: &Vm,
        domains: &[Vec<ObjId>],
        tuple: &mut Vec<ObjId>,
        out: &mut Vec<Tuple>,
    ) {
        if tuple.len() == domains.len() {
            if self.eval(vm, &self.constraint, tuple) == Some(Value::Bool(true)) {
                out.push(tuple.clone());
            }
            return;
        }
        for &o in &domains[tuple.len()] {
            tuple.push(o);
            self.enumerate(vm, domains, tuple, out);
            tuple.pop();
        }
    }

    fn var(&self, name: &str) -> usize {
        self.vars
            .iter()
            .position(|(v, _, _)| v == name)
            .expect("declared")
    }

    fn eval(&self, vm: &Vm, e: &Expr, t: &[ObjId]) -> Option<Value> {
        let program = vm.program();
        Some(match e {
            Expr::Int(i) => Value::Int(*i),
            Expr::Bool(b) => Value::Bool(*b),
            Expr::Null => Value::Null,
            Expr::Var(v) => Value::Ref(t[self.var(v)]),
            Expr::Field { var, field } => {
                let o = t[self.var(var)];
                let (fid, _): (FieldId, _) = program.lookup_field(vm.class_of(o)?, field)?;
                vm.field(o, fid)?
            }
            Expr::Call { var, method, args } => {
                let i = self.var(var);
                let mut vals = Vec::new();
                for a in args {
                    vals.push(self.eval(vm, a, t)?);
                }
                let m = program.lookup_method(self.vars[i].1, method)?;
                vm.call_pure(t[i], m, &vals, 100_000).ok()?.value
            }
            Expr::Unary(UnOp::Neg, x) => match self.eval(vm, x, t)? {
                Value::Int(i) => Value::Int(i.wrapping_neg()),
                _ => return None,
            },
            Expr::Unary(UnOp::Not, x) => match self.eval(vm, x, t)? {
                Value::Bool(b) => Value::Bool(!b),
                _ => return None,
            },
            Expr::Binary(BinOp::And, l, r) => match self.eval(vm, l, t)? {
                Value::Bool(false) => Value::Bool(false),
                Value::Bool(true) => match self.eval(vm, r, t)? {
                    b @ Value::Bool(_) => b,
                    _ => return None,
                },
                _ => return None,
            },
            Expr::Binary(BinOp::Or, l, r) => match self.eval(vm, l, t)? {
                Value::Bool(true) => Value::Bool(true),
                Value::Bool(false) => match self.eval(vm, r, t)? {
                    b @ Value::Bool(_) => b,
                    _ => return None,
                },
                _ => return None,
            },
            Expr::Binary(op, l, r) => {
                let a = self.eval(vm, l, t)?;
                let b = self.eval(vm, r, t)?;
                let refish = |v: Value| matches!(v, Value::Ref(_) | Value::Null);
                match (op, a, b) {
                    (BinOp::Eq | BinOp::Ne, a, b) => {
                        let comparable = matches!(
                            (a, b),
                            (Value::Int(_), Value::Int(_)) | (Value::Bool(_), Value::Bool(_))
                        ) || (refish(a) && refish(b));
                        if !comparable {
                            return None;
                        }
                        Value::Bool((a == b) == (*op == BinOp::Eq))
                    }
                    (_, Value::Int(x), Value::Int(y)) => match op {
                        BinOp::Add => Value::Int(x.wrapping_add(y)),
                        BinOp::Sub => Value::Int(x.wrapping_sub(y)),
                        BinOp::Mul => Value::Int(x.wrapping_mul(y)),
                        BinOp::Div => Value::Int(
                            x.checked_div(y)
                                .or_else(|| (y != 0).then(|| x.wrapping_div(y)))?,
                        ),
                        BinOp::Mod => Value::Int(
                            x.checked_rem(y)
                                .or_else(|| (y != 0).then(|| x.wrapping_rem(y)))?,
                        ),
                        BinOp::Lt => Value::Bool(x < y),
                        BinOp::Le => Value::Bool(x <= y),
                        BinOp::Gt => Value::Bool(x > y),
                        BinOp::Ge => Value::Bool(x >= y),
                        _ => return None,
                    },
                    _ => return None,
                }
            }
        })
    }
}

/// Hook handler that forwards to an engine and, after every event, compares
/// each active query's maintained result against a brute-force evaluation
/// and the reference oracle.
pub struct Checker<'a> {
    pub engine: &'a mut Engine,
    pub oracles: Vec<(QueryId, Oracle)>,
    pub checks: u64,
    pub mismatches: Vec<String>,
}

impl<'a> Checker<'a> {
    pub fn new(engine: &'a mut Engine) -> Self {
        Checker {
            engine,
            oracles: Vec::new(),
            checks: 0,
            mismatches: Vec::new(),
        }
    }

    pub fn check(&mut self, vm: &Vm, when: &str) {
        for (id, oracle) in &self.oracles {
            let Ok(maintained) = self.engine.results(*id) else {
                continue;
            };
            let brute = self.engine.full_evaluate(vm, *id).expect("active");
            let reference = oracle.evaluate(vm);
            self.checks += 1;
            if (maintained != brute || maintained != reference) && self.mismatches.len() < 5 {
                self.mismatches.push(format!(
                    "q{id} after {when} (event {}): maintained {maintained:?}, full {brute:?}, oracle {reference:?}",
                    vm.counters().events
                ));
            }
        }
    }
}

impl HookHandler for Checker<'_> {
    fn field_write(&mut self, vm: &Vm, obj: ObjId, field: FieldId) -> HookControl {
        let c = self.engine.on_field_write(vm, obj, field);
        self.check(vm, "write");
        c
    }

    fn object_new(&mut self, vm: &Vm, obj: ObjId) -> HookControl {
        let c = self.engine.track_new(vm, obj);
        self.check(vm, "allocation");
        c
    }

    fn reclaimed(&mut self, vm: &Vm, dead: &[ObjId]) {
        self.engine.sweep(dead);
        self.check(vm, "sweep");
    }
}

/// Uninstrumented reference run: output lines.
pub fn reference_output(source: &str) -> Vec<String> {
    let p = qbd::qvm::load_program(source).expect("loads");
    let mut vm = Vm::new(Arc::new(p), Default::default()).expect("vm");
    vm.run(None);
    vm.output().to_vec()
}

pub fn tuple_set(ts: &[Tuple]) -> BTreeSet<Tuple> {
    ts.iter().cloned().collect()
}
