//! Generated QASM workloads used by the benches, examples and tests.
//!
//! Every generator is deterministic. The checked-in `fixtures/*.qasm` files
//! are the outputs of [`Fixture::standard`] and a test keeps them in sync.

use std::fmt::Write as _;

/// A program together with the queries it was written for.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub name: &'static str,
    pub source: String,
    /// Query used by the `QueryActive` bench tier.
    pub query: &'static str,
    /// Extra queries worth trying against this program.
    pub other_queries: &'static [&'static str],
}

pub const MICRO_QUERY: &str = "Test5 z. z.x < 0";
pub const MOLECULE_QUERY: &str = "Molecule* m1 m2. m1.x == m2.x && m1.y == m2.y && m1 != m2";
pub const AST_QUERY: &str = "BinaryExpression* e1, e2. e1.right == e2.right && e1 != e2";
pub const FIELDEXPR_QUERY: &str =
    "FieldExpression fe; FieldDefinition fd. fe.id == fd.name && fe.type == fd.type && fe.field != fd";
pub const HASHJOIN_QUERY: &str = "Left l; Right r. l.k == r.k";
pub const CHURN_QUERY: &str = "Temp t. t.v < 0";

impl Fixture {
    /// The default-sized fixtures, in a fixed order.
    pub fn standard() -> Vec<Fixture> {
        vec![
            Fixture::micro(100_000),
            Fixture::molecules(&MoleculeParams::default()),
            Fixture::astshare(&AstParams::default()),
            Fixture::fieldexpr(200, Some(150)),
            Fixture::hashjoin(1000, 10, 2),
            Fixture::churn(100_000, 50),
        ]
    }

    /// Look a standard fixture up by name.
    pub fn by_name(name: &str) -> Option<Fixture> {
        Fixture::standard().into_iter().find(|f| f.name == name)
    }

    /// A tight loop writing one field per iteration.
    pub fn micro(iterations: i64) -> Fixture {
        let mut a = Asm::default();
        a.line("class Test5");
        a.line("  field x int");
        a.line("end");
        a.line("class Main");
        a.line("  method main 0 2");
        a.code(&["new Test5 0", "store 0", "const 0", "store 1"]);
        a.label("loop", "load 1");
        a.code(&[&format!("const {iterations}"), "lt", "ifeq done"]);
        a.code(&["load 0", "load 1", "putfield Test5.x"]);
        a.code(&["load 1", "const 1", "add", "store 1", "goto loop"]);
        a.label("done", "load 0");
        a.code(&["getfield Test5.x", "print", "halt"]);
        a.line("  end");
        a.line("end");
        Fixture {
            name: "micro",
            source: a.finish(),
            query: MICRO_QUERY,
            other_queries: &[],
        }
    }

    /// Gas tank simulation. Molecules move on a torus; all but two travel
    /// along their own row so they never meet. The remaining pair crosses
    /// paths exactly once, after `collide_at` moves, when seeded.
    pub fn molecules(p: &MoleculeParams) -> Fixture {
        let width = 1000;
        let height = (p.molecules + p.steps) as i64 + 10;
        let mut a = Asm::default();
        a.line("class Molecule");
        for f in ["x", "y", "dx", "dy", "color"] {
            a.line(&format!("  field {f} int"));
        }
        a.line("  field next ref");
        a.line("  method <init> 5 6");
        for (i, f) in ["x", "y", "dx", "dy", "next"].iter().enumerate() {
            a.code(&[
                "load 0",
                &format!("load {}", i + 1),
                &format!("putfield Molecule.{f}"),
            ]);
        }
        a.code(&["return"]);
        a.line("  end");
        a.line("  method move 0 1");
        for (pos, vel, modulus) in [("x", "dx", width), ("y", "dy", height)] {
            a.code(&[
                "load 0",
                "load 0",
                &format!("getfield Molecule.{pos}"),
                "load 0",
                &format!("getfield Molecule.{vel}"),
                "add",
                &format!("const {modulus}"),
                "mod",
                &format!("putfield Molecule.{pos}"),
            ]);
        }
        a.code(&[
            "load 0",
            "load 0",
            "getfield Molecule.color",
            "const 1",
            "add",
            "const 3",
            "mod",
            "putfield Molecule.color",
            "return",
        ]);
        a.line("  end");
        a.line("end");
        a.line("class Ion extends Molecule");
        a.line("  field charge int");
        a.line("  method <init> 5 6");
        a.code(&["load 0", "load 1", "load 2", "load 3", "load 4", "load 5"]);
        a.code(&[
            "invoke Molecule.<init> 5",
            "load 0",
            "const 1",
            "putfield Ion.charge",
            "return",
        ]);
        a.line("  end");
        a.line("end");

        a.line("class Main");
        a.line("  method main 0 3");
        a.code(&["const null", "store 0"]);
        let movers = p.molecules.saturating_sub(2);
        let spawn = |a: &mut Asm, class: &str, x: i64, y: i64, dx: i64, dy: i64| {
            a.code(&[
                &format!("const {x}"),
                &format!("const {y}"),
                &format!("const {dx}"),
                &format!("const {dy}"),
                "load 0",
                &format!("new {class} 5"),
                "store 0",
            ]);
        };
        for i in 0..movers as i64 {
            let class = if i % 4 == 3 { "Ion" } else { "Molecule" };
            spawn(&mut a, class, (i * 37) % width, i, 1 + i % 5, 0);
        }
        if p.molecules >= 2 {
            // The crossing pair: one climbs a private column from the row
            // just above the movers, the other runs along a private row.
            let k = p.collide_at.unwrap_or(0) as i64;
            let base = movers as i64;
            let column = width - 1;
            let (row, start) = match p.collide_at {
                Some(_) => (base + k, column - k),
                // Unseeded: the runner's row is never reached by the climber.
                None => (height - 1, column - 1),
            };
            spawn(&mut a, "Molecule", column, base, 0, 1);
            spawn(&mut a, "Ion", start.rem_euclid(width), row, 1, 0);
        }
        a.code(&["const 0", "store 1"]);
        a.label("step", "load 1");
        a.code(&[
            &format!("const {}", p.steps),
            "lt",
            "ifeq done",
            "load 0",
            "store 2",
        ]);
        a.label("each", "load 2");
        a.code(&["const null", "eq", "ifne next"]);
        a.code(&["load 2", "invoke Molecule.move 0"]);
        a.code(&["load 2", "getfield Molecule.next", "store 2", "goto each"]);
        a.label("next", "load 1");
        a.code(&["const 1", "add", "store 1", "goto step"]);
        a.label("done", "load 0");
        a.code(&[
            "getfield Molecule.x",
            "print",
            "load 0",
            "getfield Molecule.y",
            "print",
            "halt",
        ]);
        a.line("  end");
        a.line("end");
        Fixture {
            name: "molecules",
            source: a.finish(),
            query: MOLECULE_QUERY,
            other_queries: &[
                "Molecule* m. m.x < 0 || m.x > 999 || m.y < 0",
                "Molecule m1; Ion m2. m1.x == m2.x && m1.y == m2.y",
            ],
        }
    }

    /// Expression-tree builder with rewrite passes. When seeded, one pass
    /// hands the same child to two parents; the next pass repairs it.
    pub fn astshare(p: &AstParams) -> Fixture {
        let mut a = Asm::default();
        a.line("class Expression");
        a.line("  field type int");
        a.line("  method isBinary 0 1");
        a.code(&["const false", "returnv"]);
        a.line("  end");
        a.line("end");
        a.line("class IdentifierExpression extends Expression");
        a.line("  field id int");
        a.line("  method <init> 1 2");
        a.code(&[
            "load 0",
            "load 1",
            "putfield IdentifierExpression.id",
            "return",
        ]);
        a.line("  end");
        a.line("end");
        a.line("class BinaryExpression extends Expression");
        a.line("  field left ref");
        a.line("  field right ref");
        a.line("  method <init> 2 3");
        a.code(&["load 0", "load 1", "putfield BinaryExpression.left"]);
        a.code(&[
            "load 0",
            "load 2",
            "putfield BinaryExpression.right",
            "return",
        ]);
        a.line("  end");
        a.line("  method isBinary 0 1");
        a.code(&["const true", "returnv"]);
        a.line("  end");
        a.line("end");
        for sub in ["AssignAddExpression", "DivideExpression"] {
            a.line(&format!("class {sub} extends BinaryExpression"));
            a.line("  method <init> 2 3");
            a.code(&[
                "load 0",
                "load 1",
                "load 2",
                "invoke BinaryExpression.<init> 2",
                "return",
            ]);
            a.line("  end");
            a.line("end");
        }

        // locals: 0 root, 1 i, 2 node, 3 pass, 4 counter, 5 previous right
        a.line("class Main");
        a.line("  method main 0 6");
        a.code(&[
            "const 0",
            "new IdentifierExpression 1",
            "store 0",
            "const 1",
            "store 1",
        ]);
        a.label("build", "load 1");
        a.code(&[&format!("const {}", p.nodes), "le", "ifeq built"]);
        a.code(&["load 0", "load 1", "new IdentifierExpression 1"]);
        a.code(&["load 1", "const 2", "mod", "ifeq divide"]);
        a.code(&["new AssignAddExpression 2", "goto made"]);
        a.label("divide", "new DivideExpression 2");
        a.label("made", "store 0");
        a.code(&["load 1", "const 1", "add", "store 1", "goto build"]);

        a.label("built", "const 0");
        a.code(&["store 3", "const 0", "store 4"]);
        a.label("pass", "load 3");
        a.code(&[&format!("const {}", p.passes), "lt", "ifeq finish"]);
        a.code(&["load 0", "store 2", "const null", "store 5"]);
        a.label("walk", "load 2");
        a.code(&["invoke Expression.isBinary 0", "ifeq walked"]);
        // Type-check the node: writes outside the query's change set.
        a.code(&["load 2", "load 3", "putfield Expression.type"]);
        let bug = p.share_at.map(|v| v as i64).unwrap_or(-1);
        a.code(&["load 4", &format!("const {bug}"), "eq", "ifeq fresh"]);
        a.code(&[
            "load 2",
            "load 5",
            "putfield BinaryExpression.right",
            "goto rewired",
        ]);
        a.label("fresh", "load 2");
        a.code(&[
            "load 2",
            "getfield BinaryExpression.right",
            "getfield IdentifierExpression.id",
        ]);
        a.code(&[
            "const 1",
            "add",
            "new IdentifierExpression 1",
            "putfield BinaryExpression.right",
        ]);
        a.label("rewired", "load 2");
        a.code(&["getfield BinaryExpression.right", "store 5"]);
        a.code(&["load 4", "const 1", "add", "store 4"]);
        a.code(&[
            "load 2",
            "getfield BinaryExpression.left",
            "store 2",
            "goto walk",
        ]);
        a.label("walked", "load 3");
        a.code(&["const 1", "add", "store 3", "goto pass"]);
        a.label("finish", "load 4");
        a.code(&["print", "load 0", "getfield BinaryExpression.right"]);
        a.code(&["getfield IdentifierExpression.id", "print", "halt"]);
        a.line("  end");
        a.line("end");
        Fixture {
            name: "astshare",
            source: a.finish(),
            query: AST_QUERY,
            other_queries: &["IdentifierExpression e. e.id > 100000"],
        }
    }

    /// Symbol resolution: `defs` field definitions and one field expression
    /// per definition. When `duplicate_after` is set, a second definition of
    /// an existing name is created after that many expressions resolve.
    pub fn fieldexpr(defs: usize, duplicate_after: Option<usize>) -> Fixture {
        let mut a = Asm::default();
        a.line("class FieldDefinition");
        a.line("  field name int");
        a.line("  field type int");
        a.line("  field next ref");
        a.line("  method <init> 3 4");
        a.code(&["load 0", "load 1", "putfield FieldDefinition.name"]);
        a.code(&["load 0", "load 2", "putfield FieldDefinition.type"]);
        a.code(&[
            "load 0",
            "load 3",
            "putfield FieldDefinition.next",
            "return",
        ]);
        a.line("  end");
        a.line("end");
        a.line("class FieldExpression");
        a.line("  field id int");
        a.line("  field type int");
        a.line("  field field ref");
        a.line("  method <init> 3 4");
        a.code(&["load 0", "load 1", "putfield FieldExpression.id"]);
        a.code(&["load 0", "load 2", "putfield FieldExpression.type"]);
        a.code(&[
            "load 0",
            "load 3",
            "putfield FieldExpression.field",
            "return",
        ]);
        a.line("  end");
        a.line("end");

        // locals: 0 def list, 1 i, 2 def cursor, 3 expr, 4 resolved count
        a.line("class Main");
        a.line("  method main 0 5");
        a.code(&["const null", "store 0", "const 0", "store 1"]);
        a.label("defs", "load 1");
        a.code(&[&format!("const {defs}"), "lt", "ifeq resolve"]);
        a.code(&[
            "load 1",
            "load 1",
            "const 7",
            "mod",
            "load 0",
            "new FieldDefinition 3",
            "store 0",
        ]);
        a.code(&["load 1", "const 1", "add", "store 1", "goto defs"]);
        a.label("resolve", "load 0");
        a.code(&["store 2", "const 0", "store 4"]);
        a.label("expr", "load 2");
        a.code(&["const null", "eq", "ifne done"]);
        a.code(&[
            "load 2",
            "getfield FieldDefinition.name",
            "load 2",
            "getfield FieldDefinition.type",
        ]);
        a.code(&["load 2", "new FieldExpression 3", "store 3"]);
        a.code(&["load 4", "const 1", "add", "store 4"]);
        let dup = duplicate_after.map(|v| v as i64).unwrap_or(-1);
        a.code(&["load 4", &format!("const {dup}"), "eq", "ifeq advance"]);
        a.code(&[
            "load 3",
            "getfield FieldExpression.id",
            "load 3",
            "getfield FieldExpression.type",
        ]);
        a.code(&["load 0", "new FieldDefinition 3", "store 0"]);
        a.label("advance", "load 2");
        a.code(&["getfield FieldDefinition.next", "store 2", "goto expr"]);
        a.label("done", "load 4");
        a.code(&["print", "halt"]);
        a.line("  end");
        a.line("end");
        Fixture {
            name: "fieldexpr",
            source: a.finish(),
            query: FIELDEXPR_QUERY,
            other_queries: &["FieldExpression fe. fe.field == null"],
        }
    }

    /// Two lists of `n` keyed objects; only `matches` keys are shared. Each
    /// round bumps every key on the left, then every key on the right.
    pub fn hashjoin(n: usize, matches: usize, rounds: usize) -> Fixture {
        let n = n as i64;
        let stride = if matches == 0 {
            1
        } else {
            (n / matches as i64).max(1)
        };
        let mut a = Asm::default();
        for c in ["Left", "Right"] {
            a.line(&format!("class {c}"));
            a.line("  field k int");
            a.line("  field next ref");
            a.line("  method <init> 2 3");
            a.code(&["load 0", "load 1", &format!("putfield {c}.k")]);
            a.code(&["load 0", "load 2", &format!("putfield {c}.next"), "return"]);
            a.line("  end");
            a.line("end");
        }
        // locals: 0 left list, 1 right list, 2 i, 3 cursor, 4 round
        a.line("class Main");
        a.line("  method main 0 5");
        a.code(&[
            "const null",
            "store 0",
            "const null",
            "store 1",
            "const 0",
            "store 2",
        ]);
        a.label("fill", "load 2");
        a.code(&[&format!("const {n}"), "lt", "ifeq filled"]);
        a.code(&["load 2", "load 0", "new Left 2", "store 0"]);
        // Right keys: i when i is a multiple of the stride and below
        // matches * stride, otherwise i + 10n (never equal to a left key).
        a.code(&[
            "load 2",
            "load 2",
            &format!("const {stride}"),
            "mod",
            "const 0",
            "eq",
        ]);
        a.code(&[
            "load 2",
            &format!("const {}", stride * matches as i64),
            "lt",
            "and",
        ]);
        a.code(&["ifne shared", &format!("const {}", 10 * n), "add"]);
        a.label("shared", "load 1");
        a.code(&["new Right 2", "store 1"]);
        a.code(&["load 2", "const 1", "add", "store 2", "goto fill"]);
        a.label("filled", "const 0");
        a.code(&["store 4"]);
        a.label("round", "load 4");
        a.code(&[&format!("const {rounds}"), "lt", "ifeq done"]);
        a.code(&["load 0", "store 3"]);
        for (c, after) in [("Left", "load 1"), ("Right", "load 4")] {
            a.label(&format!("bump{c}"), "load 3");
            a.code(&["const null", "eq", &format!("ifne bumped{c}")]);
            a.code(&[
                "load 3",
                "load 3",
                &format!("getfield {c}.k"),
                "const 1",
                "add",
            ]);
            a.code(&[
                &format!("putfield {c}.k"),
                "load 3",
                &format!("getfield {c}.next"),
            ]);
            a.code(&["store 3", &format!("goto bump{c}")]);
            a.label(&format!("bumped{c}"), after);
            if c == "Left" {
                a.code(&["store 3"]);
            }
        }
        a.code(&["const 1", "add", "store 4", "goto round"]);
        a.label("done", "load 0");
        a.code(&["getfield Left.k", "print", "halt"]);
        a.line("  end");
        a.line("end");
        Fixture {
            name: "hashjoin",
            source: a.finish(),
            query: HASHJOIN_QUERY,
            other_queries: &["Left l; Right r. l.k < r.k && r.k < 3"],
        }
    }

    /// Allocation churn: `allocations` short-lived objects, at most `window`
    /// of them reachable at any time.
    pub fn churn(allocations: i64, window: i64) -> Fixture {
        let mut a = Asm::default();
        a.line("class Temp");
        a.line("  field v int");
        a.line("  field next ref");
        a.line("  method <init> 2 3");
        a.code(&["load 0", "load 1", "putfield Temp.v"]);
        a.code(&["load 0", "load 2", "putfield Temp.next", "return"]);
        a.line("  end");
        a.line("end");
        // locals: 0 list, 1 i, 2 fill count, 3 fresh object, 4 sum
        a.line("class Main");
        a.line("  method main 0 5");
        a.code(&[
            "const null",
            "store 0",
            "const 0",
            "store 1",
            "const 0",
            "store 2",
        ]);
        a.code(&["const 0", "store 4"]);
        a.label("loop", "load 1");
        a.code(&[&format!("const {allocations}"), "lt", "ifeq done"]);
        a.code(&["load 1", "load 0", "new Temp 2", "store 3"]);
        a.code(&["load 3", "load 1", "const 2", "mul", "putfield Temp.v"]);
        a.code(&[
            "load 4",
            "load 3",
            "getfield Temp.v",
            "add",
            "const 1000003",
            "mod",
            "store 4",
        ]);
        a.code(&["load 3", "store 0", "load 2", "const 1", "add", "store 2"]);
        a.code(&["load 2", &format!("const {window}"), "lt", "ifne kept"]);
        a.code(&["const null", "store 0", "const 0", "store 2"]);
        a.label("kept", "load 1");
        a.code(&["const 1", "add", "store 1", "goto loop"]);
        a.label("done", "load 4");
        a.code(&["print", "halt"]);
        a.line("  end");
        a.line("end");
        Fixture {
            name: "churn",
            source: a.finish(),
            query: CHURN_QUERY,
            other_queries: &[],
        }
    }
}

#[derive(Clone, Debug)]
pub struct MoleculeParams {
    pub molecules: usize,
    pub steps: usize,
    /// Move count after which the crossing pair shares a cell.
    pub collide_at: Option<usize>,
}

impl Default for MoleculeParams {
    fn default() -> Self {
        MoleculeParams {
            molecules: 100,
            steps: 400,
            collide_at: Some(37),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AstParams {
    pub nodes: usize,
    pub passes: usize,
    /// Rewrite index (counted over all passes) that reuses the previous
    /// node's child instead of a fresh one.
    pub share_at: Option<usize>,
}

impl Default for AstParams {
    fn default() -> Self {
        AstParams {
            nodes: 300,
            passes: 20,
            share_at: Some(2_345),
        }
    }
}

#[derive(Default)]
struct Asm {
    out: String,
}

impl Asm {
    fn line(&mut self, s: &str) {
        self.out.push_str(s);
        self.out.push('\n');
    }

    fn code(&mut self, instrs: &[&str]) {
        for i in instrs {
            let _ = writeln!(self.out, "    {i}");
        }
    }

    fn label(&mut self, name: &str, instr: &str) {
        let _ = writeln!(self.out, "  {name}: {instr}");
    }

    fn finish(self) -> String {
        self.out
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::qvm::{load_program, StepOutcome, Vm, VmConfig};

    fn run(f: &Fixture) -> Vm {
        let program = load_program(&f.source).unwrap_or_else(|e| panic!("{}: {e}", f.name));
        let mut vm = Vm::new(Arc::new(program), VmConfig::default()).unwrap();
        assert_eq!(vm.run(None), StepOutcome::Halted, "{}", f.name);
        vm
    }

    #[test]
    fn standard_fixtures_halt() {
        for f in Fixture::standard() {
            let vm = run(&f);
            assert!(!vm.output().is_empty(), "{}", f.name);
            crate::qlang::compile_query(f.query, vm.program()).unwrap();
            for q in f.other_queries {
                crate::qlang::compile_query(q, vm.program()).unwrap();
            }
        }
    }

    #[test]
    fn micro_writes_once_per_iteration() {
        let vm = run(&Fixture::micro(1234));
        assert_eq!(vm.counters().putfields, 1234);
        assert_eq!(vm.output(), ["1233"]);
    }

    #[test]
    fn churn_allocates_as_asked() {
        let vm = run(&Fixture::churn(5000, 20));
        assert_eq!(vm.counters().allocations, 5000);
    }
}
