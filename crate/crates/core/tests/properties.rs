mod common;

use std::sync::Arc;

use proptest::prelude::*;
use qbd::engine::{Engine, PlanChoice, Tuple};
use qbd::instrument::{instrument_program, site_table};
use qbd::qlang::{compile_query, parse_query};
use qbd::qvm::{load_program, FieldId, HookControl, HookHandler, ObjId, StepOutcome, Vm, VmConfig};

use common::{gen_program, gen_query, rng, GenLimits, Shape};

const SHAPES: [Shape; 4] = [
    Shape::Selection,
    Shape::Equijoin,
    Shape::Join,
    Shape::Triple,
];

fn small() -> GenLimits {
    GenLimits {
        max_ops: 300,
        ..GenLimits::default()
    }
}

fn run_plain(source: &str, gc_threshold: usize) -> (Vec<String>, StepOutcome, u64) {
    let p = load_program(source).unwrap();
    let mut vm = Vm::new(
        Arc::new(p),
        VmConfig {
            gc_threshold,
            ..VmConfig::default()
        },
    )
    .unwrap();
    let end = vm.run(None);
    (vm.output().to_vec(), end, vm.counters().reclaimed)
}

/// Records the brute-force result after every event the engine filtered
/// out, so it can be compared with the result before that event.
struct Sufficiency<'a> {
    engine: &'a mut Engine,
    id: u32,
    last: Vec<Tuple>,
    violations: Vec<String>,
}

impl Sufficiency<'_> {
    fn after(&mut self, vm: &Vm, filtered_before: u64, what: &str) {
        let now = self.engine.full_evaluate(vm, self.id).unwrap();
        let skipped = self.engine.stats().filtered + self.engine.stats().rejected > filtered_before;
        if skipped && now != self.last && self.violations.is_empty() {
            self.violations
                .push(format!("{what} changed the result without being processed"));
        }
        self.last = now;
    }
}

impl HookHandler for Sufficiency<'_> {
    fn field_write(&mut self, vm: &Vm, obj: ObjId, field: FieldId) -> HookControl {
        let s = self.engine.stats();
        let before = s.filtered + s.rejected;
        let c = self.engine.on_field_write(vm, obj, field);
        self.after(vm, before, "write");
        c
    }

    fn object_new(&mut self, vm: &Vm, obj: ObjId) -> HookControl {
        let c = self.engine.track_new(vm, obj);
        self.last = self.engine.full_evaluate(vm, self.id).unwrap();
        c
    }

    fn reclaimed(&mut self, vm: &Vm, dead: &[ObjId]) {
        self.engine.sweep(dead);
        self.last = self.engine.full_evaluate(vm, self.id).unwrap();
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn collection_never_changes_behaviour(seed in any::<u64>(), threshold in 1usize..12) {
        let g = gen_program(&mut rng(seed), small());
        let (out_gc, end_gc, reclaimed) = run_plain(&g.source, threshold);
        let (out, end, none) = run_plain(&g.source, usize::MAX);
        prop_assert_eq!(none, 0);
        prop_assert_eq!(end_gc, end);
        prop_assert_eq!(out_gc, out);
        // Anything allocated is either still live or was reclaimed once.
        let p = load_program(&g.source).unwrap();
        let mut vm = Vm::new(Arc::new(p), VmConfig { gc_threshold: threshold, ..VmConfig::default() }).unwrap();
        vm.run(None);
        let c = vm.counters();
        prop_assert_eq!(c.reclaimed, reclaimed);
        prop_assert_eq!(c.allocations, c.reclaimed + vm.live_count() as u64);
    }

    #[test]
    fn qasm_round_trips(seed in any::<u64>()) {
        let g = gen_program(&mut rng(seed), small());
        let p = load_program(&g.source).unwrap();
        let text = p.to_qasm();
        let again = load_program(&text).unwrap();
        prop_assert_eq!(again.to_qasm(), text);

        let (inst, report) = instrument_program(&p).unwrap();
        let emitted = inst.to_qasm();
        let reloaded = load_program(&emitted).unwrap();
        prop_assert!(reloaded.is_instrumented());
        prop_assert!(instrument_program(&reloaded).is_err());
        prop_assert_eq!(site_table(&reloaded).len(), report.putfield_sites + report.new_sites);
        prop_assert_eq!(
            report.instrumented_instructions,
            report.original_instructions + 7 * report.putfield_sites + 3 * report.new_sites
        );
        let mut a = Vm::new(Arc::new(reloaded), VmConfig::default()).unwrap();
        let mut b = Vm::new(Arc::new(p), VmConfig::default()).unwrap();
        prop_assert_eq!(a.run(None), b.run(None));
        prop_assert_eq!(a.output(), b.output());
        prop_assert_eq!(a.counters().events, b.counters().events);
    }

    #[test]
    fn queries_print_and_reparse(seed in any::<u64>(), shape in 0usize..4) {
        let mut r = rng(seed);
        let g = gen_program(&mut r, small());
        let text = gen_query(&mut r, &g, SHAPES[shape]);
        let q = parse_query(&text).unwrap();
        let printed = q.to_string();
        let q2 = parse_query(&printed).unwrap();
        prop_assert_eq!(&q2, &q);
        prop_assert_eq!(q2.to_string(), printed);
    }

    #[test]
    fn plans_agree_on_every_delta(seed in any::<u64>(), shape in 0usize..4) {
        let mut r = rng(seed);
        let g = gen_program(&mut r, small());
        let text = gen_query(&mut r, &g, SHAPES[shape]);
        let (p, _) = instrument_program(&load_program(&g.source).unwrap()).unwrap();
        let p = Arc::new(p);
        let mut streams = Vec::new();
        for choice in [PlanChoice::Auto, PlanChoice::ForceNested] {
            let mut vm = Vm::new(Arc::clone(&p), VmConfig { gc_threshold: 5, ..VmConfig::default() }).unwrap();
            let mut e = Engine::new(Arc::clone(&p));
            let (id, _) = e.activate(&vm, compile_query(&text, &p).unwrap(), choice, false).unwrap();
            vm.set_debug_enabled(true);
            prop_assert_eq!(vm.run_with(None, &mut e), StepOutcome::Halted);
            let s = e.stats();
            prop_assert_eq!(s.events, s.rejected + s.filtered + s.processed);
            let deltas: Vec<String> = e
                .take_outputs()
                .into_iter()
                .map(|o| format!("{o:?}"))
                .collect();
            streams.push((deltas, e.results(id).unwrap()));
        }
        prop_assert_eq!(&streams[0].0, &streams[1].0);
        prop_assert_eq!(&streams[0].1, &streams[1].1);
    }

    #[test]
    fn skipped_events_never_change_results(seed in any::<u64>(), shape in 0usize..4) {
        let mut r = rng(seed);
        let g = gen_program(&mut r, small());
        let text = gen_query(&mut r, &g, SHAPES[shape]);
        let (p, _) = instrument_program(&load_program(&g.source).unwrap()).unwrap();
        let p = Arc::new(p);
        let mut vm = Vm::new(Arc::clone(&p), VmConfig { gc_threshold: 7, ..VmConfig::default() }).unwrap();
        let mut e = Engine::new(Arc::clone(&p));
        let (id, _) = e.activate(&vm, compile_query(&text, &p).unwrap(), PlanChoice::Auto, false).unwrap();
        vm.set_debug_enabled(true);
        let mut h = Sufficiency { engine: &mut e, id, last: Vec::new(), violations: Vec::new() };
        prop_assert_eq!(vm.run_with(None, &mut h), StepOutcome::Halted);
        prop_assert!(h.violations.is_empty(), "{}: {:?}", text, h.violations);
    }
}
