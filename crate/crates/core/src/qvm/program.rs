//! Linked program image: class table, resolved instruction streams and the
//! lookup helpers the interpreter, the instrumenter and the query type checker
//! share.

use std::collections::HashMap;

use serde::Serialize;

use super::value::{FieldKind, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ClassId(pub u32);

impl ClassId {
    /// Root of every hierarchy.
    pub const OBJECT: ClassId = ClassId(0);
    /// The intrinsic `$Debug` class.
    pub const DEBUG: ClassId = ClassId(1);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// An instance field, identified by its declaring class and its slot in the
/// flattened object layout. Subclasses share the prefix layout of their
/// superclass, so the slot is valid for every object of a subclass too.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct FieldId {
    pub class: ClassId,
    pub slot: u16,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct StaticId {
    pub class: ClassId,
    pub index: u16,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct MethodId {
    pub class: ClassId,
    pub index: u16,
}

/// Interned method name, used for virtual dispatch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Symbol(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Instr {
    Const(Value),
    Load(u16),
    Store(u16),
    Dup,
    Dup2,
    Pop,
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Neg,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
    Not,
    IfEq(usize),
    IfNe(usize),
    Goto(usize),
    /// Allocate and run `<init>`; leaves the initialized reference.
    New {
        class: ClassId,
        argc: u8,
    },
    GetField(FieldId),
    PutField(FieldId),
    GetStatic(StaticId),
    PutStatic(StaticId),
    /// Virtual call. `method` is the statically resolved target; dispatch
    /// re-resolves by name on the receiver's runtime class.
    Invoke {
        method: MethodId,
        argc: u8,
    },
    InvokeStatic {
        method: MethodId,
        argc: u8,
    },
    Return,
    ReturnV,
    Print,
    Halt,
    /// `getstatic $Debug.enabled`
    DebugEnabled,
    /// `invokestatic $Debug.fieldWrite 1 C.f`: pops the written object.
    HookFieldWrite(FieldId),
    /// `invokestatic $Debug.objNew 1`: passes the new object and returns it.
    HookObjNew,
}

impl Instr {
    pub fn branch_target(&self) -> Option<usize> {
        match *self {
            Instr::IfEq(t) | Instr::IfNe(t) | Instr::Goto(t) => Some(t),
            _ => None,
        }
    }

    pub fn with_branch_target(self, target: usize) -> Instr {
        match self {
            Instr::IfEq(_) => Instr::IfEq(target),
            Instr::IfNe(_) => Instr::IfNe(target),
            Instr::Goto(_) => Instr::Goto(target),
            other => other,
        }
    }

    pub fn is_debug_intrinsic(&self) -> bool {
        matches!(
            self,
            Instr::DebugEnabled | Instr::HookFieldWrite(_) | Instr::HookObjNew
        )
    }

    /// Control never falls through to the next instruction.
    pub fn is_terminator(&self) -> bool {
        matches!(
            self,
            Instr::Goto(_) | Instr::Return | Instr::ReturnV | Instr::Halt
        )
    }
}

#[derive(Clone, Debug)]
pub struct FieldDef {
    pub name: String,
    pub kind: FieldKind,
    pub slot: u16,
}

#[derive(Clone, Debug)]
pub struct MethodDef {
    pub name: String,
    pub symbol: Symbol,
    pub param_count: u8,
    pub max_locals: u16,
    pub code: Vec<Instr>,
}

#[derive(Clone, Debug)]
pub struct ClassDef {
    pub name: String,
    pub superclass: Option<ClassId>,
    /// Instance fields declared by this class (not inherited ones).
    pub fields: Vec<FieldDef>,
    pub statics: Vec<FieldDef>,
    pub methods: Vec<MethodDef>,
    pub intrinsic: bool,
    /// Kinds of every instance slot, inherited slots first.
    pub layout: Vec<FieldKind>,
}

/// A loaded and linked program.
#[derive(Clone, Debug)]
pub struct Program {
    pub(crate) classes: Vec<ClassDef>,
    pub(crate) by_name: HashMap<String, ClassId>,
    pub(crate) symbols: Vec<String>,
    /// Per class: every method visible by name, overriding resolved.
    pub(crate) vtables: Vec<HashMap<Symbol, MethodId>>,
    /// Per class: the class itself and all transitive subclasses.
    pub(crate) subclasses: Vec<Vec<ClassId>>,
}

impl Program {
    pub fn classes(&self) -> impl Iterator<Item = (ClassId, &ClassDef)> {
        self.classes
            .iter()
            .enumerate()
            .map(|(i, c)| (ClassId(i as u32), c))
    }

    /// Classes written by the user (everything except `Object` and `$Debug`).
    pub fn user_classes(&self) -> impl Iterator<Item = (ClassId, &ClassDef)> {
        self.classes()
            .filter(|(id, c)| *id != ClassId::OBJECT && !c.intrinsic)
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn class(&self, id: ClassId) -> &ClassDef {
        &self.classes[id.index()]
    }

    pub fn class_name(&self, id: ClassId) -> &str {
        &self.classes[id.index()].name
    }

    pub fn class_id(&self, name: &str) -> Option<ClassId> {
        self.by_name.get(name).copied()
    }

    pub fn method(&self, id: MethodId) -> &MethodDef {
        &self.classes[id.class.index()].methods[id.index as usize]
    }

    pub(crate) fn method_mut(&mut self, id: MethodId) -> &mut MethodDef {
        &mut self.classes[id.class.index()].methods[id.index as usize]
    }

    pub fn methods(&self) -> impl Iterator<Item = (MethodId, &MethodDef)> {
        self.classes().flat_map(|(cid, c)| {
            c.methods.iter().enumerate().map(move |(i, m)| {
                (
                    MethodId {
                        class: cid,
                        index: i as u16,
                    },
                    m,
                )
            })
        })
    }

    /// `Class.method` for diagnostics.
    pub fn method_name(&self, id: MethodId) -> String {
        format!("{}.{}", self.class_name(id.class), self.method(id).name)
    }

    pub fn symbol_name(&self, sym: Symbol) -> &str {
        &self.symbols[sym.0 as usize]
    }

    pub fn symbol(&self, name: &str) -> Option<Symbol> {
        self.symbols
            .iter()
            .position(|s| s == name)
            .map(|i| Symbol(i as u32))
    }

    /// Method declared directly in `class` with the given name.
    pub fn declared_method(&self, class: ClassId, name: &str) -> Option<MethodId> {
        self.class(class)
            .methods
            .iter()
            .position(|m| m.name == name)
            .map(|i| MethodId {
                class,
                index: i as u16,
            })
    }

    /// Method visible in `class` by name, searching superclasses.
    pub fn lookup_method(&self, class: ClassId, name: &str) -> Option<MethodId> {
        let sym = self.symbol(name)?;
        self.vtables[class.index()].get(&sym).copied()
    }

    pub fn dispatch(&self, class: ClassId, sym: Symbol) -> Option<MethodId> {
        self.vtables[class.index()].get(&sym).copied()
    }

    /// Instance field visible in `class`, searching superclasses.
    pub fn lookup_field(&self, class: ClassId, name: &str) -> Option<(FieldId, FieldKind)> {
        let mut cur = Some(class);
        while let Some(cid) = cur {
            let c = self.class(cid);
            if let Some(f) = c.fields.iter().find(|f| f.name == name) {
                return Some((
                    FieldId {
                        class: cid,
                        slot: f.slot,
                    },
                    f.kind,
                ));
            }
            cur = c.superclass;
        }
        None
    }

    pub fn lookup_static(&self, class: ClassId, name: &str) -> Option<(StaticId, FieldKind)> {
        let mut cur = Some(class);
        while let Some(cid) = cur {
            let c = self.class(cid);
            if let Some(i) = c.statics.iter().position(|f| f.name == name) {
                return Some((
                    StaticId {
                        class: cid,
                        index: i as u16,
                    },
                    c.statics[i].kind,
                ));
            }
            cur = c.superclass;
        }
        None
    }

    pub fn field_def(&self, field: FieldId) -> &FieldDef {
        self.class(field.class)
            .fields
            .iter()
            .find(|f| f.slot == field.slot)
            .expect("field id refers to a declared field")
    }

    /// `Class.field` with the declaring class.
    pub fn field_name(&self, field: FieldId) -> String {
        format!(
            "{}.{}",
            self.class_name(field.class),
            self.field_def(field).name
        )
    }

    pub fn static_def(&self, id: StaticId) -> &FieldDef {
        &self.class(id.class).statics[id.index as usize]
    }

    /// Every instance field visible in `class`, inherited ones first.
    pub fn all_fields(&self, class: ClassId) -> Vec<FieldId> {
        let mut chain = Vec::new();
        let mut cur = Some(class);
        while let Some(cid) = cur {
            chain.push(cid);
            cur = self.class(cid).superclass;
        }
        chain
            .iter()
            .rev()
            .flat_map(|&cid| {
                self.class(cid).fields.iter().map(move |f| FieldId {
                    class: cid,
                    slot: f.slot,
                })
            })
            .collect()
    }

    pub fn is_subclass_of(&self, class: ClassId, ancestor: ClassId) -> bool {
        let mut cur = Some(class);
        while let Some(cid) = cur {
            if cid == ancestor {
                return true;
            }
            cur = self.class(cid).superclass;
        }
        false
    }

    /// `class` and all of its transitive subclasses.
    pub fn subclasses(&self, class: ClassId) -> &[ClassId] {
        &self.subclasses[class.index()]
    }

    /// Whether any instruction refers to the `$Debug` intrinsics.
    pub fn is_instrumented(&self) -> bool {
        self.methods()
            .any(|(_, m)| m.code.iter().any(Instr::is_debug_intrinsic))
    }

    pub fn entry_point(&self) -> Option<MethodId> {
        let main = self.class_id("Main")?;
        let id = self.declared_method(main, "main")?;
        (self.method(id).param_count == 0).then_some(id)
    }

    pub fn instruction_count(&self) -> usize {
        self.methods().map(|(_, m)| m.code.len()).sum()
    }

    pub(crate) fn rebuild_tables(&mut self) {
        let n = self.classes.len();
        let mut vtables: Vec<HashMap<Symbol, MethodId>> = Vec::with_capacity(n);
        // Superclasses always precede subclasses after linking.
        for (i, c) in self.classes.iter().enumerate() {
            let mut table = match c.superclass {
                Some(sup) => vtables[sup.index()].clone(),
                None => HashMap::new(),
            };
            for (mi, m) in c.methods.iter().enumerate() {
                table.insert(
                    m.symbol,
                    MethodId {
                        class: ClassId(i as u32),
                        index: mi as u16,
                    },
                );
            }
            vtables.push(table);
        }
        let mut subclasses = vec![Vec::new(); n];
        for i in 0..n {
            let mut cur = Some(ClassId(i as u32));
            while let Some(cid) = cur {
                subclasses[cid.index()].push(ClassId(i as u32));
                cur = self.classes[cid.index()].superclass;
            }
        }
        self.vtables = vtables;
        self.subclasses = subclasses;
    }
}
