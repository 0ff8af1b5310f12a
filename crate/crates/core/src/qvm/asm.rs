//! QASM text format: parsing, linking and re-emission.
//!
//! ```text
//! class <Name> [extends <Name>]
//!   field <name> <int|bool|ref>
//!   static <name> <int|bool|ref>
//!   method <name> <paramCount> <maxLocals>
//!     [<label>:] <opcode> [operands]   ; comment
//!   end
//! end
//! ```

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use super::program::{ClassDef, ClassId, FieldDef, Instr, MethodDef, MethodId, Program, Symbol};
use super::value::{FieldKind, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LoadError {
    #[error("line {line}: syntax error: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: class {class} extends unknown class {superclass}")]
    UnknownSuperclass {
        line: usize,
        class: String,
        superclass: String,
    },
    #[error("line {line}: inheritance cycle through class {class}")]
    InheritanceCycle { line: usize, class: String },
    #[error("line {line}: duplicate class {name}")]
    DuplicateClass { line: usize, name: String },
    #[error("line {line}: duplicate field {class}.{field}")]
    DuplicateField {
        line: usize,
        class: String,
        field: String,
    },
    #[error("line {line}: duplicate method {class}.{method}")]
    DuplicateMethod {
        line: usize,
        class: String,
        method: String,
    },
    #[error("line {line}: duplicate label {label}")]
    DuplicateLabel { line: usize, label: String },
    #[error("line {line}: branch to undefined label {label}")]
    UndefinedLabel { line: usize, label: String },
    #[error("line {line}: unknown class {name}")]
    UnknownClass { line: usize, name: String },
    #[error("line {line}: unknown field {class}.{field}")]
    UnknownField {
        line: usize,
        class: String,
        field: String,
    },
    #[error("line {line}: unknown method {class}.{method}")]
    UnknownMethod {
        line: usize,
        class: String,
        method: String,
    },
    #[error("line {line}: {what}")]
    Verify { line: usize, what: String },
}

impl LoadError {
    pub fn line(&self) -> usize {
        match self {
            LoadError::Syntax { line, .. }
            | LoadError::UnknownSuperclass { line, .. }
            | LoadError::InheritanceCycle { line, .. }
            | LoadError::DuplicateClass { line, .. }
            | LoadError::DuplicateField { line, .. }
            | LoadError::DuplicateMethod { line, .. }
            | LoadError::DuplicateLabel { line, .. }
            | LoadError::UndefinedLabel { line, .. }
            | LoadError::UnknownClass { line, .. }
            | LoadError::UnknownField { line, .. }
            | LoadError::UnknownMethod { line, .. }
            | LoadError::Verify { line, .. } => *line,
        }
    }
}

struct RawInstr {
    line: usize,
    op: String,
    args: Vec<String>,
}

struct RawMethod {
    line: usize,
    name: String,
    params: u8,
    locals: u16,
    labels: HashMap<String, usize>,
    code: Vec<RawInstr>,
    end_line: usize,
}

struct RawField {
    line: usize,
    name: String,
    kind: FieldKind,
}

struct RawClass {
    line: usize,
    name: String,
    superclass: Option<String>,
    fields: Vec<RawField>,
    statics: Vec<RawField>,
    methods: Vec<RawMethod>,
}

fn syntax(line: usize, msg: impl Into<String>) -> LoadError {
    LoadError::Syntax {
        line,
        msg: msg.into(),
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '$' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '$')
}

fn is_method_name(s: &str) -> bool {
    s == "<init>" || is_ident(s)
}

fn parse_count<T: std::str::FromStr>(line: usize, s: &str, what: &str) -> Result<T, LoadError> {
    s.parse()
        .map_err(|_| syntax(line, format!("expected {what}, found `{s}`")))
}

fn parse_raw(source: &str) -> Result<Vec<RawClass>, LoadError> {
    let mut classes: Vec<RawClass> = Vec::new();
    let mut class: Option<RawClass> = None;
    let mut method: Option<RawMethod> = None;
    let mut pending_labels: Vec<String> = Vec::new();

    for (i, raw_line) in source.lines().enumerate() {
        let line = i + 1;
        let text = raw_line.split(';').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        let mut words: Vec<&str> = text.split_whitespace().collect();

        if let Some(m) = method.as_mut() {
            if words == ["end"] {
                if let Some(l) = pending_labels.first() {
                    return Err(LoadError::Verify {
                        line,
                        what: format!("label {l} does not precede an instruction"),
                    });
                }
                m.end_line = line;
                class
                    .as_mut()
                    .expect("method is nested in a class")
                    .methods
                    .push(method.take().expect("checked above"));
                continue;
            }
            while let Some(first) = words.first() {
                let Some(label) = first.strip_suffix(':') else {
                    break;
                };
                if !is_ident(label) {
                    return Err(syntax(line, format!("invalid label `{first}`")));
                }
                if m.labels.contains_key(label) || pending_labels.iter().any(|l| l == label) {
                    return Err(LoadError::DuplicateLabel {
                        line,
                        label: label.to_string(),
                    });
                }
                pending_labels.push(label.to_string());
                words.remove(0);
            }
            if words.is_empty() {
                continue;
            }
            let pc = m.code.len();
            for l in pending_labels.drain(..) {
                m.labels.insert(l, pc);
            }
            m.code.push(RawInstr {
                line,
                op: words[0].to_string(),
                args: words[1..].iter().map(|s| s.to_string()).collect(),
            });
            continue;
        }

        if let Some(c) = class.as_mut() {
            match words[0] {
                "end" if words.len() == 1 => {
                    classes.push(class.take().expect("checked above"));
                }
                "field" | "static" => {
                    if words.len() != 3 {
                        return Err(syntax(
                            line,
                            format!("expected `{} <name> <kind>`", words[0]),
                        ));
                    }
                    if !is_ident(words[1]) {
                        return Err(syntax(line, format!("invalid field name `{}`", words[1])));
                    }
                    let kind = FieldKind::parse(words[2]).ok_or_else(|| {
                        syntax(line, format!("unknown field kind `{}`", words[2]))
                    })?;
                    let f = RawField {
                        line,
                        name: words[1].to_string(),
                        kind,
                    };
                    if words[0] == "field" {
                        c.fields.push(f);
                    } else {
                        c.statics.push(f);
                    }
                }
                "method" => {
                    if words.len() != 4 {
                        return Err(syntax(
                            line,
                            "expected `method <name> <paramCount> <maxLocals>`",
                        ));
                    }
                    if !is_method_name(words[1]) {
                        return Err(syntax(line, format!("invalid method name `{}`", words[1])));
                    }
                    method = Some(RawMethod {
                        line,
                        name: words[1].to_string(),
                        params: parse_count(line, words[2], "parameter count")?,
                        locals: parse_count(line, words[3], "local count")?,
                        labels: HashMap::new(),
                        code: Vec::new(),
                        end_line: line,
                    });
                }
                other => return Err(syntax(line, format!("unexpected `{other}` in class body"))),
            }
            continue;
        }

        match words.as_slice() {
            ["class", name] | ["class", name, "extends", _] => {
                if !is_ident(name) || name.starts_with('$') {
                    return Err(syntax(line, format!("invalid class name `{name}`")));
                }
                class = Some(RawClass {
                    line,
                    name: name.to_string(),
                    superclass: words.get(3).map(|s| s.to_string()),
                    fields: Vec::new(),
                    statics: Vec::new(),
                    methods: Vec::new(),
                });
            }
            _ => return Err(syntax(line, format!("expected `class`, found `{text}`"))),
        }
    }
    if let Some(m) = method {
        return Err(syntax(
            m.line,
            format!("method {} is missing `end`", m.name),
        ));
    }
    if let Some(c) = class {
        return Err(syntax(c.line, format!("class {} is missing `end`", c.name)));
    }
    Ok(classes)
}

fn builtin_classes() -> Vec<ClassDef> {
    let init = MethodDef {
        name: "<init>".into(),
        symbol: Symbol(0),
        param_count: 0,
        max_locals: 1,
        code: vec![Instr::Return],
    };
    vec![
        ClassDef {
            name: "Object".into(),
            superclass: None,
            fields: Vec::new(),
            statics: Vec::new(),
            methods: vec![init],
            intrinsic: false,
            layout: Vec::new(),
        },
        ClassDef {
            name: "$Debug".into(),
            superclass: Some(ClassId::OBJECT),
            fields: Vec::new(),
            statics: vec![FieldDef {
                name: "enabled".into(),
                kind: FieldKind::Bool,
                slot: 0,
            }],
            methods: Vec::new(),
            intrinsic: true,
            layout: Vec::new(),
        },
    ]
}

/// Parse, link and verify a QASM program.
pub fn load_program(source: &str) -> Result<Program, LoadError> {
    let raw = parse_raw(source)?;

    let mut seen: HashMap<&str, usize> = HashMap::new();
    for c in &raw {
        if c.name == "Object" || seen.insert(&c.name, c.line).is_some() {
            return Err(LoadError::DuplicateClass {
                line: c.line,
                name: c.name.clone(),
            });
        }
    }
    let raw_index: HashMap<&str, usize> = raw
        .iter()
        .enumerate()
        .map(|(i, c)| (c.name.as_str(), i))
        .collect();

    // Order classes so every superclass precedes its subclasses.
    let mut order: Vec<usize> = Vec::with_capacity(raw.len());
    let mut state = vec![0u8; raw.len()]; // 0 new, 1 visiting, 2 done
    for start in 0..raw.len() {
        let mut path = Vec::new();
        let mut cur = start;
        loop {
            match state[cur] {
                2 => break,
                1 => {
                    return Err(LoadError::InheritanceCycle {
                        line: raw[cur].line,
                        class: raw[cur].name.clone(),
                    })
                }
                _ => {}
            }
            state[cur] = 1;
            path.push(cur);
            match raw[cur].superclass.as_deref() {
                None | Some("Object") => break,
                Some(sup) => match raw_index.get(sup) {
                    Some(&next) => cur = next,
                    None => {
                        return Err(LoadError::UnknownSuperclass {
                            line: raw[cur].line,
                            class: raw[cur].name.clone(),
                            superclass: sup.to_string(),
                        })
                    }
                },
            }
        }
        for &p in path.iter().rev() {
            if state[p] != 2 {
                state[p] = 2;
                order.push(p);
            }
        }
    }

    let mut classes = builtin_classes();
    let mut by_name: HashMap<String, ClassId> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.name.clone(), ClassId(i as u32)))
        .collect();
    let mut symbols: Vec<String> = vec!["<init>".into()];
    let intern = |name: &str, symbols: &mut Vec<String>| -> Symbol {
        match symbols.iter().position(|s| s == name) {
            Some(i) => Symbol(i as u32),
            None => {
                symbols.push(name.to_string());
                Symbol(symbols.len() as u32 - 1)
            }
        }
    };

    for &ri in &order {
        let rc = &raw[ri];
        let id = ClassId(classes.len() as u32);
        let superclass = match rc.superclass.as_deref() {
            None | Some("Object") => ClassId::OBJECT,
            Some(s) => by_name[s],
        };
        let mut layout = classes[superclass.index()].layout.clone();
        let mut fields = Vec::new();
        for f in &rc.fields {
            let dup_here = fields.iter().any(|d: &FieldDef| d.name == f.name);
            let shadows = {
                let mut cur = Some(superclass);
                let mut found = false;
                while let Some(cid) = cur {
                    let c: &ClassDef = &classes[cid.index()];
                    found |= c.fields.iter().any(|d| d.name == f.name);
                    cur = c.superclass;
                }
                found
            };
            if dup_here || shadows {
                return Err(LoadError::DuplicateField {
                    line: f.line,
                    class: rc.name.clone(),
                    field: f.name.clone(),
                });
            }
            fields.push(FieldDef {
                name: f.name.clone(),
                kind: f.kind,
                slot: layout.len() as u16,
            });
            layout.push(f.kind);
        }
        let mut statics: Vec<FieldDef> = Vec::new();
        for f in &rc.statics {
            if statics.iter().any(|d| d.name == f.name) {
                return Err(LoadError::DuplicateField {
                    line: f.line,
                    class: rc.name.clone(),
                    field: f.name.clone(),
                });
            }
            statics.push(FieldDef {
                name: f.name.clone(),
                kind: f.kind,
                slot: statics.len() as u16,
            });
        }
        let mut methods = Vec::new();
        for m in &rc.methods {
            if methods.iter().any(|d: &MethodDef| d.name == m.name) {
                return Err(LoadError::DuplicateMethod {
                    line: m.line,
                    class: rc.name.clone(),
                    method: m.name.clone(),
                });
            }
            methods.push(MethodDef {
                name: m.name.clone(),
                symbol: intern(&m.name, &mut symbols),
                param_count: m.params,
                max_locals: m.locals,
                code: Vec::new(),
            });
        }
        if !methods.iter().any(|m| m.name == "<init>") {
            methods.push(MethodDef {
                name: "<init>".into(),
                symbol: Symbol(0),
                param_count: 0,
                max_locals: 1,
                code: vec![Instr::Return],
            });
        }
        by_name.insert(rc.name.clone(), id);
        classes.push(ClassDef {
            name: rc.name.clone(),
            superclass: Some(superclass),
            fields,
            statics,
            methods,
            intrinsic: false,
            layout,
        });
    }

    let mut program = Program {
        classes,
        by_name,
        symbols,
        vtables: Vec::new(),
        subclasses: Vec::new(),
    };
    program.rebuild_tables();

    for (pos, &ri) in order.iter().enumerate() {
        let rc = &raw[ri];
        let cid = ClassId((pos + 2) as u32);
        for rm in &rc.methods {
            let mid = program
                .declared_method(cid, &rm.name)
                .expect("method registered above");
            let code = rm
                .code
                .iter()
                .map(|ri| resolve(&program, rm, ri))
                .collect::<Result<Vec<_>, _>>()?;
            verify_method(&program, mid, &code, rm)?;
            program.method_mut(mid).code = code;
        }
    }
    Ok(program)
}

fn expect_args(ri: &RawInstr, n: usize) -> Result<(), LoadError> {
    if ri.args.len() == n {
        Ok(())
    } else {
        Err(syntax(
            ri.line,
            format!("`{}` takes {n} operand(s), found {}", ri.op, ri.args.len()),
        ))
    }
}

fn split_member(ri: &RawInstr, s: &str) -> Result<(String, String), LoadError> {
    match s.split_once('.') {
        Some((c, m)) if !c.is_empty() && !m.is_empty() => Ok((c.to_string(), m.to_string())),
        _ => Err(syntax(
            ri.line,
            format!("expected `Class.member`, found `{s}`"),
        )),
    }
}

fn class_ref(program: &Program, line: usize, name: &str) -> Result<ClassId, LoadError> {
    program
        .class_id(name)
        .ok_or_else(|| LoadError::UnknownClass {
            line,
            name: name.to_string(),
        })
}

fn resolve(program: &Program, m: &RawMethod, ri: &RawInstr) -> Result<Instr, LoadError> {
    let line = ri.line;
    let label = |s: &str| -> Result<usize, LoadError> {
        m.labels
            .get(s)
            .copied()
            .ok_or_else(|| LoadError::UndefinedLabel {
                line,
                label: s.to_string(),
            })
    };
    let simple = |i: Instr| -> Result<Instr, LoadError> {
        expect_args(ri, 0)?;
        Ok(i)
    };
    let field = |s: &str| -> Result<_, LoadError> {
        let (c, f) = split_member(ri, s)?;
        let cid = class_ref(program, line, &c)?;
        program
            .lookup_field(cid, &f)
            .map(|(id, _)| id)
            .ok_or(LoadError::UnknownField {
                line,
                class: c,
                field: f,
            })
    };
    let static_field = |s: &str| -> Result<_, LoadError> {
        let (c, f) = split_member(ri, s)?;
        let cid = class_ref(program, line, &c)?;
        program
            .lookup_static(cid, &f)
            .map(|(id, _)| id)
            .ok_or(LoadError::UnknownField {
                line,
                class: c,
                field: f,
            })
    };
    let method = |s: &str| -> Result<MethodId, LoadError> {
        let (c, name) = split_member(ri, s)?;
        let cid = class_ref(program, line, &c)?;
        program
            .lookup_method(cid, &name)
            .ok_or(LoadError::UnknownMethod {
                line,
                class: c,
                method: name,
            })
    };
    let argc = |s: &str| -> Result<u8, LoadError> { parse_count(line, s, "argument count") };

    Ok(match ri.op.as_str() {
        "const" => {
            expect_args(ri, 1)?;
            Instr::Const(match ri.args[0].as_str() {
                "true" => Value::Bool(true),
                "false" => Value::Bool(false),
                "null" => Value::Null,
                s => Value::Int(parse_count(line, s, "constant")?),
            })
        }
        "load" | "store" => {
            expect_args(ri, 1)?;
            let i: u16 = parse_count(line, &ri.args[0], "local index")?;
            if ri.op == "load" {
                Instr::Load(i)
            } else {
                Instr::Store(i)
            }
        }
        "dup" => simple(Instr::Dup)?,
        "dup2" => simple(Instr::Dup2)?,
        "pop" => simple(Instr::Pop)?,
        "add" => simple(Instr::Add)?,
        "sub" => simple(Instr::Sub)?,
        "mul" => simple(Instr::Mul)?,
        "div" => simple(Instr::Div)?,
        "mod" => simple(Instr::Mod)?,
        "neg" => simple(Instr::Neg)?,
        "eq" => simple(Instr::Eq)?,
        "ne" => simple(Instr::Ne)?,
        "lt" => simple(Instr::Lt)?,
        "le" => simple(Instr::Le)?,
        "gt" => simple(Instr::Gt)?,
        "ge" => simple(Instr::Ge)?,
        "and" => simple(Instr::And)?,
        "or" => simple(Instr::Or)?,
        "not" => simple(Instr::Not)?,
        "return" => simple(Instr::Return)?,
        "returnv" => simple(Instr::ReturnV)?,
        "print" => simple(Instr::Print)?,
        "halt" => simple(Instr::Halt)?,
        "ifeq" | "ifne" | "goto" => {
            expect_args(ri, 1)?;
            let t = label(&ri.args[0])?;
            match ri.op.as_str() {
                "ifeq" => Instr::IfEq(t),
                "ifne" => Instr::IfNe(t),
                _ => Instr::Goto(t),
            }
        }
        "new" => {
            expect_args(ri, 2)?;
            let cid = class_ref(program, line, &ri.args[0])?;
            if program.class(cid).intrinsic {
                return Err(LoadError::Verify {
                    line,
                    what: format!("cannot instantiate {}", ri.args[0]),
                });
            }
            Instr::New {
                class: cid,
                argc: argc(&ri.args[1])?,
            }
        }
        "getfield" => {
            expect_args(ri, 1)?;
            Instr::GetField(field(&ri.args[0])?)
        }
        "putfield" => {
            expect_args(ri, 1)?;
            Instr::PutField(field(&ri.args[0])?)
        }
        "getstatic" => {
            expect_args(ri, 1)?;
            if ri.args[0] == "$Debug.enabled" {
                Instr::DebugEnabled
            } else {
                Instr::GetStatic(static_field(&ri.args[0])?)
            }
        }
        "putstatic" => {
            expect_args(ri, 1)?;
            let id = static_field(&ri.args[0])?;
            if id.class == ClassId::DEBUG {
                return Err(LoadError::Verify {
                    line,
                    what: "the debugger flag is not writable by programs".into(),
                });
            }
            Instr::PutStatic(id)
        }
        "invokestatic" if ri.args.first().map(String::as_str) == Some("$Debug.fieldWrite") => {
            expect_args(ri, 3)?;
            if ri.args[1] != "1" {
                return Err(syntax(line, "$Debug.fieldWrite takes 1 argument"));
            }
            Instr::HookFieldWrite(field(&ri.args[2])?)
        }
        "invokestatic" if ri.args.first().map(String::as_str) == Some("$Debug.objNew") => {
            expect_args(ri, 2)?;
            if ri.args[1] != "1" {
                return Err(syntax(line, "$Debug.objNew takes 1 argument"));
            }
            Instr::HookObjNew
        }
        "invoke" | "invokestatic" => {
            expect_args(ri, 2)?;
            let mid = method(&ri.args[0])?;
            let n = argc(&ri.args[1])?;
            if ri.op == "invoke" {
                Instr::Invoke {
                    method: mid,
                    argc: n,
                }
            } else {
                Instr::InvokeStatic {
                    method: mid,
                    argc: n,
                }
            }
        }
        other => return Err(syntax(line, format!("unknown opcode `{other}`"))),
    })
}

fn verify_method(
    program: &Program,
    mid: MethodId,
    code: &[Instr],
    rm: &RawMethod,
) -> Result<(), LoadError> {
    let m = program.method(mid);
    let verr = |line: usize, what: String| LoadError::Verify { line, what };
    if m.name == "<init>" && m.max_locals < u16::from(m.param_count) + 1 {
        return Err(verr(
            rm.line,
            "<init> needs a local for the receiver".into(),
        ));
    }
    if m.max_locals < u16::from(m.param_count) {
        return Err(verr(rm.line, "maxLocals is smaller than paramCount".into()));
    }
    match code.last() {
        Some(last) if last.is_terminator() => {}
        _ => {
            return Err(verr(
                rm.end_line,
                format!("method {} can fall off its end", program.method_name(mid)),
            ))
        }
    }
    for (instr, ri) in code.iter().zip(&rm.code) {
        let line = ri.line;
        match *instr {
            Instr::Load(i) | Instr::Store(i) if i >= m.max_locals => {
                return Err(verr(line, format!("local {i} out of range")));
            }
            Instr::New { class, argc } => {
                let init = program
                    .declared_method(class, "<init>")
                    .expect("every class has <init>");
                if program.method(init).param_count != argc {
                    return Err(verr(
                        line,
                        format!(
                            "{} takes {} argument(s)",
                            program.method_name(init),
                            program.method(init).param_count
                        ),
                    ));
                }
            }
            Instr::Invoke { method, argc } | Instr::InvokeStatic { method, argc } => {
                let target = program.method(method);
                if target.param_count != argc {
                    return Err(verr(
                        line,
                        format!(
                            "{} takes {} argument(s)",
                            program.method_name(method),
                            target.param_count
                        ),
                    ));
                }
                let needed = u16::from(argc) + u16::from(matches!(instr, Instr::Invoke { .. }));
                if target.max_locals < needed {
                    return Err(verr(
                        line,
                        format!(
                            "{} has too few locals for this call",
                            program.method_name(method)
                        ),
                    ));
                }
            }
            _ => {}
        }
    }
    Ok(())
}

fn render_value(v: Value) -> String {
    match v {
        Value::Int(i) => i.to_string(),
        Value::Bool(b) => b.to_string(),
        Value::Null => "null".into(),
        Value::Ref(_) => unreachable!("reference constants do not exist"),
    }
}

/// Render one instruction in QASM syntax; branch targets are printed as
/// `L<pc>` labels.
pub fn render_instr(program: &Program, instr: &Instr) -> String {
    let field = |f| program.field_name(f);
    match *instr {
        Instr::Const(v) => format!("const {}", render_value(v)),
        Instr::Load(i) => format!("load {i}"),
        Instr::Store(i) => format!("store {i}"),
        Instr::Dup => "dup".into(),
        Instr::Dup2 => "dup2".into(),
        Instr::Pop => "pop".into(),
        Instr::Add => "add".into(),
        Instr::Sub => "sub".into(),
        Instr::Mul => "mul".into(),
        Instr::Div => "div".into(),
        Instr::Mod => "mod".into(),
        Instr::Neg => "neg".into(),
        Instr::Eq => "eq".into(),
        Instr::Ne => "ne".into(),
        Instr::Lt => "lt".into(),
        Instr::Le => "le".into(),
        Instr::Gt => "gt".into(),
        Instr::Ge => "ge".into(),
        Instr::And => "and".into(),
        Instr::Or => "or".into(),
        Instr::Not => "not".into(),
        Instr::IfEq(t) => format!("ifeq L{t}"),
        Instr::IfNe(t) => format!("ifne L{t}"),
        Instr::Goto(t) => format!("goto L{t}"),
        Instr::New { class, argc } => format!("new {} {argc}", program.class_name(class)),
        Instr::GetField(f) => format!("getfield {}", field(f)),
        Instr::PutField(f) => format!("putfield {}", field(f)),
        Instr::GetStatic(s) => format!(
            "getstatic {}.{}",
            program.class_name(s.class),
            program.static_def(s).name
        ),
        Instr::PutStatic(s) => format!(
            "putstatic {}.{}",
            program.class_name(s.class),
            program.static_def(s).name
        ),
        Instr::Invoke { method, argc } => format!("invoke {} {argc}", program.method_name(method)),
        Instr::InvokeStatic { method, argc } => {
            format!("invokestatic {} {argc}", program.method_name(method))
        }
        Instr::Return => "return".into(),
        Instr::ReturnV => "returnv".into(),
        Instr::Print => "print".into(),
        Instr::Halt => "halt".into(),
        Instr::DebugEnabled => "getstatic $Debug.enabled".into(),
        Instr::HookFieldWrite(f) => format!("invokestatic $Debug.fieldWrite 1 {}", field(f)),
        Instr::HookObjNew => "invokestatic $Debug.objNew 1".into(),
    }
}

impl Program {
    /// Emit the program as QASM text that loads back to an equivalent image.
    pub fn to_qasm(&self) -> String {
        let mut out = String::new();
        for (_, c) in self.user_classes() {
            match c.superclass {
                Some(s) if s != ClassId::OBJECT => {
                    let _ = writeln!(out, "class {} extends {}", c.name, self.class_name(s));
                }
                _ => {
                    let _ = writeln!(out, "class {}", c.name);
                }
            }
            for f in &c.fields {
                let _ = writeln!(out, "  field {} {}", f.name, f.kind.name());
            }
            for f in &c.statics {
                let _ = writeln!(out, "  static {} {}", f.name, f.kind.name());
            }
            for m in &c.methods {
                let _ = writeln!(
                    out,
                    "  method {} {} {}",
                    m.name, m.param_count, m.max_locals
                );
                let targets: BTreeSet<usize> =
                    m.code.iter().filter_map(Instr::branch_target).collect();
                for (pc, instr) in m.code.iter().enumerate() {
                    let label = if targets.contains(&pc) {
                        format!("L{pc}:")
                    } else {
                        String::new()
                    };
                    let _ = writeln!(out, "    {label:<6} {}", render_instr(self, instr));
                }
                let _ = writeln!(out, "  end");
            }
            let _ = writeln!(out, "end");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_class_with_one_field() {
        let p = load_program(
            "class Point\n  field x int\n  method <init> 0 1\n    return\n  end\nend\n",
        )
        .unwrap();
        let users: Vec<_> = p.user_classes().collect();
        assert_eq!(users.len(), 1);
        assert_eq!(users[0].1.fields.len(), 1);
        assert_eq!(users[0].1.layout, vec![FieldKind::Int]);
    }

    #[test]
    fn unknown_superclass_names_the_missing_class() {
        let err = load_program("class A extends Missing\nend\n").unwrap_err();
        match err {
            LoadError::UnknownSuperclass {
                superclass, line, ..
            } => {
                assert_eq!(superclass, "Missing");
                assert_eq!(line, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inheritance_and_layout() {
        let p =
            load_program("class B extends A\n  field y int\nend\nclass A\n  field x int\nend\n")
                .unwrap();
        let a = p.class_id("A").unwrap();
        let b = p.class_id("B").unwrap();
        assert!(p.is_subclass_of(b, a));
        assert!(!p.is_subclass_of(a, b));
        assert!(a < b, "superclasses are linked first");
        let (x, _) = p.lookup_field(b, "x").unwrap();
        let (y, _) = p.lookup_field(b, "y").unwrap();
        assert_eq!(x.class, a);
        assert_eq!((x.slot, y.slot), (0, 1));
        assert_eq!(p.subclasses(a), &[a, b]);
    }

    #[test]
    fn link_errors() {
        let cases = [
            ("class A\nend\nclass A\nend\n", "duplicate class"),
            (
                "class A\n field x int\n field x bool\nend\n",
                "duplicate field",
            ),
            (
                "class A\n field x int\nend\nclass B extends A\n field x int\nend\n",
                "duplicate field",
            ),
            ("class A extends B\nend\nclass B extends A\nend\n", "cycle"),
            (
                "class A\n method m 0 1\n  goto nowhere\n end\nend\n",
                "undefined label",
            ),
            (
                "class A\n method m 0 1\n  load 0\n  getfield A.zz\n  return\n end\nend\n",
                "unknown field",
            ),
            (
                "class A\n method m 0 1\n  invokestatic A.nope 0\n  return\n end\nend\n",
                "unknown method",
            ),
            ("class A\n method m 0 1\n  const 1\n end\nend\n", "fall off"),
            (
                "class A\n method m 0 1\n  load 3\n  return\n end\nend\n",
                "out of range",
            ),
            (
                "class A\n method m 0 1\n  frob\n  return\n end\nend\n",
                "unknown opcode",
            ),
            ("class A\n field x float\nend\n", "unknown field kind"),
            ("class A\n", "missing `end`"),
        ];
        for (src, needle) in cases {
            let err = load_program(src).expect_err(src).to_string();
            assert!(err.contains(needle), "{src:?}: {err}");
        }
    }

    #[test]
    fn emitted_text_reloads() {
        let src = "class Main\n  static n int\n  method main 0 2\n    const 3\n    store 0\n  top: load 0\n    ifeq done\n    load 0\n    print\n    load 0\n    const 1\n    sub\n    store 0\n    goto top\n  done: halt\n  end\nend\n";
        let p = load_program(src).unwrap();
        let text = p.to_qasm();
        let q = load_program(&text).unwrap();
        assert_eq!(q.to_qasm(), text);
        let main = q.entry_point().unwrap();
        assert_eq!(q.method(main).code, p.method(p.entry_point().unwrap()).code);
    }
}
