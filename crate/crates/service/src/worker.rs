//! The VM thread. It owns the session, drains the command queue between
//! execution slices and fans log records out to connected clients.

use std::sync::mpsc::{Receiver, TryRecvError};

use qbd::engine::Tuple;
use qbd::instrument::SiteKind;
use qbd::session::{tuple_refs, LogEntry, LogRecord, Mode, Session, SessionConfig, SLICE};
use serde_json::{json, Map, Value};
use tokio::sync::mpsc::UnboundedSender;

use crate::ProgramSource;

/// While running, a `stats` event goes out every this many slices.
const STATS_EVERY: u64 = 50;

pub(crate) type ClientId = u64;

pub(crate) enum Command {
    Connect {
        client: ClientId,
        tx: UnboundedSender<String>,
    },
    Disconnect {
        client: ClientId,
    },
    Request {
        client: ClientId,
        text: String,
    },
}

/// Ops that change session state. Only the controlling client may send them.
const CONTROL_OPS: &[&str] = &[
    "attach",
    "run",
    "continue",
    "step",
    "interrupt",
    "addBreakpoint",
    "clearBreakpoint",
    "addQuery",
    "removeQuery",
];

struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type OpResult = Result<Value, Failure>;

pub(crate) struct Worker {
    config: SessionConfig,
    preset: Option<ProgramSource>,
    session: Option<Session>,
    program_name: String,
    /// Connection order; the first entry is the controller.
    clients: Vec<(ClientId, UnboundedSender<String>)>,
    published: usize,
    slices: u64,
}

impl Worker {
    pub(crate) fn new(config: SessionConfig, preset: Option<ProgramSource>) -> Worker {
        let mut w = Worker {
            config,
            preset: preset.clone(),
            session: None,
            program_name: String::new(),
            clients: Vec::new(),
            published: 0,
            slices: 0,
        };
        if let Some(p) = preset {
            // A bad preset surfaces on the first `attach`.
            let _ = w.attach(&p);
        }
        w
    }

    pub(crate) fn run(mut self, rx: Receiver<Command>) {
        loop {
            let running = self
                .session
                .as_ref()
                .is_some_and(|s| *s.mode() == Mode::Running);
            let cmd = if running {
                match rx.try_recv() {
                    Ok(c) => Some(c),
                    Err(TryRecvError::Empty) => None,
                    Err(TryRecvError::Disconnected) => return,
                }
            } else {
                match rx.recv() {
                    Ok(c) => Some(c),
                    Err(_) => return,
                }
            };
            match cmd {
                Some(c) => self.handle(c),
                None => self.slice(),
            }
        }
    }

    fn slice(&mut self) {
        let Some(s) = self.session.as_mut() else {
            return;
        };
        let still_running = *s.advance(SLICE) == Mode::Running;
        self.slices += 1;
        self.publish();
        if !still_running || self.slices.is_multiple_of(STATS_EVERY) {
            self.broadcast_stats();
        }
    }

    fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Connect { client, tx } => self.clients.push((client, tx)),
            Command::Disconnect { client } => self.clients.retain(|(c, _)| *c != client),
            Command::Request { client, text } => self.request(client, &text),
        }
    }

    fn request(&mut self, client: ClientId, text: &str) {
        let Ok(msg) = serde_json::from_str::<Value>(text) else {
            self.send_to(client, &json!({ "error": "parse" }));
            return;
        };
        let id = msg.get("id").cloned().unwrap_or(Value::Null);
        let Some(op) = msg.get("op").and_then(Value::as_str) else {
            self.respond(
                client,
                id,
                Err(Failure("request needs a string `op`".into())),
            );
            return;
        };
        let params = msg.get("params").cloned().unwrap_or(Value::Null);
        let controller = self.clients.first().map(|(c, _)| *c) == Some(client);
        let result = if CONTROL_OPS.contains(&op) && !controller {
            Err(Failure(
                "read-only: another client controls this session".into(),
            ))
        } else {
            let before = self.mode_name();
            let r = self.dispatch(op, &params);
            self.publish();
            if self.mode_name() != before && !self.is_running() {
                self.broadcast_stats();
            }
            r
        };
        self.respond(client, id, result);
    }

    fn dispatch(&mut self, op: &str, params: &Value) -> OpResult {
        if op == "attach" {
            return self.attach_op(params);
        }
        let name = self.program_name.clone();
        let s = self
            .session
            .as_mut()
            .ok_or_else(|| Failure("no program attached".into()))?;
        match op {
            "run" => {
                s.start()?;
                Ok(json!({ "mode": s.mode().name() }))
            }
            "continue" => {
                s.resume()?;
                Ok(json!({ "mode": s.mode().name() }))
            }
            "interrupt" => {
                s.interrupt()?;
                Ok(json!({ "mode": s.mode().name() }))
            }
            "step" => {
                let n = opt_u64(params, "n")?.unwrap_or(1);
                s.step(n)?;
                Ok(json!({
                    "mode": s.mode().name(),
                    "instructions": s.vm().counters().instructions,
                }))
            }
            "addBreakpoint" => {
                let site = s.add_breakpoint(str_param(params, "site")?)?;
                Ok(json!({ "site": s.render_site(&site) }))
            }
            "clearBreakpoint" => {
                let removed = s.clear_breakpoint(str_param(params, "site")?)?;
                Ok(json!({ "removed": removed }))
            }
            "addQuery" => {
                let text = str_param(params, "text")?;
                let stop = opt_bool(params, "stopOnChange")?.unwrap_or(true);
                let (q, initial) = s.add_query(text, stop)?;
                let info = s
                    .queries()
                    .into_iter()
                    .find(|i| i.id == q)
                    .expect("just added");
                Ok(json!({
                    "queryId": q,
                    "text": info.text,
                    "plan": info.plan.to_string(),
                    "stopOnChange": stop,
                    "initial": render(s, &initial),
                }))
            }
            "removeQuery" => {
                let q = query_id(params)?;
                s.remove_query(q)?;
                Ok(json!({ "queryId": q }))
            }
            "listQueries" => Ok(Value::Array(
                s.queries()
                    .into_iter()
                    .map(|i| {
                        json!({
                            "queryId": i.id,
                            "text": i.text,
                            "plan": i.plan.to_string(),
                            "stopOnChange": i.stop_on_change,
                            "resultCount": i.result_count,
                        })
                    })
                    .collect(),
            )),
            "getResults" => {
                let q = query_id(params)?;
                let tuples = s.results(q)?;
                Ok(json!({ "queryId": q, "tuples": render(s, &tuples) }))
            }
            "getStats" => Ok(stats_payload(s)),
            "getSource" => Ok(json!({
                "name": name,
                "source": s.original_program().to_qasm(),
                "instrumented": s.emit_instrumented(),
                "breakpoints": s
                    .breakpoints()
                    .iter()
                    .map(|b| s.render_site(b))
                    .collect::<Vec<_>>(),
            })),
            "getSiteTable" => {
                let p = s.program();
                let sites: Vec<Value> = s
                    .sites()
                    .iter()
                    .map(|site| {
                        let (kind, target) = match site.kind {
                            SiteKind::FieldWrite(f) => ("fieldWrite", p.field_name(f)),
                            SiteKind::Allocation(c) => ("allocation", p.class_name(c).to_string()),
                        };
                        json!({
                            "method": p.method_name(site.method),
                            "pc": site.pc,
                            "kind": kind,
                            "target": target,
                        })
                    })
                    .collect();
                Ok(Value::Array(sites))
            }
            other => Err(Failure(format!("unknown op `{other}`"))),
        }
    }

    fn attach_op(&mut self, params: &Value) -> OpResult {
        let program = match (opt_str(params, "source")?, opt_str(params, "path")?) {
            (Some(source), _) => ProgramSource {
                name: opt_str(params, "name")?.unwrap_or("<inline>").to_string(),
                source: source.to_string(),
            },
            (None, Some(path)) => ProgramSource {
                name: path.to_string(),
                source: std::fs::read_to_string(path)
                    .map_err(|e| Failure(format!("{path}: {e}")))?,
            },
            (None, None) => self
                .preset
                .clone()
                .ok_or_else(|| Failure("attach needs `source` or `path`".into()))?,
        };
        self.attach(&program)?;
        let s = self.session.as_ref().expect("just attached");
        Ok(json!({
            "program": self.program_name,
            "mode": s.mode().name(),
            "classes": s.original_program().user_classes().count(),
            "instructions": s.original_program().instruction_count(),
            "instrumentedInstructions": s.program().instruction_count(),
            "sites": s.sites().len(),
        }))
    }

    fn attach(&mut self, p: &ProgramSource) -> Result<(), Failure> {
        let session = Session::attach(&p.source, self.config.clone())?;
        self.session = Some(session);
        self.program_name = p.name.clone();
        self.published = 0;
        self.slices = 0;
        Ok(())
    }

    fn is_running(&self) -> bool {
        self.session
            .as_ref()
            .is_some_and(|s| *s.mode() == Mode::Running)
    }

    fn mode_name(&self) -> &'static str {
        self.session
            .as_ref()
            .map_or("detached", |s| s.mode().name())
    }

    /// Turn unseen log records into events for every client.
    fn publish(&mut self) {
        let Some(s) = self.session.as_ref() else {
            return;
        };
        let fresh: Vec<Value> = s.log()[self.published..]
            .iter()
            .filter_map(|r| event_for(s, r))
            .collect();
        self.published = s.log().len();
        for e in fresh {
            self.broadcast(&e);
        }
    }

    fn broadcast_stats(&mut self) {
        if let Some(s) = self.session.as_ref() {
            let e = json!({ "event": "stats", "payload": stats_payload(s) });
            self.broadcast(&e);
        }
    }

    fn broadcast(&mut self, msg: &Value) {
        let text = msg.to_string();
        // A send only fails once the connection task is gone.
        self.clients.retain(|(_, tx)| tx.send(text.clone()).is_ok());
    }

    fn send_to(&mut self, client: ClientId, msg: &Value) {
        if let Some((_, tx)) = self.clients.iter().find(|(c, _)| *c == client) {
            let _ = tx.send(msg.to_string());
        }
    }

    fn respond(&mut self, client: ClientId, id: Value, result: OpResult) {
        let msg = match result {
            Ok(payload) => json!({ "id": id, "ok": true, "payload": payload }),
            Err(Failure(error)) => json!({ "id": id, "ok": false, "error": error }),
        };
        self.send_to(client, &msg);
    }
}

fn render(s: &Session, ts: &[Tuple]) -> Vec<Vec<String>> {
    tuple_refs(s.vm(), ts)
        .into_iter()
        .map(|t| t.iter().map(ToString::to_string).collect())
        .collect()
}

fn render_refs(ts: &[qbd::session::TupleRef]) -> Vec<Vec<String>> {
    ts.iter()
        .map(|t| t.iter().map(ToString::to_string).collect())
        .collect()
}

fn position(s: &Session) -> Value {
    match s.vm().position() {
        Some((m, pc)) => json!({ "method": s.program().method_name(m), "pc": pc }),
        None => Value::Null,
    }
}

fn event_for(s: &Session, r: &LogRecord) -> Option<Value> {
    let (name, payload) = match &r.entry {
        LogEntry::Delta {
            query,
            added,
            removed,
        } => (
            "queryDelta",
            json!({
                "queryId": query,
                "added": render_refs(added),
                "removed": render_refs(removed),
            }),
        ),
        LogEntry::Paused { reason } => (
            "paused",
            json!({
                "reason": reason,
                "position": position(s),
                "instructions": s.vm().counters().instructions,
            }),
        ),
        LogEntry::Output { text } => ("output", json!({ "text": text })),
        LogEntry::Halted => (
            "halted",
            json!({ "instructions": s.vm().counters().instructions }),
        ),
        LogEntry::Faulted { fault } => (
            "halted",
            json!({ "instructions": s.vm().counters().instructions, "fault": fault }),
        ),
        // Query bookkeeping is reported in responses.
        LogEntry::QueryAdded { .. } | LogEntry::QueryRemoved { .. } => return None,
    };
    let mut payload = payload;
    if let Value::Object(m) = &mut payload {
        m.insert("eventIndex".into(), json!(r.event));
    }
    Some(json!({ "event": name, "payload": payload }))
}

fn stats_payload(s: &Session) -> Value {
    let mut m = Map::new();
    m.insert("mode".into(), json!(s.mode().name()));
    m.insert(
        "stats".into(),
        serde_json::to_value(s.stats()).expect("stats serialize"),
    );
    Value::Object(m)
}

fn opt_str<'a>(params: &'a Value, key: &str) -> Result<Option<&'a str>, Failure> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(_) => Err(Failure(format!("`{key}` must be a string"))),
    }
}

fn str_param<'a>(params: &'a Value, key: &str) -> Result<&'a str, Failure> {
    opt_str(params, key)?.ok_or_else(|| Failure(format!("missing `{key}`")))
}

fn opt_u64(params: &Value, key: &str) -> Result<Option<u64>, Failure> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_u64()
            .map(Some)
            .ok_or_else(|| Failure(format!("`{key}` must be a non-negative integer"))),
    }
}

fn opt_bool(params: &Value, key: &str) -> Result<Option<bool>, Failure> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_bool()
            .map(Some)
            .ok_or_else(|| Failure(format!("`{key}` must be a boolean"))),
    }
}

fn query_id(params: &Value) -> Result<u32, Failure> {
    let q = opt_u64(params, "queryId")?.ok_or_else(|| Failure("missing `queryId`".into()))?;
    u32::try_from(q).map_err(|_| Failure(format!("unknown query {q}")))
}
