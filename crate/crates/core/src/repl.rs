//! Line-oriented command interpreter over a [`Session`].
//!
//! Output contains no timestamps, so a script replayed against the same
//! program prints the same bytes.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};
use std::path::Path;

use crate::engine::QueryId;
use crate::session::{render_tuples, tuple_refs, Mode, Session, SessionConfig};

pub const USAGE: &str = "\
commands:
  load <path>
  run | continue | step [n]
  break <Class.method:pc> | clear <Class.method:pc>
  query add \"<text>\" [--no-stop] | query rm <id> | query ls
  results <id>
  stats
  emit-instrumented <path>
  quit";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReplCommand {
    Load(String),
    Run,
    Continue,
    Step(u64),
    Break(String),
    Clear(String),
    QueryAdd { text: String, stop: bool },
    QueryRm(QueryId),
    QueryLs,
    Results(QueryId),
    Stats,
    EmitInstrumented(String),
    Help,
    Quit,
}

fn parse_id(s: &str) -> Result<QueryId, String> {
    s.trim_start_matches('q')
        .parse()
        .map_err(|_| format!("bad query id `{s}`"))
}

impl ReplCommand {
    /// `Ok(None)` for blank lines and `#` comments.
    pub fn parse(line: &str) -> Result<Option<ReplCommand>, String> {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            return Ok(None);
        }
        let (head, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        let arg = |what: &str| -> Result<String, String> {
            if rest.is_empty() || rest.contains(char::is_whitespace) {
                Err(format!("`{head}` expects {what}"))
            } else {
                Ok(rest.to_string())
            }
        };
        let none = |c: ReplCommand| {
            if rest.is_empty() {
                Ok(c)
            } else {
                Err(format!("`{head}` takes no arguments"))
            }
        };
        let cmd = match head {
            "load" => ReplCommand::Load(arg("a path")?),
            "run" => none(ReplCommand::Run)?,
            "continue" | "c" => none(ReplCommand::Continue)?,
            "step" | "s" => ReplCommand::Step(if rest.is_empty() {
                1
            } else {
                rest.parse()
                    .map_err(|_| format!("bad step count `{rest}`"))?
            }),
            "break" => ReplCommand::Break(arg("a site")?),
            "clear" => ReplCommand::Clear(arg("a site")?),
            "results" => ReplCommand::Results(parse_id(&arg("a query id")?)?),
            "stats" => none(ReplCommand::Stats)?,
            "emit-instrumented" => ReplCommand::EmitInstrumented(arg("a path")?),
            "help" => ReplCommand::Help,
            "quit" | "exit" => none(ReplCommand::Quit)?,
            "query" => {
                let (sub, tail) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
                let tail = tail.trim();
                match sub {
                    "add" => parse_query_add(tail)?,
                    "rm" => ReplCommand::QueryRm(parse_id(tail)?),
                    "ls" if tail.is_empty() => ReplCommand::QueryLs,
                    _ => return Err("expected `query add|rm|ls`".into()),
                }
            }
            other => return Err(format!("unknown command `{other}`")),
        };
        Ok(Some(cmd))
    }
}

fn parse_query_add(tail: &str) -> Result<ReplCommand, String> {
    let (body, stop) = match tail.strip_suffix("--no-stop") {
        Some(b) => (b.trim_end(), false),
        None => (tail, true),
    };
    let text = if let Some(q) = body.strip_prefix('"') {
        q.strip_suffix('"')
            .ok_or("unterminated query string")?
            .to_string()
    } else {
        body.to_string()
    };
    if text.trim().is_empty() {
        return Err("`query add` expects query text".into());
    }
    Ok(ReplCommand::QueryAdd { text, stop })
}

#[derive(Default)]
pub struct Repl {
    session: Option<Session>,
    config: SessionConfig,
    printed: usize,
}

impl Repl {
    pub fn new(config: SessionConfig) -> Repl {
        Repl {
            session: None,
            config,
            printed: 0,
        }
    }

    pub fn session(&self) -> Option<&Session> {
        self.session.as_ref()
    }

    pub fn load(&mut self, path: &str) -> Result<String, String> {
        let source =
            std::fs::read_to_string(path).map_err(|e| format!("cannot read {path}: {e}"))?;
        self.load_source(path, &source)
    }

    pub fn load_source(&mut self, name: &str, source: &str) -> Result<String, String> {
        let s = Session::attach(source, self.config.clone()).map_err(|e| format!("{name}: {e}"))?;
        let msg = format!(
            "loaded {name}: {} classes, {} instrumented sites",
            s.program().user_classes().count(),
            s.sites().len()
        );
        self.session = Some(s);
        self.printed = 0;
        Ok(msg)
    }

    /// Execute one line. Returns the text to print and whether to stop.
    pub fn execute(&mut self, line: &str) -> (String, bool) {
        let mut out = String::new();
        let quit = match ReplCommand::parse(line) {
            Ok(None) => false,
            Ok(Some(ReplCommand::Quit)) => true,
            Ok(Some(cmd)) => {
                match self.apply(cmd) {
                    Ok(text) => {
                        self.flush_log(&mut out);
                        push_line(&mut out, &text);
                    }
                    Err(e) => {
                        self.flush_log(&mut out);
                        push_line(&mut out, &format!("error: {e}"));
                    }
                }
                false
            }
            Err(e) => {
                push_line(&mut out, &format!("error: {e}"));
                push_line(&mut out, USAGE);
                false
            }
        };
        (out, quit)
    }

    fn flush_log(&mut self, out: &mut String) {
        if let Some(s) = &self.session {
            for r in &s.log()[self.printed..] {
                let _ = writeln!(out, "{r}");
            }
            self.printed = s.log().len();
        }
    }

    fn session_mut(&mut self) -> Result<&mut Session, String> {
        self.session
            .as_mut()
            .ok_or_else(|| "no program loaded (use `load <path>`)".to_string())
    }

    fn apply(&mut self, cmd: ReplCommand) -> Result<String, String> {
        let err = |e: crate::session::SessionError| e.to_string();
        match cmd {
            ReplCommand::Load(path) => self.load(&path),
            ReplCommand::Help => Ok(USAGE.to_string()),
            ReplCommand::Quit => Ok(String::new()),
            ReplCommand::Run => {
                let s = self.session_mut()?;
                s.run().map_err(err)?;
                Ok(status(s))
            }
            ReplCommand::Continue => {
                let s = self.session_mut()?;
                s.continue_run().map_err(err)?;
                Ok(status(s))
            }
            ReplCommand::Step(n) => {
                let s = self.session_mut()?;
                s.step(n).map_err(err)?;
                Ok(status(s))
            }
            ReplCommand::Break(site) => {
                let s = self.session_mut()?;
                let b = s.add_breakpoint(&site).map_err(err)?;
                Ok(format!("breakpoint {}", s.render_site(&b)))
            }
            ReplCommand::Clear(site) => {
                let s = self.session_mut()?;
                if s.clear_breakpoint(&site).map_err(err)? {
                    Ok(format!("cleared {site}"))
                } else {
                    Ok(format!("no breakpoint at {site}"))
                }
            }
            ReplCommand::QueryAdd { text, stop } => {
                let s = self.session_mut()?;
                let (id, initial) = s.add_query(&text, stop).map_err(err)?;
                Ok(format!("q{id}: {} initial result(s)", initial.len()))
            }
            ReplCommand::QueryRm(id) => {
                let s = self.session_mut()?;
                s.remove_query(id).map_err(err)?;
                Ok(format!("removed q{id}"))
            }
            ReplCommand::QueryLs => {
                let s = self.session_mut()?;
                let qs = s.queries();
                if qs.is_empty() {
                    return Ok("no queries".into());
                }
                Ok(qs
                    .iter()
                    .map(|q| {
                        format!(
                            "q{} [{}{}] {} ({} result(s))",
                            q.id,
                            q.plan,
                            if q.stop_on_change { ", stop" } else { "" },
                            q.text,
                            q.result_count
                        )
                    })
                    .collect::<Vec<_>>()
                    .join("\n"))
            }
            ReplCommand::Results(id) => {
                let s = self.session_mut()?;
                let rs = s.results(id).map_err(err)?;
                Ok(format!("q{id} {}", render_tuples(&tuple_refs(s.vm(), &rs))))
            }
            ReplCommand::Stats => {
                let s = self.session_mut()?;
                let st = s.stats();
                let mut t = String::new();
                let c = &st.vm;
                let e = &st.engine;
                let _ = writeln!(t, "mode {}", s.mode());
                let _ = writeln!(
                    t,
                    "debugger {}",
                    if st.debugger_enabled {
                        "enabled"
                    } else {
                        "disabled"
                    }
                );
                let _ = writeln!(t, "instructions {}", c.instructions);
                let _ = writeln!(
                    t,
                    "events {} (putfields {}, allocations {})",
                    c.events, c.putfields, c.allocations
                );
                let _ = writeln!(t, "gc runs {}, reclaimed {}", c.gc_runs, c.reclaimed);
                let _ = writeln!(
                    t,
                    "engine events {}: rejected {}, filtered {}, processed {}",
                    e.events, e.rejected, e.filtered, e.processed
                );
                let _ = write!(
                    t,
                    "constraint evals {}, tracked {} (peak {}), diagnostics {}",
                    e.constraint_evals, e.tracked, e.peak_tracked, e.diagnostics
                );
                Ok(t)
            }
            ReplCommand::EmitInstrumented(path) => {
                let s = self.session_mut()?;
                std::fs::write(&path, s.emit_instrumented())
                    .map_err(|e| format!("cannot write {path}: {e}"))?;
                Ok(format!("wrote {path}"))
            }
        }
    }

    /// Read commands until `quit` or end of input.
    pub fn run_script<R: BufRead, W: Write>(&mut self, input: R, mut output: W) -> io::Result<()> {
        for line in input.lines() {
            let line = line?;
            let (text, quit) = self.execute(&line);
            output.write_all(text.as_bytes())?;
            output.flush()?;
            if quit {
                break;
            }
        }
        Ok(())
    }

    /// Load `path` if given, then run a script.
    pub fn run_file<R: BufRead, W: Write>(
        &mut self,
        path: Option<&Path>,
        input: R,
        mut output: W,
    ) -> io::Result<()> {
        if let Some(p) = path {
            match self.load(&p.to_string_lossy()) {
                Ok(msg) => writeln!(output, "{msg}")?,
                Err(e) => writeln!(output, "error: {e}")?,
            }
        }
        self.run_script(input, output)
    }
}

fn push_line(out: &mut String, s: &str) {
    if !s.is_empty() {
        out.push_str(s);
        out.push('\n');
    }
}

fn status(s: &Session) -> String {
    let pos = match s.vm().position() {
        Some((m, pc)) => format!(" at {}:{pc}", s.program().method_name(m)),
        None => String::new(),
    };
    let what = match s.mode() {
        Mode::Paused(r) => format!("paused ({})", s.describe_pause(r)),
        m => m.to_string(),
    };
    format!(
        "{what}{pos}, {} instructions",
        s.vm().counters().instructions
    )
}
