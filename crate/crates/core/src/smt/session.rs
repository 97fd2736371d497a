//! A solver process spoken to over SMT-LIB 2 on stdin/stdout.
//!
//! The session enables `:print-success`, so every command has exactly one
//! response. Commands are written eagerly and their `success` acknowledgements
//! are drained lazily before the next query, which keeps error attribution
//! exact without a round trip per command.

use std::collections::{BTreeMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::sexp::{parse_one, Sexp};

#[derive(Debug, Error)]
pub enum SmtError {
    #[error("cannot start solver `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("solver I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("solver rejected `{command}`: {response}")]
    Protocol { command: String, response: String },
    #[error("solver did not answer within {0:?}")]
    Timeout(Duration),
    #[error("solver process exited unexpectedly")]
    Exited,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckResult {
    Sat,
    Unsat,
    Unknown,
}

pub struct SmtSession {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    rx: Receiver<Result<Sexp, String>>,
    pending: VecDeque<String>,
    transcript: Vec<String>,
    record: Option<BufWriter<File>>,
    timeout: Duration,
    dead: bool,
}

impl SmtSession {
    /// Starts `command` (whitespace-separated program and arguments) and
    /// selects QF_LIRA.
    pub fn spawn(command: &str, timeout: Duration) -> Result<SmtSession, SmtError> {
        let mut words = command.split_whitespace();
        let program = words.next().ok_or_else(|| SmtError::Spawn {
            command: command.to_string(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty solver command"),
        })?;
        let mut child = Command::new(program)
            .args(words)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|source| SmtError::Spawn {
                command: command.to_string(),
                source,
            })?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            let mut buf = String::new();
            let mut line = Vec::new();
            loop {
                line.clear();
                match reader.read_until(b'\n', &mut line) {
                    Ok(0) | Err(_) => {
                        let _ = tx.send(Err("solver closed its output".to_string()));
                        return;
                    }
                    Ok(_) => buf.push_str(&String::from_utf8_lossy(&line)),
                }
                loop {
                    match parse_one(&buf, false) {
                        Ok(Some((sexp, used))) => {
                            buf.drain(..used);
                            if tx.send(Ok(sexp)).is_err() {
                                return;
                            }
                        }
                        Ok(None) => break,
                        Err(e) => {
                            let _ = tx.send(Err(format!("unparsable solver output: {e}: {buf}")));
                            return;
                        }
                    }
                }
            }
        });
        let mut session = SmtSession {
            child,
            stdin,
            rx,
            pending: VecDeque::new(),
            transcript: Vec::new(),
            record: None,
            timeout,
            dead: false,
        };
        session.send("(set-option :print-success true)")?;
        session.send("(set-option :produce-models true)")?;
        session.send("(set-logic QF_LIRA)")?;
        Ok(session)
    }

    /// Copies every command sent from now on to `path`.
    pub fn record_to(&mut self, path: &Path) -> Result<(), SmtError> {
        let mut f = BufWriter::new(File::create(path)?);
        for line in &self.transcript {
            writeln!(f, "{line}")?;
        }
        self.record = Some(f);
        Ok(())
    }

    pub fn transcript(&self) -> &[String] {
        &self.transcript
    }

    /// Sends one command that answers `success`.
    pub fn send(&mut self, command: &str) -> Result<(), SmtError> {
        if self.dead {
            return Err(SmtError::Exited);
        }
        writeln!(self.stdin, "{command}")?;
        if let Some(r) = self.record.as_mut() {
            writeln!(r, "{command}")?;
        }
        self.transcript.push(command.to_string());
        self.pending.push_back(command.to_string());
        Ok(())
    }

    pub fn declare_const(&mut self, name: &str, sort: &str) -> Result<(), SmtError> {
        self.send(&format!("(declare-const {name} {sort})"))
    }

    pub fn assert(&mut self, term: &str) -> Result<(), SmtError> {
        self.send(&format!("(assert {term})"))
    }

    pub fn push(&mut self) -> Result<(), SmtError> {
        self.send("(push 1)")
    }

    pub fn pop(&mut self) -> Result<(), SmtError> {
        self.send("(pop 1)")
    }

    pub fn check(&mut self) -> Result<CheckResult, SmtError> {
        let deadline = Instant::now() + self.timeout;
        let response = self.query("(check-sat)", deadline)?;
        match response.atom() {
            Some("sat") => Ok(CheckResult::Sat),
            Some("unsat") => Ok(CheckResult::Unsat),
            Some("unknown") => Ok(CheckResult::Unknown),
            _ => Err(SmtError::Protocol {
                command: "(check-sat)".into(),
                response: response.to_string(),
            }),
        }
    }

    /// Values of the given constants in the current model.
    pub fn get_values(&mut self, names: &[String]) -> Result<BTreeMap<String, Sexp>, SmtError> {
        if names.is_empty() {
            return Ok(BTreeMap::new());
        }
        let command = format!("(get-value ({}))", names.join(" "));
        let deadline = Instant::now() + self.timeout;
        let response = self.query(&command, deadline)?;
        let bad = |r: &Sexp| SmtError::Protocol {
            command: command.clone(),
            response: r.to_string(),
        };
        let mut out = BTreeMap::new();
        for pair in response.list().ok_or_else(|| bad(&response))? {
            match pair.list() {
                Some([Sexp::Atom(name), value]) => {
                    out.insert(name.clone(), value.clone());
                }
                _ => return Err(bad(pair)),
            }
        }
        if let Some(missing) = names.iter().find(|n| !out.contains_key(*n)) {
            return Err(SmtError::Protocol {
                command,
                response: format!("no value for `{missing}`"),
            });
        }
        Ok(out)
    }

    fn query(&mut self, command: &str, deadline: Instant) -> Result<Sexp, SmtError> {
        if self.dead {
            return Err(SmtError::Exited);
        }
        writeln!(self.stdin, "{command}")?;
        self.stdin.flush()?;
        if let Some(r) = self.record.as_mut() {
            writeln!(r, "{command}")?;
            r.flush()?;
        }
        self.transcript.push(command.to_string());
        while let Some(cmd) = self.pending.pop_front() {
            let response = self.recv(deadline)?;
            if response.atom() != Some("success") {
                return Err(SmtError::Protocol {
                    command: cmd,
                    response: response.to_string(),
                });
            }
        }
        let response = self.recv(deadline)?;
        if let Some([Sexp::Atom(head), ..]) = response.list() {
            if head == "error" {
                return Err(SmtError::Protocol {
                    command: command.to_string(),
                    response: response.to_string(),
                });
            }
        }
        Ok(response)
    }

    fn recv(&mut self, deadline: Instant) -> Result<Sexp, SmtError> {
        let left = deadline.saturating_duration_since(Instant::now());
        match self.rx.recv_timeout(left) {
            Ok(Ok(sexp)) => Ok(sexp),
            Ok(Err(msg)) => {
                self.dead = true;
                Err(SmtError::Protocol {
                    command: self.transcript.last().cloned().unwrap_or_default(),
                    response: msg,
                })
            }
            Err(RecvTimeoutError::Timeout) => {
                self.kill();
                Err(SmtError::Timeout(self.timeout))
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.dead = true;
                Err(SmtError::Exited)
            }
        }
    }

    fn kill(&mut self) {
        self.dead = true;
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for SmtSession {
    fn drop(&mut self) {
        if !self.dead {
            let _ = writeln!(self.stdin, "(exit)");
            let _ = self.stdin.flush();
        }
        if let Some(r) = self.record.as_mut() {
            let _ = r.flush();
        }
        self.kill();
    }
}
