//! Gesture → action dispatch.
//!
//! The mapping file is a JSON object of `"gesture": ["sh" | "py", "target"]`
//! entries. `sh` targets are shell commands; `py` targets name a built-in
//! action (the token is kept for compatibility with existing configs).

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use arc_swap::ArcSwap;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::model::{EventPayload, GestureEvent};

pub const SHELL_TIMEOUT: Duration = Duration::from_secs(30);
/// Scroll step used by the scroll built-ins.
pub const SCROLL_STEP: i32 = 5;

#[derive(Debug, Error)]
pub enum MappingError {
    #[error("cannot parse mapping: {0}")]
    ParseError(String),
    #[error(
        "gesture '{gesture}': unknown action type '{action_type}' (expected \"sh\" or \"py\")"
    )]
    UnknownActionType {
        gesture: String,
        action_type: String,
    },
    #[error("gesture '{gesture}': unknown built-in action '{name}'")]
    UnknownBuiltin { gesture: String, name: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Built-in actions reachable through `"py"` entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Builtin {
    NoFunc,
    TakeScreenshot,
    MouseLeftClick,
    MouseRightClick,
    MouseDoubleClick,
    ScrollUp,
    ScrollDown,
    KeyEscape,
}

impl Builtin {
    pub const ALL: [Builtin; 8] = [
        Builtin::NoFunc,
        Builtin::TakeScreenshot,
        Builtin::MouseLeftClick,
        Builtin::MouseRightClick,
        Builtin::MouseDoubleClick,
        Builtin::ScrollUp,
        Builtin::ScrollDown,
        Builtin::KeyEscape,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::NoFunc => "no_func",
            Builtin::TakeScreenshot => "take_screenshot",
            Builtin::MouseLeftClick => "mouse_left_click",
            Builtin::MouseRightClick => "mouse_right_click",
            Builtin::MouseDoubleClick => "mouse_double_click",
            Builtin::ScrollUp => "scroll_up",
            Builtin::ScrollDown => "scroll_down",
            Builtin::KeyEscape => "key_escape",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Shell(String),
    Builtin(Builtin),
}

impl Action {
    pub fn action_type(&self) -> &'static str {
        match self {
            Action::Shell(_) => "sh",
            Action::Builtin(_) => "py",
        }
    }

    pub fn target(&self) -> &str {
        match self {
            Action::Shell(cmd) => cmd,
            Action::Builtin(b) => b.name(),
        }
    }
}

/// Validated gesture → action table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActionMapping {
    entries: BTreeMap<String, Action>,
}

impl ActionMapping {
    /// Parses a mapping. Besides strict JSON, single-quoted strings and
    /// trailing commas are accepted, so configs written as Python dict
    /// literals load unchanged.
    pub fn parse(text: &str) -> Result<Self, MappingError> {
        let raw: BTreeMap<String, Vec<String>> =
            json5::from_str(text).map_err(|e| MappingError::ParseError(e.to_string()))?;
        let mut entries = BTreeMap::new();
        for (gesture, value) in raw {
            let [action_type, target]: [String; 2] =
                value.try_into().map_err(|v: Vec<String>| {
                    MappingError::ParseError(format!(
                        "gesture '{gesture}': expected [type, target], got {} elements",
                        v.len()
                    ))
                })?;
            let action = match action_type.as_str() {
                "sh" => Action::Shell(target),
                "py" => Action::Builtin(Builtin::from_name(&target).ok_or_else(|| {
                    MappingError::UnknownBuiltin {
                        gesture: gesture.clone(),
                        name: target.clone(),
                    }
                })?),
                _ => {
                    return Err(MappingError::UnknownActionType {
                        gesture,
                        action_type,
                    })
                }
            };
            entries.insert(gesture, action);
        }
        Ok(Self { entries })
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (String, Action)>) -> Self {
        Self {
            entries: entries.into_iter().collect(),
        }
    }

    pub fn get(&self, gesture: &str) -> Option<&Action> {
        self.entries.get(gesture)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Action)> {
        self.entries.iter()
    }

    /// The canonical JSON form: `{"gesture": ["type", "target"], ...}`.
    pub fn to_json(&self) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .entries
            .iter()
            .map(|(g, a)| (g.clone(), serde_json::json!([a.action_type(), a.target()])))
            .collect();
        serde_json::Value::Object(map)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("mapping serializes")
    }
}

pub fn load_mapping(path: impl AsRef<Path>) -> Result<ActionMapping, MappingError> {
    ActionMapping::parse(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MouseButton {
    Left,
    Right,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SinkError {
    #[error("failed to spawn shell command: {0}")]
    ShellSpawnFailure(String),
    #[error("{0}")]
    Other(String),
}

/// Destination of dispatched actions.
pub trait ActionSink: Send + Sync {
    fn move_cursor(&self, x: i32, y: i32) -> Result<(), SinkError>;
    fn click(&self, button: MouseButton) -> Result<(), SinkError>;
    fn double_click(&self) -> Result<(), SinkError>;
    fn scroll(&self, amount: i32) -> Result<(), SinkError>;
    fn key_press(&self, key: &str) -> Result<(), SinkError>;
    fn take_screenshot(&self) -> Result<(), SinkError>;
    /// Starts `command` without waiting for it to finish.
    fn run_shell(&self, command: &str) -> Result<(), SinkError>;
}

/// Runs `sh -c command` detached; a watcher thread collects the exit status
/// and kills the process after `timeout`.
pub fn spawn_shell(command: &str, timeout: Duration) -> Result<(), SinkError> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| SinkError::ShellSpawnFailure(e.to_string()))?;
    let command = command.to_string();
    thread::Builder::new()
        .name("shell-watch".into())
        .spawn(move || match child.wait_timeout(timeout) {
            Ok(Some(status)) => log::info!("shell '{command}' exited with {status}"),
            Ok(None) => {
                log::warn!("shell '{command}' exceeded {timeout:?}, killing");
                let _ = child.kill();
                let _ = child.wait();
            }
            Err(e) => log::warn!("shell '{command}': wait failed: {e}"),
        })
        .map_err(|e| SinkError::ShellSpawnFailure(e.to_string()))?;
    Ok(())
}

/// One call made on a sink.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum SinkCall {
    MoveCursor { x: i32, y: i32 },
    Click { button: MouseButton },
    DoubleClick,
    Scroll { amount: i32 },
    KeyPress { key: String },
    TakeScreenshot,
    RunShell { command: String },
}

/// Default sink: records every call and logs it; shell commands really run.
#[derive(Default)]
pub struct LoggingSink {
    calls: Mutex<Vec<SinkCall>>,
    record_cursor: bool,
    shell_timeout: Option<Duration>,
}

impl LoggingSink {
    pub fn new() -> Self {
        Self {
            calls: Mutex::new(Vec::new()),
            record_cursor: true,
            shell_timeout: Some(SHELL_TIMEOUT),
        }
    }

    /// Cursor moves are logged but not kept in memory.
    pub fn without_cursor_history(mut self) -> Self {
        self.record_cursor = false;
        self
    }

    pub fn calls(&self) -> Vec<SinkCall> {
        self.calls.lock().expect("sink lock").clone()
    }

    fn record(&self, call: SinkCall) -> Result<(), SinkError> {
        log::debug!("sink: {call:?}");
        if self.record_cursor || !matches!(call, SinkCall::MoveCursor { .. }) {
            self.calls.lock().expect("sink lock").push(call);
        }
        Ok(())
    }
}

impl ActionSink for LoggingSink {
    fn move_cursor(&self, x: i32, y: i32) -> Result<(), SinkError> {
        self.record(SinkCall::MoveCursor { x, y })
    }

    fn click(&self, button: MouseButton) -> Result<(), SinkError> {
        self.record(SinkCall::Click { button })
    }

    fn double_click(&self) -> Result<(), SinkError> {
        self.record(SinkCall::DoubleClick)
    }

    fn scroll(&self, amount: i32) -> Result<(), SinkError> {
        self.record(SinkCall::Scroll { amount })
    }

    fn key_press(&self, key: &str) -> Result<(), SinkError> {
        self.record(SinkCall::KeyPress {
            key: key.to_string(),
        })
    }

    fn take_screenshot(&self) -> Result<(), SinkError> {
        self.record(SinkCall::TakeScreenshot)
    }

    fn run_shell(&self, command: &str) -> Result<(), SinkError> {
        self.record(SinkCall::RunShell {
            command: command.to_string(),
        })?;
        match self.shell_timeout {
            Some(t) => spawn_shell(command, t),
            None => Ok(()),
        }
    }
}

impl<S: ActionSink + ?Sized> ActionSink for Arc<S> {
    fn move_cursor(&self, x: i32, y: i32) -> Result<(), SinkError> {
        (**self).move_cursor(x, y)
    }
    fn click(&self, button: MouseButton) -> Result<(), SinkError> {
        (**self).click(button)
    }
    fn double_click(&self) -> Result<(), SinkError> {
        (**self).double_click()
    }
    fn scroll(&self, amount: i32) -> Result<(), SinkError> {
        (**self).scroll(amount)
    }
    fn key_press(&self, key: &str) -> Result<(), SinkError> {
        (**self).key_press(key)
    }
    fn take_screenshot(&self) -> Result<(), SinkError> {
        (**self).take_screenshot()
    }
    fn run_shell(&self, command: &str) -> Result<(), SinkError> {
        (**self).run_shell(command)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    /// Mapped to `no_func`.
    Noop,
    /// Gesture has no mapping entry.
    Unmapped,
    Error(String),
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Ok => f.write_str("ok"),
            Outcome::Noop => f.write_str("noop"),
            Outcome::Unmapped => f.write_str("unmapped"),
            Outcome::Error(e) => write!(f, "error: {e}"),
        }
    }
}

/// One line of the dispatch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchRecord {
    /// Wall-clock milliseconds since the Unix epoch.
    pub ts: u64,
    pub gesture: String,
    pub action_type: String,
    pub target: String,
    pub outcome: Outcome,
}

impl DispatchRecord {
    pub fn to_json_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("record serializes");
        s.push('\n');
        s
    }

    /// The record with its timestamp zeroed, for run-to-run comparison.
    pub fn without_ts(&self) -> Self {
        Self {
            ts: 0,
            ..self.clone()
        }
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub const CURSOR_GESTURE: &str = "cursor";

/// Dispatches one event. Total: every event yields exactly one record.
pub fn execute(
    event: &GestureEvent,
    mapping: &ActionMapping,
    sink: &dyn ActionSink,
) -> DispatchRecord {
    let ts = now_ms();
    let result = |r: Result<(), SinkError>| match r {
        Ok(()) => Outcome::Ok,
        Err(e) => {
            log::warn!("dispatch failed: {e}");
            Outcome::Error(e.to_string())
        }
    };
    match &event.payload {
        EventPayload::CursorMove { x_px, y_px } => DispatchRecord {
            ts,
            gesture: CURSOR_GESTURE.to_string(),
            action_type: "cursor".to_string(),
            target: format!("{x_px},{y_px}"),
            outcome: result(sink.move_cursor(*x_px, *y_px)),
        },
        EventPayload::Gesture(label) => {
            let Some(action) = mapping.get(&label.name) else {
                log::warn!("no action mapped for gesture '{}'", label.name);
                return DispatchRecord {
                    ts,
                    gesture: label.name.clone(),
                    action_type: "-".to_string(),
                    target: "-".to_string(),
                    outcome: Outcome::Unmapped,
                };
            };
            let outcome = match action {
                Action::Shell(cmd) => result(sink.run_shell(cmd)),
                Action::Builtin(b) => match b {
                    Builtin::NoFunc => Outcome::Noop,
                    Builtin::TakeScreenshot => result(sink.take_screenshot()),
                    Builtin::MouseLeftClick => result(sink.click(MouseButton::Left)),
                    Builtin::MouseRightClick => result(sink.click(MouseButton::Right)),
                    Builtin::MouseDoubleClick => result(sink.double_click()),
                    Builtin::ScrollUp => result(sink.scroll(SCROLL_STEP)),
                    Builtin::ScrollDown => result(sink.scroll(-SCROLL_STEP)),
                    Builtin::KeyEscape => result(sink.key_press("Escape")),
                },
            };
            DispatchRecord {
                ts,
                gesture: label.name.clone(),
                action_type: action.action_type().to_string(),
                target: action.target().to_string(),
                outcome,
            }
        }
    }
}

/// Mapping holder with lock-free reads and atomic replacement, plus an
/// optional dispatch-log writer.
pub struct Executor {
    mapping: ArcSwap<ActionMapping>,
    sink: Arc<dyn ActionSink>,
    log: Option<Mutex<Box<dyn Write + Send>>>,
}

impl Executor {
    pub fn new(mapping: ActionMapping, sink: Arc<dyn ActionSink>) -> Self {
        Self {
            mapping: ArcSwap::from_pointee(mapping),
            sink,
            log: None,
        }
    }

    pub fn with_log(mut self, writer: Box<dyn Write + Send>) -> Self {
        self.log = Some(Mutex::new(writer));
        self
    }

    pub fn mapping(&self) -> Arc<ActionMapping> {
        self.mapping.load_full()
    }

    /// Replaces the active mapping; later dispatches see only the new table.
    pub fn swap_mapping(&self, new: ActionMapping) -> Arc<ActionMapping> {
        self.mapping.swap(Arc::new(new))
    }

    pub fn execute(&self, event: &GestureEvent) -> DispatchRecord {
        let mapping = self.mapping.load();
        let record = execute(event, &mapping, self.sink.as_ref());
        if let Some(log) = &self.log {
            let mut w = log.lock().expect("dispatch log lock");
            if let Err(e) = w.write_all(record.to_json_line().as_bytes()) {
                log::warn!("dispatch log write failed: {e}");
            }
        }
        record
    }

    pub fn flush(&self) -> io::Result<()> {
        match &self.log {
            Some(log) => log.lock().expect("dispatch log lock").flush(),
            None => Ok(()),
        }
    }
}
