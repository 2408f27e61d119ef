//! Stderr logging gated by DLRREC_LOG={error|info|debug}. Default: info.
//! Result files never carry timestamps; log lines are the only place
//! wall-clock output is allowed.

use std::sync::OnceLock;

#[derive(PartialEq, PartialOrd, Clone, Copy)]
pub enum Level {
    Error = 0,
    Info = 1,
    Debug = 2,
}

pub fn level() -> Level {
    static LEVEL: OnceLock<Level> = OnceLock::new();
    *LEVEL.get_or_init(|| match std::env::var("DLRREC_LOG").as_deref() {
        Ok("error") => Level::Error,
        Ok("debug") => Level::Debug,
        _ => Level::Info,
    })
}

pub fn emit(at: Level, tag: &str, msg: std::fmt::Arguments<'_>) {
    if level() >= at {
        eprintln!("[{tag}] {msg}");
    }
}

macro_rules! info {
    ($($arg:tt)*) => {
        crate::logging::emit(crate::logging::Level::Info, "info", format_args!($($arg)*))
    };
}

macro_rules! debug {
    ($($arg:tt)*) => {
        crate::logging::emit(crate::logging::Level::Debug, "debug", format_args!($($arg)*))
    };
}

pub(crate) use {debug, info};
