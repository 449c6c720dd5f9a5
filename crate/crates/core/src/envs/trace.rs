use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::Pos;

/// One JSON-lines record of an episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub positions: Vec<Pos>,
    pub actions: Vec<usize>,
    pub reward: f64,
    pub done: bool,
}

/// Streams [`TraceRecord`]s as JSON lines.
pub struct EpisodeTracer<W: Write> {
    out: W,
}

impl<W: Write> EpisodeTracer<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn record(&mut self, rec: &TraceRecord) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, rec)?;
        self.out.write_all(b"\n")
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
