use std::io::{BufRead, Write};

use super::SimEvent;

/// Line-delimited JSON writer for simulator events.
pub struct TraceWriter<W: Write> {
    out: W,
    lines: u64,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out, lines: 0 }
    }

    pub fn write(&mut self, events: &[SimEvent]) -> std::io::Result<()> {
        for e in events {
            serde_json::to_writer(&mut self.out, e)?;
            self.out.write_all(b"\n")?;
            self.lines += 1;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }

    pub fn lines(&self) -> u64 {
        self.lines
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub fn write_trace<W: Write>(out: W, events: &[SimEvent]) -> std::io::Result<()> {
    let mut w = TraceWriter::new(out);
    w.write(events)?;
    w.into_inner().flush()
}

pub fn read_trace<R: BufRead>(input: R) -> std::io::Result<Vec<SimEvent>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
    }
    Ok(out)
}
