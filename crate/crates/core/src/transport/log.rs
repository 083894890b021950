use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::TcpSegment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PacketDirection {
    Tx,
    Rx,
}

#[derive(Serialize, Deserialize)]
struct LogLine {
    dir: PacketDirection,
    #[serde(flatten)]
    seg: TcpSegment,
}

/// Line-delimited JSON packet log, one segment per line.
pub struct PacketLog {
    out: Mutex<Box<dyn Write + Send>>,
}

impl PacketLog {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        Ok(Self::from_writer(BufWriter::new(File::create(path)?)))
    }

    pub fn from_writer<W: Write + Send + 'static>(w: W) -> Self {
        Self {
            out: Mutex::new(Box::new(w)),
        }
    }

    pub fn record(&self, dir: PacketDirection, seg: &TcpSegment) {
        let line = serde_json::to_string(&LogLine { dir, seg: *seg }).expect("segment serializes");
        let mut out = self.out.lock().unwrap_or_else(|e| e.into_inner());
        // Logging is best effort; a full disk must not abort a scan.
        let _ = writeln!(out, "{line}");
    }

    pub fn flush(&self) {
        let _ = self.out.lock().unwrap_or_else(|e| e.into_inner()).flush();
    }

    pub fn parse_line(line: &str) -> serde_json::Result<(PacketDirection, TcpSegment)> {
        let l: LogLine = serde_json::from_str(line)?;
        Ok((l.dir, l.seg))
    }
}

impl Drop for PacketLog {
    fn drop(&mut self) {
        self.flush();
    }
}
