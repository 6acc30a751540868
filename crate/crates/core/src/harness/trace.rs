//! Trace hashing: 64-bit FNV-1a over the canonical event stream.

use std::fmt;

use serde::{Deserialize, Serialize};

const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const PRIME: u64 = 0x0000_0100_0000_01b3;

/// Digest of a trace, printed as 16 lowercase hex digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TraceHash(pub u64);

impl fmt::Display for TraceHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

#[derive(Debug, Clone)]
pub struct TraceHasher {
    state: u64,
    lines: u64,
    /// Rendered lines, kept only when recording is on.
    record: Option<Vec<String>>,
}

impl Default for TraceHasher {
    fn default() -> Self {
        TraceHasher {
            state: OFFSET,
            lines: 0,
            record: None,
        }
    }
}

impl TraceHasher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn recording() -> Self {
        TraceHasher {
            record: Some(Vec::new()),
            ..Self::default()
        }
    }

    pub fn set_recording(&mut self, on: bool) {
        match (on, self.record.is_some()) {
            (true, false) => self.record = Some(Vec::new()),
            (false, true) => self.record = None,
            _ => {}
        }
    }

    fn absorb(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.state ^= b as u64;
            self.state = self.state.wrapping_mul(PRIME);
        }
    }

    /// Adds one line (a newline terminator is hashed after it).
    pub fn line(&mut self, s: &str) {
        self.absorb(s.as_bytes());
        self.absorb(b"\n");
        self.lines += 1;
        if let Some(r) = &mut self.record {
            r.push(s.to_string());
        }
    }

    pub fn digest(&self) -> TraceHash {
        TraceHash(self.state)
    }

    pub fn lines(&self) -> u64 {
        self.lines
    }

    pub fn recorded(&self) -> &[String] {
        self.record.as_deref().unwrap_or(&[])
    }
}

/// FNV-1a of a byte string.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = TraceHasher::new();
    h.absorb(bytes);
    h.state
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_vectors() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn lines_are_terminated() {
        let mut h = TraceHasher::recording();
        h.line("foo");
        h.line("bar");
        assert_eq!(h.digest().0, fnv1a(b"foo\nbar\n"));
        assert_eq!(h.recorded(), &["foo".to_string(), "bar".to_string()]);
        assert_eq!(format!("{}", TraceHash(0xab)), "00000000000000ab");
    }
}
