//! Text-as-Mask (TAM) codec.
//!
//! Only anomalous patches are written. Each maximal horizontal run of
//! anomalous patches in a row becomes one coordinate group, and groups are
//! joined by commas:
//!
//! ```text
//! seg  := "" | run ("," run)*
//! run  := "(" row "," col ")" | "(" row "," col "-" col ")"
//! ```
//!
//! Integers are decimal and 0-indexed, coordinates are `(row, col)`, and a
//! range is inclusive on both ends. The encoder always writes the canonical
//! form: runs sorted by `(row, col_start)`, maximal, no whitespace, and the
//! dash form only for runs longer than one patch. The decoder also accepts
//! whitespace around tokens, unsorted input, and overlapping or adjacent runs,
//! which are unioned.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ParseError;
use crate::mask_grid::{GridSpec, PatchLabelGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TamRun {
    pub row: usize,
    pub col_start: usize,
    /// Inclusive.
    pub col_end: usize,
}

impl TamRun {
    pub fn len(&self) -> usize {
        self.col_end - self.col_start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl fmt::Display for TamRun {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.col_start == self.col_end {
            write!(f, "({},{})", self.row, self.col_start)
        } else {
            write!(f, "({},{}-{})", self.row, self.col_start, self.col_end)
        }
    }
}

/// Canonical encoding of a patch grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TamString {
    pub text: String,
    pub spec: GridSpec,
}

impl TamString {
    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }
}

impl fmt::Display for TamString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Maximal horizontal runs of anomalous patches, row-major.
pub fn runs(labels: &PatchLabelGrid) -> Vec<TamRun> {
    let mut out = Vec::new();
    for r in 0..labels.rows() {
        let row = labels.row(r);
        let mut c = 0;
        while c < row.len() {
            if !row[c] {
                c += 1;
                continue;
            }
            let start = c;
            while c + 1 < row.len() && row[c + 1] {
                c += 1;
            }
            out.push(TamRun {
                row: r,
                col_start: start,
                col_end: c,
            });
            c += 1;
        }
    }
    out
}

pub fn encode(labels: &PatchLabelGrid) -> TamString {
    let text = runs(labels)
        .iter()
        .map(TamRun::to_string)
        .collect::<Vec<_>>()
        .join(",");
    TamString {
        text,
        spec: *labels.spec(),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn at_end(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    fn expect(&mut self, want: u8) -> Result<(), ParseError> {
        self.skip_ws();
        match self.peek() {
            Some(b) if b == want => {
                self.pos += 1;
                Ok(())
            }
            Some(b) => Err(ParseError::new(
                self.pos,
                format!("expected '{}', found '{}'", want as char, b as char),
            )),
            None => Err(ParseError::new(
                self.pos,
                format!("expected '{}', found end of input", want as char),
            )),
        }
    }

    fn number(&mut self, limit: usize, what: &str) -> Result<usize, ParseError> {
        self.skip_ws();
        let start = self.pos;
        let mut value: usize = 0;
        while let Some(b @ b'0'..=b'9') = self.peek() {
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add(usize::from(b - b'0')))
                .ok_or_else(|| ParseError::new(start, format!("{what} overflows")))?;
            self.pos += 1;
        }
        if self.pos == start {
            return Err(ParseError::new(start, format!("expected {what}")));
        }
        if value >= limit {
            return Err(ParseError::new(
                start,
                format!("{what} {value} out of range (limit {limit})"),
            ));
        }
        Ok(value)
    }

    fn run(&mut self, spec: &GridSpec) -> Result<TamRun, ParseError> {
        self.expect(b'(')?;
        let row = self.number(spec.rows, "row")?;
        self.expect(b',')?;
        let col_start = self.number(spec.cols, "column")?;
        self.skip_ws();
        let col_end = if self.peek() == Some(b'-') {
            self.pos += 1;
            let at = self.pos;
            let end = self.number(spec.cols, "column")?;
            if end < col_start {
                return Err(ParseError::new(
                    at,
                    format!("reversed range {col_start}-{end}"),
                ));
            }
            end
        } else {
            col_start
        };
        self.expect(b')')?;
        Ok(TamRun {
            row,
            col_start,
            col_end,
        })
    }
}

/// Parses a TAM string into the union of its runs.
pub fn parse_runs(text: &str, spec: &GridSpec) -> Result<Vec<TamRun>, ParseError> {
    let mut cur = Cursor {
        bytes: text.as_bytes(),
        pos: 0,
    };
    let mut out = Vec::new();
    cur.skip_ws();
    if cur.at_end() {
        return Ok(out);
    }
    loop {
        out.push(cur.run(spec)?);
        cur.skip_ws();
        if cur.at_end() {
            return Ok(out);
        }
        cur.expect(b',')?;
    }
}

pub fn decode(text: &str, spec: &GridSpec) -> Result<PatchLabelGrid, ParseError> {
    if spec.rows == 0 || spec.cols == 0 {
        return Err(ParseError::new(0, "grid has no cells"));
    }
    let mut labels = vec![false; spec.cells()];
    for run in parse_runs(text, spec)? {
        let base = run.row * spec.cols;
        labels[base + run.col_start..=base + run.col_end].fill(true);
    }
    Ok(PatchLabelGrid::new(*spec, labels).expect("label count matches spec"))
}

/// `encode(decode(text))`.
pub fn canonicalize(text: &str, spec: &GridSpec) -> Result<TamString, ParseError> {
    decode(text, spec).map(|g| encode(&g))
}
