//! Parsing of structured model responses of the form
//! `<seg>...</seg><think>...</think><answer>...</answer>`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// Options a multiple-choice question may offer.
pub const OPTION_LETTERS: [char; 5] = ['A', 'B', 'C', 'D', 'E'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Tag {
    SegOpen,
    SegClose,
    ThinkOpen,
    ThinkClose,
    AnswerOpen,
    AnswerClose,
}

const TAGS: [(Tag, &str); 6] = [
    (Tag::SegOpen, "<seg>"),
    (Tag::SegClose, "</seg>"),
    (Tag::ThinkOpen, "<think>"),
    (Tag::ThinkClose, "</think>"),
    (Tag::AnswerOpen, "<answer>"),
    (Tag::AnswerClose, "</answer>"),
];

const EXPECTED_ORDER: [Tag; 6] = [
    Tag::SegOpen,
    Tag::SegClose,
    Tag::ThinkOpen,
    Tag::ThinkClose,
    Tag::AnswerOpen,
    Tag::AnswerClose,
];

#[derive(Debug, Clone, Copy)]
struct TagHit {
    tag: Tag,
    start: usize,
    end: usize,
}

fn scan_tags(text: &str) -> Vec<TagHit> {
    let mut hits = Vec::new();
    for (i, _) in text.match_indices('<') {
        let rest = &text[i..];
        if let Some((tag, lit)) = TAGS.iter().find(|(_, lit)| rest.starts_with(lit)) {
            hits.push(TagHit {
                tag: *tag,
                start: i,
                end: i + lit.len(),
            });
        }
    }
    hits
}

/// Regions of a response. A region is `None` when its tag pair could not be
/// found (open tag, then a matching close tag after it).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StructuredResponse {
    pub seg: Option<String>,
    pub think: Option<String>,
    pub answer: Option<String>,
    /// All three tag pairs occur exactly once, in order, with only whitespace
    /// outside them.
    pub well_formed: bool,
}

impl StructuredResponse {
    /// Re-emits the regions in canonical order. Missing regions become empty.
    pub fn render(&self) -> String {
        format!(
            "<seg>{}</seg><think>{}</think><answer>{}</answer>",
            self.seg.as_deref().unwrap_or(""),
            self.think.as_deref().unwrap_or(""),
            self.answer.as_deref().unwrap_or(""),
        )
    }
}

fn region(text: &str, hits: &[TagHit], open: Tag, close: Tag) -> Option<String> {
    let open_idx = hits.iter().position(|h| h.tag == open)?;
    let start = hits[open_idx].end;
    let close_hit = hits[open_idx + 1..].iter().find(|h| h.tag == close)?;
    Some(text[start..close_hit.start].to_string())
}

pub fn parse_response(text: &str) -> StructuredResponse {
    let hits = scan_tags(text);
    let ordered = hits.len() == EXPECTED_ORDER.len()
        && hits.iter().zip(EXPECTED_ORDER).all(|(h, t)| h.tag == t);
    let well_formed = ordered && {
        let blank = |a: usize, b: usize| text[a..b].trim().is_empty();
        blank(0, hits[0].start)
            && blank(hits[1].end, hits[2].start)
            && blank(hits[3].end, hits[4].start)
            && blank(hits[5].end, text.len())
    };
    StructuredResponse {
        seg: region(text, &hits, Tag::SegOpen, Tag::SegClose),
        think: region(text, &hits, Tag::ThinkOpen, Tag::ThinkClose),
        answer: region(text, &hits, Tag::AnswerOpen, Tag::AnswerClose),
        well_formed,
    }
}

pub fn check_format(text: &str) -> bool {
    parse_response(text).well_formed
}

/// One multiple-choice option letter, stored uppercase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AnswerLetter(char);

impl AnswerLetter {
    pub fn new(c: char) -> Option<Self> {
        let up = c.to_ascii_uppercase();
        OPTION_LETTERS.contains(&up).then_some(Self(up))
    }

    pub fn as_char(self) -> char {
        self.0
    }

    /// Position in `A..=E`.
    pub fn index(self) -> usize {
        (self.0 as u8 - b'A') as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        OPTION_LETTERS.get(i).map(|&c| Self(c))
    }
}

impl fmt::Display for AnswerLetter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for AnswerLetter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.trim().chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => {
                Self::new(c).ok_or_else(|| Error::Argument(format!("'{c}' is not an option letter")))
            }
            _ => Err(Error::Argument(format!("'{s}' is not an option letter"))),
        }
    }
}

impl Serialize for AnswerLetter {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AnswerLetter {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// First whitespace-separated token that is a lone option letter, optionally
/// wrapped as `(C)` or followed by `.` or `)`. Case-insensitive.
pub fn extract_answer_letter(answer_text: &str) -> Option<AnswerLetter> {
    answer_text.split_whitespace().find_map(|token| {
        let token = token.strip_prefix('(').unwrap_or(token);
        let token = token
            .strip_suffix('.')
            .or_else(|| token.strip_suffix(')'))
            .unwrap_or(token);
        let mut chars = token.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => AnswerLetter::new(c),
            _ => None,
        }
    })
}
