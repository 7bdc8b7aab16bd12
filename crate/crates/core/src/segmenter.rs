//! Rule-based note segmentation: every run of two or more spaces is a
//! segment boundary.
//!
//! The rule is deliberately naive. Form exports such as
//! `Period Pattern  Regular  Regular Regular` over-split into fragments that
//! lose their field name; the tests pin that behaviour.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub text: String,
    /// Character offset into the normalized note text.
    pub start_index: usize,
    pub ordinal: usize,
}

/// Newlines (`\r\n`, `\n`, `\r`) and tabs become one space each.
pub fn normalize_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\r' => {
                if chars.peek() == Some(&'\n') {
                    chars.next();
                }
                out.push(' ');
            }
            '\n' | '\t' => out.push(' '),
            c => out.push(c),
        }
    }
    out
}

pub fn segment_note(text: &str) -> Vec<Segment> {
    let normalized = normalize_whitespace(text);
    let chars: Vec<char> = normalized.chars().collect();
    let mut segments = Vec::new();
    let push = |from: usize, to: usize, segments: &mut Vec<Segment>| {
        let piece: String = chars[from..to].iter().collect();
        let leading = piece.chars().take_while(|c| c.is_whitespace()).count();
        let trimmed = piece.trim();
        if !trimmed.is_empty() {
            segments.push(Segment {
                text: trimmed.to_string(),
                start_index: from + leading,
                ordinal: segments.len(),
            });
        }
    };

    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if chars[i] == ' ' && chars.get(i + 1) == Some(&' ') {
            let mut end = i;
            while end < chars.len() && chars[end] == ' ' {
                end += 1;
            }
            push(start, i, &mut segments);
            start = end;
            i = end;
        } else {
            i += 1;
        }
    }
    push(start, chars.len(), &mut segments);
    segments
}
