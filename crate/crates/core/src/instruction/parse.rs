use serde::{Deserialize, Serialize};

use super::{
    Action, ClauseError, CommandHints, CommandSpan, EditCommand, Magnitude, ParseErrorKind, Vocabulary, ACTION_SYNONYMS,
};
use crate::centerline::Anchor;

/// Outcome for one clause of an instruction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClauseResult {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub command: Option<EditCommand>,
    pub error: Option<ClauseError>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParsedInstruction {
    pub clauses: Vec<ClauseResult>,
}

impl ParsedInstruction {
    pub fn commands(&self) -> Vec<EditCommand> {
        self.clauses.iter().filter_map(|c| c.command.clone()).collect()
    }

    pub fn errors(&self) -> Vec<ClauseError> {
        self.clauses.iter().filter_map(|c| c.error.clone()).collect()
    }

    pub fn is_ok(&self) -> bool {
        self.clauses.iter().all(|c| c.error.is_none())
    }
}

/// Byte ranges of the non-empty clauses of `text`, split on `;` and on a
/// period followed by whitespace, `;` or the end of the text.
pub fn split_clauses(text: &str) -> Vec<(usize, usize)> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    let mut push = |s: usize, e: usize| {
        let piece = &text[s..e];
        let lead = piece.len() - piece.trim_start().len();
        let trimmed = piece.trim();
        if !trimmed.is_empty() {
            out.push((s + lead, s + lead + trimmed.len()));
        }
    };
    for i in 0..b.len() {
        let sep = b[i] == b';' || (b[i] == b'.' && (i + 1 == b.len() || b[i + 1].is_ascii_whitespace() || b[i + 1] == b';'));
        if sep {
            push(start, i);
            start = i + 1;
        }
    }
    push(start, b.len());
    out
}

/// Parses every clause of `text`. Clauses that fail produce structured
/// errors; the rest still yield commands.
pub fn parse_instruction(text: &str, vocab: &Vocabulary) -> ParsedInstruction {
    let lower = text.to_ascii_lowercase();
    let clauses = split_clauses(text)
        .into_iter()
        .enumerate()
        .map(|(index, (start, end))| {
            let mut cur = Cursor {
                s: &lower[..end],
                pos: start,
                clause: index,
                vocab,
            };
            let (command, error) = match cur.clause() {
                Ok(c) => (Some(c), None),
                Err(e) => (None, Some(e)),
            };
            ClauseResult {
                index,
                start,
                end,
                text: text[start..end].to_string(),
                command,
                error,
            }
        })
        .collect();
    ParsedInstruction { clauses }
}

struct Cursor<'a> {
    /// Lowercased text up to the clause end; `pos` is an absolute offset.
    s: &'a str,
    pos: usize,
    clause: usize,
    vocab: &'a Vocabulary,
}

type PResult<T> = Result<T, ClauseError>;

impl Cursor<'_> {
    fn ws(&mut self) {
        while self.s.as_bytes().get(self.pos).is_some_and(|b| b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn rest(&self) -> &str {
        &self.s[self.pos..]
    }

    fn at_end(&mut self) -> bool {
        self.ws();
        self.pos >= self.s.len()
    }

    fn err(&self, kind: ParseErrorKind, start: usize, end: usize, detail: impl Into<String>) -> ClauseError {
        ClauseError {
            kind,
            clause: self.clause,
            start,
            end: end.max(start),
            detail: detail.into(),
        }
    }

    /// End offset of the word starting at the cursor.
    fn word_end(&self) -> usize {
        let r = self.rest();
        let n = r
            .char_indices()
            .find(|(_, c)| c.is_whitespace() || matches!(c, ',' | '(' | ')'))
            .map_or(r.len(), |(i, _)| i);
        self.pos + n.max(r.chars().next().map_or(0, char::len_utf8).min(r.len()))
    }

    /// Consumes a phrase of whitespace-separated words, each ending at a word
    /// boundary. Restores the cursor on failure.
    fn phrase(&mut self, p: &str) -> bool {
        let save = self.pos;
        for w in p.split_whitespace() {
            self.ws();
            let Some(after) = self.rest().strip_prefix(w) else {
                self.pos = save;
                return false;
            };
            let last_alnum = w.as_bytes().last().is_some_and(u8::is_ascii_alphanumeric);
            if last_alnum && after.as_bytes().first().is_some_and(u8::is_ascii_alphanumeric) {
                self.pos = save;
                return false;
            }
            self.pos += w.len();
        }
        true
    }

    fn byte(&mut self, c: u8) -> bool {
        self.ws();
        if self.s.as_bytes().get(self.pos) == Some(&c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn number(&mut self) -> Option<f64> {
        self.ws();
        let b = self.s.as_bytes();
        let start = self.pos;
        let mut i = start;
        if b.get(i) == Some(&b'-') {
            i += 1;
        }
        let digits = |i: &mut usize| {
            let s = *i;
            while b.get(*i).is_some_and(u8::is_ascii_digit) {
                *i += 1;
            }
            *i > s
        };
        if !digits(&mut i) {
            return None;
        }
        if b.get(i) == Some(&b'.') && b.get(i + 1).is_some_and(u8::is_ascii_digit) {
            i += 1;
            digits(&mut i);
        }
        let x: f64 = self.s[start..i].parse().ok()?;
        self.pos = i;
        x.is_finite().then_some(x)
    }

    fn action(&mut self) -> PResult<Action> {
        self.ws();
        let mut best: Option<(Action, &str)> = None;
        for (action, words) in ACTION_SYNONYMS {
            for w in *words {
                if best.is_none_or(|(_, b)| w.len() > b.len()) {
                    let save = self.pos;
                    if self.phrase(w) {
                        best = Some((*action, w));
                    }
                    self.pos = save;
                }
            }
        }
        match best {
            Some((a, w)) => {
                self.phrase(w);
                Ok(a)
            }
            None => {
                let end = self.word_end();
                Err(self.err(
                    ParseErrorKind::UnknownAction,
                    self.pos,
                    end,
                    format!("'{}' is not a known action", &self.s[self.pos..end]),
                ))
            }
        }
    }

    fn segment(&mut self) -> PResult<u8> {
        self.ws();
        self.phrase("the");
        self.ws();
        match self.vocab.match_prefix(self.rest()) {
            Some((class, len)) => {
                self.pos += len;
                Ok(class)
            }
            None => {
                let end = self.word_end();
                Err(self.err(
                    ParseErrorKind::UnknownSegment,
                    self.pos,
                    end,
                    format!("'{}' is not a known segment", &self.s[self.pos..end]),
                ))
            }
        }
    }

    fn percent(&mut self, start: usize) -> PResult<f64> {
        let x = self
            .number()
            .ok_or_else(|| self.err(ParseErrorKind::MalformedSpan, start, self.word_end(), "expected a percentage"))?;
        if !self.byte(b'%') {
            self.phrase("percent");
        }
        Ok(x)
    }

    fn end_anchor(&mut self) -> Option<Anchor> {
        let save = self.pos;
        for a in [Anchor::Proximal, Anchor::Distal] {
            if self.phrase(a.as_str()) {
                self.phrase("end");
                return Some(a);
            }
        }
        self.pos = save;
        None
    }

    /// `from P to P` or `between P and P`, optionally followed by the anchor.
    fn locator(&mut self, start: usize, between: bool) -> PResult<CommandSpan> {
        let lo = self.percent(start)?;
        let joiner = if between { "and" } else { "to" };
        if !self.phrase(joiner) {
            return Err(self.err(ParseErrorKind::MalformedSpan, start, self.word_end(), format!("expected '{joiner}'")));
        }
        let hi = self.percent(start)?;
        let mut anchor = Anchor::Proximal;
        let save = self.pos;
        if self.phrase("measured from the") || self.phrase("from the") || self.phrase("of its length from the") {
            match self.end_anchor() {
                Some(a) => anchor = a,
                None => {
                    return Err(self.err(
                        ParseErrorKind::MalformedSpan,
                        save,
                        self.word_end(),
                        "expected 'proximal' or 'distal'",
                    ))
                }
            }
        }
        if !(0.0 <= lo && lo < hi && hi <= 100.0) {
            return Err(self.err(
                ParseErrorKind::MalformedSpan,
                start,
                self.pos,
                format!("{lo}% to {hi}% is not an ordered range within 0..100"),
            ));
        }
        Ok(CommandSpan { lo, hi, anchor })
    }

    fn magnitude(&mut self, start: usize) -> PResult<Magnitude> {
        let bad = |c: &Self, d: &str| c.err(ParseErrorKind::MalformedMagnitude, start, c.word_end(), d.to_string());
        let m = if self.phrase("by a factor of") {
            Magnitude::Factor(self.number().ok_or_else(|| bad(self, "expected a factor"))?)
        } else if self.phrase("to radius") || self.phrase("to a radius of") || self.phrase("with radius") {
            let r = self.number().ok_or_else(|| bad(self, "expected a radius"))?;
            if !self.phrase("mm") {
                return Err(bad(self, "radius needs 'mm'"));
            }
            Magnitude::RadiusMm(r)
        } else {
            // Caller consumed "by".
            let x = self.number().ok_or_else(|| bad(self, "expected an amount"))?;
            if self.byte(b'%') || self.phrase("percent") {
                Magnitude::Percent(x)
            } else if self.phrase("voxels") || self.phrase("voxel") {
                Magnitude::Voxels(x)
            } else if self.phrase("mm") {
                Magnitude::Millimeters(x)
            } else {
                return Err(bad(self, "expected '%', 'voxels' or 'mm'"));
            }
        };
        if m.value().is_nan() || m.value() <= 0.0 {
            return Err(self.err(ParseErrorKind::MalformedMagnitude, start, self.pos, "magnitude must be positive"));
        }
        Ok(m)
    }

    fn point(&mut self, start: usize) -> PResult<[f64; 3]> {
        let bad = |c: &Self| c.err(ParseErrorKind::MalformedHints, start, c.word_end(), "expected a point (x, y, z)");
        if !self.byte(b'(') {
            return Err(bad(self));
        }
        let mut p = [0.0; 3];
        for (k, v) in p.iter_mut().enumerate() {
            *v = self.number().ok_or_else(|| bad(self))?;
            if k < 2 && !self.byte(b',') {
                return Err(bad(self));
            }
        }
        if !self.byte(b')') {
            return Err(bad(self));
        }
        Ok(p)
    }

    fn points(&mut self, start: usize) -> PResult<Vec<[f64; 3]>> {
        let mut pts = vec![self.point(start)?];
        loop {
            let save = self.pos;
            let comma = self.byte(b',');
            let and = self.phrase("and");
            if (comma || and) && self.peek_byte(b'(') {
                pts.push(self.point(start)?);
            } else {
                self.pos = save;
                return Ok(pts);
            }
        }
    }

    fn peek(&mut self, p: &str) -> bool {
        let save = self.pos;
        let hit = self.phrase(p);
        self.pos = save;
        hit
    }

    fn peek_byte(&mut self, c: u8) -> bool {
        self.ws();
        self.s.as_bytes().get(self.pos) == Some(&c)
    }

    /// `from` followed by a number, as opposed to `from the ... end`.
    fn peek_from_number(&mut self) -> bool {
        let save = self.pos;
        let hit = self.phrase("from") && self.number_ahead();
        self.pos = save;
        hit
    }

    fn clause(&mut self) -> PResult<EditCommand> {
        let clause_start = self.pos;
        let (action, segment) = if self.phrase("in the") || self.phrase("in") {
            let seg = self.segment()?;
            self.byte(b',');
            let a = self.action()?;
            let _ = self.phrase("the region") || self.phrase("the segment") || self.phrase("it");
            (a, seg)
        } else {
            let a = self.action()?;
            let _ = self.phrase("the gap in")
                || self.phrase("the gaps in")
                || self.phrase("the gap of")
                || self.phrase("the fragments of")
                || self.phrase("the pieces of");
            (a, self.segment()?)
        };
        let mut cmd = EditCommand::new(action, segment);
        let mut end_only: Option<(Anchor, usize)> = None;
        let mut hints = CommandHints::default();
        while !self.at_end() {
            let start = self.pos;
            let dup = |c: &Self, what: &str| {
                c.err(ParseErrorKind::UnexpectedText, start, c.word_end(), format!("{what} given twice"))
            };
            if self.peek_from_number() {
                self.phrase("from");
                if cmd.span.is_some() {
                    return Err(dup(self, "span"));
                }
                cmd.span = Some(self.locator(start, false)?);
            } else if self.phrase("between") {
                if cmd.span.is_some() {
                    return Err(dup(self, "span"));
                }
                cmd.span = Some(self.locator(start, true)?);
            } else if self.phrase("at the") || self.phrase("from the") || self.phrase("measured from the") {
                let Some(a) = self.end_anchor() else {
                    return Err(self.err(ParseErrorKind::MalformedSpan, start, self.word_end(), "expected an end"));
                };
                end_only = Some((a, start));
            } else if self.peek("by a factor of")
                || self.peek("to radius")
                || self.peek("to a radius of")
                || self.peek("with radius")
                || self.phrase("by")
            {
                if cmd.magnitude.is_some() {
                    return Err(dup(self, "magnitude"));
                }
                cmd.magnitude = Some(self.magnitude(start)?);
            } else if self.phrase("connecting") {
                let a = self.segment()?;
                if !self.phrase("and") {
                    return Err(self.err(ParseErrorKind::MalformedHints, start, self.word_end(), "expected 'and'"));
                }
                let b = self.segment()?;
                hints.attach = Some([a, b]);
            } else if self.phrase("through") || self.phrase("at") || self.phrase("via") {
                hints.points.extend(self.points(start)?);
            } else if self.byte(b',') {
                continue;
            } else {
                let end = self.word_end();
                return Err(self.err(
                    ParseErrorKind::UnexpectedText,
                    start,
                    end,
                    format!("unexpected '{}'", &self.s[start..end]),
                ));
            }
        }
        if let Some((anchor, start)) = end_only {
            match (&mut cmd.span, cmd.magnitude) {
                (Some(span), _) => span.anchor = anchor,
                (None, Some(Magnitude::Percent(p))) if p <= 100.0 => {
                    cmd.span = Some(CommandSpan { lo: 0.0, hi: p, anchor })
                }
                _ => {
                    return Err(self.err(
                        ParseErrorKind::MalformedSpan,
                        start,
                        self.pos,
                        "an end without a range needs a percentage",
                    ))
                }
            }
        }
        cmd.hints = hints;
        cmd.validate()
            .map_err(|d| self.err(ParseErrorKind::MalformedSpan, clause_start, self.pos, d))?;
        Ok(cmd)
    }

    fn number_ahead(&mut self) -> bool {
        self.ws();
        self.s.as_bytes().get(self.pos).is_some_and(|b| b.is_ascii_digit() || *b == b'-')
    }
}
