//! Extracts a scale code from an LLM's free-text answer.
//!
//! Strategies fire in a fixed order, first hit wins:
//!
//! 1. an explicit "around A or B" range (coded as the midpoint, flagged
//!    approximate);
//! 2. an explicit "choose N" / "N on the scale" numeral within the scale
//!    range;
//! 3. a canonical label directly following "choose";
//! 4. a quoted or markdown-emphasized canonical label anywhere;
//! 5. a bare canonical label anywhere.
//!
//! The choose-anchored numeral outranks label matching because numeric
//! answers often embed distracting label words in parentheses. Candidate
//! labels are always tried longest first so "agree strongly" never parses
//! as "agree". Matching is case-insensitive and tolerant of surrounding
//! punctuation and markdown emphasis. Negation is not modeled; suspicious
//! texts surface through the parse log, not the parser.

use std::fmt;

use regex::Regex;
use std::sync::OnceLock;
use thiserror::Error;

use crate::questionnaire::ScaleSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchStrategy {
    ApproximateRange,
    ChooseNumber,
    ChooseLabel,
    EmphasizedLabel,
    BareLabel,
}

impl MatchStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchStrategy::ApproximateRange => "approximate_range",
            MatchStrategy::ChooseNumber => "choose_number",
            MatchStrategy::ChooseLabel => "choose_label",
            MatchStrategy::EmphasizedLabel => "emphasized_label",
            MatchStrategy::BareLabel => "bare_label",
        }
    }
}

impl fmt::Display for MatchStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAnswer {
    /// Integer scale code, except for approximate range answers which carry
    /// the midpoint (e.g. "around 3 or 4" -> 3.5).
    pub value: f64,
    pub strategy: MatchStrategy,
    /// The text span the winning strategy matched.
    pub matched: String,
    pub approximate: bool,
}

impl ParsedAnswer {
    /// The integer code, when the value is integral.
    pub fn code(&self) -> Option<i32> {
        if self.value.fract() == 0.0 {
            Some(self.value as i32)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("no strategy matched the response text")]
    NoMatch,
    #[error("ambiguous response: candidates {0:?} matched at equal precedence")]
    Ambiguous(Vec<String>),
}

#[derive(Debug, Error)]
#[error("code {code} outside scale range {min}..{max}")]
pub struct CodeOutOfRange {
    pub code: i32,
    pub min: i32,
    pub max: i32,
}

/// The stored canonical label for a code, or the bare numeral for unlabeled
/// codes on numeric scales.
pub fn canonical_label(code: i32, scale: &ScaleSpec) -> Result<String, CodeOutOfRange> {
    if !scale.contains(code) {
        return Err(CodeOutOfRange {
            code,
            min: scale.min_code,
            max: scale.max_code,
        });
    }
    Ok(scale
        .label_for(code)
        .map(str::to_string)
        .unwrap_or_else(|| code.to_string()))
}

const EMPHASIS_CHARS: &[char] = &['*', '_', '"', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}'];

fn strip_emphasis(s: &str) -> String {
    s.chars().filter(|c| !EMPHASIS_CHARS.contains(c)).collect()
}

fn re(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("valid regex"))
}

/// Labels sorted longest first, paired with their codes.
fn labels_by_length(scale: &ScaleSpec) -> Vec<(String, i32)> {
    let mut labels: Vec<(String, i32)> = scale
        .labels
        .iter()
        .map(|(c, l)| (l.to_lowercase(), *c))
        .collect();
    labels.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));
    labels
}

fn is_boundary(c: Option<char>) -> bool {
    c.map_or(true, |c| !c.is_alphanumeric())
}

pub fn parse_answer(text: &str, scale: &ScaleSpec) -> Result<ParsedAnswer, ParseError> {
    assert!(!text.is_empty(), "response text must be non-empty");
    let norm = text.to_lowercase();
    let labels = labels_by_length(scale);
    let in_range = |v: i64| v >= scale.min_code as i64 && v <= scale.max_code as i64;

    // 1. "around A or B" range answers
    static RANGE_RE: OnceLock<Regex> = OnceLock::new();
    let range_re = re(&RANGE_RE, r"around\s+(\d{1,2})\s+or\s+(\d{1,2})");
    if let Some(c) = range_re.captures(&norm) {
        let a: i64 = c[1].parse().unwrap();
        let b: i64 = c[2].parse().unwrap();
        if in_range(a) && in_range(b) {
            return Ok(ParsedAnswer {
                value: (a + b) as f64 / 2.0,
                strategy: MatchStrategy::ApproximateRange,
                matched: c[0].to_string(),
                approximate: true,
            });
        }
    }

    // 2. explicit numerals: "choose N" / "N on the scale"
    static CHOOSE_NUM_RE: OnceLock<Regex> = OnceLock::new();
    let choose_num_re = re(
        &CHOOSE_NUM_RE,
        r#"\bcho(?:o)?se\s*[*_"\u{201c}\u{2018}'(\[]*\s*(\d{1,2})\b"#,
    );
    static ON_SCALE_RE: OnceLock<Regex> = OnceLock::new();
    let on_scale_re = re(&ON_SCALE_RE, r"\b(\d{1,2})[*_]*\s+on\s+the\s+(?:\d+-\d+\s+)?scale");
    for pat in [choose_num_re, on_scale_re] {
        let mut hits: Vec<(i64, String)> = Vec::new();
        for c in pat.captures_iter(&norm) {
            let v: i64 = c[1].parse().unwrap();
            if in_range(v) {
                hits.push((v, c[0].to_string()));
            }
        }
        hits.dedup_by_key(|(v, _)| *v);
        let distinct: std::collections::BTreeSet<i64> = hits.iter().map(|(v, _)| *v).collect();
        match distinct.len() {
            0 => {}
            1 => {
                let (v, matched) = hits.into_iter().next().unwrap();
                return Ok(ParsedAnswer {
                    value: v as f64,
                    strategy: MatchStrategy::ChooseNumber,
                    matched,
                    approximate: false,
                });
            }
            _ => {
                return Err(ParseError::Ambiguous(
                    distinct.iter().map(|v| v.to_string()).collect(),
                ))
            }
        }
    }

    // 3. label directly following "choose"
    static CHOOSE_RE: OnceLock<Regex> = OnceLock::new();
    let choose_re = re(&CHOOSE_RE, r"\bcho(?:o)?se\b");
    let mut choose_hits: Vec<(i32, String)> = Vec::new();
    for m in choose_re.find_iter(&norm) {
        let window_end = norm
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(norm.len()))
            .find(|&i| i >= (m.end() + 80).min(norm.len()))
            .unwrap_or(norm.len());
        let window = strip_emphasis(&norm[m.end()..window_end]);
        let window = window.trim_start_matches(|c: char| c.is_whitespace() || ":(-".contains(c));
        for (label, code) in &labels {
            if window.starts_with(label.as_str())
                && is_boundary(window[label.len()..].chars().next())
            {
                choose_hits.push((*code, label.clone()));
                break;
            }
        }
    }
    if let Some(hit) = resolve_label_hits(choose_hits, MatchStrategy::ChooseLabel)? {
        return Ok(hit);
    }

    // 4. quoted or emphasized label anywhere
    static EMPH_RE: OnceLock<Regex> = OnceLock::new();
    let emph_re = re(
        &EMPH_RE,
        r#""([^"]{1,60})"|\u{201c}([^\u{201c}\u{201d}]{1,60})\u{201d}|\*\*([^*]{1,60})\*\*|\*([^*]{1,60})\*"#,
    );
    let mut emph_hits: Vec<(i32, String)> = Vec::new();
    for c in emph_re.captures_iter(&norm) {
        let seg = (1..=4).find_map(|i| c.get(i)).map(|m| m.as_str()).unwrap_or("");
        let cleaned = strip_emphasis(seg);
        let cleaned = cleaned.trim_matches(|c: char| c.is_whitespace() || ".,;:!?".contains(c));
        for (label, code) in &labels {
            if cleaned == label {
                emph_hits.push((*code, label.clone()));
                break;
            }
        }
    }
    if let Some(hit) = resolve_label_hits(emph_hits, MatchStrategy::EmphasizedLabel)? {
        return Ok(hit);
    }

    // 5. bare label anywhere, longest match masking shorter overlaps
    let cleaned = strip_emphasis(&norm);
    let mut occurrences: Vec<(usize, usize, i32, &str)> = Vec::new();
    for (label, code) in &labels {
        let mut from = 0;
        while let Some(pos) = cleaned[from..].find(label.as_str()) {
            let start = from + pos;
            let end = start + label.len();
            let before = cleaned[..start].chars().next_back();
            let after = cleaned[end..].chars().next();
            if is_boundary(before) && is_boundary(after) {
                occurrences.push((start, end, *code, label.as_str()));
            }
            from = end;
        }
    }
    occurrences.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
    let mut last_end = 0;
    let mut bare_hits: Vec<(i32, String)> = Vec::new();
    for (start, end, code, label) in occurrences {
        if start >= last_end {
            bare_hits.push((code, label.to_string()));
            last_end = end;
        }
    }
    if let Some(hit) = resolve_label_hits(bare_hits, MatchStrategy::BareLabel)? {
        return Ok(hit);
    }

    Err(ParseError::NoMatch)
}

/// Zero hits: no match at this precedence. One distinct label: a hit. Two or
/// more distinct labels: ambiguous.
fn resolve_label_hits(
    hits: Vec<(i32, String)>,
    strategy: MatchStrategy,
) -> Result<Option<ParsedAnswer>, ParseError> {
    let distinct: std::collections::BTreeSet<i32> = hits.iter().map(|(c, _)| *c).collect();
    match distinct.len() {
        0 => Ok(None),
        1 => {
            let (code, label) = hits.into_iter().next().unwrap();
            Ok(Some(ParsedAnswer {
                value: code as f64,
                strategy,
                matched: label,
                approximate: false,
            }))
        }
        _ => Err(ParseError::Ambiguous(
            hits.into_iter().map(|(_, l)| l).collect(),
        )),
    }
}
