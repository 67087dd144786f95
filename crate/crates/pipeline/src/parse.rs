//! Reading answers, confidences and JSON verdicts out of free model text.

use std::sync::LazyLock;

use quorum_core::model::{AnswerFormat, DivergenceDepth, Label, QuestionRecord, StructureFeatures};
use regex::Regex;
use serde_json::{Map, Value};

static ANSWER_MARKER_YES_NO: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\banswer\b(?:\s+is)?\s*[:\-]?\s*[*_\s]*\(?\b(yes|no|true|false)\b").unwrap()
});
static ANSWER_MARKER_LETTER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\banswer\b(?:\s+is)?\s*[:\-]?\s*[*_\s]*\(?\b([a-z])\b\)?").unwrap());
static YES_NO_WORD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(yes|no)\b").unwrap());
static YES_NO_PAIR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:yes\s*(?:/|or|and)\s*no|no\s*(?:/|or|and)\s*yes)\b").unwrap());
static LETTER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\(([A-Z])\)|\b([A-Z])\b").unwrap());
static PERCENT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)(-?\d+(?:\.\d+)?)\s*(?:%|percent\b|/\s*100\b|out\s+of\s+(?:a\s+)?(?:possible\s+)?100\b)").unwrap()
});
static SCALE_RANGE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)(?:\bscale\s+of\s+)?\b[01]\s*(?:-|–|to|and)\s*100\b|\bscale\s+of\s+[01]\b").unwrap());
static CONFIDENCE_LABEL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)confidence(?:\s+level)?\s*(?:is|of|:|=)?\s*(-?\d+(?:\.\d+)?)").unwrap());
static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"-?\d+(?:\.\d+)?").unwrap());

/// The agent's final answer, or `None` when no valid answer can be read.
pub fn parse_answer(text: &str, format: AnswerFormat, choice_count: usize) -> Option<Label> {
    match format {
        AnswerFormat::YesNo => parse_yes_no(text),
        AnswerFormat::MultipleChoice => parse_letter(text, choice_count),
    }
}

fn parse_yes_no(text: &str) -> Option<Label> {
    if let Some(c) = ANSWER_MARKER_YES_NO.captures_iter(text).last() {
        let word = c[1].to_ascii_lowercase();
        return Some(if word == "yes" || word == "true" { Label::yes() } else { Label::no() });
    }
    // Sentences from last to first; the first one naming exactly one of
    // yes/no settles it.
    let cleaned = YES_NO_PAIR.replace_all(text, " ");
    for sentence in cleaned.rsplit(['.', '!', '?', '\n']) {
        let mut seen = (false, false);
        for m in YES_NO_WORD.find_iter(sentence) {
            if m.as_str().eq_ignore_ascii_case("yes") {
                seen.0 = true;
            } else {
                seen.1 = true;
            }
        }
        match seen {
            (true, false) => return Some(Label::yes()),
            (false, true) => return Some(Label::no()),
            _ => {}
        }
    }
    None
}

fn letter_in_range(c: char, choice_count: usize) -> Option<Label> {
    let i = (c.to_ascii_uppercase() as u8).checked_sub(b'A')? as usize;
    (i < choice_count).then(|| Label::letter(i))
}

fn parse_letter(text: &str, choice_count: usize) -> Option<Label> {
    let marked = ANSWER_MARKER_LETTER
        .captures_iter(text)
        .filter_map(|c| letter_in_range(c[1].chars().next()?, choice_count))
        .last();
    if marked.is_some() {
        return marked;
    }
    let mut last = None;
    for c in LETTER.captures_iter(text) {
        if let Some(m) = c.get(1) {
            last = letter_in_range(m.as_str().chars().next().unwrap(), choice_count).or(last);
            continue;
        }
        let m = c.get(2).unwrap();
        let after = &text[m.end()..];
        // "A" and "I" followed by a lowercase word are an article or pronoun.
        let is_word = matches!(m.as_str(), "A" | "I")
            && after.starts_with(' ')
            && after[1..].chars().next().is_some_and(|ch| ch.is_lowercase());
        if is_word || after.starts_with('\'') || after.starts_with('’') {
            continue;
        }
        last = letter_in_range(m.as_str().chars().next().unwrap(), choice_count).or(last);
    }
    last
}

/// A 0-100 confidence from a follow-up reply, clamped and scaled to [0, 1].
/// Decimal values of at most 1 without a percent sign are read as fractions.
pub fn parse_confidence(text: &str) -> Option<f64> {
    let to_unit = |raw: &str, explicit_percent: bool| -> Option<f64> {
        let v: f64 = raw.parse().ok()?;
        if !v.is_finite() {
            return None;
        }
        let pct = if !explicit_percent && raw.contains('.') && v <= 1.0 { v * 100.0 } else { v };
        Some(pct.clamp(0.0, 100.0) / 100.0)
    };
    if let Some(c) = PERCENT.captures(text) {
        return to_unit(&c[1], true);
    }
    let cleaned = SCALE_RANGE.replace_all(text, " ");
    if let Some(c) = CONFIDENCE_LABEL.captures(&cleaned) {
        return to_unit(&c[1], false);
    }
    NUMBER.find(&cleaned).and_then(|m| to_unit(m.as_str(), false))
}

/// The first JSON object in `text` that parses, scanning balanced braces.
pub fn extract_json_object(text: &str) -> Option<Map<String, Value>> {
    let bytes = text.as_bytes();
    for (start, _) in text.match_indices('{') {
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        for (i, &b) in bytes.iter().enumerate().skip(start) {
            if in_string {
                match (escaped, b) {
                    (true, _) => escaped = false,
                    (false, b'\\') => escaped = true,
                    (false, b'"') => in_string = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_string = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        if let Ok(Value::Object(m)) = serde_json::from_str(&text[start..=i]) {
                            return Some(m);
                        }
                        break;
                    }
                }
                _ => {}
            }
        }
    }
    None
}

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().trim_end_matches('%').trim().parse().ok(),
        _ => None,
    }
}

fn lookup<'a>(m: &'a Map<String, Value>, key: &str) -> Option<&'a Value> {
    m.get(key).or_else(|| m.iter().find(|(k, _)| k.eq_ignore_ascii_case(key)).map(|(_, v)| v))
}

pub const STRUCTURE_KEYS: [&str; 5] = [
    "evidence_overlap",
    "minority_new_info",
    "minority_strength",
    "majority_conf_language",
    "reasoning_complexity",
];

/// The six structure scores from an analysis reply. Every key must be
/// present and the depth must be early, middle or late.
pub fn parse_structure(text: &str) -> Option<StructureFeatures> {
    let m = extract_json_object(text)?;
    let mut scores = [0.0; 5];
    for (slot, key) in scores.iter_mut().zip(STRUCTURE_KEYS) {
        *slot = number(lookup(&m, key)?)?;
    }
    let depth = match lookup(&m, "divergence_depth")? {
        Value::String(s) => DivergenceDepth::parse(s)?,
        _ => return None,
    };
    if depth == DivergenceDepth::None {
        return None;
    }
    Some(StructureFeatures::from_scores(scores, depth))
}

/// Answer and confidence from an aggregator reply. The answer must be in
/// the question's answer set; a confidence above 1 is read as a percentage.
pub fn parse_aggregator(text: &str, question: &QuestionRecord) -> Option<(Label, f64)> {
    let m = extract_json_object(text)?;
    let answer = match lookup(&m, "answer")? {
        Value::String(s) => parse_answer(s, question.answer_format, question.choice_count)
            .or_else(|| Some(Label::new(s)).filter(|l| question.answer_set().contains(l)))?,
        Value::Bool(b) if question.answer_format == AnswerFormat::YesNo => {
            if *b {
                Label::yes()
            } else {
                Label::no()
            }
        }
        _ => return None,
    };
    let raw = number(lookup(&m, "confidence")?)?;
    if !raw.is_finite() {
        return None;
    }
    let conf = if raw > 1.0 { raw / 100.0 } else { raw };
    Some((answer, conf.clamp(0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use quorum_core::model::{Benchmark, StructureSource};

    fn yn(text: &str) -> Option<String> {
        parse_answer(text, AnswerFormat::YesNo, 2).map(|l| l.to_string())
    }

    fn mc(text: &str) -> Option<String> {
        parse_answer(text, AnswerFormat::MultipleChoice, 4).map(|l| l.to_string())
    }

    #[test]
    fn yes_no_answers() {
        assert_eq!(yn("…so the answer is yes.").as_deref(), Some("yes"));
        assert_eq!(yn("both could be true"), None);
        assert_eq!(yn("At first I thought yes. But on reflection, no."), Some("no".into()));
        assert_eq!(yn("Answer: **No**"), Some("no".into()));
        assert_eq!(yn("The question asks yes or no. I believe yes."), Some("yes".into()));
        assert_eq!(yn("Answer: True"), Some("yes".into()));
        assert_eq!(yn("Yes and no, it depends."), None);
    }

    #[test]
    fn letter_answers() {
        assert_eq!(mc("Answer: (B) because…"), Some("B".into()));
        assert_eq!(mc("Option (A) is tempting but (C) is right."), Some("C".into()));
        assert_eq!(mc("A careful reading shows the answer is D"), Some("D".into()));
        assert_eq!(mc("Answer: E"), None);
        assert_eq!(mc("I think so."), None);
        assert_eq!(mc("answer: c"), Some("C".into()));
        assert_eq!(mc("Between B and D, I'd go with D."), Some("D".into()));
    }

    #[test]
    fn confidence_values() {
        assert_eq!(parse_confidence("85"), Some(0.85));
        assert_eq!(parse_confidence("110"), Some(1.0));
        assert_eq!(parse_confidence("I'm fairly sure, 70 out of 100"), Some(0.70));
        assert_eq!(parse_confidence("no idea"), None);
        assert_eq!(parse_confidence("On a scale of 0-100, 85."), Some(0.85));
        assert_eq!(parse_confidence("On a scale of 1 to 100: 64"), Some(0.64));
    }

    #[test]
    fn structure_reply() {
        let reply = "Here you go: {\"evidence_overlap\": 0.7, \"minority_new_info\": 0.2, \"minority_strength\": 0.4, \"majority_conf_language\": 0.9, \"reasoning_complexity\": 0.5, \"divergence_depth\": \"late\"}";
        let s = parse_structure(reply).unwrap();
        assert_eq!(s.scores(), [0.7, 0.2, 0.4, 0.9, 0.5]);
        assert_eq!(s.divergence_depth, DivergenceDepth::Late);
        assert_eq!(s.source, StructureSource::LlmAnalysis);
    }

    #[test]
    fn structure_clamps_and_rejects() {
        let s = parse_structure("{\"evidence_overlap\": 1.4, \"minority_new_info\": \"-0.2\", \"minority_strength\": 0.4, \"majority_conf_language\": 0.9, \"reasoning_complexity\": 0.5, \"divergence_depth\": \"Early\"}").unwrap();
        assert_eq!(s.evidence_overlap, 1.0);
        assert_eq!(s.minority_new_info, 0.0);
        assert!(parse_structure("{\"evidence_overlap\": 0.5}").is_none());
        assert!(parse_structure("not json").is_none());
    }

    #[test]
    fn aggregator_reply() {
        let q = QuestionRecord {
            id: "q".into(),
            benchmark: Benchmark::ArcChallenge,
            text: "t".into(),
            answer_format: AnswerFormat::MultipleChoice,
            choices: vec!["a".into(), "b".into(), "c".into()],
            choice_count: 3,
            gold: Label::letter(0),
            provenance: None,
        };
        assert_eq!(parse_aggregator("{\"answer\":\"C\",\"confidence\":0.9}", &q), Some((Label::letter(2), 0.9)));
        assert_eq!(parse_aggregator("```json\n{\"answer\": \"(B)\", \"confidence\": 80}\n```", &q), Some((Label::letter(1), 0.8)));
        assert_eq!(parse_aggregator("{\"answer\":\"Z\",\"confidence\":0.9}", &q), None);
        assert_eq!(parse_aggregator("{\"answer\":\"A\"}", &q), None);
    }

    #[test]
    fn json_scan_skips_braces_in_strings() {
        let m = extract_json_object("noise {bad} {\"a\": \"}{\", \"b\": 2}").unwrap();
        assert_eq!(m["b"], 2);
    }
}
