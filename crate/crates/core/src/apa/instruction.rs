//! Rule-based instruction parsing and the two approach templates.
//!
//! Instructions in the task corpus follow `VERB OBJECT [DESTINATION]
//! [and VERB ...]`. The parser splits on the last ` and ` followed by a
//! known verb, then takes the noun phrase after the leading verb up to the
//! first destination preposition. Object descriptions that themselves
//! contain a locative ("the black bowl next to the plate") must be supplied
//! as a hint, because the rules alone cannot tell them from a destination.

use serde::{Deserialize, Serialize};

/// Known leading verbs, multi-word entries first.
pub const VERB_LEXICON: [&str; 26] = [
    "pick up", "turn on", "turn off", "put down", "put", "place", "push", "pull", "move", "open", "close",
    "lift", "grab", "take", "stack", "slide", "pour", "press", "flip", "insert", "drop", "set", "hang",
    "wipe", "fold", "approach",
];

const DESTINATION_PREPS: [&str; 5] = ["in", "on", "to", "into", "onto"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("empty instruction")]
    Empty,
    #[error("leading verb of {0:?} is not in the lexicon; supply a manifest override")]
    UnknownVerb(String),
    #[error("no object after the verb in {0:?}")]
    NoObject(String),
    #[error("object hint {hint:?} does not follow the verb in {phrase:?}")]
    HintMismatch { hint: String, phrase: String },
}

/// Template slots of one instruction, all lower case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedInstruction {
    pub target_object: String,
    pub verb_phrase_1: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verb_phrase_2: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    /// `approach the X`
    Augmented,
    /// `approach the X then V1 and V2`
    OriginalTwoPhase,
}

pub fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn leading_verb(phrase: &str) -> Option<&'static str> {
    VERB_LEXICON
        .iter()
        .copied()
        .filter(|v| *v != "approach")
        .find(|v| phrase == *v || phrase.strip_prefix(v).is_some_and(|r| r.starts_with(' ')))
}

/// Splits off a two-phase prefix: `approach X then REST` → `(X, REST)`.
fn strip_two_phase(text: &str) -> Option<(&str, &str)> {
    let rest = text.strip_prefix("approach ")?;
    let (object, tail) = rest.split_once(" then ")?;
    Some((object, tail))
}

pub fn is_two_phase(instruction: &str) -> bool {
    strip_two_phase(&normalize(instruction)).is_some()
}

/// Parses an instruction into template slots. `object_hint`, when given,
/// is taken verbatim as the target object and must directly follow the
/// leading verb. Instructions already in two-phase form are parsed from
/// their original part, with the approached object as the hint.
pub fn parse_instruction(text: &str, object_hint: Option<&str>) -> Result<ParsedInstruction, ParseError> {
    let text = normalize(text);
    if text.is_empty() {
        return Err(ParseError::Empty);
    }
    let hint = object_hint.map(normalize);
    if let Some((object, rest)) = strip_two_phase(&text) {
        let object = object.to_string();
        let hint = hint.unwrap_or_else(|| object.clone());
        return parse_instruction(rest, Some(&hint));
    }

    let verb = leading_verb(&text).ok_or_else(|| ParseError::UnknownVerb(text.clone()))?;

    let mut split = None;
    let mut search_end = text.len();
    while let Some(pos) = text[..search_end].rfind(" and ") {
        let right = &text[pos + 5..];
        if leading_verb(right).is_some() {
            split = Some(pos);
            break;
        }
        search_end = pos;
    }
    let (v1, v2) = match split {
        Some(pos) => (text[..pos].to_string(), Some(text[pos + 5..].to_string())),
        None => (text.clone(), None),
    };

    let after_verb = v1[verb.len()..].trim_start();
    let target_object = match hint {
        Some(h) => {
            if after_verb == h || after_verb.strip_prefix(&h).is_some_and(|r| r.starts_with(' ')) {
                h
            } else {
                return Err(ParseError::HintMismatch { hint: h, phrase: v1 });
            }
        }
        None => {
            let tokens: Vec<&str> = after_verb.split(' ').filter(|t| !t.is_empty()).collect();
            let cut = (1..tokens.len())
                .find(|&k| {
                    DESTINATION_PREPS.contains(&tokens[k])
                        || (tokens[k] == "next" && tokens.get(k + 1) == Some(&"to"))
                })
                .unwrap_or(tokens.len());
            tokens[..cut].join(" ")
        }
    };
    if target_object.is_empty() {
        return Err(ParseError::NoObject(v1));
    }
    Ok(ParsedInstruction { target_object, verb_phrase_1: v1, verb_phrase_2: v2 })
}

/// `approach the X`, without doubling a leading "the".
pub fn approach_phrase(target_object: &str) -> String {
    let object = normalize(target_object);
    if object.starts_with("the ") {
        format!("approach {object}")
    } else {
        format!("approach the {object}")
    }
}

pub fn format_instruction(parsed: &ParsedInstruction, kind: TemplateKind) -> String {
    let approach = approach_phrase(&parsed.target_object);
    match kind {
        TemplateKind::Augmented => approach,
        TemplateKind::OriginalTwoPhase => {
            let mut s = format!("{approach} then {}", normalize(&parsed.verb_phrase_1));
            if let Some(v2) = &parsed.verb_phrase_2 {
                s.push_str(" and ");
                s.push_str(&normalize(v2));
            }
            s
        }
    }
}

/// Rewrites an original instruction into two-phase form. Already rewritten
/// instructions are returned unchanged.
pub fn rewrite_two_phase(
    instruction: &str,
    object_hint: Option<&str>,
    parsed_override: Option<&ParsedInstruction>,
) -> Result<String, ParseError> {
    if is_two_phase(instruction) {
        return Ok(instruction.to_string());
    }
    let parsed = match parsed_override {
        Some(p) => p.clone(),
        None => parse_instruction(instruction, object_hint)?,
    };
    Ok(format_instruction(&parsed, TemplateKind::OriginalTwoPhase))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parsed(t: &str, v1: &str, v2: Option<&str>) -> ParsedInstruction {
        ParsedInstruction { target_object: t.into(), verb_phrase_1: v1.into(), verb_phrase_2: v2.map(Into::into) }
    }

    #[test]
    fn pick_and_place() {
        assert_eq!(
            parse_instruction("Pick up the ketchup and place it in the basket", None).unwrap(),
            parsed("the ketchup", "pick up the ketchup", Some("place it in the basket"))
        );
    }

    #[test]
    fn push_has_no_second_phrase() {
        assert_eq!(
            parse_instruction("Push the plate to the front of the stove", None).unwrap(),
            parsed("the plate", "push the plate to the front of the stove", None)
        );
    }

    #[test]
    fn locative_object_needs_hint() {
        let text = "Pick up the black bowl next to the plate and place it on the plate";
        assert_eq!(parse_instruction(text, None).unwrap().target_object, "the black bowl");
        let p = parse_instruction(text, Some("the black bowl next to the plate")).unwrap();
        assert_eq!(
            p,
            parsed(
                "the black bowl next to the plate",
                "pick up the black bowl next to the plate",
                Some("place it on the plate")
            )
        );
        assert!(matches!(
            parse_instruction(text, Some("the cookie box")),
            Err(ParseError::HintMismatch { .. })
        ));
    }

    #[test]
    fn destination_prepositions() {
        assert_eq!(parse_instruction("Put the bowl on top of the cabinet", None).unwrap().target_object, "the bowl");
        assert_eq!(parse_instruction("Put the cream cheese in the bowl", None).unwrap().target_object, "the cream cheese");
        assert_eq!(parse_instruction("open the top drawer", None).unwrap().target_object, "the top drawer");
    }

    #[test]
    fn and_inside_object_is_not_a_split() {
        let p = parse_instruction("Put the salt and pepper on the plate", None).unwrap();
        assert_eq!(p.verb_phrase_2, None);
        assert_eq!(p.target_object, "the salt and pepper");
    }

    #[test]
    fn unknown_verb_and_empty() {
        assert!(matches!(parse_instruction("Juggle the ketchup", None), Err(ParseError::UnknownVerb(_))));
        assert_eq!(parse_instruction("   ", None), Err(ParseError::Empty));
        assert!(matches!(parse_instruction("push", None), Err(ParseError::NoObject(_))));
    }

    #[test]
    fn templates() {
        let p = parse_instruction("Pick up the ketchup and place it in the basket", None).unwrap();
        assert_eq!(
            format_instruction(&p, TemplateKind::OriginalTwoPhase),
            "approach the ketchup then pick up the ketchup and place it in the basket"
        );
        assert_eq!(format_instruction(&parsed("the wine bottle", "x", None), TemplateKind::Augmented), "approach the wine bottle");
        assert_eq!(format_instruction(&parsed("wine bottle", "x", None), TemplateKind::Augmented), "approach the wine bottle");
        let push = parse_instruction("Push the plate to the front of the stove", None).unwrap();
        assert_eq!(
            format_instruction(&push, TemplateKind::OriginalTwoPhase),
            "approach the plate then push the plate to the front of the stove"
        );
    }

    #[test]
    fn rewrite_is_idempotent() {
        let once = rewrite_two_phase("Pick up the ketchup and place it in the basket", None, None).unwrap();
        assert_eq!(rewrite_two_phase(&once, None, None).unwrap(), once);
        let reparsed = parse_instruction(&once, None).unwrap();
        assert_eq!(reparsed.target_object, "the ketchup");
        assert_eq!(reparsed.verb_phrase_2.as_deref(), Some("place it in the basket"));
    }

    #[test]
    fn reassembly_reproduces_instruction() {
        for text in [
            "Pick up the alphabet soup and place it in the basket",
            "Put the wine bottle on the rack",
            "Pick up the black bowl on the cookie box and place it on the plate",
        ] {
            let p = parse_instruction(text, None).unwrap();
            let joined = match &p.verb_phrase_2 {
                Some(v2) => format!("{} and {v2}", p.verb_phrase_1),
                None => p.verb_phrase_1.clone(),
            };
            assert_eq!(joined, text.to_lowercase());
            assert!(p.verb_phrase_1.contains(&p.target_object));
        }
    }
}
