//! Parsing answers typed at the console.
//!
//! Options of symbolic and multi-choice evidences are numbered from 1 in the
//! prompts; typing an option's name works too.

use std::collections::BTreeSet;

use casande_core::knowledge::{EvidenceKind, EvidenceValue};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("please answer y or n")]
    Binary,
    #[error("please enter a whole number from 0 to {0}")]
    Numeric(u32),
    #[error("{0:?} is not one of the listed options")]
    UnknownOption(String),
    #[error("please pick exactly one option")]
    NotSingle,
}

/// Prompt suffix describing the accepted input.
pub fn hint(kind: &EvidenceKind) -> String {
    let menu = |options: &[String]| {
        options
            .iter()
            .enumerate()
            .map(|(i, o)| format!("{}) {o}", i + 1))
            .collect::<Vec<_>>()
            .join("  ")
    };
    match kind {
        EvidenceKind::Binary => "[y/n]".to_string(),
        EvidenceKind::NumericCategorical { max_value } => format!("[0-{max_value}]"),
        EvidenceKind::SymbolicCategorical { options } => format!("[one of: {}]", menu(options)),
        EvidenceKind::MultiChoice { options } => {
            format!("[comma-separated numbers, or 'none': {}]", menu(options))
        }
    }
}

fn option_index(token: &str, options: &[String]) -> Result<usize, ParseError> {
    if let Ok(n) = token.parse::<usize>() {
        if (1..=options.len()).contains(&n) {
            return Ok(n - 1);
        }
    }
    options
        .iter()
        .position(|o| o.eq_ignore_ascii_case(token))
        .ok_or_else(|| ParseError::UnknownOption(token.to_string()))
}

pub fn parse_answer(kind: &EvidenceKind, input: &str) -> Result<EvidenceValue, ParseError> {
    let input = input.trim();
    match kind {
        EvidenceKind::Binary => match input.to_ascii_lowercase().as_str() {
            "y" | "yes" | "true" | "1" => Ok(EvidenceValue::Binary(true)),
            "n" | "no" | "false" | "0" => Ok(EvidenceValue::Binary(false)),
            _ => Err(ParseError::Binary),
        },
        EvidenceKind::NumericCategorical { max_value } => input
            .parse::<u32>()
            .ok()
            .filter(|v| v <= max_value)
            .map(EvidenceValue::Numeric)
            .ok_or(ParseError::Numeric(*max_value)),
        EvidenceKind::SymbolicCategorical { options } => {
            if input.contains(',') {
                return Err(ParseError::NotSingle);
            }
            option_index(input, options).map(EvidenceValue::Symbolic)
        }
        EvidenceKind::MultiChoice { options } => {
            if input.is_empty() || input.eq_ignore_ascii_case("none") {
                return Ok(EvidenceValue::Multi(BTreeSet::new()));
            }
            input
                .split(',')
                .map(|t| option_index(t.trim(), options))
                .collect::<Result<BTreeSet<_>, _>>()
                .map(EvidenceValue::Multi)
        }
    }
}
