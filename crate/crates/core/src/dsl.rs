// SPDX-License-Identifier: Apache-2.0

//! Text form of pulse sequences.
//!
//! Statements are separated by `;` or newlines and `#` starts a comment:
//!
//! ```text
//! p90 0          # π/2 pulse, phase in degrees
//! d tau          # delay: tau, t_pi_half, t_pi, k*symbol, or ns
//! p180 0
//! d tau
//! p 25 90        # explicit pulse: duration in ns, phase in degrees
//! read
//! ```

use thiserror::Error;

use crate::sequences::{DurationExpr, Element, PulseSequence, Symbol};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}, column {column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("sequence has no `read`")]
    MissingReadout,
    #[error("`read` must be the last statement")]
    ReadoutNotLast,
    #[error("negative duration `{0}`")]
    NegativeDuration(String),
}

#[derive(Debug, Clone, Copy)]
struct Pos {
    line: usize,
    column: usize,
}

impl Pos {
    fn err(self, kind: ParseErrorKind) -> ParseError {
        ParseError { line: self.line, column: self.column, kind }
    }
}

#[derive(Debug)]
struct Token<'a> {
    text: &'a str,
    pos: Pos,
}

/// Split into statements, each a list of whitespace-separated tokens.
fn statements(text: &str) -> Vec<Vec<Token<'_>>> {
    let mut out = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        let mut offset = 0;
        for part in line.split(';') {
            let mut toks = Vec::new();
            for (i, ch) in part.char_indices() {
                let at_start = !ch.is_whitespace()
                    && (i == 0 || part[..i].ends_with(char::is_whitespace));
                if at_start {
                    let end = part[i..]
                        .find(char::is_whitespace)
                        .map(|e| i + e)
                        .unwrap_or(part.len());
                    toks.push(Token {
                        text: &part[i..end],
                        pos: Pos { line: ln + 1, column: offset + i + 1 },
                    });
                }
            }
            if !toks.is_empty() {
                out.push(toks);
            }
            offset += part.len() + 1;
        }
    }
    out
}

fn number(tok: &Token<'_>) -> Result<f64, ParseError> {
    let v: f64 = tok
        .text
        .parse()
        .map_err(|_| tok.pos.err(ParseErrorKind::Syntax(format!("expected a number, found `{}`", tok.text))))?;
    if !v.is_finite() {
        return Err(tok.pos.err(ParseErrorKind::Syntax(format!("non-finite number `{}`", tok.text))));
    }
    Ok(v)
}

fn symbol(name: &str) -> Option<Symbol> {
    match name {
        "tau" => Some(Symbol::Tau),
        "t_pi_half" => Some(Symbol::TPiHalf),
        "t_pi" => Some(Symbol::TPi),
        _ => None,
    }
}

fn duration(tok: &Token<'_>) -> Result<DurationExpr, ParseError> {
    let text = tok.text;
    let starts_numeric = text
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_digit() || c == '-' || c == '+' || c == '.');
    let (factor, name) = match text.split_once('*') {
        Some((k, s)) => {
            let k: f64 = k
                .parse()
                .map_err(|_| tok.pos.err(ParseErrorKind::Syntax(format!("bad multiplier in `{text}`"))))?;
            (k, Some(s))
        }
        None if starts_numeric => (number(tok)?, None),
        None => (1.0, Some(text)),
    };
    if factor < 0.0 {
        return Err(tok.pos.err(ParseErrorKind::NegativeDuration(text.to_string())));
    }
    match name {
        Some(s) => {
            let sym = symbol(s).ok_or_else(|| tok.pos.err(ParseErrorKind::UnknownSymbol(s.to_string())))?;
            Ok(DurationExpr::scaled(factor, sym))
        }
        // plain numbers are nanoseconds
        None => Ok(DurationExpr::fixed(factor * 1e-3)),
    }
}

fn arity(stmt: &[Token<'_>], n: usize) -> Result<(), ParseError> {
    if stmt.len() != n + 1 {
        let pos = stmt.get(n + 1).map(|t| t.pos).unwrap_or(stmt[0].pos);
        return Err(pos.err(ParseErrorKind::Syntax(format!(
            "`{}` takes {n} argument(s), found {}",
            stmt[0].text,
            stmt.len() - 1
        ))));
    }
    Ok(())
}

/// Parse the sequence language into a [`PulseSequence`] named `name`.
pub fn parse_sequence_named(text: &str, name: &str) -> Result<PulseSequence, ParseError> {
    let stmts = statements(text);
    let mut elements = Vec::with_capacity(stmts.len());
    let mut readout_at: Option<Pos> = None;
    for stmt in &stmts {
        let head = &stmt[0];
        if let Some(pos) = readout_at {
            return Err(pos.err(ParseErrorKind::ReadoutNotLast));
        }
        let el = match head.text {
            "p90" | "p180" => {
                arity(stmt, 1)?;
                let sym = if head.text == "p90" { Symbol::TPiHalf } else { Symbol::TPi };
                Element::Pulse {
                    duration: DurationExpr::scaled(1.0, sym),
                    phase: number(&stmt[1])?.to_radians(),
                }
            }
            "p" => {
                arity(stmt, 2)?;
                Element::Pulse {
                    duration: duration(&stmt[1])?,
                    phase: number(&stmt[2])?.to_radians(),
                }
            }
            "d" => {
                arity(stmt, 1)?;
                Element::Delay(duration(&stmt[1])?)
            }
            "read" => {
                arity(stmt, 0)?;
                readout_at = Some(head.pos);
                Element::Readout
            }
            other => return Err(head.pos.err(ParseErrorKind::UnknownSymbol(other.to_string()))),
        };
        elements.push(el);
    }
    if readout_at.is_none() {
        let pos = stmts
            .last()
            .map(|s| s[0].pos)
            .unwrap_or(Pos { line: 1, column: 1 });
        return Err(pos.err(ParseErrorKind::MissingReadout));
    }
    Ok(PulseSequence::from_parts(name.to_string(), elements))
}

pub fn parse_sequence(text: &str) -> Result<PulseSequence, ParseError> {
    parse_sequence_named(text, "dsl")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequences::hahn_echo;

    #[test]
    fn hahn_text_matches_builder() {
        let s = parse_sequence("p90 0; d tau; p180 0; d tau; p90 0; read").unwrap();
        assert_eq!(s.elements().len(), 6);
        assert_eq!(s.elements(), hahn_echo().elements());
    }

    #[test]
    fn minimal_sequence() {
        let s = parse_sequence("p90 0; read").unwrap();
        assert_eq!(s.elements().len(), 2);
    }

    #[test]
    fn missing_readout() {
        let e = parse_sequence("d tau").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::MissingReadout);
        assert_eq!(parse_sequence("").unwrap_err().kind, ParseErrorKind::MissingReadout);
    }

    #[test]
    fn readout_must_be_last() {
        let e = parse_sequence("p90 0\nread\nd tau").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::ReadoutNotLast);
        assert_eq!(e.line, 2);
    }

    #[test]
    fn errors_carry_position() {
        let e = parse_sequence("p90 0\n  d tua; read").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnknownSymbol("tua".into()));
        assert_eq!((e.line, e.column), (2, 5));

        let e = parse_sequence("p90 0; d -20; read").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::NegativeDuration(_)));
        assert_eq!((e.line, e.column), (1, 10));

        let e = parse_sequence("p90; read").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::Syntax(_)));

        let e = parse_sequence("p90 zero; read").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::Syntax(_)));

        let e = parse_sequence("x 1; read").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnknownSymbol("x".into()));
    }

    #[test]
    fn comments_numbers_and_multipliers() {
        let text = "# header\np 25 90   # explicit\nd 2*tau\nd 40\nd t_pi_half\nread";
        let s = parse_sequence(text).unwrap();
        let els = s.elements();
        assert_eq!(els.len(), 5);
        match &els[0] {
            Element::Pulse { duration, phase } => {
                assert!((duration.factor - 0.025).abs() < 1e-15 && duration.symbol.is_none());
                assert!((phase - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(els[1], Element::Delay(DurationExpr::scaled(2.0, Symbol::Tau)));
        assert_eq!(els[2], Element::Delay(DurationExpr::fixed(0.04)));
        assert_eq!(els[3], Element::Delay(DurationExpr::scaled(1.0, Symbol::TPiHalf)));
    }
}
