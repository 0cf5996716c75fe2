//! `{placeholder}` text templates. `{{` and `}}` produce literal braces.

use std::collections::BTreeMap;

use crate::error::{HubError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Var(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    segments: Vec<Segment>,
}

impl Template {
    pub fn parse(text: &str) -> Result<Self> {
        let mut segments = Vec::new();
        let mut lit = String::new();
        let mut chars = text.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '{' if chars.peek() == Some(&'{') => {
                    chars.next();
                    lit.push('{');
                }
                '}' if chars.peek() == Some(&'}') => {
                    chars.next();
                    lit.push('}');
                }
                '{' => {
                    let mut name = String::new();
                    loop {
                        match chars.next() {
                            Some('}') => break,
                            Some(c) if c.is_ascii_alphanumeric() || c == '_' => name.push(c),
                            Some(c) => {
                                return Err(HubError::BadTemplate(format!(
                                    "unexpected `{c}` in placeholder"
                                )))
                            }
                            None => {
                                return Err(HubError::BadTemplate(
                                    "unterminated placeholder".into(),
                                ))
                            }
                        }
                    }
                    if name.is_empty() {
                        return Err(HubError::BadTemplate("empty placeholder".into()));
                    }
                    if !lit.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut lit)));
                    }
                    segments.push(Segment::Var(name));
                }
                '}' => return Err(HubError::BadTemplate("unmatched `}`".into())),
                c => lit.push(c),
            }
        }
        if !lit.is_empty() {
            segments.push(Segment::Literal(lit));
        }
        Ok(Self { segments })
    }

    pub fn placeholders(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Var(v) => Some(v.as_str()),
            Segment::Literal(_) => None,
        })
    }

    pub fn render(&self, vars: &BTreeMap<String, String>) -> Result<String> {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Literal(s) => out.push_str(s),
                Segment::Var(v) => out.push_str(
                    vars.get(v)
                        .ok_or_else(|| HubError::BadTemplate(format!("no value for `{{{v}}}`")))?,
                ),
            }
        }
        Ok(out)
    }
}
