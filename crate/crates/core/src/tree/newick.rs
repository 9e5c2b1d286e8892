//! Minimal Newick reader/writer. Branch lengths and `[...]` comments are
//! accepted and discarded.

use crate::error::{Result, TarcoError};

/// Parsed but not yet indexed node.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RawNode {
    pub label: Option<String>,
    pub children: Vec<RawNode>,
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

fn err(offset: usize, message: impl Into<String>) -> TarcoError {
    TarcoError::Parse {
        offset,
        message: message.into(),
    }
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) -> Result<()> {
        loop {
            match self.peek() {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'[') => {
                    let start = self.pos;
                    while let Some(b) = self.peek() {
                        self.pos += 1;
                        if b == b']' {
                            break;
                        }
                    }
                    if self.src[self.pos - 1] != b']' {
                        return Err(err(start, "unterminated comment"));
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn subtree(&mut self) -> Result<RawNode> {
        self.skip_ws()?;
        let mut children = Vec::new();
        if self.peek() == Some(b'(') {
            let open = self.pos;
            self.pos += 1;
            loop {
                children.push(self.subtree()?);
                self.skip_ws()?;
                match self.peek() {
                    Some(b',') => self.pos += 1,
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    Some(b';') | None => return Err(err(open, "unbalanced '('")),
                    Some(c) => {
                        return Err(err(
                            self.pos,
                            format!("expected ',' or ')', found '{}'", c as char),
                        ))
                    }
                }
            }
        }
        let label = self.label()?;
        self.branch_length()?;
        Ok(RawNode { label, children })
    }

    fn label(&mut self) -> Result<Option<String>> {
        self.skip_ws()?;
        if self.peek() == Some(b'\'') {
            let start = self.pos;
            self.pos += 1;
            let mut out = Vec::new();
            loop {
                match self.peek() {
                    None => return Err(err(start, "unterminated quoted label")),
                    Some(b'\'') => {
                        // '' is an escaped quote
                        if self.src.get(self.pos + 1) == Some(&b'\'') {
                            out.push(b'\'');
                            self.pos += 2;
                        } else {
                            self.pos += 1;
                            break;
                        }
                    }
                    Some(b) => {
                        out.push(b);
                        self.pos += 1;
                    }
                }
            }
            let s = String::from_utf8(out).map_err(|_| err(start, "label is not valid UTF-8"))?;
            return Ok(Some(s));
        }
        let start = self.pos;
        while let Some(b) = self.peek() {
            if matches!(b, b'(' | b')' | b',' | b':' | b';' | b'[' | b'\'')
                || b.is_ascii_whitespace()
            {
                break;
            }
            self.pos += 1;
        }
        if self.pos == start {
            return Ok(None);
        }
        let s = std::str::from_utf8(&self.src[start..self.pos])
            .map_err(|_| err(start, "label is not valid UTF-8"))?;
        Ok(Some(s.to_string()))
    }

    fn branch_length(&mut self) -> Result<()> {
        self.skip_ws()?;
        if self.peek() != Some(b':') {
            return Ok(());
        }
        self.pos += 1;
        self.skip_ws()?;
        let start = self.pos;
        while let Some(b) = self.peek() {
            if b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+' | b'e' | b'E') {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        text.parse::<f64>()
            .map_err(|_| err(start, "invalid branch length"))?;
        Ok(())
    }
}

pub(crate) fn parse(text: &str) -> Result<RawNode> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
    };
    p.skip_ws()?;
    if p.peek().is_none() {
        return Err(err(0, "empty input"));
    }
    let root = p.subtree()?;
    p.skip_ws()?;
    match p.peek() {
        Some(b';') => p.pos += 1,
        Some(b')') => return Err(err(p.pos, "unbalanced ')'")),
        Some(c) => return Err(err(p.pos, format!("unexpected '{}'", c as char))),
        None => return Err(err(p.pos, "missing trailing ';'")),
    }
    p.skip_ws()?;
    if p.pos != p.src.len() {
        return Err(err(p.pos, "trailing content after ';'"));
    }
    Ok(root)
}

pub(crate) fn quote_label(label: &str) -> String {
    let plain = !label.is_empty()
        && label.bytes().all(|b| {
            !(matches!(b, b'(' | b')' | b',' | b':' | b';' | b'[' | b']' | b'\'')
                || b.is_ascii_whitespace())
        });
    if plain {
        label.to_string()
    } else {
        format!("'{}'", label.replace('\'', "''"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lengths_and_comments_are_skipped() {
        let raw = parse("((a:1.5,b:2e-1)[note]x:0.3,'c d'):0;").unwrap();
        assert_eq!(raw.children.len(), 2);
        assert_eq!(raw.children[0].label.as_deref(), Some("x"));
        assert_eq!(raw.children[1].label.as_deref(), Some("c d"));
    }

    #[test]
    fn quoted_label_escape() {
        let raw = parse("('it''s',b);").unwrap();
        assert_eq!(raw.children[0].label.as_deref(), Some("it's"));
        assert_eq!(quote_label("it's"), "'it''s'");
    }

    #[test]
    fn error_offsets() {
        match parse("((a,b);") {
            Err(TarcoError::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
        match parse("(a,b))") {
            Err(TarcoError::Parse { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("(a,b)"), Err(TarcoError::Parse { .. })));
        assert!(matches!(
            parse("('a,b);"),
            Err(TarcoError::Parse { offset: 1, .. })
        ));
        assert!(matches!(
            parse("(a:x,b);"),
            Err(TarcoError::Parse { offset: 3, .. })
        ));
    }
}
