//! Text form of access trees:
//!
//! ```text
//! tree  := and(tree, ...) | or(tree, ...) | th(k, tree, ...) | leaf
//! leaf  := name op value | name in [value, ...]
//! op    := = | != | < | >=
//! value := integer | bare-word | "quoted string"
//! ```
//!
//! Bare words starting with `$` are template placeholders.

use super::{AbacError, AccessTree, AttrValue, Gate, Op, Predicate};

pub fn parse_tree(text: &str) -> Result<AccessTree, AbacError> {
    let mut p = Parser { s: text.as_bytes(), pos: 0 };
    let t = p.tree()?;
    p.ws();
    if p.pos != p.s.len() {
        return Err(p.err("trailing input"));
    }
    t.validate()?;
    Ok(t)
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> AbacError {
        AbacError::Parse {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.ws();
        self.s.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), AbacError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected '{}'", c as char)))
        }
    }

    fn word(&mut self) -> Option<String> {
        self.ws();
        let start = self.pos;
        while self.pos < self.s.len() {
            let c = self.s[self.pos];
            let ok = c.is_ascii_alphanumeric() || matches!(c, b'_' | b'.' | b'$' | b'-');
            if !ok || (self.pos == start && (c.is_ascii_digit() || c == b'-')) {
                break;
            }
            self.pos += 1;
        }
        (self.pos > start).then(|| String::from_utf8_lossy(&self.s[start..self.pos]).into_owned())
    }

    fn tree(&mut self) -> Result<AccessTree, AbacError> {
        let save = self.pos;
        let name = self.word().ok_or_else(|| self.err("expected gate or attribute name"))?;
        if matches!(name.as_str(), "and" | "or" | "th") && self.peek() == Some(b'(') {
            self.pos += 1;
            let gate = match name.as_str() {
                "and" => Gate::And,
                "or" => Gate::Or,
                _ => {
                    let k = self.int()?;
                    self.expect(b',')?;
                    Gate::Threshold(usize::try_from(k).map_err(|_| self.err("negative threshold"))?)
                }
            };
            let mut children = vec![self.tree()?];
            while self.peek() == Some(b',') {
                self.pos += 1;
                children.push(self.tree()?);
            }
            self.expect(b')')?;
            return Ok(AccessTree::Node { gate, children });
        }
        if name.starts_with('$') {
            self.pos = save;
            return Err(self.err("placeholder used as attribute name"));
        }
        let op = self.op()?;
        let values = if op == Op::In {
            self.expect(b'[')?;
            let mut v = vec![self.value()?];
            while self.peek() == Some(b',') {
                self.pos += 1;
                v.push(self.value()?);
            }
            self.expect(b']')?;
            v
        } else {
            vec![self.value()?]
        };
        Ok(AccessTree::Leaf(Predicate { name, op, values }))
    }

    fn op(&mut self) -> Result<Op, AbacError> {
        self.ws();
        let rest = &self.s[self.pos..];
        let (op, n) = if rest.starts_with(b"!=") {
            (Op::Ne, 2)
        } else if rest.starts_with(b">=") {
            (Op::Ge, 2)
        } else if rest.starts_with(b"=") {
            (Op::Eq, 1)
        } else if rest.starts_with(b"<") {
            (Op::Lt, 1)
        } else if rest.starts_with(b"in") && !rest.get(2).is_some_and(|c| c.is_ascii_alphanumeric()) {
            (Op::In, 2)
        } else {
            return Err(self.err("expected operator"));
        };
        self.pos += n;
        Ok(op)
    }

    fn int(&mut self) -> Result<i64, AbacError> {
        self.ws();
        let start = self.pos;
        if self.s.get(self.pos) == Some(&b'-') {
            self.pos += 1;
        }
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.s[start..self.pos])
            .ok()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| {
                AbacError::Parse {
                    pos: start,
                    msg: "expected integer".into(),
                }
            })
    }

    fn value(&mut self) -> Result<AttrValue, AbacError> {
        match self.peek() {
            Some(c) if c.is_ascii_digit() || c == b'-' => Ok(AttrValue::Int(self.int()?)),
            Some(b'"') => {
                self.pos += 1;
                let mut out = Vec::new();
                loop {
                    match self.s.get(self.pos) {
                        None => return Err(self.err("unterminated string")),
                        Some(b'"') => {
                            self.pos += 1;
                            break;
                        }
                        Some(b'\\') => {
                            let c = *self.s.get(self.pos + 1).ok_or_else(|| self.err("bad escape"))?;
                            out.push(c);
                            self.pos += 2;
                        }
                        Some(c) => {
                            out.push(*c);
                            self.pos += 1;
                        }
                    }
                }
                String::from_utf8(out)
                    .map(AttrValue::Str)
                    .map_err(|_| self.err("invalid utf-8"))
            }
            _ => self
                .word()
                .map(AttrValue::Str)
                .ok_or_else(|| self.err("expected value")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_nested_gates() {
        let t = parse_tree(r#"or(and(role = sensor, cluster >= 2), th(1, x < -3, name in ["a b", c]))"#).unwrap();
        assert_eq!(t.depth(), 3);
        let again = parse_tree(&t.to_string()).unwrap();
        assert_eq!(again, t);
    }

    #[test]
    fn attribute_named_like_a_gate() {
        let t = parse_tree("and = 1").unwrap();
        assert_eq!(t, AccessTree::Leaf(Predicate::new("and", Op::Eq, 1)));
    }

    #[test]
    fn errors_carry_position() {
        assert!(matches!(parse_tree("and(role = )"), Err(AbacError::Parse { .. })));
        assert!(matches!(parse_tree("role ~ 3"), Err(AbacError::Parse { pos: 5, .. })));
        assert_eq!(
            parse_tree("th(3, a = 1, b = 2)"),
            Err(AbacError::BadThreshold { k: 3, m: 2 })
        );
        assert!(parse_tree("a = 1 b").is_err());
    }
}
