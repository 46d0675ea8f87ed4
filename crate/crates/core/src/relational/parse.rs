use super::{Atom, Clause, Literal, ParseError, Schema, Term};

/// Character cursor over one line of clause syntax.
pub(crate) struct Cursor {
    chars: Vec<char>,
    pos: usize,
}

impl Cursor {
    pub(crate) fn new(src: &str) -> Self {
        Cursor {
            chars: src.chars().collect(),
            pos: 0,
        }
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            pos: self.pos + 1,
            msg: msg.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.chars.get(self.pos).is_some_and(|c| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(match self.peek() {
                Some(found) => self.err(format!("expected `{c}`, found `{found}`")),
                None => self.err(format!("expected `{c}`, found end of input")),
            })
        }
    }

    fn at_arrow(&mut self) -> bool {
        self.peek() == Some('=') && self.chars.get(self.pos + 1) == Some(&'>')
    }

    pub(crate) fn at_end(&mut self) -> bool {
        self.peek().is_none()
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        self.skip_ws();
        let start = self.pos;
        while self
            .chars
            .get(self.pos)
            .is_some_and(|c| c.is_alphanumeric() || *c == '_')
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(match self.chars.get(self.pos) {
                Some(c) => self.err(format!("expected identifier, found `{c}`")),
                None => self.err("expected identifier, found end of input"),
            });
        }
        Ok(self.chars[start..self.pos].iter().collect())
    }

    pub(crate) fn atom(&mut self) -> Result<Atom, ParseError> {
        let predicate = self.ident()?;
        if crate::relational::is_variable_name(&predicate) {
            self.pos -= predicate.chars().count();
            return Err(self.err(format!("predicate `{predicate}` must not be capitalised")));
        }
        let mut args = Vec::new();
        if self.eat('(') {
            loop {
                args.push(Term::from_name(&self.ident()?));
                if self.eat(')') {
                    break;
                }
                self.expect(',')?;
            }
        }
        Ok(Atom::new(&predicate, args))
    }

    fn literal(&mut self) -> Result<Literal, ParseError> {
        let negated = self.eat('!');
        Ok(Literal {
            atom: self.atom()?,
            negated,
        })
    }

    fn literals_until_arrow(&mut self) -> Result<Vec<Literal>, ParseError> {
        let mut body = Vec::new();
        if self.at_arrow() || self.at_end() {
            return Ok(body);
        }
        loop {
            body.push(self.literal()?);
            if !self.eat(',') {
                break;
            }
        }
        Ok(body)
    }

    fn arrow(&mut self) -> Result<(), ParseError> {
        if self.at_arrow() {
            self.pos += 2;
            Ok(())
        } else {
            Err(match self.peek() {
                Some(c) => self.err(format!("expected `=>`, found `{c}`")),
                None => self.err("expected `=>`, found end of input"),
            })
        }
    }

    fn finish(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            None => Ok(()),
            Some(c) => Err(self.err(format!("unexpected trailing `{c}`"))),
        }
    }
}

/// Parses `lit (, lit)* => atom`, `!` marking negation.
pub fn parse_clause(text: &str) -> Result<Clause, ParseError> {
    let mut cur = Cursor::new(text);
    let body = cur.literals_until_arrow()?;
    cur.arrow()?;
    let head = cur.atom()?;
    cur.finish()?;
    Clause::new(body, head)
}

/// Parses a bare conjunction `lit (, lit)*` (possibly empty).
pub fn parse_literals(text: &str) -> Result<Vec<Literal>, ParseError> {
    let mut cur = Cursor::new(text);
    let body = cur.literals_until_arrow()?;
    cur.finish()?;
    Ok(body)
}

pub fn parse_atom(text: &str) -> Result<Atom, ParseError> {
    let mut cur = Cursor::new(text);
    let atom = cur.atom()?;
    cur.finish()?;
    Ok(atom)
}

/// One clause per line; blank lines and `%` comments are skipped. All
/// clauses share one arity schema.
pub fn parse_clause_file(text: &str, schema: &mut Schema) -> Result<Vec<Clause>, ParseError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let clause = parse_clause(line).map_err(|e| e.at_line(i + 1))?;
        schema.register_clause(&clause).map_err(|e| e.at_line(i + 1))?;
        out.push(clause);
    }
    Ok(out)
}

pub(crate) fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(idx) => &line[..idx],
        None => line,
    }
}
