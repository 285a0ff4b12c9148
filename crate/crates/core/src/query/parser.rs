//! Parser for the two query skeletons:
//!
//! ```text
//! SELECT COUNT(*)|SUM(col)|AVG(col) FROM table WHERE cond AND cond ...
//! DELETE FROM table WHERE L <= col <= U [AND row_index % k IN (r, ...)]
//! ```
//!
//! Conditions are `col = 'cat'`, `col = num`, `col >= num`, `col <= num`,
//! or the double-bounded `L <= col <= U`.

use super::ast::{AggKind, Filter, FilterOp, QuerySpec};
use super::QueryError;
use crate::data::{ColumnKind, ColumnSchema, DeleteMode, DeletePredicate, DeleteSpec};

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Ident(String),
    Number(f64),
    Str(String),
    Symbol(&'static str),
}

struct Lexer<'a> {
    text: &'a str,
    chars: Vec<(usize, char)>,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Lexer { text, chars: text.char_indices().collect(), pos: 0 }
    }

    fn error(&self, message: &str, at: usize) -> QueryError {
        QueryError::Syntax { position: at, message: message.to_string() }
    }

    fn tokenize(&mut self) -> Result<Vec<(usize, Token)>, QueryError> {
        let mut out = Vec::new();
        while self.pos < self.chars.len() {
            let (byte, c) = self.chars[self.pos];
            if c.is_whitespace() {
                self.pos += 1;
                continue;
            }
            if c == '\'' {
                let start = self.pos + 1;
                let mut end = start;
                while end < self.chars.len() && self.chars[end].1 != '\'' {
                    end += 1;
                }
                if end == self.chars.len() {
                    return Err(self.error("unterminated string literal", byte));
                }
                let s: String = self.chars[start..end].iter().map(|&(_, c)| c).collect();
                out.push((byte, Token::Str(s)));
                self.pos = end + 1;
                continue;
            }
            if c.is_ascii_digit() || (c == '-' && self.peek_digit()) {
                let start = self.pos;
                let mut end = self.pos + 1;
                while end < self.chars.len()
                    && (self.chars[end].1.is_ascii_digit()
                        || self.chars[end].1 == '.'
                        || self.chars[end].1 == 'e'
                        || self.chars[end].1 == 'E'
                        || (matches!(self.chars[end - 1].1, 'e' | 'E')
                            && matches!(self.chars[end].1, '+' | '-')))
                {
                    end += 1;
                }
                let s: String = self.chars[start..end].iter().map(|&(_, c)| c).collect();
                let v: f64 = s
                    .parse()
                    .map_err(|_| self.error(&format!("bad number '{s}'"), byte))?;
                out.push((byte, Token::Number(v)));
                self.pos = end;
                continue;
            }
            if c.is_alphabetic() || c == '_' {
                let start = self.pos;
                let mut end = self.pos + 1;
                while end < self.chars.len()
                    && (self.chars[end].1.is_alphanumeric()
                        || self.chars[end].1 == '_'
                        || self.chars[end].1 == '-')
                {
                    end += 1;
                }
                let s: String = self.chars[start..end].iter().map(|&(_, c)| c).collect();
                out.push((byte, Token::Ident(s)));
                self.pos = end;
                continue;
            }
            let two: Option<&'static str> = if self.pos + 1 < self.chars.len() {
                match (c, self.chars[self.pos + 1].1) {
                    ('<', '=') => Some("<="),
                    ('>', '=') => Some(">="),
                    _ => None,
                }
            } else {
                None
            };
            if let Some(sym) = two {
                out.push((byte, Token::Symbol(sym)));
                self.pos += 2;
                continue;
            }
            let sym = match c {
                '(' => "(",
                ')' => ")",
                '*' => "*",
                ',' => ",",
                '=' => "=",
                '%' => "%",
                _ => return Err(self.error(&format!("unexpected character '{c}'"), byte)),
            };
            out.push((byte, Token::Symbol(sym)));
            self.pos += 1;
        }
        let _ = self.text;
        Ok(out)
    }

    fn peek_digit(&self) -> bool {
        self.pos + 1 < self.chars.len() && self.chars[self.pos + 1].1.is_ascii_digit()
    }
}

struct Parser<'a> {
    tokens: Vec<(usize, Token)>,
    idx: usize,
    schema: &'a [ColumnSchema],
}

impl<'a> Parser<'a> {
    fn err(&self, message: impl Into<String>) -> QueryError {
        let position = self.tokens.get(self.idx).map(|&(p, _)| p).unwrap_or(0);
        QueryError::Syntax { position, message: message.into() }
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.idx).map(|(_, t)| t)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.idx).map(|(_, t)| t.clone());
        self.idx += 1;
        t
    }

    fn expect_symbol(&mut self, sym: &str) -> Result<(), QueryError> {
        match self.next() {
            Some(Token::Symbol(s)) if s == sym => Ok(()),
            other => Err(self.err(format!("expected '{sym}', got {other:?}"))),
        }
    }

    fn expect_ident(&mut self) -> Result<String, QueryError> {
        match self.next() {
            Some(Token::Ident(s)) => Ok(s),
            other => Err(self.err(format!("expected identifier, got {other:?}"))),
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), QueryError> {
        match self.next() {
            Some(Token::Ident(s)) if s.eq_ignore_ascii_case(kw) => Ok(()),
            other => Err(self.err(format!("expected {kw}, got {other:?}"))),
        }
    }

    fn expect_number(&mut self) -> Result<f64, QueryError> {
        match self.next() {
            Some(Token::Number(v)) => Ok(v),
            other => Err(self.err(format!("expected number, got {other:?}"))),
        }
    }

    fn column(&self, name: &str) -> Result<&'a ColumnSchema, QueryError> {
        self.schema
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| QueryError::UnknownColumn(name.to_string()))
    }

    fn require_numerical(&self, name: &str, context: &str) -> Result<(), QueryError> {
        if self.column(name)?.kind() != ColumnKind::Numerical {
            return Err(QueryError::TypeMismatch {
                column: name.to_string(),
                message: format!("{context} requires a numerical column"),
            });
        }
        Ok(())
    }

    fn parse_query(&mut self) -> Result<QuerySpec, QueryError> {
        match self.peek() {
            Some(Token::Ident(kw)) if kw.eq_ignore_ascii_case("select") => self.parse_select(),
            Some(Token::Ident(kw)) if kw.eq_ignore_ascii_case("delete") => self.parse_delete(),
            _ => Err(self.err("expected SELECT or DELETE")),
        }
    }

    fn parse_select(&mut self) -> Result<QuerySpec, QueryError> {
        self.expect_keyword("select")?;
        let agg_name = self.expect_ident()?;
        let agg = match agg_name.to_ascii_lowercase().as_str() {
            "count" => AggKind::Count,
            "sum" => AggKind::Sum,
            "avg" => AggKind::Avg,
            other => return Err(self.err(format!("unknown aggregate '{other}'"))),
        };
        self.expect_symbol("(")?;
        let column = if agg == AggKind::Count {
            self.expect_symbol("*")?;
            None
        } else {
            let name = self.expect_ident()?;
            self.require_numerical(&name, agg.name())?;
            Some(name)
        };
        self.expect_symbol(")")?;
        self.expect_keyword("from")?;
        let table = self.expect_ident()?;
        let mut filters = Vec::new();
        if self.peek().is_some() {
            self.expect_keyword("where")?;
            loop {
                filters.push(self.parse_condition()?);
                match self.peek() {
                    Some(Token::Ident(kw)) if kw.eq_ignore_ascii_case("and") => {
                        self.idx += 1;
                    }
                    None => break,
                    _ => return Err(self.err("expected AND or end of query")),
                }
            }
        }
        Ok(QuerySpec::Aggregate { agg, column, table, filters })
    }

    fn parse_condition(&mut self) -> Result<Filter, QueryError> {
        match self.next() {
            // L <= col <= U
            Some(Token::Number(lo)) => {
                self.expect_symbol("<=")?;
                let col = self.expect_ident()?;
                self.require_numerical(&col, "range filter")?;
                self.expect_symbol("<=")?;
                let hi = self.expect_number()?;
                if lo > hi {
                    return Err(QueryError::InvalidRange { lo, hi });
                }
                Ok(Filter { column: col, op: FilterOp::Range { lo, hi } })
            }
            Some(Token::Ident(col)) => {
                let schema_col = self.column(&col)?;
                match self.next() {
                    Some(Token::Symbol("=")) => match self.next() {
                        Some(Token::Str(v)) => {
                            if schema_col.kind() != ColumnKind::Categorical {
                                return Err(QueryError::TypeMismatch {
                                    column: col,
                                    message: "string equality on a numerical column".into(),
                                });
                            }
                            Ok(Filter { column: col, op: FilterOp::EqCat(v) })
                        }
                        Some(Token::Number(v)) => {
                            if schema_col.kind() != ColumnKind::Numerical {
                                return Err(QueryError::TypeMismatch {
                                    column: col,
                                    message: "numeric equality on a categorical column".into(),
                                });
                            }
                            Ok(Filter { column: col, op: FilterOp::EqNum(v) })
                        }
                        other => Err(self.err(format!("expected literal, got {other:?}"))),
                    },
                    Some(Token::Symbol(op @ (">=" | "<="))) => {
                        if schema_col.kind() != ColumnKind::Numerical {
                            return Err(QueryError::TypeMismatch {
                                column: col,
                                message: format!("'{op}' on a categorical column"),
                            });
                        }
                        match self.next() {
                            Some(Token::Number(v)) => Ok(Filter {
                                column: col,
                                op: if op == ">=" { FilterOp::Ge(v) } else { FilterOp::Le(v) },
                            }),
                            Some(Token::Str(_)) => Err(QueryError::TypeMismatch {
                                column: col,
                                message: format!("'{op}' compared against a string"),
                            }),
                            other => Err(self.err(format!("expected number, got {other:?}"))),
                        }
                    }
                    other => Err(self.err(format!("expected comparison, got {other:?}"))),
                }
            }
            other => Err(self.err(format!("expected condition, got {other:?}"))),
        }
    }

    fn parse_delete(&mut self) -> Result<QuerySpec, QueryError> {
        self.expect_keyword("delete")?;
        self.expect_keyword("from")?;
        let table = self.expect_ident()?;
        self.expect_keyword("where")?;

        let (column, predicate) = match self.next() {
            Some(Token::Number(lo)) => {
                self.expect_symbol("<=")?;
                let col = self.expect_ident()?;
                self.require_numerical(&col, "delete range")?;
                self.expect_symbol("<=")?;
                let hi = self.expect_number()?;
                if lo > hi {
                    return Err(QueryError::InvalidRange { lo, hi });
                }
                (col, DeletePredicate::NumericRange { lo, hi })
            }
            Some(Token::Ident(col)) => {
                if self.column(&col)?.kind() != ColumnKind::Categorical {
                    return Err(QueryError::TypeMismatch {
                        column: col,
                        message: "equality delete requires a categorical column".into(),
                    });
                }
                self.expect_symbol("=")?;
                match self.next() {
                    Some(Token::Str(v)) => {
                        (col, DeletePredicate::CategoryEquals { value: v })
                    }
                    other => Err(self.err(format!("expected string literal, got {other:?}")))?,
                }
            }
            other => return Err(self.err(format!("expected delete predicate, got {other:?}"))),
        };

        let mode = if self.peek().is_some() {
            self.expect_keyword("and")?;
            let ident = self.expect_ident()?;
            if !ident.eq_ignore_ascii_case("row_index") && !ident.eq_ignore_ascii_case("row-index") {
                return Err(self.err("expected row_index clause"));
            }
            self.expect_symbol("%")?;
            let modulus = self.expect_number()? as u64;
            let residues = match self.next() {
                Some(Token::Symbol("=")) => vec![self.expect_number()? as u64],
                Some(Token::Ident(kw)) if kw.eq_ignore_ascii_case("in") => {
                    self.expect_symbol("(")?;
                    let mut rs = vec![self.expect_number()? as u64];
                    loop {
                        match self.next() {
                            Some(Token::Symbol(",")) => rs.push(self.expect_number()? as u64),
                            Some(Token::Symbol(")")) => break,
                            other => return Err(self.err(format!("expected ',' or ')', got {other:?}"))),
                        }
                    }
                    rs
                }
                other => return Err(self.err(format!("expected '=' or IN, got {other:?}"))),
            };
            DeleteMode::Selective { modulus, residues }
        } else {
            DeleteMode::Full
        };

        if self.peek().is_some() {
            return Err(self.err("trailing tokens after delete query"));
        }
        let spec = DeleteSpec { column, predicate, mode };
        spec.validate().map_err(QueryError::Data)?;
        Ok(QuerySpec::Delete { table, spec })
    }
}

/// Parse a query against a schema. Errors carry the byte position of the
/// offending token.
pub fn parse(text: &str, schema: &[ColumnSchema]) -> Result<QuerySpec, QueryError> {
    let tokens = Lexer::new(text).tokenize()?;
    let mut parser = Parser { tokens, idx: 0, schema };
    let q = parser.parse_query()?;
    if parser.peek().is_some() {
        return Err(parser.err("trailing tokens"));
    }
    Ok(q)
}
