//! Text front-end for scTLTL formulas.
//!
//! ```text
//! formula := term (('|' | '&' | 'U' | '->') term)*
//! term    := '!' term | 'F' term | '(' formula ')' | IDENT | 'true' | 'false'
//! ```
//!
//! Binary operators are left-associative with precedence `U > & > | > ->`.

use super::{normal, Bindings, Formula, LogicError};

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Not,
    Eventually,
    Always,
    Until,
    And,
    Or,
    Implies,
    LParen,
    RParen,
    True,
    False,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Token)>, LogicError> {
    let mut out = Vec::new();
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        match c {
            c if c.is_whitespace() => {
                i += 1;
            }
            '!' => {
                out.push((pos, Token::Not));
                i += 1;
            }
            '&' => {
                out.push((pos, Token::And));
                i += 1;
            }
            '|' => {
                out.push((pos, Token::Or));
                i += 1;
            }
            '(' => {
                out.push((pos, Token::LParen));
                i += 1;
            }
            ')' => {
                out.push((pos, Token::RParen));
                i += 1;
            }
            '-' => {
                if chars.get(i + 1).map(|&(_, c)| c) == Some('>') {
                    out.push((pos, Token::Implies));
                    i += 2;
                } else {
                    return Err(LogicError::Syntax {
                        position: pos,
                        message: "expected '->'".into(),
                    });
                }
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].1.is_ascii_alphanumeric() || chars[i].1 == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().map(|&(_, c)| c).collect();
                let tok = match word.as_str() {
                    "F" => Token::Eventually,
                    "G" => Token::Always,
                    "U" => Token::Until,
                    "true" => Token::True,
                    "false" => Token::False,
                    _ => Token::Ident(word),
                };
                out.push((pos, tok));
            }
            other => {
                return Err(LogicError::Syntax {
                    position: pos,
                    message: format!("unexpected character '{other}'"),
                })
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<(usize, Token)>,
    cursor: usize,
    end: usize,
    bindings: &'a Bindings,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.cursor).map(|(_, t)| t)
    }

    fn position(&self) -> usize {
        self.tokens
            .get(self.cursor)
            .map(|(p, _)| *p)
            .unwrap_or(self.end)
    }

    fn binary_precedence(tok: &Token) -> Option<u8> {
        match tok {
            Token::Implies => Some(1),
            Token::Or => Some(2),
            Token::And => Some(3),
            Token::Until => Some(4),
            _ => None,
        }
    }

    fn formula(&mut self, min_prec: u8) -> Result<Formula, LogicError> {
        let mut lhs = self.term()?;
        while let Some(prec) = self.peek().and_then(Self::binary_precedence) {
            if prec < min_prec {
                break;
            }
            let op = self.tokens[self.cursor].1.clone();
            self.cursor += 1;
            let rhs = self.formula(prec + 1)?;
            lhs = match op {
                Token::Implies => Formula::implies(lhs, rhs),
                Token::Or => Formula::or(lhs, rhs),
                Token::And => Formula::and(lhs, rhs),
                _ => Formula::until(lhs, rhs),
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Formula, LogicError> {
        let position = self.position();
        let tok = self.peek().cloned().ok_or(LogicError::Syntax {
            position,
            message: "unexpected end of formula".into(),
        })?;
        self.cursor += 1;
        match tok {
            Token::Not => Ok(Formula::not(self.term()?)),
            Token::Eventually => Ok(Formula::eventually(self.term()?)),
            Token::Always => Err(LogicError::AlwaysNotAllowed { position }),
            Token::True => Ok(Formula::True),
            Token::False => Ok(Formula::False),
            Token::LParen => {
                let inner = self.formula(1)?;
                match self.peek() {
                    Some(Token::RParen) => {
                        self.cursor += 1;
                        Ok(inner)
                    }
                    _ => Err(LogicError::Syntax {
                        position: self.position(),
                        message: "expected ')'".into(),
                    }),
                }
            }
            Token::Ident(name) => {
                let p = self
                    .bindings
                    .get(&name)
                    .ok_or(LogicError::UnboundAtom {
                        name: name.clone(),
                        position,
                    })?;
                Ok(Formula::atom(p.renamed(name)))
            }
            other => Err(LogicError::Syntax {
                position,
                message: format!("unexpected token {other:?}"),
            }),
        }
    }
}

/// Parse `text` against `bindings`, rejecting anything outside scTLTL.
pub fn parse_formula(text: &str, bindings: &Bindings) -> Result<Formula, LogicError> {
    let mut parser = Parser {
        tokens: tokenize(text)?,
        cursor: 0,
        end: text.len(),
        bindings,
    };
    let f = parser.formula(1)?;
    if parser.cursor != parser.tokens.len() {
        return Err(LogicError::Syntax {
            position: parser.position(),
            message: "trailing input".into(),
        });
    }
    // A negated F or U hides an Always.
    normal::to_nnf(&f)?;
    Ok(f)
}
