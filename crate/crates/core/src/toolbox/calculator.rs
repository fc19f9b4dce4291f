//! Recursive-descent arithmetic evaluator.
//!
//! Grammar, lowest precedence first:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := primary ('^' unary)?
//! primary := number | '(' expr ')'
//! ```
//!
//! `^` is right-associative and binds tighter than unary minus, so
//! `-2^2 = -4` and `2^3^2 = 512`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CalcError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("math error: {0}")]
    Math(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Token {
    Num(f64),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn lex(expr: &str) -> Result<Vec<Token>, CalcError> {
    let chars: Vec<char> = expr.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let tok = match c {
            c if c.is_whitespace() => {
                i += 1;
                continue;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                let value = text
                    .parse::<f64>()
                    .map_err(|_| CalcError::Syntax(format!("bad number {text:?}")))?;
                tokens.push(Token::Num(value));
                continue;
            }
            '+' => Token::Plus,
            '-' | '\u{2212}' => Token::Minus,
            '*' | '\u{00d7}' => Token::Star,
            '/' | '\u{00f7}' => Token::Slash,
            '^' => Token::Caret,
            '(' => Token::LParen,
            ')' => Token::RParen,
            other => return Err(CalcError::Syntax(format!("unexpected character {other:?}"))),
        };
        tokens.push(tok);
        i += 1;
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<Token> {
        self.tokens.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.peek();
        self.pos += 1;
        t
    }

    fn expr(&mut self) -> Result<f64, CalcError> {
        let mut value = self.term()?;
        while let Some(op @ (Token::Plus | Token::Minus)) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            value = if op == Token::Plus { value + rhs } else { value - rhs };
        }
        Ok(value)
    }

    fn term(&mut self) -> Result<f64, CalcError> {
        let mut value = self.unary()?;
        while let Some(op @ (Token::Star | Token::Slash)) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            value = if op == Token::Star {
                value * rhs
            } else {
                if rhs == 0.0 {
                    return Err(CalcError::Math("division by zero".into()));
                }
                value / rhs
            };
        }
        Ok(value)
    }

    fn unary(&mut self) -> Result<f64, CalcError> {
        match self.peek() {
            Some(Token::Minus) => {
                self.pos += 1;
                Ok(-self.unary()?)
            }
            Some(Token::Plus) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<f64, CalcError> {
        let base = self.primary()?;
        if self.peek() == Some(Token::Caret) {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(base.powf(exponent));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<f64, CalcError> {
        match self.bump() {
            Some(Token::Num(v)) => Ok(v),
            Some(Token::LParen) => {
                let v = self.expr()?;
                match self.bump() {
                    Some(Token::RParen) => Ok(v),
                    _ => Err(CalcError::Syntax("unbalanced parentheses".into())),
                }
            }
            Some(Token::RParen) => Err(CalcError::Syntax("unbalanced parentheses".into())),
            Some(t) => Err(CalcError::Syntax(format!("unexpected operator {t:?}"))),
            None => Err(CalcError::Syntax("unexpected end of expression".into())),
        }
    }
}

/// Evaluates an arithmetic expression.
pub fn evaluate(expr: &str) -> Result<f64, CalcError> {
    let tokens = lex(expr)?;
    if tokens.is_empty() {
        return Err(CalcError::Syntax("empty expression".into()));
    }
    let mut parser = Parser { tokens, pos: 0 };
    let value = parser.expr()?;
    if parser.pos != parser.tokens.len() {
        let msg = if parser.peek() == Some(Token::RParen) {
            "unbalanced parentheses".to_string()
        } else {
            format!("unexpected trailing input at token {}", parser.pos + 1)
        };
        return Err(CalcError::Syntax(msg));
    }
    if !value.is_finite() {
        return Err(CalcError::Math("result is not a finite number".into()));
    }
    Ok(value)
}

/// Renders with at most 10 significant digits and no trailing zeros.
pub fn format_number(value: f64) -> String {
    if value == 0.0 {
        return "0".to_string();
    }
    let rounded: f64 = format!("{value:.9e}").parse().unwrap_or(value);
    let text = format!("{rounded}");
    if text == "-0" {
        "0".to_string()
    } else {
        text
    }
}

/// Evaluates and renders, the calculator tool's observation text.
pub fn calculate(expr: &str) -> Result<String, CalcError> {
    evaluate(expr).map(format_number)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(calculate("(3+4)*2").unwrap(), "14");
        assert_eq!(calculate("2^10").unwrap(), "1024");
        assert_eq!(calculate("2^3^2").unwrap(), "512");
        assert!(matches!(calculate("1/0"), Err(CalcError::Math(_))));
    }

    #[test]
    fn precedence_and_unary() {
        assert_eq!(evaluate("-2^2").unwrap(), -4.0);
        assert_eq!(evaluate("2^-1").unwrap(), 0.5);
        assert_eq!(evaluate("1 - 2 - 3").unwrap(), -4.0);
        assert_eq!(evaluate("8 / 4 / 2").unwrap(), 1.0);
        assert_eq!(evaluate("--3").unwrap(), 3.0);
        assert_eq!(evaluate("2*(3+4)^2").unwrap(), 98.0);
    }

    #[test]
    fn syntax_errors() {
        for bad in ["", "(1+2", "1+2)", "1+", "1..2", "a+1", "2 3", "*3"] {
            assert!(matches!(evaluate(bad), Err(CalcError::Syntax(_))), "{bad:?}");
        }
        assert!(matches!(evaluate("(-8)^0.5"), Err(CalcError::Math(_))));
    }

    #[test]
    fn formatting() {
        assert_eq!(format_number(1.0 / 3.0), "0.3333333333");
        assert_eq!(format_number(0.1 + 0.2), "0.3");
        assert_eq!(format_number(2.5), "2.5");
        assert_eq!(format_number(-0.0), "0");
        assert_eq!(format_number(123456789012.0), "123456789000");
        assert_eq!(calculate("(98.6-32)*5/9").unwrap(), "37");
    }
}
