//! Recursive-descent parser for observable definitions.
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = unary { ("*" | "/") unary } ;
//! unary   = "-" unary | power ;
//! power   = primary [ "^" exponent ] ;
//! exponent = [ "-" ] integer | "(" [ "-" ] integer ")" ;
//! primary = number | variable | call | "(" expr ")" ;
//! call    = ("sin" | "cos" | "sqrt") "(" expr ")" | "atan2" "(" expr "," expr ")" ;
//! variable = ("q" | "p" | "x") digits ;      (* x<i> is an alias of q<i> *)
//! number  = digits [ "." digits ] [ ("e" | "E") [ "+" | "-" ] digits ] ;
//! ```

use thiserror::Error;

use super::expr::{Node, ObservableExpr, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("empty observable definition")]
    Empty,
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("unknown identifier `{name}` at line {line}, column {column}")]
    UnknownIdentifier { name: String, line: usize, column: usize },
    #[error("variable `{name}` at line {line}, column {column} is out of range for n_dof = {n_dof}")]
    VariableOutOfRange { name: String, line: usize, column: usize, n_dof: usize },
    #[error("n_dof must be positive")]
    ZeroDof,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Number { value: f64, integral: bool },
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    End,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let (mut line, mut column) = (1usize, 1usize);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, column);
        if c == '\n' {
            line += 1;
            column = 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            column += 1;
            i += 1;
            continue;
        }
        let single = match c {
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '^' => Some(Tok::Caret),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            _ => None,
        };
        if let Some(tok) = single {
            tokens.push(Token { tok, line: start_line, column: start_col });
            i += 1;
            column += 1;
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            let start = i;
            let mut integral = true;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i < chars.len() && chars[i] == '.' {
                integral = false;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    integral = false;
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let lexeme: String = chars[start..i].iter().collect();
            let value = lexeme.parse::<f64>().map_err(|_| ParseError::Syntax {
                line: start_line,
                column: start_col,
                message: format!("malformed number `{lexeme}`"),
            })?;
            column += i - start;
            tokens.push(Token { tok: Tok::Number { value, integral }, line: start_line, column: start_col });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            column += i - start;
            tokens.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                line: start_line,
                column: start_col,
            });
            continue;
        }
        return Err(ParseError::Syntax {
            line: start_line,
            column: start_col,
            message: format!("unexpected character `{c}`"),
        });
    }
    tokens.push(Token { tok: Tok::End, line, column });
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    n_dof: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error_at(tok: &Token, message: impl Into<String>) -> ParseError {
        ParseError::Syntax { line: tok.line, column: tok.column, message: message.into() }
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        let t = self.advance();
        if t.tok == want {
            Ok(())
        } else {
            Err(Self::error_at(&t, format!("expected {what}, found {}", describe(&t.tok))))
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek().tok {
                Tok::Plus => {
                    self.advance();
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.advance();
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek().tok {
                Tok::Star => {
                    self.advance();
                    lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Slash => {
                    self.advance();
                    lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.peek().tok == Tok::Minus {
            self.advance();
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.primary()?;
        if self.peek().tok != Tok::Caret {
            return Ok(base);
        }
        self.advance();
        let parenthesized = self.peek().tok == Tok::LParen;
        if parenthesized {
            self.advance();
        }
        let negative = self.peek().tok == Tok::Minus;
        if negative {
            self.advance();
        }
        let t = self.advance();
        let n = match t.tok {
            Tok::Number { value, integral: true } if value <= i32::MAX as f64 => value as i32,
            Tok::Number { .. } => {
                return Err(Self::error_at(&t, "exponent must be an integer literal"));
            }
            ref other => {
                return Err(Self::error_at(&t, format!("expected integer exponent, found {}", describe(other))));
            }
        };
        if parenthesized {
            self.expect(Tok::RParen, "`)`")?;
        }
        Ok(Node::Pow(Box::new(base), if negative { -n } else { n }))
    }

    fn primary(&mut self) -> Result<Node, ParseError> {
        let t = self.advance();
        match t.tok {
            Tok::Number { value, .. } => Ok(Node::Const(value)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::Ident(ref name) => self.identifier(name, &t),
            ref other => Err(Self::error_at(&t, format!("expected operand, found {}", describe(other)))),
        }
    }

    fn identifier(&mut self, name: &str, at: &Token) -> Result<Node, ParseError> {
        match name {
            "sin" | "cos" | "sqrt" => {
                self.expect(Tok::LParen, "`(` after function name")?;
                let arg = Box::new(self.expr()?);
                self.expect(Tok::RParen, "`)`")?;
                Ok(match name {
                    "sin" => Node::Sin(arg),
                    "cos" => Node::Cos(arg),
                    _ => Node::Sqrt(arg),
                })
            }
            "atan2" => {
                self.expect(Tok::LParen, "`(` after function name")?;
                let y = self.expr()?;
                self.expect(Tok::Comma, "`,` between atan2 arguments")?;
                let x = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(Node::Atan2(Box::new(y), Box::new(x)))
            }
            _ => {
                let var = parse_variable(name).ok_or_else(|| ParseError::UnknownIdentifier {
                    name: name.to_string(),
                    line: at.line,
                    column: at.column,
                })?;
                match var {
                    Some(v) if v.index() <= self.n_dof => Ok(Node::Var(v)),
                    _ => Err(ParseError::VariableOutOfRange {
                        name: name.to_string(),
                        line: at.line,
                        column: at.column,
                        n_dof: self.n_dof,
                    }),
                }
            }
        }
    }
}

/// `None` if `name` is not variable-shaped; `Some(None)` if it is but the
/// index is zero or does not fit.
fn parse_variable(name: &str) -> Option<Option<Var>> {
    let mut chars = name.chars();
    let head = chars.next()?;
    let digits = chars.as_str();
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let index = digits.parse::<usize>().ok().filter(|&i| i > 0);
    match head {
        'q' | 'x' => Some(index.map(Var::Q)),
        'p' => Some(index.map(Var::P)),
        _ => None,
    }
}

fn describe(tok: &Tok) -> String {
    match tok {
        Tok::Number { value, .. } => format!("number `{value}`"),
        Tok::Ident(s) => format!("identifier `{s}`"),
        Tok::Plus => "`+`".into(),
        Tok::Minus => "`-`".into(),
        Tok::Star => "`*`".into(),
        Tok::Slash => "`/`".into(),
        Tok::Caret => "`^`".into(),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::Comma => "`,`".into(),
        Tok::End => "end of input".into(),
    }
}

/// Parses a textual observable over `n_dof` degrees of freedom.
pub fn parse_observable(text: &str, n_dof: usize) -> Result<ObservableExpr, ParseError> {
    if n_dof == 0 {
        return Err(ParseError::ZeroDof);
    }
    if text.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let tokens = lex(text)?;
    let mut parser = Parser { tokens, pos: 0, n_dof };
    let root = parser.expr()?;
    let t = parser.peek().clone();
    if t.tok != Tok::End {
        return Err(Parser::error_at(&t, format!("unexpected {}", describe(&t.tok))));
    }
    Ok(ObservableExpr::new(root, n_dof).expect("variable indices checked during parsing"))
}
