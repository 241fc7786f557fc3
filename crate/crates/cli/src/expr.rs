//! Tiny arithmetic expression language for inline initial data.
//!
//! Variables `x`, `y` (space) and `xi1`, `xi2` (random parameters);
//! operators `+ - * / ^` with usual precedence; functions `exp`, `sin`,
//! `cos`, `tan`, `sqrt`, `abs`, `step` (unit step), `min`, `max`. Example:
//! `1 + 0.01*(xi1+1)*step(x-0.05)*step(0.15-x)`.

use std::fmt;

#[derive(Debug, Clone)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
    Xi1,
    Xi2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Sin,
    Cos,
    Tan,
    Sqrt,
    Abs,
    Step,
    Min,
    Max,
}

impl Func {
    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at byte {}: {}", self.position, self.message)
    }
}

impl Expr {
    pub fn parse(input: &str) -> Result<Expr, ParseError> {
        let mut parser = Parser {
            bytes: input.as_bytes(),
            pos: 0,
        };
        let expr = parser.expr()?;
        parser.skip_ws();
        if parser.pos != parser.bytes.len() {
            return Err(parser.error("unexpected trailing input"));
        }
        Ok(expr)
    }

    pub fn eval(&self, x: f64, y: f64, xi: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(Var::X) => x,
            Expr::Var(Var::Y) => y,
            Expr::Var(Var::Xi1) => xi.first().copied().unwrap_or(0.0),
            Expr::Var(Var::Xi2) => xi.get(1).copied().unwrap_or(0.0),
            Expr::Neg(e) => -e.eval(x, y, xi),
            Expr::Add(a, b) => a.eval(x, y, xi) + b.eval(x, y, xi),
            Expr::Sub(a, b) => a.eval(x, y, xi) - b.eval(x, y, xi),
            Expr::Mul(a, b) => a.eval(x, y, xi) * b.eval(x, y, xi),
            Expr::Div(a, b) => a.eval(x, y, xi) / b.eval(x, y, xi),
            Expr::Pow(a, b) => a.eval(x, y, xi).powf(b.eval(x, y, xi)),
            Expr::Call(f, args) => {
                let a = args[0].eval(x, y, xi);
                match f {
                    Func::Exp => a.exp(),
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Tan => a.tan(),
                    Func::Sqrt => a.sqrt(),
                    Func::Abs => a.abs(),
                    Func::Step => {
                        if a >= 0.0 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Func::Min => a.min(args[1].eval(x, y, xi)),
                    Func::Max => a.max(args[1].eval(x, y, xi)),
                }
            }
        }
    }
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn error(&self, message: &str) -> ParseError {
        ParseError {
            position: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            if self.eat(b'*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
            } else if self.eat(b'/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.factor()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        self.unary()
    }

    // Exponentiation binds tighter than unary minus, so `-x^2 == -(x^2)`;
    // the exponent itself may carry a sign (`2^-3`).
    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.eat(b'^') {
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected ')'"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
            _ => Err(self.error("expected a number, variable, function, or '('")),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() {
            let c = self.bytes[self.pos];
            if c.is_ascii_digit() || c == b'.' {
                self.pos += 1;
            } else if (c == b'e' || c == b'E') && self.pos > start {
                self.pos += 1;
                if matches!(self.bytes.get(self.pos), Some(b'+') | Some(b'-')) {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map(Expr::Const)
            .map_err(|_| ParseError {
                position: start,
                message: format!("invalid number literal '{text}'"),
            })
    }

    fn ident(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len()
            && (self.bytes[self.pos].is_ascii_alphanumeric() || self.bytes[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        match name {
            "x" => Ok(Expr::Var(Var::X)),
            "y" => Ok(Expr::Var(Var::Y)),
            "xi1" | "xi" => Ok(Expr::Var(Var::Xi1)),
            "xi2" => Ok(Expr::Var(Var::Xi2)),
            "pi" => Ok(Expr::Const(std::f64::consts::PI)),
            _ => {
                let func = match name {
                    "exp" => Func::Exp,
                    "sin" => Func::Sin,
                    "cos" => Func::Cos,
                    "tan" => Func::Tan,
                    "sqrt" => Func::Sqrt,
                    "abs" => Func::Abs,
                    "step" => Func::Step,
                    "min" => Func::Min,
                    "max" => Func::Max,
                    _ => {
                        return Err(ParseError {
                            position: start,
                            message: format!("unknown identifier '{name}'"),
                        })
                    }
                };
                if !self.eat(b'(') {
                    return Err(self.error("expected '(' after function name"));
                }
                let mut args = vec![self.expr()?];
                while self.eat(b',') {
                    args.push(self.expr()?);
                }
                if !self.eat(b')') {
                    return Err(self.error("expected ')'"));
                }
                if args.len() != func.arity() {
                    return Err(ParseError {
                        position: start,
                        message: format!(
                            "{name} takes {} argument(s), got {}",
                            func.arity(),
                            args.len()
                        ),
                    });
                }
                Ok(Expr::Call(func, args))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn eval(src: &str, x: f64, y: f64, xi: &[f64]) -> f64 {
        Expr::parse(src).unwrap().eval(x, y, xi)
    }

    #[test]
    fn precedence_and_functions() {
        assert_abs_diff_eq!(eval("1 + 2*3", 0.0, 0.0, &[]), 7.0);
        assert_abs_diff_eq!(eval("(1 + 2)*3", 0.0, 0.0, &[]), 9.0);
        assert_abs_diff_eq!(eval("2^3^2", 0.0, 0.0, &[]), 512.0);
        assert_abs_diff_eq!(eval("-x^2", 3.0, 0.0, &[]), -9.0);
        assert_abs_diff_eq!(
            eval("0.5*exp(-25*(x-1)^2)", 1.2, 0.0, &[]),
            0.5 * (-25.0 * 0.04f64).exp(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(eval("min(2, max(x, 1))", 1.5, 0.0, &[]), 1.5);
        assert_abs_diff_eq!(eval("cos(pi)", 0.0, 0.0, &[]), -1.0, epsilon = 1e-15);
    }

    #[test]
    fn step_builds_indicators() {
        let strip = "1 + 0.01*(xi1+1)*step(x-0.05)*step(0.15-x)";
        assert_abs_diff_eq!(eval(strip, 0.1, 0.0, &[1.0]), 1.02, epsilon = 1e-15);
        assert_abs_diff_eq!(eval(strip, 0.3, 0.0, &[1.0]), 1.0);
    }

    #[test]
    fn variables_bind() {
        assert_abs_diff_eq!(eval("x + 2*y + xi1 + 3*xi2", 1.0, 2.0, &[0.5, 0.25]), 6.25);
    }

    #[test]
    fn parse_errors_carry_position() {
        assert!(Expr::parse("1 +").is_err());
        assert!(Expr::parse("foo(1)").is_err());
        assert!(Expr::parse("min(1)").is_err());
        assert!(Expr::parse("1 2").is_err());
        let err = Expr::parse("1 + bar").unwrap_err();
        assert!(err.message.contains("bar"));
    }
}
