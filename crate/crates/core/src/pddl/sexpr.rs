//! S-expression reader with line/column tracking. Symbols are lowercased,
//! `;` starts a comment that runs to end of line.

use super::PddlError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SExpr {
    Symbol(String, Pos),
    List(Vec<SExpr>, Pos),
}

impl SExpr {
    pub fn pos(&self) -> Pos {
        match self {
            SExpr::Symbol(_, p) | SExpr::List(_, p) => *p,
        }
    }

    pub fn as_symbol(&self) -> Option<&str> {
        match self {
            SExpr::Symbol(s, _) => Some(s),
            SExpr::List(..) => None,
        }
    }

    pub fn as_list(&self) -> Option<&[SExpr]> {
        match self {
            SExpr::List(items, _) => Some(items),
            SExpr::Symbol(..) => None,
        }
    }

    /// First element of a list when it is a symbol.
    pub fn head(&self) -> Option<&str> {
        self.as_list()?.first()?.as_symbol()
    }
}

pub fn parse(text: &str) -> Result<Vec<SExpr>, PddlError> {
    let mut stack: Vec<(Vec<SExpr>, Pos)> = Vec::new();
    let mut top = Vec::new();
    let mut chars = text.chars().peekable();
    let (mut line, mut col) = (1usize, 1usize);

    while let Some(&c) = chars.peek() {
        let here = Pos { line, col };
        match c {
            '\n' => {
                chars.next();
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                chars.next();
                col += 1;
            }
            ';' => {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    chars.next();
                }
            }
            '(' => {
                chars.next();
                col += 1;
                stack.push((Vec::new(), here));
            }
            ')' => {
                chars.next();
                col += 1;
                let (items, start) = stack.pop().ok_or(PddlError::Syntax {
                    line: here.line,
                    col: here.col,
                    msg: "unbalanced `)`".into(),
                })?;
                let list = SExpr::List(items, start);
                match stack.last_mut() {
                    Some((parent, _)) => parent.push(list),
                    None => top.push(list),
                }
            }
            _ => {
                let mut sym = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == ';' {
                        break;
                    }
                    sym.extend(c.to_lowercase());
                    chars.next();
                    col += 1;
                }
                let atom = SExpr::Symbol(sym, here);
                match stack.last_mut() {
                    Some((parent, _)) => parent.push(atom),
                    None => top.push(atom),
                }
            }
        }
    }
    if let Some((_, start)) = stack.last() {
        return Err(PddlError::Syntax {
            line: start.line,
            col: start.col,
            msg: "unclosed `(`".into(),
        });
    }
    Ok(top)
}
