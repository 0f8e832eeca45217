use super::ParseError;

#[derive(Clone, Debug, PartialEq)]
pub enum Tok {
    Ident(String),
    Number(f64),
    Comma,
    LParen,
    RParen,
    Star,
    Plus,
    Minus,
    Slash,
    Gt,
    Lt,
    Ge,
    Le,
    Eq,
    Ne,
    Semicolon,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Number(n) => format!("number {n}"),
            Tok::Comma => "`,`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Star => "`*`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Gt => "`>`".into(),
            Tok::Lt => "`<`".into(),
            Tok::Ge => "`>=`".into(),
            Tok::Le => "`<=`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Ne => "`!=`".into(),
            Tok::Semicolon => "`;`".into(),
            Tok::Eof => "end of input".into(),
        }
    }

    pub fn is_keyword(&self, kw: &str) -> bool {
        matches!(self, Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }
}

/// A token with its 1-based line and column.
#[derive(Clone, Debug, PartialEq)]
pub struct Spanned {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

pub fn tokenize(src: &str) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        // `--` comments run to end of line
        if c == '-' && chars.get(i + 1) == Some(&'-') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
                col += 1;
            }
            continue;
        }
        let mut take = |n: usize, tok: Tok| {
            out.push(Spanned { tok, line: l0, col: c0 });
            n
        };
        let consumed = match c {
            ',' => take(1, Tok::Comma),
            '(' => take(1, Tok::LParen),
            ')' => take(1, Tok::RParen),
            '*' => take(1, Tok::Star),
            '+' => take(1, Tok::Plus),
            '-' => take(1, Tok::Minus),
            '/' => take(1, Tok::Slash),
            ';' => take(1, Tok::Semicolon),
            '=' => take(1, Tok::Eq),
            '>' if chars.get(i + 1) == Some(&'=') => take(2, Tok::Ge),
            '>' => take(1, Tok::Gt),
            '<' if chars.get(i + 1) == Some(&'=') => take(2, Tok::Le),
            '<' if chars.get(i + 1) == Some(&'>') => take(2, Tok::Ne),
            '<' => take(1, Tok::Lt),
            '!' if chars.get(i + 1) == Some(&'=') => take(2, Tok::Ne),
            c if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                let start = i;
                let mut j = i;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                if j < chars.len() && chars[j] == '.' {
                    j += 1;
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                }
                if j < chars.len() && (chars[j] == 'e' || chars[j] == 'E') {
                    let mut k = j + 1;
                    if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                        k += 1;
                    }
                    if k < chars.len() && chars[k].is_ascii_digit() {
                        while k < chars.len() && chars[k].is_ascii_digit() {
                            k += 1;
                        }
                        j = k;
                    }
                }
                let text: String = chars[start..j].iter().collect();
                let v: f64 = text.parse().map_err(|_| ParseError {
                    line: l0,
                    col: c0,
                    expected: vec!["number".into()],
                    message: format!("malformed number `{text}`"),
                })?;
                take(j - start, Tok::Number(v))
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                let mut j = i;
                while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                take(j - start, Tok::Ident(chars[start..j].iter().collect()))
            }
            other => {
                return Err(ParseError {
                    line: l0,
                    col: c0,
                    expected: Vec::new(),
                    message: format!("unexpected character `{other}`"),
                })
            }
        };
        i += consumed;
        col += consumed;
    }
    out.push(Spanned { tok: Tok::Eof, line, col });
    Ok(out)
}
