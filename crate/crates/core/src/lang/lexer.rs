use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Number(String, f64),
    Str(String),
    Punct(&'static str),
    Newline,
    Indent,
    Dedent,
    Eof,
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

// Longest first so that `<=` wins over `<`.
const PUNCTS: &[&str] = &[
    "<=", ">=", "==", "!=", "(", ")", ",", ":", ".", "=", "+", "-", "*", "/", "<", ">",
];

/// Splits source text into tokens, emitting `Indent`/`Dedent` around blocks.
/// Blank lines, comment-only lines and `import`/`from` lines produce nothing.
pub fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let mut indents = vec![0usize];
    let mut last_line = 1;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let mut width = 0;
        for ch in raw.chars() {
            match ch {
                ' ' => width += 1,
                '\t' => {
                    return Err(ParseError::new(line, width + 1, "tab indentation is not supported"))
                }
                _ => break,
            }
        }
        let body = &raw[width..];
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let toks = scan_line(body, line, width + 1)?;
        if let Some(Tok::Ident(first)) = toks.first().map(|t| &t.tok) {
            if first == "import" || first == "from" {
                continue;
            }
        }
        if toks.is_empty() {
            continue;
        }

        let top = *indents.last().unwrap();
        if width > top {
            indents.push(width);
            out.push(Token { tok: Tok::Indent, line, col: 1 });
        } else if width < top {
            while *indents.last().unwrap() > width {
                indents.pop();
                out.push(Token { tok: Tok::Dedent, line, col: 1 });
            }
            if *indents.last().unwrap() != width {
                return Err(ParseError::new(line, width + 1, "unindent does not match any outer level"));
            }
        }
        out.extend(toks);
        out.push(Token {
            tok: Tok::Newline,
            line,
            col: raw.len() + 1,
        });
    }

    let end = last_line + 1;
    while indents.len() > 1 {
        indents.pop();
        out.push(Token { tok: Tok::Dedent, line: end, col: 1 });
    }
    out.push(Token { tok: Tok::Eof, line: end, col: 1 });
    Ok(out)
}

fn scan_line(body: &str, line: usize, col0: usize) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = body.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = col0 + i;
        if c == ' ' || c == '\t' {
            i += 1;
            continue;
        }
        if c == '#' {
            break;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            toks.push(Token { tok: Tok::Ident(word), line, col });
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i < chars.len() && chars[i] == '.' {
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
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let value: f64 = text
                .parse()
                .map_err(|_| ParseError::new(line, col, format!("malformed number `{text}`")))?;
            toks.push(Token { tok: Tok::Number(text, value), line, col });
            continue;
        }
        if c == '\'' || c == '"' {
            let quote = c;
            i += 1;
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    None => return Err(ParseError::new(line, col, "unterminated string literal")),
                    Some(&ch) if ch == quote => {
                        i += 1;
                        break;
                    }
                    Some('\\') => {
                        let esc = chars
                            .get(i + 1)
                            .ok_or_else(|| ParseError::new(line, col, "unterminated string literal"))?;
                        s.push(match esc {
                            'n' => '\n',
                            't' => '\t',
                            other => *other,
                        });
                        i += 2;
                    }
                    Some(&ch) => {
                        s.push(ch);
                        i += 1;
                    }
                }
            }
            toks.push(Token { tok: Tok::Str(s), line, col });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        match PUNCTS.iter().find(|p| rest.starts_with(**p)) {
            Some(p) => {
                toks.push(Token { tok: Tok::Punct(p), line, col });
                i += p.len();
            }
            None => return Err(ParseError::new(line, col, format!("unknown token `{c}`"))),
        }
    }
    Ok(toks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<Tok> {
        tokenize(src).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn indentation_produces_block_tokens() {
        let toks = kinds("while x:\n    y = 1\nz = 2\n");
        assert!(toks.contains(&Tok::Indent));
        assert!(toks.contains(&Tok::Dedent));
        assert_eq!(toks.last(), Some(&Tok::Eof));
    }

    #[test]
    fn imports_and_comments_vanish() {
        let toks = kinds("import rospy\nfrom a.b import C\n# note\n\n");
        assert_eq!(toks, vec![Tok::Eof]);
    }

    #[test]
    fn numbers_keep_text() {
        let toks = kinds("x = 0.50\n");
        assert!(toks.contains(&Tok::Number("0.50".into(), 0.5)));
    }

    #[test]
    fn bad_dedent_is_reported() {
        let err = tokenize("if a:\n    b = 1\n  c = 2\n").unwrap_err();
        assert_eq!(err.line, 3);
    }

    #[test]
    fn unknown_character() {
        let err = tokenize("x = 3 $ 4\n").unwrap_err();
        assert_eq!((err.line, err.col), (1, 7));
    }
}
