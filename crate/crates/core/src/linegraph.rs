//! Line sequence, per-line token streams, and the forward line graph.
//!
//! A snippet of `n` lines becomes a directed chain `0 -> 1 -> ... -> n-1`
//! whose adjacency matrix is the superdiagonal shift matrix. Blank lines are
//! kept as nodes so node indices always line up with source line numbers.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Splits source text into lines.
///
/// Splits on LF with carriage returns stripped from line ends (so CRLF
/// reads as LF). Trailing blank (whitespace-only) lines are dropped,
/// interior blank lines are kept.
pub fn split_lines(code: &str) -> Result<Vec<String>> {
    let mut lines: Vec<String> = code
        .split('\n')
        .map(|l| l.trim_end_matches('\r').to_owned())
        .collect();
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    if lines.is_empty() {
        return Err(Error::EmptyInput("source code has no non-blank lines"));
    }
    Ok(lines)
}

/// A snippet as an explicit line vector. Unlike raw text, a trailing blank
/// line survives here, which keeps node count stable under line masking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snippet {
    pub id: String,
    pub lines: Vec<String>,
}

impl Snippet {
    pub fn from_code(id: impl Into<String>, code: &str) -> Result<Self> {
        Ok(Snippet {
            id: id.into(),
            lines: split_lines(code)?,
        })
    }

    pub fn line_count(&self) -> usize {
        self.lines.len()
    }

    pub fn graph(&self) -> Result<LineGraph> {
        build_line_graph(self.lines.len())
    }

    pub fn tokenized(&self) -> Vec<TokenizedLine> {
        tokenize_lines(&self.lines)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedLine {
    pub line_index: usize,
    pub tokens: Vec<String>,
}

const C_KEYWORDS: &[&str] = &[
    "auto", "break", "case", "char", "const", "continue", "default", "do", "double", "else",
    "enum", "extern", "float", "for", "goto", "if", "inline", "int", "long", "register",
    "restrict", "return", "short", "signed", "sizeof", "static", "struct", "switch", "typedef",
    "union", "unsigned", "void", "volatile", "while", "_Alignas", "_Alignof", "_Atomic", "_Bool",
    "_Complex", "_Generic", "_Imaginary", "_Noreturn", "_Static_assert", "_Thread_local",
];

pub fn is_c_keyword(token: &str) -> bool {
    C_KEYWORDS.contains(&token)
}

/// Operators longer than one character, longest first so a linear scan
/// implements maximal munch.
const MULTI_CHAR_OPS: &[&str] = &[
    "<<=", ">>=", "...", "->", "==", "<=", ">=", "!=", "&&", "||", "<<", ">>", "++", "--", "+=",
    "-=", "*=", "/=", "%=", "&=", "|=", "^=", "##",
];

fn is_ident_start(c: char) -> bool {
    c == '_' || c.is_alphabetic()
}

fn is_ident_continue(c: char) -> bool {
    c == '_' || c.is_alphanumeric()
}

/// Lexes one line, carrying block-comment state in from the previous line
/// and out to the next.
fn lex_line(line: &str, in_block_comment: &mut bool) -> Vec<String> {
    let chars: Vec<char> = line.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;

    while i < chars.len() {
        if *in_block_comment {
            match find_comment_end(&chars, i) {
                Some(end) => {
                    *in_block_comment = false;
                    i = end;
                    continue;
                }
                None => break,
            }
        }

        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let next = chars.get(i + 1).copied();

        if c == '/' && next == Some('/') {
            break;
        }
        if c == '/' && next == Some('*') {
            *in_block_comment = true;
            i += 2;
            continue;
        }

        let start = i;
        if is_ident_start(c) {
            while i < chars.len() && is_ident_continue(chars[i]) {
                i += 1;
            }
        } else if c.is_ascii_digit() || (c == '.' && next.is_some_and(|n| n.is_ascii_digit())) {
            // pp-number: digits, letters, '.', and a sign directly after an exponent marker
            i += 1;
            while i < chars.len() {
                let ch = chars[i];
                if ch.is_ascii_alphanumeric() || ch == '_' || ch == '.' {
                    i += 1;
                } else if (ch == '+' || ch == '-')
                    && matches!(chars[i - 1], 'e' | 'E' | 'p' | 'P')
                {
                    i += 1;
                } else {
                    break;
                }
            }
        } else if c == '"' || c == '\'' {
            i += 1;
            while i < chars.len() {
                match chars[i] {
                    '\\' => i += 2,
                    ch if ch == c => {
                        i += 1;
                        break;
                    }
                    _ => i += 1,
                }
            }
            i = i.min(chars.len());
        } else if let Some(op) = MULTI_CHAR_OPS.iter().find(|op| starts_with_at(&chars, i, op)) {
            i += op.chars().count();
        } else {
            i += 1;
        }
        tokens.push(chars[start..i].iter().collect());
    }
    tokens
}

fn find_comment_end(chars: &[char], from: usize) -> Option<usize> {
    (from..chars.len().saturating_sub(1))
        .find(|&j| chars[j] == '*' && chars[j + 1] == '/')
        .map(|j| j + 2)
}

fn starts_with_at(chars: &[char], at: usize, pat: &str) -> bool {
    let mut k = at;
    for p in pat.chars() {
        if chars.get(k) != Some(&p) {
            return false;
        }
        k += 1;
    }
    true
}

/// C-style lexer for a single line. Total: malformed input is lexed
/// best-effort. An unterminated `/*` swallows the rest of the line.
pub fn tokenize_line(line: &str) -> TokenizedLine {
    let mut in_comment = false;
    TokenizedLine {
        line_index: 0,
        tokens: lex_line(line, &mut in_comment),
    }
}

/// Tokenizes consecutive lines; block comments spanning lines leave the
/// interior lines empty.
pub fn tokenize_lines<S: AsRef<str>>(lines: &[S]) -> Vec<TokenizedLine> {
    let mut in_comment = false;
    lines
        .iter()
        .enumerate()
        .map(|(line_index, line)| TokenizedLine {
            line_index,
            tokens: lex_line(line.as_ref(), &mut in_comment),
        })
        .collect()
}

/// Directed chain over `n` lines: edges `(i, i + 1)` for `i < n - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LineGraph {
    n: usize,
}

impl LineGraph {
    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> {
        (0..self.n.saturating_sub(1)).map(|i| (i, i + 1))
    }

    pub fn edge_count(&self) -> usize {
        self.n - 1
    }

    pub fn contains_edge(&self, i: usize, j: usize) -> bool {
        j < self.n && j == i + 1
    }
}

pub fn build_line_graph(n: usize) -> Result<LineGraph> {
    if n == 0 {
        return Err(Error::EmptyInput("line graph needs at least one node"));
    }
    Ok(LineGraph { n })
}

/// Dense 0/1 adjacency matrix, row = source line, column = target line.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix(Array2<f64>);

impl AdjacencyMatrix {
    pub fn size(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.0[[i, j]] as u8
    }

    /// `A + I`. Not the default: the raw chain matrix is used unless asked.
    pub fn with_self_loops(&self) -> Self {
        let mut a = self.0.clone();
        for i in 0..a.nrows() {
            a[[i, i]] = 1.0;
        }
        AdjacencyMatrix(a)
    }

    /// Builds an arbitrary matrix; entries are clamped to {0, 1}.
    pub fn from_array(a: Array2<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Shape(format!(
                "adjacency must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        Ok(AdjacencyMatrix(a.mapv(|v| if v != 0.0 { 1.0 } else { 0.0 })))
    }
}

pub fn adjacency(graph: &LineGraph) -> AdjacencyMatrix {
    let n = graph.node_count();
    let mut a = Array2::zeros((n, n));
    for (i, j) in graph.edges() {
        a[[i, j]] = 1.0;
    }
    AdjacencyMatrix(a)
}
