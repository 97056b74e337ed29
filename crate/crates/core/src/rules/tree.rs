//! Expression trees over the terminal set, with prefix S-expression I/O.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use super::terminals::{TerminalId, TerminalMask, TerminalValues};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("unexpected token `{0}`")]
    UnexpectedToken(String),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("unknown terminal `{0}`")]
    UnknownTerminal(String),
    #[error("function `{name}` takes {expected} arguments, got {got}")]
    Arity { name: String, expected: usize, got: usize },
    #[error("trailing input after expression: `{0}`")]
    Trailing(String),
    #[error("missing `{0}` rule")]
    MissingRole(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
    Abs,
    Neg,
}

impl Func {
    pub const ALL: [Func; 8] = [Func::Add, Func::Sub, Func::Mul, Func::Div, Func::Min, Func::Max, Func::Abs, Func::Neg];

    pub fn arity(self) -> usize {
        match self {
            Func::Abs | Func::Neg => 1,
            _ => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Add => "add",
            Func::Sub => "sub",
            Func::Mul => "mul",
            Func::Div => "div",
            Func::Min => "min",
            Func::Max => "max",
            Func::Abs => "abs",
            Func::Neg => "neg",
        }
    }

    fn parse(s: &str) -> Option<Func> {
        Some(match s {
            "add" | "+" => Func::Add,
            "sub" | "-" => Func::Sub,
            "mul" | "*" => Func::Mul,
            "div" | "/" | "protected_div" | "pdiv" => Func::Div,
            "min" => Func::Min,
            "max" => Func::Max,
            "abs" => Func::Abs,
            "neg" => Func::Neg,
            _ => return None,
        })
    }

    #[inline]
    fn apply(self, args: &[f64]) -> f64 {
        let r = match self {
            Func::Add => args[0] + args[1],
            Func::Sub => args[0] - args[1],
            Func::Mul => args[0] * args[1],
            Func::Div => {
                if args[1] == 0.0 {
                    1.0
                } else {
                    args[0] / args[1]
                }
            }
            Func::Min => args[0].min(args[1]),
            Func::Max => args[0].max(args[1]),
            Func::Abs => args[0].abs(),
            Func::Neg => -args[0],
        };
        guard(r)
    }
}

/// Keeps every intermediate result finite: overflow saturates at ±f64::MAX.
#[inline]
fn guard(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(-f64::MAX, f64::MAX)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ExprTree {
    Terminal(TerminalId),
    Apply(Func, Vec<ExprTree>),
}

impl ExprTree {
    pub fn leaf(t: TerminalId) -> Self {
        ExprTree::Terminal(t)
    }

    pub fn unary(f: Func, a: ExprTree) -> Self {
        debug_assert_eq!(f.arity(), 1);
        ExprTree::Apply(f, vec![a])
    }

    pub fn binary(f: Func, a: ExprTree, b: ExprTree) -> Self {
        debug_assert_eq!(f.arity(), 2);
        ExprTree::Apply(f, vec![a, b])
    }

    pub fn eval(&self, values: &TerminalValues) -> f64 {
        match self {
            ExprTree::Terminal(t) => values.get(*t),
            ExprTree::Apply(f, args) => {
                let mut buf = [0.0; 2];
                for (slot, a) in buf.iter_mut().zip(args) {
                    *slot = a.eval(values);
                }
                f.apply(&buf[..args.len()])
            }
        }
    }

    /// Number of nodes.
    pub fn size(&self) -> usize {
        match self {
            ExprTree::Terminal(_) => 1,
            ExprTree::Apply(_, args) => 1 + args.iter().map(ExprTree::size).sum::<usize>(),
        }
    }

    /// Edges on the longest root-to-leaf path; a single leaf has depth 0.
    pub fn depth(&self) -> usize {
        match self {
            ExprTree::Terminal(_) => 0,
            ExprTree::Apply(_, args) => 1 + args.iter().map(ExprTree::depth).max().unwrap_or(0),
        }
    }

    pub fn is_valid(&self, max_depth: usize) -> bool {
        self.arity_ok() && self.depth() <= max_depth
    }

    fn arity_ok(&self) -> bool {
        match self {
            ExprTree::Terminal(_) => true,
            ExprTree::Apply(f, args) => args.len() == f.arity() && args.iter().all(ExprTree::arity_ok),
        }
    }

    pub fn terminal_mask(&self) -> TerminalMask {
        let mut mask = TerminalMask::default();
        self.collect_terminals(&mut mask);
        mask
    }

    fn collect_terminals(&self, mask: &mut TerminalMask) {
        match self {
            ExprTree::Terminal(t) => mask.insert(*t),
            ExprTree::Apply(_, args) => args.iter().for_each(|a| a.collect_terminals(mask)),
        }
    }

    /// Subtree at preorder position `index`.
    pub fn subtree(&self, index: usize) -> Option<&ExprTree> {
        let mut i = index;
        self.find(&mut i)
    }

    fn find(&self, i: &mut usize) -> Option<&ExprTree> {
        if *i == 0 {
            return Some(self);
        }
        *i -= 1;
        if let ExprTree::Apply(_, args) = self {
            for a in args {
                if let Some(t) = a.find(i) {
                    return Some(t);
                }
            }
        }
        None
    }

    pub fn subtree_mut(&mut self, index: usize) -> Option<&mut ExprTree> {
        let mut i = index;
        self.find_mut(&mut i)
    }

    fn find_mut(&mut self, i: &mut usize) -> Option<&mut ExprTree> {
        if *i == 0 {
            return Some(self);
        }
        *i -= 1;
        if let ExprTree::Apply(_, args) = self {
            for a in args {
                if let Some(t) = a.find_mut(i) {
                    return Some(t);
                }
            }
        }
        None
    }

    /// Depth of the node at preorder position `index` (root is 0).
    pub fn node_depth(&self, index: usize) -> Option<usize> {
        fn walk(t: &ExprTree, i: &mut usize, d: usize) -> Option<usize> {
            if *i == 0 {
                return Some(d);
            }
            *i -= 1;
            if let ExprTree::Apply(_, args) = t {
                for a in args {
                    if let Some(r) = walk(a, i, d + 1) {
                        return Some(r);
                    }
                }
            }
            None
        }
        let mut i = index;
        walk(self, &mut i, 0)
    }

    /// Replaces the subtree at `index`, returning the old one.
    pub fn replace(&mut self, index: usize, with: ExprTree) -> Option<ExprTree> {
        self.subtree_mut(index).map(|slot| std::mem::replace(slot, with))
    }
}

impl fmt::Display for ExprTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExprTree::Terminal(t) => f.write_str(t.name()),
            ExprTree::Apply(func, args) => {
                write!(f, "({}", func.name())?;
                for a in args {
                    write!(f, " {a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

fn tokenize(s: &str) -> Vec<String> {
    s.replace('(', " ( ").replace(')', " ) ").split_whitespace().map(str::to_owned).collect()
}

fn parse_expr(tokens: &[String], pos: &mut usize) -> Result<ExprTree, ParseError> {
    let tok = tokens.get(*pos).ok_or(ParseError::UnexpectedEnd)?;
    *pos += 1;
    match tok.as_str() {
        "(" => {
            let name = tokens.get(*pos).ok_or(ParseError::UnexpectedEnd)?;
            *pos += 1;
            let func = Func::parse(name).ok_or_else(|| ParseError::UnknownFunction(name.clone()))?;
            let mut args = Vec::new();
            loop {
                match tokens.get(*pos).map(String::as_str) {
                    None => return Err(ParseError::UnexpectedEnd),
                    Some(")") => {
                        *pos += 1;
                        break;
                    }
                    Some(_) => args.push(parse_expr(tokens, pos)?),
                }
            }
            if args.len() != func.arity() {
                return Err(ParseError::Arity { name: func.name().into(), expected: func.arity(), got: args.len() });
            }
            Ok(ExprTree::Apply(func, args))
        }
        ")" => Err(ParseError::UnexpectedToken(")".into())),
        name => name.parse::<TerminalId>().map(ExprTree::Terminal).map_err(|_| ParseError::UnknownTerminal(name.into())),
    }
}

impl FromStr for ExprTree {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, ParseError> {
        let tokens = tokenize(s);
        let mut pos = 0;
        let tree = parse_expr(&tokens, &mut pos)?;
        if pos != tokens.len() {
            return Err(ParseError::Trailing(tokens[pos..].join(" ")));
        }
        Ok(tree)
    }
}
