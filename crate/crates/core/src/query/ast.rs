//! Syntax tree of the query dialect. `Display` prints text that parses back
//! to the same tree.

use std::fmt;

use crate::bounds::ScalarAgg;
use crate::expr::CmpOp;

#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub select: Vec<SelectItem>,
    pub from: String,
    pub where_clause: Option<BoolExpr>,
    pub group_by: Option<String>,
    pub having: Option<BoolExpr>,
    pub order_by: Option<OrderBy>,
    pub limit: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SelectItem {
    Star,
    Expr { expr: ScalarExpr, alias: Option<String> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrderBy {
    pub expr: ScalarExpr,
    pub descending: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ScalarExpr {
    Number(f64),
    /// A column or a select-list alias.
    Ident(String),
    Cp(CpCall),
    Area(RoiArg),
    Agg(ScalarAgg, Box<ScalarExpr>),
    Neg(Box<ScalarExpr>),
    Binary(BinOp, Box<ScalarExpr>, Box<ScalarExpr>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CpCall {
    pub source: MaskArg,
    pub roi: RoiArg,
    pub lv: f64,
    pub uv: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum MaskArg {
    Mask,
    /// `NAME(mask)` or `NAME(mask > t)`; `name` is upper-cased.
    Agg { name: String, threshold: Option<f64> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RoiArg {
    Named(String),
    /// Corners as written: 1-based, inclusive.
    Literal { x1: u32, y1: u32, x2: u32, y2: u32 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum BoolExpr {
    Cmp(ScalarExpr, CmpOp, ScalarExpr),
    In(ScalarExpr, Vec<f64>),
    And(Box<BoolExpr>, Box<BoolExpr>),
    Or(Box<BoolExpr>, Box<BoolExpr>),
}

fn num(f: &mut fmt::Formatter<'_>, v: f64) -> fmt::Result {
    if v < 0.0 {
        write!(f, "-{}", -v)
    } else {
        write!(f, "{v}")
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SELECT ")?;
        for (i, item) in self.select.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{item}")?;
        }
        write!(f, " FROM {}", self.from)?;
        if let Some(w) = &self.where_clause {
            write!(f, " WHERE {w}")?;
        }
        if let Some(g) = &self.group_by {
            write!(f, " GROUP BY {g}")?;
        }
        if let Some(h) = &self.having {
            write!(f, " HAVING {h}")?;
        }
        if let Some(o) = &self.order_by {
            write!(f, " ORDER BY {} {}", o.expr, if o.descending { "DESC" } else { "ASC" })?;
        }
        if let Some(k) = self.limit {
            write!(f, " LIMIT {k}")?;
        }
        Ok(())
    }
}

impl fmt::Display for SelectItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectItem::Star => f.write_str("*"),
            SelectItem::Expr { expr, alias: None } => write!(f, "{expr}"),
            SelectItem::Expr { expr, alias: Some(a) } => write!(f, "{expr} AS {a}"),
        }
    }
}

impl fmt::Display for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarExpr::Number(v) => num(f, *v),
            ScalarExpr::Ident(s) => f.write_str(s),
            ScalarExpr::Cp(c) => write!(f, "{c}"),
            ScalarExpr::Area(r) => write!(f, "area({r})"),
            ScalarExpr::Agg(a, e) => write!(f, "{}({e})", a.name()),
            ScalarExpr::Neg(e) => write!(f, "(- {e})"),
            ScalarExpr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
        }
    }
}

impl fmt::Display for CpCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CP({}, {}, (", self.source, self.roi)?;
        num(f, self.lv)?;
        f.write_str(", ")?;
        num(f, self.uv)?;
        f.write_str("))")
    }
}

impl fmt::Display for MaskArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskArg::Mask => f.write_str("mask"),
            MaskArg::Agg { name, threshold: None } => write!(f, "{name}(mask)"),
            MaskArg::Agg { name, threshold: Some(t) } => {
                write!(f, "{name}(mask > ")?;
                num(f, *t)?;
                f.write_str(")")
            }
        }
    }
}

impl fmt::Display for RoiArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RoiArg::Named(n) => f.write_str(n),
            RoiArg::Literal { x1, y1, x2, y2 } => write!(f, "(({x1}, {y1}), ({x2}, {y2}))"),
        }
    }
}

impl fmt::Display for BoolExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoolExpr::Cmp(a, op, b) => write!(f, "{a} {} {b}", op.symbol()),
            BoolExpr::In(e, list) => {
                write!(f, "{e} IN (")?;
                for (i, v) in list.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    num(f, *v)?;
                }
                f.write_str(")")
            }
            BoolExpr::And(a, b) => write!(f, "({a} AND {b})"),
            BoolExpr::Or(a, b) => write!(f, "({a} OR {b})"),
        }
    }
}
