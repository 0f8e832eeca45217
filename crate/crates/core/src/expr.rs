//! Planned scalar expressions and predicates, evaluated over intervals.
//!
//! The same evaluator serves both exact evaluation (every input a degenerate
//! interval) and bound evaluation, so an indexed run and a full scan can only
//! disagree if the bounds themselves are unsound.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{bound_scalar_agg, BoundsError, Interval, ScalarAgg};
use crate::store::MaskMeta;

pub type LeafId = usize;
pub type RoiId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("aggregate over an empty group")]
    EmptyGroup,
    #[error("{0} is not available in this context")]
    NotInScope(String),
}

impl From<BoundsError> for EvalError {
    fn from(e: BoundsError) -> Self {
        match e {
            BoundsError::EmptyGroup => EvalError::EmptyGroup,
        }
    }
}

/// Metadata columns of the mask view.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Column {
    MaskId,
    ImageId,
    ModelId,
    MaskType,
}

impl Column {
    pub const ALL: [Column; 4] = [Column::MaskId, Column::ImageId, Column::ModelId, Column::MaskType];

    pub fn name(&self) -> &'static str {
        match self {
            Column::MaskId => "mask_id",
            Column::ImageId => "image_id",
            Column::ModelId => "model_id",
            Column::MaskType => "mask_type",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Column::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(name))
    }

    pub fn value(&self, meta: &MaskMeta) -> i64 {
        match self {
            Column::MaskId => meta.mask_id as i64,
            Column::ImageId => meta.image_id,
            Column::ModelId => meta.model_id,
            Column::MaskType => meta.mask_type,
        }
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Gt,
    Lt,
    Ge,
    Le,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            CmpOp::Gt => ">",
            CmpOp::Lt => "<",
            CmpOp::Ge => ">=",
            CmpOp::Le => "<=",
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
        }
    }

    /// Three-valued comparison of two intervals.
    pub fn compare(&self, l: Interval, r: Interval) -> Tri {
        if l.is_exact() && r.is_exact() {
            return Tri::from(self.holds(l.lo, r.lo));
        }
        let (t, f) = match self {
            CmpOp::Gt => (l.lo > r.hi, l.hi <= r.lo),
            CmpOp::Ge => (l.lo >= r.hi, l.hi < r.lo),
            CmpOp::Lt => (l.hi < r.lo, l.lo >= r.hi),
            CmpOp::Le => (l.hi <= r.lo, l.lo > r.hi),
            CmpOp::Eq => (false, l.hi < r.lo || l.lo > r.hi),
            CmpOp::Ne => (l.hi < r.lo || l.lo > r.hi, false),
        };
        if t {
            Tri::True
        } else if f {
            Tri::False
        } else {
            Tri::Unknown
        }
    }

    pub fn holds(&self, l: f64, r: f64) -> bool {
        match self {
            CmpOp::Gt => l > r,
            CmpOp::Lt => l < r,
            CmpOp::Ge => l >= r,
            CmpOp::Le => l <= r,
            CmpOp::Eq => l == r,
            CmpOp::Ne => l != r,
        }
    }
}

/// Kleene three-valued truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tri {
    True,
    False,
    Unknown,
}

impl From<bool> for Tri {
    fn from(b: bool) -> Self {
        if b {
            Tri::True
        } else {
            Tri::False
        }
    }
}

impl Tri {
    pub fn and(self, o: Tri) -> Tri {
        match (self, o) {
            (Tri::False, _) | (_, Tri::False) => Tri::False,
            (Tri::True, Tri::True) => Tri::True,
            _ => Tri::Unknown,
        }
    }

    pub fn or(self, o: Tri) -> Tri {
        match (self, o) {
            (Tri::True, _) | (_, Tri::True) => Tri::True,
            (Tri::False, Tri::False) => Tri::False,
            _ => Tri::Unknown,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Column(Column),
    /// A CP term, indexed into the plan's leaf list.
    Cp(LeafId),
    Area(RoiId),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    /// Scalar aggregate over the members of a group.
    Agg(ScalarAgg, Box<Expr>),
}

impl Expr {
    pub fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Neg(a) | Expr::Agg(_, a) => a.visit(f),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.visit(f);
                b.visit(f);
            }
            _ => {}
        }
    }

    pub fn leaves(&self) -> Vec<LeafId> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let Expr::Cp(id) = e {
                out.push(*id);
            }
        });
        out
    }

    pub fn has_leaves(&self) -> bool {
        !self.leaves().is_empty()
    }

    pub fn has_agg(&self) -> bool {
        let mut found = false;
        self.visit(&mut |e| found |= matches!(e, Expr::Agg(..)));
        found
    }

    /// Whether interval evaluation of this expression is guaranteed to
    /// bracket the exact value. Division needs a divisor that does not depend
    /// on any CP term, so it is exact for every mask.
    pub fn is_boundable(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |e| {
            if let Expr::Div(_, d) = e {
                ok &= !d.has_leaves();
            }
        });
        ok
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cond {
    Cmp(Expr, CmpOp, Expr),
    In(Expr, Vec<f64>),
    And(Box<Cond>, Box<Cond>),
    Or(Box<Cond>, Box<Cond>),
}

impl Cond {
    pub fn visit_exprs(&self, f: &mut impl FnMut(&Expr)) {
        match self {
            Cond::Cmp(a, _, b) => {
                f(a);
                f(b);
            }
            Cond::In(a, _) => f(a),
            Cond::And(a, b) | Cond::Or(a, b) => {
                a.visit_exprs(f);
                b.visit_exprs(f);
            }
        }
    }

    pub fn leaves(&self) -> Vec<LeafId> {
        let mut out = Vec::new();
        self.visit_exprs(&mut |e| out.extend(e.leaves()));
        out
    }

    pub fn is_boundable(&self) -> bool {
        let mut ok = true;
        self.visit_exprs(&mut |e| ok &= e.is_boundable());
        ok
    }

    /// Splits nested ANDs into their conjuncts.
    pub fn conjuncts(self) -> Vec<Cond> {
        match self {
            Cond::And(a, b) => {
                let mut v = a.conjuncts();
                v.extend(b.conjuncts());
                v
            }
            c => vec![c],
        }
    }

    pub fn and_all(conds: Vec<Cond>) -> Option<Cond> {
        conds
            .into_iter()
            .reduce(|a, b| Cond::And(Box::new(a), Box::new(b)))
    }
}

/// Values an expression can read while being evaluated.
pub trait Env {
    fn leaf(&self, id: LeafId) -> Result<Interval, EvalError>;
    fn area(&self, roi: RoiId) -> Result<f64, EvalError>;
    fn column(&self, c: Column) -> Result<f64, EvalError>;
    /// Evaluates `inner` for each group member and aggregates.
    fn aggregate(&self, agg: ScalarAgg, inner: &Expr) -> Result<Interval, EvalError> {
        let _ = inner;
        Err(EvalError::NotInScope(agg.name().to_string()))
    }
}

pub fn eval(expr: &Expr, env: &dyn Env) -> Result<Interval, EvalError> {
    Ok(match expr {
        Expr::Const(v) => Interval::exact(*v),
        Expr::Column(c) => Interval::exact(env.column(*c)?),
        Expr::Cp(id) => env.leaf(*id)?,
        Expr::Area(r) => Interval::exact(env.area(*r)?),
        Expr::Neg(a) => -eval(a, env)?,
        Expr::Add(a, b) => eval(a, env)? + eval(b, env)?,
        Expr::Sub(a, b) => eval(a, env)? - eval(b, env)?,
        Expr::Mul(a, b) => eval(a, env)? * eval(b, env)?,
        Expr::Div(a, b) => {
            let d = eval(b, env)?;
            if d.is_exact() && d.lo == 0.0 {
                return Err(EvalError::DivisionByZero);
            }
            eval(a, env)? / d
        }
        Expr::Agg(agg, inner) => env.aggregate(*agg, inner)?,
    })
}

pub fn eval_cond(cond: &Cond, env: &dyn Env) -> Result<Tri, EvalError> {
    Ok(match cond {
        Cond::Cmp(a, op, b) => op.compare(eval(a, env)?, eval(b, env)?),
        Cond::In(a, list) => {
            let v = eval(a, env)?;
            if v.is_exact() {
                Tri::from(list.contains(&v.lo))
            } else if list.iter().any(|x| v.contains(*x)) {
                Tri::Unknown
            } else {
                Tri::False
            }
        }
        Cond::And(a, b) => {
            let l = eval_cond(a, env)?;
            if l == Tri::False {
                return Ok(Tri::False);
            }
            l.and(eval_cond(b, env)?)
        }
        Cond::Or(a, b) => {
            let l = eval_cond(a, env)?;
            if l == Tri::True {
                return Ok(Tri::True);
            }
            l.or(eval_cond(b, env)?)
        }
    })
}

/// Environment for a single mask.
pub struct MaskEnv<'a> {
    pub meta: &'a MaskMeta,
    pub leaves: &'a [Interval],
    pub areas: &'a [f64],
}

impl Env for MaskEnv<'_> {
    fn leaf(&self, id: LeafId) -> Result<Interval, EvalError> {
        self.leaves
            .get(id)
            .copied()
            .ok_or_else(|| EvalError::NotInScope(format!("CP term #{id}")))
    }

    fn area(&self, roi: RoiId) -> Result<f64, EvalError> {
        self.areas
            .get(roi)
            .copied()
            .ok_or_else(|| EvalError::NotInScope(format!("roi #{roi}")))
    }

    fn column(&self, c: Column) -> Result<f64, EvalError> {
        Ok(c.value(self.meta) as f64)
    }
}

/// Environment for a group: its own leaves are CP terms over aggregated
/// masks; aggregates fan out over the member environments.
pub struct GroupEnv<'a> {
    pub key_column: Column,
    pub key: i64,
    pub leaves: &'a [Interval],
    pub areas: &'a [f64],
    pub members: &'a [MaskEnv<'a>],
}

impl Env for GroupEnv<'_> {
    fn leaf(&self, id: LeafId) -> Result<Interval, EvalError> {
        self.leaves
            .get(id)
            .copied()
            .ok_or_else(|| EvalError::NotInScope(format!("CP term #{id}")))
    }

    fn area(&self, roi: RoiId) -> Result<f64, EvalError> {
        self.areas
            .get(roi)
            .copied()
            .ok_or_else(|| EvalError::NotInScope(format!("roi #{roi}")))
    }

    fn column(&self, c: Column) -> Result<f64, EvalError> {
        if c == self.key_column {
            Ok(self.key as f64)
        } else {
            Err(EvalError::NotInScope(c.name().to_string()))
        }
    }

    fn aggregate(&self, agg: ScalarAgg, inner: &Expr) -> Result<Interval, EvalError> {
        let vals = self
            .members
            .iter()
            .map(|m| eval(inner, m))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(bound_scalar_agg(agg, &vals)?)
    }
}
