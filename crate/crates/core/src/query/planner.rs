use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use super::ast::{self, BinOp, BoolExpr, MaskArg, RoiArg, ScalarExpr, SelectItem};
use crate::exec::mask_agg::{MaskAggKind, MaskAggRegistry};
use crate::expr::{eval_cond, Column, Cond, EvalError, Expr, LeafId, MaskEnv, RoiId, Tri};
use crate::store::{ManifestEntry, MaskId, Roi, RoiBinding, ValueRange};

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("unknown table `{0}` (the mask view is `masks`)")]
    UnknownTable(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("unknown roi `{0}`; bind it or use `full`, `object`, or a literal")]
    UnknownRoi(String),
    #[error("`object` needs a per-mask roi table")]
    MissingRoiTable,
    #[error("invalid roi literal {0}")]
    InvalidRoi(String),
    #[error("invalid value range ({lv}, {uv}); need 0 <= lv < uv <= 1")]
    InvalidRange { lv: f64, uv: f64 },
    #[error("unknown mask aggregate `{0}`")]
    UnknownMaskAgg(String),
    #[error("mask aggregate `{name}`: {message}")]
    InvalidMaskAgg { name: String, message: String },
    #[error("duplicate alias `{0}`")]
    DuplicateAlias(String),
    #[error("column `{0}` must be the GROUP BY key or appear inside an aggregate")]
    NotGrouped(String),
    #[error("{0}")]
    Misplaced(String),
    #[error("while filtering on metadata: {0}")]
    Eval(#[from] EvalError),
}

/// How a named roi resolves.
#[derive(Clone, Debug, PartialEq)]
pub enum RoiSpec {
    /// 0-based, half-open.
    Literal(Roi),
    Full,
    /// Per-mask boxes from the roi table.
    Object,
}

/// Everything the planner needs besides the query text.
#[derive(Clone)]
pub struct PlanContext<'a> {
    pub catalog: &'a [ManifestEntry],
    pub roi_table: Option<Arc<HashMap<MaskId, Roi>>>,
    /// Caller-defined roi names such as `roi`; keys are lower case.
    pub bindings: HashMap<String, RoiSpec>,
    pub mask_aggs: MaskAggRegistry,
}

impl<'a> PlanContext<'a> {
    pub fn new(catalog: &'a [ManifestEntry]) -> Self {
        PlanContext {
            catalog,
            roi_table: None,
            bindings: HashMap::new(),
            mask_aggs: MaskAggRegistry::default(),
        }
    }

    pub fn with_roi_table(mut self, table: Arc<HashMap<MaskId, Roi>>) -> Self {
        self.roi_table = Some(table);
        self
    }

    pub fn bind(mut self, name: &str, spec: RoiSpec) -> Self {
        self.bindings.insert(name.to_ascii_lowercase(), spec);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeafSource {
    Mask,
    /// CP over the group's aggregated mask, indexed into `QueryPlan::mask_aggs`.
    Aggregated(usize),
}

/// One distinct CP term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CpLeaf {
    pub source: LeafSource,
    pub roi: RoiId,
    pub range: ValueRange,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grouping {
    pub key: Column,
    pub having: Option<Cond>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ranking {
    pub expr: Expr,
    pub descending: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputColumn {
    pub name: String,
    pub expr: Expr,
}

/// An executable query.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryPlan {
    /// Masks passing the metadata-only conjuncts, in manifest order.
    pub targets: Vec<MaskId>,
    pub rois: Vec<RoiBinding>,
    pub leaves: Vec<CpLeaf>,
    pub mask_aggs: Vec<MaskAggKind>,
    /// Mask-level predicate left after removing metadata conjuncts.
    pub filter: Option<Cond>,
    pub grouping: Option<Grouping>,
    pub ranking: Option<Ranking>,
    pub limit: Option<usize>,
    pub outputs: Vec<OutputColumn>,
    /// Bounds are not trusted for this plan; every target is loaded.
    pub verify_all: bool,
    pub warnings: Vec<String>,
}

impl QueryPlan {
    /// An empty plan over `targets`; callers add rois, leaves, and clauses.
    pub fn new(targets: Vec<MaskId>) -> Self {
        QueryPlan {
            targets,
            rois: Vec::new(),
            leaves: Vec::new(),
            mask_aggs: Vec::new(),
            filter: None,
            grouping: None,
            ranking: None,
            limit: None,
            outputs: Vec::new(),
            verify_all: false,
            warnings: Vec::new(),
        }
    }

    pub fn add_roi(&mut self, binding: RoiBinding) -> RoiId {
        self.rois.push(binding);
        self.rois.len() - 1
    }

    pub fn add_leaf(&mut self, leaf: CpLeaf) -> LeafId {
        if let Some(i) = self.leaves.iter().position(|l| *l == leaf) {
            return i;
        }
        self.leaves.push(leaf);
        self.leaves.len() - 1
    }

    /// Keeps only the targets in `ids`, preserving order.
    pub fn restrict_targets(&mut self, ids: &std::collections::HashSet<MaskId>) {
        self.targets.retain(|id| ids.contains(id));
    }

    pub fn is_grouped(&self) -> bool {
        self.grouping.is_some()
    }

    pub fn key_name(&self) -> &'static str {
        self.grouping.as_ref().map_or("mask_id", |g| g.key.name())
    }

    /// Leaves read directly from member masks.
    pub fn mask_leaves(&self) -> impl Iterator<Item = (LeafId, &CpLeaf)> {
        self.leaves
            .iter()
            .enumerate()
            .filter(|(_, l)| l.source == LeafSource::Mask)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Scope {
    /// One mask: columns and CP over `mask`.
    Mask,
    /// One group outside any aggregate.
    Group,
    /// Inside a scalar aggregate: per member mask.
    InAgg,
}

struct Planner<'p, 'a> {
    ctx: &'p PlanContext<'a>,
    plan: QueryPlan,
    roi_keys: Vec<String>,
    aliases: HashMap<String, &'p ScalarExpr>,
    key: Option<Column>,
}

/// Turns a parsed query into a plan against the catalog.
pub fn plan(q: &ast::Query, ctx: &PlanContext) -> Result<QueryPlan, PlanError> {
    let from = q.from.to_ascii_lowercase();
    if from != "masks" && from != "masksdatabaseview" {
        return Err(PlanError::UnknownTable(q.from.clone()));
    }
    let key = match &q.group_by {
        Some(g) => Some(Column::from_name(g).ok_or_else(|| PlanError::UnknownColumn(g.clone()))?),
        None => None,
    };
    if q.having.is_some() && key.is_none() {
        return Err(PlanError::Misplaced("HAVING needs GROUP BY".into()));
    }
    let mut aliases = HashMap::new();
    for item in &q.select {
        if let SelectItem::Expr { expr, alias: Some(a) } = item {
            if aliases.insert(a.to_ascii_lowercase(), expr).is_some() {
                return Err(PlanError::DuplicateAlias(a.clone()));
            }
        }
    }
    let mut p = Planner {
        ctx,
        plan: QueryPlan::new(Vec::new()),
        roi_keys: Vec::new(),
        aliases,
        key,
    };
    let top = if key.is_some() { Scope::Group } else { Scope::Mask };

    let mut meta_conds = Vec::new();
    let mut filter = Vec::new();
    if let Some(w) = &q.where_clause {
        for c in p.cond(w, Scope::Mask, false)?.conjuncts() {
            let mut touches_mask = !c.leaves().is_empty();
            c.visit_exprs(&mut |e| e.visit(&mut |x| touches_mask |= matches!(x, Expr::Area(_))));
            if touches_mask {
                filter.push(c);
            } else {
                meta_conds.push(c);
            }
        }
    }
    let meta = Cond::and_all(meta_conds);
    let mut targets = Vec::new();
    for entry in ctx.catalog {
        let keep = match &meta {
            None => true,
            Some(c) => {
                let env = MaskEnv {
                    meta: &entry.meta,
                    leaves: &[],
                    areas: &[],
                };
                eval_cond(c, &env)? == Tri::True
            }
        };
        if keep {
            targets.push(entry.meta.mask_id);
        }
    }

    let mut outputs = Vec::new();
    for item in &q.select {
        match item {
            SelectItem::Star => {
                if key.is_some() {
                    return Err(PlanError::Misplaced("SELECT * is not allowed with GROUP BY".into()));
                }
                outputs.extend(Column::ALL.map(|c| OutputColumn {
                    name: c.name().into(),
                    expr: Expr::Column(c),
                }));
            }
            SelectItem::Expr { expr, alias } => {
                let planned = p.expr(expr, top, false)?;
                let name = match (alias, expr) {
                    (Some(a), _) => a.clone(),
                    (None, ScalarExpr::Ident(n)) => n.to_ascii_lowercase(),
                    (None, e) => e.to_string(),
                };
                outputs.push(OutputColumn { name, expr: planned });
            }
        }
    }

    let having = match &q.having {
        Some(h) => Some(p.cond(h, Scope::Group, true)?),
        None => None,
    };
    let ranking = match &q.order_by {
        Some(o) => Some(Ranking {
            expr: p.expr(&o.expr, top, true)?,
            descending: o.descending,
        }),
        None => None,
    };

    let mut plan = p.plan;
    plan.targets = targets;
    plan.filter = Cond::and_all(filter);
    plan.grouping = key.map(|key| Grouping { key, having });
    plan.ranking = ranking;
    plan.limit = q.limit.map(|k| k as usize);
    plan.outputs = outputs;

    let boundable = plan.filter.as_ref().is_none_or(|c| c.is_boundable())
        && plan
            .grouping
            .as_ref()
            .and_then(|g| g.having.as_ref())
            .is_none_or(|c| c.is_boundable())
        && plan.ranking.as_ref().is_none_or(|r| r.expr.is_boundable());
    if !boundable {
        plan.verify_all = true;
        plan.warnings.push(
            "predicate divides by a CP-dependent value and is not monotone in its CP terms; \
             every targeted mask will be loaded"
                .into(),
        );
    }
    Ok(plan)
}

impl<'p, 'a> Planner<'p, 'a> {
    fn roi(&mut self, r: &RoiArg) -> Result<RoiId, PlanError> {
        let (key, binding) = match r {
            RoiArg::Literal { x1, y1, x2, y2 } => {
                let key = format!("lit:{x1},{y1},{x2},{y2}");
                (key, RoiBinding::Constant(literal_roi(r, *x1, *y1, *x2, *y2)?))
            }
            RoiArg::Named(name) => {
                let lname = name.to_ascii_lowercase();
                let spec = match self.ctx.bindings.get(&lname) {
                    Some(s) => s.clone(),
                    None => match lname.as_str() {
                        "full" => RoiSpec::Full,
                        "object" => RoiSpec::Object,
                        _ => return Err(PlanError::UnknownRoi(name.clone())),
                    },
                };
                let binding = match spec {
                    RoiSpec::Literal(roi) => RoiBinding::Constant(roi),
                    RoiSpec::Full => RoiBinding::Full,
                    RoiSpec::Object => RoiBinding::PerMask(
                        self.ctx.roi_table.clone().ok_or(PlanError::MissingRoiTable)?,
                    ),
                };
                (format!("name:{lname}"), binding)
            }
        };
        if let Some(i) = self.roi_keys.iter().position(|k| *k == key) {
            return Ok(i);
        }
        self.roi_keys.push(key);
        Ok(self.plan.add_roi(binding))
    }

    fn cond(&mut self, b: &BoolExpr, scope: Scope, aliases: bool) -> Result<Cond, PlanError> {
        Ok(match b {
            BoolExpr::Cmp(l, op, r) => Cond::Cmp(self.expr(l, scope, aliases)?, *op, self.expr(r, scope, aliases)?),
            BoolExpr::In(e, list) => Cond::In(self.expr(e, scope, aliases)?, list.clone()),
            BoolExpr::And(l, r) => Cond::And(
                Box::new(self.cond(l, scope, aliases)?),
                Box::new(self.cond(r, scope, aliases)?),
            ),
            BoolExpr::Or(l, r) => Cond::Or(
                Box::new(self.cond(l, scope, aliases)?),
                Box::new(self.cond(r, scope, aliases)?),
            ),
        })
    }

    fn expr(&mut self, e: &ScalarExpr, scope: Scope, aliases: bool) -> Result<Expr, PlanError> {
        let b = |x: Expr| Box::new(x);
        Ok(match e {
            ScalarExpr::Number(v) => Expr::Const(*v),
            ScalarExpr::Ident(name) => {
                if aliases {
                    if let Some(target) = self.aliases.get(&name.to_ascii_lowercase()).copied() {
                        return self.expr(target, scope, false);
                    }
                }
                let c = Column::from_name(name).ok_or_else(|| PlanError::UnknownColumn(name.clone()))?;
                if scope == Scope::Group && Some(c) != self.key {
                    return Err(PlanError::NotGrouped(name.clone()));
                }
                Expr::Column(c)
            }
            ScalarExpr::Cp(call) => {
                let source = match (&call.source, scope) {
                    (MaskArg::Mask, Scope::Group) => {
                        return Err(PlanError::Misplaced(
                            "CP over individual masks must sit inside SUM/AVG/MIN/MAX in a grouped query".into(),
                        ))
                    }
                    (MaskArg::Mask, _) => LeafSource::Mask,
                    (MaskArg::Agg { name, threshold }, Scope::Group) => {
                        let kind = match self.ctx.mask_aggs.resolve(name, *threshold) {
                            None => return Err(PlanError::UnknownMaskAgg(name.clone())),
                            Some(Err(message)) => {
                                return Err(PlanError::InvalidMaskAgg { name: name.clone(), message })
                            }
                            Some(Ok(k)) => k,
                        };
                        let idx = match self.plan.mask_aggs.iter().position(|k| *k == kind) {
                            Some(i) => i,
                            None => {
                                self.plan.mask_aggs.push(kind);
                                self.plan.mask_aggs.len() - 1
                            }
                        };
                        LeafSource::Aggregated(idx)
                    }
                    (MaskArg::Agg { name, .. }, _) => {
                        return Err(PlanError::Misplaced(format!(
                            "mask aggregate `{name}` needs GROUP BY and cannot sit inside a scalar aggregate"
                        )))
                    }
                };
                let roi = self.roi(&call.roi)?;
                let range = value_range(call.lv, call.uv)?;
                Expr::Cp(self.plan.add_leaf(CpLeaf { source, roi, range }))
            }
            ScalarExpr::Area(r) => Expr::Area(self.roi(r)?),
            ScalarExpr::Agg(agg, inner) => {
                if scope != Scope::Group {
                    return Err(PlanError::Misplaced(format!(
                        "{} needs GROUP BY and cannot be nested",
                        agg.name()
                    )));
                }
                Expr::Agg(*agg, b(self.expr(inner, Scope::InAgg, false)?))
            }
            ScalarExpr::Neg(x) => Expr::Neg(b(self.expr(x, scope, aliases)?)),
            ScalarExpr::Binary(op, l, r) => {
                let (l, r) = (self.expr(l, scope, aliases)?, self.expr(r, scope, aliases)?);
                match op {
                    BinOp::Add => Expr::Add(b(l), b(r)),
                    BinOp::Sub => Expr::Sub(b(l), b(r)),
                    BinOp::Mul => Expr::Mul(b(l), b(r)),
                    BinOp::Div => Expr::Div(b(l), b(r)),
                }
            }
        })
    }
}

fn literal_roi(r: &RoiArg, x1: u32, y1: u32, x2: u32, y2: u32) -> Result<Roi, PlanError> {
    if x1 == 0 || y1 == 0 || x2 < x1 || y2 < y1 {
        return Err(PlanError::InvalidRoi(format!(
            "{r}: corners are 1-based and inclusive, top-left first"
        )));
    }
    Roi::new(x1 - 1, y1 - 1, x2, y2).map_err(|_| PlanError::InvalidRoi(r.to_string()))
}

fn value_range(lv: f64, uv: f64) -> Result<ValueRange, PlanError> {
    ValueRange::new(lv as f32, uv as f32).map_err(|_| PlanError::InvalidRange { lv, uv })
}
