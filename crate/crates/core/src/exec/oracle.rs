//! Full scan: load every targeted mask and evaluate everything exactly.
//! This is the reference the indexed executor is tested against, so it
//! shares only the expression evaluator and the ordering rule with it.

use std::collections::BTreeMap;
use std::time::Instant;

use super::output::{rank_cmp, QueryOutput, Row, RowKey, Value};
use super::stats::ExecStats;
use super::{check_same_dims, ms, output_columns, output_names, ExecError};
use crate::bounds::Interval;
use crate::expr::{eval, eval_cond, Env, Expr, GroupEnv, MaskEnv, Tri};
use crate::query::{LeafSource, QueryPlan};
use crate::store::{cp_exact, Mask, MaskMeta, MaskStore};

struct Exact {
    meta: MaskMeta,
    leaves: Vec<Interval>,
    areas: Vec<f64>,
    mask: Option<Mask>,
}

impl Exact {
    fn env(&self) -> MaskEnv<'_> {
        MaskEnv {
            meta: &self.meta,
            leaves: &self.leaves,
            areas: &self.areas,
        }
    }
}

fn load(store: &MaskStore, plan: &QueryPlan, id: u64, keep: bool) -> Result<Exact, ExecError> {
    let rec = store.get_mask(id)?;
    let (w, h) = (rec.mask.width(), rec.mask.height());
    let mut rois = Vec::new();
    for b in &plan.rois {
        let r = b.resolve(id, w, h).ok_or(ExecError::MissingRoiBinding(id))?;
        r.check_fits(w, h)?;
        rois.push(r);
    }
    let mut leaves = vec![Interval::exact(0.0); plan.leaves.len()];
    for (i, leaf) in plan.leaves.iter().enumerate() {
        if leaf.source == LeafSource::Mask {
            leaves[i] = Interval::exact(cp_exact(&rec.mask, &rois[leaf.roi], &leaf.range)? as f64);
        }
    }
    Ok(Exact {
        meta: rec.meta,
        leaves,
        areas: rois.iter().map(|r| r.area() as f64).collect(),
        mask: keep.then_some(rec.mask),
    })
}

fn passes(plan: &QueryPlan, e: &Exact) -> Result<bool, ExecError> {
    Ok(match &plan.filter {
        None => true,
        Some(c) => eval_cond(c, &e.env())? == Tri::True,
    })
}

fn value(expr: &Expr, env: &dyn Env) -> Result<f64, ExecError> {
    Ok(eval(expr, env)?.lo)
}

pub fn execute_oracle(store: &MaskStore, plan: &QueryPlan) -> Result<QueryOutput, ExecError> {
    let start = Instant::now();
    let cols = output_columns(plan);
    let mut rows: Vec<Row> = Vec::new();

    match &plan.grouping {
        None => {
            for id in &plan.targets {
                let e = load(store, plan, *id, false)?;
                if !passes(plan, &e)? {
                    continue;
                }
                let env = e.env();
                let rank = match &plan.ranking {
                    Some(r) => Some(value(&r.expr, &env)?),
                    None => None,
                };
                let values = cols
                    .iter()
                    .map(|c| value(&plan.outputs[*c].expr, &env).map(Value::from_f64))
                    .collect::<Result<_, _>>()?;
                rows.push(Row {
                    key: RowKey::Mask(*id),
                    values,
                    rank,
                });
            }
        }
        Some(g) => {
            let mut by_key: BTreeMap<i64, Vec<u64>> = BTreeMap::new();
            for id in &plan.targets {
                by_key.entry(g.key.value(&store.entry(*id)?.meta)).or_default().push(*id);
            }
            let keep = !plan.mask_aggs.is_empty();
            for (key, mut ids) in by_key {
                ids.sort_unstable();
                let mut members = Vec::new();
                for id in ids {
                    let e = load(store, plan, id, keep)?;
                    if passes(plan, &e)? {
                        members.push(e);
                    }
                }
                if members.is_empty() {
                    continue;
                }
                let mut leaves = vec![Interval::exact(0.0); plan.leaves.len()];
                if keep {
                    let masks: Vec<&Mask> = members.iter().map(|m| m.mask.as_ref().unwrap()).collect();
                    check_same_dims(&masks, key)?;
                    let rep = &members[0];
                    let (w, h) = (masks[0].width(), masks[0].height());
                    for (ai, kind) in plan.mask_aggs.iter().enumerate() {
                        let agg = kind.apply(&masks)?;
                        for (li, leaf) in plan.leaves.iter().enumerate() {
                            if leaf.source == LeafSource::Aggregated(ai) {
                                let roi = plan.rois[leaf.roi]
                                    .resolve(rep.meta.mask_id, w, h)
                                    .ok_or(ExecError::MissingRoiBinding(rep.meta.mask_id))?;
                                leaves[li] = Interval::exact(cp_exact(&agg, &roi, &leaf.range)? as f64);
                            }
                        }
                    }
                }
                let member_envs: Vec<MaskEnv> = members.iter().map(|m| m.env()).collect();
                let env = GroupEnv {
                    key_column: g.key,
                    key,
                    leaves: &leaves,
                    areas: &members[0].areas,
                    members: &member_envs,
                };
                if let Some(h) = &g.having {
                    if eval_cond(h, &env)? != Tri::True {
                        continue;
                    }
                }
                let rank = match &plan.ranking {
                    Some(r) => Some(value(&r.expr, &env)?),
                    None => None,
                };
                let values = cols
                    .iter()
                    .map(|c| value(&plan.outputs[*c].expr, &env).map(Value::from_f64))
                    .collect::<Result<_, _>>()?;
                rows.push(Row {
                    key: RowKey::Group(key),
                    values,
                    rank,
                });
            }
        }
    }

    if let Some(r) = &plan.ranking {
        rows.sort_by(|a, b| rank_cmp((a.rank.unwrap(), a.key), (b.rank.unwrap(), b.key), r.descending));
    }
    if let Some(k) = plan.limit {
        rows.truncate(k);
    }
    let n = plan.targets.len() as u64;
    let mut stats = ExecStats {
        mode: "oracle".into(),
        masks_targeted: n,
        masks_loaded: n,
        verify_all: plan.verify_all,
        warnings: plan.warnings.clone(),
        total_ms: ms(start),
        ..Default::default()
    };
    stats.verify_ms = stats.total_ms;
    stats.finish_fml();
    Ok(QueryOutput {
        key_name: plan.key_name().into(),
        columns: output_names(plan),
        rows,
        stats,
    })
}
