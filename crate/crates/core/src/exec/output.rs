use std::cmp::Ordering;
use std::fmt;

use serde::Serialize;

use super::stats::ExecStats;
use crate::store::MaskId;

/// Identity of a result row: a mask, or a group key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum RowKey {
    Mask(MaskId),
    Group(i64),
}

impl fmt::Display for RowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowKey::Mask(id) => write!(f, "{id}"),
            RowKey::Group(k) => write!(f, "{k}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Float(f64),
}

impl Value {
    pub fn from_f64(v: f64) -> Self {
        if v.fract() == 0.0 && v.abs() < 9.0e15 {
            Value::Int(v as i64)
        } else {
            Value::Float(v)
        }
    }

    pub fn as_f64(&self) -> f64 {
        match *self {
            Value::Int(i) => i as f64,
            Value::Float(f) => f,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Row {
    pub key: RowKey,
    pub values: Vec<Value>,
    /// Exact ranking value, when the query has ORDER BY.
    pub rank: Option<f64>,
}

/// Rows plus the statistics of the run that produced them.
#[derive(Clone, Debug, Serialize)]
pub struct QueryOutput {
    pub key_name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
    pub stats: ExecStats,
}

impl QueryOutput {
    /// Tab-separated table with a header line.
    pub fn to_tsv(&self) -> String {
        let mut s = self.key_name.clone();
        for c in &self.columns {
            s.push('\t');
            s.push_str(c);
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.key.to_string());
            for v in &r.values {
                s.push('\t');
                s.push_str(&v.to_string());
            }
            s.push('\n');
        }
        s
    }

    pub fn keys(&self) -> Vec<RowKey> {
        self.rows.iter().map(|r| r.key).collect()
    }
}

/// Whether `(a, ka)` ranks strictly ahead of `(b, kb)`: by value in the
/// requested direction, then by ascending key.
pub fn ranks_before(a: f64, ka: RowKey, b: f64, kb: RowKey, descending: bool) -> bool {
    let by_value = if descending { a > b } else { a < b };
    by_value || (a == b && ka < kb)
}

pub fn rank_cmp(a: (f64, RowKey), b: (f64, RowKey), descending: bool) -> Ordering {
    if ranks_before(a.0, a.1, b.0, b.1, descending) {
        Ordering::Less
    } else if ranks_before(b.0, b.1, a.0, a.1, descending) {
        Ordering::Greater
    } else {
        Ordering::Equal
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tie_rule() {
        let (a, b) = (RowKey::Mask(3), RowKey::Mask(7));
        assert!(ranks_before(5.0, a, 5.0, b, true));
        assert!(ranks_before(5.0, a, 5.0, b, false));
        assert!(ranks_before(6.0, b, 5.0, a, true));
        assert!(ranks_before(4.0, b, 5.0, a, false));
    }

    #[test]
    fn values_print_integers_plainly() {
        assert_eq!(Value::from_f64(12.0).to_string(), "12");
        assert_eq!(Value::from_f64(0.25).to_string(), "0.25");
    }
}
