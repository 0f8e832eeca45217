//! Randomized query generators and target sampling for benchmarks.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::store::{MaskId, Roi};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum QueryKind {
    Filter,
    TopK,
    Aggregation,
}

impl QueryKind {
    pub const ALL: [QueryKind; 3] = [QueryKind::Filter, QueryKind::TopK, QueryKind::Aggregation];

    pub fn name(&self) -> &'static str {
        match self {
            QueryKind::Filter => "filter",
            QueryKind::TopK => "topk",
            QueryKind::Aggregation => "aggregation",
        }
    }
}

impl fmt::Display for QueryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QueryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "filter" => Ok(QueryKind::Filter),
            "topk" | "top-k" => Ok(QueryKind::TopK),
            "aggregation" | "agg" => Ok(QueryKind::Aggregation),
            _ => Err(format!("unknown query kind `{s}` (filter, topk, aggregation)")),
        }
    }
}

/// One generated query: its text and, for workloads, the masks it targets.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneratedQuery {
    pub kind: QueryKind,
    pub sql: String,
    /// `None` targets every mask.
    pub targets: Option<Vec<MaskId>>,
}

/// Prints a 0-based half-open roi as a 1-based inclusive literal.
pub fn roi_literal(r: &Roi) -> String {
    format!("(({}, {}), ({}, {}))", r.x1 + 1, r.y1 + 1, r.x2, r.y2)
}

/// Query text generators over masks of one shape.
///
/// Filter queries use the per-mask `object` roi and a count threshold in
/// `[0, width * height]`. Top-k and aggregation queries use a random
/// constant roi, `k = 25` and a random direction. Range ends are drawn from
/// `0.1, 0.2, ..., 0.9` with `lv < uv`.
pub struct QueryGenerator {
    width: u32,
    height: u32,
    rng: ChaCha8Rng,
}

impl QueryGenerator {
    pub fn new(width: u32, height: u32, seed: u64) -> Self {
        QueryGenerator {
            width,
            height,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn range(&mut self) -> (f64, f64) {
        let a = self.rng.gen_range(1..9);
        let b = self.rng.gen_range(a + 1..=9);
        (a as f64 / 10.0, b as f64 / 10.0)
    }

    fn roi(&mut self) -> Roi {
        let x1 = self.rng.gen_range(0..self.width);
        let x2 = self.rng.gen_range(x1 + 1..=self.width);
        let y1 = self.rng.gen_range(0..self.height);
        let y2 = self.rng.gen_range(y1 + 1..=self.height);
        Roi { x1, y1, x2, y2 }
    }

    fn direction(&mut self) -> &'static str {
        if self.rng.gen() {
            "DESC"
        } else {
            "ASC"
        }
    }

    pub fn filter(&mut self) -> String {
        let (lv, uv) = self.range();
        let t = self.rng.gen_range(0..=self.width as u64 * self.height as u64);
        format!("SELECT mask_id FROM masks WHERE CP(mask, object, ({lv:.1}, {uv:.1})) > {t}")
    }

    pub fn topk(&mut self) -> String {
        let (lv, uv) = self.range();
        let roi = roi_literal(&self.roi());
        let dir = self.direction();
        format!("SELECT mask_id, CP(mask, {roi}, ({lv:.1}, {uv:.1})) AS v FROM masks ORDER BY v {dir} LIMIT 25")
    }

    pub fn aggregation(&mut self) -> String {
        let (lv, uv) = self.range();
        let roi = roi_literal(&self.roi());
        let dir = self.direction();
        format!(
            "SELECT image_id, AVG(CP(mask, {roi}, ({lv:.1}, {uv:.1}))) AS v FROM masks \
             GROUP BY image_id ORDER BY v {dir} LIMIT 25"
        )
    }

    pub fn generate(&mut self, kind: QueryKind) -> String {
        match kind {
            QueryKind::Filter => self.filter(),
            QueryKind::TopK => self.topk(),
            QueryKind::Aggregation => self.aggregation(),
        }
    }
}

/// Picks target sets for a sequence of queries, mixing masks that earlier
/// queries touched with fresh ones.
pub struct TargetSampler {
    p_seen: f64,
    unseen: Vec<MaskId>,
    seen: Vec<MaskId>,
    total: usize,
}

impl TargetSampler {
    /// Panics unless `0 <= p_seen <= 1`.
    pub fn new(ids: &[MaskId], p_seen: f64, rng: &mut impl Rng) -> Self {
        assert!((0.0..=1.0).contains(&p_seen), "p_seen must lie in [0, 1]");
        let mut unseen = ids.to_vec();
        unseen.shuffle(rng);
        TargetSampler {
            p_seen,
            unseen,
            seen: Vec::new(),
            total: ids.len(),
        }
    }

    /// Target count for one query: 10%, 20% or 30% of the corpus.
    pub fn draw_size(&self, rng: &mut impl Rng) -> usize {
        let f = [0.1, 0.2, 0.3][rng.gen_range(0..3)];
        ((self.total as f64 * f).round() as usize).max(1).min(self.total)
    }

    /// `n` distinct targets, about `p_seen` of them already seen. When
    /// either pool runs short the other makes up the difference.
    pub fn sample(&mut self, n: usize, rng: &mut impl Rng) -> Vec<MaskId> {
        let n = n.min(self.total);
        let want_seen = (n as f64 * self.p_seen).round() as usize;
        let n_seen = want_seen.min(self.seen.len());
        let n_unseen = (n - n_seen).min(self.unseen.len());
        let n_seen = (n - n_unseen).min(self.seen.len());

        let mut out: Vec<MaskId> = self.seen.choose_multiple(rng, n_seen).copied().collect();
        for _ in 0..n_unseen {
            let id = self.unseen.pop().expect("counted above");
            self.seen.push(id);
            out.push(id);
        }
        out.sort_unstable();
        out
    }

    pub fn seen(&self) -> usize {
        self.seen.len()
    }

    pub fn unseen(&self) -> usize {
        self.unseen.len()
    }
}

/// Parameters of a multi-query workload.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WorkloadSpec {
    pub n_queries: usize,
    /// `None` runs every query over the whole corpus.
    pub p_seen: Option<f64>,
    /// Kinds are cycled in this order.
    pub kinds: Vec<QueryKind>,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn generate(&self, ids: &[MaskId], width: u32, height: u32) -> Vec<GeneratedQuery> {
        let mut gen = QueryGenerator::new(width, height, self.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_7a29);
        let mut sampler = self.p_seen.map(|p| TargetSampler::new(ids, p, &mut rng));
        (0..self.n_queries)
            .map(|i| {
                let kind = self.kinds[i % self.kinds.len()];
                let sql = gen.generate(kind);
                let targets = sampler.as_mut().map(|s| {
                    let n = s.draw_size(&mut rng);
                    s.sample(n, &mut rng)
                });
                GeneratedQuery { kind, sql, targets }
            })
            .collect()
    }
}
