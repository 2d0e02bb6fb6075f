use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::StateTrace;

/// One radius-count request against a [`SupportIndex`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborQuery {
    pub t: usize,
    pub radius: f64,
    pub time_window: usize,
}

impl NeighborQuery {
    pub fn new(t: usize, radius: f64, time_window: usize) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::usage(format!("radius must be positive, got {radius}")));
        }
        Ok(Self {
            t,
            radius,
            time_window,
        })
    }
}

/// Squared Euclidean distance, f32 inputs accumulated in f64.
#[inline]
pub fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

#[inline]
fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// States of one time step, ordered by Euclidean norm.
#[derive(Debug, Clone, Default)]
struct Bucket {
    norms: Vec<f64>,
    vectors: Vec<f32>,
}

/// Real states of one layer, bucketed by time step.
///
/// A query visits the buckets in `[t - window, t + window]` and, inside each,
/// only the states whose norm lies within `radius` of the query norm; the
/// triangle inequality guarantees no state outside that band can be closer
/// than `radius`. Every surviving candidate gets an exact distance check, so
/// counts are identical to a linear scan.
#[derive(Debug, Clone)]
pub struct SupportIndex {
    layer: usize,
    dim: usize,
    len: usize,
    buckets: BTreeMap<usize, Bucket>,
}

impl SupportIndex {
    /// Every `(t, state)` of `layer` from `traces`.
    pub fn build<'a, I>(traces: I, layer: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a StateTrace>,
    {
        let mut dim = None;
        let mut entries: Vec<(usize, &[f32])> = Vec::new();
        for tr in traces {
            if layer >= tr.num_layers() {
                return Err(Error::format(format!(
                    "trace `{}` has {} layers, layer {layer} requested",
                    tr.passage_id,
                    tr.num_layers()
                )));
            }
            match dim {
                None => dim = Some(tr.dim()),
                Some(d) if d != tr.dim() => {
                    return Err(Error::format(format!(
                        "trace `{}` has dim {}, expected {d}",
                        tr.passage_id,
                        tr.dim()
                    )))
                }
                _ => {}
            }
            entries.extend(tr.layer_states(layer));
        }
        let dim = dim.ok_or_else(|| Error::usage("support set needs at least one trace"))?;
        Self::from_entries(layer, dim, entries)
    }

    pub fn from_entries<'a, I>(layer: usize, dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, &'a [f32])>,
    {
        let mut staged: BTreeMap<usize, Vec<(f64, &[f32])>> = BTreeMap::new();
        let mut len = 0;
        for (t, v) in entries {
            if v.len() != dim {
                return Err(Error::format(format!(
                    "state of length {} in a dim-{dim} support set",
                    v.len()
                )));
            }
            staged.entry(t).or_default().push((norm(v), v));
            len += 1;
        }
        if len == 0 {
            return Err(Error::usage("support set is empty"));
        }
        let buckets = staged
            .into_iter()
            .map(|(t, mut items)| {
                // Ties broken by content so the layout is independent of input order.
                items.sort_by(|a, b| {
                    a.0.total_cmp(&b.0).then_with(|| {
                        a.1.iter()
                            .zip(b.1)
                            .map(|(x, y)| x.total_cmp(y))
                            .find(|o| o.is_ne())
                            .unwrap_or(std::cmp::Ordering::Equal)
                    })
                });
                let mut bucket = Bucket {
                    norms: Vec::with_capacity(items.len()),
                    vectors: Vec::with_capacity(items.len() * dim),
                };
                for (n, v) in items {
                    bucket.norms.push(n);
                    bucket.vectors.extend_from_slice(v);
                }
                (t, bucket)
            })
            .collect();
        Ok(Self {
            layer,
            dim,
            len,
            buckets,
        })
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of entries stored for time step `t`.
    pub fn entries_at(&self, t: usize) -> usize {
        self.buckets.get(&t).map_or(0, |b| b.norms.len())
    }

    /// Number of support states `h` at time `tau` with `|tau - t| <= window`
    /// and `||state - h|| < radius`.
    pub fn count(&self, state: &[f32], query: &NeighborQuery) -> Result<usize> {
        if state.len() != self.dim {
            return Err(Error::usage(format!(
                "query of dim {} against dim-{} support",
                state.len(),
                self.dim
            )));
        }
        let r = query.radius;
        let r2 = r * r;
        let q_norm = norm(state);
        // Slack keeps rounding in the norms from excluding a true neighbor.
        let slack = 1e-9 * (1.0 + q_norm + r);
        let lo = q_norm - r - slack;
        let hi = q_norm + r + slack;
        let first = query.t.saturating_sub(query.time_window);
        let last = query.t.saturating_add(query.time_window);
        let mut count = 0;
        for (_, bucket) in self.buckets.range(first..=last) {
            let start = bucket.norms.partition_point(|&n| n < lo);
            let end = bucket.norms.partition_point(|&n| n <= hi);
            for i in start..end {
                let h = &bucket.vectors[i * self.dim..(i + 1) * self.dim];
                if squared_distance(state, h) < r2 {
                    count += 1;
                }
            }
        }
        Ok(count)
    }
}
