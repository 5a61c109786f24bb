//! Discovery sets from statistics: the knockoff(+) filter, Benjamini–Hochberg,
//! correlation clumping with prototypes and majority aggregation.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    KnockoffPlus,
    /// Offset-0 knockoff filter.
    Knockoff,
    Bh,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::KnockoffPlus => "knockoff_plus",
            Method::Knockoff => "knockoff",
            Method::Bh => "bh",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub method: Method,
    pub q: f64,
    /// τ for knockoffs (`+∞` when nothing passes), the p-value cutoff for BH.
    pub threshold: f64,
    pub selected: Vec<usize>,
}

fn check_q(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid("q", format!("must lie in (0, 1), got {q}")))
    }
}

/// Knockoff filter threshold; `offset = 1` gives knockoff+.
pub fn knockoff_threshold(w: &[f64], q: f64, offset: u32) -> Result<SelectionResult> {
    check_q(q)?;
    if w.is_empty() {
        return Err(Error::invalid("w", "empty statistic vector"));
    }
    if offset > 1 {
        return Err(Error::invalid("offset", format!("must be 0 or 1, got {offset}")));
    }
    if let Some(bad) = w.iter().find(|v| v.is_nan()) {
        return Err(Error::invalid("w", format!("contains {bad}")));
    }
    let mut pos: Vec<f64> = w.iter().copied().filter(|v| *v > 0.0).collect();
    let mut neg: Vec<f64> = w.iter().filter(|v| **v < 0.0).map(|v| -v).collect();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let mut candidates: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let mut tau = f64::INFINITY;
    for &t in &candidates {
        let above = pos.len() - pos.partition_point(|v| *v < t);
        let below = neg.len() - neg.partition_point(|v| *v < t);
        let ratio = (offset as usize + below) as f64 / above.max(1) as f64;
        if ratio <= q {
            tau = t;
            break;
        }
    }
    let selected = (0..w.len()).filter(|&j| w[j] >= tau).collect();
    Ok(SelectionResult {
        method: if offset == 1 {
            Method::KnockoffPlus
        } else {
            Method::Knockoff
        },
        q,
        threshold: tau,
        selected,
    })
}

/// Benjamini–Hochberg step-up at level `q`.
pub fn bh(pvalues: &[f64], q: f64) -> Result<SelectionResult> {
    check_q(q)?;
    if let Some((i, p)) = pvalues
        .iter()
        .enumerate()
        .find(|(_, p)| !(0.0..=1.0).contains(*p))
    {
        return Err(Error::invalid("pvalues", format!("entry {i} = {p} is outside [0, 1]")));
    }
    let m = pvalues.len();
    let mut sorted = pvalues.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = (1..=m)
        .rev()
        .find(|&k| sorted[k - 1] <= k as f64 * q / m as f64)
        .unwrap_or(0);
    let threshold = if k == 0 { 0.0 } else { k as f64 * q / m as f64 };
    let selected = if k == 0 {
        Vec::new()
    } else {
        (0..m).filter(|&i| pvalues[i] <= threshold).collect()
    };
    Ok(SelectionResult {
        method: Method::Bh,
        q,
        threshold,
        selected,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupStructure {
    /// Groups ordered by their smallest member; members sorted.
    pub groups: Vec<Vec<usize>>,
    pub prototypes: Vec<usize>,
    pub threshold: f64,
    /// Constant columns, each left as a singleton group.
    pub constant_columns: Vec<usize>,
}

impl GroupStructure {
    pub fn group_of(&self, j: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.binary_search(&j).is_ok())
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Single-linkage clustering on `|corr| >= threshold`.
pub fn clump_variables(
    x: &DMatrix<f64>,
    threshold: f64,
    y: Option<&DVector<f64>>,
) -> Result<GroupStructure> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid("threshold", format!("must lie in (0, 1), got {threshold}")));
    }
    let (n, p) = x.shape();
    if n < 2 {
        return Err(Error::invalid("X", "clumping needs at least 2 rows"));
    }
    if let Some(y) = y {
        if y.len() != n {
            return Err(Error::Shape(format!("X has {n} rows, y has {}", y.len())));
        }
    }
    let (_, sds) = linalg::column_moments(x);
    let constant: Vec<usize> = (0..p).filter(|&j| sds[j] <= 0.0).collect();
    let corr = linalg::correlation_matrix(x);

    let mut parent: Vec<usize> = (0..p).collect();
    for j in 0..p {
        if sds[j] <= 0.0 {
            continue;
        }
        for k in (j + 1)..p {
            if sds[k] > 0.0 && corr[(j, k)].abs() >= threshold {
                let (a, b) = (find(&mut parent, j), find(&mut parent, k));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; p];
    for j in 0..p {
        let root = find(&mut parent, j);
        if slot[root] == usize::MAX {
            slot[root] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[root]].push(j);
    }

    let score: Option<Vec<f64>> = y.map(|y| {
        x.column_iter()
            .map(|c| linalg::covariance(c.as_slice(), y.as_slice()).abs())
            .collect()
    });
    let prototypes = groups
        .iter()
        .map(|g| match &score {
            // first maximum keeps the smallest index on ties
            Some(s) => g.iter().copied().fold(g[0], |best, j| if s[j] > s[best] { j } else { best }),
            None => g[0],
        })
        .collect();
    Ok(GroupStructure {
        groups,
        prototypes,
        threshold,
        constant_columns: constant,
    })
}

/// Indices selected in at least `freq_threshold` of the runs.
pub fn aggregate_selections(runs: &[Vec<usize>], freq_threshold: f64) -> Result<Vec<usize>> {
    if runs.is_empty() {
        return Err(Error::invalid("runs", "need at least one run"));
    }
    if !(freq_threshold > 0.0 && freq_threshold <= 1.0) {
        return Err(Error::invalid(
            "freq_threshold",
            format!("must lie in (0, 1], got {freq_threshold}"),
        ));
    }
    let mut counts = std::collections::BTreeMap::<usize, usize>::new();
    for run in runs {
        let unique: BTreeSet<usize> = run.iter().copied().collect();
        for j in unique {
            *counts.entry(j).or_default() += 1;
        }
    }
    let needed = freq_threshold * runs.len() as f64;
    Ok(counts
        .into_iter()
        // small slack so that e.g. 0.7 * 10 still admits 7 of 10
        .filter(|(_, c)| *c as f64 >= needed - 1e-9)
        .map(|(j, _)| j)
        .collect())
}

/// False discovery proportion and power of one selection.
pub fn fdp_and_power(selected: &[usize], truth: &[usize]) -> (f64, f64) {
    let sel: BTreeSet<usize> = selected.iter().copied().collect();
    let tru: BTreeSet<usize> = truth.iter().copied().collect();
    let hits = sel.intersection(&tru).count();
    let false_hits = sel.len() - hits;
    (
        false_hits as f64 / sel.len().max(1) as f64,
        hits as f64 / tru.len().max(1) as f64,
    )
}
