use super::{EvalError, Result};

fn check(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EvalError::NonFiniteScore);
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(EvalError::NonBinaryLabel);
    }
    Ok(())
}

/// Mann-Whitney AUC with half credit for ties.
///
/// Counts are kept in integer half-units and divided once, so the result is
/// the exact rational rounded to the nearest `f64`.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // walk ascending; every positive beats all negatives strictly below it
    let mut half_units: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == s {
            if labels[order[j]] == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        half_units += pos * (2 * neg_below + neg);
        neg_below += neg;
        i = j;
    }
    Ok(half_units as f64 / (2 * n_pos * n_neg) as f64)
}

/// Non-interpolated average precision. Items are ranked by descending score;
/// equal scores keep their input order.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 {
        return Err(EvalError::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable sort, so ties stay in input order
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = DoubleDouble::default();
    for (rank, &idx) in order.iter().enumerate() {
        if labels[idx] == 1 {
            hits += 1;
            sum.add_ratio(hits as f64, (rank + 1) as f64);
        }
    }
    Ok(sum.div(n_pos as f64))
}

/// Unevaluated sum `hi + lo` carrying about 106 bits, so that short exact
/// cases such as (1 + 2/3) / 2 round to the nearest double of 5/6.
#[derive(Clone, Copy, Debug, Default)]
struct DoubleDouble {
    hi: f64,
    lo: f64,
}

impl DoubleDouble {
    fn add(&mut self, x: f64) {
        // two-sum
        let s = self.hi + x;
        let bp = s - self.hi;
        let err = (self.hi - (s - bp)) + (x - bp);
        let lo = self.lo + err;
        self.hi = s + lo;
        self.lo = lo - (self.hi - s);
    }

    fn add_ratio(&mut self, num: f64, den: f64) {
        let q = num / den;
        let rem = (-q).mul_add(den, num);
        self.add(q);
        self.add(rem / den);
    }

    fn div(self, den: f64) -> f64 {
        let q = self.hi / den;
        let rem = (-q).mul_add(den, self.hi) + self.lo;
        q + rem / den
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    RocAuc,
    AveragePrecision,
}

impl Metric {
    pub fn apply(self, scores: &[f64], labels: &[u8]) -> Result<f64> {
        match self {
            Metric::RocAuc => roc_auc(scores, labels),
            Metric::AveragePrecision => average_precision(scores, labels),
        }
    }
}

/// Macro average and the number of tags left out because a class was missing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MacroScore {
    pub value: f64,
    pub skipped_tags: usize,
}

/// Unweighted mean of `metric` over tag columns of row-major
/// `n_items x n_tags` matrices. Single-class tags are skipped and counted.
pub fn macro_over_tags(
    metric: Metric,
    scores: &[Vec<f64>],
    labels: &[Vec<u8>],
) -> Result<MacroScore> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let n_tags = scores.first().map_or(0, Vec::len);
    if scores.iter().any(|r| r.len() != n_tags) || labels.iter().any(|r| r.len() != n_tags) {
        return Err(EvalError::Ragged);
    }
    let mut total = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for t in 0..n_tags {
        let s: Vec<f64> = scores.iter().map(|r| r[t]).collect();
        let l: Vec<u8> = labels.iter().map(|r| r[t]).collect();
        // AP is defined with only positives present, but a tag needs both
        // classes to be scored under either metric
        let pos = l.iter().filter(|&&x| x == 1).count();
        if pos == 0 || pos == l.len() {
            skipped += 1;
            continue;
        }
        total += metric.apply(&s, &l)?;
        used += 1;
    }
    if used == 0 {
        return Err(EvalError::AllTagsDegenerate);
    }
    Ok(MacroScore {
        value: total / used as f64,
        skipped_tags: skipped,
    })
}
