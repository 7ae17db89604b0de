use crate::autodiff::Tensor;
use crate::cloud::{Label, IGNORE_LABEL};
use crate::error::{Error, Result};

/// A scalar loss and its gradient with respect to the loss input.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub loss: f64,
    pub grad: Tensor,
}

fn check_targets(rows: usize, classes: usize, targets: &[Label]) -> Result<usize> {
    if targets.len() != rows {
        return Err(Error::Shape(format!(
            "{} targets for {rows} rows",
            targets.len()
        )));
    }
    let mut count = 0;
    for &t in targets {
        if t == IGNORE_LABEL {
            continue;
        }
        if t as usize >= classes {
            return Err(Error::LabelOutOfRange {
                label: t as u32,
                num_classes: classes,
            });
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::AllIgnored);
    }
    Ok(count)
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean negative log-likelihood of the targets over non-ignored rows.
pub fn cross_entropy(logits: &Tensor, targets: &[Label]) -> Result<LossValue> {
    let count = check_targets(logits.rows, logits.cols, targets)? as f64;
    let mut grad = Tensor::zeros(logits.rows, logits.cols);
    let mut loss = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        if t == IGNORE_LABEL {
            continue;
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[t as usize];
        let g = grad.row_mut(r);
        for (c, gv) in g.iter_mut().enumerate() {
            *gv = (row[c] - lse).exp() / count;
        }
        g[t as usize] -= 1.0 / count;
    }
    Ok(LossValue {
        loss: loss / count,
        grad,
    })
}

/// Lovász-Softmax over the classes present in the targets.
///
/// For class `c` the per-point errors are `1 - p(c)` on points of class `c`
/// and `p(c)` elsewhere. Sorted in decreasing order, they are weighted by the
/// increments of the Jaccard loss along the sorted prefix; the sort order is
/// held fixed for the gradient.
pub fn lovasz_softmax(probs: &Tensor, targets: &[Label]) -> Result<LossValue> {
    check_targets(probs.rows, probs.cols, targets)?;
    for r in 0..probs.rows {
        let s: f64 = probs.row(r).iter().sum();
        if (s - 1.0).abs() > 1e-9 || probs.row(r).iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "row {r} is not a probability vector (sum {s})"
            )));
        }
    }
    let rows: Vec<usize> = (0..probs.rows)
        .filter(|&r| targets[r] != IGNORE_LABEL)
        .collect();
    let mut present = vec![false; probs.cols];
    for &r in &rows {
        present[targets[r] as usize] = true;
    }
    let num_present = present.iter().filter(|&&p| p).count() as f64;
    let mut grad = Tensor::zeros(probs.rows, probs.cols);
    let mut total = 0.0;
    let mut order: Vec<(f64, bool, usize)> = Vec::with_capacity(rows.len());
    for c in (0..probs.cols).filter(|&c| present[c]) {
        order.clear();
        for &r in &rows {
            let fg = targets[r] as usize == c;
            let p = probs.row(r)[c];
            order.push((if fg { 1.0 - p } else { p }, fg, r));
        }
        order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)));
        let gts = order.iter().filter(|o| o.1).count() as f64;
        let mut cum_fg = 0.0;
        let mut cum_bg = 0.0;
        let mut prev_jaccard = 0.0;
        for &(err, fg, r) in &order {
            if fg {
                cum_fg += 1.0;
            } else {
                cum_bg += 1.0;
            }
            let jaccard = 1.0 - (gts - cum_fg) / (gts + cum_bg);
            let weight = jaccard - prev_jaccard;
            prev_jaccard = jaccard;
            total += err * weight;
            let d = weight / num_present;
            grad.row_mut(r)[c] += if fg { -d } else { d };
        }
    }
    Ok(LossValue {
        loss: total / num_present,
        grad,
    })
}

/// Cross-entropy plus Lovász-Softmax (through the softmax), gradient on logits.
pub fn total_loss(logits: &Tensor, targets: &[Label]) -> Result<LossValue> {
    let ce = cross_entropy(logits, targets)?;
    let probs = softmax_rows(logits);
    let lov = lovasz_softmax(&probs, targets)?;
    let mut grad = ce.grad;
    for r in 0..probs.rows {
        let p = probs.row(r);
        let dp = lov.grad.row(r);
        let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
        for (c, g) in grad.row_mut(r).iter_mut().enumerate() {
            *g += p[c] * (dp[c] - dot);
        }
    }
    Ok(LossValue {
        loss: ce.loss + lov.loss,
        grad,
    })
}
