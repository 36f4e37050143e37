use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: BTreeMap<String, ClassScores>,
    pub weighted_f1: f64,
    pub accuracy: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `Σ support·F1 / n` as one reduced fraction, with F1 = 2tp / (predicted + gold).
/// The final division is correctly rounded, so 11/15 comes out as the nearest
/// double to 11/15. `None` when the fraction outgrows exact f64 operands.
fn exact_weighted_f1(tp: &[usize], pred_n: &[usize], gold_n: &[usize], n: usize) -> Option<f64> {
    const EXACT: u128 = 1 << 53;
    let (mut num, mut den) = (0u128, 1u128);
    for ((&t, &p), &g) in tp.iter().zip(pred_n).zip(gold_n) {
        if t == 0 {
            continue;
        }
        let (a, b) = (2 * t as u128 * g as u128, (p + g) as u128);
        num = num.checked_mul(b)?.checked_add(a.checked_mul(den)?)?;
        den = den.checked_mul(b)?;
        let r = gcd(num, den);
        (num, den) = (num / r, den / r);
    }
    den = den.checked_mul(n as u128)?;
    let r = gcd(num, den).max(1);
    (num, den) = (num / r, den / r);
    (num < EXACT && den < EXACT).then(|| num as f64 / den as f64)
}

/// Per-class precision, recall and F1 (zero when undefined), and their
/// support-weighted F1 mean. Every predicted and gold label must be in
/// `label_set`.
pub fn weighted_f1<L>(preds: &[L], golds: &[L], label_set: &[L]) -> Result<EvalReport>
where
    L: Eq + Hash + ToString,
{
    if preds.len() != golds.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    if golds.is_empty() {
        return Err(Error::Argument("cannot score an empty prediction set".into()));
    }
    let index: HashMap<&L, usize> = label_set.iter().enumerate().map(|(i, l)| (l, i)).collect();
    let k = label_set.len();
    let (mut tp, mut pred_n, mut gold_n) = (vec![0usize; k], vec![0usize; k], vec![0usize; k]);
    for (p, g) in preds.iter().zip(golds) {
        let (pi, gi) = match (index.get(p), index.get(g)) {
            (Some(&pi), Some(&gi)) => (pi, gi),
            _ => {
                let bad = if index.contains_key(p) { g } else { p };
                return Err(Error::Argument(format!("label {:?} not in label set", bad.to_string())));
            }
        };
        pred_n[pi] += 1;
        gold_n[gi] += 1;
        if pi == gi {
            tp[pi] += 1;
        }
    }
    let mut per_class = BTreeMap::new();
    let mut weighted = 0.0;
    for (i, label) in label_set.iter().enumerate() {
        let precision = ratio(tp[i], pred_n[i]);
        let recall = ratio(tp[i], gold_n[i]);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        weighted += gold_n[i] as f64 * f1;
        per_class.insert(
            label.to_string(),
            ClassScores {
                precision,
                recall,
                f1,
                support: gold_n[i],
            },
        );
    }
    let n = golds.len();
    Ok(EvalReport {
        per_class,
        weighted_f1: exact_weighted_f1(&tp, &pred_n, &gold_n, n).unwrap_or(weighted / n as f64),
        accuracy: ratio(tp.iter().sum(), n),
    })
}
