use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EvalError, FinetuneConfig, Result};

/// Dataset indices chosen for evaluation. All lists are sorted and
/// `train ∪ held_out = labeled`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSplit {
    pub labeled: Vec<usize>,
    pub train: Vec<usize>,
    pub held_out: Vec<usize>,
}

/// Stratified label budget followed by a stratified train/held-out split
/// of the labeled subset, both driven by `cfg.seed`.
///
/// The budget is allocated across classes by largest remainder, so the
/// subset holds exactly the requested number of images.
pub fn split_labeled(labels: &[Option<u16>], classes: usize, cfg: &FinetuneConfig) -> Result<LabeledSplit> {
    cfg.validate()?;
    let labels = labels
        .iter()
        .enumerate()
        .map(|(index, l)| {
            let l = usize::from(l.ok_or(EvalError::MissingLabels { index })?);
            if l >= classes {
                return Err(EvalError::LabelOutOfRange { label: l, classes });
            }
            Ok(l)
        })
        .collect::<Result<Vec<_>>>()?;
    let budget = cfg.labeled.resolve(labels.len())?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(3);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }

    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let quotas = apportion(&sizes, budget);
    let (mut labeled, mut train, mut held_out) = (Vec::new(), Vec::new(), Vec::new());
    for (members, &q) in by_class.iter().zip(&quotas) {
        let chosen = &members[..q];
        let held = (q as f64 * cfg.held_out_fraction).round() as usize;
        labeled.extend_from_slice(chosen);
        held_out.extend_from_slice(&chosen[..held]);
        train.extend_from_slice(&chosen[held..]);
    }
    for (name, part) in [("train", &train), ("held-out", &held_out)] {
        let distinct = part.iter().map(|&i| labels[i]).collect::<BTreeSet<_>>().len();
        if distinct < 2 {
            return Err(EvalError::SingleClassSplit {
                split: name,
                classes: distinct,
            });
        }
    }
    labeled.sort_unstable();
    train.sort_unstable();
    held_out.sort_unstable();
    Ok(LabeledSplit {
        labeled,
        train,
        held_out,
    })
}

/// Splits `total` proportionally to `sizes`; leftover units go to the
/// largest fractional parts, ties to the lower index.
fn apportion(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let mut quotas: Vec<usize> = sizes.iter().map(|&s| s * total / n).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    // Remainders compared exactly as integers `s * total mod n`.
    order.sort_by_key(|&k| std::cmp::Reverse(sizes[k] * total % n));
    let mut left = total - quotas.iter().sum::<usize>();
    for k in order {
        if left == 0 {
            break;
        }
        if quotas[k] < sizes[k] {
            quotas[k] += 1;
            left -= 1;
        }
    }
    quotas
}
