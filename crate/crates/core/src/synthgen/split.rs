use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SynthError, SyntheticDataset, SyntheticExample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<SyntheticExample>,
    pub val: Vec<SyntheticExample>,
    pub train_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stratify_field: Option<String>,
    pub seed: u64,
}

fn round_half_up(x: f64) -> usize {
    // Guard against 0.2 * 30 = 6.000000000000001 style noise.
    (x + 0.5 + 1e-9).floor() as usize
}

/// Seeded split of the unflagged examples into train and validation sets.
///
/// The train size is `round(ratio * N)` with halves rounded up. With a
/// stratify field, each label gets the floor of its exact quota and the
/// leftover slots go to the labels with the largest fractional parts, so every
/// label's train count is within one of `round(ratio * count)`.
pub fn split_dataset(
    dataset: &SyntheticDataset,
    train_ratio: f64,
    stratify_field: Option<&str>,
    seed: u64,
) -> Result<DatasetSplit, SynthError> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(SynthError::Split(format!("train_ratio must be in (0, 1), got {train_ratio}")));
    }
    let active: Vec<&SyntheticExample> = dataset.active().collect();
    let n = active.len();
    if n < 2 {
        return Err(SynthError::Split(format!("need at least 2 usable examples, have {n}")));
    }
    if let Some(f) = stratify_field {
        if !dataset.schema.is_output(f) {
            return Err(SynthError::Split(format!("stratify field {f:?} is not an output field")));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = round_half_up(train_ratio * n as f64);
    if n_train >= n {
        return Err(SynthError::Split(format!(
            "train_ratio {train_ratio} leaves no validation examples out of {n}"
        )));
    }

    let train_idx: Vec<usize> = match stratify_field {
        None => order[..n_train].to_vec(),
        Some(field) => {
            let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for &i in &order {
                let label = active[i].outputs.get(field).map_or("", String::as_str);
                groups.entry(label).or_default().push(i);
            }
            let mut alloc: Vec<(&str, usize, f64)> = groups
                .iter()
                .map(|(l, idx)| {
                    let q = train_ratio * idx.len() as f64;
                    (*l, q.floor() as usize, q - q.floor())
                })
                .collect();
            let assigned: usize = alloc.iter().map(|a| a.1).sum();
            let mut rest = n_train.saturating_sub(assigned);
            let mut by_frac: Vec<usize> = (0..alloc.len()).collect();
            by_frac.sort_by(|&a, &b| alloc[b].2.total_cmp(&alloc[a].2).then(alloc[a].0.cmp(alloc[b].0)));
            for k in by_frac {
                if rest == 0 {
                    break;
                }
                if alloc[k].1 < groups[alloc[k].0].len() {
                    alloc[k].1 += 1;
                    rest -= 1;
                }
            }
            let mut picked: Vec<usize> =
                alloc.iter().flat_map(|(l, take, _)| groups[l][..*take].iter().copied()).collect();
            picked.sort_by_key(|i| order.iter().position(|o| o == i));
            picked
        }
    };

    let mut in_train = vec![false; n];
    for &i in &train_idx {
        in_train[i] = true;
    }
    let train = train_idx.iter().map(|&i| active[i].clone()).collect();
    let val = order.iter().filter(|&&i| !in_train[i]).map(|&i| active[i].clone()).collect();
    Ok(DatasetSplit {
        train,
        val,
        train_ratio,
        stratify_field: stratify_field.map(str::to_string),
        seed,
    })
}
