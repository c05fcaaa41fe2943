use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset};

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Per-class counts for each split: floors of the proportional share, with the
/// leftover samples going to the largest fractional remainders (earlier split on ties).
fn allocate(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for k in 0..3 {
        counts[k] = exact[k].floor() as usize;
    }
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).filter(|&k| fractions[k] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    counts
}

/// Class-stratified train/validation/test split. Each split keeps dataset order.
pub fn stratified_split(ds: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<Splits, DataError> {
    let fr = [fractions.0, fractions.1, fractions.2];
    if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::Split(format!("fractions {fr:?} must be in [0, 1] and sum to 1")));
    }
    let active = fr.iter().filter(|&&f| f > 0.0).count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<usize>; 3] = Default::default();
    for label in crate::data::PceLabel::ALL {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.samples()[i].label == label).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < active {
            return Err(DataError::Split(format!(
                "class {label} has {} samples, fewer than the {active} splits",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let counts = allocate(idx.len(), &fr);
        let mut start = 0;
        for k in 0..3 {
            parts[k].extend_from_slice(&idx[start..start + counts[k]]);
            start += counts[k];
        }
    }
    for p in parts.iter_mut() {
        p.sort_unstable();
    }
    Ok(Splits {
        train: ds.subset(&parts[0]),
        val: ds.subset(&parts[1]),
        test: ds.subset(&parts[2]),
    })
}
