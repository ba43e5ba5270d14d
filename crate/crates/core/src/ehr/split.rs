use rand::seq::SliceRandom;

use crate::rng::{stream, Domain};

use super::types::{DataError, PatientRecord};

pub type SplitParts = (Vec<PatientRecord>, Vec<PatientRecord>, Vec<PatientRecord>);

/// Patient-level disjoint split, deterministic under `seed`. Sizes follow the
/// largest-remainder rule; every part is nonempty when there are at least
/// three patients.
pub fn split_dataset(
    records: &[PatientRecord],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitParts, DataError> {
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|&x| x <= 0.0) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::InvalidRatios(r));
    }
    let n = records.len();
    if n < 3 {
        return Err(DataError::TooFewPatients { n });
    }

    let mut sizes = [0usize; 3];
    let mut remainders = [0.0f64; 3];
    for i in 0..3 {
        let exact = r[i] * n as f64;
        sizes[i] = exact.floor() as usize;
        remainders[i] = exact - exact.floor();
    }
    while sizes.iter().sum::<usize>() < n {
        let i = (0..3)
            .max_by(|&a, &b| remainders[a].partial_cmp(&remainders[b]).unwrap())
            .unwrap();
        sizes[i] += 1;
        remainders[i] = -1.0;
    }
    // largest part donates so no part is empty
    for i in 0..3 {
        while sizes[i] == 0 {
            let j = (0..3).max_by_key(|&j| sizes[j]).unwrap();
            sizes[j] -= 1;
            sizes[i] += 1;
        }
    }

    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, Domain::Split, 0));
    let take = |range: std::ops::Range<usize>| -> Vec<PatientRecord> {
        idx[range].iter().map(|&i| records[i].clone()).collect()
    };
    let a = sizes[0];
    let b = sizes[0] + sizes[1];
    Ok((take(0..a), take(a..b), take(b..n)))
}
