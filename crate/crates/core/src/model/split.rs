use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

/// A feature/label pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub x: Tensor,
    pub y: Tensor,
}

impl Partition {
    fn select(x: &Tensor, y: &Tensor, rows: &[usize]) -> Result<Self> {
        Ok(Self {
            x: x.select_rows(rows)?,
            y: y.select_rows(rows)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub train: Partition,
    pub val: Partition,
    pub test: Partition,
    pub seed: u64,
}

fn test_count(n: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("split fraction {fraction} outside (0,1)")));
    }
    let n_test = (fraction * n as f64).ceil() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::invalid(format!(
            "fraction {fraction} of {n} rows leaves an empty partition"
        )));
    }
    Ok(n_test)
}

/// Shuffles the rows and returns `(train, test)` with
/// `ceil(test_fraction * n)` test rows.
pub fn train_test_split(
    x: &Tensor,
    y: &Tensor,
    test_fraction: f64,
    rng: &mut Rng,
) -> Result<(Partition, Partition)> {
    let n = x.rows();
    if y.rows() != n {
        return Err(Error::ShapeMismatch {
            op: "train_test_split",
            left: x.shape().to_vec(),
            right: y.shape().to_vec(),
        });
    }
    let n_test = test_count(n, test_fraction)?;
    let perm = rng.permutation(n);
    let (test, train) = perm.split_at(n_test);
    Ok((Partition::select(x, y, train)?, Partition::select(x, y, test)?))
}

/// Two successive splits: `holdout` of the rows leave the training set, and
/// `test_share` of those become the test set, the rest validation.
pub fn train_val_test_split(
    x: &Tensor,
    y: &Tensor,
    holdout: f64,
    test_share: f64,
    seed: u64,
) -> Result<SplitDataset> {
    let mut rng = Rng::new(seed);
    let (train, rest) = train_test_split(x, y, holdout, &mut rng)?;
    let (val, test) = train_test_split(&rest.x, &rest.y, test_share, &mut rng)?;
    Ok(SplitDataset {
        train,
        val,
        test,
        seed,
    })
}

/// `k` (train, test) index pairs over a seeded permutation of `0..n`. Fold
/// sizes differ by at most one (the first `n % k` folds are larger), and
/// every index lands in exactly one test fold.
pub fn kfold_indices(n: usize, k: usize, rng: &mut Rng) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 || k > n {
        return Err(Error::invalid(format!("k-fold needs 2 <= k <= n, got k={k}, n={n}")));
    }
    let perm = rng.permutation(n);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = n / k + usize::from(f < n % k);
        let test = perm[start..start + size].to_vec();
        let train = perm[..start].iter().chain(&perm[start + size..]).copied().collect();
        folds.push((train, test));
        start += size;
    }
    Ok(folds)
}
