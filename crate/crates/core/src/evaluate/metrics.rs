use serde::{Deserialize, Serialize};

use crate::error::{Result, SrhError};
use crate::registry::Registry;

/// Nonnegative class distribution summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() || p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(SrhError::Contract("distribution entries must be finite and nonnegative".into()));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(SrhError::Contract(format!("distribution sums to {s}")));
        }
        Ok(Self(p))
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(w: Vec<f64>) -> Result<Self> {
        let s: f64 = w.iter().sum();
        if w.iter().any(|v| !(*v >= 0.0)) || !(s > 0.0) || !s.is_finite() {
            return Err(SrhError::Contract("weights must be nonnegative with positive total".into()));
        }
        Ok(Self(w.into_iter().map(|v| v / s).collect()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Most probable class; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// 0-based rank of `class` under descending probability, ties by index.
    pub fn rank(&self, class: usize) -> usize {
        let p = self.0[class];
        self.0.iter().enumerate().filter(|&(c, &q)| q > p || (q == p && c < class)).count()
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_nonempty(dists: &[ProbDist]) -> Result<usize> {
    let k = dists
        .first()
        .map(ProbDist::len)
        .ok_or_else(|| SrhError::Contract("cannot aggregate an empty list".into()))?;
    if dists.iter().any(|d| d.len() != k) {
        return Err(SrhError::Shape("distributions over different class counts".into()));
    }
    Ok(k)
}

/// Sum of the distributions, renormalized.
pub fn soft_aggregate(dists: &[ProbDist]) -> Result<ProbDist> {
    let k = check_nonempty(dists)?;
    let mut sum = vec![0.0; k];
    for d in dists {
        for (s, v) in sum.iter_mut().zip(&d.0) {
            *s += v;
        }
    }
    ProbDist::from_weights(sum)
}

/// Fraction of patches whose argmax is each class.
pub fn vote_shares(dists: &[ProbDist]) -> Result<ProbDist> {
    let k = check_nonempty(dists)?;
    let mut votes = vec![0.0; k];
    for d in dists {
        votes[d.argmax()] += 1.0;
    }
    ProbDist::from_weights(votes)
}

/// Modal per-patch argmax; ties go to the lowest class index.
pub fn majority_vote(dists: &[ProbDist]) -> Result<usize> {
    Ok(vote_shares(dists)?.argmax())
}

/// Combines patch distributions into one slide or patient distribution.
pub trait Aggregator: Send + Sync {
    fn name(&self) -> &'static str;
    fn aggregate(&self, dists: &[ProbDist]) -> Result<ProbDist>;
}

pub struct SoftAggregator;

impl Aggregator for SoftAggregator {
    fn name(&self) -> &'static str {
        "soft"
    }

    fn aggregate(&self, dists: &[ProbDist]) -> Result<ProbDist> {
        soft_aggregate(dists)
    }
}

/// Vote shares, so the argmax is the majority vote.
pub struct MajorityAggregator;

impl Aggregator for MajorityAggregator {
    fn name(&self) -> &'static str {
        "majority"
    }

    fn aggregate(&self, dists: &[ProbDist]) -> Result<ProbDist> {
        vote_shares(dists)
    }
}

pub type AggregatorRegistry = Registry<dyn Aggregator, ()>;

impl AggregatorRegistry {
    pub fn builtin() -> Self {
        let mut r = Registry::empty("aggregator");
        r.register("soft", |_: &()| Ok(Box::new(SoftAggregator) as Box<dyn Aggregator>));
        r.register("majority", |_: &()| Ok(Box::new(MajorityAggregator) as Box<dyn Aggregator>));
        r
    }
}

/// Fraction of items whose true class is among the `k` most probable.
pub fn top_k_accuracy(items: &[(ProbDist, usize)], k: usize) -> Result<f64> {
    let classes = items.first().map_or(usize::MAX, |(d, _)| d.len());
    if k == 0 || k > classes {
        return Err(SrhError::Contract(format!("k = {k} outside 1..={classes}")));
    }
    if items.is_empty() {
        return Ok(0.0);
    }
    let hits = items.iter().filter(|(d, y)| d.rank(*y) < k).count();
    Ok(hits as f64 / items.len() as f64)
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self { counts: vec![vec![0; k]; k] }
    }

    pub fn from_pairs(k: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut m = Self::new(k);
        for (t, p) in pairs {
            m.add(t, p);
        }
        m
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }

    /// Unweighted mean of per-class recall over classes that occur.
    pub fn mean_class_accuracy(&self) -> Result<f64> {
        let mut recalls = Vec::new();
        for c in 0..self.num_classes() {
            match self.row_sum(c) {
                0 => log::warn!("class {c} has no samples and is left out of mean class accuracy"),
                n => recalls.push(self.counts[c][c] as f64 / n as f64),
            }
        }
        if recalls.is_empty() {
            return Err(SrhError::Contract("mean class accuracy of an empty confusion matrix".into()));
        }
        Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pd(v: &[f64]) -> ProbDist {
        ProbDist::new(v.to_vec()).unwrap()
    }

    #[test]
    fn soft_aggregate_examples() {
        let a = soft_aggregate(&[pd(&[0.6, 0.4]), pd(&[0.2, 0.8])]).unwrap();
        assert!((a.as_slice()[0] - 0.4).abs() < 1e-15 && (a.as_slice()[1] - 0.6).abs() < 1e-15);
        assert_eq!(soft_aggregate(&[pd(&[0.3, 0.7])]).unwrap(), pd(&[0.3, 0.7]));
        let b = soft_aggregate(&[pd(&[1.0, 0.0]), pd(&[1.0, 0.0]), pd(&[0.0, 1.0])]).unwrap();
        assert!((b.as_slice()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!(soft_aggregate(&[]).is_err());
    }

    #[test]
    fn majority_examples() {
        let (a, b) = (pd(&[0.7, 0.3]), pd(&[0.1, 0.9]));
        assert_eq!(majority_vote(&[a.clone(), a.clone(), b.clone()]).unwrap(), 0);
        assert_eq!(majority_vote(&[b.clone(), a.clone()]).unwrap(), 0);
        assert!(majority_vote(&[]).is_err());
        let disagree = [pd(&[0.9, 0.1]), pd(&[0.4, 0.6]), pd(&[0.4, 0.6])];
        assert_eq!(majority_vote(&disagree).unwrap(), 1);
        let soft = soft_aggregate(&disagree).unwrap();
        assert!((soft.as_slice()[0] - 1.7 / 3.0).abs() < 1e-12);
        assert_eq!(soft.argmax(), 0);
        let reg = AggregatorRegistry::builtin();
        assert_eq!(reg.create("majority", &()).unwrap().aggregate(&disagree).unwrap().argmax(), 1);
        assert_eq!(reg.create("soft", &()).unwrap().aggregate(&disagree).unwrap().argmax(), 0);
    }

    #[test]
    fn top_k_examples() {
        let items = vec![(pd(&[0.1, 0.6, 0.3]), 1), (pd(&[0.5, 0.2, 0.3]), 0)];
        for k in 1..=3 {
            assert_eq!(top_k_accuracy(&items, k).unwrap(), 1.0);
        }
        let second = vec![(pd(&[0.1, 0.6, 0.3]), 2), (pd(&[0.5, 0.2, 0.3]), 2)];
        assert_eq!(top_k_accuracy(&second, 1).unwrap(), 0.0);
        assert_eq!(top_k_accuracy(&second, 2).unwrap(), 1.0);
        assert!(top_k_accuracy(&second, 0).is_err() && top_k_accuracy(&second, 4).is_err());
        // ties rank by class index
        let tie = vec![(pd(&[0.5, 0.5]), 1)];
        assert_eq!(top_k_accuracy(&tie, 1).unwrap(), 0.0);
    }

    #[test]
    fn mca_differs_from_accuracy() {
        let pairs = std::iter::repeat_n((0, 0), 9)
            .chain([(0, 1)])
            .chain(std::iter::repeat_n((1, 1), 2))
            .chain(std::iter::repeat_n((1, 0), 3));
        let m = ConfusionMatrix::from_pairs(2, pairs);
        assert!((m.mean_class_accuracy().unwrap() - 0.65).abs() < 1e-15);
        assert!((m.accuracy() - 11.0 / 15.0).abs() < 1e-15);
        let perfect = ConfusionMatrix::from_pairs(3, [(0, 0), (1, 1), (2, 2), (2, 2)]);
        assert_eq!(perfect.mean_class_accuracy().unwrap(), 1.0);
        let sparse = ConfusionMatrix::from_pairs(3, [(0, 0), (2, 1)]);
        assert_eq!(sparse.mean_class_accuracy().unwrap(), 0.5);
        assert!(ConfusionMatrix::new(2).mean_class_accuracy().is_err());
    }

    #[test]
    fn mca_of_random_guessing_is_one_over_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let k = 8;
        let m = ConfusionMatrix::from_pairs(k, (0..10_000).map(|_| (rng.random_range(0..k), rng.random_range(0..k))));
        assert!((m.mean_class_accuracy().unwrap() - 1.0 / k as f64).abs() < 0.05);
    }

    fn dists(n: usize, k: usize) -> impl Strategy<Value = Vec<ProbDist>> {
        proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, k), 1..n)
            .prop_map(|rows| rows.into_iter().map(|r| ProbDist::from_weights(r).unwrap()).collect())
    }

    proptest! {
        #[test]
        fn soft_is_mean_and_order_free(ds in dists(12, 5), shift in 0usize..12, scale in 0.1f64..10.0) {
            let a = soft_aggregate(&ds).unwrap();
            let n = ds.len() as f64;
            for c in 0..5 {
                let mean = ds.iter().map(|d| d.as_slice()[c]).sum::<f64>() / n;
                prop_assert!((a.as_slice()[c] - mean).abs() < 1e-12);
            }
            let mut rot = ds.clone();
            rot.rotate_left(shift % ds.len());
            let b = soft_aggregate(&rot).unwrap();
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            let same = soft_aggregate(&vec![ds[0].clone(); ds.len()]).unwrap();
            for (x, y) in same.as_slice().iter().zip(ds[0].as_slice()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            // Scaling every summed distribution by a constant keeps the argmax.
            let scaled: Vec<f64> = ds.iter().fold(vec![0.0; 5], |mut acc, d| {
                acc.iter_mut().zip(d.as_slice()).for_each(|(s, v)| *s += v * scale);
                acc
            });
            prop_assert_eq!(ProbDist::from_weights(scaled).unwrap().argmax(), a.argmax());
        }

        #[test]
        fn top_k_nondecreasing(ds in dists(30, 6), labels in proptest::collection::vec(0usize..6, 30)) {
            let items: Vec<(ProbDist, usize)> = ds.into_iter().zip(labels).collect();
            let accs: Vec<f64> = (1..=6).map(|k| top_k_accuracy(&items, k).unwrap()).collect();
            prop_assert!(accs.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(accs[5], 1.0);
        }

        #[test]
        fn confusion_rows_count_classes(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..100)) {
            let m = ConfusionMatrix::from_pairs(4, pairs.iter().copied());
            for c in 0..4 {
                prop_assert_eq!(m.row_sum(c), pairs.iter().filter(|(t, _)| *t == c).count() as u64);
            }
            let correct = pairs.iter().filter(|(t, p)| t == p).count() as f64;
            prop_assert!((m.accuracy() - correct / pairs.len() as f64).abs() < 1e-15);
        }
    }
}
