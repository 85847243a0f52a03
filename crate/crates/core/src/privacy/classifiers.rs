//! The four attack classifiers and the membership-inference harness.

use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::rng::{self, Rng};

/// Minimum samples per class for [`mia_attack`].
pub const MIN_CLASS_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ClassifierId {
    Lr,
    Svm,
    Knn,
    Rf,
}

impl ClassifierId {
    pub const ALL: [ClassifierId; 4] = [Self::Lr, Self::Svm, Self::Knn, Self::Rf];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Lr => "lr",
            Self::Svm => "svm",
            Self::Knn => "knn",
            Self::Rf => "rf",
        }
    }
}

pub trait BinaryClassifier {
    fn fit(&mut self, xs: &[Vec<f64>], ys: &[bool]);
    fn predict(&self, x: &[f64]) -> bool;
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Logistic regression, full-batch gradient descent from zero weights.
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    pub learning_rate: f64,
    pub epochs: usize,
    weights: Vec<f64>,
    bias: f64,
}

impl Default for LogisticRegression {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 500,
            weights: Vec::new(),
            bias: 0.0,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + math::exp(-z))
    } else {
        let e = math::exp(z);
        e / (1.0 + e)
    }
}

impl BinaryClassifier for LogisticRegression {
    fn fit(&mut self, xs: &[Vec<f64>], ys: &[bool]) {
        let d = xs.first().map_or(0, Vec::len);
        self.weights = alloc::vec![0.0; d];
        self.bias = 0.0;
        let n = xs.len() as f64;
        let mut grad = alloc::vec![0.0; d];
        for _ in 0..self.epochs {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut grad_b = 0.0;
            for (x, &y) in xs.iter().zip(ys) {
                let err = sigmoid(dot(&self.weights, x) + self.bias) - f64::from(u8::from(y));
                for (g, xi) in grad.iter_mut().zip(x) {
                    *g += err * xi;
                }
                grad_b += err;
            }
            for (w, g) in self.weights.iter_mut().zip(&grad) {
                *w -= self.learning_rate * g / n;
            }
            self.bias -= self.learning_rate * grad_b / n;
        }
    }

    fn predict(&self, x: &[f64]) -> bool {
        dot(&self.weights, x) + self.bias > 0.0
    }
}

/// Linear SVM: L2-regularized hinge loss minimized by full-batch
/// sub-gradient descent.
#[derive(Debug, Clone)]
pub struct LinearSvm {
    pub learning_rate: f64,
    pub epochs: usize,
    pub margin_penalty: f64,
    weights: Vec<f64>,
    bias: f64,
}

impl Default for LinearSvm {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 500,
            margin_penalty: 1e-3,
            weights: Vec::new(),
            bias: 0.0,
        }
    }
}

impl BinaryClassifier for LinearSvm {
    fn fit(&mut self, xs: &[Vec<f64>], ys: &[bool]) {
        let d = xs.first().map_or(0, Vec::len);
        self.weights = alloc::vec![0.0; d];
        self.bias = 0.0;
        let n = xs.len() as f64;
        let mut grad = alloc::vec![0.0; d];
        for _ in 0..self.epochs {
            for (g, w) in grad.iter_mut().zip(&self.weights) {
                *g = self.margin_penalty * w;
            }
            let mut grad_b = 0.0;
            for (x, &y) in xs.iter().zip(ys) {
                let label = if y { 1.0 } else { -1.0 };
                if label * (dot(&self.weights, x) + self.bias) < 1.0 {
                    for (g, xi) in grad.iter_mut().zip(x) {
                        *g -= label * xi / n;
                    }
                    grad_b -= label / n;
                }
            }
            for (w, g) in self.weights.iter_mut().zip(&grad) {
                *w -= self.learning_rate * g;
            }
            self.bias -= self.learning_rate * grad_b;
        }
    }

    fn predict(&self, x: &[f64]) -> bool {
        dot(&self.weights, x) + self.bias > 0.0
    }
}

/// k-nearest neighbours, Euclidean; distance ties go to the lower sample
/// index and vote ties to the negative class.
#[derive(Debug, Clone)]
pub struct KnnClassifier {
    pub k: usize,
    xs: Vec<Vec<f64>>,
    ys: Vec<bool>,
}

impl Default for KnnClassifier {
    fn default() -> Self {
        Self {
            k: 5,
            xs: Vec::new(),
            ys: Vec::new(),
        }
    }
}

impl BinaryClassifier for KnnClassifier {
    fn fit(&mut self, xs: &[Vec<f64>], ys: &[bool]) {
        self.xs = xs.to_vec();
        self.ys = ys.to_vec();
    }

    fn predict(&self, x: &[f64]) -> bool {
        let mut dist: Vec<(f64, usize)> = self
            .xs
            .iter()
            .enumerate()
            .map(|(i, s)| (s.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let k = self.k.min(dist.len());
        let pos = dist[..k].iter().filter(|(_, i)| self.ys[*i]).count();
        2 * pos > k
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(bool),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, Default)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> bool {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(c) => return *c,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

/// Random forest of depth-limited Gini trees on bootstrap samples. Each
/// node considers `max(1, ⌊√d⌋)` random features and every midpoint between
/// consecutive distinct values as a threshold.
#[derive(Debug, Clone)]
pub struct RandomForest {
    pub trees: usize,
    pub max_depth: usize,
    pub seed: u64,
    forest: Vec<Tree>,
}

impl RandomForest {
    pub fn new(seed: u64) -> Self {
        Self {
            trees: 25,
            max_depth: 4,
            seed,
            forest: Vec::new(),
        }
    }

    fn build(
        &self,
        r: &mut Rng,
        xs: &[Vec<f64>],
        ys: &[bool],
        idx: Vec<usize>,
        depth: usize,
        tree: &mut Tree,
    ) -> usize {
        let pos = idx.iter().filter(|&&i| ys[i]).count();
        let majority = 2 * pos > idx.len();
        let at = tree.nodes.len();
        tree.nodes.push(Node::Leaf(majority));
        if depth >= self.max_depth || pos == 0 || pos == idx.len() {
            return at;
        }
        let d = xs[0].len();
        let mtry = (math::floor(math::sqrt(d as f64)) as usize).max(1);
        let mut features: Vec<usize> = (0..d).collect();
        for i in 0..mtry {
            let j = i + rng::below(r, (d - i) as u32) as usize;
            features.swap(i, j);
        }
        features.truncate(mtry);

        let parent = gini(pos, idx.len());
        let mut best: Option<(f64, usize, f64)> = None;
        for &f in &features {
            let mut vals: Vec<(f64, bool)> = idx.iter().map(|&i| (xs[i][f], ys[i])).collect();
            vals.sort_by(|a, b| a.0.total_cmp(&b.0));
            let total_pos = pos;
            let mut left_pos = 0;
            for k in 0..vals.len() - 1 {
                left_pos += usize::from(vals[k].1);
                if vals[k].0 == vals[k + 1].0 {
                    continue;
                }
                let nl = k + 1;
                let nr = vals.len() - nl;
                let impurity =
                    (nl as f64 * gini(left_pos, nl) + nr as f64 * gini(total_pos - left_pos, nr)) / vals.len() as f64;
                let gain = parent - impurity;
                if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, 0.5 * (vals[k].0 + vals[k + 1].0)));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return at;
        };
        let (l, rr): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| xs[i][feature] <= threshold);
        let left = self.build(r, xs, ys, l, depth + 1, tree);
        let right = self.build(r, xs, ys, rr, depth + 1, tree);
        tree.nodes[at] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        at
    }
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

impl BinaryClassifier for RandomForest {
    fn fit(&mut self, xs: &[Vec<f64>], ys: &[bool]) {
        self.forest.clear();
        if xs.is_empty() {
            return;
        }
        let mut r = rng::seeded(self.seed);
        for _ in 0..self.trees {
            let idx: Vec<usize> = (0..xs.len())
                .map(|_| rng::below(&mut r, xs.len() as u32) as usize)
                .collect();
            let mut tree = Tree::default();
            self.build(&mut r, xs, ys, idx, 0, &mut tree);
            self.forest.push(tree);
        }
    }

    fn predict(&self, x: &[f64]) -> bool {
        let votes = self.forest.iter().filter(|t| t.predict(x)).count();
        2 * votes > self.forest.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct MiaResult {
    pub classifier_id: ClassifierId,
    /// Test accuracy of the attack.
    pub success_rate: f64,
    pub split_seed: u64,
    pub train_size: usize,
    pub test_size: usize,
}

fn classifier(id: ClassifierId, seed: u64) -> alloc::boxed::Box<dyn BinaryClassifier> {
    match id {
        ClassifierId::Lr => alloc::boxed::Box::new(LogisticRegression::default()),
        ClassifierId::Svm => alloc::boxed::Box::new(LinearSvm::default()),
        ClassifierId::Knn => alloc::boxed::Box::new(KnnClassifier::default()),
        ClassifierId::Rf => alloc::boxed::Box::new(RandomForest::new(rng::mix(seed, 0x7266))),
    }
}

/// Trains the chosen classifier on a seeded, stratified half of the
/// samples and reports accuracy on the other half.
pub fn mia_attack(
    member_feats: &[Vec<f64>],
    nonmember_feats: &[Vec<f64>],
    classifier_id: ClassifierId,
    seed: u64,
) -> Result<MiaResult> {
    for (class, feats) in [("member", member_feats), ("nonmember", nonmember_feats)] {
        if feats.len() < MIN_CLASS_SAMPLES {
            return Err(Error::ClassTooSmall {
                class,
                count: feats.len(),
                min: MIN_CLASS_SAMPLES,
            });
        }
    }
    let dim = member_feats[0].len();
    if member_feats.iter().chain(nonmember_feats).any(|f| f.len() != dim) {
        return Err(Error::InvalidArgument("feature vectors differ in length".into()));
    }
    let mut r = rng::seeded(seed);
    let (mut train_x, mut train_y, mut test_x, mut test_y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (label, feats) in [(true, member_feats), (false, nonmember_feats)] {
        let mut order: Vec<usize> = (0..feats.len()).collect();
        rng::shuffle(&mut r, &mut order);
        let half = feats.len() / 2;
        for (k, &i) in order.iter().enumerate() {
            if k < half {
                train_x.push(feats[i].clone());
                train_y.push(label);
            } else {
                test_x.push(feats[i].clone());
                test_y.push(label);
            }
        }
    }
    let mut model = classifier(classifier_id, seed);
    model.fit(&train_x, &train_y);
    let correct = test_x
        .iter()
        .zip(&test_y)
        .filter(|(x, y)| model.predict(x) == **y)
        .count();
    Ok(MiaResult {
        classifier_id,
        success_rate: correct as f64 / test_x.len() as f64,
        split_seed: seed,
        train_size: train_x.len(),
        test_size: test_x.len(),
    })
}
