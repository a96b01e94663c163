//! Evaluation harness: ROC/AUC, a hinge-loss linear classifier, stratified
//! cross-validation and the joint feature × instance sweep.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::numerics::Matrix;
use crate::selection::{feature_scores, instance_scores, select_top, Budget};

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// Decision thresholds, descending; the first is `+∞`.
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
}

/// ROC curve of `scores` for predicting `positives`, sweeping the threshold
/// down through the distinct score values. Tied scores move together, so a
/// tie between a positive and a negative counts one half.
pub fn roc_auc(scores: &[f64], positives: &[bool]) -> Result<RocCurve> {
    if scores.len() != positives.len() {
        return Err(invalid(format!("{} scores but {} labels", scores.len(), positives.len())));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(invalid(format!("score {s} is not finite")));
    }
    let n_pos = positives.iter().filter(|p| **p).count();
    let n_neg = positives.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(invalid("ROC needs at least one positive and one negative"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut thresholds = vec![f64::INFINITY];
    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positives[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        thresholds.push(s);
        fpr.push(fp as f64 / n_neg as f64);
        tpr.push(tp as f64 / n_pos as f64);
    }
    let auc = fpr
        .windows(2)
        .zip(tpr.windows(2))
        .map(|(f, t)| (f[1] - f[0]) * (t[1] + t[0]) / 2.0)
        .sum();
    Ok(RocCurve { thresholds, fpr, tpr, auc })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    /// Soft-margin constant; the L2 weight is `1 / (C · n_train)`.
    pub c: f64,
    pub iters: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { c: 1.0, iters: 2000, batch: 32, seed: 0 }
    }
}

/// Affine classifier on standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    center: Vec<f64>,
    scale: Vec<f64>,
}

impl LinearModel {
    pub fn decision(&self, row: &[f64]) -> f64 {
        row.iter()
            .zip(&self.weights)
            .enumerate()
            .map(|(j, (v, w))| w * (v - self.center[j]) / self.scale[j])
            .sum::<f64>()
            + self.bias
    }

    pub fn predict(&self, row: &[f64]) -> bool {
        self.decision(row) >= 0.0
    }
}

/// `reg/2·(||w||² + b²) + mean_i max(0, 1 − y_i(w·x_i + b))`
pub fn hinge_objective(x: &Matrix, y: &[bool], w: &[f64], b: f64, reg: f64) -> f64 {
    let n = x.nrows();
    let loss: f64 = (0..n)
        .map(|i| {
            let yi = if y[i] { 1.0 } else { -1.0 };
            let f: f64 = x.row(i).iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b;
            (1.0 - yi * f).max(0.0)
        })
        .sum();
    let norm2: f64 = w.iter().map(|v| v * v).sum::<f64>() + b * b;
    0.5 * reg * norm2 + loss / n as f64
}

const CHECKPOINT_EVERY: usize = 50;

fn two_classes(y: &[bool]) -> Result<()> {
    if y.iter().all(|v| *v) || y.iter().all(|v| !*v) {
        return Err(invalid("training data must contain both classes"));
    }
    Ok(())
}

/// Minimizes [`hinge_objective`] by mini-batch subgradient steps with step
/// size `1/(reg·t)` and projection onto the ball of radius `1/√reg`. The
/// best checkpoint (the zero vector included) is returned.
pub fn fit_hinge(x: &Matrix, y: &[bool], reg: f64, opts: &TrainOptions) -> Result<(Vec<f64>, f64)> {
    let (n, d) = x.shape();
    if y.len() != n {
        return Err(invalid(format!("{n} rows but {} labels", y.len())));
    }
    two_classes(y)?;
    if !(reg > 0.0) {
        return Err(invalid(format!("regularization {reg} must be > 0")));
    }
    let batch = opts.batch.clamp(1, n);
    let full_batch = batch == n;
    let radius = 1.0 / reg.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut best = (hinge_objective(x, y, &w, b, reg), w.clone(), b);
    let mut picks = vec![0usize; batch];
    let mut grad = vec![0.0; d];
    for t in 1..=opts.iters {
        if full_batch {
            picks.iter_mut().enumerate().for_each(|(i, p)| *p = i);
        } else {
            picks.iter_mut().for_each(|p| *p = rng.random_range(0..n));
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for &i in &picks {
            let yi = if y[i] { 1.0 } else { -1.0 };
            let row = x.row(i);
            let f: f64 = row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b;
            if yi * f < 1.0 {
                for (g, a) in grad.iter_mut().zip(row.iter()) {
                    *g += yi * a;
                }
                grad_b += yi;
            }
        }
        let eta = 1.0 / (reg * t as f64);
        let shrink = 1.0 - eta * reg;
        let step = eta / batch as f64;
        for (wj, g) in w.iter_mut().zip(&grad) {
            *wj = shrink * *wj + step * g;
        }
        b = shrink * b + step * grad_b;
        let norm = (w.iter().map(|v| v * v).sum::<f64>() + b * b).sqrt();
        if norm > radius {
            let s = radius / norm;
            w.iter_mut().for_each(|v| *v *= s);
            b *= s;
        }
        if t % CHECKPOINT_EVERY == 0 || t == opts.iters {
            let obj = hinge_objective(x, y, &w, b, reg);
            if obj < best.0 {
                best = (obj, w.clone(), b);
            }
        }
    }
    Ok((best.1, best.2))
}

/// Standardizes each feature on the training rows, then fits the hinge
/// classifier with `reg = 1/(C·n)`.
pub fn train_linear(x: &Matrix, y: &[bool], opts: &TrainOptions) -> Result<LinearModel> {
    let (n, d) = x.shape();
    if n == 0 || d == 0 {
        return Err(invalid("empty training set"));
    }
    two_classes(y)?;
    let mut center = vec![0.0; d];
    let mut scale = vec![1.0; d];
    let mut z = x.clone();
    for j in 0..d {
        let col = x.column(j);
        let mean = col.mean();
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        center[j] = mean;
        scale[j] = if sd > 0.0 { sd } else { 1.0 };
        for i in 0..n {
            z[(i, j)] = (x[(i, j)] - mean) / scale[j];
        }
    }
    let reg = 1.0 / (opts.c * n as f64);
    let (weights, bias) = fit_hinge(&z, y, reg, opts)?;
    Ok(LinearModel { weights, bias, center, scale })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvOptions {
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    pub train: TrainOptions,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions { folds: 5, repeats: 10, seed: 0, train: TrainOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub folds: usize,
    /// One accuracy per evaluated (repeat, fold) pair, in run order.
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Folds skipped because their training split held a single class.
    pub skipped: usize,
}

fn sub_matrix(x: &Matrix, rows: &[usize], cols: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), cols.len(), |i, j| x[(rows[i], cols[j])])
}

/// Stratified k-fold accuracy of the linear classifier on `instances`
/// restricted to `features`, repeated with fresh shuffles. Instances
/// without a label (outliers) are dropped.
pub fn cv_accuracy(
    x: &Matrix,
    labels: &[Option<bool>],
    features: &[usize],
    instances: &[usize],
    opts: &CvOptions,
) -> Result<CvReport> {
    let (n, m) = x.shape();
    if labels.len() != n {
        return Err(invalid(format!("{n} instances but {} labels", labels.len())));
    }
    if features.is_empty() || instances.is_empty() {
        return Err(invalid("feature and instance subsets must be nonempty"));
    }
    if opts.folds < 2 || opts.repeats == 0 {
        return Err(invalid(format!("need folds >= 2 and repeats >= 1, got {} and {}", opts.folds, opts.repeats)));
    }
    if let Some(&f) = features.iter().find(|&&f| f >= m) {
        return Err(invalid(format!("feature {f} out of range")));
    }
    if let Some(&i) = instances.iter().find(|&&i| i >= n) {
        return Err(invalid(format!("instance {i} out of range")));
    }
    let mut pos: Vec<usize> = instances.iter().copied().filter(|&i| labels[i] == Some(true)).collect();
    let mut neg: Vec<usize> = instances.iter().copied().filter(|&i| labels[i] == Some(false)).collect();
    pos.sort_unstable();
    pos.dedup();
    neg.sort_unstable();
    neg.dedup();

    let mut accuracies = Vec::new();
    let mut skipped = 0;
    for rep in 0..opts.repeats {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(rep as u64);
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        let mut fold_of = Vec::with_capacity(pos.len() + neg.len());
        for (slot, &i) in pos.iter().chain(neg.iter()).enumerate() {
            fold_of.push((i, slot % opts.folds));
        }
        for fold in 0..opts.folds {
            let test: Vec<usize> = fold_of.iter().filter(|(_, f)| *f == fold).map(|(i, _)| *i).collect();
            let train: Vec<usize> = fold_of.iter().filter(|(_, f)| *f != fold).map(|(i, _)| *i).collect();
            let ytr: Vec<bool> = train.iter().map(|&i| labels[i] == Some(true)).collect();
            if test.is_empty() || two_classes(&ytr).is_err() {
                skipped += 1;
                continue;
            }
            let topts = TrainOptions { seed: opts.train.seed ^ ((rep * opts.folds + fold) as u64), ..opts.train };
            let model = train_linear(&sub_matrix(x, &train, features), &ytr, &topts)?;
            let correct = test
                .iter()
                .filter(|&&i| {
                    let row: Vec<f64> = features.iter().map(|&j| x[(i, j)]).collect();
                    model.predict(&row) == (labels[i] == Some(true))
                })
                .count();
            accuracies.push(correct as f64 / test.len() as f64);
        }
    }
    if accuracies.is_empty() {
        return Err(invalid("no fold could be evaluated (fewer than two classes among the instances)"));
    }
    let k = accuracies.len() as f64;
    let mean = accuracies.iter().sum::<f64>() / k;
    let std = (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / k).sqrt();
    Ok(CvReport { folds: opts.folds, accuracies, mean, std, skipped })
}

/// Cross-validated accuracy over every (feature fraction, instance fraction)
/// pair, using the top features by `P` row norm and the top instances by
/// `Q` column norm. Rows follow `feature_fracs`, columns `instance_fracs`.
pub fn sweep_grid(
    x: &Matrix,
    labels: &[Option<bool>],
    p: &Matrix,
    q: &Matrix,
    feature_fracs: &[f64],
    instance_fracs: &[f64],
    opts: &CvOptions,
) -> Result<Matrix> {
    let fs = feature_scores(p);
    let is = instance_scores(q);
    if fs.len() != x.ncols() || is.len() != x.nrows() {
        return Err(invalid("selector shapes do not match the data"));
    }
    let features: Vec<Vec<usize>> =
        feature_fracs.iter().map(|&f| select_top(&fs, Budget::Fraction(f))).collect::<Result<_>>()?;
    let instances: Vec<Vec<usize>> =
        instance_fracs.iter().map(|&f| select_top(&is, Budget::Fraction(f))).collect::<Result<_>>()?;
    let cells: Vec<(usize, usize)> =
        (0..features.len()).flat_map(|r| (0..instances.len()).map(move |c| (r, c))).collect();

    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(cells.len().max(1));
    let mut results: Vec<Option<Result<f64>>> = (0..cells.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (wid, chunk) in results.chunks_mut(cells.len().div_ceil(workers).max(1)).enumerate() {
            let base = wid * cells.len().div_ceil(workers).max(1);
            let (cells, features, instances) = (&cells, &features, &instances);
            scope.spawn(move || {
                for (off, slot) in chunk.iter_mut().enumerate() {
                    let (r, c) = cells[base + off];
                    *slot = Some(cv_accuracy(x, labels, &features[r], &instances[c], opts).map(|rep| rep.mean));
                }
            });
        }
    });
    let mut grid = Matrix::zeros(features.len(), instances.len());
    for ((r, c), res) in cells.into_iter().zip(results) {
        grid[(r, c)] = res.expect("every cell is filled")?;
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// P(s_pos > s_neg) + ½·P(s_pos = s_neg) by counting all pairs.
    fn pair_auc(scores: &[f64], pos: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if pos[i] && !pos[j] {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn roc_examples() {
        let r = roc_auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(r.auc, 1.0);
        let r = roc_auc(&[0.5; 6], &[true, false, true, false, false, true]).unwrap();
        assert_eq!(r.auc, 0.5);
        assert_eq!(r.fpr, vec![0.0, 1.0]);
    }

    #[test]
    fn roc_matches_pair_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..50 {
            let scores: Vec<f64> = (0..20).map(|_| (rng.random_range(0..8) as f64) / 2.0).collect();
            let mut pos: Vec<bool> = (0..20).map(|_| rng.random::<bool>()).collect();
            pos[0] = true;
            pos[1] = false;
            let r = roc_auc(&scores, &pos).unwrap();
            assert_abs_diff_eq!(r.auc, pair_auc(&scores, &pos), epsilon = 1e-12);
            assert!(r.fpr.windows(2).all(|w| w[0] <= w[1]));
            assert!(r.tpr.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn roc_rejects_single_class() {
        assert!(roc_auc(&[1.0, 2.0], &[true, true]).is_err());
        assert!(roc_auc(&[1.0], &[true, false]).is_err());
    }

    fn toy_separable() -> (Matrix, Vec<bool>) {
        let pts = [(2.0, 1.0), (3.0, 2.5), (2.5, -1.0), (4.0, 0.0), (-2.0, 1.0), (-3.0, -2.0), (-1.5, 0.5), (-2.5, 3.0)];
        let x = Matrix::from_fn(pts.len(), 2, |i, j| if j == 0 { pts[i].0 } else { pts[i].1 });
        let y = (0..pts.len()).map(|i| i < 4).collect();
        (x, y)
    }

    #[test]
    fn separable_toy_is_learned() {
        let (x, y) = toy_separable();
        let model = train_linear(&x, &y, &TrainOptions::default()).unwrap();
        for i in 0..x.nrows() {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            assert_eq!(model.predict(&row), y[i]);
        }
    }

    #[test]
    fn flipped_labels_negate_weights() {
        let (x, y) = toy_separable();
        let flipped: Vec<bool> = y.iter().map(|v| !v).collect();
        let opts = TrainOptions { batch: 3, ..Default::default() };
        let a = train_linear(&x, &y, &opts).unwrap();
        let b = train_linear(&x, &flipped, &opts).unwrap();
        for (wa, wb) in a.weights.iter().zip(&b.weights) {
            assert_eq!(*wa, -*wb);
        }
        assert_eq!(a.bias, -b.bias);
    }

    #[test]
    fn one_class_is_rejected() {
        let (x, _) = toy_separable();
        assert!(train_linear(&x, &[true; 8], &TrainOptions::default()).is_err());
    }

    #[test]
    fn hinge_fit_near_grid_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let x = Matrix::from_fn(20, 2, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<bool> = (0..20).map(|i| x[(i, 0)] + 0.5 * x[(i, 1)] + rng.random_range(-0.4..0.4) > 0.0).collect();
        let reg = 1.0 / 20.0;
        let (w, b) = fit_hinge(&x, &y, reg, &TrainOptions::default()).unwrap();
        let got = hinge_objective(&x, &y, &w, b, reg);

        // independent objective, exhaustive grid with step 0.1 over [-4, 4]³
        let obj = |w0: f64, w1: f64, b: f64| {
            let loss: f64 = (0..20)
                .map(|i| {
                    let s = if y[i] { 1.0 } else { -1.0 };
                    (1.0 - s * (w0 * x[(i, 0)] + w1 * x[(i, 1)] + b)).max(0.0)
                })
                .sum::<f64>()
                / 20.0;
            loss + 0.5 * reg * (w0 * w0 + w1 * w1 + b * b)
        };
        let grid: Vec<f64> = (-40..=40).map(|i| i as f64 / 10.0).collect();
        let mut best = f64::INFINITY;
        for &a in &grid {
            for &c in &grid {
                for &d in &grid {
                    best = best.min(obj(a, c, d));
                }
            }
        }
        assert!(got <= 1.05 * best, "fit {got} vs grid {best}");
        assert!(got <= obj(0.0, 0.0, 0.0));
    }

    fn blobs(n: usize, seed: u64) -> (Matrix, Vec<Option<bool>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<Option<bool>> = (0..n).map(|i| Some(i % 2 == 0)).collect();
        let x = Matrix::from_fn(n, 4, |i, _| {
            let c = if i % 2 == 0 { 3.0 } else { -3.0 };
            c + rng.random_range(-1.0..1.0)
        });
        (x, labels)
    }

    #[test]
    fn cv_on_separable_data_is_perfect() {
        let (x, labels) = blobs(40, 1);
        let all_f: Vec<usize> = (0..4).collect();
        let all_i: Vec<usize> = (0..40).collect();
        let r = cv_accuracy(&x, &labels, &all_f, &all_i, &CvOptions::default()).unwrap();
        assert_eq!(r.mean, 1.0);
        assert_eq!(r.accuracies.len(), 50);
        let again = cv_accuracy(&x, &labels, &all_f, &all_i, &CvOptions::default()).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn cv_drops_unlabelled_and_skips_single_class_folds() {
        let (x, mut labels) = blobs(12, 2);
        labels[0] = None;
        let r = cv_accuracy(&x, &labels, &[0, 1], &(0..12).collect::<Vec<_>>(), &CvOptions::default()).unwrap();
        assert!(r.mean > 0.9);
        // a single positive: folds whose training split lacks it are skipped
        let r = cv_accuracy(&x, &labels, &[0], &[1, 2, 3, 5, 7], &CvOptions { folds: 2, repeats: 1, ..Default::default() });
        let r = r.unwrap();
        assert_eq!(r.skipped, 1);
        assert!(cv_accuracy(&x, &labels, &[0], &[1, 3, 5], &CvOptions::default()).is_err());
    }

    #[test]
    fn cv_mean_within_fold_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Matrix::from_fn(30, 3, |_, _| rng.random::<f64>());
        let labels: Vec<Option<bool>> = (0..30).map(|_| Some(rng.random::<bool>())).collect();
        let r = cv_accuracy(&x, &labels, &[0, 1, 2], &(0..30).collect::<Vec<_>>(), &CvOptions::default()).unwrap();
        let lo = r.accuracies.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = r.accuracies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo <= r.mean && r.mean <= hi);
    }

    #[test]
    fn grid_shape_and_full_cell() {
        let (x, labels) = blobs(30, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = Matrix::from_fn(4, 2, |_, _| rng.random::<f64>());
        let q = Matrix::from_fn(2, 30, |_, _| rng.random::<f64>());
        let opts = CvOptions { repeats: 2, ..Default::default() };
        let g = sweep_grid(&x, &labels, &p, &q, &[0.5, 1.0], &[0.5, 0.8, 1.0], &opts).unwrap();
        assert_eq!(g.shape(), (2, 3));
        let single = sweep_grid(&x, &labels, &p, &q, &[1.0], &[1.0], &opts).unwrap();
        let plain = cv_accuracy(&x, &labels, &[0, 1, 2, 3], &(0..30).collect::<Vec<_>>(), &opts).unwrap();
        assert_eq!(single[(0, 0)], plain.mean);
        assert_eq!(single[(0, 0)], g[(1, 2)]);
    }
}
