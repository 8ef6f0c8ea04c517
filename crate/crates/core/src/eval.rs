//! Ridge classifiers over explicit codes and precomputed Grams, accuracy and
//! bandwidth cross-validation.
//!
//! Both classifiers regress one-hot targets with an unregularized bias. The
//! bias is absorbed by centering: features for [`ridge_train`], the Gram
//! (`HKH`) for [`kridge_train`]. With a linear-kernel Gram the two produce the
//! same scores up to rounding.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::DescriptorSet;
use crate::encode::VladCode;
use crate::error::{Error, Result};
use crate::geometry::{CrossGram, GramMatrix};
use crate::linalg::{cholesky, cholesky_solve_in_place, Matrix};
use crate::rng::{derive_seed, Fingerprint, SeededRng};

pub const DEFAULT_LAMBDA: f64 = 1e-3;
pub const DEFAULT_FOLDS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    /// `C × (D + 1)`; the last column is the bias.
    pub weights: Matrix,
    pub lambda: f64,
    /// Sorted class labels, one per weight row.
    pub classes: Vec<u32>,
}

impl RidgeModel {
    pub fn dim(&self) -> usize {
        self.weights.cols() - 1
    }

    /// Class scores for one feature vector.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        Ok((0..self.classes.len())
            .map(|c| {
                let w = self.weights.row(c);
                w[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[d]
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelRidgeModel {
    /// `N × C` dual coefficients against the centered Gram.
    pub alpha: Matrix,
    pub lambda: f64,
    pub classes: Vec<u32>,
    /// Training item ids in Gram order.
    pub ids: Vec<u32>,
    /// Per-class target means, added back as the bias.
    pub target_means: Vec<f64>,
    /// Column means of the training Gram and their overall mean.
    pub gram_col_means: Vec<f64>,
    pub gram_mean: f64,
}

impl KernelRidgeModel {
    pub fn ids_fingerprint(&self) -> u64 {
        ids_fingerprint(&self.ids)
    }
}

fn ids_fingerprint(ids: &[u32]) -> u64 {
    let mut h = Fingerprint::default();
    for &id in ids {
        h.write(&id.to_le_bytes());
    }
    h.finish()
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda > 0.0 {
        Ok(())
    } else {
        Err(Error::param(
            "lambda",
            format!("must be positive, got {lambda}"),
        ))
    }
}

/// Sorted distinct classes and the centered one-hot target matrix.
fn targets(labels: &[u32]) -> Result<(Vec<u32>, Matrix, Vec<f64>)> {
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::param("labels", "need at least two classes"));
    }
    let n = labels.len();
    let mut y = Matrix::zeros(n, classes.len());
    for (i, l) in labels.iter().enumerate() {
        let c = classes.binary_search(l).expect("label listed");
        y[(i, c)] = 1.0;
    }
    let means: Vec<f64> = (0..classes.len())
        .map(|c| (0..n).map(|i| y[(i, c)]).sum::<f64>() / n as f64)
        .collect();
    for i in 0..n {
        for (c, m) in means.iter().enumerate() {
            y[(i, c)] -= m;
        }
    }
    Ok((classes, y, means))
}

/// Solves `(A + λI) X = B` for symmetric PSD `A`.
fn regularized_solve(mut a: Matrix, lambda: f64, mut b: Matrix) -> Result<Matrix> {
    for i in 0..a.rows() {
        a[(i, i)] += lambda;
    }
    let l = cholesky(&a).map_err(|_| Error::Singular)?;
    cholesky_solve_in_place(&l, &mut b);
    Ok(b)
}

fn argmax_class(scores: &[f64], classes: &[u32]) -> u32 {
    let mut best = 0;
    for (c, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = c;
        }
    }
    classes[best]
}

/// Ridge regression on the rows of `x` (one sample per row).
///
/// Solves `(XcᵀXc + λI) W = XcᵀYc` on centered data, in dual form when the
/// feature dimension exceeds the sample count.
pub fn ridge_train_matrix(x: &Matrix, labels: &[u32], lambda: f64) -> Result<RidgeModel> {
    check_lambda(lambda)?;
    let (n, d) = (x.rows(), x.cols());
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    if x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let (classes, yc, ymeans) = targets(labels)?;
    let xmeans: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| x[(i, j)]).sum::<f64>() / n as f64)
        .collect();
    let xc = Matrix::from_fn(n, d, |i, j| x[(i, j)] - xmeans[j]);
    // d × C
    let w = if d <= n {
        regularized_solve(xc.t_matmul(&xc), lambda, xc.t_matmul(&yc))?
    } else {
        let a = regularized_solve(xc.matmul(&xc.transpose()), lambda, yc)?;
        xc.t_matmul(&a)
    };
    let c = classes.len();
    let mut weights = Matrix::zeros(c, d + 1);
    for k in 0..c {
        let mut bias = ymeans[k];
        for j in 0..d {
            weights[(k, j)] = w[(j, k)];
            bias -= w[(j, k)] * xmeans[j];
        }
        weights[(k, d)] = bias;
    }
    if weights.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(RidgeModel {
        weights,
        lambda,
        classes,
    })
}

fn codes_matrix(codes: &[VladCode]) -> Result<Matrix> {
    let first = codes.first().ok_or(Error::Empty("codes"))?;
    let d = first.len();
    let mut data = Vec::with_capacity(codes.len() * d);
    for code in codes {
        if code.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: code.len(),
            });
        }
        data.extend(code.blocks.iter().flatten());
    }
    Ok(Matrix::from_vec(codes.len(), d, data))
}

pub fn ridge_train(codes: &[VladCode], labels: &[u32], lambda: f64) -> Result<RidgeModel> {
    ridge_train_matrix(&codes_matrix(codes)?, labels, lambda)
}

/// Argmax class per row; ties go to the lowest class index.
pub fn ridge_predict_matrix(model: &RidgeModel, x: &Matrix) -> Result<Vec<u32>> {
    (0..x.rows())
        .map(|i| Ok(argmax_class(&model.scores(x.row(i))?, &model.classes)))
        .collect()
}

pub fn ridge_predict(model: &RidgeModel, codes: &[VladCode]) -> Result<Vec<u32>> {
    codes
        .iter()
        .map(|c| Ok(argmax_class(&model.scores(&c.flatten())?, &model.classes)))
        .collect()
}

/// Kernel ridge on a training Gram: `(HKH + λI) A = Yc`.
pub fn kridge_train(gram: &GramMatrix, labels: &[u32], lambda: f64) -> Result<KernelRidgeModel> {
    check_lambda(lambda)?;
    let n = gram.len();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    let k = &gram.values;
    if k.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let (classes, yc, target_means) = targets(labels)?;
    let col_means: Vec<f64> = (0..n)
        .map(|j| (0..n).map(|i| k[(i, j)]).sum::<f64>() / n as f64)
        .collect();
    let mean = col_means.iter().sum::<f64>() / n as f64;
    let kc = Matrix::from_fn(n, n, |i, j| k[(i, j)] - col_means[i] - col_means[j] + mean);
    let alpha = regularized_solve(kc, lambda, yc)?;
    Ok(KernelRidgeModel {
        alpha,
        lambda,
        classes,
        ids: gram.ids.clone(),
        target_means,
        gram_col_means: col_means,
        gram_mean: mean,
    })
}

/// Predicts from a cross-Gram whose columns are the training items in
/// training order.
pub fn kridge_predict(model: &KernelRidgeModel, cross: &CrossGram) -> Result<Vec<u32>> {
    if ids_fingerprint(&cross.col_ids) != model.ids_fingerprint() {
        return Err(Error::FingerprintMismatch {
            map: ids_fingerprint(&cross.col_ids),
            codebook: model.ids_fingerprint(),
        });
    }
    let n = model.ids.len();
    let c = model.classes.len();
    let kx = &cross.values;
    let mut out = Vec::with_capacity(kx.rows());
    let mut centered = vec![0.0; n];
    for r in 0..kx.rows() {
        let row = kx.row(r);
        let row_mean = row.iter().sum::<f64>() / n as f64;
        for j in 0..n {
            centered[j] = row[j] - row_mean - model.gram_col_means[j] + model.gram_mean;
        }
        let scores: Vec<f64> = (0..c)
            .map(|k| {
                model.target_means[k]
                    + (0..n)
                        .map(|j| centered[j] * model.alpha[(j, k)])
                        .sum::<f64>()
            })
            .collect();
        out.push(argmax_class(&scores, &model.classes));
    }
    Ok(out)
}

/// Fraction of positions where `pred` and `truth` agree.
pub fn accuracy(pred: &[u32], truth: &[u32]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Empty("label sequence"));
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Stratified fold index per set: each class is shuffled with the seeded
/// generator and dealt round-robin across folds.
pub fn fold_assignment(labels: &[u32], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 || folds > labels.len() {
        return Err(Error::param(
            "folds",
            format!("need 2 <= folds <= {}, got {folds}", labels.len()),
        ));
    }
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut rng = SeededRng::new(seed);
    let mut out = vec![0; labels.len()];
    let mut next = 0;
    for &c in &classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        rng.shuffle(&mut idx);
        for i in idx {
            out[i] = next % folds;
            next += 1;
        }
    }
    Ok(out)
}

/// Picks the grid value with the best mean fold accuracy; ties go to the
/// smallest σ. `score(σ, train, validation, fold_seed)` returns the
/// validation accuracy of one fold.
pub fn cv_bandwidth_with<F>(
    sets: &[DescriptorSet],
    grid: &[f64],
    folds: usize,
    seed: u64,
    mut score: F,
) -> Result<f64>
where
    F: FnMut(f64, &[DescriptorSet], &[DescriptorSet], u64) -> Result<f64>,
{
    if grid.is_empty() {
        return Err(Error::Empty("bandwidth grid"));
    }
    if let Some(&bad) = grid.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::param(
            "sigma",
            format!("grid values must be positive, got {bad}"),
        ));
    }
    let labels: Vec<u32> = sets.iter().map(|s| s.label).collect();
    let assignment = fold_assignment(&labels, folds, seed)?;
    let mut classes = labels.clone();
    classes.sort_unstable();
    classes.dedup();
    let mut splits = Vec::with_capacity(folds);
    for f in 0..folds {
        let train: Vec<DescriptorSet> = sets
            .iter()
            .zip(&assignment)
            .filter(|(_, &a)| a != f)
            .map(|(s, _)| s.clone())
            .collect();
        let val: Vec<DescriptorSet> = sets
            .iter()
            .zip(&assignment)
            .filter(|(_, &a)| a == f)
            .map(|(s, _)| s.clone())
            .collect();
        for &c in &classes {
            if !train.iter().any(|s| s.label == c) {
                return Err(Error::FoldMissingClass { fold: f, class: c });
            }
        }
        splits.push((train, val));
    }
    let mut order: Vec<f64> = grid.to_vec();
    order.sort_by(f64::total_cmp);
    order.dedup();
    let mut best = (order[0], f64::NEG_INFINITY);
    for &sigma in &order {
        let mut total = 0.0;
        for (f, (train, val)) in splits.iter().enumerate() {
            total += score(sigma, train, val, derive_seed(seed, f as u64))?;
        }
        let mean = total / folds as f64;
        log::debug!("cv sigma={sigma} mean accuracy={mean:.4}");
        if mean > best.1 {
            best = (sigma, mean);
        }
    }
    Ok(best.0)
}

/// [`cv_bandwidth_with`] scoring each fold with the configured pipeline.
pub fn cv_bandwidth(
    sets: &[DescriptorSet],
    grid: &[f64],
    folds: usize,
    seed: u64,
    config: &crate::pipeline::PipelineConfig,
) -> Result<f64> {
    cv_bandwidth_with(sets, grid, folds, seed, |sigma, train, val, fold_seed| {
        let mut cfg = config.clone();
        cfg.sigma = sigma;
        cfg.seed = fold_seed;
        Ok(crate::pipeline::run(&cfg, train, val)?.accuracy)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Descriptor, Geometry};

    fn separable() -> (Matrix, Vec<u32>) {
        let pts = [
            [0.0, 0.1],
            [0.2, -0.1],
            [-0.1, 0.0],
            [3.0, 3.1],
            [2.9, 3.0],
            [3.2, 2.8],
            [0.0, 6.0],
            [0.1, 6.2],
        ];
        let x = Matrix::from_fn(pts.len(), 2, |i, j| pts[i][j]);
        (x, vec![0, 0, 0, 1, 1, 1, 2, 2])
    }

    #[test]
    fn separable_training_accuracy() {
        let (x, y) = separable();
        let m = ridge_train_matrix(&x, &y, 1e-6).unwrap();
        assert_eq!(ridge_predict_matrix(&m, &x).unwrap(), y);
    }

    #[test]
    fn huge_lambda_falls_back_to_bias() {
        let (x, y) = separable();
        let m = ridge_train_matrix(&x, &y, 1e9).unwrap();
        for k in 0..3 {
            assert!(m.weights.row(k)[..2].iter().all(|w| w.abs() < 1e-6));
        }
        let zero = Matrix::zeros(1, 2);
        // classes 0 and 1 tie on frequency; the lowest index wins
        assert_eq!(ridge_predict_matrix(&m, &zero).unwrap(), vec![0]);
    }

    #[test]
    fn duplicated_set_with_doubled_lambda_is_identical() {
        let (x, y) = separable();
        let n = x.rows();
        let x2 = Matrix::from_fn(2 * n, 2, |i, j| x[(i % n, j)]);
        let y2: Vec<u32> = (0..2 * n).map(|i| y[i % n]).collect();
        let a = ridge_train_matrix(&x, &y, 0.5).unwrap();
        let b = ridge_train_matrix(&x2, &y2, 1.0).unwrap();
        for (p, q) in a.weights.as_slice().iter().zip(b.weights.as_slice()) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    fn linear_gram(x: &Matrix) -> GramMatrix {
        let g = x.matmul(&x.transpose());
        GramMatrix::new(g, (0..x.rows() as u32).collect()).unwrap()
    }

    #[test]
    fn primal_dual_agree() {
        let mut rng = SeededRng::new(7);
        for &(n, d) in &[(30, 4), (12, 40)] {
            let x = Matrix::from_fn(n, d, |_, _| rng.normal());
            let y: Vec<u32> = (0..n).map(|i| (i % 3) as u32).collect();
            let t = Matrix::from_fn(10, d, |_, _| rng.normal());
            let primal = ridge_train_matrix(&x, &y, 0.1).unwrap();
            let dual = kridge_train(&linear_gram(&x), &y, 0.1).unwrap();
            let cross = CrossGram::new(
                t.matmul(&x.transpose()),
                (100..110).collect(),
                (0..n as u32).collect(),
            )
            .unwrap();
            assert_eq!(
                ridge_predict_matrix(&primal, &t).unwrap(),
                kridge_predict(&dual, &cross).unwrap()
            );
        }
    }

    #[test]
    fn identity_gram_recovers_labels() {
        let n = 6;
        let g = GramMatrix::new(Matrix::identity(n), (0..n as u32).collect()).unwrap();
        let y = vec![0, 1, 2, 0, 1, 2];
        let m = kridge_train(&g, &y, 1e-8).unwrap();
        let cross = CrossGram::new(Matrix::identity(n), g.ids.clone(), g.ids.clone()).unwrap();
        assert_eq!(kridge_predict(&m, &cross).unwrap(), y);
    }

    #[test]
    fn diagonal_shift_equals_lambda_shift() {
        let mut rng = SeededRng::new(9);
        let x = Matrix::from_fn(15, 3, |_, _| rng.normal());
        let y: Vec<u32> = (0..15).map(|i| (i % 2) as u32).collect();
        let g = linear_gram(&x);
        let mut shifted = g.values.clone();
        for i in 0..15 {
            shifted[(i, i)] += 0.3;
        }
        let a = kridge_train(&GramMatrix::new(shifted, g.ids.clone()).unwrap(), &y, 0.2).unwrap();
        let b = kridge_train(&g, &y, 0.5).unwrap();
        for (p, q) in a.alpha.as_slice().iter().zip(b.alpha.as_slice()) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn cross_gram_column_order_checked() {
        let (x, y) = separable();
        let m = kridge_train(&linear_gram(&x), &y, 0.1).unwrap();
        let mut cols: Vec<u32> = (0..8).collect();
        cols.swap(0, 1);
        let cross = CrossGram::new(x.matmul(&x.transpose()), (0..8).collect(), cols).unwrap();
        assert!(matches!(
            kridge_predict(&m, &cross),
            Err(Error::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 0.75);
    }

    fn labelled_sets(per_class: usize, classes: u32) -> Vec<DescriptorSet> {
        let g = Geometry::euclidean(1).unwrap();
        let mut out = Vec::new();
        for c in 0..classes {
            for i in 0..per_class {
                let id = c * 100 + i as u32;
                let d = Descriptor::from_values(g, vec![c as f64]).unwrap();
                out.push(DescriptorSet::new(id, c, vec![d]).unwrap());
            }
        }
        out
    }

    #[test]
    fn cv_picks_best_and_smallest_on_ties() {
        let sets = labelled_sets(4, 2);
        let perfect_at_two = |s: f64, _: &[DescriptorSet], _: &[DescriptorSet], _| {
            Ok(if s == 2.0 { 1.0 } else { 0.5 })
        };
        assert_eq!(
            cv_bandwidth_with(&sets, &[0.5, 2.0, 8.0], 2, 0, perfect_at_two).unwrap(),
            2.0
        );
        let flat = |_: f64, _: &[DescriptorSet], _: &[DescriptorSet], _| Ok(0.5);
        assert_eq!(
            cv_bandwidth_with(&sets, &[4.0, 1.0, 3.0], 2, 0, flat).unwrap(),
            1.0
        );
        assert_eq!(cv_bandwidth_with(&sets, &[3.0], 2, 0, flat).unwrap(), 3.0);
    }

    #[test]
    fn cv_fold_missing_class() {
        let mut sets = labelled_sets(4, 2);
        sets.truncate(5);
        let flat = |_: f64, _: &[DescriptorSet], _: &[DescriptorSet], _| Ok(0.5);
        assert!(matches!(
            cv_bandwidth_with(&sets, &[1.0], 2, 0, flat),
            Err(Error::FoldMissingClass { class: 1, .. })
        ));
    }

    #[test]
    fn folds_are_stratified_and_seeded() {
        let labels = vec![0, 0, 0, 1, 1, 1, 2, 2, 2];
        let a = fold_assignment(&labels, 3, 4).unwrap();
        assert_eq!(a, fold_assignment(&labels, 3, 4).unwrap());
        for f in 0..3 {
            assert_eq!(a.iter().filter(|&&x| x == f).count(), 3);
        }
    }
}
