//! Quadratic binding probe `σ(x·W·yᵀ + b)` with symmetric `W`.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::archive::{self, Metadata, TensorMap};
use crate::error::{Error, Result};
use crate::seed;
use crate::stimulus::{patch_labels, PatchGrid};
use crate::tensor::{dgemm, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeParams {
    pub d: usize,
    /// Row-major `d×d`.
    pub w: Vec<f64>,
    pub b: f64,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + eᶻ)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// `W ← (W + Wᵀ)/2` in place.
pub fn symmetrize(w: &mut [f64], d: usize) {
    for i in 0..d {
        for j in i + 1..d {
            let m = 0.5 * (w[i * d + j] + w[j * d + i]);
            w[i * d + j] = m;
            w[j * d + i] = m;
        }
    }
}

impl ProbeParams {
    pub fn zeros(d: usize) -> Self {
        Self { d, w: vec![0.0; d * d], b: 0.0 }
    }

    pub fn is_symmetric(&self) -> bool {
        let d = self.d;
        (0..d).all(|i| (0..i).all(|j| self.w[i * d + j] == self.w[j * d + i]))
    }

    pub fn logit(&self, x: &[f32], y: &[f32]) -> Result<f64> {
        if x.len() != self.d || y.len() != self.d {
            return Err(Error::DimensionMismatch(format!(
                "probe expects {}-dim inputs, got {} and {}",
                self.d,
                x.len(),
                y.len()
            )));
        }
        // Pairing the (i, j) and (j, i) terms makes the result exactly
        // invariant under swapping x and y whenever W is symmetric.
        let d = self.d;
        let (x, y): (Vec<f64>, Vec<f64>) = (x.iter().map(|v| *v as f64).collect(), y.iter().map(|v| *v as f64).collect());
        let mut s = 0.0;
        for i in 0..d {
            let row = &self.w[i * d..(i + 1) * d];
            let mut acc = row[i] * (x[i] * y[i]);
            for j in i + 1..d {
                acc += row[j] * (x[i] * y[j]) + self.w[j * d + i] * (x[j] * y[i]);
            }
            s += acc;
        }
        Ok(s + self.b)
    }

    /// Probability that `x` and `y` belong to the same object.
    pub fn forward(&self, x: &[f32], y: &[f32]) -> Result<f64> {
        Ok(sigmoid(self.logit(x, y)?))
    }

    /// Parameters rounded through `f32`, i.e. exactly what a checkpoint holds.
    pub fn quantized(&self) -> Self {
        Self {
            d: self.d,
            w: self.w.iter().map(|v| *v as f32 as f64).collect(),
            b: self.b as f32 as f64,
        }
    }

    pub fn to_tensors(&self) -> TensorMap {
        let mut t = TensorMap::new();
        t.insert(
            "W".into(),
            Tensor::new(vec![self.d, self.d], self.w.iter().map(|v| *v as f32).collect()).expect("sized"),
        );
        t.insert("b".into(), Tensor::new(vec![1], vec![self.b as f32]).expect("sized"));
        t
    }

    pub fn from_tensors(t: &TensorMap) -> Result<Self> {
        let w = t.get("W").ok_or_else(|| Error::MissingTensor("W".into()))?;
        let b = t.get("b").ok_or_else(|| Error::MissingTensor("b".into()))?;
        let d = w.shape()[0];
        if w.shape() != [d, d] || b.shape() != [1] {
            return Err(Error::ShapeMismatch {
                name: "W".into(),
                expected: vec![d, d],
                found: w.shape().to_vec(),
            });
        }
        Ok(Self {
            d,
            w: w.data().iter().map(|v| *v as f64).collect(),
            b: b.data()[0] as f64,
        })
    }

    pub fn save(&self, path: &Path, metadata: &Metadata) -> Result<()> {
        archive::write(path, &self.to_tensors(), metadata)
    }

    pub fn load(path: &Path) -> Result<(Self, Metadata)> {
        let (t, m) = archive::read(path)?;
        Ok((Self::from_tensors(&t)?, m))
    }
}

/// Two object-containing patches and whether they share an object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairIndex {
    pub a: usize,
    pub b: usize,
    pub same: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub x: Vec<f32>,
    pub y: Vec<f32>,
    pub same: bool,
    pub stimulus_id: String,
    pub layer: usize,
}

/// Draws patch pairs from a two-object grid.
///
/// Only patches owned by exactly one object are used. Same-object pairs are
/// unordered pairs within an object; different-object pairs take one patch
/// from each. With `balance`, class sizes differ by at most one; with
/// `max_pairs`, at most that many pairs are returned. An object without
/// patches yields [`Error::Skipped`].
pub fn sample_pair_indices(grid: &PatchGrid, seed: u64, max_pairs: Option<usize>, balance: bool) -> Result<Vec<PairIndex>> {
    if grid.object_patches.len() != 2 {
        return Err(Error::InvalidParam(format!(
            "pair sampling needs exactly two objects, got {}",
            grid.object_patches.len()
        )));
    }
    let labels = patch_labels(grid);
    let owned: Vec<Vec<usize>> = (0..2)
        .map(|k| grid.object_patches[k].iter().copied().filter(|&p| labels[p] == Some(k)).collect())
        .collect();
    if owned.iter().any(|o| o.is_empty()) {
        return Err(Error::Skipped("an object owns no patch of its own".into()));
    }
    let mut same = Vec::new();
    for o in &owned {
        for i in 0..o.len() {
            for j in i + 1..o.len() {
                same.push(PairIndex { a: o[i], b: o[j], same: true });
            }
        }
    }
    let mut diff = Vec::new();
    for &a in &owned[0] {
        for &b in &owned[1] {
            diff.push(PairIndex { a, b, same: false });
        }
    }
    let mut rng = seed::rng(seed);
    same.shuffle(&mut rng);
    diff.shuffle(&mut rng);
    let (n_same, n_diff) = if balance {
        let base = same.len().min(diff.len());
        let (mut s, mut d) = ((base + 1).min(same.len()), (base + 1).min(diff.len()));
        if let Some(m) = max_pairs {
            if s + d > m {
                s = s.min(m.div_ceil(2));
                d = d.min(m / 2);
            }
        }
        (s, d)
    } else {
        match max_pairs {
            Some(m) if same.len() + diff.len() > m => {
                let mut all: Vec<PairIndex> = same.into_iter().chain(diff).collect();
                all.shuffle(&mut rng);
                all.truncate(m);
                return Ok(all);
            }
            _ => (same.len(), diff.len()),
        }
    };
    same.truncate(n_same);
    diff.truncate(n_diff);
    Ok(same.into_iter().chain(diff).collect())
}

/// Looks up pair activations in a `[tokens, width]` residual-stream tensor.
pub fn gather_pairs(acts: &Tensor, patch_offset: usize, pairs: &[PairIndex], stimulus_id: &str, layer: usize) -> Vec<PairSample> {
    pairs
        .iter()
        .map(|p| PairSample {
            x: acts.row(patch_offset + p.a).to_vec(),
            y: acts.row(patch_offset + p.b).to_vec(),
            same: p.same,
            stimulus_id: stimulus_id.to_string(),
            layer,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Learning-rate factor applied at each milestone epoch.
    pub gamma: f64,
    pub milestones: Vec<usize>,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            gamma: 0.2,
            milestones: vec![10, 15],
            batch_size: 256,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.epochs > 0
            && self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && self.gamma > 0.0
            && self.gamma < 1.0
            && self.batch_size > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("invalid probe training config: {self:?}")))
        }
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.learning_rate * self.gamma.powi(passed as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean cross-entropy over the training set after the epoch.
    pub loss: f64,
    pub accuracy: f64,
}

/// Regularized objective `mean BCE + wd/2·(‖W‖² + b²)` and its gradient
/// with respect to `(W, b)`.
pub fn objective_and_grad(params: &ProbeParams, batch: &[&PairSample], weight_decay: f64) -> (f64, Vec<f64>, f64) {
    let d = params.d;
    let n = batch.len();
    let mut xs = Vec::with_capacity(n * d);
    let mut ys = Vec::with_capacity(n * d);
    for s in batch {
        xs.extend(s.x.iter().map(|v| *v as f64));
        ys.extend(s.y.iter().map(|v| *v as f64));
    }
    // Z = X·W, logits zᵢ = Zᵢ·Yᵢ + b.
    let mut xw = vec![0.0; n * d];
    dgemm(n, d, d, 1.0, &xs, false, &params.w, false, &mut xw);
    let mut loss = 0.0;
    let mut g = vec![0.0; n];
    for i in 0..n {
        let z: f64 = xw[i * d..(i + 1) * d].iter().zip(&ys[i * d..(i + 1) * d]).map(|(a, b)| a * b).sum::<f64>() + params.b;
        let y = if batch[i].same { 1.0 } else { 0.0 };
        loss += softplus(z) - y * z;
        g[i] = (sigmoid(z) - y) / n as f64;
    }
    loss /= n as f64;
    // dW = Σ gᵢ xᵢᵀ yᵢ = (diag(g)·X)ᵀ·Y.
    for i in 0..n {
        for v in &mut xs[i * d..(i + 1) * d] {
            *v *= g[i];
        }
    }
    let mut gw = vec![0.0; d * d];
    dgemm(d, n, d, 1.0, &xs, true, &ys, false, &mut gw);
    let mut gb: f64 = g.iter().sum();
    let reg = params.w.iter().map(|v| v * v).sum::<f64>() + params.b * params.b;
    for (gw, w) in gw.iter_mut().zip(&params.w) {
        *gw += weight_decay * w;
    }
    gb += weight_decay * params.b;
    (loss + 0.5 * weight_decay * reg, gw, gb)
}

fn check_pairs(pairs: &[PairSample]) -> Result<usize> {
    let first = pairs.first().ok_or_else(|| Error::Empty("no probe pairs".into()))?;
    let d = first.x.len();
    if pairs.iter().any(|p| p.x.len() != d || p.y.len() != d) {
        return Err(Error::DimensionMismatch("probe pairs have mixed dimensions".into()));
    }
    Ok(d)
}

/// Mean cross-entropy and accuracy of `params` on `pairs`.
fn loss_and_accuracy(params: &ProbeParams, pairs: &[PairSample]) -> (f64, f64) {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for p in pairs {
        let z = params.logit(&p.x, &p.y).expect("checked dims");
        let y = if p.same { 1.0 } else { 0.0 };
        loss += softplus(z) - y * z;
        if (sigmoid(z) > 0.5) == p.same {
            correct += 1;
        }
    }
    (loss / pairs.len() as f64, correct as f64 / pairs.len() as f64)
}

/// Trains from `W = 0, b = 0` with Adam (coupled L2 decay), step decay of
/// the learning rate, shuffled mini-batches and re-symmetrization of `W`
/// after every step.
pub fn train_probe(pairs: &[PairSample], cfg: &TrainConfig) -> Result<(ProbeParams, Vec<EpochLog>)> {
    cfg.validate()?;
    let d = check_pairs(pairs)?;
    let n_same = pairs.iter().filter(|p| p.same).count();
    if n_same == 0 || n_same == pairs.len() {
        return Err(Error::InvalidParam("probe training needs both classes".into()));
    }
    let mut params = ProbeParams::zeros(d);
    let (mut m_w, mut v_w) = (vec![0.0; d * d], vec![0.0; d * d]);
    let (mut m_b, mut v_b) = (0.0f64, 0.0f64);
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = seed::rng(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PairSample> = chunk.iter().map(|&i| &pairs[i]).collect();
            let (_, gw, gb) = objective_and_grad(&params, &batch, cfg.weight_decay);
            step += 1;
            let bc1 = 1.0 - cfg.beta1.powi(step);
            let bc2 = 1.0 - cfg.beta2.powi(step);
            for i in 0..d * d {
                m_w[i] = cfg.beta1 * m_w[i] + (1.0 - cfg.beta1) * gw[i];
                v_w[i] = cfg.beta2 * v_w[i] + (1.0 - cfg.beta2) * gw[i] * gw[i];
                params.w[i] -= lr * (m_w[i] / bc1) / ((v_w[i] / bc2).sqrt() + cfg.eps);
            }
            m_b = cfg.beta1 * m_b + (1.0 - cfg.beta1) * gb;
            v_b = cfg.beta2 * v_b + (1.0 - cfg.beta2) * gb * gb;
            params.b -= lr * (m_b / bc1) / ((v_b / bc2).sqrt() + cfg.eps);
            symmetrize(&mut params.w, d);
        }
        let (loss, accuracy) = loss_and_accuracy(&params, pairs);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("probe loss diverged in epoch {epoch}")));
        }
        history.push(EpochLog { epoch, lr, loss, accuracy });
    }
    Ok((params, history))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub n_same: usize,
    pub accuracy: f64,
    /// Accuracy on same-object pairs (NaN if none).
    pub same_accuracy: f64,
    /// Accuracy on different-object pairs (NaN if none).
    pub different_accuracy: f64,
    pub majority_baseline: f64,
}

/// Scores `params` at threshold 0.5: "same" iff `p > 0.5`.
pub fn eval_probe(params: &ProbeParams, pairs: &[PairSample]) -> Result<EvalReport> {
    check_pairs(pairs)?;
    let (mut ok_same, mut ok_diff, mut n_same) = (0usize, 0usize, 0usize);
    for p in pairs {
        let pred = params.forward(&p.x, &p.y)? > 0.5;
        if p.same {
            n_same += 1;
            ok_same += usize::from(pred);
        } else {
            ok_diff += usize::from(!pred);
        }
    }
    let n = pairs.len();
    let n_diff = n - n_same;
    let ratio = |a: usize, b: usize| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
    Ok(EvalReport {
        n,
        n_same,
        accuracy: (ok_same + ok_diff) as f64 / n as f64,
        same_accuracy: ratio(ok_same, n_same),
        different_accuracy: ratio(ok_diff, n_diff),
        majority_baseline: n_same.max(n_diff) as f64 / n as f64,
    })
}

/// `exp(H(p))` for the normalized singular values `p` of `W`; 0 for `W = 0`.
pub fn effective_rank(w: &[f64], d: usize) -> Result<f64> {
    if w.len() != d * d || w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("effective rank needs a finite square matrix".into()));
    }
    let sv = nalgebra::DMatrix::from_row_slice(d, d, w).singular_values();
    let total: f64 = sv.iter().sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    let h: f64 = sv
        .iter()
        .map(|s| s / total)
        .filter(|p| *p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    Ok(h.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stimulus::Mask;
    use proptest::prelude::*;
    use rand::Rng;

    fn sample(x: Vec<f32>, y: Vec<f32>, same: bool) -> PairSample {
        PairSample { x, y, same, stimulus_id: String::new(), layer: 0 }
    }

    #[test]
    fn forward_hand_values() {
        let p = ProbeParams::zeros(3);
        assert_eq!(p.forward(&[1.0, 2.0, 3.0], &[-1.0, 0.0, 5.0]).unwrap(), 0.5);
        let mut id = ProbeParams::zeros(3);
        for i in 0..3 {
            id.w[i * 3 + i] = 1.0;
        }
        let v = id.forward(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
        assert!((v - 0.731_058_578_6).abs() < 1e-9);
        assert!(id.forward(&[1.0], &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn symmetrize_cases() {
        let mut s = vec![1.0, 2.0, 2.0, 3.0];
        symmetrize(&mut s, 2);
        assert_eq!(s, vec![1.0, 2.0, 2.0, 3.0]);
        let mut a = vec![0.0, 2.0, -2.0, 0.0];
        symmetrize(&mut a, 2);
        assert_eq!(a, vec![0.0; 4]);
    }

    proptest! {
        #[test]
        fn symmetrized_form_is_average_of_form_and_transpose(
            w in proptest::collection::vec(-2f64..2.0, 16),
            x in proptest::collection::vec(-2f32..2.0, 4),
            y in proptest::collection::vec(-2f32..2.0, 4),
        ) {
            let form = |m: &[f64]| -> f64 {
                (0..4).map(|i| (0..4).map(|j| x[i] as f64 * m[i * 4 + j] * y[j] as f64).sum::<f64>()).sum()
            };
            let wt: Vec<f64> = (0..16).map(|k| w[(k % 4) * 4 + k / 4]).collect();
            let mut ws = w.clone();
            symmetrize(&mut ws, 4);
            prop_assert!((form(&ws) - 0.5 * (form(&w) + form(&wt))).abs() < 1e-9);
            let mut twice = ws.clone();
            symmetrize(&mut twice, 4);
            prop_assert_eq!(&twice, &ws);
            let p = ProbeParams { d: 4, w: ws, b: 0.3 };
            prop_assert_eq!(p.forward(&x, &y).unwrap(), p.forward(&y, &x).unwrap());
        }
    }

    fn grid_from(objs: &[&[(u32, u32)]], patch: u32) -> PatchGrid {
        let masks: Vec<Mask> = objs
            .iter()
            .map(|cells| {
                Mask::from_fn(224, 224, |x, y| cells.iter().any(|&(r, c)| y / patch == r && x / patch == c))
            })
            .collect();
        PatchGrid::from_masks(&masks, 224, 224, patch).unwrap()
    }

    #[test]
    fn one_patch_objects_give_one_different_pair() {
        let g = grid_from(&[&[(1, 1)], &[(4, 4)]], 32);
        let pairs = sample_pair_indices(&g, 0, None, true).unwrap();
        assert_eq!(pairs.len(), 1);
        assert!(!pairs[0].same);
    }

    #[test]
    fn two_patch_objects_match_enumeration() {
        let g = grid_from(&[&[(1, 1), (1, 2)], &[(4, 4), (5, 4)]], 32);
        // Oracle: enumerate all unordered pairs of owned patches.
        let owned: Vec<(usize, usize)> = (0..g.n_patches())
            .filter_map(|p| patch_labels(&g)[p].map(|k| (p, k)))
            .collect();
        let (mut s, mut d) = (0, 0);
        for i in 0..owned.len() {
            for j in i + 1..owned.len() {
                if owned[i].1 == owned[j].1 {
                    s += 1
                } else {
                    d += 1
                }
            }
        }
        let all = sample_pair_indices(&g, 0, None, false).unwrap();
        assert_eq!(all.iter().filter(|p| p.same).count(), s);
        assert_eq!(all.iter().filter(|p| !p.same).count(), d);
        let bal = sample_pair_indices(&g, 0, None, true).unwrap();
        let bs = bal.iter().filter(|p| p.same).count();
        assert!((bs as i64 - (bal.len() - bs) as i64).abs() <= 1);
    }

    #[test]
    fn shared_patches_are_excluded_and_missing_objects_skip() {
        let g = grid_from(&[&[(1, 1), (1, 2)], &[(1, 2), (2, 2)]], 32);
        let pairs = sample_pair_indices(&g, 0, None, false).unwrap();
        let shared = g.index(1, 2);
        assert!(pairs.iter().all(|p| p.a != shared && p.b != shared));
        let g = grid_from(&[&[(1, 1)], &[(1, 1)]], 32);
        assert!(matches!(sample_pair_indices(&g, 0, None, true), Err(Error::Skipped(_))));
    }

    proptest! {
        #[test]
        fn balanced_sampling_is_balanced_and_capped(
            a in proptest::collection::btree_set((0u32..7, 0u32..3), 1..10),
            b in proptest::collection::btree_set((0u32..7, 4u32..7), 1..10),
            cap in proptest::option::of(1usize..40),
            seed in any::<u64>(),
        ) {
            let a: Vec<_> = a.into_iter().collect();
            let b: Vec<_> = b.into_iter().collect();
            let g = grid_from(&[&a, &b], 32);
            let pairs = sample_pair_indices(&g, seed, cap, true).unwrap();
            let s = pairs.iter().filter(|p| p.same).count() as i64;
            prop_assert!((s - (pairs.len() as i64 - s)).abs() <= 1);
            if let Some(c) = cap { prop_assert!(pairs.len() <= c); }
            prop_assert!(!pairs.is_empty());
        }
    }

    fn random_instance(seed: u64, n: usize, d: usize) -> (ProbeParams, Vec<PairSample>) {
        let mut rng = seed::rng(seed);
        let mut p = ProbeParams::zeros(d);
        for v in p.w.iter_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        symmetrize(&mut p.w, d);
        p.b = rng.random_range(-0.5..0.5);
        let pairs = (0..n)
            .map(|_| {
                let x = (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                let y = (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                sample(x, y, rng.random_bool(0.5))
            })
            .collect();
        (p, pairs)
    }

    #[test]
    fn gradient_matches_central_differences() {
        for seed in 0..5 {
            let (p, pairs) = random_instance(seed, 7, 4);
            let batch: Vec<&PairSample> = pairs.iter().collect();
            let (_, gw, gb) = objective_and_grad(&p, &batch, 0.01);
            let h = 1e-6;
            for k in 0..16 {
                let (mut hi, mut lo) = (p.clone(), p.clone());
                hi.w[k] += h;
                lo.w[k] -= h;
                let fd = (objective_and_grad(&hi, &batch, 0.01).0 - objective_and_grad(&lo, &batch, 0.01).0) / (2.0 * h);
                assert!((fd - gw[k]).abs() <= 1e-4 * fd.abs().max(1e-3), "W[{k}]: {fd} vs {}", gw[k]);
            }
            let (mut hi, mut lo) = (p.clone(), p.clone());
            hi.b += h;
            lo.b -= h;
            let fd = (objective_and_grad(&hi, &batch, 0.01).0 - objective_and_grad(&lo, &batch, 0.01).0) / (2.0 * h);
            assert!((fd - gb).abs() <= 1e-4 * fd.abs().max(1e-3));
        }
    }

    /// Same pairs are `(x, x)`; different pairs use orthogonal unit
    /// directions scaled to norm 3.
    pub(crate) fn separable_set(n: usize, d: usize, seed: u64) -> Vec<PairSample> {
        let mut rng = seed::rng(seed);
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let a = rng.random_range(0..d);
            let sign = if rng.random_bool(0.5) { 3.0 } else { -3.0 };
            let mut x = vec![0.0f32; d];
            x[a] = sign;
            if i % 2 == 0 {
                out.push(sample(x.clone(), x, true));
            } else {
                let b = (a + rng.random_range(1..d)) % d;
                let mut y = vec![0.0f32; d];
                y[b] = 3.0;
                out.push(sample(x, y, false));
            }
        }
        out
    }

    #[test]
    fn separable_set_is_learned() {
        let pairs = separable_set(8192, 8, 1);
        let (p, hist) = train_probe(&pairs, &TrainConfig::default()).unwrap();
        assert_eq!(hist.len(), 20);
        assert!(hist.last().unwrap().loss <= hist[0].loss);
        assert!(hist.iter().all(|h| h.loss.is_finite()));
        assert!(p.is_symmetric());
        let r = eval_probe(&p, &pairs).unwrap();
        assert!(r.accuracy >= 0.99, "accuracy {}", r.accuracy);
        let er = effective_rank(&p.w, 8).unwrap();
        assert!((1.0..=8.0).contains(&er));
    }

    #[test]
    fn huge_weight_decay_collapses_outputs_to_one_half() {
        // Adam's normalized steps keep parameters oscillating at the scale of
        // the learning rate, so the outputs (not the thresholded accuracy)
        // are what collapses.
        let pairs = separable_set(1024, 8, 2);
        let cfg = TrainConfig { weight_decay: 1e6, epochs: 3, ..TrainConfig::default() };
        let (p, _) = train_probe(&pairs, &cfg).unwrap();
        assert!(p.w.iter().all(|v| v.abs() < 1e-2));
        for s in &pairs {
            assert!((p.forward(&s.x, &s.y).unwrap() - 0.5).abs() < 0.05);
        }
        let (free, _) = train_probe(&pairs, &TrainConfig { epochs: 3, ..TrainConfig::default() }).unwrap();
        let spread = |q: &ProbeParams| pairs.iter().map(|s| (q.forward(&s.x, &s.y).unwrap() - 0.5).abs()).fold(0.0, f64::max);
        assert!(spread(&p) < spread(&free));
    }

    #[test]
    fn trivial_probe_scores_negative_share_and_flipping_complements() {
        let mut pairs = separable_set(1001, 4, 3);
        pairs.push(sample(vec![1.0; 4], vec![0.0; 4], false));
        let r = eval_probe(&ProbeParams::zeros(4), &pairs).unwrap();
        let neg = pairs.iter().filter(|p| !p.same).count() as f64 / pairs.len() as f64;
        assert_eq!(r.accuracy, neg);
        assert_eq!(r.majority_baseline, neg);
        let p = ProbeParams { d: 4, w: vec![0.1; 16], b: -0.2 };
        let base = eval_probe(&p, &pairs).unwrap().accuracy;
        let flipped: Vec<PairSample> = pairs.iter().map(|s| PairSample { same: !s.same, ..s.clone() }).collect();
        assert!((eval_probe(&p, &flipped).unwrap().accuracy - (1.0 - base)).abs() < 1e-12);
    }

    #[test]
    fn single_class_is_rejected() {
        let pairs = vec![sample(vec![1.0], vec![1.0], true); 3];
        assert!(train_probe(&pairs, &TrainConfig::default()).is_err());
    }

    #[test]
    fn effective_rank_cases() {
        let mut id = vec![0.0; 25];
        for i in 0..5 {
            id[i * 5 + i] = 1.0;
        }
        assert!((effective_rank(&id, 5).unwrap() - 5.0).abs() < 1e-9);
        let u = [1.0, 2.0, -1.0];
        let outer: Vec<f64> = (0..9).map(|k| u[k / 3] * u[k % 3]).collect();
        assert!((effective_rank(&outer, 3).unwrap() - 1.0).abs() < 1e-9);
        // p = (½, ½, 0, 0): H = ln 2, exp(H) = 2.
        let mut d2 = vec![0.0; 16];
        d2[0] = 1.0;
        d2[5] = 1.0;
        assert!((effective_rank(&d2, 4).unwrap() - 2.0).abs() < 1e-9);
        assert_eq!(effective_rank(&[0.0; 4], 2).unwrap(), 0.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (p, _) = random_instance(1, 1, 5);
        let path = dir.path().join("probe.safetensors");
        p.save(&path, &Metadata::new()).unwrap();
        assert_eq!(ProbeParams::load(&path).unwrap().0, p.quantized());
    }
}
