//! Linear and logistic weak models, their losses and gradients, full-batch
//! gradient descent, and per-node affine feature normalization.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, RowIndexSet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Predicted probabilities are clipped to `[PROB_CLIP, 1 - PROB_CLIP]`
/// before taking logarithms.
pub const PROB_CLIP: f64 = 1e-12;

/// Lower bound on a feature's spread when fitting a normalization.
pub const SCALE_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    /// Linear regression, paired with squared error.
    Identity,
    /// Logistic regression, paired with cross-entropy.
    Logistic,
}

impl Link {
    #[inline]
    pub fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Link::Identity => z,
            Link::Logistic => {
                // Split on the sign so exp never overflows.
                if z >= T::zero() {
                    T::one() / (T::one() + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (T::one() + e)
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct WeakModelParams<T> {
    pub weights: Vec<T>,
    pub bias: T,
    pub link: Link,
}

impl<T: Scalar> WeakModelParams<T> {
    pub fn zeros(n_features: usize, link: Link) -> Self {
        Self {
            weights: vec![T::zero(); n_features],
            bias: T::zero(),
            link,
        }
    }

    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn linear(&self, x: &[T]) -> T {
        debug_assert_eq!(x.len(), self.weights.len());
        self.weights
            .iter()
            .zip(x)
            .fold(self.bias, |acc, (&w, &v)| acc + w * v)
    }

    #[inline]
    pub fn predict(&self, x: &[T]) -> T {
        self.link.apply(self.linear(x))
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }
}

/// Per-sample loss. Squared error for the identity link, cross-entropy for
/// the logistic link.
#[inline]
pub fn loss_value<T: Scalar>(link: Link, y: T, yhat: T) -> T {
    match link {
        Link::Identity => {
            let r = y - yhat;
            r * r
        }
        Link::Logistic => {
            let eps = T::lit(PROB_CLIP);
            let p = yhat.max(eps).min(T::one() - eps);
            -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
        }
    }
}

/// Derivative of the loss with respect to the linear predictor `wᵀx + b`.
#[inline]
pub fn residual_factor<T: Scalar>(link: Link, y: T, yhat: T) -> T {
    match link {
        Link::Identity => T::lit(2.0) * (yhat - y),
        Link::Logistic => yhat - y,
    }
}

/// Gradient with respect to `(w_1, ..., w_m, b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientVector<T>(pub Vec<T>);

impl<T: Scalar> GradientVector<T> {
    pub fn zeros(n_features: usize) -> Self {
        Self(vec![T::zero(); n_features + 1])
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn weights(&self) -> &[T] {
        &self.0[..self.0.len() - 1]
    }

    pub fn bias(&self) -> T {
        self.0[self.0.len() - 1]
    }

    /// Adds `r * (x, 1)`.
    #[inline]
    pub fn add_scaled_input(&mut self, x: &[T], r: T) {
        let (w, b) = self.0.split_at_mut(x.len());
        for (g, &v) in w.iter_mut().zip(x) {
            *g = *g + r * v;
        }
        b[0] = b[0] + r;
    }

    #[inline]
    pub fn add_assign(&mut self, other: &Self) {
        for (a, &b) in self.0.iter_mut().zip(&other.0) {
            *a = *a + b;
        }
    }

    #[inline]
    pub fn sub_assign(&mut self, other: &Self) {
        for (a, &b) in self.0.iter_mut().zip(&other.0) {
            *a = *a - b;
        }
    }

    pub fn difference(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.sub_assign(other);
        out
    }

    pub fn norm_sq(&self) -> T {
        self.0.iter().map(|&g| g * g).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|g| g.is_finite())
    }
}

pub fn sample_gradient<T: Scalar>(
    params: &WeakModelParams<T>,
    x: &[T],
    y: T,
) -> GradientVector<T> {
    let r = residual_factor(params.link, y, params.predict(x));
    let mut g = GradientVector::zeros(x.len());
    g.add_scaled_input(x, r);
    g
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Batch {
    #[default]
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GdConfig<T> {
    pub learning_rate: T,
    pub max_epochs: usize,
    /// Stop once an accepted epoch improves the mean loss by less than this.
    pub tolerance: T,
    #[serde(default)]
    pub batch: Batch,
}

impl<T: Scalar> Default for GdConfig<T> {
    fn default() -> Self {
        Self {
            learning_rate: T::lit(0.1),
            max_epochs: 500,
            tolerance: T::lit(1e-8),
            batch: Batch::Full,
        }
    }
}

impl<T: Scalar> GdConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > T::zero() && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.tolerance.is_nan() || self.tolerance < T::zero() {
            return Err(Error::Config("tolerance must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Rows of a node gathered into a contiguous, already normalized matrix.
pub(crate) struct DesignMatrix<T> {
    pub x: Vec<T>,
    pub y: Vec<T>,
    pub m: usize,
}

impl<T: Scalar> DesignMatrix<T> {
    pub fn gather(data: &Dataset<T>, rows: &RowIndexSet, norm: &NormalizationParams<T>) -> Self {
        let m = data.n_features();
        let mut x = vec![T::zero(); rows.len() * m];
        let mut y = Vec::with_capacity(rows.len());
        for (k, i) in rows.iter().enumerate() {
            norm.apply_into(data.row(i), &mut x[k * m..(k + 1) * m]);
            y.push(data.label(i));
        }
        Self { x, y, m }
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[T] {
        &self.x[k * self.m..(k + 1) * self.m]
    }

    pub fn mean_loss(&self, params: &WeakModelParams<T>) -> T {
        self.total_loss(params) / T::from_usize_lossy(self.n_rows())
    }

    pub fn total_loss(&self, params: &WeakModelParams<T>) -> T {
        (0..self.n_rows())
            .map(|k| loss_value(params.link, self.y[k], params.predict(self.row(k))))
            .sum()
    }

    /// Mean loss and mean gradient in one pass.
    fn loss_and_gradient(&self, params: &WeakModelParams<T>) -> (T, GradientVector<T>) {
        let mut grad = GradientVector::zeros(self.m);
        let mut loss = T::zero();
        for k in 0..self.n_rows() {
            let x = self.row(k);
            let yhat = params.predict(x);
            loss = loss + loss_value(params.link, self.y[k], yhat);
            grad.add_scaled_input(x, residual_factor(params.link, self.y[k], yhat));
        }
        let inv_n = T::one() / T::from_usize_lossy(self.n_rows());
        grad.0.iter_mut().for_each(|g| *g = *g * inv_n);
        (loss * inv_n, grad)
    }

    /// Full-batch gradient descent on the mean loss.
    ///
    /// Only steps that lower the loss are accepted; a rejected step halves
    /// the step size for the remaining epochs.
    pub fn train(&self, init: &WeakModelParams<T>, cfg: &GdConfig<T>) -> Result<WeakModelParams<T>> {
        let mut params = init.clone();
        if cfg.max_epochs == 0 {
            return Ok(params);
        }
        let (mut loss, mut grad) = self.loss_and_gradient(&params);
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch: 0 });
        }
        let mut rate = cfg.learning_rate;
        let min_rate = cfg.learning_rate * T::lit(1e-12);
        for epoch in 1..=cfg.max_epochs {
            if grad.norm_sq() == T::zero() {
                break;
            }
            let mut candidate = params.clone();
            let (gw, gb) = grad.0.split_at(self.m);
            for (w, &g) in candidate.weights.iter_mut().zip(gw) {
                *w = *w - rate * g;
            }
            candidate.bias = candidate.bias - rate * gb[0];
            let (cand_loss, cand_grad) = self.loss_and_gradient(&candidate);
            if !cand_loss.is_finite() || !candidate.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            if cand_loss < loss {
                let improvement = loss - cand_loss;
                params = candidate;
                loss = cand_loss;
                grad = cand_grad;
                if improvement < cfg.tolerance {
                    break;
                }
            } else {
                rate = rate * T::lit(0.5);
                if rate < min_rate {
                    break;
                }
            }
        }
        Ok(params)
    }
}

/// Trains on `rows` mapped through `norm`, starting from `init`, which must
/// already live in the normalized parameter space.
pub fn train_weak_model<T: Scalar>(
    data: &Dataset<T>,
    rows: &RowIndexSet,
    norm: &NormalizationParams<T>,
    init: &WeakModelParams<T>,
    cfg: &GdConfig<T>,
) -> Result<WeakModelParams<T>> {
    if init.n_features() != data.n_features() {
        return Err(Error::Dimension {
            expected: data.n_features(),
            got: init.n_features(),
        });
    }
    cfg.validate()?;
    DesignMatrix::gather(data, rows, norm).train(init, cfg)
}

/// Mean loss of `params` (in `norm` space) over `rows`.
pub fn mean_loss<T: Scalar>(
    data: &Dataset<T>,
    rows: &RowIndexSet,
    norm: &NormalizationParams<T>,
    params: &WeakModelParams<T>,
) -> T {
    DesignMatrix::gather(data, rows, norm).mean_loss(params)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Identity,
    #[default]
    Z,
    MinMax,
}

/// Diagonal affine map `x̃ = scale ⊙ x + offset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NormalizationParams<T> {
    pub kind: NormKind,
    pub scale: Vec<T>,
    pub offset: Vec<T>,
}

impl<T: Scalar> NormalizationParams<T> {
    pub fn identity(n_features: usize) -> Self {
        Self {
            kind: NormKind::Identity,
            scale: vec![T::one(); n_features],
            offset: vec![T::zero(); n_features],
        }
    }

    pub fn n_features(&self) -> usize {
        self.scale.len()
    }

    #[inline]
    pub fn apply_into(&self, x: &[T], out: &mut [T]) {
        for (((o, &v), &a), &c) in out.iter_mut().zip(x).zip(&self.scale).zip(&self.offset) {
            *o = a * v + c;
        }
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); x.len()];
        self.apply_into(x, &mut out);
        out
    }

    /// Maps a raw value of feature `j` into the normalized space.
    #[inline]
    pub fn apply_one(&self, j: usize, v: T) -> T {
        self.scale[j] * v + self.offset[j]
    }

    /// Builds the map from per-feature statistics.
    pub(crate) fn from_stats(kind: NormKind, stats: impl Iterator<Item = (T, T)>) -> Self {
        let eps = T::lit(SCALE_CLAMP);
        let (scale, offset) = stats
            .map(|(location, spread)| {
                let a = T::one() / spread.max(eps);
                (a, -location * a)
            })
            .unzip();
        Self {
            kind,
            scale,
            offset,
        }
    }
}

/// Fits a normalization on the given rows.
///
/// `Z` uses the population mean and standard deviation, `MinMax` maps the
/// observed range onto `[0, 1]`. Spreads below [`SCALE_CLAMP`] are clamped.
pub fn fit_normalization<T: Scalar>(
    data: &Dataset<T>,
    rows: &RowIndexSet,
    kind: NormKind,
) -> NormalizationParams<T> {
    let m = data.n_features();
    let n = T::from_usize_lossy(rows.len());
    match kind {
        NormKind::Identity => NormalizationParams::identity(m),
        NormKind::Z => {
            let mut mean = vec![T::zero(); m];
            for i in rows.iter() {
                for (s, &v) in mean.iter_mut().zip(data.row(i)) {
                    *s = *s + v;
                }
            }
            mean.iter_mut().for_each(|s| *s = *s / n);
            let mut var = vec![T::zero(); m];
            for i in rows.iter() {
                for ((s, &v), &mu) in var.iter_mut().zip(data.row(i)).zip(&mean) {
                    let d = v - mu;
                    *s = *s + d * d;
                }
            }
            NormalizationParams::from_stats(
                kind,
                mean.into_iter().zip(var).map(|(mu, ss)| (mu, (ss / n).sqrt())),
            )
        }
        NormKind::MinMax => {
            let mut lo = vec![T::infinity(); m];
            let mut hi = vec![T::neg_infinity(); m];
            for i in rows.iter() {
                for (j, &v) in data.row(i).iter().enumerate() {
                    lo[j] = lo[j].min(v);
                    hi[j] = hi[j].max(v);
                }
            }
            NormalizationParams::from_stats(
                kind,
                lo.into_iter().zip(hi).map(|(l, h)| (l, h - l)),
            )
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    ToNormalized,
    ToRaw,
}

/// Re-expresses linear model parameters on the other side of `norm` so that
/// predictions are unchanged.
pub fn convert_params<T: Scalar>(
    params: &WeakModelParams<T>,
    norm: &NormalizationParams<T>,
    direction: Direction,
) -> WeakModelParams<T> {
    debug_assert_eq!(params.n_features(), norm.n_features());
    match direction {
        Direction::ToRaw => {
            let weights = params
                .weights
                .iter()
                .zip(&norm.scale)
                .map(|(&w, &a)| a * w)
                .collect();
            let shift: T = params
                .weights
                .iter()
                .zip(&norm.offset)
                .map(|(&w, &c)| w * c)
                .sum();
            WeakModelParams {
                weights,
                bias: params.bias + shift,
                link: params.link,
            }
        }
        Direction::ToNormalized => {
            let weights: Vec<T> = params
                .weights
                .iter()
                .zip(&norm.scale)
                .map(|(&w, &a)| w / a)
                .collect();
            let shift: T = weights.iter().zip(&norm.offset).map(|(&w, &c)| w * c).sum();
            WeakModelParams {
                weights,
                bias: params.bias - shift,
                link: params.link,
            }
        }
    }
}
