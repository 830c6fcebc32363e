//! Model-tree construction, prediction, persistence and explanation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, RowIndexSet, Task};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::split::{
    best_split_gradient, best_split_impurity, FittedModel, SplitConfig, SplitDecision,
};
use crate::weak::{
    convert_params, Direction, GdConfig, Link, NormKind, NormalizationParams, WeakModelParams,
};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Information gain / variance reduction (MT-DT).
    Impurity,
    /// Gradient gain in the raw parameter space (MT-G).
    Gradient,
    /// Gradient gain after refitting a normalization on each side (MT-GR).
    GradientRenorm,
}

impl Criterion {
    pub fn short_name(self) -> &'static str {
        match self {
            Criterion::Impurity => "MT-DT",
            Criterion::Gradient => "MT-G",
            Criterion::GradientRenorm => "MT-GR",
        }
    }
}

pub fn link_for(task: Task) -> Link {
    match task {
        Task::Classification => Link::Logistic,
        Task::Regression => Link::Identity,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrainConfig<T> {
    pub max_depth: usize,
    pub criterion: Criterion,
    pub normalization: NormKind,
    pub gd: GdConfig<T>,
    /// `None` resolves to `max(5, m + 1)` for `m` features.
    pub min_samples_leaf: Option<usize>,
    pub max_candidates: usize,
    pub unweighted_gain: bool,
    pub seed: u64,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            max_depth: 1,
            criterion: Criterion::GradientRenorm,
            normalization: NormKind::Z,
            gd: GdConfig::default(),
            min_samples_leaf: None,
            max_candidates: SplitConfig::DEFAULT_MAX_CANDIDATES,
            unweighted_gain: false,
            seed: 0,
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.gd.validate()?;
        if self.min_samples_leaf == Some(0) {
            return Err(Error::Config("min_samples_leaf must be positive".into()));
        }
        if self.max_candidates == 0 {
            return Err(Error::Config("max_candidates must be positive".into()));
        }
        Ok(())
    }

    /// Copy with every defaulted field filled in for `n_features` columns.
    pub fn resolved(&self, n_features: usize) -> Self {
        Self {
            min_samples_leaf: Some(
                self.min_samples_leaf
                    .unwrap_or_else(|| SplitConfig::default_min_samples_leaf(n_features)),
            ),
            ..self.clone()
        }
    }

    pub fn split_config(&self, n_features: usize) -> SplitConfig {
        SplitConfig {
            max_candidates: self.max_candidates,
            min_samples_leaf: self
                .min_samples_leaf
                .unwrap_or_else(|| SplitConfig::default_min_samples_leaf(n_features)),
            unweighted_gain: self.unweighted_gain,
            // Renormalizing with the identity map would be a no-op, so the
            // renormalized criterion falls back to z-scores in that case.
            renorm_kind: match self.normalization {
                NormKind::Identity => NormKind::Z,
                kind => kind,
            },
        }
    }
}

/// Node of a model tree. Every node carries a trained model; only leaf
/// models are used for prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TreeNode<T> {
    pub n_rows: usize,
    pub model: WeakModelParams<T>,
    pub norm: NormalizationParams<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitDecision<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<Box<TreeNode<T>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<Box<TreeNode<T>>>,
}

impl<T: Scalar> TreeNode<T> {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }

    /// `(split, left, right)` for internal nodes.
    pub fn children(&self) -> Option<(&SplitDecision<T>, &TreeNode<T>, &TreeNode<T>)> {
        match (&self.split, &self.left, &self.right) {
            (Some(s), Some(l), Some(r)) => Some((s, l, r)),
            _ => None,
        }
    }

    pub fn depth(&self) -> usize {
        self.children()
            .map_or(0, |(_, l, r)| 1 + l.depth().max(r.depth()))
    }

    pub fn count_nodes(&self) -> (usize, usize) {
        match self.children() {
            None => (0, 1),
            Some((_, l, r)) => {
                let (li, ll) = l.count_nodes();
                let (ri, rl) = r.count_nodes();
                (1 + li + ri, ll + rl)
            }
        }
    }

    /// Output of this node's own model.
    pub fn model_output(&self, x: &[T]) -> T {
        self.model.predict(&self.norm.apply(x))
    }

    fn check(&self, m: usize) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("malformed model node: {msg}")));
        if self.model.n_features() != m || self.norm.n_features() != m {
            return bad("parameter length differs from feature count");
        }
        if self.norm.offset.len() != m || self.norm.scale.iter().any(|a| a.is_nan() || *a <= T::zero()) {
            return bad("invalid normalization");
        }
        match (&self.split, &self.left, &self.right) {
            (None, None, None) => Ok(()),
            (Some(s), Some(l), Some(r)) => {
                if s.feature >= m {
                    return bad("split feature out of range");
                }
                l.check(m)?;
                r.check(m)
            }
            _ => bad("split and children must appear together"),
        }
    }

    fn map_models(&self, f: &impl Fn(&Self) -> (WeakModelParams<T>, NormalizationParams<T>)) -> Self {
        let (model, norm) = f(self);
        Self {
            n_rows: self.n_rows,
            model,
            norm,
            split: self.split.clone(),
            left: self.left.as_ref().map(|n| Box::new(n.map_models(f))),
            right: self.right.as_ref().map(|n| Box::new(n.map_models(f))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ModelTree<T> {
    pub format_version: u64,
    pub task: Task,
    pub feature_names: Vec<String>,
    pub config: TrainConfig<T>,
    pub root: TreeNode<T>,
}

impl<T: Scalar> ModelTree<T> {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn leaf_for(&self, x: &[T]) -> &TreeNode<T> {
        let mut node = &self.root;
        while let Some((split, left, right)) = node.children() {
            node = if split.goes_left(x) { left } else { right };
        }
        node
    }

    /// Probability for classification trees, a real value for regression.
    pub fn predict(&self, x: &[T]) -> Result<T> {
        if x.len() != self.n_features() {
            return Err(Error::Dimension {
                expected: self.n_features(),
                got: x.len(),
            });
        }
        Ok(self.leaf_for(x).model_output(x))
    }

    pub fn predict_dataset(&self, data: &Dataset<T>, rows: &RowIndexSet) -> Result<Vec<T>> {
        rows.iter().map(|i| self.predict(data.row(i))).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Config("model file lacks format_version".into()))?;
        if found != FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found,
                expected: FORMAT_VERSION,
            });
        }
        let tree: Self = serde_json::from_value(value)?;
        tree.root.check(tree.n_features())?;
        Ok(tree)
    }

    /// One line per node: path, rows, split and gain.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        fn walk<T: Scalar>(node: &TreeNode<T>, path: &str, names: &[String], out: &mut String) {
            match node.children() {
                Some((s, l, r)) => {
                    out.push_str(&format!(
                        "{path}\tsplit {} <= {}\tgain {}\trows {} -> {} / {}\n",
                        names[s.feature], s.threshold, s.gain, node.n_rows, s.left_count, s.right_count
                    ));
                    walk(l, &format!("{path}L"), names, out);
                    walk(r, &format!("{path}R"), names, out);
                }
                None => out.push_str(&format!("{path}\tleaf\trows {}\n", node.n_rows)),
            }
        }
        walk(&self.root, "root:", &self.feature_names, &mut out);
        out
    }
}

struct Builder<'a, T> {
    data: &'a Dataset<T>,
    cfg: &'a TrainConfig<T>,
    split_cfg: SplitConfig,
    link: Link,
}

impl<T: Scalar> Builder<'_, T> {
    fn node(
        &self,
        rows: &RowIndexSet,
        parent_raw: Option<&WeakModelParams<T>>,
        depth_left: usize,
    ) -> Result<TreeNode<T>> {
        let zeros;
        let init = match parent_raw {
            Some(p) => p,
            None => {
                zeros = WeakModelParams::zeros(self.data.n_features(), self.link);
                &zeros
            }
        };
        let fit = FittedModel::train(self.data, rows, self.cfg.normalization, init, &self.cfg.gd)?;
        let split = if depth_left > 0 {
            match self.cfg.criterion {
                Criterion::Impurity => best_split_impurity(self.data, rows, &self.split_cfg),
                Criterion::Gradient => best_split_gradient(
                    self.data,
                    rows,
                    &fit.params,
                    &fit.norm,
                    false,
                    &self.split_cfg,
                )?,
                Criterion::GradientRenorm => best_split_gradient(
                    self.data,
                    rows,
                    &fit.params,
                    &fit.norm,
                    true,
                    &self.split_cfg,
                )?,
            }
        } else {
            None
        };
        let mut node = TreeNode {
            n_rows: rows.len(),
            model: fit.params.clone(),
            norm: fit.norm.clone(),
            split: None,
            left: None,
            right: None,
        };
        if let Some(split) = split {
            let (left_rows, right_rows) = split.partition(self.data, rows)?;
            let raw = fit.raw_params();
            let (left, right) = rayon::join(
                || self.node(&left_rows, Some(&raw), depth_left - 1),
                || self.node(&right_rows, Some(&raw), depth_left - 1),
            );
            node.split = Some(split);
            node.left = Some(Box::new(left?));
            node.right = Some(Box::new(right?));
        }
        Ok(node)
    }
}

/// Grows a model tree on `rows` of `data`.
///
/// Each node fits its normalization on its own rows and trains its model
/// warm-started from the parent's model. A node is split whenever depth
/// remains and some candidate leaves `min_samples_leaf` rows on both sides.
pub fn build_tree<T: Scalar>(
    data: &Dataset<T>,
    rows: &RowIndexSet,
    cfg: &TrainConfig<T>,
) -> Result<ModelTree<T>> {
    rows.check_bounds(data)?;
    cfg.validate()?;
    let m = data.n_features();
    let resolved = cfg.resolved(m);
    let builder = Builder {
        data,
        cfg: &resolved,
        split_cfg: resolved.split_config(m),
        link: link_for(data.task()),
    };
    let root = builder.node(rows, None, resolved.max_depth)?;
    Ok(ModelTree {
        format_version: FORMAT_VERSION,
        task: data.task(),
        feature_names: data.feature_names().to_vec(),
        config: resolved,
        root,
    })
}

/// Equivalent tree whose nodes all use the identity normalization.
pub fn denormalize_tree<T: Scalar>(tree: &ModelTree<T>) -> ModelTree<T> {
    let m = tree.n_features();
    let root = tree.root.map_models(&|node| {
        (
            convert_params(&node.model, &node.norm, Direction::ToRaw),
            NormalizationParams::identity(m),
        )
    });
    ModelTree {
        root,
        ..tree.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ExplainNode {
    Rule {
        path: String,
        depth: usize,
        feature: String,
        threshold: f64,
        gain: f64,
    },
    Leaf {
        path: String,
        depth: usize,
        rows: usize,
        bias: f64,
        /// Features ranked by the magnitude of their weight in the leaf's
        /// normalized space.
        weights: Vec<(String, f64)>,
    },
}

/// Pre-order listing of split rules and ranked leaf weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub normalization: NormKind,
    pub nodes: Vec<ExplainNode>,
}

/// Up to `top_k` features per leaf ranked by `|w̃_j|`.
pub fn ranked_weights<T: Scalar>(
    model: &WeakModelParams<T>,
    names: &[String],
    top_k: usize,
) -> Vec<(String, f64)> {
    let mut ranked: Vec<(String, f64)> = names
        .iter()
        .cloned()
        .zip(model.weights.iter().map(|w| w.as_f64()))
        .collect();
    ranked.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
    ranked.truncate(top_k);
    ranked
}

pub fn explain<T: Scalar>(tree: &ModelTree<T>, top_k: usize) -> Explanation {
    fn walk<T: Scalar>(
        node: &TreeNode<T>,
        path: String,
        depth: usize,
        names: &[String],
        top_k: usize,
        out: &mut Vec<ExplainNode>,
    ) {
        match node.children() {
            Some((s, l, r)) => {
                out.push(ExplainNode::Rule {
                    path: path.clone(),
                    depth,
                    feature: names[s.feature].clone(),
                    threshold: s.threshold.as_f64(),
                    gain: s.gain.as_f64(),
                });
                walk(l, format!("{path}L"), depth + 1, names, top_k, out);
                walk(r, format!("{path}R"), depth + 1, names, top_k, out);
            }
            None => out.push(ExplainNode::Leaf {
                path,
                depth,
                rows: node.n_rows,
                bias: node.model.bias.as_f64(),
                weights: ranked_weights(&node.model, names, top_k),
            }),
        }
    }
    let mut nodes = Vec::new();
    walk(&tree.root, String::new(), 0, &tree.feature_names, top_k, &mut nodes);
    Explanation {
        normalization: tree.config.normalization,
        nodes,
    }
}

impl fmt::Display for Explanation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for node in &self.nodes {
            match node {
                ExplainNode::Rule {
                    path,
                    depth,
                    feature,
                    threshold,
                    gain,
                } => {
                    let pad = "    ".repeat(*depth);
                    let at = if path.is_empty() { "root" } else { path };
                    writeln!(f, "{pad}[{at}] {feature} ≤ {threshold} (gain {gain:.4})")?;
                }
                ExplainNode::Leaf {
                    path,
                    depth,
                    rows,
                    bias,
                    weights,
                } => {
                    let pad = "    ".repeat(*depth);
                    let (at, branch) = match path.chars().last() {
                        None => ("root", "model"),
                        Some('L') => (path.as_str(), "yes"),
                        Some(_) => (path.as_str(), "no"),
                    };
                    writeln!(f, "{pad}[{at}] {branch}: leaf model, {rows} rows, bias {bias:+.4}")?;
                    let width = weights.iter().map(|(n, _)| n.chars().count()).max().unwrap_or(0);
                    for (name, w) in weights {
                        writeln!(f, "{pad}    {name:<width$}  {w:+.4}")?;
                    }
                }
            }
        }
        Ok(())
    }
}
