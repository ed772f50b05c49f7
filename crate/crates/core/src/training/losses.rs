use serde::{Deserialize, Serialize};

use super::partition::SnippetPartition;
use crate::autodiff::{Graph, Matrix, Reduction, Var};
use crate::error::{Error, Result};
use crate::subspace::SubspaceForward;

/// Mean feature vectors of the partition groups within one subspace.
/// A group with no snippets has no prototype; absent prototypes drop the
/// loss terms that reference them rather than polluting them with zeros.
pub struct SubspaceMeans {
    pub action: Option<Var>,
    pub context: Option<Var>,
    pub background: Option<Var>,
}

/// Group prototypes in the action subspace (`in_action`) and the context
/// subspace (`in_context`).
pub struct Prototypes {
    pub in_action: SubspaceMeans,
    pub in_context: SubspaceMeans,
}

/// Column means of `features` over the action / context-union / background
/// index sets of the partition.
fn means_of(g: &mut Graph, features: Var, partition: &SnippetPartition) -> Result<SubspaceMeans> {
    let mean = |g: &mut Graph, cols: &[usize]| -> Result<Option<Var>> {
        if cols.is_empty() {
            Ok(None)
        } else {
            g.mean_cols(features, cols).map(Some)
        }
    };
    let context_union = partition.context_union();
    Ok(SubspaceMeans {
        action: mean(g, &partition.action)?,
        context: mean(g, &context_union)?,
        background: mean(g, &partition.background)?,
    })
}

/// Prototypes of both subspaces: `action_features` and `context_features`
/// are the `[D x T]` halves of the enhanced features.
pub fn prototypes(
    g: &mut Graph,
    partition: &SnippetPartition,
    action_features: Var,
    context_features: Var,
) -> Result<Prototypes> {
    Ok(Prototypes {
        in_action: means_of(g, action_features, partition)?,
        in_context: means_of(g, context_features, partition)?,
    })
}

/// Margin loss separating the subspaces' roles:
///
/// * in the action subspace, context prototypes must sit close to
///   background and far from action;
/// * in the context subspace, context prototypes must sit close to action
///   (they carry class evidence) and far from irrelevant background.
///
/// Distances are Euclidean after ℓ2 normalization, so each term is a hinge
/// over values in `[0, 2]`. A term whose three prototypes are not all
/// present contributes zero.
pub fn triplet_loss(g: &mut Graph, protos: &Prototypes, margin: f64) -> Result<Var> {
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(Error::Config(format!("triplet margin must be positive, got {margin}")));
    }
    let hinge_term = |g: &mut Graph, anchor: Var, near: Var, far: Var| -> Result<Var> {
        let anchor = g.l2_normalize(anchor);
        let near = g.l2_normalize(near);
        let far = g.l2_normalize(far);
        let d_near = g.euclidean_distance(anchor, near)?;
        let d_far = g.euclidean_distance(anchor, far)?;
        let gap = g.sub(d_near, d_far)?;
        let shifted = g.add_scalar(gap, margin);
        Ok(g.relu(shifted))
    };

    let mut total: Option<Var> = None;
    if let (Some(a_c), Some(a_bg), Some(a_a)) = (
        protos.in_action.context,
        protos.in_action.background,
        protos.in_action.action,
    ) {
        let term = hinge_term(g, a_c, a_bg, a_a)?;
        total = Some(term);
    }
    if let (Some(c_c), Some(c_a), Some(c_bg)) = (
        protos.in_context.context,
        protos.in_context.action,
        protos.in_context.background,
    ) {
        let term = hinge_term(g, c_c, c_a, c_bg)?;
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    Ok(total.unwrap_or_else(|| g.scalar(0.0)))
}

/// Masked binary cross-entropy assigning pseudo labels from the partition:
///
/// * action snippets: action-subspace scores target the video's labels
///   (background row 0 targets 0);
/// * context and background snippets: action-subspace scores target pure
///   background;
/// * context snippets: context-subspace scores target the video's labels;
/// * background snippets: context-subspace scores target pure background;
/// * context-subspace scores of action snippets are unconstrained.
///
/// Only the background row and the labeled classes' rows are ever
/// constrained. The result is the mean over all constrained entries of both
/// score matrices; it is exactly zero when the partition is empty.
pub fn subspace_cls_loss(
    g: &mut Graph,
    action_scores: Var,
    context_scores: Var,
    partition: &SnippetPartition,
    labels: &[usize],
    num_actions: usize,
) -> Result<Var> {
    let (rows, t) = g.value(action_scores).shape();
    if g.value(context_scores).shape() != (rows, t) || rows != num_actions + 1 {
        return Err(Error::shape(
            "subspace_cls_loss",
            format!(
                "scores {:?} / {:?} for {num_actions} actions",
                g.value(action_scores).shape(),
                g.value(context_scores).shape()
            ),
        ));
    }
    if labels.is_empty() || labels.iter().any(|&l| l == 0 || l > num_actions) {
        return Err(Error::Data(format!(
            "labels must be nonempty and within 1..={num_actions}, got {labels:?}"
        )));
    }
    if let Some(&bad) = partition.labeled().iter().map(|(t, _)| t).find(|&&i| i >= t) {
        return Err(Error::shape(
            "subspace_cls_loss",
            format!("partition index {bad} out of range for {t} snippets"),
        ));
    }

    let mut target_a = Matrix::zeros(rows, t);
    let mut mask_a = Matrix::zeros(rows, t);
    let mut target_c = Matrix::zeros(rows, t);
    let mut mask_c = Matrix::zeros(rows, t);

    let constrain = |target: &mut Matrix, mask: &mut Matrix, col: usize, positive: bool| {
        // background row: opposite of the labeled classes
        target.set(0, col, if positive { 0.0 } else { 1.0 });
        mask.set(0, col, 1.0);
        for &l in labels {
            target.set(l, col, if positive { 1.0 } else { 0.0 });
            mask.set(l, col, 1.0);
        }
    };

    for &t in &partition.action {
        constrain(&mut target_a, &mut mask_a, t, true);
    }
    for &t in partition.context_rgb.iter().chain(&partition.context_flow) {
        constrain(&mut target_a, &mut mask_a, t, false);
        constrain(&mut target_c, &mut mask_c, t, true);
    }
    for &t in &partition.background {
        constrain(&mut target_a, &mut mask_a, t, false);
        constrain(&mut target_c, &mut mask_c, t, false);
    }

    let count = mask_a.data().iter().chain(mask_c.data()).filter(|&&m| m != 0.0).count();
    if count == 0 {
        return Ok(g.scalar(0.0));
    }
    let sum_a = g.binary_cross_entropy(action_scores, &target_a, &mask_a, Reduction::Sum)?;
    let sum_c = g.binary_cross_entropy(context_scores, &target_c, &mask_c, Reduction::Sum)?;
    let total = g.add(sum_a, sum_c)?;
    Ok(g.scale(total, 1.0 / count as f64))
}

/// Four-way cross-entropy of the auxiliary head against the partition
/// kinds; mean over partitioned snippets, zero when none are partitioned.
pub fn residual_loss(g: &mut Graph, kind_scores: Var, partition: &SnippetPartition) -> Result<Var> {
    let (rows, t) = g.value(kind_scores).shape();
    if rows != 4 {
        return Err(Error::shape(
            "residual_loss",
            format!("kind scores must have 4 rows, got {rows}x{t}"),
        ));
    }
    let picks: Vec<(usize, usize)> = partition
        .labeled()
        .into_iter()
        .map(|(t, kind)| (kind, t))
        .collect();
    g.log_loss_picks(kind_scores, &picks)
}

/// Relative weights of the three subspace losses; the formulation is an
/// unweighted sum, so everything defaults to 1.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub triplet: f64,
    pub classification: f64,
    pub residual: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            triplet: 1.0,
            classification: 1.0,
            residual: 1.0,
        }
    }
}

pub struct SubspaceLosses {
    pub triplet: Var,
    pub classification: Var,
    /// Present only when the residual block participates.
    pub residual: Option<Var>,
    pub total: Var,
}

/// Total per-stream subspace loss `L = L_t + L_s (+ L_r)` on one video's
/// forward pass, using the shared cross-stream partition. The residual term
/// is included only when `include_residual` is set (i.e. the stream's
/// T-ResM is enabled).
#[allow(clippy::too_many_arguments)]
pub fn total_subspace_loss(
    g: &mut Graph,
    forward: &SubspaceForward,
    partition: &SnippetPartition,
    labels: &[usize],
    num_actions: usize,
    margin: f64,
    weights: &LossWeights,
    include_residual: bool,
) -> Result<SubspaceLosses> {
    let protos = prototypes(g, partition, forward.action, forward.context)?;
    let triplet = triplet_loss(g, &protos, margin)?;
    let classification = subspace_cls_loss(
        g,
        forward.action_scores,
        forward.context_scores,
        partition,
        labels,
        num_actions,
    )?;
    let residual = if include_residual {
        Some(residual_loss(g, forward.kind_scores, partition)?)
    } else {
        None
    };

    let wt = g.scale(triplet, weights.triplet);
    let ws = g.scale(classification, weights.classification);
    let mut total = g.add(wt, ws)?;
    if let Some(r) = residual {
        let wr = g.scale(r, weights.residual);
        total = g.add(total, wr)?;
    }
    Ok(SubspaceLosses {
        triplet,
        classification,
        residual,
        total,
    })
}
