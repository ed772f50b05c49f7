//! Inference pipeline: two-stream fusion, temporal proposal generation,
//! Outer-Inner-Contrastive scoring, and non-maximum suppression.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Matrix};
use crate::data::{LoadedVideo, Stream};
use crate::error::{Error, Result};
use crate::evaluation::{interval_iou, Detection};
use crate::model::TwoStreamModel;

/// Inference-time switches. Proposals come from thresholded attention
/// (`proposals_from_attention`), from the clamped sum of action-class rows
/// of the subspace scores (`proposals_from_scores`), or the union of both;
/// at least one source must be enabled. `score_with_subspace` selects which
/// fused score matrix feeds the contrastive scorer.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    /// Weight of the RGB stream in all fusions; flow gets `1 - beta`.
    pub beta: f64,
    pub proposals_from_attention: bool,
    pub proposals_from_scores: bool,
    pub score_with_subspace: bool,
    /// Threshold on the proposal-generation signals.
    pub generation_threshold: f64,
    /// Minimum fused video-level foreground score for a class to be scored.
    pub class_threshold: f64,
    /// Same-class proposals with IoU strictly above this are suppressed.
    pub nms_iou: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            beta: 0.4,
            proposals_from_attention: true,
            proposals_from_scores: true,
            score_with_subspace: true,
            generation_threshold: 0.5,
            class_threshold: 0.1,
            nms_iou: 0.5,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!(
                "fusion weight beta must be in [0, 1], got {}",
                self.beta
            )));
        }
        if !self.proposals_from_attention && !self.proposals_from_scores {
            return Err(Error::Config(
                "at least one proposal source must be enabled".to_string(),
            ));
        }
        for (name, v) in [
            ("generation_threshold", self.generation_threshold),
            ("class_threshold", self.class_threshold),
            ("nms_iou", self.nms_iou),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(Error::Config(format!(
                "nms_iou must be in [0, 1], got {}",
                self.nms_iou
            )));
        }
        Ok(())
    }
}

/// A scored candidate interval; snippet indices are inclusive and the
/// second-space range covers `[t_start·d, (t_end+1)·d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalProposal {
    pub t_start: usize,
    pub t_end: usize,
    /// 1-based action class.
    pub class: usize,
    pub score: f64,
    pub start_sec: f64,
    pub end_sec: f64,
}

/// Fused (weighted-average) outputs of both streams for one video.
pub struct FusedOutputs {
    /// `[1 x T]` fused attention.
    pub attention: Matrix,
    /// `[(N+1) x T]` fused base-module snippet scores.
    pub base_scores: Matrix,
    /// `[(N+1) x T]` fused action-subspace snippet scores.
    pub subspace_scores: Matrix,
    /// `[(N+1) x 1]` fused video-level foreground scores.
    pub video_fg: Matrix,
    pub beta: f64,
}

/// Elementwise `beta * rgb + (1 - beta) * flow`.
pub fn fuse(rgb: &Matrix, flow: &Matrix, beta: f64) -> Result<Matrix> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!(
            "fusion weight beta must be in [0, 1], got {beta}"
        )));
    }
    rgb.zip_map(flow, |r, f| beta * r + (1.0 - beta) * f)
        .map_err(|_| {
            Error::shape(
                "fuse",
                format!("rgb {:?} vs flow {:?}", rgb.shape(), flow.shape()),
            )
        })
}

/// Maximal runs of consecutive snippets with `signal > threshold`, as
/// inclusive `(start, end)` index pairs in increasing order.
pub fn generate_proposals(signal: &Matrix, threshold: f64) -> Result<Vec<(usize, usize)>> {
    if signal.rows() != 1 {
        return Err(Error::shape(
            "generate_proposals",
            format!("signal must be a row vector, got {:?}", signal.shape()),
        ));
    }
    let mut runs = Vec::new();
    let mut start: Option<usize> = None;
    for t in 0..signal.cols() {
        let above = signal.get(0, t) > threshold;
        match (above, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                runs.push((s, t - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, signal.cols() - 1));
    }
    Ok(runs)
}

/// `[1 x T]` sum of the action-class rows (1..=N) of a score matrix,
/// clamped to `[0, 1]` — the proposal-generation signal of the subspace
/// scores.
pub fn clamped_action_sum(scores: &Matrix) -> Result<Matrix> {
    let (rows, t) = scores.shape();
    if rows < 2 {
        return Err(Error::shape(
            "clamped_action_sum",
            format!("need a background row plus action rows, got {rows}x{t}"),
        ));
    }
    let mut out = Matrix::zeros(1, t);
    for c in 0..t {
        let sum: f64 = (1..rows).map(|r| scores.get(r, c)).sum();
        out.set(0, c, sum.clamp(0.0, 1.0));
    }
    Ok(out)
}

/// Outer-Inner-Contrastive score of class `class` over the inclusive
/// snippet interval `[t_start, t_end]`: the mean score inside the interval
/// minus the mean over two flanking windows of length
/// `tau = max(1, round(len / 4))`, clipped at the sequence ends. When both
/// flanks are clipped away entirely the outer mean is 0.
pub fn oic_score(scores: &Matrix, t_start: usize, t_end: usize, class: usize) -> Result<f64> {
    let (rows, t) = scores.shape();
    if t_start > t_end || t_end >= t {
        return Err(Error::Data(format!(
            "invalid interval [{t_start}, {t_end}] for {t} snippets"
        )));
    }
    if class == 0 || class >= rows {
        return Err(Error::Data(format!(
            "class {class} outside 1..={}",
            rows.saturating_sub(1)
        )));
    }
    let len = t_end - t_start + 1;
    let tau = ((len as f64 / 4.0).round() as usize).max(1);

    let inner: f64 =
        (t_start..=t_end).map(|i| scores.get(class, i)).sum::<f64>() / len as f64;

    let left_lo = t_start.saturating_sub(tau);
    let mut outer_sum = 0.0;
    let mut outer_len = 0usize;
    for i in left_lo..t_start {
        outer_sum += scores.get(class, i);
        outer_len += 1;
    }
    for i in (t_end + 1)..(t_end + 1 + tau).min(t) {
        outer_sum += scores.get(class, i);
        outer_len += 1;
    }
    let outer = if outer_len == 0 { 0.0 } else { outer_sum / outer_len as f64 };
    Ok(inner - outer)
}

/// Deterministic total order used everywhere proposals are ranked:
/// descending score, then class, then interval position.
fn proposal_order(a: &TemporalProposal, b: &TemporalProposal) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.class.cmp(&b.class))
        .then(a.t_start.cmp(&b.t_start))
        .then(a.t_end.cmp(&b.t_end))
}

/// Per-class greedy non-maximum suppression: walk proposals by descending
/// score and drop any whose IoU with an already-kept same-class proposal
/// exceeds `iou_threshold`. The survivors come back in rank order.
pub fn nms(mut proposals: Vec<TemporalProposal>, iou_threshold: f64) -> Vec<TemporalProposal> {
    proposals.sort_by(proposal_order);
    let mut kept: Vec<TemporalProposal> = Vec::with_capacity(proposals.len());
    for p in proposals {
        let suppressed = kept.iter().any(|q| {
            q.class == p.class
                && interval_iou((q.start_sec, q.end_sec), (p.start_sec, p.end_sec))
                    > iou_threshold
        });
        if !suppressed {
            kept.push(p);
        }
    }
    kept
}

/// Run both streams through the model and fuse every output needed at
/// inference time.
pub fn forward_video(
    model: &TwoStreamModel,
    video: &LoadedVideo,
    beta: f64,
) -> Result<FusedOutputs> {
    struct StreamOutputs {
        attention: Matrix,
        base_scores: Matrix,
        subspace_scores: Matrix,
        video_fg: Matrix,
    }
    let run = |stream: Stream| -> Result<StreamOutputs> {
        let mut g = Graph::new();
        let feats = g.constant(video.features(stream).clone());
        let base = model.base(stream).forward(&mut g, &model.store, feats)?;
        let sub = model.subspace(stream).forward(&mut g, &model.store, feats)?;
        Ok(StreamOutputs {
            attention: g.value(base.attention).clone(),
            base_scores: g.value(base.snippet_scores).clone(),
            subspace_scores: g.value(sub.action_scores).clone(),
            video_fg: g.value(base.video_fg).clone(),
        })
    };
    let rgb = run(Stream::Rgb)?;
    let flow = run(Stream::Flow)?;
    Ok(FusedOutputs {
        attention: fuse(&rgb.attention, &flow.attention, beta)?,
        base_scores: fuse(&rgb.base_scores, &flow.base_scores, beta)?,
        subspace_scores: fuse(&rgb.subspace_scores, &flow.subspace_scores, beta)?,
        video_fg: fuse(&rgb.video_fg, &flow.video_fg, beta)?,
        beta,
    })
}

/// Candidate intervals from the enabled sources, deduplicated and sorted.
fn candidate_intervals(fused: &FusedOutputs, cfg: &InferenceConfig) -> Result<Vec<(usize, usize)>> {
    let mut intervals = Vec::new();
    if cfg.proposals_from_attention {
        intervals.extend(generate_proposals(&fused.attention, cfg.generation_threshold)?);
    }
    if cfg.proposals_from_scores {
        let signal = clamped_action_sum(&fused.subspace_scores)?;
        intervals.extend(generate_proposals(&signal, cfg.generation_threshold)?);
    }
    intervals.sort_unstable();
    intervals.dedup();
    Ok(intervals)
}

/// Localize one video with a trained model: generate candidate intervals,
/// score every candidate class on each, drop nonpositive scores, and apply
/// NMS. Results come back in rank order.
pub fn localize_video(
    model: &TwoStreamModel,
    video: &LoadedVideo,
    cfg: &InferenceConfig,
) -> Result<Vec<TemporalProposal>> {
    cfg.validate()?;
    let fused = forward_video(model, video, cfg.beta)?;
    let num_actions = model.dims.num_actions;

    let classes: Vec<usize> = (1..=num_actions)
        .filter(|&c| fused.video_fg.get(c, 0) > cfg.class_threshold)
        .collect();
    if classes.is_empty() {
        return Ok(Vec::new());
    }
    let intervals = candidate_intervals(&fused, cfg)?;
    let scoring = if cfg.score_with_subspace {
        &fused.subspace_scores
    } else {
        &fused.base_scores
    };

    let d = video.record.snippet_duration;
    let mut proposals = Vec::new();
    for &(t_start, t_end) in &intervals {
        for &class in &classes {
            let score = oic_score(scoring, t_start, t_end, class)?;
            if score <= 0.0 {
                continue;
            }
            proposals.push(TemporalProposal {
                t_start,
                t_end,
                class,
                score,
                start_sec: t_start as f64 * d,
                end_sec: (t_end + 1) as f64 * d,
            });
        }
    }
    Ok(nms(proposals, cfg.nms_iou))
}

/// Localize every video and flatten the results into detection rows, in
/// video order.
pub fn localize_videos(
    model: &TwoStreamModel,
    videos: &[LoadedVideo],
    cfg: &InferenceConfig,
) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for video in videos {
        for p in localize_video(model, video, cfg)? {
            out.push(Detection {
                video_id: video.record.video_id.clone(),
                class: p.class,
                start_sec: p.start_sec,
                end_sec: p.end_sec,
                score: p.score,
            });
        }
    }
    Ok(out)
}
