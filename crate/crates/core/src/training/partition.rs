use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// Cross-stream grouping of snippet indices by attention agreement.
///
/// With thresholds `θ_h = 0.5 + α` and `θ_l = 0.5 - α` (strict
/// inequalities):
///
/// * `action`: both streams above `θ_h` — consistently foreground;
/// * `context_rgb`: appearance above `θ_h` but motion below `θ_l` — looks
///   like the action but does not move like it (scene context);
/// * `context_flow`: motion above `θ_h` but appearance below `θ_l`;
/// * `background`: both streams below `θ_l`.
///
/// Snippets with either attention inside `[θ_l, θ_h]` belong to no set, so
/// the four sets are pairwise disjoint but need not cover the video.
#[derive(Debug, Clone, PartialEq)]
pub struct SnippetPartition {
    pub action: Vec<usize>,
    pub context_rgb: Vec<usize>,
    pub context_flow: Vec<usize>,
    pub background: Vec<usize>,
    pub theta_high: f64,
    pub theta_low: f64,
}

impl SnippetPartition {
    /// `context_rgb ∪ context_flow`, ascending.
    pub fn context_union(&self) -> Vec<usize> {
        let mut u: Vec<usize> = self
            .context_rgb
            .iter()
            .chain(&self.context_flow)
            .copied()
            .collect();
        u.sort_unstable();
        u
    }

    /// Every partitioned index with its kind id (0 action, 1 context_rgb,
    /// 2 context_flow, 3 background) — the auxiliary task's labels.
    pub fn labeled(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.len());
        for (kind, set) in [
            &self.action,
            &self.context_rgb,
            &self.context_flow,
            &self.background,
        ]
        .iter()
        .enumerate()
        {
            out.extend(set.iter().map(|&t| (t, kind)));
        }
        out.sort_unstable();
        out
    }

    /// Total number of partitioned snippets.
    pub fn len(&self) -> usize {
        self.action.len() + self.context_rgb.len() + self.context_flow.len() + self.background.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Partition snippets by the four strict attention predicates.
///
/// `a_rgb` and `a_flow` are `[1 x T]` attention rows; `alpha` must lie in
/// `(0, 0.5)` so that `θ_l > 0` and `θ_h < 1`.
pub fn partition_snippets(a_rgb: &Matrix, a_flow: &Matrix, alpha: f64) -> Result<SnippetPartition> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::Config(format!(
            "partition alpha must be in (0, 0.5), got {alpha}"
        )));
    }
    if a_rgb.rows() != 1 || a_flow.rows() != 1 || a_rgb.cols() != a_flow.cols() {
        return Err(Error::shape(
            "partition_snippets",
            format!("{:?} vs {:?}", a_rgb.shape(), a_flow.shape()),
        ));
    }
    let theta_high = 0.5 + alpha;
    let theta_low = 0.5 - alpha;
    let mut partition = SnippetPartition {
        action: Vec::new(),
        context_rgb: Vec::new(),
        context_flow: Vec::new(),
        background: Vec::new(),
        theta_high,
        theta_low,
    };
    for t in 0..a_rgb.cols() {
        let r = a_rgb.get(0, t);
        let f = a_flow.get(0, t);
        if r > theta_high && f > theta_high {
            partition.action.push(t);
        } else if r > theta_high && f < theta_low {
            partition.context_rgb.push(t);
        } else if r < theta_low && f > theta_high {
            partition.context_flow.push(t);
        } else if r < theta_low && f < theta_low {
            partition.background.push(t);
        }
    }
    Ok(partition)
}
