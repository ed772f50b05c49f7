//! Deterministic synthetic two-stream corpora with planted action, context,
//! and background structure.
//!
//! Each video carries one action class. Action snippets have the class
//! signature in both streams; appearance-context snippets flank the actions
//! and carry only an RGB signature that is strongly correlated with the
//! class signature (the trap that makes context look like action to an
//! appearance-driven model); motion-context snippets carry only a
//! class-agnostic flow signature; background snippets are pure noise.
//! Ground truth covers exactly the action snippets, while every planted
//! segment kind is recorded in a diagnostics side channel.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::data::{
    write_features, write_manifest, DatasetManifest, GroundTruthSegment, LoadedVideo, Split,
    Stream, VideoRecord,
};
use crate::error::{Error, Result};
use crate::model::substream;

/// Cosine similarity between a class's RGB context signature and its action
/// signature; cross-class similarity is exactly 0.
pub const CONTEXT_ACTION_COSINE: f64 = 0.7;

/// Cosine similarity between the non-action motion signature and the mean of
/// the flow action signatures. Non-action motion excites flow features the
/// same way action motion does, just without any class identity — that is
/// what makes it a trap for class-agnostic attention. Kept moderate: the
/// shared component also leaks into every video's foreground pool and sets
/// the floor under the unlabeled classes' video-level scores.
pub const MOTION_ACTION_COSINE: f64 = 0.4;

const MIN_ACTION_LEN: usize = 4;
const MAX_ACTION_LEN: usize = 10;
const MAX_INSTANCES: usize = 3;
/// Minimum snippets per gap between/around instance groups.
const MIN_GAP: usize = 2;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_actions: usize,
    pub train_videos: usize,
    pub test_videos: usize,
    pub min_snippets: usize,
    pub max_snippets: usize,
    /// Width of each stream's feature vectors.
    pub feature_dim: usize,
    pub seed: u64,
    /// Fraction of non-action snippets planted as context (split between
    /// appearance context and motion context); the rest are background.
    pub context_ratio: f64,
    pub noise_std: f64,
    pub action_strength: f64,
    pub context_strength: f64,
    pub motion_strength: f64,
    pub snippet_duration: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_actions: 4,
            train_videos: 80,
            test_videos: 40,
            min_snippets: 40,
            max_snippets: 80,
            feature_dim: 64,
            seed: 7,
            context_ratio: 0.5,
            noise_std: 0.06,
            action_strength: 1.0,
            context_strength: 1.0,
            motion_strength: 1.0,
            snippet_duration: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_actions == 0 {
            return Err(Error::Config("need at least one action class".to_string()));
        }
        if self.feature_dim < 2 * self.num_actions {
            return Err(Error::Config(format!(
                "feature_dim {} cannot hold separable signatures for {} classes (need at least {})",
                self.feature_dim,
                self.num_actions,
                2 * self.num_actions
            )));
        }
        if self.train_videos == 0 {
            return Err(Error::Config("need at least one training video".to_string()));
        }
        if self.min_snippets == 0 || self.min_snippets > self.max_snippets {
            return Err(Error::Config(format!(
                "invalid snippet range [{}, {}]",
                self.min_snippets, self.max_snippets
            )));
        }
        let minimal = MIN_ACTION_LEN + 2 * MIN_GAP;
        if self.min_snippets < minimal {
            return Err(Error::Config(format!(
                "videos of {} snippets cannot fit one action instance plus gaps (need {minimal})",
                self.min_snippets
            )));
        }
        if !(0.0..=1.0).contains(&self.context_ratio) {
            return Err(Error::Config(format!(
                "context_ratio must be in [0, 1], got {}",
                self.context_ratio
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!(
                "noise_std must be nonnegative, got {}",
                self.noise_std
            )));
        }
        for (name, v) in [
            ("action_strength", self.action_strength),
            ("context_strength", self.context_strength),
            ("motion_strength", self.motion_strength),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.snippet_duration > 0.0 && self.snippet_duration.is_finite()) {
            return Err(Error::Config(format!(
                "snippet_duration must be positive, got {}",
                self.snippet_duration
            )));
        }
        Ok(())
    }
}

/// What a snippet was planted as.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnippetKind {
    Action,
    Context,
    Motion,
    Background,
}

impl SnippetKind {
    pub fn name(self) -> &'static str {
        match self {
            SnippetKind::Action => "action",
            SnippetKind::Context => "context",
            SnippetKind::Motion => "motion",
            SnippetKind::Background => "background",
        }
    }
}

/// One planted run of same-kind snippets (inclusive indices).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedSegment {
    pub kind: SnippetKind,
    pub start: usize,
    pub end: usize,
}

pub struct GeneratedVideo {
    pub record: VideoRecord,
    pub rgb: Matrix,
    pub flow: Matrix,
    pub segments: Vec<PlantedSegment>,
}

pub struct GeneratedCorpus {
    pub manifest: DatasetManifest,
    pub videos: Vec<GeneratedVideo>,
}

/// RGB action signature of class `c` (1-based): the unit basis vector
/// `e_{c-1}`.
pub fn rgb_action_signature(class: usize, dim: usize) -> Matrix {
    basis(dim, class - 1)
}

/// RGB context signature of class `c`: a unit vector at cosine
/// [`CONTEXT_ACTION_COSINE`] to the class's action signature and orthogonal
/// to every other class's signatures.
pub fn rgb_context_signature(class: usize, num_actions: usize, dim: usize) -> Matrix {
    let mut v = Matrix::zeros(dim, 1);
    v.set(class - 1, 0, CONTEXT_ACTION_COSINE);
    let orth = (1.0 - CONTEXT_ACTION_COSINE * CONTEXT_ACTION_COSINE).sqrt();
    v.set(num_actions + class - 1, 0, orth);
    v
}

/// Flow action signature of class `c`: `e_{c-1}` in flow space.
pub fn flow_action_signature(class: usize, dim: usize) -> Matrix {
    basis(dim, class - 1)
}

/// Flow signature of class-agnostic non-action motion: a unit vector at
/// cosine [`MOTION_ACTION_COSINE`] to the mean flow action signature, with
/// its class-agnostic remainder on `e_N`.
pub fn flow_motion_signature(num_actions: usize, dim: usize) -> Matrix {
    let mut v = Matrix::zeros(dim, 1);
    let shared = MOTION_ACTION_COSINE / (num_actions as f64).sqrt();
    for c in 0..num_actions {
        v.set(c, 0, shared);
    }
    let orth = (1.0 - MOTION_ACTION_COSINE * MOTION_ACTION_COSINE).sqrt();
    v.set(num_actions, 0, orth);
    v
}

fn basis(dim: usize, index: usize) -> Matrix {
    let mut v = Matrix::zeros(dim, 1);
    v.set(index, 0, 1.0);
    v
}

/// Per-snippet kind layout of one video.
struct Layout {
    kinds: Vec<SnippetKind>,
}

impl Layout {
    fn segments(&self) -> Vec<PlantedSegment> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.kinds.len() {
            if i == self.kinds.len() || self.kinds[i] != self.kinds[start] {
                out.push(PlantedSegment {
                    kind: self.kinds[start],
                    start,
                    end: i - 1,
                });
                start = i;
            }
        }
        out
    }
}

/// Plan a timeline: background gaps around instance groups of
/// (context, action, context), with motion-context blocks centred in the
/// gaps. All draws come from `rng` in a fixed order.
fn plan_layout(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Layout> {
    let t = rng.random_range(cfg.min_snippets..=cfg.max_snippets);
    let minimal = MIN_ACTION_LEN + 2 * MIN_GAP;
    if t < minimal {
        return Err(Error::Config(format!(
            "video of {t} snippets cannot fit one action instance plus gaps (need {minimal})"
        )));
    }

    // how many instances fit if each takes a minimal action plus one gap
    let mut instances = rng.random_range(1..=MAX_INSTANCES);
    while instances > 1 && instances * MIN_ACTION_LEN + (instances + 1) * MIN_GAP > t {
        instances -= 1;
    }

    // action lengths, shrinking the cap so every remaining instance fits
    let gap_budget = (instances + 1) * MIN_GAP;
    let mut action_lens = Vec::with_capacity(instances);
    let mut remaining = t - gap_budget;
    for i in 0..instances {
        let others = (instances - 1 - i) * MIN_ACTION_LEN;
        let cap = MAX_ACTION_LEN.min(remaining - others);
        let len = rng.random_range(MIN_ACTION_LEN..=cap);
        action_lens.push(len);
        remaining -= len;
    }
    let total_action: usize = action_lens.iter().sum();
    let non_action = t - total_action;

    // split non-action snippets into context kinds and background
    let ctx_total = ((cfg.context_ratio * non_action as f64).round() as usize).min(non_action);
    let bg_total = non_action - ctx_total;
    if bg_total < gap_budget {
        // keep the minimum gap structure; give back context snippets
        return plan_with_counts(t, &action_lens, non_action - gap_budget, gap_budget, rng);
    }
    // two thirds appearance context, one third motion context
    let app_ctx = ctx_total - ctx_total / 3;
    plan_with_counts(t, &action_lens, app_ctx, bg_total.max(gap_budget), rng)
}

/// Assemble the snippet-kind sequence given the action lengths, the total
/// appearance-context budget, and the background budget; whatever remains
/// becomes motion context.
fn plan_with_counts(
    t: usize,
    action_lens: &[usize],
    app_ctx: usize,
    bg_total: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Layout> {
    let instances = action_lens.len();
    let total_action: usize = action_lens.iter().sum();
    let mot_ctx = t - total_action - app_ctx - bg_total;

    // appearance context spread over 2k flanks
    let flanks = 2 * instances;
    let mut flank_lens = vec![app_ctx / flanks; flanks];
    for fl in flank_lens.iter_mut().take(app_ctx % flanks) {
        *fl += 1;
    }
    // background spread over k+1 gaps, biased by a random rotation so gap
    // sizes vary between videos
    let gaps = instances + 1;
    let mut gap_lens = vec![bg_total / gaps; gaps];
    let rot = rng.random_range(0..gaps);
    for i in 0..bg_total % gaps {
        gap_lens[(rot + i) % gaps] += 1;
    }
    // motion blocks spread over the gaps the same way
    let mut mot_lens = vec![mot_ctx / gaps; gaps];
    for ml in mot_lens.iter_mut().take(mot_ctx % gaps) {
        *ml += 1;
    }

    let mut kinds = Vec::with_capacity(t);
    let push = |kind: SnippetKind, len: usize, kinds: &mut Vec<SnippetKind>| {
        kinds.extend(std::iter::repeat_n(kind, len));
    };
    for i in 0..instances {
        // gap i: background halves around a motion block
        let left = gap_lens[i] / 2;
        push(SnippetKind::Background, left, &mut kinds);
        push(SnippetKind::Motion, mot_lens[i], &mut kinds);
        push(SnippetKind::Background, gap_lens[i] - left, &mut kinds);
        push(SnippetKind::Context, flank_lens[2 * i], &mut kinds);
        push(SnippetKind::Action, action_lens[i], &mut kinds);
        push(SnippetKind::Context, flank_lens[2 * i + 1], &mut kinds);
    }
    let left = gap_lens[instances] / 2;
    push(SnippetKind::Background, left, &mut kinds);
    push(SnippetKind::Motion, mot_lens[instances], &mut kinds);
    push(SnippetKind::Background, gap_lens[instances] - left, &mut kinds);

    debug_assert_eq!(kinds.len(), t);
    Ok(Layout { kinds })
}

struct Signatures {
    rgb_action: Vec<Matrix>,
    rgb_context: Vec<Matrix>,
    flow_action: Vec<Matrix>,
    flow_motion: Matrix,
}

impl Signatures {
    fn new(cfg: &SynthConfig) -> Self {
        let n = cfg.num_actions;
        let d = cfg.feature_dim;
        Signatures {
            rgb_action: (1..=n).map(|c| rgb_action_signature(c, d)).collect(),
            rgb_context: (1..=n).map(|c| rgb_context_signature(c, n, d)).collect(),
            flow_action: (1..=n).map(|c| flow_action_signature(c, d)).collect(),
            flow_motion: flow_motion_signature(n, d),
        }
    }
}

fn synthesize_video(
    cfg: &SynthConfig,
    sigs: &Signatures,
    class: usize,
    layout: &Layout,
    rng: &mut ChaCha8Rng,
) -> Result<(Matrix, Matrix)> {
    let t = layout.kinds.len();
    let d = cfg.feature_dim;
    let noise = Normal::new(0.0, cfg.noise_std)
        .map_err(|e| Error::Config(format!("invalid noise_std: {e}")))?;
    let mut rgb = Matrix::zeros(d, t);
    let mut flow = Matrix::zeros(d, t);
    for (s, &kind) in layout.kinds.iter().enumerate() {
        let (rgb_sig, rgb_strength, flow_sig, flow_strength): (
            Option<&Matrix>,
            f64,
            Option<&Matrix>,
            f64,
        ) = match kind {
            SnippetKind::Action => (
                Some(&sigs.rgb_action[class - 1]),
                cfg.action_strength,
                Some(&sigs.flow_action[class - 1]),
                cfg.action_strength,
            ),
            SnippetKind::Context => (
                Some(&sigs.rgb_context[class - 1]),
                cfg.context_strength,
                None,
                0.0,
            ),
            SnippetKind::Motion => (None, 0.0, Some(&sigs.flow_motion), cfg.motion_strength),
            SnippetKind::Background => (None, 0.0, None, 0.0),
        };
        for r in 0..d {
            let base = rgb_sig.map_or(0.0, |m| rgb_strength * m.get(r, 0));
            rgb.set(r, s, base + noise.sample(rng));
        }
        for r in 0..d {
            let base = flow_sig.map_or(0.0, |m| flow_strength * m.get(r, 0));
            flow.set(r, s, base + noise.sample(rng));
        }
    }
    Ok((rgb, flow))
}

/// The priority rule an oracle uses to classify one snippet from its
/// planted-signature projections; exact on generated corpora because every
/// margin is many noise standard deviations wide.
pub fn classify_snippet(
    cfg: &SynthConfig,
    proj_rgb_action: f64,
    proj_rgb_context: f64,
    proj_flow_action: f64,
    proj_flow_motion: f64,
) -> SnippetKind {
    let half_a = cfg.action_strength / 2.0;
    if proj_rgb_action > half_a && proj_flow_action > half_a {
        SnippetKind::Action
    } else if proj_rgb_context > cfg.context_strength / 2.0 {
        SnippetKind::Context
    } else if proj_flow_motion > cfg.motion_strength / 2.0 {
        SnippetKind::Motion
    } else {
        SnippetKind::Background
    }
}

fn column_dot(features: &Matrix, col: usize, sig: &Matrix) -> f64 {
    (0..features.rows()).map(|r| features.get(r, col) * sig.get(r, 0)).sum()
}

/// Check that a linear probe on the planted signatures recovers every
/// snippet's kind. Runs once per generated corpus as a sanity gate.
fn verify_separability(cfg: &SynthConfig, sigs: &Signatures, videos: &[GeneratedVideo]) -> Result<()> {
    for v in videos {
        let class = v.record.labels[0];
        let mut kinds = vec![SnippetKind::Background; v.record.snippet_count];
        for seg in &v.segments {
            for k in kinds.iter_mut().take(seg.end + 1).skip(seg.start) {
                *k = seg.kind;
            }
        }
        for (s, &kind) in kinds.iter().enumerate() {
            let got = classify_snippet(
                cfg,
                column_dot(&v.rgb, s, &sigs.rgb_action[class - 1]),
                column_dot(&v.rgb, s, &sigs.rgb_context[class - 1]),
                column_dot(&v.flow, s, &sigs.flow_action[class - 1]),
                column_dot(&v.flow, s, &sigs.flow_motion),
            );
            if got != kind {
                return Err(Error::Data(format!(
                    "{}: planted {} snippet {s} reads back as {}; noise level breaks separability",
                    v.record.video_id,
                    kind.name(),
                    got.name()
                )));
            }
        }
    }
    Ok(())
}

/// Generate a full corpus in memory. Pure function of the config.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<GeneratedCorpus> {
    cfg.validate()?;
    let sigs = Signatures::new(cfg);
    let gen_seed = substream(cfg.seed, "generator");
    let class_names: Vec<String> = (1..=cfg.num_actions)
        .map(|c| format!("action_{c:02}"))
        .collect();

    let mut videos = Vec::with_capacity(cfg.train_videos + cfg.test_videos);
    let splits = [
        (Split::Train, "train", cfg.train_videos),
        (Split::Test, "test", cfg.test_videos),
    ];
    for (split, prefix, count) in splits {
        for i in 0..count {
            let video_id = format!("{prefix}_{i:04}");
            let class = 1 + i % cfg.num_actions;
            let mut rng = ChaCha8Rng::seed_from_u64(substream(gen_seed, &video_id));
            let layout = plan_layout(cfg, &mut rng)?;
            let (rgb, flow) = synthesize_video(cfg, &sigs, class, &layout, &mut rng)?;
            let segments = layout.segments();
            let ground_truth = segments
                .iter()
                .filter(|seg| seg.kind == SnippetKind::Action)
                .map(|seg| GroundTruthSegment {
                    start: seg.start as f64 * cfg.snippet_duration,
                    end: (seg.end + 1) as f64 * cfg.snippet_duration,
                    class,
                })
                .collect();
            videos.push(GeneratedVideo {
                record: VideoRecord {
                    video_id: video_id.clone(),
                    split,
                    snippet_count: layout.kinds.len(),
                    snippet_duration: cfg.snippet_duration,
                    labels: vec![class],
                    rgb_features: format!("features/{video_id}_rgb.bin"),
                    flow_features: format!("features/{video_id}_flow.bin"),
                    ground_truth,
                },
                rgb,
                flow,
                segments,
            });
        }
    }
    verify_separability(cfg, &sigs, &videos)?;

    let manifest = DatasetManifest {
        class_names,
        videos: videos.iter().map(|v| v.record.clone()).collect(),
    };
    Ok(GeneratedCorpus { manifest, videos })
}

impl GeneratedCorpus {
    /// Clone a split's videos in the in-memory loaded form.
    pub fn loaded_videos(&self, split: Split) -> Vec<LoadedVideo> {
        self.videos
            .iter()
            .filter(|v| v.record.split == split)
            .map(|v| LoadedVideo {
                record: v.record.clone(),
                rgb: v.rgb.clone(),
                flow: v.flow.clone(),
            })
            .collect()
    }

    /// Write manifest, feature files, and the planted-segment diagnostics
    /// under `dir`, in the on-disk dataset format.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        let features_dir = dir.join("features");
        std::fs::create_dir_all(&features_dir).map_err(|e| Error::io(&features_dir, e))?;
        write_manifest(&dir.join("manifest.json"), &self.manifest)?;
        for v in &self.videos {
            for (stream, m) in [(Stream::Rgb, &v.rgb), (Stream::Flow, &v.flow)] {
                let rel = match stream {
                    Stream::Rgb => &v.record.rgb_features,
                    Stream::Flow => &v.record.flow_features,
                };
                write_features(&dir.join(rel), m)?;
            }
        }
        let diag_path = dir.join("diagnostics.csv");
        let mut w = csv::Writer::from_path(&diag_path)
            .map_err(|e| Error::format(&diag_path, e.to_string()))?;
        w.write_record(["video_id", "kind", "start_snippet", "end_snippet"])
            .map_err(|e| Error::format(&diag_path, e.to_string()))?;
        for v in &self.videos {
            for seg in &v.segments {
                w.write_record([
                    v.record.video_id.as_str(),
                    seg.kind.name(),
                    &seg.start.to_string(),
                    &seg.end.to_string(),
                ])
                .map_err(|e| Error::format(&diag_path, e.to_string()))?;
            }
        }
        w.flush().map_err(|e| Error::io(&diag_path, e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> SynthConfig {
        SynthConfig {
            num_actions: 2,
            train_videos: 4,
            test_videos: 2,
            min_snippets: 20,
            max_snippets: 30,
            feature_dim: 8,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn signatures_have_the_planted_geometry() {
        let n = 4;
        let d = 16;
        for c in 1..=n {
            let a = rgb_action_signature(c, d);
            let ctx = rgb_context_signature(c, n, d);
            let norm = |m: &Matrix| m.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm(&a) - 1.0).abs() < 1e-12);
            assert!((norm(&ctx) - 1.0).abs() < 1e-12);
            let dot: f64 = (0..d).map(|r| a.get(r, 0) * ctx.get(r, 0)).sum();
            assert!((dot - CONTEXT_ACTION_COSINE).abs() < 1e-12);
            for other in 1..=n {
                if other == c {
                    continue;
                }
                let b = rgb_action_signature(other, d);
                let cross: f64 = (0..d).map(|r| b.get(r, 0) * ctx.get(r, 0)).sum();
                assert_eq!(cross, 0.0);
                let cross_a: f64 = (0..d).map(|r| b.get(r, 0) * a.get(r, 0)).sum();
                assert_eq!(cross_a, 0.0);
            }
        }
        // motion signature: unit norm, equal positive similarity to every
        // flow action signature, totalling the designed cosine to their mean
        let m = flow_motion_signature(n, d);
        let norm_m: f64 = m.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm_m - 1.0).abs() < 1e-12);
        for c in 1..=n {
            let f = flow_action_signature(c, d);
            let dot: f64 = (0..d).map(|r| f.get(r, 0) * m.get(r, 0)).sum();
            assert!((dot - MOTION_ACTION_COSINE / (n as f64).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = tiny_config();
        let a = generate_corpus(&cfg).unwrap();
        let b = generate_corpus(&cfg).unwrap();
        assert_eq!(a.videos.len(), b.videos.len());
        for (va, vb) in a.videos.iter().zip(&b.videos) {
            assert_eq!(va.record, vb.record);
            assert_eq!(va.rgb.data(), vb.rgb.data());
            assert_eq!(va.flow.data(), vb.flow.data());
            assert_eq!(va.segments, vb.segments);
        }
        let c = generate_corpus(&SynthConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.videos[0].rgb.data(), c.videos[0].rgb.data());
    }

    #[test]
    fn ground_truth_covers_exactly_action_segments() {
        let corpus = generate_corpus(&tiny_config()).unwrap();
        for v in &corpus.videos {
            let actions: Vec<&PlantedSegment> = v
                .segments
                .iter()
                .filter(|s| s.kind == SnippetKind::Action)
                .collect();
            assert!(!actions.is_empty());
            assert_eq!(actions.len(), v.record.ground_truth.len());
            for (seg, gt) in actions.iter().zip(&v.record.ground_truth) {
                assert_eq!(gt.start, seg.start as f64 * v.record.snippet_duration);
                assert_eq!(gt.end, (seg.end + 1) as f64 * v.record.snippet_duration);
                assert_eq!(gt.class, v.record.labels[0]);
                let len = seg.end - seg.start + 1;
                assert!((MIN_ACTION_LEN..=MAX_ACTION_LEN).contains(&len));
            }
        }
    }

    #[test]
    fn segments_tile_the_video() {
        let corpus = generate_corpus(&tiny_config()).unwrap();
        for v in &corpus.videos {
            let mut cursor = 0;
            for seg in &v.segments {
                assert_eq!(seg.start, cursor);
                assert!(seg.end >= seg.start);
                cursor = seg.end + 1;
            }
            assert_eq!(cursor, v.record.snippet_count);
        }
    }

    #[test]
    fn context_ratio_shapes_the_non_action_mass() {
        // longer videos keep the background budget above the minimum gap
        // structure, so the ratio acts directly
        let base = SynthConfig {
            min_snippets: 60,
            max_snippets: 80,
            ..tiny_config()
        };
        let count_kinds = |cfg: &SynthConfig| -> (usize, usize) {
            let corpus = generate_corpus(cfg).unwrap();
            let mut ctx = 0;
            let mut non_action = 0;
            for v in &corpus.videos {
                for seg in &v.segments {
                    let len = seg.end - seg.start + 1;
                    match seg.kind {
                        SnippetKind::Action => {}
                        SnippetKind::Context | SnippetKind::Motion => {
                            ctx += len;
                            non_action += len;
                        }
                        SnippetKind::Background => non_action += len,
                    }
                }
            }
            (ctx, non_action)
        };
        let (ctx_low, non_low) = count_kinds(&SynthConfig { context_ratio: 0.2, ..base.clone() });
        let (ctx_high, non_high) = count_kinds(&SynthConfig { context_ratio: 0.8, ..base });
        let frac_low = ctx_low as f64 / non_low as f64;
        let frac_high = ctx_high as f64 / non_high as f64;
        assert!(frac_low < 0.35, "low ratio produced {frac_low}");
        assert!(frac_high > 0.5, "high ratio produced {frac_high}");
    }

    #[test]
    fn corpus_round_trips_through_the_dataset_loader() {
        let cfg = tiny_config();
        let corpus = generate_corpus(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        corpus.write_to_dir(dir.path()).unwrap();
        let ds = crate::data::Dataset::load(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(ds.manifest.class_names, corpus.manifest.class_names);
        let train = ds.load_videos(Split::Train).unwrap();
        assert_eq!(train.len(), cfg.train_videos);
        // features survive the f32 narrowing to within f32 precision
        let mem = corpus.loaded_videos(Split::Train);
        for (disk, ram) in train.iter().zip(&mem) {
            assert_eq!(disk.record.video_id, ram.record.video_id);
            assert!(disk.rgb.max_abs_diff(&ram.rgb).unwrap() < 1e-6);
        }
        let diag = std::fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
        assert!(diag.starts_with("video_id,kind,start_snippet,end_snippet"));
        assert!(diag.contains("context"));
    }

    #[test]
    fn every_class_appears_in_both_splits() {
        let corpus = generate_corpus(&tiny_config()).unwrap();
        for split in [Split::Train, Split::Test] {
            let mut seen = vec![false; 2];
            for v in corpus.videos.iter().filter(|v| v.record.split == split) {
                seen[v.record.labels[0] - 1] = true;
            }
            assert!(seen.iter().all(|&s| s), "split {split:?} missing a class");
        }
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        let bad = SynthConfig { min_snippets: 5, max_snippets: 6, ..tiny_config() };
        assert!(generate_corpus(&bad).is_err());
        let narrow = SynthConfig { feature_dim: 3, ..tiny_config() };
        assert!(generate_corpus(&narrow).is_err());
        let bad_ratio = SynthConfig { context_ratio: 1.5, ..tiny_config() };
        assert!(generate_corpus(&bad_ratio).is_err());
    }
}
