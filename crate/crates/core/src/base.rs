//! Per-stream base module: snippet attention, attention-weighted pooling
//! into foreground/background video features, and a classifier shared
//! between video-level and snippet-level predictions.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Matrix, ParamStore, Reduction, Var};
use crate::error::{Error, Result};
use crate::model::normal_matrix;

/// Attention plus classification head for one stream.
///
/// All parameters live in a [`ParamStore`] under `{prefix}.att.*` and
/// `{prefix}.cls.*`; the module itself is stateless. Class scores have
/// `num_actions + 1` rows: row 0 is the background class, rows `1..=N`
/// are actions.
#[derive(Debug, Clone)]
pub struct BaseModule {
    pub prefix: String,
    pub input_dim: usize,
    pub num_actions: usize,
}

/// Variables of one forward pass through the base module.
pub struct BaseForward {
    /// `[1 x T]` snippet attention in (0,1).
    pub attention: Var,
    /// `[D x 1]` attention-weighted foreground feature.
    pub foreground: Var,
    /// `[D x 1]` complement-weighted background feature.
    pub background: Var,
    /// `[(N+1) x 1]` video-level scores of the foreground feature.
    pub video_fg: Var,
    /// `[(N+1) x 1]` video-level scores of the background feature.
    pub video_bg: Var,
    /// `[(N+1) x T]` per-snippet scores from the same classifier.
    pub snippet_scores: Var,
}

struct BaseVars {
    att_w: Var,
    att_b: Var,
    cls_w: Var,
    cls_b: Var,
}

impl BaseModule {
    pub fn new(prefix: impl Into<String>, input_dim: usize, num_actions: usize) -> Result<Self> {
        if input_dim == 0 || num_actions == 0 {
            return Err(Error::Config(format!(
                "base module needs positive dims, got input_dim={input_dim}, num_actions={num_actions}"
            )));
        }
        Ok(BaseModule {
            prefix: prefix.into(),
            input_dim,
            num_actions,
        })
    }

    pub fn param_names(&self) -> Vec<String> {
        ["att.w", "att.b", "cls.w", "cls.b"]
            .iter()
            .map(|s| format!("{}.{s}", self.prefix))
            .collect()
    }

    /// Attention bias initial value: the prior log-odds that a snippet with
    /// no recognized evidence is foreground. The trainer holds this fixed;
    /// see `train_from`.
    pub const ATTENTION_PRIOR: f64 = -2.0;
    /// Classifier bias initial value. Must start strictly below
    /// [`Self::ATTENTION_PRIOR`]: with attention at prior `p`, a labeled
    /// class's score gradient is `-(1-s)·p·m + s·(1-p)·m` for classifier
    /// prior `s` and mean feature `m`, which aligns the row with the video's
    /// content only when `s < p`. At `s = p` the foreground and background
    /// pulls cancel exactly, and above it the row anti-aligns and attention
    /// then flees the class evidence.
    pub const CLASSIFIER_PRIOR: f64 = -3.0;

    /// Register freshly initialized parameters: centered normal weights with
    /// std `1/sqrt(fan_in)`, biases at the priors above. Draw order is
    /// fixed, so a given RNG state always produces the same initialization.
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        let d = self.input_dim;
        let n = self.num_actions;
        let std = 1.0 / (d as f64).sqrt();
        store.register(&format!("{}.att.w", self.prefix), normal_matrix(rng, 1, d, std))?;
        store.register(
            &format!("{}.att.b", self.prefix),
            Matrix::filled(1, 1, Self::ATTENTION_PRIOR),
        )?;
        store.register(&format!("{}.cls.w", self.prefix), normal_matrix(rng, n + 1, d, std))?;
        store.register(
            &format!("{}.cls.b", self.prefix),
            Matrix::filled(n + 1, 1, Self::CLASSIFIER_PRIOR),
        )?;
        Ok(())
    }

    fn bind(&self, g: &mut Graph, store: &ParamStore) -> Result<BaseVars> {
        Ok(BaseVars {
            att_w: g.param(store, &format!("{}.att.w", self.prefix))?,
            att_b: g.param(store, &format!("{}.att.b", self.prefix))?,
            cls_w: g.param(store, &format!("{}.cls.w", self.prefix))?,
            cls_b: g.param(store, &format!("{}.cls.b", self.prefix))?,
        })
    }

    fn attention_with(&self, g: &mut Graph, vars: &BaseVars, features: Var) -> Result<Var> {
        let z = g.affine(vars.att_w, vars.att_b, features)?;
        Ok(g.sigmoid(z))
    }

    fn classify_with(&self, g: &mut Graph, vars: &BaseVars, features: Var) -> Result<Var> {
        let z = g.affine(vars.cls_w, vars.cls_b, features)?;
        Ok(g.sigmoid(z))
    }

    /// `[1 x T]` per-snippet foreground attention.
    pub fn attention(&self, g: &mut Graph, store: &ParamStore, features: Var) -> Result<Var> {
        let vars = self.bind(g, store)?;
        self.attention_with(g, &vars, features)
    }

    /// Per-class sigmoid scores for each column of `features`. Used both for
    /// pooled video features (`T = 1`) and snippet matrices — identical code
    /// path, so the two are consistent by construction.
    pub fn classify(&self, g: &mut Graph, store: &ParamStore, features: Var) -> Result<Var> {
        let vars = self.bind(g, store)?;
        self.classify_with(g, &vars, features)
    }

    /// Full forward pass, binding each parameter once.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, features: Var) -> Result<BaseForward> {
        let vars = self.bind(g, store)?;
        let attention = self.attention_with(g, &vars, features)?;
        let (foreground, background) = pool_foreground_background(g, features, attention)?;
        let video_fg = self.classify_with(g, &vars, foreground)?;
        let video_bg = self.classify_with(g, &vars, background)?;
        let snippet_scores = self.classify_with(g, &vars, features)?;
        Ok(BaseForward {
            attention,
            foreground,
            background,
            video_fg,
            video_bg,
            snippet_scores,
        })
    }
}

/// Attention-weighted temporal average pooling:
/// `f_fg = (1/T) Σ_t a(t) F(t)` and `f_bg = (1/T) Σ_t (1 - a(t)) F(t)`.
///
/// By construction `f_fg + f_bg` equals the column mean of `F` for any
/// attention vector.
pub fn pool_foreground_background(
    g: &mut Graph,
    features: Var,
    attention: Var,
) -> Result<(Var, Var)> {
    let (rows, t) = g.value(attention).shape();
    let ft = g.value(features).cols();
    if rows != 1 || t != ft {
        return Err(Error::shape(
            "pool_foreground_background",
            format!("attention {rows}x{t} vs features with {ft} snippets"),
        ));
    }
    let inv_t = 1.0 / t as f64;
    let at = g.transpose(attention);
    let fg_sum = g.matmul(features, at)?;
    let fg = g.scale(fg_sum, inv_t);
    let neg = g.scale(attention, -1.0);
    let complement = g.add_scalar(neg, 1.0);
    let ct = g.transpose(complement);
    let bg_sum = g.matmul(features, ct)?;
    let bg = g.scale(bg_sum, inv_t);
    Ok((fg, bg))
}

/// Video-level supervision for the base module: binary cross-entropy summed
/// over the constrained entries of both pooled score vectors.
///
/// `video_fg` is pushed toward 1 on labeled classes and 0 everywhere else
/// (including background); `video_bg` is pushed toward 1 on background and 0
/// on labeled classes, with unlabeled action classes left unconstrained.
pub fn base_loss(
    g: &mut Graph,
    video_fg: Var,
    video_bg: Var,
    labels: &[usize],
    num_actions: usize,
) -> Result<Var> {
    let n = num_actions;
    let shape = (n + 1, 1);
    if g.value(video_fg).shape() != shape || g.value(video_bg).shape() != shape {
        return Err(Error::shape(
            "base_loss",
            format!(
                "expected {shape:?} score vectors, got {:?} and {:?}",
                g.value(video_fg).shape(),
                g.value(video_bg).shape(),
            ),
        ));
    }
    if labels.is_empty() {
        return Err(Error::Data("base_loss requires a nonempty label set".to_string()));
    }
    if labels.iter().any(|&l| l == 0 || l > n) {
        return Err(Error::Data(format!(
            "base_loss labels must be in 1..={n}, got {labels:?}"
        )));
    }

    let mut fg_target = Matrix::zeros(n + 1, 1);
    let fg_mask = Matrix::filled(n + 1, 1, 1.0);
    let mut bg_target = Matrix::zeros(n + 1, 1);
    let mut bg_mask = Matrix::zeros(n + 1, 1);
    bg_target.set(0, 0, 1.0);
    bg_mask.set(0, 0, 1.0);
    for &l in labels {
        fg_target.set(l, 0, 1.0);
        bg_mask.set(l, 0, 1.0);
    }

    let fg_loss = g.binary_cross_entropy(video_fg, &fg_target, &fg_mask, Reduction::Sum)?;
    let bg_loss = g.binary_cross_entropy(video_bg, &bg_target, &bg_mask, Reduction::Sum)?;
    g.add(fg_loss, bg_loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn zeroed_module(d: usize, n: usize) -> (BaseModule, ParamStore) {
        let module = BaseModule::new("s.base", d, n).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        module.init_params(&mut store, &mut rng).unwrap();
        for name in module.param_names() {
            let shape = store.value(&name).unwrap().shape();
            store.set_value(&name, Matrix::zeros(shape.0, shape.1)).unwrap();
        }
        (module, store)
    }

    #[test]
    fn zero_params_give_half_attention_and_scores() {
        let (module, store) = zeroed_module(3, 2);
        let mut g = Graph::new();
        let f = g.constant(Matrix::from_fn(3, 5, |r, c| (r + c) as f64));
        let fwd = module.forward(&mut g, &store, f).unwrap();
        assert_eq!(g.value(fwd.attention).shape(), (1, 5));
        assert!(g.value(fwd.attention).data().iter().all(|&v| v == 0.5));
        assert!(g.value(fwd.snippet_scores).data().iter().all(|&v| v == 0.5));
        assert_eq!(g.value(fwd.video_fg).shape(), (3, 1));
    }

    #[test]
    fn single_snippet_video_works() {
        let (module, store) = zeroed_module(4, 1);
        let mut g = Graph::new();
        let f = g.constant(Matrix::col_vector(&[1.0, -2.0, 0.5, 3.0]));
        let a = module.attention(&mut g, &store, f).unwrap();
        assert_eq!(g.value(a).shape(), (1, 1));
    }

    #[test]
    fn full_attention_pools_column_mean_and_zero_background() {
        let mut g = Graph::new();
        let f = g.constant(Matrix::from_rows(&[vec![1.0, 3.0], vec![-2.0, 4.0]]).unwrap());
        // attention of exactly 1 is outside sigmoid range but pool itself
        // accepts any weights; use it to pin the algebra.
        let a = g.constant(Matrix::row_vector(&[1.0, 1.0]));
        let (fg, bg) = pool_foreground_background(&mut g, f, a).unwrap();
        assert_eq!(g.value(fg).data(), &[2.0, 1.0]);
        assert!(g.value(bg).all_zero());
    }

    #[test]
    fn fg_plus_bg_is_column_mean_for_any_attention() {
        let mut g = Graph::new();
        let f = g.constant(Matrix::from_fn(3, 7, |r, c| ((r * 31 + c * 17) % 11) as f64 - 5.0));
        let a = g.constant(Matrix::from_fn(1, 7, |_, c| (c as f64 * 0.13).fract()));
        let (fg, bg) = pool_foreground_background(&mut g, f, a).unwrap();
        let total = g.add(fg, bg).unwrap();
        let fv = g.value(f).clone();
        for r in 0..3 {
            let mean = fv.row(r).iter().sum::<f64>() / 7.0;
            assert!((g.value(total).get(r, 0) - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_rejects_mismatched_lengths() {
        let mut g = Graph::new();
        let f = g.constant(Matrix::zeros(3, 7));
        let a = g.constant(Matrix::zeros(1, 6));
        assert!(pool_foreground_background(&mut g, f, a).is_err());
    }

    #[test]
    fn snippet_scores_equal_per_column_video_scores() {
        let module = BaseModule::new("s.base", 4, 3).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        module.init_params(&mut store, &mut rng).unwrap();
        let features = Matrix::from_fn(4, 6, |r, c| ((r * 13 + c * 7) % 9) as f64 * 0.3 - 1.0);

        let mut g = Graph::new();
        let f = g.constant(features.clone());
        let all = module.classify(&mut g, &store, f).unwrap();
        for t in 0..6 {
            let mut g2 = Graph::new();
            let col = g2.constant(Matrix::col_vector(&features.col(t)));
            let one = module.classify(&mut g2, &store, col).unwrap();
            for r in 0..4 {
                assert_eq!(g.value(all).get(r, t), g2.value(one).get(r, 0));
            }
        }
    }

    #[test]
    fn base_loss_at_half_counts_constrained_entries() {
        // N = 1, one label: video_fg constrains both rows, video_bg
        // constrains background + the labeled class -> 4 terms of ln 2.
        let mut g = Graph::new();
        let fg = g.constant(Matrix::filled(2, 1, 0.5));
        let bg = g.constant(Matrix::filled(2, 1, 0.5));
        let loss = base_loss(&mut g, fg, bg, &[1], 1).unwrap();
        assert!((g.value(loss).get(0, 0) - 4.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn base_loss_ignores_unlabeled_classes_in_background_vector() {
        // N = 2, label {1}: the class-2 entry of video_bg is unconstrained,
        // so moving it must not change the loss.
        let mut g = Graph::new();
        let fg = g.constant(Matrix::col_vector(&[0.2, 0.9, 0.1]));
        let bg1 = g.constant(Matrix::col_vector(&[0.8, 0.1, 0.99]));
        let bg2 = g.constant(Matrix::col_vector(&[0.8, 0.1, 0.01]));
        let l1 = base_loss(&mut g, fg, bg1, &[1], 2).unwrap();
        let l2 = base_loss(&mut g, fg, bg2, &[1], 2).unwrap();
        assert_eq!(g.value(l1).get(0, 0), g.value(l2).get(0, 0));
    }

    #[test]
    fn base_loss_near_zero_for_near_perfect_predictions() {
        let mut g = Graph::new();
        let fg = g.constant(Matrix::col_vector(&[1e-9, 1.0 - 1e-9]));
        let bg = g.constant(Matrix::col_vector(&[1.0 - 1e-9, 1e-9]));
        let loss = base_loss(&mut g, fg, bg, &[1], 1).unwrap();
        assert!(g.value(loss).get(0, 0) < 1e-6);
    }

    #[test]
    fn base_loss_rejects_empty_or_bad_labels() {
        let mut g = Graph::new();
        let fg = g.constant(Matrix::filled(2, 1, 0.5));
        let bg = g.constant(Matrix::filled(2, 1, 0.5));
        assert!(base_loss(&mut g, fg, bg, &[], 1).is_err());
        assert!(base_loss(&mut g, fg, bg, &[2], 1).is_err());
    }
}
