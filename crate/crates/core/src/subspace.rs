//! Per-stream subspace module: a learned transform into a low-dimensional
//! space whose first half is the *action* subspace and second half the
//! *context* subspace, an optional temporal residual block for cross-snippet
//! information, separate classifiers per subspace, and a four-way auxiliary
//! head over the enhanced features.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Matrix, ParamStore, Var};
use crate::error::{Error, Result};
use crate::model::normal_matrix;

/// Kernel width of both temporal convolutions in the residual block.
pub const TRESM_KERNEL_WIDTH: usize = 3;

/// Transform + residual block + subspace classifiers for one stream.
///
/// The transform maps `[D_o x T]` features to `[2D x T]`; rows `0..D` form
/// the action subspace, rows `D..2D` the context subspace. Parameters live
/// under `{prefix}.transform.*`, `{prefix}.res1/res2.*`, `{prefix}.cls_a.*`,
/// `{prefix}.cls_c.*`, and `{prefix}.four.*`.
#[derive(Debug, Clone)]
pub struct SubspaceModule {
    pub prefix: String,
    pub input_dim: usize,
    /// Width `D` of each subspace; the transform emits `2D` rows.
    pub subspace_dim: usize,
    pub num_actions: usize,
    /// When false the residual block is skipped entirely and the enhanced
    /// features are the transformed features, bit for bit.
    pub use_tresm: bool,
}

pub struct SubspaceForward {
    /// `[2D x T]` transformed features `F`.
    pub combined: Var,
    /// `[2D x T]` residual-enhanced features `F_r` (equals `combined` when
    /// the residual block is disabled).
    pub enhanced: Var,
    /// `[D x T]` action-subspace rows of `enhanced`.
    pub action: Var,
    /// `[D x T]` context-subspace rows of `enhanced`.
    pub context: Var,
    /// `[(N+1) x T]` sigmoid scores from the action-subspace classifier.
    pub action_scores: Var,
    /// `[(N+1) x T]` sigmoid scores from the context-subspace classifier.
    pub context_scores: Var,
    /// `[4 x T]` softmax over snippet kinds (action / two context kinds /
    /// background), the auxiliary task's output.
    pub kind_scores: Var,
}

struct SubspaceVars {
    transform_w: Var,
    transform_b: Var,
    res1_k: Var,
    res1_b: Var,
    res2_k: Var,
    res2_b: Var,
    cls_a_w: Var,
    cls_a_b: Var,
    cls_c_w: Var,
    cls_c_b: Var,
    four_w: Var,
    four_b: Var,
}

impl SubspaceModule {
    pub fn new(
        prefix: impl Into<String>,
        input_dim: usize,
        subspace_dim: usize,
        num_actions: usize,
        use_tresm: bool,
    ) -> Result<Self> {
        if input_dim == 0 || subspace_dim == 0 || num_actions == 0 {
            return Err(Error::Config(format!(
                "subspace module needs positive dims, got input_dim={input_dim}, \
                 subspace_dim={subspace_dim}, num_actions={num_actions}"
            )));
        }
        Ok(SubspaceModule {
            prefix: prefix.into(),
            input_dim,
            subspace_dim,
            num_actions,
            use_tresm,
        })
    }

    pub fn param_names(&self) -> Vec<String> {
        [
            "transform.w",
            "transform.b",
            "res1.k",
            "res1.b",
            "res2.k",
            "res2.b",
            "cls_a.w",
            "cls_a.b",
            "cls_c.w",
            "cls_c.b",
            "four.w",
            "four.b",
        ]
        .iter()
        .map(|s| format!("{}.{s}", self.prefix))
        .collect()
    }

    /// Register freshly initialized parameters. The residual-block
    /// parameters are registered (and drawn) even when `use_tresm` is false
    /// so that initialization draws and checkpoint layout do not depend on
    /// the flag; disabled, they simply never receive gradients.
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        let d_o = self.input_dim;
        let d2 = 2 * self.subspace_dim;
        let n = self.num_actions;
        let k = TRESM_KERNEL_WIDTH;
        let p = |s: &str| format!("{}.{s}", self.prefix);

        let std_t = 1.0 / (d_o as f64).sqrt();
        store.register(&p("transform.w"), normal_matrix(rng, d2, d_o, std_t))?;
        store.register(&p("transform.b"), Matrix::zeros(d2, 1))?;

        let std_r = 1.0 / ((d2 * k) as f64).sqrt();
        store.register(&p("res1.k"), normal_matrix(rng, d2, d2 * k, std_r))?;
        store.register(&p("res1.b"), Matrix::zeros(d2, 1))?;
        store.register(&p("res2.k"), normal_matrix(rng, d2, d2 * k, std_r))?;
        store.register(&p("res2.b"), Matrix::zeros(d2, 1))?;

        let std_c = 1.0 / (self.subspace_dim as f64).sqrt();
        store.register(&p("cls_a.w"), normal_matrix(rng, n + 1, self.subspace_dim, std_c))?;
        store.register(&p("cls_a.b"), Matrix::zeros(n + 1, 1))?;
        store.register(&p("cls_c.w"), normal_matrix(rng, n + 1, self.subspace_dim, std_c))?;
        store.register(&p("cls_c.b"), Matrix::zeros(n + 1, 1))?;

        let std_f = 1.0 / (d2 as f64).sqrt();
        store.register(&p("four.w"), normal_matrix(rng, 4, d2, std_f))?;
        store.register(&p("four.b"), Matrix::zeros(4, 1))?;
        Ok(())
    }

    fn bind(&self, g: &mut Graph, store: &ParamStore) -> Result<SubspaceVars> {
        let p = |s: &str| format!("{}.{s}", self.prefix);
        Ok(SubspaceVars {
            transform_w: g.param(store, &p("transform.w"))?,
            transform_b: g.param(store, &p("transform.b"))?,
            res1_k: g.param(store, &p("res1.k"))?,
            res1_b: g.param(store, &p("res1.b"))?,
            res2_k: g.param(store, &p("res2.k"))?,
            res2_b: g.param(store, &p("res2.b"))?,
            cls_a_w: g.param(store, &p("cls_a.w"))?,
            cls_a_b: g.param(store, &p("cls_a.b"))?,
            cls_c_w: g.param(store, &p("cls_c.w"))?,
            cls_c_b: g.param(store, &p("cls_c.b"))?,
            four_w: g.param(store, &p("four.w"))?,
            four_b: g.param(store, &p("four.b"))?,
        })
    }

    fn transform_with(&self, g: &mut Graph, vars: &SubspaceVars, features: Var) -> Result<Var> {
        let z = g.affine(vars.transform_w, vars.transform_b, features)?;
        Ok(g.relu(z))
    }

    fn residual_with(&self, g: &mut Graph, vars: &SubspaceVars, combined: Var) -> Result<Var> {
        if !self.use_tresm {
            return Ok(combined);
        }
        let c1 = g.conv1d_same(vars.res1_k, vars.res1_b, combined, TRESM_KERNEL_WIDTH)?;
        let r1 = g.relu(c1);
        let c2 = g.conv1d_same(vars.res2_k, vars.res2_b, r1, TRESM_KERNEL_WIDTH)?;
        g.add(combined, c2)
    }

    /// Snippet-independent transform: columnwise affine + ReLU into `2D` rows.
    pub fn transform(&self, g: &mut Graph, store: &ParamStore, features: Var) -> Result<Var> {
        let vars = self.bind(g, store)?;
        self.transform_with(g, &vars, features)
    }

    /// Residual enhancement `F + M_res(F)`; identity when disabled.
    pub fn temporal_residual(&self, g: &mut Graph, store: &ParamStore, combined: Var) -> Result<Var> {
        let vars = self.bind(g, store)?;
        self.residual_with(g, &vars, combined)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, features: Var) -> Result<SubspaceForward> {
        let vars = self.bind(g, store)?;
        let combined = self.transform_with(g, &vars, features)?;
        let enhanced = self.residual_with(g, &vars, combined)?;
        let (action, context) = split_subspaces(g, enhanced)?;
        let za = g.affine(vars.cls_a_w, vars.cls_a_b, action)?;
        let action_scores = g.sigmoid(za);
        let zc = g.affine(vars.cls_c_w, vars.cls_c_b, context)?;
        let context_scores = g.sigmoid(zc);
        let zr = g.affine(vars.four_w, vars.four_b, enhanced)?;
        let kind_scores = g.softmax_cols(zr);
        Ok(SubspaceForward {
            combined,
            enhanced,
            action,
            context,
            action_scores,
            context_scores,
            kind_scores,
        })
    }
}

/// Split `[2D x T]` rows into the `[D x T]` action half (first) and the
/// `[D x T]` context half (second). Stacking the halves back reconstructs
/// the input exactly.
pub fn split_subspaces(g: &mut Graph, combined: Var) -> Result<(Var, Var)> {
    let (rows, cols) = g.value(combined).shape();
    if rows % 2 != 0 {
        return Err(Error::shape(
            "split_subspaces",
            format!("row count must be even, got {rows}x{cols}"),
        ));
    }
    let d = rows / 2;
    let action = g.row_slice(combined, 0, d)?;
    let context = g.row_slice(combined, d, d)?;
    Ok((action, context))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn module(use_tresm: bool) -> (SubspaceModule, ParamStore) {
        let m = SubspaceModule::new("s.sub", 5, 2, 3, use_tresm).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        m.init_params(&mut store, &mut rng).unwrap();
        (m, store)
    }

    fn zero_params(store: &mut ParamStore, names: &[String]) {
        for name in names {
            let (r, c) = store.value(name).unwrap().shape();
            store.set_value(name, Matrix::zeros(r, c)).unwrap();
        }
    }

    fn sample_features() -> Matrix {
        Matrix::from_fn(5, 6, |r, c| ((r * 7 + c * 3) % 10) as f64 * 0.4 - 1.6)
    }

    #[test]
    fn zero_transform_params_give_zero_output() {
        let (m, mut store) = module(false);
        zero_params(&mut store, &m.param_names());
        let mut g = Graph::new();
        let f = g.constant(sample_features());
        let out = m.transform(&mut g, &store, f).unwrap();
        assert_eq!(g.value(out).shape(), (4, 6));
        assert!(g.value(out).all_zero());
    }

    #[test]
    fn zero_conv_params_make_residual_identity() {
        let (m, mut store) = module(true);
        for name in ["s.sub.res1.k", "s.sub.res1.b", "s.sub.res2.k", "s.sub.res2.b"] {
            let (r, c) = store.value(name).unwrap().shape();
            store.set_value(name, Matrix::zeros(r, c)).unwrap();
        }
        let mut g = Graph::new();
        let f = g.constant(sample_features());
        let fwd = m.forward(&mut g, &store, f).unwrap();
        assert_eq!(g.value(fwd.enhanced), g.value(fwd.combined));
    }

    #[test]
    fn disabled_tresm_passes_features_through_bitwise() {
        let (m, store) = module(false);
        let mut g = Graph::new();
        let f = g.constant(sample_features());
        let fwd = m.forward(&mut g, &store, f).unwrap();
        assert_eq!(g.value(fwd.enhanced), g.value(fwd.combined));
    }

    #[test]
    fn split_reconstructs_input() {
        let mut g = Graph::new();
        let x = g.constant(Matrix::from_fn(4, 3, |r, c| (r * 3 + c) as f64));
        let (a, c) = split_subspaces(&mut g, x).unwrap();
        assert_eq!(g.value(a).shape(), (2, 3));
        assert_eq!(g.value(c).shape(), (2, 3));
        for j in 0..3 {
            for i in 0..2 {
                assert_eq!(g.value(a).get(i, j), g.value(x).get(i, j));
                assert_eq!(g.value(c).get(i, j), g.value(x).get(2 + i, j));
            }
        }
    }

    #[test]
    fn split_handles_single_row_halves_and_rejects_odd() {
        let mut g = Graph::new();
        let x = g.constant(Matrix::from_fn(2, 3, |r, c| (r + c) as f64));
        let (a, c) = split_subspaces(&mut g, x).unwrap();
        assert_eq!(g.value(a).shape(), (1, 3));
        assert_eq!(g.value(c).shape(), (1, 3));
        let odd = g.constant(Matrix::zeros(3, 2));
        assert!(split_subspaces(&mut g, odd).is_err());
    }

    #[test]
    fn zero_classifier_params_give_uniform_scores() {
        let (m, mut store) = module(false);
        zero_params(&mut store, &m.param_names());
        let mut g = Graph::new();
        let f = g.constant(sample_features());
        let fwd = m.forward(&mut g, &store, f).unwrap();
        assert!(g.value(fwd.action_scores).data().iter().all(|&v| v == 0.5));
        assert!(g.value(fwd.context_scores).data().iter().all(|&v| v == 0.5));
        for &v in g.value(fwd.kind_scores).data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn kind_score_columns_sum_to_one() {
        let (m, store) = module(true);
        let mut g = Graph::new();
        let f = g.constant(sample_features());
        let fwd = m.forward(&mut g, &store, f).unwrap();
        let ks = g.value(fwd.kind_scores);
        for j in 0..ks.cols() {
            let s: f64 = (0..4).map(|i| ks.get(i, j)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn action_scores_ignore_context_classifier_params() {
        let (m, mut store) = module(false);
        let features = sample_features();
        let run = |store: &ParamStore| {
            let mut g = Graph::new();
            let f = g.constant(features.clone());
            let fwd = m.forward(&mut g, store, f).unwrap();
            (
                g.value(fwd.action_scores).clone(),
                g.value(fwd.context_scores).clone(),
            )
        };
        let (pa1, pc1) = run(&store);
        let bumped = store.value("s.sub.cls_c.w").unwrap().map(|v| v + 0.7);
        store.set_value("s.sub.cls_c.w", bumped).unwrap();
        let (pa2, pc2) = run(&store);
        assert_eq!(pa1, pa2);
        assert_ne!(pc1, pc2);
    }

    #[test]
    fn snippetwise_module_is_permutation_equivariant() {
        let (m, store) = module(false);
        let features = sample_features();
        let perm = [3usize, 0, 5, 1, 4, 2];
        let permuted = Matrix::from_fn(5, 6, |r, c| features.get(r, perm[c]));

        let mut g1 = Graph::new();
        let f1 = g1.constant(features.clone());
        let out1 = m.forward(&mut g1, &store, f1).unwrap();
        let mut g2 = Graph::new();
        let f2 = g2.constant(permuted);
        let out2 = m.forward(&mut g2, &store, f2).unwrap();

        let a1 = g1.value(out1.action_scores);
        let a2 = g2.value(out2.action_scores);
        for c in 0..6 {
            for r in 0..a1.rows() {
                assert_eq!(a1.get(r, perm[c]), a2.get(r, c));
            }
        }
    }

    #[test]
    fn tresm_breaks_permutation_equivariance() {
        let (m, store) = module(true);
        let features = sample_features();
        // swap two distant columns; with a width-3 conv the neighborhood of
        // the swapped columns changes, so outputs must differ somewhere
        let mut swapped = features.clone();
        for r in 0..5 {
            let a = swapped.get(r, 0);
            let b = swapped.get(r, 4);
            swapped.set(r, 0, b);
            swapped.set(r, 4, a);
        }
        let mut g1 = Graph::new();
        let f1 = g1.constant(features);
        let out1 = m.forward(&mut g1, &store, f1).unwrap();
        let mut g2 = Graph::new();
        let f2 = g2.constant(swapped);
        let out2 = m.forward(&mut g2, &store, f2).unwrap();
        // compare column 1 (its temporal neighborhood changed)
        let e1 = g1.value(out1.enhanced);
        let e2 = g2.value(out2.enhanced);
        let differs = (0..e1.rows()).any(|r| (e1.get(r, 1) - e2.get(r, 1)).abs() > 1e-12);
        assert!(differs, "residual block should mix neighboring snippets");
    }
}
