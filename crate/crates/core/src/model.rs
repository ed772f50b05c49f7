//! The full two-stream model (base + subspace per stream) and its
//! checkpoint representation.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{load_records, save_records, Matrix, ParamStore};
use crate::base::BaseModule;
use crate::data::Stream;
use crate::error::{Error, Result};
use crate::subspace::SubspaceModule;

/// Checkpoint record holding the architecture flag that shapes alone cannot
/// recover.
const META_USE_TRESM: &str = "meta.use_tresm";

/// Derive the seed of a named randomness sub-stream from the master seed.
///
/// Every piece of randomness in the crate (parameter init, per-epoch video
/// order, corpus generation) draws from its own stream derived this way, so
/// components can be reordered or skipped without disturbing each other.
pub fn substream(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label, then a splitmix-style avalanche over the
    // combination with the master seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Matrix of i.i.d. normal draws in fixed row-major order.
pub(crate) fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    let dist = Normal::new(0.0, std).expect("std must be positive and finite");
    Matrix::from_fn(rows, cols, |_, _| dist.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Input feature dimension of the appearance stream.
    pub rgb_dim: usize,
    /// Input feature dimension of the motion stream.
    pub flow_dim: usize,
    /// Width `D` of each subspace (the transform emits `2D` rows).
    pub subspace_dim: usize,
    pub num_actions: usize,
    pub use_tresm: bool,
}

impl ModelDims {
    /// Default subspace width: a quarter of the input dimension, at least 1.
    pub fn default_subspace_dim(input_dim: usize) -> usize {
        (input_dim / 4).max(1)
    }
}

/// Base and subspace modules for both streams, sharing one parameter store.
///
/// Parameter names are namespaced `rgb.base.*`, `flow.base.*`, `rgb.sub.*`,
/// `flow.sub.*`; initialization draws them in exactly that order from the
/// `"init"` sub-stream of the seed.
pub struct TwoStreamModel {
    pub dims: ModelDims,
    pub store: ParamStore,
    base_rgb: BaseModule,
    base_flow: BaseModule,
    sub_rgb: SubspaceModule,
    sub_flow: SubspaceModule,
}

impl TwoStreamModel {
    fn assemble(dims: ModelDims) -> Result<(BaseModule, BaseModule, SubspaceModule, SubspaceModule)> {
        Ok((
            BaseModule::new("rgb.base", dims.rgb_dim, dims.num_actions)?,
            BaseModule::new("flow.base", dims.flow_dim, dims.num_actions)?,
            SubspaceModule::new(
                "rgb.sub",
                dims.rgb_dim,
                dims.subspace_dim,
                dims.num_actions,
                dims.use_tresm,
            )?,
            SubspaceModule::new(
                "flow.sub",
                dims.flow_dim,
                dims.subspace_dim,
                dims.num_actions,
                dims.use_tresm,
            )?,
        ))
    }

    pub fn new(dims: ModelDims, seed: u64) -> Result<Self> {
        let (base_rgb, base_flow, sub_rgb, sub_flow) = Self::assemble(dims)?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(substream(seed, "init"));
        base_rgb.init_params(&mut store, &mut rng)?;
        base_flow.init_params(&mut store, &mut rng)?;
        sub_rgb.init_params(&mut store, &mut rng)?;
        sub_flow.init_params(&mut store, &mut rng)?;
        Ok(TwoStreamModel {
            dims,
            store,
            base_rgb,
            base_flow,
            sub_rgb,
            sub_flow,
        })
    }

    pub fn base(&self, stream: Stream) -> &BaseModule {
        match stream {
            Stream::Rgb => &self.base_rgb,
            Stream::Flow => &self.base_flow,
        }
    }

    pub fn subspace(&self, stream: Stream) -> &SubspaceModule {
        match stream {
            Stream::Rgb => &self.sub_rgb,
            Stream::Flow => &self.sub_flow,
        }
    }

    pub fn input_dim(&self, stream: Stream) -> usize {
        match stream {
            Stream::Rgb => self.dims.rgb_dim,
            Stream::Flow => self.dims.flow_dim,
        }
    }

    /// Names of every parameter in canonical (initialization) order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = self.base_rgb.param_names();
        names.extend(self.base_flow.param_names());
        names.extend(self.sub_rgb.param_names());
        names.extend(self.sub_flow.param_names());
        names
    }

    /// Write all parameter values plus the architecture flag.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut records = self.store.snapshot();
        records.push((
            META_USE_TRESM.to_string(),
            Matrix::filled(1, 1, if self.dims.use_tresm { 1.0 } else { 0.0 }),
        ));
        save_records(path, &records)
    }

    /// Reconstruct a model from a checkpoint. Dimensions are derived from
    /// the stored shapes; the record set must match the derived architecture
    /// exactly (no missing or extra parameters).
    pub fn load(path: &Path) -> Result<Self> {
        let records = load_records(path)?;
        let find = |name: &str| -> Result<&Matrix> {
            records
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, m)| m)
                .ok_or_else(|| Error::format(path, format!("checkpoint record {name:?} missing")))
        };

        let use_tresm = find(META_USE_TRESM)?.get(0, 0) != 0.0;
        let rgb_dim = find("rgb.base.att.w")?.cols();
        let flow_dim = find("flow.base.att.w")?.cols();
        let cls_rows = find("rgb.base.cls.w")?.rows();
        let transform_rows = find("rgb.sub.transform.w")?.rows();
        if cls_rows < 2 || transform_rows % 2 != 0 || transform_rows == 0 {
            return Err(Error::format(
                path,
                format!(
                    "inconsistent checkpoint shapes: classifier rows {cls_rows}, transform rows {transform_rows}"
                ),
            ));
        }
        let dims = ModelDims {
            rgb_dim,
            flow_dim,
            subspace_dim: transform_rows / 2,
            num_actions: cls_rows - 1,
            use_tresm,
        };

        let mut model = TwoStreamModel::new(dims, 0)?;
        let expected: Vec<String> = model.param_names();
        for name in &expected {
            let value = find(name)?;
            model
                .store
                .set_value(name, value.clone())
                .map_err(|e| Error::format(path, e.to_string()))?;
        }
        for (name, _) in &records {
            if name != META_USE_TRESM && !expected.iter().any(|e| e == name) {
                return Err(Error::format(
                    path,
                    format!("unexpected checkpoint record {name:?}"),
                ));
            }
        }
        Ok(model)
    }
}
