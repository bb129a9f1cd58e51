//! Toy vision-transformer segmenter in four variants: plain patches, Fisher
//! tokens, unrolled-LR restoration in front, or both.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use train::{fit_patch_gmm, gradient_check, train, validation_dice, EpochLog, GroupCheck, TrainOptions};

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Error, Result};
use crate::fisher::GmmModel;
use crate::imaging::{ImagePlane, Mask};
use crate::lr::{decode_on_graph, init_unroll_params, UnrollConfig};
use crate::nn::{Graph, ParamSet, Tensor, Var};
use crate::router::Route;
use crate::transformer::{
    block, depatchify, init_block, init_layer_norm, init_weight, layer_norm, linear, patchify,
    BlockShape,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Baseline,
    FvEncoder,
    LrDecoder,
    FvLr,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::FvEncoder, Variant::LrDecoder, Variant::FvLr];

    pub fn has_fv(self) -> bool {
        matches!(self, Variant::FvEncoder | Variant::FvLr)
    }

    pub fn has_lr(self) -> bool {
        matches!(self, Variant::LrDecoder | Variant::FvLr)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::FvEncoder => "fv-encoder",
            Variant::LrDecoder => "lr-decoder",
            Variant::FvLr => "fv-lr",
        }
    }

    /// Short name used for checkpoint files in a model bank.
    pub fn bank_name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::FvEncoder => "fv",
            Variant::LrDecoder => "lr",
            Variant::FvLr => "fv_lr",
        }
    }

    /// The specialist each route dispatches to.
    pub fn for_route(route: Route) -> Variant {
        match route {
            Route::Clean => Variant::Baseline,
            Route::Noisy => Variant::FvEncoder,
            Route::Blurred => Variant::LrDecoder,
            Route::NoisyBlurred => Variant::FvLr,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s || v.bank_name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VitConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    pub variant: Variant,
    /// Mixture size for the Fisher-vector variants.
    pub fv_components: usize,
    /// Unrolled decoder shape for the LR variants.
    pub unroll: UnrollConfig,
}

impl Default for VitConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            patch_size: 8,
            channels: 3,
            embed_dim: 64,
            layers: 4,
            heads: 4,
            mlp_dim: 128,
            variant: Variant::Baseline,
            fv_components: 8,
            unroll: UnrollConfig::default(),
        }
    }
}

impl VitConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.image_size > 0 && self.patch_size > 0 && self.channels > 0,
            Config,
            "image size, patch size and channels must be positive"
        );
        ensure!(
            self.image_size % self.patch_size == 0,
            Config,
            "image size {} is not divisible by patch size {}",
            self.image_size,
            self.patch_size
        );
        self.block_shape().validate()?;
        if self.variant.has_fv() {
            ensure!(self.fv_components >= 1, Config, "fv_components must be >= 1");
        }
        if self.variant.has_lr() {
            self.unroll.validate()?;
            ensure!(
                self.image_size % self.unroll.patch_size == 0,
                Config,
                "image size {} is not divisible by the decoder patch size {}",
                self.image_size,
                self.unroll.patch_size
            );
            ensure!(
                self.unroll.psf_size <= self.image_size,
                Config,
                "decoder PSF size exceeds the image"
            );
        }
        Ok(())
    }

    pub fn block_shape(&self) -> BlockShape {
        BlockShape {
            dim: self.embed_dim,
            heads: self.heads,
            mlp_dim: self.mlp_dim,
        }
    }

    pub fn tokens(&self) -> usize {
        let s = self.image_size / self.patch_size;
        s * s
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    /// Flat `key=value` view used by checkpoints and config files.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let u = &self.unroll;
        [
            ("image_size", self.image_size.to_string()),
            ("patch_size", self.patch_size.to_string()),
            ("channels", self.channels.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("layers", self.layers.to_string()),
            ("heads", self.heads.to_string()),
            ("mlp_dim", self.mlp_dim.to_string()),
            ("variant", self.variant.name().to_string()),
            ("fv_components", self.fv_components.to_string()),
            ("unroll.stages", u.stages.to_string()),
            ("unroll.psf_size", u.psf_size.to_string()),
            ("unroll.embed_dim", u.embed_dim.to_string()),
            ("unroll.heads", u.heads.to_string()),
            ("unroll.mlp_dim", u.mlp_dim.to_string()),
            ("unroll.patch_size", u.patch_size.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Overrides fields from `pairs`; unknown keys are an error.
    pub fn apply_pairs<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        fn num(key: &str, v: &str) -> Result<usize> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got '{v}'")))
        }
        for (k, v) in pairs {
            let u = &mut self.unroll;
            match k {
                "image_size" => self.image_size = num(k, v)?,
                "patch_size" => self.patch_size = num(k, v)?,
                "channels" => self.channels = num(k, v)?,
                "embed_dim" => self.embed_dim = num(k, v)?,
                "layers" => self.layers = num(k, v)?,
                "heads" => self.heads = num(k, v)?,
                "mlp_dim" => self.mlp_dim = num(k, v)?,
                "variant" => self.variant = v.trim().parse()?,
                "fv_components" => self.fv_components = num(k, v)?,
                "unroll.stages" => u.stages = num(k, v)?,
                "unroll.psf_size" => u.psf_size = num(k, v)?,
                "unroll.embed_dim" => u.embed_dim = num(k, v)?,
                "unroll.heads" => u.heads = num(k, v)?,
                "unroll.mlp_dim" => u.mlp_dim = num(k, v)?,
                "unroll.patch_size" => u.patch_size = num(k, v)?,
                other => return Err(Error::Config(format!("unknown model key '{other}'"))),
            }
        }
        Ok(())
    }
}

/// A configured model: parameters plus the mixture for Fisher variants.
#[derive(Debug, Clone, PartialEq)]
pub struct SegModel {
    pub config: VitConfig,
    pub params: ParamSet,
    pub gmm: Option<Arc<GmmModel>>,
}

/// Forward-pass handles on a tape.
pub struct ForwardVars {
    pub logits: Var,
    /// Restored image fed to the encoder (LR variants).
    pub restored: Option<Var>,
    /// Per layer, per head attention matrices.
    pub attention: Vec<Vec<Var>>,
    pub encoded: Var,
}

impl SegModel {
    /// Fresh seeded parameters. Fisher variants need a mixture over
    /// `patch_size²·channels` features; other variants must not get one.
    pub fn init(config: VitConfig, gmm: Option<GmmModel>, seed: u64) -> Result<Self> {
        config.validate()?;
        let v = config.variant;
        let gmm = match (v.has_fv(), gmm) {
            (true, Some(g)) => {
                ensure!(
                    g.dim() == config.patch_dim(),
                    Contract,
                    "GMM dimension {} does not match patch dimension {}",
                    g.dim(),
                    config.patch_dim()
                );
                Some(Arc::new(g))
            }
            (true, None) => return Err(Error::Contract(format!("variant {v} needs a GMM"))),
            (false, Some(_)) => return Err(Error::Contract(format!("variant {v} takes no GMM"))),
            (false, None) => None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.embed_dim;
        let mut params = ParamSet::new();
        if let Some(g) = &gmm {
            let fv_dim = 2 * g.components() * g.dim();
            params.insert("fv_proj".into(), init_weight(fv_dim, d, &mut rng));
        } else {
            params.insert("patch_embed".into(), init_weight(config.patch_dim(), d, &mut rng));
        }
        params.insert("cls".into(), Tensor::uniform(1, d, 0.02, &mut rng));
        params.insert("pos".into(), Tensor::uniform(config.tokens() + 1, d, 0.02, &mut rng));
        for l in 0..config.layers {
            init_block(&mut params, &format!("layers.{l}"), config.block_shape(), &mut rng);
        }
        init_layer_norm(&mut params, "ln_f", d);
        let pp = config.patch_size * config.patch_size;
        params.insert("head.w".into(), init_weight(d, pp, &mut rng));
        params.insert("head.b".into(), Tensor::zeros(1, pp));
        if v.has_lr() {
            let s = config.image_size;
            let lr = init_unroll_params(&config.unroll, s, s, config.channels, &mut rng)?;
            params.extend(lr);
        }
        Ok(Self { config, params, gmm })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// Copies every parameter that `from` holds under the same name and
    /// shape (encoder, head, position table, and the patch embedding when
    /// both use one). Returns how many tensors were taken.
    pub fn warm_start_from(&mut self, from: &SegModel) -> Result<usize> {
        ensure!(
            from.config.image_size == self.config.image_size
                && from.config.patch_size == self.config.patch_size
                && from.config.channels == self.config.channels,
            Contract,
            "warm start needs the same image, patch and channel sizes"
        );
        let mut taken = 0;
        for (name, t) in self.params.iter_mut() {
            if let Some(src) = from.params.get(name) {
                if src.shape() == t.shape() {
                    *t = src.clone();
                    taken += 1;
                }
            }
        }
        Ok(taken)
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    fn check_image(&self, img: &ImagePlane) -> Result<()> {
        let s = self.config.image_size;
        ensure!(
            img.shape() == (s, s, self.config.channels),
            Contract,
            "model expects {s}x{s}x{} input, got {:?}",
            self.config.channels,
            img.shape()
        );
        Ok(())
    }

    /// Builds the forward pass of `img` on `g`.
    pub fn forward_graph(&self, g: &mut Graph, img: &ImagePlane) -> Result<ForwardVars> {
        self.check_image(img)?;
        let cfg = &self.config;
        let s = cfg.image_size;
        let p = &self.params;
        let mut x = g.constant(Tensor::new(s * s, cfg.channels, img.data().to_vec()));
        let mut restored = None;
        if cfg.variant.has_lr() {
            let trace = decode_on_graph(g, p, &cfg.unroll, x, s, s)?;
            x = trace.last().expect("at least one stage").0;
            restored = Some(x);
        }
        let patches = patchify(g, x, s, s, cfg.patch_size)?;
        let tokens = match &self.gmm {
            Some(gmm) => {
                let fv = g.fisher_encode(patches, gmm.clone())?;
                let w = g.param("fv_proj", p)?;
                g.matmul(fv, w)
            }
            None => {
                let w = g.param("patch_embed", p)?;
                g.matmul(patches, w)
            }
        };
        let z0 = self.embed(g, tokens)?;
        let (encoded, attention) = self.encode(g, z0)?;
        let logits = self.seg_head(g, encoded)?;
        Ok(ForwardVars {
            logits,
            restored,
            attention,
            encoded,
        })
    }

    /// `[x_class; tokens] + E_pos`.
    pub fn embed(&self, g: &mut Graph, tokens: Var) -> Result<Var> {
        let p = &self.params;
        let n = g.shape(tokens).0;
        ensure!(
            n == self.config.tokens(),
            Contract,
            "got {n} tokens, position table holds {}",
            self.config.tokens()
        );
        let cls = g.param("cls", p)?;
        let pos = g.param("pos", p)?;
        let z = g.concat_rows(&[cls, tokens]);
        Ok(g.add(z, pos))
    }

    /// Encoder stack and sequence-wide final layer norm.
    pub fn encode(&self, g: &mut Graph, z0: Var) -> Result<(Var, Vec<Vec<Var>>)> {
        let mut z = z0;
        let mut maps = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            let (next, a) = block(g, &self.params, &format!("layers.{l}"), z, self.config.block_shape())?;
            z = next;
            maps.push(a);
        }
        Ok((layer_norm(g, &self.params, "ln_f", z)?, maps))
    }

    /// Drops the class token, maps every token to `P²` logits and
    /// reassembles an `(H·W)×1` logit plane.
    pub fn seg_head(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let (rows, d) = g.shape(z);
        let idx = (d as u32..(rows * d) as u32).collect();
        let tokens = g.gather(z, idx, rows - 1, d);
        let t = linear(g, &self.params, "head", tokens)?;
        let s = self.config.image_size;
        Ok(depatchify(g, t, s, s, self.config.patch_size))
    }

    /// Per-pixel logits as a single-channel plane.
    pub fn forward(&self, img: &ImagePlane) -> Result<ImagePlane> {
        let mut g = Graph::inference();
        let out = self.forward_graph(&mut g, img)?;
        let s = self.config.image_size;
        Ok(ImagePlane::from_raw(s, s, 1, g.value(out.logits).data.clone()))
    }

    /// `sigmoid(logit) > threshold`, evaluated as a comparison in logit space.
    pub fn predict_mask(&self, img: &ImagePlane, threshold: f64) -> Result<Mask> {
        ensure!(
            (0.0..=1.0).contains(&threshold),
            Contract,
            "threshold must lie in [0,1], got {threshold}"
        );
        let logits = self.forward(img)?;
        Ok(logits_to_mask(&logits, threshold))
    }

    /// Parameter-name groups for gradient reporting.
    pub fn param_groups(&self) -> IndexMap<String, Vec<String>> {
        let mut groups: IndexMap<String, Vec<String>> = IndexMap::new();
        for name in self.params.keys() {
            let parts: Vec<&str> = name.split('.').collect();
            let key = match parts.as_slice() {
                ["layers", l, part, ..] => format!("layers.{l}.{part}"),
                ["lr", s, part, ..] => format!("lr.{s}.{part}"),
                [first, ..] => first.to_string(),
                [] => unreachable!(),
            };
            groups.entry(key).or_default().push(name.clone());
        }
        groups
    }
}

pub fn logits_to_mask(logits: &ImagePlane, threshold: f64) -> Mask {
    let cut = if threshold <= 0.0 {
        f64::NEG_INFINITY
    } else if threshold >= 1.0 {
        f64::INFINITY
    } else {
        (threshold / (1.0 - threshold)).ln()
    };
    Mask::from_fn(logits.height(), logits.width(), |y, x| logits.get(y, x, 0) > cut)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::fisher::{fit_gmm, GmmFitOptions};
    use crate::imaging::extract_patches;
    use rand::Rng;

    pub(crate) fn toy_config(variant: Variant) -> VitConfig {
        VitConfig {
            image_size: 16,
            patch_size: 8,
            channels: 1,
            embed_dim: 16,
            layers: 2,
            heads: 2,
            mlp_dim: 16,
            variant,
            fv_components: 2,
            unroll: UnrollConfig {
                stages: 2,
                psf_size: 3,
                embed_dim: 8,
                heads: 2,
                mlp_dim: 8,
                patch_size: 4,
            },
        }
    }

    fn image(seed: u64) -> ImagePlane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImagePlane::from_fn(16, 16, 1, |_, _, _| rng.random_range(0.0..1.0))
    }

    fn toy_gmm() -> GmmModel {
        let mut data = Vec::new();
        for s in 0..6 {
            data.extend(extract_patches(&image(100 + s), 8).unwrap());
        }
        fit_gmm(&data, 64, &GmmFitOptions { components: 2, seed: 0, max_iters: 10, tol: 1e-6 })
            .unwrap()
            .model
    }

    fn model(v: Variant) -> SegModel {
        let gmm = v.has_fv().then(toy_gmm);
        SegModel::init(toy_config(v), gmm, 7).unwrap()
    }

    #[test]
    fn every_variant_produces_image_sized_logits() {
        for v in Variant::ALL {
            let m = model(v);
            let out = m.forward(&image(1)).unwrap();
            assert_eq!(out.shape(), (16, 16, 1), "{v}");
            assert!(out.data().iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn gmm_presence_must_match_variant() {
        assert!(SegModel::init(toy_config(Variant::FvEncoder), None, 0).is_err());
        assert!(SegModel::init(toy_config(Variant::Baseline), Some(toy_gmm()), 0).is_err());
        let wrong = GmmModel::new(1, 3, vec![0.0; 3], vec![1.0; 3], vec![1.0]).unwrap();
        assert!(SegModel::init(toy_config(Variant::FvLr), Some(wrong), 0).is_err());
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let m = model(Variant::Baseline);
        assert!(m.forward(&ImagePlane::zeros(16, 16, 3)).is_err());
        assert!(m.forward(&ImagePlane::zeros(8, 8, 1)).is_err());
    }

    #[test]
    fn fv_lr_at_init_matches_fv_encoder() {
        let mut fv = model(Variant::FvEncoder);
        let both = model(Variant::FvLr);
        // share the encoder weights
        for (k, v) in fv.params.iter_mut() {
            *v = both.params[k].clone();
        }
        let img = image(4).map(|v| v.max(1e-3));
        assert_eq!(fv.forward(&img).unwrap(), both.forward(&img).unwrap());
    }

    #[test]
    fn embed_definition() {
        let mut m = model(Variant::Baseline);
        m.params["cls"] = Tensor::zeros(1, 16);
        let mut g = Graph::inference();
        let tokens = g.constant(Tensor::zeros(4, 16));
        let z = m.embed(&mut g, tokens).unwrap();
        assert_eq!(g.value(z), &m.params["pos"]);
        let bad = g.constant(Tensor::zeros(3, 16));
        assert!(m.embed(&mut g, bad).is_err());
    }

    #[test]
    fn zeroed_residual_branches_make_layers_identity() {
        let mut m = model(Variant::Baseline);
        for (name, t) in m.params.iter_mut() {
            if name.contains(".attn.wo.") || name.ends_with(".attn.bo") || name.ends_with(".mlp.w2") || name.ends_with(".mlp.b2") {
                t.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut g = Graph::inference();
        let z = g.constant(Tensor::uniform(5, 16, 1.0, &mut ChaCha8Rng::seed_from_u64(1)));
        let (out, _) = block(&mut g, &m.params, "layers.0", z, m.config.block_shape()).unwrap();
        assert_eq!(g.value(out), g.value(z));
    }

    #[test]
    fn attention_rows_are_distributions() {
        let m = model(Variant::Baseline);
        let mut g = Graph::inference();
        let out = m.forward_graph(&mut g, &image(2)).unwrap();
        for layer in &out.attention {
            for &a in layer {
                let t = g.value(a);
                for r in 0..t.rows {
                    assert!((t.row_slice(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn token_permutation_equivariance() {
        let m = model(Variant::Baseline);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = Tensor::uniform(5, 16, 1.0, &mut rng);
        let mut zp = z.clone();
        // swap rows 1 and 3
        for c in 0..16 {
            zp.data.swap(16 + c, 48 + c);
        }
        let mut g = Graph::inference();
        let a = g.constant(z);
        let b = g.constant(zp);
        let (oa, _) = m.encode(&mut g, a).unwrap();
        let (ob, _) = m.encode(&mut g, b).unwrap();
        let (ta, tb) = (g.value(oa), g.value(ob));
        for (ra, rb) in [(0, 0), (1, 3), (3, 1), (2, 2), (4, 4)] {
            for c in 0..16 {
                assert!((ta.get(ra, c) - tb.get(rb, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn head_locality_probe() {
        let mut m = model(Variant::Baseline);
        m.params["head.w"] = Tensor::zeros(16, 64);
        m.params["head.b"] = Tensor::zeros(1, 64);
        let mut g = Graph::inference();
        // token i (row i+1) carries value i+1 in column 0
        let mut z = Tensor::zeros(5, 16);
        for i in 0..4 {
            z.data[(i + 1) * 16] = (i + 1) as f64;
        }
        m.params["head.w"].data[..64].iter_mut().for_each(|v| *v = 1.0);
        let zv = g.constant(z);
        let out = m.seg_head(&mut g, zv).unwrap();
        let plane = ImagePlane::from_raw(16, 16, 1, g.value(out).data.clone());
        for y in 0..16 {
            for x in 0..16 {
                let token = (y / 8) * 2 + x / 8;
                assert_eq!(plane.get(y, x, 0), (token + 1) as f64);
            }
        }
    }

    #[test]
    fn mask_thresholds() {
        let zero = ImagePlane::zeros(4, 4, 1);
        assert_eq!(logits_to_mask(&zero, 0.5).count(), 0);
        let neg = ImagePlane::filled(4, 4, 1, -900.0);
        assert_eq!(logits_to_mask(&neg, 0.0).count(), 16);
        let ramp = ImagePlane::from_fn(4, 4, 1, |y, x, _| (y * 4 + x) as f64 - 8.0);
        let mut prev = 17;
        for t in [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0] {
            let c = logits_to_mask(&ramp, t).count();
            assert!(c <= prev);
            prev = c;
        }
    }

    #[test]
    fn layer_norm_bounds_large_inputs() {
        let m = model(Variant::Baseline);
        let img = image(5).map(|v| v * 1e3);
        let mut g = Graph::inference();
        let s = 16;
        let x = g.constant(Tensor::new(s * s, 1, img.data().to_vec()));
        let patches = patchify(&mut g, x, s, s, 8).unwrap();
        let w = g.param("patch_embed", &m.params).unwrap();
        let t = g.matmul(patches, w);
        let z0 = m.embed(&mut g, t).unwrap();
        let (enc, _) = m.encode(&mut g, z0).unwrap();
        assert!(g.value(enc).all_finite());
    }

    #[test]
    fn config_pairs_roundtrip() {
        let c = toy_config(Variant::FvLr);
        let pairs = c.to_pairs();
        let mut d = VitConfig::default();
        d.apply_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str()))).unwrap();
        assert_eq!(c, d);
        assert!(d.apply_pairs([("bogus", "1")]).is_err());
    }
}
