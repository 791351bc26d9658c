//! The motion model: encoder, latent warping and refinement, and the
//! latent-conditioned sinusoidal coordinate network.
//!
//! Every piece is written once against the autodiff [`Graph`]; the plain
//! functions below evaluate that graph with parameters bound as constants.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softplus_inv, Graph, Pad, Var};
use crate::error::{check_timestep, GimmError, Result};
use crate::flow::FlowField;
use crate::normalization::{
    compute_scale, coord_grid, normalize, scaled_bidirectional, split_bilateral, CoordGrid, NormalizedFlow,
};
use crate::params::{push_conv, push_linear, uniform, Bound, ParamSet};
use crate::tensor::Tensor;
use crate::warping::{flow_consistency, flow_variance, SplatMode};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinerInput {
    WarpedOnly,
    #[default]
    WarpedPlusInitial,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    NonFwarp,
    NonImp,
    NonMe,
    NonRefiner,
    TCoordOnly,
}

impl Ablation {
    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NonFwarp => "non_fwarp",
            Ablation::NonImp => "non_imp",
            Ablation::NonMe => "non_me",
            Ablation::NonRefiner => "non_refiner",
            Ablation::TCoordOnly => "t_coord_only",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = GimmError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| GimmError::Config(format!("unknown ablation {s:?}")))
    }
}

/// Per-pixel reduction of the flow objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossNorm {
    /// Euclidean norm of the 2-vector residual.
    #[default]
    L2,
    /// Squared Euclidean norm.
    SquaredL2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GimmConfig {
    pub d_enc: usize,
    pub d_lat: usize,
    pub siren_width: usize,
    pub siren_omega0: f64,
    pub refiner_input: RefinerInput,
    pub ablation: Ablation,
    pub splat_mode: SplatMode,
    pub loss_norm: LossNorm,
}

impl Default for GimmConfig {
    fn default() -> Self {
        Self {
            d_enc: 16,
            d_lat: 32,
            siren_width: 128,
            siren_omega0: 30.0,
            refiner_input: RefinerInput::default(),
            ablation: Ablation::default(),
            splat_mode: SplatMode::default(),
            loss_norm: LossNorm::default(),
        }
    }
}

/// Number of sinusoidal layers in the coordinate network.
pub const SIREN_LAYERS: usize = 5;
const RES_ENC: usize = 2;
const RES_REF: usize = 3;

impl GimmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_enc == 0 || self.d_lat == 0 || self.siren_width == 0 {
            return Err(GimmError::Config("d_enc, d_lat and siren_width must be positive".into()));
        }
        if !(self.siren_omega0 > 0.0) || !self.siren_omega0.is_finite() {
            return Err(GimmError::Config(format!("siren_omega0 must be positive, got {}", self.siren_omega0)));
        }
        Ok(())
    }

    /// Channels of one motion feature map `K_i`.
    pub fn feature_channels(&self) -> usize {
        if self.ablation == Ablation::NonMe {
            2
        } else {
            self.d_enc
        }
    }

    pub fn refiner_in_channels(&self) -> usize {
        match self.refiner_input {
            RefinerInput::WarpedOnly => 2 * self.feature_channels(),
            RefinerInput::WarpedPlusInitial => 4 * self.feature_channels(),
        }
    }

    fn uses_splat(&self) -> bool {
        self.ablation != Ablation::NonFwarp
    }
}

/// Trainable state of the motion model.
#[derive(Clone, Debug, PartialEq)]
pub struct GimmParams {
    pub set: ParamSet,
}

impl GimmParams {
    /// Fresh parameters for `config`, deterministic in `seed`.
    pub fn init(config: &GimmConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = ParamSet::new();
        let (de, dl) = (config.d_enc, config.d_lat);
        if config.ablation != Ablation::NonMe {
            push_conv(&mut set, &mut rng, "encoder.conv0", 2, de);
            push_conv(&mut set, &mut rng, "encoder.conv1", de, de);
            for r in 0..RES_ENC {
                push_conv(&mut set, &mut rng, &format!("encoder.res{r}.a"), de, de);
                push_conv(&mut set, &mut rng, &format!("encoder.res{r}.b"), de, de);
            }
        }
        let cin = config.refiner_in_channels();
        if config.ablation == Ablation::NonRefiner {
            push_linear(&mut set, &mut rng, "refiner.proj", cin, dl, false);
        } else {
            push_conv(&mut set, &mut rng, "refiner.conv_in", cin, dl);
            for r in 0..RES_REF {
                push_conv(&mut set, &mut rng, &format!("refiner.res{r}.a"), dl, dl);
                push_conv(&mut set, &mut rng, &format!("refiner.res{r}.b"), dl, dl);
            }
            push_conv(&mut set, &mut rng, "refiner.conv_out", dl, dl);
        }
        if config.ablation == Ablation::NonImp {
            push_linear(&mut set, &mut rng, "head", dl, 2, true);
            set.get_mut("head.b").unwrap().data_mut().fill(0.5);
        } else {
            let w = config.siren_width;
            let omega = config.siren_omega0;
            let mut fan_in = 3 + dl;
            for l in 0..SIREN_LAYERS {
                let bound = if l == 0 { 1.0 / fan_in as f64 } else { (6.0 / fan_in as f64).sqrt() / omega };
                set.push(format!("siren.l{l}.w"), uniform(&mut rng, &[fan_in, w], bound), true);
                set.push(format!("siren.l{l}.b"), uniform(&mut rng, &[w], 1.0 / (fan_in as f64).sqrt()), true);
                fan_in = w;
            }
            let bound = (6.0 / w as f64).sqrt() / omega;
            set.push("siren.out.w", uniform(&mut rng, &[w, 2], bound), true);
            // start at the zero-flow midpoint of the normalized range
            set.push("siren.out.b", Tensor::full(&[2], 0.5), true);
        }
        if config.uses_splat() {
            set.push("alpha_flow_raw", Tensor::scalar(softplus_inv(1.0)), true);
            set.push("alpha_var_raw", Tensor::scalar(softplus_inv(1.0)), true);
        }
        Ok(Self { set })
    }

    pub fn trainable_count(&self) -> usize {
        self.set.trainable_count()
    }

    /// Verifies the layout matches what `config` would build.
    pub fn check(&self, config: &GimmConfig) -> Result<()> {
        self.set.expect_layout(&GimmParams::init(config, 0)?.set, "gimm params")
    }

    /// Effective splatting scalars `(α_flow, α_var)`.
    pub fn alphas(&self) -> Option<(f64, f64)> {
        let sp = crate::autodiff::softplus;
        Some((sp(self.set.get("alpha_flow_raw")?.item()), sp(self.set.get("alpha_var_raw")?.item())))
    }
}

/// `H×W×D_lat` latent code with the instance scale of the flows it encodes.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionLatent {
    pub data: Tensor,
    pub scale: f64,
}

/// Intermediate graph nodes of latent construction, kept for inspection.
pub struct LatentNodes {
    pub k0: Var,
    pub k1: Var,
    pub k0t: Var,
    pub k1t: Var,
    pub latent: Var,
}

fn conv(g: &mut Graph, b: &Bound, name: &str, x: Var) -> Var {
    g.conv3x3(x, b.var(&format!("{name}.w")), b.var(&format!("{name}.b")), Pad::Replicate)
}

fn res_unit(g: &mut Graph, b: &Bound, name: &str, x: Var) -> Var {
    let a = conv(g, b, &format!("{name}.a"), x);
    let a = g.silu(a);
    let r = conv(g, b, &format!("{name}.b"), a);
    g.add(x, r)
}

/// Motion encoder on the graph: `H×W×2 → H×W×D_enc`.
pub fn encoder_graph(g: &mut Graph, b: &Bound, config: &GimmConfig, v: Var) -> Var {
    if config.ablation == Ablation::NonMe {
        return v;
    }
    let x = conv(g, b, "encoder.conv0", v);
    let x = g.silu(x);
    let x = conv(g, b, "encoder.conv1", x);
    let mut x = g.silu(x);
    for r in 0..RES_ENC {
        x = res_unit(g, b, &format!("encoder.res{r}"), x);
    }
    x
}

fn refiner_graph(g: &mut Graph, b: &Bound, config: &GimmConfig, input: Var) -> Var {
    if config.ablation == Ablation::NonRefiner {
        return g.linear(input, b.var("refiner.proj.w"), b.var("refiner.proj.b"));
    }
    let x = conv(g, b, "refiner.conv_in", input);
    let mut x = g.silu(x);
    for r in 0..RES_REF {
        x = res_unit(g, b, &format!("refiner.res{r}"), x);
    }
    conv(g, b, "refiner.conv_out", x)
}

/// Latent construction on the graph from fixed input flows.
#[allow(clippy::too_many_arguments)]
pub fn latent_graph(
    g: &mut Graph,
    b: &Bound,
    config: &GimmConfig,
    f01: &FlowField,
    f10: &FlowField,
    v0: Var,
    v1: Var,
    t: f64,
) -> Result<LatentNodes> {
    check_timestep(t)?;
    let k0 = encoder_graph(g, b, config, v0);
    let k1 = encoder_graph(g, b, config, v1);
    let (k0t, k1t) = if config.uses_splat() {
        let (f0t, f1t) = scaled_bidirectional(f01, f10, t)?;
        let af = g.softplus(b.var("alpha_flow_raw"));
        let av = g.softplus(b.var("alpha_var_raw"));
        let u0f = flow_consistency(f01.as_tensor(), f10.as_tensor())?;
        let u1f = flow_consistency(f10.as_tensor(), f01.as_tensor())?;
        let z0 = g.splat_weights(&u0f, &flow_variance(f01.as_tensor()), af, av);
        let z1 = g.splat_weights(&u1f, &flow_variance(f10.as_tensor()), af, av);
        let f0t = g.constant(f0t.into_tensor());
        let f1t = g.constant(f1t.into_tensor());
        (
            g.forward_splat(k0, f0t, z0, config.splat_mode),
            g.forward_splat(k1, f1t, z1, config.splat_mode),
        )
    } else {
        let a = g.affine(k0, 1.0 - t, 0.0);
        let c = g.affine(k1, t, 0.0);
        let mix = g.add(a, c);
        (mix, mix)
    };
    let input = match config.refiner_input {
        RefinerInput::WarpedOnly => g.concat_channels(&[k0t, k1t]),
        RefinerInput::WarpedPlusInitial => g.concat_channels(&[k0t, k1t, k0, k1]),
    };
    let latent = refiner_graph(g, b, config, input);
    Ok(LatentNodes { k0, k1, k0t, k1t, latent })
}

/// Coordinate network on the graph: `(H×W×3, H×W×D_lat) → H×W×2`.
pub fn siren_graph(g: &mut Graph, b: &Bound, config: &GimmConfig, coords: Var, latent: Var) -> Var {
    if config.ablation == Ablation::NonImp {
        return g.linear(latent, b.var("head.w"), b.var("head.b"));
    }
    let coords = if config.ablation == Ablation::TCoordOnly {
        let t = g.slice_channels(coords, 2, 1);
        let zero = g.affine(coords, 0.0, 0.0);
        let xy = g.slice_channels(zero, 0, 2);
        g.concat_channels(&[xy, t])
    } else {
        coords
    };
    let mut x = g.concat_channels(&[coords, latent]);
    for l in 0..SIREN_LAYERS {
        let z = g.linear(x, b.var(&format!("siren.l{l}.w")), b.var(&format!("siren.l{l}.b")));
        x = g.sin_scaled(z, config.siren_omega0);
    }
    g.linear(x, b.var("siren.out.w"), b.var("siren.out.b"))
}

/// Normalized prediction `V̂_t` for one flow pair, as a graph node, plus the
/// instance scale.
pub fn gimm_graph(
    g: &mut Graph,
    b: &Bound,
    config: &GimmConfig,
    f01: &FlowField,
    f10: &FlowField,
    t: f64,
) -> Result<(Var, f64)> {
    f01.expect_same_dims(f10, "gimm_forward")?;
    let s = compute_scale(f01, f10);
    let v0 = g.constant(normalize(f01, s)?.data().clone());
    let v1 = g.constant(normalize(&f10.neg(), s)?.data().clone());
    let nodes = latent_graph(g, b, config, f01, f10, v0, v1, t)?;
    let coords = g.constant(coord_grid(f01.height(), f01.width(), t)?.into_tensor());
    Ok((siren_graph(g, b, config, coords, nodes.latent), s))
}

fn expect_normalized_pair(v: &NormalizedFlow, f: &FlowField, what: &str) -> Result<()> {
    if (v.height(), v.width()) != (f.height(), f.width()) {
        return Err(GimmError::ShapeMismatch(format!(
            "{what}: normalized flow {}x{} vs flow {}x{}",
            v.height(),
            v.width(),
            f.height(),
            f.width()
        )));
    }
    Ok(())
}

/// Motion features `K` of a normalized flow.
pub fn encode_motion(v: &NormalizedFlow, params: &GimmParams, config: &GimmConfig) -> Result<Tensor> {
    params.check(config)?;
    let mut g = Graph::new();
    let b = params.set.bind(&mut g, false);
    let x = g.constant(v.data().clone());
    let k = encoder_graph(&mut g, &b, config, x);
    Ok(g.value(k).clone())
}

/// Motion latent `L_t` from bidirectional flows and their normalized forms.
pub fn build_latent(
    f01: &FlowField,
    f10: &FlowField,
    v0: &NormalizedFlow,
    v1: &NormalizedFlow,
    t: f64,
    params: &GimmParams,
    config: &GimmConfig,
) -> Result<MotionLatent> {
    check_timestep(t)?;
    params.check(config)?;
    f01.expect_same_dims(f10, "build_latent")?;
    expect_normalized_pair(v0, f01, "build_latent")?;
    v0.expect_compatible(v1, "build_latent")?;
    let mut g = Graph::new();
    let b = params.set.bind(&mut g, false);
    let x0 = g.constant(v0.data().clone());
    let x1 = g.constant(v1.data().clone());
    let nodes = latent_graph(&mut g, &b, config, f01, f10, x0, x1, t)?;
    Ok(MotionLatent {
        data: g.value(nodes.latent).clone(),
        scale: v0.scale(),
    })
}

/// Warped and unwarped motion features at `t`: `(K_0, K_1, K_{0→t}, K_{1→t})`.
pub fn latent_features(
    f01: &FlowField,
    f10: &FlowField,
    t: f64,
    params: &GimmParams,
    config: &GimmConfig,
) -> Result<[Tensor; 4]> {
    params.check(config)?;
    f01.expect_same_dims(f10, "latent_features")?;
    let s = compute_scale(f01, f10);
    let mut g = Graph::new();
    let b = params.set.bind(&mut g, false);
    let v0 = g.constant(normalize(f01, s)?.data().clone());
    let v1 = g.constant(normalize(&f10.neg(), s)?.data().clone());
    let n = latent_graph(&mut g, &b, config, f01, f10, v0, v1, t)?;
    Ok([n.k0, n.k1, n.k0t, n.k1t].map(|v| g.value(v).clone()))
}

/// Evaluates the coordinate network at every grid position.
pub fn siren_forward(
    coords: &CoordGrid,
    latent: &MotionLatent,
    params: &GimmParams,
    config: &GimmConfig,
) -> Result<NormalizedFlow> {
    params.check(config)?;
    let (h, w, _) = coords.as_tensor().hwc();
    let (lh, lw, lc) = latent.data.hwc();
    if (lh, lw) != (h, w) || lc != config.d_lat {
        return Err(GimmError::ShapeMismatch(format!(
            "siren_forward: grid {h}x{w} vs latent {lh}x{lw}x{lc}"
        )));
    }
    let mut g = Graph::new();
    let b = params.set.bind(&mut g, false);
    let c = g.constant(coords.as_tensor().clone());
    let l = g.constant(latent.data.clone());
    let out = siren_graph(&mut g, &b, config, c, l);
    NormalizedFlow::new(g.value(out).clone(), latent.scale)
}

/// Full motion model: `(V̂_t, F̂_{t→0}, F̂_{t→1})`.
pub fn gimm_forward(
    f01: &FlowField,
    f10: &FlowField,
    t: f64,
    params: &GimmParams,
    config: &GimmConfig,
) -> Result<(NormalizedFlow, FlowField, FlowField)> {
    check_timestep(t)?;
    params.check(config)?;
    let mut g = Graph::new();
    let b = params.set.bind(&mut g, false);
    let (v, s) = gimm_graph(&mut g, &b, config, f01, f10, t)?;
    let vhat = NormalizedFlow::new(g.value(v).clone(), s)?;
    let (ft0, ft1) = split_bilateral(&vhat, t)?;
    Ok((vhat, ft0, ft1))
}

/// Mean over pixels of the per-pixel residual norm between two `H×W×2` fields.
pub(crate) fn flow_objective(pred: &Tensor, target: &Tensor, norm: LossNorm) -> f64 {
    let n = pred.len() / 2;
    let s: f64 = pred
        .data()
        .chunks_exact(2)
        .zip(target.data().chunks_exact(2))
        .map(|(p, q)| {
            let sq = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
            match norm {
                LossNorm::L2 => sq.sqrt(),
                LossNorm::SquaredL2 => sq,
            }
        })
        .sum();
    s / n as f64
}

fn flow_objective_vjp(pred: &Tensor, target: &Tensor, norm: LossNorm, g: f64) -> Tensor {
    let n = (pred.len() / 2) as f64;
    let mut out = Vec::with_capacity(pred.len());
    for (p, q) in pred.data().chunks_exact(2).zip(target.data().chunks_exact(2)) {
        let (du, dv) = (p[0] - q[0], p[1] - q[1]);
        let k = match norm {
            LossNorm::L2 => {
                let r = (du * du + dv * dv).sqrt();
                if r > 0.0 {
                    1.0 / r
                } else {
                    0.0
                }
            }
            LossNorm::SquaredL2 => 2.0,
        };
        out.push(g * k * du / n);
        out.push(g * k * dv / n);
    }
    Tensor::new(pred.shape(), out).unwrap()
}

/// Flow objective as a graph node against a fixed target.
pub fn flow_loss_graph(g: &mut Graph, pred: Var, target: &Tensor, norm: LossNorm) -> Var {
    let value = Tensor::scalar(flow_objective(g.value(pred), target, norm));
    let target = target.clone();
    g.custom(
        &[pred],
        value,
        Box::new(move |go, p, _, _| vec![Some(flow_objective_vjp(p[0], &target, norm, go.item()))]),
    )
}

/// Per-pixel averaged Euclidean residual norm between normalized flows.
pub fn gimm_loss(pred: &NormalizedFlow, target: &NormalizedFlow) -> Result<f64> {
    gimm_loss_with(pred, target, LossNorm::L2)
}

pub fn gimm_loss_with(pred: &NormalizedFlow, target: &NormalizedFlow, norm: LossNorm) -> Result<f64> {
    pred.expect_compatible(target, "gimm_loss")?;
    Ok(flow_objective(pred.data(), target.data(), norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normalization::denormalize;

    fn small() -> GimmConfig {
        GimmConfig {
            d_enc: 4,
            d_lat: 6,
            siren_width: 8,
            ..GimmConfig::default()
        }
    }

    fn flows() -> (FlowField, FlowField) {
        let f01 = FlowField::from_fn(9, 10, |y, x| (1.5 + 0.1 * x as f64, -0.7 + 0.05 * y as f64));
        let f10 = f01.neg().scaled(0.9);
        (f01, f10)
    }

    #[test]
    fn reference_parameter_count() {
        let p = GimmParams::init(&GimmConfig::default(), 0).unwrap();
        let n = p.trainable_count();
        assert!((120_000..300_000).contains(&n), "{n}");
        let p = GimmParams::init(&GimmConfig { ablation: Ablation::NonRefiner, ..GimmConfig::default() }, 0).unwrap();
        assert!(p.set.entries().iter().any(|e| !e.trainable));
    }

    #[test]
    fn encoder_shape_and_determinism() {
        let cfg = small();
        let p = GimmParams::init(&cfg, 1).unwrap();
        let (f01, f10) = flows();
        let v = normalize(&f01, compute_scale(&f01, &f10)).unwrap();
        let k = encode_motion(&v, &p, &cfg).unwrap();
        assert_eq!(k.shape(), &[9, 10, 4]);
        assert_eq!(k, encode_motion(&v, &p, &cfg).unwrap());
    }

    #[test]
    fn boundary_splat_identities() {
        let cfg = small();
        let p = GimmParams::init(&cfg, 2).unwrap();
        let (f01, f10) = flows();
        let [k0, _, k0t, _] = latent_features(&f01, &f10, 0.0, &p, &cfg).unwrap();
        assert_eq!(k0t, k0);
        let [_, k1, _, k1t] = latent_features(&f01, &f10, 1.0, &p, &cfg).unwrap();
        assert_eq!(k1t, k1);
    }

    #[test]
    fn non_fwarp_mixes_features() {
        let cfg = GimmConfig { ablation: Ablation::NonFwarp, ..small() };
        let p = GimmParams::init(&cfg, 3).unwrap();
        let (f01, f10) = flows();
        let [k0, k1, k0t, k1t] = latent_features(&f01, &f10, 0.5, &p, &cfg).unwrap();
        let avg = k0.add(&k1).scale(0.5);
        assert!(k0t.sub(&avg).max_abs() < 1e-15);
        assert_eq!(k0t, k1t);
    }

    #[test]
    fn forward_contract() {
        for ablation in [
            Ablation::Full,
            Ablation::NonFwarp,
            Ablation::NonImp,
            Ablation::NonMe,
            Ablation::NonRefiner,
            Ablation::TCoordOnly,
        ] {
            let cfg = GimmConfig { ablation, ..small() };
            let p = GimmParams::init(&cfg, 4).unwrap();
            let (f01, f10) = flows();
            let (v, ft0, ft1) = gimm_forward(&f01, &f10, 0.3, &p, &cfg).unwrap();
            assert_eq!(v.data().shape(), &[9, 10, 2]);
            let d = denormalize(&v);
            assert!(ft1.sub(&ft0).as_tensor().sub(d.as_tensor()).max_abs() < 1e-12);
            let (_, z, _) = gimm_forward(&f01, &f10, 0.0, &p, &cfg).unwrap();
            assert!(z.as_tensor().data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = small();
        let p = GimmParams::init(&cfg, 5).unwrap();
        let (f01, f10) = flows();
        assert!(matches!(gimm_forward(&f01, &f10, 1.2, &p, &cfg), Err(GimmError::TimestepOutOfRange(_))));
        let other = GimmConfig { d_lat: 7, ..small() };
        assert!(matches!(gimm_forward(&f01, &f10, 0.5, &p, &other), Err(GimmError::ShapeMismatch(_))));
    }

    #[test]
    fn loss_values() {
        let z = NormalizedFlow::new(Tensor::full(&[3, 3, 2], 0.5), 2.0).unwrap();
        assert_eq!(gimm_loss(&z, &z).unwrap(), 0.0);
        let shifted = NormalizedFlow::new(
            Tensor::from_fn_hwc(3, 3, 2, |_, _, c| if c == 0 { 0.8 } else { 0.9 }),
            2.0,
        )
        .unwrap();
        assert!((gimm_loss(&shifted, &z).unwrap() - 0.5).abs() < 1e-12);
        let other = NormalizedFlow::new(Tensor::full(&[3, 3, 2], 0.5), 3.0).unwrap();
        assert!(matches!(gimm_loss(&z, &other), Err(GimmError::ScaleMismatch(..))));
    }
}
