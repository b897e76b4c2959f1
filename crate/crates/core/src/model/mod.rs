//! Fully convolutional segmentation network with hand-derived gradients.
//!
//! Architecture: `[3x3 same conv -> ReLU]` for every hidden width, then a 1x1
//! convolution to `C` logits and a per-pixel softmax. Student and teacher are
//! the same type; only the student ever receives gradients.

mod conv;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{Param, ParamSet};
use crate::raster::{LogitGrad, ProbMap, SegImage};
use conv::Geometry;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub hidden_channels: Vec<usize>,
    pub kernel_size: usize,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            num_classes: 5,
            hidden_channels: vec![16, 32, 32],
            kernel_size: 3,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.num_classes > 255 {
            return Err(Error::InvalidConfig(format!(
                "num_classes must be in 2..=255, got {}",
                self.num_classes
            )));
        }
        if self.hidden_channels.is_empty() || self.hidden_channels.contains(&0) {
            return Err(Error::InvalidConfig(
                "hidden_channels must be a non-empty list of positive widths".into(),
            ));
        }
        if self.in_channels == 0 {
            return Err(Error::InvalidConfig("in_channels must be positive".into()));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "kernel_size must be odd for same padding, got {}",
                self.kernel_size
            )));
        }
        Ok(())
    }

    /// `(name, shape)` of every parameter, in storage order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let k = self.kernel_size;
        let mut shapes = Vec::new();
        let mut prev = self.in_channels;
        for (i, &out) in self.hidden_channels.iter().enumerate() {
            shapes.push((format!("conv{i}.weight"), vec![out, prev, k, k]));
            shapes.push((format!("conv{i}.bias"), vec![out]));
            prev = out;
        }
        shapes.push(("head.weight".into(), vec![self.num_classes, prev, 1, 1]));
        shapes.push(("head.bias".into(), vec![self.num_classes]));
        shapes
    }

    /// Recovers the architecture from a parameter set laid out by [`Self::param_shapes`].
    pub fn infer(params: &ParamSet) -> Result<Self> {
        let bad = |msg: &str| Error::IncompatibleParams(format!("cannot infer network: {msg}"));
        let first = params.get("conv0.weight").ok_or_else(|| bad("missing conv0.weight"))?;
        if first.shape.len() != 4 {
            return Err(bad("conv0.weight is not rank 4"));
        }
        let (in_channels, kernel_size) = (first.shape[1], first.shape[2]);
        let mut hidden = Vec::new();
        while let Some(p) = params.get(&format!("conv{}.weight", hidden.len())) {
            hidden.push(*p.shape.first().ok_or_else(|| bad("empty shape"))?);
        }
        let head = params.get("head.weight").ok_or_else(|| bad("missing head.weight"))?;
        let cfg = Self {
            in_channels,
            num_classes: *head.shape.first().ok_or_else(|| bad("empty head shape"))?,
            hidden_channels: hidden,
            kernel_size,
            seed: 0,
        };
        cfg.validate()?;
        let expected = cfg.param_shapes();
        let matches = expected.len() == params.len()
            && expected
                .iter()
                .zip(params.iter())
                .all(|((n, s), p)| *n == p.name && *s == p.shape);
        if !matches {
            return Err(bad("parameter layout does not match a known architecture"));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Student,
    Teacher,
}

#[derive(Debug, Clone)]
struct LayerCache {
    pre: Vec<f64>,
    act: Vec<f64>,
}

/// Activations recorded by [`SegNetwork::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    geometry: Geometry,
    input: Vec<f64>,
    hidden: Vec<LayerCache>,
    params_fingerprint: u32,
}

impl ForwardTrace {
    pub fn layer_count(&self) -> usize {
        self.hidden.len()
    }

    pub fn pre_activation(&self, layer: usize) -> &[f64] {
        &self.hidden[layer].pre
    }

    pub fn activation(&self, layer: usize) -> &[f64] {
        &self.hidden[layer].act
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegNetwork {
    config: NetworkConfig,
    params: ParamSet,
    role: Role,
}

/// He-style uniform initialisation with zero biases, deterministic in `cfg.seed`.
pub fn init_network(cfg: &NetworkConfig) -> Result<SegNetwork> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ParamSet::new();
    for (name, shape) in cfg.param_shapes() {
        let values = if name.ends_with(".weight") {
            let bound = fan_in_bound(&shape);
            let dist = Uniform::new(-bound, bound);
            (0..shape.iter().product()).map(|_| dist.sample(&mut rng)).collect()
        } else {
            vec![0.0; shape.iter().product()]
        };
        params.push(Param::new(name, shape, values)?)?;
    }
    Ok(SegNetwork {
        config: cfg.clone(),
        params,
        role: Role::Student,
    })
}

/// `sqrt(6 / fan_in)` for a weight of shape `[out, in, k, k]`.
pub fn fan_in_bound(weight_shape: &[usize]) -> f64 {
    let fan_in: usize = weight_shape[1..].iter().product();
    (6.0 / fan_in as f64).sqrt()
}

/// `alpha * teacher + (1 - alpha) * student`, element-wise.
pub fn ema_update(teacher: &ParamSet, student: &ParamSet, alpha: f64) -> Result<ParamSet> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!("EMA alpha {alpha} outside [0, 1]")));
    }
    teacher.ensure_compatible(student)?;
    let mut out = teacher.clone();
    for (o, s) in out.iter_mut().zip(student.iter()) {
        for (t, &sv) in o.values.iter_mut().zip(&s.values) {
            // Clamping keeps the blend inside [min, max] under rounding, which
            // also makes equal inputs an exact fixed point.
            let blended = alpha * *t + (1.0 - alpha) * sv;
            *t = blended.clamp(t.min(sv), t.max(sv));
        }
    }
    Ok(out)
}

impl SegNetwork {
    /// Wraps an existing parameter set, inferring the architecture from its shapes.
    pub fn from_params(params: ParamSet, role: Role) -> Result<Self> {
        let config = NetworkConfig::infer(&params)?;
        Ok(Self {
            config,
            params,
            role,
        })
    }

    /// Exact copy with the teacher role.
    pub fn to_teacher(&self) -> Self {
        Self {
            config: self.config.clone(),
            params: self.params.clone(),
            role: Role::Teacher,
        }
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn set_params(&mut self, params: ParamSet) -> Result<()> {
        self.params.ensure_compatible(&params)?;
        self.params = params;
        Ok(())
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn weight(&self, name: &str) -> &[f64] {
        &self.params.get(name).expect("layout checked at construction").values
    }

    fn check_input(&self, x: &SegImage) -> Result<()> {
        if x.channels() != self.config.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} input channels, image has {}",
                self.config.in_channels,
                x.channels()
            )));
        }
        Ok(())
    }

    fn run(&self, x: &SegImage, record: bool) -> Result<(ProbMap, Option<ForwardTrace>)> {
        self.check_input(x)?;
        let geo = Geometry {
            height: x.height(),
            width: x.width(),
        };
        let hw = geo.pixels();
        let k = self.config.kernel_size;

        // HWC -> CHW
        let ch = x.channels();
        let mut input = vec![0.0; ch * hw];
        for (p, px) in x.data().chunks_exact(ch).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                input[c * hw + p] = v;
            }
        }

        let mut hidden = Vec::with_capacity(self.config.hidden_channels.len());
        let mut prev_ch = ch;
        let mut current = input.clone();
        for (i, &out_ch) in self.config.hidden_channels.iter().enumerate() {
            let pre = conv::conv_forward(
                self.weight(&format!("conv{i}.weight")),
                self.weight(&format!("conv{i}.bias")),
                &current,
                prev_ch,
                out_ch,
                geo,
                k,
            );
            let act: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
            if record {
                hidden.push(LayerCache {
                    pre,
                    act: act.clone(),
                });
            }
            current = act;
            prev_ch = out_ch;
        }

        let c = self.config.num_classes;
        let logits_chw = conv::conv_forward(
            self.weight("head.weight"),
            self.weight("head.bias"),
            &current,
            prev_ch,
            c,
            geo,
            1,
        );
        let mut logits = vec![0.0; hw * c];
        for cls in 0..c {
            for p in 0..hw {
                logits[p * c + cls] = logits_chw[cls * hw + p];
            }
        }
        let probs = ProbMap::softmax(geo.height, geo.width, c, logits)?;
        let trace = record.then(|| ForwardTrace {
            geometry: geo,
            input,
            hidden,
            params_fingerprint: self.params.checksum(),
        });
        Ok((probs, trace))
    }

    /// Class probabilities plus the activations needed by [`Self::backward`].
    pub fn forward(&self, x: &SegImage) -> Result<(ProbMap, ForwardTrace)> {
        let (probs, trace) = self.run(x, true)?;
        Ok((probs, trace.expect("trace recorded")))
    }

    /// Inference-only forward pass.
    pub fn predict(&self, x: &SegImage) -> Result<ProbMap> {
        Ok(self.run(x, false)?.0)
    }

    /// Parameter gradients given the gradient of the loss with respect to the
    /// pre-softmax logits. Gradients are accumulated into `grads`.
    pub fn backward_into(&self, trace: &ForwardTrace, grad_logits: &LogitGrad, grads: &mut ParamSet) -> Result<()> {
        if self.role == Role::Teacher {
            return Err(Error::InvalidInput(
                "teacher parameters are only updated through EMA".into(),
            ));
        }
        if trace.params_fingerprint != self.params.checksum()
            || trace.hidden.len() != self.config.hidden_channels.len()
        {
            return Err(Error::StaleTrace(
                "trace was recorded with different parameters".into(),
            ));
        }
        let geo = trace.geometry;
        let c = self.config.num_classes;
        if grad_logits.height != geo.height || grad_logits.width != geo.width || grad_logits.num_classes != c {
            return Err(Error::StaleTrace(format!(
                "logit gradient {}x{}x{} does not match trace {}x{}x{c}",
                grad_logits.height, grad_logits.width, grad_logits.num_classes, geo.height, geo.width
            )));
        }
        self.params.ensure_compatible(grads)?;
        let hw = geo.pixels();
        let k = self.config.kernel_size;

        let mut grad = vec![0.0; c * hw];
        for p in 0..hw {
            for cls in 0..c {
                grad[cls * hw + p] = grad_logits.data[p * c + cls];
            }
        }

        let layers = self.config.hidden_channels.len();
        let last_ch = self.config.hidden_channels[layers - 1];
        let mut grad_act = {
            let (gw, gb) = grad_pair(grads, "head");
            conv::conv_backward(
                self.weight("head.weight"),
                &trace.hidden[layers - 1].act,
                &grad,
                last_ch,
                c,
                geo,
                1,
                gw,
                gb,
                true,
            )
            .expect("input gradient requested")
        };

        for i in (0..layers).rev() {
            let cache = &trace.hidden[i];
            for (g, &pre) in grad_act.iter_mut().zip(&cache.pre) {
                if pre <= 0.0 {
                    *g = 0.0;
                }
            }
            let (in_ch, input) = if i == 0 {
                (self.config.in_channels, &trace.input)
            } else {
                (self.config.hidden_channels[i - 1], &trace.hidden[i - 1].act)
            };
            let out_ch = self.config.hidden_channels[i];
            let weight = self.weight(&format!("conv{i}.weight"));
            let (gw, gb) = grad_pair(grads, &format!("conv{i}"));
            let next = conv::conv_backward(weight, input, &grad_act, in_ch, out_ch, geo, k, gw, gb, i > 0);
            if let Some(next) = next {
                grad_act = next;
            }
        }
        Ok(())
    }

    /// Fresh gradient set for one upstream logit gradient.
    pub fn backward(&self, trace: &ForwardTrace, grad_logits: &LogitGrad) -> Result<ParamSet> {
        let mut grads = self.params.zeros_like();
        self.backward_into(trace, grad_logits, &mut grads)?;
        Ok(grads)
    }
}

/// Mutable weight and bias gradient buffers of one layer.
fn grad_pair<'a>(grads: &'a mut ParamSet, layer: &str) -> (&'a mut [f64], &'a mut [f64]) {
    let weight_name = format!("{layer}.weight");
    let bias_name = format!("{layer}.bias");
    let mut weight = None;
    let mut bias = None;
    for p in grads.iter_mut() {
        if p.name == weight_name {
            weight = Some(p.values.as_mut_slice());
        } else if p.name == bias_name {
            bias = Some(p.values.as_mut_slice());
        }
    }
    (
        weight.expect("compatible gradient set"),
        bias.expect("compatible gradient set"),
    )
}
