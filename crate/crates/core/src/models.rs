//! The rate network, the four experimental architectures and checkpoints.
//!
//! Every architecture is a plain stack of 3x3 convolutions that keeps the
//! input's spatial size. Each layer except the last is followed by ReLU; the
//! last emits raw class logits. The ASC variants run the rate network once per
//! image and hand the same rate field to every adaptive layer.

use std::fmt;
use std::str::FromStr;

use crate::container::{AnyTensor, Container};
use crate::conv::{
    conv_backward, conv_classic_backward, conv_classic_forward, conv_forward, ConvGrads,
    ConvLayer, LayerKind, RateField, SamplingPlan,
};
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{relu, relu_backward, Scalar, Tensor};

/// Output channels of the three rate-network convolutions.
pub const RATE_NET_CHANNELS: [usize; 3] = [8, 4, 1];
/// Per-layer rates of the dilated baseline.
pub const DILATED7_RATES: [usize; 7] = [1, 1, 2, 4, 8, 16, 1];
/// Initial bias of the rate network's last layer; with zero weights every
/// pixel starts at this rate.
pub const INITIAL_RATE: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    ClassicCnn7,
    DilatedCnn7,
    AscNet7,
    AscNet14,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::ClassicCnn7,
        Variant::DilatedCnn7,
        Variant::AscNet7,
        Variant::AscNet14,
    ];

    pub fn id(self) -> u32 {
        match self {
            Variant::ClassicCnn7 => 0,
            Variant::DilatedCnn7 => 1,
            Variant::AscNet7 => 2,
            Variant::AscNet14 => 3,
        }
    }

    pub fn from_id(id: u32) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.id() == id)
            .ok_or_else(|| Error::Config(format!("unknown model variant id {id}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::ClassicCnn7 => "classic7",
            Variant::DilatedCnn7 => "dilated7",
            Variant::AscNet7 => "ascnet7",
            Variant::AscNet14 => "ascnet14",
        }
    }

    pub fn is_adaptive(self) -> bool {
        matches!(self, Variant::AscNet7 | Variant::AscNet14)
    }

    /// `(kind, out_channels)` of every layer in order.
    pub fn layout(self, num_classes: usize) -> Vec<(LayerKind, usize)> {
        let stack = |kind: LayerKind, hidden: usize, depth: usize| {
            let mut layers = vec![(kind, hidden); depth - 1];
            layers.push((kind, num_classes));
            layers
        };
        match self {
            Variant::ClassicCnn7 => stack(LayerKind::Classic, 8, 7),
            Variant::DilatedCnn7 => DILATED7_RATES
                .iter()
                .enumerate()
                .map(|(i, &r)| (LayerKind::Dilated(r), if i == 6 { num_classes } else { 8 }))
                .collect(),
            Variant::AscNet7 => stack(LayerKind::Adaptive, 8, 7),
            Variant::AscNet14 => stack(LayerKind::Adaptive, 32, 14),
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
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub variant: Variant,
    pub in_channels: usize,
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
}

impl ModelSpec {
    pub fn new(variant: Variant, num_classes: usize, height: usize, width: usize) -> Self {
        ModelSpec {
            variant,
            in_channels: 1,
            num_classes,
            height,
            width,
        }
    }
}

/// Three classic 3x3 convolutions (8, 4, 1 channels), each followed by ReLU,
/// mapping the raw image to a non-negative rate field.
#[derive(Clone, Debug, PartialEq)]
pub struct RateNetwork<T = f32> {
    pub layers: Vec<ConvLayer<T>>,
}

/// Activations recorded by [`RateNetwork::forward_cached`]: the input of each
/// layer followed by the emitted rates.
#[derive(Clone, Debug)]
pub struct RateNetCache<T> {
    activations: Vec<Tensor<T>>,
}

impl<T: Scalar> RateNetwork<T> {
    /// He-initialized first two layers; the last layer has zero weights and
    /// bias [`INITIAL_RATE`], so the initial field is constant.
    pub fn new(in_channels: usize, rng: &mut RngState) -> Self {
        let [c1, c2, c3] = RATE_NET_CHANNELS;
        let mut last = ConvLayer::zeros(c2, c3, LayerKind::Classic);
        last.bias.data_mut().fill(T::of(INITIAL_RATE));
        RateNetwork {
            layers: vec![
                ConvLayer::he_normal(in_channels, c1, LayerKind::Classic, rng),
                ConvLayer::he_normal(c1, c2, LayerKind::Classic, rng),
                last,
            ],
        }
    }

    pub fn forward(&self, image: &Tensor<T>) -> Result<RateField<T>> {
        self.forward_cached(image).map(|(rates, _)| rates)
    }

    pub fn forward_cached(&self, image: &Tensor<T>) -> Result<(RateField<T>, RateNetCache<T>)> {
        let mut activations = vec![image.clone()];
        let mut h = image.clone();
        for layer in &self.layers {
            h = relu(&conv_classic_forward(&h, layer)?);
            activations.push(h.clone());
        }
        Ok((RateField::new(h)?, RateNetCache { activations }))
    }

    /// Gradients of every rate-network layer given the loss gradient with
    /// respect to the emitted rates.
    pub fn backward(
        &self,
        cache: &RateNetCache<T>,
        grad_rates: &Tensor<T>,
    ) -> Result<Vec<ConvGrads<T>>> {
        if cache.activations.len() != self.layers.len() + 1 {
            return Err(Error::Config("rate network cache does not match".into()));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_rates.clone();
        for (j, layer) in self.layers.iter().enumerate().rev() {
            g = relu_backward(&cache.activations[j + 1], &g)?;
            let lg = conv_classic_backward(&cache.activations[j], layer, &g)?;
            g = lg.grad_x.clone();
            grads.push(lg);
        }
        grads.reverse();
        Ok(grads)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f32> {
    /// `None` for ad-hoc stacks built with [`Model::adaptive_stack`].
    pub variant: Option<Variant>,
    pub in_channels: usize,
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub layers: Vec<ConvLayer<T>>,
    pub rate_net: Option<RateNetwork<T>>,
}

/// Everything a backward pass needs from the matching forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass<T = f32> {
    pub logits: Tensor<T>,
    pub rates: Option<RateField<T>>,
    layer_inputs: Vec<Tensor<T>>,
    plan: Option<SamplingPlan<T>>,
    rate_cache: Option<RateNetCache<T>>,
}

/// Weight and bias gradients of one convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> From<ConvGrads<T>> for ParamGrads<T> {
    fn from(g: ConvGrads<T>) -> Self {
        ParamGrads {
            weight: g.grad_weight,
            bias: g.grad_bias,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads<T = f32> {
    pub layers: Vec<ParamGrads<T>>,
    pub rate_net: Option<Vec<ParamGrads<T>>>,
    /// Loss gradient with respect to the shared rate field, summed over all
    /// adaptive layers.
    pub rates: Option<Tensor<T>>,
}

impl<T: Scalar> ModelGrads<T> {
    /// Gradient tensors in [`Model::param_names`] order.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for g in self.layers.iter().chain(self.rate_net.iter().flatten()) {
            out.push(&g.weight);
            out.push(&g.bias);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

impl<T: Scalar> Model<T> {
    /// Builds a model with He-initialized convolutions drawn from `rng`.
    pub fn build(spec: ModelSpec, rng: &mut RngState) -> Result<Self> {
        if spec.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if spec.in_channels == 0 || spec.height == 0 || spec.width == 0 {
            return Err(Error::Config(format!("degenerate model spec {spec:?}")));
        }
        let mut layers = Vec::new();
        let mut in_c = spec.in_channels;
        for (kind, out_c) in spec.variant.layout(spec.num_classes) {
            layers.push(ConvLayer::he_normal(in_c, out_c, kind, rng));
            in_c = out_c;
        }
        let rate_net = spec
            .variant
            .is_adaptive()
            .then(|| RateNetwork::new(spec.in_channels, rng));
        Ok(Model {
            variant: Some(spec.variant),
            in_channels: spec.in_channels,
            num_classes: spec.num_classes,
            height: spec.height,
            width: spec.width,
            layers,
            rate_net,
        })
    }

    /// A reduced-depth ASC network: `hidden.len() + 1` adaptive layers sharing
    /// one rate network. Used by the end-to-end gradient checks.
    pub fn adaptive_stack(
        in_channels: usize,
        hidden: &[usize],
        num_classes: usize,
        height: usize,
        width: usize,
        rng: &mut RngState,
    ) -> Self {
        let mut layers = Vec::new();
        let mut in_c = in_channels;
        for &out_c in hidden.iter().chain(std::iter::once(&num_classes)) {
            layers.push(ConvLayer::he_normal(in_c, out_c, LayerKind::Adaptive, rng));
            in_c = out_c;
        }
        Model {
            variant: None,
            in_channels,
            num_classes,
            height,
            width,
            layers,
            rate_net: Some(RateNetwork::new(in_channels, rng)),
        }
    }

    pub fn spec(&self) -> Option<ModelSpec> {
        self.variant.map(|variant| ModelSpec {
            variant,
            in_channels: self.in_channels,
            num_classes: self.num_classes,
            height: self.height,
            width: self.width,
        })
    }

    pub fn is_adaptive(&self) -> bool {
        self.rate_net.is_some()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            variant: self.variant,
            in_channels: self.in_channels,
            num_classes: self.num_classes,
            height: self.height,
            width: self.width,
            layers: self.layers.iter().map(ConvLayer::cast).collect(),
            rate_net: self.rate_net.as_ref().map(|n| RateNetwork {
                layers: n.layers.iter().map(ConvLayer::cast).collect(),
            }),
        }
    }

    fn check_image(&self, image: &Tensor<T>) -> Result<()> {
        image.expect_shape(
            &[1, self.in_channels, self.height, self.width],
            "model input",
        )
    }

    pub fn forward(&self, image: &Tensor<T>) -> Result<ForwardPass<T>> {
        self.check_image(image)?;
        let (rates, rate_cache) = match &self.rate_net {
            Some(net) => {
                let (rates, cache) = net.forward_cached(image)?;
                (Some(rates), Some(cache))
            }
            None => (None, None),
        };
        let plan = rates.as_ref().map(SamplingPlan::new);
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut h = image.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let y = conv_forward(&h, layer, plan.as_ref())?;
            layer_inputs.push(h);
            h = if i < last { relu(&y) } else { y };
        }
        Ok(ForwardPass {
            logits: h,
            rates,
            layer_inputs,
            plan,
            rate_cache,
        })
    }

    pub fn backward(&self, pass: &ForwardPass<T>, grad_logits: &Tensor<T>) -> Result<ModelGrads<T>> {
        if pass.layer_inputs.len() != self.layers.len()
            || pass.plan.is_some() != self.is_adaptive()
        {
            return Err(Error::Config(
                "forward pass does not belong to this model".into(),
            ));
        }
        grad_logits.expect_shape(pass.logits.shape(), "logit gradient")?;
        let mut layer_grads = Vec::with_capacity(self.layers.len());
        let mut grad_rates: Option<Tensor<T>> = None;
        let mut g = grad_logits.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if i + 1 < self.layers.len() {
                g = relu_backward(&pass.layer_inputs[i + 1], &g)?;
            }
            let lg = conv_backward(&pass.layer_inputs[i], layer, pass.plan.as_ref(), &g)?;
            if let Some(gr) = &lg.grad_rates {
                grad_rates = Some(match grad_rates {
                    None => gr.clone(),
                    Some(mut acc) => {
                        for (a, &b) in acc.data_mut().iter_mut().zip(gr.data()) {
                            *a = *a + b;
                        }
                        acc
                    }
                });
            }
            g = lg.grad_x.clone();
            layer_grads.push(ParamGrads::from(lg));
        }
        layer_grads.reverse();

        let rate_net = match (&self.rate_net, &pass.rate_cache, &grad_rates) {
            (Some(net), Some(cache), Some(gr)) => Some(
                net.backward(cache, gr)?
                    .into_iter()
                    .map(ParamGrads::from)
                    .collect(),
            ),
            (None, _, _) => None,
            _ => return Err(Error::Config("missing rate network activations".into())),
        };
        Ok(ModelGrads {
            layers: layer_grads,
            rate_net,
            rates: grad_rates,
        })
    }

    /// Parameter names in a fixed order; also the checkpoint tensor names.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.layers.len() {
            names.push(format!("layer{i}.weight"));
            names.push(format!("layer{i}.bias"));
        }
        if let Some(net) = &self.rate_net {
            for j in 0..net.layers.len() {
                names.push(format!("ratenet.layer{j}.weight"));
                names.push(format!("ratenet.layer{j}.bias"));
            }
        }
        names
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        let net_layers = self.rate_net.iter().flat_map(|n| n.layers.iter());
        for layer in self.layers.iter().chain(net_layers) {
            out.push(&layer.weight);
            out.push(&layer.bias);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        let net_layers = self.rate_net.iter_mut().flat_map(|n| n.layers.iter_mut());
        for layer in self.layers.iter_mut().chain(net_layers) {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
        out
    }

    pub fn to_container(&self) -> Result<Container> {
        let spec = self
            .spec()
            .ok_or_else(|| Error::Config("only named variants can be checkpointed".into()))?;
        let mut c = Container::new();
        for (name, t) in self.param_names().into_iter().zip(self.params()) {
            c.push(name, AnyTensor::from_tensor(t));
        }
        let meta = [
            spec.variant.id() as f32,
            spec.num_classes as f32,
            spec.height as f32,
            spec.width as f32,
        ];
        c.push("spec", Tensor::from_vec(&[4], meta.to_vec())?);
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let meta = c
            .get("spec")
            .ok_or_else(|| Error::format("checkpoint", "missing 'spec' tensor"))?
            .to_tensor::<f64>();
        let [id, classes, h, w] = meta.data() else {
            return Err(Error::format("checkpoint", "'spec' must hold 4 values"));
        };
        let as_count = |v: f64| v as usize;
        let first = c
            .get("layer0.weight")
            .ok_or_else(|| Error::format("checkpoint", "missing 'layer0.weight'"))?;
        let spec = ModelSpec {
            variant: Variant::from_id(*id as u32)?,
            in_channels: first.shape().get(1).copied().unwrap_or(0),
            num_classes: as_count(*classes),
            height: as_count(*h),
            width: as_count(*w),
        };
        let mut model = Model::build(spec, &mut RngState::new(0))?;
        let names = model.param_names();
        for (name, slot) in names.iter().zip(model.params_mut()) {
            let stored = c
                .get(name)
                .ok_or_else(|| Error::format("checkpoint", format!("missing '{name}'")))?;
            if stored.shape() != slot.shape() {
                return Err(Error::format(
                    "checkpoint",
                    format!("'{name}' has shape {:?}, expected {:?}", stored.shape(), slot.shape()),
                ));
            }
            *slot = stored.to_tensor();
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

pub fn build_model<T: Scalar>(spec: ModelSpec, rng: &mut RngState) -> Result<Model<T>> {
    Model::build(spec, rng)
}

pub fn rate_network_forward<T: Scalar>(
    image: &Tensor<T>,
    net: &RateNetwork<T>,
) -> Result<RateField<T>> {
    net.forward(image)
}

/// Logits and, for ASC variants, the rate field shared by all layers.
pub fn model_forward<T: Scalar>(
    model: &Model<T>,
    image: &Tensor<T>,
) -> Result<(Tensor<T>, Option<RateField<T>>)> {
    let pass = model.forward(image)?;
    Ok((pass.logits, pass.rates))
}

pub fn model_backward<T: Scalar>(
    model: &Model<T>,
    pass: &ForwardPass<T>,
    grad_logits: &Tensor<T>,
) -> Result<ModelGrads<T>> {
    model.backward(pass, grad_logits)
}
