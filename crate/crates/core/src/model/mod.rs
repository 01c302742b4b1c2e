//! Per-modality LSTM with multi-scale attention, per-domain squeeze-and-
//! excitation recalibration, and a softmax classifier over the fused vector.

mod config;
mod ops;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataio::Domain;
use crate::graph::{grad_check, uniform_fan_in, GradCheckReport, GraphError, NodeId, ParamId, ParamSet, Tape, Tensor};

pub use config::{DomainConfig, ModalityConfig, ModelConfig, Variant};
pub use ops::{fuse_and_classify, lstm_features, merge_timesteps, msa, scale_attention, se_recalibrate, Cav, LstmLayer};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Numerical floor inside the log of the loss.
pub const NLL_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug)]
struct LstmIds {
    w_ih: ParamId,
    w_hh: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct ModalityIds {
    layers: Vec<LstmIds>,
    /// Context vectors, one per attention scale.
    u: Vec<ParamId>,
}

#[derive(Clone, Debug)]
struct DomainIds {
    modalities: Vec<ModalityIds>,
    se: Option<(ParamId, ParamId)>,
}

const SCALE_NAMES: [&str; 3] = ["u_short", "u_medium", "u_long"];
const MERGE_FACTORS: [usize; 3] = [1, 2, 3];

fn modality_prefix(domain: Domain, channel: &str) -> String {
    format!("{}.{}", domain.to_string().to_lowercase(), channel)
}

fn se_prefix(domain: Domain) -> String {
    format!("{}.se", domain.to_string().to_lowercase())
}

/// Model parameters plus the config that shapes them.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    domains: Vec<DomainIds>,
    head: (ParamId, ParamId),
}

/// Node handles recorded during a forward pass, for inspection after the fact.
#[derive(Clone, Debug)]
pub struct ForwardNodes {
    pub probs: NodeId,
    pub logits: NodeId,
    /// Per domain, per modality, per scale: (rows attended over, weights, pooled).
    pub attention: Vec<Vec<Vec<(NodeId, NodeId, NodeId)>>>,
    /// Per domain, per modality.
    pub cavs: Vec<Vec<NodeId>>,
    /// Per domain: stacked CAVs, SE gate (if any), recalibrated output.
    pub domains: Vec<(NodeId, Option<NodeId>, NodeId)>,
    pub global: NodeId,
}

/// Values read back from [`ForwardNodes`].
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub probs: Vec<f64>,
    pub attention: Vec<Vec<Vec<AttentionTrace>>>,
    pub cav_lens: Vec<Vec<usize>>,
    pub domain_inputs: Vec<Tensor>,
    pub se_gates: Vec<Option<Vec<f64>>>,
    pub domain_outputs: Vec<Tensor>,
    pub global_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    pub rows: Tensor,
    pub weights: Vec<f64>,
    pub pooled: Vec<f64>,
}

impl ForwardNodes {
    pub fn trace(&self, tape: &Tape) -> ForwardTrace {
        let v = |n: NodeId| tape.value(n).clone();
        ForwardTrace {
            probs: v(self.probs).into_data(),
            attention: self
                .attention
                .iter()
                .map(|d| {
                    d.iter()
                        .map(|m| {
                            m.iter()
                                .map(|&(r, w, p)| AttentionTrace {
                                    rows: v(r),
                                    weights: v(w).into_data(),
                                    pooled: v(p).into_data(),
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect(),
            cav_lens: self
                .cavs
                .iter()
                .map(|d| d.iter().map(|c| tape.value(*c).len()).collect())
                .collect(),
            domain_inputs: self.domains.iter().map(|d| v(d.0)).collect(),
            se_gates: self.domains.iter().map(|d| d.1.map(|s| v(s).into_data())).collect(),
            domain_outputs: self.domains.iter().map(|d| v(d.2)).collect(),
            global_len: tape.value(self.global).len(),
        }
    }
}

impl Model {
    /// Creates a model with seeded fan-in uniform initialization; LSTM
    /// forget-gate biases start at 1 and the head bias at 0.
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let h = config.hidden;
        let mut params = ParamSet::new();
        for d in &config.domains {
            for m in &d.modalities {
                let prefix = modality_prefix(d.domain, &m.channel);
                for l in 0..config.layers {
                    let input = if l == 0 { m.input_size } else { h };
                    params.add(format!("{prefix}.lstm{l}.w_ih"), uniform_fan_in(&mut rng, 4 * h, input, h))?;
                    params.add(format!("{prefix}.lstm{l}.w_hh"), uniform_fan_in(&mut rng, 4 * h, h, h))?;
                    let mut b = uniform_fan_in(&mut rng, 1, 4 * h, h);
                    b.data_mut()[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
                    params.add(format!("{prefix}.lstm{l}.b"), b)?;
                }
                for name in &SCALE_NAMES[..config.variant.scales()] {
                    params.add(format!("{prefix}.{name}"), uniform_fan_in(&mut rng, 1, h, h))?;
                }
            }
            if config.variant.uses_se() {
                let (c, r) = (config.cav_len(), config.se_hidden());
                let prefix = se_prefix(d.domain);
                params.add(format!("{prefix}.w1"), uniform_fan_in(&mut rng, r, c, c))?;
                params.add(format!("{prefix}.w2"), uniform_fan_in(&mut rng, c, r, r))?;
            }
        }
        let g = config.global_len();
        params.add("head.w", uniform_fan_in(&mut rng, config.classes, g, g))?;
        params.add("head.b", Tensor::zeros(1, config.classes))?;
        Self::from_params(config, params)
    }

    /// Binds an existing parameter set (for example, a loaded checkpoint) to `config`.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self, ModelError> {
        config.validate()?;
        let h = config.hidden;
        let lookup = |name: String, shape: (usize, usize)| -> Result<ParamId, ModelError> {
            let id = params.id(&name).ok_or_else(|| GraphError::UnknownParam(name.clone()))?;
            let got = params.get(id).values.shape();
            if got != shape {
                return Err(ModelError::DimensionMismatch(format!("{name}: {got:?} != {shape:?}")));
            }
            Ok(id)
        };
        let mut domains = Vec::with_capacity(config.domains.len());
        for d in &config.domains {
            let mut modalities = Vec::with_capacity(d.modalities.len());
            for m in &d.modalities {
                let prefix = modality_prefix(d.domain, &m.channel);
                let layers = (0..config.layers)
                    .map(|l| {
                        let input = if l == 0 { m.input_size } else { h };
                        Ok(LstmIds {
                            w_ih: lookup(format!("{prefix}.lstm{l}.w_ih"), (4 * h, input))?,
                            w_hh: lookup(format!("{prefix}.lstm{l}.w_hh"), (4 * h, h))?,
                            b: lookup(format!("{prefix}.lstm{l}.b"), (1, 4 * h))?,
                        })
                    })
                    .collect::<Result<Vec<_>, ModelError>>()?;
                let u = SCALE_NAMES[..config.variant.scales()]
                    .iter()
                    .map(|n| lookup(format!("{prefix}.{n}"), (1, h)))
                    .collect::<Result<Vec<_>, _>>()?;
                modalities.push(ModalityIds { layers, u });
            }
            let se = if config.variant.uses_se() {
                let (c, r) = (config.cav_len(), config.se_hidden());
                let prefix = se_prefix(d.domain);
                Some((lookup(format!("{prefix}.w1"), (r, c))?, lookup(format!("{prefix}.w2"), (c, r))?))
            } else {
                None
            };
            domains.push(DomainIds { modalities, se });
        }
        let g = config.global_len();
        let head = (
            lookup("head.w".into(), (config.classes, g))?,
            lookup("head.b".into(), (1, config.classes))?,
        );
        if params.len() != count_params(&config) {
            return Err(ModelError::DimensionMismatch(format!(
                "parameter set has {} tensors, config expects {}",
                params.len(),
                count_params(&config)
            )));
        }
        Ok(Self {
            config,
            params,
            domains,
            head,
        })
    }

    fn check_inputs(&self, inputs: &[&Tensor]) -> Result<(), ModelError> {
        let expected: Vec<usize> = self
            .config
            .domains
            .iter()
            .flat_map(|d| d.modalities.iter().map(|m| m.input_size))
            .collect();
        if inputs.len() != expected.len() {
            return Err(ModelError::DimensionMismatch(format!(
                "{} inputs for {} modalities",
                inputs.len(),
                expected.len()
            )));
        }
        for ((x, f), ch) in inputs.iter().zip(&expected).zip(self.config.channels()) {
            if x.cols() != *f {
                return Err(ModelError::DimensionMismatch(format!(
                    "{ch}: window length {} != {f}",
                    x.cols()
                )));
            }
        }
        Ok(())
    }

    /// Records the full forward pass for one sample on `tape`.
    ///
    /// `inputs` holds one `T × F` matrix per modality in config order. The
    /// tape must have been created over `self.params`.
    pub fn forward(&self, tape: &mut Tape, inputs: &[&Tensor]) -> Result<ForwardNodes, ModelError> {
        self.check_inputs(inputs)?;
        let h = self.config.hidden;
        let mut inputs = inputs.iter();
        let mut attention = Vec::new();
        let mut cavs = Vec::new();
        let mut domain_nodes = Vec::new();
        let mut global_parts = Vec::new();
        for dom in &self.domains {
            let mut dom_att = Vec::new();
            let mut dom_cavs = Vec::new();
            for m in &dom.modalities {
                let x = tape.input((*inputs.next().expect("checked")).clone())?;
                let layers: Vec<(NodeId, NodeId, NodeId)> = m
                    .layers
                    .iter()
                    .map(|l| (tape.param(l.w_ih), tape.param(l.w_hh), tape.param(l.b)))
                    .collect();
                let hidden = ops::lstm_nodes(tape, x, &layers, h)?;
                let mut scales = Vec::new();
                let mut pooled = Vec::new();
                for (u, factor) in m.u.iter().zip(MERGE_FACTORS) {
                    let rows = if factor == 1 { hidden } else { tape.merge_rows(hidden, factor)? };
                    let u = tape.param(*u);
                    let (w, p) = ops::attention_nodes(tape, rows, u)?;
                    scales.push((rows, w, p));
                    pooled.push(p);
                }
                let cav = if pooled.len() == 1 { pooled[0] } else { tape.concat(&pooled)? };
                dom_att.push(scales);
                dom_cavs.push(cav);
            }
            let stacked = tape.stack_rows(&dom_cavs)?;
            let (gate, out) = match dom.se {
                Some((w1, w2)) => {
                    let (w1, w2) = (tape.param(w1), tape.param(w2));
                    let (s, out) = ops::se_nodes(tape, stacked, w1, w2)?;
                    (Some(s), out)
                }
                None => (None, stacked),
            };
            attention.push(dom_att);
            cavs.push(dom_cavs);
            domain_nodes.push((stacked, gate, out));
            global_parts.push(out);
        }
        let global = tape.concat(&global_parts)?;
        let (w, b) = (tape.param(self.head.0), tape.param(self.head.1));
        let (logits, probs) = ops::head_nodes(tape, global, w, b)?;
        Ok(ForwardNodes {
            probs,
            logits,
            attention,
            cavs,
            domains: domain_nodes,
            global,
        })
    }

    /// Forward pass plus loss `-ln(ŷ[label] + 1e-12)`; returns (loss node, nodes).
    pub fn loss(&self, tape: &mut Tape, inputs: &[&Tensor], label: usize) -> Result<(NodeId, ForwardNodes), ModelError> {
        if label >= self.config.classes {
            return Err(ModelError::DimensionMismatch(format!(
                "label {label} out of {} classes",
                self.config.classes
            )));
        }
        let nodes = self.forward(tape, inputs)?;
        let loss = tape.nll(nodes.probs, label, NLL_EPS)?;
        Ok((loss, nodes))
    }

    /// Class probabilities for one sample.
    pub fn predict(&self, inputs: &[&Tensor]) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new(&self.params);
        let nodes = self.forward(&mut tape, inputs)?;
        Ok(tape.value(nodes.probs).data().to_vec())
    }

    pub fn trace(&self, inputs: &[&Tensor]) -> Result<ForwardTrace, ModelError> {
        let mut tape = Tape::new(&self.params);
        let nodes = self.forward(&mut tape, inputs)?;
        Ok(nodes.trace(&tape))
    }
}

fn count_params(config: &ModelConfig) -> usize {
    let per_modality = 3 * config.layers + config.variant.scales();
    let per_domain = if config.variant.uses_se() { 2 } else { 0 };
    config.num_modalities() * per_modality + config.domains.len() * per_domain + 2
}

/// The small two-domain, two-modality configuration used for gradient checks.
pub fn micro_config(variant: Variant, seed: u64) -> ModelConfig {
    let modality = |c: &str| ModalityConfig {
        channel: c.to_string(),
        input_size: 5,
    };
    ModelConfig {
        domains: vec![
            DomainConfig {
                domain: Domain::Peripheral,
                modalities: vec![modality("ACC_Z"), modality("EDA")],
            },
            DomainConfig {
                domain: Domain::Trunk,
                modalities: vec![modality("LAT_ACC"), modality("LONG_ACC")],
            },
        ],
        hidden: 4,
        reduction: 4,
        layers: 2,
        classes: 2,
        variant,
        seed,
    }
}

/// Random `T × F` inputs matching `config`, one per modality.
pub fn random_inputs(config: &ModelConfig, windows: usize, seed: u64) -> Vec<Tensor> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    config
        .domains
        .iter()
        .flat_map(|d| d.modalities.iter())
        .map(|m| {
            let data = (0..windows * m.input_size).map(|_| StandardNormal.sample(&mut rng)).collect();
            Tensor::matrix(windows, m.input_size, data).expect("consistent shape")
        })
        .collect()
}

/// Window count of the micro-model inputs used by [`micro_grad_check`].
pub const MICRO_WINDOWS: usize = 6;

/// Finite-difference check of the whole micro-model loss for one seed.
///
/// Parameters named in `frozen` are held constant and report zero gradients.
pub fn micro_grad_check(
    variant: Variant,
    seed: u64,
    epsilon: f64,
    tolerance: f64,
    frozen: &[&str],
) -> Result<GradCheckReport, ModelError> {
    let cfg = micro_config(variant, seed);
    let mut model = Model::new(cfg.clone())?;
    for name in frozen {
        model.params.freeze(name)?;
    }
    let x = random_inputs(&cfg, MICRO_WINDOWS, 1000 + seed);
    let refs: Vec<&Tensor> = x.iter().collect();
    let label = (seed % 2) as usize;
    let shell = model.clone();
    let report = grad_check(
        &mut model.params,
        |tape| {
            let (loss, _) = shell.loss(tape, &refs, label).map_err(|e| match e {
                ModelError::Graph(g) => g,
                other => GraphError::ShapeMismatch(other.to_string()),
            })?;
            Ok(loss)
        },
        epsilon,
        tolerance,
    )?;
    Ok(report)
}
