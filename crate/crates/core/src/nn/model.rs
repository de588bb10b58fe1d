use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    Activation, BiRnnLayer, Dense, Graph, Hnmc2Layer, HnmcCnLayer, HnmcLayer, Merge, NnError, ParamStore, Result,
    RnnLayer,
};
use crate::autodiff::{Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "rnn")]
    Rnn,
    #[serde(rename = "birnn")]
    BiRnn,
    #[serde(rename = "hnmc")]
    Hnmc,
    #[serde(rename = "hnmc2")]
    Hnmc2,
    #[serde(rename = "hnmc-cn")]
    HnmcCn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Rnn,
        ModelKind::BiRnn,
        ModelKind::Hnmc,
        ModelKind::Hnmc2,
        ModelKind::HnmcCn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Rnn => "rnn",
            ModelKind::BiRnn => "birnn",
            ModelKind::Hnmc => "hnmc",
            ModelKind::Hnmc2 => "hnmc2",
            ModelKind::HnmcCn => "hnmc-cn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| NnError::InvalidSpec(format!("unknown model kind '{s}'")))
    }
}

/// Shape of a labelled model.
///
/// * arch 1: one model layer with `n_labels` outputs;
/// * arch 2: a model layer of `hidden_size` followed by a dense head;
/// * arch 3: two stacked model layers, the second with `n_labels` outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub kind: ModelKind,
    pub arch: u8,
    pub hidden_size: usize,
    pub n_labels: usize,
    pub embedding_dim: usize,
    #[serde(default)]
    pub activation: Activation,
    /// Hidden widths inside each entropic kernel; empty means a single affine map.
    #[serde(default)]
    pub kernel_hidden: Vec<usize>,
}

impl ArchitectureSpec {
    pub fn new(kind: ModelKind, arch: u8, hidden_size: usize, n_labels: usize, embedding_dim: usize) -> Self {
        ArchitectureSpec {
            kind,
            arch,
            hidden_size,
            n_labels,
            embedding_dim,
            activation: Activation::Melu,
            kernel_hidden: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.arch) {
            return Err(NnError::InvalidSpec(format!("architecture must be 1, 2 or 3, got {}", self.arch)));
        }
        if self.n_labels == 0 || self.embedding_dim == 0 {
            return Err(NnError::InvalidSpec("label count and embedding width must be positive".into()));
        }
        if self.arch > 1 && self.hidden_size == 0 {
            return Err(NnError::InvalidSpec("hidden size must be positive for arch 2 and 3".into()));
        }
        if self.kernel_hidden.contains(&0) {
            return Err(NnError::InvalidSpec("kernel hidden widths must be positive".into()));
        }
        Ok(())
    }

    /// Number of learning-rate groups (one per layer).
    pub fn n_layers(&self) -> usize {
        if self.arch == 1 {
            1
        } else {
            2
        }
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Hnmc(HnmcLayer),
    Hnmc2(Hnmc2Layer),
    HnmcCn(HnmcCnLayer),
    Rnn(RnnLayer),
    BiRnn(BiRnnLayer),
    Dense(Dense),
}

impl Layer {
    pub fn forward(&self, g: &mut Graph<'_>, xs: &[Var]) -> Result<Vec<Var>> {
        match self {
            Layer::Hnmc(l) => l.forward(g, xs),
            Layer::Hnmc2(l) => l.forward(g, xs),
            Layer::HnmcCn(l) => l.forward(g, xs),
            Layer::Rnn(l) => l.forward(g, xs),
            Layer::BiRnn(l) => l.forward(g, xs),
            Layer::Dense(l) => l.forward(g, xs),
        }
    }

    pub fn output_width(&self) -> usize {
        match self {
            Layer::Hnmc(l) => l.n_states,
            Layer::Hnmc2(l) => l.n_states,
            Layer::HnmcCn(l) => l.n_states,
            Layer::Rnn(l) => l.hidden,
            Layer::BiRnn(l) => l.output_width(),
            Layer::Dense(l) => l.output_dim,
        }
    }
}

/// Layers plus their parameters, mapping an embedded sequence to per-token
/// label scores. The last layer's outputs are the logits fed to softmax.
#[derive(Debug, Clone)]
pub struct LabeledModel {
    pub spec: ArchitectureSpec,
    pub store: ParamStore,
    pub layers: Vec<Layer>,
}

#[allow(clippy::too_many_arguments)]
fn model_layer(
    spec: &ArchitectureSpec,
    store: &mut ParamStore,
    prefix: &str,
    input_dim: usize,
    width: usize,
    merge: Merge,
    group: usize,
    rng: &mut ChaCha8Rng,
) -> Layer {
    let (act, kh) = (spec.activation, spec.kernel_hidden.as_slice());
    match spec.kind {
        ModelKind::Rnn => Layer::Rnn(RnnLayer::new(store, prefix, input_dim, width, group, rng)),
        ModelKind::BiRnn => Layer::BiRnn(BiRnnLayer::new(store, prefix, input_dim, width, merge, group, rng)),
        ModelKind::Hnmc => Layer::Hnmc(HnmcLayer::new(store, prefix, input_dim, width, kh, act, group, rng)),
        ModelKind::Hnmc2 => Layer::Hnmc2(Hnmc2Layer::new(store, prefix, input_dim, width, kh, act, group, rng)),
        ModelKind::HnmcCn => Layer::HnmcCn(HnmcCnLayer::new(store, prefix, input_dim, width, kh, act, group, rng)),
    }
}

/// Builds a model with weights drawn uniformly in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`
/// from a generator seeded with `seed`.
///
/// A BiRNN whose output feeds the labels directly sums its two directions so
/// that its width is the label count; elsewhere it concatenates them.
pub fn build_model(spec: &ArchitectureSpec, seed: u64) -> Result<LabeledModel> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let d = spec.embedding_dim;
    let layers = match spec.arch {
        1 => vec![model_layer(spec, &mut store, "layer0", d, spec.n_labels, Merge::Sum, 0, &mut rng)],
        2 => {
            let first = model_layer(spec, &mut store, "layer0", d, spec.hidden_size, Merge::Concat, 0, &mut rng);
            let head = Dense::new(&mut store, "head", first.output_width(), spec.n_labels, 1, &mut rng);
            vec![first, Layer::Dense(head)]
        }
        _ => {
            let first = model_layer(spec, &mut store, "layer0", d, spec.hidden_size, Merge::Concat, 0, &mut rng);
            let width = first.output_width();
            let second = model_layer(spec, &mut store, "layer1", width, spec.n_labels, Merge::Sum, 1, &mut rng);
            vec![first, second]
        }
    };
    Ok(LabeledModel {
        spec: spec.clone(),
        store,
        layers,
    })
}

impl LabeledModel {
    /// Rebuilds the model for `spec` and overwrites every parameter with the
    /// tensor of the same name.
    pub fn from_named_tensors(spec: &ArchitectureSpec, tensors: &[(String, Tensor)]) -> Result<Self> {
        let mut model = build_model(spec, 0)?;
        if tensors.len() != model.store.len() {
            return Err(NnError::InvalidSpec(format!(
                "expected {} parameter tensors, found {}",
                model.store.len(),
                tensors.len()
            )));
        }
        for (name, t) in tensors {
            let id = model
                .store
                .find(name)
                .ok_or_else(|| NnError::InvalidSpec(format!("unexpected parameter '{name}'")))?;
            let target = model.store.get_mut(id);
            if target.shape() != t.shape() {
                return Err(NnError::InvalidSpec(format!(
                    "parameter '{name}' has shape {:?}, expected {:?}",
                    t.shape(),
                    target.shape()
                )));
            }
            target.data_mut().copy_from_slice(t.data());
        }
        Ok(model)
    }

    pub fn n_parameters(&self) -> usize {
        self.store.n_scalars()
    }

    /// Label scores per position, recorded on `g`.
    pub fn logits(&self, g: &mut Graph<'_>, inputs: &[Vec<f64>]) -> Result<Vec<Var>> {
        if inputs.is_empty() {
            return Err(NnError::EmptySequence);
        }
        let d = self.spec.embedding_dim;
        let mut xs = Vec::with_capacity(inputs.len());
        for row in inputs {
            if row.len() != d {
                return Err(NnError::InputWidth {
                    expected: d,
                    got: row.len(),
                });
            }
            xs.push(g.tape.vector(row));
        }
        for layer in &self.layers {
            xs = layer.forward(g, &xs)?;
        }
        Ok(xs)
    }

    /// Summed token cross-entropy of one sequence.
    pub fn loss(&self, g: &mut Graph<'_>, inputs: &[Vec<f64>], labels: &[usize]) -> Result<Var> {
        if inputs.len() != labels.len() {
            return Err(NnError::LengthMismatch {
                inputs: inputs.len(),
                labels: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= self.spec.n_labels) {
            return Err(NnError::LabelOutOfRange {
                label,
                n_labels: self.spec.n_labels,
            });
        }
        let logits = self.logits(g, inputs)?;
        let mut terms = Vec::with_capacity(logits.len());
        for (&z, &y) in logits.iter().zip(labels) {
            terms.push(g.tape.cross_entropy(z, y)?);
        }
        let stacked = g.tape.stack(&terms)?;
        Ok(g.tape.sum(stacked))
    }

    /// Softmax label distributions per position.
    pub fn probabilities(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new(&self.store);
        let logits = self.logits(&mut g, inputs)?;
        logits
            .into_iter()
            .map(|z| {
                let p = g.tape.softmax(z)?;
                Ok(g.tape.value(p).to_vec())
            })
            .collect()
    }

    /// Arg-max label per position; the lowest index wins ties.
    pub fn predict(&self, inputs: &[Vec<f64>]) -> Result<Vec<usize>> {
        let mut g = Graph::new(&self.store);
        let logits = self.logits(&mut g, inputs)?;
        Ok(logits.into_iter().map(|z| argmax(g.tape.value(z))).collect())
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
