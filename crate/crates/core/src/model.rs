//! Fully connected networks: forward pass with activation capture, parameter
//! accounting and the text model format.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matvec, relu, IndexSet, Matrix, Vector};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
    /// Affine output; only legal on the final layer (pre-softmax scores).
    Identity,
}

impl ActivationKind {
    fn apply(self, v: Vector) -> Vector {
        match self {
            ActivationKind::Relu => relu(&v),
            ActivationKind::Identity => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vector,
    pub activation: ActivationKind,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vector, activation: ActivationKind) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::validation(format!(
                "bias length {} does not match {} weight rows",
                bias.len(),
                weights.rows()
            )));
        }
        Ok(DenseLayer {
            weights,
            bias,
            activation,
        })
    }

    /// Output dimension.
    pub fn units(&self) -> usize {
        self.weights.rows()
    }

    /// Input dimension.
    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    /// `activation(b + W·x)`.
    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        let wx = matvec(&self.weights, x)?;
        let pre = wx
            .as_slice()
            .iter()
            .zip(self.bias.as_slice())
            .map(|(s, b)| b + s)
            .collect();
        Ok(self.activation.apply(Vector::new(pre)?))
    }
}

/// Records which coordinates of a wider original input a network consumes,
/// once columns of its first layer have been pruned away.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputMap {
    pub source_dim: usize,
    pub keep: IndexSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<DenseLayer>,
    labels: Option<Vec<String>>,
    input_map: Option<InputMap>,
}

impl Network {
    pub fn new(layers: Vec<DenseLayer>, labels: Option<Vec<String>>) -> Result<Self> {
        Network::with_input_map(layers, labels, None)
    }

    pub fn with_input_map(
        layers: Vec<DenseLayer>,
        labels: Option<Vec<String>>,
        input_map: Option<InputMap>,
    ) -> Result<Self> {
        let last = layers.len().saturating_sub(1);
        for (k, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.units() {
                return Err(Error::validation(format!(
                    "layer {k}: bias length {} does not match {} weight rows",
                    layer.bias.len(),
                    layer.units()
                )));
            }
            if layer.activation == ActivationKind::Identity && k != last {
                return Err(Error::validation(format!(
                    "layer {k}: identity activation is only allowed on the final layer"
                )));
            }
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[1].inputs() != pair[0].units() {
                return Err(Error::validation(format!(
                    "layer {} expects {} inputs but layer {k} produces {}",
                    k + 1,
                    pair[1].inputs(),
                    pair[0].units()
                )));
            }
        }
        if let Some(labels) = &labels {
            let outputs = layers.last().map_or(0, DenseLayer::units);
            if labels.len() != outputs {
                return Err(Error::validation(format!(
                    "{} labels for {outputs} output units",
                    labels.len()
                )));
            }
        }
        if let Some(map) = &input_map {
            let Some(first) = layers.first() else {
                return Err(Error::validation("input map on a network without layers"));
            };
            if map.keep.len() != first.inputs() {
                return Err(Error::validation(format!(
                    "input map keeps {} coordinates but layer 0 has {} inputs",
                    map.keep.len(),
                    first.inputs()
                )));
            }
            if map.keep.max().is_some_and(|m| m >= map.source_dim) {
                return Err(Error::validation(format!(
                    "input map index out of range for source dimension {}",
                    map.source_dim
                )));
            }
        }
        Ok(Network {
            layers,
            labels,
            input_map,
        })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layer(&self, k: usize) -> Result<&DenseLayer> {
        self.layers.get(k).ok_or_else(|| {
            Error::contract(format!(
                "layer {k} does not exist (network has {} layers)",
                self.layers.len()
            ))
        })
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn input_map(&self) -> Option<&InputMap> {
        self.input_map.as_ref()
    }

    /// Width of the vector accepted by [`forward`], if the network has layers.
    pub fn input_dim(&self) -> Option<usize> {
        self.layers.first().map(DenseLayer::inputs)
    }

    /// Width of the uncompacted input this network was derived from.
    pub fn source_input_dim(&self) -> Option<usize> {
        match &self.input_map {
            Some(map) => Some(map.source_dim),
            None => self.input_dim(),
        }
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.last().map(DenseLayer::units)
    }

    /// Maps a source-width input onto the coordinates this network consumes.
    pub fn project_input(&self, x: &Vector) -> Result<Vector> {
        match &self.input_map {
            Some(map) => {
                if x.len() != map.source_dim {
                    return Err(Error::contract(format!(
                        "input has length {} but the network was derived from width {}",
                        x.len(),
                        map.source_dim
                    )));
                }
                x.select(&map.keep)
            }
            None => Ok(x.clone()),
        }
    }

    pub(crate) fn into_parts(self) -> (Vec<DenseLayer>, Option<Vec<String>>, Option<InputMap>) {
        (self.layers, self.labels, self.input_map)
    }
}

/// Post-activation vectors recorded for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationProfile {
    pub input_dim: usize,
    pub per_layer: Vec<Vector>,
}

impl ActivationProfile {
    /// Activations feeding layer `k`: the input for `k = 0`.
    pub fn layer_input<'a>(&'a self, input: &'a Vector, k: usize) -> &'a Vector {
        if k == 0 {
            input
        } else {
            &self.per_layer[k - 1]
        }
    }
}

pub fn forward(net: &Network, x: &Vector) -> Result<ActivationProfile> {
    let mut per_layer: Vec<Vector> = Vec::with_capacity(net.layers.len());
    for (k, layer) in net.layers.iter().enumerate() {
        let input = per_layer.last().unwrap_or(x);
        if input.len() != layer.inputs() {
            return Err(Error::contract(format!(
                "layer {k} expects input of length {} but got {}",
                layer.inputs(),
                input.len()
            )));
        }
        let h = layer.apply(input)?;
        per_layer.push(h);
    }
    Ok(ActivationProfile {
        input_dim: x.len(),
        per_layer,
    })
}

/// Network output for `x`; a network without layers returns `x`.
pub fn output(net: &Network, x: &Vector) -> Result<Vector> {
    let profile = forward(net, x)?;
    Ok(profile.per_layer.into_iter().last().unwrap_or_else(|| x.clone()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: u64,
    pub biases: u64,
}

impl LayerParams {
    pub fn total(&self) -> u64 {
        self.weights + self.biases
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub per_layer: Vec<LayerParams>,
    pub total: u64,
    pub macs: u64,
}

pub fn param_count(net: &Network) -> ParamCount {
    let per_layer: Vec<LayerParams> = net
        .layers
        .iter()
        .map(|l| LayerParams {
            weights: (l.units() as u64) * (l.inputs() as u64),
            biases: l.units() as u64,
        })
        .collect();
    ParamCount {
        total: per_layer.iter().map(LayerParams::total).sum(),
        macs: per_layer.iter().map(|p| p.weights).sum(),
        per_layer,
    }
}

// ---------------------------------------------------------------------------
// Model file format
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    version: u32,
    #[serde(default)]
    labels: Option<Vec<String>>,
    #[serde(default)]
    input_map: Option<InputMap>,
    layers: Vec<LayerDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    activation: ActivationKind,
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// Formats a finite float with the shortest representation that parses back
/// to the same bits.
pub(crate) fn fmt_f64(v: f64) -> String {
    serde_json::to_string(&v).expect("finite float")
}

fn write_numbers(out: &mut String, values: &[f64], per_line: usize, indent: &str) {
    if values.is_empty() {
        out.push_str("[]");
        return;
    }
    out.push('[');
    for (i, chunk) in values.chunks(per_line.max(1)).enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push('\n');
        out.push_str(indent);
        out.push_str("  ");
        let line: Vec<String> = chunk.iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&line.join(", "));
    }
    out.push('\n');
    out.push_str(indent);
    out.push(']');
}

/// Serializes to the text model format, one weight-matrix row per line.
pub fn save_network(net: &Network) -> Vec<u8> {
    let mut s = String::new();
    let _ = writeln!(s, "{{\n  \"version\": {FORMAT_VERSION},");
    if let Some(labels) = &net.labels {
        let labels = serde_json::to_string(labels).expect("strings serialize");
        let _ = writeln!(s, "  \"labels\": {labels},");
    }
    if let Some(map) = &net.input_map {
        let keep = serde_json::to_string(&map.keep).expect("indices serialize");
        let _ = writeln!(
            s,
            "  \"input_map\": {{ \"source_dim\": {}, \"keep\": {keep} }},",
            map.source_dim
        );
    }
    s.push_str("  \"layers\": [");
    for (k, layer) in net.layers.iter().enumerate() {
        if k > 0 {
            s.push(',');
        }
        let activation = match layer.activation {
            ActivationKind::Relu => "relu",
            ActivationKind::Identity => "identity",
        };
        let _ = write!(
            s,
            "\n    {{\n      \"activation\": \"{activation}\",\n      \"rows\": {},\n      \"cols\": {},\n      \"weights\": ",
            layer.units(),
            layer.inputs()
        );
        write_numbers(&mut s, layer.weights.as_slice(), layer.inputs(), "      ");
        s.push_str(",\n      \"bias\": ");
        write_numbers(&mut s, layer.bias.as_slice(), 8, "      ");
        s.push_str("\n    }");
    }
    if !net.layers.is_empty() {
        s.push_str("\n  ");
    }
    s.push_str("]\n}\n");
    s.into_bytes()
}

pub fn load_network(bytes: &[u8]) -> Result<Network> {
    let doc: ModelDoc = serde_json::from_slice(bytes)?;
    if doc.version != FORMAT_VERSION {
        return Err(Error::validation(format!(
            "unsupported model format version {}",
            doc.version
        )));
    }
    let layers = doc
        .layers
        .into_iter()
        .enumerate()
        .map(|(k, l)| {
            let weights = Matrix::new(l.rows, l.cols, l.weights)
                .map_err(|e| Error::validation(format!("layer {k}: {e}")))?;
            let bias = Vector::new(l.bias)?;
            DenseLayer::new(weights, bias, l.activation)
                .map_err(|e| Error::validation(format!("layer {k}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Network::with_input_map(layers, doc.labels, doc.input_map)
}

// ---------------------------------------------------------------------------
// Synthetic networks
// ---------------------------------------------------------------------------

/// Parameters for [`gen_network`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    /// Input width followed by each layer's output width.
    pub sizes: Vec<usize>,
    pub output_activation: ActivationKind,
    /// Fraction of each hidden layer's units given all-zero incoming weights
    /// and zero bias.
    pub sparsity: f64,
    /// Zero every bias, not only those of planted units.
    pub zero_bias: bool,
    pub seed: u64,
}

impl NetworkSpec {
    pub fn new(sizes: Vec<usize>, sparsity: f64, seed: u64) -> Self {
        NetworkSpec {
            sizes,
            output_activation: ActivationKind::Identity,
            sparsity,
            zero_bias: false,
            seed,
        }
    }
}

/// Random dense network with uniform weights in [-1, 1] and biases in
/// [-0.1, 0.1]. Every hidden layer gets exactly `round(sparsity · units)`
/// planted dead units whose activation is zero on any input.
pub fn gen_network(spec: &NetworkSpec) -> Result<Network> {
    if spec.sizes.is_empty() {
        return Err(Error::contract("layer sizes must be nonempty"));
    }
    if !(0.0..=1.0).contains(&spec.sparsity) {
        return Err(Error::contract(format!(
            "sparsity {} outside [0, 1]",
            spec.sparsity
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_layers = spec.sizes.len() - 1;
    let mut layers = Vec::with_capacity(n_layers);
    for (k, pair) in spec.sizes.windows(2).enumerate() {
        let (inputs, units) = (pair[0], pair[1]);
        let mut weights: Vec<f64> = (0..units * inputs)
            .map(|_| rng.random_range(-1.0..=1.0))
            .collect();
        let mut bias: Vec<f64> = (0..units)
            .map(|_| {
                let b = rng.random_range(-0.1..=0.1);
                if spec.zero_bias {
                    0.0
                } else {
                    b
                }
            })
            .collect();
        let hidden = k + 1 < n_layers;
        if hidden {
            let planted = (spec.sparsity * units as f64).round() as usize;
            for i in sample(&mut rng, units, planted.min(units)) {
                weights[i * inputs..(i + 1) * inputs].fill(0.0);
                bias[i] = 0.0;
            }
        }
        let activation = if hidden {
            ActivationKind::Relu
        } else {
            spec.output_activation
        };
        layers.push(DenseLayer::new(
            Matrix::new(units, inputs, weights)?,
            Vector::new(bias)?,
            activation,
        )?);
    }
    Network::new(layers, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layer(rows: &[&[f64]], bias: &[f64], act: ActivationKind) -> DenseLayer {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        let w = if rows.is_empty() {
            Matrix::zeros(0, 0)
        } else {
            Matrix::from_rows(&rows).unwrap()
        };
        DenseLayer::new(w, Vector::new(bias.to_vec()).unwrap(), act).unwrap()
    }

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn forward_examples() {
        use ActivationKind::*;
        let net = Network::new(vec![layer(&[&[1., 2.], &[3., 4.]], &[0., 0.], Relu)], None).unwrap();
        assert_eq!(forward(&net, &v(&[1., 1.])).unwrap().per_layer, vec![v(&[3., 7.])]);

        // 1 - 2 - 5 = -6, clamped.
        let net = Network::new(vec![layer(&[&[1., -1.]], &[-5.], Relu)], None).unwrap();
        assert_eq!(forward(&net, &v(&[1., 2.])).unwrap().per_layer, vec![v(&[0.])]);

        // relu([2, 3]) = [2, 3]; 2 + 3 = 5.
        let net = Network::new(
            vec![
                layer(&[&[1., 0.], &[0., 1.]], &[0., 0.], Relu),
                layer(&[&[1., 1.]], &[0.], Identity),
            ],
            None,
        )
        .unwrap();
        let p = forward(&net, &v(&[2., 3.])).unwrap();
        assert_eq!(p.per_layer, vec![v(&[2., 3.]), v(&[5.])]);
        assert_eq!(output(&net, &v(&[2., 3.])).unwrap(), v(&[5.]));
    }

    #[test]
    fn forward_mismatch_names_layer() {
        let net = Network::new(
            vec![layer(&[&[1., 2.]], &[0.], ActivationKind::Identity)],
            None,
        )
        .unwrap();
        let err = forward(&net, &v(&[1.])).unwrap_err().to_string();
        assert!(err.contains("layer 0"), "{err}");
    }

    #[test]
    fn output_examples() {
        let net = Network::new(vec![layer(&[&[2.]], &[1.], ActivationKind::Identity)], None).unwrap();
        assert_eq!(output(&net, &v(&[3.])).unwrap(), v(&[7.]));

        let empty_out = DenseLayer::new(Matrix::zeros(0, 2), Vector::zeros(0), ActivationKind::Relu).unwrap();
        let net = Network::new(vec![empty_out], None).unwrap();
        assert!(output(&net, &v(&[1., 2.])).unwrap().is_empty());
    }

    #[test]
    fn param_count_examples() {
        let net = gen_network(&NetworkSpec::new(vec![3, 4, 2], 0.0, 1)).unwrap();
        let pc = param_count(&net);
        assert_eq!(pc.total, (4 * 3 + 4) + (2 * 4 + 2));
        assert_eq!(pc.total, 26);
        assert_eq!(pc.macs, 20);

        let empty = Network::new(vec![], None).unwrap();
        assert_eq!(param_count(&empty).total, 0);
    }

    #[test]
    fn param_count_fc6_geometry() {
        assert_eq!(512 * 7 * 7, 25088);
        // Zero-sized weights are enough to exercise the arithmetic without
        // allocating the full 100M-entry matrix: count via a 1-row layer and scale.
        let fc6 = DenseLayer::new(Matrix::zeros(1, 25088), Vector::zeros(1), ActivationKind::Relu).unwrap();
        let one = param_count(&Network::new(vec![fc6], None).unwrap()).total;
        assert_eq!(one * 4096, 4096 * 25088 + 4096);
        assert_eq!(one * 4096, 102_764_544);
    }

    #[test]
    fn identity_only_on_final_layer() {
        let err = Network::new(
            vec![
                layer(&[&[1.]], &[0.], ActivationKind::Identity),
                layer(&[&[1.]], &[0.], ActivationKind::Relu),
            ],
            None,
        );
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn labels_must_match_outputs() {
        let l = layer(&[&[1.], &[2.]], &[0., 0.], ActivationKind::Identity);
        assert!(Network::new(vec![l.clone()], Some(vec!["a".into()])).is_err());
        assert!(Network::new(vec![l], Some(vec!["a".into(), "b".into()])).is_ok());
    }

    #[test]
    fn save_load_round_trip() {
        let mut net = gen_network(&NetworkSpec::new(vec![3, 4, 2], 0.25, 3)).unwrap();
        net.labels = Some(vec!["cat".into(), "dog \"quoted\"".into()]);
        let bytes = save_network(&net);
        let back = load_network(&bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(save_network(&back), bytes);
    }

    #[test]
    fn chain_violation_is_validation_error() {
        let doc = r#"{"version": 1, "layers": [
            {"activation": "relu", "rows": 2, "cols": 1, "weights": [1, 2], "bias": [0, 0]},
            {"activation": "identity", "rows": 1, "cols": 3, "weights": [1, 2, 3], "bias": [0]}
        ]}"#;
        match load_network(doc.as_bytes()) {
            Err(Error::Validation(msg)) => assert!(msg.contains("layer 1") && msg.contains("layer 0"), "{msg}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_input_is_parse_error() {
        let net = gen_network(&NetworkSpec::new(vec![3, 4, 2], 0.0, 1)).unwrap();
        let bytes = save_network(&net);
        let cut = &bytes[..bytes.len() / 2];
        assert!(matches!(load_network(cut), Err(Error::Parse { .. })));
    }

    #[test]
    fn generator_is_deterministic() {
        let spec = NetworkSpec::new(vec![10, 8, 6, 3], 0.5, 42);
        assert_eq!(save_network(&gen_network(&spec).unwrap()), save_network(&gen_network(&spec).unwrap()));
        let other = NetworkSpec { seed: 43, ..spec.clone() };
        assert_ne!(gen_network(&spec).unwrap(), gen_network(&other).unwrap());
    }

    #[test]
    fn full_sparsity_kills_hidden_units() {
        let spec = NetworkSpec {
            zero_bias: true,
            ..NetworkSpec::new(vec![5, 7, 4, 2], 1.0, 9)
        };
        let net = gen_network(&spec).unwrap();
        let p = forward(&net, &v(&[1., -2., 3., 0.5, 9.])).unwrap();
        for h in &p.per_layer[..2] {
            assert!(h.as_slice().iter().all(|&a| a == 0.0));
        }
    }

    #[test]
    fn planted_zero_row_count() {
        let net = gen_network(&NetworkSpec::new(vec![100, 50, 10], 0.3, 7)).unwrap();
        let w = &net.layers()[0].weights;
        let zero_rows = (0..w.rows()).filter(|&i| w.row(i).iter().all(|&x| x == 0.0)).count();
        assert_eq!(zero_rows, 15);
    }

    #[test]
    fn invalid_sparsity_rejected() {
        assert!(gen_network(&NetworkSpec::new(vec![3, 2], 1.5, 0)).is_err());
        assert!(gen_network(&NetworkSpec::new(vec![3, 2], -0.1, 0)).is_err());
        assert!(gen_network(&NetworkSpec::new(vec![], 0.1, 0)).is_err());
    }

    proptest! {
        #[test]
        fn relu_layers_never_negative(seed in any::<u64>(), x in prop::collection::vec(-5.0f64..5.0, 6)) {
            let spec = NetworkSpec { output_activation: ActivationKind::Relu, ..NetworkSpec::new(vec![6, 5, 4], 0.2, seed) };
            let net = gen_network(&spec).unwrap();
            for h in forward(&net, &Vector::new(x).unwrap()).unwrap().per_layer {
                prop_assert!(h.as_slice().iter().all(|&a| a >= 0.0));
            }
        }

        #[test]
        fn param_count_closed_form(sizes in prop::collection::vec(0usize..12, 1..5), seed in any::<u64>()) {
            let net = gen_network(&NetworkSpec::new(sizes.clone(), 0.3, seed)).unwrap();
            let expected: u64 = sizes.windows(2).map(|p| (p[0] * p[1] + p[1]) as u64).sum();
            prop_assert_eq!(param_count(&net).total, expected);
        }

        #[test]
        fn round_trip_is_bit_exact(values in prop::collection::vec(
            prop_oneof![Just(-0.0), Just(0.0), Just(f64::MIN_POSITIVE), Just(f64::MAX), any::<f64>().prop_filter("finite", |v| v.is_finite())],
            6,
        )) {
            let l = DenseLayer::new(
                Matrix::new(2, 2, values[..4].to_vec()).unwrap(),
                Vector::new(values[4..].to_vec()).unwrap(),
                ActivationKind::Identity,
            ).unwrap();
            let net = Network::new(vec![l], None).unwrap();
            let back = load_network(&save_network(&net)).unwrap();
            let (a, b) = (&net.layers()[0], &back.layers()[0]);
            for (x, y) in a.weights.as_slice().iter().chain(a.bias.as_slice()).zip(b.weights.as_slice().iter().chain(b.bias.as_slice())) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
