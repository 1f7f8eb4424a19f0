//! Two-branch convolutional velocity field.
//!
//! The image branch takes the hazy image plus the transmission map as a
//! fourth channel through three 3x3 convolutions with SiLU activations. The
//! transmission branch projects the map with two 1x1 convolutions and one
//! transmission block (SiLU -> 3x3 conv -> SiLU -> 1x1 conv); its embedding
//! is concatenated onto the image features. Two 1x1 heads predict the
//! velocity and a refined transmission map squashed into [0.05, 1].

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use hazeflow_core::error::{Error as CoreError, Result as CoreResult};
use hazeflow_core::image::{ImageRGB, ScalarField};
use hazeflow_core::rng::Rng;
use hazeflow_core::solver::VelocityField;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{NodeId, Shape, Tape};

/// Refined transmission range: 0.05 + 0.95 * sigmoid(logits).
pub const T_REFINED_MIN: f64 = 0.05;
pub const T_REFINED_SPAN: f64 = 0.95;

const CHECKPOINT_MAGIC: &[u8; 4] = b"HZW1";

/// Channel widths; the defaults give roughly 6k parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub image_channels: usize,
    pub t_channels: usize,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            image_channels: 16,
            t_channels: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
}

#[derive(Debug, Clone)]
struct Layer {
    spec: LayerSpec,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Layer {
    fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

/// The learnable velocity field.
#[derive(Debug, Clone)]
pub struct ToyFlowNet {
    config: NetConfig,
    layers: Vec<Layer>,
}

/// Node ids of one forward pass; parameter leaves line up with the flat
/// parameter vector.
pub struct ForwardNodes {
    pub velocity: NodeId,
    pub t_refined: NodeId,
    pub param_leaves: Vec<(NodeId, NodeId)>,
}

fn layer_specs(cfg: &NetConfig) -> Vec<LayerSpec> {
    let c = cfg.image_channels;
    let tc = cfg.t_channels;
    let spec = |name: &str, in_c, out_c, kernel| LayerSpec {
        name: name.into(),
        in_c,
        out_c,
        kernel,
    };
    vec![
        spec("img_conv1", 4, c, 3),
        spec("img_conv2", c, c, 3),
        spec("img_conv3", c, c, 3),
        spec("t_proj1", 1, tc, 1),
        spec("t_proj2", tc, tc, 1),
        spec("t_block_conv3", tc, tc, 3),
        spec("t_block_conv1", tc, tc, 1),
        spec("head_v", c + tc, 3, 1),
        spec("head_t", c + tc, 1, 1),
    ]
}

impl ToyFlowNet {
    /// Fresh net: trunk layers get uniform fan-in init, heads start at zero
    /// (so the initial velocity is zero and T_refined is 0.525 everywhere).
    pub fn new(config: NetConfig) -> Self {
        let mut rng = Rng::new(config.seed);
        let layers = layer_specs(&config)
            .into_iter()
            .map(|spec| {
                let fan_in = spec.in_c * spec.kernel * spec.kernel;
                let bound = 1.0 / (fan_in as f64).sqrt();
                let zero_init = spec.name.starts_with("head_");
                let wlen = spec.out_c * fan_in;
                let weights = if zero_init {
                    vec![0.0; wlen]
                } else {
                    (0..wlen).map(|_| rng.uniform(-bound, bound)).collect()
                };
                let biases = if zero_init {
                    vec![0.0; spec.out_c]
                } else {
                    (0..spec.out_c)
                        .map(|_| rng.uniform(-bound, bound))
                        .collect()
                };
                Layer {
                    spec,
                    weights,
                    biases,
                }
            })
            .collect();
        ToyFlowNet { config, layers }
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Flatten parameters (layer order, weights then biases).
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.biases);
        }
        out
    }

    /// Load parameters from a flat vector (inverse of [`params_flat`]).
    pub fn set_params_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "parameter count");
        let mut offset = 0;
        for layer in &mut self.layers {
            let wlen = layer.weights.len();
            let blen = layer.biases.len();
            layer.weights.copy_from_slice(&flat[offset..offset + wlen]);
            offset += wlen;
            layer.biases.copy_from_slice(&flat[offset..offset + blen]);
            offset += blen;
        }
    }

    /// Build the forward graph on a tape. `image` must be a 3-channel node,
    /// `t_in` single-channel with the same plane. When `train` is set the
    /// parameter leaves require gradients.
    pub fn forward_on(
        &self,
        tape: &mut Tape,
        image: NodeId,
        t_in: NodeId,
        train: bool,
    ) -> ForwardNodes {
        assert_eq!(tape.shape(image).c, 3, "image node must have 3 channels");
        assert_eq!(
            tape.shape(t_in).c,
            1,
            "transmission node must have 1 channel"
        );

        let mut param_leaves = Vec::with_capacity(self.layers.len());
        let mut nodes = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let w = tape.leaf(
                Shape::new(
                    layer.spec.out_c * layer.spec.in_c,
                    layer.spec.kernel,
                    layer.spec.kernel,
                ),
                layer.weights.clone(),
                train,
            );
            let b = tape.leaf(
                Shape::new(layer.spec.out_c, 1, 1),
                layer.biases.clone(),
                train,
            );
            param_leaves.push((w, b));
            nodes.push((w, b));
        }
        let conv = |tape: &mut Tape, idx: usize, input: NodeId| {
            let layer = &self.layers[idx];
            let (w, b) = nodes[idx];
            tape.conv2d(
                input,
                w,
                b,
                layer.spec.in_c,
                layer.spec.out_c,
                layer.spec.kernel,
            )
        };

        // Image branch on [hazy | t_in].
        let stacked = tape.concat_c(image, t_in);
        let x1 = conv(tape, 0, stacked);
        let x1 = tape.silu(x1);
        let x2 = conv(tape, 1, x1);
        let x2 = tape.silu(x2);
        let x3 = conv(tape, 2, x2);
        let image_feat = tape.silu(x3);

        // Transmission branch: projection then one transmission block.
        let p1 = conv(tape, 3, t_in);
        let p1 = tape.silu(p1);
        let projected = conv(tape, 4, p1);
        let b1 = tape.silu(projected);
        let b2 = conv(tape, 5, b1);
        let b3 = tape.silu(b2);
        let t_feat = conv(tape, 6, b3);

        let fused = tape.concat_c(image_feat, t_feat);
        let velocity = conv(tape, 7, fused);
        let t_logits = conv(tape, 8, fused);
        let t_sig = tape.sigmoid(t_logits);
        let t_scaled = tape.mul_scalar(t_sig, T_REFINED_SPAN);
        let t_refined = tape.add_scalar(t_scaled, T_REFINED_MIN);

        ForwardNodes {
            velocity,
            t_refined,
            param_leaves,
        }
    }

    /// Read accumulated parameter gradients after a backward pass, in flat
    /// order.
    pub fn grads_flat(&self, tape: &Tape, nodes: &ForwardNodes) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (layer, &(w, b)) in self.layers.iter().zip(&nodes.param_leaves) {
            match tape.grad(w) {
                Some(g) => out.extend_from_slice(g),
                None => out.extend(std::iter::repeat(0.0).take(layer.weights.len())),
            }
            match tape.grad(b) {
                Some(g) => out.extend_from_slice(g),
                None => out.extend(std::iter::repeat(0.0).take(layer.biases.len())),
            }
        }
        out
    }

    // ---------------------------------------------------------------------
    // Checkpoints: "HZW1" | u32 LE header length | JSON header | f32 LE
    // parameters in header order.
    // ---------------------------------------------------------------------

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header = CheckpointHeader {
            config: self.config,
            layers: self.layers.iter().map(|l| l.spec.clone()).collect(),
        };
        let header_json = serde_json::to_string(&header).map_err(Error::Json)?;

        let file = std::fs::File::create(path).map_err(|e| Error::Core(CoreError::io(path, e)))?;
        let mut w = BufWriter::new(file);
        let io_err = |e: std::io::Error| Error::Core(CoreError::io(path, e));
        w.write_all(CHECKPOINT_MAGIC).map_err(io_err)?;
        w.write_all(&(header_json.len() as u32).to_le_bytes())
            .map_err(io_err)?;
        w.write_all(header_json.as_bytes()).map_err(io_err)?;
        for layer in &self.layers {
            for &v in layer.weights.iter().chain(&layer.biases) {
                w.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
            }
        }
        w.flush().map_err(io_err)
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ToyFlowNet> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::Core(CoreError::io(path, e)))?;
        let mut r = BufReader::new(file);
        let io_err = |e: std::io::Error| Error::Core(CoreError::io(path, e));
        let bad = |detail: &str| Error::Checkpoint {
            path: path.to_path_buf(),
            detail: detail.to_string(),
        };

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io_err)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut lenbuf = [0u8; 4];
        r.read_exact(&mut lenbuf).map_err(io_err)?;
        let header_len = u32::from_le_bytes(lenbuf) as usize;
        let mut header_bytes = vec![0u8; header_len];
        r.read_exact(&mut header_bytes).map_err(io_err)?;
        let header: CheckpointHeader =
            serde_json::from_slice(&header_bytes).map_err(Error::Json)?;

        let expected_specs = layer_specs(&header.config);
        if header.layers.len() != expected_specs.len() {
            return Err(bad("layer count does not match architecture"));
        }
        for (found, expected) in header.layers.iter().zip(&expected_specs) {
            if found.name != expected.name
                || found.in_c != expected.in_c
                || found.out_c != expected.out_c
                || found.kernel != expected.kernel
            {
                return Err(bad(&format!(
                    "layer {} does not match architecture",
                    found.name
                )));
            }
        }

        let mut layers = Vec::with_capacity(header.layers.len());
        for spec in header.layers {
            let wlen = spec.out_c * spec.in_c * spec.kernel * spec.kernel;
            let mut weights = Vec::with_capacity(wlen);
            let mut biases = Vec::with_capacity(spec.out_c);
            let mut buf = [0u8; 4];
            for _ in 0..wlen {
                r.read_exact(&mut buf).map_err(io_err)?;
                weights.push(f32::from_le_bytes(buf) as f64);
            }
            for _ in 0..spec.out_c {
                r.read_exact(&mut buf).map_err(io_err)?;
                biases.push(f32::from_le_bytes(buf) as f64);
            }
            layers.push(Layer {
                spec,
                weights,
                biases,
            });
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra).map_err(io_err)? != 0 {
            return Err(bad("trailing bytes"));
        }
        Ok(ToyFlowNet {
            config: header.config,
            layers,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: NetConfig,
    layers: Vec<LayerSpec>,
}

/// Convert an interleaved image into a CHW leaf.
pub fn image_to_node(tape: &mut Tape, image: &ImageRGB, needs_grad: bool) -> NodeId {
    let plane = image.height() * image.width();
    let mut values = vec![0.0f64; plane * 3];
    for (idx, px) in image.data().chunks_exact(3).enumerate() {
        values[idx] = px[0] as f64;
        values[plane + idx] = px[1] as f64;
        values[2 * plane + idx] = px[2] as f64;
    }
    tape.leaf(
        Shape::new(3, image.height(), image.width()),
        values,
        needs_grad,
    )
}

/// Convert a scalar field into a single-channel leaf.
pub fn field_to_node(tape: &mut Tape, field: &ScalarField, needs_grad: bool) -> NodeId {
    let values = field.data().iter().map(|&v| v as f64).collect();
    tape.leaf(
        Shape::new(1, field.height(), field.width()),
        values,
        needs_grad,
    )
}

/// Extract a 3-channel node back into an interleaved image.
pub fn node_to_image(tape: &Tape, id: NodeId) -> ImageRGB {
    let shape = tape.shape(id);
    assert_eq!(shape.c, 3);
    let plane = shape.plane();
    let values = tape.values(id);
    let mut data = Vec::with_capacity(plane * 3);
    for idx in 0..plane {
        data.push(values[idx] as f32);
        data.push(values[plane + idx] as f32);
        data.push(values[2 * plane + idx] as f32);
    }
    ImageRGB::new(shape.h, shape.w, data).expect("node image shape")
}

/// Extract a single-channel node into a scalar field.
pub fn node_to_field(tape: &Tape, id: NodeId) -> ScalarField {
    let shape = tape.shape(id);
    assert_eq!(shape.c, 1);
    let data = tape.values(id).iter().map(|&v| v as f32).collect();
    ScalarField::new(shape.h, shape.w, data).expect("node field shape")
}

impl VelocityField for ToyFlowNet {
    fn evaluate(
        &self,
        image: &ImageRGB,
        t_in: &ScalarField,
    ) -> CoreResult<(ImageRGB, ScalarField)> {
        if !t_in.matches_image(image) {
            return Err(CoreError::DimensionMismatch {
                expected: format!("{}x{}", image.height(), image.width()),
                got: format!("{}x{}", t_in.height(), t_in.width()),
            });
        }
        let mut tape = Tape::new();
        let img = image_to_node(&mut tape, image, false);
        let t = field_to_node(&mut tape, t_in, false);
        let out = self.forward_on(&mut tape, img, t, false);
        Ok((
            node_to_image(&tape, out.velocity),
            node_to_field(&tape, out.t_refined),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_net_is_under_the_parameter_budget() {
        let net = ToyFlowNet::new(NetConfig::default());
        assert!(net.param_count() < 50_000, "{} params", net.param_count());
        // And not trivially small either.
        assert!(net.param_count() > 1_000);
    }

    #[test]
    fn zero_heads_give_zero_velocity_and_midpoint_t() {
        let net = ToyFlowNet::new(NetConfig::default());
        let image = ImageRGB::constant(8, 8, 0.4);
        let t_in = ScalarField::constant(8, 8, 0.6);
        let (v, t_ref) = net.evaluate(&image, &t_in).unwrap();
        assert!(v.data().iter().all(|&x| x == 0.0));
        let expected = (T_REFINED_MIN + T_REFINED_SPAN * 0.5) as f32;
        for &x in t_ref.data() {
            assert!((x - expected).abs() < 1e-6, "{x} vs {expected}");
        }
    }

    #[test]
    fn forward_is_deterministic_and_shaped() {
        let mut net = ToyFlowNet::new(NetConfig {
            seed: 3,
            ..Default::default()
        });
        // Give the heads some weights so outputs are non-trivial.
        let mut flat = net.params_flat();
        let mut rng = Rng::new(9);
        for v in flat.iter_mut() {
            if *v == 0.0 {
                *v = rng.uniform(-0.2, 0.2);
            }
        }
        net.set_params_flat(&flat);

        let mut rng = Rng::new(10);
        let data: Vec<f32> = (0..12 * 10 * 3).map(|_| rng.next_f32()).collect();
        let image = ImageRGB::new(12, 10, data).unwrap();
        let t_in = ScalarField::constant(12, 10, 0.5);
        let (v1, t1) = net.evaluate(&image, &t_in).unwrap();
        let (v2, t2) = net.evaluate(&image, &t_in).unwrap();
        assert_eq!(v1.data(), v2.data());
        assert_eq!(t1.data(), t2.data());
        assert_eq!((v1.height(), v1.width()), (12, 10));
        assert_eq!((t1.height(), t1.width()), (12, 10));
        for &x in t1.data() {
            assert!((0.05..=1.0).contains(&x));
        }
    }

    #[test]
    fn params_round_trip_through_flat_vector() {
        let net = ToyFlowNet::new(NetConfig {
            seed: 5,
            ..Default::default()
        });
        let flat = net.params_flat();
        let mut other = ToyFlowNet::new(NetConfig {
            seed: 6,
            ..Default::default()
        });
        other.set_params_flat(&flat);
        assert_eq!(other.params_flat(), flat);
    }

    #[test]
    fn checkpoint_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.hzw");
        let mut net = ToyFlowNet::new(NetConfig {
            seed: 11,
            ..Default::default()
        });
        // f32 payload: make parameters exactly representable first.
        let flat: Vec<f64> = net
            .params_flat()
            .iter()
            .map(|&v| (v as f32) as f64)
            .collect();
        net.set_params_flat(&flat);
        net.save_checkpoint(&path).unwrap();

        let loaded = ToyFlowNet::load_checkpoint(&path).unwrap();
        assert_eq!(loaded.params_flat(), net.params_flat());
        assert_eq!(loaded.config(), net.config());

        // Same bytes when saved again.
        let first = std::fs::read(&path).unwrap();
        loaded.save_checkpoint(&path).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
    }

    #[test]
    fn checkpoint_magic_is_validated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.hzw");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(ToyFlowNet::load_checkpoint(&path).is_err());
    }

    #[test]
    fn evaluate_rejects_mismatched_dims() {
        let net = ToyFlowNet::new(NetConfig::default());
        let image = ImageRGB::constant(8, 8, 0.4);
        let t_in = ScalarField::constant(4, 4, 0.5);
        assert!(net.evaluate(&image, &t_in).is_err());
    }
}
