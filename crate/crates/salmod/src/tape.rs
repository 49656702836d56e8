//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! Nodes live in an arena (`Vec`) and reference their parents by index; since
//! every operation can only consume already-created nodes, creation order is
//! a topological order and cycles are impossible by construction. `backward`
//! walks the tape once in reverse, accumulating gradients by summation when a
//! node fans out into several consumers.

use crate::error::{Error, Result};
use crate::layers;
use crate::layers::ConvGeom;
use crate::tensor::Tensor;

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// out = a + b (same shape)
    Add(NodeId, NodeId),
    /// out = a * b elementwise (same shape)
    Mul(NodeId, NodeId),
    /// out = a * c
    Scale(NodeId, f64),
    /// out = sum of all elements, shape [1]
    Sum(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        geom: ConvGeom,
    },
    MaxPool2d {
        input: NodeId,
        argmax: Vec<usize>,
    },
    FullyConnected {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        label: usize,
        probs: Vec<f64>,
    },
    Modulate {
        features: NodeId,
        modulation: NodeId,
        skip: bool,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Wengert tape: values plus enough operation state to replay backwards.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by `Tape::backward`. Nodes with no path to the
/// loss have no entry; that reads as a zero gradient, not an error.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `id`, or zeros of the given shape when no path exists.
    pub fn get_or_zeros(&self, id: NodeId, shape: &[usize]) -> Tensor {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value held by a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::graph(format!(
                "node id {} does not belong to this tape (len {})",
                id.0,
                self.nodes.len()
            )));
        }
        Ok(())
    }

    /// Register an input or parameter tensor.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(format!(
                "add shape mismatch: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::from_vec(ta.shape(), data)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(format!(
                "mul shape mismatch: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::from_vec(ta.shape(), data)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.check(a)?;
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x * c).collect();
        let value = Tensor::from_vec(ta.shape(), data)?;
        Ok(self.push(value, Op::Scale(a, c)))
    }

    /// Scalar sum of every element, shape [1].
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let total: f64 = self.value(a).data().iter().sum();
        Ok(self.push(Tensor::scalar(total), Op::Sum(a)))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let value = layers::relu_forward(self.value(a));
        Ok(self.push(value, Op::Relu(a)))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let value = layers::sigmoid_forward(self.value(a));
        Ok(self.push(value, Op::Sigmoid(a)))
    }

    pub fn conv2d(&mut self, input: NodeId, weight: NodeId, bias: NodeId, geom: ConvGeom) -> Result<NodeId> {
        self.check(input)?;
        self.check(weight)?;
        self.check(bias)?;
        let value = layers::conv2d_forward(self.value(input), self.value(weight), self.value(bias), &geom)?;
        Ok(self.push(value, Op::Conv2d { input, weight, bias, geom }))
    }

    pub fn maxpool2d(&mut self, input: NodeId, window: (usize, usize), stride: usize) -> Result<NodeId> {
        self.check(input)?;
        let (value, argmax) = layers::maxpool2d_forward(self.value(input), window, stride)?;
        Ok(self.push(value, Op::MaxPool2d { input, argmax }))
    }

    pub fn fully_connected(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        self.check(input)?;
        self.check(weight)?;
        self.check(bias)?;
        let value = layers::fully_connected_forward(self.value(input), self.value(weight), self.value(bias))?;
        Ok(self.push(value, Op::FullyConnected { input, weight, bias }))
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        self.check(logits)?;
        let (loss, probs) = layers::softmax_cross_entropy_forward(self.value(logits), label)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy { logits, label, probs },
        ))
    }

    pub fn modulate(&mut self, features: NodeId, modulation: NodeId, skip: bool) -> Result<NodeId> {
        self.check(features)?;
        self.check(modulation)?;
        let value = layers::modulate_forward(self.value(features), self.value(modulation), skip)?;
        Ok(self.push(value, Op::Modulate { features, modulation, skip }))
    }

    /// Reverse pass from a scalar loss node. Visits each node exactly once in
    /// reverse creation order (a topological order of the DAG) and sums
    /// gradient contributions at fan-out points.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        self.check(loss)?;
        if self.value(loss).numel() != 1 {
            return Err(Error::graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accum(&mut grads, *a, g.clone())?;
                    accum(&mut grads, *b, g.clone())?;
                }
                Op::Mul(a, b) => {
                    // d a = g * b, d b = g * a
                    let ta = self.value(*a);
                    let tb = self.value(*b);
                    let da = elementwise_mul(&g, tb)?;
                    let db = elementwise_mul(&g, ta)?;
                    accum(&mut grads, *a, da)?;
                    accum(&mut grads, *b, db)?;
                }
                Op::Scale(a, c) => {
                    let data = g.data().iter().map(|v| v * c).collect();
                    accum(&mut grads, *a, Tensor::from_vec(g.shape(), data)?)?;
                }
                Op::Sum(a) => {
                    let da = Tensor::filled(self.value(*a).shape(), g.data()[0]);
                    accum(&mut grads, *a, da)?;
                }
                Op::Relu(a) => {
                    let da = layers::relu_backward(self.value(*a), &g);
                    accum(&mut grads, *a, da)?;
                }
                Op::Sigmoid(a) => {
                    // uses the stored output y: dy/dx = y (1 - y)
                    let da = layers::sigmoid_backward(&node.value, &g);
                    accum(&mut grads, *a, da)?;
                }
                Op::Conv2d { input, weight, bias, geom } => {
                    let (dx, dw, db) =
                        layers::conv2d_backward(self.value(*input), self.value(*weight), geom, &g)?;
                    accum(&mut grads, *input, dx)?;
                    accum(&mut grads, *weight, dw)?;
                    accum(&mut grads, *bias, db)?;
                }
                Op::MaxPool2d { input, argmax } => {
                    let dx = layers::maxpool2d_backward(self.value(*input).shape(), argmax, &g)?;
                    accum(&mut grads, *input, dx)?;
                }
                Op::FullyConnected { input, weight, bias } => {
                    let (dx, dw, db) =
                        layers::fully_connected_backward(self.value(*input), self.value(*weight), &g)?;
                    accum(&mut grads, *input, dx)?;
                    accum(&mut grads, *weight, dw)?;
                    accum(&mut grads, *bias, db)?;
                }
                Op::SoftmaxCrossEntropy { logits, label, probs } => {
                    let dz = layers::softmax_cross_entropy_backward(probs, *label, g.data()[0]);
                    accum(&mut grads, *logits, dz)?;
                }
                Op::Modulate { features, modulation, skip } => {
                    let (df, dm) = layers::modulate_backward(
                        self.value(*features),
                        self.value(*modulation),
                        *skip,
                        &g,
                    )?;
                    accum(&mut grads, *features, df)?;
                    accum(&mut grads, *modulation, dm)?;
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accum(grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) -> Result<()> {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&delta),
        slot @ None => {
            *slot = Some(delta);
            Ok(())
        }
    }
}

fn elementwise_mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::from_vec(a.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sum_gradient_is_all_ones() {
        // x = [1,2,3], loss = sum(x): d loss/dx = [1,1,1]
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let loss = tape.sum(x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_sum_gradient_is_two_x() {
        // loss = sum(x * x): d/dx = 2x
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![2.0, -1.0]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[4.0, -2.0]);
    }

    #[test]
    fn fan_out_gradients_accumulate_by_summation() {
        // loss = sum(x) + sum(x * x): d/dx = 1 + 2x
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![3.0, -2.0]).unwrap());
        let s1 = tape.sum(x).unwrap();
        let sq = tape.mul(x, x).unwrap();
        let s2 = tape.sum(sq).unwrap();
        let loss = tape.add(s1, s2).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[7.0, -3.0]);
    }

    #[test]
    fn unused_leaf_has_no_gradient_not_an_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.0));
        let y = tape.leaf(Tensor::scalar(2.0));
        let loss = tape.sum(x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(y).is_none());
        assert_eq!(grads.get_or_zeros(y, &[1]).data(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_is_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[3]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn gradient_is_linear_in_graph_combination() {
        // d(a*f + b*g)/dx == a*df/dx + b*dg/dx to high precision
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let xv: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (a, b) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));

            let build = |t: &mut Tape| -> (NodeId, NodeId, NodeId) {
                let x = t.leaf(Tensor::from_vec(&[6], xv.clone()).unwrap());
                let sq = t.mul(x, x).unwrap();
                let f = t.sum(sq).unwrap(); // f = sum x^2
                let sg = t.sigmoid(x).unwrap();
                let g = t.sum(sg).unwrap(); // g = sum sigmoid(x)
                (x, f, g)
            };

            let mut t1 = Tape::new();
            let (x1, f1, g1) = build(&mut t1);
            let fa = t1.scale(f1, a).unwrap();
            let gb = t1.scale(g1, b).unwrap();
            let combined = t1.add(fa, gb).unwrap();
            let gc = t1.backward(combined).unwrap();
            let combo = gc.get(x1).unwrap();

            let mut t2 = Tape::new();
            let (x2, f2, _) = build(&mut t2);
            let gf = t2.backward(f2).unwrap();
            let mut t3 = Tape::new();
            let (x3, _, g3) = build(&mut t3);
            let gg = t3.backward(g3).unwrap();

            for i in 0..6 {
                let expect = a * gf.get(x2).unwrap().data()[i] + b * gg.get(x3).unwrap().data()[i];
                assert!((combo.data()[i] - expect).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn backward_is_deterministic_bitwise() {
        let run = || {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::from_vec(&[1, 4, 4], (0..16).map(|v| (v as f64) * 0.3 - 2.0).collect()).unwrap());
            let w = tape.leaf(Tensor::from_vec(&[2, 1, 3, 3], (0..18).map(|v| (v as f64) * 0.1 - 0.9).collect()).unwrap());
            let b = tape.leaf(Tensor::from_vec(&[2], vec![0.1, -0.2]).unwrap());
            let c = tape.conv2d(x, w, b, ConvGeom::new(1, 2, 3, 1, 1)).unwrap();
            let r = tape.relu(c).unwrap();
            let p = tape.maxpool2d(r, (2, 2), 2).unwrap();
            let fw = tape.leaf(Tensor::from_vec(&[3, 8], (0..24).map(|v| (v as f64) * 0.05 - 0.6).collect()).unwrap());
            let fb = tape.leaf(Tensor::zeros(&[3]));
            let logits = tape.fully_connected(p, fw, fb).unwrap();
            let loss = tape.softmax_cross_entropy(logits, 1).unwrap();
            let grads = tape.backward(loss).unwrap();
            (
                grads.get(x).unwrap().data().to_vec(),
                grads.get(w).unwrap().data().to_vec(),
                tape.value(loss).data()[0],
            )
        };
        let (a1, b1, l1) = run();
        let (a2, b2, l2) = run();
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        assert_eq!(l1, l2);
    }

    #[test]
    fn foreign_node_id_is_error() {
        let mut t1 = Tape::new();
        let a = t1.leaf(Tensor::scalar(1.0));
        let mut t2 = Tape::new();
        assert!(t2.sum(a).is_err());
        let _ = a;
    }
}
