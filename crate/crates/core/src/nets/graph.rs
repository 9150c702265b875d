//! Two evaluators for the same layer vocabulary: [`Graph`] records a tape
//! for reverse-mode differentiation, [`Eager`] evaluates and frees
//! intermediates as soon as nothing refers to them.

use std::rc::Rc;

use ndarray::{s, Array3, ArrayD, IxDyn, Zip};

use super::kernels::{self, ConvGeom};
use super::params::{ParamGrads, ParamId, ParamSet};

/// Layer vocabulary the network definitions are written against.
pub(crate) trait Ops {
    type T: Clone;

    fn input(&mut self, x: Array3<f64>) -> Self::T;
    fn conv(&mut self, x: &Self::T, weight: ParamId, bias: ParamId, geom: ConvGeom) -> Self::T;
    fn group_norm(&mut self, x: &Self::T, gamma: ParamId, beta: ParamId, groups: usize) -> Self::T;
    fn relu(&mut self, x: &Self::T) -> Self::T;
    fn sigmoid(&mut self, x: &Self::T) -> Self::T;
    fn upsample2(&mut self, x: &Self::T) -> Self::T;
    fn concat(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn add(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Input,
    Conv {
        x: NodeId,
        weight: ParamId,
        bias: ParamId,
        geom: ConvGeom,
    },
    GroupNorm {
        x: NodeId,
        gamma: ParamId,
        beta: ParamId,
        xhat: Array3<f64>,
        inv_stds: Vec<f64>,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    Upsample2(NodeId),
    Concat(NodeId, NodeId),
    Add(NodeId, NodeId),
}

struct Node {
    value: Array3<f64>,
    op: Op,
}

/// Recorded forward pass over one sample.
pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Array3<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Array3<f64> {
        &self.nodes[id.0].value
    }

    /// Reverse pass from `output` seeded with `grad`; returns parameter gradients.
    pub fn backward(&self, output: NodeId, grad: Array3<f64>) -> ParamGrads {
        let mut pgrads = ParamGrads::zeros_like(self.params);
        self.backward_into(output, grad, &mut pgrads);
        pgrads
    }

    /// Like [`Graph::backward`] but accumulates into `pgrads`.
    pub fn backward_into(&self, output: NodeId, grad: Array3<f64>, pgrads: &mut ParamGrads) {
        assert_eq!(grad.dim(), self.value(output).dim(), "seed gradient shape");
        let mut grads: Vec<Option<Array3<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(grad);

        fn accumulate(slot: &mut Option<Array3<f64>>, g: Array3<f64>) {
            match slot {
                Some(acc) => *acc += &g,
                None => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Conv { x, weight, bias, geom } => {
                    let need_dx = !matches!(self.nodes[x.0].op, Op::Input);
                    let (dx, dw, db) = kernels::conv_backward(
                        &self.nodes[x.0].value,
                        self.params.get(*weight).view(),
                        &g,
                        *geom,
                        need_dx,
                    );
                    let wshape = self.params.get(*weight).raw_dim();
                    *pgrads.get_mut(*weight) += &dw.into_shape_with_order(wshape).expect("kernel shape");
                    *pgrads.get_mut(*bias) += &db.into_dyn();
                    if let Some(dx) = dx {
                        accumulate(&mut grads[x.0], dx);
                    }
                }
                Op::GroupNorm { x, gamma, beta, xhat, inv_stds } => {
                    let gam = self.params.get(*gamma).as_slice().expect("contiguous");
                    let (dx, dgamma, dbeta) = kernels::group_norm_backward(xhat, inv_stds, gam, &g);
                    *pgrads.get_mut(*gamma) += &ArrayD::from_shape_vec(IxDyn(&[dgamma.len()]), dgamma).expect("len");
                    *pgrads.get_mut(*beta) += &ArrayD::from_shape_vec(IxDyn(&[dbeta.len()]), dbeta).expect("len");
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Relu(x) => {
                    let mut dx = g;
                    Zip::from(&mut dx).and(&node.value).for_each(|d, &y| {
                        if y <= 0.0 {
                            *d *= kernels::LEAK;
                        }
                    });
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Sigmoid(x) => {
                    let mut dx = g;
                    Zip::from(&mut dx).and(&node.value).for_each(|d, &y| *d *= y * (1.0 - y));
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Upsample2(x) => accumulate(&mut grads[x.0], kernels::upsample2_backward(&g)),
                Op::Concat(a, b) => {
                    let ca = self.nodes[a.0].value.dim().0;
                    accumulate(&mut grads[a.0], g.slice(s![..ca, .., ..]).to_owned());
                    accumulate(&mut grads[b.0], g.slice(s![ca.., .., ..]).to_owned());
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[b.0], g.clone());
                    accumulate(&mut grads[a.0], g);
                }
            }
        }
    }
}

impl Ops for Graph<'_> {
    type T = NodeId;

    fn input(&mut self, x: Array3<f64>) -> NodeId {
        self.push(x.as_standard_layout().into_owned(), Op::Input)
    }

    fn conv(&mut self, x: &NodeId, weight: ParamId, bias: ParamId, geom: ConvGeom) -> NodeId {
        let y = kernels::conv_forward(
            self.value(*x),
            self.params.get(weight).view(),
            self.params.get(bias).view(),
            geom,
        );
        self.push(y, Op::Conv { x: *x, weight, bias, geom })
    }

    fn group_norm(&mut self, x: &NodeId, gamma: ParamId, beta: ParamId, groups: usize) -> NodeId {
        let (y, xhat, inv_stds) = kernels::group_norm_forward(
            self.value(*x),
            self.params.get(gamma).as_slice().expect("contiguous"),
            self.params.get(beta).as_slice().expect("contiguous"),
            groups,
        );
        self.push(y, Op::GroupNorm { x: *x, gamma, beta, xhat, inv_stds })
    }

    fn relu(&mut self, x: &NodeId) -> NodeId {
        let y = self.value(*x).mapv(kernels::leaky_relu);
        self.push(y, Op::Relu(*x))
    }

    fn sigmoid(&mut self, x: &NodeId) -> NodeId {
        let y = self.value(*x).mapv(kernels::sigmoid);
        self.push(y, Op::Sigmoid(*x))
    }

    fn upsample2(&mut self, x: &NodeId) -> NodeId {
        let y = kernels::upsample2(self.value(*x));
        self.push(y, Op::Upsample2(*x))
    }

    fn concat(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let y = kernels::concat(&[self.value(*a), self.value(*b)]);
        self.push(y, Op::Concat(*a, *b))
    }

    fn add(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let y = self.value(*a) + self.value(*b);
        self.push(y, Op::Add(*a, *b))
    }
}

/// Forward-only evaluation without a tape.
pub(crate) struct Eager<'p> {
    params: &'p ParamSet,
}

impl<'p> Eager<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Eager { params }
    }
}

impl Ops for Eager<'_> {
    type T = Rc<Array3<f64>>;

    fn input(&mut self, x: Array3<f64>) -> Self::T {
        Rc::new(x.as_standard_layout().into_owned())
    }

    fn conv(&mut self, x: &Self::T, weight: ParamId, bias: ParamId, geom: ConvGeom) -> Self::T {
        Rc::new(kernels::conv_forward(
            x,
            self.params.get(weight).view(),
            self.params.get(bias).view(),
            geom,
        ))
    }

    fn group_norm(&mut self, x: &Self::T, gamma: ParamId, beta: ParamId, groups: usize) -> Self::T {
        let (y, _, _) = kernels::group_norm_forward(
            x,
            self.params.get(gamma).as_slice().expect("contiguous"),
            self.params.get(beta).as_slice().expect("contiguous"),
            groups,
        );
        Rc::new(y)
    }

    fn relu(&mut self, x: &Self::T) -> Self::T {
        Rc::new(x.mapv(kernels::leaky_relu))
    }

    fn sigmoid(&mut self, x: &Self::T) -> Self::T {
        Rc::new(x.mapv(kernels::sigmoid))
    }

    fn upsample2(&mut self, x: &Self::T) -> Self::T {
        Rc::new(kernels::upsample2(x))
    }

    fn concat(&mut self, a: &Self::T, b: &Self::T) -> Self::T {
        Rc::new(kernels::concat(&[a, b]))
    }

    fn add(&mut self, a: &Self::T, b: &Self::T) -> Self::T {
        Rc::new(a.as_ref() + b.as_ref())
    }
}
