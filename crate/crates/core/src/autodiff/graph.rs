use super::params::{ParamId, ParamStore};
use super::tensor::{round_to_precision, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Everything a backward rule may look at.
pub struct BackwardArgs<'a> {
    /// Gradient of the root with respect to this node's output.
    pub grad: &'a Tensor,
    /// This node's forward value.
    pub value: &'a Tensor,
    /// Forward values of the parents, in registration order.
    pub inputs: Vec<&'a Tensor>,
    /// Whether each parent needs a gradient; rules may skip work for `false`.
    pub needs: Vec<bool>,
}

/// Returns one optional gradient per parent.
pub type BackwardFn = Box<dyn Fn(&BackwardArgs) -> Vec<Option<Tensor>>>;

struct Node {
    op: &'static str,
    value: Tensor,
    grad: Option<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    param: Option<ParamId>,
    requires_grad: bool,
}

/// Per-minibatch computation graph.
///
/// Values are computed eagerly when a node is created, so nodes are always
/// stored in topological order and reverse index order is a valid backward
/// schedule. A graph is built, differentiated, and dropped; nothing persists
/// across minibatches except what is copied back into a [`ParamStore`].
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.insert("leaf", value, vec![], None, None, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.insert("constant", value, vec![], None, None, false)
    }

    /// Leaf holding a copy of a stored parameter; its gradient flows back
    /// through [`ParamStore::accumulate`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let value = store.value(id).clone();
        self.insert("param", value, vec![], None, Some(id), true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an operation whose value has already been computed.
    ///
    /// `backward` must return one entry per parent.
    pub fn push(
        &mut self,
        op: &'static str,
        mut value: Tensor,
        parents: &[Var],
        backward: BackwardFn,
    ) -> Var {
        round_to_precision(value.data_mut());
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let parents = parents.iter().map(|p| p.0).collect();
        let backward = if requires_grad { Some(backward) } else { None };
        self.insert(op, value, parents, backward, None, requires_grad)
    }

    fn insert(
        &mut self,
        op: &'static str,
        value: Tensor,
        parents: Vec<usize>,
        backward: Option<BackwardFn>,
        param: Option<ParamId>,
        requires_grad: bool,
    ) -> Var {
        self.nodes.push(Node {
            op,
            value,
            grad: None,
            parents,
            backward,
            param,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse-mode pass from a scalar root.
    ///
    /// Gradients of this call are added to whatever earlier calls left in
    /// the nodes, so two calls without [`Graph::zero_grad`] accumulate.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let shape = self.nodes[root.0].value.shape().to_vec();
        if self.nodes[root.0].value.numel() != 1 {
            return Err(Error::NonScalarRoot(shape));
        }
        let mut pending: Vec<Option<Tensor>> = (0..=root.0).map(|_| None).collect();
        pending[root.0] = Some(Tensor::full(&shape, 1.0));

        for idx in (0..=root.0).rev() {
            let Some(grad) = pending[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if let Some(rule) = &node.backward {
                let args = BackwardArgs {
                    grad: &grad,
                    value: &node.value,
                    inputs: node.parents.iter().map(|&p| &self.nodes[p].value).collect(),
                    needs: node
                        .parents
                        .iter()
                        .map(|&p| self.nodes[p].requires_grad)
                        .collect(),
                };
                let contributions = rule(&args);
                debug_assert_eq!(contributions.len(), node.parents.len(), "{}", node.op);
                for (&p, g) in node.parents.iter().zip(contributions) {
                    let Some(g) = g else { continue };
                    if !self.nodes[p].requires_grad {
                        continue;
                    }
                    debug_assert_eq!(
                        g.numel(),
                        self.nodes[p].value.numel(),
                        "gradient size from `{}`",
                        node.op
                    );
                    match &mut pending[p] {
                        Some(acc) => acc.add_assign(&g),
                        slot @ None => *slot = Some(g),
                    }
                }
            }
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(acc) => acc.add_assign(&grad),
                slot @ None => *slot = Some(grad),
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Parameter leaves with their accumulated gradients.
    pub(crate) fn param_grads(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.nodes
            .iter()
            .filter_map(|n| Some((n.param?, n.grad.as_ref()?)))
    }
}
