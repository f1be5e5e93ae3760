use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

type BackwardFn<F> = Box<dyn Fn(&Tensor<F>) -> Vec<Tensor<F>>>;

struct Node<F: Scalar> {
    value: Tensor<F>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<F>>,
}

/// Records the operation graph of one forward pass.
///
/// Nodes are appended in evaluation order, so their indices are already a
/// topological order; [`Tape::backward`] walks them once in reverse.
pub struct Tape<F: Scalar = f32> {
    nodes: Vec<Node<F>>,
    record: bool,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            record: true,
        }
    }

    /// A tape that evaluates values only; `backward` yields no gradients.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            record: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register an input or parameter.
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Append an operation result. `backward` maps the output gradient to one
    /// gradient per parent, in `parents` order.
    pub(crate) fn push(
        &mut self,
        op: &str,
        value: Tensor<F>,
        parents: &[Var],
        backward: impl Fn(&Tensor<F>) -> Vec<Tensor<F>> + 'static,
    ) -> Result<Var> {
        value.ensure_finite(op)?;
        let (parents, backward) = if self.record {
            (
                parents.iter().map(|p| p.0).collect(),
                Some(Box::new(backward) as BackwardFn<F>),
            )
        } else {
            (Vec::new(), None)
        };
        self.nodes.push(Node {
            value,
            parents,
            backward,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse-mode sweep from `root`, seeded with ones.
    pub fn backward(&self, root: Var) -> Result<Gradients<F>> {
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), F::one()));
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if let Some(bw) = &node.backward {
                let parent_grads = bw(&g);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&p, pg) in node.parents.iter().zip(parent_grads) {
                    if pg.shape() != self.nodes[p].value.shape() {
                        return Err(Error::shape(
                            "backward",
                            pg.shape(),
                            self.nodes[p].value.shape(),
                        ));
                    }
                    accumulate(&mut grads[p], pg);
                }
            }
            g.ensure_finite("backward")?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<F: Scalar>(slot: &mut Option<Tensor<F>>, g: Tensor<F>) {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
    }
}

/// Gradients of a scalar root with respect to every recorded node.
pub struct Gradients<F: Scalar = f32> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros shaped like `like` when `v` did not
    /// influence the root.
    pub fn get_or_zeros(&self, v: Var, like: &[usize]) -> Tensor<F> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like))
    }
}
