"""
ValueGraph: a recorded computation with exact reverse-mode gradients.

Nodes are appended in evaluation order, so the node list is already
topologically sorted. Every operation kind is registered in ``OPS`` as a
(forward, backward) pair:

  forward(values, attrs, cache)            -> output array
  backward(grad, values, out, attrs, cache) -> one gradient (or None) per input

Building a node evaluates it immediately when its inputs are bound; calling
``forward`` re-evaluates the whole graph after rebinding named leaves, which
is what the gradient checker relies on.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

ARCCOS_CLAMP = 1e-7
COSINE_EPS = 1e-12
NORM_EPS = 1e-12
BN_EPS = 1e-5


class GraphError(ValueError):
    """Base error for graph evaluation; carries the offending node id."""

    def __init__(self, message: str, node_id: Optional[int] = None):
        self.node_id = node_id
        prefix = f"node {node_id}: " if node_id is not None else ""
        super().__init__(prefix + message)


class ShapeMismatchError(GraphError):
    pass


class NonFiniteError(GraphError):
    pass


class UnboundInputError(GraphError):
    pass


@dataclass
class Node:
    id: int
    op: str
    inputs: Tuple[int, ...]
    attrs: Dict[str, Any] = field(default_factory=dict)
    name: Optional[str] = None
    requires_grad: bool = False
    value: Optional[np.ndarray] = None
    grad: Optional[np.ndarray] = None
    cache: Dict[str, Any] = field(default_factory=dict)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# Operation kinds
# ---------------------------------------------------------------------------

def _matmul_fwd(values, attrs, cache):
    a, b = values
    if a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul shapes {a.shape} and {b.shape} do not align")
    return a @ b


def _matmul_bwd(grad, values, out, attrs, cache):
    a, b = values
    if a.ndim == 1 and b.ndim == 1:
        return grad * b, grad * a
    if b.ndim == 1:
        return np.outer(grad, b), a.T @ grad
    if a.ndim == 1:
        return b @ grad, np.outer(a, grad)
    return grad @ b.T, a.T @ grad


def _transpose_fwd(values, attrs, cache):
    return values[0].T


def _transpose_bwd(grad, values, out, attrs, cache):
    return (grad.T,)


def _bias_add_fwd(values, attrs, cache):
    x, b = values
    if x.shape[-1] != b.shape[-1]:
        raise ValueError(f"bias of shape {b.shape} does not match features {x.shape}")
    return x + b


def _bias_add_bwd(grad, values, out, attrs, cache):
    x, b = values
    return grad, _unbroadcast(grad, b.shape)


def _relu_fwd(values, attrs, cache):
    return np.maximum(values[0], 0)


def _relu_bwd(grad, values, out, attrs, cache):
    return (grad * (values[0] > 0),)


def _batch_norm_fwd(values, attrs, cache):
    x, gamma, beta = values
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ValueError(f"batch norm expects (N, D) input with (D,) affine, got {x.shape}")
    eps = attrs.get("eps", BN_EPS)
    if attrs.get("training", True):
        if x.shape[0] < 2:
            raise ValueError("batch norm in training mode needs at least 2 rows")
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        cache["batch_mean"] = mean
        cache["batch_var"] = var
        cache["batch_size"] = x.shape[0]
    else:
        mean = attrs["running_mean"]
        var = attrs["running_var"]
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean) * inv_std
    cache["inv_std"] = inv_std
    cache["x_hat"] = x_hat
    return gamma * x_hat + beta


def _batch_norm_bwd(grad, values, out, attrs, cache):
    x, gamma, beta = values
    x_hat = cache["x_hat"]
    inv_std = cache["inv_std"]
    d_gamma = (grad * x_hat).sum(axis=0)
    d_beta = grad.sum(axis=0)
    d_xhat = grad * gamma
    if attrs.get("training", True):
        n = x.shape[0]
        d_x = (inv_std / n) * (
            n * d_xhat - d_xhat.sum(axis=0) - x_hat * (d_xhat * x_hat).sum(axis=0)
        )
    else:
        d_x = d_xhat * inv_std
    return d_x, d_gamma, d_beta


def _l2_normalize_fwd(values, attrs, cache):
    x = values[0]
    norm = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    safe = np.maximum(norm, attrs.get("eps", NORM_EPS))
    cache["norm"] = norm
    cache["safe"] = safe
    return x / safe


def _l2_normalize_bwd(grad, values, out, attrs, cache):
    norm, safe = cache["norm"], cache["safe"]
    live = norm > attrs.get("eps", NORM_EPS)
    projected = grad - out * (grad * out).sum(axis=-1, keepdims=True)
    return (np.where(live, projected, grad) / safe,)


def _row_dot_fwd(values, attrs, cache):
    a, b = values
    if a.shape != b.shape:
        raise ValueError(f"row_dot shapes {a.shape} and {b.shape} differ")
    return (a * b).sum(axis=-1)


def _row_dot_bwd(grad, values, out, attrs, cache):
    a, b = values
    g = grad[..., None]
    return g * b, g * a


def _cosine_fwd(values, attrs, cache):
    a, b = values
    if a.shape != b.shape:
        raise ValueError(f"cosine shapes {a.shape} and {b.shape} differ")
    na = np.sqrt((a * a).sum(axis=-1))
    nb = np.sqrt((b * b).sum(axis=-1))
    prod = na * nb
    denom = np.maximum(prod, attrs.get("eps", COSINE_EPS))
    cache.update(na=na, nb=nb, prod=prod, denom=denom)
    return (a * b).sum(axis=-1) / denom


def _cosine_bwd(grad, values, out, attrs, cache):
    a, b = values
    na, nb, prod, denom = cache["na"], cache["nb"], cache["prod"], cache["denom"]
    live = (prod > attrs.get("eps", COSINE_EPS))[..., None]
    c = out[..., None]
    g = grad[..., None]
    na2 = np.where(na > 0, na * na, 1.0)[..., None]
    nb2 = np.where(nb > 0, nb * nb, 1.0)[..., None]
    d_a = g * (b / denom[..., None] - live * c * a / na2)
    d_b = g * (a / denom[..., None] - live * c * b / nb2)
    return d_a, d_b


def _arccos_fwd(values, attrs, cache):
    bound = 1.0 - attrs.get("clamp", ARCCOS_CLAMP)
    c = values[0]
    clipped = np.clip(c, -bound, bound)
    cache["clipped"] = clipped
    cache["inside"] = np.abs(c) <= bound
    return np.arccos(clipped)


def _arccos_bwd(grad, values, out, attrs, cache):
    clipped = cache["clipped"]
    slope = -1.0 / np.sqrt(1.0 - clipped * clipped)
    return (grad * slope * cache["inside"],)


def _add_fwd(values, attrs, cache):
    return values[0] + values[1]


def _add_bwd(grad, values, out, attrs, cache):
    return _unbroadcast(grad, values[0].shape), _unbroadcast(grad, values[1].shape)


def _sub_fwd(values, attrs, cache):
    return values[0] - values[1]


def _sub_bwd(grad, values, out, attrs, cache):
    return _unbroadcast(grad, values[0].shape), _unbroadcast(-grad, values[1].shape)


def _mul_fwd(values, attrs, cache):
    return values[0] * values[1]


def _mul_bwd(grad, values, out, attrs, cache):
    a, b = values
    return _unbroadcast(grad * b, a.shape), _unbroadcast(grad * a, b.shape)


def _scale_fwd(values, attrs, cache):
    return values[0] * attrs["factor"]


def _scale_bwd(grad, values, out, attrs, cache):
    return (grad * attrs["factor"],)


def _add_scalar_fwd(values, attrs, cache):
    return values[0] + attrs["constant"]


def _add_scalar_bwd(grad, values, out, attrs, cache):
    return (grad,)


def _reshape_fwd(values, attrs, cache):
    return values[0].reshape(attrs["shape"])


def _reshape_bwd(grad, values, out, attrs, cache):
    return (grad.reshape(values[0].shape),)


def _sum_fwd(values, attrs, cache):
    return np.asarray(values[0].sum(axis=attrs.get("axis")))


def _sum_bwd(grad, values, out, attrs, cache):
    x = values[0]
    axis = attrs.get("axis")
    if axis is not None:
        grad = np.expand_dims(grad, axis)
    return (np.broadcast_to(grad, x.shape).copy(),)


def _mean_fwd(values, attrs, cache):
    return np.asarray(values[0].mean(axis=attrs.get("axis")))


def _mean_bwd(grad, values, out, attrs, cache):
    x = values[0]
    axis = attrs.get("axis")
    count = x.size if axis is None else x.shape[axis]
    if axis is not None:
        grad = np.expand_dims(grad, axis)
    return (np.broadcast_to(grad / count, x.shape).copy(),)


def _identity_fwd(values, attrs, cache):
    return values[0].copy()


def _identity_bwd(grad, values, out, attrs, cache):
    return (grad,)


def _stop_gradient_bwd(grad, values, out, attrs, cache):
    return (None,)


def _softmax_ce_fwd(values, attrs, cache):
    logits = values[0]
    labels = attrs["labels"]
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ValueError(f"logits {logits.shape} do not match {labels.shape[0]} labels")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    cache["probs"] = np.exp(log_p)
    return np.asarray(-log_p[np.arange(labels.shape[0]), labels].mean())


def _softmax_ce_bwd(grad, values, out, attrs, cache):
    labels = attrs["labels"]
    d = cache["probs"].copy()
    d[np.arange(labels.shape[0]), labels] -= 1.0
    return (grad * d / labels.shape[0],)


ForwardFn = Callable[[List[np.ndarray], Dict[str, Any], Dict[str, Any]], np.ndarray]
BackwardFn = Callable[..., Sequence[Optional[np.ndarray]]]

OPS: Dict[str, Tuple[ForwardFn, Optional[BackwardFn]]] = {
    "matmul": (_matmul_fwd, _matmul_bwd),
    "transpose": (_transpose_fwd, _transpose_bwd),
    "bias_add": (_bias_add_fwd, _bias_add_bwd),
    "relu": (_relu_fwd, _relu_bwd),
    "batch_norm": (_batch_norm_fwd, _batch_norm_bwd),
    "l2_normalize": (_l2_normalize_fwd, _l2_normalize_bwd),
    "row_dot": (_row_dot_fwd, _row_dot_bwd),
    "cosine": (_cosine_fwd, _cosine_bwd),
    "arccos": (_arccos_fwd, _arccos_bwd),
    "add": (_add_fwd, _add_bwd),
    "sub": (_sub_fwd, _sub_bwd),
    "mul": (_mul_fwd, _mul_bwd),
    "scale": (_scale_fwd, _scale_bwd),
    "add_scalar": (_add_scalar_fwd, _add_scalar_bwd),
    "reshape": (_reshape_fwd, _reshape_bwd),
    "sum": (_sum_fwd, _sum_bwd),
    "mean": (_mean_fwd, _mean_bwd),
    "identity": (_identity_fwd, _identity_bwd),
    "stop_gradient": (_identity_fwd, _stop_gradient_bwd),
    "softmax_cross_entropy": (_softmax_ce_fwd, _softmax_ce_bwd),
}

LEAF_OPS = ("leaf", "constant")


# ---------------------------------------------------------------------------
# Graph
# ---------------------------------------------------------------------------

class ValueGraph:
    """
    Append-only computation record.

    Leaves are created with :meth:`leaf` (parameters and inputs, optionally
    requiring gradients) or :meth:`constant`. Every other builder appends one
    node and returns its integer id.
    """

    def __init__(self, check_finite: bool = True):
        self.nodes: List[Node] = []
        self.names: Dict[str, int] = {}
        self.check_finite = check_finite

    def __len__(self) -> int:
        return len(self.nodes)

    def __getitem__(self, node_id: int) -> Node:
        return self.nodes[node_id]

    def value(self, node_id: int) -> np.ndarray:
        return self.nodes[node_id].value

    def grad(self, node_id: int) -> Optional[np.ndarray]:
        return self.nodes[node_id].grad

    def node_id(self, name: str) -> int:
        return self.names[name]

    def _register_name(self, node: Node) -> None:
        if node.name is None:
            return
        if node.name in self.names:
            raise GraphError(f"duplicate node name '{node.name}'", node.id)
        self.names[node.name] = node.id

    # -- leaves -------------------------------------------------------------

    def leaf(self, value: Optional[np.ndarray] = None, name: Optional[str] = None,
             requires_grad: bool = False) -> int:
        node = Node(
            id=len(self.nodes), op="leaf", inputs=(), name=name,
            requires_grad=requires_grad,
            value=None if value is None else np.asarray(value),
        )
        self.nodes.append(node)
        self._register_name(node)
        return node.id

    def constant(self, value: np.ndarray, name: Optional[str] = None) -> int:
        node = Node(id=len(self.nodes), op="constant", inputs=(), name=name,
                    value=np.array(value, copy=True))
        self.nodes.append(node)
        self._register_name(node)
        return node.id

    # -- generic append -----------------------------------------------------

    def apply(self, op: str, *inputs: int, name: Optional[str] = None, **attrs) -> int:
        if op not in OPS:
            raise GraphError(f"unknown operation kind '{op}'")
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise GraphError(f"input {i} does not precede node", len(self.nodes))
        requires_grad = op != "stop_gradient" and any(
            self.nodes[i].requires_grad for i in inputs
        )
        node = Node(id=len(self.nodes), op=op, inputs=tuple(inputs), attrs=attrs,
                    name=name, requires_grad=requires_grad)
        self.nodes.append(node)
        self._register_name(node)
        if all(self.nodes[i].value is not None for i in inputs):
            self._evaluate(node)
        return node.id

    def _evaluate(self, node: Node) -> None:
        forward_fn, _ = OPS[node.op]
        values = [self.nodes[i].value for i in node.inputs]
        node.cache = {}
        try:
            out = forward_fn(values, node.attrs, node.cache)
        except ValueError as e:
            raise ShapeMismatchError(f"{node.op}: {e}", node.id) from e
        out = np.asarray(out)
        if self.check_finite and not np.all(np.isfinite(out)):
            raise NonFiniteError(f"{node.op} produced a non-finite value", node.id)
        node.value = out

    # -- builders -----------------------------------------------------------

    def matmul(self, a: int, b: int, **kw) -> int:
        return self.apply("matmul", a, b, **kw)

    def transpose(self, x: int, **kw) -> int:
        return self.apply("transpose", x, **kw)

    def bias_add(self, x: int, b: int, **kw) -> int:
        return self.apply("bias_add", x, b, **kw)

    def linear(self, x: int, w: int, b: int, **kw) -> int:
        return self.bias_add(self.matmul(x, w), b, **kw)

    def relu(self, x: int, **kw) -> int:
        return self.apply("relu", x, **kw)

    def batch_norm(self, x: int, gamma: int, beta: int, training: bool = True,
                   running_mean: Optional[np.ndarray] = None,
                   running_var: Optional[np.ndarray] = None,
                   eps: float = BN_EPS, **kw) -> int:
        attrs = dict(training=training, eps=eps)
        if not training:
            attrs.update(running_mean=running_mean, running_var=running_var)
        return self.apply("batch_norm", x, gamma, beta, **attrs, **kw)

    def l2_normalize(self, x: int, eps: float = NORM_EPS, **kw) -> int:
        return self.apply("l2_normalize", x, eps=eps, **kw)

    def row_dot(self, a: int, b: int, **kw) -> int:
        return self.apply("row_dot", a, b, **kw)

    def cosine(self, a: int, b: int, eps: float = COSINE_EPS, **kw) -> int:
        return self.apply("cosine", a, b, eps=eps, **kw)

    def arccos(self, c: int, clamp: float = ARCCOS_CLAMP, **kw) -> int:
        return self.apply("arccos", c, clamp=clamp, **kw)

    def add(self, a: int, b: int, **kw) -> int:
        return self.apply("add", a, b, **kw)

    def sub(self, a: int, b: int, **kw) -> int:
        return self.apply("sub", a, b, **kw)

    def mul(self, a: int, b: int, **kw) -> int:
        return self.apply("mul", a, b, **kw)

    def scale(self, x: int, factor: float, **kw) -> int:
        return self.apply("scale", x, factor=factor, **kw)

    def add_scalar(self, x: int, constant: float, **kw) -> int:
        return self.apply("add_scalar", x, constant=constant, **kw)

    def neg(self, x: int, **kw) -> int:
        return self.scale(x, -1.0, **kw)

    def reshape(self, x: int, shape: Tuple[int, ...], **kw) -> int:
        return self.apply("reshape", x, shape=tuple(shape), **kw)

    def sum(self, x: int, axis: Optional[int] = None, **kw) -> int:
        return self.apply("sum", x, axis=axis, **kw)

    def mean(self, x: int, axis: Optional[int] = None, **kw) -> int:
        return self.apply("mean", x, axis=axis, **kw)

    def identity(self, x: int, **kw) -> int:
        return self.apply("identity", x, **kw)

    def stop_gradient(self, x: int, **kw) -> int:
        return self.apply("stop_gradient", x, **kw)

    def softmax_cross_entropy(self, logits: int, labels: np.ndarray, **kw) -> int:
        return self.apply("softmax_cross_entropy", logits,
                          labels=np.asarray(labels, dtype=np.int64), **kw)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def forward(graph: ValueGraph, inputs: Optional[Mapping[str, np.ndarray]] = None
            ) -> Dict[str, np.ndarray]:
    """
    Rebind named leaves and re-evaluate every node in order.

    Args:
        graph: The graph to evaluate.
        inputs: Values for named leaves. Leaves not mentioned keep their
            current value.

    Returns:
        Mapping of every named node to its (new) output value.

    Raises:
        UnboundInputError: A leaf has no value or an unknown name was given.
        ShapeMismatchError: An operation rejected its input shapes.
        NonFiniteError: An operation produced NaN or infinity.
    """
    for name, value in (inputs or {}).items():
        if name not in graph.names:
            raise UnboundInputError(f"no leaf named '{name}'")
        node = graph.nodes[graph.names[name]]
        if node.op not in LEAF_OPS:
            raise UnboundInputError(f"'{name}' is not a leaf", node.id)
        node.value = np.asarray(value)

    for node in graph.nodes:
        if node.op in LEAF_OPS:
            if node.value is None:
                raise UnboundInputError(f"leaf '{node.name}' is unbound", node.id)
            continue
        graph._evaluate(node)

    return {name: graph.nodes[i].value for name, i in graph.names.items()}


def backward(graph: ValueGraph, loss_node: int) -> Dict[Any, np.ndarray]:
    """
    Accumulate gradients of a scalar node into every upstream node.

    Returns:
        Gradient per leaf that requires gradients, keyed by leaf name (or
        node id for unnamed leaves). Leaves the loss does not depend on get
        zeros.

    Raises:
        GraphError: The loss node is not scalar or has not been evaluated.
    """
    loss = graph.nodes[loss_node]
    if loss.value is None:
        raise GraphError("forward has not run", loss_node)
    if loss.value.size != 1:
        raise GraphError(f"loss must be scalar, got shape {loss.value.shape}", loss_node)

    for node in graph.nodes:
        node.grad = None
    loss.grad = np.ones_like(loss.value)

    for node in reversed(graph.nodes[: loss_node + 1]):
        if node.grad is None or not node.requires_grad or node.op in LEAF_OPS:
            continue
        _, backward_fn = OPS[node.op]
        values = [graph.nodes[i].value for i in node.inputs]
        input_grads = backward_fn(node.grad, values, node.value, node.attrs, node.cache)
        for i, g in zip(node.inputs, input_grads):
            parent = graph.nodes[i]
            if g is None or not parent.requires_grad:
                continue
            g = np.asarray(g, dtype=parent.value.dtype).reshape(parent.value.shape)
            parent.grad = g.copy() if parent.grad is None else parent.grad + g

    grads = {}
    for node in graph.nodes:
        if node.op == "leaf" and node.requires_grad:
            key = node.name if node.name is not None else node.id
            grads[key] = node.grad if node.grad is not None else np.zeros_like(node.value)
            node.grad = grads[key]
    logger.debug("backward from node %d over %d nodes", loss_node, len(graph.nodes))
    return grads
