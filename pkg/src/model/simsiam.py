"""
SimSiam-style instance-discrimination model built on ValueGraph.

  encoder   f : d   -> 64 (BN, ReLU) -> d_f
  projector   : d_f -> 32 (BN, ReLU) -> d_p
  predictor   : d_p -> 8  (BN, ReLU) -> d_p

Each view batch is forwarded separately, so batch-norm statistics are per
view. Running statistics are updated outside the graph, after the forward
pass, so re-evaluating a graph never touches them.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from numerics import ValueGraph

logger = logging.getLogger(__name__)

BLOCKS = ("enc", "proj", "pred")


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 32
    hidden_dim: int = 64
    feature_dim: int = 32
    projector_hidden: int = 32
    projection_dim: int = 16
    predictor_hidden: int = 8
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    include_self_pairs: bool = True
    zero_init: bool = False
    dtype: str = "float32"
    seed: int = 0

    def block_dims(self) -> Dict[str, Tuple[int, int, int]]:
        return {
            "enc": (self.input_dim, self.hidden_dim, self.feature_dim),
            "proj": (self.feature_dim, self.projector_hidden, self.projection_dim),
            "pred": (self.projection_dim, self.predictor_hidden, self.projection_dim),
        }


@dataclass
class ViewForward:
    """Node ids of one two-view forward pass plus the graph they live in."""

    graph: ValueGraph
    leaves: Dict[str, int]
    features: Tuple[int, int]
    projections: Tuple[int, int]
    predictions: Tuple[int, int]
    bn_nodes: List[Tuple[str, int]] = field(default_factory=list)

    def values(self, pair: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
        return self.graph.value(pair[0]), self.graph.value(pair[1])


class SSLModel:
    """Parameters, batch-norm running statistics and the train/eval flag."""

    def __init__(self, cfg: ModelConfig, params: Optional[Dict[str, np.ndarray]] = None,
                 running: Optional[Dict[str, np.ndarray]] = None):
        self.cfg = cfg
        self.dtype = np.dtype(cfg.dtype)
        self.training = True
        self.params = params if params is not None else self._init_params()
        self.running = running if running is not None else self._init_running()

    def _init_params(self) -> Dict[str, np.ndarray]:
        rng = np.random.default_rng(self.cfg.seed)
        params = {}
        for block, (d_in, d_hidden, d_out) in self.cfg.block_dims().items():
            for name, (fan_in, fan_out) in (("w1", (d_in, d_hidden)), ("w2", (d_hidden, d_out))):
                if self.cfg.zero_init:
                    w = np.zeros((fan_in, fan_out))
                else:
                    w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
                params[f"{block}.{name}"] = w
            params[f"{block}.b1"] = np.zeros(d_hidden)
            params[f"{block}.bn.gamma"] = np.ones(d_hidden)
            params[f"{block}.bn.beta"] = np.zeros(d_hidden)
            params[f"{block}.b2"] = np.zeros(d_out)
        return {k: v.astype(self.dtype) for k, v in params.items()}

    def _init_running(self) -> Dict[str, np.ndarray]:
        running = {}
        for block, (_, d_hidden, _) in self.cfg.block_dims().items():
            running[f"{block}.bn.mean"] = np.zeros(d_hidden, dtype=self.dtype)
            running[f"{block}.bn.var"] = np.ones(d_hidden, dtype=self.dtype)
        return running

    # -- modes and copies ---------------------------------------------------

    def train(self) -> "SSLModel":
        self.training = True
        return self

    def eval(self) -> "SSLModel":
        self.training = False
        return self

    def copy(self) -> "SSLModel":
        clone = SSLModel(self.cfg, {k: v.copy() for k, v in self.params.items()},
                         {k: v.copy() for k, v in self.running.items()})
        clone.training = self.training
        return clone

    def astype(self, dtype) -> "SSLModel":
        cfg = ModelConfig(**{**self.cfg.__dict__, "dtype": np.dtype(dtype).name})
        clone = SSLModel(cfg, {k: v.astype(dtype) for k, v in self.params.items()},
                         {k: v.astype(dtype) for k, v in self.running.items()})
        clone.training = self.training
        return clone

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {f"param/{k}": v for k, v in self.params.items()}
        state.update({f"running/{k}": v for k, v in self.running.items()})
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for key, value in state.items():
            kind, name = key.split("/", 1)
            target = self.params if kind == "param" else self.running
            if name not in target or target[name].shape != value.shape:
                raise KeyError(f"state entry '{key}' does not match the model")
            target[name] = value.astype(self.dtype, copy=True)

    def encoder_checksum(self) -> float:
        return float(sum(np.abs(v).sum() for k, v in self.params.items() if k.startswith("enc.")))

    # -- graph construction -------------------------------------------------

    def bind(self, graph: ValueGraph, trainable: bool = True) -> Dict[str, int]:
        """Add every parameter as a named leaf."""
        return {name: graph.leaf(value, name=name, requires_grad=trainable)
                for name, value in self.params.items()}

    def block(self, graph: ValueGraph, prefix: str, x: int, leaves: Dict[str, int],
              training: bool, bn_nodes: Optional[list] = None) -> int:
        h = graph.linear(x, leaves[f"{prefix}.w1"], leaves[f"{prefix}.b1"])
        h = graph.batch_norm(
            h, leaves[f"{prefix}.bn.gamma"], leaves[f"{prefix}.bn.beta"],
            training=training,
            running_mean=self.running[f"{prefix}.bn.mean"],
            running_var=self.running[f"{prefix}.bn.var"],
            eps=self.cfg.bn_eps,
        )
        if bn_nodes is not None:
            bn_nodes.append((prefix, h))
        h = graph.relu(h)
        return graph.linear(h, leaves[f"{prefix}.w2"], leaves[f"{prefix}.b2"])

    def commit_batch_stats(self, graph: ValueGraph, bn_nodes: List[Tuple[str, int]]) -> None:
        """Fold the batch statistics of training-mode BN nodes into the running averages."""
        m = self.cfg.bn_momentum
        for prefix, node_id in bn_nodes:
            cache = graph[node_id].cache
            if "batch_mean" not in cache:
                continue
            n = cache["batch_size"]
            unbiased = cache["batch_var"] * (n / (n - 1))
            mean_key, var_key = f"{prefix}.bn.mean", f"{prefix}.bn.var"
            self.running[mean_key] = ((1 - m) * self.running[mean_key]
                                      + m * cache["batch_mean"]).astype(self.dtype)
            self.running[var_key] = ((1 - m) * self.running[var_key]
                                     + m * unbiased).astype(self.dtype)

    def forward_views(self, view1: np.ndarray, view2: np.ndarray,
                      graph: Optional[ValueGraph] = None, update_running: bool = True
                      ) -> ViewForward:
        for view in (view1, view2):
            if view.ndim != 2 or view.shape[1] != self.cfg.input_dim:
                raise ValueError(f"views must be (N, {self.cfg.input_dim}), got {view.shape}")
        if self.training and view1.shape[0] < 2:
            raise ValueError("batch of size 1 has no batch variance; "
                             "batch normalization needs at least 2 samples in training mode")

        graph = graph if graph is not None else ValueGraph()
        leaves = self.bind(graph, trainable=self.training)
        bn_nodes: List[Tuple[str, int]] = []
        outputs = []
        for i, view in enumerate((view1, view2), start=1):
            x = graph.constant(view.astype(self.dtype, copy=False), name=f"view{i}")
            f = self.block(graph, "enc", x, leaves, self.training, bn_nodes)
            z = self.block(graph, "proj", f, leaves, self.training, bn_nodes)
            p = self.block(graph, "pred", z, leaves, self.training, bn_nodes)
            outputs.append((f, z, p))

        result = ViewForward(
            graph=graph, leaves=leaves,
            features=(outputs[0][0], outputs[1][0]),
            projections=(outputs[0][1], outputs[1][1]),
            predictions=(outputs[0][2], outputs[1][2]),
            bn_nodes=bn_nodes,
        )
        if self.training and update_running:
            self.commit_batch_stats(graph, bn_nodes)
        return result

    def embed(self, X: np.ndarray, batch_size: int = 512
              ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Eval-mode features, projections and predictions of ``X`` (no running-stat updates)."""
        feats, projs, preds = [], [], []
        for start in range(0, max(X.shape[0], 1), batch_size):
            chunk = X[start:start + batch_size]
            if chunk.shape[0] == 0:
                break
            graph = ValueGraph()
            leaves = self.bind(graph, trainable=False)
            x = graph.constant(chunk.astype(self.dtype, copy=False))
            f = self.block(graph, "enc", x, leaves, training=False)
            z = self.block(graph, "proj", f, leaves, training=False)
            p = self.block(graph, "pred", z, leaves, training=False)
            feats.append(graph.value(f))
            projs.append(graph.value(z))
            preds.append(graph.value(p))
        if not feats:
            empty = np.zeros((0, self.cfg.projection_dim), dtype=self.dtype)
            return np.zeros((0, self.cfg.feature_dim), dtype=self.dtype), empty, empty.copy()
        return np.concatenate(feats), np.concatenate(projs), np.concatenate(preds)


def forward_views(model: SSLModel, view1: np.ndarray, view2: np.ndarray) -> ViewForward:
    """Two-view forward pass in the model's current mode."""
    return model.forward_views(view1, view2)


def encode(model: SSLModel, X: np.ndarray) -> np.ndarray:
    """Frozen encoder features of ``X``."""
    return model.embed(X)[0]
