"""
Graph-level anomaly detector: Rayleigh Quotient learning plus a Chebyshev
wavelet network with Rayleigh-Quotient-weighted pooling.

Per graph:
    X̃      = MLP_feat(X)
    r      = diag(X̃ᵀ L X̃) / diag(X̃ᵀ X̃)              (regular Laplacian)
    h_RQ   = MLP_rq(r)
    H      = [f_1(L̂)X̃ | ... | f_q(L̂)X̃]              (normalized Laplacian)
    a_j    = <tile(r, q), H_j>
    h_Att  = ReLU(Σ_j a_j H_j)
    z      = [h_Att, h_RQ]
Per batch:
    logits = MLP_head(dropout(BatchNorm(Z)))
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from src.autodiff import GradientTape, Variable
from src.config.model_config import BATCH_NORM_PARAMS, RQ_EPS, TRAIN_PARAMS, VARIANTS
from src.errors import ConfigError, ShapeError
from src.graph_linalg import build_laplacian, lambda_max
from src.utils import make_rng, read_json, write_json
from src.wavelet import WaveletBank, chebyshev_filter_bank_adjoint, wavelet_features

CHECKPOINT_VERSION = 1
MODES = ("train", "infer")


@dataclass
class ModelParams:
    """All learnable tensors plus batch-norm running statistics."""

    feature_dim: int
    hidden_dim: int
    q: int
    variant: str
    tensors: dict
    running_mean: np.ndarray
    running_var: np.ndarray

    @property
    def uses_rql(self):
        return self.variant != "no-rql"

    @property
    def embedding_dim(self):
        return self.q * self.hidden_dim + (self.hidden_dim if self.uses_rql else 0)

    def copy(self):
        return ModelParams(
            self.feature_dim, self.hidden_dim, self.q, self.variant,
            {name: value.copy() for name, value in self.tensors.items()},
            self.running_mean.copy(), self.running_var.copy(),
        )

    def validate(self):
        """Raise ShapeError/ConfigError if shapes or values are inconsistent."""
        for name, shape in layer_shapes(self.feature_dim, self.hidden_dim, self.q, self.variant).items():
            if name not in self.tensors:
                raise ShapeError(f"Missing parameter {name}")
            if self.tensors[name].shape != shape:
                raise ShapeError(f"Parameter {name} has shape {self.tensors[name].shape}, expected {shape}")
            if not np.all(np.isfinite(self.tensors[name])):
                raise ConfigError(f"Parameter {name} is not finite")
        if np.any(self.running_var < 0):
            raise ConfigError("Running variance must be non-negative")


def layer_shapes(feature_dim, hidden_dim, q, variant="full"):
    """Parameter name -> shape for the given dimensions."""
    d = hidden_dim
    embedding = q * d + (0 if variant == "no-rql" else d)
    shapes = {
        "mlp_feat.w1": (feature_dim, d), "mlp_feat.b1": (d,),
        "mlp_feat.w2": (d, d), "mlp_feat.b2": (d,),
    }
    if variant != "no-rql":
        shapes.update({
            "mlp_rq.w1": (d, d), "mlp_rq.b1": (d,),
            "mlp_rq.w2": (d, d), "mlp_rq.b2": (d,),
        })
    shapes.update({
        "head.w1": (embedding, d), "head.b1": (d,),
        "head.w2": (d, 2), "head.b2": (2,),
        "bn.gamma": (embedding,), "bn.beta": (embedding,),
    })
    return shapes


def init_params(feature_dim, hidden_dim=TRAIN_PARAMS["d"], q=TRAIN_PARAMS["q"],
                variant=TRAIN_PARAMS["variant"], seed=TRAIN_PARAMS["seed"]):
    """
    Seeded initialisation: weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
    batch-norm scale 1 and shift 0, running mean 0 and variance 1.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"Unknown variant {variant!r}; expected one of {VARIANTS}")
    if feature_dim < 1 or hidden_dim < 1 or q < 1:
        raise ConfigError(f"Invalid dimensions F={feature_dim}, d={hidden_dim}, q={q}")
    rng = make_rng(seed, "init")
    shapes = layer_shapes(feature_dim, hidden_dim, q, variant)
    tensors = {}
    for name, shape in shapes.items():
        if name == "bn.gamma":
            tensors[name] = np.ones(shape)
        elif name == "bn.beta":
            tensors[name] = np.zeros(shape)
        else:
            layer = name.rsplit(".", 1)[0]
            fan_in = shapes[f"{layer}.w{name[-1]}"][0]
            bound = np.sqrt(1.0 / fan_in)
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    embedding = shapes["bn.gamma"][0]
    return ModelParams(feature_dim, hidden_dim, q, variant, tensors, np.zeros(embedding), np.ones(embedding))


@dataclass(frozen=True, eq=False)
class PreparedGraph:
    """A graph with its Laplacians and per-graph wavelet bank computed once."""

    record: object
    laplacian: object
    normalized: object
    bank: WaveletBank

    @property
    def features(self):
        return self.record.features

    @property
    def label(self):
        return self.record.label

    @property
    def feature_dim(self):
        return self.record.feature_dim


def prepare_graph(record, bank):
    """Compute both Laplacians, λ_max of the normalized one and the matching bank."""
    normalized = build_laplacian(record, "normalized")
    graph_bank = bank.for_lambda_max(lambda_max(normalized, mode="normalized"))
    return PreparedGraph(record, build_laplacian(record, "regular"), normalized, graph_bank)


def prepare_graphs(records, bank):
    return [r if isinstance(r, PreparedGraph) else prepare_graph(r, bank) for r in records]


@dataclass
class ForwardTrace:
    """Intermediate values of one graph's forward pass (train mode only)."""

    x_tilde: np.ndarray
    rq_vec: np.ndarray
    wavelet_features: np.ndarray
    attention: np.ndarray
    pooled: np.ndarray
    embedding: np.ndarray
    logits: np.ndarray = None


@dataclass
class ForwardResult:
    """Logits of a batch plus what training needs afterwards."""

    logits: Variable
    tape: GradientTape
    running_mean: np.ndarray
    running_var: np.ndarray
    traces: list = field(default_factory=list)

    @property
    def probabilities(self):
        return softmax(self.logits.value)


def softmax(logits):
    logits = np.atleast_2d(logits)
    shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
    return shifted / shifted.sum(axis=1, keepdims=True)


def _bind(params, tape):
    """Parameters as tape variables; ModelParams are watched on the tape."""
    if isinstance(params, ModelParams):
        return tape.watch_all(params.tensors)
    return params


def _mlp(tape, leaves, prefix, x):
    hidden = tape.relu(tape.add(tape.matmul(x, leaves[f"{prefix}.w1"]), leaves[f"{prefix}.b1"]))
    return tape.add(tape.matmul(hidden, leaves[f"{prefix}.w2"]), leaves[f"{prefix}.b2"])


def feature_transform(graph, params, tape):
    """X̃ = MLP_feat(X)."""
    leaves = _bind(params, tape)
    if graph.feature_dim != leaves["mlp_feat.w1"].shape[0]:
        raise ShapeError(f"Graph has {graph.feature_dim} features, model expects {leaves['mlp_feat.w1'].shape[0]}")
    return _mlp(tape, leaves, "mlp_feat", tape.constant(graph.features))


def rql_forward(graph, params, tape=None, x_tilde=None):
    """
    Rayleigh Quotient branch.

    Returns:
        tuple: (h_RQ Variable or None for the no-rql variant, rq_vec Variable)
    """
    tape = tape if tape is not None else GradientTape(enabled=False)
    leaves = _bind(params, tape)
    if x_tilde is None:
        x_tilde = feature_transform(graph, leaves, tape)
    rq_vec = tape.rayleigh_quotient(graph.laplacian, x_tilde, RQ_EPS)
    h_rq = _mlp(tape, leaves, "mlp_rq", rq_vec) if "mlp_rq.w1" in leaves else None
    return h_rq, rq_vec


def cwgnn_rq_forward(graph, params, rq_vec, x_tilde, tape=None, pooling="rq"):
    """
    Wavelet branch with Rayleigh-Quotient pooling (or mean pooling).

    Returns:
        tuple: (h_Att Variable, wavelet features Variable, attention scores or None)
    """
    tape = tape if tape is not None else GradientTape(enabled=False)
    bank = graph.bank
    laplacian = graph.normalized
    features = tape.linear_map(
        x_tilde,
        lambda v: wavelet_features(laplacian, v, bank),
        lambda g: chebyshev_filter_bank_adjoint(laplacian, g, bank.coefficients, bank.lambda_max),
    )
    if pooling == "mean":
        return tape.relu(tape.mean_rows(features)), features, None
    attention = tape.matmul(features, tape.tile(rq_vec, bank.q))
    pooled = tape.matmul(tape.transpose(features), attention)
    return tape.relu(pooled), features, attention


def batch_norm(z, params, mode, tape=None, leaves=None, momentum=BATCH_NORM_PARAMS["momentum"],
               eps=BATCH_NORM_PARAMS["eps"]):
    """
    Batch normalisation of the (batch, width) graph embeddings.

    Train mode normalises with the batch statistics and returns updated
    running statistics; infer mode uses the running statistics. `leaves`
    supplies already-watched scale and shift variables.

    Returns:
        tuple: (normalised Variable, running_mean, running_var)
    """
    if mode not in MODES:
        raise ConfigError(f"Unknown mode {mode!r}")
    tape = tape if tape is not None else GradientTape(enabled=False)
    if not isinstance(z, Variable):
        z = tape.constant(z)
    if leaves is None:
        leaves = _bind(params, tape)
    stats = params if isinstance(params, ModelParams) else None
    gamma, beta = leaves["bn.gamma"], leaves["bn.beta"]
    if mode == "train":
        out, mean, var = tape.batch_norm(z, gamma, beta, eps)
        running_mean = momentum * stats.running_mean + (1.0 - momentum) * mean if stats else None
        running_var = momentum * stats.running_var + (1.0 - momentum) * var if stats else None
        return out, running_mean, running_var
    out, _, _ = tape.batch_norm(z, gamma, beta, eps, mean=stats.running_mean, var=stats.running_var)
    return out, stats.running_mean, stats.running_var


def model_forward(graphs, params, bank, mode="infer", tape=None, rng=None,
                  dropout=TRAIN_PARAMS["dropout"], keep_trace=None):
    """
    Logits for a batch of graphs.

    The batch is the batch-norm context: in train mode statistics are shared
    across all graphs passed together. A single graph is a batch of one.

    Args:
        graphs (list): GraphRecord or PreparedGraph instances
        params (ModelParams): Model parameters
        bank (WaveletBank): Template bank, used for graphs not yet prepared
        mode (str): 'train' or 'infer'
        tape (GradientTape, optional): Tape to record onto (train mode)
        rng (np.random.Generator, optional): Dropout mask source
        dropout (float): Drop rate applied to the normalised embedding in train mode

    Returns:
        ForwardResult
    """
    if mode not in MODES:
        raise ConfigError(f"Unknown mode {mode!r}; expected one of {MODES}")
    if not 0.0 <= dropout < 1.0:
        raise ConfigError(f"dropout must lie in [0, 1), got {dropout}")
    graphs = prepare_graphs(graphs, bank)
    if not graphs:
        raise ShapeError("model_forward needs at least one graph")
    train = mode == "train"
    keep_trace = train if keep_trace is None else keep_trace
    tape = tape if tape is not None else GradientTape(enabled=train)
    leaves = tape.watch_all(params.tensors)
    pooling = "mean" if params.variant == "mean-pool" else "rq"

    embeddings, traces = [], []
    for graph in graphs:
        x_tilde = feature_transform(graph, leaves, tape)
        h_rq, rq_vec = rql_forward(graph, leaves, tape, x_tilde)
        h_att, features, attention = cwgnn_rq_forward(graph, leaves, rq_vec, x_tilde, tape, pooling)
        z = tape.concat([h_att, h_rq]) if h_rq is not None else h_att
        embeddings.append(z)
        if keep_trace:
            traces.append(ForwardTrace(
                x_tilde=x_tilde.value, rq_vec=rq_vec.value, wavelet_features=features.value,
                attention=None if attention is None else attention.value,
                pooled=h_att.value, embedding=z.value,
            ))

    batch = tape.stack(embeddings)
    normalized, running_mean, running_var = batch_norm(batch, params, mode, tape, leaves=leaves)
    if train and dropout > 0:
        rng = rng if rng is not None else make_rng(0, "dropout")
        mask = (rng.random(normalized.shape) >= dropout) / (1.0 - dropout)
        normalized = tape.multiply_constant(normalized, mask)

    logits = _mlp(tape, leaves, "head", normalized)
    for trace, row in zip(traces, logits.value):
        trace.logits = row
    return ForwardResult(logits, tape, running_mean, running_var, traces)


def predict_proba(params, bank, graphs, chunk_size=TRAIN_PARAMS["batch_size"]):
    """Anomaly-class probability of every graph (infer mode)."""
    graphs = prepare_graphs(graphs, bank)
    scores = []
    for start in range(0, len(graphs), chunk_size):
        result = model_forward(graphs[start:start + chunk_size], params, bank, mode="infer")
        scores.append(result.probabilities)
    return np.vstack(scores) if scores else np.zeros((0, 2))


# Checkpoints

def save_checkpoint(path, params, bank):
    """
    Write parameters and the wavelet bank as one JSON document.

    Returns:
        str: Path written
    """
    document = {
        "version": CHECKPOINT_VERSION,
        "config": {
            "F": params.feature_dim,
            "d": params.hidden_dim,
            "q": params.q,
            "K": bank.K,
            "variant": params.variant,
            "kernel_id": bank.kernel_id,
            "scales": list(bank.scales),
            "bank": bank.to_json(),
        },
        "params": {
            name: {"shape": list(value.shape), "values": value.ravel().tolist()}
            for name, value in params.tensors.items()
            if not name.startswith("bn.")
        },
        "bn": {
            "gamma": params.tensors["bn.gamma"].tolist(),
            "beta": params.tensors["bn.beta"].tolist(),
            "running_mean": params.running_mean.tolist(),
            "running_var": params.running_var.tolist(),
        },
    }
    return write_json(document, path)


def load_checkpoint(path):
    """
    Read a checkpoint written by save_checkpoint.

    Returns:
        tuple: (ModelParams, WaveletBank)

    Raises:
        ConfigError: For an unsupported version
        ShapeError: If stored shapes disagree with the configuration
    """
    document = read_json(path)
    if document.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"Unsupported checkpoint version {document.get('version')!r}")
    config = document["config"]
    tensors = {
        name: np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in document["params"].items()
    }
    bn = document["bn"]
    tensors["bn.gamma"] = np.asarray(bn["gamma"], dtype=np.float64)
    tensors["bn.beta"] = np.asarray(bn["beta"], dtype=np.float64)
    params = ModelParams(
        feature_dim=int(config["F"]), hidden_dim=int(config["d"]), q=int(config["q"]),
        variant=config.get("variant", "full"), tensors=tensors,
        running_mean=np.asarray(bn["running_mean"], dtype=np.float64),
        running_var=np.asarray(bn["running_var"], dtype=np.float64),
    )
    params.validate()
    bank = WaveletBank.from_json(config["bank"])
    logging.info(f"Loaded checkpoint {path} (F={params.feature_dim}, d={params.hidden_dim}, q={params.q})")
    return params, bank
