"""The shared-encoder model: f_c = labeler . encoder and f_r = decoder . encoder.

All parameters live in one ordered dict keyed ``<stack>.<layer>.<param>``; both
pipelines read and update the same encoder arrays in place.
"""
import logging
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.drcn_engine.config import TrainConfig
from src.nn_layers import layers as L
from src.nn_layers.specs import LayerSpec, NetworkSpec
from src.objective_opt.losses import LossValue, cross_entropy, squared_loss
from src.tensor_core.errors import ArgumentError, BuildError, DimensionError
from src.tensor_core.rng import INIT, Rng
from src.tensor_core.tensor_ops import Tensor

logger = logging.getLogger(__name__)

Tape = List[Tuple[LayerSpec, dict]]


class DrcnModel:
    def __init__(self, spec: NetworkSpec, params: Dict[str, Tensor]):
        expected = spec.param_shapes()
        if list(params) != list(expected):
            raise BuildError(f"parameter names {list(params)} do not match the architecture {list(expected)}")
        for name, shape in expected.items():
            if params[name].shape != tuple(shape):
                raise BuildError(f"parameter '{name}' has shape {params[name].shape}, expected {shape}")
        self.spec = spec
        self.params = params
        self.stacks = spec.stacks()

    @property
    def has_decoder(self) -> bool:
        return "dec" in self.stacks

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return tuple(self.spec.input_shape)

    @property
    def num_classes(self) -> int:
        return self.spec.num_classes

    def names(self, *stacks: str) -> List[str]:
        prefixes = tuple(f"{s}." for s in stacks)
        return [name for name in self.params if name.startswith(prefixes)]

    def group(self, *stacks: str) -> Dict[str, Tensor]:
        """The live arrays of the given stacks (no copies)"""
        return {name: self.params[name] for name in self.names(*stacks)}

    def snapshot(self, *stacks: str) -> Dict[str, Tensor]:
        return {name: value.copy() for name, value in self.group(*stacks).items()}

    def param_count(self, *stacks: str) -> int:
        return sum(value.size for value in self.group(*stacks).values())


def build_model(
    input_shape: Tuple[int, int, int],
    num_classes: int,
    cfg: TrainConfig,
    spec: Optional[NetworkSpec] = None,
    with_decoder: bool = True,
) -> DrcnModel:
    """Allocate and He-initialise every stack.

    Without an explicit ``spec`` the source architecture is used
    (100/150/200 filters, 5x5/5x5/3x3 kernels) at ``cfg.fc_width``. Encoder and
    labeler are drawn before the decoder from one init stream, so a model with
    and without decoder start from identical encoder/labeler weights.
    """
    if spec is None:
        spec = NetworkSpec(input_shape=tuple(input_shape), num_classes=num_classes, fc_width=cfg.fc_width)
    spec = spec.model_copy(update={
        "input_shape": tuple(input_shape), "num_classes": num_classes, "with_decoder": with_decoder,
    })
    stacks = spec.stacks()  # shape inference; raises BuildError naming the failing stage

    rng = Rng(cfg.seed).substream(INIT)
    params: Dict[str, Tensor] = {}
    for stack_name, stack in stacks.items():
        for layer in stack:
            prefix = f"{stack_name}.{layer.name}"
            if layer.kind == "conv":
                out_ch, in_ch, k, _ = layer.param_shapes["kernels"]
                conv = L.init_conv_layer(rng, out_ch, in_ch, k)
                params[f"{prefix}.kernels"], params[f"{prefix}.bias"] = conv.kernels, conv.bias
            elif layer.kind == "deconv":
                in_ch, out_ch, k, _ = layer.param_shapes["kernels"]
                deconv = L.init_transposed_conv_layer(rng, in_ch, out_ch, k)
                params[f"{prefix}.kernels"], params[f"{prefix}.bias"] = deconv.kernels, deconv.bias
            elif layer.kind == "dense":
                out_features, in_features = layer.param_shapes["weights"]
                dense = L.init_dense_layer(rng, out_features, in_features)
                params[f"{prefix}.weights"], params[f"{prefix}.bias"] = dense.weights, dense.bias

    model = DrcnModel(spec, params)
    logger.info(
        f"✅ Built model: shape chain {spec.shape_chain()}, fc width {spec.fc_width}, "
        f"{model.param_count()} parameters{'' if with_decoder else ' (no decoder)'}"
    )
    return model


def _layer_params(model: DrcnModel, stack: str, layer: LayerSpec):
    prefix = f"{stack}.{layer.name}"
    if layer.kind == "conv":
        return L.ConvLayer(model.params[f"{prefix}.kernels"], model.params[f"{prefix}.bias"])
    if layer.kind == "deconv":
        return L.TransposedConvLayer(model.params[f"{prefix}.kernels"], model.params[f"{prefix}.bias"])
    if layer.kind == "dense":
        return L.DenseLayer(model.params[f"{prefix}.weights"], model.params[f"{prefix}.bias"])
    return None


def run_stack(
    model: DrcnModel,
    stack: str,
    x: Tensor,
    dropout: Optional[Tuple[float, Rng]] = None,
) -> Tuple[Tensor, Tape]:
    """Forward through one stack, keeping what backprop_stack needs"""
    tape: Tape = []
    for layer in model.stacks[stack]:
        cache = {"x": x}
        params = _layer_params(model, stack, layer)
        if layer.kind == "conv":
            x = L.conv2d_forward(params, x)
        elif layer.kind == "deconv":
            x = L.transposed_conv2d_forward(params, x)
        elif layer.kind == "dense":
            x = L.dense_forward(params, x)
        elif layer.kind == "pool":
            x, cache["switches"] = L.maxpool2_forward(x)
        elif layer.kind == "unpool":
            x = L.unpool_duplicate_forward(x)
        elif layer.kind == "flatten":
            x = x.reshape(x.shape[0], -1)
        elif layer.kind == "unflatten":
            x = x.reshape((x.shape[0],) + tuple(layer.output_shape))
        if layer.relu:
            cache["pre_relu"] = x
            x = L.relu(x)
        if layer.dropout and dropout is not None:
            x, cache["mask"] = L.dropout_forward(x, dropout[0], dropout[1])
        tape.append((layer, cache))
    return x, tape


def backprop_stack(
    model: DrcnModel,
    stack: str,
    tape: Tape,
    grad: Tensor,
    grads: Dict[str, Tensor],
    need_input_grad: bool = True,
) -> Optional[Tensor]:
    """Backward through one stack, writing parameter gradients into ``grads``"""
    for position in range(len(tape) - 1, -1, -1):
        layer, cache = tape[position]
        if "mask" in cache:
            grad = L.dropout_backward(cache["mask"], grad)
        if layer.relu:
            grad = L.relu_backward(cache["pre_relu"], grad)
        prefix = f"{stack}.{layer.name}"
        params = _layer_params(model, stack, layer)
        if layer.kind == "conv":
            grad, grads[f"{prefix}.kernels"], grads[f"{prefix}.bias"] = L.conv2d_backward(params, cache["x"], grad)
        elif layer.kind == "deconv":
            grad, grads[f"{prefix}.kernels"], grads[f"{prefix}.bias"] = L.transposed_conv2d_backward(
                params, cache["x"], grad
            )
        elif layer.kind == "dense":
            grad, grads[f"{prefix}.weights"], grads[f"{prefix}.bias"] = L.dense_backward(params, cache["x"], grad)
        elif layer.kind == "pool":
            grad = L.maxpool2_backward(cache["switches"], grad)
        elif layer.kind == "unpool":
            grad = L.unpool_duplicate_backward(grad)
        elif layer.kind in ("flatten", "unflatten"):
            grad = grad.reshape(cache["x"].shape)
        if position == 0 and not need_input_grad:
            return None
    return grad


def _check_batch(model: DrcnModel, batch: Tensor):
    if batch.ndim != 4 or tuple(batch.shape[1:]) != model.input_shape:
        raise DimensionError(f"batch {batch.shape} does not match model input {model.input_shape}")


def forward_classify(
    model: DrcnModel, batch: Tensor, train: bool = False, p_keep: float = 1.0, rng: Optional[Rng] = None
) -> Tensor:
    """Softmax class probabilities; dropout only when ``train`` is set"""
    _check_batch(model, batch)
    if train and rng is None:
        raise ArgumentError("training-mode forward pass needs an rng for dropout")
    dropout = (p_keep, rng) if train else None
    features, _ = run_stack(model, "enc", batch, dropout)
    logits, _ = run_stack(model, "lab", features)
    return L.softmax(logits)


def forward_reconstruct(model: DrcnModel, batch: Tensor) -> Tensor:
    """Linear-output reconstruction with the same shape as the input"""
    _check_batch(model, batch)
    if not model.has_decoder:
        raise BuildError("model was built without a decoder")
    features, _ = run_stack(model, "enc", batch)
    recon, _ = run_stack(model, "dec", features)
    return recon


def classification_loss_and_grads(
    model: DrcnModel,
    batch: Tensor,
    onehot: Tensor,
    p_keep: float = 1.0,
    rng: Optional[Rng] = None,
) -> Tuple[LossValue, Dict[str, Tensor]]:
    """Cross-entropy of f_c and its gradient w.r.t. the encoder and labeler"""
    _check_batch(model, batch)
    dropout = (p_keep, rng) if rng is not None else None
    features, enc_tape = run_stack(model, "enc", batch, dropout)
    logits, lab_tape = run_stack(model, "lab", features)
    loss, grad_logits = cross_entropy(L.softmax(logits), onehot)
    grads: Dict[str, Tensor] = {}
    grad_features = backprop_stack(model, "lab", lab_tape, grad_logits, grads)
    backprop_stack(model, "enc", enc_tape, grad_features, grads, need_input_grad=False)
    return loss, grads


def reconstruction_loss_and_grads(
    model: DrcnModel,
    noisy: Tensor,
    clean: Tensor,
    freeze_encoder: bool = False,
) -> Tuple[LossValue, Dict[str, Tensor]]:
    """Squared loss of f_r(noisy) against clean and its gradient w.r.t. encoder and decoder"""
    _check_batch(model, noisy)
    if not model.has_decoder:
        raise BuildError("model was built without a decoder")
    features, enc_tape = run_stack(model, "enc", noisy)
    recon, dec_tape = run_stack(model, "dec", features)
    loss, grad_recon = squared_loss(recon, clean)
    grads: Dict[str, Tensor] = {}
    grad_features = backprop_stack(model, "dec", dec_tape, grad_recon, grads, need_input_grad=not freeze_encoder)
    if not freeze_encoder:
        backprop_stack(model, "enc", enc_tape, grad_features, grads, need_input_grad=False)
    return loss, grads


def predict_labels(model: DrcnModel, images: Tensor, batch_size: int = 256) -> np.ndarray:
    """Argmax class per image in evaluation mode; ties go to the lowest index"""
    predictions = [
        forward_classify(model, images[start:start + batch_size]).argmax(axis=1)
        for start in range(0, images.shape[0], batch_size)
    ]
    return np.concatenate(predictions) if predictions else np.zeros(0, dtype=np.int64)
