"""Declarative description of the encoder / labeler / decoder stacks.

Shapes are inferred when the spec is expanded, so an architecture that does not
fit its input fails here with the name of the stage that broke, before any
parameter is allocated.
"""
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, model_validator

from src.tensor_core.errors import BuildError

Shape = Tuple[int, ...]
LayerKind = Literal["conv", "pool", "flatten", "dense", "unflatten", "unpool", "deconv"]


class LayerSpec(BaseModel):
    """One stage of a stack, with the shapes of the parameters it owns"""

    name: str
    kind: LayerKind
    input_shape: Shape
    output_shape: Shape
    param_shapes: Dict[str, Shape] = Field(default_factory=dict)
    relu: bool = False
    dropout: bool = False

    @property
    def param_count(self) -> int:
        total = 0
        for shape in self.param_shapes.values():
            count = 1
            for s in shape:
                count *= s
            total += count
        return total


class NetworkSpec(BaseModel):
    """conv1-pool1-conv2-pool2-conv3-fc4-fc5 encoder, softmax labeler, mirrored decoder"""

    input_shape: Tuple[int, int, int] = (1, 28, 28)
    num_classes: int = Field(default=10, ge=2)
    conv_channels: Tuple[int, ...] = (100, 150, 200)
    kernel_sizes: Tuple[int, ...] = (5, 5, 3)
    pool_after: Tuple[bool, ...] = (True, True, False)
    fc_width: int = Field(default=300, ge=1)
    with_decoder: bool = True

    @model_validator(mode="after")
    def _check_lengths(self):
        n = len(self.conv_channels)
        if n == 0 or len(self.kernel_sizes) != n or len(self.pool_after) != n:
            raise ValueError(
                "conv_channels, kernel_sizes and pool_after must have the same non-zero length"
            )
        if any(c < 1 for c in self.conv_channels):
            raise ValueError(f"conv channels must be >= 1, got {self.conv_channels}")
        if any(k < 1 or k % 2 == 0 for k in self.kernel_sizes):
            raise ValueError(f"kernel sizes must be odd positive integers, got {self.kernel_sizes}")
        return self

    def encoder(self) -> List[LayerSpec]:
        layers: List[LayerSpec] = []
        shape: Shape = tuple(self.input_shape)
        for i, (channels, k, pool) in enumerate(
            zip(self.conv_channels, self.kernel_sizes, self.pool_after), start=1
        ):
            c, h, w = shape
            if h < k or w < k:
                raise BuildError(f"conv{i}: input {h}x{w} is smaller than its {k}x{k} kernel")
            out = (channels, h - k + 1, w - k + 1)
            layers.append(LayerSpec(
                name=f"conv{i}", kind="conv", input_shape=shape, output_shape=out,
                param_shapes={"kernels": (channels, c, k, k), "bias": (channels,)}, relu=True,
            ))
            shape = out
            if pool:
                _, h, w = shape
                if h % 2 or w % 2:
                    raise BuildError(f"pool{i}: feature map {h}x{w} has an odd side and cannot be pooled")
                out = (channels, h // 2, w // 2)
                layers.append(LayerSpec(name=f"pool{i}", kind="pool", input_shape=shape, output_shape=out))
                shape = out
        flat = shape[0] * shape[1] * shape[2]
        layers.append(LayerSpec(name="flatten", kind="flatten", input_shape=shape, output_shape=(flat,)))
        width = self.fc_width
        fc_in = flat
        for index in (len(self.conv_channels) + 1, len(self.conv_channels) + 2):
            layers.append(LayerSpec(
                name=f"fc{index}", kind="dense", input_shape=(fc_in,), output_shape=(width,),
                param_shapes={"weights": (width, fc_in), "bias": (width,)}, relu=True, dropout=True,
            ))
            fc_in = width
        return layers

    def labeler(self) -> List[LayerSpec]:
        return [LayerSpec(
            name="fc_out", kind="dense", input_shape=(self.fc_width,), output_shape=(self.num_classes,),
            param_shapes={"weights": (self.num_classes, self.fc_width), "bias": (self.num_classes,)},
        )]

    def decoder(self) -> List[LayerSpec]:
        """Layerwise inverse of the encoder; the final layer is linear"""
        layers: List[LayerSpec] = []
        encoder = self.encoder()
        for stage in reversed(encoder):
            if stage.kind == "dense":
                out_features, in_features = stage.param_shapes["weights"]
                layers.append(LayerSpec(
                    name=stage.name, kind="dense", input_shape=stage.output_shape,
                    output_shape=stage.input_shape,
                    param_shapes={"weights": (in_features, out_features), "bias": (in_features,)},
                    relu=True,
                ))
            elif stage.kind == "flatten":
                layers.append(LayerSpec(
                    name="unflatten", kind="unflatten", input_shape=stage.output_shape,
                    output_shape=stage.input_shape,
                ))
            elif stage.kind == "pool":
                layers.append(LayerSpec(
                    name=stage.name.replace("pool", "unpool"), kind="unpool",
                    input_shape=stage.output_shape, output_shape=stage.input_shape,
                ))
            elif stage.kind == "conv":
                kernels = stage.param_shapes["kernels"]
                layers.append(LayerSpec(
                    name=stage.name, kind="deconv", input_shape=stage.output_shape,
                    output_shape=stage.input_shape,
                    param_shapes={"kernels": kernels, "bias": (stage.input_shape[0],)},
                    relu=True,
                ))
        last = layers[-1]
        layers[-1] = last.model_copy(update={"relu": False})
        if layers[-1].output_shape != tuple(self.input_shape):
            raise BuildError(
                f"decoder output {layers[-1].output_shape} does not match input {tuple(self.input_shape)}"
            )
        return layers

    def stacks(self) -> Dict[str, List[LayerSpec]]:
        stacks = {"enc": self.encoder(), "lab": self.labeler()}
        if self.with_decoder:
            stacks["dec"] = self.decoder()
        return stacks

    def shape_chain(self) -> List[int]:
        """Spatial height after each conv/pool stage, starting from the input"""
        chain = [self.input_shape[1]]
        for stage in self.encoder():
            if stage.kind in ("conv", "pool"):
                chain.append(stage.output_shape[1])
        return chain

    def param_shapes(self, stack: Optional[str] = None) -> Dict[str, Shape]:
        """Flat ``{"enc.conv1.kernels": shape, ...}`` map in declaration order"""
        shapes: Dict[str, Shape] = {}
        for stack_name, layers in self.stacks().items():
            if stack is not None and stack_name != stack:
                continue
            for layer in layers:
                for param, shape in layer.param_shapes.items():
                    shapes[f"{stack_name}.{layer.name}.{param}"] = shape
        return shapes
