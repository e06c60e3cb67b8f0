"""Backbone-agnostic classifier with single-image and puzzle forward paths.

The model is a feature extractor followed by a bias-free 1x1 classifier head.
Per-class activation maps are the head applied at every spatial position;
logits are the global average pool of those raw maps, so the two are tied by
construction. forward_puzzle runs the very same weight set on the four
quadrants of the input and merges the per-tile maps back to full feature
resolution, which is what the consistency loss compares against.

Backbone kinds:

- tiny_cnn: stages of 3x3 stride-2 convolutions plus ReLU; output stride
  2 ** num_stages.
- pointwise_only: stages of 1x1 stride-1 convolutions plus ReLU; output
  stride 1. Receptive fields never cross tile borders, so the merged tiled
  maps equal the single-pass maps exactly. Exists as a built-in oracle.
- external: any callable mapping an image batch tensor to a feature batch
  tensor; the head is still owned (and trained) here. No checkpoint support.

Checkpoints use a plain-text header (magic line, JSON manifest, blob size
line) followed by raw little-endian float64 parameter bytes, so the manifest
is readable with `head` and round trips are bitwise exact.
"""

from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .cams import CAMStack, ClassifierWeights, FeatureMap
from .errors import CheckpointError, ContractError
from .puzzle import tile_batch

CHECKPOINT_MAGIC = "PZCK v1"
BACKBONE_KINDS = ("tiny_cnn", "pointwise_only", "external")


@dataclass(frozen=True)
class BackboneSpec:
    """Architecture description: kind, per-stage widths, downsampling factor."""

    kind: str = "tiny_cnn"
    widths: tuple = (16, 32, 64)
    in_channels: int = 3
    output_stride: int = field(default=0)  # 0 = derive from kind/widths

    def __post_init__(self):
        if self.kind not in BACKBONE_KINDS:
            raise ContractError(f"unknown backbone kind {self.kind!r}, expected one of {BACKBONE_KINDS}")
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if not widths or any(w < 1 for w in widths):
            raise ContractError(f"widths must be positive integers, got {self.widths}")
        if self.in_channels < 1:
            raise ContractError(f"in_channels must be >= 1, got {self.in_channels}")
        if self.kind == "tiny_cnn":
            s = 2 ** len(widths)
            if s not in (4, 8, 16):
                raise ContractError(
                    f"tiny_cnn needs 2, 3 or 4 stages (output stride 4/8/16), got {len(widths)}"
                )
        elif self.kind == "pointwise_only":
            s = 1
        else:  # external: caller must declare the stride of its extractor
            s = self.output_stride
            if s < 1:
                raise ContractError("external backbones must declare output_stride >= 1")
        object.__setattr__(self, "output_stride", s)

    @property
    def feature_dim(self) -> int:
        return self.widths[-1]


@dataclass(frozen=True)
class ForwardResult:
    """Single-image forward outputs: features, raw CAMs, pooled logits."""

    features: FeatureMap
    raw_cams: CAMStack
    logits: np.ndarray


class Classifier:
    """Feature extractor plus 1x1 class head sharing weights across both paths."""

    def __init__(self, spec: BackboneSpec, num_classes: int, seed: int = 0, external_forward=None):
        if num_classes < 1:
            raise ContractError(f"num_classes must be >= 1, got {num_classes}")
        if spec.kind == "external":
            if external_forward is None:
                raise ContractError("external backbone requires an external_forward callable")
        elif external_forward is not None:
            raise ContractError(f"external_forward is only valid with kind 'external', not {spec.kind!r}")
        self.spec = spec
        self.num_classes = int(num_classes)
        self._external = external_forward
        self._params: dict[str, ad.Tensor] = {}
        self._init_params(seed)

    def _init_params(self, seed):
        rng = np.random.default_rng(seed)
        spec = self.spec
        if spec.kind != "external":
            k = 3 if spec.kind == "tiny_cnn" else 1
            cin = spec.in_channels
            for i, cout in enumerate(spec.widths):
                fan_in = cin * k * k
                w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(cout, cin, k, k))
                self._params[f"stage{i}.weight"] = ad.Tensor(w, requires_grad=True)
                self._params[f"stage{i}.bias"] = ad.Tensor(np.zeros(cout), requires_grad=True)
                cin = cout
        d = spec.feature_dim
        theta = rng.normal(0.0, np.sqrt(1.0 / d), size=(self.num_classes, d))
        self._params["theta"] = ad.Tensor(theta, requires_grad=True)

    # -- parameter access --------------------------------------------------

    def named_parameters(self) -> dict:
        return dict(self._params)

    def parameters(self) -> list:
        return list(self._params.values())

    @property
    def theta(self) -> ClassifierWeights:
        return ClassifierWeights(theta=self._params["theta"].data.copy())

    def zero_grad(self):
        for p in self._params.values():
            p.zero_grad()

    # -- tape-level forward ------------------------------------------------

    def features_graph(self, x: ad.Tensor) -> ad.Tensor:
        """(B, in_channels, H, W) image batch to (B, D, h, w) feature batch."""
        if self._external is not None:
            return self._external(x)
        stride = 2 if self.spec.kind == "tiny_cnn" else 1
        padding = 1 if self.spec.kind == "tiny_cnn" else 0
        out = x
        for i in range(len(self.spec.widths)):
            w = self._params[f"stage{i}.weight"]
            b = self._params[f"stage{i}.bias"]
            out = ad.relu(ad.conv2d(out, w, b, stride=stride, padding=padding))
        return out

    def cams_graph(self, feat: ad.Tensor) -> ad.Tensor:
        """Apply the head at every position: (B, D, h, w) to (B, C, h, w)."""
        theta = self._params["theta"]
        kernel = ad.reshape(theta, (self.num_classes, self.spec.feature_dim, 1, 1))
        return ad.conv2d(feat, kernel)

    @staticmethod
    def logits_graph(raw_cams: ad.Tensor) -> ad.Tensor:
        """Global average pool: (B, C, h, w) to (B, C)."""
        return ad.mean(raw_cams, axis=(-2, -1))

    def forward_batch(self, x) -> tuple:
        """Full single-path graph on an image batch: (features, raw_cams, logits)."""
        x = self._check_batch(x)
        feat = self.features_graph(x)
        raw = self.cams_graph(feat)
        return feat, raw, self.logits_graph(raw)

    def forward_puzzle_batch(self, x, target_hw: tuple) -> tuple:
        """Quadrant-tiled pass with shared weights: (merged raw_cams, logits).

        target_hw is the (h, w) of the single-path feature maps; the merged
        stack is cropped to it so both stacks compare elementwise.
        """
        x = self._check_batch(x)
        b = x.data.shape[0]
        tiles = ad.Tensor(tile_batch(x.data), requires_grad=False)
        feat_t = self.features_graph(tiles)
        raw_t = self.cams_graph(feat_t)
        merged = merge_graph(raw_t, b, target_hw)
        return merged, self.logits_graph(merged)

    def _check_batch(self, x) -> ad.Tensor:
        if not isinstance(x, ad.Tensor):
            x = ad.Tensor(np.asarray(x, dtype=np.float64))
        if x.ndim != 4:
            raise ContractError(f"expected (B, C, H, W) image batch, got shape {x.shape}")
        if x.shape[1] != self.spec.in_channels:
            raise ContractError(
                f"expected {self.spec.in_channels} input channels, got {x.shape[1]}"
            )
        s = self.spec.output_stride
        h, w = x.shape[2], x.shape[3]
        if h < 2 * s or w < 2 * s:
            raise ContractError(
                f"input {h}x{w} is too small: both sides must be >= 2*output_stride = {2 * s}"
            )
        return x

    # -- public single-image API --------------------------------------------

    def forward_single(self, image) -> ForwardResult:
        """Run one (3, H, W) image; returns features, raw CAMs and logits."""
        image = _as_single_image(image, self.spec.in_channels)
        h, w = image.shape[1], image.shape[2]
        feat, raw, logits = self.forward_batch(image[None])
        return ForwardResult(
            features=FeatureMap(data=feat.data[0], source_size=(w, h)),
            raw_cams=CAMStack(maps=raw.data[0], normalized=False),
            logits=logits.data[0],
        )

    def forward_puzzle(self, image) -> tuple:
        """Tiled pass on one (3, H, W) image: (merged raw CAMStack, logits)."""
        image = _as_single_image(image, self.spec.in_channels)
        single = self.forward_single(image)
        target_hw = single.raw_cams.maps.shape[-2:]
        raw_re, logits_re = self.forward_puzzle_batch(image[None], target_hw)
        return CAMStack(maps=raw_re.data[0], normalized=False), logits_re.data[0]

    # -- persistence ---------------------------------------------------------

    def save_checkpoint(self, path):
        if self._external is not None:
            raise CheckpointError(
                "external backbones hold parameters outside this model and cannot be checkpointed"
            )
        names = sorted(self._params)
        offset = 0
        entries = []
        blobs = []
        for name in names:
            data = np.ascontiguousarray(self._params[name].data, dtype="<f8")
            entries.append({"name": name, "shape": list(data.shape), "offset": offset})
            blobs.append(data.tobytes())
            offset += data.nbytes
        manifest = {
            "format": "puzzlecam-checkpoint",
            "version": 1,
            "backbone": {
                "kind": self.spec.kind,
                "widths": list(self.spec.widths),
                "in_channels": self.spec.in_channels,
                "output_stride": self.spec.output_stride,
            },
            "num_classes": self.num_classes,
            "dtype": "<f8",
            "params": entries,
            "blob_nbytes": offset,
        }
        tmp = str(path) + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write((CHECKPOINT_MAGIC + "\n").encode("ascii"))
            fh.write(json.dumps(manifest, sort_keys=True).encode("ascii") + b"\n")
            fh.write(f"BLOB {offset}\n".encode("ascii"))
            for blob in blobs:
                fh.write(blob)
        os.replace(tmp, path)
        return path

    def load_checkpoint(self, path):
        spec, num_classes, params = read_checkpoint(path)
        if num_classes != self.num_classes:
            raise CheckpointError(
                f"{path}: checkpoint has {num_classes} classes, model expects {self.num_classes}"
            )
        if spec != self.spec:
            raise CheckpointError(f"{path}: checkpoint backbone {spec} does not match model {self.spec}")
        for name, value in params.items():
            self._params[name].data[...] = value

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self._params.values())


def merge_graph(tiled: ad.Tensor, batch: int, target_hw: tuple) -> ad.Tensor:
    """Differentiable quadrant merge: (4B, C, th, tw) to (B, C, h, w).

    The four B-blocks follow tile_batch order (top-left, top-right,
    bottom-left, bottom-right); the reassembled grid is cropped to target_hw.
    """
    h, w = target_hw
    th, tw = tiled.shape[-2], tiled.shape[-1]
    if not (2 * th - 1 <= h <= 2 * th and 2 * tw - 1 <= w <= 2 * tw):
        raise ContractError(
            f"tile shape {th}x{tw} cannot merge to target {h}x{w}: "
            f"target must be within one pixel of {2 * th}x{2 * tw}"
        )
    tl = tiled[0 * batch : 1 * batch]
    tr = tiled[1 * batch : 2 * batch]
    bl = tiled[2 * batch : 3 * batch]
    br = tiled[3 * batch : 4 * batch]
    top = ad.concat([tl, tr], axis=-1)
    bottom = ad.concat([bl, br], axis=-1)
    full = ad.concat([top, bottom], axis=-2)
    return full[..., :h, :w]


def _as_single_image(image, channels):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != channels:
        raise ContractError(f"expected a ({channels}, H, W) image, got shape {image.shape}")
    return image


def read_checkpoint(path):
    """Parse a checkpoint file into (BackboneSpec, num_classes, {name: array})."""
    try:
        with open(path, "rb") as fh:
            payload = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    buf = io.BytesIO(payload)
    magic = buf.readline().rstrip(b"\n")
    if magic != CHECKPOINT_MAGIC.encode("ascii"):
        raise CheckpointError(f"{path}: bad magic {magic[:16]!r}, expected {CHECKPOINT_MAGIC!r}")
    try:
        manifest = json.loads(buf.readline().decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest: {exc}") from exc
    blob_line = buf.readline().decode("ascii", "replace").strip()
    try:
        keyword, size_text = blob_line.split()
        if keyword != "BLOB":
            raise ValueError(keyword)
        declared = int(size_text)
    except ValueError as exc:
        raise CheckpointError(
            f"{path}: missing BLOB size line, found {blob_line[:32]!r}"
        ) from exc
    blob = buf.read()
    if len(blob) != declared:
        raise CheckpointError(
            f"{path}: truncated blob: expected {declared} bytes, found {len(blob)}"
        )
    if declared != manifest.get("blob_nbytes"):
        raise CheckpointError(f"{path}: manifest/blob size disagree")
    bb = manifest["backbone"]
    spec = BackboneSpec(
        kind=bb["kind"],
        widths=tuple(bb["widths"]),
        in_channels=bb["in_channels"],
        output_stride=bb["output_stride"] if bb["kind"] == "external" else 0,
    )
    params = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * 8 if shape else 8
        start = entry["offset"]
        if start + nbytes > len(blob):
            raise CheckpointError(
                f"{path}: parameter {entry['name']} extends past blob end "
                f"(offset {start} + {nbytes} > {len(blob)})"
            )
        params[entry["name"]] = np.frombuffer(
            blob, dtype="<f8", count=int(np.prod(shape)), offset=start
        ).reshape(shape).copy()
    return spec, int(manifest["num_classes"]), params


def load_model(path) -> Classifier:
    """Construct a Classifier directly from a checkpoint file."""
    spec, num_classes, params = read_checkpoint(path)
    model = Classifier(spec, num_classes)
    for name, value in params.items():
        if name not in model._params:
            raise CheckpointError(f"{path}: unexpected parameter {name!r}")
        if model._params[name].data.shape != value.shape:
            raise CheckpointError(
                f"{path}: parameter {name!r} has shape {value.shape}, "
                f"expected {model._params[name].data.shape}"
            )
        model._params[name].data[...] = value
    return model
