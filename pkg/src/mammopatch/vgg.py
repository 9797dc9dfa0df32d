"""Forward-only VGG19-style network with two feature taps.

Sixteen 3x3 convolution layers in five pooled blocks, then three fully
connected layers. Inputs are 224x224x3, channel-last. Two taps are exposed:
"flatten" is the 25088-wide vector after the last pooling stage, "fc2" is
the 4096-wide output of the second fully connected layer after ReLU. The
third fully connected layer exists in the weight set but is never evaluated.

Weights live in float32 and the forward pass runs in float32; on the target
hardware that is what keeps batch feature extraction inside its time budget.
"""

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, ShapeError, WeightFormatError
from .patches import LABEL_MASS, normalize_patch

INPUT_SIZE = 224
FLATTEN_WIDTH = 7 * 7 * 512  # 25088
FC_WIDTH = 4096
CLASS_WIDTH = 1000

#: Convolution plan: (layer name, output channels), with "pool" markers for
#: the 2x2 stride-2 max pooling stages between blocks.
CONV_PLAN = (
    ("conv1_1", 64), ("conv1_2", 64), "pool",
    ("conv2_1", 128), ("conv2_2", 128), "pool",
    ("conv3_1", 256), ("conv3_2", 256), ("conv3_3", 256), ("conv3_4", 256), "pool",
    ("conv4_1", 512), ("conv4_2", 512), ("conv4_3", 512), ("conv4_4", 512), "pool",
    ("conv5_1", 512), ("conv5_2", 512), ("conv5_3", 512), ("conv5_4", 512), "pool",
)

VALID_TAPS = ("fc2", "flatten")


@dataclass(frozen=True)
class LayerSpec:
    """One step of the forward plan."""

    kind: str  # conv3x3 | relu | maxpool2x2 | flatten | fully_connected
    name: str = None  # weight tensor base name for conv3x3 / fully_connected
    in_channels: int = None
    out_channels: int = None


def architecture():
    """The full ordered layer list: 16 convolutions in five pooled blocks,
    flatten, then the three fully connected layers (ReLU after every conv
    and after FC1/FC2)."""
    layers = []
    prev = 3
    for entry in CONV_PLAN:
        if entry == "pool":
            layers.append(LayerSpec("maxpool2x2"))
            continue
        name, out = entry
        layers.append(LayerSpec("conv3x3", name, prev, out))
        layers.append(LayerSpec("relu"))
        prev = out
    layers.append(LayerSpec("flatten"))
    layers.append(LayerSpec("fully_connected", "fc1", FLATTEN_WIDTH, FC_WIDTH))
    layers.append(LayerSpec("relu"))
    layers.append(LayerSpec("fully_connected", "fc2", FC_WIDTH, FC_WIDTH))
    layers.append(LayerSpec("relu"))
    layers.append(LayerSpec("fully_connected", "fc3", FC_WIDTH, CLASS_WIDTH))
    return tuple(layers)


def expected_shapes():
    """Tensor name -> shape for the full weight set, in canonical order.

    Convolution kernels are (3, 3, in_channels, out_channels); fully
    connected weights are (in_width, out_width); biases are 1-D.
    """
    shapes = {}
    prev = 3
    for entry in CONV_PLAN:
        if entry == "pool":
            continue
        name, out = entry
        shapes[name + "_w"] = (3, 3, prev, out)
        shapes[name + "_b"] = (out,)
        prev = out
    for name, nin, nout in (
        ("fc1", FLATTEN_WIDTH, FC_WIDTH),
        ("fc2", FC_WIDTH, FC_WIDTH),
        ("fc3", FC_WIDTH, CLASS_WIDTH),
    ):
        shapes[name + "_w"] = (nin, nout)
        shapes[name + "_b"] = (nout,)
    return shapes


WEIGHT_NAMES = tuple(expected_shapes().keys())


@dataclass
class Network:
    """A full weight set keyed by tensor name."""

    weights: dict = field(repr=False)

    def __post_init__(self):
        shapes = expected_shapes()
        for name, shape in shapes.items():
            if name not in self.weights:
                raise WeightFormatError(f"missing tensor {name}")
            arr = self.weights[name]
            if tuple(arr.shape) != shape:
                raise WeightFormatError(
                    f"tensor {name}: expected shape {shape}, got {tuple(arr.shape)}"
                )
            if arr.dtype != np.float32:
                self.weights[name] = arr.astype(np.float32)
        extra = set(self.weights) - set(shapes)
        if extra:
            raise WeightFormatError(f"unexpected tensor {sorted(extra)[0]}")

    def checksum(self) -> int:
        """CRC-32 over every tensor's bytes in canonical name order."""
        crc = 0
        for name in WEIGHT_NAMES:
            crc = zlib.crc32(np.ascontiguousarray(self.weights[name]).tobytes(), crc)
        return crc


def seeded_random_network(seed: int) -> Network:
    """Deterministic random weight set, uniform on [-0.05, 0.05].

    Draws come from numpy's default PCG64 generator in float32, so the same
    seed reproduces bit-identical weights across runs and platforms.
    """
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in expected_shapes().items():
        arr = rng.random(shape, dtype=np.float32)
        arr *= np.float32(0.1)
        arr -= np.float32(0.05)
        weights[name] = arr
    return Network(weights)


# ---------------------------------------------------------------------------
# weight file format
# ---------------------------------------------------------------------------

VGGW_MAGIC = b"VGGW"
VGGW_VERSION = 1


def save_network(net: Network, path):
    """Serialize a weight set: magic, version, tensor count, then per tensor
    a u16 name length, utf-8 name, u8 ndim, u32 dims, and float32 data."""
    with open(path, "wb") as fh:
        fh.write(VGGW_MAGIC)
        fh.write(struct.pack("<II", VGGW_VERSION, len(WEIGHT_NAMES)))
        for name in WEIGHT_NAMES:
            arr = np.ascontiguousarray(net.weights[name], dtype="<f4")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_network(path) -> Network:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != VGGW_MAGIC:
        raise WeightFormatError(f"{path}: not a weight file")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VGGW_VERSION:
        raise WeightFormatError(f"{path}: unsupported version {version}")
    off = 12
    weights = {}
    name = "<header>"
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off : off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<B", data, off)
            off += 1
            dims = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            size = int(np.prod(dims, dtype=np.int64)) if ndim else 1
            nbytes = 4 * size
            if off + nbytes > len(data):
                raise WeightFormatError(f"{path}: tensor {name} is truncated")
            arr = np.frombuffer(data[off : off + nbytes], dtype="<f4").reshape(dims)
            off += nbytes
            weights[name] = arr.copy()
    except struct.error as exc:
        raise WeightFormatError(f"{path}: tensor {name} is truncated") from exc
    return Network(weights)


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------


def resize_bilinear(img: np.ndarray, out_rows: int, out_cols: int) -> np.ndarray:
    """Bilinear resampling with half-pixel sample centers and edge clamping."""
    img = np.asarray(img, dtype=np.float64)
    in_rows, in_cols = img.shape
    r = (np.arange(out_rows) + 0.5) * (in_rows / out_rows) - 0.5
    c = (np.arange(out_cols) + 0.5) * (in_cols / out_cols) - 0.5
    r0 = np.floor(r).astype(np.int64)
    c0 = np.floor(c).astype(np.int64)
    fr = (r - r0)[:, None]
    fc = (c - c0)[None, :]
    r0c = np.clip(r0, 0, in_rows - 1)
    r1c = np.clip(r0 + 1, 0, in_rows - 1)
    c0c = np.clip(c0, 0, in_cols - 1)
    c1c = np.clip(c0 + 1, 0, in_cols - 1)
    top = img[np.ix_(r0c, c0c)] * (1.0 - fc) + img[np.ix_(r0c, c1c)] * fc
    bot = img[np.ix_(r1c, c0c)] * (1.0 - fc) + img[np.ix_(r1c, c1c)] * fc
    return top * (1.0 - fr) + bot * fr


def prepare_input(patch: np.ndarray) -> np.ndarray:
    """Turn a 2-D patch into the 224x224x3 float32 network input.

    The single gray channel is resized bilinearly and replicated across the
    three input channels.
    """
    patch = np.asarray(patch)
    if patch.ndim != 2 or patch.size == 0:
        raise ShapeError(f"network input must be a non-empty 2-D patch, got shape {patch.shape}")
    if patch.shape[0] != patch.shape[1]:
        raise ShapeError(f"network input must be square, got shape {patch.shape}")
    if patch.shape != (INPUT_SIZE, INPUT_SIZE):
        patch = resize_bilinear(patch, INPUT_SIZE, INPUT_SIZE)
    chan = patch.astype(np.float32)
    return np.repeat(chan[:, :, None], 3, axis=2)


def conv3x3_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-size 3x3 cross-correlation with unit stride and 1-pixel zero pad.

    Lowered to a single matrix product: the padded input is viewed as
    (rows, cols, 3, 3, in_ch) windows and flattened against the kernel
    reshaped to (9 * in_ch, out_ch).
    """
    x = np.asarray(x)
    kernel = np.asarray(kernel)
    if x.ndim != 3:
        raise ShapeError(f"convolution input must be 3-D, got shape {x.shape}")
    if kernel.ndim != 4 or kernel.shape[:2] != (3, 3):
        raise ShapeError(f"kernel must be (3, 3, in, out), got shape {kernel.shape}")
    if kernel.shape[2] != x.shape[2]:
        raise ShapeError(
            f"kernel expects {kernel.shape[2]} input channels, input has {x.shape[2]}"
        )
    rows, cols, cin = x.shape
    cout = kernel.shape[3]
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (3, 3), axis=(0, 1))
    colmat = win.transpose(0, 1, 3, 4, 2).reshape(rows * cols, 9 * cin)
    out = colmat @ kernel.reshape(9 * cin, cout)
    out += bias
    return out.reshape(rows, cols, cout)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, np.float32(0.0), out=x)


def maxpool2x2(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeError(f"pooling input must be 3-D, got shape {x.shape}")
    rows, cols, ch = x.shape
    if rows % 2 or cols % 2:
        raise ShapeError(f"pooling needs even spatial extents, got {rows}x{cols}")
    return x.reshape(rows // 2, 2, cols // 2, 2, ch).max(axis=(1, 3))


def forward_with_tap(net: Network, image: np.ndarray, tap: str) -> np.ndarray:
    """Run the convolutional stack and return the requested feature vector.

    ``tap="flatten"`` stops after the last pooling stage (25088 values);
    ``tap="fc2"`` continues through the first two fully connected layers,
    each followed by ReLU (4096 values). The classifier layer is skipped.
    """
    if tap not in VALID_TAPS:
        raise ValueError(f"unknown tap {tap!r}, expected one of {VALID_TAPS}")
    x = np.asarray(image, dtype=np.float32)
    if x.shape != (INPUT_SIZE, INPUT_SIZE, 3):
        raise ShapeError(
            f"expected input of shape (224, 224, 3), got {tuple(x.shape)}"
        )
    w = net.weights
    for entry in CONV_PLAN:
        if entry == "pool":
            x = maxpool2x2(x)
        else:
            name = entry[0]
            x = relu(conv3x3_forward(x, w[name + "_w"], w[name + "_b"]))
    flat = np.ascontiguousarray(x).reshape(-1)
    if tap == "flatten":
        return flat
    h = relu(flat @ w["fc1_w"] + w["fc1_b"])
    h = relu(h @ w["fc2_w"] + w["fc2_b"])
    return h


def tap_width(tap: str) -> int:
    if tap == "flatten":
        return FLATTEN_WIDTH
    if tap == "fc2":
        return FC_WIDTH
    raise ValueError(f"unknown tap {tap!r}, expected one of {VALID_TAPS}")


# ---------------------------------------------------------------------------
# feature matrices
# ---------------------------------------------------------------------------


@dataclass
class FeatureMatrix:
    """Feature rows plus the per-row patch metadata needed downstream."""

    features: np.ndarray  # (n, d) float32
    labels: list
    source_ids: list
    origin_rows: list
    origin_cols: list
    augments: list

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        if self.features.ndim != 2:
            raise ShapeError(f"feature matrix must be 2-D, got {self.features.shape}")
        n = self.features.shape[0]
        for attr in ("labels", "source_ids", "origin_rows", "origin_cols", "augments"):
            if len(getattr(self, attr)) != n:
                raise ShapeError(f"{attr} has {len(getattr(self, attr))} entries for {n} rows")

    def __len__(self):
        return self.features.shape[0]

    def key(self, i):
        """Identity of the source patch this row was derived from."""
        return (self.source_ids[i], self.origin_rows[i], self.origin_cols[i])

    def y(self) -> np.ndarray:
        """Labels as +1 (mass) / -1 (non-mass) float64."""
        return np.where(np.asarray(self.labels) == LABEL_MASS, 1.0, -1.0)

    def subset(self, idx) -> "FeatureMatrix":
        idx = np.asarray(idx)
        take = lambda seq: [seq[i] for i in idx]
        return FeatureMatrix(
            self.features[idx],
            take(self.labels),
            take(self.source_ids),
            take(self.origin_rows),
            take(self.origin_cols),
            take(self.augments),
        )


def extract_features(patches, net: Network, tap: str, progress=None) -> FeatureMatrix:
    """Forward every patch through the network at the given tap.

    Each patch is normalized to zero mean and unit variance before entering
    the network. ``progress`` may be a callable taking (done, total).
    """
    n = len(patches)
    out = np.empty((n, tap_width(tap)), dtype=np.float32)
    labels, sources, orows, ocols, augs = [], [], [], [], []
    for i, p in enumerate(patches):
        x = prepare_input(normalize_patch(p.pixels))
        out[i] = forward_with_tap(net, x, tap)
        labels.append(p.label)
        sources.append(p.source_id)
        orows.append(p.origin_row)
        ocols.append(p.origin_col)
        augs.append(p.augment)
        if progress is not None:
            progress(i + 1, n)
    return FeatureMatrix(out, labels, sources, orows, ocols, augs)


FMAT_MAGIC = b"FMAT"
META_FIELDS = ["label", "source_id", "origin_row", "origin_col", "augment"]


def write_fmat(path, arr: np.ndarray):
    """Raw float32 matrix: magic, u32 rows, u32 cols, row-major data."""
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if arr.ndim != 2:
        raise ShapeError(f"feature file holds a 2-D matrix, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(FMAT_MAGIC)
        fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())


def read_fmat(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != FMAT_MAGIC:
        raise DataError(f"{path}: not a feature matrix file")
    rows, cols = struct.unpack_from("<II", data, 4)
    body = data[12:]
    if len(body) != rows * cols * 4:
        raise DataError(f"{path}: expected {rows * cols * 4} data bytes, got {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(rows, cols).copy()


def write_feature_matrix(fm: FeatureMatrix, fmat_path, meta_path):
    """Write features to a raw matrix file and row metadata to a CSV."""
    import csv

    write_fmat(fmat_path, fm.features)
    with open(meta_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(META_FIELDS)
        for i in range(len(fm)):
            writer.writerow(
                [fm.labels[i], fm.source_ids[i], fm.origin_rows[i], fm.origin_cols[i], fm.augments[i]]
            )


def read_feature_meta(meta_path):
    """Row metadata columns as parallel lists, without touching the matrix."""
    import csv

    labels, sources, orows, ocols, augs = [], [], [], [], []
    with open(meta_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != META_FIELDS:
            raise DataError(f"{meta_path}: unexpected columns {reader.fieldnames}")
        for row in reader:
            labels.append(row["label"])
            sources.append(row["source_id"])
            orows.append(int(row["origin_row"]))
            ocols.append(int(row["origin_col"]))
            augs.append(row["augment"])
    return labels, sources, orows, ocols, augs


def read_feature_matrix(fmat_path, meta_path) -> FeatureMatrix:
    features = read_fmat(fmat_path)
    labels, sources, orows, ocols, augs = read_feature_meta(meta_path)
    if len(labels) != features.shape[0]:
        raise DataError(
            f"{meta_path}: {len(labels)} metadata rows for {features.shape[0]} feature rows"
        )
    return FeatureMatrix(features, labels, sources, orows, ocols, augs)
