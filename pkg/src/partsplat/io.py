"""File formats: PLY scenes, camera JSON, PNG images, palettes, latents, TOML."""

import json
import struct
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .scene import Camera, GaussianScene, LabelPalette
from .sh import degree_from_num_coeffs

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w


class FormatError(ValueError):
    """A file could not be parsed; the message names the property or byte offset."""


# ---------------------------------------------------------------- PLY

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}
_PLY_NAMES = {"i1": "char", "u1": "uchar", "i2": "short", "u2": "ushort", "i4": "int",
              "u4": "uint", "f4": "float", "f8": "double"}


def _sh_names(prefix_dc, prefix_rest, k):
    return [f"{prefix_dc}_{c}" for c in range(3)] + [f"{prefix_rest}_{i}" for i in range(3 * (k - 1))]


def _pack_sh(sh):
    """(N, K, 3) -> (N, 3K) columns: DC per channel, then rest channel-major."""
    n, k, _ = sh.shape
    rest = sh[:, 1:, :].transpose(0, 2, 1).reshape(n, 3 * (k - 1))
    return np.concatenate([sh[:, 0, :], rest], axis=1)


def _unpack_sh(dc, rest):
    n = dc.shape[0]
    k = rest.shape[1] // 3 + 1
    out = np.empty((n, k, 3), dtype=dc.dtype)
    out[:, 0, :] = dc
    out[:, 1:, :] = rest.reshape(n, 3, k - 1).transpose(0, 2, 1)
    return out


def _scene_columns(scene):
    ftype = "f4" if scene.positions.dtype == np.float32 else "f8"
    cols = []
    names = ["x", "y", "z"]
    cols += list(scene.positions.T)
    packed = _pack_sh(scene.color_sh)
    names += _sh_names("f_dc", "f_rest", scene.color_sh.shape[1])
    cols += list(packed.T)
    names.append("opacity")
    cols.append(scene.opacities)
    names += [f"scale_{i}" for i in range(3)]
    cols += list(scene.scales.T)
    names += [f"rot_{i}" for i in range(4)]
    cols += list(scene.rotations.T)
    names += _sh_names("label_dc", "label_rest", scene.label_sh.shape[1])
    cols += list(_pack_sh(scene.label_sh).T)
    fields = [(nm, ftype) for nm in names]
    arrays = cols
    if scene.gt_part is not None:
        fields.append(("gt_part", "i4"))
        arrays.append(np.asarray(scene.gt_part).astype("<i4"))
    for name, value in scene.extras.items():
        value = np.asarray(value)
        fields.append((name, value.dtype.newbyteorder("<").str[1:]))
        arrays.append(value)
    return fields, arrays


def save_ply(scene, path):
    """Write a binary little-endian PLY. float64 scenes are stored as ``double``."""
    fields, arrays = _scene_columns(scene)
    dtype = np.dtype([(nm, "<" + t) for nm, t in fields])
    data = np.empty(len(scene), dtype=dtype)
    for (nm, _), a in zip(fields, arrays):
        data[nm] = a
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(scene)}"]
    header += [f"property {_PLY_NAMES[t]} {nm}" for nm, t in fields]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(data.tobytes())


def _parse_header(raw):
    end = raw.find(b"end_header")
    if not raw.startswith(b"ply") or end < 0:
        raise FormatError("malformed PLY header at byte offset 0: missing 'ply' magic or end_header")
    nl = raw.find(b"\n", end)
    if nl < 0:
        raise FormatError(f"malformed PLY header at byte offset {end}: no newline after end_header")
    elements = []
    offset = 0
    fmt = None
    for line in raw[:nl + 1].split(b"\n"):
        start = offset
        offset += len(line) + 1
        tok = line.decode("ascii", "replace").strip().split()
        if not tok or tok[0] in ("ply", "comment", "obj_info", "end_header"):
            continue
        if tok[0] == "format":
            fmt = tok[1] if len(tok) > 1 else None
        elif tok[0] == "element" and len(tok) == 3 and tok[2].isdigit():
            elements.append([tok[1], int(tok[2]), []])
        elif tok[0] == "property" and len(tok) == 3 and elements and tok[1] in _PLY_TYPES:
            elements[-1][2].append((tok[2], _PLY_TYPES[tok[1]]))
        elif tok[0] == "property" and len(tok) >= 2 and tok[1] == "list":
            raise FormatError(f"unsupported list property at byte offset {start}")
        else:
            raise FormatError(f"malformed PLY header at byte offset {start}: {line!r}")
    if fmt != "binary_little_endian":
        raise FormatError(f"unsupported PLY format {fmt!r}; binary_little_endian required")
    return elements, nl + 1


def load_ply(path):
    raw = Path(path).read_bytes()
    elements, body = _parse_header(raw)
    vertex = None
    offset = body
    for name, count, props in elements:
        dtype = np.dtype([(nm, "<" + t) for nm, t in props])
        need = dtype.itemsize * count
        if len(raw) - offset < need:
            raise FormatError(f"truncated PLY: element {name!r} needs {need} bytes at byte offset "
                              f"{offset}, file has {len(raw) - offset}")
        if name == "vertex":
            vertex = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
        offset += need
    if vertex is None:
        raise FormatError("PLY has no vertex element")
    names = list(vertex.dtype.names)

    def col(nm):
        if nm not in names:
            raise FormatError(f"missing mandatory property {nm!r}")
        return vertex[nm].copy()

    def stack(nms):
        return np.stack([col(nm) for nm in nms], axis=1) if nms else np.zeros((len(vertex), 0))

    def sh_block(dc, rest, mandatory):
        n_rest = sum(1 for nm in names if nm.startswith(rest + "_"))
        if not mandatory and n_rest == 0 and f"{dc}_0" not in names:
            return None
        if n_rest % 3:
            raise FormatError(f"{rest} count {n_rest} is not a multiple of 3")
        k = n_rest // 3 + 1
        try:
            degree_from_num_coeffs(k)
        except ValueError:
            raise FormatError(f"{rest} count {n_rest} does not match any SH degree") from None
        return _unpack_sh(stack([f"{dc}_{c}" for c in range(3)]),
                          stack([f"{rest}_{i}" for i in range(n_rest)]))

    positions = stack(["x", "y", "z"])
    color = sh_block("f_dc", "f_rest", True)
    opac = col("opacity")
    scales = stack([f"scale_{i}" for i in range(3)])
    rots = stack([f"rot_{i}" for i in range(4)])
    label = sh_block("label_dc", "label_rest", False)
    if label is None:
        label = np.zeros_like(color)
    used = {"x", "y", "z", "opacity", "gt_part"}
    used |= {nm for nm in names if nm.startswith(("f_dc_", "f_rest_", "label_dc_", "label_rest_",
                                                  "scale_", "rot_"))}
    extras = {nm: vertex[nm].copy() for nm in names if nm not in used}
    gt = vertex["gt_part"].astype(np.int64) if "gt_part" in names else None
    return GaussianScene(positions, scales, rots, opac, color, label, gt_part=gt, extras=extras)


# ---------------------------------------------------------------- cameras

def camera_to_json(cam):
    return {"width": cam.width, "height": cam.height, "fx": cam.fx, "fy": cam.fy,
            "cx": cam.cx, "cy": cam.cy, "near": cam.near, "far": cam.far,
            "world_to_camera": cam.world_to_camera.tolist()}


def save_cameras(cameras, path):
    Path(path).write_text(json.dumps([camera_to_json(c) for c in cameras], indent=1))


def _orthonormalize(R):
    u, _, vt = np.linalg.svd(R)
    out = u @ vt
    if np.linalg.det(out) < 0:
        raise FormatError("camera rotation is a reflection")
    return out


def camera_from_json(entry):
    try:
        m = np.asarray(entry["world_to_camera"], dtype=np.float64)
        keys = {k: entry[k] for k in ("width", "height", "fx", "fy", "cx", "cy")}
    except KeyError as e:
        raise FormatError(f"camera entry missing {e.args[0]!r}") from None
    except (TypeError, ValueError) as e:
        raise FormatError(f"camera world_to_camera is not numeric: {e}") from None
    if m.shape != (4, 4):
        raise FormatError(f"world_to_camera must be 4x4, got {m.shape}")
    if abs(np.linalg.det(m)) < 1e-12:
        raise FormatError("world_to_camera is not invertible")
    R = m[:3, :3]
    if np.abs(R @ R.T - np.eye(3)).max() > 1e-3:
        raise FormatError("camera rotation is not orthonormal within 1e-3")
    m = m.copy()
    m[:3, :3] = _orthonormalize(R)
    m[3] = (0.0, 0.0, 0.0, 1.0)
    extra = {k: entry[k] for k in ("near", "far") if k in entry}
    try:
        return Camera(int(keys["width"]), int(keys["height"]), float(keys["fx"]), float(keys["fy"]),
                      float(keys["cx"]), float(keys["cy"]), m, **extra)
    except ValueError as e:
        raise FormatError(f"invalid camera: {e}") from None


def load_cameras(path):
    data = json.loads(Path(path).read_text())
    if not isinstance(data, list):
        raise FormatError("camera file must hold a JSON array")
    return [camera_from_json(e) for e in data]


# ---------------------------------------------------------------- images

def to_uint8(image):
    """Float image in [0, 1] to 8-bit with round-half-to-even (``np.rint``)."""
    return np.rint(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(image, path):
    a = to_uint8(image)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[..., 0]
    Image.fromarray(a).save(path)


def load_png(path):
    with Image.open(path) as im:
        a = np.asarray(im.convert("L") if im.mode in ("L", "I", "I;16", "1") else im.convert("RGB"))
    return a.astype(np.float64) / 255.0


def save_palette(palette, path):
    Path(path).write_text(json.dumps(palette.to_json(), indent=1))


def load_palette(path):
    return LabelPalette.from_json(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------- latents

LATENT_MAGIC = b"LTNT"


def save_latent(field, path, t=None):
    """Flat float32 tensor behind a 16-byte header; timestep goes to a ``.json`` sidecar."""
    grid = np.asarray(getattr(field, "grid", field))
    if grid.ndim == 2:
        grid = grid[..., None]
    h, w, c = grid.shape
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(LATENT_MAGIC + struct.pack("<III", h, w, c))
        fh.write(grid.astype("<f4").tobytes())
    t = getattr(field, "t", 0.0) if t is None else t
    path.with_suffix(".json").write_text(json.dumps({"t": float(t), "dtype": "float32", "shape": [h, w, c]}))


def load_latent(path):
    """Returns ``(grid, t)``; ``t`` is None when the sidecar is absent."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:4] != LATENT_MAGIC:
        raise FormatError("bad latent header at byte offset 0")
    h, w, c = struct.unpack("<III", raw[4:16])
    need = 4 * h * w * c
    if len(raw) - 16 != need:
        raise FormatError(f"latent body at byte offset 16 holds {len(raw) - 16} bytes, expected {need}")
    grid = np.frombuffer(raw, dtype="<f4", offset=16).reshape(h, w, c).astype(np.float64)
    side = path.with_suffix(".json")
    t = json.loads(side.read_text())["t"] if side.exists() else None
    return grid, t


# ---------------------------------------------------------------- TOML

def load_toml(path):
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def dump_toml(data, path=None):
    text = tomli_w.dumps(data)
    if path is not None:
        Path(path).write_text(text)
    return text


def loads_toml(text):
    return tomllib.loads(text)
