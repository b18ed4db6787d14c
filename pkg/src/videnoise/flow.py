"""Optical flow estimation, warping and motion compensation.

Flow convention: a FlowField is an (H, W, 2) float32 array where
``flow[y, x, 0]`` is the horizontal (u) and ``flow[y, x, 1]`` the vertical (v)
displacement in pixels such that ``reference(p) ~= moving(p + flow(p))``.
Warping with that field pulls the moving frame onto the reference grid.

High-accuracy flow algorithms are treated as external components behind the
FlowBackend interface. Built-ins:

* ``identity`` — all-zero flow (ablation / tests),
* ``block`` — coarse-to-fine block matching with parabolic sub-pixel
  refinement (the default baseline),
* :func:`command_backend` — adapter that shells out to an external tool
  exchanging PNG frames and Middlebury ``.flo`` files.
"""

import os
import struct
import subprocess
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DimensionError
from .validation import as_frame, check_same_shape

FLO_MAGIC = 202021.25

_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)


@dataclass
class FlowBackend:
    """Named flow estimator: callable (reference, moving) -> FlowField."""

    name: str
    estimator: object

    def __call__(self, reference, moving):
        flow = np.asarray(self.estimator(reference, moving), dtype=np.float32)
        if flow.shape != reference.shape[:2] + (2,):
            raise DimensionError(
                f"backend {self.name!r} returned flow shape {flow.shape}, "
                f"expected {reference.shape[:2] + (2,)}"
            )
        return flow


def _bilinear_gather(channel, ys, xs):
    """Sample a 2-d array at real-valued coordinates with edge clamp."""
    h, w = channel.shape
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).astype(channel.dtype)
    wx = (xs - x0).astype(channel.dtype)
    top = channel[y0, x0] * (1 - wx) + channel[y0, x1] * wx
    bot = channel[y1, x0] * (1 - wx) + channel[y1, x1] * wx
    return top * (1 - wy) + bot * wy


def warp(frame, flow):
    """Sample `frame` at p + flow(p) with bilinear interpolation, edge clamp.

    Works on HxWx3 frames and on 2-d arrays (used internally by the matcher).
    Zero flow returns the input bit-exactly.
    """
    frame = np.asarray(frame, dtype=np.float32)
    flow = np.asarray(flow, dtype=np.float32)
    if flow.shape != frame.shape[:2] + (2,):
        raise DimensionError(
            f"flow shape {flow.shape} does not match frame shape {frame.shape}"
        )
    if not flow.any():
        return frame.copy()
    h, w = frame.shape[:2]
    grid_y, grid_x = np.mgrid[0:h, 0:w].astype(np.float32)
    ys = grid_y + flow[..., 1]
    xs = grid_x + flow[..., 0]
    if frame.ndim == 2:
        return _bilinear_gather(frame, ys, xs)
    out = np.empty_like(frame)
    for c in range(frame.shape[2]):
        out[..., c] = _bilinear_gather(frame[..., c], ys, xs)
    return out


def _to_luma(frame):
    frame = np.asarray(frame, dtype=np.float32)
    if frame.ndim == 2:
        return frame
    return frame @ _LUMA


def _downsample2(img):
    """2x2 box average, odd trailing row/col dropped."""
    h, w = img.shape
    img = img[: h - h % 2, : w - w % 2]
    return img.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def _block_sums(values, block):
    """Sum over non-overlapping block x block tiles (input padded to multiples)."""
    h, w = values.shape
    bh, bw = h // block, w // block
    return values.reshape(bh, block, bw, block).sum(axis=(1, 3))


def _pad_to_multiple(img, block):
    h, w = img.shape
    ph = (-h) % block
    pw = (-w) % block
    if ph or pw:
        img = np.pad(img, ((0, ph), (0, pw)), mode="edge")
    return img


def _match_blocks(ref, mov, init_dy, init_dx, radius, block):
    """Best residual integer displacement per block around a per-block initial
    estimate, matching directly against the unwarped moving image.

    Ties are broken toward the smallest residual so untextured regions keep
    their initial (ultimately zero) displacement. Returns total displacements
    and the residual SSD cost cube for sub-pixel refinement.
    """
    refp = _pad_to_multiple(ref, block)
    movp = _pad_to_multiple(mov, block)
    hp, wp = refp.shape
    bh, bw = hp // block, wp // block
    side = 2 * radius + 1
    yy, xx = np.mgrid[0:hp, 0:wp]
    base_y = yy + np.repeat(np.repeat(init_dy, block, 0), block, 1)[:hp, :wp]
    base_x = xx + np.repeat(np.repeat(init_dx, block, 0), block, 1)[:hp, :wp]
    costs = np.empty((side, side, bh, bw), dtype=np.float64)
    for dy in range(-radius, radius + 1):
        rows = np.clip(base_y + dy, 0, hp - 1)
        for dx in range(-radius, radius + 1):
            cols = np.clip(base_x + dx, 0, wp - 1)
            shifted = movp[rows, cols]
            costs[dy + radius, dx + radius] = _block_sums(
                (refp - shifted) ** 2, block
            )
    # candidates ordered by |d| so strict improvement keeps the smallest shift
    order = sorted(
        ((dy, dx) for dy in range(-radius, radius + 1)
         for dx in range(-radius, radius + 1)),
        key=lambda d: (d[0] * d[0] + d[1] * d[1], abs(d[0]), abs(d[1])),
    )
    best_cost = np.full((bh, bw), np.inf)
    best_dy = np.zeros((bh, bw), dtype=np.int64)
    best_dx = np.zeros((bh, bw), dtype=np.int64)
    for dy, dx in order:
        c = costs[dy + radius, dx + radius]
        better = c < best_cost
        best_cost = np.where(better, c, best_cost)
        best_dy = np.where(better, dy, best_dy)
        best_dx = np.where(better, dx, best_dx)
    return best_dy, best_dx, costs


def _parabolic_offset(c_minus, c_zero, c_plus):
    denom = c_minus - 2.0 * c_zero + c_plus
    with np.errstate(divide="ignore", invalid="ignore"):
        off = 0.5 * (c_minus - c_plus) / denom
    # an exactly-zero cost means a perfect integer match; the parabola vertex
    # would otherwise drift toward the cheaper neighbor
    valid = (np.abs(denom) > 1e-12) & (c_zero > 1e-12)
    off = np.where(valid, off, 0.0)
    return np.clip(off, -0.5, 0.5)


def _subpixel(best_dy, best_dx, costs, radius):
    """Per-axis parabolic refinement around the best integer displacement."""
    side = 2 * radius + 1
    bh, bw = best_dy.shape
    iy = best_dy + radius
    ix = best_dx + radius
    bi, bj = np.mgrid[0:bh, 0:bw]
    off_y = np.zeros((bh, bw))
    off_x = np.zeros((bh, bw))
    interior_y = (iy > 0) & (iy < side - 1)
    interior_x = (ix > 0) & (ix < side - 1)
    if interior_y.any():
        cm = costs[np.maximum(iy - 1, 0), ix, bi, bj]
        c0 = costs[iy, ix, bi, bj]
        cp = costs[np.minimum(iy + 1, side - 1), ix, bi, bj]
        off_y = np.where(interior_y, _parabolic_offset(cm, c0, cp), 0.0)
    if interior_x.any():
        cm = costs[iy, np.maximum(ix - 1, 0), bi, bj]
        c0 = costs[iy, ix, bi, bj]
        cp = costs[iy, np.minimum(ix + 1, side - 1), bi, bj]
        off_x = np.where(interior_x, _parabolic_offset(cm, c0, cp), 0.0)
    return best_dy + off_y, best_dx + off_x


def _median3(field):
    """3x3 median filter on the block grid; suppresses isolated mismatches."""
    if field.shape[0] < 3 or field.shape[1] < 3:
        return field
    padded = np.pad(field, 1, mode="edge")
    stack = [
        padded[dy:dy + field.shape[0], dx:dx + field.shape[1]]
        for dy in range(3) for dx in range(3)
    ]
    return np.median(np.stack(stack), axis=0)


def _expand_blocks(field, block, h, w):
    """Nearest-neighbor expansion of per-block values to the pixel grid."""
    up = np.repeat(np.repeat(field, block, axis=0), block, axis=1)
    return up[:h, :w]


def _block_grid_shape(shape, block):
    return (-(-shape[0] // block), -(-shape[1] // block))


def _upsample_block_grid(field, target):
    """Double a per-block field onto the next-finer block grid (values x2)."""
    up = np.repeat(np.repeat(field, 2, axis=0), 2, axis=1) * 2
    up = up[: target[0], : target[1]]
    if up.shape != target:
        up = np.pad(up, ((0, target[0] - up.shape[0]),
                         (0, target[1] - up.shape[1])), mode="edge")
    return up


def block_matching_flow(reference, moving, block_size=8, search_radius=4,
                        levels=3):
    """Coarse-to-fine block-matching flow with sub-pixel refinement.

    Each pyramid level does an exhaustive +-search_radius integer SSD search
    per block around the (per-block) estimate inherited from the coarser
    level, always matching against the unwarped moving image so exact matches
    have exactly zero cost. The finest level adds parabolic sub-pixel
    refinement; a 3x3 median on the block grid suppresses isolated
    mismatches. Untextured regions fall back to zero displacement (ties are
    broken toward the smallest shift).
    """
    ref = _to_luma(reference)
    mov = _to_luma(moving)
    check_same_shape(ref, mov, names=("reference", "moving"))
    pyr_ref = [ref]
    pyr_mov = [mov]
    for _ in range(levels - 1):
        if min(pyr_ref[-1].shape) < 2 * block_size:
            break
        pyr_ref.append(_downsample2(pyr_ref[-1]))
        pyr_mov.append(_downsample2(pyr_mov[-1]))
    init_dy = init_dx = np.zeros(_block_grid_shape(pyr_ref[-1].shape, block_size),
                                 dtype=np.int64)
    fdy = fdx = None
    for level in range(len(pyr_ref) - 1, -1, -1):
        r, m = pyr_ref[level], pyr_mov[level]
        res_dy, res_dx, costs = _match_blocks(r, m, init_dy, init_dx,
                                              search_radius, block_size)
        fdy = init_dy + res_dy
        fdx = init_dx + res_dx
        if level == 0:
            sub_dy, sub_dx = _subpixel(res_dy, res_dx, costs, search_radius)
            fdy = init_dy + sub_dy
            fdx = init_dx + sub_dx
        fdy = _median3(fdy)
        fdx = _median3(fdx)
        if level > 0:
            target = _block_grid_shape(pyr_ref[level - 1].shape, block_size)
            init_dy = np.rint(_upsample_block_grid(fdy, target)).astype(np.int64)
            init_dx = np.rint(_upsample_block_grid(fdx, target)).astype(np.int64)
    h, w = ref.shape
    return np.stack(
        [_expand_blocks(fdx, block_size, h, w),
         _expand_blocks(fdy, block_size, h, w)], axis=-1
    ).astype(np.float32)


def _identity_flow(reference, moving):
    return np.zeros(reference.shape[:2] + (2,), dtype=np.float32)


_BACKENDS = {}


def register_backend(backend):
    _BACKENDS[backend.name] = backend
    return backend


def get_backend(name_or_backend):
    if isinstance(name_or_backend, FlowBackend):
        return name_or_backend
    if callable(name_or_backend):
        return FlowBackend(getattr(name_or_backend, "__name__", "custom"),
                           name_or_backend)
    try:
        return _BACKENDS[name_or_backend]
    except KeyError:
        raise ConfigError(
            f"unknown flow backend {name_or_backend!r}; "
            f"available: {sorted(_BACKENDS)}"
        ) from None


register_backend(FlowBackend("identity", _identity_flow))
register_backend(FlowBackend("block", block_matching_flow))


def estimate_flow(reference, moving, backend="block"):
    """Estimate flow mapping reference pixels to locations in `moving`."""
    reference = as_frame(reference, name="reference")
    moving = as_frame(moving, name="moving")
    check_same_shape(reference, moving, names=("reference", "moving"))
    return get_backend(backend)(reference, moving)


def compensate(neighbor, reference, backend="block"):
    """Warp `neighbor` onto `reference` using estimated flow."""
    neighbor = as_frame(neighbor, name="neighbor")
    reference = as_frame(reference, name="reference")
    check_same_shape(neighbor, reference, names=("neighbor", "reference"))
    flow = estimate_flow(reference, neighbor, backend=backend)
    return warp(neighbor, flow)


def write_flo(flow, path):
    """Write a flow field as a Middlebury .flo file (little-endian float32)."""
    flow = np.asarray(flow, dtype=np.float32)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise DimensionError(f"flow must have shape (H, W, 2), got {flow.shape}")
    h, w = flow.shape[:2]
    with open(path, "wb") as f:
        f.write(struct.pack("<f", FLO_MAGIC))
        f.write(struct.pack("<ii", w, h))
        f.write(flow.astype("<f4").tobytes())
    return path


def read_flo(path):
    """Read a Middlebury .flo file into an (H, W, 2) float32 flow field."""
    with open(path, "rb") as f:
        magic = struct.unpack("<f", f.read(4))[0]
        if abs(magic - FLO_MAGIC) > 1e-3:
            raise DataError(f"{path} is not a .flo file (magic {magic})")
        w, h = struct.unpack("<ii", f.read(8))
        data = np.frombuffer(f.read(h * w * 2 * 4), dtype="<f4")
    if data.size != h * w * 2:
        raise DataError(f"{path} is truncated")
    return data.reshape(h, w, 2).astype(np.float32)


def command_backend(command, name="command"):
    """Adapter for an external flow tool.

    `command` is a list of argument templates; the placeholders ``{reference}``,
    ``{moving}`` and ``{flow}`` are substituted with temporary PNG inputs and
    the expected .flo output path. The tool must write the flow for mapping
    reference pixels into the moving frame.
    """
    from .frameio import save_image

    def run(reference, moving):
        with tempfile.TemporaryDirectory(prefix="videnoise-flow-") as tmp:
            ref_path = os.path.join(tmp, "reference.png")
            mov_path = os.path.join(tmp, "moving.png")
            flo_path = os.path.join(tmp, "flow.flo")
            save_image(reference, ref_path)
            save_image(moving, mov_path)
            argv = [
                arg.format(reference=ref_path, moving=mov_path, flow=flo_path)
                for arg in command
            ]
            proc = subprocess.run(argv, capture_output=True, text=True)
            if proc.returncode != 0:
                raise DataError(
                    f"flow command {argv} failed ({proc.returncode}): {proc.stderr}"
                )
            flow = read_flo(flo_path)
        if flow.shape[:2] != reference.shape[:2]:
            raise DimensionError(
                f"external tool returned {flow.shape[:2]} flow for "
                f"{reference.shape[:2]} frames"
            )
        return flow

    return FlowBackend(name, run)
