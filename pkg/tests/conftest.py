"""Shared test helpers: finite-difference gradient checks, the toy textured
images the training-trend tests memorize, and the acceptance summary hook."""

import contextlib

import numpy as np

from refsr.tensors import ImageTensor, bicubic_resize

ACCEPTANCE_RESULTS = []


@contextlib.contextmanager
def acceptance_criterion(name):
    """Record one acceptance criterion's outcome for the terminal summary."""
    try:
        yield
    except BaseException as exc:
        status = "XFAIL" if type(exc).__name__ == "XFailed" else "FAIL"
        ACCEPTANCE_RESULTS.append((name, status))
        raise
    ACCEPTANCE_RESULTS.append((name, "PASS"))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, status in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(f"{status:6s} {name}")


def fd_grad(f, x, h=1e-6):
    """Central finite-difference gradient of scalar f() w.r.t. array x,
    mutating x in place coordinate by coordinate."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        fp = f()
        x[i] = orig - h
        fm = f()
        x[i] = orig
        g[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(analytic, numeric):
    """Max-norm relative disagreement between two gradient arrays."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(n).max(), np.abs(a).max(), 1e-12)
    return float(np.abs(a - n).max() / scale)


def texture_tile(size, amp=0.10, period=4, seed=123):
    """A fixed zero-mean tile pattern, periodic with the upscale factor.

    Bicubic 4x downsampling samples it at one phase only, so the pattern
    vanishes from the LR image and bicubic upscaling cannot restore it.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    tile = rng.random((period, period, 3)) - 0.5
    tile -= tile.mean(axis=(0, 1), keepdims=True)
    reps = (size + period - 1) // period
    pattern = np.tile(tile, (reps, reps, 1))[:size, :size]
    return amp * pattern


def toy_image(seed, size=64, tex_amp=0.10, smooth_cells=4):
    """Smooth random content plus a shared fine texture, in [0, 1]."""
    rng = np.random.Generator(np.random.PCG64(seed))
    base = rng.random((smooth_cells, smooth_cells, 3)) * 0.6 + 0.2
    smooth = bicubic_resize(ImageTensor(base), size // smooth_cells).data
    img = smooth + texture_tile(size, amp=tex_amp)
    return ImageTensor(np.clip(img, 0.0, 1.0))


def noise_image(seed, size=64):
    rng = np.random.Generator(np.random.PCG64(seed))
    return ImageTensor(rng.random((size, size, 3)))
