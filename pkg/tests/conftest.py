import numpy as np
import pytest

from splatkit.scene import Camera, GaussianCloud, logit


def rel_err(a, b, floor=1e-6):
    return abs(a - b) / max(abs(a), abs(b), floor)


def fd_gradient(f, x, h=1e-5):
    """Central finite differences of scalar f over the array x, in place."""
    flat = x.reshape(-1)
    out = np.empty(flat.size)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + h
        lp = f()
        flat[k] = old - h
        lm = f()
        flat[k] = old
        out[k] = (lp - lm) / (2.0 * h)
    return out.reshape(x.shape)


def assert_grad_close(f, x, analytic, h=1e-5, tol=1e-4, floor=1e-6):
    fd = fd_gradient(f, x, h=h)
    an = np.asarray(analytic)
    worst = max(rel_err(a, b, floor) for a, b in zip(an.reshape(-1), fd.reshape(-1)))
    assert worst < tol, f"worst gradient relative error {worst:.3e} >= {tol}"


def make_camera(width=8, height=8, fx=10.0, fy=11.0, z_offset=0.0):
    return Camera(fx=fx, fy=fy, cx=width / 2.0, cy=height / 2.0,
                  width=width, height=height, rotation=np.eye(3),
                  translation=np.array([0.0, 0.0, z_offset]),
                  near=0.05, far=20.0)


def make_cloud(rng, n=10, z_range=(1.2, 3.0), spread=0.35,
               scale_range=(0.03, 0.22), opacity_range=(0.25, 0.9)):
    pos = rng.uniform(-spread, spread, (n, 3))
    pos[:, 2] = rng.uniform(*z_range, n)
    ls = rng.uniform(np.log(scale_range[0]), np.log(scale_range[1]), (n, 3))
    q = rng.normal(size=(n, 4))
    op = logit(rng.uniform(*opacity_range, n))
    col = rng.uniform(0.08, 0.92, (n, 3))
    return GaussianCloud(pos, ls, q, op, col)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synth_scene_dir(tmp_path_factory):
    """A small shared synthetic scene for trainer/eval/CLI tests."""
    from splatkit.synth import synth_scene
    path = tmp_path_factory.mktemp("scene") / "synth"
    synth_scene(path, n_gaussians=60, n_views=6, width=32, height=32,
                seed=7, sfm_fraction=0.6)
    return path
