"""Property-based checks over the numeric primitives."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

import bpurf.numeric as nm
import bpurf.training as tr
from bpurf import _purepy, kernels
from bpurf.model import dtw

seqs = st.lists(st.integers(min_value=0, max_value=9), min_size=0, max_size=12)


@given(seqs, seqs)
@settings(max_examples=200, deadline=None)
def test_dtw_symmetric_nonnegative(a, b):
    d_ab = dtw(a, b)
    assert d_ab >= 0.0
    assert d_ab == dtw(b, a)


@given(seqs)
@settings(max_examples=100, deadline=None)
def test_dtw_identity(a):
    assert dtw(a, a) == 0.0


@given(seqs, seqs)
@settings(max_examples=100, deadline=None)
def test_dtw_backends_agree(a, b):
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    assert kernels.dtw_distance(av, bv) == _purepy.dtw_distance(av, bv)


@given(st.integers(min_value=2, max_value=8), st.integers(min_value=0, max_value=2**31))
@settings(max_examples=50, deadline=None)
def test_info_nce_invariant_under_permutation(batch, seed):
    rng = np.random.default_rng(seed)
    r = rng.normal(size=(batch, 5))
    p = rng.normal(size=(batch, 5))
    perm = rng.permutation(batch)
    a = tr.info_nce_loss(nm.tensor(r), nm.tensor(p), 0.3).item()
    b = tr.info_nce_loss(nm.tensor(r[perm]), nm.tensor(p[perm]), 0.3).item()
    assert np.isclose(a, b, rtol=1e-10)


@given(st.integers(min_value=3, max_value=24), st.integers(min_value=0, max_value=2**31))
@settings(max_examples=60, deadline=None)
def test_point_in_polygon_backends_agree(n_vertices, seed):
    rng = np.random.default_rng(seed)
    spacing = 2 * np.pi / n_vertices
    angles = np.arange(n_vertices) * spacing + rng.uniform(0, spacing, n_vertices)
    radii = rng.uniform(1.0, 30.0, n_vertices)
    rx = np.ascontiguousarray(50 + radii * np.cos(angles))
    ry = np.ascontiguousarray(50 + radii * np.sin(angles))
    xs = rng.uniform(0, 100, 200)
    ys = rng.uniform(0, 100, 200)
    a = np.asarray(kernels.points_in_polygon(xs, ys, rx, ry))
    b = np.asarray(_purepy.points_in_polygon(xs, ys, rx, ry))
    assert np.array_equal(a, b)
