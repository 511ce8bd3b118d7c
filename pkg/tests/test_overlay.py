import numpy as np
import pytest

from wsym.mesh import generate_structured_alfeld
from wsym.overlay import overlay


@pytest.mark.parametrize("na,nb", [(1, 1), (2, 3), (2, 4)])
def test_overlay_integrates_polynomials(na, nb):
    a, b = generate_structured_alfeld(na), generate_structured_alfeld(nb)
    ov = overlay(a, b, degree=6)
    assert ov.weights.sum() == pytest.approx(1.0, abs=1e-13)
    x, y = ov.points.T
    assert np.dot(ov.weights, x**2 * y) == pytest.approx(1 / 6, abs=1e-13)


def test_reference_coordinates_map_back():
    a, b = generate_structured_alfeld(2), generate_structured_alfeld(3)
    ov = overlay(a, b)
    for mesh, elems, ref in ((a, ov.elem_a, ov.ref_a), (b, ov.elem_b, ov.ref_b)):
        g = mesh.geometry
        back = g.origin[elems] + np.einsum("nij,nj->ni", g.jac[elems], ref)
        assert np.allclose(back, ov.points, atol=1e-13)
        assert ref.min() >= -1e-12 and ref.sum(axis=1).max() <= 1 + 1e-12
