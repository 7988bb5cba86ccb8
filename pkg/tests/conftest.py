import numpy as np
import pytest

from wgmfem.mesh import generate_perturbed_poly_mesh, generate_uniform_quad_mesh


def polygon_monomial_integral(coords: np.ndarray, a: int, b: int) -> float:
    """Exact integral of x^a y^b over a polygon via Green's theorem.

    Uses int_P x^a y^b dA = 1/(a+1) * closed-line-integral of x^{a+1} y^b dy
    with exact 1D polynomial integration edge by edge.  Independent of any
    quadrature code under test.
    """
    from numpy.polynomial import polynomial as P

    total = 0.0
    m = len(coords)
    for i in range(m):
        x0, y0 = coords[i]
        x1, y1 = coords[(i + 1) % m]
        dx, dy = x1 - x0, y1 - y0
        if dy == 0.0:
            continue
        px = P.polypow([x0, dx], a + 1)
        py = P.polypow([y0, dy], b) if b > 0 else np.array([1.0])
        prod = P.polymul(px, py)
        integral_t = sum(c / (j + 1) for j, c in enumerate(prod))
        total += integral_t * dy
    return total / (a + 1)


def polygon_polynomial_integral(coords, exps, coeffs) -> float:
    return sum(
        c * polygon_monomial_integral(coords, int(a), int(b))
        for (a, b), c in zip(exps, coeffs)
    )


@pytest.fixture(scope="session")
def unit_cell():
    return generate_uniform_quad_mesh(1)


@pytest.fixture(scope="session")
def quad_mesh_2():
    return generate_uniform_quad_mesh(2)


@pytest.fixture(scope="session")
def quad_mesh_4():
    return generate_uniform_quad_mesh(4)


@pytest.fixture(scope="session")
def perturbed_mesh_4():
    return generate_perturbed_poly_mesh(4, 0.2, seed=7)


@pytest.fixture(scope="session")
def pentagon_mesh():
    """Single regular-ish pentagon cell."""
    from wgmfem.mesh import _build_mesh

    angles = np.pi / 2 + 2 * np.pi * np.arange(5) / 5
    vertices = 0.5 + 0.45 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return _build_mesh(vertices, [[0, 1, 2, 3, 4]])
