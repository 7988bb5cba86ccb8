import numpy as np
import pytest

from wgmfem.analysis import (
    build_infsup_witness,
    check_identities,
    domain_is_convex,
    error_bundle,
    estimate_rates,
    h1h_norm,
    measure_inverse_constant,
    measure_trace_constant,
    random_scalar_field,
    run_convergence_study,
    triple_bar_norm,
)
from wgmfem.basis import build_basis_family
from wgmfem.fields import FluxField, ScalarField
from wgmfem.forms import assemble_b, assemble_system, identity_coefficient
from wgmfem.mesh import (
    flip_edge_orientation,
    generate_perturbed_poly_mesh,
    generate_uniform_quad_mesh,
)
from wgmfem.projection import project_flux, project_scalar
from wgmfem.solutions import get_manufactured, smooth_vector_from_expr
from wgmfem.solver import solve
from wgmfem.weakdiv import build_weakdiv


class TestNorms:
    def test_triple_bar_of_constant_inclusion(self, unit_cell):
        man = get_manufactured("sinsin", "identity")
        system = assemble_system(unit_cell, 0, identity_coefficient(), man.f, man.g)
        v = project_flux(lambda p: np.tile([1.0, 0.0], (len(p), 1)), system.family)
        assert triple_bar_norm(v, system) == pytest.approx(1.0, abs=1e-13)

    def test_triple_bar_homogeneous(self, quad_mesh_2):
        man = get_manufactured("sinsin", "identity")
        system = assemble_system(quad_mesh_2, 0, man.alpha, man.f, man.g)
        rng = np.random.default_rng(1)
        v = FluxField(system.dofmap, rng.standard_normal(system.dofmap.n_flux))
        two_v = FluxField(system.dofmap, 2.0 * v.coeffs)
        assert triple_bar_norm(two_v, system) == pytest.approx(
            2.0 * triple_bar_norm(v, system), rel=1e-13
        )

    def test_h1h_of_constant_single_cell(self, unit_cell):
        fam = build_basis_family(unit_cell, 0)
        one = project_scalar(lambda p: np.ones(len(p)), fam)
        assert h1h_norm(one, fam) ** 2 == pytest.approx(4.0, abs=1e-13)

    def test_h1h_interior_jumps_vanish_for_continuous_field(self, quad_mesh_2):
        fam = build_basis_family(quad_mesh_2, 0)
        w = project_scalar(lambda p: p[:, 0].copy(), fam)
        # continuous across interior edges: only the gradient and the domain
        # boundary contribute
        mesh = quad_mesh_2
        total = h1h_norm(w, fam) ** 2
        boundary_part = 0.0
        dm = fam.dofmap
        side_index = [
            {int(e): i for i, e in enumerate(mesh.cell_edges[c])}
            for c in range(mesh.n_cells)
        ]
        for e in mesh.boundary_edges:
            c = int(mesh.edge_cells[e, 0])
            t = fam.traces[c][side_index[c][e]]
            tr = t.values_k1 @ w.coeffs[dm.scalar_slice(c)]
            moments = t.edge_values.T @ (t.weights * tr)
            boundary_part += float(moments @ moments) / t.length
        assert total == pytest.approx(1.0 + boundary_part, abs=1e-12)

    def test_h1h_positive_definite(self, quad_mesh_2):
        fam = build_basis_family(quad_mesh_2, 0)
        rng = np.random.default_rng(3)
        for _ in range(10):
            w = random_scalar_field(fam, rng)
            assert h1h_norm(w, fam) > 0
        assert h1h_norm(ScalarField(fam.dofmap), fam) == 0.0


class TestRates:
    def test_slope_arithmetic(self):
        assert estimate_rates([1e-1, 2.5e-2], [0.25, 0.125]) == [pytest.approx(2.0)]
        assert estimate_rates([3.0, 3.0], [0.25, 0.125]) == [pytest.approx(0.0)]
        assert estimate_rates([1.0, 0.0], [0.5, 0.25]) == [None]

    def test_three_levels_give_two_rates(self):
        rates = estimate_rates([1.0, 0.25, 0.0625], [1.0, 0.5, 0.25])
        assert len(rates) == 2
        assert all(r == pytest.approx(2.0) for r in rates)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            estimate_rates([1.0], [1.0, 0.5])


class TestErrorBundle:
    def test_exact_polynomial_case(self, quad_mesh_4):
        man = get_manufactured("affine", "identity")
        system = assemble_system(quad_mesh_4, 0, man.alpha, man.f, man.g)
        sol = solve(system)
        bundle = error_bundle(sol, man, system)
        assert bundle.triple_bar_q <= 1e-9
        assert bundle.h1h_u <= 1e-9
        assert bundle.l2_u <= 1e-9
        assert bundle.l2_q0 <= 1e-9
        assert bundle.h == pytest.approx(quad_mesh_4.h)

    def test_zero_data_gives_zero_errors(self, quad_mesh_2):
        zero = lambda p: np.zeros(len(p))
        import sympy as sp

        from wgmfem.solutions import manufactured_from_expr

        man = manufactured_from_expr("null", sp.Integer(0), sp.eye(2), 1.0)
        system = assemble_system(quad_mesh_2, 0, man.alpha, man.f, man.g)
        sol = solve(system)
        bundle = error_bundle(sol, man, system)
        assert bundle.l2_u <= 1e-14
        assert bundle.triple_bar_q <= 1e-14


@pytest.fixture(scope="module")
def report():
    man = get_manufactured("sinsin", "identity")
    return run_convergence_study(man, 0, [4, 8, 16])


class TestConvergenceReport:
    def test_level_metadata(self, report):
        assert [rec.n for rec in report.levels] == [4, 8, 16]
        assert report.hs[0] == pytest.approx(2 * report.hs[1], rel=1e-12)
        assert report.domain_convex

    def test_l2_rate_near_two(self, report):
        assert report.final_rate("l2_u") == pytest.approx(2.0, abs=0.15)

    def test_csv_layout_and_determinism(self, tmp_path, report):
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        report.to_csv(p1)
        report.to_csv(p2)
        assert p1.read_bytes() == p2.read_bytes()
        lines = p1.read_text().splitlines()
        assert lines[0] == "level,h,triple_bar_q,h1h_u,l2_u,l2_q0,rate_triple,rate_h1h,rate_l2"
        assert len(lines) == 4
        first = lines[1].split(",")
        assert first[6] == "" and first[7] == "" and first[8] == ""
        assert all(len(lines[i].split(",")) == 9 for i in range(1, 4))

    def test_summary_contents(self, tmp_path, report):
        path = tmp_path / "summary.json"
        report.write_summary(path)
        import json

        doc = json.loads(path.read_text())
        assert doc["targets"]["l2_u"] == 2
        assert len(doc["levels"]) == 3
        assert doc["domain_convex"] is True

    def test_perturbed_study_runs(self):
        man = get_manufactured("sinsin", "identity")
        rep = run_convergence_study(
            man, 0, [4, 8], mesh_kind="perturbed", jitter=0.2, seed=3
        )
        assert rep.mesh_kind == "perturbed"
        assert rep.jitter == 0.2
        assert len(rep.levels) == 2


class TestWitness:
    @pytest.mark.parametrize("k", [0, 1])
    def test_equality_on_perturbed_mesh(self, k, perturbed_mesh_4):
        fam = build_basis_family(perturbed_mesh_4, k)
        wd = build_weakdiv(fam)
        B = assemble_b(fam, wd)
        rng = np.random.default_rng(7)
        for _ in range(10):
            phi = random_scalar_field(fam, rng)
            v = build_infsup_witness(phi, fam)
            b_val = float(phi.coeffs @ (B @ v.coeffs))
            nsq = h1h_norm(phi, fam) ** 2
            assert abs(b_val - nsq) <= 1e-11 * nsq

    def test_jump_sign_consistency(self, quad_mesh_2):
        """Flipping one stored normal flips the witness edge coefficient there
        but leaves the duality pairing value unchanged."""
        mesh = quad_mesh_2
        interior = [e for e in range(mesh.n_edges) if not mesh.is_boundary_edge(e)]
        target = interior[1]
        flipped = flip_edge_orientation(mesh, [target])

        fam_a = build_basis_family(mesh, 0)
        fam_b = build_basis_family(flipped, 0)
        rng = np.random.default_rng(5)
        phi_coeffs = rng.standard_normal(fam_a.dofmap.n_scalar)
        phi_a = ScalarField(fam_a.dofmap, phi_coeffs)
        phi_b = ScalarField(fam_b.dofmap, phi_coeffs.copy())

        v_a = build_infsup_witness(phi_a, fam_a)
        v_b = build_infsup_witness(phi_b, fam_b)
        # constant edge polynomial: a pure sign flip of the coefficient
        assert v_b.edge(target)[0] == pytest.approx(-v_a.edge(target)[0], rel=1e-13)

        B_a = assemble_b(fam_a, build_weakdiv(fam_a))
        B_b = assemble_b(fam_b, build_weakdiv(fam_b))
        val_a = float(phi_a.coeffs @ (B_a @ v_a.coeffs))
        val_b = float(phi_b.coeffs @ (B_b @ v_b.coeffs))
        assert val_a == pytest.approx(val_b, rel=1e-13)


class TestIdentities:
    def test_all_pass_on_perturbed_mesh(self, perturbed_mesh_4):
        man = get_manufactured("sinsin", "identity")
        report = check_identities(perturbed_mesh_4, 0, manufactured=man)
        assert report.all_passed
        names = {r.name for r in report}
        assert names == {
            "commuting_projection",
            "divergence_pairing",
            "edge_dominance",
            "infsup_witness",
            "local_conservation",
        }

    def test_polynomial_flux_is_exact(self, perturbed_mesh_4):
        """For flux polynomials of degree <= k the edge-projection defect
        vanishes and the commuting identity holds to round-off."""
        q = smooth_vector_from_expr(("1 + 2*x", "3 - y"))
        report = check_identities(perturbed_mesh_4, 1, q_field=q)
        res = report.get("commuting_projection")
        assert res.residual <= 1e-12

    def test_report_get_unknown(self, perturbed_mesh_4):
        report = check_identities(perturbed_mesh_4, 0)
        with pytest.raises(KeyError):
            report.get("nonexistent")

    def test_conservation_skipped_without_solution(self, perturbed_mesh_4):
        report = check_identities(perturbed_mesh_4, 0)
        assert "local_conservation" not in {r.name for r in report}


class TestMeasuredConstants:
    @pytest.mark.parametrize("k", [0, 1])
    def test_uniform_refinement_stability(self, k):
        inv = [measure_inverse_constant(generate_uniform_quad_mesh(n), k) for n in (4, 8, 16)]
        tr = [measure_trace_constant(generate_uniform_quad_mesh(n), k) for n in (4, 8, 16)]
        assert (max(inv) - min(inv)) <= 0.1 * min(inv)
        assert (max(tr) - min(tr)) <= 0.1 * min(tr)

    def test_perturbed_constants_bounded(self):
        base = measure_inverse_constant(generate_uniform_quad_mesh(4), 0)
        vals = [
            measure_inverse_constant(generate_perturbed_poly_mesh(n, 0.2, seed=5), 0)
            for n in (4, 8, 16)
        ]
        assert max(vals) <= 3.0 * base


def test_domain_convexity(quad_mesh_2):
    assert domain_is_convex(quad_mesh_2)
    from wgmfem.mesh import _build_mesh

    verts = np.array(
        [[0, 0], [1, 0], [2, 0], [0, 1], [1, 1], [2, 1], [0, 2], [1, 2]], dtype=float
    )
    lshape = _build_mesh(verts, [[0, 1, 4, 3], [1, 2, 5, 4], [3, 4, 7, 6]])
    assert not domain_is_convex(lshape)


def test_projection_defect_energy_rate():
    """The energy norm of q minus its flux-space projection decays at k+1."""
    from wgmfem.analysis import defect_energy_norm
    from wgmfem.solutions import smooth_vector_from_expr

    q = smooth_vector_from_expr(("sin(pi*x)", "0"))
    for k in (0, 1):
        errs, hs = [], []
        for n in (4, 8, 16):
            mesh = generate_uniform_quad_mesh(n)
            fam = build_basis_family(mesh, k)
            errs.append(defect_energy_norm(q, fam))
            hs.append(mesh.h)
        rate = estimate_rates(errs, hs)[-1]
        assert abs(rate - (k + 1)) < 0.15


def test_higher_degree_orders_quick():
    man = get_manufactured("sinsin", "identity")
    rep = run_convergence_study(man, 2, [2, 4, 8])
    assert rep.final_rate("l2_u") == pytest.approx(4.0, abs=0.3)
    assert rep.final_rate("h1h_u") == pytest.approx(3.0, abs=0.3)
