from wgmfem.analysis import run_convergence_study
from wgmfem.mesh import generate_perturbed_poly_mesh
from wgmfem.report import save_convergence_figure, save_mesh_figure
from wgmfem.solutions import get_manufactured


def test_convergence_figure_written(tmp_path):
    man = get_manufactured("sinsin", "identity")
    report = run_convergence_study(man, 0, [4, 8])
    path = tmp_path / "convergence.png"
    save_convergence_figure(report, path)
    assert path.exists() and path.stat().st_size > 1000


def test_mesh_figure_written(tmp_path):
    mesh = generate_perturbed_poly_mesh(6, 0.2, seed=1)
    path = tmp_path / "mesh.png"
    save_mesh_figure(mesh, path)
    assert path.exists() and path.stat().st_size > 1000
