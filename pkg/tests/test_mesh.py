import numpy as np
import pytest

from bifurcurve.mesh import (
    DomainSpec,
    MeshError,
    coarsen,
    domain_volume,
    edge_table,
    element_volumes,
    generate_domain,
    interpolate,
    make_field,
    min_angle,
    read_snapshot,
    refine,
    rotation_orbits,
    symmetrize_marks,
    write_snapshot,
    zero_field,
)


def assert_conforming(mesh):
    if mesh.dim == 1:
        idx, counts = np.unique(mesh.elements.ravel(), return_counts=True)
        assert counts.max() <= 2
        return
    _, _, counts = edge_table(mesh)
    assert set(np.unique(counts)) <= {1, 2}
    areas = element_volumes(mesh)
    assert (areas > 0).all()
    assert abs(areas.sum() - domain_volume(mesh)) <= 1e-12 * abs(domain_volume(mesh))


def test_square_resolution_one():
    m = generate_domain(DomainSpec.square(), 1)
    assert m.n_vertices == 4
    assert m.n_elements == 2
    assert abs(element_volumes(m).sum() - 1.0) < 1e-12
    assert_conforming(m)


def test_interval_partition():
    m = generate_domain(DomainSpec.interval(-1.0, 1.0), 4)
    assert m.n_vertices == 5
    assert m.n_elements == 4
    assert abs(element_volumes(m).sum() - 2.0) < 1e-12
    assert m.boundary.sum() == 2


def test_annulus_containment():
    for res in (2, 5):
        m = generate_domain(DomainSpec.annulus(0.1), res)
        r = np.linalg.norm(m.vertices, axis=1)
        assert (r >= 0.1 - 1e-12).all()
        assert (r <= 1.0 + 1e-12).all()
        assert_conforming(m)


def test_invalid_specs_rejected():
    with pytest.raises(MeshError):
        DomainSpec.annulus(1.5)
    with pytest.raises(MeshError):
        DomainSpec.annulus(0.0)
    with pytest.raises(MeshError):
        DomainSpec.interval(1.0, 1.0)


def test_disk_boundary_on_circle():
    m = generate_domain(DomainSpec.disk(), 3)
    r = np.linalg.norm(m.vertices[m.boundary], axis=1)
    assert np.abs(r - 1.0).max() < 1e-12
    assert_conforming(m)
    m2 = refine(m, range(m.n_elements))
    r2 = np.linalg.norm(m2.vertices[m2.boundary], axis=1)
    assert np.abs(r2 - 1.0).max() < 1e-12
    assert_conforming(m2)


def test_annulus_boundary_projection_both_circles():
    m = generate_domain(DomainSpec.annulus(0.25), 3)
    for _ in range(2):
        m = refine(m, range(m.n_elements))
    r = np.linalg.norm(m.vertices[m.boundary], axis=1)
    inner = r[r < 0.6]
    outer = r[r >= 0.6]
    assert np.abs(inner - 0.25).max() < 1e-12
    assert np.abs(outer - 1.0).max() < 1e-12
    assert_conforming(m)


def test_nvb_hand_trace_single_mark():
    # marking one of the two square triangles bisects both along the
    # shared diagonal: 4 triangles, 5 vertices
    m = generate_domain(DomainSpec.square(), 1)
    m2 = refine(m, [0])
    assert m2.n_elements == 4
    assert m2.n_vertices == 5
    assert abs(element_volumes(m2).sum() - 1.0) < 1e-12
    assert_conforming(m2)


def test_refine_empty_marks():
    m = generate_domain(DomainSpec.square(), 2)
    m2 = refine(m, [])
    assert m2.n_elements == m.n_elements
    assert m2.generation == m.generation + 1
    assert np.array_equal(m2.elements, m.elements)


def test_refine_preserves_area():
    m = generate_domain(DomainSpec.square(), 2)
    rng = np.random.default_rng(7)
    for _ in range(4):
        marks = rng.choice(m.n_elements, size=max(1, m.n_elements // 3), replace=False)
        m = refine(m, marks)
        assert abs(element_volumes(m).sum() - 1.0) < 1e-12
        assert_conforming(m)


def test_shape_regularity_uniform_nvb():
    m = generate_domain(DomainSpec.square(), 2)
    a0 = min_angle(m)
    for _ in range(4):
        m = refine(m, range(m.n_elements))
        assert min_angle(m) >= 0.5 * a0 - 1e-12
        assert_conforming(m)


@pytest.mark.parametrize("spec,res", [
    (DomainSpec.square(), 2),
    (DomainSpec.interval(-1.0, 1.0), 4),
])
def test_refine_coarsen_round_trip(spec, res):
    m0 = generate_domain(spec, res)
    m1 = refine(m0, range(m0.n_elements))
    m2 = coarsen(m1, range(m1.n_elements))
    assert m2.n_elements == m0.n_elements
    assert m2.n_vertices == m0.n_vertices
    assert np.allclose(np.sort(m2.vertices, axis=0), np.sort(m0.vertices, axis=0))
    assert_conforming(m2)


def test_round_trip_two_levels_square():
    m = generate_domain(DomainSpec.square(), 2)
    for _ in range(2):
        m = refine(m, range(m.n_elements))
    n_at_two = m.n_elements
    m = coarsen(m, range(m.n_elements))
    assert m.n_elements == n_at_two // 2
    assert_conforming(m)


def test_coarsen_empty_and_partial_marks():
    m0 = generate_domain(DomainSpec.square(), 1)
    m1 = refine(m0, [0])
    same = coarsen(m1, [])
    assert same.n_elements == m1.n_elements
    assert np.array_equal(same.elements, m1.elements)
    # one marked child only: nothing merges
    part = coarsen(m1, [0])
    assert part.n_elements == m1.n_elements


def test_coarsen_never_below_initial():
    m = generate_domain(DomainSpec.square(), 2)
    m2 = coarsen(m, range(m.n_elements))
    assert m2.n_elements == m.n_elements


def test_coarsen_skips_vertex_needed_by_refined_neighbor():
    m = generate_domain(DomainSpec.interval(0.0, 1.0), 1)
    m = refine(m, [0])            # two halves
    m = refine(m, [0])            # refine left half again
    assert m.n_elements == 3
    m2 = coarsen(m, range(m.n_elements))
    # only the two smallest intervals merge; the level-1 midpoint stays
    assert m2.n_elements == 2


def test_interpolate_constant_and_linear():
    m0 = generate_domain(DomainSpec.square(), 2)
    m1 = refine(m0, range(m0.n_elements))
    const = make_field(m0, np.full(m0.n_vertices, 3.25))
    out = interpolate(const, m0, m1)
    assert np.allclose(out.values, 3.25)

    lin = make_field(m0, 2.0 * m0.vertices[:, 0] - 0.5 * m0.vertices[:, 1] + 1.0)
    out = interpolate(lin, m0, m1)
    expect = 2.0 * m1.vertices[:, 0] - 0.5 * m1.vertices[:, 1] + 1.0
    assert np.allclose(out.values, expect, atol=1e-12)


def test_interpolate_midpoint_average():
    m0 = generate_domain(DomainSpec.square(), 1)
    rng = np.random.default_rng(3)
    f = make_field(m0, rng.standard_normal(m0.n_vertices))
    m1 = refine(m0, [0])
    out = interpolate(f, m0, m1)
    # vertex 4 is the midpoint of the (0,0)-(1,1) diagonal
    assert np.allclose(m1.vertices[4], [0.5, 0.5])
    ends = [i for i in range(4) if np.allclose(m0.vertices[i], [0, 0]) or np.allclose(m0.vertices[i], [1, 1])]
    assert len(ends) == 2
    assert np.isclose(out.values[4], 0.5 * (f.values[ends[0]] + f.values[ends[1]]))


def test_interpolate_generation_mismatch():
    m0 = generate_domain(DomainSpec.square(), 1)
    m1 = refine(m0, [0])
    f = zero_field(m0)
    with pytest.raises(MeshError):
        interpolate(f, m1, m0)


def test_interpolate_1d_linear():
    m0 = generate_domain(DomainSpec.interval(-1.0, 1.0), 3)
    m1 = refine(m0, [0, 2])
    f = make_field(m0, 0.7 * m0.vertices[:, 0] + 0.1)
    out = interpolate(f, m0, m1)
    assert np.allclose(out.values, 0.7 * m1.vertices[:, 0] + 0.1)


def test_interpolate_annulus_after_adaptive_refine():
    m0 = generate_domain(DomainSpec.annulus(0.1), 4)
    f = make_field(m0, np.linalg.norm(m0.vertices, axis=1))
    m1 = refine(m0, range(0, m0.n_elements, 3))
    out = interpolate(f, m0, m1)
    r = np.linalg.norm(m1.vertices, axis=1)
    # radius is not linear on a triangle, but interpolation error is small
    assert np.abs(out.values - r).max() < 0.02


def test_snapshot_round_trip(tmp_path):
    m = generate_domain(DomainSpec.disk(), 2)
    rng = np.random.default_rng(11)
    f = make_field(m, rng.standard_normal(m.n_vertices))
    p = tmp_path / "snapshot_0.txt"
    write_snapshot(p, m, f)
    verts, elems, vals = read_snapshot(p)
    assert np.array_equal(elems, m.elements)
    assert np.allclose(verts, m.vertices, rtol=0, atol=0)
    assert np.allclose(vals, f.values, rtol=0, atol=0)
    first = p.read_text().splitlines()[0]
    assert first == f"{m.n_vertices} {m.n_elements} 2"


def test_annulus_rotation_orbits():
    m = generate_domain(DomainSpec.annulus(0.1), 3)
    orbit = rotation_orbits(m)
    assert orbit is not None
    _, counts = np.unique(orbit, return_counts=True)
    assert (counts == 64).all()
    marks = symmetrize_marks(m, [0], mode="union")
    assert len(marks) == 64
    assert symmetrize_marks(m, [0], mode="intersection") == set()
    # symmetric refinement keeps the orbit structure
    m2 = refine(m, marks)
    assert rotation_orbits(m2) is not None


def test_field_binding():
    m = generate_domain(DomainSpec.square(), 1)
    with pytest.raises(MeshError):
        make_field(m, np.zeros(3))
    f = zero_field(m)
    assert f.bound_to(m)
