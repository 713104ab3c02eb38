import numpy as np
import pytest

from spinbie import clifford as cl
from spinbie import geometry as geo
from spinbie import kernels as kn
from spinbie import operators as op

from conftest import random_mv


def smooth_densities(surface, rng, count=5):
    """Constant multivectors modulated by low-order spherical harmonics."""
    x = surface.nodes
    mods = [np.ones(len(x)), x[:, 0], x[:, 1] * x[:, 2], 3 * x[:, 2] ** 2 - 1, x[:, 0] * x[:, 1] - x[:, 2]]
    return [m[:, None] * random_mv(rng) for m in mods[:count]]


def reflection_defect(Ck, densities):
    return max(np.linalg.norm(Ck.apply(Ck.apply(f)) - f) / np.linalg.norm(f) for f in densities)


def block_diag_from_reflections(surface, fn):
    """8 x 8 nodal blocks of a pointwise map, column by column through the clifford module."""
    n = surface.size
    blocks = np.empty((n, 8, 8), dtype=complex)
    for c in range(8):
        blocks[:, :, c] = fn(np.broadcast_to(cl.basis(c), (n, 8)), surface.normals)
    return blocks


# ---- density layout -------------------------------------------------------


def test_flatten_is_node_major():
    h = np.arange(16).reshape(2, 8) + 0j
    assert np.array_equal(op.flatten(h)[8:], h[1])
    assert np.array_equal(op.unflatten(op.flatten(h)), h)
    with pytest.raises(ValueError):
        op.unflatten(np.zeros(12))


# ---- pointwise operators ----------------------------------------------------


def test_s_and_n_match_clifford_reflections(sphere1):
    S = op.assemble_S(sphere1)
    N = op.assemble_N(sphere1)
    np.testing.assert_allclose(S.blocks, block_diag_from_reflections(sphere1, cl.reflect_S), atol=1e-14)
    np.testing.assert_allclose(N.blocks, block_diag_from_reflections(sphere1, cl.reflect_N), atol=1e-14)


def test_m_equals_i_plus_sn_plus_n(sphere1):
    # [DERIVED] M h = h + h^ n + n h^ n, built from the reflections
    M = op.assemble_M(sphere1)
    sn = block_diag_from_reflections(sphere1, lambda f, n: cl.reflect_S(cl.reflect_N(f, n), n))
    nn = block_diag_from_reflections(sphere1, cl.reflect_N)
    np.testing.assert_allclose(M.blocks, np.eye(8) + sn + nn, atol=1e-14)


def test_m_hand_example():
    s = geo.quadrature_from_mesh(geo.icosphere(0))
    i = int(np.argmax(s.normals[:, 2]))
    nodal = op.assemble_M(s).blocks[i]
    ez = np.array([0.0, 0.0, 1.0])
    # rotate the example onto the node normal: M 1 = 2 + n
    np.testing.assert_allclose(nodal @ cl.basis(0), 2 * cl.basis(0) + cl.vector(s.normals[i]), atol=1e-14)
    assert s.normals[i] @ ez > 0.7


def test_i_plus_s_on_tangential_data(sphere1, rng):
    n = sphere1.normals
    g = cl.project_N_plus(random_mv(rng, sphere1.size), n)
    lhs = g + cl.reflect_S(g, n)
    rhs = g + cl.clifford_mul(cl.involution(g), cl.vector(n))
    np.testing.assert_allclose(lhs, rhs, atol=1e-13)


def test_operator_application_protocols(sphere1, rng):
    S = op.assemble_S(sphere1)
    h = random_mv(rng, sphere1.size)
    np.testing.assert_array_equal(S @ h, S.apply(h))
    np.testing.assert_allclose(op.flatten(S.apply(h)), S.matrix @ op.flatten(h), atol=1e-14)


# ---- Cauchy operator --------------------------------------------------------


def test_ck_matrix_matches_application(ck1, rng):
    h = random_mv(rng, ck1.surface.size)
    np.testing.assert_allclose(op.flatten(ck1.apply(h)), ck1.matrix @ op.flatten(h), atol=1e-12)


def test_rk_is_ck_after_s(sphere1, ck1):
    # [TRIVIAL] R_k = C_k S as matrices
    Rk = op.assemble_Rk(sphere1, 2.0, Ck=ck1)
    np.testing.assert_allclose(Rk.matrix, ck1.matrix @ op.assemble_S(sphere1).matrix, atol=1e-13)
    fresh = op.assemble_Rk(sphere1, 2.0)
    np.testing.assert_allclose(fresh.field, Rk.field, atol=1e-14)


def test_far_block_is_the_plain_kernel(sphere2):
    # [TRIVIAL] antipodal nodes are in each other's far field
    R0 = op.assemble_Rk(sphere2, 0.0)
    i = 0
    j = int(np.argmin(sphere2.nodes @ sphere2.nodes[i]))
    assert np.linalg.norm(sphere2.nodes[j] - sphere2.nodes[i]) > 3 * sphere2.panel_diam.max()
    want = 2 * sphere2.weights[j] * cl.left_mul_matrix(kn.psi(0.0, sphere2.nodes[j] - sphere2.nodes[i]))
    got = R0.matrix[8 * i:8 * i + 8, 8 * j:8 * j + 8]
    np.testing.assert_allclose(got, want, atol=1e-14)


def test_static_cauchy_operator_reproduces_constants(sphere2):
    # the subtraction makes C_0 1 = 1 exactly in the scalar slot
    C0 = op.assemble_Ck(sphere2, 0.0)
    one = np.zeros((sphere2.size, 8), dtype=complex)
    one[:, 0] = 1
    out = C0.apply(one)
    np.testing.assert_allclose(out[:, 0], 1.0, atol=1e-12)


def test_plain_cauchy_sum_approaches_one():
    # [DERIVED] 2 sum_j w_j Psi_0(y_j - x_i) n_j -> 1 as the mesh is refined
    errs = []
    for sub in (1, 2):
        s = geo.quadrature_from_mesh(geo.icosphere(sub))
        tot = op.cauchy_constant_sum(s)
        errs.append(np.abs(tot[:, 0] - 1).max())
    assert errs[1] <= 8e-2
    assert errs[1] < errs[0]


def test_near_field_refinement_improves_the_sum(sphere2):
    plain = np.abs(op.cauchy_constant_sum(sphere2)[:, 0] - 1).max()
    refined = np.abs(op.cauchy_constant_sum(sphere2, op.NearField())[:, 0] - 1).max()
    assert refined < plain


def test_reflection_defect_decreases(sphere1, sphere2, ck1, ck2):
    # [DERIVED] C_k^2 = I for the Cauchy reflection
    rng = np.random.default_rng(7)
    d1 = reflection_defect(ck1, smooth_densities(sphere1, rng))
    rng = np.random.default_rng(7)
    d2 = reflection_defect(ck2, smooth_densities(sphere2, rng))
    assert d2 <= 0.15
    assert d2 < d1


def test_complementary_projections(sphere2, ck2, rng):
    # [DERIVED] C+ C- = (I - C^2)/4 is small on smooth densities
    worst = 0.0
    for f in smooth_densities(sphere2, rng):
        cm = 0.5 * (f - ck2.apply(f))
        cpcm = 0.5 * (cm + ck2.apply(cm))
        worst = max(worst, np.linalg.norm(cpcm) / np.linalg.norm(f))
    assert worst <= 0.15


@pytest.mark.parametrize("z0, sign", [((0.2, 0.1, -0.3), -1), ((0.0, 0.0, 2.5), 1)])
def test_cauchy_data_is_an_eigenvector(sphere2, ck2, z0, sign):
    # [DERIVED] boundary values of a field radiating into the exterior satisfy C_k F = -F,
    # those of a field regular inside satisfy C_k F = F
    k = 2.0
    F = kn.helmholtz_source_field(k, z0, sphere2.nodes)
    const = op.assemble_Ck(sphere2, k, op.NearField(density="constant"))
    d_lin = np.linalg.norm(ck2.apply(F) - sign * F) / np.linalg.norm(F)
    d_const = np.linalg.norm(const.apply(F) - sign * F) / np.linalg.norm(F)
    assert d_lin <= 5e-2
    assert d_lin < 0.5 * d_const


def test_unknown_density_rejected(sphere1):
    with pytest.raises(ValueError):
        op.assemble_Ck(sphere1, 2.0, op.NearField(density="quadratic"))


def test_assembly_is_lipschitz_in_k(sphere1, ck1):
    diffs = []
    for d in (1e-3, 5e-4):
        other = op.assemble_Ck(sphere1, 2.0 + d)
        diffs.append(np.abs(other.field - ck1.field).max() / d)
    assert diffs[1] == pytest.approx(diffs[0], rel=0.05)
    assert np.isfinite(diffs[0])


# ---- systems ------------------------------------------------------------------


def test_spin_system_equals_conjugated_clifford_form(sphere1, ck1):
    # [DERIVED] h = S f, R_k = C_k S, M = I + SN + N
    from spinbie.scattering import clifford_form_system

    A = op.spin_system(sphere1, 2.0, Rk=op.assemble_Rk(sphere1, 2.0, Ck=ck1)).matrix
    B = clifford_form_system(sphere1, 2.0, Ck=ck1).matrix
    S = op.assemble_S(sphere1).matrix
    assert np.abs(S @ B @ S - A).max() <= 1e-12


def test_rotation_system_is_i_minus_cn(sphere1, ck1):
    A = op.rotation_system(sphere1, 2.0, Ck=ck1).matrix
    N = op.assemble_N(sphere1).matrix
    np.testing.assert_allclose(N @ N, np.eye(len(N)), atol=1e-14)
    np.testing.assert_allclose(A, np.eye(len(N)) - ck1.matrix @ N, atol=1e-14)


def test_system_applies_match_matrices(sphere1, ck1, rng):
    h = op.flatten(random_mv(rng, sphere1.size))
    Rk = op.assemble_Rk(sphere1, 2.0, Ck=ck1)
    np.testing.assert_allclose(op.spin_apply(Rk)(h), op.spin_system(sphere1, 2.0, Rk=Rk).matrix @ h, atol=1e-12)
    np.testing.assert_allclose(op.rotation_apply(ck1)(h), op.rotation_system(sphere1, 2.0, Ck=ck1).matrix @ h, atol=1e-12)


def test_matrix_free_agrees_with_assembled(sphere2, ck2, rng):
    Rk = op.assemble_Rk(sphere2, 2.0, Ck=ck2)
    h = random_mv(rng, sphere2.size)
    np.testing.assert_allclose(op.matrix_free_apply(sphere2, 2.0, h), Rk.apply(h), atol=1e-12)
    assert not np.any(op.matrix_free_apply(sphere2, 2.0, np.zeros((sphere2.size, 8))))
    several = np.stack([h, 2 * h], axis=-1)
    np.testing.assert_allclose(op.matrix_free_apply(sphere2, 2.0, several)[..., 1], 2 * Rk.apply(h), atol=1e-12)


# ---- exterior evaluation ----------------------------------------------------------


def test_field_evaluation_linear_and_zero(sphere1, rng):
    pts = np.array([[2.0, 0, 0], [0, 3.0, 1.0]])
    h1, h2 = random_mv(rng, sphere1.size), random_mv(rng, sphere1.size)
    e = lambda h: op.field_eval_RkOmega(sphere1, 2.0, h, pts)  # noqa: E731
    np.testing.assert_allclose(e(h1 + h2), e(h1) + e(h2), atol=1e-13)
    assert not np.any(e(np.zeros_like(h1)))


def test_field_evaluation_rejects_node(sphere1):
    with pytest.raises(ValueError):
        op.field_eval_RkOmega(sphere1, 2.0, np.ones((sphere1.size, 8)), sphere1.nodes[:1])


# ---- classical operators --------------------------------------------------------------


@pytest.fixture(scope="module")
def classical1(sphere1):
    return op.assemble_classical(sphere1, 1.5, op.NearField(density="constant"))


def test_static_double_layer_of_constants(sphere2):
    c = op.assemble_classical(sphere2, 0.0)
    assert np.abs(c.Dl.sum(axis=1) - 1).max() <= 5e-2


def test_m_prime_is_the_normal_weighted_single_layer(sphere1, classical1):
    # [TRIVIAL] M' v(x) = 2ik int Phi_k(y - x) n(x) . v(y) dy, with the sign the Clifford products give
    k = 1.5
    near = op.NearField(density="constant")

    def single(z, n):
        r = np.linalg.norm(z, axis=-1)
        return (-np.exp(1j * k * r) / (4 * np.pi * r))[..., None]

    P = op.panel_integrals(sphere1, np.arange(sphere1.size), single, near, single)[..., 0]
    v = sphere1.normals
    got = np.einsum("ijb,jb->i", classical1.M_prime, v)
    want = 2j * k * np.einsum("ij,ia,ja->i", P, sphere1.normals, v)
    np.testing.assert_allclose(got, want, atol=1e-13)


def test_block_layout_order(sphere1):
    assert op.BLOCK_LABELS == ("u1", "v", "u2", "beta")
    blocks = op.proposition_blocks(op.assemble_Ck(sphere1, 1.5, op.NearField(density="constant")))
    n = sphere1.size
    assert blocks[("v", "v")].shape == (2 * n, 2 * n)
    assert blocks[("u1", "v")].shape == (n, 2 * n)
    assert len(blocks) == 16


def test_compression_matches_classical_operators(sphere1, classical1):
    # [DERIVED] the tangential compression of C_k splits into the classical operators
    near = op.NearField(density="constant")
    blocks = op.proposition_blocks(op.assemble_Ck(sphere1, 1.5, near))
    ref = op.classical_blocks(classical1)
    total = np.sqrt(sum(np.linalg.norm(b) ** 2 for b in blocks.values()))
    for key, b in blocks.items():
        if key in ref:
            assert np.linalg.norm(b - ref[key]) <= 5e-2 * np.linalg.norm(ref[key]), key
        else:
            assert np.linalg.norm(b) <= 5e-2 * total, key


def test_double_layer_coupling_converges_with_levels(sphere2):
    # the one block that carries a quadrature residue: it shrinks with near-field refinement
    devs = []
    for levels in (2, 3, 4):
        near = op.NearField(levels=levels, density="constant")
        b = op.proposition_blocks(op.assemble_Ck(sphere2, 1.5, near))[("u2", "u1")]
        r = op.assemble_classical(sphere2, 1.5, near).Dl_doubleprime
        devs.append(np.linalg.norm(b - r) / np.linalg.norm(r))
    assert devs[2] < devs[1] < devs[0]


def test_tangent_frames_are_orthonormal(sphere2):
    T = op.tangent_frames(sphere2.normals)
    G = np.einsum("nia,nja->nij", T, T)
    np.testing.assert_allclose(G, np.broadcast_to(np.eye(2), G.shape), atol=1e-14)
    np.testing.assert_allclose(np.einsum("nia,na->ni", T, sphere2.normals), 0, atol=1e-14)
