"""SDF extraction, tet lattices, marching tets, rasterization, and the mesh stage."""

import math

import pytest
import torch

from conftest import small_run_config
from varibody.errors import ParameterError
from varibody.fields import DensityGrid, FieldConfig, GeneratorModel, draw_latent
from varibody.geometry import Camera, DTYPE
from varibody.tetmesh import (
    MeshColorField,
    MeshOptState,
    TetGrid,
    TexturedMesh,
    build_tet_grid,
    density_to_sdf,
    export_mesh,
    import_mesh,
    make_condition_images,
    marching_tets,
    mesh_finetune_step,
    prepare_mesh_state,
    rasterize,
    run_mesh_finetune,
    tet_grid_from_density,
    turntable_views,
)

FRONT = Camera(azimuth=0.0, elevation=0.0, distance=4.4, fov=0.5)


class TestDensityToSdf:
    def test_block_indicator_distances(self):
        """Hand-checkable case: a 3-cube block inside a 7-cube grid."""
        vals = torch.zeros(7, 7, 7, dtype=DTYPE)
        vals[2:5, 2:5, 2:5] = 10.0
        sdf = density_to_sdf(vals, level=5.0)
        assert float(sdf[3, 3, 3]) == -2.0   # center: two cells from the boundary
        assert float(sdf[2, 3, 3]) == -1.0   # block face voxel
        assert float(sdf[1, 3, 3]) == 1.0    # first outside voxel
        assert float(sdf[0, 3, 3]) == 2.0
        # diagonal outside voxel uses Euclidean distance
        assert float(sdf[1, 1, 3]) == pytest.approx(math.sqrt(2.0), abs=1e-12)
        assert (sdf[vals > 5.0] < 0).all() and (sdf[vals <= 5.0] > 0).all()

    def test_threshold_is_strict(self):
        vals = torch.full((4, 4, 4), 5.0, dtype=DTYPE)
        sdf = density_to_sdf(vals, level=5.0)  # 5.0 > 5.0 is false -> all outside
        assert torch.equal(sdf, torch.full((4, 4, 4), 4.0, dtype=DTYPE))

    def test_uniform_sign_constants(self):
        hi = density_to_sdf(torch.full((3, 5, 4), 9.0, dtype=DTYPE), level=1.0)
        assert torch.equal(hi, torch.full((3, 5, 4), -5.0, dtype=DTYPE))
        lo = density_to_sdf(torch.zeros(3, 5, 4, dtype=DTYPE), level=1.0)
        assert torch.equal(lo, torch.full((3, 5, 4), 5.0, dtype=DTYPE))

    def test_accepts_density_grid(self):
        grid = DensityGrid(
            values=torch.zeros(4, 4, 4, dtype=DTYPE),
            origin=torch.zeros(3, dtype=DTYPE),
            cell=torch.ones(3, dtype=DTYPE),
        )
        assert density_to_sdf(grid, 1.0).shape == (4, 4, 4)

    def test_validation(self):
        with pytest.raises(ParameterError):
            density_to_sdf(torch.zeros(4, 4, 4, dtype=DTYPE), level=0.0)
        with pytest.raises(ParameterError):
            density_to_sdf(torch.zeros(4, 4, dtype=DTYPE), level=1.0)


def _sphere_grid(n=17, radius=0.7, half=1.1) -> TetGrid:
    cell = 2 * half / (n - 1)
    axes = torch.arange(n, dtype=DTYPE) * cell - half
    gx, gy, gz = torch.meshgrid(axes, axes, axes, indexing="ij")
    sdf = torch.sqrt(gx**2 + gy**2 + gz**2) - radius
    return build_tet_grid((-half, -half, -half), cell, (n, n, n), sdf.reshape(-1))


class TestTetGrid:
    def test_lattice_counts_and_volume(self):
        cell = 0.5
        grid = build_tet_grid((0, 0, 0), cell, (3, 3, 3), torch.ones(27, dtype=DTYPE))
        assert grid.vertices.shape == (27, 3)
        assert grid.tets.shape == (8 * 6, 4)
        assert grid.check_orientation()
        v = grid.vertices[grid.tets]
        vols = torch.linalg.det(v[:, 1:] - v[:, :1]) / 6.0
        assert (vols > 0).all()
        assert float(vols.sum()) == pytest.approx(1.0, abs=1e-12)  # (2*0.5)^3

    def test_deform_bound_and_clamp(self):
        grid = build_tet_grid((0, 0, 0), 0.2, (3, 3, 3), torch.ones(27, dtype=DTYPE))
        assert grid.deform_bound == pytest.approx(0.1, abs=1e-15)
        with torch.no_grad():
            grid.deform.fill_(1.0)
        grid.clamp_deform_()
        assert torch.equal(grid.deform.detach(), torch.full((27, 3), 0.1, dtype=DTYPE))
        assert torch.allclose(
            grid.deformed_vertices().detach(), grid.vertices + 0.1, atol=0, rtol=0
        )

    def test_validation(self):
        with pytest.raises(ParameterError):
            build_tet_grid((0, 0, 0), 0.1, (1, 3, 3), torch.ones(9, dtype=DTYPE))
        with pytest.raises(ParameterError):
            TetGrid(torch.zeros(4, 3, dtype=DTYPE), torch.tensor([[0, 1, 2, 9]]),
                    torch.ones(4, dtype=DTYPE))
        with pytest.raises(ParameterError):
            TetGrid(torch.zeros(4, 3, dtype=DTYPE), torch.tensor([[0, 1, 2, 3]]),
                    torch.ones(5, dtype=DTYPE))
        with pytest.raises(ParameterError):
            build_tet_grid((0, 0, 0), -0.1, (3, 3, 3), torch.ones(27, dtype=DTYPE))


def _edge_use_counts(faces: torch.Tensor) -> torch.Tensor:
    e = torch.cat([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]], dim=0)
    e = e.sort(dim=-1).values
    _, counts = torch.unique(e, dim=0, return_counts=True)
    return counts


class TestMarchingTets:
    def test_sphere_accuracy_watertight_outward(self):
        grid = _sphere_grid()
        mesh = marching_tets(grid)
        assert mesh.V.shape[0] > 100 and mesh.F.shape[0] > 100
        radii = torch.linalg.norm(mesh.V.detach(), dim=-1)
        cell = 2 * 1.1 / 16
        assert float((radii - 0.7).abs().max()) <= cell
        # watertight: every undirected edge is shared by exactly two faces
        assert (_edge_use_counts(mesh.F) == 2).all()
        # faces wind so normals point toward positive sdf (outward here)
        v = mesh.V.detach()[mesh.F]
        normals = torch.linalg.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        centroids = v.mean(dim=1)
        assert (torch.sum(normals * centroids, dim=-1) > 0).all()

    def test_negated_sdf_flips_orientation(self):
        grid = _sphere_grid()
        flipped = TetGrid(grid.vertices, grid.tets, -grid.sdf.detach())
        mesh = marching_tets(flipped)
        v = mesh.V.detach()[mesh.F]
        normals = torch.linalg.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        centroids = v.mean(dim=1)
        assert (torch.sum(normals * centroids, dim=-1) < 0).all()

    def test_uniform_sign_yields_empty_mesh(self):
        grid = build_tet_grid((0, 0, 0), 0.1, (3, 3, 3), torch.ones(27, dtype=DTYPE))
        mesh = marching_tets(grid)
        assert mesh.V.shape == (0, 3) and mesh.F.shape == (0, 3)

    def test_vertices_lie_on_sign_change_edges(self):
        """Each output vertex interpolates a lattice edge at the sdf zero."""
        grid = _sphere_grid(n=9)
        mesh = marching_tets(grid)
        # all vertices must sit where |x| = 0.7 would cut the edge linearly;
        # verify against the analytic sdf at the produced position: linear
        # interpolation on a smooth function lands within O(cell^2)
        cell = 2 * 1.1 / 8
        err = (torch.linalg.norm(mesh.V.detach(), dim=-1) - 0.7).abs()
        assert float(err.max()) <= cell**2 * 4

    def test_positions_differentiable_in_sdf_and_deform(self):
        grid = _sphere_grid(n=9)
        mesh = marching_tets(grid)
        loss = mesh.V.sum()
        g_sdf, g_def = torch.autograd.grad(loss, [grid.sdf, grid.deform])
        assert float(g_sdf.abs().sum()) > 0
        assert float(g_def.abs().sum()) > 0

    def test_from_density_grid(self):
        axes = torch.arange(9, dtype=DTYPE) * 0.25 - 1.0
        gx, gy, gz = torch.meshgrid(axes, axes, axes, indexing="ij")
        vals = 10.0 * (torch.sqrt(gx**2 + gy**2 + gz**2) < 0.6).to(DTYPE)
        dgrid = DensityGrid(values=vals, origin=torch.full((3,), -1.0, dtype=DTYPE),
                            cell=torch.full((3,), 0.25, dtype=DTYPE))
        tgrid = tet_grid_from_density(dgrid, level=5.0)
        mesh = marching_tets(tgrid)
        assert mesh.F.shape[0] > 0
        radii = torch.linalg.norm(mesh.V.detach(), dim=-1)
        # indicator sdf has integer magnitudes; surface lands within one cell
        assert float((radii - 0.6).abs().max()) <= 0.25 + 1e-9


def _square_mesh(half: float, z: float, color) -> TexturedMesh:
    v = torch.tensor(
        [[-half, -half, z], [half, -half, z], [half, half, z], [-half, half, z]], dtype=DTYPE
    )
    f = torch.tensor([[0, 1, 2], [0, 2, 3]], dtype=torch.long)
    c = torch.tensor(color, dtype=DTYPE).expand(4, 3).clone()
    return TexturedMesh(V=v, F=f, C=c)


def _cube_mesh(half: float = 0.5) -> TexturedMesh:
    corners = torch.tensor(
        [[x, y, z] for x in (-half, half) for y in (-half, half) for z in (-half, half)],
        dtype=DTYPE,
    )
    quads = [
        (0, 1, 3, 2), (4, 6, 7, 5),  # x- / x+
        (0, 4, 5, 1), (2, 3, 7, 6),  # y- / y+
        (0, 2, 6, 4), (1, 5, 7, 3),  # z- / z+
    ]
    faces = []
    for (a, b, c, d) in quads:
        faces += [[a, b, c], [a, c, d]]
    return TexturedMesh(
        V=corners, F=torch.tensor(faces, dtype=torch.long),
        C=torch.full((8, 3), 0.5, dtype=DTYPE),
    )


class TestRasterize:
    def test_full_screen_constant_triangle_is_exact(self):
        mesh = _square_mesh(half=50.0, z=0.0, color=(0.3, 0.3, 0.3))
        view = rasterize(mesh, FRONT, (32, 32))
        assert torch.equal(torch.unique(view.rgb.detach()), torch.tensor([0.3], dtype=DTYPE))
        assert torch.equal(torch.unique(view.mask.detach()), torch.tensor([1.0], dtype=DTYPE))

    def test_constant_depth_plane(self):
        mesh = _square_mesh(half=50.0, z=0.0, color=(0.3, 0.3, 0.3))
        view = rasterize(mesh, FRONT, (16, 16))
        assert torch.allclose(
            view.depth.detach(), torch.full((16, 16), 4.4, dtype=DTYPE), atol=1e-9, rtol=0
        )

    def test_empty_mesh_renders_background(self):
        view = rasterize(TexturedMesh.empty(), FRONT, (8, 8), background=(0.2, 0.4, 0.6))
        assert torch.equal(view.mask, torch.zeros(8, 8, dtype=DTYPE))
        assert torch.allclose(view.rgb, torch.tensor([0.2, 0.4, 0.6], dtype=DTYPE).expand(8, 8, 3))

    def test_cube_silhouette_area_two_percent(self):
        mesh = _cube_mesh(0.5)
        res = 128
        view = rasterize(mesh, FRONT, (res, res))
        # head-on, the silhouette is the front face: an axis-aligned square
        z_front = FRONT.distance - 0.5
        ndc_half = 0.5 / (z_front * math.tan(FRONT.fov / 2))
        side_px = ndc_half * res  # 2*ndc_half * res/2
        analytic = side_px**2
        covered = float(view.mask.detach().sum())
        assert abs(covered - analytic) / analytic < 0.02

    def test_antialias_off_is_binary(self):
        mesh = _cube_mesh(0.5)
        view = rasterize(mesh, FRONT, (64, 64), antialias=False)
        u = torch.unique(view.mask.detach())
        assert torch.equal(u, torch.tensor([0.0, 1.0], dtype=DTYPE))

    def test_antialias_band_is_fractional(self):
        mesh = _cube_mesh(0.5)
        view = rasterize(mesh, FRONT, (64, 64), antialias=True)
        m = view.mask.detach()
        frac = m[(m > 0) & (m < 1)]
        assert frac.numel() > 0  # a soft one-pixel silhouette band exists

    def test_color_gradient_matches_finite_difference(self):
        base_c = torch.full((4, 3), 0.4, dtype=DTYPE)
        c = base_c.clone().requires_grad_(True)
        v = torch.tensor(
            [[-0.6, -0.6, 0.0], [0.6, -0.6, 0.0], [0.6, 0.6, 0.0], [-0.6, 0.6, 0.0]], dtype=DTYPE
        )
        f = torch.tensor([[0, 1, 2], [0, 2, 3]], dtype=torch.long)

        def render_loss(cc):
            mesh = TexturedMesh(V=v, F=f, C=cc)
            return rasterize(mesh, FRONT, (24, 24)).rgb.sum()

        loss = render_loss(c)
        (grad,) = torch.autograd.grad(loss, c)
        h = 1e-6
        up = base_c.clone(); up[1, 0] += h
        dn = base_c.clone(); dn[1, 0] -= h
        fd = (float(render_loss(up).detach()) - float(render_loss(dn).detach())) / (2 * h)
        assert fd == pytest.approx(float(grad[1, 0]), rel=1e-3)

    def test_silhouette_gives_vertex_position_gradients(self):
        v = torch.tensor(
            [[-0.4, -0.4, 0.0], [0.4, -0.4, 0.0], [0.0, 0.5, 0.0]], dtype=DTYPE
        ).requires_grad_(True)
        mesh = TexturedMesh(
            V=v, F=torch.tensor([[0, 1, 2]], dtype=torch.long),
            C=torch.full((3, 3), 0.5, dtype=DTYPE),
        )
        view = rasterize(mesh, FRONT, (48, 48), antialias=True)
        (grad,) = torch.autograd.grad(view.mask.sum(), v)
        assert float(grad.abs().sum()) > 0

    def test_depth_tie_break_is_deterministic(self):
        """Two coincident triangles: the lower face index wins everywhere."""
        v = torch.tensor(
            [[-1.0, -1.0, 0.0], [1.0, -1.0, 0.0], [0.0, 1.0, 0.0]], dtype=DTYPE
        )
        V = torch.cat([v, v], dim=0)
        F = torch.tensor([[0, 1, 2], [3, 4, 5]], dtype=torch.long)
        C = torch.cat([
            torch.full((3, 3), 0.25, dtype=DTYPE), torch.full((3, 3), 0.75, dtype=DTYPE),
        ])
        view = rasterize(TexturedMesh(V=V, F=F, C=C), FRONT, (24, 24), antialias=False)
        covered = view.rgb[view.mask > 0]
        assert torch.equal(torch.unique(covered.detach()), torch.tensor([0.25], dtype=DTYPE))


@pytest.fixture(scope="module")
def mesh_setup(fast_prior):
    cfg = small_run_config()
    model = GeneratorModel(
        config=FieldConfig(latent_dim=cfg.latent_dim, hidden_dim=cfg.hidden_dim), seed=2
    )
    z = draw_latent(torch.Generator().manual_seed(4), cfg.latent_dim)
    emb = fast_prior.vocab.encode(cfg.prompt)
    return cfg, model, z, emb


class TestMeshStage:
    def test_prepare_state_wires_config(self, mesh_setup, fast_prior):
        cfg, model, z, emb = mesh_setup
        state = prepare_mesh_state(model, z, cfg, fast_prior, emb, seed=0)
        assert state.mse_weight == cfg.mesh.mse_weight == 1000
        assert state.sds_weight == cfg.mesh.sds_weight == 1
        assert state.render_resolution == cfg.mesh.render_resolution
        assert state.sds_scale == cfg.cfg_scale
        assert len(state.conditions) == 2
        assert state.grid.check_orientation()

    def test_condition_images_front_back(self, mesh_setup, fast_prior):
        cfg, model, z, emb = mesh_setup
        from varibody.body import BodyParams
        from varibody.training import default_sample_camera

        params = BodyParams(
            beta=torch.zeros(4, dtype=DTYPE),
            theta=torch.zeros(9, dtype=DTYPE),
            cam=default_sample_camera(),
        )
        a = make_condition_images(model, z, params, fast_prior, emb, cfg,
                                  torch.Generator().manual_seed(3))
        b = make_condition_images(model, z, params, fast_prior, emb, cfg,
                                  torch.Generator().manual_seed(3))
        assert len(a) == 2
        side = fast_prior.height
        for cond in a:
            assert cond.image.shape == (side, side, 3)
            assert (cond.image >= 0).all() and (cond.image <= 1).all()
        assert a[0].cam.azimuth == params.cam.azimuth
        assert a[1].cam.azimuth == pytest.approx(params.cam.azimuth + math.pi)
        assert torch.equal(a[0].image, b[0].image) and torch.equal(a[1].image, b[1].image)

    def test_strict_sds_mse_alternation(self, mesh_setup, fast_prior):
        cfg, model, z, emb = mesh_setup
        state = prepare_mesh_state(model, z, cfg, fast_prior, emb, seed=0)
        for _ in range(10):
            mesh_finetune_step(state, fast_prior, emb)
        kinds = [row["kind"] for row in state.history]
        assert kinds == ["sds", "mse"] * 5
        assert all(row["faces"] > 0 for row in state.history)
        # deform stays inside its safety bound after every step
        assert float(state.grid.deform.detach().abs().max()) <= state.grid.deform_bound + 1e-15

    def test_mse_loss_decreases(self, mesh_setup, fast_prior):
        cfg, model, z, emb = mesh_setup
        state = prepare_mesh_state(model, z, cfg, fast_prior, emb, seed=1)
        state.sds_weight = 0.0  # isolate the reconstruction objective
        for _ in range(40):
            mesh_finetune_step(state, fast_prior, emb)
        mse = [row["loss"] for row in state.history if row["kind"] == "mse"]
        assert mse[-1] < 0.8 * mse[0]

    def test_empty_grid_records_null_step(self, fast_prior):
        grid = build_tet_grid((0, 0, 0), 0.1, (3, 3, 3), torch.ones(27, dtype=DTYPE))
        state = MeshOptState(
            grid=grid, color_field=MeshColorField(seed=0), conditions=[],
            rng=torch.Generator().manual_seed(0),
        )
        sdf_before = grid.sdf.detach().clone()
        emb = fast_prior.vocab.encode("red upper")
        mesh_finetune_step(state, fast_prior, emb)  # even iteration: sds branch
        assert state.history == [{"iteration": 0, "kind": "sds", "loss": pytest.approx(float("nan"), nan_ok=True), "faces": 0}]
        assert torch.equal(grid.sdf.detach(), sdf_before)
        assert state.iteration == 1

    def test_mse_without_conditions_raises(self, fast_prior):
        grid = _sphere_grid(n=5)
        state = MeshOptState(
            grid=grid, color_field=MeshColorField(seed=0), conditions=[],
            rng=torch.Generator().manual_seed(0),
        )
        state.iteration = 1  # odd: MSE branch
        with pytest.raises(ParameterError, match="condition"):
            mesh_finetune_step(state, fast_prior, fast_prior.vocab.encode("red upper"))

    def test_run_mesh_finetune_returns_colored_mesh(self, mesh_setup, fast_prior):
        cfg, model, z, emb = mesh_setup
        state = prepare_mesh_state(model, z, cfg, fast_prior, emb, seed=0)
        mesh = run_mesh_finetune(state, fast_prior, emb, iterations=2)
        assert mesh.F.shape[0] > 0
        assert (mesh.C >= 0).all() and (mesh.C <= 1).all()
        # marching guarantees faces above its own sliver cutoff
        mesh.validate_strict(area_tol=1e-12)

    def test_empty_density_raises_named_threshold(self, mesh_setup, fast_prior):
        cfg, model, z, emb = mesh_setup
        import dataclasses

        bad = dataclasses.replace(cfg, mesh=dataclasses.replace(cfg.mesh, density_level=1e9))
        with pytest.raises(ParameterError, match="empty mesh.*1000000000"):
            prepare_mesh_state(model, z, bad, fast_prior, emb, seed=0)

    def test_turntable_strip(self):
        mesh = _cube_mesh(0.5)
        strip = turntable_views(mesh, n_views=4, resolution=32)
        assert strip.shape == (32, 4 * 32, 3)
        assert (strip >= 0).all() and (strip <= 1).all()
        with pytest.raises(ParameterError):
            turntable_views(mesh, n_views=0)


class TestMeshIO:
    def _mesh(self):
        grid = _sphere_grid(n=7)
        with torch.no_grad():
            m = marching_tets(grid)
        rng = torch.Generator().manual_seed(5)
        return TexturedMesh(V=m.V, F=m.F, C=torch.rand(m.V.shape[0], 3, generator=rng, dtype=DTYPE))

    def test_obj_round_trip(self, tmp_path):
        mesh = self._mesh()
        path = tmp_path / "m.obj"
        export_mesh(mesh, path)
        back = import_mesh(path)
        assert torch.allclose(back.V, mesh.V, atol=1e-9, rtol=0)
        assert torch.equal(back.F, mesh.F)
        assert torch.allclose(back.C, mesh.C, atol=1e-9, rtol=0)

    def test_ply_round_trip_with_quantized_colors(self, tmp_path):
        mesh = self._mesh()
        path = tmp_path / "m.ply"
        export_mesh(mesh, path)
        back = import_mesh(path)
        assert torch.allclose(back.V, mesh.V, atol=1e-9, rtol=0)
        assert torch.equal(back.F, mesh.F)
        assert torch.allclose(back.C, mesh.C, atol=0.5 / 255 + 1e-12, rtol=0)

    def test_export_bytes_deterministic(self, tmp_path):
        mesh = self._mesh()
        export_mesh(mesh, tmp_path / "a.obj")
        export_mesh(mesh, tmp_path / "b.obj")
        assert (tmp_path / "a.obj").read_bytes() == (tmp_path / "b.obj").read_bytes()

    def test_empty_mesh_round_trip(self, tmp_path):
        export_mesh(TexturedMesh.empty(), tmp_path / "e.ply")
        back = import_mesh(tmp_path / "e.ply")
        assert back.V.shape == (0, 3) and back.F.shape == (0, 3)

    def test_unknown_format_rejected(self, tmp_path):
        with pytest.raises(ParameterError):
            export_mesh(TexturedMesh.empty(), tmp_path / "m.stl")

    def test_unwritable_path_raises_oserror(self, tmp_path):
        blocker = tmp_path / "not_a_dir"
        blocker.write_text("occupied")
        with pytest.raises(OSError):
            export_mesh(TexturedMesh.empty(), blocker / "m.obj")

    def test_mesh_validation(self):
        with pytest.raises(ParameterError):
            TexturedMesh(V=torch.zeros(2, 3, dtype=DTYPE),
                         F=torch.tensor([[0, 1, 5]], dtype=torch.long),
                         C=torch.zeros(2, 3, dtype=DTYPE))
        with pytest.raises(ParameterError):
            TexturedMesh(V=torch.zeros(2, 3, dtype=DTYPE),
                         F=torch.zeros(0, 3, dtype=torch.long),
                         C=torch.full((2, 3), 1.5, dtype=DTYPE))
        degenerate = TexturedMesh(
            V=torch.zeros(3, 3, dtype=DTYPE),
            F=torch.tensor([[0, 1, 2]], dtype=torch.long),
            C=torch.zeros(3, 3, dtype=DTYPE),
        )
        with pytest.raises(ParameterError):
            degenerate.validate_strict()
