import numpy as np
import pytest

from lrvis import accel, io_formats, lr_core


@pytest.fixture(scope="session")
def uniform_scalar():
    """Smooth tensor-product scalar dataset, degree (2,2,2)."""
    spec = io_formats.SyntheticSpec(
        kind="uniform", degrees=lr_core.TriDegree(2, 2, 2), segments=3,
        field_name="gaussian_bump",
        field_args={"center": (0.4, 0.5, 0.6), "width": 0.25})
    return io_formats.generate_uniform(spec)


@pytest.fixture(scope="session")
def dyadic_scalar():
    """Locally refined dyadic dataset, 3 refinement levels."""
    spec = io_formats.SyntheticSpec(
        kind="dyadic-multiscale", levels=3,
        degrees=lr_core.TriDegree(2, 2, 2),
        field_name="gaussian_bump",
        field_args={"center": (0.1, 0.1, 0.1), "width": 0.15},
        hot_corner=(0.0, 0.0, 0.0))
    return io_formats.generate_dyadic_multiscale(spec)


@pytest.fixture(scope="session")
def nondyadic_scalar():
    spec = io_formats.SyntheticSpec(
        kind="non-dyadic", degrees=lr_core.TriDegree(2, 2, 2),
        field_name="gaussian_bump",
        field_args={"center": (0.5, 0.5, 0.5), "width": 0.3})
    return io_formats.generate_non_dyadic(spec)


@pytest.fixture(scope="session")
def vector_rot():
    """Rotational vector field about the z-axis, degree (1,1,1), exact."""
    spec = io_formats.SyntheticSpec(
        kind="uniform", degrees=lr_core.TriDegree(1, 1, 1), range_dim=3,
        segments=2, domain=np.array([[-1.5, 1.5]] * 3),
        field_name="rotational", field_args={"omega": 1.0})
    return io_formats.generate_uniform(spec)


@pytest.fixture(scope="session")
def dyadic_vector():
    spec = io_formats.SyntheticSpec(
        kind="dyadic-multiscale", levels=3, range_dim=3,
        degrees=lr_core.TriDegree(1, 1, 1),
        field_name="rotational",
        field_args={"center": (0.5, 0.5, 0.5), "omega": 1.0},
        hot_corner=(0.0, 0.0, 0.0))
    return io_formats.generate_dyadic_multiscale(spec)


@pytest.fixture(scope="session")
def scalar_dataset_path(uniform_scalar, tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "scalar.json"
    io_formats.save_dataset(uniform_scalar, path)
    return path


@pytest.fixture(scope="session")
def vector_dataset_path(vector_rot, tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "vector.json"
    io_formats.save_dataset(vector_rot, path)
    return path


def forest_for(vol, grid=1):
    return accel.KdForest.build(vol, grid, grid, grid)
