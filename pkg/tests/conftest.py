import numpy as np
import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def write_cifar(path, images_u8, labels, coarse=None):
    """Write records in the CIFAR binary layout (optionally with a coarse label byte)."""
    with open(path, "wb") as fh:
        for i in range(len(labels)):
            if coarse is not None:
                fh.write(bytes([int(coarse[i])]))
            fh.write(bytes([int(labels[i])]))
            fh.write(images_u8[i].astype(np.uint8).tobytes(order="C"))


def write_stl(x_path, y_path, images_u8, labels_1based):
    with open(x_path, "wb") as fh:
        for img in images_u8:
            # planes stored column-major
            fh.write(np.ascontiguousarray(img.transpose(0, 2, 1)).astype(np.uint8).tobytes())
    with open(y_path, "wb") as fh:
        fh.write(bytes(int(v) for v in labels_1based))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
