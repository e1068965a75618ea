import numpy as np
import pytest

from fairseg.core import AttributeRecord, LabelMask


def central_difference(f, x, step=1e-4):
    """Brute-force gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        orig = x[i]
        x[i] = orig + step
        hi = f(x)
        x[i] = orig - step
        lo = f(x)
        x[i] = orig
        grad[i] = (hi - lo) / (2 * step)
    return grad


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


def record(sid, race="white", gender="female", ethnicity="hispanic", language="english", split="test"):
    return AttributeRecord(sid, race, gender, ethnicity, language, split)


def mask_with(shape, n_label, label, offset=0):
    """Flat layout: pixels ``offset .. offset + n_label`` get ``label``."""
    flat = np.zeros(shape[0] * shape[1], dtype=np.uint8)
    flat[offset : offset + n_label] = label
    return LabelMask(flat.reshape(shape))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance verdicts --------------------------------------------------------------
# Tests marked ``criterion(n, title)`` get one PASS/FAIL line each in the terminal summary.

_verdicts: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        _verdicts[number] = ("PASS" if report.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_verdicts):
        status, title, detail = _verdicts[number]
        line = f"{status} criterion {number}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
