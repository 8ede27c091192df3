import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from revsim.core import DriverSpec, SimulationContext  # noqa: E402


def make_ctx(storage_dir="/tmp/revsim-test-store", **kw):
    kw.setdefault("name", "test")
    kw.setdefault("delta_d", 1)
    kw.setdefault("delta_r", 2)
    kw.setdefault("capacity_bytes", 1000)
    driver = kw.pop("driver", None) or DriverSpec(
        kw.pop("out_pattern", "out_{key:04}.dat"),
        kw.pop("job_template", "true {start_key} {stop_key}"),
        output_step_bytes=kw.pop("step_bytes", 1))
    return SimulationContext(storage_dir=storage_dir, driver=driver, **kw)


@pytest.fixture
def ctx_factory(tmp_path):
    def factory(**kw):
        kw.setdefault("storage_dir", str(tmp_path / "store"))
        os.makedirs(kw["storage_dir"], exist_ok=True)
        return make_ctx(**kw)
    return factory


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
