import pytest

SMALL_CONFIG = """\
name: small test fiber
fiber:
  center_core_id: c
  backscatter_level: 0.01
  cores:
    - {core_id: c, position: [0, 0], length: 1000.0, birefringence: {target_pmd: 0.3e-12, seed: 1}}
    - {core_id: a, position: [41.1, 0], length: 1000.0, skew_offset: 1.5e-9, tdc: 7.1,
       birefringence: {target_pmd: 6e-12, seed: 2}}
    - {core_id: b, position: [-41.1, 0], length: 1000.0, skew_offset: -0.8e-9}
    - {core_id: d, position: [0, 41.1], length: 1000.0, skew_offset: 3e-9}
acquisition:
  prbs_order: 11
  n_traces: 200
  noise_sigma: 0.05
sweep:
  temperatures: [10, 30, 50]
pmd:
  n_points: 16
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(SMALL_CONFIG)
    return path


# Filled by test_acceptance.py; echoed after the run so the verdicts survive
# output capture.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
