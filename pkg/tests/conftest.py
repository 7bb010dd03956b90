import numpy as np
import pytest

from mbespike.fitting import ApproximatorCache
from mbespike.repro import desk_fidelity
from mbespike.transformer import build_opset


@pytest.fixture(scope="session")
def fit_cache():
    """One fit per (target, interval, N, T, config) for the whole session."""
    return ApproximatorCache()


@pytest.fixture(scope="session")
def opset(fit_cache):
    """Shared exp2frac/inv/invsqrt approximators at T=16, N=8."""
    return build_opset(16, 8, fit_cache)


@pytest.fixture(scope="session")
def desk(fit_cache):
    """Seed-0 desk-scale block converted at T=16, N_act=4, N_other=8: ``(fidelity, model, snn)``."""
    return desk_fidelity(0, 16, fit_cache, return_model=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            for name, value in getattr(rep, "user_properties", ()):
                if name == "criterion":
                    lines.append(value)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def run_cli_pipeline(root):
    """Full CLI pipeline on the desk-scale block into ``root`` with its own store.

    Returns ``{step: exit code}``; every output file lands in ``root``.
    """
    from mbespike.cli import main

    root.mkdir(parents=True, exist_ok=True)
    p = lambda name: str(root / name)  # noqa: E731
    steps = {
        "init-model": ["init-model", "--seed", "0", "--out", p("model.json")],
        "calib-data": ["sample-data", "--model", p("model.json"), "--n", "64", "--seed", "1", "--out", p("calib.npy")],
        "eval-data": ["sample-data", "--model", p("model.json"), "--n", "16", "--seed", "2", "--out", p("eval.npy")],
        "calibrate": ["calibrate", "--model", p("model.json"), "--data", p("calib.npy"), "--out", p("profile.json")],
        "convert": ["convert", "--model", p("model.json"), "--profile", p("profile.json"), "--store", p("store"),
                    "--t", "16", "--n-act", "4", "--n-other", "8", "--seed", "0", "--out", p("snn.json")],
        "run": ["run", "--snn", p("snn.json"), "--input", p("eval.npy"), "--report", p("run.json")],
        "energy": ["report", "--kind", "energy", "--out", p("energy.json")],
        "bounds": ["report", "--kind", "bounds", "--out", p("bounds.json")],
        "fidelity": ["report", "--kind", "fidelity", "--run", p("run.json"), "--out", p("fidelity.json")],
    }
    return {name: main(argv) for name, argv in steps.items()}


@pytest.fixture(scope="session")
def cli_pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    return root, run_cli_pipeline(root)


@pytest.fixture(scope="session")
def pipeline_runner():
    return run_cli_pipeline
