import json

import pytest

TINY_TRAINER = {
    "batch_size": 64, "minibatch_size": 32, "epochs": 2, "workers": 1,
    "episodes_m1": 4, "episodes_other": 2, "guided_episodes": 1, "undertrained_episodes": 2,
    "horizon": 40, "hidden": [8],
}


@pytest.fixture
def tiny_config(tmp_path):
    """A config file whose full training pipeline finishes in a few seconds."""
    cfg = {
        "trainer": TINY_TRAINER,
        "training_pool": {"size": 2},
        "leader": {"source": "synthetic", "duration": 8.0, "base_speed": 40.0, "n_waves": 1,
                   "amplitude": 8.0, "standstill": False, "seed": 2},
        "penetration_rates": [0, 40, 100],
    }
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(cfg))
    return path


# -- acceptance bookkeeping ------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = (bool(ok), detail)
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"acceptance criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")


@pytest.fixture(scope="session")
def trained(tmp_path_factory):
    """The default profile trained once with one worker; M_1 is timed on its own."""
    import time
    from dataclasses import replace

    from mixplatoon import experiments as ex
    from mixplatoon.config import load_config

    cfg = load_config()
    cfg = replace(cfg, trainer=replace(cfg.trainer, workers=1))
    out = tmp_path_factory.mktemp("trained")
    start = time.perf_counter()
    ex.run_training(cfg, out, modules=(1,))
    m1_seconds = time.perf_counter() - start
    ex.run_training(cfg, out)
    policies = ex.load_policies(cfg, range(1, 6), out)
    return {"cfg": cfg, "out": out, "policies": policies, "m1_seconds": m1_seconds}
