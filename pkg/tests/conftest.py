import numpy as np
import pytest

from dndebias.datagen import Dataset, SynthSpec, generate_synthetic
from dndebias.model import init_net


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_net(rng):
    return init_net(5, [7], 4, 3, rng)


@pytest.fixture(scope="session")
def toy_spec():
    return SynthSpec(
        ids_per_group={"high": 3, "low": 3},
        samples_per_id=12,
        input_dim=8,
        noise_sigma_per_group={"high": 0.5, "low": 1.5},
        seed=3,
        eval_samples_per_id=6,
    )


@pytest.fixture(scope="session")
def toy_data(toy_spec):
    return generate_synthetic(toy_spec)


def separable_two_id(n_per=20, seed=0):
    """Two identities on opposite sides of the origin."""
    r = np.random.default_rng(seed)
    x0 = r.normal(size=(n_per, 4)) * 0.3 + np.array([2.0, 0, 0, 0])
    x1 = r.normal(size=(n_per, 4)) * 0.3 - np.array([2.0, 0, 0, 0])
    return Dataset(
        np.vstack([x0, x1]),
        np.repeat([0, 1], n_per),
        np.zeros(2 * n_per, dtype=int),
        ("high",),
    )


E2E_SEEDS = range(5)
E2E_EPOCHS = 50
E2E_FPR = 1e-2


def run_e2e(seed, sigma_low=3.6, pipelines=True):
    """Baseline and (optionally) D&D / D&D++ on the default synthetic testbed."""
    from dndebias.distill import BinaryAttribute, run_pipeline, train_baseline
    from dndebias.evaluation import evaluate_network
    from dndebias.model import TrainSpec
    from dndebias.saliency import group_attention_similarity

    synth = SynthSpec(seed=seed, noise_sigma_per_group={"high": 1.2, "low": sigma_low})
    train, test = generate_synthetic(synth), generate_synthetic(synth, "eval")
    spec = TrainSpec(epochs=E2E_EPOCHS, seed=seed)
    attr = BinaryAttribute("group", "high", "low")
    out = {}
    base, _ = train_baseline(train, spec)
    out["baseline"] = base
    if pipelines:
        out["dnd"] = run_pipeline("dnd", train, attr, spec).deployed
        out["dndpp"] = run_pipeline("dndpp", train, attr, spec).deployed
    reports = {k: evaluate_network(n, test, [E2E_FPR], ("high", "low"), tag=k) for k, n in out.items()}
    sims = {k: group_attention_similarity(n, test, attr) for k, n in out.items()}
    return reports, sims


@pytest.fixture(scope="session")
def e2e_runs():
    """Per-seed (reports, similarities) for the default testbed, computed once."""
    return [run_e2e(s) for s in E2E_SEEDS]


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record and print one PASS/FAIL line per acceptance criterion."""

    def report(number, title, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}  [{detail}]"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
